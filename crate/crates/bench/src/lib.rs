//! Fixtures shared by the benchmarks.

use spmoran::{OccupancyDistribution, Parameters};

/// Quasispecies-regime parameters at sequence length `ell`, `m = 3 ell`.
pub fn regime_params(ell: usize, k: usize) -> Parameters {
    Parameters::from_a(ell, 3 * ell, 0.3, 8.0, 2, k).expect("valid benchmark parameters")
}

/// A mixed occupancy: a third of the population at the master, the rest spread
/// over the next classes.
pub fn mixed_occupancy(p: &Parameters) -> OccupancyDistribution {
    let mut counts = vec![0u32; p.ell + 1];
    let third = p.m / 3;
    counts[0] = third as u32;
    for (i, c) in counts.iter_mut().skip(1).take(4).enumerate() {
        *c = ((p.m - third) / 4) as u32 + u32::from(i < (p.m - third) % 4);
    }
    OccupancyDistribution::new(counts).expect("mass adds up to m")
}
