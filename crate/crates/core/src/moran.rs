//! Full sequence-space Moran chain and the lumped occupancy chain.
//!
//! The master sequence is the all-zero word. One step of the full chain
//! picks a dying index `j` and a candidate parent `i`, accepts the parent
//! with probability `A(x(i)) / sigma`, and on acceptance writes a per-locus
//! mutant of `x(i)` into slot `j`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::DENSE_LIMIT;
use crate::model::{OccupancyDistribution, Parameters};
use crate::mutation::{sample_class_mutation, sequence_mutation_prob, ClassKernel, LumpedMutationMatrix};
use crate::rng::{replica_rng, SimRng};

/// `m` words of length `ell` over `{0, ..., kappa-1}`, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Population {
    ell: usize,
    kappa: usize,
    genes: Vec<u8>,
}

impl Population {
    pub fn new(rows: Vec<Vec<u8>>, kappa: usize) -> Result<Self> {
        if rows.is_empty() {
            return invalid("population needs at least one individual");
        }
        if !(2..=256).contains(&kappa) {
            return invalid(format!("kappa must be in 2..=256, got {kappa}"));
        }
        let ell = rows[0].len();
        if ell == 0 {
            return invalid("chromosomes must be non-empty");
        }
        let mut genes = Vec::with_capacity(ell * rows.len());
        for (idx, r) in rows.iter().enumerate() {
            if r.len() != ell {
                return invalid(format!("individual {idx} has length {}, expected {ell}", r.len()));
            }
            if let Some(&s) = r.iter().find(|&&s| s as usize >= kappa) {
                return invalid(format!("symbol {s} outside alphabet of size {kappa}"));
            }
            genes.extend_from_slice(r);
        }
        Ok(Population { ell, kappa, genes })
    }

    /// Every individual equal to the master sequence.
    pub fn all_master(ell: usize, m: usize, kappa: usize) -> Self {
        Population { ell, kappa, genes: vec![0; ell * m] }
    }

    /// A population realising the occupancy `o`: individuals in class `b`
    /// carry symbol 1 on their first `b` loci.
    pub fn from_occupancy(o: &OccupancyDistribution, kappa: usize) -> Self {
        let ell = o.ell();
        let mut genes = Vec::with_capacity(ell * o.m());
        for (b, &n) in o.counts().iter().enumerate() {
            for _ in 0..n {
                genes.extend((0..ell).map(|l| u8::from(l < b)));
            }
        }
        Population { ell, kappa, genes }
    }

    pub fn m(&self) -> usize {
        self.genes.len() / self.ell
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn individual(&self, i: usize) -> &[u8] {
        &self.genes[i * self.ell..(i + 1) * self.ell]
    }

    /// Hamming distance of individual `i` to the master sequence.
    pub fn distance_to_master(&self, i: usize) -> usize {
        self.individual(i).iter().filter(|&&s| s != 0).count()
    }

    pub fn occupancy(&self) -> OccupancyDistribution {
        let mut counts = vec![0u32; self.ell + 1];
        for i in 0..self.m() {
            counts[self.distance_to_master(i)] += 1;
        }
        OccupancyDistribution::from_counts_unchecked(counts)
    }

    /// All `kappa^(ell m)` populations, individual 0 most significant.
    pub fn enumerate(ell: usize, m: usize, kappa: usize) -> Result<Vec<Self>> {
        let n = (kappa as u128).checked_pow((ell * m) as u32).unwrap_or(u128::MAX);
        if n > DENSE_LIMIT as u128 {
            return Err(Error::Capacity { states: n, limit: DENSE_LIMIT as u128 });
        }
        Ok((0..n as usize)
            .map(|mut code| {
                let mut genes = vec![0u8; ell * m];
                for g in genes.iter_mut().rev() {
                    *g = (code % kappa) as u8;
                    code /= kappa;
                }
                Population { ell, kappa, genes }
            })
            .collect())
    }

    fn code(&self) -> usize {
        self.genes.iter().fold(0, |acc, &g| acc * self.kappa + g as usize)
    }
}

/// `N^K`: number of individuals within distance `K` of the master sequence.
pub trait NkStatistic {
    fn n_k_statistic(&self, k: usize) -> usize;
}

impl NkStatistic for Population {
    fn n_k_statistic(&self, k: usize) -> usize {
        (0..self.m()).filter(|&i| self.distance_to_master(i) <= k).count()
    }
}

impl NkStatistic for OccupancyDistribution {
    fn n_k_statistic(&self, k: usize) -> usize {
        self.n_k(k)
    }
}

pub fn n_k_statistic<S: NkStatistic + ?Sized>(x: &S, k: usize) -> usize {
    x.n_k_statistic(k)
}

/// One step of the full chain, in place.
pub fn moran_step_full(x: &mut Population, params: &Parameters, rng: &mut SimRng) {
    let m = x.m();
    let ell = x.ell;
    let j = rng.random_range(0..m);
    let i = rng.random_range(0..m);
    let fit = if x.distance_to_master(i) == 0 { params.sigma } else { 1.0 };
    if rng.random::<f64>() >= fit / params.sigma {
        return;
    }
    if i != j {
        let (src, dst) = (i * ell, j * ell);
        x.genes.copy_within(src..src + ell, dst);
    }
    let kappa = x.kappa as u8;
    for g in &mut x.genes[j * ell..(j + 1) * ell] {
        if rng.random::<f64>() < params.q {
            let shift = rng.random_range(1..kappa);
            *g = (*g + shift) % kappa;
        }
    }
}

/// Parent class `S_O(o, s)`: the class whose cumulative fitness-weighted
/// occupancy straddles `s * sum_h o(h) A_H(h)`, for `s` in `[0, 1)`.
pub fn select_parent(o: &OccupancyDistribution, s: f64, sigma: f64) -> usize {
    let counts = o.counts();
    let c0 = counts[0] as f64 * sigma;
    let total = c0 + (o.m() - counts[0] as usize) as f64;
    let target = s * total;
    if target < c0 {
        return 0;
    }
    let mut acc = c0;
    for (l, &n) in counts.iter().enumerate().skip(1) {
        acc += n as f64;
        if n > 0 && target < acc {
            return l;
        }
    }
    counts.iter().rposition(|&n| n > 0).unwrap_or(0)
}

/// Randomness record with a single mutation uniform: `(s, i, j, u)`.
/// `i` is carried for the record layout and never read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDraw {
    pub s: f64,
    pub i: usize,
    pub j: usize,
    pub u: f64,
}

impl StepDraw {
    pub fn sample(rng: &mut SimRng, m: usize) -> Self {
        StepDraw {
            s: rng.random(),
            i: rng.random_range(1..=m),
            j: rng.random_range(1..=m),
            u: rng.random(),
        }
    }
}

/// `Phi'_O`: dying class from `j`, parent from `s`, child by inverse cdf of `u`.
pub fn phi_prime<M: ClassKernel + ?Sized>(
    o: &OccupancyDistribution,
    r: &StepDraw,
    kernel: &M,
    sigma: f64,
) -> OccupancyDistribution {
    let k = o.class_of_individual(r.j);
    let l = select_parent(o, r.s, sigma);
    let c = sample_class_mutation(l, r.u, kernel);
    let mut out = o.clone();
    out.transfer_in_place(k, c);
    out
}

/// One occupancy step drawn from `rng`, in place.
pub fn occupancy_step(o: &mut OccupancyDistribution, mh: &LumpedMutationMatrix, sigma: f64, rng: &mut SimRng) {
    let r = StepDraw::sample(rng, o.m());
    let k = o.class_of_individual(r.j);
    let l = select_parent(o, r.s, sigma);
    let c = sample_class_mutation(l, r.u, mh);
    o.transfer_in_place(k, c);
}

/// Exact `p_O(o, o')` for the lumped chain.
pub fn occupancy_transition_prob(o: &OccupancyDistribution, k: usize, l: usize, mh: &LumpedMutationMatrix, sigma: f64) -> f64 {
    let counts = o.counts();
    let m = o.m() as f64;
    let weight = |h: usize| if h == 0 { sigma } else { 1.0 };
    let total: f64 = counts.iter().enumerate().map(|(h, &n)| n as f64 * weight(h)).sum();
    let flow: f64 = counts
        .iter()
        .enumerate()
        .map(|(h, &n)| n as f64 * weight(h) * mh.entry(h, l))
        .sum();
    counts[k] as f64 * flow / (m * total)
}

/// Full occupancy transition matrix on the enumerated states.
pub fn occupancy_transition_matrix(params: &Parameters) -> Result<(Vec<OccupancyDistribution>, DMatrix<f64>)> {
    let states_n = crate::model::binomial_u128((params.m + params.ell) as u128, params.ell as u128);
    if states_n > DENSE_LIMIT as u128 {
        return Err(Error::Capacity { states: states_n, limit: DENSE_LIMIT as u128 });
    }
    let mh = LumpedMutationMatrix::new(params);
    let states = OccupancyDistribution::enumerate(params.ell, params.m);
    let index: std::collections::HashMap<_, _> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let n = states.len();
    let mut p = DMatrix::zeros(n, n);
    for (a, o) in states.iter().enumerate() {
        let mut off = 0.0;
        for k in 0..=params.ell {
            if o.get(k) == 0 {
                continue;
            }
            for l in 0..=params.ell {
                if l == k {
                    continue;
                }
                let pr = occupancy_transition_prob(o, k, l, &mh, params.sigma);
                let b = index[&o.transfer(k, l)?];
                p[(a, b)] += pr;
                off += pr;
            }
        }
        p[(a, a)] += 1.0 - off;
    }
    Ok((states, p))
}

/// Full-chain transition matrix on all `kappa^(ell m)` populations.
pub fn full_transition_matrix(params: &Parameters) -> Result<(Vec<Population>, DMatrix<f64>)> {
    let states = Population::enumerate(params.ell, params.m, params.kappa)?;
    let words = Population::enumerate(params.ell, 1, params.kappa)?;
    let n = states.len();
    let m = params.m;
    let mut p = DMatrix::zeros(n, n);
    for (a, x) in states.iter().enumerate() {
        // offspring law of u, averaged over the parent index
        let mut offspring = vec![0.0; words.len()];
        for i in 0..m {
            let parent = x.individual(i);
            let fit = if x.distance_to_master(i) == 0 { params.sigma } else { 1.0 };
            for (w, u) in words.iter().enumerate() {
                offspring[w] += fit * sequence_mutation_prob(parent, u.individual(0), params)?;
            }
        }
        let scale = 1.0 / (m as f64 * m as f64 * params.sigma);
        let mut off = 0.0;
        for j in 0..m {
            for (w, u) in words.iter().enumerate() {
                let mut y = x.clone();
                y.genes[j * params.ell..(j + 1) * params.ell].copy_from_slice(u.individual(0));
                if y == *x {
                    continue;
                }
                let pr = offspring[w] * scale;
                p[(a, y.code())] += pr;
                off += pr;
            }
        }
        p[(a, a)] += 1.0 - off;
    }
    Ok((states, p))
}

/// Probability that a step of the full chain with `lambda = sigma` moves
/// an individual at all, as a function of the occupancy: `sum_h o(h) A_H(h) / (m sigma)`.
/// The full chain lumps to `h p_O + (1 - h) I`, a lazy copy of the occupancy chain.
pub fn jump_rate(o: &OccupancyDistribution, sigma: f64) -> f64 {
    let c0 = o.get(0) as f64;
    (c0 * sigma + o.m() as f64 - c0) / (o.m() as f64 * sigma)
}

/// Stationary law of the lumped full chain from the stationary law `nu` of
/// `p_O`: proportional to `nu / jump_rate`.
pub fn full_chain_occupancy_law(states: &[OccupancyDistribution], nu: &[f64], sigma: f64) -> Vec<f64> {
    let w: Vec<f64> = states.iter().zip(nu).map(|(o, p)| p / jump_rate(o, sigma)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Pushes a law on populations to occupancy states, in the order of `states`.
pub fn push_to_occupancy(pops: &[Population], mu: &[f64], states: &[OccupancyDistribution]) -> Vec<f64> {
    let index: std::collections::HashMap<_, _> = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let mut out = vec![0.0; states.len()];
    for (x, w) in pops.iter().zip(mu) {
        out[index[&x.occupancy()]] += w;
    }
    out
}

/// Run control. `steps` counts every event including burn-in; a sample is
/// recorded after event `t` when `t > burn_in` and `(t - burn_in) % thin == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub seed: u64,
    pub steps: u64,
    pub burn_in: u64,
    pub replicas: usize,
    pub thin: u64,
}

impl SimulationConfig {
    pub fn new(seed: u64, steps: u64, burn_in: u64, replicas: usize, thin: u64) -> Result<Self> {
        let c = SimulationConfig { seed, steps, burn_in, replicas, thin };
        c.validate()?;
        Ok(c)
    }

    /// Defaults `burn_in = 10 m ell`, `thin = m`.
    pub fn with_defaults(params: &Parameters, seed: u64, steps: u64, replicas: usize) -> Result<Self> {
        let burn_in = 10 * (params.m * params.ell) as u64;
        Self::new(seed, steps, burn_in, replicas, params.m as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps <= self.burn_in {
            return invalid(format!("steps ({}) must exceed burn_in ({})", self.steps, self.burn_in));
        }
        if self.replicas == 0 {
            return invalid("replicas must be >= 1");
        }
        if self.thin == 0 {
            return invalid("thin must be >= 1");
        }
        Ok(())
    }

    pub fn samples_per_replica(&self) -> u64 {
        (self.steps - self.burn_in) / self.thin
    }
}

/// Anything advanced one event at a time by a random stream.
pub trait Steppable: Clone + Send + Sync {
    fn step(&mut self, rng: &mut SimRng);
    /// Classes `0..=K` as frequencies.
    fn class_frequencies(&self, k: usize) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct OccupancyChain {
    pub state: OccupancyDistribution,
    pub mh: Arc<LumpedMutationMatrix>,
    pub sigma: f64,
}

impl OccupancyChain {
    pub fn new(params: &Parameters, start: OccupancyDistribution) -> Result<Self> {
        if start.ell() != params.ell || start.m() != params.m {
            return invalid("starting occupancy does not match (ell, m)");
        }
        Ok(OccupancyChain { state: start, mh: Arc::new(LumpedMutationMatrix::new(params)), sigma: params.sigma })
    }
}

impl Steppable for OccupancyChain {
    fn step(&mut self, rng: &mut SimRng) {
        occupancy_step(&mut self.state, &self.mh, self.sigma, rng);
    }
    fn class_frequencies(&self, k: usize) -> Vec<f64> {
        occupancy_frequencies(&self.state, k)
    }
}

pub(crate) fn occupancy_frequencies(o: &OccupancyDistribution, k: usize) -> Vec<f64> {
    let m = o.m() as f64;
    (0..=k).map(|c| o.get(c) as f64 / m).collect()
}

#[derive(Debug, Clone)]
pub struct FullChain {
    pub state: Population,
    pub params: Parameters,
}

impl Steppable for FullChain {
    fn step(&mut self, rng: &mut SimRng) {
        moran_step_full(&mut self.state, &self.params, rng);
    }
    fn class_frequencies(&self, k: usize) -> Vec<f64> {
        let m = self.state.m() as f64;
        let mut f = vec![0.0; k + 1];
        for i in 0..self.state.m() {
            let d = self.state.distance_to_master(i);
            if d <= k {
                f[d] += 1.0 / m;
            }
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: u64,
    pub classes: Vec<f64>,
    pub nk_over_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub replica: usize,
    pub samples: Vec<Sample>,
}

/// Starting point for [`run_trajectory`].
#[derive(Debug, Clone)]
pub enum InitialState {
    Population(Population),
    Occupancy(OccupancyDistribution),
}

/// Runs one replica of any chain and records thinned samples.
pub fn simulate_chain<C: Steppable>(mut chain: C, config: &SimulationConfig, k: usize, replica: usize) -> Trajectory {
    let mut rng = replica_rng(config.seed, replica as u64);
    let mut samples = Vec::with_capacity(config.samples_per_replica() as usize);
    for t in 1..=config.steps {
        chain.step(&mut rng);
        if t > config.burn_in && (t - config.burn_in) % config.thin == 0 {
            let classes = chain.class_frequencies(k);
            let nk_over_m = classes.iter().sum();
            samples.push(Sample { t, classes, nk_over_m });
        }
    }
    Trajectory { replica, samples }
}

/// Replicas in parallel, returned in replica order.
pub fn run_chain_replicas<C: Steppable>(chain: &C, config: &SimulationConfig, k: usize) -> Result<Vec<Trajectory>> {
    config.validate()?;
    Ok((0..config.replicas)
        .into_par_iter()
        .map(|r| simulate_chain(chain.clone(), config, k, r))
        .collect())
}

/// Time series of `(N^K / m, classes 0..=K)` for the full or lumped chain.
pub fn run_trajectory(config: &SimulationConfig, params: &Parameters, initial: InitialState) -> Result<Vec<Trajectory>> {
    match initial {
        InitialState::Occupancy(o) => {
            let chain = OccupancyChain::new(params, o)?;
            run_chain_replicas(&chain, config, params.k)
        }
        InitialState::Population(x) => {
            if x.ell() != params.ell || x.m() != params.m || x.kappa() != params.kappa {
                return invalid("starting population does not match (ell, m, kappa)");
            }
            run_chain_replicas(&FullChain { state: x, params: *params }, config, params.k)
        }
    }
}
