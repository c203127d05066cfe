//! Lower and upper bounding processes, their chains on `E_K`, the
//! conditioned rates of one class and the birth and death couplings.
//!
//! Notation: `theta` is `Lower` (the absorbing class is `ell`) or `Upper`
//! (the absorbing class is `K+1`). The lower entry point of the chain on
//! `E_K` is `(1, 0, ..., 0)`, the upper one is the head of `(1, m-1, 0, ...)`,
//! matching `o_enter` of each process.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::birth_death::BirthDeathSpec;
use crate::error::{invalid, Error, Result};
use crate::linalg::DENSE_LIMIT;
use crate::model::{binomial_u128, leq_unchecked, project_lower, project_upper, ClassVector, OccupancyDistribution, Parameters};
use crate::moran::{select_parent, occupancy_frequencies, phi_prime, Steppable, StepDraw};
use crate::mutation::{
    modified_mutation_matrix, per_locus_class_mutation, sample_class_mutation, ClassKernel, LumpedMutationMatrix,
    ModifiedMutationMatrix,
};
use crate::rng::SimRng;

/// Largest `E_K` enumerated by [`ek_transition_matrix`].
pub const EK_LIMIT: u128 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundingChainKind {
    Lower,
    Upper,
}

impl BoundingChainKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundingChainKind::Lower => "lower",
            BoundingChainKind::Upper => "upper",
        }
    }
}

/// Randomness record with per-locus mutation uniforms `(s, i, j, u_1..u_ell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocusDraw {
    pub s: f64,
    pub i: usize,
    pub j: usize,
    pub us: Vec<f64>,
}

impl LocusDraw {
    pub fn sample(rng: &mut SimRng, m: usize, ell: usize) -> Self {
        LocusDraw {
            s: rng.random(),
            i: rng.random_range(1..=m),
            j: rng.random_range(1..=m),
            us: (0..ell).map(|_| rng.random()).collect(),
        }
    }
}

/// Coupling maps for one parameter set.
#[derive(Debug, Clone)]
pub struct BoundingMaps {
    params: Parameters,
    mh: Arc<LumpedMutationMatrix>,
    mk: Arc<ModifiedMutationMatrix>,
}

impl BoundingMaps {
    pub fn new(params: &Parameters) -> Result<Self> {
        let mh = LumpedMutationMatrix::new(params);
        let mk = modified_mutation_matrix(&mh, params.k)?;
        Ok(BoundingMaps { params: *params, mh: Arc::new(mh), mk: Arc::new(mk) })
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn mh(&self) -> &LumpedMutationMatrix {
        &self.mh
    }

    pub fn mk(&self) -> &ModifiedMutationMatrix {
        &self.mk
    }

    fn transfer(o: &OccupancyDistribution, k: usize, c: usize) -> OccupancyDistribution {
        let mut out = o.clone();
        out.transfer_in_place(k, c);
        out
    }

    /// `Phi_O` with per-locus mutation.
    pub fn phi_o(&self, o: &OccupancyDistribution, r: &LocusDraw) -> OccupancyDistribution {
        let k = o.class_of_individual(r.j);
        let l = select_parent(o, r.s, self.params.sigma);
        Self::transfer(o, k, per_locus_class_mutation(l, &r.us, &self.params))
    }

    /// `Phi_O` with a downward mutation redirected to class `ell`.
    fn phi_o_under(&self, o: &OccupancyDistribution, r: &LocusDraw) -> OccupancyDistribution {
        let k = o.class_of_individual(r.j);
        let l = select_parent(o, r.s, self.params.sigma);
        let c = per_locus_class_mutation(l, &r.us, &self.params);
        Self::transfer(o, k, if c < l { self.params.ell } else { c })
    }

    /// `Phi'_O`: single uniform, inverse cdf of `M_H`.
    pub fn phi_prime(&self, o: &OccupancyDistribution, r: &StepDraw) -> OccupancyDistribution {
        phi_prime(o, r, self.mh.as_ref(), self.params.sigma)
    }

    fn phi_prime_under(&self, o: &OccupancyDistribution, r: &StepDraw) -> OccupancyDistribution {
        let k = o.class_of_individual(r.j);
        let l = select_parent(o, r.s, self.params.sigma);
        let c = sample_class_mutation(l, r.u, self.mh.as_ref());
        Self::transfer(o, k, if c < l { self.params.ell } else { c })
    }

    /// `Phi-bar_O`: single uniform, inverse cdf of `M_H^{K+1}`.
    pub fn phi_bar(&self, o: &OccupancyDistribution, r: &StepDraw) -> OccupancyDistribution {
        phi_prime(o, r, self.mk.as_ref(), self.params.sigma)
    }

    fn lower_from<F, G>(&self, o: &OccupancyDistribution, free: F, under: G) -> OccupancyDistribution
    where
        F: FnOnce(&OccupancyDistribution) -> OccupancyDistribution,
        G: FnOnce(&OccupancyDistribution) -> OccupancyDistribution,
    {
        let (ell, m, k) = (self.params.ell, self.params.m, self.params.k);
        if !o.has_master() {
            let next = free(o);
            return if next.has_master() { OccupancyDistribution::lower_enter(ell, m) } else { next };
        }
        let next = under(&project_lower(o, k));
        if next.has_master() {
            project_lower(&next, k)
        } else {
            OccupancyDistribution::lower_exit(ell, m)
        }
    }

    /// `Phi^ell_O` on a per-locus record.
    pub fn lower_step(&self, o: &OccupancyDistribution, r: &LocusDraw) -> OccupancyDistribution {
        self.lower_from(o, |x| self.phi_o(x, r), |x| self.phi_o_under(x, r))
    }

    /// `Phi^ell_O` driven by the single-uniform record shared with `Phi'_O`
    /// and the upper map.
    pub fn lower_step_single(&self, o: &OccupancyDistribution, r: &StepDraw) -> OccupancyDistribution {
        self.lower_from(o, |x| self.phi_prime(x, r), |x| self.phi_prime_under(x, r))
    }

    /// `Phi^{K+1}_O`.
    pub fn upper_step(&self, o: &OccupancyDistribution, r: &StepDraw) -> OccupancyDistribution {
        let (ell, m, k) = (self.params.ell, self.params.m, self.params.k);
        if !o.has_master() {
            let next = self.phi_prime(o, r);
            return if next.has_master() { OccupancyDistribution::upper_enter(ell, m) } else { next };
        }
        let next = self.phi_bar(&project_upper(o, k), r);
        if next.has_master() {
            project_upper(&next, k)
        } else {
            OccupancyDistribution::upper_exit(ell, m)
        }
    }
}

/// One step of `p_O` from `o` with the child class of parent `h` drawn from
/// `kernel` and passed through `redirect(h, c)`; targets are merged.
fn kernel_row<M: ClassKernel + ?Sized>(
    o: &OccupancyDistribution,
    kernel: &M,
    sigma: f64,
    redirect: impl Fn(usize, usize) -> usize,
) -> BTreeMap<OccupancyDistribution, f64> {
    let counts = o.counts();
    let m = o.m() as f64;
    let weight = |h: usize| if h == 0 { sigma } else { 1.0 };
    let total: f64 = counts.iter().enumerate().map(|(h, &n)| n as f64 * weight(h)).sum();
    let mut out = BTreeMap::new();
    for (k, &nk) in counts.iter().enumerate().filter(|(_, &n)| n > 0) {
        for (h, &nh) in counts.iter().enumerate().filter(|(_, &n)| n > 0) {
            let ph = nk as f64 / m * nh as f64 * weight(h) / total;
            for (c, &p) in kernel.row(h).iter().enumerate().filter(|(_, &p)| p > 0.0) {
                let mut t = o.clone();
                t.transfer_in_place(k, redirect(h, c));
                *out.entry(t).or_insert(0.0) += ph * p;
            }
        }
    }
    out
}

impl BoundingMaps {
    /// Exact transition row of the lower (`Lower`) or upper (`Upper`) process from `o`.
    pub fn transition_row(&self, theta: BoundingChainKind, o: &OccupancyDistribution) -> Vec<(OccupancyDistribution, f64)> {
        let (ell, m, k, sigma) = (self.params.ell, self.params.m, self.params.k, self.params.sigma);
        let mut out: BTreeMap<OccupancyDistribution, f64> = BTreeMap::new();
        if !o.has_master() {
            let enter = match theta {
                BoundingChainKind::Lower => OccupancyDistribution::lower_enter(ell, m),
                BoundingChainKind::Upper => OccupancyDistribution::upper_enter(ell, m),
            };
            for (t, p) in kernel_row(o, self.mh.as_ref(), sigma, |_, c| c) {
                let t = if t.has_master() { enter.clone() } else { t };
                *out.entry(t).or_insert(0.0) += p;
            }
            return out.into_iter().collect();
        }
        let (row, exit) = match theta {
            BoundingChainKind::Lower => (
                kernel_row(&project_lower(o, k), self.mh.as_ref(), sigma, |h, c| if c < h { ell } else { c }),
                OccupancyDistribution::lower_exit(ell, m),
            ),
            BoundingChainKind::Upper => (
                kernel_row(&project_upper(o, k), self.mk.as_ref(), sigma, |_, c| c),
                OccupancyDistribution::upper_exit(ell, m),
            ),
        };
        for (t, p) in row {
            let t = match (t.has_master(), theta) {
                (false, _) => exit.clone(),
                (true, BoundingChainKind::Lower) => project_lower(&t, k),
                (true, BoundingChainKind::Upper) => project_upper(&t, k),
            };
            *out.entry(t).or_insert(0.0) += p;
        }
        out.into_iter().collect()
    }

    /// Dense transition matrix of the bounding process on all of `P^m_{ell+1}`.
    pub fn transition_matrix(&self, theta: BoundingChainKind) -> Result<(Vec<OccupancyDistribution>, DMatrix<f64>)> {
        let (ell, m) = (self.params.ell, self.params.m);
        let n = binomial_u128((m + ell) as u128, ell as u128);
        if n > DENSE_LIMIT as u128 {
            return Err(Error::Capacity { states: n, limit: DENSE_LIMIT as u128 });
        }
        let states = OccupancyDistribution::enumerate(ell, m);
        let mut p = DMatrix::zeros(states.len(), states.len());
        for (a, o) in states.iter().enumerate() {
            for (t, v) in self.transition_row(theta, o) {
                let b = states.binary_search(&t).expect("target is an occupancy state");
                p[(a, b)] += v;
            }
        }
        Ok((states, p))
    }
}

/// `Z^theta` as a steppable chain.
#[derive(Debug, Clone)]
pub struct EkState {
    pub chain: Arc<EkChain>,
    pub z: ClassVector,
}

impl Steppable for EkState {
    fn step(&mut self, rng: &mut SimRng) {
        self.z = self.chain.step(&self.z, rng.random());
    }
    fn class_frequencies(&self, k: usize) -> Vec<f64> {
        let m = self.chain.m() as f64;
        (0..=k).map(|i| if i <= self.chain.k() { self.z.get(i) as f64 / m } else { 0.0 }).collect()
    }
}

/// Lower or upper occupancy process as a steppable chain.
#[derive(Debug, Clone)]
pub struct BoundingChain {
    pub theta: BoundingChainKind,
    pub state: OccupancyDistribution,
    pub maps: Arc<BoundingMaps>,
}

impl Steppable for BoundingChain {
    fn step(&mut self, rng: &mut SimRng) {
        let r = StepDraw::sample(rng, self.state.m());
        self.state = match self.theta {
            BoundingChainKind::Lower => self.maps.lower_step_single(&self.state, &r),
            BoundingChainKind::Upper => self.maps.upper_step(&self.state, &r),
        };
    }
    fn class_frequencies(&self, k: usize) -> Vec<f64> {
        occupancy_frequencies(&self.state, k)
    }
}

/// Lower, original and upper occupancy processes on one shared record per step.
#[derive(Debug, Clone)]
pub struct CoupledTriple {
    pub lower: OccupancyDistribution,
    pub middle: OccupancyDistribution,
    pub upper: OccupancyDistribution,
    pub maps: Arc<BoundingMaps>,
}

impl CoupledTriple {
    pub fn new(maps: Arc<BoundingMaps>, start: OccupancyDistribution) -> Self {
        CoupledTriple { lower: start.clone(), middle: start.clone(), upper: start, maps }
    }

    pub fn step(&mut self, rng: &mut SimRng) {
        let r = StepDraw::sample(rng, self.middle.m());
        self.lower = self.maps.lower_step_single(&self.lower, &r);
        self.middle = self.maps.phi_prime(&self.middle, &r);
        self.upper = self.maps.upper_step(&self.upper, &r);
    }

    /// `lower ≼ middle ≼ upper`.
    pub fn ordered(&self) -> bool {
        leq_unchecked(&self.lower, &self.middle) && leq_unchecked(&self.middle, &self.upper)
    }
}

/// The chain `Z^theta` on `E_K`.
#[derive(Debug, Clone)]
pub struct EkChain {
    theta: BoundingChainKind,
    k: usize,
    m: usize,
    sigma: f64,
    /// `kern[l][h]`: probability that a class-`l` parent has a class-`h` child, `h <= K`.
    kern: Vec<Vec<f64>>,
    /// Same for a parent in the absorbing class.
    src: Vec<f64>,
    entry: ClassVector,
}

impl EkChain {
    /// Chain for `K = params.k`.
    pub fn new(theta: BoundingChainKind, params: &Parameters) -> Result<Self> {
        let k = params.k;
        let mh = LumpedMutationMatrix::new(params);
        let (kern, src) = match theta {
            BoundingChainKind::Lower => {
                let kern = (0..=k)
                    .map(|l| (0..=k).map(|h| if h >= l { mh.entry(l, h) } else { 0.0 }).collect())
                    .collect();
                (kern, vec![0.0; k + 1])
            }
            BoundingChainKind::Upper => {
                let mk = modified_mutation_matrix(&mh, k)?;
                let kern = (0..=k).map(|l| (0..=k).map(|h| mk.entry(l, h)).collect()).collect();
                (kern, (0..=k).map(|h| mk.entry(k + 1, h)).collect())
            }
        };
        let mut entry = vec![0u32; k + 1];
        entry[0] = 1;
        if theta == BoundingChainKind::Upper && k >= 1 {
            entry[1] = params.m as u32 - 1;
        }
        Ok(EkChain { theta, k, m: params.m, sigma: params.sigma, kern, src, entry: ClassVector::from_vec_unchecked(entry) })
    }

    pub fn theta(&self) -> BoundingChainKind {
        self.theta
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `z^theta`.
    pub fn entry_point(&self) -> &ClassVector {
        &self.entry
    }

    /// Transition row from `z`, diagonal included, sorted by target.
    pub fn row(&self, z: &ClassVector) -> Vec<(ClassVector, f64)> {
        let zs = z.as_slice();
        if zs[0] == 0 {
            return vec![(self.entry.clone(), 1.0)];
        }
        let k = self.k;
        let m = self.m as f64;
        let outside = self.m - z.total();
        let w = (self.sigma - 1.0) * zs[0] as f64 + m;
        let mut flow = vec![0.0; k + 1];
        for (h, f) in flow.iter_mut().enumerate() {
            let mut acc = outside as f64 * self.src[h];
            for l in 0..=k {
                let fit = if l == 0 { self.sigma } else { 1.0 };
                acc += zs[l] as f64 * fit * self.kern[l][h];
            }
            *f = acc;
        }
        let flow_out = (w - flow.iter().sum::<f64>()).max(0.0);
        let zero = ClassVector::zero(k);
        let mut acc: BTreeMap<ClassVector, f64> = BTreeMap::new();
        let mut off = 0.0;
        // dying class d (None = absorbing class), child class c
        let dying = (0..=k).filter(|&d| zs[d] > 0).map(Some).chain((outside > 0).then_some(None));
        for d in dying {
            let nd = match d {
                Some(d) => zs[d] as f64,
                None => outside as f64,
            };
            let children = (0..=k).map(|c| (Some(c), flow[c])).chain(std::iter::once((None, flow_out)));
            for (c, f) in children {
                if c == d || f <= 0.0 {
                    continue;
                }
                let p = nd / m * f / w;
                let mut target = z.shifted(d, c);
                if zs[0] == 1 && target.get(0) == 0 {
                    target = zero.clone();
                }
                *acc.entry(target).or_insert(0.0) += p;
                off += p;
            }
        }
        *acc.entry(z.clone()).or_insert(0.0) += 1.0 - off;
        acc.into_iter().collect()
    }

    /// Inverse-cdf step of the row of `z`.
    pub fn step(&self, z: &ClassVector, u: f64) -> ClassVector {
        pick(self.row(z), u)
    }
}

fn pick(row: Vec<(ClassVector, f64)>, u: f64) -> ClassVector {
    let total: f64 = row.iter().map(|(_, p)| p).sum();
    let target = u * total;
    let mut acc = 0.0;
    let last = row.len() - 1;
    for (idx, (z, p)) in row.into_iter().enumerate() {
        acc += p;
        if target < acc || idx == last {
            return z;
        }
    }
    unreachable!("empty transition row")
}

/// Enumerated transition structure of `Z^theta`.
#[derive(Debug, Clone)]
pub struct EKTransitionMatrix {
    pub theta: BoundingChainKind,
    pub states: Vec<ClassVector>,
    /// Sparse rows `(target index, probability)`.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl EKTransitionMatrix {
    pub fn index_of(&self, z: &ClassVector) -> Option<usize> {
        self.states.binary_search(z).ok()
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let n = self.states.len();
        if n > DENSE_LIMIT {
            return Err(Error::Capacity { states: n as u128, limit: DENSE_LIMIT as u128 });
        }
        let mut p = DMatrix::zeros(n, n);
        for (a, row) in self.rows.iter().enumerate() {
            for &(b, v) in row {
                p[(a, b)] += v;
            }
        }
        Ok(p)
    }
}

/// `p^theta` on all of `E_K` with `K = k`.
pub fn ek_transition_matrix(theta: BoundingChainKind, params: &Parameters, k: usize) -> Result<EKTransitionMatrix> {
    let size = binomial_u128((params.m + k + 1) as u128, (k + 1) as u128);
    if size > EK_LIMIT {
        return Err(Error::Capacity { states: size, limit: EK_LIMIT });
    }
    let chain = EkChain::new(theta, &params.with_k(k)?)?;
    let mut states = ClassVector::enumerate(k, params.m);
    states.sort();
    let rows = states
        .iter()
        .map(|z| {
            chain
                .row(z)
                .into_iter()
                .map(|(t, p)| (states.binary_search(&t).expect("target inside E_K"), p))
                .collect()
        })
        .collect();
    Ok(EKTransitionMatrix { theta, states, rows })
}

/// `delta_i(rho)`, `gamma_i(rho)` of class `k` of `Z^theta`. `beta[l] = M_H(l, k)`
/// for `l <= k` and `eps` is `0` (lower) or `M_H(k+1, k)` (upper).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedRates {
    pub k: usize,
    pub theta: BoundingChainKind,
    pub m: usize,
    pub sigma: f64,
    pub beta: Vec<f64>,
    pub eps: f64,
}

/// Conditioned rates of class `k` for the chain with parameters `params`.
pub fn conditioned_rates(
    k: usize,
    theta: BoundingChainKind,
    mh: &LumpedMutationMatrix,
    params: &Parameters,
) -> Result<ConditionedRates> {
    if k > params.k {
        return invalid(format!("class {k} is not tracked with K = {}", params.k));
    }
    if mh.ell() != params.ell {
        return invalid("mutation matrix and parameters disagree on ell");
    }
    let beta = (0..=k).map(|l| mh.entry(l, k)).collect();
    let eps = match theta {
        BoundingChainKind::Lower => 0.0,
        BoundingChainKind::Upper => mh.entry(k + 1, k),
    };
    Ok(ConditionedRates { k, theta, m: params.m, sigma: params.sigma, beta, eps })
}

impl ConditionedRates {
    /// `(up source, down source, normaliser)` at `rho`, `y = i/m`.
    fn parts(&self, rho: &[f64], y: f64) -> (f64, f64, f64) {
        let (s, k, e) = (self.sigma, self.k, self.eps);
        if k == 0 {
            let up = s * y * self.beta[0] + (1.0 - y) * e;
            let down = s * y * (1.0 - self.beta[0]) + (1.0 - y) * (1.0 - e);
            return (up, down, (s - 1.0) * y + 1.0);
        }
        let rest = 1.0 - rho.iter().sum::<f64>() - y;
        let mut up = s * rho[0] * self.beta[0] + y * self.beta[k] + rest * e;
        let mut down = s * rho[0] * (1.0 - self.beta[0]) + y * (1.0 - self.beta[k]) + rest * (1.0 - e);
        for l in 1..k {
            up += rho[l] * self.beta[l];
            down += rho[l] * (1.0 - self.beta[l]);
        }
        (up, down, (s - 1.0) * rho[0] + 1.0)
    }

    /// `delta_i(rho)`; `rho` holds `rho_0..rho_{k-1}` and is ignored for `k = 0`.
    /// Negative values off the simplex are clamped to 0.
    pub fn delta(&self, rho: &[f64], i: usize) -> f64 {
        if i >= self.m {
            return 0.0;
        }
        if self.k == 0 && i == 0 {
            // from z_0 = 0 the chain jumps to its entry point
            return 1.0;
        }
        let y = i as f64 / self.m as f64;
        let (up, _, w) = self.parts(rho, y);
        ((1.0 - y) * up / w).max(0.0)
    }

    /// `gamma_i(rho)`, clamped as [`ConditionedRates::delta`].
    pub fn gamma(&self, rho: &[f64], i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        let y = i as f64 / self.m as f64;
        let (_, down, w) = self.parts(rho, y);
        (y * down / w).max(0.0)
    }

    /// Birth and death chain of class `k` frozen at `rho`.
    pub fn spec_at(&self, rho: &[f64]) -> Result<BirthDeathSpec> {
        BirthDeathSpec::new(
            (0..self.m).map(|i| self.delta(rho, i)).collect(),
            (1..=self.m).map(|i| self.gamma(rho, i)).collect(),
        )
    }

    /// `i*`: `floor(m y*)` clamped to `0..=m`, where `y*` zeroes `d delta_i / d rho_0`
    /// at fixed `rho_1..rho_{k-1}`. `None` for `k = 0` or a flat coefficient.
    pub fn i_star(&self, rho_rest: &[f64]) -> Option<usize> {
        if self.k == 0 {
            return None;
        }
        let y = crate::birth_death::switch_point(self.sigma, &self.beta, self.eps, rho_rest)?;
        Some((y * self.m as f64).floor().clamp(0.0, self.m as f64) as usize)
    }
}

/// Corner box of `W_{k-1}(2 delta')` clamped to `[0, 1]`.
fn window_box(rho_star: &[f64], k: usize, delta_prime: f64) -> Vec<(f64, f64)> {
    let h = 2.0 * delta_prime;
    rho_star[..k].iter().map(|&r| ((r - h).max(0.0), (r + h).min(1.0))).collect()
}

fn corner(bx: &[(f64, f64)], mask: u64) -> Vec<f64> {
    bx.iter()
        .enumerate()
        .map(|(l, &(lo, hi))| if mask >> l & 1 == 1 { hi } else { lo })
        .collect()
}

/// Extremes `(min delta, max delta, min gamma, max gamma)` at `i` over the box.
fn extremes(rates: &ConditionedRates, bx: &[(f64, f64)], i: usize) -> (f64, f64, f64, f64) {
    let k = bx.len();
    let mut out = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut visit = |rho: &[f64]| {
        let d = rates.delta(rho, i);
        let g = rates.gamma(rho, i);
        out.0 = out.0.min(d);
        out.1 = out.1.max(d);
        out.2 = out.2.min(g);
        out.3 = out.3.max(g);
    };
    if k <= 8 {
        for mask in 0..1u64 << k {
            visit(&corner(bx, mask));
        }
    } else {
        // delta is monotone in rho_l (l >= 1) with the sign of beta_l - eps,
        // gamma with the opposite sign; rho_0 is scanned at both ends
        for &low_side in &[true, false] {
            let mut rho: Vec<f64> = bx
                .iter()
                .enumerate()
                .map(|(l, &(lo, hi))| {
                    let up = l > 0 && rates.beta[l] >= rates.eps;
                    if up ^ low_side { hi } else { lo }
                })
                .collect();
            for r0 in [bx[0].0, bx[0].1] {
                rho[0] = r0;
                visit(&rho);
            }
        }
    }
    out
}

/// `(Z^L, Z^U)` rate arrays over `W_{k-1}(2 delta')` around `rho_star`.
pub fn coupled_bd_bounds(
    rates: &ConditionedRates,
    delta_prime: f64,
    rho_star: &[f64],
) -> Result<(BirthDeathSpec, BirthDeathSpec)> {
    let k = rates.k;
    if !(delta_prime > 0.0) {
        return invalid(format!("delta' must be positive, got {delta_prime}"));
    }
    if rho_star.len() < k {
        return invalid(format!("need rho*_0..rho*_{} , got {} values", k.saturating_sub(1), rho_star.len()));
    }
    if let Some(&r0) = rho_star.first() {
        if delta_prime >= r0 {
            return invalid(format!("empty window: delta' = {delta_prime} >= rho*_0 = {r0}"));
        }
    }
    let bx = window_box(rho_star, k, delta_prime);
    let m = rates.m;
    let (mut dl, mut du, mut gl, mut gu) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
    for i in 0..=m {
        let (dmin, dmax, gmin, gmax) = extremes(rates, &bx, i);
        if i < m {
            dl.push(dmin);
            du.push(dmax);
        }
        if i > 0 {
            gl.push(gmax);
            gu.push(gmin);
        }
    }
    Ok((BirthDeathSpec::new(dl, gl)?, BirthDeathSpec::new(du, gu)?))
}

/// `C(i, u) = i - 1{u < gamma_i} + 1{u > 1 - delta_i}`.
pub fn coupling_map(delta: f64, gamma: f64, i: usize, u: f64) -> usize {
    let down = usize::from(u < gamma);
    let up = usize::from(u > 1.0 - delta);
    i + up - down
}

/// `C(rho, i, u)` with the conditioned rates.
pub fn coupling_map_c(rho: &[f64], i: usize, u: f64, rates: &ConditionedRates) -> usize {
    coupling_map(rates.delta(rho, i), rates.gamma(rho, i), i, u)
}

/// `Z^theta` with class `k` driven by `C` and `Z^L`, `Z^U` on the same uniforms.
#[derive(Debug, Clone)]
pub struct SandwichRun {
    pub chain: EkChain,
    pub rates: ConditionedRates,
    pub lower: BirthDeathSpec,
    pub upper: BirthDeathSpec,
    pub rho_star: Vec<f64>,
    pub delta_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SandwichReport {
    pub steps: u64,
    pub excursions: u64,
    pub in_window_steps: u64,
    pub violations: u64,
    /// Steps where the conditioned row had no mass for the move chosen by `C`.
    pub mismatches: u64,
}

impl SandwichRun {
    pub fn new(chain: EkChain, rates: ConditionedRates, rho_star: &[f64], delta_prime: f64) -> Result<Self> {
        if rates.k > chain.k() || rates.m != chain.m() || rates.theta != chain.theta() {
            return invalid("rates do not belong to this chain");
        }
        let (lower, upper) = coupled_bd_bounds(&rates, delta_prime, rho_star)?;
        Ok(SandwichRun { chain, rates, lower, upper, rho_star: rho_star.to_vec(), delta_prime })
    }

    fn rho_of(&self, z: &ClassVector) -> Vec<f64> {
        let m = self.chain.m() as f64;
        z.as_slice()[..self.rates.k].iter().map(|&c| c as f64 / m).collect()
    }

    /// `z` in `U_{k-1}(2 delta')`.
    pub fn in_window(&self, z: &ClassVector) -> bool {
        if z.get(0) == 0 {
            return false;
        }
        let h = 2.0 * self.delta_prime;
        self.rho_of(z).iter().zip(&self.rho_star).all(|(r, s)| (r - s).abs() < h)
    }

    /// One step of `Z^theta` whose class-`k` move is `C(rho, z_k, u)`; the
    /// rest of the transition is drawn from the row conditioned on that move.
    /// Returns the next state and whether the move had positive mass.
    pub fn coupled_step(&self, z: &ClassVector, u: f64, v: f64) -> (ClassVector, bool) {
        let k = self.rates.k;
        let zk = z.get(k) as i64;
        let target = coupling_map_c(&self.rho_of(z), zk as usize, u, &self.rates) as i64 - zk;
        let row = self.chain.row(z);
        let group: Vec<(ClassVector, f64)> =
            row.iter().filter(|(t, _)| t.get(k) as i64 - zk == target).cloned().collect();
        if group.iter().map(|(_, p)| p).sum::<f64>() > 0.0 {
            (pick(group, v), true)
        } else {
            (pick(row, v), false)
        }
    }

    /// Runs `steps` events from `start`; every visit to the window opens an
    /// excursion with `Z^L = Z^U = z_k`, checked until the window is left.
    pub fn run(&self, start: ClassVector, steps: u64, rng: &mut SimRng) -> SandwichReport {
        let k = self.rates.k;
        let mut rep = SandwichReport::default();
        let mut z = start;
        let mut pair: Option<(usize, usize)> = None;
        for _ in 0..steps {
            rep.steps += 1;
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            if !self.in_window(&z) {
                pair = None;
                z = self.chain.step(&z, v);
                continue;
            }
            let (lo, hi) = *pair.get_or_insert_with(|| {
                rep.excursions += 1;
                (z.get(k) as usize, z.get(k) as usize)
            });
            rep.in_window_steps += 1;
            let (next, ok) = self.coupled_step(&z, u, v);
            rep.mismatches += u64::from(!ok);
            let nlo = self.lower.step(lo, u);
            let nhi = self.upper.step(hi, u);
            let zk = next.get(k) as usize;
            if !(nlo <= zk && zk <= nhi) {
                rep.violations += 1;
            }
            pair = Some((nlo, nhi));
            z = next;
        }
        rep
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExcursionEvent {
    Enter,
    Interior,
    Exit,
}

impl ExcursionEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExcursionEvent::Enter => "enter",
            ExcursionEvent::Interior => "interior",
            ExcursionEvent::Exit => "exit",
        }
    }
}

/// States of `Z^theta` inside excursions from the zero vector, over `steps` events.
pub fn log_excursions(chain: &EkChain, steps: u64, rng: &mut SimRng) -> Vec<(u64, ClassVector, ExcursionEvent)> {
    let mut z = ClassVector::zero(chain.k());
    let mut out = Vec::new();
    for t in 1..=steps {
        let was_out = z.get(0) == 0;
        z = chain.step(&z, rng.random());
        let event = if was_out {
            ExcursionEvent::Enter
        } else if z.get(0) == 0 {
            ExcursionEvent::Exit
        } else {
            ExcursionEvent::Interior
        };
        out.push((t, z.clone(), event));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::partial_order_leq;
    use crate::rng::replica_rng;
    use proptest::prelude::*;

    fn maps(ell: usize, m: usize, a: f64, sigma: f64, k: usize) -> BoundingMaps {
        BoundingMaps::new(&Parameters::from_a(ell, m, a, sigma, 2, k).unwrap()).unwrap()
    }

    #[test]
    fn lower_cases() {
        let bm = maps(8, 5, 0.5, 4.0, 1);
        let mut rng = replica_rng(1, 0);
        let o = OccupancyDistribution::new(vec![0, 0, 2, 1, 0, 0, 0, 1, 1]).unwrap();
        let (mut same, mut enter) = (0, 0);
        for _ in 0..20_000 {
            let r = LocusDraw::sample(&mut rng, 5, 8);
            let free = bm.phi_o(&o, &r);
            let low = bm.lower_step(&o, &r);
            if free.has_master() {
                assert_eq!(low, OccupancyDistribution::lower_enter(8, 5));
                enter += 1;
            } else {
                assert_eq!(low, free);
                same += 1;
            }
            assert!(partial_order_leq(&low, &free).unwrap());
        }
        assert!(same > 0 && enter > 0);
    }

    #[test]
    fn upper_cases() {
        let bm = maps(8, 5, 0.5, 4.0, 1);
        let mut rng = replica_rng(2, 0);
        let o = OccupancyDistribution::new(vec![1, 2, 0, 1, 0, 0, 0, 1, 0]).unwrap();
        let (mut exits, mut stays) = (0, 0);
        for _ in 0..20_000 {
            let r = StepDraw::sample(&mut rng, 5);
            let up = bm.upper_step(&o, &r);
            let bar = bm.phi_bar(&project_upper(&o, 1), &r);
            if bar.has_master() {
                assert_eq!(up, project_upper(&bar, 1));
                stays += 1;
            } else {
                assert_eq!(up, OccupancyDistribution::upper_exit(8, 5));
                exits += 1;
            }
            assert!(partial_order_leq(&bm.phi_prime(&o, &r), &up).unwrap());
        }
        assert!(exits > 0 && stays > 0);
    }

    #[test]
    fn exact_rows_match_maps() {
        let bm = maps(6, 4, 0.5, 4.0, 1);
        let mut rng = replica_rng(9, 0);
        let starts = [
            OccupancyDistribution::lower_exit(6, 4),
            OccupancyDistribution::new(vec![0, 1, 2, 0, 0, 0, 1]).unwrap(),
            OccupancyDistribution::new(vec![2, 1, 0, 0, 0, 0, 1]).unwrap(),
            OccupancyDistribution::new(vec![1, 1, 2, 0, 0, 0, 0]).unwrap(),
        ];
        let n = 200_000;
        for theta in [BoundingChainKind::Lower, BoundingChainKind::Upper] {
            for o in &starts {
                let row = bm.transition_row(theta, o);
                assert!((row.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
                let mut hits: BTreeMap<OccupancyDistribution, usize> = BTreeMap::new();
                for _ in 0..n {
                    let r = StepDraw::sample(&mut rng, 4);
                    let t = match theta {
                        BoundingChainKind::Lower => bm.lower_step_single(o, &r),
                        BoundingChainKind::Upper => bm.upper_step(o, &r),
                    };
                    *hits.entry(t).or_insert(0) += 1;
                }
                assert!(hits.keys().all(|t| row.iter().any(|(s, _)| s == t)));
                for (t, p) in &row {
                    let f = *hits.get(t).unwrap_or(&0) as f64 / n as f64;
                    let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-9);
                    assert!((f - p).abs() < 4.0 * se + 1e-12, "{theta:?} {t:?}: {f} vs {p}");
                }
            }
        }
    }

    #[test]
    fn pathwise_sandwich() {
        let bm = Arc::new(maps(20, 30, 0.3, 6.0, 2));
        let mut rng = replica_rng(3, 0);
        let mut tri = CoupledTriple::new(bm.clone(), OccupancyDistribution::concentrated(20, 30, 10));
        let mut low = OccupancyDistribution::concentrated(20, 30, 10);
        let mut mid = low.clone();
        for _ in 0..20_000 {
            tri.step(&mut rng);
            assert!(tri.ordered());
            let r = LocusDraw::sample(&mut rng, 30, 20);
            low = bm.lower_step(&low, &r);
            mid = bm.phi_o(&mid, &r);
            assert!(leq_unchecked(&low, &mid));
        }
    }

    #[test]
    fn lower_transient_structure() {
        let bm = maps(10, 6, 0.4, 5.0, 2);
        let mut rng = replica_rng(4, 0);
        let mut o = OccupancyDistribution::lower_enter(10, 6);
        for _ in 0..5000 {
            o = bm.lower_step_single(&o, &StepDraw::sample(&mut rng, 6));
            if o.has_master() {
                assert_eq!(o.n_k(2) + o.get(10) as usize, 6);
            }
        }
    }

    #[test]
    fn ek_rows_and_boundaries() {
        let p = Parameters::from_a(12, 6, 0.4, 4.0, 2, 2).unwrap();
        for theta in [BoundingChainKind::Lower, BoundingChainKind::Upper] {
            let mat = ek_transition_matrix(theta, &p, 2).unwrap();
            assert_eq!(mat.states.len(), binomial_u128(9, 3) as usize);
            let chain = EkChain::new(theta, &p).unwrap();
            for (a, z) in mat.states.iter().enumerate() {
                let row = &mat.rows[a];
                let s: f64 = row.iter().map(|(_, v)| v).sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&(_, v)| v >= -1e-15));
                if z.get(0) == 0 {
                    assert_eq!(row.len(), 1);
                    assert_eq!(mat.states[row[0].0], *chain.entry_point());
                }
                for &(b, v) in row {
                    let t = &mat.states[b];
                    if v > 0.0 && t.get(0) == 0 && z.get(0) >= 1 {
                        assert_eq!(*t, ClassVector::zero(2));
                    }
                }
            }
        }
        let up = EkChain::new(BoundingChainKind::Upper, &p).unwrap();
        assert_eq!(up.entry_point().as_slice(), &[1, 5, 0]);
        let low = EkChain::new(BoundingChainKind::Lower, &p).unwrap();
        assert_eq!(low.entry_point().as_slice(), &[1, 0, 0]);
        let up0 = EkChain::new(BoundingChainKind::Upper, &p.with_k(0).unwrap()).unwrap();
        assert_eq!(up0.entry_point().as_slice(), &[1]);
    }

    #[test]
    fn ek_capacity() {
        let p = Parameters::from_a(40, 200, 0.4, 4.0, 2, 3).unwrap();
        assert!(matches!(
            ek_transition_matrix(BoundingChainKind::Lower, &p, 3),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn lower_top_class_has_no_outside_source() {
        let p = Parameters::from_a(12, 6, 0.4, 4.0, 2, 2).unwrap();
        let mh = LumpedMutationMatrix::new(&p);
        let chain = EkChain::new(BoundingChainKind::Lower, &p).unwrap();
        let z = ClassVector::new(vec![2, 1, 1], 6).unwrap();
        let row = chain.row(&z);
        let up: f64 = row.iter().filter(|(t, _)| t.as_slice() == [2, 1, 2]).map(|(_, v)| v).sum();
        let w = 3.0 * 2.0 + 6.0;
        let expect = 2.0 / 6.0 * (4.0 * 2.0 * mh.entry(0, 2) + mh.entry(1, 2) + mh.entry(2, 2)) / w;
        assert!((up - expect).abs() < 1e-14);
    }

    #[test]
    fn k0_chain_is_birth_death() {
        let p = Parameters::from_a(15, 8, 0.5, 4.0, 2, 0).unwrap();
        let mh = LumpedMutationMatrix::new(&p);
        for theta in [BoundingChainKind::Lower, BoundingChainKind::Upper] {
            let mat = ek_transition_matrix(theta, &p, 0).unwrap();
            let rates = conditioned_rates(0, theta, &mh, &p).unwrap();
            let spec = rates.spec_at(&[]).unwrap();
            let dense = mat.to_dense().unwrap();
            let bd = spec.transition_matrix();
            assert!((dense - bd).abs().max() < 1e-14);
        }
    }

    #[test]
    fn marginal_rates() {
        let p = Parameters::from_a(12, 10, 0.4, 4.0, 2, 2).unwrap();
        let mh = LumpedMutationMatrix::new(&p);
        for theta in [BoundingChainKind::Lower, BoundingChainKind::Upper] {
            let chain = EkChain::new(theta, &p).unwrap();
            for k in 1..=2 {
                let rates = conditioned_rates(k, theta, &mh, &p).unwrap();
                for z in ClassVector::enumerate(2, 10).into_iter().filter(|z| z.get(0) >= 2) {
                    let row = chain.row(&z);
                    let zk = z.get(k) as i64;
                    let up: f64 = row.iter().filter(|(t, _)| t.get(k) as i64 == zk + 1).map(|(_, v)| v).sum();
                    let dn: f64 = row.iter().filter(|(t, _)| t.get(k) as i64 == zk - 1).map(|(_, v)| v).sum();
                    let rho: Vec<f64> = z.as_slice()[..k].iter().map(|&c| c as f64 / 10.0).collect();
                    assert!((up - rates.delta(&rho, zk as usize)).abs() < 1e-12);
                    assert!((dn - rates.gamma(&rho, zk as usize)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rates_ignore_higher_classes() {
        let p = Parameters::from_a(12, 10, 0.4, 4.0, 2, 2).unwrap();
        let mh = LumpedMutationMatrix::new(&p);
        let chain = EkChain::new(BoundingChainKind::Upper, &p).unwrap();
        let marg = |z: Vec<u32>| {
            let z = ClassVector::new(z, 10).unwrap();
            chain.row(&z).iter().filter(|(t, _)| t.get(1) == z.get(1) + 1).map(|(_, v)| *v).sum::<f64>()
        };
        let a = marg(vec![4, 2, 0]);
        let b = marg(vec![4, 2, 3]);
        assert!((a - b).abs() < 1e-14);
        let r = conditioned_rates(1, BoundingChainKind::Upper, &mh, &p).unwrap();
        assert_eq!(r.gamma(&[0.3], 0), 0.0);
        assert_eq!(r.delta(&[0.3], 10), 0.0);
    }

    fn window_setup(k: usize, theta: BoundingChainKind) -> (Parameters, ConditionedRates, Vec<f64>) {
        let p = Parameters::from_a(20, 30, 0.3, 6.0, 2, 2).unwrap();
        let mh = LumpedMutationMatrix::new(&p);
        let rates = conditioned_rates(k, theta, &mh, &p).unwrap();
        let rs = crate::quasispecies::rho_star_recurrence(6.0, 0.3, 2).unwrap();
        (p, rates, rs)
    }

    #[test]
    fn bounds_cover_window() {
        let mut rng = replica_rng(5, 0);
        for theta in [BoundingChainKind::Lower, BoundingChainKind::Upper] {
            for k in 1..=2 {
                let (_, rates, rs) = window_setup(k, theta);
                let dp = 0.05;
                let (lo, hi) = coupled_bd_bounds(&rates, dp, &rs).unwrap();
                for _ in 0..1000 {
                    let rho: Vec<f64> = rs[..k]
                        .iter()
                        .map(|&r| rng.random_range((r - 2.0 * dp).max(0.0)..(r + 2.0 * dp).min(1.0)))
                        .collect();
                    for i in 0..=30 {
                        let (d, g) = (rates.delta(&rho, i), rates.gamma(&rho, i));
                        assert!(lo.delta(i) <= d + 1e-15 && d <= hi.delta(i) + 1e-15);
                        assert!(hi.gamma(i) <= g + 1e-15 && g <= lo.gamma(i) + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn bounds_collapse() {
        let (_, rates, rs) = window_setup(2, BoundingChainKind::Lower);
        let at = rates.spec_at(&rs[..2]).unwrap();
        let mut last = f64::INFINITY;
        for &dp in &[0.04, 0.01, 0.0025] {
            let (lo, hi) = coupled_bd_bounds(&rates, dp, &rs).unwrap();
            let gap = (0..=30)
                .map(|i| {
                    let a = (lo.delta(i) - at.delta(i)).abs().max((hi.delta(i) - at.delta(i)).abs());
                    let b = (lo.gamma(i) - at.gamma(i)).abs().max((hi.gamma(i) - at.gamma(i)).abs());
                    a.max(b)
                })
                .fold(0.0, f64::max);
            assert!(gap < 10.0 * dp && gap < last);
            last = gap;
        }
        assert!(coupled_bd_bounds(&rates, rs[0], &rs).is_err());
        assert!(coupled_bd_bounds(&rates, 0.0, &rs).is_err());
    }

    #[test]
    fn sign_fallback_matches_corners() {
        let (_, rates, rs) = window_setup(2, BoundingChainKind::Upper);
        let bx = window_box(&rs, 2, 0.05);
        for i in 0..=30 {
            let full = extremes(&rates, &bx, i);
            // emulate the fallback by forcing it through a wide box copy
            let mut rho_lo = vec![bx[0].0, bx[1].0];
            let mut best = (f64::INFINITY, f64::NEG_INFINITY);
            for r0 in [bx[0].0, bx[0].1] {
                rho_lo[0] = r0;
                best.0 = best.0.min(rates.delta(&rho_lo, i));
                best.1 = best.1.max(rates.gamma(&rho_lo, i));
            }
            assert!((best.0 - full.0).abs() < 1e-15 && (best.1 - full.3).abs() < 1e-15);
        }
    }

    #[test]
    fn i_star_splits_monotonicity() {
        let (_, rates, rs) = window_setup(1, BoundingChainKind::Upper);
        let i_star = rates.i_star(&[]).unwrap();
        let h = 1e-6;
        for i in 0..30 {
            let d = rates.delta(&[rs[0] + h], i) - rates.delta(&[rs[0] - h], i);
            if i + 1 < i_star {
                assert!(d > 0.0, "i={i}");
            } else if i > i_star + 1 {
                assert!(d < 0.0, "i={i}");
            }
        }
    }

    #[test]
    fn coupling_map_examples() {
        assert_eq!(coupling_map(0.2, 0.3, 5, 0.5), 5);
        assert_eq!(coupling_map(0.2, 0.3, 5, 0.1), 4);
        assert_eq!(coupling_map(0.2, 0.3, 5, 0.9), 6);
        let (_, rates, rs) = window_setup(1, BoundingChainKind::Lower);
        let mut rng = replica_rng(6, 0);
        let n = 1_000_000;
        let i = 12;
        let (d, g) = (rates.delta(&rs[..1], i), rates.gamma(&rs[..1], i));
        let (mut ups, mut downs) = (0usize, 0usize);
        for _ in 0..n {
            match coupling_map_c(&rs[..1], i, rng.random(), &rates) {
                13 => ups += 1,
                11 => downs += 1,
                _ => {}
            }
        }
        for (obs, p) in [(ups, d), (downs, g)] {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((obs as f64 / n as f64 - p).abs() < 3.0 * se);
        }
    }

    #[test]
    fn coupling_map_is_monotone() {
        let p = Parameters::from_a(100, 100, 0.3, 6.0, 2, 2).unwrap();
        let mh = LumpedMutationMatrix::new(&p);
        let rates = conditioned_rates(1, BoundingChainKind::Lower, &mh, &p).unwrap();
        for step in 0..=1000 {
            let u = step as f64 / 1000.0;
            for i in 0..100 {
                assert!(coupling_map_c(&[0.6], i, u, &rates) <= coupling_map_c(&[0.6], i + 1, u, &rates));
            }
        }
    }

    #[test]
    fn sandwich_excursions() {
        for k in 1..=2 {
            let (p, rates, rs) = window_setup(k, BoundingChainKind::Lower);
            let chain = EkChain::new(BoundingChainKind::Lower, &p).unwrap();
            let run = SandwichRun::new(chain, rates, &rs, 0.1).unwrap();
            let mut rng = replica_rng(7, k as u64);
            let rep = run.run(ClassVector::zero(2), 20_000, &mut rng);
            assert!(rep.excursions > 0 && rep.in_window_steps > 1000);
            assert_eq!(rep.violations, 0);
            assert_eq!(rep.mismatches, 0);
        }
    }

    #[test]
    fn excursion_log_shape() {
        let p = Parameters::from_a(12, 6, 0.4, 4.0, 2, 1).unwrap();
        let chain = EkChain::new(BoundingChainKind::Upper, &p).unwrap();
        let mut rng = replica_rng(8, 0);
        let log = log_excursions(&chain, 5000, &mut rng);
        assert_eq!(log[0].2, ExcursionEvent::Enter);
        for w in log.windows(2) {
            if w[1].2 == ExcursionEvent::Enter {
                assert_eq!(w[0].1, ClassVector::zero(1));
                assert_eq!(w[1].1, *chain.entry_point());
            }
            if w[1].2 == ExcursionEvent::Exit {
                assert_eq!(w[1].1, ClassVector::zero(1));
            }
        }
    }

    fn comparable_pair(ell: usize, m: usize) -> impl Strategy<Value = (OccupancyDistribution, OccupancyDistribution)> {
        (prop::collection::vec(0usize..=ell, m), prop::collection::vec(0usize..=ell, m)).prop_map(move |(a, b)| {
            // sorting both and taking elementwise max gives o' above o
            let mut a = a;
            let mut b = b;
            a.sort();
            b.sort();
            let hi: Vec<usize> = a.iter().zip(&b).map(|(x, y)| *x.max(y)).collect();
            let to_occ = |v: &[usize]| {
                let mut c = vec![0u32; ell + 1];
                v.iter().for_each(|&x| c[x] += 1);
                OccupancyDistribution::new(c).unwrap()
            };
            (to_occ(&hi), to_occ(&a))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn phi_prime_is_monotone((o, o2) in comparable_pair(8, 6), s in 0.0f64..1.0, j in 1usize..=6, u in 0.0f64..1.0) {
            let bm = maps(8, 6, 0.6, 3.0, 1);
            prop_assert!(leq_unchecked(&o, &o2));
            let r = StepDraw { s, i: 1, j, u };
            prop_assert!(leq_unchecked(&bm.phi_prime(&o, &r), &bm.phi_prime(&o2, &r)));
        }

        #[test]
        fn maps_conserve_mass((o, _) in comparable_pair(8, 6), s in 0.0f64..1.0, j in 1usize..=6, u in 0.0f64..1.0) {
            let bm = maps(8, 6, 0.6, 3.0, 1);
            let r = StepDraw { s, i: 1, j, u };
            prop_assert_eq!(bm.lower_step_single(&o, &r).m(), 6);
            prop_assert_eq!(bm.upper_step(&o, &r).m(), 6);
            prop_assert!(leq_unchecked(&bm.lower_step_single(&o, &r), &bm.phi_prime(&o, &r)));
            prop_assert!(leq_unchecked(&bm.phi_prime(&o, &r), &bm.upper_step(&o, &r)));
        }
    }
}
