//! Equilibrium estimators: ergodic averages with batch means, discovery and
//! persistence times, and the renewal decomposition of the bounding laws.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundingChain, BoundingChainKind, BoundingMaps, EkChain, EkState};
use crate::error::{invalid, Error, Result};
use crate::linalg::{expected_sums_before_hit, hitting_times, stationary_distribution};
use crate::model::{ClassVector, OccupancyDistribution, Parameters};
use crate::moran::{occupancy_step, SimulationConfig, Steppable};
use crate::mutation::LumpedMutationMatrix;
use crate::rng::{replica_rng, SimRng};
use crate::stats::{batch_means, mean, sample_variance, DEFAULT_BATCHES};

/// Default step cap of a hitting-time replica.
pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

/// Stream offsets keeping the random sources of one experiment apart.
const CYCLE_STREAM: u64 = 1 << 32;
const EXCURSION_STREAM: u64 = 2 << 32;
const EK_STREAM: u64 = 3 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumEstimate {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub standard_error: Vec<f64>,
    /// Smallest effective sample size over the components.
    pub effective_samples: f64,
    pub burn_in_used: u64,
    pub samples: usize,
}

/// Long-run averages of `statistic` over `config.replicas` independent runs
/// of `chain`. Each replica is summarised by batch means; replica means are
/// averaged and their errors combined as independent.
pub fn estimate_equilibrium<C, F>(chain: &C, statistic: F, config: &SimulationConfig) -> Result<EquilibriumEstimate>
where
    C: Steppable,
    F: Fn(&C) -> Vec<f64> + Sync,
{
    config.validate()?;
    let series: Vec<Vec<Vec<f64>>> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let mut c = chain.clone();
            let mut rng = replica_rng(config.seed, r as u64);
            let mut out = Vec::with_capacity(config.samples_per_replica() as usize);
            for t in 1..=config.steps {
                c.step(&mut rng);
                if t > config.burn_in && (t - config.burn_in) % config.thin == 0 {
                    out.push(statistic(&c));
                }
            }
            out
        })
        .collect();
    let dim = series.first().and_then(|s| s.first()).map_or(0, Vec::len);
    let reps = config.replicas as f64;
    let mut est = EquilibriumEstimate {
        mean: Vec::with_capacity(dim),
        variance: Vec::with_capacity(dim),
        standard_error: Vec::with_capacity(dim),
        effective_samples: f64::INFINITY,
        burn_in_used: config.burn_in,
        samples: series.iter().map(Vec::len).sum(),
    };
    for d in 0..dim {
        let mut means = 0.0;
        let mut se2 = 0.0;
        let mut ess = 0.0;
        let mut pooled = Vec::with_capacity(est.samples);
        for s in &series {
            let xs: Vec<f64> = s.iter().map(|v| v[d]).collect();
            let b = batch_means(&xs, DEFAULT_BATCHES)?;
            means += b.mean;
            se2 += b.standard_error * b.standard_error;
            ess += b.effective_samples;
            pooled.extend(xs);
        }
        est.mean.push(means / reps);
        est.standard_error.push(se2.sqrt() / reps);
        est.variance.push(sample_variance(&pooled));
        est.effective_samples = est.effective_samples.min(ess);
    }
    if dim == 0 {
        est.effective_samples = 0.0;
    }
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingTimeEstimate {
    pub mean: f64,
    pub standard_error: f64,
    /// Uncensored replicas.
    pub count: usize,
    /// `ln(mean) / scale`, with `scale = ell` (discovery) or `m` (persistence).
    pub log_scale_per_unit: f64,
    pub censored: usize,
    pub cap: u64,
}

impl HittingTimeEstimate {
    fn from_samples(times: Vec<Option<u64>>, scale: f64, cap: u64) -> Result<Self> {
        let total = times.len();
        let xs: Vec<f64> = times.iter().flatten().map(|&t| t as f64).collect();
        if xs.is_empty() {
            return Err(Error::Censored { censored: total, total, cap });
        }
        let mu = mean(&xs);
        Ok(HittingTimeEstimate {
            mean: mu,
            standard_error: (sample_variance(&xs) / xs.len() as f64).sqrt(),
            count: xs.len(),
            log_scale_per_unit: mu.ln() / scale,
            censored: total - xs.len(),
            cap,
        })
    }

    /// Fails when any replica hit the cap.
    pub fn require_uncensored(self) -> Result<Self> {
        if self.censored > 0 {
            return Err(Error::Censored { censored: self.censored, total: self.censored + self.count, cap: self.cap });
        }
        Ok(self)
    }
}

/// Replica settings of the hitting-time estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HittingConfig {
    pub replicas: usize,
    pub seed: u64,
    pub cap: u64,
}

impl HittingConfig {
    pub fn new(replicas: usize, seed: u64) -> Self {
        HittingConfig { replicas, seed, cap: DEFAULT_STEP_CAP }
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return invalid("replicas must be at least 1");
        }
        if self.cap == 0 {
            return invalid("step cap must be positive");
        }
        Ok(())
    }
}

fn discovery_start(params: &Parameters, k: usize) -> Result<OccupancyDistribution> {
    if k >= params.ell {
        return invalid(format!("K = {k} must be below ell = {}", params.ell));
    }
    Ok(OccupancyDistribution::neutral_exit(params.ell, params.m, k))
}

/// Events until `o(0) + ... + o(K) >= 1`, or `None` past `cap`.
fn time_to_discover(o: &mut OccupancyDistribution, k: usize, mh: &LumpedMutationMatrix, sigma: f64, cap: u64, rng: &mut SimRng) -> Option<u64> {
    let mut t = 0;
    while o.n_k(k) == 0 {
        if t == cap {
            return None;
        }
        occupancy_step(o, mh, sigma, rng);
        t += 1;
    }
    Some(t)
}

/// `tau*_K` of the occupancy chain from `o_exit = (0, .., 0, m, 0, ..)` with the
/// mass at class `K+1`.
pub fn estimate_discovery_time(params: &Parameters, k: usize, hc: &HittingConfig) -> Result<HittingTimeEstimate> {
    hc.validate()?;
    let start = discovery_start(params, k)?;
    let mh = LumpedMutationMatrix::new(params);
    let times: Vec<Option<u64>> = (0..hc.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(hc.seed, r as u64);
            let mut o = start.clone();
            time_to_discover(&mut o, k, &mh, params.sigma, hc.cap, &mut rng)
        })
        .collect();
    HittingTimeEstimate::from_samples(times, params.ell as f64, hc.cap)
}

/// Where a persistence replica starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PersistenceStart {
    /// `o_exit`: wait for `tau*_K`, then time the return to `{o(0) + ... + o(K) = 0}`.
    Exit,
    /// `(1, m-1, 0, ..., 0)`, above every entry state; times `tau(N_K)`.
    Upper,
    /// One individual in class `K`, `m-1` in class `ell`, below every entry state.
    Lower,
}

impl PersistenceStart {
    pub fn as_str(&self) -> &'static str {
        match self {
            PersistenceStart::Exit => "exit",
            PersistenceStart::Upper => "upper",
            PersistenceStart::Lower => "lower",
        }
    }
}

/// `tau_K - tau*_K` of the occupancy chain, where `tau_K` is the first entry
/// to `N_K = {o(0) + ... + o(K) = 0}` after `tau*_K`. From `Upper` or `Lower`
/// the replica starts inside `W*_K` and `tau*_K = 0`, which brackets the value
/// from `o_exit`. The cap counts all events of the replica.
pub fn estimate_persistence_time(
    params: &Parameters,
    k: usize,
    start: PersistenceStart,
    hc: &HittingConfig,
) -> Result<HittingTimeEstimate> {
    hc.validate()?;
    let (ell, m) = (params.ell, params.m);
    let mut first = discovery_start(params, k)?;
    match start {
        PersistenceStart::Exit => {}
        PersistenceStart::Upper => {
            first = OccupancyDistribution::upper_enter(ell, m);
        }
        PersistenceStart::Lower => {
            let mut c = vec![0u32; ell + 1];
            c[k] += 1;
            c[ell] += m as u32 - 1;
            first = OccupancyDistribution::new(c)?;
        }
    }
    let mh = LumpedMutationMatrix::new(params);
    let times: Vec<Option<u64>> = (0..hc.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(hc.seed, r as u64);
            let mut o = first.clone();
            let found = time_to_discover(&mut o, k, &mh, params.sigma, hc.cap, &mut rng)?;
            let mut t = 0;
            while o.n_k(k) > 0 {
                if found + t == hc.cap {
                    return None;
                }
                occupancy_step(&mut o, &mh, params.sigma, &mut rng);
                t += 1;
            }
            Some(t)
        })
        .collect();
    HittingTimeEstimate::from_samples(times, m as f64, hc.cap)
}

/// How the renewal ingredients are computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RenewalMode {
    /// Linear solves on the enumerated occupancy states and on `E_K`.
    Exact,
    /// `config` drives the two stationary runs; `cycles` counts the
    /// pre-entry segments of `O^theta` and the excursions of `Z^theta`.
    MonteCarlo { config: SimulationConfig, cycles: usize },
}

/// Ingredients of the renewal identity for `g(o) = f((o(0) + ... + o(K)) / m)`:
/// `lhs = [pre_entry + nu (1 + E tau_0) - f(0)] / (E tau* + E tau_0)`, where
/// `nu (1 + E tau_0) - f(0)` is the excursion integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalDecomposition {
    pub theta: BoundingChainKind,
    pub exact: bool,
    /// `E(tau* | O^theta_0 = o_exit)`.
    pub e_tau_star: f64,
    /// `E(tau_0 | Z^theta_0 = z^theta)`.
    pub e_tau_zero: f64,
    /// `E(sum_{s < tau*} g(O^theta_s))`.
    pub pre_entry_integral: f64,
    /// `E(sum_{n < tau_0} f(|Z^theta_n| / m))`.
    pub excursion_integral: f64,
    /// `int f d nu^theta`.
    pub nu_integral: f64,
    /// `int g d mu^theta_O`.
    pub lhs: f64,
    /// Right-hand side assembled from the ingredients.
    pub rhs: f64,
    pub residual: f64,
    /// Propagated standard error of the residual; 0 in exact mode.
    pub residual_se: f64,
}

fn ek_fraction(z: &ClassVector, m: usize) -> f64 {
    z.total() as f64 / m as f64
}

fn assemble(t_star: f64, t_zero: f64, pre: f64, nu: f64, f0: f64) -> f64 {
    (pre + nu * (1.0 + t_zero) - f0) / (t_star + t_zero)
}

/// Renewal decomposition of the invariant law of the `theta` process with
/// `K = k` tracked classes.
pub fn renewal_decomposition<F>(
    theta: BoundingChainKind,
    params: &Parameters,
    k: usize,
    mode: RenewalMode,
    f: F,
) -> Result<RenewalDecomposition>
where
    F: Fn(f64) -> f64 + Sync,
{
    let params = params.with_k(k)?;
    let maps = Arc::new(BoundingMaps::new(&params)?);
    let ek = Arc::new(EkChain::new(theta, &params)?);
    let m = params.m;
    let f0 = f(0.0);
    let g = |o: &OccupancyDistribution| f(o.n_k(k) as f64 / m as f64);
    let exit = match theta {
        BoundingChainKind::Lower => OccupancyDistribution::lower_exit(params.ell, m),
        BoundingChainKind::Upper => OccupancyDistribution::upper_exit(params.ell, m),
    };
    match mode {
        RenewalMode::Exact => {
            let (states, p) = maps.transition_matrix(theta)?;
            let mu = stationary_distribution(&p)?;
            let gs: Vec<f64> = states.iter().map(g).collect();
            let lhs = mu.iter().zip(&gs).map(|(a, b)| a * b).sum();
            let in_w: Vec<bool> = states.iter().map(OccupancyDistribution::has_master).collect();
            let ie = states.binary_search(&exit).expect("exit state enumerated");
            let t_star = hitting_times(&p, &in_w)?[ie];
            let pre = expected_sums_before_hit(&p, &in_w, &gs)?[ie];

            let mat = crate::bounds::ek_transition_matrix(theta, &params, k)?;
            let pz = mat.to_dense()?;
            let fz: Vec<f64> = mat.states.iter().map(|z| f(ek_fraction(z, m))).collect();
            let out: Vec<bool> = mat.states.iter().map(|z| z.get(0) == 0).collect();
            let iz = mat.index_of(ek.entry_point()).expect("entry point inside E_K");
            let t_zero = hitting_times(&pz, &out)?[iz];
            let excursion = expected_sums_before_hit(&pz, &out, &fz)?[iz];
            let nu_law = stationary_distribution(&pz)?;
            let nu = nu_law.iter().zip(&fz).map(|(a, b)| a * b).sum();
            let rhs = assemble(t_star, t_zero, pre, nu, f0);
            Ok(RenewalDecomposition {
                theta,
                exact: true,
                e_tau_star: t_star,
                e_tau_zero: t_zero,
                pre_entry_integral: pre,
                excursion_integral: excursion,
                nu_integral: nu,
                lhs,
                rhs,
                residual: lhs - rhs,
                residual_se: 0.0,
            })
        }
        RenewalMode::MonteCarlo { config, cycles } => {
            config.validate()?;
            if cycles < 2 {
                return invalid("need at least two cycles");
            }
            let occ = BoundingChain { theta, state: exit.clone(), maps: maps.clone() };
            let lhs_est = estimate_equilibrium(&occ, |c| vec![g(&c.state)], &config)?;

            let segments: Vec<(f64, f64)> = (0..cycles)
                .into_par_iter()
                .map(|i| {
                    let mut rng = replica_rng(config.seed, CYCLE_STREAM + i as u64);
                    let mut c = occ.clone();
                    let (mut t, mut acc) = (0.0, 0.0);
                    while !c.state.has_master() {
                        acc += g(&c.state);
                        c.step(&mut rng);
                        t += 1.0;
                    }
                    (t, acc)
                })
                .collect();
            let excursions: Vec<(f64, f64)> = (0..cycles)
                .into_par_iter()
                .map(|i| {
                    let mut rng = replica_rng(config.seed, EXCURSION_STREAM + i as u64);
                    let mut s = EkState { chain: ek.clone(), z: ek.entry_point().clone() };
                    let (mut t, mut acc) = (0.0, 0.0);
                    while s.z.get(0) > 0 {
                        acc += f(ek_fraction(&s.z, m));
                        s.step(&mut rng);
                        t += 1.0;
                    }
                    (t, acc)
                })
                .collect();
            let zrun = EkState { chain: ek.clone(), z: ClassVector::zero(k) };
            let zcfg = SimulationConfig { seed: config.seed.wrapping_add(EK_STREAM), ..config };
            let nu_est = estimate_equilibrium(&zrun, |s| vec![f(ek_fraction(&s.z, m))], &zcfg)?;

            let n = cycles as f64;
            let ts: Vec<f64> = segments.iter().map(|s| s.0).collect();
            let pres: Vec<f64> = segments.iter().map(|s| s.1).collect();
            let t0s: Vec<f64> = excursions.iter().map(|s| s.0).collect();
            let excs: Vec<f64> = excursions.iter().map(|s| s.1).collect();
            let (t_star, pre, t_zero) = (mean(&ts), mean(&pres), mean(&t0s));
            let nu = nu_est.mean[0];
            let rhs = assemble(t_star, t_zero, pre, nu, f0);

            let d = t_star + t_zero;
            let num = pre + nu * (1.0 + t_zero) - f0;
            let (g_pre, g_ts, g_nu, g_t0) = (1.0 / d, -num / (d * d), (1.0 + t_zero) / d, nu / d - num / (d * d));
            let cov_pre_ts = pres.iter().zip(&ts).map(|(a, b)| (a - pre) * (b - t_star)).sum::<f64>() / (n - 1.0);
            let var_rhs = (g_pre * g_pre * sample_variance(&pres)
                + g_ts * g_ts * sample_variance(&ts)
                + 2.0 * g_pre * g_ts * cov_pre_ts
                + g_t0 * g_t0 * sample_variance(&t0s))
                / n
                + g_nu * g_nu * nu_est.standard_error[0].powi(2);
            let lhs = lhs_est.mean[0];
            Ok(RenewalDecomposition {
                theta,
                exact: false,
                e_tau_star: t_star,
                e_tau_zero: t_zero,
                pre_entry_integral: pre,
                excursion_integral: mean(&excs),
                nu_integral: nu,
                lhs,
                rhs,
                residual: lhs - rhs,
                residual_se: (lhs_est.standard_error[0].powi(2) + var_rhs).sqrt(),
            })
        }
    }
}
