//! The quasispecies law `Q(sigma, a)`, the threshold function `phi(a)` and
//! the phase classification on the `(a, alpha)` plane.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Parameters;
use crate::mutation::{ClassKernel, LumpedMutationMatrix};

fn check_regime(sigma: f64, a: f64) -> Result<()> {
    if !(sigma > 1.0) || !(a >= 0.0) || !a.is_finite() {
        return invalid(format!("need sigma > 1 and a >= 0, got sigma={sigma} a={a}"));
    }
    if sigma * (-a).exp() <= 1.0 {
        return Err(Error::Regime(format!(
            "sigma e^-a = {} <= 1: quasispecies distribution undefined",
            sigma * (-a).exp()
        )));
    }
    Ok(())
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// `rho*_0 = (sigma e^-a - 1) / (sigma - 1)`.
pub fn rho_star_0(sigma: f64, a: f64) -> Result<f64> {
    check_regime(sigma, a)?;
    Ok((sigma * (-a).exp() - 1.0) / (sigma - 1.0))
}

/// Closed form `(sigma e^-a - 1) (a^k / k!) sum_{i>=1} i^k / sigma^i`.
///
/// The series stops once the geometric remainder bound falls below
/// `tail_eps` times the partial sum, so `tail_eps` is a relative accuracy.
pub fn rho_star_closed(sigma: f64, a: f64, k: usize, tail_eps: f64) -> Result<f64> {
    check_regime(sigma, a)?;
    if !(tail_eps > 0.0) {
        return invalid("tail_eps must be positive");
    }
    let c = sigma * (-a).exp() - 1.0;
    if k == 0 {
        return Ok(c / (sigma - 1.0));
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    let ln_sigma = sigma.ln();
    let kf = k as f64;
    // Work relative to the largest term to stay in range.
    let ln_term = |i: f64| kf * i.ln() - i * ln_sigma;
    let i_peak = (kf / ln_sigma).max(1.0);
    let shift = ln_term(i_peak.floor().max(1.0)).max(ln_term(i_peak.ceil()));
    let mut sum = 0.0f64;
    let mut i = 1usize;
    loop {
        let fi = i as f64;
        sum += (ln_term(fi) - shift).exp();
        let ratio = (1.0 + 1.0 / fi).powf(kf) / sigma;
        if ratio < 1.0 {
            let next = (ln_term(fi + 1.0) - shift).exp();
            let bound = next / (1.0 - ratio);
            if bound <= tail_eps * sum {
                break;
            }
        }
        i += 1;
        if i > 10_000_000 {
            return Err(Error::Numeric("closed-form series did not converge".into()));
        }
    }
    let ln_pref = kf * a.ln() - ln_factorial(k) + shift;
    Ok(c * (ln_pref + sum.ln()).exp())
}

/// `e^-a / ((sigma-1) rho*_0 + 1 - e^-a)`, which equals `1 / (sigma - 1)`.
pub fn recurrence_prefactor(sigma: f64, a: f64) -> Result<f64> {
    let r0 = rho_star_0(sigma, a)?;
    let ea = (-a).exp();
    Ok(ea / ((sigma - 1.0) * r0 + 1.0 - ea))
}

/// `(rho*_0, ..., rho*_{k_max})` from the recurrence.
pub fn rho_star_recurrence(sigma: f64, a: f64, k_max: usize) -> Result<Vec<f64>> {
    let r0 = rho_star_0(sigma, a)?;
    let pref = recurrence_prefactor(sigma, a)?;
    // a^n / n! for n = 0..=k_max
    let mut pw = Vec::with_capacity(k_max + 1);
    let mut t = 1.0f64;
    for n in 0..=k_max {
        if n > 0 {
            t *= a / n as f64;
        }
        pw.push(t);
    }
    let mut rho = Vec::with_capacity(k_max + 1);
    rho.push(r0);
    for k in 1..=k_max {
        let mut s = sigma * pw[k] * r0;
        for l in 1..k {
            s += pw[k - l] * rho[l];
        }
        rho.push(pref * s);
    }
    Ok(rho)
}

/// `f(x) = (sigma e^-a - 1) e^{a x} / (sigma - e^{a x})`.
pub fn generating_function(sigma: f64, a: f64, x: f64) -> Result<f64> {
    check_regime(sigma, a)?;
    let e = (a * x).exp();
    if e >= sigma {
        return invalid(format!("x = {x} is at or beyond the pole ln(sigma)/a"));
    }
    Ok((sigma * (-a).exp() - 1.0) * e / (sigma - e))
}

fn generating_function_complex(sigma: f64, a: f64, z: Complex64) -> Complex64 {
    let e = (z * a).exp();
    e * (sigma * (-a).exp() - 1.0) / (Complex64::new(sigma, 0.0) - e)
}

/// Power-series coefficients of `f` around 0, extracted by a discrete
/// Cauchy integral on a circle inside the radius of convergence.
pub fn generating_function_coefficients(sigma: f64, a: f64, k_max: usize) -> Result<Vec<f64>> {
    check_regime(sigma, a)?;
    if a == 0.0 {
        let mut v = vec![0.0; k_max + 1];
        v[0] = 1.0;
        return Ok(v);
    }
    let radius = 0.8 * sigma.ln() / a;
    let n = 1024usize;
    let samples: Vec<Complex64> = (0..n)
        .map(|j| {
            let th = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            generating_function_complex(sigma, a, Complex64::from_polar(radius, th))
        })
        .collect();
    Ok((0..=k_max)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, f) in samples.iter().enumerate() {
                let th = -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
                acc += f * Complex64::from_polar(1.0, th);
            }
            acc.re / n as f64 / radius.powi(k as i32)
        })
        .collect())
}

/// Mean and variance of `Q(sigma, a)`.
pub fn q_moments(sigma: f64, a: f64) -> Result<(f64, f64)> {
    check_regime(sigma, a)?;
    let s = sigma * (-a).exp();
    let mean = s * a / (s - 1.0);
    let var = s * a * (s + a - 1.0) / ((s - 1.0) * (s - 1.0));
    Ok((mean, var))
}

/// Width of the band around `sigma (1 - e^-a) = 1` handled by series.
const PHI_SERIES_BAND: f64 = 1e-6;

/// Threshold function `phi(a)`; zero for `a >= ln sigma`.
pub fn phi_threshold(sigma: f64, a: f64) -> f64 {
    if !(sigma > 1.0) || a >= sigma.ln() {
        return 0.0;
    }
    if a <= 0.0 {
        return sigma.ln();
    }
    let x = -sigma * (-a).exp_m1();
    let t = x - 1.0;
    if t.abs() < PHI_SERIES_BAND {
        let s = sigma - 1.0;
        let l = s.ln();
        let c0 = -(1.0 - l - 1.0 / s);
        let c1 = -(0.5 - 0.5 / (s * s));
        let c2 = 1.0 / 6.0 + 1.0 / (3.0 * s * s * s);
        return (c0 + t * (c1 + t * c2)).max(0.0);
    }
    let num = x * (x / (sigma - 1.0)).ln() + (sigma - x).ln();
    (num / (1.0 - x)).max(0.0)
}

/// `ln kappa / phi(a)`, infinite when `phi(a) = 0`.
pub fn critical_alpha(sigma: f64, a: f64, kappa: usize) -> f64 {
    let phi = phi_threshold(sigma, a);
    if phi > 0.0 {
        (kappa as f64).ln() / phi
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Disordered,
    Quasispecies,
    Critical,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Disordered => "disordered",
            Regime::Quasispecies => "quasispecies",
            Regime::Critical => "critical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub a: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub kappa: usize,
    pub regime: Regime,
}

/// Regime from the sign of `alpha phi(a) - ln kappa`.
pub fn classify_phase(a: f64, alpha: f64, sigma: f64, kappa: usize) -> PhasePoint {
    let phi = phi_threshold(sigma, a);
    let lk = (kappa as f64).ln();
    let regime = if phi == 0.0 {
        Regime::Disordered
    } else if alpha.is_infinite() {
        Regime::Quasispecies
    } else {
        let d = alpha * phi - lk;
        if d.abs() <= 1e-12 * lk.max(1.0) {
            Regime::Critical
        } else if d > 0.0 {
            Regime::Quasispecies
        } else {
            Regime::Disordered
        }
    };
    PhasePoint { a, alpha, sigma, kappa, regime }
}

/// Truncated quasispecies weights with the exact missing mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasispeciesDistribution {
    pub sigma: f64,
    pub a: f64,
    pub weights: Vec<f64>,
    pub tail_bound: f64,
}

impl QuasispeciesDistribution {
    pub fn new(sigma: f64, a: f64, k_max: usize) -> Result<Self> {
        let weights = rho_star_recurrence(sigma, a, k_max)?;
        let s: f64 = weights.iter().sum();
        Ok(QuasispeciesDistribution { sigma, a, weights, tail_bound: (1.0 - s).max(0.0) })
    }
}

/// Rows `(a, rho*_0..rho*_classes)` on an even grid of `points` values in
/// `(0, a_max]`; weights are 0 past the threshold `a >= ln sigma`.
pub fn quasispecies_curve(sigma: f64, a_max: f64, classes: usize, points: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    if !(sigma > 1.0) || !(a_max > 0.0) || points == 0 {
        return invalid("need sigma > 1, a_max > 0 and at least one point");
    }
    (1..=points)
        .map(|i| {
            let a = a_max * i as f64 / points as f64;
            let w = if sigma * (-a).exp() > 1.0 {
                (0..=classes)
                    .map(|k| rho_star_closed(sigma, a, k, 1e-15))
                    .collect::<Result<Vec<_>>>()?
            } else {
                vec![0.0; classes + 1]
            };
            Ok((a, w))
        })
        .collect()
}

/// Class law of the infinite-population quasispecies at finite `ell` and `q`:
/// the normalised left Perron vector of `diag(A_H) M_H`, by power iteration.
pub fn finite_quasispecies(params: &Parameters) -> Result<Vec<f64>> {
    let mh = LumpedMutationMatrix::new(params);
    let n = params.ell + 1;
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    for _ in 0..1_000_000 {
        let mut y = vec![0.0; n];
        for (h, &xh) in x.iter().enumerate() {
            let w = xh * params.fitness(h);
            if w == 0.0 {
                continue;
            }
            for (c, &p) in mh.row(h).iter().enumerate() {
                y[c] += w * p;
            }
        }
        let z: f64 = y.iter().sum();
        y.iter_mut().for_each(|v| *v /= z);
        let diff = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = y;
        if diff < 1e-15 {
            return Ok(x);
        }
    }
    Err(Error::Numeric("power iteration did not converge".into()))
}
