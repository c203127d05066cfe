//! Birth and death chains on `{0, ..., m}`: products `pi(i)`, mean hitting
//! times, exit laws, the limiting ratio functions and their integrals, and
//! the binomial class law.
//!
//! Hitting times are evaluated from the detailed-balance weights
//! `w(j+1) = w(j) delta_j / gamma_{j+1}`. The mean time to climb from `i`
//! to `i+1` is `sum_{j0 <= j <= i} w(j) / (w(i) delta_i)`, where `j0` is the
//! nearest reflecting point below; the descent is mirrored.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mutation::LnFactorial;

const RATE_SLACK: f64 = 1e-12;

/// Rates `delta_0..delta_{m-1}` (up) and `gamma_1..gamma_m` (down).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathSpec {
    m: usize,
    delta: Vec<f64>,
    gamma: Vec<f64>,
}

impl BirthDeathSpec {
    /// `delta[i] = delta_i` for `i < m`, `gamma[i-1] = gamma_i` for `1 <= i <= m`.
    pub fn new(delta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let m = delta.len();
        if m == 0 {
            return invalid("birth and death chain needs m >= 1");
        }
        if gamma.len() != m {
            return invalid(format!("expected {m} down rates, got {}", gamma.len()));
        }
        if let Some(x) = delta.iter().chain(&gamma).find(|x| !(x.is_finite() && **x >= 0.0)) {
            return invalid(format!("rates must be finite and non-negative, got {x}"));
        }
        let spec = BirthDeathSpec { m, delta, gamma };
        for i in 0..=m {
            let s = spec.delta(i) + spec.gamma(i);
            if s > 1.0 + RATE_SLACK {
                return invalid(format!("delta_{i} + gamma_{i} = {s} exceeds 1"));
            }
        }
        Ok(spec)
    }

    /// Constant rates on `{0, ..., m}`.
    pub fn constant(m: usize, delta: f64, gamma: f64) -> Result<Self> {
        Self::new(vec![delta; m], vec![gamma; m])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `delta_i`, with `delta_m = 0`.
    pub fn delta(&self, i: usize) -> f64 {
        if i < self.m {
            self.delta[i]
        } else {
            0.0
        }
    }

    /// `gamma_i`, with `gamma_0 = 0`.
    pub fn gamma(&self, i: usize) -> f64 {
        if i >= 1 && i <= self.m {
            self.gamma[i - 1]
        } else {
            0.0
        }
    }

    pub fn deltas(&self) -> &[f64] {
        &self.delta
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }

    /// Relabels `i -> m - i`, swapping the roles of the two rate arrays.
    pub fn mirrored(&self) -> Self {
        let delta = (0..self.m).map(|i| self.gamma(self.m - i)).collect();
        let gamma = (1..=self.m).map(|i| self.delta(self.m - i)).collect();
        BirthDeathSpec { m: self.m, delta, gamma }
    }

    /// Dense `(m+1) x (m+1)` transition matrix.
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let n = self.m + 1;
        let mut p = DMatrix::zeros(n, n);
        for i in 0..n {
            let (d, g) = (self.delta(i), self.gamma(i));
            if i + 1 < n {
                p[(i, i + 1)] = d;
            }
            if i > 0 {
                p[(i, i - 1)] = g;
            }
            p[(i, i)] = 1.0 - d - g;
        }
        p
    }

    /// State after one step driven by the uniform `u`.
    pub fn step(&self, i: usize, u: f64) -> usize {
        if u < self.gamma(i) {
            i - 1
        } else if u > 1.0 - self.delta(i) {
            i + 1
        } else {
            i
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln pi(i)` for `i = 0..m-1`, `pi(i) = delta_1...delta_i / (gamma_1...gamma_i)`.
pub fn pi_products_log(spec: &BirthDeathSpec) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(spec.m);
    let mut acc = 0.0;
    out.push(acc);
    for i in 1..spec.m {
        let g = spec.gamma(i);
        if g == 0.0 {
            return Err(Error::SingularChain { index: i });
        }
        acc += spec.delta(i).ln() - g.ln();
        out.push(acc);
    }
    Ok(out)
}

fn check_pair(spec: &BirthDeathSpec, a: usize, b: usize) -> Result<()> {
    if a > b || b > spec.m {
        return invalid(format!("need a <= b <= m, got a={a} b={b} m={}", spec.m));
    }
    Ok(())
}

/// `ln E(tau_b | Z_0 = a)` for `a < b`; `-inf` when `a == b`.
pub fn log_mean_hitting_time_up(spec: &BirthDeathSpec, a: usize, b: usize) -> Result<f64> {
    check_pair(spec, a, b)?;
    if a == b {
        return Ok(f64::NEG_INFINITY);
    }
    let j0 = (0..=a).rev().find(|&j| j == 0 || spec.gamma(j) == 0.0).unwrap_or(0);
    // ln S_i, S_i = sum_{j0 <= j <= i} w(j) / w(i)
    let mut ln_s = 0.0;
    let mut total = f64::NEG_INFINITY;
    for i in j0..b {
        let d = spec.delta(i);
        if d == 0.0 {
            return Err(Error::Unreachable(format!("delta_{i} = 0 blocks the way up to {b}")));
        }
        if i > j0 {
            let ratio = spec.gamma(i).ln() - spec.delta(i - 1).ln();
            ln_s = log_add(0.0, ln_s + ratio);
        }
        if i >= a {
            total = log_add(total, ln_s - d.ln());
        }
    }
    Ok(total)
}

/// `E(tau_b | Z_0 = a)` for `a <= b`.
pub fn mean_hitting_time_up(spec: &BirthDeathSpec, a: usize, b: usize) -> Result<f64> {
    Ok(log_mean_hitting_time_up(spec, a, b)?.exp())
}

/// `ln E(tau_a | Z_0 = b)` for `a < b`; `-inf` when `a == b`.
pub fn log_mean_hitting_time_down(spec: &BirthDeathSpec, a: usize, b: usize) -> Result<f64> {
    check_pair(spec, a, b)?;
    if a == b {
        return Ok(f64::NEG_INFINITY);
    }
    let m = spec.m;
    log_mean_hitting_time_up(&spec.mirrored(), m - b, m - a)
}

/// `E(tau_a | Z_0 = b)` for `a <= b`.
pub fn mean_hitting_time_down(spec: &BirthDeathSpec, a: usize, b: usize) -> Result<f64> {
    Ok(log_mean_hitting_time_down(spec, a, b)?.exp())
}

/// `(P(exit at a), P(exit at b))` for the chain started at `i`, `a < i < b`.
pub fn exit_point_law(spec: &BirthDeathSpec, a: usize, i: usize, b: usize) -> Result<(f64, f64)> {
    if !(a < i && i < b && b <= spec.m) {
        return invalid(format!("need a < i < b <= m, got a={a} i={i} b={b} m={}", spec.m));
    }
    // ln(1/pi(j)) relative to pi(a)
    let mut inv = Vec::with_capacity(b - a);
    let mut acc = 0.0;
    inv.push(acc);
    for j in a + 1..b {
        acc += spec.gamma(j).ln() - spec.delta(j).ln();
        inv.push(acc);
    }
    let lse = |xs: &[f64]| xs.iter().fold(f64::NEG_INFINITY, |s, &x| log_add(s, x));
    let top = lse(&inv[i - a..]);
    let bottom = lse(&inv);
    let pa = (top - bottom).exp();
    if !pa.is_finite() {
        return Err(Error::Numeric(format!("exit law undefined on [{a}, {b}]")));
    }
    let pb = (lse(&inv[..i - a]) - bottom).exp();
    Ok((pa, pb))
}

/// `phi(beta, eps, rho)`: limiting `delta_i / gamma_i` of the master-class chain at `i = rho m`.
pub fn phi_ratio(sigma: f64, beta: f64, eps: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("phi_ratio needs rho in (0, 1), got {rho}")));
    }
    let num = (1.0 - rho) * (sigma * beta * rho + (1.0 - rho) * eps);
    let den = rho * (sigma * (1.0 - beta) * rho + (1.0 - rho) * (1.0 - eps));
    Ok(num / den)
}

/// Positive root `rho(beta, eps)` of `phi(beta, eps, rho) = 1`.
pub fn rho_root(sigma: f64, beta: f64, eps: f64) -> f64 {
    let b = sigma * beta - 1.0 - eps;
    let disc = b * b + 4.0 * eps * (sigma - 1.0);
    if b >= 0.0 {
        (b + disc.sqrt()) / (2.0 * (sigma - 1.0))
    } else {
        // rationalised form, stable when b < 0 and eps is small
        2.0 * eps / (disc.sqrt() - b)
    }
}

/// `phi(beta, eps, rho, eta)` for class `k = rho.len()`; `beta` holds `beta_0..beta_k`.
pub fn phi_general(sigma: f64, beta: &[f64], eps: f64, rho: &[f64], eta: f64) -> Result<f64> {
    let k = rho.len();
    if beta.len() != k + 1 {
        return invalid(format!("expected {} beta values, got {}", k + 1, beta.len()));
    }
    if k == 0 {
        return phi_ratio(sigma, beta[0], eps, eta);
    }
    if !(eta > 0.0 && eta < 1.0) {
        return invalid(format!("eta must be in (0, 1), got {eta}"));
    }
    let rest = 1.0 - rho.iter().sum::<f64>() - eta;
    let mut num = sigma * rho[0] * beta[0] + eta * beta[k] + rest * eps;
    let mut den = sigma * rho[0] * (1.0 - beta[0]) + eta * (1.0 - beta[k]) + rest * (1.0 - eps);
    for l in 1..k {
        num += rho[l] * beta[l];
        den += rho[l] * (1.0 - beta[l]);
    }
    Ok((1.0 - eta) * num / (eta * den))
}

/// Root in `eta` of `phi(beta, eps, rho, eta) = 1`. For `k = 0` this is `rho(beta_0, eps)`.
pub fn eta_root(sigma: f64, beta: &[f64], eps: f64, rho: &[f64]) -> Result<f64> {
    let k = rho.len();
    if beta.len() != k + 1 {
        return invalid(format!("expected {} beta values, got {}", k + 1, beta.len()));
    }
    if k == 0 {
        return Ok(rho_root(sigma, beta[0], eps));
    }
    let den = (sigma - 1.0) * rho[0] + 1.0 - beta[k] + eps;
    if !(den > 0.0) {
        return Err(Error::Numeric(format!("eta_root denominator {den} is not positive")));
    }
    let mut num = sigma * rho[0] * beta[0] + (1.0 - rho.iter().sum::<f64>()) * eps;
    for l in 1..k {
        num += rho[l] * beta[l];
    }
    Ok(num / den)
}

/// Limiting mutation weights `beta_l = e^{-a} a^{k-l} / (k-l)!`, `l = 0..=k`.
pub fn limit_betas(a: f64, k: usize) -> Vec<f64> {
    (0..=k).map(|l| crate::mutation::limit_entry(a, l, k)).collect()
}

/// Switch point `y*` of the sign of `d delta / d rho_0` in `i / m`.
/// `None` when the coefficient of `i / m` vanishes.
pub fn switch_point(sigma: f64, beta: &[f64], eps: f64, rho_rest: &[f64]) -> Option<f64> {
    let k = beta.len() - 1;
    let slope = (sigma - 1.0) * (beta[k] - eps);
    if slope == 0.0 {
        return None;
    }
    let mut c = sigma * (beta[0] - eps);
    for (l, r) in rho_rest.iter().enumerate() {
        c -= (sigma - 1.0) * r * (beta[l + 1] - eps);
    }
    Some(c / slope)
}

fn de_integral(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if hi <= lo {
        return Ok(0.0);
    }
    let out = quadrature::double_exponential::integrate(f, lo, hi, tol);
    if !out.integral.is_finite() || out.error_estimate > tol.max(1e-12) * 10.0 {
        return Err(Error::Numeric(format!(
            "quadrature did not converge: estimate {:e} for tolerance {tol:e}",
            out.error_estimate
        )));
    }
    Ok(out.integral)
}

/// `int_0^rho ln phi(e^{-a}, 0, s) ds`, absolute tolerance `1e-8`.
pub fn ld_integral(a: f64, sigma: f64, rho: f64) -> Result<f64> {
    ld_integral_with(sigma, (-a).exp(), 0.0, rho)
}

/// `int_0^rho ln phi(beta, eps, s) ds`; the endpoint logarithms are
/// absorbed by the double exponential rule.
pub fn ld_integral_with(sigma: f64, beta: f64, eps: f64, rho: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return invalid(format!("rho must be in [0, 1], got {rho}"));
    }
    if eps == 0.0 {
        // the factor s cancels: phi = (1-s) sigma beta / (sigma (1-beta) s + 1 - s)
        let lsb = (sigma * beta).ln();
        let f = |s: f64| (1.0 - s).ln() + lsb - (sigma * (1.0 - beta) * s + 1.0 - s).ln();
        return de_integral(f, 0.0, rho, 1e-8);
    }
    let f = |s: f64| phi_ratio(sigma, beta, eps, s).map(f64::ln).unwrap_or(0.0);
    de_integral(f, 0.0, rho, 1e-8)
}

/// Large-deviation profiles of the master-class chain and of the
/// conditioned class-`k` chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LdProfile {
    pub sigma: f64,
    pub a: f64,
}

impl LdProfile {
    pub fn new(sigma: f64, a: f64) -> Self {
        LdProfile { sigma, a }
    }

    /// `rho -> int_0^rho ln phi(e^{-a}, 0, s) ds`.
    pub fn initial(&self, rho: f64) -> Result<f64> {
        ld_integral(self.a, self.sigma, rho)
    }

    /// `psi(eta)` for class `k = rho_star.len()` with window half-width `h`:
    /// the ratio evaluated at `rho_l = rho*_l - h` (`l >= 1`) and at the
    /// `rho_0` corner selected by the sign of `d delta / d rho_0`.
    pub fn psi(&self, rho_star: &[f64], h: f64, eta: f64) -> Result<f64> {
        let k = rho_star.len();
        let beta = limit_betas(self.a, k);
        let (lo, hi) = window_rows(rho_star, h);
        let ys = switch_point(self.sigma, &beta, 0.0, &lo[1..]).unwrap_or(f64::INFINITY);
        // below the switch delta grows with rho_0, so its minimum sits at the low corner
        let rho = if eta <= ys { &lo } else { &hi };
        phi_general(self.sigma, &beta, 0.0, rho, eta)
    }

    /// `eta -> int_0^eta ln psi`.
    pub fn conditioned(&self, rho_star: &[f64], h: f64, eta: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&eta) {
            return invalid(format!("eta must be in [0, 1), got {eta}"));
        }
        let f = |s: f64| self.psi(rho_star, h, s).map(f64::ln).unwrap_or(0.0);
        de_integral(f, 0.0, eta, 1e-8)
    }

    /// Window edges `(rho^-, rho^+)`: extreme roots over the two `rho_0` corners.
    pub fn window_edges(&self, rho_star: &[f64], h: f64) -> Result<(f64, f64)> {
        let beta = limit_betas(self.a, rho_star.len());
        edges(self.sigma, &beta, 0.0, rho_star, h)
    }
}

/// `(rho*_0 - h, rho*_l - h)` and `(rho*_0 + h, rho*_l - h)`, clamped to `[0, 1]`.
fn window_rows(rho_star: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let lo: Vec<f64> = rho_star.iter().map(|r| (r - h).max(0.0)).collect();
    let mut hi = lo.clone();
    if let Some(x) = hi.first_mut() {
        *x = (rho_star[0] + h).min(1.0);
    }
    (lo, hi)
}

/// Extreme roots of `eta(beta, eps, .)` at the corners `(rho*_0 +- h, rho*_l - h)`.
pub fn edges(sigma: f64, beta: &[f64], eps: f64, rho_star: &[f64], h: f64) -> Result<(f64, f64)> {
    let (lo, hi) = window_rows(rho_star, h);
    let a = eta_root(sigma, beta, eps, &lo)?;
    let b = eta_root(sigma, beta, eps, &hi)?;
    Ok((a.min(b), a.max(b)))
}

/// `B(b) = C(ell, b) (1 - 1/kappa)^b kappa^{-(ell - b)}`.
pub fn binomial_class_mass(ell: usize, kappa: usize, b: usize) -> f64 {
    let lf = LnFactorial::new(ell);
    ln_binomial_class_mass(&lf, ell, kappa, b).exp()
}

fn ln_binomial_class_mass(lf: &LnFactorial, ell: usize, kappa: usize, b: usize) -> f64 {
    let k = kappa as f64;
    lf.ln_choose(ell, b) + b as f64 * (1.0 - 1.0 / k).ln() - (ell - b) as f64 * k.ln()
}

/// Bounds `(1/kappa^ell)(ell/2b)^b <= B(b) <= ell^b / kappa^(ell-b)` with the exact value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialBounds {
    pub ln_lower: f64,
    pub ln_upper: f64,
    pub ln_exact: f64,
}

impl BinomialBounds {
    pub fn lower(&self) -> f64 {
        self.ln_lower.exp()
    }
    pub fn upper(&self) -> f64 {
        self.ln_upper.exp()
    }
    pub fn exact(&self) -> f64 {
        self.ln_exact.exp()
    }
}

pub fn binomial_bounds(ell: usize, kappa: usize, b: usize) -> Result<BinomialBounds> {
    if 2 * b > ell {
        return invalid(format!("bounds need b <= ell/2, got b={b} ell={ell}"));
    }
    if kappa < 2 {
        return invalid("kappa must be >= 2");
    }
    let lf = LnFactorial::new(ell);
    let (l, k, bf) = (ell as f64, kappa as f64, b as f64);
    let ln_lower = -l * k.ln() + if b == 0 { 0.0 } else { bf * (l / (2.0 * bf)).ln() };
    let ln_upper = bf * l.ln() - (l - bf) * k.ln();
    Ok(BinomialBounds { ln_lower, ln_upper, ln_exact: ln_binomial_class_mass(&lf, ell, kappa, b) })
}

/// `(1/ell) ln B(floor(rho ell))`.
pub fn binomial_rate(ell: usize, kappa: usize, rho: f64) -> f64 {
    let lf = LnFactorial::new(ell);
    let b = (rho * ell as f64).floor() as usize;
    ln_binomial_class_mass(&lf, ell, kappa, b) / ell as f64
}

/// Limit of `(1/ell) ln B(floor(rho ell))`.
pub fn binomial_rate_limit(kappa: usize, rho: f64) -> f64 {
    let k = kappa as f64;
    let xlnx = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * y.ln() };
    -xlnx(1.0 - rho, k * (1.0 - rho)) - xlnx(rho, k * rho / (k - 1.0))
}
