//! Per-locus mutation kernel, the lumped kernel `M_H` on Hamming classes,
//! the modified kernel `M_H^{K+1}`, and the sampling maps built on them.
//!
//! The per-locus flip probability `p` in the lumped formula is tied to the
//! model's `q` by `p = kappa q / (kappa - 1)`: then `p (1 - 1/kappa) = q`
//! (a correct locus mutates away) and `p / kappa = q / (kappa - 1)` (a wrong
//! locus mutates back to the master symbol), and `M_H` is the class-to-class
//! law induced by `M(u, v)`.

use crate::error::{invalid, Error, Result};
use crate::model::Parameters;

/// Table of `ln n!` for `n = 0..=n_max`.
#[derive(Debug, Clone)]
pub struct LnFactorial {
    table: Vec<f64>,
}

impl LnFactorial {
    pub fn new(n_max: usize) -> Self {
        let mut table = Vec::with_capacity(n_max + 1);
        table.push(0.0);
        let mut acc = 0.0f64;
        for i in 1..=n_max {
            acc += (i as f64).ln();
            table.push(acc);
        }
        LnFactorial { table }
    }

    pub fn ln_fact(&self, n: usize) -> f64 {
        self.table[n]
    }

    pub fn ln_choose(&self, n: usize, k: usize) -> f64 {
        if k > n {
            f64::NEG_INFINITY
        } else {
            self.table[n] - self.table[k] - self.table[n - k]
        }
    }
}

/// `P(Bin(n, p) = k)` for all k, via log-space terms.
pub(crate) fn binomial_pmf(lf: &LnFactorial, n: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    (0..=n)
        .map(|k| (lf.ln_choose(n, k) + k as f64 * lp + (n - k) as f64 * lq).exp())
        .collect()
}

/// Terms below this are dropped from the convolution; the dropped mass is
/// far below the 1e-12 row-sum tolerance.
const PMF_CUTOFF: f64 = 1e-30;

fn support(v: &[f64]) -> (usize, usize) {
    let lo = v.iter().position(|&x| x > PMF_CUTOFF).unwrap_or(0);
    let hi = v.iter().rposition(|&x| x > PMF_CUTOFF).unwrap_or(0);
    (lo, hi)
}

/// Row `b` of `M_H`: law of `b - L + U` with `U ~ Bin(ell - b, q)` and
/// `L ~ Bin(b, q / (kappa - 1))` independent.
pub fn lumped_row(lf: &LnFactorial, ell: usize, q: f64, kappa: usize, b: usize) -> Vec<f64> {
    let up = binomial_pmf(lf, ell - b, q);
    let down = binomial_pmf(lf, b, q / (kappa as f64 - 1.0));
    let (ulo, uhi) = support(&up);
    let (dlo, dhi) = support(&down);
    let mut row = vec![0.0; ell + 1];
    for l in dlo..=dhi {
        let pl = down[l];
        if pl <= PMF_CUTOFF {
            continue;
        }
        for k in ulo..=uhi {
            row[b + k - l] += pl * up[k];
        }
    }
    row
}

/// Read access shared by `M_H` and `M_H^{K+1}`.
pub trait ClassKernel {
    fn ell(&self) -> usize;
    fn row(&self, b: usize) -> &[f64];
    /// Cumulative sums of row `b`.
    fn cdf(&self, b: usize) -> &[f64];
    fn entry(&self, b: usize, c: usize) -> f64 {
        self.row(b)[c]
    }
}

/// `M_H(b, c)`, dense, row-major.
#[derive(Debug, Clone)]
pub struct LumpedMutationMatrix {
    ell: usize,
    q: f64,
    kappa: usize,
    entries: Vec<f64>,
    cdf: Vec<f64>,
}

impl LumpedMutationMatrix {
    pub fn new(params: &Parameters) -> Self {
        Self::from_raw(params.ell, params.q, params.kappa)
    }

    pub fn from_raw(ell: usize, q: f64, kappa: usize) -> Self {
        let lf = LnFactorial::new(ell);
        let mut entries = Vec::with_capacity((ell + 1) * (ell + 1));
        for b in 0..=ell {
            entries.extend(lumped_row(&lf, ell, q, kappa, b));
        }
        let cdf = cumulative_rows(&entries, ell + 1);
        LumpedMutationMatrix { ell, q, kappa, entries, cdf }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// Rows as `(b, c, prob)` triples, row-major.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.ell + 1;
        self.entries.iter().enumerate().map(move |(idx, &p)| (idx / n, idx % n, p))
    }
}

impl ClassKernel for LumpedMutationMatrix {
    fn ell(&self) -> usize {
        self.ell
    }
    fn row(&self, b: usize) -> &[f64] {
        let n = self.ell + 1;
        &self.entries[b * n..(b + 1) * n]
    }
    fn cdf(&self, b: usize) -> &[f64] {
        let n = self.ell + 1;
        &self.cdf[b * n..(b + 1) * n]
    }
}

fn cumulative_rows(entries: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(entries.len());
    for row in entries.chunks(n) {
        let start = out.len();
        let mut acc = 0.0;
        out.extend(row.iter().map(|&p| {
            acc += p;
            acc
        }));
        // pin the top of the cdf: u = 1 lands on the last atom
        if let Some(last) = row.iter().rposition(|&p| p > 0.0) {
            out[start + last..].iter_mut().for_each(|x| *x = 1.0);
        }
    }
    out
}

/// Computes `M_H` for the given parameters.
pub fn lumped_mutation_matrix(params: &Parameters) -> LumpedMutationMatrix {
    LumpedMutationMatrix::new(params)
}

/// `M_H^{K+1}(b, c)`.
#[derive(Debug, Clone)]
pub struct ModifiedMutationMatrix {
    ell: usize,
    k: usize,
    entries: Vec<f64>,
    cdf: Vec<f64>,
}

impl ModifiedMutationMatrix {
    pub fn k(&self) -> usize {
        self.k
    }
}

impl ClassKernel for ModifiedMutationMatrix {
    fn ell(&self) -> usize {
        self.ell
    }
    fn row(&self, b: usize) -> &[f64] {
        let n = self.ell + 1;
        &self.entries[b * n..(b + 1) * n]
    }
    fn cdf(&self, b: usize) -> &[f64] {
        let n = self.ell + 1;
        &self.cdf[b * n..(b + 1) * n]
    }
}

/// Builds `M_H^{K+1}` from `M_H`. Fails when a `(b, K+1)` remainder is negative.
pub fn modified_mutation_matrix(mh: &LumpedMutationMatrix, k: usize) -> Result<ModifiedMutationMatrix> {
    let ell = mh.ell;
    if k + 2 > ell {
        return invalid(format!("modified kernel needs K + 2 <= ell, got K={k} ell={ell}"));
    }
    let n = ell + 1;
    let mut entries = mh.entries.clone();
    for b in 0..=k + 1 {
        let row = &mut entries[b * n..(b + 1) * n];
        row.iter_mut().for_each(|x| *x = 0.0);
        let mut used = 0.0;
        for c in 0..=k {
            let v = if c < b { mh.entry(c + 1, c) } else { mh.entry(b, c) };
            row[c] = v;
            used += v;
        }
        let rest = 1.0 - used;
        if rest < -1e-14 {
            return Err(Error::Regime(format!(
                "modified mutation row {b} has negative remainder {rest:e}; increase ell or decrease q"
            )));
        }
        row[k + 1] = rest.max(0.0);
    }
    let cdf = cumulative_rows(&entries, n);
    Ok(ModifiedMutationMatrix { ell, k, entries, cdf })
}

/// `M(u, v)` for sequences over `{0, ..., kappa-1}`.
pub fn sequence_mutation_prob(u: &[u8], v: &[u8], params: &Parameters) -> Result<f64> {
    if u.len() != v.len() || u.len() != params.ell {
        return invalid(format!(
            "sequence lengths {} and {} must both equal ell = {}",
            u.len(),
            v.len(),
            params.ell
        ));
    }
    let stay = 1.0 - params.q;
    let flip = params.q / (params.kappa as f64 - 1.0);
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| if a == b { stay } else { flip })
        .product())
}

/// Inverse-CDF class sample: the `c` with `F(c-1) < u <= F(c)` on row `b`.
pub fn sample_class_mutation<M: ClassKernel + ?Sized>(b: usize, u: f64, kernel: &M) -> usize {
    let row = kernel.row(b);
    let cdf = kernel.cdf(b);
    let mut c = cdf.partition_point(|&x| x < u);
    if c >= row.len() {
        return row.iter().rposition(|&p| p > 0.0).unwrap_or(b);
    }
    while row[c] <= 0.0 && c + 1 < row.len() {
        c += 1;
    }
    c
}

/// Per-locus class map: loci `1..=b` are the wrong ones, `b+1..=ell` the
/// correct ones; `us.len()` must be `ell`.
pub fn per_locus_class_mutation(b: usize, us: &[f64], params: &Parameters) -> usize {
    debug_assert_eq!(us.len(), params.ell);
    let back = params.q / (params.kappa as f64 - 1.0);
    let away = 1.0 - params.q;
    let down = us[..b].iter().filter(|&&u| u < back).count();
    let up = us[b..].iter().filter(|&&u| u > away).count();
    b - down + up
}

/// `e^{-a} a^{c-b} / (c-b)!` for `c >= b`, 0 otherwise.
pub fn limit_entry(a: f64, b: usize, c: usize) -> f64 {
    if c < b {
        return 0.0;
    }
    poisson_pmf(a, c - b)
}

pub(crate) fn poisson_pmf(a: f64, n: usize) -> f64 {
    if a == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let mut lf = 0.0;
    for i in 1..=n {
        lf += (i as f64).ln();
    }
    (n as f64 * a.ln() - a - lf).exp()
}
