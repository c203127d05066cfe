//! Parameters, occupancy distributions, class vectors, the order on
//! occupancy distributions and the two projections.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Model knobs. `k` is the number of tracked Hamming classes beyond class 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub ell: usize,
    pub m: usize,
    pub q: f64,
    pub sigma: f64,
    pub kappa: usize,
    #[serde(rename = "K")]
    pub k: usize,
}

impl Parameters {
    pub fn new(ell: usize, m: usize, q: f64, sigma: f64, kappa: usize, k: usize) -> Result<Self> {
        let p = Parameters { ell, m, q, sigma, kappa, k };
        p.validate_common()?;
        if !(q > 0.0) {
            return invalid(format!("q must be > 0, got {q}"));
        }
        if !(sigma > 1.0) {
            return invalid(format!("sigma must be > 1, got {sigma}"));
        }
        Ok(p)
    }

    /// Same as [`Parameters::new`] with `q = a / ell`.
    pub fn from_a(ell: usize, m: usize, a: f64, sigma: f64, kappa: usize, k: usize) -> Result<Self> {
        if ell == 0 {
            return invalid("ell must be positive");
        }
        Self::new(ell, m, a / ell as f64, sigma, kappa, k)
    }

    /// Closure of the parameter set: also admits `q = 0` and `sigma = 1`
    /// (no mutation, neutral landscape).
    pub fn boundary(ell: usize, m: usize, q: f64, sigma: f64, kappa: usize, k: usize) -> Result<Self> {
        let p = Parameters { ell, m, q, sigma, kappa, k };
        p.validate_common()?;
        if !(q >= 0.0) {
            return invalid(format!("q must be >= 0, got {q}"));
        }
        if !(sigma >= 1.0) {
            return invalid(format!("sigma must be >= 1, got {sigma}"));
        }
        Ok(p)
    }

    fn validate_common(&self) -> Result<()> {
        if self.ell == 0 {
            return invalid("ell must be positive");
        }
        if self.m == 0 {
            return invalid("m must be positive");
        }
        if self.m > i32::MAX as usize {
            return invalid("m must fit in 31 bits");
        }
        if self.kappa < 2 {
            return invalid(format!("kappa must be >= 2, got {}", self.kappa));
        }
        if self.k >= self.ell {
            return invalid(format!("K must be < ell, got K={} ell={}", self.k, self.ell));
        }
        let qmax = 1.0 - 1.0 / self.kappa as f64;
        if !(self.q < qmax) || !self.q.is_finite() {
            return invalid(format!("q must be < 1 - 1/kappa = {qmax}, got {}", self.q));
        }
        if !self.sigma.is_finite() {
            return invalid("sigma must be finite");
        }
        Ok(())
    }

    /// a = ell * q.
    pub fn a(&self) -> f64 {
        self.ell as f64 * self.q
    }

    /// alpha = m / ell.
    pub fn alpha(&self) -> f64 {
        self.m as f64 / self.ell as f64
    }

    pub fn with_k(mut self, k: usize) -> Result<Self> {
        if k >= self.ell {
            return invalid(format!("K must be < ell, got K={k} ell={}", self.ell));
        }
        self.k = k;
        Ok(self)
    }

    pub fn with_m(mut self, m: usize) -> Result<Self> {
        self.m = m;
        self.validate_common()?;
        Ok(self)
    }

    /// Lumped fitness of Hamming class `h`.
    pub fn fitness(&self, h: usize) -> f64 {
        if h == 0 {
            self.sigma
        } else {
            1.0
        }
    }
}

/// Counts `(o(0), ..., o(ell))` of individuals per Hamming class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OccupancyDistribution {
    counts: Vec<u32>,
}

impl OccupancyDistribution {
    /// Builds from counts; `ell = counts.len() - 1` and `m = sum(counts)`.
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return invalid("occupancy vector needs at least one class");
        }
        let m: u64 = counts.iter().map(|&c| c as u64).sum();
        if m == 0 || m > i32::MAX as u64 {
            return invalid(format!("occupancy mass must be in 1..2^31, got {m}"));
        }
        Ok(OccupancyDistribution { counts })
    }

    /// Builds from counts and checks the mass against `m`.
    pub fn with_mass(counts: Vec<u32>, m: usize) -> Result<Self> {
        let o = Self::new(counts)?;
        if o.m() != m {
            return invalid(format!("occupancy sums to {}, expected {m}", o.m()));
        }
        Ok(o)
    }

    pub(crate) fn from_counts_unchecked(counts: Vec<u32>) -> Self {
        debug_assert!(!counts.is_empty());
        OccupancyDistribution { counts }
    }

    /// All `m` individuals in class `class`.
    pub fn concentrated(ell: usize, m: usize, class: usize) -> Self {
        let mut counts = vec![0; ell + 1];
        counts[class] = m as u32;
        OccupancyDistribution { counts }
    }

    /// `(1, 0, ..., 0, m-1)`.
    pub fn lower_enter(ell: usize, m: usize) -> Self {
        let mut counts = vec![0; ell + 1];
        counts[0] += 1;
        counts[ell] += m as u32 - 1;
        OccupancyDistribution { counts }
    }

    /// `(0, ..., 0, m)`.
    pub fn lower_exit(ell: usize, m: usize) -> Self {
        Self::concentrated(ell, m, ell)
    }

    /// `(1, m-1, 0, ..., 0)`.
    pub fn upper_enter(ell: usize, m: usize) -> Self {
        let mut counts = vec![0; ell + 1];
        counts[0] += 1;
        counts[1] += m as u32 - 1;
        OccupancyDistribution { counts }
    }

    /// `(0, m, 0, ..., 0)`.
    pub fn upper_exit(ell: usize, m: usize) -> Self {
        Self::concentrated(ell, m, 1)
    }

    /// Start of the neutral phase: all mass in class `K+1`.
    pub fn neutral_exit(ell: usize, m: usize, k: usize) -> Self {
        Self::concentrated(ell, m, k + 1)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn ell(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn m(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    pub fn get(&self, class: usize) -> u32 {
        self.counts[class]
    }

    /// One individual moves from class `k` to class `l`.
    pub fn transfer(&self, k: usize, l: usize) -> Result<Self> {
        if k > self.ell() || l > self.ell() {
            return invalid(format!("class index out of range: {k} -> {l}"));
        }
        if self.counts[k] == 0 {
            return invalid(format!("class {k} is empty"));
        }
        let mut out = self.clone();
        out.transfer_in_place(k, l);
        Ok(out)
    }

    pub(crate) fn transfer_in_place(&mut self, k: usize, l: usize) {
        debug_assert!(self.counts[k] > 0);
        self.counts[k] -= 1;
        self.counts[l] += 1;
    }

    /// Contains at least one master sequence.
    pub fn has_master(&self) -> bool {
        self.counts[0] > 0
    }

    /// `o(0) + ... + o(K)`.
    pub fn n_k(&self, k: usize) -> usize {
        self.counts[..=k.min(self.ell())].iter().map(|&c| c as usize).sum()
    }

    /// Class of the `j`-th individual (1-based) in the canonical ordering.
    pub fn class_of_individual(&self, j: usize) -> usize {
        let mut acc = 0usize;
        for (c, &n) in self.counts.iter().enumerate() {
            acc += n as usize;
            if j <= acc {
                return c;
            }
        }
        self.ell()
    }

    /// First `K+1` coordinates.
    pub fn head(&self, k: usize) -> ClassVector {
        ClassVector { z: self.counts[..=k].to_vec() }
    }

    /// Enumerates all occupancy distributions with `ell + 1` classes and mass `m`,
    /// in lexicographic order of counts.
    pub fn enumerate(ell: usize, m: usize) -> Vec<Self> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; ell + 1];
        fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<OccupancyDistribution>) {
            if pos + 1 == cur.len() {
                cur[pos] = left;
                out.push(OccupancyDistribution { counts: cur.clone() });
                return;
            }
            for v in 0..=left {
                cur[pos] = v;
                rec(pos + 1, left - v, cur, out);
            }
        }
        rec(0, m as u32, &mut cur, &mut out);
        out
    }
}

/// `o ≼ o2` iff every prefix sum of `o` is at most that of `o2`.
pub fn partial_order_leq(o: &OccupancyDistribution, o2: &OccupancyDistribution) -> Result<bool> {
    if o.counts.len() != o2.counts.len() {
        return invalid(format!(
            "dimension mismatch: {} vs {} classes",
            o.counts.len(),
            o2.counts.len()
        ));
    }
    if o.m() != o2.m() {
        return invalid(format!("mass mismatch: {} vs {}", o.m(), o2.m()));
    }
    Ok(leq_unchecked(o, o2))
}

pub(crate) fn leq_unchecked(o: &OccupancyDistribution, o2: &OccupancyDistribution) -> bool {
    let (mut s1, mut s2) = (0u64, 0u64);
    for (a, b) in o.counts.iter().zip(&o2.counts) {
        s1 += *a as u64;
        s2 += *b as u64;
        if s1 > s2 {
            return false;
        }
    }
    true
}

/// Keeps classes `0..=K`, empties `K+1..ell-1`, puts the rest in class `ell`.
pub fn project_lower(o: &OccupancyDistribution, k: usize) -> OccupancyDistribution {
    let ell = o.ell();
    let mut counts = vec![0u32; ell + 1];
    let kk = k.min(ell);
    counts[..=kk].copy_from_slice(&o.counts[..=kk]);
    let kept: u32 = counts.iter().sum();
    counts[ell] += o.m() as u32 - kept;
    OccupancyDistribution { counts }
}

/// Keeps classes `0..=K`, puts the rest in class `K+1`, empties `K+2..`.
pub fn project_upper(o: &OccupancyDistribution, k: usize) -> OccupancyDistribution {
    let ell = o.ell();
    if k >= ell {
        return o.clone();
    }
    let mut counts = vec![0u32; ell + 1];
    counts[..=k].copy_from_slice(&o.counts[..=k]);
    let kept: u32 = counts.iter().sum();
    counts[k + 1] = o.m() as u32 - kept;
    OccupancyDistribution { counts }
}

/// A point `z` of `E_K = {z in N^{K+1} : z_0 + ... + z_K <= m}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassVector {
    z: Vec<u32>,
}

impl ClassVector {
    pub fn new(z: Vec<u32>, m: usize) -> Result<Self> {
        if z.is_empty() {
            return invalid("class vector needs at least one coordinate");
        }
        let s: u64 = z.iter().map(|&c| c as u64).sum();
        if s > m as u64 {
            return invalid(format!("class vector sums to {s} > m = {m}"));
        }
        Ok(ClassVector { z })
    }

    pub(crate) fn from_vec_unchecked(z: Vec<u32>) -> Self {
        ClassVector { z }
    }

    pub fn zero(k: usize) -> Self {
        ClassVector { z: vec![0; k + 1] }
    }

    /// Unit vector `w_i` in `N^{K+1}`.
    pub fn unit(k: usize, i: usize) -> Self {
        let mut z = vec![0; k + 1];
        z[i] = 1;
        ClassVector { z }
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.z
    }

    pub fn get(&self, i: usize) -> u32 {
        self.z[i]
    }

    pub fn k(&self) -> usize {
        self.z.len() - 1
    }

    pub fn total(&self) -> usize {
        self.z.iter().map(|&c| c as usize).sum()
    }

    pub(crate) fn shifted(&self, minus: Option<usize>, plus: Option<usize>) -> Self {
        let mut z = self.z.clone();
        if let Some(i) = minus {
            z[i] -= 1;
        }
        if let Some(j) = plus {
            z[j] += 1;
        }
        ClassVector { z }
    }

    /// All points of `E_K`, lexicographic.
    pub fn enumerate(k: usize, m: usize) -> Vec<Self> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; k + 1];
        fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<ClassVector>) {
            if pos == cur.len() {
                out.push(ClassVector { z: cur.clone() });
                return;
            }
            for v in 0..=left {
                cur[pos] = v;
                rec(pos + 1, left - v, cur, out);
            }
            cur[pos] = 0;
        }
        rec(0, m as u32, &mut cur, &mut out);
        out
    }
}

/// `C(n, k)` as u128, saturating.
pub fn binomial_u128(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}
