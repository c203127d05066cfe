//! Dense linear solves for small Markov chains: stationary laws, hitting
//! times, sums before hitting and absorption probabilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Largest chain handed to a dense solve.
pub const DENSE_LIMIT: usize = 4096;

fn check_square(p: &DMatrix<f64>) -> Result<usize> {
    let n = p.nrows();
    if n != p.ncols() {
        return invalid(format!("transition matrix must be square, got {}x{}", n, p.ncols()));
    }
    if n == 0 {
        return invalid("empty transition matrix");
    }
    if n > DENSE_LIMIT {
        return Err(Error::Capacity { states: n as u128, limit: DENSE_LIMIT as u128 });
    }
    Ok(n)
}

/// Stationary law of a chain with a single recurrent class.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = check_square(p)?;
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    a.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("stationary system is singular".into()))
}

/// `g(x) = E_x sum_{s < tau} f(X_s)` with `tau` the hitting time of `target`;
/// `g = 0` on the target.
pub fn expected_sums_before_hit(p: &DMatrix<f64>, target: &[bool], f: &[f64]) -> Result<DVector<f64>> {
    let n = check_square(p)?;
    if target.len() != n || f.len() != n {
        return invalid("target and f must have one entry per state");
    }
    let free: Vec<usize> = (0..n).filter(|&i| !target[i]).collect();
    let mut out = DVector::zeros(n);
    if free.is_empty() {
        return Ok(out);
    }
    let k = free.len();
    let mut a = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[(r, c)] = if i == j { 1.0 } else { 0.0 } - p[(i, j)];
        }
        rhs[r] = f[i];
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Unreachable("target not reached from every state".into()))?;
    for (r, &i) in free.iter().enumerate() {
        out[i] = sol[r];
    }
    Ok(out)
}

/// Mean hitting times of `target`.
pub fn hitting_times(p: &DMatrix<f64>, target: &[bool]) -> Result<DVector<f64>> {
    expected_sums_before_hit(p, target, &vec![1.0; p.nrows()])
}

/// Probability of hitting `a` before `b`. The two sets must be disjoint.
pub fn absorption_probability(p: &DMatrix<f64>, a: &[bool], b: &[bool]) -> Result<DVector<f64>> {
    let n = check_square(p)?;
    if a.len() != n || b.len() != n {
        return invalid("absorbing sets must have one entry per state");
    }
    if a.iter().zip(b).any(|(&x, &y)| x && y) {
        return invalid("absorbing sets overlap");
    }
    let free: Vec<usize> = (0..n).filter(|&i| !a[i] && !b[i]).collect();
    let mut out = DVector::from_fn(n, |i, _| if a[i] { 1.0 } else { 0.0 });
    if free.is_empty() {
        return Ok(out);
    }
    let k = free.len();
    let mut m = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            m[(r, c)] = if i == j { 1.0 } else { 0.0 } - p[(i, j)];
        }
        rhs[r] = (0..n).filter(|&j| a[j]).map(|j| p[(i, j)]).sum();
    }
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Unreachable("absorbing sets not reached".into()))?;
    for (r, &i) in free.iter().enumerate() {
        out[i] = sol[r];
    }
    Ok(out)
}
