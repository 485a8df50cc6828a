//! Central finite differences on a uniform mesh of [0, 1] and the
//! piecewise-linear interpolant of the nodal values.

use crate::error::{Error, Result};
use crate::problems::Problem1D;

const PIVOT_MIN: f64 = 1e-14;
const DENSE_FALLBACK_MAX_N: usize = 1024;
const NODE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FdmSolution {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub h: f64,
    /// Mesh Peclet number `h / (2 eps)`.
    pub peclet: f64,
}

impl FdmSolution {
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Uniform nodes `i / n`, `i = 0..=n`.
pub fn uniform_nodes(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

/// Tridiagonal system with constant bands.
#[derive(Clone, Copy, Debug)]
struct Bands {
    lower: f64,
    diag: f64,
    upper: f64,
}

fn thomas(b: Bands, rhs: &[f64]) -> Option<Vec<f64>> {
    let m = rhs.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut piv = b.diag;
    if piv.abs() < PIVOT_MIN {
        return None;
    }
    c[0] = b.upper / piv;
    d[0] = rhs[0] / piv;
    for i in 1..m {
        piv = b.diag - b.lower * c[i - 1];
        if piv.abs() < PIVOT_MIN {
            return None;
        }
        c[i] = b.upper / piv;
        d[i] = (rhs[i] - b.lower * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..m - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Some(x)
}

/// Gaussian elimination with partial pivoting on the dense form of the
/// tridiagonal system.
fn pivoted_dense(b: Bands, rhs: &[f64]) -> Result<Vec<f64>> {
    let m = rhs.len();
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..m {
        a[i][i] = b.diag;
        if i > 0 {
            a[i][i - 1] = b.lower;
        }
        if i + 1 < m {
            a[i][i + 1] = b.upper;
        }
    }
    let mut x = rhs.to_vec();
    for k in 0..m {
        let p = (k..m)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        if a[p][k].abs() < PIVOT_MIN {
            return Err(Error::numeric(format!("singular pivot in row {k} of FDM system")));
        }
        a.swap(k, p);
        x.swap(k, p);
        // at most two rows below k are non-zero in column k
        for i in k + 1..m.min(k + 3) {
            let f = a[i][k] / a[k][k];
            if f == 0.0 {
                continue;
            }
            for j in k..m.min(k + 3) {
                a[i][j] -= f * a[k][j];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..m).rev() {
        let mut s = x[k];
        for j in k + 1..m.min(k + 3) {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Ok(x)
}

/// Max-norm residual of the tridiagonal system, scaled by the row norm.
fn scaled_residual(b: Bands, x: &[f64], rhs: &[f64]) -> f64 {
    let m = x.len();
    let scale = b.lower.abs() + b.diag.abs() + b.upper.abs();
    (0..m)
        .map(|i| {
            let mut r = b.diag * x[i] - rhs[i];
            if i > 0 {
                r += b.lower * x[i - 1];
            }
            if i + 1 < m {
                r += b.upper * x[i + 1];
            }
            r.abs() / scale
        })
        .fold(0.0, f64::max)
}

/// Central-difference solution of `-eps u'' + u' = f` on `n` intervals.
///
/// Row `i` reads `(-eps/h^2 - 1/(2h)) U_{i-1} + (2 eps/h^2) U_i +
/// (1/(2h) - eps/h^2) U_{i+1} = f`. Solved with the Thomas algorithm; if a
/// pivot falls below `1e-14` or the residual check fails, the system is
/// re-solved with partial pivoting (up to `n = 1024`).
pub fn solve_central(problem: &Problem1D, n: usize) -> Result<FdmSolution> {
    if n < 2 {
        return Err(Error::Config(format!("FDM needs N >= 2 intervals, got {n}")));
    }
    let eps = problem.epsilon();
    let h = 1.0 / n as f64;
    let bands = Bands {
        lower: -eps / (h * h) - 1.0 / (2.0 * h),
        diag: 2.0 * eps / (h * h),
        upper: 1.0 / (2.0 * h) - eps / (h * h),
    };
    let [(_, g0), (_, g1)] = problem.boundary();
    let m = n - 1;
    let mut rhs = vec![problem.rhs(); m];
    rhs[0] -= bands.lower * g0;
    rhs[m - 1] -= bands.upper * g1;

    let interior = match thomas(bands, &rhs) {
        Some(x) if scaled_residual(bands, &x, &rhs) < 1e-12 => x,
        _ if n <= DENSE_FALLBACK_MAX_N => pivoted_dense(bands, &rhs)?,
        _ => {
            return Err(Error::numeric(format!(
                "Thomas elimination unstable for N = {n}, eps = {eps}"
            )))
        }
    };

    let mut values = Vec::with_capacity(n + 1);
    values.push(g0);
    values.extend(interior);
    values.push(g1);
    Ok(FdmSolution {
        nodes: uniform_nodes(n),
        values,
        h,
        peclet: h / (2.0 * eps),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Oscillation {
    pub oscillatory: bool,
    pub sign_changes: usize,
    /// Node index of the first local extremum.
    pub first_index: Option<usize>,
}

/// Oscillatory iff the successive differences change sign at least twice.
/// Exactly zero differences carry no sign and are skipped.
pub fn detect_oscillation(values: &[f64]) -> Oscillation {
    let mut prev: Option<f64> = None;
    let mut changes = 0;
    let mut first = None;
    for i in 1..values.len() {
        let d = values[i] - values[i - 1];
        if d == 0.0 {
            continue;
        }
        if let Some(p) = prev {
            if p.signum() != d.signum() {
                changes += 1;
                first.get_or_insert(i - 1);
            }
        }
        prev = Some(d);
    }
    Oscillation {
        oscillatory: changes >= 2,
        sign_changes: changes,
        first_index: first,
    }
}

/// Piecewise-linear interpolant of nodal values on a uniform mesh of [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinear {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub h: f64,
}

impl PiecewiseLinear {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config("interpolant needs at least two nodes".into()));
        }
        let n = values.len() - 1;
        let h = 1.0 / n as f64;
        let slopes = values.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        Ok(Self {
            nodes: uniform_nodes(n),
            values,
            slopes,
            h,
        })
    }

    pub fn from_solution(sol: &FdmSolution) -> Self {
        Self::new(sol.values.clone()).expect("FDM solutions have >= 3 nodes")
    }

    fn locate(&self, x: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("x = {x} outside [0, 1]")));
        }
        let n = self.slopes.len();
        Ok(((x / self.h).floor() as usize).min(n - 1))
    }

    /// Index of the node within `1e-12` of `x`, if any.
    pub fn node_at(&self, x: f64) -> Option<usize> {
        let k = (x / self.h).round();
        if k < 0.0 || k as usize >= self.nodes.len() {
            return None;
        }
        let k = k as usize;
        ((x - self.nodes[k]).abs() <= NODE_TOL).then_some(k)
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        if let Some(k) = self.node_at(x) {
            return Ok(self.values[k]);
        }
        let i = self.locate(x)?;
        let t = (x - self.nodes[i]) / self.h;
        Ok(self.values[i] * (1.0 - t) + self.values[i + 1] * t)
    }

    /// Slope of the interval containing `x`; undefined at nodes.
    pub fn slope_at(&self, x: f64) -> Result<f64> {
        if let Some(k) = self.node_at(x) {
            return Err(Error::Sampling(format!(
                "x = {x} coincides with mesh node {k}; the interpolant has no slope there"
            )));
        }
        Ok(self.slopes[self.locate(x)?])
    }
}
