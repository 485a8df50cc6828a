//! Tangent kernel of the PINN observables and its spectrum.
//!
//! Rows of the Jacobian are the parameter gradients of the boundary values
//! `c(x_b)` followed by the residual operator `-eps lap(c) + c_v` at the
//! residual points. `K = J J^T`.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::trace::{param_jacobian, Observable};
use crate::net::MLPParams;
use crate::trainer::SampleSet;
use crate::transform::AffineTransform;

const JACOBIAN_CHUNK: usize = 64;
const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug)]
pub struct TangentKernel {
    pub k: Array2<f64>,
    pub n_u: usize,
    pub n_r: usize,
    /// Sample coordinates in kernel order.
    pub points: Vec<Vec<f64>>,
}

impl TangentKernel {
    pub fn n(&self) -> usize {
        self.n_u + self.n_r
    }

    pub fn k_uu(&self) -> ArrayView2<'_, f64> {
        self.k.slice(s![..self.n_u, ..self.n_u])
    }

    pub fn k_ur(&self) -> ArrayView2<'_, f64> {
        self.k.slice(s![..self.n_u, self.n_u..])
    }

    pub fn k_rr(&self) -> ArrayView2<'_, f64> {
        self.k.slice(s![self.n_u.., self.n_u..])
    }

    pub fn tr_uu(&self) -> f64 {
        (0..self.n_u).map(|i| self.k[[i, i]]).sum()
    }

    pub fn tr_rr(&self) -> f64 {
        (self.n_u..self.n()).map(|i| self.k[[i, i]]).sum()
    }

    /// `Tr(K_uu) + Tr(K_rr)`.
    pub fn trace(&self) -> f64 {
        self.tr_uu() + self.tr_rr()
    }

    pub fn is_residual(&self, i: usize) -> bool {
        i >= self.n_u
    }
}

/// Boundary values, then the residual operator at each residual point.
pub fn observables(samples: &SampleSet) -> Vec<Observable> {
    let eps = samples.epsilon;
    let mut d1 = [0.0; 2];
    let mut d2 = [0.0; 2];
    d1[samples.flow_coord()] = 1.0;
    for v in d2.iter_mut().take(samples.dim) {
        *v = -eps;
    }
    samples
        .boundary
        .iter()
        .map(|(p, _)| Observable::value(p.clone()))
        .chain(
            samples
                .residual
                .iter()
                .map(|p| Observable::linear(p.clone(), 0.0, d1, d2)),
        )
        .collect()
}

pub fn assemble_kernel(
    params: &MLPParams,
    transform: &AffineTransform,
    samples: &SampleSet,
) -> Result<TangentKernel> {
    if params.input_dim() != samples.dim {
        return Err(Error::Shape(format!(
            "{}-d samples for a network with {} inputs",
            samples.dim,
            params.input_dim()
        )));
    }
    let obs = observables(samples);
    let blocks = obs
        .par_chunks(JACOBIAN_CHUNK)
        .map(|c| param_jacobian(params, transform, c))
        .collect::<Result<Vec<_>>>()?;
    let mut j = Array2::zeros((obs.len(), params.num_params()));
    let mut row = 0;
    for b in blocks {
        let n = b.nrows();
        j.slice_mut(s![row..row + n, ..]).assign(&b);
        row += n;
    }
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("tangent kernel Jacobian is not finite"));
    }
    Ok(TangentKernel {
        k: gram(&j),
        n_u: samples.n_u(),
        n_r: samples.n_r(),
        points: obs.into_iter().map(|o| o.point).collect(),
    })
}

/// `J J^T`, with the lower triangle mirrored from the upper one.
pub fn gram(j: &Array2<f64>) -> Array2<f64> {
    let n = j.nrows();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ri = j.row(i);
            (i..n).map(|k| ri.dot(&j.row(k))).collect()
        })
        .collect();
    let mut k = Array2::zeros((n, n));
    for (i, r) in upper.iter().enumerate() {
        for (off, &v) in r.iter().enumerate() {
            k[[i, i + off]] = v;
            k[[i + off, i]] = v;
        }
    }
    k
}

/// Mean eigenvalue `Tr(K) / N`.
pub fn convergence_rate(kernel: &TangentKernel) -> f64 {
    kernel.trace() / kernel.n() as f64
}

#[derive(Clone, Debug)]
pub struct KernelSpectrum {
    /// Eigenvalues in descending order, not clipped.
    pub raw: Vec<f64>,
    /// Orthonormal eigenvectors, column `i` belongs to `raw[i]`.
    pub q: Array2<f64>,
    pub sweeps: usize,
}

impl KernelSpectrum {
    /// Eigenvalues clipped at zero.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.raw.iter().map(|&l| l.max(0.0)).collect()
    }

    pub fn lambda_max(&self) -> f64 {
        self.raw.first().copied().unwrap_or(0.0)
    }

    pub fn lambda_min(&self) -> f64 {
        self.raw.last().copied().unwrap_or(0.0)
    }

    /// Number of eigenvalues above `rel * lambda_max`.
    pub fn rank_above(&self, rel: f64) -> usize {
        let cut = rel * self.lambda_max();
        self.raw.iter().filter(|&&l| l > cut).count()
    }

    /// `Q diag(raw) Q^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut ql = self.q.clone();
        for (mut col, &l) in ql.columns_mut().into_iter().zip(&self.raw) {
            col *= l;
        }
        ql.dot(&self.q.t())
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn eig_sym(k: &Array2<f64>) -> Result<KernelSpectrum> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::Shape(format!("eig_sym needs a square matrix, got {n}x{}", k.ncols())));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("matrix passed to eig_sym is not finite"));
    }
    let mut a: Vec<f64> = k.iter().copied().collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-12 * fro;
    let off_norm = |a: &[f64]| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += a[i * n + j] * a[i * n + j];
                }
            }
        }
        acc.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&a) >= tol && fro > 0.0 {
        if sweeps == MAX_SWEEPS {
            return Err(Error::numeric(format!(
                "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let np = c * arp - s * arq;
                    let nq = s * arp + c * arq;
                    a[r * n + p] = np;
                    a[p * n + r] = np;
                    a[r * n + q] = nq;
                    a[q * n + r] = nq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let raw = order.iter().map(|&i| a[i * n + i]).collect();
    let mut q = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        let mut big = 0.0f64;
        for r in 0..n {
            let x = v[r * n + src];
            if x.abs() > big.abs() {
                big = x;
            }
        }
        let sign = if big < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            q[[r, col]] = sign * v[r * n + src];
        }
    }
    Ok(KernelSpectrum { raw, q, sweeps })
}

/// Leading eigenvectors with the sample coordinate of every component.
#[derive(Clone, Debug)]
pub struct EigenvectorTable {
    pub points: Vec<Vec<f64>>,
    pub residual: Vec<bool>,
    pub eigenvalues: Vec<f64>,
    /// `N x k`, column `i` is the `i`-th eigenvector.
    pub vectors: Array2<f64>,
}

impl EigenvectorTable {
    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    /// Residual-block rows as `(x, components)`, sorted by the first
    /// coordinate.
    pub fn residual_rows(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut rows: Vec<_> = (0..self.points.len())
            .filter(|&i| self.residual[i])
            .map(|i| (self.points[i].clone(), self.vectors.row(i).to_vec()))
            .collect();
        rows.sort_by(|a, b| a.0.iter().zip(&b.0).fold(std::cmp::Ordering::Equal, |o, (x, y)| o.then(x.total_cmp(y))));
        rows
    }

    /// Midpoint of the residual interval where eigenvector `i` has the
    /// largest `|dv/dx|`. Only defined for 1D samples.
    pub fn steepest_gradient(&self, i: usize) -> Result<f64> {
        if i >= self.k() {
            return Err(Error::Config(format!("eigenvector {i} out of {}", self.k())));
        }
        let rows = self.residual_rows();
        if rows.iter().any(|(p, _)| p.len() != 1) {
            return Err(Error::Shape("steepest gradient needs 1D samples".into()));
        }
        if rows.len() < 2 {
            return Err(Error::Shape("steepest gradient needs two residual points".into()));
        }
        let mut best = (f64::NEG_INFINITY, 0.0);
        for w in rows.windows(2) {
            let (x0, x1) = (w[0].0[0], w[1].0[0]);
            if x1 == x0 {
                continue;
            }
            let g = ((w[1].1[i] - w[0].1[i]) / (x1 - x0)).abs();
            if g > best.0 {
                best = (g, 0.5 * (x0 + x1));
            }
        }
        Ok(best.1)
    }
}

pub fn top_eigenvectors(kernel: &TangentKernel, spec: &KernelSpectrum, k: usize) -> Result<EigenvectorTable> {
    let n = kernel.n();
    if k > n || spec.q.nrows() != n {
        return Err(Error::Config(format!("asked for {k} eigenvectors of a {n}x{n} kernel")));
    }
    Ok(EigenvectorTable {
        points: kernel.points.clone(),
        residual: (0..n).map(|i| kernel.is_residual(i)).collect(),
        eigenvalues: spec.eigenvalues()[..k].to_vec(),
        vectors: spec.q.slice(s![.., ..k]).to_owned(),
    })
}

/// Predicted error components `-exp(-lambda_i t) (Q^T targets)_i` in the
/// eigenbasis, a qualitative diagnostic of the early training dynamics.
pub fn decay_prediction(spec: &KernelSpectrum, targets: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Config(format!("pseudo-time must be >= 0, got {t}")));
    }
    let n = spec.q.nrows();
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for a {n}x{n} kernel", targets.len())));
    }
    let lambda = spec.eigenvalues();
    Ok((0..n)
        .map(|i| {
            let proj: f64 = spec.q.column(i).iter().zip(targets).map(|(q, y)| q * y).sum();
            -(-lambda[i] * t).exp() * proj
        })
        .collect())
}

/// Numerical checks of a kernel and its decomposition.
#[derive(Clone, Copy, Debug)]
pub struct KernelChecks {
    /// `max |K_ij - K_ji| / max |K_ij|`.
    pub asymmetry: f64,
    /// `lambda_min / lambda_max`.
    pub psd_ratio: f64,
    /// `Tr(K) - Tr(K_uu) - Tr(K_rr)` with `Tr(K)` summed over the diagonal.
    pub trace_gap: f64,
    /// `max |Q^T Q - I|`.
    pub orthogonality: f64,
    /// `max |K - Q L Q^T| / lambda_max`.
    pub reconstruction: f64,
}

impl KernelChecks {
    pub fn passes(&self) -> bool {
        self.asymmetry <= 1e-12
            && self.psd_ratio >= -1e-8
            && self.trace_gap == 0.0
            && self.orthogonality < 1e-10
            && self.reconstruction < 1e-8
    }
}

pub fn validate(kernel: &TangentKernel, spec: &KernelSpectrum) -> KernelChecks {
    let k = &kernel.k;
    let n = kernel.n();
    let scale = k.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((k[[i, j]] - k[[j, i]]).abs());
        }
    }
    let diag_u: f64 = (0..kernel.n_u).map(|i| k[[i, i]]).sum();
    let diag_r: f64 = (kernel.n_u..n).map(|i| k[[i, i]]).sum();
    let lmax = spec.lambda_max();
    let qtq = spec.q.t().dot(&spec.q);
    let mut ortho = 0.0f64;
    for ((i, j), v) in qtq.indexed_iter() {
        let e = if i == j { 1.0 } else { 0.0 };
        ortho = ortho.max((v - e).abs());
    }
    let rec = (&spec.reconstruct() - k).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    KernelChecks {
        asymmetry: asym / scale,
        psd_ratio: if lmax > 0.0 { spec.lambda_min() / lmax } else { 0.0 },
        trace_gap: (diag_u + diag_r) - kernel.trace(),
        orthogonality: ortho,
        reconstruction: if lmax > 0.0 { rec / lmax } else { rec },
    }
}
