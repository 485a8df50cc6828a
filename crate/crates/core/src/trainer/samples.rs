use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fdm::PiecewiseLinear;
use crate::problems::{Problem1D, Problem2D};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Corrector of a piecewise-linear FDM interpolant.
    FdmCorrection,
    /// Corrector of the reduced (`eps = 0`) solution.
    ReducedCorrection,
    /// Corrector of the reduced solution `u_0 = x` of the 2D problem.
    TwoD,
}

/// Training points for a corrector `c`.
///
/// Boundary targets are already expressed for `c`, i.e. `u_bc - uhat(x_b)`.
/// Each residual point carries the constant `offset` so that the residual of
/// `uhat + c` reads `-eps lap(c) + c_v + offset`, where `c_v` is the
/// derivative along the convection direction (`x` in 1D, `y` in 2D).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub mode: Mode,
    pub epsilon: f64,
    pub dim: usize,
    pub boundary: Vec<(Vec<f64>, f64)>,
    pub residual: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

impl SampleSet {
    pub fn n_u(&self) -> usize {
        self.boundary.len()
    }

    pub fn n_r(&self) -> usize {
        self.residual.len()
    }

    /// Index of the derivative coordinate that carries convection.
    pub fn flow_coord(&self) -> usize {
        self.dim - 1
    }

    /// Boundary points followed by residual points, one row each.
    pub fn stacked_points(&self) -> Array2<f64> {
        let n = self.n_u() + self.n_r();
        let mut x = Array2::zeros((n, self.dim));
        let pts = self.boundary.iter().map(|(p, _)| p).chain(&self.residual);
        for (i, p) in pts.enumerate() {
            for (k, &v) in p.iter().enumerate() {
                x[[i, k]] = v;
            }
        }
        x
    }

    /// Same set with every residual point repeated `times` times.
    pub fn with_repeated_residuals(&self, times: usize) -> Self {
        let mut out = self.clone();
        out.residual = self.residual.iter().flat_map(|p| std::iter::repeat(p.clone()).take(times)).collect();
        out.offsets = self.offsets.iter().flat_map(|&o| std::iter::repeat(o).take(times)).collect();
        out
    }

    /// Corrector samples around an FDM interpolant `uhat`.
    ///
    /// Residual points are `k / res_div`, `k = 1 .. res_div - 1`, minus the
    /// mesh nodes of `uhat`. With 32 intervals and `res_div = 128` that
    /// leaves 96 points.
    pub fn fdm(problem: &Problem1D, uhat: &PiecewiseLinear, res_div: usize) -> Result<Self> {
        let n = uhat.slopes.len();
        let x = fdm_residual_points(n, res_div)?;
        let offsets = x
            .iter()
            .map(|&xi| Ok(uhat.slope_at(xi)? - problem.rhs()))
            .collect::<Result<Vec<_>>>()?;
        let boundary = problem
            .boundary()
            .iter()
            .map(|&(xb, g)| Ok((vec![xb], g - uhat.evaluate(xb)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mode: Mode::FdmCorrection,
            epsilon: problem.epsilon(),
            dim: 1,
            boundary,
            residual: x.into_iter().map(|v| vec![v]).collect(),
            offsets,
        })
    }

    /// Corrector samples around the reduced solution: the interior lattice
    /// `k / res_div` and the two boundary targets.
    pub fn reduced(problem: &Problem1D, res_div: usize) -> Result<Self> {
        if res_div < 2 {
            return Err(Error::Config(format!("residual lattice needs res_div >= 2, got {res_div}")));
        }
        let x: Vec<f64> = (1..res_div).map(|k| k as f64 / res_div as f64).collect();
        Ok(Self {
            mode: Mode::ReducedCorrection,
            epsilon: problem.epsilon(),
            dim: 1,
            boundary: problem
                .corrector_boundary_targets()
                .iter()
                .map(|&(xb, c)| (vec![xb], c))
                .collect(),
            offsets: vec![0.0; x.len()],
            residual: x.into_iter().map(|v| vec![v]).collect(),
        })
    }

    /// 2D samples: interior of the `n x n` lattice on `[-1, 1]^2` and `n`
    /// points per edge.
    pub fn two_d(problem: &Problem2D, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!("2D lattice needs n >= 3, got {n}")));
        }
        let coord = |k: usize| -1.0 + 2.0 * k as f64 / (n - 1) as f64;
        let mut residual = Vec::with_capacity((n - 2) * (n - 2));
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                residual.push(vec![coord(i), coord(j)]);
            }
        }
        let boundary = problem
            .corrector_boundary_targets(n)?
            .into_iter()
            .map(|(p, c)| (p.to_vec(), c))
            .collect();
        Ok(Self {
            mode: Mode::TwoD,
            epsilon: problem.epsilon(),
            dim: 2,
            boundary,
            offsets: vec![0.0; residual.len()],
            residual,
        })
    }
}

/// `k / res_div` for `k = 1 .. res_div - 1`, skipping multiples of `1 / n`.
pub fn fdm_residual_points(n: usize, res_div: usize) -> Result<Vec<f64>> {
    if n < 1 || res_div < 2 || res_div % n != 0 {
        return Err(Error::Config(format!(
            "residual lattice 1/{res_div} is not a refinement of the FDM mesh 1/{n}"
        )));
    }
    let stride = res_div / n;
    Ok((1..res_div)
        .filter(|k| k % stride != 0)
        .map(|k| k as f64 / res_div as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdm::solve_central;

    #[test]
    fn fdm_point_counts() {
        assert_eq!(fdm_residual_points(32, 128).unwrap().len(), 96);
        assert_eq!(fdm_residual_points(64, 128).unwrap().len(), 64);
        assert!(matches!(fdm_residual_points(48, 128), Err(Error::Config(_))));
    }

    #[test]
    fn fdm_samples_avoid_nodes() {
        let p = Problem1D::primary(0.01).unwrap();
        let uhat = PiecewiseLinear::from_solution(&solve_central(&p, 32).unwrap());
        let s = SampleSet::fdm(&p, &uhat, 128).unwrap();
        assert_eq!(s.n_r(), 96);
        for x in &s.residual {
            assert!(x[0] > 0.0 && x[0] < 1.0);
            assert!(uhat.node_at(x[0]).is_none());
        }
        // the interpolant already matches the boundary data
        assert!(s.boundary.iter().all(|(_, c)| *c == 0.0));
    }

    #[test]
    fn reduced_samples() {
        let p = Problem1D::primary(1e-4).unwrap();
        let s = SampleSet::reduced(&p, 128).unwrap();
        assert_eq!(s.n_r(), 127);
        assert_eq!(s.residual[0][0], 1.0 / 128.0);
        assert_eq!(s.residual[126][0], 127.0 / 128.0);
        assert_eq!(s.boundary, vec![(vec![0.0], -0.0), (vec![1.0], -1.0)]);
    }

    #[test]
    fn two_d_samples() {
        let s = SampleSet::two_d(&Problem2D::new(1e-4).unwrap(), 129).unwrap();
        assert_eq!(s.n_r(), 127 * 127);
        assert_eq!(s.n_u(), 4 * 129);
        assert!(s.residual.iter().all(|p| p.iter().all(|v| v.abs() < 1.0)));
        assert_eq!(s.flow_coord(), 1);
    }
}
