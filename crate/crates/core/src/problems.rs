//! Model problems, their exact and reduced solutions, and the residual
//! operators a corrector `c` has to satisfy.
//!
//! Exponentials with exponent `<= -700` are taken to be exactly zero.

use crate::error::{Error, Result};
use crate::net::Jet;

const EXP_FLOOR: f64 = -700.0;

#[inline]
pub(crate) fn safe_exp(z: f64) -> f64 {
    if z <= EXP_FLOOR {
        0.0
    } else {
        z.exp()
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("epsilon must be positive and finite, got {eps}")))
    }
}

/// `1 - exp((x - 1) / eps)`, the solution of `-eps u'' + u' = 0` on (0, 1)
/// with `u(0) = 1 - exp(-1/eps)`, `u(1) = 0`.
pub fn exact_u_1d(x: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("x = {x} outside [0, 1]")));
    }
    Ok(1.0 - safe_exp((x - 1.0) / eps))
}

/// `x (1 - exp((y - 1)/eps)) / (1 - exp(-2/eps))` on `[-1, 1]^2`.
pub fn exact_u_2d(x: f64, y: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if !(-1.0..=1.0).contains(&x) || !(-1.0..=1.0).contains(&y) {
        return Err(Error::Domain(format!("({x}, {y}) outside [-1, 1]^2")));
    }
    Ok(x * (1.0 - safe_exp((y - 1.0) / eps)) / (1.0 - safe_exp(-2.0 / eps)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind1D {
    /// `-eps u'' + u' = 0`, `u(0) = 1 - exp(-1/eps)`, `u(1) = 0`.
    Primary,
    /// `-eps u'' + u' = 1`, `u(0) = u(1) = 0`.
    Forced,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Problem1D {
    epsilon: f64,
    kind: Kind1D,
}

impl Problem1D {
    pub fn new(epsilon: f64, kind: Kind1D) -> Result<Self> {
        check_eps(epsilon)?;
        Ok(Self { epsilon, kind })
    }

    pub fn primary(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, Kind1D::Primary)
    }

    pub fn forced(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, Kind1D::Forced)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kind(&self) -> Kind1D {
        self.kind
    }

    /// Right-hand side `f` of `-eps u'' + u' = f`.
    pub fn rhs(&self) -> f64 {
        match self.kind {
            Kind1D::Primary => 0.0,
            Kind1D::Forced => 1.0,
        }
    }

    /// `[(0, u(0)), (1, u(1))]`.
    pub fn boundary(&self) -> [(f64, f64); 2] {
        match self.kind {
            Kind1D::Primary => [(0.0, 1.0 - safe_exp(-1.0 / self.epsilon)), (1.0, 0.0)],
            Kind1D::Forced => [(0.0, 0.0), (1.0, 0.0)],
        }
    }

    pub fn exact(&self, x: f64) -> Result<f64> {
        match self.kind {
            Kind1D::Primary => exact_u_1d(x, self.epsilon),
            Kind1D::Forced => {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::Domain(format!("x = {x} outside [0, 1]")));
                }
                let e = self.epsilon;
                let tail = safe_exp(-1.0 / e);
                Ok(x - (safe_exp((x - 1.0) / e) - tail) / (1.0 - tail))
            }
        }
    }

    /// Solution of the `eps = 0` problem with only the inflow condition.
    pub fn reduced(&self, x: f64) -> f64 {
        reduced_u_1d(self.kind, x)
    }

    /// Targets for the corrector of the reduced solution: `u(x_b) - u_0(x_b)`.
    pub fn corrector_boundary_targets(&self) -> [(f64, f64); 2] {
        let [(x0, g0), (x1, g1)] = self.boundary();
        [(x0, g0 - self.reduced(x0)), (x1, g1 - self.reduced(x1))]
    }
}

pub fn reduced_u_1d(kind: Kind1D, x: f64) -> f64 {
    match kind {
        Kind1D::Primary => 1.0,
        Kind1D::Forced => x,
    }
}

/// `-eps u_xx - eps u_yy + u_y = 0` on `(-1, 1)^2`, velocity `(0, 1)`.
///
/// Dirichlet data on all four edges is the trace of the exact solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Problem2D {
    epsilon: f64,
}

impl Problem2D {
    pub fn new(epsilon: f64) -> Result<Self> {
        check_eps(epsilon)?;
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn exact(&self, x: f64, y: f64) -> Result<f64> {
        exact_u_2d(x, y, self.epsilon)
    }

    pub fn reduced(&self, x: f64, _y: f64) -> f64 {
        x
    }

    /// `n` equispaced points on each edge with corrector target
    /// `u(x, y) - x`. Corners appear once per edge that contains them.
    pub fn corrector_boundary_targets(&self, n: usize) -> Result<Vec<([f64; 2], f64)>> {
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 points per edge, got {n}")));
        }
        let coord = |k: usize| -1.0 + 2.0 * k as f64 / (n - 1) as f64;
        let mut out = Vec::with_capacity(4 * n);
        for k in 0..n {
            let s = coord(k);
            for (x, y) in [(s, -1.0), (s, 1.0), (-1.0, s), (1.0, s)] {
                out.push(([x, y], self.exact(x, y)? - self.reduced(x, y)));
            }
        }
        Ok(out)
    }
}

/// `-eps c'' + c'`: residual of the corrector of the reduced solution.
pub fn residual_reduced(c: Jet, eps: f64) -> f64 {
    -eps * c.d2 + c.d1
}

/// `-eps c'' + c' + uhat'` where `uhat` is the piecewise-linear FDM
/// interpolant and `uhat_slope` its slope on the interval containing `x`.
pub fn residual_correct_fdm(c: Jet, uhat_slope: f64, eps: f64) -> f64 {
    -eps * c.d2 + c.d1 + uhat_slope
}

/// `-eps (c_xx + c_yy) + c_y` from jets along x and along y at one point.
pub fn residual_2d(cx: Jet, cy: Jet, eps: f64) -> f64 {
    -eps * (cx.d2 + cy.d2) + cy.d1
}
