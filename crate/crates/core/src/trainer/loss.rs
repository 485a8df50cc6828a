use ndarray::Array2;

use crate::error::{Error, Result};
use crate::net::trace::{param_gradient, JetBatch, OutputLoss, Trace};
use crate::net::{FlatGradient, MLPParams};
use crate::transform::AffineTransform;

use super::samples::SampleSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub l_u: f64,
    pub l_r: f64,
    pub total: f64,
}

/// Mean-squared boundary mismatch plus mean-squared residual of `uhat + c`.
pub struct PinnLoss<'a> {
    samples: &'a SampleSet,
}

impl<'a> PinnLoss<'a> {
    pub fn new(samples: &'a SampleSet) -> Self {
        Self { samples }
    }

    fn residuals(&self, out: &JetBatch) -> Vec<f64> {
        let s = self.samples;
        let nu = s.n_u();
        let eps = s.epsilon;
        let flow = s.flow_coord();
        let d1 = out.d1(flow);
        (0..s.n_r())
            .map(|i| {
                let k = nu + i;
                let lap: f64 = (0..s.dim).map(|c| out.d2(c)[k]).sum();
                -eps * lap + d1[k] + s.offsets[i]
            })
            .collect()
    }

    pub fn parts(&self, out: &JetBatch) -> LossParts {
        let s = self.samples;
        let l_u = if s.n_u() == 0 {
            0.0
        } else {
            let v = out.values();
            s.boundary
                .iter()
                .enumerate()
                .map(|(i, (_, t))| (v[i] - t).powi(2))
                .sum::<f64>()
                / s.n_u() as f64
        };
        let l_r = if s.n_r() == 0 {
            0.0
        } else {
            self.residuals(out).iter().map(|r| r * r).sum::<f64>() / s.n_r() as f64
        };
        LossParts {
            l_u,
            l_r,
            total: l_u + l_r,
        }
    }
}

impl OutputLoss for PinnLoss<'_> {
    fn evaluate(&self, out: &JetBatch) -> Result<(f64, JetBatch)> {
        let s = self.samples;
        let parts = self.parts(out);
        if !parts.total.is_finite() {
            return Err(Error::numeric("PINN loss is not finite"));
        }
        let mut seed = JetBatch::zeros(out.batch(), out.coords());
        let nu = s.n_u();
        for (i, (_, t)) in s.boundary.iter().enumerate() {
            seed.values_mut()[i] = 2.0 * (out.values()[i] - t) / nu as f64;
        }
        let scale = 2.0 / s.n_r().max(1) as f64;
        let r = self.residuals(out);
        let flow = s.flow_coord();
        for (i, ri) in r.iter().enumerate() {
            let g = scale * ri;
            seed.d1_mut(flow)[nu + i] += g;
            for c in 0..s.dim {
                seed.d2_mut(c)[nu + i] -= s.epsilon * g;
            }
        }
        Ok((parts.total, seed))
    }
}

/// Loss components of the corrector `c = net o T` on `samples`.
pub fn pinn_loss(
    params: &MLPParams,
    transform: &AffineTransform,
    samples: &SampleSet,
) -> Result<LossParts> {
    check_input(params, samples)?;
    let coords: Vec<usize> = (0..samples.dim).collect();
    let tr = Trace::forward(params, transform, &samples.stacked_points(), &coords)?;
    Ok(PinnLoss::new(samples).parts(tr.output()))
}

pub fn pinn_loss_and_gradient(
    params: &MLPParams,
    transform: &AffineTransform,
    samples: &SampleSet,
) -> Result<(f64, FlatGradient)> {
    check_input(params, samples)?;
    param_gradient(params, transform, &samples.stacked_points(), &PinnLoss::new(samples))
}

/// Like [`pinn_loss_and_gradient`] but with both loss components.
pub(crate) fn pinn_parts_and_gradient(
    params: &MLPParams,
    transform: &AffineTransform,
    samples: &SampleSet,
    points: &Array2<f64>,
) -> Result<(LossParts, FlatGradient)> {
    check_input(params, samples)?;
    let coords: Vec<usize> = (0..samples.dim).collect();
    let tr = Trace::forward(params, transform, points, &coords)?;
    let loss = PinnLoss::new(samples);
    let (_, seed) = loss.evaluate(tr.output())?;
    let parts = loss.parts(tr.output());
    Ok((parts, tr.gradient(&seed)?))
}

fn check_input(params: &MLPParams, samples: &SampleSet) -> Result<()> {
    if params.input_dim() != samples.dim {
        return Err(Error::Shape(format!(
            "{}-d samples for a network with {} inputs",
            samples.dim,
            params.input_dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Problem1D;

    #[test]
    fn zero_corrector_reduced_loss() {
        let p = Problem1D::primary(1e-4).unwrap();
        let s = SampleSet::reduced(&p, 128).unwrap();
        let net = MLPParams::zeros(&[1, 20, 1]).unwrap();
        let l = pinn_loss(&net, &AffineTransform::identity(1), &s).unwrap();
        assert_eq!(l.l_u, 0.5);
        assert_eq!(l.l_r, 0.0);
        assert_eq!(l.total, 0.5);
    }

    #[test]
    fn repeated_residuals_keep_mean() {
        let p = Problem1D::primary(0.1).unwrap();
        let s = SampleSet::reduced(&p, 16).unwrap();
        let net = MLPParams::init_xavier(&[1, 6, 1], 3).unwrap();
        let t = AffineTransform::identity(1);
        let a = pinn_loss(&net, &t, &s).unwrap();
        let b = pinn_loss(&net, &t, &s.with_repeated_residuals(2)).unwrap();
        assert!((a.l_r - b.l_r).abs() <= 1e-15 * a.l_r);
        assert_eq!(a.l_u, b.l_u);
    }

    #[test]
    fn gradient_value_matches_loss() {
        let p = Problem1D::primary(0.05).unwrap();
        let s = SampleSet::reduced(&p, 32).unwrap();
        let net = MLPParams::init_xavier(&[1, 5, 1], 9).unwrap();
        let t = AffineTransform::scalar(2.0, -1.0).unwrap();
        let (f, g) = pinn_loss_and_gradient(&net, &t, &s).unwrap();
        assert_eq!(f, pinn_loss(&net, &t, &s).unwrap().total);
        assert_eq!(g.len(), net.num_params());
    }
}
