//! Sample construction, PINN training, iterative FDM correction and the
//! seed-sweep outcome taxonomy.

mod loss;
mod samples;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fdm::{FdmSolution, PiecewiseLinear};
use crate::net::MLPParams;
use crate::optim::{AdamConfig, AdamState, LbfgsConfig, LbfgsState};
use crate::problems::{safe_exp, Kind1D, Problem1D, Problem2D};
use crate::rng::derive_seed;
use crate::transform::AffineTransform;

pub use loss::{pinn_loss, pinn_loss_and_gradient, LossParts, PinnLoss};
pub use samples::{fdm_residual_points, Mode, SampleSet};

/// Points of the 1D evaluation grid used for error metrics.
pub const EVAL_POINTS: usize = 1025;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub adam_epochs: usize,
    pub lbfgs_epochs: usize,
    pub adam: AdamConfig,
}

impl Schedule {
    pub fn new(adam_epochs: usize, lbfgs_epochs: usize) -> Self {
        Self {
            adam_epochs,
            lbfgs_epochs,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub parts: LossParts,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: MLPParams,
    /// Adam epochs log the loss at which their step was taken; L-BFGS
    /// epochs log the loss at the accepted point.
    pub history: Vec<LossRecord>,
    /// Loss once the Adam phase has finished.
    pub adam_final: LossParts,
    pub final_loss: LossParts,
    /// L-BFGS could not make progress and training stopped early.
    pub stalled: bool,
    pub lbfgs_iterations: usize,
}

/// Full-batch Adam followed by L-BFGS on the PINN loss.
pub fn train(
    mut params: MLPParams,
    transform: &AffineTransform,
    samples: &SampleSet,
    schedule: &Schedule,
) -> Result<TrainReport> {
    let points = samples.stacked_points();
    let mut flat = params.flatten();
    let mut history = Vec::with_capacity(schedule.adam_epochs + schedule.lbfgs_epochs);

    let mut adam = AdamState::new(flat.len(), schedule.adam);
    for epoch in 1..=schedule.adam_epochs {
        let (parts, grad) = loss::pinn_parts_and_gradient(&params, transform, samples, &points)
            .map_err(|e| e.with_context(format!("adam epoch {epoch}")))?;
        history.push(LossRecord { epoch, parts });
        adam.step(&mut flat, &grad.values)
            .map_err(|e| e.with_context(format!("adam epoch {epoch}")))?;
        params.set_flat(&flat)?;
    }
    let adam_final = pinn_loss(&params, transform, samples)?;
    if !adam_final.total.is_finite() {
        return Err(Error::numeric("loss is not finite after the Adam phase"));
    }

    let mut lbfgs = LbfgsState::new(LbfgsConfig::default());
    let mut stalled = false;
    let mut iterations = 0;
    let mut scratch = params.clone();
    let mut objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        scratch.set_flat(x)?;
        match loss::pinn_parts_and_gradient(&scratch, transform, samples, &points) {
            Ok((p, g)) => Ok((p.total, g.values)),
            Err(Error::Numeric { .. }) => Ok((f64::INFINITY, vec![0.0; x.len()])),
            Err(e) => Err(e),
        }
    };
    let mut final_loss = adam_final;
    for k in 1..=schedule.lbfgs_epochs {
        let epoch = schedule.adam_epochs + k;
        let step = lbfgs
            .step(&mut flat, &mut objective)
            .map_err(|e| e.with_context(format!("lbfgs epoch {epoch}")))?;
        if step.stalled {
            stalled = true;
            break;
        }
        iterations = k;
        params.set_flat(&flat)?;
        final_loss = pinn_loss(&params, transform, samples)?;
        history.push(LossRecord {
            epoch,
            parts: final_loss,
        });
    }
    params.set_flat(&flat)?;
    Ok(TrainReport {
        params,
        history,
        adam_final,
        final_loss,
        stalled,
        lbfgs_iterations: iterations,
    })
}

/// `x_i = i / (n - 1)`.
pub fn eval_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Trapezoidal L2 norm of nodal values on a uniform grid of [0, 1].
pub fn trapezoid_l2(values: &[f64]) -> f64 {
    let n = values.len();
    let h = 1.0 / (n - 1) as f64;
    let inner: f64 = values[1..n - 1].iter().map(|v| v * v).sum();
    (h * (inner + 0.5 * (values[0].powi(2) + values[n - 1].powi(2)))).sqrt()
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Corrector values `net(T(x))` at 1D points.
pub fn eval_corrector(params: &MLPParams, transform: &AffineTransform, x: &[f64]) -> Result<Vec<f64>> {
    let pts = ndarray::Array2::from_shape_vec((x.len(), 1), x.to_vec())
        .map_err(|e| Error::Shape(e.to_string()))?;
    params.forward_with(transform, &pts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionConfig {
    pub dims: Vec<usize>,
    pub transform: AffineTransform,
    pub schedule: Schedule,
    pub iterations: usize,
    /// Residual lattice is `k / res_div`.
    pub res_div: usize,
    /// Iteration `j` initializes its network from `derive_seed(seed, j)`.
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct CorrectionIteration {
    pub iteration: usize,
    /// `U^j` at the FDM nodes.
    pub nodal: Vec<f64>,
    pub max_error: f64,
    /// Trapezoidal L2 error of the interpolant of `U^j` on the evaluation grid.
    pub l2_error: f64,
    /// `None` for `U^0`.
    pub training: Option<TrainReport>,
}

#[derive(Clone, Debug)]
pub struct CorrectionRun {
    pub problem: Problem1D,
    pub nodes: Vec<f64>,
    /// Entry 0 is the FDM solution itself.
    pub iterations: Vec<CorrectionIteration>,
    /// Why the run ended before the requested number of iterations.
    pub stopped: Option<String>,
}

impl CorrectionRun {
    pub fn last(&self) -> &CorrectionIteration {
        self.iterations.last().expect("U^0 is always present")
    }

    pub fn max_errors(&self) -> Vec<f64> {
        self.iterations.iter().map(|it| it.max_error).collect()
    }

    /// All iterations ran and the nodal max error never increased.
    pub fn converged(&self) -> bool {
        self.stopped.is_none() && self.max_errors().windows(2).all(|w| w[1] <= w[0])
    }
}

fn nodal_metrics(problem: &Problem1D, nodes: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    let mut errs = Vec::with_capacity(nodes.len());
    for (x, u) in nodes.iter().zip(values) {
        errs.push(u - problem.exact(*x)?);
    }
    let interp = PiecewiseLinear::new(values.to_vec())?;
    let grid = eval_grid(EVAL_POINTS);
    let mut diff = Vec::with_capacity(grid.len());
    for &x in &grid {
        diff.push(interp.evaluate(x)? - problem.exact(x)?);
    }
    Ok((max_abs(errs), trapezoid_l2(&diff)))
}

/// Repeatedly trains a fresh corrector against the interpolant of the
/// current nodal values and adds it at the nodes.
pub fn correct_fdm_iteratively(
    problem: &Problem1D,
    fdm: &FdmSolution,
    cfg: &CorrectionConfig,
) -> Result<CorrectionRun> {
    if cfg.iterations < 1 {
        return Err(Error::Config("correction needs at least one iteration".into()));
    }
    let (max0, l20) = nodal_metrics(problem, &fdm.nodes, &fdm.values)?;
    let mut run = CorrectionRun {
        problem: *problem,
        nodes: fdm.nodes.clone(),
        iterations: vec![CorrectionIteration {
            iteration: 0,
            nodal: fdm.values.clone(),
            max_error: max0,
            l2_error: l20,
            training: None,
        }],
        stopped: None,
    };
    for j in 1..=cfg.iterations {
        let prev = run.last().nodal.clone();
        let uhat = PiecewiseLinear::new(prev.clone())?;
        let samples = SampleSet::fdm(problem, &uhat, cfg.res_div)?;
        let net = MLPParams::init_xavier(&cfg.dims, derive_seed(cfg.seed, j as u64))?;
        let report = match train(net, &cfg.transform, &samples, &cfg.schedule) {
            Ok(r) => r,
            Err(e @ Error::Numeric { .. }) => {
                run.stopped = Some(format!("iteration {j}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let c = eval_corrector(&report.params, &cfg.transform, &run.nodes)?;
        let nodal: Vec<f64> = prev.iter().zip(&c).map(|(u, c)| u + c).collect();
        if nodal.iter().any(|v| !v.is_finite()) {
            run.stopped = Some(format!("iteration {j}: non-finite corrected values"));
            break;
        }
        let (max_error, l2_error) = nodal_metrics(problem, &run.nodes, &nodal)?;
        run.iterations.push(CorrectionIteration {
            iteration: j,
            nodal,
            max_error,
            l2_error,
            training: Some(report),
        });
    }
    Ok(run)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Accurate,
    OppositeFlow,
    Linear,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Accurate => "accurate",
            Label::OppositeFlow => "opposite-flow",
            Label::Linear => "linear",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub label: Label,
    pub d_exact: f64,
    pub d_opposite: f64,
    pub d_linear: f64,
}

/// Layer at the inflow boundary with the problem's boundary values: the
/// solution of the problem with the convection sign reversed.
pub fn opposite_flow(problem: &Problem1D, x: f64) -> Result<f64> {
    let eps = problem.epsilon();
    match problem.kind() {
        Kind1D::Primary => Ok(safe_exp(-x / eps) - safe_exp(-1.0 / eps)),
        Kind1D::Forced => problem.exact(1.0 - x),
    }
}

/// Straight line through the two boundary values.
pub fn boundary_line(problem: &Problem1D, x: f64) -> f64 {
    let [(_, g0), (_, g1)] = problem.boundary();
    g0 + (g1 - g0) * x
}

/// Nearest of the three reference shapes in trapezoidal L2. `values` are
/// samples of an approximation on an equispaced grid of [0, 1].
pub fn classify_outcome(values: &[f64], problem: &Problem1D) -> Result<Outcome> {
    if values.len() < 257 {
        return Err(Error::Config(format!(
            "classification needs at least 257 grid points, got {}",
            values.len()
        )));
    }
    let grid = eval_grid(values.len());
    let mut de = Vec::with_capacity(grid.len());
    let mut dopp = Vec::with_capacity(grid.len());
    let mut dlin = Vec::with_capacity(grid.len());
    for (&x, &v) in grid.iter().zip(values) {
        de.push(v - problem.exact(x)?);
        dopp.push(v - opposite_flow(problem, x)?);
        dlin.push(v - boundary_line(problem, x));
    }
    let (d_exact, d_opposite, d_linear) = (trapezoid_l2(&de), trapezoid_l2(&dopp), trapezoid_l2(&dlin));
    let label = if d_exact <= d_opposite && d_exact <= d_linear {
        Label::Accurate
    } else if d_opposite <= d_linear {
        Label::OppositeFlow
    } else {
        Label::Linear
    };
    Ok(Outcome {
        label,
        d_exact,
        d_opposite,
        d_linear,
    })
}

#[derive(Clone, Debug)]
pub struct ReducedRun {
    pub report: TrainReport,
    pub grid: Vec<f64>,
    /// `u_0 + c` on the grid.
    pub approx: Vec<f64>,
    pub outcome: Outcome,
    pub l2_error: f64,
    pub max_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedConfig {
    pub problem: Problem1D,
    pub dims: Vec<usize>,
    pub transform: AffineTransform,
    pub schedule: Schedule,
    pub res_div: usize,
}

/// Trains one corrector of the reduced solution from `seed`.
pub fn train_reduced(cfg: &ReducedConfig, seed: u64) -> Result<ReducedRun> {
    let samples = SampleSet::reduced(&cfg.problem, cfg.res_div)?;
    let net = MLPParams::init_xavier(&cfg.dims, seed)?;
    let report = train(net, &cfg.transform, &samples, &cfg.schedule)?;
    let grid = eval_grid(EVAL_POINTS);
    let c = eval_corrector(&report.params, &cfg.transform, &grid)?;
    let approx: Vec<f64> = grid
        .iter()
        .zip(&c)
        .map(|(&x, c)| cfg.problem.reduced(x) + c)
        .collect();
    let outcome = classify_outcome(&approx, &cfg.problem)?;
    let mut diff = Vec::with_capacity(grid.len());
    for (&x, &u) in grid.iter().zip(&approx) {
        diff.push(u - cfg.problem.exact(x)?);
    }
    Ok(ReducedRun {
        report,
        l2_error: trapezoid_l2(&diff),
        max_error: max_abs(diff.iter().copied()),
        grid,
        approx,
        outcome,
    })
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub seed: u64,
    pub outcome: std::result::Result<Outcome, String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepSummary {
    pub accurate: usize,
    pub opposite: usize,
    pub linear: usize,
    pub failed: usize,
}

impl SweepSummary {
    pub fn of(rows: &[SweepRow]) -> Self {
        let mut s = Self::default();
        for r in rows {
            match &r.outcome {
                Ok(o) => match o.label {
                    Label::Accurate => s.accurate += 1,
                    Label::OppositeFlow => s.opposite += 1,
                    Label::Linear => s.linear += 1,
                },
                Err(_) => s.failed += 1,
            }
        }
        s
    }

    pub fn total(&self) -> usize {
        self.accurate + self.opposite + self.linear + self.failed
    }

    pub fn accurate_fraction(&self) -> f64 {
        self.accurate as f64 / self.total().max(1) as f64
    }
}

/// One independent reduced-mode run per seed, in parallel. Runs that fail
/// are recorded and do not stop the sweep; rows come back in seed order.
pub fn seed_sweep(cfg: &ReducedConfig, seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!("a sweep needs at least 2 seeds, got {}", seeds.len())));
    }
    Ok(seeds
        .par_iter()
        .map(|&seed| SweepRow {
            seed,
            outcome: train_reduced(cfg, seed)
                .map(|r| r.outcome)
                .map_err(|e| e.to_string()),
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct TwoDRun {
    pub report: TrainReport,
    /// Lattice coordinates, `n` per axis.
    pub axis: Vec<f64>,
    /// `x + c` at lattice point `(axis[i], axis[j])`, stored at `i * n + j`.
    pub approx: Vec<f64>,
    pub exact: Vec<f64>,
    pub l2_error: f64,
}

/// Trains the 2D corrector of `u_0 = x` and measures its L2 error on the
/// full `n x n` lattice with the 2D trapezoidal rule.
pub fn train_2d(
    problem: &Problem2D,
    dims: &[usize],
    transform: &AffineTransform,
    schedule: &Schedule,
    seed: u64,
    n: usize,
) -> Result<TwoDRun> {
    let samples = SampleSet::two_d(problem, n)?;
    let net = MLPParams::init_xavier(dims, seed)?;
    let report = train(net, transform, &samples, schedule)?;
    let axis: Vec<f64> = (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect();
    let mut pts = ndarray::Array2::zeros((n * n, 2));
    for (i, &x) in axis.iter().enumerate() {
        for (j, &y) in axis.iter().enumerate() {
            pts[[i * n + j, 0]] = x;
            pts[[i * n + j, 1]] = y;
        }
    }
    let c = report.params.forward_with(transform, &pts)?;
    let mut approx = Vec::with_capacity(n * n);
    let mut exact = Vec::with_capacity(n * n);
    let h = 2.0 / (n - 1) as f64;
    let mut acc = 0.0;
    for (i, &x) in axis.iter().enumerate() {
        for (j, &y) in axis.iter().enumerate() {
            let u = x + c[i * n + j];
            let e = problem.exact(x, y)?;
            let wx = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let wy = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            acc += wx * wy * (u - e).powi(2);
            approx.push(u);
            exact.push(e);
        }
    }
    Ok(TwoDRun {
        report,
        axis,
        approx,
        exact,
        l2_error: (h * h * acc).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdm::solve_central;

    #[test]
    fn empty_schedule_keeps_params() {
        let p = Problem1D::primary(0.1).unwrap();
        let s = SampleSet::reduced(&p, 16).unwrap();
        let net = MLPParams::init_xavier(&[1, 4, 1], 1).unwrap();
        let r = train(net.clone(), &AffineTransform::identity(1), &s, &Schedule::new(0, 0)).unwrap();
        assert_eq!(r.params, net);
        assert!(r.history.is_empty());
    }

    #[test]
    fn lbfgs_history_is_monotone() {
        let p = Problem1D::primary(0.1).unwrap();
        let s = SampleSet::reduced(&p, 32).unwrap();
        let net = MLPParams::init_xavier(&[1, 6, 1], 5).unwrap();
        let r = train(net, &AffineTransform::identity(1), &s, &Schedule::new(50, 60)).unwrap();
        let lb: Vec<f64> = r.history[50..].iter().map(|h| h.parts.total).collect();
        assert!(r.adam_final.total >= lb[0]);
        assert!(lb.windows(2).all(|w| w[1] <= w[0]));
        for h in &r.history {
            assert!(h.parts.l_u >= 0.0 && h.parts.l_r >= 0.0);
            assert_eq!(h.parts.total, h.parts.l_u + h.parts.l_r);
        }
    }

    #[test]
    fn zero_epoch_correction_is_identity() {
        let p = Problem1D::primary(0.01).unwrap();
        let fdm = solve_central(&p, 32).unwrap();
        let cfg = CorrectionConfig {
            dims: vec![1, 4, 1],
            transform: AffineTransform::identity(1),
            schedule: Schedule::new(0, 0),
            iterations: 1,
            res_div: 128,
            seed: 0,
        };
        let run = correct_fdm_iteratively(&p, &fdm, &cfg).unwrap();
        let c = eval_corrector(&run.last().training.as_ref().unwrap().params, &cfg.transform, &run.nodes).unwrap();
        for ((u1, u0), c) in run.last().nodal.iter().zip(&fdm.values).zip(&c) {
            assert_eq!(*u1, u0 + c);
        }
    }

    #[test]
    fn classify_references() {
        let p = Problem1D::primary(1e-3).unwrap();
        let grid = eval_grid(257);
        let exact: Vec<f64> = grid.iter().map(|&x| p.exact(x).unwrap()).collect();
        assert_eq!(classify_outcome(&exact, &p).unwrap().label, Label::Accurate);
        let opp: Vec<f64> = grid.iter().map(|&x| opposite_flow(&p, x).unwrap()).collect();
        assert_eq!(classify_outcome(&opp, &p).unwrap().label, Label::OppositeFlow);
        let line: Vec<f64> = grid.iter().map(|&x| boundary_line(&p, x)).collect();
        let o = classify_outcome(&line, &p).unwrap();
        assert_eq!(o.label, Label::Linear);
        assert_eq!(o.d_linear, 0.0);
        assert!(classify_outcome(&exact[..100], &p).is_err());
    }

    #[test]
    fn opposite_flow_matches_boundaries() {
        let p = Problem1D::primary(0.05).unwrap();
        let [(_, g0), (_, g1)] = p.boundary();
        assert!((opposite_flow(&p, 0.0).unwrap() - g0).abs() < 1e-15);
        assert!((opposite_flow(&p, 1.0).unwrap() - g1).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_of_constant() {
        assert!((trapezoid_l2(&vec![2.0; 1025]) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sweep_needs_two_seeds() {
        let cfg = ReducedConfig {
            problem: Problem1D::primary(0.1).unwrap(),
            dims: vec![1, 3, 1],
            transform: AffineTransform::identity(1),
            schedule: Schedule::new(5, 5),
            res_div: 16,
        };
        assert!(seed_sweep(&cfg, &[1]).is_err());
        let rows = seed_sweep(&cfg, &[1, 2, 1]).unwrap();
        assert_eq!(rows[0].outcome, rows[2].outcome);
    }
}
