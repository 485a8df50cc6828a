//! Experiment runner behind the `cdpinn` binary.
//!
//! Every subcommand writes into a staging directory next to `--out` and
//! moves the files over only once the whole run succeeded, so a failed run
//! leaves nothing behind.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::fdm::{detect_oscillation, solve_central};
use crate::net::{fmt_f64, MLPParams};
use crate::ntk::{assemble_kernel, convergence_rate, eig_sym, top_eigenvectors, validate};
use crate::rng::derive_seed;
use crate::trainer::{
    correct_fdm_iteratively, seed_sweep, train, train_2d, train_reduced, CorrectionConfig,
    LossRecord, ReducedConfig, SampleSet, SweepSummary,
};

pub use config::{ExperimentConfig, ProblemKind, Snapshot};

/// Largest kernel `ntk-analyze` will decompose.
const MAX_KERNEL: usize = 4096;

#[derive(Debug, Parser)]
#[command(name = "cdpinn", version, about = "PINN correctors for convection-diffusion problems")]
pub struct Cli {
    /// Worker threads for parallel runs and kernel assembly.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Central finite differences on a uniform mesh.
    FdmSolve(FdmArgs),
    /// Iterative PINN correction of the FDM solution.
    TrainCorrectFdm(RunArgs),
    /// PINN corrector of the reduced solution.
    TrainCorrectReduced(RunArgs),
    /// PINN corrector of the 2D problem.
    #[command(name = "train-2d")]
    Train2d(RunArgs),
    /// Reduced-mode runs over derived seeds, classified by outcome.
    SweepSeeds(RunArgs),
    /// Tangent kernel spectrum and eigenvectors.
    NtkAnalyze(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FdmArgs {
    /// Config file; `--N` and `--epsilon` override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Files of one run, written to disk only on success.
struct Output {
    files: Vec<(String, String)>,
    meta: Vec<(String, String)>,
}

impl Output {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            meta: Vec::new(),
        }
    }

    fn file(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body));
    }

    fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }
}

fn csv_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

fn loss_csv(history: &[LossRecord], iteration: Option<usize>) -> String {
    let mut s = String::new();
    append_loss(&mut s, history, iteration);
    s
}

fn append_loss(s: &mut String, history: &[LossRecord], iteration: Option<usize>) {
    for r in history {
        let mut cells = Vec::with_capacity(5);
        if let Some(j) = iteration {
            cells.push(j.to_string());
        }
        cells.push(r.epoch.to_string());
        cells.push(fmt_f64(r.parts.l_u));
        cells.push(fmt_f64(r.parts.l_r));
        cells.push(fmt_f64(r.parts.total));
        csv_row(s, &cells);
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot set up thread pool: {e}")))?;
    }
    let start = Instant::now();
    let (out_dir, cfg, name) = match &cli.command {
        Command::FdmSolve(a) => (&a.out, fdm_config(a)?, "fdm-solve"),
        Command::TrainCorrectFdm(a) => (&a.out, load(&a.config)?, "train-correct-fdm"),
        Command::TrainCorrectReduced(a) => (&a.out, load(&a.config)?, "train-correct-reduced"),
        Command::Train2d(a) => (&a.out, load(&a.config)?, "train-2d"),
        Command::SweepSeeds(a) => (&a.out, load(&a.config)?, "sweep-seeds"),
        Command::NtkAnalyze(a) => (&a.out, load(&a.config)?, "ntk-analyze"),
    };
    let mut out = Output::new();
    out.meta("command", name);
    match &cli.command {
        Command::FdmSolve(_) => fdm_solve(&cfg, &mut out)?,
        Command::TrainCorrectFdm(_) => correct_fdm(&cfg, &mut out)?,
        Command::TrainCorrectReduced(_) => correct_reduced(&cfg, &mut out)?,
        Command::Train2d(_) => two_d(&cfg, &mut out)?,
        Command::SweepSeeds(_) => sweep(&cfg, &mut out)?,
        Command::NtkAnalyze(_) => ntk(&cfg, &mut out)?,
    }
    out.meta("wall_time_s", format!("{:.3}", start.elapsed().as_secs_f64()));
    out.file("config.echo", cfg.source.clone());
    let mut meta = String::from("key,value\n");
    for (k, v) in &out.meta {
        csv_row(&mut meta, &[k.clone(), v.clone()]);
    }
    out.file("run_meta.csv", meta);
    commit(out_dir, &out.files)
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
}

fn fdm_config(a: &FdmArgs) -> Result<ExperimentConfig> {
    let mut text = match &a.config {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut entries = config::parse_entries(&text)?;
    if let Some(n) = a.n {
        entries.insert("fdm.n".into(), n.to_string());
    }
    if let Some(e) = a.epsilon {
        entries.insert("epsilon".into(), format!("{e:?}"));
    }
    if a.n.is_some() || a.epsilon.is_some() {
        text = entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    }
    ExperimentConfig::parse(&text)
}

/// Write `files` to a staging directory, then move them into `dir`.
fn commit(dir: &Path, files: &[(String, String)]) -> Result<()> {
    let name = dir
        .file_name()
        .ok_or_else(|| Error::Config(format!("invalid output directory {}", dir.display())))?
        .to_string_lossy()
        .into_owned();
    let staging = dir.with_file_name(format!(".{name}.partial-{}", std::process::id()));
    let staged = (|| -> Result<()> {
        fs::create_dir_all(&staging)?;
        for (f, body) in files {
            fs::write(staging.join(f), body)?;
        }
        fs::create_dir_all(dir)?;
        for (f, _) in files {
            fs::rename(staging.join(f), dir.join(f))?;
        }
        Ok(())
    })();
    let _ = fs::remove_dir_all(&staging);
    staged
}

fn fdm_solve(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let p = cfg.problem_1d()?;
    let sol = solve_central(&p, cfg.fdm_n)?;
    let mut s = String::from("x,u_fdm,u_exact\n");
    let mut max_err = 0.0f64;
    for (&x, &u) in sol.nodes.iter().zip(&sol.values) {
        let e = p.exact(x)?;
        max_err = max_err.max((u - e).abs());
        csv_row(&mut s, &[fmt_f64(x), fmt_f64(u), fmt_f64(e)]);
    }
    out.file("solution.csv", s);
    out.meta("peclet", fmt_f64(sol.peclet));
    out.meta("oscillatory", detect_oscillation(&sol.values).oscillatory);
    out.meta("max_error", fmt_f64(max_err));
    Ok(())
}

fn correct_fdm(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let p = cfg.problem_1d()?;
    let fdm = solve_central(&p, cfg.fdm_n)?;
    let run = correct_fdm_iteratively(
        &p,
        &fdm,
        &CorrectionConfig {
            dims: cfg.dims.clone(),
            transform: cfg.transform.clone(),
            schedule: cfg.schedule,
            iterations: cfg.iterations,
            res_div: cfg.res_div,
            seed: cfg.seed,
        },
    )?;
    let mut loss = String::from("iteration,epoch,L_u,L_r,total\n");
    let mut iters = String::from("iteration,max_error,l2_error,final_loss\n");
    for it in &run.iterations {
        let fl = it.training.as_ref().map(|t| fmt_f64(t.final_loss.total)).unwrap_or_default();
        csv_row(
            &mut iters,
            &[it.iteration.to_string(), fmt_f64(it.max_error), fmt_f64(it.l2_error), fl],
        );
        if let Some(t) = &it.training {
            append_loss(&mut loss, &t.history, Some(it.iteration));
        }
    }
    let mut sol = String::from("x,u_exact,u_approx,u_fdm\n");
    for (i, &x) in run.nodes.iter().enumerate() {
        csv_row(
            &mut sol,
            &[fmt_f64(x), fmt_f64(p.exact(x)?), fmt_f64(run.last().nodal[i]), fmt_f64(fdm.values[i])],
        );
    }
    out.file("loss.csv", loss);
    out.file("iterations.csv", iters);
    out.file("solution.csv", sol);
    out.meta("iterations_run", run.iterations.len() - 1);
    out.meta("converged", run.converged());
    out.meta("fdm_max_error", fmt_f64(run.iterations[0].max_error));
    out.meta("max_error", fmt_f64(run.last().max_error));
    out.meta("l2_error", fmt_f64(run.last().l2_error));
    if let Some(msg) = &run.stopped {
        out.meta("stopped", msg.replace(',', ";"));
    }
    Ok(())
}

fn reduced_config(cfg: &ExperimentConfig) -> Result<ReducedConfig> {
    Ok(ReducedConfig {
        problem: cfg.problem_1d()?,
        dims: cfg.dims.clone(),
        transform: cfg.transform.clone(),
        schedule: cfg.schedule,
        res_div: cfg.res_div,
    })
}

fn correct_reduced(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let rc = reduced_config(cfg)?;
    let run = train_reduced(&rc, cfg.seed)?;
    let mut loss = String::from("epoch,L_u,L_r,total\n");
    loss.push_str(&loss_csv(&run.report.history, None));
    let mut sol = String::from("x,u_exact,u_approx\n");
    for (&x, &u) in run.grid.iter().zip(&run.approx) {
        csv_row(&mut sol, &[fmt_f64(x), fmt_f64(rc.problem.exact(x)?), fmt_f64(u)]);
    }
    let o = run.outcome;
    let mut oc = String::from("seed,label,d_exact,d_opposite,d_linear\n");
    csv_row(
        &mut oc,
        &[cfg.seed.to_string(), o.label.as_str().into(), fmt_f64(o.d_exact), fmt_f64(o.d_opposite), fmt_f64(o.d_linear)],
    );
    out.file("loss.csv", loss);
    out.file("solution.csv", sol);
    out.file("outcomes.csv", oc);
    out.file("params.txt", run.report.params.to_text());
    training_meta(out, &run.report);
    out.meta("label", o.label.as_str());
    out.meta("l2_error", fmt_f64(run.l2_error));
    out.meta("max_error", fmt_f64(run.max_error));
    Ok(())
}

fn training_meta(out: &mut Output, report: &crate::trainer::TrainReport) {
    out.meta("adam_final_loss", fmt_f64(report.adam_final.total));
    out.meta("final_L_u", fmt_f64(report.final_loss.l_u));
    out.meta("final_L_r", fmt_f64(report.final_loss.l_r));
    out.meta("final_loss", fmt_f64(report.final_loss.total));
    out.meta("lbfgs_iterations", report.lbfgs_iterations);
    out.meta("stalled", report.stalled);
}

fn two_d(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let p = cfg.problem_2d()?;
    let run = train_2d(&p, &cfg.dims, &cfg.transform, &cfg.schedule, cfg.seed, cfg.grid_n)?;
    let mut loss = String::from("epoch,L_u,L_r,total\n");
    loss.push_str(&loss_csv(&run.report.history, None));
    let n = run.axis.len();
    let mut sol = String::from("x,y,u_exact,u_approx\n");
    for (i, &x) in run.axis.iter().enumerate() {
        for (j, &y) in run.axis.iter().enumerate() {
            let k = i * n + j;
            csv_row(&mut sol, &[fmt_f64(x), fmt_f64(y), fmt_f64(run.exact[k]), fmt_f64(run.approx[k])]);
        }
    }
    out.file("loss.csv", loss);
    out.file("solution.csv", sol);
    out.file("params.txt", run.report.params.to_text());
    training_meta(out, &run.report);
    out.meta("l2_error", fmt_f64(run.l2_error));
    Ok(())
}

/// Per-run seeds of a sweep: `derive_seed(seed, i)` for `i = 0 .. runs`.
pub fn sweep_seeds(master: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|i| derive_seed(master, i)).collect()
}

fn sweep(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let rc = reduced_config(cfg)?;
    let rows = seed_sweep(&rc, &sweep_seeds(cfg.seed, cfg.sweep_runs))?;
    let mut oc = String::from("seed,label,d_exact,d_opposite,d_linear\n");
    for r in &rows {
        match &r.outcome {
            Ok(o) => csv_row(
                &mut oc,
                &[r.seed.to_string(), o.label.as_str().into(), fmt_f64(o.d_exact), fmt_f64(o.d_opposite), fmt_f64(o.d_linear)],
            ),
            Err(_) => csv_row(&mut oc, &[r.seed.to_string(), "failed".into(), String::new(), String::new(), String::new()]),
        }
    }
    let s = SweepSummary::of(&rows);
    out.file("outcomes.csv", oc);
    out.meta("runs", s.total());
    out.meta("accurate", s.accurate);
    out.meta("opposite_flow", s.opposite);
    out.meta("linear", s.linear);
    out.meta("failed", s.failed);
    out.meta("accurate_fraction", fmt_f64(s.accurate_fraction()));
    Ok(())
}

fn ntk(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let (samples, dims) = match cfg.problem {
        ProblemKind::Cd2D => (SampleSet::two_d(&cfg.problem_2d()?, cfg.grid_n)?, 2),
        _ => (SampleSet::reduced(&cfg.problem_1d()?, cfg.res_div)?, 1),
    };
    let n = samples.n_u() + samples.n_r();
    if n > MAX_KERNEL {
        return Err(Error::Config(format!(
            "kernel would be {n}x{n}; use fewer samples (at most {MAX_KERNEL} observables)"
        )));
    }
    let mut params = MLPParams::init_xavier(&cfg.dims, cfg.seed)?;
    if cfg.snapshot == Snapshot::Trained {
        let report = train(params, &cfg.transform, &samples, &cfg.schedule)?;
        training_meta(out, &report);
        params = report.params;
    }
    let kern = assemble_kernel(&params, &cfg.transform, &samples)?;
    let spec = eig_sym(&kern.k)?;
    let checks = validate(&kern, &spec);
    if !checks.passes() {
        return Err(Error::numeric(format!("tangent kernel failed validation: {checks:?}")));
    }
    let k = cfg.ntk_k.min(n);
    let top = top_eigenvectors(&kern, &spec, k)?;

    let mut ev = String::from("rank,lambda\n");
    for (i, l) in spec.eigenvalues().iter().enumerate() {
        csv_row(&mut ev, &[(i + 1).to_string(), fmt_f64(*l)]);
    }
    let mut header = if dims == 2 { vec!["x".to_string(), "y".to_string()] } else { vec!["x".to_string()] };
    header.extend((1..=k).map(|i| format!("v{i}")));
    let mut vecs = String::new();
    csv_row(&mut vecs, &header);
    for (p, v) in top.residual_rows() {
        let cells: Vec<String> = p.iter().chain(&v).map(|&x| fmt_f64(x)).collect();
        csv_row(&mut vecs, &cells);
    }
    let mut summary = String::from("Tr_Kuu,Tr_Krr,c,lambda_max,lambda_min\n");
    let c = convergence_rate(&kern);
    csv_row(
        &mut summary,
        &[fmt_f64(kern.tr_uu()), fmt_f64(kern.tr_rr()), fmt_f64(c), fmt_f64(spec.lambda_max()), fmt_f64(spec.lambda_min().max(0.0))],
    );
    out.file("eigenvalues.csv", ev);
    out.file("eigenvectors.csv", vecs);
    out.file("kernel_summary.csv", summary);
    out.meta("observables", n);
    out.meta("jacobi_sweeps", spec.sweeps);
    out.meta("trace_ratio", fmt_f64(kern.tr_rr() / kern.tr_uu()));
    if dims == 1 {
        let mut w = String::new();
        for i in 0..k {
            let _ = write!(w, "{}{}", if i > 0 { ";" } else { "" }, fmt_f64(top.steepest_gradient(i)?));
        }
        out.meta("steepest_gradient_x", w);
    }
    Ok(())
}
