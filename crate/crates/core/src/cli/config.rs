//! Flat `key = value` experiment configuration.
//!
//! One entry per line, `#` starts a comment. List values are comma
//! separated and may be wrapped in brackets: `transform.a = [1, 10]`.
//! See `docs/config-format.md` for every key.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::problems::{Kind1D, Problem1D, Problem2D};
use crate::trainer::Schedule;
use crate::transform::AffineTransform;

pub const KEYS: &[&str] = &[
    "problem",
    "epsilon",
    "seed",
    "net.dims",
    "transform.a",
    "transform.b",
    "samples.res_div",
    "samples.n",
    "fdm.n",
    "adam.epochs",
    "adam.lr",
    "adam.beta1",
    "adam.beta2",
    "adam.eps",
    "lbfgs.epochs",
    "correction.iterations",
    "sweep.runs",
    "ntk.k",
    "ntk.snapshot",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Primary1D,
    Forced1D,
    Cd2D,
}

impl ProblemKind {
    pub fn dim(self) -> usize {
        match self {
            ProblemKind::Cd2D => 2,
            _ => 1,
        }
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primary1d" => Ok(ProblemKind::Primary1D),
            "forced1d" => Ok(ProblemKind::Forced1D),
            "cd2d" => Ok(ProblemKind::Cd2D),
            other => Err(Error::Config(format!(
                "problem must be primary1d, forced1d or cd2d, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Primary1D => "primary1d",
            ProblemKind::Forced1D => "forced1d",
            ProblemKind::Cd2D => "cd2d",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Snapshot {
    Init,
    Trained,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub epsilon: f64,
    pub seed: u64,
    pub dims: Vec<usize>,
    pub transform: AffineTransform,
    pub res_div: usize,
    pub grid_n: usize,
    pub fdm_n: usize,
    pub schedule: Schedule,
    pub iterations: usize,
    pub sweep_runs: usize,
    pub ntk_k: usize,
    pub snapshot: Snapshot,
    /// Text the config was parsed from.
    pub source: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let get = |k: &str| entries.get(k).map(String::as_str);

        let epsilon: f64 = match get("epsilon") {
            Some(v) => parse_value("epsilon", v)?,
            None => return Err(Error::Config("missing required key `epsilon`".into())),
        };
        let problem = match get("problem") {
            Some(v) => v.parse()?,
            None => ProblemKind::Primary1D,
        };
        let dim = problem.dim();
        let dims = match get("net.dims") {
            Some(v) => parse_list("net.dims", v)?,
            None if dim == 2 => vec![2, 5, 1],
            None => vec![1, 20, 1],
        };
        let a = match get("transform.a") {
            Some(v) => broadcast("transform.a", parse_list("transform.a", v)?, dim)?,
            None => vec![1.0; dim],
        };
        let b = match get("transform.b") {
            Some(v) => broadcast("transform.b", parse_list("transform.b", v)?, dim)?,
            None => vec![0.0; dim],
        };
        let mut adam = AdamConfig::default();
        opt(&entries, "adam.lr", &mut adam.lr)?;
        opt(&entries, "adam.beta1", &mut adam.beta1)?;
        opt(&entries, "adam.beta2", &mut adam.beta2)?;
        opt(&entries, "adam.eps", &mut adam.eps)?;
        let mut schedule = Schedule::new(10_000, 10_000);
        schedule.adam = adam;
        opt(&entries, "adam.epochs", &mut schedule.adam_epochs)?;
        opt(&entries, "lbfgs.epochs", &mut schedule.lbfgs_epochs)?;

        let mut cfg = Self {
            problem,
            epsilon,
            seed: 0,
            dims,
            transform: AffineTransform::new(a, b)?,
            res_div: 128,
            grid_n: 129,
            fdm_n: 32,
            schedule,
            iterations: 3,
            sweep_runs: 20,
            ntk_k: 6,
            snapshot: Snapshot::Init,
            source: text.to_string(),
        };
        opt(&entries, "seed", &mut cfg.seed)?;
        opt(&entries, "samples.res_div", &mut cfg.res_div)?;
        opt(&entries, "samples.n", &mut cfg.grid_n)?;
        opt(&entries, "fdm.n", &mut cfg.fdm_n)?;
        opt(&entries, "correction.iterations", &mut cfg.iterations)?;
        opt(&entries, "sweep.runs", &mut cfg.sweep_runs)?;
        opt(&entries, "ntk.k", &mut cfg.ntk_k)?;
        if let Some(v) = get("ntk.snapshot") {
            cfg.snapshot = match v {
                "init" => Snapshot::Init,
                "trained" => Snapshot::Trained,
                other => {
                    return Err(Error::Config(format!(
                        "ntk.snapshot must be init or trained, got `{other}`"
                    )))
                }
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let d = self.problem.dim();
        if self.dims.len() < 2 || self.dims[0] != d || *self.dims.last().unwrap() != 1 {
            return Err(Error::Config(format!(
                "net.dims must start with {d} and end with 1, got {:?}",
                self.dims
            )));
        }
        if self.adam_lr() <= 0.0 {
            return Err(Error::Config("adam.lr must be positive".into()));
        }
        Ok(())
    }

    fn adam_lr(&self) -> f64 {
        self.schedule.adam.lr
    }

    pub fn problem_1d(&self) -> Result<Problem1D> {
        match self.problem {
            ProblemKind::Primary1D => Problem1D::new(self.epsilon, Kind1D::Primary),
            ProblemKind::Forced1D => Problem1D::new(self.epsilon, Kind1D::Forced),
            ProblemKind::Cd2D => Err(Error::Config("this command needs a 1D problem, got cd2d".into())),
        }
    }

    pub fn problem_2d(&self) -> Result<Problem2D> {
        match self.problem {
            ProblemKind::Cd2D => Problem2D::new(self.epsilon),
            other => Err(Error::Config(format!("this command needs problem = cd2d, got {other}"))),
        }
    }
}

/// Key/value pairs of a config text, with unknown and duplicate keys
/// rejected.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("unknown configuration key `{k}` on line {}", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("key `{k}` given twice")));
        }
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse `{v}` for key `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(',')
        .map(|s| parse_value(key, s.trim()))
        .collect()
}

fn broadcast(key: &str, v: Vec<f64>, dim: usize) -> Result<Vec<f64>> {
    match v.len() {
        n if n == dim => Ok(v),
        1 => Ok(vec![v[0]; dim]),
        n => Err(Error::Config(format!("`{key}` has {n} entries for a {dim}-d problem"))),
    }
}

fn opt<T: FromStr>(entries: &BTreeMap<String, String>, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = entries.get(key) {
        *slot = parse_value(key, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::parse("epsilon = 1e-4\n").unwrap();
        assert_eq!(c.problem, ProblemKind::Primary1D);
        assert_eq!(c.dims, vec![1, 20, 1]);
        assert_eq!(c.schedule.adam_epochs, 10_000);
        assert_eq!(c.schedule.adam.lr, 1e-3);
        assert!(c.transform.is_identity());
    }

    #[test]
    fn full_example() {
        let text = "problem = cd2d # 2D\nepsilon=1e-4\ntransform.a = [1, 10]\ntransform.b = 0, -1\nadam.lr = 5e-4\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.dims, vec![2, 5, 1]);
        assert_eq!(c.transform.scale(), &[1.0, 10.0]);
        assert_eq!(c.transform.shift(), &[0.0, -1.0]);
        assert_eq!(c.schedule.adam.lr, 5e-4);
        assert_eq!(c.source, text);
    }

    #[test]
    fn errors_name_the_key() {
        let e = ExperimentConfig::parse("problem = primary1d\n").unwrap_err();
        assert!(e.to_string().contains("epsilon"));
        let e = ExperimentConfig::parse("epsilon = 0.1\nadam.learning_rate = 1\n").unwrap_err();
        assert!(e.to_string().contains("adam.learning_rate"));
        let e = ExperimentConfig::parse("epsilon = 0.1\nseed = x\n").unwrap_err();
        assert!(e.to_string().contains("seed"));
        assert!(ExperimentConfig::parse("epsilon = 0.1\nepsilon = 0.2\n").is_err());
        assert!(ExperimentConfig::parse("epsilon = 0.1\nnet.dims = 2,5,1\n").is_err());
    }
}
