use std::collections::VecDeque;

use super::dot;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsConfig {
    pub history: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_trials: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            c1: 1e-4,
            c2: 0.9,
            max_trials: 25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsStep {
    /// Accepted step length along the search direction (0 when stalled).
    pub step: f64,
    /// Loss at the returned parameters.
    pub loss: f64,
    pub stalled: bool,
    /// The quasi-Newton search failed and steepest descent was used.
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug)]
struct Probe {
    a: f64,
    f: f64,
    /// Directional derivative; NaN when the evaluation failed.
    df: f64,
}

#[derive(Clone, Debug)]
pub struct LbfgsState {
    pub config: LbfgsConfig,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    /// `(x, f(x), grad f(x))` at the last accepted point.
    cache: Option<(Vec<f64>, f64, Vec<f64>)>,
}

type Objective<'a> = dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

impl LbfgsState {
    pub fn new(config: LbfgsConfig) -> Self {
        Self {
            config,
            s: VecDeque::new(),
            y: VecDeque::new(),
            cache: None,
        }
    }

    pub fn history_len(&self) -> usize {
        self.s.len()
    }

    pub fn reset(&mut self) {
        self.s.clear();
        self.y.clear();
    }

    /// Two-loop recursion: `-H g` with `H_0 = (s'y / y'y) I`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&self.y[i], &self.s[i]);
            alpha[i] = rho * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        if k > 0 {
            let gamma = dot(&self.s[k - 1], &self.y[k - 1]) / dot(&self.y[k - 1], &self.y[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let rho = 1.0 / dot(&self.y[i], &self.s[i]);
            let beta = rho * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    /// One quasi-Newton iteration. `params` is updated in place only when a
    /// step is accepted.
    pub fn step(
        &mut self,
        params: &mut [f64],
        objective: &mut impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    ) -> Result<LbfgsStep> {
        let (f0, g0) = match &self.cache {
            Some((x, f, g)) if x.as_slice() == &*params => (*f, g.clone()),
            _ => {
                let (f, g) = objective(params)?;
                if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numeric("L-BFGS started from a non-finite point"));
                }
                (f, g)
            }
        };
        let gnorm = dot(&g0, &g0).sqrt();
        if gnorm == 0.0 {
            self.cache = Some((params.to_vec(), f0, g0));
            return Ok(LbfgsStep {
                step: 0.0,
                loss: f0,
                stalled: true,
                fallback: false,
            });
        }

        let mut d = self.direction(&g0);
        let mut dg = dot(&d, &g0);
        if !(dg < 0.0) {
            self.reset();
            d = g0.iter().map(|v| -v).collect();
            dg = -gnorm * gnorm;
        }
        let a0 = if self.s.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };

        let x0 = params.to_vec();
        let accepted = self.strong_wolfe(&x0, f0, dg, &d, a0, objective);
        let (a, f1, g1, fallback) = match accepted {
            Some((a, f, g)) => (a, f, g, false),
            None => {
                self.reset();
                d = g0.iter().map(|v| -v).collect();
                match self.backtrack(&x0, f0, -gnorm * gnorm, &d, a0, objective) {
                    Some((a, f, g)) => (a, f, g, true),
                    None => {
                        self.cache = Some((x0, f0, g0));
                        return Ok(LbfgsStep {
                            step: 0.0,
                            loss: f0,
                            stalled: true,
                            fallback: true,
                        });
                    }
                }
            }
        };

        let s: Vec<f64> = d.iter().map(|v| a * v).collect();
        let y: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-10 {
            if self.s.len() == self.config.history {
                self.s.pop_front();
                self.y.pop_front();
            }
            self.s.push_back(s.clone());
            self.y.push_back(y);
        }
        for (p, sv) in params.iter_mut().zip(&s) {
            *p += sv;
        }
        self.cache = Some((params.to_vec(), f1, g1));
        Ok(LbfgsStep {
            step: a,
            loss: f1,
            stalled: false,
            fallback,
        })
    }

    fn probe(
        x0: &[f64],
        d: &[f64],
        a: f64,
        objective: &mut Objective<'_>,
    ) -> (Probe, Option<Vec<f64>>) {
        let x: Vec<f64> = x0.iter().zip(d).map(|(x, d)| x + a * d).collect();
        match objective(&x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let df = dot(&g, d);
                (Probe { a, f, df }, Some(g))
            }
            _ => (
                Probe {
                    a,
                    f: f64::INFINITY,
                    df: f64::NAN,
                },
                None,
            ),
        }
    }

    /// Line search satisfying the strong Wolfe conditions (bracketing phase
    /// followed by zoom with safeguarded cubic interpolation).
    fn strong_wolfe(
        &self,
        x0: &[f64],
        f0: f64,
        df0: f64,
        d: &[f64],
        a_init: f64,
        objective: &mut Objective<'_>,
    ) -> Option<(f64, f64, Vec<f64>)> {
        let LbfgsConfig {
            c1, c2, max_trials, ..
        } = self.config;
        let armijo = |p: &Probe| p.f <= f0 + c1 * p.a * df0;
        let curvature = |p: &Probe| p.df.abs() <= -c2 * df0;

        let mut evals = 0;
        let mut prev = Probe {
            a: 0.0,
            f: f0,
            df: df0,
        };
        let mut prev_g: Option<Vec<f64>> = None;
        let mut a = a_init;
        let (mut lo, mut hi, mut lo_g);
        loop {
            if evals >= max_trials {
                return None;
            }
            let (p, g) = Self::probe(x0, d, a, objective);
            evals += 1;
            if !armijo(&p) || (evals > 1 && p.f >= prev.f) {
                lo = prev;
                hi = p;
                lo_g = prev_g;
                break;
            }
            if curvature(&p) {
                return g.map(|g| (p.a, p.f, g));
            }
            if p.df >= 0.0 {
                lo = p;
                hi = prev;
                lo_g = g;
                break;
            }
            prev = p;
            prev_g = g;
            a *= 2.0;
        }

        // zoom
        while evals < max_trials {
            let (left, right) = if lo.a < hi.a { (lo, hi) } else { (hi, lo) };
            let width = right.a - left.a;
            if width <= f64::EPSILON * right.a.abs().max(1e-300) {
                break;
            }
            let mut a = cubic_min(&left, &right).unwrap_or(0.5 * (left.a + right.a));
            let margin = 0.1 * width;
            if a < left.a + margin || a > right.a - margin {
                a = 0.5 * (left.a + right.a);
            }
            let (p, g) = Self::probe(x0, d, a, objective);
            evals += 1;
            if !armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if curvature(&p) {
                    return g.map(|g| (p.a, p.f, g));
                }
                if p.df * (hi.a - lo.a) >= 0.0 {
                    hi = lo;
                }
                lo = p;
                lo_g = g;
            }
        }
        // Out of budget: the best bracketing point still decreases the loss.
        match lo_g {
            Some(g) if lo.a > 0.0 && lo.f < f0 => Some((lo.a, lo.f, g)),
            _ => None,
        }
    }

    /// Armijo backtracking along `d`, halving the step.
    fn backtrack(
        &self,
        x0: &[f64],
        f0: f64,
        df0: f64,
        d: &[f64],
        a_init: f64,
        objective: &mut Objective<'_>,
    ) -> Option<(f64, f64, Vec<f64>)> {
        let mut a = a_init;
        for _ in 0..self.config.max_trials {
            let (p, g) = Self::probe(x0, d, a, objective);
            if p.f <= f0 + self.config.c1 * a * df0 && p.f < f0 {
                return g.map(|g| (a, p.f, g));
            }
            a *= 0.5;
        }
        None
    }
}

/// Minimizer of the cubic through two probes with known slopes.
fn cubic_min(p1: &Probe, p2: &Probe) -> Option<f64> {
    if !(p1.f.is_finite() && p2.f.is_finite() && p1.df.is_finite() && p2.df.is_finite()) {
        return None;
    }
    let d1 = p1.df + p2.df - 3.0 * (p1.f - p2.f) / (p1.a - p2.a);
    let disc = d1 * d1 - p1.df * p2.df;
    if disc < 0.0 {
        return None;
    }
    let d2 = disc.sqrt() * (p2.a - p1.a).signum();
    let a = p2.a - (p2.a - p1.a) * (p2.df + d2 - d1) / (p2.df - p1.df + 2.0 * d2);
    a.is_finite().then_some(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        // sum_i (i+1) (x_i - i)^2 plus a coupling term
        let n = x.len();
        let mut f = 0.0;
        let mut g = vec![0.0; n];
        for i in 0..n {
            let r = x[i] - i as f64;
            f += (i + 1) as f64 * r * r;
            g[i] += 2.0 * (i + 1) as f64 * r;
        }
        for i in 0..n - 1 {
            let c = x[i] - x[i + 1] + 1.0;
            f += 0.5 * c * c;
            g[i] += c;
            g[i + 1] -= c;
        }
        Ok((f, g))
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    #[test]
    fn convex_quadratic_converges() {
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let mut x = vec![3.0, -1.0, 0.5, 7.0, -4.0];
        let mut obj = quadratic;
        let mut gnorm = f64::INFINITY;
        for _ in 0..20 {
            let r = st.step(&mut x, &mut obj).unwrap();
            let (_, g) = quadratic(&x).unwrap();
            gnorm = dot(&g, &g).sqrt();
            if r.stalled || gnorm < 1e-8 {
                break;
            }
        }
        assert!(gnorm < 1e-8, "gradient norm {gnorm}");
    }

    #[test]
    fn rosenbrock_converges() {
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let mut x = vec![-1.2, 1.0];
        let mut obj = rosenbrock;
        let mut f = f64::INFINITY;
        for _ in 0..200 {
            let r = st.step(&mut x, &mut obj).unwrap();
            f = r.loss;
            if r.stalled || f < 1e-12 {
                break;
            }
        }
        assert!(f < 1e-6, "loss {f}");
    }

    #[test]
    fn zero_gradient_stalls() {
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let mut x = vec![0.0, 1.0, 2.0];
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            Ok((1.0 + x.iter().sum::<f64>() * 0.0, vec![0.0; 3]))
        };
        let r = st.step(&mut x, &mut obj).unwrap();
        assert!(r.stalled);
        assert_eq!(x, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn empty_history_is_steepest_descent() {
        let st = LbfgsState::new(LbfgsConfig::default());
        let g = vec![0.5, -2.0, 3.0];
        assert_eq!(st.direction(&g), vec![-0.5, 2.0, -3.0]);
    }

    #[test]
    fn accepted_steps_decrease_loss() {
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let mut x = vec![-1.2, 1.0];
        let mut obj = rosenbrock;
        let mut last = rosenbrock(&x).unwrap().0;
        for _ in 0..60 {
            let r = st.step(&mut x, &mut obj).unwrap();
            if r.stalled {
                break;
            }
            assert!(r.loss < last);
            last = r.loss;
        }
    }

    #[test]
    fn survives_non_finite_trial_points() {
        // blows up for |x| > 2; the line search must back off
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0].abs() > 2.0 {
                return Err(Error::numeric("overflow"));
            }
            Ok(((x[0] - 1.5).powi(2), vec![2.0 * (x[0] - 1.5)]))
        };
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let mut x = vec![-1.9];
        for _ in 0..30 {
            if st.step(&mut x, &mut obj).unwrap().stalled {
                break;
            }
        }
        assert!((x[0] - 1.5).abs() < 1e-6);
    }
}
