//! Finite-difference and closed-form checks shared by the oracle and
//! acceptance targets. Each returns the worst relative error it saw.
#![allow(dead_code)]

use cdpinn::net::trace::{param_jacobian, Observable, ObservableKind};
use cdpinn::net::MLPParams;
use cdpinn::ntk::assemble_kernel;
use cdpinn::problems::{Problem1D, Problem2D};
use cdpinn::trainer::{pinn_loss, pinn_loss_and_gradient, SampleSet};
use cdpinn::transform::AffineTransform;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random net whose biases are non-zero too, plus a random transform.
pub fn random_case(rng: &mut ChaCha8Rng, d0: usize) -> (MLPParams, AffineTransform) {
    let depth = rng.gen_range(1..=3);
    let mut dims = vec![d0];
    for _ in 0..depth {
        dims.push(rng.gen_range(1..=10));
    }
    dims.push(1);
    let mut p = MLPParams::init_xavier(&dims, rng.gen()).unwrap();
    let flat: Vec<f64> = p.flatten().iter().map(|w| w + rng.gen_range(-0.3..0.3)).collect();
    p.set_flat(&flat).unwrap();
    let a: Vec<f64> = (0..d0).map(|_| rng.gen_range(0.5..3.0)).collect();
    let b: Vec<f64> = (0..d0).map(|_| rng.gen_range(-1.0..0.5)).collect();
    (p, AffineTransform::new(a, b).unwrap())
}

fn f_at(p: &MLPParams, t: &AffineTransform, x: &[f64]) -> f64 {
    let m = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
    p.forward_with(t, &m).unwrap()[0]
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn fd_gradient(p: &MLPParams, f: impl Fn(&MLPParams) -> f64, h: f64) -> Vec<f64> {
    let flat = p.flatten();
    let mut q = p.clone();
    (0..flat.len())
        .map(|k| {
            let mut v = flat.clone();
            v[k] = flat[k] + h;
            q.set_flat(&v).unwrap();
            let fp = f(&q);
            v[k] = flat[k] - h;
            q.set_flat(&v).unwrap();
            let fm = f(&q);
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel(x, y, 1e-3 * scale))
        .fold(0.0, f64::max)
}

/// First and second input derivatives against central differences over
/// `cases` random nets, alternating 1D and 2D inputs.
pub fn input_derivative_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let d0 = 1 + case % 2;
        let (p, t) = random_case(&mut rng, d0);
        let x: Vec<f64> = (0..d0).map(|_| rng.gen_range(-0.5..0.5)).collect();
        for c in 0..d0 {
            let j = p.forward_jet_with(&t, &x, c).unwrap();
            assert!((j.v - f_at(&p, &t, &x)).abs() <= 1e-14 * j.v.abs().max(1.0));
            let diffs = |h: f64| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let (fp, f0, fm) = (f_at(&p, &t, &xp), f_at(&p, &t, &x), f_at(&p, &t, &xm));
                ((fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h))
            };
            let (a1, a2) = diffs(1e-3);
            let (b1, b2) = diffs(5e-4);
            let (d1, d2) = ((4.0 * b1 - a1) / 3.0, (4.0 * b2 - a2) / 3.0);
            let scale = j.d1.abs().max(j.d2.abs()).max(1e-3);
            worst = worst.max(rel(j.d1, d1, scale)).max(rel(j.d2, d2, scale));
        }
    }
    worst
}

/// Loss gradient against central differences of the loss.
pub fn loss_gradient_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p1 = Problem1D::primary(0.05).unwrap();
    let p2 = Problem2D::new(0.05).unwrap();
    let mut worst = 0.0f64;
    for case in 0..cases {
        let d0 = 1 + case % 2;
        let (p, t) = random_case(&mut rng, d0);
        let samples = if d0 == 1 {
            SampleSet::reduced(&p1, 16).unwrap()
        } else {
            SampleSet::two_d(&p2, 5).unwrap()
        };
        let (_, g) = pinn_loss_and_gradient(&p, &t, &samples).unwrap();
        let fd = fd_gradient(&p, |q| pinn_loss(q, &t, &samples).unwrap().total, 1e-6);
        worst = worst.max(max_rel(&g.values, &fd));
    }
    worst
}

/// Jacobian rows of value and linear observables against differences of the
/// observable itself.
pub fn jacobian_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (p, t) = random_case(&mut rng, 1);
        let obs = vec![
            Observable::value(vec![0.0]),
            Observable::linear(vec![0.3], 0.0, [1.0, 0.0], [-0.01, 0.0]),
            Observable::linear(vec![0.7], 0.5, [2.0, 0.0], [1.0, 0.0]),
        ];
        let j = param_jacobian(&p, &t, &obs).unwrap();
        for (i, o) in obs.iter().enumerate() {
            let fd = fd_gradient(
                &p,
                |q| {
                    let jet = q.forward_jet_with(&t, &o.point, 0).unwrap();
                    match o.kind {
                        ObservableKind::Value => jet.v,
                        ObservableKind::Linear { value, d1, d2 } => value * jet.v + d1[0] * jet.d1 + d2[0] * jet.d2,
                    }
                },
                1e-6,
            );
            worst = worst.max(max_rel(j.row(i).as_slice().unwrap(), &fd));
        }
    }
    worst
}

/// Width-1 net `c = W2 tanh(W1 x + b1) + b2` against its closed-form
/// value and input derivatives; absolute error.
pub fn single_unit_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (w1, b1, w2, b2): (f64, f64, f64, f64) = (
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.0..1.0),
        );
        let text = format!("dims = 1 1 1\nw.0.0 = {w1:e}\nb.0 = {b1:e}\nw.1.0 = {w2:e}\nb.1 = {b2:e}\n");
        let p: MLPParams = text.parse().unwrap();
        let x = rng.gen_range(0.0..1.0);
        let t = (w1 * x + b1).tanh();
        let sech2 = 1.0 - t * t;
        let j = p.forward_jet(&[x], 0).unwrap();
        worst = worst
            .max((j.v - (w2 * t + b2)).abs())
            .max((j.d1 - w2 * w1 * sech2).abs())
            .max((j.d2 - (-2.0 * w2 * w1 * w1 * sech2 * t)).abs());
    }
    worst
}

/// Assembled kernel of a [1,2,1] net on two boundary points and one
/// residual point against the Gram matrix of differenced observables.
pub fn kernel_gram_error() -> f64 {
    let p = MLPParams::init_xavier(&[1, 2, 1], 4).unwrap();
    let t = AffineTransform::scalar(2.0, -0.5).unwrap();
    let eps = 0.1;
    let mut s = SampleSet::reduced(&Problem1D::primary(eps).unwrap(), 2).unwrap();
    assert_eq!(s.n_u() + s.n_r(), 3);
    s.residual = vec![vec![0.4]];
    s.offsets = vec![0.0];
    let k = assemble_kernel(&p, &t, &s).unwrap();
    let rows: Vec<Vec<f64>> = [(0.0, false), (1.0, false), (0.4, true)]
        .iter()
        .map(|&(x, residual)| {
            fd_gradient(
                &p,
                |q| {
                    let j = q.forward_jet_with(&t, &[x], 0).unwrap();
                    if residual {
                        -eps * j.d2 + j.d1
                    } else {
                        j.v
                    }
                },
                1e-6,
            )
        })
        .collect();
    let scale = k.k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let g: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            worst = worst.max(rel(k.k[[i, j]], g, 1e-3 * scale));
        }
    }
    worst
}
