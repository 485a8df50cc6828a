use cdpinn::fdm::{detect_oscillation, solve_central};
use cdpinn::problems::Problem1D;

/// `U_i = A + B rho^i`, the exact solution of the central-difference
/// recurrence for `-eps u'' + u' = 0`.
fn recurrence(p: &Problem1D, n: usize) -> Vec<f64> {
    let eps = p.epsilon();
    let ph = (1.0 / n as f64) / (2.0 * eps);
    let rho = (1.0 + ph) / (1.0 - ph);
    let [(_, g0), (_, g1)] = p.boundary();
    let b = (g1 - g0) / (rho.powi(n as i32) - 1.0);
    let a = g0 - b;
    (0..=n).map(|i| a + b * rho.powi(i as i32)).collect()
}

#[test]
fn central_scheme_matches_recurrence() {
    for (n, eps, peclet, oscillates) in [(32, 0.01, 1.5625, true), (32, 0.001, 15.625, true), (64, 0.01, 0.78125, false)] {
        let p = Problem1D::primary(eps).unwrap();
        let sol = solve_central(&p, n).unwrap();
        assert_eq!(sol.peclet, peclet);
        let reference = recurrence(&p, n);
        let err = sol.values.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "N={n} eps={eps}: {err:e}");
        assert_eq!(detect_oscillation(&sol.values).oscillatory, oscillates, "N={n} eps={eps}");
    }
}

#[test]
fn monotone_below_unit_peclet() {
    for (n, eps) in [(64, 0.01), (128, 0.005), (16, 0.05)] {
        let p = Problem1D::primary(eps).unwrap();
        let sol = solve_central(&p, n).unwrap();
        assert!(sol.peclet < 1.0);
        assert!(sol.values.windows(2).all(|w| w[1] <= w[0] + 1e-14));
    }
}
