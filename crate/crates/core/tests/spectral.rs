use std::f64::consts::PI;

use degenwave::spectral::{
    dealias, deriv, frac_laplacian, hs_norm, inner, inv_dx, inv_laplacian, laplacian, lp_norm,
    Axis, Grid, Line, ScalarField, SpectralError,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn max_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn smooth(grid: &std::sync::Arc<Grid>) -> ScalarField {
    ScalarField::from_fn(grid, |x, y| {
        (x + 2.0 * y).sin() + 0.5 * (3.0 * x).cos() * (y).sin() + 0.25 * (2.0 * y - x).cos()
    })
}

#[test]
fn spectral_derivative_of_trig_mode() {
    let g = Grid::periodic(32, 16).unwrap();
    let u = ScalarField::from_fn(&g, |x, y| (3.0 * x).sin() * (2.0 * y).cos());
    let ux = deriv(&u, Axis::X, 1);
    let expect = ScalarField::from_fn(&g, |x, y| 3.0 * (3.0 * x).cos() * (2.0 * y).cos());
    assert!(max_diff(&ux, &expect) < 1e-12);
    let uyy = deriv(&u, Axis::Y, 2);
    let expect = ScalarField::from_fn(&g, |x, y| -4.0 * (3.0 * x).sin() * (2.0 * y).cos());
    assert!(max_diff(&uyy, &expect) < 1e-12);
}

#[test]
fn parseval_matches_quadrature() {
    let g = Grid::new(24, 40, 2.0 * PI, 3.0).unwrap();
    let u = ScalarField::from_fn(&g, |x, y| (x).sin() + (2.0 * PI * y / 3.0).cos() + 0.3);
    let spec = u.spectrum().l2_norm();
    let quad = lp_norm(&u, 2.0);
    assert!((spec - quad).abs() <= 1e-10 * quad);
    let v = ScalarField::from_fn(&g, |x, y| (2.0 * x).cos() * (2.0 * PI * y / 3.0).sin());
    let a = u.spectrum().inner(v.spectrum()).unwrap();
    let b = inner(&u, &v).unwrap();
    assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
}

#[test]
fn inverse_laplacian_identities() {
    let g = Grid::periodic(32, 32).unwrap();
    let u = smooth(&g);
    let back = inv_laplacian(&laplacian(&u)).unwrap();
    assert!(max_diff(&back, &u) < 1e-10);
    let back = laplacian(&inv_laplacian(&u).unwrap());
    assert!(max_diff(&back, &u) < 1e-10);
    // (-Delta)^1 is minus the Laplacian
    let f1 = frac_laplacian(&u, 1.0).unwrap();
    assert!(max_diff(&f1, &laplacian(&u).scale(-1.0)) < 1e-10);
    // a = 0 is the identity
    let f0 = frac_laplacian(&u, 0.0).unwrap();
    assert!(max_diff(&f0, &u) < 1e-14);
}

#[test]
fn inverse_dx_undoes_dx() {
    let g = Grid::periodic(32, 16).unwrap();
    let u = ScalarField::from_fn(&g, |x, y| (x + y).sin() + (2.0 * x).cos() * y.cos());
    let back = inv_dx(&deriv(&u, Axis::X, 1)).unwrap();
    assert!(max_diff(&back, &u) < 1e-12);
}

#[test]
fn inverse_operators_reject_means() {
    let g = Grid::periodic(16, 16).unwrap();
    let u = ScalarField::from_fn(&g, |x, _| 1.0 + x.sin());
    assert!(matches!(
        inv_laplacian(&u),
        Err(SpectralError::NonZeroMean { .. })
    ));
    let v = ScalarField::from_fn(&g, |_, y| y.sin());
    assert!(matches!(
        inv_dx(&v),
        Err(SpectralError::NonZeroXMean { .. })
    ));
}

#[test]
fn grid_mismatch_is_an_error() {
    let a = ScalarField::zeros(&Grid::periodic(16, 16).unwrap());
    let b = ScalarField::zeros(&Grid::periodic(16, 32).unwrap());
    assert_eq!(inner(&a, &b).unwrap_err(), SpectralError::GridMismatch);
}

#[test]
fn dealias_keeps_low_and_removes_high_modes() {
    let g = Grid::periodic(24, 24).unwrap();
    let low = ScalarField::from_fn(&g, |x, y| (4.0 * x).sin() + (8.0 * y).cos());
    assert!(max_diff(&dealias(&low), &low) < 1e-13);
    let high = ScalarField::from_fn(&g, |x, y| (9.0 * x).sin() * (9.0 * y).cos());
    assert!(dealias(&high).max_abs() < 1e-13);
}

#[test]
fn hs_norm_of_single_mode() {
    let g = Grid::periodic(16, 16).unwrap();
    let u = ScalarField::from_fn(&g, |x, y| (3.0 * x + 4.0 * y).cos());
    // ||u||^2 = 2 pi^2, multiplier (1 + 25)^s
    let l2 = (2.0 * PI * PI).sqrt();
    assert!((hs_norm(&u, 1.0) - l2 * 26f64.sqrt()).abs() < 1e-10);
}

#[test]
fn line_derivative_of_exponential() {
    let line = Line::new(64, 0.5, 2.0).unwrap();
    let k = 2.0 * PI * 3.0 / 2.0;
    let u: Vec<Complex64> = line
        .points()
        .iter()
        .map(|&y| Complex64::new(0.0, k * y).exp())
        .collect();
    let du = line.deriv(&u, 1);
    for (a, b) in du.iter().zip(&u) {
        assert!((a - Complex64::new(0.0, k) * b).norm() < 1e-10);
    }
    assert!(Line::new(7, 0.0, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forward_inverse_round_trip(seed in proptest::collection::vec(-1.0f64..1.0, 16 * 12)) {
        let g = Grid::new(16, 12, 1.3, 2.1).unwrap();
        let u = ScalarField::from_values(&g, seed.clone()).unwrap();
        let back = u.spectrum().to_field();
        prop_assert!(max_diff(&u, &back) < 1e-12);
        // Parseval on arbitrary data
        let a = u.spectrum().l2_norm();
        let b = lp_norm(&u, 2.0);
        prop_assert!((a - b).abs() <= 1e-10 * b.max(1e-300));
    }

    #[test]
    fn derivative_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = Grid::periodic(16, 16).unwrap();
        let u = ScalarField::from_fn(&g, |x, y| (x + y).sin());
        let v = ScalarField::from_fn(&g, |x, y| (2.0 * x).cos() * y.sin());
        let lhs = deriv(&u.scale(a).add(&v.scale(b)).unwrap(), Axis::Y, 1);
        let rhs = deriv(&u, Axis::Y, 1).scale(a).add(&deriv(&v, Axis::Y, 1).scale(b)).unwrap();
        prop_assert!(max_diff(&lhs, &rhs) < 1e-11);
    }
}
