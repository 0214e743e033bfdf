use std::f64::consts::PI;

use degenwave::background::{
    check_f0_admissible, evolve_series, import_table, make_profile, verify_stationary,
    verify_stationary_field, AffineField, BackgroundError, BackgroundProfile, FSpec, ProfileKind,
    TrigSeries,
};
use degenwave::spectral::Grid;
use proptest::prelude::*;

fn sin_profile() -> BackgroundProfile {
    make_profile(ProfileKind::Translational, FSpec::Sin, 1.0).unwrap()
}

#[test]
fn sin_window_is_clipped_where_f_reaches_one_half() {
    let p = sin_profile();
    assert!(p.y0().abs() < 1e-12);
    assert!((p.c0() - 1.0).abs() < 1e-12);
    assert!((p.y1() - PI / 6.0).abs() < 1e-6, "y1 = {}", p.y1());
}

#[test]
fn eta_map_matches_closed_form_for_sin() {
    // d eta/dy = 1/sin y, eta(y1) = 0  =>  eta = ln(tan(y/2) / tan(y1/2))
    let p = sin_profile();
    let t1 = (p.y1() / 2.0).tan();
    for &eta in &[0.0, -0.3, -1.0, -2.5, -6.0] {
        let y = p.y_of_eta(eta).unwrap();
        let exact = 2.0 * (t1 * f64::exp(eta)).atan();
        assert!(
            (y - exact).abs() < 1e-10 * exact.max(1e-3),
            "eta {eta}: {y} vs {exact}"
        );
        let back = p.eta_of_y(y).unwrap();
        assert!((back - eta).abs() < 1e-9);
    }
    assert!(matches!(
        p.y_of_eta(1.0),
        Err(BackgroundError::OutOfWindow { .. })
    ));
}

#[test]
fn phase_derivative_is_sqrt_one_minus_f_squared() {
    let p = sin_profile();
    let h = 1e-4;
    for &eta in &[-0.2, -1.0, -3.0] {
        let d = (p.g_of_eta(eta + h).unwrap() - p.g_of_eta(eta - h).unwrap()) / (2.0 * h);
        let y = p.y_of_eta(eta).unwrap();
        let expect = (1.0 - y.sin().powi(2)).sqrt();
        assert!((d - expect).abs() < 1e-7);
        assert!((p.g_prime_at_y(y) - expect).abs() < 1e-14);
    }
}

#[test]
fn travel_time_inverse_round_trip() {
    let p = sin_profile();
    for &eta in &[-0.1, -1.5, -4.0] {
        let s = p.travel_time(eta);
        assert!(s < 0.0);
        assert!((p.eta_of_travel(s) - eta).abs() < 1e-9);
    }
}

#[test]
fn constant_profile_has_no_degeneracy() {
    let spec = FSpec::Trig(TrigSeries::constant(0.3));
    assert!(matches!(
        make_profile(ProfileKind::Translational, spec, 1.0),
        Err(BackgroundError::NoDegeneracy(_))
    ));
}

#[test]
fn axisymmetric_ring_degenerates_at_r0() {
    let p = make_profile(ProfileKind::Axisymmetric, FSpec::AxiRing { r0: 1.0 }, 1.5).unwrap();
    assert!((p.y0() - 1.0).abs() < 1e-10);
    // f = (r^2 - 1)/2 near r = 1, so f'(1) = 1
    assert!((p.c0() - 1.0).abs() < 1e-8);
    // F = f/r stays below 1/2 on the window
    assert!(p.eikonal(p.y1()).0 <= 0.5 + 1e-12);
}

#[test]
fn trig_series_derivatives() {
    let s = TrigSeries {
        a0: 0.1,
        cos: vec![0.0, 0.5],
        sin: vec![1.0, 0.0, 0.25],
    };
    let y = 0.7;
    let v = s.eval(y);
    let f = 0.1 + 0.5 * (2.0 * y).cos() + y.sin() + 0.25 * (3.0 * y).sin();
    let fp = -1.0 * (2.0 * y).sin() + y.cos() + 0.75 * (3.0 * y).cos();
    let fpp = -2.0 * (2.0 * y).cos() - y.sin() - 2.25 * (3.0 * y).sin();
    assert!((v[0] - f).abs() < 1e-14);
    assert!((v[1] - fp).abs() < 1e-14);
    assert!((v[2] - fpp).abs() < 1e-13);
}

#[test]
fn trig_series_from_samples_recovers_modes() {
    let n = 64;
    let samples: Vec<f64> = (0..n)
        .map(|j| {
            let y = 2.0 * PI * j as f64 / n as f64;
            0.2 + (3.0 * y).cos() - 0.5 * y.sin()
        })
        .collect();
    let s = TrigSeries::from_samples(&samples).unwrap();
    assert!((s.a0 - 0.2).abs() < 1e-14);
    assert!((s.cos[2] - 1.0).abs() < 1e-14);
    assert!((s.sin[0] + 0.5).abs() < 1e-14);
}

#[test]
fn evolution_multiplies_modes_by_the_semigroup() {
    let s = TrigSeries::sin();
    let e = evolve_series(&s, 0.5, 0.25, 2.0);
    // k = 1: e^{-eta t}
    assert!((e.sin[0] - f64::exp(-1.0)).abs() < 1e-14);
    let c = TrigSeries {
        a0: 1.0,
        cos: vec![0.0, 1.0],
        sin: vec![],
    };
    let e = evolve_series(&c, 0.5, 0.5, 1.0);
    assert_eq!(e.a0, 1.0);
    assert!((e.cos[1] - f64::exp(-0.5 * 2.0)).abs() < 1e-14);
    // alpha = 0: the identity symbol damps the mean too
    let e = evolve_series(&c, 0.5, 0.0, 1.0);
    assert!((e.a0 - f64::exp(-0.5)).abs() < 1e-14);
}

#[test]
fn admissible_profile_has_vanishing_fractional_laplacian_near_zero() {
    let spec = FSpec::admissible(0.25, 1.0).unwrap();
    let p =
        BackgroundProfile::from_window(ProfileKind::Translational, spec, 0.0, 0.4, None).unwrap();
    assert!((p.c0() - 1.0).abs() < 1e-10);
    let r = check_f0_admissible(&p, 0.25).unwrap();
    assert!(r.admissible, "{r:?}");
    // sin is odd but its fractional Laplacian does not vanish
    let r = check_f0_admissible(&sin_profile(), 0.25).unwrap();
    assert!(!r.admissible);
    assert!(r.odd_residual < 1e-12);
}

#[test]
fn backgrounds_are_stationary() {
    let grid = Grid::new(32, 32, 8.0, 8.0).unwrap();
    let r = verify_stationary(&sin_profile(), &grid);
    assert!(r.div_residual < 1e-14 && r.curl_transport_residual < 1e-14);
    let ring = make_profile(ProfileKind::Axisymmetric, FSpec::AxiRing { r0: 1.0 }, 1.5).unwrap();
    let r = verify_stationary(&ring, &grid);
    assert!(
        r.div_residual < 1e-12 && r.curl_transport_residual < 1e-12,
        "{r:?}"
    );
    let r = verify_stationary_field(&AffineField::exceptional(1.0, 0.3), &grid, [0.0, 0.0]);
    assert!(r.div_residual < 1e-14 && r.curl_transport_residual < 1e-14);
}

#[test]
fn table_export_import_round_trip() {
    let p = sin_profile();
    let mut buf = Vec::new();
    p.export_table(&mut buf, 100).unwrap();
    let t = import_table(std::io::BufReader::new(&buf[..])).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("# kind=translational"));
    assert!(format!("{t:?}").len() > 0);
    assert!(import_table(std::io::BufReader::new(&b"garbage\n1 2\n"[..])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn y_of_eta_is_increasing_and_inverts(a in -8.0f64..0.0, b in -8.0f64..0.0) {
        let p = sin_profile();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        let (ylo, yhi) = (p.y_of_eta(lo).unwrap(), p.y_of_eta(hi).unwrap());
        prop_assert!(ylo < yhi);
        prop_assert!((p.eta_of_y(yhi).unwrap() - hi).abs() < 1e-9);
    }

    #[test]
    fn evolution_is_a_semigroup(t1 in 0.0f64..1.0, t2 in 0.0f64..1.0, alpha in 0.0f64..1.0) {
        let s = TrigSeries { a0: 0.3, cos: vec![0.2, -0.1], sin: vec![1.0, 0.5, 0.25] };
        let a = evolve_series(&evolve_series(&s, 0.7, alpha, t1), 0.7, alpha, t2);
        let b = evolve_series(&s, 0.7, alpha, t1 + t2);
        for y in [0.1, 1.0, 2.5] {
            prop_assert!((a.eval(y)[0] - b.eval(y)[0]).abs() < 1e-13);
        }
    }
}
