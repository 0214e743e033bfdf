use degenwave::background::{make_profile, AffineField, FSpec, ProfileKind};
use degenwave::rays::{
    conserved_report, explicit_ray_linear, hamiltonian, integrate_ray, linear_oracle_error, theta0,
    RayError, Symmetry,
};
use proptest::prelude::*;

/// Right-hand side of the Hamiltonian system on B = y d_x, written out by hand.
fn linear_field_rhs(x: [f64; 3], xi: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let k = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
    let y = x[1];
    let bxi = y * xi[0];
    let dx = [y * k + bxi * xi[0] / k, bxi * xi[1] / k, bxi * xi[2] / k];
    // grad_x (B.xi) = (0, xi_x, 0)
    let dxi = [0.0, -xi[0] * k, 0.0];
    (dx, dxi)
}

#[test]
fn closed_form_solves_the_ray_equations() {
    // independent oracle: centred differences of the closed form against the ODE
    for &lam in &[2.0, 4.0, 8.0] {
        for &t in &[0.0, 0.1, 0.5, 1.0] {
            let h = 1e-6;
            let a = explicit_ray_linear(lam, t + h);
            let b = explicit_ray_linear(lam, t - h);
            let s = explicit_ray_linear(lam, t);
            let (dx, dxi) = linear_field_rhs(s.x, s.xi);
            for i in 0..3 {
                let fx = (a.x[i] - b.x[i]) / (2.0 * h);
                let fxi = (a.xi[i] - b.xi[i]) / (2.0 * h);
                assert!(
                    (fx - dx[i]).abs() < 1e-5 * (1.0 + dx[i].abs()),
                    "x{i} lam {lam} t {t}"
                );
                assert!(
                    (fxi - dxi[i]).abs() < 1e-5 * (1.0 + dxi[i].abs()),
                    "xi{i} lam {lam} t {t}"
                );
            }
        }
    }
}

#[test]
fn closed_form_initial_data_and_decay() {
    let s = explicit_ray_linear(4.0, 0.0);
    assert!((s.x[1] - 1.0).abs() < 1e-15);
    assert!((s.xi[1] + 4.0).abs() < 1e-14);
    assert!((theta0() - (1.0 + 2f64.sqrt()).ln()).abs() < 1e-15);
    // y = cosh(theta0)/cosh(lam t + theta0) decays like e^{-lam t}
    let late = explicit_ray_linear(4.0, 2.0);
    let ratio = late.x[1] * (4.0f64 * 2.0).exp();
    assert!((ratio - 2.0 * theta0().cosh() / theta0().exp()).abs() < 1e-6);
}

#[test]
fn rk4_matches_closed_form() {
    let field = AffineField::exceptional(1.0, 0.0);
    for &lam in &[2.0, 4.0, 8.0] {
        let traj = integrate_ray(&field, [0.0, 1.0, 0.0], [lam, -lam, 0.0], 1.0, 1e-4).unwrap();
        assert_eq!(traj.samples.len(), 10_001);
        assert_eq!(traj.symmetry, Symmetry::TranslationX);
        let err = linear_oracle_error(&traj, lam);
        assert!(err <= 1e-8, "lambda {lam}: {err:e}");
    }
}

#[test]
fn rk4_error_is_fourth_order() {
    let field = AffineField::exceptional(1.0, 0.0);
    let lam = 4.0;
    let err = |dt: f64| {
        let traj = integrate_ray(&field, [0.0, 1.0, 0.0], [lam, -lam, 0.0], 0.5, dt).unwrap();
        let e = explicit_ray_linear(lam, 0.5);
        (traj.last().xi[1] - e.xi[1]).abs()
    };
    let ratio = err(4e-3) / err(2e-3);
    assert!((ratio - 16.0).abs() <= 1.6, "ratio {ratio}");
}

#[test]
fn invariants_are_conserved_on_builtin_profiles() {
    let sin = make_profile(ProfileKind::Translational, FSpec::Sin, 1.0).unwrap();
    let traj = integrate_ray(&sin, [0.0, 0.3, 0.0], [3.0, 1.0, 0.5], 1.0, 1e-4).unwrap();
    assert!(conserved_report(&sin, &traj).max() <= 1e-9);
    let ring = make_profile(ProfileKind::Axisymmetric, FSpec::AxiRing { r0: 1.0 }, 1.5).unwrap();
    let traj = integrate_ray(&ring, [1.2, 0.0, 0.0], [1.0, 2.0, -1.0], 1.0, 1e-4).unwrap();
    assert_eq!(traj.symmetry, Symmetry::Rotation);
    let d = conserved_report(&ring, &traj);
    assert!(d.max() <= 1e-9, "{d:?}");
}

#[test]
fn general_affine_field_has_no_planar_momentum() {
    let field = AffineField {
        a: [[0.5, 1.0], [0.0, -0.5]],
        b: [0.0, 0.0],
    };
    let traj = integrate_ray(&field, [0.1, 0.2, 0.0], [1.0, 1.0, 1.0], 0.2, 1e-3).unwrap();
    assert_eq!(traj.symmetry, Symmetry::None);
    let d = conserved_report(&field, &traj);
    assert!(d.momentum.is_nan());
    assert!(d.p < 1e-9 && d.xi_z < 1e-12);
}

#[test]
fn invalid_inputs_are_rejected() {
    let field = AffineField::exceptional(1.0, 0.0);
    assert_eq!(
        integrate_ray(&field, [0.0; 3], [0.0; 3], 1.0, 1e-3).unwrap_err(),
        RayError::ZeroFrequency
    );
    assert!(matches!(
        integrate_ray(&field, [0.0; 3], [1.0, 0.0, 0.0], 1.0, 0.0),
        Err(RayError::InvalidStep { .. })
    ));
    assert_eq!(
        hamiltonian(&field, [0.0; 3], [0.0; 3]).unwrap_err(),
        RayError::ZeroFrequency
    );
}

#[test]
fn csv_dump_has_one_row_per_sample() {
    let field = AffineField::exceptional(1.0, 0.0);
    let traj = integrate_ray(&field, [0.0, 1.0, 0.0], [2.0, -2.0, 0.0], 0.01, 1e-3).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&field, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), traj.samples.len() + 1);
    assert!(text.starts_with("t,x,y,z,xi_x"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hamiltonian_is_conserved_for_random_data(
        y in 0.1f64..1.0,
        a in 0.0f64..6.28,
        kz in -2.0f64..2.0,
    ) {
        let sin = make_profile(ProfileKind::Translational, FSpec::Sin, 1.0).unwrap();
        let xi0 = [3.0 * a.cos(), 3.0 * a.sin(), kz];
        let traj = integrate_ray(&sin, [0.0, y, 0.0], xi0, 0.5, 1e-3).unwrap();
        prop_assert!(conserved_report(&sin, &traj).max() <= 1e-9);
    }
}
