use std::f64::consts::PI;
use std::sync::Arc;

use degenwave::background::{make_profile, BackgroundProfile, FSpec, ProfileKind};
use degenwave::spectral::Grid;
use degenwave::wavepacket::{
    backtrack, degeneration_scan, fit_slope, fit_slope_middle, AmplitudeSpec, PacketError,
    WavePacket,
};
use proptest::prelude::*;

fn sin_profile() -> Arc<BackgroundProfile> {
    Arc::new(make_profile(ProfileKind::Translational, FSpec::Sin, 1.0).unwrap())
}

#[test]
fn packet_is_normalized_at_time_zero() {
    let p = sin_profile();
    for lam in [4, 16, 32] {
        let pk = WavePacket::with_default_amplitude(p.clone(), lam).unwrap();
        let line = pk.reference_line().unwrap();
        let n = pk.sampler(&line).evaluate(0.0).unwrap().b_norm();
        assert!((n - 1.0).abs() < 1e-12, "lambda {lam}: {n}");
        // a coarser line agrees to quadrature accuracy
        let coarse = pk.packet_line(4096).unwrap();
        let n = pk.sampler(&coarse).evaluate(0.0).unwrap().b_norm();
        assert!((n - 1.0).abs() < 1e-6, "lambda {lam}: {n}");
    }
}

#[test]
fn l2_norm_stays_close_to_one() {
    let pk = WavePacket::with_default_amplitude(sin_profile(), 16).unwrap();
    let line = pk.reference_line().unwrap();
    let s = pk.sampler(&line);
    for t in [0.02, 0.04, 0.0625] {
        let n = s.evaluate(t).unwrap().b_norm();
        assert!((n - 1.0).abs() < 0.05, "t {t}: {n}");
    }
}

#[test]
fn residual_terms_are_small_and_uniform_in_lambda() {
    let p = sin_profile();
    let mut err_b = Vec::new();
    for lam in [8u32, 16, 32] {
        let pk = WavePacket::with_default_amplitude(p.clone(), lam).unwrap();
        let line = pk.reference_line().unwrap();
        let s = pk.sampler(&line);
        let t = 0.5 / lam as f64;
        let r = s.residual(t, s.default_dt_fd()).unwrap();
        // the psi equation is solved up to discretization error
        assert!(
            r.grad_err_psi_norm < 1e-5,
            "lambda {lam}: {:e}",
            r.grad_err_psi_norm
        );
        err_b.push(r.err_b_norm);
    }
    let (lo, hi) = err_b
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(hi / lo < 2.0, "{err_b:?}");
}

#[test]
fn backtrack_agrees_with_travel_time_map() {
    // along a characteristic the travel-time coordinate advances by exactly tau
    let p = sin_profile();
    for &(tau, eta) in &[(0.1, -0.5), (0.5, -3.0), (1.0, -4.0)] {
        let b = backtrack(&p, tau, eta);
        let ds = p.travel_time(b.eta0) - p.travel_time(eta);
        assert!((ds - tau).abs() < 1e-8, "tau {tau} eta {eta}: {ds}");
        assert!(b.x_shift >= tau);
    }
    let b = backtrack(&p, 0.0, -1.0);
    assert_eq!(b.eta0, -1.0);
}

#[test]
fn growth_constants_for_sin() {
    let pk = WavePacket::with_default_amplitude(sin_profile(), 16).unwrap();
    let (c_f, big_c_f) = pk.growth_constants(1.0 / 16.0).unwrap();
    assert!((big_c_f - 1.0).abs() < 1e-12);
    // f' = cos y and the packet lives in (0, pi/6)
    assert!(c_f >= (PI / 6.0).cos() - 1e-9 && c_f <= 1.0, "{c_f}");
}

#[test]
fn hall_lift_components() {
    let pk = WavePacket::with_default_amplitude(sin_profile(), 16).unwrap();
    let line = pk.reference_line().unwrap();
    let s = pk.sampler(&line);
    let lift = s.hall_lift(0.0).unwrap();
    assert!((lift.uz_norm - lift.fields.l2(&lift.fields.psi)).abs() < 1e-15);
    assert!((lift.omega_norm - lift.fields.l2(&lift.fields.bz)).abs() < 1e-15);
    let t = 0.5 / 16.0;
    for nu in [0.0, 0.01] {
        let h = s.hall_residuals(t, nu, s.default_dt_fd()).unwrap();
        assert!(h.u_residual < 1e-5, "nu {nu}: {:e}", h.u_residual);
        assert!(
            h.decomposition_gap < 1e-9,
            "nu {nu}: {:e}",
            h.decomposition_gap
        );
    }
}

#[test]
fn degeneration_exponents_match_brackets() {
    let pk = WavePacket::with_default_amplitude(sin_profile(), 16).unwrap();
    let line = pk.reference_line().unwrap();
    let s = pk.sampler(&line);
    let times: Vec<f64> = (0..=24).map(|i| i as f64 * 0.1 / 16.0).collect();
    let scan = degeneration_scan(&s, &times, &[2.0, f64::INFINITY]).unwrap();
    let l2 = &scan.fits[0];
    assert!(l2.slope.abs() < 0.05 * 16.0, "{l2:?}");
    let linf = &scan.fits[1];
    let (a, b) = linf.bracket;
    assert!(linf.slope > 0.8 * a && linf.slope < 1.2 * b, "{linf:?}");
}

#[test]
fn invalid_packets_are_rejected() {
    let p = sin_profile();
    assert!(matches!(
        WavePacket::with_default_amplitude(p.clone(), 0),
        Err(PacketError::InvalidLambda)
    ));
    assert!(matches!(
        WavePacket::new(p.clone(), 4, AmplitudeSpec::bump(1.0, 2.0)),
        Err(PacketError::InvalidSupport(..))
    ));
    let pk = WavePacket::with_default_amplitude(p, 4).unwrap();
    assert_eq!(
        pk.grid_column(&Grid::new(16, 16, 2.0 * PI, 2.0 * PI).unwrap())
            .unwrap(),
        4
    );
    assert!(matches!(
        pk.grid_column(&Grid::new(16, 16, 1.0, 1.0).unwrap()),
        Err(PacketError::NotTorus)
    ));
    assert!(pk
        .grid_column(&Grid::new(8, 16, 2.0 * PI, 2.0 * PI).unwrap())
        .is_err());
}

#[test]
fn axisymmetric_packet_is_normalized() {
    let ring =
        Arc::new(make_profile(ProfileKind::Axisymmetric, FSpec::AxiRing { r0: 1.0 }, 1.5).unwrap());
    let pk = WavePacket::with_default_amplitude(ring, 8).unwrap();
    let line = pk.reference_line().unwrap();
    let n = pk.sampler(&line).evaluate(0.0).unwrap().b_norm();
    assert!((n - 1.0).abs() < 1e-12);
}

#[test]
fn middle_fit_ignores_the_ends() {
    let t: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let v: Vec<f64> = t
        .iter()
        .map(|&x| {
            if (0.2..=0.8).contains(&x) {
                2.0 * x
            } else {
                100.0
            }
        })
        .collect();
    let (s, ci) = fit_slope_middle(&t, &v);
    assert!((s - 2.0).abs() < 1e-12 && ci < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fit_slope_recovers_lines(a in -10.0f64..10.0, b in -10.0f64..10.0, n in 3usize..30) {
        let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.37).collect();
        let v: Vec<f64> = t.iter().map(|x| a * x + b).collect();
        let (s, ci) = fit_slope(&t, &v);
        prop_assert!((s - a).abs() < 1e-10 * (1.0 + a.abs()));
        prop_assert!(ci < 1e-8);
    }
}
