use std::sync::Arc;

use degenwave::background::TrigSeries;
use degenwave::solver::{
    cfl_dt, energy_report, run, step, Background, BackgroundMode, FieldKind, Params, RunConfig,
    SolverState, TimeStep, Variant,
};
use degenwave::spectral::{Grid, ScalarField, Spectrum};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(grid: &Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Spectrum {
    ScalarField::from_fn(grid, f).spectrum().clone()
}

/// A spectrum with data in x-column m only (FFT round-off would light up every column).
fn single_column(grid: &Arc<Grid>, m: usize) -> Spectrum {
    let mut s = Spectrum::zeros(grid);
    s.col_mut(m)[1] = num_complex::Complex64::new(0.5, 0.0);
    s
}

fn smooth_a(x: f64, y: f64) -> f64 {
    (2.0 * x + y).sin() + 0.5 * (x - 3.0 * y).cos() + 0.2 * (4.0 * x + 2.0 * y).sin()
}

fn smooth_b(x: f64, y: f64) -> f64 {
    (x + 2.0 * y).cos() - 0.3 * (3.0 * x).sin() * y.cos()
}

fn emhd(
    grid: &Arc<Grid>,
    bg: Background,
    a: fn(f64, f64) -> f64,
    b: fn(f64, f64) -> f64,
) -> SolverState {
    SolverState::new(
        Variant::EmhdLinear,
        Params::default(),
        Arc::new(bg),
        BackgroundMode::Frozen,
        vec![spec(grid, a), spec(grid, b)],
    )
    .unwrap()
}

fn sin_bg() -> Background {
    Background::Series(TrigSeries::sin())
}

fn advance(mut s: SolverState, dt: f64, n: usize) -> SolverState {
    for _ in 0..n {
        s = step(&s, dt).unwrap();
    }
    s
}

fn row(grid: &Grid, ky: f64) -> usize {
    grid.ky_table()
        .iter()
        .position(|&k| (k - ky).abs() < 1e-12)
        .unwrap()
}

#[test]
fn whistler_frequency_for_random_modes() {
    // constant background c: omega = c kx |k|; psi^ = cos(wt) psi0^, b^ = -i|k| sin(wt) psi0^
    let grid = Grid::periodic(128, 128).unwrap();
    let c = 0.7;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut modes: Vec<(i32, i32)> = Vec::new();
    while modes.len() < 5 {
        let m = (rng.gen_range(1..=8), rng.gen_range(-8..=8));
        if !modes.contains(&m) {
            modes.push(m);
        }
    }
    let amps: Vec<f64> = modes.iter().map(|_| rng.gen_range(0.5..1.5)).collect();
    let (mm, aa) = (modes.clone(), amps.clone());
    let psi = spec(&grid, move |x, y| {
        mm.iter()
            .zip(&aa)
            .map(|(&(kx, ky), a)| a * (kx as f64 * x + ky as f64 * y).cos())
            .sum()
    });
    let s0 = SolverState::new(
        Variant::EmhdLinear,
        Params::default(),
        Arc::new(Background::constant(c)),
        BackgroundMode::Frozen,
        vec![Spectrum::zeros(&grid), psi],
    )
    .unwrap();
    let t = 0.02;
    let s = advance(s0.clone(), 1e-4, 200);
    for &(kx, ky) in &modes {
        let (kxf, kyf) = (kx as f64, ky as f64);
        let k = (kxf * kxf + kyf * kyf).sqrt();
        let j = row(&grid, kyf);
        let p0 = s0.column(FieldKind::Psi, kx as usize)[j];
        let p = s.column(FieldKind::Psi, kx as usize)[j] / p0;
        let b = s.column(FieldKind::Bz, kx as usize)[j] / p0;
        let sin = (b * num_complex::Complex64::new(0.0, 1.0 / k)).re;
        let omega = sin.atan2(p.re) / t;
        let exact = c * kxf * k;
        assert!(
            (omega - exact).abs() <= 1e-5 * exact,
            "mode ({kx},{ky}): {omega} vs {exact}"
        );
    }
}

#[test]
fn zero_step_is_identity() {
    let grid = Grid::periodic(32, 32).unwrap();
    let s = emhd(&grid, sin_bg(), smooth_a, smooth_b);
    assert_eq!(step(&s, 0.0).unwrap().max_diff(&s), 0.0);
}

#[test]
fn time_reversal_returns_to_the_start() {
    // (b^z, psi, t) -> (-b^z, psi, -t) is a symmetry of the linear system
    let grid = Grid::periodic(32, 32).unwrap();
    let s0 = emhd(&grid, sin_bg(), smooth_a, smooth_b);
    let mut s = advance(s0.clone(), 1e-3, 100);
    s.negate_bz();
    let mut s = advance(s, 1e-3, 100);
    s.negate_bz();
    let scale = s0.b_norm_sq().sqrt();
    assert!(s.max_diff(&s0) < 1e-8 * scale, "{:e}", s.max_diff(&s0));
}

#[test]
fn fractional_heat_decay_is_exact() {
    let grid = Grid::periodic(16, 16).unwrap();
    let params = Params {
        eta_diss: 0.5,
        alpha: 0.5,
        ..Params::default()
    };
    let s0 = SolverState::new(
        Variant::EmhdFradiss,
        params,
        Arc::new(Background::constant(0.0)),
        BackgroundMode::Frozen,
        vec![
            spec(&grid, |x, y| (3.0 * x + 4.0 * y).cos()),
            spec(&grid, |x, y| (3.0 * x + 4.0 * y).sin()),
        ],
    )
    .unwrap();
    let s = advance(s0.clone(), 0.1, 3);
    // |k| = 5, (-Lap)^{1/2} = 5
    let decay = (-0.5 * 5.0 * 0.3f64).exp();
    let expect = s0.lincomb(decay, &s0, 0.0).unwrap();
    assert!(s.max_diff(&expect) < 1e-14);
}

#[test]
fn rk4_is_fourth_order() {
    let grid = Grid::periodic(32, 32).unwrap();
    let s0 = emhd(&grid, sin_bg(), smooth_a, smooth_b);
    let t = 0.2;
    let sol = |n: usize| advance(s0.clone(), t / n as f64, n);
    let reference = sol(320);
    let e1 = sol(20).max_diff(&reference);
    let e2 = sol(40).max_diff(&reference);
    let ratio = e1 / e2;
    assert!((ratio - 16.0).abs() <= 1.6, "ratio {ratio}");
}

#[test]
fn cfl_bound_matches_formula() {
    let grid = Grid::periodic(32, 32).unwrap();
    let s = SolverState::new(
        Variant::EmhdLinear,
        Params::default(),
        Arc::new(Background::constant(2.0)),
        BackgroundMode::Frozen,
        vec![Spectrum::zeros(&grid), single_column(&grid, 3)],
    )
    .unwrap();
    assert_eq!(s.columns(), &[3]);
    // k_max = 32/3 -> 10, kx_max = 3
    let dt = cfl_dt(&s, 0.5);
    assert!((dt - 0.5 / (2.0 * 3.0 * 10.0)).abs() < 1e-15, "{dt}");
    let zero = SolverState::zeros(
        Variant::EmhdLinear,
        Params::default(),
        Arc::new(Background::constant(0.0)),
        BackgroundMode::Frozen,
        &grid,
    )
    .unwrap();
    assert!(cfl_dt(&zero, 0.5).is_infinite());
}

#[test]
fn linear_energy_identity_holds() {
    let grid = Grid::periodic(32, 32).unwrap();
    let mut s = emhd(&grid, sin_bg(), smooth_a, smooth_b);
    let dt = 1e-3;
    let b2 = s.b_norm_sq();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let next = step(&s, dt).unwrap();
        let rep = energy_report(&s, &next);
        worst = worst.max(rep.gap.unwrap().abs());
        s = next;
    }
    assert!(worst <= 1e-5 * b2, "{worst:e}");
}

#[test]
fn hall_energy_identity_holds() {
    let grid = Grid::periodic(32, 32).unwrap();
    let mut s = SolverState::new(
        Variant::HallLinear,
        Params {
            nu: 0.01,
            ..Params::default()
        },
        Arc::new(sin_bg()),
        BackgroundMode::Frozen,
        vec![
            spec(&grid, smooth_b),
            spec(&grid, |x, y| (x + y).sin()),
            spec(&grid, smooth_a),
            spec(&grid, smooth_b),
        ],
    )
    .unwrap();
    let e = s.b_norm_sq() + s.u_norm_sq();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let next = step(&s, 1e-3).unwrap();
        worst = worst.max(energy_report(&s, &next).gap.unwrap().abs());
        s = next;
    }
    assert!(worst <= 1e-5 * e, "{worst:e}");
}

#[test]
fn nonlinear_energy_is_conserved() {
    let grid = Grid::periodic(32, 32).unwrap();
    let s0 = SolverState::new(
        Variant::EmhdNonlinear,
        Params::default(),
        Arc::new(sin_bg()),
        BackgroundMode::Frozen,
        vec![
            spec(&grid, |x, y| 0.1 * (x + y).cos()),
            spec(&grid, |x, y| {
                0.1 * (2.0 * x - y).sin() + 0.05 * (x + 3.0 * y).cos()
            }),
        ],
    )
    .unwrap();
    let cfg = RunConfig {
        t_end: 1.0,
        dt: TimeStep::Fixed(1e-3),
        every: 100,
        s_list: vec![1.0],
        ..RunConfig::default()
    };
    let out = run(s0, &cfg, None).unwrap();
    let e0 = out.records[0].energy;
    let drift = out
        .records
        .iter()
        .map(|r| (r.energy - e0).abs() / e0)
        .fold(0.0, f64::max);
    assert!(drift <= 1e-7, "{drift:e}");
    assert!((out.records.last().unwrap().t - 1.0).abs() < 1e-12);
}

#[test]
fn constant_background_shows_no_growth() {
    let grid = Grid::periodic(64, 64).unwrap();
    let lam = 16.0;
    let s0 = SolverState::new(
        Variant::EmhdLinear,
        Params::default(),
        Arc::new(Background::constant(1.0)),
        BackgroundMode::Frozen,
        vec![
            spec(&grid, move |x, y| (lam * x + 3.0 * y).cos()),
            spec(&grid, move |x, y| 0.1 * (lam * x - 5.0 * y).sin()),
        ],
    )
    .unwrap();
    let h0 = s0.b_hs(1.0);
    let cfg = RunConfig {
        t_end: 0.25,
        dt: TimeStep::Auto,
        every: 1_000_000,
        ..RunConfig::default()
    };
    let out = run(s0, &cfg, None).unwrap();
    let rate = (out.final_state.b_hs(1.0) / h0).ln() / 0.25;
    assert!(rate <= 0.05 * lam, "{rate}");
}

#[test]
fn invalid_parameters_are_rejected() {
    let grid = Grid::periodic(16, 16).unwrap();
    let bg = Arc::new(sin_bg());
    let params = Params {
        eta_diss: 1.0,
        ..Params::default()
    };
    let init = vec![Spectrum::zeros(&grid), Spectrum::zeros(&grid)];
    assert!(SolverState::new(
        Variant::EmhdLinear,
        params,
        bg.clone(),
        BackgroundMode::Frozen,
        init.clone()
    )
    .is_err());
    let params = Params {
        alpha: 1.5,
        ..Params::default()
    };
    assert!(SolverState::new(
        Variant::EmhdFradiss,
        params,
        bg.clone(),
        BackgroundMode::Frozen,
        init.clone()
    )
    .is_err());
    assert!(SolverState::new(
        Variant::HallLinear,
        Params::default(),
        bg,
        BackgroundMode::Frozen,
        init
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn step_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let grid = Grid::periodic(16, 16).unwrap();
        let u = emhd(&grid, sin_bg(), smooth_a, smooth_b);
        let v = emhd(&grid, sin_bg(), smooth_b, smooth_a);
        let combo = step(&u.lincomb(a, &v, b).unwrap(), 0.01).unwrap();
        let sep = step(&u, 0.01).unwrap().lincomb(a, &step(&v, 0.01).unwrap(), b).unwrap();
        prop_assert!(combo.max_diff(&sep) < 1e-12);
    }
}
