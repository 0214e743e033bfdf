use degenwave::experiments::{
    parse_config_str, rederive_from_dir, run_experiment, ConfigError, ExperimentConfig,
    ExperimentKind, Table,
};

fn parse_err(text: &str) -> ConfigError {
    parse_config_str(text).unwrap_err()
}

#[test]
fn minimal_config_takes_defaults() {
    let cfg = parse_config_str("experiment = norm_growth\n").unwrap();
    assert_eq!(cfg, ExperimentConfig::defaults(ExperimentKind::NormGrowth));
    let cfg = parse_config_str("experiment = norm_growth\nlambdas = [8, 16]\n[grid]\nly = 2pi\n")
        .unwrap();
    assert_eq!(cfg.lambdas, vec![8, 16]);
    assert!((cfg.grid.ly - 2.0 * std::f64::consts::PI).abs() < 1e-15);
}

#[test]
fn every_experiment_has_valid_defaults() {
    for name in [
        "rays",
        "packet_validate",
        "degeneration",
        "norm_growth",
        "hall_growth",
        "fradiss",
        "nonlinear_demo",
    ] {
        let kind: ExperimentKind = name.parse().unwrap();
        assert_eq!(kind.name(), name);
        ExperimentConfig::defaults(kind).validate().unwrap();
    }
}

#[test]
fn empty_lambda_list_is_rejected() {
    match parse_err("experiment = norm_growth\nlambdas = []\n") {
        ConfigError::Validation { key, reason } => {
            assert_eq!(key, "lambdas");
            assert!(reason.contains("nonempty"), "{reason}");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn unknown_experiment_lists_the_choices() {
    let msg = parse_err("experiment = warp_drive\n").to_string();
    assert!(
        msg.contains("warp_drive") && msg.contains("norm_growth"),
        "{msg}"
    );
    assert!(matches!(
        parse_err("seed = 3\n"),
        ConfigError::Validation { .. }
    ));
}

#[test]
fn parse_errors_carry_line_numbers() {
    match parse_err("experiment = rays\n\n[grid]\nbogus = 1\n") {
        ConfigError::Parse { line, key, .. } => assert_eq!((line, key.as_str()), (4, "bogus")),
        e => panic!("unexpected {e}"),
    }
    // t_end exists in [solver] and [rays]
    match parse_err("experiment = rays\nt_end = 1\n") {
        ConfigError::Parse { line, reason, .. } => {
            assert_eq!(line, 2);
            assert!(reason.contains("ambiguous"));
        }
        e => panic!("unexpected {e}"),
    }
    assert!(matches!(
        parse_err("experiment = rays\n[grid]\nnx = sixteen\n"),
        ConfigError::Parse { line: 3, .. }
    ));
    assert!(matches!(
        parse_err("experiment = rays\n[warp]\n"),
        ConfigError::Parse { line: 2, .. }
    ));
}

#[test]
fn out_of_range_values_are_rejected() {
    assert!(matches!(
        parse_err("experiment = fradiss\n[solver]\nalpha = 1.5\n"),
        ConfigError::Validation { .. }
    ));
    // far too coarse for lambda = 32
    assert!(matches!(
        parse_err("experiment = norm_growth\n[grid]\nny = 64\n"),
        ConfigError::Validation { .. }
    ));
}

#[test]
fn table_csv_round_trip() {
    let mut t = Table::new("demo", vec!["t".into(), "v".into()]);
    t.set_meta("lambda", 16.0);
    t.rows.push(vec![0.1, 1.0 / 3.0]);
    t.rows.push(vec![0.2, f64::NAN]);
    t.rows.push(vec![1e-300, -2.5e17]);
    let mut buf = Vec::new();
    t.write(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("# degenwave demo v1\n"));
    let back = Table::read(&buf[..]).unwrap();
    assert_eq!(back.meta("lambda"), Some(16.0));
    assert_eq!(back.columns, t.columns);
    assert_eq!(back.rows[0], t.rows[0]);
    assert!(back.rows[1][1].is_nan());
    assert_eq!(back.rows[2], t.rows[2]);
    assert!(Table::read(&b"no header\n"[..]).is_err());
}

#[test]
fn verdicts_are_reproduced_from_written_tables() {
    let cfg = ExperimentConfig::defaults(ExperimentKind::PacketValidate);
    let out = run_experiment(&cfg).unwrap();
    assert!(out.report.all_pass, "{:?}", out.report.derived.verdicts);
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path(), true).unwrap();
    assert!(dir.path().join("report.json").exists());
    let again = rederive_from_dir(&cfg, dir.path()).unwrap();
    assert_eq!(again, out.report.derived);
}

#[test]
fn named_runners_check_the_experiment_kind() {
    let cfg = ExperimentConfig::defaults(ExperimentKind::PacketValidate);
    assert!(degenwave::experiments::run_rays(&cfg).is_err());
    let out = degenwave::experiments::run_packet_validate(&cfg).unwrap();
    assert_eq!(out.report.experiment, ExperimentKind::PacketValidate);
}
