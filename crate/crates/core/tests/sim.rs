use std::fs;

use isoboltz_core::constants::ModelParams;
use isoboltz_core::grid::{build_field, diagnostics, read_snapshot, Field, Gaussian, Grid, InitialCondition};
use isoboltz_core::sim::{l2_monitor_enforced, run, stable_dt, step_rk4, DtPolicy, FloorPolicy, SimConfig};
use isoboltz_core::spectral::SpectralPlan;
use isoboltz_core::Error;

fn small_config() -> SimConfig {
    SimConfig {
        grid: Grid::new(3, 16, 6.0).unwrap(),
        t_end: 0.3,
        oracle_samples: 2000,
        ..SimConfig::default()
    }
}

fn default_setup() -> (SpectralPlan, Field) {
    let cfg = SimConfig::default();
    let plan = SpectralPlan::new(cfg.grid, cfg.params).unwrap();
    let f = build_field(&cfg.grid, &cfg.ic).unwrap();
    (plan, f)
}

#[test]
fn default_run_passes_every_monitor() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&SimConfig::default(), Some(dir.path())).unwrap();
    for v in &out.verdicts {
        assert!(v.passed && v.enforced, "{v:?}");
    }
    assert_eq!(out.records.last().unwrap().t, 1.0);
    let csv = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,mass,p1,p2,p3,energy,entropy,l2,linf,min_f,wsup_2,wsup_4");
    assert_eq!(lines.count(), out.steps + 1);
    let jl = fs::read_to_string(dir.path().join("verdicts.jsonl")).unwrap();
    assert_eq!(jl.lines().count(), out.verdicts.len());
    assert!(dir.path().join(format!("snap_{}.f64", out.steps)).exists());
    assert!(dir.path().join("snap_0.json").exists());
}

#[test]
fn identical_configs_give_identical_csv() {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&cfg, Some(a.path())).unwrap();
    run(&cfg, Some(b.path())).unwrap();
    for name in ["diagnostics.csv", "verdicts.jsonl"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn zero_initial_data_stay_zero() {
    let cfg = SimConfig { ic: InitialCondition::Zero, ..small_config() };
    let out = run(&cfg, None).unwrap();
    assert_eq!(out.steps, 1);
    assert!(out.final_field.values.iter().all(|&x| x == 0.0));
    assert!(out.all_passed(), "{:?}", out.verdicts);
}

#[test]
fn momentum_of_two_gaussians_is_constant() {
    let comps = vec![
        Gaussian { mass: 0.7, center: vec![0.8, 0.0, -0.3], variance: 0.6 },
        Gaussian { mass: 0.4, center: vec![-0.5, 0.6, 0.0], variance: 0.9 },
    ];
    let cfg = SimConfig { ic: InitialCondition::Sum { components: comps }, ..small_config() };
    let out = run(&cfg, None).unwrap();
    let p0 = &out.records[0].momentum;
    assert!((p0[0] - 0.36).abs() < 1e-6);
    for r in &out.records {
        for k in 0..3 {
            assert!((r.momentum[k] - p0[k]).abs() < 1e-6, "{:?} vs {p0:?}", r.momentum);
        }
    }
    assert!(out.verdict("momentum").unwrap().passed);
}

#[test]
fn stable_dt_regression_and_homogeneity() {
    let (mut plan, f) = default_setup();
    let dt = stable_dt(&mut plan, &f, 0.5).unwrap();
    let golden: f64 = include_str!("golden/stable_dt_default.txt").trim().parse().unwrap();
    assert!((dt - golden).abs() < 1e-12 * golden, "{dt:e} vs {golden:e}");
    let half = stable_dt(&mut plan, &f.scaled(2.0), 0.5).unwrap();
    assert!((half - 0.5 * dt).abs() < 1e-13 * dt);
    let zero = stable_dt(&mut plan, &Field::zeros(f.grid), 0.5);
    assert!(matches!(zero, Err(Error::Degenerate(_))));
}

#[test]
fn one_step_keeps_mass() {
    let (mut plan, f) = default_setup();
    let dt = stable_dt(&mut plan, &f, 0.5).unwrap();
    let (g, min_f) = step_rk4(&mut plan, &f, dt, FloorPolicy::None, true).unwrap();
    let (m0, m1) = (f.integral(), g.integral());
    assert!((m1 - m0).abs() < 1e-8 * m0);
    assert_eq!(min_f, g.min_value());
    let (z, _) = step_rk4(&mut plan, &Field::zeros(f.grid), dt, FloorPolicy::None, true).unwrap();
    assert!(z.values.iter().all(|&x| x == 0.0));
}

#[test]
fn floor_clamps_after_recording_the_minimum() {
    let grid = Grid::new(1, 16, 4.0).unwrap();
    let params = ModelParams::new(1, -0.6, 0.2).unwrap();
    let mut plan = SpectralPlan::new(grid, params).unwrap();
    // a negative dip next to a bump
    let f = Field::from_fn(grid, |v| (-v[0] * v[0]).exp() - 0.2 * (-4.0 * (v[0] - 2.5).powi(2)).exp());
    let (g, min_f) = step_rk4(&mut plan, &f, 1e-3, FloorPolicy::ClampToZero, false).unwrap();
    assert!(min_f < 0.0);
    assert_eq!(g.min_value(), 0.0);
}

#[test]
fn local_error_is_fifth_order() {
    let grid = Grid::new(3, 16, 6.0).unwrap();
    let params = ModelParams::new(3, -2.1, 0.85).unwrap();
    let mut plan = SpectralPlan::new(grid, params).unwrap();
    let g = Gaussian { mass: 1.0, center: vec![0.3, 0.0, 0.0], variance: 0.7 };
    let f0 = build_field(&grid, &InitialCondition::Gaussian(g)).unwrap();
    let h = stable_dt(&mut plan, &f0, 0.5).unwrap();
    let mut local_error = |dt: f64| {
        let one = step_rk4(&mut plan, &f0, dt, FloorPolicy::None, true).unwrap().0;
        let mut reference = f0.clone();
        for _ in 0..8 {
            reference = step_rk4(&mut plan, &reference, dt / 8.0, FloorPolicy::None, true).unwrap().0;
        }
        one.axpy(-1.0, &reference).l2_norm()
    };
    let (e1, e2) = (local_error(h), local_error(0.5 * h));
    let order = (e1 / e2).log2() - 1.0;
    assert!(order >= 3.8, "measured global order {order}");
}

#[test]
fn l2_monitor_only_asserts_above_the_threshold() {
    let inside = ModelParams::new(3, -2.1, 0.85).unwrap();
    let below = ModelParams::new(3, -2.15, 0.85).unwrap();
    assert!(l2_monitor_enforced(&inside));
    assert!(!l2_monitor_enforced(&below));
    // the weaker L2 range also counts in two dimensions
    assert!(l2_monitor_enforced(&ModelParams::new(2, -1.3, 0.6).unwrap()));
    assert!(!l2_monitor_enforced(&ModelParams::new(2, -1.2, 0.3).unwrap()));
    let cfg = SimConfig { params: below, t_end: 0.1, ..small_config() };
    let out = run(&cfg, None).unwrap();
    let v = out.verdict("l2_monotone").unwrap();
    assert!(!v.enforced);
}

#[test]
fn blowup_saves_the_last_good_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimConfig { dt: DtPolicy::Fixed { dt: 200.0 }, t_end: 1e4, oracle_samples: 0, ..small_config() };
    let t_fail = match run(&cfg, Some(dir.path())) {
        Err(Error::Blowup { t, .. }) => t,
        other => panic!("expected blow-up, got {other:?}"),
    };
    let last_step = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|n| n.strip_prefix("snap_")?.strip_suffix(".json")?.parse::<usize>().ok())
        .max()
        .unwrap();
    let (field, meta) = read_snapshot(&dir.path().join(format!("snap_{last_step}.json"))).unwrap();
    assert_eq!(meta.t, t_fail - 200.0);
    assert!(field.is_finite());
}

#[test]
fn config_json_uses_defaults_and_rejects_unknown_keys() {
    let cfg: SimConfig = serde_json::from_str(r#"{"t_end": 0.5, "dt": {"kind": "fixed", "dt": 0.01}}"#).unwrap();
    assert_eq!(cfg.t_end, 0.5);
    assert_eq!(cfg.grid, SimConfig::default().grid);
    assert!(serde_json::from_str::<SimConfig>(r#"{"tend": 1}"#).is_err());
    let text = serde_json::to_string(&SimConfig::default()).unwrap();
    assert_eq!(serde_json::from_str::<SimConfig>(&text).unwrap(), SimConfig::default());
}

#[test]
fn cadence_thins_the_csv_but_keeps_the_last_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimConfig { output_every: 3, snapshot_every: 2, oracle_samples: 0, ..small_config() };
    let out = run(&cfg, Some(dir.path())).unwrap();
    let csv = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let expected = 1 + out.steps / 3 + usize::from(out.steps % 3 != 0);
    assert_eq!(rows.len(), expected);
    let last_t: f64 = rows.last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert_eq!(last_t, cfg.t_end);
    let d = diagnostics(&out.final_field, cfg.t_end, &cfg.q_list);
    assert_eq!(d.mass, out.records.last().unwrap().mass);
}
