//! `isoboltz`: constants, threshold scans, operator and inequality checks,
//! and simulations from the command line.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad configuration or input,
//! 3 the simulation blew up.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isoboltz_core::analysis::{hardy_gap, InequalityReport};
use isoboltz_core::collision::{q_carleman, q_direct_point_density, q_landau_iso, GaussianDensity, McConfig};
use isoboltz_core::constants::{compute_constants, threshold_scan, ModelParams};
use isoboltz_core::grid::{build_field, Gaussian, Grid, InitialCondition};
use isoboltz_core::sim::{run, SimConfig};
use isoboltz_core::spectral::SpectralPlan;
use isoboltz_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "isoboltz", version, about = "Isotropic Boltzmann solver and checks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file (simulate only).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    d: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    s: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a configuration key, e.g. `--set grid.n=16` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print every closed-form constant as JSON.
    Constants,
    /// Write `gamma,phi,ratio` samples and report the root of Phi = 1.
    ScanPhi {
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 41)]
        n: usize,
    },
    /// Compare the grid operator with Monte-Carlo point values on Gaussian data.
    CheckOperator {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long = "L", default_value_t = 8.0)]
        l: f64,
        #[arg(long, default_value_t = 5)]
        nodes: usize,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
    },
    /// Evaluate the weighted Hardy inequality on random mixture pairs.
    CheckHardy {
        #[arg(long, default_value_t = 12)]
        n: usize,
        #[arg(long = "L", default_value_t = 4.0)]
        l: f64,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
    },
    /// Operator gap to the Landau limit along s -> 1.
    LandauLimit {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long = "L", default_value_t = 8.0)]
        l: f64,
    },
    /// Run a simulation and write CSV, snapshots and monitor verdicts.
    Simulate,
}

enum Failure {
    Check,
    Input(String),
    Blowup(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Blowup { .. } => Failure::Blowup(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Constants => constants(&cli.common),
        Command::ScanPhi { from, to, n } => scan_phi(&cli.common, *from, *to, *n),
        Command::CheckOperator { n, l, nodes, samples } => check_operator(&cli.common, *n, *l, *nodes, *samples),
        Command::CheckHardy { n, l, pairs } => check_hardy(&cli.common, *n, *l, *pairs),
        Command::LandauLimit { n, l } => landau_limit(&cli.common, *n, *l),
        Command::Simulate => simulate(&cli.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Blowup(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("ISOBOLTZ_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("ISOBOLTZ_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("ISOBOLTZ_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn params(c: &Common, d: usize, gamma: f64, s: f64) -> Result<ModelParams, Failure> {
    Ok(ModelParams::new(c.d.unwrap_or(d), c.gamma.unwrap_or(gamma), c.s.unwrap_or(s))?)
}

/// Print to `--out` if given, stdout otherwise.
fn emit(c: &Common, text: &str) -> Outcome {
    match &c.out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn verdict(all_passed: bool) -> Outcome {
    if all_passed {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn constants(c: &Common) -> Outcome {
    let p = params(c, 3, -2.1, 0.85)?;
    let set = compute_constants(&p)?;
    let out = json!({
        "params": p,
        "constants": set,
        "l2_threshold": p.l2_threshold(),
        "main_theorem_range": p.main_theorem_range(),
    });
    emit(c, &format!("{}\n", serde_json::to_string_pretty(&out)?))
}

fn scan_phi(c: &Common, from: f64, to: f64, n: usize) -> Outcome {
    let p = params(c, 3, -2.1, 0.85)?;
    let scan = threshold_scan(p.d, p.s, from, to, n)?;
    let mut csv = String::from("gamma,phi,ratio\n");
    for r in &scan.samples {
        csv.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", r.gamma, r.phi, r.ratio));
    }
    emit(c, &csv)?;
    eprintln!("root of Phi = 1: {:.15} (predicted {:.15})", scan.root, p.l2_threshold());
    Ok(())
}

fn check_operator(c: &Common, n: usize, l: f64, nodes: usize, samples: usize) -> Outcome {
    let p = params(c, 3, -2.1, 0.85)?;
    let grid = Grid::new(p.d, n, l)?;
    let gauss = Gaussian::centered(1.0, 1.0);
    let f = build_field(&grid, &InitialCondition::Gaussian(gauss.clone()))?;
    let mut plan = SpectralPlan::new(grid, p)?;
    let q = q_carleman(&mut plan, &f, &f)?;
    let dens = GaussianDensity::single(p.d, gauss)?;
    let seed = c.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for k in 0..nodes {
        let node: Vec<f64> = (0..p.d).map(|_| rng.random_range(-0.3 * l..0.3 * l)).collect();
        let i = grid.nearest_index(&node);
        let cfg = McConfig { samples, seed: seed.wrapping_add(k as u64 + 1), ..Default::default() };
        let (est, se) = q_direct_point_density(&p, &dens, &dens, &grid.coords(i)[..p.d], &cfg)?;
        reports.push(InequalityReport::new(
            &format!("grid vs monte carlo at node {i}"),
            (q.values[i] - est).abs(),
            3.0 * se,
            0.0,
            "monte_carlo_3se",
            samples,
        ));
    }
    emit(c, &format!("{}\n", serde_json::to_string_pretty(&reports)?))?;
    verdict(reports.iter().all(|r| r.passed))
}

fn random_mixture(rng: &mut ChaCha8Rng, d: usize, narrow: bool) -> Vec<Gaussian> {
    (0..2)
        .map(|_| {
            let mass: f64 = rng.random_range(0.2..1.0);
            let center = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let variance: f64 = rng.random_range(0.4..1.2);
            if narrow {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Gaussian { mass: sign * mass, center, variance: 0.3 * variance }
            } else {
                Gaussian { mass, center, variance }
            }
        })
        .collect()
}

fn check_hardy(c: &Common, n: usize, l: f64, pairs: usize) -> Outcome {
    let p = params(c, 3, -2.1, 0.85)?;
    let grid = Grid::new(p.d, n, l)?;
    let mut plan = SpectralPlan::new(grid, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed.unwrap_or(0));
    let mut reports = Vec::new();
    for _ in 0..pairs {
        let f = build_field(&grid, &InitialCondition::Sum { components: random_mixture(&mut rng, p.d, false) })?;
        let u = build_field(&grid, &InitialCondition::Sum { components: random_mixture(&mut rng, p.d, true) })?;
        reports.push(hardy_gap(&mut plan, &u, &f)?);
    }
    emit(c, &format!("{}\n", serde_json::to_string_pretty(&reports)?))?;
    verdict(reports.iter().all(|r| r.passed))
}

fn landau_limit(c: &Common, n: usize, l: f64) -> Outcome {
    let d = c.d.unwrap_or(3);
    let gamma = c.gamma.unwrap_or(-2.5);
    let grid = Grid::new(d, n, l)?;
    let f = build_field(&grid, &InitialCondition::Gaussian(Gaussian::centered(1.0, 1.0)))?;
    let mut rows = Vec::new();
    for s in [0.9, 0.99, 0.999, 0.9999] {
        let p = ModelParams::new(d, gamma, s)?;
        let consts = compute_constants(&p)?;
        let mut plan = SpectralPlan::new(grid, p)?;
        let q = q_carleman(&mut plan, &f, &f)?;
        let ql = q_landau_iso(&mut plan, &f, &f)?;
        rows.push(json!({
            "s": s,
            "gap": q.axpy(-1.0, &ql).l2_norm() / ql.l2_norm(),
            "c1": consts.c1,
            "a_landau": consts.a_landau,
        }));
    }
    let gaps: Vec<f64> = rows.iter().map(|r| r["gap"].as_f64().unwrap_or(f64::NAN)).collect();
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    emit(c, &format!("{}\n", serde_json::to_string_pretty(&json!({ "rows": rows, "decreasing": decreasing }))?))?;
    verdict(decreasing)
}

/// Set `root.a.b = value` for the dotted key `a.b`; `value` is parsed as
/// JSON and falls back to a string.
fn apply_override(root: &mut Value, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Input(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Failure::Input(format!("--set {key}: {part:?} is not inside an object")))?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part).or_insert_with(|| json!({}));
    }
    Err(Failure::Input(format!("--set needs a key, got {assignment:?}")))
}

fn resolve_config(c: &Common) -> Result<SimConfig, Failure> {
    let mut value = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
        }
        None => json!({}),
    };
    let mut cfg: SimConfig =
        serde_json::from_value(value.clone()).map_err(|e| Failure::Input(format!("configuration: {e}")))?;
    if let Some(d) = c.d {
        cfg.params.d = d;
        cfg.grid.d = d;
    }
    cfg.params.gamma = c.gamma.unwrap_or(cfg.params.gamma);
    cfg.params.s = c.s.unwrap_or(cfg.params.s);
    cfg.seed = c.seed.unwrap_or(cfg.seed);
    if !c.set.is_empty() {
        value = serde_json::to_value(&cfg)?;
        for a in &c.set {
            apply_override(&mut value, a)?;
        }
        cfg = serde_json::from_value(value).map_err(|e| Failure::Input(format!("configuration: {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(c: &Common) -> Outcome {
    let cfg = resolve_config(c)?;
    let out_dir = c.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("resolved_config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let outcome = run(&cfg, Some(Path::new(&out_dir)))?;
    for v in &outcome.verdicts {
        eprintln!(
            "{:<5} {:<22} margin {:>11.3e} at t = {:.4}{}{}",
            if v.passed { "ok" } else { "FAIL" },
            v.name,
            v.margin,
            v.t_worst,
            v.fitted.map(|x| format!(", fitted {x:.6}")).unwrap_or_default(),
            if v.enforced { "" } else { " (report only)" }
        );
    }
    eprintln!("{} steps, output in {}", outcome.steps, out_dir.display());
    verdict(outcome.all_passed())
}
