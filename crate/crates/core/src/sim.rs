//! Explicit time integration of `df/dt = Q(f, f)` with per-step
//! diagnostics, CSV/snapshot output, and post-hoc monitors.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{weak_functional_field, TestFunction};
use crate::collision::{project_conservative, q_carleman, McConfig};
use crate::constants::{compute_constants, ModelParams};
use crate::error::{Error, Result};
use crate::grid::{build_field, diagnostics, write_snapshot, DiagnosticsRecord, Field, Grid, InitialCondition};
use crate::spectral::{SingularCell, SpectralPlan};

/// Values beyond this magnitude abort the run.
pub const BLOWUP_LIMIT: f64 = 1e12;

/// Relative per-step tolerance of the L2 and entropy monitors.
pub const MONOTONE_TOL: f64 = 1e-6;

/// Relative tolerance of the mass and momentum monitors.
pub const CONSERVATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DtPolicy {
    Fixed { dt: f64 },
    Cfl { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorPolicy {
    #[default]
    None,
    ClampToZero,
}

/// Everything needed to reproduce a run. Missing keys take the defaults
/// of the reference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub params: ModelParams,
    pub grid: Grid,
    pub ic: InitialCondition,
    pub t_end: f64,
    pub dt: DtPolicy,
    /// Write a CSV row every this many steps (the last step is always written).
    pub output_every: usize,
    /// Write a snapshot every this many steps; 0 writes only the first and last.
    pub snapshot_every: usize,
    pub q_list: Vec<f64>,
    pub floor: FloorPolicy,
    /// Seed of the weak-form conservation check.
    pub seed: u64,
    /// Samples of the weak-form conservation check; 0 disables it.
    pub oracle_samples: usize,
    pub cell: SingularCell,
    /// Remove the truncation leak of mass and momentum from every stage.
    pub conservative: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            params: ModelParams { d: 3, gamma: -2.1, s: 0.85 },
            grid: Grid { d: 3, n: 32, l: 8.0 },
            ic: InitialCondition::Gaussian(crate::grid::Gaussian::centered(1.0, 1.0)),
            t_end: 1.0,
            dt: DtPolicy::Cfl { factor: 0.5 },
            output_every: 1,
            snapshot_every: 0,
            q_list: vec![2.0, 4.0],
            floor: FloorPolicy::None,
            seed: 0,
            oracle_samples: 20_000,
            cell: SingularCell::default(),
            conservative: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.params.validate().map_err(|e| Error::Config(e.to_string()))?;
        Grid::new(self.grid.d, self.grid.n, self.grid.l).map_err(|e| Error::Config(e.to_string()))?;
        if self.grid.d != self.params.d {
            return bad(format!("grid dimension {} differs from model dimension {}", self.grid.d, self.params.d));
        }
        if !self.params.very_soft() {
            return bad(format!("gamma + 2s = {} must be negative", self.params.gamma + 2.0 * self.params.s));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        match self.dt {
            DtPolicy::Fixed { dt } if !(dt.is_finite() && dt > 0.0) => {
                return bad(format!("fixed dt must be positive, got {dt}"));
            }
            DtPolicy::Cfl { factor } if !(factor > 0.0 && factor <= 1.0) => {
                return bad(format!("cfl factor must lie in (0, 1], got {factor}"));
            }
            _ => {}
        }
        if self.output_every == 0 {
            return bad("output_every must be at least 1".into());
        }
        if self.q_list.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return bad(format!("weights must be nonnegative, got {:?}", self.q_list));
        }
        Ok(())
    }
}

/// Outcome of one monitor. Monitors with `enforced = false` are reported
/// but do not decide the verdict of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub name: String,
    pub passed: bool,
    /// Worst signed margin, normalised to be dimensionless; negative fails.
    pub margin: f64,
    pub t_worst: f64,
    pub enforced: bool,
    /// Fitted constant of the monitor, if it has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    /// One record per completed step, including `t = 0`.
    pub records: Vec<DiagnosticsRecord>,
    pub verdicts: Vec<MonitorVerdict>,
    pub snapshots: Vec<PathBuf>,
    pub final_field: Field,
    pub steps: usize,
}

impl SimOutcome {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed || !v.enforced)
    }

    pub fn verdict(&self, name: &str) -> Option<&MonitorVerdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

/// Explicit step bound from the frozen coefficients of `f`:
/// `factor / (c_dgs max A |xi_max|^{2s} / frac_norm + c_dgs cR max B)`.
pub fn stable_dt(plan: &mut SpectralPlan, f: &Field, factor: f64) -> Result<f64> {
    if !f.is_finite() {
        return Err(Error::Domain("stable_dt needs a finite field".into()));
    }
    let p = *plan.params();
    let c = compute_constants(&p)?;
    let a = plan.power_convolve(f, p.gamma + 2.0 * p.s)?;
    let b = plan.power_convolve(f, p.gamma)?;
    let max_a = a.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let max_b = b.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let rate = c.c_dgs * max_a * plan.xi_max().powf(2.0 * p.s) / plan.frac_norm() + c.c_dgs * c.c_r * max_b;
    if rate == 0.0 {
        return Err(Error::Degenerate("both coefficients vanish".into()));
    }
    Ok(factor / rate)
}

fn rhs(plan: &mut SpectralPlan, f: &Field, conservative: bool) -> Result<Field> {
    let q = q_carleman(plan, f, f)?;
    Ok(if conservative { project_conservative(f, &q) } else { q })
}

fn check_blowup(f: &Field, t: f64) -> Result<()> {
    if let Some(x) = f.values.iter().find(|x| !x.is_finite() || x.abs() > BLOWUP_LIMIT) {
        return Err(Error::Blowup { t, reason: format!("field value {x}") });
    }
    Ok(())
}

/// One classical Runge-Kutta step. Returns the new field and its minimum
/// before the floor policy is applied.
pub fn step_rk4(
    plan: &mut SpectralPlan,
    f: &Field,
    dt: f64,
    floor: FloorPolicy,
    conservative: bool,
) -> Result<(Field, f64)> {
    let k1 = rhs(plan, f, conservative)?;
    let k2 = rhs(plan, &f.axpy(0.5 * dt, &k1), conservative)?;
    let k3 = rhs(plan, &f.axpy(0.5 * dt, &k2), conservative)?;
    let k4 = rhs(plan, &f.axpy(dt, &k3), conservative)?;
    let mut out = f.clone();
    for i in 0..out.values.len() {
        out.values[i] += dt / 6.0 * (k1.values[i] + 2.0 * (k2.values[i] + k3.values[i]) + k4.values[i]);
    }
    check_blowup(&out, f64::NAN)?;
    let min_f = out.min_value();
    if floor == FloorPolicy::ClampToZero {
        out = out.map(|x| x.max(0.0));
    }
    Ok((out, min_f))
}

fn csv_header(d: usize, q_list: &[f64]) -> String {
    let mut cols = vec!["t".to_string(), "mass".to_string()];
    cols.extend((1..=d).map(|k| format!("p{k}")));
    cols.extend(["energy", "entropy", "l2", "linf", "min_f"].map(String::from));
    cols.extend(q_list.iter().map(|q| format!("wsup_{q}")));
    cols.join(",")
}

fn csv_row(r: &DiagnosticsRecord) -> String {
    let mut vals = vec![r.t, r.mass];
    vals.extend(&r.momentum);
    vals.extend([r.energy, r.entropy, r.l2, r.linf, r.min_f]);
    vals.extend(&r.wsup_q);
    vals.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",")
}

struct Output {
    dir: PathBuf,
    csv: BufWriter<File>,
}

impl Output {
    fn open(dir: &Path, config: &SimConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(File::create(dir.join("diagnostics.csv"))?);
        writeln!(csv, "{}", csv_header(config.grid.d, &config.q_list))?;
        Ok(Self { dir: dir.to_path_buf(), csv })
    }
}

/// Integrate `config` to `t_end`. With `out_dir`, writes `diagnostics.csv`,
/// `snap_<step>.json/.f64` and `verdicts.jsonl` there. On blow-up the last
/// good field is saved as a snapshot before the error is returned.
pub fn run(config: &SimConfig, out_dir: Option<&Path>) -> Result<SimOutcome> {
    config.validate()?;
    let grid = Grid::new(config.grid.d, config.grid.n, config.grid.l)?;
    let mut plan = SpectralPlan::with_cell(grid, config.params, config.cell)?;
    let mut f = build_field(&grid, &config.ic)?;
    let mut out = out_dir.map(|d| Output::open(d, config)).transpose()?;
    let mut snapshots = Vec::new();
    let snap = |out: &Option<Output>, f: &Field, step: usize, t: f64, list: &mut Vec<PathBuf>| -> Result<()> {
        if let Some(o) = out {
            list.push(write_snapshot(&o.dir, &format!("snap_{step}"), f, t, Some(&config.params))?);
        }
        Ok(())
    };

    let first = diagnostics(&f, 0.0, &config.q_list);
    if let Some(o) = out.as_mut() {
        writeln!(o.csv, "{}", csv_row(&first))?;
    }
    snap(&out, &f, 0, 0.0, &mut snapshots)?;
    let energy_rate = {
        let q = rhs(&mut plan, &f, config.conservative)?;
        let g = &f.grid;
        (0..g.len())
            .map(|i| g.coords(i)[..g.d].iter().map(|x| x * x).sum::<f64>() * q.values[i])
            .sum::<f64>()
            * g.cell_volume()
    };
    let oracle_start = conservation_oracle(config, &mut plan, &f, 0.0)?;

    let mut records = vec![first];
    let (mut t, mut step) = (0.0, 0usize);
    while t < config.t_end {
        let dt_max = match config.dt {
            DtPolicy::Fixed { dt } => dt,
            DtPolicy::Cfl { factor } => match stable_dt(&mut plan, &f, factor) {
                Ok(dt) => dt,
                Err(Error::Degenerate(_)) => config.t_end,
                Err(e) => return Err(e),
            },
        };
        // land exactly on t_end without a sliver step
        let remaining = config.t_end - t;
        let dt = if remaining <= dt_max * (1.0 + 1e-12) { remaining } else { dt_max };
        let (next, min_f) = match step_rk4(&mut plan, &f, dt, config.floor, config.conservative) {
            Ok(v) => v,
            Err(Error::Blowup { reason, .. }) => {
                snap(&out, &f, step, t, &mut snapshots)?;
                if let Some(o) = out.as_mut() {
                    o.csv.flush()?;
                }
                return Err(Error::Blowup { t: t + dt, reason });
            }
            Err(e) => return Err(e),
        };
        step += 1;
        t = if dt == remaining { config.t_end } else { t + dt };
        f = next;
        let mut rec = diagnostics(&f, t, &config.q_list);
        rec.min_f = min_f;
        let last = t >= config.t_end;
        if let Some(o) = out.as_mut() {
            if step % config.output_every == 0 || last {
                writeln!(o.csv, "{}", csv_row(&rec))?;
            }
        }
        if last || (config.snapshot_every > 0 && step % config.snapshot_every == 0) {
            snap(&out, &f, step, t, &mut snapshots)?;
        }
        records.push(rec);
    }

    let mut verdicts = evaluate_monitors(config, &records, energy_rate);
    if let (Some(a), Some(b)) = (oracle_start, conservation_oracle(config, &mut plan, &f, t)?) {
        verdicts.push(MonitorVerdict {
            name: "weak_conservation".into(),
            passed: a.0 >= 0.0 && b.0 >= 0.0,
            margin: a.0.min(b.0),
            t_worst: if a.0 <= b.0 { a.1 } else { b.1 },
            enforced: true,
            fitted: None,
        });
    }
    if let Some(mut o) = out {
        o.csv.flush()?;
        let mut jl = BufWriter::new(File::create(o.dir.join("verdicts.jsonl"))?);
        for v in &verdicts {
            writeln!(jl, "{}", serde_json::to_string(v)?)?;
        }
        jl.flush()?;
    }
    Ok(SimOutcome { records, verdicts, snapshots, final_field: f, steps: step })
}

/// Compares `int phi dQ` on the grid with the weak-form estimate for
/// `phi = 1, v_k`. Returns the worst margin `1 - |grid - mc| / (3 se + floor)`
/// and its time, or `None` when disabled.
fn conservation_oracle(config: &SimConfig, plan: &mut SpectralPlan, f: &Field, t: f64) -> Result<Option<(f64, f64)>> {
    if config.oracle_samples == 0 || f.values.iter().all(|&x| x == 0.0) {
        return Ok(None);
    }
    let q = rhs(plan, f, config.conservative)?;
    let g = f.grid;
    let scale = q.values.iter().map(|x| x.abs()).sum::<f64>() * g.cell_volume();
    let mc = McConfig { samples: config.oracle_samples, seed: config.seed, ..Default::default() };
    let mut worst = f64::INFINITY;
    for k in 0..=g.d {
        let phi = if k == 0 { TestFunction::One } else { TestFunction::Component(k - 1) };
        let on_grid = (0..g.len())
            .map(|i| (if k == 0 { 1.0 } else { g.coords(i)[k - 1] }) * q.values[i])
            .sum::<f64>()
            * g.cell_volume();
        let (est, se) = weak_functional_field(&config.params, f, &phi, &mc)?;
        let allowed = 3.0 * se + 1e-12 * scale * if k == 0 { 1.0 } else { g.l };
        worst = worst.min(1.0 - (on_grid - est).abs() / allowed);
    }
    Ok(Some((worst, t)))
}

/// Fit and evaluate every monitor on the per-step series.
pub fn evaluate_monitors(config: &SimConfig, records: &[DiagnosticsRecord], energy_rate: f64) -> Vec<MonitorVerdict> {
    let p = &config.params;
    let r0 = &records[0];
    let mut out = Vec::new();

    // worst of `margin(k)` over k >= 1
    let worst = |m: &dyn Fn(usize) -> f64| -> (f64, f64) {
        (1..records.len()).map(|k| (m(k), records[k].t)).fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a })
    };
    let finish = |name: &str, (margin, t): (f64, f64), enforced: bool, fitted: Option<f64>| {
        // no steps taken: nothing to violate
        let margin = if margin == f64::INFINITY { 1.0 } else { margin };
        MonitorVerdict { name: name.into(), passed: margin >= 0.0, margin, t_worst: t, enforced, fitted }
    };

    out.push(finish(
        "l2_monotone",
        worst(&|k| {
            let prev = records[k - 1].l2;
            if prev == 0.0 {
                -records[k].l2
            } else {
                MONOTONE_TOL - (records[k].l2 - prev) / prev
            }
        }),
        l2_monitor_enforced(p),
        None,
    ));

    let m0 = r0.mass.abs();
    out.push(finish(
        "mass",
        worst(&|k| {
            let drift = (records[k].mass - r0.mass).abs();
            if m0 == 0.0 { -drift } else { CONSERVATION_TOL - drift / m0 }
        }),
        true,
        None,
    ));
    let l = config.grid.l;
    out.push(finish(
        "momentum",
        worst(&|k| {
            let drift = records[k].momentum.iter().zip(&r0.momentum).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if m0 == 0.0 { -drift } else { CONSERVATION_TOL - drift / (m0 * l) }
        }),
        true,
        None,
    ));

    out.push(finish(
        "entropy_monotone",
        worst(&|k| {
            let prev = records[k - 1].entropy;
            let scale = prev.abs().max(m0);
            let inc = records[k].entropy - prev;
            if scale == 0.0 { -inc } else { MONOTONE_TOL - inc / scale }
        }),
        true,
        None,
    ));

    let (c, envelope) = fit_energy_envelope(r0.energy, r0.mass.abs() + r0.l2, energy_rate, config.t_end);
    out.push(finish(
        "energy_envelope",
        worst(&|k| {
            let e = envelope(records[k].t);
            if e == 0.0 { -(records[k].energy.abs()) } else { (e - records[k].energy) / e }
        }),
        true,
        Some(c),
    ));

    // sup f <= N (t^{-d/2s} + 1) for t >= t_end / 2, with N = sup f_in
    let n_fit = r0.linf;
    let shape = |t: f64| n_fit * (t.powf(-(p.d as f64) / (2.0 * p.s)) + 1.0);
    out.push(finish(
        "linf_shape",
        worst(&|k| {
            let r = &records[k];
            if !r.linf.is_finite() {
                f64::NEG_INFINITY
            } else if r.t < 0.5 * config.t_end || r.linf == 0.0 {
                1.0
            } else if n_fit == 0.0 {
                -1.0
            } else {
                1.0 - r.linf / shape(r.t)
            }
        }),
        true,
        Some(n_fit),
    ));

    for (j, q) in config.q_list.iter().enumerate() {
        let w0 = r0.wsup_q[j];
        let kappa = fit_decay_rate(records, j);
        out.push(finish(
            &format!("weighted_linf_q{q}"),
            worst(&|k| {
                let bound = w0 * (kappa * records[k].t).exp();
                if bound == 0.0 { -records[k].wsup_q[j] } else { 1.0 - records[k].wsup_q[j] / bound }
            }),
            true,
            Some(kappa),
        ));
    }
    out
}

/// The L2 monitor asserts only where monotonicity is a theorem:
/// `-(d + 4s)/3 <= gamma < -2s`.
pub fn l2_monitor_enforced(p: &ModelParams) -> bool {
    p.main_theorem_range() || p.l2_monotone_range()
}

/// Energy envelope `E0 e^{kt} + C'(e^{kt} - 1)` with `k = C' = C S`,
/// `S = |f|_1 + |f|_2`. `C` is the smallest constant whose envelope grows at
/// least twice as fast as the initial energy rate, with a floor of
/// `1e-6 E0 / t_end` on that rate so that a conserved energy has room for
/// round-off. Returns `C` and the envelope.
pub fn fit_energy_envelope(e0: f64, s_norm: f64, rate: f64, t_end: f64) -> (f64, impl Fn(f64) -> f64) {
    let target = 2.0 * rate.max(0.0) + 1e-6 * e0.abs() / t_end;
    // S^2 C^2 + S E0 C - target = 0, positive root
    let c = if s_norm == 0.0 {
        0.0
    } else {
        let (a, b) = (s_norm * s_norm, s_norm * e0);
        2.0 * target / (b + (b * b + 4.0 * a * target).sqrt())
    };
    let k = c * s_norm;
    (c, move |t: f64| {
        let g = (k * t).exp_m1();
        e0 + e0 * g + k * g
    })
}

/// Rate `kappa` of the weighted sup-norm bound: twice the largest forward
/// log-rate over the first tenth of the run, and never negative.
fn fit_decay_rate(records: &[DiagnosticsRecord], j: usize) -> f64 {
    let t_end = records.last().map_or(0.0, |r| r.t);
    let w0 = records[0].wsup_q[j];
    if w0 == 0.0 {
        return 0.0;
    }
    let rate = records
        .iter()
        .skip(1)
        .take_while(|r| r.t <= 0.1 * t_end || r.t == records[1].t)
        .map(|r| (r.wsup_q[j] / w0).ln() / r.t)
        .fold(0.0f64, f64::max);
    2.0 * rate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_lists_all_columns() {
        assert_eq!(csv_header(2, &[2.0, 4.5]), "t,mass,p1,p2,energy,entropy,l2,linf,min_f,wsup_2,wsup_4.5");
    }

    #[test]
    fn envelope_starts_at_e0_and_dominates_the_initial_rate() {
        let (c, env) = fit_energy_envelope(3.0, 2.0, 0.5, 1.0);
        assert!(c > 0.0);
        assert_eq!(env(0.0), 3.0);
        let slope = (env(1e-6) - env(0.0)) / 1e-6;
        assert!((slope - (1.0 + 1e-6 * 3.0)).abs() < 1e-4, "{slope}");
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut c = SimConfig::default();
        assert!(c.validate().is_ok());
        c.t_end = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = SimConfig::default();
        c.dt = DtPolicy::Cfl { factor: 1.5 };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = SimConfig::default();
        c.grid.d = 2;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
