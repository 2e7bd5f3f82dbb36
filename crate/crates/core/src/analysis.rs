//! Checks that do not go through the grid operator: a Monte-Carlo weak form
//! `int phi Q(f, f)`, direct double sums for the weighted fractional Hardy
//! inequality and the coercivity form, and a quadrature check of the
//! identity `-L_s |.|^{gamma+2s} = cR |.|^gamma`.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{mc_reduce, random_direction, Density, GridDensity, McConfig, Profile};
use crate::constants::{compute_constants, ModelParams};
use crate::error::{Error, Result};
use crate::grid::{Field, MAX_DIM};
use crate::quad::{exp_sinh, tanh_sinh};
use crate::spectral::SpectralPlan;
use crate::specfun::unit_sphere_area;

/// Outcome of a one-sided check `lhs <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    /// Absolute tolerance: `passed` iff `slack >= -tolerance`.
    pub tolerance: f64,
    pub passed: bool,
    pub method: String,
    /// Number of terms or samples behind `lhs` and `rhs`.
    pub terms: usize,
}

impl InequalityReport {
    pub fn new(name: &str, lhs: f64, rhs: f64, tolerance: f64, method: &str, terms: usize) -> Self {
        let slack = rhs - lhs;
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            slack,
            tolerance,
            passed: slack >= -tolerance,
            method: method.to_string(),
            terms,
        }
    }
}

/// Test function for [`weak_functional`].
pub enum TestFunction<'a> {
    One,
    /// `phi(v) = v_k`.
    Component(usize),
    /// `phi(v) = |v|^2`.
    EnergySq,
    /// `phi = log f`; `f` must be positive wherever it is evaluated.
    LogDensity,
    /// Gaussian bump `exp(-|v - c|^2 / (2 width^2))`.
    Bump { center: [f64; MAX_DIM], width: f64 },
    /// Any profile; `growth` bounds `|phi(v)|` by `C (1 + |v|)^growth`.
    Custom { phi: &'a dyn Profile, growth: f64 },
}

impl TestFunction<'_> {
    fn growth(&self) -> f64 {
        match self {
            // the bracket vanishes identically, so no tail shaping is needed
            TestFunction::One | TestFunction::Component(_) => 0.0,
            TestFunction::EnergySq | TestFunction::LogDensity => 2.0,
            TestFunction::Bump { .. } => 0.0,
            TestFunction::Custom { growth, .. } => *growth,
        }
    }
}

/// `phi` bound to a density, with exact second and central differences.
struct BoundPhi<'a> {
    phi: &'a TestFunction<'a>,
    f: &'a dyn Density,
    scale: f64,
    nonpositive: &'a AtomicBool,
}

fn shifted(x: &[f64], w: &[f64]) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
    let mut p = [0.0; MAX_DIM];
    let mut m = [0.0; MAX_DIM];
    for k in 0..x.len() {
        p[k] = x[k] + w[k];
        m[k] = x[k] - w[k];
    }
    (p, m)
}

impl BoundPhi<'_> {
    fn bump_parts(center: &[f64; MAX_DIM], width: f64, x: &[f64], w: &[f64]) -> (f64, f64, f64) {
        // value, exponent a = |w|^2/(2 width^2), b = (x-c).w / width^2
        let mut r2 = 0.0;
        let mut a = 0.0;
        let mut b = 0.0;
        for k in 0..x.len() {
            let y = x[k] - center[k];
            r2 += y * y;
            a += w[k] * w[k];
            b += y * w[k];
        }
        let w2 = width * width;
        ((-0.5 * r2 / w2).exp(), 0.5 * a / w2, b / w2)
    }

    /// Offsets beyond a tenth of the data scale use `ln f` directly.
    fn far(&self, w: &[f64]) -> bool {
        w.iter().map(|t| t * t).sum::<f64>() > 0.01 * self.scale * self.scale
    }

    fn log_checked(&self, x: &[f64]) -> f64 {
        let l = self.f.log_eval(x);
        if l.is_nan() || l == f64::NEG_INFINITY {
            self.nonpositive.store(true, Ordering::Relaxed);
        }
        l
    }

    fn positive(&self, x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            self.nonpositive.store(true, Ordering::Relaxed);
            f64::NAN
        }
    }

    /// `phi(x+w) + phi(x-w) - 2 phi(x)`.
    fn second(&self, x: &[f64], w: &[f64]) -> f64 {
        match self.phi {
            TestFunction::One | TestFunction::Component(_) => 0.0,
            TestFunction::EnergySq => 2.0 * w.iter().map(|t| t * t).sum::<f64>(),
            TestFunction::LogDensity if self.far(w) => {
                let d = x.len();
                let (p, m) = shifted(x, w);
                self.log_checked(&p[..d]) + self.log_checked(&m[..d]) - 2.0 * self.log_checked(x)
            }
            TestFunction::LogDensity => {
                // log(f(x+w) f(x-w) / f(x)^2) from the differences of f
                let fx = self.positive(self.f.eval(x));
                let d2 = self.f.second_difference(x, w);
                let d1 = self.f.central_difference(x, w);
                let ratio = d2 / fx + (d2 * d2 - d1 * d1) / (4.0 * fx * fx);
                if ratio <= -1.0 {
                    self.positive(0.0);
                }
                ratio.ln_1p()
            }
            TestFunction::Bump { center, width } => {
                let (g, a, b) = Self::bump_parts(center, *width, x, w);
                if a > 1.0 || b.abs() > 1.0 {
                    let d = x.len();
                    let (p, m) = shifted(x, w);
                    let bump = |y: &[f64]| Self::bump_parts(center, *width, y, &[0.0; MAX_DIM][..d]).0;
                    return (bump(&p[..d]) - g) + (bump(&m[..d]) - g);
                }
                let sh = (0.5 * b).sinh();
                2.0 * g * ((-a).exp() * 2.0 * sh * sh + (-a).exp_m1())
            }
            TestFunction::Custom { phi, .. } => phi.second_difference(x, w),
        }
    }

    /// `phi(x+w) - phi(x-w)`.
    fn central(&self, x: &[f64], w: &[f64]) -> f64 {
        match self.phi {
            TestFunction::One => 0.0,
            TestFunction::Component(k) => 2.0 * w[*k],
            TestFunction::EnergySq => 4.0 * x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>(),
            TestFunction::LogDensity if self.far(w) => {
                let d = x.len();
                let (p, m) = shifted(x, w);
                self.log_checked(&p[..d]) - self.log_checked(&m[..d])
            }
            TestFunction::LogDensity => {
                let d = x.len();
                let mut m = [0.0; MAX_DIM];
                for k in 0..d {
                    m[k] = x[k] - w[k];
                }
                let fm = self.positive(self.f.eval(&m[..d]));
                let d1 = self.f.central_difference(x, w);
                if d1 / fm <= -1.0 {
                    self.positive(0.0);
                }
                (d1 / fm).ln_1p()
            }
            TestFunction::Bump { center, width } => {
                let (g, a, b) = Self::bump_parts(center, *width, x, w);
                if a > 1.0 || b.abs() > 1.0 {
                    let d = x.len();
                    let (p, m) = shifted(x, w);
                    let bump = |y: &[f64]| Self::bump_parts(center, *width, y, &[0.0; MAX_DIM][..d]).0;
                    return bump(&p[..d]) - bump(&m[..d]);
                }
                -2.0 * g * (-a).exp() * b.sinh()
            }
            TestFunction::Custom { phi, .. } => phi.central_difference(x, w),
        }
    }

    /// `phi(x+w) - phi(x)`.
    fn forward(&self, x: &[f64], w: &[f64]) -> f64 {
        0.5 * (self.second(x, w) + self.central(x, w))
    }
}

/// `|u + w|^mu - |u - w|^mu` via `|u+w|^2 - |u-w|^2 = 4 u.w`.
fn kernel_odd_part(u: &[f64], w: &[f64], mu: f64) -> f64 {
    let mut minus2 = 0.0;
    let mut dot = 0.0;
    for k in 0..u.len() {
        minus2 += (u[k] - w[k]) * (u[k] - w[k]);
        dot += u[k] * w[k];
    }
    if minus2 == 0.0 {
        // u = w exactly: a null set of the sampling law
        return 0.0;
    }
    let ratio = 4.0 * dot / minus2;
    minus2.powf(0.5 * mu) * (0.5 * mu * ratio.ln_1p()).exp_m1()
}

/// Monte-Carlo estimate of
/// `(c_dgs / 2) int int int f f_* [phi' + phi_*' - phi - phi_*] |v - v_* + w|^{gamma+2s} |w|^{-d-2s}`
/// with `v' = v + w`, `v_*' = v_* - w`, which equals `int phi Q(f, f)`.
///
/// `v, v_*` are drawn from `|f|`. On `|w| <= W` the `+-w` pair is combined
/// through exact second and central differences of `phi`, so the estimator
/// has finite variance for smooth `phi` at every `s`. Beyond `W`, `w` is
/// drawn from a Pareto law matched to the kernel and the growth of `phi`.
pub fn weak_functional(
    params: &ModelParams,
    f: &dyn Density,
    phi: &TestFunction,
    cfg: &McConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    params.validate()?;
    let d = params.d;
    if f.dim() != d {
        return Err(Error::GridMismatch(format!("density has d = {}, params have d = {d}", f.dim())));
    }
    if let TestFunction::Component(k) = phi {
        if *k >= d {
            return Err(Error::Domain(format!("component {k} out of range for d = {d}")));
        }
    }
    if f.total_abs() == 0.0 {
        return Ok((0.0, 0.0));
    }
    let s = params.s;
    let mu = params.gamma + 2.0 * s;
    let beta = -params.gamma - phi.growth();
    if beta <= 0.0 {
        return Err(Error::Domain(format!(
            "test function of growth {} is not integrable against the kernel at gamma = {}",
            phi.growth(),
            params.gamma
        )));
    }
    let consts = compute_constants(params)?;
    let w_core = cfg.core_radius.unwrap_or(f.hint().scale);
    let area = unit_sphere_area(d);
    let n_core = area * w_core.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
    let nonpositive = AtomicBool::new(false);
    let bound = BoundPhi { phi, f, scale: f.hint().scale, nonpositive: &nonpositive };

    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        let mut v = [0.0; MAX_DIM];
        let mut vs = [0.0; MAX_DIM];
        let mut dir = [0.0; MAX_DIM];
        let mut w = [0.0; MAX_DIM];
        let mut u = [0.0; MAX_DIM];
        let mut nw = [0.0; MAX_DIM];
        let pv = f.sample(rng, &mut v[..d]);
        let pvs = f.sample(rng, &mut vs[..d]);
        let weight = f.eval(&v[..d]) / pv * f.eval(&vs[..d]) / pvs;
        if weight == 0.0 {
            return 0.0;
        }
        for k in 0..d {
            u[k] = v[k] - vs[k];
        }

        let r = w_core * rng.random::<f64>().powf(1.0 / (2.0 - 2.0 * s));
        random_direction(rng, d, &mut dir);
        let core = if r > 0.0 {
            for k in 0..d {
                w[k] = r * dir[k];
            }
            let kp = norm2(&u[..d], &w[..d], 1.0).powf(0.5 * mu);
            let km = norm2(&u[..d], &w[..d], -1.0).powf(0.5 * mu);
            let sum = bound.second(&v[..d], &w[..d]) + bound.second(&vs[..d], &w[..d]);
            let diff = bound.central(&v[..d], &w[..d]) - bound.central(&vs[..d], &w[..d]);
            let odd = if diff == 0.0 { 0.0 } else { kernel_odd_part(&u[..d], &w[..d], mu) * diff };
            // mean of the +-w terms, times |w|^{-d-2s} / p(w)
            0.25 * ((kp + km) * sum + odd) * n_core / (r * r)
        } else {
            0.0
        };

        // the tail weight below is scale-free in |w| up to O(|v|/|w|), so
        // radii past the cap are evaluated at the cap to avoid overflow
        let span: f64 = v[..d].iter().chain(&vs[..d]).map(|x| x.abs()).sum();
        let r_cap = 1e9 * (w_core + span);
        let rt = (w_core * rng.random::<f64>().powf(-1.0 / beta)).min(r_cap);
        random_direction(rng, d, &mut dir);
        for k in 0..d {
            w[k] = rt * dir[k];
            nw[k] = -w[k];
        }
        let bracket = bound.forward(&v[..d], &w[..d]) + bound.forward(&vs[..d], &nw[..d]);
        let tail = if bracket == 0.0 {
            0.0
        } else {
            let k = norm2(&u[..d], &w[..d], 1.0).powf(0.5 * mu);
            k * bracket * area * rt.powf(beta - 2.0 * s) / (beta * w_core.powf(beta))
        };
        0.5 * weight * (core + tail)
    };

    let m = mc_reduce(cfg.samples, cfg.seed, draw);
    if nonpositive.load(Ordering::Relaxed) {
        return Err(Error::Domain("log f evaluated where f <= 0".into()));
    }
    Ok((consts.c_dgs * m.mean, consts.c_dgs * m.stderr()))
}

/// [`weak_functional`] for a grid field under multilinear interpolation.
/// `phi = log f` fails with a domain error as soon as a sample leaves the
/// support of `f`.
pub fn weak_functional_field(
    params: &ModelParams,
    f: &Field,
    phi: &TestFunction,
    cfg: &McConfig,
) -> Result<(f64, f64)> {
    if matches!(phi, TestFunction::LogDensity) && f.min_value() <= 0.0 {
        return Err(Error::Domain("log f needs a strictly positive field".into()));
    }
    weak_functional(params, &GridDensity::new(f), phi, cfg)
}

/// `int log f Q(f, f)`, the entropy production (nonpositive).
pub fn entropy_production(params: &ModelParams, f: &dyn Density, cfg: &McConfig) -> Result<(f64, f64)> {
    weak_functional(params, f, &TestFunction::LogDensity, cfg)
}

/// `|u + sign w|^2`.
fn norm2(u: &[f64], w: &[f64], sign: f64) -> f64 {
    u.iter().zip(w).map(|(a, b)| (a + sign * b) * (a + sign * b)).sum()
}

/// Cap on `n^d (2n)^d` for the double sums.
pub const DOUBLE_SUM_LIMIT: usize = 2_000_000_000;

/// `sum_v a(v) sum_{w != 0} |u(v+w) - u(v)|^2 |w|^{-d-2s} h^{2d}`, with `u`
/// extended by zero and `w` ranging over the padded offsets `-n..n` per axis.
fn weighted_gagliardo(a: &Field, u: &Field, s: f64) -> Result<f64> {
    let grid = u.grid;
    grid.check_same(&a.grid)?;
    let (d, n) = (grid.d, grid.n);
    let m = 2 * n;
    let offsets = m.pow(d as u32);
    if grid.len().saturating_mul(offsets) > DOUBLE_SUM_LIMIT {
        return Err(Error::Cost(format!(
            "double sum over {} x {offsets} terms exceeds the guard",
            grid.len()
        )));
    }
    let h = grid.h();
    let expo = -0.5 * (d as f64 + 2.0 * s);
    // kernel per offset, indexed from -n
    let kernel: Vec<f64> = (0..offsets)
        .map(|o| {
            let mut rem = o;
            let mut r2 = 0i64;
            for _ in 0..d {
                let j = (rem % m) as i64 - n as i64;
                rem /= m;
                r2 += j * j;
            }
            if r2 == 0 {
                0.0
            } else {
                (r2 as f64 * h * h).powf(expo)
            }
        })
        .collect();
    let total: f64 = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if a.values[i] == 0.0 {
                return 0.0;
            }
            let base = grid.multi_index(i);
            let ui = u.values[i];
            let mut acc = 0.0;
            let mut idx = [0usize; MAX_DIM];
            'offsets: for (o, &kw) in kernel.iter().enumerate() {
                if kw == 0.0 {
                    continue;
                }
                let mut rem = o;
                let mut inside = true;
                for k in (0..d).rev() {
                    let j = (rem % m) as i64 - n as i64;
                    rem /= m;
                    let t = base[k] as i64 + j;
                    if t < 0 || t >= n as i64 {
                        inside = false;
                        if ui == 0.0 {
                            continue 'offsets;
                        }
                    } else {
                        idx[k] = t as usize;
                    }
                }
                let uw = if inside { u.values[grid.flat_index(&idx[..d])] } else { 0.0 };
                let du = uw - ui;
                acc += du * du * kw;
            }
            a.values[i] * acc
        })
        .sum();
    Ok(total * grid.cell_volume() * grid.cell_volume())
}

/// Grid form of
/// `C_H int u^2 [f * |.|^gamma] <= int int |u(v+w) - u(v)|^2 |w|^{-d-2s} [f * |.|^{gamma+2s}](v)`,
/// passing when `slack >= -1e-3 rhs`.
pub fn hardy_gap(plan: &mut SpectralPlan, u: &Field, f: &Field) -> Result<InequalityReport> {
    let p = *plan.params();
    let consts = compute_constants(&p)?;
    if !(consts.c_h > 0.0 && consts.c_h.is_finite()) {
        return Err(Error::Domain(format!(
            "Hardy constant is {} at d = {}, gamma = {}, s = {}",
            consts.c_h, p.d, p.gamma, p.s
        )));
    }
    plan.grid().check_same(&u.grid)?;
    let a = plan.power_convolve(f, p.gamma + 2.0 * p.s)?;
    let b = plan.power_convolve(f, p.gamma)?;
    let rhs = weighted_gagliardo(&a, u, p.s)?;
    let lhs = consts.c_h
        * u.values.iter().zip(&b.values).map(|(x, y)| x * x * y).sum::<f64>()
        * u.grid.cell_volume();
    let terms = u.grid.len() * plan.padded_n().pow(p.d as u32);
    Ok(InequalityReport::new("hardy", lhs, rhs, 1e-3 * rhs.abs(), "direct double sum", terms))
}

/// `N^f(h)^2 = c_dgs sum_v [f * |.|^{gamma+2s}](v) sum_w |h(v+w) - h(v)|^2 |w|^{-d-2s} h^{2d}`.
pub fn coercivity_form(plan: &mut SpectralPlan, f: &Field, h: &Field) -> Result<f64> {
    let p = *plan.params();
    let consts = compute_constants(&p)?;
    plan.grid().check_same(&h.grid)?;
    let a = plan.power_convolve(f, p.gamma + 2.0 * p.s)?;
    Ok(consts.c_dgs * weighted_gagliardo(&a, h, p.s)?)
}

const RIESZ_TOL: f64 = 1e-11;

/// `(2F1(a, b; c; z) - 1) / z` by the Gauss series, for `|z| <= 1/4`.
fn hyp2f1_minus_one_over_z(a: f64, b: f64, c: f64, z: f64) -> f64 {
    let mut term = a * b / c;
    let mut sum = term;
    for k in 1..200 {
        let kf = k as f64;
        term *= (a + kf) * (b + kf) / ((c + kf) * (kf + 1.0)) * z;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Spherical mean of `|v + r sigma|^mu` over `sigma in S^{d-1}`, minus `|v|^mu`,
/// for `|v| = big` and `gap = |big - r|` passed separately so the near-singular
/// point `r = big` is resolved.
fn sphere_mean_minus(d: usize, mu: f64, big: f64, r: f64, gap: f64) -> Result<f64> {
    let (lo, hi) = if r < big { (r, big) } else { (big, r) };
    let rho = lo / hi;
    let a = -0.5 * mu;
    let b = 0.5 * (2.0 - d as f64 - mu);
    let c = 0.5 * d as f64;
    if rho <= 0.5 {
        let z = rho * rho;
        let series = hyp2f1_minus_one_over_z(a, b, c, z) * z;
        return Ok(if r < big {
            big.powf(mu) * series
        } else {
            r.powf(mu) * (1.0 + series) - big.powf(mu)
        });
    }
    let mean = match d {
        1 => 0.5 * ((big + r).powf(mu) + gap.powf(mu)),
        3 => ((big + r).powf(mu + 2.0) - gap.powf(mu + 2.0)) / (2.0 * (mu + 2.0) * big * r),
        _ => {
            // t = cos(theta): mean = |S^{d-2}|/|S^{d-1}| int (R^2 + r^2 + 2 R r t)^{mu/2} (1-t^2)^{(d-3)/2} dt
            let e = 0.5 * (d as f64 - 3.0);
            let near = tanh_sinh(
                |x| (gap * gap + 2.0 * big * r * x).powf(0.5 * mu) * (x * (2.0 - x)).powf(e),
                0.0,
                1.0,
                RIESZ_TOL,
            )?;
            let far = tanh_sinh(
                |x| ((big + r).powi(2) - 2.0 * big * r * x).powf(0.5 * mu) * (x * (2.0 - x)).powf(e),
                0.0,
                1.0,
                RIESZ_TOL,
            )?;
            unit_sphere_area(d - 1) / unit_sphere_area(d) * (near.value + far.value)
        }
    };
    Ok(mean - big.powf(mu))
}

/// `p.v. int (|v|^mu - |v + w|^mu) |w|^{-d-2s} dw` at `|v| = radius`, by
/// radial quadrature of the spherical means.
pub fn riesz_integral(params: &ModelParams, radius: f64) -> Result<f64> {
    let (d, s) = (params.d, params.s);
    let mu = params.gamma + 2.0 * s;
    let big = radius;
    let inner = |r: f64, gap: f64| -> f64 {
        if r <= 0.5 * big {
            // -(mean - |v|^mu) r^{-1-2s} with the r^2 factor of the series folded in
            let z = (r / big).powi(2);
            let s_over_z = hyp2f1_minus_one_over_z(-0.5 * mu, 0.5 * (2.0 - d as f64 - mu), 0.5 * d as f64, z);
            return -big.powf(mu - 2.0) * s_over_z * r.powf(1.0 - 2.0 * s);
        }
        match sphere_mean_minus(d, mu, big, r, gap) {
            Ok(x) => -x * r.powf(-1.0 - 2.0 * s),
            Err(_) => f64::NAN,
        }
    };
    let p1 = tanh_sinh(|r| inner(r, big - r), 0.0, 0.5 * big, RIESZ_TOL)?;
    let p2 = tanh_sinh(|t| inner(big - t, t), 0.0, 0.5 * big, RIESZ_TOL)?;
    let p3 = tanh_sinh(|t| inner(big + t, t), 0.0, big, RIESZ_TOL)?;
    let p4 = exp_sinh(|r| inner(r, r - big), 2.0 * big, RIESZ_TOL)?;
    Ok(unit_sphere_area(d) * (p1.value + p2.value + p3.value + p4.value))
}

/// Relative residual of `-L_s |.|^{gamma+2s} = cR |.|^gamma` at each radius.
pub fn riesz_residual(params: &ModelParams, radii: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    let mu = params.gamma + 2.0 * params.s;
    if !(mu < 0.0 && mu > -(params.d as f64)) {
        return Err(Error::Domain(format!("gamma + 2s = {mu} not in (-d, 0)")));
    }
    let c = compute_constants(params)?;
    radii
        .iter()
        .map(|&r| {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Domain(format!("radius must be positive, got {r}")));
            }
            let got = riesz_integral(params, r)?;
            let want = c.c_r * r.powf(params.gamma);
            Ok(((got - want) / want).abs())
        })
        .collect()
}
