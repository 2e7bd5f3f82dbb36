//! The isotropic collision operator `Q(f, g)`: the Carleman form on the grid,
//! a Monte-Carlo evaluation of the raw double integral at single points,
//! and the isotropic Landau operator reached as `s -> 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{compute_constants, ModelParams};
use crate::error::{Error, Result};
use crate::grid::{Field, Gaussian, Grid, MAX_DIM};
use crate::spectral::SpectralPlan;
use crate::specfun::{gamma, unit_sphere_area};

/// Pieces of `Q(f, g) = c_dgs (A L_s g + cR B g)`.
#[derive(Debug, Clone)]
pub struct CarlemanParts {
    /// `[f * |.|^{gamma+2s}]`.
    pub a: Field,
    /// `[f * |.|^gamma]`.
    pub b: Field,
    /// `L_s g`.
    pub frac: Field,
    /// `c_dgs A L_s g`.
    pub diffusion: Field,
    /// `c_dgs cR B g`.
    pub reaction: Field,
    pub q: Field,
}

fn require_very_soft(p: &ModelParams) -> Result<()> {
    if !p.very_soft() {
        return Err(Error::Domain(format!(
            "Carleman form needs gamma + 2s < 0, got gamma = {}, s = {}",
            p.gamma, p.s
        )));
    }
    Ok(())
}

pub fn q_carleman_parts(plan: &mut SpectralPlan, f: &Field, g: &Field) -> Result<CarlemanParts> {
    let p = *plan.params();
    require_very_soft(&p)?;
    let consts = compute_constants(&p)?;
    let spec_f = plan.forward(f)?;
    let a = plan.power_convolve_spectrum(&spec_f, p.gamma + 2.0 * p.s)?;
    let b = plan.power_convolve_spectrum(&spec_f, p.gamma)?;
    let frac = if std::ptr::eq(f, g) || f == g {
        plan.frac_integral_spectrum(&spec_f)
    } else {
        plan.frac_integral(g)?
    };
    let grid = *plan.grid();
    let n = grid.len();
    let mut diffusion = vec![0.0; n];
    let mut reaction = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        diffusion[i] = consts.c_dgs * a.values[i] * frac.values[i];
        reaction[i] = consts.c_dgs * consts.c_r * b.values[i] * g.values[i];
        q[i] = diffusion[i] + reaction[i];
    }
    Ok(CarlemanParts {
        a,
        b,
        frac,
        diffusion: Field { grid, values: diffusion },
        reaction: Field { grid, values: reaction },
        q: Field { grid, values: q },
    })
}

/// `c_dgs ( [f*|.|^{gamma+2s}] L_s g + cR [f*|.|^gamma] g )` on the grid.
pub fn q_carleman(plan: &mut SpectralPlan, f: &Field, g: &Field) -> Result<Field> {
    Ok(q_carleman_parts(plan, f, g)?.q)
}

/// Remove the mass and momentum of `q` with the correction `f_+ (a + b.v)`,
/// the smallest one in `L^2(1/f_+)`. Returns `q` unchanged if the moment
/// matrix of `f_+` is singular.
pub fn project_conservative(f: &Field, q: &Field) -> Field {
    let grid = f.grid;
    let d = grid.d;
    let k = d + 1;
    let mut mat = [[0.0f64; MAX_DIM + 1]; MAX_DIM + 1];
    let mut rhs = [0.0f64; MAX_DIM + 1];
    let mut phi = [0.0f64; MAX_DIM + 1];
    for i in 0..grid.len() {
        let v = grid.coords(i);
        phi[0] = 1.0;
        phi[1..=d].copy_from_slice(&v[..d]);
        let w = f.values[i].max(0.0);
        for r in 0..k {
            rhs[r] += q.values[i] * phi[r];
            if w > 0.0 {
                for c in 0..k {
                    mat[r][c] += w * phi[r] * phi[c];
                }
            }
        }
    }
    let Some(coef) = solve_small(&mut mat, &mut rhs, k) else {
        return q.clone();
    };
    let values = (0..grid.len())
        .map(|i| {
            let v = grid.coords(i);
            let w = f.values[i].max(0.0);
            let lin = coef[0] + (0..d).map(|j| coef[j + 1] * v[j]).sum::<f64>();
            q.values[i] - w * lin
        })
        .collect();
    Field { grid, values }
}

/// Gaussian elimination with partial pivoting on the leading `k x k` block.
fn solve_small(
    a: &mut [[f64; MAX_DIM + 1]; MAX_DIM + 1],
    b: &mut [f64; MAX_DIM + 1],
    k: usize,
) -> Option<[f64; MAX_DIM + 1]> {
    let scale = (0..k).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..k {
            let m = a[row][col] / a[col][col];
            for c in col..k {
                a[row][c] -= m * a[col][c];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = [0.0; MAX_DIM + 1];
    for row in (0..k).rev() {
        let s: f64 = (row + 1..k).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// `Q(f, g)` with mass and momentum removed by [`project_conservative`].
pub fn q_carleman_conservative(plan: &mut SpectralPlan, f: &Field, g: &Field) -> Result<Field> {
    let q = q_carleman(plan, f, g)?;
    Ok(project_conservative(f, &q))
}

/// The kernel `K_f(v, w) = A(v) |w|^{-d-2s}` with `A = c_dgs [f * |.|^{gamma+2s}]`.
#[derive(Debug, Clone)]
pub struct KernelView {
    pub params: ModelParams,
    pub weight: Field,
}

impl KernelView {
    pub fn new(plan: &mut SpectralPlan, f: &Field) -> Result<Self> {
        let p = *plan.params();
        let c = compute_constants(&p)?;
        let a = plan.power_convolve(f, p.gamma + 2.0 * p.s)?;
        Ok(Self { params: p, weight: a.scaled(c.c_dgs) })
    }

    pub fn k(&self, node: usize, w: &[f64]) -> f64 {
        let r2: f64 = w.iter().map(|x| x * x).sum();
        self.weight.values[node] * r2.powf(-0.5 * (self.params.d as f64 + 2.0 * self.params.s))
    }

    /// Largest `c0` with `A(v) >= c0 <v>^{gamma+2s}` on the inner half-box.
    pub fn fit_lower_bound(&self) -> f64 {
        let g = &self.weight.grid;
        let mu = self.params.gamma + 2.0 * self.params.s;
        (0..g.len())
            .filter(|&i| g.coords(i)[..g.d].iter().all(|x| x.abs() <= 0.5 * g.l))
            .map(|i| {
                let r2: f64 = g.coords(i)[..g.d].iter().map(|x| x * x).sum();
                self.weight.values[i] / (1.0 + r2).powf(0.5 * mu)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// `a [f*|.|^{gamma+2}] Delta g + c [f*|.|^gamma] g`.
pub fn q_landau_iso(plan: &mut SpectralPlan, f: &Field, g: &Field) -> Result<Field> {
    let p = *plan.params();
    if p.gamma >= -2.0 {
        if (p.gamma + 2.0).abs() < crate::specfun::POLE_MARGIN {
            return Err(Error::Pole { expr: "a_landau at gamma = -2".into(), arg: p.gamma });
        }
        return Err(Error::Domain(format!("isotropic Landau needs gamma < -2, got {}", p.gamma)));
    }
    let c = compute_constants(&p)?;
    let (a_l, c_l) = match (c.a_landau, c.c_landau) {
        (Some(a), Some(cl)) => (a, cl),
        _ => return Err(Error::Pole { expr: "a_landau".into(), arg: p.gamma }),
    };
    let spec_f = plan.forward(f)?;
    let a = plan.power_convolve_spectrum(&spec_f, p.gamma + 2.0)?;
    let b = plan.power_convolve_spectrum(&spec_f, p.gamma)?;
    let lap = plan.laplacian(g)?;
    let grid = *plan.grid();
    let values = (0..grid.len())
        .map(|i| a_l * a.values[i] * lap.values[i] + c_l * b.values[i] * g.values[i])
        .collect();
    Ok(Field { grid, values })
}

/// Location and extent of a density, used to shape the proposals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalHint {
    pub center: [f64; MAX_DIM],
    /// Typical width (standard deviation).
    pub scale: f64,
    /// Radius around `center` containing the support (or all but a negligible tail).
    pub radius: f64,
}

/// A pointwise function with a symmetric second difference.
pub trait Profile: Sync {
    fn eval(&self, v: &[f64]) -> f64;

    /// `p(x+w) + p(x-w) - 2 p(x)`; implementors override this when the
    /// direct form loses precision for small `w`.
    fn second_difference(&self, x: &[f64], w: &[f64]) -> f64 {
        let d = x.len();
        let mut a = [0.0; MAX_DIM];
        let mut b = [0.0; MAX_DIM];
        for k in 0..d {
            a[k] = x[k] + w[k];
            b[k] = x[k] - w[k];
        }
        (self.eval(&a[..d]) - self.eval(x)) + (self.eval(&b[..d]) - self.eval(x))
    }

    /// `p(x+w) - p(x-w)`.
    fn central_difference(&self, x: &[f64], w: &[f64]) -> f64 {
        let d = x.len();
        let mut a = [0.0; MAX_DIM];
        let mut b = [0.0; MAX_DIM];
        for k in 0..d {
            a[k] = x[k] + w[k];
            b[k] = x[k] - w[k];
        }
        self.eval(&a[..d]) - self.eval(&b[..d])
    }
}

/// Wraps a closure as a [`Profile`] with the direct second difference.
pub struct FnProfile<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> Profile for FnProfile<F> {
    fn eval(&self, v: &[f64]) -> f64 {
        (self.0)(v)
    }
}

/// A constant function.
#[derive(Debug, Clone, Copy)]
pub struct ConstantProfile(pub f64);

impl Profile for ConstantProfile {
    fn eval(&self, _: &[f64]) -> f64 {
        self.0
    }

    fn second_difference(&self, _: &[f64], _: &[f64]) -> f64 {
        0.0
    }

    fn central_difference(&self, _: &[f64], _: &[f64]) -> f64 {
        0.0
    }
}

/// A signed density that can be evaluated and sampled from `|f| / ||f||_1`.
pub trait Density: Profile {
    fn dim(&self) -> usize;
    /// `int |f|` of the sampling proposal.
    fn total_abs(&self) -> f64;
    /// Draw `y` from the proposal; returns the proposal density at `y`.
    fn sample(&self, rng: &mut ChaCha8Rng, y: &mut [f64]) -> f64;
    fn hint(&self) -> ProposalHint;
    /// `ln f(v)`; implementors override this where `f` underflows.
    fn log_eval(&self, v: &[f64]) -> f64 {
        self.eval(v).ln()
    }
}

/// Multilinear interpolant of a grid field, zero outside the node hull.
/// Sampling is exact for the multilinear interpolant of `|f|`.
#[derive(Debug, Clone)]
pub struct GridDensity {
    field: Field,
    abs_field: Field,
    /// Cumulative cell weights.
    cdf: Vec<f64>,
    cells: Vec<usize>,
    total: f64,
    hint: ProposalHint,
}

impl GridDensity {
    pub fn new(field: &Field) -> Self {
        let g = field.grid;
        let d = g.d;
        let abs_field = field.map(f64::abs);
        let mut cdf = Vec::new();
        let mut cells = Vec::new();
        let mut acc = 0.0;
        let cell_count = (g.n - 1).pow(d as u32);
        for c in 0..cell_count {
            let mut base = [0usize; MAX_DIM];
            let mut rem = c;
            for k in (0..d).rev() {
                base[k] = rem % (g.n - 1);
                rem /= g.n - 1;
            }
            let mut sum = 0.0;
            for corner in 0..(1usize << d) {
                let mut m = base;
                for k in 0..d {
                    m[k] += (corner >> (d - 1 - k)) & 1;
                }
                sum += abs_field.values[g.flat_index(&m)];
            }
            if sum > 0.0 {
                acc += sum / (1 << d) as f64 * g.cell_volume();
                cdf.push(acc);
                cells.push(c);
            }
        }
        let diag = crate::grid::diagnostics(&abs_field, 0.0, &[]);
        let mut center = [0.0; MAX_DIM];
        let mut scale = g.h();
        if diag.mass > 0.0 {
            for k in 0..d {
                center[k] = diag.momentum[k] / diag.mass;
            }
            let c2: f64 = center.iter().map(|x| x * x).sum();
            scale = ((diag.energy / diag.mass - c2) / d as f64).max(g.h() * g.h()).sqrt();
        }
        let radius = (0..d).map(|k| (g.l + center[k].abs()).powi(2)).sum::<f64>().sqrt();
        Self {
            field: field.clone(),
            abs_field,
            cdf,
            cells,
            total: acc,
            hint: ProposalHint { center, scale, radius },
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.field.grid
    }
}

impl Profile for GridDensity {
    fn eval(&self, v: &[f64]) -> f64 {
        self.field.interpolate(v)
    }

    fn second_difference(&self, x: &[f64], w: &[f64]) -> f64 {
        self.field.interp_second_difference(x, w)
    }
}

impl Density for GridDensity {
    fn dim(&self) -> usize {
        self.field.grid.d
    }

    fn total_abs(&self) -> f64 {
        self.total
    }

    fn sample(&self, rng: &mut ChaCha8Rng, y: &mut [f64]) -> f64 {
        let g = &self.field.grid;
        let d = g.d;
        let u = rng.random::<f64>() * self.total;
        let pos = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let mut rem = self.cells[pos];
        let mut base = [0usize; MAX_DIM];
        for k in (0..d).rev() {
            base[k] = rem % (g.n - 1);
            rem /= g.n - 1;
        }
        // pick a corner with probability proportional to its value
        let mut corner_vals = [0.0f64; 8];
        let mut sum = 0.0;
        for corner in 0..(1usize << d) {
            let mut m = base;
            for k in 0..d {
                m[k] += (corner >> (d - 1 - k)) & 1;
            }
            corner_vals[corner] = self.abs_field.values[g.flat_index(&m)];
            sum += corner_vals[corner];
        }
        let mut t = rng.random::<f64>() * sum;
        let mut chosen = (1usize << d) - 1;
        for (corner, &cv) in corner_vals.iter().enumerate().take(1 << d) {
            if t < cv {
                chosen = corner;
                break;
            }
            t -= cv;
        }
        let h = g.h();
        for k in 0..d {
            let bit = (chosen >> (d - 1 - k)) & 1;
            let r = rng.random::<f64>().sqrt();
            let x = if bit == 1 { r } else { 1.0 - r };
            y[k] = g.axis_coord(base[k]) + x * h;
        }
        self.abs_field.interpolate(y) / self.total
    }

    fn hint(&self) -> ProposalHint {
        self.hint
    }
}

/// Finite sum of Gaussians, evaluated and sampled analytically.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    d: usize,
    components: Vec<Gaussian>,
    total: f64,
    hint: ProposalHint,
}

impl GaussianDensity {
    pub fn new(d: usize, components: Vec<Gaussian>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("empty Gaussian mixture".into()));
        }
        for c in &components {
            c.validate(d)?;
        }
        let total: f64 = components.iter().map(|c| c.mass.abs()).sum();
        let mut center = [0.0; MAX_DIM];
        if total > 0.0 {
            for c in &components {
                for k in 0..d {
                    center[k] += c.mass.abs() * c.center.get(k).copied().unwrap_or(0.0) / total;
                }
            }
        }
        let scale = components.iter().map(|c| c.variance.sqrt()).fold(0.0, f64::max);
        let radius = components
            .iter()
            .map(|c| {
                let off: f64 = (0..d)
                    .map(|k| (c.center.get(k).copied().unwrap_or(0.0) - center[k]).powi(2))
                    .sum();
                off.sqrt() + 8.0 * c.variance.sqrt()
            })
            .fold(0.0, f64::max);
        Ok(Self { d, components, total, hint: ProposalHint { center, scale, radius } })
    }

    pub fn single(d: usize, g: Gaussian) -> Result<Self> {
        Self::new(d, vec![g])
    }

    fn abs_eval(&self, v: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|c| Gaussian { mass: c.mass.abs(), ..c.clone() }.eval(v))
            .sum()
    }
}

impl Profile for GaussianDensity {
    fn eval(&self, v: &[f64]) -> f64 {
        self.components.iter().map(|c| c.eval(v)).sum()
    }

    fn second_difference(&self, x: &[f64], w: &[f64]) -> f64 {
        self.components.iter().map(|c| c.second_difference(x, w)).sum()
    }

    fn central_difference(&self, x: &[f64], w: &[f64]) -> f64 {
        self.components.iter().map(|c| c.central_difference(x, w)).sum()
    }
}

impl Density for GaussianDensity {
    fn dim(&self) -> usize {
        self.d
    }

    fn total_abs(&self) -> f64 {
        self.total
    }

    fn sample(&self, rng: &mut ChaCha8Rng, y: &mut [f64]) -> f64 {
        let mut t = rng.random::<f64>() * self.total;
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            if t < c.mass.abs() {
                chosen = c;
                break;
            }
            t -= c.mass.abs();
        }
        let sd = chosen.variance.sqrt();
        for k in 0..self.d {
            let z: f64 = StandardNormal.sample(rng);
            y[k] = chosen.center.get(k).copied().unwrap_or(0.0) + sd * z;
        }
        self.abs_eval(&y[..self.d]) / self.total
    }

    fn hint(&self) -> ProposalHint {
        self.hint
    }

    /// Log-sum-exp over the components; NaN unless all masses are positive.
    fn log_eval(&self, v: &[f64]) -> f64 {
        let mut terms = Vec::with_capacity(self.components.len());
        for c in &self.components {
            if c.mass <= 0.0 {
                return f64::NAN;
            }
            let r2: f64 = (0..self.d)
                .map(|k| (v[k] - c.center.get(k).copied().unwrap_or(0.0)).powi(2))
                .sum();
            terms.push(
                c.mass.ln() - 0.5 * self.d as f64 * (2.0 * std::f64::consts::PI * c.variance).ln()
                    - r2 / (2.0 * c.variance),
            );
        }
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
    }
}

/// Monte-Carlo settings for the point oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    /// Radius `W` separating the paired core from the Pareto tail;
    /// defaults to the data scale.
    pub core_radius: Option<f64>,
    /// Weight of the Gaussian component of the `z` proposal.
    pub mixture_alpha: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { samples: 100_000, seed: 0, core_radius: None, mixture_alpha: 0.5 }
    }
}

pub const MIN_SAMPLES: usize = 1000;
const CHUNK: usize = 8192;

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < MIN_SAMPLES {
            return Err(Error::Config(format!(
                "Monte-Carlo sample count {} below the minimum {MIN_SAMPLES}",
                self.samples
            )));
        }
        if !(self.mixture_alpha > 0.0 && self.mixture_alpha <= 1.0) {
            return Err(Error::Config(format!("mixture_alpha = {} not in (0, 1]", self.mixture_alpha)));
        }
        if let Some(w) = self.core_radius {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("core_radius = {w} must be positive")));
            }
        }
        Ok(())
    }
}

/// Streaming mean and variance (Welford), mergeable.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Moments {
    pub n: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.n == 0.0 {
            return other;
        }
        if other.n == 0.0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n / n,
            m2: self.m2 + other.m2 + delta * delta * self.n * other.n / n,
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Run `samples` draws of `draw` in fixed chunks with per-chunk streams of
/// one seeded generator, reducing in chunk order for reproducibility.
pub(crate) fn mc_reduce<F>(samples: usize, seed: u64, draw: F) -> Moments
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut m = Moments::default();
            for _ in 0..count {
                m.push(draw(&mut rng));
            }
            m
        })
        .collect();
    parts.into_iter().fold(Moments::default(), Moments::merge)
}

/// Uniform direction on the unit sphere in `d` dimensions.
pub(crate) fn random_direction(rng: &mut ChaCha8Rng, d: usize, out: &mut [f64; MAX_DIM]) {
    loop {
        let mut r2 = 0.0;
        for k in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            out[k] = z;
            r2 += z * z;
        }
        if r2 > 1e-300 {
            let r = r2.sqrt();
            for x in out.iter_mut().take(d) {
                *x /= r;
            }
            return;
        }
    }
}

/// Proposal for `z` proportional to
/// `alpha |z|^mu e^{-|z|^2/(2 tau^2)} / N1 + (1-alpha) |z|^mu 1{|z| <= R} / N2`.
/// [`ZProposal::weight`] returns `|z|^mu / q(z)`, which is bounded.
#[derive(Debug, Clone)]
pub(crate) struct ZProposal {
    d: usize,
    mu: f64,
    alpha: f64,
    tau: f64,
    radius: f64,
    n_gauss: f64,
    n_ball: f64,
    gamma_radial: Gamma<f64>,
}

impl ZProposal {
    pub fn new(d: usize, mu: f64, alpha: f64, tau: f64, radius: f64) -> Result<Self> {
        let df = d as f64;
        let area = unit_sphere_area(d);
        let k = 0.5 * (df + mu);
        let n_gauss = area * (2.0 * tau * tau).powf(k) * gamma(k)? / 2.0;
        let n_ball = area * radius.powf(df + mu) / (df + mu);
        let gamma_radial = Gamma::new(k, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(Self { d, mu, alpha, tau, radius, n_gauss, n_ball, gamma_radial })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, z: &mut [f64; MAX_DIM]) -> f64 {
        let r = if rng.random::<f64>() < self.alpha {
            let x: f64 = self.gamma_radial.sample(rng);
            self.tau * (2.0 * x).sqrt()
        } else {
            self.radius * rng.random::<f64>().powf(1.0 / (self.d as f64 + self.mu))
        };
        random_direction(rng, self.d, z);
        for x in z.iter_mut().take(self.d) {
            *x *= r;
        }
        self.weight(r)
    }

    pub fn weight(&self, r: f64) -> f64 {
        let mut q = self.alpha * (-r * r / (2.0 * self.tau * self.tau)).exp() / self.n_gauss;
        if r <= self.radius {
            q += (1.0 - self.alpha) / self.n_ball;
        }
        1.0 / q
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Monte-Carlo estimate of
/// `c_dgs int int |v - v_* + w|^{gamma+2s} |w|^{-d-2s} [g(v+w) f(v_*-w) - g(v) f(v_*)] dv_* dw`
/// at the point `v`, for a sampled density `f` and a pointwise `g`.
///
/// Substituting `z = v - v_* + w` gives
/// `int int |z|^mu |w|^{-d-2s} [g(v+w) f(v-z) - g(v) f(v+w-z)] dz dw`.
/// On `|w| <= W` the `+-w` pair is used with `w ~ |w|^{2-d-2s}`; beyond `W`
/// both terms are integrated separately with Pareto `w`.
pub fn q_direct_point_density(
    params: &ModelParams,
    f: &dyn Density,
    g: &dyn Profile,
    v: &[f64],
    cfg: &McConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    params.validate()?;
    require_very_soft(params)?;
    let d = params.d;
    if f.dim() != d || v.len() != d {
        return Err(Error::GridMismatch(format!(
            "density has d = {}, point has {} components, params have d = {d}",
            f.dim(),
            v.len()
        )));
    }
    if f.total_abs() == 0.0 {
        return Ok((0.0, 0.0));
    }
    let consts = compute_constants(params)?;
    let s = params.s;
    let mu = params.gamma + 2.0 * s;
    let hint = f.hint();
    let dist_c = norm(&(0..d).map(|k| v[k] - hint.center[k]).collect::<Vec<_>>());
    let w_core = cfg.core_radius.unwrap_or(hint.scale);
    let tau = 1.5 * hint.scale + dist_c;
    let zprop = ZProposal::new(d, mu, cfg.mixture_alpha, tau, dist_c + w_core + hint.radius)?;
    let area = unit_sphere_area(d);
    // |w|^{-d-2s} / p(w) = n_core |w|^{-2} on the core, n_tail on the tail
    let n_core = area * w_core.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
    let n_tail = area * w_core.powf(-2.0 * s) / (2.0 * s);
    let gv = g.eval(v);

    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        let mut dir = [0.0; MAX_DIM];
        let mut z = [0.0; MAX_DIM];
        let mut a = [0.0; MAX_DIM];
        let mut b = [0.0; MAX_DIM];

        // paired core
        let r = w_core * rng.random::<f64>().powf(1.0 / (2.0 - 2.0 * s));
        random_direction(rng, d, &mut dir);
        let zw = zprop.sample(rng, &mut z);
        for k in 0..d {
            a[k] = v[k] - z[k];
            b[k] = r * dir[k];
        }
        let f_mid = f.eval(&a[..d]);
        let dg = g.second_difference(v, &b[..d]);
        let df = f.second_difference(&a[..d], &b[..d]);
        let core = if r > 0.0 {
            0.5 * n_core / (r * r) * zw * (f_mid * dg - gv * df)
        } else {
            0.0
        };

        // tail, gain term: g(v+w) f(v-z)
        let rt = w_core * rng.random::<f64>().powf(-1.0 / (2.0 * s));
        random_direction(rng, d, &mut dir);
        let zw = zprop.sample(rng, &mut z);
        for k in 0..d {
            a[k] = v[k] + rt * dir[k];
            b[k] = v[k] - z[k];
        }
        let gain = n_tail * g.eval(&a[..d]) * f.eval(&b[..d]) * zw;

        // tail, loss term: g(v) int |z|^mu f(v+w-z) dz with y = v+w-z ~ f
        let loss = if gv != 0.0 {
            let rt = w_core * rng.random::<f64>().powf(-1.0 / (2.0 * s));
            random_direction(rng, d, &mut dir);
            let py = f.sample(rng, &mut b[..d]);
            let fy = f.eval(&b[..d]);
            let dist = (0..d).map(|k| (v[k] + rt * dir[k] - b[k]).powi(2)).sum::<f64>().sqrt();
            if py > 0.0 && dist > 0.0 {
                n_tail * gv * dist.powf(mu) * fy / py
            } else {
                0.0
            }
        } else {
            0.0
        };
        core + gain - loss
    };

    let m = mc_reduce(cfg.samples, cfg.seed, draw);
    Ok((consts.c_dgs * m.mean, consts.c_dgs * m.stderr()))
}

/// [`q_direct_point_density`] for grid fields under multilinear interpolation.
pub fn q_direct_point(
    params: &ModelParams,
    f: &Field,
    g: &Field,
    v: &[f64],
    cfg: &McConfig,
) -> Result<(f64, f64)> {
    f.grid.check_same(&g.grid)?;
    let fd = GridDensity::new(f);
    let gd = GridDensity::new(g);
    q_direct_point_density(params, &fd, &gd, v, cfg)
}

/// Exact `int |z|^mu e^{-|z|^2/(2 tau^2)} dz`, exposed for tests.
pub fn gaussian_power_moment(d: usize, mu: f64, tau: f64) -> Result<f64> {
    let k = 0.5 * (d as f64 + mu);
    Ok(unit_sphere_area(d) * (2.0 * tau * tau).powf(k) * gamma(k)? / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_merge_matches_direct() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..300].iter().for_each(|&x| a.push(x));
        xs[300..].iter().for_each(|&x| b.push(x));
        let m = a.merge(b);
        assert!((m.mean - all.mean).abs() < 1e-12);
        assert!((m.m2 - all.m2).abs() < 1e-9 * all.m2);
    }

    #[test]
    fn z_proposal_weight_integrates_correctly() {
        // E_q[|z|^mu / q(z) * h(z)] = int |z|^mu h(z) dz for h = exp(-|z|^2/2)
        let (d, mu) = (3, -0.4);
        let prop = ZProposal::new(d, mu, 0.5, 1.7, 6.0).unwrap();
        let m = mc_reduce(200_000, 9, |rng| {
            let mut z = [0.0; MAX_DIM];
            let w = prop.sample(rng, &mut z);
            let r2: f64 = z.iter().map(|x| x * x).sum();
            w * (-0.5 * r2).exp()
        });
        let exact = gaussian_power_moment(d, mu, 1.0).unwrap();
        assert!((m.mean - exact).abs() < 4.0 * m.stderr(), "{} vs {exact} +- {}", m.mean, m.stderr());
    }

    #[test]
    fn grid_density_sampler_is_exact() {
        // E_p[f(y)/p(y)] = int f exactly, so the estimator has zero variance
        let grid = Grid::new(2, 8, 2.0).unwrap();
        let f = Field::from_fn(grid, |v| 1.0 + 0.3 * v[0] - 0.1 * v[1] * v[1]);
        let dens = GridDensity::new(&f);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut y = [0.0; 2];
        for _ in 0..100 {
            let p = dens.sample(&mut rng, &mut y);
            let ratio = dens.eval(&y) / p;
            assert!((ratio - dens.total_abs()).abs() < 1e-12 * dens.total_abs());
        }
    }

    #[test]
    fn projection_removes_mass_and_momentum() {
        let grid = Grid::new(2, 16, 4.0).unwrap();
        let f = Field::from_fn(grid, |v| (-(v[0] * v[0] + v[1] * v[1]) / 2.0).exp());
        let q = Field::from_fn(grid, |v| (v[0] - 0.3) * (-(v[0] * v[0] + v[1] * v[1])).exp() + 0.01);
        let p = project_conservative(&f, &q);
        let d = crate::grid::diagnostics(&p, 0.0, &[]);
        assert!(d.mass.abs() < 1e-14);
        assert!(d.momentum.iter().all(|m| m.abs() < 1e-14));
        // a field that is already conservative is untouched
        let again = project_conservative(&f, &p);
        let diff = again.axpy(-1.0, &p).linf_norm();
        assert!(diff < 1e-15);
        // zero weight leaves q alone
        assert_eq!(project_conservative(&Field::zeros(grid), &q), q);
    }

    #[test]
    fn carleman_requires_very_soft() {
        let grid = Grid::new(2, 8, 2.0).unwrap();
        let mut plan = SpectralPlan::new(grid, ModelParams::new(2, -0.5, 0.4).unwrap()).unwrap();
        let f = Field::zeros(grid);
        assert!(matches!(q_carleman(&mut plan, &f, &f), Err(Error::Domain(_))));
    }

    #[test]
    fn mc_config_checks() {
        let cfg = McConfig { samples: 999, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(McConfig::default().validate().is_ok());
    }
}
