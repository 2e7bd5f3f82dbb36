//! FFT evaluation of power-law convolutions `[g * |.|^mu]` and of the
//! singular integral `L_s g(v) = p.v. int (g(v+w) - g(v)) |w|^{-d-2s} dw`.
//!
//! Fields are zero-padded to `2n` points per axis. Kernel offsets wrap
//! modulo `2n`, so the convolution restricted to the inner box is linear
//! (not circular). The padded dual grid is `xi_k = 2 pi k / (2n h) = pi k / (2L)`
//! for `k` in `-n..n`.

use std::collections::HashMap;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{frac_norm, ModelParams};
use crate::error::{Error, Result};
use crate::fft::FftNd;
use crate::grid::{Field, Grid, MAX_DIM};
use crate::specfun::{epstein_zeta, unit_ball_volume};

/// Treatment of the kernel at offset zero (and, for the second-order rule,
/// at the `2d` nearest neighbours).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularCell {
    /// Average of `|x|^mu` over the ball of volume `h^d`.
    BallAverage,
    /// `K(0) = -Z_d(-mu) h^mu`, exact on constants up to `O(h^{d+mu+2})`.
    Zeta,
    /// Adds the `Z_d(-mu-2)` Laplacian correction on the nearest neighbours.
    #[default]
    ZetaSecondOrder,
}

/// Kernel weights at offset 0 and at the unit offsets `+-e_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellWeights {
    pub center: f64,
    pub neighbor: f64,
}

pub fn cell_weights(grid: &Grid, mu: f64, cell: SingularCell) -> Result<CellWeights> {
    let d = grid.d;
    let h = grid.h();
    let hmu = h.powf(mu);
    Ok(match cell {
        SingularCell::BallAverage => {
            let df = d as f64;
            let r0 = h * unit_ball_volume(d).powf(-1.0 / df);
            let center = df * unit_ball_volume(d) * r0.powf(df + mu) / ((df + mu) * h.powi(d as i32));
            CellWeights { center, neighbor: hmu }
        }
        SingularCell::Zeta => CellWeights { center: -epstein_zeta(d, -mu)? * hmu, neighbor: hmu },
        SingularCell::ZetaSecondOrder => {
            let z0 = epstein_zeta(d, -mu)?;
            let z2 = epstein_zeta(d, -mu - 2.0)?;
            CellWeights {
                center: (z2 - z0) * hmu,
                neighbor: hmu * (1.0 - z2 / (2.0 * d as f64)),
            }
        }
    })
}

/// Kernel sample at integer offset `j` (only the first `d` entries are read).
fn kernel_at(j: &[i64], h: f64, mu: f64, w: CellWeights) -> f64 {
    let r2: i64 = j.iter().map(|x| x * x).sum();
    match r2 {
        0 => w.center,
        1 => w.neighbor,
        _ => (r2 as f64 * h * h).powf(0.5 * mu),
    }
}

fn check_mu(d: usize, mu: f64) -> Result<()> {
    if !(mu > -(d as f64) && mu < 0.0) {
        return Err(Error::Domain(format!("kernel exponent {mu} not in (-{d}, 0)")));
    }
    Ok(())
}

/// Cached FFT workspace for one grid and one parameter triple.
#[derive(Debug)]
pub struct SpectralPlan {
    grid: Grid,
    params: ModelParams,
    cell: SingularCell,
    m: usize,
    fft: FftNd,
    frac_norm: f64,
    /// `|xi|^2` on the padded dual grid.
    xi2: Vec<f64>,
    frac_mult: Vec<f64>,
    kernels: HashMap<u64, Vec<f64>>,
}

impl SpectralPlan {
    pub fn new(grid: Grid, params: ModelParams) -> Result<Self> {
        Self::with_cell(grid, params, SingularCell::default())
    }

    pub fn with_cell(grid: Grid, params: ModelParams, cell: SingularCell) -> Result<Self> {
        params.validate()?;
        if params.d != grid.d {
            return Err(Error::GridMismatch(format!(
                "params have d = {}, grid has d = {}",
                params.d, grid.d
            )));
        }
        let m = 2 * grid.n;
        let fft = FftNd::new(grid.d, m);
        let dk = 2.0 * PI / (m as f64 * grid.h());
        let xi2: Vec<f64> = (0..fft.len())
            .map(|i| {
                let j = padded_offset(i, grid.d, m);
                j[..grid.d].iter().map(|&k| (k as f64 * dk).powi(2)).sum()
            })
            .collect();
        let fnorm = frac_norm(grid.d, params.s)?;
        let frac_mult = xi2.iter().map(|&x| -x.powf(params.s) / fnorm).collect();
        let mut plan = Self {
            grid,
            params,
            cell,
            m,
            fft,
            frac_norm: fnorm,
            xi2,
            frac_mult,
            kernels: HashMap::new(),
        };
        let (g, s) = (params.gamma, params.s);
        for mu in [g + 2.0 * s, g] {
            if mu > -(grid.d as f64) && mu < 0.0 {
                plan.kernel_spectrum(mu)?;
            }
        }
        Ok(plan)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn cell(&self) -> SingularCell {
        self.cell
    }

    pub fn frac_norm(&self) -> f64 {
        self.frac_norm
    }

    /// Points per axis of the padded box.
    pub fn padded_n(&self) -> usize {
        self.m
    }

    /// Largest `|xi|` on the padded dual grid, `sqrt(d) pi / h`.
    pub fn xi_max(&self) -> f64 {
        (self.grid.d as f64).sqrt() * PI / self.grid.h()
    }

    /// Kernel `|x|^mu` sampled on the padded offsets (row-major, wrapped).
    pub fn kernel_samples(&self, mu: f64) -> Result<Vec<f64>> {
        check_mu(self.grid.d, mu)?;
        let w = cell_weights(&self.grid, mu, self.cell)?;
        let h = self.grid.h();
        Ok((0..self.fft.len())
            .map(|i| kernel_at(&padded_offset(i, self.grid.d, self.m)[..self.grid.d], h, mu, w))
            .collect())
    }

    /// Real spectrum of the sampled kernel, cached per exponent.
    pub fn kernel_spectrum(&mut self, mu: f64) -> Result<&[f64]> {
        let key = mu.to_bits();
        if !self.kernels.contains_key(&key) {
            let samples = self.kernel_samples(mu)?;
            let mut buf: Vec<Complex64> = samples.into_iter().map(|x| Complex64::new(x, 0.0)).collect();
            self.fft.forward(&mut buf);
            self.kernels.insert(key, buf.into_iter().map(|c| c.re).collect());
        }
        Ok(&self.kernels[&key])
    }

    fn check_field(&self, g: &Field) -> Result<()> {
        self.grid.check_same(&g.grid)
    }

    /// Zero-padded forward transform of `g`.
    pub(crate) fn forward(&self, g: &Field) -> Result<Vec<Complex64>> {
        self.check_field(g)?;
        let (d, n, m) = (self.grid.d, self.grid.n, self.m);
        let mut buf = vec![Complex64::default(); self.fft.len()];
        for (i, &x) in g.values.iter().enumerate() {
            let mi = self.grid.multi_index(i);
            let pi = mi[..d].iter().fold(0, |acc, &t| acc * m + t);
            buf[pi] = Complex64::new(x, 0.0);
        }
        debug_assert!(n < m);
        self.fft.forward(&mut buf);
        Ok(buf)
    }

    /// Multiply `spec` by a real multiplier, invert, scale and restrict to the inner box.
    pub(crate) fn apply(&self, spec: &[Complex64], mult: &[f64], scale: f64) -> Field {
        let mut buf: Vec<Complex64> = spec.iter().zip(mult).map(|(c, &k)| c * k).collect();
        self.fft.inverse(&mut buf);
        let norm = scale / self.fft.len() as f64;
        let (d, m) = (self.grid.d, self.m);
        let values = (0..self.grid.len())
            .map(|i| {
                let mi = self.grid.multi_index(i);
                let pi = mi[..d].iter().fold(0, |acc, &t| acc * m + t);
                buf[pi].re * norm
            })
            .collect();
        Field { grid: self.grid, values }
    }

    /// `[g * |.|^mu]` on the inner box.
    pub fn power_convolve(&mut self, g: &Field, mu: f64) -> Result<Field> {
        let spec = self.forward(g)?;
        self.power_convolve_spectrum(&spec, mu)
    }

    pub(crate) fn power_convolve_spectrum(&mut self, spec: &[Complex64], mu: f64) -> Result<Field> {
        let dv = self.grid.cell_volume();
        self.kernel_spectrum(mu)?;
        let k = &self.kernels[&mu.to_bits()];
        Ok(self.apply(spec, k, dv))
    }

    /// `L_s g = -(1/frac_norm) (-Delta)^s g` via the periodic multiplier on the padded box.
    pub fn frac_integral(&self, g: &Field) -> Result<Field> {
        let spec = self.forward(g)?;
        Ok(self.frac_integral_spectrum(&spec))
    }

    pub(crate) fn frac_integral_spectrum(&self, spec: &[Complex64]) -> Field {
        self.apply(spec, &self.frac_mult, 1.0)
    }

    /// Spectral Laplacian (multiplier `-|xi|^2`) on the padded box.
    pub fn laplacian(&self, g: &Field) -> Result<Field> {
        let spec = self.forward(g)?;
        Ok(self.laplacian_spectrum(&spec))
    }

    pub(crate) fn laplacian_spectrum(&self, spec: &[Complex64]) -> Field {
        let mult: Vec<f64> = self.xi2.iter().map(|x| -x).collect();
        self.apply(spec, &mult, 1.0)
    }
}

/// Signed per-axis offsets of padded flat index `i`.
fn padded_offset(mut i: usize, d: usize, m: usize) -> [i64; MAX_DIM] {
    let mut out = [0i64; MAX_DIM];
    for k in (0..d).rev() {
        let t = i % m;
        i /= m;
        out[k] = if t < m / 2 { t as i64 } else { t as i64 - m as i64 };
    }
    out
}

/// Cap on `nodes * n^d` for [`power_convolve_direct`].
pub const DIRECT_COST_LIMIT: usize = 1_000_000_000;

/// Brute-force `[g * |.|^mu]` at the given flat node indices, using the
/// same kernel samples as [`SpectralPlan::power_convolve`].
pub fn power_convolve_direct(
    grid: &Grid,
    g: &Field,
    mu: f64,
    nodes: &[usize],
    cell: SingularCell,
) -> Result<Vec<f64>> {
    grid.check_same(&g.grid)?;
    check_mu(grid.d, mu)?;
    let len = grid.len();
    if len > 10_000_000 || len.saturating_mul(nodes.len()) > DIRECT_COST_LIMIT {
        return Err(Error::Cost(format!(
            "direct sum over {len} nodes at {} targets exceeds the guard",
            nodes.len()
        )));
    }
    let w = cell_weights(grid, mu, cell)?;
    let h = grid.h();
    let d = grid.d;
    let dv = grid.cell_volume();
    nodes
        .iter()
        .map(|&node| {
            if node >= len {
                return Err(Error::Domain(format!("node {node} outside grid of {len} nodes")));
            }
            let target = grid.multi_index(node);
            let mut acc = 0.0;
            let mut off = [0i64; MAX_DIM];
            for (a, &x) in g.values.iter().enumerate() {
                let src = grid.multi_index(a);
                for k in 0..d {
                    off[k] = target[k] as i64 - src[k] as i64;
                }
                acc += kernel_at(&off[..d], h, mu, w) * x;
            }
            Ok(acc * dv)
        })
        .collect()
}
