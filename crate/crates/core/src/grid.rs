//! Uniform tensor velocity grid on `[-L, L)^d`, sampled densities, and
//! moment/entropy diagnostics.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constants::ModelParams;
use crate::error::{Error, Result};

/// Largest supported velocity dimension.
pub const MAX_DIM: usize = 3;

/// Uniform grid with nodes `v_i = -L + i h`, `h = 2L/n`, on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
}

impl Grid {
    /// `n` must be even (so the origin is a node) and at least 8.
    pub fn new(d: usize, n: usize, l: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::Domain(format!("grid dimension {d} not in 1..=3")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::Domain(format!("points per axis must be even and >= 8, got {n}")));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::Domain(format!("half-width must be positive, got {l}")));
        }
        Ok(Self { d, n, l })
    }

    pub fn h(&self) -> f64 {
        2.0 * self.l / self.n as f64
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    /// Number of nodes `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.l + i as f64 * self.h()
    }

    /// Per-axis indices of flat node `idx` (row-major, last axis fastest).
    pub fn multi_index(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for k in (0..self.d).rev() {
            out[k] = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi[..self.d].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Coordinates of flat node `idx`; unused trailing components are 0.
    pub fn coords(&self, idx: usize) -> [f64; MAX_DIM] {
        let m = self.multi_index(idx);
        let mut v = [0.0; MAX_DIM];
        for k in 0..self.d {
            v[k] = self.axis_coord(m[k]);
        }
        v
    }

    pub fn origin_index(&self) -> usize {
        self.flat_index(&[self.n / 2; MAX_DIM])
    }

    /// Index of the node nearest to `v`, clamped to the box.
    pub fn nearest_index(&self, v: &[f64]) -> usize {
        let mut m = [0usize; MAX_DIM];
        for k in 0..self.d {
            let i = ((v[k] + self.l) / self.h()).round();
            m[k] = i.clamp(0.0, (self.n - 1) as f64) as usize;
        }
        self.flat_index(&m)
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.d != other.d || self.n != other.n || self.l != other.l {
            return Err(Error::GridMismatch(format!(
                "(d, n, L) = ({}, {}, {}) vs ({}, {}, {})",
                self.d, self.n, self.l, other.d, other.n, other.l
            )));
        }
        Ok(())
    }
}

/// A real density sampled at the grid nodes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i)[..grid.d])).collect();
        Self { grid, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&x| f(x)).collect() }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|x| a * x)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Field) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect();
        Self { grid: self.grid, values }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Midpoint-rule integral `sum(values) h^d`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Discrete `L^2` norm.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|x| x * x).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `p(x+w) + p(x-w) - 2 p(x)` for the multilinear interpolant `p`.
    /// When all three points share a cell this is `2 sum_{k<l} d_k d_l p(x) w_k w_l`,
    /// evaluated without cancellation.
    pub fn interp_second_difference(&self, x: &[f64], w: &[f64]) -> f64 {
        let g = &self.grid;
        let d = g.d;
        let h = g.h();
        let cell_of = |y: f64| -> Option<usize> {
            let t = (y + g.l) / h;
            if t >= 0.0 && t <= (g.n - 1) as f64 {
                Some((t.floor() as usize).min(g.n - 2))
            } else {
                None
            }
        };
        let mut base = [0usize; MAX_DIM];
        let mut same = true;
        for k in 0..d {
            let c = cell_of(x[k]);
            if c.is_none() || c != cell_of(x[k] + w[k]) || c != cell_of(x[k] - w[k]) {
                same = false;
                break;
            }
            base[k] = c.unwrap_or(0);
        }
        if !same {
            let mut p = [0.0; MAX_DIM];
            let mut m = [0.0; MAX_DIM];
            for k in 0..d {
                p[k] = x[k] + w[k];
                m[k] = x[k] - w[k];
            }
            let fx = self.interpolate(x);
            return (self.interpolate(&p[..d]) - fx) + (self.interpolate(&m[..d]) - fx);
        }
        let mut t = [0.0; MAX_DIM];
        for k in 0..d {
            t[k] = (x[k] + g.l) / h - base[k] as f64;
        }
        let mut acc = 0.0;
        for k in 0..d {
            for l in k + 1..d {
                let mut hkl = 0.0;
                for corner in 0..(1usize << d) {
                    let mut wgt = 1.0;
                    let mut idx = 0;
                    for m in 0..d {
                        let bit = (corner >> (d - 1 - m)) & 1;
                        idx = idx * g.n + base[m] + bit;
                        let sign = if bit == 1 { 1.0 } else { -1.0 };
                        wgt *= if m == k || m == l {
                            sign
                        } else if bit == 1 {
                            t[m]
                        } else {
                            1.0 - t[m]
                        };
                    }
                    hkl += wgt * self.values[idx];
                }
                acc += 2.0 * hkl * w[k] * w[l];
            }
        }
        acc / (h * h)
    }

    /// Multilinear interpolation at `v`; zero outside the node hull.
    pub fn interpolate(&self, v: &[f64]) -> f64 {
        let g = &self.grid;
        let h = g.h();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for k in 0..g.d {
            let x = (v[k] + g.l) / h;
            if !(x >= 0.0 && x <= (g.n - 1) as f64) {
                return 0.0;
            }
            let i = (x.floor() as usize).min(g.n - 2);
            base[k] = i;
            frac[k] = x - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << g.d) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..g.d {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx = idx * g.n + base[k] + bit;
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }
}

/// One Gaussian component `mass (2 pi sigma^2)^{-d/2} exp(-|v-c|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mass: f64,
    /// Empty means the origin.
    #[serde(default)]
    pub center: Vec<f64>,
    /// `sigma^2`.
    pub variance: f64,
}

impl Gaussian {
    pub fn centered(mass: f64, variance: f64) -> Self {
        Self { mass, center: Vec::new(), variance }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::Domain(format!("gaussian variance must be positive, got {}", self.variance)));
        }
        if !self.center.is_empty() && self.center.len() != d {
            return Err(Error::Domain(format!(
                "gaussian center has {} components, grid has d = {d}",
                self.center.len()
            )));
        }
        if !self.mass.is_finite() {
            return Err(Error::Domain("gaussian mass must be finite".into()));
        }
        Ok(())
    }

    /// `G(x+w) + G(x-w) - 2 G(x)` without cancellation for small `w`.
    pub fn second_difference(&self, x: &[f64], w: &[f64]) -> f64 {
        let gx = self.eval(x);
        let d = x.len();
        let mut a = 0.0;
        let mut b = 0.0;
        for k in 0..d {
            let c = self.center.get(k).copied().unwrap_or(0.0);
            a += w[k] * w[k];
            b += (x[k] - c) * w[k];
        }
        a /= 2.0 * self.variance;
        b /= self.variance;
        if gx == 0.0 || b.abs() > 700.0 {
            let mut p = [0.0; MAX_DIM];
            let mut m = [0.0; MAX_DIM];
            for k in 0..d {
                p[k] = x[k] + w[k];
                m[k] = x[k] - w[k];
            }
            return self.eval(&p[..d]) + self.eval(&m[..d]) - 2.0 * gx;
        }
        let sh = (0.5 * b).sinh();
        2.0 * gx * ((-a).exp() * 2.0 * sh * sh + (-a).exp_m1())
    }

    /// `G(x+w) - G(x-w)` without cancellation for small `w`.
    pub fn central_difference(&self, x: &[f64], w: &[f64]) -> f64 {
        let gx = self.eval(x);
        let d = x.len();
        let mut a = 0.0;
        let mut b = 0.0;
        for k in 0..d {
            let c = self.center.get(k).copied().unwrap_or(0.0);
            a += w[k] * w[k];
            b += (x[k] - c) * w[k];
        }
        a /= 2.0 * self.variance;
        b /= self.variance;
        if gx == 0.0 || b.abs() > 700.0 {
            let mut p = [0.0; MAX_DIM];
            let mut m = [0.0; MAX_DIM];
            for k in 0..d {
                p[k] = x[k] + w[k];
                m[k] = x[k] - w[k];
            }
            return self.eval(&p[..d]) - self.eval(&m[..d]);
        }
        -2.0 * gx * (-a).exp() * b.sinh()
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        let d = v.len();
        let r2: f64 = v
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let c = self.center.get(k).copied().unwrap_or(0.0);
                (x - c) * (x - c)
            })
            .sum();
        self.mass * (2.0 * PI * self.variance).powf(-0.5 * d as f64) * (-r2 / (2.0 * self.variance)).exp()
    }
}

/// Initial-condition specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Zero,
    Gaussian(Gaussian),
    Sum { components: Vec<Gaussian> },
    /// Snapshot written by [`write_snapshot`]; `path` names the `.json` file.
    File { path: PathBuf },
}

pub fn build_field(grid: &Grid, ic: &InitialCondition) -> Result<Field> {
    match ic {
        InitialCondition::Zero => Ok(Field::zeros(*grid)),
        InitialCondition::Gaussian(g) => {
            g.validate(grid.d)?;
            Ok(Field::from_fn(*grid, |v| g.eval(v)))
        }
        InitialCondition::Sum { components } => {
            for g in components {
                g.validate(grid.d)?;
            }
            Ok(Field::from_fn(*grid, |v| components.iter().map(|g| g.eval(v)).sum()))
        }
        InitialCondition::File { path } => {
            let (field, _) = read_snapshot(path)?;
            grid.check_same(&field.grid)?;
            Ok(field)
        }
    }
}

/// Moments, norms and entropy of a field at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
    pub entropy: f64,
    pub l2: f64,
    pub linf: f64,
    pub min_f: f64,
    /// `max_v <v>^q |f(v)|` for each configured `q`.
    pub wsup_q: Vec<f64>,
}

pub fn diagnostics(field: &Field, t: f64, q_list: &[f64]) -> DiagnosticsRecord {
    let g = &field.grid;
    let d = g.d;
    let mut mass = 0.0;
    let mut momentum = vec![0.0; d];
    let mut energy = 0.0;
    let mut entropy = 0.0;
    let mut sq = 0.0;
    let mut linf = 0.0f64;
    let mut min_f = f64::INFINITY;
    let mut wsup = vec![0.0f64; q_list.len()];
    for (i, &f) in field.values.iter().enumerate() {
        let v = g.coords(i);
        let r2: f64 = v[..d].iter().map(|x| x * x).sum();
        mass += f;
        for k in 0..d {
            momentum[k] += v[k] * f;
        }
        energy += r2 * f;
        if f > 0.0 {
            entropy += f * f.ln();
        }
        sq += f * f;
        linf = linf.max(f.abs());
        min_f = min_f.min(f);
        for (w, &q) in wsup.iter_mut().zip(q_list) {
            *w = w.max((1.0 + r2).powf(0.5 * q) * f.abs());
        }
    }
    let dv = g.cell_volume();
    DiagnosticsRecord {
        t,
        mass: mass * dv,
        momentum: momentum.into_iter().map(|p| p * dv).collect(),
        energy: energy * dv,
        entropy: entropy * dv,
        l2: (sq * dv).sqrt(),
        linf,
        min_f: if field.values.is_empty() { 0.0 } else { min_f },
        wsup_q: wsup,
    }
}

/// Metadata half of a field snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub t: f64,
    pub params: Option<ModelParams>,
}

/// Write `<dir>/<name>.json` and `<dir>/<name>.f64`; returns the json path.
pub fn write_snapshot(
    dir: &Path,
    name: &str,
    field: &Field,
    t: f64,
    params: Option<&ModelParams>,
) -> Result<PathBuf> {
    let meta = SnapshotMeta {
        d: field.grid.d,
        n: field.grid.n,
        l: field.grid.l,
        t,
        params: params.copied(),
    };
    let json_path = dir.join(format!("{name}.json"));
    let bin_path = dir.join(format!("{name}.f64"));
    let mut bytes = Vec::with_capacity(8 * field.values.len());
    for x in &field.values {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(&bin_path, bytes)?;
    fs::write(&json_path, serde_json::to_string_pretty(&meta)?)?;
    Ok(json_path)
}

/// Read a snapshot given its `.json` path (the `.f64` sibling is implied).
pub fn read_snapshot(json_path: &Path) -> Result<(Field, SnapshotMeta)> {
    let bad = |reason: String| Error::FileFormat { path: json_path.display().to_string(), reason };
    let text = fs::read_to_string(json_path)?;
    let meta: SnapshotMeta = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let grid = Grid::new(meta.d, meta.n, meta.l).map_err(|e| bad(e.to_string()))?;
    let bin_path = json_path.with_extension("f64");
    let bytes = fs::read(&bin_path)?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::FileFormat {
            path: bin_path.display().to_string(),
            reason: format!("expected {} bytes, found {}", 8 * grid.len(), bytes.len()),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::FileFormat {
            path: bin_path.display().to_string(),
            reason: "non-finite value".into(),
        });
    }
    Ok((Field { grid, values }, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_layout() {
        let g = Grid::new(2, 8, 4.0).unwrap();
        assert_eq!(g.len(), 64);
        assert_eq!(g.h(), 1.0);
        assert_eq!(g.coords(0)[..2], [-4.0, -4.0]);
        assert_eq!(g.coords(1)[..2], [-4.0, -3.0]);
        assert_eq!(g.coords(g.origin_index())[..2], [0.0, 0.0]);
        assert_eq!(g.flat_index(&g.multi_index(37)), 37);
        assert_eq!(g.nearest_index(&[0.2, -0.3]), g.origin_index());
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(Grid::new(4, 8, 1.0).is_err());
        assert!(Grid::new(2, 6, 1.0).is_err());
        assert!(Grid::new(2, 9, 1.0).is_err());
        assert!(Grid::new(2, 8, 0.0).is_err());
        assert!(Grid::new(3, 12, 2.0).is_ok());
    }

    #[test]
    fn constant_field_mass() {
        let g = Grid::new(1, 16, 3.0).unwrap();
        let f = Field::from_values(g, vec![0.25; 16]).unwrap();
        assert_eq!(diagnostics(&f, 0.0, &[]).mass, 0.25 * 6.0);
    }

    #[test]
    fn zero_field_diagnostics() {
        let g = Grid::new(3, 8, 2.0).unwrap();
        let r = diagnostics(&Field::zeros(g), 0.5, &[2.0]);
        assert_eq!(r.mass, 0.0);
        assert_eq!(r.entropy, 0.0);
        assert_eq!(r.l2, 0.0);
        assert_eq!(r.linf, 0.0);
        assert_eq!(r.min_f, 0.0);
        assert_eq!(r.wsup_q, vec![0.0]);
        assert!(r.momentum.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn interpolation_is_exact_at_nodes_and_linear_between() {
        let g = Grid::new(2, 8, 4.0).unwrap();
        let f = Field::from_fn(g, |v| 2.0 * v[0] - v[1] + 1.0);
        assert_eq!(f.interpolate(&[1.0, -2.0]), 5.0);
        assert!((f.interpolate(&[0.3, 0.7]) - (0.6 - 0.7 + 1.0)).abs() < 1e-14);
        assert_eq!(f.interpolate(&[5.0, 0.0]), 0.0);
    }

    #[test]
    fn second_differences_match_direct_form() {
        let gs = Gaussian { mass: 1.3, center: vec![0.5, -0.2], variance: 0.7 };
        let x = [0.9, 0.4];
        for w in [[0.3, -0.1], [1e-3, 2e-3]] {
            let direct = gs.eval(&[x[0] + w[0], x[1] + w[1]]) + gs.eval(&[x[0] - w[0], x[1] - w[1]])
                - 2.0 * gs.eval(&x);
            let got = gs.second_difference(&x, &w);
            assert!((got - direct).abs() < 1e-9 * direct.abs().max(1e-12), "{got} vs {direct}");
        }
        // tiny w: second difference ~ w^T H w stays accurate
        let w = [1e-9, 0.0];
        let hxx = gs.eval(&x) * ((x[0] - 0.5f64).powi(2) / 0.49 - 1.0 / 0.7);
        assert!((gs.second_difference(&x, &w) / 1e-18 - hxx).abs() < 1e-6 * hxx.abs());
        let gx = gs.eval(&x) * (-(x[0] - 0.5) / 0.7);
        assert!((gs.central_difference(&x, &w) / 2e-9 - gx).abs() < 1e-6 * gx.abs());
        let w = [0.3, -0.1];
        let direct = gs.eval(&[x[0] + w[0], x[1] + w[1]]) - gs.eval(&[x[0] - w[0], x[1] - w[1]]);
        assert!((gs.central_difference(&x, &w) - direct).abs() < 1e-12 * direct.abs());

        let grid = Grid::new(3, 8, 2.0).unwrap();
        let f = Field::from_fn(grid, |v| (v[0] * v[1] + 0.5 * v[1] * v[2] - v[0] * v[2]).sin());
        let x = [0.2, -0.3, 0.1];
        for w in [[0.1, 0.05, -0.1], [0.7, -0.4, 0.3]] {
            let p = [x[0] + w[0], x[1] + w[1], x[2] + w[2]];
            let m = [x[0] - w[0], x[1] - w[1], x[2] - w[2]];
            let direct = f.interpolate(&p) + f.interpolate(&m) - 2.0 * f.interpolate(&x);
            assert!((f.interp_second_difference(&x, &w) - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn gaussian_rejects_bad_variance() {
        let g = Grid::new(1, 8, 4.0).unwrap();
        let ic = InitialCondition::Gaussian(Gaussian::centered(1.0, 0.0));
        assert!(matches!(build_field(&g, &ic), Err(Error::Domain(_))));
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(2, 8, 3.0).unwrap();
        let f = Field::from_fn(g, |v| (v[0] - 0.5 * v[1]).sin());
        let p = ModelParams::new(2, -1.5, 0.6).unwrap();
        let path = write_snapshot(dir.path(), "snap_0", &f, 0.25, Some(&p)).unwrap();
        let (back, meta) = read_snapshot(&path).unwrap();
        assert_eq!(back, f);
        assert_eq!(meta.t, 0.25);
        assert_eq!(meta.params, Some(p));
        let ic = InitialCondition::File { path: path.clone() };
        assert_eq!(build_field(&g, &ic).unwrap(), f);
        let other = Grid::new(2, 10, 3.0).unwrap();
        assert!(matches!(build_field(&other, &ic), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn truncated_snapshot_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(1, 8, 1.0).unwrap();
        let path = write_snapshot(dir.path(), "s", &Field::zeros(g), 0.0, None).unwrap();
        std::fs::write(path.with_extension("f64"), [0u8; 12]).unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::FileFormat { .. })));
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::FileFormat { .. })));
    }
}
