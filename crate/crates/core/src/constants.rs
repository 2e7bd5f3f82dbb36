//! Closed-form model constants for the isotropic collision operator, the
//! Hardy-inequality ratio `Phi`, and its threshold scan.
//!
//! Every formula is evaluated as a signed product of Gamma values in log
//! space so that large arguments cannot overflow and poles are reported by
//! name.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{ln_gamma_signed, POLE_MARGIN};

/// The triple `(d, gamma, s)` that fixes the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    pub gamma: f64,
    pub s: f64,
}

impl ModelParams {
    pub fn new(d: usize, gamma: f64, s: f64) -> Result<Self> {
        let p = Self { d, gamma, s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::Domain(format!("s = {} must lie in (0, 1)", self.s)));
        }
        let d = self.d as f64;
        if !(self.gamma > -d && self.gamma < 0.0) {
            return Err(Error::Domain(format!(
                "gamma = {} must lie in (-{}, 0)",
                self.gamma, self.d
            )));
        }
        Ok(())
    }

    /// `gamma + 2s < 0`.
    pub fn very_soft(&self) -> bool {
        self.gamma + 2.0 * self.s < 0.0
    }

    /// The sharp threshold `-(d + 4s)/3` below which the L2 argument fails.
    pub fn l2_threshold(&self) -> f64 {
        -(self.d as f64 + 4.0 * self.s) / 3.0
    }

    /// Range in which L2 monotonicity is guaranteed: `-(d+4s)/3 <= gamma < -2s`.
    pub fn l2_monotone_range(&self) -> bool {
        self.gamma >= self.l2_threshold() && self.very_soft()
    }

    /// Hypothesis of the global existence theorem:
    /// `d >= 3` and `max{-(d+4s)/3, -2s-4s/d} <= gamma < -2`.
    pub fn main_theorem_range(&self) -> bool {
        let d = self.d as f64;
        let lower = self.l2_threshold().max(-2.0 * self.s - 4.0 * self.s / d);
        self.d >= 3 && self.gamma >= lower && self.gamma < -2.0
    }
}

/// Every closed-form constant of the model for one [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantSet {
    pub c_dgs: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(rename = "cR")]
    pub c_r: f64,
    #[serde(rename = "CH")]
    pub c_h: f64,
    /// `a_{d,gamma}` of the isotropic Landau operator; absent at `gamma = -2`.
    pub a_landau: Option<f64>,
    /// `c_{d,gamma} = (-gamma-2)(d+gamma) a_{d,gamma}`; absent at `gamma = -2`.
    pub c_landau: Option<f64>,
    /// `cR / CH`.
    pub ratio: f64,
    /// `4^s Gamma((d+2s)/2) / (pi^{d/2} |Gamma(-s)|)`.
    pub frac_norm: f64,
}

/// Accumulates `prefactor * prod Gamma(arg_i)^{±1}` in log space.
struct GammaProduct<'a> {
    label: &'a str,
    ln_abs: f64,
    sign: f64,
}

impl<'a> GammaProduct<'a> {
    fn new(label: &'a str) -> Self {
        Self {
            label,
            ln_abs: 0.0,
            sign: 1.0,
        }
    }

    fn factor(mut self, value: f64) -> Self {
        self.ln_abs += value.abs().ln();
        if value < 0.0 {
            self.sign = -self.sign;
        }
        self
    }

    fn ln_factor(mut self, ln_value: f64) -> Self {
        self.ln_abs += ln_value;
        self
    }

    fn gamma(self, arg: f64, what: &str) -> Result<Self> {
        self.gamma_pow(arg, 1.0, what)
    }

    fn inv_gamma(self, arg: f64, what: &str) -> Result<Self> {
        self.gamma_pow(arg, -1.0, what)
    }

    fn abs_gamma(mut self, arg: f64, what: &str) -> Result<Self> {
        let (lg, _) = ln_gamma_signed(arg).map_err(|e| self.rename(e, what))?;
        self.ln_abs += lg;
        Ok(self)
    }

    fn gamma_pow(mut self, arg: f64, power: f64, what: &str) -> Result<Self> {
        let (lg, sg) = ln_gamma_signed(arg).map_err(|e| self.rename(e, what))?;
        self.ln_abs += power * lg;
        if sg < 0.0 {
            self.sign = -self.sign;
        }
        Ok(self)
    }

    fn rename(&self, e: Error, what: &str) -> Error {
        match e {
            Error::Pole { arg, .. } => Error::Pole {
                expr: format!("Gamma({what}) in {}", self.label),
                arg,
            },
            other => other,
        }
    }

    fn value(&self) -> f64 {
        self.sign * self.ln_abs.exp()
    }
}

/// Normalization of the fractional Laplacian,
/// `(-Delta)^s g = frac_norm * p.v. int (g(v) - g(v+w)) |w|^{-d-2s} dw`.
pub fn frac_norm(d: usize, s: f64) -> Result<f64> {
    let d = d as f64;
    Ok(GammaProduct::new("frac_norm")
        .ln_factor(s * 4f64.ln() - 0.5 * d * PI.ln())
        .gamma((d + 2.0 * s) / 2.0, "(d+2s)/2")?
        .gamma_pow(-s, -1.0, "-s")?
        .value()
        .abs())
}

fn c_dgs(p: &ModelParams) -> Result<f64> {
    let (d, g, s) = (p.d as f64, p.gamma, p.s);
    Ok(GammaProduct::new("c_dgs")
        .factor(1.0 - s)
        .ln_factor(-d * PI.ln() - (d + g) * 2f64.ln())
        .gamma((d + 2.0 * s) / 2.0, "(d+2s)/2")?
        .gamma(-(g + 2.0 * s) / 2.0, "-(gamma+2s)/2")?
        .inv_gamma((d + g + 2.0 * s) / 2.0, "(d+gamma+2s)/2")?
        .value())
}

fn c1(p: &ModelParams) -> Result<f64> {
    let (d, g, s) = (p.d as f64, p.gamma, p.s);
    Ok(GammaProduct::new("c1")
        .factor(1.0 - s)
        .ln_factor(-0.5 * d * PI.ln() - (d + g + 2.0 * s) * 2f64.ln())
        .abs_gamma(-s, "-s")?
        .gamma(-(g + 2.0 * s) / 2.0, "-(gamma+2s)/2")?
        .inv_gamma((d + g + 2.0 * s) / 2.0, "(d+gamma+2s)/2")?
        .value())
}

fn c2(p: &ModelParams) -> Result<f64> {
    let (d, g, s) = (p.d as f64, p.gamma, p.s);
    Ok(GammaProduct::new("c2")
        .factor(1.0 - s)
        .ln_factor(-0.5 * d * PI.ln() - (d + g) * 2f64.ln())
        .abs_gamma(-s, "-s")?
        .gamma(-g / 2.0, "-gamma/2")?
        .inv_gamma((d + g) / 2.0, "(d+gamma)/2")?
        .value())
}

fn c_r(p: &ModelParams) -> Result<f64> {
    let (d, g, s) = (p.d as f64, p.gamma, p.s);
    Ok(GammaProduct::new("cR")
        .ln_factor(0.5 * d * PI.ln())
        .abs_gamma(-s, "-s")?
        .gamma((g + 2.0 * s + d) / 2.0, "(gamma+2s+d)/2")?
        .gamma(-g / 2.0, "-gamma/2")?
        .inv_gamma((d + 2.0 * s) / 2.0, "(d+2s)/2")?
        .inv_gamma((g + d) / 2.0, "(gamma+d)/2")?
        .inv_gamma(-(g + 2.0 * s) / 2.0, "-(gamma+2s)/2")?
        .value())
}

fn c_h(p: &ModelParams) -> Result<f64> {
    let (d, g, s) = (p.d as f64, p.gamma, p.s);
    let pref = GammaProduct::new("CH")
        .ln_factor(0.5 * d * PI.ln())
        .abs_gamma(-s, "-s")?
        .inv_gamma((d + 2.0 * s) / 2.0, "(d+2s)/2")?
        .value();
    let first = GammaProduct::new("CH")
        .factor(2.0)
        .gamma((d - g) / 4.0, "(d-gamma)/4")?
        .gamma((d + g + 4.0 * s) / 4.0, "(d+gamma+4s)/4")?
        .inv_gamma((d + g) / 4.0, "(d+gamma)/4")?
        .inv_gamma((d - g - 4.0 * s) / 4.0, "(d-gamma-4s)/4")?
        .value();
    let second = GammaProduct::new("CH")
        .gamma(-g / 2.0, "-gamma/2")?
        .gamma((d + g + 2.0 * s) / 2.0, "(d+gamma+2s)/2")?
        .inv_gamma((d + g) / 2.0, "(d+gamma)/2")?
        .inv_gamma((-g - 2.0 * s) / 2.0, "(-gamma-2s)/2")?
        .value();
    Ok(pref * (first - second))
}

fn a_landau(p: &ModelParams) -> Result<Option<f64>> {
    let (d, g) = (p.d as f64, p.gamma);
    if (g + 2.0).abs() < POLE_MARGIN {
        return Ok(None);
    }
    let a = GammaProduct::new("a_landau")
        .ln_factor(-0.5 * d * PI.ln() - (d + g + 1.0) * 2f64.ln())
        .factor(1.0 / (-g - 2.0))
        .gamma(-g / 2.0, "-gamma/2")?
        .inv_gamma((d + g + 2.0) / 2.0, "(d+gamma+2)/2")?
        .value();
    Ok(Some(a))
}

/// Evaluate every closed-form constant for `params`.
pub fn compute_constants(params: &ModelParams) -> Result<ConstantSet> {
    params.validate()?;
    let c_dgs = c_dgs(params)?;
    let c_r = c_r(params)?;
    let c_h = c_h(params)?;
    let a_landau = a_landau(params)?;
    let c_landau = a_landau.map(|a| (-params.gamma - 2.0) * (params.d as f64 + params.gamma) * a);
    Ok(ConstantSet {
        c_dgs,
        c1: c1(params)?,
        c2: c2(params)?,
        c_r,
        c_h,
        a_landau,
        c_landau,
        ratio: c_r / c_h,
        frac_norm: frac_norm(params.d, params.s)?,
    })
}

/// The Gamma-function quotient whose comparison with 1 decides `cR <= CH`;
/// `cR / CH = 1 / (2 Phi - 1)`.
pub fn phi(params: &ModelParams) -> Result<f64> {
    let (d, g, s) = (params.d as f64, params.gamma, params.s);
    Ok(GammaProduct::new("Phi")
        .gamma((d - g) / 4.0, "(d-gamma)/4")?
        .gamma((d + g + 4.0 * s) / 4.0, "(d+gamma+4s)/4")?
        .gamma((d + g) / 2.0, "(d+gamma)/2")?
        .gamma((-g - 2.0 * s) / 2.0, "(-gamma-2s)/2")?
        .inv_gamma((d + g) / 4.0, "(d+gamma)/4")?
        .inv_gamma((d - g - 4.0 * s) / 4.0, "(d-gamma-4s)/4")?
        .inv_gamma(-g / 2.0, "-gamma/2")?
        .inv_gamma((d + g + 2.0 * s) / 2.0, "(d+gamma+2s)/2")?
        .value())
}

/// `d/dgamma ln Phi` as a signed sum of digamma values.
pub fn phi_log_derivative(params: &ModelParams) -> Result<f64> {
    use crate::specfun::digamma;
    let (d, g, s) = (params.d as f64, params.gamma, params.s);
    Ok(-0.25 * digamma((d - g) / 4.0)? - 0.25 * digamma((d + g) / 4.0)?
        + 0.25 * digamma((d + g + 4.0 * s) / 4.0)?
        + 0.25 * digamma((d - g - 4.0 * s) / 4.0)?
        + 0.5 * digamma((d + g) / 2.0)?
        + 0.5 * digamma(-g / 2.0)?
        - 0.5 * digamma((-g - 2.0 * s) / 2.0)?
        - 0.5 * digamma((d + g + 2.0 * s) / 2.0)?)
}

/// One sample of a threshold scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSample {
    pub gamma: f64,
    pub phi: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScan {
    pub d: usize,
    pub s: f64,
    pub samples: Vec<ScanSample>,
    /// Bisection root of `Phi = 1`.
    pub root: f64,
}

fn scan_sample(d: usize, s: f64, gamma: f64) -> Result<ScanSample> {
    // Phi blows up to +inf and cR/CH to 0 as gamma -> -2s from below
    if (gamma + 2.0 * s).abs() < POLE_MARGIN {
        return Ok(ScanSample {
            gamma,
            phi: f64::INFINITY,
            ratio: 0.0,
        });
    }
    let params = ModelParams::new(d, gamma, s)?;
    let consts = compute_constants(&params)?;
    Ok(ScanSample {
        gamma,
        phi: phi(&params)?,
        ratio: consts.ratio,
    })
}

/// Sample `Phi` and `cR/CH` on `n` uniformly spaced values of `gamma` in
/// `[gamma_lo, gamma_hi]` and locate the root of `Phi = 1` by bisection
/// inside the first bracketing sample interval.
pub fn threshold_scan(d: usize, s: f64, gamma_lo: f64, gamma_hi: f64, n: usize) -> Result<ThresholdScan> {
    if n < 2 {
        return Err(Error::Domain(format!("threshold_scan needs n >= 2, got {n}")));
    }
    let df = d as f64;
    if !(gamma_lo < gamma_hi) || gamma_lo <= -df || gamma_hi > -2.0 * s + POLE_MARGIN {
        return Err(Error::Domain(format!(
            "scan interval [{gamma_lo}, {gamma_hi}] must lie in (-{d}, -2s = {}]",
            -2.0 * s
        )));
    }
    let step = (gamma_hi - gamma_lo) / (n - 1) as f64;
    let samples = (0..n)
        .map(|i| {
            let g = if i == n - 1 { gamma_hi } else { gamma_lo + step * i as f64 };
            scan_sample(d, s, g)
        })
        .collect::<Result<Vec<_>>>()?;

    let bracket = samples
        .windows(2)
        .find(|w| (w[0].phi - 1.0).signum() != (w[1].phi - 1.0).signum() || w[0].phi == 1.0);
    let Some(pair) = bracket else {
        return Err(Error::NoRoot(format!(
            "Phi - 1 keeps one sign on [{gamma_lo}, {gamma_hi}] (d = {d}, s = {s})"
        )));
    };
    let (mut lo, mut hi) = (pair[0].gamma, pair[1].gamma);
    let f_lo_sign = (pair[0].phi - 1.0).signum();
    if pair[0].phi == 1.0 {
        hi = lo;
    }
    for _ in 0..200 {
        if hi - lo <= 1e-15 * lo.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let val = phi(&ModelParams::new(d, mid, s)?)? - 1.0;
        if val == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if val.signum() == f_lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ThresholdScan {
        d,
        s,
        samples,
        root: 0.5 * (lo + hi),
    })
}
