//! Helpers shared by the integration tests.
#![allow(dead_code)]

use isoboltz_core::grid::{build_field, Field, Gaussian, Grid, InitialCondition};
use isoboltz_core::quad::{half_line, tanh_sinh};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_mixture(rng: &mut ChaCha8Rng, d: usize, parts: usize) -> Vec<Gaussian> {
    (0..parts)
        .map(|_| Gaussian {
            mass: rng.random_range(0.2..1.0),
            center: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            variance: rng.random_range(0.4..1.2),
        })
        .collect()
}

/// A mixture with narrower components of random sign.
pub fn random_signed_mixture(rng: &mut ChaCha8Rng, d: usize, parts: usize) -> Vec<Gaussian> {
    random_mixture(rng, d, parts)
        .into_iter()
        .map(|g| Gaussian {
            variance: 0.3 * g.variance,
            mass: if rng.random::<bool>() { g.mass } else { -g.mass },
            ..g
        })
        .collect()
}

pub fn mixture_field(grid: &Grid, comps: &[Gaussian]) -> Field {
    build_field(grid, &InitialCondition::Sum { components: comps.to_vec() }).unwrap()
}

/// `p.v. int (G(w) - G(0)) |w|^{-1-2s} dw` where `G` is the `4L`-periodic
/// extension of the standard Gaussian restricted to `[-L, L)`.
pub fn periodic_frac_oracle(l: f64, s: f64) -> f64 {
    let norm = (2.0 * std::f64::consts::PI).sqrt().recip();
    let p = 4.0 * l;
    // local part on the whole line, paired over +-w
    let local = half_line(
        |w| {
            let q = if w < 1e-8 { -0.5 } else { (-0.5 * w * w).exp_m1() / (w * w) };
            2.0 * norm * q * w.powf(1.0 - 2.0 * s)
        },
        1.0,
        1e-13,
    )
    .unwrap()
    .value;
    // images at x + kP, k != 0
    let image_kernel = |x: f64| {
        let mut acc = 0.0;
        for k in 1..=20_000 {
            let kp = k as f64 * p;
            acc += (kp - x).powf(-1.0 - 2.0 * s) + (kp + x).powf(-1.0 - 2.0 * s);
        }
        // remaining tail approximated by its integral
        let kmax = 20_000.5 * p;
        acc + 2.0 * kmax.powf(-2.0 * s) / (2.0 * s * p)
    };
    let images = tanh_sinh(|x| norm * (-0.5 * x * x).exp() * image_kernel(x), -l, l, 1e-12)
        .unwrap()
        .value;
    local + images
}
