//! Separable n-dimensional complex FFT on a cube of side `m`, built from
//! one-dimensional rustfft plans.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct FftNd {
    d: usize,
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("d", &self.d).field("m", &self.m).finish()
    }
}

impl FftNd {
    pub fn new(d: usize, m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            d,
            m,
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
        }
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Unnormalized inverse transform in place (no `1/m^d`).
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len());
        for axis in 0..self.d {
            self.transform_axis(data, axis, fft);
        }
    }

    fn transform_axis(&self, data: &mut [Complex64], axis: usize, fft: &Arc<dyn Fft<f64>>) {
        let m = self.m;
        let inner = m.pow((self.d - 1 - axis) as u32);
        if inner == 1 {
            let lines_per_task = (4096 / m).max(1);
            data.par_chunks_mut(m * lines_per_task).for_each(|c| fft.process(c));
            return;
        }
        data.par_chunks_mut(m * inner)
            .for_each(|b| strided_lines(b, m, inner, fft));
    }
}

/// Transform every column of an `m x inner` row-major block.
fn strided_lines(block: &mut [Complex64], m: usize, inner: usize, fft: &Arc<dyn Fft<f64>>) {
    let mut buf = vec![Complex64::default(); m * inner];
    for t in 0..m {
        for j in 0..inner {
            buf[j * m + t] = block[t * inner + j];
        }
    }
    fft.process(&mut buf);
    for t in 0..m {
        for j in 0..inner {
            block[t * inner + j] = buf[j * m + t];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(data: &[Complex64], d: usize, m: usize) -> Vec<Complex64> {
        let len = m.pow(d as u32);
        let idx = |mut i: usize| {
            let mut out = vec![0usize; d];
            for k in (0..d).rev() {
                out[k] = i % m;
                i /= m;
            }
            out
        };
        (0..len)
            .map(|kf| {
                let kk = idx(kf);
                let mut acc = Complex64::default();
                for (xf, &x) in data.iter().enumerate() {
                    let xx = idx(xf);
                    let phase: usize = kk.iter().zip(&xx).map(|(a, b)| a * b).sum();
                    let ang = -2.0 * std::f64::consts::PI * (phase % m) as f64 / m as f64;
                    acc += x * Complex64::new(ang.cos(), ang.sin());
                }
                acc
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_in_each_dimension() {
        for (d, m) in [(1, 16), (2, 8), (3, 6)] {
            let plan = FftNd::new(d, m);
            let data: Vec<Complex64> = (0..plan.len())
                .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
                .collect();
            let mut fast = data.clone();
            plan.forward(&mut fast);
            let slow = naive_dft(&data, d, m);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-10, "d = {d}");
            }
            plan.inverse(&mut fast);
            let scale = plan.len() as f64;
            for (a, b) in fast.iter().zip(&data) {
                assert!((a / scale - b).norm() < 1e-13);
            }
        }
    }
}
