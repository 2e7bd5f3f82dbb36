mod common;

use isoboltz_core::constants::ModelParams;
use isoboltz_core::grid::{Field, Grid};
use isoboltz_core::spectral::{power_convolve_direct, SingularCell, SpectralPlan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(grid: Grid, rng: &mut ChaCha8Rng) -> Field {
    let values = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Field::from_values(grid, values).unwrap()
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn fft_convolution_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(d, n, gamma, s) in &[(1, 16, -0.5, 0.2), (2, 16, -1.5, 0.6), (3, 12, -2.1, 0.85)] {
        let grid = Grid::new(d, n, 3.0).unwrap();
        let params = ModelParams::new(d, gamma, s).unwrap();
        for cell in [SingularCell::BallAverage, SingularCell::ZetaSecondOrder] {
            let mut plan = SpectralPlan::with_cell(grid, params, cell).unwrap();
            let all: Vec<usize> = (0..grid.len()).collect();
            let trials = if d == 3 { 4 } else { 20 };
            for _ in 0..trials {
                let g = random_field(grid, &mut rng);
                for mu in [gamma + 2.0 * s, gamma] {
                    let fast = plan.power_convolve(&g, mu).unwrap();
                    let slow = power_convolve_direct(&grid, &g, mu, &all, cell).unwrap();
                    let err = max_rel_diff(&fast.values, &slow);
                    assert!(err < 1e-11, "d = {d}, mu = {mu}, err = {err:e}");
                }
            }
        }
    }
}

#[test]
fn point_mass_reproduces_sampled_kernel() {
    let grid = Grid::new(2, 16, 4.0).unwrap();
    let params = ModelParams::new(2, -1.5, 0.6).unwrap();
    let mu = -0.3;
    for cell in [SingularCell::BallAverage, SingularCell::Zeta] {
        let mut plan = SpectralPlan::with_cell(grid, params, cell).unwrap();
        let mut g = Field::zeros(grid);
        g.values[grid.origin_index()] = 1.0 / grid.cell_volume();
        let out = plan.power_convolve(&g, mu).unwrap();
        for i in 0..grid.len() {
            if i == grid.origin_index() {
                continue;
            }
            let v = grid.coords(i);
            let r = (v[0] * v[0] + v[1] * v[1]).sqrt();
            let expected = r.powf(mu);
            assert!((out.values[i] - expected).abs() < 1e-12 * expected, "{cell:?} at {v:?}");
        }
    }
}

#[test]
fn direct_sum_edge_cases() {
    let grid = Grid::new(1, 8, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_field(grid, &mut rng);
    let origin = grid.origin_index();
    let one = power_convolve_direct(&grid, &g, -0.4, &[origin], SingularCell::default()).unwrap();
    let all: Vec<usize> = (0..grid.len()).collect();
    let full = power_convolve_direct(&grid, &g, -0.4, &all, SingularCell::default()).unwrap();
    assert_eq!(one[0], full[origin]);
    let zero = power_convolve_direct(&grid, &Field::zeros(grid), -0.4, &all, SingularCell::default()).unwrap();
    assert!(zero.iter().all(|&x| x == 0.0));
    let big = Grid::new(3, 256, 2.0).unwrap();
    let r = power_convolve_direct(&big, &Field::zeros(big), -1.0, &[0], SingularCell::default());
    assert!(matches!(r, Err(isoboltz_core::Error::Cost(_))));
}

fn mirror(grid: &Grid, i: usize) -> Option<usize> {
    let m = grid.multi_index(i);
    let mut out = [0usize; 3];
    for k in 0..grid.d {
        if m[k] == 0 {
            return None;
        }
        out[k] = grid.n - m[k];
    }
    Some(grid.flat_index(&out))
}

#[test]
fn even_input_gives_even_output() {
    let grid = Grid::new(2, 32, 6.0).unwrap();
    let params = ModelParams::new(2, -1.5, 0.6).unwrap();
    let mut plan = SpectralPlan::new(grid, params).unwrap();
    let g = Field::from_fn(grid, |v| (-(v[0] * v[0] + 2.0 * v[1] * v[1])).exp() * (1.0 + v[0] * v[0]));
    let outs = [
        plan.power_convolve(&g, params.gamma + 2.0 * params.s).unwrap(),
        plan.power_convolve(&g, params.gamma).unwrap(),
        plan.frac_integral(&g).unwrap(),
    ];
    for out in &outs {
        let scale = out.linf_norm();
        for i in 0..grid.len() {
            if let Some(j) = mirror(&grid, i) {
                assert!((out.values[i] - out.values[j]).abs() < 1e-12 * scale);
            }
        }
    }
}

#[test]
fn convolution_is_linear() {
    let grid = Grid::new(2, 16, 3.0).unwrap();
    let params = ModelParams::new(2, -1.2, 0.4).unwrap();
    let mut plan = SpectralPlan::new(grid, params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (f, g) = (random_field(grid, &mut rng), random_field(grid, &mut rng));
    let (a, b) = (0.7, -2.3);
    let comb = f.scaled(a).axpy(b, &g);
    for mu in [-0.4, -1.2] {
        let lhs = plan.power_convolve(&comb, mu).unwrap();
        let pf = plan.power_convolve(&f, mu).unwrap();
        let pg = plan.power_convolve(&g, mu).unwrap();
        let rhs = pf.scaled(a).axpy(b, &pg);
        assert!(max_rel_diff(&lhs.values, &rhs.values) < 1e-12);
    }
}

#[test]
fn frac_integral_matches_quadrature_oracle() {
    let (l, s) = (8.0, 0.5);
    let grid = Grid::new(1, 64, l).unwrap();
    let params = ModelParams::new(1, -0.5, s).unwrap();
    let plan = SpectralPlan::new(grid, params).unwrap();
    let g = Field::from_fn(grid, |v| (-0.5 * v[0] * v[0]).exp() / (2.0 * std::f64::consts::PI).sqrt());
    let got = plan.frac_integral(&g).unwrap().values[grid.origin_index()];
    let want = common::periodic_frac_oracle(l, s);
    assert!(((got - want) / want).abs() < 1e-6, "got {got}, want {want}");
}

#[test]
fn maximum_principle_at_strict_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let grid = Grid::new(2, 32, 6.0).unwrap();
    let plan = SpectralPlan::new(grid, ModelParams::new(2, -1.5, 0.6).unwrap()).unwrap();
    for _ in 0..10 {
        let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(0.2..1.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.8..1.5),
                )
            })
            .collect();
        let g = Field::from_fn(grid, |v| {
            bumps
                .iter()
                .map(|&(a, cx, cy, w)| a * (-((v[0] - cx).powi(2) + (v[1] - cy).powi(2)) / (2.0 * w * w)).exp())
                .sum()
        });
        let imax = (0..grid.len()).max_by(|&a, &b| g.values[a].total_cmp(&g.values[b])).unwrap();
        let out = plan.frac_integral(&g).unwrap();
        assert!(out.values[imax] <= 0.0, "L_s g at max = {}", out.values[imax]);
    }
}

#[test]
fn japanese_bracket_power_bound_has_stable_constant() {
    // one-sided: -L_s <v>^{-q} <= C <v>^{-q-2s} on the inner half-box
    let (q, s, l) = (2.0, 0.4, 16.0);
    let fitted = |n: usize| {
        let grid = Grid::new(1, n, l).unwrap();
        let plan = SpectralPlan::new(grid, ModelParams::new(1, -0.9, s).unwrap()).unwrap();
        let g = Field::from_fn(grid, |v| (1.0 + v[0] * v[0]).powf(-0.5 * q));
        let out = plan.frac_integral(&g).unwrap();
        (0..grid.len())
            .filter(|&i| grid.coords(i)[0].abs() <= 0.5 * l)
            .map(|i| {
                let v = grid.coords(i)[0];
                -out.values[i] * (1.0 + v * v).powf(0.5 * (q + 2.0 * s))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (c1, c2) = (fitted(128), fitted(256));
    assert!(c1 > 0.0 && c1.is_finite());
    assert!(((c1 - c2) / c2).abs() < 0.05, "{c1} vs {c2}");
}
