use std::f64::consts::PI;

use matern_whittle::grid::{make_window, GridSpec, SamplingWindow, WindowPattern};
use matern_whittle::likelihood::{blurred_density, fisher, periodogram_with, LikelihoodConfig, Whittle};
use matern_whittle::matern::{covariance, MaternParams};
use matern_whittle::simulate::{CirculantEmbedding, SimulationOptions};
use matern_whittle::uncertainty::{
    efficiency, efficiency_ratio, inverse_on_active, param_covariance, periodogram_covariance, score_covariance,
    score_covariance_with,
    CovarianceMode,
};
use nalgebra::Matrix3;
use ndarray::Array2;
use rustfft::num_complex::Complex64;

fn deletion(ny: usize, nx: usize, fraction: f64, seed: u64) -> SamplingWindow {
    make_window(
        GridSpec::new(ny, nx, 1.0, 1.0).unwrap(),
        &WindowPattern::RandomDeletion { fraction_observed: fraction, seed },
    )
    .unwrap()
}

/// A(k, k') = cov{H(k), H*(k')} by the direct pair sum, n×n row-major.
fn brute_a(p: &MaternParams, w: &SamplingWindow) -> Array2<Complex64> {
    brute_a_with(p, w, false)
}

/// As `brute_a`, with H(k) formed after removing the weighted mean when
/// `demean` is set: the sample weights become w(x)(e^{−ik·x} − W(k)/K).
fn brute_a_with(p: &MaternParams, w: &SamplingWindow, demean: bool) -> Array2<Complex64> {
    let g = w.grid;
    let (kys, kxs) = g.wavenumbers();
    let n = g.len();
    let c2 = g.dx * g.dy / (n as f64 * 4.0 * PI * PI);
    let pts: Vec<(f64, f64, f64)> = w
        .weights
        .indexed_iter()
        .map(|((i, j), v)| (i as f64 * g.dy, j as f64 * g.dx, *v))
        .collect();
    // a[k][x]: weight of sample x in H(k)
    let a: Vec<Vec<Complex64>> = (0..n)
        .map(|r| {
            let (ky, kx) = (kys[r / g.nx], kxs[r % g.nx]);
            let e: Vec<Complex64> =
                pts.iter().map(|q| q.2 * Complex64::from_polar(1.0, -(ky * q.0 + kx * q.1))).collect();
            let wk: Complex64 = e.iter().sum();
            if demean {
                e.iter().zip(&pts).map(|(v, q)| v - q.2 * wk / w.k_sum).collect()
            } else {
                e
            }
        })
        .collect();
    let cov = Array2::from_shape_fn((n, n), |(x, y)| {
        let (u, v) = (pts[x], pts[y]);
        covariance(p, ((u.0 - v.0).powi(2) + (u.1 - v.1).powi(2)).sqrt()).unwrap()
    });
    Array2::from_shape_fn((n, n), |(r, c)| {
        let mut acc = Complex64::default();
        for x in 0..n {
            for y in 0..n {
                acc += a[r][x] * a[c][y].conj() * cov[[x, y]];
            }
        }
        acc * c2
    })
}

fn mirror_index(idx: usize, g: &GridSpec) -> usize {
    let (i, j) = (idx / g.nx, idx % g.nx);
    ((g.ny - i) % g.ny) * g.nx + (g.nx - j) % g.nx
}

#[test]
fn full_covariance_matches_pair_sum() {
    let p = MaternParams::new(1.5, 0.9, 1.7).unwrap();
    for w in [deletion(4, 4, 0.75, 1), deletion(5, 4, 0.7, 2), SamplingWindow::full(GridSpec::unit(4).unwrap()).unwrap()]
    {
        let pc = periodogram_covariance(&p, &w, CovarianceMode::Full).unwrap();
        let a = brute_a(&p, &w);
        let n = w.grid.len();
        let scale = a.iter().fold(0.0f64, |m, z| m.max(z.norm_sqr()));
        for r in 0..n {
            for c in 0..n {
                let cov = a[[r, c]].norm_sqr();
                let pseudo = a[[r, mirror_index(c, &w.grid)]].norm_sqr();
                assert!((pc.covariance[[r, c]] - cov).abs() < 1e-12 * scale);
                assert!((pc.pseudo_covariance[[r, c]] - pseudo).abs() < 1e-12 * scale);
            }
        }
    }
}

#[test]
fn diagonal_mode_matches_full_diagonal() {
    let p = MaternParams::new(2.0, 1.4, 2.5).unwrap();
    let w = deletion(9, 7, 0.6, 3);
    let full = periodogram_covariance(&p, &w, CovarianceMode::Full).unwrap();
    let diag = periodogram_covariance(&p, &w, CovarianceMode::Diagonal).unwrap();
    let scale = full.covariance.iter().fold(0.0f64, |m, v| m.max(*v));
    for ((i, j), v) in diag.total().indexed_iter() {
        let k = i * 7 + j;
        let want = full.covariance[[k, k]] + full.pseudo_covariance[[k, k]];
        assert!((v - want).abs() < 1e-11 * scale, "({i},{j}) {v} vs {want}");
    }
}

#[test]
fn full_covariance_matches_simulation() {
    let p = MaternParams::new(1.0, 1.0, 1.5).unwrap();
    let w = SamplingWindow::full(GridSpec::unit(4).unwrap()).unwrap();
    let n = 16;
    let pc = periodogram_covariance(&p, &w, CovarianceMode::Full).unwrap().total();
    let emb = CirculantEmbedding::new(&p, &w.grid, SimulationOptions::default()).unwrap();
    let draws = 20_000;
    let mut samples = Vec::with_capacity(draws);
    for seed in 0..draws as u64 / 2 {
        let (a, b) = emb.sample_pair(seed);
        for f in [a, b] {
            samples.push(periodogram_with(&f, &w, false).unwrap().values.iter().copied().collect::<Vec<f64>>());
        }
    }
    let mean: Vec<f64> = (0..n).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / draws as f64).collect();
    for r in 0..n {
        for c in 0..n {
            let prods: Vec<f64> = samples.iter().map(|s| (s[r] - mean[r]) * (s[c] - mean[c])).collect();
            let m = prods.iter().sum::<f64>() / (draws - 1) as f64;
            let sd = (prods.iter().map(|x| (x - m).powi(2)).sum::<f64>() / draws as f64).sqrt();
            let se = sd / (draws as f64).sqrt();
            assert!((m - pc[[r, c]]).abs() < 5.0 * se + 1e-6 * pc[[r, r]], "({r},{c}) {m} vs {}", pc[[r, c]]);
        }
    }
}

/// (1/K²) Σ_k Σ_k' a_θ(k) a_θ'(k') cov{I(k), I(k')} by the quadruple loop.
fn brute_score_covariance(p: &MaternParams, w: &SamplingWindow, config: LikelihoodConfig) -> Matrix3<f64> {
    let wh = Whittle::new(w, config);
    let (s, m) = wh.blurred_with_gradient(p).unwrap();
    let a = brute_a_with(p, w, config.demean);
    let g = w.grid;
    let n = g.len();
    let coef = |t: usize, k: usize| {
        if k == 0 {
            0.0
        } else {
            let (i, j) = (k / g.nx, k % g.nx);
            m.components[t].values[[i, j]] / s.values[[i, j]]
        }
    };
    let mut out = Matrix3::zeros();
    for k in 0..n {
        for kp in 0..n {
            let cov = a[[k, kp]].norm_sqr() + a[[k, mirror_index(kp, &g)]].norm_sqr();
            for t in 0..3 {
                for u in 0..3 {
                    out[(t, u)] += coef(t, k) * coef(u, kp) * cov;
                }
            }
        }
    }
    out / (w.k_sum * w.k_sum)
}

#[test]
fn streaming_score_covariance_matches_quadruple_loop() {
    let cases = [
        (MaternParams::new(1.0, 0.8, 1.5).unwrap(), deletion(4, 4, 0.75, 5)),
        (MaternParams::new(2.5, 1.6, 2.0).unwrap(), deletion(5, 5, 0.68, 6)),
        (MaternParams::new(0.7, 0.5, 1.0).unwrap(), SamplingWindow::full(GridSpec::new(5, 4, 0.5, 1.0).unwrap()).unwrap()),
    ];
    for (p, w) in &cases {
        for demean in [false, true] {
            let config = LikelihoodConfig { exclude_zero: true, demean };
            let fast = score_covariance_with(p, &Whittle::new(w, config)).unwrap();
            let slow = brute_score_covariance(p, w, config);
            for (x, y) in fast.iter().zip(slow.iter()) {
                assert!((x - y).abs() < 1e-10 * slow.norm(), "demean {demean}: {fast} vs {slow}");
            }
        }
    }
}

#[test]
fn score_covariance_matches_simulated_scores() {
    for demean in [false, true] {
        simulated_scores(demean);
    }
}

fn simulated_scores(demean: bool) {
    let p = MaternParams::new(1.0, 1.2, 2.0).unwrap();
    let w = deletion(16, 16, 0.667, 7);
    let wh = Whittle::new(&w, LikelihoodConfig { exclude_zero: true, demean });
    let emb = CirculantEmbedding::new(&p, &w.grid, SimulationOptions::default()).unwrap();
    let mut scores = Vec::new();
    for seed in 0..300u64 {
        let (a, b) = emb.sample_pair(1000 + seed);
        for f in [a, b] {
            scores.push(wh.score(&p, &wh.periodogram(&f).unwrap()).unwrap());
        }
    }
    let n = scores.len() as f64;
    let pred = score_covariance_with(&p, &wh).unwrap();
    for t in 0..3 {
        for u in 0..3 {
            let prods: Vec<f64> = scores.iter().map(|s| s[t] * s[u]).collect();
            let m = prods.iter().sum::<f64>() / n;
            let se = (prods.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt() / n.sqrt();
            assert!((m - pred[(t, u)]).abs() < 3.0 * se, "({t},{u}) {m} vs {} (se {se})", pred[(t, u)]);
        }
    }
}

#[test]
fn variance_tracks_squared_density_at_interior_wavenumbers() {
    let p = MaternParams::new(1.0, 1.0, 2.0).unwrap();
    let n = 128;
    let w = deletion(n, n, 0.667, 8);
    let d = periodogram_covariance(&p, &w, CovarianceMode::Diagonal).unwrap().total();
    let s = blurred_density(&p, &w).unwrap().values;
    for ((i, j), v) in d.indexed_iter() {
        let (a, b) = (i.min(n - i), j.min(n - j));
        if a >= 1 && b >= 1 && a < n / 2 && b < n / 2 {
            let r = v / s[[i, j]].powi(2);
            assert!((r - 1.0).abs() < 0.1, "({i},{j}) {r}");
        }
    }
}

#[test]
fn reflection_symmetry_depends_on_window() {
    let p = MaternParams::new(1.0, 1.0, 1.5).unwrap();
    let g = GridSpec::unit(6).unwrap();
    let reflect = |k: usize| (k / 6) * 6 + (6 - k % 6) % 6;
    let asym = |w: &SamplingWindow| {
        let c = periodogram_covariance(&p, w, CovarianceMode::Full).unwrap().covariance;
        let mut worst = 0.0f64;
        for r in 0..36 {
            for q in 0..36 {
                worst = worst.max((c[[r, q]] - c[[reflect(r), reflect(q)]]).abs() / c[[r, r]]);
            }
        }
        worst
    };
    assert!(asym(&SamplingWindow::full(g).unwrap()) < 1e-12);
    assert!(asym(&deletion(6, 6, 0.667, 9)) > 1e-3);
}

#[test]
fn variance_scale_leaves_shape_block_correlation() {
    let w = deletion(10, 10, 0.7, 10);
    let a = score_covariance(&MaternParams::new(1.0, 1.1, 2.0).unwrap(), &w).unwrap();
    let b = score_covariance(&MaternParams::new(5.0, 1.1, 2.0).unwrap(), &w).unwrap();
    let corr = |m: &Matrix3<f64>| m[(1, 2)] / (m[(1, 1)] * m[(2, 2)]).sqrt();
    assert!((corr(&a) - corr(&b)).abs() < 1e-10);
    assert!((a[(1, 1)] - b[(1, 1)]).abs() < 1e-10 * a[(1, 1)]);
}

#[test]
fn unit_window_score_covariance_is_twice_fisher_over_k() {
    let p = MaternParams::new(1.0, 0.5, 1.0).unwrap();
    let w = SamplingWindow::full(GridSpec::unit(128).unwrap()).unwrap();
    let c = score_covariance(&p, &w).unwrap();
    let f = fisher(&p, &w).unwrap() * (2.0 / w.k_sum);
    for i in 0..3 {
        let r = c[(i, i)] / f[(i, i)];
        assert!((r - 1.0).abs() < 0.1, "{i}: {r}");
    }
}

#[test]
fn sandwich_is_symmetric_with_valid_correlations() {
    let p = MaternParams::new(2.0, 1.3, 2.5).unwrap();
    let w = deletion(20, 18, 0.667, 11);
    let pc = param_covariance(&p, &w).unwrap();
    for i in 0..3 {
        assert!(pc.matrix[(i, i)] > 0.0);
        assert_eq!(pc.correlations[(i, i)], 1.0);
        for j in 0..3 {
            assert!((pc.matrix[(i, j)] - pc.matrix[(j, i)]).abs() <= 1e-12 * pc.matrix[(i, j)].abs());
            assert!(pc.correlations[(i, j)].abs() <= 1.0);
        }
    }
}

#[test]
fn nested_covariance_drops_fixed_parameter() {
    let p = MaternParams::new(2.0, 1.0, 2.5).unwrap().with_active([true, false, true]);
    let w = deletion(16, 16, 0.8, 12);
    let pc = param_covariance(&p, &w).unwrap();
    assert!(pc.matrix.row(1).iter().all(|&v| v == 0.0));
    assert!(pc.matrix[(0, 0)] > 0.0 && pc.matrix[(2, 2)] > 0.0);
}

#[test]
fn efficiency_of_unit_window() {
    let p = MaternParams::new(3.0, 0.75, 4.0).unwrap();
    let w = SamplingWindow::full(GridSpec::unit(64).unwrap()).unwrap();
    let e = efficiency(&p, &w).unwrap();
    let f = fisher(&p, &w).unwrap();
    let inv = inverse_on_active(&f, &[0, 1, 2]).unwrap() * (2.0 / w.k_sum);
    let cov = param_covariance(&p, &w).unwrap().matrix;
    let want = efficiency_ratio(&inv, &cov);
    for (x, y) in e.ratio.iter().zip(want.iter()) {
        assert!((x - y).abs() < 1e-10 * y.abs());
    }
    assert!(e.ratio[(0, 0)] < 1.0, "{}", e.ratio);
}
