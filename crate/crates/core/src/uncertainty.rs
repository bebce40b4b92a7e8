//! Data-free estimator covariance.
//!
//! Everything here depends only on the parameters and the sampling window.
//! The periodogram covariance follows from Isserlis' theorem,
//! `cov{I(k), I(k')} = |A(k,k')|² + |A(k,−k')|²` with
//! `A(k,k') = cov{H(k), H*(k')}`. A row of A at fixed k' is the window
//! applied to C̃ times the modulated window, which costs two FFTs on a
//! torus twice the grid size. Nothing of size n×n is stored unless a full
//! matrix is asked for.
//!
//! With the weighted mean removed, H(k) becomes H(k) − W(k)H(0)/K and
//! `A_d(k,k') = A(k,k') − W*(k')A(k,0)/K − W(k)A(0,k')/K + W(k)W*(k')A(0,0)/K²`,
//! which needs only the k' = 0 row besides the usual one. The periodogram
//! covariance functions describe the periodogram without demeaning; the
//! score covariance follows the likelihood configuration.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3};
use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::{GridSpec, SamplingWindow, SpectralField};
use crate::likelihood::{LikelihoodConfig, Whittle};
use crate::matern::{covariance_unchecked, MaternParams};

/// Largest n = ny·nx for which a full n×n periodogram covariance is built.
pub const DEFAULT_FULL_CAP: usize = 4096;
/// Fisher condition numbers above this are reported as a warning.
pub const FISHER_CONDITION_WARN: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    Full,
    Diagonal,
}

/// Covariance and pseudo-covariance magnitudes of the periodogram.
///
/// In `Full` mode both arrays are n×n with wavenumbers flattened row-major
/// (index i·nx + j); entry (k, k') holds |A(k,k')|² and |A(k,−k')|². In
/// `Diagonal` mode both are ny×nx and hold the k = k' values.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodogramCovariance {
    pub mode: CovarianceMode,
    pub grid: GridSpec,
    pub covariance: Array2<f64>,
    pub pseudo_covariance: Array2<f64>,
}

impl PeriodogramCovariance {
    /// cov{I(k), I(k')}.
    pub fn total(&self) -> Array2<f64> {
        &self.covariance + &self.pseudo_covariance
    }
}

/// Rows of A(k, k') for one window and parameter set.
pub struct PeriodogramOperator {
    grid: GridSpec,
    weights: Array2<f64>,
    torus: (usize, usize),
    w_hat: Array2<Complex64>,
    c_hat: Array2<f64>,
    fft_torus: Fft2,
    fft_grid: Fft2,
    scale: f64,
    demean: Option<DemeanRows>,
}

/// W(k), A(k, 0) and K for the demeaned operator.
struct DemeanRows {
    w_hat: Array2<Complex64>,
    row0: Array2<Complex64>,
    k_sum: f64,
}

impl PeriodogramOperator {
    /// Operator for the periodogram without demeaning.
    pub fn new(params: &MaternParams, window: &SamplingWindow) -> Result<Self> {
        Self::with_demeaning(params, window, false)
    }

    /// Operator for the periodogram with or without the weighted mean removed.
    pub fn with_demeaning(params: &MaternParams, window: &SamplingWindow, demean: bool) -> Result<Self> {
        params.validate()?;
        let g = window.grid;
        let (ny, nx) = g.shape();
        let (my, mx) = (2 * ny, 2 * nx);
        let fft_torus = Fft2::new(my, mx);

        let mut w = Array2::<Complex64>::zeros((my, mx));
        for ((i, j), v) in window.weights.indexed_iter() {
            w[[i, j]] = Complex64::new(*v, 0.0);
        }
        fft_torus.forward(&mut w);

        // lag kernel on the torus; lags ±ny (±nx) never occur
        let quad = Array2::from_shape_fn((ny, nx), |(a, b)| {
            let r = ((a as f64 * g.dy).powi(2) + (b as f64 * g.dx).powi(2)).sqrt();
            covariance_unchecked(params, r)
        });
        let mut c = Array2::from_shape_fn((my, mx), |(i, j)| {
            let a = if i < ny { i } else { my - i };
            let b = if j < nx { j } else { mx - j };
            if a < ny && b < nx {
                Complex64::new(quad[[a, b]], 0.0)
            } else {
                Complex64::default()
            }
        });
        fft_torus.forward(&mut c);
        if !c.iter().all(|z| z.re.is_finite()) {
            return Err(Error::Numerical("lag covariance transform is not finite".into()));
        }

        let mut op = PeriodogramOperator {
            grid: g,
            weights: window.weights.clone(),
            torus: (my, mx),
            w_hat: w,
            c_hat: c.mapv(|z| z.re),
            fft_torus,
            fft_grid: Fft2::new(ny, nx),
            scale: g.dx * g.dy / (g.len() as f64 * 4.0 * PI * PI),
            demean: None,
        };
        if demean {
            let mut w_hat = window.weights.mapv(|v| Complex64::new(v, 0.0));
            op.fft_grid.forward(&mut w_hat);
            let row0 = op.raw_row(0, 0);
            op.demean = Some(DemeanRows { w_hat, row0, k_sum: window.k_sum });
        }
        Ok(op)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// A(k, k') over all k, for k' at DFT index (p, q).
    pub fn row(&self, p: usize, q: usize) -> Array2<Complex64> {
        let mut u = self.raw_row(p, q);
        if let Some(d) = &self.demean {
            let k = d.k_sum;
            let wq = d.w_hat[[p, q]].conj();
            let a0q = u[[0, 0]];
            let a00 = d.row0[[0, 0]];
            for ((idx, z), r0) in u.indexed_iter_mut().zip(d.row0.iter()) {
                let wk = d.w_hat[idx];
                *z -= wq * r0 / k + wk * a0q / k - wk * wq * a00 / (k * k);
            }
        }
        u
    }

    fn raw_row(&self, p: usize, q: usize) -> Array2<Complex64> {
        let (my, mx) = self.torus;
        let (ny, nx) = self.grid.shape();
        let mut v = Array2::from_shape_fn((my, mx), |(a, b)| {
            let sa = (a + my - (2 * p) % my) % my;
            let sb = (b + mx - (2 * q) % mx) % mx;
            self.w_hat[[sa, sb]] * self.c_hat[[a, b]]
        });
        self.fft_torus.inverse(&mut v);
        let norm = self.scale / (my * mx) as f64;
        let mut u = Array2::from_shape_fn((ny, nx), |(i, j)| v[[i, j]] * (self.weights[[i, j]] * norm));
        self.fft_grid.forward(&mut u);
        u
    }
}

fn mirror(i: usize, n: usize) -> usize {
    (n - i) % n
}

/// Periodogram covariance and pseudo-covariance.
pub fn periodogram_covariance(
    params: &MaternParams,
    window: &SamplingWindow,
    mode: CovarianceMode,
) -> Result<PeriodogramCovariance> {
    periodogram_covariance_capped(params, window, mode, DEFAULT_FULL_CAP)
}

pub fn periodogram_covariance_capped(
    params: &MaternParams,
    window: &SamplingWindow,
    mode: CovarianceMode,
    cap: usize,
) -> Result<PeriodogramCovariance> {
    let g = window.grid;
    let (ny, nx) = g.shape();
    match mode {
        CovarianceMode::Full => {
            let n = g.len();
            if n > cap {
                return Err(Error::Config(format!(
                    "full periodogram covariance for {n} wavenumbers exceeds the cap of {cap}; \
                     use the diagonal mode or the streaming score covariance"
                )));
            }
            let op = PeriodogramOperator::new(params, window)?;
            let cols: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|c| op.row(c / nx, c % nx).iter().map(|z| z.norm_sqr()).collect())
                .collect();
            let cov = Array2::from_shape_fn((n, n), |(r, c)| cols[c][r]);
            let pseudo = Array2::from_shape_fn((n, n), |(r, c)| {
                let (p, q) = (c / nx, c % nx);
                cov[[r, mirror(p, ny) * nx + mirror(q, nx)]]
            });
            Ok(PeriodogramCovariance {
                mode,
                grid: g,
                covariance: cov,
                pseudo_covariance: pseudo,
            })
        }
        CovarianceMode::Diagonal => {
            let s = crate::likelihood::blurred_density(params, window)?;
            let pseudo = pseudo_diagonal(params, window)?;
            Ok(PeriodogramCovariance {
                mode,
                grid: g,
                covariance: s.values.mapv(|v| v * v),
                pseudo_covariance: pseudo,
            })
        }
    }
}

/// |A(k, −k)|² from the pair sum over x + x', folded onto the grid.
fn pseudo_diagonal(params: &MaternParams, window: &SamplingWindow) -> Result<Array2<f64>> {
    let g = window.grid;
    let (ny, nx) = g.shape();
    let quad = Array2::from_shape_fn((ny, nx), |(a, b)| {
        let r = ((a as f64 * g.dy).powi(2) + (b as f64 * g.dx).powi(2)).sqrt();
        covariance_unchecked(params, r)
    });
    let pts: Vec<(usize, usize, f64)> = window
        .weights
        .indexed_iter()
        .filter(|(_, w)| **w != 0.0)
        .map(|((i, j), w)| (i, j, *w))
        .collect();
    let rows: Vec<Array2<f64>> = pts
        .par_iter()
        .map(|&(i, j, w)| {
            let mut acc = Array2::<f64>::zeros((ny, nx));
            for &(i2, j2, w2) in &pts {
                let c = quad[[i.abs_diff(i2), j.abs_diff(j2)]];
                acc[[(i + i2) % ny, (j + j2) % nx]] += w * w2 * c;
            }
            acc
        })
        .collect();
    let mut f = Array2::<Complex64>::zeros((ny, nx));
    for r in &rows {
        f.zip_mut_with(r, |z, v| z.re += v);
    }
    Fft2::new(ny, nx).forward(&mut f);
    let scale = g.dx * g.dy / (g.len() as f64 * 4.0 * PI * PI);
    Ok(f.mapv(|z| (z * scale).norm_sqr()))
}

/// cov{γ̄_θ, γ̄_θ'} with the default likelihood configuration.
pub fn score_covariance(params: &MaternParams, window: &SamplingWindow) -> Result<Matrix3<f64>> {
    score_covariance_with(params, &Whittle::new(window, LikelihoodConfig::default()))
}

/// cov{γ̄} = (1/K²) Σ_k Σ_k' a_θ(k) a_θ'(k') cov{I(k), I(k')}, a = m̄/S̄.
///
/// With ã(k) = a(k) + a(−k) this equals
/// (1/2K²) Σ_{k,k'} ã_θ(k) ã_θ'(k') |A(k,k')|², and rows k' and −k'
/// contribute equally, so only half of the rows are formed.
pub fn score_covariance_with(params: &MaternParams, whittle: &Whittle) -> Result<Matrix3<f64>> {
    let window = &whittle.window;
    let (ny, nx) = window.grid.shape();
    let (s, m) = whittle.blurred_with_gradient(params)?;
    let inc = whittle.included();
    let a: Vec<Array2<f64>> = (0..3)
        .map(|t| {
            Array2::from_shape_fn((ny, nx), |(i, j)| {
                if inc[[i, j]] {
                    m.components[t].values[[i, j]] / s.values[[i, j]]
                } else {
                    0.0
                }
            })
        })
        .collect();
    let at: Vec<Array2<f64>> = a
        .iter()
        .map(|x| Array2::from_shape_fn((ny, nx), |(i, j)| x[[i, j]] + x[[mirror(i, ny), mirror(j, nx)]]))
        .collect();

    let mut half = Vec::new();
    for p in 0..ny {
        for q in 0..nx {
            let (mp, mq) = (mirror(p, ny), mirror(q, nx));
            if (p, q) <= (mp, mq) && (0..3).any(|t| at[t][[p, q]] != 0.0) {
                half.push((p, q, if (p, q) == (mp, mq) { 1.0 } else { 2.0 }));
            }
        }
    }

    let op = PeriodogramOperator::with_demeaning(params, window, whittle.config.demean)?;
    let parts: Vec<[[f64; 3]; 3]> = half
        .par_iter()
        .map(|&(p, q, weight)| {
            let row = op.row(p, q);
            let mut sums = [0.0; 3];
            for (idx, z) in row.iter().enumerate() {
                let e = z.norm_sqr();
                let (i, j) = (idx / nx, idx % nx);
                for t in 0..3 {
                    sums[t] += at[t][[i, j]] * e;
                }
            }
            let mut out = [[0.0; 3]; 3];
            for t in 0..3 {
                for u in 0..3 {
                    out[t][u] = weight * sums[t] * at[u][[p, q]];
                }
            }
            out
        })
        .collect();

    let mut c = Matrix3::zeros();
    for part in &parts {
        for t in 0..3 {
            for u in 0..3 {
                c[(t, u)] += part[t][u];
            }
        }
    }
    let k = whittle.k_sum();
    c /= 2.0 * k * k;
    Ok(0.5 * (c + c.transpose()))
}

/// Estimator covariance with its correlation matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCovariance {
    #[serde(with = "mat3")]
    pub matrix: Matrix3<f64>,
    #[serde(with = "mat3")]
    pub correlations: Matrix3<f64>,
    pub evaluated_at: MaternParams,
}

impl ParamCovariance {
    pub fn standard_deviations(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.matrix[(i, i)].max(0.0).sqrt())
    }
}

/// Correlations from a covariance; unit diagonal, zero where a variance vanishes.
pub fn correlations(c: &Matrix3<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| {
        if i == j {
            1.0
        } else {
            let d = (c[(i, i)] * c[(j, j)]).sqrt();
            if d > 0.0 && d.is_finite() {
                (c[(i, j)] / d).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        }
    })
}

/// Inverse of the active block, embedded back in 3×3 with zeros elsewhere.
pub fn inverse_on_active(m: &Matrix3<f64>, active: &[usize]) -> Result<Matrix3<f64>> {
    if active.is_empty() {
        return Ok(Matrix3::zeros());
    }
    let n = active.len();
    let sub = DMatrix::from_fn(n, n, |i, j| m[(active[i], active[j])]);
    let ev = sub.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e.abs())));
    if !(lo > 0.0) || !(hi.is_finite()) {
        return Err(Error::Singular(format!(
            "Fisher information is not positive definite (eigenvalues {lo:.3e} to {hi:.3e})"
        )));
    }
    if hi / lo > FISHER_CONDITION_WARN {
        log::warn!("Fisher information is ill conditioned (condition number {:.3e})", hi / lo);
    }
    let inv = sub
        .cholesky()
        .ok_or_else(|| Error::Singular("Cholesky factorization of the Fisher information failed".into()))?
        .inverse();
    let mut out = Matrix3::zeros();
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            out[(i, j)] = inv[(a, b)];
        }
    }
    Ok(0.5 * (out + out.transpose()))
}

/// F̄⁻¹ cov{γ̄} F̄⁻¹ on the active parameters.
pub fn sandwich(fisher: &Matrix3<f64>, score_cov: &Matrix3<f64>, active: &[usize]) -> Result<Matrix3<f64>> {
    let inv = inverse_on_active(fisher, active)?;
    let c = inv * score_cov * inv;
    Ok(0.5 * (c + c.transpose()))
}

/// Predicted covariance of θ̂ for data seen through `window`.
pub fn param_covariance(params: &MaternParams, window: &SamplingWindow) -> Result<ParamCovariance> {
    param_covariance_with(params, &Whittle::new(window, LikelihoodConfig::default()))
}

pub fn param_covariance_with(params: &MaternParams, whittle: &Whittle) -> Result<ParamCovariance> {
    let f = whittle.fisher(params)?;
    let g = score_covariance_with(params, whittle)?;
    let matrix = sandwich(&f, &g, &params.active_indices())?;
    Ok(ParamCovariance {
        correlations: correlations(&matrix),
        matrix,
        evaluated_at: *params,
    })
}

/// Elementwise a/b; undefined entries (b negligible) are NaN.
pub fn efficiency_ratio(a: &Matrix3<f64>, b: &Matrix3<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| {
        let scale = (b[(i, i)] * b[(j, j)]).abs().sqrt();
        if b[(i, j)].abs() <= 1e-12 * scale || scale == 0.0 {
            f64::NAN
        } else {
            a[(i, j)] / b[(i, j)]
        }
    })
}

/// Inverse-Fisher proxy, sandwich covariance and their ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    /// (2/K) F̄⁻¹, the Cramér–Rao style proxy on the scale of cov(θ̂).
    #[serde(with = "mat3")]
    pub inverse_fisher: Matrix3<f64>,
    #[serde(with = "mat3")]
    pub covariance: Matrix3<f64>,
    #[serde(with = "mat3")]
    pub ratio: Matrix3<f64>,
}

pub fn efficiency(params: &MaternParams, window: &SamplingWindow) -> Result<Efficiency> {
    efficiency_with(params, &Whittle::new(window, LikelihoodConfig::default()))
}

pub fn efficiency_with(params: &MaternParams, whittle: &Whittle) -> Result<Efficiency> {
    let active = params.active_indices();
    let f = whittle.fisher(params)?;
    let inverse_fisher = inverse_on_active(&f, &active)? * (2.0 / whittle.k_sum());
    let covariance = param_covariance_with(params, whittle)?.matrix;
    Ok(Efficiency {
        ratio: efficiency_ratio(&inverse_fisher, &covariance),
        inverse_fisher,
        covariance,
    })
}

/// Sample moments of an ensemble of estimates against the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub count: usize,
    pub mean: [f64; 3],
    pub bias: [f64; 3],
    #[serde(with = "mat3")]
    pub covariance: Matrix3<f64>,
    #[serde(with = "mat3")]
    pub correlations: Matrix3<f64>,
    pub rmse: [f64; 3],
}

impl EnsembleStats {
    pub fn standard_deviations(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.covariance[(i, i)].sqrt())
    }

    pub fn standard_errors(&self) -> [f64; 3] {
        self.standard_deviations().map(|s| s / (self.count as f64).sqrt())
    }
}

/// Mean, bias, unbiased covariance and rmse = √(var + bias²).
pub fn ensemble_stats(estimates: &[[f64; 3]], truth: &MaternParams) -> Result<EnsembleStats> {
    let n = estimates.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} estimates; at least 2 are needed")));
    }
    let t = truth.to_array();
    let mut mean = [0.0; 3];
    for e in estimates {
        for i in 0..3 {
            mean[i] += e[i] / n as f64;
        }
    }
    let mut c = Matrix3::zeros();
    for e in estimates {
        for i in 0..3 {
            for j in 0..3 {
                c[(i, j)] += (e[i] - mean[i]) * (e[j] - mean[j]);
            }
        }
    }
    c /= (n - 1) as f64;
    let bias = [0, 1, 2].map(|i| mean[i] - t[i]);
    let rmse = [0, 1, 2].map(|i| (c[(i, i)] + bias[i] * bias[i]).sqrt());
    Ok(EnsembleStats {
        count: n,
        mean,
        bias,
        correlations: correlations(&c),
        covariance: c,
        rmse,
    })
}

/// 3×3 matrices as nested row arrays in serialized form.
pub mod mat3 {
    use nalgebra::Matrix3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[Option<f64>; 3]; 3] =
            [0, 1, 2].map(|i| [0, 1, 2].map(|j| Some(m[(i, j)]).filter(|v| v.is_finite())));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix3<f64>, D::Error> {
        let rows = <[[Option<f64>; 3]; 3]>::deserialize(d)?;
        Ok(Matrix3::from_fn(|i, j| rows[i][j].unwrap_or(f64::NAN)))
    }
}

/// The spectral field of diagonal periodogram variance over S̄².
pub fn variance_ratio(params: &MaternParams, window: &SamplingWindow) -> Result<SpectralField> {
    let pc = periodogram_covariance(params, window, CovarianceMode::Diagonal)?;
    let s = crate::likelihood::blurred_density(params, window)?;
    let total = pc.total();
    Ok(SpectralField {
        grid: window.grid,
        values: Array2::from_shape_fn(total.dim(), |(i, j)| total[[i, j]] / s.values[[i, j]].powi(2)),
    })
}
