//! Spectral residuals X(k) = |H(k)|²/S̄(k) and the s²_X goodness-of-fit test.
//!
//! Under the model 2X is χ²₂ away from the zero and Nyquist wavenumbers.
//! Since X(k) = X(−k) for real data, statistics run over one half-plane of
//! wavenumbers so that each independent value counts once.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SpectralField};

/// Bins of the default 2X histogram.
pub const HISTOGRAM_BINS: usize = 50;
/// Upper histogram edge: the 0.999 quantile of χ²₂.
pub const HISTOGRAM_UPPER: f64 = 13.815_510_557_964_274;
/// Fewest residuals for which the test is run.
pub const MIN_TEST_SAMPLES: usize = 30;

/// Wavenumbers used by the residual statistics: one of each ±k pair,
/// with k = 0 and the Nyquist row and column left out.
pub fn test_mask(grid: &GridSpec) -> Array2<bool> {
    let (ny, nx) = grid.shape();
    let nyq = |i: usize, n: usize| n % 2 == 0 && i == n / 2;
    Array2::from_shape_fn((ny, nx), |(i, j)| {
        if (i, j) == (0, 0) || nyq(i, ny) || nyq(j, nx) {
            return false;
        }
        let m = ((ny - i) % ny, (nx - j) % nx);
        (i, j) < m
    })
}

/// X(k) on the test mask; NaN elsewhere.
pub fn residuals(pergram: &SpectralField, blurred: &SpectralField) -> Result<SpectralField> {
    if pergram.grid != blurred.grid || pergram.values.dim() != blurred.values.dim() {
        return Err(Error::Shape("periodogram and blurred density differ in grid".into()));
    }
    let mask = test_mask(&pergram.grid);
    let mut out = Array2::from_elem(pergram.values.dim(), f64::NAN);
    for ((idx, m), o) in mask.indexed_iter().zip(out.iter_mut()) {
        if *m {
            let s = blurred.values[idx];
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Domain(format!("blurred density {s} at {idx:?} is not positive")));
            }
            *o = pergram.values[idx] / s;
        }
    }
    Ok(SpectralField {
        grid: pergram.grid,
        values: out,
    })
}

fn used_values(residual: &SpectralField) -> Vec<f64> {
    residual.values.iter().copied().filter(|v| v.is_finite()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualTest {
    pub s2_x: f64,
    pub k_used: usize,
    pub z_score: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub rejected: bool,
}

/// s²_X = (1/K) Σ (X − 1)² against N(1, 8/K), two-sided.
pub fn residual_test(residual: &SpectralField, alpha: f64) -> Result<ResidualTest> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("significance level {alpha} is not in (0, 1)")));
    }
    let x = used_values(residual);
    let k = x.len();
    if k < MIN_TEST_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{k} residuals; the test needs at least {MIN_TEST_SAMPLES}"
        )));
    }
    let s2_x = x.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / k as f64;
    let z_score = (s2_x - 1.0) / (8.0 / k as f64).sqrt();
    let p_value = (2.0 * standard_normal().cdf(-z_score.abs())).clamp(0.0, 1.0);
    Ok(ResidualTest {
        s2_x,
        k_used: k,
        z_score,
        p_value,
        alpha,
        rejected: p_value < alpha,
    })
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// χ²₂ quantile.
pub fn chi2_2_quantile(p: f64) -> f64 {
    -2.0 * (-p).ln_1p()
}

/// χ²₂ distribution function.
pub fn chi2_2_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-0.5 * x).exp_m1()
    }
}

/// Quantile of sorted data with linear interpolation between order statistics.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// (theoretical, empirical) quantiles of 2X at p = (i − ½)/n.
pub fn qq_chi2(residual: &SpectralField, n_points: usize) -> Result<Vec<(f64, f64)>> {
    if n_points < 2 {
        return Err(Error::Config("a quantile plot needs at least 2 points".into()));
    }
    let mut x: Vec<f64> = used_values(residual).into_iter().map(|v| 2.0 * v).collect();
    if x.is_empty() {
        return Err(Error::InsufficientData("no residuals".into()));
    }
    x.sort_by(f64::total_cmp);
    Ok((0..n_points)
        .map(|i| {
            let p = (i as f64 + 0.5) / n_points as f64;
            (chi2_2_quantile(p), sorted_quantile(&x, p))
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Values above the last edge are counted in the last bin.
    pub counts: Vec<usize>,
}

/// Histogram of 2X over [0, upper] with `bins` equal bins.
pub fn histogram_2x(residual: &SpectralField, bins: usize, upper: f64) -> Result<Histogram> {
    if bins == 0 || !(upper > 0.0) {
        return Err(Error::Config("histogram needs positive bins and upper edge".into()));
    }
    let width = upper / bins as f64;
    let mut counts = vec![0; bins];
    for v in used_values(residual) {
        let b = ((2.0 * v / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram {
        edges: (0..=bins).map(|i| i as f64 * width).collect(),
        counts,
    })
}

/// Largest distance between the empirical distribution of 2X and χ²₂.
pub fn ks_distance_chi2_2(values_2x: &mut [f64]) -> f64 {
    values_2x.sort_by(f64::total_cmp);
    let n = values_2x.len() as f64;
    values_2x.iter().enumerate().fold(0.0f64, |d, (i, &v)| {
        let f = chi2_2_cdf(v);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

/// Everything reported about the residuals of one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    #[serde(skip)]
    pub residual_field: Option<SpectralField>,
    pub mean_x: f64,
    /// Unbiased (divisor K − 1).
    pub var_x: f64,
    pub test: ResidualTest,
    pub histogram: Histogram,
    pub qq_points: Vec<(f64, f64)>,
}

/// Residual field, moments, test, histogram and a 99-point Q-Q table.
pub fn diagnose(pergram: &SpectralField, blurred: &SpectralField, alpha: f64) -> Result<ResidualReport> {
    let field = residuals(pergram, blurred)?;
    let test = residual_test(&field, alpha)?;
    let x = used_values(&field);
    let k = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / k;
    let var_x = x.iter().map(|v| (v - mean_x).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(ResidualReport {
        histogram: histogram_2x(&field, HISTOGRAM_BINS, HISTOGRAM_UPPER)?,
        qq_points: qq_chi2(&field, 99)?,
        residual_field: Some(field),
        mean_x,
        var_x,
        test,
    })
}
