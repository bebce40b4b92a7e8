//! Debiased Whittle likelihood with exact spectral blurring.
//!
//! The windowed transform is
//! `H(k) = (1/2π) (ΔxΔy/(NxNy))^{1/2} Σ_x w(x) H(x) e^{−ik·x}` and its
//! expectation is the blurred density
//! `S̄(k) = (1/(2π)²) (ΔxΔy/(NxNy)) Σ_y W(y) C(y) e^{−ik·y}`.
//! On the DFT wavenumbers the phase is periodic in y with the grid
//! period, so the lag sum is folded onto an Ny×Nx torus and transformed
//! once. This is exact.
//!
//! Removing the weighted mean m̂ = Σ wH/K changes the expectation to
//! `S̄(k) + c²[|W(k)|² V − (2/K) Re(W*(k) G(k))]` with `W` the window
//! transform, `B = w ∗ C`, `G` the transform of `wB` and `V = Σ wB/K²`.
//! With demeaning on, `Whittle` includes this term so that S̄ stays the
//! exact expectation of the periodogram it is compared with.
//!
//! The objective is the negated log-likelihood
//! `ℓ(θ) = (1/K) Σ_k [ln S̄(k) + |H(k)|²/S̄(k)]`; `score` returns the
//! gradient of the log-likelihood, −∇ℓ.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use ndarray::Array2;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{imaginary_residue, Fft2};
use crate::grid::{window_autocorrelation, LagField, SamplingWindow, SpectralField};
use crate::matern::{covariance_unchecked, covariance_with_gradient, MaternParams};
use crate::simulate::Field;

/// Which wavenumbers enter the likelihood sums and whether to demean.
/// With demeaning on, k = 0 is always left out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodConfig {
    pub exclude_zero: bool,
    pub demean: bool,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig {
            exclude_zero: true,
            demean: true,
        }
    }
}

/// Tolerated negative excursion of S̄, relative to its maximum.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-12;
/// Tolerated imaginary residue of the blurred transform.
pub const IMAGINARY_TOLERANCE: f64 = 1e-10;
/// Relative step for the finite-difference parameter derivatives of m̄.
pub const HESSIAN_STEP: f64 = 1e-5;

/// m̄_θ(k) = ∂ ln S̄/∂θ for the three parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub components: [SpectralField; 3],
}

/// |H(k)|² with the weighted mean removed first.
pub fn periodogram(field: &Field, window: &SamplingWindow) -> Result<SpectralField> {
    periodogram_with(field, window, true)
}

/// |H(k)|², optionally without demeaning.
pub fn periodogram_with(field: &Field, window: &SamplingWindow, demean: bool) -> Result<SpectralField> {
    if field.grid != window.grid {
        return Err(Error::Shape(format!(
            "field grid {:?} differs from window grid {:?}",
            field.grid, window.grid
        )));
    }
    let g = window.grid;
    let mean = if demean {
        field.values.iter().zip(window.weights.iter()).map(|(h, w)| h * w).sum::<f64>() / window.k_sum
    } else {
        0.0
    };
    let mut a = Array2::from_shape_fn(g.shape(), |(i, j)| {
        Complex64::new(window.weights[[i, j]] * (field.values[[i, j]] - mean), 0.0)
    });
    Fft2::new(g.ny, g.nx).forward(&mut a);
    let scale = g.dx * g.dy / (g.len() as f64 * 4.0 * PI * PI);
    Ok(SpectralField {
        grid: g,
        values: a.mapv(|c| c.norm_sqr() * scale),
    })
}

/// Transforms needed for the demeaning term.
struct Demeaning {
    /// Full windows only lose k = 0.
    full: bool,
    pad: (usize, usize),
    fft_pad: Fft2,
    w_pad_hat: Array2<Complex64>,
    w_hat: Array2<Complex64>,
}

impl Demeaning {
    fn new(window: &SamplingWindow) -> Self {
        let (ny, nx) = window.grid.shape();
        let full = window.weights.iter().all(|&v| v == 1.0);
        let pad = (2 * ny, 2 * nx);
        let fft_pad = Fft2::new(pad.0, pad.1);
        let mut w_pad_hat = Array2::<Complex64>::zeros(pad);
        let mut w_hat = Array2::<Complex64>::zeros((ny, nx));
        if !full {
            for ((i, j), v) in window.weights.indexed_iter() {
                w_pad_hat[[i, j]].re = *v;
                w_hat[[i, j]].re = *v;
            }
            fft_pad.forward(&mut w_pad_hat);
            Fft2::new(ny, nx).forward(&mut w_hat);
        }
        Demeaning { full, pad, fft_pad, w_pad_hat, w_hat }
    }
}

/// Per-window state: lag autocorrelation, FFT plan and inclusion mask.
pub struct Whittle {
    pub window: SamplingWindow,
    pub config: LikelihoodConfig,
    lag: LagField,
    fft: Fft2,
    included: Array2<bool>,
    needed: Array2<bool>,
    n_included: usize,
    demeaning: Option<Demeaning>,
}

impl Whittle {
    pub fn new(window: &SamplingWindow, config: LikelihoodConfig) -> Self {
        let lag = window_autocorrelation(window);
        let (ny, nx) = window.grid.shape();
        let mut included = Array2::from_elem((ny, nx), true);
        // the demeaned periodogram vanishes at k = 0
        if config.exclude_zero || config.demean {
            included[[0, 0]] = false;
        }
        let n_included = included.iter().filter(|&&b| b).count();
        let needed = Array2::from_shape_fn((ny, nx), |(a, b)| {
            let (a, b) = (a as isize, b as isize);
            [(a, b), (-a, b), (a, -b), (-a, -b)].iter().any(|&(y, x)| lag.get(y, x) != 0.0)
        });
        Whittle {
            window: window.clone(),
            config,
            lag,
            fft: Fft2::new(ny, nx),
            included,
            needed,
            n_included,
            demeaning: config.demean.then(|| Demeaning::new(window)),
        }
    }

    pub fn k_sum(&self) -> f64 {
        self.window.k_sum
    }

    /// Wavenumbers entering the sums.
    pub fn included(&self) -> &Array2<bool> {
        &self.included
    }

    pub fn n_included(&self) -> usize {
        self.n_included
    }

    pub fn lag_field(&self) -> &LagField {
        &self.lag
    }

    pub fn periodogram(&self, field: &Field) -> Result<SpectralField> {
        periodogram_with(field, &self.window, self.config.demean)
    }

    fn lag_distance(&self, a: usize, b: usize) -> f64 {
        let g = &self.window.grid;
        ((a as f64 * g.dy).powi(2) + (b as f64 * g.dx).powi(2)).sqrt()
    }

    /// Σ_y W(y) q(|y_y|, |y_x|) e^{−ik·y} on the DFT grid, scaled by the
    /// normalization of S̄. `q` is indexed by absolute lag.
    fn blur(&self, q: &Array2<f64>) -> Result<Array2<f64>> {
        let (ny, nx) = self.window.grid.shape();
        let mut f = Array2::<Complex64>::zeros((ny, nx));
        for ly in -(ny as isize - 1)..ny as isize {
            let a = ly.unsigned_abs();
            let uy = ly.rem_euclid(ny as isize) as usize;
            for lx in -(nx as isize - 1)..nx as isize {
                let w = self.lag.get(ly, lx);
                if w != 0.0 {
                    let b = lx.unsigned_abs();
                    f[[uy, lx.rem_euclid(nx as isize) as usize]].re += w * q[[a, b]];
                }
            }
        }
        self.fft.forward(&mut f);
        if imaginary_residue(&f) > IMAGINARY_TOLERANCE {
            return Err(Error::Numerical(format!(
                "blurred transform has imaginary residue {:.3e}",
                imaginary_residue(&f)
            )));
        }
        let g = &self.window.grid;
        let scale = g.dx * g.dy / (g.len() as f64 * 4.0 * PI * PI);
        Ok(f.mapv(|c| c.re * scale))
    }

    /// Expectation of the periodogram for the lag table `q`: the blur plus
    /// the demeaning term when demeaning is on.
    fn expected(&self, q: &Array2<f64>) -> Result<Array2<f64>> {
        let mut s = self.blur(q)?;
        let Some(d) = &self.demeaning else {
            return Ok(s);
        };
        if d.full {
            // W(k) vanishes off k = 0, where the demeaned value is zero
            s[[0, 0]] = 0.0;
            return Ok(s);
        }
        let (ny, nx) = self.window.grid.shape();
        let (my, mx) = d.pad;
        // B = w ∗ C by zero-padded FFT; lags ±ny (±nx) never occur
        let mut b = Array2::from_shape_fn((my, mx), |(i, j)| {
            let a = if i < ny { i } else { my - i };
            let c = if j < nx { j } else { mx - j };
            if a < ny && c < nx {
                Complex64::new(q[[a, c]], 0.0)
            } else {
                Complex64::default()
            }
        });
        d.fft_pad.forward(&mut b);
        b.zip_mut_with(&d.w_pad_hat, |x, w| *x *= w);
        d.fft_pad.inverse(&mut b);
        let norm = 1.0 / (my * mx) as f64;
        let k = self.window.k_sum;
        let mut wb = Array2::from_shape_fn((ny, nx), |(i, j)| {
            Complex64::new(self.window.weights[[i, j]] * b[[i, j]].re * norm, 0.0)
        });
        let v = wb.iter().map(|z| z.re).sum::<f64>() / (k * k);
        self.fft.forward(&mut wb);
        let g = &self.window.grid;
        let scale = g.dx * g.dy / (g.len() as f64 * 4.0 * PI * PI);
        for ((i, j), sv) in s.indexed_iter_mut() {
            let w = d.w_hat[[i, j]];
            *sv += scale * (w.norm_sqr() * v - 2.0 / k * (w.conj() * wb[[i, j]]).re);
        }
        Ok(s)
    }

    fn check_density(&self, s: &mut Array2<f64>) -> Result<()> {
        let max = s.iter().fold(0.0f64, |m, v| m.max(*v));
        if !(max > 0.0) || !max.is_finite() {
            return Err(Error::Numerical("blurred density has no positive values".into()));
        }
        let floor = f64::EPSILON * max;
        for v in s.iter_mut() {
            if *v < -NEGATIVITY_TOLERANCE * max {
                return Err(Error::Numerical(format!(
                    "blurred density {v:.3e} is negative beyond tolerance (max {max:.3e})"
                )));
            }
            // values below round-off are indistinguishable from zero
            if *v < floor {
                *v = floor;
            }
        }
        Ok(())
    }

    /// S̄_θ(k).
    pub fn blurred_density(&self, p: &MaternParams) -> Result<SpectralField> {
        p.validate()?;
        let (ny, nx) = self.window.grid.shape();
        let q = Array2::from_shape_fn((ny, nx), |(a, b)| {
            if self.needed[[a, b]] {
                covariance_unchecked(p, self.lag_distance(a, b))
            } else {
                0.0
            }
        });
        let mut s = self.expected(&q)?;
        self.check_density(&mut s)?;
        Ok(SpectralField { grid: self.window.grid, values: s })
    }

    /// S̄_θ(k) and m̄_θ(k).
    pub fn blurred_with_gradient(&self, p: &MaternParams) -> Result<(SpectralField, GradientField)> {
        p.validate()?;
        let (ny, nx) = self.window.grid.shape();
        let mut q = Array2::zeros((ny, nx));
        let mut dq = [Array2::zeros((ny, nx)), Array2::zeros((ny, nx)), Array2::zeros((ny, nx))];
        let square = self.window.grid.dy == self.window.grid.dx;
        for a in 0..ny {
            for b in 0..nx {
                if !self.needed[[a, b]] {
                    continue;
                }
                let (c, g) = if square && b < a && a < nx && b < ny && self.needed[[b, a]] {
                    (q[[b, a]], [dq[0][[b, a]], dq[1][[b, a]], dq[2][[b, a]]])
                } else {
                    covariance_with_gradient(p, self.lag_distance(a, b))
                };
                q[[a, b]] = c;
                for t in 0..3 {
                    dq[t][[a, b]] = g[t];
                }
            }
        }
        let mut s = self.expected(&q)?;
        self.check_density(&mut s)?;
        let mut comps = Vec::with_capacity(3);
        for d in &dq {
            let mut m = self.expected(d)?;
            m.zip_mut_with(&s, |m, s| *m = if *s > 1e-300 { *m / s } else { 0.0 });
            comps.push(SpectralField { grid: self.window.grid, values: m });
        }
        let components: [SpectralField; 3] = comps.try_into().expect("three components");
        Ok((SpectralField { grid: self.window.grid, values: s }, GradientField { components }))
    }

    fn check_pergram(&self, pergram: &SpectralField) -> Result<()> {
        if pergram.values.dim() != self.window.grid.shape() {
            return Err(Error::Shape(format!(
                "periodogram is {:?}, window grid is {:?}",
                pergram.values.dim(),
                self.window.grid.shape()
            )));
        }
        Ok(())
    }

    fn objective_from(&self, s: &SpectralField, pergram: &SpectralField) -> Result<f64> {
        let mut acc = 0.0;
        for ((s, i), inc) in s.values.iter().zip(pergram.values.iter()).zip(self.included.iter()) {
            if *inc {
                acc += s.ln() + i / s;
            }
        }
        let v = acc / self.window.k_sum;
        if !v.is_finite() {
            return Err(Error::Numerical("objective is not finite".into()));
        }
        Ok(v)
    }

    /// ℓ(θ) = (1/K) Σ [ln S̄ + I/S̄].
    pub fn nll(&self, p: &MaternParams, pergram: &SpectralField) -> Result<f64> {
        self.check_pergram(pergram)?;
        let s = self.blurred_density(p)?;
        self.objective_from(&s, pergram)
    }

    fn score_from(&self, s: &SpectralField, m: &GradientField, pergram: &SpectralField) -> [f64; 3] {
        let mut g = [0.0; 3];
        for t in 0..3 {
            let mut acc = 0.0;
            for (((s, i), mv), inc) in s
                .values
                .iter()
                .zip(pergram.values.iter())
                .zip(m.components[t].values.iter())
                .zip(self.included.iter())
            {
                if *inc {
                    acc += mv * (1.0 - i / s);
                }
            }
            g[t] = -acc / self.window.k_sum;
        }
        g
    }

    /// ℓ(θ) and the log-likelihood gradient γ̄ = −∇ℓ.
    pub fn nll_and_score(&self, p: &MaternParams, pergram: &SpectralField) -> Result<(f64, [f64; 3])> {
        self.check_pergram(pergram)?;
        let (s, m) = self.blurred_with_gradient(p)?;
        Ok((self.objective_from(&s, pergram)?, self.score_from(&s, &m, pergram)))
    }

    /// γ̄(θ) = −(1/K) Σ m̄ (1 − I/S̄).
    pub fn score(&self, p: &MaternParams, pergram: &SpectralField) -> Result<[f64; 3]> {
        Ok(self.nll_and_score(p, pergram)?.1)
    }

    /// F̄ = (1/K) Σ m̄ m̄ᵀ.
    pub fn fisher(&self, p: &MaternParams) -> Result<Matrix3<f64>> {
        let (_, m) = self.blurred_with_gradient(p)?;
        Ok(self.fisher_from(&m))
    }

    pub(crate) fn fisher_from(&self, m: &GradientField) -> Matrix3<f64> {
        let mut f = Matrix3::zeros();
        for a in 0..3 {
            for b in a..3 {
                let mut acc = 0.0;
                for ((x, y), inc) in m.components[a]
                    .values
                    .iter()
                    .zip(m.components[b].values.iter())
                    .zip(self.included.iter())
                {
                    if *inc {
                        acc += x * y;
                    }
                }
                f[(a, b)] = acc / self.window.k_sum;
                f[(b, a)] = f[(a, b)];
            }
        }
        f
    }

    /// Hessian of ℓ; its expectation under the model is F̄.
    pub fn hessian(&self, p: &MaternParams, pergram: &SpectralField) -> Result<Matrix3<f64>> {
        self.check_pergram(pergram)?;
        let (s, m) = self.blurred_with_gradient(p)?;
        let theta = p.to_array();
        let mut h = Matrix3::zeros();
        for a in 0..3 {
            let step = HESSIAN_STEP * theta[a];
            let shifted = |sign: f64| -> Result<GradientField> {
                let mut t = theta;
                t[a] += sign * step;
                Ok(self.blurred_with_gradient(&p.with_values(t)?)?.1)
            };
            let (mp, mm) = (shifted(1.0)?, shifted(-1.0)?);
            for b in 0..3 {
                let mut acc = 0.0;
                for idx in 0..s.values.len() {
                    let (i, j) = (idx / s.values.ncols(), idx % s.values.ncols());
                    if !self.included[[i, j]] {
                        continue;
                    }
                    let ratio = pergram.values[[i, j]] / s.values[[i, j]];
                    let dm = (mp.components[b].values[[i, j]] - mm.components[b].values[[i, j]]) / (2.0 * step);
                    acc += dm * (1.0 - ratio)
                        + m.components[a].values[[i, j]] * m.components[b].values[[i, j]] * ratio;
                }
                h[(a, b)] = acc / self.window.k_sum;
            }
        }
        Ok(0.5 * (h + h.transpose()))
    }
}

/// No demeaning, every wavenumber.
const RAW: LikelihoodConfig = LikelihoodConfig { exclude_zero: false, demean: false };

/// S̄_θ(k) for one window: the expectation of the periodogram without
/// demeaning.
pub fn blurred_density(p: &MaternParams, window: &SamplingWindow) -> Result<SpectralField> {
    Whittle::new(window, RAW).blurred_density(p)
}

/// m̄_θ(k) for one window, without demeaning.
pub fn blurred_log_gradient(p: &MaternParams, window: &SamplingWindow) -> Result<GradientField> {
    Ok(Whittle::new(window, RAW).blurred_with_gradient(p)?.1)
}

/// ℓ(θ) with the default configuration.
pub fn whittle_nll(p: &MaternParams, pergram: &SpectralField, window: &SamplingWindow) -> Result<f64> {
    Whittle::new(window, LikelihoodConfig::default()).nll(p, pergram)
}

/// γ̄(θ) with the default configuration.
pub fn score(p: &MaternParams, pergram: &SpectralField, window: &SamplingWindow) -> Result<[f64; 3]> {
    Whittle::new(window, LikelihoodConfig::default()).score(p, pergram)
}

pub fn fisher(p: &MaternParams, window: &SamplingWindow) -> Result<Matrix3<f64>> {
    Whittle::new(window, LikelihoodConfig::default()).fisher(p)
}

pub fn hessian(p: &MaternParams, pergram: &SpectralField, window: &SamplingWindow) -> Result<Matrix3<f64>> {
    Whittle::new(window, LikelihoodConfig::default()).hessian(p, pergram)
}
