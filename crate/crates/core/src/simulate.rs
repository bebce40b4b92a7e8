//! Exact simulation of stationary Matérn fields by circulant embedding.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::GridSpec;
use crate::matern::{covariance_unchecked, MaternParams};

/// Real-valued data on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: GridSpec,
    pub values: Array2<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Array2<f64>) -> Result<Self> {
        grid.validate()?;
        if values.dim() != grid.shape() {
            return Err(Error::Shape(format!(
                "field is {:?}, grid is {:?}",
                values.dim(),
                grid.shape()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("field contains non-finite values".into()));
        }
        Ok(Field { grid, values })
    }

    /// Every `step`-th sample in both directions.
    pub fn subsample(&self, step: usize) -> Result<Field> {
        if step == 0 {
            return Err(Error::Config("subsampling step must be positive".into()));
        }
        let (ny, nx) = ((self.grid.ny + step - 1) / step, (self.grid.nx + step - 1) / step);
        let g = GridSpec::new(ny, nx, self.grid.dy * step as f64, self.grid.dx * step as f64)?;
        let v = Array2::from_shape_fn((ny, nx), |(i, j)| self.values[[i * step, j * step]]);
        Field::new(g, v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// The torus is at least this many times the grid in each direction.
    pub embed_factor: usize,
    /// Clamp negative eigenvalues even when their mass exceeds the tolerance.
    pub clamp_negative_eigs: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            embed_factor: 2,
            clamp_negative_eigs: false,
        }
    }
}

/// Negative eigenvalue mass below this fraction is clamped silently.
pub const NEGATIVE_MASS_TOLERANCE: f64 = 1e-6;

/// Torus size and clamping record of an embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingInfo {
    pub torus: (usize, usize),
    pub negative_mass: f64,
    pub clamped: bool,
}

/// A planned embedding: square-root eigenvalues on the torus, reusable
/// across any number of draws.
pub struct CirculantEmbedding {
    pub params: MaternParams,
    pub grid: GridSpec,
    pub info: EmbeddingInfo,
    sqrt_eigs: Array2<f64>,
    fft: Fft2,
}

fn torus_covariance(params: &MaternParams, grid: &GridSpec, my: usize, mx: usize) -> Array2<f64> {
    let (hy, hx) = (my / 2 + 1, mx / 2 + 1);
    let mut quad = Array2::zeros((hy, hx));
    for a in 0..hy {
        for b in 0..hx {
            let same = grid.dy == grid.dx && b < hy && a < hx && b < a;
            quad[[a, b]] = if same {
                quad[[b, a]]
            } else {
                let r = ((a as f64 * grid.dy).powi(2) + (b as f64 * grid.dx).powi(2)).sqrt();
                covariance_unchecked(params, r)
            };
        }
    }
    Array2::from_shape_fn((my, mx), |(i, j)| quad[[i.min(my - i), j.min(mx - j)]])
}

impl CirculantEmbedding {
    pub fn new(params: &MaternParams, grid: &GridSpec, options: SimulationOptions) -> Result<Self> {
        params.validate()?;
        grid.validate()?;
        if options.embed_factor < 2 {
            return Err(Error::Config("embedding factor must be at least 2".into()));
        }
        let start = |n: usize| (2 * n - 1).max(options.embed_factor * n).next_power_of_two();
        let (mut my, mut mx) = (start(grid.ny), start(grid.nx));
        let cap = |n: usize| (8 * n).next_power_of_two();
        loop {
            let c = torus_covariance(params, grid, my, mx);
            let mut f = c.mapv(|v| Complex64::new(v, 0.0));
            let fft = Fft2::new(my, mx);
            fft.forward(&mut f);
            let eig = f.mapv(|c| c.re);
            let total: f64 = eig.iter().map(|v| v.abs()).sum();
            let negative: f64 = eig.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
            let negative_mass = negative / total;
            let ok = negative_mass <= NEGATIVE_MASS_TOLERANCE;
            let at_cap = my >= cap(grid.ny) && mx >= cap(grid.nx);
            if ok || at_cap {
                if !ok && !options.clamp_negative_eigs {
                    return Err(Error::Embedding(format!(
                        "negative eigenvalue mass {negative_mass:.3e} on a {my}x{mx} torus; \
                         the grid is too small relative to the range"
                    )));
                }
                let m = (my * mx) as f64;
                let sqrt_eigs = eig.mapv(|v| (v.max(0.0) / m).sqrt());
                return Ok(CirculantEmbedding {
                    params: *params,
                    grid: *grid,
                    info: EmbeddingInfo {
                        torus: (my, mx),
                        negative_mass,
                        clamped: negative > 0.0,
                    },
                    sqrt_eigs,
                    fft,
                });
            }
            my = (2 * my).min(cap(grid.ny));
            mx = (2 * mx).min(cap(grid.nx));
        }
    }

    /// Two independent realizations from one complex draw.
    pub fn sample_pair(&self, seed: u64) -> (Field, Field) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut z = self.sqrt_eigs.mapv(|s| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(s * re, s * im)
        });
        self.fft.forward(&mut z);
        let (ny, nx) = self.grid.shape();
        let a = Array2::from_shape_fn((ny, nx), |(i, j)| z[[i, j]].re);
        let b = Array2::from_shape_fn((ny, nx), |(i, j)| z[[i, j]].im);
        (
            Field { grid: self.grid, values: a },
            Field { grid: self.grid, values: b },
        )
    }

    pub fn sample(&self, seed: u64) -> Field {
        self.sample_pair(seed).0
    }
}

/// One realization of a zero-mean Matérn field on `grid`.
pub fn simulate_field(
    params: &MaternParams,
    grid: &GridSpec,
    seed: u64,
    options: SimulationOptions,
) -> Result<(Field, EmbeddingInfo)> {
    let e = CirculantEmbedding::new(params, grid, options)?;
    Ok((e.sample(seed), e.info))
}
