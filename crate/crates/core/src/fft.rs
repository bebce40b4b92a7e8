//! Two-dimensional complex FFTs on row-major `ndarray` grids.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned forward and inverse transforms for one grid shape.
pub struct Fft2 {
    ny: usize,
    nx: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(ny: usize, nx: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            ny,
            nx,
            row_fwd: planner.plan_fft_forward(nx),
            col_fwd: planner.plan_fft_forward(ny),
            row_inv: planner.plan_fft_inverse(nx),
            col_inv: planner.plan_fft_inverse(ny),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    /// Unnormalized forward transform Σ a(x) e^{−ik·x}, in place.
    pub fn forward(&self, a: &mut Array2<Complex64>) {
        self.run(a, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalized inverse transform Σ a(k) e^{+ik·x}, in place.
    pub fn inverse(&self, a: &mut Array2<Complex64>) {
        self.run(a, &self.row_inv, &self.col_inv);
    }

    fn run(&self, a: &mut Array2<Complex64>, row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(a.dim(), (self.ny, self.nx), "FFT shape mismatch");
        let mut scratch = vec![Complex64::default(); row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())];
        let data = a.as_slice_mut().expect("FFT input must be in standard layout");
        for r in data.chunks_exact_mut(self.nx) {
            row.process_with_scratch(r, &mut scratch);
        }
        let mut buf = vec![Complex64::default(); self.ny];
        for j in 0..self.nx {
            for i in 0..self.ny {
                buf[i] = data[i * self.nx + j];
            }
            col.process_with_scratch(&mut buf, &mut scratch);
            for i in 0..self.ny {
                data[i * self.nx + j] = buf[i];
            }
        }
    }
}

/// Forward transform of a real array, zero-padded to (py, px).
pub fn forward_real_padded(a: &Array2<f64>, py: usize, px: usize) -> Array2<Complex64> {
    let mut out = Array2::<Complex64>::zeros((py, px));
    for ((i, j), &v) in a.indexed_iter() {
        out[[i, j]] = Complex64::new(v, 0.0);
    }
    Fft2::new(py, px).forward(&mut out);
    out
}

/// Largest |imaginary part| relative to the largest |real part|.
pub fn imaginary_residue(a: &Array2<Complex64>) -> f64 {
    let re = a.iter().fold(0.0f64, |m, c| m.max(c.re.abs()));
    let im = a.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    if re == 0.0 {
        im
    } else {
        im / re
    }
}

/// Angular DFT wavenumbers 2π·m/(nΔ) for m in DFT order (0, 1, …, −1).
pub fn wavenumbers(n: usize, spacing: f64) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let s = if m <= (n - 1) / 2 { m as f64 } else { m as f64 - n as f64 };
            if n % 2 == 0 && m == n / 2 {
                // Nyquist: keep the positive sign
                std::f64::consts::PI / spacing
            } else {
                2.0 * std::f64::consts::PI * s / (n as f64 * spacing)
            }
        })
        .collect()
}
