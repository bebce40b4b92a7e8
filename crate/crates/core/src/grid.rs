//! Grid geometry, sampling windows and their lag and spectral signatures.
//!
//! Samples sit at physical positions (i·Δy, j·Δx) for row i and column j.
//! All spectral arrays use DFT order with the zero wavenumber at index
//! (0, 0). The spectral window is the unnormalized transform
//! |Σ_x w(x) e^{−ik·x}|², so its value at k = 0 is (Σw)² and its mean over
//! the transform grid is Σw².

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{forward_real_padded, wavenumbers, Fft2};
use rustfft::num_complex::Complex64;

/// Regular grid: `ny` rows spaced `dy`, `nx` columns spaced `dx`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub ny: usize,
    pub nx: usize,
    pub dy: f64,
    pub dx: f64,
}

impl GridSpec {
    pub fn new(ny: usize, nx: usize, dy: f64, dx: f64) -> Result<Self> {
        let g = GridSpec { ny, nx, dy, dx };
        g.validate()?;
        Ok(g)
    }

    /// Square grid with unit spacing.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ny == 0 || self.nx == 0 || self.ny * self.nx < 4 {
            return Err(Error::Geometry(format!(
                "grid needs at least 4 samples, got {}x{}",
                self.ny, self.nx
            )));
        }
        if !(self.dy.is_finite() && self.dy > 0.0 && self.dx.is_finite() && self.dx > 0.0) {
            return Err(Error::Geometry(format!(
                "spacings must be positive and finite, got ({}, {})",
                self.dy, self.dx
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn len(&self) -> usize {
        self.ny * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Angular wavenumbers along y and x in DFT order.
    pub fn wavenumbers(&self) -> (Vec<f64>, Vec<f64>) {
        (wavenumbers(self.ny, self.dy), wavenumbers(self.nx, self.dx))
    }

    /// Same spacing, dimensions multiplied by `factor`.
    pub fn padded(&self, factor: usize) -> GridSpec {
        GridSpec {
            ny: self.ny * factor,
            nx: self.nx * factor,
            ..*self
        }
    }
}

/// Window weights w(x) ∈ [0, 1] on a grid, with K = Σw.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingWindow {
    pub grid: GridSpec,
    pub weights: Array2<f64>,
    pub k_sum: f64,
}

impl SamplingWindow {
    /// Validates weights and computes K.
    pub fn new(grid: GridSpec, weights: Array2<f64>) -> Result<Self> {
        grid.validate()?;
        if weights.dim() != grid.shape() {
            return Err(Error::Shape(format!(
                "weights are {:?}, grid is {:?}",
                weights.dim(),
                grid.shape()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && **w <= 1.0)) {
            return Err(Error::Domain(format!("window weight {w} outside [0, 1]")));
        }
        let k_sum = weights.sum();
        if k_sum <= 0.0 {
            return Err(Error::EmptyWindow);
        }
        Ok(SamplingWindow { grid, weights, k_sum })
    }

    pub fn full(grid: GridSpec) -> Result<Self> {
        Self::new(grid, Array2::ones(grid.shape()))
    }

    /// True when every weight is 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0 || w == 1.0)
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Fraction of grid cells with nonzero weight.
    pub fn observed_fraction(&self) -> f64 {
        self.weights.iter().filter(|&&w| w > 0.0).count() as f64 / self.grid.len() as f64
    }
}

/// A point (x, y) in physical units.
pub type Point = (f64, f64);

/// Mask generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WindowPattern {
    Full,
    /// Keep round(fraction·n) cells chosen by a seeded shuffle. Growing the
    /// fraction with a fixed seed only adds cells.
    RandomDeletion { fraction_observed: f64, seed: u64 },
    /// Blocks of `period` cells; keep blocks whose parity matches.
    Checkerboard { parity: u8, period: usize },
    PolygonInterior { path: Vec<Point> },
    PolygonExterior { path: Vec<Point> },
    /// Samples within width/2 of any segment; width defaults to one cell.
    Tracks {
        segments: Vec<(Point, Point)>,
        width: Option<f64>,
    },
    FromMask { weights: Vec<Vec<f64>> },
}

/// Build a window on `grid` from a pattern.
pub fn make_window(grid: GridSpec, pattern: &WindowPattern) -> Result<SamplingWindow> {
    grid.validate()?;
    let (ny, nx) = grid.shape();
    let w = match pattern {
        WindowPattern::Full => Array2::ones((ny, nx)),
        WindowPattern::RandomDeletion { fraction_observed, seed } => {
            let f = *fraction_observed;
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("observed fraction must lie in (0, 1], got {f}")));
            }
            let order = shuffled_cells(grid.len(), *seed);
            let keep = (f * grid.len() as f64).round() as usize;
            let mut w = Array2::zeros((ny, nx));
            for &c in &order[..keep] {
                w[[c / nx, c % nx]] = 1.0;
            }
            w
        }
        WindowPattern::Checkerboard { parity, period } => {
            if *period == 0 || *parity > 1 {
                return Err(Error::Config("checkerboard needs period ≥ 1 and parity 0 or 1".into()));
            }
            Array2::from_shape_fn((ny, nx), |(i, j)| {
                (((i / period + j / period) % 2) as u8 == *parity) as u8 as f64
            })
        }
        WindowPattern::PolygonInterior { path } => polygon_mask(&grid, path, true)?,
        WindowPattern::PolygonExterior { path } => polygon_mask(&grid, path, false)?,
        WindowPattern::Tracks { segments, width } => track_mask(&grid, segments, *width)?,
        WindowPattern::FromMask { weights } => {
            if weights.len() != ny || weights.iter().any(|r| r.len() != nx) {
                return Err(Error::Shape(format!("mask rows do not match a {ny}x{nx} grid")));
            }
            Array2::from_shape_fn((ny, nx), |(i, j)| weights[i][j])
        }
    };
    SamplingWindow::new(grid, w)
}

/// Cell indices 0..n in a seeded random order.
pub fn shuffled_cells(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    order
}

fn close_path(path: &[Point]) -> Result<Vec<Point>> {
    let mut p = path.to_vec();
    if p.len() >= 2 && p.first() == p.last() {
        p.pop();
    }
    if p.len() < 3 {
        return Err(Error::Geometry("polygon needs at least three distinct vertices".into()));
    }
    if p.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Geometry("polygon vertices must be finite".into()));
    }
    Ok(p)
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Rejects polygons whose non-adjacent edges touch.
pub fn check_simple_polygon(path: &[Point]) -> Result<()> {
    let p = close_path(path)?;
    let n = p.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n]) {
                return Err(Error::Geometry(format!("polygon edges {i} and {j} intersect")));
            }
        }
    }
    Ok(())
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(path: &[Point], pt: Point) -> bool {
    let n = path.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = path[i];
        let (xj, yj) = path[j];
        if (yi > pt.1) != (yj > pt.1) && pt.0 < (xj - xi) * (pt.1 - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn polygon_mask(grid: &GridSpec, path: &[Point], interior: bool) -> Result<Array2<f64>> {
    check_simple_polygon(path)?;
    let p = close_path(path)?;
    Ok(Array2::from_shape_fn(grid.shape(), |(i, j)| {
        let inside = point_in_polygon(&p, (j as f64 * grid.dx, i as f64 * grid.dy));
        (inside == interior) as u8 as f64
    }))
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * vx).powi(2) + (p.1 - a.1 - t * vy).powi(2)).sqrt()
}

fn track_mask(grid: &GridSpec, segments: &[(Point, Point)], width: Option<f64>) -> Result<Array2<f64>> {
    let width = width.unwrap_or(grid.dx.max(grid.dy));
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::Geometry(format!("track width must be positive, got {width}")));
    }
    let (xmax, ymax) = ((grid.nx - 1) as f64 * grid.dx, (grid.ny - 1) as f64 * grid.dy);
    let inside = |p: &Point| p.0 >= 0.0 && p.0 <= xmax && p.1 >= 0.0 && p.1 <= ymax;
    for (a, b) in segments {
        if !inside(a) || !inside(b) {
            return Err(Error::Geometry(format!("track segment {a:?}-{b:?} leaves the grid")));
        }
    }
    let half = 0.5 * width * (1.0 + 1e-12);
    Ok(Array2::from_shape_fn(grid.shape(), |(i, j)| {
        let p = (j as f64 * grid.dx, i as f64 * grid.dy);
        segments.iter().any(|(a, b)| point_segment_distance(p, *a, *b) <= half) as u8 as f64
    }))
}

/// Edge tapering styles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SmoothingStyle {
    /// Cosine ramps over `fraction` of each side of the bounding rectangle.
    PerimeterCosine { fraction: f64 },
    /// Repeated convolution with a normalized cos² kernel of half-width
    /// `half_width` cells, re-masked after each pass.
    MaskEdgeCosine { iterations: usize, half_width: usize },
}

impl SmoothingStyle {
    pub fn mask_edge(iterations: usize) -> Self {
        SmoothingStyle::MaskEdgeCosine { iterations, half_width: 3 }
    }
}

/// One-dimensional perimeter taper of length n.
pub fn perimeter_taper(n: usize, fraction: f64) -> Vec<f64> {
    let l = (fraction * n as f64).floor() as usize;
    let mut t = vec![1.0; n];
    for i in 0..l.min(n) {
        let v = (std::f64::consts::PI * (i + 1) as f64 / (2.0 * (l + 1) as f64)).sin().powi(2);
        t[i] = v;
        t[n - 1 - i] = v;
    }
    t
}

/// Normalized cos² kernel on offsets −h..=h.
pub fn cosine_kernel(half_width: usize) -> Vec<f64> {
    let h = half_width as f64;
    let k: Vec<f64> = (0..=2 * half_width)
        .map(|i| {
            let off = i as f64 - h;
            (std::f64::consts::PI * off / (2.0 * (h + 1.0))).cos().powi(2)
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn convolve_separable(a: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let h = (k.len() / 2) as isize;
    let (ny, nx) = a.dim();
    let mut tmp = Array2::zeros((ny, nx));
    for i in 0..ny {
        for j in 0..nx {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let jj = j as isize + t as isize - h;
                if jj >= 0 && (jj as usize) < nx {
                    s += kv * a[[i, jj as usize]];
                }
            }
            tmp[[i, j]] = s;
        }
    }
    let mut out = Array2::zeros((ny, nx));
    for i in 0..ny {
        for j in 0..nx {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let ii = i as isize + t as isize - h;
                if ii >= 0 && (ii as usize) < ny {
                    s += kv * tmp[[ii as usize, j]];
                }
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// Taper a window's edges. The interior plateau of ones is kept.
pub fn smooth_boundary(window: &SamplingWindow, style: SmoothingStyle) -> Result<SamplingWindow> {
    let w = match style {
        SmoothingStyle::PerimeterCosine { fraction } => {
            if !(fraction > 0.0 && fraction <= 0.5) {
                return Err(Error::Config(format!("taper fraction must lie in (0, 0.5], got {fraction}")));
            }
            let (ny, nx) = window.grid.shape();
            let ty = perimeter_taper(ny, fraction);
            let tx = perimeter_taper(nx, fraction);
            Array2::from_shape_fn((ny, nx), |(i, j)| window.weights[[i, j]] * ty[i] * tx[j])
        }
        SmoothingStyle::MaskEdgeCosine { iterations, half_width } => {
            if iterations == 0 || half_width == 0 {
                return Err(Error::Config("mask smoothing needs iterations ≥ 1 and half_width ≥ 1".into()));
            }
            let kernel = cosine_kernel(half_width);
            let mut w = window.weights.clone();
            for _ in 0..iterations {
                w = convolve_separable(&w, &kernel);
                w.zip_mut_with(&window.weights, |a, &m| *a = (*a * m).clamp(0.0, 1.0));
            }
            // round-off near the plateau
            w.mapv_inplace(|v| if v > 1.0 - 1e-12 { 1.0 } else { v });
            w
        }
    };
    if !w.iter().any(|&v| v == 1.0) {
        return Err(Error::Degenerate("tapering removed the whole plateau".into()));
    }
    SamplingWindow::new(window.grid, w)
}

/// Values over lag offsets (2ny−1)×(2nx−1); lag (ly, lx) sits at
/// index (ly + ny − 1, lx + nx − 1).
#[derive(Clone, Debug, PartialEq)]
pub struct LagField {
    pub grid: GridSpec,
    pub values: Array2<f64>,
}

impl LagField {
    pub fn get(&self, ly: isize, lx: isize) -> f64 {
        let (ny, nx) = self.grid.shape();
        self.values[[(ly + ny as isize - 1) as usize, (lx + nx as isize - 1) as usize]]
    }
}

/// Smallest 2^a 3^b 5^c at or above n.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// W(y) = Σ_x w(x) w(x+y) by zero-padded FFT.
///
/// Binary windows give integer counts; these are rounded to remove FFT noise.
pub fn window_autocorrelation(window: &SamplingWindow) -> LagField {
    let (ny, nx) = window.grid.shape();
    let (py, px) = (fast_len(2 * ny - 1), fast_len(2 * nx - 1));
    let mut f = forward_real_padded(&window.weights, py, px);
    f.mapv_inplace(|c| Complex64::new(c.norm_sqr(), 0.0));
    Fft2::new(py, px).inverse(&mut f);
    let scale = 1.0 / (py * px) as f64;
    let binary = window.is_binary();
    let values = Array2::from_shape_fn((2 * ny - 1, 2 * nx - 1), |(a, b)| {
        let ly = (a + py - (ny - 1)) % py;
        let lx = (b + px - (nx - 1)) % px;
        let v = f[[ly, lx]].re * scale;
        if binary {
            v.round()
        } else {
            v.max(0.0)
        }
    });
    let mut lf = LagField { grid: window.grid, values };
    symmetrize(&mut lf.values);
    lf.values[[ny - 1, nx - 1]] = window.sum_of_squares();
    lf
}

fn symmetrize(a: &mut Array2<f64>) {
    let (my, mx) = a.dim();
    for i in 0..my {
        for j in 0..mx {
            let (ii, jj) = (my - 1 - i, mx - 1 - j);
            if (i, j) < (ii, jj) {
                let v = 0.5 * (a[[i, j]] + a[[ii, jj]]);
                a[[i, j]] = v;
                a[[ii, jj]] = v;
            }
        }
    }
}

/// Real-valued spectral array on a transform grid, DFT order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub grid: GridSpec,
    pub values: Array2<f64>,
}

impl SpectralField {
    /// (k_y, k_x) at index (i, j).
    pub fn wavenumber(&self, i: usize, j: usize) -> (f64, f64) {
        let (ky, kx) = self.grid.wavenumbers();
        (ky[i], kx[j])
    }
}

/// |w(k)|² on the grid zero-padded by `pad_factor` in each direction.
pub fn spectral_window(window: &SamplingWindow, pad_factor: usize) -> Result<SpectralField> {
    if pad_factor == 0 {
        return Err(Error::Config("pad factor must be at least 1".into()));
    }
    let g = window.grid.padded(pad_factor);
    let f = forward_real_padded(&window.weights, g.ny, g.nx);
    Ok(SpectralField {
        grid: g,
        values: f.mapv(|c| c.norm_sqr()),
    })
}
