//! Isotropic Matérn covariance and spectral density, their derivatives,
//! closed-form special cases and cumulative-variance scale summaries.
//!
//! Parameters are θ = [σ², ν, ρ]. With ξ = 2√ν r/(πρ) and ζ = 4ν/(π²ρ²),
//!
//! ```text
//! C(r)   = σ² 2^{1−ν}/Γ(ν) ξ^ν K_ν(ξ)
//! S^d(k) = σ² Γ(ν+d/2)/(Γ(ν) π^{d/2}) ζ^ν/(ζ+k²)^{ν+d/2}
//! ```
//!
//! Both are evaluated in log space so that large ν stays finite.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::specfun::{
    digamma_real, dln_bessel_k_dorder, gamma, ln_bessel_k, ln_bessel_k_pair, ln_gamma,
};

/// Names of the three parameters, in storage order.
pub const PARAM_NAMES: [&str; 3] = ["variance", "smoothness", "range"];

const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Half-width of the band around ν = 1 where ∂C/∂ν is taken by finite differences.
pub const NU_ONE_GUARD: f64 = 1e-3;

fn all_active() -> [bool; 3] {
    [true; 3]
}

/// The Matérn parameter triple with a free/fixed mask for nested fits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub variance: f64,
    pub smoothness: f64,
    pub range: f64,
    #[serde(default = "all_active")]
    pub active: [bool; 3],
}

impl MaternParams {
    pub fn new(variance: f64, smoothness: f64, range: f64) -> Result<Self> {
        let p = MaternParams {
            variance,
            smoothness,
            range,
            active: all_active(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_array(theta: [f64; 3]) -> Result<Self> {
        Self::new(theta[0], theta[1], theta[2])
    }

    /// Same mask, new values.
    pub fn with_values(&self, theta: [f64; 3]) -> Result<Self> {
        Ok(Self::from_array(theta)?.with_active(self.active))
    }

    pub fn with_active(mut self, active: [bool; 3]) -> Self {
        self.active = active;
        self
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.variance, self.smoothness, self.range]
    }

    /// Indices of the free parameters.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..3).filter(|&i| self.active[i]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in PARAM_NAMES.iter().zip(self.to_array()) {
            if !(v.is_finite() && v > 0.0) {
                return domain(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }

    /// Scaled lag ξ = 2√ν r/(πρ).
    pub fn xi(&self, r: f64) -> f64 {
        2.0 * self.smoothness.sqrt() * r / (PI * self.range)
    }

    /// ζ = 4ν/(π²ρ²).
    pub fn zeta(&self) -> f64 {
        4.0 * self.smoothness / (PI * PI * self.range * self.range)
    }

    pub fn special_case(&self) -> SpecialCase {
        SpecialCase::from_smoothness(self.smoothness)
    }
}

/// Named members of the family, each tied to a fixed smoothness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialCase {
    /// ν = 1/3
    VonKarman,
    /// ν = 1/2
    Exponential,
    /// ν = 1
    Whittle,
    /// ν = 3/2
    Ar2,
    /// ν = 5/2
    Ar3,
    /// ν = n + 1/2
    HalfInteger(u32),
    /// ν → ∞
    SquaredExponential,
    General,
}

impl SpecialCase {
    /// The smoothness this case pins, `None` for `General`.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            SpecialCase::VonKarman => Some(1.0 / 3.0),
            SpecialCase::Exponential => Some(0.5),
            SpecialCase::Whittle => Some(1.0),
            SpecialCase::Ar2 => Some(1.5),
            SpecialCase::Ar3 => Some(2.5),
            SpecialCase::HalfInteger(n) => Some(*n as f64 + 0.5),
            SpecialCase::SquaredExponential => Some(f64::INFINITY),
            SpecialCase::General => None,
        }
    }

    /// Exact-match lookup; anything else is `General`.
    pub fn from_smoothness(nu: f64) -> SpecialCase {
        if nu == 1.0 / 3.0 {
            SpecialCase::VonKarman
        } else if nu == 0.5 {
            SpecialCase::Exponential
        } else if nu == 1.0 {
            SpecialCase::Whittle
        } else if nu == 1.5 {
            SpecialCase::Ar2
        } else if nu == 2.5 {
            SpecialCase::Ar3
        } else if nu == f64::INFINITY {
            SpecialCase::SquaredExponential
        } else if nu > 0.0 && nu < 1e6 && (nu - 0.5).fract() == 0.0 {
            SpecialCase::HalfInteger((nu - 0.5) as u32)
        } else {
            SpecialCase::General
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SpecialCase::VonKarman => "von Karman",
            SpecialCase::Exponential => "exponential",
            SpecialCase::Whittle => "Whittle",
            SpecialCase::Ar2 => "second-order autoregressive",
            SpecialCase::Ar3 => "third-order autoregressive",
            SpecialCase::HalfInteger(_) => "half-integer",
            SpecialCase::SquaredExponential => "squared exponential",
            SpecialCase::General => "general",
        }
    }
}

fn check_lag(r: f64) -> Result<()> {
    if !r.is_finite() || r < 0.0 {
        return domain(format!("lag must be finite and non-negative, got {r}"));
    }
    Ok(())
}

fn check_dim(dim: u32) -> Result<()> {
    if dim == 0 {
        return domain("dimension must be at least 1");
    }
    Ok(())
}

/// ln σ² + (1−ν) ln 2 − ln Γ(ν)
fn ln_prefactor(p: &MaternParams) -> f64 {
    p.variance.ln() + (1.0 - p.smoothness) * LN_2 - ln_gamma(p.smoothness)
}

/// Spatial covariance C_θ(r).
pub fn covariance(p: &MaternParams, r: f64) -> Result<f64> {
    p.validate()?;
    check_lag(r)?;
    Ok(covariance_unchecked(p, r))
}

pub(crate) fn covariance_unchecked(p: &MaternParams, r: f64) -> f64 {
    if r == 0.0 {
        return p.variance;
    }
    let xi = p.xi(r);
    let (lk, _) = ln_bessel_k_pair(p.smoothness, xi);
    let c = (ln_prefactor(p) + p.smoothness * xi.ln() + lk).exp();
    c.min(p.variance)
}

/// C_θ(r) together with ∂C/∂(σ², ν, ρ), sharing the Bessel evaluations.
pub(crate) fn covariance_with_gradient(p: &MaternParams, r: f64) -> (f64, [f64; 3]) {
    if r == 0.0 {
        return (p.variance, [1.0, 0.0, 0.0]);
    }
    let nu = p.smoothness;
    let xi = p.xi(r);
    let (lk, lkm1) = ln_bessel_k_pair(nu, xi);
    let lpre = ln_prefactor(p);
    let lnxi = xi.ln();
    let c = (lpre + nu * lnxi + lk).exp().min(p.variance);
    // ∂C/∂ρ = (σ²/ρ) 2^{1−ν}/Γ(ν) ξ^{ν+1} K_{ν−1}(ξ)
    let drho = (lpre + (nu + 1.0) * lnxi + lkm1).exp() / p.range;
    let dnu = if (nu - 1.0).abs() < NU_ONE_GUARD {
        let h = 1e-4;
        let f = |v: f64| covariance_unchecked(&MaternParams { smoothness: v, ..*p }, r);
        (8.0 * (f(nu + h) - f(nu - h)) - (f(nu + 2.0 * h) - f(nu - 2.0 * h))) / (12.0 * h)
    } else if c == 0.0 {
        0.0
    } else {
        let ratio = (lkm1 - lk).exp();
        c * ((0.5 * xi).ln() - digamma_real(nu) + dln_bessel_k_dorder(nu, xi)
            - xi * ratio / (2.0 * nu))
    };
    (c, [c / p.variance, dnu, drho])
}

/// Gradient of C_θ(r) with respect to (σ², ν, ρ).
///
/// At r = 0 this is (1, 0, 0).
pub fn covariance_gradient(p: &MaternParams, r: f64) -> Result<[f64; 3]> {
    p.validate()?;
    check_lag(r)?;
    Ok(covariance_with_gradient(p, r).1)
}

/// dC/dr for r > 0.
pub fn covariance_dr(p: &MaternParams, r: f64) -> Result<f64> {
    p.validate()?;
    check_lag(r)?;
    if r == 0.0 {
        return domain("dC/dr is evaluated for r > 0 only");
    }
    let nu = p.smoothness;
    let xi = p.xi(r);
    let (_, lkm1) = ln_bessel_k_pair(nu, xi);
    Ok(-(ln_prefactor(p) + (nu + 1.0) * xi.ln() + lkm1).exp() / r)
}

/// ln S^d_θ(k).
pub fn ln_spectral_density(p: &MaternParams, k: f64, dim: u32) -> Result<f64> {
    p.validate()?;
    check_dim(dim)?;
    if !k.is_finite() {
        return domain(format!("wavenumber must be finite, got {k}"));
    }
    let nu = p.smoothness;
    let h = 0.5 * dim as f64;
    let zeta = p.zeta();
    Ok(p.variance.ln() + ln_gamma(nu + h) - ln_gamma(nu) - h * LN_PI - h * zeta.ln()
        - (nu + h) * (k * k / zeta).ln_1p())
}

/// Spectral density S^d_θ(k) in `dim` dimensions.
pub fn spectral_density(p: &MaternParams, k: f64, dim: u32) -> Result<f64> {
    Ok(ln_spectral_density(p, k, dim)?.exp())
}

/// dS/dk; zero at k = 0.
pub fn spectral_density_dk(p: &MaternParams, k: f64, dim: u32) -> Result<f64> {
    let s = spectral_density(p, k, dim)?;
    let h = 0.5 * dim as f64;
    Ok(-2.0 * k * (p.smoothness + h) * s / (p.zeta() + k * k))
}

/// m_θ(k) = ∂ ln S/∂θ in closed form.
pub fn spectral_log_gradient(p: &MaternParams, k: f64, dim: u32) -> Result<[f64; 3]> {
    p.validate()?;
    check_dim(dim)?;
    let nu = p.smoothness;
    let rho = p.range;
    let d = dim as f64;
    let x = k * k * PI * PI * rho * rho;
    let m_nu = 1.0 + digamma_real(nu + 0.5 * d) - digamma_real(nu) - (4.0 * nu + 2.0 * d) / (4.0 * nu + x)
        - (x / (4.0 * nu)).ln_1p();
    let m_rho = (2.0 * nu / rho) * (2.0 * d / (PI * PI * rho * rho) - k * k) / (p.zeta() + k * k);
    Ok([1.0 / p.variance, m_nu, m_rho])
}

/// ∂S/∂(σ², ν, ρ).
pub fn spectral_gradient(p: &MaternParams, k: f64, dim: u32) -> Result<[f64; 3]> {
    let s = spectral_density(p, k, dim)?;
    let m = spectral_log_gradient(p, k, dim)?;
    Ok([s * m[0], s * m[1], s * m[2]])
}

fn special_smoothness(case: SpecialCase) -> Result<f64> {
    case.smoothness().ok_or_else(|| {
        Error::Config("the general case has no closed form; use covariance()".into())
    })
}

fn check_scale(variance: f64, range: f64) -> Result<()> {
    MaternParams::new(variance, 1.0, range).map(|_| ())
}

/// Closed-form covariance for a special case.
pub fn special_covariance(case: SpecialCase, variance: f64, range: f64, r: f64) -> Result<f64> {
    let nu = special_smoothness(case)?;
    check_scale(variance, range)?;
    check_lag(r)?;
    let pr = PI * range;
    let v = match case {
        SpecialCase::VonKarman => {
            if r == 0.0 {
                1.0
            } else {
                let x = 2.0 * 3f64.sqrt() / (3.0 * pr) * r;
                4f64.powf(1.0 / 3.0) / gamma(1.0 / 3.0)
                    * x.powf(1.0 / 3.0)
                    * crate::specfun::bessel_k(1.0 / 3.0, x)?
            }
        }
        SpecialCase::Whittle => {
            if r == 0.0 {
                1.0
            } else {
                let x = 2.0 / pr * r;
                x * crate::specfun::bessel_k(1.0, x)?
            }
        }
        SpecialCase::Exponential => (-(2f64.sqrt()) / pr * r).exp(),
        SpecialCase::Ar2 => {
            let a = 6f64.sqrt() / pr * r;
            (-a).exp() * (1.0 + a)
        }
        SpecialCase::Ar3 => {
            let a = 10f64.sqrt() / pr * r;
            (-a).exp() * (1.0 + a + 10.0 / (3.0 * pr * pr) * r * r)
        }
        SpecialCase::HalfInteger(n) => half_integer_covariance(n, nu, pr, r),
        SpecialCase::SquaredExponential => (-(r * r) / (pr * pr)).exp(),
        SpecialCase::General => unreachable!(),
    };
    Ok(variance * v)
}

fn half_integer_covariance(n: u32, nu: f64, pr: f64, r: f64) -> f64 {
    let a = 2.0 * nu.sqrt() / pr * r;
    let n = n as i32;
    // n!/(2n)! (n+k)!/(k!(n−k)!) in logs
    let lf = |m: i32| ln_gamma(m as f64 + 1.0);
    let mut sum = 0.0;
    for k in 0..=n {
        let coef = (lf(n) - lf(2 * n) + lf(n + k) - lf(k) - lf(n - k)).exp();
        sum += coef * (2.0 * a).powi(n - k);
    }
    (-a).exp() * sum
}

/// Closed-form spectral density for a special case.
pub fn special_spectral_density(
    case: SpecialCase,
    variance: f64,
    range: f64,
    k: f64,
    dim: u32,
) -> Result<f64> {
    let nu = special_smoothness(case)?;
    check_scale(variance, range)?;
    check_dim(dim)?;
    let rho2 = range * range;
    let x = PI * PI * rho2 * k * k;
    let d = dim as f64;
    let v = match (case, dim) {
        (SpecialCase::VonKarman, 2) => {
            4f64.powf(1.0 / 3.0) * PI * rho2 / (4.0 + 3.0 * x).powf(4.0 / 3.0)
        }
        (SpecialCase::Whittle, 2) => 4.0 * PI * rho2 / (4.0 + x).powi(2),
        (SpecialCase::Exponential, 2) => 2.0 * PI * rho2 / (4.0 + 2.0 * x).powf(1.5),
        (SpecialCase::Ar2, 2) => 9.0 * 6f64.sqrt() * PI * rho2 / (6.0 + x).powf(2.5),
        (SpecialCase::Ar3, 2) => 250.0 * 10f64.sqrt() * PI * rho2 / (10.0 + x).powf(3.5),
        (SpecialCase::SquaredExponential, _) => {
            (PI * rho2 / 4.0).powf(0.5 * d) * (-x / 4.0).exp()
        }
        (SpecialCase::VonKarman | SpecialCase::Whittle, _) => {
            // ζ^ν/(ζ+k²)^{ν+d/2} with ζ written out
            let z = 4.0 * nu / (PI * PI * rho2);
            (ln_gamma(nu + 0.5 * d) - ln_gamma(nu) - 0.5 * d * LN_PI + nu * z.ln()
                - (nu + 0.5 * d) * (z + k * k).ln())
            .exp()
        }
        _ => {
            // half-integer family, including ν = 1/2, 3/2, 5/2 off the plane
            let b = 4.0 * nu;
            (ln_gamma(nu + 0.5 * d) - ln_gamma(nu)).exp()
                * (b / (b + x)).powf(nu)
                * (PI * rho2 / (b + x)).powf(0.5 * d)
        }
    };
    Ok(variance * v)
}

/// ∫₀^{r_max} r C_θ(r) dr.
pub fn cumulative_covariance(p: &MaternParams, r_max: f64) -> Result<f64> {
    p.validate()?;
    check_lag(r_max)?;
    if r_max == 0.0 {
        return Ok(0.0);
    }
    let nu = p.smoothness;
    let xi = p.xi(r_max);
    let ln_tail = -nu * LN_2 - ln_gamma(nu + 1.0) + (nu + 1.0) * xi.ln() + ln_bessel_k(nu + 1.0, xi)?;
    Ok(total_cumulative_covariance(p) * -ln_tail.exp_m1())
}

/// ∫₀^∞ r C_θ(r) dr = ½σ²(πρ)².
pub fn total_cumulative_covariance(p: &MaternParams) -> f64 {
    0.5 * p.variance * (PI * p.range).powi(2)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Lag at which a fraction `alpha` of the total cumulative covariance is reached.
pub fn r_alpha(p: &MaternParams, alpha: f64) -> Result<f64> {
    p.validate()?;
    check_alpha(alpha)?;
    let target = alpha * total_cumulative_covariance(p);
    let mut lo = 0.0;
    let mut hi = PI * p.range;
    while cumulative_covariance(p, hi)? < target {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NonConvergence("r_alpha bracket escaped".into()));
        }
    }
    let tol = 1e-10 * total_cumulative_covariance(p);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = cumulative_covariance(p, mid)? - target;
        if f.abs() <= tol * 1e-2 || hi - lo <= 1e-15 * hi {
            return Ok(mid);
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Wavenumber below which a fraction `alpha` of the 2-D spectral power lies.
pub fn k_alpha(p: &MaternParams, alpha: f64) -> Result<f64> {
    p.validate()?;
    check_alpha(alpha)?;
    let nu = p.smoothness;
    Ok((p.zeta() * ((-(-alpha).ln_1p() / nu).exp_m1())).sqrt())
}

/// Wavelength 2π/k_α.
pub fn lambda_alpha(p: &MaternParams, alpha: f64) -> Result<f64> {
    Ok(2.0 * PI / k_alpha(p, alpha)?)
}
