//! Maximum-likelihood fitting of Matérn parameters.
//!
//! The negated debiased Whittle log-likelihood is minimized by BFGS with an
//! Armijo backtracking line search in u = ln θ over the free parameters.
//! The gradient in u is the θ-gradient times θ, so positivity needs no
//! constraints. Convergence is declared when the largest component of that
//! gradient falls below the tolerance.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diagnose::{diagnose, ResidualReport};
use crate::error::{Error, Result};
use crate::grid::SamplingWindow;
use crate::likelihood::{LikelihoodConfig, Whittle};
use crate::matern::{MaternParams, SpecialCase};
use crate::simulate::Field;
use crate::uncertainty::{mat3, param_covariance_with, ParamCovariance};

/// Upper bound on ν during optimization.
pub const SMOOTHNESS_CAP: f64 = 1e3;
/// ν̂ above this triggers a saturation warning.
pub const SMOOTHNESS_WARN: f64 = 10.0;
/// Standard deviation of the log-normal initial perturbation.
pub const INIT_LOG_SD: f64 = 0.2;
/// Largest change of any ln θ in one line-search trial.
const MAX_LOG_STEP: f64 = 1.0;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
/// ln θ is kept inside ±this.
const LOG_BOUND: f64 = 60.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Parameters held at the given value.
    pub fixed: [Option<f64>; 3],
    /// Fix ν at the smoothness of a named special case.
    pub special_case: Option<SpecialCase>,
    /// Starting point; the automatic guess when absent.
    pub initial: Option<[f64; 3]>,
    pub max_iterations: usize,
    /// Bound on the largest component of the ln-θ gradient of the objective.
    pub gradient_tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Whether to compute the sandwich covariance, Fisher and Hessian.
    pub uncertainty: bool,
    /// Significance level of the residual test.
    pub alpha: f64,
    pub likelihood: LikelihoodConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            fixed: [None; 3],
            special_case: None,
            initial: None,
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            restarts: 3,
            seed: 0,
            uncertainty: true,
            alpha: 0.05,
            likelihood: LikelihoodConfig::default(),
        }
    }
}

impl FitOptions {
    /// Fixed values after folding in the special case.
    pub fn resolved_fixed(&self) -> Result<[Option<f64>; 3]> {
        let mut fixed = self.fixed;
        if let Some(case) = self.special_case {
            let nu = case.smoothness().ok_or_else(|| {
                Error::Config(format!("special case {} has no finite smoothness to fix", case.name()))
            })?;
            if let Some(v) = fixed[1] {
                if v != nu {
                    return Err(Error::Config(format!(
                        "smoothness fixed at {v} conflicts with special case {} (ν = {nu})",
                        case.name()
                    )));
                }
            }
            fixed[1] = Some(nu);
        }
        for v in fixed.iter().flatten() {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("fixed value {v} is not positive")));
            }
        }
        Ok(fixed)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_fixed()?;
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::Config("gradient tolerance must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("at least one restart is needed".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub params_hat: MaternParams,
    pub objective_value: f64,
    /// Log-likelihood gradient γ̄ at θ̂.
    pub score: [f64; 3],
    /// max |θ_i γ̄_i| over free parameters.
    pub score_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub initial: MaternParams,
    pub covariance: Option<ParamCovariance>,
    #[serde(with = "opt_mat3")]
    pub hessian: Option<Matrix3<f64>>,
    #[serde(with = "opt_mat3")]
    pub fisher: Option<Matrix3<f64>>,
    pub diagnostics: Option<ResidualReport>,
    pub warnings: Vec<String>,
}

mod opt_mat3 {
    use nalgebra::Matrix3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::mat3")] Matrix3<f64>);

    pub fn serialize<S: Serializer>(m: &Option<Matrix3<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix3<f64>>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

/// Weighted sample variance of the field over the window.
pub fn windowed_variance(field: &Field, window: &SamplingWindow) -> f64 {
    let k = window.k_sum;
    let mean = field.values.iter().zip(window.weights.iter()).map(|(h, w)| h * w).sum::<f64>() / k;
    field
        .values
        .iter()
        .zip(window.weights.iter())
        .map(|(h, w)| w * (h - mean).powi(2))
        .sum::<f64>()
        / k
}

/// Unperturbed starting point: windowed variance, ν = 2, ρ = √(ΔyΔx·NyNx)/(20π).
pub fn base_guess(field: &Field, window: &SamplingWindow) -> Result<MaternParams> {
    if field.grid != window.grid {
        return Err(Error::Shape("field and window grids differ".into()));
    }
    if window.k_sum < 16.0 {
        return Err(Error::InsufficientData(format!(
            "window weight {} is below 16",
            window.k_sum
        )));
    }
    let v = windowed_variance(field, window);
    if !(v > 0.0) {
        return Err(Error::Degenerate("the observed field has zero variance".into()));
    }
    let g = field.grid;
    let rho = (g.dy * g.dx * g.len() as f64).sqrt() / (20.0 * std::f64::consts::PI);
    MaternParams::new(v, 2.0, rho)
}

/// The base guess times exp(0.2·z) per parameter, z standard normal.
pub fn initial_guess(field: &Field, window: &SamplingWindow, seed: u64) -> Result<MaternParams> {
    let base = base_guess(field, window)?;
    perturb(&base, seed)
}

fn perturb(base: &MaternParams, seed: u64) -> Result<MaternParams> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, INIT_LOG_SD).expect("positive sd");
    let t = base.to_array();
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = t[i] * n.sample(&mut rng).exp();
    }
    out[1] = out[1].min(SMOOTHNESS_CAP);
    base.with_values(out)
}

/// Seed of restart `r` derived from the fit seed.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(r as u64 + 1))
}

/// Gradient of the objective with respect to ln θ: −γ̄ᵢ·θᵢ.
pub fn log_gradient(whittle: &Whittle, params: &MaternParams, pergram: &crate::grid::SpectralField) -> Result<[f64; 3]> {
    let s = whittle.score(params, pergram)?;
    let t = params.to_array();
    Ok([-s[0] * t[0], -s[1] * t[1], -s[2] * t[2]])
}

/// Objective and its ln-θ gradient over the free parameters.
struct Problem<'a> {
    whittle: &'a Whittle,
    pergram: &'a crate::grid::SpectralField,
    template: MaternParams,
    free: Vec<usize>,
}

impl Problem<'_> {
    fn params(&self, u: &DVector<f64>) -> Result<MaternParams> {
        let mut t = self.template.to_array();
        for (a, &i) in self.free.iter().enumerate() {
            t[i] = u[a].exp();
        }
        self.template.with_values(t)
    }

    fn upper(&self, a: usize) -> f64 {
        if self.free[a] == 1 {
            SMOOTHNESS_CAP.ln()
        } else {
            LOG_BOUND
        }
    }

    fn project(&self, u: &mut DVector<f64>) {
        for a in 0..u.len() {
            u[a] = u[a].clamp(-LOG_BOUND, self.upper(a));
        }
    }

    fn eval(&self, u: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let p = self.params(u)?;
        let (f, s) = self.whittle.nll_and_score(&p, self.pergram)?;
        let t = p.to_array();
        let g = DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| -s[i] * t[i]));
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("objective or gradient is not finite".into()));
        }
        Ok((f, g))
    }
}

struct RunResult {
    u: DVector<f64>,
    f: f64,
    g: DVector<f64>,
    iterations: usize,
    converged: bool,
}

fn inf_norm(g: &DVector<f64>) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Gradient norm ignoring components pinned at the ν cap with the
/// gradient pushing further out.
fn effective_norm(prob: &Problem, u: &DVector<f64>, g: &DVector<f64>) -> f64 {
    let mut m = 0.0f64;
    for a in 0..g.len() {
        let pinned = u[a] >= prob.upper(a) - 1e-12 && g[a] < 0.0;
        if !pinned {
            m = m.max(g[a].abs());
        }
    }
    m
}

fn bfgs(prob: &Problem, u0: DVector<f64>, opts: &FitOptions) -> Result<RunResult> {
    let n = u0.len();
    let mut u = u0;
    prob.project(&mut u);
    let (mut f, mut g) = prob.eval(&u)?;
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    for it in 0..opts.max_iterations {
        if effective_norm(prob, &u, &g) <= opts.gradient_tolerance {
            return Ok(RunResult { u, f, g, iterations: it, converged: true });
        }
        let mut d = -(&hinv * &g);
        if !(d.dot(&g) < 0.0) {
            hinv = DMatrix::identity(n, n);
            d = -g.clone();
        }
        for a in 0..n {
            let at_top = u[a] >= prob.upper(a) - 1e-12 && d[a] > 0.0;
            let at_bottom = u[a] <= -LOG_BOUND + 1e-12 && d[a] < 0.0;
            if at_top || at_bottom {
                d[a] = 0.0;
            }
        }
        let big = inf_norm(&d);
        if big == 0.0 {
            let converged = effective_norm(prob, &u, &g) <= opts.gradient_tolerance;
            return Ok(RunResult { u, f, g, iterations: it, converged });
        }
        if big > MAX_LOG_STEP {
            d *= MAX_LOG_STEP / big;
        }
        let mut step = 1.0;
        let mut accepted = None;
        let mut any_finite = false;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = &u + &d * step;
            prob.project(&mut trial);
            match prob.eval(&trial) {
                Ok((ft, gt)) => {
                    any_finite = true;
                    let actual = (&trial - &u).dot(&g);
                    if ft <= f + ARMIJO_C * actual.min(0.0) {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                Err(e) if e.is_numerical() => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        let Some((un, fn_, gn)) = accepted else {
            if !any_finite {
                return Err(Error::Numerical(
                    "objective is not finite anywhere along the search direction".into(),
                ));
            }
            // no further decrease is possible at working precision
            let converged = effective_norm(prob, &u, &g) <= opts.gradient_tolerance;
            return Ok(RunResult { u, f, g, iterations: it, converged });
        };
        let s = &un - &u;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
                first = false;
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &s * y.transpose() * rho;
            let b = &i - &y * s.transpose() * rho;
            hinv = &a * &hinv * &b + &s * s.transpose() * rho;
        }
        u = un;
        f = fn_;
        g = gn;
    }
    let converged = effective_norm(prob, &u, &g) <= opts.gradient_tolerance;
    Ok(RunResult {
        u,
        f,
        g,
        iterations: opts.max_iterations,
        converged,
    })
}

/// Fits θ to one field seen through `window`.
pub fn fit(field: &Field, window: &SamplingWindow, options: &FitOptions) -> Result<EstimateReport> {
    options.validate()?;
    let whittle = Whittle::new(window, options.likelihood);
    fit_with(field, &whittle, options)
}

/// As [`fit`], reusing a prepared likelihood.
pub fn fit_with(field: &Field, whittle: &Whittle, options: &FitOptions) -> Result<EstimateReport> {
    options.validate()?;
    let window = &whittle.window;
    let fixed = options.resolved_fixed()?;
    let pergram = whittle.periodogram(field)?;
    let active = [fixed[0].is_none(), fixed[1].is_none(), fixed[2].is_none()];
    let free: Vec<usize> = (0..3).filter(|&i| active[i]).collect();

    let base = match options.initial {
        Some(t) => MaternParams::from_array(t)?,
        None => base_guess(field, window)?,
    };
    let with_fixed = |p: MaternParams| -> Result<MaternParams> {
        let mut t = p.to_array();
        for i in 0..3 {
            if let Some(v) = fixed[i] {
                t[i] = v;
            }
        }
        Ok(MaternParams::from_array(t)?.with_active(active))
    };

    let mut warnings = Vec::new();
    let mut best: Option<(RunResult, MaternParams)> = None;
    let mut last_err = None;
    let runs = if free.is_empty() { 1 } else { options.restarts };
    for r in 0..runs {
        let start = with_fixed(if options.initial.is_some() && r == 0 {
            base
        } else {
            perturb(&base, restart_seed(options.seed, r))?
        })?;
        let prob = Problem {
            whittle,
            pergram: &pergram,
            template: start,
            free: free.clone(),
        };
        let t = start.to_array();
        let u0 = DVector::from_iterator(free.len(), free.iter().map(|&i| t[i].ln()));
        match bfgs(&prob, u0, options) {
            Ok(run) => {
                let better = match &best {
                    None => true,
                    Some((b, _)) => run.f < b.f || (run.f == b.f && inf_norm(&run.g) < inf_norm(&b.g)),
                };
                if better {
                    best = Some((run, start));
                }
            }
            Err(e) if e.is_numerical() => {
                warnings.push(format!("restart {r} failed: {e}"));
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let Some((run, start)) = best else {
        return Err(last_err.unwrap_or_else(|| Error::Numerical("no restart succeeded".into())));
    };

    let prob = Problem {
        whittle,
        pergram: &pergram,
        template: start,
        free: free.clone(),
    };
    let params_hat = prob.params(&run.u)?;
    let (objective_value, score) = whittle.nll_and_score(&params_hat, &pergram)?;
    let t = params_hat.to_array();
    let score_norm = free.iter().fold(0.0f64, |m, &i| m.max((score[i] * t[i]).abs()));
    let converged = run.converged;
    if !converged {
        warnings.push(format!(
            "optimizer stopped after {} iterations with gradient norm {:.3e}",
            run.iterations, score_norm
        ));
    }
    if params_hat.smoothness > SMOOTHNESS_WARN && active[1] {
        warnings.push(format!(
            "estimated smoothness {:.3} exceeds {SMOOTHNESS_WARN}; it is poorly identified",
            params_hat.smoothness
        ));
    }

    let (mut covariance, mut fisher, mut hessian) = (None, None, None);
    if options.uncertainty {
        match whittle.fisher(&params_hat) {
            Ok(f) => fisher = Some(f),
            Err(e) => warnings.push(format!("Fisher information unavailable: {e}")),
        }
        match whittle.hessian(&params_hat, &pergram) {
            Ok(h) => hessian = Some(h),
            Err(e) => warnings.push(format!("Hessian unavailable: {e}")),
        }
        match param_covariance_with(&params_hat, whittle) {
            Ok(c) => covariance = Some(c),
            Err(e) => warnings.push(format!("covariance unavailable: {e}")),
        }
    }
    let diagnostics = match whittle.blurred_density(&params_hat) {
        Ok(s) => match diagnose(&pergram, &s, options.alpha) {
            Ok(d) => Some(d),
            Err(e) => {
                warnings.push(format!("diagnostics unavailable: {e}"));
                None
            }
        },
        Err(e) => {
            warnings.push(format!("diagnostics unavailable: {e}"));
            None
        }
    };

    Ok(EstimateReport {
        params_hat,
        objective_value,
        score,
        score_norm,
        iterations: run.iterations,
        converged,
        initial: start,
        covariance,
        hessian,
        fisher,
        diagnostics,
        warnings,
    })
}
