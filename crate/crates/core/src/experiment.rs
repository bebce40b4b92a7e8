//! Ensemble experiments over a trial axis.
//!
//! Each realization r uses the field seed `seed ^ r`, so results do not
//! depend on how members are scheduled across threads.
//!
//! - growing domain: square grids of the listed sizes at fixed spacing.
//! - infill: the base grid is the finest; each trial keeps every s-th
//!   sample for the listed steps s, so all trials see the same fields.
//! - fill missing: the base grid with random deletion at the listed
//!   observed fractions; windows are nested and fields shared.
//! - ensemble: one trial on the base grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit_with, FitOptions};
use crate::grid::{make_window, GridSpec, SamplingWindow, WindowPattern};
use crate::likelihood::Whittle;
use crate::matern::MaternParams;
use crate::simulate::{CirculantEmbedding, Field, SimulationOptions};
use crate::uncertainty::{efficiency_with, ensemble_stats, Efficiency, EnsembleStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GrowingDomain,
    Infill,
    FillMissing,
    Ensemble,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub base_grid: GridSpec,
    /// Grid sizes, subsampling steps or observed fractions.
    pub trial_axis: Vec<f64>,
    pub n_realizations: usize,
    pub theta0: MaternParams,
    #[serde(default = "full_pattern")]
    pub window_pattern: WindowPattern,
    pub seed: u64,
    #[serde(default)]
    pub fit: FitOptions,
    /// Compute the predicted covariance and efficiency at θ₀ per trial.
    #[serde(default = "yes")]
    pub predict: bool,
    #[serde(default)]
    pub simulation: SimulationOptions,
    #[serde(default)]
    pub units: String,
}

fn full_pattern() -> WindowPattern {
    WindowPattern::Full
}

fn yes() -> bool {
    true
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.base_grid.validate()?;
        self.theta0.validate()?;
        self.fit.validate()?;
        if self.n_realizations < 2 {
            return Err(Error::Config("an experiment needs at least 2 realizations".into()));
        }
        let axis = &self.trial_axis;
        if self.kind != ExperimentKind::Ensemble {
            if axis.is_empty() {
                return Err(Error::Config("the trial axis is empty".into()));
            }
            let up = axis.windows(2).all(|w| w[1] > w[0]);
            let down = axis.windows(2).all(|w| w[1] < w[0]);
            if !(up || down) {
                return Err(Error::Config("the trial axis must be strictly monotone".into()));
            }
        }
        match self.kind {
            ExperimentKind::GrowingDomain | ExperimentKind::Infill => {
                if axis.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
                    return Err(Error::Config("sizes and steps must be positive integers".into()));
                }
            }
            ExperimentKind::FillMissing => {
                if axis.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                    return Err(Error::Config("observed fractions must lie in (0, 1]".into()));
                }
            }
            ExperimentKind::Ensemble => {}
        }
        Ok(())
    }

    fn trials(&self) -> Vec<f64> {
        if self.kind == ExperimentKind::Ensemble {
            vec![1.0]
        } else {
            self.trial_axis.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub axis_value: f64,
    pub grid: GridSpec,
    pub k_sum: f64,
    pub estimates: Vec<[f64; 3]>,
    pub converged: usize,
    pub failures: usize,
    pub stats: Option<EnsembleStats>,
    pub prediction: Option<Efficiency>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub plan: ExperimentPlan,
    pub trials: Vec<TrialResult>,
}

/// Seed of realization `r`.
pub fn member_seed(seed: u64, r: usize) -> u64 {
    seed ^ r as u64
}

/// Fits every member field, in member order.
fn fit_members(fields: &[Field], whittle: &Whittle, opts: &FitOptions, seed: u64) -> Vec<Result<(bool, [f64; 3])>> {
    fields
        .par_iter()
        .enumerate()
        .map(|(r, f)| {
            let o = FitOptions {
                seed: member_seed(seed, r),
                uncertainty: false,
                ..opts.clone()
            };
            fit_with(f, whittle, &o).map(|rep| (rep.converged, rep.params_hat.to_array()))
        })
        .collect()
}

fn simulate_members(plan: &ExperimentPlan, grid: &GridSpec) -> Result<Vec<Field>> {
    let emb = CirculantEmbedding::new(&plan.theta0, grid, plan.simulation)?;
    Ok((0..plan.n_realizations)
        .into_par_iter()
        .map(|r| emb.sample(member_seed(plan.seed, r)))
        .collect())
}

fn trial_window(plan: &ExperimentPlan, grid: GridSpec, axis: f64) -> Result<SamplingWindow> {
    match plan.kind {
        ExperimentKind::FillMissing => {
            let seed = match &plan.window_pattern {
                WindowPattern::RandomDeletion { seed, .. } => *seed,
                _ => plan.seed,
            };
            make_window(grid, &WindowPattern::RandomDeletion { fraction_observed: axis, seed })
        }
        _ => make_window(grid, &plan.window_pattern),
    }
}

fn trial_grid(plan: &ExperimentPlan, axis: f64) -> Result<GridSpec> {
    let b = plan.base_grid;
    match plan.kind {
        ExperimentKind::GrowingDomain => GridSpec::new(axis as usize, axis as usize, b.dy, b.dx),
        ExperimentKind::Infill => {
            let s = axis as usize;
            GridSpec::new(b.ny.div_ceil(s), b.nx.div_ceil(s), b.dy * s as f64, b.dx * s as f64)
        }
        _ => Ok(b),
    }
}

fn summarize(
    plan: &ExperimentPlan,
    axis: f64,
    window: &SamplingWindow,
    fits: Vec<Result<(bool, [f64; 3])>>,
) -> Result<TrialResult> {
    let mut notes = Vec::new();
    let mut estimates = Vec::new();
    let mut converged = 0;
    let mut failures = 0;
    for f in fits {
        match f {
            Ok((c, t)) => {
                converged += c as usize;
                estimates.push(t);
            }
            Err(e) if e.is_numerical() => {
                failures += 1;
                notes.push(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    let stats = ensemble_stats(&estimates, &plan.theta0).ok();
    let prediction = if plan.predict {
        let whittle = Whittle::new(window, plan.fit.likelihood);
        let truth = plan.theta0.with_active(active_of(&plan.fit)?);
        match efficiency_with(&truth, &whittle) {
            Ok(e) => Some(e),
            Err(e) => {
                notes.push(format!("prediction unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    Ok(TrialResult {
        axis_value: axis,
        grid: window.grid,
        k_sum: window.k_sum,
        estimates,
        converged,
        failures,
        stats,
        prediction,
        notes,
    })
}

fn active_of(fit: &FitOptions) -> Result<[bool; 3]> {
    let f = fit.resolved_fixed()?;
    Ok([f[0].is_none(), f[1].is_none(), f[2].is_none()])
}

/// Runs the plan; members run on the current rayon pool.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    plan.validate()?;
    let mut trials = Vec::new();
    match plan.kind {
        ExperimentKind::GrowingDomain | ExperimentKind::Ensemble => {
            for axis in plan.trials() {
                let grid = trial_grid(plan, axis)?;
                let window = trial_window(plan, grid, axis)?;
                let fields = simulate_members(plan, &grid)?;
                let whittle = Whittle::new(&window, plan.fit.likelihood);
                let fits = fit_members(&fields, &whittle, &plan.fit, plan.seed);
                trials.push(summarize(plan, axis, &window, fits)?);
            }
        }
        ExperimentKind::Infill | ExperimentKind::FillMissing => {
            let fine = simulate_members(plan, &plan.base_grid)?;
            for axis in plan.trials() {
                let grid = trial_grid(plan, axis)?;
                let window = trial_window(plan, grid, axis)?;
                let fields: Vec<Field> = if plan.kind == ExperimentKind::Infill {
                    fine.iter().map(|f| f.subsample(axis as usize)).collect::<Result<_>>()?
                } else {
                    fine.clone()
                };
                let whittle = Whittle::new(&window, plan.fit.likelihood);
                let fits = fit_members(&fields, &whittle, &plan.fit, plan.seed);
                trials.push(summarize(plan, axis, &window, fits)?);
            }
        }
    }
    Ok(ExperimentResult { plan: plan.clone(), trials })
}

/// Least-squares slope of ln y against ln x.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientData("a slope needs at least two points".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("all abscissae are equal".into()));
    }
    Ok(sxy / sxx)
}

/// One row per trial and parameter.
pub fn summary_table(result: &ExperimentResult) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec![
        "axis", "ny", "nx", "k", "parameter", "truth", "mean", "bias", "variance", "sd", "rmse", "predicted_sd",
        "efficiency", "fits", "converged", "failures",
    ];
    let names = crate::matern::PARAM_NAMES;
    let truth = result.plan.theta0.to_array();
    let mut rows = Vec::new();
    for t in &result.trials {
        for i in 0..3 {
            let (mean, bias, var, rmse) = match &t.stats {
                Some(s) => (s.mean[i], s.bias[i], s.covariance[(i, i)], s.rmse[i]),
                None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
            };
            let (psd, eff) = match &t.prediction {
                Some(p) => (p.covariance[(i, i)].max(0.0).sqrt(), p.ratio[(i, i)]),
                None => (f64::NAN, f64::NAN),
            };
            rows.push(vec![
                t.axis_value.to_string(),
                t.grid.ny.to_string(),
                t.grid.nx.to_string(),
                t.k_sum.to_string(),
                names[i].to_string(),
                truth[i].to_string(),
                mean.to_string(),
                bias.to_string(),
                var.to_string(),
                var.sqrt().to_string(),
                rmse.to_string(),
                psd.to_string(),
                eff.to_string(),
                t.estimates.len().to_string(),
                t.converged.to_string(),
                t.failures.to_string(),
            ]);
        }
    }
    (header, rows)
}
