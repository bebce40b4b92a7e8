use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use matern_whittle::diagnose::{diagnose, ResidualReport};
use matern_whittle::estimate::{fit_with, EstimateReport, FitOptions};
use matern_whittle::experiment::{run_experiment, summary_table, ExperimentKind, ExperimentPlan};
use matern_whittle::grid::{
    make_window, smooth_boundary, spectral_window, GridSpec, SamplingWindow, SmoothingStyle, WindowPattern,
};
use matern_whittle::io::{self, GridContainer};
use matern_whittle::likelihood::{LikelihoodConfig, Whittle};
use matern_whittle::matern::{MaternParams, SpecialCase, PARAM_NAMES};
use matern_whittle::simulate::{CirculantEmbedding, Field, SimulationOptions};
use matern_whittle::uncertainty::{efficiency_with, inverse_on_active};
use nalgebra::Matrix3;
use serde_json::{json, Value};

use crate::args::*;

fn params(p: &ParamArgs) -> Result<MaternParams> {
    Ok(MaternParams::new(p.variance, p.smoothness, p.range)?)
}

fn grid(g: &GridArgs) -> Result<GridSpec> {
    let Some(ny) = g.ny else {
        bail!("a grid size is needed: pass --ny (and optionally --nx)");
    };
    Ok(GridSpec::new(ny, g.nx.unwrap_or(ny), g.dy, g.dx.unwrap_or(g.dy))?)
}

fn likelihood(l: &LikelihoodArgs) -> LikelihoodConfig {
    LikelihoodConfig {
        exclude_zero: !l.include_zero,
        demean: !l.keep_mean,
    }
}

fn read_field(path: &Path) -> Result<(Field, String)> {
    let c = io::read_grid(path).with_context(|| format!("reading {}", path.display()))?;
    let units = c.header.units.clone();
    Ok((c.to_field()?, units))
}

/// Inline JSON, or `@path` to read it from a file.
fn parse_pattern(s: &str) -> Result<WindowPattern> {
    let text = match s.strip_prefix('@') {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {p}"))?,
        None => s.to_string(),
    };
    serde_json::from_str(&text).context("parsing the window pattern")
}

fn build_window(grid: GridSpec, w: &WindowArgs) -> Result<SamplingWindow> {
    let base = if let Some(p) = &w.window {
        let win = io::read_grid(p).with_context(|| format!("reading {}", p.display()))?.to_window()?;
        if win.grid.shape() != grid.shape() {
            bail!("window is {:?} but the grid is {:?}", win.grid.shape(), grid.shape());
        }
        SamplingWindow::new(grid, win.weights)?
    } else if let Some(p) = &w.mask {
        let win = io::read_mask_csv(p, grid.dy, grid.dx)?;
        if win.grid.shape() != grid.shape() {
            bail!("mask is {:?} but the grid is {:?}", win.grid.shape(), grid.shape());
        }
        win
    } else if let Some(s) = &w.pattern {
        make_window(grid, &parse_pattern(s)?)?
    } else if let Some(p) = &w.polygon {
        let path = io::read_polygon_csv(p)?;
        let pattern = if w.exterior {
            WindowPattern::PolygonExterior { path }
        } else {
            WindowPattern::PolygonInterior { path }
        };
        make_window(grid, &pattern)?
    } else {
        SamplingWindow::full(grid)?
    };
    let smoothed = match (w.taper, w.mask_edge) {
        (Some(f), _) => smooth_boundary(&base, SmoothingStyle::PerimeterCosine { fraction: f })?,
        (None, Some(n)) => smooth_boundary(&base, SmoothingStyle::mask_edge(n))?,
        (None, None) => base,
    };
    Ok(smoothed)
}

fn labelled(m: &Matrix3<f64>) -> Value {
    let rows: Vec<Vec<Value>> = (0..3)
        .map(|i| (0..3).map(|j| finite(m[(i, j)])).collect())
        .collect();
    json!({ "labels": PARAM_NAMES, "matrix": rows })
}

fn labelled_vec(v: [f64; 3]) -> Value {
    let mut o = serde_json::Map::new();
    for (n, x) in PARAM_NAMES.iter().zip(v) {
        o.insert(n.to_string(), finite(x));
    }
    Value::Object(o)
}

fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn window_summary(w: &SamplingWindow) -> Value {
    json!({
        "ny": w.grid.ny,
        "nx": w.grid.nx,
        "dy": w.grid.dy,
        "dx": w.grid.dx,
        "k_sum": w.k_sum,
        "observed_fraction": w.observed_fraction(),
        "binary": w.is_binary(),
    })
}

fn emit(value: &Value, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(p) => io::write_json(value, p).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut s = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut s, value)?;
            writeln!(s)?;
        }
    }
    Ok(())
}

fn residual_tables(d: &ResidualReport, qq: Option<&PathBuf>, hist: Option<&PathBuf>) -> Result<()> {
    if let Some(p) = qq {
        let rows: Vec<Vec<String>> = d.qq_points.iter().map(|(a, b)| vec![a.to_string(), b.to_string()]).collect();
        io::write_table_csv(p, &["chi2_2_quantile", "empirical_2x"], &rows)?;
    }
    if let Some(p) = hist {
        let h = &d.histogram;
        let rows: Vec<Vec<String>> = h
            .counts
            .iter()
            .enumerate()
            .map(|(i, c)| vec![h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()])
            .collect();
        io::write_table_csv(p, &["lower", "upper", "count"], &rows)?;
    }
    Ok(())
}

fn indexed_path(base: &Path, i: usize, count: usize) -> PathBuf {
    if count == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(e) => format!("{stem}_{i:04}.{}", e.to_string_lossy()),
        None => format!("{stem}_{i:04}"),
    };
    base.with_file_name(name)
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let g = grid(&a.grid)?;
    let p = params(&a.params)?;
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    let opts = SimulationOptions {
        embed_factor: a.embed_factor,
        clamp_negative_eigs: a.clamp_negative,
    };
    let emb = CirculantEmbedding::new(&p, &g, opts)?;
    for i in 0..a.count {
        let seed = a.seed + i as u64;
        let f = emb.sample(seed);
        let mut c = GridContainer::from_field(&f).with_units(&a.units);
        let m = &mut c.header.metadata;
        m.insert("params".into(), serde_json::to_value(p)?);
        m.insert("seed".into(), json!(seed));
        m.insert("embedding".into(), serde_json::to_value(emb.info)?);
        let path = indexed_path(&a.out, i, a.count);
        io::write_grid(&c, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    log::info!("wrote {} field(s) on a {}x{} grid", a.count, g.ny, g.nx);
    Ok(())
}

fn special_case(s: SpecialCaseArg) -> SpecialCase {
    match s {
        SpecialCaseArg::VonKarman => SpecialCase::VonKarman,
        SpecialCaseArg::Exponential => SpecialCase::Exponential,
        SpecialCaseArg::Whittle => SpecialCase::Whittle,
        SpecialCaseArg::Ar2 => SpecialCase::Ar2,
        SpecialCaseArg::Ar3 => SpecialCase::Ar3,
    }
}

fn report_json(r: &EstimateReport, window: &SamplingWindow, units: &str) -> Result<Value> {
    let mut v = serde_json::to_value(r)?;
    let o = v.as_object_mut().expect("report is an object");
    o.insert("units".into(), json!(units));
    o.insert("window".into(), window_summary(window));
    if let Some(c) = &r.covariance {
        o.insert("covariance".into(), labelled(&c.matrix));
        o.insert("correlations".into(), labelled(&c.correlations));
        o.insert("standard_deviations".into(), labelled_vec(c.standard_deviations()));
    }
    if let Some(h) = &r.hessian {
        o.insert("hessian".into(), labelled(h));
    }
    if let Some(f) = &r.fisher {
        o.insert("fisher".into(), labelled(f));
    }
    o.insert("params_hat_labelled".into(), labelled_vec(r.params_hat.to_array()));
    Ok(v)
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let (field, units) = read_field(&a.field)?;
    let window = build_window(field.grid, &a.window)?;
    let initial = match &a.initial {
        Some(v) => Some([v[0], v[1], v[2]]),
        None => None,
    };
    let opts = FitOptions {
        fixed: a.fix.fixed(),
        special_case: a.special_case.map(special_case),
        initial,
        max_iterations: a.max_iterations,
        gradient_tolerance: a.tolerance,
        restarts: a.restarts,
        seed: a.seed,
        uncertainty: !a.no_uncertainty,
        alpha: a.alpha,
        likelihood: likelihood(&a.likelihood),
    };
    let whittle = Whittle::new(&window, opts.likelihood);
    let report = fit_with(&field, &whittle, &opts)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if let Some(d) = &report.diagnostics {
        residual_tables(d, a.qq_csv.as_ref(), a.histogram_csv.as_ref())?;
    }
    emit(&report_json(&report, &window, &units)?, a.out.as_ref())
}

pub fn predict_cov(a: &PredictArgs) -> Result<()> {
    let g = match &a.field {
        Some(p) => read_field(p)?.0.grid,
        None => match (&a.window.window, a.grid.ny) {
            (Some(w), None) => io::read_grid(w)?.grid()?,
            _ => grid(&a.grid)?,
        },
    };
    let window = build_window(g, &a.window)?;
    let fixed = a.fix.fixed();
    let mut p = params(&a.params)?;
    let active = [fixed[0].is_none(), fixed[1].is_none(), fixed[2].is_none()];
    if !active.iter().any(|&x| x) {
        bail!("at least one parameter must be free");
    }
    let mut t = p.to_array();
    for i in 0..3 {
        if let Some(v) = fixed[i] {
            t[i] = v;
        }
    }
    p = MaternParams::from_array(t)?.with_active(active);
    let whittle = Whittle::new(&window, likelihood(&a.likelihood));
    let eff = efficiency_with(&p, &whittle)?;
    let fisher = whittle.fisher(&p)?;
    let act = p.active_indices();
    let inv = inverse_on_active(&fisher, &act)?;
    let sd = [0, 1, 2].map(|i| eff.covariance[(i, i)].max(0.0).sqrt());
    let corr = matern_whittle::uncertainty::correlations(&eff.covariance);
    let value = json!({
        "params": p,
        "units": a.units,
        "window": window_summary(&window),
        "covariance": labelled(&eff.covariance),
        "correlations": labelled(&corr),
        "standard_deviations": labelled_vec(sd),
        "relative_standard_deviations": labelled_vec([0, 1, 2].map(|i| sd[i] / t[i])),
        "fisher": labelled(&fisher),
        "inverse_fisher": labelled(&inv),
        "inverse_fisher_scaled": labelled(&eff.inverse_fisher),
        "efficiency": labelled(&eff.ratio),
    });
    emit(&value, a.out.as_ref())
}

pub fn diagnose_cmd(a: &DiagnoseArgs) -> Result<()> {
    let (field, units) = read_field(&a.field)?;
    let window = build_window(field.grid, &a.window)?;
    let p = params(&a.params)?;
    let whittle = Whittle::new(&window, likelihood(&a.likelihood));
    let pergram = whittle.periodogram(&field)?;
    let sbar = whittle.blurred_density(&p)?;
    let d = diagnose(&pergram, &sbar, a.alpha)?;
    residual_tables(&d, a.qq_csv.as_ref(), a.histogram_csv.as_ref())?;
    if let (Some(path), Some(x)) = (&a.residuals, &d.residual_field) {
        let c = GridContainer::from_spectral(x).with_units(&units);
        io::write_grid(&c, path)?;
    }
    let mut v = serde_json::to_value(&d)?;
    let o = v.as_object_mut().expect("report is an object");
    o.insert("params".into(), serde_json::to_value(p)?);
    o.insert("units".into(), json!(units));
    o.insert("window".into(), window_summary(&window));
    emit(&v, a.out.as_ref())
}

pub fn window_spectrum(a: &SpectrumArgs) -> Result<()> {
    let g = match &a.field {
        Some(p) => read_field(p)?.0.grid,
        None => match (&a.window.window, a.grid.ny) {
            (Some(w), None) => io::read_grid(w)?.grid()?,
            _ => grid(&a.grid)?,
        },
    };
    let window = build_window(g, &a.window)?;
    let sw = spectral_window(&window, a.pad)?;
    let peak = sw.values[[0, 0]];
    if let Some(p) = &a.out {
        io::write_grid(&GridContainer::from_spectral(&sw).with_units(&a.units), p)?;
    }
    if let Some(p) = &a.window_out {
        io::write_grid(&GridContainer::from_window(&window).with_units(&a.units), p)?;
    }
    if let Some(p) = &a.csv {
        let (ky, kx) = sw.grid.wavenumbers();
        let mut rows = Vec::with_capacity(sw.values.len());
        for ((i, j), &v) in sw.values.indexed_iter() {
            rows.push(vec![
                ky[i].to_string(),
                kx[j].to_string(),
                ky[i].hypot(kx[j]).to_string(),
                v.to_string(),
                (v / peak).to_string(),
            ]);
        }
        io::write_table_csv(p, &["ky", "kx", "k", "power", "relative_power"], &rows)?;
    }
    // share of |w(k)|² outside the central lobe of the full-grid kernel
    let (py, px) = sw.grid.shape();
    let (ry, rx) = (py / g.ny, px / g.nx);
    let mut central = 0.0;
    for ((i, j), &v) in sw.values.indexed_iter() {
        let di = i.min(py - i);
        let dj = j.min(px - j);
        if di < ry && dj < rx {
            central += v;
        }
    }
    let total: f64 = sw.values.sum();
    let value = json!({
        "units": a.units,
        "window": window_summary(&window),
        "pad_factor": a.pad,
        "transform_shape": [py, px],
        "peak_power": peak,
        "total_power": total,
        "central_lobe_fraction": central / total,
    });
    emit(&value, a.summary.as_ref())
}

fn kind(k: KindArg) -> ExperimentKind {
    match k {
        KindArg::GrowingDomain => ExperimentKind::GrowingDomain,
        KindArg::Infill => ExperimentKind::Infill,
        KindArg::FillMissing => ExperimentKind::FillMissing,
        KindArg::Ensemble => ExperimentKind::Ensemble,
    }
}

fn plan_from_flags(a: &ExperimentArgs) -> Result<ExperimentPlan> {
    let k = kind(a.kind.expect("clap requires a kind without --plan"));
    let theta0 = MaternParams::new(
        a.variance.expect("clap requires --variance"),
        a.smoothness.expect("clap requires --smoothness"),
        a.range.expect("clap requires --range"),
    )?;
    let base_grid = match (k, a.grid.ny) {
        (ExperimentKind::GrowingDomain, None) => {
            let n = a.axis.first().copied().unwrap_or(1.0).max(1.0) as usize;
            GridSpec::new(n, n, a.grid.dy, a.grid.dx.unwrap_or(a.grid.dy))?
        }
        _ => grid(&a.grid)?,
    };
    let window_pattern = match &a.pattern {
        Some(s) => parse_pattern(s)?,
        None => WindowPattern::Full,
    };
    Ok(ExperimentPlan {
        kind: k,
        base_grid,
        trial_axis: a.axis.clone(),
        n_realizations: a.realizations,
        theta0,
        window_pattern,
        seed: a.seed,
        fit: FitOptions {
            fixed: a.fix.fixed(),
            restarts: a.restarts,
            uncertainty: false,
            ..Default::default()
        },
        predict: !a.no_predict,
        simulation: SimulationOptions::default(),
        units: a.units.clone(),
    })
}

pub fn experiment(a: &ExperimentArgs) -> Result<()> {
    let plan = match &a.plan {
        Some(p) => io::read_json::<ExperimentPlan>(p).with_context(|| format!("reading {}", p.display()))?,
        None => plan_from_flags(a)?,
    };
    plan.validate()?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    io::write_json(&plan, a.out_dir.join("plan.json"))?;
    let result = run_experiment(&plan)?;
    io::write_json(&result, a.out_dir.join("result.json"))?;
    let (header, rows) = summary_table(&result);
    io::write_table_csv(a.out_dir.join("summary.csv"), &header, &rows)?;
    let mut est = Vec::new();
    for t in &result.trials {
        for (r, e) in t.estimates.iter().enumerate() {
            est.push(vec![
                t.axis_value.to_string(),
                r.to_string(),
                e[0].to_string(),
                e[1].to_string(),
                e[2].to_string(),
            ]);
        }
    }
    io::write_table_csv(
        a.out_dir.join("estimates.csv"),
        &["axis", "member", "variance", "smoothness", "range"],
        &est,
    )?;
    for t in &result.trials {
        log::info!(
            "trial {}: {} fits, {} converged, {} failed",
            t.axis_value,
            t.estimates.len(),
            t.converged,
            t.failures
        );
    }
    Ok(())
}
