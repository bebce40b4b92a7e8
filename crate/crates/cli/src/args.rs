use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Matérn random fields on gridded sampling windows.
///
/// Lengths are in the units named by --units (default "m"); variance is in
/// units squared. Grids are read and written in the MWGRID1 format.
#[derive(Parser, Debug)]
#[command(name = "mwhittle", version, about, long_about = None)]
pub struct Cli {
    /// Worker threads for ensembles and restarts (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate Matérn fields by circulant embedding.
    Simulate(SimulateArgs),
    /// Fit Matérn parameters to a field by debiased Whittle likelihood.
    Fit(FitArgs),
    /// Predict the estimator covariance for a window and parameter set.
    PredictCov(PredictArgs),
    /// Residual diagnostics of a field against given parameters.
    Diagnose(DiagnoseArgs),
    /// Spatial and spectral tables of a sampling window.
    WindowSpectrum(SpectrumArgs),
    /// Run an ensemble experiment over a trial axis.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ParamArgs {
    /// Variance σ².
    #[arg(long, allow_negative_numbers = true)]
    pub variance: f64,
    /// Smoothness ν.
    #[arg(long, allow_negative_numbers = true)]
    pub smoothness: f64,
    /// Range ρ.
    #[arg(long, allow_negative_numbers = true)]
    pub range: f64,
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    /// Rows.
    #[arg(long)]
    pub ny: Option<usize>,
    /// Columns (default: ny).
    #[arg(long)]
    pub nx: Option<usize>,
    /// Row spacing.
    #[arg(long, default_value_t = 1.0)]
    pub dy: f64,
    /// Column spacing (default: dy).
    #[arg(long)]
    pub dx: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct WindowArgs {
    /// Window weights in MWGRID1 format.
    #[arg(long, value_name = "PATH")]
    pub window: Option<PathBuf>,
    /// Window weights as CSV, one grid row per line.
    #[arg(long, value_name = "PATH", conflicts_with = "window")]
    pub mask: Option<PathBuf>,
    /// Window pattern as JSON, inline or @file, e.g.
    /// '{"kind":"random_deletion","fraction_observed":0.667,"seed":1}'.
    #[arg(long, value_name = "JSON", conflicts_with_all = ["window", "mask"])]
    pub pattern: Option<String>,
    /// Polygon vertices as CSV (x, y per line); keeps samples inside.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["window", "mask", "pattern"])]
    pub polygon: Option<PathBuf>,
    /// With --polygon, keep samples outside instead.
    #[arg(long, requires = "polygon")]
    pub exterior: bool,
    /// Cosine taper over this fraction of each side.
    #[arg(long, value_name = "FRACTION")]
    pub taper: Option<f64>,
    /// Iterations of cosine smoothing along the mask edge.
    #[arg(long, value_name = "N", conflicts_with = "taper")]
    pub mask_edge: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct FixArgs {
    /// Hold σ² at this value.
    #[arg(long)]
    pub fix_variance: Option<f64>,
    /// Hold ν at this value.
    #[arg(long)]
    pub fix_smoothness: Option<f64>,
    /// Hold ρ at this value.
    #[arg(long)]
    pub fix_range: Option<f64>,
}

impl FixArgs {
    pub fn fixed(&self) -> [Option<f64>; 3] {
        [self.fix_variance, self.fix_smoothness, self.fix_range]
    }
}

#[derive(Args, Debug, Clone)]
pub struct LikelihoodArgs {
    /// Keep k = 0 in the likelihood sums (only takes effect with --keep-mean).
    #[arg(long)]
    pub include_zero: bool,
    /// Do not remove the weighted mean before transforming.
    #[arg(long)]
    pub keep_mean: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SpecialCaseArg {
    VonKarman,
    Exponential,
    Whittle,
    Ar2,
    Ar3,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of fields; seeds run from --seed upward.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Output path; with --count > 1 an index is appended to the stem.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Minimum torus size as a multiple of the grid.
    #[arg(long, default_value_t = 2)]
    pub embed_factor: usize,
    /// Clamp negative circulant eigenvalues whatever their mass.
    #[arg(long)]
    pub clamp_negative: bool,
    #[arg(long, default_value = "m")]
    pub units: String,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Field in MWGRID1 format.
    #[arg(long)]
    pub field: PathBuf,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub fix: FixArgs,
    /// Fix ν at a named special case.
    #[arg(long, value_enum)]
    pub special_case: Option<SpecialCaseArg>,
    /// Starting point σ²,ν,ρ instead of the automatic guess.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub initial: Option<Vec<f64>>,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub max_iterations: usize,
    /// Bound on max |θᵢ ∂ℓ/∂θᵢ| at convergence.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Skip the sandwich covariance, Hessian and Fisher matrices.
    #[arg(long)]
    pub no_uncertainty: bool,
    /// Significance level of the residual test.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub likelihood: LikelihoodArgs,
    /// Report path (JSON); standard output when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Q-Q table of the residuals (CSV).
    #[arg(long)]
    pub qq_csv: Option<PathBuf>,
    /// Histogram of 2X (CSV).
    #[arg(long)]
    pub histogram_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Take the grid from this field instead of --ny/--nx.
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Parameters listed here are treated as known.
    #[command(flatten)]
    pub fix: FixArgs,
    #[command(flatten)]
    pub likelihood: LikelihoodArgs,
    #[arg(long, default_value = "m")]
    pub units: String,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub likelihood: LikelihoodArgs,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub qq_csv: Option<PathBuf>,
    #[arg(long)]
    pub histogram_csv: Option<PathBuf>,
    /// Residual field X(k) in MWGRID1 format (NaN outside the test set).
    #[arg(long)]
    pub residuals: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    /// Take the grid from this field instead of --ny/--nx.
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Zero padding factor in each direction.
    #[arg(long, default_value_t = 2)]
    pub pad: usize,
    /// |w(k)|² in MWGRID1 format.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Table of wavenumbers and |w(k)|² (CSV).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// The weights w(x) actually used, in MWGRID1 format.
    #[arg(long)]
    pub window_out: Option<PathBuf>,
    /// Summary (JSON); standard output when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, default_value = "m")]
    pub units: String,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum KindArg {
    GrowingDomain,
    Infill,
    FillMissing,
    Ensemble,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Experiment kind; ignored with --plan.
    #[arg(value_enum, required_unless_present = "plan")]
    pub kind: Option<KindArg>,
    /// Full plan as JSON; flags below are then ignored.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Trial axis: grid sizes, subsampling steps or observed fractions.
    #[arg(long, value_delimiter = ',')]
    pub axis: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub realizations: usize,
    #[arg(long, required_unless_present = "plan")]
    pub variance: Option<f64>,
    #[arg(long, required_unless_present = "plan")]
    pub smoothness: Option<f64>,
    #[arg(long, required_unless_present = "plan")]
    pub range: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Window pattern as JSON, inline or @file.
    #[arg(long)]
    pub pattern: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[command(flatten)]
    pub fix: FixArgs,
    /// Skip the predicted covariance and efficiency per trial.
    #[arg(long)]
    pub no_predict: bool,
    #[arg(long, default_value = "m")]
    pub units: String,
    /// Directory for plan.json, result.json, summary.csv and estimates.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}
