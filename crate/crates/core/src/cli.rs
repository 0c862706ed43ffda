//! The `geoassess` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::ConfigMap;
use crate::covariance::MaternSpec;
use crate::criteria::{assess, kl_conditional, Method, ModelPair};
use crate::error::{Error, Result};
use crate::geometry::{gen_perturbed_grid, gen_regular_grid, GridRule, LocationSet, Rect};
use crate::io::{format_dataset, format_predictions, read_dataset, read_locations, write_text};
use crate::kriging::{gpp_krige, krige};
use crate::likelihood::{fit_mle, FitConfig, GppConfig};
use crate::simulation::{run_experiment, simulate_gp, ExperimentSpec, FitSpec, Scenario};
use crate::tlr::TlrConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "geoassess", version, about = "Matérn GP fitting, kriging and prediction-efficiency assessment")]
pub struct Cli {
    /// Worker threads (falls back to GEOASSESS_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a Matérn random field on a perturbed grid.
    Simulate(SimulateArgs),
    /// Maximum-likelihood fit.
    Fit(FitArgs),
    /// Kriging predictions.
    Predict(PredictArgs),
    /// Prediction-efficiency criteria of an approximate model.
    Assess(AssessArgs),
    /// Replicated simulation study.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "eff-range")]
    pub eff_range: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub nugget: Option<f64>,
}

impl ModelFlags {
    fn apply(&self, map: &mut ConfigMap) -> Result<()> {
        // A flag for one range parameterization displaces the other from the file.
        let mut set = |k: &str, v: Option<f64>| v.map(|v| map.set(k, &format!("{v:?}"))).transpose();
        set("sigma2", self.sigma2)?;
        set("alpha", self.alpha)?;
        set("eff_range", self.eff_range)?;
        set("nu", self.nu)?;
        set("nugget", self.nugget)?;
        if self.alpha.is_some() && self.eff_range.is_none() {
            map.remove("eff_range");
        }
        if self.eff_range.is_some() && self.alpha.is_none() {
            map.remove("alpha");
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of perturbed-grid locations (a perfect square).
    #[arg(long)]
    pub n: Option<usize>,
    /// Explicit `x,y` location file instead of a perturbed grid.
    #[arg(long)]
    pub locations: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Location seed; defaults to `seed − 1`.
    #[arg(long = "loc-seed")]
    pub loc_seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Data CSV with header `x,y,z`.
    pub data: PathBuf,
    /// Likelihood backend: exact, tlr, vecchia or gpp.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nb: Option<usize>,
    #[arg(long = "tlr-max-rank")]
    pub tlr_max_rank: Option<usize>,
    #[arg(long = "tlr-acc")]
    pub tlr_acc: Option<f64>,
    #[arg(long = "opt-tol")]
    pub opt_tol: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long = "vecchia-m")]
    pub vecchia_m: Option<usize>,
    #[arg(long = "knots-k")]
    pub knots_k: Option<usize>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model as `sigma2=..,alpha=..,nu=..[,nugget=..]`.
    #[arg(long)]
    pub params: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Interior `k × k` prediction grid on the unit square.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub locations: Option<PathBuf>,
    /// exact or gpp.
    #[arg(long, default_value = "exact")]
    pub method: String,
    #[arg(long = "knots-k", default_value_t = 8)]
    pub knots_k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// True model, `sigma2=..,alpha=..,nu=..[,nugget=..]`.
    #[arg(long = "true")]
    pub truth: String,
    /// Approximating model in the same form.
    #[arg(long)]
    pub approx: String,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub locations: Option<PathBuf>,
    /// plugin or stein; by default stein when both models share ν and
    /// nugget, plugin otherwise.
    #[arg(long)]
    pub method: Option<String>,
    /// Skip the K-L divergence.
    #[arg(long = "no-kl")]
    pub no_kl: bool,
    /// Also write the one-row summary CSV here.
    #[arg(long = "summary-csv")]
    pub summary_csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// misspecification, tlr-sweep or stein-example.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 144)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Run replicates `first-replicate..first-replicate + replicates` only.
    #[arg(long = "first-replicate", default_value_t = 0)]
    pub first_replicate: usize,
    #[arg(long = "h-eff", default_value_t = 0.2)]
    pub h_eff: f64,
    #[arg(long, default_value_t = 0.5)]
    pub nu: f64,
    #[arg(long)]
    pub grid: Option<usize>,
    /// tlr-sweep accuracies, comma separated.
    #[arg(long = "tlr-acc", value_delimiter = ',', default_values_t = vec![1e-5, 1e-7, 1e-9])]
    pub tlr_acc: Vec<f64>,
    #[arg(long)]
    pub nb: Option<usize>,
    #[arg(long = "tlr-max-rank")]
    pub tlr_max_rank: Option<usize>,
    #[arg(long = "opt-tol")]
    pub opt_tol: Option<f64>,
    /// Omit fit wall times so outputs are byte-identical across runs.
    #[arg(long = "no-timing")]
    pub no_timing: bool,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Primary output goes to `out`, the resolved configuration and errors to
/// `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match dispatch(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("GEOASSESS_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("GEOASSESS_THREADS=`{v}` is not a count"))),
        _ => Ok(None),
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let threads = thread_count(cli.threads)?;
    if threads == Some(0) {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    writeln!(err, "threads = {}", pool.current_num_threads())?;
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let result = pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &mut o, &mut e),
        Command::Fit(a) => cmd_fit(a, &mut o, &mut e),
        Command::Predict(a) => cmd_predict(a, &mut o, &mut e),
        Command::Assess(a) => cmd_assess(a, &mut o, &mut e),
        Command::Experiment(a) => cmd_experiment(a, &mut o, &mut e),
    });
    err.write_all(&e)?;
    out.write_all(&o)?;
    out.flush()?;
    result
}

fn emit(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn report_config(err: &mut dyn Write, map: &ConfigMap, seed: Option<u64>) -> Result<()> {
    writeln!(err, "resolved configuration:")?;
    for line in map.render().lines() {
        writeln!(err, "  {line}")?;
    }
    match seed {
        Some(s) => writeln!(err, "seed = {s}")?,
        None => writeln!(err, "seed = none")?,
    }
    Ok(())
}

fn load(path: Option<&Path>) -> Result<ConfigMap> {
    path.map(ConfigMap::read).transpose().map(Option::unwrap_or_default)
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

fn default_model() -> MaternSpec {
    MaternSpec { sigma2: 1.0, alpha: 0.1, nu: 0.5, nugget: 0.0 }
}

fn prediction_locations(grid: Option<usize>, file: Option<&Path>) -> Result<LocationSet> {
    match (grid, file) {
        (Some(_), Some(_)) => Err(Error::InvalidArgument("give only one of --grid and --locations".into())),
        (_, Some(p)) => read_locations(p),
        (g, None) => gen_regular_grid(g.unwrap_or(4), Rect::UNIT, GridRule::Interior),
    }
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut map = load(a.config.as_deref())?;
    a.model.apply(&mut map)?;
    if let Some(n) = a.n {
        map.set("n", &n.to_string())?;
    }
    if let Some(s) = a.seed {
        map.set("seed", &s.to_string())?;
    }
    if let Some(s) = a.loc_seed {
        map.set("loc_seed", &s.to_string())?;
    }
    map.check_keys(&["sigma2", "alpha", "eff_range", "nu", "nugget", "n", "seed", "loc_seed"])?;
    let spec = map.matern_spec("", default_model())?;
    let seed = map.usize("seed")?.map(|s| s as u64).unwrap_or(1);
    let locs = match &a.locations {
        Some(p) => read_locations(p)?,
        None => {
            let n = map
                .usize("n")?
                .ok_or_else(|| Error::InvalidArgument("simulate needs --n or --locations".into()))?;
            let loc_seed = map.usize("loc_seed")?.map(|s| s as u64).unwrap_or(seed.wrapping_sub(1));
            map.set("loc_seed", &loc_seed.to_string())?;
            gen_perturbed_grid(n, loc_seed)?
        }
    };
    map.set("alpha", &format!("{:?}", spec.alpha))?;
    report_config(err, &map, Some(seed))?;
    let data = simulate_gp(&locs, &spec, seed)?;
    emit(a.out.as_deref(), &format_dataset(&data), out)
}

fn cmd_fit(a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut map = load(a.config.as_deref())?;
    if let Some(m) = &a.method {
        map.set("backend", m)?;
    }
    let mut set = |k: &str, v: Option<String>| v.map(|v| map.set(k, &v)).transpose();
    set("tlr.nb", a.nb.map(|v| v.to_string()))?;
    set("tlr.tlr_max_rank", a.tlr_max_rank.map(|v| v.to_string()))?;
    set("tlr.tlr_acc", a.tlr_acc.map(|v| format!("{v:?}")))?;
    set("opt_tol", a.opt_tol.map(|v| format!("{v:?}")))?;
    set("max_iter", a.max_iter.map(|v| v.to_string()))?;
    set("vecchia.m", a.vecchia_m.map(|v| v.to_string()))?;
    set("gpp.knots_k", a.knots_k.map(|v| v.to_string()))?;
    for kv in &a.set {
        map.merge(&ConfigMap::parse(kv)?);
    }
    let cfg: FitConfig = map.fit_config()?;
    report_config(err, &map, None)?;
    let data = read_dataset(&a.data)?;
    let result = fit_mle(&data, &cfg)?;
    let mut echo = serde_json::Map::new();
    if let crate::likelihood::Backend::Tlr(t) = &cfg.backend {
        echo.insert("nb".into(), json!(t.nb));
        echo.insert("tlr_max_rank".into(), json!(t.tlr_max_rank));
        echo.insert("tlr_acc".into(), json!(t.tlr_acc));
    }
    echo.insert("opt_tol".into(), json!(cfg.opt_tol));
    let doc = json!({
        "config": map_json(&map),
        "fit_config": cfg,
        "echo": echo,
        "result": result,
    });
    emit(a.out.as_deref(), &to_json(&doc)?, out)
}

fn map_json(map: &ConfigMap) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    for k in map.keys() {
        m.insert(k.to_string(), json!(map.get(k).unwrap_or_default()));
    }
    serde_json::Value::Object(m)
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut map = load(a.config.as_deref())?;
    if let Some(p) = &a.params {
        map.merge(&ConfigMap::parse_inline(p)?);
    }
    map.check_keys(&["sigma2", "alpha", "eff_range", "nu", "nugget"])?;
    let spec = map.matern_spec("", default_model())?;
    let preds = prediction_locations(a.grid, a.locations.as_deref())?;
    let mut shown = map.clone();
    shown.set("method", &a.method)?;
    report_config(err, &shown, None)?;
    let data = read_dataset(&a.data)?;
    let k = match a.method.as_str() {
        "exact" => krige(&data, &preds, &spec)?,
        "gpp" => {
            let knots = gen_regular_grid(a.knots_k, Rect::UNIT, GridRule::Interior)?;
            gpp_krige(&data, &preds, &spec, &GppConfig { knots })?
        }
        other => return Err(Error::InvalidArgument(format!("unknown prediction method `{other}`"))),
    };
    emit(a.out.as_deref(), &format_predictions(&preds, &k), out)
}

fn cmd_assess(a: &AssessArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let base = default_model();
    let tmap = ConfigMap::parse_inline(&a.truth)?;
    let amap = ConfigMap::parse_inline(&a.approx)?;
    for m in [&tmap, &amap] {
        m.check_keys(&["sigma2", "alpha", "eff_range", "nu", "nugget"])?;
    }
    let pair = ModelPair {
        truth: tmap.matern_spec("", base)?,
        approx: amap.matern_spec("", base)?,
    };
    let method = match &a.method {
        Some(m) => m.parse::<Method>()?,
        None => Method::recommended(pair.truth.nu == pair.approx.nu && pair.truth.nugget == pair.approx.nugget),
    };
    let preds = prediction_locations(a.grid, a.locations.as_deref())?;
    let mut shown = ConfigMap::new();
    for (prefix, s) in [("true.", pair.truth), ("approx.", pair.approx)] {
        shown.set(&format!("{prefix}sigma2"), &format!("{:?}", s.sigma2))?;
        shown.set(&format!("{prefix}alpha"), &format!("{:?}", s.alpha))?;
        shown.set(&format!("{prefix}nu"), &format!("{:?}", s.nu))?;
        shown.set(&format!("{prefix}nugget"), &format!("{:?}", s.nugget))?;
    }
    shown.set("method", method.name())?;
    shown.set("prediction_points", &preds.len().to_string())?;
    report_config(err, &shown, None)?;
    let data = read_dataset(&a.data)?;
    let mut report = assess(&pair, &data, &preds, method)?;
    if !a.no_kl {
        report.kl = Some(kl_conditional(&pair, &data, &preds)?);
    }
    if let Some(p) = &a.summary_csv {
        let text = format!("{}\n{}\n", crate::criteria::EfficiencyReport::summary_csv_header(), report.summary_csv_row());
        write_text(p, &text)?;
    }
    emit(a.out.as_deref(), &to_json(&report)?, out)
}

fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let scenario: Scenario = a.scenario.parse()?;
    let mut spec = match scenario {
        Scenario::SteinExample => ExperimentSpec::stein_example(a.replicates, a.seed)?,
        Scenario::Misspecification => ExperimentSpec::misspecification(a.n, a.h_eff, a.replicates, a.seed)?,
        Scenario::TlrSweep => {
            let mut s = ExperimentSpec::misspecification(a.n, a.h_eff, a.replicates, a.seed)?;
            s.scenario = Scenario::TlrSweep;
            s.nu_true = a.nu;
            let truth = s.truth()?;
            let mut exact = FitConfig::exact(truth);
            if let Some(t) = a.opt_tol {
                exact.opt_tol = t;
            }
            let nb = a.nb.unwrap_or_else(|| (a.n / 4).max(1));
            let mut fits = vec![FitSpec { id: "exact".into(), config: exact.clone(), method: None }];
            for &acc in &a.tlr_acc {
                let mut c = exact.clone();
                c.backend = crate::likelihood::Backend::Tlr(TlrConfig::new(nb, a.tlr_max_rank.unwrap_or(nb), acc)?);
                fits.push(FitSpec { id: format!("tlr-{acc:e}"), config: c, method: None });
            }
            s.fits = fits;
            s
        }
    };
    if scenario == Scenario::Misspecification && a.nu != 0.5 {
        return Err(Error::InvalidArgument("the misspecification scenario has an exponential truth (nu = 0.5)".into()));
    }
    if let Some(g) = a.grid {
        spec.pred_grid = g;
    }
    if let (Some(t), Scenario::Misspecification) = (a.opt_tol, scenario) {
        for f in &mut spec.fits {
            f.config.opt_tol = t;
        }
    }
    spec.record_timing = !a.no_timing;
    spec.first_replicate = a.first_replicate;
    let mut shown = ConfigMap::new();
    shown.set("scenario", scenario.name())?;
    shown.set("n", &spec.n.to_string())?;
    shown.set("replicates", &spec.replicates.to_string())?;
    shown.set("first_replicate", &spec.first_replicate.to_string())?;
    shown.set("truth", &format!("{:?}", spec.truth()?))?;
    shown.set("prediction_grid", &spec.pred_grid.to_string())?;
    shown.set("configs", &spec.fits.iter().map(|f| f.id.as_str()).collect::<Vec<_>>().join(" "))?;
    shown.set("location_seed", &spec.location_seed().to_string())?;
    report_config(err, &shown, Some(spec.base_seed))?;
    let result = run_experiment(&spec, a.out_dir.as_deref())?;
    emit(None, &result.summary_csv(), out)
}
