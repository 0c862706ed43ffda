use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{effective_range_to_alpha, MaternSpec};
use crate::criteria::{assess, kl_conditional, prediction_scores, Method, ModelPair};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{gen_perturbed_grid, gen_regular_grid, seeded_rng, GridRule, Location, LocationSet, Rect};
use crate::io::write_text;
use crate::kriging::krige;
use crate::likelihood::{exact_loglik, fit_mle, FitConfig, Param, Termination};

use super::simulate_gp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Perturbed-grid locations, each fit config estimated by MLE.
    Misspecification,
    /// Same protocol as `Misspecification`, used with a list of TLR configs.
    TlrSweep,
    /// Four unit-square corners predicting the center; the "estimate" is the
    /// truth perturbed by `N(0, perturb_sd²)` noise instead of a fit.
    SteinExample,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Misspecification => "misspecification",
            Scenario::TlrSweep => "tlr-sweep",
            Scenario::SteinExample => "stein-example",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "misspecification" => Ok(Scenario::Misspecification),
            "tlr-sweep" => Ok(Scenario::TlrSweep),
            "stein-example" => Ok(Scenario::SteinExample),
            other => Err(Error::InvalidArgument(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub id: String,
    pub config: FitConfig,
    /// Criteria method for this config; `None` picks Stein's when the config
    /// can represent the truth and plug-in otherwise.
    pub method: Option<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub sigma2_true: f64,
    pub nu_true: f64,
    pub h_eff: f64,
    pub replicates: usize,
    /// Index of the first replicate run; with `replicates` this selects the
    /// range `first_replicate..first_replicate + replicates`.
    #[serde(default)]
    pub first_replicate: usize,
    /// Replicate `r` uses seed `base_seed + r`; locations use `base_seed − 1`.
    pub base_seed: u64,
    pub fits: Vec<FitSpec>,
    /// Side of the interior prediction grid (`k × k` points at `i/(k+1)`).
    pub pred_grid: usize,
    pub compute_kl: bool,
    /// Parameter noise sd for the Stein example, as `(sd_sigma2, sd_alpha)`.
    pub perturb_sd: (f64, f64),
    /// Record fit wall times; off by default so repeated runs are
    /// byte-identical.
    pub record_timing: bool,
}

impl ExperimentSpec {
    /// Exponential truth fitted by the exponential model (ν = 0.5, no nugget)
    /// and by Whittle plus nugget (ν = 1, τ² free).
    pub fn misspecification(n: usize, h_eff: f64, replicates: usize, base_seed: u64) -> Result<Self> {
        let truth = MaternSpec::exponential_from_range(1.0, h_eff)?;
        let exponential = FitConfig::exact(truth);
        let mut whittle = FitConfig::exact(MaternSpec::with_nugget(1.0, effective_range_to_alpha(h_eff, 1.0)?, 1.0, 0.01)?);
        whittle.fixed = vec![Param::Nu];
        Ok(ExperimentSpec {
            scenario: Scenario::Misspecification,
            n,
            sigma2_true: 1.0,
            nu_true: 0.5,
            h_eff,
            replicates,
            first_replicate: 0,
            base_seed,
            fits: vec![
                FitSpec { id: "exponential".into(), config: exponential, method: Some(Method::Plugin) },
                FitSpec { id: "whittle-nugget".into(), config: whittle, method: Some(Method::Plugin) },
            ],
            pred_grid: 4,
            compute_kl: true,
            perturb_sd: (0.0, 0.0),
            record_timing: false,
        })
    }

    /// `σ₀² = 1`, `α₀ = 0.1`, perturbations with sd 0.01 on both; one row per
    /// criteria method.
    pub fn stein_example(replicates: usize, base_seed: u64) -> Result<Self> {
        let init = MaternSpec::new(1.0, 0.1, 0.5)?;
        let fit = |id: &str, m| FitSpec { id: id.into(), config: FitConfig::exact(init), method: Some(m) };
        Ok(ExperimentSpec {
            scenario: Scenario::SteinExample,
            n: 4,
            sigma2_true: 1.0,
            nu_true: 0.5,
            h_eff: crate::covariance::alpha_to_effective_range(0.1, 0.5)?,
            replicates,
            first_replicate: 0,
            base_seed,
            fits: vec![fit("plugin", Method::Plugin), fit("stein", Method::Stein)],
            pred_grid: 1,
            compute_kl: false,
            perturb_sd: (0.01, 0.01),
            record_timing: false,
        })
    }

    pub fn truth(&self) -> Result<MaternSpec> {
        if self.scenario == Scenario::SteinExample {
            return MaternSpec::new(self.sigma2_true, 0.1, self.nu_true);
        }
        MaternSpec::new(self.sigma2_true, effective_range_to_alpha(self.h_eff, self.nu_true)?, self.nu_true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicate count must be at least 1".into()));
        }
        if self.fits.is_empty() {
            return Err(Error::InvalidArgument("no fit configs".into()));
        }
        if self.pred_grid == 0 {
            return Err(Error::InvalidArgument("prediction grid must be at least 1×1".into()));
        }
        for (i, f) in self.fits.iter().enumerate() {
            if self.fits[..i].iter().any(|g| g.id == f.id) {
                return Err(Error::InvalidArgument(format!("duplicate config id `{}`", f.id)));
            }
            f.config.validate()?;
        }
        if self.scenario == Scenario::SteinExample && self.n != 4 {
            return Err(Error::InvalidArgument("stein-example uses exactly 4 locations".into()));
        }
        self.truth()?.validate()
    }

    pub fn location_seed(&self) -> u64 {
        self.base_seed.wrapping_sub(1)
    }

    pub fn replicate_seed(&self, rep: usize) -> u64 {
        self.base_seed.wrapping_add(rep as u64)
    }

    pub fn locations(&self) -> Result<LocationSet> {
        match self.scenario {
            Scenario::SteinExample => LocationSet::explicit(vec![
                Location::new(0.0, 0.0),
                Location::new(0.0, 1.0),
                Location::new(1.0, 0.0),
                Location::new(1.0, 1.0),
            ]),
            _ => gen_perturbed_grid(self.n, self.location_seed()),
        }
    }

    pub fn prediction_locations(&self) -> Result<LocationSet> {
        gen_regular_grid(self.pred_grid, Rect::UNIT, GridRule::Interior)
    }

    fn method_for(&self, fit: &FitSpec, truth: &MaternSpec) -> Method {
        fit.method.unwrap_or_else(|| {
            let cfg = &fit.config;
            let free = |p| !cfg.fixed.contains(&p);
            let nu_ok = free(Param::Nu) || cfg.init.nu == truth.nu;
            let nugget_ok = free(Param::Nugget) || cfg.init.nugget == truth.nugget;
            Method::recommended(nu_ok && nugget_ok)
        })
    }
}

/// One row per replicate and fit config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub config_id: String,
    pub seed: u64,
    pub location_fingerprint: u64,
    pub theta_hat: Option<MaternSpec>,
    pub loglik: Option<f64>,
    pub fit_seconds: Option<f64>,
    pub method: Method,
    pub mloe: Option<f64>,
    pub mmom: Option<f64>,
    pub rmom: Option<f64>,
    pub kl: Option<f64>,
    pub mspe: Option<f64>,
    pub clamp_count: Option<usize>,
    /// `ok`, `max-iter`, or the error kind of the failure.
    pub status: String,
}

impl ReplicateRecord {
    pub const CSV_HEADER: &'static str =
        "rep,config_id,seed,sigma2_hat,alpha_hat,nu_hat,nugget_hat,loglik,fit_seconds,mloe,mmom,rmom,kl,mspe,clamp_count,status";

    pub fn succeeded(&self) -> bool {
        self.mloe.is_some()
    }

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let th = |g: fn(&MaternSpec) -> f64| f(self.theta_hat.as_ref().map(g));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.rep,
            self.config_id,
            self.seed,
            th(|t| t.sigma2),
            th(|t| t.alpha),
            th(|t| t.nu),
            th(|t| t.nugget),
            f(self.loglik),
            f(self.fit_seconds),
            f(self.mloe),
            f(self.mmom),
            f(self.rmom),
            f(self.kl),
            f(self.mspe),
            self.clamp_count.map(|c| c.to_string()).unwrap_or_default(),
            self.status
        )
    }
}

/// Mean and sample standard deviation over the successful rows of one config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_id: String,
    pub n_ok: usize,
    pub n_failed: usize,
    /// `(column, mean, sd)` in per-replicate CSV column order.
    pub stats: Vec<(String, f64, f64)>,
}

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "sigma2_hat",
    "alpha_hat",
    "nu_hat",
    "nugget_hat",
    "loglik",
    "fit_seconds",
    "mloe",
    "mmom",
    "rmom",
    "kl",
    "mspe",
];

fn column_value(r: &ReplicateRecord, col: &str) -> Option<f64> {
    let th = r.theta_hat.as_ref();
    match col {
        "sigma2_hat" => th.map(|t| t.sigma2),
        "alpha_hat" => th.map(|t| t.alpha),
        "nu_hat" => th.map(|t| t.nu),
        "nugget_hat" => th.map(|t| t.nugget),
        "loglik" => r.loglik,
        "fit_seconds" => r.fit_seconds,
        "mloe" => r.mloe,
        "mmom" => r.mmom,
        "rmom" => r.rmom,
        "kl" => r.kl,
        "mspe" => r.mspe,
        _ => None,
    }
}

/// Mean and sample sd (`NaN` when fewer than two values) summed in input
/// order.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1) as f64).sqrt())
}

impl SummaryRow {
    pub fn csv_header() -> String {
        let mut h = String::from("config_id,n_ok,n_failed");
        for c in SUMMARY_COLUMNS {
            let _ = write!(h, ",{c}_mean,{c}_sd");
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{},{}", self.config_id, self.n_ok, self.n_failed);
        for (_, m, sd) in &self.stats {
            let _ = write!(s, ",{m:?},{sd:?}");
        }
        s
    }

    pub fn get(&self, col: &str) -> Option<(f64, f64)> {
        self.stats.iter().find(|(c, _, _)| c == col).map(|&(_, m, s)| (m, s))
    }
}

pub fn summarize(config_ids: &[String], records: &[ReplicateRecord]) -> Vec<SummaryRow> {
    config_ids
        .iter()
        .map(|id| {
            let rows: Vec<&ReplicateRecord> = records.iter().filter(|r| &r.config_id == id).collect();
            let ok: Vec<&&ReplicateRecord> = rows.iter().filter(|r| r.succeeded()).collect();
            let stats = SUMMARY_COLUMNS
                .iter()
                .map(|&c| {
                    let vals: Vec<f64> = ok.iter().filter_map(|r| column_value(r, c)).collect();
                    let (m, s) = mean_sd(&vals);
                    (c.to_string(), m, s)
                })
                .collect();
            SummaryRow {
                config_id: id.clone(),
                n_ok: ok.len(),
                n_failed: rows.len() - ok.len(),
                stats,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub location_fingerprint: u64,
    pub records: Vec<ReplicateRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentOutput {
    pub fn replicate_csv(&self) -> String {
        let mut s = String::from(ReplicateRecord::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = SummaryRow::csv_header();
        s.push('\n');
        for r in &self.summary {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn records_for<'a>(&'a self, config_id: &'a str) -> impl Iterator<Item = &'a ReplicateRecord> + 'a {
        self.records.iter().filter(move |r| r.config_id == config_id)
    }
}

struct Shared {
    truth: MaternSpec,
    locs: LocationSet,
    preds: LocationSet,
    joint: LocationSet,
    fingerprint: u64,
}

/// Runs every replicate (in parallel), then writes `replicates.csv`,
/// `summary.csv` and `experiment.json` to `out_dir` when one is given.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: Option<&Path>) -> Result<ExperimentOutput> {
    spec.validate()?;
    let truth = spec.truth()?;
    let locs = spec.locations()?;
    let preds = spec.prediction_locations()?;
    let mut all = locs.points().to_vec();
    all.extend_from_slice(preds.points());
    let joint = LocationSet::explicit(all)?;
    let shared = Shared {
        truth,
        fingerprint: locs.fingerprint(),
        locs,
        preds,
        joint,
    };

    let first = spec.first_replicate;
    let records: Vec<ReplicateRecord> = (first..first + spec.replicates)
        .into_par_iter()
        .map(|rep| run_replicate(spec, &shared, rep))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    for r in &records {
        assert_eq!(r.location_fingerprint, shared.fingerprint, "replicate {} saw different locations", r.rep);
    }
    let ids: Vec<String> = spec.fits.iter().map(|f| f.id.clone()).collect();
    let out = ExperimentOutput {
        location_fingerprint: shared.fingerprint,
        summary: summarize(&ids, &records),
        records,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_text(&dir.join("replicates.csv"), &out.replicate_csv())?;
        write_text(&dir.join("summary.csv"), &out.summary_csv())?;
        let meta = serde_json::json!({
            "spec": spec,
            "truth": truth,
            "location_seed": spec.location_seed(),
            "location_fingerprint": format!("{:016x}", shared.fingerprint),
        });
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        write_text(&dir.join("experiment.json"), &(text + "\n"))?;
    }
    Ok(out)
}

fn failure_row(spec: &ExperimentSpec, sh: &Shared, rep: usize, fit: &FitSpec, status: &str) -> ReplicateRecord {
    ReplicateRecord {
        rep,
        config_id: fit.id.clone(),
        seed: spec.replicate_seed(rep),
        location_fingerprint: sh.fingerprint,
        theta_hat: None,
        loglik: None,
        fit_seconds: None,
        method: spec.method_for(fit, &sh.truth),
        mloe: None,
        mmom: None,
        rmom: None,
        kl: None,
        mspe: None,
        clamp_count: None,
        status: status.to_string(),
    }
}

fn run_replicate(spec: &ExperimentSpec, sh: &Shared, rep: usize) -> Vec<ReplicateRecord> {
    let seed = spec.replicate_seed(rep);
    let (data, truth_at_preds) = match simulate_gp(&sh.joint, &sh.truth, seed) {
        Ok(d) => {
            let n = sh.locs.len();
            let obs = Dataset::new(sh.locs.clone(), d.values[..n].to_vec());
            match obs {
                Ok(o) => (o, d.values[n..].to_vec()),
                Err(e) => return spec.fits.iter().map(|f| failure_row(spec, sh, rep, f, e.kind())).collect(),
            }
        }
        Err(e) => return spec.fits.iter().map(|f| failure_row(spec, sh, rep, f, e.kind())).collect(),
    };

    // The Stein example shares one perturbed θ across its rows.
    let perturbed = (spec.scenario == Scenario::SteinExample).then(|| perturb(&sh.truth, spec.perturb_sd, seed).map_err(|e| e.kind()));

    spec.fits
        .iter()
        .map(|fit| {
            let method = spec.method_for(fit, &sh.truth);
            let estimate = match &perturbed {
                Some(p) => p.map(|theta| {
                    let ll = exact_loglik(&data, &theta).ok();
                    (theta, ll, 0.0, "ok")
                }),
                None => {
                    let start = Instant::now();
                    fit_mle(&data, &fit.config).and_then(|r| {
                        let secs = start.elapsed().as_secs_f64();
                        match r.termination {
                            Termination::Failure => Err(Error::FitFailure("every likelihood evaluation failed".into())),
                            Termination::MaxIter => Ok((r.theta_hat, Some(r.loglik), secs, "max-iter")),
                            Termination::Converged => Ok((r.theta_hat, Some(r.loglik), secs, "ok")),
                        }
                    })
                    .map_err(|e| e.kind())
                }
            };
            let (theta, loglik, secs, status) = match estimate {
                Ok(x) => x,
                Err(kind) => return failure_row(spec, sh, rep, fit, kind),
            };
            let mut row = failure_row(spec, sh, rep, fit, status);
            row.theta_hat = Some(theta);
            row.loglik = loglik;
            row.fit_seconds = spec.record_timing.then_some(secs);
            row.method = method;
            let pair = ModelPair { truth: sh.truth, approx: theta };
            let scored = (|| -> Result<()> {
                let report = assess(&pair, &data, &sh.preds, method)?;
                let kl = if spec.compute_kl { Some(kl_conditional(&pair, &data, &sh.preds)?) } else { None };
                let pred = krige(&data, &sh.preds, &theta)?.pred;
                let (mspe, _) = prediction_scores(&truth_at_preds, &pred)?;
                row.mloe = Some(report.mloe);
                row.mmom = Some(report.mmom);
                row.rmom = Some(report.rmom);
                row.clamp_count = Some(report.clamp_count);
                row.kl = kl;
                row.mspe = Some(mspe);
                Ok(())
            })();
            if let Err(e) = scored {
                row.status = e.kind().to_string();
            }
            row
        })
        .collect()
}

fn perturb(truth: &MaternSpec, sd: (f64, f64), seed: u64) -> Result<MaternSpec> {
    // A separate stream of the replicate seed, so the data draw is unchanged.
    let mut rng: ChaCha8Rng = seeded_rng(seed);
    rng.set_stream(1);
    let draw = |rng: &mut ChaCha8Rng, mean: f64, sd: f64| -> Result<f64> {
        if sd == 0.0 {
            return Ok(mean);
        }
        let d = Normal::new(mean, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(d.sample(rng))
    };
    let sigma2 = draw(&mut rng, truth.sigma2, sd.0)?;
    let alpha = draw(&mut rng, truth.alpha, sd.1)?;
    MaternSpec::with_nugget(sigma2, alpha, truth.nu, truth.nugget)
}
