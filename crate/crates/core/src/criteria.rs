//! Prediction-efficiency criteria for an approximated or estimated
//! covariance model against the true one.
//!
//! Per prediction location `s0`:
//!
//! * `LOE(s0) = E_t{e_a²} / E_t{e_t²} − 1`, the relative excess of the true
//!   MSE of the approximate predictor over the optimal MSE;
//! * `MOM(s0) = E_a{e_a²} / E_t{e_a²} − 1`, the relative error of the MSE the
//!   approximate model reports.
//!
//! `E_t{e_t²}` is the kriging MSE under the truth and `E_a{e_a²}` the kriging
//! MSE computed under the approximation. `E_t{e_a²}` is estimated either by
//! the plug-in expression
//! `k0_t − 2 k_tᵀ K_a⁻¹ k_a + k_aᵀ K_a⁻¹ K_t K_a⁻¹ k_a` or, for Stein's method,
//! by `E_t{e_t²} + (Ẑ_a − Ẑ_t)²` on the observed data. Aggregates are the
//! mean of LOE (MLOE), the mean of MOM (MMOM) and the root mean square of MOM
//! (RMOM).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{build_cov, build_cov_sym, MaternSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::LocationSet;
use crate::kriging::{conditional_distribution, ConditionalGaussian};
use crate::linalg::Cholesky;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Plugin,
    Stein,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Plugin => "plugin",
            Method::Stein => "stein",
        }
    }

    /// Stein's estimator when the fitted family contains the truth, plug-in
    /// otherwise.
    pub fn recommended(correctly_specified: bool) -> Self {
        if correctly_specified {
            Method::Stein
        } else {
            Method::Plugin
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" | "plug-in" => Ok(Method::Plugin),
            "stein" => Ok(Method::Stein),
            other => Err(Error::InvalidArgument(format!("unknown criteria method `{other}`"))),
        }
    }
}

/// True parameters and the approximated (or estimated) ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPair {
    pub truth: MaternSpec,
    pub approx: MaternSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub method: Method,
    pub loe: Vec<f64>,
    pub mom: Vec<f64>,
    /// `E_t{e_t²}` per location.
    pub mse_true: Vec<f64>,
    /// Estimated `E_t{e_a²}` per location, after clamping.
    pub mse_actual: Vec<f64>,
    /// `E_a{e_a²}` per location.
    pub mse_computed: Vec<f64>,
    pub mloe: f64,
    pub mmom: f64,
    pub rmom: f64,
    /// Locations where the plug-in `E_t{e_a²}` fell below `E_t{e_t²}` and was
    /// replaced by it.
    pub clamp_count: usize,
    pub kl: Option<f64>,
    pub mspe: Option<f64>,
    pub msrpe: Option<f64>,
}

impl EfficiencyReport {
    pub fn summary_csv_header() -> &'static str {
        "mloe,mmom,rmom,kl,mspe,clamp_count,method"
    }

    /// One-row summary matching [`Self::summary_csv_header`]; absent values
    /// are empty fields.
    pub fn summary_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        format!(
            "{:?},{:?},{:?},{},{},{},{}",
            self.mloe,
            self.mmom,
            self.rmom,
            opt(self.kl),
            opt(self.mspe),
            self.clamp_count,
            self.method.name()
        )
    }
}

/// Kriging quantities under one spec at a set of prediction locations.
struct Predictor {
    chol: Cholesky,
    /// `k` (n × p).
    cross: DMatrix<f64>,
    /// `K⁻¹ k` (n × p).
    weights: DMatrix<f64>,
    k0: f64,
}

impl Predictor {
    fn new(obs: &LocationSet, preds: &LocationSet, spec: &MaternSpec, label: &str) -> Result<Self> {
        spec.validate()?;
        let chol = Cholesky::new(build_cov_sym(obs, spec), label)?;
        let cross = build_cov(obs, preds, spec);
        let weights = chol.solve(&cross);
        Ok(Predictor {
            chol,
            cross,
            weights,
            k0: spec.total_variance(),
        })
    }

    /// `k0 − kᵀK⁻¹k` at location `j`.
    fn mse(&self, j: usize) -> f64 {
        self.k0 - self.cross.column(j).dot(&self.weights.column(j))
    }
}

/// Computes per-location LOE/MOM and their aggregates. Plug-in ignores the
/// observed values; Stein's method uses them through `Ẑ_a − Ẑ_t`.
pub fn assess(pair: &ModelPair, obs: &Dataset, preds: &LocationSet, method: Method) -> Result<EfficiencyReport> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no prediction locations".into()));
    }
    let t = Predictor::new(&obs.locs, preds, &pair.truth, "true model covariance")?;
    let a = Predictor::new(&obs.locs, preds, &pair.approx, "approximated model covariance")?;
    let z = obs.z();
    let p = preds.len();

    let mut report = EfficiencyReport {
        method,
        loe: Vec::with_capacity(p),
        mom: Vec::with_capacity(p),
        mse_true: Vec::with_capacity(p),
        mse_actual: Vec::with_capacity(p),
        mse_computed: Vec::with_capacity(p),
        mloe: 0.0,
        mmom: 0.0,
        rmom: 0.0,
        clamp_count: 0,
        kl: None,
        mspe: None,
        msrpe: None,
    };
    for j in 0..p {
        let et_et = t.mse(j);
        if !(et_et > 0.0) {
            return Err(Error::Domain(format!(
                "true-model kriging MSE at prediction location {j} is {et_et}; LOE is undefined"
            )));
        }
        let wa = a.weights.column(j);
        let ea_ea = a.mse(j);
        let mut et_ea = match method {
            Method::Plugin => {
                // wᵀ K_t w = ‖L_tᵀ w‖²
                let lt_w = t.chol.l().tr_mul(&wa);
                t.k0 - 2.0 * t.cross.column(j).dot(&wa) + lt_w.norm_squared()
            }
            Method::Stein => {
                let diff = wa.dot(&z) - t.weights.column(j).dot(&z);
                et_et + diff * diff
            }
        };
        if et_ea < et_et {
            et_ea = et_et;
            report.clamp_count += 1;
        }
        report.loe.push(et_ea / et_et - 1.0);
        report.mom.push(ea_ea / et_ea - 1.0);
        report.mse_true.push(et_et);
        report.mse_actual.push(et_ea);
        report.mse_computed.push(ea_ea);
    }
    let pf = p as f64;
    report.mloe = report.loe.iter().sum::<f64>() / pf;
    report.mmom = report.mom.iter().sum::<f64>() / pf;
    report.rmom = (report.mom.iter().map(|m| m * m).sum::<f64>() / pf).sqrt();
    Ok(report)
}

/// `D_KL(P ‖ Q)` between two multivariate Gaussians.
pub fn gaussian_kl(p: &ConditionalGaussian, q: &ConditionalGaussian) -> Result<f64> {
    let m = p.mean.len();
    if q.mean.len() != m || p.cov.nrows() != m || q.cov.nrows() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: q.mean.len(),
        });
    }
    let lq = Cholesky::new(q.cov.clone(), "approximated conditional covariance")?;
    let lp = Cholesky::new(p.cov.clone(), "true conditional covariance")?;
    let trace = lq.forward(lp.l()).norm_squared();
    let d: DVector<f64> = &q.mean - &p.mean;
    let quad = lq.quad_form(&d);
    Ok(0.5 * (trace - (lp.logdet() - lq.logdet()) + quad - m as f64))
}

/// K-L divergence from the true conditional predictive distribution at
/// `preds` to the approximated one, both given the same observations.
pub fn kl_conditional(pair: &ModelPair, obs: &Dataset, preds: &LocationSet) -> Result<f64> {
    let qt = conditional_distribution(obs, preds, &pair.truth)?;
    let qa = conditional_distribution(obs, preds, &pair.approx)?;
    gaussian_kl(&qt, &qa)
}

/// Divergence of the Gaussian logarithmic score, `d(Q_a, Q_t)`; equal to
/// twice [`kl_conditional`].
pub fn log_score_divergence(pair: &ModelPair, obs: &Dataset, preds: &LocationSet) -> Result<f64> {
    Ok(2.0 * kl_conditional(pair, obs, preds)?)
}

/// `(MSPE, MSRPE)`. MSRPE is `None` when any true value is exactly zero.
pub fn prediction_scores(truth: &[f64], preds: &[f64]) -> Result<(f64, Option<f64>)> {
    if truth.len() != preds.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: preds.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let p = truth.len() as f64;
    let mspe = truth.iter().zip(preds).map(|(t, y)| (y - t).powi(2)).sum::<f64>() / p;
    let msrpe = truth
        .iter()
        .all(|&t| t != 0.0)
        .then(|| truth.iter().zip(preds).map(|(t, y)| ((y - t) / t).powi(2)).sum::<f64>() / p);
    Ok((mspe, msrpe))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{gen_perturbed_grid, gen_regular_grid, GridRule, Location, Rect};
    use crate::simulation::simulate_gp;

    fn setting() -> (Dataset, LocationSet, MaternSpec) {
        let truth = MaternSpec::exponential_from_range(1.0, 0.2).unwrap();
        let locs = gen_perturbed_grid(100, 3).unwrap();
        let data = simulate_gp(&locs, &truth, 4).unwrap();
        let preds = gen_regular_grid(4, Rect::UNIT, GridRule::Interior).unwrap();
        (data, preds, truth)
    }

    #[test]
    fn identical_models_are_lossless() {
        let (data, preds, truth) = setting();
        let pair = ModelPair { truth, approx: truth };
        for m in [Method::Plugin, Method::Stein] {
            let r = assess(&pair, &data, &preds, m).unwrap();
            assert!(r.loe.iter().all(|&v| v.abs() < 1e-12));
            assert!(r.mom.iter().all(|&v| v.abs() < 1e-12));
            assert!(r.mloe.abs() < 1e-12 && r.mmom.abs() < 1e-12 && r.rmom.abs() < 1e-12);
        }
        assert!(kl_conditional(&pair, &data, &preds).unwrap().abs() < 1e-10);
    }

    #[test]
    fn variance_scaling_only_moves_mom() {
        let (data, preds, truth) = setting();
        let pair = ModelPair { truth, approx: truth.scaled(1.3) };
        let r = assess(&pair, &data, &preds, Method::Plugin).unwrap();
        for j in 0..preds.len() {
            assert!(r.loe[j].abs() < 1e-10);
            assert!((r.mom[j] - 0.3).abs() < 1e-10);
        }
    }

    #[test]
    fn aggregates_follow_definitions() {
        let (data, preds, truth) = setting();
        let approx = MaternSpec::with_nugget(0.9, 0.05, 1.0, 0.05).unwrap();
        for m in [Method::Plugin, Method::Stein] {
            let r = assess(&ModelPair { truth, approx }, &data, &preds, m).unwrap();
            let p = r.loe.len() as f64;
            assert!((r.mloe - r.loe.iter().sum::<f64>() / p).abs() < 1e-15);
            assert!((r.mmom - r.mom.iter().sum::<f64>() / p).abs() < 1e-15);
            assert!(r.rmom >= r.mmom.abs());
            assert!(r.loe.iter().all(|&v| v >= 0.0));
            assert!(r.mloe > 0.0);
            for j in 0..r.mom.len() {
                // MOM is positive exactly when the reported MSE exceeds the actual one
                assert_eq!(r.mom[j] > 0.0, r.mse_computed[j] > r.mse_actual[j]);
            }
        }
    }

    #[test]
    fn plugin_matches_explicit_formula() {
        let (data, preds, truth) = setting();
        let approx = MaternSpec::new(1.2, 0.08, 0.5).unwrap();
        let r = assess(&ModelPair { truth, approx }, &data, &preds, Method::Plugin).unwrap();
        let kt = build_cov(&data.locs, &data.locs, &truth);
        let ka_inv = build_cov(&data.locs, &data.locs, &approx).try_inverse().unwrap();
        let kt_inv = kt.clone().try_inverse().unwrap();
        for j in 0..preds.len() {
            let p = preds.permuted(&[j]);
            let kt_j = build_cov(&data.locs, &p, &truth);
            let ka_j = build_cov(&data.locs, &p, &approx);
            let w = &ka_inv * &ka_j;
            let et_ea = 1.0 - 2.0 * (kt_j.transpose() * &w)[(0, 0)] + (w.transpose() * &kt * &w)[(0, 0)];
            let et_et = 1.0 - (kt_j.transpose() * &kt_inv * &kt_j)[(0, 0)];
            let ea_ea = approx.sigma2 - (ka_j.transpose() * &w)[(0, 0)];
            assert!((r.loe[j] - (et_ea / et_et - 1.0)).abs() < 1e-9);
            assert!((r.mom[j] - (ea_ea / et_ea - 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_kl_mean_shift() {
        let eye = DMatrix::identity(3, 3);
        let p = ConditionalGaussian { mean: DVector::zeros(3), cov: eye.clone() };
        let d = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let q = ConditionalGaussian { mean: d.clone(), cov: eye };
        assert!((gaussian_kl(&p, &q).unwrap() - 0.5 * d.norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn gaussian_kl_univariate_quadrature() {
        let (vt, va) = (0.7_f64, 1.9_f64);
        let closed = 0.5 * (vt / va - (vt / va).ln() - 1.0);
        // Oracle: composite Simpson on ∫ q_t log(q_t / q_a).
        let pdf = |x: f64, v: f64| (-0.5 * x * x / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let (lo, hi, n) = (-15.0, 15.0, 20_000);
        let h = (hi - lo) / n as f64;
        let f = |x: f64| pdf(x, vt) * (pdf(x, vt) / pdf(x, va)).ln();
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            let x = lo + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        let quad = s * h / 3.0;
        assert!((closed - quad).abs() < 1e-10);
        let p = ConditionalGaussian { mean: DVector::zeros(1), cov: DMatrix::from_element(1, 1, vt) };
        let q = ConditionalGaussian { mean: DVector::zeros(1), cov: DMatrix::from_element(1, 1, va) };
        assert!((gaussian_kl(&p, &q).unwrap() - quad).abs() < 1e-10);
    }

    #[test]
    fn log_score_divergence_identity() {
        let (data, preds, truth) = setting();
        let approx = MaternSpec::with_nugget(1.1, 0.06, 1.0, 0.02).unwrap();
        let pair = ModelPair { truth, approx };
        let kl = kl_conditional(&pair, &data, &preds).unwrap();
        let d = log_score_divergence(&pair, &data, &preds).unwrap();
        assert!(kl > 0.0);
        assert!((d - 2.0 * kl).abs() <= 1e-14 * d.abs());
        // Independent evaluation with explicit inverse and determinants:
        // d(P, Q) with P the approximated and Q the true predictive law.
        let qt = conditional_distribution(&data, &preds, &truth).unwrap();
        let qa = conditional_distribution(&data, &preds, &approx).unwrap();
        let pinv = qa.cov.clone().try_inverse().unwrap();
        let prod = &pinv * &qt.cov;
        let diff = &qa.mean - &qt.mean;
        let want = prod.trace() - prod.determinant().ln() + (diff.transpose() * &pinv * &diff)[(0, 0)] - preds.len() as f64;
        assert!(((d - want) / want).abs() < 1e-8, "{d} vs {want}");
    }

    #[test]
    fn singular_approximate_conditional_is_an_error() {
        let (data, _, truth) = setting();
        let preds = data.locs.permuted(&[0, 1]);
        let approx = MaternSpec::new(1.0, 0.05, 0.5).unwrap();
        let err = kl_conditional(&ModelPair { truth, approx }, &data, &preds).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn scores() {
        assert_eq!(prediction_scores(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, Some(0.0)));
        let (mspe, _) = prediction_scores(&[1.0, -2.0, 3.0], &[1.5, -1.5, 3.5]).unwrap();
        assert!((mspe - 0.25).abs() < 1e-15);
        assert_eq!(prediction_scores(&[0.0, 1.0], &[0.1, 1.0]).unwrap().1, None);
        assert!(prediction_scores(&[1.0], &[1.0, 2.0]).is_err());
        let t = [0.3, -1.2, 2.2, 0.7, -0.4];
        let y = [0.1, -1.0, 2.5, 0.9, -0.9];
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..5 {
            a += (y[i] - t[i]) * (y[i] - t[i]);
            b += ((y[i] - t[i]) / t[i]) * ((y[i] - t[i]) / t[i]);
        }
        let (m, r) = prediction_scores(&t, &y).unwrap();
        assert!((m - a / 5.0).abs() < 1e-15 && (r.unwrap() - b / 5.0).abs() < 1e-15);
    }

    #[test]
    fn undefined_loe_at_observed_location() {
        let (data, _, truth) = setting();
        let preds = LocationSet::explicit(vec![data.locs.get(0), Location::new(0.5, 0.5)]).unwrap();
        let pair = ModelPair { truth, approx: truth };
        assert!(matches!(assess(&pair, &data, &preds, Method::Plugin), Err(Error::Domain(_))));
    }
}
