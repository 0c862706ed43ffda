//! Simple (zero-mean) kriging and conditional Gaussian distributions.
//!
//! The nugget is part of the process: it enters the prior variance
//! `k0 = sigma2 + tau2` and any covariance between coincident points, never
//! covariances at nonzero distance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{build_cov, build_cov_sym, MaternSpec};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::geometry::LocationSet;
use crate::likelihood::{GppConfig, GppModel};
use crate::linalg::Cholesky;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingOutput {
    pub pred: Vec<f64>,
    /// Computed MSE under the supplied spec.
    pub mse: Vec<f64>,
    /// Prior variance `k0` at each prediction location.
    pub prior_var: Vec<f64>,
    pub spec: MaternSpec,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Shared pieces of kriging under one spec: `L⁻¹ k` for every prediction
/// location and `L⁻¹ Z`.
struct KrigingSystem {
    whitened_cross: DMatrix<f64>,
    whitened_z: DVector<f64>,
}

impl KrigingSystem {
    fn new(obs: &Dataset, preds: &LocationSet, spec: &MaternSpec) -> Result<Self> {
        spec.validate()?;
        let k = build_cov_sym(&obs.locs, spec);
        let chol = Cholesky::new(k, "kriging covariance")?;
        let cross = build_cov(&obs.locs, preds, spec);
        Ok(KrigingSystem {
            whitened_cross: chol.forward(&cross),
            whitened_z: chol.forward_vec(&obs.z()),
        })
    }

    fn mean(&self) -> DVector<f64> {
        self.whitened_cross.tr_mul(&self.whitened_z)
    }
}

/// Kriging predictions `kᵀK⁻¹Z` and computed MSEs `k0 − kᵀK⁻¹k`.
pub fn krige(obs: &Dataset, preds: &LocationSet, spec: &MaternSpec) -> Result<KrigingOutput> {
    let sys = KrigingSystem::new(obs, preds, spec)?;
    let k0 = spec.total_variance();
    let mse = sys
        .whitened_cross
        .column_iter()
        .map(|c| (k0 - c.norm_squared()).max(0.0))
        .collect();
    Ok(KrigingOutput {
        pred: sys.mean().iter().copied().collect(),
        mse,
        prior_var: vec![k0; preds.len()],
        spec: *spec,
        backend: "exact".into(),
    })
}

/// Joint predictive distribution of the field at `preds` given `obs`.
pub fn conditional_distribution(obs: &Dataset, preds: &LocationSet, spec: &MaternSpec) -> Result<ConditionalGaussian> {
    let sys = KrigingSystem::new(obs, preds, spec)?;
    let kpp = build_cov_sym(preds, spec);
    let mut cov = kpp - sys.whitened_cross.tr_mul(&sys.whitened_cross);
    cov.fill_upper_triangle_with_lower_triangle();
    for i in 0..cov.nrows() {
        cov[(i, i)] = cov[(i, i)].max(0.0);
    }
    Ok(ConditionalGaussian {
        mean: sys.mean(),
        cov,
    })
}

/// Kriging under the covariance implied by a Gaussian predictive process.
pub fn gpp_krige(obs: &Dataset, preds: &LocationSet, spec: &MaternSpec, cfg: &GppConfig) -> Result<KrigingOutput> {
    let model = GppModel::new(cfg, spec)?;
    let solver = model.solver(&obs.locs)?;
    let cross = model.implied_cov(&obs.locs, preds);
    let weights = solver.solve(&cross);
    let pred = weights.tr_mul(&obs.z());
    let prior_var = model.implied_variance(preds);
    let mse = cross
        .column_iter()
        .zip(weights.column_iter())
        .zip(&prior_var)
        .map(|((k, w), k0)| (k0 - k.dot(&w)).max(0.0))
        .collect();
    Ok(KrigingOutput {
        pred: pred.iter().copied().collect(),
        mse,
        prior_var,
        spec: *spec,
        backend: "gpp".into(),
    })
}
