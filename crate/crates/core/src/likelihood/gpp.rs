//! Gaussian predictive process: the field is replaced by its kriging
//! projection onto `m` knots plus an independent nugget,
//! `Cov(Z̃_i, Z̃_j) = c_iᵀ C⋆⁻¹ c_j + τ² 1{s_i = s_j}`.
//!
//! With `A = L⋆⁻¹ C(knots, ·)` the implied covariance is `AᵀA + τ² I`, which
//! is inverted through `M = I + τ⁻² A Aᵀ` at `O(n m²)` cost.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gaussian_loglik;
use crate::covariance::{build_cov, build_cov_sym, MaternSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::LocationSet;
use crate::linalg::Cholesky;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GppConfig {
    pub knots: LocationSet,
}

/// Knot factorization for one parameter value.
#[derive(Debug, Clone)]
pub struct GppModel {
    knots: LocationSet,
    spec: MaternSpec,
    knot_chol: Cholesky,
}

/// Low-rank-plus-diagonal covariance `AᵀA + τ² I` with its Woodbury factor.
pub(crate) struct GppSolver {
    a: DMatrix<f64>,
    tau2: f64,
    m_chol: Cholesky,
}

impl GppModel {
    pub fn new(cfg: &GppConfig, spec: &MaternSpec) -> Result<Self> {
        spec.validate()?;
        if cfg.knots.is_empty() {
            return Err(Error::InvalidArgument("GPP needs at least one knot".into()));
        }
        let process = spec.without_nugget();
        let cstar = build_cov_sym(&cfg.knots, &process);
        let knot_chol = Cholesky::new(cstar, "GPP knot covariance")?;
        Ok(GppModel {
            knots: cfg.knots.clone(),
            spec: *spec,
            knot_chol,
        })
    }

    pub fn spec(&self) -> &MaternSpec {
        &self.spec
    }

    pub fn knot_count(&self) -> usize {
        self.knots.len()
    }

    /// `L⋆⁻¹ C(knots, locs)`, `m × n`.
    pub fn projection(&self, locs: &LocationSet) -> DMatrix<f64> {
        self.knot_chol
            .forward(&build_cov(&self.knots, locs, &self.spec.without_nugget()))
    }

    /// Dense implied covariance between two location sets.
    pub fn implied_cov(&self, rows: &LocationSet, cols: &LocationSet) -> DMatrix<f64> {
        let ar = self.projection(rows);
        let ac = self.projection(cols);
        let mut out = ar.tr_mul(&ac);
        add_nugget_on_coincident(&mut out, rows, cols, self.spec.nugget);
        out
    }

    /// Implied marginal variance `‖a(s)‖² + τ²` at each location.
    pub fn implied_variance(&self, locs: &LocationSet) -> Vec<f64> {
        let a = self.projection(locs);
        a.column_iter()
            .map(|c| c.norm_squared() + self.spec.nugget)
            .collect()
    }

    pub(crate) fn solver(&self, locs: &LocationSet) -> Result<GppSolver> {
        let tau2 = self.spec.nugget;
        let n = locs.len();
        let m = self.knots.len();
        if tau2 == 0.0 {
            return Err(Error::RankDeficient(format!(
                "GPP with zero nugget has rank at most {m} for {n} observations"
            )));
        }
        let a = self.projection(locs);
        let mut mm = (&a * a.transpose()) / tau2;
        for i in 0..m {
            mm[(i, i)] += 1.0;
        }
        let m_chol = Cholesky::new(mm, "GPP capacitance matrix")?;
        Ok(GppSolver { a, tau2, m_chol })
    }
}

pub(crate) fn add_nugget_on_coincident(out: &mut DMatrix<f64>, rows: &LocationSet, cols: &LocationSet, tau2: f64) {
    if tau2 == 0.0 {
        return;
    }
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            if r.dist(c) == 0.0 {
                out[(i, j)] += tau2;
            }
        }
    }
}

impl GppSolver {
    pub(crate) fn logdet(&self) -> f64 {
        self.a.ncols() as f64 * self.tau2.ln() + self.m_chol.logdet()
    }

    /// `Σ⁻¹ B = τ⁻² (B − τ⁻² Aᵀ M⁻¹ A B)`.
    pub(crate) fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let ab = &self.a * b;
        let corr = self.a.tr_mul(&self.m_chol.solve(&ab));
        (b - corr / self.tau2) / self.tau2
    }

    /// `zᵀ Σ⁻¹ z`.
    pub(crate) fn quad_form(&self, z: &DVector<f64>) -> f64 {
        let az = &self.a * z;
        (z.norm_squared() - self.m_chol.quad_form(&az) / self.tau2) / self.tau2
    }
}

/// GPP log-likelihood via the low-rank-plus-diagonal identity.
pub fn gpp_loglik(data: &Dataset, spec: &MaternSpec, cfg: &GppConfig) -> Result<f64> {
    let model = GppModel::new(cfg, spec)?;
    let solver = model.solver(&data.locs)?;
    Ok(gaussian_loglik(
        data.len(),
        solver.logdet(),
        solver.quad_form(&data.z()),
    ))
}
