use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::LN_2PI;
use crate::covariance::{matern_cov, MaternSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::LocationSet;
use crate::linalg::Cholesky;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VecchiaConfig {
    /// Number of previously ordered neighbours each observation conditions on.
    pub m: usize,
}

/// Conditioning sets: for observation `i`, the `min(i, m)` nearest among
/// observations `0..i` (Euclidean distance, ties to the lower index).
#[derive(Debug, Clone, PartialEq)]
pub struct VecchiaNeighbors {
    sets: Vec<Vec<usize>>,
}

impl VecchiaNeighbors {
    pub fn new(locs: &LocationSet, m: usize) -> Self {
        let sets = (0..locs.len())
            .map(|i| {
                let p = locs.get(i);
                let mut cand: Vec<(f64, usize)> = (0..i).map(|j| (p.dist(&locs.get(j)), j)).collect();
                let take = m.min(i);
                if take < cand.len() {
                    cand.select_nth_unstable_by(take, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    cand.truncate(take);
                }
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cand.into_iter().map(|(_, j)| j).collect()
            })
            .collect();
        VecchiaNeighbors { sets }
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Sum of univariate conditional log-densities.
    pub fn loglik(&self, data: &Dataset, spec: &MaternSpec) -> Result<f64> {
        if data.len() != self.sets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sets.len(),
                got: data.len(),
            });
        }
        let mut total = 0.0;
        for (i, nbrs) in self.sets.iter().enumerate() {
            let zi = data.values[i];
            let var0 = spec.total_variance();
            let (mean, var) = if nbrs.is_empty() {
                (0.0, var0)
            } else {
                let k = nbrs.len();
                let pi = data.locs.get(i);
                let cnn = DMatrix::from_fn(k, k, |a, b| {
                    matern_cov(data.locs.get(nbrs[a]).dist(&data.locs.get(nbrs[b])), spec)
                });
                let c = DVector::from_fn(k, |a, _| matern_cov(pi.dist(&data.locs.get(nbrs[a])), spec));
                let zn = DVector::from_fn(k, |a, _| data.values[nbrs[a]]);
                let chol = Cholesky::new(cnn, &format!("Vecchia conditioning set of observation {i}"))?;
                let w = chol.forward_vec(&c);
                (w.dot(&chol.forward_vec(&zn)), var0 - w.norm_squared())
            };
            if !(var > 0.0) {
                return Err(Error::not_pd(format!(
                    "Vecchia conditional variance of observation {i} is {var}"
                )));
            }
            let r = zi - mean;
            total += -0.5 * (LN_2PI + var.ln() + r * r / var);
        }
        Ok(total)
    }
}

/// Vecchia composite log-likelihood conditioning in dataset order.
pub fn vecchia_loglik(data: &Dataset, spec: &MaternSpec, cfg: &VecchiaConfig) -> Result<f64> {
    spec.validate()?;
    VecchiaNeighbors::new(&data.locs, cfg.m).loglik(data, spec)
}
