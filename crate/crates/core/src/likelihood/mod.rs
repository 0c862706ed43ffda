//! Gaussian log-likelihood backends and maximum-likelihood fitting.
//!
//! All models are zero mean:
//! `l(θ) = −(n/2) log 2π − ½ log det Σ(θ) − ½ Zᵀ Σ(θ)⁻¹ Z`.

mod fit;
mod gpp;
mod vecchia;

pub use fit::{fit_mle, Backend, FitConfig, FitResult, Param, ParamBounds, Termination};
pub use gpp::{gpp_loglik, GppConfig, GppModel};
pub use vecchia::{vecchia_loglik, VecchiaConfig, VecchiaNeighbors};

use nalgebra::DVector;

use crate::covariance::{build_cov_sym, MaternSpec};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::geometry::morton_order;
use crate::linalg::Cholesky;
use crate::tlr::{assemble_tlr, tlr_cholesky, tlr_logdet_and_quadform, TlrConfig};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) fn gaussian_loglik(n: usize, logdet: f64, quad: f64) -> f64 {
    -0.5 * (n as f64 * LN_2PI + logdet + quad)
}

/// Exact log-likelihood via dense Cholesky.
pub fn exact_loglik(data: &Dataset, spec: &MaternSpec) -> Result<f64> {
    spec.validate()?;
    let k = build_cov_sym(&data.locs, spec);
    let chol = Cholesky::new(k, "exact covariance")?;
    Ok(gaussian_loglik(
        data.len(),
        chol.logdet(),
        chol.quad_form(&data.z()),
    ))
}

/// Log-likelihood with the covariance replaced by its TLR approximation.
/// Locations are Morton-ordered before tiling.
pub fn tlr_loglik(data: &Dataset, spec: &MaternSpec, cfg: &TlrConfig) -> Result<f64> {
    spec.validate()?;
    let ordered = data.permuted(&morton_order(&data.locs));
    tlr_loglik_ordered(&ordered, spec, cfg)
}

/// As [`tlr_loglik`] but tiles the data in the order given.
pub fn tlr_loglik_ordered(data: &Dataset, spec: &MaternSpec, cfg: &TlrConfig) -> Result<f64> {
    let a = assemble_tlr(&data.locs, spec, cfg)?;
    let f = tlr_cholesky(&a, cfg)?;
    let (logdet, quad) = tlr_logdet_and_quadform(&f, &DVector::from_column_slice(&data.values))?;
    Ok(gaussian_loglik(data.len(), logdet, quad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{build_cov, effective_range_to_alpha};
    use crate::geometry::{gen_perturbed_grid, Location, LocationSet};
    use crate::simulation::simulate_gp;
    use std::f64::consts::PI;

    fn point(z: f64) -> Dataset {
        Dataset::new(LocationSet::explicit(vec![Location::new(0.5, 0.5)]).unwrap(), vec![z]).unwrap()
    }

    #[test]
    fn scalar_cases() {
        let s1 = MaternSpec::new(1.0, 0.1, 0.5).unwrap();
        assert!((exact_loglik(&point(0.0), &s1).unwrap() + 0.918_938_533_204_672_8).abs() < 1e-15);
        let s4 = MaternSpec::new(4.0, 0.1, 0.5).unwrap();
        let want = -0.5 * (2.0 * PI).ln() - 0.5 * 4f64.ln() - 0.5;
        assert!((exact_loglik(&point(2.0), &s4).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn matches_naive_determinant_and_inverse() {
        let locs = gen_perturbed_grid(49, 3).unwrap();
        let spec = MaternSpec::new(1.3, effective_range_to_alpha(0.3, 1.0).unwrap(), 1.0).unwrap();
        let data = simulate_gp(&locs, &spec, 10).unwrap();
        let k = build_cov(&locs, &locs, &spec);
        let z = data.z();
        // oracle: LU determinant and explicit inverse
        let det = k.clone().lu().determinant();
        let inv = k.clone().try_inverse().unwrap();
        let naive = -0.5 * (49.0 * (2.0 * PI).ln() + det.ln() + (z.transpose() * inv * &z)[(0, 0)]);
        let got = exact_loglik(&data, &spec).unwrap();
        assert!((got - naive).abs() < 1e-9, "{got} vs {naive}");
    }

    #[test]
    fn permutation_invariant() {
        let locs = gen_perturbed_grid(64, 8).unwrap();
        let spec = MaternSpec::new(1.0, 0.1, 0.5).unwrap();
        let data = simulate_gp(&locs, &spec, 1).unwrap();
        let perm: Vec<usize> = (0..64).rev().collect();
        let a = exact_loglik(&data, &spec).unwrap();
        let b = exact_loglik(&data.permuted(&perm), &spec).unwrap();
        assert!((a - b).abs() < 1e-10);
        let c = exact_loglik(&data.permuted(&morton_order(&data.locs)), &spec).unwrap();
        assert!((a - c).abs() < 1e-10);
    }

    #[test]
    fn tlr_single_tile_equals_exact() {
        let locs = gen_perturbed_grid(100, 2).unwrap();
        let spec = MaternSpec::exponential_from_range(1.0, 0.2).unwrap();
        let data = simulate_gp(&locs, &spec, 3).unwrap();
        let cfg = TlrConfig::new(128, 100, 1e-9).unwrap();
        let a = exact_loglik(&data, &spec).unwrap();
        let b = tlr_loglik(&data, &spec, &cfg).unwrap();
        assert!(((a - b) / a).abs() < 1e-12);
    }

    #[test]
    fn tlr_close_to_exact_and_monotone() {
        let locs = gen_perturbed_grid(400, 31).unwrap();
        let spec = MaternSpec::exponential_from_range(1.0, 0.2).unwrap();
        for seed in 0..5 {
            let data = simulate_gp(&locs, &spec, 100 + seed).unwrap();
            let exact = exact_loglik(&data, &spec).unwrap();
            let errs: Vec<f64> = [1e-5, 1e-7, 1e-9]
                .iter()
                .map(|&acc| {
                    let cfg = TlrConfig::new(100, 100, acc).unwrap();
                    (tlr_loglik(&data, &spec, &cfg).unwrap() - exact).abs()
                })
                .collect();
            assert!(errs[2] <= 1e-3, "{errs:?}");
            assert!(errs[0] >= errs[1] && errs[1] >= errs[2], "{errs:?}");
        }
    }
}
