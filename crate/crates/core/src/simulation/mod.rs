//! Seeded Gaussian-process simulation and the replicate experiment runner.

mod experiment;

pub use experiment::{
    mean_sd, run_experiment, summarize, ExperimentOutput, ExperimentSpec, FitSpec, ReplicateRecord, Scenario, SummaryRow,
    SUMMARY_COLUMNS,
};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::{build_cov_sym, MaternSpec};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::geometry::{seeded_rng, LocationSet};
use crate::linalg::Cholesky;

/// Draws `Z = L u` with `L Lᵀ = K(θ)` and `u ~ N(0, I)` from the seeded
/// stream. The same `(locs, spec, seed)` always gives the same values.
pub fn simulate_gp(locs: &LocationSet, spec: &MaternSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let chol = Cholesky::new(build_cov_sym(locs, spec), "simulation covariance")?;
    let mut rng = seeded_rng(seed);
    let u = DVector::from_fn(locs.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = chol.l() * u;
    Dataset::new(locs.clone(), z.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::build_cov;
    use crate::geometry::{gen_perturbed_grid, Location};

    #[test]
    fn deterministic_per_seed() {
        let locs = gen_perturbed_grid(64, 1).unwrap();
        let spec = MaternSpec::new(1.0, 0.1, 1.5).unwrap();
        let a = simulate_gp(&locs, &spec, 42).unwrap();
        let b = simulate_gp(&locs, &spec, 42).unwrap();
        let c = simulate_gp(&locs, &spec, 43).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn single_site_standard_deviation() {
        let locs = LocationSet::explicit(vec![Location::new(0.3, 0.7)]).unwrap();
        let spec = MaternSpec::new(1.0, 0.1, 0.5).unwrap();
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|s| simulate_gp(&locs, &spec, s).unwrap().values[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd - 1.0).abs() < 0.03, "sd {sd}");
    }

    #[test]
    fn empirical_covariance_within_standard_errors() {
        let locs = LocationSet::explicit(vec![
            Location::new(0.1, 0.1),
            Location::new(0.2, 0.15),
            Location::new(0.5, 0.4),
            Location::new(0.9, 0.8),
        ])
        .unwrap();
        let spec = MaternSpec::new(1.5, 0.2, 1.0).unwrap();
        let k = build_cov(&locs, &locs, &spec);
        let reps = 5000;
        let mut acc = nalgebra::DMatrix::<f64>::zeros(4, 4);
        for s in 0..reps {
            let z = simulate_gp(&locs, &spec, 1_000 + s).unwrap().z();
            acc += &z * z.transpose();
        }
        let emp = acc / reps as f64;
        for i in 0..4 {
            for j in 0..4 {
                // Var(z_i z_j) = K_ii K_jj + K_ij² for a zero-mean Gaussian pair
                let se = ((k[(i, i)] * k[(j, j)] + k[(i, j)].powi(2)) / reps as f64).sqrt();
                assert!((emp[(i, j)] - k[(i, j)]).abs() < 5.0 * se, "({i},{j}) {} vs {}", emp[(i, j)], k[(i, j)]);
            }
        }
    }
}
