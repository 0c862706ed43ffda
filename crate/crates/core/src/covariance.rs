//! Matérn covariance, effective-range conversion and covariance assembly.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bessel::bessel_k_scaled_unchecked;
use crate::error::{Error, Result};
use crate::geometry::LocationSet;

/// Dense covariance or cross-covariance matrix.
pub type CovMatrix = DMatrix<f64>;

/// Correlation level that defines the effective range.
pub const EFFECTIVE_RANGE_CORRELATION: f64 = 0.05;

/// Matérn parameters `(sigma2, alpha, nu)` plus a nugget `tau2` that acts only
/// at distance exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternSpec {
    pub sigma2: f64,
    pub alpha: f64,
    pub nu: f64,
    #[serde(default)]
    pub nugget: f64,
}

impl MaternSpec {
    pub fn new(sigma2: f64, alpha: f64, nu: f64) -> Result<Self> {
        Self::with_nugget(sigma2, alpha, nu, 0.0)
    }

    pub fn with_nugget(sigma2: f64, alpha: f64, nu: f64, nugget: f64) -> Result<Self> {
        let s = MaternSpec {
            sigma2,
            alpha,
            nu,
            nugget,
        };
        s.validate()?;
        Ok(s)
    }

    /// Exponential model (`nu = 1/2`) with the given effective range.
    pub fn exponential_from_range(sigma2: f64, eff_range: f64) -> Result<Self> {
        Self::new(sigma2, effective_range_to_alpha(eff_range, 0.5)?, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.sigma2) || !ok(self.alpha) || !ok(self.nu) {
            return Err(Error::InvalidArgument(format!(
                "Matérn parameters must be finite and positive: {self:?}"
            )));
        }
        if !self.nugget.is_finite() || self.nugget < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "nugget must be finite and >= 0, got {}",
                self.nugget
            )));
        }
        Ok(())
    }

    /// Prior variance at a point, `sigma2 + tau2`.
    pub fn total_variance(&self) -> f64 {
        self.sigma2 + self.nugget
    }

    pub fn without_nugget(&self) -> Self {
        MaternSpec {
            nugget: 0.0,
            ..*self
        }
    }

    /// Multiplies the variance and the nugget by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        MaternSpec {
            sigma2: self.sigma2 * c,
            nugget: self.nugget * c,
            ..*self
        }
    }
}

/// Matérn correlation `(t^nu K_nu(t)) / (Gamma(nu) 2^(nu-1))` at `t = h/alpha`,
/// with `rho(0) = 1`.
pub fn matern_correlation(t: f64, nu: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if nu == 0.5 {
        return (-t).exp();
    }
    let log_rho = nu * t.ln() + bessel_k_scaled_unchecked(nu, t).ln() - t
        - ln_gamma(nu)
        - (nu - 1.0) * std::f64::consts::LN_2;
    let rho = log_rho.exp();
    if rho.is_finite() {
        rho.min(1.0)
    } else {
        // K_nu overflowed at a vanishing argument: the limit applies.
        1.0
    }
}

/// Covariance at distance `h >= 0`. The nugget contributes only at `h == 0`.
pub fn matern_cov(h: f64, spec: &MaternSpec) -> f64 {
    if h == 0.0 {
        return spec.sigma2 + spec.nugget;
    }
    spec.sigma2 * matern_correlation(h / spec.alpha, spec.nu)
}

/// `t*` with `rho(t*) = 0.05`, so that `h_eff = alpha * t*`.
fn effective_range_multiplier(nu: f64) -> Result<f64> {
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::InvalidArgument(format!("smoothness must be > 0, got {nu}")));
    }
    if nu == 0.5 {
        return Ok(-EFFECTIVE_RANGE_CORRELATION.ln());
    }
    let (mut lo, mut hi) = (1e-12_f64, 1.0_f64);
    while matern_correlation(hi, nu) > EFFECTIVE_RANGE_CORRELATION {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Domain(format!("no effective range found for nu = {nu}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if matern_correlation(mid, nu) > EFFECTIVE_RANGE_CORRELATION {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Range parameter `alpha` whose correlation falls to 0.05 at `h_eff`.
pub fn effective_range_to_alpha(h_eff: f64, nu: f64) -> Result<f64> {
    if !(h_eff.is_finite() && h_eff > 0.0) {
        return Err(Error::InvalidArgument(format!("effective range must be > 0, got {h_eff}")));
    }
    Ok(h_eff / effective_range_multiplier(nu)?)
}

pub fn alpha_to_effective_range(alpha: f64, nu: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    Ok(alpha * effective_range_multiplier(nu)?)
}

/// Cross-covariance between `rows` and `cols`; entry `(i, j)` is
/// `matern_cov(|rows_i - cols_j|)`.
pub fn build_cov(rows: &LocationSet, cols: &LocationSet, spec: &MaternSpec) -> CovMatrix {
    let (m, n) = (rows.len(), cols.len());
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|j| {
            let cj = cols.get(j);
            rows.iter().map(move |ri| matern_cov(ri.dist(&cj), spec))
        })
        .collect();
    DMatrix::from_vec(m, n, data)
}

/// Covariance of a set with itself, computed on the lower triangle and
/// mirrored so the result is exactly symmetric.
pub fn build_cov_sym(locs: &LocationSet, spec: &MaternSpec) -> CovMatrix {
    let n = locs.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let cj = locs.get(j);
            (j..n).map(|i| matern_cov(locs.get(i).dist(&cj), spec)).collect()
        })
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for (j, col) in cols.into_iter().enumerate() {
        for (off, v) in col.into_iter().enumerate() {
            out[(j + off, j)] = v;
            out[(j, j + off)] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bessel::bessel_k;
    use crate::geometry::{gen_perturbed_grid, Location};

    fn spec(s: f64, a: f64, nu: f64) -> MaternSpec {
        MaternSpec::new(s, a, nu).unwrap()
    }

    #[test]
    fn exponential_case() {
        let alpha = 0.2 / -(0.05f64.ln());
        let s = spec(1.0, alpha, 0.5);
        assert!((matern_cov(0.2, &s) - 0.05).abs() < 1e-15);
        assert!((alpha - 0.066_761_640_139_066_8).abs() < 1e-15);
        for i in 1..=1000 {
            let h = 10.0 * alpha * i as f64 / 1000.0;
            let want = (-h / alpha).exp();
            assert!(((matern_cov(h, &s) - want) / want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_distance_and_nugget() {
        let s = MaternSpec::with_nugget(1.0, 0.1, 1.3, 0.25).unwrap();
        assert_eq!(matern_cov(0.0, &s), 1.25);
        let tiny = matern_cov(1e-300, &s);
        assert!(tiny.is_finite() && (tiny - 1.0).abs() < 1e-12);
    }

    #[test]
    fn whittle_at_alpha() {
        let s = spec(1.0, 0.37, 1.0);
        let k1 = bessel_k(1.0, 1.0).unwrap();
        assert!((matern_cov(0.37, &s) - k1).abs() < 1e-13);
        assert!((k1 - 0.601_907_230_197_234_6).abs() < 1e-13);
    }

    #[test]
    fn correlation_is_monotone() {
        for &nu in &[0.3, 0.5, 1.0, 1.5, 2.2, 4.0] {
            let s = spec(2.0, 0.1, nu);
            let mut prev = matern_cov(0.0, &s);
            for i in 1..=1000 {
                let h = i as f64 * 1e-3;
                let c = matern_cov(h, &s);
                let r = c / s.sigma2;
                assert!(r > 0.0 && r <= 1.0, "nu={nu} h={h}");
                assert!(c <= prev, "nu={nu} h={h}");
                prev = c;
            }
        }
    }

    #[test]
    fn effective_range_closed_form() {
        let a = effective_range_to_alpha(0.2, 0.5).unwrap();
        assert!((a - 0.2 / 20f64.ln()).abs() < 1e-16);
        assert!((a - 0.066_761_640_139_066_8).abs() < 1e-15);
    }

    #[test]
    fn effective_range_round_trip() {
        for &r in &[0.2, 0.4, 0.8, 1.6] {
            for &nu in &[0.5, 1.0] {
                let a = effective_range_to_alpha(r, nu).unwrap();
                assert!((alpha_to_effective_range(a, nu).unwrap() - r).abs() < 1e-10);
                let s = spec(1.0, a, nu);
                assert!((matern_cov(r, &s) - 0.05).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn effective_range_whittle_grid_scan() {
        // Oracle: scan t*K_1(t) on a fine grid and interpolate the 0.05 crossing.
        let step = 1e-5;
        let mut t = step;
        let mut prev = (t, t * bessel_k(1.0, t).unwrap());
        let crossing = loop {
            t += step;
            let v = t * bessel_k(1.0, t).unwrap();
            if v <= 0.05 {
                break prev.0 + (prev.1 - 0.05) / (prev.1 - v) * step;
            }
            prev = (t, v);
        };
        let a = effective_range_to_alpha(0.2, 1.0).unwrap();
        assert!(((a - 0.2 / crossing) / a).abs() < 1e-8);
    }

    #[test]
    fn build_cov_entries() {
        let pts = LocationSet::explicit(vec![
            Location::new(0.0, 0.0),
            Location::new(0.3, 0.1),
            Location::new(0.5, 0.9),
        ])
        .unwrap();
        let s = spec(1.7, 0.2, 0.5);
        let c = build_cov(&pts, &pts, &s);
        for i in 0..3 {
            for j in 0..3 {
                let h = pts.get(i).dist(&pts.get(j));
                assert!((c[(i, j)] - 1.7 * (-h / 0.2).exp()).abs() < 1e-15);
            }
        }
        assert_eq!(build_cov_sym(&pts, &s), c);
    }

    #[test]
    fn distant_points_decorrelate() {
        let alpha = 0.01;
        let pts = LocationSet::explicit(vec![Location::new(0.0, 0.0), Location::new(50.0 * alpha, 0.0)]).unwrap();
        let c = build_cov(&pts, &pts, &spec(1.0, alpha, 0.5));
        assert!(c[(0, 1)] <= 1e-12);
    }

    #[test]
    fn assembled_matrix_is_symmetric_psd() {
        let locs = gen_perturbed_grid(400, 3).unwrap();
        for &nu in &[0.5, 1.0, 1.5] {
            let s = MaternSpec::new(1.0, effective_range_to_alpha(0.2, nu).unwrap(), nu).unwrap();
            let c = build_cov(&locs, &locs, &s);
            assert!((&c - c.transpose()).amax() <= 1e-14);
            let min_eig = c.clone().symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-8, "nu={nu} min eig {min_eig}");
            for i in 0..locs.len() {
                assert_eq!(c[(i, i)], 1.0);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(MaternSpec::new(0.0, 1.0, 0.5).is_err());
        assert!(MaternSpec::new(1.0, -1.0, 0.5).is_err());
        assert!(MaternSpec::with_nugget(1.0, 1.0, 0.5, -0.1).is_err());
        assert!(effective_range_to_alpha(0.0, 0.5).is_err());
    }
}
