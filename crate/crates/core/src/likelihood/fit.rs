//! Bounded Nelder–Mead maximum likelihood.
//!
//! Free parameters are searched on the log scale and clipped to the log of
//! their bounds. The search stops once the best and second-best
//! log-likelihood values over all evaluated points differ by at most
//! `opt_tol`, or at the iteration cap.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{exact_loglik, tlr_loglik_ordered, GppConfig, GppModel, VecchiaConfig, VecchiaNeighbors};
use crate::covariance::MaternSpec;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::morton_order;
use crate::tlr::TlrConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum Backend {
    Exact,
    Tlr(TlrConfig),
    Vecchia(VecchiaConfig),
    Gpp(GppConfig),
}

impl Backend {
    pub fn tag(&self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::Tlr(_) => "tlr",
            Backend::Vecchia(_) => "vecchia",
            Backend::Gpp(_) => "gpp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Sigma2,
    Alpha,
    Nu,
    Nugget,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::Sigma2, Param::Alpha, Param::Nu, Param::Nugget];

    pub fn name(self) -> &'static str {
        match self {
            Param::Sigma2 => "sigma2",
            Param::Alpha => "alpha",
            Param::Nu => "nu",
            Param::Nugget => "nugget",
        }
    }

    pub fn get(self, s: &MaternSpec) -> f64 {
        match self {
            Param::Sigma2 => s.sigma2,
            Param::Alpha => s.alpha,
            Param::Nu => s.nu,
            Param::Nugget => s.nugget,
        }
    }

    pub fn set(self, s: &mut MaternSpec, v: f64) {
        match self {
            Param::Sigma2 => s.sigma2 = v,
            Param::Alpha => s.alpha = v,
            Param::Nu => s.nu = v,
            Param::Nugget => s.nugget = v,
        }
    }
}

/// Box bounds `(lower, upper)` per parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub sigma2: (f64, f64),
    pub alpha: (f64, f64),
    pub nu: (f64, f64),
    pub nugget: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            sigma2: (0.01, 5.0),
            alpha: (0.01, 5.0),
            nu: (0.1, 5.0),
            nugget: (1e-6, 5.0),
        }
    }
}

impl ParamBounds {
    pub fn get(&self, p: Param) -> (f64, f64) {
        match p {
            Param::Sigma2 => self.sigma2,
            Param::Alpha => self.alpha,
            Param::Nu => self.nu,
            Param::Nugget => self.nugget,
        }
    }

    pub fn set(&mut self, p: Param, b: (f64, f64)) {
        match p {
            Param::Sigma2 => self.sigma2 = b,
            Param::Alpha => self.alpha = b,
            Param::Nu => self.nu = b,
            Param::Nugget => self.nugget = b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub backend: Backend,
    pub bounds: ParamBounds,
    /// Parameters held at their value in `init`.
    pub fixed: Vec<Param>,
    pub init: MaternSpec,
    pub opt_tol: f64,
    pub max_iter: usize,
    /// Edge length of the initial simplex on the log scale.
    pub init_step: f64,
}

impl FitConfig {
    /// Exact backend, `nu` fixed at `init.nu`, zero nugget held fixed.
    pub fn exact(init: MaternSpec) -> Self {
        FitConfig {
            backend: Backend::Exact,
            bounds: ParamBounds::default(),
            fixed: vec![Param::Nu, Param::Nugget],
            init,
            opt_tol: 1e-9,
            max_iter: 1000,
            init_step: 0.5,
        }
    }

    pub fn free_params(&self) -> Vec<Param> {
        Param::ALL
            .into_iter()
            .filter(|p| !self.fixed.contains(p))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.opt_tol.is_finite() && self.opt_tol > 0.0) {
            return Err(Error::InvalidArgument(format!("opt_tol must be > 0, got {}", self.opt_tol)));
        }
        if !(self.init_step.is_finite() && self.init_step > 0.0) {
            return Err(Error::InvalidArgument("init_step must be > 0".into()));
        }
        self.init.validate()?;
        for p in self.free_params() {
            let (lo, hi) = self.bounds.get(p);
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "bounds for free parameter {} must satisfy 0 < lower < upper, got [{lo}, {hi}]",
                    p.name()
                )));
            }
            let v = p.get(&self.init);
            if v < lo || v > hi {
                return Err(Error::InvalidArgument(format!(
                    "initial {} = {v} lies outside [{lo}, {hi}]",
                    p.name()
                )));
            }
        }
        if let Backend::Tlr(c) = &self.backend {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIter,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: MaternSpec,
    pub loglik: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub backend: String,
    pub termination: Termination,
}

/// Likelihood of one backend with any per-dataset preprocessing cached.
enum Objective<'a> {
    Exact(&'a Dataset),
    Tlr(Dataset, TlrConfig),
    Vecchia(&'a Dataset, VecchiaNeighbors),
    Gpp(&'a Dataset, &'a GppConfig),
}

impl<'a> Objective<'a> {
    fn new(data: &'a Dataset, backend: &'a Backend) -> Self {
        match backend {
            Backend::Exact => Objective::Exact(data),
            Backend::Tlr(c) => Objective::Tlr(data.permuted(&morton_order(&data.locs)), *c),
            Backend::Vecchia(c) => Objective::Vecchia(data, VecchiaNeighbors::new(&data.locs, c.m)),
            Backend::Gpp(c) => Objective::Gpp(data, c),
        }
    }

    fn eval(&self, spec: &MaternSpec) -> Result<f64> {
        match self {
            Objective::Exact(d) => exact_loglik(d, spec),
            Objective::Tlr(d, c) => tlr_loglik_ordered(d, spec, c),
            Objective::Vecchia(d, nb) => nb.loglik(d, spec),
            Objective::Gpp(d, c) => {
                let model = GppModel::new(c, spec)?;
                let solver = model.solver(&d.locs)?;
                Ok(super::gaussian_loglik(d.len(), solver.logdet(), solver.quad_form(&d.z())))
            }
        }
    }
}

struct Search<'a> {
    objective: Objective<'a>,
    base: MaternSpec,
    free: Vec<Param>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cache: HashMap<Vec<u64>, f64>,
    /// Top two finite log-likelihood values seen at distinct points.
    best: Option<(f64, Vec<f64>)>,
    second: Option<f64>,
    evaluations: usize,
    last_error: Option<Error>,
}

impl Search<'_> {
    fn clip(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }

    fn spec_at(&self, x: &[f64]) -> MaternSpec {
        let mut s = self.base;
        for (p, v) in self.free.iter().zip(x) {
            p.set(&mut s, v.exp());
        }
        s
    }

    /// Negative log-likelihood; failed evaluations count as +inf.
    fn cost(&mut self, x: &[f64]) -> f64 {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(&c) = self.cache.get(&key) {
            return c;
        }
        self.evaluations += 1;
        let ll = match self.objective.eval(&self.spec_at(x)) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                self.last_error = Some(Error::Domain(format!("log-likelihood evaluated to {v}")));
                f64::NEG_INFINITY
            }
            Err(e) => {
                self.last_error = Some(e);
                f64::NEG_INFINITY
            }
        };
        if ll.is_finite() {
            match &self.best {
                Some((b, _)) if ll <= *b => {
                    if self.second.is_none_or(|s| ll > s) {
                        self.second = Some(ll);
                    }
                }
                _ => {
                    self.second = self.best.as_ref().map(|(b, _)| *b);
                    self.best = Some((ll, x.to_vec()));
                }
            }
        }
        self.cache.insert(key, -ll);
        -ll
    }

    fn converged(&self, tol: f64) -> bool {
        matches!((&self.best, self.second), (Some((b, _)), Some(s)) if b - s <= tol)
    }
}

/// Maximizes the backend log-likelihood over the free parameters.
pub fn fit_mle(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let start = Instant::now();
    let free = cfg.free_params();
    let mut search = Search {
        objective: Objective::new(data, &cfg.backend),
        base: cfg.init,
        lo: free.iter().map(|p| cfg.bounds.get(*p).0.ln()).collect(),
        hi: free.iter().map(|p| cfg.bounds.get(*p).1.ln()).collect(),
        free,
        cache: HashMap::new(),
        best: None,
        second: None,
        evaluations: 0,
        last_error: None,
    };
    let x0: Vec<f64> = search.free.iter().map(|p| p.get(&cfg.init).ln()).collect();
    let (iterations, termination) = nelder_mead(&mut search, x0, cfg);

    let Some((loglik, xbest)) = search.best.clone() else {
        let detail = search
            .last_error
            .map(|e| e.to_string())
            .unwrap_or_else(|| "no evaluation succeeded".into());
        return Err(Error::FitFailure(format!(
            "all {} likelihood evaluations failed; last error: {detail}",
            search.evaluations
        )));
    };
    Ok(FitResult {
        theta_hat: search.spec_at(&xbest),
        loglik,
        evaluations: search.evaluations,
        iterations,
        wall_seconds: start.elapsed().as_secs_f64(),
        backend: cfg.backend.tag().to_string(),
        termination,
    })
}

fn nelder_mead(search: &mut Search<'_>, x0: Vec<f64>, cfg: &FitConfig) -> (usize, Termination) {
    let d = x0.len();
    if d == 0 {
        search.cost(&x0);
        return (0, Termination::Converged);
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let f0 = search.cost(&x0);
    simplex.push((x0.clone(), f0));
    for i in 0..d {
        let mut x = x0.clone();
        // step inward when the forward step would leave the box
        x[i] = if x0[i] + cfg.init_step <= search.hi[i] {
            x0[i] + cfg.init_step
        } else {
            x0[i] - cfg.init_step
        };
        search.clip(&mut x);
        let f = search.cost(&x);
        simplex.push((x, f));
    }

    let mut iter = 0;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if search.converged(cfg.opt_tol) {
            return (iter, Termination::Converged);
        }
        if iter >= cfg.max_iter {
            let t = if search.best.is_some() {
                Termination::MaxIter
            } else {
                Termination::Failure
            };
            return (iter, t);
        }
        iter += 1;

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let try_point = |search: &mut Search<'_>, mut x: Vec<f64>| {
            search.clip(&mut x);
            let f = search.cost(&x);
            (x, f)
        };

        let (xr, fr) = try_point(search, along(1.0));
        if fr < simplex[0].1 {
            let (xe, fe) = try_point(search, along(2.0));
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            try_point(search, along(0.5))
        } else {
            try_point(search, along(-0.5))
        };
        if fc < fr.min(worst.1) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best.iter().zip(&v.0).map(|(b, xi)| b + 0.5 * (xi - b)).collect();
            *v = try_point(search, x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::gen_perturbed_grid;
    use crate::likelihood::exact_loglik;
    use crate::simulation::simulate_gp;

    fn truth() -> MaternSpec {
        MaternSpec::exponential_from_range(1.0, 0.2).unwrap()
    }

    fn start() -> MaternSpec {
        MaternSpec::new(0.5, 0.2, 0.5).unwrap()
    }

    #[test]
    fn estimates_stay_in_bounds_and_converge() {
        let locs = gen_perturbed_grid(100, 3).unwrap();
        let data = simulate_gp(&locs, &truth(), 4).unwrap();
        let mut cfg = FitConfig::exact(MaternSpec::new(0.5, 0.03, 0.5).unwrap());
        cfg.bounds.alpha = (0.01, 0.05);
        let r = fit_mle(&data, &cfg).unwrap();
        assert!(r.theta_hat.alpha <= 0.05 + 1e-15 && r.theta_hat.alpha >= 0.01);
        assert_eq!(r.termination, Termination::Converged);
        assert_eq!(r.backend, "exact");
        assert!((exact_loglik(&data, &r.theta_hat).unwrap() - r.loglik).abs() < 1e-12);
    }

    #[test]
    fn looser_tolerance_uses_fewer_evaluations() {
        let locs = gen_perturbed_grid(100, 5).unwrap();
        let data = simulate_gp(&locs, &truth(), 6).unwrap();
        let mut cfg = FitConfig::exact(start());
        cfg.opt_tol = 1e-3;
        let loose = fit_mle(&data, &cfg).unwrap();
        cfg.opt_tol = 1e-9;
        let tight = fit_mle(&data, &cfg).unwrap();
        assert!(loose.evaluations < tight.evaluations);
        assert!(tight.loglik >= loose.loglik);
    }

    #[test]
    fn starting_at_profile_optimum_stops_quickly() {
        let locs = gen_perturbed_grid(64, 7).unwrap();
        let data = simulate_gp(&locs, &truth(), 8).unwrap();
        // sigma2 profile at fixed alpha: closed form sigma2_hat = z' R^-1 z / n
        let unit = MaternSpec { sigma2: 1.0, ..truth() };
        let k = crate::covariance::build_cov_sym(&data.locs, &unit);
        let chol = crate::linalg::Cholesky::new(k, "test").unwrap();
        let s2 = chol.quad_form(&data.z()) / 64.0;
        let mut cfg = FitConfig::exact(MaternSpec { sigma2: s2, ..truth() });
        cfg.fixed.push(Param::Alpha);
        // profile curvature is n/2 per squared log-unit: a 1e-4 step moves
        // the log-likelihood by ~1.6e-7
        cfg.init_step = 1e-4;
        cfg.opt_tol = 1e-6;
        let r = fit_mle(&data, &cfg).unwrap();
        assert!(r.iterations <= 2, "iterations {}", r.iterations);
        assert!((r.theta_hat.sigma2 - s2).abs() / s2 < 1e-3);
    }

    #[test]
    fn all_failures_is_fit_failure() {
        let locs = gen_perturbed_grid(25, 1).unwrap();
        let data = simulate_gp(&locs, &truth(), 1).unwrap();
        let mut cfg = FitConfig::exact(MaternSpec::new(1.0, 0.1, 0.5).unwrap());
        cfg.backend = Backend::Gpp(GppConfig { knots: locs.clone() });
        // nugget fixed at zero: every GPP evaluation is rank deficient
        match fit_mle(&data, &cfg) {
            Err(Error::FitFailure(msg)) => assert!(msg.contains("rank deficient"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let locs = gen_perturbed_grid(9, 1).unwrap();
        let data = simulate_gp(&locs, &truth(), 1).unwrap();
        let mut cfg = FitConfig::exact(MaternSpec::new(10.0, 0.1, 0.5).unwrap());
        assert!(matches!(fit_mle(&data, &cfg), Err(Error::InvalidArgument(_))));
        cfg.init.sigma2 = 1.0;
        cfg.opt_tol = 0.0;
        assert!(fit_mle(&data, &cfg).is_err());
    }
}
