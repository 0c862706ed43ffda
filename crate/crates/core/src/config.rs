//! Flat `key=value` configuration files.
//!
//! ```text
//! # TLR fit
//! backend = tlr
//! tlr.nb = 150
//! tlr.tlr_max_rank = 100
//! tlr.tlr_acc = 1e-9
//! opt_tol = 1e-6
//! bounds.alpha = 0.01, 5
//! fix.nu = 0.5
//! ```
//!
//! Recognized fit keys: `backend`, `bounds.{sigma2,alpha,nu,nugget}`,
//! `fix.{sigma2,alpha,nu,nugget}`, `free`, `opt_tol`, `max_iter`,
//! `init_step`, `init.{sigma2,alpha,eff_range,nu,nugget}`,
//! `tlr.{nb,tlr_max_rank,tlr_acc}` (also without the prefix), `vecchia.m`
//! and `gpp.knots_k`. Model keys: `sigma2`, `alpha` or `eff_range`, `nu`,
//! `nugget`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::covariance::{effective_range_to_alpha, MaternSpec};
use crate::error::{Error, Result};
use crate::geometry::{gen_regular_grid, GridRule, Rect};
use crate::likelihood::{Backend, FitConfig, GppConfig, Param, VecchiaConfig};
use crate::tlr::TlrConfig;

const TLR_KEYS: [&str; 3] = ["nb", "tlr_max_rank", "tlr_acc"];

/// Ordered key/value store; later assignments override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ConfigMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            map.set(k, v)?;
        }
        Ok(map)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses `k1=v1,k2=v2`. Values cannot themselves contain commas.
    pub fn parse_inline(s: &str) -> Result<Self> {
        let mut map = ConfigMap::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got `{item}`")))?;
            map.set(k, v)?;
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse("empty key".into()));
        }
        let key = if TLR_KEYS.contains(&key) { format!("tlr.{key}") } else { key.to_string() };
        self.entries.insert(key, value.trim().to_string());
        Ok(())
    }

    /// Overrides entries of `self` with those of `other`.
    pub fn merge(&mut self, other: &ConfigMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("{key}: `{v}` is not a number"))))
            .transpose()
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| v.parse::<usize>().map_err(|_| Error::Parse(format!("{key}: `{v}` is not a non-negative integer"))))
            .transpose()
    }

    fn pair(&self, key: &str) -> Result<Option<(f64, f64)>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let parts: Vec<&str> = v.split([',', ' ']).filter(|s| !s.is_empty()).collect();
        let bad = || Error::Parse(format!("{key}: expected `lower, upper`, got `{v}`"));
        if parts.len() != 2 {
            return Err(bad());
        }
        let lo = parts[0].parse().map_err(|_| bad())?;
        let hi = parts[1].parse().map_err(|_| bad())?;
        Ok(Some((lo, hi)))
    }

    /// Rejects keys outside `allowed`; entries ending in `.*` match a prefix.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.keys() {
            let ok = allowed.iter().any(|a| match a.strip_suffix('*') {
                Some(prefix) => k.starts_with(prefix),
                None => k == *a,
            });
            if !ok {
                return Err(Error::Parse(format!("unknown config key `{k}`")));
            }
        }
        Ok(())
    }

    /// Matérn parameters under `prefix` (`""` or e.g. `"init."`). Missing
    /// entries come from `defaults`; `eff_range` converts to `alpha` at the
    /// resolved `nu`.
    pub fn matern_spec(&self, prefix: &str, defaults: MaternSpec) -> Result<MaternSpec> {
        let key = |k: &str| format!("{prefix}{k}");
        let sigma2 = self.f64(&key("sigma2"))?.unwrap_or(defaults.sigma2);
        let nu = self.f64(&key("nu"))?.unwrap_or(defaults.nu);
        let nugget = self.f64(&key("nugget"))?.unwrap_or(defaults.nugget);
        let alpha = match (self.f64(&key("alpha"))?, self.f64(&key("eff_range"))?) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidArgument(format!("give only one of {} and {}", key("alpha"), key("eff_range"))))
            }
            (Some(a), None) => a,
            (None, Some(h)) => effective_range_to_alpha(h, nu)?,
            (None, None) => defaults.alpha,
        };
        MaternSpec::with_nugget(sigma2, alpha, nu, nugget)
    }

    /// Builds a [`FitConfig`]. Unless configured otherwise `nu` is fixed at
    /// its initial value (0.5) and the nugget at zero; `free = nu,nugget`
    /// releases them.
    pub fn fit_config(&self) -> Result<FitConfig> {
        self.check_keys(&[
            "backend", "bounds.*", "fix.*", "free", "opt_tol", "max_iter", "init_step", "init.*", "tlr.*", "vecchia.*", "gpp.*",
        ])?;
        let mut fixed = vec![Param::Nu, Param::Nugget];
        let mut init_defaults = MaternSpec { sigma2: 1.0, alpha: 0.1, nu: 0.5, nugget: 0.0 };
        if let Some(list) = self.get("free") {
            for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let p = param_by_name(name)?;
                fixed.retain(|q| *q != p);
                if p == Param::Nugget {
                    init_defaults.nugget = 0.01;
                }
            }
        }
        for p in Param::ALL {
            if let Some(v) = self.f64(&format!("fix.{}", p.name()))? {
                if !fixed.contains(&p) {
                    fixed.push(p);
                }
                p.set(&mut init_defaults, v);
            }
        }
        fixed.sort_by_key(|p| Param::ALL.iter().position(|q| q == p));
        let mut init = self.matern_spec("init.", init_defaults)?;
        for p in Param::ALL {
            // fix.* wins over init.*
            if let Some(v) = self.f64(&format!("fix.{}", p.name()))? {
                p.set(&mut init, v);
            }
        }

        let mut cfg = FitConfig::exact(init);
        cfg.fixed = fixed;
        for p in Param::ALL {
            if let Some(b) = self.pair(&format!("bounds.{}", p.name()))? {
                cfg.bounds.set(p, b);
            }
        }
        if let Some(t) = self.f64("opt_tol")? {
            cfg.opt_tol = t;
        }
        if let Some(m) = self.usize("max_iter")? {
            cfg.max_iter = m;
        }
        if let Some(s) = self.f64("init_step")? {
            cfg.init_step = s;
        }
        cfg.backend = self.backend()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn backend(&self) -> Result<Backend> {
        let tag = self.get("backend").unwrap_or("exact");
        Ok(match tag {
            "exact" => Backend::Exact,
            "tlr" => {
                let nb = self.usize("tlr.nb")?.ok_or_else(|| Error::InvalidArgument("tlr backend needs tlr.nb".into()))?;
                let max_rank = self.usize("tlr.tlr_max_rank")?.unwrap_or(nb);
                let acc = self.f64("tlr.tlr_acc")?.unwrap_or(1e-9);
                Backend::Tlr(TlrConfig::new(nb, max_rank, acc)?)
            }
            "vecchia" => Backend::Vecchia(VecchiaConfig { m: self.usize("vecchia.m")?.unwrap_or(30) }),
            "gpp" => {
                let k = self.usize("gpp.knots_k")?.unwrap_or(8);
                Backend::Gpp(GppConfig { knots: gen_regular_grid(k, Rect::UNIT, GridRule::Interior)? })
            }
            other => return Err(Error::InvalidArgument(format!("unknown backend `{other}`"))),
        })
    }

    /// The resolved entries as `key = value` lines, sorted by key.
    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn param_by_name(name: &str) -> Result<Param> {
    Param::ALL
        .into_iter()
        .find(|p| p.name() == name)
        .ok_or_else(|| Error::Parse(format!("unknown parameter `{name}`")))
}
