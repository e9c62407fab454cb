//! Model configuration (JSON). Every field has a default, so an empty file
//! yields the benchmark configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::statespace::DEFAULT_INIT_VAR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "QFAVAR", alias = "qfavar")]
    Qfavar,
    #[serde(rename = "QDFM", alias = "qdfm")]
    Qdfm,
    #[serde(rename = "FAVAR", alias = "favar")]
    Favar,
    #[serde(rename = "QAR", alias = "qar")]
    Qar,
    #[serde(rename = "QAR-X", alias = "qar-x", alias = "QARX", alias = "qarx")]
    QarX,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Qfavar => "QFAVAR",
            Variant::Qdfm => "QDFM",
            Variant::Favar => "FAVAR",
            Variant::Qar => "QAR",
            Variant::QarX => "QAR-X",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown variant `{s}`")))
    }

    /// Latent factors are part of the model.
    pub fn has_factors(self) -> bool {
        !matches!(self, Variant::Qar | Variant::QarX)
    }

    pub fn uses_globals(self) -> bool {
        !matches!(self, Variant::Qdfm | Variant::Qar)
    }

    pub fn is_univariate(self) -> bool {
        matches!(self, Variant::Qar | Variant::QarX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mcmc,
    #[default]
    Vb,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcmc" | "gibbs" => Ok(Method::Mcmc),
            "vb" => Ok(Method::Vb),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

/// Which innovation covariance structural analysis uses under stochastic
/// volatility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaSource {
    #[default]
    TimeAverage,
    EndOfSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    pub r0: f64,
    pub s0: f64,
    pub r_h: f64,
    pub s_h: f64,
    pub r_omega: f64,
    pub s_omega: f64,
    pub b_phi: f64,
    pub b_psi: f64,
    /// Prior mean of every free element of the contemporaneous matrix.
    pub mu_a: f64,
    /// Prior variance of every free element of the contemporaneous matrix.
    pub sigma_a: f64,
    /// Prior variance of VAR intercepts (not shrunk).
    pub intercept_var: f64,
    /// Prior variance of the initial companion state.
    pub init_state_var: f64,
    /// Prior variance of the initial log-volatility under SV.
    pub h0_var: f64,
    /// Replace the horseshoe on measurement and VAR coefficients with a
    /// fixed N(0, v) prior when set.
    pub fixed_coef_var: Option<f64>,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            r0: 0.01,
            s0: 0.01,
            r_h: 0.01,
            s_h: 0.01,
            r_omega: 0.01,
            s_omega: 0.01,
            b_phi: 1e-4,
            b_psi: 1e-4,
            mu_a: 0.0,
            sigma_a: 10.0,
            intercept_var: 10.0,
            init_state_var: DEFAULT_INIT_VAR,
            h0_var: 10.0,
            fixed_coef_var: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 5_000,
            thin: 10,
            seed: 42,
        }
    }
}

impl McmcSettings {
    pub fn stored_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbSettings {
    pub max_iters: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Iteration cap of the static factor extraction.
    pub step1_max_iters: usize,
    pub step1_tolerance: f64,
}

impl Default for VbSettings {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tolerance: 1e-6,
            seed: 42,
            step1_max_iters: 1000,
            step1_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub quantiles: Vec<f64>,
    pub p: usize,
    pub variant: Variant,
    pub include_intercepts: bool,
    pub include_own_lag: bool,
    /// Loadings on the global series in the measurement equations.
    pub include_global_loadings: bool,
    pub sv: bool,
    pub priors: Priors,
    pub mcmc: McmcSettings,
    pub vb: VbSettings,
    pub horizon: usize,
    pub method: Method,
    /// Drop draws with an explosive companion matrix in forecasting and
    /// structural analysis.
    pub filter_explosive: bool,
    pub omega_source: OmegaSource,
    /// Execution mode; not part of the model, so it is not serialized.
    #[serde(skip, default = "parallel_default")]
    pub parallel: bool,
}

fn parallel_default() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            quantiles: vec![0.1, 0.5, 0.9],
            p: 6,
            variant: Variant::Qfavar,
            include_intercepts: true,
            include_own_lag: false,
            include_global_loadings: true,
            sv: false,
            priors: Priors::default(),
            mcmc: McmcSettings::default(),
            vb: VbSettings::default(),
            horizon: 24,
            method: Method::Vb,
            filter_explosive: false,
            omega_source: OmegaSource::TimeAverage,
            parallel: true,
        }
    }
}

impl ModelConfig {
    pub fn fine_grid() -> Vec<f64> {
        vec![0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95]
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Serial
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.quantiles.is_empty() {
            return Err(Error::Config("quantile grid is empty".into()));
        }
        for &q in &self.quantiles {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Config(format!("quantile {q} outside (0,1)")));
            }
        }
        if self.quantiles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("quantiles must be strictly increasing".into()));
        }
        if self.p < 1 {
            return Err(Error::Config("lag order must be at least 1".into()));
        }
        if self.mcmc.burn_in >= self.mcmc.iterations {
            return Err(Error::Config("burn_in must be smaller than iterations".into()));
        }
        if self.mcmc.thin < 1 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.vb.tolerance >= 0.0) || self.vb.max_iters < 1 {
            return Err(Error::Config("vb tolerance must be nonnegative and max_iters ≥ 1".into()));
        }
        let pr = &self.priors;
        for (name, v) in [
            ("r0", pr.r0),
            ("s0", pr.s0),
            ("r_h", pr.r_h),
            ("s_h", pr.s_h),
            ("r_omega", pr.r_omega),
            ("s_omega", pr.s_omega),
            ("b_phi", pr.b_phi),
            ("b_psi", pr.b_psi),
            ("sigma_a", pr.sigma_a),
            ("intercept_var", pr.intercept_var),
            ("init_state_var", pr.init_state_var),
            ("h0_var", pr.h0_var),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("prior hyperparameter {name} must be positive")));
            }
        }
        if let Some(v) = pr.fixed_coef_var {
            if !(v > 0.0) {
                return Err(Error::Config("fixed_coef_var must be positive".into()));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).unwrap_or_default();
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let cfg: ModelConfig = if text.trim().is_empty() {
        ModelConfig::default()
    } else {
        serde_json::from_str(text)?
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ModelConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_benchmark() {
        let c = parse_config("").unwrap();
        assert_eq!(c.quantiles, vec![0.1, 0.5, 0.9]);
        assert_eq!(c.p, 6);
        assert_eq!(c.variant, Variant::Qfavar);
        assert!(!c.sv);
        assert_eq!(c, parse_config("{}").unwrap());
    }

    #[test]
    fn fine_grid() {
        let c = parse_config(r#"{"quantiles":[0.05,0.1,0.25,0.5,0.75,0.9,0.95]}"#).unwrap();
        assert_eq!(c.quantiles.len(), 7);
        assert_eq!(c.quantiles, ModelConfig::fine_grid());
    }

    #[test]
    fn invalid_configs() {
        assert!(parse_config(r#"{"quantiles":[1.5]}"#).is_err());
        assert!(parse_config(r#"{"quantiles":[0.5,0.1]}"#).is_err());
        assert!(parse_config(r#"{"mcmc":{"iterations":10,"burn_in":10}}"#).is_err());
        assert!(parse_config(r#"{"mcmc":{"thin":0}}"#).is_err());
        assert!(parse_config(r#"{"horizon":0}"#).is_err());
        assert!(parse_config(r#"{"p":0}"#).is_err());
    }

    #[test]
    fn variant_names() {
        assert_eq!(Variant::parse("QAR-X").unwrap(), Variant::QarX);
        let c = parse_config(r#"{"variant":"FAVAR"}"#).unwrap();
        assert_eq!(c.variant, Variant::Favar);
        assert!(Variant::parse("VAR").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.p = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
