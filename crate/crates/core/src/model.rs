//! Index layout shared by the estimators.
//!
//! State vector `s_t` (dimension `l = m·R + k`): quantile factors ordered
//! quantile-major, `(i, r) ↦ r·m + i`, followed by the `k` global series.
//! Measurement equations are ordered `(r, i, j) ↦ r·m·n + i·n + j`. The first
//! country (`j = 0`) is the reference series of each (indicator, quantile)
//! block: its loading is fixed at one and its intercept at zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::panel::PanelData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    AsymmetricLaplace,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub variant: Variant,
    pub quantiles: Vec<f64>,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub p: usize,
    pub t_len: usize,
    pub noise: NoiseModel,
    pub intercepts: bool,
    pub own_lag: bool,
    pub global_loadings: bool,
}

/// Free coefficients of one measurement equation, in the order
/// `[intercept?, own lag?, loading?, global loadings…]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqSpec {
    pub intercept: bool,
    pub own_lag: bool,
    pub loading: bool,
    /// Loading applied to the factor without being estimated (1 for the
    /// reference series, 0 without factors).
    pub fixed_loading: f64,
    pub n_global: usize,
}

impl EqSpec {
    pub fn n_coefs(&self) -> usize {
        self.intercept as usize + self.own_lag as usize + self.loading as usize + self.n_global
    }

    pub fn intercept_index(&self) -> Option<usize> {
        self.intercept.then_some(0)
    }

    pub fn own_lag_index(&self) -> Option<usize> {
        self.own_lag.then_some(self.intercept as usize)
    }

    pub fn loading_index(&self) -> Option<usize> {
        self.loading
            .then_some(self.intercept as usize + self.own_lag as usize)
    }

    pub fn global_start(&self) -> usize {
        self.intercept as usize + self.own_lag as usize + self.loading as usize
    }
}

impl Layout {
    pub fn new(panel: &PanelData, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let variant = cfg.variant;
        let (quantiles, noise) = match variant {
            Variant::Favar => (vec![0.5], NoiseModel::Gaussian),
            _ => (cfg.quantiles.clone(), NoiseModel::AsymmetricLaplace),
        };
        let k = if variant.uses_globals() { panel.k() } else { 0 };
        if variant.is_univariate() && panel.m() * panel.n() != 1 {
            return Err(Error::Config(format!(
                "{} needs a single series, the panel has {}",
                variant.name(),
                panel.m() * panel.n()
            )));
        }
        if panel.m() * panel.n() == 0 {
            return Err(Error::Panel("panel has no series".into()));
        }
        let own_lag = cfg.include_own_lag || variant.is_univariate();
        let t_len = panel.t_len();
        let needed = cfg.p + 2 + own_lag as usize;
        if t_len < needed {
            return Err(Error::InsufficientSample(format!(
                "{t_len} periods with {} lags; need at least {needed}",
                cfg.p
            )));
        }
        Ok(Self {
            variant,
            quantiles,
            m: panel.m(),
            n: panel.n(),
            k,
            p: cfg.p,
            t_len,
            noise,
            intercepts: cfg.include_intercepts,
            own_lag,
            global_loadings: cfg.include_global_loadings && k > 0,
        })
    }

    pub fn r(&self) -> usize {
        self.quantiles.len()
    }

    pub fn has_factors(&self) -> bool {
        self.variant.has_factors()
    }

    pub fn n_factors(&self) -> usize {
        if self.has_factors() {
            self.m * self.r()
        } else {
            0
        }
    }

    pub fn state_dim(&self) -> usize {
        self.n_factors() + self.k
    }

    pub fn n_series(&self) -> usize {
        self.m * self.n
    }

    pub fn n_eq(&self) -> usize {
        self.r() * self.m * self.n
    }

    pub fn eq(&self, r: usize, i: usize, j: usize) -> usize {
        r * self.m * self.n + i * self.n + j
    }

    pub fn eq_parts(&self, e: usize) -> (usize, usize, usize) {
        let mn = self.m * self.n;
        (e / mn, (e % mn) / self.n, e % self.n)
    }

    /// Panel column observed by equation `e`.
    pub fn eq_series(&self, e: usize) -> usize {
        e % (self.m * self.n)
    }

    pub fn factor(&self, i: usize, r: usize) -> usize {
        r * self.m + i
    }

    pub fn global(&self, g: usize) -> usize {
        self.n_factors() + g
    }

    /// State index loaded by equation `e`, if any.
    pub fn eq_factor(&self, e: usize) -> Option<usize> {
        let (r, i, _) = self.eq_parts(e);
        self.has_factors().then(|| self.factor(i, r))
    }

    /// First period with a measurement equation (the own lag consumes one).
    pub fn first_obs(&self) -> usize {
        self.own_lag as usize
    }

    /// Number of VAR regressions.
    pub fn t_eff(&self) -> usize {
        self.t_len - self.p
    }

    pub fn eq_spec(&self, e: usize) -> EqSpec {
        let (_, _, j) = self.eq_parts(e);
        let reference = self.has_factors() && j == 0;
        EqSpec {
            intercept: self.intercepts && !reference,
            own_lag: self.own_lag,
            loading: self.has_factors() && !reference,
            fixed_loading: if reference { 1.0 } else { 0.0 },
            n_global: if self.global_loadings && !reference { self.k } else { 0 },
        }
    }

    pub fn state_labels(&self, indicators: &[String], globals: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.state_dim());
        if self.has_factors() {
            for r in 0..self.r() {
                for i in 0..self.m {
                    out.push(format!("{}@q{}", indicators[i], self.quantiles[r]));
                }
            }
        }
        out.extend(globals.iter().take(self.k).cloned());
        out
    }

    pub fn eq_labels(&self, panel: &PanelData) -> Vec<String> {
        (0..self.n_eq())
            .map(|e| {
                let (r, i, j) = self.eq_parts(e);
                format!("{}@q{}", panel.series_label(i, j), self.quantiles[r])
            })
            .collect()
    }
}

/// Observed data in the layout's column conventions.
#[derive(Debug, Clone)]
pub struct ModelData {
    /// T × (m·n).
    pub y: DMatrix<f64>,
    /// T × k (empty when the variant drops globals).
    pub g: DMatrix<f64>,
}

impl ModelData {
    pub fn new(panel: &PanelData, layout: &Layout) -> Self {
        Self {
            y: panel.values.clone(),
            g: if layout.k > 0 {
                panel.globals.clone()
            } else {
                DMatrix::zeros(panel.t_len(), 0)
            },
        }
    }

    /// Regressors of equation `e` at period `t` (requires `t ≥ first_obs`).
    pub fn design_row(&self, layout: &Layout, spec: &EqSpec, e: usize, states: &DMatrix<f64>, t: usize) -> DVector<f64> {
        let mut x = DVector::zeros(spec.n_coefs());
        let col = layout.eq_series(e);
        let mut k = 0;
        if spec.intercept {
            x[k] = 1.0;
            k += 1;
        }
        if spec.own_lag {
            x[k] = self.y[(t - 1, col)];
            k += 1;
        }
        if spec.loading {
            x[k] = states[(t, layout.eq_factor(e).unwrap_or(0))];
            k += 1;
        }
        for g in 0..spec.n_global {
            x[k + g] = self.g[(t, g)];
        }
        x
    }

    /// Part of the fitted value carried by fixed coefficients.
    pub fn fixed_offset(&self, layout: &Layout, spec: &EqSpec, e: usize, states: &DMatrix<f64>, t: usize) -> f64 {
        let fl = spec.fixed_loading;
        match layout.eq_factor(e) {
            Some(f) if fl != 0.0 => fl * states[(t, f)],
            _ => 0.0,
        }
    }

    /// T × l state matrix with the factor columns taken from `factors` and
    /// the global columns from the data.
    pub fn stack_states(&self, layout: &Layout, factors: &DMatrix<f64>) -> DMatrix<f64> {
        let nf = layout.n_factors();
        DMatrix::from_fn(layout.t_len, layout.state_dim(), |t, c| {
            if c < nf {
                factors[(t, c)]
            } else {
                self.g[(t, c - nf)]
            }
        })
    }
}
