//! Iterated forecasts, quantile fans, densities from quantile forecasts and
//! the recursive pseudo-out-of-sample harness.
//!
//! State forecasts iterate the VAR conditional mean from the last smoothed
//! states of each draw, optionally adding simulated innovations. Quantile
//! forecasts of the panel are projections `c + Λ f + Γ g` averaged over
//! draws. Models with Gaussian measurement errors (FAVAR) report the
//! quantiles of their Gaussian predictive distribution instead.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{Method, ModelConfig, OmegaSource, Variant};
use crate::error::{Error, Result};
use crate::evaluate::{quantile_score, ScoreSeries};
use crate::exec::Execution;
use crate::linalg::draw_psd;
use crate::model::NoiseModel;
use crate::panel::PanelData;
use crate::posterior::{block, PosteriorDraws};
use crate::rng::{stream, tag};
use crate::statespace::build_companion;
use crate::structural::ma_coefficients;

/// Iterate `s_t = v + Σ_c Φ_c s_{t−c}` for `horizon` steps. `history` holds
/// at least `p` rows, oldest first. Returns `horizon × l`.
pub fn iterate_var(
    intercept: &DVector<f64>,
    coeffs: &[DMatrix<f64>],
    history: &DMatrix<f64>,
    horizon: usize,
) -> Result<DMatrix<f64>> {
    iterate_with(intercept, coeffs, history, horizon, |_| None)
}

fn iterate_with<F>(
    intercept: &DVector<f64>,
    coeffs: &[DMatrix<f64>],
    history: &DMatrix<f64>,
    horizon: usize,
    mut shock: F,
) -> Result<DMatrix<f64>>
where
    F: FnMut(usize) -> Option<DVector<f64>>,
{
    if horizon == 0 {
        return Err(Error::InvalidParameter("forecast horizon must be at least 1".into()));
    }
    let l = intercept.len();
    let p = coeffs.len();
    if history.ncols() != l || history.nrows() < p {
        return Err(Error::Dimension(format!(
            "history is {}x{}, need at least {p} rows of {l} states",
            history.nrows(),
            history.ncols()
        )));
    }
    let mut rows: Vec<DVector<f64>> = (history.nrows() - p..history.nrows())
        .map(|t| history.row(t).transpose())
        .collect();
    let mut out = DMatrix::zeros(horizon, l);
    for h in 0..horizon {
        let mut s = intercept.clone();
        for (c, phi) in coeffs.iter().enumerate() {
            s += phi * &rows[rows.len() - 1 - c];
        }
        if let Some(e) = shock(h) {
            s += e;
        }
        out.row_mut(h).copy_from(&s.transpose());
        rows.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastSettings {
    pub horizon: usize,
    pub filter_explosive: bool,
    /// Add simulated VAR innovations (fan-chart mode).
    pub simulate_shocks: bool,
    pub omega_source: OmegaSource,
    pub seed: u64,
}

impl ForecastSettings {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self {
            horizon: cfg.horizon,
            filter_explosive: cfg.filter_explosive,
            simulate_shocks: false,
            omega_source: cfg.omega_source,
            seed: cfg.mcmc.seed,
        }
    }
}

/// Per-draw state paths over horizons `1..=H`.
#[derive(Debug, Clone)]
pub struct StateForecast {
    pub horizon: usize,
    /// Posterior draw behind each path.
    pub draws: Vec<usize>,
    /// `H × l` per kept draw.
    pub paths: Vec<DMatrix<f64>>,
    /// Draws dropped by the explosive-root filter.
    pub excluded: usize,
    pub simulated_shocks: bool,
}

pub fn forecast_states(post: &PosteriorDraws, settings: &ForecastSettings, exec: Execution) -> Result<StateForecast> {
    if settings.horizon == 0 {
        return Err(Error::InvalidParameter("forecast horizon must be at least 1".into()));
    }
    let lay = post.layout();
    let (t_len, p) = (lay.t_len, lay.p);
    let per = exec.try_map(post.n_draws(), |d| -> Result<Option<DMatrix<f64>>> {
        let var = post.var_draw(d)?;
        if settings.filter_explosive {
            let comp = build_companion(&var.intercept, &var.coeffs)?;
            if comp.spectral_radius() >= 1.0 {
                return Ok(None);
            }
        }
        let states = post.factors(d)?;
        let history = states.rows(t_len - p, p).into_owned();
        if settings.simulate_shocks {
            let omega = var.omega(settings.omega_source);
            let zero = DVector::zeros(omega.nrows());
            let mut rng = stream(settings.seed, &[tag::FORECAST, d as u64]);
            iterate_with(&var.intercept, &var.coeffs, &history, settings.horizon, |_| {
                Some(draw_psd(&zero, &omega, &mut rng))
            })
            .map(Some)
        } else {
            iterate_var(&var.intercept, &var.coeffs, &history, settings.horizon).map(Some)
        }
    })?;
    let mut draws = Vec::new();
    let mut paths = Vec::new();
    for (d, p) in per.into_iter().enumerate() {
        if let Some(p) = p {
            draws.push(d);
            paths.push(p);
        }
    }
    if paths.is_empty() {
        return Err(Error::InsufficientSample("every posterior draw is explosive".into()));
    }
    Ok(StateForecast {
        horizon: settings.horizon,
        excluded: post.n_draws() - paths.len(),
        draws,
        paths,
        simulated_shocks: settings.simulate_shocks,
    })
}

/// `c + W s_h` for each horizon: maps an `H × l` state path to `H × n_eq`.
pub fn project_forecast(path: &DMatrix<f64>, projection: &DMatrix<f64>, intercept: &DVector<f64>) -> Result<DMatrix<f64>> {
    if path.ncols() != projection.ncols() || projection.nrows() != intercept.len() {
        return Err(Error::Dimension(format!(
            "path has {} states, projection is {}x{}, intercepts {}",
            path.ncols(),
            projection.nrows(),
            projection.ncols(),
            intercept.len()
        )));
    }
    let mut out = path * projection.transpose();
    for mut row in out.row_iter_mut() {
        row += intercept.transpose();
    }
    Ok(out)
}

/// Quantile forecasts of every panel series at levels `levels` and
/// horizons `1..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastFan {
    pub series_labels: Vec<String>,
    pub levels: Vec<f64>,
    pub horizon: usize,
    pub origin: String,
    /// Index `((h − 1)·n_series + s)·n_levels + level`.
    pub values: Vec<f64>,
    pub n_draws_used: usize,
    /// Levels come from the Gaussian predictive distribution.
    pub gaussian: bool,
}

impl ForecastFan {
    fn idx(&self, h: usize, s: usize, li: usize) -> usize {
        ((h - 1) * self.series_labels.len() + s) * self.levels.len() + li
    }

    /// Quantile forecast at horizon `h ≥ 1`.
    pub fn get(&self, h: usize, s: usize, li: usize) -> f64 {
        self.values[self.idx(h, s, li)]
    }

    pub fn quantiles_at(&self, h: usize, s: usize) -> Vec<f64> {
        (0..self.levels.len()).map(|li| self.get(h, s, li)).collect()
    }

    pub fn level_index(&self, q: f64) -> Option<usize> {
        self.levels.iter().position(|&l| (l - q).abs() < 1e-9)
    }

    pub fn density(&self, h: usize, s: usize) -> Result<DensityGrid> {
        density_from_quantiles(&self.levels, &self.quantiles_at(h, s))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["variable", "quantile", "horizon", "value"])?;
        for h in 1..=self.horizon {
            for (s, lab) in self.series_labels.iter().enumerate() {
                for (li, q) in self.levels.iter().enumerate() {
                    wr.write_record([
                        lab.clone(),
                        q.to_string(),
                        h.to_string(),
                        format!("{:.10e}", self.get(h, s, li)),
                    ])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Density grids for horizon `h`, one block of rows per series.
    pub fn write_density_csv<W: Write>(&self, h: usize, w: W) -> Result<Vec<String>> {
        let mut wr = csv::Writer::from_writer(w);
        let mut warnings = Vec::new();
        wr.write_record(["variable", "horizon", "x", "density"])?;
        for (s, lab) in self.series_labels.iter().enumerate() {
            let g = self.density(h, s)?;
            if g.degenerate {
                warnings.push(format!("{lab}: quantile forecasts coincide, density is a spike"));
            }
            for (x, d) in g.x.iter().zip(&g.density) {
                wr.write_record([lab.clone(), h.to_string(), format!("{x:.10e}"), format!("{d:.10e}")])?;
            }
        }
        wr.flush()?;
        Ok(warnings)
    }
}

fn standard_normal_quantile(q: f64) -> f64 {
    Normal::standard().inverse_cdf(q)
}

/// Index of the quantile block whose forecasts feed the own lag beyond the
/// first step: the block nearest the median.
fn median_block(quantiles: &[f64]) -> usize {
    quantiles
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
        .map(|(r, _)| r)
        .unwrap_or(0)
}

/// Project state forecasts to quantile forecasts of the panel series.
///
/// For asymmetric-Laplace models `levels` must be a subset of the model's
/// quantile grid (`None` uses the whole grid). For Gaussian models any levels
/// in (0,1) are allowed and default to the model's grid.
pub fn forecast_quantiles(
    post: &PosteriorDraws,
    states: &StateForecast,
    levels: Option<&[f64]>,
    exec: Execution,
) -> Result<ForecastFan> {
    let lay = post.layout().clone();
    let ns = lay.n_series();
    let hmax = states.horizon;
    let levels: Vec<f64> = levels.map(|l| l.to_vec()).unwrap_or_else(|| lay.quantiles.clone());
    if levels.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::InvalidParameter("forecast levels must lie in (0,1)".into()));
    }
    let gaussian = lay.noise == NoiseModel::Gaussian;
    let blocks: Vec<usize> = if gaussian {
        Vec::new()
    } else {
        levels
            .iter()
            .map(|&q| {
                lay.quantiles
                    .iter()
                    .position(|&m| (m - q).abs() < 1e-9)
                    .ok_or_else(|| Error::Config(format!("level {q} is not one of the model's quantiles")))
            })
            .collect::<Result<_>>()?
    };
    let last = &post.meta.last_values;
    if lay.own_lag && last.len() != ns {
        return Err(Error::Container("own-lag forecasts need the last observed panel row".into()));
    }
    let rmed = median_block(&lay.quantiles);
    let nl = levels.len();
    let per = exec.try_map(states.paths.len(), |k| -> Result<Vec<f64>> {
        let d = states.draws[k];
        let (w, c) = post.projection(d)?;
        let beta = post.own_lag(d)?;
        let y = project_forecast(&states.paths[k], &w, &c)?;
        // Own-lag recursion: step 1 uses the last observation, later steps the
        // median-block forecast.
        let mut vals = DMatrix::zeros(hmax, lay.n_eq());
        let mut lag: Vec<f64> = if lay.own_lag { last.clone() } else { vec![0.0; ns] };
        for h in 0..hmax {
            for e in 0..lay.n_eq() {
                let s = lay.eq_series(e);
                vals[(h, e)] = y[(h, e)] + if lay.own_lag { beta[e] * lag[s] } else { 0.0 };
            }
            for (s, l) in lag.iter_mut().enumerate() {
                *l = vals[(h, lay.eq(rmed, s / lay.n, s % lay.n))];
            }
        }
        let mut out = vec![0.0; hmax * ns * nl];
        if gaussian {
            let sd = gaussian_sd(post, d, &w, &beta, hmax, states.simulated_shocks)?;
            for h in 0..hmax {
                for s in 0..ns {
                    for (li, &q) in levels.iter().enumerate() {
                        out[(h * ns + s) * nl + li] = vals[(h, s)] + standard_normal_quantile(q) * sd[(h, s)];
                    }
                }
            }
        } else {
            for h in 0..hmax {
                for s in 0..ns {
                    for (li, &r) in blocks.iter().enumerate() {
                        out[(h * ns + s) * nl + li] = vals[(h, lay.eq(r, s / lay.n, s % lay.n))];
                    }
                }
            }
        }
        Ok(out)
    })?;
    let n = per.len() as f64;
    let mut values = vec![0.0; hmax * ns * nl];
    for v in &per {
        for (a, b) in values.iter_mut().zip(v) {
            *a += b;
        }
    }
    values.iter_mut().for_each(|v| *v /= n);
    let series_labels = (0..lay.m)
        .flat_map(|i| (0..lay.n).map(move |j| (i, j)))
        .map(|(i, j)| format!("{}.{}", post.meta.indicator_labels[i], post.meta.country_labels[j]))
        .collect();
    Ok(ForecastFan {
        series_labels,
        levels,
        horizon: hmax,
        origin: post.meta.time_index.last().cloned().unwrap_or_default(),
        values,
        n_draws_used: per.len(),
        gaussian,
    })
}

/// Predictive standard deviations `H × n_series` of a Gaussian model:
/// `Var_h = W Σ_h W' + σ² (+ β² Var_{h−1})`, where `Σ_h` is the state
/// forecast-error covariance. The own-lag term ignores the covariance between
/// the lagged series and the state errors.
fn gaussian_sd(
    post: &PosteriorDraws,
    d: usize,
    w: &DMatrix<f64>,
    beta: &DVector<f64>,
    hmax: usize,
    shocks_in_paths: bool,
) -> Result<DMatrix<f64>> {
    let lay = post.layout();
    let var = post.var_draw(d)?;
    let omega = var.omega(post.meta.config.omega_source);
    let l = omega.nrows();
    let scales = post.get(block::SCALES)?.slice(d);
    let psi = ma_coefficients(&var.coeffs, l, hmax);
    let mut sigma = DMatrix::zeros(l, l);
    let mut prev = vec![0.0; lay.n_series()];
    let mut out = DMatrix::zeros(hmax, lay.n_series());
    for h in 0..hmax {
        sigma += &psi[h] * &omega * psi[h].transpose();
        for s in 0..lay.n_series() {
            let e = s;
            let wr = w.row(e);
            let state_var = if shocks_in_paths { 0.0 } else { (&wr * &sigma * wr.transpose())[(0, 0)] };
            let own = if lay.own_lag { beta[e] * beta[e] * prev[s] } else { 0.0 };
            let v = state_var + scales[e] + own;
            prev[s] = v;
            out[(h, s)] = v.max(0.0).sqrt();
        }
    }
    Ok(out)
}

/// Smoothed density implied by a set of quantile forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// Fewer than two distinct values: a narrow spike was returned.
    pub degenerate: bool,
}

pub const DENSITY_GRID_POINTS: usize = 512;

/// Gaussian kernel smoother over quantile forecasts. Each point carries the
/// probability mass of its level, `(q_{k+1} − q_{k−1})/2` with `q_0 = 0` and
/// `q_{R+1} = 1`, so dense tails of the grid are not over-weighted. The
/// bandwidth follows Silverman's rule with the weighted standard deviation
/// and the interquartile range read off the quantiles.
pub fn density_from_quantiles(levels: &[f64], values: &[f64]) -> Result<DensityGrid> {
    if levels.len() != values.len() || levels.is_empty() {
        return Err(Error::Dimension(format!(
            "{} levels for {} values",
            levels.len(),
            values.len()
        )));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) || levels.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::InvalidParameter("levels must be strictly increasing in (0,1)".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantile forecast".into()));
    }
    let r = levels.len();
    let mut weights: Vec<f64> = (0..r)
        .map(|k| {
            let lo = if k == 0 { 0.0 } else { levels[k - 1] };
            let hi = if k + 1 == r { 1.0 } else { levels[k + 1] };
            (hi - lo) / 2.0
        })
        .collect();
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= wsum);
    let mean: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum();
    let sd = weights
        .iter()
        .zip(values)
        .map(|(w, v)| w * (v - mean).powi(2))
        .sum::<f64>()
        .sqrt();
    let lo_v = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi_v = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = match (interp(levels, values, 0.25), interp(levels, values, 0.75)) {
        (Some(a), Some(b)) if b > a => sd.min((b - a) / 1.34),
        _ => sd,
    };
    let degenerate = hi_v - lo_v <= 1e-12 * (1.0 + lo_v.abs().max(hi_v.abs()));
    let bandwidth = if degenerate || spread <= 0.0 {
        1e-6 * (1.0 + mean.abs())
    } else {
        0.9 * spread * (r as f64).powf(-0.2)
    };
    let (a, b) = (lo_v - 3.0 * bandwidth, hi_v + 3.0 * bandwidth);
    let n = DENSITY_GRID_POINTS;
    let step = (b - a) / (n - 1) as f64;
    let x: Vec<f64> = (0..n).map(|i| a + step * i as f64).collect();
    let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let mut density: Vec<f64> = x
        .iter()
        .map(|&xi| {
            weights
                .iter()
                .zip(values)
                .map(|(w, v)| w * norm * (-0.5 * ((xi - v) / bandwidth).powi(2)).exp())
                .sum()
        })
        .collect();
    let integral = trapezoid(&x, &density);
    if !(integral > 0.0) {
        return Err(Error::NonFinite("density integral".into()));
    }
    density.iter_mut().for_each(|d| *d /= integral);
    Ok(DensityGrid {
        x,
        density,
        bandwidth,
        degenerate,
    })
}

fn interp(levels: &[f64], values: &[f64], q: f64) -> Option<f64> {
    let k = levels.iter().position(|&l| l >= q)?;
    if (levels[k] - q).abs() < 1e-12 {
        return Some(values[k]);
    }
    if k == 0 {
        return None;
    }
    let t = (q - levels[k - 1]) / (levels[k] - levels[k - 1]);
    Some(values[k - 1] + t * (values[k] - values[k - 1]))
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

impl DensityGrid {
    pub fn mean(&self) -> f64 {
        let xy: Vec<f64> = self.x.iter().zip(&self.density).map(|(x, d)| x * d).collect();
        trapezoid(&self.x, &xy)
    }

    pub fn sd(&self) -> f64 {
        let m = self.mean();
        let v: Vec<f64> = self.x.iter().zip(&self.density).map(|(x, d)| (x - m).powi(2) * d).collect();
        trapezoid(&self.x, &v).sqrt()
    }
}

pub const DEFAULT_POOS_HORIZONS: [usize; 4] = [1, 6, 12, 24];

#[derive(Debug, Clone, PartialEq)]
pub struct PoosSettings {
    pub models: Vec<Variant>,
    pub horizons: Vec<usize>,
    /// Quantile levels at which forecasts are scored.
    pub levels: Vec<f64>,
    /// Length of the first estimation window; half the sample when unset.
    pub first_window: Option<usize>,
    /// Observations appended between origins.
    pub step: usize,
    pub method: Method,
    pub checkpoint_dir: Option<PathBuf>,
    pub exec: Execution,
}

impl PoosSettings {
    pub fn new(models: Vec<Variant>, cfg: &ModelConfig) -> Self {
        Self {
            models,
            horizons: DEFAULT_POOS_HORIZONS.to_vec(),
            levels: cfg.quantiles.clone(),
            first_window: None,
            step: 1,
            method: Method::Vb,
            checkpoint_dir: None,
            exec: cfg.execution(),
        }
    }
}

/// Quantile forecasts of one model made at one origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginForecast {
    pub key: String,
    pub model: String,
    /// Length of the estimation window; horizon `h` targets row `origin + h − 1`.
    pub origin: usize,
    pub levels: Vec<f64>,
    pub horizon: usize,
    /// Index `((h − 1)·n_series + s)·n_levels + level`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PoosResult {
    pub origins: Vec<usize>,
    pub forecasts: Vec<OriginForecast>,
    pub scores: Vec<ScoreSeries>,
    /// Origins read back from checkpoints instead of re-estimated.
    pub resumed: usize,
}

fn panel_fingerprint(panel: &PanelData) -> String {
    let mut h = Sha256::new();
    for v in panel.values.iter().chain(panel.globals.iter()) {
        h.update(v.to_le_bytes());
    }
    for s in panel.time_index.iter() {
        h.update(s.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn origin_seed(base: u64, origin: usize, model: usize) -> u64 {
    stream(base, &[tag::POOS, origin as u64, model as u64]).next_u64()
}

/// Estimate `variant` on the first `origin` periods and forecast `hmax`
/// steps; returns the flattened fan values.
fn forecast_origin(
    panel: &PanelData,
    cfg: &ModelConfig,
    variant: Variant,
    origin: usize,
    hmax: usize,
    levels: &[f64],
    exec: Execution,
) -> Result<Vec<f64>> {
    let window = panel.truncate(origin)?;
    let mut cfg = cfg.clone();
    cfg.variant = variant;
    cfg.horizon = hmax;
    let fs = ForecastSettings::from_config(&cfg);
    let run = |p: &PanelData| -> Result<ForecastFan> {
        let post = crate::estimate(p, &cfg)?;
        let st = forecast_states(&post, &fs, exec)?;
        forecast_quantiles(&post, &st, Some(levels), exec)
    };
    if variant.is_univariate() {
        let (m, n, nl) = (panel.m(), panel.n(), levels.len());
        let ns = m * n;
        let fans = exec.try_map(ns, |s| run(&window.select_series(s / n, s % n, variant.uses_globals())))?;
        let mut out = vec![0.0; hmax * ns * nl];
        for (s, fan) in fans.iter().enumerate() {
            for h in 1..=hmax {
                for li in 0..nl {
                    out[((h - 1) * ns + s) * nl + li] = fan.get(h, 0, li);
                }
            }
        }
        Ok(out)
    } else {
        Ok(run(&window)?.values)
    }
}

/// Expanding-window evaluation: estimate on the first `o` periods, forecast
/// `1..=max(horizons)` steps, score against the realized values, and move the
/// origin forward by `step`.
pub fn recursive_poos(panel: &PanelData, cfg: &ModelConfig, settings: &PoosSettings) -> Result<PoosResult> {
    cfg.validate()?;
    let t_len = panel.t_len();
    let first = settings.first_window.unwrap_or(t_len / 2);
    if first < cfg.p + 13 {
        return Err(Error::InsufficientSample(format!(
            "first estimation window has {first} periods; need at least {}",
            cfg.p + 13
        )));
    }
    if first >= t_len {
        return Err(Error::InsufficientSample("no observations left for evaluation".into()));
    }
    if settings.models.is_empty() || settings.horizons.is_empty() || settings.levels.is_empty() {
        return Err(Error::Config("poos needs at least one model, horizon and level".into()));
    }
    if settings.horizons.iter().any(|&h| h == 0) || settings.step == 0 {
        return Err(Error::Config("horizons and step must be positive".into()));
    }
    for &v in &settings.models {
        if v != Variant::Favar {
            for &q in &settings.levels {
                if !cfg.quantiles.iter().any(|&m| (m - q).abs() < 1e-9) {
                    return Err(Error::Config(format!(
                        "level {q} is not in the quantile grid of {}",
                        v.name()
                    )));
                }
            }
        }
    }
    let hmax = *settings.horizons.iter().max().unwrap();
    let origins: Vec<usize> = (first..t_len).step_by(settings.step).collect();
    let mut cfg = cfg.clone();
    cfg.method = settings.method;
    let fingerprint = panel_fingerprint(panel);
    if let Some(dir) = &settings.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let jobs: Vec<(usize, usize)> = origins
        .iter()
        .flat_map(|&o| (0..settings.models.len()).map(move |m| (o, m)))
        .collect();
    let base_seed = match cfg.method {
        Method::Mcmc => cfg.mcmc.seed,
        Method::Vb => cfg.vb.seed,
    };
    let results = settings.exec.try_map(jobs.len(), |jx| -> Result<(OriginForecast, bool)> {
        let (o, mi) = jobs[jx];
        let variant = settings.models[mi];
        let mut c = cfg.clone();
        let seed = origin_seed(base_seed, o, mi);
        c.mcmc.seed = seed;
        c.vb.seed = seed;
        c.variant = variant;
        let key = format!(
            "{}:{}:{}:{}:{}:{:?}",
            c.hash(),
            fingerprint,
            variant.name(),
            o,
            hmax,
            settings.levels
        );
        let path = settings
            .checkpoint_dir
            .as_ref()
            .map(|d| checkpoint_path(d, variant, o));
        if let Some(p) = &path {
            if let Ok(text) = fs::read_to_string(p) {
                if let Ok(f) = serde_json::from_str::<OriginForecast>(&text) {
                    if f.key == key {
                        return Ok((f, true));
                    }
                }
            }
        }
        let values = forecast_origin(panel, &c, variant, o, hmax, &settings.levels, settings.exec)?;
        let f = OriginForecast {
            key,
            model: variant.name().to_string(),
            origin: o,
            levels: settings.levels.clone(),
            horizon: hmax,
            values,
        };
        if let Some(p) = &path {
            let tmp = p.with_extension("json.tmp");
            fs::write(&tmp, serde_json::to_vec(&f)?)?;
            fs::rename(&tmp, p)?;
        }
        Ok((f, false))
    })?;
    let resumed = results.iter().filter(|r| r.1).count();
    let forecasts: Vec<OriginForecast> = results.into_iter().map(|r| r.0).collect();
    let scores = score_forecasts(panel, &forecasts, &settings.models, &settings.horizons, &settings.levels);
    Ok(PoosResult {
        origins,
        forecasts,
        scores,
        resumed,
    })
}

fn checkpoint_path(dir: &Path, variant: Variant, origin: usize) -> PathBuf {
    dir.join(format!("origin_{origin:05}_{}.json", variant.name()))
}

/// Tick losses of every (model, series, level, horizon) cell, ordered by
/// forecast origin.
pub fn score_forecasts(
    panel: &PanelData,
    forecasts: &[OriginForecast],
    models: &[Variant],
    horizons: &[usize],
    levels: &[f64],
) -> Vec<ScoreSeries> {
    let t_len = panel.t_len();
    let ns = panel.m() * panel.n();
    let nl = levels.len();
    let mut out = Vec::new();
    for &v in models {
        let mut fc: Vec<&OriginForecast> = forecasts.iter().filter(|f| f.model == v.name()).collect();
        fc.sort_by_key(|f| f.origin);
        for s in 0..ns {
            let label = panel.series_label(s / panel.n(), s % panel.n());
            for (li, &q) in levels.iter().enumerate() {
                for &h in horizons {
                    let mut targets = Vec::new();
                    let mut losses = Vec::new();
                    for f in &fc {
                        let t = f.origin + h - 1;
                        if t >= t_len || h > f.horizon {
                            continue;
                        }
                        let qv = f.values[((h - 1) * ns + s) * nl + li];
                        targets.push(panel.time_index[t].clone());
                        losses.push(quantile_score(panel.values[(t, s)], qv, q));
                    }
                    out.push(ScoreSeries {
                        model: v.name().to_string(),
                        variable: label.clone(),
                        quantile: q,
                        horizon: h,
                        targets,
                        losses,
                    });
                }
            }
        }
    }
    out
}
