//! Synthetic panels with known ground truth.
//!
//! Generative model, per indicator `i` and country `j`:
//!
//! ```text
//! y_ijt = c_ij + γ_ij' g_t + λ_ij (b_it + κ exp(h_it) ε_ijt)
//! ```
//!
//! where `(b_t, g_t)` follows a stable VAR(p), `h_it` is an AR(1) log
//! volatility and `ε` is asymmetric Laplace with unit scale and median
//! zero. For a positive loading the q-quantile of `y_ijt` is
//! `c_ij + γ_ij' g_t + λ_ij f_it(q)` with the true quantile factor
//! `f_it(q) = b_it + κ exp(h_it) F⁻¹_ε(q)`, ordered in `q` by construction.
//! Series 0 of each indicator is the reference (`λ = 1`, `c = 0`, `γ = 0`).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::distributions::{al_mixture_draw, al_quantile, ALParams};
use crate::error::{Error, Result};
use crate::linalg::spectral_radius;
use crate::panel::PanelData;
use crate::statespace::build_companion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimDims {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub t_len: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    /// Quantile levels of the reported true factors.
    pub quantiles: Vec<f64>,
    /// Noise scale κ.
    pub noise_scale: f64,
    /// Asymmetry of ε (0.5 is symmetric Laplace).
    pub noise_q: f64,
    /// Spectral radius the base VAR is rescaled to.
    pub radius: f64,
    /// Standard deviation of the raw VAR coefficient draws (0 gives Φ = 0).
    pub coef_sd: f64,
    /// Standard deviation of the base VAR innovations.
    pub state_sd: f64,
    pub vol_persistence: f64,
    pub vol_sd: f64,
    /// Response of `h_it` to `b_{i,t−1}`; negative values widen the lower
    /// tail after bad outcomes.
    pub vol_feedback: f64,
    pub loading_range: (f64, f64),
    pub global_loading_sd: f64,
    pub intercept_sd: f64,
    /// Periods simulated and discarded before the sample starts.
    pub burn_in: usize,
    pub start_year: i32,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            quantiles: vec![0.1, 0.5, 0.9],
            noise_scale: 0.1,
            noise_q: 0.5,
            radius: 0.9,
            coef_sd: 0.3,
            state_sd: 1.0,
            vol_persistence: 0.9,
            vol_sd: 0.3,
            vol_feedback: 0.0,
            loading_range: (0.5, 1.5),
            global_loading_sd: 0.5,
            intercept_sd: 1.0,
            burn_in: 100,
            start_year: 1999,
        }
    }
}

/// Everything the generator drew. Matrices are stored row-major as nested
/// vectors so the JSON sidecar is readable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dims: SimDims,
    pub settings: SimSettings,
    pub seed: u64,
    /// Loadings per series (indicator-major), shared by all quantiles.
    pub loadings: Vec<f64>,
    pub intercepts: Vec<f64>,
    /// Series × k.
    pub global_loadings: Vec<Vec<f64>>,
    /// Base VAR over `(b, g)`: intercept, lag matrices, innovation covariance.
    pub var_intercept: Vec<f64>,
    pub var_coeffs: Vec<Vec<Vec<f64>>>,
    pub var_cov: Vec<Vec<f64>>,
    /// Quantile factors `f_it(q_r)`, `T × (R·m)` with column `r·m + i`.
    pub factors: Vec<Vec<f64>>,
    /// Base paths `b_it`, `T × m`.
    pub base: Vec<Vec<f64>>,
    pub log_vol: Vec<Vec<f64>>,
    pub globals: Vec<Vec<f64>>,
    /// Per-series AL scale implied for the q-th block: `λ_ij κ`.
    pub scales: Vec<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

impl GroundTruth {
    pub fn factor_matrix(&self) -> DMatrix<f64> {
        let t = self.factors.len();
        let c = self.factors.first().map_or(0, |r| r.len());
        DMatrix::from_fn(t, c, |i, j| self.factors[i][j])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

fn monthly_labels(start_year: i32, t_len: usize) -> Vec<String> {
    (0..t_len)
        .map(|t| format!("{}-{:02}", start_year + (t / 12) as i32, t % 12 + 1))
        .collect()
}

/// Draw a stable VAR(p) for `l` variables with spectral radius `radius`.
fn stable_var<R: Rng + ?Sized>(l: usize, p: usize, coef_sd: f64, radius: f64, rng: &mut R) -> Result<Vec<DMatrix<f64>>> {
    let mut phis: Vec<DMatrix<f64>> = (0..p)
        .map(|c| {
            DMatrix::from_fn(l, l, |r, u| {
                let z: f64 = StandardNormal.sample(rng);
                let own = if r == u && c == 0 { 0.5 } else { 0.0 };
                if coef_sd > 0.0 {
                    own + coef_sd * z / (c + 1) as f64
                } else {
                    0.0
                }
            })
        })
        .collect();
    if coef_sd == 0.0 {
        return Ok(phis);
    }
    let comp = build_companion(&DVector::zeros(l), &phis)?;
    let rad = spectral_radius(&comp.matrix);
    if rad > 0.0 {
        // Scaling lag c by s^c scales every companion root by s.
        let s = radius / rad;
        for (c, phi) in phis.iter_mut().enumerate() {
            *phi *= s.powi(c as i32 + 1);
        }
    }
    Ok(phis)
}

/// Simulate a panel and its ground truth.
pub fn simulate_qfavar<R: Rng + ?Sized>(
    dims: SimDims,
    settings: &SimSettings,
    seed: u64,
    rng: &mut R,
) -> Result<(PanelData, GroundTruth)> {
    let SimDims { m, n, k, t_len, p } = dims;
    if m == 0 || n == 0 || t_len == 0 || p == 0 {
        return Err(Error::InvalidParameter(format!(
            "simulation dimensions must be positive, got m={m}, n={n}, T={t_len}, p={p}"
        )));
    }
    if settings.quantiles.is_empty() || settings.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        return Err(Error::InvalidParameter("quantile levels must lie in (0, 1)".into()));
    }
    if !(settings.radius > 0.0 && settings.radius < 0.98) {
        return Err(Error::InvalidParameter(format!(
            "target spectral radius must lie in (0, 0.98), got {}",
            settings.radius
        )));
    }
    let l = m + k;
    let phis = stable_var(l, p, settings.coef_sd, settings.radius, rng)?;
    let cov = DMatrix::identity(l, l) * settings.state_sd.powi(2);
    let total = t_len + settings.burn_in;
    let mut s = DMatrix::zeros(total, l);
    let mut h = DMatrix::zeros(total, m);
    for t in 0..total {
        let mut st = DVector::zeros(l);
        for (c, phi) in phis.iter().enumerate() {
            if t > c {
                st += phi * s.row(t - c - 1).transpose();
            }
        }
        for u in 0..l {
            let z: f64 = StandardNormal.sample(rng);
            st[u] += settings.state_sd * z;
        }
        s.row_mut(t).copy_from(&st.transpose());
        for i in 0..m {
            let prev = if t > 0 { h[(t - 1, i)] } else { 0.0 };
            let fb = if t > 0 { settings.vol_feedback * s[(t - 1, i)] } else { 0.0 };
            let z: f64 = StandardNormal.sample(rng);
            h[(t, i)] = settings.vol_persistence * prev + fb + settings.vol_sd * z;
        }
    }
    let s = s.rows(settings.burn_in, t_len).into_owned();
    let h = h.rows(settings.burn_in, t_len).into_owned();

    let eps_params = ALParams::new(settings.noise_q, 1.0)?;
    let median = al_quantile(0.5, &eps_params);
    let unif = Uniform::new_inclusive(settings.loading_range.0, settings.loading_range.1)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let ns = m * n;
    let mut loadings = vec![1.0; ns];
    let mut intercepts = vec![0.0; ns];
    let mut gam = DMatrix::zeros(ns, k);
    for i in 0..m {
        for j in 0..n {
            let col = i * n + j;
            if j > 0 {
                loadings[col] = unif.sample(rng);
                let z: f64 = StandardNormal.sample(rng);
                intercepts[col] = settings.intercept_sd * z;
            }
            for g in 0..k {
                let z: f64 = StandardNormal.sample(rng);
                if j > 0 {
                    gam[(col, g)] = settings.global_loading_sd * z;
                }
            }
        }
    }
    let mut y = DMatrix::zeros(t_len, ns);
    for t in 0..t_len {
        for i in 0..m {
            let vol = settings.noise_scale * h[(t, i)].exp();
            for j in 0..n {
                let col = i * n + j;
                let (eps, _) = al_mixture_draw(&eps_params, rng)?;
                let mut v = intercepts[col] + loadings[col] * (s[(t, i)] + vol * (eps - median));
                for g in 0..k {
                    v += gam[(col, g)] * s[(t, m + g)];
                }
                y[(t, col)] = v;
            }
        }
    }
    let r_len = settings.quantiles.len();
    let factors = DMatrix::from_fn(t_len, r_len * m, |t, c| {
        let (r, i) = (c / m, c % m);
        let shift = al_quantile(settings.quantiles[r], &eps_params) - median;
        s[(t, i)] + settings.noise_scale * h[(t, i)].exp() * shift
    });
    let globals = s.columns(m, k).into_owned();
    let panel = PanelData {
        values: y,
        globals: globals.clone(),
        indicator_labels: (1..=m).map(|i| format!("X{i}")).collect(),
        country_labels: (1..=n).map(|j| format!("C{j}")).collect(),
        global_labels: (1..=k).map(|g| format!("G{g}")).collect(),
        time_index: monthly_labels(settings.start_year, t_len),
    };
    panel.validate()?;
    let truth = GroundTruth {
        dims,
        settings: settings.clone(),
        seed,
        loadings: loadings.clone(),
        intercepts,
        global_loadings: rows(&gam),
        var_intercept: vec![0.0; l],
        var_coeffs: phis.iter().map(rows).collect(),
        var_cov: rows(&cov),
        factors: rows(&factors),
        base: rows(&s.columns(0, m).into_owned()),
        log_vol: rows(&h),
        globals: rows(&globals),
        scales: loadings.iter().map(|l| l * settings.noise_scale).collect(),
    };
    Ok((panel, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn dims() -> SimDims {
        SimDims { m: 2, n: 3, k: 1, t_len: 50, p: 2 }
    }

    #[test]
    fn same_seed_same_panel() {
        let a = simulate_qfavar(dims(), &SimSettings::default(), 3, &mut stream(3, &[])).unwrap();
        let b = simulate_qfavar(dims(), &SimSettings::default(), 3, &mut stream(3, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_model_returns_factor() {
        let st = SimSettings {
            quantiles: vec![0.5],
            noise_scale: 1e-9,
            coef_sd: 0.0,
            ..SimSettings::default()
        };
        let d = SimDims { m: 1, n: 1, k: 0, t_len: 40, p: 1 };
        let (panel, truth) = simulate_qfavar(d, &st, 1, &mut stream(1, &[])).unwrap();
        for t in 0..40 {
            assert!((panel.values[(t, 0)] - truth.factors[t][0]).abs() < 1e-6);
        }
    }

    #[test]
    fn factors_are_ordered_and_var_is_stable() {
        let (_, truth) = simulate_qfavar(dims(), &SimSettings::default(), 5, &mut stream(5, &[])).unwrap();
        let f = truth.factor_matrix();
        for t in 0..f.nrows() {
            for i in 0..2 {
                assert!(f[(t, i)] <= f[(t, 2 + i)] && f[(t, 2 + i)] <= f[(t, 4 + i)]);
            }
        }
        let phis: Vec<DMatrix<f64>> = truth
            .var_coeffs
            .iter()
            .map(|m| DMatrix::from_fn(3, 3, |r, c| m[r][c]))
            .collect();
        let comp = build_companion(&DVector::zeros(3), &phis).unwrap();
        assert!((comp.spectral_radius() - 0.9).abs() < 1e-9);
    }
}
