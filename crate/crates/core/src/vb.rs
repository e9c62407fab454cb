//! Two-step variational estimator.
//!
//! Step 1 extracts one static quantile factor per (indicator, quantile)
//! block. Step 2 holds the stacked factors fixed and runs coordinate-ascent
//! updates for the measurement equations and the VAR rows. Both steps are
//! deterministic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::config::{Method, ModelConfig, Priors, VbSettings};
use crate::distributions::{check_loss, gig_moments, mixture_constants, MixtureConstants};
use crate::error::{Error, Result};
use crate::gibbs::{build_meta, ordered_fraction, var_design_row};
use crate::linalg::{mean, quantile, variance, GaussianPrecision};
use crate::model::{Layout, ModelData, NoiseModel};
use crate::panel::PanelData;
use crate::posterior::{block, Array, PosteriorDraws};
use crate::shrinkage::{horseshoe_vb_update, VbHorseshoe};

const INV_FLOOR: f64 = 1e-300;

/// Variational factors of one regression with asymmetric Laplace or
/// Gaussian errors.
#[derive(Debug, Clone, PartialEq)]
pub struct VbMeasurement {
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `q(σ) = IG(shape, rate)`.
    pub scale_shape: f64,
    pub scale_rate: f64,
    pub e_inv_scale: f64,
    /// `E[z_t]` and `E[1/z_t]` (1 where the period has no equation).
    pub e_z: Vec<f64>,
    pub e_inv_z: Vec<f64>,
    pub horseshoe: VbHorseshoe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbRow {
    /// `[intercept, lags…, contemporaneous…]`.
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub omega_shape: f64,
    pub omega_rate: f64,
    pub e_inv_omega: f64,
    pub horseshoe: VbHorseshoe,
}

/// Result of the static factor extraction for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticFactor {
    pub factor: DVector<f64>,
    pub factor_var: DVector<f64>,
    pub intercepts: Vec<f64>,
    pub loadings: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step1Settings {
    pub max_iters: usize,
    pub tolerance: f64,
    pub r0: f64,
    pub s0: f64,
    pub b: f64,
}

impl Step1Settings {
    pub fn from_config(priors: &Priors, vb: &VbSettings) -> Self {
        Self {
            max_iters: vb.step1_max_iters,
            tolerance: vb.step1_tolerance,
            r0: priors.r0,
            s0: priors.s0,
            b: priors.b_phi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbFit {
    pub meas: Vec<VbMeasurement>,
    pub rows: Vec<VbRow>,
    /// `T × l` stacked factor means and observed globals.
    pub states: DMatrix<f64>,
    /// `T × l` step-1 factor variances (zero for globals).
    pub state_var: DMatrix<f64>,
    pub step1_converged: Vec<bool>,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Sufficient moments of a regression whose regressors may be uncertain.
struct RegMoments<'a> {
    y: &'a [f64],
    /// Mean and variance of a fixed-coefficient part of the fit.
    offset: &'a [f64],
    offset_var: &'a [f64],
    xbar: &'a [DVector<f64>],
    /// `E[x x']`.
    xx: &'a [DMatrix<f64>],
}

fn max_rel_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max)
}

fn ig_variance(shape: f64, rate: f64) -> f64 {
    if shape > 2.0 {
        rate * rate / ((shape - 1.0).powi(2) * (shape - 2.0))
    } else {
        f64::INFINITY
    }
}

/// One CAVI pass over `[φ, horseshoe, z, σ]` for a single regression.
/// `t0` is the period of the first moment entry.
fn regression_update(
    mom: &RegMoments,
    t0: usize,
    noise: NoiseModel,
    mc: &MixtureConstants,
    r0: f64,
    s0: f64,
    shrink: bool,
    state: &VbMeasurement,
    what: &str,
) -> Result<VbMeasurement> {
    let d = state.mu.len();
    let n = mom.y.len();
    let tf = n as f64;
    let mut out = state.clone();
    let es = state.e_inv_scale;
    let gaussian = noise == NoiseModel::Gaussian;
    if d > 0 {
        let prior = state.horseshoe.measurement_precision();
        let mut prec = DMatrix::from_diagonal(&DVector::from_vec(prior));
        let mut b = DVector::zeros(d);
        for k in 0..n {
            let yt = mom.y[k] - mom.offset[k];
            let (a, lin) = if gaussian {
                (es, es * yt)
            } else {
                let ez = state.e_inv_z[t0 + k];
                (es * ez / mc.kappa2_sq, es / mc.kappa2_sq * (ez * yt - mc.kappa1))
            };
            prec += &mom.xx[k] * a;
            b.axpy(lin, &mom.xbar[k], 1.0);
        }
        let post = GaussianPrecision::new(prec, &b, what)?;
        out.cov = post.covariance();
        out.mu = post.mean;
        if shrink {
            let sq: Vec<f64> = (0..d).map(|k| out.mu[k] * out.mu[k] + out.cov[(k, k)]).collect();
            out.horseshoe = horseshoe_vb_update(&sq, &state.horseshoe)?;
        }
    }
    let second = &out.cov + &out.mu * out.mu.transpose();
    let mut rbar = vec![0.0; n];
    let mut r2 = vec![0.0; n];
    for k in 0..n {
        let yt = mom.y[k] - mom.offset[k];
        let fit = if d > 0 { out.mu.dot(&mom.xbar[k]) } else { 0.0 };
        let quad = if d > 0 { second.component_mul(&mom.xx[k]).sum() } else { 0.0 };
        rbar[k] = yt - fit;
        r2[k] = (yt * yt - 2.0 * yt * fit + quad + mom.offset_var[k]).max(0.0);
    }
    if gaussian {
        out.scale_shape = r0 + 0.5 * tf;
        out.scale_rate = s0 + 0.5 * r2.iter().sum::<f64>();
    } else {
        let delta = es * (mc.kappa1 * mc.kappa1 / mc.kappa2_sq + 2.0);
        for k in 0..n {
            let rho = (es * r2[k] / mc.kappa2_sq).max(INV_FLOOR);
            let (ez, einv) = gig_moments(delta, rho)
                .map_err(|e| Error::InvalidParameter(format!("{what}, period {}: {e}", t0 + k)))?;
            out.e_z[t0 + k] = ez;
            out.e_inv_z[t0 + k] = einv;
        }
        let mut rate = s0;
        for k in 0..n {
            let t = t0 + k;
            rate += out.e_inv_z[t] * r2[k] / (2.0 * mc.kappa2_sq) - mc.kappa1 * rbar[k] / mc.kappa2_sq
                + (1.0 + mc.kappa1 * mc.kappa1 / (2.0 * mc.kappa2_sq)) * out.e_z[t];
        }
        out.scale_shape = r0 + 3.0 * tf;
        out.scale_rate = rate.max(INV_FLOOR);
    }
    out.e_inv_scale = out.scale_shape / out.scale_rate;
    if !out.e_inv_scale.is_finite() || out.mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(out)
}

fn initial_measurement(d: usize, t_len: usize, scale: f64, b: f64) -> VbMeasurement {
    VbMeasurement {
        mu: DVector::zeros(d),
        cov: DMatrix::identity(d, d),
        scale_shape: 1.0,
        scale_rate: scale,
        e_inv_scale: 1.0 / scale,
        e_z: vec![scale; t_len],
        e_inv_z: vec![1.0 / scale; t_len],
        horseshoe: VbHorseshoe::new(d, b),
    }
}

/// First principal component scores of the column-standardized block.
fn first_pc(y: &DMatrix<f64>) -> DVector<f64> {
    let (t_len, n) = y.shape();
    let mut z = y.clone();
    for j in 0..n {
        let col: Vec<f64> = y.column(j).iter().copied().collect();
        let (m, sd) = (mean(&col), variance(&col).sqrt());
        let sd = if sd > 0.0 { sd } else { 1.0 };
        z.column_mut(j).apply(|v| *v = (*v - m) / sd);
    }
    if n == 1 {
        return z.column(0).into_owned();
    }
    let cov = z.transpose() * &z / t_len as f64;
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.imax();
    &z * eig.eigenvectors.column(top)
}

fn ols(y: &[f64], x: &[f64]) -> (f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

/// Static quantile factor of one indicator's `T × n` block, with optional
/// `T × k` exogenous regressors. Series 0 is the reference: its quantile is
/// the factor itself (unit loading, no intercept, no exogenous terms).
/// Other series regress on `[1, f, x…]`.
pub fn vbqfa_extract(
    y: &DMatrix<f64>,
    exog: Option<&DMatrix<f64>>,
    q: f64,
    noise: NoiseModel,
    settings: &Step1Settings,
) -> Result<StaticFactor> {
    let (t_len, n) = y.shape();
    if n == 0 || t_len < 3 {
        return Err(Error::InsufficientSample(format!(
            "factor extraction needs at least one series and three periods, got {n} and {t_len}"
        )));
    }
    let k = exog.map_or(0, |x| x.ncols());
    if let Some(x) = exog {
        if x.nrows() != t_len {
            return Err(Error::Dimension(format!(
                "exogenous regressors have {} rows for {t_len} periods",
                x.nrows()
            )));
        }
    }
    let mc = mixture_constants(q)?;
    let gaussian = noise == NoiseModel::Gaussian;
    let cols: Vec<Vec<f64>> = (0..n).map(|j| y.column(j).iter().copied().collect()).collect();
    let exo = |t: usize, g: usize| exog.map_or(0.0, |x| x[(t, g)]);

    // Initial factor: first principal component mapped onto the reference
    // series, shifted to its q-quantile.
    let pc: Vec<f64> = first_pc(y).iter().copied().collect();
    let (a, b) = ols(&cols[0], &pc);
    let fit: Vec<f64> = pc.iter().map(|v| a + b * v).collect();
    let resid: Vec<f64> = cols[0].iter().zip(&fit).map(|(y, f)| y - f).collect();
    let shift = if gaussian { 0.0 } else { quantile(&resid, q) };
    let mut fm = DVector::from_iterator(t_len, fit.iter().map(|f| f + shift));
    let mut fv = DVector::zeros(t_len);
    let v0 = 100.0 * variance(&cols[0]).max(1e-8);
    let dim = |j: usize| if j == 0 { 0 } else { 2 + k };
    // Position of the factor among the regressors of series j.
    let f_index = |j: usize| (j > 0).then_some(1);

    let mut series: Vec<VbMeasurement> = (0..n)
        .map(|j| {
            let f0: Vec<f64> = fm.iter().copied().collect();
            let r: Vec<f64> = if j == 0 {
                cols[0].iter().zip(&f0).map(|(y, f)| y - f).collect()
            } else {
                let (c, l) = ols(&cols[j], &f0);
                cols[j].iter().zip(&f0).map(|(y, f)| y - c - l * f).collect()
            };
            let scale = if gaussian {
                variance(&r)
            } else {
                let qr = quantile(&r, q);
                mean(&r.iter().map(|v| check_loss(v - qr, q)).collect::<Vec<_>>())
            };
            let floor = 1e-6 * variance(&cols[j]).max(1e-12);
            initial_measurement(dim(j), t_len, scale.max(floor), settings.b)
        })
        .collect();

    let zeros = vec![0.0; t_len];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..settings.max_iters {
        iterations = it + 1;
        let old: Vec<f64> = params_vector(&fm, &series);
        // (a) per-series regressions given q(f).
        let ref_x: Vec<DVector<f64>> = vec![DVector::zeros(0); t_len];
        let ref_xx: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); t_len];
        let xbar: Vec<DVector<f64>> = (0..t_len)
            .map(|t| {
                DVector::from_fn(2 + k, |c, _| match c {
                    0 => 1.0,
                    1 => fm[t],
                    _ => exo(t, c - 2),
                })
            })
            .collect();
        let xx: Vec<DMatrix<f64>> = (0..t_len)
            .map(|t| {
                let mut m = &xbar[t] * xbar[t].transpose();
                m[(1, 1)] += fv[t];
                m
            })
            .collect();
        let fm_vec: Vec<f64> = fm.iter().copied().collect();
        let fv_vec: Vec<f64> = fv.iter().copied().collect();
        for j in 0..n {
            let mom = if j == 0 {
                RegMoments { y: &cols[0], offset: &fm_vec, offset_var: &fv_vec, xbar: &ref_x, xx: &ref_xx }
            } else {
                RegMoments { y: &cols[j], offset: &zeros, offset_var: &zeros, xbar: &xbar, xx: &xx }
            };
            series[j] = regression_update(
                &mom,
                0,
                noise,
                &mc,
                settings.r0,
                settings.s0,
                true,
                &series[j],
                &format!("factor extraction series {j}"),
            )?;
        }
        // (b) Gaussian update of each f_t. `o` is the fit excluding the
        // factor term.
        for t in 0..t_len {
            let mut prec = 1.0 / v0;
            let mut lin = 0.0;
            for (j, s) in series.iter().enumerate() {
                let x = if j == 0 { &ref_x[t] } else { &xbar[t] };
                let (el, el2, elo) = match f_index(j) {
                    None => (1.0, 1.0, s.mu.dot(x)),
                    Some(fi) => {
                        let mut elo = 0.0;
                        for c in 0..x.len() {
                            if c != fi {
                                elo += (s.mu[fi] * s.mu[c] + s.cov[(fi, c)]) * x[c];
                            }
                        }
                        (s.mu[fi], s.mu[fi] * s.mu[fi] + s.cov[(fi, fi)], elo)
                    }
                };
                let yt = cols[j][t];
                if gaussian {
                    prec += s.e_inv_scale * el2;
                    lin += s.e_inv_scale * (yt * el - elo);
                } else {
                    let a = s.e_inv_scale * s.e_inv_z[t] / mc.kappa2_sq;
                    prec += a * el2;
                    lin += a * (yt * el - elo) - s.e_inv_scale / mc.kappa2_sq * mc.kappa1 * el;
                }
            }
            fv[t] = 1.0 / prec;
            fm[t] = lin / prec;
        }
        let new = params_vector(&fm, &series);
        if max_rel_change(&old, &new) < settings.tolerance {
            converged = true;
            break;
        }
    }
    let mut intercepts = vec![0.0; n];
    let mut loadings = vec![1.0; n];
    for j in 1..n {
        intercepts[j] = series[j].mu[0];
        loadings[j] = series[j].mu[1];
    }
    Ok(StaticFactor {
        factor: fm,
        factor_var: fv,
        intercepts,
        loadings,
        converged,
        iterations,
    })
}

fn params_vector(fm: &DVector<f64>, series: &[VbMeasurement]) -> Vec<f64> {
    let mut v: Vec<f64> = fm.iter().copied().collect();
    for s in series {
        v.extend(s.mu.iter());
        v.push(s.e_inv_scale);
    }
    v
}

/// Shared state of the second step.
pub struct VbContext<'a> {
    pub layout: &'a Layout,
    pub data: &'a ModelData,
    pub priors: &'a Priors,
    mix: Vec<MixtureConstants>,
}

impl<'a> VbContext<'a> {
    pub fn new(layout: &'a Layout, data: &'a ModelData, priors: &'a Priors) -> Result<Self> {
        let mix = layout
            .quantiles
            .iter()
            .map(|&q| mixture_constants(q))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layout, data, priors, mix })
    }

    pub fn initial_measurement(&self, e: usize) -> VbMeasurement {
        let col: Vec<f64> = self.data.y.column(self.layout.eq_series(e)).iter().copied().collect();
        let scale = variance(&col).sqrt().max(1e-6);
        let d = self.layout.eq_spec(e).n_coefs();
        initial_measurement(d, self.layout.t_len, scale, self.priors.b_phi)
    }

    pub fn initial_row(&self, r: usize) -> VbRow {
        let l = self.layout.state_dim();
        let d = 1 + l * self.layout.p + r;
        VbRow {
            mu: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
            omega_shape: 1.0,
            omega_rate: 1.0,
            e_inv_omega: 1.0,
            horseshoe: VbHorseshoe::new(l * self.layout.p, self.priors.b_psi),
        }
    }
}

/// CAVI update of measurement equation `e` given the stacked states.
pub fn vb_update_measurement(
    ctx: &VbContext,
    e: usize,
    states: &DMatrix<f64>,
    state: &VbMeasurement,
) -> Result<VbMeasurement> {
    let lay = ctx.layout;
    let spec = lay.eq_spec(e);
    let col = lay.eq_series(e);
    let t0 = lay.first_obs();
    let y: Vec<f64> = (t0..lay.t_len).map(|t| ctx.data.y[(t, col)]).collect();
    let offset: Vec<f64> = (t0..lay.t_len)
        .map(|t| ctx.data.fixed_offset(lay, &spec, e, states, t))
        .collect();
    let zeros = vec![0.0; y.len()];
    let xbar: Vec<DVector<f64>> = (t0..lay.t_len)
        .map(|t| ctx.data.design_row(lay, &spec, e, states, t))
        .collect();
    let xx: Vec<DMatrix<f64>> = xbar.iter().map(|x| x * x.transpose()).collect();
    let mom = RegMoments {
        y: &y,
        offset: &offset,
        offset_var: &zeros,
        xbar: &xbar,
        xx: &xx,
    };
    let (r, i, j) = lay.eq_parts(e);
    regression_update(
        &mom,
        t0,
        lay.noise,
        &ctx.mix[r],
        ctx.priors.r0,
        ctx.priors.s0,
        true,
        state,
        &format!("measurement equation (indicator {i}, series {j}, quantile {})", lay.quantiles[r]),
    )
}

/// CAVI update of VAR row `r` given the stacked states.
pub fn vb_update_state(ctx: &VbContext, r: usize, states: &DMatrix<f64>, state: &VbRow) -> Result<VbRow> {
    let lay = ctx.layout;
    let pr = ctx.priors;
    let (l, p) = (lay.state_dim(), lay.p);
    let nl = l * p;
    let d = 1 + nl + r;
    let mut prior = DVector::zeros(d);
    let mut b = DVector::zeros(d);
    prior[0] = 1.0 / pr.intercept_var;
    for (k, v) in state.horseshoe.state_precision().iter().enumerate() {
        prior[1 + k] = *v;
    }
    for u in 0..r {
        prior[1 + nl + u] = 1.0 / pr.sigma_a;
        b[1 + nl + u] = pr.mu_a / pr.sigma_a;
    }
    let mut xtx = DMatrix::zeros(d, d);
    let mut xty = DVector::zeros(d);
    let xs: Vec<DVector<f64>> = (p..lay.t_len).map(|t| var_design_row(states, r, p, t)).collect();
    for (k, x) in xs.iter().enumerate() {
        xtx.ger(1.0, x, x, 1.0);
        xty.axpy(states[(p + k, r)], x, 1.0);
    }
    let w = state.e_inv_omega;
    let prec = DMatrix::from_diagonal(&prior) + &xtx * w;
    b += &xty * w;
    let post = GaussianPrecision::new(prec, &b, &format!("VAR row {r}"))?;
    let cov = post.covariance();
    let mu = post.mean;
    let mut ss = 0.0;
    for (k, x) in xs.iter().enumerate() {
        let e = states[(p + k, r)] - x.dot(&mu);
        ss += e * e + (x.transpose() * &cov * x)[0];
    }
    let omega_shape = pr.r_h + 0.5 * xs.len() as f64;
    let omega_rate = pr.s_h + 0.5 * ss;
    let sq: Vec<f64> = (0..nl).map(|k| mu[1 + k] * mu[1 + k] + cov[(1 + k, 1 + k)]).collect();
    let horseshoe = horseshoe_vb_update(&sq, &state.horseshoe)?;
    let e_inv_omega = (omega_shape / omega_rate).min(1e300);
    Ok(VbRow {
        mu,
        cov,
        omega_shape,
        omega_rate,
        e_inv_omega,
        horseshoe,
    })
}

fn step2_params(meas: &[VbMeasurement], rows: &[VbRow]) -> Vec<f64> {
    let mut v = Vec::new();
    for m in meas {
        v.extend(m.mu.iter());
        v.push(m.e_inv_scale);
    }
    for r in rows {
        v.extend(r.mu.iter());
        v.push(r.e_inv_omega);
    }
    v
}

/// Step 1 for every (indicator, quantile) block of the layout.
pub fn extract_factors(layout: &Layout, data: &ModelData, cfg: &ModelConfig) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<bool>)> {
    let nf = layout.n_factors();
    let settings = Step1Settings::from_config(&cfg.priors, &cfg.vb);
    let n = layout.n;
    let blocks = cfg.execution().try_map(nf, |f| {
        let (r, i) = (f / layout.m, f % layout.m);
        let y = data.y.columns(i * n, n).into_owned();
        let exog = (layout.k > 0 && layout.global_loadings).then_some(&data.g);
        vbqfa_extract(&y, exog, layout.quantiles[r], layout.noise, &settings)
    })?;
    let mut fm = DMatrix::zeros(layout.t_len, nf);
    let mut fv = DMatrix::zeros(layout.t_len, nf);
    let mut conv = Vec::with_capacity(nf);
    for (f, b) in blocks.iter().enumerate() {
        fm.set_column(f, &b.factor);
        fv.set_column(f, &b.factor_var);
        conv.push(b.converged);
    }
    Ok((fm, fv, conv))
}

/// Run both steps and return the variational factors.
pub fn fit_vb(panel: &PanelData, cfg: &ModelConfig) -> Result<VbFit> {
    cfg.validate()?;
    let layout = Layout::new(panel, cfg)?;
    let data = ModelData::new(panel, &layout);
    let mut warnings = Vec::new();
    if cfg.sv {
        warnings.push("stochastic volatility is ignored by the variational estimator".to_string());
        log::warn!("{}", warnings[0]);
    }
    let (fm, fv, step1_converged) = extract_factors(&layout, &data, cfg)?;
    let bad = step1_converged.iter().filter(|c| !**c).count();
    if bad > 0 {
        warnings.push(format!("{bad} factor extraction blocks did not converge"));
    }
    let states = data.stack_states(&layout, &fm);
    let mut state_var = DMatrix::zeros(layout.t_len, layout.state_dim());
    state_var.columns_mut(0, layout.n_factors()).copy_from(&fv);
    let ctx = VbContext::new(&layout, &data, &cfg.priors)?;
    let exec = cfg.execution();
    let mut meas: Vec<VbMeasurement> = (0..layout.n_eq()).map(|e| ctx.initial_measurement(e)).collect();
    let mut rows: Vec<VbRow> = (0..layout.state_dim()).map(|r| ctx.initial_row(r)).collect();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.vb.max_iters {
        iterations = it + 1;
        let old = step2_params(&meas, &rows);
        exec.try_for_each_mut(&mut meas, |e, m| {
            *m = vb_update_measurement(&ctx, e, &states, m)?;
            Ok::<(), Error>(())
        })?;
        for (r, row) in rows.iter_mut().enumerate() {
            *row = vb_update_state(&ctx, r, &states, row)?;
        }
        let metric = max_rel_change(&old, &step2_params(&meas, &rows));
        trace.push(metric);
        if metric < cfg.vb.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!("variational updates stopped after {iterations} iterations without converging"));
        log::warn!("{}", warnings.last().unwrap());
    }
    Ok(VbFit {
        meas,
        rows,
        states,
        state_var,
        step1_converged,
        converged,
        iterations,
        trace,
        warnings,
    })
}

/// Variational posterior in the draw container: one "draw" holding the
/// means, plus `<block>_var` entries with marginal variances. Reduced-form
/// VAR quantities use the contemporaneous matrix at its mean.
pub fn run_vb(panel: &PanelData, cfg: &ModelConfig) -> Result<PosteriorDraws> {
    let fit = fit_vb(panel, cfg)?;
    to_container(panel, cfg, &fit)
}

pub fn to_container(panel: &PanelData, cfg: &ModelConfig, fit: &VbFit) -> Result<PosteriorDraws> {
    let layout = Layout::new(panel, cfg)?;
    let (ne, k, l, p) = (layout.n_eq(), layout.k, layout.state_dim(), layout.p);
    let nl = l * p;
    let mut post = PosteriorDraws::new(build_meta(panel, &layout, cfg, Method::Vb, 1, cfg.vb.seed));
    let mut var_blocks: Vec<(&str, Array)> = Vec::new();
    {
        let mut put = |name: &'static str, dims: &[usize], f: &dyn Fn(usize) -> (f64, f64)| -> Result<()> {
            let mut v = Array::zeros(&[1].iter().chain(dims).copied().collect::<Vec<_>>());
            let a = post.get_mut(name)?;
            for idx in 0..a.stride() {
                let (m, s) = f(idx);
                a.data[idx] = m;
                v.data[idx] = s;
            }
            var_blocks.push((name, v));
            Ok(())
        };
        let coef = |e: usize, idx: Option<usize>, fixed: f64| -> (f64, f64) {
            match idx {
                Some(i) => (fit.meas[e].mu[i], fit.meas[e].cov[(i, i)]),
                None => (fixed, 0.0),
            }
        };
        put(block::INTERCEPTS, &[ne], &|e| coef(e, layout.eq_spec(e).intercept_index(), 0.0))?;
        put(block::OWN_LAG, &[ne], &|e| coef(e, layout.eq_spec(e).own_lag_index(), 0.0))?;
        put(block::LOADINGS, &[ne], &|e| {
            let s = layout.eq_spec(e);
            coef(e, s.loading_index(), s.fixed_loading)
        })?;
        put(block::GLOBAL_LOADINGS, &[ne, k], &|idx| {
            let (e, g) = (idx / k.max(1), idx % k.max(1));
            let s = layout.eq_spec(e);
            if g < s.n_global {
                coef(e, Some(s.global_start() + g), 0.0)
            } else {
                (0.0, 0.0)
            }
        })?;
        put(block::SCALES, &[ne], &|e| {
            let m = &fit.meas[e];
            let mean = if m.scale_shape > 1.0 {
                m.scale_rate / (m.scale_shape - 1.0)
            } else {
                1.0 / m.e_inv_scale
            };
            (mean, ig_variance(m.scale_shape, m.scale_rate))
        })?;
    }
    let a = {
        let mut b = DMatrix::identity(l, l);
        for r in 0..l {
            for u in 0..r {
                b[(r, u)] = -fit.rows[r].mu[1 + nl + u];
            }
        }
        b.solve_lower_triangular(&DMatrix::identity(l, l))
            .ok_or_else(|| Error::NonFinite("contemporaneous matrix".into()))?
    };
    let a2 = a.component_mul(&a);
    {
        let pi0 = DVector::from_fn(l, |r, _| fit.rows[r].mu[0]);
        let pi0_var = DVector::from_fn(l, |r, _| fit.rows[r].cov[(0, 0)]);
        let v = &a * pi0;
        let vv = &a2 * pi0_var;
        post.get_mut(block::VAR_INTERCEPT)?.data.copy_from_slice(v.as_slice());
        let mut arr = Array::zeros(&[1, l]);
        arr.data.copy_from_slice(vv.as_slice());
        var_blocks.push((block::VAR_INTERCEPT, arr));
    }
    {
        let mut mean_arr = vec![0.0; p * l * l];
        let mut var_arr = Array::zeros(&[1, p, l, l]);
        for c in 0..p {
            let pc = DMatrix::from_fn(l, l, |r, u| fit.rows[r].mu[1 + c * l + u]);
            let pv = DMatrix::from_fn(l, l, |r, u| {
                let i = 1 + c * l + u;
                fit.rows[r].cov[(i, i)]
            });
            let phi = &a * pc;
            let phv = &a2 * pv;
            for r in 0..l {
                for u in 0..l {
                    mean_arr[c * l * l + r * l + u] = phi[(r, u)];
                    var_arr.data[c * l * l + r * l + u] = phv[(r, u)];
                }
            }
        }
        post.get_mut(block::VAR_COEFFS)?.data.copy_from_slice(&mean_arr);
        var_blocks.push((block::VAR_COEFFS, var_arr));
    }
    {
        let c = post.get_mut(block::CONTEMPORANEOUS)?;
        for r in 0..l {
            for u in 0..l {
                c.data[r * l + u] = a[(r, u)];
            }
        }
    }
    {
        let h = post.get_mut(block::LOG_VOL)?;
        for t in 0..layout.t_eff() {
            for r in 0..l {
                h.data[t * l + r] = (1.0 / fit.rows[r].e_inv_omega).ln();
            }
        }
    }
    {
        let f = post.get_mut(block::FACTORS)?;
        let mut fv = Array::zeros(&[1, layout.t_len, l]);
        for t in 0..layout.t_len {
            for r in 0..l {
                f.data[t * l + r] = fit.states[(t, r)];
                fv.data[t * l + r] = fit.state_var[(t, r)];
            }
        }
        var_blocks.push((block::FACTORS, fv));
    }
    for (name, arr) in var_blocks {
        post.blocks.insert(format!("{name}{}", block::VARIANCE_SUFFIX), arr);
    }
    let diag = &mut post.meta.diagnostics;
    diag.converged = Some(fit.converged);
    diag.iterations = Some(fit.iterations);
    diag.convergence_trace = fit.trace.clone();
    diag.step1_converged = fit.step1_converged.clone();
    diag.ordered_fraction = ordered_fraction(&layout, &fit.states);
    diag.warnings = fit.warnings.clone();
    Ok(post)
}
