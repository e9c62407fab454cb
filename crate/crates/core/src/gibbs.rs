//! Full Gibbs sampler.
//!
//! One sweep updates, in order: [1] every measurement block (coefficients,
//! horseshoe scales, latent mixture scales `z`, scale `σ`), [2] the factor
//! paths by simulation smoothing, [3] the state volatilities, [4] the VAR
//! rows. The VAR is sampled in structural triangular form,
//!
//! ```text
//! s_{r,t} = π_r0 + x_t'π_r + Σ_{u<r} a_{r,u} s_{u,t} + e_{r,t},   e_{r,t} ~ N(0, exp h_{r,t})
//! ```
//!
//! whose likelihood factorizes over rows, and is mapped to the reduced form
//! `s_t = v + Σ Φ_c s_{t-c} + A e_t` with `A = (I − a)⁻¹`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::{Method, ModelConfig, Priors};
use crate::distributions::{gig_draw, inv_gamma_draw, mixture_constants, MixtureConstants};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{correlation, standard_normal_vector, GaussianPrecision};
use crate::model::{EqSpec, Layout, ModelData, NoiseModel};
use crate::panel::PanelData;
use crate::posterior::{block, Diagnostics, EssSummary, PosteriorDraws, PosteriorMeta, VarDraw};
use crate::rng::{stream, tag, StreamRng};
use crate::shrinkage::{horseshoe_gibbs_update, HorseshoeState};
use crate::statespace::{carter_kohn_draw, StateSpaceSystem};
use crate::sv;

/// Noise variance assigned to measurement rows without an equation (the
/// period consumed by the own lag).
const UNOBSERVED_VAR: f64 = 1e300;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementParams {
    pub coefs: DVector<f64>,
    pub scale: f64,
    /// Latent mixture scales, one per period (unused before the first
    /// measurement period and under Gaussian noise).
    pub z: Vec<f64>,
    pub horseshoe: HorseshoeState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarRow {
    pub intercept: f64,
    /// Lag coefficients, `c·l + u` ↦ coefficient on `s_{u,t−c−1}`.
    pub lags: DVector<f64>,
    /// Contemporaneous coefficients on rows `0..r`.
    pub contemp: DVector<f64>,
    pub horseshoe: HorseshoeState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateParams {
    pub rows: Vec<VarRow>,
    /// `T_eff × l` log variances.
    pub log_vol: DMatrix<f64>,
    /// Random-walk innovation variance per row (stochastic volatility).
    pub sv_var: Vec<f64>,
}

impl StateParams {
    pub fn l(&self) -> usize {
        self.rows.len()
    }

    pub fn reduced_form(&self, p: usize) -> Result<VarDraw> {
        let l = self.l();
        let mut b = DMatrix::identity(l, l);
        for (r, row) in self.rows.iter().enumerate() {
            for u in 0..r {
                b[(r, u)] = -row.contemp[u];
            }
        }
        let a = b
            .solve_lower_triangular(&DMatrix::identity(l, l))
            .ok_or_else(|| Error::NonFinite("contemporaneous matrix".into()))?;
        let pi0 = DVector::from_fn(l, |r, _| self.rows[r].intercept);
        let intercept = &a * pi0;
        let coeffs = (0..p)
            .map(|c| {
                let pc = DMatrix::from_fn(l, l, |r, u| self.rows[r].lags[c * l + u]);
                &a * pc
            })
            .collect();
        Ok(VarDraw {
            intercept,
            coeffs,
            a,
            log_vol: self.log_vol.clone(),
        })
    }

    /// Structural residuals `e_{r,t}`, `T_eff × l`.
    pub fn residuals(&self, states: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
        let l = self.l();
        let t_len = states.nrows();
        DMatrix::from_fn(t_len - p, l, |tt, r| {
            let t = tt + p;
            let row = &self.rows[r];
            let mut fit = row.intercept;
            for c in 0..p {
                for u in 0..l {
                    fit += row.lags[c * l + u] * states[(t - c - 1, u)];
                }
            }
            for u in 0..r {
                fit += row.contemp[u] * states[(t, u)];
            }
            states[(t, r)] - fit
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub meas: Vec<MeasurementParams>,
    /// `T × l` states (factors, then globals).
    pub states: DMatrix<f64>,
    pub var: StateParams,
}

/// Everything a sweep needs besides the chain state.
pub struct Sampler<'a> {
    pub layout: &'a Layout,
    pub data: &'a ModelData,
    pub priors: &'a Priors,
    pub sv: bool,
    pub exec: Execution,
    pub seed: u64,
    mix: Vec<MixtureConstants>,
    specs: Vec<EqSpec>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        layout: &'a Layout,
        data: &'a ModelData,
        priors: &'a Priors,
        sv: bool,
        exec: Execution,
        seed: u64,
    ) -> Result<Self> {
        let mix = layout
            .quantiles
            .iter()
            .map(|&q| mixture_constants(q))
            .collect::<Result<Vec<_>>>()?;
        let specs = (0..layout.n_eq()).map(|e| layout.eq_spec(e)).collect();
        Ok(Self {
            layout,
            data,
            priors,
            sv,
            exec,
            seed,
            mix,
            specs,
        })
    }

    pub fn spec(&self, e: usize) -> &EqSpec {
        &self.specs[e]
    }

    pub fn mixture(&self, e: usize) -> &MixtureConstants {
        &self.mix[self.layout.eq_parts(e).0]
    }

    fn coef_prior_precision(&self, hs: &HorseshoeState) -> Vec<f64> {
        match self.priors.fixed_coef_var {
            Some(v) => vec![1.0 / v; hs.len()],
            None => hs.prior_precision(1.0),
        }
    }

    fn var_row_dim(&self, r: usize) -> usize {
        1 + self.layout.state_dim() * self.layout.p + r
    }

    /// One full sweep; `iter` keys the RNG streams.
    pub fn sweep(&self, state: &mut GibbsState, iter: u64) -> Result<()> {
        let seed = self.seed;
        let states = &state.states;
        self.exec.try_for_each_mut(&mut state.meas, |e, mp| {
            let mut rng = stream(seed, &[tag::MEASUREMENT, iter, e as u64]);
            *mp = sample_measurement_block(self, e, states, mp, &mut rng)?;
            Ok::<(), Error>(())
        })?;
        if self.layout.n_factors() > 0 {
            let mut rng = stream(seed, &[tag::FACTORS, iter]);
            state.states = sample_factors(self, &state.meas, &state.var, &mut rng)?;
        }
        if self.layout.state_dim() > 0 {
            let mut rng = stream(seed, &[tag::VOLATILITY, iter]);
            sample_volatility(self, &state.states, &mut state.var, &mut rng)?;
            let states = &state.states;
            let var = &state.var;
            let rows = self.exec.try_map(self.layout.state_dim(), |r| {
                let mut rng = stream(seed, &[tag::VAR_ROWS, iter, r as u64]);
                sample_var_block(self, r, states, var, &mut rng)
            })?;
            state.var.rows = rows;
        }
        Ok(())
    }

    /// Draw all parameters from the prior.
    pub fn prior_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GibbsState> {
        let lay = self.layout;
        let pr = self.priors;
        let t_len = lay.t_len;
        let mut meas = Vec::with_capacity(lay.n_eq());
        for e in 0..lay.n_eq() {
            let d = self.spec(e).n_coefs();
            let hs = HorseshoeState::sample_prior(d, rng)?;
            let prec = self.coef_prior_precision(&hs);
            let z0 = standard_normal_vector(d, rng);
            let coefs = DVector::from_fn(d, |k, _| z0[k] / prec[k].sqrt());
            let scale = inv_gamma_draw(pr.r0, pr.s0, rng)?;
            meas.push(MeasurementParams {
                coefs,
                scale,
                z: vec![1.0; t_len],
                horseshoe: hs,
            });
        }
        let l = lay.state_dim();
        let mut rows = Vec::with_capacity(l);
        for r in 0..l {
            let nl = l * lay.p;
            let hs = HorseshoeState::sample_prior(nl, rng)?;
            let prec = self.coef_prior_precision(&hs);
            let zl = standard_normal_vector(nl, rng);
            let zc = standard_normal_vector(r, rng);
            let zi: f64 = standard_normal_vector(1, rng)[0];
            rows.push(VarRow {
                intercept: zi * pr.intercept_var.sqrt(),
                lags: DVector::from_fn(nl, |k, _| zl[k] / prec[k].sqrt()),
                contemp: DVector::from_fn(r, |k, _| pr.mu_a + zc[k] * pr.sigma_a.sqrt()),
                horseshoe: hs,
            });
        }
        let t_eff = lay.t_eff();
        let mut log_vol = DMatrix::zeros(t_eff, l);
        let mut sv_var = vec![0.0; l];
        for r in 0..l {
            if self.sv {
                sv_var[r] = inv_gamma_draw(pr.r_omega, pr.s_omega, rng)?;
                let z = standard_normal_vector(t_eff, rng);
                let mut h = z[0] * pr.h0_var.sqrt();
                for t in 0..t_eff {
                    if t > 0 {
                        h += z[t] * sv_var[r].sqrt();
                    }
                    log_vol[(t, r)] = h;
                }
            } else {
                let w = inv_gamma_draw(pr.r_h, pr.s_h, rng)?;
                log_vol.column_mut(r).fill(w.ln());
            }
        }
        Ok(GibbsState {
            meas,
            states: DMatrix::zeros(t_len, l),
            var: StateParams {
                rows,
                log_vol,
                sv_var,
            },
        })
    }

    /// Simulate states, latent scales and observations from the model given
    /// the parameters in `state`. Returns the data; `state.states` and the
    /// `z` paths are overwritten with the simulated latents. Only layouts
    /// with a single quantile define a joint likelihood.
    pub fn simulate_data<R: Rng + ?Sized>(&self, state: &mut GibbsState, rng: &mut R) -> Result<ModelData> {
        let lay = self.layout;
        if lay.r() != 1 {
            return Err(Error::Config("data simulation needs exactly one quantile".into()));
        }
        let (t_len, l, p) = (lay.t_len, lay.state_dim(), lay.p);
        let red = state.var.reduced_form(p)?;
        let mut s = DMatrix::zeros(t_len, l);
        let init_sd = self.priors.init_state_var.sqrt();
        for t in 0..t_len {
            if t < p {
                let z = standard_normal_vector(l, rng);
                for u in 0..l {
                    s[(t, u)] = z[u] * init_sd;
                }
                continue;
            }
            let mut st = red.intercept.clone();
            for (c, phi) in red.coeffs.iter().enumerate() {
                st += phi * s.row(t - c - 1).transpose();
            }
            let z = standard_normal_vector(l, rng);
            let e = DVector::from_fn(l, |r, _| z[r] * (0.5 * state.var.log_vol[(t - p, r)]).exp());
            st += &red.a * e;
            s.row_mut(t).copy_from(&st.transpose());
        }
        let nf = lay.n_factors();
        let mut data = ModelData {
            y: DMatrix::zeros(t_len, lay.n_series()),
            g: s.columns(nf, lay.k).into_owned(),
        };
        for e in 0..lay.n_eq() {
            let col = lay.eq_series(e);
            let spec = *self.spec(e);
            let mc = *self.mixture(e);
            let mp = &mut state.meas[e];
            // Periods before the first equation need a value for the own lag.
            for t in 0..lay.first_obs() {
                data.y[(t, col)] = standard_normal_vector(1, rng)[0];
            }
            for t in lay.first_obs()..t_len {
                let x = data.design_row(lay, &spec, e, &s, t);
                let mean = data.fixed_offset(lay, &spec, e, &s, t) + x.dot(&mp.coefs);
                let eps = standard_normal_vector(1, rng)[0];
                let noise = match lay.noise {
                    NoiseModel::AsymmetricLaplace => {
                        let z = mp.scale * rng.sample::<f64, _>(rand_distr::Exp1);
                        mp.z[t] = z;
                        mc.kappa1 * z + (mc.kappa2_sq * mp.scale * z).sqrt() * eps
                    }
                    NoiseModel::Gaussian => mp.scale.sqrt() * eps,
                };
                data.y[(t, col)] = mean + noise;
            }
        }
        state.states = s;
        Ok(data)
    }
}

/// Steps [1][i]–[iv] for measurement equation `e`.
pub fn sample_measurement_block<R: Rng + ?Sized>(
    s: &Sampler,
    e: usize,
    states: &DMatrix<f64>,
    params: &MeasurementParams,
    rng: &mut R,
) -> Result<MeasurementParams> {
    let lay = s.layout;
    let spec = *s.spec(e);
    let mc = *s.mixture(e);
    let col = lay.eq_series(e);
    let d = spec.n_coefs();
    let t0 = lay.first_obs();
    let t_len = lay.t_len;
    let gaussian = lay.noise == NoiseModel::Gaussian;
    let mut out = params.clone();

    let xs: Vec<DVector<f64>> = (t0..t_len)
        .map(|t| s.data.design_row(lay, &spec, e, states, t))
        .collect();
    let offs: Vec<f64> = (t0..t_len)
        .map(|t| s.data.fixed_offset(lay, &spec, e, states, t))
        .collect();
    let ys: Vec<f64> = (t0..t_len).map(|t| s.data.y[(t, col)]).collect();

    // [i] coefficients.
    if d > 0 {
        let prior = s.coef_prior_precision(&params.horseshoe);
        let mut prec = DMatrix::from_diagonal(&DVector::from_vec(prior));
        let mut b = DVector::zeros(d);
        for (k, x) in xs.iter().enumerate() {
            let t = t0 + k;
            let (w, ytil) = if gaussian {
                (1.0 / params.scale, ys[k] - offs[k])
            } else {
                let z = params.z[t];
                (1.0 / (params.scale * mc.kappa2_sq * z), ys[k] - offs[k] - mc.kappa1 * z)
            };
            prec.ger(w, x, x, 1.0);
            b.axpy(w * ytil, x, 1.0);
        }
        let post = GaussianPrecision::new(prec, &b, &format!("measurement equation {e}"))?;
        out.coefs = post.draw(rng);
        // [ii] horseshoe.
        if s.priors.fixed_coef_var.is_none() {
            out.horseshoe = horseshoe_gibbs_update(out.coefs.as_slice(), 1.0, &params.horseshoe, rng)?;
        }
    }

    let resid: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(k, x)| ys[k] - offs[k] - x.dot(&out.coefs))
        .collect();
    let tm = resid.len() as f64;
    let pr = s.priors;
    if gaussian {
        let ss: f64 = resid.iter().map(|r| r * r).sum();
        out.scale = inv_gamma_draw(pr.r0 + 0.5 * tm, pr.s0 + 0.5 * ss, rng)?;
        return Ok(out);
    }
    // [iii] latent scales.
    let sk = params.scale * mc.kappa2_sq;
    let delta = (mc.kappa1 * mc.kappa1 + 2.0 * mc.kappa2_sq) / sk;
    for (k, r) in resid.iter().enumerate() {
        let rho = (r * r / sk).max(1e-300);
        out.z[t0 + k] = gig_draw(delta, rho, rng).map_err(|err| {
            Error::InvalidParameter(format!("equation {e}, period {}: {err}", t0 + k))
        })?;
    }
    // [iv] scale.
    let mut rate = pr.s0;
    for (k, r) in resid.iter().enumerate() {
        let z = out.z[t0 + k];
        let u = r - mc.kappa1 * z;
        rate += u * u / (2.0 * z * mc.kappa2_sq) + z;
    }
    out.scale = inv_gamma_draw(pr.r0 + 1.5 * tm, rate, rng)?;
    Ok(out)
}

/// Build the stacked state-space system of the factor step.
pub fn factor_system(s: &Sampler, meas: &[MeasurementParams], var: &StateParams) -> Result<(StateSpaceSystem, DMatrix<f64>)> {
    let lay = s.layout;
    let (t_len, l, k, ne) = (lay.t_len, lay.state_dim(), lay.k, lay.n_eq());
    let nobs = ne + k;
    let mut z = DMatrix::zeros(nobs, l);
    let mut c = DVector::zeros(nobs);
    let mut h = DMatrix::zeros(t_len, nobs);
    let mut y = DMatrix::zeros(t_len, nobs);
    let t0 = lay.first_obs();
    for e in 0..ne {
        let spec = s.spec(e);
        let mc = s.mixture(e);
        let mp = &meas[e];
        let f = lay.eq_factor(e).expect("factor step requires factors");
        z[(e, f)] = match spec.loading_index() {
            Some(idx) => mp.coefs[idx],
            None => spec.fixed_loading,
        };
        for g in 0..spec.n_global {
            z[(e, lay.global(g))] = mp.coefs[spec.global_start() + g];
        }
        c[e] = spec.intercept_index().map_or(0.0, |i| mp.coefs[i]);
        let col = lay.eq_series(e);
        for t in 0..t_len {
            if t < t0 {
                h[(t, e)] = UNOBSERVED_VAR;
                y[(t, e)] = c[e];
                continue;
            }
            let lagterm = spec
                .own_lag_index()
                .map_or(0.0, |i| mp.coefs[i] * s.data.y[(t - 1, col)]);
            match lay.noise {
                NoiseModel::AsymmetricLaplace => {
                    y[(t, e)] = s.data.y[(t, col)] - lagterm - mc.kappa1 * mp.z[t];
                    h[(t, e)] = mp.scale * mc.kappa2_sq * mp.z[t];
                }
                NoiseModel::Gaussian => {
                    y[(t, e)] = s.data.y[(t, col)] - lagterm;
                    h[(t, e)] = mp.scale;
                }
            }
        }
    }
    for g in 0..k {
        z[(ne + g, lay.global(g))] = 1.0;
        for t in 0..t_len {
            y[(t, ne + g)] = s.data.g[(t, g)];
        }
    }
    let red = var.reduced_form(lay.p)?;
    let trans_cov = if s.sv {
        (0..t_len)
            .map(|t| red.omega_at(t.saturating_sub(lay.p).min(lay.t_eff() - 1)))
            .collect()
    } else {
        vec![red.omega_at(0)]
    };
    let sys = StateSpaceSystem {
        obs_matrix: z,
        obs_intercept: c,
        obs_noise_var: h,
        trans_intercept: red.intercept,
        trans_coeffs: red.coeffs,
        trans_cov,
        init_var: s.priors.init_state_var,
    };
    Ok((sys, y))
}

/// Step [2]: one simulation-smoother draw of the states.
pub fn sample_factors<R: Rng + ?Sized>(
    s: &Sampler,
    meas: &[MeasurementParams],
    var: &StateParams,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (sys, y) = factor_system(s, meas, var)?;
    let mut path = carter_kohn_draw(&sys, &y, rng)?;
    let nf = s.layout.n_factors();
    for g in 0..s.layout.k {
        for t in 0..s.layout.t_len {
            path[(t, nf + g)] = s.data.g[(t, g)];
        }
    }
    Ok(path)
}

/// Step [3]: state log variances (and their random-walk variance under SV).
pub fn sample_volatility<R: Rng + ?Sized>(
    s: &Sampler,
    states: &DMatrix<f64>,
    var: &mut StateParams,
    rng: &mut R,
) -> Result<()> {
    let p = s.layout.p;
    let resid = var.residuals(states, p);
    let t_eff = resid.nrows();
    let pr = s.priors;
    for r in 0..var.l() {
        let e: Vec<f64> = resid.column(r).iter().copied().collect();
        if s.sv {
            let h: Vec<f64> = var.log_vol.column(r).iter().copied().collect();
            let hn = sv::sample_log_vol(&e, &h, var.sv_var[r], pr.h0_var, rng)?;
            var.sv_var[r] = sv::sample_sv_var(&hn, pr.r_omega, pr.s_omega, rng)?;
            for t in 0..t_eff {
                var.log_vol[(t, r)] = hn[t];
            }
        } else {
            let ss: f64 = e.iter().map(|x| x * x).sum();
            let w = inv_gamma_draw(pr.r_h + 0.5 * t_eff as f64, pr.s_h + 0.5 * ss, rng)?.max(1e-300);
            var.log_vol.column_mut(r).fill(w.ln());
        }
    }
    Ok(())
}

/// Regressors of VAR row `r` at period `t ≥ p`: `[1, lags…, s_{0..r,t}]`.
pub fn var_design_row(states: &DMatrix<f64>, r: usize, p: usize, t: usize) -> DVector<f64> {
    let l = states.ncols();
    let mut x = DVector::zeros(1 + l * p + r);
    x[0] = 1.0;
    for c in 0..p {
        for u in 0..l {
            x[1 + c * l + u] = states[(t - c - 1, u)];
        }
    }
    for u in 0..r {
        x[1 + l * p + u] = states[(t, u)];
    }
    x
}

/// Step [4]: joint draw of the intercept, lag and contemporaneous
/// coefficients of VAR row `r`, then its horseshoe scales.
pub fn sample_var_block<R: Rng + ?Sized>(
    s: &Sampler,
    r: usize,
    states: &DMatrix<f64>,
    var: &StateParams,
    rng: &mut R,
) -> Result<VarRow> {
    let lay = s.layout;
    let (l, p) = (lay.state_dim(), lay.p);
    let d = s.var_row_dim(r);
    let nl = l * p;
    let pr = s.priors;
    let row = &var.rows[r];
    let lag_prec = s.coef_prior_precision(&row.horseshoe);
    let mut prior = DVector::zeros(d);
    let mut b = DVector::zeros(d);
    prior[0] = 1.0 / pr.intercept_var;
    for k in 0..nl {
        prior[1 + k] = lag_prec[k];
    }
    for u in 0..r {
        prior[1 + nl + u] = 1.0 / pr.sigma_a;
        b[1 + nl + u] = pr.mu_a / pr.sigma_a;
    }
    let mut prec = DMatrix::from_diagonal(&prior);
    for t in p..lay.t_len {
        let x = var_design_row(states, r, p, t);
        let w = (-var.log_vol[(t - p, r)]).exp();
        prec.ger(w, &x, &x, 1.0);
        b.axpy(w * states[(t, r)], &x, 1.0);
    }
    let post = GaussianPrecision::new(prec, &b, &format!("VAR row {r}"))?;
    let draw = post.draw(rng);
    let lags = draw.rows(1, nl).into_owned();
    let horseshoe = if pr.fixed_coef_var.is_none() {
        horseshoe_gibbs_update(lags.as_slice(), 1.0, &row.horseshoe, rng)?
    } else {
        row.horseshoe.clone()
    };
    Ok(VarRow {
        intercept: draw[0],
        lags,
        contemp: draw.rows(1 + nl, r).into_owned(),
        horseshoe,
    })
}

/// Flip every factor column whose correlation with the reference is
/// negative. Columns with zero variance are left alone. Returns the aligned
/// paths and the flip flags.
pub fn enforce_sign_identification(draw: &DMatrix<f64>, reference: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>) {
    let mut out = draw.clone();
    let cols = draw.ncols().min(reference.ncols());
    let mut flips = vec![false; draw.ncols()];
    for c in 0..cols {
        let a: Vec<f64> = draw.column(c).iter().copied().collect();
        let b: Vec<f64> = reference.column(c).iter().copied().collect();
        if crate::linalg::variance(&a) == 0.0 {
            log::warn!("factor {c} has zero variance; sign left unchanged");
            continue;
        }
        if correlation(&a, &b) < 0.0 {
            out.column_mut(c).neg_mut();
            flips[c] = true;
        }
    }
    (out, flips)
}

/// Apply state sign flips to a reduced-form VAR and a projection matrix so
/// that the model they describe is unchanged.
pub fn flip_parameters(flips: &[bool], var: &mut VarDraw, projection: &mut DMatrix<f64>) {
    let sgn: Vec<f64> = flips.iter().map(|f| if *f { -1.0 } else { 1.0 }).collect();
    let l = sgn.len();
    for r in 0..l {
        var.intercept[r] *= sgn[r];
        for u in 0..l {
            for phi in var.coeffs.iter_mut() {
                phi[(r, u)] *= sgn[r] * sgn[u];
            }
            var.a[(r, u)] *= sgn[r] * sgn[u];
        }
    }
    for e in 0..projection.nrows() {
        for u in 0..l.min(projection.ncols()) {
            projection[(e, u)] *= sgn[u];
        }
    }
}

/// Effective sample size by Geyer's initial monotone sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let m = crate::linalg::mean(x);
    let dev: Vec<f64> = x.iter().map(|v| v - m).collect();
    let acov = |k: usize| -> f64 { dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 };
    let g0 = acov(0);
    if g0 <= 0.0 {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut pair = acov(2 * k) + acov(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        prev = pair;
        sum += pair;
        k += 1;
    }
    let var = (-g0 + 2.0 * sum).max(g0 * 1e-3);
    (n as f64 * g0 / var).min(n as f64)
}

fn ess_summary(arr: &crate::posterior::Array, keep: impl Fn(usize) -> bool) -> Option<EssSummary> {
    let d = arr.dims[0];
    let s = arr.stride();
    let mut vals = Vec::new();
    for j in 0..s {
        if !keep(j) {
            continue;
        }
        let series: Vec<f64> = (0..d).map(|k| arr.data[k * s + j]).collect();
        if crate::linalg::variance(&series) > 0.0 {
            vals.push(effective_sample_size(&series));
        }
    }
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    Some(EssSummary {
        min: vals[0],
        median: crate::linalg::quantile_sorted(&vals, 0.5),
    })
}

/// Build the initial chain state from a variational fit.
pub fn init_from_vb(s: &Sampler, fit: &crate::vb::VbFit) -> GibbsState {
    let lay = s.layout;
    let meas = fit
        .meas
        .iter()
        .map(|m| {
            let mut z = vec![1.0; lay.t_len];
            for (t, v) in m.e_z.iter().enumerate() {
                z[t] = v.max(1e-8);
            }
            MeasurementParams {
                coefs: m.mu.clone(),
                scale: 1.0 / m.e_inv_scale,
                z,
                horseshoe: HorseshoeState::new(m.mu.len()),
            }
        })
        .collect();
    let l = lay.state_dim();
    let nl = l * lay.p;
    let rows = fit
        .rows
        .iter()
        .enumerate()
        .map(|(r, row)| VarRow {
            intercept: row.mu[0],
            lags: row.mu.rows(1, nl).into_owned(),
            contemp: row.mu.rows(1 + nl, r).into_owned(),
            horseshoe: HorseshoeState::new(nl),
        })
        .collect();
    let log_vol = DMatrix::from_fn(lay.t_eff(), l, |_, r| (1.0 / fit.rows[r].e_inv_omega).ln());
    GibbsState {
        meas,
        states: fit.states.clone(),
        var: StateParams {
            rows,
            log_vol,
            sv_var: vec![0.1; l],
        },
    }
}

fn store_draw(post: &mut PosteriorDraws, d: usize, s: &Sampler, st: &GibbsState) -> Result<()> {
    let lay = s.layout;
    let (ne, k, l, p) = (lay.n_eq(), lay.k, lay.state_dim(), lay.p);
    {
        let lam = post.get_mut(block::LOADINGS)?.slice_mut(d);
        for e in 0..ne {
            let spec = s.spec(e);
            lam[e] = spec.loading_index().map_or(spec.fixed_loading, |i| st.meas[e].coefs[i]);
        }
    }
    {
        let c = post.get_mut(block::INTERCEPTS)?.slice_mut(d);
        for e in 0..ne {
            c[e] = s.spec(e).intercept_index().map_or(0.0, |i| st.meas[e].coefs[i]);
        }
    }
    {
        let b = post.get_mut(block::OWN_LAG)?.slice_mut(d);
        for e in 0..ne {
            b[e] = s.spec(e).own_lag_index().map_or(0.0, |i| st.meas[e].coefs[i]);
        }
    }
    {
        let gl = post.get_mut(block::GLOBAL_LOADINGS)?.slice_mut(d);
        for e in 0..ne {
            let spec = s.spec(e);
            for g in 0..spec.n_global {
                gl[e * k + g] = st.meas[e].coefs[spec.global_start() + g];
            }
        }
    }
    {
        let sc = post.get_mut(block::SCALES)?.slice_mut(d);
        for e in 0..ne {
            sc[e] = st.meas[e].scale;
        }
    }
    let red = st.var.reduced_form(p)?;
    post.get_mut(block::VAR_INTERCEPT)?
        .slice_mut(d)
        .copy_from_slice(red.intercept.as_slice());
    {
        let vc = post.get_mut(block::VAR_COEFFS)?.slice_mut(d);
        for (c, phi) in red.coeffs.iter().enumerate() {
            for r in 0..l {
                for u in 0..l {
                    vc[c * l * l + r * l + u] = phi[(r, u)];
                }
            }
        }
    }
    {
        let a = post.get_mut(block::CONTEMPORANEOUS)?.slice_mut(d);
        for r in 0..l {
            for u in 0..l {
                a[r * l + u] = red.a[(r, u)];
            }
        }
    }
    {
        let h = post.get_mut(block::LOG_VOL)?.slice_mut(d);
        for t in 0..lay.t_eff() {
            for r in 0..l {
                h[t * l + r] = st.var.log_vol[(t, r)];
            }
        }
    }
    post.get_mut(block::SV_VAR)?
        .slice_mut(d)
        .copy_from_slice(&st.var.sv_var);
    {
        let f = post.get_mut(block::FACTORS)?.slice_mut(d);
        for t in 0..lay.t_len {
            for r in 0..l {
                f[t * l + r] = st.states[(t, r)];
            }
        }
    }
    Ok(())
}

fn check_finite(st: &GibbsState) -> Result<()> {
    let bad = st.states.iter().any(|v| !v.is_finite())
        || st
            .meas
            .iter()
            .any(|m| !m.scale.is_finite() || m.coefs.iter().any(|v| !v.is_finite()))
        || st
            .var
            .rows
            .iter()
            .any(|r| !r.intercept.is_finite() || r.lags.iter().any(|v| !v.is_finite()));
    if bad {
        Err(Error::NonFinite("parameter draw".into()))
    } else {
        Ok(())
    }
}

pub(crate) fn build_meta(
    panel: &PanelData,
    layout: &Layout,
    cfg: &ModelConfig,
    method: Method,
    n_draws: usize,
    seed: u64,
) -> PosteriorMeta {
    PosteriorMeta {
        method,
        layout: layout.clone(),
        n_draws,
        indicator_labels: panel.indicator_labels.clone(),
        country_labels: panel.country_labels.clone(),
        global_labels: panel.global_labels.iter().take(layout.k).cloned().collect(),
        state_labels: layout.state_labels(&panel.indicator_labels, &panel.global_labels),
        eq_labels: layout.eq_labels(panel),
        time_index: panel.time_index.clone(),
        last_values: panel.values.row(panel.t_len() - 1).iter().copied().collect(),
        seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        diagnostics: Diagnostics::default(),
    }
}

/// Share of (indicator, period) pairs whose quantile factors are ordered.
pub fn ordered_fraction(layout: &Layout, states: &DMatrix<f64>) -> Option<f64> {
    if !layout.has_factors() || layout.r() < 2 {
        return None;
    }
    let mut ok = 0usize;
    let mut total = 0usize;
    for i in 0..layout.m {
        for t in 0..layout.t_len {
            total += 1;
            let ordered = (1..layout.r())
                .all(|r| states[(t, layout.factor(i, r - 1))] <= states[(t, layout.factor(i, r))]);
            ok += ordered as usize;
        }
    }
    Some(ok as f64 / total as f64)
}

/// Run the sampler. Initialization uses the two-step variational fit.
pub fn run_gibbs(panel: &PanelData, cfg: &ModelConfig) -> Result<PosteriorDraws> {
    let layout = Layout::new(panel, cfg)?;
    let data = ModelData::new(panel, &layout);
    let fit = crate::vb::fit_vb(panel, cfg)?;
    let seed = cfg.mcmc.seed;
    let sampler = Sampler::new(&layout, &data, &cfg.priors, cfg.sv, cfg.execution(), seed)?;
    let mut state = init_from_vb(&sampler, &fit);
    let n_draws = cfg.mcmc.stored_draws();
    let mut post = PosteriorDraws::new(build_meta(panel, &layout, cfg, Method::Mcmc, n_draws, seed));
    let mut d = 0;
    for it in 0..cfg.mcmc.iterations {
        sampler
            .sweep(&mut state, it as u64)
            .and_then(|_| check_finite(&state))
            .map_err(|e| e.at_iteration(it))?;
        if it >= cfg.mcmc.burn_in && (it + 1 - cfg.mcmc.burn_in) % cfg.mcmc.thin == 0 && d < n_draws {
            store_draw(&mut post, d, &sampler, &state)?;
            d += 1;
        }
    }
    let mut diag = Diagnostics::default();
    let free_loading = |j: usize| sampler.spec(j).loading;
    if let Some(es) = ess_summary(post.get(block::LOADINGS)?, free_loading) {
        diag.ess.insert("loadings".into(), es);
    }
    for (name, group) in [
        (block::SCALES, "scales"),
        (block::VAR_COEFFS, "var_coeffs"),
        (block::CONTEMPORANEOUS, "contemporaneous"),
        (block::FACTORS, "factors"),
    ] {
        if let Some(es) = ess_summary(post.get(name)?, |_| true) {
            diag.ess.insert(group.into(), es);
        }
    }
    let nf = layout.n_factors();
    diag.sign_disagreements = vec![0; nf];
    for k in 0..n_draws {
        let f = post.factors(k)?;
        let (_, flips) = enforce_sign_identification(&f.columns(0, nf).into_owned(), &fit.states.columns(0, nf).into_owned());
        for (c, fl) in flips.iter().enumerate() {
            diag.sign_disagreements[c] += *fl as usize;
        }
        let red = post.var_draw(k)?;
        let comp = crate::statespace::build_companion(&red.intercept, &red.coeffs)?;
        if comp.spectral_radius() >= 1.0 {
            diag.nonstationary_draws += 1;
        }
    }
    let mean_states = DMatrix::from_row_slice(layout.t_len, layout.state_dim(), &post.block_mean(block::FACTORS)?);
    diag.ordered_fraction = ordered_fraction(&layout, &mean_states);
    if diag.nonstationary_draws > 0 {
        diag.warnings.push(format!(
            "{} of {n_draws} stored draws have an explosive companion matrix",
            diag.nonstationary_draws
        ));
    }
    diag.iterations = Some(cfg.mcmc.iterations);
    post.meta.diagnostics = diag;
    Ok(post)
}

/// Convenience: a stream for callers that drive [`Sampler::sweep`] manually.
pub fn chain_rng(seed: u64, tag_value: u64) -> StreamRng {
    stream(seed, &[tag::INIT, tag_value])
}
