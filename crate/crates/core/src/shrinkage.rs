//! Horseshoe prior in its inverse-gamma hierarchy.
//!
//! Gibbs form, with coefficient prior `θ_k ~ N(0, s τ² λ̄²_k)`:
//!
//! ```text
//! λ̄²_k | υ_k ~ IG(1/2, 1/υ_k)     υ_k ~ IG(1/2, 1)
//! τ²   | ξ   ~ IG(1/2, 1/ξ)       ξ   ~ IG(1/2, 1)
//! ```
//!
//! The samplers call the Gibbs update with `s = 1`: the measurement and VAR
//! coefficient conditionals do not carry the residual scale in the prior.
//!
//! The variational form follows a different hierarchy with a per-coefficient
//! `τ²_k`, a scale hyperparameter `b` entering the `υ_k` prior, and the global
//! `ξ` pooling the `τ²_k`. All inverse gammas use the rate parametrization.

use rand::Rng;

use crate::distributions::inv_gamma_draw;
use crate::error::{Error, Result};

/// Floor (and reciprocal ceiling) applied to every scale draw and expectation.
pub const SCALE_FLOOR: f64 = 1e-12;
const SCALE_CEIL: f64 = 1e12;

fn clamp_scale(x: f64) -> f64 {
    if x.is_nan() {
        SCALE_FLOOR
    } else {
        x.clamp(SCALE_FLOOR, SCALE_CEIL)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorseshoeState {
    /// λ̄²_k
    pub local_scales: Vec<f64>,
    /// υ_k
    pub local_aux: Vec<f64>,
    /// τ²
    pub global_scale: f64,
    /// ξ
    pub global_aux: f64,
}

impl HorseshoeState {
    pub fn new(len: usize) -> Self {
        Self {
            local_scales: vec![1.0; len],
            local_aux: vec![1.0; len],
            global_scale: 1.0,
            global_aux: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.local_scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_scales.is_empty()
    }

    /// Prior precision `1/(s τ² λ̄²_k)` per coefficient.
    pub fn prior_precision(&self, scale: f64) -> Vec<f64> {
        self.local_scales
            .iter()
            .map(|l| 1.0 / (scale * self.global_scale * l))
            .collect()
    }

    /// Draw the whole hierarchy from its prior.
    pub fn sample_prior<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<Self> {
        let global_aux = clamp_scale(inv_gamma_draw(0.5, 1.0, rng)?);
        let global_scale = clamp_scale(inv_gamma_draw(0.5, 1.0 / global_aux, rng)?);
        let mut local_aux = Vec::with_capacity(len);
        let mut local_scales = Vec::with_capacity(len);
        for _ in 0..len {
            let u = clamp_scale(inv_gamma_draw(0.5, 1.0, rng)?);
            local_aux.push(u);
            local_scales.push(clamp_scale(inv_gamma_draw(0.5, 1.0 / u, rng)?));
        }
        Ok(Self {
            local_scales,
            local_aux,
            global_scale,
            global_aux,
        })
    }
}

/// One Gibbs sweep over (λ̄², υ, τ², ξ) given the coefficients `coeffs` with
/// prior variance `scale · τ² · λ̄²_k`.
pub fn horseshoe_gibbs_update<R: Rng + ?Sized>(
    coeffs: &[f64],
    scale: f64,
    state: &HorseshoeState,
    rng: &mut R,
) -> Result<HorseshoeState> {
    if coeffs.len() != state.len() {
        return Err(Error::Dimension(format!(
            "horseshoe state has {} scales but {} coefficients were given",
            state.len(),
            coeffs.len()
        )));
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horseshoe scale must be positive, got {scale}"
        )));
    }
    let tau2 = state.global_scale;
    let mut local_scales = Vec::with_capacity(coeffs.len());
    let mut local_aux = Vec::with_capacity(coeffs.len());
    for (k, &theta) in coeffs.iter().enumerate() {
        let lam = clamp_scale(inv_gamma_draw(
            1.0,
            theta * theta / (2.0 * scale * tau2) + 1.0 / state.local_aux[k],
            rng,
        )?);
        let ups = clamp_scale(inv_gamma_draw(1.0, 1.0 + 1.0 / lam, rng)?);
        local_scales.push(lam);
        local_aux.push(ups);
    }
    let l = coeffs.len() as f64;
    let ss: f64 = coeffs
        .iter()
        .zip(&local_scales)
        .map(|(t, lam)| t * t / (2.0 * scale * lam))
        .sum();
    let global_scale = clamp_scale(inv_gamma_draw(
        (l + 1.0) / 2.0,
        1.0 / state.global_aux + ss,
        rng,
    )?);
    let global_aux = clamp_scale(inv_gamma_draw(1.0, 1.0 + 1.0 / global_scale, rng)?);
    Ok(HorseshoeState {
        local_scales,
        local_aux,
        global_scale,
        global_aux,
    })
}

/// Variational horseshoe expectations (all inverse moments).
#[derive(Debug, Clone, PartialEq)]
pub struct VbHorseshoe {
    /// E[1/λ̄²_k]
    pub inv_local: Vec<f64>,
    /// E[1/υ_k]
    pub inv_local_aux: Vec<f64>,
    /// E[1/τ²_k]
    pub inv_global: Vec<f64>,
    /// E[1/ξ]
    pub inv_global_aux: f64,
    /// b_φ or b_ψ
    pub b: f64,
}

impl VbHorseshoe {
    pub fn new(len: usize, b: f64) -> Self {
        Self {
            inv_local: vec![1.0; len],
            inv_local_aux: vec![1.0; len],
            inv_global: vec![1.0; len],
            inv_global_aux: 1.0,
            b,
        }
    }

    pub fn len(&self) -> usize {
        self.inv_local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_local.is_empty()
    }

    /// `E[1/λ̄²_k] · E[1/τ²_k]`, the prior precision used for measurement
    /// coefficients.
    pub fn measurement_precision(&self) -> Vec<f64> {
        self.inv_local
            .iter()
            .zip(&self.inv_global)
            .map(|(a, b)| a * b)
            .collect()
    }

    /// `E[1/λ̄²_k]`, the prior precision used for VAR coefficients.
    pub fn state_precision(&self) -> Vec<f64> {
        self.inv_local.clone()
    }
}

/// Deterministic coordinate update of the variational horseshoe factors.
pub fn horseshoe_vb_update(e_theta_sq: &[f64], state: &VbHorseshoe) -> Result<VbHorseshoe> {
    if e_theta_sq.len() != state.len() {
        return Err(Error::Dimension(format!(
            "horseshoe state has {} scales but {} second moments were given",
            state.len(),
            e_theta_sq.len()
        )));
    }
    if let Some(v) = e_theta_sq.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "second moments must be nonnegative, got {v}"
        )));
    }
    let b2inv = 1.0 / (state.b * state.b);
    let n = e_theta_sq.len();
    let mut inv_local = Vec::with_capacity(n);
    let mut inv_local_aux = Vec::with_capacity(n);
    let mut inv_global = Vec::with_capacity(n);
    for k in 0..n {
        let il = clamp_scale(1.0 / (e_theta_sq[k] / 2.0 + state.inv_local_aux[k]));
        let iu = clamp_scale(1.0 / (il + b2inv * state.inv_global[k]));
        let it = clamp_scale(1.0 / (b2inv * iu + state.inv_global_aux));
        inv_local.push(il);
        inv_local_aux.push(iu);
        inv_global.push(it);
    }
    let inv_global_aux =
        clamp_scale(((n as f64 + 1.0) / 2.0) / (1.0 + inv_global.iter().sum::<f64>()));
    Ok(VbHorseshoe {
        inv_local,
        inv_local_aux,
        inv_global,
        inv_global_aux,
        b: state.b,
    })
}
