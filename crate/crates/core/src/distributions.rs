//! Asymmetric Laplace and generalized inverse Gaussian building blocks.
//!
//! Scale convention: a single `scale` parameter multiplies the check loss in
//! the exponent, `f(u) = q(1-q)/scale · exp(-ρ_q(u)/scale)`. It corresponds to
//! σ² in the quantile-regression measurement equation as written with a
//! squared scale, and to σ in the normal-exponential mixture
//! `u | z ~ N(κ₁ z, κ₂² σ z)`, `z ~ Exp(mean σ)`. All sampler conditionals use
//! the mixture form.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ALParams {
    pub q: f64,
    pub scale: f64,
}

impl ALParams {
    pub fn new(q: f64, scale: f64) -> Result<Self> {
        check_quantile(q)?;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "asymmetric Laplace scale must be positive, got {scale}"
            )));
        }
        Ok(Self { q, scale })
    }
}

/// Constants of the normal-exponential mixture at quantile `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureConstants {
    pub q: f64,
    pub kappa1: f64,
    pub kappa2_sq: f64,
}

fn check_quantile(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "quantile level must lie in (0,1), got {q}"
        )))
    }
}

pub fn mixture_constants(q: f64) -> Result<MixtureConstants> {
    check_quantile(q)?;
    let qq = q * (1.0 - q);
    Ok(MixtureConstants {
        q,
        kappa1: (1.0 - 2.0 * q) / qq,
        kappa2_sq: 2.0 / qq,
    })
}

/// Check loss ρ_q(u) = u (q − 1{u < 0}).
pub fn check_loss(u: f64, q: f64) -> f64 {
    if u < 0.0 {
        (q - 1.0) * u
    } else {
        q * u
    }
}

pub fn al_density(u: f64, params: &ALParams) -> Result<f64> {
    let ALParams { q, scale } = ALParams::new(params.q, params.scale)?;
    let c = q * (1.0 - q) / scale;
    Ok(if u <= 0.0 {
        c * ((1.0 - q) * u / scale).exp()
    } else {
        c * (-q * u / scale).exp()
    })
}

/// CDF of the asymmetric Laplace; the `q`-th quantile is zero.
pub fn al_cdf(u: f64, params: &ALParams) -> f64 {
    let ALParams { q, scale } = *params;
    if u <= 0.0 {
        q * ((1.0 - q) * u / scale).exp()
    } else {
        1.0 - (1.0 - q) * (-q * u / scale).exp()
    }
}

/// Quantile function of the asymmetric Laplace.
pub fn al_quantile(p: f64, params: &ALParams) -> f64 {
    let ALParams { q, scale } = *params;
    if p <= q {
        scale / (1.0 - q) * (p / q).ln()
    } else {
        -scale / q * ((1.0 - p) / (1.0 - q)).ln()
    }
}

/// Draw `(u, z)` with `z ~ Exp(mean scale)` and `u | z ~ N(κ₁ z, κ₂² scale z)`.
pub fn al_mixture_draw<R: Rng + ?Sized>(params: &ALParams, rng: &mut R) -> Result<(f64, f64)> {
    let p = ALParams::new(params.q, params.scale)?;
    let k = mixture_constants(p.q)?;
    let z = p.scale * rng.sample::<f64, _>(Exp1);
    let nu: f64 = rng.sample(StandardNormal);
    let u = k.kappa1 * z + (k.kappa2_sq * p.scale * z).sqrt() * nu;
    Ok((u, z))
}

fn check_gig(delta: f64, rho: f64) -> Result<()> {
    if delta > 0.0 && rho > 0.0 && delta.is_finite() && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "GIG parameters must be positive and finite, got delta={delta}, rho={rho}"
        )))
    }
}

/// `(E[z], E[1/z])` for `z ~ GIG(1/2, δ, ρ)` with density
/// `∝ z^{-1/2} exp(-(δ z + ρ / z)/2)`. Half-integer Bessel ratios give
/// `K_{3/2}(x)/K_{1/2}(x) = 1 + 1/x`.
pub fn gig_moments(delta: f64, rho: f64) -> Result<(f64, f64)> {
    check_gig(delta, rho)?;
    let x = (delta * rho).sqrt();
    let ratio = 1.0 + 1.0 / x;
    let ez = (rho / delta).sqrt() * ratio;
    let einv = (delta / rho).sqrt() * ratio - 1.0 / rho;
    Ok((ez, einv))
}

/// Inverse Gaussian IG(μ, λ) draw (Michael–Schucany–Haas) in a form that
/// avoids cancellation for large μ.
pub fn inverse_gaussian_draw<R: Rng + ?Sized>(mu: f64, lambda: f64, rng: &mut R) -> f64 {
    let nu: f64 = rng.sample(StandardNormal);
    let y = nu * nu;
    let a = mu * y;
    let root = (4.0 * lambda * a + a * a).sqrt();
    let x = mu / (1.0 + (a + root) / (2.0 * lambda));
    let u: f64 = rng.random();
    if u <= mu / (mu + x) {
        x
    } else {
        mu * (mu / x)
    }
}

/// Draw `z ~ GIG(1/2, δ, ρ)` through the reciprocal inverse-Gaussian:
/// `1/z ~ IG(√(δ/ρ), δ)`.
pub fn gig_draw<R: Rng + ?Sized>(delta: f64, rho: f64, rng: &mut R) -> Result<f64> {
    check_gig(delta, rho)?;
    let mu = (delta / rho).sqrt();
    if mu > 1e100 {
        // ρ → 0 limit: Gamma(1/2, rate δ/2).
        let g = Gamma::new(0.5, 2.0 / delta)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        return Ok(g.sample(rng).max(f64::MIN_POSITIVE));
    }
    let w = inverse_gaussian_draw(mu, delta, rng);
    Ok(1.0 / w)
}

/// Draw from IG(shape, rate) (density ∝ x^{-shape-1} e^{-rate/x}).
pub fn inv_gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "inverse-gamma parameters must be positive and finite, got shape={shape}, rate={rate}"
        )));
    }
    let g = Gamma::new(shape, 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(rate / g.sample(rng))
}

pub fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(g.sample(rng))
}
