//! Random-walk stochastic volatility via the seven-component Gaussian
//! mixture approximation to `log χ²₁`.

use rand::Rng;

use crate::distributions::inv_gamma_draw;
use crate::error::{Error, Result};
use crate::linalg::standard_normal_vector;

/// Offset added to squared residuals before taking logs.
pub const OFFSET: f64 = 1e-4;

const PROB: [f64; 7] = [0.00730, 0.10556, 0.00002, 0.04395, 0.34001, 0.24566, 0.25750];
/// Component means, already shifted by the `log χ²₁` mean.
const MEAN: [f64; 7] = [
    -10.12999 - 1.2704,
    -3.97281 - 1.2704,
    -8.56686 - 1.2704,
    2.77786 - 1.2704,
    0.61942 - 1.2704,
    1.79518 - 1.2704,
    -1.08819 - 1.2704,
];
const VAR: [f64; 7] = [5.79596, 2.61369, 5.17950, 0.16735, 0.64009, 0.34023, 1.26261];

/// Draw a log-variance path given structural residuals, the current path,
/// the innovation variance and the prior variance of the first state.
pub fn sample_log_vol<R: Rng + ?Sized>(
    resid: &[f64],
    h: &[f64],
    sigma2: f64,
    h0_var: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = resid.len();
    if h.len() != n {
        return Err(Error::Dimension("log-volatility path and residuals differ in length".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // Mixture indicators.
    let mut obs = Vec::with_capacity(n);
    let mut obs_var = Vec::with_capacity(n);
    for t in 0..n {
        let ystar = (resid[t] * resid[t] + OFFSET).ln();
        let mut w = [0.0; 7];
        let mut total = 0.0;
        let mut best = f64::NEG_INFINITY;
        let mut logs = [0.0; 7];
        for j in 0..7 {
            let d = ystar - h[t] - MEAN[j];
            logs[j] = PROB[j].ln() - 0.5 * VAR[j].ln() - 0.5 * d * d / VAR[j];
            best = best.max(logs[j]);
        }
        for j in 0..7 {
            w[j] = (logs[j] - best).exp();
            total += w[j];
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = 6;
        for (j, wj) in w.iter().enumerate() {
            acc += wj;
            if u < acc {
                pick = j;
                break;
            }
        }
        obs.push(ystar - MEAN[pick]);
        obs_var.push(VAR[pick]);
    }
    // Forward filter.
    let mut mf = vec![0.0; n];
    let mut pf = vec![0.0; n];
    let (mut a, mut p) = (0.0, h0_var);
    for t in 0..n {
        let k = p / (p + obs_var[t]);
        mf[t] = a + k * (obs[t] - a);
        pf[t] = p * (1.0 - k);
        a = mf[t];
        p = pf[t] + sigma2;
    }
    // Backward sample.
    let z = standard_normal_vector(n, rng);
    let mut out = vec![0.0; n];
    out[n - 1] = mf[n - 1] + pf[n - 1].sqrt() * z[n - 1];
    for t in (0..n - 1).rev() {
        let g = pf[t] / (pf[t] + sigma2);
        let mean = mf[t] + g * (out[t + 1] - mf[t]);
        let var = pf[t] * sigma2 / (pf[t] + sigma2);
        out[t] = mean + var.max(0.0).sqrt() * z[t];
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-volatility draw".into()));
    }
    Ok(out)
}

/// Innovation variance of the random walk:
/// `IG(r_ω + (n−1)/2, s_ω + ½ Σ (Δh)²)`.
pub fn sample_sv_var<R: Rng + ?Sized>(h: &[f64], r_omega: f64, s_omega: f64, rng: &mut R) -> Result<f64> {
    let ss: f64 = h.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    let df = h.len().saturating_sub(1) as f64;
    Ok(inv_gamma_draw(r_omega + 0.5 * df, s_omega + 0.5 * ss, rng)?.max(1e-12))
}
