//! Linear Gaussian state-space utilities: companion form, Kalman filter and
//! the Carter–Kohn simulation smoother.
//!
//! Model, with `s_t` the `l`-dimensional current state and `x_t` the
//! companion state `(s_t, s_{t-1}, …, s_{t-p+1})`:
//!
//! ```text
//! y_t = c + Z s_t + e_t,                e_t ~ N(0, diag(h_t))
//! s_t = v + Φ_1 s_{t-1} + … + Φ_p s_{t-p} + ε_t,   ε_t ~ N(0, Ω_t),  t ≥ p
//! x_{p-1} = (s_{p-1}, …, s_0) ~ N(0, init_var · I)
//! ```
//!
//! Observation rows with zero noise variance are conditioned on exactly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, standard_normal_vector, symmetrize};

pub use crate::linalg::spectral_radius;

/// Default prior variance of the initial companion state.
pub const DEFAULT_INIT_VAR: f64 = 10.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone)]
pub struct CompanionSystem {
    pub matrix: DMatrix<f64>,
    pub intercept: DVector<f64>,
    /// Dimension of the current-period block.
    pub block: usize,
    pub lags: usize,
}

impl CompanionSystem {
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.matrix)
    }
}

/// Stack `[Φ_1 … Φ_p]` over identity sub-diagonal blocks.
pub fn build_companion(v: &DVector<f64>, phis: &[DMatrix<f64>]) -> Result<CompanionSystem> {
    let p = phis.len();
    if p == 0 {
        return Err(Error::Dimension("companion form needs at least one lag".into()));
    }
    let l = phis[0].nrows();
    for (c, phi) in phis.iter().enumerate() {
        if phi.nrows() != l || phi.ncols() != l {
            return Err(Error::Dimension(format!(
                "lag {} coefficient is {}x{}, expected {l}x{l}",
                c + 1,
                phi.nrows(),
                phi.ncols()
            )));
        }
    }
    if v.len() != l {
        return Err(Error::Dimension(format!(
            "intercept has length {}, expected {l}",
            v.len()
        )));
    }
    let n = l * p;
    let mut matrix = DMatrix::zeros(n, n);
    for (c, phi) in phis.iter().enumerate() {
        matrix.view_mut((0, c * l), (l, l)).copy_from(phi);
    }
    for i in l..n {
        matrix[(i, i - l)] = 1.0;
    }
    let mut intercept = DVector::zeros(n);
    intercept.rows_mut(0, l).copy_from(v);
    Ok(CompanionSystem {
        matrix,
        intercept,
        block: l,
        lags: p,
    })
}

#[derive(Debug, Clone)]
pub struct StateSpaceSystem {
    /// `Z`, N×l.
    pub obs_matrix: DMatrix<f64>,
    /// `c`, length N.
    pub obs_intercept: DVector<f64>,
    /// Diagonal observation noise, T×N (row t holds `h_t`). Zero means exact.
    pub obs_noise_var: DMatrix<f64>,
    /// `v`, length l.
    pub trans_intercept: DVector<f64>,
    /// `Φ_1 … Φ_p`.
    pub trans_coeffs: Vec<DMatrix<f64>>,
    /// `Ω_t`: a single matrix when constant, otherwise one per period.
    pub trans_cov: Vec<DMatrix<f64>>,
    pub init_var: f64,
}

impl StateSpaceSystem {
    pub fn state_dim(&self) -> usize {
        self.obs_matrix.ncols()
    }

    pub fn lags(&self) -> usize {
        self.trans_coeffs.len()
    }

    pub fn n_obs(&self) -> usize {
        self.obs_matrix.nrows()
    }

    pub fn omega(&self, t: usize) -> &DMatrix<f64> {
        if self.trans_cov.len() == 1 {
            &self.trans_cov[0]
        } else {
            &self.trans_cov[t]
        }
    }

    /// `[Φ_1 … Φ_p]`, l×lp.
    pub fn stacked_coeffs(&self) -> DMatrix<f64> {
        let l = self.state_dim();
        let p = self.lags();
        let mut m = DMatrix::zeros(l, l * p);
        for (c, phi) in self.trans_coeffs.iter().enumerate() {
            m.view_mut((0, c * l), (l, l)).copy_from(phi);
        }
        m
    }

    fn validate(&self, observations: &DMatrix<f64>) -> Result<()> {
        let l = self.state_dim();
        let n = self.n_obs();
        let t = observations.nrows();
        let p = self.lags();
        if p == 0 {
            return Err(Error::Dimension("state equation needs at least one lag".into()));
        }
        if observations.ncols() != n {
            return Err(Error::Dimension(format!(
                "observations have {} columns, system has {n} rows",
                observations.ncols()
            )));
        }
        if t < p {
            return Err(Error::InsufficientSample(format!(
                "{t} periods cannot initialize {p} lags"
            )));
        }
        if self.obs_intercept.len() != n
            || self.obs_noise_var.nrows() != t
            || self.obs_noise_var.ncols() != n
        {
            return Err(Error::Dimension(
                "observation intercept or noise variance does not match observations".into(),
            ));
        }
        if self.trans_intercept.len() != l
            || self.trans_coeffs.iter().any(|m| m.nrows() != l || m.ncols() != l)
        {
            return Err(Error::Dimension("transition coefficients do not match state".into()));
        }
        if !(self.trans_cov.len() == 1 || self.trans_cov.len() == t)
            || self.trans_cov.iter().any(|m| m.nrows() != l || m.ncols() != l)
        {
            return Err(Error::Dimension(
                "transition covariance must be l×l, constant or one per period".into(),
            ));
        }
        if !(self.init_var > 0.0) {
            return Err(Error::InvalidParameter("initial state variance must be positive".into()));
        }
        if self.obs_noise_var.iter().any(|h| !(*h >= 0.0)) {
            return Err(Error::InvalidParameter(
                "observation noise variances must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// Filtered companion means for t = p-1, …, T-1 (index t-p+1).
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// Filtered mean of `s_t` given `y_0..y_t`, T×l.
    pub current_means: DMatrix<f64>,
    /// Filtered covariance of `s_t` given `y_0..y_t`.
    pub current_covs: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

/// Exact scalar update on coordinate set `z` (row vector acting on block at
/// `offset`). Returns the log predictive density contribution, or `None`
/// when the row carries no information.
fn scalar_update(
    m: &mut DVector<f64>,
    p: &mut DMatrix<f64>,
    offset: usize,
    z: &[f64],
    y: f64,
    h: f64,
    t: usize,
) -> Result<f64> {
    let n = m.len();
    let mut pz = DVector::<f64>::zeros(n);
    let mut pred = 0.0;
    for (j, &zj) in z.iter().enumerate() {
        if zj != 0.0 {
            pred += zj * m[offset + j];
            for i in 0..n {
                pz[i] += p[(i, offset + j)] * zj;
            }
        }
    }
    let mut f = h;
    for (j, &zj) in z.iter().enumerate() {
        if zj != 0.0 {
            f += zj * pz[offset + j];
        }
    }
    let scale = (0..n).map(|i| p[(i, i)].abs()).fold(h.abs(), f64::max);
    if f < -1e-9 * scale.max(1.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "innovation variance {f} at period {t}"
        )));
    }
    if f <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Ok(0.0);
    }
    let innov = y - pred;
    for i in 0..n {
        m[i] += pz[i] * innov / f;
    }
    for i in 0..n {
        for j in 0..n {
            p[(i, j)] -= pz[i] * pz[j] / f;
        }
    }
    Ok(-0.5 * (LN_2PI + f.ln() + innov * innov / f))
}

/// Update with all noisy rows at period `t` at once in information form.
#[allow(clippy::too_many_arguments)]
fn block_update(
    m: &mut DVector<f64>,
    p: &mut DMatrix<f64>,
    offset: usize,
    l: usize,
    zmat: &DMatrix<f64>,
    rows: &[usize],
    resid: &[f64],
    h: &[f64],
    t: usize,
) -> Result<f64> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let n = m.len();
    // J = Z'WZ, d = Z'W e with e = y - c - Z m_block.
    let mut jmat = DMatrix::zeros(l, l);
    let mut d = DVector::zeros(l);
    let mut quad = 0.0;
    let mut logdet_h = 0.0;
    for (k, &r) in rows.iter().enumerate() {
        let w = 1.0 / h[k];
        let zr = zmat.row(r);
        let e = resid[k];
        quad += e * e * w;
        logdet_h += h[k].ln();
        for a in 0..l {
            let za = zr[a];
            if za == 0.0 {
                continue;
            }
            d[a] += za * w * e;
            for b in 0..l {
                jmat[(a, b)] += za * w * zr[b];
            }
        }
    }
    let p11 = p.view((offset, offset), (l, l)).into_owned();
    let g = p.columns(offset, l).into_owned();
    // (I + J P11) u = d
    let a = DMatrix::identity(l, l) + &jmat * &p11;
    let lu = a.clone().lu();
    let det = lu.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::NotPositiveDefinite(format!(
            "innovation covariance at period {t}"
        )));
    }
    let u = lu
        .solve(&d)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("innovation covariance at period {t}")))?;
    let quad_form = quad - (&p11 * &u).dot(&d);
    *m += &g * &u;
    // P' = P - G (I + J P11)^{-1} J G'
    let jg = &jmat * g.transpose();
    let x = lu
        .solve(&jg)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("innovation covariance at period {t}")))?;
    let upd = &g * x;
    *p -= upd;
    symmetrize(p);
    let _ = n;
    let nr = rows.len() as f64;
    Ok(-0.5 * (nr * LN_2PI + logdet_h + det.ln() + quad_form))
}

fn is_unit_row(z: &DMatrix<f64>, r: usize) -> Option<usize> {
    let mut hit = None;
    for (j, &v) in z.row(r).iter().enumerate() {
        if v == 1.0 && hit.is_none() {
            hit = Some(j);
        } else if v != 0.0 {
            return None;
        }
    }
    hit
}

/// Condition the companion state on period `t` observations, where `s_t` is
/// the block at `offset`.
fn update_period(
    sys: &StateSpaceSystem,
    y: &DMatrix<f64>,
    t: usize,
    offset: usize,
    m: &mut DVector<f64>,
    p: &mut DMatrix<f64>,
) -> Result<f64> {
    let l = sys.state_dim();
    let mut ll = 0.0;
    let mut noisy = Vec::new();
    for r in 0..sys.n_obs() {
        let h = sys.obs_noise_var[(t, r)];
        if h > 0.0 {
            noisy.push(r);
            continue;
        }
        let z: Vec<f64> = sys.obs_matrix.row(r).iter().copied().collect();
        ll += scalar_update(m, p, offset, &z, y[(t, r)] - sys.obs_intercept[r], 0.0, t)?;
    }
    if !noisy.is_empty() {
        let mut resid = Vec::with_capacity(noisy.len());
        let mut hs = Vec::with_capacity(noisy.len());
        for &r in &noisy {
            let mut pred = sys.obs_intercept[r];
            for j in 0..l {
                pred += sys.obs_matrix[(r, j)] * m[offset + j];
            }
            resid.push(y[(t, r)] - pred);
            hs.push(sys.obs_noise_var[(t, r)]);
        }
        ll += block_update(m, p, offset, l, &sys.obs_matrix, &noisy, &resid, &hs, t)?;
    }
    symmetrize(p);
    Ok(ll)
}

/// Propagate the companion moments one period, with `Ω_{t}` the innovation
/// covariance of the new period.
fn predict(
    m: &DVector<f64>,
    p: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    v: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let l = v.len();
    let n = m.len();
    let mut mn = DVector::zeros(n);
    let top = v + phi * m;
    mn.rows_mut(0, l).copy_from(&top);
    if n > l {
        mn.rows_mut(l, n - l).copy_from(&m.rows(0, n - l));
    }
    let phip = phi * p; // l×n
    let mut pn = DMatrix::zeros(n, n);
    let tl = &phip * phi.transpose() + omega;
    pn.view_mut((0, 0), (l, l)).copy_from(&tl);
    if n > l {
        let tr = phip.columns(0, n - l).into_owned();
        pn.view_mut((0, l), (l, n - l)).copy_from(&tr);
        pn.view_mut((l, 0), (n - l, l)).copy_from(&tr.transpose());
        pn.view_mut((l, l), (n - l, n - l))
            .copy_from(&p.view((0, 0), (n - l, n - l)));
    }
    symmetrize(&mut pn);
    (mn, pn)
}

pub fn kalman_filter(sys: &StateSpaceSystem, observations: &DMatrix<f64>) -> Result<FilterOutput> {
    sys.validate(observations)?;
    let l = sys.state_dim();
    let p = sys.lags();
    let n = l * p;
    let tt = observations.nrows();
    let phi = sys.stacked_coeffs();
    let mut m = DVector::zeros(n);
    let mut pm = DMatrix::identity(n, n) * sys.init_var;
    let mut loglik = 0.0;
    let mut current_means = DMatrix::zeros(tt, l);
    let mut current_covs = Vec::with_capacity(tt);
    let mut means = Vec::with_capacity(tt + 1 - p);
    let mut covs = Vec::with_capacity(tt + 1 - p);
    for t in 0..p {
        let offset = (p - 1 - t) * l;
        loglik += update_period(sys, observations, t, offset, &mut m, &mut pm)?;
        current_means
            .row_mut(t)
            .copy_from(&m.rows(offset, l).transpose());
        current_covs.push(pm.view((offset, offset), (l, l)).into_owned());
    }
    means.push(m.clone());
    covs.push(pm.clone());
    for t in p..tt {
        let (mn, pn) = predict(&m, &pm, &phi, &sys.trans_intercept, sys.omega(t));
        m = mn;
        pm = pn;
        loglik += update_period(sys, observations, t, 0, &mut m, &mut pm)?;
        current_means.row_mut(t).copy_from(&m.rows(0, l).transpose());
        current_covs.push(pm.view((0, 0), (l, l)).into_owned());
        means.push(m.clone());
        covs.push(pm.clone());
    }
    if !loglik.is_finite() {
        return Err(Error::NonFinite("Kalman filter log-likelihood".into()));
    }
    Ok(FilterOutput {
        means,
        covs,
        current_means,
        current_covs,
        loglik,
    })
}

/// Draw `s_0..s_{T-1}` (rows of the returned T×l matrix) from the joint
/// smoothing distribution.
pub fn carter_kohn_draw<R: Rng + ?Sized>(
    sys: &StateSpaceSystem,
    observations: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let filt = kalman_filter(sys, observations)?;
    carter_kohn_from_filter(sys, observations, &filt, rng)
}

pub fn carter_kohn_from_filter<R: Rng + ?Sized>(
    sys: &StateSpaceSystem,
    observations: &DMatrix<f64>,
    filt: &FilterOutput,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let l = sys.state_dim();
    let p = sys.lags();
    let n = l * p;
    let tt = observations.nrows();
    let phi = sys.stacked_coeffs();
    let mut path = DMatrix::zeros(tt, l);

    let last = filt.means.len() - 1;
    let s = psd_sqrt(&filt.covs[last]);
    let mut x_next = &filt.means[last] + s * standard_normal_vector(n, rng);
    let write = |path: &mut DMatrix<f64>, x: &DVector<f64>, t: usize| {
        for b in 0..p {
            if t >= b {
                path.row_mut(t - b).copy_from(&x.rows(b * l, l).transpose());
            }
        }
    };
    write(&mut path, &x_next, tt - 1);

    for t in (p - 1..tt - 1).rev() {
        let idx = t + 1 - p;
        let mut m = filt.means[idx].clone();
        let mut pm = filt.covs[idx].clone();
        // Blocks 0..p-2 of x_t are blocks 1..p-1 of x_{t+1}.
        let known = n - l;
        for i in 0..known {
            let mut z = vec![0.0; n];
            z[i] = 1.0;
            scalar_update(&mut m, &mut pm, 0, &z, x_next[l + i], 0.0, t)?;
        }
        for i in 0..known {
            m[i] = x_next[l + i];
        }
        // Remaining uncertainty sits in the last block u.
        let off = known;
        let mu = m.rows(off, l).into_owned();
        let pu = pm.view((off, off), (l, l)).into_owned();
        let phi_k = phi.columns(0, known);
        let phi_u = phi.columns(off, l);
        let target = x_next.rows(0, l) - &sys.trans_intercept - phi_k * m.rows(0, known) - &phi_u * &mu;
        let pphi = &pu * phi_u.transpose(); // l×l
        let mut sm = &phi_u * &pphi + sys.omega(t + 1);
        symmetrize(&mut sm);
        let chol = sm.clone().cholesky().ok_or_else(|| {
            Error::NotPositiveDefinite(format!("smoother innovation covariance at period {}", t + 1))
        })?;
        let gain_t = chol.solve(&pphi.transpose()); // S^{-1} Φ_u P_u
        let mean_u = &mu + gain_t.transpose() * &target;
        let mut cov_u = &pu - &pphi * &gain_t;
        symmetrize(&mut cov_u);
        let draw_u = &mean_u + psd_sqrt(&cov_u) * standard_normal_vector(l, rng);
        let mut x = DVector::zeros(n);
        x.rows_mut(0, known).copy_from(&x_next.rows(l, known));
        x.rows_mut(off, l).copy_from(&draw_u);
        write(&mut path, &x, t);
        x_next = x;
    }

    // Exact identity rows reproduce their observations verbatim.
    for r in 0..sys.n_obs() {
        if sys.obs_intercept[r] != 0.0 {
            continue;
        }
        if let Some(j) = is_unit_row(&sys.obs_matrix, r) {
            for t in 0..tt {
                if sys.obs_noise_var[(t, r)] == 0.0 {
                    path[(t, j)] = observations[(t, r)];
                }
            }
        }
    }
    if path.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("simulation smoother draw".into()));
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_system(t: usize, phi: f64, h: f64) -> StateSpaceSystem {
        StateSpaceSystem {
            obs_matrix: DMatrix::from_element(1, 1, 1.0),
            obs_intercept: DVector::zeros(1),
            obs_noise_var: DMatrix::from_element(t, 1, h),
            trans_intercept: DVector::zeros(1),
            trans_coeffs: vec![DMatrix::from_element(1, 1, phi)],
            trans_cov: vec![DMatrix::from_element(1, 1, 1.0)],
            init_var: DEFAULT_INIT_VAR,
        }
    }

    #[test]
    fn companion_examples() {
        let c = build_companion(&DVector::zeros(1), &[DMatrix::from_element(1, 1, 0.7)]).unwrap();
        assert_eq!(c.matrix, DMatrix::from_element(1, 1, 0.7));
        let c = build_companion(
            &DVector::zeros(1),
            &[DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.3)],
        )
        .unwrap();
        assert_eq!(c.matrix, DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 1.0, 0.0]));
        let root = (0.5 + (0.25f64 + 1.2).sqrt()) / 2.0;
        assert_abs_diff_eq!(c.spectral_radius(), root, epsilon = 1e-12);
        let c = build_companion(&DVector::zeros(2), &[DMatrix::identity(2, 2) * 0.5]).unwrap();
        assert_abs_diff_eq!(c.spectral_radius(), 0.5, epsilon = 1e-12);
        assert!(build_companion(
            &DVector::zeros(2),
            &[DMatrix::identity(2, 2), DMatrix::identity(3, 3)]
        )
        .is_err());
        assert_eq!(spectral_radius(&DMatrix::zeros(3, 3)), 0.0);
        assert_abs_diff_eq!(spectral_radius(&DMatrix::identity(3, 3)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_observation_gives_observed_mean() {
        let sys = scalar_system(4, 0.5, 0.0);
        let y = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 0.5, 3.0]);
        let f = kalman_filter(&sys, &y).unwrap();
        for t in 0..4 {
            assert_abs_diff_eq!(f.current_means[(t, 0)], y[(t, 0)], epsilon = 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = carter_kohn_draw(&sys, &y, &mut rng).unwrap();
        assert_eq!(d, y);
    }

    #[test]
    fn zero_data_gives_zero_means() {
        let sys = scalar_system(5, 0.9, 0.3);
        let f = kalman_filter(&sys, &DMatrix::zeros(5, 1)).unwrap();
        assert!(f.current_means.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn same_seed_same_draw() {
        let sys = scalar_system(6, 0.5, 0.4);
        let y = DMatrix::from_column_slice(6, 1, &[0.1, 0.4, -0.3, 0.9, 1.2, 0.2]);
        let a = carter_kohn_draw(&sys, &y, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = carter_kohn_draw(&sys, &y, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let sys = scalar_system(3, 0.5, 0.4);
        assert!(kalman_filter(&sys, &DMatrix::zeros(3, 2)).is_err());
        assert!(kalman_filter(&sys, &DMatrix::zeros(4, 1)).is_err());
    }
}
