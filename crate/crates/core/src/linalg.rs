//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Gaussian posterior given its precision matrix and the precision-weighted
/// mean `b` (so the mean is `precision⁻¹ b`).
pub struct GaussianPrecision {
    pub mean: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl GaussianPrecision {
    pub fn new(precision: DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<Self> {
        let mut p = precision;
        symmetrize(&mut p);
        let chol = p
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite(format!("posterior precision of {what}")))?;
        let mean = chol.solve(b);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("posterior mean of {what}")));
        }
        Ok(Self { mean, chol })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `mean + L⁻ᵀ ξ` with `precision = L Lᵀ`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.mean.len();
        let xi = standard_normal_vector(n, rng);
        let l = self.chol.l_dirty();
        let u = l
            .tr_solve_lower_triangular(&xi)
            .unwrap_or_else(|| DVector::zeros(n));
        &self.mean + u
    }
}

/// Symmetric square root `S` with `S Sᵀ = cov`; negative eigenvalues from
/// rounding are clamped to zero.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = cov.clone();
    symmetrize(&mut c);
    let eig = SymmetricEigen::new(c);
    let mut v = eig.eigenvectors;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    v
}

pub fn draw_psd<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let s = psd_sqrt(cov);
    mean + s * standard_normal_vector(mean.len(), rng)
}

pub fn inverse_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut p = m.clone();
    symmetrize(&mut p);
    p.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Linear-interpolation sample quantile (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn precision_draws_have_target_covariance() {
        let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let g = GaussianPrecision::new(prec.clone(), &b, "test").unwrap();
        let cov = g.covariance();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut acc = DMatrix::zeros(2, 2);
        let mut m = DVector::zeros(2);
        for _ in 0..n {
            let d = g.draw(&mut rng);
            m += &d;
            acc += (&d - &g.mean) * (&d - &g.mean).transpose();
        }
        m /= n as f64;
        acc /= n as f64;
        assert_abs_diff_eq!(m, g.mean.clone(), epsilon = 0.01);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(acc[(i, j)], cov[(i, j)], epsilon = 0.01);
            }
        }
    }

    #[test]
    fn psd_sqrt_handles_singular() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = psd_sqrt(&c);
        assert_abs_diff_eq!(&s * s.transpose(), c, epsilon = 1e-12);
    }

    #[test]
    fn quantiles_interpolate() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.25), 1.25);
    }
}
