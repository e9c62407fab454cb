//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qfavar::statespace::{carter_kohn_draw, kalman_filter, StateSpaceSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() * 0.5 + DMatrix::identity(n, n) * 0.3
}

pub fn random_system(l: usize, p: usize, nobs: usize, t: usize, exact_rows: usize, seed: u64) -> (StateSpaceSystem, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DMatrix::from_fn(nobs, l, |_, _| rng.random_range(-1.0..1.5));
    let mut h = DMatrix::from_fn(t, nobs, |_, _| rng.random_range(0.2..1.0));
    for e in 0..exact_rows {
        let r = nobs - exact_rows + e;
        z.row_mut(r).fill(0.0);
        z[(r, l - 1 - e)] = 1.0;
        h.column_mut(r).fill(0.0);
    }
    let mut c = DVector::from_fn(nobs, |_, _| rng.random_range(-0.5..0.5));
    for e in 0..exact_rows {
        c[nobs - exact_rows + e] = 0.0;
    }
    let sys = StateSpaceSystem {
        obs_matrix: z,
        obs_intercept: c,
        obs_noise_var: h,
        trans_intercept: DVector::from_fn(l, |_, _| rng.random_range(-0.3..0.3)),
        trans_coeffs: (0..p)
            .map(|_| DMatrix::from_fn(l, l, |_, _| rng.random_range(-0.4..0.4) / p as f64))
            .collect(),
        trans_cov: vec![random_spd(l, &mut rng)],
        init_var: 10.0,
    };
    let y = DMatrix::from_fn(t, nobs, |_, _| rng.random_range(-2.0..2.0));
    (sys, y)
}

/// Joint Gaussian of the stacked path `(s_0, …, s_{T-1})` implied by the
/// state equation, built by brute-force linear propagation.
pub fn state_path_moments(sys: &StateSpaceSystem, t_len: usize) -> (DVector<f64>, DMatrix<f64>) {
    let l = sys.obs_matrix.ncols();
    let p = sys.trans_coeffs.len();
    let n = t_len * l;
    // s = a + L w, w = (s_0..s_{p-1} innovations, ε_p..ε_{T-1}) with block covariance D.
    let mut a = DVector::zeros(n);
    let mut lmat = DMatrix::zeros(n, n);
    let mut d = DMatrix::zeros(n, n);
    for t in 0..t_len {
        for i in 0..l {
            lmat[(t * l + i, t * l + i)] = 1.0;
        }
        if t < p {
            for i in 0..l {
                d[(t * l + i, t * l + i)] = sys.init_var;
            }
            continue;
        }
        let om = if sys.trans_cov.len() == 1 { &sys.trans_cov[0] } else { &sys.trans_cov[t] };
        d.view_mut((t * l, t * l), (l, l)).copy_from(om);
        let mut at = sys.trans_intercept.clone();
        let mut row_block = DMatrix::zeros(l, n);
        for (c, phi) in sys.trans_coeffs.iter().enumerate() {
            let src = t - c - 1;
            at += phi * a.rows(src * l, l);
            row_block += phi * lmat.rows(src * l, l);
        }
        a.rows_mut(t * l, l).copy_from(&at);
        let cur = lmat.rows(t * l, l).into_owned();
        lmat.rows_mut(t * l, l).copy_from(&(cur + row_block));
    }
    let cov = &lmat * d * lmat.transpose();
    (a, cov)
}

pub struct Conditioned {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub loglik: f64,
}

/// Condition the path on observations of periods `0..upto` by forming the
/// full joint normal of states and observations.
pub fn condition_on(sys: &StateSpaceSystem, y: &DMatrix<f64>, upto: usize) -> Conditioned {
    let t_len = y.nrows();
    let l = sys.obs_matrix.ncols();
    let nobs = sys.obs_matrix.nrows();
    let (mu, sig) = state_path_moments(sys, t_len);
    let m = upto * nobs;
    let mut g = DMatrix::zeros(m, t_len * l);
    let mut c = DVector::zeros(m);
    let mut yy = DVector::zeros(m);
    let mut h = DMatrix::zeros(m, m);
    for t in 0..upto {
        for r in 0..nobs {
            let k = t * nobs + r;
            for j in 0..l {
                g[(k, t * l + j)] = sys.obs_matrix[(r, j)];
            }
            c[k] = sys.obs_intercept[r];
            yy[k] = y[(t, r)];
            h[(k, k)] = sys.obs_noise_var[(t, r)];
        }
    }
    let sy = &g * &sig * g.transpose() + h;
    let e = &yy - &c - &g * &mu;
    let sy_inv = sy.clone().try_inverse().expect("invertible observation covariance");
    let k = &sig * g.transpose() * &sy_inv;
    let mean = &mu + &k * &e;
    let cov = &sig - &k * &g * &sig;
    let det = sy.determinant();
    let loglik = -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + e.dot(&(&sy_inv * &e)));
    Conditioned { mean, cov, loglik }
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Integrate `f` over (0, ∞) by mapping z = x/(1−x) and splitting into
/// panels, which keeps spiky integrands near zero well resolved.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: &F, tol: f64) -> f64 {
    let g = |x: f64| {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        let z = x / (1.0 - x);
        f(z) / ((1.0 - x) * (1.0 - x))
    };
    let edges = [0.0, 1e-6, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.35, 0.5, 0.65, 0.8, 0.9, 0.95, 0.99, 0.999, 1.0];
    edges
        .windows(2)
        .map(|w| adaptive_simpson(&g, w[0], w[1], tol / 16.0))
        .sum()
}

/// Largest absolute gap between the Kalman filter (log-likelihood,
/// filtered means and covariances) and brute-force conditioning.
pub fn filter_discrepancy(sys: &StateSpaceSystem, y: &DMatrix<f64>) -> f64 {
    let l = sys.obs_matrix.ncols();
    let f = kalman_filter(sys, y).unwrap();
    let mut worst = (f.loglik - condition_on(sys, y, y.nrows()).loglik).abs();
    for t in 0..y.nrows() {
        let c = condition_on(sys, y, t + 1);
        for i in 0..l {
            worst = worst.max((f.current_means[(t, i)] - c.mean[t * l + i]).abs());
            for j in 0..l {
                worst = worst.max((f.current_covs[t][(i, j)] - c.cov[(t * l + i, t * l + j)]).abs());
            }
        }
    }
    worst
}

/// Smoother draws against the exact joint posterior of the path:
/// `(max |mean error| in Monte Carlo standard errors, max covariance error
/// relative to the product of standard deviations)`.
pub fn smoother_discrepancy(sys: &StateSpaceSystem, y: &DMatrix<f64>, draws: usize, seed: u64) -> (f64, f64) {
    let l = sys.obs_matrix.ncols();
    let t = y.nrows();
    let n = t * l;
    let oracle = condition_on(sys, y, t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = DVector::zeros(n);
    let mut sq = DMatrix::zeros(n, n);
    for _ in 0..draws {
        let d = carter_kohn_draw(sys, y, &mut rng).unwrap();
        let v = DVector::from_fn(n, |k, _| d[(k / l, k % l)]);
        sum += &v;
        sq.ger(1.0, &v, &v, 1.0);
    }
    let nd = draws as f64;
    let mean = &sum / nd;
    let cov = &sq / nd - &mean * mean.transpose();
    let (mut z, mut rel) = (0.0f64, 0.0f64);
    for k in 0..n {
        let sd = oracle.cov[(k, k)].max(0.0).sqrt();
        let err = (mean[k] - oracle.mean[k]).abs();
        if sd > 1e-12 {
            z = z.max(err / (sd / nd.sqrt()));
        } else if err > 1e-9 {
            z = f64::INFINITY;
        }
        for j in 0..n {
            let scale = (oracle.cov[(k, k)] * oracle.cov[(j, j)]).sqrt();
            if scale > 1e-12 {
                rel = rel.max((cov[(k, j)] - oracle.cov[(k, j)]).abs() / scale);
            }
        }
    }
    (z, rel)
}

/// AL density by integrating the normal-exponential mixture over the
/// latent scale.
pub fn mixture_density(u: f64, q: f64, scale: f64) -> f64 {
    let qq = q * (1.0 - q);
    let k1 = (1.0 - 2.0 * q) / qq;
    let k2 = 2.0 / qq;
    // z = w² removes the z^{-1/2} singularity at u = 0.
    let f = |w: f64| {
        if w <= 0.0 {
            return 0.0;
        }
        let z = w * w;
        let v = k2 * scale;
        let normal = (-(u - k1 * z).powi(2) / (2.0 * v * z)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        2.0 * normal * (-z / scale).exp() / scale
    };
    integrate_half_line(&f, 1e-13)
}

/// `(E[z], E[1/z])` of GIG(1/2, δ, ρ) by quadrature of the unnormalized
/// density.
pub fn gig_quadrature_moments(delta: f64, rho: f64) -> (f64, f64) {
    // Centre the exponent at the mode to avoid underflow.
    let mode = (-0.5 + (0.25 + delta * rho).sqrt()) / delta;
    let logk = |z: f64| -0.5 * z.ln() - 0.5 * (delta * z + rho / z);
    let c = logk(mode);
    let w = |z: f64| if z <= 0.0 { 0.0 } else { (logk(z) - c).exp() };
    let scaled = |g: &dyn Fn(f64) -> f64| {
        let h = |x: f64| g(x * mode) * mode;
        integrate_half_line(&h, 1e-14)
    };
    let norm = scaled(&|z| w(z));
    let m1 = scaled(&|z| z * w(z));
    let mi = scaled(&|z| if z <= 0.0 { 0.0 } else { w(z) / z });
    (m1 / norm, mi / norm)
}

/// Generalized FEVD of a VAR(p) by simulating H-step forecast errors
/// `e = Σ_h Ψ_h u_{H−h}` and measuring, for each shock `j`, the variance
/// of the projection of `e_i` on the `u_j` sequence. Returns raw shares.
pub fn fevd_monte_carlo(coeffs: &[DMatrix<f64>], omega: &DMatrix<f64>, horizon: usize, draws: usize, seed: u64) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let l = omega.nrows();
    let chol = omega.clone().cholesky().unwrap().l();
    let mut psi = vec![DMatrix::<f64>::identity(l, l)];
    for h in 1..horizon {
        let mut m = DMatrix::zeros(l, l);
        for (c, phi) in coeffs.iter().enumerate().take(h) {
            m += phi * &psi[h - c - 1];
        }
        psi.push(m);
    }
    let psi: Vec<Vec<f64>> = psi.iter().map(|p| (0..l * l).map(|k| p[(k / l, k % l)]).collect()).collect();
    let chol: Vec<f64> = (0..l * l).map(|k| chol[(k / l, k % l)]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Running sums of e_i u_{j,h}, e_i² and u_j².
    let mut cross = vec![0.0; horizon * l * l];
    let mut var_e = vec![0.0; l];
    let mut var_u = vec![0.0; l];
    let mut u = vec![0.0; horizon * l];
    let mut z = vec![0.0; l];
    let mut e = vec![0.0; l];
    for _ in 0..draws {
        for h in 0..horizon {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            for i in 0..l {
                u[h * l + i] = (0..=i).map(|k| chol[i * l + k] * z[k]).sum();
                var_u[i] += u[h * l + i] * u[h * l + i];
            }
        }
        e.iter_mut().for_each(|x| *x = 0.0);
        for h in 0..horizon {
            for i in 0..l {
                e[i] += (0..l).map(|k| psi[h][i * l + k] * u[h * l + k]).sum::<f64>();
            }
        }
        for i in 0..l {
            var_e[i] += e[i] * e[i];
            for h in 0..horizon {
                for j in 0..l {
                    cross[(h * l + i) * l + j] += e[i] * u[h * l + j];
                }
            }
        }
    }
    let nd = draws as f64;
    DMatrix::from_fn(l, l, |i, j| {
        let s: f64 = (0..horizon).map(|h| (cross[(h * l + i) * l + j] / nd).powi(2)).sum();
        let vu = var_u[j] / (nd * horizon as f64);
        s / vu / (var_e[i] / nd)
    })
}
