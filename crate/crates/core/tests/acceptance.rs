//! Acceptance criteria with pinned tolerances. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 1 6 8`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qfavar::config::{Method, ModelConfig, Variant};
use qfavar::distributions::{al_density, gig_moments, ALParams};
use qfavar::evaluate::{commonality_table, dm_tstat, quantile_score, tstat_table, ScoreSeries};
use qfavar::forecast::{forecast_quantiles, forecast_states, recursive_poos, ForecastSettings, PoosSettings};
use qfavar::gibbs::{effective_sample_size, run_gibbs, GibbsState, Sampler};
use qfavar::linalg::{correlation, mean, variance};
use qfavar::model::{Layout, ModelData};
use qfavar::panel::PanelData;
use qfavar::posterior::{block, PosteriorDraws};
use qfavar::rng::{stream, tag};
use qfavar::simulate::{simulate_qfavar, GroundTruth, SimDims, SimSettings};
use qfavar::structural::{connectedness, gfevd, gfevd_single, girf, girf_single, variable_fevd_single, DrawSelection};
use qfavar::vb::run_vb;
use qfavar::Execution;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 10] = [
        (1, "distribution oracle", Duration::from_secs(10), distribution_oracle),
        (2, "state-space oracle", Duration::from_secs(60), statespace_oracle),
        (3, "getting it right", Duration::from_secs(600), getting_it_right),
        (4, "synthetic recovery (MCMC)", Duration::from_secs(600), synthetic_recovery),
        (5, "VB/MCMC agreement", Duration::from_secs(120), vb_mcmc_agreement),
        (6, "structural analytics", Duration::from_secs(60), structural_analytics),
        (7, "forecast-comparison direction", Duration::from_secs(600), forecast_direction),
        (8, "score identities", Duration::from_secs(10), score_identities),
        (9, "reproducibility", Duration::from_secs(300), reproducibility),
        (10, "report format (values not gated)", Duration::from_secs(120), report_format),
    ];
    let mut failed = 0;
    for (n, name, budget, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let el = t0.elapsed();
        let over = if el > budget { format!(", over the {}s budget", budget.as_secs()) } else { String::new() };
        println!(
            "criterion {n:>2} {name}: {} ({}; {:.1}s{over})",
            if res.pass { "PASS" } else { "FAIL" },
            res.detail,
            el.as_secs_f64()
        );
        if !res.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn distribution_oracle() -> Outcome {
    let mut worst_density = 0.0f64;
    for qi in 1..=19 {
        let q = qi as f64 * 0.05;
        let params = ALParams::new(q, 1.0).unwrap();
        for k in 0..=200 {
            let u = -10.0 + 0.1 * k as f64;
            let exact = al_density(u, &params).unwrap();
            worst_density = worst_density.max((exact - common::mixture_density(u, q, 1.0)).abs());
        }
    }
    let mut worst_gig = 0.0f64;
    for delta in [0.5, 2.0, 10.0] {
        for rho in [0.1, 1.0, 5.0] {
            let (ez, einv) = gig_moments(delta, rho).unwrap();
            let (qz, qinv) = common::gig_quadrature_moments(delta, rho);
            worst_gig = worst_gig.max(((ez - qz) / qz).abs()).max(((einv - qinv) / qinv).abs());
        }
    }
    outcome(
        worst_density <= 1e-6 && worst_gig <= 1e-8,
        format!("density sup error {worst_density:.2e} (tol 1e-6), GIG moment rel error {worst_gig:.2e} (tol 1e-8)"),
    )
}

fn statespace_oracle() -> Outcome {
    let mut worst_filter = 0.0f64;
    let systems = [
        (1, 1, 2, 5, 0, 1),
        (2, 1, 3, 5, 0, 2),
        (3, 2, 3, 6, 0, 3),
        (3, 1, 4, 6, 0, 4),
        (1, 3, 1, 6, 0, 5),
        (3, 2, 4, 6, 1, 11),
        (3, 1, 5, 5, 2, 12),
    ];
    for (l, p, nobs, t, exact, seed) in systems {
        let (sys, y) = common::random_system(l, p, nobs, t, exact, seed);
        worst_filter = worst_filter.max(common::filter_discrepancy(&sys, &y));
    }
    let mut worst_z = 0.0f64;
    let mut worst_cov = 0.0f64;
    for (l, p, nobs, t, exact, seed) in [(1, 1, 1, 4, 0, 31), (2, 2, 3, 5, 1, 32), (3, 1, 2, 6, 0, 33)] {
        let (sys, y) = common::random_system(l, p, nobs, t, exact, seed);
        let (z, c) = common::smoother_discrepancy(&sys, &y, 100_000, 99);
        worst_z = worst_z.max(z);
        worst_cov = worst_cov.max(c);
    }
    outcome(
        worst_filter <= 1e-8 && worst_z <= 3.0 && worst_cov <= 0.05,
        format!(
            "filter error {worst_filter:.1e} (tol 1e-8), smoother mean error {worst_z:.2} MC SE (tol 3), covariance error {worst_cov:.3} (tol 0.05)"
        ),
    )
}

/// Quantities compared between the two simulators: measurement scales,
/// the free loading, the VAR lag coefficients and the state variances.
fn geweke_record(st: &GibbsState, loading_at: usize) -> Vec<f64> {
    let mut v: Vec<f64> = st.meas.iter().map(|m| m.scale).collect();
    v.push(st.meas[1].coefs[loading_at]);
    for row in &st.var.rows {
        v.extend(row.lags.iter().copied());
    }
    for r in 0..st.var.l() {
        v.push(st.var.log_vol[(0, r)].exp());
    }
    v
}

fn geweke_setup() -> (PanelData, ModelConfig) {
    let dims = SimDims { m: 1, n: 2, k: 1, t_len: 30, p: 1 };
    let (panel, _) = simulate_qfavar(dims, &SimSettings::default(), 0, &mut stream(0, &[tag::SIMULATE])).unwrap();
    let mut cfg = ModelConfig::default();
    cfg.quantiles = vec![0.25];
    cfg.p = 1;
    cfg.sv = false;
    cfg.priors.r0 = 4.0;
    cfg.priors.s0 = 3.0;
    cfg.priors.r_h = 4.0;
    cfg.priors.s_h = 3.0;
    cfg.priors.fixed_coef_var = Some(0.04);
    cfg.priors.intercept_var = 1.0;
    cfg.priors.sigma_a = 0.25;
    cfg.priors.init_state_var = 1.0;
    (panel, cfg)
}

fn getting_it_right() -> Outcome {
    const SWEEPS: usize = 50_000;
    let (panel, cfg) = geweke_setup();
    let layout = Layout::new(&panel, &cfg).unwrap();
    let data0 = ModelData::new(&panel, &layout);
    let base = Sampler::new(&layout, &data0, &cfg.priors, false, Execution::Serial, 7).unwrap();
    let loading_at = base.spec(1).loading_index().unwrap();

    let marginal: Vec<Vec<f64>> = (0..SWEEPS)
        .map(|i| {
            let st = base.prior_draw(&mut stream(1, &[i as u64])).unwrap();
            geweke_record(&st, loading_at)
        })
        .collect();

    let mut rng = stream(2, &[0]);
    let mut st = base.prior_draw(&mut rng).unwrap();
    let mut data = base.simulate_data(&mut st, &mut rng).unwrap();
    let mut successive = Vec::with_capacity(SWEEPS);
    for it in 0..SWEEPS {
        let next = {
            let s = Sampler::new(&layout, &data, &cfg.priors, false, Execution::Serial, 7).unwrap();
            s.sweep(&mut st, it as u64).unwrap();
            successive.push(geweke_record(&st, loading_at));
            s.simulate_data(&mut st, &mut rng).unwrap()
        };
        data = next;
    }

    let nq = marginal[0].len();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for k in 0..nq {
        let a: Vec<f64> = marginal.iter().map(|v| v[k]).collect();
        let b: Vec<f64> = successive.iter().map(|v| v[k]).collect();
        let se_a = (variance(&a) / a.len() as f64).sqrt();
        let se_b = (variance(&b) / effective_sample_size(&b)).sqrt();
        let z = (mean(&a) - mean(&b)).abs() / (se_a * se_a + se_b * se_b).sqrt();
        worst = worst.max(z);
        parts.push(format!("{z:.2}"));
    }
    outcome(
        worst <= 3.0,
        format!("{nq} marginal means, max gap {worst:.2} MC SE (tol 3) [{}]", parts.join(" ")),
    )
}

struct RecoveryRun {
    truth: GroundTruth,
    mcmc: PosteriorDraws,
    vb: PosteriorDraws,
    vb_secs: f64,
}

const RECOVERY_ITERS: usize = 20_000;

fn recovery_runs() -> &'static [RecoveryRun] {
    static RUNS: OnceLock<Vec<RecoveryRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..5u64)
            .map(|seed| {
                let dims = SimDims { m: 2, n: 5, k: 2, t_len: 300, p: 1 };
                let (panel, truth) =
                    simulate_qfavar(dims, &SimSettings::default(), seed, &mut stream(seed, &[tag::SIMULATE])).unwrap();
                let mut cfg = ModelConfig::default();
                cfg.p = 1;
                cfg.mcmc.iterations = RECOVERY_ITERS;
                cfg.mcmc.burn_in = RECOVERY_ITERS / 4;
                cfg.mcmc.thin = 10;
                cfg.mcmc.seed = seed;
                cfg.vb.seed = seed;
                let mcmc = run_gibbs(&panel, &cfg).unwrap();
                let t0 = Instant::now();
                let vb = run_vb(&panel, &cfg).unwrap();
                let vb_secs = t0.elapsed().as_secs_f64();
                RecoveryRun { truth, mcmc, vb, vb_secs }
            })
            .collect()
    })
}

/// Free (non-reference) loading equations with their series index.
fn free_loadings(post: &PosteriorDraws) -> Vec<(usize, usize)> {
    let lay = post.layout();
    (0..lay.n_eq())
        .filter(|&e| lay.eq_spec(e).loading)
        .map(|e| (e, lay.eq_series(e)))
        .collect()
}

fn synthetic_recovery() -> Outcome {
    let runs = recovery_runs();
    let nf = runs[0].mcmc.layout().n_factors();
    let mut corr_sum = vec![0.0; nf];
    let mut coverage = Vec::new();
    for run in runs {
        let post = &run.mcmc;
        let lay = post.layout();
        let l = lay.state_dim();
        let f = post.block_mean(block::FACTORS).unwrap();
        let ft = run.truth.factor_matrix();
        for c in 0..nf {
            let a: Vec<f64> = (0..lay.t_len).map(|t| f[t * l + c]).collect();
            let b: Vec<f64> = ft.column(c).iter().copied().collect();
            corr_sum[c] += correlation(&a, &b);
        }
        let lv = post.get(block::LOADINGS).unwrap();
        let n_eq = lay.n_eq();
        let free = free_loadings(post);
        let within = free
            .iter()
            .filter(|&&(e, s)| {
                let vals: Vec<f64> = (0..post.n_draws()).map(|d| lv.data[d * n_eq + e]).collect();
                (mean(&vals) - run.truth.loadings[s]).abs() <= 3.0 * variance(&vals).sqrt()
            })
            .count();
        coverage.push(within as f64 / free.len() as f64);
    }
    let corr: Vec<f64> = corr_sum.iter().map(|c| c / runs.len() as f64).collect();
    let min_corr = corr.iter().cloned().fold(f64::INFINITY, f64::min);
    let cover = mean(&coverage);
    outcome(
        min_corr > 0.95 && cover >= 0.9,
        format!(
            "{RECOVERY_ITERS} sweeps x 5 seeds: min mean factor corr {min_corr:.3} (> 0.95), loadings within 3 SD {:.1}% (>= 90%)",
            100.0 * cover
        ),
    )
}

fn vb_mcmc_agreement() -> Outcome {
    let runs = recovery_runs();
    let mut corrs = Vec::new();
    let mut slowest = 0.0f64;
    for run in runs {
        let free = free_loadings(&run.mcmc);
        let m = run.mcmc.block_mean(block::LOADINGS).unwrap();
        let v = run.vb.block_mean(block::LOADINGS).unwrap();
        let a: Vec<f64> = free.iter().map(|&(e, _)| m[e]).collect();
        let b: Vec<f64> = free.iter().map(|&(e, _)| v[e]).collect();
        corrs.push(correlation(&a, &b));
        slowest = slowest.max(run.vb_secs);
    }
    let min = corrs.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        min > 0.9 && slowest < 120.0,
        format!("loading-mean corr per seed min {min:.3} (> 0.9), slowest VB fit {slowest:.1}s (< 120s)"),
    )
}

fn structural_analytics() -> Outcome {
    let phi = vec![DMatrix::from_element(1, 1, 0.5)];
    let omega = DMatrix::from_element(1, 1, 4.0);
    let r = girf_single(&phi, &omega, 0, 40).unwrap();
    let girf_exact = (0..=40).all(|h| r[(h, 0)] == 2.0 * 0.5f64.powi(h as i32));

    let phi2 = vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.4])];
    let mut worst_fevd = 0.0f64;
    for (omega, seed) in [
        (DMatrix::identity(2, 2), 1),
        (DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]), 2),
    ] {
        let (raw, _) = gfevd_single(&phi2, &omega, 2).unwrap();
        let mc = common::fevd_monte_carlo(&phi2, &omega, 2, 16_000_000, seed);
        worst_fevd = worst_fevd.max((raw - mc).abs().max());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut structure_ok = true;
    for _ in 0..20 {
        let l = 3;
        let coeffs = vec![DMatrix::from_fn(l, l, |_, _| rng.random_range(-0.3..0.3))];
        let a = DMatrix::from_fn(l, l, |_, _| rng.random_range(-1.0..1.0));
        let omega = &a * a.transpose() + DMatrix::identity(l, l) * 0.2;
        let w = DMatrix::from_fn(4, l, |_, _| rng.random_range(-1.0..1.0));
        let (_, state) = gfevd_single(&coeffs, &omega, 6).unwrap();
        let (_, var) = variable_fevd_single(&coeffs, &omega, &w, 6).unwrap();
        let labels: Vec<String> = (0..4 + l).map(|i| format!("n{i}")).collect();
        let mut prev: Option<Vec<(usize, usize)>> = None;
        for th in [0.0, 0.02, 0.05, 0.1, 0.2, 0.4, 0.8] {
            let c = connectedness(&var, &state, &labels, th).unwrap();
            structure_ok &= c.matrix.columns(0, 4).iter().all(|v| *v == 0.0);
            let edges: Vec<(usize, usize)> = c.edges.iter().map(|e| (e.from, e.to)).collect();
            if let Some(p) = &prev {
                structure_ok &= edges.iter().all(|e| p.contains(e));
            }
            prev = Some(edges);
        }
    }
    outcome(
        girf_exact && worst_fevd <= 1e-3 && structure_ok,
        format!(
            "scalar GIRF exact: {girf_exact}, FEVD vs Monte Carlo {worst_fevd:.1e} (tol 1e-3), zero block and threshold monotonicity: {structure_ok}"
        ),
    )
}

/// Skewed DGP for the forecast comparison: idiosyncratic AL noise with
/// q = 0.2 dominates the factor innovations.
fn forecast_dgp() -> SimSettings {
    SimSettings {
        state_sd: 0.3,
        noise_scale: 1.0,
        noise_q: 0.2,
        vol_feedback: 0.0,
        ..SimSettings::default()
    }
}

fn forecast_direction() -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let dims = SimDims { m: 1, n: 6, k: 1, t_len: 160, p: 1 };
        let (panel, _) = simulate_qfavar(dims, &forecast_dgp(), seed, &mut stream(seed, &[tag::SIMULATE])).unwrap();
        let mut cfg = ModelConfig::default();
        cfg.p = 1;
        cfg.vb.seed = seed;
        let mut s = PoosSettings::new(vec![Variant::Qfavar, Variant::Favar], &cfg);
        s.horizons = vec![1];
        s.levels = vec![0.1, 0.9];
        s.first_window = Some(100);
        s.step = 2;
        s.method = Method::Vb;
        let res = recursive_poos(&panel, &cfg, &s).unwrap();
        let loss = |model: &str| {
            let v: Vec<f64> = res.scores.iter().filter(|x| x.model == model).map(|x| x.mean()).collect();
            mean(&v)
        };
        let (q, f) = (loss("QFAVAR"), loss("FAVAR"));
        if q < f {
            wins += 1;
        }
        parts.push(format!("{q:.3}/{f:.3}"));
    }
    outcome(
        wins >= 4,
        format!("QFAVAR lower in {wins}/5 seeds (>= 4); mean tick loss QFAVAR/FAVAR [{}]", parts.join(" ")),
    )
}

fn score_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // Dyadic triples make every operation exact, so the identity must hold
    // bit for bit; general reals are allowed a few ulps of |y − Q|.
    let mut mismatches = 0;
    let mut worst_ulps = 0.0f64;
    for _ in 0..10_000 {
        let y = rng.random_range(-8192i32..8192) as f64 / 1024.0;
        let qv = rng.random_range(-8192i32..8192) as f64 / 1024.0;
        let q = rng.random_range(1u32..256) as f64 / 256.0;
        if quantile_score(y, qv, q) + quantile_score(y, qv, 1.0 - q) != (y - qv).abs() {
            mismatches += 1;
        }
        let y: f64 = rng.random_range(-5.0..5.0);
        let qv: f64 = rng.random_range(-5.0..5.0);
        let q: f64 = rng.random_range(0.01..0.99);
        let d = (y - qv).abs();
        let gap = (quantile_score(y, qv, q) + quantile_score(y, qv, 1.0 - q) - d).abs();
        worst_ulps = worst_ulps.max(gap / (d * f64::EPSILON));
    }
    let mut antisym = true;
    for h in [1, 3, 6, 12] {
        let a: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..2.0)).collect();
        let b: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..2.0)).collect();
        antisym &= dm_tstat(&a, &b, h).unwrap() == -dm_tstat(&b, &a, h).unwrap();
    }
    outcome(
        mismatches == 0 && worst_ulps <= 4.0 && antisym,
        format!(
            "dyadic score identity mismatches {mismatches}/10000, general reals within {worst_ulps:.1} ulp (tol 4), DM antisymmetry exact: {antisym}"
        ),
    )
}

fn small_panel() -> PanelData {
    let dims = SimDims { m: 2, n: 3, k: 1, t_len: 80, p: 1 };
    simulate_qfavar(dims, &SimSettings::default(), 3, &mut stream(3, &[tag::SIMULATE])).unwrap().0
}

fn max_gap(a: &PosteriorDraws, b: &PosteriorDraws) -> f64 {
    a.blocks
        .iter()
        .map(|(name, x)| {
            let y = b.get(name).unwrap();
            x.data.iter().zip(&y.data).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn reproducibility() -> Outcome {
    qfavar::exec::set_threads(4);
    let panel = small_panel();
    let mut cfg = ModelConfig::default();
    cfg.p = 1;
    cfg.method = Method::Mcmc;
    cfg.mcmc.iterations = 400;
    cfg.mcmc.burn_in = 100;
    cfg.mcmc.thin = 3;
    cfg.parallel = false;
    let a = qfavar::estimate(&panel, &cfg).unwrap();
    let b = qfavar::estimate(&panel, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    a.save(&pa).unwrap();
    b.save(&pb).unwrap();
    let serial_identical = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();
    cfg.parallel = true;
    let c = qfavar::estimate(&panel, &cfg).unwrap();
    let mut gap = max_gap(&a, &c);

    let fs = ForecastSettings { simulate_shocks: true, ..ForecastSettings::from_config(&cfg) };
    let sel = DrawSelection { omega_source: cfg.omega_source, filter_explosive: false };
    for (post, other) in [(&a, &c)] {
        let run = |p: &PosteriorDraws, exec: Execution| {
            let st = forecast_states(p, &fs, exec).unwrap();
            let fan = forecast_quantiles(p, &st, None, exec).unwrap();
            let irf = girf(p, 0, 12, sel, exec).unwrap();
            let fevd = gfevd(p, 12, sel, exec).unwrap();
            let mut v = fan.values.clone();
            v.extend(irf.variables.median.iter());
            v.extend(fevd.variable.iter());
            v
        };
        let x = run(post, Execution::Serial);
        let y = run(other, Execution::Parallel);
        gap = gap.max(x.iter().zip(&y).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max));
    }

    let mut pcfg = ModelConfig::default();
    pcfg.p = 1;
    let poos = |exec: Execution| {
        let mut s = PoosSettings::new(vec![Variant::Qfavar, Variant::Favar], &pcfg);
        s.horizons = vec![1, 2];
        s.levels = vec![0.1, 0.9];
        s.first_window = Some(70);
        s.step = 3;
        s.exec = exec;
        let r = recursive_poos(&panel, &pcfg, &s).unwrap();
        r.scores.iter().flat_map(|x| x.losses.clone()).collect::<Vec<f64>>()
    };
    let (ps, pp) = (poos(Execution::Serial), poos(Execution::Parallel));
    gap = gap.max(ps.iter().zip(&pp).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max));
    outcome(
        serial_identical && gap <= 1e-12,
        format!("serial reruns byte-identical: {serial_identical}, serial vs 4 threads max gap {gap:.1e} (tol 1e-12)"),
    )
}

fn report_format() -> Outcome {
    // Table-1 style labels on a synthetic panel; values are not meaningful.
    let dims = SimDims { m: 2, n: 4, k: 1, t_len: 120, p: 1 };
    let (mut panel, _) = simulate_qfavar(dims, &SimSettings::default(), 11, &mut stream(11, &[tag::SIMULATE])).unwrap();
    panel.indicator_labels = vec!["HICP".into(), "IP".into()];
    panel.country_labels = vec!["AT".into(), "DE".into(), "FR".into(), "IT".into()];
    panel.global_labels = vec!["GEPU".into()];
    let mut cfg = ModelConfig::default();
    cfg.p = 1;
    cfg.variant = Variant::Favar;
    let favar = run_vb(&panel, &cfg).unwrap();
    cfg.variant = Variant::Qfavar;
    let qfavar = run_vb(&panel, &cfg).unwrap();
    let (ml, ql) = (favar.layout().clone(), qfavar.layout().clone());
    let fm = favar.block_mean(block::FACTORS).unwrap();
    let fq = qfavar.block_mean(block::FACTORS).unwrap();
    let t = panel.t_len();
    let mean_f = DMatrix::from_fn(t, 2, |r, i| fm[r * ml.state_dim() + ml.factor(i, 0)]);
    let qfs: Vec<DMatrix<f64>> = (0..ql.r())
        .map(|q| DMatrix::from_fn(t, 2, |r, i| fq[r * ql.state_dim() + ql.factor(i, q)]))
        .collect();
    let mut labels = Vec::new();
    let mut series = Vec::new();
    let mut ind = Vec::new();
    for i in 0..2 {
        for j in 0..4 {
            labels.push(panel.series_label(i, j));
            series.push(panel.series(i, j));
            ind.push(i);
        }
    }
    let com = commonality_table(&labels, &series, &ind, &mean_f, &qfs, &ql.quantiles).unwrap();
    let com_ok = com.columns == ["F", "F+F10+F90", "F+F10+F50+F90"]
        && com.values.shape() == (8, 3)
        && com.values.iter().all(|v| (0.0..=1.0).contains(v))
        && com.variables[0] == "HICP.AT";

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let horizons = [1, 6, 12, 24];
    let mut scores = Vec::new();
    for model in ["QFAVAR", "FAVAR"] {
        for v in &labels {
            for q in [0.1, 0.9] {
                for h in horizons {
                    let targets: Vec<String> = (0..40).map(|k| format!("2015-{:02}", k % 12 + 1) + &format!("#{k}")).collect();
                    let losses = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
                    scores.push(ScoreSeries { model: model.into(), variable: v.clone(), quantile: q, horizon: h, targets, losses });
                }
            }
        }
    }
    let tt = tstat_table(&scores, "QFAVAR", "FAVAR", &[0.1, 0.9], &horizons).unwrap();
    let md = tt.to_markdown();
    let mut csv = Vec::new();
    tt.write_csv(&mut csv).unwrap();
    let header = String::from_utf8(csv).unwrap().lines().next().unwrap_or_default().to_string();
    let t_ok = tt.values.shape() == (8, 8)
        && tt.values.iter().all(|v| v.is_finite())
        && header.ends_with("t10_h1,t10_h6,t10_h12,t10_h24,t90_h1,t90_h6,t90_h12,t90_h24")
        && md.lines().count() >= 10;
    outcome(
        com_ok && t_ok,
        format!("t-statistic table 8x8 and commonality table 8x3 well formed: {}", com_ok && t_ok),
    )
}
