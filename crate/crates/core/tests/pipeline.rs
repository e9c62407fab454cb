use nalgebra::DMatrix;
use qfavar::config::{parse_config, Method, ModelConfig, Variant};
use qfavar::evaluate::{read_scores_csv, write_scores_csv};
use qfavar::forecast::{forecast_quantiles, forecast_states, recursive_poos, ForecastSettings, PoosSettings};
use qfavar::panel::{read_panel, transform_series, PanelData, PanelSchema, Transform, TransformSpec};
use qfavar::posterior::{block, PosteriorDraws};
use qfavar::rng::{stream, tag};
use qfavar::simulate::{simulate_qfavar, SimDims, SimSettings};
use qfavar::structural::{gfevd, girf, DrawSelection};
use qfavar::Execution;

fn panel(m: usize, n: usize, k: usize, t_len: usize, seed: u64) -> PanelData {
    let dims = SimDims { m, n, k, t_len, p: 1 };
    simulate_qfavar(dims, &SimSettings::default(), seed, &mut stream(seed, &[tag::SIMULATE])).unwrap().0
}

fn short_mcmc(variant: Variant) -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.variant = variant;
    cfg.p = 1;
    cfg.method = Method::Mcmc;
    cfg.mcmc.iterations = 120;
    cfg.mcmc.burn_in = 40;
    cfg.mcmc.thin = 2;
    cfg
}

#[test]
fn every_variant_estimates_with_both_methods() {
    let data = panel(2, 3, 1, 70, 1);
    for variant in [Variant::Qfavar, Variant::Qdfm, Variant::Favar, Variant::Qar, Variant::QarX] {
        let input = if variant.is_univariate() { data.select_series(1, 2, variant.uses_globals()) } else { data.clone() };
        for method in [Method::Vb, Method::Mcmc] {
            let mut cfg = short_mcmc(variant);
            cfg.method = method;
            let post = qfavar::estimate(&input, &cfg).unwrap_or_else(|e| panic!("{} {method:?}: {e}", variant.name()));
            let lay = post.layout();
            let expect_draws = if method == Method::Vb { 1 } else { cfg.mcmc.stored_draws() };
            assert_eq!(post.n_draws(), expect_draws);
            assert_eq!(lay.k, if variant.uses_globals() { 1 } else { 0 });
            for arr in post.blocks.values() {
                assert!(arr.data.iter().all(|v| v.is_finite()), "{} {method:?}", variant.name());
            }
        }
    }
}

#[test]
fn posterior_round_trips_through_disk() {
    let data = panel(1, 3, 1, 60, 2);
    let post = qfavar::estimate(&data, &short_mcmc(Variant::Qfavar)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("posterior.bin");
    post.save(&path).unwrap();
    assert!(PosteriorDraws::sidecar_path(&path).exists());
    let back = PosteriorDraws::load(&path).unwrap();
    assert_eq!(back, post);
    std::fs::write(&path, b"not a posterior").unwrap();
    assert!(PosteriorDraws::load(&path).is_err());
}

#[test]
fn panel_csv_round_trips_and_transforms_trim_the_sample() {
    let data = panel(2, 2, 1, 40, 3);
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let back = read_panel(buf.as_slice(), &PanelSchema::default()).unwrap();
    assert_eq!(back.values, data.values);
    assert_eq!(back.globals, data.globals);
    assert_eq!(back.time_index, data.time_index);

    let mut positive = data.clone();
    positive.values = data.values.map(|v| v.exp());
    let mut spec = TransformSpec::level();
    spec.series.insert("X1".into(), Transform::MomLogGrowth);
    let t = transform_series(&positive, &spec).unwrap();
    assert_eq!(t.t_len(), 39);
    let expect = 100.0 * (data.values[(5, 0)] - data.values[(4, 0)]);
    assert!((t.values[(4, 0)] - expect).abs() < 1e-9);
    assert_eq!(t.values[(4, 2)], positive.values[(5, 2)]);
}

#[test]
fn forecasts_are_ordered_and_structural_outputs_are_consistent() {
    let data = panel(2, 3, 1, 80, 4);
    let post = qfavar::estimate(&data, &short_mcmc(Variant::Qfavar)).unwrap();
    let fs = ForecastSettings { horizon: 6, ..ForecastSettings::from_config(&post.meta.config) };
    let states = forecast_states(&post, &fs, Execution::Serial).unwrap();
    let fan = forecast_quantiles(&post, &states, None, Execution::Serial).unwrap();
    assert_eq!(fan.levels, vec![0.1, 0.5, 0.9]);
    assert_eq!(fan.series_labels.len(), 6);
    for h in 1..=6 {
        for s in 0..6 {
            assert!(fan.quantiles_at(h, s).iter().all(|v| v.is_finite()));
        }
    }
    assert!(fan.density(1, 0).is_ok());

    let sel = DrawSelection { omega_source: post.meta.config.omega_source, filter_explosive: false };
    let l = post.layout().state_dim();
    let irf = girf(&post, l - 1, 10, sel, Execution::Serial).unwrap();
    assert_eq!(irf.states.median.shape(), (11, l));
    assert!(irf.states.lower.iter().zip(irf.states.upper.iter()).all(|(a, b)| a <= b));
    let fevd = gfevd(&post, 8, sel, Execution::Serial).unwrap();
    for i in 0..l {
        assert!((fevd.state.row(i).sum() - 1.0).abs() < 1e-9);
    }
    assert_eq!(fevd.connectedness_labels().len(), post.layout().n_eq() + l);
    assert!(girf(&post, l, 10, sel, Execution::Serial).is_err());
}

#[test]
fn favar_forecast_accepts_any_level() {
    let data = panel(1, 3, 1, 60, 5);
    let mut cfg = short_mcmc(Variant::Favar);
    cfg.method = Method::Vb;
    let post = qfavar::estimate(&data, &cfg).unwrap();
    let fs = ForecastSettings { horizon: 3, ..ForecastSettings::from_config(&cfg) };
    let states = forecast_states(&post, &fs, Execution::Serial).unwrap();
    let fan = forecast_quantiles(&post, &states, Some(&[0.05, 0.5, 0.95]), Execution::Serial).unwrap();
    assert!(fan.gaussian);
    for s in 0..3 {
        let q = fan.quantiles_at(2, s);
        assert!(q[0] < q[1] && q[1] < q[2]);
    }
    let qpost = qfavar::estimate(&data, &{
        let mut c = cfg.clone();
        c.variant = Variant::Qfavar;
        c
    })
    .unwrap();
    let qs = forecast_states(&qpost, &fs, Execution::Serial).unwrap();
    assert!(forecast_quantiles(&qpost, &qs, Some(&[0.05]), Execution::Serial).is_err());
}

#[test]
fn poos_resumes_from_checkpoints_with_identical_scores() {
    let data = panel(1, 3, 1, 60, 6);
    let mut cfg = ModelConfig::default();
    cfg.p = 1;
    let dir = tempfile::tempdir().unwrap();
    let mut s = PoosSettings::new(vec![Variant::Qfavar, Variant::Favar, Variant::Qar], &cfg);
    s.horizons = vec![1, 3];
    s.levels = vec![0.1, 0.9];
    s.first_window = Some(40);
    s.step = 3;
    s.checkpoint_dir = Some(dir.path().to_path_buf());
    let first = recursive_poos(&data, &cfg, &s).unwrap();
    assert_eq!(first.resumed, 0);
    assert_eq!(first.origins, vec![40, 43, 46, 49, 52, 55, 58]);
    let second = recursive_poos(&data, &cfg, &s).unwrap();
    assert_eq!(second.resumed, first.forecasts.len());
    assert_eq!(second.scores, first.scores);

    // Horizon-3 forecasts from the last origin run past the sample and are
    // not scored.
    let h3 = first.scores.iter().find(|x| x.horizon == 3).unwrap();
    assert_eq!(h3.losses.len(), 6);

    let mut buf = Vec::new();
    write_scores_csv(&first.scores, &mut buf).unwrap();
    assert_eq!(read_scores_csv(buf.as_slice()).unwrap(), first.scores);

    // A different configuration must not reuse the checkpoints.
    let mut other = cfg.clone();
    other.priors.s0 = 0.5;
    assert_eq!(recursive_poos(&data, &other, &s).unwrap().resumed, 0);
}

#[test]
fn config_parsing_and_hashing() {
    let cfg = parse_config(r#"{"quantiles": [0.25, 0.75], "p": 2, "variant": "QAR-X", "method": "mcmc"}"#).unwrap();
    assert_eq!(cfg.quantiles, vec![0.25, 0.75]);
    assert_eq!(cfg.variant, Variant::QarX);
    assert_eq!(cfg.method, Method::Mcmc);
    let mut serial = cfg.clone();
    serial.parallel = false;
    assert_eq!(serial.hash(), cfg.hash());
    let mut changed = cfg.clone();
    changed.p = 3;
    assert_ne!(changed.hash(), cfg.hash());
    assert!(parse_config(r#"{"quantiles": [0.5, 1.2]}"#).is_err());
    assert!(parse_config(r#"{"p": 0}"#).is_err());
    assert!(parse_config(r#"{"unknown_field": 1}"#).is_err());
}

#[test]
fn factors_follow_the_reference_series() {
    // With the reference series loading fixed at one and no intercept, the
    // median factor tracks the reference series closely.
    let data = panel(1, 4, 1, 120, 7);
    let mut cfg = ModelConfig::default();
    cfg.p = 1;
    let post = qfavar::estimate(&data, &cfg).unwrap();
    let lay = post.layout();
    let f = post.block_mean(block::FACTORS).unwrap();
    let fm = DMatrix::from_row_slice(lay.t_len, lay.state_dim(), &f);
    let median: Vec<f64> = fm.column(lay.factor(0, 1)).iter().copied().collect();
    let reference = data.series(0, 0);
    assert!(qfavar::linalg::correlation(&median, &reference) > 0.8);
}
