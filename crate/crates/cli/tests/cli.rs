use std::path::Path;
use std::process::{Command, Output};

fn qfavar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfavar"))
        .args(args)
        .env_remove("QFAVAR_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = qfavar(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path) -> std::path::PathBuf {
    let sim = dir.join("sim");
    ok(&["simulate", "--m", "2", "--n", "3", "--k", "1", "--periods", "70", "--seed", "5", "-o", s(&sim)]);
    sim.join("panel.csv")
}

#[test]
fn full_workflow_writes_outputs_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulate(dir.path());
    assert!(dir.path().join("sim/truth.json").exists());

    let est = dir.path().join("est");
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"p": 1, "quantiles": [0.1, 0.5, 0.9], "mcmc": {"iterations": 60, "burn_in": 20, "thin": 2}}"#).unwrap();
    ok(&["estimate", "--method", "mcmc", "--config", s(&cfg), s(&panel), "-o", s(&est)]);
    let post = est.join("posterior.bin");
    assert!(post.exists() && est.join("posterior.json").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(est.join("manifest-estimate.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "estimate");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert!(manifest["outputs"][0]["sha256"].as_str().unwrap().len() == 64);

    ok(&["forecast", s(&post), "--horizon", "4", "--density", "1,4"]);
    let fc = std::fs::read_to_string(est.join("forecast.csv")).unwrap();
    assert!(fc.lines().count() > 4 * 6);
    assert!(est.join("density_h4.csv").exists());

    let irf = ok(&["irf", "--shock", "GLOBAL.G1", "--horizon", "12", s(&post)]);
    assert!(irf.contains("shock G1"));
    assert!(est.join("irf_G1.csv").exists());
    ok(&["irf", "--shock", "0", "--horizon", "5", s(&post)]);

    ok(&["fevd", "--horizon", "8", s(&post)]);
    assert!(est.join("fevd_h8.csv").exists());

    ok(&["connect", "--threshold", "0.05", "--horizon", "8", s(&post)]);
    let dot = std::fs::read_to_string(est.join("network.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    let edges = std::fs::read_to_string(est.join("edges.csv")).unwrap();
    assert!(edges.lines().next().unwrap().contains("weight"));

    let fav = dir.path().join("favar");
    ok(&["estimate", "--method", "vb", "--variant", "favar", "--lags", "1", s(&panel), "-o", s(&fav)]);
    let qv = dir.path().join("qvb");
    ok(&["estimate", "--method", "vb", "--lags", "1", s(&panel), "-o", s(&qv)]);
    let poos = dir.path().join("poos");
    ok(&[
        "poos", s(&panel), "--lags", "1", "--levels", "0.1,0.9", "--horizons", "1", "--first-window", "50", "--step", "1",
        "-o", s(&poos),
    ]);
    assert!(poos.join("scores.csv").exists());
    assert!(std::fs::read_dir(poos.join("checkpoints")).unwrap().count() > 0);

    let ev = dir.path().join("eval");
    let report = ok(&[
        "evaluate",
        "--scores",
        s(&poos.join("scores.csv")),
        "--horizons",
        "1",
        "--panel",
        s(&panel),
        "--mean-posterior",
        s(&fav.join("posterior.bin")),
        "--quantile-posterior",
        s(&qv.join("posterior.bin")),
        "-o",
        s(&ev),
    ]);
    assert!(report.contains("QFAVAR vs FAVAR"));
    assert!(report.contains("F+F10+F90"));
    let t = std::fs::read_to_string(ev.join("tstats.csv")).unwrap();
    assert!(t.lines().next().unwrap().ends_with("t10_h1,t90_h1"));
    assert_eq!(t.lines().count(), 7);
    assert!(ev.join("commonality.csv").exists() && ev.join("manifest-evaluate.json").exists());
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulate(dir.path());
    let mut digests = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out = dir.path().join(name);
        ok(&[
            "--threads", threads, "estimate", "--method", "mcmc", "--iterations", "80", "--burn-in", "20", "--lags", "1",
            s(&panel), "-o", s(&out),
        ]);
        ok(&["--threads", threads, "forecast", "--simulate-shocks", "--horizon", "3", s(&out.join("posterior.bin"))]);
        let post = std::fs::read(out.join("posterior.bin")).unwrap();
        let fc = std::fs::read(out.join("forecast.csv")).unwrap();
        digests.push((post, fc));
    }
    assert!(digests[0] == digests[1], "repeated single-thread runs differ");
    assert!(digests[0] == digests[2], "single- and multi-thread runs differ");
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(qfavar(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(qfavar(&["estimate", "--method", "bogus", "x.csv", "-o", "y"]).status.code(), Some(2));
    assert_eq!(qfavar(&["estimate"]).status.code(), Some(2));
    assert_eq!(qfavar(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = qfavar(&["estimate", s(&missing), "-o", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let panel = simulate(dir.path());
    let out = qfavar(&["estimate", "--quantiles", "0.5,1.5", s(&panel), "-o", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));

    let est = dir.path().join("est");
    ok(&["estimate", "--method", "vb", "--lags", "1", s(&panel), "-o", s(&est)]);
    let out = qfavar(&["irf", "--shock", "NOPE", s(&est.join("posterior.bin"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown shock"));
}
