use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use qfavar::config::{load_config, Method, ModelConfig, Variant};
use qfavar::evaluate::{commonality_table, read_scores_csv, tstat_table, write_scores_csv};
use qfavar::forecast::{forecast_quantiles, forecast_states, recursive_poos, ForecastSettings, PoosSettings};
use qfavar::panel::{load_panel, transform_series, PanelData, PanelSchema, TransformSpec};
use qfavar::posterior::{block, PosteriorDraws};
use qfavar::rng::stream;
use qfavar::simulate::{simulate_qfavar, SimDims, SimSettings};
use qfavar::structural::{connectedness, gfevd, girf, DrawSelection};
use qfavar::Execution;

// Writes to stdout without panicking on a closed pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser, Debug)]
#[command(name = "qfavar", version, about = "Bayesian quantile factor-augmented VARs")]
struct Cli {
    /// Worker threads; 1 forces the serial path.
    #[arg(long, global = true, env = "QFAVAR_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a synthetic panel with known ground truth.
    Simulate(SimulateArgs),
    /// Estimate a model on a panel CSV.
    Estimate(EstimateArgs),
    /// Quantile forecasts and predictive densities from a posterior.
    Forecast(ForecastArgs),
    /// Generalized impulse responses to one state shock.
    Irf(IrfArgs),
    /// Generalized forecast error variance decompositions.
    Fevd(FevdArgs),
    /// Connectedness network from the variance decompositions.
    Connect(ConnectArgs),
    /// t-statistic and commonality reports.
    Evaluate(EvaluateArgs),
    /// Recursive pseudo-out-of-sample forecast evaluation.
    Poos(PoosArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelOpts {
    /// JSON model configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Comma-separated quantile grid.
    #[arg(long, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    /// Lag order.
    #[arg(long)]
    lags: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct PanelOpts {
    /// Panel CSV: a date column, `INDICATOR.COUNTRY` series and `GLOBAL.NAME`
    /// globals.
    data: PathBuf,
    /// JSON panel schema (date column, bare global names, orderings).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// JSON transform spec applied after loading.
    #[arg(long)]
    transform: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long = "periods", default_value_t = 300)]
    t_len: usize,
    #[arg(long, default_value_t = 1)]
    lags: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON generator settings.
    #[arg(long)]
    settings: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    panel: PanelOpts,
    #[command(flatten)]
    model: ModelOpts,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    posterior: PathBuf,
    #[arg(long)]
    horizon: Option<usize>,
    /// Quantile levels to report (Gaussian models accept any level).
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Add simulated VAR innovations to the state paths.
    #[arg(long)]
    simulate_shocks: bool,
    #[arg(long)]
    filter_explosive: bool,
    /// Write kernel densities for these horizons.
    #[arg(long, value_delimiter = ',')]
    density: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IrfArgs {
    posterior: PathBuf,
    /// State label (e.g. a global series name) or index.
    #[arg(long)]
    shock: String,
    #[arg(long, default_value_t = 40)]
    horizon: usize,
    #[arg(long)]
    filter_explosive: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FevdArgs {
    posterior: PathBuf,
    #[arg(long, default_value_t = 24)]
    horizon: usize,
    #[arg(long)]
    filter_explosive: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConnectArgs {
    posterior: PathBuf,
    #[arg(long, default_value_t = qfavar::structural::DEFAULT_EDGE_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 24)]
    horizon: usize,
    /// Use row-normalized shares instead of raw shares.
    #[arg(long)]
    normalized: bool,
    #[arg(long)]
    filter_explosive: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Scores CSV written by `poos`.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value = "QFAVAR")]
    model: String,
    #[arg(long, default_value = "FAVAR")]
    benchmark: String,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.9")]
    quantiles: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,6,12,24")]
    horizons: Vec<usize>,
    /// Panel CSV for commonalities.
    #[arg(long, requires_all = ["mean_posterior", "quantile_posterior"])]
    panel: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    transform: Option<PathBuf>,
    /// FAVAR posterior supplying the mean factors.
    #[arg(long)]
    mean_posterior: Option<PathBuf>,
    /// QFAVAR posterior supplying the quantile factors.
    #[arg(long)]
    quantile_posterior: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PoosArgs {
    #[command(flatten)]
    panel: PanelOpts,
    #[command(flatten)]
    model: ModelOpts,
    #[arg(long, value_delimiter = ',', default_value = "QFAVAR,FAVAR", value_parser = parse_variant)]
    models: Vec<Variant>,
    #[arg(long, value_delimiter = ',', default_value = "1,6,12,24")]
    horizons: Vec<usize>,
    /// Quantile levels to score; the configured grid when omitted.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long)]
    first_window: Option<usize>,
    #[arg(long, default_value_t = 1)]
    step: usize,
    #[arg(short, long)]
    out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct OutputFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    version: &'static str,
    threads: Option<usize>,
    seed: Option<u64>,
    config_hash: Option<String>,
    inputs: Vec<OutputFile>,
    outputs: Vec<OutputFile>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Records what a subcommand read and wrote.
struct Run {
    command: &'static str,
    out: PathBuf,
    threads: Option<usize>,
    seed: Option<u64>,
    config_hash: Option<String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str, out: PathBuf, threads: Option<usize>) -> Result<Self> {
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            command,
            out,
            threads,
            seed: None,
            config_hash: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        self.outputs.push(p);
        Ok(BufWriter::new(f))
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let mut w = self.create(name)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let files = |v: &[PathBuf]| -> Result<Vec<OutputFile>> {
            v.iter()
                .map(|p| {
                    Ok(OutputFile {
                        path: p.display().to_string(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let manifest = Manifest {
            command: self.command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            threads: self.threads,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            inputs: files(&self.inputs)?,
            outputs: files(&self.outputs)?,
        };
        let p = self.out.join(format!("manifest-{}.json", self.command));
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &manifest)?;
        for o in &self.outputs {
            say!("wrote {}", o.display());
        }
        Ok(())
    }
}

fn execution(threads: Option<usize>) -> Execution {
    match threads {
        Some(t) => Execution::from_threads(t),
        None => Execution::Parallel,
    }
}

fn model_config(opts: &ModelOpts, exec: Execution) -> Result<ModelConfig> {
    let mut cfg = match &opts.config {
        Some(p) => load_config(p).with_context(|| format!("loading config {}", p.display()))?,
        None => ModelConfig::default(),
    };
    if let Some(m) = opts.method {
        cfg.method = m;
    }
    if let Some(v) = opts.variant {
        cfg.variant = v;
    }
    if let Some(q) = &opts.quantiles {
        cfg.quantiles = q.clone();
    }
    if let Some(p) = opts.lags {
        cfg.p = p;
    }
    if let Some(h) = opts.horizon {
        cfg.horizon = h;
    }
    if let Some(s) = opts.seed {
        cfg.mcmc.seed = s;
        cfg.vb.seed = s;
    }
    if let Some(i) = opts.iterations {
        cfg.mcmc.iterations = i;
    }
    if let Some(b) = opts.burn_in {
        cfg.mcmc.burn_in = b;
    }
    if let Some(t) = opts.thin {
        cfg.mcmc.thin = t;
    }
    cfg.parallel = exec == Execution::Parallel;
    cfg.validate()?;
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_panel_opts(data: &Path, schema: Option<&Path>, transform: Option<&Path>, run: &mut Run) -> Result<PanelData> {
    let schema: PanelSchema = match schema {
        Some(p) => {
            run.inputs.push(p.to_path_buf());
            read_json(p)?
        }
        None => PanelSchema::default(),
    };
    run.inputs.push(data.to_path_buf());
    let mut panel = load_panel(data, &schema).with_context(|| format!("loading panel {}", data.display()))?;
    if let Some(t) = transform {
        run.inputs.push(t.to_path_buf());
        let spec: TransformSpec = read_json(t)?;
        panel = transform_series(&panel, &spec)?;
    }
    Ok(panel)
}

fn load_posterior(path: &Path, run: &mut Run) -> Result<PosteriorDraws> {
    run.inputs.push(path.to_path_buf());
    PosteriorDraws::load(path).with_context(|| format!("loading posterior {}", path.display()))
}

fn default_out(out: &Option<PathBuf>, posterior: &Path) -> PathBuf {
    out.clone().unwrap_or_else(|| {
        posterior
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn selection(post: &PosteriorDraws, filter_explosive: bool) -> DrawSelection {
    DrawSelection {
        omega_source: post.meta.config.omega_source,
        filter_explosive: filter_explosive || post.meta.config.filter_explosive,
    }
}

fn simulate(a: SimulateArgs, threads: Option<usize>) -> Result<()> {
    let mut run = Run::new("simulate", a.out.clone(), threads)?;
    let settings: SimSettings = match &a.settings {
        Some(p) => {
            run.inputs.push(p.clone());
            read_json(p)?
        }
        None => SimSettings::default(),
    };
    let dims = SimDims {
        m: a.m,
        n: a.n,
        k: a.k,
        t_len: a.t_len,
        p: a.lags,
    };
    let mut rng = stream(a.seed, &[qfavar::rng::tag::SIMULATE]);
    let (panel, truth) = simulate_qfavar(dims, &settings, a.seed, &mut rng)?;
    run.seed = Some(a.seed);
    panel.write_csv(run.create("panel.csv")?)?;
    let truth_path = run.path("truth.json");
    truth.save(&truth_path)?;
    run.outputs.push(truth_path);
    run.finish()
}

fn estimate(a: EstimateArgs, threads: Option<usize>) -> Result<()> {
    let exec = execution(threads);
    let mut run = Run::new("estimate", a.out.clone(), threads)?;
    let cfg = model_config(&a.model, exec)?;
    if let Some(p) = &a.model.config {
        run.inputs.push(p.clone());
    }
    let panel = load_panel_opts(&a.panel.data, a.panel.schema.as_deref(), a.panel.transform.as_deref(), &mut run)?;
    let post = qfavar::estimate(&panel, &cfg)?;
    run.seed = Some(post.meta.seed);
    run.config_hash = Some(cfg.hash());
    let bin = run.path("posterior.bin");
    post.save(&bin)?;
    run.outputs.push(bin.clone());
    run.outputs.push(PosteriorDraws::sidecar_path(&bin));
    let d = &post.meta.diagnostics;
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
    say!(
        "{} {} on {} periods: {} draws, {} states",
        cfg.variant.name(),
        match cfg.method {
            Method::Mcmc => "MCMC",
            Method::Vb => "VB",
        },
        panel.t_len(),
        post.n_draws(),
        post.layout().state_dim()
    );
    if let Some(c) = d.converged {
        say!("converged: {c} after {} iterations", d.iterations.unwrap_or(0));
    }
    for (group, e) in &d.ess {
        say!("ess {group}: min {:.1}, median {:.1}", e.min, e.median);
    }
    run.finish()
}

fn forecast(a: ForecastArgs, threads: Option<usize>) -> Result<()> {
    let exec = execution(threads);
    let mut run = Run::new("forecast", default_out(&a.out, &a.posterior), threads)?;
    let post = load_posterior(&a.posterior, &mut run)?;
    let cfg = &post.meta.config;
    let mut fs_ = ForecastSettings::from_config(cfg);
    if let Some(h) = a.horizon {
        fs_.horizon = h;
    }
    fs_.simulate_shocks = a.simulate_shocks;
    fs_.filter_explosive |= a.filter_explosive;
    if let Some(s) = a.seed {
        fs_.seed = s;
    }
    run.seed = Some(fs_.seed);
    run.config_hash = Some(post.meta.config_hash.clone());
    let states = forecast_states(&post, &fs_, exec)?;
    if states.excluded > 0 {
        eprintln!("warning: {} explosive draws excluded", states.excluded);
    }
    let fan = forecast_quantiles(&post, &states, a.levels.as_deref(), exec)?;
    fan.write_csv(run.create("forecast.csv")?)?;
    for &h in &a.density {
        if h == 0 || h > fan.horizon {
            bail!("density horizon {h} outside 1..={}", fan.horizon);
        }
        let warnings = fan.write_density_csv(h, run.create(&format!("density_h{h}.csv"))?)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
    }
    say!("forecast origin {}, {} draws used", fan.origin, fan.n_draws_used);
    for (s, lab) in fan.series_labels.iter().enumerate() {
        let q: Vec<String> = fan.quantiles_at(1, s).iter().map(|v| format!("{v:.3}")).collect();
        say!("{lab} h=1: {}", q.join(" "));
    }
    run.finish()
}

fn shock_index(post: &PosteriorDraws, shock: &str) -> Result<usize> {
    let labels = &post.meta.state_labels;
    if let Some(i) = labels.iter().position(|l| l == shock) {
        return Ok(i);
    }
    let stripped = shock.strip_prefix(qfavar::panel::GLOBAL_PREFIX).unwrap_or(shock);
    if let Some(i) = labels.iter().position(|l| l == stripped) {
        return Ok(i);
    }
    if let Ok(i) = shock.parse::<usize>() {
        if i < labels.len() {
            return Ok(i);
        }
    }
    bail!("unknown shock `{shock}`; states are {}", labels.join(", "))
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn irf(a: IrfArgs, threads: Option<usize>) -> Result<()> {
    let exec = execution(threads);
    let mut run = Run::new("irf", default_out(&a.out, &a.posterior), threads)?;
    let post = load_posterior(&a.posterior, &mut run)?;
    let j = shock_index(&post, &a.shock)?;
    let res = girf(&post, j, a.horizon, selection(&post, a.filter_explosive), exec)?;
    res.write_csv(run.create(&format!("irf_{}.csv", sanitize(&res.shock_label)))?)?;
    say!("shock {} over {} horizons, {} draws used", res.shock_label, a.horizon, res.n_draws_used);
    run.finish()
}

fn fevd(a: FevdArgs, threads: Option<usize>) -> Result<()> {
    let exec = execution(threads);
    let mut run = Run::new("fevd", default_out(&a.out, &a.posterior), threads)?;
    let post = load_posterior(&a.posterior, &mut run)?;
    let res = gfevd(&post, a.horizon, selection(&post, a.filter_explosive), exec)?;
    res.write_csv(run.create(&format!("fevd_h{}.csv", a.horizon))?)?;
    say!("horizon {}, {} draws used", a.horizon, res.n_draws_used);
    run.finish()
}

fn connect(a: ConnectArgs, threads: Option<usize>) -> Result<()> {
    let exec = execution(threads);
    let mut run = Run::new("connect", default_out(&a.out, &a.posterior), threads)?;
    let post = load_posterior(&a.posterior, &mut run)?;
    let res = gfevd(&post, a.horizon, selection(&post, a.filter_explosive), exec)?;
    let (v, s) = if a.normalized {
        (&res.variable, &res.state)
    } else {
        (&res.variable_raw, &res.state_raw)
    };
    let net = connectedness(v, s, &res.connectedness_labels(), a.threshold)?;
    net.write_edges_csv(run.create("edges.csv")?)?;
    net.write_matrix_csv(run.create("connectedness.csv")?)?;
    run.write_text("network.dot", &net.to_dot())?;
    say!("{} edges at threshold {}", net.edges.len(), a.threshold);
    run.finish()
}

fn evaluate(a: EvaluateArgs, threads: Option<usize>) -> Result<()> {
    let mut run = Run::new("evaluate", a.out.clone(), threads)?;
    if a.scores.is_none() && a.panel.is_none() {
        bail!("nothing to evaluate: pass --scores and/or --panel with posteriors");
    }
    let mut report = String::new();
    if let Some(p) = &a.scores {
        run.inputs.push(p.clone());
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let scores = read_scores_csv(f)?;
        let table = tstat_table(&scores, &a.model, &a.benchmark, &a.quantiles, &a.horizons)?;
        table.write_csv(run.create("tstats.csv")?)?;
        report.push_str(&table.to_markdown());
    }
    if let (Some(data), Some(mp), Some(qp)) = (&a.panel, &a.mean_posterior, &a.quantile_posterior) {
        let panel = load_panel_opts(data, a.schema.as_deref(), a.transform.as_deref(), &mut run)?;
        let mean = load_posterior(mp, &mut run)?;
        let quant = load_posterior(qp, &mut run)?;
        let ml = mean.layout().clone();
        let ql = quant.layout().clone();
        if ml.t_len != panel.t_len() || ql.t_len != panel.t_len() || ml.m != panel.m() || ql.m != panel.m() {
            bail!("posteriors and panel disagree on the sample");
        }
        let fm = mean.block_mean(block::FACTORS)?;
        let fq = quant.block_mean(block::FACTORS)?;
        let t = panel.t_len();
        let (lm, lq) = (ml.state_dim(), ql.state_dim());
        let mean_f = nalgebra::DMatrix::from_fn(t, panel.m(), |r, i| fm[r * lm + ml.factor(i, 0)]);
        let qfs: Vec<_> = (0..ql.r())
            .map(|q| nalgebra::DMatrix::from_fn(t, panel.m(), |r, i| fq[r * lq + ql.factor(i, q)]))
            .collect();
        let mut labels = Vec::new();
        let mut series = Vec::new();
        let mut ind = Vec::new();
        for i in 0..panel.m() {
            for j in 0..panel.n() {
                labels.push(panel.series_label(i, j));
                series.push(panel.series(i, j));
                ind.push(i);
            }
        }
        let table = commonality_table(&labels, &series, &ind, &mean_f, &qfs, &ql.quantiles)?;
        table.write_csv(run.create("commonality.csv")?)?;
        report.push_str("\nCommonality\n\n");
        report.push_str(&table.to_markdown());
    }
    run.write_text("report.md", &report)?;
    say!("{}", report.trim_end());
    run.finish()
}

fn poos(a: PoosArgs, threads: Option<usize>) -> Result<()> {
    let exec = execution(threads);
    let mut run = Run::new("poos", a.out.clone(), threads)?;
    let cfg = model_config(&a.model, exec)?;
    if let Some(p) = &a.model.config {
        run.inputs.push(p.clone());
    }
    let panel = load_panel_opts(&a.panel.data, a.panel.schema.as_deref(), a.panel.transform.as_deref(), &mut run)?;
    let mut s = PoosSettings::new(a.models.clone(), &cfg);
    s.horizons = a.horizons.clone();
    if let Some(l) = &a.levels {
        s.levels = l.clone();
    }
    s.first_window = a.first_window;
    s.step = a.step;
    s.method = a.model.method.unwrap_or(Method::Vb);
    s.checkpoint_dir = Some(run.path("checkpoints"));
    s.exec = exec;
    run.config_hash = Some(cfg.hash());
    run.seed = Some(match s.method {
        Method::Mcmc => cfg.mcmc.seed,
        Method::Vb => cfg.vb.seed,
    });
    let res = recursive_poos(&panel, &cfg, &s)?;
    write_scores_csv(&res.scores, run.create("scores.csv")?)?;
    say!(
        "{} origins, {} model fits ({} resumed from checkpoints)",
        res.origins.len(),
        res.forecasts.len(),
        res.resumed
    );
    for sc in res.scores.iter().filter(|sc| sc.horizon == s.horizons[0]) {
        say!(
            "{} {} q={} h={}: mean loss {:.4} over {} origins",
            sc.model,
            sc.variable,
            sc.quantile,
            sc.horizon,
            sc.mean(),
            sc.losses.len()
        );
    }
    run.finish()
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        qfavar::exec::set_threads(t);
    }
    let threads = cli.threads;
    match cli.command {
        Command::Simulate(a) => simulate(a, threads),
        Command::Estimate(a) => estimate(a, threads),
        Command::Forecast(a) => forecast(a, threads),
        Command::Irf(a) => irf(a, threads),
        Command::Fevd(a) => fevd(a, threads),
        Command::Connect(a) => connect(a, threads),
        Command::Evaluate(a) => evaluate(a, threads),
        Command::Poos(a) => poos(a, threads),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
