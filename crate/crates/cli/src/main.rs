use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bfvae::autodiff::Tensor;
use bfvae::harness::{
    cardinality_sweep, relevance_report, train, traverse, write_sweep_csv, Checkpoint, RunConfig, Thresholds,
};
use bfvae::metrics::{
    aggregate_posterior_diagnostics, metric_one, metric_three, metric_two, DciConfig, LatentCodes, Regressor, Report,
    VoteConfig,
};

#[derive(Parser)]
#[command(name = "bfvae", about = "Train and inspect hierarchical Bayesian auto-encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint and loss history.
    Train(RunArgs),
    /// Decode single-coordinate sweeps around anchor images into a PNG grid.
    Traverse(TraverseArgs),
    /// Print the relevance verdict of each latent dimension.
    Report(ReportArgs),
    /// Train one model per η value and tabulate the relevant-dimension counts.
    Sweep(SweepArgs),
    /// Score a checkpoint with the disentanglement metrics.
    Metrics(MetricsArgs),
}

/// Run configuration: a config file, then individual overrides.
#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings, applied after the file and the flags below.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    latent_dim: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    eta_s: Option<String>,
    #[arg(long)]
    eta_h: Option<String>,
    #[arg(long)]
    reg_scale: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    hyper_kl_scale: Option<String>,
    #[arg(long)]
    mog_k: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    disc_lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    log_every: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    architecture: Option<String>,
    #[arg(long)]
    disc_width: Option<String>,
    #[arg(long)]
    disc_depth: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    synth_factors: Option<String>,
    #[arg(long)]
    synth_size: Option<String>,
    #[arg(long)]
    synth_noise: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        let flags = [
            ("variant", &self.variant),
            ("latent_dim", &self.latent_dim),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("eta", &self.eta),
            ("eta_s", &self.eta_s),
            ("eta_h", &self.eta_h),
            ("reg_scale", &self.reg_scale),
            ("epsilon", &self.epsilon),
            ("hyper_kl_scale", &self.hyper_kl_scale),
            ("mog_k", &self.mog_k),
            ("lr", &self.lr),
            ("disc_lr", &self.disc_lr),
            ("batch_size", &self.batch_size),
            ("steps", &self.steps),
            ("log_every", &self.log_every),
            ("seed", &self.seed),
            ("architecture", &self.architecture),
            ("disc_width", &self.disc_width),
            ("disc_depth", &self.disc_depth),
            ("dataset", &self.dataset),
            ("synth_factors", &self.synth_factors),
            ("synth_size", &self.synth_size),
            ("synth_noise", &self.synth_noise),
            ("out_dir", &self.out_dir),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.apply(k, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set {kv:?} is not key=value"))?;
            cfg.apply(k.trim(), v.trim())?;
        }
        Ok(cfg.with_env_overrides())
    }
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long, default_value_t = Thresholds::default().alpha_deviation)]
    alpha_threshold: f64,
    #[arg(long, default_value_t = Thresholds::default().dof)]
    dof_threshold: f64,
    #[arg(long, default_value_t = Thresholds::default().relevance)]
    r_threshold: f64,
}

impl ThresholdArgs {
    fn get(&self) -> Thresholds {
        Thresholds { alpha_deviation: self.alpha_threshold, dof: self.dof_threshold, relevance: self.r_threshold }
    }
}

#[derive(Args)]
struct TraverseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset rows to use as anchors.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    anchors: Vec<usize>,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    lo: f64,
    #[arg(long, default_value_t = 3.0)]
    hi: f64,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long, default_value = "traversal.png")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated η values.
    #[arg(long, value_delimiter = ',', required = true)]
    etas: Vec<f64>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Any of `one`, `two`, `three`, `diagnostics`, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    which: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `metrics.txt` and its tables; defaults to the checkpoint's.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn load(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run_train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let cfg = if cfg.out_dir.is_none() {
        RunConfig { out_dir: Some(PathBuf::from("runs").join(&cfg.hash()[..12])), ..cfg }
    } else {
        cfg
    };
    let ds = cfg.dataset.load()?;
    let out = train(&cfg, &ds)?;
    let dir = cfg.out_dir.as_ref().expect("set above");
    if let Some(last) = out.history.last() {
        println!("{}", last.to_line());
    }
    println!("checkpoint: {}", dir.join("checkpoint.npz").display());
    Ok(())
}

fn run_traverse(args: &TraverseArgs) -> Result<()> {
    let ckpt = load(&args.checkpoint)?;
    let ds = ckpt.config.dataset.load()?;
    if let Some(bad) = args.anchors.iter().find(|&&i| i >= ds.len()) {
        bail!("anchor {bad} is outside the {} dataset rows", ds.len());
    }
    let x: Tensor = ds.batch(&args.anchors);
    let grid = traverse(&ckpt, &x, (args.lo, args.hi), args.steps)?;
    grid.write_png(&args.out)?;
    for a in 0..grid.anchors {
        let change: Vec<String> = (0..grid.dims).map(|j| format!("{:.4}", grid.row_change(a, j))).collect();
        println!("anchor {}: row change {}", args.anchors[a], change.join(" "));
    }
    println!("grid: {}", args.out.display());
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<()> {
    let ckpt = load(&args.checkpoint)?;
    let report = relevance_report(&ckpt, &args.thresholds.get())?;
    print!("{report}");
    if let Some(p) = &args.out {
        std::fs::write(p, report.to_string())?;
    }
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let cfg = if cfg.out_dir.is_none() { RunConfig { out_dir: Some(PathBuf::from("sweep")), ..cfg } } else { cfg };
    let ds = cfg.dataset.load()?;
    let rows = cardinality_sweep(&cfg, &args.etas, &ds, &args.thresholds.get())?;
    let dir = cfg.out_dir.as_ref().expect("set above");
    std::fs::create_dir_all(dir)?;
    let path = dir.join("sweep.csv");
    write_sweep_csv(&rows, &path)?;
    for r in &rows {
        println!("eta {}: {} relevant", r.eta, r.report.num_relevant());
    }
    println!("table: {}", path.display());
    Ok(())
}

fn run_metrics(args: &MetricsArgs) -> Result<()> {
    let ckpt = load(&args.checkpoint)?;
    let ds = ckpt.config.dataset.load()?;
    let all = args.which.iter().any(|w| w == "all");
    let want = |name: &str| all || args.which.iter().any(|w| w == name);
    let names = ds.factor_names().to_vec();
    let votes = VoteConfig { seed: args.seed, ..VoteConfig::default() };
    let mut report = Report::new();
    report.push("checkpoint", args.checkpoint.display());
    report.push("config_hash", ckpt.config.hash());
    if want("one") {
        report.extend(Report::votes("metric1", &metric_one(&ckpt.model, &ds, &votes)?, &names));
    }
    if want("two") {
        report.extend(Report::votes("metric2", &metric_two(&ckpt.model, &ds, &votes)?, &names));
    }
    if want("three") {
        let (codes, factors) = LatentCodes::with_factors(&ckpt.model, &ds, 10_000, args.seed)?;
        for (tag, reg) in [("metric3_lasso", Regressor::Lasso), ("metric3_forest", Regressor::RandomForest)] {
            report.extend(Report::dci(tag, &metric_three(&codes, &factors, &DciConfig::new(reg, args.seed))?, &names));
        }
    }
    if want("diagnostics") {
        match aggregate_posterior_diagnostics(&ckpt.model, &ds, 4096, args.seed) {
            Ok(d) => report.extend(Report::diagnostics("diagnostics", &d)),
            Err(bfvae::Error::NotApplicable(why)) => report.push("diagnostics", format!("not applicable: {why}")),
            Err(e) => return Err(e.into()),
        }
    }
    print!("{}", report.to_text());
    let dir = match &args.out_dir {
        Some(d) => d.clone(),
        None => args.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&dir)?;
    for p in report.write(&dir, "metrics")? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    RunConfig::check_device()?;
    match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Traverse(a) => run_traverse(a),
        Command::Report(a) => run_report(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Metrics(a) => run_metrics(a),
    }
}
