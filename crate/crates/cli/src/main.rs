//! `hwnas`: profile, search, derive, retrain, evaluate, lint and report.

mod device;
mod manifest;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use hwnas::costmodel::{self, CostModel, CostModelConfig};
use hwnas::data::{generate_dataset, Dataset, DatasetSpec, Splits};
use hwnas::graph::{self, CompactNet, SuperNet};
use hwnas::latency::LatencyTable;
use hwnas::lint::{self, LintConfig, NetRef, Severity};
use hwnas::nn::Checkpoint;
use hwnas::profiler::{self, ProfilerError, DEFAULT_STACK, DEFAULT_TRIALS};
use hwnas::search::{self, ArchParams, CompactModel, SearchConfig, TrainConfig};
use hwnas::toy;

use device::DeviceSpec;
use manifest::{RunManifest, Step, MANIFEST_NAME};

/// Exit status when `lint` reports warnings.
const EXIT_LINT_WARNINGS: u8 = 3;

#[derive(Parser)]
#[command(name = "hwnas", version, about = "Hardware-latency-aware neural architecture search")]
struct Cli {
    /// Seed for every random choice the command makes; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print a JSON summary instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Manifest to update (default: run.manifest.json next to the outputs).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in search space with dataset, search and retraining configs.
    Toy(ToyArgs),
    /// Latency lookup tables.
    #[command(subcommand)]
    Lut(LutCommand),
    /// Learned per-operator latency model.
    #[command(subcommand)]
    Costmodel(CostmodelCommand),
    /// Architecture search.
    #[command(subcommand)]
    Search(SearchCommand),
    /// Extract the most likely compact network from searched architecture parameters.
    Derive(DeriveArgs),
    /// Train a compact network from scratch.
    TrainCompact(TrainCompactArgs),
    /// Evaluate a trained compact network.
    Eval(EvalArgs),
    /// Check a network against accelerator design rules.
    Lint(LintArgs),
    /// Compare lookup-table predictions with whole-network measurements.
    Calibrate(CalibrateArgs),
    /// Summaries and plots from the files listed in a manifest.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Classification,
    Sr,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, value_enum, default_value = "classification")]
    space: Space,
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Subcommand)]
enum LutCommand {
    /// Measure every operator of a supernet on a device.
    Build(LutBuildArgs),
    /// Predict every operator of a supernet with a cost model.
    FromModel(LutFromModelArgs),
}

#[derive(Args)]
struct DeviceArgs {
    /// sim | sim:<config.json> | cmd:<template with {graph}>; defaults to $HWNAS_DEVICE_CONFIG or sim.
    #[arg(long)]
    device: Option<String>,
    /// Per-invocation timeout for command devices.
    #[arg(long, default_value_t = 60.0)]
    timeout_s: f64,
}

#[derive(Args)]
struct LutBuildArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    device: DeviceArgs,
    #[arg(long, default_value_t = DEFAULT_STACK)]
    stack: usize,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    /// Use the simulator's exact per-operator costs instead of stacked measurements.
    #[arg(long)]
    closed_form: bool,
}

#[derive(Args)]
struct LutFromModelArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = costmodel::DEFAULT_CLOCK_GHZ)]
    clock_ghz: f64,
}

#[derive(Subcommand)]
enum CostmodelCommand {
    /// Generate profiling records for random workloads from a simulator.
    Records(RecordsArgs),
    Train(CostTrainArgs),
    Eval(CostEvalArgs),
}

#[derive(Args)]
struct RecordsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    count: usize,
    #[command(flatten)]
    device: DeviceArgs,
}

#[derive(Args)]
struct CostTrainArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct CostEvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    records: PathBuf,
}

#[derive(Subcommand)]
enum SearchCommand {
    Run(SearchRunArgs),
}

#[derive(Args)]
struct SearchRunArgs {
    #[arg(long)]
    net: PathBuf,
    /// Dataset spec (JSON).
    #[arg(long)]
    data: PathBuf,
    /// `.lut.json` or `.costmodel.json`; defaults to the config's latency_source.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DeriveArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainCompactArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Adds the network's table latency to the metrics.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LintArgs {
    /// Supernet or compact `.net.json`.
    #[arg(long)]
    net: PathBuf,
    /// Flag every LeakyReLU and bilinear upsample.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 1 << 20)]
    threshold_bytes: u64,
    /// Exit 0 even when warnings are found.
    #[arg(long)]
    no_fail: bool,
    /// Write findings as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    lut: PathBuf,
    #[command(flatten)]
    device: DeviceArgs,
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    out_dir: PathBuf,
}

/// What a command prints and how it exits.
struct Outcome {
    summary: Value,
    text: String,
    code: u8,
}

impl Outcome {
    fn ok(summary: Value, text: impl Into<String>) -> Self {
        Outcome { summary, text: text.into(), code: 0 }
    }
}

/// Searched architecture parameters as written by `search run`.
#[derive(Debug, Serialize, Deserialize)]
struct ArchFile {
    alpha: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    chosen: Vec<usize>,
}

/// Metrics written by `eval`.
#[derive(Debug, Serialize, Deserialize)]
struct MetricsFile {
    net: String,
    split: String,
    loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    psnr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latency_ms: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&out.summary).expect("JSON values serialize"));
            } else if !out.text.is_empty() {
                print!("{}", out.text);
                if !out.text.ends_with('\n') {
                    println!();
                }
            }
            ExitCode::from(out.code)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Toy(a) => cmd_toy(cli, a),
        Command::Lut(LutCommand::Build(a)) => cmd_lut_build(cli, a),
        Command::Lut(LutCommand::FromModel(a)) => cmd_lut_from_model(cli, a),
        Command::Costmodel(CostmodelCommand::Records(a)) => cmd_records(cli, a),
        Command::Costmodel(CostmodelCommand::Train(a)) => cmd_cost_train(cli, a),
        Command::Costmodel(CostmodelCommand::Eval(a)) => cmd_cost_eval(cli, a),
        Command::Search(SearchCommand::Run(a)) => cmd_search(cli, a),
        Command::Derive(a) => cmd_derive(cli, a),
        Command::TrainCompact(a) => cmd_train_compact(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Lint(a) => cmd_lint(cli, a),
        Command::Calibrate(a) => cmd_calibrate(cli, a),
        Command::Report(a) => cmd_report(cli, a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_supernet(path: &Path) -> Result<SuperNet> {
    let net = graph::deserialize(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let report = net.validate();
    if !report.is_valid() {
        bail!("{} is not a valid supernet: {:?}", path.display(), report.findings);
    }
    Ok(net)
}

fn load_compact(path: &Path) -> Result<CompactNet> {
    let net = graph::deserialize_compact(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    net.infer_shapes().with_context(|| format!("{} has inconsistent shapes", path.display()))?;
    Ok(net)
}

fn load_lut(path: &Path) -> Result<LatencyTable> {
    let lut = LatencyTable::from_json(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    if lut.metadata.incomplete {
        log::warn!("{} is marked incomplete", path.display());
    }
    Ok(lut)
}

fn load_data(path: &Path) -> Result<(DatasetSpec, Splits<f64>)> {
    let spec: DatasetSpec = parse_json(path)?;
    let splits = generate_dataset(&spec).with_context(|| format!("generating dataset from {}", path.display()))?;
    Ok((spec, splits))
}

/// A `.lut.json`, or a `.costmodel.json` turned into a table for `net`.
fn latency_table(path: &Path, net: &SuperNet) -> Result<LatencyTable> {
    let text = read(path)?;
    if let Ok(lut) = LatencyTable::from_json(&text) {
        return Ok(lut);
    }
    let model = CostModel::from_json(&text).with_context(|| format!("{} is neither a LUT nor a cost model", path.display()))?;
    let mut lut = costmodel::lut_from_model(&model, net, model.clock_ghz)?;
    lut.metadata.created = manifest::now();
    Ok(lut)
}

fn manifest_path(cli: &Cli, dir: &Path) -> PathBuf {
    cli.manifest.clone().unwrap_or_else(|| dir.join(MANIFEST_NAME))
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn record(cli: &Cli, dir: &Path, command: &str, seed: Option<u64>, config: Value, artifacts: &[(&str, &Path)]) -> Result<PathBuf> {
    let path = manifest_path(cli, dir);
    let step = Step { command: command.into(), seed, config_hash: manifest::config_hash(&config) };
    RunManifest::record(&path, step, artifacts)?;
    Ok(path)
}

fn cmd_toy(cli: &Cli, a: &ToyArgs) -> Result<Outcome> {
    let seed = cli.seed.unwrap_or(42);
    let (net, data, name) = match a.space {
        Space::Classification => (toy::classification_supernet(), toy::classification_data(seed), "classification"),
        Space::Sr => (toy::sr_supernet(), toy::sr_data(seed), "sr"),
    };
    let files = [
        ("supernet", a.dir.join("supernet.net.json"), graph::serialize(&net)?),
        ("dataset_spec", a.dir.join("dataset.json"), pretty(&data)),
        ("search_config", a.dir.join("search.json"), toy::search_config(seed, 0.0).to_json()),
        ("train_config", a.dir.join("train.json"), pretty(&toy::train_config(seed))),
    ];
    for (_, p, text) in &files {
        write(p, text)?;
    }
    let arts: Vec<(&str, &Path)> = files.iter().map(|(k, p, _)| (*k, p.as_path())).collect();
    let m = record(cli, &a.dir, "toy", Some(seed), json!({"space": name, "seed": seed}), &arts)?;
    let paths: Vec<String> = files.iter().map(|f| f.1.display().to_string()).collect();
    Ok(Outcome::ok(
        json!({"space": name, "files": paths, "manifest": m}),
        format!("wrote {} toy space to {}", name, a.dir.display()),
    ))
}

fn cmd_lut_build(cli: &Cli, a: &LutBuildArgs) -> Result<Outcome> {
    let net = load_supernet(&a.net)?;
    let spec = DeviceSpec::parse(a.device.device.as_deref())?;
    let result = if a.closed_form {
        spec.simulator()?.closed_form_lut(&net)
    } else {
        let mut dev = spec.runner(a.device.timeout_s)?;
        profiler::build_lut(&mut dev, &net, a.stack, a.trials)
    };
    let (mut lut, failure) = match result {
        Ok(lut) => (lut, None),
        Err(ProfilerError::Incomplete { partial, source }) => (*partial, Some(source)),
        Err(e) => return Err(e.into()),
    };
    lut.metadata.created = manifest::now();
    write(&a.out, &lut.to_json())?;
    let config = json!({"net": manifest::content_hash(&a.net)?, "device": a.device.device, "stack": a.stack,
        "trials": a.trials, "closed_form": a.closed_form});
    record(cli, &parent(&a.out), "lut build", cli.seed, config, &[("lut", &a.out)])?;
    if let Some(e) = failure {
        bail!("profiling failed; partial table with {} entries written to {}: {e}", lut.len(), a.out.display());
    }
    Ok(Outcome::ok(
        json!({"out": a.out, "entries": lut.len(), "device": lut.metadata.device}),
        format!("{} entries -> {}", lut.len(), a.out.display()),
    ))
}

fn cmd_lut_from_model(cli: &Cli, a: &LutFromModelArgs) -> Result<Outcome> {
    let net = load_supernet(&a.net)?;
    let model = CostModel::from_json(&read(&a.model)?).with_context(|| format!("parsing {}", a.model.display()))?;
    let mut lut = costmodel::lut_from_model(&model, &net, a.clock_ghz)?;
    lut.metadata.created = manifest::now();
    write(&a.out, &lut.to_json())?;
    let config = json!({"net": manifest::content_hash(&a.net)?, "model": manifest::content_hash(&a.model)?, "clock_ghz": a.clock_ghz});
    record(cli, &parent(&a.out), "lut from-model", cli.seed, config, &[("lut", &a.out)])?;
    Ok(Outcome::ok(json!({"out": a.out, "entries": lut.len()}), format!("{} entries -> {}", lut.len(), a.out.display())))
}

fn cmd_records(cli: &Cli, a: &RecordsArgs) -> Result<Outcome> {
    let spec = DeviceSpec::parse(a.device.device.as_deref())?;
    let sim = spec.simulator()?;
    let seed = cli.seed.unwrap_or(0);
    let records = costmodel::simulate_records(sim, a.count, seed)?;
    write(&a.out, &costmodel::records_to_jsonl(&records))?;
    let config = json!({"device": sim, "count": a.count, "seed": seed});
    record(cli, &parent(&a.out), "costmodel records", Some(seed), config, &[("records", &a.out)])?;
    Ok(Outcome::ok(json!({"out": a.out, "records": records.len()}), format!("{} records -> {}", records.len(), a.out.display())))
}

fn cmd_cost_train(cli: &Cli, a: &CostTrainArgs) -> Result<Outcome> {
    let records = costmodel::records_from_jsonl(&read(&a.records)?).with_context(|| format!("parsing {}", a.records.display()))?;
    let mut cfg: CostModelConfig = match &a.config {
        Some(p) => parse_json(p)?,
        None => CostModelConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let (model, report) = costmodel::train_cost_model(&records, &cfg)?;
    write(&a.out, &model.to_json())?;
    let report_path = a.out.with_extension("training.json");
    write(&report_path, &pretty(&report))?;
    let config = json!({"records": manifest::content_hash(&a.records)?, "config": cfg});
    record(cli, &parent(&a.out), "costmodel train", Some(cfg.seed), config, &[("costmodel", &a.out), ("costmodel_training", &report_path)])?;
    let val = report.val_mape_pct.map_or("n/a".to_string(), |v| format!("{v:.2}%"));
    Ok(Outcome::ok(
        json!({"out": a.out, "train_mape_pct": report.train_mape_pct, "val_mape_pct": report.val_mape_pct,
            "num_train": report.num_train, "num_val": report.num_val}),
        format!("train MAPE {:.2}%, held-out MAPE {val} -> {}", report.train_mape_pct, a.out.display()),
    ))
}

fn cmd_cost_eval(cli: &Cli, a: &CostEvalArgs) -> Result<Outcome> {
    let model = CostModel::from_json(&read(&a.model)?).with_context(|| format!("parsing {}", a.model.display()))?;
    let records = costmodel::records_from_jsonl(&read(&a.records)?).with_context(|| format!("parsing {}", a.records.display()))?;
    let mape = costmodel::evaluate_mape(&model, &records)?;
    let config = json!({"model": manifest::content_hash(&a.model)?, "records": manifest::content_hash(&a.records)?});
    record(cli, &parent(&a.model), "costmodel eval", cli.seed, config, &[])?;
    Ok(Outcome::ok(json!({"mape_pct": mape, "records": records.len()}), format!("MAPE {mape:.2}% over {} records", records.len())))
}

fn cmd_search(cli: &Cli, a: &SearchRunArgs) -> Result<Outcome> {
    let net = load_supernet(&a.net)?;
    let mut cfg = match &a.config {
        Some(p) => SearchConfig::from_json(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SearchConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(l) = a.lambda2 {
        cfg.lambda2 = l;
    }
    if let Some(r) = a.rounds {
        cfg.rounds = r;
    }
    let lut_path = match (&a.lut, &cfg.latency_source) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => match &a.config {
            Some(c) if p.is_relative() => parent(c).join(p),
            _ => p.clone(),
        },
        (None, None) => bail!("no latency table: pass --lut or set latency_source in the search config"),
    };
    cfg.latency_source = Some(lut_path.clone());
    cfg.validate()?;
    let lut = latency_table(&lut_path, &net)?;
    let (spec, data) = load_data(&a.data)?;
    if spec.task != net.task {
        bail!("dataset task {:?} does not match the supernet task {:?}", spec.task, net.task);
    }
    let (state, history) = search::train_search(&net, &lut, &data.train, &data.val, &cfg)?;
    let probs = state.arch.probs();
    let arch = ArchFile {
        alpha: state.arch.alpha.clone(),
        chosen: state.arch.argmax().iter().map(|c| c.index).collect(),
        probs,
    };
    let hist_path = a.out_dir.join("history.csv");
    let arch_path = a.out_dir.join("arch.json");
    let cfg_path = a.out_dir.join("search.effective.json");
    write(&hist_path, &history.to_csv(&net.stage_sizes()))?;
    write(&arch_path, &pretty(&arch))?;
    let mut stored = cfg.clone();
    stored.latency_source = None;
    write(&cfg_path, &stored.to_json())?;
    let config = json!({"net": manifest::content_hash(&a.net)?, "lut": manifest::content_hash(&lut_path)?,
        "data": spec, "search": stored});
    record(cli, &a.out_dir, "search run", Some(cfg.seed), config,
        &[("search_history", &hist_path), ("arch", &arch_path), ("search_config", &cfg_path)])?;
    let last = history.records().last();
    Ok(Outcome::ok(
        json!({"rounds": history.len(), "chosen": arch.chosen, "final_val_loss": last.map(|r| r.val_loss),
            "final_expected_latency_ms": last.map(|r| r.e_latency_ms), "history": hist_path, "arch": arch_path}),
        format!(
            "{} rounds, chosen {:?}, expected latency {:.4} ms -> {}",
            history.len(),
            arch.chosen,
            last.map_or(f64::NAN, |r| r.e_latency_ms),
            a.out_dir.display()
        ),
    ))
}

fn cmd_derive(cli: &Cli, a: &DeriveArgs) -> Result<Outcome> {
    let net = load_supernet(&a.net)?;
    let arch_file: ArchFile = parse_json(&a.arch)?;
    let arch = ArchParams { alpha: arch_file.alpha };
    let compact = search::derive_compact(&net, &arch)?;
    write(&a.out, &graph::serialize_compact(&compact)?)?;
    let config = json!({"net": manifest::content_hash(&a.net)?, "arch": manifest::content_hash(&a.arch)?});
    record(cli, &parent(&a.out), "derive", cli.seed, config, &[("derived_net", &a.out)])?;
    let choices: Vec<usize> = compact.choices.iter().map(|c| c.index).collect();
    let ties = compact.choices.iter().filter(|c| c.tie).count();
    Ok(Outcome::ok(
        json!({"out": a.out, "choices": choices, "ties": ties}),
        format!("choices {choices:?}{} -> {}", if ties > 0 { format!(" ({ties} ties)") } else { String::new() }, a.out.display()),
    ))
}

fn cmd_train_compact(cli: &Cli, a: &TrainCompactArgs) -> Result<Outcome> {
    let net = load_compact(&a.net)?;
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => parse_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let (_, data) = load_data(&a.data)?;
    let (model, losses) = search::train_compact(&net, &data.train, &cfg)?;
    write(&a.out, &Checkpoint::from_model(&model.model).to_json())?;
    let config = json!({"net": manifest::content_hash(&a.net)?, "data": manifest::content_hash(&a.data)?, "train": cfg});
    record(cli, &parent(&a.out), "train-compact", Some(cfg.seed), config, &[("compact_model", &a.out)])?;
    Ok(Outcome::ok(
        json!({"out": a.out, "epoch_losses": losses}),
        format!("final training loss {:.4} -> {}", losses.last().copied().unwrap_or(f64::NAN), a.out.display()),
    ))
}

fn split_of(data: Splits<f64>, split: Split) -> Dataset<f64> {
    match split {
        Split::Train => data.train,
        Split::Val => data.val,
        Split::Test => data.test,
    }
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<Outcome> {
    let net = load_compact(&a.net)?;
    let ckpt = Checkpoint::from_json(&read(&a.model)?).with_context(|| format!("parsing {}", a.model.display()))?;
    let mut model = CompactModel::<f64>::new(&net, 0)?;
    ckpt.apply(&mut model.model).with_context(|| format!("{} does not match {}", a.model.display(), a.net.display()))?;
    let (_, data) = load_data(&a.data)?;
    let metrics = search::evaluate(&mut model, &split_of(data, a.split), 64)?;
    let latency_ms = match &a.lut {
        Some(p) => Some(load_lut(p)?.compact_latency(&net)?),
        None => None,
    };
    let label = a.net.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let split = serde_json::to_value(a.split)?.as_str().unwrap_or_default().to_string();
    let out = MetricsFile { net: label, split, loss: metrics.loss, accuracy: metrics.accuracy, psnr_db: metrics.psnr_db, latency_ms };
    write(&a.out, &pretty(&out))?;
    let mut config = json!({"net": manifest::content_hash(&a.net)?, "model": manifest::content_hash(&a.model)?,
        "data": manifest::content_hash(&a.data)?, "split": out.split});
    if let Some(p) = &a.lut {
        config["lut"] = json!(manifest::content_hash(p)?);
    }
    record(cli, &parent(&a.out), "eval", cli.seed, config, &[("metrics", &a.out)])?;
    let mut text = format!("loss {:.4}", out.loss);
    if let Some(acc) = out.accuracy {
        text += &format!(", accuracy {:.2}%", 100.0 * acc);
    }
    if let Some(p) = out.psnr_db {
        text += &format!(", PSNR {p:.2} dB");
    }
    if let Some(l) = out.latency_ms {
        text += &format!(", latency {l:.4} ms");
    }
    Ok(Outcome::ok(serde_json::to_value(&out)?, text))
}

fn cmd_lint(cli: &Cli, a: &LintArgs) -> Result<Outcome> {
    let text = read(&a.net)?;
    let cfg = LintConfig { strict: a.strict, streaming_threshold_bytes: a.threshold_bytes };
    let findings = if let Ok(compact) = graph::deserialize_compact(&text) {
        compact.infer_shapes().with_context(|| format!("{} has inconsistent shapes", a.net.display()))?;
        lint::lint_network(NetRef::Compact(&compact), &cfg)?
    } else {
        let supernet = graph::deserialize(&text).with_context(|| format!("parsing {}", a.net.display()))?;
        let report = supernet.validate();
        if !report.is_valid() {
            bail!("{} is not a valid supernet: {:?}", a.net.display(), report.findings);
        }
        lint::lint_network(NetRef::Super(&supernet), &cfg)?
    };
    let warnings = findings.iter().filter(|f| f.severity == Severity::Warning).count();
    let mut artifacts: Vec<(&str, &Path)> = Vec::new();
    if let Some(out) = &a.out {
        write(out, &pretty(&findings))?;
        artifacts.push(("lint", out));
    }
    let dir = a.out.as_deref().map(parent).unwrap_or_else(|| parent(&a.net));
    let config = json!({"net": manifest::content_hash(&a.net)?, "lint": cfg});
    record(cli, &dir, "lint", cli.seed, config, &artifacts)?;
    let code = if warnings > 0 && !a.no_fail { EXIT_LINT_WARNINGS } else { 0 };
    Ok(Outcome { summary: serde_json::to_value(&findings)?, text: lint::format_table(&findings), code })
}

fn cmd_calibrate(cli: &Cli, a: &CalibrateArgs) -> Result<Outcome> {
    let net = load_supernet(&a.net)?;
    let lut = load_lut(&a.lut)?;
    let spec = DeviceSpec::parse(a.device.device.as_deref())?;
    let mut dev = spec.runner(a.device.timeout_s)?;
    let seed = cli.seed.unwrap_or(0);
    let report = profiler::calibrate(&mut dev, &net, &lut, a.samples, seed, a.trials)?;
    let csv_path = a.out_dir.join("calibration.csv");
    let json_path = a.out_dir.join("calibration.json");
    write(&csv_path, &report.to_csv())?;
    let summary = report.summary_json();
    write(&json_path, &pretty(&summary))?;
    let config = json!({"net": manifest::content_hash(&a.net)?, "lut": manifest::content_hash(&a.lut)?,
        "device": a.device.device, "samples": a.samples, "trials": a.trials, "seed": seed});
    record(cli, &a.out_dir, "calibrate", Some(seed), config, &[("calibration", &csv_path), ("calibration_summary", &json_path)])?;
    let r = report.pearson.map_or("undefined".to_string(), |r| format!("{r:.5}"));
    Ok(Outcome::ok(summary, format!("{} samples: MAPE {:.2}%, Pearson {r}", report.points.len(), report.mape_pct)))
}

fn read_calibration(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = read(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("predicted_ms,measured_ms") {
        bail!("{} is not a calibration CSV", path.display());
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (p, m) = l.split_once(',').ok_or_else(|| anyhow!("malformed line `{l}` in {}", path.display()))?;
            Ok((p.trim().parse()?, m.trim().parse()?))
        })
        .collect()
}

fn cmd_report(cli: &Cli, a: &ReportArgs) -> Result<Outcome> {
    let mpath = manifest_path(cli, &a.out_dir);
    let m = RunManifest::load(&mpath)?;
    let mut produced: Vec<(&str, PathBuf)> = Vec::new();
    let mut summary = json!({"manifest": mpath, "tool_version": m.tool_version, "config_hash": m.config_hash});

    let mut calibration = Vec::new();
    for p in m.verified(&mpath, "calibration")? {
        calibration.extend(read_calibration(&p)?);
    }
    if !calibration.is_empty() {
        let svg_path = a.out_dir.join("calibration.svg");
        write(
            &svg_path,
            &svg::render(&svg::Plot {
                title: "Predicted vs measured latency",
                x_label: "predicted (ms)",
                y_label: "measured (ms)",
                points: &calibration,
                diagonal: true,
                line: &[],
            }),
        )?;
        summary["calibration"] = json!({"points": calibration.len(), "mape_pct": profiler::mape_pct(&calibration),
            "pearson": profiler::pearson(&calibration)});
        produced.push(("report_plot", svg_path));
    }

    let mut rows = Vec::new();
    for p in m.verified(&mpath, "metrics")? {
        let mf: MetricsFile = parse_json(&p)?;
        let quality = mf.accuracy.or(mf.psnr_db);
        rows.push((p.display().to_string(), mf.latency_ms, quality, mf));
    }
    if !rows.is_empty() {
        let mut csv = String::from("metrics_file,latency_ms,accuracy,psnr_db,loss\n");
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for (path, lat, _, mf) in &rows {
            csv += &format!("{path},{},{},{},{}\n", fmt(*lat), fmt(mf.accuracy), fmt(mf.psnr_db), mf.loss);
        }
        let csv_path = a.out_dir.join("frontier.csv");
        write(&csv_path, &csv)?;
        produced.push(("report_table", csv_path));
        let points: Vec<(f64, f64)> = rows.iter().filter_map(|(_, l, q, _)| Some((l.as_ref().copied()?, q.as_ref().copied()?))).collect();
        if !points.is_empty() {
            let front = svg::pareto_front(&points);
            let y_label = if rows.iter().any(|r| r.3.accuracy.is_some()) { "accuracy" } else { "PSNR (dB)" };
            let svg_path = a.out_dir.join("frontier.svg");
            write(
                &svg_path,
                &svg::render(&svg::Plot {
                    title: "Latency / quality trade-off",
                    x_label: "latency (ms)",
                    y_label,
                    points: &points,
                    diagonal: false,
                    line: &front,
                }),
            )?;
            summary["frontier"] = json!({"points": points.len(), "pareto": front});
            produced.push(("report_plot", svg_path));
        }
    }

    let mut searches = Vec::new();
    for p in m.verified(&mpath, "search_history")? {
        let text = read(&p)?;
        let last = text.lines().last().unwrap_or_default();
        let fields: Vec<&str> = last.split(',').collect();
        searches.push(json!({"history": p, "rounds": text.lines().count().saturating_sub(1),
            "final_val_loss": fields.get(2).and_then(|v| v.parse::<f64>().ok()),
            "final_expected_latency_ms": fields.get(3).and_then(|v| v.parse::<f64>().ok())}));
    }
    summary["searches"] = json!(searches);

    let json_path = a.out_dir.join("report.json");
    write(&json_path, &pretty(&summary))?;
    produced.push(("report", json_path));
    let arts: Vec<(&str, &Path)> = produced.iter().map(|(k, p)| (*k, p.as_path())).collect();
    record(cli, &a.out_dir, "report", cli.seed, json!({"manifest_config": m.config_hash}), &arts)?;
    let names: Vec<String> = produced.iter().map(|(_, p)| p.display().to_string()).collect();
    Ok(Outcome::ok(summary, format!("wrote {}", names.join(", "))))
}
