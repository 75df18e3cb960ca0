//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 2 on usage errors, 1 on runtime failures (with the failing stage
//! on stderr).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::adaptation::adapt;
use crate::baseline::{ae_train, AeModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::experiment::{run_bench, write_per_seed_csv, write_results_csv, write_timing_csv, BenchConfig};
use crate::flow::{DomainId, FlowModel, DEFAULT_ALPHA};
use crate::scoring::{evaluate, score_dataset, write_scores_csv, AnomalyScorer};
use crate::seed::{derive_seed, stage_rng};
use crate::synth::{make_benchmark, AnomalyGenerator, BenchmarkSpec};
use crate::training::{finetune, pretrain, TrainConfig};
use crate::translation::translate_batch;

#[derive(Parser, Debug)]
#[command(name = "adaflow", version, about = "Flow-based anomaly detection with per-domain batch-norm statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic multi-domain benchmark as CSV files.
    Synth(SynthArgs),
    /// Pre-train a flow (or autoencoder) on one or more domains.
    Train(TrainArgs),
    /// Register a new domain by fine-tuning every parameter on its data.
    Finetune(FinetuneArgs),
    /// Register a new domain by recomputing batch-norm statistics only.
    Adapt(AdaptArgs),
    /// Write per-sample anomaly scores.
    Score(ScoreArgs),
    /// Evaluate NLL and AUROC on a labelled test set.
    Eval(EvalArgs),
    /// Translate samples from one domain to another.
    Translate(TranslateArgs),
    /// Run the full experiment matrix over several seeds.
    Bench(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModelType {
    Flow,
    Ae,
}

#[derive(Args, Debug, Clone)]
struct Optim {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Optim {
    fn apply(&self, mut cfg: TrainConfig, stage: &str) -> TrainConfig {
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        cfg.seed = derive_seed(self.seed, stage);
        cfg
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Number of pre-training domains.
    #[arg(long, default_value_t = 3)]
    domains: usize,
    /// Training samples per domain.
    #[arg(long = "n-train")]
    n_train: Option<usize>,
    /// How anomalous test samples are drawn.
    #[arg(long, value_enum, default_value_t = AnomalyKind::Box)]
    anomaly: AnomalyKind,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum AnomalyKind {
    /// Uniform over the target's mean ± 2 std box.
    Box,
    /// Target samples spread out and moved along the diagonal.
    Shifted,
    /// A shell well outside the target's typical radius.
    Shell,
    /// Drawn from the target law itself, so no detector can beat chance.
    SameLaw,
}

impl AnomalyKind {
    fn generator(self, dim: usize) -> AnomalyGenerator {
        match self {
            AnomalyKind::Box => AnomalyGenerator::UniformBox { half_width: 2.0 },
            AnomalyKind::Shifted => AnomalyGenerator::ShiftedGaussian { shift: 3.0, scale: 1.5 },
            AnomalyKind::Shell => AnomalyGenerator::RadialShell {
                radius: 1.5 * (dim as f64).sqrt(),
                width: 1.0,
            },
            AnomalyKind::SameLaw => AnomalyGenerator::ShiftedGaussian { shift: 0.0, scale: 1.0 },
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training CSVs; rows are grouped by their `domain` column, or by file stem when absent.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "model-type", value_enum, default_value_t = ModelType::Flow)]
    model_type: ModelType,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Loss curve CSV (epoch, domain_id, nll).
    #[arg(long = "loss-curve")]
    loss_curve: Option<PathBuf>,
    #[command(flatten)]
    optim: Optim,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "domain-id")]
    domain_id: String,
    #[arg(long)]
    out: PathBuf,
    /// Use only the first N samples.
    #[arg(long = "n-adapt")]
    n_adapt: Option<usize>,
    /// Timing CSV (phase, seconds).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long = "loss-curve")]
    loss_curve: Option<PathBuf>,
    #[command(flatten)]
    optim: Optim,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "domain-id")]
    domain_id: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "n-adapt")]
    n_adapt: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Required for flows; ignored by autoencoders.
    #[arg(long = "domain-id")]
    domain_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "model-type", value_enum)]
    model_type: Option<ModelType>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "domain-id")]
    domain_id: Option<String>,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "model-type", value_enum)]
    model_type: Option<ModelType>,
}

#[derive(Args, Debug)]
struct TranslateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// First seed; runs use seed, seed+1, ….
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    domains: usize,
    /// Training samples per pre-training domain (and target pool size).
    #[arg(long = "n-train")]
    n_train: Option<usize>,
    /// Pre-training epochs for both flows and the autoencoder.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "finetune-epochs")]
    finetune_epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Adaptation sample budgets.
    #[arg(long = "n-adapt", value_delimiter = ',', default_values_t = vec![10usize, 100, 1000])]
    n_adapt: Vec<usize>,
    /// Fill the `seconds` column of the results tables (makes them run-dependent).
    #[arg(long = "wall-time")]
    wall_time: bool,
}

enum Failure {
    Usage(String),
    Runtime { stage: &'static str, error: Error },
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, Failure>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, Failure> {
        self.map_err(|error| Failure::Runtime { stage, error })
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Adapt(a) => adapt_cmd(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Translate(a) => translate(a),
        Command::Bench(a) => bench(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime { stage, error }) => {
            eprintln!("error: {stage}: {error}");
            1
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
fn write_atomic(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, buf)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn spec_from(dim: usize, domains: usize, n_train: Option<usize>) -> std::result::Result<BenchmarkSpec, Failure> {
    if dim == 0 || domains == 0 {
        return Err(Failure::Usage("--dim and --domains must be positive".into()));
    }
    let mut spec = BenchmarkSpec::default_for(dim, domains);
    if let Some(n) = n_train {
        for d in spec.pretrain.iter_mut().chain(std::iter::once(&mut spec.target)) {
            d.n_train = n;
        }
    }
    Ok(spec)
}

fn synth(a: SynthArgs) -> CliResult {
    let mut spec = spec_from(a.dim, a.domains, a.n_train)?;
    spec.anomaly.generator = a.anomaly.generator(a.dim);
    let bench = make_benchmark(a.seed, &spec).stage("synth")?;
    bench.write_dir(&a.out).stage("synth: write")?;
    Ok(())
}

fn load_domains(paths: &[PathBuf]) -> Result<BTreeMap<DomainId, Dataset>> {
    let mut groups: BTreeMap<DomainId, Vec<Dataset>> = BTreeMap::new();
    for p in paths {
        let ds = Dataset::load_csv(p)?;
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "default".into());
        for (k, part) in ds.split_by_domain(&DomainId::from(stem)) {
            groups.entry(k).or_default().push(part);
        }
    }
    groups
        .into_iter()
        .map(|(k, parts)| Ok((k, Dataset::concat(parts.iter())?.normal_only())))
        .collect()
}

fn train(a: TrainArgs) -> CliResult {
    let datasets = load_domains(&a.data).stage("train: read data")?;
    let dim = datasets.values().next().map(Dataset::dim).unwrap_or(0);
    let report = match a.model_type {
        ModelType::Flow => {
            let cfg = a.optim.apply(TrainConfig::default(), "train/flow");
            let mut rng = stage_rng(a.optim.seed, "train/init");
            let mut model = FlowModel::adaflow(dim, a.alpha, &mut rng).stage("train: build model")?;
            let report = pretrain(&mut model, &datasets, &cfg).stage("train")?;
            model.save(&a.out).stage("train: write model")?;
            report
        }
        ModelType::Ae => {
            let cfg = a.optim.apply(TrainConfig::default(), "train/ae");
            let mut rng = stage_rng(a.optim.seed, "train/init");
            let mut ae = AeModel::with_default_architecture(dim, &mut rng).stage("train: build model")?;
            let report = ae_train(&mut ae, &datasets, &cfg).stage("train")?;
            ae.save(&a.out).stage("train: write model")?;
            report
        }
    };
    if let Some(path) = a.loss_curve {
        report
            .write_loss_csv(create(&path).stage("train: write loss curve")?)
            .stage("train: write loss curve")?;
    }
    Ok(())
}

fn read_subset(path: &Path, n: Option<usize>, stage: &'static str) -> std::result::Result<Dataset, Failure> {
    let ds = Dataset::load_csv(path).stage(stage)?.normal_only();
    Ok(match n {
        Some(n) => ds.head(n),
        None => ds,
    })
}

fn finetune_cmd(a: FinetuneArgs) -> CliResult {
    let mut model = FlowModel::load(&a.model).stage("finetune: read model")?;
    let data = read_subset(&a.data, a.n_adapt, "finetune: read data")?;
    let cfg = a.optim.apply(TrainConfig::finetune(), "finetune");
    let report = finetune(&mut model, &data, DomainId::from(a.domain_id), &cfg).stage("finetune")?;
    model.save(&a.out).stage("finetune: write model")?;
    if let Some(path) = a.report {
        let timing = vec![(format!("finetune_n{}", data.len()), report.seconds)];
        write_timing_csv(&timing, create(&path).stage("finetune: write report")?).stage("finetune: write report")?;
    }
    if let Some(path) = a.loss_curve {
        report
            .write_loss_csv(create(&path).stage("finetune: write loss curve")?)
            .stage("finetune: write loss curve")?;
    }
    Ok(())
}

fn adapt_cmd(a: AdaptArgs) -> CliResult {
    let mut model = FlowModel::load(&a.model).stage("adapt: read model")?;
    let data = read_subset(&a.data, a.n_adapt, "adapt: read data")?;
    let start = std::time::Instant::now();
    adapt(&mut model, &data, DomainId::from(a.domain_id)).stage("adapt")?;
    let secs = start.elapsed().as_secs_f64();
    model.save(&a.out).stage("adapt: write model")?;
    if let Some(path) = a.report {
        let timing = vec![(format!("adapt_n{}", data.len()), secs)];
        write_timing_csv(&timing, create(&path).stage("adapt: write report")?).stage("adapt: write report")?;
    }
    Ok(())
}

enum Loaded {
    Flow(FlowModel),
    Ae(AeModel),
}

impl Loaded {
    fn scorer(&self) -> &dyn AnomalyScorer {
        match self {
            Loaded::Flow(m) => m,
            Loaded::Ae(m) => m,
        }
    }
}

fn load_model(path: &Path, declared: Option<ModelType>) -> std::result::Result<Loaded, Failure> {
    let text = fs::read_to_string(path).map_err(Error::from).stage("read model")?;
    let detected = serde_json::from_str::<serde_json::Value>(&text)
        .map_err(Error::from)
        .stage("read model")?
        .get("model_type")
        .and_then(|v| v.as_str())
        .map(str::to_owned);
    let kind = match (declared, detected.as_deref()) {
        (Some(ModelType::Flow), Some("ae")) | (Some(ModelType::Ae), Some("flow")) => {
            return Err(Failure::Usage(format!(
                "--model-type does not match the model file ({})",
                detected.unwrap_or_default()
            )))
        }
        (Some(t), _) => t,
        (None, Some("ae")) => ModelType::Ae,
        (None, _) => ModelType::Flow,
    };
    match kind {
        ModelType::Flow => FlowModel::from_json(&text).map(Loaded::Flow).stage("read model"),
        ModelType::Ae => AeModel::from_json(&text).map(Loaded::Ae).stage("read model"),
    }
}

fn domain_for(model: &Loaded, id: Option<String>) -> std::result::Result<DomainId, Failure> {
    match (model, id) {
        (_, Some(k)) => Ok(DomainId::from(k)),
        (Loaded::Ae(_), None) => Ok(DomainId::from("any")),
        (Loaded::Flow(_), None) => Err(Failure::Usage("--domain-id is required for flow models".into())),
    }
}

fn score(a: ScoreArgs) -> CliResult {
    let model = load_model(&a.model, a.model_type)?;
    let k = domain_for(&model, a.domain_id)?;
    let data = Dataset::load_csv(&a.data).stage("score: read data")?;
    let scored = score_dataset(model.scorer(), &data, &k).stage("score")?;
    write_scores_csv(&scored, create(&a.out).stage("score: write")?).stage("score: write")?;
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let model = load_model(&a.model, a.model_type)?;
    let k = domain_for(&model, a.domain_id)?;
    let data = Dataset::load_csv(&a.data).stage("eval: read data")?;
    let report = evaluate(model.scorer(), &data, &k).stage("eval")?;
    fs::write(&a.out, report.to_json().stage("eval")?)
        .map_err(Error::from)
        .stage("eval: write")?;
    Ok(())
}

fn translate(a: TranslateArgs) -> CliResult {
    let model = FlowModel::load(&a.model).stage("translate: read model")?;
    let data = Dataset::load_csv(&a.data).stage("translate: read data")?;
    let out = translate_batch(&model, &data, &DomainId::from(a.from), &DomainId::from(a.to)).stage("translate")?;
    out.save_csv(&a.out).stage("translate: write")?;
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult {
    if a.seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let mut cfg = BenchConfig {
        seeds: a.seeds,
        base_seed: a.seed,
        spec: spec_from(a.dim, a.domains, a.n_train)?,
        adapt_sizes: a.n_adapt.clone(),
        ..BenchConfig::default()
    };
    for c in [&mut cfg.pretrain, &mut cfg.ae] {
        if let Some(e) = a.epochs {
            c.epochs = e;
        }
        if let Some(b) = a.batch_size {
            c.batch_size = b;
        }
        if let Some(lr) = a.lr {
            c.learning_rate = lr;
        }
    }
    if let Some(e) = a.finetune_epochs {
        cfg.finetune.epochs = e;
    }
    let result = run_bench(&cfg).stage("bench")?;
    let dir = &a.out;
    write_atomic(&dir.join("results.csv"), |b| write_results_csv(&result.summary, a.wall_time, b))
        .stage("bench: write results")?;
    write_atomic(&dir.join("results_per_seed.csv"), |b| {
        write_per_seed_csv(&result.per_seed, a.wall_time, b)
    })
    .stage("bench: write results")?;
    write_atomic(&dir.join("timing.csv"), |b| write_timing_csv(&result.timing, b)).stage("bench: write timing")?;
    Ok(())
}
