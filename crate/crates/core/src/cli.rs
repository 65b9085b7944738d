//! `copygen` command line.
//!
//! Every subcommand accepts `--config <path>` (a `key = value` file whose
//! keys match the long flag names with `-` replaced by `_`) and `--threads`.
//! Flags override the config file, which overrides defaults. Usage errors
//! exit with status 2, runtime failures with status 1; both print a single
//! `error: <kind>: <message>` line on stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{read_sidecar, write_sidecar, Checkpoint};
use crate::config::{KeyValues, RunConfig};
use crate::data::{
    chronological_split, group_snapshots, normalize_timestamps, parse_quadruple_file, parse_stat, Dataset, DatasetMeta,
    LoadOptions, Quadruple, SplitScheme,
};
use crate::error::Error;
use crate::eval::{evaluate, EvalConfig, EvalReport, EvalSummary, FilterIndex, FilterRegime};
use crate::model::{Mode, Predictor, Query};
use crate::synth::{generate, SynthConfig};
use crate::train::{default_alpha, fit_with_observer, LossReduction, TrainConfig};
use crate::vocab::{recurrence_stats, HistVocab, MaskStyle, PresentValue};

#[derive(Debug, Parser)]
#[command(
    name = "copygen",
    version,
    about = "Copy-generation temporal knowledge graph completion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize, split and write a raw quadruple dump as a dataset directory.
    Prepare(PrepareArgs),
    /// Recurrence statistics of one split against the earlier ones.
    Stats(StatsArgs),
    /// Generate a synthetic dataset with controllable recurrence.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint with ranking metrics.
    Eval(EvalArgs),
    /// Evaluate all four scoring modes of a checkpoint.
    Ablate(AblateArgs),
    /// Evaluate a checkpoint across mixture weights 0.0..=1.0.
    SweepAlpha(SweepArgs),
    /// Rank objects for a single query.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for training and evaluation.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[command(flatten)]
    common: Common,
    /// Raw quadruple file(s); concatenated in order.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: Option<String>,
    /// `stat.txt` with `N R`; inferred from the ids when absent.
    #[arg(long)]
    stat: Option<String>,
    #[arg(long)]
    granularity: Option<u32>,
    #[arg(long)]
    reciprocal: Option<bool>,
    #[arg(long)]
    split: Option<SplitScheme>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory (train/valid/test/stat files).
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    granularity: Option<u32>,
    #[arg(long)]
    reciprocal: Option<bool>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Split probed against every earlier split: train, valid or test.
    #[arg(long)]
    probe: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    entities: Option<u32>,
    #[arg(long)]
    relations: Option<u32>,
    #[arg(long)]
    snapshots: Option<u32>,
    #[arg(long)]
    facts_per_snapshot: Option<u32>,
    #[arg(long)]
    recurrence: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fixed_objects: Option<bool>,
    #[arg(long)]
    reciprocal: Option<bool>,
    #[arg(long)]
    split: Option<SplitScheme>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mask_magnitude: Option<f64>,
    /// Loss reduction over a batch: sum or mean.
    #[arg(long)]
    loss: Option<String>,
    /// Early stopping on validation MRR.
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    alpha: Option<f64>,
    /// In-vocabulary mask value: zero, indicator or count.
    #[arg(long)]
    mask_present: Option<PresentValue>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<String>,
    /// Training log CSV (default `<out>.log.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalFlags {
    #[arg(long, required = true)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// test or valid.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    filter: Option<FilterRegime>,
    /// Filter over all splits (`all`) or training facts only (`train`).
    #[arg(long)]
    filter_source: Option<String>,
    /// Overrides the checkpoint's mixture weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Let validation facts extend the frozen vocabulary.
    #[arg(long)]
    absorb_valid: Option<bool>,
    #[arg(long)]
    mask_present: Option<PresentValue>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalFlags,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    per_snapshot_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    eval: EvalFlags,
    /// Retrain one model per mixture weight instead of re-mixing.
    #[arg(long)]
    retrain: bool,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, required = true)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    subject: u32,
    #[arg(long)]
    relation: u32,
    /// Snapshot index of the query.
    #[arg(long)]
    time: usize,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    mask_present: Option<PresentValue>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    run_with_output(argv, &mut stdout.lock())
}

/// Like [`run`], writing regular output to `out`.
pub fn run_with_output<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let summary: Vec<&str> = msg.lines().map(str::trim).take_while(|l| !l.is_empty()).collect();
            eprintln!("error: usage: {}", summary.join(" ").trim_start_matches("error: "));
            return 2;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: usage: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Prepare(a) => &a.common,
        Command::Stats(a) => &a.common,
        Command::Synth(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Ablate(a) => &a.common,
        Command::SweepAlpha(a) => &a.common,
        Command::Predict(a) => &a.common,
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> CliResult {
    let common = common(&cli.command);
    let file = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            KeyValues::parse(&text)?
        }
        None => KeyValues::default(),
    };
    let threads = match common.threads {
        Some(t) => Some(t),
        None => file.get_parsed::<usize>("threads")?,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut rc = RunConfig::new(file);
    if let Some(t) = threads {
        rc.resolve("threads", Some(t), t)?;
    }
    let mut buf = Vec::new();
    let result = pool.install(|| match cli.command {
        Command::Prepare(a) => prepare(a, rc, &mut buf),
        Command::Stats(a) => stats(a, rc, &mut buf),
        Command::Synth(a) => synth(a, rc, &mut buf),
        Command::Train(a) => train(a, rc, &mut buf),
        Command::Eval(a) => eval(a, rc, &mut buf),
        Command::Ablate(a) => ablate(a, rc, &mut buf),
        Command::SweepAlpha(a) => sweep(a, rc, &mut buf),
        Command::Predict(a) => predict(a, rc, &mut buf),
    });
    out.write_all(&buf)
        .and_then(|_| out.flush())
        .map_err(|e| Failure::Runtime(Error::io("<stdout>", e)))?;
    result
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn emit(out: &mut Vec<u8>, text: &str) -> CliResult {
    out.extend_from_slice(text.as_bytes());
    Ok(())
}

/// Writes `text` to `path` with the resolved config in `<path>.cfg`.
fn write_artifact(path: &Path, text: &str, rc: &RunConfig) -> CliResult {
    fs::write(path, text).map_err(io_err(path))?;
    write_sidecar(path, &rc.to_key_values())?;
    Ok(())
}

/// Widens an `f32` header field by its shortest decimal form, so 0.8 stays 0.8.
fn decimal(x: f32) -> f64 {
    x.to_string().parse().unwrap_or(f64::from(x))
}

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| Failure::Usage(format!("missing required --{flag}")))
}

fn load_dataset(args: &DataArgs, rc: &mut RunConfig, fallback: Option<&KeyValues>) -> CliResult<(Dataset, PathBuf)> {
    // flag > config file > checkpoint sidecar
    fn layered<T>(rc: &mut RunConfig, key: &str, flag: Option<T>, fallback: Option<&KeyValues>) -> CliResult<Option<T>>
    where
        T: std::str::FromStr + std::fmt::Display,
    {
        if let Some(v) = rc.resolve_opt(key, flag)? {
            return Ok(Some(v));
        }
        match fallback.map(|kv| kv.get_parsed::<T>(key)).transpose()?.flatten() {
            Some(v) => Ok(Some(rc.inherit(key, v))),
            None => Ok(None),
        }
    }
    let dir = PathBuf::from(require(
        layered::<String>(rc, "data", args.data.clone(), fallback)?,
        "data",
    )?);
    let opts = LoadOptions {
        granularity: layered(rc, "granularity", args.granularity, fallback)?,
        reciprocal: layered(rc, "reciprocal", args.reciprocal, fallback)?,
    };
    let ds = Dataset::load(&dir, opts)?;
    if opts.reciprocal.is_none() {
        rc.inherit("reciprocal", ds.is_augmented());
    }
    Ok((ds, dir))
}

fn prepare(a: PrepareArgs, mut rc: RunConfig, out: &mut Vec<u8>) -> CliResult {
    let dir = PathBuf::from(require(rc.resolve_opt::<String>("out", a.out)?, "out")?);
    let granularity = rc.resolve("granularity", a.granularity, 1u32)?;
    let reciprocal = rc.resolve("reciprocal", a.reciprocal, true)?;
    let scheme = rc.resolve("split", a.split, SplitScheme::ThreeWay)?;
    let stat = rc.resolve_opt::<String>("stat", a.stat)?;

    let declared = match &stat {
        Some(path) => Some(parse_stat(&fs::read_to_string(path).map_err(io_err(Path::new(path)))?)?),
        None => None,
    };
    let bounds = declared.unwrap_or((u32::MAX, u32::MAX));
    let parse_meta = DatasetMeta::new(bounds.0, bounds.1);
    let mut raw = Vec::new();
    for path in &a.input {
        let file = fs::File::open(path).map_err(io_err(path))?;
        raw.extend(parse_quadruple_file(std::io::BufReader::new(file), &parse_meta)?);
    }
    let (n, r) = declared.unwrap_or_else(|| {
        let n = raw.iter().map(|q| q.subject.max(q.object) + 1).max().unwrap_or(1);
        let r = raw.iter().map(|q| q.relation + 1).max().unwrap_or(1);
        (n, r)
    });
    let (facts, _) = normalize_timestamps(&raw, granularity)?;
    let split = chronological_split(&facts, scheme)?;
    let mut ds = Dataset::from_raw_splits(DatasetMeta::new(n, r), split.train, split.valid, split.test)?;
    if reciprocal {
        ds.augment()?;
    }
    let boundaries: Vec<String> = split.boundaries.iter().map(u32::to_string).collect();
    let extra = vec![
        ("split".to_string(), scheme.to_string()),
        ("boundaries".to_string(), boundaries.join(",")),
        ("source_granularity".to_string(), granularity.to_string()),
    ];
    ds.save(&dir, &extra)?;
    let count = |facts: &[Quadruple]| facts.iter().filter(|q| q.relation < r).count();
    emit(
        out,
        &format!(
            "entities={n}\nrelations={r}\nsnapshots={}\nboundaries={}\ntrain={}\nvalid={}\ntest={}\n",
            ds.meta.num_snapshots,
            boundaries.join(","),
            count(&ds.train),
            count(&ds.valid),
            count(&ds.test)
        ),
    )?;
    write_sidecar(&dir.join("prepare"), &rc.to_key_values())?;
    Ok(())
}

fn stats(a: StatsArgs, mut rc: RunConfig, out: &mut Vec<u8>) -> CliResult {
    let mut data_args = a.data;
    data_args.reciprocal = data_args.reciprocal.or(Some(false));
    let (ds, _) = load_dataset(&data_args, &mut rc, None)?;
    let probe = rc.resolve("probe", a.probe, "test".to_string())?;
    let (history, probe_facts): (Vec<Quadruple>, &[Quadruple]) = match probe.as_str() {
        "test" => (ds.train.iter().chain(&ds.valid).copied().collect(), &ds.test),
        "valid" => (ds.train.clone(), &ds.valid),
        "train" => {
            // earlier training snapshots against the last one
            let last = ds.train.iter().map(|q| q.time).max().unwrap_or(0);
            let hist: Vec<_> = ds.train.iter().filter(|q| q.time < last).copied().collect();
            let tail: Vec<_> = ds.train.iter().filter(|q| q.time == last).copied().collect();
            return finish_stats(recurrence_stats(&hist, &tail), a.csv, rc, out);
        }
        other => return Err(Failure::Usage(format!("unknown probe split {other:?}"))),
    };
    finish_stats(recurrence_stats(&history, probe_facts), a.csv, rc, out)
}

fn finish_stats(s: crate::vocab::RecurrenceStats, csv: Option<PathBuf>, rc: RunConfig, out: &mut Vec<u8>) -> CliResult {
    emit(out, &s.to_key_value_lines())?;
    if let Some(path) = csv {
        let text = format!(
            "metric,value\nfact_repeat_rate,{:.6}\ngroup_repeat_rate,{:.6}\nprobe_facts,{}\nprobe_groups,{}\n",
            s.fact_repeat_rate, s.group_repeat_rate, s.probe_facts, s.probe_groups
        );
        write_artifact(&path, &text, &rc)?;
    }
    Ok(())
}

fn synth(a: SynthArgs, mut rc: RunConfig, out: &mut Vec<u8>) -> CliResult {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        num_entities: rc.resolve("entities", a.entities, defaults.num_entities)?,
        num_relations: rc.resolve("relations", a.relations, defaults.num_relations)?,
        num_snapshots: rc.resolve("snapshots", a.snapshots, defaults.num_snapshots)?,
        facts_per_snapshot: rc.resolve("facts_per_snapshot", a.facts_per_snapshot, defaults.facts_per_snapshot)?,
        recurrence: rc.resolve("recurrence", a.recurrence, defaults.recurrence)?,
        seed: rc.resolve("seed", a.seed, defaults.seed)?,
        fixed_objects: rc.resolve("fixed_objects", a.fixed_objects, defaults.fixed_objects)?,
    };
    let scheme = rc.resolve("split", a.split, SplitScheme::ThreeWay)?;
    let reciprocal = rc.resolve("reciprocal", a.reciprocal, true)?;
    let dir = PathBuf::from(require(rc.resolve_opt::<String>("out", a.out)?, "out")?);
    let generated = generate(&cfg)?;
    let split = chronological_split(&generated.sequence.facts(), scheme)?;
    let mut ds = Dataset::from_raw_splits(cfg.meta(), split.train, split.valid, split.test)?;
    if reciprocal {
        ds.augment()?;
    }
    let mut extra: Vec<(String, String)> = rc
        .to_key_values()
        .iter()
        .filter(|(k, _)| *k != "provenance")
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    extra.push((
        "realized_repeat_rate".into(),
        format!("{:.6}", generated.realized_repeat_rate),
    ));
    extra.push((
        "boundaries".into(),
        split
            .boundaries
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(","),
    ));
    ds.save(&dir, &extra)?;
    emit(
        out,
        &format!(
            "facts={}\nrealized_repeat_rate={:.6}\n",
            generated.sequence.num_facts(),
            generated.realized_repeat_rate
        ),
    )
}

fn resolve_train_config(
    flags: &TrainFlags,
    alpha: Option<f64>,
    present: Option<PresentValue>,
    rc: &mut RunConfig,
    default_alpha: f64,
) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let reduction = match rc.resolve("loss", flags.loss.clone(), "sum".to_string())?.as_str() {
        "sum" => LossReduction::Sum,
        "mean" => LossReduction::Mean,
        other => return Err(Failure::Usage(format!("unknown --loss {other:?}"))),
    };
    let cfg = TrainConfig {
        alpha: rc.resolve("alpha", alpha, default_alpha)?,
        dim: rc.resolve("dim", flags.dim, d.dim)?,
        learning_rate: rc.resolve("lr", flags.lr, d.learning_rate)?,
        batch_size: rc.resolve("batch_size", flags.batch_size, d.batch_size)?,
        epochs: rc.resolve("epochs", flags.epochs, d.epochs)?,
        seed: rc.resolve("seed", flags.seed, d.seed)?,
        mask: MaskStyle {
            magnitude: rc.resolve("mask_magnitude", flags.mask_magnitude, d.mask.magnitude)?,
            present: rc.resolve("mask_present", present, d.mask.present)?,
        },
        reduction,
        patience: rc.resolve_opt("patience", flags.patience)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn dataset_alpha(dir: &Path) -> f64 {
    dir.file_name()
        .and_then(|n| n.to_str())
        .and_then(default_alpha)
        .unwrap_or(TrainConfig::default().alpha)
}

fn train(a: TrainArgs, mut rc: RunConfig, out: &mut Vec<u8>) -> CliResult {
    let ckpt_path = PathBuf::from(require(rc.resolve_opt::<String>("out", a.out)?, "out")?);
    let (ds, dir) = load_dataset(&a.data, &mut rc, None)?;
    let cfg = resolve_train_config(&a.train, a.alpha, a.mask_present, &mut rc, dataset_alpha(&dir))?;
    let trained = fit_with_observer(&ds, &cfg, |e| {
        eprintln!("epoch {} loss {:.4} ({:.1}s)", e.epoch, e.loss, e.seconds);
    })?;
    let ckpt = Checkpoint {
        params: trained.params,
        num_snapshots: ds.meta.num_snapshots,
        mask_magnitude: cfg.mask.magnitude as f32,
        alpha: cfg.alpha as f32,
    };
    ckpt.save(&ckpt_path)?;
    let mut side = rc.to_key_values();
    side.set("data", dir.display().to_string());
    write_sidecar(&ckpt_path, &side)?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = ckpt_path.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    write_artifact(&log_path, &trained.log.to_csv(), &rc)?;
    let last = trained.log.epochs.last().map_or(f64::NAN, |e| e.loss);
    emit(
        out,
        &format!(
            "checkpoint={}\nepochs={}\nbest_epoch={}\nfinal_loss={last:.6}\n",
            ckpt_path.display(),
            trained.log.epochs.len(),
            trained.log.best_epoch
        ),
    )
}

struct EvalSetup {
    ckpt: Checkpoint,
    sidecar: Option<KeyValues>,
    ds: Dataset,
    dir: PathBuf,
    vocab: HistVocab,
    filter: FilterIndex,
    split: String,
    config: EvalConfig,
}

impl EvalSetup {
    fn facts(&self) -> &[Quadruple] {
        if self.split == "valid" {
            &self.ds.valid
        } else {
            &self.ds.test
        }
    }

    fn run(&self, mode: Mode, alpha: f64) -> CliResult<EvalSummary> {
        let cfg = EvalConfig {
            mode,
            alpha,
            ..self.config
        };
        Ok(evaluate(
            &self.ckpt.params,
            self.facts(),
            &self.vocab,
            &self.filter,
            &cfg,
        )?)
    }
}

fn eval_setup(f: &EvalFlags, rc: &mut RunConfig) -> CliResult<EvalSetup> {
    let ckpt = Checkpoint::load(&f.checkpoint)?;
    rc.resolve("checkpoint", Some(f.checkpoint.display().to_string()), String::new())?;
    let sidecar = read_sidecar(&f.checkpoint)?;
    let (ds, dir) = load_dataset(&f.data, rc, sidecar.as_ref())?;
    if ds.meta.num_entities as usize != ckpt.params.num_entities()
        || ds.model_relations() as usize != ckpt.params.num_relations()
    {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} entities/{} relations, dataset has {}/{}",
            ckpt.params.num_entities(),
            ckpt.params.num_relations(),
            ds.meta.num_entities,
            ds.model_relations()
        ))
        .into());
    }
    let split = rc.resolve("split", f.split.clone(), "test".to_string())?;
    if split != "test" && split != "valid" {
        return Err(Failure::Usage(format!("--split must be test or valid, got {split:?}")));
    }
    let regime = rc.resolve("filter", f.filter, FilterRegime::Static)?;
    let source = rc.resolve("filter_source", f.filter_source.clone(), "all".to_string())?;
    let filter = match source.as_str() {
        "all" => FilterIndex::build(ds.all_facts(), regime),
        "train" => FilterIndex::build(&ds.train, regime),
        other => return Err(Failure::Usage(format!("unknown --filter-source {other:?}"))),
    };
    let absorb_valid = rc.resolve("absorb_valid", f.absorb_valid, false)?;
    let mut known = ds.train.clone();
    if absorb_valid && split == "test" {
        known.extend_from_slice(&ds.valid);
    }
    let seq = group_snapshots(&known);
    let vocab = HistVocab::from_sequence(&seq, seq.len());
    let alpha = rc.resolve("alpha", f.alpha, decimal(ckpt.alpha))?;
    let present = rc.resolve("mask_present", f.mask_present, PresentValue::Zero)?;
    let config = EvalConfig {
        alpha,
        mode: Mode::Full,
        mask: MaskStyle {
            magnitude: decimal(ckpt.mask_magnitude),
            present,
        },
        num_relations: ds.meta.num_relations,
        augmented: ds.is_augmented(),
    };
    Ok(EvalSetup {
        ckpt,
        sidecar,
        ds,
        dir,
        vocab,
        filter,
        split,
        config,
    })
}

fn report_lines(s: &EvalSummary, split: &str, alpha: f64) -> String {
    let mut text = format!("split={split}\nalpha={alpha}\n");
    text.push_str(&s.overall.to_key_value_lines());
    for r in [&s.object, &s.subject] {
        if r.count == 0 {
            continue;
        }
        for line in r.to_key_value_lines().lines() {
            if let Some((k, v)) = line.split_once('=') {
                if matches!(k, "count" | "mrr" | "hits1" | "hits3" | "hits10") {
                    text.push_str(&format!("{}.{k}={v}\n", r.direction));
                }
            }
        }
    }
    text
}

fn eval(a: EvalArgs, mut rc: RunConfig, out: &mut Vec<u8>) -> CliResult {
    let setup = eval_setup(&a.eval, &mut rc)?;
    let mode = rc.resolve("mode", a.mode, Mode::Full)?;
    let summary = setup.run(mode, setup.config.alpha)?;
    emit(out, &report_lines(&summary, &setup.split, setup.config.alpha))?;
    if let Some(path) = a.per_snapshot_csv {
        write_artifact(&path, &summary.per_snapshot_csv(), &rc)?;
    }
    Ok(())
}

pub const ABLATION_HEADER: &str = "mode,mrr,hits1,hits3,hits10";

fn ablation_row(mode: Mode, r: &EvalReport) -> String {
    format!("{mode},{}\n", r.metrics_csv())
}

fn ablate(a: AblateArgs, mut rc: RunConfig, out: &mut Vec<u8>) -> CliResult {
    let setup = eval_setup(&a.eval, &mut rc)?;
    let mut csv = format!("{ABLATION_HEADER}\n");
    for mode in Mode::ALL {
        let s = setup.run(mode, setup.config.alpha)?;
        csv.push_str(&ablation_row(mode, &s.overall));
    }
    emit(out, &csv)?;
    if let Some(path) = a.out {
        write_artifact(&path, &csv, &rc)?;
    }
    Ok(())
}

pub const SWEEP_HEADER: &str = "alpha,mrr,hits1,hits3,hits10";

fn sweep(a: SweepArgs, mut rc: RunConfig, out: &mut Vec<u8>) -> CliResult {
    let setup = eval_setup(&a.eval, &mut rc)?;
    let mut csv = format!("{SWEEP_HEADER}\n");
    let alphas: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
    if a.retrain {
        rc.resolve("retrain", Some(true), false)?;
        // the checkpoint's own training settings fill in anything unset
        let mut base = setup.sidecar.clone().unwrap_or_default();
        for (k, v) in rc.to_key_values().iter() {
            base.set(k, v);
        }
        let mut train_rc = RunConfig::new(base);
        let template = resolve_train_config(
            &a.train,
            None,
            a.eval.mask_present,
            &mut train_rc,
            dataset_alpha(&setup.dir),
        )?;
        for &alpha in &alphas {
            let cfg = TrainConfig {
                alpha,
                ..template.clone()
            };
            let trained = crate::train::fit(&setup.ds, &cfg)?;
            let eval_cfg = EvalConfig { alpha, ..setup.config };
            let s = evaluate(&trained.params, setup.facts(), &trained.vocab, &setup.filter, &eval_cfg)?;
            csv.push_str(&format!("{alpha:.1},{}\n", s.overall.metrics_csv()));
        }
    } else {
        for &alpha in &alphas {
            let s = setup.run(Mode::Full, alpha)?;
            csv.push_str(&format!("{alpha:.1},{}\n", s.overall.metrics_csv()));
        }
    }
    emit(out, &csv)?;
    if let Some(path) = a.out {
        write_artifact(&path, &csv, &rc)?;
    }
    Ok(())
}

fn predict(a: PredictArgs, mut rc: RunConfig, out: &mut Vec<u8>) -> CliResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let sidecar = read_sidecar(&a.checkpoint)?;
    let (ds, _) = load_dataset(&a.data, &mut rc, sidecar.as_ref())?;
    let seq = ds.train_snapshots();
    let vocab = HistVocab::from_sequence(&seq, seq.len());
    let topk = rc.resolve("topk", a.topk, 10usize)?;
    let alpha = rc.resolve("alpha", a.alpha, decimal(ckpt.alpha))?;
    let mode = rc.resolve("mode", a.mode, Mode::Full)?;
    let present = rc.resolve("mask_present", a.mask_present, PresentValue::Zero)?;
    let mask = MaskStyle {
        magnitude: decimal(ckpt.mask_magnitude),
        present,
    };
    let query = Query::new(a.subject, a.relation, a.time);
    ckpt.params.check_query(&query)?;
    let predictor = Predictor::new(&ckpt.params, &vocab, mask, alpha, mode)?;
    let scores = predictor.scores(&query);
    let ranking = crate::model::rank_entities(scores.combined.as_slice());
    let mut text = String::new();
    for (i, &e) in ranking.iter().take(topk).enumerate() {
        text.push_str(&format!(
            "{},{e},{:.6},{:.6}\n",
            i + 1,
            scores.combined.as_slice()[e as usize],
            scores.copy_share(e as usize)
        ));
    }
    emit(out, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_tables_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn decimal_widening_keeps_short_form() {
        assert_eq!(decimal(0.8), 0.8);
        assert_eq!(decimal(100.0), 100.0);
    }
}
