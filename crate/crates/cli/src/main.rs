//! `egoleak`: command-line front end for the leakage-measurement toolkit.
//!
//! Subcommands wire the library stages together: `synth`/`ingest` produce
//! dataset bundles, `train-embed`/`train-clf` fit heads, `retrieve`/`attack`/
//! `explain` evaluate them, and `report` merges run reports into one CSV.
//! Every run writes a run manifest (command, full config echo, digest) so it
//! can be reproduced byte for byte; all randomness is seed-pinned. Module
//! errors exit with code 1 and a single machine-parsable line; usage errors
//! exit with code 2. Set `EGOLEAK_LOG` to any nonempty value for progress
//! detail on stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use egoleak_core::attack::{
    attack_rows_to_csv, attack_sweep, train_classifier, Aggregator, Capability, ClassifierConfig,
    ClassifierHead, EgoWeightScheme, RetrieverSpec, SweepOptions,
};
use egoleak_core::data::{Attribute, Dataset, RetrievalTask, Split, View};
use egoleak_core::error::{Error, Result};
use egoleak_core::explain::{progressive_mask, write_mask_trace, MaskOptions};
use egoleak_core::metrics::hit_rate_at_k;
use egoleak_core::report::{merge_to_csv, ReportDocument};
use egoleak_core::retrieval::{
    run_retrieval_task, task_positives, write_rankings_jsonl, RetrievalOptions,
};
use egoleak_core::synth::{generate, SynthConfig};
use egoleak_core::train::{
    load_head_pair, save_head_pair, train_embedding, write_loss_curve, PositiveMode, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "egoleak",
    version,
    about = "Measure identity and demographic leakage in egocentric video embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired-view dataset bundle from a config.
    Synth(SynthArgs),
    /// Validate a manifest plus embedding files and write a dataset bundle.
    Ingest(IngestArgs),
    /// Train paired ego/exo projection heads with the contrastive objective.
    TrainEmbed(TrainEmbedArgs),
    /// Train a demographic classifier head on one view.
    TrainClf(TrainClfArgs),
    /// Rank a retrieval task's gallery and report hit rates.
    Retrieve(RetrieveArgs),
    /// Run a demographic attack sweep and report accuracy rows.
    Attack(AttackArgs),
    /// Progressively mask a clip's frames until a loss threshold is reached.
    Explain(ExplainArgs),
    /// Merge run reports into one plot-ready CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Generator config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Clip manifest (JSON array).
    #[arg(long)]
    manifest: PathBuf,
    /// Ego-view embedding file.
    #[arg(long)]
    ego: PathBuf,
    /// Exo-view embedding file.
    #[arg(long)]
    exo: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainEmbedArgs {
    /// Dataset bundle directory.
    #[arg(long)]
    data: PathBuf,
    /// Training config (JSON). Flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Positive-pair mode: individual | situational.
    #[arg(long)]
    mode: Option<String>,
    /// Optimizer steps (required unless --config provides it).
    #[arg(long)]
    steps: Option<u64>,
    /// Seed (required unless --config provides it).
    #[arg(long)]
    seed: Option<u64>,
    /// Output checkpoint path; the loss CSV lands beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainClfArgs {
    /// Dataset bundle directory.
    #[arg(long)]
    data: PathBuf,
    /// Target attribute: gender | race | age.
    #[arg(long)]
    attribute: String,
    /// View whose clips train the head: ego | exo.
    #[arg(long, default_value = "ego")]
    view: String,
    /// Training config (JSON). Flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Optimizer steps (required unless --config provides it).
    #[arg(long)]
    steps: Option<u64>,
    /// Seed (required unless --config provides it).
    #[arg(long)]
    seed: Option<u64>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Dataset bundle directory.
    #[arg(long)]
    data: PathBuf,
    /// Task: ego2ego | ego2exo | scene | moment.
    #[arg(long)]
    task: String,
    /// Projection-head checkpoint; raw frame means when omitted.
    #[arg(long)]
    heads: Option<PathBuf>,
    /// Hit-rate cutoffs (repeatable).
    #[arg(long = "k", default_values_t = [1usize, 5usize])]
    ks: Vec<usize>,
    /// Restrict queries and gallery to one split: train | test.
    #[arg(long)]
    split: Option<String>,
    /// Frames pooled per clip.
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Also dump the per-query rankings as JSONL here.
    #[arg(long)]
    rankings: Option<PathBuf>,
    /// Output report path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// Dataset bundle directory (queries).
    #[arg(long)]
    data: PathBuf,
    /// Target attribute: gender | race | age.
    #[arg(long)]
    attribute: String,
    /// Adversary tier: 1 (zero-shot) or 2 (fine-tuned checkpoints).
    #[arg(long)]
    capability: u8,
    /// Query view: ego | exo.
    #[arg(long, default_value = "ego")]
    view: String,
    /// Augment each ego query with retrieved exo votes.
    #[arg(long)]
    raa: bool,
    /// Retrieval pool bundle (defaults to --data).
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Support sizes M (repeatable; default 3). Requires --raa.
    #[arg(long = "m")]
    ms: Vec<usize>,
    /// Vote aggregation: hard | soft.
    #[arg(long, default_value = "soft")]
    agg: String,
    /// Ego-vote weighting: uniform | half.
    #[arg(long, default_value = "uniform")]
    weights: String,
    /// Aggregate per-clip attacks into one prediction per identity.
    #[arg(long)]
    per_identity: bool,
    /// Query split: train | test | all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Frames pooled per clip.
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Seed for the zero-shot tier's untrained heads.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ego classifier checkpoint (tier 2).
    #[arg(long)]
    ego_clf: Option<PathBuf>,
    /// Exo classifier checkpoint (tier 2).
    #[arg(long)]
    exo_clf: Option<PathBuf>,
    /// Projection-head checkpoint for retrieval (tier 2; raw otherwise).
    #[arg(long)]
    heads: Option<PathBuf>,
    /// Output report path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    /// Classifier checkpoint to probe.
    #[arg(long)]
    clf: PathBuf,
    /// Dataset bundle holding the clip.
    #[arg(long)]
    data: PathBuf,
    /// Clip id to mask.
    #[arg(long)]
    clip: String,
    /// True class label (e.g. Female, Asian, Young).
    #[arg(long)]
    label: String,
    /// Masking rounds to run.
    #[arg(long, default_value_t = 8)]
    rounds: usize,
    /// Frames masked per round.
    #[arg(long, default_value_t = 1)]
    units_per_round: usize,
    /// Stop once the masked loss reaches this value (default: never).
    #[arg(long, default_value_t = f64::MAX, hide_default_value = true)]
    threshold: f64,
    /// Output trace path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run report files to merge (repeatable).
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(1)
        }
    }
}

fn verbose() -> bool {
    std::env::var_os("EGOLEAK_LOG").is_some_and(|v| !v.is_empty())
}

macro_rules! vlog {
    ($($arg:tt)*) => {
        if verbose() {
            eprintln!($($arg)*);
        }
    };
}

/// Exclusive ownership of a run directory for the duration of one command.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<RunLock> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".egoleak.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::TaskNotRunnable(format!(
                    "run directory '{}' is owned by another process (remove '{}' if stale)",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::TrainEmbed(args) => cmd_train_embed(args),
        Command::TrainClf(args) => cmd_train_clf(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Report(args) => cmd_report(args),
    }
}

/// Write the run manifest that makes a file-producing command reproducible.
fn write_run_manifest(path: &Path, command: &str, config: serde_json::Value) -> Result<()> {
    ReportDocument::new(command, config).write(path)
}

/// Manifest path for commands whose main output is a single file.
fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}

fn parse_split_filter(raw: &str) -> Result<Option<Split>> {
    if raw == "all" {
        Ok(None)
    } else {
        raw.parse().map(Some)
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let config = SynthConfig::from_file(&args.config)?;
    let lock = RunLock::acquire(&args.out)?;
    let dataset = generate(&config)?;
    dataset.write_bundle(&args.out)?;
    write_run_manifest(&args.out.join("run.json"), "synth", serde_json::to_value(&config)?)?;
    drop(lock);
    println!("wrote {} clips to {}", dataset.clips().len(), args.out.display());
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let dataset = Dataset::ingest(&args.manifest, &args.ego, &args.exo)?;
    let lock = RunLock::acquire(&args.out)?;
    dataset.write_bundle(&args.out)?;
    let config = serde_json::json!({
        "manifest": args.manifest.display().to_string(),
        "ego": args.ego.display().to_string(),
        "exo": args.exo.display().to_string(),
    });
    write_run_manifest(&args.out.join("run.json"), "ingest", config)?;
    drop(lock);
    println!("validated {} clips into {}", dataset.clips().len(), args.out.display());
    Ok(())
}

fn cmd_train_embed(args: TrainEmbedArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => {
            let steps = args.steps.ok_or_else(|| {
                Error::InvalidConfig("--steps is required when no --config is given".into())
            })?;
            let seed = args.seed.ok_or_else(|| {
                Error::InvalidConfig("--seed is required when no --config is given".into())
            })?;
            TrainConfig::new(steps, seed)
        }
    };
    if let Some(mode) = &args.mode {
        config.positive_mode = mode.parse::<PositiveMode>()?;
    }
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;

    let dataset = Dataset::load_bundle(&args.data)?;
    vlog!("loaded {} clips from {}", dataset.clips().len(), args.data.display());
    let (pair, curve) = train_embedding(&dataset, &config)?;
    save_head_pair(&args.out, &pair)?;
    let loss_path = sibling_loss_csv(&args.out);
    write_loss_curve(&loss_path, &curve)?;
    write_run_manifest(&sibling_manifest(&args.out), "train-embed", serde_json::to_value(&config)?)?;
    let final_loss = curve.last().map(|p| p.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} steps (final loss {:.4}); wrote {} and {}",
        config.steps,
        final_loss,
        args.out.display(),
        loss_path.display()
    );
    Ok(())
}

/// Loss-curve path: the checkpoint's file name with `.loss.csv` appended.
fn sibling_loss_csv(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".loss.csv");
    out.with_file_name(name)
}

fn cmd_train_clf(args: TrainClfArgs) -> Result<()> {
    let attribute: Attribute = args.attribute.parse()?;
    let view: View = args.view.parse()?;
    let mut config = match &args.config {
        Some(path) => ClassifierConfig::from_file(path)?,
        None => {
            let steps = args.steps.ok_or_else(|| {
                Error::InvalidConfig("--steps is required when no --config is given".into())
            })?;
            let seed = args.seed.ok_or_else(|| {
                Error::InvalidConfig("--seed is required when no --config is given".into())
            })?;
            ClassifierConfig::new(steps, seed)
        }
    };
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;

    let dataset = Dataset::load_bundle(&args.data)?;
    let head = train_classifier(&dataset, attribute, view, &config)?;
    head.save(&args.out)?;
    let echo = serde_json::json!({
        "attribute": attribute.to_string(),
        "view": view.as_str(),
        "train": serde_json::to_value(&config)?,
    });
    write_run_manifest(&sibling_manifest(&args.out), "train-clf", echo)?;
    println!(
        "trained {} {} classifier for {} steps; wrote {}",
        view.as_str(),
        attribute,
        config.steps,
        args.out.display()
    );
    Ok(())
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<()> {
    let task: RetrievalTask = args.task.parse()?;
    let split = match &args.split {
        Some(raw) => parse_split_filter(raw)?,
        None => None,
    };
    if args.ks.is_empty() {
        return Err(Error::InvalidConfig("at least one --k is required".into()));
    }
    let dataset = Dataset::load_bundle(&args.data)?;
    let heads = match &args.heads {
        Some(path) => Some(load_head_pair(path)?),
        None => None,
    };
    let options = RetrievalOptions { split, frames: args.frames, ..Default::default() };
    vlog!("ranking task {task:?} over {} clips", dataset.clips().len());
    let rankings = run_retrieval_task(&dataset, task, heads.as_ref(), &options)?;
    let positives = task_positives(&dataset, task, &options)?;
    if let Some(path) = &args.rankings {
        write_rankings_jsonl(path, &rankings)?;
    }

    let mut metrics = Vec::new();
    for &k in &args.ks {
        let metric = hit_rate_at_k(&rankings, &positives, k)?;
        println!("HR@{k} = {:.4}  (n = {}, excluded = {})", metric.value, metric.n_evaluated, metric.n_excluded);
        metrics.push(metric);
    }
    let echo = serde_json::json!({
        "data": args.data.display().to_string(),
        "task": args.task,
        "heads": args.heads.as_ref().map(|p| p.display().to_string()),
        "k": args.ks,
        "split": args.split,
        "frames": args.frames,
    });
    ReportDocument::new("retrieve", echo).with_metrics(metrics).write(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_attack(args: AttackArgs) -> Result<()> {
    let attribute: Attribute = args.attribute.parse()?;
    let view: View = args.view.parse()?;
    let aggregator: Aggregator = args.agg.parse()?;
    let weight_scheme: EgoWeightScheme = args.weights.parse()?;
    let split = parse_split_filter(&args.split)?;
    let base_capability = Capability::from_tier(args.capability)?;
    if base_capability > Capability::Finetuned {
        return Err(Error::InvalidConfig(
            "--capability takes the base tier 1 or 2; tiers 3/4 come from --raa and --per-identity".into(),
        ));
    }
    if !args.ms.is_empty() && !args.raa {
        return Err(Error::InvalidConfig("--m requires --raa".into()));
    }
    let ms = if args.raa {
        if args.ms.is_empty() {
            vec![3]
        } else {
            args.ms.clone()
        }
    } else {
        // Base tiers report the single no-retrieval row.
        vec![0]
    };

    let dataset = Dataset::load_bundle(&args.data)?;
    let pool_store;
    let pool: &Dataset = match &args.pool {
        Some(path) => {
            pool_store = Dataset::load_bundle(path)?;
            &pool_store
        }
        None => &dataset,
    };

    let has_checkpoints =
        args.ego_clf.is_some() || args.exo_clf.is_some() || args.heads.is_some();
    let (ego_clf, exo_clf, head_pair) = match base_capability {
        Capability::ZeroShot => {
            if has_checkpoints {
                return Err(Error::InvalidConfig(
                    "capability 1 is the zero-shot tier; checkpoint flags need --capability 2".into(),
                ));
            }
            let ego_dim = dataset.table(View::Ego).dim();
            let exo_dim = dataset.table(View::Exo).dim();
            let ego = ClassifierHead::untrained(ego_dim, attribute, View::Ego, Default::default(), args.seed)?;
            let exo = ClassifierHead::untrained(exo_dim, attribute, View::Exo, Default::default(), args.seed)?;
            (ego, exo, None)
        }
        _ => {
            let ego_path = args.ego_clf.as_ref().ok_or_else(|| {
                Error::InvalidConfig("--capability 2 requires --ego-clf".into())
            })?;
            let exo_path = args.exo_clf.as_ref().ok_or_else(|| {
                Error::InvalidConfig("--capability 2 requires --exo-clf".into())
            })?;
            let pair = match &args.heads {
                Some(path) => Some(load_head_pair(path)?),
                None => None,
            };
            (ClassifierHead::load(ego_path)?, ClassifierHead::load(exo_path)?, pair)
        }
    };
    let retriever = match &head_pair {
        Some(pair) => RetrieverSpec::Heads(pair),
        None => RetrieverSpec::Raw,
    };

    let options = SweepOptions {
        attribute,
        base_capability,
        view,
        ms,
        aggregator,
        weight_scheme,
        split,
        per_identity: args.per_identity,
        frames: args.frames,
    };
    let rows = attack_sweep(&dataset, pool, retriever, &ego_clf, &exo_clf, &options)?;
    print!("{}", attack_rows_to_csv(&rows));

    let echo = serde_json::json!({
        "data": args.data.display().to_string(),
        "attribute": attribute.to_string(),
        "capability": args.capability,
        "view": view.as_str(),
        "raa": args.raa,
        "pool": args.pool.as_ref().map(|p| p.display().to_string()),
        "m": options.ms,
        "agg": aggregator.as_str(),
        "weights": weight_scheme.as_str(),
        "per_identity": args.per_identity,
        "split": args.split,
        "frames": args.frames,
        "seed": args.seed,
        "ego_clf": args.ego_clf.as_ref().map(|p| p.display().to_string()),
        "exo_clf": args.exo_clf.as_ref().map(|p| p.display().to_string()),
        "heads": args.heads.as_ref().map(|p| p.display().to_string()),
    });
    ReportDocument::new("attack", echo).with_attack_rows(rows).write(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_explain(args: ExplainArgs) -> Result<()> {
    let head = ClassifierHead::load(&args.clf)?;
    let dataset = Dataset::load_bundle(&args.data)?;
    let clip = dataset.clip(&args.clip)?;
    if clip.view != head.view() {
        return Err(Error::InvalidInput(format!(
            "clip '{}' is {} but the classifier was trained on {}",
            args.clip,
            clip.view.as_str(),
            head.view().as_str()
        )));
    }
    let label = head
        .classes()
        .iter()
        .position(|c| *c == args.label)
        .ok_or_else(|| {
            Error::MissingLabel(format!(
                "'{}' is not a {} class (expected one of {})",
                args.label,
                head.attribute(),
                head.classes().join(", ")
            ))
        })?;
    let units = dataset.frames_f64(&args.clip, clip.frame_count as usize)?;
    let options = MaskOptions::new(args.rounds, args.units_per_round, args.threshold);
    let trace = progressive_mask(&head, &units, label, &options)?;
    write_mask_trace(&args.out, &trace)?;
    let echo = serde_json::json!({
        "clf": args.clf.display().to_string(),
        "data": args.data.display().to_string(),
        "clip": args.clip,
        "label": args.label,
        "rounds": args.rounds,
        "units_per_round": args.units_per_round,
        "threshold": args.threshold,
    });
    write_run_manifest(&sibling_manifest(&args.out), "explain", echo)?;
    println!(
        "masked {} of {} frames over {} rounds (stop_round = {}); wrote {}",
        trace.units.len(),
        clip.frame_count,
        args.rounds,
        trace.stop_round,
        args.out.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut documents = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        documents.push(ReportDocument::read(path)?);
    }
    let csv = merge_to_csv(&documents);
    fs::write(&args.out, &csv)?;
    println!("merged {} reports into {}", documents.len(), args.out.display());
    Ok(())
}
