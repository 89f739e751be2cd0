//! One function per verb. Each returns the run directory it wrote.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcl_core::corpus::{corpus_stats, StatsReport};
use rcl_core::eval::triplet_dot_report;
use rcl_core::model::represent_many;
use rcl_core::selection::StrongIndex;
use rcl_core::similarity::{build_semantic_index, build_topk_index, similarity_histogram, PreparedSet};
use rcl_core::synth::{generate, SynthConfig};
use rcl_core::trainer::{train_with, TrainEvent};
use rcl_core::{
    build_sequences, evaluate, k_core_filter, load_interactions, EvalReport, InputFormat, LossVariant, Metric, ModelParams,
    SequenceRecord, SequenceSet, SimilarityIndex, TrainConfig, TrainOutcome,
};

use crate::run_dir::{effective_config, RunDir};
use crate::Common;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn records(self, set: &SequenceSet) -> &[SequenceRecord] {
        match self {
            Split::Train => &set.train,
            Split::Valid => &set.valid,
            Split::Test => &set.test,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Location of a preprocessed sequence set; defaults to the data directory.
#[derive(Debug, Clone, Args)]
pub struct SetArg {
    /// Directory written by `preprocess` or `synth` (its `sequences/` folder).
    #[arg(long = "set", value_name = "DIR")]
    pub set: Option<PathBuf>,
}

impl SetArg {
    fn resolve(&self, common: &Common) -> PathBuf {
        self.set.clone().unwrap_or_else(|| common.data_dir.clone())
    }

    fn load(&self, common: &Common) -> Result<(PathBuf, SequenceSet)> {
        let dir = self.resolve(common);
        let set = SequenceSet::load(&dir).with_context(|| format!("loading sequence set from {}", dir.display()))?;
        Ok((dir, set))
    }
}

fn parse_ks(text: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = text
        .split(',')
        .map(|k| k.trim().parse().with_context(|| format!("bad cutoff `{k}`")))
        .collect::<Result<_>>()?;
    if ks.contains(&0) {
        bail!("cutoffs must be positive");
    }
    Ok(ks)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))
}

fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    write_with(path, |w| params.write_checkpoint(w))
}

fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    Ok(ModelParams::read_checkpoint(std::io::BufReader::new(file))?)
}

fn format_from_path(path: &Path) -> InputFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("dat") => InputFormat::MovielensDat,
        Some("csv") => InputFormat::Csv,
        _ => InputFormat::Tsv,
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Interaction file; defaults to `ratings.dat` in the data directory.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// tsv, csv or movielens-dat; guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    /// Minimum interactions per user and per item.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

pub fn preprocess(common: &Common, args: &PreprocessArgs) -> Result<PathBuf> {
    let cfg = effective_config(common)?;
    let input = args.input.clone().unwrap_or_else(|| common.data_dir.join("ratings.dat"));
    let format = match &args.format {
        Some(f) => f.parse()?,
        None => format_from_path(&input),
    };
    let raw = load_interactions(&input, format).with_context(|| format!("loading {}", input.display()))?;
    let filtered = k_core_filter(&raw, args.k)?;
    let set = build_sequences(&filtered, cfg.max_len)?;
    let run = RunDir::create(
        &common.out,
        "preprocess",
        &cfg,
        &[("input", input.display().to_string()), ("format", format!("{format:?}")), ("k", args.k.to_string())],
    )?;
    set.save(run.file("sequences"))?;
    let before = StatsReport::from_corpus(&raw);
    let after = corpus_stats(&set);
    run.write("raw_stats.txt", before.to_kv())?;
    println!("raw:      {before}");
    println!("filtered: {after}");
    Ok(run.path)
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub set: SetArg,
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
    /// Model whose representations feed the semantic metric.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
}

fn build_index(cfg: &TrainConfig, records: &[SequenceRecord], checkpoint: Option<&Path>) -> Result<SimilarityIndex> {
    if cfg.metric == Metric::Semantic {
        let Some(path) = checkpoint else {
            bail!("the semantic metric needs --checkpoint");
        };
        let params = read_checkpoint(path)?;
        let seqs: Vec<&[u32]> = records.iter().map(|r| r.items.as_slice()).collect();
        Ok(build_semantic_index(&represent_many(&params, &seqs)?, cfg.alpha, cfg.workers)?)
    } else {
        Ok(build_topk_index(records, cfg.metric, cfg.alpha, cfg.workers)?)
    }
}

pub fn index(common: &Common, args: &IndexArgs) -> Result<PathBuf> {
    let cfg = effective_config(common)?;
    let (dir, set) = args.set.load(common)?;
    let records = args.split.records(&set);
    let index = build_index(&cfg, records, args.checkpoint.as_deref())?;
    let run = RunDir::create(
        &common.out,
        "index",
        &cfg,
        &[
            ("set", dir.display().to_string()),
            ("split", args.split.name().into()),
            ("checkpoint", format!("{:?}", args.checkpoint)),
        ],
    )?;
    write_with(&run.file("index.bin"), |w| index.write_binary(w))?;
    write_with(&run.file("index.csv"), |w| index.write_csv(w))?;
    println!(
        "{} index over {} {} sequences: alpha={} K={}",
        index.metric,
        index.len(),
        args.split.name(),
        index.alpha,
        index.k
    );
    Ok(run.path)
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[command(flatten)]
    pub set: SetArg,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Pairs scoring above this value are reported separately.
    #[arg(long, default_value_t = 0.7)]
    pub threshold: f64,
}

pub fn histogram(common: &Common, args: &HistogramArgs) -> Result<PathBuf> {
    let cfg = effective_config(common)?;
    if cfg.metric == Metric::Semantic {
        bail!("histograms are defined for the static metrics only");
    }
    let (dir, set) = args.set.load(common)?;
    let records = args.split.records(&set);
    let prepared = PreparedSet::new(records, cfg.metric)?;
    let hist = similarity_histogram(records, &prepared, args.bins, args.threshold)?;
    let run = RunDir::create(
        &common.out,
        "histogram",
        &cfg,
        &[
            ("set", dir.display().to_string()),
            ("split", args.split.name().into()),
            ("bins", args.bins.to_string()),
            ("threshold", args.threshold.to_string()),
        ],
    )?;
    write_with(&run.file("histogram.csv"), |w| hist.write_csv(w))?;
    println!(
        "{} different-target pairs, {} ({:.3}%) above {} {}",
        hist.pairs,
        hist.above,
        100.0 * hist.share_above(),
        cfg.metric,
        args.threshold
    );
    Ok(run.path)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub set: SetArg,
    /// Cutoffs of the final test evaluation.
    #[arg(long, default_value = "5,10,20")]
    pub ks: String,
}

/// Trains with step and epoch logs as JSON lines and periodic checkpoints
/// under `run`.
fn train_logged(cfg: &TrainConfig, set: &SequenceSet, run: &RunDir) -> Result<TrainOutcome> {
    let mut steps = create(&run.file("steps.jsonl"))?;
    let mut epochs = create(&run.file("epochs.jsonl"))?;
    let ckpt_dir = run.file("checkpoints");
    if cfg.checkpoint_every > 0 {
        fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    }
    let mut failure: Option<anyhow::Error> = None;
    let outcome = train_with(cfg, set, &mut |event| {
        if failure.is_some() {
            return;
        }
        let res: Result<()> = match event {
            TrainEvent::Step(log) => serde_json::to_writer(&mut steps, log)
                .map_err(anyhow::Error::from)
                .and_then(|_| Ok(steps.write_all(b"\n")?)),
            TrainEvent::Epoch(log, params) => serde_json::to_writer(&mut epochs, log)
                .map_err(anyhow::Error::from)
                .and_then(|_| Ok(epochs.write_all(b"\n")?))
                .and_then(|_| {
                    if cfg.checkpoint_every > 0 && (log.epoch + 1) % cfg.checkpoint_every == 0 {
                        write_checkpoint(&ckpt_dir.join(format!("epoch-{:04}.bin", log.epoch + 1)), params)
                    } else {
                        Ok(())
                    }
                }),
        };
        failure = res.err();
    })?;
    if let Some(e) = failure {
        return Err(e.context("writing training logs"));
    }
    steps.flush()?;
    epochs.flush()?;
    Ok(outcome)
}

pub fn train(common: &Common, args: &TrainArgs) -> Result<PathBuf> {
    let cfg = effective_config(common)?;
    let ks = parse_ks(&args.ks)?;
    let (dir, set) = args.set.load(common)?;
    let run = RunDir::create(&common.out, "train", &cfg, &[("set", dir.display().to_string()), ("ks", args.ks.clone())])?;
    let outcome = train_logged(&cfg, &set, &run)?;
    write_checkpoint(&run.file("model.bin"), &outcome.params)?;
    if let Some(step) = outcome.diverged_at {
        bail!("training diverged at step {step}; the last finite parameters are in model.bin");
    }
    let report = evaluate(&outcome.params, &set.test, &ks, &cfg.variant.to_string())?;
    write_with(&run.file("eval.csv"), |w| report.write_csv(w))?;
    print!("{report}");
    if let Some(best) = outcome.best_epoch {
        println!("best validation epoch {} of {}", best + 1, outcome.epochs.len());
    }
    Ok(run.path)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub set: SetArg,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long, default_value = "5,10,20")]
    pub ks: String,
    /// Also report mean center/positive dot products on this many train
    /// centers.
    #[arg(long, value_name = "CENTERS")]
    pub dots: Option<usize>,
}

pub fn eval(common: &Common, args: &EvalArgs) -> Result<PathBuf> {
    let cfg = effective_config(common)?;
    let ks = parse_ks(&args.ks)?;
    let (dir, set) = args.set.load(common)?;
    let params = read_checkpoint(&args.checkpoint)?;
    if params.config.item_count != set.item_count {
        bail!(
            "checkpoint covers {} items but the sequence set has {}",
            params.config.item_count,
            set.item_count
        );
    }
    let records = args.split.records(&set);
    let report = evaluate(&params, records, &ks, &cfg.variant.to_string())?;
    let run = RunDir::create(
        &common.out,
        "eval",
        &cfg,
        &[
            ("set", dir.display().to_string()),
            ("checkpoint", args.checkpoint.display().to_string()),
            ("split", args.split.name().into()),
            ("ks", args.ks.clone()),
            ("dots", format!("{:?}", args.dots)),
        ],
    )?;
    write_with(&run.file("eval.csv"), |w| report.write_csv(w))?;
    print!("{report}");
    if let Some(centers) = args.dots {
        let sim = build_index(&cfg, &set.train, Some(&args.checkpoint))?;
        let strong = StrongIndex::build(&set.train);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dots = triplet_dot_report(&params, &set.train, &strong, &sim, centers, &mut rng)?;
        write_with(&run.file("dots.csv"), |w| dots.write_csv(w))?;
        println!(
            "mean dot over {} centers: strong {:.4} weak {:.4} negative {:.4}",
            dots.centers, dots.strong, dots.weak, dots.negative
        );
    }
    Ok(run.path)
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub set: SetArg,
    /// Comma-separated loss variants.
    #[arg(long, default_value = "weak,strong,unweight,wrcl,three_pairs")]
    pub variants: String,
    /// Comma-separated similarity metrics.
    #[arg(long, default_value = "jaccard,ngram2,tfidf,levenshtein,semantic")]
    pub metrics: String,
    #[arg(long, default_value = "5,10")]
    pub ks: String,
}

pub fn ablate(common: &Common, args: &AblateArgs) -> Result<PathBuf> {
    let base_cfg = effective_config(common)?;
    let ks = parse_ks(&args.ks)?;
    let variants: Vec<LossVariant> = args.variants.split(',').map(|v| v.parse()).collect::<Result<_, _>>()?;
    let metrics: Vec<Metric> = args.metrics.split(',').map(|m| m.parse()).collect::<Result<_, _>>()?;
    let (dir, set) = args.set.load(common)?;
    let run = RunDir::create(
        &common.out,
        "ablate",
        &base_cfg,
        &[
            ("set", dir.display().to_string()),
            ("variants", args.variants.clone()),
            ("metrics", args.metrics.clone()),
            ("ks", args.ks.clone()),
        ],
    )?;
    let mut rows = Vec::new();
    for &metric in &metrics {
        for &variant in &variants {
            let cfg = TrainConfig {
                metric,
                variant,
                ..base_cfg.clone()
            };
            log::info!("training {variant} with {metric}");
            let outcome = rcl_core::train(&cfg, &set)?;
            if let Some(step) = outcome.diverged_at {
                bail!("{variant} with {metric} diverged at step {step}");
            }
            let report = evaluate(&outcome.params, &set.test, &ks, &variant.to_string())?;
            rows.push((metric, report));
        }
    }
    write_with(&run.file("ablation.csv"), |w| write_ablation(w, &ks, &rows))?;
    let mut table = Vec::new();
    write_ablation(&mut table, &ks, &rows)?;
    print!("{}", String::from_utf8_lossy(&table).replace(',', "\t"));
    Ok(run.path)
}

/// `variant,metric,hr@k...,ndcg@k...`, one row per trained pair.
fn write_ablation<W: Write>(mut w: W, ks: &[usize], rows: &[(Metric, EvalReport)]) -> std::io::Result<()> {
    let mut header = String::from("variant,metric");
    for k in ks {
        header.push_str(&format!(",hr@{k}"));
    }
    for k in ks {
        header.push_str(&format!(",ndcg@{k}"));
    }
    writeln!(w, "{header}")?;
    for (metric, r) in rows {
        let mut line = format!("{},{}", r.variant, metric);
        for &k in ks {
            line.push_str(&format!(",{:.6}", r.hr_at(k).unwrap_or(f64::NAN)));
        }
        for &k in ks {
            line.push_str(&format!(",{:.6}", r.ndcg_at(k).unwrap_or(f64::NAN)));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub users: usize,
    #[arg(long, default_value_t = 500)]
    pub items: usize,
    #[arg(long, default_value_t = 20)]
    pub intents: usize,
    /// Probability of an out-of-pool item at each non-target position.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Share of users that follow their intent's route.
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    #[arg(long, default_value_t = 5)]
    pub min_len: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
}

pub fn synth(common: &Common, args: &SynthArgs) -> Result<PathBuf> {
    let cfg = effective_config(common)?;
    let synth_cfg = SynthConfig {
        users: args.users,
        items: args.items,
        intents: args.intents,
        noise: args.noise,
        overlap: args.overlap,
        min_len: args.min_len,
        max_len: args.max_len,
        seed: cfg.seed,
    };
    let data = generate(&synth_cfg)?;
    let set = build_sequences(&data.to_corpus(), cfg.max_len)?;
    let run = RunDir::create(
        &common.out,
        "synth",
        &cfg,
        &[("synth", serde_json::to_string(&synth_cfg)?)],
    )?;
    write_with(&run.file("interactions.tsv"), |w| data.write_tsv(w))?;
    set.save(run.file("sequences"))?;
    println!("{}", corpus_stats(&set));
    Ok(run.path)
}
