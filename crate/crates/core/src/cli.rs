//! Command-line front end: synthesize, train, fuse, evaluate, gradient-check
//! and predict.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audio::AudioChannelConfig;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{load_embeddings, parse_manifest, synth_generate, ClipRecord, DatasetSplit, Split, SynthConfig, Visual};
use crate::error::Error;
use crate::fusion::{build_fused, dlf_fit, dlf_predict, warm_start, FusionMode, FusionWeights, PredictionRecord, DEFAULT_HIDDEN_DIM};
use crate::gradsuite::{run_scope, Corruption, Scope, DEFAULT_SEEDS, TOLERANCE};
use crate::metrics::Metrics;
use crate::model::{Model, ModelConfig, PreparedClip, Preparer};
use crate::text::{EmbeddingTable, TextChannelConfig};
use crate::trainer::{baseline_metrics, evaluate, predict_all, train, TrainConfig};
use crate::traits::{Trait, TraitVector};
use crate::video::VideoChannelConfig;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "TRIMODAL_OUT";

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Bad flags, unknown keys, missing prerequisites.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A numeric check failed (gradient check, non-finite loss).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericFailure(pub String);

#[derive(Debug, Parser)]
#[command(name = "trimodal", version, about = "Tri-modal personality trait regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-size channels.
    Full,
    /// Narrow filter banks for single-core runs; same penultimate widths.
    Desk,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (default: $TRIMODAL_OUT or the current directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// Configuration override `section.field=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainTarget {
    Audio,
    Text,
    Video,
    Nnlb,
    Nnfb,
}

impl TrainTarget {
    fn name(self) -> &'static str {
        match self {
            TrainTarget::Audio => "audio",
            TrainTarget::Text => "text",
            TrainTarget::Video => "video",
            TrainTarget::Nnlb => "nnlb",
            TrainTarget::Nnfb => "nnfb",
        }
    }
}

#[derive(Debug, Args)]
pub struct ChannelPaths {
    /// Audio channel checkpoint (default: <out>/audio.ckpt).
    #[arg(long)]
    pub audio: Option<PathBuf>,
    /// Text channel checkpoint (default: <out>/text.ckpt).
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Video channel checkpoint (default: <out>/video.ckpt).
    #[arg(long)]
    pub video: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with planted trait signals.
    Synth {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train a channel or a fused network.
    Train {
        #[arg(long, value_enum)]
        modality: TrainTarget,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        channels: ChannelPaths,
        /// Initialize an NNFB run from a trained NNLB checkpoint.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Output checkpoint (default: <out>/<modality>.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit decision-level fusion weights on the validation split.
    FitDlf {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        channels: ChannelPaths,
        /// Output weights file (default: <out>/dlf_weights.txt).
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-trait MAE and accuracy of trained models on one split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Model checkpoint, repeatable.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Decision-level fusion weights; channels come from --audio/--text/--video.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        channels: ChannelPaths,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Add the train-label-mean baseline row.
        #[arg(long)]
        baseline: bool,
        /// Tab-separated output.
        #[arg(long)]
        tsv: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "ops")]
        scope: String,
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: usize,
        /// Scale one check's analytic gradient (negative control).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Score one clip.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        channels: ChannelPaths,
        #[arg(long)]
        wav: Option<PathBuf>,
        #[arg(long)]
        transcript: Option<String>,
        /// PNG frames, comma-separated.
        #[arg(long, value_delimiter = ',')]
        frames: Vec<PathBuf>,
        /// Feature file holding a record for --clip-id.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value = "clip")]
        clip_id: String,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
}

/// Every tunable value, addressable as `section.field` by `--set`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub audio: AudioChannelConfig,
    pub text: TextChannelConfig,
    pub video: VideoChannelConfig,
    pub train: TrainConfig,
    pub fusion: FusionSettings,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSettings {
    pub hidden_dim: usize,
}

impl Settings {
    pub fn new(preset: Preset) -> Self {
        let (audio, text) = match preset {
            Preset::Full => (AudioChannelConfig::default(), TextChannelConfig::default()),
            Preset::Desk => (AudioChannelConfig::desk(), TextChannelConfig::desk()),
        };
        Settings {
            audio,
            text,
            video: VideoChannelConfig::default(),
            train: TrainConfig::default(),
            fusion: FusionSettings {
                hidden_dim: DEFAULT_HIDDEN_DIM,
            },
            synth: SynthConfig::default(),
        }
    }

    /// Applies `key=value` overrides. Values are parsed as JSON, falling
    /// back to a plain string.
    pub fn apply(&mut self, overrides: &[String]) -> Result<(), UsageError> {
        let mut root = serde_json::to_value(&*self).expect("settings serialize");
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| UsageError(format!("override `{item}` is not KEY=VALUE")))?;
            let mut slot = &mut root;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|o| o.get_mut(part))
                    .ok_or_else(|| UsageError(format!("unknown setting `{key}`")))?;
            }
            *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        }
        *self = serde_json::from_value(root).map_err(|e| UsageError(format!("invalid override: {e}")))?;
        Ok(())
    }
}

fn settings(common: &Common) -> anyhow::Result<Settings> {
    let mut s = Settings::new(common.preset);
    s.train.seed = common.seed;
    s.synth.seed = common.seed;
    s.apply(&common.overrides)?;
    Ok(s)
}

fn out_dir(common: Option<&Common>) -> PathBuf {
    common
        .and_then(|c| c.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Exit code for an error: 1 usage, 2 data, 3 numeric.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    if err.downcast_ref::<NumericFailure>().is_some() {
        return EXIT_NUMERIC;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numeric() => EXIT_NUMERIC,
        Some(Error::InvalidParameter(_) | Error::UnknownParameter(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Embedding table for a corpus: an explicit file, else `embeddings.txt`
/// beside the manifest, else a hashed table of dimension `dim`.
fn embeddings_for(explicit: Option<&Path>, manifest: Option<&Path>, dim: usize) -> anyhow::Result<EmbeddingTable> {
    if let Some(p) = explicit {
        return Ok(load_embeddings(p)?);
    }
    if let Some(m) = manifest {
        let beside = m.parent().unwrap_or(Path::new(".")).join("embeddings.txt");
        if beside.exists() {
            log::info!("using embeddings from {}", beside.display());
            return Ok(load_embeddings(&beside)?);
        }
    }
    log::info!("no embedding file, using a hashed table of dimension {dim}");
    Ok(EmbeddingTable::hashed(dim, 0))
}

fn load_split(manifest: &Path) -> anyhow::Result<DatasetSplit> {
    Ok(parse_manifest(manifest)?)
}

fn prepare(preparer: &mut Preparer, records: &[ClipRecord], model: &Model) -> anyhow::Result<Vec<PreparedClip>> {
    Ok(preparer.prepare_all(records, model)?)
}

fn channel_paths(paths: &ChannelPaths, out: &Path) -> [PathBuf; 3] {
    [
        paths.audio.clone().unwrap_or_else(|| out.join("audio.ckpt")),
        paths.text.clone().unwrap_or_else(|| out.join("text.ckpt")),
        paths.video.clone().unwrap_or_else(|| out.join("video.ckpt")),
    ]
}

fn load_channels(paths: &[PathBuf; 3]) -> anyhow::Result<[Model; 3]> {
    let missing: Vec<String> = paths
        .iter()
        .zip(["audio", "text", "video"])
        .filter(|(p, _)| !p.exists())
        .map(|(p, m)| format!("{} (run `trimodal train --modality {m}` first)", p.display()))
        .collect();
    if !missing.is_empty() {
        return Err(UsageError(format!("missing prerequisite checkpoints:\n  {}", missing.join("\n  "))).into());
    }
    let [a, t, v] = paths;
    let models = [load_checkpoint(a)?, load_checkpoint(t)?, load_checkpoint(v)?];
    for (m, want) in models.iter().zip(["audio", "text", "video"]) {
        if m.name() != want {
            return Err(UsageError(format!("expected a {want} checkpoint, found a {} model", m.name())).into());
        }
    }
    Ok(models)
}

fn text_dim(model: &Model) -> usize {
    match &model.config {
        ModelConfig::Text(t) => t.embedding_dim,
        ModelConfig::Fused(f) => f.text.embedding_dim,
        _ => 0,
    }
}

fn metrics_table(rows: &[(String, Metrics)], tsv: bool) -> String {
    let mut s = String::new();
    if tsv {
        s.push_str(&Metrics::tsv_header());
        s.push('\n');
        for (name, m) in rows {
            s.push_str(&m.tsv_rows(name));
        }
        return s;
    }
    let header = |s: &mut String, title: &str| {
        write!(s, "{title:<18}{:>8}", "Mean").expect("string write");
        for t in Trait::ALL {
            write!(s, "{:>8}", t.letter()).expect("string write");
        }
        s.push('\n');
    };
    for (title, pick) in [("MAE", 0), ("Mean accuracy", 1)] {
        header(&mut s, title);
        for (name, m) in rows {
            let (mean, per) = if pick == 0 {
                (m.mean_mae, m.mae)
            } else {
                (m.mean_accuracy, m.accuracy)
            };
            write!(s, "{name:<18}{mean:>8.4}").expect("string write");
            for v in per {
                write!(s, "{v:>8.4}").expect("string write");
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

fn cmd_synth(n: usize, common: &Common) -> anyhow::Result<String> {
    let mut s = settings(common)?;
    if !common.overrides.iter().any(|o| o.starts_with("synth.n_clips=")) {
        s.synth.n_clips = n;
    }
    s.synth.validate().map_err(|e| UsageError(e.to_string()))?;
    let dir = out_dir(Some(common));
    ensure_dir(&dir)?;
    let corpus = synth_generate(&s.synth, &dir)?;
    Ok(format!(
        "clips {} train {} val {} test {}\nmanifest {}\n",
        corpus.split.len(),
        corpus.split.train.len(),
        corpus.split.validation.len(),
        corpus.split.test.len(),
        corpus.manifest.display()
    ))
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    target: TrainTarget,
    manifest: &Path,
    embeddings: Option<&Path>,
    channels: &ChannelPaths,
    warm: Option<&Path>,
    checkpoint: Option<&Path>,
    common: &Common,
) -> anyhow::Result<String> {
    let mut s = settings(common)?;
    let out = out_dir(Some(common));
    ensure_dir(&out)?;

    let mut model = match target {
        TrainTarget::Nnlb | TrainTarget::Nnfb => {
            let [a, t, v] = load_channels(&channel_paths(channels, &out))?;
            let mode = if target == TrainTarget::Nnlb {
                FusionMode::Nnlb
            } else {
                FusionMode::Nnfb
            };
            let mut fused = build_fused(&a, &t, &v, mode, s.fusion.hidden_dim, s.train.seed)?;
            if let Some(w) = warm {
                warm_start(&mut fused, &load_checkpoint(w)?)?;
            }
            fused
        }
        _ => {
            let config = match target {
                TrainTarget::Audio => ModelConfig::Audio(s.audio.clone()),
                TrainTarget::Text => {
                    let explicit_dim = common.overrides.iter().any(|o| o.starts_with("text.embedding_dim="));
                    if !explicit_dim {
                        let table = embeddings_for(embeddings, Some(manifest), s.text.embedding_dim)?;
                        s.text.embedding_dim = table.dim();
                    }
                    ModelConfig::Text(s.text.clone())
                }
                _ => ModelConfig::Video(s.video.clone()),
            };
            Model::init(config, s.train.seed)?
        }
    };

    let mut split = load_split(manifest)?;
    split.ensure_validation(s.train.seed);
    let mut preparer = Preparer::new(embeddings_for(embeddings, Some(manifest), text_dim(&model).max(1))?);
    let train_set = prepare(&mut preparer, &split.train, &model)?;
    let val_set = prepare(&mut preparer, &split.validation, &model)?;
    let history = train(&mut model, &train_set, &val_set, &s.train)?;

    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(format!("{}.ckpt", target.name())));
    save_checkpoint(&ckpt, &model)?;
    let hist_path = ckpt.with_extension("history.tsv");
    std::fs::write(&hist_path, history.to_tsv()).map_err(|e| Error::Io {
        path: hist_path.clone(),
        source: e,
    })?;

    let mut report = format!(
        "{}: {} epochs, best epoch {} (val mse {:.6}), stop {}\ncheckpoint {}\nhistory {}\n",
        target.name(),
        history.epochs.len(),
        history.best_epoch,
        history.best().val_mse,
        history.stop_reason,
        ckpt.display(),
        hist_path.display()
    );
    if !split.test.is_empty() {
        let test = prepare(&mut preparer, &split.test, &model)?;
        let m = evaluate(&model, &test)?;
        writeln!(report, "test mean MAE {:.4} mean accuracy {:.4}", m.mean_mae, m.mean_accuracy).expect("string write");
    }
    Ok(report)
}

fn channel_predictions(models: &[Model; 3], records: &[ClipRecord], preparer: &mut Preparer) -> anyhow::Result<Vec<PredictionRecord>> {
    let mut per_model = Vec::with_capacity(3);
    for m in models {
        let clips = prepare(preparer, records, m)?;
        per_model.push(predict_all(m, &clips)?);
    }
    Ok(records
        .iter()
        .enumerate()
        .map(|(k, r)| PredictionRecord {
            clip_id: r.clip_id.clone(),
            preds: [per_model[0][k], per_model[1][k], per_model[2][k]],
            labels: r.labels,
        })
        .collect())
}

fn cmd_fit_dlf(
    manifest: &Path,
    embeddings: Option<&Path>,
    channels: &ChannelPaths,
    weights: Option<&Path>,
    common: &Common,
) -> anyhow::Result<String> {
    settings(common)?;
    let out = out_dir(Some(common));
    let models = load_channels(&channel_paths(channels, &out))?;
    let split = load_split(manifest)?;
    if split.validation.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no validation records", manifest.display())).into());
    }
    let mut preparer = Preparer::new(embeddings_for(embeddings, Some(manifest), text_dim(&models[1]))?);
    let dev = channel_predictions(&models, &split.validation, &mut preparer)?;
    let fit = dlf_fit(&dev)?;

    ensure_dir(&out)?;
    let path = weights
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("dlf_weights.txt"));
    fit.weights.save(&path)?;

    let mut report = fit.weights.table();
    for t in Trait::ALL {
        if fit.degenerate[t.index()] {
            writeln!(report, "trait {t}: channels agree on every clip, weights are uniform").expect("string write");
        }
    }
    let labels: Vec<TraitVector> = dev.iter().map(|r| r.labels).collect();
    let mut rows = Vec::new();
    for (j, m) in models.iter().enumerate() {
        let preds: Vec<TraitVector> = dev.iter().map(|r| r.preds[j]).collect();
        rows.push((m.name(), Metrics::from_predictions(&preds, &labels)?));
    }
    let fused = dev
        .iter()
        .map(|r| dlf_predict(&fit.weights, &r.preds))
        .collect::<crate::Result<Vec<_>>>()?;
    rows.push(("dlf".to_string(), Metrics::from_predictions(&fused, &labels)?));
    report.push_str("\nvalidation\n");
    report.push_str(&metrics_table(&rows, false));
    writeln!(report, "weights {}", path.display()).expect("string write");
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    manifest: &Path,
    embeddings: Option<&Path>,
    checkpoints: &[PathBuf],
    weights: Option<&Path>,
    channels: &ChannelPaths,
    split_arg: SplitArg,
    baseline: bool,
    tsv: bool,
    common: &Common,
) -> anyhow::Result<String> {
    settings(common)?;
    if checkpoints.is_empty() && weights.is_none() && !baseline {
        return Err(UsageError("nothing to evaluate: pass --checkpoint, --weights or --baseline".into()).into());
    }
    let split = load_split(manifest)?;
    let records = split.get(split_arg.into());
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!("split `{}` is empty", Split::from(split_arg))).into());
    }
    let labels: Vec<TraitVector> = records.iter().map(|r| r.labels).collect();
    let mut rows = Vec::new();
    let mut preparer: Option<Preparer> = None;

    for path in checkpoints {
        let model = load_checkpoint(path)?;
        let p = match &mut preparer {
            Some(p) if p.embeddings().dim() == text_dim(&model) || text_dim(&model) == 0 => p,
            slot => slot.insert(Preparer::new(embeddings_for(
                embeddings,
                Some(manifest),
                text_dim(&model).max(1),
            )?)),
        };
        let clips = prepare(p, records, &model)?;
        rows.push((model.name(), evaluate(&model, &clips)?));
    }
    if let Some(w) = weights {
        let weights = FusionWeights::load(w)?;
        let models = load_channels(&channel_paths(channels, &out_dir(Some(common))))?;
        let mut p = Preparer::new(embeddings_for(embeddings, Some(manifest), text_dim(&models[1]))?);
        let preds = channel_predictions(&models, records, &mut p)?;
        let fused = preds
            .iter()
            .map(|r| dlf_predict(&weights, &r.preds))
            .collect::<crate::Result<Vec<_>>>()?;
        rows.push(("dlf".to_string(), Metrics::from_predictions(&fused, &labels)?));
    }
    if baseline {
        let train_labels: Vec<TraitVector> = split.train.iter().map(|r| r.labels).collect();
        rows.push(("train labels avg".to_string(), baseline_metrics(&train_labels, &labels)?));
    }
    Ok(metrics_table(&rows, tsv))
}

fn cmd_gradcheck(scope: &str, seeds: usize, corrupt: Option<&str>) -> anyhow::Result<String> {
    let scopes: Vec<Scope> = if scope == "all" {
        Scope::ALL.to_vec()
    } else {
        vec![scope.parse().map_err(|e: Error| UsageError(e.to_string()))?]
    };
    if seeds == 0 {
        return Err(UsageError("--seeds must be positive".into()).into());
    }
    let corruption = corrupt.map(|name| Corruption { name, factor: 1.01 });
    let mut report = String::new();
    let mut failed = Vec::new();
    let mut corrupted_seen = false;
    for s in scopes {
        for o in run_scope(s, seeds, corruption)? {
            corrupted_seen |= corrupt == Some(o.name.as_str());
            let verdict = if o.passed() { "PASS" } else { "FAIL" };
            writeln!(
                report,
                "{verdict} {s}/{:<16} worst rel error {:.3e} (checked {}, skipped {}, seeds {})",
                o.name, o.report.max_rel_error, o.report.checked, o.report.skipped, o.seeds
            )
            .expect("string write");
            if !o.passed() {
                failed.push(o.name);
            }
        }
    }
    if let (Some(name), false) = (corrupt, corrupted_seen) {
        return Err(UsageError(format!("no check named `{name}` in scope `{scope}`")).into());
    }
    if !failed.is_empty() {
        print!("{report}");
        return Err(NumericFailure(format!(
            "gradient check failed (tolerance {TOLERANCE:e}): {}",
            failed.join(", ")
        ))
        .into());
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    checkpoint: Option<&Path>,
    weights: Option<&Path>,
    channels: &ChannelPaths,
    wav: Option<&Path>,
    transcript: Option<&str>,
    frames: &[PathBuf],
    features: Option<&Path>,
    clip_id: &str,
    embeddings: Option<&Path>,
) -> anyhow::Result<String> {
    let visual = match (frames.is_empty(), features) {
        (false, Some(_)) => return Err(UsageError("pass either --frames or --features, not both".into()).into()),
        (false, None) => Visual::Frames(frames.to_vec()),
        (true, Some(f)) => Visual::Features(f.to_path_buf()),
        (true, None) => Visual::None,
    };
    let record = ClipRecord {
        clip_id: clip_id.to_string(),
        split: Split::Test,
        audio: wav.map(Path::to_path_buf),
        visual,
        transcript: transcript.map(str::to_string),
        labels: [0.0; 5],
    };
    let scores = match (checkpoint, weights) {
        (Some(c), None) => {
            let model = load_checkpoint(c)?;
            let mut p = Preparer::new(embeddings_for(embeddings, None, text_dim(&model).max(1))?);
            let clip = p.prepare(&record, &model)?;
            model.predict(&clip)?
        }
        (None, Some(w)) => {
            let weights = FusionWeights::load(w)?;
            let models = load_channels(&channel_paths(channels, &out_dir(None)))?;
            let mut p = Preparer::new(embeddings_for(embeddings, None, text_dim(&models[1]))?);
            let preds = channel_predictions(&models, std::slice::from_ref(&record), &mut p)?;
            dlf_predict(&weights, &preds[0].preds)?
        }
        _ => return Err(UsageError("pass exactly one of --checkpoint or --weights".into()).into()),
    };
    let mut s = Trait::ALL.map(|t| t.letter()).join("\t");
    s.push('\n');
    s.push_str(&scores.map(|v| format!("{v:.4}")).join("\t"));
    s.push('\n');
    Ok(s)
}

/// Runs one parsed command, returning what it prints on success.
pub fn run(cli: Cli) -> anyhow::Result<String> {
    match cli.command {
        Command::Synth { n, common } => cmd_synth(n, &common),
        Command::Train {
            modality,
            manifest,
            embeddings,
            channels,
            warm_start,
            checkpoint,
            common,
        } => {
            if warm_start.is_some() && modality != TrainTarget::Nnfb {
                bail!(UsageError("--warm-start only applies to --modality nnfb".into()));
            }
            cmd_train(
                modality,
                &manifest,
                embeddings.as_deref(),
                &channels,
                warm_start.as_deref(),
                checkpoint.as_deref(),
                &common,
            )
            .with_context(|| format!("training {}", modality.name()))
        }
        Command::FitDlf {
            manifest,
            embeddings,
            channels,
            weights,
            common,
        } => cmd_fit_dlf(&manifest, embeddings.as_deref(), &channels, weights.as_deref(), &common),
        Command::Eval {
            manifest,
            embeddings,
            checkpoints,
            weights,
            channels,
            split,
            baseline,
            tsv,
            common,
        } => cmd_eval(
            &manifest,
            embeddings.as_deref(),
            &checkpoints,
            weights.as_deref(),
            &channels,
            split,
            baseline,
            tsv,
            &common,
        ),
        Command::Gradcheck { scope, seeds, corrupt } => cmd_gradcheck(&scope, seeds, corrupt.as_deref()),
        Command::Predict {
            checkpoint,
            weights,
            channels,
            wav,
            transcript,
            frames,
            features,
            clip_id,
            embeddings,
        } => cmd_predict(
            checkpoint.as_deref(),
            weights.as_deref(),
            &channels,
            wav.as_deref(),
            transcript.as_deref(),
            &frames,
            features.as_deref(),
            &clip_id,
            embeddings.as_deref(),
        ),
    }
    .map_err(|e| {
        if e.downcast_ref::<UsageError>().is_some() || e.downcast_ref::<NumericFailure>().is_some() {
            e
        } else {
            e.context("command failed")
        }
    })
}

/// Parses `args` and runs; returns the exit code after printing output.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::anyhow;

    #[test]
    fn overrides_apply_by_path() {
        let mut s = Settings::new(Preset::Desk);
        s.apply(&[
            "audio.filters=8".into(),
            "train.amplitude_jitter=false".into(),
            "train.max_steps=50".into(),
            "fusion.hidden_dim=32".into(),
        ])
        .unwrap();
        assert_eq!(s.audio.filters, 8);
        assert!(!s.train.amplitude_jitter);
        assert_eq!(s.train.max_steps, Some(50));
        assert_eq!(s.fusion.hidden_dim, 32);
        assert!(s.apply(&["audio.nope=1".into()]).is_err());
        assert!(s.apply(&["audio.filters".into()]).is_err());
        assert!(s.apply(&["audio.filters=\"many\"".into()]).is_err());
    }

    #[test]
    fn presets_keep_penultimate_widths() {
        for p in [Preset::Full, Preset::Desk] {
            let s = Settings::new(p);
            assert_eq!(
                [s.audio.penultimate_dim, s.text.penultimate_dim, s.video.head_hidden_dim],
                crate::fusion::PENULTIMATE_DIMS
            );
        }
    }

    #[test]
    fn exit_codes_by_error_family() {
        assert_eq!(exit_code(&UsageError("x".into()).into()), EXIT_USAGE);
        assert_eq!(exit_code(&NumericFailure("x".into()).into()), EXIT_NUMERIC);
        let nan = Error::NonFiniteLoss {
            epoch: 1,
            clip_ids: vec![],
        };
        assert_eq!(exit_code(&anyhow!(nan).context("training")), EXIT_NUMERIC);
        assert_eq!(exit_code(&anyhow!(Error::EmptyTranscript)), EXIT_DATA);
    }
}
