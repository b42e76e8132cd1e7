//! Trainable models over prepared clip inputs: the three single-modality
//! channels and the fused network, behind one type.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{resample_to_8khz, AudioChannel, AudioChannelConfig};
use crate::autograd::{Graph, ParamStore, Tensor, Var};
use crate::data::{load_feature_file, read_frame_png, read_wav, ClipRecord, Visual};
use crate::error::{Error, Result};
use crate::fusion::{FusedConfig, FusedNetwork};
use crate::text::{embed_sentence, normalize_text, EmbeddingTable, TextChannel, TextChannelConfig};
use crate::traits::{Modality, TraitVector, NUM_TRAITS};
use crate::video::{select_frame_index, VideoChannel, VideoChannelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Audio(AudioChannelConfig),
    Text(TextChannelConfig),
    Video(VideoChannelConfig),
    Fused(FusedConfig),
}

impl ModelConfig {
    pub fn name(&self) -> String {
        match self {
            ModelConfig::Audio(_) => "audio".into(),
            ModelConfig::Text(_) => "text".into(),
            ModelConfig::Video(_) => "video".into(),
            ModelConfig::Fused(f) => f.mode.name().into(),
        }
    }

    /// Modalities this model reads.
    pub fn modalities(&self) -> &'static [Modality] {
        match self {
            ModelConfig::Audio(_) => &[Modality::Audio],
            ModelConfig::Text(_) => &[Modality::Text],
            ModelConfig::Video(_) => &[Modality::Video],
            ModelConfig::Fused(_) => &Modality::ALL,
        }
    }

    fn text(&self) -> Option<&TextChannelConfig> {
        match self {
            ModelConfig::Text(c) => Some(c),
            ModelConfig::Fused(f) => Some(&f.text),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
enum Arch {
    Audio(AudioChannel),
    Text(TextChannel),
    Video(VideoChannel),
    Fused(Box<FusedNetwork>),
}

/// One clip with every modality already decoded into network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedClip {
    pub clip_id: String,
    pub labels: TraitVector,
    /// 8 kHz mono samples.
    pub audio: Option<Vec<f64>>,
    /// Per-sentence `[dim, L]` conv inputs.
    pub sentences: Option<Vec<Tensor>>,
    /// Backbone features, one vector per frame.
    pub frames: Option<Vec<Vec<f64>>>,
}

/// Forward-pass options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    pub training: bool,
    /// Volume jitter on audio during training.
    pub jitter: bool,
}

impl Mode {
    pub const EVAL: Mode = Mode {
        training: false,
        jitter: false,
    };

    pub fn train(jitter: bool) -> Mode {
        Mode { training: true, jitter }
    }
}

/// Penultimate features and trait prediction of one forward pass.
pub struct Outputs {
    pub penultimate: Option<Var>,
    pub traits: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    arch: Arch,
}

impl Model {
    /// Fresh single-channel model with parameters drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = match &config {
            ModelConfig::Audio(c) => Arch::Audio(AudioChannel::init(c.clone(), &mut store, &mut rng)?),
            ModelConfig::Text(c) => Arch::Text(TextChannel::init(c.clone(), &mut store, &mut rng)?),
            ModelConfig::Video(c) => Arch::Video(VideoChannel::init(c.clone(), &mut store, &mut rng)?),
            ModelConfig::Fused(_) => {
                return Err(Error::InvalidParameter(
                    "fused models are built from trained channels".into(),
                ))
            }
        };
        Ok(Model { config, store, arch })
    }

    /// Reassembles a model from a configuration and a parameter store whose
    /// names and shapes match it.
    pub fn from_parts(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let arch = match &config {
            ModelConfig::Audio(c) => Arch::Audio(AudioChannel::bind(c.clone(), &store, true)?),
            ModelConfig::Text(c) => Arch::Text(TextChannel::bind(c.clone(), &store, true)?),
            ModelConfig::Video(c) => Arch::Video(VideoChannel::bind(c.clone(), &store, true)?),
            ModelConfig::Fused(c) => Arch::Fused(Box::new(FusedNetwork::bind(c.clone(), &store)?)),
        };
        Ok(Model { config, store, arch })
    }

    pub fn name(&self) -> String {
        self.config.name()
    }

    pub(crate) fn text_channel(&self) -> Option<&TextChannel> {
        match &self.arch {
            Arch::Text(t) => Some(t),
            Arch::Fused(f) => Some(&f.text),
            _ => None,
        }
    }

    pub(crate) fn video_channel(&self) -> Option<&VideoChannel> {
        match &self.arch {
            Arch::Video(v) => Some(v),
            Arch::Fused(f) => Some(&f.video),
            _ => None,
        }
    }

    /// Builds the graph for one clip on `g`, which must borrow `self.store`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        clip: &PreparedClip,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Outputs> {
        match &self.arch {
            Arch::Audio(ch) => {
                let x = audio_input(ch, clip, mode, rng, g)?;
                let out = ch.forward(g, x)?;
                Ok(Outputs {
                    penultimate: Some(out.penultimate),
                    traits: out.traits.expect("channel model has a head"),
                })
            }
            Arch::Text(ch) => {
                let out = ch.forward(g, sentences(clip)?, mode.training, rng)?;
                Ok(Outputs {
                    penultimate: Some(out.penultimate),
                    traits: out.traits.expect("channel model has a head"),
                })
            }
            Arch::Video(ch) => {
                let x = video_input(clip, mode, rng, g)?;
                let out = ch.forward(g, x)?;
                Ok(Outputs {
                    penultimate: Some(out.penultimate),
                    traits: out.traits.expect("channel model has a head"),
                })
            }
            Arch::Fused(net) => {
                let a = audio_input(&net.audio, clip, mode, rng, g)?;
                let v = video_input(clip, mode, rng, g)?;
                let traits = net.forward(g, a, sentences(clip)?, v, mode.training, rng)?;
                Ok(Outputs {
                    penultimate: None,
                    traits,
                })
            }
        }
    }

    /// Evaluation-mode prediction for one clip.
    pub fn predict(&self, clip: &PreparedClip) -> Result<TraitVector> {
        let mut g = Graph::inference(&self.store);
        // Evaluation draws no random numbers; the generator is a placeholder.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut g, clip, Mode::EVAL, &mut rng)?;
        let mut p = [0.0; NUM_TRAITS];
        p.copy_from_slice(g.value(out.traits).data());
        Ok(p)
    }
}

fn audio_input<R: Rng + ?Sized>(
    ch: &AudioChannel,
    clip: &PreparedClip,
    mode: Mode,
    rng: &mut R,
    g: &mut Graph<'_>,
) -> Result<Var> {
    let samples = clip
        .audio
        .as_ref()
        .ok_or_else(|| Error::MissingModality(format!("clip `{}` has no audio", clip.clip_id)))?;
    let x = ch.prepare_input(samples, mode.training && mode.jitter, rng)?;
    Ok(g.constant(x))
}

fn sentences(clip: &PreparedClip) -> Result<&[Tensor]> {
    clip.sentences
        .as_deref()
        .ok_or_else(|| Error::MissingModality(format!("clip `{}` has no transcript", clip.clip_id)))
}

fn video_input<R: Rng + ?Sized>(clip: &PreparedClip, mode: Mode, rng: &mut R, g: &mut Graph<'_>) -> Result<Var> {
    let frames = clip
        .frames
        .as_ref()
        .ok_or_else(|| Error::MissingModality(format!("clip `{}` has no frames", clip.clip_id)))?;
    let i = select_frame_index(frames.len(), mode.training, rng)?;
    Ok(g.constant(Tensor::vector(frames[i].clone())))
}

/// Decodes manifest records into [`PreparedClip`]s for a given model.
///
/// Frozen-backbone frame features and feature files are cached, so the same
/// preparer can be reused across several models of one corpus.
pub struct Preparer {
    embeddings: EmbeddingTable,
    frame_cache: HashMap<(PathBuf, String), Vec<f64>>,
    feature_files: HashMap<PathBuf, HashMap<String, Vec<f64>>>,
}

impl Preparer {
    pub fn new(embeddings: EmbeddingTable) -> Self {
        Preparer {
            embeddings,
            frame_cache: HashMap::new(),
            feature_files: HashMap::new(),
        }
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn prepare(&mut self, record: &ClipRecord, model: &Model) -> Result<PreparedClip> {
        let mut clip = PreparedClip {
            clip_id: record.clip_id.clone(),
            labels: record.labels,
            audio: None,
            sentences: None,
            frames: None,
        };
        let missing = |what: &str| Error::MissingModality(format!("clip `{}` has no {what}", record.clip_id));
        for m in model.config.modalities() {
            match m {
                Modality::Audio => {
                    let path = record.audio.as_ref().ok_or_else(|| missing("audio"))?;
                    clip.audio = Some(resample_to_8khz(&read_wav(path)?)?.samples);
                }
                Modality::Text => {
                    let raw = record.transcript.as_ref().ok_or_else(|| missing("transcript"))?;
                    let config = model.config.text().expect("text config present");
                    if config.embedding_dim != self.embeddings.dim() {
                        return Err(Error::Dimension(format!(
                            "embedding table has dimension {}, text channel expects {}",
                            self.embeddings.dim(),
                            config.embedding_dim
                        )));
                    }
                    let channel = model.text_channel().expect("text channel present");
                    let transcript = normalize_text(raw)?;
                    let inputs = transcript
                        .sentences
                        .iter()
                        .map(|s| channel.sentence_input(&embed_sentence(s, &self.embeddings)?))
                        .collect::<Result<Vec<_>>>()?;
                    clip.sentences = Some(inputs);
                }
                Modality::Video => {
                    let channel = model.video_channel().expect("video channel present");
                    clip.frames = Some(self.frame_features(record, channel, &model.store)?);
                }
            }
        }
        Ok(clip)
    }

    pub fn prepare_all(&mut self, records: &[ClipRecord], model: &Model) -> Result<Vec<PreparedClip>> {
        records.iter().map(|r| self.prepare(r, model)).collect()
    }

    fn frame_features(&mut self, record: &ClipRecord, channel: &VideoChannel, store: &ParamStore) -> Result<Vec<Vec<f64>>> {
        match &record.visual {
            Visual::None => Err(Error::MissingModality(format!("clip `{}` has no frames", record.clip_id))),
            Visual::Frames(paths) => {
                if !channel.config.uses_backbone() {
                    return Err(Error::InvalidParameter(format!(
                        "clip `{}` lists image frames but the video channel expects precomputed features",
                        record.clip_id
                    )));
                }
                let key = backbone_key(channel);
                let mut out = Vec::with_capacity(paths.len());
                for p in paths {
                    let cache_key = (p.clone(), key.clone());
                    if let Some(f) = self.frame_cache.get(&cache_key) {
                        out.push(f.clone());
                        continue;
                    }
                    let f = channel.backbone_features(store, &read_frame_png(p)?)?;
                    self.frame_cache.insert(cache_key, f.clone());
                    out.push(f);
                }
                if out.is_empty() {
                    return Err(Error::NoFrames);
                }
                Ok(out)
            }
            Visual::Features(path) => {
                if channel.config.uses_backbone() {
                    return Err(Error::InvalidParameter(format!(
                        "clip `{}` lists a feature file but the video channel builds its own backbone",
                        record.clip_id
                    )));
                }
                let table = self.feature_table(path)?;
                let f = table.get(&record.clip_id).ok_or_else(|| {
                    Error::MissingModality(format!("{} has no features for `{}`", path.display(), record.clip_id))
                })?;
                Ok(vec![f.clone()])
            }
        }
    }

    fn feature_table(&mut self, path: &Path) -> Result<&HashMap<String, Vec<f64>>> {
        if !self.feature_files.contains_key(path) {
            let table = load_feature_file(path)?;
            self.feature_files.insert(path.to_path_buf(), table);
        }
        Ok(&self.feature_files[path])
    }
}

/// Backbones are frozen and built from their configured seed, so equal
/// configurations compute equal features.
fn backbone_key(channel: &VideoChannel) -> String {
    format!("{:?}", channel.config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_round_trip() {
        let c = ModelConfig::Audio(AudioChannelConfig::desk());
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"kind\":\"audio\""));
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn from_parts_rebinds_same_layout() {
        let m = Model::init(ModelConfig::Text(TextChannelConfig::desk()), 3).unwrap();
        let again = Model::from_parts(m.config.clone(), m.store.clone()).unwrap();
        assert_eq!(again.store.total_count(), m.store.total_count());
        let wrong = Model::from_parts(ModelConfig::Text(TextChannelConfig::default()), m.store.clone());
        assert!(wrong.is_err());
    }

    #[test]
    fn missing_modality_is_reported() {
        let m = Model::init(ModelConfig::Audio(AudioChannelConfig::desk()), 1).unwrap();
        let clip = PreparedClip {
            clip_id: "x".into(),
            labels: [0.5; 5],
            audio: None,
            sentences: None,
            frames: None,
        };
        assert!(matches!(m.predict(&clip), Err(Error::MissingModality(_))));
    }
}
