//! Concatenation fusion of the channels' penultimate layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{dense, AudioChannel, AudioChannelConfig};
use crate::autograd::{DenseIds, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::text::{TextChannel, TextChannelConfig};
use crate::traits::NUM_TRAITS;
use crate::video::{VideoChannel, VideoChannelConfig, BACKBONE_PREFIX};

/// Penultimate widths of the audio, text and video channels.
pub const PENULTIMATE_DIMS: [usize; 3] = [64, 64, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Channels frozen; only the added layers train.
    Nnlb,
    /// Audio, text and the video head train with the added layers; the video
    /// backbone stays frozen.
    Nnfb,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Nnlb => "nnlb",
            FusionMode::Nnfb => "nnfb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedConfig {
    pub mode: FusionMode,
    pub hidden_dim: usize,
    pub audio: AudioChannelConfig,
    pub text: TextChannelConfig,
    pub video: VideoChannelConfig,
}

impl FusedConfig {
    pub fn concat_dim(&self) -> usize {
        self.audio.penultimate_dim + self.text.penultimate_dim + self.video.head_hidden_dim
    }
}

pub const DEFAULT_HIDDEN_DIM: usize = 256;
const PREFIX: &str = "fusion";

#[derive(Debug, Clone)]
pub struct FusedNetwork {
    pub config: FusedConfig,
    pub(crate) audio: AudioChannel,
    pub(crate) text: TextChannel,
    pub(crate) video: VideoChannel,
    hidden: DenseIds,
    head: DenseIds,
}

impl FusedNetwork {
    pub fn bind(config: FusedConfig, store: &ParamStore) -> Result<Self> {
        let audio = AudioChannel::bind(config.audio.clone(), store, false)?;
        let text = TextChannel::bind(config.text.clone(), store, false)?;
        let video = VideoChannel::bind(config.video.clone(), store, false)?;
        let hidden = DenseIds::bind(store, &format!("{PREFIX}.fc1"), config.concat_dim(), config.hidden_dim)?;
        let head = DenseIds::bind(store, &format!("{PREFIX}.fc2"), config.hidden_dim, NUM_TRAITS)?;
        Ok(FusedNetwork {
            config,
            audio,
            text,
            video,
            hidden,
            head,
        })
    }

    /// Channel penultimates, concatenated in audio, text, video order.
    pub fn concat<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        audio: Var,
        sentences: &[Tensor],
        video: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        // Dropout follows the training flag, not the frozen flag, so both
        // fusion modes see the same text features during training.
        let a = self.audio.forward(g, audio)?.penultimate;
        let t = self.text.forward(g, sentences, training, rng)?.penultimate;
        let v = self.video.forward(g, video)?.penultimate;
        g.concat(&[a, t, v])
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        audio: Var,
        sentences: &[Tensor],
        video: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let joint = self.concat(g, audio, sentences, video, training, rng)?;
        let h = dense(g, &self.hidden, joint)?;
        let h = g.relu(h);
        let z = dense(g, &self.head, h)?;
        Ok(g.sigmoid(z))
    }
}

/// Truncates three trained channel models at their penultimate layers and
/// joins them under two freshly initialized layers.
pub fn build_fused(audio: &Model, text: &Model, video: &Model, mode: FusionMode, hidden_dim: usize, seed: u64) -> Result<Model> {
    let (ModelConfig::Audio(ac), ModelConfig::Text(tc), ModelConfig::Video(vc)) = (&audio.config, &text.config, &video.config) else {
        return Err(Error::InvalidParameter(format!(
            "fusion needs audio, text and video models, got {}, {}, {}",
            audio.name(),
            text.name(),
            video.name()
        )));
    };
    let dims = [ac.penultimate_dim, tc.penultimate_dim, vc.head_hidden_dim];
    if dims != PENULTIMATE_DIMS {
        return Err(Error::Dimension(format!(
            "penultimate widths {dims:?} do not match {PENULTIMATE_DIMS:?}"
        )));
    }
    if hidden_dim == 0 {
        return Err(Error::InvalidParameter("fusion hidden width must be positive".into()));
    }
    let config = FusedConfig {
        mode,
        hidden_dim,
        audio: ac.clone(),
        text: tc.clone(),
        video: vc.clone(),
    };

    let mut store = ParamStore::new();
    store.extend_from(&audio.store, &[&AudioChannel::head_prefix()])?;
    store.extend_from(&text.store, &[&TextChannel::head_prefix()])?;
    store.extend_from(&video.store, &[&VideoChannel::head_prefix()])?;
    let frozen = mode == FusionMode::Nnlb;
    for prefix in ["audio.", "text.", "video."] {
        store.set_frozen_prefix(prefix, frozen);
    }
    store.set_frozen_prefix(BACKBONE_PREFIX, true);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseIds::init(&mut store, &format!("{PREFIX}.fc1"), config.concat_dim(), hidden_dim, false, &mut rng)?;
    DenseIds::init(&mut store, &format!("{PREFIX}.fc2"), hidden_dim, NUM_TRAITS, false, &mut rng)?;
    Model::from_parts(ModelConfig::Fused(config), store)
}

/// Copies the added layers (and, where layouts agree, every other parameter
/// value) from `from` into `to`, keeping `to`'s frozen flags.
pub fn warm_start(to: &mut Model, from: &Model) -> Result<()> {
    for p in to.store.iter_mut() {
        let src = from.store.id(&p.name)?;
        let v = from.store.value(src);
        if v.shape() != p.value.shape() {
            return Err(Error::Dimension(format!(
                "parameter `{}` has shape {:?} in the source and {:?} in the target",
                p.name,
                v.shape(),
                p.value.shape()
            )));
        }
        p.value = v.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PreparedClip;
    use crate::video::FeatureSource;

    fn channels() -> (Model, Model, Model) {
        let a = Model::init(ModelConfig::Audio(AudioChannelConfig::desk()), 1).unwrap();
        let t = Model::init(ModelConfig::Text(TextChannelConfig::desk()), 2).unwrap();
        let v = Model::init(ModelConfig::Video(VideoChannelConfig::default()), 3).unwrap();
        (a, t, v)
    }

    #[test]
    fn concat_width_is_640() {
        let (a, t, v) = channels();
        let m = build_fused(&a, &t, &v, FusionMode::Nnlb, DEFAULT_HIDDEN_DIM, 4).unwrap();
        let ModelConfig::Fused(c) = &m.config else { panic!() };
        assert_eq!(c.concat_dim(), 640);
        assert_eq!(m.store.trainable_count(), 640 * 256 + 256 + 256 * 5 + 5);
    }

    #[test]
    fn nnfb_freezing_boundary() {
        let (a, t, v) = channels();
        let m = build_fused(&a, &t, &v, FusionMode::Nnfb, 16, 4).unwrap();
        for p in m.store.iter() {
            assert_eq!(p.frozen, p.name.starts_with(BACKBONE_PREFIX), "{}", p.name);
        }
        assert!(m.store.id("audio.head.weights").is_err());
        assert!(m.store.id("video.fc2.weights").is_err());
    }

    #[test]
    fn mismatched_penultimate_rejected() {
        let (a, t, _) = channels();
        let v = Model::init(
            ModelConfig::Video(VideoChannelConfig {
                head_hidden_dim: 32,
                ..VideoChannelConfig::default()
            }),
            3,
        )
        .unwrap();
        assert!(matches!(build_fused(&a, &t, &v, FusionMode::Nnlb, 8, 0), Err(Error::Dimension(_))));
        assert!(build_fused(&a, &a, &a, FusionMode::Nnlb, 8, 0).is_err());
    }

    #[test]
    fn zero_parameters_predict_half() {
        let (a, t, _) = channels();
        let v = Model::init(
            ModelConfig::Video(VideoChannelConfig {
                source: FeatureSource::Precomputed,
                ..VideoChannelConfig::default()
            }),
            3,
        )
        .unwrap();
        let mut m = build_fused(&a, &t, &v, FusionMode::Nnlb, 8, 4).unwrap();
        for p in m.store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let clip = PreparedClip {
            clip_id: "z".into(),
            labels: [0.5; 5],
            audio: Some(vec![0.1; 6000]),
            sentences: Some(vec![Tensor::zeros(&[32, 5])]),
            frames: Some(vec![vec![0.0; 64]]),
        };
        assert_eq!(m.predict(&clip).unwrap(), [0.5; 5]);
    }
}
