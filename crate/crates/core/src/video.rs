//! Appearance channel: one frame per clip, a frozen convolutional feature
//! extractor and two trainable fully connected layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::dense;
use crate::autograd::{he_uniform, ConvIds, DenseIds, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::traits::NUM_TRAITS;

/// A 3-channel image, planes ordered blue, red, green, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl FrameImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != 3 * height * width {
            return Err(Error::Dimension(format!(
                "frame {height}x{width} needs {} pixel values, got {}",
                3 * height * width,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(FrameImage { height, width, pixels })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![3, self.height, self.width], self.pixels.clone()).expect("validated frame")
    }

    /// Mean of one colour plane (0 = blue, 1 = red, 2 = green).
    pub fn plane_mean(&self, plane: usize) -> f64 {
        let n = self.height * self.width;
        self.pixels[plane * n..(plane + 1) * n].iter().sum::<f64>() / n as f64
    }
}

/// Uniform random index while training, the middle index otherwise.
pub fn select_frame_index<R: Rng + ?Sized>(count: usize, training: bool, rng: &mut R) -> Result<usize> {
    match count {
        0 => Err(Error::NoFrames),
        n if training => Ok(rng.gen_range(0..n)),
        n => Ok(n / 2),
    }
}

pub fn select_random_frame<'a, R: Rng + ?Sized>(
    frames: &'a [FrameImage],
    training: bool,
    rng: &mut R,
) -> Result<&'a FrameImage> {
    let i = select_frame_index(frames.len(), training, rng)?;
    Ok(&frames[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneLayer {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Backbone built from `seed` and never trained.
    RandomFrozen { seed: u64 },
    /// Features are read from files; no backbone is instantiated.
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VideoChannelConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    pub backbone: Vec<BackboneLayer>,
    pub feature_dim: usize,
    pub head_hidden_dim: usize,
    pub source: FeatureSource,
}

impl Default for VideoChannelConfig {
    fn default() -> Self {
        let conv = |out_channels| BackboneLayer::Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        VideoChannelConfig {
            frame_height: 64,
            frame_width: 64,
            backbone: vec![
                conv(16),
                BackboneLayer::MaxPool { size: 2 },
                conv(32),
                BackboneLayer::MaxPool { size: 2 },
                conv(64),
            ],
            feature_dim: 64,
            head_hidden_dim: 512,
            source: FeatureSource::RandomFrozen { seed: 17 },
        }
    }
}

impl VideoChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.head_hidden_dim == 0 {
            return Err(Error::InvalidParameter("video dimensions must be positive".into()));
        }
        if let FeatureSource::RandomFrozen { .. } = self.source {
            let last = self.backbone.iter().rev().find_map(|l| match l {
                BackboneLayer::Conv { out_channels, .. } => Some(*out_channels),
                BackboneLayer::MaxPool { .. } => None,
            });
            if last != Some(self.feature_dim) {
                return Err(Error::InvalidParameter(format!(
                    "backbone must end in a conv with {} channels, found {last:?}",
                    self.feature_dim
                )));
            }
            for l in &self.backbone {
                let ok = match *l {
                    BackboneLayer::Conv {
                        out_channels,
                        kernel,
                        stride,
                        ..
                    } => out_channels > 0 && kernel > 0 && stride > 0,
                    BackboneLayer::MaxPool { size } => size > 0,
                };
                if !ok {
                    return Err(Error::InvalidParameter(format!("invalid backbone layer {l:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn uses_backbone(&self) -> bool {
        matches!(self.source, FeatureSource::RandomFrozen { .. })
    }
}

#[derive(Debug, Clone)]
enum BackboneStage {
    Conv { ids: ConvIds, stride: usize, padding: usize },
    MaxPool(usize),
}

#[derive(Debug, Clone)]
pub struct VideoChannel {
    pub config: VideoChannelConfig,
    backbone: Vec<BackboneStage>,
    hidden: DenseIds,
    head: Option<DenseIds>,
}

pub struct VideoOutputs {
    pub penultimate: Var,
    pub traits: Option<Var>,
}

const PREFIX: &str = "video";
pub const BACKBONE_PREFIX: &str = "video.backbone.";

impl VideoChannel {
    fn backbone_shapes(config: &VideoChannelConfig) -> Vec<(String, [usize; 4])> {
        let mut shapes = Vec::new();
        let mut channels = 3;
        for layer in &config.backbone {
            if let BackboneLayer::Conv {
                out_channels, kernel, ..
            } = *layer
            {
                let name = format!("{BACKBONE_PREFIX}conv{}", shapes.len() + 1);
                shapes.push((name, [out_channels, channels, kernel, kernel]));
                channels = out_channels;
            }
        }
        shapes
    }

    fn stages(config: &VideoChannelConfig, conv_ids: Vec<ConvIds>) -> Vec<BackboneStage> {
        if !config.uses_backbone() {
            return Vec::new();
        }
        let mut ids = conv_ids.into_iter();
        config
            .backbone
            .iter()
            .map(|l| match *l {
                BackboneLayer::Conv { stride, padding, .. } => BackboneStage::Conv {
                    ids: ids.next().expect("one id per conv"),
                    stride,
                    padding,
                },
                BackboneLayer::MaxPool { size } => BackboneStage::MaxPool(size),
            })
            .collect()
    }

    /// Head layers draw from `rng`; the backbone uses its own configured seed.
    pub fn init<R: Rng + ?Sized>(config: VideoChannelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut conv_ids = Vec::new();
        if let FeatureSource::RandomFrozen { seed } = config.source {
            let mut backbone_rng = ChaCha8Rng::seed_from_u64(seed);
            for (name, shape) in Self::backbone_shapes(&config) {
                let ids = ConvIds::init(store, &name, &shape, true, &mut backbone_rng)?;
                store.get_mut(ids.kernels).value = he_uniform(&shape, shape[1] * shape[2] * shape[3], &mut backbone_rng);
                conv_ids.push(ids);
            }
        }
        let hidden = DenseIds::init(
            store,
            &format!("{PREFIX}.fc1"),
            config.feature_dim,
            config.head_hidden_dim,
            false,
            rng,
        )?;
        let head = DenseIds::init(
            store,
            &format!("{PREFIX}.fc2"),
            config.head_hidden_dim,
            NUM_TRAITS,
            false,
            rng,
        )?;
        Ok(VideoChannel {
            backbone: Self::stages(&config, conv_ids),
            config,
            hidden,
            head: Some(head),
        })
    }

    pub fn bind(config: VideoChannelConfig, store: &ParamStore, with_head: bool) -> Result<Self> {
        config.validate()?;
        let conv_ids = if config.uses_backbone() {
            Self::backbone_shapes(&config)
                .iter()
                .map(|(name, shape)| ConvIds::bind(store, name, shape))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let hidden = DenseIds::bind(store, &format!("{PREFIX}.fc1"), config.feature_dim, config.head_hidden_dim)?;
        let head = if with_head {
            Some(DenseIds::bind(
                store,
                &format!("{PREFIX}.fc2"),
                config.head_hidden_dim,
                NUM_TRAITS,
            )?)
        } else {
            None
        };
        Ok(VideoChannel {
            backbone: Self::stages(&config, conv_ids),
            config,
            hidden,
            head,
        })
    }

    pub fn head_prefix() -> String {
        format!("{PREFIX}.fc2")
    }

    /// Frozen feature extraction for one frame.
    pub fn backbone_features(&self, store: &ParamStore, frame: &FrameImage) -> Result<Vec<f64>> {
        if !self.config.uses_backbone() {
            return Err(Error::InvalidParameter(
                "video channel uses precomputed features and has no backbone".into(),
            ));
        }
        if frame.height != self.config.frame_height || frame.width != self.config.frame_width {
            return Err(Error::Dimension(format!(
                "frame is {}x{}, backbone expects {}x{}",
                frame.height, frame.width, self.config.frame_height, self.config.frame_width
            )));
        }
        let mut g = Graph::inference(store);
        let mut x = g.constant(frame.to_tensor());
        for stage in &self.backbone {
            x = match *stage {
                BackboneStage::Conv { ids, stride, padding } => {
                    let k = g.param(ids.kernels);
                    let b = g.param(ids.bias);
                    let y = g.conv2d(x, k, b, stride, padding)?;
                    g.relu(y)
                }
                BackboneStage::MaxPool(size) => g.max_pool2d(x, size)?,
            };
        }
        let pooled = g.global_avg_pool(x)?;
        Ok(g.value(pooled).data().to_vec())
    }

    /// The two trainable layers on top of a feature vector.
    pub fn forward(&self, g: &mut Graph<'_>, features: Var) -> Result<VideoOutputs> {
        let n = g.value(features).len();
        if n != self.config.feature_dim {
            return Err(Error::Dimension(format!(
                "feature vector has {n} values, expected {}",
                self.config.feature_dim
            )));
        }
        let hidden = dense(g, &self.hidden, features)?;
        let penultimate = g.relu(hidden);
        let traits = match &self.head {
            Some(head) => {
                let z = dense(g, head, penultimate)?;
                Some(g.sigmoid(z))
            }
            None => None,
        };
        Ok(VideoOutputs { penultimate, traits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(h: usize, w: usize, v: f64) -> FrameImage {
        FrameImage::new(h, w, vec![v; 3 * h * w]).unwrap()
    }

    #[test]
    fn frame_selection_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(select_frame_index(0, true, &mut rng), Err(Error::NoFrames)));
        assert_eq!(select_frame_index(1, true, &mut rng).unwrap(), 0);
        assert_eq!(select_frame_index(5, false, &mut rng).unwrap(), 2);
        let frames = vec![frame(2, 2, 0.1), frame(2, 2, 0.2), frame(2, 2, 0.3)];
        assert_eq!(select_random_frame(&frames, false, &mut rng).unwrap(), &frames[1]);
    }

    #[test]
    fn training_frame_choice_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[select_frame_index(4, true, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.25).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn pixel_range_is_checked() {
        assert!(matches!(
            FrameImage::new(1, 1, vec![0.5, 1.2, 0.0]),
            Err(Error::Validation(_))
        ));
        assert!(FrameImage::new(1, 1, vec![0.5]).is_err());
    }

    #[test]
    fn backbone_is_frozen_and_deterministic() {
        let cfg = VideoChannelConfig::default();
        let mut s1 = ParamStore::new();
        let mut s2 = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch1 = VideoChannel::init(cfg.clone(), &mut s1, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ch2 = VideoChannel::init(cfg, &mut s2, &mut rng).unwrap();
        assert!(s1.iter().filter(|p| p.name.starts_with(BACKBONE_PREFIX)).all(|p| p.frozen));
        assert!(s1.iter().filter(|p| !p.name.starts_with(BACKBONE_PREFIX)).all(|p| !p.frozen));

        let mut pixels = vec![0.0; 3 * 64 * 64];
        for (i, p) in pixels.iter_mut().enumerate() {
            *p = ((i * 37) % 101) as f64 / 100.0;
        }
        let f = FrameImage::new(64, 64, pixels).unwrap();
        let a = ch1.backbone_features(&s1, &f).unwrap();
        let b = ch2.backbone_features(&s2, &f).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, b, "backbone depends only on its own seed");

        let zero = ch1.backbone_features(&s1, &frame(64, 64, 0.0)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        assert!(matches!(
            ch1.backbone_features(&s1, &frame(32, 32, 0.0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn head_shapes_and_zero_output() {
        let cfg = VideoChannelConfig {
            source: FeatureSource::Precomputed,
            feature_dim: 10,
            ..VideoChannelConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = VideoChannel::init(cfg, &mut store, &mut rng).unwrap();
        assert_eq!(store.len(), 4);
        for p in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::zeros(&[10]));
        let out = ch.forward(&mut g, x).unwrap();
        assert_eq!(g.shape(out.penultimate), &[512]);
        assert_eq!(g.value(out.traits.unwrap()).data(), &[0.5; 5]);
        let bad = g.constant(Tensor::zeros(&[9]));
        assert!(matches!(ch.forward(&mut g, bad), Err(Error::Dimension(_))));
    }
}
