//! Raw-waveform audio channel.
//!
//! Clips are resampled to 8 kHz, optionally volume-jittered during training,
//! split into a raw and a squared-amplitude row, and passed through a stack of
//! valid 1-D convolutions. Every conv layer is globally average pooled; the
//! pooled vectors are blended with softmax-normalized learnable weights and
//! fed to a fully connected penultimate layer and a sigmoid trait head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvIds, DenseIds, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::traits::NUM_TRAITS;

pub const TARGET_SAMPLE_RATE: u32 = 8000;

/// Exponent range of the training-time volume coefficient `10^U(-1.5, 1.5)`.
pub const AMPLITUDE_EXPONENT_RANGE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidParameter("audio clip has no samples".into()));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Downsamples to 8 kHz. Integer ratios decimate exactly; other ratios use
/// linear interpolation between neighbouring input samples.
pub fn resample_to_8khz(clip: &AudioClip) -> Result<AudioClip> {
    let rate = clip.sample_rate;
    if rate < TARGET_SAMPLE_RATE {
        return Err(Error::UpsamplingUnsupported(rate));
    }
    if rate == TARGET_SAMPLE_RATE {
        return Ok(clip.clone());
    }
    let n = clip.samples.len();
    let samples = if rate.is_multiple_of(TARGET_SAMPLE_RATE) {
        let factor = (rate / TARGET_SAMPLE_RATE) as usize;
        clip.samples.iter().step_by(factor).copied().collect()
    } else {
        let ratio = f64::from(rate) / f64::from(TARGET_SAMPLE_RATE);
        let out_len = ((n as f64 / ratio).floor() as usize).max(1);
        (0..out_len)
            .map(|i| {
                let pos = i as f64 * ratio;
                let lo = (pos.floor() as usize).min(n - 1);
                let hi = (lo + 1).min(n - 1);
                let frac = pos - lo as f64;
                clip.samples[lo] * (1.0 - frac) + clip.samples[hi] * frac
            })
            .collect()
    };
    AudioClip::new(samples, TARGET_SAMPLE_RATE)
}

pub fn amplitude_from_exponent(u: f64) -> f64 {
    10f64.powf(u)
}

/// Scales the whole clip by one draw of `10^U(-1.5, 1.5)`; returns the
/// scaled clip and the coefficient used.
pub fn randomize_amplitude<R: Rng + ?Sized>(clip: &AudioClip, rng: &mut R) -> (AudioClip, f64) {
    let u = rng.gen_range(-AMPLITUDE_EXPONENT_RANGE..=AMPLITUDE_EXPONENT_RANGE);
    let alpha = amplitude_from_exponent(u);
    let samples = clip.samples.iter().map(|s| s * alpha).collect();
    (
        AudioClip {
            samples,
            sample_rate: clip.sample_rate,
        },
        alpha,
    )
}

/// `[2, L]` input: the waveform and its elementwise square.
pub fn dual_channel(samples: &[f64]) -> Tensor {
    let mut data = Vec::with_capacity(2 * samples.len());
    data.extend_from_slice(samples);
    data.extend(samples.iter().map(|s| s * s));
    Tensor::new(vec![2, samples.len()], data).expect("non-empty clip")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioChannelConfig {
    pub first_window: usize,
    pub first_stride: usize,
    pub later_window: usize,
    pub later_stride: usize,
    pub filters: usize,
    pub num_conv_layers: usize,
    pub penultimate_dim: usize,
}

impl Default for AudioChannelConfig {
    fn default() -> Self {
        AudioChannelConfig {
            first_window: 200,
            first_stride: 100,
            later_window: 8,
            later_stride: 2,
            filters: 512,
            num_conv_layers: 4,
            penultimate_dim: 64,
        }
    }
}

impl AudioChannelConfig {
    /// Same geometry with a narrow filter bank for single-core runs.
    pub fn desk() -> Self {
        AudioChannelConfig {
            filters: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.first_window,
            self.first_stride,
            self.later_window,
            self.later_stride,
            self.filters,
            self.num_conv_layers,
            self.penultimate_dim,
        ];
        if fields.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "audio configuration values must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    fn layer(&self, i: usize) -> (usize, usize) {
        if i == 0 {
            (self.first_window, self.first_stride)
        } else {
            (self.later_window, self.later_stride)
        }
    }

    /// Output length of every conv layer for an input of `len` samples.
    pub fn conv_lengths(&self, len: usize) -> Result<Vec<usize>> {
        let mut lengths = Vec::with_capacity(self.num_conv_layers);
        let mut cur = len;
        for i in 0..self.num_conv_layers {
            let (w, s) = self.layer(i);
            if cur < w {
                return Err(Error::InputTooShort {
                    got: len,
                    min: self.min_input_len(),
                });
            }
            cur = (cur - w) / s + 1;
            lengths.push(cur);
        }
        Ok(lengths)
    }

    /// Shortest input for which every conv layer yields at least one position.
    pub fn min_input_len(&self) -> usize {
        let mut need = 1;
        for i in (0..self.num_conv_layers).rev() {
            let (w, s) = self.layer(i);
            need = w + (need - 1) * s;
        }
        need
    }
}

#[derive(Debug, Clone)]
pub struct AudioChannel {
    pub config: AudioChannelConfig,
    convs: Vec<ConvIds>,
    blend: ParamId,
    penultimate: DenseIds,
    head: Option<DenseIds>,
}

pub struct AudioOutputs {
    pub penultimate: Var,
    pub traits: Option<Var>,
    pub blend: Var,
}

const PREFIX: &str = "audio";

impl AudioChannel {
    fn kernel_shape(config: &AudioChannelConfig, i: usize) -> [usize; 3] {
        let c_in = if i == 0 { 2 } else { config.filters };
        [config.filters, c_in, config.layer(i).0]
    }

    pub fn init<R: Rng + ?Sized>(config: AudioChannelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::with_capacity(config.num_conv_layers);
        for i in 0..config.num_conv_layers {
            let shape = Self::kernel_shape(&config, i);
            convs.push(ConvIds::init(store, &format!("{PREFIX}.conv{}", i + 1), &shape, false, rng)?);
        }
        let blend = store.add(
            format!("{PREFIX}.blend_logits"),
            Tensor::zeros(&[config.num_conv_layers]),
            false,
        )?;
        let penultimate = DenseIds::init(
            store,
            &format!("{PREFIX}.fc"),
            config.filters,
            config.penultimate_dim,
            false,
            rng,
        )?;
        let head = DenseIds::init(
            store,
            &format!("{PREFIX}.head"),
            config.penultimate_dim,
            NUM_TRAITS,
            false,
            rng,
        )?;
        Ok(AudioChannel {
            config,
            convs,
            blend,
            penultimate,
            head: Some(head),
        })
    }

    /// Resolves parameter ids by name. With `with_head == false` the trait
    /// head is not required (truncated channel inside a fused network).
    pub fn bind(config: AudioChannelConfig, store: &ParamStore, with_head: bool) -> Result<Self> {
        config.validate()?;
        let convs = (0..config.num_conv_layers)
            .map(|i| {
                let shape = Self::kernel_shape(&config, i);
                ConvIds::bind(store, &format!("{PREFIX}.conv{}", i + 1), &shape)
            })
            .collect::<Result<Vec<_>>>()?;
        let blend = store.id_with_shape(&format!("{PREFIX}.blend_logits"), &[config.num_conv_layers])?;
        let penultimate = DenseIds::bind(store, &format!("{PREFIX}.fc"), config.filters, config.penultimate_dim)?;
        let head = if with_head {
            Some(DenseIds::bind(
                store,
                &format!("{PREFIX}.head"),
                config.penultimate_dim,
                NUM_TRAITS,
            )?)
        } else {
            None
        };
        Ok(AudioChannel {
            config,
            convs,
            blend,
            penultimate,
            head,
        })
    }

    pub fn head_prefix() -> String {
        format!("{PREFIX}.head")
    }

    /// Builds the training/evaluation input for one 8 kHz clip.
    pub fn prepare_input<R: Rng + ?Sized>(
        &self,
        samples: &[f64],
        randomize: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        let min = self.config.min_input_len();
        if samples.len() < min {
            return Err(Error::InputTooShort {
                got: samples.len(),
                min,
            });
        }
        if randomize {
            let clip = AudioClip {
                samples: samples.to_vec(),
                sample_rate: TARGET_SAMPLE_RATE,
            };
            Ok(dual_channel(&randomize_amplitude(&clip, rng).0.samples))
        } else {
            Ok(dual_channel(samples))
        }
    }

    /// Forward pass on a `[2, L]` input.
    pub fn forward(&self, g: &mut Graph<'_>, input: Var) -> Result<AudioOutputs> {
        let len = match g.shape(input) {
            &[2, len] => len,
            other => {
                return Err(Error::Dimension(format!(
                    "audio input must be [2, L], got {other:?}"
                )))
            }
        };
        self.config.conv_lengths(len)?;
        let mut x = input;
        let mut pooled = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let stride = self.config.layer(i).1;
            let k = g.param(conv.kernels);
            let b = g.param(conv.bias);
            let y = g.conv1d(x, k, b, stride)?;
            x = g.relu(y);
            pooled.push(g.global_avg_pool(x)?);
        }
        let logits = g.param(self.blend);
        let blend = g.softmax(logits);
        let mixed = g.weighted_sum(blend, &pooled)?;
        let penultimate = dense(g, &self.penultimate, mixed)?;
        let penultimate = g.relu(penultimate);
        let traits = match &self.head {
            Some(head) => {
                let z = dense(g, head, penultimate)?;
                Some(g.sigmoid(z))
            }
            None => None,
        };
        Ok(AudioOutputs {
            penultimate,
            traits,
            blend,
        })
    }
}

pub(crate) fn dense(g: &mut Graph<'_>, ids: &DenseIds, x: Var) -> Result<Var> {
    let w = g.param(ids.weights);
    let b = g.param(ids.bias);
    g.linear(x, w, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn resample_integer_ratio_decimates() {
        let clip = AudioClip::new((0..48_000).map(|i| i as f64).collect(), 48_000).unwrap();
        let out = resample_to_8khz(&clip).unwrap();
        assert_eq!(out.sample_rate, 8000);
        assert_eq!(out.samples.len(), 8000);
        assert_eq!(out.samples[1], 6.0);
    }

    #[test]
    fn resample_identity_and_rejects_upsampling() {
        let clip = AudioClip::new(vec![0.1, -0.2, 0.3], 8000).unwrap();
        assert_eq!(resample_to_8khz(&clip).unwrap(), clip);
        let low = AudioClip::new(vec![0.0; 10], 4000).unwrap();
        assert!(matches!(resample_to_8khz(&low), Err(Error::UpsamplingUnsupported(4000))));
    }

    #[test]
    fn resample_linear_keeps_constants() {
        let clip = AudioClip::new(vec![0.37; 44_100], 44_100).unwrap();
        let out = resample_to_8khz(&clip).unwrap();
        assert_eq!(out.samples.len(), 8000);
        assert!(out.samples.iter().all(|&s| (s - 0.37).abs() < 1e-15));
        assert!((out.duration_secs() - clip.duration_secs()).abs() <= 1.0 / 8000.0);
    }

    #[test]
    fn amplitude_coefficients() {
        assert_eq!(amplitude_from_exponent(0.0), 1.0);
        assert!((amplitude_from_exponent(1.5) - 31.622_776_6).abs() < 1e-7);
    }

    #[test]
    fn amplitude_exponent_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let clip = AudioClip::new(vec![1.0], 8000).unwrap();
        let logs: Vec<f64> = (0..10_000)
            .map(|_| {
                let (scaled, alpha) = randomize_amplitude(&clip, &mut rng);
                assert_eq!(scaled.samples[0], alpha);
                alpha.log10()
            })
            .collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        assert!(mean.abs() < 0.05, "mean exponent {mean}");
        assert!(logs.iter().all(|&l| (-1.5 - 1e-12..=1.5 + 1e-12).contains(&l)));
    }

    #[test]
    fn dual_channel_rows() {
        let t = dual_channel(&[-0.5, 0.0, 0.25]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data(), &[-0.5, 0.0, 0.25, 0.25, 0.0, 0.0625]);
    }

    #[test]
    fn cascade_lengths_for_fifteen_seconds() {
        let cfg = AudioChannelConfig::default();
        assert_eq!(cfg.conv_lengths(120_000).unwrap(), vec![1199, 596, 295, 144]);
        assert_eq!(cfg.min_input_len(), 5100);
        assert_eq!(cfg.conv_lengths(5100).unwrap(), vec![50, 22, 8, 1]);
        assert!(matches!(
            cfg.conv_lengths(5099),
            Err(Error::InputTooShort { got: 5099, min: 5100 })
        ));
    }

    #[test]
    fn zero_parameters_give_half_everywhere() {
        let cfg = AudioChannelConfig {
            filters: 4,
            penultimate_dim: 3,
            ..AudioChannelConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ch = AudioChannel::init(cfg, &mut store, &mut rng).unwrap();
        for p in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut g = Graph::new(&store);
        let x = g.constant(dual_channel(&vec![0.3; 6000]));
        let out = ch.forward(&mut g, x).unwrap();
        assert_eq!(g.value(out.penultimate).data(), &[0.0; 3]);
        assert_eq!(g.value(out.traits.unwrap()).data(), &[0.5; 5]);
        let blend = g.value(out.blend).data();
        assert!(blend.iter().all(|&b| (b - 0.25).abs() < 1e-15));
    }

    #[test]
    fn short_input_reports_minimum() {
        let cfg = AudioChannelConfig::desk();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ch = AudioChannel::init(cfg, &mut store, &mut rng).unwrap();
        assert!(matches!(
            ch.prepare_input(&[0.0; 100], false, &mut rng),
            Err(Error::InputTooShort { got: 100, min: 5100 })
        ));
    }
}
