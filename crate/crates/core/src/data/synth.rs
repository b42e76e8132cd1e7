//! Synthetic tri-modal corpus with planted, per-modality trait signals.
//!
//! Each modality carries two strong trait encodings at most, plus a weak,
//! partially randomized copy of one other trait, so no single channel can
//! predict all five traits and a fused model can:
//!
//! | modality | strong                                   | weak leak |
//! |----------|------------------------------------------|-----------|
//! | audio    | E: tone amplitude `0.1 + 0.8·E`; N: noise level | C  |
//! | text     | A: positive-word rate; C: sentence count | N         |
//! | video    | O: red-plane intensity                   | E         |
//!
//! A leak value is `w·trait + (1 − w)·u` with a fresh `u ~ U(0.1, 0.9)`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embeddings::write_embeddings;
use super::manifest::{write_manifest, ClipRecord, DatasetSplit, Split, Visual};
use super::visual::write_frame_png;
use super::wav::write_wav;
use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::text::hashed_vector;
use crate::traits::{Trait, TraitVector, NUM_TRAITS};
use crate::video::FrameImage;

pub const LABEL_LOW: f64 = 0.1;
pub const LABEL_HIGH: f64 = 0.9;

pub const GREETING: [&str; 6] = ["hello", "everyone", "welcome", "back", "to", "channel"];
pub const POSITIVE_WORDS: [&str; 12] = [
    "great", "love", "happy", "wonderful", "kind", "friendly", "amazing", "thanks", "glad", "nice",
    "enjoy", "warm",
];
pub const NEGATIVE_WORDS: [&str; 8] = [
    "worried", "afraid", "nervous", "upset", "stress", "anxious", "tired", "sad",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub seed: u64,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub frame_size: usize,
    pub frames_per_clip: usize,
    /// Tone carrying E, in Hz.
    pub tone_hz: f64,
    /// Tone carrying the audio leak, in Hz.
    pub leak_tone_hz: f64,
    /// Noise amplitude is `noise_floor + noise_span·N`.
    pub noise_floor: f64,
    pub noise_span: f64,
    /// Per-pixel uniform noise half-width.
    pub pixel_noise: f64,
    /// Weight `w` of the true trait inside a leak value.
    pub leak_weight: f64,
    /// Peak of the per-clip appearance pattern shared by all its frames, as a
    /// fraction of each plane's distance to the nearest pixel bound.
    pub identity_contrast: f64,
    pub identity_gratings: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_clips: 100,
            seed: 7,
            clip_seconds: 2.0,
            sample_rate: 8000,
            vocab_size: 60,
            embedding_dim: 32,
            frame_size: 64,
            frames_per_clip: 3,
            tone_hz: 110.0,
            leak_tone_hz: 440.0,
            noise_floor: 0.01,
            noise_span: 0.07,
            pixel_noise: 0.08,
            leak_weight: 0.3,
            identity_contrast: 0.9,
            identity_gratings: 2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (train, val, test) = split_sizes(self.n_clips);
        if self.n_clips < 3 || train == 0 || val == 0 || test == 0 {
            return Err(Error::InvalidParameter(format!(
                "{} clips cannot be split 60/20/20 with every split non-empty",
                self.n_clips
            )));
        }
        if self.sample_rate == 0 || self.clip_seconds <= 0.0 || self.frame_size == 0 || self.frames_per_clip == 0 {
            return Err(Error::InvalidParameter("synthetic sizes must be positive".into()));
        }
        if self.vocab_size == 0 || self.embedding_dim == 0 {
            return Err(Error::InvalidParameter("vocabulary and embedding sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.leak_weight) {
            return Err(Error::InvalidParameter("leak weight must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn samples_per_clip(&self) -> usize {
        (self.clip_seconds * f64::from(self.sample_rate)).round() as usize
    }
}

/// 60/20/20 split sizes.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.6).round() as usize;
    let val = (n as f64 * 0.2).round() as usize;
    (train, val, n.saturating_sub(train + val))
}

/// Sinusoid amplitude that encodes Extraversion.
pub fn tone_amplitude(extraversion: f64) -> f64 {
    0.1 + 0.8 * extraversion
}

pub fn noise_amplitude(config: &SynthConfig, neuroticism: f64) -> f64 {
    config.noise_floor + config.noise_span * neuroticism
}

/// Number of content sentences (excluding the greeting) that encodes C.
pub fn content_sentences(conscientiousness: f64) -> usize {
    1 + (conscientiousness * 6.0).round() as usize
}

pub fn positive_rate(agreeableness: f64) -> f64 {
    0.1 + 0.5 * agreeableness
}

pub fn red_intensity(openness: f64) -> f64 {
    0.1 + 0.8 * openness
}

/// Values of the weakly leaked traits for one clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leaks {
    pub audio_c: f64,
    pub text_n: f64,
    pub video_e: f64,
}

pub fn neutral_word(i: usize) -> String {
    format!("word{i:03}")
}

pub fn vocabulary(config: &SynthConfig) -> Vec<String> {
    GREETING
        .iter()
        .chain(&POSITIVE_WORDS)
        .chain(&NEGATIVE_WORDS)
        .map(|s| s.to_string())
        .chain((0..config.vocab_size).map(neutral_word))
        .collect()
}

pub fn audio_waveform<R: Rng + ?Sized>(config: &SynthConfig, labels: &TraitVector, leaks: &Leaks, rng: &mut R) -> Vec<f64> {
    let n = config.samples_per_clip();
    let sr = f64::from(config.sample_rate);
    let amp = tone_amplitude(labels[Trait::Extraversion.index()]);
    let noise = noise_amplitude(config, labels[Trait::Neuroticism.index()]);
    let leak_amp = 0.02 + 0.06 * leaks.audio_c;
    let phase = rng.gen_range(0.0..2.0 * PI);
    let leak_phase = rng.gen_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let s = amp * (2.0 * PI * config.tone_hz * t + phase).sin()
                + leak_amp * (2.0 * PI * config.leak_tone_hz * t + leak_phase).sin()
                + noise * rng.gen_range(-1.0..1.0);
            s.clamp(-1.0, 1.0)
        })
        .collect()
}

pub fn transcript<R: Rng + ?Sized>(config: &SynthConfig, labels: &TraitVector, leaks: &Leaks, rng: &mut R) -> String {
    let mut sentences = vec![GREETING.join(" ")];
    let p_pos = positive_rate(labels[Trait::Agreeableness.index()]);
    let p_neg = 0.3 * leaks.text_n;
    for _ in 0..content_sentences(labels[Trait::Conscientiousness.index()]) {
        let len = rng.gen_range(6..=9);
        let words: Vec<String> = (0..len)
            .map(|_| {
                let u: f64 = rng.gen();
                if u < p_pos {
                    POSITIVE_WORDS.choose(rng).expect("non-empty").to_string()
                } else if u < p_pos + p_neg {
                    NEGATIVE_WORDS.choose(rng).expect("non-empty").to_string()
                } else {
                    neutral_word(rng.gen_range(0..config.vocab_size))
                }
            })
            .collect();
        sentences.push(words.join(" "));
    }
    let mut text = sentences.join(". ");
    text.push('.');
    text
}

/// A zero-mean pattern standing in for a person's appearance:
/// a sum of gratings with whole periods across the frame.
pub fn appearance<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> Vec<f64> {
    let s = config.frame_size;
    let mut pattern = vec![0.0; s * s];
    for _ in 0..config.identity_gratings {
        let (kx, ky) = loop {
            let k = (rng.gen_range(0..21_i32), rng.gen_range(-20..21_i32));
            if k != (0, 0) {
                break k;
            }
        };
        let phase = rng.gen_range(0.0..2.0 * PI);
        let amp = config.identity_contrast / config.identity_gratings as f64;
        for y in 0..s {
            for x in 0..s {
                let arg = 2.0 * PI * (f64::from(kx) * x as f64 + f64::from(ky) * y as f64) / s as f64 + phase;
                pattern[y * s + x] += amp * arg.cos();
            }
        }
    }
    pattern
}

pub fn frame<R: Rng + ?Sized>(config: &SynthConfig, labels: &TraitVector, leaks: &Leaks, identity: &[f64], rng: &mut R) -> FrameImage {
    let s = config.frame_size;
    let n = s * s;
    let means = [0.5, red_intensity(labels[Trait::Openness.index()]), 0.2 + 0.6 * leaks.video_e];
    let mut pixels = vec![0.0; 3 * n];
    for (plane, mean) in means.iter().enumerate() {
        // Scaled to the plane's headroom so the pattern itself never clips.
        let headroom = mean.min(1.0 - mean);
        for (p, id) in pixels[plane * n..(plane + 1) * n].iter_mut().zip(identity) {
            *p = (mean + headroom * id + config.pixel_noise * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0);
        }
    }
    FrameImage::new(s, s, pixels).expect("pixels in range")
}

fn clip_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

pub fn draw_labels<R: Rng + ?Sized>(rng: &mut R) -> TraitVector {
    let mut labels = [0.0; NUM_TRAITS];
    for l in &mut labels {
        *l = rng.gen_range(LABEL_LOW..LABEL_HIGH);
    }
    labels
}

fn leak<R: Rng + ?Sized>(w: f64, value: f64, rng: &mut R) -> f64 {
    w * value + (1.0 - w) * rng.gen_range(LABEL_LOW..LABEL_HIGH)
}

/// One generated clip before it is written to disk.
#[derive(Debug, Clone)]
pub struct SynthClip {
    pub clip_id: String,
    pub split: Split,
    pub labels: TraitVector,
    pub leaks: Leaks,
    pub audio: AudioClip,
    pub transcript: String,
    pub frames: Vec<FrameImage>,
}

pub fn generate_clip(config: &SynthConfig, index: usize, split: Split) -> SynthClip {
    let mut rng = clip_rng(config.seed, index);
    let labels = draw_labels(&mut rng);
    let w = config.leak_weight;
    let leaks = Leaks {
        audio_c: leak(w, labels[Trait::Conscientiousness.index()], &mut rng),
        text_n: leak(w, labels[Trait::Neuroticism.index()], &mut rng),
        video_e: leak(w, labels[Trait::Extraversion.index()], &mut rng),
    };
    let samples = audio_waveform(config, &labels, &leaks, &mut rng);
    let transcript = transcript(config, &labels, &leaks, &mut rng);
    let identity = appearance(config, &mut rng);
    let frames = (0..config.frames_per_clip)
        .map(|_| frame(config, &labels, &leaks, &identity, &mut rng))
        .collect();
    SynthClip {
        clip_id: format!("clip_{index:04}"),
        split,
        labels,
        leaks,
        audio: AudioClip::new(samples, config.sample_rate).expect("non-empty clip"),
        transcript,
        frames,
    }
}

/// In-memory corpus, split 60/20/20 in index order.
pub fn generate_clips(config: &SynthConfig) -> Result<Vec<SynthClip>> {
    config.validate()?;
    let (train, val, _) = split_sizes(config.n_clips);
    Ok((0..config.n_clips)
        .map(|i| {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            generate_clip(config, i, split)
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub split: DatasetSplit,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const META_FILE: &str = "synth_meta.json";

#[derive(Serialize)]
struct Meta<'a> {
    config: &'a SynthConfig,
    encodings: [&'static str; 7],
    leaks: Vec<(&'a str, Leaks)>,
}

/// Writes WAV audio, PNG frames, an embedding table, a manifest and a JSON
/// description of the planted encodings under `out_dir`.
pub fn synth_generate(config: &SynthConfig, out_dir: &Path) -> Result<SynthCorpus> {
    let clips = generate_clips(config)?;
    let audio_dir = out_dir.join("audio");
    let frame_dir = out_dir.join("frames");
    for d in [out_dir, &audio_dir, &frame_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut records = Vec::with_capacity(clips.len());
    for clip in &clips {
        let wav = audio_dir.join(format!("{}.wav", clip.clip_id));
        write_wav(&wav, &clip.audio)?;
        let mut frame_paths = Vec::new();
        for (k, f) in clip.frames.iter().enumerate() {
            let p = frame_dir.join(format!("{}_f{k}.png", clip.clip_id));
            write_frame_png(&p, f)?;
            frame_paths.push(p);
        }
        records.push(ClipRecord {
            clip_id: clip.clip_id.clone(),
            split: clip.split,
            audio: Some(wav),
            visual: Visual::Frames(frame_paths),
            transcript: Some(clip.transcript.clone()),
            labels: clip.labels,
        });
    }

    let manifest = out_dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &records)?;

    let embeddings = out_dir.join(EMBEDDINGS_FILE);
    let entries: Vec<(String, Vec<f64>)> = vocabulary(config)
        .into_iter()
        .map(|w| {
            let v = hashed_vector(config.seed, &w, config.embedding_dim);
            (w, v)
        })
        .collect();
    write_embeddings(&embeddings, config.embedding_dim, &entries)?;

    let meta = Meta {
        config,
        encodings: [
            "labels: uniform [0.1, 0.9] per trait",
            "audio: tone_hz sinusoid amplitude = 0.1 + 0.8*E; white noise amplitude = noise_floor + noise_span*N",
            "audio leak: leak_tone_hz sinusoid amplitude = 0.02 + 0.06*leak_C",
            "text: greeting sentence + (1 + round(6*C)) content sentences; positive-word rate = 0.1 + 0.5*A",
            "text leak: negative-word rate = 0.3*leak_N",
            "video: red plane mean = 0.1 + 0.8*O; blue plane mean = 0.5",
            "video leak: green plane mean = 0.2 + 0.6*leak_E; leak_X = leak_weight*X + (1-leak_weight)*U(0.1,0.9)",
        ],
        leaks: clips.iter().map(|c| (c.clip_id.as_str(), c.leaks)).collect(),
    };
    let meta_path = out_dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;

    let mut split = DatasetSplit::default();
    for r in records {
        match r.split {
            Split::Train => split.train.push(r),
            Split::Val => split.validation.push(r),
            Split::Test => split.test.push(r),
        }
    }
    Ok(SynthCorpus {
        manifest,
        embeddings,
        split,
    })
}
