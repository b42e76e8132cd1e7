//! Finite-difference suites for every differentiable op and for each
//! channel's full loss.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioChannelConfig;
use crate::autograd::{finite_diff_check, DenseIds, GradCheckReport, Graph, ParamId, ParamStore, Probe, Tensor, Var};
use crate::error::{Error, Result};
use crate::fusion::{FusedConfig, FusionMode};
use crate::model::{Mode, Model, ModelConfig, PreparedClip};
use crate::text::TextChannelConfig;
use crate::traits::NUM_TRAITS;
use crate::video::{FeatureSource, VideoChannelConfig};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: usize = 20;

/// Coordinates sampled per seed for the channel-level checks.
const CHANNEL_COORDS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Audio,
    Text,
    Video,
    Fused,
}

impl Scope {
    pub const ALL: [Scope; 5] = [Scope::Ops, Scope::Audio, Scope::Text, Scope::Video, Scope::Fused];
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "audio" => Ok(Scope::Audio),
            "text" => Ok(Scope::Text),
            "video" => Ok(Scope::Video),
            "fused" => Ok(Scope::Fused),
            other => Err(Error::InvalidParameter(format!("unknown gradcheck scope `{other}`"))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Ops => "ops",
            Scope::Audio => "audio",
            Scope::Text => "text",
            Scope::Video => "video",
            Scope::Fused => "fused",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub seeds: usize,
    pub report: GradCheckReport,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.passes(TOLERANCE)
    }
}

/// Scales the analytic gradient of one named check, to confirm the suite
/// notices a wrong backward pass.
#[derive(Debug, Clone, Copy)]
pub struct Corruption<'a> {
    pub name: &'a str,
    pub factor: f64,
}

type Build = fn(&mut Graph<'_>, &[Var], &mut ChaCha8Rng) -> Result<Var>;

struct OpCase {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    build: Build,
}

fn ops() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "conv1d",
            shapes: &[&[2, 13], &[3, 2, 4], &[3]],
            build: |g, v, _| g.conv1d(v[0], v[1], v[2], 2),
        },
        OpCase {
            name: "conv2d",
            shapes: &[&[2, 5, 6], &[3, 2, 3, 3], &[3]],
            build: |g, v, _| g.conv2d(v[0], v[1], v[2], 1, 1),
        },
        OpCase {
            name: "conv2d_strided",
            shapes: &[&[2, 7, 7], &[2, 2, 3, 3], &[2]],
            build: |g, v, _| g.conv2d(v[0], v[1], v[2], 2, 0),
        },
        OpCase {
            name: "max_pool2d",
            shapes: &[&[2, 4, 6]],
            build: |g, v, _| g.max_pool2d(v[0], 2),
        },
        OpCase {
            name: "linear",
            shapes: &[&[6], &[4, 6], &[4]],
            build: |g, v, _| g.linear(v[0], v[1], v[2]),
        },
        OpCase {
            name: "relu",
            shapes: &[&[12]],
            build: |g, v, _| Ok(g.relu(v[0])),
        },
        OpCase {
            name: "sigmoid",
            shapes: &[&[12]],
            build: |g, v, _| Ok(g.sigmoid(v[0])),
        },
        OpCase {
            name: "global_avg_pool",
            shapes: &[&[3, 7]],
            build: |g, v, _| g.global_avg_pool(v[0]),
        },
        OpCase {
            name: "max_over_time",
            shapes: &[&[4, 6]],
            build: |g, v, _| g.max_over_time(v[0]),
        },
        OpCase {
            name: "dropout",
            shapes: &[&[20]],
            build: |g, v, rng| g.dropout(v[0], 0.5, true, rng),
        },
        OpCase {
            name: "concat",
            shapes: &[&[3], &[4], &[2]],
            build: |g, v, _| g.concat(v),
        },
        OpCase {
            name: "softmax",
            shapes: &[&[5]],
            build: |g, v, _| Ok(g.softmax(v[0])),
        },
        OpCase {
            name: "weighted_sum",
            shapes: &[&[3], &[4], &[4], &[4]],
            build: |g, v, _| g.weighted_sum(v[0], &v[1..]),
        },
        OpCase {
            name: "mean",
            shapes: &[&[4], &[4], &[4]],
            build: |g, v, _| g.mean(v),
        },
        OpCase {
            name: "mse_over_traits",
            shapes: &[&[NUM_TRAITS]],
            build: |_, v, _| Ok(v[0]),
        },
    ]
}

fn split_point(point: &[f64], shapes: &[&[usize]]) -> Vec<Tensor> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::new(s.to_vec(), point[offset..offset + n].to_vec()).expect("sizes add up");
            offset += n;
            t
        })
        .collect()
}

/// Loss `mse(op(x), target)` for a random target; checks every input.
fn check_op(case: &OpCase, seed: u64, corrupt: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = case.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let scale = if case.name == "sigmoid" { 3.0 } else { 1.0 };
    let point: Vec<f64> = (0..total).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
    let op_seed: u64 = rng.gen();
    let store = ParamStore::new();

    let eval = |x: &[f64]| -> Result<(Graph<'_>, Vec<Var>, Var)> {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = split_point(x, case.shapes).into_iter().map(|t| g.variable(t)).collect();
        let mut op_rng = ChaCha8Rng::seed_from_u64(op_seed);
        let out = (case.build)(&mut g, &vars, &mut op_rng)?;
        let n = g.value(out).len();
        let mut target_rng = ChaCha8Rng::seed_from_u64(op_seed ^ 0x5eed);
        let target: Vec<f64> = (0..n).map(|_| target_rng.gen_range(-1.0..1.0)).collect();
        let loss = g.mse_over_traits(out, &target)?;
        Ok((g, vars, loss))
    };
    // Surface construction errors before differencing.
    eval(&point)?;

    let report = finite_diff_check(
        |x| {
            let (g, vars, loss) = eval(x).expect("shapes validated above");
            let grads = g.backward(loss).expect("scalar loss");
            let mut gradient = Vec::with_capacity(x.len());
            for v in &vars {
                match grads.wrt(*v) {
                    Some(d) => gradient.extend(d.iter().map(|d| d * corrupt)),
                    None => gradient.extend(std::iter::repeat_n(0.0, g.value(*v).len())),
                }
            }
            Probe {
                value: g.value(loss).item(),
                gradient,
                signature: g.kink_signature(),
            }
        },
        &point,
        STEP,
        None,
    );
    Ok(report)
}

fn tiny_audio() -> AudioChannelConfig {
    AudioChannelConfig {
        filters: 3,
        penultimate_dim: 4,
        ..AudioChannelConfig::default()
    }
}

fn tiny_text() -> TextChannelConfig {
    TextChannelConfig {
        embedding_dim: 6,
        filters_per_width: 3,
        penultimate_dim: 4,
        ..TextChannelConfig::default()
    }
}

fn tiny_video() -> VideoChannelConfig {
    VideoChannelConfig {
        feature_dim: 8,
        head_hidden_dim: 6,
        source: FeatureSource::Precomputed,
        ..VideoChannelConfig::default()
    }
}

/// A fused network over the tiny channels, with every non-backbone
/// parameter trainable.
fn tiny_fused(seed: u64) -> Result<Model> {
    let audio = Model::init(ModelConfig::Audio(tiny_audio()), seed)?;
    let text = Model::init(ModelConfig::Text(tiny_text()), seed + 1)?;
    let video = Model::init(ModelConfig::Video(tiny_video()), seed + 2)?;
    let config = FusedConfig {
        mode: FusionMode::Nnfb,
        hidden_dim: 5,
        audio: tiny_audio(),
        text: tiny_text(),
        video: tiny_video(),
    };
    let mut store = ParamStore::new();
    store.extend_from(&audio.store, &["audio.head"])?;
    store.extend_from(&text.store, &["text.head"])?;
    store.extend_from(&video.store, &["video.fc2"])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    DenseIds::init(&mut store, "fusion.fc1", config.concat_dim(), config.hidden_dim, false, &mut rng)?;
    DenseIds::init(&mut store, "fusion.fc2", config.hidden_dim, NUM_TRAITS, false, &mut rng)?;
    Model::from_parts(ModelConfig::Fused(config), store)
}

fn random_clip(scope: Scope, rng: &mut ChaCha8Rng) -> PreparedClip {
    let mut labels = [0.0; NUM_TRAITS];
    labels.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
    let needs = |s: Scope| scope == s || scope == Scope::Fused;
    let audio = needs(Scope::Audio).then(|| {
        let n = tiny_audio().min_input_len() + 37;
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
    });
    let sentences = needs(Scope::Text).then(|| {
        [5usize, 8]
            .iter()
            .map(|&len| {
                let data = (0..6 * len).map(|_| rng.gen_range(-0.5..0.5)).collect();
                Tensor::new(vec![6, len], data).expect("sizes match")
            })
            .collect()
    });
    let frames = needs(Scope::Video).then(|| vec![(0..8).map(|_| rng.gen_range(0.0..2.0)).collect()]);
    PreparedClip {
        clip_id: "gradcheck".into(),
        labels,
        audio,
        sentences,
        frames,
    }
}

/// Checks the full training loss of one channel (or the fused network)
/// with respect to a random subset of its trainable parameters.
fn check_model(scope: Scope, seed: u64, corrupt: f64) -> Result<GradCheckReport> {
    let mut model = match scope {
        Scope::Audio => Model::init(ModelConfig::Audio(tiny_audio()), seed)?,
        Scope::Text => Model::init(ModelConfig::Text(tiny_text()), seed)?,
        Scope::Video => Model::init(ModelConfig::Video(tiny_video()), seed)?,
        Scope::Fused => tiny_fused(seed)?,
        Scope::Ops => unreachable!("ops are checked one by one"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xface);
    for p in model.store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
    }
    let clip = random_clip(scope, &mut rng);
    let forward_seed: u64 = rng.gen();

    let trainable: Vec<(usize, usize)> = model
        .store
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.frozen)
        .flat_map(|(i, p)| (0..p.value.len()).map(move |k| (i, k)))
        .collect();
    let point: Vec<f64> = trainable
        .iter()
        .map(|&(i, k)| model.store.get(ParamId(i)).value.data()[k])
        .collect();
    let n = CHANNEL_COORDS.min(point.len());
    let coords = sample(&mut rng, point.len(), n).into_vec();

    let probe = |x: &[f64], model: &mut Model| -> Result<Probe> {
        for (&(i, k), &v) in trainable.iter().zip(x) {
            model.store.get_mut(ParamId(i)).value.data_mut()[k] = v;
        }
        let mut g = Graph::new(&model.store);
        let mut frng = ChaCha8Rng::seed_from_u64(forward_seed);
        let out = model.forward(&mut g, &clip, Mode::train(false), &mut frng)?;
        let loss = g.mse_over_traits(out.traits, &clip.labels)?;
        let grads = g.backward(loss)?;
        let gradient = trainable
            .iter()
            .map(|&(i, k)| grads.param(ParamId(i)).map_or(0.0, |d| d[k] * corrupt))
            .collect();
        Ok(Probe {
            value: g.value(loss).item(),
            gradient,
            signature: g.kink_signature(),
        })
    };
    probe(&point, &mut model)?;
    Ok(finite_diff_check(
        |x| probe(x, &mut model).expect("validated above"),
        &point,
        STEP,
        Some(&coords),
    ))
}

/// Runs one scope over `seeds` seeds, merging per-seed reports per check.
pub fn run_scope(scope: Scope, seeds: usize, corrupt: Option<Corruption<'_>>) -> Result<Vec<CheckOutcome>> {
    let factor = |name: &str| corrupt.filter(|c| c.name == name).map_or(1.0, |c| c.factor);
    let mut outcomes = Vec::new();
    match scope {
        Scope::Ops => {
            for case in ops() {
                let mut report = GradCheckReport::default();
                for s in 0..seeds {
                    report.merge(&check_op(&case, s as u64, factor(case.name))?);
                }
                outcomes.push(CheckOutcome {
                    name: case.name.to_string(),
                    seeds,
                    report,
                });
            }
        }
        _ => {
            let name = scope.to_string();
            let mut report = GradCheckReport::default();
            for s in 0..seeds {
                report.merge(&check_model(scope, 1000 + s as u64, factor(&name))?);
            }
            outcomes.push(CheckOutcome { name, seeds, report });
        }
    }
    Ok(outcomes)
}

/// Names of the individual op checks.
pub fn op_names() -> Vec<&'static str> {
    ops().iter().map(|c| c.name).collect()
}
