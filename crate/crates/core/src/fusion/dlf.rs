//! Decision-level fusion: a per-trait affine combination of the three
//! channels' predictions with weights that sum to one.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::traits::{Modality, Trait, TraitVector, NUM_TRAITS};

const NUM_MODALITIES: usize = 3;

/// Tolerance on each row's sum.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

pub const DLF_ITERATIONS: usize = 10_000;
pub const DLF_STEP: f64 = 0.1;

/// Rows are traits (E A C N O), columns are modalities (audio, text, video).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    w: [[f64; NUM_MODALITIES]; NUM_TRAITS],
}

impl FusionWeights {
    pub fn new(w: [[f64; NUM_MODALITIES]; NUM_TRAITS]) -> Result<Self> {
        for (t, row) in Trait::ALL.iter().zip(&w) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidWeights(format!("trait {t}: non-finite weight in {row:?}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidWeights(format!("trait {t}: weights {row:?} sum to {sum}, not 1")));
            }
        }
        Ok(FusionWeights { w })
    }

    pub fn uniform() -> Self {
        FusionWeights {
            w: [[1.0 / 3.0; NUM_MODALITIES]; NUM_TRAITS],
        }
    }

    pub fn rows(&self) -> &[[f64; NUM_MODALITIES]; NUM_TRAITS] {
        &self.w
    }

    pub fn row(&self, t: Trait) -> [f64; NUM_MODALITIES] {
        self.w[t.index()]
    }

    /// Five lines `trait w_audio w_text w_video`, traits in E A C N O order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, row) in Trait::ALL.iter().zip(&self.w) {
            writeln!(out, "{} {} {} {}", t.letter(), row[0], row[1], row[2]).expect("string write");
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut w = [[f64::NAN; NUM_MODALITIES]; NUM_TRAITS];
        let mut seen = [false; NUM_TRAITS];
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [name, a, b, c] = fields.as_slice() else {
                return Err(Error::parse(path, lineno, "expected `trait w_audio w_text w_video`"));
            };
            let t = Trait::from_letter(name).ok_or_else(|| Error::parse(path, lineno, format!("unknown trait `{name}`")))?;
            if std::mem::replace(&mut seen[t.index()], true) {
                return Err(Error::parse(path, lineno, format!("trait {t} listed twice")));
            }
            for (slot, raw) in w[t.index()].iter_mut().zip([a, b, c]) {
                *slot = raw
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad weight `{raw}`")))?;
            }
        }
        if let Some(t) = Trait::ALL.iter().find(|t| !seen[t.index()]) {
            return Err(Error::InvalidWeights(format!("{}: no row for trait {t}", path.display())));
        }
        FusionWeights::new(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Modalities as rows, traits as columns, two decimals.
    pub fn table(&self) -> String {
        let mut out = String::from("Model");
        for t in Trait::ALL {
            write!(out, "\t{}", t.letter()).expect("string write");
        }
        out.push('\n');
        for m in Modality::ALL {
            let mut name = m.name().to_string();
            name[..1].make_ascii_uppercase();
            out.push_str(&name);
            for row in &self.w {
                write!(out, "\t{:.2}", row[m as usize]).expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

/// Per-trait affine combination, clamped to `[0, 1]`.
pub fn dlf_predict(weights: &FusionWeights, preds: &[TraitVector; NUM_MODALITIES]) -> Result<TraitVector> {
    // Re-validate in case the weights were built without `new`.
    let weights = FusionWeights::new(weights.w)?;
    let mut out = [0.0; NUM_TRAITS];
    for (i, o) in out.iter_mut().enumerate() {
        let v: f64 = (0..NUM_MODALITIES).map(|j| weights.w[i][j] * preds[j][i]).sum();
        *o = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Per-clip channel predictions and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub clip_id: String,
    /// Indexed by modality: audio, text, video.
    pub preds: [TraitVector; NUM_MODALITIES],
    pub labels: TraitVector,
}

pub type PredictionSet = Vec<PredictionRecord>;

/// Mean absolute deviation of `Σⱼ wⱼ p̂ⱼ` from the labels for one trait, unclamped.
pub fn lad_objective(devset: &[PredictionRecord], t: Trait, w: &[f64; NUM_MODALITIES]) -> f64 {
    let i = t.index();
    let total: f64 = devset
        .iter()
        .map(|r| {
            let p: f64 = (0..NUM_MODALITIES).map(|j| w[j] * r.preds[j][i]).sum();
            (p - r.labels[i]).abs()
        })
        .sum();
    total / devset.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlfFit {
    pub weights: FusionWeights,
    /// Traits whose three channels agree on every clip; any row is optimal.
    pub degenerate: [bool; NUM_TRAITS],
    /// Objective value of each returned row.
    pub objective: [f64; NUM_TRAITS],
}

/// Exact projection onto `Σ w = 1`, with a final correction of the last
/// component so the sum is 1 up to rounding of one addition.
fn project(w: &mut [f64; NUM_MODALITIES]) {
    let shift = (w.iter().sum::<f64>() - 1.0) / NUM_MODALITIES as f64;
    for v in w.iter_mut() {
        *v -= shift;
    }
    w[NUM_MODALITIES - 1] = 1.0 - w[..NUM_MODALITIES - 1].iter().sum::<f64>();
}

fn fit_trait(devset: &[PredictionRecord], t: Trait) -> ([f64; NUM_MODALITIES], f64) {
    let i = t.index();
    let n = devset.len() as f64;
    let mut w = [1.0 / 3.0; NUM_MODALITIES];
    let mut best = (w, lad_objective(devset, t, &w));
    for step in 1..=DLF_ITERATIONS {
        let mut g = [0.0; NUM_MODALITIES];
        for r in devset {
            let p: f64 = (0..NUM_MODALITIES).map(|j| w[j] * r.preds[j][i]).sum();
            let r_i = p - r.labels[i];
            let s = if r_i > 0.0 {
                1.0
            } else if r_i < 0.0 {
                -1.0
            } else {
                0.0
            };
            for (gj, pj) in g.iter_mut().zip(&r.preds) {
                *gj += s * pj[i] / n;
            }
        }
        let eta = DLF_STEP / (step as f64).sqrt();
        for j in 0..NUM_MODALITIES {
            w[j] -= eta * g[j];
        }
        project(&mut w);
        let obj = lad_objective(devset, t, &w);
        if obj < best.1 {
            best = (w, obj);
        }
    }
    best
}

/// Fits each trait's row by projected subgradient descent on the mean
/// absolute error, keeping the best iterate.
pub fn dlf_fit(devset: &[PredictionRecord]) -> Result<DlfFit> {
    if devset.is_empty() {
        return Err(Error::EmptyDataset("no development predictions to fit fusion weights".into()));
    }
    let mut w = [[1.0 / 3.0; NUM_MODALITIES]; NUM_TRAITS];
    let mut degenerate = [false; NUM_TRAITS];
    let mut objective = [0.0; NUM_TRAITS];
    for t in Trait::ALL {
        let i = t.index();
        let identical = devset
            .iter()
            .all(|r| r.preds[0][i] == r.preds[1][i] && r.preds[1][i] == r.preds[2][i]);
        if identical {
            degenerate[i] = true;
            objective[i] = lad_objective(devset, t, &w[i]);
            log::warn!("trait {t}: all channels agree on every clip, using uniform weights");
            continue;
        }
        let (row, obj) = fit_trait(devset, t);
        w[i] = row;
        objective[i] = obj;
    }
    Ok(DlfFit {
        weights: FusionWeights::new(w)?,
        degenerate,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_devset(n: usize, seed: u64, label: impl Fn(&[TraitVector; 3], &mut ChaCha8Rng) -> TraitVector) -> PredictionSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let mut preds = [[0.0; 5]; 3];
                for p in preds.iter_mut().flatten() {
                    *p = rng.gen_range(0.0..1.0);
                }
                let labels = label(&preds, &mut rng);
                PredictionRecord {
                    clip_id: format!("c{k}"),
                    preds,
                    labels,
                }
            })
            .collect()
    }

    #[test]
    fn predict_examples() {
        let mut w = [[1.0 / 3.0; 3]; 5];
        w[0] = [0.44, -0.03, 0.59];
        w[1] = [1.0, 0.0, 0.0];
        let weights = FusionWeights::new(w).unwrap();
        let mut preds = [[0.5; 5]; 3];
        preds[0][0] = 1.0;
        preds[1][0] = 0.0;
        preds[2][0] = 0.0;
        preds[0][1] = 0.7;
        let out = dlf_predict(&weights, &preds).unwrap();
        assert!((out[0] - 0.44).abs() < 1e-12);
        assert!((out[1] - 0.7).abs() < 1e-12);
        for v in &out[2..] {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_clamps_and_rejects_bad_rows() {
        let mut w = [[1.0 / 3.0; 3]; 5];
        w[0] = [2.0, -1.0, 0.0];
        let weights = FusionWeights::new(w).unwrap();
        let mut preds = [[0.5; 5]; 3];
        preds[0][0] = 1.0;
        preds[1][0] = 0.0;
        assert_eq!(dlf_predict(&weights, &preds).unwrap()[0], 1.0);
        w[0] = [0.5, 0.5, 0.5];
        assert!(matches!(FusionWeights::new(w), Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn recovers_copied_channel() {
        let set = random_devset(50, 1, |p, _| p[0]);
        let fit = dlf_fit(&set).unwrap();
        for row in fit.weights.rows() {
            assert!((row[0] - 1.0).abs() < 1e-2 && row[1].abs() < 1e-2 && row[2].abs() < 1e-2, "{row:?}");
        }
    }

    #[test]
    fn recovers_planted_mixture() {
        let set = random_devset(50, 2, |p, _| {
            let mut y = [0.0; 5];
            for i in 0..5 {
                y[i] = 0.6 * p[0][i] + 0.4 * p[2][i];
            }
            y
        });
        let fit = dlf_fit(&set).unwrap();
        for row in fit.weights.rows() {
            assert!((row[0] - 0.6).abs() < 1e-2 && row[1].abs() < 1e-2 && (row[2] - 0.4).abs() < 1e-2, "{row:?}");
        }
    }

    #[test]
    fn degenerate_devset_is_uniform_and_flagged() {
        let set: PredictionSet = (0..5)
            .map(|k| PredictionRecord {
                clip_id: k.to_string(),
                preds: [[0.1 * k as f64; 5]; 3],
                labels: [0.3; 5],
            })
            .collect();
        let fit = dlf_fit(&set).unwrap();
        assert_eq!(fit.degenerate, [true; 5]);
        assert_eq!(fit.weights, FusionWeights::uniform());
        assert!(dlf_fit(&[]).is_err());
    }

    #[test]
    fn rows_sum_to_one_and_beat_corners() {
        for seed in 0..5 {
            let set = random_devset(30, 10 + seed, |_, rng| {
                let mut y = [0.0; 5];
                for v in &mut y {
                    *v = rng.gen_range(0.0..1.0);
                }
                y
            });
            let fit = dlf_fit(&set).unwrap();
            for t in Trait::ALL {
                let row = fit.weights.row(t);
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOLERANCE);
                for corner in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
                    assert!(fit.objective[t.index()] <= lad_objective(&set, t, &corner) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn weights_file_round_trip() {
        let mut w = [[0.2, 0.3, 0.5]; 5];
        w[3] = [0.44, -0.03, 0.59];
        let weights = FusionWeights::new(w).unwrap();
        let p = Path::new("w.txt");
        let back = FusionWeights::parse(&weights.to_text(), p).unwrap();
        assert_eq!(back, weights);
        assert!(FusionWeights::parse("E 1 0 0\n", p).is_err());
        assert!(weights.table().starts_with("Model\tE\tA\tC\tN\tO\nAudio\t0.20"));
    }
}
