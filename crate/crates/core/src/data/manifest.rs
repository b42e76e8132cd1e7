//! Tab-separated clip manifest.
//!
//! One record per line:
//!
//! ```text
//! clip_id  split  audio_path  visual  "transcript"  E  A  C  N  O
//! ```
//!
//! `split` is `train`, `val` or `test`. `visual` is either a `;`-separated
//! list of PNG frames or a single feature file. Paths are relative to the
//! manifest's directory; `-` marks a missing modality. The transcript is a
//! JSON string literal. Blank lines and lines starting with `#` are ignored.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::traits::{Trait, TraitVector, NUM_TRAITS};

const FIELDS: usize = 5 + NUM_TRAITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" | "validation" | "dev" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Visual {
    None,
    Frames(Vec<PathBuf>),
    Features(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub split: Split,
    pub audio: Option<PathBuf>,
    pub visual: Visual,
    pub transcript: Option<String>,
    pub labels: TraitVector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<ClipRecord>,
    pub validation: Vec<ClipRecord>,
    pub test: Vec<ClipRecord>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, split: Split) -> &[ClipRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &ClipRecord> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    /// When no validation records are present, moves a seeded 20% of the
    /// training pool into validation.
    pub fn ensure_validation(&mut self, seed: u64) {
        if !self.validation.is_empty() || self.train.len() < 2 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.train.shuffle(&mut rng);
        let n_val = ((self.train.len() as f64 * 0.2).round() as usize).max(1);
        self.validation = self.train.split_off(self.train.len() - n_val);
        for r in &mut self.validation {
            r.split = Split::Val;
        }
        self.train.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        self.validation.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    }
}

fn resolve(base: &Path, field: &str) -> Option<PathBuf> {
    (field != "-").then(|| base.join(field))
}

fn must_exist(path: &Path) -> Result<()> {
    std::fs::metadata(path).map(|_| ()).map_err(|e| Error::io(path, e))
}

pub fn parse_manifest(path: &Path) -> Result<DatasetSplit> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut split = DatasetSplit::default();
    let mut seen = HashSet::new();

    for (idx, line) in content.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != FIELDS {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {FIELDS} tab-separated fields, found {}", fields.len()),
            ));
        }
        let clip_id = fields[0].trim().to_string();
        if clip_id.is_empty() || clip_id.contains(char::is_whitespace) {
            return Err(Error::parse(path, lineno, format!("invalid clip id `{clip_id}`")));
        }
        let which = Split::parse(fields[1].trim())
            .ok_or_else(|| Error::parse(path, lineno, format!("unknown split `{}`", fields[1])))?;

        let audio = resolve(base, fields[2].trim());
        let visual_field = fields[3].trim();
        let visual = if visual_field == "-" {
            Visual::None
        } else {
            let items: Vec<&str> = visual_field.split(';').filter(|s| !s.is_empty()).collect();
            if items.iter().all(|s| s.to_ascii_lowercase().ends_with(".png")) {
                Visual::Frames(items.iter().map(|s| base.join(s)).collect())
            } else if items.len() == 1 {
                Visual::Features(base.join(items[0]))
            } else {
                return Err(Error::parse(
                    path,
                    lineno,
                    "visual field must be PNG frames or a single feature file",
                ));
            }
        };

        let transcript_field = fields[4].trim();
        let transcript = if transcript_field == "-" {
            None
        } else {
            let s: String = serde_json::from_str(transcript_field)
                .map_err(|e| Error::parse(path, lineno, format!("transcript is not a quoted string: {e}")))?;
            Some(s)
        };

        let mut labels = [0.0; NUM_TRAITS];
        for (i, t) in Trait::ALL.iter().enumerate() {
            let raw = fields[5 + i].trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("trait {t}: bad number `{raw}`")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "{}:{lineno}: clip `{clip_id}` trait {t} label {v} outside [0, 1]",
                    path.display()
                )));
            }
            labels[i] = v;
        }

        if !seen.insert(clip_id.clone()) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: clip id `{clip_id}` appears more than once",
                path.display()
            )));
        }

        if let Some(a) = &audio {
            must_exist(a)?;
        }
        match &visual {
            Visual::Frames(fs) => fs.iter().try_for_each(|f| must_exist(f))?,
            Visual::Features(f) => must_exist(f)?,
            Visual::None => {}
        }

        let record = ClipRecord {
            clip_id,
            split: which,
            audio,
            visual,
            transcript,
            labels,
        };
        match which {
            Split::Train => split.train.push(record),
            Split::Val => split.validation.push(record),
            Split::Test => split.test.push(record),
        }
    }

    if split.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no records", path.display())));
    }
    Ok(split)
}

fn relative(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).display().to_string()
}

/// Serializes records with paths relative to the manifest's directory.
pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = String::new();
    for r in records {
        let audio = r.audio.as_deref().map_or("-".to_string(), |p| relative(base, p));
        let visual = match &r.visual {
            Visual::None => "-".to_string(),
            Visual::Frames(fs) => fs.iter().map(|f| relative(base, f)).collect::<Vec<_>>().join(";"),
            Visual::Features(f) => relative(base, f),
        };
        let transcript = r
            .transcript
            .as_ref()
            .map_or("-".to_string(), |t| serde_json::to_string(t).expect("string serializes"));
        let labels: Vec<String> = r.labels.iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!(
            "{}\t{}\t{audio}\t{visual}\t{transcript}\t{}\n",
            r.clip_id,
            r.split,
            labels.join("\t")
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.wav"), b"x").unwrap();
        let m = dir.path().join("manifest.tsv");
        (dir, m)
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let (_d, m) = setup();
        std::fs::write(&m, "# nothing\n\n").unwrap();
        assert!(matches!(parse_manifest(&m), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn label_out_of_range_names_trait() {
        let (_d, m) = setup();
        std::fs::write(&m, "c1\ttrain\ta.wav\t-\t\"hi\"\t0.5\t0.5\t1.2\t0.5\t0.5\n").unwrap();
        match parse_manifest(&m) {
            Err(Error::Validation(msg)) => assert!(msg.contains("trait C"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected_across_splits() {
        let (_d, m) = setup();
        std::fs::write(
            &m,
            "c1\ttrain\ta.wav\t-\t-\t0.5\t0.5\t0.5\t0.5\t0.5\nc1\ttest\ta.wav\t-\t-\t0.5\t0.5\t0.5\t0.5\t0.5\n",
        )
        .unwrap();
        assert!(matches!(parse_manifest(&m), Err(Error::Validation(msg)) if msg.contains("more than once")));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let (_d, m) = setup();
        std::fs::write(&m, "c1\ttrain\ta.wav\t-\t-\t0.5\t0.5\t0.5\t0.5\t0.5\nbroken line\n").unwrap();
        assert!(matches!(parse_manifest(&m), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let (_d, m) = setup();
        std::fs::write(&m, "c1\ttrain\tnope.wav\t-\t-\t0.5\t0.5\t0.5\t0.5\t0.5\n").unwrap();
        assert!(matches!(parse_manifest(&m), Err(Error::Io { .. })));
    }

    #[test]
    fn round_trip_and_auto_split() {
        let (dir, m) = setup();
        let records: Vec<ClipRecord> = (0..10)
            .map(|i| ClipRecord {
                clip_id: format!("c{i}"),
                split: Split::Train,
                audio: Some(dir.path().join("a.wav")),
                visual: Visual::None,
                transcript: Some(format!("say \"{i}\"\tnow")),
                labels: [0.1 * i as f64 / 2.0, 0.2, 0.3, 0.4, 0.9],
            })
            .collect();
        write_manifest(&m, &records).unwrap();
        let mut parsed = parse_manifest(&m).unwrap();
        assert_eq!(parsed.train, records);
        parsed.ensure_validation(3);
        assert_eq!(parsed.train.len(), 8);
        assert_eq!(parsed.validation.len(), 2);
        let ids: HashSet<_> = parsed.all().map(|r| r.clip_id.clone()).collect();
        assert_eq!(ids.len(), 10);
    }
}
