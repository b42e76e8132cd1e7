//! Dataset ingestion and the synthetic corpus generator.

mod embeddings;
mod manifest;
pub mod synth;
mod visual;
mod wav;

pub use embeddings::{load_embeddings, write_embeddings};
pub use manifest::{parse_manifest, write_manifest, ClipRecord, DatasetSplit, Split, Visual};
pub use synth::{synth_generate, SynthConfig, SynthCorpus};
pub use visual::{load_feature_file, read_frame_png, write_feature_file, write_frame_png};
pub use wav::{quantize, read_wav, write_wav};
