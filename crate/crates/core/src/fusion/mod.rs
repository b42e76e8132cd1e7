//! Decision-level and network-level fusion of the three channels.

mod dlf;
mod network;

pub use dlf::{
    dlf_fit, dlf_predict, lad_objective, DlfFit, FusionWeights, PredictionRecord, PredictionSet, DLF_ITERATIONS,
    DLF_STEP, ROW_SUM_TOLERANCE,
};
pub use network::{build_fused, warm_start, FusedConfig, FusedNetwork, FusionMode, DEFAULT_HIDDEN_DIM, PENULTIMATE_DIMS};
