//! Latent-space feature calibration for embedding datasets.
//!
//! Embeddings from an upstream feature extractor (a plain view and a randomly
//! augmented view of the same clips) are loaded from DARC1 files, enriched
//! with generated vectors interpolated toward common-class centers, and used
//! to train an attention-gated classification head with periodic hard-sample
//! mining. Evaluation reports balanced accuracy with a common/rare breakdown.

// Index loops mirror the formulas; negated comparisons also reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod format;
pub mod head;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use calibration::{
    build_calibrated_set, calibrate_sample, generate_common, generate_rare, sample_omega,
    topk_common_centers, CalibratedSet, CalibrationConfig, CenterKind, CenterSet, Provenance,
};
pub use dataset::{EmbeddingDataset, View};
pub use error::{Error, Result};
pub use eval::{balanced_accuracy, cross_modality_eval, evaluate, predict, EvalReport};
pub use format::{load_dataset, save_dataset};
pub use head::{forward, loss_and_grad, mine_hard_samples, train, HeadParams, TrainConfig};
pub use stats::{
    compute_class_stats, partition_by_frequency, ClassStats, CovMode, FrequencyPartition,
};
