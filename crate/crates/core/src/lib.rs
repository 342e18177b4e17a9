//! Hebbian convolutional feature learning for task-incremental classification.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numeric piece of the
//! pipeline:
//!
//! - [`tensor`]: dense `f64` tensors with convolution, pooling, batch
//!   normalization, the Triangle activation and softmax
//! - [`softhebb`]: soft winner-take-all Hebbian convolution layers
//! - [`plasticity`]: per-kernel weight-change tracking and neuromodulated
//!   update gating
//! - [`extractor`]: the stacked Hebbian feature extractor
//! - [`heads`]: task-specific linear heads trained with softmax cross-entropy
//! - [`metrics`]: accuracy matrix and the forgetting / backward-transfer /
//!   intransigence measures
//! - [`data`]: clip records, fold splits, standardization, synthetic datasets
//! - [`harness`]: the task-incremental, joint and common-head protocols
//!
//! File formats, audio decoding and the command-line driver live in the `htil`
//! crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod extractor;
pub mod harness;
pub mod heads;
pub(crate) mod math;
pub mod metrics;
pub mod plasticity;
pub mod rng;
pub mod softhebb;
pub mod tensor;

pub use data::{ClipRecord, FoldSplit, Standardizer, SynthSpec};
pub use error::{Error, Result};
pub use extractor::{ArchitectureConfig, FeatureExtractor, HebbianBlock, LayerSpec, PoolKind};
pub use harness::{
    run_common_head, run_joint, run_til, split_tasks, HarnessConfig, StageLog, TaskData,
    TaskSequence, TilOutcome, TilRun,
};
pub use heads::{HeadStore, HeadTrainConfig, LinearHead, TrainingLog};
pub use metrics::{backward_transfer, forgetting_measure, intransigence, AccuracyMatrix};
pub use plasticity::{PlasticityConfig, PlasticityLedger, UpdateNorm};
pub use softhebb::{HebbianConvLayer, HebbianParams, RawUpdate};
pub use tensor::{BatchNormState, BnMode, ConvSpec, Tensor};
