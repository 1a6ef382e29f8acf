//! Order-preserving bilinear fusion of a visual optical-flow stream and a
//! seismic stream, built from scratch on a minimal float64 tensor/tape
//! stack: per-modality CNN streams, L1-regularized feature reduction,
//! index-wise outer-product fusion with an analytic backward pass, a 3D
//! convolutional classifier over the fused grid, the orderless and
//! concatenation baselines, late fusion rules, a synthetic sensor-field
//! simulator, and a training/evaluation harness with detection metrics.

// index loops over parallel buffers stay as loops, and comparisons are
// spelled `!(x > 0.0)` so NaN fails validation
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod report;
pub mod sim;
pub mod tensor;
pub mod tape;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::{Error, Result};
pub use fusion::{
    factorization_identity_check, flat_concatenate, l1_penalty, l1_subgradient,
    op_bilinear_backward, op_bilinear_fuse, op_concatenate, orderless_bilinear_pool, sparse_reduce,
};
pub use gradcheck::{finite_difference_check, FD_EPSILON, FD_TOLERANCE};
pub use metrics::{
    distance_stratified_recall, evaluate_scores, f1_score, pr_curve, BandRecall,
    DistanceBandReport, Metrics, PRCurve, PRPoint,
};
pub use model::{
    average_fusion, dempster_shafer_fuse, gradcheck_model, DsFusion, Model, ModelSpec, ParamCheck,
    Parameter, Variant,
};
pub use report::export_report;
pub use sim::{
    camera_params, read_dataset, render_avg_of, simulate_dataset, synthesize_seismic,
    window_and_label, write_dataset, CameraParams, Dataset, FieldConfig, SampleWindow, Session,
    Trajectory,
};
pub use tape::{Gradients, NodeId, Padding, Tape};
pub use tensor::Tensor;
pub use train::{
    adam_step, reduction_indices, samples_from_windows, score_samples, train, AdamConfig,
    AdamState, EpochStats, InitMode, TrainConfig, TrainOutcome, TrainSample,
};
