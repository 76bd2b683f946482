//! Differential morphing attack detection.
//!
//! A document image (e.g. a passport portrait) is compared with a trusted
//! live capture. For each of six pre-trained backbones the residual
//! `document - probe` is scored by a linear SVM; within each equal-dimension
//! group of three backbones, residuals are additionally blended on the
//! hypersphere and the resulting residue is scored by a seventh and eighth
//! SVM. The eight scores are summed.

pub mod classifier;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod protocols;
pub mod synth;

pub use classifier::{hinge_objective, svm_score, train_linear_svm, LinearModel, TrainConfig};
pub use dataset::Dataset;
pub use embedding::{DimProfile, EmbeddingRecord, EmbeddingSet, Group, NetworkId, SampleView};
pub use error::{DmadError, ErrorKind, Result};
pub use fusion::{
    difference, pearson, select_optimal_pairs, slerp, slerp_residue, DifferenceFeature,
    GroupSelection, PairScheme, SlerpConfig, SlerpInput,
};
pub use manifest::{
    build_pairs, DatasetManifest, EvaluationPair, Label, Medium, PairFilter, Role, SampleEntry,
    Split,
};
pub use metrics::{
    bpcer_at_apcer, d_eer, det_curve, rates_at, summarize, write_det_csv, DetCurve, DetPoint,
    ScoredSample, Summary,
};
pub use pipeline::{
    score_pair, score_pairs, train_dmad, DmadModel, FusedScore, PipelineConfig, PreparedPairs,
    COMPONENT_NAMES,
};
pub use protocols::{
    execute_protocol, execute_run, plan_protocol, read_report_csv, write_report_csv, PlanOptions,
    Protocol, ReportRow, RunConfig, RunPlan,
};
pub use synth::{generate, MorphBlend, SynthConfig};
