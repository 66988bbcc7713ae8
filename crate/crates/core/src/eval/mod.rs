//! Overlap metric, dataset evaluation and pipeline comparison reports.

pub mod metrics;
pub mod report;

pub use metrics::{dsc, mean, sample_std};
pub use report::{
    compare_pipelines, evaluate, ComparisonEntry, ComparisonReport, EvalReport, OracleSegmenter, PipelineSpec,
    SampleScore, Segmenter,
};
