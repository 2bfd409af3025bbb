//! AUC metrics, evaluation runs and the sequence-length scaling benchmark.

mod attention;
mod auc;
mod bench;
mod run;

pub use attention::AttentionBaseline;
pub use auc::{examples_auc, macro_ovr_auc, recording_auc, roc_auc, ScoredExample};
pub use bench::{
    bench_scaling, doubling, loglog_slope, scan_state_bytes, BenchConfig, BenchFailure, BenchReport, BenchSeries,
};
pub use run::{
    default_duration_caps, eval_model, eval_run, infer_split, standard_ablations, text_probs, tune_on_validation,
    write_jsonl, EvalOptions, EvalOutput, MetricRow, MetricsTable, RowKind, System, Tuning,
};
