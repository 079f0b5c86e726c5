//! Ranking metrics, length-stratified reports and the ablation runner.

mod ablation;
mod metrics;
mod runner;

pub use ablation::{run_ablation_suite, AblationRow, AblationTable};
pub use metrics::{
    bucket_of, rank_of_target, recall_mrr_at_k, BucketReport, MetricAtK, RankedInstance, RankingReport, BUCKETS,
    SHORT_SESSION_MAX,
};
pub use runner::{evaluate, rank_session, rank_split, EvalConfig, Targets};
