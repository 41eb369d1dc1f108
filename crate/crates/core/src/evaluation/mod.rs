//! Average precision, paired significance tests, and the end-to-end
//! strategy comparison and granularity sweep.

mod metrics;
mod pipeline;
pub mod stats;

pub use metrics::{average_precision, paired_one_tailed_ttest, EvalResult, Qrels, TTest};
pub use pipeline::{
    compare_strategies, compare_with_profiles, granularity_sweep, run_tag, sweep_tsv, Pipeline, PipelineConfig,
    Routed, StrategyComparison, StrategyTest, SweepPoint, SweepResult, COMPARED_PAIRS,
};
