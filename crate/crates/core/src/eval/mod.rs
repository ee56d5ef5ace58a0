//! Metrics, split protocols, the training loop and experiment drivers.

pub mod metrics;
pub mod protocol;
pub mod splits;
pub mod train;

pub use metrics::{average_ranks, plcc, rmse, srcc, MeanStd, MetricsSummary, SplitMetrics};
pub use protocol::{
    group_rmse_deviation, run_inter, run_intra, run_noise_grid, GroupDeviation, InterTarget, IntraResult, NoiseCell,
    Prepared, SplitOutcome,
};
pub use splits::{make_splits, Split, SplitSpec};
pub use train::{
    predict_items, train_head, FeatureDir, FeatureSource, HeadInputs, LabeledSet, Preset, TrainConfig,
    DEFAULT_MEMORY_LIMIT,
};
