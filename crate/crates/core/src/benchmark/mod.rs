//! Synthetic benchmarks: data generation, recovery metrics and replications.

pub mod dgp;
pub mod metrics;
pub mod replications;

pub use dgp::{generate_independent, generate_sample, true_graph, DgpKind, DgpVariant, TRUE_EDGES};
pub use metrics::{confusion_metrics, hamming_distance, roc_curve, Confusion, RecoveryMetrics, RocCurve, RocEnvelope};
pub use replications::{run_replication, run_replications, BenchmarkConfig, BenchmarkReport, DataSource, Learner};
