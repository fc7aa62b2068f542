//! Data ingestion, imputation, graph analytics and export.

pub mod centrality;
pub mod export;
pub mod impute;
pub mod io;

pub use crate::benchmark::metrics::hamming_distance;
pub use centrality::{centrality, CentralityReport, EdgeLength};
pub use export::{export_graph, ExportFormat, FitMetadata, GraphDocument, NodeRecord};
pub use impute::{knn_impute, DEFAULT_NEIGHBORS};
pub use io::{load_csv, load_schema, parse_schema, read_csv, save_csv, write_csv, Schema};
