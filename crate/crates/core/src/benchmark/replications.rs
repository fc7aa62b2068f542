//! Monte Carlo replications comparing learners on synthetic graphs.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dgp::{generate_independent, generate_sample, DgpKind, DgpVariant};
use super::metrics::{confusion_metrics, roc_curve, RecoveryMetrics, RocEnvelope};
use crate::error::{QmgmError, Result};
use crate::mgm::{fit_mgm, select_mgm_graph, MgmConfig};
use crate::midcdf::{estimate_all, LogitConfig};
use crate::model::{empirical_quantile_sorted, Dataset, EstimatedGraph, QuantileGrid, DEFAULT_NONZERO_TOLERANCE};
use crate::penalized::{Estimator, PathStrategy};
use crate::selection::{fit_qmgm_with_midcdf, path_graphs, select_graph, QmgmConfig, ResidualScale, SelectionCriterion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Learner {
    /// Quantile model on `L` equispaced levels.
    Qmgm(usize),
    Mgm,
}

impl Learner {
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "mgm" {
            return Ok(Learner::Mgm);
        }
        if let Some(l) = t.strip_prefix("qmgm").and_then(|r| r.parse::<usize>().ok()) {
            QuantileGrid::standard(l)?;
            return Ok(Learner::Qmgm(l));
        }
        Err(QmgmError::Config(format!("unknown learner `{s}` (expected qmgm<L> or mgm)")))
    }

    pub fn label(&self) -> String {
        match self {
            Learner::Qmgm(l) => format!("qmgm{l}"),
            Learner::Mgm => "mgm".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Dgp(DgpKind),
    /// Mutually independent columns with an empty true graph.
    Independent { continuous: usize, count: usize },
}

impl DataSource {
    pub fn label(&self) -> String {
        match self {
            DataSource::Dgp(k) => k.as_str().into(),
            DataSource::Independent { continuous, count } => format!("independent({continuous},{count})"),
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<(Dataset, EstimatedGraph)> {
        match *self {
            DataSource::Dgp(kind) => generate_sample(&DgpVariant::new(kind, n, seed)?),
            DataSource::Independent { continuous, count } => generate_independent(continuous, count, n, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub source: DataSource,
    pub n: usize,
    pub replications: usize,
    pub base_seed: u64,
    pub learners: Vec<Learner>,
    /// Criterion names understood by [`SelectionCriterion::from_name`].
    pub criteria: Vec<String>,
    /// Strictly decreasing penalty grid.
    pub lambdas: Vec<f64>,
    pub residual_scale: ResidualScale,
    pub nonzero_tolerance: f64,
    pub envelope: RocEnvelope,
    pub estimator: Estimator,
    pub standardize: bool,
    pub path: PathStrategy,
}

impl BenchmarkConfig {
    /// 50 log-equispaced penalties on `[0.001, 5]`, every learner and criterion.
    pub fn standard(source: DataSource, n: usize, replications: usize, base_seed: u64) -> Result<Self> {
        Ok(Self {
            source,
            n,
            replications,
            base_seed,
            learners: vec![Learner::Qmgm(1), Learner::Qmgm(3), Learner::Qmgm(7), Learner::Mgm],
            criteria: ["aic", "bic", "bicp", "bic2p", "bic3p"].iter().map(|s| s.to_string()).collect(),
            lambdas: crate::model::log_spaced_lambdas(0.001, 5.0, 50)?,
            residual_scale: ResidualScale::Linear,
            nonzero_tolerance: DEFAULT_NONZERO_TOLERANCE,
            envelope: RocEnvelope::CumulativeMax,
            estimator: Estimator::PseudoResponse,
            standardize: true,
            path: PathStrategy::WarmStart,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(QmgmError::Config("need at least one replication".into()));
        }
        if self.learners.is_empty() {
            return Err(QmgmError::Config("need at least one learner".into()));
        }
        crate::model::validate_lambda_grid(&self.lambdas)?;
        for c in &self.criteria {
            SelectionCriterion::from_name(c, 3)?;
        }
        Ok(())
    }

    /// SHA-256 of the JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub criterion: String,
    pub lambda: f64,
    pub edges: usize,
    pub metrics: RecoveryMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerOutcome {
    pub learner: Learner,
    pub auc: f64,
    pub selections: Vec<CriterionOutcome>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub index: usize,
    pub seed: u64,
    pub learners: Vec<LearnerOutcome>,
}

fn score_path(
    truth: &EstimatedGraph,
    path: &[EstimatedGraph],
    config: &BenchmarkConfig,
    select: impl Fn(SelectionCriterion) -> Result<(f64, EstimatedGraph)>,
    p: usize,
) -> Result<(f64, Vec<CriterionOutcome>)> {
    let auc = roc_curve(truth, path, config.envelope)?.auc;
    let mut selections = Vec::with_capacity(config.criteria.len());
    for name in &config.criteria {
        let criterion = SelectionCriterion::from_name(name, p)?;
        let (lambda, graph) = select(criterion)?;
        selections.push(CriterionOutcome {
            criterion: name.clone(),
            lambda,
            edges: graph.edge_count(),
            metrics: confusion_metrics(truth, &graph)?,
        });
    }
    Ok((auc, selections))
}

/// One replication at `seed = base_seed + index`.
pub fn run_replication(config: &BenchmarkConfig, index: usize) -> Result<ReplicationOutcome> {
    let seed = config.base_seed.wrapping_add(index as u64);
    let (raw, truth) = config.source.generate(config.n, seed)?;
    let data = raw.validate_and_standardize()?;
    let p = data.p();
    let tol = config.nonzero_tolerance;

    let needs_midcdf = config.learners.iter().any(|l| matches!(l, Learner::Qmgm(_)));
    let clock = Instant::now();
    let models = if needs_midcdf { Some(estimate_all(&data, &LogitConfig::default())?) } else { None };
    let step_one = clock.elapsed().as_secs_f64();

    let mut learners = Vec::with_capacity(config.learners.len());
    for &learner in &config.learners {
        let clock = Instant::now();
        let (auc, selections, base) = match learner {
            Learner::Qmgm(l) => {
                let mut qc = QmgmConfig::new(QuantileGrid::standard(l)?, config.lambdas.clone());
                qc.nonzero_tolerance = tol;
                qc.estimator = config.estimator;
                qc.standardize = config.standardize;
                qc.path = config.path;
                let cube = fit_qmgm_with_midcdf(&data, models.as_ref().expect("mid-CDF models"), &qc)?;
                let path = path_graphs(&cube, tol);
                let (auc, sel) = score_path(&truth, &path, config, |c| {
                    let s = select_graph(&cube, &data, c, config.residual_scale, tol)?;
                    Ok((s.lambda, s.graph))
                }, p)?;
                (auc, sel, step_one)
            }
            Learner::Mgm => {
                let mc = MgmConfig { nonzero_tolerance: tol, ..MgmConfig::default() };
                let cube = fit_mgm(&data, &config.lambdas, &mc)?;
                let path = path_graphs(&cube, tol);
                let (auc, sel) = score_path(&truth, &path, config, |c| {
                    let s = select_mgm_graph(&cube, &data, c, tol)?;
                    Ok((s.lambda, s.graph))
                }, p)?;
                (auc, sel, 0.0)
            }
        };
        learners.push(LearnerOutcome { learner, auc, selections, seconds: base + clock.elapsed().as_secs_f64() });
    }
    Ok(ReplicationOutcome { index, seed, learners })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub learner: String,
    /// `path` for AUC, the criterion name for selected-graph metrics.
    pub criterion: String,
    pub metric: String,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
    pub replications: usize,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    /// Successful replications sorted by index.
    pub outcomes: Vec<ReplicationOutcome>,
    pub failures: Vec<(usize, String)>,
}

/// Median with 10th and 90th percentiles (linear interpolation).
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (
        empirical_quantile_sorted(&v, 0.5),
        empirical_quantile_sorted(&v, 0.1),
        empirical_quantile_sorted(&v, 0.9),
    )
}

pub fn run_replications(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let results: Vec<(usize, Result<ReplicationOutcome>)> =
        (0..config.replications).into_par_iter().map(|r| (r, run_replication(config, r))).collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    outcomes.sort_by_key(|o| o.index);
    Ok(BenchmarkReport { config: config.clone(), outcomes, failures })
}

impl BenchmarkReport {
    fn learner_values(&self, learner: Learner, f: impl Fn(&LearnerOutcome) -> Option<f64>) -> Vec<f64> {
        self.outcomes
            .iter()
            .filter_map(|o| o.learners.iter().find(|l| l.learner == learner).and_then(&f))
            .collect()
    }

    fn row(learner: Learner, criterion: &str, metric: &str, values: &[f64]) -> SummaryRow {
        let (median, p10, p90) = summarize(values);
        SummaryRow {
            learner: learner.label(),
            criterion: criterion.into(),
            metric: metric.into(),
            median,
            p10,
            p90,
            replications: values.len(),
        }
    }

    /// AUC, selected-graph metrics and edge counts. Timing is kept out of
    /// this table so that it is reproducible byte for byte.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for &learner in &self.config.learners {
            rows.push(Self::row(learner, "path", "auc", &self.learner_values(learner, |l| Some(l.auc))));
            for crit in &self.config.criteria {
                let pick = |l: &LearnerOutcome| l.selections.iter().find(|s| &s.criterion == crit).cloned();
                for (m, name) in RecoveryMetrics::NAMES.iter().enumerate() {
                    let vals = self.learner_values(learner, |l| pick(l).map(|s| s.metrics.values()[m]));
                    rows.push(Self::row(learner, crit, name, &vals));
                }
                let edges = self.learner_values(learner, |l| pick(l).map(|s| s.edges as f64));
                rows.push(Self::row(learner, crit, "edges", &edges));
            }
        }
        rows
    }

    pub fn timing(&self) -> Vec<SummaryRow> {
        self.config
            .learners
            .iter()
            .map(|&l| Self::row(l, "path", "seconds", &self.learner_values(l, |o| Some(o.seconds))))
            .collect()
    }

    pub fn median(&self, learner: Learner, criterion: &str, metric: &str) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|r| r.learner == learner.label() && r.criterion == criterion && r.metric == metric)
            .map(|r| r.median)
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        write_rows(&self.summary(), path)
    }

    pub fn write_timing_csv(&self, path: &Path) -> Result<()> {
        write_rows(&self.timing(), path)
    }

    pub fn manifest(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "source = {}", c.source.label());
        let _ = writeln!(s, "n = {}", c.n);
        let _ = writeln!(s, "replications = {}", c.replications);
        let _ = writeln!(s, "base_seed = {}", c.base_seed);
        let _ = writeln!(s, "learners = {}", c.learners.iter().map(|l| l.label()).collect::<Vec<_>>().join(","));
        let _ = writeln!(s, "criteria = {}", c.criteria.join(","));
        let _ = writeln!(s, "lambda_count = {}", c.lambdas.len());
        let _ = writeln!(s, "config_digest = {}", c.digest());
        let _ = writeln!(s, "failures = {}", self.failures.len());
        for (r, msg) in &self.failures {
            let _ = writeln!(s, "failure.{r} = {msg}");
        }
        for o in &self.outcomes {
            let _ = writeln!(s, "seed.{} = {}", o.index, o.seed);
        }
        s
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.manifest())?;
        Ok(())
    }
}

fn write_rows(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(replications: usize) -> BenchmarkConfig {
        let mut c = BenchmarkConfig::standard(DataSource::Dgp(DgpKind::Main), 120, replications, 11).unwrap();
        c.learners = vec![Learner::Qmgm(1), Learner::Mgm];
        c.lambdas = crate::model::log_spaced_lambdas(0.01, 5.0, 8).unwrap();
        c.criteria = vec!["bicp".into(), "aic".into()];
        c
    }

    #[test]
    fn parses_learners() {
        assert_eq!(Learner::parse("QMGM7").unwrap(), Learner::Qmgm(7));
        assert_eq!(Learner::parse("mgm").unwrap(), Learner::Mgm);
        assert_eq!(Learner::parse("qmgm5").unwrap(), Learner::Qmgm(5));
        assert!(Learner::parse("qmgm0").is_err());
        assert!(Learner::parse("lasso").is_err());
    }

    #[test]
    fn percentiles_of_one_value() {
        assert_eq!(summarize(&[0.7]), (0.7, 0.7, 0.7));
        let (m, lo, hi) = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
        assert_eq!((m, lo, hi), (6.0, 2.0, 10.0));
    }

    #[test]
    fn single_replication_summary_is_the_replication() {
        let report = run_replications(&small(1)).unwrap();
        assert!(report.failures.is_empty());
        let o = &report.outcomes[0];
        let q = &o.learners[0];
        assert_eq!(report.median(Learner::Qmgm(1), "path", "auc").unwrap(), q.auc);
        assert_eq!(report.median(Learner::Qmgm(1), "bicp", "tpr").unwrap(), q.selections[0].metrics.tpr);
        assert!((0.0..=1.0).contains(&q.auc));
    }

    #[test]
    fn seeds_are_offsets_of_base() {
        let report = run_replications(&small(2)).unwrap();
        let seeds: Vec<u64> = report.outcomes.iter().map(|o| o.seed).collect();
        assert_eq!(seeds, vec![11, 12]);
        assert!(report.manifest().contains("config_digest = "));
    }

    #[test]
    fn rejects_empty_runs() {
        assert!(run_replications(&small(0)).is_err());
        let mut c = small(1);
        c.criteria = vec!["hqc".into()];
        assert!(run_replications(&c).is_err());
    }
}
