//! Neighborhood selection over all nodes, quantile levels and penalties,
//! edge extraction with the OR/max rule, and information criteria.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QmgmError, Result};
use crate::midcdf::{estimate_all, LogitConfig, NodeDesign, NodeMidCdf};
use crate::model::{
    predictor_node, predictor_position, quantile_loss, validate_lambda_grid, CoefficientCube, CubeEntry, CubeSlice,
    Dataset, EdgeProvenance, EdgeSign, EstimatedGraph, QuantileGrid, DEFAULT_NONZERO_TOLERANCE,
};
use crate::penalized::{fit_lambda_path, fit_pseudo_response_path, Estimator, NodeFitConfig, NodeProblem, PathStrategy};

/// Guard inside the logarithm of the information criteria.
pub const LOG_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SelectionCriterion {
    Aic,
    Bic { cn: f64 },
}

impl SelectionCriterion {
    /// Parses `aic`, `bic`, `bicp`, `bic2p` or `bic3p` for a graph with `p` nodes.
    pub fn from_name(name: &str, p: usize) -> Result<Self> {
        let lp = ((p as f64) - 1.0).ln();
        let c = match name.to_ascii_lowercase().as_str() {
            "aic" => return Ok(SelectionCriterion::Aic),
            "bic" => 1.0,
            "bicp" => lp,
            "bic2p" => lp / 2.0,
            "bic3p" => lp / 3.0,
            other => return Err(QmgmError::Config(format!("unknown criterion `{other}`"))),
        };
        Self::bic(c)
    }

    pub fn bic(cn: f64) -> Result<Self> {
        if !(cn > 0.0) || !cn.is_finite() {
            return Err(QmgmError::Config(format!("BIC constant must be positive, got {cn}")));
        }
        Ok(SelectionCriterion::Bic { cn })
    }

    /// Complexity charge per active coefficient in one (node, level) block.
    pub fn per_coefficient(&self, n: usize, p: usize) -> f64 {
        let n = n as f64;
        match *self {
            SelectionCriterion::Aic => 2.0 / (2.0 * n),
            SelectionCriterion::Bic { cn } => n.ln() * ((p as f64) - 1.0).ln() / (2.0 * n) * cn,
        }
    }

    pub fn label(&self) -> String {
        match self {
            SelectionCriterion::Aic => "aic".into(),
            SelectionCriterion::Bic { cn } => format!("bic(cn={cn:.4})"),
        }
    }
}

/// Whether criterion residuals use the raw linear predictor or its link inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualScale {
    #[default]
    Linear,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmgmConfig {
    pub levels: QuantileGrid,
    /// Strictly decreasing penalty grid.
    pub lambdas: Vec<f64>,
    /// Per-node penalty weights over the other `p - 1` nodes; `None` means ones.
    pub weights: Option<Vec<Vec<f64>>>,
    pub logit: LogitConfig,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub nonzero_tolerance: f64,
    #[serde(default)]
    pub estimator: Estimator,
    /// Pseudo-response estimator only: penalize on the standardized scale.
    #[serde(default = "default_true")]
    pub standardize: bool,
    /// Implicit-equation estimator only.
    #[serde(default)]
    pub path: PathStrategy,
}

fn default_true() -> bool {
    true
}

impl QmgmConfig {
    pub fn new(levels: QuantileGrid, lambdas: Vec<f64>) -> Self {
        Self {
            levels,
            lambdas,
            weights: None,
            logit: LogitConfig::default(),
            max_iterations: 500,
            tolerance: 1e-7,
            nonzero_tolerance: DEFAULT_NONZERO_TOLERANCE,
            estimator: Estimator::PseudoResponse,
            standardize: true,
            path: PathStrategy::WarmStart,
        }
    }

    fn node_config(&self, node: usize, tau: f64) -> NodeFitConfig {
        let mut cfg = NodeFitConfig::new(tau, self.lambdas[0]);
        cfg.weights = self.weights.as_ref().map(|w| w[node].clone());
        cfg.max_iterations = self.max_iterations;
        cfg.tolerance = self.tolerance;
        cfg.nonzero_tolerance = self.nonzero_tolerance;
        cfg.path = self.path;
        cfg
    }
}

/// Runs both estimation steps for every node, level and penalty.
pub fn fit_qmgm(dataset: &Dataset, config: &QmgmConfig) -> Result<CoefficientCube> {
    let models = estimate_all(dataset, &config.logit)?;
    fit_qmgm_with_midcdf(dataset, &models, config)
}

/// Step two only, reusing previously estimated mid-CDF models (they do not
/// depend on the quantile grid).
pub fn fit_qmgm_with_midcdf(dataset: &Dataset, models: &[NodeMidCdf], config: &QmgmConfig) -> Result<CoefficientCube> {
    dataset.require_complete()?;
    validate_lambda_grid(&config.lambdas)?;
    let p = dataset.p();
    if models.len() != p {
        return Err(QmgmError::Dimension(format!("expected {p} mid-CDF models, got {}", models.len())));
    }
    if let Some(w) = &config.weights {
        if w.len() != p {
            return Err(QmgmError::Config(format!("expected {p} weight vectors, got {}", w.len())));
        }
    }
    let designs: Vec<NodeDesign> = (0..p).map(|j| NodeDesign::for_node(dataset, j)).collect();
    let levels = config.levels.levels();
    let tasks: Vec<(usize, usize)> = (0..p).flat_map(|j| (0..levels.len()).map(move |l| (j, l))).collect();
    let paths = tasks
        .par_iter()
        .map(|&(j, l)| {
            let problem = NodeProblem::new(dataset.column(j), &designs[j], &models[j], dataset.spec(j).link)?;
            let node = config.node_config(j, levels[l]);
            match config.estimator {
                Estimator::PseudoResponse => fit_pseudo_response_path(&problem, &config.lambdas, &node, config.standardize),
                Estimator::ImplicitEquation => fit_lambda_path(&problem, &config.lambdas, &node),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = paths
        .into_iter()
        .flatten()
        .map(|r| CubeEntry {
            intercept: r.intercept,
            beta: r.beta,
            objective: r.objective,
            iterations: r.iterations,
            converged: r.converged,
        })
        .collect();
    CoefficientCube::new(p, levels.to_vec(), config.lambdas.clone(), entries)
}

/// Edge set of one cube slice: `(j, k)` is an edge when the largest
/// coefficient magnitude over levels and both regression directions
/// exceeds `tolerance`.
pub fn estimate_edge_set(slice: CubeSlice<'_>, tolerance: f64) -> EstimatedGraph {
    let p = slice.p();
    let levels = slice.levels();
    let mut graph = EstimatedGraph::empty(p);
    for a in 0..p {
        for b in (a + 1)..p {
            // per direction: (|coef|, coef, level) of the largest coefficient
            let direction_max = |resp: usize, pred: usize| {
                let pos = predictor_position(resp, pred);
                let mut best = (0.0f64, 0.0f64, 0usize);
                for l in 0..levels.len() {
                    let c = slice.entry(resp, l).beta[pos];
                    if c.abs() > best.0 {
                        best = (c.abs(), c, l);
                    }
                }
                best
            };
            let ab = direction_max(a, b);
            let ba = direction_max(b, a);
            let strength = ab.0.max(ba.0);
            if strength <= tolerance {
                continue;
            }
            let sign_of = |c: f64| if c > 0.0 { EdgeSign::Positive } else { EdgeSign::Negative };
            let sign = match (ab.0 > tolerance, ba.0 > tolerance) {
                (true, true) if sign_of(ab.1) != sign_of(ba.1) => EdgeSign::Undefined,
                (true, _) => sign_of(ab.1),
                _ => sign_of(ba.1),
            };
            let (resp, pred, level) = if ab.0 >= ba.0 { (a, b, ab.2) } else { (b, a, ba.2) };
            graph.set_edge(
                a,
                b,
                strength,
                sign,
                Some(EdgeProvenance {
                    tau: levels[level],
                    response: resp,
                    predictor: pred,
                }),
            );
        }
    }
    graph
}

/// Graphs along the whole penalty path, in grid order.
pub fn path_graphs(cube: &CoefficientCube, tolerance: f64) -> Vec<EstimatedGraph> {
    (0..cube.lambdas().len()).map(|k| estimate_edge_set(cube.slice(k), tolerance)).collect()
}

/// `sum_blocks [ ln(loss + guard) + nu * charge ]` over (node, level) blocks.
pub fn criterion_from_blocks(blocks: &[(f64, usize)], criterion: SelectionCriterion, n: usize, p: usize) -> f64 {
    let charge = criterion.per_coefficient(n, p);
    blocks.iter().map(|&(loss, nu)| (loss + LOG_GUARD).ln() + nu as f64 * charge).sum()
}

/// Quantile-loss sum and active-set size of every (node, level) block.
pub fn quantile_loss_blocks(
    slice: CubeSlice<'_>,
    dataset: &Dataset,
    scale: ResidualScale,
    tolerance: f64,
) -> Vec<(f64, usize)> {
    let p = dataset.p();
    let levels = slice.levels();
    let mut blocks = Vec::with_capacity(p * levels.len());
    for (l, &tau) in levels.iter().enumerate() {
        for j in 0..p {
            let e = slice.entry(j, l);
            let link = dataset.spec(j).link;
            let y = dataset.column(j);
            let loss: f64 = (0..dataset.n())
                .map(|i| {
                    let lp = e.intercept
                        + e.beta
                            .iter()
                            .enumerate()
                            .map(|(k, b)| b * dataset.value(i, predictor_node(j, k)))
                            .sum::<f64>();
                    let fitted = match scale {
                        ResidualScale::Linear => lp,
                        ResidualScale::Inverse => link.inverse(lp),
                    };
                    quantile_loss(y[i] - fitted, tau)
                })
                .sum();
            let nu = e.beta.iter().filter(|b| b.abs() > tolerance).count();
            blocks.push((loss, nu));
        }
    }
    blocks
}

pub fn bic_score(
    slice: CubeSlice<'_>,
    dataset: &Dataset,
    cn: f64,
    scale: ResidualScale,
    tolerance: f64,
) -> Result<f64> {
    let criterion = SelectionCriterion::bic(cn)?;
    let blocks = quantile_loss_blocks(slice, dataset, scale, tolerance);
    Ok(criterion_from_blocks(&blocks, criterion, dataset.n(), dataset.p()))
}

pub fn aic_score(slice: CubeSlice<'_>, dataset: &Dataset, scale: ResidualScale, tolerance: f64) -> f64 {
    let blocks = quantile_loss_blocks(slice, dataset, scale, tolerance);
    criterion_from_blocks(&blocks, SelectionCriterion::Aic, dataset.n(), dataset.p())
}

pub fn criterion_score(
    slice: CubeSlice<'_>,
    dataset: &Dataset,
    criterion: SelectionCriterion,
    scale: ResidualScale,
    tolerance: f64,
) -> f64 {
    let blocks = quantile_loss_blocks(slice, dataset, scale, tolerance);
    criterion_from_blocks(&blocks, criterion, dataset.n(), dataset.p())
}

/// Index of the minimal score; ties go to the earlier entry, which on a
/// decreasing grid is the larger penalty.
pub fn select_lambda(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(QmgmError::LambdaGrid("no scores to select from".into()));
    }
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = k;
        }
    }
    Ok(best)
}

/// A criterion-selected graph with the scores it was chosen from.
#[derive(Debug, Clone)]
pub struct Selection {
    pub criterion: SelectionCriterion,
    pub scores: Vec<f64>,
    pub index: usize,
    pub lambda: f64,
    pub graph: EstimatedGraph,
}

pub fn select_graph(
    cube: &CoefficientCube,
    dataset: &Dataset,
    criterion: SelectionCriterion,
    scale: ResidualScale,
    tolerance: f64,
) -> Result<Selection> {
    let scores: Vec<f64> = (0..cube.lambdas().len())
        .map(|k| criterion_score(cube.slice(k), dataset, criterion, scale, tolerance))
        .collect();
    let index = select_lambda(&scores)?;
    Ok(Selection {
        criterion,
        lambda: cube.lambdas()[index],
        graph: estimate_edge_set(cube.slice(index), tolerance),
        scores,
        index,
    })
}
