//! Shared domain types: variable metadata, datasets, quantile grids,
//! coefficient cubes and estimated graphs.

use serde::{Deserialize, Serialize};

use crate::error::{QmgmError, Result};

/// Maximum number of thresholds kept for a node's conditional CDF grid.
pub const MAX_THRESHOLDS: usize = 1000;

/// Coefficients with magnitude at or below this value are treated as zero.
pub const DEFAULT_NONZERO_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Continuous,
    Count,
    Binary,
}

impl VariableKind {
    pub fn default_link(self) -> Link {
        match self {
            VariableKind::Continuous => Link::Identity,
            VariableKind::Count => Link::Log,
            VariableKind::Binary => Link::Logit,
        }
    }

    pub fn is_discrete(self) -> bool {
        !matches!(self, VariableKind::Continuous)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VariableKind::Continuous => "continuous",
            VariableKind::Count => "count",
            VariableKind::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" => Some(VariableKind::Continuous),
            "count" => Some(VariableKind::Count),
            "binary" => Some(VariableKind::Binary),
            _ => None,
        }
    }
}

/// Monotone link `g` relating the mid-quantile of a node to its linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Log,
    Logit,
}

/// Linear predictors are clamped to this range before applying `exp`.
const MAX_LINEAR_PREDICTOR: f64 = 700.0;

impl Link {
    /// `g(t)`.
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Link::Identity => t,
            Link::Log => t.ln(),
            Link::Logit => (t / (1.0 - t)).ln(),
        }
    }

    /// `g^{-1}(x)`.
    pub fn inverse(self, x: f64) -> f64 {
        match self {
            Link::Identity => x,
            Link::Log => x.clamp(-MAX_LINEAR_PREDICTOR, MAX_LINEAR_PREDICTOR).exp(),
            Link::Logit => sigmoid(x),
        }
    }

    /// Derivative of `g^{-1}` at `x`.
    pub fn inverse_derivative(self, x: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Log => {
                if x.abs() > MAX_LINEAR_PREDICTOR {
                    0.0
                } else {
                    x.exp()
                }
            }
            Link::Logit => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    /// Pulls `t` into the open domain of `g` so that `apply` stays finite.
    pub fn clamp_to_domain(self, t: f64, floor: f64) -> f64 {
        match self {
            Link::Identity => t,
            Link::Log => t.max(floor),
            Link::Logit => t.clamp(floor, 1.0 - floor),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Log => "log",
            Link::Logit => "logit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" => Some(Link::Identity),
            "log" => Some(Link::Log),
            "logit" => Some(Link::Logit),
            _ => None,
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    pub link: Link,
    /// Strictly increasing thresholds at which the conditional CDF is estimated.
    pub threshold_grid: Vec<f64>,
    pub support_hint: Option<Vec<f64>>,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, kind: VariableKind) -> Self {
        Self {
            name: name.into(),
            kind,
            link: kind.default_link(),
            threshold_grid: Vec::new(),
            support_hint: None,
        }
    }

    pub fn with_link(mut self, link: Link) -> Result<Self> {
        if self.kind == VariableKind::Binary && link != Link::Logit {
            return Err(QmgmError::Config(format!(
                "binary variable `{}` must use the logit link",
                self.name
            )));
        }
        self.link = link;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QmgmError::Config(format!(
                "threshold grid of `{}` is not strictly increasing",
                self.name
            )));
        }
        match self.kind {
            VariableKind::Binary => {
                if self.link != Link::Logit {
                    return Err(QmgmError::Config(format!(
                        "binary variable `{}` must use the logit link",
                        self.name
                    )));
                }
                if self.threshold_grid.iter().any(|&z| z != 0.0 && z != 1.0) {
                    return Err(QmgmError::Config(format!(
                        "binary variable `{}` has thresholds outside {{0,1}}",
                        self.name
                    )));
                }
            }
            VariableKind::Count => {
                if self.threshold_grid.iter().any(|&z| z < 0.0) {
                    return Err(QmgmError::Config(format!(
                        "count variable `{}` has negative thresholds",
                        self.name
                    )));
                }
            }
            VariableKind::Continuous => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: f64,
    pub scale: f64,
}

/// Column-major numeric table with its schema and missing-value mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    schema: Vec<VariableSpec>,
    missing: Vec<Vec<bool>>,
    standardization: Vec<Option<Standardization>>,
}

impl Dataset {
    /// Builds a dataset without missing values.
    pub fn new(schema: Vec<VariableSpec>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let missing = columns.iter().map(|c| vec![false; c.len()]).collect();
        Self::with_missing(schema, columns, missing)
    }

    pub fn with_missing(
        schema: Vec<VariableSpec>,
        columns: Vec<Vec<f64>>,
        missing: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let p = columns.len();
        if p < 2 {
            return Err(QmgmError::Dimension(format!("need p >= 2 columns, got {p}")));
        }
        if schema.len() != p {
            return Err(QmgmError::Dimension(format!(
                "schema has {} entries for {p} columns",
                schema.len()
            )));
        }
        let n = columns[0].len();
        if n < 2 {
            return Err(QmgmError::Dimension(format!("need n >= 2 rows, got {n}")));
        }
        if columns.iter().any(|c| c.len() != n) || missing.len() != p {
            return Err(QmgmError::Dimension("ragged columns".into()));
        }
        if missing.iter().any(|m| m.len() != n) {
            return Err(QmgmError::Dimension("missing mask shape mismatch".into()));
        }
        Ok(Self {
            columns,
            schema,
            missing,
            standardization: vec![None; p],
        })
    }

    pub fn n(&self) -> usize {
        self.columns[0].len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    pub fn schema(&self) -> &[VariableSpec] {
        &self.schema
    }

    pub fn spec(&self, j: usize) -> &VariableSpec {
        &self.schema[j]
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.missing[j][i]
    }

    pub fn missing_mask(&self) -> &[Vec<bool>] {
        &self.missing
    }

    pub fn missing_count(&self) -> usize {
        self.missing
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count())
            .sum()
    }

    pub fn standardization(&self) -> &[Option<Standardization>] {
        &self.standardization
    }

    pub fn is_complete_row(&self, i: usize) -> bool {
        self.missing.iter().all(|m| !m[i])
    }

    /// Fitting operations call this; masked data must be imputed first.
    pub fn require_complete(&self) -> Result<()> {
        match self.missing_count() {
            0 => Ok(()),
            k => Err(QmgmError::MissingValues(k)),
        }
    }

    /// Row `i` without column `j`, in column order.
    pub fn row_without(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.p())
            .filter(|&k| k != j)
            .map(|k| self.columns[k][i])
            .collect()
    }

    pub(crate) fn replace_values(&mut self, columns: Vec<Vec<f64>>, missing: Vec<Vec<bool>>) {
        self.columns = columns;
        self.missing = missing;
    }

    /// Validates values against the schema, standardizes continuous columns
    /// and derives each node's threshold grid from its observed values.
    pub fn validate_and_standardize(mut self) -> Result<Self> {
        let n = self.n();
        for j in 0..self.p() {
            let spec = &self.schema[j];
            let mut observed = Vec::with_capacity(n);
            for i in 0..n {
                if self.missing[j][i] {
                    continue;
                }
                let v = self.columns[j][i];
                if !v.is_finite() {
                    return Err(QmgmError::NonFinite {
                        column: spec.name.clone(),
                        row: i,
                    });
                }
                match spec.kind {
                    VariableKind::Binary if v != 0.0 && v != 1.0 => {
                        return Err(QmgmError::InvalidBinary {
                            column: spec.name.clone(),
                            row: i,
                            value: v,
                        })
                    }
                    VariableKind::Count if v < 0.0 => {
                        return Err(QmgmError::NegativeCount {
                            column: spec.name.clone(),
                            row: i,
                            value: v,
                        })
                    }
                    _ => {}
                }
                observed.push(v);
            }
            let first = observed.first().copied();
            if first.map_or(true, |f| observed.iter().all(|&v| v == f)) {
                return Err(QmgmError::ConstantColumn(spec.name.clone()));
            }

            if spec.kind == VariableKind::Continuous {
                let m = observed.len() as f64;
                let mean = observed.iter().sum::<f64>() / m;
                let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
                let scale = var.sqrt();
                for (i, v) in self.columns[j].iter_mut().enumerate() {
                    if !self.missing[j][i] {
                        *v = (*v - mean) / scale;
                    }
                }
                for v in observed.iter_mut() {
                    *v = (*v - mean) / scale;
                }
                // Compose with any earlier record so the stored transform
                // always maps raw values to the current scale.
                let record = match self.standardization[j] {
                    Some(prev) => Standardization {
                        center: prev.center + mean * prev.scale,
                        scale: prev.scale * scale,
                    },
                    None => Standardization {
                        center: mean,
                        scale,
                    },
                };
                self.standardization[j] = Some(record);
            }

            let grid = threshold_grid(&mut observed, MAX_THRESHOLDS);
            let spec = &mut self.schema[j];
            spec.threshold_grid = grid;
            spec.validate()?;
        }
        Ok(self)
    }

    /// Copy restricted to the given columns, preserving schema and records.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let mut out = Self::with_missing(
            cols.iter().map(|&j| self.schema[j].clone()).collect(),
            cols.iter().map(|&j| self.columns[j].clone()).collect(),
            cols.iter().map(|&j| self.missing[j].clone()).collect(),
        )?;
        out.standardization = cols.iter().map(|&j| self.standardization[j]).collect();
        Ok(out)
    }
}

/// Distinct sorted values, or `cap` equally spaced empirical percentiles
/// when there are more than `cap` distinct values. Sorts `values` in place.
pub fn threshold_grid(values: &mut [f64], cap: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.dedup();
    if distinct.len() <= cap {
        return distinct;
    }
    let mut grid: Vec<f64> = (1..=cap)
        .map(|h| empirical_quantile_sorted(values, h as f64 / cap as f64))
        .collect();
    grid.dedup();
    grid
}

/// Linear-interpolation empirical quantile of a sorted sample.
pub fn empirical_quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Ordered quantile levels strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(QmgmError::QuantileGrid("at least one level required".into()));
        }
        if levels.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(QmgmError::QuantileGrid("levels must lie in (0,1)".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QmgmError::QuantileGrid("levels must be strictly increasing".into()));
        }
        Ok(Self { levels })
    }

    /// The grids used for QMGM-L with L in {1, 3, 7, 17}; other L give
    /// equally spaced levels `l / (L + 1)`.
    pub fn standard(l: usize) -> Result<Self> {
        let levels = match l {
            0 => return Err(QmgmError::QuantileGrid("L must be positive".into())),
            1 => vec![0.5],
            3 => vec![0.25, 0.5, 0.75],
            7 => (1..=7).map(|k| k as f64 / 8.0).collect(),
            17 => (0..17).map(|k| 0.1 + 0.05 * k as f64).collect(),
            _ => (1..=l).map(|k| k as f64 / (l + 1) as f64).collect(),
        };
        Self::new(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// `count` values equally spaced on the log scale between `min` and `max`,
/// returned in decreasing order.
pub fn log_spaced_lambdas(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min) || count == 0 {
        return Err(QmgmError::LambdaGrid(format!(
            "need 0 < min < max and count >= 1 (min={min}, max={max}, count={count})"
        )));
    }
    if count == 1 {
        return Ok(vec![max]);
    }
    let (a, b) = (max.ln(), min.ln());
    Ok((0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect())
}

pub fn validate_lambda_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(QmgmError::LambdaGrid("empty grid".into()));
    }
    if grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(QmgmError::LambdaGrid("values must be finite and nonnegative".into()));
    }
    if grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(QmgmError::LambdaGrid("grid must be strictly decreasing".into()));
    }
    Ok(())
}

/// Position of node `other` within the coefficient vector of node `node`.
pub fn predictor_position(node: usize, other: usize) -> usize {
    debug_assert_ne!(node, other);
    if other < node {
        other
    } else {
        other - 1
    }
}

/// Node index of coefficient `k` in the regression of node `node`.
pub fn predictor_node(node: usize, k: usize) -> usize {
    if k < node {
        k
    } else {
        k + 1
    }
}

/// Stored solution for one (node, level, lambda) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeEntry {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Coefficients indexed by node, quantile level and lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCube {
    p: usize,
    levels: Vec<f64>,
    lambdas: Vec<f64>,
    entries: Vec<CubeEntry>,
}

impl CoefficientCube {
    /// `entries` ordered by node, then level, then lambda.
    pub fn new(p: usize, levels: Vec<f64>, lambdas: Vec<f64>, entries: Vec<CubeEntry>) -> Result<Self> {
        if entries.len() != p * levels.len() * lambdas.len() {
            return Err(QmgmError::Dimension(format!(
                "cube expects {} entries, got {}",
                p * levels.len() * lambdas.len(),
                entries.len()
            )));
        }
        if entries.iter().any(|e| e.beta.len() != p - 1) {
            return Err(QmgmError::Dimension("coefficient vectors must have p-1 entries".into()));
        }
        if let Some(e) = entries.iter().find(|e| !e.objective.is_finite()) {
            return Err(QmgmError::Numerical(format!(
                "non-finite objective {} in coefficient cube",
                e.objective
            )));
        }
        Ok(Self {
            p,
            levels,
            lambdas,
            entries,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn entry(&self, node: usize, level: usize, lambda: usize) -> &CubeEntry {
        let (nl, nk) = (self.levels.len(), self.lambdas.len());
        &self.entries[(node * nl + level) * nk + lambda]
    }

    pub fn slice(&self, lambda: usize) -> CubeSlice<'_> {
        CubeSlice { cube: self, lambda }
    }

    pub fn unconverged(&self) -> usize {
        self.entries.iter().filter(|e| !e.converged).count()
    }
}

/// All (node, level) solutions at one lambda.
#[derive(Debug, Clone, Copy)]
pub struct CubeSlice<'a> {
    cube: &'a CoefficientCube,
    lambda: usize,
}

impl<'a> CubeSlice<'a> {
    pub fn p(&self) -> usize {
        self.cube.p
    }

    pub fn levels(&self) -> &'a [f64] {
        &self.cube.levels
    }

    pub fn lambda(&self) -> f64 {
        self.cube.lambdas[self.lambda]
    }

    pub fn entry(&self, node: usize, level: usize) -> &'a CubeEntry {
        self.cube.entry(node, level, self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSign {
    Positive,
    Negative,
    Undefined,
    Absent,
}

/// Which regression produced an edge's strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeProvenance {
    pub tau: f64,
    /// Node whose regression carried the maximal coefficient.
    pub response: usize,
    pub predictor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedGraph {
    p: usize,
    adjacency: Vec<bool>,
    strength: Vec<f64>,
    sign: Vec<EdgeSign>,
    provenance: Vec<Option<EdgeProvenance>>,
}

impl EstimatedGraph {
    pub fn empty(p: usize) -> Self {
        Self {
            p,
            adjacency: vec![false; p * p],
            strength: vec![0.0; p * p],
            sign: vec![EdgeSign::Absent; p * p],
            provenance: vec![None; p * p],
        }
    }

    /// Graph with unit-strength edges and undefined sign, e.g. a known truth.
    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::empty(p);
        for &(a, b) in edges {
            g.set_edge(a, b, 1.0, EdgeSign::Undefined, None);
        }
        g
    }

    pub fn from_adjacency(p: usize, adjacency: &[bool]) -> Result<Self> {
        if adjacency.len() != p * p {
            return Err(QmgmError::Dimension("adjacency must be p x p".into()));
        }
        let mut g = Self::empty(p);
        for a in 0..p {
            for b in (a + 1)..p {
                if adjacency[a * p + b] != adjacency[b * p + a] {
                    return Err(QmgmError::Dimension("adjacency must be symmetric".into()));
                }
                if adjacency[a * p + b] {
                    g.set_edge(a, b, 1.0, EdgeSign::Undefined, None);
                }
            }
        }
        Ok(g)
    }

    /// Sets a symmetric edge. A non-positive strength removes it.
    pub fn set_edge(
        &mut self,
        a: usize,
        b: usize,
        strength: f64,
        sign: EdgeSign,
        provenance: Option<EdgeProvenance>,
    ) {
        assert!(a != b, "self-loops are not allowed");
        let present = strength > 0.0;
        for (x, y) in [(a, b), (b, a)] {
            let idx = x * self.p + y;
            self.adjacency[idx] = present;
            self.strength[idx] = if present { strength } else { 0.0 };
            self.sign[idx] = if present { sign } else { EdgeSign::Absent };
            self.provenance[idx] = if present { provenance } else { None };
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.p + b]
    }

    pub fn strength(&self, a: usize, b: usize) -> f64 {
        self.strength[a * self.p + b]
    }

    pub fn sign(&self, a: usize, b: usize) -> EdgeSign {
        self.sign[a * self.p + b]
    }

    pub fn provenance(&self, a: usize, b: usize) -> Option<EdgeProvenance> {
        self.provenance[a * self.p + b]
    }

    pub fn adjacency(&self) -> &[bool] {
        &self.adjacency
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Unordered edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let p = self.p;
        (0..p).flat_map(move |a| ((a + 1)..p).filter(move |&b| self.has_edge(a, b)).map(move |b| (a, b)))
    }

    pub fn degree(&self, a: usize) -> usize {
        (0..self.p).filter(|&b| self.has_edge(a, b)).count()
    }

    pub fn complement(&self) -> Self {
        let mut g = Self::empty(self.p);
        for a in 0..self.p {
            for b in (a + 1)..self.p {
                if !self.has_edge(a, b) {
                    g.set_edge(a, b, 1.0, EdgeSign::Undefined, None);
                }
            }
        }
        g
    }

    /// Checks the structural invariants; used by tests and document import.
    pub fn check_invariants(&self) -> Result<()> {
        let p = self.p;
        for a in 0..p {
            if self.adjacency[a * p + a] {
                return Err(QmgmError::Dimension(format!("self-loop at node {a}")));
            }
            for b in 0..p {
                let i = a * p + b;
                if self.adjacency[i] != self.adjacency[b * p + a] {
                    return Err(QmgmError::Dimension("asymmetric adjacency".into()));
                }
                if (self.strength[i] > 0.0) != self.adjacency[i] {
                    return Err(QmgmError::Dimension("strength/adjacency mismatch".into()));
                }
                if (self.sign[i] == EdgeSign::Absent) == self.adjacency[i] {
                    return Err(QmgmError::Dimension("sign/adjacency mismatch".into()));
                }
            }
        }
        Ok(())
    }
}

/// Check loss `u (tau - 1{u < 0})`.
pub fn quantile_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}
