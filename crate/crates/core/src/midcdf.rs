//! Conditional mid-CDF estimation.
//!
//! For a node `j` with thresholds `z_1 < ... < z_k`, each conditional CDF
//! value `F(z_h | y_{-j})` is estimated by a logistic regression of the
//! indicator `1{y_j <= z_h}` on the remaining columns. Evaluated CDF
//! vectors are rearranged into nondecreasing order, differenced into point
//! masses, and shifted by half a mass to give mid-probabilities
//! `pi_h = F_h - m_h / 2`. `interpolate_midcdf` joins the knots
//! `(z_h, pi_h)` piecewise-linearly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QmgmError, Result};
use crate::model::{sigmoid, Dataset};

/// Output of the interpolator is kept inside `[EPS, 1 - EPS]`.
pub const MIDCDF_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub ridge: f64,
}

impl Default for LogitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
            ridge: 1e-6,
        }
    }
}

/// Row-major matrix of the predictors `y_{-j}` for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDesign {
    n: usize,
    cols: usize,
    data: Vec<f64>,
}

impl NodeDesign {
    pub fn for_node(dataset: &Dataset, node: usize) -> Self {
        let (n, p) = (dataset.n(), dataset.p());
        let mut data = Vec::with_capacity(n * (p - 1));
        for i in 0..n {
            for k in 0..p {
                if k != node {
                    data.push(dataset.value(i, k));
                }
            }
        }
        Self { n, cols: p - 1, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(QmgmError::Dimension("ragged design rows".into()));
        }
        Ok(Self {
            n: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Design with no predictors.
    pub fn intercept_only(n: usize) -> Self {
        Self { n, cols: 0, data: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copy with predictors reordered: new column `c` is old column `perm[c]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.n {
            let r = self.row(i);
            data.extend(perm.iter().map(|&c| r[c]));
        }
        Self { n: self.n, cols: self.cols, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdModelKind {
    /// IRLS fit of the threshold indicator.
    Logistic,
    /// The threshold is at or above every observation, so `F = 1`.
    ConstantOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub kind: ThresholdModelKind,
    /// Intercept followed by one slope per predictor.
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Every row was classified correctly with margin, i.e. the data are separable.
    pub separated: bool,
}

impl ThresholdFit {
    fn constant_one(cols: usize) -> Self {
        Self {
            kind: ThresholdModelKind::ConstantOne,
            coefficients: vec![0.0; cols + 1],
            iterations: 0,
            converged: true,
            separated: false,
        }
    }

    pub fn probability(&self, covariates: &[f64]) -> f64 {
        match self.kind {
            ThresholdModelKind::ConstantOne => 1.0,
            ThresholdModelKind::Logistic => sigmoid(linear_predictor(&self.coefficients, covariates)),
        }
    }
}

fn linear_predictor(coef: &[f64], x: &[f64]) -> f64 {
    coef[0] + coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// One logistic model per threshold for a single node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdLogitSet {
    pub node: usize,
    pub thresholds: Vec<f64>,
    pub fits: Vec<ThresholdFit>,
}

impl ThresholdLogitSet {
    pub fn unconverged(&self) -> usize {
        self.fits.iter().filter(|f| !f.converged).count()
    }
}

/// Fits the threshold logits of node `node` on all other columns.
pub fn fit_threshold_logits(dataset: &Dataset, node: usize, config: &LogitConfig) -> Result<ThresholdLogitSet> {
    dataset.require_complete()?;
    let thresholds = dataset.spec(node).threshold_grid.clone();
    let design = NodeDesign::for_node(dataset, node);
    let mut set = fit_threshold_logits_with_design(dataset.column(node), &design, &thresholds, config)?;
    set.node = node;
    Ok(set)
}

/// Fits threshold logits for response `y` against an explicit design.
pub fn fit_threshold_logits_with_design(
    y: &[f64],
    design: &NodeDesign,
    thresholds: &[f64],
    config: &LogitConfig,
) -> Result<ThresholdLogitSet> {
    if thresholds.len() < 2 {
        return Err(QmgmError::Config(format!(
            "need at least 2 thresholds, got {}",
            thresholds.len()
        )));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(QmgmError::Config("thresholds must be strictly increasing".into()));
    }
    if y.len() != design.n() {
        return Err(QmgmError::Dimension("response and design lengths differ".into()));
    }
    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fits = thresholds
        .par_iter()
        .map(|&z| {
            if z >= y_max {
                return ThresholdFit::constant_one(design.cols());
            }
            let labels: Vec<f64> = y.iter().map(|&v| if v <= z { 1.0 } else { 0.0 }).collect();
            fit_logistic(&labels, design, config)
        })
        .collect();
    Ok(ThresholdLogitSet {
        node: 0,
        thresholds: thresholds.to_vec(),
        fits,
    })
}

fn penalized_loglik(labels: &[f64], design: &NodeDesign, coef: &[f64], ridge: f64) -> f64 {
    let mut ll = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let eta = linear_predictor(coef, design.row(i));
        // log(1 + e^eta) computed stably
        let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
        ll += y * eta - softplus;
    }
    ll - 0.5 * ridge * coef[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Ridge-stabilized IRLS with step halving on the penalized log-likelihood.
/// Slopes carry the ridge penalty; the intercept only gets diagonal jitter
/// in the Newton system, so intercept-only fits are exact MLEs.
pub fn fit_logistic(labels: &[f64], design: &NodeDesign, config: &LogitConfig) -> ThresholdFit {
    let n = design.n();
    let d = design.cols() + 1;
    let mean = labels.iter().sum::<f64>() / n as f64;
    let mut coef = vec![0.0; d];
    coef[0] = (mean.clamp(1e-10, 1.0 - 1e-10) / (1.0 - mean.clamp(1e-10, 1.0 - 1e-10))).ln();
    let mut current = penalized_loglik(labels, design, &coef, config.ridge);
    let mut iterations = 0;
    let mut converged = false;

    let mut hess = vec![0.0; d * d];
    let mut grad = vec![0.0; d];
    let mut xi = vec![0.0; d];
    while iterations < config.max_iterations {
        iterations += 1;
        hess.iter_mut().for_each(|v| *v = 0.0);
        grad.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            xi[0] = 1.0;
            xi[1..].copy_from_slice(design.row(i));
            let mu = sigmoid(linear_predictor(&coef, design.row(i)));
            let w = mu * (1.0 - mu);
            let r = labels[i] - mu;
            for a in 0..d {
                grad[a] += xi[a] * r;
                let wa = w * xi[a];
                for b in 0..=a {
                    hess[a * d + b] += wa * xi[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                hess[b * d + a] = hess[a * d + b];
            }
            hess[a * d + a] += config.ridge;
            if a > 0 {
                grad[a] -= config.ridge * coef[a];
            }
        }
        let h = DMatrix::from_row_slice(d, d, &hess);
        let g = DVector::from_column_slice(&grad);
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => match h.lu().solve(&g) {
                Some(s) => s,
                None => break,
            },
        };

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c + scale * s).collect();
            let value = penalized_loglik(labels, design, &trial, config.ridge);
            if value.is_finite() && value >= current - 1e-12 * current.abs().max(1.0) {
                accepted = Some((trial, value));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, value)) = accepted else {
            converged = true;
            break;
        };
        let change = coef
            .iter()
            .zip(&trial)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        coef = trial;
        current = value;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }

    let separated = (0..n).all(|i| {
        let mu = sigmoid(linear_predictor(&coef, design.row(i)));
        (labels[i] - mu).abs() < 0.5
    });
    ThresholdFit {
        kind: ThresholdModelKind::Logistic,
        coefficients: coef,
        iterations,
        converged,
        separated,
    }
}

/// Increasing rearrangement: the sorted copy of `values`.
pub fn rearrange_monotone(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    out.sort_by(f64::total_cmp);
    out
}

/// Mid-CDF quantities at one covariate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidCdfAtPoint {
    pub pi: Vec<f64>,
    pub cdf: Vec<f64>,
    pub mass: Vec<f64>,
}

impl MidCdfAtPoint {
    /// Builds masses and mid-probabilities from raw (unsorted) CDF values.
    pub fn from_cdf(raw_cdf: &[f64]) -> Self {
        let cdf = rearrange_monotone(raw_cdf);
        let mut mass = Vec::with_capacity(cdf.len());
        let mut pi = Vec::with_capacity(cdf.len());
        let mut prev = 0.0;
        for &f in &cdf {
            let m = f - prev;
            mass.push(m);
            pi.push(f - 0.5 * m);
            prev = f;
        }
        Self { pi, cdf, mass }
    }
}

pub fn conditional_mid_cdf(logits: &ThresholdLogitSet, covariates: &[f64]) -> MidCdfAtPoint {
    let raw: Vec<f64> = logits.fits.iter().map(|f| f.probability(covariates)).collect();
    MidCdfAtPoint::from_cdf(&raw)
}

/// Value and slope of the interpolated mid-CDF at `eta`.
///
/// The slope is the right-hand segment slope at knots and zero where the
/// output is clamped.
pub fn interpolate_with_slope(thresholds: &[f64], pi: &[f64], eta: f64) -> (f64, f64) {
    let k = thresholds.len();
    debug_assert!(k >= 2 && pi.len() == k);
    let seg = if eta.is_nan() {
        0
    } else {
        thresholds.partition_point(|&z| z <= eta).saturating_sub(1).min(k - 2)
    };
    let (z0, z1) = (thresholds[seg], thresholds[seg + 1]);
    let slope = (pi[seg + 1] - pi[seg]) / (z1 - z0);
    let value = slope * (eta - z0) + pi[seg];
    if !(value >= MIDCDF_CLAMP) {
        (MIDCDF_CLAMP, 0.0)
    } else if value > 1.0 - MIDCDF_CLAMP {
        (1.0 - MIDCDF_CLAMP, 0.0)
    } else {
        (value, slope)
    }
}

pub fn interpolate_midcdf(point: &MidCdfAtPoint, thresholds: &[f64], eta: f64) -> f64 {
    interpolate_with_slope(thresholds, &point.pi, eta).0
}

/// Inverse of the interpolated mid-CDF: the `eta` with `G^c(eta) = tau`,
/// extrapolating the end segments and then clamping to the outermost
/// thresholds. Flat stretches resolve to their left end.
pub fn invert_midcdf(thresholds: &[f64], pi: &[f64], tau: f64) -> f64 {
    let k = thresholds.len();
    debug_assert!(k >= 2 && pi.len() == k);
    let seg = pi.partition_point(|&q| q < tau).saturating_sub(1).min(k - 2);
    let (p0, p1) = (pi[seg], pi[seg + 1]);
    let eta = if p1 > p0 {
        thresholds[seg] + (tau - p0) * (thresholds[seg + 1] - thresholds[seg]) / (p1 - p0)
    } else {
        thresholds[seg]
    };
    eta.clamp(thresholds[0], thresholds[k - 1])
}

/// Marginal empirical mid-CDF: distinct sorted values and their mid-probabilities.
pub fn marginal_mid_cdf(sample: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut values = Vec::new();
    let mut pi = Vec::new();
    let mut i = 0;
    let mut below = 0usize;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        let count = j - i;
        values.push(v);
        pi.push((below as f64 + 0.5 * count as f64) / n);
        below += count;
        i = j;
    }
    (values, pi)
}

/// Marginal mid-quantile: the piecewise-linear inverse of the
/// marginal mid-CDF, clamped to the extreme distinct values.
pub fn marginal_mid_quantile(sample: &[f64], tau: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(QmgmError::Config("mid-quantile of an empty sample".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(QmgmError::QuantileGrid(format!("tau = {tau} outside (0,1)")));
    }
    let (values, pi) = marginal_mid_cdf(sample);
    let k = values.len();
    if tau <= pi[0] {
        return Ok(values[0]);
    }
    if tau >= pi[k - 1] {
        return Ok(values[k - 1]);
    }
    let h = pi.partition_point(|&q| q <= tau) - 1;
    let w = (tau - pi[h]) / (pi[h + 1] - pi[h]);
    Ok(values[h] + w * (values[h + 1] - values[h]))
}

/// Fitted step-one model for a node plus the mid-probabilities at every
/// training row, which stay fixed throughout the penalized fits.
#[derive(Debug, Clone)]
pub struct NodeMidCdf {
    pub logits: ThresholdLogitSet,
    n: usize,
    /// Row-major `n x k` table of mid-probabilities.
    pi: Vec<f64>,
}

impl NodeMidCdf {
    pub fn estimate(dataset: &Dataset, node: usize, config: &LogitConfig) -> Result<Self> {
        let logits = fit_threshold_logits(dataset, node, config)?;
        let design = NodeDesign::for_node(dataset, node);
        Ok(Self::from_logits(logits, &design))
    }

    pub fn from_logits(logits: ThresholdLogitSet, design: &NodeDesign) -> Self {
        let n = design.n();
        let mut pi = Vec::with_capacity(n * logits.thresholds.len());
        for i in 0..n {
            pi.extend(conditional_mid_cdf(&logits, design.row(i)).pi);
        }
        Self { logits, n, pi }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.logits.thresholds
    }

    pub fn row_pi(&self, i: usize) -> &[f64] {
        let k = self.logits.thresholds.len();
        &self.pi[i * k..(i + 1) * k]
    }

    /// Conditional mid-quantile of row `i` at level `tau`.
    pub fn mid_quantile(&self, i: usize, tau: f64) -> f64 {
        invert_midcdf(&self.logits.thresholds, self.row_pi(i), tau)
    }

    /// `G^c(eta | y_{-j,i})` and its derivative in `eta`.
    pub fn evaluate(&self, i: usize, eta: f64) -> (f64, f64) {
        interpolate_with_slope(&self.logits.thresholds, self.row_pi(i), eta)
    }
}

/// Step-one models for every node of a dataset, estimated in parallel.
pub fn estimate_all(dataset: &Dataset, config: &LogitConfig) -> Result<Vec<NodeMidCdf>> {
    dataset.require_complete()?;
    (0..dataset.p())
        .into_par_iter()
        .map(|j| NodeMidCdf::estimate(dataset, j, config))
        .collect()
}
