//! LASSO-penalized mid-quantile regression for one node at one level.
//!
//! Minimizes
//!
//! ```text
//! (1/n) sum_i (tau - G^c_i(eta_i))^2 + lambda * sum_k w_k |beta_k|,
//! eta_i = g^{-1}(beta_0 + y_{-j,i}' beta)
//! ```
//!
//! by proximal gradient with backtracking. The intercept is never penalized.
//!
//! [`Estimator::PseudoResponse`] instead regresses the transformed conditional
//! mid-quantiles `g(H_i(tau))` on the other nodes by the LASSO; at
//! `lambda = 0` this is the closed-form mid-quantile regression estimator.

use serde::{Deserialize, Serialize};

use crate::error::{QmgmError, Result};
use crate::midcdf::{marginal_mid_quantile, NodeDesign, NodeMidCdf};
use crate::model::{validate_lambda_grid, Link, DEFAULT_NONZERO_TOLERANCE};
use nalgebra::{DMatrix, DVector};

/// Floor used when pulling the initial mid-quantile into the link's domain.
const LINK_DOMAIN_FLOOR: f64 = 1e-3;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFitConfig {
    pub tau: f64,
    pub lambda: f64,
    /// Per-coefficient penalty weights; `None` means all ones.
    pub weights: Option<Vec<f64>>,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub tolerance: f64,
    pub nonzero_tolerance: f64,
    /// Keep the objective value after every accepted step.
    pub record_trace: bool,
    #[serde(default)]
    pub path: PathStrategy,
}

/// Step-two estimator for one node and level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// LASSO on the pseudo-responses `g(H_i(tau))`, solved by coordinate descent.
    #[default]
    PseudoResponse,
    /// The implicit-equation objective, solved by proximal gradient.
    ImplicitEquation,
}

impl Estimator {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pseudo-response" | "pseudo" => Some(Estimator::PseudoResponse),
            "implicit-equation" | "implicit" => Some(Estimator::ImplicitEquation),
            _ => None,
        }
    }
}

/// How [`fit_lambda_path`] chooses starting points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathStrategy {
    /// Decreasing lambda, each fit started from the previous solution.
    #[default]
    WarmStart,
    /// Adds a second sweep in increasing lambda started from the
    /// least-squares fit of `g(y)`; each grid point keeps whichever of the
    /// two solutions has the lower objective. Grid points at or above
    /// `lambda_max` still return the intercept-only fit.
    DualSweep,
}

impl NodeFitConfig {
    pub fn new(tau: f64, lambda: f64) -> Self {
        Self {
            tau,
            lambda,
            weights: None,
            max_iterations: 500,
            initial_step: 1.0,
            tolerance: 1e-7,
            nonzero_tolerance: DEFAULT_NONZERO_TOLERANCE,
            record_trace: false,
            path: PathStrategy::WarmStart,
        }
    }

    pub fn validate(&self, cols: usize) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(QmgmError::Config(format!("tau = {} outside (0,1)", self.tau)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(QmgmError::Config(format!("lambda = {} must be finite and >= 0", self.lambda)));
        }
        if !(self.tolerance > 0.0) || !(self.initial_step > 0.0) {
            return Err(QmgmError::Config("tolerance and step must be positive".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != cols {
                return Err(QmgmError::Config(format!("expected {cols} weights, got {}", w.len())));
            }
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(QmgmError::Config("weights must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }

    fn weight(&self, k: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFitResult {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub active_set: Vec<usize>,
    pub trace: Vec<f64>,
}

/// Everything the step-two fit needs for one node.
#[derive(Debug, Clone, Copy)]
pub struct NodeProblem<'a> {
    pub response: &'a [f64],
    pub design: &'a NodeDesign,
    pub midcdf: &'a NodeMidCdf,
    pub link: Link,
}

impl<'a> NodeProblem<'a> {
    pub fn new(response: &'a [f64], design: &'a NodeDesign, midcdf: &'a NodeMidCdf, link: Link) -> Result<Self> {
        if response.len() != design.n() || midcdf.n() != design.n() {
            return Err(QmgmError::Dimension("response, design and mid-CDF table disagree on n".into()));
        }
        Ok(Self {
            response,
            design,
            midcdf,
            link,
        })
    }

    pub fn cols(&self) -> usize {
        self.design.cols()
    }

    fn linear_predictor(&self, i: usize, intercept: f64, beta: &[f64]) -> f64 {
        intercept + self.design.row(i).iter().zip(beta).map(|(x, b)| x * b).sum::<f64>()
    }

    /// Smooth term `(1/n) sum_i (tau - G^c(eta_i))^2`.
    pub fn smooth_value(&self, tau: f64, intercept: f64, beta: &[f64]) -> f64 {
        let n = self.design.n();
        let mut total = 0.0;
        for i in 0..n {
            let eta = self.link.inverse(self.linear_predictor(i, intercept, beta));
            let (g, _) = self.midcdf.evaluate(i, eta);
            total += (tau - g).powi(2);
        }
        total / n as f64
    }

    /// Smooth value and its gradient; entry 0 is the intercept derivative.
    pub fn smooth_gradient(&self, tau: f64, intercept: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let n = self.design.n();
        let mut grad = vec![0.0; beta.len() + 1];
        let mut total = 0.0;
        for i in 0..n {
            let lp = self.linear_predictor(i, intercept, beta);
            let eta = self.link.inverse(lp);
            let (g, slope) = self.midcdf.evaluate(i, eta);
            let r = g - tau;
            total += r * r;
            let scale = 2.0 * r * slope * self.link.inverse_derivative(lp);
            if scale != 0.0 {
                grad[0] += scale;
                for (gk, x) in grad[1..].iter_mut().zip(self.design.row(i)) {
                    *gk += scale * x;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv_n);
        (total * inv_n, grad)
    }

    pub fn objective(&self, config: &NodeFitConfig, intercept: f64, beta: &[f64]) -> f64 {
        self.smooth_value(config.tau, intercept, beta) + penalty(config, beta)
    }

    /// `g` of the marginal mid-quantile of the response at `tau`.
    pub fn initial_intercept(&self, tau: f64) -> Result<f64> {
        let q = marginal_mid_quantile(self.response, tau)?;
        Ok(self.link.apply(self.link.clamp_to_domain(q, LINK_DOMAIN_FLOOR)))
    }
}

pub fn penalty(config: &NodeFitConfig, beta: &[f64]) -> f64 {
    config.lambda * beta.iter().enumerate().map(|(k, b)| config.weight(k) * b.abs()).sum::<f64>()
}

/// `sign(v) * max(|v| - t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn active_set(beta: &[f64], tol: f64) -> Vec<usize> {
    beta.iter().enumerate().filter(|(_, b)| b.abs() > tol).map(|(k, _)| k).collect()
}

/// Proximal gradient iterations from a given start. With `intercept_only`
/// the slopes stay fixed.
fn proximal_descent(
    problem: &NodeProblem<'_>,
    config: &NodeFitConfig,
    mut intercept: f64,
    mut beta: Vec<f64>,
    intercept_only: bool,
) -> NodeFitResult {
    let tau = config.tau;
    let mut step = config.initial_step;
    let mut objective = problem.objective(config, intercept, &beta);
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(objective);
    }
    let mut converged = false;
    let mut iterations = 0;
    let mut trial_beta = beta.clone();

    while iterations < config.max_iterations {
        iterations += 1;
        let (smooth, grad) = problem.smooth_gradient(tau, intercept, &beta);
        step = (step * 2.0).min(config.initial_step);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial_intercept = intercept - step * grad[0];
            let mut lin = (trial_intercept - intercept) * grad[0];
            let mut sq = (trial_intercept - intercept).powi(2);
            for k in 0..beta.len() {
                trial_beta[k] = if intercept_only {
                    beta[k]
                } else {
                    soft_threshold(beta[k] - step * grad[k + 1], step * config.lambda * config.weight(k))
                };
                let d = trial_beta[k] - beta[k];
                lin += d * grad[k + 1];
                sq += d * d;
            }
            let trial_smooth = problem.smooth_value(tau, trial_intercept, &trial_beta);
            let trial_objective = trial_smooth + penalty(config, &trial_beta);
            if trial_smooth <= smooth + lin + sq / (2.0 * step) && trial_objective <= objective {
                accepted = Some((trial_intercept, trial_objective, sq.sqrt()));
                break;
            }
            step *= 0.5;
        }
        let Some((new_intercept, new_objective, _)) = accepted else {
            // no descent direction at machine precision
            converged = true;
            break;
        };
        let change = beta
            .iter()
            .zip(&trial_beta)
            .map(|(a, b)| (a - b).abs())
            .fold((new_intercept - intercept).abs(), f64::max);
        intercept = new_intercept;
        beta.copy_from_slice(&trial_beta);
        objective = new_objective;
        if config.record_trace {
            trace.push(objective);
        }
        if change < config.tolerance {
            converged = true;
            break;
        }
    }

    NodeFitResult {
        intercept,
        active_set: active_set(&beta, config.nonzero_tolerance),
        beta,
        objective,
        iterations,
        converged,
        trace,
    }
}

/// Intercept-only solution: slopes zero, intercept started at the link
/// transform of the marginal mid-quantile and refined by descent.
pub fn fit_intercept_only(problem: &NodeProblem<'_>, config: &NodeFitConfig) -> Result<NodeFitResult> {
    config.validate(problem.cols())?;
    let start = problem.initial_intercept(config.tau)?;
    Ok(proximal_descent(problem, config, start, vec![0.0; problem.cols()], true))
}

/// Smallest lambda for which the zero-slope solution is stationary, evaluated
/// at the intercept-only optimum.
pub fn lambda_max(problem: &NodeProblem<'_>, config: &NodeFitConfig, null: &NodeFitResult) -> f64 {
    let (_, grad) = problem.smooth_gradient(config.tau, null.intercept, &null.beta);
    grad[1..]
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let w = config.weight(k);
            if w > 0.0 {
                g.abs() / w
            } else if *g == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

fn null_result(null: &NodeFitResult, config: &NodeFitConfig) -> NodeFitResult {
    NodeFitResult {
        trace: if config.record_trace { vec![null.objective] } else { Vec::new() },
        ..null.clone()
    }
}

/// Fits one (node, tau, lambda) problem.
///
/// A cold start first solves the intercept-only problem. When `lambda` is
/// at least [`lambda_max`] the zero-slope solution satisfies the optimality
/// conditions and is returned as is; otherwise the slopes are released.
pub fn fit_node_quantile(
    problem: &NodeProblem<'_>,
    config: &NodeFitConfig,
    init: Option<&NodeFitResult>,
) -> Result<NodeFitResult> {
    config.validate(problem.cols())?;
    let (intercept, beta, prior_iterations) = match init {
        Some(r) => {
            if r.beta.len() != problem.cols() {
                return Err(QmgmError::Dimension("warm start has the wrong length".into()));
            }
            (r.intercept, r.beta.clone(), 0)
        }
        None => {
            let null = fit_intercept_only(problem, config)?;
            if config.lambda >= lambda_max(problem, config, &null) {
                return Ok(null_result(&null, config));
            }
            (null.intercept, null.beta, null.iterations)
        }
    };
    let mut result = proximal_descent(problem, config, intercept, beta, false);
    result.iterations += prior_iterations;
    if !result.objective.is_finite() {
        return Err(QmgmError::Numerical(format!(
            "non-finite objective at tau={} lambda={}",
            config.tau, config.lambda
        )));
    }
    Ok(result)
}

/// Least-squares coefficients of `g(y)` on the design. Responses outside
/// the link domain are clamped first.
pub fn least_squares_start(problem: &NodeProblem<'_>) -> Result<(f64, Vec<f64>)> {
    let n = problem.design.n();
    let c = problem.cols();
    let x = DMatrix::from_fn(n, c + 1, |i, k| if k == 0 { 1.0 } else { problem.design.row(i)[k - 1] });
    let z = DVector::from_iterator(
        n,
        problem.response.iter().map(|&y| problem.link.apply(problem.link.clamp_to_domain(y, LINK_DOMAIN_FLOOR))),
    );
    let mut gram = x.tr_mul(&x);
    for k in 0..=c {
        gram[(k, k)] += 1e-8 * (1.0 + gram[(k, k)]);
    }
    let coef = gram
        .cholesky()
        .ok_or_else(|| QmgmError::Numerical("singular least-squares start".into()))?
        .solve(&x.tr_mul(&z));
    Ok((coef[0], coef.iter().skip(1).copied().collect()))
}

/// Transformed conditional mid-quantiles `g(H_i(tau))`, one per row.
/// Mid-quantiles outside the link's domain are pulled inside first.
pub fn pseudo_responses(problem: &NodeProblem<'_>, tau: f64) -> Vec<f64> {
    (0..problem.design.n())
        .map(|i| {
            let q = problem.midcdf.mid_quantile(i, tau);
            problem.link.apply(problem.link.clamp_to_domain(q, LINK_DOMAIN_FLOOR))
        })
        .collect()
}

fn center_scale(values: impl Iterator<Item = f64> + Clone, standardize: bool) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let sd = (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if standardize && sd > 0.0 { sd } else { 1.0 })
}

/// LASSO path of the pseudo-responses at `base.tau` on the design.
///
/// With `standardize` the penalty acts on unit-variance predictors and a
/// unit-variance response, so one `lambda` means the same thing at every
/// node and level. Coefficients are always returned on the original scale;
/// `objective` is the value of the problem actually solved,
/// `(1/2n) RSS + lambda sum_k w_k |beta_k|` on the standardized scale.
pub fn fit_pseudo_response_path(
    problem: &NodeProblem<'_>,
    lambdas: &[f64],
    base: &NodeFitConfig,
    standardize: bool,
) -> Result<Vec<NodeFitResult>> {
    validate_lambda_grid(lambdas)?;
    base.validate(problem.cols())?;
    let n = problem.design.n();
    let c = problem.cols();
    let h = pseudo_responses(problem, base.tau);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(QmgmError::Numerical(format!("non-finite pseudo-response at tau={}", base.tau)));
    }
    let (h_mean, h_scale) = center_scale(h.iter().copied(), standardize);
    let z: Vec<f64> = h.iter().map(|v| (v - h_mean) / h_scale).collect();
    let moments: Vec<(f64, f64)> =
        (0..c).map(|k| center_scale((0..n).map(|i| problem.design.row(i)[k]), standardize)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| problem.design.row(i).iter().zip(&moments).map(|(x, (m, s))| (x - m) / s).collect())
        .collect();
    let design = NodeDesign::from_rows(&rows)?;

    let lmax = (0..c)
        .map(|k| {
            let g = (0..n).map(|i| rows[i][k] * z[i]).sum::<f64>().abs() / n as f64;
            let w = base.weight(k);
            if w > 0.0 {
                g / w
            } else if g == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);

    let ones = vec![1.0; n];
    let (mut b0, mut beta) = (0.0, vec![0.0; c]);
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let config = NodeFitConfig { lambda, ..base.clone() };
        let (iterations, converged) = if lambda >= lmax {
            (0, true)
        } else {
            crate::mgm::weighted_lasso_cd(
                &design,
                &ones,
                &z,
                lambda,
                base.weights.as_deref(),
                &mut b0,
                &mut beta,
                base.max_iterations,
                base.tolerance,
            )
        };
        let rss = (0..n)
            .map(|i| (z[i] - b0 - rows[i].iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>()).powi(2))
            .sum::<f64>();
        let objective = rss / (2.0 * n as f64) + penalty(&config, &beta);
        if !objective.is_finite() {
            return Err(QmgmError::Numerical(format!("non-finite objective at tau={} lambda={lambda}", base.tau)));
        }
        let slopes: Vec<f64> = beta.iter().zip(&moments).map(|(b, (_, s))| b * h_scale / s).collect();
        let intercept =
            h_mean + b0 * h_scale - slopes.iter().zip(&moments).map(|(b, (m, _))| b * m).sum::<f64>();
        out.push(NodeFitResult {
            intercept,
            active_set: active_set(&slopes, base.nonzero_tolerance),
            beta: slopes,
            objective,
            iterations,
            converged,
            trace: Vec::new(),
        });
    }
    Ok(out)
}

/// Fits a strictly decreasing lambda grid with warm starts. Grid values at
/// or above the path's `lambda_max` reuse the intercept-only solution.
pub fn fit_lambda_path(problem: &NodeProblem<'_>, lambdas: &[f64], base: &NodeFitConfig) -> Result<Vec<NodeFitResult>> {
    validate_lambda_grid(lambdas)?;
    base.validate(problem.cols())?;
    let null = fit_intercept_only(problem, base)?;
    let lmax = lambda_max(problem, base, &null);
    let mut out: Vec<NodeFitResult> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let config = NodeFitConfig { lambda, ..base.clone() };
        let fit = if lambda >= lmax {
            null_result(&null, &config)
        } else {
            fit_node_quantile(problem, &config, Some(out.last().unwrap_or(&null)))?
        };
        out.push(fit);
    }
    if base.path == PathStrategy::DualSweep {
        let (b0, beta) = least_squares_start(problem)?;
        let mut prev = NodeFitResult {
            intercept: b0,
            active_set: active_set(&beta, base.nonzero_tolerance),
            beta,
            objective: f64::INFINITY,
            iterations: 0,
            converged: false,
            trace: Vec::new(),
        };
        for (k, &lambda) in lambdas.iter().enumerate().rev() {
            if lambda >= lmax {
                break;
            }
            let config = NodeFitConfig { lambda, ..base.clone() };
            let up = fit_node_quantile(problem, &config, Some(&prev))?;
            if up.objective < out[k].objective {
                out[k] = up.clone();
            }
            prev = up;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midcdf::{fit_threshold_logits_with_design, LogitConfig};
    use crate::model::threshold_grid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Instance {
        y: Vec<f64>,
        design: NodeDesign,
        midcdf: NodeMidCdf,
    }

    /// y = 0.8 x0 - 0.5 x1 + noise, with a third irrelevant predictor.
    fn instance(seed: u64, n: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 0.8 * r[0] - 0.5 * r[1] + (rng.gen::<f64>() - 0.5))
            .collect();
        let mut sorted = y.clone();
        let grid = threshold_grid(&mut sorted, 30);
        let design = NodeDesign::from_rows(&rows).unwrap();
        let logits = fit_threshold_logits_with_design(&y, &design, &grid, &LogitConfig::default()).unwrap();
        let midcdf = NodeMidCdf::from_logits(logits, &design);
        Instance { y, design, midcdf }
    }

    impl Instance {
        fn problem(&self) -> NodeProblem<'_> {
            NodeProblem::new(&self.y, &self.design, &self.midcdf, Link::Identity).unwrap()
        }
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-2.5, 0.0), -2.5);
        assert_eq!(soft_threshold(1.7, 0.0), 1.7);
    }

    #[test]
    fn penalty_is_linear_in_lambda() {
        let beta = [0.5, -1.0, 0.25];
        let a = penalty(&NodeFitConfig::new(0.5, 0.3), &beta);
        let b = penalty(&NodeFitConfig::new(0.5, 0.6), &beta);
        assert_abs_diff_eq!(b, 2.0 * a, epsilon = 1e-15);
    }

    #[test]
    fn zero_lambda_objective_is_smooth_term() {
        let inst = instance(1, 200);
        let pr = inst.problem();
        let cfg = NodeFitConfig::new(0.5, 0.0);
        let beta = [0.3, -0.2, 0.1];
        assert_eq!(pr.objective(&cfg, 0.1, &beta), pr.smooth_value(0.5, 0.1, &beta));
    }

    #[test]
    fn initial_intercept_puts_midcdf_near_tau() {
        let inst = instance(2, 400);
        let pr = inst.problem();
        for tau in [0.25, 0.5, 0.75] {
            let b0 = pr.initial_intercept(tau).unwrap();
            let mean_g: f64 = (0..400).map(|i| inst.midcdf.evaluate(i, b0).0).sum::<f64>() / 400.0;
            assert!((mean_g - tau).abs() < 0.05, "tau {tau}: mean G {mean_g}");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let inst = instance(3, 150);
        let pr = inst.problem();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let knots = inst.midcdf.thresholds().to_vec();
        let mut checked = 0;
        for _ in 0..40 {
            let b0 = rng.gen::<f64>() - 0.5;
            let beta: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() - 0.5).collect();
            let h = 1e-6;
            // skip points with a linear predictor near a knot or a clamp boundary
            let near_kink = (0..150).any(|i| {
                let eta = pr.linear_predictor(i, b0, &beta);
                let (g, _) = inst.midcdf.evaluate(i, eta);
                knots.iter().any(|z| (eta - z).abs() < 1e-4) || g <= 1e-6 + 1e-9 || g >= 1.0 - 1e-6 - 1e-9
            });
            if near_kink {
                continue;
            }
            let (_, grad) = pr.smooth_gradient(0.5, b0, &beta);
            let mut x: Vec<f64> = std::iter::once(b0).chain(beta.iter().copied()).collect();
            for k in 0..4 {
                let orig = x[k];
                x[k] = orig + h;
                let up = pr.smooth_value(0.5, x[0], &x[1..]);
                x[k] = orig - h;
                let down = pr.smooth_value(0.5, x[0], &x[1..]);
                x[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - grad[k]).abs() / grad[k].abs().max(1e-8);
                assert!(rel < 1e-4, "coord {k}: fd {fd} vs analytic {}", grad[k]);
            }
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn descent_is_monotone_and_recovers_signal() {
        let inst = instance(4, 500);
        let pr = inst.problem();
        let mut cfg = NodeFitConfig::new(0.5, 0.0);
        cfg.record_trace = true;
        let fit = fit_node_quantile(&pr, &cfg, None).unwrap();
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.beta[0] > 0.5 && fit.beta[1] < -0.3, "beta {:?}", fit.beta);
        assert!(fit.beta[2].abs() < 0.15);
    }

    #[test]
    fn lambda_above_max_gives_exact_zeros() {
        let inst = instance(5, 300);
        let pr = inst.problem();
        for tau in [0.25, 0.5, 0.75] {
            let cfg = NodeFitConfig::new(tau, 0.0);
            let null = fit_intercept_only(&pr, &cfg).unwrap();
            let lmax = lambda_max(&pr, &cfg, &null);
            assert!(lmax > 0.0);
            for factor in [1.0 + 1e-9, 1.5, 10.0] {
                let fit = fit_node_quantile(&pr, &NodeFitConfig::new(tau, lmax * factor), None).unwrap();
                assert!(fit.beta.iter().all(|&b| b == 0.0), "beta {:?}", fit.beta);
                assert!(fit.active_set.is_empty());
            }
            let below = fit_node_quantile(&pr, &NodeFitConfig::new(tau, lmax * 0.5), None).unwrap();
            assert!(!below.active_set.is_empty());
        }
    }

    #[test]
    fn single_lambda_path_equals_cold_fit() {
        let inst = instance(6, 200);
        let pr = inst.problem();
        let cfg = NodeFitConfig::new(0.5, 0.01);
        let path = fit_lambda_path(&pr, &[0.01], &cfg).unwrap();
        let cold = fit_node_quantile(&pr, &cfg, None).unwrap();
        assert_eq!(path.len(), 1);
        for (a, b) in path[0].beta.iter().zip(&cold.beta) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
        assert!(fit_lambda_path(&pr, &[0.1, 0.2], &cfg).is_err());
    }

    #[test]
    fn path_gets_denser_as_lambda_falls() {
        let inst = instance(7, 300);
        let pr = inst.problem();
        let grid = crate::model::log_spaced_lambdas(0.001, 5.0, 20).unwrap();
        let path = fit_lambda_path(&pr, &grid, &NodeFitConfig::new(0.5, 0.0)).unwrap();
        assert!(path[0].active_set.is_empty());
        assert!(path.last().unwrap().active_set.len() >= 2);
    }

    #[test]
    fn permuting_predictors_permutes_solution() {
        let inst = instance(8, 250);
        let perm = [2usize, 0, 1];
        let design_p = inst.design.permuted(&perm);
        let logits_p = {
            let mut l = inst.midcdf.logits.clone();
            for f in &mut l.fits {
                let c = f.coefficients.clone();
                for (new, &old) in perm.iter().enumerate() {
                    f.coefficients[new + 1] = c[old + 1];
                }
            }
            l
        };
        let midcdf_p = NodeMidCdf::from_logits(logits_p, &design_p);
        let pr = inst.problem();
        let pr_p = NodeProblem::new(&inst.y, &design_p, &midcdf_p, Link::Identity).unwrap();
        let mut cfg = NodeFitConfig::new(0.4, 0.005);
        cfg.weights = Some(vec![1.0, 2.0, 0.5]);
        let mut cfg_p = cfg.clone();
        cfg_p.weights = Some(perm.iter().map(|&k| cfg.weights.as_ref().unwrap()[k]).collect());
        let a = fit_node_quantile(&pr, &cfg, None).unwrap();
        let b = fit_node_quantile(&pr_p, &cfg_p, None).unwrap();
        assert_abs_diff_eq!(a.intercept, b.intercept, epsilon = 1e-8);
        for (new, &old) in perm.iter().enumerate() {
            assert_abs_diff_eq!(a.beta[old], b.beta[new], epsilon = 1e-8);
        }
    }

    #[test]
    fn config_validation() {
        let inst = instance(9, 50);
        let pr = inst.problem();
        assert!(fit_node_quantile(&pr, &NodeFitConfig::new(1.0, 0.1), None).is_err());
        assert!(fit_node_quantile(&pr, &NodeFitConfig::new(0.5, -0.1), None).is_err());
        let mut cfg = NodeFitConfig::new(0.5, 0.1);
        cfg.weights = Some(vec![1.0]);
        assert!(fit_node_quantile(&pr, &cfg, None).is_err());
    }

    /// Ordinary least squares by the normal equations, as an independent check.
    fn ols(y: &[f64], design: &NodeDesign) -> Vec<f64> {
        let n = y.len();
        let c = design.cols() + 1;
        let x = DMatrix::from_fn(n, c, |i, k| if k == 0 { 1.0 } else { design.row(i)[k - 1] });
        let coef = (x.transpose() * &x).lu().solve(&(x.transpose() * DVector::from_column_slice(y))).unwrap();
        coef.iter().copied().collect()
    }

    #[test]
    fn pseudo_response_path_ends_at_least_squares() {
        let inst = instance(10, 400);
        let pr = inst.problem();
        let h = pseudo_responses(&pr, 0.5);
        let expect = ols(&h, &inst.design);
        let mut cfg = NodeFitConfig::new(0.5, 0.0);
        cfg.tolerance = 1e-12;
        cfg.max_iterations = 10_000;
        for standardize in [false, true] {
            let path = fit_pseudo_response_path(&pr, &[1.0, 1e-10], &cfg, standardize).unwrap();
            let last = path.last().unwrap();
            assert_abs_diff_eq!(last.intercept, expect[0], epsilon = 1e-6);
            for k in 0..3 {
                assert_abs_diff_eq!(last.beta[k], expect[k + 1], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn pseudo_response_path_starts_empty_and_fills() {
        let inst = instance(11, 300);
        let pr = inst.problem();
        let grid = crate::model::log_spaced_lambdas(0.001, 5.0, 30).unwrap();
        for standardize in [false, true] {
            let path = fit_pseudo_response_path(&pr, &grid, &NodeFitConfig::new(0.3, 0.0), standardize).unwrap();
            assert!(path[0].beta.iter().all(|&b| b == 0.0));
            assert!(path.last().unwrap().active_set.len() >= 2);
            assert!(path[0].intercept.is_finite());
        }
    }

    #[test]
    fn pseudo_responses_track_the_linear_quantile() {
        // y = 0.8 x0 - 0.5 x1 + U(-0.5, 0.5): the conditional median is linear
        let inst = instance(12, 2000);
        let pr = inst.problem();
        let h = pseudo_responses(&pr, 0.5);
        let coef = ols(&h, &inst.design);
        assert!((coef[1] - 0.8).abs() < 0.1 && (coef[2] + 0.5).abs() < 0.1, "{coef:?}");
        assert!(coef[3].abs() < 0.1 && coef[0].abs() < 0.1, "{coef:?}");
    }

    #[test]
    fn zero_weight_coefficient_is_never_penalized() {
        let inst = instance(13, 300);
        let pr = inst.problem();
        let mut cfg = NodeFitConfig::new(0.5, 0.0);
        cfg.weights = Some(vec![1.0, 1.0, 0.0]);
        let path = fit_pseudo_response_path(&pr, &[100.0, 50.0], &cfg, true).unwrap();
        assert_eq!(path[0].active_set, vec![2]);
        assert_eq!(path[0].beta[0], 0.0);
    }

    proptest! {
        #[test]
        fn soft_threshold_is_the_prox(v in -10f64..10.0, t in 0f64..5.0) {
            let x = soft_threshold(v, t);
            let f = |z: f64| 0.5 * (z - v).powi(2) + t * z.abs();
            // grid search with local refinement around the best grid point
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=20_000 {
                let z = -15.0 + 30.0 * k as f64 / 20_000.0;
                let fz = f(z);
                if fz < best.0 { best = (fz, z); }
            }
            prop_assert!(f(x) <= best.0 + 1e-10);
            prop_assert!((x - best.1).abs() <= 30.0 / 20_000.0 + 1e-12);
        }
    }
}
