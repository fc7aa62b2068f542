//! Mean-based mixed graphical model baseline: one LASSO-penalized GLM per
//! node, fitted by coordinate descent along a warm-started penalty path.
//!
//! Gaussian nodes minimize `(1/2n) RSS + lambda ||beta||_1`; binomial and
//! Poisson nodes minimize `-(1/n) loglik + lambda ||beta||_1` with proximal
//! Newton steps (a penalized weighted least-squares problem per outer
//! iteration, solved by coordinate descent).
//!
//! The result is stored as a [`CoefficientCube`] with a single pseudo-level so
//! that edge extraction and selection are shared with the quantile model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QmgmError, Result};
use crate::midcdf::NodeDesign;
use crate::model::{
    predictor_node, sigmoid, validate_lambda_grid, CoefficientCube, CubeEntry, CubeSlice, Dataset, VariableKind,
    DEFAULT_NONZERO_TOLERANCE,
};
use crate::selection::{criterion_from_blocks, estimate_edge_set, select_lambda, Selection, SelectionCriterion};

const MAX_ETA: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlmFamily {
    Gaussian,
    Binomial,
    Poisson,
}

impl GlmFamily {
    pub fn for_kind(kind: VariableKind) -> Self {
        match kind {
            VariableKind::Continuous => GlmFamily::Gaussian,
            VariableKind::Binary => GlmFamily::Binomial,
            VariableKind::Count => GlmFamily::Poisson,
        }
    }

    pub fn mean(self, eta: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => eta,
            GlmFamily::Binomial => sigmoid(eta),
            GlmFamily::Poisson => eta.clamp(-MAX_ETA, MAX_ETA).exp(),
        }
    }

    /// Canonical link applied to a mean, used for the null intercept.
    fn link(self, mu: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => mu,
            GlmFamily::Binomial => {
                let m = mu.clamp(1e-10, 1.0 - 1e-10);
                (m / (1.0 - m)).ln()
            }
            GlmFamily::Poisson => mu.max(1e-10).ln(),
        }
    }

    /// Per-observation negative log-likelihood, up to terms free of `eta`.
    fn nll(self, y: f64, eta: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => 0.5 * (y - eta).powi(2),
            GlmFamily::Binomial => {
                let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
                softplus - y * eta
            }
            GlmFamily::Poisson => {
                let e = eta.clamp(-MAX_ETA, MAX_ETA);
                e.exp() - y * e
            }
        }
    }
}

fn xlogy_ratio(y: f64, mu: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else {
        y * (y / mu).ln()
    }
}

/// Family deviance of fitted means `mu` against observations `y`.
pub fn glm_deviance(family: GlmFamily, y: &[f64], mu: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .map(|(&y, &m)| match family {
            GlmFamily::Gaussian => (y - m).powi(2),
            GlmFamily::Binomial => 2.0 * (xlogy_ratio(y, m) + xlogy_ratio(1.0 - y, 1.0 - m)),
            GlmFamily::Poisson => 2.0 * (xlogy_ratio(y, m) - (y - m)),
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgmConfig {
    pub max_outer: usize,
    pub max_sweeps: usize,
    pub tolerance: f64,
    pub nonzero_tolerance: f64,
}

impl Default for MgmConfig {
    fn default() -> Self {
        Self {
            max_outer: 100,
            max_sweeps: 1000,
            tolerance: 1e-7,
            nonzero_tolerance: DEFAULT_NONZERO_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One node's penalized GLM problem.
#[derive(Debug, Clone, Copy)]
pub struct GlmProblem<'a> {
    pub y: &'a [f64],
    pub design: &'a NodeDesign,
    pub family: GlmFamily,
}

impl<'a> GlmProblem<'a> {
    fn eta(&self, intercept: f64, beta: &[f64]) -> Vec<f64> {
        (0..self.design.n())
            .map(|i| intercept + self.design.row(i).iter().zip(beta).map(|(x, b)| x * b).sum::<f64>())
            .collect()
    }

    pub fn objective(&self, lambda: f64, intercept: f64, beta: &[f64]) -> f64 {
        let eta = self.eta(intercept, beta);
        let n = self.y.len() as f64;
        let loss: f64 = self.y.iter().zip(&eta).map(|(&y, &e)| self.family.nll(y, e)).sum::<f64>() / n;
        loss + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    pub fn fitted_means(&self, intercept: f64, beta: &[f64]) -> Vec<f64> {
        self.eta(intercept, beta).into_iter().map(|e| self.family.mean(e)).collect()
    }

    pub fn null_intercept(&self) -> f64 {
        let mean = self.y.iter().sum::<f64>() / self.y.len() as f64;
        self.family.link(mean)
    }

    /// Smallest penalty with an all-zero slope solution.
    pub fn lambda_max(&self) -> f64 {
        let mu = self.family.mean(self.null_intercept());
        let n = self.y.len() as f64;
        (0..self.design.cols())
            .map(|k| {
                (0..self.design.n())
                    .map(|i| self.design.row(i)[k] * (self.y[i] - mu))
                    .sum::<f64>()
                    .abs()
                    / n
            })
            .fold(0.0, f64::max)
    }
}

/// Coordinate descent on
/// `(1/2n) sum_i w_i (z_i - b0 - x_i' beta)^2 + lambda sum_k f_k |beta_k|`
/// with penalty factors `f` (all ones when `None`). Returns the number of
/// sweeps and whether the sweep tolerance was met.
#[allow(clippy::too_many_arguments)]
pub(crate) fn weighted_lasso_cd(
    design: &NodeDesign,
    weights: &[f64],
    z: &[f64],
    lambda: f64,
    factors: Option<&[f64]>,
    intercept: &mut f64,
    beta: &mut [f64],
    max_sweeps: usize,
    tolerance: f64,
) -> (usize, bool) {
    let n = design.n();
    let cols = design.cols();
    let nf = n as f64;
    let mut resid: Vec<f64> = (0..n)
        .map(|i| z[i] - *intercept - design.row(i).iter().zip(beta.iter()).map(|(x, b)| x * b).sum::<f64>())
        .collect();
    let col_scale: Vec<f64> = (0..cols)
        .map(|k| (0..n).map(|i| weights[i] * design.row(i)[k].powi(2)).sum::<f64>() / nf)
        .collect();
    let w_sum: f64 = weights.iter().sum::<f64>() / nf;
    for sweep in 1..=max_sweeps {
        let mut max_change: f64 = 0.0;
        if w_sum > 0.0 {
            let shift = (0..n).map(|i| weights[i] * resid[i]).sum::<f64>() / nf / w_sum;
            *intercept += shift;
            resid.iter_mut().for_each(|r| *r -= shift);
            max_change = max_change.max(shift.abs());
        }
        for k in 0..cols {
            if col_scale[k] <= 0.0 {
                continue;
            }
            let old = beta[k];
            let rho = (0..n).map(|i| weights[i] * design.row(i)[k] * resid[i]).sum::<f64>() / nf + col_scale[k] * old;
            let f = factors.map_or(1.0, |f| f[k]);
            let new = crate::penalized::soft_threshold(rho, lambda * f) / col_scale[k];
            let d = new - old;
            if d != 0.0 {
                for i in 0..n {
                    resid[i] -= d * design.row(i)[k];
                }
                beta[k] = new;
                max_change = max_change.max(d.abs() * col_scale[k].sqrt());
            }
        }
        if max_change < tolerance {
            return (sweep, true);
        }
    }
    (max_sweeps, false)
}

/// Fits a single penalty level starting from `init`.
pub fn fit_glm_lasso(problem: &GlmProblem<'_>, lambda: f64, init: Option<&GlmFit>, config: &MgmConfig) -> GlmFit {
    let n = problem.design.n();
    let (mut intercept, mut beta) = match init {
        Some(f) => (f.intercept, f.beta.clone()),
        None => (problem.null_intercept(), vec![0.0; problem.design.cols()]),
    };
    if problem.family == GlmFamily::Gaussian {
        let ones = vec![1.0; n];
        let (sweeps, converged) =
            weighted_lasso_cd(
            problem.design,
            &ones,
            problem.y,
            lambda,
            None,
            &mut intercept,
            &mut beta,
            config.max_sweeps,
            config.tolerance,
        );
        return GlmFit {
            objective: problem.objective(lambda, intercept, &beta),
            intercept,
            beta,
            iterations: sweeps,
            converged,
        };
    }

    let mut objective = problem.objective(lambda, intercept, &beta);
    let mut converged = false;
    let mut outer = 0;
    while outer < config.max_outer {
        outer += 1;
        let eta = problem.eta(intercept, &beta);
        let mut weights = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let mu = problem.family.mean(eta[i]);
            let var = match problem.family {
                GlmFamily::Binomial => mu * (1.0 - mu),
                _ => mu,
            }
            .max(1e-10);
            weights.push(var);
            z.push(eta[i] + (problem.y[i] - mu) / var);
        }
        let (mut new_b0, mut new_beta) = (intercept, beta.clone());
        weighted_lasso_cd(
            problem.design,
            &weights,
            &z,
            lambda,
            None,
            &mut new_b0,
            &mut new_beta,
            config.max_sweeps,
            config.tolerance,
        );

        // step halving keeps the penalized objective nonincreasing
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let b0 = intercept + t * (new_b0 - intercept);
            let b: Vec<f64> = beta.iter().zip(&new_beta).map(|(o, nw)| o + t * (nw - o)).collect();
            let obj = problem.objective(lambda, b0, &b);
            if obj <= objective {
                accepted = Some((b0, b, obj));
                break;
            }
            t *= 0.5;
        }
        let Some((b0, b, obj)) = accepted else {
            converged = true;
            break;
        };
        let change = beta
            .iter()
            .zip(&b)
            .map(|(o, nw)| (o - nw).abs())
            .fold((b0 - intercept).abs(), f64::max);
        intercept = b0;
        beta = b;
        objective = obj;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    GlmFit {
        intercept,
        beta,
        objective,
        iterations: outer,
        converged,
    }
}

pub fn fit_glm_path(problem: &GlmProblem<'_>, lambdas: &[f64], config: &MgmConfig) -> Result<Vec<GlmFit>> {
    validate_lambda_grid(lambdas)?;
    let lmax = problem.lambda_max();
    let null = GlmFit {
        intercept: problem.null_intercept(),
        beta: vec![0.0; problem.design.cols()],
        objective: 0.0,
        iterations: 0,
        converged: true,
    };
    let mut out: Vec<GlmFit> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let fit = if lambda >= lmax {
            GlmFit {
                objective: problem.objective(lambda, null.intercept, &null.beta),
                ..null.clone()
            }
        } else {
            fit_glm_lasso(problem, lambda, Some(out.last().unwrap_or(&null)), config)
        };
        if !fit.objective.is_finite() {
            return Err(QmgmError::Numerical(format!("non-finite GLM objective at lambda={lambda}")));
        }
        out.push(fit);
    }
    Ok(out)
}

/// Fits the baseline over the penalty grid for every node.
pub fn fit_mgm(dataset: &Dataset, lambdas: &[f64], config: &MgmConfig) -> Result<CoefficientCube> {
    dataset.require_complete()?;
    validate_lambda_grid(lambdas)?;
    let p = dataset.p();
    let paths = (0..p)
        .into_par_iter()
        .map(|j| {
            let design = NodeDesign::for_node(dataset, j);
            let problem = GlmProblem {
                y: dataset.column(j),
                design: &design,
                family: GlmFamily::for_kind(dataset.spec(j).kind),
            };
            fit_glm_path(&problem, lambdas, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = paths
        .into_iter()
        .flatten()
        .map(|f| CubeEntry {
            intercept: f.intercept,
            beta: f.beta,
            objective: f.objective,
            iterations: f.iterations,
            converged: f.converged,
        })
        .collect();
    CoefficientCube::new(p, vec![0.5], lambdas.to_vec(), entries)
}

/// Deviance and active-set size per node for one slice of a baseline cube.
pub fn deviance_blocks(slice: CubeSlice<'_>, dataset: &Dataset, tolerance: f64) -> Vec<(f64, usize)> {
    (0..dataset.p())
        .map(|j| {
            let e = slice.entry(j, 0);
            let family = GlmFamily::for_kind(dataset.spec(j).kind);
            let mu: Vec<f64> = (0..dataset.n())
                .map(|i| {
                    let eta = e.intercept
                        + e.beta
                            .iter()
                            .enumerate()
                            .map(|(k, b)| b * dataset.value(i, predictor_node(j, k)))
                            .sum::<f64>();
                    family.mean(eta)
                })
                .collect();
            let nu = e.beta.iter().filter(|b| b.abs() > tolerance).count();
            (glm_deviance(family, dataset.column(j), &mu), nu)
        })
        .collect()
}

pub fn select_mgm_graph(
    cube: &CoefficientCube,
    dataset: &Dataset,
    criterion: SelectionCriterion,
    tolerance: f64,
) -> Result<Selection> {
    let scores: Vec<f64> = (0..cube.lambdas().len())
        .map(|k| {
            let blocks = deviance_blocks(cube.slice(k), dataset, tolerance);
            criterion_from_blocks(&blocks, criterion, dataset.n(), dataset.p())
        })
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VariableSpec;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn family_follows_kind() {
        assert_eq!(GlmFamily::for_kind(VariableKind::Continuous), GlmFamily::Gaussian);
        assert_eq!(GlmFamily::for_kind(VariableKind::Binary), GlmFamily::Binomial);
        assert_eq!(GlmFamily::for_kind(VariableKind::Count), GlmFamily::Poisson);
    }

    #[test]
    fn deviance_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(glm_deviance(GlmFamily::Gaussian, &y, &y), 0.0);
        let labels = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let d = glm_deviance(GlmFamily::Binomial, &labels, &[0.5; 6]);
        assert_abs_diff_eq!(d, 12.0 * 2f64.ln(), epsilon = 1e-12);
        let counts = [0.0, 3.0, 1.0, 7.0];
        assert!(glm_deviance(GlmFamily::Poisson, &counts, &[2.0, 2.5, 1.0, 4.0]) >= 0.0);
        assert_abs_diff_eq!(glm_deviance(GlmFamily::Poisson, &counts, &counts), 0.0);
    }

    #[test]
    fn orthonormal_gaussian_lasso_is_soft_thresholded_ols() {
        // columns orthogonal with (1/n) x'x = 1 and zero mean
        let n = 8;
        let x1 = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let x2 = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![x1[i], x2[i]]).collect();
        let design = NodeDesign::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..n).map(|i| 0.7 * x1[i] - 0.2 * x2[i] + 0.1 * (i as f64 - 3.5)).collect();
        let ols: Vec<f64> = [x1, x2]
            .iter()
            .map(|x| x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n as f64)
            .collect();
        let problem = GlmProblem {
            y: &y,
            design: &design,
            family: GlmFamily::Gaussian,
        };
        for lambda in [0.0, 0.1, 0.3, 1.0] {
            let fit = fit_glm_lasso(&problem, lambda, None, &MgmConfig::default());
            for (b, o) in fit.beta.iter().zip(&ols) {
                assert_abs_diff_eq!(*b, crate::penalized::soft_threshold(*o, lambda), epsilon = 1e-9);
            }
        }
    }

    fn mixed_dataset(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let b: Vec<f64> = a.iter().map(|&v| if rng.gen::<f64>() < sigmoid(2.0 * v) { 1.0 } else { 0.0 }).collect();
        let c: Vec<f64> = a
            .iter()
            .map(|&v| {
                let lam = (0.5 + 0.8 * v).exp();
                // small-rate Poisson by inversion
                let u: f64 = rng.gen();
                let (mut k, mut pmf) = (0.0, (-lam).exp());
                let mut cdf = pmf;
                while u > cdf {
                    k += 1.0;
                    pmf *= lam / k;
                    cdf += pmf;
                }
                k
            })
            .collect();
        Dataset::new(
            vec![
                VariableSpec::new("a", VariableKind::Continuous),
                VariableSpec::new("b", VariableKind::Binary),
                VariableSpec::new("c", VariableKind::Count),
            ],
            vec![a, b, c],
        )
        .unwrap()
        .validate_and_standardize()
        .unwrap()
    }

    #[test]
    fn glm_objective_never_increases_and_path_is_sane() {
        let d = mixed_dataset(3, 400);
        let lambdas = crate::model::log_spaced_lambdas(0.001, 5.0, 20).unwrap();
        for j in 0..3 {
            let design = NodeDesign::for_node(&d, j);
            let problem = GlmProblem {
                y: d.column(j),
                design: &design,
                family: GlmFamily::for_kind(d.spec(j).kind),
            };
            let start = problem.objective(0.01, problem.null_intercept(), &[0.0, 0.0]);
            let fit = fit_glm_lasso(&problem, 0.01, None, &MgmConfig::default());
            assert!(fit.objective <= start);
            assert!(fit.converged);
            let path = fit_glm_path(&problem, &lambdas, &MgmConfig::default()).unwrap();
            assert!(path[0].beta.iter().all(|&b| b == 0.0));
            // node a is connected to both others
            if j == 0 {
                assert!(path.last().unwrap().beta.iter().all(|b| b.abs() > 1e-3));
            }
        }
    }

    #[test]
    fn above_lambda_max_graph_is_empty() {
        let d = mixed_dataset(4, 300);
        let cube = fit_mgm(&d, &[100.0, 50.0], &MgmConfig::default()).unwrap();
        for k in 0..2 {
            assert_eq!(estimate_edge_set(cube.slice(k), 1e-6).edge_count(), 0);
        }
        let dense = fit_mgm(&d, &[0.01], &MgmConfig::default()).unwrap();
        let g = estimate_edge_set(dense.slice(0), 1e-6);
        assert!(g.has_edge(0, 1) && g.has_edge(0, 2));
        let sel = select_mgm_graph(&dense, &d, SelectionCriterion::Aic, 1e-6).unwrap();
        assert_eq!(sel.index, 0);
    }
}
