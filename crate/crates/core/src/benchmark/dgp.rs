//! Synthetic mixed graphs with known structure.
//!
//! Ten nodes, five continuous (`Y1..Y5`) and five discrete (`Y6..Y10`), each
//! generated by inverting a conditional quantile function at an independent
//! uniform draw `u_m`. `DU(a, b)` terms are independent discrete uniforms on
//! `{a, ..., b}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, DiscreteCDF, Gamma, Normal, Poisson, StudentsT};

use crate::error::{QmgmError, Result};
use crate::model::{Dataset, EstimatedGraph, VariableKind, VariableSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpKind {
    /// Counts at Y6..Y10.
    Main,
    /// Y7 and Y10 replaced by Bernoulli nodes.
    Binary,
}

impl DgpKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "main" => Some(DgpKind::Main),
            "binary" => Some(DgpKind::Binary),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DgpKind::Main => "main",
            DgpKind::Binary => "binary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpVariant {
    pub kind: DgpKind,
    pub n: usize,
    pub seed: u64,
}

impl DgpVariant {
    pub fn new(kind: DgpKind, n: usize, seed: u64) -> Result<Self> {
        if n < 10 {
            return Err(QmgmError::Config(format!("sample size must be at least 10, got {n}")));
        }
        Ok(Self { kind, n, seed })
    }
}

/// Zero-based parent sets of the generating formulas.
pub const TRUE_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (0, 2),
    (2, 3),
    (0, 4),
    (0, 5),
    (2, 6),
    (4, 6),
    (6, 7),
    (1, 7),
    (4, 7),
    (7, 8),
    (8, 9),
];

pub fn true_graph() -> EstimatedGraph {
    EstimatedGraph::from_edges(10, &TRUE_EDGES)
}

pub fn schema(kind: DgpKind) -> Vec<VariableSpec> {
    (1..=10)
        .map(|m| {
            let vk = match (m, kind) {
                (1..=5, _) => VariableKind::Continuous,
                (7 | 10, DgpKind::Binary) => VariableKind::Binary,
                _ => VariableKind::Count,
            };
            VariableSpec::new(format!("Y{m}"), vk)
        })
        .collect()
}

/// Poisson quantile by direct CDF search.
pub fn poisson_quantile(u: f64, rate: f64) -> f64 {
    if !(rate > 0.0) {
        return 0.0;
    }
    let p0 = (-rate).exp();
    if p0 > 0.0 {
        let (mut k, mut pmf) = (0u64, p0);
        let mut cdf = pmf;
        while u > cdf && pmf > 0.0 {
            k += 1;
            pmf *= rate / k as f64;
            cdf += pmf;
        }
        if u <= cdf {
            return k as f64;
        }
    }
    // rate too large for the recursion in double precision
    Poisson::new(rate).map(|d| d.inverse_cdf(u) as f64).unwrap_or(rate.round())
}

/// Bernoulli quantile: 0 when `u <= 1 - prob`, else 1.
pub fn bernoulli_quantile(u: f64, prob: f64) -> f64 {
    if u <= 1.0 - prob.clamp(0.0, 1.0) {
        0.0
    } else {
        1.0
    }
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Raw (unstandardized) sample and the implied true graph.
pub fn generate_sample(variant: &DgpVariant) -> Result<(Dataset, EstimatedGraph)> {
    let n = variant.n;
    let mut rng = ChaCha8Rng::seed_from_u64(variant.seed);
    let t3 = StudentsT::new(0.0, 1.0, 3.0).map_err(|e| QmgmError::Numerical(e.to_string()))?;
    let std_normal = Normal::new(0.0, 1.0).map_err(|e| QmgmError::Numerical(e.to_string()))?;
    let mut cols = vec![Vec::with_capacity(n); 10];
    for _ in 0..n {
        let u: Vec<f64> = (0..10).map(|_| open_unit(&mut rng)).collect();
        let du6 = rng.gen_range(1..=3) as f64;
        let du8 = rng.gen_range(1..=3) as f64;
        let du9 = rng.gen_range(1..=5) as f64;

        let y1 = t3.inverse_cdf(u[0]);
        let y2 = -0.5 * u[1] * u[1] * (y1 + 3.0);
        let shape3 = y1.abs() + 0.1;
        let gamma = Gamma::new(shape3, 2.0).map_err(|e| QmgmError::Numerical(e.to_string()))?;
        let y3 = y1 + gamma.inverse_cdf(u[2]);
        let sigma4 = (y3 + 5.0).abs().sqrt();
        let y4 = 0.1 * (y3 + 5.0).powi(2) * sigma4 * std_normal.inverse_cdf(u[3]);
        let sigma5 = 0.1 + 0.1 * y1.abs();
        let y5 = 2.0 * (std::f64::consts::PI * y1 / 4.0).cos() * (u[4] - 0.5) * (y1 + 2.0)
            + sigma5 * std_normal.inverse_cdf(u[4]);
        let y6 = ((u[5] + 0.5) * y1.abs()).floor() + du6;
        let rate7 = (y3 + 5.0).abs().powf(-0.5) + ((y5.abs() + 1.0).ln()).abs();
        let y7 = match variant.kind {
            DgpKind::Main => poisson_quantile(u[6], rate7),
            DgpKind::Binary => {
                let prob = 1.0 / (1.0 + (-2.0 - (y3 + 5.0).abs().powf(-0.5) + (y5.abs() + 1.0).ln().abs()).exp());
                bernoulli_quantile(u[6], prob)
            }
        };
        let y8 = (u[7] * y7 + (y2 + 0.5).abs().powf(1.3)).floor() + du8 * (1.0 + y5.abs()).floor();
        let y9 = (1.0 + u[8] * y8).floor() + du9;
        let y10 = match variant.kind {
            DgpKind::Main => poisson_quantile(u[9], (0.8 * u[9] * (y9 + 0.1).abs().ln()).exp()),
            DgpKind::Binary => {
                let prob = 1.0 / (1.0 + (-3.0 - 0.8 * u[9] * (y9 + 0.1).abs().ln()).exp());
                bernoulli_quantile(u[9], prob)
            }
        };
        for (c, v) in cols.iter_mut().zip([y1, y2, y3, y4, y5, y6, y7, y8, y9, y10]) {
            c.push(v);
        }
    }
    let dataset = Dataset::new(schema(variant.kind), cols)?;
    Ok((dataset, true_graph()))
}

/// Independent columns: `continuous` standard normals followed by `count`
/// Poisson(3) columns. The true graph is empty.
pub fn generate_independent(continuous: usize, count: usize, n: usize, seed: u64) -> Result<(Dataset, EstimatedGraph)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).map_err(|e| QmgmError::Numerical(e.to_string()))?;
    let mut schema = Vec::new();
    let mut cols = Vec::new();
    for c in 0..continuous {
        schema.push(VariableSpec::new(format!("X{}", c + 1), VariableKind::Continuous));
        cols.push((0..n).map(|_| std_normal.inverse_cdf(open_unit(&mut rng))).collect());
    }
    for c in 0..count {
        schema.push(VariableSpec::new(format!("Z{}", c + 1), VariableKind::Count));
        cols.push((0..n).map(|_| poisson_quantile(open_unit(&mut rng), 3.0)).collect());
    }
    let p = continuous + count;
    Ok((Dataset::new(schema, cols)?, EstimatedGraph::empty(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn truth_has_twelve_edges() {
        let g = true_graph();
        g.check_invariants().unwrap();
        assert_eq!(g.edge_count(), 12);
        assert_eq!(g.degree(0), 4);
    }

    #[test]
    fn poisson_quantile_matches_statrs() {
        for rate in [0.3, 1.0, 4.5, 20.0] {
            let d = Poisson::new(rate).unwrap();
            for u in [0.01, 0.2, 0.5, 0.77, 0.99] {
                let q = poisson_quantile(u, rate);
                assert!(d.cdf(q as u64) >= u);
                if q > 0.0 {
                    assert!(d.cdf(q as u64 - 1) < u);
                }
            }
        }
        assert!(poisson_quantile(0.5, 2000.0) > 1900.0);
    }

    #[test]
    fn bernoulli_quantile_rule() {
        assert_eq!(bernoulli_quantile(0.2, 0.7), 0.0);
        assert_eq!(bernoulli_quantile(0.31, 0.7), 1.0);
    }

    #[test]
    fn same_seed_same_sample() {
        let v = DgpVariant::new(DgpKind::Main, 200, 42).unwrap();
        let (a, _) = generate_sample(&v).unwrap();
        let (b, _) = generate_sample(&v).unwrap();
        for j in 0..10 {
            let bits_a: Vec<u64> = a.column(j).iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u64> = b.column(j).iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        let (c, _) = generate_sample(&DgpVariant::new(DgpKind::Main, 200, 43).unwrap()).unwrap();
        assert_ne!(a.column(0), c.column(0));
    }

    #[test]
    fn discrete_columns_are_integers() {
        for kind in [DgpKind::Main, DgpKind::Binary] {
            let (d, _) = generate_sample(&DgpVariant::new(kind, 500, 1).unwrap()).unwrap();
            for j in 5..10 {
                assert!(d.column(j).iter().all(|v| v.fract() == 0.0 && *v >= 0.0), "column {j}");
            }
            assert!(d.column(5).iter().all(|&v| v >= 1.0));
            d.validate_and_standardize().unwrap();
        }
        let (b, _) = generate_sample(&DgpVariant::new(DgpKind::Binary, 1000, 2).unwrap()).unwrap();
        assert!(b.column(6).iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(b.column(9).iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn student_t_moments() {
        let (d, _) = generate_sample(&DgpVariant::new(DgpKind::Main, 50_000, 5).unwrap()).unwrap();
        let y = d.column(0);
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        // t3 has infinite fourth moment, so the variance check is loose by nature
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert_abs_diff_eq!(mean, 0.0, epsilon = 0.05);
        assert!((var - 3.0).abs() / 3.0 < 0.05 || (var - 3.0).abs() < 0.3, "var {var}");
    }

    #[test]
    fn rejects_tiny_samples() {
        assert!(DgpVariant::new(DgpKind::Main, 5, 0).is_err());
    }
}
