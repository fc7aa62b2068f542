//! Edge-recovery metrics and ROC summaries.

use serde::{Deserialize, Serialize};

use crate::error::{QmgmError, Result};
use crate::model::EstimatedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn between(truth: &EstimatedGraph, estimate: &EstimatedGraph) -> Result<Self> {
        if truth.p() != estimate.p() {
            return Err(QmgmError::Dimension(format!(
                "truth has {} nodes, estimate has {}",
                truth.p(),
                estimate.p()
            )));
        }
        let mut c = Confusion::default();
        let p = truth.p();
        for a in 0..p {
            for b in a + 1..p {
                match (truth.has_edge(a, b), estimate.has_edge(a, b)) {
                    (true, true) => c.tp += 1,
                    (false, true) => c.fp += 1,
                    (false, false) => c.tn += 1,
                    (true, false) => c.fn_ += 1,
                }
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Metrics with an empty denominator are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub precision: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
    pub mcc: f64,
    pub accuracy: f64,
}

impl RecoveryMetrics {
    pub const NAMES: [&'static str; 6] = ["precision", "tpr", "fpr", "f1", "mcc", "accuracy"];

    pub fn from_confusion(c: &Confusion) -> Self {
        let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
        let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        Self {
            precision: ratio(tp, tp + fp),
            tpr: ratio(tp, tp + fn_),
            fpr: ratio(fp, fp + tn),
            f1: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
            mcc: ratio(tp * tn - fp * fn_, mcc_den),
            accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        }
    }

    pub fn values(&self) -> [f64; 6] {
        [self.precision, self.tpr, self.fpr, self.f1, self.mcc, self.accuracy]
    }
}

pub fn confusion_metrics(truth: &EstimatedGraph, estimate: &EstimatedGraph) -> Result<RecoveryMetrics> {
    Ok(RecoveryMetrics::from_confusion(&Confusion::between(truth, estimate)?))
}

/// How ROC points are joined before integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RocEnvelope {
    /// Running maximum of TPR over increasing FPR.
    #[default]
    CumulativeMax,
    /// Upper concave hull of the points.
    ConcaveHull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` envelope vertices including `(0,0)` and `(1,1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// ROC over a path of estimated graphs.
pub fn roc_curve(truth: &EstimatedGraph, path: &[EstimatedGraph], envelope: RocEnvelope) -> Result<RocCurve> {
    let mut pts = vec![(0.0, 0.0), (1.0, 1.0)];
    for g in path {
        let m = confusion_metrics(truth, g)?;
        pts.push((m.fpr, m.tpr));
    }
    Ok(roc_from_points(pts, envelope))
}

pub fn roc_from_points(mut pts: Vec<(f64, f64)>, envelope: RocEnvelope) -> RocCurve {
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    let points = match envelope {
        RocEnvelope::CumulativeMax => {
            let mut best = 0.0f64;
            pts.into_iter()
                .map(|(f, t)| {
                    best = best.max(t);
                    (f, best)
                })
                .collect()
        }
        RocEnvelope::ConcaveHull => {
            let mut hull: Vec<(f64, f64)> = Vec::new();
            for p in pts {
                while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) >= 0.0 {
                    hull.pop();
                }
                hull.push(p);
            }
            hull
        }
    };
    let auc = trapezoid(&points);
    RocCurve { points, auc }
}

/// Fraction of the `p(p-1)/2` node pairs on which two graphs disagree.
pub fn hamming_distance(a: &EstimatedGraph, b: &EstimatedGraph) -> Result<f64> {
    let c = Confusion::between(a, b)?;
    let total = c.total();
    if total == 0 {
        return Ok(0.0);
    }
    Ok((c.fp + c.fn_) as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn graph(p: usize, edges: &[(usize, usize)]) -> EstimatedGraph {
        EstimatedGraph::from_edges(p, edges)
    }

    #[test]
    fn worked_confusion_example() {
        let c = Confusion { tp: 2, fp: 1, tn: 3, fn_: 1 };
        let m = RecoveryMetrics::from_confusion(&c);
        assert_abs_diff_eq!(m.precision, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.tpr, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.fpr, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(m.mcc, 5.0 / 12.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.accuracy, 5.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_estimate_has_zero_precision() {
        let m = confusion_metrics(&graph(4, &[(0, 1)]), &EstimatedGraph::empty(4)).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.mcc, 0.0);
        assert_eq!(m.tpr, 0.0);
    }

    #[test]
    fn perfect_ranking_has_unit_auc() {
        let truth = graph(5, &[(0, 1), (1, 2), (2, 3)]);
        let path = vec![
            EstimatedGraph::empty(5),
            graph(5, &[(0, 1)]),
            graph(5, &[(0, 1), (1, 2), (2, 3)]),
            truth.complement().complement(),
        ];
        for env in [RocEnvelope::CumulativeMax, RocEnvelope::ConcaveHull] {
            assert_abs_diff_eq!(roc_curve(&truth, &path, env).unwrap().auc, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn diagonal_is_half() {
        let pts: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64 / 10.0, i as f64 / 10.0)).collect();
        assert_abs_diff_eq!(roc_from_points(pts, RocEnvelope::CumulativeMax).auc, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn running_max_can_drop_after_adding_a_low_point() {
        let base = vec![(0.5, 0.5)];
        let mut more = base.clone();
        more.push((0.6, 0.0));
        let a = roc_from_points(base.clone(), RocEnvelope::CumulativeMax).auc;
        let b = roc_from_points(more.clone(), RocEnvelope::CumulativeMax).auc;
        assert!(b < a);
        let ha = roc_from_points(base, RocEnvelope::ConcaveHull).auc;
        let hb = roc_from_points(more, RocEnvelope::ConcaveHull).auc;
        assert!(hb >= ha);
    }

    #[test]
    fn hamming_examples() {
        let a = graph(4, &[(0, 1), (2, 3)]);
        let b = graph(4, &[(0, 1), (1, 2)]);
        assert_abs_diff_eq!(hamming_distance(&a, &b).unwrap(), 2.0 / 6.0, epsilon = 1e-15);
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0.0);
        assert!(hamming_distance(&a, &EstimatedGraph::empty(5)).is_err());
    }

    fn arb_graph(p: usize) -> impl Strategy<Value = EstimatedGraph> {
        proptest::collection::vec(any::<bool>(), p * (p - 1) / 2).prop_map(move |bits| {
            let mut edges = Vec::new();
            let mut k = 0;
            for a in 0..p {
                for b in a + 1..p {
                    if bits[k] {
                        edges.push((a, b));
                    }
                    k += 1;
                }
            }
            EstimatedGraph::from_edges(p, &edges)
        })
    }

    proptest! {
        #[test]
        fn metrics_are_bounded(p in 2usize..8, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut mk = || {
                let mut e = Vec::new();
                for a in 0..p { for b in a + 1..p { if rng.gen_bool(0.4) { e.push((a, b)); } } }
                EstimatedGraph::from_edges(p, &e)
            };
            let (t, e) = (mk(), mk());
            let m = confusion_metrics(&t, &e).unwrap();
            for v in [m.precision, m.tpr, m.fpr, m.f1, m.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!((-1.0..=1.0).contains(&m.mcc));
        }

        #[test]
        fn hull_auc_never_drops_when_a_graph_is_added(
            truth in arb_graph(6),
            path in proptest::collection::vec(arb_graph(6), 0..6),
            extra in arb_graph(6),
        ) {
            let before = roc_curve(&truth, &path, RocEnvelope::ConcaveHull).unwrap().auc;
            let mut longer = path.clone();
            longer.push(extra);
            let after = roc_curve(&truth, &longer, RocEnvelope::ConcaveHull).unwrap().auc;
            prop_assert!(after >= before - 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&after));
        }

        #[test]
        fn hamming_is_a_metric(a in arb_graph(5), b in arb_graph(5), c in arb_graph(5)) {
            let ab = hamming_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, hamming_distance(&b, &a).unwrap());
            prop_assert!(ab <= hamming_distance(&a, &c).unwrap() + hamming_distance(&c, &b).unwrap() + 1e-15);
        }
    }
}
