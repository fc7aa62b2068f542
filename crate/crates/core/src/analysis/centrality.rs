//! Degree, betweenness and closeness centrality on estimated graphs.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::EstimatedGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityReport {
    pub degree: Vec<usize>,
    /// Unnormalized; each unordered pair counted once.
    pub betweenness: Vec<f64>,
    /// Reachable-node count over the distance sum; 0 for isolated nodes.
    pub closeness: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EdgeLength {
    /// Every edge has length 1.
    #[default]
    Unit,
    /// Length `1 / strength`.
    InverseStrength,
}

struct ShortestPaths {
    order: Vec<usize>,
    preds: Vec<Vec<usize>>,
    sigma: Vec<f64>,
    dist: Vec<f64>,
}

fn neighbors(g: &EstimatedGraph, v: usize) -> impl Iterator<Item = usize> + '_ {
    (0..g.p()).filter(move |&w| w != v && g.has_edge(v, w))
}

fn bfs(g: &EstimatedGraph, s: usize) -> ShortestPaths {
    let p = g.p();
    let mut sp = ShortestPaths { order: Vec::new(), preds: vec![Vec::new(); p], sigma: vec![0.0; p], dist: vec![f64::INFINITY; p] };
    sp.sigma[s] = 1.0;
    sp.dist[s] = 0.0;
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        sp.order.push(v);
        for w in neighbors(g, v) {
            if sp.dist[w].is_infinite() {
                sp.dist[w] = sp.dist[v] + 1.0;
                queue.push_back(w);
            }
            if sp.dist[w] == sp.dist[v] + 1.0 {
                sp.sigma[w] += sp.sigma[v];
                sp.preds[w].push(v);
            }
        }
    }
    sp
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    // min-heap on distance, then node index
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

fn dijkstra(g: &EstimatedGraph, s: usize) -> ShortestPaths {
    const REL: f64 = 1e-12;
    let p = g.p();
    let mut sp = ShortestPaths { order: Vec::new(), preds: vec![Vec::new(); p], sigma: vec![0.0; p], dist: vec![f64::INFINITY; p] };
    let mut done = vec![false; p];
    sp.sigma[s] = 1.0;
    sp.dist[s] = 0.0;
    let mut heap = BinaryHeap::from([Item(0.0, s)]);
    while let Some(Item(d, v)) = heap.pop() {
        if done[v] || d > sp.dist[v] {
            continue;
        }
        done[v] = true;
        sp.order.push(v);
        for w in neighbors(g, v) {
            let alt = d + 1.0 / g.strength(v, w);
            let tol = REL * alt.max(1.0);
            if alt < sp.dist[w] - tol {
                sp.dist[w] = alt;
                sp.sigma[w] = sp.sigma[v];
                sp.preds[w] = vec![v];
                heap.push(Item(alt, w));
            } else if (alt - sp.dist[w]).abs() <= tol && !done[w] {
                sp.sigma[w] += sp.sigma[v];
                sp.preds[w].push(v);
            }
        }
    }
    sp
}

pub fn centrality(graph: &EstimatedGraph, length: EdgeLength) -> CentralityReport {
    let p = graph.p();
    let degree = (0..p).map(|v| graph.degree(v)).collect();
    let mut betweenness = vec![0.0; p];
    let mut closeness = vec![0.0; p];
    for s in 0..p {
        let sp = match length {
            EdgeLength::Unit => bfs(graph, s),
            EdgeLength::InverseStrength => dijkstra(graph, s),
        };
        let reached: Vec<f64> = sp.order.iter().filter(|&&v| v != s).map(|&v| sp.dist[v]).collect();
        let total: f64 = reached.iter().sum();
        if total > 0.0 {
            closeness[s] = reached.len() as f64 / total;
        }
        let mut delta = vec![0.0; p];
        for &w in sp.order.iter().rev() {
            for &v in &sp.preds[w] {
                delta[v] += sp.sigma[v] / sp.sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                betweenness[w] += delta[w];
            }
        }
    }
    for b in &mut betweenness {
        *b /= 2.0;
    }
    CentralityReport { degree, betweenness, closeness }
}
