//! Graph documents and Graphviz export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QmgmError, Result};
use crate::model::{EdgeProvenance, EdgeSign, EstimatedGraph, VariableKind};

pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    /// Node indices with `source < target`.
    pub source: usize,
    pub target: usize,
    pub strength: f64,
    pub sign: EdgeSign,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<EdgeProvenance>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitMetadata {
    pub learner: String,
    pub tau_grid: Vec<f64>,
    pub lambda: Option<f64>,
    pub criterion: Option<String>,
    pub nonzero_tolerance: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub version: u32,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
    pub fit: FitMetadata,
}

impl GraphDocument {
    pub fn from_graph(graph: &EstimatedGraph, nodes: Vec<NodeRecord>, fit: FitMetadata) -> Result<Self> {
        if nodes.len() != graph.p() {
            return Err(QmgmError::Dimension(format!("{} node records for a graph on {} nodes", nodes.len(), graph.p())));
        }
        let edges = graph
            .edges()
            .map(|(a, b)| EdgeRecord {
                source: a,
                target: b,
                strength: graph.strength(a, b),
                sign: graph.sign(a, b),
                provenance: graph.provenance(a, b),
            })
            .collect();
        Ok(Self { version: DOCUMENT_VERSION, nodes, edges, fit })
    }

    pub fn to_graph(&self) -> Result<EstimatedGraph> {
        let p = self.nodes.len();
        let mut g = EstimatedGraph::empty(p);
        for e in &self.edges {
            if e.source >= p || e.target >= p || e.source == e.target {
                return Err(QmgmError::Document(format!("edge ({}, {}) is out of range", e.source, e.target)));
            }
            if !(e.strength > 0.0) || !e.strength.is_finite() {
                return Err(QmgmError::Document(format!("edge ({}, {}) has strength {}", e.source, e.target, e.strength)));
            }
            g.set_edge(e.source, e.target, e.strength, e.sign, e.provenance);
        }
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.version != DOCUMENT_VERSION {
            return Err(QmgmError::Document(format!("unsupported document version {}", doc.version)));
        }
        doc.to_graph()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_dot(&self) -> String {
        const PALETTE: [&str; 8] =
            ["#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3", "#fdb462", "#b3de69", "#fccde5"];
        let mut domains: Vec<&str> = Vec::new();
        for n in &self.nodes {
            if let Some(d) = n.domain.as_deref() {
                if !domains.contains(&d) {
                    domains.push(d);
                }
            }
        }
        let max_strength = self.edges.iter().map(|e| e.strength).fold(0.0, f64::max);
        let mut s = String::from("graph qmgm {\n  node [style=filled];\n");
        for n in &self.nodes {
            let fill = n
                .domain
                .as_deref()
                .and_then(|d| domains.iter().position(|x| *x == d))
                .map_or("#ffffff", |i| PALETTE[i % PALETTE.len()]);
            let shape = if n.kind.is_discrete() { "box" } else { "ellipse" };
            let _ = writeln!(s, "  \"{}\" [shape={shape}, fillcolor=\"{fill}\"];", escape(&n.name));
        }
        for e in &self.edges {
            let color = match e.sign {
                EdgeSign::Positive => "green",
                EdgeSign::Negative => "red",
                EdgeSign::Undefined | EdgeSign::Absent => "grey",
            };
            let width = if max_strength > 0.0 { 0.5 + 4.5 * e.strength / max_strength } else { 1.0 };
            let _ = writeln!(
                s,
                "  \"{}\" -- \"{}\" [color={color}, penwidth={width:.3}];",
                escape(&self.nodes[e.source].name),
                escape(&self.nodes[e.target].name)
            );
        }
        s.push_str("}\n");
        s
    }
}

fn escape(name: &str) -> String {
    name.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    JsonDoc,
    Dot,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "json" | "json-doc" => Some(ExportFormat::JsonDoc),
            "dot" => Some(ExportFormat::Dot),
            _ => None,
        }
    }
}

pub fn export_graph(doc: &GraphDocument, format: ExportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ExportFormat::JsonDoc => doc.to_json()?,
        ExportFormat::Dot => doc.to_dot(),
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(p: usize) -> Vec<NodeRecord> {
        (0..p)
            .map(|i| NodeRecord {
                name: format!("v{i}"),
                kind: if i % 2 == 0 { VariableKind::Continuous } else { VariableKind::Count },
                domain: (i < 2).then(|| "a".to_string()),
            })
            .collect()
    }

    fn sample_graph() -> EstimatedGraph {
        let mut g = EstimatedGraph::empty(4);
        g.set_edge(0, 1, 0.123456789, EdgeSign::Positive, Some(EdgeProvenance { tau: 0.875, response: 1, predictor: 0 }));
        g.set_edge(1, 3, 1.0 / 3.0, EdgeSign::Negative, None);
        g.set_edge(2, 3, 2.0, EdgeSign::Undefined, None);
        g
    }

    #[test]
    fn json_round_trip_is_identical() {
        let fit = FitMetadata { learner: "qmgm7".into(), tau_grid: vec![0.125, 0.5], lambda: Some(0.01), ..Default::default() };
        let doc = GraphDocument::from_graph(&sample_graph(), nodes(4), fit).unwrap();
        let text = doc.to_json().unwrap();
        let back = GraphDocument::from_json(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.to_graph().unwrap(), sample_graph());
    }

    #[test]
    fn empty_graph_document() {
        let doc = GraphDocument::from_graph(&EstimatedGraph::empty(3), nodes(3), FitMetadata::default()).unwrap();
        assert!(doc.edges.is_empty());
        assert_eq!(GraphDocument::from_json(&doc.to_json().unwrap()).unwrap(), doc);
        assert!(doc.to_dot().ends_with("}\n"));
    }

    #[test]
    fn dot_encodes_sign_and_width() {
        let doc = GraphDocument::from_graph(&sample_graph(), nodes(4), FitMetadata::default()).unwrap();
        let dot = doc.to_dot();
        assert!(dot.contains("\"v2\" -- \"v3\" [color=grey, penwidth=5.000]"));
        assert!(dot.contains("\"v0\" -- \"v1\" [color=green"));
        assert!(dot.contains("\"v1\" -- \"v3\" [color=red"));
        assert!(dot.contains("\"v0\" [shape=ellipse, fillcolor=\"#8dd3c7\"]"));
        assert!(dot.contains("\"v3\" [shape=box, fillcolor=\"#ffffff\"]"));
    }

    #[test]
    fn rejects_broken_documents() {
        let doc = GraphDocument::from_graph(&sample_graph(), nodes(4), FitMetadata::default()).unwrap();
        let mut bad = doc.clone();
        bad.edges[0].target = 9;
        assert!(GraphDocument::from_json(&bad.to_json().unwrap()).is_err());
        let mut old = doc;
        old.version = 0;
        assert!(GraphDocument::from_json(&old.to_json().unwrap()).is_err());
        assert!(GraphDocument::from_graph(&sample_graph(), nodes(3), FitMetadata::default()).is_err());
    }
}
