//! The thought graph: one central node for the question stem, one node per
//! option, and per path an exclusion node, one verdict node per option and an
//! answer node.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ReasoningPath;
use crate::model::{format_labels, McqInstance};
use crate::parser::Verdict;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    Central,
    Option {
        option: usize,
    },
    Exclusion {
        path: usize,
    },
    Verdict {
        path: usize,
        option: usize,
        verdict: Verdict,
    },
    Answer {
        path: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    #[serde(flatten)]
    pub kind: NodeKind,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub paths: Vec<ReasoningPath>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph needs at least one path")]
    NoPaths,
    #[error("duplicate path id {0}")]
    DuplicatePathId(usize),
    #[error("path {path} has {got} verdicts for {m} options")]
    VerdictCount { path: usize, got: usize, m: usize },
    #[error("path {0} answers an option outside the instance")]
    AnswerOutOfRange(usize),
}

/// Expected node count for `m` options and `k` paths.
pub fn node_count(m: usize, k: usize) -> usize {
    1 + m + k * (m + 2)
}

pub fn build_graph(
    instance: &McqInstance,
    paths: &[ReasoningPath],
) -> Result<ThoughtGraph, GraphError> {
    if paths.is_empty() {
        return Err(GraphError::NoPaths);
    }
    let m = instance.num_options();
    let mut seen = BTreeSet::new();
    for p in paths {
        if !seen.insert(p.path_id) {
            return Err(GraphError::DuplicatePathId(p.path_id));
        }
        if p.a2.len() != m || p.a2.keys().any(|&i| i >= m) {
            return Err(GraphError::VerdictCount {
                path: p.path_id,
                got: p.a2.len(),
                m,
            });
        }
        if p.a3.iter().any(|&i| i >= m) {
            return Err(GraphError::AnswerOutOfRange(p.path_id));
        }
    }

    let mut nodes = Vec::with_capacity(node_count(m, paths.len()));
    let mut edges = Vec::new();
    let mut add = |kind: NodeKind, text: String| {
        let id = nodes.len();
        nodes.push(Node { id, kind, text });
        id
    };

    let central = add(NodeKind::Central, instance.question().to_string());
    let option_nodes: Vec<usize> = instance
        .options()
        .iter()
        .enumerate()
        .map(|(i, text)| add(NodeKind::Option { option: i }, text.clone()))
        .collect();
    for &o in &option_nodes {
        edges.push(Edge {
            from: central,
            to: o,
        });
    }

    for p in paths {
        let exclusion = add(
            NodeKind::Exclusion { path: p.path_id },
            p.a1.raw_text.clone(),
        );
        edges.push(Edge {
            from: central,
            to: exclusion,
        });
        let verdicts: Vec<usize> =
            p.a2.iter()
                .map(|(&i, v)| {
                    let id = add(
                        NodeKind::Verdict {
                            path: p.path_id,
                            option: i,
                            verdict: v.verdict,
                        },
                        v.raw_text.clone(),
                    );
                    edges.push(Edge {
                        from: option_nodes[i],
                        to: id,
                    });
                    edges.push(Edge {
                        from: exclusion,
                        to: id,
                    });
                    id
                })
                .collect();
        let answer = add(NodeKind::Answer { path: p.path_id }, format_labels(&p.a3));
        for v in verdicts {
            edges.push(Edge {
                from: v,
                to: answer,
            });
        }
    }

    Ok(ThoughtGraph {
        nodes,
        edges,
        paths: paths.to_vec(),
    })
}

impl ThoughtGraph {
    pub fn central(&self) -> Vec<&Node> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Central)
            .collect()
    }

    pub fn option_nodes(&self) -> Vec<&Node> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Option { .. }))
            .collect()
    }

    /// Option indices reached by walking backwards from the answer node of
    /// `path_id` through its verdict nodes to the option nodes. One entry per
    /// verdict node visited.
    pub fn trace_path_options(&self, path_id: usize) -> Vec<usize> {
        let Some(answer) = self
            .nodes
            .iter()
            .find(|n| n.kind == NodeKind::Answer { path: path_id })
        else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for e in self.edges.iter().filter(|e| e.to == answer.id) {
            for e2 in self.edges.iter().filter(|e2| e2.to == e.from) {
                if let NodeKind::Option { option } = self.nodes[e2.from].kind {
                    out.push(option);
                }
            }
        }
        out
    }
}
