//! Relation graph over scene objects and anchor selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::model::{RelationTriple, SceneObject};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("DANGLING_EDGE: triple {index} ({subject} -> {object}) references an object outside 0..{node_count}")]
    DanglingEdge {
        index: usize,
        subject: usize,
        object: usize,
        node_count: usize,
    },
    #[error("EMPTY_GRAPH: cannot select an anchor without nodes")]
    EmptyGraph,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub subject_id: usize,
    pub predicate: String,
    pub object_id: usize,
}

/// Directed multigraph; degree counts each incident edge once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    node_ids: Vec<usize>,
    edges: Vec<Edge>,
    adjacency: BTreeMap<usize, Vec<usize>>,
}

impl SceneGraph {
    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Neighbor multiset, one entry per incident edge.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        self.adjacency.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors(node).len()
    }

    /// Graphviz rendering for debugging.
    pub fn to_dot(&self, objects: &[SceneObject]) -> String {
        let mut out = String::from("digraph scene {\n");
        for &id in &self.node_ids {
            let label = objects
                .get(id)
                .map(|o| format!("{}: {} [{}]", id, o.caption, o.category))
                .unwrap_or_else(|| id.to_string());
            let _ = writeln!(out, "  n{id} [label={}];", dot_quote(&label));
        }
        for edge in &self.edges {
            let _ = writeln!(
                out,
                "  n{} -> n{} [label={}];",
                edge.subject_id,
                edge.object_id,
                dot_quote(&edge.predicate)
            );
        }
        out.push_str("}\n");
        out
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Nodes are the object indices, edges the triples as given.
pub fn build_graph(objects: &[SceneObject], triples: &[RelationTriple]) -> Result<SceneGraph, GraphError> {
    build_graph_for(objects.len(), triples)
}

pub fn build_graph_for(node_count: usize, triples: &[RelationTriple]) -> Result<SceneGraph, GraphError> {
    let node_ids: Vec<usize> = (0..node_count).collect();
    let mut adjacency: BTreeMap<usize, Vec<usize>> = node_ids.iter().map(|&id| (id, Vec::new())).collect();
    let mut edges = Vec::with_capacity(triples.len());
    for (index, t) in triples.iter().enumerate() {
        if t.subject_id >= node_count || t.object_id >= node_count {
            return Err(GraphError::DanglingEdge {
                index,
                subject: t.subject_id,
                object: t.object_id,
                node_count,
            });
        }
        adjacency.get_mut(&t.subject_id).expect("node exists").push(t.object_id);
        adjacency.get_mut(&t.object_id).expect("node exists").push(t.subject_id);
        edges.push(Edge {
            subject_id: t.subject_id,
            predicate: t.predicate.clone(),
            object_id: t.object_id,
        });
    }
    Ok(SceneGraph {
        node_ids,
        edges,
        adjacency,
    })
}

/// Maximum-degree node; ties go to the smallest index.
pub fn select_anchor(graph: &SceneGraph) -> Result<usize, GraphError> {
    let mut best: Option<(usize, usize)> = None;
    for &node in &graph.node_ids {
        let degree = graph.degree(node);
        match best {
            Some((_, best_degree)) if degree <= best_degree => {}
            _ => best = Some((node, degree)),
        }
    }
    best.map(|(node, _)| node).ok_or(GraphError::EmptyGraph)
}
