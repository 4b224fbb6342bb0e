//! Node labels and feature vectors.
//!
//! A node's label is its mapped node type; its feature vector is the in/out
//! edge-type count histogram of length `2 * n_edge_types`: slot `i < N_e`
//! counts in-edges of mapped type `i`, slot `N_e + i` counts out-edges of
//! mapped type `i`.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{MemGraph, NodeId, Subgraph};

/// Dense, injective maps from type strings to integers, frozen after
/// training begins. Unseen types at execution time are an explicit error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeMaps {
    node_types: Vec<String>,
    edge_types: Vec<String>,
    #[serde(skip)]
    node_index: HashMap<String, usize>,
    #[serde(skip)]
    edge_index: HashMap<String, usize>,
}

impl TypeMaps {
    /// Builds maps by first-appearance order over the graphs' edges in
    /// edge_id order, then over nodes in dense-id order (catches isolated
    /// nodes). Deterministic across runs.
    pub fn build(graphs: &[&MemGraph]) -> TypeMaps {
        let mut maps = TypeMaps {
            node_types: Vec::new(),
            edge_types: Vec::new(),
            node_index: HashMap::new(),
            edge_index: HashMap::new(),
        };
        for g in graphs {
            for e in g.edges() {
                maps.intern_node_type(g.node_type(e.src));
                maps.intern_node_type(g.node_type(e.dst));
                maps.intern_edge_type(&e.edge_type);
            }
            for v in 0..g.node_count() {
                maps.intern_node_type(g.node_type(v as NodeId));
            }
        }
        maps
    }

    fn intern_node_type(&mut self, t: &str) -> usize {
        if let Some(&i) = self.node_index.get(t) {
            return i;
        }
        let i = self.node_types.len();
        self.node_types.push(t.to_string());
        self.node_index.insert(t.to_string(), i);
        i
    }

    fn intern_edge_type(&mut self, t: &str) -> usize {
        if let Some(&i) = self.edge_index.get(t) {
            return i;
        }
        let i = self.edge_types.len();
        self.edge_types.push(t.to_string());
        self.edge_index.insert(t.to_string(), i);
        i
    }

    /// Restores the lookup tables after deserialization.
    pub fn rebuild_index(&mut self) {
        self.node_index = self
            .node_types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        self.edge_index = self
            .edge_types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn n_node_types(&self) -> usize {
        self.node_types.len()
    }

    pub fn n_edge_types(&self) -> usize {
        self.edge_types.len()
    }

    pub fn feature_len(&self) -> usize {
        2 * self.edge_types.len()
    }

    pub fn node_type_id(&self, t: &str) -> Result<usize> {
        self.node_index.get(t).copied().ok_or(Error::UnknownType {
            kind: "node",
            name: t.to_string(),
        })
    }

    pub fn edge_type_id(&self, t: &str) -> Result<usize> {
        self.edge_index.get(t).copied().ok_or(Error::UnknownType {
            kind: "edge",
            name: t.to_string(),
        })
    }

    pub fn node_type_name(&self, id: usize) -> &str {
        &self.node_types[id]
    }

    pub fn edge_type_name(&self, id: usize) -> &str {
        &self.edge_types[id]
    }

    /// Hash binding a model to the maps it was trained under.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.node_types {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for t in &self.edge_types {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeFeature {
    pub label: usize,
    pub vector: Vec<u32>,
}

/// Features for every node of the graph, counted over all of its edges.
pub fn extract_features(graph: &MemGraph, maps: &TypeMaps) -> Result<Vec<NodeFeature>> {
    let ne = maps.n_edge_types();
    let mut table: Vec<Vec<u32>> = vec![vec![0; 2 * ne]; graph.node_count()];
    for e in graph.edges() {
        let t = maps.edge_type_id(&e.edge_type)?;
        table[e.dst as usize][t] += 1;
        table[e.src as usize][ne + t] += 1;
    }
    table
        .into_iter()
        .enumerate()
        .map(|(v, vector)| {
            Ok(NodeFeature {
                label: maps.node_type_id(graph.node_type(v as NodeId))?,
                vector,
            })
        })
        .collect()
}

/// Features counted over the subgraph's edges only, for its member nodes.
pub fn extract_subgraph_features(
    graph: &MemGraph,
    sub: &Subgraph,
    maps: &TypeMaps,
) -> Result<HashMap<NodeId, NodeFeature>> {
    let ne = maps.n_edge_types();
    let mut out: HashMap<NodeId, NodeFeature> = HashMap::new();
    for v in sub.members() {
        out.insert(
            v,
            NodeFeature {
                label: maps.node_type_id(graph.node_type(v))?,
                vector: vec![0; 2 * ne],
            },
        );
    }
    for &eid in &sub.edges {
        let e = &graph.edges()[eid];
        let t = maps.edge_type_id(&e.edge_type)?;
        if let Some(f) = out.get_mut(&e.dst) {
            f.vector[t] += 1;
        }
        if let Some(f) = out.get_mut(&e.src) {
            f.vector[ne + t] += 1;
        }
    }
    Ok(out)
}

/// Streaming feature table: two counter bumps per edge.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    ne: usize,
    vectors: Vec<Vec<u32>>,
}

impl FeatureTable {
    pub fn new(maps: &TypeMaps) -> Self {
        FeatureTable {
            ne: maps.n_edge_types(),
            vectors: Vec::new(),
        }
    }

    fn ensure(&mut self, v: NodeId) {
        let need = v as usize + 1;
        if self.vectors.len() < need {
            self.vectors.resize(need, vec![0; 2 * self.ne]);
        }
    }

    /// Applies one edge: bumps the src out-slot and dst in-slot.
    pub fn apply_edge(&mut self, src: NodeId, dst: NodeId, edge_type_id: usize) {
        self.ensure(src);
        self.ensure(dst);
        self.vectors[dst as usize][edge_type_id] += 1;
        self.vectors[src as usize][self.ne + edge_type_id] += 1;
    }

    pub fn vector(&self, v: NodeId) -> Option<&[u32]> {
        self.vectors.get(v as usize).map(|x| x.as_slice())
    }
}

/// Debug dump: `node_id \t label \t c0,c1,...` one node per line.
pub fn dump_features<W: Write>(
    w: &mut W,
    graph: &MemGraph,
    features: &[NodeFeature],
) -> std::io::Result<()> {
    for (v, f) in features.iter().enumerate() {
        let joined: Vec<String> = f.vector.iter().map(|c| c.to_string()).collect();
        writeln!(w, "{}\t{}\t{}", graph.node_name(v as NodeId), f.label, joined.join(","))?;
    }
    Ok(())
}
