//! In-memory provenance multigraph and neighborhood queries.
//!
//! Nodes are system entities keyed by opaque string ids and carry a single
//! type; edges are append-only, timestamped, and directed in information-flow
//! direction. Parallel edges are allowed.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type NodeId = u32;

/// One parsed line of the canonical edge-stream format:
/// `src_id \t src_type \t dst_id \t dst_type \t edge_type \t timestamp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeRecord {
    pub src: String,
    pub src_type: String,
    pub dst: String,
    pub dst_type: String,
    pub edge_type: String,
    pub timestamp: i64,
}

impl EdgeRecord {
    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end_matches('\n').split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::FormatError {
                line: line_no,
                msg: format!("expected 6 tab-separated fields, got {}", fields.len()),
            });
        }
        let timestamp = fields[5].parse::<i64>().map_err(|_| Error::FormatError {
            line: line_no,
            msg: format!("bad timestamp {:?}", fields[5]),
        })?;
        Ok(EdgeRecord {
            src: fields[0].to_string(),
            src_type: fields[1].to_string(),
            dst: fields[2].to_string(),
            dst_type: fields[3].to_string(),
            edge_type: fields[4].to_string(),
            timestamp,
        })
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.src, self.src_type, self.dst, self.dst_type, self.edge_type, self.timestamp
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub edge_type: String,
    pub timestamp: i64,
}

/// Directed typed multigraph held in memory. Edge ids are the positions in
/// `edges`, strictly increasing in arrival order.
#[derive(Debug, Clone, Default)]
pub struct MemGraph {
    names: Vec<String>,
    node_types: Vec<String>,
    index: HashMap<String, NodeId>,
    edges: Vec<Edge>,
    out_adj: Vec<Vec<NodeId>>,
    in_adj: Vec<Vec<NodeId>>,
}

impl MemGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_name(&self, v: NodeId) -> &str {
        &self.names[v as usize]
    }

    pub fn node_type(&self, v: NodeId) -> &str {
        &self.node_types[v as usize]
    }

    pub fn lookup(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    pub fn out_neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.out_adj[v as usize]
    }

    pub fn in_neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.in_adj[v as usize]
    }

    /// Registers a node, or checks type consistency if it already exists.
    pub fn intern_node(&mut self, name: &str, node_type: &str) -> Result<NodeId> {
        if let Some(&id) = self.index.get(name) {
            let existing = &self.node_types[id as usize];
            if existing != node_type {
                return Err(Error::TypeConflict {
                    node: name.to_string(),
                    existing: existing.clone(),
                    new: node_type.to_string(),
                });
            }
            return Ok(id);
        }
        let id = self.names.len() as NodeId;
        self.names.push(name.to_string());
        self.node_types.push(node_type.to_string());
        self.index.insert(name.to_string(), id);
        self.out_adj.push(Vec::new());
        self.in_adj.push(Vec::new());
        Ok(id)
    }

    /// Appends one edge, declaring endpoints on first appearance.
    /// Returns the new edge id.
    pub fn append(&mut self, rec: &EdgeRecord) -> Result<usize> {
        let src = self.intern_node(&rec.src, &rec.src_type)?;
        let dst = self.intern_node(&rec.dst, &rec.dst_type)?;
        let id = self.edges.len();
        self.edges.push(Edge {
            src,
            dst,
            edge_type: rec.edge_type.clone(),
            timestamp: rec.timestamp,
        });
        self.out_adj[src as usize].push(dst);
        self.in_adj[dst as usize].push(src);
        Ok(id)
    }

    pub fn append_internal(&mut self, src: NodeId, dst: NodeId, edge_type: &str, ts: i64) {
        self.edges.push(Edge {
            src,
            dst,
            edge_type: edge_type.to_string(),
            timestamp: ts,
        });
        self.out_adj[src as usize].push(dst);
        self.in_adj[dst as usize].push(src);
    }

    pub fn record_for(&self, edge_id: usize) -> EdgeRecord {
        let e = &self.edges[edge_id];
        EdgeRecord {
            src: self.names[e.src as usize].clone(),
            src_type: self.node_types[e.src as usize].clone(),
            dst: self.names[e.dst as usize].clone(),
            dst_type: self.node_types[e.dst as usize].clone(),
            edge_type: e.edge_type.clone(),
            timestamp: e.timestamp,
        }
    }

    fn check_node(&self, v: NodeId) -> Result<()> {
        if (v as usize) < self.names.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(format!("#{v}")))
        }
    }

    /// All nodes u with a directed path u -> ... -> v of length <= `hops`,
    /// excluding v itself.
    pub fn k_hop_ancestors(&self, v: NodeId, hops: usize) -> Result<HashSet<NodeId>> {
        self.check_node(v)?;
        Ok(self.bfs(&[v], hops, Direction::In))
    }

    /// Mirror of `k_hop_ancestors` along forward edges.
    pub fn k_hop_descendants(&self, v: NodeId, hops: usize) -> Result<HashSet<NodeId>> {
        self.check_node(v)?;
        Ok(self.bfs(&[v], hops, Direction::Out))
    }

    pub fn two_hop_ancestors(&self, v: NodeId) -> Result<HashSet<NodeId>> {
        self.k_hop_ancestors(v, 2)
    }

    pub fn two_hop_descendants(&self, v: NodeId) -> Result<HashSet<NodeId>> {
        self.k_hop_descendants(v, 2)
    }

    /// Bounded BFS from a seed set; the result excludes seed nodes unless
    /// they are reachable from another seed.
    pub fn bfs(&self, seeds: &[NodeId], hops: usize, dir: Direction) -> HashSet<NodeId> {
        let mut seen: HashSet<NodeId> = seeds.iter().copied().collect();
        let mut out = HashSet::new();
        let mut frontier: VecDeque<(NodeId, usize)> = seeds.iter().map(|&s| (s, 0)).collect();
        while let Some((v, d)) = frontier.pop_front() {
            if d == hops {
                continue;
            }
            let nbrs = match dir {
                Direction::In => &self.in_adj[v as usize],
                Direction::Out => &self.out_adj[v as usize],
            };
            for &u in nbrs {
                if seen.insert(u) {
                    out.insert(u);
                    frontier.push_back((u, d + 1));
                }
            }
        }
        out
    }

    /// Partitions all nodes into disjoint active sets of size <= `split_size`
    /// and attaches the 2-hop in-neighborhood of each as related context.
    pub fn build_training_subgraphs(&self, split_size: usize, seed: u64) -> Vec<Subgraph> {
        assert!(split_size >= 1);
        let mut ids: Vec<NodeId> = (0..self.node_count() as NodeId).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        ids.chunks(split_size)
            .map(|chunk| self.subgraph_around(chunk))
            .collect()
    }

    /// Subgraph with the given active set, its 2-hop in-neighborhood as
    /// related nodes, and all parent edges induced on active ∪ related.
    pub fn subgraph_around(&self, active: &[NodeId]) -> Subgraph {
        let active_set: HashSet<NodeId> = active.iter().copied().collect();
        let related: HashSet<NodeId> = self
            .bfs(active, 2, Direction::In)
            .into_iter()
            .filter(|v| !active_set.contains(v))
            .collect();
        let members: HashSet<NodeId> = active_set.union(&related).copied().collect();
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| members.contains(&e.src) && members.contains(&e.dst))
            .map(|(i, _)| i)
            .collect();
        let mut active_sorted: Vec<NodeId> = active_set.into_iter().collect();
        active_sorted.sort_unstable();
        let mut related_sorted: Vec<NodeId> = related.into_iter().collect();
        related_sorted.sort_unstable();
        Subgraph {
            active: active_sorted,
            related: related_sorted,
            edges,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
}

/// A bounded view over a parent graph: the nodes to train on or detect
/// (`active`), their context (`related`), and the induced edge ids.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub active: Vec<NodeId>,
    pub related: Vec<NodeId>,
    /// Edge ids into the parent graph, ascending.
    pub edges: Vec<usize>,
}

impl Subgraph {
    pub fn members(&self) -> Vec<NodeId> {
        let mut m = self.active.clone();
        m.extend_from_slice(&self.related);
        m.sort_unstable();
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(src: &str, st: &str, dst: &str, dt: &str, et: &str, ts: i64) -> EdgeRecord {
        EdgeRecord {
            src: src.into(),
            src_type: st.into(),
            dst: dst.into(),
            dst_type: dt.into(),
            edge_type: et.into(),
            timestamp: ts,
        }
    }

    #[test]
    fn append_to_empty_store() {
        let mut g = MemGraph::new();
        g.append(&rec("A", "process", "B", "file", "write", 5)).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn duplicate_record_gives_parallel_edges() {
        let mut g = MemGraph::new();
        let r = rec("A", "process", "B", "file", "write", 5);
        g.append(&r).unwrap();
        g.append(&r).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn type_conflict_is_rejected() {
        let mut g = MemGraph::new();
        g.append(&rec("A", "process", "B", "file", "write", 1)).unwrap();
        let err = g.append(&rec("A", "file", "C", "file", "write", 2)).unwrap_err();
        assert!(matches!(err, Error::TypeConflict { .. }));
    }

    #[test]
    fn parse_rejects_short_line() {
        let err = EdgeRecord::parse("a\tb\tc", 7).unwrap_err();
        assert!(matches!(err, Error::FormatError { line: 7, .. }));
    }

    #[test]
    fn chain_ancestors_and_descendants() {
        let mut g = MemGraph::new();
        g.append(&rec("a", "p", "b", "p", "t", 1)).unwrap();
        g.append(&rec("b", "p", "c", "p", "t", 2)).unwrap();
        let c = g.lookup("c").unwrap();
        let a = g.lookup("a").unwrap();
        let anc = g.two_hop_ancestors(c).unwrap();
        assert_eq!(anc, [g.lookup("a").unwrap(), g.lookup("b").unwrap()].into());
        let desc = g.two_hop_descendants(a).unwrap();
        assert_eq!(desc, [g.lookup("b").unwrap(), c].into());
        assert!(g.two_hop_ancestors(a).unwrap().is_empty());
        assert!(g.two_hop_descendants(c).unwrap().is_empty());
    }

    #[test]
    fn unknown_node_errors() {
        let g = MemGraph::new();
        assert!(matches!(g.two_hop_ancestors(3), Err(Error::UnknownNode(_))));
    }

    /// Brute-force reverse/forward BFS oracle on a random 50-node graph.
    #[test]
    fn k_hop_matches_bfs_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = MemGraph::new();
        for i in 0..50 {
            g.intern_node(&format!("n{i}"), "t").unwrap();
        }
        for ts in 0..150 {
            let s = rng.gen_range(0..50u32);
            let d = rng.gen_range(0..50u32);
            g.append_internal(s, d, "e", ts);
        }
        let oracle = |v: NodeId, forward: bool| -> HashSet<NodeId> {
            let mut out = HashSet::new();
            let step = |x: NodeId| -> Vec<NodeId> {
                if forward {
                    g.out_neighbors(x).to_vec()
                } else {
                    g.in_neighbors(x).to_vec()
                }
            };
            for u in step(v) {
                if u != v {
                    out.insert(u);
                }
                for w in step(u) {
                    if w != v {
                        out.insert(w);
                    }
                }
            }
            out
        };
        for v in 0..50u32 {
            assert_eq!(g.two_hop_ancestors(v).unwrap(), oracle(v, false), "anc {v}");
            assert_eq!(g.two_hop_descendants(v).unwrap(), oracle(v, true), "desc {v}");
        }
    }

    #[test]
    fn training_partition_sizes() {
        let mut g = MemGraph::new();
        for i in 0..10 {
            g.intern_node(&format!("n{i}"), "t").unwrap();
        }
        let subs = g.build_training_subgraphs(4, 0);
        let mut sizes: Vec<usize> = subs.iter().map(|s| s.active.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 4, 4]);
        let mut all: Vec<NodeId> = subs.iter().flat_map(|s| s.active.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_larger_than_graph_gives_single_subgraph() {
        let mut g = MemGraph::new();
        g.append(&rec("a", "p", "b", "f", "w", 1)).unwrap();
        let subs = g.build_training_subgraphs(100, 0);
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].active.len(), 2);
        assert!(subs[0].related.is_empty());
    }

    /// Partition + context-closure property on random graphs.
    #[test]
    fn partition_and_context_closure_property() {
        use rand::Rng;
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = MemGraph::new();
            for i in 0..40 {
                g.intern_node(&format!("n{i}"), "t").unwrap();
            }
            for ts in 0..100 {
                let s = rng.gen_range(0..40u32);
                let d = rng.gen_range(0..40u32);
                g.append_internal(s, d, "e", ts);
            }
            let subs = g.build_training_subgraphs(7, seed);
            let mut cover: Vec<NodeId> = Vec::new();
            for sub in &subs {
                cover.extend_from_slice(&sub.active);
                let active: HashSet<NodeId> = sub.active.iter().copied().collect();
                for &r in &sub.related {
                    assert!(!active.contains(&r));
                    // every related node reaches an active node in <= 2 forward hops
                    let reach = g.k_hop_descendants(r, 2).unwrap();
                    assert!(
                        reach.iter().any(|v| active.contains(v)),
                        "related node {r} cannot reach active set"
                    );
                }
            }
            cover.sort_unstable();
            assert_eq!(cover, (0..40).collect::<Vec<_>>());
        }
    }
}
