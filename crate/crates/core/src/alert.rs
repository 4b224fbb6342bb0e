//! Alerting and tracing.
//!
//! Streaming node verdicts feed a waiting queue: a flagged node either
//! reclassifies as benign within the waiting threshold `T` and leaves the
//! queue, or times out into the confirmed set. The system-level alert
//! latches once the confirmed count exceeds the tolerance threshold.
//! Confirmed nodes are traced through their 2-hop ancestors and
//! descendants.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::eval::ConfusionCounts;
use crate::graph::{MemGraph, NodeId};

#[derive(Debug, Clone)]
pub struct AlertState {
    /// node -> first flagged time.
    pub queue: BTreeMap<NodeId, i64>,
    pub confirmed: BTreeSet<NodeId>,
    /// Waiting time threshold T, in stream time units; i64::MAX = never.
    pub wait_threshold: i64,
    /// Tolerance threshold: alert once |confirmed| exceeds it.
    pub tolerance: usize,
    pub alert_raised: bool,
    /// Ids filtered out before queue insertion.
    pub whitelist: HashSet<NodeId>,
}

impl AlertState {
    pub fn new(wait_threshold: i64, tolerance: usize) -> Self {
        AlertState {
            queue: BTreeMap::new(),
            confirmed: BTreeSet::new(),
            wait_threshold,
            tolerance,
            alert_raised: false,
            whitelist: HashSet::new(),
        }
    }

    /// Folds one detection snapshot into the state. New anomalous nodes
    /// enter the queue stamped with `snapshot_time`; nodes re-detected
    /// benign leave it; entries older than T confirm; the alert latches
    /// when the confirmed count exceeds the tolerance.
    pub fn ingest_verdicts(&mut self, snapshot_time: i64, anomalous: &[NodeId], benign: &[NodeId]) {
        for &v in anomalous {
            if !self.confirmed.contains(&v) && !self.whitelist.contains(&v) {
                self.queue.entry(v).or_insert(snapshot_time);
            }
        }
        for v in benign {
            self.queue.remove(v);
        }
        let expired: Vec<NodeId> = self
            .queue
            .iter()
            .filter(|&(_, &t0)| {
                self.wait_threshold != i64::MAX && snapshot_time - t0 > self.wait_threshold
            })
            .map(|(&v, _)| v)
            .collect();
        for v in expired {
            self.queue.remove(&v);
            self.confirmed.insert(v);
        }
        if self.confirmed.len() > self.tolerance {
            self.alert_raised = true;
        }
    }

    /// End-of-stream flush: everything still queued has reached its final
    /// stage without reclassifying, so it ages out into confirmed.
    pub fn finalize(&mut self, final_time: i64) {
        let t = final_time
            .saturating_add(self.wait_threshold)
            .saturating_add(1);
        self.ingest_verdicts(t, &[], &[]);
    }
}

/// A traced neighborhood around one flagged node.
#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub root: String,
    pub nodes: Vec<TraceNode>,
    pub edges: Vec<TraceEdge>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceNode {
    pub name: String,
    pub node_type: String,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEdge {
    pub src: String,
    pub dst: String,
    pub edge_type: String,
    pub timestamp: i64,
}

/// Induced subgraph over the node, its 2-hop ancestors and its 2-hop
/// descendants, with members annotated by flag status.
pub fn trace(graph: &MemGraph, node: NodeId, flagged: &HashSet<NodeId>) -> Result<Trace> {
    let mut members = graph.k_hop_ancestors(node, 2)?;
    members.extend(graph.k_hop_descendants(node, 2)?);
    members.insert(node);
    let mut ids: Vec<NodeId> = members.iter().copied().collect();
    ids.sort_unstable();
    let nodes = ids
        .iter()
        .map(|&v| TraceNode {
            name: graph.node_name(v).to_string(),
            node_type: graph.node_type(v).to_string(),
            flagged: flagged.contains(&v),
        })
        .collect();
    let edges = graph
        .edges()
        .iter()
        .filter(|e| members.contains(&e.src) && members.contains(&e.dst))
        .map(|e| TraceEdge {
            src: graph.node_name(e.src).to_string(),
            dst: graph.node_name(e.dst).to_string(),
            edge_type: e.edge_type.clone(),
            timestamp: e.timestamp,
        })
        .collect();
    Ok(Trace {
        root: graph.node_name(node).to_string(),
        nodes,
        edges,
    })
}

impl Trace {
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph trace {\n");
        for n in &self.nodes {
            let style = if n.flagged {
                ", style=filled, fillcolor=salmon"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "  \"{}\" [label=\"{}\\n{}\"{}];",
                n.name, n.name, n.node_type, style
            );
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{} @{}\"];",
                e.src, e.dst, e.edge_type, e.timestamp
            );
        }
        out.push_str("}\n");
        out
    }
}

/// One alert log line: timestamp, node id, node type, best class, ratio.
pub fn alert_log_line(
    timestamp: i64,
    node: &str,
    node_type: &str,
    best_class: &str,
    ratio: f64,
) -> String {
    format!("{timestamp}\t{node}\t{node_type}\t{best_class}\t{ratio:.4}")
}

/// Node-level confusion counts under the 2-hop hunting rule: an anomalous
/// node counts as found if it or any of its 2-hop ancestors/descendants
/// was flagged; a flagged benign node is excused if an anomalous node sits
/// within its own 2-hop neighborhood.
pub fn score_node_level(
    graph: &MemGraph,
    anomalous: &HashSet<NodeId>,
    flagged: &HashSet<NodeId>,
) -> Result<ConfusionCounts> {
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for v in 0..graph.node_count() as NodeId {
        let mut hood = graph.k_hop_ancestors(v, 2)?;
        hood.extend(graph.k_hop_descendants(v, 2)?);
        hood.insert(v);
        if anomalous.contains(&v) {
            if hood.iter().any(|u| flagged.contains(u)) {
                tp += 1;
            } else {
                fn_ += 1;
            }
        } else if flagged.contains(&v) && !hood.iter().any(|u| anomalous.contains(u)) {
            fp += 1;
        } else {
            tn += 1;
        }
    }
    Ok(ConfusionCounts::new(tp, tn, fp, fn_))
}
