//! Streaming detection pipeline.
//!
//! Edges arrive one record at a time. The whole history stays out of
//! working memory: the detector keeps a node registry with running feature
//! counters (linear in node count) plus the current window of edges, which
//! is flushed through the model whenever the configured size threshold is
//! reached. Each flush classifies the window's active nodes (destination
//! nodes and their 2-hop descendants) in the context of their 2-hop
//! in-neighbors, then feeds the verdicts to the alert queue.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::alert::{trace, AlertState, Trace};
use crate::config::{Config, SsSemantics, UnknownTypePolicy};
use crate::ensemble::{detect, Ensemble, LocalView};
use crate::error::Result;
use crate::features::{FeatureTable, NodeFeature};
use crate::graph::{EdgeRecord, MemGraph, NodeId, Subgraph};

/// One alert-log row for a node flagged during a flush.
#[derive(Debug, Clone, Serialize)]
pub struct AlertRow {
    pub timestamp: i64,
    pub node: String,
    pub node_type: String,
    pub best_class: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FlushReport {
    pub snapshot_time: i64,
    pub candidates: usize,
    pub subgraph_nodes: usize,
    pub anomalous: Vec<AlertRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectorSummary {
    pub flushes: usize,
    pub edges_ingested: usize,
    pub confirmed: Vec<String>,
    pub alert_raised: bool,
    /// Peak node count of any materialized detection subgraph.
    pub high_water_nodes: usize,
    pub traces: Vec<Trace>,
}

pub struct StreamingDetector {
    ensemble: Ensemble,
    cfg: Config,
    alert: AlertState,
    /// Global node registry (no edges): stable ids across windows.
    registry: MemGraph,
    /// Whole-history in/out counters per registry node.
    history: FeatureTable,
    window: MemGraph,
    flushes: usize,
    edges_ingested: usize,
    high_water: usize,
    last_snapshot: i64,
    /// Trace captured the first time each node was flagged, keyed by name.
    traces: HashMap<String, Trace>,
}

impl StreamingDetector {
    pub fn new(ensemble: Ensemble, cfg: Config) -> Self {
        let history = FeatureTable::new(&ensemble.maps);
        StreamingDetector {
            alert: AlertState::new(cfg.wait_threshold, cfg.tolerance),
            history,
            ensemble,
            cfg,
            registry: MemGraph::new(),
            window: MemGraph::new(),
            flushes: 0,
            edges_ingested: 0,
            high_water: 0,
            last_snapshot: 0,
            traces: HashMap::new(),
        }
    }

    pub fn alert_state(&self) -> &AlertState {
        &self.alert
    }

    pub fn whitelist(&mut self, names: &[String]) -> Result<()> {
        for name in names {
            // whitelist entries for not-yet-seen nodes are interned lazily
            // by name at verdict time instead; only known ids filter now
            if let Some(v) = self.registry.lookup(name) {
                self.alert.whitelist.insert(v);
            }
        }
        Ok(())
    }

    /// Ingests one edge; returns a report when this edge triggered a flush.
    pub fn ingest_record(&mut self, rec: &EdgeRecord) -> Result<Option<FlushReport>> {
        if self.cfg.unknown_type_policy == UnknownTypePolicy::Reject {
            self.ensemble.maps.node_type_id(&rec.src_type)?;
            self.ensemble.maps.node_type_id(&rec.dst_type)?;
            self.ensemble.maps.edge_type_id(&rec.edge_type)?;
        }
        let gsrc = self.registry.intern_node(&rec.src, &rec.src_type)?;
        let gdst = self.registry.intern_node(&rec.dst, &rec.dst_type)?;
        if let Ok(t) = self.ensemble.maps.edge_type_id(&rec.edge_type) {
            self.history.apply_edge(gsrc, gdst, t);
        }
        self.window.append(rec)?;
        self.edges_ingested += 1;
        self.last_snapshot = self.last_snapshot.max(rec.timestamp);
        let full = match self.cfg.ss_semantics {
            SsSemantics::Edges => self.window.edge_count() >= self.cfg.subgraph_size,
            SsSemantics::ActiveNodes => self.window.node_count() >= self.cfg.subgraph_size,
        };
        if full {
            Ok(Some(self.flush_detection()?))
        } else {
            Ok(None)
        }
    }

    /// Active set of the current window: every destination node plus its
    /// 2-hop descendants within the window.
    fn active_nodes(&self) -> Vec<NodeId> {
        let mut active: HashSet<NodeId> = HashSet::new();
        let mut frontier: Vec<NodeId> = Vec::new();
        for e in self.window.edges() {
            if active.insert(e.dst) {
                frontier.push(e.dst);
            }
        }
        for _ in 0..2 {
            let mut next = Vec::new();
            for &v in &frontier {
                for &u in self.window.out_neighbors(v) {
                    if active.insert(u) {
                        next.push(u);
                    }
                }
            }
            frontier = next;
        }
        let mut out: Vec<NodeId> = active.into_iter().collect();
        out.sort_unstable();
        out
    }

    /// Window features for every subgraph member, plus the set of members
    /// whose node type or incident edge types the model has never seen.
    fn window_features(
        &self,
        sub: &Subgraph,
    ) -> (HashMap<NodeId, NodeFeature>, HashSet<NodeId>) {
        let maps = &self.ensemble.maps;
        let ne = maps.n_edge_types();
        let mut unknown: HashSet<NodeId> = HashSet::new();
        let mut counts: HashMap<NodeId, Vec<u32>> = HashMap::new();
        for &v in &sub.members() {
            counts.insert(v, vec![0; 2 * ne]);
        }
        for &eid in &sub.edges {
            let e = &self.window.edges()[eid];
            match maps.edge_type_id(&e.edge_type) {
                Ok(t) => {
                    counts.get_mut(&e.dst).unwrap()[t] += 1;
                    counts.get_mut(&e.src).unwrap()[ne + t] += 1;
                }
                Err(_) => {
                    unknown.insert(e.src);
                    unknown.insert(e.dst);
                }
            }
        }
        let mut features = HashMap::new();
        for (v, local_vec) in counts {
            let label = match maps.node_type_id(self.window.node_type(v)) {
                Ok(l) => l,
                Err(_) => {
                    unknown.insert(v);
                    0
                }
            };
            let vector = if self.cfg.whole_history_features {
                let gid = self.registry.lookup(self.window.node_name(v)).unwrap();
                self.history
                    .vector(gid)
                    .map(|s| s.to_vec())
                    .unwrap_or(local_vec)
            } else {
                local_vec
            };
            features.insert(v, NodeFeature { label, vector });
        }
        (features, unknown)
    }

    /// Runs detection over the buffered window and clears it.
    pub fn flush_detection(&mut self) -> Result<FlushReport> {
        if self.window.edge_count() == 0 {
            return Ok(FlushReport::default());
        }
        let snapshot_time = self
            .window
            .edges()
            .iter()
            .map(|e| e.timestamp)
            .max()
            .unwrap();
        let active = self.active_nodes();
        let sub = self.window.subgraph_around(&active);
        let members = sub.members();
        self.high_water = self.high_water.max(members.len());
        let (features, unknown) = self.window_features(&sub);
        let view = LocalView::build(&self.window, &sub, &features);
        let candidates: Vec<NodeId> = active
            .iter()
            .copied()
            .filter(|v| !unknown.contains(v))
            .collect();
        let outcome = detect(&view, &candidates, &self.ensemble)?;

        let mut rows = Vec::new();
        let mut flagged_window: HashSet<NodeId> = unknown
            .iter()
            .copied()
            .filter(|v| active.contains(v))
            .collect();
        flagged_window.extend(outcome.anomalous.iter().copied());
        for &v in &flagged_window {
            let (best_class, ratio) = match outcome.diagnostics.get(&v) {
                Some(d) => match d.per_submodel.last() {
                    Some(&(cls, r)) => (self.ensemble.maps.node_type_name(cls).to_string(), r),
                    None => ("none".to_string(), 0.0),
                },
                None => ("unknown".to_string(), 0.0),
            };
            rows.push(AlertRow {
                timestamp: snapshot_time,
                node: self.window.node_name(v).to_string(),
                node_type: self.window.node_type(v).to_string(),
                best_class,
                ratio,
            });
        }
        rows.sort_by(|a, b| a.node.cmp(&b.node));

        // verdicts keyed by registry ids so identity survives window resets
        let to_global = |v: NodeId| self.registry.lookup(self.window.node_name(v)).unwrap();
        let anomalous_global: Vec<NodeId> = flagged_window.iter().map(|&v| to_global(v)).collect();
        let benign_global: Vec<NodeId> = active
            .iter()
            .filter(|v| !flagged_window.contains(v))
            .map(|&v| to_global(v))
            .collect();
        self.alert
            .ingest_verdicts(snapshot_time, &anomalous_global, &benign_global);
        for &v in &flagged_window {
            let name = self.window.node_name(v).to_string();
            if !self.traces.contains_key(&name) {
                self.traces.insert(name, trace(&self.window, v, &flagged_window)?);
            }
        }

        let report = FlushReport {
            snapshot_time,
            candidates: candidates.len() + (flagged_window.len() - outcome.anomalous.len()),
            subgraph_nodes: members.len(),
            anomalous: rows,
        };
        self.flushes += 1;
        self.window = MemGraph::new();
        Ok(report)
    }

    /// Final partial flush, queue aging, and summary.
    pub fn finish(mut self) -> Result<(DetectorSummary, Option<FlushReport>)> {
        let tail = if self.window.edge_count() > 0 {
            Some(self.flush_detection()?)
        } else {
            None
        };
        self.alert.finalize(self.last_snapshot);
        let confirmed: Vec<String> = self
            .alert
            .confirmed
            .iter()
            .map(|&v| self.registry.node_name(v).to_string())
            .collect();
        let traces = confirmed
            .iter()
            .filter_map(|name| self.traces.get(name).cloned())
            .collect();
        Ok((
            DetectorSummary {
                flushes: self.flushes,
                edges_ingested: self.edges_ingested,
                confirmed,
                alert_raised: self.alert.alert_raised,
                high_water_nodes: self.high_water,
                traces,
            },
            tail,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::train_on_graph_sequence;
    use crate::synth;

    fn small_cfg(seed: u64) -> Config {
        Config {
            split_size: 10_000,
            epochs: 200,
            batch_size: 64,
            hidden: 8,
            seed,
            ..Config::default()
        }
    }

    fn trained(seed: u64) -> Ensemble {
        let graph = synth::two_role_graph(seed, 10);
        train_on_graph_sequence(&[&graph], &small_cfg(seed)).unwrap().0
    }

    fn replay(det: &mut StreamingDetector, g: &MemGraph) {
        for i in 0..g.edge_count() {
            det.ingest_record(&g.record_for(i)).unwrap();
        }
    }

    #[test]
    fn benign_replay_raises_no_alert() {
        let ensemble = trained(1);
        let g = synth::two_role_graph(101, 10);
        let mut det = StreamingDetector::new(ensemble, small_cfg(1));
        replay(&mut det, &g);
        let (summary, _) = det.finish().unwrap();
        assert!(!summary.alert_raised, "confirmed {:?}", summary.confirmed);
        assert_eq!(summary.edges_ingested, g.edge_count());
    }

    #[test]
    fn injected_stream_raises_alert_with_traces() {
        let ensemble = trained(2);
        let mut g = synth::two_role_graph(102, 10);
        let bad = synth::inject_anomalies(&mut g, 4, 7);
        let mut det = StreamingDetector::new(ensemble, small_cfg(2));
        replay(&mut det, &g);
        let (summary, _) = det.finish().unwrap();
        assert!(summary.alert_raised, "confirmed {:?}", summary.confirmed);
        for v in &bad {
            let name = g.node_name(*v);
            assert!(summary.confirmed.iter().any(|c| c == name));
            assert!(summary.traces.iter().any(|t| t.root == name));
        }
    }

    #[test]
    fn empty_stream_zero_flushes() {
        let det = StreamingDetector::new(trained(3), small_cfg(3));
        let (summary, tail) = det.finish().unwrap();
        assert_eq!(summary.flushes, 0);
        assert!(tail.is_none());
        assert!(!summary.alert_raised);
    }

    #[test]
    fn flush_cadence_follows_ss() {
        let ensemble = trained(4);
        let g = synth::two_role_graph(104, 12);
        let cfg = Config {
            subgraph_size: 25,
            ..small_cfg(4)
        };
        let mut det = StreamingDetector::new(ensemble, cfg);
        let mut flushes = 0;
        for i in 0..g.edge_count() {
            if det.ingest_record(&g.record_for(i)).unwrap().is_some() {
                flushes += 1;
            }
        }
        assert_eq!(flushes, g.edge_count() / 25);
        let (summary, _) = det.finish().unwrap();
        assert_eq!(summary.flushes, flushes + 1);
        // memory bound: no flush materialized anywhere near the full graph
        assert!(summary.high_water_nodes < g.node_count());
    }

    #[test]
    fn unknown_types_follow_policy() {
        let ensemble = trained(5);
        let mut g = synth::two_role_graph(105, 6);
        let x = g.intern_node("oddball", "widget").unwrap();
        g.append_internal(0, x, "zap", 1 << 30);
        // default policy marks the strangers anomalous
        let mut det = StreamingDetector::new(ensemble.clone(), small_cfg(5));
        replay(&mut det, &g);
        let (summary, _) = det.finish().unwrap();
        assert!(summary.confirmed.iter().any(|c| c == "oddball"));
        // reject policy errors out instead
        let cfg = Config {
            unknown_type_policy: UnknownTypePolicy::Reject,
            ..small_cfg(5)
        };
        let mut det = StreamingDetector::new(ensemble, cfg);
        let mut err = None;
        for i in 0..g.edge_count() {
            if let Err(e) = det.ingest_record(&g.record_for(i)) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(crate::Error::UnknownType { .. })));
    }

    #[test]
    fn whole_history_features_survive_window_resets() {
        let ensemble = trained(6);
        let g = synth::two_role_graph(106, 12);
        let cfg = Config {
            subgraph_size: 20,
            whole_history_features: true,
            ..small_cfg(6)
        };
        let mut det = StreamingDetector::new(ensemble, cfg);
        replay(&mut det, &g);
        let (summary, _) = det.finish().unwrap();
        assert!(summary.flushes > 1);
        assert!(!summary.alert_raised, "confirmed {:?}", summary.confirmed);
    }
}
