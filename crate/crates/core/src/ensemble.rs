//! Stacked multi-model framework.
//!
//! Training keeps adding submodels until every active node of the training
//! subgraph is confidently classified by some submodel; execution removes
//! candidates accepted by any submodel and reports the survivors as
//! anomalous.

use std::collections::{HashMap, HashSet};
use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::features::{extract_subgraph_features, NodeFeature, TypeMaps};
use crate::gnn::{
    class_probabilities, classify_with_confidence, forward_propagate, train_submodel, GnnGraph,
    Submodel, TrainConfig,
};
use crate::graph::{MemGraph, NodeId, Subgraph};

const ENSEMBLE_MAGIC: &[u8; 4] = b"PSEN";
const ENSEMBLE_VERSION: u32 = 1;

/// Ordered submodels sharing one set of type maps and one ratio threshold.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub submodels: Vec<Submodel>,
    pub maps: TypeMaps,
    pub ratio: f64,
}

impl Ensemble {
    pub fn new(maps: TypeMaps, ratio: f64) -> Self {
        Ensemble {
            submodels: Vec::new(),
            maps,
            ratio,
        }
    }

    pub fn cnt(&self) -> usize {
        self.submodels.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(ENSEMBLE_MAGIC);
        buf.write_u32::<LittleEndian>(ENSEMBLE_VERSION).unwrap();
        buf.write_f64::<LittleEndian>(self.ratio).unwrap();
        let maps_json = serde_json::to_vec(&self.maps)?;
        buf.write_u32::<LittleEndian>(maps_json.len() as u32).unwrap();
        buf.extend_from_slice(&maps_json);
        buf.write_u32::<LittleEndian>(self.submodels.len() as u32).unwrap();
        for m in &self.submodels {
            let blob = m.to_bytes();
            buf.write_u32::<LittleEndian>(blob.len() as u32).unwrap();
            buf.extend_from_slice(&blob);
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        c.read_exact(&mut magic)?;
        if &magic != ENSEMBLE_MAGIC {
            return Err(Error::InvalidModel("bad ensemble magic".into()));
        }
        let version = c.read_u32::<LittleEndian>()?;
        if version != ENSEMBLE_VERSION {
            return Err(Error::InvalidModel(format!("unsupported version {version}")));
        }
        let ratio = c.read_f64::<LittleEndian>()?;
        let maps_len = c.read_u32::<LittleEndian>()? as usize;
        let mut maps_json = vec![0u8; maps_len];
        c.read_exact(&mut maps_json)?;
        let mut maps: TypeMaps = serde_json::from_slice(&maps_json)?;
        maps.rebuild_index();
        let cnt = c.read_u32::<LittleEndian>()? as usize;
        let mut submodels = Vec::with_capacity(cnt);
        for _ in 0..cnt {
            let len = c.read_u32::<LittleEndian>()? as usize;
            let mut blob = vec![0u8; len];
            c.read_exact(&mut blob)?;
            submodels.push(Submodel::from_bytes(&blob)?);
        }
        Ok(Ensemble {
            submodels,
            maps,
            ratio,
        })
    }
}

/// Per-submodel trajectory of |X| and any nodes dropped by the stall guard.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainingReport {
    pub cnt: usize,
    /// |X| before each trained submodel.
    pub x_trajectory: Vec<usize>,
    /// Node ids the stall guard gave up on, with the collision cause.
    pub unlearnable: Vec<UnlearnableNode>,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnlearnableNode {
    pub node: String,
    pub label: usize,
    pub feature: Vec<u32>,
}

/// A training or detection subgraph lowered to local indices for the model.
pub struct LocalView {
    /// Global node ids; position is the local index.
    pub nodes: Vec<NodeId>,
    pub index: HashMap<NodeId, usize>,
    pub names: Vec<String>,
    pub gnn: GnnGraph,
    pub labels: Vec<usize>,
}

impl LocalView {
    /// Lowers a subgraph plus a feature assignment into model form.
    pub fn build(
        graph: &MemGraph,
        sub: &Subgraph,
        features: &HashMap<NodeId, NodeFeature>,
    ) -> LocalView {
        let nodes = sub.members();
        let index: HashMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut in_nbrs: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for &eid in &sub.edges {
            let e = &graph.edges()[eid];
            if let (Some(&s), Some(&d)) = (index.get(&e.src), index.get(&e.dst)) {
                in_nbrs[d].push(s);
            }
        }
        let mut feats = Vec::with_capacity(nodes.len());
        let mut labels = Vec::with_capacity(nodes.len());
        for &v in &nodes {
            let f = &features[&v];
            feats.push(f.vector.iter().map(|&c| c as f64).collect());
            labels.push(f.label);
        }
        LocalView {
            names: nodes.iter().map(|&v| graph.node_name(v).to_string()).collect(),
            nodes,
            index,
            gnn: GnnGraph {
                features: feats,
                in_nbrs,
            },
            labels,
        }
    }

    /// Local indices within distance `hops` of the seed set along in-edges,
    /// including the seeds.
    fn in_neighborhood(&self, seeds: &[usize], hops: usize) -> Vec<usize> {
        let mut seen: HashSet<usize> = seeds.iter().copied().collect();
        let mut frontier: Vec<usize> = seeds.to_vec();
        for _ in 0..hops {
            let mut next = Vec::new();
            for &v in &frontier {
                for &u in &self.gnn.in_nbrs[v] {
                    if seen.insert(u) {
                        next.push(u);
                    }
                }
            }
            frontier = next;
        }
        let mut out: Vec<usize> = seen.into_iter().collect();
        out.sort_unstable();
        out
    }

    /// Re-indexed view over a subset of local nodes; edges among them only.
    fn restrict(&self, keep: &[usize]) -> (GnnGraph, Vec<usize>, HashMap<usize, usize>) {
        let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let features = keep.iter().map(|&v| self.gnn.features[v].clone()).collect();
        let in_nbrs = keep
            .iter()
            .map(|&v| {
                self.gnn.in_nbrs[v]
                    .iter()
                    .filter_map(|u| remap.get(u).copied())
                    .collect()
            })
            .collect();
        let labels = keep.iter().map(|&v| self.labels[v]).collect();
        (
            GnnGraph {
                features,
                in_nbrs,
            },
            labels,
            remap,
        )
    }
}

fn derive_seed(root: u64, n: u64) -> u64 {
    root ^ n.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn accepted(model: &Submodel, probs_cache: &[Vec<f64>], local: usize, label: usize, r: f64) -> bool {
    let _ = model;
    classify_with_confidence(&probs_cache[local], label, r)
}

fn probabilities(model: &Submodel, gnn: &GnnGraph) -> Result<Vec<Vec<f64>>> {
    let cache = forward_propagate(model, gnn)?;
    Ok(cache
        .t
        .last()
        .unwrap()
        .iter()
        .map(|z| class_probabilities(z))
        .collect())
}

impl Ensemble {
    /// Stacked training pass over one subgraph view: pre-filter the
    /// active nodes against the existing submodels, then loop training new
    /// submodels on the residual until it empties or the stall guard drops
    /// the stuck nodes.
    pub fn train_on_view(
        &mut self,
        view: &LocalView,
        active_local: &[usize],
        cfg: &Config,
        report: &mut TrainingReport,
    ) -> Result<()> {
        let mut x: Vec<usize> = active_local.to_vec();
        // pre-filter against existing submodels
        for model in &self.submodels {
            if x.is_empty() {
                break;
            }
            let probs = probabilities(model, &view.gnn)?;
            x.retain(|&v| !accepted(model, &probs, v, view.labels[v], self.ratio));
        }
        let mut stall = 0usize;
        while !x.is_empty() {
            report.x_trajectory.push(x.len());
            // restrict to the K-hop in-neighborhood of X
            let scope = view.in_neighborhood(&x, cfg.k);
            let (gnn, labels, remap) = view.restrict(&scope);
            let targets: Vec<usize> = x.iter().map(|v| remap[v]).collect();
            let tc = TrainConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                learning_rate: cfg.learning_rate,
                hidden: cfg.hidden,
                k: cfg.k,
                seed: derive_seed(cfg.seed, self.submodels.len() as u64 + 1),
            };
            let model = train_submodel(
                &gnn,
                &labels,
                &targets,
                self.maps.feature_len(),
                self.maps.n_node_types(),
                self.maps.fingerprint(),
                &tc,
            )?;
            let probs = probabilities(&model, &view.gnn)?;
            let before = x.len();
            x.retain(|&v| !accepted(&model, &probs, v, view.labels[v], self.ratio));
            self.submodels.push(model);
            report.cnt = self.submodels.len();
            if x.len() == before {
                stall += 1;
                if stall >= cfg.stall_limit {
                    for &v in &x {
                        report.unlearnable.push(UnlearnableNode {
                            node: view.names[v].clone(),
                            label: view.labels[v],
                            feature: view.gnn.features[v].iter().map(|&f| f as u32).collect(),
                        });
                    }
                    x.clear();
                }
            } else {
                stall = 0;
            }
        }
        report.cnt = self.submodels.len();
        Ok(())
    }

    /// Trains over one training subgraph of a graph, with subgraph-local
    /// features.
    pub fn train_on_subgraph(
        &mut self,
        graph: &MemGraph,
        sub: &Subgraph,
        cfg: &Config,
        report: &mut TrainingReport,
    ) -> Result<()> {
        let features = extract_subgraph_features(graph, sub, &self.maps)?;
        let view = LocalView::build(graph, sub, &features);
        let active_local: Vec<usize> = sub.active.iter().map(|v| view.index[v]).collect();
        self.train_on_view(&view, &active_local, cfg, report)
    }

    /// Fraction of the given nodes accepted by at least one submodel.
    pub fn acceptance(&self, view: &LocalView, locals: &[usize]) -> Result<Vec<bool>> {
        let mut ok = vec![false; locals.len()];
        for model in &self.submodels {
            if ok.iter().all(|&b| b) {
                break;
            }
            let probs = probabilities(model, &view.gnn)?;
            for (i, &v) in locals.iter().enumerate() {
                if !ok[i] && accepted(model, &probs, v, view.labels[v], self.ratio) {
                    ok[i] = true;
                }
            }
        }
        Ok(ok)
    }
}

/// Builds type maps over all training graphs and trains incrementally,
/// graph by graph; a graph whose nodes the current ensemble already accepts
/// trains nothing.
pub fn train_on_graph_sequence(
    graphs: &[&MemGraph],
    cfg: &Config,
) -> Result<(Ensemble, TrainingReport)> {
    if graphs.is_empty() {
        return Err(Error::InsufficientGraphs { needed: 1, got: 0 });
    }
    let maps = TypeMaps::build(graphs);
    let mut ensemble = Ensemble::new(maps, cfg.ratio);
    let mut report = TrainingReport::default();
    for (gi, graph) in graphs.iter().enumerate() {
        if graph.node_count() == 0 {
            continue;
        }
        let subs = graph.build_training_subgraphs(cfg.split_size, derive_seed(cfg.seed, gi as u64));
        for sub in &subs {
            ensemble.train_on_subgraph(graph, sub, cfg, &mut report)?;
        }
    }
    Ok((ensemble, report))
}

/// Per-node evidence kept for flagged nodes.
#[derive(Debug, Clone, Serialize)]
pub struct NodeDiagnostics {
    pub label: usize,
    /// One (predicted class, confidence ratio) pair per submodel.
    pub per_submodel: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct DetectionOutcome {
    pub anomalous: Vec<NodeId>,
    pub diagnostics: HashMap<NodeId, NodeDiagnostics>,
}

/// Executing method of the framework: iterate submodels in order, drop
/// candidates accepted under the confidence rule, return the survivors.
pub fn detect(view: &LocalView, candidates: &[NodeId], ensemble: &Ensemble) -> Result<DetectionOutcome> {
    let mut survivors: Vec<usize> = candidates
        .iter()
        .filter_map(|v| view.index.get(v).copied())
        .collect();
    let mut rows: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
    for model in &ensemble.submodels {
        if survivors.is_empty() {
            break;
        }
        let probs = probabilities(model, &view.gnn)?;
        for &v in &survivors {
            let p = &probs[v];
            let mut best = 0usize;
            for (i, &x) in p.iter().enumerate() {
                if x > p[best] {
                    best = i;
                }
            }
            let second = p
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != best)
                .map(|(_, &x)| x)
                .fold(0.0f64, f64::max);
            let ratio = if second == 0.0 { f64::INFINITY } else { p[best] / second };
            rows.entry(v).or_default().push((best, ratio));
        }
        survivors.retain(|&v| !accepted(model, &probs, v, view.labels[v], ensemble.ratio));
    }
    let mut outcome = DetectionOutcome::default();
    for v in survivors {
        let global = view.nodes[v];
        outcome.anomalous.push(global);
        outcome.diagnostics.insert(
            global,
            NodeDiagnostics {
                label: view.labels[v],
                per_submodel: rows.remove(&v).unwrap_or_default(),
            },
        );
    }
    outcome.anomalous.sort_unstable();
    Ok(outcome)
}
