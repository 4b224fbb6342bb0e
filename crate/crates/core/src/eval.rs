//! Evaluation harness: dataset loaders, validation splits, metric
//! formulas, edge dropping for missing-data studies, and learning curves.
//!
//! Metrics with a zero denominator are reported as undefined (`None`),
//! never silently as 0 or 1.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Config;
use crate::ensemble::{train_on_graph_sequence, Ensemble, LocalView, TrainingReport};
use crate::error::{Error, Result};
use crate::features::extract_subgraph_features;
use crate::graph::{MemGraph, NodeId};
use crate::pipeline::StreamingDetector;

/// Raw confusion counts; real-valued so that means over repeated runs fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ConfusionCounts {
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    pub fn_: f64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts {
            tp: tp as f64,
            tn: tn as f64,
            fp: fp as f64,
            fn_: fn_ as f64,
        }
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn scale(&self, by: f64) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp * by,
            tn: self.tn * by,
            fp: self.fp * by,
            fn_: self.fn_ * by,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSet {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f_score: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// The six standard formulas over the confusion counts.
pub fn metrics(c: &ConfusionCounts) -> MetricSet {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn_);
    let f_score = match (precision, recall) {
        (Some(p), Some(r)) => ratio(2.0 * p * r, p + r),
        _ => None,
    };
    let fpr = ratio(c.fp, c.fp + c.tn);
    let fnr = ratio(c.fn_, c.fn_ + c.tp);
    MetricSet {
        precision,
        recall,
        accuracy,
        f_score,
        fpr,
        fnr,
    }
}

/// One labeled information-flow graph from a multi-scene corpus.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    /// Numeric graph id rendered as text; scene = id / 100 for corpus files.
    pub id: String,
    pub scene: usize,
    pub attack: bool,
    /// Ground-truth anomalous node names, when known.
    pub anomalous_nodes: Vec<String>,
    pub graph: MemGraph,
}

/// Loads a scene-corpus TSV: src, src_type, dst, dst_type, edge_type,
/// graph_id per line. Scene = graph_id / 100; timestamps are synthesized as
/// the per-graph edge ordinal.
pub fn load_streamspot(path: &Path, attack_scenes: &[usize]) -> Result<Vec<LabeledGraph>> {
    let file = std::fs::File::open(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut graphs: HashMap<String, LabeledGraph> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::FormatError {
                line: i + 1,
                msg: format!("expected 6 tab-separated fields, got {}", fields.len()),
            });
        }
        let gid = fields[5].to_string();
        let entry = match graphs.get_mut(&gid) {
            Some(g) => g,
            None => {
                let num: usize = gid.parse().map_err(|_| Error::FormatError {
                    line: i + 1,
                    msg: format!("graph_id {gid:?} is not numeric"),
                })?;
                let scene = num / 100;
                order.push(gid.clone());
                graphs.entry(gid).or_insert(LabeledGraph {
                    id: fields[5].to_string(),
                    scene,
                    attack: attack_scenes.contains(&scene),
                    anomalous_nodes: Vec::new(),
                    graph: MemGraph::new(),
                })
            }
        };
        let ts = entry.graph.edges().len() as i64;
        let src = entry
            .graph
            .intern_node(fields[0], fields[1])
            .map_err(|e| at_line(e, i + 1))?;
        let dst = entry
            .graph
            .intern_node(fields[2], fields[3])
            .map_err(|e| at_line(e, i + 1))?;
        entry.graph.append_internal(src, dst, fields[4], ts);
    }
    Ok(order.into_iter().map(|id| graphs.remove(&id).unwrap()).collect())
}

fn at_line(e: Error, line: usize) -> Error {
    Error::FormatError {
        line,
        msg: e.to_string(),
    }
}

/// Writes graphs back out in the same TSV layout, edges in arrival order.
pub fn save_streamspot(path: &Path, graphs: &[LabeledGraph]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for lg in graphs {
        for e in lg.graph.edges() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                lg.graph.node_name(e.src),
                lg.graph.node_type(e.src),
                lg.graph.node_name(e.dst),
                lg.graph.node_type(e.dst),
                e.edge_type,
                lg.id
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Ground-truth sidecar: either `node` or `graph_id<TAB>node` per line.
/// Returns node names keyed by graph id; bare lines land under "".
pub fn load_ground_truth(path: &Path) -> Result<HashMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out: HashMap<String, Vec<String>> = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('\t') {
            Some((gid, node)) => out.entry(gid.to_string()).or_default().push(node.to_string()),
            None => out.entry(String::new()).or_default().push(line.to_string()),
        }
    }
    Ok(out)
}

/// Random split: per benign scene, `train_frac` of the graphs go to
/// training; every attack graph goes to test.
pub fn split_train_test<'a>(
    graphs: &'a [LabeledGraph],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<&'a LabeledGraph>, Vec<&'a LabeledGraph>)> {
    let mut by_scene: HashMap<usize, Vec<&LabeledGraph>> = HashMap::new();
    let mut test: Vec<&LabeledGraph> = Vec::new();
    for g in graphs {
        if g.attack {
            test.push(g);
        } else {
            by_scene.entry(g.scene).or_default().push(g);
        }
    }
    if by_scene.is_empty() {
        return Err(Error::InsufficientGraphs { needed: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut scenes: Vec<usize> = by_scene.keys().copied().collect();
    scenes.sort_unstable();
    for scene in scenes {
        let mut members = by_scene.remove(&scene).unwrap();
        members.shuffle(&mut rng);
        let n_train = (members.len() as f64 * train_frac).floor() as usize;
        for (i, g) in members.into_iter().enumerate() {
            if i < n_train {
                train.push(g);
            } else {
                test.push(g);
            }
        }
    }
    Ok((train, test))
}

/// K-fold cross-validation over benign graphs; each fold's test set is its
/// benign share plus every attack graph.
pub fn cross_validation_folds<'a>(
    graphs: &'a [LabeledGraph],
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<&'a LabeledGraph>, Vec<&'a LabeledGraph>)>> {
    let mut benign: Vec<&LabeledGraph> = graphs.iter().filter(|g| !g.attack).collect();
    let attack: Vec<&LabeledGraph> = graphs.iter().filter(|g| g.attack).collect();
    if benign.len() < k || k == 0 {
        return Err(Error::InsufficientGraphs {
            needed: k.max(1),
            got: benign.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    benign.shuffle(&mut rng);
    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let test_slice: Vec<&LabeledGraph> = benign
            .iter()
            .enumerate()
            .filter(|(j, _)| j % k == i)
            .map(|(_, g)| *g)
            .collect();
        let train: Vec<&LabeledGraph> = benign
            .iter()
            .enumerate()
            .filter(|(j, _)| j % k != i)
            .map(|(_, g)| *g)
            .collect();
        let mut test = test_slice;
        test.extend(attack.iter().copied());
        folds.push((train, test));
    }
    Ok(folds)
}

/// Uniformly removes floor(delta * |E|) edges; the node set is preserved.
pub fn drop_edges(graph: &MemGraph, delta: f64, seed: u64) -> MemGraph {
    let mut out = MemGraph::new();
    for v in 0..graph.node_count() {
        out.intern_node(graph.node_name(v as u32), graph.node_type(v as u32))
            .unwrap();
    }
    let n_edges = graph.edges().len();
    let n_drop = (delta * n_edges as f64).floor() as usize;
    let mut ids: Vec<usize> = (0..n_edges).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut keep = vec![true; n_edges];
    for &i in ids.iter().take(n_drop) {
        keep[i] = false;
    }
    for (i, e) in graph.edges().iter().enumerate() {
        if keep[i] {
            out.append_internal(e.src, e.dst, &e.edge_type, e.timestamp);
        }
    }
    out
}

/// Per-graph verdict from a streaming replay.
#[derive(Debug, Clone, Serialize)]
pub struct GraphVerdict {
    pub id: String,
    pub attack: bool,
    pub alert_raised: bool,
    pub confirmed: usize,
}

/// Trains on the given graphs and replays each test graph through the
/// streaming pipeline; the graph verdict is whether an alert latched.
pub fn run_graph_level_eval(
    train: &[&LabeledGraph],
    test: &[&LabeledGraph],
    cfg: &Config,
) -> Result<(Vec<GraphVerdict>, ConfusionCounts, TrainingReport)> {
    let graphs: Vec<&MemGraph> = train.iter().map(|g| &g.graph).collect();
    let (ensemble, report) = train_on_graph_sequence(&graphs, cfg)?;
    let mut verdicts = Vec::new();
    let mut counts = ConfusionCounts::default();
    for lg in test {
        let mut det = StreamingDetector::new(ensemble.clone(), cfg.clone());
        for i in 0..lg.graph.edge_count() {
            det.ingest_record(&lg.graph.record_for(i))?;
        }
        let (summary, _) = det.finish()?;
        match (lg.attack, summary.alert_raised) {
            (true, true) => counts.tp += 1.0,
            (true, false) => counts.fn_ += 1.0,
            (false, true) => counts.fp += 1.0,
            (false, false) => counts.tn += 1.0,
        }
        verdicts.push(GraphVerdict {
            id: lg.id.clone(),
            attack: lg.attack,
            alert_raised: summary.alert_raised,
            confirmed: summary.confirmed.len(),
        });
    }
    Ok((verdicts, counts, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveAxis {
    Iterations,
    TrainingFraction,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub axis: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Learning-curve study: nodes split 8:2 into train and validation sets;
/// for each axis value a fresh seeded ensemble is trained on the train
/// nodes and both sides report their confident-classification rate.
pub fn learning_curve(
    graph: &MemGraph,
    cfg: &Config,
    axis: CurveAxis,
    values: &[f64],
) -> Result<Vec<CurvePoint>> {
    use crate::features::TypeMaps;
    let maps = TypeMaps::build(&[graph]);
    let all: Vec<NodeId> = (0..graph.node_count() as NodeId).collect();
    let sub = graph.subgraph_around(&all);
    let features = extract_subgraph_features(graph, &sub, &maps)?;
    let view = LocalView::build(graph, &sub, &features);
    let mut locals: Vec<usize> = (0..view.nodes.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x8_2);
    locals.shuffle(&mut rng);
    let n_train = (locals.len() * 8) / 10;
    let (train_nodes, val_nodes) = locals.split_at(n_train);

    let rate = |ok: &[bool]| -> f64 {
        if ok.is_empty() {
            return 0.0;
        }
        ok.iter().filter(|&&b| b).count() as f64 / ok.len() as f64
    };

    let mut points = Vec::new();
    for &value in values {
        let mut run_cfg = cfg.clone();
        let active: Vec<usize> = match axis {
            CurveAxis::Iterations => {
                run_cfg.epochs = value as usize;
                train_nodes.to_vec()
            }
            CurveAxis::TrainingFraction => {
                let k = ((train_nodes.len() as f64) * value).round() as usize;
                train_nodes[..k.min(train_nodes.len())].to_vec()
            }
        };
        let mut ensemble = Ensemble::new(maps.clone(), run_cfg.ratio);
        let mut report = TrainingReport::default();
        ensemble.train_on_view(&view, &active, &run_cfg, &mut report)?;
        points.push(CurvePoint {
            axis: value,
            train_accuracy: rate(&ensemble.acceptance(&view, &active)?),
            val_accuracy: rate(&ensemble.acceptance(&view, val_nodes)?),
        });
    }
    Ok(points)
}
