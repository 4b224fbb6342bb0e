//! Optimization-based evasion harness.
//!
//! An attacker who controls a flagged node reshapes its edge-count feature
//! vector inside a relative L2 budget so the first submodel classifies the
//! node to its own type again. Three knowledge levels: copy a nearby benign
//! training feature, descend the target submodel's loss directly, or
//! descend a joint objective that keeps coupled neighbor features benign.
//! Crafted vectors are realized as concrete edge edits and re-detected.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::ensemble::{detect, Ensemble, LocalView};
use crate::error::{Error, Result};
use crate::eval::{metrics, ConfusionCounts, MetricSet};
use crate::features::{extract_subgraph_features, TypeMaps};
use crate::gnn::{backward, cross_entropy, evaluate_loss, forward_propagate, GnnGraph, Submodel};
use crate::graph::{MemGraph, NodeId};

#[derive(Debug, Clone, Copy)]
pub struct AttackBudget {
    /// Relative L2 budget: the strict constraint is ‖x̂ − x‖₂ < δ_a·‖x‖₂.
    pub delta_a: f64,
}

impl AttackBudget {
    pub fn radius(&self, x: &[u32]) -> f64 {
        self.delta_a * l2(&to_f64(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttackFlag {
    Succeeded,
    /// No integer point other than x fits inside the budget ball.
    InfeasibleBudget,
    /// Optimization failed to lower the loss; x returned unchanged.
    NoImprovement,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackOutcome {
    pub x_hat: Vec<u32>,
    pub flag: AttackFlag,
}

fn to_f64(x: &[u32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn inside(x_hat: &[u32], x: &[u32], radius: f64) -> bool {
    dist(&to_f64(x_hat), &to_f64(x)) < radius
}

/// Rounds a continuous candidate half-up, clips at zero, then backs off the
/// largest-magnitude deltas until the strict ball constraint holds again.
fn round_into_ball(y: &[f64], x: &[u32], radius: f64) -> Vec<u32> {
    let mut x_hat: Vec<u32> = y
        .iter()
        .map(|&v| if v <= 0.0 { 0 } else { (v + 0.5).floor() as u32 })
        .collect();
    while !inside(&x_hat, x, radius) && x_hat != *x {
        // undo one unit of the currently largest delta
        let mut worst = 0usize;
        let mut worst_mag = 0i64;
        for (i, (&h, &o)) in x_hat.iter().zip(x).enumerate() {
            let mag = (h as i64 - o as i64).abs();
            if mag > worst_mag {
                worst_mag = mag;
                worst = i;
            }
        }
        if worst_mag == 0 {
            break;
        }
        if x_hat[worst] > x[worst] {
            x_hat[worst] -= 1;
        } else {
            x_hat[worst] += 1;
        }
    }
    x_hat
}

/// Greedy integer refinement toward `target` inside the strict ball.
/// Considers single-coordinate and coordinate-pair unit moves; pair moves
/// matter on the ball boundary where every single step leaves the budget.
fn refine_toward(mut x_hat: Vec<u32>, x: &[u32], target: &[f64], radius: f64) -> Vec<u32> {
    let dim = x_hat.len();
    let apply = |v: &[u32], moves: &[(usize, i64)]| -> Option<Vec<u32>> {
        let mut cand = v.to_vec();
        for &(i, step) in moves {
            let nv = cand[i] as i64 + step;
            if nv < 0 {
                return None;
            }
            cand[i] = nv as u32;
        }
        Some(cand)
    };
    loop {
        let base = dist(&to_f64(&x_hat), target);
        let mut best: Option<(Vec<u32>, f64)> = None;
        let mut consider = |moves: &[(usize, i64)]| {
            if let Some(cand) = apply(&x_hat, moves) {
                if inside(&cand, x, radius) {
                    let d = dist(&to_f64(&cand), target);
                    if d < base - 1e-12 && best.as_ref().map_or(true, |(_, bd)| d < *bd) {
                        best = Some((cand, d));
                    }
                }
            }
        };
        for i in 0..dim {
            for si in [-1i64, 1] {
                consider(&[(i, si)]);
                for j in i + 1..dim {
                    for sj in [-1i64, 1] {
                        consider(&[(i, si), (j, sj)]);
                    }
                }
            }
        }
        match best {
            Some((cand, _)) => x_hat = cand,
            None => return x_hat,
        }
    }
}

/// Training-data attack: pick the nearest same-class benign training
/// feature x_b (ties broken by lowest ordinal), then return the integer
/// point nearest to x_b inside the strict budget ball around x.
pub fn attack_with_training_data(
    x: &[u32],
    label: usize,
    training_features: &[(Vec<u32>, usize)],
    budget: AttackBudget,
) -> Result<AttackOutcome> {
    let mut x_b: Option<&[u32]> = None;
    let mut best = f64::INFINITY;
    for (f, l) in training_features {
        if *l == label {
            let d = dist(&to_f64(f), &to_f64(x));
            if d < best {
                best = d;
                x_b = Some(f);
            }
        }
    }
    let x_b = to_f64(x_b.ok_or(Error::EmptyClass(label))?);
    let radius = budget.radius(x);
    if dist(&x_b, &to_f64(x)) < radius {
        return Ok(AttackOutcome {
            x_hat: x_b.iter().map(|&v| v as u32).collect(),
            flag: AttackFlag::Succeeded,
        });
    }
    // slide from x toward x_b to just inside the ball, then round
    let xf = to_f64(x);
    let d: Vec<f64> = x_b.iter().zip(&xf).map(|(b, o)| b - o).collect();
    let norm = l2(&d);
    let scale = if norm == 0.0 {
        0.0
    } else {
        (radius * (1.0 - 1e-9)) / norm
    };
    let y: Vec<f64> = xf.iter().zip(&d).map(|(o, dd)| o + scale * dd).collect();
    let x_hat = refine_toward(round_into_ball(&y, x, radius), x, &x_b, radius);
    if x_hat == x {
        return Ok(AttackOutcome {
            x_hat,
            flag: AttackFlag::InfeasibleBudget,
        });
    }
    Ok(AttackOutcome {
        x_hat,
        flag: AttackFlag::Succeeded,
    })
}

fn isolated_graph(y: &[f64]) -> GnnGraph {
    GnnGraph {
        features: vec![y.to_vec()],
        in_nbrs: vec![Vec::new()],
    }
}

fn isolated_loss(model: &Submodel, y: &[f64], label: usize) -> Result<f64> {
    evaluate_loss(model, &isolated_graph(y), &[0], &[label])
}

fn isolated_grad(model: &Submodel, y: &[f64], label: usize) -> Result<Vec<f64>> {
    let g = isolated_graph(y);
    let cache = forward_propagate(model, &g)?;
    let (_, dz) = cross_entropy(&cache, &[0], &[label]);
    let grads = backward(model, &g, &cache, &dz, true);
    Ok(grads.features.unwrap().remove(0))
}

fn project_ball(y: &mut [f64], x: &[f64], radius: f64) {
    for v in y.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let d = dist(y, x);
    if d >= radius && d > 0.0 {
        let scale = radius * (1.0 - 1e-9) / d;
        for (v, o) in y.iter_mut().zip(x) {
            *v = o + (*v - o) * scale;
        }
    }
}

/// Model-knowledge attack: projected gradient descent on the first
/// submodel's cross-entropy loss toward the node's own class, the node
/// treated as context-free.
pub fn attack_with_model(
    x: &[u32],
    label: usize,
    submodel: &Submodel,
    budget: AttackBudget,
    steps: usize,
) -> Result<AttackOutcome> {
    attack_with_gradients(
        x,
        budget,
        steps,
        |y| isolated_loss(submodel, y, label),
        |y| isolated_grad(submodel, y, label),
    )
}

fn attack_with_gradients(
    x: &[u32],
    budget: AttackBudget,
    steps: usize,
    loss_fn: impl Fn(&[f64]) -> Result<f64>,
    grad_fn: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<AttackOutcome> {
    let xf = to_f64(x);
    let radius = budget.radius(x);
    let initial = loss_fn(&xf)?;
    if radius <= 0.0 || steps == 0 {
        return Ok(AttackOutcome {
            x_hat: x.to_vec(),
            flag: AttackFlag::InfeasibleBudget,
        });
    }
    let step_len = radius / steps as f64;
    let mut y = xf.clone();
    let mut best_y = y.clone();
    let mut best_loss = initial;
    for _ in 0..steps {
        let g = grad_fn(&y)?;
        let gn = l2(&g);
        if gn == 0.0 {
            break;
        }
        for (v, gi) in y.iter_mut().zip(&g) {
            *v -= step_len * gi / gn;
        }
        project_ball(&mut y, &xf, radius);
        debug_assert!(dist(&y, &xf) < radius);
        let l = loss_fn(&y)?;
        if l < best_loss {
            best_loss = l;
            best_y = y.clone();
        }
    }
    let x_hat = round_into_ball(&best_y, x, radius);
    let final_loss = loss_fn(&to_f64(&x_hat))?;
    if final_loss > initial {
        return Ok(AttackOutcome {
            x_hat: x.to_vec(),
            flag: AttackFlag::NoImprovement,
        });
    }
    Ok(AttackOutcome {
        x_hat,
        flag: AttackFlag::Succeeded,
    })
}

/// One coupled benign neighbor: editing attack-node coordinate `i` by
/// delta shifts neighbor coordinate `coord_map[i]` by the same delta.
#[derive(Debug, Clone)]
pub struct NeighborCoupling {
    pub feature: Vec<u32>,
    pub label: usize,
    pub coord_map: Vec<Option<usize>>,
}

/// Neighbor-aware attack: minimizes the attacker's loss plus the losses of
/// coupled benign neighbors whose features move with the edit deltas. The
/// budget constrains the attack node's feature only.
pub fn attack_with_neighbors(
    x: &[u32],
    label: usize,
    submodel: &Submodel,
    neighbors: &[NeighborCoupling],
    budget: AttackBudget,
    steps: usize,
) -> Result<AttackOutcome> {
    let xf = to_f64(x);
    let neighbor_feature = |nb: &NeighborCoupling, y: &[f64]| -> Vec<f64> {
        let mut f = to_f64(&nb.feature);
        for (i, m) in nb.coord_map.iter().enumerate() {
            if let Some(j) = m {
                f[*j] = (f[*j] + (y[i] - xf[i])).max(0.0);
            }
        }
        f
    };
    let loss_fn = |y: &[f64]| -> Result<f64> {
        let mut total = isolated_loss(submodel, y, label)?;
        for nb in neighbors {
            total += isolated_loss(submodel, &neighbor_feature(nb, y), nb.label)?;
        }
        Ok(total)
    };
    let grad_fn = |y: &[f64]| -> Result<Vec<f64>> {
        let mut g = isolated_grad(submodel, y, label)?;
        for nb in neighbors {
            let nf = neighbor_feature(nb, y);
            let ng = isolated_grad(submodel, &nf, nb.label)?;
            for (i, m) in nb.coord_map.iter().enumerate() {
                if let Some(j) = m {
                    // chain rule through the counter coupling (identity
                    // unless the neighbor coordinate clipped at zero)
                    if nf[*j] > 0.0 || y[i] - xf[i] > 0.0 {
                        g[i] += ng[*j];
                    }
                }
            }
        }
        Ok(g)
    };
    attack_with_gradients(x, budget, steps, loss_fn, grad_fn)
}

/// One realized edit to the provenance graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EdgeEdit {
    Add {
        src: String,
        dst: String,
        edge_type: String,
    },
    Remove {
        edge_id: usize,
    },
}

/// Turns a feature delta into concrete edge edits. Added edges connect the
/// node with fresh attacker-controlled peers (typed by `apply_edits`);
/// removals take the newest matching edges first.
pub fn realize_perturbation(
    graph: &MemGraph,
    node: NodeId,
    x: &[u32],
    x_hat: &[u32],
    maps: &TypeMaps,
    _peer_type: &str,
) -> Result<Vec<EdgeEdit>> {
    let ne = maps.n_edge_types();
    let mut edits = Vec::new();
    let mut peer_seq = 0usize;
    let name = graph.node_name(node).to_string();
    for slot in 0..2 * ne {
        let delta = x_hat[slot] as i64 - x[slot] as i64;
        if delta == 0 {
            continue;
        }
        let etype = maps.edge_type_name(slot % ne).to_string();
        let incoming = slot < ne;
        if delta > 0 {
            for _ in 0..delta {
                let peer = format!("atk_peer_{}_{}", name, peer_seq);
                peer_seq += 1;
                let (src, dst) = if incoming {
                    (peer, name.clone())
                } else {
                    (name.clone(), peer)
                };
                edits.push(EdgeEdit::Add {
                    src,
                    dst,
                    edge_type: etype.clone(),
                });
            }
        } else {
            let mut candidates: Vec<usize> = graph
                .edges()
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    e.edge_type == etype
                        && if incoming { e.dst == node } else { e.src == node }
                })
                .map(|(i, _)| i)
                .collect();
            let need = (-delta) as usize;
            if candidates.len() < need {
                return Err(Error::NegativeCount {
                    slot,
                    requested: need as u32,
                    available: candidates.len() as u32,
                });
            }
            candidates.sort_unstable();
            for &eid in candidates.iter().rev().take(need) {
                edits.push(EdgeEdit::Remove { edge_id: eid });
            }
        }
    }
    Ok(edits)
}

/// Applies edits by rebuilding the graph: same nodes and ids, removed edges
/// skipped, added edges appended with peers interned as `peer_type` nodes.
pub fn apply_edits(graph: &MemGraph, edits: &[EdgeEdit], peer_type: &str) -> Result<MemGraph> {
    let removed: HashSet<usize> = edits
        .iter()
        .filter_map(|e| match e {
            EdgeEdit::Remove { edge_id } => Some(*edge_id),
            _ => None,
        })
        .collect();
    let mut out = MemGraph::new();
    for v in 0..graph.node_count() as NodeId {
        out.intern_node(graph.node_name(v), graph.node_type(v))?;
    }
    let mut last_ts = 0;
    for (i, e) in graph.edges().iter().enumerate() {
        if !removed.contains(&i) {
            out.append_internal(e.src, e.dst, &e.edge_type, e.timestamp);
            last_ts = last_ts.max(e.timestamp);
        }
    }
    for edit in edits {
        if let EdgeEdit::Add {
            src,
            dst,
            edge_type,
        } = edit
        {
            let existing_type = |n: &str| {
                graph
                    .lookup(n)
                    .map(|v| graph.node_type(v).to_string())
                    .unwrap_or_else(|| peer_type.to_string())
            };
            let s = out.intern_node(src, &existing_type(src))?;
            let d = out.intern_node(dst, &existing_type(dst))?;
            last_ts += 1;
            out.append_internal(s, d, edge_type, last_ts);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttackKind {
    TrainingData,
    Model,
    Neighbors,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::TrainingData => "training_data",
            AttackKind::Model => "model",
            AttackKind::Neighbors => "neighbors",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvasionRow {
    pub delta_a: f64,
    pub kind: &'static str,
    pub attacked: usize,
    pub counts: ConfusionCounts,
    pub metrics: MetricSet,
}

fn full_view(graph: &MemGraph, maps: &TypeMaps) -> Result<(LocalView, Vec<NodeId>)> {
    let all: Vec<NodeId> = (0..graph.node_count() as NodeId).collect();
    let sub = graph.subgraph_around(&all);
    let features = extract_subgraph_features(graph, &sub, maps)?;
    Ok((LocalView::build(graph, &sub, &features), all))
}

fn plain_counts(
    n_original: usize,
    anomalous: &HashSet<NodeId>,
    flagged: &HashSet<NodeId>,
) -> ConfusionCounts {
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for v in 0..n_original as NodeId {
        match (anomalous.contains(&v), flagged.contains(&v)) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    ConfusionCounts::new(tp, tn, fp, fn_)
}

/// Builds neighbor couplings for a node from its current graph context:
/// each in/out slot maps onto the dominant provider of that edge type.
fn couplings_for(
    graph: &MemGraph,
    view: &LocalView,
    node: NodeId,
    maps: &TypeMaps,
) -> Vec<NeighborCoupling> {
    let ne = maps.n_edge_types();
    let mut per_neighbor: HashMap<NodeId, Vec<Option<usize>>> = HashMap::new();
    for e in graph.edges() {
        let t = match maps.edge_type_id(&e.edge_type) {
            Ok(t) => t,
            Err(_) => continue,
        };
        if e.dst == node && e.src != node {
            // our in-slot t couples to the provider's out-slot
            per_neighbor
                .entry(e.src)
                .or_insert_with(|| vec![None; 2 * ne])[t] = Some(ne + t);
        } else if e.src == node && e.dst != node {
            per_neighbor
                .entry(e.dst)
                .or_insert_with(|| vec![None; 2 * ne])[ne + t] = Some(t);
        }
    }
    per_neighbor
        .into_iter()
        .filter_map(|(v, coord_map)| {
            let local = *view.index.get(&v)?;
            Some(NeighborCoupling {
                feature: view.gnn.features[local].iter().map(|&f| f as u32).collect(),
                label: view.labels[local],
                coord_map,
            })
        })
        .collect()
}

/// Full sweep: for each budget, craft and realize perturbations for every
/// flagged ground-truth-anomalous node, re-run detection, and tabulate the
/// resulting confusion counts over the original node set.
pub fn evaluate_evasion(
    ensemble: &Ensemble,
    graph: &MemGraph,
    anomalous: &[NodeId],
    training_features: &[(Vec<u32>, usize)],
    kind: AttackKind,
    deltas: &[f64],
    steps: usize,
    peer_type: &str,
) -> Result<Vec<EvasionRow>> {
    let maps = &ensemble.maps;
    let n_original = graph.node_count();
    let anomalous_set: HashSet<NodeId> = anomalous.iter().copied().collect();
    let (view, all) = full_view(graph, maps)?;
    let baseline: HashSet<NodeId> = detect(&view, &all, ensemble)?.anomalous.into_iter().collect();
    let submodel = ensemble
        .submodels
        .first()
        .ok_or(Error::InvalidModel("empty ensemble".into()))?;

    let mut rows = Vec::new();
    for &delta_a in deltas {
        let budget = AttackBudget { delta_a };
        let mut edits = Vec::new();
        let mut attacked = 0usize;
        if delta_a > 0.0 {
            for &v in anomalous {
                if !baseline.contains(&v) {
                    continue;
                }
                let local = view.index[&v];
                let x: Vec<u32> = view.gnn.features[local].iter().map(|&f| f as u32).collect();
                let label = view.labels[local];
                let outcome = match kind {
                    AttackKind::TrainingData => {
                        attack_with_training_data(&x, label, training_features, budget)?
                    }
                    AttackKind::Model => attack_with_model(&x, label, submodel, budget, steps)?,
                    AttackKind::Neighbors => {
                        let nbs = couplings_for(graph, &view, v, maps);
                        attack_with_neighbors(&x, label, submodel, &nbs, budget, steps)?
                    }
                };
                if outcome.flag == AttackFlag::Succeeded {
                    attacked += 1;
                    edits.extend(realize_perturbation(graph, v, &x, &outcome.x_hat, maps, peer_type)?);
                }
            }
        }
        let attacked_graph = apply_edits(graph, &edits, peer_type)?;
        let (aview, aall) = full_view(&attacked_graph, maps)?;
        let flagged: HashSet<NodeId> = detect(&aview, &aall, ensemble)?
            .anomalous
            .into_iter()
            .collect();
        let counts = plain_counts(n_original, &anomalous_set, &flagged);
        rows.push(EvasionRow {
            delta_a,
            kind: kind.name(),
            attacked,
            metrics: metrics(&counts),
            counts,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::ensemble::train_on_graph_sequence;
    use crate::features::extract_features;
    use crate::gnn::Matrix;
    use crate::synth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearby_benign_point_is_copied_exactly() {
        let training = vec![(vec![4u32, 5], 0usize), (vec![50, 50], 0), (vec![0, 0], 1)];
        let x = [5u32, 5];
        let out =
            attack_with_training_data(&x, 0, &training, AttackBudget { delta_a: 0.5 }).unwrap();
        assert_eq!(out.x_hat, vec![4, 5], "x_b inside ball is the optimum");
        assert_eq!(out.flag, AttackFlag::Succeeded);
    }

    #[test]
    fn vanishing_budget_is_infeasible() {
        let training = vec![(vec![0u32, 9], 0usize)];
        let x = [6u32, 0];
        let out =
            attack_with_training_data(&x, 0, &training, AttackBudget { delta_a: 1e-6 }).unwrap();
        assert_eq!(out.x_hat, x.to_vec());
        assert_eq!(out.flag, AttackFlag::InfeasibleBudget);
    }

    #[test]
    fn missing_class_errors() {
        let training = vec![(vec![1u32, 1], 1usize)];
        let err = attack_with_training_data(&[1, 1], 0, &training, AttackBudget { delta_a: 0.5 })
            .unwrap_err();
        assert!(matches!(err, Error::EmptyClass(0)));
    }

    #[test]
    fn training_attack_matches_grid_oracle_in_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..60 {
            let x = [rng.gen_range(1..9u32), rng.gen_range(0..9u32)];
            let xb = [rng.gen_range(0..12u32), rng.gen_range(0..12u32)];
            let budget = AttackBudget {
                delta_a: rng.gen_range(0.2..1.2),
            };
            let training = vec![(xb.to_vec(), 0usize)];
            let out = attack_with_training_data(&x, 0, &training, budget).unwrap();
            let radius = budget.radius(&x);
            // exhaustive integer search inside the strict ball
            let xbf = to_f64(&xb);
            let mut best: Option<(Vec<u32>, f64)> = None;
            for a in 0..=25u32 {
                for b in 0..=25u32 {
                    let cand = vec![a, b];
                    if !inside(&cand, &x, radius) {
                        continue;
                    }
                    let d = dist(&to_f64(&cand), &xbf);
                    if best.as_ref().map_or(true, |(_, bd)| d < bd - 1e-12) {
                        best = Some((cand, d));
                    }
                }
            }
            let (_, best_d) = best.unwrap();
            let got_d = dist(&to_f64(&out.x_hat), &xbf);
            assert!(
                (got_d - best_d).abs() < 1e-9,
                "trial {trial}: x {x:?} xb {xb:?} r {radius}: got {:?} ({got_d}), oracle dist {best_d}",
                out.x_hat
            );
            assert!(inside(&out.x_hat, &x, radius) || out.x_hat == x.to_vec());
        }
    }

    /// Linear one-layer submodel: z = W · concat(x, agg); convex CE in x.
    fn linear_submodel(w: Vec<f64>, in_dim: usize, out_dim: usize) -> Submodel {
        Submodel {
            k: 1,
            in_dim,
            hidden: 0,
            out_dim,
            weights: vec![Matrix {
                rows: out_dim,
                cols: 2 * in_dim,
                data: w,
            }],
            maps_fingerprint: [0; 32],
        }
    }

    #[test]
    fn model_attack_beats_grid_oracle_on_convex_instance() {
        // class 0 favored by coordinate 0, class 1 by coordinate 1
        let m = linear_submodel(vec![1.0, -1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0], 2, 2);
        let x = [0u32, 8];
        let budget = AttackBudget { delta_a: 0.9 };
        let out = attack_with_model(&x, 0, &m, budget, 100).unwrap();
        assert_eq!(out.flag, AttackFlag::Succeeded);
        let radius = budget.radius(&x);
        assert!(inside(&out.x_hat, &x, radius));
        let mut best = f64::INFINITY;
        for a in 0..=20u32 {
            for b in 0..=20u32 {
                let cand = vec![a, b];
                if inside(&cand, &x, radius) {
                    best = best.min(isolated_loss(&m, &to_f64(&cand), 0).unwrap());
                }
            }
        }
        let got = isolated_loss(&m, &to_f64(&out.x_hat), 0).unwrap();
        assert!(
            got <= best + 1e-3,
            "pgd loss {got} vs grid optimum {best} at {:?}",
            out.x_hat
        );
    }

    #[test]
    fn model_attack_fixed_point_when_already_confident() {
        let m = linear_submodel(vec![2.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0], 2, 2);
        let x = [9u32, 0];
        let out = attack_with_model(&x, 0, &m, AttackBudget { delta_a: 0.3 }, 50).unwrap();
        // loss is already near its floor; the attack must not worsen it
        let before = isolated_loss(&m, &to_f64(&x), 0).unwrap();
        let after = isolated_loss(&m, &to_f64(&out.x_hat), 0).unwrap();
        assert!(after <= before + 1e-12);
    }

    #[test]
    fn neighborless_joint_attack_degenerates_to_model_attack() {
        let m = linear_submodel(vec![1.0, -1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0], 2, 2);
        let x = [2u32, 7];
        let budget = AttackBudget { delta_a: 0.8 };
        let a = attack_with_model(&x, 0, &m, budget, 80).unwrap();
        let b = attack_with_neighbors(&x, 0, &m, &[], budget, 80).unwrap();
        assert_eq!(a.x_hat, b.x_hat);
        assert_eq!(a.flag, b.flag);
    }

    #[test]
    fn coupling_shifts_neighbor_coordinates_exactly() {
        let nb = NeighborCoupling {
            feature: vec![3, 0, 0, 5],
            label: 1,
            coord_map: vec![None, None, None, Some(0)],
        };
        // mirror of the internal coupling arithmetic: +2 on our slot 3
        let x = [0u32, 0, 0, 4];
        let y = [0.0, 0.0, 0.0, 6.0];
        let mut f = to_f64(&nb.feature);
        for (i, m) in nb.coord_map.iter().enumerate() {
            if let Some(j) = m {
                f[*j] += y[i] - x[i] as f64;
            }
        }
        assert_eq!(f, vec![5.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn realize_round_trips_through_feature_extraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..20 {
            let g = synth::two_role_graph(trial, 3);
            let maps = TypeMaps::build(&[&g]);
            let feats = extract_features(&g, &maps).unwrap();
            let node = g.lookup("hub1").unwrap();
            let x = feats[node as usize].vector.clone();
            let mut x_hat = x.clone();
            for slot in 0..x_hat.len() {
                let bump = rng.gen_range(0..3);
                let cut = rng.gen_range(0..2).min(x_hat[slot]);
                x_hat[slot] = x_hat[slot] + bump - cut;
            }
            let edits = realize_perturbation(&g, node, &x, &x_hat, &maps, "socket").unwrap();
            let g2 = apply_edits(&g, &edits, "socket").unwrap();
            let feats2 = extract_features(&g2, &maps).unwrap();
            assert_eq!(feats2[node as usize].vector, x_hat, "trial {trial}");
        }
    }

    #[test]
    fn identity_perturbation_is_empty_and_overdraw_errors() {
        let g = synth::two_role_graph(2, 3);
        let maps = TypeMaps::build(&[&g]);
        let feats = extract_features(&g, &maps).unwrap();
        let node = g.lookup("hub0").unwrap();
        let x = feats[node as usize].vector.clone();
        assert!(realize_perturbation(&g, node, &x, &x, &maps, "socket")
            .unwrap()
            .is_empty());
        let mut bad = x.clone();
        bad[0] = 0; // hub has no in-edges of type 0 to remove... unless x[0] == 0
        let mut overdraw = x.clone();
        let slot = x.iter().position(|&v| v == 0).unwrap_or(0);
        let _ = bad;
        // request removing from an empty slot by going "below zero" via a
        // different vector: impossible state simulated by asking for fewer
        // edges than exist in a populated slot is fine; use an in-slot the
        // hub never had
        overdraw[slot] = 0;
        if x[slot] == 0 {
            // force an actual overdraw: claim x had 2 where graph has 0
            let mut x_fake = x.clone();
            x_fake[slot] = 2;
            let err = realize_perturbation(&g, node, &x_fake, &overdraw, &maps, "socket");
            assert!(matches!(err, Err(Error::NegativeCount { .. })));
        }
    }

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

    #[test]
    fn sweep_baseline_and_robustness() {
        let train = synth::two_role_graph(1, 10);
        let cfg = small_cfg(1);
        let (ensemble, _) = train_on_graph_sequence(&[&train], &cfg).unwrap();
        let mut test = synth::two_role_graph(31, 10);
        let bad = synth::inject_anomalies(&mut test, 4, 9);
        let training_features: Vec<(Vec<u32>, usize)> = {
            let feats = extract_features(&train, &ensemble.maps).unwrap();
            feats.iter().map(|f| (f.vector.clone(), f.label)).collect()
        };
        // moderate budgets: with enough slack the copied benign feature
        // becomes exact and this attack does start to evade
        let deltas = [0.0, 0.25, 0.5];
        let rows = evaluate_evasion(
            &ensemble,
            &test,
            &bad,
            &training_features,
            AttackKind::TrainingData,
            &deltas,
            100,
            "socket",
        )
        .unwrap();
        // zero budget reproduces the baseline exactly
        assert_eq!(rows[0].attacked, 0);
        let baseline_fnr = rows[0].metrics.fnr.unwrap();
        assert_eq!(baseline_fnr, 0.0);
        // the training-data attack barely moves FNR at moderate budgets
        for r in &rows {
            assert!(
                (r.metrics.fnr.unwrap() - baseline_fnr).abs() <= 0.05 + 1e-12,
                "training-data attack moved FNR: {rows:?}"
            );
        }
    }

    #[test]
    fn model_attack_sweep_is_monotone_on_fixed_seed() {
        let train = synth::two_role_graph(1, 10);
        let cfg = small_cfg(1);
        let (ensemble, _) = train_on_graph_sequence(&[&train], &cfg).unwrap();
        let mut test = synth::two_role_graph(32, 10);
        let bad = synth::inject_anomalies(&mut test, 4, 10);
        let deltas = [0.0, 0.5, 1.0, 2.0];
        let rows = evaluate_evasion(
            &ensemble,
            &test,
            &bad,
            &[],
            AttackKind::Model,
            &deltas,
            100,
            "socket",
        )
        .unwrap();
        let fnrs: Vec<f64> = rows.iter().map(|r| r.metrics.fnr.unwrap()).collect();
        for w in fnrs.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "FNR curve not monotone: {fnrs:?}");
        }
    }
}
