//! GraphSAGE-mean classifier: forward propagation, backpropagation, and
//! minibatch training with an adaptive-moment optimizer.
//!
//! Layer rule for k = 1..K: aggregate the elementwise mean of in-neighbors'
//! previous-layer vectors (zero vector when there are none), apply
//! `sigma(W^k . concat(self, aggregate))`, then L2-normalize over all nodes.
//! The final layer produces raw scores for the softmax head instead, so the
//! classifier does not feed a normalized-rectified vector into cross-entropy.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Cursor, Read, Write};

use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"PSGM";
const MODEL_VERSION: u32 = 1;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out[r] = row.iter().zip(x).map(|(w, v)| w * v).sum();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One GraphSAGE classifier of the stacked ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Submodel {
    pub k: usize,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// W^1..W^K; W^k has shape d_k x 2*d_{k-1}.
    pub weights: Vec<Matrix>,
    pub maps_fingerprint: [u8; 32],
}

impl Submodel {
    fn layer_dims(k: usize, in_dim: usize, hidden: usize, out_dim: usize) -> Vec<usize> {
        let mut dims = vec![in_dim];
        for _ in 1..k {
            dims.push(hidden);
        }
        dims.push(out_dim);
        dims
    }

    pub fn init(
        k: usize,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        maps_fingerprint: [u8; 32],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(k >= 1);
        let dims = Self::layer_dims(k, in_dim, hidden, out_dim);
        let weights = (1..=k)
            .map(|l| Matrix::glorot(dims[l], 2 * dims[l - 1], rng))
            .collect();
        Submodel {
            k,
            in_dim,
            hidden,
            out_dim,
            weights,
            maps_fingerprint,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.write_u32::<LittleEndian>(MODEL_VERSION).unwrap();
        buf.write_u8(self.k as u8).unwrap();
        buf.write_u32::<LittleEndian>(self.in_dim as u32).unwrap();
        buf.write_u32::<LittleEndian>(self.hidden as u32).unwrap();
        buf.write_u32::<LittleEndian>(self.out_dim as u32).unwrap();
        buf.write_all(&self.maps_fingerprint).unwrap();
        for w in &self.weights {
            buf.write_u32::<LittleEndian>(w.rows as u32).unwrap();
            buf.write_u32::<LittleEndian>(w.cols as u32).unwrap();
            for &v in &w.data {
                buf.write_f64::<LittleEndian>(v).unwrap();
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        c.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::InvalidModel("bad magic".into()));
        }
        let version = c.read_u32::<LittleEndian>()?;
        if version != MODEL_VERSION {
            return Err(Error::InvalidModel(format!("unsupported version {version}")));
        }
        let k = c.read_u8()? as usize;
        let in_dim = c.read_u32::<LittleEndian>()? as usize;
        let hidden = c.read_u32::<LittleEndian>()? as usize;
        let out_dim = c.read_u32::<LittleEndian>()? as usize;
        let mut maps_fingerprint = [0u8; 32];
        c.read_exact(&mut maps_fingerprint)?;
        let mut weights = Vec::with_capacity(k);
        for _ in 0..k {
            let rows = c.read_u32::<LittleEndian>()? as usize;
            let cols = c.read_u32::<LittleEndian>()? as usize;
            let mut data = vec![0.0; rows * cols];
            for v in data.iter_mut() {
                *v = c.read_f64::<LittleEndian>()?;
            }
            weights.push(Matrix { rows, cols, data });
        }
        Ok(Submodel {
            k,
            in_dim,
            hidden,
            out_dim,
            weights,
            maps_fingerprint,
        })
    }
}

/// Compact graph view the model operates on: per-node float features and
/// in-neighbor lists in local indices.
#[derive(Debug, Clone, Default)]
pub struct GnnGraph {
    pub features: Vec<Vec<f64>>,
    pub in_nbrs: Vec<Vec<usize>>,
}

impl GnnGraph {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Intermediate state of one forward pass, kept for backpropagation.
pub struct ForwardCache {
    /// t^0..t^K per node; t^K holds raw scores z.
    pub t: Vec<Vec<Vec<f64>>>,
    /// agg^k used at layer k (mean of t^{k-1} over in-neighbors), k = 1..K.
    aggs: Vec<Vec<Vec<f64>>>,
    /// pre-activation vectors for hidden layers (k < K), used as relu mask.
    pres: Vec<Vec<Vec<f64>>>,
    /// L2 norms of the rectified hidden vectors before normalization.
    norms: Vec<Vec<f64>>,
}

fn mean_aggregate(prev: &[Vec<f64>], nbrs: &[usize], dim: usize) -> Vec<f64> {
    let mut agg = vec![0.0; dim];
    if nbrs.is_empty() {
        return agg;
    }
    for &u in nbrs {
        for (a, b) in agg.iter_mut().zip(&prev[u]) {
            *a += b;
        }
    }
    let c = 1.0 / nbrs.len() as f64;
    for a in agg.iter_mut() {
        *a *= c;
    }
    agg
}

/// Full forward propagation over a graph view. Returns per-node raw class
/// scores z plus the cache needed for gradients.
pub fn forward_propagate(model: &Submodel, graph: &GnnGraph) -> Result<ForwardCache> {
    let n = graph.len();
    for f in &graph.features {
        if f.len() != model.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "feature length {} != input width {}",
                f.len(),
                model.in_dim
            )));
        }
    }
    let mut t: Vec<Vec<Vec<f64>>> = vec![graph.features.clone()];
    let mut aggs = Vec::new();
    let mut pres = Vec::new();
    let mut norms = Vec::new();
    for k in 1..=model.k {
        let w = &model.weights[k - 1];
        let prev = &t[k - 1];
        let d_prev = if k == 1 { model.in_dim } else { model.hidden };
        let mut layer_agg = Vec::with_capacity(n);
        let mut layer_pre = Vec::with_capacity(n);
        for v in 0..n {
            let agg = mean_aggregate(prev, &graph.in_nbrs[v], d_prev);
            let mut cat = Vec::with_capacity(2 * d_prev);
            cat.extend_from_slice(&prev[v]);
            cat.extend_from_slice(&agg);
            let mut pre = vec![0.0; w.rows];
            w.matvec(&cat, &mut pre);
            layer_agg.push(agg);
            layer_pre.push(pre);
        }
        if k < model.k {
            // rectify then L2-normalize across the layer
            let mut layer_t = Vec::with_capacity(n);
            let mut layer_norm = Vec::with_capacity(n);
            for pre in &layer_pre {
                let h: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
                let s = h.iter().map(|x| x * x).sum::<f64>().sqrt();
                let tv = if s > 0.0 {
                    h.iter().map(|x| x / s).collect()
                } else {
                    h
                };
                layer_norm.push(s);
                layer_t.push(tv);
            }
            pres.push(layer_pre);
            norms.push(layer_norm);
            t.push(layer_t);
        } else {
            // classifier head takes the raw scores
            t.push(layer_pre.clone());
        }
        aggs.push(layer_agg);
    }
    Ok(ForwardCache { t, aggs, pres, norms })
}

/// Numerically stabilized softmax.
pub fn class_probabilities(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Confidence-ratio test: accepted iff the unique argmax equals the
/// true label and largest/second-largest probability exceeds `r`.
pub fn classify_with_confidence(probs: &[f64], true_label: usize, r: f64) -> bool {
    let mut best = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    // a tie for the maximum counts as misclassification
    let tied = probs
        .iter()
        .enumerate()
        .any(|(i, &p)| i != best && p == probs[best]);
    if tied || best != true_label {
        return false;
    }
    let second = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &p)| p)
        .fold(0.0f64, f64::max);
    let ratio = if second == 0.0 {
        f64::INFINITY
    } else {
        probs[best] / second
    };
    ratio > r
}

/// Per-matrix gradients plus, optionally, gradients w.r.t. input features.
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub features: Option<Vec<Vec<f64>>>,
}

/// Backpropagates mean cross-entropy over the given targets.
/// `dz` must hold the loss gradient w.r.t. z for each target (zeros
/// elsewhere are implied by omission).
pub fn backward(
    model: &Submodel,
    graph: &GnnGraph,
    cache: &ForwardCache,
    dz: &[(usize, Vec<f64>)],
    want_feature_grads: bool,
) -> Gradients {
    let n = graph.len();
    let mut grads: Vec<Matrix> = model
        .weights
        .iter()
        .map(|w| Matrix::zeros(w.rows, w.cols))
        .collect();
    // dt holds gradient w.r.t. t^k (post-normalization for k < K, raw for K)
    let mut dt: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (v, g) in dz {
        dt[*v] = g.clone();
    }
    for k in (1..=model.k).rev() {
        let w = &model.weights[k - 1];
        let d_prev = if k == 1 { model.in_dim } else { model.hidden };
        let d_out = w.rows;
        let mut dt_prev: Vec<Vec<f64>> = vec![Vec::new(); n];
        for v in 0..n {
            if dt[v].is_empty() {
                continue;
            }
            // through normalization and rectifier for hidden layers
            let dpre: Vec<f64> = if k < model.k {
                let tv = &cache.t[k][v];
                let s = cache.norms[k - 1][v];
                let g = &dt[v];
                let dh: Vec<f64> = if s > 0.0 {
                    let dot: f64 = tv.iter().zip(g).map(|(a, b)| a * b).sum();
                    tv.iter().zip(g).map(|(t, gi)| (gi - t * dot) / s).collect()
                } else {
                    g.clone()
                };
                cache.pres[k - 1][v]
                    .iter()
                    .zip(&dh)
                    .map(|(&p, &d)| if p > 0.0 { d } else { 0.0 })
                    .collect()
            } else {
                dt[v].clone()
            };
            let self_prev = &cache.t[k - 1][v];
            let agg = &cache.aggs[k - 1][v];
            // weight gradient: dpre outer concat(self, agg)
            let gm = &mut grads[k - 1];
            for r in 0..d_out {
                let d = dpre[r];
                if d == 0.0 {
                    continue;
                }
                let row = &mut gm.data[r * gm.cols..(r + 1) * gm.cols];
                for c in 0..d_prev {
                    row[c] += d * self_prev[c];
                    row[d_prev + c] += d * agg[c];
                }
            }
            // input gradients through the self and aggregate halves
            let mut dself = vec![0.0; d_prev];
            let mut dagg = vec![0.0; d_prev];
            for r in 0..d_out {
                let d = dpre[r];
                if d == 0.0 {
                    continue;
                }
                let row = &w.data[r * w.cols..(r + 1) * w.cols];
                for c in 0..d_prev {
                    dself[c] += d * row[c];
                    dagg[c] += d * row[d_prev + c];
                }
            }
            if dt_prev[v].is_empty() {
                dt_prev[v] = vec![0.0; d_prev];
            }
            for c in 0..d_prev {
                dt_prev[v][c] += dself[c];
            }
            let nbrs = &graph.in_nbrs[v];
            if !nbrs.is_empty() {
                let c0 = 1.0 / nbrs.len() as f64;
                for &u in nbrs {
                    if dt_prev[u].is_empty() {
                        dt_prev[u] = vec![0.0; d_prev];
                    }
                    for c in 0..d_prev {
                        dt_prev[u][c] += c0 * dagg[c];
                    }
                }
            }
        }
        dt = dt_prev;
    }
    let features = want_feature_grads.then(|| {
        (0..n)
            .map(|v| {
                if dt[v].is_empty() {
                    vec![0.0; model.in_dim]
                } else {
                    dt[v].clone()
                }
            })
            .collect()
    });
    Gradients {
        weights: grads,
        features,
    }
}

/// Mean cross-entropy over targets plus the per-target dz for backward.
pub fn cross_entropy(
    cache: &ForwardCache,
    targets: &[usize],
    labels: &[usize],
) -> (f64, Vec<(usize, Vec<f64>)>) {
    let z_layer = cache.t.last().unwrap();
    let inv = 1.0 / targets.len() as f64;
    let mut loss = 0.0;
    let mut dz = Vec::with_capacity(targets.len());
    for &v in targets {
        let probs = class_probabilities(&z_layer[v]);
        let y = labels[v];
        loss += -probs[y].max(1e-300).ln() * inv;
        let mut g: Vec<f64> = probs.iter().map(|&p| p * inv).collect();
        g[y] -= inv;
        dz.push((v, g));
    }
    (loss, dz)
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, weights: &[Matrix]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: weights.iter().map(|w| vec![0.0; w.data.len()]).collect(),
            v: weights.iter().map(|w| vec![0.0; w.data.len()]).collect(),
        }
    }

    fn apply(&mut self, weights: &mut [Matrix], grads: &[Matrix]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, w) in weights.iter_mut().enumerate() {
            for (j, g) in grads[i].data.iter().enumerate() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                w.data[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 5000,
            learning_rate: 0.01,
            hidden: 32,
            k: 2,
            seed: 0,
        }
    }
}

/// Trains one submodel on the graph view with supervised targets.
/// Deterministic under a fixed seed.
pub fn train_submodel(
    graph: &GnnGraph,
    labels: &[usize],
    targets: &[usize],
    in_dim: usize,
    out_dim: usize,
    maps_fingerprint: [u8; 32],
    cfg: &TrainConfig,
) -> Result<Submodel> {
    assert!(!targets.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Submodel::init(cfg.k, in_dim, cfg.hidden, out_dim, maps_fingerprint, &mut rng);
    let mut adam = Adam::new(cfg.learning_rate, &model.weights);
    let mut order: Vec<usize> = targets.to_vec();
    for it in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let cache = forward_propagate(&model, graph)?;
            let (loss, dz) = cross_entropy(&cache, batch, labels);
            if !loss.is_finite() {
                return Err(Error::Divergence { iteration: it });
            }
            let grads = backward(&model, graph, &cache, &dz, false);
            adam.apply(&mut model.weights, &grads.weights);
        }
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { iteration: it });
        }
    }
    Ok(model)
}

/// Mean cross-entropy of the model over the targets, no gradients.
pub fn evaluate_loss(model: &Submodel, graph: &GnnGraph, targets: &[usize], labels: &[usize]) -> Result<f64> {
    let cache = forward_propagate(model, graph)?;
    Ok(cross_entropy(&cache, targets, labels).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_graph(n: usize, dim: usize, seed: u64) -> (GnnGraph, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.0..4.0f64)).collect())
            .collect();
        let in_nbrs = (0..n).map(|v| if v == 0 { vec![] } else { vec![v - 1] }).collect();
        let labels = (0..n).map(|v| v % 3).collect();
        (GnnGraph { features, in_nbrs }, labels)
    }

    fn random_graph(n: usize, dim: usize, classes: usize, seed: u64) -> (GnnGraph, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.0..3.0f64)).collect())
            .collect();
        let in_nbrs: Vec<Vec<usize>> = (0..n)
            .map(|v| {
                (0..n)
                    .filter(|&u| u != v && rng.gen_bool(0.3))
                    .collect()
            })
            .collect();
        let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        (GnnGraph { features, in_nbrs }, labels)
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let graph = GnnGraph {
            features: vec![vec![1.0, 2.0]],
            in_nbrs: vec![vec![]],
        };
        let mut model = Submodel::init(2, 2, 3, 2, [0; 32], &mut ChaCha8Rng::seed_from_u64(0));
        for w in &mut model.weights {
            w.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let cache = forward_propagate(&model, &graph).unwrap();
        assert_eq!(cache.t.last().unwrap()[0], vec![0.0, 0.0]);
    }

    #[test]
    fn singleton_neighbor_aggregate_is_that_neighbor() {
        let graph = GnnGraph {
            features: vec![vec![1.0, 2.0], vec![5.0, 7.0]],
            in_nbrs: vec![vec![1], vec![]],
        };
        let model = Submodel::init(1, 2, 3, 2, [0; 32], &mut ChaCha8Rng::seed_from_u64(1));
        let cache = forward_propagate(&model, &graph).unwrap();
        assert_eq!(cache.aggs[0][0], vec![5.0, 7.0]);
    }

    /// Unbatched dense oracle: re-evaluate the layer rule with straight
    /// loops independent of the implementation path.
    #[test]
    fn forward_matches_dense_oracle() {
        let (graph, _) = line_graph(5, 3, 7);
        let model = Submodel::init(2, 3, 4, 3, [0; 32], &mut ChaCha8Rng::seed_from_u64(9));
        let cache = forward_propagate(&model, &graph).unwrap();

        let n = graph.len();
        let mut prev: Vec<Vec<f64>> = graph.features.clone();
        for k in 1..=2usize {
            let w = &model.weights[k - 1];
            let dp = prev[0].len();
            let mut next = Vec::new();
            for v in 0..n {
                let mut agg = vec![0.0; dp];
                let nbrs = &graph.in_nbrs[v];
                for &u in nbrs {
                    for c in 0..dp {
                        agg[c] += prev[u][c] / nbrs.len() as f64;
                    }
                }
                let mut pre = vec![0.0; w.rows];
                for r in 0..w.rows {
                    for c in 0..dp {
                        pre[r] += w.at(r, c) * prev[v][c] + w.at(r, dp + c) * agg[c];
                    }
                }
                next.push(pre);
            }
            if k < 2 {
                for h in next.iter_mut() {
                    h.iter_mut().for_each(|x| *x = x.max(0.0));
                    let s = h.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if s > 0.0 {
                        h.iter_mut().for_each(|x| *x /= s);
                    }
                }
            }
            prev = next;
        }
        for v in 0..n {
            for (a, b) in cache.t[2][v].iter().zip(&prev[v]) {
                assert!((a - b).abs() < 1e-6, "node {v}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn softmax_basics() {
        let p = class_probabilities(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let p = class_probabilities(&[1000.0, 0.0]);
        assert!(p[0] > 0.999999 && p[0].is_finite());
        // exp-normalize oracle on random inputs
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let p = class_probabilities(&z);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let s: f64 = z.iter().map(|x| x.exp()).sum();
            for (pi, zi) in p.iter().zip(&z) {
                assert!((pi - zi.exp() / s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn confidence_rules() {
        assert!(classify_with_confidence(&[0.6, 0.3, 0.1], 0, 1.5));
        assert!(!classify_with_confidence(&[0.5, 0.5], 0, 1.0));
        assert!(!classify_with_confidence(&[0.9, 0.1], 1, 1.0));
        // zero second-largest probability passes the ratio test
        assert!(classify_with_confidence(&[1.0, 0.0], 0, 1e12));
    }

    #[test]
    fn confidence_invariant_to_score_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let shifted: Vec<f64> = z.iter().map(|x| x + 17.5).collect();
            let label = rng.gen_range(0..4);
            let r = rng.gen_range(1.0..3.0);
            assert_eq!(
                classify_with_confidence(&class_probabilities(&z), label, r),
                classify_with_confidence(&class_probabilities(&shifted), label, r)
            );
        }
    }

    /// Central finite differences on every weight entry. This is the core
    /// correctness check for backprop through mean aggregation, concat,
    /// rectifier, L2 normalization, and softmax cross-entropy.
    #[test]
    fn weight_gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let n = 4 + (seed % 7) as usize; // 4..10 nodes
            let (graph, labels) = random_graph(n, 3, 3, seed);
            let targets: Vec<usize> = (0..n).collect();
            let mut model =
                Submodel::init(2, 3, 4, 3, [0; 32], &mut ChaCha8Rng::seed_from_u64(seed + 100));
            let cache = forward_propagate(&model, &graph).unwrap();
            let (_, dz) = cross_entropy(&cache, &targets, &labels);
            let analytic = backward(&model, &graph, &cache, &dz, false);

            let eps = 1e-5;
            for l in 0..model.weights.len() {
                for j in 0..model.weights[l].data.len() {
                    let orig = model.weights[l].data[j];
                    model.weights[l].data[j] = orig + eps;
                    let cp = forward_propagate(&model, &graph).unwrap();
                    let lp = cross_entropy(&cp, &targets, &labels).0;
                    model.weights[l].data[j] = orig - eps;
                    let cm = forward_propagate(&model, &graph).unwrap();
                    let lm = cross_entropy(&cm, &targets, &labels).0;
                    model.weights[l].data[j] = orig;
                    let numeric = (lp - lm) / (2.0 * eps);
                    let ana = analytic.weights[l].data[j];
                    let rel = (ana - numeric).abs() / (ana.abs() + numeric.abs()).max(1e-8);
                    assert!(
                        rel < 1e-4,
                        "seed {seed} layer {l} entry {j}: analytic {ana} numeric {numeric}"
                    );
                }
            }
        }
    }

    /// Same check for gradients w.r.t. input features (used by the evasion
    /// attack).
    #[test]
    fn feature_gradients_match_finite_differences() {
        for seed in 0..5u64 {
            let n = 5;
            let (mut graph, labels) = random_graph(n, 3, 3, seed + 40);
            let targets = vec![2usize];
            let model =
                Submodel::init(2, 3, 4, 3, [0; 32], &mut ChaCha8Rng::seed_from_u64(seed + 140));
            let cache = forward_propagate(&model, &graph).unwrap();
            let (_, dz) = cross_entropy(&cache, &targets, &labels);
            let analytic = backward(&model, &graph, &cache, &dz, true);
            let fg = analytic.features.unwrap();
            let eps = 1e-5;
            for v in 0..n {
                for c in 0..3 {
                    let orig = graph.features[v][c];
                    graph.features[v][c] = orig + eps;
                    let lp = {
                        let cp = forward_propagate(&model, &graph).unwrap();
                        cross_entropy(&cp, &targets, &labels).0
                    };
                    graph.features[v][c] = orig - eps;
                    let lm = {
                        let cm = forward_propagate(&model, &graph).unwrap();
                        cross_entropy(&cm, &targets, &labels).0
                    };
                    graph.features[v][c] = orig;
                    let numeric = (lp - lm) / (2.0 * eps);
                    let rel = (fg[v][c] - numeric).abs() / (fg[v][c].abs() + numeric.abs()).max(1e-8);
                    assert!(rel < 1e-4, "seed {seed} node {v} dim {c}");
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (graph, labels) = random_graph(8, 3, 3, 77);
        let targets: Vec<usize> = (0..8).collect();
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 3,
            hidden: 4,
            seed: 5,
            ..Default::default()
        };
        let a = train_submodel(&graph, &labels, &targets, 3, 3, [0; 32], &cfg).unwrap();
        let b = train_submodel(&graph, &labels, &targets, 3, 3, [0; 32], &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn degenerate_single_class_task_reaches_full_accuracy() {
        // all nodes of one class with identical features: trivially separable
        let graph = GnnGraph {
            features: vec![vec![1.0, 0.0]; 6],
            in_nbrs: vec![vec![]; 6],
        };
        let labels = vec![0usize; 6];
        let targets: Vec<usize> = (0..6).collect();
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 6,
            hidden: 4,
            seed: 1,
            ..Default::default()
        };
        let model = train_submodel(&graph, &labels, &targets, 2, 2, [0; 32], &cfg).unwrap();
        let cache = forward_propagate(&model, &graph).unwrap();
        for &v in &targets {
            let p = class_probabilities(&cache.t.last().unwrap()[v]);
            assert_eq!(p.iter().cloned().fold(0.0, f64::max), p[0]);
        }
    }

    /// Hidden-layer outputs carry unit L2 norm after normalization.
    #[test]
    fn hidden_layers_are_unit_norm() {
        let (graph, _) = random_graph(10, 4, 3, 3);
        let model = Submodel::init(2, 4, 5, 3, [0; 32], &mut ChaCha8Rng::seed_from_u64(8));
        let cache = forward_propagate(&model, &graph).unwrap();
        for v in 0..10 {
            let s: f64 = cache.t[1][v].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
        }
    }

    /// Changing a node >= 3 hops away leaves z unchanged when K = 2.
    #[test]
    fn two_hop_locality() {
        // chain 0 <- 1 <- 2 <- 3 (in-neighbors), query node 0
        let mut graph = GnnGraph {
            features: vec![vec![1.0, 2.0]; 4],
            in_nbrs: vec![vec![1], vec![2], vec![3], vec![]],
        };
        let model = Submodel::init(2, 2, 3, 2, [0; 32], &mut ChaCha8Rng::seed_from_u64(21));
        let z0 = forward_propagate(&model, &graph).unwrap().t[2][0].clone();
        graph.features[3] = vec![100.0, -50.0];
        let z0b = forward_propagate(&model, &graph).unwrap().t[2][0].clone();
        assert_eq!(z0, z0b);
    }

    /// Relabeling node ids permutes z identically.
    #[test]
    fn permutation_equivariance() {
        let (graph, _) = random_graph(6, 3, 3, 15);
        let model = Submodel::init(2, 3, 4, 3, [0; 32], &mut ChaCha8Rng::seed_from_u64(16));
        let z = forward_propagate(&model, &graph).unwrap().t[2].clone();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut inv = [0usize; 6];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let pg = GnnGraph {
            features: perm.iter().map(|&p| graph.features[p].clone()).collect(),
            in_nbrs: perm
                .iter()
                .map(|&p| graph.in_nbrs[p].iter().map(|&u| inv[u]).collect())
                .collect(),
        };
        let zp = forward_propagate(&model, &pg).unwrap().t[2].clone();
        for i in 0..6 {
            for (a, b) in zp[i].iter().zip(&z[perm[i]]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn serialization_round_trip_is_byte_stable() {
        let model = Submodel::init(2, 6, 4, 3, [7; 32], &mut ChaCha8Rng::seed_from_u64(2));
        let bytes = model.to_bytes();
        let back = Submodel::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let graph = GnnGraph {
            features: vec![vec![1.0, 2.0, 3.0]],
            in_nbrs: vec![vec![]],
        };
        let model = Submodel::init(2, 2, 3, 2, [0; 32], &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(
            forward_propagate(&model, &graph),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
