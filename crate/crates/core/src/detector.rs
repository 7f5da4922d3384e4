//! Black-box victim models.
//!
//! The main detector is a small relational message-passing classifier:
//! an input projection, two rounds of per-relation mean aggregation over
//! in- and out-neighbors combined with the self state, and a 2-logit head.
//! Node inputs are label-free (degree buckets, normalized age, content).
//!
//! Two auxiliary detectors ship alongside it: a nearest-centroid rule over
//! neighborhood statistics (deterministic, easy to reason about in attack
//! tests) and an oracle that returns the ground-truth label (for exercising
//! the no-misclassified-bots fallback path).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{DirectedSocialGraph, Label, NodeId, RelationTag};

const MAGIC: &[u8; 7] = b"BOTDET1";

/// Degree one-hot bucket upper bounds; the last bucket is open-ended.
const DEGREE_BUCKETS: [usize; 6] = [0, 1, 2, 4, 8, 16];
const N_BUCKETS: usize = DEGREE_BUCKETS.len() + 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub label: Label,
    pub prob_bot: f64,
}

/// Frozen detector verdicts for every node, plus class probability.
#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    map: BTreeMap<NodeId, Prediction>,
}

impl PredictionSet {
    pub fn insert(&mut self, v: NodeId, label: Label, prob_bot: f64) {
        self.map.insert(v, Prediction { label, prob_bot });
    }

    pub fn label(&self, v: NodeId) -> Option<Label> {
        self.map.get(&v).map(|p| p.label)
    }

    pub fn prediction(&self, v: NodeId) -> Option<Prediction> {
        self.map.get(&v).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, Prediction)> + '_ {
        self.map.iter().map(|(id, p)| (*id, *p))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Uniform black-box interface: a hard label per node, nothing else.
pub trait Detector {
    fn predict(&self, g: &DirectedSocialGraph, v: NodeId) -> Result<Label>;

    fn predict_all(&self, g: &DirectedSocialGraph) -> Result<PredictionSet> {
        let mut out = PredictionSet::default();
        for v in g.node_ids() {
            let label = self.predict(g, v)?;
            out.insert(v, label, if label == Label::Bot { 1.0 } else { 0.0 });
        }
        Ok(out)
    }
}

fn degree_bucket(total_degree: usize) -> usize {
    for (idx, &bound) in DEGREE_BUCKETS.iter().enumerate() {
        if total_degree <= bound {
            return idx;
        }
    }
    N_BUCKETS - 1
}

/// Label-free input features: one-hot degree bucket, age_norm, content.
fn node_input(g: &DirectedSocialGraph, v: NodeId, content_dim: usize) -> Result<Vec<f64>> {
    let rec = g.node(v).ok_or(Error::NodeNotFound(v))?;
    if rec.content.len() != content_dim {
        return Err(Error::ShapeError(format!(
            "node {v} content dim {} vs expected {content_dim}",
            rec.content.len()
        )));
    }
    let mut x = vec![0.0; N_BUCKETS + 1 + content_dim];
    x[degree_bucket(g.total_degree(v)?)] = 1.0;
    x[N_BUCKETS] = rec.age_norm;
    x[N_BUCKETS + 1..].copy_from_slice(&rec.content);
    Ok(x)
}

fn input_dim(content_dim: usize) -> usize {
    N_BUCKETS + 1 + content_dim
}

#[derive(Debug, Clone, PartialEq)]
struct MpLayer {
    w_self: Array2<f64>,
    w_in: Array2<f64>,
    w_out: Array2<f64>,
    bias: Array1<f64>,
}

/// Relational message-passing node classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    content_dim: usize,
    hidden_dim: usize,
    w_proj: Array2<f64>,
    b_proj: Array1<f64>,
    layers: Vec<MpLayer>,
    w_head: Array2<f64>,
    b_head: Array1<f64>,
    seed: u64,
    epochs: u64,
    split_fraction: f64,
}

#[derive(Debug, Clone, Copy)]
enum Direction {
    In,
    Out,
}

/// Per-relation mean aggregation of neighbor rows, summed across relation
/// tags. `h` is n x d in `ids` order.
fn aggregate(
    g: &DirectedSocialGraph,
    h: &Array2<f64>,
    ids: &[NodeId],
    index: &BTreeMap<NodeId, usize>,
    direction: Direction,
) -> Array2<f64> {
    let (_, d) = h.dim();
    let mut out = Array2::<f64>::zeros(h.dim());
    for (row, &v) in ids.iter().enumerate() {
        let edges = match direction {
            Direction::In => g.in_edges(v),
            Direction::Out => g.out_edges(v),
        };
        for group in tag_groups(edges) {
            let count = group.len() as f64;
            for other in group {
                let src = index[&other];
                for k in 0..d {
                    out[(row, k)] += h[(src, k)] / count;
                }
            }
        }
    }
    out
}

/// Adjoint of [`aggregate`]: scatters gradients back to neighbor rows.
fn aggregate_adjoint(
    g: &DirectedSocialGraph,
    grad: &Array2<f64>,
    ids: &[NodeId],
    index: &BTreeMap<NodeId, usize>,
    direction: Direction,
) -> Array2<f64> {
    let (_, d) = grad.dim();
    let mut out = Array2::<f64>::zeros(grad.dim());
    for (row, &v) in ids.iter().enumerate() {
        let edges = match direction {
            Direction::In => g.in_edges(v),
            Direction::Out => g.out_edges(v),
        };
        for group in tag_groups(edges) {
            let count = group.len() as f64;
            for other in group {
                let dst = index[&other];
                for k in 0..d {
                    out[(dst, k)] += grad[(row, k)] / count;
                }
            }
        }
    }
    out
}

/// Splits a sorted (node, tag) edge list into per-tag neighbor groups.
fn tag_groups(edges: &[(NodeId, RelationTag)]) -> Vec<Vec<NodeId>> {
    let mut by_tag: BTreeMap<RelationTag, Vec<NodeId>> = BTreeMap::new();
    for &(node, tag) in edges {
        by_tag.entry(tag).or_default().push(node);
    }
    by_tag.into_values().collect()
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|t| t.max(0.0))
}

fn relu_mask(pre: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    out.zip_mut_with(pre, |gq, &p| {
        if p <= 0.0 {
            *gq = 0.0;
        }
    });
    out
}

/// Per-layer forward intermediates: (m_in, m_out, pre-activation, h).
type LayerTrace = (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>);
/// Per-layer parameter gradients: (w_self, w_in, w_out, bias).
type LayerGrads = (Array2<f64>, Array2<f64>, Array2<f64>, Array1<f64>);

struct Forward {
    x: Array2<f64>,
    pre0: Array2<f64>,
    h0: Array2<f64>,
    layer_traces: Vec<LayerTrace>,
    logits: Array2<f64>,
}

impl DetectorModel {
    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn init(content_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d_in = input_dim(content_dim);
        let mut mat = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
        };
        let w_proj = mat(hidden_dim, d_in);
        let layers = (0..2)
            .map(|_| MpLayer {
                w_self: mat(hidden_dim, hidden_dim),
                w_in: mat(hidden_dim, hidden_dim),
                w_out: mat(hidden_dim, hidden_dim),
                bias: Array1::zeros(hidden_dim),
            })
            .collect();
        let w_head = mat(2, hidden_dim);
        Self {
            content_dim,
            hidden_dim,
            w_proj,
            b_proj: Array1::zeros(hidden_dim),
            layers,
            w_head,
            b_head: Array1::zeros(2),
            seed,
            epochs: 0,
            split_fraction: 0.0,
        }
    }

    fn forward(&self, g: &DirectedSocialGraph) -> Result<(Vec<NodeId>, Forward)> {
        let ids: Vec<NodeId> = g.node_ids().collect();
        let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let n = ids.len();
        let d_in = input_dim(self.content_dim);
        let mut x = Array2::<f64>::zeros((n, d_in));
        for (row, &v) in ids.iter().enumerate() {
            let features = node_input(g, v, self.content_dim)?;
            for (k, &val) in features.iter().enumerate() {
                x[(row, k)] = val;
            }
        }
        let pre0 = x.dot(&self.w_proj.t()) + &self.b_proj;
        let h0 = relu(&pre0);
        let mut h = h0.clone();
        let mut layer_traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let m_in = aggregate(g, &h, &ids, &index, Direction::In);
            let m_out = aggregate(g, &h, &ids, &index, Direction::Out);
            let pre = h.dot(&layer.w_self.t())
                + m_in.dot(&layer.w_in.t())
                + m_out.dot(&layer.w_out.t())
                + &layer.bias;
            let next = relu(&pre);
            layer_traces.push((m_in, m_out, pre, next.clone()));
            h = next;
        }
        let logits = h.dot(&self.w_head.t()) + &self.b_head;
        Ok((
            ids,
            Forward {
                x,
                pre0,
                h0,
                layer_traces,
                logits,
            },
        ))
    }

    /// Argmax over the two logits; exact ties go to bot.
    pub fn predict_node(&self, g: &DirectedSocialGraph, v: NodeId) -> Result<Prediction> {
        g.node(v).ok_or(Error::NodeNotFound(v))?;
        let (ids, fwd) = self.forward(g)?;
        let row = ids.binary_search(&v).expect("node listed");
        let human = fwd.logits[(row, 0)];
        let bot = fwd.logits[(row, 1)];
        let prob_bot = softmax_bot(human, bot);
        let label = if bot >= human {
            Label::Bot
        } else {
            Label::Human
        };
        Ok(Prediction { label, prob_bot })
    }

    pub fn predictions(&self, g: &DirectedSocialGraph) -> Result<PredictionSet> {
        let (ids, fwd) = self.forward(g)?;
        let mut out = PredictionSet::default();
        for (row, &v) in ids.iter().enumerate() {
            let human = fwd.logits[(row, 0)];
            let bot = fwd.logits[(row, 1)];
            let label = if bot >= human {
                Label::Bot
            } else {
                Label::Human
            };
            out.insert(v, label, softmax_bot(human, bot));
        }
        Ok(out)
    }

    /// Fraction of `nodes` whose prediction matches the ground-truth label.
    pub fn accuracy_on(&self, g: &DirectedSocialGraph, nodes: &[NodeId]) -> Result<f64> {
        if nodes.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predictions(g)?;
        let correct = nodes
            .iter()
            .filter(|&&v| preds.label(v) == g.label(v))
            .count();
        Ok(correct as f64 / nodes.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [
            self.content_dim as u64,
            self.hidden_dim as u64,
            self.seed,
            self.epochs,
        ] {
            w.write_u64::<LittleEndian>(v)?;
        }
        w.write_f64::<LittleEndian>(self.split_fraction)?;
        let mut blocks: Vec<&[f64]> = vec![
            self.w_proj.as_slice().unwrap(),
            self.b_proj.as_slice().unwrap(),
        ];
        for layer in &self.layers {
            blocks.push(layer.w_self.as_slice().unwrap());
            blocks.push(layer.w_in.as_slice().unwrap());
            blocks.push(layer.w_out.as_slice().unwrap());
            blocks.push(layer.bias.as_slice().unwrap());
        }
        blocks.push(self.w_head.as_slice().unwrap());
        blocks.push(self.b_head.as_slice().unwrap());
        for block in blocks {
            for &x in block {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)
            .map_err(|_| Error::FormatError("file too short for magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::FormatError(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let mut header = [0u64; 4];
        for h in header.iter_mut() {
            *h = r
                .read_u64::<LittleEndian>()
                .map_err(|_| Error::FormatError("truncated header".into()))?;
        }
        let split_fraction = r
            .read_f64::<LittleEndian>()
            .map_err(|_| Error::FormatError("truncated header".into()))?;
        let (content_dim, hidden_dim) = (header[0] as usize, header[1] as usize);
        if hidden_dim == 0 || hidden_dim > 1 << 16 || content_dim > 1 << 20 {
            return Err(Error::FormatError("implausible dimensions".into()));
        }
        let d_in = input_dim(content_dim);
        let mut read_block = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                out.push(
                    r.read_f64::<LittleEndian>()
                        .map_err(|_| Error::FormatError("truncated weight block".into()))?,
                );
            }
            Ok(out)
        };
        let shape = |rows: usize, cols: usize, data: Vec<f64>| {
            Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::FormatError(e.to_string()))
        };
        let w_proj = shape(hidden_dim, d_in, read_block(hidden_dim * d_in)?)?;
        let b_proj = Array1::from_vec(read_block(hidden_dim)?);
        let mut layers = Vec::with_capacity(2);
        for _ in 0..2 {
            layers.push(MpLayer {
                w_self: shape(hidden_dim, hidden_dim, read_block(hidden_dim * hidden_dim)?)?,
                w_in: shape(hidden_dim, hidden_dim, read_block(hidden_dim * hidden_dim)?)?,
                w_out: shape(hidden_dim, hidden_dim, read_block(hidden_dim * hidden_dim)?)?,
                bias: Array1::from_vec(read_block(hidden_dim)?),
            });
        }
        let w_head = shape(2, hidden_dim, read_block(2 * hidden_dim)?)?;
        let b_head = Array1::from_vec(read_block(2)?);
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::FormatError(
                "trailing bytes after weight blocks".into(),
            ));
        }
        Ok(Self {
            content_dim,
            hidden_dim,
            w_proj,
            b_proj,
            layers,
            w_head,
            b_head,
            seed: header[2],
            epochs: header[3],
            split_fraction,
        })
    }
}

impl Detector for DetectorModel {
    fn predict(&self, g: &DirectedSocialGraph, v: NodeId) -> Result<Label> {
        Ok(self.predict_node(g, v)?.label)
    }

    fn predict_all(&self, g: &DirectedSocialGraph) -> Result<PredictionSet> {
        self.predictions(g)
    }
}

fn softmax_bot(human_logit: f64, bot_logit: f64) -> f64 {
    let m = human_logit.max(bot_logit);
    let eh = (human_logit - m).exp();
    let eb = (bot_logit - m).exp();
    eb / (eh + eb)
}

/// Detector training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DetectorTrainConfig {
    pub split_fraction: f64,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            split_fraction: 0.7,
            epochs: 300,
            hidden_dim: 32,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

/// Full-batch cross-entropy training of the message-passing detector.
pub fn train_detector(g: &DirectedSocialGraph, cfg: &DetectorTrainConfig) -> Result<DetectorModel> {
    if !(0.0..=1.0).contains(&cfg.split_fraction) {
        return Err(Error::InvalidParams(format!(
            "split fraction {} outside [0,1]",
            cfg.split_fraction
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut ids: Vec<NodeId> = g.node_ids().collect();
    let n = ids.len();
    ids.shuffle(&mut rng);
    let train_count = ((cfg.split_fraction * n as f64).floor() as usize).min(n);
    let train_nodes = ids[..train_count].to_vec();
    let has_human = train_nodes
        .iter()
        .any(|&v| g.label(v) == Some(Label::Human));
    let has_bot = train_nodes.iter().any(|&v| g.label(v) == Some(Label::Bot));
    if !(has_human && has_bot) {
        return Err(Error::DegenerateSplit(
            "training split does not contain both classes".into(),
        ));
    }

    let mut model = DetectorModel::init(g.content_dim(), cfg.hidden_dim, cfg.seed);
    model.split_fraction = cfg.split_fraction;
    model.epochs = cfg.epochs as u64;
    if cfg.epochs == 0 {
        return Ok(model);
    }

    let all_ids: Vec<NodeId> = g.node_ids().collect();
    let index: BTreeMap<NodeId, usize> = all_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let train_rows: Vec<usize> = train_nodes.iter().map(|v| index[v]).collect();
    let targets: Vec<usize> = train_nodes
        .iter()
        .map(|&v| match g.label(v).expect("labeled") {
            Label::Human => 0,
            Label::Bot => 1,
        })
        .collect();

    for _epoch in 0..cfg.epochs {
        let (ids_fwd, fwd) = model.forward(g)?;
        debug_assert_eq!(ids_fwd, all_ids);
        model.backward_step(
            g,
            &all_ids,
            &index,
            &fwd,
            &train_rows,
            &targets,
            cfg.learning_rate,
        );
    }
    Ok(model)
}

impl DetectorModel {
    #[allow(clippy::too_many_arguments)]
    fn backward_step(
        &mut self,
        g: &DirectedSocialGraph,
        ids: &[NodeId],
        index: &BTreeMap<NodeId, usize>,
        fwd: &Forward,
        train_rows: &[usize],
        targets: &[usize],
        learning_rate: f64,
    ) {
        let n = ids.len();
        let scale = 1.0 / train_rows.len() as f64;
        // d CE / d logits, masked to the train rows.
        let mut d_logits = Array2::<f64>::zeros((n, 2));
        for (&row, &target) in train_rows.iter().zip(targets) {
            let human = fwd.logits[(row, 0)];
            let bot = fwd.logits[(row, 1)];
            let m = human.max(bot);
            let eh = (human - m).exp();
            let eb = (bot - m).exp();
            let z = eh + eb;
            d_logits[(row, 0)] = (eh / z - if target == 0 { 1.0 } else { 0.0 }) * scale;
            d_logits[(row, 1)] = (eb / z - if target == 1 { 1.0 } else { 0.0 }) * scale;
        }

        let h_last = &fwd.layer_traces.last().expect("two layers").3;
        let g_w_head = d_logits.t().dot(h_last);
        let g_b_head = d_logits.sum_axis(ndarray::Axis(0));
        let mut grad_h = d_logits.dot(&self.w_head);

        let mut layer_grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        for (layer_idx, layer) in self.layers.iter().enumerate().rev() {
            let (m_in, m_out, pre, _) = &fwd.layer_traces[layer_idx];
            let h_below: &Array2<f64> = if layer_idx == 0 {
                &fwd.h0
            } else {
                &fwd.layer_traces[layer_idx - 1].3
            };
            let d_pre = relu_mask(pre, &grad_h);
            let g_self = d_pre.t().dot(h_below);
            let g_in = d_pre.t().dot(m_in);
            let g_out = d_pre.t().dot(m_out);
            let g_bias = d_pre.sum_axis(ndarray::Axis(0));
            // Gradient to the layer input: self path plus both aggregation
            // adjoints.
            let into_self = d_pre.dot(&layer.w_self);
            let into_in = aggregate_adjoint(g, &d_pre.dot(&layer.w_in), ids, index, Direction::In);
            let into_out =
                aggregate_adjoint(g, &d_pre.dot(&layer.w_out), ids, index, Direction::Out);
            grad_h = into_self + into_in + into_out;
            layer_grads.push((g_self, g_in, g_out, g_bias));
        }
        layer_grads.reverse();

        let d_pre0 = relu_mask(&fwd.pre0, &grad_h);
        let g_w_proj = d_pre0.t().dot(&fwd.x);
        let g_b_proj = d_pre0.sum_axis(ndarray::Axis(0));

        let lr = learning_rate;
        self.w_head.zip_mut_with(&g_w_head, |w, &d| *w -= lr * d);
        self.b_head.zip_mut_with(&g_b_head, |w, &d| *w -= lr * d);
        for (layer, (gs, gi, go, gb)) in self.layers.iter_mut().zip(layer_grads) {
            layer.w_self.zip_mut_with(&gs, |w, &d| *w -= lr * d);
            layer.w_in.zip_mut_with(&gi, |w, &d| *w -= lr * d);
            layer.w_out.zip_mut_with(&go, |w, &d| *w -= lr * d);
            layer.bias.zip_mut_with(&gb, |w, &d| *w -= lr * d);
        }
        self.w_proj.zip_mut_with(&g_w_proj, |w, &d| *w -= lr * d);
        self.b_proj.zip_mut_with(&g_b_proj, |w, &d| *w -= lr * d);
    }
}

/// Nearest-centroid rule over 1-hop neighborhood statistics
/// [mean deg_in, mean deg_out, mean age_norm, mean content...]; isolated
/// nodes map to the zero vector. Ties go to bot.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroidDetector {
    centroid_human: Vec<f64>,
    centroid_bot: Vec<f64>,
}

impl NearestCentroidDetector {
    pub fn stats(g: &DirectedSocialGraph, v: NodeId) -> Result<Vec<f64>> {
        let dim = 3 + g.content_dim();
        let neighbors = g.ego_neighborhood(v, 1)?;
        let mut acc = vec![0.0; dim];
        if neighbors.is_empty() {
            return Ok(acc);
        }
        for &u in &neighbors {
            let (din, dout) = g.degree_stats(u)?;
            let rec = g.node(u).expect("neighbor exists");
            acc[0] += din as f64;
            acc[1] += dout as f64;
            acc[2] += rec.age_norm;
            for (k, &c) in rec.content.iter().enumerate() {
                acc[3 + k] += c;
            }
        }
        let count = neighbors.len() as f64;
        for a in acc.iter_mut() {
            *a /= count;
        }
        Ok(acc)
    }

    pub fn fit(g: &DirectedSocialGraph) -> Result<Self> {
        let dim = 3 + g.content_dim();
        let mut sums = [vec![0.0; dim], vec![0.0; dim]];
        let mut counts = [0usize; 2];
        for (v, rec) in g.nodes() {
            let cls = match rec.label {
                Label::Human => 0,
                Label::Bot => 1,
            };
            let s = Self::stats(g, v)?;
            for (k, &x) in s.iter().enumerate() {
                sums[cls][k] += x;
            }
            counts[cls] += 1;
        }
        if counts[0] == 0 || counts[1] == 0 {
            return Err(Error::DegenerateSplit(
                "centroid fit needs both classes".into(),
            ));
        }
        for cls in 0..2 {
            for x in sums[cls].iter_mut() {
                *x /= counts[cls] as f64;
            }
        }
        let [centroid_human, centroid_bot] = sums;
        Ok(Self {
            centroid_human,
            centroid_bot,
        })
    }
}

impl Detector for NearestCentroidDetector {
    fn predict(&self, g: &DirectedSocialGraph, v: NodeId) -> Result<Label> {
        let s = Self::stats(g, v)?;
        let d2 =
            |c: &[f64]| -> f64 { s.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() };
        Ok(if d2(&self.centroid_human) < d2(&self.centroid_bot) {
            Label::Human
        } else {
            Label::Bot
        })
    }
}

/// Returns the ground-truth label; used to exercise the perfect-detector
/// fallback path.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleDetector;

impl Detector for OracleDetector {
    fn predict(&self, g: &DirectedSocialGraph, v: NodeId) -> Result<Label> {
        g.label(v).ok_or(Error::NodeNotFound(v))
    }
}
