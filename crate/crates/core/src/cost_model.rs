//! Learnable ground cost between neighbor feature vectors: a two-layer MLP
//! embedding followed by a squared Mahalanobis distance `(e - e')^T L^T L
//! (e - e')`. Gradients are hand-rolled reverse mode; checkpoints are a
//! small versioned binary container.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::features::NeighborAtom;
use crate::features::NeighborMeasure;
use crate::ot::CostMatrix;

const MAGIC: &[u8; 6] = b"OTGEO1";

/// Hidden width from the reference configuration.
pub const DEFAULT_HIDDEN_DIM: usize = 128;
/// Embedding width from the reference configuration.
pub const DEFAULT_EMB_DIM: usize = 256;

/// Floor applied to per-coordinate standard deviations so constant features
/// do not blow up the standardization.
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    /// out x in, row-major semantics.
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl DenseLayer {
    fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }
}

/// The learned OT geometry: MLP weights plus the PSD factor L (M = L^T L)
/// and the feature standardization fitted on the training graph.
#[derive(Debug, Clone, PartialEq)]
pub struct OtGeometry {
    input_dim: usize,
    hidden_dim: usize,
    emb_dim: usize,
    layer1: DenseLayer,
    layer2: DenseLayer,
    l_factor: Array2<f64>,
    feat_mean: Array1<f64>,
    feat_std: Array1<f64>,
    rng_seed: u64,
}

/// Per-parameter gradient tensors mirroring [`OtGeometry`] shapes.
#[derive(Debug, Clone)]
pub struct CostGradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub l: Array2<f64>,
}

impl CostGradients {
    pub fn zeros_like(geo: &OtGeometry) -> Self {
        Self {
            w1: Array2::zeros(geo.layer1.weight.dim()),
            b1: Array1::zeros(geo.layer1.bias.len()),
            w2: Array2::zeros(geo.layer2.weight.dim()),
            b2: Array1::zeros(geo.layer2.bias.len()),
            l: Array2::zeros(geo.l_factor.dim()),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.w1.mapv_inplace(|g| g * factor);
        self.b1.mapv_inplace(|g| g * factor);
        self.w2.mapv_inplace(|g| g * factor);
        self.b2.mapv_inplace(|g| g * factor);
        self.l.mapv_inplace(|g| g * factor);
    }

    pub fn max_abs(&self) -> f64 {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .chain(self.l.iter())
            .fold(0.0_f64, |m, &g| m.max(g.abs()))
    }

    /// All gradient entries in the parameter order of
    /// [`OtGeometry::bump_parameter`]: w1, b1, w2, b2, L, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .chain(self.l.iter())
            .copied()
            .collect()
    }
}

/// Cost matrix from precomputed metric embeddings; lets callers embed
/// each node once when many pairs share atoms under a fixed geometry.
pub fn cost_matrix_from_embeddings(
    qa: &[Array1<f64>],
    qb: &[Array1<f64>],
    mu_a: &NeighborMeasure,
    mu_b: &NeighborMeasure,
) -> Result<CostMatrix> {
    let values = Array2::from_shape_fn((qa.len(), qb.len()), |(i, j)| {
        qa[i]
            .iter()
            .zip(qb[j].iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    });
    CostMatrix::from_measures(values, mu_a, mu_b)
}

/// One (z, z') pair with an upstream weight dL/dC_ij for gradient
/// accumulation.
pub struct CostPair<'a> {
    pub z: &'a [f64],
    pub z_prime: &'a [f64],
    pub upstream: f64,
}

struct ForwardTrace {
    x: Array1<f64>,
    pre1: Array1<f64>,
    h1: Array1<f64>,
    emb: Array1<f64>,
}

impl OtGeometry {
    /// Fresh geometry: fan-in scaled uniform MLP weights, identity L, unit
    /// standardization. Identity L makes the untrained cost plain squared
    /// Euclidean distance in embedding space.
    pub fn new(input_dim: usize, hidden_dim: usize, emb_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut init_layer = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            DenseLayer {
                weight: Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound)),
                bias: Array1::zeros(rows),
            }
        };
        let layer1 = init_layer(hidden_dim, input_dim);
        let layer2 = init_layer(emb_dim, hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            emb_dim,
            layer1,
            layer2,
            l_factor: Array2::eye(emb_dim),
            feat_mean: Array1::zeros(input_dim),
            feat_std: Array1::ones(input_dim),
            rng_seed: seed,
        }
    }

    pub fn with_default_dims(input_dim: usize, seed: u64) -> Self {
        Self::new(input_dim, DEFAULT_HIDDEN_DIM, DEFAULT_EMB_DIM, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Fits per-coordinate standardization statistics over the given atoms.
    pub fn fit_standardization<'a>(&mut self, atoms: impl Iterator<Item = &'a NeighborAtom>) {
        let mut count = 0usize;
        let mut sum = Array1::<f64>::zeros(self.input_dim);
        let mut sum_sq = Array1::<f64>::zeros(self.input_dim);
        for atom in atoms {
            for (k, &x) in atom.feat.iter().enumerate() {
                sum[k] += x;
                sum_sq[k] += x * x;
            }
            count += 1;
        }
        if count == 0 {
            return;
        }
        let n = count as f64;
        let mean = sum / n;
        let var = sum_sq / n - &mean * &mean;
        self.feat_mean = mean;
        self.feat_std = var.mapv(|v| v.max(0.0).sqrt().max(STD_FLOOR));
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.input_dim {
            return Err(Error::ShapeError(format!(
                "feature vector has length {}, geometry expects {}",
                z.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn forward(&self, z: &[f64]) -> ForwardTrace {
        let raw = Array1::from_iter(z.iter().copied());
        let x = (raw - &self.feat_mean) / &self.feat_std;
        let pre1 = self.layer1.forward(&x);
        let h1 = pre1.mapv(|t| t.max(0.0));
        let emb = self.layer2.forward(&h1);
        ForwardTrace { x, pre1, h1, emb }
    }

    /// Deterministic MLP forward pass.
    pub fn embed(&self, z: &[f64]) -> Result<Array1<f64>> {
        self.check_dim(z)?;
        Ok(self.forward(z).emb)
    }

    /// Embedding pushed through L; ground cost is the squared Euclidean
    /// distance between two such vectors.
    pub fn embed_metric(&self, z: &[f64]) -> Result<Array1<f64>> {
        Ok(self.l_factor.dot(&self.embed(z)?))
    }

    /// Squared Mahalanobis ground cost; symmetric and nonnegative.
    pub fn ground_cost(&self, z: &[f64], z_prime: &[f64]) -> Result<f64> {
        let q = self.embed_metric(z)?;
        let q_prime = self.embed_metric(z_prime)?;
        Ok((&q - &q_prime).mapv(|d| d * d).sum())
    }

    /// Metric embeddings (L * h_theta) of every atom of a measure; two
    /// such vectors give the ground cost as a squared Euclidean distance.
    pub fn metric_embeddings(&self, mu: &NeighborMeasure) -> Result<Vec<Array1<f64>>> {
        mu.atoms
            .iter()
            .map(|atom| self.embed_metric(&atom.feat))
            .collect()
    }

    /// Assembles the cost matrix between two neighborhood measures, with
    /// the measures' weights as marginals. Each atom is embedded once.
    pub fn cost_matrix_for(
        &self,
        mu_a: &NeighborMeasure,
        mu_b: &NeighborMeasure,
    ) -> Result<CostMatrix> {
        let qa = self.metric_embeddings(mu_a)?;
        let qb = self.metric_embeddings(mu_b)?;
        cost_matrix_from_embeddings(&qa, &qb, mu_a, mu_b)
    }

    /// Accumulates parameter gradients for a weighted batch of cost
    /// evaluations: for each pair, d(sum_k w_k c(z_k, z'_k))/d(theta, L).
    pub fn backward(&self, pairs: &[CostPair<'_>]) -> Result<CostGradients> {
        let mut grads = CostGradients::zeros_like(self);
        for pair in pairs {
            self.check_dim(pair.z)?;
            self.check_dim(pair.z_prime)?;
            if !pair.upstream.is_finite() {
                return Err(Error::InvalidParams("non-finite upstream weight".into()));
            }
            if pair.upstream == 0.0 {
                continue;
            }
            let ta = self.forward(pair.z);
            let tb = self.forward(pair.z_prime);
            let diff = &ta.emb - &tb.emb;
            let ld = self.l_factor.dot(&diff);
            // dc/dL = 2 L d d^T
            for ((r, c), g) in grads.l.indexed_iter_mut() {
                *g += pair.upstream * 2.0 * ld[r] * diff[c];
            }
            // dc/de = 2 M d = 2 L^T (L d); negated for the second argument.
            let gd = self.l_factor.t().dot(&ld) * 2.0;
            self.backprop_embedding(&ta, &(&gd * pair.upstream), &mut grads);
            self.backprop_embedding(&tb, &(&gd * (-pair.upstream)), &mut grads);
        }
        Ok(grads)
    }

    fn backprop_embedding(
        &self,
        trace: &ForwardTrace,
        grad_emb: &Array1<f64>,
        grads: &mut CostGradients,
    ) {
        // layer2: emb = W2 h1 + b2
        for ((r, c), g) in grads.w2.indexed_iter_mut() {
            *g += grad_emb[r] * trace.h1[c];
        }
        grads.b2 += grad_emb;
        let grad_h1 = self.layer2.weight.t().dot(grad_emb);
        // relu
        let grad_pre1 = Array1::from_shape_fn(trace.pre1.len(), |i| {
            if trace.pre1[i] > 0.0 {
                grad_h1[i]
            } else {
                0.0
            }
        });
        // layer1: pre1 = W1 x + b1
        for ((r, c), g) in grads.w1.indexed_iter_mut() {
            *g += grad_pre1[r] * trace.x[c];
        }
        grads.b1 += &grad_pre1;
    }

    /// One plain gradient-descent step.
    pub fn apply_step(&mut self, grads: &CostGradients, learning_rate: f64) {
        self.layer1
            .weight
            .zip_mut_with(&grads.w1, |w, &g| *w -= learning_rate * g);
        self.layer1
            .bias
            .zip_mut_with(&grads.b1, |w, &g| *w -= learning_rate * g);
        self.layer2
            .weight
            .zip_mut_with(&grads.w2, |w, &g| *w -= learning_rate * g);
        self.layer2
            .bias
            .zip_mut_with(&grads.b2, |w, &g| *w -= learning_rate * g);
        self.l_factor
            .zip_mut_with(&grads.l, |w, &g| *w -= learning_rate * g);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for dim in [
            self.input_dim as u64,
            self.hidden_dim as u64,
            self.emb_dim as u64,
            self.rng_seed,
        ] {
            w.write_u64::<LittleEndian>(dim)?;
        }
        let blocks: Vec<&[f64]> = vec![
            self.layer1.weight.as_slice().unwrap(),
            self.layer1.bias.as_slice().unwrap(),
            self.layer2.weight.as_slice().unwrap(),
            self.layer2.bias.as_slice().unwrap(),
            self.l_factor.as_slice().unwrap(),
            self.feat_mean.as_slice().unwrap(),
            self.feat_std.as_slice().unwrap(),
        ];
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
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|_| Error::FormatError("file too short for magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::FormatError(format!(
                "bad magic {:?}, expected {:?}",
                magic, MAGIC
            )));
        }
        let mut dims = [0u64; 4];
        for d in dims.iter_mut() {
            *d = r
                .read_u64::<LittleEndian>()
                .map_err(|_| Error::FormatError("truncated header".into()))?;
        }
        let (input_dim, hidden_dim, emb_dim) =
            (dims[0] as usize, dims[1] as usize, dims[2] as usize);
        if input_dim == 0 || hidden_dim == 0 || emb_dim == 0 || input_dim > 1 << 20 {
            return Err(Error::FormatError("implausible dimensions".into()));
        }
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
        let w1 = read_block(hidden_dim * input_dim)?;
        let b1 = read_block(hidden_dim)?;
        let w2 = read_block(emb_dim * hidden_dim)?;
        let b2 = read_block(emb_dim)?;
        let l = read_block(emb_dim * emb_dim)?;
        let mean = read_block(input_dim)?;
        let std = read_block(input_dim)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::FormatError(
                "trailing bytes after weight blocks".into(),
            ));
        }
        let shape = |rows, cols, data: Vec<f64>| {
            Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::FormatError(e.to_string()))
        };
        Ok(Self {
            input_dim,
            hidden_dim,
            emb_dim,
            layer1: DenseLayer {
                weight: shape(hidden_dim, input_dim, w1)?,
                bias: Array1::from_vec(b1),
            },
            layer2: DenseLayer {
                weight: shape(emb_dim, hidden_dim, w2)?,
                bias: Array1::from_vec(b2),
            },
            l_factor: shape(emb_dim, emb_dim, l)?,
            feat_mean: Array1::from_vec(mean),
            feat_std: Array1::from_vec(std),
            rng_seed: dims[3],
        })
    }

    /// Test/bench hook: overwrite all MLP weights with a constant.
    pub fn fill_weights(&mut self, value: f64) {
        self.layer1.weight.fill(value);
        self.layer1.bias.fill(value);
        self.layer2.weight.fill(value);
        self.layer2.bias.fill(value);
    }

    /// Replaces the metric factor L (shape-checked).
    pub fn set_l_factor(&mut self, l: Array2<f64>) -> Result<()> {
        if l.dim() != (self.emb_dim, self.emb_dim) {
            return Err(Error::ShapeError(format!(
                "L must be {0}x{0}, got {1:?}",
                self.emb_dim,
                l.dim()
            )));
        }
        self.l_factor = l;
        Ok(())
    }

    /// Total scalar parameter count across w1, b1, w2, b2, L.
    pub fn parameter_count(&self) -> usize {
        self.hidden_dim * self.input_dim
            + self.hidden_dim
            + self.emb_dim * self.hidden_dim
            + self.emb_dim
            + self.emb_dim * self.emb_dim
    }

    /// Adds `delta` to the idx-th parameter in flat order (w1, b1, w2,
    /// b2, L, row-major); finite-difference checks walk this.
    pub fn bump_parameter(&mut self, idx: usize, delta: f64) {
        let mut idx = idx;
        for block in [
            self.layer1.weight.as_slice_mut().unwrap(),
            self.layer1.bias.as_slice_mut().unwrap(),
            self.layer2.weight.as_slice_mut().unwrap(),
            self.layer2.bias.as_slice_mut().unwrap(),
            self.l_factor.as_slice_mut().unwrap(),
        ] {
            if idx < block.len() {
                block[idx] += delta;
                return;
            }
            idx -= block.len();
        }
        panic!("parameter index out of range");
    }

    /// Test hook: make both layers identity maps (requires equal dims).
    pub fn set_identity_layers(&mut self) {
        assert_eq!(self.input_dim, self.hidden_dim);
        assert_eq!(self.hidden_dim, self.emb_dim);
        self.layer1.weight = Array2::eye(self.input_dim);
        self.layer1.bias.fill(0.0);
        self.layer2.weight = Array2::eye(self.input_dim);
        self.layer2.bias.fill(0.0);
    }

    /// The Mahalanobis matrix M = L^T L.
    pub fn metric_matrix(&self) -> Array2<f64> {
        self.l_factor.t().dot(&self.l_factor)
    }
}
