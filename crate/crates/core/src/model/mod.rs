//! The RF prediction network: forward pass, exact gradients, training and
//! serialization. Implemented directly on `f64` slices — at a few hundred
//! thousand parameters, determinism and verifiable gradients matter more
//! than throughput, and every gradient here is checked against central
//! finite differences in the tests.
//!
//! Architecture, in order: per-feature batch normalization → a sigmoid
//! attention gate (two-layer bottleneck) multiplied onto the normalized
//! features → a ReLU projection to the hidden width → residual blocks
//! (dense, ReLU, dense, add skip, ReLU) → a scalar head. The output is
//! clamped to the RF range at inference only, so training gradients stay
//! alive at the rails.
//!
//! The pass-1 and pass-2 predictors are two independent instances of this
//! type; the second simply has `input_dim` two larger (the feedback pair).

mod io;
mod train;

pub use io::{load_model, read_model, save_model, write_model, ModelIoError, MODEL_FORMAT_VERSION};
pub use train::{train, train_new, LabeledExample, TrainConfig, TrainError, TrainOutcome};

use crate::{RF_MAX, RF_MIN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Default hidden width.
pub const DEFAULT_HIDDEN: usize = 256;
/// Default residual block count.
pub const DEFAULT_BLOCKS: usize = 3;

#[derive(Debug)]
pub enum ModelError {
    DimensionMismatch { expected: usize, got: usize },
    NonFiniteInput { index: usize },
    EmptyBatch,
    /// The model was trained under a different feature schema.
    SchemaMismatch { expected: String, found: String },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::DimensionMismatch { expected, got } => {
                write!(f, "input has {got} features, model expects {expected}")
            }
            ModelError::NonFiniteInput { index } => {
                write!(f, "input feature {index} is not finite")
            }
            ModelError::EmptyBatch => write!(f, "empty batch"),
            ModelError::SchemaMismatch { expected, found } => write!(
                f,
                "model schema `{found}` is incompatible with pipeline schema `{expected}`"
            ),
        }
    }
}

impl std::error::Error for ModelError {}

/// Fully connected layer, `y = W·x + b`, weights row-major `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    rows: usize,
    cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        // Xavier-uniform keeps activations in range across the depths used here.
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Dense {
            rows,
            cols,
            w: (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
            b: vec![0.0; rows],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = self.b.clone();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            y[r] += acc;
        }
        y
    }

    /// dL/dx = Wᵀ · dL/dy.
    fn backward_input(&self, dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            for (c, wi) in row.iter().enumerate() {
                dx[c] += wi * dy[r];
            }
        }
        dx
    }
}

/// Gradient buffers for one dense layer.
#[derive(Debug, Clone)]
struct DenseGrad {
    w: Vec<f64>,
    b: Vec<f64>,
}

impl DenseGrad {
    fn zeros(layer: &Dense) -> Self {
        DenseGrad {
            w: vec![0.0; layer.w.len()],
            b: vec![0.0; layer.b.len()],
        }
    }

    /// Accumulates dL/dW += dy ⊗ x, dL/db += dy.
    fn accumulate(&mut self, layer: &Dense, x: &[f64], dy: &[f64]) {
        for r in 0..layer.rows {
            let row = &mut self.w[r * layer.cols..(r + 1) * layer.cols];
            for (c, xi) in x.iter().enumerate() {
                row[c] += dy[r] * xi;
            }
            self.b[r] += dy[r];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub fc1: Dense,
    pub fc2: Dense,
}

/// All parameters of one RF prediction network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    schema_version: String,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub bn_running_mean: Vec<f64>,
    pub bn_running_var: Vec<f64>,
    pub bn_eps: f64,
    pub attn1: Dense,
    pub attn2: Dense,
    pub trunk: Dense,
    pub blocks: Vec<ResidualBlock>,
    pub head: Dense,
}

impl ModelParams {
    /// Fresh network with seeded initialization. `schema_version` records
    /// the feature pipeline this model expects.
    pub fn new(
        schema_version: &str,
        input_dim: usize,
        hidden: usize,
        blocks: usize,
        seed: u64,
    ) -> Self {
        assert!(input_dim >= 1 && hidden >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bottleneck = (input_dim / 4).max(1);
        ModelParams {
            schema_version: schema_version.to_string(),
            bn_gamma: vec![1.0; input_dim],
            bn_beta: vec![0.0; input_dim],
            bn_running_mean: vec![0.0; input_dim],
            bn_running_var: vec![1.0; input_dim],
            bn_eps: 1e-5,
            attn1: Dense::init(bottleneck, input_dim, &mut rng),
            attn2: Dense::init(input_dim, bottleneck, &mut rng),
            trunk: Dense::init(hidden, input_dim, &mut rng),
            blocks: (0..blocks)
                .map(|_| ResidualBlock {
                    fc1: Dense::init(hidden, hidden, &mut rng),
                    fc2: Dense::init(hidden, hidden, &mut rng),
                })
                .collect(),
            head: Dense::init(1, hidden, &mut rng),
        }
    }

    pub fn schema_version(&self) -> &str {
        &self.schema_version
    }

    pub fn input_dim(&self) -> usize {
        self.bn_gamma.len()
    }

    pub fn hidden(&self) -> usize {
        self.trunk.rows
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Errors unless the model was trained for `expected` features.
    pub fn check_schema(&self, expected: &str) -> Result<(), ModelError> {
        if self.schema_version == expected {
            Ok(())
        } else {
            Err(ModelError::SchemaMismatch {
                expected: expected.to_string(),
                found: self.schema_version.clone(),
            })
        }
    }

    fn validate_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        for (index, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(ModelError::NonFiniteInput { index });
            }
        }
        Ok(())
    }

    /// Inference: running batch-norm statistics, output clamped to the RF
    /// range. Pure — no state mutates.
    pub fn forward_infer(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.validate_input(x)?;
        let x_norm: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(j, &v)| (v - self.bn_running_mean[j]) / (self.bn_running_var[j] + self.bn_eps).sqrt())
            .collect();
        let y = self.forward_from_normalized(&x_norm).y;
        Ok(y.clamp(RF_MIN, RF_MAX))
    }

    /// Everything after normalization; shared by both modes.
    fn forward_from_normalized(&self, x_norm: &[f64]) -> ExampleTrace {
        let a: Vec<f64> = x_norm
            .iter()
            .enumerate()
            .map(|(j, &v)| self.bn_gamma[j] * v + self.bn_beta[j])
            .collect();

        let r_attn1: Vec<f64> = self.attn1.forward(&a).iter().map(|&z| z.max(0.0)).collect();
        let mask: Vec<f64> = self.attn2.forward(&r_attn1).iter().map(|&z| sigmoid(z)).collect();
        let g: Vec<f64> = a.iter().zip(&mask).map(|(&ai, &mi)| ai * mi).collect();

        let h0: Vec<f64> = self.trunk.forward(&g).iter().map(|&z| z.max(0.0)).collect();

        let mut h = h0.clone();
        let mut block_traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let input = h.clone();
            let r1: Vec<f64> = block.fc1.forward(&input).iter().map(|&z| z.max(0.0)).collect();
            let z2 = block.fc2.forward(&r1);
            let out: Vec<f64> = z2.iter().zip(&input).map(|(&z, &u)| (z + u).max(0.0)).collect();
            h = out.clone();
            block_traces.push(BlockTrace { input, r1, out });
        }

        let y = self.head.forward(&h)[0];
        ExampleTrace {
            x_norm: x_norm.to_vec(),
            a,
            r_attn1,
            mask,
            g,
            h0,
            blocks: block_traces,
            y,
        }
    }

    /// Training-mode forward over a batch: per-feature statistics are the
    /// batch's own (population variance). Outputs are unclamped. Returns
    /// the predictions plus everything backward needs.
    fn forward_batch_train(&self, xs: &[&[f64]]) -> BatchTrace {
        let d = self.input_dim();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            for (j, &v) in x.iter().enumerate() {
                mean[j] += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for x in xs {
            for (j, &v) in x.iter().enumerate() {
                var[j] += (v - mean[j]).powi(2);
            }
        }
        for v in &mut var {
            *v /= n;
        }

        let examples: Vec<ExampleTrace> = xs
            .iter()
            .map(|x| {
                let x_norm: Vec<f64> = x
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| (v - mean[j]) / (var[j] + self.bn_eps).sqrt())
                    .collect();
                self.forward_from_normalized(&x_norm)
            })
            .collect();

        BatchTrace {
            batch_mean: mean,
            batch_var: var,
            examples,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct BlockTrace {
    input: Vec<f64>,
    r1: Vec<f64>,
    out: Vec<f64>,
}

struct ExampleTrace {
    x_norm: Vec<f64>,
    a: Vec<f64>,
    r_attn1: Vec<f64>,
    mask: Vec<f64>,
    g: Vec<f64>,
    h0: Vec<f64>,
    blocks: Vec<BlockTrace>,
    y: f64,
}

impl ExampleTrace {
    fn hidden_out(&self) -> &[f64] {
        self.blocks.last().map_or(&self.h0, |b| &b.out)
    }
}

pub(crate) struct BatchTrace {
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    examples: Vec<ExampleTrace>,
}

impl BatchTrace {
    #[cfg(test)]
    pub fn predictions(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.y).collect()
    }
}

/// Mean squared error between predictions and labels.
pub fn loss(predictions: &[f64], labels: &[f64]) -> Result<f64, ModelError> {
    if predictions.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if predictions.len() != labels.len() {
        return Err(ModelError::DimensionMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    let sum: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Gradients of all trainable parameters, flattened in the same order as
/// [`ModelParams::flatten_trainable`]. Running BN statistics are not
/// trainable and are absent here.
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<f64>);

impl ModelParams {
    /// All trainable parameters, flattened. Order: bn gamma, bn beta,
    /// attention layer 1 (w, b), attention layer 2 (w, b), trunk (w, b),
    /// each residual block (fc1 w, fc1 b, fc2 w, fc2 b), head (w, b).
    pub fn flatten_trainable(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.trainable_len());
        flat.extend_from_slice(&self.bn_gamma);
        flat.extend_from_slice(&self.bn_beta);
        for layer in self.dense_layers() {
            flat.extend_from_slice(&layer.w);
            flat.extend_from_slice(&layer.b);
        }
        flat
    }

    /// Writes a flat parameter vector (from [`flatten_trainable`]) back.
    pub fn assign_trainable(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.trainable_len());
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        take(&mut self.bn_gamma);
        take(&mut self.bn_beta);
        // Field borrows force the layer list inline here; keep the order in
        // lockstep with dense_layers().
        for layer in [&mut self.attn1, &mut self.attn2, &mut self.trunk]
            .into_iter()
            .chain(
                self.blocks
                    .iter_mut()
                    .flat_map(|b| [&mut b.fc1, &mut b.fc2]),
            )
            .chain([&mut self.head])
        {
            take(&mut layer.w);
            take(&mut layer.b);
        }
        assert_eq!(pos, flat.len());
    }

    pub fn trainable_len(&self) -> usize {
        2 * self.input_dim()
            + self
                .dense_layers()
                .iter()
                .map(|l| l.w.len() + l.b.len())
                .sum::<usize>()
    }

    fn dense_layers(&self) -> Vec<&Dense> {
        let mut layers = vec![&self.attn1, &self.attn2, &self.trunk];
        for b in &self.blocks {
            layers.push(&b.fc1);
            layers.push(&b.fc2);
        }
        layers.push(&self.head);
        layers
    }
}

/// MSE loss and exact reverse-mode gradients over one training batch
/// (train-mode batch normalization). Batch statistics depend only on the
/// inputs, never on parameters, so normalized inputs are constants of the
/// differentiation and no gradient flows below the gamma/beta scale.
pub fn gradients(
    m: &ModelParams,
    batch: &[LabeledExample],
) -> Result<(f64, Gradients), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    for ex in batch {
        m.validate_input(ex.features())?;
    }
    let xs: Vec<&[f64]> = batch.iter().map(|e| e.features()).collect();
    let labels: Vec<f64> = batch.iter().map(|e| e.rf_label()).collect();
    let trace = m.forward_batch_train(&xs);
    let (loss_value, grads) = backward(m, &trace, &labels);
    Ok((loss_value, grads))
}

pub(crate) fn backward(m: &ModelParams, trace: &BatchTrace, labels: &[f64]) -> (f64, Gradients) {
    let n = trace.examples.len() as f64;
    let d = m.input_dim();

    let mut g_gamma = vec![0.0; d];
    let mut g_beta = vec![0.0; d];
    let mut g_attn1 = DenseGrad::zeros(&m.attn1);
    let mut g_attn2 = DenseGrad::zeros(&m.attn2);
    let mut g_trunk = DenseGrad::zeros(&m.trunk);
    let mut g_blocks: Vec<(DenseGrad, DenseGrad)> = m
        .blocks
        .iter()
        .map(|b| (DenseGrad::zeros(&b.fc1), DenseGrad::zeros(&b.fc2)))
        .collect();
    let mut g_head = DenseGrad::zeros(&m.head);

    let mut loss_sum = 0.0;
    for (ex, &label) in trace.examples.iter().zip(labels) {
        let err = ex.y - label;
        loss_sum += err * err;
        let dy = 2.0 * err / n;

        // Head.
        let h_last = ex.hidden_out();
        g_head.accumulate(&m.head, h_last, &[dy]);
        let mut dh = m.head.backward_input(&[dy]);

        // Residual blocks, last to first.
        for (bi, block) in m.blocks.iter().enumerate().rev() {
            let bt = &ex.blocks[bi];
            // out = relu(z2 + input)
            let ds: Vec<f64> = dh
                .iter()
                .zip(&bt.out)
                .map(|(&g, &o)| if o > 0.0 { g } else { 0.0 })
                .collect();
            g_blocks[bi].1.accumulate(&block.fc2, &bt.r1, &ds);
            let dr1 = block.fc2.backward_input(&ds);
            let dz1: Vec<f64> = dr1
                .iter()
                .zip(&bt.r1)
                .map(|(&g, &r)| if r > 0.0 { g } else { 0.0 })
                .collect();
            g_blocks[bi].0.accumulate(&block.fc1, &bt.input, &dz1);
            let mut dinput = block.fc1.backward_input(&dz1);
            for (di, &si) in dinput.iter_mut().zip(&ds) {
                *di += si; // skip connection
            }
            dh = dinput;
        }

        // Trunk projection: h0 = relu(trunk(g)).
        let dz0: Vec<f64> = dh
            .iter()
            .zip(&ex.h0)
            .map(|(&g, &h)| if h > 0.0 { g } else { 0.0 })
            .collect();
        g_trunk.accumulate(&m.trunk, &ex.g, &dz0);
        let dg = m.trunk.backward_input(&dz0);

        // Gate: g = a ⊙ mask, mask = σ(attn2(relu(attn1(a)))).
        let mut da: Vec<f64> = dg.iter().zip(&ex.mask).map(|(&g, &mi)| g * mi).collect();
        let dmask: Vec<f64> = dg.iter().zip(&ex.a).map(|(&g, &ai)| g * ai).collect();
        let dzm: Vec<f64> = dmask
            .iter()
            .zip(&ex.mask)
            .map(|(&g, &mi)| g * mi * (1.0 - mi))
            .collect();
        g_attn2.accumulate(&m.attn2, &ex.r_attn1, &dzm);
        let dr_attn = m.attn2.backward_input(&dzm);
        let dza: Vec<f64> = dr_attn
            .iter()
            .zip(&ex.r_attn1)
            .map(|(&g, &r)| if r > 0.0 { g } else { 0.0 })
            .collect();
        g_attn1.accumulate(&m.attn1, &ex.a, &dza);
        let da_attn = m.attn1.backward_input(&dza);
        for (ai, &extra) in da.iter_mut().zip(&da_attn) {
            *ai += extra;
        }

        // Batch norm scale/shift: a = gamma ⊙ x_norm + beta.
        for j in 0..d {
            g_gamma[j] += da[j] * ex.x_norm[j];
            g_beta[j] += da[j];
        }
    }

    // Flatten in the flatten_trainable() order.
    let mut flat = Vec::with_capacity(m.trainable_len());
    flat.extend_from_slice(&g_gamma);
    flat.extend_from_slice(&g_beta);
    for dg in [&g_attn1, &g_attn2, &g_trunk]
        .into_iter()
        .chain(g_blocks.iter().flat_map(|(a, b)| [a, b]))
        .chain([&g_head])
    {
        flat.extend_from_slice(&dg.w);
        flat.extend_from_slice(&dg.b);
    }

    (loss_sum / n, Gradients(flat))
}
