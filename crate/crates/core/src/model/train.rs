//! Mini-batch Adam training for the RF predictor. Single-threaded and
//! deterministic: one seed drives the epoch shuffles, and parameters update
//! in a fixed flattened order, so identical inputs produce bit-identical
//! models.

use super::{backward, ModelError, ModelParams};
use crate::features::FeatureVector;
use crate::{RF_MAX, RF_MIN};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Training hyperparameters. Defaults follow the usual Adam settings with a
/// conservative learning rate; bump `learning_rate` for small experiments.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seeds the epoch shuffles (and model init in [`train_new`]).
    pub seed: u64,
    /// Running-statistic update rate: `running = (1-m)·running + m·batch`.
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 200,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(TrainError::BadConfig);
        }
        Ok(())
    }
}

/// A feature vector paired with its ground-truth RF.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    features: FeatureVector,
    rf_label: f64,
}

impl LabeledExample {
    pub fn new(features: FeatureVector, rf_label: f64) -> Result<Self, TrainError> {
        if !rf_label.is_finite() || !(RF_MIN..=RF_MAX).contains(&rf_label) {
            return Err(TrainError::LabelOutOfRange { label: rf_label });
        }
        Ok(LabeledExample { features, rf_label })
    }

    pub fn feature_vector(&self) -> &FeatureVector {
        &self.features
    }

    pub fn features(&self) -> &[f64] {
        self.features.values()
    }

    pub fn rf_label(&self) -> f64 {
        self.rf_label
    }
}

#[derive(Debug)]
pub enum TrainError {
    EmptyDataset,
    BadConfig,
    /// RF labels live on the encoder dial; anything else is a caller bug.
    LabelOutOfRange { label: f64 },
    /// Loss went non-finite during the given epoch (learning rate too hot,
    /// or poisoned data that slipped past validation).
    Diverged { epoch: usize },
    Model(ModelError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::EmptyDataset => write!(f, "training dataset is empty"),
            TrainError::BadConfig => {
                write!(f, "training config invalid: need learning_rate > 0, batch_size >= 1")
            }
            TrainError::LabelOutOfRange { label } => {
                write!(f, "RF label {label} outside [{RF_MIN}, {RF_MAX}]")
            }
            TrainError::Diverged { epoch } => {
                write!(f, "training diverged (non-finite loss) in epoch {epoch}")
            }
            TrainError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            TrainError::Model(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

/// Final parameters plus the per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub loss_trace: Vec<f64>,
}

/// Trains `initial` on `dataset`: seeded shuffle each epoch, Adam with bias
/// correction on every mini-batch (a short final batch is still a batch),
/// running BN statistics blended in with `bn_momentum` after each step.
pub fn train(
    initial: &ModelParams,
    dataset: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for ex in dataset {
        initial.validate_input(ex.features())?;
    }

    let mut m = initial.clone();
    m.bn_eps = cfg.bn_eps;

    let n_params = m.trainable_len();
    let mut adam_m = vec![0.0; n_params];
    let mut adam_v = vec![0.0; n_params];
    let mut step = 0u32;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| dataset[i].features()).collect();
            let labels: Vec<f64> = batch.iter().map(|&i| dataset[i].rf_label()).collect();

            let trace = m.forward_batch_train(&xs);
            let (batch_loss, grads) = backward(&m, &trace, &labels);
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            loss_sum += batch_loss * batch.len() as f64;

            step += 1;
            let mut flat = m.flatten_trainable();
            let bc1 = 1.0 - cfg.adam_beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.adam_beta2.powi(step as i32);
            for i in 0..n_params {
                let g = grads.0[i];
                adam_m[i] = cfg.adam_beta1 * adam_m[i] + (1.0 - cfg.adam_beta1) * g;
                adam_v[i] = cfg.adam_beta2 * adam_v[i] + (1.0 - cfg.adam_beta2) * g * g;
                let m_hat = adam_m[i] / bc1;
                let v_hat = adam_v[i] / bc2;
                flat[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            }
            m.assign_trainable(&flat);

            for j in 0..m.input_dim() {
                m.bn_running_mean[j] = (1.0 - cfg.bn_momentum) * m.bn_running_mean[j]
                    + cfg.bn_momentum * trace.batch_mean[j];
                m.bn_running_var[j] = (1.0 - cfg.bn_momentum) * m.bn_running_var[j]
                    + cfg.bn_momentum * trace.batch_var[j];
            }
        }
        let epoch_loss = loss_sum / dataset.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        loss_trace.push(epoch_loss);
    }

    Ok(TrainOutcome { model: m, loss_trace })
}

/// Initializes a fresh network sized to the dataset (input width taken from
/// the first example) and trains it. `schema_version` is recorded in the
/// model for later compatibility checks.
pub fn train_new(
    schema_version: &str,
    hidden: usize,
    blocks: usize,
    dataset: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let first = dataset.first().ok_or(TrainError::EmptyDataset)?;
    let initial = ModelParams::new(
        schema_version,
        first.features().len(),
        hidden,
        blocks,
        cfg.seed,
    );
    train(&initial, dataset, cfg)
}
