use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::backward::backward;
use super::forward::{forward, forward_to, Tape};
use super::loss::{loss, loss_and_grad, LossKind};
use super::spec::{LayerKind, NetworkSpec};
use super::weights::{mix_seed, ModelWeights};
use crate::error::{param_err, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{update_running_stats, Mode, Tensor};

const DROPOUT_STREAM: u64 = 0xD0;
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub loss: LossKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Stop after this many epochs without validation-loss improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 64,
            max_epochs: 500,
            loss: LossKind::CategoricalCrossentropy,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(param_err!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if self.max_epochs == 0 {
            return Err(param_err!("max_epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(param_err!("batch_size must be at least 1"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(param_err!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(param_err!("adam epsilon must be positive"));
        }
        if self.patience == Some(0) {
            return Err(param_err!("patience must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Targets<T> {
    /// Reconstruct the inputs.
    Autoencode,
    Tensor(Tensor<T>),
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub inputs: Tensor<T>,
    pub targets: Targets<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Tensor<T>, targets: Targets<T>) -> Result<Self> {
        if let Targets::Tensor(t) = &targets {
            if t.batch() != inputs.batch() {
                return Err(shape_err!(
                    "{} inputs but {} targets",
                    inputs.batch(),
                    t.batch()
                ));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        if self.inputs.is_empty() {
            0
        } else {
            self.inputs.batch()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batch(&self, rows: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let x = self.inputs.select_rows(rows);
        let y = match &self.targets {
            Targets::Autoencode => x.clone(),
            Targets::Tensor(t) => t.select_rows(rows),
        };
        (x, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Size-weighted mean of the training batch losses.
    pub loss: f64,
    pub val_loss: Option<f64>,
    /// Per layer, mean over batches of the gradient L2 norm (0 for frozen or
    /// parameter-free layers).
    pub grad_norms: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Splits `n` items into `ceil(n / max)` batches whose sizes differ by at most one.
pub fn balanced_batches(n: usize, max: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let nb = n.div_ceil(max);
    let (base, rem) = (n / nb, n % nb);
    (0..nb).map(|b| base + usize::from(b < rem)).collect()
}

/// Folds the batch statistics in `tape` into the running statistics.
pub fn apply_batch_stats<T: Scalar>(
    spec: &NetworkSpec,
    weights: &mut ModelWeights<T>,
    tape: &Tape<T>,
) {
    for (i, mean, var) in tape.batch_stats() {
        if let LayerKind::BatchNorm { momentum, .. } = spec.layers()[i].kind {
            let bufs = weights.buffers_mut(i);
            let (rm, rv) = bufs.split_at_mut(1);
            update_running_stats(
                rm[0].data_mut(),
                rv[0].data_mut(),
                mean,
                var,
                T::lit(momentum),
            );
        }
    }
}

/// Eval-mode outputs for every row of `inputs`, computed in chunks.
pub fn predict<T: Scalar>(
    spec: &NetworkSpec,
    weights: &ModelWeights<T>,
    inputs: &Tensor<T>,
) -> Result<Tensor<T>> {
    predict_to(spec, weights, inputs, spec.layers().len() - 1)
}

/// Like [`predict`] but stops after layer `stop`.
pub fn predict_to<T: Scalar>(
    spec: &NetworkSpec,
    weights: &ModelWeights<T>,
    inputs: &Tensor<T>,
    stop: usize,
) -> Result<Tensor<T>> {
    let n = inputs.batch();
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let rows: Vec<usize> = (start..end).collect();
        parts.push(forward_to(spec, weights, &inputs.select_rows(&rows), stop)?);
        start = end;
    }
    Tensor::concat(&parts.iter().collect::<Vec<_>>())
}

/// Eval-mode loss over a whole dataset.
pub fn evaluate_loss<T: Scalar>(
    spec: &NetworkSpec,
    weights: &ModelWeights<T>,
    data: &Dataset<T>,
    kind: LossKind,
) -> Result<f64> {
    let out = predict(spec, weights, &data.inputs)?;
    let target = match &data.targets {
        Targets::Autoencode => &data.inputs,
        Targets::Tensor(t) => t,
    };
    Ok(loss(kind, &out, target)?.as_f64())
}

/// Mini-batch Adam training. Shuffling, dropout masks and therefore the whole
/// run are determined by `config.seed`.
pub fn train<T: Scalar>(
    spec: &NetworkSpec,
    mut weights: ModelWeights<T>,
    data: &Dataset<T>,
    validation: Option<&Dataset<T>>,
    config: &TrainConfig,
) -> Result<(ModelWeights<T>, TrainHistory)> {
    let history = train_with(spec, &mut weights, data, validation, config, |_| {})?;
    Ok((weights, history))
}

/// [`train`] on borrowed weights, calling `on_epoch` after every epoch.
pub fn train_with<T: Scalar>(
    spec: &NetworkSpec,
    weights: &mut ModelWeights<T>,
    data: &Dataset<T>,
    validation: Option<&Dataset<T>>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    config.validate()?;
    if data.is_empty() {
        return Err(param_err!("training dataset is empty"));
    }
    weights.validate(spec)?;
    let n = data.len();
    let sizes = balanced_batches(n, config.batch_size);
    let mut adam = AdamState::new(weights);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 0..config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut norms = vec![0.0; spec.layers().len()];
        let mut start = 0;
        for (b, &size) in sizes.iter().enumerate() {
            let rows = &order[start..start + size];
            start += size;
            let (x, y) = data.batch(rows);
            let step = (epoch * sizes.len() + b) as u64;
            let dseed = mix_seed(config.seed ^ DROPOUT_STREAM, step);
            let (out, tape) = forward(spec, weights, &x, Mode::Train, dseed)?;
            let (l, dl) = loss_and_grad(config.loss, &out, &y)?;
            if !l.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            let grads = backward(spec, weights, &tape, &dl)?;
            for (i, a) in norms.iter_mut().enumerate() {
                *a += grads.layer_norm(i);
            }
            apply_batch_stats(spec, weights, &tape);
            adam_step(weights, &grads, &mut adam, config)?;
            total += l.as_f64() * size as f64;
        }
        let nb = sizes.len() as f64;
        let val_loss = validation
            .map(|v| evaluate_loss(spec, weights, v, config.loss))
            .transpose()?;
        let rec = EpochRecord {
            epoch: epoch + 1,
            loss: total / n as f64,
            val_loss,
            grad_norms: norms.into_iter().map(|s| s / nb).collect(),
        };
        on_epoch(&rec);
        history.epochs.push(rec);
        if let (Some(p), Some(v)) = (config.patience, val_loss) {
            if v < best_val {
                best_val = v;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= p {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(history)
}
