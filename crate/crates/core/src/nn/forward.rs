use super::spec::{LayerKind, NetworkSpec};
use super::weights::{mix_seed, ModelWeights};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    activate, batchnorm, conv2d, dense, dropout, maxpool2d, upsample2d, BatchNormMode, Mode,
    Padding, Tensor,
};

/// What backward needs from one layer's forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Record<T> {
    Conv {
        input: Tensor<T>,
        output: Tensor<T>,
    },
    BatchNorm {
        x_hat: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: Option<(Vec<T>, Vec<T>)>,
    },
    MaxPool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Upsample,
    Reshape {
        input_shape: Vec<usize>,
    },
    Dense {
        input: Tensor<T>,
        output: Tensor<T>,
    },
    Dropout {
        mask: Option<Vec<T>>,
    },
}

/// Activation record of a forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub(crate) version: u64,
    pub(crate) records: Vec<Record<T>>,
}

impl<T: Scalar> Tape<T> {
    /// Weights version the tape was recorded against.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Batch mean and variance observed by each train-mode batch-norm layer.
    pub fn batch_stats(&self) -> impl Iterator<Item = (usize, &[T], &[T])> + '_ {
        self.records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| match r {
                Record::BatchNorm {
                    batch_stats: Some((m, v)),
                    ..
                } => Some((i, &m[..], &v[..])),
                _ => None,
            })
    }
}

/// Full forward pass. `seed` drives the dropout masks in train mode.
pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    weights: &ModelWeights<T>,
    batch: &Tensor<T>,
    mode: Mode,
    seed: u64,
) -> Result<(Tensor<T>, Tape<T>)> {
    let (out, tape) = run(
        spec,
        weights,
        batch,
        mode,
        seed,
        spec.layers().len() - 1,
        true,
    )?;
    Ok((out, tape.expect("recording requested")))
}

/// Eval-mode pass through layers `0..=stop`, without recording.
pub fn forward_to<T: Scalar>(
    spec: &NetworkSpec,
    weights: &ModelWeights<T>,
    batch: &Tensor<T>,
    stop: usize,
) -> Result<Tensor<T>> {
    if stop >= spec.layers().len() {
        return Err(shape_err!("layer index {} out of range", stop));
    }
    Ok(run(spec, weights, batch, Mode::Eval, 0, stop, false)?.0)
}

fn run<T: Scalar>(
    spec: &NetworkSpec,
    weights: &ModelWeights<T>,
    batch: &Tensor<T>,
    mode: Mode,
    seed: u64,
    stop: usize,
    record: bool,
) -> Result<(Tensor<T>, Option<Tape<T>>)> {
    let shape = batch.shape();
    if shape.len() != 4 || shape[1..] != spec.input_shape() || shape[0] == 0 {
        return Err(shape_err!(
            "batch shape {:?} does not match network input {:?}",
            shape,
            spec.input_shape()
        ));
    }
    let n = shape[0];
    let mut records = Vec::with_capacity(stop + 1);
    let mut x = batch.clone();
    for (i, layer) in spec.layers()[..=stop].iter().enumerate() {
        let lp = weights.layer(i);
        let (y, rec) = match &layer.kind {
            LayerKind::Conv2d { activation, .. } => {
                let pre = conv2d(&x, &lp.params[0], &lp.params[1], Padding::Same)?;
                let y = activate(&pre, *activation);
                let rec = record.then(|| Record::Conv {
                    input: x,
                    output: y.clone(),
                });
                (y, rec)
            }
            LayerKind::BatchNorm { epsilon, .. } => {
                let use_batch = mode == Mode::Train && !(lp.frozen && weights.freeze_bn_stats);
                let bn_mode = if use_batch {
                    BatchNormMode::Train
                } else {
                    BatchNormMode::Eval {
                        running_mean: lp.buffers[0].data(),
                        running_var: lp.buffers[1].data(),
                    }
                };
                let out = batchnorm(&x, &lp.params[0], &lp.params[1], bn_mode, T::lit(*epsilon))?;
                let rec = record.then(|| Record::BatchNorm {
                    x_hat: out.x_hat,
                    inv_std: out.inv_std,
                    batch_stats: out.batch_stats,
                });
                (out.output, rec)
            }
            LayerKind::MaxPool2 => {
                let (y, argmax) = maxpool2d(&x)?;
                let rec = record.then(|| Record::MaxPool {
                    argmax,
                    input_shape: x.shape().to_vec(),
                });
                (y, rec)
            }
            LayerKind::Upsample2 => (upsample2d(&x)?, record.then_some(Record::Upsample)),
            LayerKind::Flatten | LayerKind::Reshape { .. } => {
                let input_shape = x.shape().to_vec();
                let mut target = vec![n];
                target.extend_from_slice(spec.output_shape_of(i));
                (
                    x.reshape(&target)?,
                    record.then_some(Record::Reshape { input_shape }),
                )
            }
            LayerKind::Dense { activation, .. } => {
                let pre = dense(&x, &lp.params[0], &lp.params[1])?;
                let y = activate(&pre, *activation);
                let rec = record.then(|| Record::Dense {
                    input: x,
                    output: y.clone(),
                });
                (y, rec)
            }
            LayerKind::Dropout { rate } => {
                let (y, mask) = dropout(&x, *rate, mode, mix_seed(seed, i as u64))?;
                (y, record.then_some(Record::Dropout { mask }))
            }
        };
        if let Some(r) = rec {
            records.push(r);
        }
        x = y;
    }
    let tape = record.then(|| Tape {
        version: weights.version(),
        records,
    });
    Ok((x, tape))
}
