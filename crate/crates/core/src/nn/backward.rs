use super::forward::{Record, Tape};
use super::spec::{LayerKind, NetworkSpec};
use super::weights::ModelWeights;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    activation_backward, batchnorm_backward, conv2d_backward, dense_backward, dropout_backward,
    maxpool2d_backward, upsample2d_backward, Padding, Tensor,
};

/// Per-layer parameter gradients; `None` for frozen and parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    layers: Vec<Option<Vec<Tensor<T>>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn layer(&self, i: usize) -> Option<&[Tensor<T>]> {
        self.layers.get(i).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Option::is_none)
    }

    /// L2 norm over all tensors of layer `i` (0 when absent).
    pub fn layer_norm(&self, i: usize) -> f64 {
        self.layer(i).map_or(0.0, |ts| {
            ts.iter().map(|t| t.sq_norm().as_f64()).sum::<f64>().sqrt()
        })
    }

    pub fn from_layers(layers: Vec<Option<Vec<Tensor<T>>>>) -> Self {
        Self { layers }
    }
}

/// Backpropagates `dloss` (gradient of the loss with respect to the network
/// output) through `tape`.
pub fn backward<T: Scalar>(
    spec: &NetworkSpec,
    weights: &ModelWeights<T>,
    tape: &Tape<T>,
    dloss: &Tensor<T>,
) -> Result<Gradients<T>> {
    if tape.version != weights.version() {
        return Err(Error::StaleTape {
            tape: tape.version,
            weights: weights.version(),
        });
    }
    let n_layers = spec.layers().len();
    if tape.records.len() != n_layers {
        return Err(shape_err!(
            "tape covers {} of {} layers",
            tape.records.len(),
            n_layers
        ));
    }
    let mut grads: Vec<Option<Vec<Tensor<T>>>> = vec![None; n_layers];
    let Some(first) = weights.layers().iter().position(|l| l.is_trainable()) else {
        return Ok(Gradients { layers: grads });
    };
    let mut g = dloss.clone();
    for i in (first..n_layers).rev() {
        let lp = weights.layer(i);
        let want_input = i > first;
        let trainable = lp.is_trainable();
        let layer = &spec.layers()[i];
        match (&layer.kind, &tape.records[i]) {
            (LayerKind::Conv2d { activation, .. }, Record::Conv { input, output }) => {
                let dpre = activation_backward(output, &g, *activation)?;
                let cg = conv2d_backward(input, &lp.params[0], &dpre, Padding::Same, want_input)?;
                if trainable {
                    grads[i] = Some(vec![cg.kernels, cg.bias]);
                }
                if let Some(dx) = cg.input {
                    g = dx;
                }
            }
            (LayerKind::Dense { activation, .. }, Record::Dense { input, output }) => {
                let dpre = activation_backward(output, &g, *activation)?;
                let dg = dense_backward(input, &lp.params[0], &dpre, want_input)?;
                if trainable {
                    grads[i] = Some(vec![dg.weights, dg.bias]);
                }
                if let Some(dx) = dg.input {
                    g = dx;
                }
            }
            (
                LayerKind::BatchNorm { .. },
                Record::BatchNorm {
                    x_hat,
                    inv_std,
                    batch_stats,
                },
            ) => {
                let (dx, dgamma, dbeta) =
                    batchnorm_backward(&g, x_hat, inv_std, &lp.params[0], batch_stats.is_some())?;
                if trainable {
                    grads[i] = Some(vec![dgamma, dbeta]);
                }
                g = dx;
            }
            (
                LayerKind::MaxPool2,
                Record::MaxPool {
                    argmax,
                    input_shape,
                },
            ) => {
                if want_input {
                    g = maxpool2d_backward(&g, argmax, input_shape)?;
                }
            }
            (LayerKind::Upsample2, Record::Upsample) => {
                if want_input {
                    g = upsample2d_backward(&g)?;
                }
            }
            (LayerKind::Flatten | LayerKind::Reshape { .. }, Record::Reshape { input_shape }) => {
                g = g.reshape(input_shape)?;
            }
            (LayerKind::Dropout { .. }, Record::Dropout { mask }) => {
                g = dropout_backward(&g, mask.as_deref());
            }
            _ => {
                return Err(shape_err!(
                    "tape record does not match layer {}",
                    layer.name
                ))
            }
        }
    }
    Ok(Gradients { layers: grads })
}
