use super::backward::Gradients;
use super::train::TrainConfig;
use super::weights::ModelWeights;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    m: Vec<Vec<Tensor<T>>>,
    v: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(weights: &ModelWeights<T>) -> Self {
        let zeros = || -> Vec<Vec<Tensor<T>>> {
            weights
                .layers()
                .iter()
                .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect()
        };
        Self {
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update. Frozen layers are skipped even when a
/// gradient is supplied; the step counter always advances.
pub fn adam_step<T: Scalar>(
    weights: &mut ModelWeights<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != weights.layers().len() || state.m.len() != weights.layers().len() {
        return Err(shape_err!(
            "adam: gradients or state do not match the weights"
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(config.beta1), T::lit(config.beta2));
    let c1 = T::one() - T::lit(config.beta1.powi(t));
    let c2 = T::one() - T::lit(config.beta2.powi(t));
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(config.adam_epsilon);
    for i in 0..weights.layers().len() {
        let Some(g) = grads.layer(i) else { continue };
        if weights.layer(i).frozen {
            continue;
        }
        let layer = weights.layer_mut(i);
        for (j, (p, gt)) in layer.params.iter_mut().zip(g).enumerate() {
            if p.shape() != gt.shape() {
                return Err(shape_err!(
                    "adam: gradient shape {:?} for parameter {:?}",
                    gt.shape(),
                    p.shape()
                ));
            }
            let (m, v) = (state.m[i][j].data_mut(), state.v[i][j].data_mut());
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(gt.data()).enumerate() {
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}
