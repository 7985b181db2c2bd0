use std::fmt;
use std::str::FromStr;

use crate::error::{param_err, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean over rows of `-Σ t·ln(max(p, 1e-12))`; targets must be one-hot.
    CategoricalCrossentropy,
    /// Mean squared error over all elements.
    Mse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::CategoricalCrossentropy => "categorical-crossentropy",
            LossKind::Mse => "mse",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical-crossentropy" => Ok(LossKind::CategoricalCrossentropy),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::Parse(format!("unknown loss `{s}`"))),
        }
    }
}

fn check_one_hot<T: Scalar>(target: &Tensor<T>) -> Result<()> {
    let c = target.row_len();
    for (r, row) in target.data().chunks(c).enumerate() {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != c {
            return Err(param_err!("target row {} is not one-hot", r));
        }
    }
    Ok(())
}

pub fn loss<T: Scalar>(kind: LossKind, predicted: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    Ok(loss_and_grad(kind, predicted, target)?.0)
}

/// Loss value and its gradient with respect to `predicted`.
pub fn loss_and_grad<T: Scalar>(
    kind: LossKind,
    predicted: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    if predicted.shape() != target.shape() {
        return Err(shape_err!(
            "loss: predicted {:?} vs target {:?}",
            predicted.shape(),
            target.shape()
        ));
    }
    if predicted.is_empty() {
        return Err(shape_err!("loss on empty tensors"));
    }
    match kind {
        LossKind::Mse => {
            let scale = T::one() / T::lit(predicted.len() as f64);
            let diff = predicted.zip_map(target, |p, t| p - t)?;
            let value = diff.sq_norm() * scale;
            let two = T::lit(2.0) * scale;
            Ok((value, diff.map(|d| d * two)))
        }
        LossKind::CategoricalCrossentropy => {
            check_one_hot(target)?;
            let floor = T::lit(LOG_FLOOR);
            let inv_n = T::one() / T::lit(predicted.batch() as f64);
            let mut total = T::zero();
            let grad = predicted.zip_map(target, |p, t| {
                if t == T::zero() {
                    T::zero()
                } else if p > floor {
                    -t / p * inv_n
                } else {
                    T::zero()
                }
            })?;
            for (&p, &t) in predicted.data().iter().zip(target.data()) {
                if t != T::zero() {
                    total -= t * p.max(floor).ln();
                }
            }
            Ok((total * inv_n, grad))
        }
    }
}
