use std::fmt;
use std::str::FromStr;

use super::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    /// Normalizes over the last axis.
    Softmax,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "softmax" => Ok(Activation::Softmax),
            _ => Err(Error::Parse(format!("unknown activation `{s}`"))),
        }
    }
}

pub fn activate<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Linear => input.clone(),
        Activation::Relu => input.map(|x| x.max(T::zero())),
        Activation::Tanh => input.map(|x| x.tanh()),
        Activation::Softmax => {
            let c = *input.shape().last().expect("non-empty shape");
            let mut out = input.clone();
            for row in out.data_mut().chunks_mut(c) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            out
        }
    }
}

/// Gradient with respect to the activation input, computed from the
/// activation's own output.
pub fn activation_backward<T: Scalar>(
    output: &Tensor<T>,
    dout: &Tensor<T>,
    kind: Activation,
) -> Result<Tensor<T>> {
    if output.shape() != dout.shape() {
        return Err(shape_err!(
            "activation_backward: {:?} vs {:?}",
            output.shape(),
            dout.shape()
        ));
    }
    Ok(match kind {
        Activation::Linear => dout.clone(),
        Activation::Relu => {
            output.zip_map(dout, |y, g| if y > T::zero() { g } else { T::zero() })?
        }
        Activation::Tanh => output.zip_map(dout, |y, g| g * (T::one() - y * y))?,
        Activation::Softmax => {
            let c = *output.shape().last().expect("non-empty shape");
            let mut dx = dout.clone();
            for (row, s) in dx.data_mut().chunks_mut(c).zip(output.data().chunks(c)) {
                let dot: T = row.iter().zip(s).map(|(&g, &p)| g * p).sum();
                for (g, &p) in row.iter_mut().zip(s) {
                    *g = p * (*g - dot);
                }
            }
            dx
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn elementwise_values() {
        let x = Tensor::scalar_vec(&[-1.0, 0.0, 2.0]);
        assert_eq!(activate(&x, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(
            activate(&Tensor::scalar_vec(&[0.0f64]), Activation::Tanh).data(),
            &[0.0]
        );
        assert_eq!(
            activate(&Tensor::scalar_vec(&[0.0f64, 0.0]), Activation::Softmax).data(),
            &[0.5, 0.5]
        );
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let y = activate(
            &Tensor::scalar_vec(&[1000.0f64, 1000.0]),
            Activation::Softmax,
        );
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = Tensor::from_fn(&[2, 4], |i| (i as f64 * 1.3).sin() * 2.0 + 0.1);
        let up = Tensor::from_fn(&[2, 4], |i| i as f64 * 0.5 - 1.0);
        for kind in [
            Activation::Linear,
            Activation::Relu,
            Activation::Tanh,
            Activation::Softmax,
        ] {
            let f = |x: &Tensor<f64>| -> f64 {
                activate(x, kind)
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let dx = activation_backward(&activate(&x, kind), &up, kind).unwrap();
            for i in 0..x.len() {
                let (mut p, mut m) = (x.clone(), x.clone());
                p.data_mut()[i] += 1e-6;
                m.data_mut()[i] -= 1e-6;
                let fd = (f(&p) - f(&m)) / 2e-6;
                assert!(
                    (fd - dx.data()[i]).abs() < 1e-7,
                    "{kind}: {fd} vs {}",
                    dx.data()[i]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            row in prop::collection::vec(-50.0f64..50.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let x = Tensor::scalar_vec(&row);
            let y = activate(&x, Activation::Softmax);
            prop_assert!((y.sum() - 1.0).abs() < 1e-12);
            let ys = activate(&x.map(|v| v + shift), Activation::Softmax);
            for (a, b) in y.data().iter().zip(ys.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
