use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mode, Tensor};
use crate::error::{param_err, Result};
use crate::scalar::Scalar;

/// Inverted dropout. Returns the output and, in train mode with `rate > 0`,
/// the scaled keep mask (`0` or `1 / (1 - rate)` per element).
pub fn dropout<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    seed: u64,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(param_err!("dropout rate must be in [0, 1), got {rate}"));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                scale
            }
        })
        .collect();
    let data = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(&x, &m)| x * m)
        .collect();
    Ok((
        Tensor::from_parts(input.shape().to_vec(), data)?,
        Some(mask),
    ))
}

pub fn dropout_backward<T: Scalar>(dout: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    match mask {
        None => dout.clone(),
        Some(m) => {
            let data = dout.data().iter().zip(m).map(|(&g, &k)| g * k).collect();
            Tensor::from_parts(dout.shape().to_vec(), data).expect("mask matches gradient")
        }
    }
}
