use super::Tensor;
use crate::error::{param_err, shape_err, Result};
use crate::scalar::Scalar;

/// Which statistics normalize the input.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a, T> {
    /// Per-channel batch statistics (over batch and spatial positions).
    Train,
    /// Stored running statistics.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
    },
}

#[derive(Debug, Clone)]
pub struct BatchNormOutput<T> {
    pub output: Tensor<T>,
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and (population) variance; `None` in eval mode.
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

/// Batch normalization over the last (channel) axis.
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mode: BatchNormMode<'_, T>,
    epsilon: T,
) -> Result<BatchNormOutput<T>> {
    let c = *input
        .shape()
        .last()
        .ok_or_else(|| shape_err!("batchnorm on empty shape"))?;
    if gamma.len() != c || beta.len() != c {
        return Err(shape_err!(
            "batchnorm: {} channels but gamma/beta have {}/{}",
            c,
            gamma.len(),
            beta.len()
        ));
    }
    let x = input.data();
    let m = x.len() / c;
    let (mean, var, batch_stats) = match mode {
        BatchNormMode::Train => {
            if input.batch() < 2 {
                return Err(param_err!(
                    "batchnorm in train mode needs a batch of at least 2"
                ));
            }
            let mut mean = vec![T::zero(); c];
            for row in x.chunks(c) {
                for (a, &v) in mean.iter_mut().zip(row) {
                    *a += v;
                }
            }
            let inv_m = T::one() / T::lit(m as f64);
            mean.iter_mut().for_each(|a| *a *= inv_m);
            let mut var = vec![T::zero(); c];
            for row in x.chunks(c) {
                for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                    *a += (v - mu) * (v - mu);
                }
            }
            var.iter_mut().for_each(|a| *a *= inv_m);
            (mean.clone(), var.clone(), Some((mean, var)))
        }
        BatchNormMode::Eval {
            running_mean,
            running_var,
        } => {
            if running_mean.len() != c || running_var.len() != c {
                return Err(shape_err!(
                    "batchnorm: running statistics do not have {} channels",
                    c
                ));
            }
            (running_mean.to_vec(), running_var.to_vec(), None)
        }
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + epsilon).sqrt())
        .collect();
    let mut x_hat = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    let (g, b) = (gamma.data(), beta.data());
    for row in x.chunks(c) {
        for ch in 0..c {
            let xh = (row[ch] - mean[ch]) * inv_std[ch];
            x_hat.push(xh);
            out.push(g[ch] * xh + b[ch]);
        }
    }
    Ok(BatchNormOutput {
        output: Tensor::from_parts(input.shape().to_vec(), out)?,
        x_hat: Tensor::from_parts(input.shape().to_vec(), x_hat)?,
        inv_std,
        batch_stats,
    })
}

/// Gradients `(d_input, d_gamma, d_beta)`.
///
/// `batch_stats` must match the mode the forward pass ran in: with batch
/// statistics the input gradient also flows through the mean and variance.
pub fn batchnorm_backward<T: Scalar>(
    dout: &Tensor<T>,
    x_hat: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    batch_stats: bool,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if dout.shape() != x_hat.shape() {
        return Err(shape_err!(
            "batchnorm_backward: {:?} vs {:?}",
            dout.shape(),
            x_hat.shape()
        ));
    }
    let c = gamma.len();
    let m = dout.len() / c;
    let (dy, xh, g) = (dout.data(), x_hat.data(), gamma.data());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (r_dy, r_xh) in dy.chunks(c).zip(xh.chunks(c)) {
        for ch in 0..c {
            dgamma[ch] += r_dy[ch] * r_xh[ch];
            dbeta[ch] += r_dy[ch];
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    if batch_stats {
        // dx = inv_std/m * (m*dxh - sum(dxh) - x_hat*sum(dxh*x_hat)), dxh = dy*gamma
        let mf = T::lit(m as f64);
        for (r_dy, r_xh) in dy.chunks(c).zip(xh.chunks(c)) {
            for ch in 0..c {
                let dxh = r_dy[ch] * g[ch];
                let v = mf * dxh - dbeta[ch] * g[ch] - r_xh[ch] * dgamma[ch] * g[ch];
                dx.push(v * inv_std[ch] / mf);
            }
        }
    } else {
        for r_dy in dy.chunks(c) {
            for ch in 0..c {
                dx.push(r_dy[ch] * g[ch] * inv_std[ch]);
            }
        }
    }
    Ok((
        Tensor::from_parts(dout.shape().to_vec(), dx)?,
        Tensor::from_parts(vec![c], dgamma)?,
        Tensor::from_parts(vec![c], dbeta)?,
    ))
}

/// `running = momentum * running + (1 - momentum) * batch`.
pub fn update_running_stats<T: Scalar>(
    running_mean: &mut [T],
    running_var: &mut [T],
    batch_mean: &[T],
    batch_var: &[T],
    momentum: T,
) {
    let keep = T::one() - momentum;
    for (r, &b) in running_mean.iter_mut().zip(batch_mean) {
        *r = momentum * *r + keep * b;
    }
    for (r, &b) in running_var.iter_mut().zip(batch_var) {
        *r = momentum * *r + keep * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f64> {
        Tensor::from_fn(&[4, 3, 3, 2], |i| {
            ((i * 37) % 17) as f64 * 0.3 - 2.0 + (i % 2) as f64 * 5.0
        })
    }

    #[test]
    fn train_mode_output_moments() {
        let x = sample();
        let out = batchnorm(
            &x,
            &Tensor::full(&[2], 1.0),
            &Tensor::zeros(&[2]),
            BatchNormMode::Train,
            1e-5,
        )
        .unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = out
                .output
                .data()
                .iter()
                .skip(ch)
                .step_by(2)
                .copied()
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4, "var {}", var);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let out = batchnorm(
            &sample(),
            &Tensor::zeros(&[2]),
            &Tensor::scalar_vec(&[0.3, -1.0]),
            BatchNormMode::Train,
            1e-5,
        )
        .unwrap();
        for (i, &v) in out.output.data().iter().enumerate() {
            assert_eq!(v, if i % 2 == 0 { 0.3 } else { -1.0 });
        }
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let x = sample();
        let (m, v) = ([0.0, 0.0], [1.0, 1.0]);
        let out = batchnorm(
            &x,
            &Tensor::full(&[2], 1.0),
            &Tensor::zeros(&[2]),
            BatchNormMode::Eval {
                running_mean: &m,
                running_var: &v,
            },
            1e-5,
        )
        .unwrap();
        for (a, b) in out.output.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0));
        }
    }

    #[test]
    fn single_sample_train_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2, 1]);
        assert!(batchnorm(
            &x,
            &Tensor::full(&[1], 1.0),
            &Tensor::zeros(&[1]),
            BatchNormMode::Train,
            1e-5
        )
        .is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = Tensor::from_fn(&[3, 2, 2, 2], |i| ((i * 7) % 11) as f64 / 3.0 - 1.0);
        let gamma = Tensor::scalar_vec(&[1.3, 0.7]);
        let beta = Tensor::scalar_vec(&[0.2, -0.4]);
        let up = Tensor::from_fn(&[3, 2, 2, 2], |i| ((i * 5) % 7) as f64 - 3.0);
        let (rm, rv) = ([0.1, -0.3], [0.5, 2.0]);
        for train in [true, false] {
            let mode = |_: ()| {
                if train {
                    BatchNormMode::Train
                } else {
                    BatchNormMode::Eval {
                        running_mean: &rm,
                        running_var: &rv,
                    }
                }
            };
            let f = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                let o = batchnorm(x, g, b, mode(()), 1e-5).unwrap().output;
                o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            let fwd = batchnorm(&x, &gamma, &beta, mode(()), 1e-5).unwrap();
            let (dx, dg, db) =
                batchnorm_backward(&up, &fwd.x_hat, &fwd.inv_std, &gamma, train).unwrap();
            let h = 1e-6;
            for i in 0..x.len() {
                let (mut p, mut m) = (x.clone(), x.clone());
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                let fd = (f(&p, &gamma, &beta) - f(&m, &gamma, &beta)) / (2.0 * h);
                assert!(
                    (fd - dx.data()[i]).abs() < 1e-6,
                    "train={} i={} fd={} an={}",
                    train,
                    i,
                    fd,
                    dx.data()[i]
                );
            }
            for i in 0..2 {
                let (mut p, mut m) = (gamma.clone(), gamma.clone());
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                assert!(
                    ((f(&x, &p, &beta) - f(&x, &m, &beta)) / (2.0 * h) - dg.data()[i]).abs() < 1e-6
                );
                let (mut p, mut m) = (beta.clone(), beta.clone());
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                assert!(
                    ((f(&x, &gamma, &p) - f(&x, &gamma, &m)) / (2.0 * h) - db.data()[i]).abs()
                        < 1e-6
                );
            }
        }
    }

    #[test]
    fn running_update() {
        let (mut m, mut v) = (vec![0.0f64, 1.0], vec![1.0f64, 1.0]);
        update_running_stats(&mut m, &mut v, &[1.0, 1.0], &[3.0, 1.0], 0.9);
        assert!((m[0] - 0.1).abs() < 1e-15 && m[1] == 1.0);
        assert!((v[0] - 1.2).abs() < 1e-15 && v[1] == 1.0);
    }
}
