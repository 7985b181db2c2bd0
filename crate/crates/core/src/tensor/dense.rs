use super::Tensor;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Affine map `input · weights + bias` over a `[n, d_in]` batch.
pub fn dense<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, din) = input.dims2()?;
    let (wr, dout) = weights.dims2()?;
    if din != wr {
        return Err(shape_err!(
            "dense: input width {} but weights have {} rows",
            din,
            wr
        ));
    }
    if bias.len() != dout {
        return Err(shape_err!(
            "dense: bias has {} entries, expected {}",
            bias.len(),
            dout
        ));
    }
    let mut out = Vec::with_capacity(n * dout);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        n,
        din,
        dout,
        T::one(),
        input.data(),
        (din, 1),
        weights.data(),
        (dout, 1),
        T::one(),
        &mut out,
        (dout, 1),
    );
    Tensor::from_parts(vec![n, dout], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    dout: &Tensor<T>,
    want_input_grad: bool,
) -> Result<DenseGrads<T>> {
    let (n, din) = input.dims2()?;
    let (_, d_out) = weights.dims2()?;
    if dout.shape() != [n, d_out] {
        return Err(shape_err!(
            "dense_backward: upstream gradient shape {:?}",
            dout.shape()
        ));
    }
    let mut dw = vec![T::zero(); din * d_out];
    T::gemm(
        din,
        n,
        d_out,
        T::one(),
        input.data(),
        (1, din),
        dout.data(),
        (d_out, 1),
        T::zero(),
        &mut dw,
        (d_out, 1),
    );
    let mut db = vec![T::zero(); d_out];
    for row in dout.data().chunks(d_out) {
        for (a, &b) in db.iter_mut().zip(row) {
            *a += b;
        }
    }
    let input_grad = if want_input_grad {
        let mut dx = vec![T::zero(); n * din];
        T::gemm(
            n,
            d_out,
            din,
            T::one(),
            dout.data(),
            (d_out, 1),
            weights.data(),
            (1, d_out),
            T::zero(),
            &mut dx,
            (din, 1),
        );
        Some(Tensor::from_parts(vec![n, din], dx)?)
    } else {
        None
    };
    Ok(DenseGrads {
        input: input_grad,
        weights: Tensor::from_parts(vec![din, d_out], dw)?,
        bias: Tensor::from_parts(vec![d_out], db)?,
    })
}
