use super::Tensor;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// 2x2 max pooling with stride 2.
///
/// Returns the pooled tensor and, for every output cell, the flat index of the
/// input element that won. Ties go to the first maximum in row-major window
/// order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!(
            "maxpool2d needs even spatial dims, got {}x{}",
            h,
            w
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * ho * wo * c);
    let mut argmax = Vec::with_capacity(n * ho * wo * c);
    for s in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best_i = ((s * h + 2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = x[best_i];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ((s * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, ho, wo, c], out)?, argmax))
}

/// Routes each upstream gradient to the input element recorded in `argmax`.
pub fn maxpool2d_backward<T: Scalar>(
    dout: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if dout.len() != argmax.len() {
        return Err(shape_err!(
            "maxpool2d_backward: {} gradients for {} indices",
            dout.len(),
            argmax.len()
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dout.data()) {
        d[i] += g;
    }
    Ok(dx)
}

/// Nearest-neighbour x2 upsampling: every pixel becomes a 2x2 block.
pub fn upsample2d<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = input.dims4()?;
    let (ho, wo) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![T::zero(); n * ho * wo * c];
    for s in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let src = ((s * h + oy / 2) * w + ox / 2) * c;
                let dst = ((s * ho + oy) * wo + ox) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    Tensor::from_parts(vec![n, ho, wo, c], out)
}

/// Sums each 2x2 block of the upstream gradient.
pub fn upsample2d_backward<T: Scalar>(dout: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ho, wo, c) = dout.dims4()?;
    if ho % 2 != 0 || wo % 2 != 0 {
        return Err(shape_err!(
            "upsample2d_backward: odd gradient dims {}x{}",
            ho,
            wo
        ));
    }
    let (h, w) = (ho / 2, wo / 2);
    let g = dout.data();
    let mut dx = vec![T::zero(); n * h * w * c];
    for s in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let src = ((s * ho + oy) * wo + ox) * c;
                let dst = ((s * h + oy / 2) * w + ox / 2) * c;
                for ch in 0..c {
                    dx[dst + ch] += g[src + ch];
                }
            }
        }
    }
    Tensor::from_parts(vec![n, h, w, c], dx)
}
