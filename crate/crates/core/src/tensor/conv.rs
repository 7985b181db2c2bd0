use rayon::prelude::*;

use super::Tensor;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Samples per work unit; fixed so the reduction order does not depend on the
/// number of worker threads.
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that preserves height and width. For even kernels the
    /// extra row/column goes to the bottom/right.
    Same,
    Valid,
}

impl Padding {
    fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Same => {
                let before = (k - 1) / 2;
                (before, k - 1 - before)
            }
            Padding::Valid => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn new(input: &[usize], kernels: &[usize], padding: Padding) -> Result<Self> {
        let (&[_, h, w, cin], &[kh, kw, kcin, cout]) = (input, kernels) else {
            return Err(shape_err!(
                "conv2d expects NHWC input and [kh,kw,cin,cout] kernels, got {:?} and {:?}",
                input,
                kernels
            ));
        };
        if cin != kcin {
            return Err(shape_err!(
                "conv2d: input has {} channels, kernels expect {}",
                cin,
                kcin
            ));
        }
        let (pt, pb) = padding.amounts(kh);
        let (pl, pr) = padding.amounts(kw);
        if kh > h + pt + pb || kw > w + pl + pr {
            return Err(shape_err!(
                "conv2d: kernel {}x{} larger than padded input {}x{}",
                kh,
                kw,
                h,
                w
            ));
        }
        Ok(Self {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            ho: h + pt + pb - kh + 1,
            wo: w + pl + pr - kw + 1,
            pad_top: pt,
            pad_left: pl,
        })
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one sample into a `[positions, kh*kw*cin]` patch matrix.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let patch = self.patch();
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &mut cols[(oy * self.wo + ox) * patch..][..patch];
                for ky in 0..self.kh {
                    let iy = (oy + ky) as isize - self.pad_top as isize;
                    for kx in 0..self.kw {
                        let ix = (ox + kx) as isize - self.pad_left as isize;
                        let dst = &mut row[(ky * self.kw + kx) * self.cin..][..self.cin];
                        if iy < 0 || ix < 0 || iy as usize >= self.h || ix as usize >= self.w {
                            dst.fill(T::zero());
                        } else {
                            let src = (iy as usize * self.w + ix as usize) * self.cin;
                            dst.copy_from_slice(&x[src..src + self.cin]);
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch matrix back onto one sample's input gradient.
    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let patch = self.patch();
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = &cols[(oy * self.wo + ox) * patch..][..patch];
                for ky in 0..self.kh {
                    let iy = (oy + ky) as isize - self.pad_top as isize;
                    if iy < 0 || iy as usize >= self.h {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox + kx) as isize - self.pad_left as isize;
                        if ix < 0 || ix as usize >= self.w {
                            continue;
                        }
                        let src = &row[(ky * self.kw + kx) * self.cin..][..self.cin];
                        let dst = (iy as usize * self.w + ix as usize) * self.cin;
                        for (d, &s) in dx[dst..dst + self.cin].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution (cross-correlation), stride 1.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), kernels.shape(), padding)?;
    if bias.len() != g.cout {
        return Err(shape_err!(
            "conv2d: bias has {} entries, expected {}",
            bias.len(),
            g.cout
        ));
    }
    let n = input.batch();
    let in_len = g.h * g.w * g.cin;
    let out_len = g.positions() * g.cout;
    let mut out = vec![T::zero(); n * out_len];
    let x = input.data();
    let k = kernels.data();
    let b = bias.data();

    out.par_chunks_mut(out_len * CHUNK)
        .enumerate()
        .for_each(|(ci, out_chunk)| {
            let mut cols = vec![T::zero(); g.positions() * g.patch()];
            for (j, o) in out_chunk.chunks_mut(out_len).enumerate() {
                let s = ci * CHUNK + j;
                g.im2col(&x[s * in_len..(s + 1) * in_len], &mut cols);
                for row in o.chunks_mut(g.cout) {
                    row.copy_from_slice(b);
                }
                T::gemm(
                    g.positions(),
                    g.patch(),
                    g.cout,
                    T::one(),
                    &cols,
                    (g.patch(), 1),
                    k,
                    (g.cout, 1),
                    T::one(),
                    o,
                    (g.cout, 1),
                );
            }
        });
    Tensor::from_parts(vec![n, g.ho, g.wo, g.cout], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the input gradient was not requested.
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d`] given the upstream gradient `dout`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    dout: &Tensor<T>,
    padding: Padding,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input.shape(), kernels.shape(), padding)?;
    let n = input.batch();
    if dout.shape() != [n, g.ho, g.wo, g.cout] {
        return Err(shape_err!(
            "conv2d_backward: upstream gradient shape {:?}",
            dout.shape()
        ));
    }
    let in_len = g.h * g.w * g.cin;
    let x = input.data();
    let dy = dout.data();
    let k = kernels.data();
    let klen = kernels.len();

    let mut dx = if want_input_grad {
        vec![T::zero(); n * in_len]
    } else {
        Vec::new()
    };
    let chunks = n.div_ceil(CHUNK);

    // One partial kernel/bias gradient per chunk, reduced below in chunk order.
    let partials: Vec<(Vec<T>, Vec<T>)> = if want_input_grad {
        dx.par_chunks_mut(in_len * CHUNK)
            .enumerate()
            .map(|(ci, dx_chunk)| chunk_backward(&g, ci, x, dy, k, klen, Some(dx_chunk), n))
            .collect()
    } else {
        (0..chunks)
            .into_par_iter()
            .map(|ci| chunk_backward(&g, ci, x, dy, k, klen, None, n))
            .collect()
    };

    let mut dk = vec![T::zero(); klen];
    let mut db = vec![T::zero(); g.cout];
    for (pk, pb) in partials {
        for (a, b) in dk.iter_mut().zip(pk) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(pb) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        input: if want_input_grad {
            Some(Tensor::from_parts(input.shape().to_vec(), dx)?)
        } else {
            None
        },
        kernels: Tensor::from_parts(kernels.shape().to_vec(), dk)?,
        bias: Tensor::from_parts(vec![g.cout], db)?,
    })
}

#[allow(clippy::too_many_arguments)]
fn chunk_backward<T: Scalar>(
    g: &Geometry,
    chunk: usize,
    x: &[T],
    dy: &[T],
    k: &[T],
    klen: usize,
    mut dx_chunk: Option<&mut [T]>,
    n: usize,
) -> (Vec<T>, Vec<T>) {
    let in_len = g.h * g.w * g.cin;
    let out_len = g.positions() * g.cout;
    let mut cols = vec![T::zero(); g.positions() * g.patch()];
    let mut dcols = if dx_chunk.is_some() {
        vec![T::zero(); cols.len()]
    } else {
        Vec::new()
    };
    let mut dk = vec![T::zero(); klen];
    let mut db = vec![T::zero(); g.cout];
    let start = chunk * CHUNK;
    let end = (start + CHUNK).min(n);
    for s in start..end {
        let dys = &dy[s * out_len..(s + 1) * out_len];
        g.im2col(&x[s * in_len..(s + 1) * in_len], &mut cols);
        // dK += cols^T * dy
        T::gemm(
            g.patch(),
            g.positions(),
            g.cout,
            T::one(),
            &cols,
            (1, g.patch()),
            dys,
            (g.cout, 1),
            T::one(),
            &mut dk,
            (g.cout, 1),
        );
        for row in dys.chunks(g.cout) {
            for (a, &b) in db.iter_mut().zip(row) {
                *a += b;
            }
        }
        if let Some(dx_chunk) = dx_chunk.as_deref_mut() {
            // dcols = dy * K^T
            T::gemm(
                g.positions(),
                g.cout,
                g.patch(),
                T::one(),
                dys,
                (g.cout, 1),
                k,
                (1, g.cout),
                T::zero(),
                &mut dcols,
                (g.patch(), 1),
            );
            let j = s - start;
            g.col2im(&dcols, &mut dx_chunk[j * in_len..(j + 1) * in_len]);
        }
    }
    (dk, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Direct nested-loop convolution used as an independent reference.
    fn reference(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], pad: Padding) -> Tensor<f64> {
        let (n, h, w, cin) = x.dims4().unwrap();
        let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
        let (pt, pb) = pad.amounts(kh);
        let (pl, pr) = pad.amounts(kw);
        let (ho, wo) = (h + pt + pb - kh + 1, w + pl + pr - kw + 1);
        let mut out = Tensor::zeros(&[n, ho, wo, cout]);
        for s in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    for co in 0..cout {
                        let mut acc = b[co];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as isize + ky as isize - pt as isize;
                                let ix = ox as isize + kx as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += x.data()
                                        [((s * h + iy as usize) * w + ix as usize) * cin + ci]
                                        * k.data()[((ky * kw + kx) * cin + ci) * cout + co];
                                }
                            }
                        }
                        out.data_mut()[((s * ho + oy) * wo + ox) * cout + co] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn valid_two_by_two() {
        let x = t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let k = t(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]);
        let y = conv2d(&x, &k, &t(&[1], &[0.0]), Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_fn(&[2, 3, 4, 1], |i| (i as f64 * 0.37).sin());
        let k = t(&[1, 1, 1, 1], &[1.0]);
        let y = conv2d(&x, &k, &t(&[1], &[0.0]), Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn same_padding_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 48, 48, 1]);
        let k = Tensor::zeros(&[3, 3, 1, 64]);
        let y = conv2d(&x, &k, &Tensor::zeros(&[64]), Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 48, 48, 64]);
        for (h, w, kh) in [(5, 7, 2), (6, 6, 3), (24, 24, 2), (3, 3, 3)] {
            let x = Tensor::<f64>::zeros(&[1, h, w, 2]);
            let k = Tensor::zeros(&[kh, kh, 2, 3]);
            let y = conv2d(&x, &k, &Tensor::zeros(&[3]), Padding::Same).unwrap();
            assert_eq!(y.shape(), &[1, h, w, 3]);
        }
    }

    #[test]
    fn even_kernel_pads_bottom_right() {
        // 2x2 all-ones kernel over a 2x2 image: the top-left output sees the whole
        // image, the bottom-right output sees only the last pixel.
        let x = t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let k = t(&[2, 2, 1, 1], &[1.0; 4]);
        let y = conv2d(&x, &k, &t(&[1], &[0.0]), Padding::Same).unwrap();
        assert_eq!(y.data(), &[10.0, 6.0, 7.0, 4.0]);
    }

    #[test]
    fn matches_reference_multichannel() {
        let x = Tensor::from_fn(&[5, 5, 4, 3], |i| ((i * 7919) % 23) as f64 / 7.0 - 1.5);
        for (kh, pad) in [(3, Padding::Same), (2, Padding::Same), (3, Padding::Valid)] {
            let k = Tensor::from_fn(&[kh, kh, 3, 2], |i| ((i * 31) % 11) as f64 / 5.0 - 1.0);
            let b = [0.25, -0.5];
            let y = conv2d(&x, &k, &t(&[2], &b), pad).unwrap();
            let r = reference(&x, &k, &b, pad);
            assert_eq!(y.shape(), r.shape());
            for (a, e) in y.data().iter().zip(r.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4, 2]);
        let k = Tensor::zeros(&[3, 3, 3, 1]);
        assert!(conv2d(&x, &k, &Tensor::zeros(&[1]), Padding::Same).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = Tensor::from_fn(&[2, 4, 3, 2], |i| ((i * 13) % 7) as f64 / 3.0 - 1.0);
        let k = Tensor::from_fn(&[2, 2, 2, 3], |i| ((i * 5) % 9) as f64 / 4.0 - 1.0);
        let b = t(&[3], &[0.1, -0.2, 0.3]);
        let w = Tensor::from_fn(&[2, 4, 3, 3], |i| ((i * 17) % 5) as f64 - 2.0);
        let loss = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            let y = conv2d(x, k, b, Padding::Same).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let g = conv2d_backward(&x, &k, &w, Padding::Same, true).unwrap();
        let h = 1e-6;
        let dx = g.input.unwrap();
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&p, &k, &b) - loss(&m, &k, &b)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-6);
        }
        for i in 0..k.len() {
            let mut p = k.clone();
            p.data_mut()[i] += h;
            let mut m = k.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&x, &p, &b) - loss(&x, &m, &b)) / (2.0 * h);
            assert!((fd - g.kernels.data()[i]).abs() < 1e-6);
        }
        for i in 0..3 {
            let mut p = b.clone();
            p.data_mut()[i] += h;
            let mut m = b.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&x, &k, &p) - loss(&x, &k, &m)) / (2.0 * h);
            assert!((fd - g.bias.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_without_input_grad() {
        let x = Tensor::from_fn(&[9, 3, 3, 1], |i| i as f64 * 0.01);
        let k = Tensor::from_fn(&[3, 3, 1, 2], |i| i as f64 * 0.1);
        let dy = Tensor::full(&[9, 3, 3, 2], 1.0);
        let a = conv2d_backward(&x, &k, &dy, Padding::Same, false).unwrap();
        let b = conv2d_backward(&x, &k, &dy, Padding::Same, true).unwrap();
        assert!(a.input.is_none());
        assert_eq!(a.kernels, b.kernels);
        assert_eq!(a.bias.data(), &[81.0, 81.0]);
    }
}
