use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolMode {
    Max,
    Avg,
}

struct PoolDims {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
}

fn dims<T: Element>(input: &Tensor<T>, window: usize, stride: usize) -> Result<PoolDims> {
    input.expect_ndim(4, "pool2d")?;
    if window == 0 || stride == 0 {
        return Err(Error::invalid("pool2d: window and stride must be at least 1"));
    }
    let s = input.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    if window > h || window > w {
        return Err(Error::dim(format!(
            "pool2d: window {window} larger than input {h}x{w}"
        )));
    }
    Ok(PoolDims {
        n,
        h,
        w,
        c,
        oh: (h - window) / stride + 1,
        ow: (w - window) / stride + 1,
    })
}

/// Non-overlapping or strided pooling over the spatial axes of an NHWC tensor
/// (no padding).
pub fn pool2d<T: Element>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
    mode: PoolMode,
) -> Result<Tensor<T>> {
    let d = dims(input, window, stride)?;
    let x = input.data();
    let inv = T::one() / T::of((window * window) as f64);
    let mut out = Vec::with_capacity(d.n * d.oh * d.ow * d.c);
    for n in 0..d.n {
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                for ch in 0..d.c {
                    let mut acc = match mode {
                        PoolMode::Max => T::neg_infinity(),
                        PoolMode::Avg => T::zero(),
                    };
                    for ky in 0..window {
                        for kx in 0..window {
                            let v = x[((n * d.h + oy * stride + ky) * d.w + ox * stride + kx) * d.c + ch];
                            acc = match mode {
                                PoolMode::Max => acc.max(v),
                                PoolMode::Avg => acc + v,
                            };
                        }
                    }
                    out.push(match mode {
                        PoolMode::Max => acc,
                        PoolMode::Avg => acc * inv,
                    });
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![d.n, d.oh, d.ow, d.c], out))
}

/// Gradient of [`pool2d`] with respect to its input. Max pooling routes each
/// upstream value to the first maximal element of its window.
pub fn pool2d_backward<T: Element>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    window: usize,
    stride: usize,
    mode: PoolMode,
) -> Result<Tensor<T>> {
    let d = dims(input, window, stride)?;
    if grad_out.shape() != [d.n, d.oh, d.ow, d.c] {
        return Err(Error::dim(format!(
            "pool2d_backward: gradient {:?} does not match output [{}, {}, {}, {}]",
            grad_out.shape(),
            d.n,
            d.oh,
            d.ow,
            d.c
        )));
    }
    let x = input.data();
    let g = grad_out.data();
    let inv = T::one() / T::of((window * window) as f64);
    let mut gi = vec![T::zero(); x.len()];
    let idx = |n: usize, y: usize, xx: usize, ch: usize| ((n * d.h + y) * d.w + xx) * d.c + ch;
    for n in 0..d.n {
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                for ch in 0..d.c {
                    let go = g[((n * d.oh + oy) * d.ow + ox) * d.c + ch];
                    match mode {
                        PoolMode::Max => {
                            let mut best = idx(n, oy * stride, ox * stride, ch);
                            for ky in 0..window {
                                for kx in 0..window {
                                    let i = idx(n, oy * stride + ky, ox * stride + kx, ch);
                                    if x[i] > x[best] {
                                        best = i;
                                    }
                                }
                            }
                            gi[best] = gi[best] + go;
                        }
                        PoolMode::Avg => {
                            for ky in 0..window {
                                for kx in 0..window {
                                    let i = idx(n, oy * stride + ky, ox * stride + kx, ch);
                                    gi[i] = gi[i] + go * inv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), gi))
}
