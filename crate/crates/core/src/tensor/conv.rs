//! 2-D cross-correlation over NHWC tensors, lowered to a matrix multiply by
//! patch unrolling (im2col).
//!
//! Kernels are laid out `[kH, kW, Cin, Cout]`. An unrolled patch row is ordered
//! `(ky, kx, c)`, which is exactly the row-major flattening of one output
//! filter's `kH x kW x Cin` block, so the kernel reshaped to
//! `[kH*kW*Cin, Cout]` multiplies the patch matrix directly.

use super::{gemm, Element, MatRef, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// No padding; output `floor((H - kH) / stride) + 1`.
    Valid,
    /// Zero padding so that output is `ceil(H / stride)`; the extra row or
    /// column, when the total is odd, goes to the bottom/right.
    Same,
}

/// Resolved dimensions of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if input_shape.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d: input must be N x H x W x Cin, got {input_shape:?}"
            )));
        }
        if kernel_shape.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d: kernel must be kH x kW x Cin x Cout, got {kernel_shape:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be at least 1"));
        }
        let (batch, in_h, in_w, in_c) = (
            input_shape[0],
            input_shape[1],
            input_shape[2],
            input_shape[3],
        );
        let (k_h, k_w, k_c, out_c) = (
            kernel_shape[0],
            kernel_shape[1],
            kernel_shape[2],
            kernel_shape[3],
        );
        if k_c != in_c {
            return Err(Error::dim(format!(
                "conv2d: input has {in_c} channels but kernel {kernel_shape:?} expects {k_c}"
            )));
        }
        let (out_h, pad_top) = out_dim(in_h, k_h, stride, padding)?;
        let (out_w, pad_left) = out_dim(in_w, k_w, stride, padding)?;
        Ok(ConvGeometry {
            batch,
            in_h,
            in_w,
            in_c,
            k_h,
            k_w,
            out_c,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    /// Length of one unrolled patch, `kH * kW * Cin`.
    pub fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.in_c
    }

    /// Number of output pixels across the batch, `N * H' * W'`.
    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.batch, self.in_h, self.in_w, self.in_c]
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_h, self.out_w, self.out_c]
    }

    /// Copy of this geometry for a different batch size.
    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }
}

fn out_dim(size: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if k > size {
                return Err(Error::dim(format!(
                    "conv2d: kernel extent {k} exceeds input extent {size} with valid padding"
                )));
            }
            Ok(((size - k) / stride + 1, 0))
        }
        Padding::Same => {
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(size);
            Ok((out, total / 2))
        }
    }
}

/// Unrolls every receptive field into a row: `[N*H'*W', kH*kW*Cin]`.
pub fn im2col<T: Element>(input: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    if input.shape() != geom.input_shape() {
        return Err(Error::dim(format!(
            "im2col: input {:?} does not match geometry {:?}",
            input.shape(),
            geom.input_shape()
        )));
    }
    let g = geom;
    let patch = g.patch_len();
    let mut cols = vec![T::zero(); g.rows() * patch];
    let x = input.data();
    let mut row = 0;
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.k_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.k_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let src = ((n * g.in_h + iy as usize) * g.in_w + ix as usize) * g.in_c;
                        let off = (ky * g.k_w + kx) * g.in_c;
                        dst[off..off + g.in_c].copy_from_slice(&x[src..src + g.in_c]);
                    }
                }
                row += 1;
            }
        }
    }
    Ok(Tensor::from_parts(vec![g.rows(), patch], cols))
}

/// Adjoint of [`im2col`]: scatters patch rows back, summing overlaps.
pub fn col2im<T: Element>(cols: &Tensor<T>, geom: &ConvGeometry) -> Result<Tensor<T>> {
    let g = geom;
    let patch = g.patch_len();
    if cols.shape() != [g.rows(), patch] {
        return Err(Error::dim(format!(
            "col2im: columns {:?} do not match geometry rows {} x {}",
            cols.shape(),
            g.rows(),
            patch
        )));
    }
    let mut out = vec![T::zero(); g.batch * g.in_h * g.in_w * g.in_c];
    let c = cols.data();
    let mut row = 0;
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src_row = &c[row * patch..(row + 1) * patch];
                for ky in 0..g.k_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.k_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let dst = ((n * g.in_h + iy as usize) * g.in_w + ix as usize) * g.in_c;
                        let off = (ky * g.k_w + kx) * g.in_c;
                        for ch in 0..g.in_c {
                            out[dst + ch] = out[dst + ch] + src_row[off + ch];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Ok(Tensor::from_parts(g.input_shape().to_vec(), out))
}

/// Cross-correlation `out[n,y,x,o] = sum_{ky,kx,c} in[n, y*s+ky-pt, x*s+kx-pl, c] * k[ky,kx,c,o]`
/// with out-of-range input taken as zero.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let geom = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    let cols = im2col(input, &geom)?;
    let mut out = vec![T::zero(); geom.rows() * geom.out_c];
    gemm(
        MatRef::row_major(cols.data(), geom.rows(), geom.patch_len()),
        MatRef::row_major(kernel.data(), geom.patch_len(), geom.out_c),
        T::zero(),
        &mut out,
    );
    Ok(Tensor::from_parts(geom.output_shape().to_vec(), out))
}

/// Gradients of [`conv2d`] with respect to its input and kernel.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let geom = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    if grad_out.shape() != geom.output_shape() {
        return Err(Error::dim(format!(
            "conv2d_backward: gradient {:?} does not match output {:?}",
            grad_out.shape(),
            geom.output_shape()
        )));
    }
    let cols = im2col(input, &geom)?;
    let (rows, patch, oc) = (geom.rows(), geom.patch_len(), geom.out_c);
    let mut gk = vec![T::zero(); patch * oc];
    gemm(
        MatRef::row_major(cols.data(), rows, patch).t(),
        MatRef::row_major(grad_out.data(), rows, oc),
        T::zero(),
        &mut gk,
    );
    let mut gcols = vec![T::zero(); rows * patch];
    gemm(
        MatRef::row_major(grad_out.data(), rows, oc),
        MatRef::row_major(kernel.data(), patch, oc).t(),
        T::zero(),
        &mut gcols,
    );
    let grad_input = col2im(&Tensor::from_parts(vec![rows, patch], gcols), &geom)?;
    Ok((grad_input, Tensor::from_parts(kernel.shape().to_vec(), gk)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Direct six-loop cross-correlation used as the oracle.
    fn direct(input: &Tensor<f64>, kernel: &Tensor<f64>, stride: usize, padding: Padding) -> Tensor<f64> {
        let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding).unwrap();
        let mut out = Tensor::zeros(g.output_shape().to_vec()).unwrap();
        let x = input.data();
        let k = kernel.data();
        for n in 0..g.batch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    for o in 0..g.out_c {
                        let mut acc = 0.0;
                        for ky in 0..g.k_h {
                            for kx in 0..g.k_w {
                                for c in 0..g.in_c {
                                    let iy = (oy * stride + ky) as isize - g.pad_top as isize;
                                    let ix = (ox * stride + kx) as isize - g.pad_left as isize;
                                    if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                        continue;
                                    }
                                    let xi = ((n * g.in_h + iy as usize) * g.in_w + ix as usize) * g.in_c + c;
                                    let ki = ((ky * g.k_w + kx) * g.in_c + c) * g.out_c + o;
                                    acc += x[xi] * k[ki];
                                }
                            }
                        }
                        let oi = ((n * g.out_h + oy) * g.out_w + ox) * g.out_c + o;
                        out.data_mut()[oi] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_valid() {
        let x = Tensor::<f64>::full(vec![1, 3, 3, 1], 1.0).unwrap();
        let k = Tensor::<f64>::full(vec![3, 3, 1, 1], 1.0).unwrap();
        let y = conv2d(&x, &k, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn impulse_reproduces_flipped_kernel() {
        let mut x = Tensor::<f64>::zeros(vec![1, 5, 5, 1]).unwrap();
        x.data_mut()[2 * 5 + 2] = 1.0;
        let k = Tensor::<f64>::from_fn(vec![3, 3, 1, 1], |i| i as f64 + 1.0).unwrap();
        let y = conv2d(&x, &k, 1, Padding::Same).unwrap();
        // Around the impulse, out[2+dy, 2+dx] = k[1-dy, 1-dx].
        for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                let oy = (2 + dy) as usize;
                let ox = (2 + dx) as usize;
                let ki = ((1 - dy) * 3 + (1 - dx)) as usize;
                assert_eq!(y.data()[oy * 5 + ox], k.data()[ki]);
            }
        }
        assert_eq!(y.sum(), k.sum());
    }

    #[test]
    fn matches_direct_oracle() {
        let mut rng = Rng::new(5);
        let x = Tensor::<f64>::randn(vec![2, 8, 8, 3], 1.0, &mut rng).unwrap();
        let k = Tensor::<f64>::randn(vec![3, 3, 3, 4], 1.0, &mut rng).unwrap();
        for (stride, padding) in [(1, Padding::Valid), (1, Padding::Same), (2, Padding::Same), (2, Padding::Valid)] {
            let fast = conv2d(&x, &k, stride, padding).unwrap();
            let slow = direct(&x, &k, stride, padding);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-10);
        }
    }

    #[test]
    fn same_padding_output_size() {
        let g = ConvGeometry::new(&[1, 28, 28, 1], &[5, 5, 1, 6], 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top), (28, 28, 2));
        let g = ConvGeometry::new(&[1, 7, 7, 1], &[3, 3, 1, 1], 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (4, 1));
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::<f32>::zeros(vec![1, 4, 4, 2]).unwrap();
        let k = Tensor::<f32>::zeros(vec![3, 3, 3, 1]).unwrap();
        assert!(matches!(conv2d(&x, &k, 1, Padding::Valid), Err(Error::Dimension(_))));
    }

    #[test]
    fn linearity() {
        let mut rng = Rng::new(9);
        let a = Tensor::<f64>::randn(vec![1, 6, 6, 2], 1.0, &mut rng).unwrap();
        let b = Tensor::<f64>::randn(vec![1, 6, 6, 2], 1.0, &mut rng).unwrap();
        let k = Tensor::<f64>::randn(vec![3, 3, 2, 3], 1.0, &mut rng).unwrap();
        let mix = a.zip_map(&b, |x, y| 2.5 * x - 0.75 * y).unwrap();
        let lhs = conv2d(&mix, &k, 1, Padding::Same).unwrap();
        let ca = conv2d(&a, &k, 1, Padding::Same).unwrap();
        let cb = conv2d(&b, &k, 1, Padding::Same).unwrap();
        let rhs = ca.zip_map(&cb, |x, y| 2.5 * x - 0.75 * y).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let mut rng = Rng::new(13);
        let x = Tensor::<f64>::randn(vec![2, 5, 6, 2], 1.0, &mut rng).unwrap();
        let g = ConvGeometry::new(x.shape(), &[3, 2, 2, 1], 2, Padding::Same).unwrap();
        let cols = im2col(&x, &g).unwrap();
        let c = Tensor::<f64>::randn(cols.shape().to_vec(), 1.0, &mut rng).unwrap();
        let lhs: f64 = cols.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
        let back = col2im(&c, &g).unwrap();
        let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
