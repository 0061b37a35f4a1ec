use crate::error::{Error, Result};
use crate::tensor::{im2col, ConvGeometry, Padding, Tensor};

/// A `rows x cols` matrix of `+1` / `-1` stored one bit per entry.
///
/// Rows are stored in order, each padded to a whole number of bytes. Within
/// a byte the lowest bit comes first. A set bit is `+1`, a clear bit `-1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
}

impl PackedMatrix {
    pub fn row_bytes(cols: usize) -> usize {
        cols.div_ceil(8)
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim("packed matrix needs at least one row and column"));
        }
        let expected = rows * Self::row_bytes(cols);
        if bits.len() != expected {
            return Err(Error::dim(format!(
                "packed {rows}x{cols} matrix needs {expected} bytes, got {}",
                bits.len()
            )));
        }
        Ok(PackedMatrix { rows, cols, bits })
    }

    /// Packs a row-major `rows x cols` matrix by sign: `> 0` becomes `+1`,
    /// everything else (including zero) `-1`.
    pub fn pack(rows: usize, cols: usize, values: &[f32]) -> Result<Self> {
        Self::pack_with(rows, cols, |r, c| values[r * cols + c], values.len())
    }

    /// Packs a layer weight in its stored layout (`[In, Out]` or
    /// `[kH, kW, Cin, Cout]`): one row per output unit, columns over fan-in.
    pub fn pack_weight(weight: &Tensor<f32>) -> Result<Self> {
        let shape = weight.shape();
        let rows = *shape.last().unwrap();
        let cols = weight.len() / rows;
        Self::pack_with(rows, cols, |r, c| weight.data()[c * rows + r], weight.len())
    }

    fn pack_with(rows: usize, cols: usize, at: impl Fn(usize, usize) -> f32, len: usize) -> Result<Self> {
        if rows * cols != len {
            return Err(Error::dim(format!("{rows}x{cols} matrix from {len} values")));
        }
        let rb = Self::row_bytes(cols);
        let mut bits = vec![0u8; rows * rb];
        for r in 0..rows {
            for c in 0..cols {
                if at(r, c) > 0.0 {
                    bits[r * rb + c / 8] |= 1 << (c % 8);
                }
            }
        }
        Self::from_bits(rows, cols, bits)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// True when entry `(r, c)` is `+1`.
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * Self::row_bytes(self.cols) + c / 8] >> (c % 8) & 1 == 1
    }

    /// Row-major `rows x cols` matrix of `+1.0` / `-1.0`.
    pub fn unpack(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(if self.get(r, c) { 1.0 } else { -1.0 });
            }
        }
        out
    }

    /// Inverse of [`PackedMatrix::pack_weight`]: `±1` weights in layer layout.
    pub fn unpack_weight(&self, shape: &[usize]) -> Result<Tensor<f32>> {
        if shape.last() != Some(&self.rows) || shape.iter().product::<usize>() != self.rows * self.cols {
            return Err(Error::dim(format!(
                "packed {}x{} matrix cannot fill weight shape {shape:?}",
                self.rows, self.cols
            )));
        }
        let out = self.rows;
        Tensor::from_fn(shape.to_vec(), |i| if self.get(i % out, i / out) { 1.0 } else { -1.0 })
    }
}

/// `y[n, r] = (sum of x[n, c] where bit (r, c) is set) - (sum of the rest)`.
/// The kernel only adds and subtracts activations.
pub fn packed_dense_forward(packed: &PackedMatrix, input: &Tensor<f32>) -> Result<Tensor<f32>> {
    input.expect_ndim(2, "packed dense")?;
    let (n, k) = (input.shape()[0], input.shape()[1]);
    if k != packed.cols {
        return Err(Error::dim(format!(
            "packed dense: weights take {} features, input has {k}",
            packed.cols
        )));
    }
    let rb = PackedMatrix::row_bytes(k);
    let mut out = Vec::with_capacity(n * packed.rows);
    for x in input.data().chunks_exact(k) {
        let total: f32 = x.iter().sum();
        for row in packed.bits.chunks_exact(rb) {
            let mut pos = 0.0f32;
            for (byte, xs) in row.iter().zip(x.chunks(8)) {
                if *byte == 0 {
                    continue;
                }
                for (bit, &v) in xs.iter().enumerate() {
                    if byte >> bit & 1 == 1 {
                        pos += v;
                    }
                }
            }
            out.push(pos - (total - pos));
        }
    }
    Tensor::new(vec![n, packed.rows], out)
}

/// Convolution with a packed `±1` kernel of shape `kernel_shape`, lowered to
/// patch rows and [`packed_dense_forward`].
pub fn packed_conv_forward(
    packed: &PackedMatrix,
    kernel_shape: &[usize],
    input: &Tensor<f32>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<f32>> {
    let geom = ConvGeometry::new(input.shape(), kernel_shape, stride, padding)?;
    if packed.rows != geom.out_c || packed.cols != geom.patch_len() {
        return Err(Error::dim(format!(
            "packed conv: kernel {kernel_shape:?} does not match packed {}x{}",
            packed.rows, packed.cols
        )));
    }
    let cols = im2col(input, &geom)?;
    packed_dense_forward(packed, &cols)?.reshape(geom.output_shape().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{conv2d, matmul};
    use crate::Rng;
    use rand::Rng as _;

    fn random_signs(len: usize, rng: &mut Rng) -> Vec<f32> {
        (0..len).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
    }

    #[test]
    fn bit_order_is_lsb_first_with_row_padding() {
        let m = PackedMatrix::pack(2, 3, &[1.0, -1.0, 1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_eq!(m.bits(), &[0b101, 0b100]);
        let m = PackedMatrix::pack(1, 10, &[1.0; 10]).unwrap();
        assert_eq!(m.bits(), &[0xff, 0b11]);
    }

    #[test]
    fn zero_packs_as_minus_one() {
        let m = PackedMatrix::pack(1, 2, &[0.0, 0.5]).unwrap();
        assert_eq!(m.unpack(), vec![-1.0, 1.0]);
    }

    #[test]
    fn round_trip_ragged_widths() {
        let mut rng = Rng::new(11);
        for cols in [1, 7, 8, 9, 13, 31, 64, 100] {
            let vals = random_signs(5 * cols, &mut rng);
            let m = PackedMatrix::pack(5, cols, &vals).unwrap();
            assert_eq!(m.bits().len(), 5 * cols.div_ceil(8));
            assert_eq!(m.unpack(), vals);
        }
    }

    #[test]
    fn weight_layout_round_trip() {
        let mut rng = Rng::new(12);
        for shape in [vec![7, 3], vec![3, 3, 2, 5]] {
            let len = shape.iter().product();
            let w = Tensor::new(shape.clone(), random_signs(len, &mut rng)).unwrap();
            let m = PackedMatrix::pack_weight(&w).unwrap();
            assert_eq!(m.rows(), *shape.last().unwrap());
            assert_eq!(m.unpack_weight(&shape).unwrap(), w);
        }
    }

    #[test]
    fn all_set_row_sums_inputs() {
        let m = PackedMatrix::pack(1, 5, &[1.0; 5]).unwrap();
        let x = Tensor::new(vec![1, 5], vec![0.5, 1.0, -2.0, 3.0, 0.25]).unwrap();
        assert_eq!(packed_dense_forward(&m, &x).unwrap().data(), &[2.75]);
    }

    #[test]
    fn alternating_bits_cancel() {
        let vals: Vec<f32> = (0..12).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let m = PackedMatrix::pack(1, 12, &vals).unwrap();
        let x = Tensor::full(vec![2, 12], 1.0).unwrap();
        assert_eq!(packed_dense_forward(&m, &x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn dense_matches_float_matmul() {
        let mut rng = Rng::new(13);
        let w = Tensor::new(vec![37, 11], random_signs(37 * 11, &mut rng)).unwrap();
        let x = Tensor::<f32>::randn(vec![6, 37], 1.0, &mut rng).unwrap();
        let packed = PackedMatrix::pack_weight(&w).unwrap();
        let got = packed_dense_forward(&packed, &x).unwrap();
        let want = matmul(&x, &w).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-5);
    }

    #[test]
    fn dense_shape_mismatch() {
        let m = PackedMatrix::pack(2, 3, &[1.0; 6]).unwrap();
        let x = Tensor::full(vec![1, 4], 1.0).unwrap();
        assert!(matches!(packed_dense_forward(&m, &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv_matches_unpacked_kernel() {
        let mut rng = Rng::new(14);
        let shape = [3, 3, 2, 4];
        let k = Tensor::new(shape.to_vec(), random_signs(72, &mut rng)).unwrap();
        let x = Tensor::<f32>::randn(vec![2, 6, 5, 2], 1.0, &mut rng).unwrap();
        let packed = PackedMatrix::pack_weight(&k).unwrap();
        for (stride, padding) in [(1, Padding::Valid), (1, Padding::Same), (2, Padding::Same)] {
            let got = packed_conv_forward(&packed, &shape, &x, stride, padding).unwrap();
            let want = conv2d(&x, &k, stride, padding).unwrap();
            assert!(got.max_abs_diff(&want).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn conv_all_ones_kernel() {
        let packed = PackedMatrix::pack_weight(&Tensor::full(vec![3, 3, 2, 1], 1.0).unwrap()).unwrap();
        let x = Tensor::full(vec![1, 4, 4, 2], 1.0).unwrap();
        let y = packed_conv_forward(&packed, &[3, 3, 2, 1], &x, 1, Padding::Valid).unwrap();
        assert!(y.data().iter().all(|&v| v == 18.0));
    }

    #[test]
    fn conv_impulse_reproduces_kernel() {
        let mut rng = Rng::new(15);
        let vals = random_signs(9, &mut rng);
        let k = Tensor::new(vec![3, 3, 1, 1], vals.clone()).unwrap();
        let packed = PackedMatrix::pack_weight(&k).unwrap();
        let mut x = Tensor::zeros(vec![1, 3, 3, 1]).unwrap();
        x.data_mut()[4] = 1.0;
        let y = packed_conv_forward(&packed, &[3, 3, 1, 1], &x, 1, Padding::Same).unwrap();
        let flipped: Vec<f32> = vals.iter().rev().copied().collect();
        assert_eq!(y.data(), flipped.as_slice());
    }
}
