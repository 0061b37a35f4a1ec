use crate::binarize::UMode;
use crate::error::{Error, Result};
use crate::tensor::{Element, Padding, PoolMode};

use super::{GraphBuilder, LayerGraph};

/// Learnable scalar count of [`build_lenet5`]:
/// conv 5x5x1x6 (156) + conv 5x5x6x16 (2416) + dense 400x120 (48120)
/// + dense 120x84 (10164) + dense 84x10 (850).
pub const LENET5_PARAMS: usize = 61_706;

/// One binarize flag per weight layer, in graph order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerFlags(pub Vec<bool>);

impl LayerFlags {
    /// Binarize every weight layer except the final prediction layer.
    pub fn all_but_last(n: usize) -> Self {
        LayerFlags((0..n).map(|i| i + 1 < n).collect())
    }

    pub fn none(n: usize) -> Self {
        LayerFlags(vec![false; n])
    }

    /// Standard choice for a weight bit depth: 1 binarizes all but the last
    /// layer, 32 binarizes nothing.
    pub fn for_bits(bits: u32, n: usize) -> Result<Self> {
        match bits {
            1 => Ok(Self::all_but_last(n)),
            32 => Ok(Self::none(n)),
            other => Err(Error::invalid(format!("bits must be 1 or 32, got {other}"))),
        }
    }

    fn expect_len(&self, n: usize, model: &str) -> Result<()> {
        if self.0.len() != n {
            return Err(Error::invalid(format!(
                "{model} has {n} weight layers but {} flags were given",
                self.0.len()
            )));
        }
        Ok(())
    }
}

/// LeNet5 for 28x28x1 input:
/// conv(5x5, 6, same) relu maxpool(2) conv(5x5, 16, valid) relu maxpool(2)
/// flatten dense(120) relu dense(84) relu dense(10).
pub fn build_lenet5<T: Element>(flags: &LayerFlags, u_mode: UMode, seed: u64) -> Result<LayerGraph<T>> {
    build_lenet5_for(vec![28, 28, 1], flags, u_mode, PoolMode::Max, seed)
}

/// [`build_lenet5`] for another `[H, W, C]` input and pooling mode; the
/// flattened width follows from the input size (e.g. 576 for 32x32x3).
pub fn build_lenet5_for<T: Element>(
    input_shape: Vec<usize>,
    flags: &LayerFlags,
    u_mode: UMode,
    pool: PoolMode,
    seed: u64,
) -> Result<LayerGraph<T>> {
    flags.expect_len(5, "LeNet5")?;
    let f = &flags.0;
    GraphBuilder::new(input_shape, seed)
        .u_mode(u_mode)
        .conv(5, 6, 1, Padding::Same, f[0])?
        .relu()?
        .pool(pool, 2, 2)?
        .conv(5, 16, 1, Padding::Valid, f[1])?
        .relu()?
        .pool(pool, 2, 2)?
        .flatten()?
        .dense(120, f[2])?
        .relu()?
        .dense(84, f[3])?
        .relu()?
        .dense(10, f[4])?
        .build()
}

/// A miniature LeNet for gradient checks on 8x8x1 input:
/// conv(3x3, 2, same) relu maxpool(2) [batchnorm] conv(3x3, 2, valid) relu
/// flatten dense(8) relu dense(3).
pub fn build_tiny_lenet<T: Element>(
    flags: &LayerFlags,
    u_mode: UMode,
    seed: u64,
    batchnorm: bool,
) -> Result<LayerGraph<T>> {
    flags.expect_len(4, "tiny LeNet")?;
    let f = &flags.0;
    let mut b = GraphBuilder::new(vec![8, 8, 1], seed)
        .u_mode(u_mode)
        .conv(3, 2, 1, Padding::Same, f[0])?
        .relu()?
        .max_pool(2, 2)?;
    if batchnorm {
        b = b.batchnorm()?;
    }
    b.conv(3, 2, 1, Padding::Valid, f[1])?
        .relu()?
        .flatten()?
        .dense(8, f[2])?
        .relu()?
        .dense(3, f[3])?
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ForwardCtx, Layer, LayerKind};
    use crate::tensor::Tensor;

    #[test]
    fn lenet_output_shape() {
        let mut g = build_lenet5::<f32>(&LayerFlags::all_but_last(5), UMode::Identity, 0).unwrap();
        let x = Tensor::<f32>::zeros(vec![3, 28, 28, 1]).unwrap();
        let y = g.forward(&x, &ForwardCtx::relaxed(0.5, 1.0)).unwrap();
        assert_eq!(y.shape(), &[3, 10]);
    }

    #[test]
    fn lenet_on_color_input() {
        let mut g = build_lenet5_for::<f32>(vec![32, 32, 3], &LayerFlags::all_but_last(5), UMode::Identity, PoolMode::Max, 0).unwrap();
        let x = Tensor::<f32>::zeros(vec![2, 32, 32, 3]).unwrap();
        assert_eq!(g.forward(&x, &ForwardCtx::inference()).unwrap().shape(), &[2, 10]);
        assert!(build_lenet5_for::<f32>(vec![8, 8, 1], &LayerFlags::none(5), UMode::Identity, PoolMode::Avg, 0).is_err());
    }

    #[test]
    fn lenet_parameter_count() {
        let hand = (5 * 5 * 6 + 6) + (5 * 5 * 6 * 16 + 16) + (400 * 120 + 120) + (120 * 84 + 84) + (84 * 10 + 10);
        assert_eq!(hand, LENET5_PARAMS);
        let g = build_lenet5::<f32>(&LayerFlags::none(5), UMode::Identity, 0).unwrap();
        assert_eq!(g.num_params(), LENET5_PARAMS);
    }

    #[test]
    fn binary_lenet_keeps_last_layer_full_precision() {
        let g = build_lenet5::<f32>(&LayerFlags::for_bits(1, 5).unwrap(), UMode::Identity, 0).unwrap();
        let weight_layers: Vec<&Layer<f32>> = g
            .layers()
            .iter()
            .filter(|l| matches!(l.kind(), LayerKind::Dense | LayerKind::Conv2d))
            .collect();
        assert_eq!(weight_layers.len(), 5);
        let flags: Vec<bool> = weight_layers.iter().map(|l| l.is_binarized()).collect();
        assert_eq!(flags, vec![true, true, true, true, false]);
    }

    #[test]
    fn registry_flags() {
        let g = build_lenet5::<f32>(&LayerFlags::all_but_last(5), UMode::Identity, 0).unwrap();
        let params = g.params();
        assert_eq!(params.len(), 10);
        assert!(params.iter().all(|p| p.weight_decayed));
        let mut names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        names.dedup();
        assert_eq!(names.len(), 10);
        for p in &params {
            if p.binarized && p.value.ndim() == 4 {
                let part = p.partition.expect("binarized conv has a partition");
                let cout = p.value.shape()[3];
                assert_eq!(part.num_groups(), cout);
            }
            assert_eq!(p.binarized, p.partition.is_some());
        }
        let bias_binarized = params.iter().any(|p| p.name.ends_with("bias") && p.binarized);
        assert!(!bias_binarized);
    }

    #[test]
    fn batchnorm_excluded_from_decay() {
        let g = build_tiny_lenet::<f64>(&LayerFlags::all_but_last(4), UMode::Identity, 1, true).unwrap();
        let bn: Vec<_> = g.params().into_iter().filter(|p| p.name.contains("batchnorm")).collect();
        assert_eq!(bn.len(), 2);
        assert!(bn.iter().all(|p| !p.weight_decayed && !p.binarized));
    }

    #[test]
    fn wrong_flag_count() {
        assert!(build_lenet5::<f32>(&LayerFlags::none(4), UMode::Identity, 0).is_err());
    }

    #[test]
    fn construction_is_seeded() {
        let a = build_lenet5::<f32>(&LayerFlags::none(5), UMode::Identity, 9).unwrap();
        let b = build_lenet5::<f32>(&LayerFlags::none(5), UMode::Identity, 9).unwrap();
        let c = build_lenet5::<f32>(&LayerFlags::none(5), UMode::Identity, 10).unwrap();
        assert_eq!(a.params()[0].value, b.params()[0].value);
        assert_ne!(a.params()[0].value, c.params()[0].value);
    }
}
