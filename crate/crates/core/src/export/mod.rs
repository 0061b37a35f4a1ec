//! Final sign binarization, the `.bwn` model format and multiplication-free
//! inference.
//!
//! The byte layout is described in `FORMAT.md` at the repository root.

mod format;
mod packed;

pub use format::{LayerRecord, ModelFile, WeightRecord, FLAG_CHECKPOINT, HEADER_LEN, MAGIC, VERSION};
pub use packed::{packed_conv_forward, packed_dense_forward, PackedMatrix};

use std::fs;
use std::path::Path;

use crate::binarize::{sign_binarize, BinarizeState, PartitionSpec};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Dense, Flatten, Layer, LayerGraph, Pool2d, Relu, Weight};
use crate::tensor::{conv2d, matmul, pool2d, Element, Tensor};

fn weight_record<T: Element>(w: &Weight<T>, checkpoint: bool) -> Result<WeightRecord> {
    Ok(match w {
        Weight::Full(t) => WeightRecord::Full(t.cast()),
        Weight::Binarized(s) if checkpoint => WeightRecord::Latent {
            phi: s.phi().cast(),
            u_mode: s.u_mode(),
        },
        Weight::Binarized(s) => WeightRecord::Packed(PackedMatrix::pack_weight(&sign_binarize(s.phi()).cast())?),
    })
}

/// Describes `graph` as a model file. With `checkpoint`, binarized layers
/// keep their latent values so training state can be restored; otherwise
/// they are reduced to sign bits.
pub fn model_file<T: Element>(graph: &LayerGraph<T>, checkpoint: bool) -> Result<ModelFile> {
    let layers = graph
        .layers()
        .iter()
        .map(|layer| -> Result<LayerRecord> {
            Ok(match layer {
                Layer::Dense(d) => {
                    let s = d.weight.shape();
                    LayerRecord::Dense {
                        shape: [s[0], s[1]],
                        weight: weight_record(&d.weight, checkpoint)?,
                        bias: d.bias.cast(),
                    }
                }
                Layer::Conv2d(c) => {
                    let s = c.kernel_shape();
                    LayerRecord::Conv2d {
                        shape: [s[0], s[1], s[2], s[3]],
                        stride: c.stride,
                        padding: c.padding,
                        weight: weight_record(&c.weight, checkpoint)?,
                        bias: c.bias.cast(),
                    }
                }
                Layer::BatchNorm(b) => LayerRecord::BatchNorm {
                    eps: b.eps as f32,
                    momentum: b.momentum as f32,
                    gamma: b.gamma.cast(),
                    beta: b.beta.cast(),
                    running_mean: b.running_mean.cast(),
                    running_var: b.running_var.cast(),
                },
                Layer::Relu(_) => LayerRecord::Relu,
                Layer::Pool(p) => LayerRecord::Pool {
                    mode: p.mode,
                    window: p.window,
                    stride: p.stride,
                },
                Layer::Flatten(_) => LayerRecord::Flatten,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelFile {
        input_shape: graph.input_shape().to_vec(),
        checkpoint,
        layers,
    })
}

/// Deployable bytes: binarized layers as sign bits, the rest full precision.
pub fn export_model<T: Element>(graph: &LayerGraph<T>) -> Result<Vec<u8>> {
    Ok(model_file(graph, false)?.encode())
}

/// Checkpoint bytes keeping latent values of binarized layers.
pub fn checkpoint_model<T: Element>(graph: &LayerGraph<T>) -> Result<Vec<u8>> {
    Ok(model_file(graph, true)?.encode())
}

/// Rebuilds a trainable graph from a model file. Packed layers come back as
/// binarized layers whose latent values are the `±1` weights.
pub fn graph_from_file(file: &ModelFile) -> Result<LayerGraph<f32>> {
    let weight = |shape: &[usize], rec: &WeightRecord| -> Result<Weight<f32>> {
        let partition = || match shape.len() {
            2 => PartitionSpec::per_neuron(shape),
            _ => PartitionSpec::per_filter(shape),
        };
        Ok(match rec {
            WeightRecord::Full(t) => Weight::Full(t.clone()),
            WeightRecord::Latent { phi, u_mode } => Weight::Binarized(BinarizeState::new(phi.clone(), partition()?, *u_mode)?),
            WeightRecord::Packed(p) => Weight::Binarized(BinarizeState::new(
                p.unpack_weight(shape)?,
                partition()?,
                Default::default(),
            )?),
        })
    };
    let layers = file
        .layers
        .iter()
        .map(|rec| -> Result<Layer<f32>> {
            Ok(match rec {
                LayerRecord::Dense {
                    shape,
                    weight: w,
                    bias,
                } => Layer::Dense(Dense::new(weight(shape, w)?, bias.clone())?),
                LayerRecord::Conv2d {
                    shape,
                    stride,
                    padding,
                    weight: w,
                    bias,
                } => Layer::Conv2d(Conv2d::new(weight(shape, w)?, bias.clone(), *stride, *padding)?),
                LayerRecord::BatchNorm {
                    eps,
                    momentum,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let mut b = BatchNorm::new(gamma.len())?;
                    b.eps = *eps as f64;
                    b.momentum = *momentum as f64;
                    b.gamma = gamma.clone();
                    b.beta = beta.clone();
                    b.running_mean = running_mean.clone();
                    b.running_var = running_var.clone();
                    Layer::BatchNorm(b)
                }
                LayerRecord::Relu => Layer::Relu(Relu::default()),
                LayerRecord::Pool {
                    mode,
                    window,
                    stride,
                } => Layer::Pool(Pool2d::new(*window, *stride, *mode)?),
                LayerRecord::Flatten => Layer::Flatten(Flatten::default()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LayerGraph::new(file.input_shape.clone(), layers)
}

/// A loaded model ready for inference. Binarized layers run through the
/// packed add/subtract kernels. The network is immutable, so `forward` takes
/// `&self` and may be called from several threads at once.
#[derive(Clone, Debug)]
pub struct PackedNetwork {
    file: ModelFile,
    output_classes: usize,
}

/// Parses `.bwn` bytes. Checkpoint latent values are reduced to sign bits.
pub fn load_model(bytes: &[u8]) -> Result<PackedNetwork> {
    PackedNetwork::new(ModelFile::decode(bytes)?)
}

pub fn read_model_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::path(path, e))?;
    ModelFile::decode(&bytes)
}

impl PackedNetwork {
    pub fn new(mut file: ModelFile) -> Result<Self> {
        for rec in &mut file.layers {
            if let LayerRecord::Dense { weight, .. } | LayerRecord::Conv2d { weight, .. } = rec {
                if let WeightRecord::Latent { phi, .. } = weight {
                    *weight = WeightRecord::Packed(PackedMatrix::pack_weight(phi)?);
                }
            }
        }
        file.checkpoint = false;
        // Shape-check the chain once by building the equivalent graph.
        let graph = graph_from_file(&file)?;
        let output_classes = graph.num_classes();
        Ok(PackedNetwork {
            file,
            output_classes,
        })
    }

    pub fn model_file(&self) -> &ModelFile {
        &self.file
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.file.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.output_classes
    }

    /// Re-encodes the network; equal to the exported bytes it was loaded from.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.file.encode()
    }

    /// Number of layers stored as sign bits.
    pub fn packed_layers(&self) -> usize {
        self.file
            .layers
            .iter()
            .filter(|l| matches!(l, LayerRecord::Dense { weight: WeightRecord::Packed(_), .. } | LayerRecord::Conv2d { weight: WeightRecord::Packed(_), .. }))
            .count()
    }

    /// Logits for a `[N, ...input_shape]` batch.
    pub fn forward(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        if input.shape().len() != self.file.input_shape.len() + 1 || input.shape()[1..] != self.file.input_shape[..] {
            return Err(Error::dim(format!(
                "input {:?} does not match [N, {:?}]",
                input.shape(),
                self.file.input_shape
            )));
        }
        let mut x = input.clone();
        for rec in &self.file.layers {
            x = match rec {
                LayerRecord::Dense {
                    weight, bias, ..
                } => {
                    let y = match weight {
                        WeightRecord::Packed(p) => packed_dense_forward(p, &x)?,
                        WeightRecord::Full(w) | WeightRecord::Latent { phi: w, .. } => matmul(&x, w)?,
                    };
                    add_bias(y, bias)
                }
                LayerRecord::Conv2d {
                    shape,
                    stride,
                    padding,
                    weight,
                    bias,
                } => {
                    let y = match weight {
                        WeightRecord::Packed(p) => packed_conv_forward(p, shape, &x, *stride, *padding)?,
                        WeightRecord::Full(w) | WeightRecord::Latent { phi: w, .. } => conv2d(&x, w, *stride, *padding)?,
                    };
                    add_bias(y, bias)
                }
                LayerRecord::BatchNorm {
                    eps,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..
                } => {
                    let c = gamma.len();
                    let inv_std: Vec<f32> = running_var.data().iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
                    let mut y = x;
                    for row in y.data_mut().chunks_exact_mut(c) {
                        for ch in 0..c {
                            let h = (row[ch] - running_mean.data()[ch]) * inv_std[ch];
                            row[ch] = gamma.data()[ch] * h + beta.data()[ch];
                        }
                    }
                    y
                }
                LayerRecord::Relu => x.map(|v| v.max(0.0)),
                LayerRecord::Pool {
                    mode,
                    window,
                    stride,
                } => pool2d(&x, *window, *stride, *mode)?,
                LayerRecord::Flatten => {
                    let n = x.shape()[0];
                    let rest = x.len() / n;
                    x.reshape(vec![n, rest])?
                }
            };
        }
        Ok(x)
    }

    /// Arg-max classes, evaluated in chunks of `chunk` samples to bound memory.
    pub fn predict(&self, images: &Tensor<f32>, chunk: usize) -> Result<Vec<usize>> {
        let n = images.shape()[0];
        let per = images.len() / n;
        let chunk = chunk.max(1);
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(chunk) {
            let end = (start + chunk).min(n);
            let mut shape = images.shape().to_vec();
            shape[0] = end - start;
            let batch = Tensor::new(shape, images.data()[start * per..end * per].to_vec())?;
            out.extend(crate::nn::argmax_rows(&self.forward(&batch)?));
        }
        Ok(out)
    }
}

fn add_bias(mut y: Tensor<f32>, bias: &Tensor<f32>) -> Tensor<f32> {
    let c = bias.len();
    for row in y.data_mut().chunks_exact_mut(c) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_lenet5, build_tiny_lenet, ForwardCtx, LayerFlags};
    use crate::{Rng, UMode};

    #[test]
    fn zero_latent_exports_as_minus_one() {
        let mut g = build_tiny_lenet::<f32>(&LayerFlags(vec![false, false, true, false]), UMode::Identity, 1, false).unwrap();
        if let Layer::Dense(d) = &mut g.layers_mut()[6] {
            if let Weight::Binarized(s) = &mut d.weight {
                s.phi_mut().data_mut()[0] = 0.0;
            }
        }
        let file = model_file(&g, false).unwrap();
        let LayerRecord::Dense {
            weight: WeightRecord::Packed(p),
            ..
        } = &file.layers[6]
        else {
            panic!("expected packed dense, got {:?}", file.layers[6]);
        };
        assert!(!p.get(0, 0));
    }

    #[test]
    fn export_load_export_is_identical() {
        let g = build_lenet5::<f32>(&LayerFlags::for_bits(1, 5).unwrap(), UMode::Identity, 3).unwrap();
        let bytes = export_model(&g).unwrap();
        let net = load_model(&bytes).unwrap();
        assert_eq!(net.to_bytes(), bytes);
        assert_eq!(net.packed_layers(), 4);
        let ckpt = checkpoint_model(&g).unwrap();
        assert_eq!(load_model(&ckpt).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn packed_matches_sign_graph() {
        let mut g = build_tiny_lenet::<f32>(&LayerFlags(vec![true, true, true, false]), UMode::Identity, 4, true).unwrap();
        let x = Tensor::<f32>::uniform(vec![5, 8, 8, 1], 0.0, 1.0, &mut Rng::new(9)).unwrap();
        let want = g.forward(&x, &ForwardCtx::inference()).unwrap();
        let net = load_model(&export_model(&g).unwrap()).unwrap();
        let got = net.forward(&x).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-4, "{}", got.max_abs_diff(&want).unwrap());
    }

    #[test]
    fn checkpoint_restores_latent_values() {
        let g = build_tiny_lenet::<f32>(&LayerFlags(vec![true, true, true, false]), UMode::Tanh, 5, true).unwrap();
        let restored = graph_from_file(&ModelFile::decode(&checkpoint_model(&g).unwrap()).unwrap()).unwrap();
        let a: Vec<_> = g.params().into_iter().map(|p| p.value.clone()).collect();
        let b: Vec<_> = restored.params().into_iter().map(|p| p.value.clone()).collect();
        assert_eq!(a, b);
        assert!(restored.binarize_states().all(|s| s.u_mode() == UMode::Tanh));
    }

    #[test]
    fn wrong_input_shape() {
        let g = build_tiny_lenet::<f32>(&LayerFlags(vec![true, true, true, false]), UMode::Identity, 6, false).unwrap();
        let net = load_model(&export_model(&g).unwrap()).unwrap();
        assert!(net.forward(&Tensor::zeros(vec![1, 7, 8, 1]).unwrap()).is_err());
    }
}
