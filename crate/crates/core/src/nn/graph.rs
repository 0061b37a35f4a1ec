use crate::binarize::{BinarizeState, PartitionSpec, UMode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Padding, PoolMode, Tensor};

use super::layers::{BatchNorm, Conv2d, Dense, Flatten, Layer, Pool2d, Relu, Weight};
use super::{softmax_cross_entropy, ForwardCtx};

/// Read-only view of one learnable tensor and its optimizer flags.
#[derive(Debug)]
pub struct ParamRef<'a, T> {
    pub name: String,
    pub value: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    pub binarized: bool,
    pub weight_decayed: bool,
    pub partition: Option<&'a PartitionSpec>,
}

/// Mutable view used by optimizers.
#[derive(Debug)]
pub struct ParamMut<'a, T> {
    pub name: String,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a Tensor<T>,
    pub binarized: bool,
    pub weight_decayed: bool,
    pub partition: Option<&'a PartitionSpec>,
}

/// Ordered layers ending in logits, trained with softmax cross-entropy.
#[derive(Clone, Debug)]
pub struct LayerGraph<T> {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

impl<T: Element> LayerGraph<T> {
    /// Validates that shapes chain from `input_shape` (per sample) to a flat
    /// logit vector.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::dim(format!("layer {i}: {e}")))?;
        }
        if shape.len() != 1 {
            return Err(Error::dim(format!(
                "graph must end in a flat logit vector, ends in {shape:?}"
            )));
        }
        Ok(LayerGraph {
            input_shape,
            output_shape: shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape[0]
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn forward(&mut self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        if input.shape().len() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            return Err(Error::dim(format!(
                "graph input {:?} does not match [N, {:?}]",
                input.shape(),
                self.input_shape
            )));
        }
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, ctx)?;
        }
        Ok(x)
    }

    /// Backpropagates the logit gradient; returns the input gradient.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Forward, loss and backward in one call. Returns the mean loss and the
    /// input gradient; parameter gradients are stored in the layers.
    pub fn loss_and_backward(
        &mut self,
        input: &Tensor<T>,
        labels: &[usize],
        ctx: &ForwardCtx,
    ) -> Result<(T, Tensor<T>)> {
        let logits = self.forward(input, &ctx.with_training(true))?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
        let grad_input = self.backward(&grad)?;
        Ok((loss, grad_input))
    }

    /// Mean loss without touching gradients.
    pub fn loss(&mut self, input: &Tensor<T>, labels: &[usize], ctx: &ForwardCtx) -> Result<T> {
        let logits = self.forward(input, ctx)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    }

    /// Arg-max class per row (first maximum on ties).
    pub fn predict(&mut self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Vec<usize>> {
        let logits = self.forward(input, &ctx.with_training(false))?;
        Ok(argmax_rows(&logits))
    }

    /// Every learnable tensor exactly once, in layer order.
    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(Dense {
                    weight,
                    bias,
                    grad_weight,
                    grad_bias,
                    ..
                })
                | Layer::Conv2d(Conv2d {
                    weight,
                    bias,
                    grad_weight,
                    grad_bias,
                    ..
                }) => {
                    let kind = layer.kind().name();
                    out.push(ParamRef {
                        name: format!("{i}.{kind}.weight"),
                        value: weight.latent(),
                        grad: grad_weight,
                        binarized: weight.is_binarized(),
                        weight_decayed: true,
                        partition: match weight {
                            Weight::Binarized(s) => Some(s.partition()),
                            Weight::Full(_) => None,
                        },
                    });
                    out.push(ParamRef {
                        name: format!("{i}.{kind}.bias"),
                        value: bias,
                        grad: grad_bias,
                        binarized: false,
                        weight_decayed: true,
                        partition: None,
                    });
                }
                Layer::BatchNorm(bn) => {
                    out.push(ParamRef {
                        name: format!("{i}.batchnorm.gamma"),
                        value: &bn.gamma,
                        grad: &bn.grad_gamma,
                        binarized: false,
                        weight_decayed: false,
                        partition: None,
                    });
                    out.push(ParamRef {
                        name: format!("{i}.batchnorm.beta"),
                        value: &bn.beta,
                        grad: &bn.grad_beta,
                        binarized: false,
                        weight_decayed: false,
                        partition: None,
                    });
                }
                Layer::Relu(_) | Layer::Pool(_) | Layer::Flatten(_) => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind().name();
            match layer {
                Layer::Dense(Dense {
                    weight,
                    bias,
                    grad_weight,
                    grad_bias,
                    ..
                })
                | Layer::Conv2d(Conv2d {
                    weight,
                    bias,
                    grad_weight,
                    grad_bias,
                    ..
                }) => {
                    let (value, partition, binarized) = match weight {
                        Weight::Full(w) => (w, None, false),
                        Weight::Binarized(s) => {
                            let (phi, part) = s.split_mut();
                            (phi, Some(part), true)
                        }
                    };
                    out.push(ParamMut {
                        name: format!("{i}.{kind}.weight"),
                        value,
                        grad: grad_weight,
                        binarized,
                        weight_decayed: true,
                        partition,
                    });
                    out.push(ParamMut {
                        name: format!("{i}.{kind}.bias"),
                        value: bias,
                        grad: grad_bias,
                        binarized: false,
                        weight_decayed: true,
                        partition: None,
                    });
                }
                Layer::BatchNorm(bn) => {
                    out.push(ParamMut {
                        name: format!("{i}.batchnorm.gamma"),
                        value: &mut bn.gamma,
                        grad: &bn.grad_gamma,
                        binarized: false,
                        weight_decayed: false,
                        partition: None,
                    });
                    out.push(ParamMut {
                        name: format!("{i}.batchnorm.beta"),
                        value: &mut bn.beta,
                        grad: &bn.grad_beta,
                        binarized: false,
                        weight_decayed: false,
                        partition: None,
                    });
                }
                Layer::Relu(_) | Layer::Pool(_) | Layer::Flatten(_) => {}
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Groups in binarized tensors that were degenerate in the last forward pass.
    pub fn degenerate_groups(&self) -> usize {
        self.binarize_states().map(|s| s.last_degenerate_groups()).sum()
    }

    pub fn binarize_states(&self) -> impl Iterator<Item = &BinarizeState<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Dense(Dense {
                weight: Weight::Binarized(s),
                ..
            })
            | Layer::Conv2d(Conv2d {
                weight: Weight::Binarized(s),
                ..
            }) => Some(s),
            _ => None,
        })
    }

    /// Element-type conversion of the whole graph (caches are dropped).
    pub fn cast<U: Element>(&self) -> Result<LayerGraph<U>> {
        let conv_weight = |w: &Weight<T>| -> Result<Weight<U>> {
            Ok(match w {
                Weight::Full(t) => Weight::Full(t.cast()),
                Weight::Binarized(s) => Weight::Binarized(BinarizeState::new(
                    s.phi().cast(),
                    s.partition().clone(),
                    s.u_mode(),
                )?),
            })
        };
        let layers = self
            .layers
            .iter()
            .map(|l| -> Result<Layer<U>> {
                Ok(match l {
                    Layer::Dense(d) => Layer::Dense(Dense::new(conv_weight(&d.weight)?, d.bias.cast())?),
                    Layer::Conv2d(c) => Layer::Conv2d(Conv2d::new(
                        conv_weight(&c.weight)?,
                        c.bias.cast(),
                        c.stride,
                        c.padding,
                    )?),
                    Layer::BatchNorm(b) => {
                        let mut nb = BatchNorm::new(b.channels())?;
                        nb.gamma = b.gamma.cast();
                        nb.beta = b.beta.cast();
                        nb.running_mean = b.running_mean.cast();
                        nb.running_var = b.running_var.cast();
                        nb.eps = b.eps;
                        nb.momentum = b.momentum;
                        Layer::BatchNorm(nb)
                    }
                    Layer::Relu(_) => Layer::Relu(Relu::default()),
                    Layer::Pool(p) => Layer::Pool(Pool2d::new(p.window, p.stride, p.mode)?),
                    Layer::Flatten(_) => Layer::Flatten(Flatten::default()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LayerGraph::new(self.input_shape.clone(), layers)
    }
}

pub(crate) fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Incremental graph construction with shape checking at every step.
///
/// Weights (and latent `phi` for binarized layers) start as zero-mean
/// Gaussians with standard deviation `sqrt(2 / fan_in)`; biases start at zero.
pub struct GraphBuilder<T> {
    input_shape: Vec<usize>,
    shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    rng: Rng,
    u_mode: UMode,
}

impl<T: Element> GraphBuilder<T> {
    pub fn new(input_shape: Vec<usize>, seed: u64) -> Self {
        GraphBuilder {
            shape: input_shape.clone(),
            input_shape,
            layers: Vec::new(),
            rng: Rng::new(seed).fork(1),
            u_mode: UMode::Identity,
        }
    }

    pub fn u_mode(mut self, mode: UMode) -> Self {
        self.u_mode = mode;
        self
    }

    fn push(mut self, layer: Layer<T>) -> Result<Self> {
        self.shape = layer
            .output_shape(&self.shape)
            .map_err(|e| Error::dim(format!("layer {}: {e}", self.layers.len())))?;
        self.layers.push(layer);
        Ok(self)
    }

    fn weight(&mut self, shape: Vec<usize>, fan_in: usize, binarized: bool) -> Result<Weight<T>> {
        let std = (2.0 / fan_in as f64).sqrt();
        let init = Tensor::randn(shape.clone(), std, &mut self.rng)?;
        if !binarized {
            return Ok(Weight::Full(init));
        }
        let partition = match shape.len() {
            2 => PartitionSpec::per_neuron(&shape)?,
            _ => PartitionSpec::per_filter(&shape)?,
        };
        Ok(Weight::Binarized(BinarizeState::new(init, partition, self.u_mode)?))
    }

    pub fn conv(mut self, k: usize, filters: usize, stride: usize, padding: Padding, binarized: bool) -> Result<Self> {
        let &[_, _, cin] = self.shape.as_slice() else {
            return Err(Error::dim(format!("conv needs an H x W x C input, have {:?}", self.shape)));
        };
        let w = self.weight(vec![k, k, cin, filters], k * k * cin, binarized)?;
        let conv = Conv2d::new(w, Tensor::zeros(vec![filters])?, stride, padding)?;
        self.push(Layer::Conv2d(conv))
    }

    pub fn dense(mut self, out: usize, binarized: bool) -> Result<Self> {
        let &[fan_in] = self.shape.as_slice() else {
            return Err(Error::dim(format!("dense needs a flat input, have {:?}", self.shape)));
        };
        let w = self.weight(vec![fan_in, out], fan_in, binarized)?;
        self.push(Layer::Dense(Dense::new(w, Tensor::zeros(vec![out])?)?))
    }

    pub fn relu(self) -> Result<Self> {
        self.push(Layer::Relu(Relu::default()))
    }

    pub fn pool(self, mode: PoolMode, window: usize, stride: usize) -> Result<Self> {
        self.push(Layer::Pool(Pool2d::new(window, stride, mode)?))
    }

    pub fn max_pool(self, window: usize, stride: usize) -> Result<Self> {
        self.pool(PoolMode::Max, window, stride)
    }

    pub fn avg_pool(self, window: usize, stride: usize) -> Result<Self> {
        self.pool(PoolMode::Avg, window, stride)
    }

    pub fn batchnorm(self) -> Result<Self> {
        let c = *self.shape.last().expect("shapes are non-empty");
        self.push(Layer::BatchNorm(BatchNorm::new(c)?))
    }

    pub fn flatten(self) -> Result<Self> {
        self.push(Layer::Flatten(Flatten::default()))
    }

    pub fn build(self) -> Result<LayerGraph<T>> {
        LayerGraph::new(self.input_shape, self.layers)
    }
}
