use crate::binarize::{interpolate_alpha, interpolate_alpha_backward, sign_binarize, BinarizeState};
use crate::error::{Error, Result};
use crate::tensor::{
    col2im, gemm, im2col, pool2d, pool2d_backward, ConvGeometry, Element, MatRef, Padding, PoolMode,
    Tensor,
};

use super::{ForwardCtx, WeightView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Conv2d,
    BatchNorm,
    Relu,
    Pool,
    Flatten,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::Pool => "pool",
            LayerKind::Flatten => "flatten",
        }
    }
}

/// A layer's main weight: plain full precision, or latent `phi` behind the
/// group transform.
#[derive(Clone, Debug)]
pub enum Weight<T> {
    Full(Tensor<T>),
    Binarized(BinarizeState<T>),
}

/// What a forward pass used, kept for the matching backward.
#[derive(Clone, Copy, Debug)]
struct WeightUse {
    alpha: f64,
    zeta: f64,
    view: WeightView,
}

impl<T: Element> Weight<T> {
    pub fn is_binarized(&self) -> bool {
        matches!(self, Weight::Binarized(_))
    }

    /// The trainable tensor: `phi` for binarized weights.
    pub fn latent(&self) -> &Tensor<T> {
        match self {
            Weight::Full(w) => w,
            Weight::Binarized(s) => s.phi(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.latent().shape()
    }

    /// Weights as seen by the forward pass under `ctx`.
    fn materialize(&mut self, ctx: &ForwardCtx) -> Result<(Tensor<T>, WeightUse)> {
        let used = WeightUse {
            alpha: ctx.alpha,
            zeta: ctx.zeta,
            view: ctx.view,
        };
        let w = match self {
            Weight::Full(w) => w.clone(),
            Weight::Binarized(state) => match ctx.view {
                WeightView::Sign => sign_binarize(state.phi()),
                WeightView::Relaxed => {
                    let w = state.forward(ctx.zeta)?;
                    interpolate_alpha(&w, state.phi(), ctx.alpha)?
                }
            },
        };
        Ok((w, used))
    }

    /// Gradient with respect to the latent tensor given the gradient with
    /// respect to the materialized weights.
    fn backprop(&mut self, used: WeightUse, grad: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Weight::Full(_) => Ok(grad),
            Weight::Binarized(state) => {
                if used.view == WeightView::Sign {
                    return Err(Error::State(
                        "sign-binarized weights are inference-only and have no gradient".into(),
                    ));
                }
                let (through, direct) = interpolate_alpha_backward(&grad, used.alpha)?;
                let g = state.backward(used.zeta, &through)?;
                g.zip_map(&direct, |a, b| a + b)
            }
        }
    }
}

#[derive(Clone, Debug)]
struct LinearCache<T> {
    /// Layer input (dense) or unrolled patches (conv).
    lhs: Tensor<T>,
    weight: Tensor<T>,
    used: WeightUse,
}

/// Fully connected layer `y = x W + b` with `W` laid out `[In, Out]`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub weight: Weight<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    cache: Option<LinearCache<T>>,
}

impl<T: Element> Dense<T> {
    pub fn new(weight: Weight<T>, bias: Tensor<T>) -> Result<Self> {
        let shape = weight.shape().to_vec();
        if shape.len() != 2 || bias.shape() != [shape[1]] {
            return Err(Error::dim(format!(
                "dense: weight {shape:?} and bias {:?} are incompatible",
                bias.shape()
            )));
        }
        Ok(Dense {
            grad_weight: weight.latent().zeros_like(),
            grad_bias: bias.zeros_like(),
            weight,
            bias,
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&mut self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let (fan_in, out) = (self.in_features(), self.out_features());
        if input.ndim() != 2 || input.shape()[1] != fan_in {
            return Err(Error::dim(format!(
                "dense: input {:?} does not match weight [{fan_in}, {out}]",
                input.shape()
            )));
        }
        let n = input.shape()[0];
        let (w, used) = self.weight.materialize(ctx)?;
        let mut y = broadcast_rows(self.bias.data(), n);
        gemm(
            MatRef::row_major(input.data(), n, fan_in),
            MatRef::row_major(w.data(), fan_in, out),
            T::one(),
            &mut y,
        );
        self.cache = ctx.training.then(|| LinearCache {
            lhs: input.clone(),
            weight: w,
            used,
        });
        Ok(Tensor::from_parts(vec![n, out], y))
    }

    /// Returns the input gradient; parameter gradients land in
    /// `grad_weight` (with respect to `phi` when binarized) and `grad_bias`.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("dense backward without a training forward".into()))?;
        let (fan_in, out) = (self.in_features(), self.out_features());
        let n = cache.lhs.shape()[0];
        if grad_out.shape() != [n, out] {
            return Err(Error::dim(format!(
                "dense backward: gradient {:?} does not match output [{n}, {out}]",
                grad_out.shape()
            )));
        }
        let (gw, gb, gx) = linear_backward(&cache, grad_out.data(), n, fan_in, out);
        self.grad_bias = Tensor::from_parts(vec![out], gb);
        let gw = Tensor::from_parts(vec![fan_in, out], gw);
        self.grad_weight = self.weight.backprop(cache.used, gw)?;
        Ok(Tensor::from_parts(vec![n, fan_in], gx))
    }
}

/// Shared backward of `y = lhs * w + b` for `rows x k` times `k x out`.
fn linear_backward<T: Element>(
    cache: &LinearCache<T>,
    g: &[T],
    rows: usize,
    k: usize,
    out: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gw = vec![T::zero(); k * out];
    gemm(
        MatRef::row_major(cache.lhs.data(), rows, k).t(),
        MatRef::row_major(g, rows, out),
        T::zero(),
        &mut gw,
    );
    let mut gb = vec![T::zero(); out];
    for row in g.chunks_exact(out) {
        gb.iter_mut().zip(row).for_each(|(b, &v)| *b = *b + v);
    }
    let mut gx = vec![T::zero(); rows * k];
    gemm(
        MatRef::row_major(g, rows, out),
        MatRef::row_major(cache.weight.data(), k, out).t(),
        T::zero(),
        &mut gx,
    );
    (gw, gb, gx)
}

fn broadcast_rows<T: Element>(bias: &[T], rows: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(rows * bias.len());
    for _ in 0..rows {
        y.extend_from_slice(bias);
    }
    y
}

/// 2-D convolution over NHWC input with a `[kH, kW, Cin, Cout]` kernel.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Weight<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: Padding,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    cache: Option<(LinearCache<T>, ConvGeometry)>,
}

impl<T: Element> Conv2d<T> {
    pub fn new(weight: Weight<T>, bias: Tensor<T>, stride: usize, padding: Padding) -> Result<Self> {
        let shape = weight.shape().to_vec();
        if shape.len() != 4 || bias.shape() != [shape[3]] {
            return Err(Error::dim(format!(
                "conv2d: kernel {shape:?} and bias {:?} are incompatible",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be at least 1"));
        }
        Ok(Conv2d {
            grad_weight: weight.latent().zeros_like(),
            grad_bias: bias.zeros_like(),
            weight,
            bias,
            stride,
            padding,
            cache: None,
        })
    }

    pub fn kernel_shape(&self) -> &[usize] {
        self.weight.shape()
    }

    pub fn forward(&mut self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let geom = ConvGeometry::new(input.shape(), self.weight.shape(), self.stride, self.padding)?;
        let cols = im2col(input, &geom)?;
        let (w, used) = self.weight.materialize(ctx)?;
        let (rows, k, out) = (geom.rows(), geom.patch_len(), geom.out_c);
        let mut y = broadcast_rows(self.bias.data(), rows);
        gemm(
            MatRef::row_major(cols.data(), rows, k),
            MatRef::row_major(w.data(), k, out),
            T::one(),
            &mut y,
        );
        self.cache = ctx.training.then_some((
            LinearCache {
                lhs: cols,
                weight: w,
                used,
            },
            geom,
        ));
        Ok(Tensor::from_parts(geom.output_shape().to_vec(), y))
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (cache, geom) = self
            .cache
            .take()
            .ok_or_else(|| Error::State("conv2d backward without a training forward".into()))?;
        if grad_out.shape() != geom.output_shape() {
            return Err(Error::dim(format!(
                "conv2d backward: gradient {:?} does not match output {:?}",
                grad_out.shape(),
                geom.output_shape()
            )));
        }
        let (rows, k, out) = (geom.rows(), geom.patch_len(), geom.out_c);
        let (gw, gb, gcols) = linear_backward(&cache, grad_out.data(), rows, k, out);
        self.grad_bias = Tensor::from_parts(vec![out], gb);
        let gw = Tensor::from_parts(self.weight.shape().to_vec(), gw);
        self.grad_weight = self.weight.backprop(cache.used, gw)?;
        col2im(&Tensor::from_parts(vec![rows, k], gcols), &geom)
    }
}

/// Batch normalization over the last axis.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    pub grad_gamma: Tensor<T>,
    pub grad_beta: Tensor<T>,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Element> BatchNorm<T> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.9;

    pub fn new(channels: usize) -> Result<Self> {
        let ones = Tensor::full(vec![channels], T::one())?;
        let zeros = Tensor::zeros(vec![channels])?;
        Ok(BatchNorm {
            gamma: ones.clone(),
            beta: zeros.clone(),
            running_mean: zeros.clone(),
            running_var: ones,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
            grad_gamma: zeros.clone(),
            grad_beta: zeros,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let c = self.channels();
        if input.shape().last() != Some(&c) {
            return Err(Error::dim(format!(
                "batchnorm: input {:?} does not end in {c} channels",
                input.shape()
            )));
        }
        let x = input.data();
        let rows = x.len() / c;
        let eps = T::of(self.eps);
        let (mean, var) = if ctx.training {
            if rows == 1 {
                log::warn!("batchnorm: training on a single row; variance is zero and only eps keeps the scale finite");
            }
            let (mean, var) = channel_moments(x, c);
            let m = T::of(self.momentum);
            let one_m = T::one() - m;
            for ch in 0..c {
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = m * *rm + one_m * mean[ch];
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = m * *rv + one_m * var[ch];
            }
            (mean, var)
        } else {
            (self.running_mean.data().to_vec(), self.running_var.data().to_vec())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        for row in x.chunks_exact(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(h);
                y.push(self.gamma.data()[ch] * h + self.beta.data()[ch]);
            }
        }
        self.cache = ctx
            .training
            .then(|| (Tensor::from_parts(input.shape().to_vec(), xhat), inv_std));
        Ok(Tensor::from_parts(input.shape().to_vec(), y))
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (xhat, inv_std) = self
            .cache
            .take()
            .ok_or_else(|| Error::State("batchnorm backward without a training forward".into()))?;
        grad_out.expect_same_shape(&xhat, "batchnorm backward")?;
        let c = self.channels();
        let g = grad_out.data();
        let h = xhat.data();
        let rows = g.len() / c;
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gh = vec![T::zero(); c];
        for (gr, hr) in g.chunks_exact(c).zip(h.chunks_exact(c)) {
            for ch in 0..c {
                sum_g[ch] = sum_g[ch] + gr[ch];
                sum_gh[ch] = sum_gh[ch] + gr[ch] * hr[ch];
            }
        }
        let m = T::of(rows as f64);
        let mut gx = Vec::with_capacity(g.len());
        for (gr, hr) in g.chunks_exact(c).zip(h.chunks_exact(c)) {
            for ch in 0..c {
                let k = self.gamma.data()[ch] * inv_std[ch] / m;
                gx.push(k * (m * gr[ch] - sum_g[ch] - hr[ch] * sum_gh[ch]));
            }
        }
        self.grad_gamma = Tensor::from_parts(vec![c], sum_gh);
        self.grad_beta = Tensor::from_parts(vec![c], sum_g);
        Ok(Tensor::from_parts(grad_out.shape().to_vec(), gx))
    }
}

/// Per-channel mean and biased variance over leading axes.
fn channel_moments<T: Element>(x: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let rows = T::of((x.len() / c) as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.chunks_exact(c) {
        mean.iter_mut().zip(row).for_each(|(m, &v)| *m = *m + v);
    }
    mean.iter_mut().for_each(|m| *m = *m / rows);
    let mut var = vec![T::zero(); c];
    for row in x.chunks_exact(c) {
        for ch in 0..c {
            let d = row[ch] - mean[ch];
            var[ch] = var[ch] + d * d;
        }
    }
    var.iter_mut().for_each(|v| *v = *v / rows);
    (mean, var)
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward<T: Element>(&mut self, input: &Tensor<T>, ctx: &ForwardCtx) -> Tensor<T> {
        let y = input.map(|v| if v > T::zero() { v } else { T::zero() });
        self.mask = ctx
            .training
            .then(|| input.data().iter().map(|&v| v > T::zero()).collect());
        y
    }

    pub fn backward<T: Element>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::State("relu backward without a training forward".into()))?;
        if mask.len() != grad_out.len() {
            return Err(Error::dim("relu backward: gradient size does not match forward"));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Ok(Tensor::from_parts(grad_out.shape().to_vec(), data))
    }
}

#[derive(Clone, Debug)]
pub struct Pool2d<T> {
    pub window: usize,
    pub stride: usize,
    pub mode: PoolMode,
    input: Option<Tensor<T>>,
}

impl<T: Element> Pool2d<T> {
    pub fn new(window: usize, stride: usize, mode: PoolMode) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::invalid("pool: window and stride must be at least 1"));
        }
        Ok(Pool2d {
            window,
            stride,
            mode,
            input: None,
        })
    }

    pub fn forward(&mut self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let y = pool2d(input, self.window, self.stride, self.mode)?;
        self.input = ctx.training.then(|| input.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .input
            .take()
            .ok_or_else(|| Error::State("pool backward without a training forward".into()))?;
        pool2d_backward(&input, grad_out, self.window, self.stride, self.mode)
    }
}

/// Collapses all but the batch axis.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward<T: Element>(&mut self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let n = input.shape()[0];
        let rest = input.len() / n;
        self.input_shape = ctx.training.then(|| input.shape().to_vec());
        input.clone().reshape(vec![n, rest])
    }

    pub fn backward<T: Element>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .take()
            .ok_or_else(|| Error::State("flatten backward without a training forward".into()))?;
        grad_out.clone().reshape(shape)
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu),
    Pool(Pool2d<T>),
    Flatten(Flatten),
}

impl<T: Element> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::Pool(_) => LayerKind::Pool,
            Layer::Flatten(_) => LayerKind::Flatten,
        }
    }

    pub fn is_binarized(&self) -> bool {
        match self {
            Layer::Dense(d) => d.weight.is_binarized(),
            Layer::Conv2d(c) => c.weight.is_binarized(),
            _ => false,
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.forward(input, ctx),
            Layer::Conv2d(l) => l.forward(input, ctx),
            Layer::BatchNorm(l) => l.forward(input, ctx),
            Layer::Relu(l) => Ok(l.forward(input, ctx)),
            Layer::Pool(l) => l.forward(input, ctx),
            Layer::Flatten(l) => l.forward(input, ctx),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.backward(grad_out),
            Layer::Conv2d(l) => l.backward(grad_out),
            Layer::BatchNorm(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::Pool(l) => l.backward(grad_out),
            Layer::Flatten(l) => l.backward(grad_out),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let err = |what: &str| {
            Error::dim(format!(
                "{} layer cannot take per-sample input {input:?}: {what}",
                self.kind().name()
            ))
        };
        match self {
            Layer::Dense(d) => match input {
                [n] if *n == d.in_features() => Ok(vec![d.out_features()]),
                _ => Err(err(&format!("expected [{}]", d.in_features()))),
            },
            Layer::Conv2d(c) => {
                if input.len() != 3 {
                    return Err(err("expected H x W x C"));
                }
                let g = ConvGeometry::new(
                    &[1, input[0], input[1], input[2]],
                    c.kernel_shape(),
                    c.stride,
                    c.padding,
                )
                .map_err(|e| err(&e.to_string()))?;
                Ok(vec![g.out_h, g.out_w, g.out_c])
            }
            Layer::BatchNorm(b) => {
                if input.last() != Some(&b.channels()) {
                    return Err(err(&format!("expected {} trailing channels", b.channels())));
                }
                Ok(input.to_vec())
            }
            Layer::Relu(_) => Ok(input.to_vec()),
            Layer::Pool(p) => match input {
                [h, w, c] if p.window <= *h && p.window <= *w => Ok(vec![
                    (h - p.window) / p.stride + 1,
                    (w - p.window) / p.stride + 1,
                    *c,
                ]),
                _ => Err(err("expected H x W x C at least as large as the window")),
            },
            Layer::Flatten(_) => Ok(vec![input.iter().product()]),
        }
    }
}
