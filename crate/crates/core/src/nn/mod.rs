//! Hand-differentiated layers, layer graphs and the LeNet5 builders.

mod graph;
mod layers;
mod loss;
mod models;

pub use graph::{GraphBuilder, LayerGraph, ParamMut, ParamRef};
pub(crate) use graph::argmax_rows;
pub use layers::{BatchNorm, Conv2d, Dense, Flatten, Layer, LayerKind, Pool2d, Relu, Weight};
pub use loss::softmax_cross_entropy;
pub use models::{build_lenet5, build_lenet5_for, build_tiny_lenet, LayerFlags, LENET5_PARAMS};

use crate::binarize::{alpha_at_step, zeta_at_step, BinarizeConfig};

/// How binarized layers materialize their weights in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightView {
    /// Interpolated transform `alpha * g(phi, zeta) + (1 - alpha) * phi`; differentiable.
    Relaxed,
    /// Exact `sign(phi)` weights used at inference; not differentiable.
    Sign,
}

/// Per-pass settings shared by every layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardCtx {
    pub alpha: f64,
    pub zeta: f64,
    /// Batch statistics and caching for backward when true.
    pub training: bool,
    pub view: WeightView,
}

impl ForwardCtx {
    /// Training pass at step `t` of `total` with the configured schedules.
    pub fn at_step(t: u64, total: u64, config: &BinarizeConfig) -> Self {
        ForwardCtx {
            alpha: alpha_at_step(t, total, config.t_alpha),
            zeta: zeta_at_step(t, total, config),
            training: true,
            view: WeightView::Relaxed,
        }
    }

    /// Training pass with fixed `alpha` and `zeta`.
    pub fn relaxed(alpha: f64, zeta: f64) -> Self {
        ForwardCtx {
            alpha,
            zeta,
            training: true,
            view: WeightView::Relaxed,
        }
    }

    /// Inference pass with `sign(phi)` weights and running batchnorm statistics.
    pub fn inference() -> Self {
        ForwardCtx {
            alpha: 1.0,
            zeta: f64::INFINITY,
            training: false,
            view: WeightView::Sign,
        }
    }

    pub fn with_training(mut self, training: bool) -> Self {
        self.training = training;
        self
    }
}
