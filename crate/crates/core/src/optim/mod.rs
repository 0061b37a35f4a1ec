//! Momentum SGD with decoupled weight decay, linear warmup and milestone decay.

use crate::error::{Error, Result};
use crate::nn::ParamMut;
use crate::tensor::{Element, Tensor};

/// A multiplicative decay applied once `fraction` of the post-warmup steps
/// have elapsed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Milestone {
    pub fraction: f64,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdwConfig {
    /// Learning rate reached at the end of warmup.
    pub lr0: f64,
    pub momentum: f64,
    /// Weight decay scale reached at the end of warmup.
    pub wd0: f64,
    pub warmup_epochs: u32,
    pub milestones: Vec<Milestone>,
}

impl SgdwConfig {
    /// Milestones at 0.1, 0.25, 0.4, 0.55, 0.7 and 0.85 with factor 0.3, used
    /// for binary-weight runs.
    pub fn binary_milestones() -> Vec<Milestone> {
        [0.1, 0.25, 0.4, 0.55, 0.7, 0.85]
            .iter()
            .map(|&fraction| Milestone {
                fraction,
                factor: 0.3,
            })
            .collect()
    }

    /// Factor 0.1 at one and two thirds, used for full-precision runs.
    pub fn full_precision_milestones() -> Vec<Milestone> {
        vec![
            Milestone {
                fraction: 1.0 / 3.0,
                factor: 0.1,
            },
            Milestone {
                fraction: 2.0 / 3.0,
                factor: 0.1,
            },
        ]
    }

    pub fn binary(lr0: f64, wd0: f64) -> Self {
        SgdwConfig {
            lr0,
            momentum: 0.9,
            wd0,
            warmup_epochs: 5,
            milestones: Self::binary_milestones(),
        }
    }

    pub fn full_precision(lr0: f64, wd0: f64) -> Self {
        SgdwConfig {
            milestones: Self::full_precision_milestones(),
            ..Self::binary(lr0, wd0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.wd0 >= 0.0) {
            return Err(Error::invalid("lr0 and wd0 must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        let mut prev = 0.0;
        for m in &self.milestones {
            if !(m.fraction > prev && m.fraction < 1.0) {
                return Err(Error::invalid(format!(
                    "milestone fractions must be strictly increasing in (0, 1); got {}",
                    m.fraction
                )));
            }
            if !(m.factor > 0.0 && m.factor <= 1.0) {
                return Err(Error::invalid(format!(
                    "milestone factors must lie in (0, 1]; got {}",
                    m.factor
                )));
            }
            prev = m.fraction;
        }
        Ok(())
    }
}

/// Shared multiplier for learning rate and weight decay at step `t`: linear
/// from 0 over warmup, then the product of every milestone factor already
/// passed. Milestones are measured in post-warmup steps.
pub fn schedule_multiplier(t: u64, total: u64, warmup_steps: u64, milestones: &[Milestone]) -> f64 {
    if t < warmup_steps {
        return t as f64 / warmup_steps as f64;
    }
    let post = total.saturating_sub(warmup_steps) as f64;
    let elapsed = (t - warmup_steps) as f64;
    milestones
        .iter()
        .filter(|m| elapsed >= m.fraction * post)
        .map(|m| m.factor)
        .product()
}

pub fn lr_at_step(t: u64, total: u64, warmup_steps: u64, config: &SgdwConfig) -> f64 {
    config.lr0 * schedule_multiplier(t, total, warmup_steps, &config.milestones)
}

/// Weight decay follows the same warmup ramp and milestones as the learning rate.
pub fn wd_at_step(t: u64, total: u64, warmup_steps: u64, config: &SgdwConfig) -> f64 {
    config.wd0 * schedule_multiplier(t, total, warmup_steps, &config.milestones)
}

/// SGD with momentum and decoupled weight decay:
///
/// ```text
/// v <- momentum * v + grad
/// p <- p - lr * v - lr * wd * p      (weight-decayed parameters)
/// p <- p - lr * v                    (others)
/// ```
#[derive(Clone, Debug)]
pub struct Sgdw<T> {
    momentum: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Element> Sgdw<T> {
    pub fn new(momentum: f64) -> Self {
        Sgdw {
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// One update over `params`, which must be the same list (same order and
    /// shapes) on every call.
    pub fn step(&mut self, params: &mut [ParamMut<'_, T>], lr: f64, wd: f64) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| p.value.zeros_like()).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::dim(format!(
                "optimizer holds {} velocity slots but {} parameters were given",
                self.velocity.len(),
                params.len()
            )));
        }
        let m = T::of(self.momentum);
        let lr_t = T::of(lr);
        let decay = T::of(lr * wd);
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            if p.value.shape() != v.shape() || p.grad.shape() != v.shape() {
                return Err(Error::dim(format!(
                    "{}: parameter {:?}, gradient {:?} and velocity {:?} disagree",
                    p.name,
                    p.value.shape(),
                    p.grad.shape(),
                    v.shape()
                )));
            }
            let decayed = p.weight_decayed && wd != 0.0;
            for ((x, vel), &g) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(v.data_mut().iter_mut())
                .zip(p.grad.data())
            {
                *vel = m * *vel + g;
                let mut next = *x - lr_t * *vel;
                if decayed {
                    next = next - decay * *x;
                }
                *x = next;
            }
        }
        Ok(())
    }
}
