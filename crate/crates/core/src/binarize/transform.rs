//! The group weight transform and its exact gradient.
//!
//! For one group with values `u_k = u(phi_k)` the transform splits indices by
//! sign (`u > 0` versus `u <= 0`), centres each side on its own mean, shrinks
//! the deviations by `exp(-zeta)` and offsets the sides to `+1` and `-1`:
//!
//! ```text
//! w_k = (u_k - mean_pos) * exp(-zeta) + 1    if u_k > 0
//! w_k = (u_k - mean_neg) * exp(-zeta) - 1    otherwise
//! ```
//!
//! Within a sign subset `s` of size `n_s` the Jacobian is
//! `dw_i/dphi_j = exp(-zeta) * (delta_ij - 1/n_s) * u'(phi_j)`; across subsets
//! it is zero. Subset membership is piecewise constant in `phi` and is held
//! fixed through a forward/backward pair.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use super::PartitionSpec;

/// Squashing applied to `phi` before the sign split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum UMode {
    /// `u(phi) = phi`; the split uses the sign of `phi` directly.
    #[default]
    Identity,
    /// `u(phi) = tanh(phi)`, bounding every value to `(-1, 1)`.
    Tanh,
}

impl UMode {
    pub fn name(self) -> &'static str {
        match self {
            UMode::Identity => "identity",
            UMode::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for UMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(UMode::Identity),
            "tanh" => Ok(UMode::Tanh),
            other => Err(Error::invalid(format!(
                "unknown u_mode {other:?} (expected identity or tanh)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
struct TransformCache<T> {
    zeta: f64,
    positive: Vec<bool>,
    /// Per group: (mean of the positive subset, mean of the nonpositive subset).
    means: Vec<(T, T)>,
    /// `u'(phi)` per element; absent for the identity mode.
    u_prime: Option<Vec<T>>,
}

/// Latent parameters of one binarized tensor together with the partition and
/// the forward cache needed for the exact backward pass.
#[derive(Clone, Debug)]
pub struct BinarizeState<T> {
    phi: Tensor<T>,
    partition: PartitionSpec,
    u_mode: UMode,
    cache: Option<TransformCache<T>>,
    last_degenerate: usize,
    degenerate_total: u64,
}

impl<T: Element> BinarizeState<T> {
    pub fn new(phi: Tensor<T>, partition: PartitionSpec, u_mode: UMode) -> Result<Self> {
        if partition.len() != phi.len() {
            return Err(Error::dim(format!(
                "partition covers {} indices but phi has {}",
                partition.len(),
                phi.len()
            )));
        }
        Ok(BinarizeState {
            phi,
            partition,
            u_mode,
            cache: None,
            last_degenerate: 0,
            degenerate_total: 0,
        })
    }

    pub fn phi(&self) -> &Tensor<T> {
        &self.phi
    }

    /// Mutable access to `phi`; drops any pending forward cache.
    pub fn phi_mut(&mut self) -> &mut Tensor<T> {
        self.cache = None;
        &mut self.phi
    }

    /// Mutable `phi` alongside the (shared) partition, for optimizers.
    pub fn split_mut(&mut self) -> (&mut Tensor<T>, &PartitionSpec) {
        self.cache = None;
        (&mut self.phi, &self.partition)
    }

    pub fn partition(&self) -> &PartitionSpec {
        &self.partition
    }

    pub fn u_mode(&self) -> UMode {
        self.u_mode
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Groups that lacked two members on either side of the split in the last
    /// forward pass.
    pub fn last_degenerate_groups(&self) -> usize {
        self.last_degenerate
    }

    /// Running total of degenerate groups over all forward passes.
    pub fn degenerate_total(&self) -> u64 {
        self.degenerate_total
    }

    /// Applies the transform to every group at sharpness `zeta`, caching
    /// subset membership and means for [`BinarizeState::backward`].
    pub fn forward(&mut self, zeta: f64) -> Result<Tensor<T>> {
        if !zeta.is_finite() || zeta < 0.0 {
            return Err(Error::invalid(format!("zeta must be finite and >= 0, got {zeta}")));
        }
        if let Some(i) = self.phi.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericInput(format!(
                "phi[{i}] = {} is not finite",
                self.phi.data()[i]
            )));
        }
        let phi = self.phi.data();
        let (u, u_prime): (Vec<T>, Option<Vec<T>>) = match self.u_mode {
            UMode::Identity => (phi.to_vec(), None),
            UMode::Tanh => {
                let u: Vec<T> = phi.iter().map(|p| p.tanh()).collect();
                let d = u.iter().map(|&t| T::one() - t * t).collect();
                (u, Some(d))
            }
        };
        let scale = T::of((-zeta).exp());
        let positive: Vec<bool> = u.iter().map(|&v| v > T::zero()).collect();
        let mut w = vec![T::zero(); phi.len()];
        let mut means = Vec::with_capacity(self.partition.num_groups());
        let mut degenerate = 0;

        for group in self.partition.groups() {
            let (mut sp, mut np, mut sn, mut nn) = (T::zero(), 0usize, T::zero(), 0usize);
            for &i in group {
                if positive[i] {
                    sp = sp + u[i];
                    np += 1;
                } else {
                    sn = sn + u[i];
                    nn += 1;
                }
            }
            let mp = if np > 0 { sp / T::of(np as f64) } else { T::zero() };
            let mn = if nn > 0 { sn / T::of(nn as f64) } else { T::zero() };
            for &i in group {
                w[i] = if positive[i] {
                    (u[i] - mp) * scale + T::one()
                } else {
                    (u[i] - mn) * scale - T::one()
                };
            }
            if np < 2 || nn < 2 {
                degenerate += 1;
            }
            means.push((mp, mn));
        }

        self.last_degenerate = degenerate;
        self.degenerate_total += degenerate as u64;
        self.cache = Some(TransformCache {
            zeta,
            positive,
            means,
            u_prime,
        });
        Ok(Tensor::from_parts(self.phi.shape().to_vec(), w))
    }

    /// Exact gradient with respect to `phi` given the gradient with respect to
    /// the transformed weights. Consumes the cache of the matching forward.
    ///
    /// Per sign subset `s`: `grad_phi[j] = exp(-zeta) * (grad_w[j] - mean_s(grad_w)) * u'(phi_j)`.
    pub fn backward(&mut self, zeta: f64, grad_w: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("transform backward called without a matching forward".into()))?;
        if cache.zeta != zeta {
            return Err(Error::State(format!(
                "transform backward at zeta {zeta} does not match forward at zeta {}",
                cache.zeta
            )));
        }
        grad_w.expect_same_shape(&self.phi, "transform backward")?;
        let g = grad_w.data();
        let scale = T::of((-zeta).exp());
        let mut out = vec![T::zero(); g.len()];

        for group in self.partition.groups() {
            let (mut sp, mut np, mut sn, mut nn) = (T::zero(), 0usize, T::zero(), 0usize);
            for &i in group {
                if cache.positive[i] {
                    sp = sp + g[i];
                    np += 1;
                } else {
                    sn = sn + g[i];
                    nn += 1;
                }
            }
            let mp = if np > 0 { sp / T::of(np as f64) } else { T::zero() };
            let mn = if nn > 0 { sn / T::of(nn as f64) } else { T::zero() };
            for &i in group {
                let centred = if cache.positive[i] { g[i] - mp } else { g[i] - mn };
                out[i] = centred * scale;
            }
        }
        if let Some(d) = &cache.u_prime {
            out.iter_mut().zip(d).for_each(|(o, &dv)| *o = *o * dv);
        }
        Ok(Tensor::from_parts(self.phi.shape().to_vec(), out))
    }

    /// Subset means `(positive, nonpositive)` of `u(phi)` per group from the
    /// last forward pass, if one is pending.
    pub fn cached_means(&self) -> Option<&[(T, T)]> {
        self.cache.as_ref().map(|c| c.means.as_slice())
    }

    /// Sign subset membership (`true` for `u(phi) > 0`) from the last forward.
    pub fn cached_membership(&self) -> Option<&[bool]> {
        self.cache.as_ref().map(|c| c.positive.as_slice())
    }
}

/// Convex combination `alpha * w + (1 - alpha) * phi`.
pub fn interpolate_alpha<T: Element>(w: &Tensor<T>, phi: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    check_alpha(alpha)?;
    let a = T::of(alpha);
    let b = T::of(1.0 - alpha);
    w.zip_map(phi, |wv, pv| a * wv + b * pv)
}

/// Splits the gradient of the interpolated weights into the part flowing
/// through the transform (`alpha * g`) and the direct part to `phi`
/// (`(1 - alpha) * g`).
pub fn interpolate_alpha_backward<T: Element>(grad: &Tensor<T>, alpha: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    check_alpha(alpha)?;
    Ok((grad.scale(T::of(alpha)), grad.scale(T::of(1.0 - alpha))))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// Inference binarization: `+1` where `phi > 0`, `-1` otherwise (zero maps to `-1`).
pub fn sign_binarize<T: Element>(phi: &Tensor<T>) -> Tensor<T> {
    phi.map(|v| if v > T::zero() { T::one() } else { -T::one() })
}
