//! Finite-difference gradient oracle and property batteries for the group
//! transform and whole graphs.
//!
//! Results are collected in a [`Report`] whose text form is one
//! `key=value` record per line.

use std::fmt;

use rand::Rng as _;

use crate::binarize::{interpolate_alpha, interpolate_alpha_backward, BinarizeState, PartitionSpec, UMode};
use crate::error::{Error, Result};
use crate::nn::{build_tiny_lenet, ForwardCtx, LayerFlags, LayerGraph};
use crate::optim::Sgdw;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Difference formula used by [`finite_diff_grad_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x + h) - f(x - h)) / 2h`, error `O(h^2)`.
    Central,
    /// `(-f(x + 2h) + 8 f(x + h) - 8 f(x - h) + f(x - 2h)) / 12h`, error `O(h^4)`.
    FivePoint,
    /// Seven-point formula, error `O(h^6)`.
    SevenPoint,
}

/// Central-difference gradient of `f` at `at`.
pub fn finite_diff_grad<F>(f: F, at: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    finite_diff_grad_with(f, at, h, Stencil::Central)
}

pub fn finite_diff_grad_with<F>(mut f: F, at: &Tensor<f64>, h: f64, stencil: Stencil) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::invalid(format!("step h must be positive and finite, got {h}")));
    }
    let offsets: &[(f64, f64)] = match stencil {
        Stencil::Central => &[(1.0, 0.5), (-1.0, -0.5)],
        Stencil::FivePoint => &[(2.0, -1.0 / 12.0), (1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (-2.0, 1.0 / 12.0)],
        Stencil::SevenPoint => &[
            (3.0, 1.0 / 60.0),
            (2.0, -9.0 / 60.0),
            (1.0, 45.0 / 60.0),
            (-1.0, -45.0 / 60.0),
            (-2.0, 9.0 / 60.0),
            (-3.0, -1.0 / 60.0),
        ],
    };
    let mut x = at.clone();
    let mut grad = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let orig = at.data()[i];
        let mut acc = 0.0;
        for &(k, c) in offsets {
            x.data_mut()[i] = orig + k * h;
            let v = f(&x)?;
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "f is not finite ({v}) when perturbing index {i} by {}h",
                    k
                )));
            }
            acc += c * v;
        }
        x.data_mut()[i] = orig;
        grad.push(acc / h);
    }
    Tensor::new(at.shape().to_vec(), grad)
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest elementwise [`relative_error`].
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| relative_error(x, y)).fold(0.0, f64::max)
}

/// `||a - b|| / max(||a||, ||b||, 1e-8)` with Euclidean norms.
pub fn norm_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    diff / norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied())).max(1e-8)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skip => "skip",
        }
    }
}

/// One named check: the worst observed value against its tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub status: Status,
    pub cases: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<CheckEntry>,
}

impl Report {
    /// Records `value <= tolerance` as pass (NaN fails).
    pub fn check(&mut self, name: impl Into<String>, value: f64, tolerance: f64, cases: usize) {
        let status = if value <= tolerance { Status::Pass } else { Status::Fail };
        self.entries.push(CheckEntry {
            name: name.into(),
            value,
            tolerance,
            status,
            cases,
        });
    }

    pub fn skip(&mut self, name: impl Into<String>) {
        self.entries.push(CheckEntry {
            name: name.into(),
            value: 0.0,
            tolerance: 0.0,
            status: Status::Skip,
            cases: 0,
        });
    }

    pub fn extend(&mut self, other: Report) {
        self.entries.extend(other.entries);
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| e.status == Status::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

impl fmt::Display for Report {
    /// One `check=... status=... value=... tol=... cases=...` line per entry,
    /// then a `summary` line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "check={} status={} value={:.3e} tol={:.1e} cases={}",
                e.name,
                e.status.name(),
                e.value,
                e.tolerance,
                e.cases
            )?;
        }
        let fails = self.failures().count();
        writeln!(
            f,
            "summary status={} checks={} failed={fails}",
            if fails == 0 { "pass" } else { "fail" },
            self.entries.len()
        )
    }
}

/// Settings for [`check_transform`].
#[derive(Clone, Debug)]
pub struct TransformCheckOptions {
    /// Random groups in the finite-difference battery, split across both
    /// u modes and every zeta in `zetas`.
    pub cases: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub zetas: Vec<f64>,
    pub seed: u64,
    /// Seven-point stencil step. The transform is piecewise smooth with kinks
    /// only where `phi` changes sign, so latent values are drawn at least
    /// `min_abs_phi` away from zero and `3h < min_abs_phi`.
    pub h: f64,
    pub min_abs_phi: f64,
    pub tolerance: f64,
}

impl Default for TransformCheckOptions {
    fn default() -> Self {
        TransformCheckOptions {
            cases: 200,
            min_size: 2,
            max_size: 256,
            zetas: vec![0.0, 1.0, 5.0, 12.0],
            seed: 0,
            h: 3e-2,
            min_abs_phi: 0.1,
            tolerance: 1e-6,
        }
    }
}

fn single_group(phi: Vec<f64>, mode: UMode) -> Result<BinarizeState<f64>> {
    let n = phi.len();
    BinarizeState::new(Tensor::new(vec![n], phi)?, PartitionSpec::single(n)?, mode)
}

fn random_phi(n: usize, lo: f64, hi: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Subset means `(positive, nonpositive)` of `u(phi)` keyed by membership.
fn subset_sums(values: &[f64], positive: &[bool]) -> (f64, f64) {
    values.iter().zip(positive).fold((0.0, 0.0), |(p, n), (&v, &s)| if s { (p + v, n) } else { (p, n + v) })
}

/// Runs the transform battery: finite differences of a random linear
/// functional of the transform, zero-centred subset gradients, unit subset
/// means, the sharp-limit bound, the closed-form gradient on all-positive
/// groups, and the alpha interpolation path.
pub fn check_transform(opts: &TransformCheckOptions) -> Result<Report> {
    let mut report = Report::default();
    let mut rng = Rng::new(opts.seed).fork(7);
    let modes = [UMode::Identity, UMode::Tanh];

    for mode in modes {
        let name = mode.name();
        let mut fd_err: f64 = 0.0;
        let mut center_err: f64 = 0.0;
        let mut mean_err: f64 = 0.0;
        let mut cases = 0;
        for case in 0..opts.cases {
            if modes[case % 2] != mode {
                continue;
            }
            cases += 1;
            let zeta = opts.zetas[(case / 2) % opts.zetas.len()];
            let n = rng.random_range(opts.min_size..=opts.max_size);
            let phi = random_phi(n, opts.min_abs_phi, 3.0, &mut rng);
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

            let mut state = single_group(phi.clone(), mode)?;
            let w = state.forward(zeta)?;
            let positive = state.cached_membership().unwrap().to_vec();
            let (sp, sn) = subset_sums(w.data(), &positive);
            let np = positive.iter().filter(|&&p| p).count();
            let nn = n - np;
            if np > 0 {
                mean_err = mean_err.max((sp / np as f64 - 1.0).abs());
            }
            if nn > 0 {
                mean_err = mean_err.max((sn / nn as f64 + 1.0).abs());
            }

            let grad_w = Tensor::new(vec![n], c.clone())?;
            let analytic = state.backward(zeta, &grad_w)?;

            // Zero centring holds for the gradient with respect to u(phi).
            let grad_u: Vec<f64> = match mode {
                UMode::Identity => analytic.data().to_vec(),
                UMode::Tanh => analytic
                    .data()
                    .iter()
                    .zip(&phi)
                    .map(|(g, p)| g / (1.0 - p.tanh().powi(2)))
                    .collect(),
            };
            let (gp, gn) = subset_sums(&grad_u, &positive);
            center_err = center_err.max(gp.abs()).max(gn.abs());

            let numeric = finite_diff_grad_with(
                |x| {
                    let mut s = single_group(x.data().to_vec(), mode)?;
                    Ok(dot(s.forward(zeta)?.data(), &c))
                },
                &Tensor::new(vec![n], phi)?,
                opts.h,
                Stencil::SevenPoint,
            )?;
            fd_err = fd_err.max(norm_relative_error(analytic.data(), numeric.data()));
        }
        report.check(format!("transform.fd.{name}"), fd_err, opts.tolerance, cases);
        report.check(format!("transform.zero_centered.{name}"), center_err, 1e-12, cases);
        report.check(format!("transform.subset_means.{name}"), mean_err, 1e-12, cases);
    }

    limit_checks(&mut report, &mut rng)?;
    closed_form_checks(&mut report, &mut rng)?;
    alpha_path_checks(&mut report, &mut rng, opts)?;
    Ok(report)
}

/// At zeta = 12 every weight lies within `exp(-12) * |u - mean|` of `±1`,
/// which for `tanh` (|u| < 1) is below 6e-6; signs never change.
fn limit_checks(report: &mut Report, rng: &mut Rng) -> Result<()> {
    let zeta: f64 = 12.0;
    let scale = (-zeta).exp();
    for mode in [UMode::Identity, UMode::Tanh] {
        let mut bound_excess: f64 = 0.0;
        let mut worst: f64 = 0.0;
        let mut sign_mismatch = 0usize;
        for _ in 0..100 {
            let n = rng.random_range(2..=256);
            let phi = random_phi(n, 0.0, 3.0, rng);
            let mut state = single_group(phi.clone(), mode)?;
            let w = state.forward(zeta)?;
            let positive = state.cached_membership().unwrap().to_vec();
            let u: Vec<f64> = match mode {
                UMode::Identity => phi.clone(),
                UMode::Tanh => phi.iter().map(|p| p.tanh()).collect(),
            };
            let (sp, sn) = subset_sums(&u, &positive);
            let np = positive.iter().filter(|&&p| p).count().max(1) as f64;
            let nn = positive.iter().filter(|&&p| !p).count().max(1) as f64;
            for i in 0..n {
                let mean = if positive[i] { sp / np } else { sn / nn };
                let dev = (w.data()[i].abs() - 1.0).abs();
                worst = worst.max(dev);
                bound_excess = bound_excess.max(dev - scale * (u[i] - mean).abs());
                if phi[i] != 0.0 && (w.data()[i] > 0.0) != (phi[i] > 0.0) {
                    sign_mismatch += 1;
                }
            }
        }
        let name = mode.name();
        report.check(format!("transform.limit_bound.{name}"), bound_excess.max(0.0), 1e-15, 100);
        if mode == UMode::Tanh {
            report.check("transform.limit_6e-6.tanh", worst, 6e-6, 100);
        }
        report.check(format!("transform.limit_sign.{name}"), sign_mismatch as f64, 0.0, 100);
    }
    Ok(())
}

/// For `z = x . w` and `s = tanh(z)` on an all-positive group, the gradient
/// with respect to `phi` is `s'(z) (x - mean(x)) exp(-zeta)`, times `u'(phi)`
/// in the `tanh` mode.
fn closed_form_checks(report: &mut Report, rng: &mut Rng) -> Result<()> {
    for mode in [UMode::Identity, UMode::Tanh] {
        let mut err: f64 = 0.0;
        let mut cases = 0;
        for zeta in [0.0, 1.0, 2.0] {
            for _ in 0..20 {
                let n = rng.random_range(2..=64);
                let phi: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..2.0)).collect();
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut state = single_group(phi.clone(), mode)?;
                let w = state.forward(zeta)?;
                let z = dot(w.data(), &x);
                let ds = 1.0 - z.tanh().powi(2);
                let upstream = Tensor::new(vec![n], x.iter().map(|&v| ds * v).collect())?;
                let analytic = state.backward(zeta, &upstream)?;
                let mean = x.iter().sum::<f64>() / n as f64;
                for i in 0..n {
                    let du = match mode {
                        UMode::Identity => 1.0,
                        UMode::Tanh => 1.0 - phi[i].tanh().powi(2),
                    };
                    let expected = ds * (x[i] - mean) * (-zeta).exp() * du;
                    err = err.max((analytic.data()[i] - expected).abs());
                }
                cases += 1;
            }
        }
        report.check(format!("transform.closed_form.{}", mode.name()), err, 1e-12, cases);
    }
    Ok(())
}

/// Gradient of a linear functional of `alpha * g(phi) + (1 - alpha) * phi`.
fn alpha_path_checks(report: &mut Report, rng: &mut Rng, opts: &TransformCheckOptions) -> Result<()> {
    for alpha in [0.0, 0.5, 1.0] {
        let mut err: f64 = 0.0;
        let mut cases = 0;
        for mode in [UMode::Identity, UMode::Tanh] {
            for zeta in [1.0, 5.0] {
                let n = rng.random_range(2..=64);
                let phi = random_phi(n, opts.min_abs_phi, 3.0, rng);
                let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let eval = |p: &Tensor<f64>| -> Result<(Tensor<f64>, BinarizeState<f64>)> {
                    let mut s = single_group(p.data().to_vec(), mode)?;
                    let w = s.forward(zeta)?;
                    Ok((interpolate_alpha(&w, p, alpha)?, s))
                };
                let phi_t = Tensor::new(vec![n], phi)?;
                let (_, mut state) = eval(&phi_t)?;
                let grad = Tensor::new(vec![n], c.clone())?;
                let (through, direct) = interpolate_alpha_backward(&grad, alpha)?;
                let analytic = state.backward(zeta, &through)?.zip_map(&direct, |a, b| a + b)?;
                let numeric = finite_diff_grad_with(
                    |p| Ok(dot(eval(p)?.0.data(), &c)),
                    &phi_t,
                    opts.h,
                    Stencil::SevenPoint,
                )?;
                err = err.max(norm_relative_error(analytic.data(), numeric.data()));
                cases += 1;
            }
        }
        report.check(format!("transform.alpha_path.{alpha}"), err, opts.tolerance, cases);
    }
    Ok(())
}

/// Settings for [`check_model`].
#[derive(Clone, Debug)]
pub struct ModelCheckOptions {
    pub alpha: f64,
    pub zeta: f64,
    pub h: f64,
    /// Bound on the per-tensor [`norm_relative_error`].
    pub tolerance: f64,
    pub sgd_steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub mean_tolerance: f64,
}

impl Default for ModelCheckOptions {
    fn default() -> Self {
        ModelCheckOptions {
            alpha: 1.0,
            zeta: 1.0,
            h: 1e-5,
            tolerance: 1e-5,
            sgd_steps: 20,
            lr: 0.05,
            momentum: 0.9,
            mean_tolerance: 1e-10,
        }
    }
}

/// Compares the analytic gradient of the mean cross-entropy with central
/// differences for every parameter tensor and the input, then checks that
/// SGD steps at `alpha = 1` leave per-group latent means unchanged.
pub fn check_model(graph: &LayerGraph<f64>, input: &Tensor<f64>, labels: &[usize], opts: &ModelCheckOptions) -> Result<Report> {
    check_model_with(graph, input, labels, opts, |_| {})
}

/// [`check_model`] with a hook that may alter the analytic gradients after
/// backward, used to confirm the check catches broken gradients.
pub fn check_model_with(
    graph: &LayerGraph<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    opts: &ModelCheckOptions,
    mut after_backward: impl FnMut(&mut LayerGraph<f64>),
) -> Result<Report> {
    let mut report = Report::default();
    let ctx = ForwardCtx::relaxed(opts.alpha, opts.zeta);
    let tag = format!("model/alpha={}", opts.alpha);

    let mut g = graph.clone();
    let (_, grad_input) = g.loss_and_backward(input, labels, &ctx)?;
    after_backward(&mut g);
    let analytic: Vec<(String, Tensor<f64>, Tensor<f64>)> = g
        .params()
        .into_iter()
        .map(|p| (p.name, p.value.clone(), p.grad.clone()))
        .collect();

    for (k, (name, value, grad)) in analytic.iter().enumerate() {
        let mut probe = g.clone();
        let numeric = finite_diff_grad(
            |x| {
                probe.params_mut()[k].value.data_mut().copy_from_slice(x.data());
                probe.loss(input, labels, &ctx)
            },
            value,
            opts.h,
        )?;
        report.check(
            format!("{tag}/{name}"),
            norm_relative_error(grad.data(), numeric.data()),
            opts.tolerance,
            value.len(),
        );
    }

    let mut probe = g.clone();
    let numeric = finite_diff_grad(|x| probe.loss(x, labels, &ctx), input, opts.h)?;
    report.check(
        format!("{tag}/input"),
        norm_relative_error(grad_input.data(), numeric.data()),
        opts.tolerance,
        input.len(),
    );

    mean_preservation(&mut report, graph, input, labels, opts)?;
    Ok(report)
}

fn group_means(graph: &LayerGraph<f64>) -> Vec<f64> {
    graph
        .binarize_states()
        .flat_map(|s| {
            let phi = s.phi().data();
            s.partition()
                .groups()
                .iter()
                .map(|g| g.iter().map(|&i| phi[i]).sum::<f64>() / g.len() as f64)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Per-group latent means under SGD with `alpha = 1` and no weight decay.
/// Zero-centred subset gradients make this exact for the identity u mode.
fn mean_preservation(
    report: &mut Report,
    graph: &LayerGraph<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    opts: &ModelCheckOptions,
) -> Result<()> {
    let name = "model.mean_preservation";
    let states: Vec<_> = graph.binarize_states().collect();
    if opts.sgd_steps == 0 || states.is_empty() || states.iter().any(|s| s.u_mode() != UMode::Identity) {
        report.skip(name);
        return Ok(());
    }
    let mut g = graph.clone();
    let ctx = ForwardCtx::relaxed(1.0, opts.zeta);
    let mut opt = Sgdw::new(opts.momentum);
    let mut drift: f64 = 0.0;
    for _ in 0..opts.sgd_steps {
        let before = group_means(&g);
        g.loss_and_backward(input, labels, &ctx)?;
        opt.step(&mut g.params_mut(), opts.lr, 0.0)?;
        let after = group_means(&g);
        for (a, b) in before.iter().zip(&after) {
            drift = drift.max((a - b).abs());
        }
    }
    report.check(name, drift, opts.mean_tolerance, opts.sgd_steps);
    Ok(())
}

/// The tiny LeNet used by the standalone gradient check: first three layers
/// binarized, optional batchnorm, small random biases, 64-bit, with a
/// fixed batch.
pub fn tiny_problem(seed: u64, batch: usize, batchnorm: bool) -> Result<(LayerGraph<f64>, Tensor<f64>, Vec<usize>)> {
    let mut graph = build_tiny_lenet(&LayerFlags(vec![true, true, true, false]), UMode::Identity, seed, batchnorm)?;
    let mut rng = Rng::new(seed).fork(3);
    // Zero biases put ReLU inputs exactly on the kink whenever an upstream
    // activation map is all zero.
    for p in graph.params_mut() {
        if p.name.ends_with(".bias") {
            *p.value = Tensor::randn(p.value.shape().to_vec(), 0.1, &mut rng)?;
        }
    }
    let input = Tensor::randn(vec![batch, 8, 8, 1], 1.0, &mut rng)?;
    let labels = (0..batch).map(|_| rng.random_range(0..3)).collect();
    Ok((graph, input, labels))
}

/// Everything: the transform battery and the tiny-model check at
/// `alpha` in {0, 0.5, 1}.
pub fn run_all(seed: u64) -> Result<Report> {
    let mut report = check_transform(&TransformCheckOptions {
        seed,
        ..Default::default()
    })?;
    let (graph, input, labels) = tiny_problem(seed, 4, true)?;
    for alpha in [0.0, 0.5, 1.0] {
        let opts = ModelCheckOptions {
            alpha,
            sgd_steps: if alpha == 1.0 { 20 } else { 0 },
            ..Default::default()
        };
        report.extend(check_model(&graph, &input, &labels, &opts)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn oracle_on_quadratic() {
        let g = finite_diff_grad(|x| Ok(x.data().iter().map(|v| v * v).sum()), &t(&[1.0, 2.0]), 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-9);
        assert!((g.data()[1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn oracle_exact_on_linear() {
        for h in [1e-1, 1e-3, 1.0] {
            let g = finite_diff_grad(|x| Ok(3.0 * x.data()[0] - 0.5 * x.data()[1]), &t(&[0.7, -1.1]), h).unwrap();
            assert!((g.data()[0] - 3.0).abs() < 1e-12);
            assert!((g.data()[1] + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_on_log_sum_exp() {
        let x = t(&[0.3, -1.2, 2.0, 0.0]);
        let lse = |x: &Tensor<f64>| Ok(x.data().iter().map(|v| v.exp()).sum::<f64>().ln());
        let z: f64 = x.data().iter().map(|v| v.exp()).sum();
        let softmax: Vec<f64> = x.data().iter().map(|v| v.exp() / z).collect();
        for stencil in [Stencil::Central, Stencil::FivePoint, Stencil::SevenPoint] {
            let g = finite_diff_grad_with(lse, &x, 1e-4, stencil).unwrap();
            assert!(max_relative_error(g.data(), &softmax) < 1e-7, "{stencil:?}");
        }
    }

    #[test]
    fn five_point_is_fourth_order() {
        let x = t(&[0.4]);
        let f = |x: &Tensor<f64>| Ok(x.data()[0].sin());
        let e1 = (finite_diff_grad_with(f, &x, 1e-1, Stencil::FivePoint).unwrap().data()[0] - 0.4f64.cos()).abs();
        let e2 = (finite_diff_grad_with(f, &x, 5e-2, Stencil::FivePoint).unwrap().data()[0] - 0.4f64.cos()).abs();
        assert!(e1 / e2 > 12.0, "{e1} {e2}");
    }

    #[test]
    fn non_finite_names_index() {
        let err = finite_diff_grad(
            |x| Ok(if x.data()[1] > 1.0 { f64::NAN } else { 0.0 }),
            &t(&[0.0, 1.0]),
            1e-3,
        )
        .unwrap_err();
        assert!(err.is_numeric());
        assert!(err.to_string().contains("index 1"), "{err}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn transform_battery_passes() {
        let report = check_transform(&TransformCheckOptions {
            cases: 24,
            ..Default::default()
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn tiny_model_passes() {
        let (g, x, y) = tiny_problem(1, 3, true).unwrap();
        for alpha in [0.0, 0.5, 1.0] {
            let report = check_model(&g, &x, &y, &ModelCheckOptions { alpha, ..Default::default() }).unwrap();
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn negated_conv_gradient_fails() {
        let (g, x, y) = tiny_problem(2, 3, false).unwrap();
        let report = check_model_with(&g, &x, &y, &ModelCheckOptions::default(), |g| {
            if let Layer::Conv2d(c) = &mut g.layers_mut()[0] {
                c.grad_weight = c.grad_weight.scale(-1.0);
            }
        })
        .unwrap();
        assert!(!report.passed());
        let failed: Vec<_> = report.failures().map(|e| e.name.as_str()).collect();
        assert_eq!(failed, vec!["model/alpha=1/0.conv2d.weight"]);
    }

    #[test]
    fn report_text_format() {
        let mut r = Report::default();
        r.check("a", 1e-9, 1e-6, 3);
        r.check("b", 1.0, 1e-6, 1);
        r.skip("c");
        let text = r.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "check=a status=pass value=1.000e-9 tol=1.0e-6 cases=3");
        assert!(lines[1].starts_with("check=b status=fail"));
        assert!(lines[2].starts_with("check=c status=skip"));
        assert_eq!(lines[3], "summary status=fail checks=3 failed=1");
        assert!(!r.passed());
    }
}
