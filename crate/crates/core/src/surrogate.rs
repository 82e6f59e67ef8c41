//! The step-activation forward rule and the zoo of surrogate backward rules
//! it is compared against: the single-step reduction of a spiking neuron
//! (warm-up sigmoid below threshold, `1/(tau_s * u)` at and above it), the
//! two straight-through estimators, SiBNN, SLAYER's exponential decay, and
//! the fast-sigmoid derivative.
//!
//! Scalar kernels are evaluated in `f64` no matter the tensor element type;
//! tensor wrappers map them elementwise over cached membrane potentials.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Which backward rule an activation layer uses. Forward is always the step
/// function (sign function for `SteB`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurrogateKind {
    S2nn,
    SteB,
    SteS,
    Sibnn,
    Slayer,
    FastSig,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 6] = [
        SurrogateKind::S2nn,
        SurrogateKind::SteB,
        SurrogateKind::SteS,
        SurrogateKind::Sibnn,
        SurrogateKind::Slayer,
        SurrogateKind::FastSig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::S2nn => "s2nn",
            SurrogateKind::SteB => "ste-b",
            SurrogateKind::SteS => "ste-s",
            SurrogateKind::Sibnn => "sibnn",
            SurrogateKind::Slayer => "slayer",
            SurrogateKind::FastSig => "fastsig",
        }
    }

    pub fn parse(name: &str) -> Result<SurrogateKind> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::InvalidParam(format!("unknown surrogate `{name}`")))
    }
}

/// Backward rule plus its hyperparameters. Unused fields keep their defaults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    /// Firing threshold of the forward step function.
    pub u_th: f64,
    /// Synaptic time constant of the firing branch (`S2nn` only).
    pub tau_s: f64,
    /// Width of the warm-up scaled sigmoid (`S2nn` only).
    pub alpha: f64,
    /// SiBNN window center.
    pub rho: f64,
    /// SiBNN window half-width.
    pub delta: f64,
    /// SLAYER amplitude.
    pub alpha1: f64,
    /// SLAYER decay rate.
    pub beta1: f64,
    /// Fast-sigmoid slope.
    pub beta0: f64,
}

impl SurrogateSpec {
    /// Defaults: per-method thresholds (ste-b 0, ste-s 1, sibnn 0.3,
    /// slayer 1, s2nn 1, fastsig 1), tau_s = 1, alpha = 0.2,
    /// alpha1 = beta1 = 1, rho = 0.3, delta = 1, beta0 = 1.
    pub fn new(kind: SurrogateKind) -> SurrogateSpec {
        let u_th = match kind {
            SurrogateKind::SteB => 0.0,
            SurrogateKind::Sibnn => 0.3,
            _ => 1.0,
        };
        SurrogateSpec {
            kind,
            u_th,
            tau_s: 1.0,
            alpha: 0.2,
            rho: 0.3,
            delta: 1.0,
            alpha1: 1.0,
            beta1: 1.0,
            beta0: 1.0,
        }
    }

    pub fn with_u_th(mut self, u_th: f64) -> SurrogateSpec {
        self.u_th = u_th;
        self
    }

    /// Check the hyperparameter constraints; returns the spec on success.
    pub fn validated(self) -> Result<SurrogateSpec> {
        if self.kind == SurrogateKind::S2nn && (self.u_th <= 0.0 || self.tau_s <= 0.0) {
            return Err(Error::InvalidParam(format!(
                "s2nn requires u_th > 0 and tau_s > 0 (got u_th={}, tau_s={})",
                self.u_th, self.tau_s
            )));
        }
        if self.alpha <= 0.0
            || self.delta <= 0.0
            || self.alpha1 <= 0.0
            || self.beta1 <= 0.0
            || self.beta0 <= 0.0
        {
            return Err(Error::InvalidParam(
                "surrogate widths/amplitudes must be positive".into(),
            ));
        }
        Ok(self)
    }
}

/// Scaled sigmoid `1 / (1 + exp((-u + u_th)/alpha))`.
pub fn scaled_sigmoid(u: f64, u_th: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + ((-u + u_th) / alpha).exp())
}

/// Single-step surrogate: `1/(tau_s * u)` at or above threshold, warm-up
/// sigmoid derivative below it.
pub fn s2nn_grad_at(u: f64, spec: &SurrogateSpec) -> f64 {
    if u >= spec.u_th {
        1.0 / (spec.tau_s * u)
    } else {
        let s = scaled_sigmoid(u, spec.u_th, spec.alpha);
        s * (1.0 - s) / spec.alpha
    }
}

/// Straight-through estimator: unit gradient inside the window. SteB uses
/// `[-1, 1]`; SteS recenters it on the threshold, `[u_th - 1, u_th + 1]`.
pub fn ste_grad_at(u: f64, spec: &SurrogateSpec) -> f64 {
    let center = match spec.kind {
        SurrogateKind::SteB => 0.0,
        _ => spec.u_th,
    };
    if (u - center).abs() <= 1.0 {
        1.0
    } else {
        0.0
    }
}

/// SiBNN stand-in: unit gradient on the closed window `[rho - delta, rho + delta]`.
/// The original publication's exact shape is not reproduced here; this is the
/// rectangular sketch.
pub fn sibnn_grad_at(u: f64, spec: &SurrogateSpec) -> f64 {
    if u >= spec.rho - spec.delta && u <= spec.rho + spec.delta {
        1.0
    } else {
        0.0
    }
}

/// Exponentially decaying surrogate `alpha1 * exp(-beta1 * |u - u_th|)`.
pub fn slayer_grad_at(u: f64, spec: &SurrogateSpec) -> f64 {
    spec.alpha1 * (-spec.beta1 * (u - spec.u_th).abs()).exp()
}

/// Fast-sigmoid derivative `(1 + beta0 * |u - u_th|)^-2`.
pub fn fastsig_grad_at(u: f64, spec: &SurrogateSpec) -> f64 {
    let d = 1.0 + spec.beta0 * (u - spec.u_th).abs();
    1.0 / (d * d)
}

/// Surrogate derivative at a single membrane potential, per `spec.kind`.
pub fn surrogate_grad_at(u: f64, spec: &SurrogateSpec) -> f64 {
    match spec.kind {
        SurrogateKind::S2nn => s2nn_grad_at(u, spec),
        SurrogateKind::SteB | SurrogateKind::SteS => ste_grad_at(u, spec),
        SurrogateKind::Sibnn => sibnn_grad_at(u, spec),
        SurrogateKind::Slayer => slayer_grad_at(u, spec),
        SurrogateKind::FastSig => fastsig_grad_at(u, spec),
    }
}

/// Step forward: 1 where `u >= u_th` else 0. For `SteB` the output range is
/// `{-1, +1}` instead.
pub fn heaviside_forward<T: Scalar>(u: &Tensor<T>, spec: &SurrogateSpec) -> Result<Tensor<T>> {
    let th = T::from_f64(spec.u_th);
    if spec.kind == SurrogateKind::SteB {
        u.map(|v| if v >= th { T::one() } else { -T::one() })
    } else {
        u.map(|v| if v >= th { T::one() } else { T::zero() })
    }
}

fn map_grad<T: Scalar>(
    u: &Tensor<T>,
    spec: &SurrogateSpec,
    f: fn(f64, &SurrogateSpec) -> f64,
) -> Result<Tensor<T>> {
    u.map(|v| T::from_f64(f(v.as_f64(), spec)))
}

pub fn s2nn_grad<T: Scalar>(u: &Tensor<T>, spec: &SurrogateSpec) -> Result<Tensor<T>> {
    map_grad(u, spec, s2nn_grad_at)
}

pub fn ste_grad<T: Scalar>(u: &Tensor<T>, spec: &SurrogateSpec) -> Result<Tensor<T>> {
    map_grad(u, spec, ste_grad_at)
}

pub fn sibnn_grad<T: Scalar>(u: &Tensor<T>, spec: &SurrogateSpec) -> Result<Tensor<T>> {
    map_grad(u, spec, sibnn_grad_at)
}

pub fn slayer_grad<T: Scalar>(u: &Tensor<T>, spec: &SurrogateSpec) -> Result<Tensor<T>> {
    map_grad(u, spec, slayer_grad_at)
}

pub fn fastsig_grad<T: Scalar>(u: &Tensor<T>, spec: &SurrogateSpec) -> Result<Tensor<T>> {
    map_grad(u, spec, fastsig_grad_at)
}

pub fn surrogate_grad<T: Scalar>(u: &Tensor<T>, spec: &SurrogateSpec) -> Result<Tensor<T>> {
    map_grad(u, spec, surrogate_grad_at)
}

/// Chain rule through the activation: `grad_out (*) surrogate(u_cached)`.
pub fn activation_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    u_cached: &Tensor<T>,
    spec: &SurrogateSpec,
) -> Result<Tensor<T>> {
    grad_out.ew_mul(&surrogate_grad(u_cached, spec)?)
}
