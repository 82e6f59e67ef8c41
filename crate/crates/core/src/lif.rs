//! Discrete-time leaky integrate-and-fire simulator.
//!
//! This is the multi-step reference the single-step network is reduced
//! from: a forward-Euler membrane/synapse recurrence with reset-to-zero.
//! Its one-step run from zero state is the correctness oracle for the
//! feed-forward step activation ([`verify_reduction`]). Multi-step mode
//! exists for diagnostics only; there is no multi-step training here.

use crate::error::{Error, Result};
use crate::surrogate::{heaviside_forward, SurrogateKind, SurrogateSpec};
use crate::tensor::{Scalar, Tensor};

/// Neuron constants of the discrete-time model. Time constants are in units
/// of the step width (`tau / dt`), so leak factors `1 - 1/tau` land in `[0, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct LifParams {
    pub tau_m: f64,
    pub tau_s: f64,
    pub u_th: f64,
    pub u_reset: f64,
    pub steps: usize,
}

impl LifParams {
    pub fn new(tau_m: f64, tau_s: f64, u_th: f64, steps: usize) -> Result<LifParams> {
        if tau_m < 1.0 || tau_s < 1.0 {
            return Err(Error::InvalidParam(format!(
                "LIF time constants must be >= 1 step (got tau_m={tau_m}, tau_s={tau_s})"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParam("LIF needs at least one step".into()));
        }
        Ok(LifParams {
            tau_m,
            tau_s,
            u_th,
            u_reset: 0.0,
            steps,
        })
    }

    fn leak_m<T: Scalar>(&self) -> T {
        T::from_f64(1.0 - 1.0 / self.tau_m)
    }

    fn leak_s<T: Scalar>(&self) -> T {
        T::from_f64(1.0 - 1.0 / self.tau_s)
    }
}

/// Per-layer state of one simulation: membrane potential, postsynaptic
/// current, and the binary spike trains emitted so far.
#[derive(Clone, Debug)]
pub struct LifState<T: Scalar = f32> {
    pub u: Tensor<T>,
    pub a: Tensor<T>,
    fired_prev: Tensor<T>,
    pub spike_history: Vec<Tensor<T>>,
}

impl<T: Scalar> LifState<T> {
    /// Zero initial state: `u[-dt] = 0`, `a[-dt] = 0`, nothing fired.
    pub fn zeros(shape: &[usize]) -> LifState<T> {
        LifState {
            u: Tensor::zeros(shape),
            a: Tensor::zeros(shape),
            fired_prev: Tensor::zeros(shape),
            spike_history: Vec::new(),
        }
    }
}

/// One Euler step: leak + integrate, fire, update the postsynaptic current.
/// Reset-to-zero applies to neurons that fired at the previous step.
pub fn lif_step<T: Scalar>(
    state: &mut LifState<T>,
    input_current: &Tensor<T>,
    p: &LifParams,
) -> Result<Tensor<T>> {
    if input_current.shape() != state.u.shape() {
        return Err(Error::ShapeMismatch(format!(
            "lif_step: state {:?} vs input {:?}",
            state.u.shape(),
            input_current.shape()
        )));
    }
    let leak_m: T = p.leak_m();
    let leak_s: T = p.leak_s();
    let reset = T::from_f64(p.u_reset);
    let half = T::from_f64(0.5);

    let u_prev = state.u.data();
    let fired = state.fired_prev.data();
    let mut u_next = vec![T::zero(); u_prev.len()];
    for i in 0..u_prev.len() {
        let carried = if fired[i] > half { reset } else { u_prev[i] };
        u_next[i] = leak_m * carried + input_current.data()[i];
    }
    state.u = Tensor::from_vec(state.u.shape(), u_next)
        .map_err(|_| Error::NonFinite { op: "lif_step" })?;

    let th = T::from_f64(p.u_th);
    let spikes = state.u.map(|v| if v >= th { T::one() } else { T::zero() })?;

    let a_prev = state.a.data();
    let a_next: Vec<T> = a_prev
        .iter()
        .zip(spikes.data())
        .map(|(&a, &s)| leak_s * a + s)
        .collect();
    state.a = Tensor::from_vec(state.a.shape(), a_next)
        .map_err(|_| Error::NonFinite { op: "lif_step" })?;

    state.fired_prev = spikes.clone();
    state.spike_history.push(spikes.clone());
    Ok(spikes)
}

/// Run `inputs.len()` sequential steps from zero state; returns the spike
/// history.
pub fn lif_run<T: Scalar>(inputs: &[Tensor<T>], p: &LifParams) -> Result<Vec<Tensor<T>>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidParam("lif_run: no input steps".into()))?;
    let mut state = LifState::zeros(first.shape());
    for input in inputs {
        lif_step(&mut state, input, p)?;
    }
    Ok(state.spike_history)
}

/// Single-exponential spike response kernel `(1/tau_s) exp(-t/tau_s)` for `t >= 0`.
pub fn kernel_eps(t: f64, tau_s: f64) -> f64 {
    if t < 0.0 {
        0.0
    } else {
        (-t / tau_s).exp() / tau_s
    }
}

/// Outcome of one reduction check, with a pointer at the first mismatch.
#[derive(Clone, Debug)]
pub struct ReductionReport {
    pub holds: bool,
    pub layers_checked: usize,
    pub first_mismatch: Option<MismatchAt>,
}

#[derive(Clone, Copy, Debug)]
pub struct MismatchAt {
    pub layer: usize,
    pub flat_index: usize,
}

/// Check that a T=1 LIF pass from zero state spikes identically to the
/// feed-forward step activation, layer by layer, bit-exact.
///
/// `weights[l]` is `d_l x d_{l-1}`; `input` is a `batch x d_0` real-valued
/// encoding input. Never errors on a mismatch: the report carries the
/// diagnostic.
pub fn verify_reduction<T: Scalar>(
    weights: &[Tensor<T>],
    input: &Tensor<T>,
    p: &LifParams,
) -> Result<ReductionReport> {
    let spec = SurrogateSpec {
        u_th: p.u_th,
        ..SurrogateSpec::new(SurrogateKind::S2nn)
    };
    verify_reduction_against(weights, input, p, &spec)
}

/// Same as [`verify_reduction`], with the single-step side using an explicit
/// spec (lets tests perturb one side of the comparison).
pub fn verify_reduction_against<T: Scalar>(
    weights: &[Tensor<T>],
    input: &Tensor<T>,
    p: &LifParams,
    single_step: &SurrogateSpec,
) -> Result<ReductionReport> {
    if p.steps != 1 {
        return Err(Error::InvalidParam(
            "verify_reduction requires a single-step configuration".into(),
        ));
    }
    let mut lif_signal = input.clone();
    let mut step_signal = input.clone();
    for (l, w) in weights.iter().enumerate() {
        let w_t = w.transpose()?;

        // Route 1: the LIF recurrence at T=1 from zero state.
        let current = lif_signal.matmul(&w_t)?;
        let mut state = LifState::<T>::zeros(current.shape());
        lif_step(&mut state, &current, p)?;
        let lif_spikes = state.spike_history[0].clone();
        lif_signal = state.a; // a[0] = s[0] when starting from a[-dt] = 0

        // Route 2: the feed-forward step activation.
        let u = step_signal.matmul(&w_t)?;
        let step_spikes = heaviside_forward(&u, single_step)?;
        step_signal = step_spikes.clone();

        for i in 0..lif_spikes.len() {
            if lif_spikes.data()[i] != step_spikes.data()[i] {
                return Ok(ReductionReport {
                    holds: false,
                    layers_checked: l + 1,
                    first_mismatch: Some(MismatchAt {
                        layer: l,
                        flat_index: i,
                    }),
                });
            }
        }
        if lif_signal.data() != lif_spikes.data() {
            // a[0] must equal s[0] exactly at T=1 from zero state.
            return Ok(ReductionReport {
                holds: false,
                layers_checked: l + 1,
                first_mismatch: Some(MismatchAt {
                    layer: l,
                    flat_index: 0,
                }),
            });
        }
    }
    Ok(ReductionReport {
        holds: true,
        layers_checked: weights.len(),
        first_mismatch: None,
    })
}
