//! Spike Response Model primitives.
//!
//! The membrane potential of a neuron is the sum of its weighted input spike
//! trains filtered by the response kernel `eps`, plus its own output train
//! filtered by the (negative) refractory kernel `nu`. Both kernels are
//! sampled once per simulation step and truncated after
//! `ceil(5 * max(tau_s, tau_r) / step)` samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrmParams {
    /// Spike-response time constant, ms.
    pub tau_s: f64,
    /// Refractory time constant, ms.
    pub tau_r: f64,
    /// Firing threshold.
    pub theta: f64,
    /// Surrogate-gradient peak.
    pub surrogate_alpha: f64,
    /// Surrogate-gradient decay rate.
    pub surrogate_beta: f64,
    /// Simulation step, ms.
    pub sim_step_ms: f64,
}

impl Default for SrmParams {
    fn default() -> Self {
        SrmParams {
            tau_s: 2.0,
            tau_r: 2.0,
            theta: 1.0,
            surrogate_alpha: 1.0,
            surrogate_beta: 10.0,
            sim_step_ms: 1.0,
        }
    }
}

impl SrmParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("tau_s", self.tau_s),
            ("tau_r", self.tau_r),
            ("theta", self.theta),
            ("surrogate_alpha", self.surrogate_alpha),
            ("surrogate_beta", self.surrogate_beta),
            ("sim_step_ms", self.sim_step_ms),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Kernel truncation length in steps.
    pub fn kernel_len(&self) -> usize {
        (5.0 * self.tau_s.max(self.tau_r) / self.sim_step_ms).ceil() as usize
    }
}

/// Response kernel `(t / tau_s) * exp(1 - t / tau_s)` for `t >= 0`, zero before.
pub fn eps_kernel(t: f64, tau_s: f64) -> Result<f64> {
    if !(tau_s > 0.0) {
        return Err(Error::InvalidParam(format!("tau_s must be positive, got {tau_s}")));
    }
    Ok(eps_unchecked(t, tau_s))
}

fn eps_unchecked(t: f64, tau_s: f64) -> f64 {
    if t < 0.0 {
        0.0
    } else {
        let r = t / tau_s;
        r * (1.0 - r).exp()
    }
}

/// Refractory kernel `-2 theta exp(1 - t / tau_r)` for `t >= 0`, zero before.
pub fn ref_kernel(t: f64, tau_r: f64, theta: f64) -> Result<f64> {
    if !(tau_r > 0.0) {
        return Err(Error::InvalidParam(format!("tau_r must be positive, got {tau_r}")));
    }
    Ok(ref_unchecked(t, tau_r, theta))
}

fn ref_unchecked(t: f64, tau_r: f64, theta: f64) -> f64 {
    if t < 0.0 {
        0.0
    } else {
        -2.0 * theta * (1.0 - t / tau_r).exp()
    }
}

#[inline]
pub fn spike_function(u: f64, theta: f64) -> u8 {
    u8::from(u >= theta)
}

/// Surrogate derivative of the spike function: `alpha * exp(-beta * |u - theta|)`.
#[inline]
pub fn surrogate_grad(u: f64, params: &SrmParams) -> f64 {
    params.surrogate_alpha * (-params.surrogate_beta * (u - params.theta).abs()).exp()
}

/// Smooth stand-in for the spike function whose derivative is exactly
/// [`surrogate_grad`]. Ranges over `(0, 2 alpha / beta)`; used for gradient
/// checking, where the binary threshold would make the loss piecewise constant.
#[inline]
pub fn relaxed_spike(u: f64, params: &SrmParams) -> f64 {
    let scale = params.surrogate_alpha / params.surrogate_beta;
    let d = u - params.theta;
    if d < 0.0 {
        scale * (params.surrogate_beta * d).exp()
    } else {
        2.0 * scale - scale * (-params.surrogate_beta * d).exp()
    }
}

/// Kernels sampled at multiples of the simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    /// Response kernel, shifted right by `delay_steps` zero samples.
    pub eps: Vec<f64>,
    pub nu: Vec<f64>,
    pub len: usize,
    pub delay_steps: usize,
}

impl KernelTable {
    pub fn new(params: &SrmParams, delay_steps: usize) -> Result<Self> {
        params.validate()?;
        let len = params.kernel_len();
        let step = params.sim_step_ms;
        let eps = (0..len + delay_steps)
            .map(|k| eps_unchecked((k as f64 - delay_steps as f64) * step, params.tau_s))
            .collect();
        let nu = (0..len)
            .map(|k| ref_unchecked(k as f64 * step, params.tau_r, params.theta))
            .collect();
        Ok(KernelTable {
            eps,
            nu,
            len,
            delay_steps,
        })
    }

    /// Sum of the sampled response kernel; the steady PSP gain of a unit spike.
    pub fn eps_area(&self) -> f64 {
        self.eps.iter().sum()
    }
}

/// Output of [`simulate_neuron`].
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTrace {
    pub spikes: Vec<u8>,
    pub membrane: Vec<f64>,
}

/// Simulates a single SRM neuron over binary input trains.
///
/// `u[k] = sum_j w_j (eps * s_j)[k] + (nu * s_out)[k]`, where the refractory
/// convolution only sees output spikes strictly before `k`.
pub fn simulate_neuron(inputs: &[Vec<u8>], weights: &[f64], params: &SrmParams) -> Result<NeuronTrace> {
    if inputs.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} input trains but {} weights",
            inputs.len(),
            weights.len()
        )));
    }
    let steps = inputs.first().map_or(0, Vec::len);
    if let Some(bad) = inputs.iter().position(|s| s.len() != steps) {
        return Err(Error::Shape(format!(
            "input train {bad} has length {} (expected {steps})",
            inputs[bad].len()
        )));
    }
    let table = KernelTable::new(params, 0)?;
    // PSP of each input, then its weighted sum
    let mut drive = vec![0.0; steps];
    for (train, &w) in inputs.iter().zip(weights) {
        for (k, d) in drive.iter_mut().enumerate() {
            let psp: f64 = (0..table.eps.len().min(k + 1))
                .map(|m| table.eps[m] * train[k - m] as f64)
                .sum();
            *d += w * psp;
        }
    }
    let mut spikes = vec![0u8; steps];
    let mut membrane = vec![0.0; steps];
    for k in 0..steps {
        let refractory: f64 = (1..table.nu.len().min(k + 1))
            .map(|m| table.nu[m] * spikes[k - m] as f64)
            .sum();
        membrane[k] = drive[k] + refractory;
        spikes[k] = spike_function(membrane[k], params.theta);
    }
    Ok(NeuronTrace { spikes, membrane })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eps_examples() {
        assert_eq!(eps_kernel(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(eps_kernel(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(eps_kernel(-1.0, 2.0).unwrap(), 0.0);
        // 2 / e
        assert!((eps_kernel(4.0, 2.0).unwrap() - 0.735_758_882_342_884_6).abs() < 1e-15);
        assert!(eps_kernel(1.0, 0.0).is_err());
        assert!(eps_kernel(1.0, -2.0).is_err());
    }

    #[test]
    fn ref_examples() {
        assert_eq!(ref_kernel(3.0, 3.0, 1.0).unwrap(), -2.0);
        assert_eq!(ref_kernel(-0.5, 3.0, 1.0).unwrap(), 0.0);
        // -2e
        assert!((ref_kernel(0.0, 2.0, 1.0).unwrap() + 5.436_563_656_918_091).abs() < 1e-14);
        assert!(ref_kernel(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn spike_function_is_inclusive() {
        assert_eq!(spike_function(0.5, 1.0), 0);
        assert_eq!(spike_function(1.0, 1.0), 1);
        assert_eq!(spike_function(-3.0, 1.0), 0);
    }

    #[test]
    fn surrogate_examples() {
        let p = SrmParams::default();
        assert_eq!(surrogate_grad(p.theta, &p), p.surrogate_alpha);
        let v = surrogate_grad(p.theta + 1.0 / p.surrogate_beta, &p);
        assert!((v - p.surrogate_alpha * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn relaxed_spike_derivative_is_surrogate() {
        let p = SrmParams::default();
        for &u in &[-1.0, 0.3, 0.95, 1.0, 1.02, 1.7] {
            let h = 1e-6;
            let fd = (relaxed_spike(u + h, &p) - relaxed_spike(u - h, &p)) / (2.0 * h);
            // the second derivative jumps at theta, costing O(beta * h) there
            assert!((fd - surrogate_grad(u, &p)).abs() < 1e-5, "u={u}");
        }
    }

    #[test]
    fn kernel_table_shape() {
        let p = SrmParams::default();
        let t = KernelTable::new(&p, 0).unwrap();
        assert_eq!(t.len, 10);
        assert_eq!(t.eps[0], 0.0);
        let (argmax, _) = t
            .eps
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert_eq!(argmax, 2);
        assert_eq!(t.eps[2], 1.0);
        assert!(t.nu.iter().all(|&v| v <= 0.0));
        // one step of PSP at tau_s = 2 ms
        assert!((t.eps[1] - 0.5 * 0.5f64.exp()).abs() < 1e-15);

        let delayed = KernelTable::new(&p, 2).unwrap();
        assert_eq!(delayed.eps.len(), 12);
        assert_eq!(&delayed.eps[2..], &t.eps[..]);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = SrmParams {
            theta: 0.0,
            ..SrmParams::default()
        };
        assert!(KernelTable::new(&p, 0).is_err());
    }

    #[test]
    fn silent_inputs_and_zero_weights() {
        let p = SrmParams::default();
        let trace = simulate_neuron(&[vec![0; 20], vec![0; 20]], &[1.0, 2.0], &p).unwrap();
        assert!(trace.spikes.iter().all(|&s| s == 0));
        assert!(trace.membrane.iter().all(|&u| u == 0.0));
        let busy = vec![1u8; 20];
        let trace = simulate_neuron(&[busy], &[0.0], &p).unwrap();
        assert!(trace.spikes.iter().all(|&s| s == 0));
    }

    #[test]
    fn length_mismatch_is_error() {
        let p = SrmParams::default();
        assert!(simulate_neuron(&[vec![0; 5], vec![0; 4]], &[1.0, 1.0], &p).is_err());
        assert!(simulate_neuron(&[vec![0; 5]], &[1.0, 1.0], &p).is_err());
    }

    #[test]
    fn single_spike_fires_one_step_later() {
        let p = SrmParams::default();
        let mut input = vec![0u8; 20];
        input[0] = 1;
        // w * eps(1 ms) = 2 * 0.824 >= 1
        let trace = simulate_neuron(&[input], &[2.0], &p).unwrap();
        assert_eq!(trace.spikes[0], 0);
        assert_eq!(trace.spikes[1], 1);
        // refractory dip right after the spike
        assert!(trace.membrane[2] < 2.0 * 1.0 - 2.0 * std::f64::consts::E * 0.5);
        assert!(trace.membrane[2] < trace.membrane[1]);
    }

    proptest! {
        #[test]
        fn causality(
            seed_trains in prop::collection::vec(prop::collection::vec(0u8..2, 16), 3),
            weights in prop::collection::vec(-1.0f64..3.0, 3),
            cut in 0usize..16,
            flips in prop::collection::vec(0u8..2, 16),
        ) {
            let p = SrmParams::default();
            let base = simulate_neuron(&seed_trains, &weights, &p).unwrap();
            let mut altered = seed_trains.clone();
            for train in altered.iter_mut() {
                for k in cut + 1..16 {
                    train[k] = flips[k];
                }
            }
            let other = simulate_neuron(&altered, &weights, &p).unwrap();
            prop_assert_eq!(&base.spikes[..=cut], &other.spikes[..=cut]);
            prop_assert_eq!(&base.membrane[..=cut], &other.membrane[..=cut]);
        }

        #[test]
        fn kernels_match_closed_forms(t in 0.0f64..50.0, tau in 0.1f64..10.0, theta in 0.1f64..5.0) {
            let e = eps_kernel(t, tau).unwrap();
            let expect = (t / tau) * (1.0 - t / tau).exp();
            prop_assert!((e - expect).abs() <= 1e-12 * expect.abs().max(f64::MIN_POSITIVE));
            let n = ref_kernel(t, tau, theta).unwrap();
            prop_assert!(n <= 0.0);
        }
    }
}
