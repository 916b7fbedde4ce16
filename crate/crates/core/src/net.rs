//! Layered spiking network: forward simulation over discrete time steps,
//! surrogate-gradient backpropagation through time, and the Adam optimizer.
//!
//! For every layer `l` and step `k`:
//!
//! ```text
//! a(l)[k]   = sum_m eps_d[m] * s(l)[k - m]                 (PSP, causal)
//! u(l+1)[k] = W(l) (*) a(l)[k] + sum_{m>=1} nu[m] * s(l+1)[k - m]
//! s(l+1)[k] = u(l+1)[k] >= theta
//! ```
//!
//! Backward replaces `ds/du` by the surrogate derivative and runs the same
//! recurrences in reverse: temporal credit flows through the time-reversed
//! kernels, spatial credit through the adjoint of each spatial operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::{self, OpKind, SpatialOp, Taps};
use crate::error::{Error, Result};
use crate::event::{Dims, SpikeTensor};
use crate::srm::{relaxed_spike, spike_function, surrogate_grad, KernelTable, SrmParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: OpKind,
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_padding")]
    pub padding: usize,
    #[serde(default)]
    pub output_padding: usize,
    #[serde(default)]
    pub srm: SrmParams,
    #[serde(default)]
    pub delay_steps: usize,
}

fn default_kernel() -> usize {
    3
}
fn default_stride() -> usize {
    2
}
fn default_padding() -> usize {
    1
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, srm: SrmParams) -> Self {
        LayerSpec {
            kind: OpKind::Conv,
            in_channels,
            out_channels,
            kernel: 3,
            stride: 2,
            padding: 1,
            output_padding: 0,
            srm,
            delay_steps: 0,
        }
    }

    pub fn transposed(in_channels: usize, out_channels: usize, srm: SrmParams) -> Self {
        LayerSpec {
            kind: OpKind::TransposedConv,
            output_padding: 1,
            ..LayerSpec::conv(in_channels, out_channels, srm)
        }
    }

    pub fn op(&self) -> SpatialOp {
        SpatialOp {
            kind: self.kind,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            output_padding: self.output_padding,
        }
    }

    /// Three stride-2 encoder convolutions (2 -> 16 -> 32 -> 64) followed by
    /// three stride-2 transposed convolutions (64 -> 32 -> 16 -> 2).
    pub fn encoder_decoder(srm: SrmParams) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(2, 16, srm),
            LayerSpec::conv(16, 32, srm),
            LayerSpec::conv(32, 64, srm),
            LayerSpec::transposed(64, 32, srm),
            LayerSpec::transposed(32, 16, srm),
            LayerSpec::transposed(16, 2, srm),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Tap-major weights, see [`conv`].
    pub weights: Vec<f64>,
    /// Adam first-moment estimates.
    pub m: Vec<f64>,
    /// Adam second-moment estimates.
    pub v: Vec<f64>,
    kernels: KernelTable,
}

impl Layer {
    fn new(spec: LayerSpec) -> Result<Self> {
        let kernels = KernelTable::new(&spec.srm, spec.delay_steps)?;
        let n = spec.op().weight_len();
        Ok(Layer {
            spec,
            weights: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            kernels,
        })
    }

    pub fn kernels(&self) -> &KernelTable {
        &self.kernels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub input_hw: (usize, usize),
    /// Steps per training window.
    pub steps: usize,
    /// Number of optimizer steps taken.
    pub step_count: u64,
}

/// Whether neurons emit binary spikes or the smooth relaxation used for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpikeMode {
    Binary,
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: SpikeMode,
    /// Skip silent presynaptic neurons in the spatial operators.
    pub sparse: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            mode: SpikeMode::Binary,
            sparse: true,
        }
    }
}

/// Everything the backward pass needs from one forward simulation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Shapes of `s(0) .. s(L)`.
    pub dims: Vec<Dims>,
    /// Spikes per layer, `[k][y][x][c]`; index 0 is the network input.
    pub spikes: Vec<Vec<f64>>,
    /// `psp[l]` is `a(l)`, the filtered spikes of layer `l` entering layer `l + 1`.
    pub psp: Vec<Vec<f64>>,
    /// `membrane[l]` is `u(l + 1)`.
    pub membrane: Vec<Vec<f64>>,
    pub mode: SpikeMode,
    /// Optimizer step count of the network that produced the trace.
    pub generation: u64,
    pub bin_width_us: u64,
}

impl ForwardTrace {
    pub fn output_dims(&self) -> Dims {
        *self.dims.last().unwrap()
    }

    pub fn output_values(&self) -> &[f64] {
        self.spikes.last().unwrap()
    }

    pub fn output(&self) -> SpikeTensor {
        SpikeTensor::from_values(self.output_dims(), self.bin_width_us, self.output_values()).unwrap()
    }

    /// Spike density of every non-input layer.
    pub fn layer_densities(&self) -> Vec<f64> {
        self.spikes[1..]
            .iter()
            .map(|s| s.iter().sum::<f64>() / s.len().max(1) as f64)
            .collect()
    }
}

/// Per-layer weight gradients in tap-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.layers
            .iter_mut()
            .for_each(|l| l.iter_mut().for_each(|g| *g *= factor));
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.iter().all(|&g| g == 0.0))
    }
}

/// `out[k] = sum_m kernel[m] * input[k - m]` over whole frames.
fn causal_filter(input: &[f64], frame: usize, steps: usize, kernel: &[f64], skip_first: bool) -> Vec<f64> {
    let mut out = vec![0.0; frame * steps];
    let start = usize::from(skip_first);
    for k in 0..steps {
        let dst = &mut out[k * frame..(k + 1) * frame];
        for m in start..kernel.len().min(k + 1) {
            let src = &input[(k - m) * frame..(k - m + 1) * frame];
            let c = kernel[m];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += c * s;
            }
        }
    }
    out
}

/// Adjoint of [`causal_filter`]: `out[j] = sum_m kernel[m] * input[j + m]`.
fn causal_filter_adjoint(input: &[f64], frame: usize, steps: usize, kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; frame * steps];
    for j in 0..steps {
        let dst = &mut out[j * frame..(j + 1) * frame];
        for m in 0..kernel.len().min(steps - j) {
            let src = &input[(j + m) * frame..(j + m + 1) * frame];
            let c = kernel[m];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += c * s;
            }
        }
    }
    out
}

impl Network {
    pub fn new(specs: Vec<LayerSpec>, input_hw: (usize, usize), steps: usize) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidParam("network needs at least one layer".into()));
        }
        for pair in specs.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::Shape(format!(
                    "layer emits {} channels but the next expects {}",
                    pair[0].out_channels, pair[1].in_channels
                )));
            }
        }
        let layers = specs.into_iter().map(Layer::new).collect::<Result<Vec<_>>>()?;
        let net = Network {
            layers,
            input_hw,
            steps,
            step_count: 0,
        };
        let out = net.layer_dims(input_hw)?;
        let last = out.last().unwrap();
        if (last.0, last.1) != input_hw {
            return Err(Error::Shape(format!(
                "layer stack maps {input_hw:?} to {:?}; output must match input",
                (last.0, last.1)
            )));
        }
        Ok(net)
    }

    /// The six-layer segmentation network with weights drawn from `seed`.
    pub fn encoder_decoder(srm: SrmParams, input_hw: (usize, usize), steps: usize, seed: u64, init_gain: f64) -> Result<Self> {
        if input_hw.0 % 8 != 0 || input_hw.1 % 8 != 0 {
            return Err(Error::Shape(format!(
                "input {input_hw:?} must be divisible by 8"
            )));
        }
        let mut net = Network::new(LayerSpec::encoder_decoder(srm), input_hw, steps)?;
        net.init_weights(seed, init_gain);
        Ok(net)
    }

    /// Uniform weights in `+-gain * sqrt(6 / (fan_in * eps_area))`; `eps_area`
    /// is the summed response kernel, the PSP gain of one input spike.
    pub fn init_weights(&mut self, seed: u64, gain: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let fan_in = layer.spec.op().nominal_fan_in();
            let bound = gain * (6.0 / (fan_in * layer.kernels.eps_area())).sqrt();
            for w in layer.weights.iter_mut() {
                *w = if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 };
            }
            layer.m.iter_mut().for_each(|m| *m = 0.0);
            layer.v.iter_mut().for_each(|v| *v = 0.0);
        }
        self.step_count = 0;
    }

    /// `(height, width, channels)` of every layer output for a given input size,
    /// starting with the input itself.
    pub fn layer_dims(&self, input_hw: (usize, usize)) -> Result<Vec<(usize, usize, usize)>> {
        let mut dims = vec![(input_hw.0, input_hw.1, self.layers[0].spec.in_channels)];
        for layer in &self.layers {
            let op = layer.spec.op();
            let &(h, w, _) = dims.last().unwrap();
            dims.push((op.out_size(h)?, op.out_size(w)?, op.out_channels));
        }
        Ok(dims)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    fn taps(&self, input_hw: (usize, usize)) -> Result<Vec<Taps>> {
        let mut hw = input_hw;
        let mut taps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let t = Taps::new(&layer.spec.op(), hw)?;
            hw = t.out_hw;
            taps.push(t);
        }
        Ok(taps)
    }

    pub fn forward(&self, input: &SpikeTensor) -> Result<(SpikeTensor, ForwardTrace)> {
        let trace = self.forward_with(input, ForwardOptions::default())?;
        Ok((trace.output(), trace))
    }

    pub fn forward_with(&self, input: &SpikeTensor, opts: ForwardOptions) -> Result<ForwardTrace> {
        let d = input.dims();
        if d.channels != self.layers[0].spec.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, network expects {}",
                d.channels, self.layers[0].spec.in_channels
            )));
        }
        let taps = self.taps((d.height, d.width))?;
        let out_hw = taps.last().unwrap().out_hw;
        if out_hw != (d.height, d.width) {
            return Err(Error::Shape(format!(
                "input {}x{} maps to output {}x{}",
                d.height, d.width, out_hw.0, out_hw.1
            )));
        }
        let steps = d.steps;
        let mut dims = vec![d];
        let mut spikes = vec![input.to_values()];
        let mut psp = Vec::with_capacity(self.layers.len());
        let mut membrane = Vec::with_capacity(self.layers.len());

        for (l, (layer, taps)) in self.layers.iter().zip(&taps).enumerate() {
            let op = layer.spec.op();
            let srm = &layer.spec.srm;
            let in_dims = dims[l];
            let out_dims = Dims::new(op.out_channels, taps.out_hw.0, taps.out_hw.1, steps);
            let (in_frame, out_frame) = (in_dims.frame_len(), out_dims.frame_len());

            let a = causal_filter(&spikes[l], in_frame, steps, &layer.kernels.eps, false);
            let mut u = vec![0.0; out_frame * steps];
            let mut s = vec![0.0; out_frame * steps];
            let nu = &layer.kernels.nu;
            for k in 0..steps {
                let (done, rest) = s.split_at_mut(k * out_frame);
                let uk = &mut u[k * out_frame..(k + 1) * out_frame];
                conv::forward(
                    &op,
                    taps,
                    &layer.weights,
                    &a[k * in_frame..(k + 1) * in_frame],
                    uk,
                    opts.sparse,
                );
                // refractory response to this layer's own earlier spikes
                for m in 1..nu.len().min(k + 1) {
                    let past = &done[(k - m) * out_frame..(k - m + 1) * out_frame];
                    let c = nu[m];
                    for (u, &sp) in uk.iter_mut().zip(past) {
                        *u += c * sp;
                    }
                }
                let sk = &mut rest[..out_frame];
                for (sp, &u) in sk.iter_mut().zip(uk.iter()) {
                    if !u.is_finite() {
                        return Err(Error::NonFinite { layer: l + 1, step: k });
                    }
                    *sp = match opts.mode {
                        SpikeMode::Binary => spike_function(u, srm.theta) as f64,
                        SpikeMode::Relaxed => relaxed_spike(u, srm),
                    };
                }
            }
            psp.push(a);
            membrane.push(u);
            spikes.push(s);
            dims.push(out_dims);
        }
        Ok(ForwardTrace {
            dims,
            spikes,
            psp,
            membrane,
            mode: opts.mode,
            generation: self.step_count,
            bin_width_us: input.bin_width_us(),
        })
    }

    /// Gradients of a loss with respect to every weight, given `dL/ds` of the
    /// output spikes (same `[k][y][x][c]` layout as the output).
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<Gradients> {
        if trace.generation != self.step_count {
            return Err(Error::StaleTrace(format!(
                "trace from optimizer step {}, network at step {}",
                trace.generation, self.step_count
            )));
        }
        if trace.dims.len() != self.layers.len() + 1 {
            return Err(Error::StaleTrace(format!(
                "trace has {} layers, network {}",
                trace.dims.len() - 1,
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let d = trace.dims[l + 1];
            if d.channels != layer.spec.out_channels {
                return Err(Error::StaleTrace(format!("layer {} channel mismatch", l + 1)));
            }
        }
        let out_dims = trace.output_dims();
        if output_grad.len() != out_dims.len() {
            return Err(Error::Shape(format!(
                "output gradient has {} values, output has {}",
                output_grad.len(),
                out_dims.len()
            )));
        }
        let d0 = trace.dims[0];
        let taps = self.taps((d0.height, d0.width))?;
        let steps = d0.steps;

        let mut grads = Gradients::zeros_like(self);
        let mut grad_s = output_grad.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let op = layer.spec.op();
            let srm = &layer.spec.srm;
            let nu = &layer.kernels.nu;
            let out_frame = trace.dims[l + 1].frame_len();
            let in_frame = trace.dims[l].frame_len();
            let u = &trace.membrane[l];

            // dL/du, walking time backwards so later refractory terms are known
            let mut grad_u = vec![0.0; out_frame * steps];
            for k in (0..steps).rev() {
                let (head, later) = grad_u.split_at_mut((k + 1) * out_frame);
                let gk = &mut head[k * out_frame..];
                gk.copy_from_slice(&grad_s[k * out_frame..(k + 1) * out_frame]);
                for m in 1..nu.len().min(steps - k) {
                    let src = &later[(m - 1) * out_frame..m * out_frame];
                    let c = nu[m];
                    for (g, &s) in gk.iter_mut().zip(src) {
                        *g += c * s;
                    }
                }
                for (g, &uk) in gk.iter_mut().zip(&u[k * out_frame..(k + 1) * out_frame]) {
                    *g *= surrogate_grad(uk, srm);
                }
            }

            let a = &trace.psp[l];
            for k in 0..steps {
                let gk = &grad_u[k * out_frame..(k + 1) * out_frame];
                if gk.iter().all(|&g| g == 0.0) {
                    continue;
                }
                conv::accumulate_weight_grad(
                    &op,
                    &taps[l],
                    &a[k * in_frame..(k + 1) * in_frame],
                    gk,
                    &mut grads.layers[l],
                );
            }

            if l > 0 {
                let mut grad_a = vec![0.0; in_frame * steps];
                for k in 0..steps {
                    let gk = &grad_u[k * out_frame..(k + 1) * out_frame];
                    if gk.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    conv::backward_input(
                        &op,
                        &taps[l],
                        &layer.weights,
                        gk,
                        &mut grad_a[k * in_frame..(k + 1) * in_frame],
                    );
                }
                grad_s = causal_filter_adjoint(&grad_a, in_frame, steps, &layer.kernels.eps);
            }
        }
        Ok(grads)
    }

    /// One Adam update. Fails without touching any state if a gradient, or a
    /// resulting weight, is non-finite.
    pub fn step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient layer count mismatch".into()));
        }
        for (l, (g, layer)) in grads.layers.iter().zip(&self.layers).enumerate() {
            if g.len() != layer.weights.len() {
                return Err(Error::Shape(format!("gradient size mismatch in layer {}", l + 1)));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: l + 1 });
            }
        }
        let t = self.step_count + 1;
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        let mut updated = Vec::with_capacity(self.layers.len());
        for (l, (g, layer)) in grads.layers.iter().zip(&self.layers).enumerate() {
            let n = g.len();
            let (mut w, mut m, mut v) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for i in 0..n {
                m[i] = cfg.beta1 * layer.m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * layer.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] = layer.weights[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: l + 1 });
            }
            updated.push((w, m, v));
        }
        for (layer, (w, m, v)) in self.layers.iter_mut().zip(updated) {
            layer.weights = w;
            layer.m = m;
            layer.v = v;
        }
        self.step_count = t;
        Ok(())
    }

    /// Forward passes over a batch, in parallel, results in input order.
    pub fn forward_batch(&self, inputs: &[SpikeTensor], opts: ForwardOptions) -> Result<Vec<ForwardTrace>> {
        inputs.par_iter().map(|x| self.forward_with(x, opts)).collect()
    }

    /// Weights in `[out][in][ky][kx]` order for one layer.
    pub fn weights_oihw(&self, layer: usize) -> Vec<f64> {
        let l = &self.layers[layer];
        conv::to_oihw(&l.spec.op(), &l.weights)
    }

    pub fn set_weights_oihw(&mut self, layer: usize, oihw: &[f64]) -> Result<()> {
        let l = &mut self.layers[layer];
        if oihw.len() != l.weights.len() {
            return Err(Error::Shape(format!(
                "layer {} expects {} weights, got {}",
                layer + 1,
                l.weights.len(),
                oihw.len()
            )));
        }
        l.weights = conv::from_oihw(&l.spec.op(), oihw);
        Ok(())
    }

    pub(crate) fn rebuild_layer(spec: LayerSpec, weights: Vec<f64>, m: Vec<f64>, v: Vec<f64>) -> Result<Layer> {
        let mut layer = Layer::new(spec)?;
        if weights.len() != layer.weights.len() || m.len() != weights.len() || v.len() != weights.len() {
            return Err(Error::Checkpoint("weight table size mismatch".into()));
        }
        layer.weights = weights;
        layer.m = m;
        layer.v = v;
        Ok(layer)
    }
}
