//! Independent oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikeseg::conv::{self, OpKind, SpatialOp, Taps};
use spikeseg::event::{Dims, SpikeTensor};
use spikeseg::loss::{total_loss_values, GroundTruth, LossConfig};
use spikeseg::net::{ForwardOptions, LayerSpec, Network, SpikeMode};
use spikeseg::srm::SrmParams;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Step-by-step SRM neuron written straight from the kernel formulas, with
/// no shared code beyond the parameter struct.
pub fn brute_force_neuron(inputs: &[Vec<u8>], weights: &[f64], p: &SrmParams) -> (Vec<u8>, Vec<f64>) {
    let steps = inputs[0].len();
    let horizon = (5.0 * p.tau_s.max(p.tau_r) / p.sim_step_ms).ceil() as usize;
    let eps = |m: usize| {
        let t = m as f64 * p.sim_step_ms;
        t / p.tau_s * (1.0 - t / p.tau_s).exp()
    };
    let nu = |m: usize| {
        let t = m as f64 * p.sim_step_ms;
        -2.0 * p.theta * (1.0 - t / p.tau_r).exp()
    };
    let mut out = vec![0u8; steps];
    let mut u = vec![0.0; steps];
    for k in 0..steps {
        let mut drive = 0.0;
        for (train, &w) in inputs.iter().zip(weights) {
            let mut psp = 0.0;
            for m in 0..horizon.min(k + 1) {
                if train[k - m] == 1 {
                    psp += eps(m);
                }
            }
            drive += w * psp;
        }
        let mut refr = 0.0;
        for m in 1..horizon.min(k + 1) {
            if out[k - m] == 1 {
                refr += nu(m);
            }
        }
        u[k] = drive + refr;
        out[k] = u8::from(u[k] >= p.theta);
    }
    (out, u)
}

pub fn random_spikes(rng: &mut ChaCha8Rng, dims: Dims, density: f64) -> SpikeTensor {
    let data = (0..dims.len()).map(|_| u8::from(rng.gen_bool(density))).collect();
    SpikeTensor::from_data(dims, 1000, data).unwrap()
}

/// Random ground truth whose foreground spikes are a subset of `input`
/// inside a random mask.
pub fn random_gt(rng: &mut ChaCha8Rng, input: &SpikeTensor) -> GroundTruth {
    let d = input.dims();
    let mask: Vec<bool> = (0..d.pixels()).map(|_| rng.gen_bool(0.4)).collect();
    let mut fg = SpikeTensor::zeros(d, input.bin_width_us());
    for k in 0..d.steps {
        for y in 0..d.height {
            for x in 0..d.width {
                for c in 0..d.channels {
                    if mask[y * d.width + x] && input.get(c, y, x, k) {
                        fg.set(c, y, x, k, true);
                    }
                }
            }
        }
    }
    GroundTruth::new(mask, fg).unwrap()
}

pub fn toy_network(seed: u64) -> Network {
    // A softer surrogate than the default keeps most gradients well above
    // the round-off floor of central differences at h = 1e-4.
    let srm = SrmParams {
        surrogate_beta: 2.0,
        ..SrmParams::default()
    };
    let specs = vec![LayerSpec::conv(2, 4, srm), LayerSpec::transposed(4, 2, srm)];
    let mut net = Network::new(specs, (8, 8), 10).unwrap();
    net.init_weights(seed, 1.0);
    // scale so membranes reach the steep part of the relaxed spike
    for layer in net.layers.iter_mut() {
        for w in layer.weights.iter_mut() {
            *w *= 8.0;
        }
    }
    net
}

pub fn relaxed_loss(net: &Network, input: &SpikeTensor, gt: &GroundTruth, cfg: &LossConfig) -> f64 {
    let opts = ForwardOptions {
        mode: SpikeMode::Relaxed,
        sparse: false,
    };
    let t = net.forward_with(input, opts).unwrap();
    total_loss_values(t.output_values(), t.output_dims(), 1.0, gt, cfg).unwrap().value
}

pub struct GradCheck {
    pub total: usize,
    pub within: usize,
    pub worst: f64,
    pub nonzero: usize,
}

/// Analytic BPTT gradients against central differences of the total loss on
/// the relaxed two-layer toy network. Relative error uses a 1e-8 floor in
/// the denominator so that exactly-zero gradients compare cleanly.
pub fn gradient_check(seed: u64, h: f64, tol: f64) -> GradCheck {
    let mut r = rng(seed);
    let mut net = toy_network(seed);
    let input = random_spikes(&mut r, Dims::new(2, 8, 8, 10), 0.25);
    let gt = random_gt(&mut r, &input);
    let cfg = LossConfig::default();
    let opts = ForwardOptions {
        mode: SpikeMode::Relaxed,
        sparse: false,
    };
    let trace = net.forward_with(&input, opts).unwrap();
    let l = total_loss_values(trace.output_values(), trace.output_dims(), 1.0, &gt, &cfg).unwrap();
    let grads = net.backward(&trace, &l.grad).unwrap();
    let mut check = GradCheck {
        total: 0,
        within: 0,
        worst: 0.0,
        nonzero: 0,
    };
    for li in 0..net.layers.len() {
        for i in 0..net.layers[li].weights.len() {
            let w0 = net.layers[li].weights[i];
            net.layers[li].weights[i] = w0 + h;
            let up = relaxed_loss(&net, &input, &gt, &cfg);
            net.layers[li].weights[i] = w0 - h;
            let down = relaxed_loss(&net, &input, &gt, &cfg);
            net.layers[li].weights[i] = w0;
            let fd = (up - down) / (2.0 * h);
            let an = grads.layers[li][i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
            check.total += 1;
            check.nonzero += usize::from(an.abs() > 1e-8);
            check.within += usize::from(rel <= tol);
            check.worst = check.worst.max(rel);
        }
    }
    check
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Largest relative violation of `<op(x), y> = <x, op^T(y)>` and of the
/// matching weight identity over `pairs` random cases, split between
/// convolutions and transposed convolutions of random shapes.
pub fn adjoint_check(seed: u64, pairs: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for case in 0..pairs {
        let kind = if case % 2 == 0 { OpKind::Conv } else { OpKind::TransposedConv };
        let op = SpatialOp {
            kind,
            in_channels: r.gen_range(1..5),
            out_channels: r.gen_range(1..5),
            kernel: 3,
            stride: r.gen_range(1..3),
            padding: 1,
            output_padding: if kind == OpKind::TransposedConv { 1 } else { 0 },
        };
        let op = if op.stride == 1 {
            SpatialOp { output_padding: 0, ..op }
        } else {
            op
        };
        let hw = (r.gen_range(2..9), r.gen_range(2..9));
        let taps = Taps::new(&op, hw).unwrap();
        let nx = hw.0 * hw.1 * op.in_channels;
        let ny = taps.out_hw.0 * taps.out_hw.1 * op.out_channels;
        let w = random_vec(&mut r, op.weight_len());
        let x = random_vec(&mut r, nx);
        let y = random_vec(&mut r, ny);
        let mut ax = vec![0.0; ny];
        conv::forward(&op, &taps, &w, &x, &mut ax, false);
        let mut aty = vec![0.0; nx];
        conv::backward_input(&op, &taps, &w, &y, &mut aty);
        let (lhs, rhs) = (dot(&ax, &y), dot(&x, &aty));
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
        let mut gw = vec![0.0; w.len()];
        conv::accumulate_weight_grad(&op, &taps, &x, &y, &mut gw);
        let rhs_w = dot(&w, &gw);
        worst = worst.max((lhs - rhs_w).abs() / lhs.abs().max(rhs_w.abs()).max(1.0));
    }
    worst
}
