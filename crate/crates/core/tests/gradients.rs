mod common;

use spikeseg::event::Dims;
use spikeseg::loss::LossConfig;
use spikeseg::net::{ForwardOptions, SpikeMode};

#[test]
fn bptt_matches_finite_differences() {
    for seed in [1, 2] {
        let c = common::gradient_check(seed, 1e-4, 1e-3);
        assert!(c.nonzero * 2 >= c.total, "seed {seed}: only {}/{} gradients are non-zero", c.nonzero, c.total);
        let frac = c.within as f64 / c.total as f64;
        assert!(frac >= 0.99, "seed {seed}: {:.4} within tolerance, worst {:.3e}", frac, c.worst);
    }
}

#[test]
fn spatial_ops_are_adjoint() {
    let worst = common::adjoint_check(5, 50);
    assert!(worst < 1e-10, "worst relative violation {worst:e}");
}

#[test]
fn sparse_forward_equals_dense_forward() {
    let mut r = common::rng(9);
    let net = common::toy_network(9);
    let input = common::random_spikes(&mut r, Dims::new(2, 8, 8, 10), 0.1);
    for mode in [SpikeMode::Binary, SpikeMode::Relaxed] {
        let dense = net.forward_with(&input, ForwardOptions { mode, sparse: false }).unwrap();
        let sparse = net.forward_with(&input, ForwardOptions { mode, sparse: true }).unwrap();
        for (a, b) in dense.membrane.iter().zip(&sparse.membrane) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert_eq!(dense.spikes, sparse.spikes);
    }
}

#[test]
fn zero_output_gradient_gives_zero_weight_gradient() {
    let mut r = common::rng(3);
    let net = common::toy_network(3);
    let input = common::random_spikes(&mut r, Dims::new(2, 8, 8, 10), 0.2);
    let (_, trace) = net.forward(&input).unwrap();
    let g = net.backward(&trace, &vec![0.0; trace.output_values().len()]).unwrap();
    assert!(g.is_zero());
}

#[test]
fn relaxed_loss_is_finite() {
    let mut r = common::rng(4);
    let net = common::toy_network(4);
    let input = common::random_spikes(&mut r, Dims::new(2, 8, 8, 10), 0.2);
    let gt = common::random_gt(&mut r, &input);
    let v = common::relaxed_loss(&net, &input, &gt, &LossConfig::default());
    assert!(v.is_finite() && v > 0.0);
}
