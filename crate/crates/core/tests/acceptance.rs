//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! Criteria 1-5 and 9 are exact or numerical checks that finish in seconds.
//! Criteria 6-8 train the network three times on the default synthetic
//! dataset (full loss, cross-entropy only, spike loss only) and evaluate the
//! full-loss model; on one CPU this takes roughly a quarter of an hour.
//! Criterion 10 reruns every command on a small dataset, once per thread
//! count, and byte-compares the outputs.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use spikeseg::config::RunConfig;
use spikeseg::datagen::{write_dataset, DatasetConfig, ObjectSpec, SceneConfig};
use spikeseg::event::{Dims, SpikeTensor};
use spikeseg::harness::{self, EvalSummary, TrainOutcome};
use spikeseg::metrics::{count_synaptic_ops, energy_benefit, EnergyModel};
use spikeseg::net::{LayerSpec, Network};
use spikeseg::srm::{eps_kernel, ref_kernel, simulate_neuron, SrmParams};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn kernel_exactness() -> Verdict {
    let mut r = common::rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let tau_s: f64 = r.gen_range(0.2..20.0);
        let tau_r: f64 = r.gen_range(0.2..20.0);
        let theta: f64 = r.gen_range(0.1..10.0);
        let t: f64 = r.gen_range(0.0..100.0);
        let eps = t / tau_s * (1.0 - t / tau_s).exp();
        let nu = -2.0 * theta * (1.0 - t / tau_r).exp();
        let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
        worst = worst.max(rel(eps_kernel(t, tau_s).unwrap(), eps));
        worst = worst.max(rel(ref_kernel(t, tau_r, theta).unwrap(), nu));
    }
    let p = SrmParams::default();
    let peak = eps_kernel(p.tau_s, p.tau_s).unwrap();
    let at_tau_r = ref_kernel(p.tau_r, p.tau_r, p.theta).unwrap();
    let pass = worst <= 1e-12 && peak == 1.0 && at_tau_r == -2.0 * p.theta;
    verdict(pass, format!("max rel err {worst:.1e}, eps(tau_s) = {peak}, nu(tau_r) = {at_tau_r}"))
}

fn neuron_oracle() -> Verdict {
    let p = SrmParams::default();
    let mut r = common::rng(102);
    let (mut spikes_equal, mut worst) = (0, 0.0f64);
    for _ in 0..200 {
        let density = r.gen_range(0.05..0.6);
        let inputs: Vec<Vec<u8>> = (0..4)
            .map(|_| (0..20).map(|_| u8::from(r.gen_bool(density))).collect())
            .collect();
        let weights: Vec<f64> = (0..4).map(|_| r.gen_range(-4.0..12.0)).collect();
        let got = simulate_neuron(&inputs, &weights, &p).unwrap();
        let (spikes, membrane) = common::brute_force_neuron(&inputs, &weights, &p);
        spikes_equal += usize::from(got.spikes == spikes);
        for (a, b) in got.membrane.iter().zip(&membrane) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        spikes_equal == 200 && worst <= 1e-10,
        format!("{spikes_equal}/200 identical spike trains, max membrane diff {worst:.1e}"),
    )
}

fn gradient_check() -> Verdict {
    let c = common::gradient_check(1, 1e-4, 1e-3);
    let frac = c.within as f64 / c.total as f64;
    verdict(
        frac >= 0.99,
        format!("{}/{} weights within 1e-3 ({:.1}%), worst {:.1e}", c.within, c.total, 100.0 * frac, c.worst),
    )
}

fn adjointness() -> Verdict {
    let worst = common::adjoint_check(103, 50);
    verdict(worst <= 1e-10, format!("50 pairs, max relative violation {worst:.1e}"))
}

fn shape_contract() -> Verdict {
    let net = Network::encoder_decoder(SrmParams::default(), (64, 64), 10, 1, 6.0).unwrap();
    let dims = net.layer_dims((64, 64)).unwrap();
    let channels: Vec<usize> = dims.iter().map(|d| d.2).collect();
    let spatial: Vec<usize> = dims.iter().map(|d| d.0).collect();
    let mut r = common::rng(104);
    let input = common::random_spikes(&mut r, Dims::new(2, 64, 64, 10), 0.05);
    let trace = net.forward_with(&input, Default::default()).unwrap();
    let seen: Vec<(usize, usize, usize)> = trace.dims.iter().map(|d| (d.channels, d.height, d.steps)).collect();
    let expected: Vec<(usize, usize, usize)> = channels.iter().zip(&spatial).map(|(&c, &s)| (c, s, 10)).collect();
    let pass = channels == [2, 16, 32, 64, 32, 16, 2]
        && spatial == [64, 32, 16, 8, 16, 32, 64]
        && dims.iter().all(|d| d.0 == d.1)
        && seen == expected
        && trace.output_dims() == Dims::new(2, 64, 64, 10);
    verdict(pass, format!("channels {channels:?}, spatial {spatial:?}"))
}

fn cost_examples() -> Verdict {
    let spec = LayerSpec {
        stride: 1,
        ..LayerSpec::conv(2, 16, SrmParams::default())
    };
    let mut net = Network::new(vec![spec], (8, 8), 4).unwrap();
    net.init_weights(0, 0.0);
    let ops = |spikes: &[(usize, usize, usize, usize)]| {
        let mut x = SpikeTensor::zeros(Dims::new(2, 8, 8, 4), 1000);
        for &(c, y, xx, k) in spikes {
            x.set(c, y, xx, k, true);
        }
        count_synaptic_ops(&net, &net.forward(&x).unwrap().1).unwrap()
    };
    let zero = ops(&[]);
    let one = ops(&[(0, 3, 4, 1)]);
    let two = ops(&[(0, 3, 4, 1), (1, 5, 2, 3)]);
    let b = energy_benefit(1000.0, 100.0, &EnergyModel::default()).unwrap();
    let pass = zero == 0 && one == 144 && two == 2 * one && (b - 10.0 * 4.6 / 0.9).abs() <= 1e-9 && (b - 51.1).abs() < 0.05;
    verdict(pass, format!("ops {zero}/{one}/{two}, 10x ratio benefit {b:.4}"))
}

fn desk_config(root: &Path) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.paths.data_dir = root.join("data");
    cfg.eval.write_masks = false;
    cfg
}

struct Arm {
    outcome: TrainOutcome,
    summary: Vec<EvalSummary>,
    seconds: f64,
}

fn run_arm(cfg: &RunConfig, out: PathBuf) -> Arm {
    let mut cfg = cfg.clone();
    cfg.paths.out_dir = out;
    let start = Instant::now();
    let outcome = harness::cmd_train(&cfg).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let summary = harness::cmd_eval(&cfg).unwrap();
    Arm {
        outcome,
        summary,
        seconds,
    }
}

fn iou_at(arm: &Arm, window_ms: u64) -> (f64, usize) {
    let s = arm.summary.iter().find(|s| s.window_ms == window_ms).unwrap();
    (s.iou_mean, s.windows)
}

struct DeskResults {
    verdicts: [Verdict; 4],
}

fn desk_scale(root: &Path) -> DeskResults {
    let cfg = desk_config(root);
    let manifest = write_dataset(&DatasetConfig::default(), cfg.seed, &cfg.paths.data_dir).unwrap();
    let threads = rayon::current_num_threads() as f64;

    let full = run_arm(&cfg, root.join("full"));
    let mut bce_cfg = cfg.clone();
    bce_cfg.loss.lambda = 0.0;
    let bce = run_arm(&bce_cfg, root.join("bce"));
    let mut spike_cfg = cfg.clone();
    spike_cfg.loss.bce_weight = 0.0;
    spike_cfg.loss.lambda = 1.0;
    let spike = run_arm(&spike_cfg, root.join("spike"));

    let (f10, n_val) = iou_at(&full, 10);
    let (b10, _) = iou_at(&bce, 10);
    let (s10, _) = iou_at(&spike, 10);
    let train_windows: usize = manifest
        .sequences
        .iter()
        .filter(|s| s.split == spikeseg::datagen::Split::Train)
        .map(|s| s.windows)
        .sum();
    let cpu_minutes = full.seconds * threads / 60.0;
    let c6 = verdict(
        f10 >= 70.0 && f10 >= b10 && b10 >= s10 && cpu_minutes <= 30.0 && n_val == 50 && train_windows == 200,
        format!(
            "IoU bce+spike {f10:.2} / bce {b10:.2} / spike {s10:.2} on {n_val} windows \
             ({train_windows} train), training <= {cpu_minutes:.1} CPU-min (best epoch val IoU {:.2})",
            full.outcome.best_val_iou
        ),
    );

    let mut inc_cfg = cfg.clone();
    inc_cfg.paths.out_dir = root.join("full");
    let rows = harness::cmd_incremental(&inc_cfg).unwrap();
    let raw: BTreeMap<u64, f64> = rows.iter().map(|r| (r.prefix_ms, r.raw_iou)).collect();
    let filtered: BTreeMap<u64, f64> = rows.iter().map(|r| (r.prefix_ms, r.kalman_iou)).collect();
    let mut running_max = f64::NEG_INFINITY;
    let mut worst_dip: f64 = 0.0;
    for l in 1..=10 {
        let v = raw[&l];
        worst_dip = worst_dip.max(running_max - v);
        running_max = running_max.max(v);
    }
    let c7 = verdict(
        worst_dip <= 2.0 && filtered[&3] >= 0.5 * raw[&10],
        format!(
            "raw IoU 1..10 ms {:?}, largest dip {worst_dip:.2}; filtered at 3 ms {:.2} vs raw at 10 ms {:.2}",
            raw.values().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
            filtered[&3],
            raw[&10]
        ),
    );

    let (f20, n20) = iou_at(&full, 20);
    let c8 = verdict(
        f10 - f20 <= 15.0,
        format!("IoU {f10:.2} at 10 ms, {f20:.2} at 20 ms ({n20} windows), drop {:.2}", f10 - f20),
    );

    let cost = harness::cmd_cost(&inc_cfg).unwrap();
    let examples = cost_examples();
    let benefit = cost.energy_benefit.unwrap_or(0.0);
    let c9 = verdict(
        examples.pass && benefit > 1.0 && cost.spike_density < 0.1,
        format!(
            "{}; synthetic benefit {benefit:.1}x at spike density {:.4}",
            examples.detail, cost.spike_density
        ),
    );
    DeskResults {
        verdicts: [c6, c7, c8, c9],
    }
}

fn small_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 9;
    cfg.dataset.scene = SceneConfig {
        width: 32,
        height: 32,
        duration_ms: 60,
        objects: vec![ObjectSpec {
            size_px: 10.0,
            start: [10.0, 12.0],
            ..ObjectSpec::default()
        }],
        ..SceneConfig::default()
    };
    cfg.dataset.val_duration_ms = 30;
    cfg.paths.data_dir = root.join("data");
    cfg.paths.out_dir = root.join("out");
    cfg.train.epochs = 2;
    cfg.train.batch_size = 3;
    cfg.eval.windows_ms = vec![5, 10, 20];
    cfg.eval.prefixes_ms = vec![1, 3, 10];
    cfg
}

fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_all_commands(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let cfg = small_config(root);
    let mut gen = cfg.clone();
    gen.paths.out_dir = cfg.paths.data_dir.clone();
    harness::cmd_datagen(&gen).unwrap();
    harness::cmd_train(&cfg).unwrap();
    harness::cmd_eval(&cfg).unwrap();
    harness::cmd_incremental(&cfg).unwrap();
    harness::cmd_cost(&cfg).unwrap();
    harness::cmd_validate(&cfg).unwrap();
    tree_bytes(root)
}

fn determinism(root: &Path) -> Verdict {
    let reference = run_all_commands(&root.join("a"));
    let mut mismatches = Vec::new();
    for threads in [1, 2, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let got = pool.install(|| run_all_commands(&root.join(format!("t{threads}"))));
        if got != reference {
            mismatches.push(threads);
        }
    }
    let csvs = reference.keys().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
    verdict(
        mismatches.is_empty(),
        format!(
            "{} files ({csvs} CSV, checkpoint, dataset, masks) identical across reruns with 1/2/4 threads{}",
            reference.len(),
            if mismatches.is_empty() { String::new() } else { format!("; differs at {mismatches:?} threads") }
        ),
    )
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().unwrap();
    let mut all = true;
    let mut line = |n: usize, name: &str, v: Verdict| {
        all &= v.pass;
        println!("criterion {n:>2} {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    line(1, "kernel exactness", kernel_exactness());
    line(2, "neuron oracle", neuron_oracle());
    line(3, "gradient check", gradient_check());
    line(4, "adjointness", adjointness());
    line(5, "shape contract", shape_contract());
    let desk = desk_scale(&root.path().join("desk"));
    let [c6, c7, c8, c9] = desk.verdicts;
    line(6, "desk-scale learning", c6);
    line(7, "incremental trend", c7);
    line(8, "temporal generalisation", c8);
    line(9, "cost accounting", c9);
    line(10, "determinism", determinism(&root.path().join("det")));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
