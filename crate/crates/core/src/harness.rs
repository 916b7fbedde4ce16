//! Command implementations: dataset generation, training, evaluation,
//! incremental-prediction sweeps, cost reports and validation.
//!
//! Every command is deterministic for a fixed configuration and seed: work
//! is spread over threads per window, but results are gathered in window
//! order and reduced sequentially.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::datagen::{read_manifest, swept_mask, write_dataset, Manifest, SceneConfig, Split};
use crate::error::{Error, Result};
use crate::event::{discretize, EventStream, SpikeTensor};
use crate::io::{load_events, write_pgm, EventFormat};
use crate::kalman::PixelFilterBank;
use crate::loss::{total_loss_values, GroundTruth};
use crate::metrics::{
    ann_ops_equiv, count_synaptic_ops, detection_rate, energy_benefit, iou, iou_on_support, mean_std, CostReport,
    SegMask,
};
use crate::net::{Gradients, LayerSpec, Network};

/// One recorded sequence of the dataset.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub split: Split,
    pub stream: EventStream,
    pub scene: SceneConfig,
}

pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<Sequence>)> {
    let manifest = read_manifest(dir)?;
    let mut out = Vec::new();
    for entry in &manifest.sequences {
        let path = dir.join(&entry.events_file);
        let stream = load_events(&path, EventFormat::from_path(&path))?;
        out.push(Sequence {
            name: entry.name.clone(),
            split: entry.split,
            stream,
            scene: entry.scene.clone(),
        });
    }
    Ok((manifest, out))
}

/// One evaluation or training window.
#[derive(Debug, Clone)]
pub struct Sample {
    pub sequence: String,
    pub window: usize,
    /// Input spikes: the first `prefix` of the window, zero-padded to the
    /// full window length plus the drain.
    pub input: SpikeTensor,
    pub gt: GroundTruth,
    /// Pixels that received at least one input event.
    pub support: SegMask,
}

/// Consecutive windows of `window_ms` (a trailing partial window is
/// dropped), each fed only its first `prefix_ms` of events and followed by
/// `drain_steps` silent bins. Ground truth covers the prefix.
pub fn make_samples(seq: &Sequence, window_ms: u64, prefix_ms: u64, bin_us: u64, drain_steps: usize) -> Result<Vec<Sample>> {
    let s = &seq.stream;
    let (w, h) = (s.width as usize, s.height as usize);
    let width_us = window_ms * 1000;
    let prefix_us = prefix_ms.min(window_ms) * 1000;
    let count = (s.duration_us() / width_us) as usize;
    (0..count)
        .map(|k| {
            let t0 = s.t_start + k as u64 * width_us;
            let mut win = s.slice(t0, t0 + prefix_us);
            win.t_end = t0 + width_us;
            let input = discretize(&win, bin_us, (w, h))?.extended(drain_steps);
            let mask = swept_mask(&seq.scene, t0 - s.t_start, t0 - s.t_start + prefix_us);
            let gt = GroundTruth::from_window(&win, bin_us, Some(mask.pixels))?;
            let gt = GroundTruth::new(gt.mask, gt.fg_spikes.extended(drain_steps))?;
            let mut support = SegMask::empty(h, w);
            for e in &win.events {
                support.pixels[e.y as usize * w + e.x as usize] = true;
            }
            Ok(Sample {
                sequence: seq.name.clone(),
                window: k,
                input,
                gt,
                support,
            })
        })
        .collect()
}

pub fn split_samples(seqs: &[Sequence], split: Split, window_ms: u64, prefix_ms: u64, bin_us: u64, drain_steps: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for seq in seqs.iter().filter(|s| s.split == split) {
        out.extend(make_samples(seq, window_ms, prefix_ms, bin_us, drain_steps)?);
    }
    Ok(out)
}

/// Per-window evaluation result.
#[derive(Debug, Clone)]
pub struct WindowEval {
    pub pred: SegMask,
    /// Per-pixel output spike count.
    pub counts: Vec<f64>,
    /// Event-sparse IoU.
    pub iou: f64,
    pub iou_full: f64,
    /// `None` when the window holds no ground-truth object.
    pub dr: Option<f64>,
    pub ops: u64,
    pub density: f64,
}

fn gt_mask(sample: &Sample) -> SegMask {
    let d = sample.gt.dims();
    SegMask {
        height: d.height,
        width: d.width,
        pixels: sample.gt.mask.clone(),
    }
}

pub fn score_mask(pred: &SegMask, sample: &Sample) -> Result<(f64, f64, Option<f64>)> {
    let gt = gt_mask(sample);
    let sparse = iou_on_support(pred, &gt, &sample.support)?;
    let full = iou(pred, &gt)?;
    let objects = gt.components();
    let dr = if objects.is_empty() {
        None
    } else {
        Some(detection_rate(&[(pred.clone(), objects)])?)
    };
    Ok((sparse, full, dr))
}

pub fn evaluate(net: &Network, samples: &[Sample]) -> Result<Vec<WindowEval>> {
    samples
        .par_iter()
        .map(|s| {
            let (out, trace) = net.forward(&s.input)?;
            let pred = SegMask::from_spikes(&out);
            let counts = crate::event::project(&out).counts.iter().map(|&c| f64::from(c)).collect();
            let (iou, iou_full, dr) = score_mask(&pred, s)?;
            let ops = count_synaptic_ops(net, &trace)?;
            let dens = trace.layer_densities();
            let density = dens.iter().sum::<f64>() / dens.len() as f64;
            Ok(WindowEval {
                pred,
                counts,
                iou,
                iou_full,
                dr,
                ops,
                density,
            })
        })
        .collect()
}

pub fn mean_iou(results: &[WindowEval]) -> f64 {
    mean_std(&results.iter().map(|r| r.iou).collect::<Vec<_>>()).map_or(0.0, |m| m.0)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(format!("{other:?}")),
        },
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Build the configured network for frames of `input_hw`.
pub fn build_network(cfg: &RunConfig, input_hw: (usize, usize)) -> Result<Network> {
    let mut specs = LayerSpec::encoder_decoder(cfg.srm());
    for s in specs.iter_mut() {
        s.delay_steps = cfg.network.delay_steps;
    }
    let mut net = Network::new(specs, input_hw, cfg.sim_steps_for(cfg.train.window_ms))?;
    net.init_weights(cfg.seed, cfg.train.init_gain);
    Ok(net)
}

fn ensure_frame_divisible(hw: (usize, usize)) -> Result<()> {
    if hw.0 % 8 != 0 || hw.1 % 8 != 0 {
        return Err(Error::Shape(format!(
            "frames of {}x{} must be multiples of 8 for the three stride-2 stages",
            hw.0, hw.1
        )));
    }
    Ok(())
}

fn load_run_dataset(cfg: &RunConfig) -> Result<Vec<Sequence>> {
    let (_, seqs) = load_dataset(&cfg.paths.data_dir)?;
    if seqs.is_empty() {
        return Err(Error::Config(format!("dataset {} has no sequences", cfg.paths.data_dir.display())));
    }
    Ok(seqs)
}

fn frame_hw(seqs: &[Sequence]) -> (usize, usize) {
    (seqs[0].stream.height as usize, seqs[0].stream.width as usize)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub bce: f64,
    pub spike: f64,
    pub spike_density: f64,
    pub val_iou: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Network,
    pub last: Network,
    pub log: Vec<EpochLog>,
    pub best_val_iou: f64,
}

/// Mini-batch Adam over `train`, selecting the parameters with the highest
/// event-sparse IoU on `val` (evaluated before the first and after every epoch).
pub fn train_network(cfg: &RunConfig, mut net: Network, train: &[Sample], val: &[Sample]) -> Result<TrainOutcome> {
    let adam = cfg.train.adam();
    let step_ms = cfg.train.sim_step_ms;
    let mut best = net.clone();
    let mut best_val = mean_iou(&evaluate(&net, val)?);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.train.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut bce_sum, mut spike_sum, mut dens_sum) = (0.0, 0.0, 0.0, 0.0);
        for (b, batch) in order.chunks(cfg.train.batch_size).enumerate() {
            let items: Vec<Result<(Gradients, f64, f64, f64, f64)>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train[i];
                    let trace = net.forward_with(&s.input, Default::default())?;
                    let l = total_loss_values(trace.output_values(), trace.output_dims(), step_ms, &s.gt, &cfg.loss)?;
                    let g = net.backward(&trace, &l.grad)?;
                    let dens = trace.layer_densities();
                    Ok((g, l.value, l.bce, l.spike, dens.iter().sum::<f64>() / dens.len() as f64))
                })
                .collect();
            let mut grads = Gradients::zeros_like(&net);
            let mut batch_loss = 0.0;
            for item in items {
                let (g, v, bce, spike, d) = item?;
                grads.add_assign(&g);
                batch_loss += v;
                bce_sum += bce;
                spike_sum += spike;
                dens_sum += d;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            net.step(&grads, &adam)?;
        }
        let val_iou = mean_iou(&evaluate(&net, val)?);
        let n = train.len().max(1) as f64;
        let entry = EpochLog {
            epoch,
            loss: loss_sum / n,
            bce: bce_sum / n,
            spike: spike_sum / n,
            spike_density: dens_sum / n,
            val_iou,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (bce {:.5}, spike {:.5}) density {:.4} val IoU {:.2}",
            entry.loss,
            entry.bce,
            entry.spike,
            entry.spike_density,
            val_iou
        );
        log.push(entry);
        if val_iou > best_val {
            best_val = val_iou;
            best = net.clone();
        }
    }
    Ok(TrainOutcome {
        best,
        last: net,
        log,
        best_val_iou: best_val,
    })
}

fn train_val_samples(cfg: &RunConfig, seqs: &[Sequence]) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let (w, bin) = (cfg.train.window_ms, cfg.bin_us());
    let drain = cfg.drain_steps();
    let mut train = split_samples(seqs, Split::Train, w, w, bin, drain)?;
    if let Some(max) = cfg.train.max_windows {
        train.truncate(max);
    }
    if train.is_empty() {
        return Err(Error::Config("dataset has no training windows".into()));
    }
    let mut val = split_samples(seqs, Split::Val, w, w, bin, drain)?;
    if val.is_empty() {
        log::warn!("no validation split; selecting the checkpoint on training windows");
        val = train.clone();
    }
    Ok((train, val))
}

/// Train from scratch; writes the best checkpoint and `train_log.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let seqs = load_run_dataset(cfg)?;
    let hw = frame_hw(&seqs);
    ensure_frame_divisible(hw)?;
    let (train, val) = train_val_samples(cfg, &seqs)?;
    log::info!("training on {} windows, validating on {}", train.len(), val.len());
    let net = build_network(cfg, hw)?;
    let outcome = train_network(cfg, net, &train, &val)?;
    create_dir(&cfg.paths.out_dir)?;
    let ckpt = cfg.checkpoint_path();
    if let Some(parent) = ckpt.parent() {
        create_dir(parent)?;
    }
    save_checkpoint(&outcome.best, &ckpt)?;
    write_rows(&cfg.paths.out_dir.join("train_log.csv"), &outcome.log)?;
    Ok(outcome)
}

fn load_net(cfg: &RunConfig, hw: (usize, usize)) -> Result<Network> {
    let net = load_checkpoint(&cfg.checkpoint_path())?;
    if net.input_hw != hw {
        return Err(Error::Shape(format!(
            "checkpoint expects {}x{} frames, dataset has {}x{}",
            net.input_hw.0, net.input_hw.1, hw.0, hw.1
        )));
    }
    Ok(net)
}

#[derive(Debug, Clone, Serialize)]
struct EvalRow {
    sequence: String,
    window_ms: u64,
    window: usize,
    iou: f64,
    iou_full: f64,
    dr: Option<f64>,
    ops: u64,
    benefit: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EvalSummary {
    pub window_ms: u64,
    pub windows: usize,
    pub iou_mean: f64,
    pub iou_std: f64,
    pub iou_full_mean: f64,
    pub iou_full_std: f64,
    pub dr_mean: Option<f64>,
    pub ops_mean: f64,
}

/// Evaluate at every configured test width; writes `eval.csv`,
/// `eval_summary.csv` and per-window PGM masks.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<EvalSummary>> {
    cfg.validate()?;
    let seqs = load_run_dataset(cfg)?;
    let net = load_net(cfg, frame_hw(&seqs))?;
    create_dir(&cfg.paths.out_dir)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &w in &cfg.eval.windows_ms {
        let steps = cfg.sim_steps_for(w);
        let samples = split_samples(&seqs, cfg.eval.split, w, w, cfg.bin_us(), cfg.drain_steps())?;
        let results = evaluate(&net, &samples)?;
        let ann = ann_ops_equiv(&net, steps)? as f64;
        for (s, r) in samples.iter().zip(&results) {
            rows.push(EvalRow {
                sequence: s.sequence.clone(),
                window_ms: w,
                window: s.window,
                iou: r.iou,
                iou_full: r.iou_full,
                dr: r.dr,
                ops: r.ops,
                benefit: energy_benefit(ann, r.ops as f64, &cfg.energy).ok(),
            });
            if cfg.eval.write_masks {
                let dir = cfg.paths.out_dir.join("masks").join(format!("dt{w:02}")).join(&s.sequence);
                create_dir(&dir)?;
                let p = dir.join(format!("w{:04}.pgm", s.window));
                write_pgm(&p, r.pred.width, r.pred.height, 255, &r.pred.to_pgm_pixels())?;
            }
        }
        let col = |f: &dyn Fn(&WindowEval) -> f64| results.iter().map(f).collect::<Vec<_>>();
        let (iou_mean, iou_std) = mean_std(&col(&|r| r.iou)).unwrap_or((0.0, 0.0));
        let (full_mean, full_std) = mean_std(&col(&|r| r.iou_full)).unwrap_or((0.0, 0.0));
        let drs: Vec<f64> = results.iter().filter_map(|r| r.dr).collect();
        let entry = EvalSummary {
            window_ms: w,
            windows: results.len(),
            iou_mean,
            iou_std,
            iou_full_mean: full_mean,
            iou_full_std: full_std,
            dr_mean: mean_std(&drs).map(|m| m.0),
            ops_mean: mean_std(&col(&|r| r.ops as f64)).map_or(0.0, |m| m.0),
        };
        log::info!("dt {w} ms: IoU {:.2} +- {:.2} over {} windows", iou_mean, iou_std, results.len());
        summary.push(entry);
    }
    write_rows(&cfg.paths.out_dir.join("eval.csv"), &rows)?;
    write_rows(&cfg.paths.out_dir.join("eval_summary.csv"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IncrementalRow {
    pub prefix_ms: u64,
    pub window_ms: u64,
    pub windows: usize,
    pub raw_iou: f64,
    pub raw_iou_std: f64,
    pub kalman_iou: f64,
    pub kalman_iou_std: f64,
}

/// IoU against input prefix length; writes `incremental.csv`. Every window
/// of the sweep is as long as the longest prefix (and at least the training
/// window), is fed only its first `prefix` ms, and is simulated in full so
/// that late spikes can still propagate. The filtered curve runs one scalar
/// filter per pixel over the successive prefixes of each window; its
/// measurement is the output spike rate, counts divided by the
/// training-window step count (the rate the cross-entropy term was trained on).
pub fn cmd_incremental(cfg: &RunConfig) -> Result<Vec<IncrementalRow>> {
    cfg.validate()?;
    let seqs = load_run_dataset(cfg)?;
    let net = load_net(cfg, frame_hw(&seqs))?;
    let rows = incremental_sweep(cfg, &net, &seqs)?;
    create_dir(&cfg.paths.out_dir)?;
    write_rows(&cfg.paths.out_dir.join("incremental.csv"), &rows)?;
    Ok(rows)
}

pub fn incremental_sweep(cfg: &RunConfig, net: &Network, seqs: &[Sequence]) -> Result<Vec<IncrementalRow>> {
    let mut prefixes = cfg.eval.prefixes_ms.clone();
    prefixes.sort_unstable();
    prefixes.dedup();
    let window = prefixes.last().copied().unwrap_or(0).max(cfg.train.window_ms);
    let norm = cfg.sim_steps_for(cfg.train.window_ms) as f64;
    let mut raw = vec![Vec::new(); prefixes.len()];
    let mut filtered = vec![Vec::new(); prefixes.len()];
    for seq in seqs.iter().filter(|s| s.split == cfg.eval.split) {
        let pixels = seq.stream.width as usize * seq.stream.height as usize;
        let mut banks: Vec<PixelFilterBank> = Vec::new();
        for (pi, &prefix) in prefixes.iter().enumerate() {
            let samples = make_samples(seq, window, prefix, cfg.bin_us(), cfg.drain_steps())?;
            let results = evaluate(net, &samples)?;
            if banks.is_empty() {
                banks = vec![PixelFilterBank::new(pixels, cfg.kalman)?; samples.len()];
            }
            for ((s, r), bank) in samples.iter().zip(&results).zip(banks.iter_mut()) {
                raw[pi].push(r.iou);
                let rates: Vec<f64> = r.counts.iter().map(|&c| c / norm).collect();
                bank.update(&rates)?;
                let mask = SegMask::new(r.pred.height, r.pred.width, bank.mask())?;
                filtered[pi].push(score_mask(&mask, s)?.0);
            }
        }
    }
    let mut rows = Vec::new();
    for (pi, &prefix) in prefixes.iter().enumerate() {
        let (raw_iou, raw_iou_std) = mean_std(&raw[pi]).unwrap_or((0.0, 0.0));
        let (kalman_iou, kalman_iou_std) = mean_std(&filtered[pi]).unwrap_or((0.0, 0.0));
        log::info!("prefix {prefix} ms: raw IoU {raw_iou:.2}, filtered {kalman_iou:.2}");
        rows.push(IncrementalRow {
            prefix_ms: prefix,
            window_ms: window,
            windows: raw[pi].len(),
            raw_iou,
            raw_iou_std,
            kalman_iou,
            kalman_iou_std,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
struct CostRow {
    windows: usize,
    steps: usize,
    synaptic_ops: f64,
    ann_ops_equiv: f64,
    energy_benefit: Option<f64>,
    e_mac_pj: f64,
    e_ac_pj: f64,
    spike_density: f64,
}

/// Mean synaptic operations per training-width window against the dense
/// equivalent; writes `cost.csv`.
pub fn cmd_cost(cfg: &RunConfig) -> Result<CostReport> {
    cfg.validate()?;
    let seqs = load_run_dataset(cfg)?;
    let net = load_net(cfg, frame_hw(&seqs))?;
    let w = cfg.train.window_ms;
    let samples = split_samples(&seqs, cfg.eval.split, w, w, cfg.bin_us(), cfg.drain_steps())?;
    let results = evaluate(&net, &samples)?;
    let report = cost_report(cfg, &net, &results)?;
    create_dir(&cfg.paths.out_dir)?;
    write_rows(
        &cfg.paths.out_dir.join("cost.csv"),
        &[CostRow {
            windows: results.len(),
            steps: cfg.sim_steps_for(w),
            synaptic_ops: report.synaptic_ops,
            ann_ops_equiv: report.ann_ops_equiv,
            energy_benefit: report.energy_benefit,
            e_mac_pj: report.e_mac_pj,
            e_ac_pj: report.e_ac_pj,
            spike_density: report.spike_density,
        }],
    )?;
    match report.energy_benefit {
        Some(b) => log::info!("{:.0} synaptic ops per window, energy benefit {b:.2}x", report.synaptic_ops),
        None => log::warn!("no synaptic operations; energy benefit undefined"),
    }
    Ok(report)
}

pub fn cost_report(cfg: &RunConfig, net: &Network, results: &[WindowEval]) -> Result<CostReport> {
    let ops = mean_std(&results.iter().map(|r| r.ops as f64).collect::<Vec<_>>()).map_or(0.0, |m| m.0);
    let density = mean_std(&results.iter().map(|r| r.density).collect::<Vec<_>>()).map_or(0.0, |m| m.0);
    let ann = ann_ops_equiv(net, cfg.sim_steps_for(cfg.train.window_ms))? as f64;
    Ok(CostReport::new(ops, ann, density, &cfg.energy))
}

/// Generate the configured synthetic dataset into the output directory.
pub fn cmd_datagen(cfg: &RunConfig) -> Result<Manifest> {
    cfg.dataset.validate()?;
    let dims = (cfg.dataset.scene.height as usize, cfg.dataset.scene.width as usize);
    ensure_frame_divisible(dims)?;
    create_dir(&cfg.paths.out_dir)?;
    let m = write_dataset(&cfg.dataset, cfg.seed, &cfg.paths.out_dir)?;
    let events: usize = m.sequences.iter().map(|s| s.events).sum();
    log::info!("wrote {} sequences, {events} events", m.sequences.len());
    Ok(m)
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct Check {
    pub check: String,
    pub ok: bool,
    pub detail: String,
}

/// Check the configuration, dataset and (when present) checkpoint; writes
/// `validate.csv` and fails if any check fails.
pub fn cmd_validate(cfg: &RunConfig) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut record = |name: &str, r: Result<String>| {
        let (ok, detail) = match r {
            Ok(d) => (true, d),
            Err(e) => (false, e.to_string()),
        };
        checks.push(Check {
            check: name.to_string(),
            ok,
            detail,
        });
    };
    record("config", cfg.validate().map(|_| "ok".into()));
    let data = load_dataset(&cfg.paths.data_dir);
    let hw = match &data {
        Ok((m, seqs)) => {
            record("dataset", Ok(format!("{} sequences", seqs.len())));
            for (entry, seq) in m.sequences.iter().zip(seqs) {
                let masks: PathBuf = cfg.paths.data_dir.join(&entry.mask_dir);
                let r = seq.stream.validate().and_then(|_| {
                    let n = fs::read_dir(&masks).map_err(|e| Error::io(&masks, e))?.count();
                    if n != entry.windows || seq.stream.len() != entry.events {
                        return Err(Error::InvalidStream(format!(
                            "manifest lists {} windows / {} events, found {n} masks / {} events",
                            entry.windows,
                            entry.events,
                            seq.stream.len()
                        )));
                    }
                    Ok(format!("{} events, {n} windows", seq.stream.len()))
                });
                record(&format!("sequence {}", entry.name), r);
            }
            seqs.first().map(|_| frame_hw(seqs))
        }
        Err(_) => {
            record("dataset", data.as_ref().map(|_| String::new()).map_err(clone_err));
            None
        }
    };
    let ckpt = cfg.checkpoint_path();
    if ckpt.exists() {
        let r = load_checkpoint(&ckpt).and_then(|net| match hw {
            Some(hw) if hw != net.input_hw => Err(Error::Shape(format!(
                "checkpoint expects {:?} frames, dataset has {hw:?}",
                net.input_hw
            ))),
            _ => Ok(format!("{} weights", net.weight_count())),
        });
        record("checkpoint", r);
    }
    create_dir(&cfg.paths.out_dir)?;
    write_rows(&cfg.paths.out_dir.join("validate.csv"), &checks)?;
    if let Some(bad) = checks.iter().find(|c| !c.ok) {
        return Err(Error::Config(format!("validation failed: {}: {}", bad.check, bad.detail)));
    }
    Ok(checks)
}

fn clone_err(e: &Error) -> Error {
    Error::Config(e.to_string())
}
