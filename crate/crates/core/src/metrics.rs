//! Segmentation quality and neuromorphic cost accounting.

use serde::{Deserialize, Serialize};

use crate::conv::Taps;
use crate::error::{Error, Result};
use crate::event::{project, SpikeTensor};
use crate::net::{ForwardTrace, Network};

/// Per-pixel foreground decision, row-major `H x W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<bool>,
}

impl SegMask {
    pub fn new(height: usize, width: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "mask of {} pixels for a {height}x{width} frame",
                pixels.len()
            )));
        }
        Ok(SegMask { height, width, pixels })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        SegMask {
            height,
            width,
            pixels: vec![false; height * width],
        }
    }

    /// A pixel is foreground when it carries at least one spike in any channel.
    pub fn from_spikes(tensor: &SpikeTensor) -> Self {
        let p = project(tensor);
        SegMask {
            height: p.height,
            width: p.width,
            pixels: p.counts.iter().map(|&c| c >= 1).collect(),
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn and(&self, other: &SegMask) -> Result<SegMask> {
        check_dims(self, other)?;
        let pixels = self.pixels.iter().zip(&other.pixels).map(|(&a, &b)| a && b).collect();
        Ok(SegMask {
            height: self.height,
            width: self.width,
            pixels,
        })
    }

    /// 8-connected foreground components, each returned as its own mask, in
    /// raster order of their first pixel.
    pub fn components(&self) -> Vec<SegMask> {
        let (h, w) = (self.height, self.width);
        let mut label = vec![usize::MAX; h * w];
        let mut out = Vec::new();
        for start in 0..h * w {
            if !self.pixels[start] || label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = vec![false; h * w];
            let mut stack = vec![start];
            label[start] = id;
            while let Some(i) = stack.pop() {
                comp[i] = true;
                let (y, x) = ((i / w) as isize, (i % w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if self.pixels[j] && label[j] == usize::MAX {
                            label[j] = id;
                            stack.push(j);
                        }
                    }
                }
            }
            out.push(SegMask {
                height: h,
                width: w,
                pixels: comp,
            });
        }
        out
    }

    /// Inclusive `(y0, x0, y1, x1)` bounds of the foreground, if any.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (i, _) in self.pixels.iter().enumerate().filter(|(_, &p)| p) {
            let (y, x) = (i / self.width, i % self.width);
            bb = Some(match bb {
                None => (y, x, y, x),
                Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
            });
        }
        bb
    }

    /// 8-bit image: foreground 255, background 0.
    pub fn to_pgm_pixels(&self) -> Vec<u16> {
        self.pixels.iter().map(|&p| if p { 255 } else { 0 }).collect()
    }
}

fn check_dims(a: &SegMask, b: &SegMask) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) || a.pixels.len() != b.pixels.len() {
        return Err(Error::Shape(format!(
            "masks are {}x{} and {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Intersection over union in percent; 100 when both masks are empty.
pub fn iou(pred: &SegMask, gt: &SegMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.pixels.iter().zip(&gt.pixels) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    if union == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * inter as f64 / union as f64)
}

/// IoU restricted to pixels where `support` is set (pixels that received
/// input events).
pub fn iou_on_support(pred: &SegMask, gt: &SegMask, support: &SegMask) -> Result<f64> {
    iou(&pred.and(support)?, &gt.and(support)?)
}

/// IoU threshold for counting an object as detected.
pub const DETECTION_IOU: f64 = 50.0;

/// Percentage of ground-truth objects detected across all frames. An object
/// is detected when the prediction, cropped to the object's bounding box,
/// overlaps the object mask with IoU of at least 50%.
pub fn detection_rate(frames: &[(SegMask, Vec<SegMask>)]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::InvalidParam("detection rate of an empty frame list".into()));
    }
    let (mut detected, mut total) = (0usize, 0usize);
    for (pred, objects) in frames {
        for obj in objects {
            check_dims(pred, obj)?;
            total += 1;
            let Some((y0, x0, y1, x1)) = obj.bounding_box() else {
                continue;
            };
            let (mut inter, mut union) = (0usize, 0usize);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (p, g) = (pred.get(y, x), obj.get(y, x));
                    inter += usize::from(p && g);
                    union += usize::from(p || g);
                }
            }
            if union > 0 && 100.0 * inter as f64 / union as f64 >= DETECTION_IOU {
                detected += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Undefined("detection rate with no ground-truth objects".into()));
    }
    Ok(100.0 * detected as f64 / total as f64)
}

/// Spikes times outgoing fan-out, summed over every layer that feeds a
/// spatial operator (the network input included) and every step.
pub fn count_synaptic_ops(net: &Network, trace: &ForwardTrace) -> Result<u64> {
    if trace.dims.len() != net.layers.len() + 1 {
        return Err(Error::Shape(format!(
            "trace has {} layers, network {}",
            trace.dims.len().saturating_sub(1),
            net.layers.len()
        )));
    }
    let mut ops = 0u64;
    for (l, layer) in net.layers.iter().enumerate() {
        let d = trace.dims[l];
        let op = layer.spec.op();
        let taps = Taps::new(&op, (d.height, d.width))?;
        let spikes = &trace.spikes[l];
        for y in 0..d.height {
            for x in 0..d.width {
                let fan = taps.fan_out(&op, y, x) as u64;
                let mut n = 0u64;
                for k in 0..d.steps {
                    for c in 0..d.channels {
                        n += u64::from(spikes[d.index(c, y, x, k)] != 0.0);
                    }
                }
                ops += n * fan;
            }
        }
    }
    Ok(ops)
}

/// Dense multiply-accumulates of the same topology over `steps` steps.
pub fn ann_ops_equiv(net: &Network, steps: usize) -> Result<u64> {
    let mut hw = net.input_hw;
    let mut macs = 0u64;
    for layer in &net.layers {
        let op = layer.spec.op();
        let taps = Taps::new(&op, hw)?;
        macs += taps.dense_macs(&op);
        hw = taps.out_hw;
    }
    Ok(macs * steps as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    pub e_mac_pj: f64,
    pub e_ac_pj: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            e_mac_pj: 4.6,
            e_ac_pj: 0.9,
        }
    }
}

pub fn energy_benefit(ann_ops: f64, snn_ops: f64, energy: &EnergyModel) -> Result<f64> {
    if !(snn_ops > 0.0) {
        return Err(Error::Undefined(format!(
            "energy benefit needs positive synaptic ops, got {snn_ops}"
        )));
    }
    if energy.e_ac_pj <= 0.0 || energy.e_mac_pj <= 0.0 {
        return Err(Error::InvalidParam("energy constants must be positive".into()));
    }
    Ok(ann_ops * energy.e_mac_pj / (snn_ops * energy.e_ac_pj))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    /// Mean synaptic operations per window.
    pub synaptic_ops: f64,
    pub ann_ops_equiv: f64,
    /// `None` when no synaptic operation happened.
    pub energy_benefit: Option<f64>,
    pub e_mac_pj: f64,
    pub e_ac_pj: f64,
    /// Mean spike density over all non-input layers.
    pub spike_density: f64,
}

impl CostReport {
    pub fn new(synaptic_ops: f64, ann_ops_equiv: f64, spike_density: f64, energy: &EnergyModel) -> Self {
        CostReport {
            synaptic_ops,
            ann_ops_equiv,
            energy_benefit: energy_benefit(ann_ops_equiv, synaptic_ops, energy).ok(),
            e_mac_pj: energy.e_mac_pj,
            e_ac_pj: energy.e_ac_pj,
            spike_density,
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
