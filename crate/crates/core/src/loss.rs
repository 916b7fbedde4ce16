//! Spatio-temporal segmentation loss.
//!
//! * `bce`: binary cross-entropy between the per-pixel spike rate of the
//!   prediction and the foreground mask, averaged over pixels.
//! * `spike`: van Rossum distance between the foreground-masked prediction
//!   and the foreground input spikes, both smoothed by a causal exponential.
//! * `total = bce_weight * bce + lambda * spike`, with `bce_weight = 1` by default.
//!
//! Every loss also returns `dL/ds` for each predicted spike, in the
//! `[k][y][x][c]` layout shared with [`SpikeTensor`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{discretize, project_values, Dims, EventStream, SpikeTensor};

/// Ground truth for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Foreground mask, row-major `H x W`.
    pub mask: Vec<bool>,
    /// Input spikes with every background event removed.
    pub fg_spikes: SpikeTensor,
}

impl GroundTruth {
    pub fn new(mask: Vec<bool>, fg_spikes: SpikeTensor) -> Result<Self> {
        let d = fg_spikes.dims();
        if mask.len() != d.pixels() {
            return Err(Error::Shape(format!(
                "mask has {} pixels, spikes have {}",
                mask.len(),
                d.pixels()
            )));
        }
        for k in 0..d.steps {
            for y in 0..d.height {
                for x in 0..d.width {
                    if !mask[y * d.width + x] && (0..d.channels).any(|c| fg_spikes.get(c, y, x, k)) {
                        return Err(Error::InvalidParam(format!(
                            "foreground spike at ({x}, {y}) outside the mask"
                        )));
                    }
                }
            }
        }
        Ok(GroundTruth { mask, fg_spikes })
    }

    /// Builds ground truth from a labelled window. Without a mask, pixels that
    /// carry at least one foreground event form the mask.
    pub fn from_window(window: &EventStream, bin_width_us: u64, mask: Option<Vec<bool>>) -> Result<Self> {
        let dims = (window.width as usize, window.height as usize);
        let fg = discretize(&window.foreground(), bin_width_us, dims)?;
        let mask = match mask {
            Some(m) => m,
            None => {
                let mut m = vec![false; dims.0 * dims.1];
                for e in window.events.iter().filter(|e| e.is_foreground()) {
                    m[e.y as usize * dims.0 + e.x as usize] = true;
                }
                m
            }
        };
        GroundTruth::new(mask, fg)
    }

    pub fn dims(&self) -> Dims {
        self.fg_spikes.dims()
    }

    /// Keeps the first `keep` bins of the foreground spikes.
    pub fn prefix(&self, keep: usize) -> GroundTruth {
        GroundTruth {
            mask: self.mask.clone(),
            fg_spikes: self.fg_spikes.prefix(keep),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the spike loss.
    pub lambda: f64,
    /// Divisor turning spike counts into rates; `None` uses the number of bins.
    pub projection_norm: Option<f64>,
    /// Van Rossum time constant in ms; 0 compares raw spike trains.
    pub smoothing_tau: f64,
    /// Rates are clamped to `[clamp_eps, 1 - clamp_eps]` inside the logarithms.
    pub clamp_eps: f64,
    /// When set, the rate gradient is evaluated at the rate clamped to
    /// `[g, 1 - g]` instead of being zero outside the value clamp, so silent
    /// foreground pixels and saturated background pixels still receive a
    /// bounded push. The loss value is unaffected.
    pub grad_clamp_eps: Option<f64>,
    /// Weight of the cross-entropy term; 0 trains on the spike loss alone.
    pub bce_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            projection_norm: None,
            smoothing_tau: 2.0,
            clamp_eps: 1e-7,
            grad_clamp_eps: None,
            bce_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParam(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::InvalidParam(format!(
                "clamp_eps must lie in (0, 0.5), got {}",
                self.clamp_eps
            )));
        }
        if let Some(g) = self.grad_clamp_eps {
            if !(g > 0.0 && g < 0.5) {
                return Err(Error::InvalidParam(format!("grad_clamp_eps must lie in (0, 0.5), got {g}")));
            }
        }
        if !(self.bce_weight >= 0.0) {
            return Err(Error::InvalidParam(format!("bce_weight must be >= 0, got {}", self.bce_weight)));
        }
        if !(self.smoothing_tau >= 0.0) {
            return Err(Error::InvalidParam("smoothing_tau must be >= 0".into()));
        }
        if let Some(n) = self.projection_norm {
            if !(n > 0.0) {
                return Err(Error::InvalidParam("projection_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Loss value and `dL/d(prediction)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_dims(pred: Dims, gt: &GroundTruth) -> Result<()> {
    if pred != gt.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred,
            gt.dims()
        )));
    }
    Ok(())
}

pub fn bce_loss(pred: &SpikeTensor, gt: &GroundTruth, cfg: &LossConfig) -> Result<LossOutput> {
    bce_loss_values(&pred.to_values(), pred.dims(), gt, cfg)
}

/// [`bce_loss`] over real-valued predictions.
pub fn bce_loss_values(pred: &[f64], dims: Dims, gt: &GroundTruth, cfg: &LossConfig) -> Result<LossOutput> {
    check_dims(dims, gt)?;
    cfg.validate()?;
    let norm = cfg.projection_norm.unwrap_or(dims.steps as f64);
    let pixels = dims.pixels() as f64;
    let proj = project_values(pred, dims);
    let (lo, hi) = (cfg.clamp_eps, 1.0 - cfg.clamp_eps);
    let mut value = 0.0;
    let mut pixel_grad = vec![0.0; proj.len()];
    for ((&count, &fg), g) in proj.iter().zip(&gt.mask).zip(pixel_grad.iter_mut()) {
        let raw = count / norm;
        let rate = raw.clamp(lo, hi);
        let inside = raw > lo && raw < hi;
        let grad_rate = match cfg.grad_clamp_eps {
            Some(ge) => Some(raw.clamp(ge, 1.0 - ge)),
            None => inside.then_some(rate),
        };
        if fg {
            value -= rate.ln();
            if let Some(r) = grad_rate {
                *g = -1.0 / r;
            }
        } else {
            value -= (1.0 - rate).ln();
            if let Some(r) = grad_rate {
                *g = 1.0 / (1.0 - r);
            }
        }
        *g /= pixels * norm;
    }
    let mut grad = vec![0.0; dims.len()];
    for frame in grad.chunks_exact_mut(dims.frame_len()) {
        for (px, &g) in frame.chunks_exact_mut(dims.channels).zip(&pixel_grad) {
            px.iter_mut().for_each(|v| *v = g);
        }
    }
    Ok(LossOutput {
        value: value / pixels,
        grad,
    })
}

pub fn spike_loss(pred: &SpikeTensor, gt: &GroundTruth, cfg: &LossConfig) -> Result<LossOutput> {
    let step_ms = pred.bin_width_us() as f64 / 1000.0;
    spike_loss_values(&pred.to_values(), pred.dims(), step_ms, gt, cfg)
}

/// Samples of the smoothing kernel `exp(-t / tau)` at each step; a unit
/// impulse when `tau == 0`.
fn smoothing_kernel(steps: usize, step_ms: f64, tau: f64) -> Vec<f64> {
    if tau == 0.0 {
        return vec![1.0];
    }
    (0..steps).map(|m| (-(m as f64) * step_ms / tau).exp()).collect()
}

/// [`spike_loss`] over real-valued predictions.
pub fn spike_loss_values(pred: &[f64], dims: Dims, step_ms: f64, gt: &GroundTruth, cfg: &LossConfig) -> Result<LossOutput> {
    check_dims(dims, gt)?;
    cfg.validate()?;
    let kernel = smoothing_kernel(dims.steps, step_ms, cfg.smoothing_tau);
    let target = gt.fg_spikes.data();
    let frame = dims.frame_len();
    let channels = dims.channels;

    // masked difference per (pixel, channel) train
    let mut diff = vec![0.0; dims.len()];
    for (i, d) in diff.iter_mut().enumerate() {
        let pixel = (i % frame) / channels;
        let p = if gt.mask[pixel] { pred[i] } else { 0.0 };
        *d = p - target[i] as f64;
    }
    // smoothed[k] = sum_m kernel[m] diff[k - m]
    let mut smoothed = vec![0.0; dims.len()];
    for k in 0..dims.steps {
        for m in 0..kernel.len().min(k + 1) {
            let c = kernel[m];
            let (dst, src) = (k * frame, (k - m) * frame);
            for j in 0..frame {
                smoothed[dst + j] += c * diff[src + j];
            }
        }
    }
    let value = smoothed.iter().map(|d| d * d).sum::<f64>() * step_ms;

    let mut grad = vec![0.0; dims.len()];
    for k in 0..dims.steps {
        for m in 0..kernel.len().min(dims.steps - k) {
            let c = 2.0 * step_ms * kernel[m];
            let (dst, src) = (k * frame, (k + m) * frame);
            for j in 0..frame {
                grad[dst + j] += c * smoothed[src + j];
            }
        }
    }
    for (i, g) in grad.iter_mut().enumerate() {
        if !gt.mask[(i % frame) / channels] {
            *g = 0.0;
        }
    }
    Ok(LossOutput { value, grad })
}

/// Loss split into its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub bce: f64,
    pub spike: f64,
    pub grad: Vec<f64>,
}

pub fn total_loss(pred: &SpikeTensor, gt: &GroundTruth, cfg: &LossConfig) -> Result<TotalLoss> {
    let step_ms = pred.bin_width_us() as f64 / 1000.0;
    total_loss_values(&pred.to_values(), pred.dims(), step_ms, gt, cfg)
}

pub fn total_loss_values(pred: &[f64], dims: Dims, step_ms: f64, gt: &GroundTruth, cfg: &LossConfig) -> Result<TotalLoss> {
    let bce = bce_loss_values(pred, dims, gt, cfg)?;
    let mut grad = bce.grad;
    grad.iter_mut().for_each(|g| *g *= cfg.bce_weight);
    let spike = if cfg.lambda > 0.0 {
        let s = spike_loss_values(pred, dims, step_ms, gt, cfg)?;
        for (g, sg) in grad.iter_mut().zip(&s.grad) {
            *g += cfg.lambda * sg;
        }
        s.value
    } else {
        check_dims(dims, gt)?;
        0.0
    };
    Ok(TotalLoss {
        value: cfg.bce_weight * bce.value + cfg.lambda * spike,
        bce: bce.value,
        spike,
        grad,
    })
}
