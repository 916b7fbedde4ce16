//! Scalar Kalman filtering of per-pixel foreground rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar random-walk filter: identity dynamics, process noise `q`,
/// measurement noise `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub estimate: f64,
    pub variance: f64,
    pub q: f64,
    pub r: f64,
}

impl KalmanState {
    pub fn new(estimate: f64, variance: f64, q: f64, r: f64) -> Result<Self> {
        let s = KalmanState {
            estimate,
            variance,
            q,
            r,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidParam(format!("measurement noise r must be > 0, got {}", self.r)));
        }
        if !(self.q >= 0.0) || !self.q.is_finite() {
            return Err(Error::InvalidParam(format!("process noise q must be >= 0, got {}", self.q)));
        }
        if !(self.variance >= 0.0) || !self.estimate.is_finite() {
            return Err(Error::InvalidParam(format!(
                "invalid filter state x={}, P={}",
                self.estimate, self.variance
            )));
        }
        Ok(())
    }

    /// Current gain for the next update.
    pub fn gain(&self) -> f64 {
        let prior = self.variance + self.q;
        prior / (prior + self.r)
    }
}

/// One predict–update step.
pub fn kalman_update(state: KalmanState, z: f64) -> Result<KalmanState> {
    state.validate()?;
    if !z.is_finite() {
        return Err(Error::InvalidParam(format!("non-finite measurement {z}")));
    }
    let prior = state.variance + state.q;
    let k = prior / (prior + state.r);
    Ok(KalmanState {
        estimate: state.estimate + k * (z - state.estimate),
        variance: ((1.0 - k) * prior).max(0.0),
        ..state
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    pub q: f64,
    pub r: f64,
    /// Filtered rate (spikes per step) at or above which a pixel is foreground.
    pub threshold: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            q: 0.01,
            r: 0.05,
            threshold: 0.05,
        }
    }
}

/// Independent scalar filters, one per pixel. The first measurement of a
/// pixel initialises its estimate with variance `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFilterBank {
    cfg: KalmanConfig,
    states: Option<Vec<KalmanState>>,
    len: usize,
}

impl PixelFilterBank {
    pub fn new(len: usize, cfg: KalmanConfig) -> Result<Self> {
        KalmanState::new(0.0, 0.0, cfg.q, cfg.r)?;
        Ok(PixelFilterBank { cfg, states: None, len })
    }

    pub fn reset(&mut self) {
        self.states = None;
    }

    pub fn update(&mut self, z: &[f64]) -> Result<()> {
        if z.len() != self.len {
            return Err(Error::Shape(format!("{} measurements for {} filters", z.len(), self.len)));
        }
        match &mut self.states {
            None => {
                let (q, r) = (self.cfg.q, self.cfg.r);
                self.states = Some(
                    z.iter()
                        .map(|&z| KalmanState::new(z, r, q, r))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            Some(states) => {
                for (s, &z) in states.iter_mut().zip(z) {
                    *s = kalman_update(*s, z)?;
                }
            }
        }
        Ok(())
    }

    pub fn estimates(&self) -> Vec<f64> {
        match &self.states {
            None => vec![0.0; self.len],
            Some(s) => s.iter().map(|s| s.estimate).collect(),
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.estimates().iter().map(|&x| x >= self.cfg.threshold).collect()
    }
}
