//! Run configuration, read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetConfig, Split};
use crate::error::{Error, Result};
use crate::kalman::KalmanConfig;
use crate::loss::LossConfig;
use crate::metrics::EnergyModel;
use crate::net::AdamConfig;
use crate::srm::SrmParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Dataset directory (holds `manifest.json`).
    pub data_dir: PathBuf,
    /// Checkpoint to write when training and to read otherwise; defaults to
    /// `checkpoint.spks` inside the output directory.
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: PathBuf::from("data"),
            checkpoint: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Training window width in ms.
    pub window_ms: u64,
    /// Simulation step in ms; also the spike-tensor bin width.
    pub sim_step_ms: f64,
    /// Scale of the uniform weight initialisation.
    pub init_gain: f64,
    /// Use at most this many training windows (all when unset).
    pub max_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            window_ms: 10,
            sim_step_ms: 1.0,
            init_gain: 6.0,
            max_windows: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub srm: SrmParams,
    pub delay_steps: usize,
    /// Silent input simulated after every window, so that the response to
    /// its last events can cross the six layers before the output is read.
    pub drain_ms: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            srm: SrmParams::default(),
            delay_steps: 0,
            drain_ms: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Test window widths in ms.
    pub windows_ms: Vec<u64>,
    /// Input prefix lengths in ms for the incremental sweep.
    pub prefixes_ms: Vec<u64>,
    pub split: Split,
    pub write_masks: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            windows_ms: (1..=25).collect(),
            prefixes_ms: (1..=25).collect(),
            split: Split::Val,
            write_masks: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub network: NetworkConfig,
    pub eval: EvalConfig,
    pub kalman: KalmanConfig,
    pub energy: EnergyModel,
    pub dataset: DatasetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: PathsConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            network: NetworkConfig::default(),
            eval: EvalConfig::default(),
            kalman: KalmanConfig::default(),
            energy: EnergyModel::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let loc = match e.span() {
                Some(span) => format!("line {}", text[..span.start].matches('\n').count() + 1),
                None => "unknown location".into(),
            };
            Error::parse(source, loc, e.message().to_string())
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Simulation bin width in microseconds.
    pub fn bin_us(&self) -> u64 {
        (self.train.sim_step_ms * 1000.0).round() as u64
    }

    /// Number of simulation steps in a window of `ms` milliseconds.
    pub fn steps_for(&self, ms: u64) -> usize {
        (ms * 1000 / self.bin_us()) as usize
    }

    /// Silent steps simulated after every window.
    pub fn drain_steps(&self) -> usize {
        self.steps_for(self.network.drain_ms)
    }

    /// Simulated steps for a window of `ms` milliseconds, drain included.
    pub fn sim_steps_for(&self, ms: u64) -> usize {
        self.steps_for(ms) + self.drain_steps()
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("checkpoint.spks"))
    }

    /// Neuron parameters with the simulation step taken from `[train]`.
    pub fn srm(&self) -> SrmParams {
        SrmParams {
            sim_step_ms: self.train.sim_step_ms,
            ..self.network.srm
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let step = self.train.sim_step_ms;
        let bin = step * 1000.0;
        if !(step > 0.0) || (bin - bin.round()).abs() > 1e-9 || bin.round() < 1.0 {
            return bad(format!("sim_step_ms {step} must be a positive whole number of microseconds"));
        }
        if (self.network.srm.sim_step_ms - step).abs() > 1e-12 && self.network.srm.sim_step_ms != SrmParams::default().sim_step_ms {
            return bad(format!(
                "network.srm.sim_step_ms {} disagrees with train.sim_step_ms {step}",
                self.network.srm.sim_step_ms
            ));
        }
        let bin = self.bin_us();
        let check_width = |what: &str, ms: u64| {
            if ms == 0 || (ms * 1000) % bin != 0 {
                return Err(Error::Config(format!(
                    "{what} {ms} ms is not a positive multiple of the {step} ms simulation step"
                )));
            }
            Ok(())
        };
        check_width("train.window_ms", self.train.window_ms)?;
        for &w in &self.eval.windows_ms {
            check_width("eval.windows_ms entry", w)?;
        }
        for &w in &self.eval.prefixes_ms {
            check_width("eval.prefixes_ms entry", w)?;
        }
        if (self.network.drain_ms * 1000) % bin != 0 {
            return bad(format!(
                "network.drain_ms {} is not a multiple of the {step} ms simulation step",
                self.network.drain_ms
            ));
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be positive".into());
        }
        if !(self.train.lr > 0.0) || !(self.train.init_gain >= 0.0) {
            return bad("train.lr must be > 0 and train.init_gain >= 0".into());
        }
        self.srm().validate()?;
        self.loss.validate()?;
        crate::kalman::PixelFilterBank::new(1, self.kalman)?;
        Ok(())
    }
}
