//! Experiment configuration file (TOML).
//!
//! Every key is optional. `[train]` is the training configuration and its
//! `seed` is the master seed for training and evaluation; `[data]` controls
//! the synthetic datasets.
//!
//! ```toml
//! [data]
//! n = 2000          # training images
//! eval_n = 256      # evaluation images
//! seed = 1
//! eval_seed = 2
//!
//! [train]
//! q = 4
//! epochs = 40
//! seed = 0
//!
//! [sweep]
//! q_grid = [1, 2, 3, 4, 5]
//! ber_grid = [0.0, 0.01, 0.05, 0.1, 0.2, 0.3]
//! snr_grid_db = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0]
//! modulations = ["bpsk", "qpsk", "qam16", "qam64"]
//! schemes = ["sdac", "dq", "cm-lite"]
//! dq_ber_range = [0.0, 0.0]
//!
//! [modem]
//! snr_grid_db = [0.0, 1.0, 2.0]
//! n_bits = 10000000
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::Modulation;
use crate::codec::TrainConfig;
use crate::error::{Error, Result};
use crate::harness::data::{gen_synthetic_dataset, ImageSet};
use crate::sdac::AseWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub eval_n: usize,
    pub seed: u64,
    pub eval_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            eval_n: 256,
            seed: 1,
            eval_seed: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub q_grid: Vec<usize>,
    pub ber_grid: Vec<f64>,
    pub snr_grid_db: Vec<f64>,
    pub modulations: Vec<Modulation>,
    pub schemes: Vec<String>,
    /// Weights of the reported `ase` column.
    pub ase_weights: AseWeights,
    /// BER range the DQ codec is trained under.
    pub dq_ber_range: [f64; 2],
    /// Trained models are cached here as `<scheme>-<tag>.ckpt` when set.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            q_grid: (1..=5).collect(),
            ber_grid: vec![0.0, 0.01, 0.05, 0.1, 0.2, 0.3],
            snr_grid_db: (0..=7).map(|k| 2.0 * k as f64).collect(),
            modulations: Modulation::ALL.to_vec(),
            schemes: vec!["sdac".into(), "dq".into(), "cm-lite".into()],
            ase_weights: AseWeights::NO_CHANNEL_TERM,
            dq_ber_range: [0.0, 0.0],
            checkpoint_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModemConfig {
    pub snr_grid_db: Vec<f64>,
    pub modulations: Vec<Modulation>,
    pub n_bits: usize,
    /// Grid points with closed-form BER below this are not checked.
    pub min_ber: f64,
    pub tolerance: f64,
}

impl Default for ModemConfig {
    fn default() -> Self {
        Self {
            snr_grid_db: (0..=14).map(f64::from).collect(),
            modulations: Modulation::ALL.to_vec(),
            n_bits: 10_000_000,
            min_ber: 1e-4,
            tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub modem: ModemConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::parse("config", e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let s = &self.sweep;
        if self.data.n == 0 || self.data.eval_n == 0 {
            return Err(Error::invalid("dataset sizes must be positive"));
        }
        if s.q_grid.is_empty()
            || s.ber_grid.is_empty()
            || s.snr_grid_db.is_empty()
            || s.modulations.is_empty()
            || s.schemes.is_empty()
            || self.modem.snr_grid_db.is_empty()
            || self.modem.modulations.is_empty()
        {
            return Err(Error::invalid("sweep and modem grids must be non-empty"));
        }
        if let Some(p) = s.ber_grid.iter().find(|p| !(0.0..=0.5).contains(*p)) {
            return Err(Error::invalid(format!("BER grid value {p} outside [0, 0.5]")));
        }
        if let Some(v) = s.snr_grid_db.iter().chain(&self.modem.snr_grid_db).find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("SNR grid value {v}")));
        }
        let [lo, hi] = s.dq_ber_range;
        if !(0.0..=0.5).contains(&lo) || !(0.0..=0.5).contains(&hi) || lo > hi {
            return Err(Error::invalid(format!("dq_ber_range [{lo}, {hi}]")));
        }
        if self.modem.n_bits == 0 {
            return Err(Error::invalid("modem n_bits must be positive"));
        }
        Ok(())
    }

    pub fn train_set(&self) -> Result<ImageSet> {
        let a = &self.train.arch;
        gen_synthetic_dataset(self.data.n, (a.height, a.width), self.data.seed)
    }

    pub fn eval_set(&self) -> Result<ImageSet> {
        let a = &self.train.arch;
        gen_synthetic_dataset(self.data.eval_n, (a.height, a.width), self.data.eval_seed)
    }
}
