//! Constellation mapping ("CM-lite"): latent values are used directly as
//! constellation coordinates and snapped to the nearest point.

use serde::{Deserialize, Serialize};

use crate::channel::{db_to_linear, Constellation, Modulation};
use crate::error::{Error, Result};
use crate::numerics::{DenseTensor, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmConfig {
    pub modulation: Modulation,
}

/// Number of latent values carried by one symbol: 1 for BPSK, 2 otherwise.
pub fn values_per_symbol(modulation: Modulation) -> usize {
    Constellation::new(modulation).axes()
}

/// Snaps consecutive value pairs (single values for BPSK) to the nearest
/// constellation point. Returns the projected values, laid out like `s`,
/// and one label per symbol.
pub fn cm_project(s: &DenseTensor, cfg: &CmConfig) -> Result<(DenseTensor, Vec<usize>)> {
    let c = Constellation::new(cfg.modulation);
    let axes = c.axes();
    if !s.len().is_multiple_of(axes) {
        return Err(Error::shape(format!(
            "{} values do not pair into I/Q symbols",
            s.len()
        )));
    }
    let mut out = Vec::with_capacity(s.len());
    let mut labels = Vec::with_capacity(s.len() / axes);
    for sym in s.data().chunks_exact(axes) {
        let (i, q) = (sym[0], if axes == 2 { sym[1] } else { 0.0 });
        let label = c.nearest(i, q);
        let (pi, pq) = c.point(label);
        out.push(pi);
        if axes == 2 {
            out.push(pq);
        }
        labels.push(label);
    }
    Ok((DenseTensor::new(s.shape().to_vec(), out)?, labels))
}

/// Projects `s`, adds complex Gaussian noise at reference SNR `snr_db`, and
/// hard-demodulates back to constellation coordinates.
pub fn cm_transmit(
    s: &DenseTensor,
    cfg: &CmConfig,
    snr_db: f64,
    rng: &mut SeededRng,
) -> Result<DenseTensor> {
    let (projected, _) = cm_project(s, cfg)?;
    if snr_db == f64::INFINITY {
        return Ok(projected);
    }
    let sigma = (0.5 / cfg.modulation.symbol_snr(db_to_linear(snr_db))).sqrt();
    let noisy = projected
        .data()
        .iter()
        .map(|&v| v + sigma * rng.standard_normal())
        .collect();
    let (received, _) = cm_project(&DenseTensor::new(s.shape().to_vec(), noisy)?, cfg)?;
    Ok(received)
}
