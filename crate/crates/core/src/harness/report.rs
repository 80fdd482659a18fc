use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{History, PROBE_BERS};
use crate::error::{Error, Result};

/// The exact CSV header, in field order.
pub const CSV_HEADER: &str = "scheme,q,modulation,ber,snr_db,psnr_db,ms_ssim,ase,ase_kl,ase_quant,seed";

/// One evaluated grid point. Fields that do not apply to a scheme (`q` for
/// CM, SNR on a bare BSC, ASE for anything without a codebook) are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: String,
    pub q: Option<usize>,
    pub modulation: String,
    pub ber: f64,
    pub snr_db: Option<f64>,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub ase: Option<f64>,
    pub ase_kl: Option<f64>,
    pub ase_quant: Option<f64>,
    pub seed: u64,
}

impl ResultRow {
    pub fn validate(&self) -> Result<()> {
        let numbers = [Some(self.ber), self.snr_db, Some(self.psnr_db), Some(self.ms_ssim), self.ase, self.ase_kl, self.ase_quant];
        if numbers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("result row {self:?}")));
        }
        Ok(())
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for row in rows {
        row.validate()?;
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn save_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, csv_string(rows)?).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::parse(path.display().to_string(), format!("header `{}`", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Training history as CSV: one row per epoch, PSNR columns at each probe
/// BER, and an epoch-0 row (empty loss) for the untrained model.
pub fn history_csv(history: &History) -> String {
    let mut out = String::from("epoch,loss");
    for p in PROBE_BERS {
        out.push_str(&format!(",psnr_ber_{p}"));
    }
    out.push('\n');
    let mut line = |epoch: usize, loss: Option<f64>, psnr: &[f64; 3]| {
        out.push_str(&format!("{epoch},{}", loss.map_or(String::new(), |l| l.to_string())));
        for v in psnr {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    };
    if let Some(p) = &history.initial_psnr {
        line(0, None, p);
    }
    for e in &history.epochs {
        line(e.epoch, Some(e.loss), &e.psnr);
    }
    out
}
