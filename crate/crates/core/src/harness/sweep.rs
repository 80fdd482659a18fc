//! Grid experiments: quantization order, modulation, and the modem check.

use std::fmt::Write as _;
use std::path::Path;

use crate::baselines::cm::values_per_symbol;
use crate::channel::{ber_gray_exact, db_to_linear, mc_modem_ber, ChannelSpec, Modulation};
use crate::codec::{evaluate, forward_link, train, History, Model, TrainConfig};
use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{ExperimentConfig, ModemConfig};
use crate::harness::data::ImageSet;
use crate::harness::metrics::{ms_ssim, psnr};
use crate::harness::report::ResultRow;
use crate::numerics::SeededRng;
use crate::sdac::{ase, AseReport, AseWeights};

const CHUNK: usize = 256;

/// Trains `cfg`, or loads `<dir>/<scheme>-<tag>.ckpt` when it exists and
/// echoes the same configuration. Fresh models are saved there.
pub fn train_or_load(cfg: &TrainConfig, data: &ImageSet, dir: Option<&Path>, tag: &str) -> Result<(Model, Option<History>)> {
    let path = dir.map(|d| d.join(format!("{}-{tag}.ckpt", cfg.scheme)));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let ck = Checkpoint::load(p)?;
        if ck.config == *cfg {
            return Ok((ck.to_model()?, None));
        }
    }
    let (model, history) = train(data, cfg)?;
    if let Some(p) = path {
        if let Some(d) = p.parent() {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Checkpoint::from_model(&model, cfg).save(&p)?;
    }
    Ok((model, Some(history)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMetrics {
    pub psnr_db: f64,
    pub ms_ssim: f64,
    /// Present for codebook schemes.
    pub ase: Option<AseReport>,
}

/// PSNR, MS-SSIM and, for sDAC, the ASE decomposition over `data` sent
/// through `channel`. Reconstructions are clamped to `[0, 1]`.
pub fn evaluate_point(
    data: &ImageSet,
    model: &Model,
    channel: &ChannelSpec,
    weights: AseWeights,
    rng: &mut SeededRng,
) -> Result<PointMetrics> {
    let Some(state) = model.scheme.sdac_state() else {
        let m = evaluate(data, &model.codec, model.scheme.as_ref(), channel, true, rng)?;
        return Ok(PointMetrics {
            psnr_db: m.psnr_db,
            ms_ssim: m.ms_ssim.expect("requested"),
            ase: None,
        });
    };
    let p = channel.equivalent_flip_probability()?;
    let (h, w) = (data.height(), data.width());
    let (mut psnr_sum, mut ssim_sum) = (0.0, 0.0);
    let mut acc = AseReport::default();
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(CHUNK) {
        let x = data.batch(chunk)?;
        let (xr, d) = forward_link(&x, &model.codec, state, p, rng)?;
        let xr = xr.map(|v| v.clamp(0.0, 1.0));
        for k in 0..chunk.len() {
            let a = &x.data()[k * h * w..(k + 1) * h * w];
            let b = &xr.data()[k * h * w..(k + 1) * h * w];
            psnr_sum += psnr(a, b)?;
            ssim_sum += ms_ssim(a, b, h, w)?;
        }
        let r = ase(&d.s, &d.s_prime, &d.s_hat_prime, &d.s_hat, &d.selected, weights)?;
        let share = chunk.len() as f64;
        acc.kl += r.kl * share;
        acc.channel += r.channel * share;
        acc.quant += r.quant * share;
        acc.total += r.total * share;
    }
    let n = data.len() as f64;
    Ok(PointMetrics {
        psnr_db: psnr_sum / n,
        ms_ssim: ssim_sum / n,
        ase: Some(AseReport {
            kl: acc.kl / n,
            channel: acc.channel / n,
            quant: acc.quant / n,
            total: acc.total / n,
        }),
    })
}

fn row(scheme: &str, q: Option<usize>, modulation: &str, ber: f64, snr_db: Option<f64>, m: &PointMetrics, seed: u64) -> ResultRow {
    ResultRow {
        scheme: scheme.to_string(),
        q,
        modulation: modulation.to_string(),
        ber,
        snr_db,
        psnr_db: m.psnr_db,
        ms_ssim: m.ms_ssim,
        ase: m.ase.map(|a| a.total),
        ase_kl: m.ase.map(|a| a.kl),
        ase_quant: m.ase.map(|a| a.quant),
        seed,
    }
}

/// Rows for one trained model over a bare BSC at each BER in `bers`.
pub fn bsc_rows(model: &Model, cfg: &TrainConfig, data: &ImageSet, bers: &[f64], weights: AseWeights) -> Result<Vec<ResultRow>> {
    let q = model.scheme.bits_per_value().map(|b| b.round() as usize);
    bers.iter()
        .map(|&ber| {
            let m = evaluate_point(data, model, &ChannelSpec::bsc(ber)?, weights, &mut cfg.eval_rng(ber))?;
            Ok(row(model.scheme.name(), q, "bsc", ber, None, &m, cfg.seed))
        })
        .collect()
}

/// Trains an sDAC link for each `q` in the grid and evaluates it at each BER.
pub fn sweep_q(cfg: &ExperimentConfig, train_set: &ImageSet, eval_set: &ImageSet) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &q in &cfg.sweep.q_grid {
        let tcfg = TrainConfig {
            scheme: "sdac".into(),
            q,
            ..cfg.train.clone()
        };
        let (model, _) = train_or_load(&tcfg, train_set, cfg.sweep.checkpoint_dir.as_deref(), &format!("q{q}"))?;
        rows.extend(bsc_rows(&model, &tcfg, eval_set, &cfg.sweep.ber_grid, cfg.sweep.ase_weights)?);
    }
    Ok(rows)
}

/// Channel bits one image costs under a scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct RateLine {
    pub scheme: String,
    pub modulation: Option<Modulation>,
    pub latent_channels: usize,
    pub bits_per_image: usize,
    /// Relative difference to the sDAC budget.
    pub mismatch: f64,
}

/// Latent channels giving CM about `target_bits` per image: the nearest
/// integer to `target_bits / (h * w * bits_per_value)`, bumped by one when
/// the value count does not pair into I/Q symbols.
pub fn matched_cm_channels(target_bits: usize, modulation: Modulation, h: usize, w: usize) -> usize {
    let axes = values_per_symbol(modulation);
    let bits_per_value = modulation.bits_per_symbol() as f64 / axes as f64;
    let mut c = ((target_bits as f64 / (bits_per_value * (h * w) as f64)).round() as usize).max(1);
    if !(c * h * w).is_multiple_of(axes) {
        c += 1;
    }
    c
}

fn cm_bits(channels: usize, modulation: Modulation, h: usize, w: usize) -> usize {
    channels * h * w / values_per_symbol(modulation) * modulation.bits_per_symbol()
}

/// Rows for every scheme, modulation and SNR point, plus the rate table.
///
/// sDAC and DQ are trained once at `train.q` and see the BSC whose flip
/// probability is the modulation's closed-form BER; CM is trained per
/// modulation over that modulation's AWGN channel, with its latent widened
/// or narrowed to match the sDAC bit budget.
pub fn sweep_modulation(
    cfg: &ExperimentConfig,
    train_set: &ImageSet,
    eval_set: &ImageSet,
) -> Result<(Vec<ResultRow>, Vec<RateLine>)> {
    cfg.validate()?;
    let sweep = &cfg.sweep;
    let lat = cfg.train.arch.latent;
    let q = cfg.train.q;
    let target = q * lat.positions();
    let dir = sweep.checkpoint_dir.as_deref();
    let mut rates = Vec::new();
    // (scheme, modulation it was trained for, model, config)
    let mut models: Vec<(String, Option<Modulation>, Model, TrainConfig)> = Vec::new();
    for scheme in &sweep.schemes {
        match scheme.as_str() {
            "cm-lite" | "cm" => {
                for &m in &sweep.modulations {
                    let mut tcfg = TrainConfig {
                        scheme: "cm-lite".into(),
                        modulation: m,
                        ..cfg.train.clone()
                    };
                    tcfg.arch.latent.channels = matched_cm_channels(target, m, lat.height, lat.width);
                    let bits = cm_bits(tcfg.arch.latent.channels, m, lat.height, lat.width);
                    rates.push(RateLine {
                        scheme: "cm-lite".into(),
                        modulation: Some(m),
                        latent_channels: tcfg.arch.latent.channels,
                        bits_per_image: bits,
                        mismatch: bits as f64 / target as f64 - 1.0,
                    });
                    let (model, _) = train_or_load(&tcfg, train_set, dir, &format!("{}-q{q}", m.name()))?;
                    models.push(("cm-lite".into(), Some(m), model, tcfg));
                }
            }
            name => {
                let mut tcfg = TrainConfig {
                    scheme: name.to_string(),
                    ..cfg.train.clone()
                };
                if name == "dq" {
                    tcfg.ber_range = sweep.dq_ber_range;
                }
                let (model, _) = train_or_load(&tcfg, train_set, dir, &format!("q{q}"))?;
                let bits = model.scheme.bits_per_value().map_or(0, |b| (b * lat.positions() as f64).round() as usize);
                rates.push(RateLine {
                    scheme: model.scheme.name().to_string(),
                    modulation: None,
                    latent_channels: lat.channels,
                    bits_per_image: bits,
                    mismatch: bits as f64 / target as f64 - 1.0,
                });
                models.push((name.to_string(), None, model, tcfg));
            }
        }
    }
    let mut rows = Vec::new();
    for &m in &sweep.modulations {
        for &snr_db in &sweep.snr_grid_db {
            let ber = m.ber(db_to_linear(snr_db))?;
            let channel = ChannelSpec::modulated(m, snr_db)?;
            for (_, trained_for, model, tcfg) in &models {
                if trained_for.is_some_and(|t| t != m) {
                    continue;
                }
                let metrics = evaluate_point(eval_set, model, &channel, sweep.ase_weights, &mut tcfg.eval_rng(ber))?;
                let q = model.scheme.sdac_state().map(|s| s.order()).or(match model.scheme.name() {
                    "dq" => Some(tcfg.q),
                    _ => None,
                });
                rows.push(row(model.scheme.name(), q, m.name(), ber, Some(snr_db), &metrics, tcfg.seed));
            }
        }
    }
    Ok((rows, rates))
}

/// Plain-text summary of the rate matching.
pub fn rate_summary(rates: &[RateLine], target_bits: usize) -> String {
    let mut out = String::new();
    writeln!(out, "bit budget per image: {target_bits} (q * latent values)").expect("string write");
    writeln!(out, "CM latent channels = round(budget / (h * w * bits per value)), made even for I/Q pairing").expect("string write");
    for r in rates {
        let m = r.modulation.map_or("any".to_string(), |m| m.name().to_string());
        let flag = if r.bits_per_image == 0 {
            "analog, no bit budget"
        } else if r.mismatch.abs() > 1e-12 {
            "MISMATCH"
        } else {
            "matched"
        };
        writeln!(
            out,
            "{:<8} {:<6} channels={:<3} bits={:<5} mismatch={:+.2}% {flag}",
            r.scheme,
            m,
            r.latent_channels,
            r.bits_per_image,
            100.0 * r.mismatch
        )
        .expect("string write");
    }
    writeln!(out, "traditional (JPEG + LDPC): not implemented, out of scope; no rows emitted").expect("string write");
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModemRow {
    pub modulation: Modulation,
    pub snr_db: f64,
    pub closed_form: f64,
    pub exact: f64,
    pub monte_carlo: f64,
    /// `|closed_form - monte_carlo| / closed_form`.
    pub rel_error: f64,
    /// Whether the point is inside the checked region (`closed_form > min_ber`).
    pub checked: bool,
    pub pass: bool,
}

/// Closed-form, exact Gray-mapped and simulated BER over the configured grid.
/// Point `k` of the grid simulates at least `n_bits` bits (whole symbols)
/// with stream `k` of `seed`.
pub fn modem_table(cfg: &ModemConfig, seed: u64) -> Result<Vec<ModemRow>> {
    let root = SeededRng::new(seed);
    let mut rows = Vec::new();
    for &m in &cfg.modulations {
        for &snr_db in &cfg.snr_grid_db {
            let snr = db_to_linear(snr_db);
            let closed_form = m.ber(snr)?;
            let exact = ber_gray_exact(m, snr)?;
            let checked = closed_form > cfg.min_ber;
            let rng = root.split(rows.len() as u64);
            let bps = m.bits_per_symbol();
            let monte_carlo = mc_modem_ber(m, snr, cfg.n_bits.div_ceil(bps) * bps, &rng)?;
            let rel_error = (closed_form - monte_carlo).abs() / closed_form;
            rows.push(ModemRow {
                modulation: m,
                snr_db,
                closed_form,
                exact,
                monte_carlo,
                rel_error,
                checked,
                pass: !checked || rel_error < cfg.tolerance,
            });
        }
    }
    Ok(rows)
}

pub fn modem_csv(rows: &[ModemRow]) -> String {
    let mut out = String::from("modulation,snr_db,ber_closed_form,ber_exact_gray,ber_monte_carlo,rel_error,checked,pass\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e},{},{}",
            r.modulation.name(),
            r.snr_db,
            r.closed_form,
            r.exact,
            r.monte_carlo,
            r.rel_error,
            r.checked,
            r.pass
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecArch;
    use crate::harness::data::gen_synthetic_dataset;
    use crate::sdac::LatentShape;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.train.epochs = 1;
        cfg.train.batch_size = 8;
        cfg.train.arch = CodecArch {
            height: 16,
            width: 16,
            hidden: 8,
            latent: LatentShape::new(2, 2, 2).unwrap(),
        };
        cfg.sweep.q_grid = vec![1, 2];
        cfg.sweep.ber_grid = vec![0.0, 0.1];
        cfg.sweep.snr_grid_db = vec![0.0, 10.0];
        cfg.sweep.modulations = vec![Modulation::Bpsk, Modulation::Qam16];
        cfg
    }

    #[test]
    fn cm_rate_matching() {
        assert_eq!(matched_cm_channels(512, Modulation::Qpsk, 4, 4), 32);
        assert_eq!(matched_cm_channels(512, Modulation::Bpsk, 4, 4), 32);
        assert_eq!(matched_cm_channels(512, Modulation::Qam16, 4, 4), 16);
        assert_eq!(matched_cm_channels(512, Modulation::Qam64, 4, 4), 11);
        assert_eq!(cm_bits(11, Modulation::Qam64, 4, 4), 528);
        assert_eq!(matched_cm_channels(6, Modulation::Qpsk, 1, 3), 2);
    }

    #[test]
    fn sweep_q_grid_order_and_determinism() {
        let cfg = tiny();
        let train_set = gen_synthetic_dataset(16, (16, 16), 1).unwrap();
        let eval_set = gen_synthetic_dataset(4, (16, 16), 2).unwrap();
        let a = sweep_q(&cfg, &train_set, &eval_set).unwrap();
        let b = sweep_q(&cfg, &train_set, &eval_set).unwrap();
        assert_eq!(a, b);
        let keys: Vec<(Option<usize>, f64)> = a.iter().map(|r| (r.q, r.ber)).collect();
        assert_eq!(keys, vec![(Some(1), 0.0), (Some(1), 0.1), (Some(2), 0.0), (Some(2), 0.1)]);
        assert!(a.iter().all(|r| r.ase.is_some() && r.snr_db.is_none()));
    }

    #[test]
    fn sweep_modulation_rows_and_rates() {
        let cfg = tiny();
        let train_set = gen_synthetic_dataset(16, (16, 16), 1).unwrap();
        let eval_set = gen_synthetic_dataset(4, (16, 16), 2).unwrap();
        let (rows, rates) = sweep_modulation(&cfg, &train_set, &eval_set).unwrap();
        // 2 modulations x 2 SNRs x (sdac, dq, cm-lite)
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[0].scheme, "sdac");
        assert_eq!(rows[2].scheme, "cm-lite");
        assert!(rows[2].q.is_none() && rows[2].ase.is_none());
        let sdac_bits = rates.iter().find(|r| r.scheme == "sdac").unwrap().bits_per_image;
        assert_eq!(sdac_bits, 4 * 8);
        assert_eq!(rates.iter().find(|r| r.scheme == "dq").unwrap().mismatch, 0.0);
        let summary = rate_summary(&rates, sdac_bits);
        assert!(summary.contains("traditional"));
    }

    #[test]
    fn checkpoint_cache_is_reused() {
        let mut cfg = tiny();
        cfg.sweep.q_grid = vec![1];
        let dir = tempfile::tempdir().unwrap();
        cfg.sweep.checkpoint_dir = Some(dir.path().to_path_buf());
        let train_set = gen_synthetic_dataset(16, (16, 16), 1).unwrap();
        let eval_set = gen_synthetic_dataset(4, (16, 16), 2).unwrap();
        let a = sweep_q(&cfg, &train_set, &eval_set).unwrap();
        assert!(dir.path().join("sdac-q1.ckpt").exists());
        let b = sweep_q(&cfg, &train_set, &eval_set).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn modem_table_small_grid() {
        let cfg = ModemConfig {
            snr_grid_db: vec![0.0, 20.0],
            modulations: vec![Modulation::Bpsk],
            n_bits: 200_000,
            ..ModemConfig::default()
        };
        let rows = modem_table(&cfg, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].checked && rows[0].pass, "{:?}", rows[0]);
        assert!(!rows[1].checked && rows[1].pass);
        assert!(modem_csv(&rows).starts_with("modulation,snr_db"));
    }
}
