use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sdac::channel::Modulation;
use sdac::codec::{train, TrainConfig, PROBE_BERS};
use sdac::harness::checkpoint::Checkpoint;
use sdac::harness::config::ExperimentConfig;
use sdac::harness::data::{gen_synthetic_dataset, ImageSet};
use sdac::harness::pgm::{load_pgm_dir, save_pgm_dir, PgmEncoding};
use sdac::harness::report::{csv_string, history_csv, ResultRow};
use sdac::harness::sweep::{bsc_rows, modem_csv, modem_table, rate_summary, sweep_modulation, sweep_q, train_or_load};
use sdac::sdac::AseWeights;

/// Semantic digital-analog converter toolkit.
#[derive(Parser, Debug)]
#[command(name = "sdac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Master seed. For `gen-data` it seeds the generated images.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML experiment configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output path. CSV commands print to stdout without it.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic images as PGM files into the `--out` directory.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        /// Write ASCII (P2) instead of binary (P5).
        #[arg(long)]
        ascii: bool,
    },
    /// Train a link and write a checkpoint plus `<out>.history.csv`.
    Train {
        #[command(flatten)]
        train: TrainFlags,
        /// Directory of PGM training images instead of synthetic ones.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over a BSC at each BER.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Comma-separated BERs; defaults to the config's grid.
        #[arg(long, value_delimiter = ',')]
        ber: Option<Vec<f64>>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Which synthetic set to evaluate on.
        #[arg(long, value_enum, default_value_t = Split::Eval)]
        split: Split,
    },
    /// PSNR, MS-SSIM and ASE over the q and BER grids.
    SweepQ {
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long, value_delimiter = ',')]
        q_grid: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        ber_grid: Option<Vec<f64>>,
        /// Cache trained models here.
        #[arg(long, value_name = "DIR")]
        checkpoint_dir: Option<PathBuf>,
    },
    /// sDAC, DQ and CM over each modulation and SNR; also writes a rate summary.
    SweepMod {
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long, value_delimiter = ',')]
        snr_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        modulations: Option<Vec<Modulation>>,
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
        #[arg(long, value_name = "DIR")]
        checkpoint_dir: Option<PathBuf>,
    },
    /// ASE decomposition of a checkpoint, or of an sDAC link per q.
    AseReport {
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        q_grid: Option<Vec<usize>>,
        /// Comma-separated BERs.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        ber: Vec<f64>,
        /// ASE weights `alpha,beta,gamma`.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, value_name = "DIR")]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Closed-form against simulated BER for every modulation.
    ModemVerify {
        #[arg(long)]
        n_bits: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        snr_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        modulations: Option<Vec<Modulation>>,
    },
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    modulation: Option<Modulation>,
    /// Synthetic training images.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Eval,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        let t = &mut cfg.train;
        if let Some(v) = &self.scheme {
            t.scheme = v.clone();
        }
        if let Some(v) = self.q {
            t.q = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lambda {
            t.lambda = v;
        }
        if let Some(v) = &self.optimizer {
            t.optimizer = v.clone();
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.modulation {
            t.modulation = v;
        }
        if let Some(v) = self.n {
            cfg.data.n = v;
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    }
}

fn training_images(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<ImageSet> {
    Ok(match dir {
        Some(d) => load_pgm_dir(d)?,
        None => cfg.train_set()?,
    })
}

/// `<out>` with `suffix` appended to its file name.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    let mut cfg = load_config(common)?;
    match &cli.command {
        Command::GenData { n, ascii } => {
            let n = n.unwrap_or(cfg.data.n);
            let seed = common.seed.unwrap_or(cfg.data.seed);
            let a = &cfg.train.arch;
            let set = gen_synthetic_dataset(n, (a.height, a.width), seed)?;
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("data"));
            let enc = if *ascii { PgmEncoding::Ascii } else { PgmEncoding::Binary };
            save_pgm_dir(&dir, &set, enc)?;
            eprintln!("wrote {n} images to {}", dir.display());
        }
        Command::Train { train: flags, data } => {
            flags.apply(&mut cfg);
            cfg.validate()?;
            let images = training_images(&cfg, data.as_deref())?;
            let (model, history) = train(&images, &cfg.train)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("model.ckpt"));
            Checkpoint::from_model(&model, &cfg.train).save(&out)?;
            let hist_path = sibling(&out, ".history.csv");
            fs::write(&hist_path, history_csv(&history)).with_context(|| format!("writing {}", hist_path.display()))?;
            if let Some(last) = history.epochs.last() {
                for (p, v) in PROBE_BERS.iter().zip(last.psnr) {
                    eprintln!("ber {p}: psnr {v} dB");
                }
            }
            eprintln!("checkpoint {}, history {}", out.display(), hist_path.display());
        }
        Command::Eval { checkpoint, ber, data, split } => {
            let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let tcfg: TrainConfig = TrainConfig {
                seed: common.seed.unwrap_or(ck.config.seed),
                ..ck.config.clone()
            };
            cfg.train.arch = tcfg.arch;
            cfg.validate()?;
            let model = ck.to_model()?;
            let images = match (data, split) {
                (Some(d), _) => load_pgm_dir(d)?,
                (None, Split::Train) => cfg.train_set()?,
                (None, Split::Eval) => cfg.eval_set()?,
            };
            let bers = ber.clone().unwrap_or_else(|| cfg.sweep.ber_grid.clone());
            let rows = bsc_rows(&model, &tcfg, &images, &bers, cfg.sweep.ase_weights)?;
            write_output(common.out.as_deref(), &csv_string(&rows)?)?;
        }
        Command::SweepQ { train: flags, q_grid, ber_grid, checkpoint_dir } => {
            flags.apply(&mut cfg);
            if let Some(v) = q_grid {
                cfg.sweep.q_grid = v.clone();
            }
            if let Some(v) = ber_grid {
                cfg.sweep.ber_grid = v.clone();
            }
            if checkpoint_dir.is_some() {
                cfg.sweep.checkpoint_dir = checkpoint_dir.clone();
            }
            cfg.validate()?;
            let rows = sweep_q(&cfg, &cfg.train_set()?, &cfg.eval_set()?)?;
            write_output(common.out.as_deref(), &csv_string(&rows)?)?;
        }
        Command::SweepMod { train: flags, snr_grid, modulations, schemes, checkpoint_dir } => {
            flags.apply(&mut cfg);
            if let Some(v) = snr_grid {
                cfg.sweep.snr_grid_db = v.clone();
            }
            if let Some(v) = modulations {
                cfg.sweep.modulations = v.clone();
            }
            if let Some(v) = schemes {
                cfg.sweep.schemes = v.clone();
            }
            if checkpoint_dir.is_some() {
                cfg.sweep.checkpoint_dir = checkpoint_dir.clone();
            }
            cfg.validate()?;
            let (rows, rates) = sweep_modulation(&cfg, &cfg.train_set()?, &cfg.eval_set()?)?;
            let target = cfg.train.q * cfg.train.arch.latent.positions();
            let summary = rate_summary(&rates, target);
            write_output(common.out.as_deref(), &csv_string(&rows)?)?;
            match &common.out {
                Some(out) => {
                    let path = sibling(out, ".summary.txt");
                    fs::write(&path, &summary).with_context(|| format!("writing {}", path.display()))?;
                }
                None => eprint!("{summary}"),
            }
        }
        Command::AseReport { train: flags, checkpoint, q_grid, ber, weights, checkpoint_dir } => {
            flags.apply(&mut cfg);
            if let Some(v) = q_grid {
                cfg.sweep.q_grid = v.clone();
            }
            if let Some(w) = weights {
                if w.len() != 3 {
                    bail!("--weights takes three values, got {}", w.len());
                }
                cfg.sweep.ase_weights = AseWeights {
                    alpha: w[0],
                    beta: w[1],
                    gamma: w[2],
                };
            }
            if checkpoint_dir.is_some() {
                cfg.sweep.checkpoint_dir = checkpoint_dir.clone();
            }
            let rows = ase_rows(&mut cfg, checkpoint.as_deref(), ber)?;
            for r in &rows {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
                eprintln!(
                    "{} q={} ber={} ase={} kl={} quant={}",
                    r.scheme,
                    r.q.map_or("-".into(), |q| q.to_string()),
                    r.ber,
                    fmt(r.ase),
                    fmt(r.ase_kl),
                    fmt(r.ase_quant)
                );
            }
            write_output(common.out.as_deref(), &csv_string(&rows)?)?;
        }
        Command::ModemVerify { n_bits, snr_grid, modulations } => {
            if let Some(v) = modulations {
                cfg.modem.modulations = v.clone();
            }
            if let Some(v) = n_bits {
                cfg.modem.n_bits = *v;
            }
            if let Some(v) = snr_grid {
                cfg.modem.snr_grid_db = v.clone();
            }
            cfg.validate()?;
            let rows = modem_table(&cfg.modem, cfg.train.seed)?;
            eprintln!("{:<6} {:>6} {:>14} {:>14} {:>9} status", "mod", "snr_db", "closed_form", "monte_carlo", "delta");
            for r in &rows {
                let status = match (r.checked, r.pass) {
                    (false, _) => "skip",
                    (true, true) => "ok",
                    (true, false) => "FAIL",
                };
                eprintln!(
                    "{:<6} {:>6} {:>14.6e} {:>14.6e} {:>8.3}% {status}",
                    r.modulation.name(),
                    r.snr_db,
                    r.closed_form,
                    r.monte_carlo,
                    100.0 * r.rel_error
                );
            }
            write_output(common.out.as_deref(), &modem_csv(&rows))?;
            let failed = rows.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                bail!("{failed} of {} grid points exceed the {} relative tolerance", rows.len(), cfg.modem.tolerance);
            }
        }
    }
    Ok(())
}

fn ase_rows(cfg: &mut ExperimentConfig, checkpoint: Option<&Path>, bers: &[f64]) -> Result<Vec<ResultRow>> {
    if let Some(path) = checkpoint {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        cfg.train.arch = ck.config.arch;
        cfg.validate()?;
        return Ok(bsc_rows(&ck.to_model()?, &ck.config, &cfg.eval_set()?, bers, cfg.sweep.ase_weights)?);
    }
    cfg.validate()?;
    let (train_set, eval_set) = (cfg.train_set()?, cfg.eval_set()?);
    let mut rows = Vec::new();
    for &q in &cfg.sweep.q_grid {
        let tcfg = TrainConfig {
            scheme: "sdac".into(),
            q,
            ..cfg.train.clone()
        };
        let (model, _) = train_or_load(&tcfg, &train_set, cfg.sweep.checkpoint_dir.as_deref(), &format!("q{q}"))?;
        rows.extend(bsc_rows(&model, &tcfg, &eval_set, bers, cfg.sweep.ase_weights)?);
    }
    Ok(rows)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
