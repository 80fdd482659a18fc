use serde::{Deserialize, Serialize};

use crate::baselines::{build_scheme, ChannelDraw, Scheme, SchemeOptions};
use crate::channel::{ChannelSpec, Modulation};
use crate::error::{Error, Result};
use crate::harness::data::ImageSet;
use crate::numerics::{DenseTensor, Gradient, ParamSet, SeededRng, Tape};
use crate::sdac::LossWeights;

use super::link::evaluate;
use super::network::{decode_graph, encode_graph, CodecArch, CodecParams};
use super::optim::optimizer;

/// BERs at which PSNR is recorded after every epoch.
pub const PROBE_BERS: [f64; 3] = [0.0, 0.05, 0.1];

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const CHANNEL_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 1 << 32;

const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_EPOCHS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scheme: String,
    pub q: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub ber_range: [f64; 2],
    /// SNR range (dB) for schemes trained over a modulated channel.
    pub snr_range_db: [f64; 2],
    pub per_sample_ber: bool,
    pub optimizer: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub freeze_codec: bool,
    pub modulation: Modulation,
    pub clip_range: [f64; 2],
    pub arch: CodecArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: "sdac".into(),
            q: 4,
            lambda: 1.0,
            alpha: 0.8,
            beta: 0.2,
            ber_range: [0.0, 0.3],
            snr_range_db: [0.0, 14.0],
            per_sample_ber: false,
            optimizer: "adam".into(),
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            freeze_codec: false,
            modulation: Modulation::Qpsk,
            clip_range: [-1.0, 1.0],
            arch: CodecArch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_weights()?;
        let [lo, hi] = self.ber_range;
        if !(0.0..=0.5).contains(&lo) || !(0.0..=0.5).contains(&hi) || lo > hi {
            return Err(Error::invalid(format!("ber_range [{lo}, {hi}] not within [0, 0.5]")));
        }
        let [slo, shi] = self.snr_range_db;
        if !slo.is_finite() || !shi.is_finite() || slo > shi {
            return Err(Error::invalid(format!("snr_range_db [{slo}, {shi}]")));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda {} must be a finite value >= 0", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        self.arch.validate()
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.alpha, self.beta)
    }

    pub fn scheme_options(&self) -> Result<SchemeOptions> {
        Ok(SchemeOptions {
            q: self.q,
            latent_channels: self.arch.latent.channels,
            loss_weights: self.loss_weights()?,
            clip_range: (self.clip_range[0], self.clip_range[1]),
            modulation: self.modulation,
        })
    }

    /// Generator for evaluation at bit error rate `ber`. Depends only on the
    /// seed and `ber`, so probes during training and later evaluations of a
    /// checkpoint see the same channel draws.
    pub fn eval_rng(&self, ber: f64) -> SeededRng {
        SeededRng::new(self.seed).split(EVAL_STREAM.wrapping_add(ber.to_bits()))
    }
}

/// Semantic codec plus the scheme carrying its latents.
pub struct Model {
    pub codec: CodecParams,
    pub scheme: Box<dyn Scheme>,
}

impl Model {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(cfg.seed).split(INIT_STREAM);
        let codec = CodecParams::init(cfg.arch, &mut rng)?;
        let scheme = build_scheme(&cfg.scheme, &cfg.scheme_options()?, &mut rng)?;
        Ok(Self { codec, scheme })
    }

    /// Codec and scheme parameters in one set.
    pub fn params(&self) -> ParamSet {
        let mut all = self.codec.params.clone();
        all.extend(self.scheme.params());
        all
    }

    pub fn load_params(&mut self, params: &ParamSet) -> Result<()> {
        self.codec = CodecParams::from_params(self.codec.arch, params.clone())?;
        if !self.scheme.params().is_empty() {
            self.scheme.load_params(params)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub total: f64,
    /// Reconstruction MSE.
    pub ori: f64,
    /// Scheme loss before weighting by `lambda`.
    pub aux: f64,
    pub channels: Vec<ChannelSpec>,
    pub grads: Gradient,
}

/// One channel per batch item: a single draw shared by the batch, or one
/// per item with `per_sample_ber`.
pub fn draw_channels(scheme: &dyn Scheme, cfg: &TrainConfig, batch: usize, rng: &mut SeededRng) -> Result<Vec<ChannelSpec>> {
    let draw = |rng: &mut SeededRng| {
        let [lo, hi] = cfg.ber_range;
        let [slo, shi] = cfg.snr_range_db;
        let ber = lo + (hi - lo) * rng.next_f64();
        let snr_db = slo + (shi - slo) * rng.next_f64();
        scheme.training_channel(ChannelDraw { ber, snr_db })
    };
    if cfg.per_sample_ber {
        (0..batch).map(|_| draw(rng)).collect()
    } else {
        Ok(vec![draw(rng)?; batch])
    }
}

/// Loss `MSE(x, x') + lambda * aux` and its gradient for a `[B,H,W]` batch
/// sent through `channels`.
pub fn train_step_on(
    batch: &DenseTensor,
    params: &ParamSet,
    arch: &CodecArch,
    scheme: &dyn Scheme,
    cfg: &TrainConfig,
    channels: &[ChannelSpec],
    rng: &mut SeededRng,
) -> Result<StepOutput> {
    let b = match batch.shape() {
        [b, h, w] if (*h, *w) == (arch.height, arch.width) && *b > 0 => *b,
        other => return Err(Error::shape(format!("training batch {other:?}"))),
    };
    if channels.len() != b {
        return Err(Error::shape(format!("{} channels for {b} images", channels.len())));
    }
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let x = tape.constant(batch.reshape(&[b, arch.pixels()])?);
    let s = encode_graph(x, &bound, arch)?;
    let link = scheme.link_graph(s, &bound, channels, rng)?;
    let s_hat = link.s_hat.reshape(&[b, arch.latent.positions()])?;
    let xr = decode_graph(s_hat, &bound)?;
    let ori = xr.sub(x)?.square()?.mean();
    let (total, aux) = match link.aux_loss {
        Some(aux) => (ori.add(aux.scale(cfg.lambda))?, aux.value().data()[0]),
        None => (ori, 0.0),
    };
    let value = total.value().data()[0];
    let ori_value = ori.value().data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss {value} (reconstruction {ori_value}, scheme {aux}) over {channels:?}"
        )));
    }
    let grads = bound.gradient(&tape.backward(total)?);
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!("gradient at loss {value}")));
    }
    Ok(StepOutput {
        total: value,
        ori: ori_value,
        aux,
        channels: channels.to_vec(),
        grads,
    })
}

/// Draws the batch's channels from `rng`, then takes one loss/gradient evaluation.
pub fn train_step(batch: &DenseTensor, model: &Model, cfg: &TrainConfig, rng: &mut SeededRng) -> Result<StepOutput> {
    let b = batch.shape().first().copied().unwrap_or(0);
    if b == 0 || batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let channels = draw_channels(model.scheme.as_ref(), cfg, b, rng)?;
    train_step_on(batch, &model.params(), &model.codec.arch, model.scheme.as_ref(), cfg, &channels, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Counts from 1.
    pub epoch: usize,
    pub loss: f64,
    /// PSNR (dB) at each of [`PROBE_BERS`].
    pub psnr: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    /// Probe PSNR of the untrained model; `None` when no epoch ran.
    pub initial_psnr: Option<[f64; 3]>,
    pub epochs: Vec<EpochRecord>,
}

/// Mean per-image PSNR at each probe BER, each with its own fixed generator.
pub fn probe_psnr(data: &ImageSet, model: &Model, cfg: &TrainConfig) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (k, &p) in PROBE_BERS.iter().enumerate() {
        let channel = probe_channel(model.scheme.as_ref(), cfg, p)?;
        let m = evaluate(data, &model.codec, model.scheme.as_ref(), &channel, false, &mut cfg.eval_rng(p))?;
        out[k] = m.psnr_db;
    }
    Ok(out)
}

/// Channel at bit error rate `p` as seen by `scheme`: a BSC for bit-level
/// schemes, a noiseless link at `p = 0` otherwise, and for analog schemes the
/// modulated channel whose Gray BER equals `p`.
pub fn probe_channel(scheme: &dyn Scheme, cfg: &TrainConfig, p: f64) -> Result<ChannelSpec> {
    match scheme.name() {
        "sdac" | "dq" => ChannelSpec::bsc(p),
        _ if p == 0.0 => ChannelSpec::bsc(0.0),
        _ => {
            let snr = crate::channel::snr_for_ber(p, cfg.modulation)?;
            ChannelSpec::modulated(cfg.modulation, crate::channel::linear_to_db(snr))
        }
    }
}

pub fn train(data: &ImageSet, cfg: &TrainConfig) -> Result<(Model, History)> {
    let model = Model::init(cfg)?;
    train_from(model, data, cfg)
}

/// Continues training `model` for `cfg.epochs` epochs.
pub fn train_from(mut model: Model, data: &ImageSet, cfg: &TrainConfig) -> Result<(Model, History)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if (data.height(), data.width()) != (cfg.arch.height, cfg.arch.width) {
        return Err(Error::shape(format!(
            "{}x{} images for a {}x{} codec",
            data.height(),
            data.width(),
            cfg.arch.height,
            cfg.arch.width
        )));
    }
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok((model, history));
    }
    history.initial_psnr = Some(probe_psnr(data, &model, cfg)?);

    let root = SeededRng::new(cfg.seed);
    let mut shuffle_rng = root.split(SHUFFLE_STREAM);
    let mut channel_rng = root.split(CHANNEL_STREAM);
    let mut opt = optimizer(&cfg.optimizer, cfg.learning_rate)?;
    let mut params = model.params();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut first_loss = None;
    let mut over = 0;

    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk)?;
            let channels = draw_channels(model.scheme.as_ref(), cfg, chunk.len(), &mut channel_rng)?;
            let out = train_step_on(
                &batch,
                &params,
                &cfg.arch,
                model.scheme.as_ref(),
                cfg,
                &channels,
                &mut channel_rng,
            )?;
            let mut grads = out.grads;
            if cfg.freeze_codec {
                grads.retain(|name| !name.starts_with("enc.") && !name.starts_with("dec."));
            }
            opt.step(&mut params, &grads)?;
            sum += out.total * chunk.len() as f64;
        }
        model.load_params(&params)?;
        let loss = sum / data.len() as f64;
        let reference = *first_loss.get_or_insert(loss);
        over = if loss > DIVERGENCE_FACTOR * reference { over + 1 } else { 0 };
        if over >= DIVERGENCE_EPOCHS {
            return Err(Error::Diverged(format!(
                "epoch {epoch}: loss {loss} above {DIVERGENCE_FACTOR}x the first epoch's {reference} for {over} epochs"
            )));
        }
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss,
            psnr: probe_psnr(data, &model, cfg)?,
        });
    }
    Ok((model, history))
}
