use crate::channel::{awgn_transmit, bsc_transmit, BitSequence, ChannelSpec, Modulation};
use crate::error::{Error, Result};
use crate::numerics::{BoundParams, DenseTensor, ParamSet, SeededRng, Var};
use crate::sdac::{
    quantize, sdac_loss_graph, AdapterParams, Codebook, LossWeights, Reduction, SdacState, CODEBOOK,
    COMBINE_B, COMBINE_W, EXPAND_B, EXPAND_W,
};

use super::cm::{cm_transmit, values_per_symbol, CmConfig};
use super::dq::{dq_dequantize, dq_quantize, DqConfig};

/// Random channel draw for one training batch; each scheme picks the part it uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelDraw {
    pub ber: f64,
    pub snr_db: f64,
}

/// Scheme output recorded on the tape.
pub struct GraphLink<'t> {
    pub s_hat: Var<'t>,
    /// Scheme-specific training loss, added with weight `lambda`.
    pub aux_loss: Option<Var<'t>>,
}

/// A way of carrying a `[B,C,h,w]` latent batch across a channel.
pub trait Scheme {
    fn name(&self) -> &'static str;

    /// Channel bits per latent value, `None` for analog transmission.
    fn bits_per_value(&self) -> Option<f64>;

    fn params(&self) -> ParamSet {
        ParamSet::new()
    }

    fn load_params(&mut self, _params: &ParamSet) -> Result<()> {
        Ok(())
    }

    fn training_channel(&self, draw: ChannelDraw) -> Result<ChannelSpec>;

    /// Differentiable link for training. `channels` holds one entry per batch item.
    fn link_graph<'t>(
        &self,
        s: Var<'t>,
        bound: &BoundParams<'t>,
        channels: &[ChannelSpec],
        rng: &mut SeededRng,
    ) -> Result<GraphLink<'t>>;

    /// Inference link: latents in, received latents out.
    fn transmit(&self, s: &DenseTensor, channel: &ChannelSpec, rng: &mut SeededRng) -> Result<DenseTensor>;

    fn sdac_state(&self) -> Option<&SdacState> {
        None
    }
}

/// Flips each batch item's slice of `bits` at that item's flip probability.
pub fn flip_per_item(
    bits: &BitSequence,
    channels: &[ChannelSpec],
    rng: &mut SeededRng,
) -> Result<BitSequence> {
    if channels.is_empty() || !bits.len().is_multiple_of(channels.len()) {
        return Err(Error::shape(format!(
            "{} bits over {} batch items",
            bits.len(),
            channels.len()
        )));
    }
    let per = bits.len() / channels.len();
    let mut out = Vec::with_capacity(bits.len());
    for (k, ch) in channels.iter().enumerate() {
        let slice = BitSequence::new(bits.as_slice()[k * per..(k + 1) * per].to_vec())?;
        out.extend_from_slice(bsc_transmit(&slice, ch.equivalent_flip_probability()?, rng)?.as_slice());
    }
    BitSequence::new(out)
}

fn batch_of(s: &DenseTensor) -> Result<usize> {
    match s.shape() {
        [b, _, _, _] => Ok(*b),
        other => Err(Error::shape(format!("expected [B,C,h,w] latents, got {other:?}"))),
    }
}

/// `s + sg[received - s]`.
fn straight_through<'t>(s: Var<'t>, received: DenseTensor) -> Result<Var<'t>> {
    let r = s.tape().constant(received);
    s.add(r.sub(s)?.stop_gradient())
}

pub struct SdacScheme {
    pub state: SdacState,
    pub weights: LossWeights,
}

impl Scheme for SdacScheme {
    fn name(&self) -> &'static str {
        "sdac"
    }

    fn bits_per_value(&self) -> Option<f64> {
        Some(self.state.order() as f64)
    }

    fn params(&self) -> ParamSet {
        self.state.to_params()
    }

    fn load_params(&mut self, params: &ParamSet) -> Result<()> {
        self.state = SdacState::from_params(params)?;
        Ok(())
    }

    fn training_channel(&self, draw: ChannelDraw) -> Result<ChannelSpec> {
        ChannelSpec::bsc(draw.ber)
    }

    fn link_graph<'t>(
        &self,
        s: Var<'t>,
        bound: &BoundParams<'t>,
        channels: &[ChannelSpec],
        rng: &mut SeededRng,
    ) -> Result<GraphLink<'t>> {
        let s_prime = s.group_expand(bound.var(EXPAND_W)?, bound.var(EXPAND_B)?)?;
        let codebook = bound.var(CODEBOOK)?;
        let cb = Codebook::new(self.state.order(), (*codebook.value()).clone())?;
        let (_, bits) = quantize(&s_prime.value(), &cb)?;
        let received = flip_per_item(&bits, channels, rng)?;
        let indices = crate::sdac::decode_indices(&received, cb.order())?;
        let g = sdac_loss_graph(
            s,
            s_prime,
            codebook,
            bound.var(COMBINE_W)?,
            bound.var(COMBINE_B)?,
            &indices,
            self.weights,
            Reduction::Mean,
        )?;
        Ok(GraphLink {
            s_hat: g.s_hat,
            aux_loss: Some(g.total),
        })
    }

    fn transmit(&self, s: &DenseTensor, channel: &ChannelSpec, rng: &mut SeededRng) -> Result<DenseTensor> {
        let batch = batch_of(s)?;
        let enc = self.state.encode(s)?;
        let received = flip_per_item(&enc.bits, &vec![*channel; batch], rng)?;
        let shape = crate::sdac::LatentShape::new(s.shape()[1], s.shape()[2], s.shape()[3])?;
        Ok(self.state.decode(&received, shape, batch)?.s_hat)
    }

    fn sdac_state(&self) -> Option<&SdacState> {
        Some(&self.state)
    }
}

pub struct DqScheme {
    pub cfg: DqConfig,
}

impl DqScheme {
    fn roundtrip(&self, s: &DenseTensor, channels: &[ChannelSpec], rng: &mut SeededRng) -> Result<DenseTensor> {
        let bits = dq_quantize(s, &self.cfg);
        let received = flip_per_item(&bits, channels, rng)?;
        dq_dequantize(&received, &self.cfg, s.shape())
    }
}

impl Scheme for DqScheme {
    fn name(&self) -> &'static str {
        "dq"
    }

    fn bits_per_value(&self) -> Option<f64> {
        Some(self.cfg.q as f64)
    }

    fn training_channel(&self, draw: ChannelDraw) -> Result<ChannelSpec> {
        ChannelSpec::bsc(draw.ber)
    }

    fn link_graph<'t>(
        &self,
        s: Var<'t>,
        _bound: &BoundParams<'t>,
        channels: &[ChannelSpec],
        rng: &mut SeededRng,
    ) -> Result<GraphLink<'t>> {
        let received = self.roundtrip(&s.value(), channels, rng)?;
        Ok(GraphLink {
            s_hat: straight_through(s, received)?,
            aux_loss: None,
        })
    }

    fn transmit(&self, s: &DenseTensor, channel: &ChannelSpec, rng: &mut SeededRng) -> Result<DenseTensor> {
        let batch = batch_of(s)?;
        self.roundtrip(s, &vec![*channel; batch], rng)
    }
}

pub struct CmScheme {
    pub cfg: CmConfig,
}

impl CmScheme {
    fn snr_db(&self, channel: &ChannelSpec) -> Result<f64> {
        match *channel {
            ChannelSpec::Modulated { modulation, snr_db } if modulation == self.cfg.modulation => Ok(snr_db),
            ChannelSpec::Bsc { flip_probability } if flip_probability == 0.0 => Ok(f64::INFINITY),
            other => Err(Error::invalid(format!(
                "cm-lite with {} needs a matching modulated channel, got {other:?}",
                self.cfg.modulation
            ))),
        }
    }

    fn roundtrip(&self, s: &DenseTensor, channels: &[ChannelSpec], rng: &mut SeededRng) -> Result<DenseTensor> {
        let per = s.len() / channels.len();
        let mut out = Vec::with_capacity(s.len());
        for (k, ch) in channels.iter().enumerate() {
            let part = DenseTensor::from_vec(s.data()[k * per..(k + 1) * per].to_vec())?;
            out.extend_from_slice(cm_transmit(&part, &self.cfg, self.snr_db(ch)?, rng)?.data());
        }
        DenseTensor::new(s.shape().to_vec(), out)
    }
}

impl Scheme for CmScheme {
    fn name(&self) -> &'static str {
        "cm-lite"
    }

    fn bits_per_value(&self) -> Option<f64> {
        let m = self.cfg.modulation;
        Some(m.bits_per_symbol() as f64 / values_per_symbol(m) as f64)
    }

    fn training_channel(&self, draw: ChannelDraw) -> Result<ChannelSpec> {
        ChannelSpec::modulated(self.cfg.modulation, draw.snr_db)
    }

    fn link_graph<'t>(
        &self,
        s: Var<'t>,
        _bound: &BoundParams<'t>,
        channels: &[ChannelSpec],
        rng: &mut SeededRng,
    ) -> Result<GraphLink<'t>> {
        let received = self.roundtrip(&s.value(), channels, rng)?;
        Ok(GraphLink {
            s_hat: straight_through(s, received)?,
            aux_loss: None,
        })
    }

    fn transmit(&self, s: &DenseTensor, channel: &ChannelSpec, rng: &mut SeededRng) -> Result<DenseTensor> {
        let batch = batch_of(s)?;
        self.roundtrip(s, &vec![*channel; batch], rng)
    }
}

/// Latents passed through unquantized: noiseless for a zero-flip BSC, AWGN
/// relative to the latent power on analog channels.
pub struct AnalogScheme;

impl AnalogScheme {
    fn roundtrip(s: &DenseTensor, channel: &ChannelSpec, rng: &mut SeededRng) -> Result<DenseTensor> {
        match *channel {
            ChannelSpec::Bsc { flip_probability } if flip_probability == 0.0 => Ok(s.clone()),
            ChannelSpec::Awgn { snr_db } | ChannelSpec::Modulated { snr_db, .. } => {
                awgn_transmit(s, snr_db, rng)
            }
            other => Err(Error::invalid(format!(
                "analog link cannot run over {other:?}"
            ))),
        }
    }
}

impl Scheme for AnalogScheme {
    fn name(&self) -> &'static str {
        "analog"
    }

    fn bits_per_value(&self) -> Option<f64> {
        None
    }

    fn training_channel(&self, _draw: ChannelDraw) -> Result<ChannelSpec> {
        ChannelSpec::bsc(0.0)
    }

    fn link_graph<'t>(
        &self,
        s: Var<'t>,
        _bound: &BoundParams<'t>,
        channels: &[ChannelSpec],
        rng: &mut SeededRng,
    ) -> Result<GraphLink<'t>> {
        let value = s.value();
        let per = value.len() / channels.len().max(1);
        let mut out = Vec::with_capacity(value.len());
        for (k, ch) in channels.iter().enumerate() {
            let part = DenseTensor::from_vec(value.data()[k * per..(k + 1) * per].to_vec())?;
            out.extend_from_slice(Self::roundtrip(&part, ch, rng)?.data());
        }
        Ok(GraphLink {
            s_hat: straight_through(s, DenseTensor::new(value.shape().to_vec(), out)?)?,
            aux_loss: None,
        })
    }

    fn transmit(&self, s: &DenseTensor, channel: &ChannelSpec, rng: &mut SeededRng) -> Result<DenseTensor> {
        Self::roundtrip(s, channel, rng)
    }
}

/// Everything a scheme constructor may need.
#[derive(Clone, Copy, Debug)]
pub struct SchemeOptions {
    pub q: usize,
    pub latent_channels: usize,
    pub loss_weights: LossWeights,
    pub clip_range: (f64, f64),
    pub modulation: Modulation,
}

pub const SCHEMES: &[&str] = &["sdac", "dq", "cm-lite", "analog"];

/// Builds a scheme by registry name. Learnable parts are initialized from `rng`.
pub fn build_scheme(name: &str, opts: &SchemeOptions, rng: &mut SeededRng) -> Result<Box<dyn Scheme>> {
    match name {
        "sdac" => Ok(Box::new(SdacScheme {
            state: SdacState::new(
                Codebook::init(opts.q, rng)?,
                AdapterParams::init(opts.latent_channels, opts.q, rng)?,
            )?,
            weights: opts.loss_weights,
        })),
        "dq" => Ok(Box::new(DqScheme {
            cfg: DqConfig::new(opts.q, opts.clip_range.0, opts.clip_range.1)?,
        })),
        "cm-lite" | "cm" => Ok(Box::new(CmScheme {
            cfg: CmConfig {
                modulation: opts.modulation,
            },
        })),
        "analog" => Ok(Box::new(AnalogScheme)),
        other => Err(Error::invalid(format!(
            "unknown scheme `{other}` (available: {})",
            SCHEMES.join(", ")
        ))),
    }
}
