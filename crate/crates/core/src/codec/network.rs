use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{BoundParams, DenseTensor, ParamSet, SeededRng, Tape, Var};
use crate::sdac::LatentShape;

pub const LAYERS: usize = 3;

/// Image size, hidden width and latent geometry of the toy autoencoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecArch {
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub latent: LatentShape,
}

impl Default for CodecArch {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            hidden: 128,
            latent: LatentShape {
                channels: 8,
                height: 4,
                width: 4,
            },
        }
    }
}

impl CodecArch {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn encoder_dims(&self) -> [usize; LAYERS + 1] {
        [self.pixels(), self.hidden, self.hidden, self.latent.positions()]
    }

    fn decoder_dims(&self) -> [usize; LAYERS + 1] {
        [self.latent.positions(), self.hidden, self.hidden, self.pixels()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels() == 0 || self.hidden == 0 || self.latent.positions() == 0 {
            return Err(Error::invalid(format!("degenerate codec architecture {self:?}")));
        }
        Ok(())
    }
}

pub fn weight_name(side: &str, layer: usize) -> String {
    format!("{side}.w{layer}")
}

pub fn bias_name(side: &str, layer: usize) -> String {
    format!("{side}.b{layer}")
}

/// Encoder and decoder weights. Each side is three affine layers. Every
/// encoder layer ends in `tanh`, so latents lie in `(-1, 1)`; the decoder
/// applies `tanh` after its first two layers and its final layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecParams {
    pub arch: CodecArch,
    pub params: ParamSet,
}

impl CodecParams {
    /// Uniform Glorot weights, zero biases.
    pub fn init(arch: CodecArch, rng: &mut SeededRng) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamSet::new();
        for (side, dims) in [("enc", arch.encoder_dims()), ("dec", arch.decoder_dims())] {
            for l in 0..LAYERS {
                let (i, o) = (dims[l], dims[l + 1]);
                let bound = (6.0 / (i + o) as f64).sqrt();
                params.insert(
                    weight_name(side, l + 1),
                    DenseTensor::new(vec![i, o], rng.uniform_range(i * o, -bound, bound))?,
                );
                params.insert(bias_name(side, l + 1), DenseTensor::zeros(&[o])?);
            }
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: CodecArch, params: ParamSet) -> Result<Self> {
        arch.validate()?;
        let mut own = ParamSet::new();
        for (side, dims) in [("enc", arch.encoder_dims()), ("dec", arch.decoder_dims())] {
            for l in 0..LAYERS {
                for (name, shape) in [
                    (weight_name(side, l + 1), vec![dims[l], dims[l + 1]]),
                    (bias_name(side, l + 1), vec![dims[l + 1]]),
                ] {
                    let t = params.get(&name)?;
                    if t.shape() != shape.as_slice() {
                        return Err(Error::shape(format!(
                            "`{name}` has shape {:?}, architecture needs {shape:?}",
                            t.shape()
                        )));
                    }
                    own.insert(name, t.clone());
                }
            }
        }
        Ok(Self { arch, params: own })
    }

    /// `[B,H,W]` (or `[H,W]`) images to `[B,C,h,w]` (or `[C,h,w]`) latents.
    pub fn encode(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let (batch, single) = self.image_batch(x)?;
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let flat = tape.constant(x.reshape(&[batch, self.arch.pixels()])?);
        let s = encode_graph(flat, &bound, &self.arch)?;
        let v = (*s.value()).clone();
        if single {
            v.into_reshaped(&self.arch.latent.dims())
        } else {
            Ok(v)
        }
    }

    /// Latents back to `[B,H,W]` (or `[H,W]`) images, unclamped.
    pub fn decode(&self, s_hat: &DenseTensor) -> Result<DenseTensor> {
        let positions = self.arch.latent.positions();
        let (batch, single) = match s_hat.shape() {
            [c, h, w] if [*c, *h, *w] == self.arch.latent.dims() => (1, true),
            [b, c, h, w] if [*c, *h, *w] == self.arch.latent.dims() => (*b, false),
            other => {
                return Err(Error::shape(format!(
                    "decode: latent {other:?} vs configured {:?}",
                    self.arch.latent.dims()
                )))
            }
        };
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let s = tape.constant(s_hat.reshape(&[batch, positions])?);
        let x = decode_graph(s, &bound)?;
        let v = (*x.value()).clone();
        if single {
            v.into_reshaped(&[self.arch.height, self.arch.width])
        } else {
            v.into_reshaped(&[batch, self.arch.height, self.arch.width])
        }
    }

    fn image_batch(&self, x: &DenseTensor) -> Result<(usize, bool)> {
        let (h, w) = (self.arch.height, self.arch.width);
        match x.shape() {
            [a, b] if (*a, *b) == (h, w) => Ok((1, true)),
            [n, a, b] if (*a, *b) == (h, w) => Ok((*n, false)),
            other => Err(Error::shape(format!(
                "encode: image {other:?} vs configured [{h}, {w}]"
            ))),
        }
    }
}

fn mlp<'t>(mut h: Var<'t>, bound: &BoundParams<'t>, side: &str) -> Result<Var<'t>> {
    for l in 1..=LAYERS {
        h = h
            .matmul(bound.var(&weight_name(side, l))?)?
            .add_bias(bound.var(&bias_name(side, l))?)?;
        if l < LAYERS || side == "enc" {
            h = h.tanh();
        }
    }
    Ok(h)
}

/// `[B, H*W]` pixels to a `[B,C,h,w]` latent node.
pub fn encode_graph<'t>(x: Var<'t>, bound: &BoundParams<'t>, arch: &CodecArch) -> Result<Var<'t>> {
    let batch = x.shape()[0];
    mlp(x, bound, "enc")?.reshape(&arch.latent.batched(batch))
}

/// `[B, C*h*w]` latent to a `[B, H*W]` pixel node.
pub fn decode_graph<'t>(s: Var<'t>, bound: &BoundParams<'t>) -> Result<Var<'t>> {
    mlp(s, bound, "dec")
}
