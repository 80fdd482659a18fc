//! Plain-loop reference of the straight-through surrogate objective.
//!
//! Every stop-gradient quantity is frozen at a base point, which turns the
//! training loss into an ordinary differentiable function of the parameters.
//! Central differences of that function are the oracle for tape gradients.

use sdac::baselines::flip_per_item;
use sdac::channel::ChannelSpec;
use sdac::codec::{CodecArch, Model, TrainConfig};
use sdac::numerics::{DenseTensor, ParamSet, SeededRng};
use sdac::sdac::{adapter_expand, decode_indices, quantize, Codebook, CODEBOOK, COMBINE_B, COMBINE_W, EXPAND_B, EXPAND_W};

/// Stop-gradient values at the base point, expanded layout `[B,q,C,P]`.
pub struct Frozen {
    pub received: Vec<usize>,
    pub s_prime: Vec<f64>,
    pub s_hat_prime: Vec<f64>,
}

#[derive(Clone, Copy)]
pub struct Dims {
    pub batch: usize,
    pub q: usize,
    pub channels: usize,
    /// Spatial positions per channel.
    pub spatial: usize,
}

impl Dims {
    fn expanded(&self, b: usize, k: usize, c: usize, p: usize) -> usize {
        ((b * self.q + k) * self.channels + c) * self.spatial + p
    }

    fn latent(&self, b: usize, c: usize, p: usize) -> usize {
        (b * self.channels + c) * self.spatial + p
    }

    fn position(&self, b: usize, c: usize, p: usize) -> usize {
        self.latent(b, c, p)
    }
}

/// `recon + alpha * codebook + beta * commit` and the reconstruction `ŝ`.
#[allow(clippy::too_many_arguments)]
pub fn loss_surrogate(
    d: Dims,
    s: &[f64],
    s_prime: &[f64],
    codebook: &[f64],
    combine_w: &[f64],
    combine_b: &[f64],
    frozen: &Frozen,
    alpha: f64,
    beta: f64,
    mean: bool,
) -> (f64, Vec<f64>) {
    let mut s_hat = vec![0.0; d.batch * d.channels * d.spatial];
    let (mut recon, mut cb_term, mut commit) = (0.0, 0.0, 0.0);
    for b in 0..d.batch {
        for c in 0..d.channels {
            for p in 0..d.spatial {
                let row = frozen.received[d.position(b, c, p)];
                let mut acc = combine_b[c];
                for k in 0..d.q {
                    let e = d.expanded(b, k, c, p);
                    let live_entry = codebook[row * d.q + k];
                    let z = s_prime[e] + (frozen.s_hat_prime[e] - frozen.s_prime[e]);
                    acc += combine_w[c * d.q + k] * z;
                    cb_term += (frozen.s_prime[e] - live_entry).powi(2);
                    commit += (s_prime[e] - frozen.s_hat_prime[e]).powi(2);
                }
                let l = d.latent(b, c, p);
                s_hat[l] = acc;
                recon += (acc - s[l]).powi(2);
            }
        }
    }
    let scale = if mean { 1.0 / s.len() as f64 } else { 1.0 };
    ((recon + alpha * cb_term + beta * commit) * scale, s_hat)
}

fn mlp(x: &[f64], params: &ParamSet, side: &str, tanh_last: bool) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in 1..=3 {
        let w = params.get(&format!("{side}.w{l}")).unwrap();
        let bias = params.get(&format!("{side}.b{l}")).unwrap().data();
        let (i, o) = (w.shape()[0], w.shape()[1]);
        let mut out = bias.to_vec();
        for r in 0..i {
            for k in 0..o {
                out[k] += h[r] * w.data()[r * o + k];
            }
        }
        if l < 3 || tanh_last {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        h = out;
    }
    h
}

/// Full training objective `MSE(x, x') + lambda * aux` with `x` as `[B, H*W]`.
pub fn step_surrogate(x: &[f64], params: &ParamSet, arch: &CodecArch, cfg: &TrainConfig, frozen: &Frozen) -> f64 {
    let pixels = arch.pixels();
    let batch = x.len() / pixels;
    let lat = arch.latent;
    let d = Dims {
        batch,
        q: cfg.q,
        channels: lat.channels,
        spatial: lat.height * lat.width,
    };
    let mut s = Vec::new();
    for b in 0..batch {
        s.extend(mlp(&x[b * pixels..(b + 1) * pixels], params, "enc", true));
    }
    let ew = params.get(EXPAND_W).unwrap().data();
    let eb = params.get(EXPAND_B).unwrap().data();
    let mut s_prime = vec![0.0; batch * d.q * lat.positions()];
    for b in 0..batch {
        for c in 0..d.channels {
            for p in 0..d.spatial {
                for k in 0..d.q {
                    s_prime[d.expanded(b, k, c, p)] = ew[c * d.q + k] * s[d.latent(b, c, p)] + eb[c * d.q + k];
                }
            }
        }
    }
    let (aux, s_hat) = loss_surrogate(
        d,
        &s,
        &s_prime,
        params.get(CODEBOOK).unwrap().data(),
        params.get(COMBINE_W).unwrap().data(),
        params.get(COMBINE_B).unwrap().data(),
        frozen,
        cfg.alpha,
        cfg.beta,
        true,
    );
    let positions = lat.positions();
    let mut ori = 0.0;
    for b in 0..batch {
        let xr = mlp(&s_hat[b * positions..(b + 1) * positions], params, "dec", false);
        ori += xr.iter().zip(&x[b * pixels..(b + 1) * pixels]).map(|(r, v)| (r - v).powi(2)).sum::<f64>();
    }
    ori / x.len() as f64 + cfg.lambda * aux
}

/// Base-point stop-gradient values for `model` on `batch`, consuming a clone
/// of `rng` exactly as one training step over `channels` does.
pub fn freeze(model: &Model, batch: &DenseTensor, channels: &[ChannelSpec], rng: &SeededRng) -> Frozen {
    let state = model.scheme.sdac_state().expect("sdac scheme");
    let s = model.codec.encode(batch).unwrap();
    let s_prime = adapter_expand(&s, &state.adapter).unwrap();
    let cb: &Codebook = &state.codebook;
    let (_, bits) = quantize(&s_prime, cb).unwrap();
    let received_bits = flip_per_item(&bits, channels, &mut rng.clone()).unwrap();
    let received = decode_indices(&received_bits, cb.order()).unwrap();
    let q = cb.order();
    let positions = received.len() / channels.len();
    let mut s_hat_prime = vec![0.0; s_prime.len()];
    for (n, &row) in received.iter().enumerate() {
        let (b, p) = (n / positions, n % positions);
        for k in 0..q {
            s_hat_prime[(b * q + k) * positions + p] = cb.entry(row)[k];
        }
    }
    Frozen {
        received,
        s_prime: s_prime.data().to_vec(),
        s_hat_prime,
    }
}
