//! Three-term converter loss.
//!
//! ```text
//! L = |f_comb(s' + sg[ŝ' - s']) - s|^2 + alpha |sg[s'] - ŝ'|^2 + beta |s' - sg[ŝ']|^2
//! ```
//!
//! The reconstruction term sees `ŝ'` in its value but routes its gradient to
//! `s'` (straight-through). The alpha term moves only codebook entries, the
//! beta term only `s'`. The squared distance `|s' - ŝ'|^2` is sometimes called
//! a "kl" loss; it is a plain L2 distance.

use serde::{Deserialize, Serialize};

use super::state::{SdacState, CODEBOOK, COMBINE_B, COMBINE_W};
use crate::error::{Error, Result};
use crate::numerics::{DenseTensor, Gradient, Tape, Var};

pub const S_PRIME: &str = "s_prime";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "loss weights alpha={} beta={} must be non-negative and sum to 1",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// Squared norms summed over every element.
    Sum,
    /// Every term divided by the number of latent scalars.
    Mean,
}

/// Tape nodes of one loss evaluation.
pub struct SdacGraph<'t> {
    pub s_hat_prime: Var<'t>,
    pub s_hat: Var<'t>,
    pub recon: Var<'t>,
    pub codebook_term: Var<'t>,
    pub commit_term: Var<'t>,
    pub total: Var<'t>,
}

/// Records the loss on the tape of its inputs.
///
/// `received` holds one codebook index per latent position (after the
/// channel), ordered like [`super::quantize`] output. `s` is the latent the
/// reconstruction is compared against; pass a stop-gradient or constant node
/// to keep the loss from moving it.
#[allow(clippy::too_many_arguments)]
pub fn sdac_loss_graph<'t>(
    s: Var<'t>,
    s_prime: Var<'t>,
    codebook: Var<'t>,
    combine_w: Var<'t>,
    combine_b: Var<'t>,
    received: &[usize],
    weights: LossWeights,
    reduction: Reduction,
) -> Result<SdacGraph<'t>> {
    weights.validate()?;
    let s_hat_prime = codebook.gather_rows(received.to_vec(), &s_prime.shape())?;
    let z = s_prime.add(s_hat_prime.sub(s_prime)?.stop_gradient())?;
    let s_hat = z.group_combine(combine_w, combine_b)?;
    if s_hat.shape() != s.shape() {
        return Err(Error::shape(format!(
            "sdac loss: reconstruction {:?} vs latent {:?}",
            s_hat.shape(),
            s.shape()
        )));
    }
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / s.value().len() as f64,
    };
    let recon = s_hat.sub(s)?.square()?.sum().scale(scale);
    let codebook_term = s_prime
        .stop_gradient()
        .sub(s_hat_prime)?
        .square()?
        .sum()
        .scale(scale);
    let commit_term = s_prime
        .sub(s_hat_prime.stop_gradient())?
        .square()?
        .sum()
        .scale(scale);
    let total = recon
        .add(codebook_term.scale(weights.alpha))?
        .add(commit_term.scale(weights.beta))?;
    Ok(SdacGraph {
        s_hat_prime,
        s_hat,
        recon,
        codebook_term,
        commit_term,
        total,
    })
}

/// Loss value, its parts, and gradients keyed by `s_prime` and the
/// codebook/combine parameter names.
#[derive(Clone, Debug)]
pub struct SdacLoss {
    pub value: f64,
    pub recon: f64,
    pub codebook_term: f64,
    pub commit_term: f64,
    pub grads: Gradient,
    /// Unweighted per-term gradients `[recon, codebook, commit]`.
    pub term_grads: [Gradient; 3],
}

/// Summed loss of a single latent against the state's codebook and combine adapter.
pub fn sdac_loss(
    s: &DenseTensor,
    s_prime: &DenseTensor,
    received: &[usize],
    state: &SdacState,
    weights: LossWeights,
) -> Result<SdacLoss> {
    let tape = Tape::new();
    let vs = tape.constant(s.clone());
    let vp = tape.leaf(s_prime.clone());
    let vc = tape.leaf(state.codebook.entries().clone());
    let vw = tape.leaf(state.adapter.combine_weight.clone());
    let vb = tape.leaf(state.adapter.combine_bias.clone());
    let g = sdac_loss_graph(vs, vp, vc, vw, vb, received, weights, Reduction::Sum)?;

    let collect = |out: Var<'_>| -> Result<Gradient> {
        let grads = tape.backward(out)?;
        let mut r = Gradient::new();
        r.insert(S_PRIME, grads.wrt_or_zero(vp));
        r.insert(CODEBOOK, grads.wrt_or_zero(vc));
        r.insert(COMBINE_W, grads.wrt_or_zero(vw));
        r.insert(COMBINE_B, grads.wrt_or_zero(vb));
        Ok(r)
    };
    Ok(SdacLoss {
        value: g.total.value().item()?,
        recon: g.recon.value().item()?,
        codebook_term: g.codebook_term.value().item()?,
        commit_term: g.commit_term.value().item()?,
        grads: collect(g.total)?,
        term_grads: [collect(g.recon)?, collect(g.codebook_term)?, collect(g.commit_term)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, ParamSet, SeededRng};
    use crate::sdac::{adapter_combine, quantize, AdapterParams, Codebook};

    struct Instance {
        s: DenseTensor,
        s_prime: DenseTensor,
        received: Vec<usize>,
        state: SdacState,
    }

    fn instance(seed: u64, q: usize, flip: bool) -> Instance {
        let mut rng = SeededRng::new(seed);
        let (c, h, w) = (2, 2, 1);
        let state = SdacState::new(
            Codebook::new(
                q,
                DenseTensor::new(vec![1 << q, q], rng.uniform_range((1 << q) * q, -2.0, 2.0)).unwrap(),
            )
            .unwrap(),
            AdapterParams::new(
                DenseTensor::new(vec![c, q], rng.uniform_range(c * q, -2.0, 2.0)).unwrap(),
                DenseTensor::new(vec![c, q], rng.uniform_range(c * q, -2.0, 2.0)).unwrap(),
                DenseTensor::new(vec![c, q], rng.uniform_range(c * q, -2.0, 2.0)).unwrap(),
                DenseTensor::new(vec![c], rng.uniform_range(c, -2.0, 2.0)).unwrap(),
            )
            .unwrap(),
        )
        .unwrap();
        let s = DenseTensor::new(vec![c, h, w], rng.uniform_range(c * h * w, -2.0, 2.0)).unwrap();
        let s_prime =
            DenseTensor::new(vec![q, c, h, w], rng.uniform_range(q * c * h * w, -2.0, 2.0)).unwrap();
        let (mut received, _) = quantize(&s_prime, &state.codebook).unwrap();
        if flip {
            for r in received.iter_mut() {
                *r = rng.below(1 << q);
            }
        }
        Instance {
            s,
            s_prime,
            received,
            state,
        }
    }

    fn gathered(cb: &[f64], q: usize, rows: &[usize]) -> Vec<f64> {
        let p = rows.len();
        let mut out = vec![0.0; q * p];
        for (pos, &r) in rows.iter().enumerate() {
            for j in 0..q {
                out[j * p + pos] = cb[r * q + j];
            }
        }
        out
    }

    fn combined(z: &[f64], w: &[f64], b: &[f64], q: usize, c: usize) -> Vec<f64> {
        let spatial = z.len() / (q * c);
        let mut out = vec![0.0; c * spatial];
        for ci in 0..c {
            for x in 0..spatial {
                let mut acc = b[ci];
                for j in 0..q {
                    acc += w[ci * q + j] * z[(j * c + ci) * spatial + x];
                }
                out[ci * spatial + x] = acc;
            }
        }
        out
    }

    fn sq(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    #[test]
    fn perfect_fit_is_zero() {
        let mut rng = SeededRng::new(1);
        let q = 2;
        let state = SdacState::init(2, q, &mut rng).unwrap();
        let received = vec![3, 0, 1, 2];
        let s_prime =
            DenseTensor::new(vec![q, 2, 2, 1], gathered(state.codebook.entries().data(), q, &received)).unwrap();
        let s = adapter_combine(&s_prime, &state.adapter).unwrap();
        let l = sdac_loss(&s, &s_prime, &received, &state, LossWeights::default()).unwrap();
        assert_eq!(l.value, 0.0);
        for (_, g) in l.grads.iter() {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn stop_gradient_blocks_are_exact() {
        for seed in 0..10 {
            let inst = instance(seed, 2, seed % 2 == 1);
            let l = sdac_loss(&inst.s, &inst.s_prime, &inst.received, &inst.state, LossWeights::default()).unwrap();
            let [recon, cb_term, commit] = &l.term_grads;
            assert!(cb_term.get(S_PRIME).unwrap().data().iter().all(|&v| v == 0.0));
            assert!(commit.get(CODEBOOK).unwrap().data().iter().all(|&v| v == 0.0));
            assert!(recon.get(CODEBOOK).unwrap().data().iter().all(|&v| v == 0.0));
            assert!(!cb_term.get(S_PRIME).unwrap().is_empty());
            assert!(cb_term.get(CODEBOOK).unwrap().data().iter().any(|&v| v != 0.0));
            assert!(commit.get(S_PRIME).unwrap().data().iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn value_equals_plain_objective() {
        for seed in 0..10 {
            let inst = instance(seed, 3, true);
            let w = LossWeights::new(0.7, 0.3).unwrap();
            let l = sdac_loss(&inst.s, &inst.s_prime, &inst.received, &inst.state, w).unwrap();
            let st = &inst.state;
            let hat = gathered(st.codebook.entries().data(), 3, &inst.received);
            let rec = combined(&hat, st.adapter.combine_weight.data(), st.adapter.combine_bias.data(), 3, 2);
            let d = sq(inst.s_prime.data(), &hat);
            let want = sq(&rec, inst.s.data()) + w.alpha * d + w.beta * d;
            assert!((l.value - want).abs() <= 1e-12 * want.max(1.0), "{} vs {want}", l.value);
        }
    }

    /// Gradient of the surrogate objective obtained by freezing every
    /// stop-gradient operand at the base point, evaluated with plain loops.
    #[test]
    fn gradient_matches_finite_differences_of_surrogate() {
        for (k, q) in [1usize, 2, 3].iter().cycle().take(21).enumerate() {
            let q = *q;
            let inst = instance(100 + k as u64, q, k % 3 != 0);
            let w = LossWeights::default();
            let l = sdac_loss(&inst.s, &inst.s_prime, &inst.received, &inst.state, w).unwrap();

            let hat0 = gathered(inst.state.codebook.entries().data(), q, &inst.received);
            let sp0 = inst.s_prime.data().to_vec();
            let delta0: Vec<f64> = hat0.iter().zip(&sp0).map(|(a, b)| a - b).collect();
            let s = inst.s.data().to_vec();
            let rows = inst.received.clone();

            let mut params = ParamSet::new();
            params.insert(S_PRIME, inst.s_prime.clone());
            params.insert(CODEBOOK, inst.state.codebook.entries().clone());
            params.insert(COMBINE_W, inst.state.adapter.combine_weight.clone());
            params.insert(COMBINE_B, inst.state.adapter.combine_bias.clone());
            let f = |p: &ParamSet| -> Result<f64> {
                let sp = p.get(S_PRIME)?.data();
                let z: Vec<f64> = sp.iter().zip(&delta0).map(|(a, d)| a + d).collect();
                let rec = combined(&z, p.get(COMBINE_W)?.data(), p.get(COMBINE_B)?.data(), q, 2);
                let hat = gathered(p.get(CODEBOOK)?.data(), q, &rows);
                Ok(sq(&rec, &s) + w.alpha * sq(&sp0, &hat) + w.beta * sq(sp, &hat0))
            };
            let err = grad_check(f, &params, &l.grads, 1e-6).unwrap();
            assert!(err < 1e-5, "q={q} instance {k}: {err}");
        }
    }

    #[test]
    fn straight_through_gradient_is_the_gradient_at_the_received_point() {
        for seed in 0..5 {
            let inst = instance(seed, 2, true);
            let l = sdac_loss(&inst.s, &inst.s_prime, &inst.received, &inst.state, LossWeights::default()).unwrap();
            let hat = gathered(inst.state.codebook.entries().data(), 2, &inst.received);

            let tape = Tape::new();
            let x = tape.leaf(DenseTensor::new(inst.s_prime.shape().to_vec(), hat).unwrap());
            let wv = tape.constant(inst.state.adapter.combine_weight.clone());
            let bv = tape.constant(inst.state.adapter.combine_bias.clone());
            let s = tape.constant(inst.s.clone());
            let out = x.group_combine(wv, bv).unwrap().sub(s).unwrap().square().unwrap().sum();
            let direct = tape.backward(out).unwrap().wrt_or_zero(x);
            let ste = l.term_grads[0].get(S_PRIME).unwrap();
            for (a, b) in ste.data().iter().zip(direct.data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn weights_are_validated() {
        assert!(LossWeights::new(0.5, 0.4).is_err());
        assert!(LossWeights::new(1.2, -0.2).is_err());
        assert!(LossWeights::new(1.0, 0.0).is_ok());
        let inst = instance(0, 1, false);
        let bad = LossWeights {
            alpha: 0.9,
            beta: 0.9,
        };
        assert!(sdac_loss(&inst.s, &inst.s_prime, &inst.received, &inst.state, bad).is_err());
    }

    #[test]
    fn mean_reduction_scales_every_term() {
        let inst = instance(3, 2, true);
        let st = &inst.state;
        let run = |red| {
            let tape = Tape::new();
            let g = sdac_loss_graph(
                tape.constant(inst.s.clone()),
                tape.leaf(inst.s_prime.clone()),
                tape.leaf(st.codebook.entries().clone()),
                tape.leaf(st.adapter.combine_weight.clone()),
                tape.leaf(st.adapter.combine_bias.clone()),
                &inst.received,
                LossWeights::default(),
                red,
            )
            .unwrap();
            
            g.total.value().item().unwrap()
        };
        let (sum, mean) = (run(Reduction::Sum), run(Reduction::Mean));
        assert!((sum / 4.0 - mean).abs() < 1e-12);
    }
}
