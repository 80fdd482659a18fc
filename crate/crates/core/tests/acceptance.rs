//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! `cargo test -p sdac --test acceptance` (release profile recommended).

mod common;

use std::process::ExitCode;
use std::time::Instant;

use sdac::baselines::{dq_dequantize, dq_quantize, DqConfig};
use sdac::channel::{bsc_transmit, BitSequence, ChannelSpec};
use sdac::codec::{probe_psnr, train, train_step_on, CodecArch, Model, TrainConfig};
use sdac::harness::checkpoint::Checkpoint;
use sdac::harness::config::{ExperimentConfig, ModemConfig};
use sdac::harness::data::gen_synthetic_dataset;
use sdac::harness::report::{csv_string, ResultRow};
use sdac::harness::sweep::{bsc_rows, modem_table, sweep_q};
use sdac::numerics::{grad_check, DenseTensor, ParamSet, SeededRng};
use sdac::sdac::{
    bits_to_index, dequantize, index_to_bits, quantize, sdac_loss, AdapterParams, Codebook, LatentShape, LossWeights,
    SdacState, CODEBOOK, COMBINE_B, COMBINE_W, MAX_ORDER, S_PRIME,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1() -> Verdict {
    let cfg = ModemConfig::default();
    let start = Instant::now();
    let rows = modem_table(&cfg, 1).expect("modem table");
    let secs = start.elapsed().as_secs_f64();
    let checked: Vec<_> = rows.iter().filter(|r| r.checked).collect();
    let failed: Vec<_> = checked.iter().filter(|r| !r.pass).collect();
    let worst = checked.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    let exact_worst = checked
        .iter()
        .map(|r| (r.exact - r.monte_carlo).abs() / r.exact)
        .fold(0.0, f64::max);
    let mut detail = format!(
        "{} checked points, {} over 5%, worst closed-form delta {:.2}%, {secs:.0} s; simulation vs exact Gray BER worst {:.2}%",
        checked.len(),
        failed.len(),
        100.0 * worst,
        100.0 * exact_worst
    );
    if let Some(r) = failed.first() {
        detail += &format!(
            "; first failure {} at {} dB: closed form {:.4e}, simulated {:.4e}",
            r.modulation.name(),
            r.snr_db,
            r.closed_form,
            r.monte_carlo
        );
    }
    verdict(failed.is_empty() && secs < 300.0, detail)
}

fn criterion_2() -> Verdict {
    let n = 1_000_000;
    let zeros = BitSequence::zeros(n);
    let mut rng = SeededRng::new(2);
    let mut worst_sigmas = 0.0f64;
    for p in [0.01, 0.1, 0.3, 0.5] {
        let out = bsc_transmit(&zeros, p, &mut rng).expect("bsc");
        let flips = out.as_slice().iter().filter(|&&b| b == 1).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        worst_sigmas = worst_sigmas.max((flips - n as f64 * p).abs() / sigma);
    }
    verdict(worst_sigmas < 4.0, format!("largest deviation {worst_sigmas:.2} sigma over p in {{0.01, 0.1, 0.3, 0.5}}"))
}

fn random_state(q: usize, channels: usize, rng: &mut SeededRng) -> SdacState {
    let r = |rng: &mut SeededRng, shape: &[usize]| {
        DenseTensor::new(shape.to_vec(), rng.uniform_range(shape.iter().product(), -1.5, 1.5)).unwrap()
    };
    SdacState::new(
        Codebook::new(q, r(rng, &[1 << q, q])).unwrap(),
        AdapterParams::new(
            r(rng, &[channels, q]),
            r(rng, &[channels, q]),
            r(rng, &[channels, q]),
            r(rng, &[channels]),
        )
        .unwrap(),
    )
    .unwrap()
}

/// Loss gradients against the surrogate, plus exact zeros through every stop-gradient.
fn loss_instance(seed: u64, q: usize) -> (f64, bool) {
    let mut rng = SeededRng::new(1000 + seed);
    let (c, spatial) = (2, 3);
    let state = random_state(q, c, &mut rng);
    let s = DenseTensor::new(vec![c, spatial, 1], rng.uniform_range(c * spatial, -1.0, 1.0)).unwrap();
    let s_prime = DenseTensor::new(vec![q, c, spatial, 1], rng.uniform_range(q * c * spatial, -1.0, 1.0)).unwrap();
    let (mut received, _) = quantize(&s_prime, &state.codebook).unwrap();
    for r in received.iter_mut().step_by(2) {
        *r = rng.below(1 << q);
    }
    let weights = LossWeights::new(0.8, 0.2).unwrap();
    let loss = sdac_loss(&s, &s_prime, &received, &state, weights).unwrap();

    let mut s_hat_prime = vec![0.0; s_prime.len()];
    let positions = c * spatial;
    for (p, &row) in received.iter().enumerate() {
        for k in 0..q {
            s_hat_prime[k * positions + p] = state.codebook.entry(row)[k];
        }
    }
    let frozen = common::Frozen {
        received: received.clone(),
        s_prime: s_prime.data().to_vec(),
        s_hat_prime,
    };
    let dims = common::Dims {
        batch: 1,
        q,
        channels: c,
        spatial,
    };
    let mut params = ParamSet::new();
    params.insert(S_PRIME, s_prime.clone());
    params.insert(CODEBOOK, state.codebook.entries().clone());
    params.insert(COMBINE_W, state.adapter.combine_weight.clone());
    params.insert(COMBINE_B, state.adapter.combine_bias.clone());
    let f = |p: &ParamSet| {
        Ok(common::loss_surrogate(
            dims,
            s.data(),
            p.get(S_PRIME)?.data(),
            p.get(CODEBOOK)?.data(),
            p.get(COMBINE_W)?.data(),
            p.get(COMBINE_B)?.data(),
            &frozen,
            weights.alpha,
            weights.beta,
            false,
        )
        .0)
    };
    let err = grad_check(f, &params, &loss.grads, 1e-6).unwrap();

    let zero = |g: &sdac::numerics::Gradient, name: &str| g.get(name).unwrap().data().iter().all(|&v| v == 0.0);
    let [recon, codebook, commit] = &loss.term_grads;
    let blocked = zero(recon, CODEBOOK)
        && zero(codebook, S_PRIME)
        && zero(codebook, COMBINE_W)
        && zero(codebook, COMBINE_B)
        && zero(commit, CODEBOOK)
        && zero(commit, COMBINE_W)
        && zero(commit, COMBINE_B);
    (err, blocked)
}

fn step_instance(seed: u64, q: usize) -> f64 {
    let cfg = TrainConfig {
        q,
        seed,
        arch: CodecArch {
            height: 4,
            width: 4,
            hidden: 3,
            latent: LatentShape::new(2, 2, 2).unwrap(),
        },
        ..TrainConfig::default()
    };
    let model = Model::init(&cfg).unwrap();
    let mut rng = SeededRng::new(2000 + seed);
    let x = DenseTensor::new(vec![2, 4, 4], rng.uniform_range(32, 0.0, 1.0)).unwrap();
    let channels = vec![ChannelSpec::bsc(0.2).unwrap(); 2];
    let frozen = common::freeze(&model, &x, &channels, &rng);
    let params = model.params();
    let out = train_step_on(&x, &params, &cfg.arch, model.scheme.as_ref(), &cfg, &channels, &mut rng.clone()).unwrap();
    let flat = x.data().to_vec();
    grad_check(|p| Ok(common::step_surrogate(&flat, p, &cfg.arch, &cfg, &frozen)), &params, &out.grads, 1e-6).unwrap()
}

fn criterion_3() -> Verdict {
    let mut loss_worst = 0.0f64;
    let mut step_worst = 0.0f64;
    let mut all_blocked = true;
    for seed in 0..20u64 {
        let q = 1 + seed as usize % 3;
        let (err, blocked) = loss_instance(seed, q);
        loss_worst = loss_worst.max(err);
        all_blocked &= blocked;
        step_worst = step_worst.max(step_instance(seed, q));
    }
    verdict(
        loss_worst < 1e-5 && step_worst < 1e-5 && all_blocked,
        format!(
            "20 instances each, q in {{1,2,3}}: loss worst {loss_worst:.2e}, train step worst {step_worst:.2e}, blocked gradients exactly zero: {all_blocked}"
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut roundtrip = true;
    for q in 1..=MAX_ORDER {
        for i in 0..1usize << q {
            let mut bits = BitSequence::default();
            index_to_bits(i, q, &mut bits);
            roundtrip &= bits.len() == q && bits_to_index(bits.as_slice()) == i;
        }
    }

    let mut rng = SeededRng::new(4);
    let mut exact_entries = true;
    for q in 1..=6 {
        let cb = Codebook::init(q, &mut rng).unwrap();
        let shape = LatentShape::new(3, 2, 2).unwrap();
        let s_prime = DenseTensor::new(vec![q, 3, 2, 2], rng.uniform_range(q * 12, -1.0, 1.0)).unwrap();
        let (indices, bits) = quantize(&s_prime, &cb).unwrap();
        let back = dequantize(&bits, &cb, shape).unwrap();
        for (p, &i) in indices.iter().enumerate() {
            for k in 0..q {
                exact_entries &= back.data()[k * 12 + p].to_bits() == cb.entry(i)[k].to_bits();
            }
        }
    }

    let mut agree = 0;
    for t in 0..1000 {
        let q = 1 + t % 5;
        let n = 1 << q;
        // a coarse grid forces exact ties now and then
        let grid = |rng: &mut SeededRng, len: usize| -> Vec<f64> {
            (0..len).map(|_| (rng.below(5) as f64 - 2.0) * 0.5).collect()
        };
        let entries = grid(&mut rng, n * q);
        let v = grid(&mut rng, q);
        let mut best = (f64::INFINITY, 0);
        for i in 0..n {
            let d: f64 = (0..q).map(|k| (v[k] - entries[i * q + k]).powi(2)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        let cb = Codebook::new(q, DenseTensor::new(vec![n, q], entries).unwrap()).unwrap();
        if cb.nearest(&v) == best.1 {
            agree += 1;
        }
    }
    verdict(
        roundtrip && exact_entries && agree == 1000,
        format!(
            "index/bits roundtrip for q <= {MAX_ORDER}: {roundtrip}; noiseless lookup exact: {exact_entries}; brute-force argmin agreement {agree}/1000"
        ),
    )
}

fn psnr_at(rows: &[ResultRow], q: usize, ber: f64) -> f64 {
    rows.iter().find(|r| r.q == Some(q) && r.ber == ber).expect("grid point").psnr_db
}

fn criterion_5(rows: &[ResultRow], secs: f64) -> Verdict {
    let p: Vec<f64> = (1..=5).map(|q| psnr_at(rows, q, 0.05)).collect();
    let gain_13 = p[2] - p[0];
    let gain_23 = p[2] - p[1];
    let gain_45 = p[4] - p[3];
    let list: Vec<String> = p.iter().map(|v| format!("{v:.2}")).collect();
    verdict(
        gain_13 >= 1.0 && gain_45 < gain_23 && secs <= 3600.0,
        format!(
            "PSNR at BER 0.05 for q=1..5: [{}] dB; q3-q1 {gain_13:+.2} dB (need >= 1), q4->5 {gain_45:+.2} vs q2->3 {gain_23:+.2}; {secs:.0} s",
            list.join(", ")
        ),
    )
}

fn criterion_6(rows: &[ResultRow]) -> Verdict {
    let at0: Vec<&ResultRow> = (2..=5)
        .map(|q| rows.iter().find(|r| r.q == Some(q) && r.ber == 0.0).expect("grid point"))
        .collect();
    let quant: Vec<f64> = at0.iter().map(|r| r.ase_quant.unwrap()).collect();
    let kl: Vec<f64> = at0.iter().map(|r| r.ase_kl.unwrap()).collect();
    let decreasing = quant.windows(2).all(|w| w[1] < w[0]);
    let kl_min = kl.iter().copied().fold(f64::INFINITY, f64::min);
    let kl_max = kl.iter().copied().fold(0.0, f64::max);
    let spread = (kl_max - kl_min) / kl_min;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    verdict(
        decreasing && spread < 0.2,
        format!(
            "BER 0, weights (1,0,1), q=2..5: ASE-quantization [{}] decreasing: {decreasing}; ASE-kl [{}] spread {:.1}% (need < 20%)",
            fmt(&quant),
            fmt(&kl),
            100.0 * spread
        ),
    )
}

fn criterion_7(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Verdict {
    let sdac_drop = psnr_at(rows, 4, 0.0) - psnr_at(rows, 4, 0.1);
    let dq_cfg = TrainConfig {
        scheme: "dq".into(),
        q: 4,
        ber_range: cfg.sweep.dq_ber_range,
        ..cfg.train.clone()
    };
    let (dq, _) = train(&cfg.train_set().unwrap(), &dq_cfg).unwrap();
    let dq_rows = bsc_rows(&dq, &dq_cfg, &cfg.eval_set().unwrap(), &[0.0, 0.1], cfg.sweep.ase_weights).unwrap();
    let dq_drop = dq_rows[0].psnr_db - dq_rows[1].psnr_db;

    let mut msb_exact = true;
    for q in 1..=MAX_ORDER {
        let dq_q = DqConfig::new(q, -1.0, 1.0).unwrap();
        for level in 0..1usize << q {
            let v = dq_q.value(level);
            let s = DenseTensor::new(vec![1], vec![v]).unwrap();
            let mut bits = dq_quantize(&s, &dq_q);
            bits.flip(0);
            let back = dq_dequantize(&bits, &dq_q, &[1]).unwrap();
            let moved = dq_q.level(back.data()[0]) as i64 - level as i64;
            msb_exact &= moved.unsigned_abs() as usize == 1 << (q - 1);
        }
    }
    verdict(
        sdac_drop < dq_drop && msb_exact,
        format!(
            "q=4, BER 0 -> 0.1 PSNR drop: sDAC {sdac_drop:.2} dB, DQ {dq_drop:.2} dB (DQ {:.2} -> {:.2}); MSB flip moves exactly 2^(q-1) levels for q <= {MAX_ORDER}: {msb_exact}",
            dq_rows[0].psnr_db, dq_rows[1].psnr_db
        ),
    )
}

fn criterion_8(first: &str, second: &str) -> Verdict {
    verdict(
        first == second,
        format!("two sweep-q runs, {} CSV bytes each, identical: {}", first.len(), first == second),
    )
}

fn criterion_9() -> Verdict {
    let cfg = TrainConfig {
        q: 3,
        epochs: 3,
        seed: 9,
        ..TrainConfig::default()
    };
    let data = gen_synthetic_dataset(200, (16, 16), 9).unwrap();
    let (model, history) = train(&data, &cfg).unwrap();
    let recorded = history.epochs.last().unwrap().psnr;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::from_model(&model, &cfg).save(&path).unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    let restored = ck.to_model().unwrap();
    let probed = probe_psnr(&data, &restored, &ck.config).unwrap();
    let reported: Vec<f64> = bsc_rows(&restored, &ck.config, &data, &[0.0, 0.05, 0.1], Default::default())
        .unwrap()
        .iter()
        .map(|r| r.psnr_db)
        .collect();
    let same = |a: &[f64]| a.iter().zip(&recorded).all(|(x, y)| x.to_string() == y.to_string());
    verdict(
        same(&probed) && same(&reported),
        format!("recorded {recorded:?}, reloaded probe {probed:?}, reloaded eval rows {reported:?}"),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut report = |n: usize, v: Verdict| {
        println!("criterion {n}: {} | {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, v));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());

    let cfg = ExperimentConfig::default();
    let (train_set, eval_set) = (cfg.train_set().unwrap(), cfg.eval_set().unwrap());
    let start = Instant::now();
    let rows = sweep_q(&cfg, &train_set, &eval_set).expect("sweep");
    let secs = start.elapsed().as_secs_f64();
    let first = csv_string(&rows).unwrap();
    report(5, criterion_5(&rows, secs));
    report(6, criterion_6(&rows));
    report(7, criterion_7(&cfg, &rows));
    let second = csv_string(&sweep_q(&cfg, &train_set, &eval_set).expect("sweep")).unwrap();
    report(8, criterion_8(&first, &second));
    report(9, criterion_9());

    let failed: Vec<String> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| n.to_string()).collect();
    if failed.is_empty() {
        println!("acceptance: all 9 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
