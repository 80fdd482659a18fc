mod common;

use sdac::channel::ChannelSpec;
use sdac::codec::{train_step_on, CodecArch, Model, TrainConfig};
use sdac::numerics::{grad_check, DenseTensor, SeededRng};
use sdac::sdac::LatentShape;

fn config(q: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        q,
        seed,
        arch: CodecArch {
            height: 4,
            width: 4,
            hidden: 3,
            latent: LatentShape::new(2, 2, 2).unwrap(),
        },
        ..TrainConfig::default()
    }
}

fn worst_error(cfg: &TrainConfig, p: f64, batch: usize) -> f64 {
    let model = Model::init(cfg).unwrap();
    let mut rng = SeededRng::new(cfg.seed + 100);
    let x = DenseTensor::new(vec![batch, 4, 4], rng.uniform_range(batch * 16, 0.0, 1.0)).unwrap();
    let channels = vec![ChannelSpec::bsc(p).unwrap(); batch];
    let frozen = common::freeze(&model, &x, &channels, &rng);
    let params = model.params();
    let out = train_step_on(&x, &params, &cfg.arch, model.scheme.as_ref(), cfg, &channels, &mut rng.clone()).unwrap();
    let flat = x.data().to_vec();
    let value = common::step_surrogate(&flat, &params, &cfg.arch, cfg, &frozen);
    assert!((value - out.total).abs() < 1e-12, "{value} vs {}", out.total);
    grad_check(|p| Ok(common::step_surrogate(&flat, p, &cfg.arch, cfg, &frozen)), &params, &out.grads, 1e-6).unwrap()
}

#[test]
fn train_step_matches_surrogate_on_small_link() {
    let err = worst_error(&config(2, 0), 0.0, 1);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn train_step_matches_surrogate_with_flips() {
    for seed in 0..4 {
        let err = worst_error(&config(1 + seed as usize % 3, seed), 0.3, 2);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}
