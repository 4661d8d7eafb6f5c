//! Gradient checks shared by the gradient tests and the acceptance suite.
#![allow(dead_code)]

use mist_core::encoder::volume::Volume;
use mist_core::encoder::{weighted_ce, weighted_ce_grad, Ablation, BackboneConfig, Encoder};
use mist_core::milgen::{mil_ranking_loss, mil_ranking_loss_grad};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Worst relative error of the cross-entropy derivative over `points` draws.
pub fn ce_worst_error(points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..points {
        let p = rng.random_range(0.05..0.95);
        let y = rng.random_range(0.0..1.0);
        let w0 = rng.random_range(0.5..2.0);
        let w1 = rng.random_range(0.5..2.0);
        let fd = (weighted_ce(p + h, y, w0, w1) - weighted_ce(p - h, y, w0, w1)) / (2.0 * h);
        worst = worst.max(rel_err(fd, weighted_ce_grad(p, y, w0, w1)));
    }
    worst
}

/// Worst error of the ranking-loss gradient over `points` random bag pairs,
/// relative to `max(|fd|, 1)` so that zero subgradients compare sensibly.
pub fn ranking_worst_error(points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-7;
    let mut worst = 0.0f64;
    for _ in 0..points {
        let l = rng.random_range(2..8);
        let a: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..1.0)).collect();
        let n: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..1.0)).collect();
        let lambda = rng.random_range(0.0..0.1);
        let (_, ga, gn) = mil_ranking_loss_grad(&a, &n, 1.0, lambda).unwrap();
        let loss = |a: &[f64], n: &[f64]| mil_ranking_loss(a, n, 1.0, lambda).unwrap();
        for i in 0..l {
            let bump = |v: &[f64], d: f64| {
                let mut v = v.to_vec();
                v[i] += d;
                v
            };
            let fa = (loss(&bump(&a, h), &n) - loss(&bump(&a, -h), &n)) / (2.0 * h);
            let fn_ = (loss(&a, &bump(&n, h)) - loss(&a, &bump(&n, -h))) / (2.0 * h);
            worst = worst.max((fa - ga[i]).abs() / fa.abs().max(1.0));
            worst = worst.max((fn_ - gn[i]).abs() / fn_.abs().max(1.0));
        }
    }
    worst
}

/// K = 2 on 4x8x8 clips.
pub fn tiny_config() -> BackboneConfig {
    BackboneConfig::with_widths([1, 4, 8, 8], [3, 3, 4, 4, 5])
}

/// Block 5 keeps block 4's size, so the attention map is upsampled.
pub fn resize_config() -> BackboneConfig {
    BackboneConfig {
        clip_shape: [1, 4, 8, 8],
        widths: [3, 3, 4, 4, 5],
        strides: [[2, 2, 2], [1, 1, 1], [1, 2, 2], [1, 1, 1], [1, 1, 1]],
    }
}

pub fn tiny_encoder(cfg: BackboneConfig, ablation: Ablation, seed: u64) -> Encoder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = Encoder::init(cfg, 2, ablation, &mut rng);
    // heads start at zero; randomise so every path carries gradient
    for p in enc.params_mut() {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    enc
}

/// Worst relative error between the analytic encoder gradient and central
/// differences, over six random entries of every parameter tensor.
pub fn encoder_worst_error(cfg: BackboneConfig, ablation: Ablation) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let [_, t, h, w] = cfg.clip_shape;
    let enc = tiny_encoder(cfg, ablation, 3);
    let mut x = Volume::zeros(3, [t, h, w], 1);
    x.data.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    let targets = [0.9, 0.0, 0.4];
    let (_, grads) = enc.loss_and_grad(&x, &targets, 1.2, 0.8).unwrap();
    let loss_of = |e: &Encoder| {
        let f = e.forward(&x).unwrap();
        e.loss(&f, &targets, 1.2, 0.8)
    };
    let step = 1e-5;
    let mut worst = 0.0f64;
    for (t, g) in grads.iter().enumerate() {
        for _ in 0..6 {
            let i = rng.random_range(0..g.len());
            let mut plus = enc.clone();
            plus.params_mut()[t][i] += step;
            let mut minus = enc.clone();
            minus.params_mut()[t][i] -= step;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
            if fd.abs().max(g[i].abs()) < 1e-7 {
                continue;
            }
            worst = worst.max(rel_err(fd, g[i]));
        }
    }
    worst
}
