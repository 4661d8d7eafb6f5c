//! Stage-II fine-tuning, scoring, checkpoints and attention export.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::volume::{Conv3d, ConvSpec, Volume};
use super::{Ablation, BackboneConfig, Encoder, SgaParams, ToyBackbone};
use crate::config::HyperParams;
use crate::dataio::{ClipStack, Manifest, ScoreSeries, Split};
use crate::error::{MistError, Result};
use crate::milgen::sidecar_path;
use crate::nn::{read_param_blob, take_tensor, write_param_blob, Adam};
use crate::pseudolabel::LabelMap;

/// Clips scored per forward pass at inference.
const SCORE_CHUNK: usize = 32;

#[derive(Debug, Clone, Default)]
pub struct FinetuneOptions {
    pub ablation: Ablation,
    pub seed: u64,
    /// Backbone layout; `None` uses [`BackboneConfig::for_clip`] on the
    /// training clips' shape.
    pub backbone: Option<BackboneConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FinetuneLog {
    /// Mean batch loss per optimizer step.
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// One training video: its clips and per-clip targets.
#[derive(Debug, Clone)]
pub struct TrainClips {
    pub clips: ClipStack,
    pub targets: Vec<f32>,
}

fn sample_clips<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    if m >= n {
        let mut all: Vec<usize> = (0..n).collect();
        all.extend((n..m).map(|_| rng.random_range(0..n)));
        return all;
    }
    let mut idx = rand::seq::index::sample(rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}

/// Batches of indices covering `n` items in shuffled order; the last batch
/// is topped up from a fresh shuffle so every batch has `size` entries.
fn epoch_batches<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let batches = n.div_ceil(size);
    while order.len() < batches * size {
        let mut extra: Vec<usize> = (0..n).collect();
        extra.shuffle(rng);
        order.extend(extra);
    }
    order.truncate(batches * size);
    order.chunks(size).map(|c| c.to_vec()).collect()
}

/// Learning rate at optimizer step `step` (0-based): a linear ramp from 0 to
/// `ft_lr` across the warm-up epochs, then constant.
pub fn warmup_lr(hp: &HyperParams, step: usize, steps_per_epoch: usize) -> f64 {
    let warm = hp.ft_warmup_epochs * steps_per_epoch;
    if warm == 0 {
        return hp.ft_lr;
    }
    hp.ft_lr * ((step + 1) as f64 / warm as f64).min(1.0)
}

/// Loss and gradient of one batch, summed over `accum` equal-order
/// micro-batches so the result matches the full batch.
pub(crate) fn accumulated_grad(
    enc: &Encoder,
    clips: &[&[f32]],
    targets: &[f64],
    accum: usize,
    hp: &HyperParams,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let shape = enc.backbone.config.clip_shape;
    let n = clips.len();
    let micro = n.div_ceil(accum.max(1));
    let mut total_loss = 0.0;
    let mut total: Option<Vec<Vec<f64>>> = None;
    for (cs, ts) in clips.chunks(micro).zip(targets.chunks(micro)) {
        let x = Volume::from_clips(cs.iter().copied(), shape)?;
        let (loss, grads) = enc.loss_and_grad(&x, ts, hp.w0, hp.w1)?;
        let w = cs.len() as f64 / n as f64;
        total_loss += loss * w;
        match &mut total {
            None => {
                total = Some(grads.into_iter().map(|g| g.into_iter().map(|v| v * w).collect()).collect())
            }
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(grads) {
                    for (av, gv) in a.iter_mut().zip(g) {
                        *av += gv * w;
                    }
                }
            }
        }
    }
    Ok((total_loss, total.unwrap_or_default()))
}

/// Fine-tunes a freshly initialised encoder on in-memory videos.
pub fn finetune_on(
    abnormal: &[TrainClips],
    normal: &[TrainClips],
    hp: &HyperParams,
    opts: &FinetuneOptions,
) -> Result<(Encoder, FinetuneLog)> {
    hp.validate()?;
    if abnormal.is_empty() || normal.is_empty() {
        return Err(MistError::validation(
            "manifest",
            "fine-tuning needs at least one abnormal and one normal training video",
        ));
    }
    let shape = abnormal[0].clips.clip_shape();
    for v in abnormal.iter().chain(normal) {
        if v.clips.clip_shape() != shape {
            return Err(MistError::Shape(format!(
                "{}: clip shape {:?} differs from {:?}",
                v.clips.video_id,
                v.clips.clip_shape(),
                shape
            )));
        }
        if v.targets.len() != v.clips.num_clips() || v.targets.is_empty() {
            return Err(MistError::validation(
                "pseudo_labels",
                format!(
                    "{}: {} targets for {} clips",
                    v.clips.video_id,
                    v.targets.len(),
                    v.clips.num_clips()
                ),
            ));
        }
    }

    let config = match &opts.backbone {
        Some(c) if c.clip_shape != shape => {
            return Err(MistError::Shape(format!(
                "backbone expects clips of shape {:?}, data has {:?}",
                c.clip_shape, shape
            )))
        }
        Some(c) => c.clone(),
        None => BackboneConfig::for_clip(shape),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut enc = Encoder::init(config, hp.detectors_per_class, opts.ablation, &mut rng);
    let mut adam = Adam::new(hp.ft_weight_decay);
    let per_class = hp.ft_videos_per_class_per_batch;
    let steps_per_epoch = abnormal.len().div_ceil(per_class);
    let mut log = FinetuneLog::default();
    let mut step = 0;

    for _ in 0..hp.ft_epochs {
        let a_batches = epoch_batches(abnormal.len(), per_class, &mut rng);
        let mut n_batches = Vec::new();
        while n_batches.len() < a_batches.len() {
            n_batches.extend(epoch_batches(normal.len(), per_class, &mut rng));
        }
        let mut epoch_loss = 0.0;
        for (ab, nb) in a_batches.iter().zip(&n_batches) {
            let mut clips: Vec<&[f32]> = Vec::new();
            let mut targets = Vec::new();
            let videos = ab.iter().map(|&i| &abnormal[i]).chain(nb.iter().map(|&i| &normal[i]));
            for v in videos {
                for c in sample_clips(v.clips.num_clips(), hp.ft_clips_per_video, &mut rng) {
                    clips.push(v.clips.clip(c));
                    targets.push(f64::from(v.targets[c]));
                }
            }
            let (loss, grads) = accumulated_grad(&enc, &clips, &targets, hp.ft_grad_accum_steps, hp)?;
            if !loss.is_finite() {
                return Err(MistError::Internal(format!("non-finite loss at step {step}")));
            }
            let lr = warmup_lr(hp, step, steps_per_epoch);
            let grad_refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
            adam.step(lr, enc.params_mut(), grad_refs);
            log.losses.push(loss);
            log.learning_rates.push(lr);
            epoch_loss += loss;
            step += 1;
        }
        log.epoch_losses.push(epoch_loss / a_batches.len() as f64);
        log::debug!("epoch {}: loss {:.5}", log.epoch_losses.len(), log.epoch_losses.last().unwrap());
    }
    Ok((enc, log))
}

/// Loads training clips and their targets, then fine-tunes.
pub fn finetune(
    manifest: &Manifest,
    labels: &LabelMap,
    hp: &HyperParams,
    opts: &FinetuneOptions,
) -> Result<(Encoder, FinetuneLog)> {
    let mut abnormal = Vec::new();
    let mut normal = Vec::new();
    for rec in manifest.select(Split::Train, None) {
        let targets = labels.get(&rec.video_id).ok_or_else(|| {
            MistError::validation(
                "pseudo_labels",
                format!("{}: no pseudo labels for this video", rec.video_id),
            )
        })?;
        let clips = manifest.load_clips(rec)?;
        let v = TrainClips {
            clips,
            targets: targets.clone(),
        };
        if rec.is_abnormal() {
            abnormal.push(v);
        } else {
            normal.push(v);
        }
    }
    finetune_on(&abnormal, &normal, hp, opts)
}

/// Per-clip abnormal probability from the weighted-classification head.
pub fn encoder_score_video(enc: &Encoder, clips: &ClipStack) -> Result<ScoreSeries> {
    let shape = clips.clip_shape();
    let mut scores = Vec::with_capacity(clips.num_clips());
    let idx: Vec<usize> = (0..clips.num_clips()).collect();
    for chunk in idx.chunks(SCORE_CHUNK) {
        let x = Volume::from_clips(chunk.iter().map(|&i| clips.clip(i)), shape)?;
        let fwd = enc.forward(&x)?;
        scores.extend(fwd.scores().into_iter().map(|s| s as f32));
    }
    Ok(ScoreSeries {
        video_id: clips.video_id.clone(),
        scores,
    })
}

/// Attention maps at `M_b5` resolution, one per clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub video_id: String,
    /// `[clips, t, h, w]`.
    pub shape: [usize; 4],
    #[serde(skip)]
    pub data: Vec<f32>,
}

pub fn attention_maps(enc: &Encoder, clips: &ClipStack) -> Result<AttentionExport> {
    if enc.ablation.disable_sga {
        return Err(MistError::validation(
            "encoder",
            "this encoder was trained without the attention module",
        ));
    }
    let shape = clips.clip_shape();
    let mut data = Vec::new();
    let mut dims = [0; 3];
    let idx: Vec<usize> = (0..clips.num_clips()).collect();
    for chunk in idx.chunks(SCORE_CHUNK) {
        let x = Volume::from_clips(chunk.iter().map(|&i| clips.clip(i)), shape)?;
        let fwd = enc.forward(&x)?;
        let a = &fwd.sga().expect("attention enabled").a;
        dims = a.dims();
        data.extend(a.data.iter().map(|&v| v as f32));
    }
    Ok(AttentionExport {
        video_id: clips.video_id.clone(),
        shape: [clips.num_clips(), dims[0], dims[1], dims[2]],
        data,
    })
}

/// Writes `<id>.attn` (raw little-endian `f32`) and `<id>.attn.json`
/// holding the shape.
pub fn write_attention_maps(export: &AttentionExport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| MistError::io(dir, e))?;
    let blob = dir.join(format!("{}.attn", export.video_id));
    let bytes: Vec<u8> = export.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(&blob, bytes).map_err(|e| MistError::io(&blob, e))?;
    let header = sidecar_path(&blob);
    let text = serde_json::to_string_pretty(export).expect("header serializes");
    std::fs::write(&header, text).map_err(|e| MistError::io(&header, e))
}

/// JSON sidecar stored next to an encoder checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderMeta {
    pub backbone: BackboneConfig,
    pub hp: HyperParams,
    pub seed: u64,
    pub epochs: usize,
    pub ablation: Ablation,
}

pub fn save_encoder(enc: &Encoder, meta: &EncoderMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_param_blob(&enc.to_tensors(), path)?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta).expect("metadata always serializes");
    std::fs::write(&side, text).map_err(|e| MistError::io(&side, e))
}

pub fn load_encoder(path: impl AsRef<Path>) -> Result<(Encoder, EncoderMeta)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| MistError::io(&side, e))?;
    let meta: EncoderMeta = serde_json::from_str(&text).map_err(|e| MistError::json(&side, e))?;
    let backbone = ToyBackbone::zeros(meta.backbone.clone());
    let (c4, c5) = (meta.backbone.widths[3], meta.backbone.widths[4]);
    let k = meta.hp.detectors_per_class;
    let pw = |i, o| Conv3d::zeros(ConvSpec { in_ch: i, out_ch: o, kernel: 1, stride: [1; 3] });
    let sga = SgaParams {
        f1_conv: Conv3d::zeros(ConvSpec { in_ch: c4, out_ch: c4, kernel: 3, stride: [2; 3] }),
        f1_point: pw(c4, 2 * k),
        f2: pw(2 * k, 1),
        f3: pw(2 * k, 2 * k),
        detectors_per_class: k,
    };
    let mut enc = Encoder {
        backbone,
        sga,
        hc_weight: ndarray::Array2::zeros((c5, 2)),
        hc_bias: ndarray::Array1::zeros(2),
        ablation: meta.ablation,
    };
    let mut tensors = read_param_blob(path)?;
    let names = enc.tensor_names();
    let shapes = enc.tensor_shapes();
    for ((name, shape), dst) in names.iter().zip(&shapes).zip(enc.params_mut()) {
        dst.copy_from_slice(&take_tensor(&mut tensors, name, shape)?);
    }
    if let Some(extra) = tensors.first() {
        return Err(MistError::Shape(format!("unexpected tensor {} in checkpoint", extra.name)));
    }
    Ok((enc, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_stack(id: &str, n: usize, shape: [usize; 4], seed: u64) -> ClipStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = n * shape.iter().product::<usize>();
        ClipStack {
            video_id: id.into(),
            channels: shape[0],
            frames: shape[1],
            height: shape[2],
            width: shape[3],
            data: (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        }
    }

    fn tiny_hp() -> HyperParams {
        HyperParams {
            detectors_per_class: 2,
            ft_epochs: 2,
            ft_warmup_epochs: 1,
            ft_videos_per_class_per_batch: 2,
            ft_clips_per_video: 2,
            ft_lr: 1e-3,
            ..HyperParams::default()
        }
    }

    fn tiny_data() -> (Vec<TrainClips>, Vec<TrainClips>) {
        let shape = [1, 4, 8, 8];
        let mk = |i: u64, abn: bool| TrainClips {
            clips: random_stack(&format!("v{i}"), 5, shape, i),
            targets: if abn { vec![0.0, 0.2, 1.0, 0.7, 0.0] } else { vec![0.0; 5] },
        };
        ((0..3).map(|i| mk(i, true)).collect(), (3..6).map(|i| mk(i, false)).collect())
    }

    #[test]
    fn warmup_ramps_linearly() {
        let mut hp = HyperParams { ft_lr: 1.0, ft_warmup_epochs: 2, ..HyperParams::default() };
        let lrs: Vec<f64> = (0..6).map(|s| warmup_lr(&hp, s, 2)).collect();
        assert_eq!(lrs, vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
        hp.ft_warmup_epochs = 0;
        assert_eq!(warmup_lr(&hp, 0, 2), 1.0);
    }

    #[test]
    fn batches_cover_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(5, 2, &mut rng);
        assert_eq!(b.len(), 3);
        let mut seen: Vec<usize> = b.concat()[..5].to_vec();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        let s = sample_clips(10, 3, &mut rng);
        assert_eq!(s.len(), 3);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_clips(2, 3, &mut rng).len(), 3);
    }

    #[test]
    fn finetune_is_deterministic() {
        let (a, n) = tiny_data();
        let hp = tiny_hp();
        let opts = FinetuneOptions { seed: 4, ..Default::default() };
        let (e1, l1) = finetune_on(&a, &n, &hp, &opts).unwrap();
        let (e2, l2) = finetune_on(&a, &n, &hp, &opts).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(l1, l2);
        assert_eq!(l1.losses.len(), 4);
        let (e3, _) = finetune_on(&a, &n, &hp, &FinetuneOptions { seed: 5, ..Default::default() }).unwrap();
        assert_ne!(e1, e3);
    }

    #[test]
    fn accumulation_matches_full_batch() {
        let (a, _) = tiny_data();
        let hp = tiny_hp();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut enc = Encoder::init(BackboneConfig::for_clip([1, 4, 8, 8]), 2, Ablation::default(), &mut rng);
        for p in enc.params_mut() {
            for v in p.iter_mut() {
                if *v == 0.0 {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        let clips: Vec<&[f32]> = (0..5).map(|i| a[0].clips.clip(i)).chain((0..3).map(|i| a[1].clips.clip(i))).collect();
        let targets = vec![0.0, 0.2, 1.0, 0.7, 0.0, 0.0, 0.5, 1.0];
        let (l1, g1) = accumulated_grad(&enc, &clips, &targets, 1, &hp).unwrap();
        for steps in [2, 4] {
            let (l2, g2) = accumulated_grad(&enc, &clips, &targets, steps, &hp).unwrap();
            assert!((l1 - l2).abs() < 1e-5);
            for (x, y) in g1.iter().flatten().zip(g2.iter().flatten()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (a, n) = tiny_data();
        let hp = tiny_hp();
        let (enc, _) = finetune_on(&a, &n, &hp, &FinetuneOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.bin");
        let meta = EncoderMeta {
            backbone: enc.backbone.config.clone(),
            hp: hp.clone(),
            seed: 0,
            epochs: hp.ft_epochs,
            ablation: enc.ablation,
        };
        save_encoder(&enc, &meta, &path).unwrap();
        let (back, meta2) = load_encoder(&path).unwrap();
        assert_eq!(meta, meta2);
        let s1 = encoder_score_video(&enc, &a[0].clips).unwrap();
        let s2 = encoder_score_video(&back, &a[0].clips).unwrap();
        assert_eq!(s1.len(), 5);
        for (x, y) in s1.scores.iter().zip(&s2.scores) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(s1.scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn attention_export_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::init(BackboneConfig::for_clip([1, 4, 8, 8]), 2, Ablation::default(), &mut rng);
        let stack = random_stack("v", 3, [1, 4, 8, 8], 1);
        let ex = attention_maps(&enc, &stack).unwrap();
        assert_eq!(ex.shape, [3, 1, 1, 1]);
        assert_eq!(ex.data.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        write_attention_maps(&ex, dir.path()).unwrap();
        let bytes = std::fs::read(dir.path().join("v.attn")).unwrap();
        assert_eq!(bytes.len(), 12);
        let mut no_sga = enc.clone();
        no_sga.ablation.disable_sga = true;
        assert!(attention_maps(&no_sga, &stack).is_err());
    }

    #[test]
    fn missing_labels_are_reported() {
        let (a, n) = tiny_data();
        let mut bad = a.clone();
        bad[1].targets.pop();
        let err = finetune_on(&bad, &n, &tiny_hp(), &FinetuneOptions::default()).unwrap_err();
        assert!(err.to_string().contains("v1"));
    }
}
