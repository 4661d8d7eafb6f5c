//! Multiple-instance pseudo-label generator.
//!
//! A `D -> 512 -> 32 -> 1` MLP scores every clip of a bag; sub-bag scores are
//! the mean of their clip scores, and training minimises the hinge ranking
//! loss between the highest abnormal and highest normal sub-bag plus a
//! sparsity penalty on the abnormal bag.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::HyperParams;
use crate::dataio::{FeatureSequence, Manifest, ScoreSeries, Split};
use crate::error::{MistError, Result};
use crate::nn::{
    fill_uniform, read_param_blob, sigmoid, standard, take_tensor, write_param_blob, Adagrad, NamedTensor,
};
use crate::sampling::{build_bag, BagSample, SamplingMode};

pub const HIDDEN1: usize = 512;
pub const HIDDEN2: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl GeneratorParams {
    pub fn zeros(dim: usize) -> Self {
        GeneratorParams {
            w1: Array2::zeros((dim, HIDDEN1)),
            b1: Array1::zeros(HIDDEN1),
            w2: Array2::zeros((HIDDEN1, HIDDEN2)),
            b2: Array1::zeros(HIDDEN2),
            w3: Array2::zeros((HIDDEN2, 1)),
            b3: Array1::zeros(1),
        }
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(dim);
        for (fan_in, w, b) in [
            (dim, &mut p.w1, &mut p.b1),
            (HIDDEN1, &mut p.w2, &mut p.b2),
            (HIDDEN2, &mut p.w3, &mut p.b3),
        ] {
            let bound = 1.0 / (fan_in as f64).sqrt();
            fill_uniform(w.as_slice_mut().unwrap(), bound, rng);
            fill_uniform(b.as_slice_mut().unwrap(), bound, rng);
        }
        p
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.nrows()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.w3.as_slice_mut().unwrap(),
            self.b3.as_slice_mut().unwrap(),
        ]
    }

    fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.w3.as_slice().unwrap(),
            self.b3.as_slice().unwrap(),
        ]
    }

    fn to_tensors(&self) -> Vec<NamedTensor> {
        let names = ["w1", "b1", "w2", "b2", "w3", "b3"];
        let shapes = self.shapes();
        names
            .iter()
            .zip(shapes)
            .zip(self.slices())
            .map(|((n, s), d)| NamedTensor {
                name: n.to_string(),
                shape: s,
                data: d.to_vec(),
            })
            .collect()
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        let d = self.feature_dim();
        vec![
            vec![d, HIDDEN1],
            vec![HIDDEN1],
            vec![HIDDEN1, HIDDEN2],
            vec![HIDDEN2],
            vec![HIDDEN2, 1],
            vec![1],
        ]
    }

    fn from_tensors(dim: usize, mut tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut p = Self::zeros(dim);
        let names = ["w1", "b1", "w2", "b2", "w3", "b3"];
        let shapes = p.shapes();
        for ((name, shape), dst) in names.iter().zip(shapes).zip(p.slices_mut()) {
            dst.copy_from_slice(&take_tensor(&mut tensors, name, &shape)?);
        }
        Ok(p)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.feature_dim() {
            return Err(MistError::Shape(format!(
                "features have dimension {dim}, generator expects {}",
                self.feature_dim()
            )));
        }
        Ok(())
    }
}

/// Activations kept for the backward pass.
struct ForwardCache {
    z1: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    mask1: Option<Array2<f64>>,
    mask2: Option<Array2<f64>>,
    scores: Array1<f64>,
}

fn dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

fn forward_rows<R: Rng + ?Sized>(
    params: &GeneratorParams,
    x: ArrayView2<f64>,
    dropout: Option<(f64, &mut R)>,
) -> ForwardCache {
    let (p, mut rng) = match dropout {
        Some((p, r)) if p > 0.0 => (p, Some(r)),
        _ => (0.0, None),
    };
    let z1 = x.dot(&params.w1) + &params.b1;
    let mut h1 = z1.mapv(|v| v.max(0.0));
    let mask1 = rng.as_deref_mut().map(|r| dropout_mask(h1.dim(), p, r));
    if let Some(m) = &mask1 {
        h1 *= m;
    }
    let mut h2 = h1.dot(&params.w2) + &params.b2;
    let mask2 = rng.as_deref_mut().map(|r| dropout_mask(h2.dim(), p, r));
    if let Some(m) = &mask2 {
        h2 *= m;
    }
    let z3 = h2.dot(&params.w3) + &params.b3;
    let scores = z3.column(0).mapv(sigmoid);
    ForwardCache {
        z1,
        h1,
        h2,
        mask1,
        mask2,
        scores,
    }
}

/// Gradients with respect to every parameter given `dL/ds` per row.
fn backward_rows(
    params: &GeneratorParams,
    x: ArrayView2<f64>,
    cache: &ForwardCache,
    dscores: &Array1<f64>,
) -> GeneratorParams {
    let dz3 = (dscores * &cache.scores.mapv(|s| s * (1.0 - s))).insert_axis(Axis(1));
    let dw3 = standard(cache.h2.t().dot(&dz3));
    let db3 = dz3.sum_axis(Axis(0));
    let mut dz2 = dz3.dot(&params.w3.t());
    if let Some(m) = &cache.mask2 {
        dz2 *= m;
    }
    let dw2 = standard(cache.h1.t().dot(&dz2));
    let db2 = dz2.sum_axis(Axis(0));
    let mut dz1 = dz2.dot(&params.w2.t());
    if let Some(m) = &cache.mask1 {
        dz1 *= m;
    }
    dz1.zip_mut_with(&cache.z1, |g, &z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    let dw1 = standard(x.t().dot(&dz1));
    let db1 = dz1.sum_axis(Axis(0));
    GeneratorParams {
        w1: dw1,
        b1: db1,
        w2: dw2,
        b2: db2,
        w3: dw3,
        b3: db3,
    }
}

/// Clip scores `s_{l,t}` and their sub-bag means `S_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBagScores {
    pub instance: Array2<f64>,
    pub pooled: Vec<f64>,
}

impl SubBagScores {
    pub fn from_instance(instance: Array2<f64>) -> Self {
        let pooled = instance.mean_axis(Axis(1)).unwrap().to_vec();
        SubBagScores { instance, pooled }
    }
}

fn bag_rows(bag: &BagSample) -> Array2<f64> {
    let (l, t, d) = bag.subbags.dim();
    bag.subbags
        .view()
        .into_shape_with_order((l * t, d))
        .unwrap()
        .mapv(f64::from)
}

/// Scores every bag. Dropout with `dropout_p` is applied only when
/// `training` is set, drawing masks from a generator seeded with `seed`.
pub fn generator_forward(
    bags: &[BagSample],
    params: &GeneratorParams,
    training: bool,
    dropout_p: f64,
    seed: u64,
) -> Result<Vec<SubBagScores>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bags.iter()
        .map(|bag| {
            let (l, t, d) = bag.subbags.dim();
            params.check_dim(d)?;
            let x = bag_rows(bag);
            let dropout = training.then_some((dropout_p, &mut rng));
            let cache = forward_rows(params, x.view(), dropout);
            let instance = cache.scores.into_shape_with_order((l, t)).unwrap();
            Ok(SubBagScores::from_instance(instance))
        })
        .collect()
}

/// Ranking loss with sparsity:
/// `max(0, eps - max S_a + max S_n) + lambda / L * sum S_a`.
pub fn mil_ranking_loss(abnormal: &[f64], normal: &[f64], epsilon: f64, lambda: f64) -> Result<f64> {
    Ok(mil_ranking_loss_grad(abnormal, normal, epsilon, lambda)?.0)
}

/// Loss and its (sub)gradient with respect to both score vectors. Ties for
/// the maximum route the gradient to the first maximal entry.
pub fn mil_ranking_loss_grad(
    abnormal: &[f64],
    normal: &[f64],
    epsilon: f64,
    lambda: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if abnormal.is_empty() || normal.is_empty() {
        return Err(MistError::validation("scores", "empty sub-bag score vector"));
    }
    let argmax = |v: &[f64]| {
        v.iter()
            .enumerate()
            .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
    };
    let ia = argmax(abnormal);
    let inn = argmax(normal);
    let l = abnormal.len() as f64;
    let margin = epsilon - abnormal[ia] + normal[inn];
    let hinge = margin.max(0.0);
    let sparsity = lambda / l * abnormal.iter().sum::<f64>();

    let mut ga = vec![lambda / l; abnormal.len()];
    let mut gn = vec![0.0; normal.len()];
    if margin > 0.0 {
        ga[ia] -= 1.0;
        gn[inn] += 1.0;
    }
    Ok((hinge + sparsity, ga, gn))
}

/// One clip score per row; dropout off.
pub fn score_video(params: &GeneratorParams, seq: &FeatureSequence) -> Result<ScoreSeries> {
    params.check_dim(seq.dim())?;
    let x = seq.data.mapv(f64::from);
    let cache = forward_rows::<ChaCha8Rng>(params, x.view(), None);
    Ok(ScoreSeries {
        video_id: seq.video_id.clone(),
        scores: cache.scores.iter().map(|&s| s as f32).collect(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorTrainLog {
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorTrainOptions {
    pub sampling: SamplingMode,
    pub seed: u64,
}

/// Draws `count` indices from `0..pool`: without replacement when the pool is
/// large enough, otherwise with replacement.
fn sample_indices<R: Rng + ?Sized>(pool: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if pool >= count {
        let mut idx: Vec<usize> = (0..pool).collect();
        idx.partial_shuffle(rng, count);
        idx.truncate(count);
        idx
    } else {
        (0..count).map(|_| rng.random_range(0..pool)).collect()
    }
}

/// Trains the generator on bag labels alone.
///
/// Each iteration draws `gen_batch_abnormal` abnormal and `gen_batch_normal`
/// normal training videos, pairs the i-th of each, averages the ranking loss
/// over the pairs and takes one Adagrad step.
pub fn train_generator_on(
    abnormal: &[FeatureSequence],
    normal: &[FeatureSequence],
    hp: &HyperParams,
    opts: GeneratorTrainOptions,
) -> Result<(GeneratorParams, GeneratorTrainLog)> {
    if abnormal.is_empty() {
        return Err(MistError::validation(
            "manifest",
            "generator training needs at least one abnormal training video",
        ));
    }
    if normal.is_empty() {
        return Err(MistError::validation(
            "manifest",
            "generator training needs at least one normal training video",
        ));
    }
    let dim = abnormal[0].dim();
    for seq in abnormal.iter().chain(normal) {
        if seq.dim() != dim {
            return Err(MistError::Shape(format!(
                "{} has feature dimension {}, expected {dim}",
                seq.video_id,
                seq.dim()
            )));
        }
    }

    let to_rows = |seqs: &[FeatureSequence]| -> Result<Vec<Array2<f64>>> {
        seqs.iter()
            .map(|s| Ok(bag_rows(&build_bag(s, hp.subbags, hp.clips_per_subbag, opts.sampling)?)))
            .collect()
    };
    let abnormal_rows = to_rows(abnormal)?;
    let normal_rows = to_rows(normal)?;
    let bag_len = abnormal_rows[0].nrows();
    let clips = bag_len / hp.subbags;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = GeneratorParams::init(dim, &mut rng);
    let mut opt = Adagrad::new(hp.gen_lr);
    let mut losses = Vec::with_capacity(hp.gen_iters);

    for _ in 0..hp.gen_iters {
        let ai = sample_indices(abnormal_rows.len(), hp.gen_batch_abnormal, &mut rng);
        let ni = sample_indices(normal_rows.len(), hp.gen_batch_normal, &mut rng);
        let pairs = ai.len().max(ni.len());

        let mut x = Array2::<f64>::zeros((2 * pairs * bag_len, dim));
        for p in 0..pairs {
            let a = &abnormal_rows[ai[p % ai.len()]];
            let n = &normal_rows[ni[p % ni.len()]];
            x.slice_mut(ndarray::s![2 * p * bag_len..(2 * p + 1) * bag_len, ..]).assign(a);
            x.slice_mut(ndarray::s![(2 * p + 1) * bag_len..(2 * p + 2) * bag_len, ..]).assign(n);
        }

        let cache = forward_rows(&params, x.view(), Some((hp.dropout_p, &mut rng)));
        let mut dscores = Array1::<f64>::zeros(x.nrows());
        let mut total = 0.0;
        for p in 0..pairs {
            let pooled = |offset: usize| -> Vec<f64> {
                (0..hp.subbags)
                    .map(|l| {
                        let base = offset + l * clips;
                        cache.scores.slice(ndarray::s![base..base + clips]).mean().unwrap()
                    })
                    .collect()
            };
            let a_off = 2 * p * bag_len;
            let n_off = (2 * p + 1) * bag_len;
            let (loss, ga, gn) =
                mil_ranking_loss_grad(&pooled(a_off), &pooled(n_off), hp.epsilon, hp.lambda)?;
            total += loss;
            let scale = 1.0 / (pairs as f64 * clips as f64);
            for l in 0..hp.subbags {
                for t in 0..clips {
                    dscores[a_off + l * clips + t] += ga[l] * scale;
                    dscores[n_off + l * clips + t] += gn[l] * scale;
                }
            }
        }
        losses.push(total / pairs as f64);

        let grads = backward_rows(&params, x.view(), &cache, &dscores);
        opt.step(params.slices_mut(), grads.slices());
    }
    Ok((params, GeneratorTrainLog { losses }))
}

/// Loads training features from the manifest and trains the generator.
pub fn train_generator(
    manifest: &Manifest,
    hp: &HyperParams,
    opts: GeneratorTrainOptions,
) -> Result<(GeneratorParams, GeneratorTrainLog)> {
    let load = |label: u8| -> Result<Vec<FeatureSequence>> {
        manifest
            .select(Split::Train, Some(label))
            .into_iter()
            .map(|r| manifest.load_features(r))
            .collect()
    };
    let abnormal = load(1)?;
    let normal = load(0)?;
    train_generator_on(&abnormal, &normal, hp, opts)
}

/// JSON sidecar stored next to a generator checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub feature_dim: usize,
    pub hp: HyperParams,
    pub seed: u64,
    pub iterations: usize,
    pub sampling: SamplingMode,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_generator(params: &GeneratorParams, meta: &GeneratorMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_param_blob(&params.to_tensors(), path)?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta).expect("metadata always serializes");
    std::fs::write(&side, text).map_err(|e| MistError::io(&side, e))
}

pub fn load_generator(path: impl AsRef<Path>) -> Result<(GeneratorParams, GeneratorMeta)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| MistError::io(&side, e))?;
    let meta: GeneratorMeta = serde_json::from_str(&text).map_err(|e| MistError::json(&side, e))?;
    let params = GeneratorParams::from_tensors(meta.feature_dim, read_param_blob(path)?)?;
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::gather_subbags;
    use ndarray::Array3;

    fn random_seq(id: &str, n: usize, d: usize, seed: u64) -> FeatureSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0f32..1.0));
        FeatureSequence::new(id, data).unwrap()
    }

    #[test]
    fn zero_generator_scores_half() {
        let params = GeneratorParams::zeros(5);
        let seq = random_seq("v", 7, 5, 1);
        let bag = gather_subbags(&seq, &[0, 2, 4], 3).unwrap();
        let out = generator_forward(&[bag], &params, false, 0.6, 0).unwrap();
        assert!(out[0].instance.iter().all(|&s| s == 0.5));
        assert!(out[0].pooled.iter().all(|&s| s == 0.5));
        assert!(score_video(&params, &seq).unwrap().scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn pooled_score_is_mean() {
        let inst = Array2::from_shape_vec((1, 3), vec![0.1, 0.2, 0.3]).unwrap();
        let s = SubBagScores::from_instance(inst);
        assert!((s.pooled[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn pooled_matches_bruteforce_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = GeneratorParams::init(6, &mut rng);
        let seq = random_seq("v", 20, 6, 2);
        let bag = build_bag(&seq, 5, 3, SamplingMode::SparseContinuous).unwrap();
        for training in [false, true] {
            let out = generator_forward(std::slice::from_ref(&bag), &params, training, 0.6, 4).unwrap();
            for l in 0..5 {
                let mut acc = 0.0;
                for t in 0..3 {
                    acc += out[0].instance[[l, t]];
                }
                assert!((out[0].pooled[l] - acc / 3.0).abs() < 1e-15);
            }
            assert!(out[0].instance.iter().all(|&s| s > 0.0 && s < 1.0));
        }
        // eval scores match score_video on the same clips
        let eval = generator_forward(std::slice::from_ref(&bag), &params, false, 0.6, 0).unwrap();
        let full = score_video(&params, &seq).unwrap();
        for (l, &start) in bag.start_indices.iter().enumerate() {
            for t in 0..3 {
                assert!((eval[0].instance[[l, t]] as f32 - full.scores[start + t]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dropout_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = GeneratorParams::init(4, &mut rng);
        let bag = BagSample {
            video_id: "v".into(),
            subbags: Array3::from_elem((4, 2, 4), 0.7f32),
            start_indices: vec![0, 1, 2, 3],
        };
        let a = generator_forward(std::slice::from_ref(&bag), &params, true, 0.6, 11).unwrap();
        let b = generator_forward(std::slice::from_ref(&bag), &params, true, 0.6, 11).unwrap();
        let c = generator_forward(std::slice::from_ref(&bag), &params, true, 0.6, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn dimension_mismatch() {
        let params = GeneratorParams::zeros(3);
        let seq = random_seq("v", 4, 5, 0);
        assert!(matches!(score_video(&params, &seq), Err(MistError::Shape(_))));
    }

    #[test]
    fn loss_cases() {
        assert_eq!(mil_ranking_loss(&[1.0, 0.2], &[0.0, 0.0], 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(mil_ranking_loss(&[0.5, 0.1], &[0.5, 0.3], 1.0, 0.0).unwrap(), 1.0);
        let v = mil_ranking_loss(&[0.9, 0.1], &[0.2, 0.3], 1.0, 0.01).unwrap();
        assert!((v - 0.405).abs() < 1e-12, "{v}");
        assert!(mil_ranking_loss(&[], &[0.1], 1.0, 0.0).is_err());
    }

    #[test]
    fn score_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = GeneratorParams::init(3, &mut rng);
        for n in 1..=5 {
            let s = score_video(&params, &random_seq("v", n, 3, n as u64)).unwrap();
            assert_eq!(s.len(), n);
            assert!(s.scores.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        // small dims, no dropout: check a handful of coordinates of every tensor
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = GeneratorParams::init(3, &mut rng);
        let x = Array2::from_shape_simple_fn((6, 3), || rng.random_range(-1.0..1.0));
        let w = Array1::from_shape_simple_fn(6, || rng.random_range(-1.0..1.0));
        let f = |p: &GeneratorParams| forward_rows::<ChaCha8Rng>(p, x.view(), None).scores.dot(&w);
        let cache = forward_rows::<ChaCha8Rng>(&params, x.view(), None);
        let grads = backward_rows(&params, x.view(), &cache, &w);
        let g_slices: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let h = 1e-6;
        for (ti, g) in g_slices.iter().enumerate() {
            for j in (0..g.len()).step_by((g.len() / 7).max(1)) {
                let mut p = params.clone();
                p.slices_mut()[ti][j] += h;
                let up = f(&p);
                p.slices_mut()[ti][j] -= 2.0 * h;
                let down = f(&p);
                let fd = (up - down) / (2.0 * h);
                let denom = fd.abs().max(g[j].abs()).max(1e-7);
                assert!((fd - g[j]).abs() / denom < 1e-4, "tensor {ti} idx {j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn needs_both_classes() {
        let hp = HyperParams { gen_iters: 1, ..HyperParams::default() };
        let opts = GeneratorTrainOptions { sampling: SamplingMode::SparseContinuous, seed: 0 };
        let seqs = vec![random_seq("a", 10, 2, 0)];
        assert!(train_generator_on(&[], &seqs, &hp, opts).is_err());
        assert!(train_generator_on(&seqs, &[], &hp, opts).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = GeneratorParams::init(4, &mut rng);
        let meta = GeneratorMeta {
            feature_dim: 4,
            hp: HyperParams::default(),
            seed: 8,
            iterations: 0,
            sampling: SamplingMode::SparseContinuous,
        };
        let path = dir.path().join("gen.ckpt");
        save_generator(&params, &meta, &path).unwrap();
        let (back, back_meta) = load_generator(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(back_meta, meta);
    }
}
