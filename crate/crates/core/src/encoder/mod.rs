//! Self-guided-attention encoder.
//!
//! A backbone produces block-4 and block-5 feature maps. The attention module
//! encodes block 4 with `F1` (strided 3x3x3 conv then pointwise conv to `2K`
//! channels, both ReLU), derives a one-channel sigmoid map `A = F2(F1(M_b4))`,
//! resizes it to block 5 and re-weights `M_A = M_b5 + A * M_b5`. The
//! weighted-classification head reads the pooled `M_A`; the guided head reads
//! `M = F3(F1(M_b4))`, pooled over space-time and then over each class's `K`
//! detector channels.

mod train;
pub mod volume;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MistError, Result};
use crate::nn::{fill_uniform, sigmoid, softmax2, standard, NamedTensor};
use volume::{relu, relu_backward, Conv3d, ConvCache, ConvSpec, Resize, Volume};

pub use train::{
    attention_maps, encoder_score_video, finetune, finetune_on, load_encoder, save_encoder,
    write_attention_maps, AttentionExport, EncoderMeta, FinetuneLog, FinetuneOptions, TrainClips,
};

/// Lower/upper clamp applied to probabilities inside the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

/// `-w0 * y * ln p - w1 * (1 - y) * ln(1 - p)` with `p` clamped to
/// `[1e-7, 1 - 1e-7]`. `w0` weighs the abnormal class.
pub fn weighted_ce(p: f64, y: f64, w0: f64, w1: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -w0 * y * p.ln() - w1 * (1.0 - y) * (1.0 - p).ln()
}

/// `d weighted_ce / dp`; zero inside the clamp region.
pub fn weighted_ce_grad(p: f64, y: f64, w0: f64, w1: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    -w0 * y / p + w1 * (1.0 - y) / (1.0 - p)
}

/// Gradient with respect to the abnormal logit of a two-way softmax whose
/// abnormal probability is `p`. The normal logit receives the negation.
fn weighted_ce_logit_grad(p: f64, y: f64, w0: f64, w1: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    -w0 * y * (1.0 - p) + w1 * (1.0 - y) * p
}

/// Feature maps tapped after blocks 4 and 5.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutputs {
    pub m_b4: Volume,
    pub m_b5: Volume,
}

/// Feature extractor the attention module attaches to. Gradients are flat
/// vectors in the order of [`Backbone::params`].
pub trait Backbone {
    type Cache;

    /// Channels of the block-4 and block-5 maps.
    fn tap_channels(&self) -> (usize, usize);

    fn forward(&self, input: &Volume) -> Result<(BackboneOutputs, Self::Cache)>;

    /// `d_b4` is `None` when block 4 receives no gradient from the heads.
    fn backward(
        &self,
        input: &Volume,
        cache: &Self::Cache,
        d_b4: Option<&Array2<f64>>,
        d_b5: Array2<f64>,
    ) -> Vec<Vec<f64>>;

    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
}

/// Channel widths and strides of the five-block toy backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// `C x F x H x W` of one input clip.
    pub clip_shape: [usize; 4],
    pub widths: [usize; 5],
    pub strides: [[usize; 3]; 5],
}

impl BackboneConfig {
    /// Widths `[8, 8, 16, 16, 32]`; blocks 1, 3 and 5 halve every axis that is
    /// still longer than one.
    pub fn for_clip(clip_shape: [usize; 4]) -> Self {
        Self::with_widths(clip_shape, [8, 8, 16, 16, 32])
    }

    pub fn with_widths(clip_shape: [usize; 4], widths: [usize; 5]) -> Self {
        let mut dims = [clip_shape[1], clip_shape[2], clip_shape[3]];
        let mut strides = [[1; 3]; 5];
        for b in [0, 2, 4] {
            for a in 0..3 {
                if dims[a] > 1 {
                    strides[b][a] = 2;
                    dims[a] = (dims[a] - 1) / 2 + 1;
                }
            }
        }
        BackboneConfig {
            clip_shape,
            widths,
            strides,
        }
    }

    pub fn block_specs(&self) -> Vec<ConvSpec> {
        let mut in_ch = self.clip_shape[0];
        (0..5)
            .map(|b| {
                let spec = ConvSpec {
                    in_ch,
                    out_ch: self.widths[b],
                    kernel: 3,
                    stride: self.strides[b],
                };
                in_ch = self.widths[b];
                spec
            })
            .collect()
    }

    /// Spatiotemporal dims after each block.
    pub fn block_dims(&self) -> Vec<[usize; 3]> {
        let mut dims = [self.clip_shape[1], self.clip_shape[2], self.clip_shape[3]];
        self.block_specs()
            .iter()
            .map(|s| {
                dims = s.output_dims(dims);
                dims
            })
            .collect()
    }
}

/// Five conv+ReLU blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackbone {
    pub config: BackboneConfig,
    pub blocks: Vec<Conv3d>,
}

#[derive(Debug, Clone)]
pub struct ToyCache {
    /// Outputs of blocks 1..=5 (post-ReLU).
    acts: Vec<Volume>,
    convs: Vec<ConvCache>,
}

impl ToyBackbone {
    pub fn init<R: Rng + ?Sized>(config: BackboneConfig, rng: &mut R) -> Self {
        let blocks = config.block_specs().into_iter().map(|s| Conv3d::init(s, rng)).collect();
        ToyBackbone { config, blocks }
    }

    pub fn zeros(config: BackboneConfig) -> Self {
        let blocks = config.block_specs().into_iter().map(Conv3d::zeros).collect();
        ToyBackbone { config, blocks }
    }
}

impl Backbone for ToyBackbone {
    type Cache = ToyCache;

    fn tap_channels(&self) -> (usize, usize) {
        (self.config.widths[3], self.config.widths[4])
    }

    fn forward(&self, input: &Volume) -> Result<(BackboneOutputs, ToyCache)> {
        let [c, f, h, w] = self.config.clip_shape;
        if input.channels() != c || input.dims() != [f, h, w] {
            return Err(MistError::Shape(format!(
                "backbone expects clips of shape {:?}, got {} x {:?}",
                self.config.clip_shape,
                input.channels(),
                input.dims()
            )));
        }
        let mut acts: Vec<Volume> = Vec::with_capacity(5);
        let mut convs = Vec::with_capacity(5);
        for (b, conv) in self.blocks.iter().enumerate() {
            let x = if b == 0 { input } else { &acts[b - 1] };
            let (y, cache) = conv.forward(x)?;
            let y = y.with_data(relu(&y.data));
            convs.push(cache);
            acts.push(y);
        }
        let outs = BackboneOutputs {
            m_b4: acts[3].clone(),
            m_b5: acts[4].clone(),
        };
        Ok((outs, ToyCache { acts, convs }))
    }

    fn backward(
        &self,
        input: &Volume,
        cache: &ToyCache,
        d_b4: Option<&Array2<f64>>,
        d_b5: Array2<f64>,
    ) -> Vec<Vec<f64>> {
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); 10];
        let mut g = d_b5;
        for b in (0..5).rev() {
            relu_backward(&mut g, &cache.acts[b].data);
            let x = if b == 0 { input } else { &cache.acts[b - 1] };
            let (pg, dx) = self.blocks[b].backward(x, &cache.convs[b], &g, b > 0);
            grads[2 * b] = pg.weight.into_raw_vec_and_offset().0;
            grads[2 * b + 1] = pg.bias.to_vec();
            if let Some(mut dx) = dx {
                if b == 4 {
                    if let Some(d4) = d_b4 {
                        dx += d4;
                    }
                }
                g = dx;
            }
        }
        grads
    }

    fn params(&self) -> Vec<&[f64]> {
        self.blocks
            .iter()
            .flat_map(|c| [c.weight.as_slice().unwrap(), c.bias.as_slice().unwrap()])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.blocks
            .iter_mut()
            .flat_map(|c| [c.weight.as_slice_mut().unwrap(), c.bias.as_slice_mut().unwrap()])
            .collect()
    }
}

/// Which parts of the model are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    /// Feed pooled `M_b5` straight to the weighted head; no attention, no
    /// guided head.
    pub disable_sga: bool,
    /// Keep the attention module but drop the guided-head loss.
    pub disable_hg: bool,
}

/// `F1`, `F2`, `F3` of the attention module.
#[derive(Debug, Clone, PartialEq)]
pub struct SgaParams {
    pub f1_conv: Conv3d,
    pub f1_point: Conv3d,
    pub f2: Conv3d,
    pub f3: Conv3d,
    pub detectors_per_class: usize,
}

impl SgaParams {
    pub fn init<R: Rng + ?Sized>(c4: usize, k: usize, rng: &mut R) -> Self {
        let mut f2 = Conv3d::zeros(ConvSpec { in_ch: 2 * k, out_ch: 1, kernel: 1, stride: [1; 3] });
        let bound = 1.0 / ((2 * k) as f64).sqrt();
        fill_uniform(f2.weight.as_slice_mut().unwrap(), bound, rng);
        SgaParams {
            f1_conv: Conv3d::init(ConvSpec { in_ch: c4, out_ch: c4, kernel: 3, stride: [2; 3] }, rng),
            f1_point: Conv3d::init(ConvSpec { in_ch: c4, out_ch: 2 * k, kernel: 1, stride: [1; 3] }, rng),
            f2,
            f3: Conv3d::zeros(ConvSpec { in_ch: 2 * k, out_ch: 2 * k, kernel: 1, stride: [1; 3] }),
            detectors_per_class: k,
        }
    }

    fn convs(&self) -> [&Conv3d; 4] {
        [&self.f1_conv, &self.f1_point, &self.f2, &self.f3]
    }

    fn convs_mut(&mut self) -> [&mut Conv3d; 4] {
        [&mut self.f1_conv, &mut self.f1_point, &mut self.f2, &mut self.f3]
    }
}

/// Intermediate maps of the attention module for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SgaTensors {
    /// `F1(M_b4)`, `2K` channels.
    pub m_star_b4: Volume,
    /// Attention at `F1` resolution, before resizing.
    pub a_raw: Volume,
    /// Attention resized to `M_b5`, one channel.
    pub a: Volume,
    pub m_a: Volume,
    /// `F3(M*_b4)`, `2K` channels.
    pub m: Volume,
    /// Guided class probabilities, `n x 2` (normal, abnormal).
    pub p_hat: Array2<f64>,
    /// Weighted-head class probabilities, `n x 2`.
    pub p: Array2<f64>,
}

/// `M_A = M_b5 + A * M_b5`, with the single-channel `A` broadcast over
/// channels. `a` must have `M_b5`'s batch and spatiotemporal shape.
pub fn attend(m_b5: &Volume, a: &Volume) -> Result<Volume> {
    if a.channels() != 1 || a.dims() != m_b5.dims() || a.n != m_b5.n {
        return Err(MistError::Shape(format!(
            "attention map {}x{:?} does not match feature map {}x{:?}",
            a.n,
            a.dims(),
            m_b5.n,
            m_b5.dims()
        )));
    }
    let mut out = m_b5.data.clone();
    for (mut row, &av) in out.axis_iter_mut(Axis(0)).zip(a.data.column(0)) {
        row.mapv_inplace(|x| x + av * x);
    }
    Ok(m_b5.with_data(out))
}

/// Spatiotemporal mean then per-class mean over `k` detector channels,
/// giving `n x 2` class logits. Channels `0..k` belong to the normal class.
pub fn class_pool(m: &Volume, k: usize) -> Array2<f64> {
    let pooled = m.global_average();
    let mut out = Array2::zeros((m.n, 2));
    for i in 0..m.n {
        for c in 0..2 {
            out[[i, c]] = (0..k).map(|j| pooled[[i, c * k + j]]).sum::<f64>() / k as f64;
        }
    }
    out
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = Array2::zeros(z.dim());
    for (i, row) in z.axis_iter(Axis(0)).enumerate() {
        let s = softmax2(row[0], row[1]);
        p[[i, 0]] = s[0];
        p[[i, 1]] = s[1];
    }
    p
}

/// The encoder: backbone, attention module and the two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<B = ToyBackbone> {
    pub backbone: B,
    pub sga: SgaParams,
    /// Weighted-classification head, `C5 x 2`.
    pub hc_weight: Array2<f64>,
    pub hc_bias: Array1<f64>,
    pub ablation: Ablation,
}

struct SgaCache {
    f1_conv_out: Volume,
    f1_conv_cache: ConvCache,
    f1_point_cache: ConvCache,
    f2_cache: ConvCache,
    f3_cache: ConvCache,
    resize: Resize,
}

/// Everything the backward pass needs.
pub struct ForwardPass<C> {
    backbone_cache: C,
    outs: BackboneOutputs,
    sga: Option<(SgaTensors, SgaCache)>,
    pooled: Array2<f64>,
    p: Array2<f64>,
}

impl<C> ForwardPass<C> {
    pub fn outputs(&self) -> &BackboneOutputs {
        &self.outs
    }

    pub fn sga(&self) -> Option<&SgaTensors> {
        self.sga.as_ref().map(|(t, _)| t)
    }

    /// Abnormal-class probability from the weighted head, per clip.
    pub fn scores(&self) -> Vec<f64> {
        self.p.column(1).to_vec()
    }
}

impl Encoder<ToyBackbone> {
    /// Random backbone and `F1`/`F2`; zero `F3` and weighted head, so an
    /// untrained encoder scores every clip 0.5.
    pub fn init<R: Rng + ?Sized>(config: BackboneConfig, k: usize, ablation: Ablation, rng: &mut R) -> Self {
        let backbone = ToyBackbone::init(config, rng);
        Self::with_backbone(backbone, k, ablation, rng)
    }
}

impl<B: Backbone> Encoder<B> {
    pub fn with_backbone<R: Rng + ?Sized>(backbone: B, k: usize, ablation: Ablation, rng: &mut R) -> Self {
        let (c4, c5) = backbone.tap_channels();
        let sga = SgaParams::init(c4, k, rng);
        Encoder {
            backbone,
            sga,
            hc_weight: Array2::zeros((c5, 2)),
            hc_bias: Array1::zeros(2),
            ablation,
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut v = self.backbone.params();
        for c in self.sga.convs() {
            v.push(c.weight.as_slice().unwrap());
            v.push(c.bias.as_slice().unwrap());
        }
        v.push(self.hc_weight.as_slice().unwrap());
        v.push(self.hc_bias.as_slice().unwrap());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.backbone.params_mut();
        for c in self.sga.convs_mut() {
            v.push(c.weight.as_slice_mut().unwrap());
            v.push(c.bias.as_slice_mut().unwrap());
        }
        v.push(self.hc_weight.as_slice_mut().unwrap());
        v.push(self.hc_bias.as_slice_mut().unwrap());
        v
    }

    /// Attention module on precomputed backbone maps.
    pub fn sga_forward(&self, outs: &BackboneOutputs) -> Result<SgaTensors> {
        Ok(self.sga_forward_cached(outs)?.0)
    }

    fn sga_forward_cached(&self, outs: &BackboneOutputs) -> Result<(SgaTensors, SgaCache)> {
        let sga = &self.sga;
        let (f1c, f1_conv_cache) = sga.f1_conv.forward(&outs.m_b4)?;
        let f1_conv_out = f1c.with_data(relu(&f1c.data));
        let (f1p, f1_point_cache) = sga.f1_point.forward(&f1_conv_out)?;
        let m_star_b4 = f1p.with_data(relu(&f1p.data));
        let (a_logit, f2_cache) = sga.f2.forward(&m_star_b4)?;
        let a_raw = a_logit.with_data(a_logit.data.mapv(sigmoid));
        let resize = Resize::new(a_raw.dims(), outs.m_b5.dims());
        let a = resize.forward(&a_raw);
        let m_a = attend(&outs.m_b5, &a)?;
        let (m, f3_cache) = sga.f3.forward(&m_star_b4)?;
        let p_hat = softmax_rows(&class_pool(&m, sga.detectors_per_class));
        let p = softmax_rows(&self.head_logits(&m_a.global_average()));
        Ok((
            SgaTensors {
                m_star_b4,
                a_raw,
                a,
                m_a,
                m,
                p_hat,
                p,
            },
            SgaCache {
                f1_conv_out,
                f1_conv_cache,
                f1_point_cache,
                f2_cache,
                f3_cache,
                resize,
            },
        ))
    }

    fn head_logits(&self, pooled: &Array2<f64>) -> Array2<f64> {
        pooled.dot(&self.hc_weight) + &self.hc_bias
    }

    pub fn forward(&self, input: &Volume) -> Result<ForwardPass<B::Cache>> {
        let (outs, backbone_cache) = self.backbone.forward(input)?;
        let (c4, c5) = self.backbone.tap_channels();
        if outs.m_b4.channels() != c4 || outs.m_b5.channels() != c5 || self.hc_weight.nrows() != c5 {
            return Err(MistError::Shape("backbone tap channels disagree with heads".into()));
        }
        if self.ablation.disable_sga {
            let pooled = outs.m_b5.global_average();
            let p = softmax_rows(&self.head_logits(&pooled));
            return Ok(ForwardPass {
                backbone_cache,
                outs,
                sga: None,
                pooled,
                p,
            });
        }
        let (tensors, cache) = self.sga_forward_cached(&outs)?;
        let pooled = tensors.m_a.global_average();
        let p = tensors.p.clone();
        Ok(ForwardPass {
            backbone_cache,
            outs,
            sga: Some((tensors, cache)),
            pooled,
            p,
        })
    }

    /// Mean over clips of `L1 + L2` (just `L1` when the guided head is off).
    pub fn loss(&self, fwd: &ForwardPass<B::Cache>, targets: &[f64], w0: f64, w1: f64) -> f64 {
        let use_hg = !self.ablation.disable_sga && !self.ablation.disable_hg;
        let n = targets.len() as f64;
        let mut total = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            total += weighted_ce(fwd.p[[i, 1]], y, w0, w1);
            if use_hg {
                let p_hat = &fwd.sga().unwrap().p_hat;
                total += weighted_ce(p_hat[[i, 1]], y, w0, w1);
            }
        }
        total / n
    }

    /// Loss and gradients for one batch, gradients ordered as [`Encoder::params`].
    pub fn loss_and_grad(
        &self,
        input: &Volume,
        targets: &[f64],
        w0: f64,
        w1: f64,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        if targets.len() != input.n {
            return Err(MistError::Shape(format!(
                "{} targets for {} clips",
                targets.len(),
                input.n
            )));
        }
        let fwd = self.forward(input)?;
        let loss = self.loss(&fwd, targets, w0, w1);
        let grads = self.backward(input, &fwd, targets, w0, w1);
        Ok((loss, grads))
    }

    fn backward(
        &self,
        input: &Volume,
        fwd: &ForwardPass<B::Cache>,
        targets: &[f64],
        w0: f64,
        w1: f64,
    ) -> Vec<Vec<f64>> {
        let n = targets.len();
        let inv_n = 1.0 / n as f64;
        let use_hg = !self.ablation.disable_sga && !self.ablation.disable_hg;

        // weighted head
        let mut dz = Array2::<f64>::zeros((n, 2));
        for (i, &y) in targets.iter().enumerate() {
            let g = weighted_ce_logit_grad(fwd.p[[i, 1]], y, w0, w1) * inv_n;
            dz[[i, 1]] = g;
            dz[[i, 0]] = -g;
        }
        let d_hc_w = standard(fwd.pooled.t().dot(&dz));
        let d_hc_b = dz.sum_axis(Axis(0));
        let d_pooled = dz.dot(&self.hc_weight.t());

        let zero_like = |c: &Conv3d| (vec![0.0; c.weight.len()], vec![0.0; c.bias.len()]);
        let mut sga_grads: Vec<(Vec<f64>, Vec<f64>)> =
            self.sga.convs().iter().map(|c| zero_like(c)).collect();

        let (d_b4, d_b5) = match &fwd.sga {
            None => (None, fwd.outs.m_b5.global_average_backward(&d_pooled)),
            Some((t, cache)) => {
                let d_ma = t.m_a.global_average_backward(&d_pooled);
                // M_A = M_b5 + A * M_b5
                let m_b5 = &fwd.outs.m_b5.data;
                let mut d_b5 = d_ma.clone();
                let mut d_a = Array2::<f64>::zeros((m_b5.nrows(), 1));
                for r in 0..m_b5.nrows() {
                    let av = t.a.data[[r, 0]];
                    let mut acc = 0.0;
                    for c in 0..m_b5.ncols() {
                        d_b5[[r, c]] = d_ma[[r, c]] * (1.0 + av);
                        acc += d_ma[[r, c]] * m_b5[[r, c]];
                    }
                    d_a[[r, 0]] = acc;
                }
                let mut d_a_raw = cache.resize.backward(n, &d_a);
                d_a_raw.zip_mut_with(&t.a_raw.data, |g, &a| *g *= a * (1.0 - a));
                let (g2, d_mstar_a) = self.sga.f2.backward(&t.m_star_b4, &cache.f2_cache, &d_a_raw, true);
                sga_grads[2] = (g2.weight.into_raw_vec_and_offset().0, g2.bias.to_vec());
                let mut d_mstar = d_mstar_a.unwrap();

                if use_hg {
                    let k = self.sga.detectors_per_class;
                    let positions = t.m.positions() as f64;
                    let mut d_m = Array2::<f64>::zeros(t.m.data.dim());
                    for (i, &y) in targets.iter().enumerate() {
                        let g = weighted_ce_logit_grad(t.p_hat[[i, 1]], y, w0, w1) * inv_n;
                        let per_class = [-g, g];
                        for pos in 0..t.m.positions() {
                            let row = i * t.m.positions() + pos;
                            for (c, &gc) in per_class.iter().enumerate() {
                                for j in 0..k {
                                    d_m[[row, c * k + j]] = gc / (k as f64 * positions);
                                }
                            }
                        }
                    }
                    let (g3, d_mstar_m) = self.sga.f3.backward(&t.m_star_b4, &cache.f3_cache, &d_m, true);
                    sga_grads[3] = (g3.weight.into_raw_vec_and_offset().0, g3.bias.to_vec());
                    d_mstar += &d_mstar_m.unwrap();
                }

                relu_backward(&mut d_mstar, &t.m_star_b4.data);
                let (g1p, d_f1c) =
                    self.sga.f1_point.backward(&cache.f1_conv_out, &cache.f1_point_cache, &d_mstar, true);
                sga_grads[1] = (g1p.weight.into_raw_vec_and_offset().0, g1p.bias.to_vec());
                let mut d_f1c = d_f1c.unwrap();
                relu_backward(&mut d_f1c, &cache.f1_conv_out.data);
                let (g1c, d_b4) =
                    self.sga.f1_conv.backward(&fwd.outs.m_b4, &cache.f1_conv_cache, &d_f1c, true);
                sga_grads[0] = (g1c.weight.into_raw_vec_and_offset().0, g1c.bias.to_vec());
                (d_b4, d_b5)
            }
        };

        let mut grads = self
            .backbone
            .backward(input, &fwd.backbone_cache, d_b4.as_ref(), d_b5);
        for (w, b) in sga_grads {
            grads.push(w);
            grads.push(b);
        }
        grads.push(d_hc_w.into_raw_vec_and_offset().0);
        grads.push(d_hc_b.to_vec());
        grads
    }
}

impl Encoder<ToyBackbone> {
    pub(crate) fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in 1..=5 {
            names.push(format!("block{b}.weight"));
            names.push(format!("block{b}.bias"));
        }
        for f in ["f1_conv", "f1_point", "f2", "f3"] {
            names.push(format!("{f}.weight"));
            names.push(format!("{f}.bias"));
        }
        names.push("hc.weight".into());
        names.push("hc.bias".into());
        names
    }

    pub(crate) fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let convs = self.backbone.blocks.iter().chain(self.sga.convs());
        for c in convs {
            shapes.push(c.weight.shape().to_vec());
            shapes.push(c.bias.shape().to_vec());
        }
        shapes.push(self.hc_weight.shape().to_vec());
        shapes.push(self.hc_bias.shape().to_vec());
        shapes
    }

    pub(crate) fn to_tensors(&self) -> Vec<NamedTensor> {
        self.tensor_names()
            .into_iter()
            .zip(self.tensor_shapes())
            .zip(self.params())
            .map(|((name, shape), data)| NamedTensor {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect()
    }
}
