//! Channels-last 3-D feature volumes and the layers that act on them.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MistError, Result};
use crate::nn::{fill_uniform, standard};

/// A batch of `n` volumes of `t x h x w` positions with `c` channels.
/// `data` has one row per `(n, t, h, w)` position, row-major in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub n: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub data: Array2<f64>,
}

impl Volume {
    pub fn zeros(n: usize, dims: [usize; 3], c: usize) -> Self {
        Volume {
            n,
            t: dims[0],
            h: dims[1],
            w: dims[2],
            data: Array2::zeros((n * dims[0] * dims[1] * dims[2], c)),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.t, self.h, self.w]
    }

    /// Positions per sample.
    pub fn positions(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn with_data(&self, data: Array2<f64>) -> Volume {
        Volume {
            n: self.n,
            t: self.t,
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Packs channel-first clips (`C x F x H x W`, `f32`) into a batch.
    pub fn from_clips<'a>(clips: impl IntoIterator<Item = &'a [f32]>, shape: [usize; 4]) -> Result<Volume> {
        let [c, f, h, w] = shape;
        let per = c * f * h * w;
        let clips: Vec<&[f32]> = clips.into_iter().collect();
        let mut vol = Volume::zeros(clips.len(), [f, h, w], c);
        let p = f * h * w;
        for (i, clip) in clips.iter().enumerate() {
            if clip.len() != per {
                return Err(MistError::Shape(format!(
                    "clip has {} values, expected {per} for shape {shape:?}",
                    clip.len()
                )));
            }
            for ch in 0..c {
                for pos in 0..p {
                    vol.data[[i * p + pos, ch]] = f64::from(clip[ch * p + pos]);
                }
            }
        }
        Ok(vol)
    }

    /// Mean over positions: `n x c`.
    pub fn global_average(&self) -> Array2<f64> {
        let p = self.positions();
        let c = self.channels();
        self.data
            .view()
            .into_shape_with_order((self.n, p, c))
            .unwrap()
            .mean_axis(Axis(1))
            .unwrap()
    }

    /// Transpose of [`Volume::global_average`].
    pub fn global_average_backward(&self, grad: &Array2<f64>) -> Array2<f64> {
        let p = self.positions();
        let mut out = Array2::zeros(self.data.dim());
        for i in 0..self.n {
            let g = grad.row(i).mapv(|v| v / p as f64);
            for pos in 0..p {
                out.row_mut(i * p + pos).assign(&g);
            }
        }
        out
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward(grad: &mut Array2<f64>, out: &Array2<f64>) {
    grad.zip_mut_with(out, |g, &o| {
        if o <= 0.0 {
            *g = 0.0
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Cubic kernel side (1 or an odd number).
    pub kernel: usize,
    pub stride: [usize; 3],
}

impl ConvSpec {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_dims(&self, input: [usize; 3]) -> [usize; 3] {
        let p = self.padding();
        let mut out = [0; 3];
        for i in 0..3 {
            out[i] = (input[i] + 2 * p - self.kernel) / self.stride[i] + 1;
        }
        out
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == [1, 1, 1]
    }
}

/// 3-D convolution with zero padding `kernel / 2`. `weight` is laid out
/// `(kt, kh, kw, in_ch) x out_ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub spec: ConvSpec,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// What the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    in_dims: [usize; 3],
    n: usize,
    /// `None` for pointwise convolutions, where the input itself is used.
    cols: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ConvGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv3d {
    pub fn zeros(spec: ConvSpec) -> Self {
        let k3 = spec.kernel.pow(3);
        Conv3d {
            spec,
            weight: Array2::zeros((k3 * spec.in_ch, spec.out_ch)),
            bias: Array1::zeros(spec.out_ch),
        }
    }

    /// He-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(spec: ConvSpec, rng: &mut R) -> Self {
        let mut c = Self::zeros(spec);
        let fan_in = c.weight.nrows() as f64;
        fill_uniform(c.weight.as_slice_mut().unwrap(), (6.0 / fan_in).sqrt(), rng);
        c
    }

    fn im2col(&self, x: &Volume) -> (Array2<f64>, [usize; 3]) {
        let k = self.spec.kernel;
        let pad = self.spec.padding() as isize;
        let cin = self.spec.in_ch;
        let [ot, oh, ow] = self.spec.output_dims(x.dims());
        let [st, sh, sw] = self.spec.stride;
        let op = ot * oh * ow;
        let ip = x.positions();
        let mut cols = Array2::<f64>::zeros((x.n * op, k * k * k * cin));
        for n in 0..x.n {
            for zt in 0..ot {
                for zh in 0..oh {
                    for zw in 0..ow {
                        let row = n * op + (zt * oh + zh) * ow + zw;
                        let mut dst = cols.row_mut(row);
                        let dst = dst.as_slice_mut().unwrap();
                        for kt in 0..k {
                            let it = (zt * st) as isize + kt as isize - pad;
                            if it < 0 || it >= x.t as isize {
                                continue;
                            }
                            for kh in 0..k {
                                let ih = (zh * sh) as isize + kh as isize - pad;
                                if ih < 0 || ih >= x.h as isize {
                                    continue;
                                }
                                for kw in 0..k {
                                    let iw = (zw * sw) as isize + kw as isize - pad;
                                    if iw < 0 || iw >= x.w as isize {
                                        continue;
                                    }
                                    let src_row = n * ip
                                        + ((it as usize) * x.h + ih as usize) * x.w
                                        + iw as usize;
                                    let off = ((kt * k + kh) * k + kw) * cin;
                                    dst[off..off + cin]
                                        .copy_from_slice(x.data.row(src_row).as_slice().unwrap());
                                }
                            }
                        }
                    }
                }
            }
        }
        (cols, [ot, oh, ow])
    }

    fn col2im(&self, dcols: &Array2<f64>, n: usize, in_dims: [usize; 3]) -> Array2<f64> {
        let k = self.spec.kernel;
        let pad = self.spec.padding() as isize;
        let cin = self.spec.in_ch;
        let [ot, oh, ow] = self.spec.output_dims(in_dims);
        let [st, sh, sw] = self.spec.stride;
        let [t, h, w] = in_dims;
        let op = ot * oh * ow;
        let ip = t * h * w;
        let mut dx = Array2::<f64>::zeros((n * ip, cin));
        for b in 0..n {
            for zt in 0..ot {
                for zh in 0..oh {
                    for zw in 0..ow {
                        let row = b * op + (zt * oh + zh) * ow + zw;
                        let src = dcols.row(row);
                        let src = src.as_slice().unwrap();
                        for kt in 0..k {
                            let it = (zt * st) as isize + kt as isize - pad;
                            if it < 0 || it >= t as isize {
                                continue;
                            }
                            for kh in 0..k {
                                let ih = (zh * sh) as isize + kh as isize - pad;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for kw in 0..k {
                                    let iw = (zw * sw) as isize + kw as isize - pad;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    let dst_row =
                                        b * ip + ((it as usize) * h + ih as usize) * w + iw as usize;
                                    let off = ((kt * k + kh) * k + kw) * cin;
                                    let mut d = dx.row_mut(dst_row);
                                    for (dv, sv) in d.iter_mut().zip(&src[off..off + cin]) {
                                        *dv += sv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Volume) -> Result<(Volume, ConvCache)> {
        if x.channels() != self.spec.in_ch {
            return Err(MistError::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.spec.in_ch,
                x.channels()
            )));
        }
        if self.spec.is_pointwise() {
            let out = x.data.dot(&self.weight) + &self.bias;
            return Ok((
                x.with_data(out),
                ConvCache {
                    in_dims: x.dims(),
                    n: x.n,
                    cols: None,
                },
            ));
        }
        let (cols, dims) = self.im2col(x);
        let out = cols.dot(&self.weight) + &self.bias;
        Ok((
            Volume {
                n: x.n,
                t: dims[0],
                h: dims[1],
                w: dims[2],
                data: out,
            },
            ConvCache {
                in_dims: x.dims(),
                n: x.n,
                cols: Some(cols),
            },
        ))
    }

    /// Returns parameter gradients and, if `need_input`, the input gradient.
    pub fn backward(
        &self,
        input: &Volume,
        cache: &ConvCache,
        grad_out: &Array2<f64>,
        need_input: bool,
    ) -> (ConvGrad, Option<Array2<f64>>) {
        let cols = cache.cols.as_ref().unwrap_or(&input.data);
        let grad = ConvGrad {
            weight: standard(cols.t().dot(grad_out)),
            bias: grad_out.sum_axis(Axis(0)),
        };
        let dx = need_input.then(|| {
            let dcols = standard(grad_out.dot(&self.weight.t()));
            if cache.cols.is_none() {
                dcols
            } else {
                self.col2im(&dcols, cache.n, cache.in_dims)
            }
        });
        (grad, dx)
    }
}

/// One-dimensional linear interpolation taps, half-pixel centres.
fn linear_taps(input: usize, output: usize) -> Vec<[(usize, f64); 2]> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            if input == output {
                return [(o, 1.0), (o, 0.0)];
            }
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = src - i0 as f64;
            [(i0, 1.0 - frac), (i1, frac)]
        })
        .collect()
}

/// Trilinear resampling of a volume to new spatiotemporal dimensions. A
/// linear map, so the backward pass is its transpose.
#[derive(Debug, Clone)]
pub struct Resize {
    from: [usize; 3],
    to: [usize; 3],
    taps: [Vec<[(usize, f64); 2]>; 3],
}

impl Resize {
    pub fn new(from: [usize; 3], to: [usize; 3]) -> Self {
        Resize {
            from,
            to,
            taps: [
                linear_taps(from[0], to[0]),
                linear_taps(from[1], to[1]),
                linear_taps(from[2], to[2]),
            ],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.from == self.to
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, f64)) {
        let [_, fh, fw] = self.from;
        let [tt, th, tw] = self.to;
        for ot in 0..tt {
            for oh in 0..th {
                for ow in 0..tw {
                    let dst = (ot * th + oh) * tw + ow;
                    for &(it, wt) in &self.taps[0][ot] {
                        for &(ih, wh) in &self.taps[1][oh] {
                            for &(iw, ww) in &self.taps[2][ow] {
                                let wgt = wt * wh * ww;
                                if wgt != 0.0 {
                                    f(dst, (it * fh + ih) * fw + iw, wgt);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Volume) -> Volume {
        if self.is_identity() {
            return x.clone();
        }
        let ip = x.positions();
        let op = self.to.iter().product::<usize>();
        let mut out = Volume::zeros(x.n, self.to, x.channels());
        for n in 0..x.n {
            self.for_each_tap(|dst, src, wgt| {
                let s = x.data.row(n * ip + src).to_owned();
                out.data
                    .row_mut(n * op + dst)
                    .scaled_add(wgt, &s);
            });
        }
        out
    }

    pub fn backward(&self, n: usize, grad: &Array2<f64>) -> Array2<f64> {
        if self.is_identity() {
            return grad.clone();
        }
        let ip = self.from.iter().product::<usize>();
        let op = self.to.iter().product::<usize>();
        let mut dx = Array2::zeros((n * ip, grad.ncols()));
        for b in 0..n {
            self.for_each_tap(|dst, src, wgt| {
                let g = grad.row(b * op + dst).to_owned();
                dx.row_mut(b * ip + src).scaled_add(wgt, &g);
            });
        }
        dx
    }
}

/// Per-sample slice of a channels-last batch.
pub fn sample_rows(v: &Volume, i: usize) -> ndarray::ArrayView2<'_, f64> {
    let p = v.positions();
    v.data.slice(s![i * p..(i + 1) * p, ..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_volume(n: usize, dims: [usize; 3], c: usize, seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Volume::zeros(n, dims, c);
        v.data.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        v
    }

    /// Direct six-loop convolution used as the oracle.
    fn naive_conv(conv: &Conv3d, x: &Volume) -> Volume {
        let k = conv.spec.kernel as isize;
        let pad = conv.spec.padding() as isize;
        let od = conv.spec.output_dims(x.dims());
        let mut out = Volume::zeros(x.n, od, conv.spec.out_ch);
        for n in 0..x.n {
            for zt in 0..od[0] {
                for zh in 0..od[1] {
                    for zw in 0..od[2] {
                        for co in 0..conv.spec.out_ch {
                            let mut acc = conv.bias[co];
                            for kt in 0..k {
                                for kh in 0..k {
                                    for kw in 0..k {
                                        let it = (zt * conv.spec.stride[0]) as isize + kt - pad;
                                        let ih = (zh * conv.spec.stride[1]) as isize + kh - pad;
                                        let iw = (zw * conv.spec.stride[2]) as isize + kw - pad;
                                        if it < 0 || ih < 0 || iw < 0 || it >= x.t as isize || ih >= x.h as isize || iw >= x.w as isize {
                                            continue;
                                        }
                                        let row = n * x.positions() + ((it as usize * x.h) + ih as usize) * x.w + iw as usize;
                                        for ci in 0..conv.spec.in_ch {
                                            let widx = (((kt * k + kh) * k + kw) as usize) * conv.spec.in_ch + ci;
                                            acc += conv.weight[[widx, co]] * x.data[[row, ci]];
                                        }
                                    }
                                }
                            }
                            let orow = n * out.positions() + (zt * od[1] + zh) * od[2] + zw;
                            out.data[[orow, co]] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (stride, kernel) in [([1, 1, 1], 3), ([2, 2, 2], 3), ([1, 2, 2], 3), ([1, 1, 1], 1)] {
            let mut conv = Conv3d::init(ConvSpec { in_ch: 2, out_ch: 3, kernel, stride }, &mut rng);
            conv.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            let x = random_volume(2, [3, 5, 4], 2, 7);
            let (y, _) = conv.forward(&x).unwrap();
            let want = naive_conv(&conv, &x);
            assert_eq!(y.dims(), want.dims());
            for (a, b) in y.data.iter().zip(want.data.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <dy, conv(x)> linear in x and W: check input and weight gradients by finite differences
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv3d::init(ConvSpec { in_ch: 2, out_ch: 2, kernel: 3, stride: [2, 1, 2] }, &mut rng);
        let x = random_volume(1, [4, 3, 5], 2, 9);
        let (y, cache) = conv.forward(&x).unwrap();
        let dy = random_volume(1, y.dims(), 2, 10).data;
        let (g, dx) = conv.backward(&x, &cache, &dy, true);
        let dx = dx.unwrap();
        let f = |c: &Conv3d, x: &Volume| (c.forward(x).unwrap().0.data * &dy).sum();
        let h = 1e-6;
        for idx in [0usize, 5, 17, 33, 58] {
            let mut xp = x.clone();
            let r = idx / 2;
            xp.data[[r, idx % 2]] += h;
            let mut xm = x.clone();
            xm.data[[r, idx % 2]] -= h;
            let fd = (f(&conv, &xp) - f(&conv, &xm)) / (2.0 * h);
            assert!((fd - dx[[r, idx % 2]]).abs() < 1e-7);
        }
        for idx in [0usize, 7, 20, 53] {
            let mut cp = conv.clone();
            cp.weight.as_slice_mut().unwrap()[idx] += h;
            let mut cm = conv.clone();
            cm.weight.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&cp, &x) - f(&cm, &x)) / (2.0 * h);
            assert!((fd - g.weight.as_slice().unwrap()[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn output_dims() {
        let spec = ConvSpec { in_ch: 1, out_ch: 1, kernel: 3, stride: [2, 2, 2] };
        assert_eq!(spec.output_dims([8, 16, 16]), [4, 8, 8]);
        assert_eq!(spec.output_dims([1, 2, 2]), [1, 1, 1]);
        assert_eq!(spec.output_dims([5, 5, 5]), [3, 3, 3]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let v = random_volume(2, [2, 3, 3], 1, 4);
        let r = Resize::new([2, 3, 3], [2, 3, 3]);
        assert_eq!(r.forward(&v), v);
        let mut c = Volume::zeros(1, [2, 2, 2], 1);
        c.data.fill(0.25);
        let up = Resize::new([2, 2, 2], [4, 3, 5]).forward(&c);
        assert!(up.data.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn resize_backward_is_transpose() {
        let r = Resize::new([2, 2, 3], [4, 3, 5]);
        let x = random_volume(2, [2, 2, 3], 1, 1);
        let g = random_volume(2, [4, 3, 5], 1, 2);
        let lhs = (r.forward(&x).data * &g.data).sum();
        let rhs = (r.backward(2, &g.data) * &x.data).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn from_clips_layout() {
        // 2 channels, 1x1x2 positions
        let clip: Vec<f32> = vec![1.0, 2.0, 10.0, 20.0];
        let v = Volume::from_clips([clip.as_slice()], [2, 1, 1, 2]).unwrap();
        assert_eq!(v.data.row(0).to_vec(), vec![1.0, 10.0]);
        assert_eq!(v.data.row(1).to_vec(), vec![2.0, 20.0]);
        assert!(Volume::from_clips([&clip[..3]], [2, 1, 1, 2]).is_err());
    }
}
