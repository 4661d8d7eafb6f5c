//! Small numeric building blocks shared by the generator and the encoder:
//! activations, initializers, optimizers and the parameter blob format.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::error::{MistError, Result};

pub const PARAM_MAGIC: &[u8; 8] = b"MISTPARM";
const PARAM_VERSION: u32 = 1;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Two-way softmax, numerically stable.
#[inline]
pub fn softmax2(z0: f64, z1: f64) -> [f64; 2] {
    let m = z0.max(z1);
    let e0 = (z0 - m).exp();
    let e1 = (z1 - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Fills `out` with `U(-bound, bound)`.
/// Row-major copy of `a` unless it already is; matmuls against a transposed
/// view come back column-major.
pub fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub fn fill_uniform<R: Rng + ?Sized>(out: &mut [f64], bound: f64, rng: &mut R) {
    for v in out {
        *v = rng.random_range(-bound..=bound);
    }
}

/// Plain Adagrad: `acc += g^2; p -= lr * g / (sqrt(acc) + eps)`.
#[derive(Debug, Clone)]
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
    acc: Vec<Vec<f64>>,
}

impl Adagrad {
    pub fn new(lr: f64) -> Self {
        Adagrad {
            lr,
            eps: 1e-10,
            acc: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len());
        if self.acc.is_empty() {
            self.acc = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        for ((p, g), acc) in params.into_iter().zip(grads).zip(&mut self.acc) {
            for ((p, &g), a) in p.iter_mut().zip(g).zip(acc.iter_mut()) {
                *a += g * g;
                *p -= self.lr * g / (a.sqrt() + self.eps);
            }
        }
    }
}

/// Adam with coupled L2 weight decay (`g += wd * p` before the moments).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, lr: f64, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let g = g[j] + self.weight_decay * p[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// A named tensor in a parameter blob.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Writes tensors as `MISTPARM`, `u32` version, `u32` count, then per tensor
/// `u32` name length, UTF-8 name, `u32` rank, `u32` dims, `f64` LE data.
pub fn write_param_blob(tensors: &[NamedTensor], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        assert_eq!(t.shape.iter().product::<usize>(), t.data.len(), "{}", t.name);
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| MistError::io(parent, e))?;
        }
    }
    fs::write(path, out).map_err(|e| MistError::io(path, e))
}

pub fn read_param_blob(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MistError::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if bytes.len() - pos < n {
            return Err(MistError::format(path, bytes.len() as u64, "truncated parameter blob"));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(8)? != PARAM_MAGIC {
        return Err(MistError::format(path, 0, "bad magic, expected MISTPARM"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != PARAM_VERSION {
        return Err(MistError::format(path, 8, format!("unsupported version {version}")));
    }
    let count = u32_at(take(4)?) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32_at(take(4)?) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| MistError::format(path, 0, "tensor name is not UTF-8"))?;
        let rank = u32_at(take(4)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32_at(take(4)?) as usize);
        }
        let n: usize = shape.iter().product();
        let data = take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    if pos != bytes.len() {
        return Err(MistError::format(path, pos as u64, "trailing bytes"));
    }
    Ok(tensors)
}

/// Pops the tensor called `name` and checks its shape.
pub(crate) fn take_tensor(
    tensors: &mut Vec<NamedTensor>,
    name: &str,
    shape: &[usize],
) -> Result<Vec<f64>> {
    let idx = tensors
        .iter()
        .position(|t| t.name == name)
        .ok_or_else(|| MistError::Shape(format!("checkpoint lacks tensor {name}")))?;
    let t = tensors.remove(idx);
    if t.shape != shape {
        return Err(MistError::Shape(format!(
            "tensor {name} has shape {:?}, expected {:?}",
            t.shape, shape
        )));
    }
    Ok(t.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax2(1000.0, 999.0);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1]);
        assert_eq!(softmax2(0.3, 0.3), [0.5, 0.5]);
    }

    #[test]
    fn adagrad_first_step_moves_by_lr() {
        let mut p = vec![1.0, -1.0];
        let g = vec![2.0, -0.5];
        let mut opt = Adagrad::new(0.01);
        opt.step(vec![&mut p], vec![&g]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.5];
        let g = vec![3.0];
        let mut opt = Adam::new(0.0);
        opt.step(1e-3, vec![&mut p], vec![&g]);
        assert!((p[0] - (0.5 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn adam_weight_decay_shrinks_idle_params() {
        let mut p = vec![1.0];
        let g = vec![0.0];
        let mut opt = Adam::new(0.1);
        for _ in 0..10 {
            opt.step(1e-2, vec![&mut p], vec![&g]);
        }
        assert!(p[0] < 1.0);
    }

    #[test]
    fn blob_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let tensors = vec![
            NamedTensor { name: "w".into(), shape: vec![2, 3], data: (0..6).map(|i| i as f64 * 0.1).collect() },
            NamedTensor { name: "b".into(), shape: vec![3], data: vec![f64::MIN_POSITIVE, -0.0, 7.5] },
        ];
        write_param_blob(&tensors, &path).unwrap();
        let back = read_param_blob(&path).unwrap();
        assert_eq!(back, tensors);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_param_blob(&path), Err(MistError::Format { .. })));
    }
}
