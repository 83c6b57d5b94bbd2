//! Tensor building blocks with backward passes suitable for training.

use candle_core::{CpuStorage, CustomOp1, DType, Layout, Module, Result, Shape, Tensor, D};

struct SoftmaxLastDim;

fn softmax_rows<T: num_like::Float>(src: &[T], width: usize) -> Vec<T> {
    let mut dst = vec![T::ZERO; src.len()];
    for (s, d) in src.chunks_exact(width).zip(dst.chunks_exact_mut(width)) {
        let max = s.iter().copied().fold(T::NEG_INF, T::max);
        let mut sum = T::ZERO;
        for (x, y) in s.iter().zip(d.iter_mut()) {
            *y = (*x - max).exp();
            sum = sum + *y;
        }
        for y in d.iter_mut() {
            *y = *y / sum;
        }
    }
    dst
}

mod num_like {
    use std::ops::{Add, Div, Sub};

    pub trait Float: Copy + Add<Output = Self> + Sub<Output = Self> + Div<Output = Self> {
        const ZERO: Self;
        const NEG_INF: Self;
        fn exp(self) -> Self;
        fn max(self, other: Self) -> Self;
    }

    impl Float for f32 {
        const ZERO: Self = 0.0;
        const NEG_INF: Self = f32::NEG_INFINITY;
        fn exp(self) -> Self {
            f32::exp(self)
        }
        fn max(self, other: Self) -> Self {
            f32::max(self, other)
        }
    }

    impl Float for f64 {
        const ZERO: Self = 0.0;
        const NEG_INF: Self = f64::NEG_INFINITY;
        fn exp(self) -> Self {
            f64::exp(self)
        }
        fn max(self, other: Self) -> Self {
            f64::max(self, other)
        }
    }
}

impl CustomOp1 for SoftmaxLastDim {
    fn name(&self) -> &'static str {
        "vimo-softmax-last-dim"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("softmax input must be contiguous".into()))?;
        let width = layout.dims().last().copied().unwrap_or(1).max(1);
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(softmax_rows(&v[start..end], width)),
            CpuStorage::F64(v) => CpuStorage::F64(softmax_rows(&v[start..end], width)),
            _ => candle_core::bail!("softmax: only f32 and f64 are supported"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> Result<Option<Tensor>> {
        let dot = (grad_res * res)?.sum_keepdim(D::Minus1)?;
        Ok(Some((res * grad_res.broadcast_sub(&dot)?)?))
    }
}

/// Softmax over the last dimension.
pub fn softmax_last_dim(x: &Tensor) -> Result<Tensor> {
    x.contiguous()?.apply_op1(SoftmaxLastDim)
}

/// Fully connected layer; the weight is stored as `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let (last, lead) = dims.split_last().expect("linear input has at least one dim");
        let rows: usize = lead.iter().product();
        let y = x.reshape((rows, *last))?.matmul(&self.weight)?.broadcast_add(&self.bias)?;
        let mut out_dims = lead.to_vec();
        out_dims.push(self.weight.dim(1)?);
        y.reshape(out_dims)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)
    }
}

/// Multi-head attention with separate query and key/value inputs.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn forward(&self, x: &Tensor, ctx: &Tensor) -> Result<Tensor> {
        let (b, s, h) = x.dims3()?;
        let sk = ctx.dim(1)?;
        let dh = h / self.heads;
        let split = |t: Tensor, len: usize| -> Result<Tensor> {
            t.reshape((b, len, self.heads, dh))?.transpose(1, 2)?.contiguous()
        };
        let q = split(self.q.forward(x)?, s)?;
        let k = split(self.k.forward(ctx)?, sk)?;
        let v = split(self.v.forward(ctx)?, sk)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (dh as f64).sqrt()))?;
        let attn = softmax_last_dim(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, s, h))?;
        self.o.forward(&out)
    }
}

/// Interleaved `[sin(p w_0), cos(p w_0), sin(p w_1), ...]` with geometric
/// frequencies `w_k = 10000^(-k / (dim / 2))`.
pub fn sinusoid(position: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let w = (-(k as f64) / half as f64 * 10000f64.ln()).exp();
        out[2 * k] = (position * w).sin();
        out[2 * k + 1] = (position * w).cos();
    }
    out
}

/// `(len, dim)` table of frame position encodings.
pub fn position_table(len: usize, dim: usize, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let data: Vec<f64> = (0..len).flat_map(|s| sinusoid(s as f64, dim)).collect();
    Tensor::from_vec(data, (len, dim), device)?.to_dtype(dtype)
}
