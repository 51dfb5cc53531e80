use candle_core::{Tensor, D};

use super::params::ParamStore;
use crate::error::Result;

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

/// Softmax over the last dimension, written with primitive ops so it is
/// differentiable.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Non-overlapping `factor x factor` average pooling on NCHW input.
pub fn avg_pool(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, c, h, w) = x.dims4()?;
    Ok(x
        .reshape((b, c, h / factor, factor, w / factor, factor))?
        .mean(5)?
        .mean(3)?)
}

/// Nearest-neighbour upsampling by an integer factor on NCHW input.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, c, h, w) = x.dims4()?;
    Ok(x
        .reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, factor, w, factor))?
        .contiguous()?
        .reshape((b, c, h * factor, w * factor))?)
}

pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(p: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        p.scoped(name, |p| {
            let bound = 1.0 / (d_in as f32).sqrt();
            Ok(Self {
                weight: p.uniform("weight", &[d_out, d_in], bound)?,
                bias: p.uniform("bias", &[d_out], bound)?,
            })
        })
    }

    /// Zero-initialized; used for output projections that should start silent.
    pub fn zeros(p: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        p.scoped(name, |p| {
            Ok(Self {
                weight: p.constant("weight", &[d_out, d_in], 0.0)?,
                bias: p.constant("bias", &[d_out], 0.0)?,
            })
        })
    }

    /// `x`: `(..., d_in)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = match x.rank() {
            2 => x.matmul(&self.weight.t()?)?,
            _ => x.broadcast_matmul(&self.weight.t()?)?,
        };
        Ok(y.broadcast_add(&self.bias)?)
    }
}

pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        p: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        p.scoped(name, |p| {
            let bound = 1.0 / ((c_in * kernel * kernel) as f32).sqrt();
            Ok(Self {
                weight: p.uniform("weight", &[c_out, c_in, kernel, kernel], bound)?,
                bias: p.uniform("bias", &[c_out], bound)?,
                stride,
                padding,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(p: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        p.scoped(name, |p| {
            Ok(Self {
                gamma: p.constant("gamma", &[dim], 1.0)?,
                beta: p.constant("beta", &[dim], 0.0)?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gamma, &self.beta)
    }
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(p: &mut ParamStore, name: &str, count: usize, dim: usize) -> Result<Self> {
        p.scoped(name, |p| {
            Ok(Self {
                table: p.normal("table", &[count, dim], 0.02)?,
            })
        })
    }

    pub fn forward(&self, ids: &[u32]) -> Result<Tensor> {
        let idx = Tensor::from_slice(ids, ids.len(), self.table.device())?;
        Ok(self.table.index_select(&idx, 0)?)
    }
}

pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(p: &mut ParamStore, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Result<Self> {
        p.scoped(name, |p| {
            Ok(Self {
                fc1: Linear::new(p, "fc1", d_in, hidden)?,
                fc2: Linear::new(p, "fc2", hidden, d_out)?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&silu(&self.fc1.forward(x)?)?)
    }
}

/// Pre-norm transformer encoder block with multi-head self-attention.
pub struct TransformerBlock {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    mlp: Mlp,
    heads: usize,
}

impl TransformerBlock {
    pub fn new(p: &mut ParamStore, name: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        assert_eq!(dim % heads, 0, "model width must divide into heads");
        p.scoped(name, |p| {
            Ok(Self {
                ln1: LayerNorm::new(p, "ln1", dim)?,
                qkv: Linear::new(p, "qkv", dim, 3 * dim)?,
                proj: Linear::new(p, "proj", dim, dim)?,
                ln2: LayerNorm::new(p, "ln2", dim)?,
                mlp: Mlp::new(p, "mlp", dim, mlp_ratio * dim, dim)?,
                heads,
            })
        })
    }

    /// `x`: `(batch, tokens, dim)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        let hd = d / self.heads;
        let qkv = self
            .qkv
            .forward(&self.ln1.forward(x)?)?
            .reshape((b, n, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (hd as f64).sqrt()))?;
        let attn = softmax_last(&scores)?.matmul(&v)?;
        let attn = attn.transpose(1, 2)?.contiguous()?.reshape((b, n, d))?;
        let x = (x + self.proj.forward(&attn)?)?;
        let h = self.mlp.forward(&self.ln2.forward(&x)?)?;
        Ok((x + h)?)
    }
}
