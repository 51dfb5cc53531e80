use std::path::PathBuf;

use candle_core::{Tensor, D};

use crate::error::{ensure, Error, Result};
use crate::nn::{self, avg_pool, silu, Conv2d, LayerNorm, Linear, ParamStore, TransformerBlock, WeightSet};
use crate::transforms::{FloatImage, NormStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneFamily {
    /// Convolutional backbone fed patches at their native 128x128.
    Native128Conv,
    /// Token (ViT-style) backbone fed 224x224 upsampled patches; the class
    /// token embedding feeds the head.
    Token224Cls,
}

impl BackboneFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "native128_conv" => Ok(Self::Native128Conv),
            "token224_cls" => Ok(Self::Token224Cls),
            other => Err(Error::invalid(format!("unknown backbone family {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Native128Conv => "native128_conv",
            Self::Token224Cls => "token224_cls",
        }
    }

    pub fn input_side(&self) -> usize {
        match self {
            Self::Native128Conv => 128,
            Self::Token224Cls => 224,
        }
    }

    /// Width of the bundled reference backbone.
    pub fn reference_embedding_dim(&self) -> usize {
        match self {
            Self::Native128Conv => 32,
            Self::Token224Cls => 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightSource {
    /// Randomly initialized reference backbone.
    Random,
    /// Backbone weights from a checkpoint container of kind `backbone`.
    Plugin(PathBuf),
}

impl WeightSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "random" | "" => Self::Random,
            path => Self::Plugin(PathBuf::from(path)),
        }
    }

    pub fn render(&self) -> String {
        match self {
            Self::Random => "random".into(),
            Self::Plugin(p) => p.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneSpec {
    pub family: BackboneFamily,
    pub embedding_dim: usize,
    pub weight_source: WeightSource,
}

impl BackboneSpec {
    pub fn reference(family: BackboneFamily) -> Self {
        Self {
            family,
            embedding_dim: family.reference_embedding_dim(),
            weight_source: WeightSource::Random,
        }
    }

    pub fn input_side(&self) -> usize {
        self.family.input_side()
    }
}

enum Backbone {
    Conv {
        stem: Conv2d,
        down: Conv2d,
        mix: Conv2d,
    },
    Token {
        patch_embed: Linear,
        cls: Tensor,
        pos: Tensor,
        blocks: Vec<TransformerBlock>,
        norm: LayerNorm,
    },
}

const TOKEN_POOL: usize = 4;
const TOKEN_PATCH: usize = 8;

/// Backbone plus single-logit linear head.
pub struct Model {
    pub spec: BackboneSpec,
    params: ParamStore,
    backbone: Backbone,
    head: Linear,
}

/// Builds a model for `spec`. Random sources get seeded initialization;
/// plugin sources overwrite every `backbone.*` tensor from the named file.
pub fn build_model(spec: &BackboneSpec, seed: u64) -> Result<Model> {
    let d = spec.embedding_dim;
    ensure!(d > 0, "embedding_dim must be positive");
    let mut p = ParamStore::new(seed);
    let backbone = p.scoped("backbone", |p| match spec.family {
        BackboneFamily::Native128Conv => Ok(Backbone::Conv {
            // 128 -> pool 4 -> 32 -> 16 -> 8
            stem: Conv2d::new(p, "stem", 3, d / 2, 3, 2, 1)?,
            down: Conv2d::new(p, "down", d / 2, d, 3, 2, 1)?,
            mix: Conv2d::new(p, "mix", d, d, 3, 1, 1)?,
        }),
        BackboneFamily::Token224Cls => {
            let grid = spec.input_side() / TOKEN_POOL / TOKEN_PATCH;
            let heads = if d % 4 == 0 { 4 } else { 1 };
            Ok(Backbone::Token {
                patch_embed: Linear::new(p, "patch_embed", 3 * TOKEN_PATCH * TOKEN_PATCH, d)?,
                cls: p.normal("cls", &[1, 1, d], 0.02)?,
                pos: p.normal("pos", &[1, grid * grid + 1, d], 0.02)?,
                blocks: vec![TransformerBlock::new(p, "block0", d, heads, 2)?],
                norm: LayerNorm::new(p, "norm", d)?,
            })
        }
    })?;
    let head = Linear::new(&mut p, "head", d, 1)?;
    let model = Model {
        spec: spec.clone(),
        params: p,
        backbone,
        head,
    };
    if let WeightSource::Plugin(path) = &spec.weight_source {
        model.load_plugin(path)?;
    }
    Ok(model)
}

impl Model {
    fn load_plugin(&self, path: &std::path::Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::invalid(format!(
                "unresolvable plugin weights {}",
                path.display()
            )));
        }
        let c = nn::read_container(path)?;
        ensure!(c.kind == "backbone", "{} is a {:?} container, not backbone weights", path.display(), c.kind);
        if let Some(fam) = c.meta.get("family").and_then(|f| f.as_str()) {
            ensure!(
                fam == self.spec.family.as_str(),
                "plugin weights are for family {fam}, model is {}",
                self.spec.family.as_str()
            );
        }
        let weights = c.group("backbone")?;
        let mut full = self.params.snapshot()?;
        for (name, t) in weights {
            let key = format!("backbone.{name}");
            let slot = full
                .get_mut(&key)
                .ok_or_else(|| Error::invalid(format!("plugin tensor {name} has no slot in the model")))?;
            ensure!(slot.shape == t.shape, "plugin tensor {name} has shape {:?}, expected {:?}", t.shape, slot.shape);
            *slot = t.clone();
        }
        self.params.load(&full)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn weights(&self) -> Result<WeightSet> {
        self.params.snapshot()
    }

    pub fn load_weights(&self, w: &WeightSet) -> Result<()> {
        self.params.load(w)
    }

    /// `(batch, embedding_dim)` features for NCHW input.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let side = self.spec.input_side();
        ensure!(
            c == 3 && h == side && w == side,
            "input side mismatch: {} backbone takes 3x{side}x{side}, got {c}x{h}x{w}",
            self.spec.family.as_str()
        );
        match &self.backbone {
            Backbone::Conv { stem, down, mix } => {
                let x = avg_pool(x, 4)?;
                let x = silu(&stem.forward(&x)?)?;
                let x = silu(&down.forward(&x)?)?;
                let x = silu(&mix.forward(&x)?)?;
                Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
            }
            Backbone::Token {
                patch_embed,
                cls,
                pos,
                blocks,
                norm,
            } => {
                let b = x.dim(0)?;
                let x = avg_pool(x, TOKEN_POOL)?;
                let g = side / TOKEN_POOL / TOKEN_PATCH;
                let tokens = x
                    .reshape((b, 3, g, TOKEN_PATCH, g, TOKEN_PATCH))?
                    .permute((0, 2, 4, 1, 3, 5))?
                    .contiguous()?
                    .reshape((b, g * g, 3 * TOKEN_PATCH * TOKEN_PATCH))?;
                let tokens = patch_embed.forward(&tokens)?;
                let d = tokens.dim(2)?;
                let cls = cls.broadcast_as((b, 1, d))?;
                let mut h = Tensor::cat(&[&cls, &tokens], 1)?.broadcast_add(pos)?;
                for blk in blocks {
                    h = blk.forward(&h)?;
                }
                Ok(norm.forward(&h.narrow(1, 0, 1)?.squeeze(1)?)?)
            }
        }
    }

    /// One logit per batch element.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.head.forward(&self.embed(x)?)?.squeeze(1)?)
    }
}

/// Stacks HWC float images into an NCHW tensor.
pub fn to_batch(images: &[FloatImage], side: usize) -> Result<Tensor> {
    ensure!(!images.is_empty(), "empty batch");
    let plane = side * side;
    let mut data = vec![0f32; images.len() * 3 * plane];
    for (i, img) in images.iter().enumerate() {
        ensure!(
            img.side == side,
            "preprocessing mismatch: image side {} but model expects {side}",
            img.side
        );
        let base = i * 3 * plane;
        for (p, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[base + c * plane + p] = px[c];
            }
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, side, side), &nn::DEVICE)?)
}

/// Default normalization for a family.
pub fn default_norm(_family: BackboneFamily) -> NormStats {
    NormStats::IMAGENET
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn logits_shape() {
        for family in [BackboneFamily::Native128Conv, BackboneFamily::Token224Cls] {
            let m = build_model(&BackboneSpec::reference(family), 0).unwrap();
            let s = family.input_side();
            let x = Tensor::zeros((4, 3, s, s), DType::F32, &nn::DEVICE).unwrap();
            assert_eq!(m.forward(&x).unwrap().dims(), &[4]);
        }
    }

    #[test]
    fn side_mismatch() {
        let m = build_model(&BackboneSpec::reference(BackboneFamily::Token224Cls), 0).unwrap();
        let x = Tensor::zeros((1, 3, 128, 128), DType::F32, &nn::DEVICE).unwrap();
        let err = m.forward(&x).unwrap_err();
        assert!(err.to_string().contains("input side mismatch"));
    }

    #[test]
    fn plugin_weights() {
        let dir = tempfile::tempdir().unwrap();
        let spec = BackboneSpec::reference(BackboneFamily::Native128Conv);
        let donor = build_model(&spec, 11).unwrap();
        let backbone: WeightSet = donor
            .weights()
            .unwrap()
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix("backbone.").map(|k| (k.to_string(), v)))
            .collect();
        let path = dir.path().join("plugin.ckpt");
        nn::write_container(
            &path,
            &nn::Container {
                kind: "backbone".into(),
                meta: serde_json::json!({"family": "native128_conv"}),
                groups: vec![("backbone".into(), backbone)],
            },
        )
        .unwrap();
        let mut with_plugin = spec.clone();
        with_plugin.weight_source = WeightSource::Plugin(path);
        let m = build_model(&with_plugin, 0).unwrap();
        let w = m.weights().unwrap();
        let dw = donor.weights().unwrap();
        assert_eq!(w["backbone.stem.weight"], dw["backbone.stem.weight"]);
        assert_ne!(w["head.weight"], dw["head.weight"]);

        let mut missing = spec.clone();
        missing.weight_source = WeightSource::Plugin(dir.path().join("nope.ckpt"));
        let err = build_model(&missing, 0).err().expect("missing plugin must fail");
        assert!(err.to_string().contains("unresolvable"));
    }
}
