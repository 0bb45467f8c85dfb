use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::patches::{center_pixels, extract_patches};
use crate::error::{Error, Result};
use crate::nn::{
    linear_embed, mlp_block, msa_block, softmax_head, truncated_normal, EncoderLayer, HeadParams,
    LayerNormParams, ParamId, ParamStore, Tape, Tensor, Var,
};
use crate::rng::sub_seed;
use crate::signal::{ImageData, IMAGE_CHANNELS, IMAGE_SIZE};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViTConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub mlp_hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub classes: usize,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            height: IMAGE_SIZE,
            width: IMAGE_SIZE,
            channels: IMAGE_CHANNELS,
            patch_size: 16,
            dim: 64,
            mlp_hidden: 128,
            heads: 4,
            layers: 3,
            classes: 3,
        }
    }
}

impl ViTConfig {
    pub fn with_patch_size(patch_size: usize) -> Self {
        Self {
            patch_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::crypt::GridGeometry::new(self.height, self.width, self.channels, self.patch_size)?;
        let mut problems = Vec::new();
        for (name, v) in [
            ("channels", self.channels),
            ("dim", self.dim),
            ("mlp_hidden", self.mlp_hidden),
            ("heads", self.heads),
            ("layers", self.layers),
            ("classes", self.classes),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be >= 1"));
            }
        }
        if self.heads > 0 && self.dim % self.heads != 0 {
            problems.push(format!("dim {} must be divisible by heads {}", self.dim, self.heads));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn num_patches(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Trainable scalars by formula, independent of any parameter store.
    pub fn closed_form_parameter_count(&self) -> usize {
        let d = self.dim;
        let embed = self.patch_len() * d + d;
        let positions = (self.num_patches() + 1) * d;
        let class_token = d;
        let layer = 2 * d * 2 + 4 * (d * d + d) + (d * self.mlp_hidden + self.mlp_hidden)
            + (self.mlp_hidden * d + d);
        let head = 2 * d + (d * self.classes + self.classes);
        embed + positions + class_token + self.layers * layer + head
    }

    pub(crate) fn to_fields(self) -> Vec<f64> {
        [
            self.height,
            self.width,
            self.channels,
            self.patch_size,
            self.dim,
            self.mlp_hidden,
            self.heads,
            self.layers,
            self.classes,
        ]
        .iter()
        .map(|&v| v as f64)
        .collect()
    }

    pub(crate) fn from_fields(f: &[f64]) -> Result<Self> {
        let v = super::integer_fields(f, 9, "vit")?;
        let cfg = Self {
            height: v[0],
            width: v[1],
            channels: v[2],
            patch_size: v[3],
            dim: v[4],
            mlp_hidden: v[5],
            heads: v[6],
            layers: v[7],
            classes: v[8],
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy)]
struct LnIds {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    ln1: LnIds,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2: LnIds,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct VitIds {
    embed_w: ParamId,
    embed_b: ParamId,
    class_token: ParamId,
    positions: ParamId,
    layers: Vec<LayerIds>,
    head_ln: LnIds,
    head_w: ParamId,
    head_b: ParamId,
}

/// Compact vision transformer over flattened image patches.
#[derive(Debug, Clone)]
pub struct Vit {
    cfg: ViTConfig,
    params: ParamStore,
    ids: VitIds,
}

fn ln(store: &mut ParamStore, prefix: &str, d: usize) -> LnIds {
    LnIds {
        gamma: store.add(format!("{prefix}.gamma"), Tensor::full(&[d], 1.0)),
        beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[d])),
    }
}

impl Vit {
    pub fn new(cfg: ViTConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "init", 0));
        let (d, hid) = (cfg.dim, cfg.mlp_hidden);
        let mut s = ParamStore::new();
        let mut dense = |s: &mut ParamStore, name: String, rows: usize, cols: usize| {
            s.add(name, truncated_normal(&[rows, cols], INIT_STD, &mut rng))
        };
        let embed_w = dense(&mut s, "embed.w".into(), cfg.patch_len(), d);
        let embed_b = s.add("embed.b", Tensor::zeros(&[d]));
        let class_token = s.add("class_token", Tensor::zeros(&[1, d]));
        let positions = s.add("positions", Tensor::zeros(&[cfg.num_patches() + 1, d]));
        let mut layers = Vec::with_capacity(cfg.layers);
        for j in 0..cfg.layers {
            let p = format!("layer{j}");
            let ln1 = ln(&mut s, &format!("{p}.ln1"), d);
            let wq = dense(&mut s, format!("{p}.wq"), d, d);
            let bq = s.add(format!("{p}.bq"), Tensor::zeros(&[d]));
            let wk = dense(&mut s, format!("{p}.wk"), d, d);
            let bk = s.add(format!("{p}.bk"), Tensor::zeros(&[d]));
            let wv = dense(&mut s, format!("{p}.wv"), d, d);
            let bv = s.add(format!("{p}.bv"), Tensor::zeros(&[d]));
            let wo = dense(&mut s, format!("{p}.wo"), d, d);
            let bo = s.add(format!("{p}.bo"), Tensor::zeros(&[d]));
            let ln2 = ln(&mut s, &format!("{p}.ln2"), d);
            let w1 = dense(&mut s, format!("{p}.w1"), d, hid);
            let b1 = s.add(format!("{p}.b1"), Tensor::zeros(&[hid]));
            let w2 = dense(&mut s, format!("{p}.w2"), hid, d);
            let b2 = s.add(format!("{p}.b2"), Tensor::zeros(&[d]));
            layers.push(LayerIds {
                ln1,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln2,
                w1,
                b1,
                w2,
                b2,
            });
        }
        let head_ln = ln(&mut s, "head.ln", d);
        let head_w = dense(&mut s, "head.w".into(), d, cfg.classes);
        let head_b = s.add("head.b", Tensor::zeros(&[cfg.classes]));
        Ok(Self {
            cfg,
            params: s,
            ids: VitIds {
                embed_w,
                embed_b,
                class_token,
                positions,
                layers,
                head_ln,
                head_w,
                head_b,
            },
        })
    }

    pub fn config(&self) -> &ViTConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Full token sequence `[n + 1, d]` after the encoder; row 0 is the
    /// class token.
    pub fn encode(&self, tape: &Tape, vars: &[Var], patches: Var) -> Result<Var> {
        let ids = &self.ids;
        let v = |id: ParamId| vars[id.0];
        let mut x = linear_embed(
            tape,
            patches,
            v(ids.embed_w),
            v(ids.embed_b),
            v(ids.class_token),
            v(ids.positions),
        )?;
        for l in &ids.layers {
            let layer = EncoderLayer {
                ln1: LayerNormParams {
                    gamma: v(l.ln1.gamma),
                    beta: v(l.ln1.beta),
                },
                wq: v(l.wq),
                bq: v(l.bq),
                wk: v(l.wk),
                bk: v(l.bk),
                wv: v(l.wv),
                bv: v(l.bv),
                wo: v(l.wo),
                bo: v(l.bo),
                ln2: LayerNormParams {
                    gamma: v(l.ln2.gamma),
                    beta: v(l.ln2.beta),
                },
                w1: v(l.w1),
                b1: v(l.b1),
                w2: v(l.w2),
                b2: v(l.b2),
                heads: self.cfg.heads,
            };
            x = msa_block(tape, x, &layer)?;
            x = mlp_block(tape, x, &layer)?;
        }
        Ok(x)
    }

    /// Class probabilities `[1, classes]` for a `[n, p²C]` patch matrix.
    pub fn forward_patches(&self, tape: &Tape, vars: &[Var], patches: Var) -> Result<Var> {
        let seq = self.encode(tape, vars, patches)?;
        let cls = tape.row(seq, 0)?;
        let v = |id: ParamId| vars[id.0];
        let head = HeadParams {
            ln: LayerNormParams {
                gamma: v(self.ids.head_ln.gamma),
                beta: v(self.ids.head_ln.beta),
            },
            w: v(self.ids.head_w),
            b: v(self.ids.head_b),
        };
        softmax_head(tape, cls, &head)
    }

    /// Image to class probabilities. Pixels are moved to `[-1, 1]` first:
    /// every patch row then carries its brightness in the sign and size of
    /// its mean, which the scale-free layer norms would otherwise discard
    /// while the embedding bias is still zero.
    pub fn forward(&self, tape: &Tape, vars: &[Var], image: &dyn ImageData) -> Result<Var> {
        let c = &self.cfg;
        super::check_dims(image, (c.height, c.width, c.channels))?;
        let mut patches = extract_patches(image, c.patch_size)?;
        center_pixels(&mut patches);
        let patches = tape.constant(patches);
        self.forward_patches(tape, vars, patches)
    }
}
