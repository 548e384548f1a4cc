use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, LnCache};
use super::store::{Gradients, ParamId, ParamStore};
use super::{EncoderConfig, ImageEncoder, ParameterBlock};
use crate::error::{Error, Result};
use crate::tensor::{EmbeddingVector, ImageTensor};

#[derive(Debug, Clone, PartialEq)]
struct BlockParams {
    norm1_w: ParamId,
    norm1_b: ParamId,
    qkv_w: ParamId,
    qkv_b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    norm2_w: ParamId,
    norm2_b: ParamId,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
}

impl BlockParams {
    fn ids(&self) -> Vec<ParamId> {
        vec![
            self.norm1_w,
            self.norm1_b,
            self.qkv_w,
            self.qkv_b,
            self.proj_w,
            self.proj_b,
            self.norm2_w,
            self.norm2_b,
            self.fc1_w,
            self.fc1_b,
            self.fc2_w,
            self.fc2_b,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    patch_w: ParamId,
    patch_b: ParamId,
    pos: ParamId,
    blocks: Vec<BlockParams>,
    norm_w: ParamId,
    norm_b: ParamId,
    proj_w: ParamId,
}

/// Small vision transformer with the same block structure as a CLIP image
/// tower: patch embedding → pre-norm blocks → mean pool → norm → projection.
#[derive(Debug, Clone, PartialEq)]
pub struct VitEncoder {
    config: EncoderConfig,
    store: ParamStore,
    layout: Layout,
}

struct BlockTrace {
    ln1: LnCache,
    h1: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: LnCache,
    h2: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Activations recorded by [`VitEncoder::forward`], consumed by
/// [`VitEncoder::backward`].
pub struct ForwardTrace {
    patches: Array2<f64>,
    blocks: Vec<BlockTrace>,
    tokens: usize,
    ln_post: LnCache,
    pooled_norm: Array2<f64>,
}

fn block_names(i: usize) -> [String; 12] {
    let p = format!("blocks.{i}");
    [
        format!("{p}.norm1.weight"),
        format!("{p}.norm1.bias"),
        format!("{p}.attn.qkv.weight"),
        format!("{p}.attn.qkv.bias"),
        format!("{p}.attn.proj.weight"),
        format!("{p}.attn.proj.bias"),
        format!("{p}.norm2.weight"),
        format!("{p}.norm2.bias"),
        format!("{p}.mlp.fc1.weight"),
        format!("{p}.mlp.fc1.bias"),
        format!("{p}.mlp.fc2.weight"),
        format!("{p}.mlp.fc2.bias"),
    ]
}

impl VitEncoder {
    /// Builds an encoder with seeded random initialization.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embed_dim;
        let hidden = config.mlp_dim();
        let mut store = ParamStore::default();
        let normal = |shape: Vec<usize>, std: f64, rng: &mut ChaCha8Rng| -> (Vec<usize>, Vec<f64>) {
            let n: usize = shape.iter().product();
            let dist = Normal::new(0.0, std).expect("positive std");
            (shape, (0..n).map(|_| dist.sample(rng)).collect())
        };
        let add = |store: &mut ParamStore, name: &str, (shape, data): (Vec<usize>, Vec<f64>)| store.push(name, shape, data);
        let fill = |shape: Vec<usize>, v: f64| {
            let n: usize = shape.iter().product();
            (shape, vec![v; n])
        };
        // Residual branch outputs are scaled down with depth.
        let resid_std = 1.0 / ((2 * config.num_blocks) as f64).sqrt();

        let patch_w = add(&mut store, "patch_embed.weight", normal(vec![config.patch_dim(), d], 1.0 / (config.patch_dim() as f64).sqrt(), &mut rng));
        let patch_b = add(&mut store, "patch_embed.bias", fill(vec![d], 0.0));
        let pos = add(&mut store, "pos_embed", normal(vec![config.num_tokens(), d], 0.02, &mut rng));
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for i in 0..config.num_blocks {
            let n = block_names(i);
            let inv_d = 1.0 / (d as f64).sqrt();
            let inv_h = 1.0 / (hidden as f64).sqrt();
            blocks.push(BlockParams {
                norm1_w: add(&mut store, &n[0], fill(vec![d], 1.0)),
                norm1_b: add(&mut store, &n[1], fill(vec![d], 0.0)),
                qkv_w: add(&mut store, &n[2], normal(vec![d, 3 * d], inv_d, &mut rng)),
                qkv_b: add(&mut store, &n[3], fill(vec![3 * d], 0.0)),
                proj_w: add(&mut store, &n[4], normal(vec![d, d], inv_d * resid_std, &mut rng)),
                proj_b: add(&mut store, &n[5], fill(vec![d], 0.0)),
                norm2_w: add(&mut store, &n[6], fill(vec![d], 1.0)),
                norm2_b: add(&mut store, &n[7], fill(vec![d], 0.0)),
                fc1_w: add(&mut store, &n[8], normal(vec![d, hidden], inv_d, &mut rng)),
                fc1_b: add(&mut store, &n[9], fill(vec![hidden], 0.0)),
                fc2_w: add(&mut store, &n[10], normal(vec![hidden, d], inv_h * resid_std, &mut rng)),
                fc2_b: add(&mut store, &n[11], fill(vec![d], 0.0)),
            });
        }
        let norm_w = add(&mut store, "norm.weight", fill(vec![d], 1.0));
        let norm_b = add(&mut store, "norm.bias", fill(vec![d], 0.0));
        let proj_w = add(&mut store, "proj", normal(vec![d, d], 1.0 / (d as f64).sqrt(), &mut rng));
        store.get_mut(proj_w).trainable = config.finetune_projection;
        store.snap_to_f32();

        let layout = Layout { patch_w, patch_b, pos, blocks, norm_w, norm_b, proj_w };
        Ok(Self { config, store, layout })
    }

    /// Reassembles an encoder from named tensors, e.g. a loaded checkpoint.
    /// Every expected tensor must be present with the expected shape.
    pub fn from_tensors(config: EncoderConfig, tensors: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Self> {
        let template = Self::new(config.clone())?;
        let mut store = template.store.clone();
        let mut seen = vec![false; store.len()];
        for (name, shape, data) in tensors {
            let id = store
                .find(&name)
                .ok_or_else(|| Error::Data(format!("unexpected encoder tensor `{name}`")))?;
            let p = store.get_mut(id);
            if p.shape != shape || data.len() != p.len() {
                return Err(Error::Shape(format!(
                    "tensor `{name}` has shape {shape:?}, expected {:?}",
                    p.shape
                )));
            }
            p.data = data;
            seen[id.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!(
                "missing encoder tensor `{}`",
                store.get(ParamId(missing)).name
            )));
        }
        Ok(Self { config, store, layout: template.layout })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_blocks(&self) -> usize {
        self.config.num_blocks
    }

    /// Transformer blocks ordered bottom (0) to top.
    pub fn parameter_blocks(&self) -> Vec<ParameterBlock> {
        self.layout
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| ParameterBlock { block_index: i, params: b.ids() })
            .collect()
    }

    /// Trainable layers below the first block.
    pub fn pre_block_params(&self) -> Vec<ParamId> {
        self.trainable_only([self.layout.patch_w, self.layout.patch_b, self.layout.pos])
    }

    /// Trainable layers above the last block.
    pub fn post_block_params(&self) -> Vec<ParamId> {
        self.trainable_only([self.layout.norm_w, self.layout.norm_b, self.layout.proj_w])
    }

    pub fn trainable_params(&self) -> Vec<ParamId> {
        self.store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    fn trainable_only<const N: usize>(&self, ids: [ParamId; N]) -> Vec<ParamId> {
        ids.into_iter().filter(|id| self.store.get(*id).trainable).collect()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients::zeros_like(&self.store)
    }

    pub(crate) fn snap_to_f32(&mut self) {
        self.store.snap_to_f32();
    }

    fn patchify(&self, image: &ImageTensor) -> Result<Array2<f64>> {
        let c = &self.config;
        if image.height() != c.image_height || image.width() != c.image_width || image.channels() != c.channels {
            return Err(Error::Shape(format!(
                "encoder expects {}x{}x{} images, got {}x{}x{}",
                c.image_height,
                c.image_width,
                c.channels,
                image.height(),
                image.width(),
                image.channels()
            )));
        }
        let p = c.patch_size;
        let grid_w = c.image_width / p;
        let mut out = Array2::zeros((c.num_tokens(), c.patch_dim()));
        for (t, mut row) in out.outer_iter_mut().enumerate() {
            let (py, px) = (t / grid_w, t % grid_w);
            let mut k = 0;
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..c.channels {
                        let v = image.get(py * p + dy, px * p + dx, ch);
                        row[k] = ((v - c.mean[ch]) / c.std[ch]) as f64;
                        k += 1;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Forward pass recording the activations needed for [`Self::backward`].
    pub fn forward(&self, image: &ImageTensor) -> Result<(EmbeddingVector, ForwardTrace)> {
        let s = &self.store;
        let l = &self.layout;
        let patches = self.patchify(image)?;
        let mut z = layers::linear(&patches, s.mat(l.patch_w), Some(s.vec(l.patch_b)));
        z += &s.mat(l.pos);

        let mut traces = Vec::with_capacity(l.blocks.len());
        for b in &l.blocks {
            let (h1, ln1) = layers::layer_norm(&z, s.vec(b.norm1_w), s.vec(b.norm1_b));
            let qkv = layers::linear(&h1, s.mat(b.qkv_w), Some(s.vec(b.qkv_b)));
            let (attn, probs) = layers::attention(&qkv, self.config.heads);
            z += &layers::linear(&attn, s.mat(b.proj_w), Some(s.vec(b.proj_b)));
            let (h2, ln2) = layers::layer_norm(&z, s.vec(b.norm2_w), s.vec(b.norm2_b));
            let u = layers::linear(&h2, s.mat(b.fc1_w), Some(s.vec(b.fc1_b)));
            let g = layers::gelu(&u);
            z += &layers::linear(&g, s.mat(b.fc2_w), Some(s.vec(b.fc2_b)));
            traces.push(BlockTrace { ln1, h1, qkv, probs, attn, ln2, h2, u, g });
        }

        let tokens = z.nrows();
        let pooled = z.mean_axis(Axis(0)).expect("at least one token").insert_axis(Axis(0));
        let (pooled_norm, ln_post) = layers::layer_norm(&pooled, s.vec(l.norm_w), s.vec(l.norm_b));
        let out = layers::linear(&pooled_norm, s.mat(l.proj_w), None);
        let embedding = EmbeddingVector::new(out.into_raw_vec_and_offset().0)?;
        Ok((embedding, ForwardTrace { patches, blocks: traces, tokens, ln_post, pooled_norm }))
    }

    /// Accumulates `d loss / d parameter` into `grads`, given
    /// `d loss / d embedding`. Frozen tensors receive no gradient.
    pub fn backward(&self, trace: &ForwardTrace, d_embedding: &[f64], grads: &mut Gradients) -> Result<()> {
        let s = &self.store;
        let l = &self.layout;
        let d = self.config.embed_dim;
        if d_embedding.len() != d {
            return Err(Error::Shape(format!(
                "embedding gradient has length {}, expected {d}",
                d_embedding.len()
            )));
        }
        let dy = Array2::from_shape_vec((1, d), d_embedding.to_vec()).expect("row vector");
        let proj_grad = s.get(l.proj_w).trainable.then(|| grads.mat_mut(l.proj_w));
        let d_pooled_norm = layers::linear_backward(&trace.pooled_norm, s.mat(l.proj_w), &dy, proj_grad, None);
        let (dg, db) = grads.pair_vec_mut(l.norm_w, l.norm_b);
        let d_pooled = layers::layer_norm_backward(&d_pooled_norm, &trace.ln_post, s.vec(l.norm_w), dg, db);

        let mut dz = Array2::zeros((trace.tokens, d));
        dz += &(d_pooled.row(0).to_owned() / trace.tokens as f64);

        for (b, t) in l.blocks.iter().zip(&trace.blocks).rev() {
            let (dw, db) = grads.weight_bias_mut(b.fc2_w, b.fc2_b);
            let dg_act = layers::linear_backward(&t.g, s.mat(b.fc2_w), &dz, Some(dw), Some(db));
            let du = layers::gelu_backward(&t.u, &dg_act);
            let (dw, db) = grads.weight_bias_mut(b.fc1_w, b.fc1_b);
            let dh2 = layers::linear_backward(&t.h2, s.mat(b.fc1_w), &du, Some(dw), Some(db));
            let (dgam, dbet) = grads.pair_vec_mut(b.norm2_w, b.norm2_b);
            dz += &layers::layer_norm_backward(&dh2, &t.ln2, s.vec(b.norm2_w), dgam, dbet);

            let (dw, db) = grads.weight_bias_mut(b.proj_w, b.proj_b);
            let dattn = layers::linear_backward(&t.attn, s.mat(b.proj_w), &dz, Some(dw), Some(db));
            let dqkv = layers::attention_backward(&t.qkv, &t.probs, &dattn);
            let (dw, db) = grads.weight_bias_mut(b.qkv_w, b.qkv_b);
            let dh1 = layers::linear_backward(&t.h1, s.mat(b.qkv_w), &dqkv, Some(dw), Some(db));
            let (dgam, dbet) = grads.pair_vec_mut(b.norm1_w, b.norm1_b);
            dz += &layers::layer_norm_backward(&dh1, &t.ln1, s.vec(b.norm1_w), dgam, dbet);
        }

        grads.vec_mut(l.pos).zip_mut_with(&Array1::from_iter(dz.iter().copied()), |g, v| *g += v);
        let (dw, db) = grads.weight_bias_mut(l.patch_w, l.patch_b);
        layers::linear_backward(&trace.patches, s.mat(l.patch_w), &dz, Some(dw), Some(db));
        Ok(())
    }
}

impl ImageEncoder for VitEncoder {
    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (self.config.image_height, self.config.image_width, self.config.channels)
    }

    fn encode(&self, image: &ImageTensor) -> Result<EmbeddingVector> {
        self.forward(image).map(|(e, _)| e)
    }
}
