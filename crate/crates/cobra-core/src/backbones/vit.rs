//! Tiny patch-token attention encoder.
//!
//! Pre-LN transformer, four layers by default. Every layer's post-softmax
//! attention is head-averaged and exposed; the affinity and object-attention
//! consumers downstream treat those matrices as constants, so the backward
//! pass only carries token gradients.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::bilinear_resize;
use crate::nn::{ops, GradBuffer, Initializer, LayerNorm, LayerNormCache, Linear, ParamId, ParamStore};
use crate::types::{AttentionStack, PatchTokens};

/// Input pixels are shifted to be roughly zero-mean before embedding.
const INPUT_SHIFT: f64 = 0.5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct VitConfig {
    pub patch_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Patch-grid side the positional table is learned at (training size).
    pub base_grid: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            dim: 96,
            layers: 4,
            heads: 4,
            mlp_ratio: 2,
            base_grid: 8,
        }
    }
}

impl VitConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.layers == 0 || self.patch_size == 0 || self.base_grid == 0 {
            return Err(Error::Config("encoder layers/patch/grid must be positive".into()));
        }
        Ok(())
    }
}

struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
    dim: usize,
}

struct BlockCache {
    ln1_cache: LayerNormCache,
    h1: Array2<f64>,
    qkv_mat: Array2<f64>,
    attn: Vec<Array2<f64>>, // per-head post-softmax
    ctx: Array2<f64>,
    ln2_cache: LayerNormCache,
    h2: Array2<f64>,
    fc1_out: Array2<f64>,
    gelu_out: Array2<f64>,
}

/// softmax(q k^T / sqrt(head_dim)) — the attention weights for one head.
pub fn scaled_attention_weights(q: &Array2<f64>, k: &Array2<f64>) -> Array2<f64> {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let scores = q.dot(&k.t()) * scale;
    ops::softmax_rows(&scores)
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, cfg: &VitConfig, init: &mut Initializer) -> Self {
        let d = cfg.dim;
        let hidden = d * cfg.mlp_ratio;
        let std = 0.02;
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            qkv: Linear::new(store, &format!("{name}.qkv"), d, 3 * d, true, std, init),
            proj: Linear::new(store, &format!("{name}.proj"), d, d, true, std, init),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            fc1: Linear::new(store, &format!("{name}.fc1"), d, hidden, true, std, init),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d, true, std, init),
            heads: cfg.heads,
            dim: d,
        }
    }

    fn forward(&self, store: &ParamStore, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>, BlockCache) {
        let t = x.nrows();
        let d = self.dim;
        let hd = d / self.heads;

        let (h1, ln1_cache) = self.ln1.forward(store, x);
        let qkv_mat = self.qkv.forward(store, &h1);

        let mut ctx = Array2::<f64>::zeros((t, d));
        let mut attn = Vec::with_capacity(self.heads);
        let mut attn_mean = Array2::<f64>::zeros((t, t));
        for h in 0..self.heads {
            let q = qkv_mat.slice(s![.., h * hd..(h + 1) * hd]).to_owned();
            let k = qkv_mat.slice(s![.., d + h * hd..d + (h + 1) * hd]).to_owned();
            let v = qkv_mat.slice(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]);
            let a = scaled_attention_weights(&q, &k);
            ctx.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&a.dot(&v));
            attn_mean += &a;
            attn.push(a);
        }
        attn_mean /= self.heads as f64;

        let o = self.proj.forward(store, &ctx);
        let x1 = x + &o;

        let (h2, ln2_cache) = self.ln2.forward(store, &x1);
        let fc1_out = self.fc1.forward(store, &h2);
        let gelu_out = ops::gelu(&fc1_out);
        let m = self.fc2.forward(store, &gelu_out);
        let x_out = &x1 + &m;

        (
            x_out,
            attn_mean,
            BlockCache {
                ln1_cache,
                h1,
                qkv_mat,
                attn,
                ctx,
                ln2_cache,
                h2,
                fc1_out,
                gelu_out,
            },
        )
    }

    fn backward(
        &self,
        store: &ParamStore,
        cache: &BlockCache,
        dx_out: &Array2<f64>,
        gbuf: &mut GradBuffer,
    ) -> Array2<f64> {
        let d = self.dim;
        let hd = d / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();

        // MLP sub-block
        let dg = self.fc2.backward(store, &cache.gelu_out, dx_out, gbuf);
        let du = ops::gelu_backward(&cache.fc1_out, &dg);
        let dh2 = self.fc1.backward(store, &cache.h2, &du, gbuf);
        let mut dx1 = dx_out + &self.ln2.backward(store, &cache.ln2_cache, &dh2, gbuf);

        // attention sub-block
        let dctx = self.proj.backward(store, &cache.ctx, &dx1, gbuf);
        let mut dqkv = Array2::<f64>::zeros(cache.qkv_mat.raw_dim());
        for h in 0..self.heads {
            let q = cache.qkv_mat.slice(s![.., h * hd..(h + 1) * hd]);
            let k = cache.qkv_mat.slice(s![.., d + h * hd..d + (h + 1) * hd]);
            let v = cache.qkv_mat.slice(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]);
            let a = &cache.attn[h];
            let dctx_h = dctx.slice(s![.., h * hd..(h + 1) * hd]);

            let da = dctx_h.dot(&v.t());
            let dv = a.t().dot(&dctx_h);
            let ds = ops::softmax_rows_backward(a, &da);
            let dq = ds.dot(&k) * scale;
            let dk = ds.t().dot(&q) * scale;

            dqkv.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&dq);
            dqkv.slice_mut(s![.., d + h * hd..d + (h + 1) * hd]).assign(&dk);
            dqkv.slice_mut(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]).assign(&dv);
        }
        let dh1 = self.qkv.backward(store, &cache.h1, &dqkv, gbuf);
        dx1 += &self.ln1.backward(store, &cache.ln1_cache, &dh1, gbuf);
        dx1
    }
}

pub struct TinyVit {
    patch_embed: Linear,
    cls_token: ParamId,
    pos_embed: ParamId,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    cfg: VitConfig,
}

pub struct VitCache {
    patches: Array2<f64>,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
    grid: usize,
}

impl TinyVit {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: VitConfig, init: &mut Initializer) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let patch_in = cfg.patch_size * cfg.patch_size * 3;
        let tokens = 1 + cfg.base_grid * cfg.base_grid;
        let patch_embed = Linear::new(store, &format!("{prefix}.patch_embed"), patch_in, d, true, 0.02, init);
        let cls_token = store.register(format!("{prefix}.cls_token"), init.normal_tensor(&[d], 0.02));
        let pos_embed = store.register(format!("{prefix}.pos_embed"), init.normal_tensor(&[tokens, d], 0.02));
        let blocks = (0..cfg.layers)
            .map(|i| Block::new(store, &format!("{prefix}.block{i}"), &cfg, init))
            .collect();
        let ln_final = LayerNorm::new(store, &format!("{prefix}.ln_final"), d);
        Ok(Self { patch_embed, cls_token, pos_embed, blocks, ln_final, cfg })
    }

    pub fn config(&self) -> &VitConfig {
        &self.cfg
    }

    fn check_input(&self, image: &Array3<f64>) -> Result<usize> {
        let (h, w, c) = image.dim();
        if c != 3 {
            return Err(Error::shape("encoder input channels", 3, c));
        }
        if h != w {
            return Err(Error::shape("encoder input", "square image", format!("{h}x{w}")));
        }
        if h == 0 || h % self.cfg.patch_size != 0 {
            return Err(Error::shape(
                "encoder input size",
                format!("multiple of patch size {}", self.cfg.patch_size),
                h,
            ));
        }
        Ok(h / self.cfg.patch_size)
    }

    /// Rows of `(patch_size^2 * 3)` pixels in (dy, dx, channel) order.
    fn extract_patches(&self, image: &Array3<f64>, n: usize) -> Array2<f64> {
        let p = self.cfg.patch_size;
        let mut out = Array2::<f64>::zeros((n * n, p * p * 3));
        for py in 0..n {
            for px in 0..n {
                let mut row = out.row_mut(py * n + px);
                let mut k = 0;
                for dy in 0..p {
                    for dx in 0..p {
                        for c in 0..3 {
                            row[k] = image[[py * p + dy, px * p + dx, c]] - INPUT_SHIFT;
                            k += 1;
                        }
                    }
                }
            }
        }
        out
    }

    /// Positional table for an `n x n` grid, bilinearly resampled from the
    /// base grid when sizes differ. Row 0 (class token) is never resampled.
    fn positional_table(&self, store: &ParamStore, n: usize) -> Array2<f64> {
        let d = self.cfg.dim;
        let g = self.cfg.base_grid;
        let pos = store
            .value(self.pos_embed)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        if n == g {
            return pos.to_owned();
        }
        let grid = pos
            .slice(s![1.., ..])
            .to_owned()
            .into_shape_with_order((g, g, d))
            .unwrap();
        let resized = bilinear_resize(&grid, n, n);
        let mut out = Array2::<f64>::zeros((1 + n * n, d));
        out.row_mut(0).assign(&pos.row(0));
        out.slice_mut(s![1.., ..])
            .assign(&resized.into_shape_with_order((n * n, d)).unwrap());
        out
    }

    pub fn forward(&self, store: &ParamStore, image: &Array3<f64>) -> Result<(PatchTokens, AttentionStack)> {
        let (tokens, attn, _) = self.forward_inner(store, image)?;
        Ok((tokens, attn))
    }

    /// Training entry point; restricted to the base grid so positional
    /// gradients stay exact.
    pub fn forward_train(
        &self,
        store: &ParamStore,
        image: &Array3<f64>,
    ) -> Result<(PatchTokens, AttentionStack, VitCache)> {
        let n = self.check_input(image)?;
        if n != self.cfg.base_grid {
            return Err(Error::Config(format!(
                "training requires the base patch grid {} (got {n})",
                self.cfg.base_grid
            )));
        }
        self.forward_inner(store, image)
    }

    fn forward_inner(
        &self,
        store: &ParamStore,
        image: &Array3<f64>,
    ) -> Result<(PatchTokens, AttentionStack, VitCache)> {
        let n = self.check_input(image)?;
        let d = self.cfg.dim;
        let patches = self.extract_patches(image, n);
        let embedded = self.patch_embed.forward(store, &patches);

        let mut x = Array2::<f64>::zeros((1 + n * n, d));
        x.row_mut(0).assign(
            &store
                .value(self.cls_token)
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap(),
        );
        x.slice_mut(s![1.., ..]).assign(&embedded);
        x += &self.positional_table(store, n);

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut layers = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (x_next, attn_mean, cache) = block.forward(store, &x);
            x = x_next;
            layers.push(attn_mean);
            block_caches.push(cache);
        }
        let (tokens, final_ln) = self.ln_final.forward(store, &x);

        Ok((
            PatchTokens { values: tokens },
            AttentionStack { layers },
            VitCache { patches, blocks: block_caches, final_ln, grid: n },
        ))
    }

    /// Backward from dL/d(tokens); attention matrices carry no gradient.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &VitCache,
        dtokens: &Array2<f64>,
        gbuf: &mut GradBuffer,
    ) {
        debug_assert_eq!(cache.grid, self.cfg.base_grid);
        let mut dx = self.ln_final.backward(store, &cache.final_ln, dtokens, gbuf);
        for (block, bc) in self.blocks.iter().zip(cache.blocks.iter()).rev() {
            dx = block.backward(store, bc, &dx, gbuf);
        }
        gbuf.add(self.pos_embed, &dx.clone().into_dyn());
        gbuf.add(self.cls_token, &dx.row(0).to_owned().into_dyn());
        let dembedded = dx.slice(s![1.., ..]).to_owned();
        self.patch_embed.backward(store, &cache.patches, &dembedded, gbuf);
    }
}
