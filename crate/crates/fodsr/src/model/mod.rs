//! 3D shifted-window transformer encoder-decoder mapping a 45-channel FOD
//! patch to a refined 45-channel patch.
//!
//! Encoder stages run window attention blocks (alternating cyclic shift)
//! with patch-merging downsampling between stages; the decoder upsamples and
//! fuses encoder skips; a 1×1×1 head maps back to the output channels. The
//! whole training path is hand-differentiated and generic over f32/f64 so
//! every gradient can be checked against finite differences.

pub mod attention;
pub mod checkpoint;
pub mod layers;
pub mod tensor;
pub mod windows;

pub use checkpoint::{identity_checkpoint, Checkpoint};
pub use tensor::{Real, Tensor};

use crate::error::{FodError, Result};
use attention::{rel_position_index, AttnCache, RelIndex};
use layers::{
    gelu_backward, gelu_forward, layernorm_backward, layernorm_forward, linear_backward,
    linear_forward,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use windows::{partition, reverse, WindowGrid};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub patch_size: [usize; 3],
    pub embed_dim: usize,
    pub window_size: [usize; 3],
    /// Attention blocks per encoder stage (1–4 stages).
    pub depths: Vec<usize>,
    pub num_heads: Vec<usize>,
    /// Alternate-block half-window cyclic shift.
    pub shift: bool,
    /// Predict a residual added to the input instead of the output directly.
    pub residual: bool,
    pub in_channels: usize,
    pub out_channels: usize,
    pub mlp_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: [16, 16, 16],
            embed_dim: 24,
            window_size: [4, 4, 4],
            depths: vec![2, 2],
            num_heads: vec![3, 6],
            shift: true,
            residual: false,
            in_channels: 45,
            out_channels: 45,
            mlp_ratio: 4,
        }
    }
}

impl ModelConfig {
    pub fn n_stages(&self) -> usize {
        self.depths.len()
    }

    pub fn stage_channels(&self, s: usize) -> usize {
        self.embed_dim << s
    }

    pub fn stage_dims(&self, s: usize) -> [usize; 3] {
        [
            self.patch_size[0] >> s,
            self.patch_size[1] >> s,
            self.patch_size[2] >> s,
        ]
    }

    pub fn stage_tokens(&self, s: usize) -> usize {
        let d = self.stage_dims(s);
        d[0] * d[1] * d[2]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.depths.len();
        if n == 0 || n > 4 {
            return Err(FodError::Config(format!("need 1–4 stages, got {n}")));
        }
        if self.num_heads.len() != n {
            return Err(FodError::Config(
                "depths and num_heads must have equal length".into(),
            ));
        }
        if self.depths.iter().any(|&d| d == 0) {
            return Err(FodError::Config("stage depths must be ≥ 1".into()));
        }
        if self.embed_dim == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(FodError::Config("channel counts must be ≥ 1".into()));
        }
        if self.mlp_ratio == 0 {
            return Err(FodError::Config("mlp_ratio must be ≥ 1".into()));
        }
        for (s, &h) in self.num_heads.iter().enumerate() {
            if h == 0 || self.embed_dim % h != 0 {
                return Err(FodError::Config(format!(
                    "embed_dim {} not divisible by num_heads {h} (stage {s})",
                    self.embed_dim
                )));
            }
        }
        for s in 0..n {
            let dims = self.stage_dims(s);
            for a in 0..3 {
                if dims[a] == 0 {
                    return Err(FodError::Config(format!(
                        "patch axis {a} too small for {n} stages"
                    )));
                }
                if self.patch_size[a] % (1 << s) != 0 {
                    return Err(FodError::Config(format!(
                        "patch axis {a} ({}) not divisible by the stage-{s} downsampling",
                        self.patch_size[a]
                    )));
                }
                if dims[a] % self.window_size[a] != 0 {
                    return Err(FodError::Config(format!(
                        "stage {s} feature dims {dims:?} not divisible by window {:?}",
                        self.window_size
                    )));
                }
            }
        }
        if self.residual && self.in_channels != self.out_channels {
            return Err(FodError::Config(
                "residual mode requires in_channels == out_channels".into(),
            ));
        }
        Ok(())
    }

    fn block_shift(&self, block_index: usize) -> [usize; 3] {
        if self.shift && block_index % 2 == 1 {
            [
                self.window_size[0] / 2,
                self.window_size[1] / 2,
                self.window_size[2] / 2,
            ]
        } else {
            [0, 0, 0]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Linear<T> {
    fn zeros(di: usize, dout: usize) -> Self {
        Self {
            w: Tensor::zeros(&[di, dout]),
            b: Tensor::zeros(&[dout]),
        }
    }

    fn convert<U: Real>(&self) -> Linear<U> {
        Linear {
            w: self.w.convert(),
            b: self.b.convert(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormP<T> {
    pub g: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> LayerNormP<T> {
    fn zeros(c: usize) -> Self {
        Self {
            g: Tensor::zeros(&[c]),
            b: Tensor::zeros(&[c]),
        }
    }

    fn convert<U: Real>(&self) -> LayerNormP<U> {
        LayerNormP {
            g: self.g.convert(),
            b: self.b.convert(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockP<T> {
    pub norm1: LayerNormP<T>,
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    /// Relative position bias `[heads, table_len]`.
    pub rel_bias: Tensor<T>,
    pub norm2: LayerNormP<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeP<T> {
    pub norm: LayerNormP<T>,
    pub reduce: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeP<T> {
    pub expand: Linear<T>,
    pub fuse: Linear<T>,
    pub norm: LayerNormP<T>,
}

/// All learnable weights, shape-consistent with a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embed: Linear<T>,
    pub embed_norm: LayerNormP<T>,
    pub stages: Vec<Vec<BlockP<T>>>,
    pub merges: Vec<MergeP<T>>,
    /// Decoder steps in processing order (deepest level first).
    pub decodes: Vec<DecodeP<T>>,
    pub head: Linear<T>,
}

impl<T: Real> ModelParams<T> {
    /// Zero-valued parameters with shapes derived from the config.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let c0 = cfg.embed_dim;
        let rel = rel_position_index(cfg.window_size);
        let mut stages = Vec::new();
        for s in 0..cfg.n_stages() {
            let c = cfg.stage_channels(s);
            let mut blocks = Vec::new();
            for _ in 0..cfg.depths[s] {
                blocks.push(BlockP {
                    norm1: LayerNormP::zeros(c),
                    qkv: Linear::zeros(c, 3 * c),
                    proj: Linear::zeros(c, c),
                    rel_bias: Tensor::zeros(&[cfg.num_heads[s], rel.table_len]),
                    norm2: LayerNormP::zeros(c),
                    fc1: Linear::zeros(c, cfg.mlp_ratio * c),
                    fc2: Linear::zeros(cfg.mlp_ratio * c, c),
                });
            }
            stages.push(blocks);
        }
        let mut merges = Vec::new();
        for s in 1..cfg.n_stages() {
            let c_prev = cfg.stage_channels(s - 1);
            merges.push(MergeP {
                norm: LayerNormP::zeros(8 * c_prev),
                reduce: Linear::zeros(8 * c_prev, 2 * c_prev),
            });
        }
        let mut decodes = Vec::new();
        for level in (0..cfg.n_stages().saturating_sub(1)).rev() {
            let c_hi = cfg.stage_channels(level + 1);
            let c_lo = cfg.stage_channels(level);
            decodes.push(DecodeP {
                expand: Linear::zeros(c_hi, c_lo),
                fuse: Linear::zeros(2 * c_lo, c_lo),
                norm: LayerNormP::zeros(c_lo),
            });
        }
        Ok(Self {
            embed: Linear::zeros(cfg.in_channels, c0),
            embed_norm: LayerNormP::zeros(c0),
            stages,
            merges,
            decodes,
            head: Linear::zeros(c0, cfg.out_channels),
        })
    }

    /// Named views of every tensor, in a stable order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("embed.w".into(), &self.embed.w),
            ("embed.b".into(), &self.embed.b),
            ("embed_norm.g".into(), &self.embed_norm.g),
            ("embed_norm.b".into(), &self.embed_norm.b),
        ];
        for (s, blocks) in self.stages.iter().enumerate() {
            for (b, blk) in blocks.iter().enumerate() {
                let p = format!("enc{s}.blk{b}");
                out.push((format!("{p}.norm1.g"), &blk.norm1.g));
                out.push((format!("{p}.norm1.b"), &blk.norm1.b));
                out.push((format!("{p}.qkv.w"), &blk.qkv.w));
                out.push((format!("{p}.qkv.b"), &blk.qkv.b));
                out.push((format!("{p}.proj.w"), &blk.proj.w));
                out.push((format!("{p}.proj.b"), &blk.proj.b));
                out.push((format!("{p}.rel_bias"), &blk.rel_bias));
                out.push((format!("{p}.norm2.g"), &blk.norm2.g));
                out.push((format!("{p}.norm2.b"), &blk.norm2.b));
                out.push((format!("{p}.fc1.w"), &blk.fc1.w));
                out.push((format!("{p}.fc1.b"), &blk.fc1.b));
                out.push((format!("{p}.fc2.w"), &blk.fc2.w));
                out.push((format!("{p}.fc2.b"), &blk.fc2.b));
            }
        }
        for (i, m) in self.merges.iter().enumerate() {
            let p = format!("merge{}", i + 1);
            out.push((format!("{p}.norm.g"), &m.norm.g));
            out.push((format!("{p}.norm.b"), &m.norm.b));
            out.push((format!("{p}.reduce.w"), &m.reduce.w));
            out.push((format!("{p}.reduce.b"), &m.reduce.b));
        }
        let n_dec = self.decodes.len();
        for (t, d) in self.decodes.iter().enumerate() {
            let p = format!("dec{}", n_dec - 1 - t);
            out.push((format!("{p}.expand.w"), &d.expand.w));
            out.push((format!("{p}.expand.b"), &d.expand.b));
            out.push((format!("{p}.fuse.w"), &d.fuse.w));
            out.push((format!("{p}.fuse.b"), &d.fuse.b));
            out.push((format!("{p}.norm.g"), &d.norm.g));
            out.push((format!("{p}.norm.b"), &d.norm.b));
        }
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    /// Mutable variant of [`Self::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = vec![
            ("embed.w".into(), &mut self.embed.w),
            ("embed.b".into(), &mut self.embed.b),
            ("embed_norm.g".into(), &mut self.embed_norm.g),
            ("embed_norm.b".into(), &mut self.embed_norm.b),
        ];
        for (s, blocks) in self.stages.iter_mut().enumerate() {
            for (b, blk) in blocks.iter_mut().enumerate() {
                let p = format!("enc{s}.blk{b}");
                out.push((format!("{p}.norm1.g"), &mut blk.norm1.g));
                out.push((format!("{p}.norm1.b"), &mut blk.norm1.b));
                out.push((format!("{p}.qkv.w"), &mut blk.qkv.w));
                out.push((format!("{p}.qkv.b"), &mut blk.qkv.b));
                out.push((format!("{p}.proj.w"), &mut blk.proj.w));
                out.push((format!("{p}.proj.b"), &mut blk.proj.b));
                out.push((format!("{p}.rel_bias"), &mut blk.rel_bias));
                out.push((format!("{p}.norm2.g"), &mut blk.norm2.g));
                out.push((format!("{p}.norm2.b"), &mut blk.norm2.b));
                out.push((format!("{p}.fc1.w"), &mut blk.fc1.w));
                out.push((format!("{p}.fc1.b"), &mut blk.fc1.b));
                out.push((format!("{p}.fc2.w"), &mut blk.fc2.w));
                out.push((format!("{p}.fc2.b"), &mut blk.fc2.b));
            }
        }
        for (i, m) in self.merges.iter_mut().enumerate() {
            let p = format!("merge{}", i + 1);
            out.push((format!("{p}.norm.g"), &mut m.norm.g));
            out.push((format!("{p}.norm.b"), &mut m.norm.b));
            out.push((format!("{p}.reduce.w"), &mut m.reduce.w));
            out.push((format!("{p}.reduce.b"), &mut m.reduce.b));
        }
        let n_dec = self.decodes.len();
        for (t, d) in self.decodes.iter_mut().enumerate() {
            let p = format!("dec{}", n_dec - 1 - t);
            out.push((format!("{p}.expand.w"), &mut d.expand.w));
            out.push((format!("{p}.expand.b"), &mut d.expand.b));
            out.push((format!("{p}.fuse.w"), &mut d.fuse.w));
            out.push((format!("{p}.fuse.b"), &mut d.fuse.b));
            out.push((format!("{p}.norm.g"), &mut d.norm.g));
            out.push((format!("{p}.norm.b"), &mut d.norm.b));
        }
        out.push(("head.w".into(), &mut self.head.w));
        out.push(("head.b".into(), &mut self.head.b));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn convert<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            embed: self.embed.convert(),
            embed_norm: self.embed_norm.convert(),
            stages: self
                .stages
                .iter()
                .map(|blocks| {
                    blocks
                        .iter()
                        .map(|blk| BlockP {
                            norm1: blk.norm1.convert(),
                            qkv: blk.qkv.convert(),
                            proj: blk.proj.convert(),
                            rel_bias: blk.rel_bias.convert(),
                            norm2: blk.norm2.convert(),
                            fc1: blk.fc1.convert(),
                            fc2: blk.fc2.convert(),
                        })
                        .collect()
                })
                .collect(),
            merges: self
                .merges
                .iter()
                .map(|m| MergeP {
                    norm: m.norm.convert(),
                    reduce: m.reduce.convert(),
                })
                .collect(),
            decodes: self
                .decodes
                .iter()
                .map(|d| DecodeP {
                    expand: d.expand.convert(),
                    fuse: d.fuse.convert(),
                    norm: d.norm.convert(),
                })
                .collect(),
            head: self.head.convert(),
        }
    }

    /// Name of the first tensor containing a non-finite value, if any.
    pub fn find_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.find_non_finite().is_some())
            .map(|(name, _)| name)
    }
}

/// Deterministic initialization: truncated normal (std 0.02, resampled past
/// 2σ) for projection weights and bias tables, zeros for biases and norm
/// offsets, ones for norm scales.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    let mut params = ModelParams::<T>::zeros(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 0.02).expect("valid std");
    for (name, tensor) in params.tensors_mut() {
        if name.ends_with(".w") || name.ends_with("rel_bias") {
            for v in &mut tensor.data {
                let draw = loop {
                    let x = normal.sample(&mut rng);
                    if x.abs() <= 0.04 {
                        break x;
                    }
                };
                *v = T::of_f64(draw);
            }
        } else if name.ends_with(".g") {
            tensor.fill(T::one());
        }
        // biases and norm offsets stay zero
    }
    Ok(params)
}

struct BlockCache<T> {
    x_in: Vec<T>,
    n1_mean: Vec<T>,
    n1_rstd: Vec<T>,
    xw: Vec<T>,
    attn: AttnCache<T>,
    h: Vec<T>,
    n2_out: Vec<T>,
    n2_mean: Vec<T>,
    n2_rstd: Vec<T>,
    fc1_out: Vec<T>,
    gelu_out: Vec<T>,
    grid: WindowGrid,
}

struct MergeCache<T> {
    gathered: Vec<T>,
    n_out: Vec<T>,
    mean: Vec<T>,
    rstd: Vec<T>,
}

struct DecodeCache<T> {
    up: Vec<T>,
    cat: Vec<T>,
    fu: Vec<T>,
    n_out: Vec<T>,
    mean: Vec<T>,
    rstd: Vec<T>,
}

/// Everything the backward pass needs.
pub struct ForwardCache<T> {
    input: Vec<T>,
    embed_out: Vec<T>,
    en_mean: Vec<T>,
    en_rstd: Vec<T>,
    stage_caches: Vec<Vec<BlockCache<T>>>,
    merge_caches: Vec<MergeCache<T>>,
    decode_caches: Vec<DecodeCache<T>>,
    /// Feature entering the head.
    final_feat: Vec<T>,
    pub output: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
fn block_forward<T: Real>(
    blk: &BlockP<T>,
    dims: [usize; 3],
    c: usize,
    heads: usize,
    shift: [usize; 3],
    rel: &RelIndex,
    x: Vec<T>,
    window: [usize; 3],
    mlp_ratio: usize,
) -> Result<(Vec<T>, BlockCache<T>)> {
    let n = dims[0] * dims[1] * dims[2];
    let grid = WindowGrid::new(dims, c, window, shift)?;

    let mut n1_out = vec![T::zero(); n * c];
    let mut n1_mean = vec![T::zero(); n];
    let mut n1_rstd = vec![T::zero(); n];
    layernorm_forward(
        &x,
        &blk.norm1.g.data,
        &blk.norm1.b.data,
        n,
        c,
        &mut n1_out,
        &mut n1_mean,
        &mut n1_rstd,
    );

    let mut xw = vec![T::zero(); n * c];
    partition(&grid, &n1_out, &mut xw);

    let mut attn_out_w = vec![T::zero(); n * c];
    let attn = attention::window_attention_forward(
        &xw,
        grid.n_windows,
        grid.tokens_per_window,
        c,
        heads,
        &blk.qkv.w.data,
        &blk.qkv.b.data,
        &blk.proj.w.data,
        &blk.proj.b.data,
        &blk.rel_bias.data,
        rel,
        &mut attn_out_w,
    );

    let mut attn_spatial = vec![T::zero(); n * c];
    reverse(&grid, &attn_out_w, &mut attn_spatial);

    let mut h = x.clone();
    for (hv, &a) in h.iter_mut().zip(&attn_spatial) {
        *hv += a;
    }

    let mut n2_out = vec![T::zero(); n * c];
    let mut n2_mean = vec![T::zero(); n];
    let mut n2_rstd = vec![T::zero(); n];
    layernorm_forward(
        &h,
        &blk.norm2.g.data,
        &blk.norm2.b.data,
        n,
        c,
        &mut n2_out,
        &mut n2_mean,
        &mut n2_rstd,
    );

    let hidden = mlp_ratio * c;
    let mut fc1_out = vec![T::zero(); n * hidden];
    linear_forward(
        &n2_out,
        &blk.fc1.w.data,
        &blk.fc1.b.data,
        n,
        c,
        hidden,
        &mut fc1_out,
    );
    let mut gelu_out = vec![T::zero(); n * hidden];
    gelu_forward(&fc1_out, &mut gelu_out);
    let mut out = h.clone();
    {
        let mut fc2_out = vec![T::zero(); n * c];
        linear_forward(
            &gelu_out,
            &blk.fc2.w.data,
            &blk.fc2.b.data,
            n,
            hidden,
            c,
            &mut fc2_out,
        );
        for (ov, &f) in out.iter_mut().zip(&fc2_out) {
            *ov += f;
        }
    }

    Ok((
        out,
        BlockCache {
            x_in: x,
            n1_mean,
            n1_rstd,
            xw,
            attn,
            h,
            n2_out,
            n2_mean,
            n2_rstd,
            fc1_out,
            gelu_out,
            grid,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn block_backward<T: Real>(
    blk: &BlockP<T>,
    grads: &mut BlockP<T>,
    cache: &BlockCache<T>,
    c: usize,
    heads: usize,
    rel: &RelIndex,
    mlp_ratio: usize,
    dout: &[T],
) -> Vec<T> {
    let n = cache.x_in.len() / c;
    let hidden = mlp_ratio * c;

    // MLP branch.
    let mut dgelu = vec![T::zero(); n * hidden];
    linear_backward(
        &cache.gelu_out,
        &blk.fc2.w.data,
        dout,
        n,
        hidden,
        c,
        Some(&mut dgelu),
        &mut grads.fc2.w.data,
        &mut grads.fc2.b.data,
    );
    let mut dfc1 = vec![T::zero(); n * hidden];
    gelu_backward(&cache.fc1_out, &dgelu, &mut dfc1);
    let mut dn2 = vec![T::zero(); n * c];
    linear_backward(
        &cache.n2_out,
        &blk.fc1.w.data,
        &dfc1,
        n,
        c,
        hidden,
        Some(&mut dn2),
        &mut grads.fc1.w.data,
        &mut grads.fc1.b.data,
    );
    let mut dh = dout.to_vec(); // residual path around the MLP
    layernorm_backward(
        &cache.h,
        &blk.norm2.g.data,
        &cache.n2_mean,
        &cache.n2_rstd,
        &dn2,
        n,
        c,
        &mut dh,
        &mut grads.norm2.g.data,
        &mut grads.norm2.b.data,
    );

    // Attention branch: dh is the gradient at h = x + attn_spatial.
    let mut dattn_w = vec![T::zero(); n * c];
    partition(&cache.grid, &dh, &mut dattn_w); // backward of reverse

    let mut dxw = vec![T::zero(); n * c];
    attention::window_attention_backward(
        &cache.xw,
        &cache.attn,
        &dattn_w,
        cache.grid.n_windows,
        cache.grid.tokens_per_window,
        c,
        heads,
        &blk.qkv.w.data,
        &blk.proj.w.data,
        rel,
        &mut dxw,
        &mut grads.qkv.w.data,
        &mut grads.qkv.b.data,
        &mut grads.proj.w.data,
        &mut grads.proj.b.data,
        &mut grads.rel_bias.data,
    );

    let mut dn1 = vec![T::zero(); n * c];
    reverse(&cache.grid, &dxw, &mut dn1); // backward of partition

    let mut dx = dh; // residual path around attention
    layernorm_backward(
        &cache.x_in,
        &blk.norm1.g.data,
        &cache.n1_mean,
        &cache.n1_rstd,
        &dn1,
        n,
        c,
        &mut dx,
        &mut grads.norm1.g.data,
        &mut grads.norm1.b.data,
    );
    dx
}

/// Gather 2×2×2 neighborhoods into concatenated channel blocks.
fn merge_gather<T: Copy>(dims: [usize; 3], c: usize, x: &[T], out: &mut [T]) {
    let [d, h, w] = dims;
    let (hd, hh, hw) = (d / 2, h / 2, w / 2);
    let mut o = 0;
    for od in 0..hd {
        for oh in 0..hh {
            for ow in 0..hw {
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let src = (((od * 2 + dz) * h + (oh * 2 + dy)) * w + (ow * 2 + dx)) * c;
                            out[o..o + c].copy_from_slice(&x[src..src + c]);
                            o += c;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the gradient of [`merge_gather`].
fn merge_scatter_add<T: Real>(dims: [usize; 3], c: usize, dgathered: &[T], dx: &mut [T]) {
    let [d, h, w] = dims;
    let (hd, hh, hw) = (d / 2, h / 2, w / 2);
    let mut o = 0;
    for od in 0..hd {
        for oh in 0..hh {
            for ow in 0..hw {
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx_ in 0..2 {
                            let dst =
                                (((od * 2 + dz) * h + (oh * 2 + dy)) * w + (ow * 2 + dx_)) * c;
                            for k in 0..c {
                                dx[dst + k] += dgathered[o + k];
                            }
                            o += c;
                        }
                    }
                }
            }
        }
    }
}

/// Nearest-neighbour ×2 upsampling of `[D,H,W,C]` tokens.
fn upsample<T: Copy>(dims_hi_out: [usize; 3], c: usize, x: &[T], out: &mut [T]) {
    // dims_hi_out are the *output* dims; the source has half each.
    let [ud, uh, uw] = dims_hi_out;
    let (h, w) = (uh / 2, uw / 2);
    for zd in 0..ud {
        for zh in 0..uh {
            for zw in 0..uw {
                let src = (((zd / 2) * h + zh / 2) * w + zw / 2) * c;
                let dst = ((zd * uh + zh) * uw + zw) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
}

fn upsample_backward<T: Real>(dims_hi_out: [usize; 3], c: usize, dout: &[T], dx: &mut [T]) {
    let [ud, uh, uw] = dims_hi_out;
    let (h, w) = (uh / 2, uw / 2);
    for zd in 0..ud {
        for zh in 0..uh {
            for zw in 0..uw {
                let src = (((zd / 2) * h + zh / 2) * w + zw / 2) * c;
                let dst = ((zd * uh + zh) * uw + zw) * c;
                for k in 0..c {
                    dx[src + k] += dout[dst + k];
                }
            }
        }
    }
}

/// Forward pass with cached intermediates.
pub fn forward_cached<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &[T],
) -> Result<(Vec<T>, ForwardCache<T>)> {
    cfg.validate()?;
    let n0 = cfg.stage_tokens(0);
    if input.len() != n0 * cfg.in_channels {
        return Err(FodError::InvalidArgument(format!(
            "input length {} does not match patch {:?} × {} channels",
            input.len(),
            cfg.patch_size,
            cfg.in_channels
        )));
    }
    let rel = rel_position_index(cfg.window_size);
    let c0 = cfg.embed_dim;

    let mut embed_out = vec![T::zero(); n0 * c0];
    linear_forward(
        input,
        &params.embed.w.data,
        &params.embed.b.data,
        n0,
        cfg.in_channels,
        c0,
        &mut embed_out,
    );
    let mut feat = vec![T::zero(); n0 * c0];
    let mut en_mean = vec![T::zero(); n0];
    let mut en_rstd = vec![T::zero(); n0];
    layernorm_forward(
        &embed_out,
        &params.embed_norm.g.data,
        &params.embed_norm.b.data,
        n0,
        c0,
        &mut feat,
        &mut en_mean,
        &mut en_rstd,
    );

    let mut stage_caches = Vec::new();
    let mut stage_out = Vec::new();
    let mut merge_caches = Vec::new();

    for s in 0..cfg.n_stages() {
        if s > 0 {
            let dims_prev = cfg.stage_dims(s - 1);
            let c_prev = cfg.stage_channels(s - 1);
            let n_half = cfg.stage_tokens(s);
            let mut gathered = vec![T::zero(); n_half * 8 * c_prev];
            merge_gather(dims_prev, c_prev, &feat, &mut gathered);
            let m = &params.merges[s - 1];
            let mut n_out = vec![T::zero(); gathered.len()];
            let mut mean = vec![T::zero(); n_half];
            let mut rstd = vec![T::zero(); n_half];
            layernorm_forward(
                &gathered,
                &m.norm.g.data,
                &m.norm.b.data,
                n_half,
                8 * c_prev,
                &mut n_out,
                &mut mean,
                &mut rstd,
            );
            let mut reduced = vec![T::zero(); n_half * 2 * c_prev];
            linear_forward(
                &n_out,
                &m.reduce.w.data,
                &m.reduce.b.data,
                n_half,
                8 * c_prev,
                2 * c_prev,
                &mut reduced,
            );
            merge_caches.push(MergeCache {
                gathered,
                n_out,
                mean,
                rstd,
            });
            feat = reduced;
        }
        let dims = cfg.stage_dims(s);
        let c = cfg.stage_channels(s);
        let mut caches = Vec::new();
        for (b, blk) in params.stages[s].iter().enumerate() {
            let (out, cache) = block_forward(
                blk,
                dims,
                c,
                cfg.num_heads[s],
                cfg.block_shift(b),
                &rel,
                feat,
                cfg.window_size,
                cfg.mlp_ratio,
            )?;
            caches.push(cache);
            feat = out;
        }
        stage_caches.push(caches);
        stage_out.push(feat.clone());
    }

    // Decoder: upsample, expand, fuse the skip, norm, gelu.
    let mut decode_caches = Vec::new();
    for (t, dec) in params.decodes.iter().enumerate() {
        let level = cfg.n_stages() - 2 - t;
        let dims_lo = cfg.stage_dims(level);
        let n_lo = cfg.stage_tokens(level);
        let c_hi = cfg.stage_channels(level + 1);
        let c_lo = cfg.stage_channels(level);

        let mut up = vec![T::zero(); n_lo * c_hi];
        upsample(dims_lo, c_hi, &feat, &mut up);
        let mut ex = vec![T::zero(); n_lo * c_lo];
        linear_forward(
            &up,
            &dec.expand.w.data,
            &dec.expand.b.data,
            n_lo,
            c_hi,
            c_lo,
            &mut ex,
        );
        let skip = &stage_out[level];
        let mut cat = vec![T::zero(); n_lo * 2 * c_lo];
        for r in 0..n_lo {
            cat[r * 2 * c_lo..r * 2 * c_lo + c_lo].copy_from_slice(&ex[r * c_lo..(r + 1) * c_lo]);
            cat[r * 2 * c_lo + c_lo..(r + 1) * 2 * c_lo]
                .copy_from_slice(&skip[r * c_lo..(r + 1) * c_lo]);
        }
        let mut fu = vec![T::zero(); n_lo * c_lo];
        linear_forward(
            &cat,
            &dec.fuse.w.data,
            &dec.fuse.b.data,
            n_lo,
            2 * c_lo,
            c_lo,
            &mut fu,
        );
        let mut n_out = vec![T::zero(); n_lo * c_lo];
        let mut mean = vec![T::zero(); n_lo];
        let mut rstd = vec![T::zero(); n_lo];
        layernorm_forward(
            &fu,
            &dec.norm.g.data,
            &dec.norm.b.data,
            n_lo,
            c_lo,
            &mut n_out,
            &mut mean,
            &mut rstd,
        );
        let mut act = vec![T::zero(); n_lo * c_lo];
        gelu_forward(&n_out, &mut act);
        decode_caches.push(DecodeCache {
            up,
            cat,
            fu,
            n_out,
            mean,
            rstd,
        });
        feat = act;
    }

    let final_feat = feat;
    let mut output = vec![T::zero(); n0 * cfg.out_channels];
    linear_forward(
        &final_feat,
        &params.head.w.data,
        &params.head.b.data,
        n0,
        c0,
        cfg.out_channels,
        &mut output,
    );
    if cfg.residual {
        for (o, &i) in output.iter_mut().zip(input) {
            *o += i;
        }
    }

    Ok((
        output.clone(),
        ForwardCache {
            input: input.to_vec(),
            embed_out,
            en_mean,
            en_rstd,
            stage_caches,
            merge_caches,
            decode_caches,
            final_feat,
            output,
        },
    ))
}

/// Forward pass without keeping the cache.
pub fn forward<T: Real>(params: &ModelParams<T>, cfg: &ModelConfig, input: &[T]) -> Result<Vec<T>> {
    Ok(forward_cached(params, cfg, input)?.0)
}

/// Backward pass. Returns parameter gradients and the input gradient.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    cache: &ForwardCache<T>,
    dout: &[T],
) -> Result<(ModelParams<T>, Vec<T>)> {
    let mut grads = ModelParams::<T>::zeros(cfg)?;
    let rel = rel_position_index(cfg.window_size);
    let n0 = cfg.stage_tokens(0);
    let c0 = cfg.embed_dim;
    let n_stages = cfg.n_stages();

    let mut dinput = vec![T::zero(); n0 * cfg.in_channels];
    if cfg.residual {
        for (di, &g) in dinput.iter_mut().zip(dout) {
            *di += g;
        }
    }

    // Head.
    let mut dfeat = vec![T::zero(); n0 * c0];
    linear_backward(
        &cache.final_feat,
        &params.head.w.data,
        dout,
        n0,
        c0,
        cfg.out_channels,
        Some(&mut dfeat),
        &mut grads.head.w.data,
        &mut grads.head.b.data,
    );

    // Decoder steps in reverse processing order.
    let mut dskip: Vec<Option<Vec<T>>> = vec![None; n_stages];
    for t in (0..params.decodes.len()).rev() {
        let level = n_stages - 2 - t;
        let dims_lo = cfg.stage_dims(level);
        let n_lo = cfg.stage_tokens(level);
        let n_hi = cfg.stage_tokens(level + 1);
        let c_hi = cfg.stage_channels(level + 1);
        let c_lo = cfg.stage_channels(level);
        let dec = &params.decodes[t];
        let dc = &cache.decode_caches[t];
        let dg = &mut grads.decodes[t];

        let mut dn = vec![T::zero(); n_lo * c_lo];
        gelu_backward(&dc.n_out, &dfeat, &mut dn);
        let mut dfu = vec![T::zero(); n_lo * c_lo];
        layernorm_backward(
            &dc.fu,
            &dec.norm.g.data,
            &dc.mean,
            &dc.rstd,
            &dn,
            n_lo,
            c_lo,
            &mut dfu,
            &mut dg.norm.g.data,
            &mut dg.norm.b.data,
        );
        let mut dcat = vec![T::zero(); n_lo * 2 * c_lo];
        linear_backward(
            &dc.cat,
            &dec.fuse.w.data,
            &dfu,
            n_lo,
            2 * c_lo,
            c_lo,
            Some(&mut dcat),
            &mut dg.fuse.w.data,
            &mut dg.fuse.b.data,
        );
        let mut dex = vec![T::zero(); n_lo * c_lo];
        let mut dsk = vec![T::zero(); n_lo * c_lo];
        for r in 0..n_lo {
            dex[r * c_lo..(r + 1) * c_lo].copy_from_slice(&dcat[r * 2 * c_lo..r * 2 * c_lo + c_lo]);
            dsk[r * c_lo..(r + 1) * c_lo]
                .copy_from_slice(&dcat[r * 2 * c_lo + c_lo..(r + 1) * 2 * c_lo]);
        }
        dskip[level] = Some(dsk);
        let mut dup = vec![T::zero(); n_lo * c_hi];
        linear_backward(
            &dc.up,
            &dec.expand.w.data,
            &dex,
            n_lo,
            c_hi,
            c_lo,
            Some(&mut dup),
            &mut dg.expand.w.data,
            &mut dg.expand.b.data,
        );
        let mut ddeeper = vec![T::zero(); n_hi * c_hi];
        upsample_backward(dims_lo, c_hi, &dup, &mut ddeeper);
        dfeat = ddeeper;
    }

    // Encoder stages, deepest first; fold in the decoder's skip gradients.
    for s in (0..n_stages).rev() {
        if let Some(dsk) = dskip[s].take() {
            for (a, b) in dfeat.iter_mut().zip(&dsk) {
                *a += *b;
            }
        }
        let c = cfg.stage_channels(s);
        for b in (0..params.stages[s].len()).rev() {
            dfeat = block_backward(
                &params.stages[s][b],
                &mut grads.stages[s][b],
                &cache.stage_caches[s][b],
                c,
                cfg.num_heads[s],
                &rel,
                cfg.mlp_ratio,
                &dfeat,
            );
        }
        if s > 0 {
            let dims_prev = cfg.stage_dims(s - 1);
            let c_prev = cfg.stage_channels(s - 1);
            let n_half = cfg.stage_tokens(s);
            let m = &params.merges[s - 1];
            let mc = &cache.merge_caches[s - 1];
            let mg = &mut grads.merges[s - 1];
            let mut dn_out = vec![T::zero(); n_half * 8 * c_prev];
            linear_backward(
                &mc.n_out,
                &m.reduce.w.data,
                &dfeat,
                n_half,
                8 * c_prev,
                2 * c_prev,
                Some(&mut dn_out),
                &mut mg.reduce.w.data,
                &mut mg.reduce.b.data,
            );
            let mut dgathered = vec![T::zero(); n_half * 8 * c_prev];
            layernorm_backward(
                &mc.gathered,
                &m.norm.g.data,
                &mc.mean,
                &mc.rstd,
                &dn_out,
                n_half,
                8 * c_prev,
                &mut dgathered,
                &mut mg.norm.g.data,
                &mut mg.norm.b.data,
            );
            let n_prev = cfg.stage_tokens(s - 1);
            let mut dprev = vec![T::zero(); n_prev * c_prev];
            merge_scatter_add(dims_prev, c_prev, &dgathered, &mut dprev);
            dfeat = dprev;
        }
    }

    // Embedding.
    let mut dembed_out = vec![T::zero(); n0 * c0];
    layernorm_backward(
        &cache.embed_out,
        &params.embed_norm.g.data,
        &cache.en_mean,
        &cache.en_rstd,
        &dfeat,
        n0,
        c0,
        &mut dembed_out,
        &mut grads.embed_norm.g.data,
        &mut grads.embed_norm.b.data,
    );
    linear_backward(
        &cache.input,
        &params.embed.w.data,
        &dembed_out,
        n0,
        cfg.in_channels,
        c0,
        Some(&mut dinput),
        &mut grads.embed.w.data,
        &mut grads.embed.b.data,
    );

    Ok((grads, dinput))
}

/// Mean-squared-error loss and exact gradients.
///
/// Returns `(mse, parameter gradients, input gradient)`.
pub fn loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    input: &[T],
    target: &[T],
) -> Result<(T, ModelParams<T>, Vec<T>)> {
    let (output, cache) = forward_cached(params, cfg, input)?;
    if target.len() != output.len() {
        return Err(FodError::InvalidArgument(format!(
            "target length {} does not match output length {}",
            target.len(),
            output.len()
        )));
    }
    let nf = T::of_f64(output.len() as f64);
    let mut mse = T::zero();
    let mut dout = vec![T::zero(); output.len()];
    let two = T::of_f64(2.0);
    for i in 0..output.len() {
        let r = output[i] - target[i];
        mse += r * r;
        dout[i] = two * r / nf;
    }
    mse /= nf;
    let (grads, dinput) = backward(params, cfg, &cache, &dout)?;
    Ok((mse, grads, dinput))
}

#[cfg(test)]
mod tests;
