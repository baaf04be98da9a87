//! Desk-scale dual-token transformer encoder.
//!
//! Each modality's patch grid is linearly projected, prefixed with that
//! modality's learnable specific and shared tokens, and run through a stack of
//! pre-norm transformer blocks shared by all modalities. The outputs at the
//! two token positions are the raw specific and shared features.
//!
//! With `decoupled = false` only the specific token is prepended and its
//! output fills both feature roles; this is the no-decoupling baseline.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::ClassifierHeads;
use crate::params::Parameters;
use crate::repr::{Modality, NUM_MODALITIES};

mod checkpoint;
mod forward;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::EncodeCache;
pub use optim::{Adam, AdamConfig};

pub const DEFAULT_INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub num_patches: usize,
    pub patch_dim: usize,
    pub decoupled: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { dim: 64, depth: 2, heads: 4, num_patches: 16, patch_dim: 48, decoupled: true }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("encoder: {msg}")));
        if self.dim == 0 || self.depth == 0 || self.heads == 0 || self.num_patches == 0 || self.patch_dim == 0 {
            return bad("dim, depth, heads, num_patches and patch_dim must be positive");
        }
        if self.dim % self.heads != 0 {
            return bad("dim must be divisible by heads");
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        4 * self.dim
    }

    /// Number of prepended token rows.
    pub fn token_rows(&self) -> usize {
        if self.decoupled {
            2
        } else {
            1
        }
    }

    pub fn seq_len(&self) -> usize {
        self.token_rows() + self.num_patches
    }
}

/// Flattened patches of one modality image: `num_patches x patch_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub modality: Modality,
    pub patches: Array2<f64>,
}

impl PatchGrid {
    pub fn new(modality: Modality, patches: Array2<f64>) -> Result<Self> {
        if patches.nrows() == 0 {
            return Err(Error::Shape("patch grid needs at least one patch".into()));
        }
        if !patches.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("patch grid"));
        }
        Ok(PatchGrid { modality, patches })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        LayerNorm { gamma: Array1::ones(dim), beta: Array1::zeros(dim) }
    }

    fn zeros(dim: usize) -> Self {
        LayerNorm { gamma: Array1::zeros(dim), beta: Array1::zeros(dim) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub w_qkv: Array2<f64>,
    pub b_qkv: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub ln2: LayerNorm,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
}

impl Block {
    fn zeros(dim: usize, hidden: usize) -> Self {
        Block {
            ln1: LayerNorm::zeros(dim),
            w_qkv: Array2::zeros((dim, 3 * dim)),
            b_qkv: Array1::zeros(3 * dim),
            w_out: Array2::zeros((dim, dim)),
            b_out: Array1::zeros(dim),
            ln2: LayerNorm::zeros(dim),
            w_ff1: Array2::zeros((dim, hidden)),
            b_ff1: Array1::zeros(hidden),
            w_ff2: Array2::zeros((hidden, dim)),
            b_ff2: Array1::zeros(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub patch_w: Array2<f64>,
    pub patch_b: Array1<f64>,
    /// One row per modality.
    pub specific_tokens: Array2<f64>,
    pub shared_tokens: Array2<f64>,
    /// `num_patches + 2` rows; rows 0 and 1 belong to the two tokens.
    pub pos_embed: Array2<f64>,
    pub blocks: Vec<Block>,
    pub final_ln: LayerNorm,
}

impl EncoderParams {
    /// Same shapes, every entry zero (including layer-norm gains).
    pub fn zeros(config: EncoderConfig) -> Self {
        let d = config.dim;
        EncoderParams {
            config,
            patch_w: Array2::zeros((config.patch_dim, d)),
            patch_b: Array1::zeros(d),
            specific_tokens: Array2::zeros((NUM_MODALITIES, d)),
            shared_tokens: Array2::zeros((NUM_MODALITIES, d)),
            pos_embed: Array2::zeros((config.num_patches + 2, d)),
            blocks: (0..config.depth).map(|_| Block::zeros(d, config.hidden())).collect(),
            final_ln: LayerNorm::zeros(d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }
}

fn fill_normal<R: Rng>(a: &mut [f64], std: f64, truncated: bool, rng: &mut R) {
    if std == 0.0 {
        a.fill(0.0);
        return;
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    for x in a {
        *x = loop {
            let v: f64 = normal.sample(rng);
            if !truncated || v.abs() <= 2.0 * std {
                break v;
            }
        };
    }
}

/// Deterministic initialization: truncated-normal projection and block
/// weights, normal tokens and positions, zero biases, unit layer-norm gains.
pub fn init_params(config: EncoderConfig, seed: u64) -> Result<EncoderParams> {
    init_params_with_std(config, seed, DEFAULT_INIT_STD)
}

pub fn init_params_with_std(config: EncoderConfig, seed: u64, std: f64) -> Result<EncoderParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_with_rng(config, std, &mut rng)
}

fn init_with_rng<R: Rng>(config: EncoderConfig, std: f64, rng: &mut R) -> Result<EncoderParams> {
    config.validate()?;
    let mut p = EncoderParams::zeros(config);
    let d = config.dim;
    fill_normal(p.patch_w.as_slice_mut().unwrap(), std, true, rng);
    fill_normal(p.specific_tokens.as_slice_mut().unwrap(), std, false, rng);
    fill_normal(p.shared_tokens.as_slice_mut().unwrap(), std, false, rng);
    fill_normal(p.pos_embed.as_slice_mut().unwrap(), std, false, rng);
    for b in &mut p.blocks {
        b.ln1 = LayerNorm::new(d);
        b.ln2 = LayerNorm::new(d);
        for w in [&mut b.w_qkv, &mut b.w_out, &mut b.w_ff1, &mut b.w_ff2] {
            fill_normal(w.as_slice_mut().unwrap(), std, true, rng);
        }
    }
    p.final_ln = LayerNorm::new(d);
    Ok(p)
}

macro_rules! push_tensors {
    ($out:ident, $as:ident, $iter:ident, $p:expr) => {{
        let p = $p;
        $out.push(("encoder.patch.weight".to_string(), p.patch_w.$as().unwrap()));
        $out.push(("encoder.patch.bias".to_string(), p.patch_b.$as().unwrap()));
        $out.push(("encoder.tokens.specific".to_string(), p.specific_tokens.$as().unwrap()));
        $out.push(("encoder.tokens.shared".to_string(), p.shared_tokens.$as().unwrap()));
        $out.push(("encoder.pos_embed".to_string(), p.pos_embed.$as().unwrap()));
        for (i, b) in p.blocks.$iter().enumerate() {
            let n = |s: &str| format!("encoder.blocks.{i}.{s}");
            $out.push((n("ln1.gamma"), b.ln1.gamma.$as().unwrap()));
            $out.push((n("ln1.beta"), b.ln1.beta.$as().unwrap()));
            $out.push((n("attn.qkv.weight"), b.w_qkv.$as().unwrap()));
            $out.push((n("attn.qkv.bias"), b.b_qkv.$as().unwrap()));
            $out.push((n("attn.out.weight"), b.w_out.$as().unwrap()));
            $out.push((n("attn.out.bias"), b.b_out.$as().unwrap()));
            $out.push((n("ln2.gamma"), b.ln2.gamma.$as().unwrap()));
            $out.push((n("ln2.beta"), b.ln2.beta.$as().unwrap()));
            $out.push((n("mlp.fc1.weight"), b.w_ff1.$as().unwrap()));
            $out.push((n("mlp.fc1.bias"), b.b_ff1.$as().unwrap()));
            $out.push((n("mlp.fc2.weight"), b.w_ff2.$as().unwrap()));
            $out.push((n("mlp.fc2.bias"), b.b_ff2.$as().unwrap()));
        }
        $out.push(("encoder.final_ln.gamma".to_string(), p.final_ln.gamma.$as().unwrap()));
        $out.push(("encoder.final_ln.beta".to_string(), p.final_ln.beta.$as().unwrap()));
    }};
}

impl Parameters for EncoderParams {
    fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        push_tensors!(out, as_slice, iter, self);
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        push_tensors!(out, as_slice_mut, iter_mut, self);
        out
    }
}

/// Encoder plus per-modality classifier heads: everything that trains.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub heads: ClassifierHeads,
}

impl Model {
    pub fn init(config: EncoderConfig, classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config("classifier needs at least two identities".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = init_with_rng(config, DEFAULT_INIT_STD, &mut rng)?;
        let heads = ClassifierHeads::init(config.dim, classes, DEFAULT_INIT_STD, &mut rng);
        Ok(Model { encoder, heads })
    }

    pub fn config(&self) -> EncoderConfig {
        self.encoder.config
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            encoder: self.encoder.zeros_like(),
            heads: ClassifierHeads::zeros(self.heads.dim(), self.heads.classes()),
        }
    }
}

impl Parameters for Model {
    fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = self.encoder.named_tensors();
        out.extend(self.heads.named_tensors());
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = self.encoder.named_tensors_mut();
        out.extend(self.heads.named_tensors_mut());
        out
    }
}
