//! Forward pass with cached activations and the matching backward pass.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{Block, EncoderParams, LayerNorm, PatchGrid, LN_EPS};
use crate::error::{Error, Result};
use crate::repr::{DecoupledFeature, Modality};

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

struct BlockCache {
    h1: Array2<f64>,
    ln1: LnCache,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    h2: Array2<f64>,
    ln2: LnCache,
    pre: Array2<f64>,
    act: Array2<f64>,
}

/// Activations retained from [`EncoderParams::encode_with_cache`].
pub struct EncodeCache {
    modality: Modality,
    patches: Array2<f64>,
    blocks: Vec<BlockCache>,
    final_ln: LnCache,
}

fn ln_forward(ln: &LayerNorm, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.dot(&row) / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * &ln.gamma + &ln.beta;
    (y, LnCache { xhat, rstd })
}

fn ln_backward(ln: &LayerNorm, cache: &LnCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
    grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.beta += &dy.sum_axis(Axis(0));
    let dxhat = dy * &ln.gamma;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), xh), &r) in
        dx.rows_mut().into_iter().zip(dxhat.rows()).zip(cache.xhat.rows()).zip(cache.rstd.iter())
    {
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        ndarray::Zip::from(&mut out).and(&g).and(&xh).for_each(|o, &gv, &xv| {
            *o = r * (gv - mean_g - xv * mean_gx);
        });
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh())
}

fn gelu_grad(z: f64) -> f64 {
    let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn block_forward(b: &Block, x: Array2<f64>, heads: usize) -> (Array2<f64>, BlockCache) {
    let (t, d) = x.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (h1, ln1) = ln_forward(&b.ln1, &x);
    let qkv = h1.dot(&b.w_qkv) + &b.b_qkv;
    let mut attn = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let q = qkv.slice(s![.., cols.clone()]);
        let k = qkv.slice(s![.., d + cols.start..d + cols.end]);
        let v = qkv.slice(s![.., 2 * d + cols.start..2 * d + cols.end]);
        let mut p = q.dot(&k.t()) * scale;
        softmax_rows(&mut p);
        attn.slice_mut(s![.., cols]).assign(&p.dot(&v));
        probs.push(p);
    }
    let x_mid = x + attn.dot(&b.w_out) + &b.b_out;
    let (h2, ln2) = ln_forward(&b.ln2, &x_mid);
    let pre = h2.dot(&b.w_ff1) + &b.b_ff1;
    let act = pre.mapv(gelu);
    let out = x_mid + act.dot(&b.w_ff2) + &b.b_ff2;
    (out, BlockCache { h1, ln1, qkv, probs, attn, h2, ln2, pre, act })
}

fn add_outer(acc: &mut Array2<f64>, a: ArrayView2<'_, f64>, b: &Array2<f64>) {
    ndarray::linalg::general_mat_mul(1.0, &a.t(), b, 1.0, acc);
}

fn block_backward(b: &Block, c: &BlockCache, dy: Array2<f64>, heads: usize, g: &mut Block) -> Array2<f64> {
    let d = dy.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    add_outer(&mut g.w_ff2, c.act.view(), &dy);
    g.b_ff2 += &dy.sum_axis(Axis(0));
    let mut d_pre = dy.dot(&b.w_ff2.t());
    ndarray::Zip::from(&mut d_pre).and(&c.pre).for_each(|dp, &z| *dp *= gelu_grad(z));
    add_outer(&mut g.w_ff1, c.h2.view(), &d_pre);
    g.b_ff1 += &d_pre.sum_axis(Axis(0));
    let d_h2 = d_pre.dot(&b.w_ff1.t());
    let d_mid = dy + ln_backward(&b.ln2, &c.ln2, &d_h2, &mut g.ln2);

    add_outer(&mut g.w_out, c.attn.view(), &d_mid);
    g.b_out += &d_mid.sum_axis(Axis(0));
    let d_attn = d_mid.dot(&b.w_out.t());
    let mut d_qkv = Array2::zeros(c.qkv.raw_dim());
    for h in 0..heads {
        let (q0, k0, v0) = (h * dh, d + h * dh, 2 * d + h * dh);
        let p = &c.probs[h];
        let d_o = d_attn.slice(s![.., q0..q0 + dh]);
        let q = c.qkv.slice(s![.., q0..q0 + dh]);
        let k = c.qkv.slice(s![.., k0..k0 + dh]);
        let v = c.qkv.slice(s![.., v0..v0 + dh]);
        let d_p = d_o.dot(&v.t());
        d_qkv.slice_mut(s![.., v0..v0 + dh]).assign(&p.t().dot(&d_o));
        let mut d_s = d_p;
        for (mut ds_row, p_row) in d_s.rows_mut().into_iter().zip(p.rows()) {
            let inner = ds_row.dot(&p_row);
            ndarray::Zip::from(&mut ds_row).and(&p_row).for_each(|ds, &pv| *ds = pv * (*ds - inner) * scale);
        }
        d_qkv.slice_mut(s![.., q0..q0 + dh]).assign(&d_s.dot(&k));
        d_qkv.slice_mut(s![.., k0..k0 + dh]).assign(&d_s.t().dot(&q));
    }
    add_outer(&mut g.w_qkv, c.h1.view(), &d_qkv);
    g.b_qkv += &d_qkv.sum_axis(Axis(0));
    let d_h1 = d_qkv.dot(&b.w_qkv.t());
    d_mid + ln_backward(&b.ln1, &c.ln1, &d_h1, &mut g.ln1)
}

impl EncoderParams {
    fn check_grid(&self, grid: &PatchGrid) -> Result<()> {
        let c = &self.config;
        if grid.patches.dim() != (c.num_patches, c.patch_dim) {
            return Err(Error::Shape(format!(
                "grid is {:?}, encoder expects ({}, {})",
                grid.patches.dim(),
                c.num_patches,
                c.patch_dim
            )));
        }
        Ok(())
    }

    /// Raw (unnormalized) specific and shared features for one grid.
    pub fn encode(&self, grid: &PatchGrid) -> Result<DecoupledFeature> {
        Ok(self.encode_with_cache(grid)?.0)
    }

    pub fn encode_with_cache(&self, grid: &PatchGrid) -> Result<(DecoupledFeature, EncodeCache)> {
        self.check_grid(grid)?;
        let cfg = self.config;
        let m = grid.modality.index();
        let tokens = cfg.token_rows();
        let mut x = Array2::zeros((cfg.seq_len(), cfg.dim));
        x.row_mut(0).assign(&(&self.specific_tokens.row(m) + &self.pos_embed.row(0)));
        if cfg.decoupled {
            x.row_mut(1).assign(&(&self.shared_tokens.row(m) + &self.pos_embed.row(1)));
        }
        let embedded = grid.patches.dot(&self.patch_w) + &self.patch_b + self.pos_embed.slice(s![2.., ..]);
        x.slice_mut(s![tokens.., ..]).assign(&embedded);

        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = block_forward(b, x, cfg.heads);
            x = next;
            caches.push(cache);
        }
        let (y, final_cache) = ln_forward(&self.final_ln, &x);
        let shared_row = if cfg.decoupled { 1 } else { 0 };
        let feature = DecoupledFeature {
            modality: grid.modality,
            specific: y.row(0).to_owned(),
            shared: y.row(shared_row).to_owned(),
        };
        let cache = EncodeCache {
            modality: grid.modality,
            patches: grid.patches.clone(),
            blocks: caches,
            final_ln: final_cache,
        };
        Ok((feature, cache))
    }

    /// Accumulates parameter gradients for upstream gradients on the two
    /// output features.
    pub fn backward(
        &self,
        cache: &EncodeCache,
        d_specific: &Array1<f64>,
        d_shared: &Array1<f64>,
        grads: &mut EncoderParams,
    ) {
        let cfg = self.config;
        let mut dy = Array2::zeros((cfg.seq_len(), cfg.dim));
        {
            let mut r0 = dy.row_mut(0);
            r0 += d_specific;
        }
        {
            let mut r = dy.row_mut(if cfg.decoupled { 1 } else { 0 });
            r += d_shared;
        }
        let mut dx = ln_backward(&self.final_ln, &cache.final_ln, &dy, &mut grads.final_ln);
        for ((b, c), g) in self.blocks.iter().zip(&cache.blocks).zip(grads.blocks.iter_mut()).rev() {
            dx = block_backward(b, c, dx, cfg.heads, g);
        }

        let m = cache.modality.index();
        let tokens = cfg.token_rows();
        {
            let mut t = grads.specific_tokens.row_mut(m);
            t += &dx.row(0);
            let mut p = grads.pos_embed.row_mut(0);
            p += &dx.row(0);
        }
        if cfg.decoupled {
            let mut t = grads.shared_tokens.row_mut(m);
            t += &dx.row(1);
            let mut p = grads.pos_embed.row_mut(1);
            p += &dx.row(1);
        }
        let d_embed = dx.slice(s![tokens.., ..]).to_owned();
        {
            let mut p = grads.pos_embed.slice_mut(s![2.., ..]);
            p += &d_embed;
        }
        add_outer(&mut grads.patch_w, cache.patches.view(), &d_embed);
        grads.patch_b += &d_embed.sum_axis(Axis(0));
    }
}
