//! Attention building blocks on the gradient tape: RMSNorm, multi-head
//! scaled-dot-product attention with additive log-masks, optional per-head
//! logit biases and optional angular (LAE) query/key modulation, and the
//! GELU feed-forward sublayer.

use crate::diffcore::{Element, NdArray, Var};
use crate::encodings::DegreeAllocation;
use crate::error::Result;

pub const RMS_EPS: f64 = 1e-6;

/// Mask floor: padded slots enter softmax at exp(-30) relative weight.
pub const LOG_MASK_FLOOR: f64 = -30.0;

/// x / sqrt(mean(x², last axis) + ε) ⊙ gain.
pub fn rms_norm<'t, E: Element>(x: &Var<'t, E>, gain: &Var<'t, E>) -> Result<Var<'t, E>> {
    let d = *x.shape().last().expect("rms_norm needs a channel axis");
    let last = x.shape().len() - 1;
    let mut keep = x.shape().to_vec();
    keep[last] = 1;
    let ms = x.square()?.mean_axis(last)?.reshape(keep)?;
    let inv = ms.add_scalar(RMS_EPS)?.rsqrt()?;
    debug_assert_eq!(gain.value().len(), d);
    x.mul(&inv)?.mul(gain)
}

/// Linear layer `x @ w + b`; `x` is (…, in), `w` (in, out), `b` (out).
pub fn linear<'t, E: Element>(
    x: &Var<'t, E>,
    w: &Var<'t, E>,
    b: &Var<'t, E>,
) -> Result<Var<'t, E>> {
    x.matmul(w)?.add(b)
}

/// Two-layer GELU feed-forward: linear -> GELU -> linear.
pub fn feed_forward<'t, E: Element>(
    x: &Var<'t, E>,
    w1: &Var<'t, E>,
    b1: &Var<'t, E>,
    w2: &Var<'t, E>,
    b2: &Var<'t, E>,
) -> Result<Var<'t, E>> {
    linear(&linear(x, w1, b1)?.gelu()?, w2, b2)
}

/// Per-head projection weights; each entry is (d_model, d_h).
pub struct MhaParams<'t, E: Element> {
    pub wq: Vec<Var<'t, E>>,
    pub wk: Vec<Var<'t, E>>,
    pub wv: Vec<Var<'t, E>>,
}

impl<'t, E: Element> MhaParams<'t, E> {
    pub fn num_heads(&self) -> usize {
        self.wq.len()
    }
}

/// Angular modulation of queries/keys: per-token codes γ of length d_hr plus
/// the constant duplication matrix (d_h × d_hr) from the degree allocation.
pub struct LaeModulation<'t, E: Element> {
    pub codes: Var<'t, E>,
    pub expand: Var<'t, E>,
}

impl<'t, E: Element> LaeModulation<'t, E> {
    /// Constant 0/1 duplication matrix aligned with the code layout.
    pub fn expansion_matrix(alloc: &DegreeAllocation, var_like: &Var<'t, E>) -> Var<'t, E> {
        let map = alloc.expansion_map();
        let mut data = vec![E::zero(); alloc.head_dim * alloc.expanded_dim];
        for (slot, &p) in map.iter().enumerate() {
            data[p * alloc.expanded_dim + slot] = E::one();
        }
        var_like.tape().constant(
            NdArray::new(vec![alloc.head_dim, alloc.expanded_dim], data)
                .expect("expansion matrix shape"),
        )
    }
}

/// Multi-head scaled-dot-product attention over token blocks.
///
/// `x` is (B, T, d_model). Logits per head are q·k/scale_div plus the
/// additive `log_mask` (broadcastable to (B, T, T)) and optional per-head
/// `bias`. With `modulation`, q and k are degree-expanded and multiplied by
/// each token's own angular code before the dot product; the logit scale
/// stays 1/sqrt(d_h) on the pre-expansion head dim. Returns concatenated
/// head outputs (B, T, num_heads·d_h).
pub fn multi_head_attention<'t, E: Element>(
    x: &Var<'t, E>,
    params: &MhaParams<'t, E>,
    log_mask: Option<&Var<'t, E>>,
    bias: Option<&[Var<'t, E>]>,
    modulation: Option<&LaeModulation<'t, E>>,
) -> Result<Var<'t, E>> {
    let heads = params.num_heads();
    let d_h = params.wq[0].shape()[1];
    let scale = 1.0 / (d_h as f64).sqrt();
    let d_out = heads * d_h;
    let mut merged: Option<Var<'t, E>> = None;
    for h in 0..heads {
        let q = x.matmul(&params.wq[h])?;
        let k = x.matmul(&params.wk[h])?;
        let v = x.matmul(&params.wv[h])?;
        let logits = match modulation {
            Some(m) => {
                let qe = q.matmul(&m.expand)?.mul(&m.codes)?;
                let ke = k.matmul(&m.expand)?.mul(&m.codes)?;
                qe.matmul_tb(&ke)?.scale(scale)?
            }
            None => q.matmul_tb(&k)?.scale(scale)?,
        };
        let logits = match log_mask {
            Some(mask) => logits.add(mask)?,
            None => logits,
        };
        let logits = match bias {
            Some(b) => logits.add(&b[h])?,
            None => logits,
        };
        let attn = logits.softmax()?;
        let out = attn.matmul(&v)?; // (B, T, d_h)
        // Place this head's columns into the concatenated output.
        let mut placement = vec![E::zero(); d_h * d_out];
        for c in 0..d_h {
            placement[c * d_out + h * d_h + c] = E::one();
        }
        let p = x.tape().constant(NdArray::new(vec![d_h, d_out], placement)?);
        let placed = out.matmul(&p)?;
        merged = Some(match merged {
            Some(acc) => acc.add(&placed)?,
            None => placed,
        });
    }
    Ok(merged.expect("at least one head"))
}

/// Concatenate two blocks along the channel axis via constant placement
/// matmuls: (…, d1) ++ (…, d2) -> (…, d1+d2).
pub fn concat_channels<'t, E: Element>(a: &Var<'t, E>, b: &Var<'t, E>) -> Result<Var<'t, E>> {
    let d1 = *a.shape().last().unwrap();
    let d2 = *b.shape().last().unwrap();
    let d = d1 + d2;
    let mut pa = vec![E::zero(); d1 * d];
    for c in 0..d1 {
        pa[c * d + c] = E::one();
    }
    let mut pb = vec![E::zero(); d2 * d];
    for c in 0..d2 {
        pb[c * d + d1 + c] = E::one();
    }
    let ca = a.tape().constant(NdArray::new(vec![d1, d], pa)?);
    let cb = b.tape().constant(NdArray::new(vec![d2, d], pb)?);
    a.matmul(&ca)?.add(&b.matmul(&cb)?)
}

/// Additive log-mask from effective slot weights, floored: log(w + e^{-30}).
/// Smooth in w, ~0 for w ≈ 1, ≈ -30 for padded slots.
pub fn log_mask_from_weights<'t, E: Element>(weights: &Var<'t, E>) -> Result<Var<'t, E>> {
    weights.add_scalar(LOG_MASK_FLOOR.exp())?.log()
}
