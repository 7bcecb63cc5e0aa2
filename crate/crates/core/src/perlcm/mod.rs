//! The perspective-layout controlling block: mask-biased scene and object
//! cross-attention with gated residuals, then view and text cross-attention.

use rand::Rng;

use crate::conditioning::BundleVars;
use crate::error::{Error, Result};
use crate::numerics::layers::{init_linear, init_linear_zero, linear};
use crate::numerics::{Graph, ParameterStore, Tensor, Var};

/// Logit offset that removes padded box slots from the softmax.
pub const PADDING_BIAS: f64 = -1e4;

/// Shapes and constants of one block. Parameters live in a [`ParameterStore`]
/// under `prefix`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerlCmBlock {
    pub prefix: String,
    /// Feature width of the denoiser at this resolution.
    pub width: usize,
    /// Width of the condition tokens.
    pub cond_dim: usize,
    pub attn_dim: usize,
    pub lambda_scene: f64,
    pub lambda_object: f64,
    /// Cross-camera attention is skipped when `false`.
    pub view_attention: bool,
}

impl PerlCmBlock {
    /// Gates start at zero and the view/text output maps at the zero map, so
    /// a fresh block is the identity.
    pub fn init(&self, store: &mut ParameterStore, rng: &mut impl Rng) -> Result<()> {
        let (w, c, d, p) = (self.width, self.cond_dim, self.attn_dim, &self.prefix);
        for kind in ["scene", "object"] {
            init_linear(store, &format!("{p}.{kind}.q"), w, d, rng)?;
            init_linear(store, &format!("{p}.{kind}.k"), c, d, rng)?;
            init_linear(store, &format!("{p}.{kind}.v"), c, w, rng)?;
            init_linear(store, &format!("{p}.{kind}.o"), w, w, rng)?;
            store.insert_zeros(&format!("{p}.{kind}.gamma"), &[1])?;
        }
        if self.view_attention {
            init_linear(store, &format!("{p}.view.q"), w, d, rng)?;
            init_linear(store, &format!("{p}.view.k"), w, d, rng)?;
            init_linear(store, &format!("{p}.view.v"), w, w, rng)?;
            init_linear_zero(store, &format!("{p}.view.o"), w, w)?;
        }
        init_linear(store, &format!("{p}.text.q"), w, d, rng)?;
        init_linear(store, &format!("{p}.text.k"), c, d, rng)?;
        init_linear(store, &format!("{p}.text.v"), c, w, rng)?;
        init_linear_zero(store, &format!("{p}.text.o"), w, w)
    }
}

/// `O(softmax(Q Kᵀ/√d + bias) V)` with queries from `z` and keys/values from
/// `kv`. Returns the output and the attention weights.
fn attend(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    z: Var,
    kv: Var,
    bias: Option<Tensor>,
) -> Result<(Var, Var)> {
    let q = linear(g, store, &format!("{prefix}.q"), z)?;
    let k = linear(g, store, &format!("{prefix}.k"), kv)?;
    let v = linear(g, store, &format!("{prefix}.v"), kv)?;
    let d = g.dims(q)[1];
    let s = g.matmul_t(q, false, k, true)?;
    let mut logits = g.scale(s, 1.0 / (d as f64).sqrt());
    if let Some(b) = bias {
        if b.dims() != g.dims(logits) {
            return Err(Error::Shape(format!("attention bias {:?} for logits {:?}", b.dims(), g.dims(logits))));
        }
        let b = g.constant(b);
        logits = g.add(logits, b)?;
    }
    let a = g.softmax(logits);
    let out = g.matmul(a, v)?;
    Ok((linear(g, store, &format!("{prefix}.o"), out)?, a))
}

fn gated_residual(g: &mut Graph, store: &ParameterStore, prefix: &str, out: Var, z: Var) -> Result<Var> {
    let gamma = g.param(store, &format!("{prefix}.gamma"))?;
    let gated = g.scale_by(out, gamma)?;
    g.add(gated, z)
}

fn pixel_rows(g: &Graph, z: Var) -> Result<usize> {
    match g.dims(z) {
        [hw, _] => Ok(*hw),
        d => Err(Error::Shape(format!("features must be [HW, C], got {d:?}"))),
    }
}

/// Keys `{road token, null scene token}`; `λ_s · m_s` is added to the road
/// logit only. Returns `z_s` and the weights `[HW, 2]` (column 0 is the road key).
pub fn scene_cross_attention(
    g: &mut Graph,
    store: &ParameterStore,
    block: &PerlCmBlock,
    z: Var,
    h_m: Var,
    null_scene: Var,
    road_mask: &[f64],
) -> Result<(Var, Var)> {
    let hw = pixel_rows(g, z)?;
    if road_mask.len() != hw {
        return Err(Error::Shape(format!("road mask of length {} for {hw} pixels", road_mask.len())));
    }
    let keys = g.concat0(h_m, null_scene)?;
    let bias = (block.lambda_scene != 0.0).then(|| {
        let mut b = vec![0.0; hw * 2];
        for (p, &m) in road_mask.iter().enumerate() {
            b[2 * p] = block.lambda_scene * m;
        }
        Tensor::from_parts(vec![hw, 2], b)
    });
    let prefix = format!("{}.scene", block.prefix);
    let (out, a) = attend(g, store, &prefix, z, keys, bias)?;
    Ok((gated_residual(g, store, &prefix, out, z)?, a))
}

/// Keys `{box tokens, null object token}`; `λ_b · m_b[:, i]` is added to box
/// key `i` and padded slots get [`PADDING_BIAS`]. `box_masks` is `HW x M`
/// row-major. Returns `z_b` and the weights `[HW, M + 1]` (last column is the null key).
#[allow(clippy::too_many_arguments)]
pub fn object_cross_attention(
    g: &mut Graph,
    store: &ParameterStore,
    block: &PerlCmBlock,
    z_s: Var,
    h_b: Var,
    null_object: Var,
    box_masks: &[f64],
    valid: &[bool],
) -> Result<(Var, Var)> {
    let m = valid.len();
    if g.dims(h_b)[0] != m {
        return Err(Error::Shape(format!("{} box tokens for {m} slots", g.dims(h_b)[0])));
    }
    let hw = pixel_rows(g, z_s)?;
    if box_masks.len() != hw * m {
        return Err(Error::Shape(format!("box masks of length {} for {hw} x {m}", box_masks.len())));
    }
    let keys = g.concat0(h_b, null_object)?;
    let needs_bias = block.lambda_object != 0.0 || valid.iter().any(|v| !v);
    let bias = needs_bias.then(|| {
        let mut b = vec![0.0; hw * (m + 1)];
        for p in 0..hw {
            for i in 0..m {
                b[p * (m + 1) + i] =
                    if valid[i] { block.lambda_object * box_masks[p * m + i] } else { PADDING_BIAS };
            }
        }
        Tensor::from_parts(vec![hw, m + 1], b)
    });
    let prefix = format!("{}.object", block.prefix);
    let (out, a) = attend(g, store, &prefix, z_s, keys, bias)?;
    Ok((gated_residual(g, store, &prefix, out, z_s)?, a))
}

/// For each camera, `z + C(z, z_next, z_next) + C(z, z_prev, z_prev)` with
/// neighbours taken cyclically in rig order.
pub fn view_cross_attention(g: &mut Graph, store: &ParameterStore, block: &PerlCmBlock, zs: &[Var]) -> Result<Vec<Var>> {
    let n = zs.len();
    if n == 0 {
        return Err(Error::InvalidArgument("view attention over an empty rig".into()));
    }
    let prefix = format!("{}.view", block.prefix);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (next, prev) = (zs[(k + 1) % n], zs[(k + n - 1) % n]);
        let (a, _) = attend(g, store, &prefix, zs[k], next, None)?;
        let (b, _) = attend(g, store, &prefix, zs[k], prev, None)?;
        let sum = g.add(zs[k], a)?;
        out.push(g.add(sum, b)?);
    }
    Ok(out)
}

/// Residual cross-attention onto the single scene-description token.
pub fn text_cross_attention(g: &mut Graph, store: &ParameterStore, block: &PerlCmBlock, z: Var, h_d: Var) -> Result<Var> {
    let (out, _) = attend(g, store, &format!("{}.text", block.prefix), z, h_d, None)?;
    g.add(z, out)
}

/// Conditioning for one camera at this block's resolution.
#[derive(Clone, Copy, Debug)]
pub struct LevelCondition<'a> {
    pub tokens: BundleVars,
    pub road_mask: &'a [f64],
    /// `HW x M` row-major.
    pub box_masks: &'a [f64],
    pub valid: &'a [bool],
}

/// Attention weights recorded by one block for one camera.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    /// `[HW, 2]`, road key first.
    pub scene: Var,
    /// `[HW, M + 1]`, null key last.
    pub object: Var,
}

/// Scene attention, object attention, view attention, text attention, in that order.
pub fn perlcm_block(
    g: &mut Graph,
    store: &ParameterStore,
    block: &PerlCmBlock,
    zs: &[Var],
    conds: &[LevelCondition],
) -> Result<(Vec<Var>, Vec<AttentionVars>)> {
    if zs.len() != conds.len() {
        return Err(Error::Shape(format!("{} feature maps for {} conditions", zs.len(), conds.len())));
    }
    let mut zb = Vec::with_capacity(zs.len());
    let mut maps = Vec::with_capacity(zs.len());
    for (&z, c) in zs.iter().zip(conds) {
        let (z_s, scene) =
            scene_cross_attention(g, store, block, z, c.tokens.h_m, c.tokens.null_scene, c.road_mask)?;
        let (z_b, object) =
            object_cross_attention(g, store, block, z_s, c.tokens.h_b, c.tokens.null_object, c.box_masks, c.valid)?;
        zb.push(z_b);
        maps.push(AttentionVars { scene, object });
    }
    let zv = if block.view_attention { view_cross_attention(g, store, block, &zb)? } else { zb };
    let out = zv
        .iter()
        .zip(conds)
        .map(|(&z, c)| text_cross_attention(g, store, block, z, c.tokens.h_d))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, maps))
}

/// Per-pixel mean of the object weights over valid slots, the diagnostic
/// averaged-attention map. Returns `HW` values.
pub fn mean_object_attention(weights: &Tensor, valid: &[bool]) -> Vec<f64> {
    let cols = valid.len() + 1;
    let n = valid.iter().filter(|&&v| v).count();
    weights
        .data()
        .chunks_exact(cols)
        .map(|row| {
            if n == 0 {
                0.0
            } else {
                row.iter().zip(valid).filter(|(_, &v)| v).map(|(a, _)| a).sum::<f64>() / n as f64
            }
        })
        .collect()
}
