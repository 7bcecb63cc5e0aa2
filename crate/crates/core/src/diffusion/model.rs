use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{init_encoders, BundleVars, EncoderDims, Vocabulary, ROAD_CHANNELS};
use crate::error::{Error, Result};
use crate::geometry::PerLMaskSet;
use crate::numerics::layers::{
    conv, group_norm, init_conv, init_conv_zero, init_group_norm, init_linear, init_pointwise, linear, pointwise,
};
use crate::numerics::{Graph, ParameterStore, Tensor, Var};
use crate::perlcm::{perlcm_block, AttentionVars, LevelCondition, PerlCmBlock};

/// Number of resolutions in the U-Net (full, half, quarter).
pub const LEVELS: usize = 3;

/// Hyperparameters of the denoiser and its condition encoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub height: usize,
    pub width: usize,
    /// Width of the condition tokens.
    pub channels: usize,
    /// Feature widths at full, half and quarter resolution.
    pub widths: [usize; LEVELS],
    /// Channels of the road-map encoder convolutions.
    pub road_channels: [usize; 3],
    pub max_boxes: usize,
    pub lambda_scene: f64,
    pub lambda_object: f64,
    /// Upper bound on GroupNorm groups; the largest divisor of the width not above it is used.
    pub groups: usize,
    pub time_dim: usize,
    /// Cross-camera attention runs only at resolutions with at most this many pixels.
    pub view_max_pixels: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 48,
            channels: 64,
            widths: [16, 32, 64],
            road_channels: ROAD_CHANNELS,
            max_boxes: 16,
            lambda_scene: 5.0,
            lambda_object: 5.0,
            groups: 8,
            time_dim: 64,
            view_max_pixels: 384,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.height == 0 || self.width == 0 || self.height % 4 != 0 || self.width % 4 != 0 {
            return bad(format!("image size {}x{} must be positive multiples of 4", self.height, self.width));
        }
        if self.channels == 0 || self.widths.contains(&0) || self.road_channels.contains(&0) || self.max_boxes == 0 || self.groups == 0 {
            return bad("channels, widths, max_boxes and groups must be positive".into());
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return bad(format!("time_dim {} must be even and at least 2", self.time_dim));
        }
        if !(self.lambda_scene.is_finite() && self.lambda_scene >= 0.0)
            || !(self.lambda_object.is_finite() && self.lambda_object >= 0.0)
        {
            return bad("mask strengths must be finite and non-negative".into());
        }
        Ok(())
    }

    fn groups_for(&self, c: usize) -> usize {
        (1..=self.groups.min(c)).rev().find(|g| c % g == 0).unwrap_or(1)
    }

    pub fn encoder_dims(&self) -> EncoderDims {
        EncoderDims { channels: self.channels, max_boxes: self.max_boxes, road_channels: self.road_channels }
    }
}

/// Masks of one camera at every U-Net resolution, flattened for the blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPyramid {
    /// `HW` road columns, full resolution first.
    pub road: Vec<Vec<f64>>,
    /// `HW x M` box matrices.
    pub boxes: Vec<Vec<f64>>,
    pub valid: Vec<bool>,
}

impl MaskPyramid {
    pub fn build(masks: &PerLMaskSet) -> Result<Self> {
        let mut road = Vec::with_capacity(LEVELS);
        let mut boxes = Vec::with_capacity(LEVELS);
        for level in 0..LEVELS {
            let m = masks.downsample(1 << level)?;
            road.push(m.road_column());
            boxes.push(m.box_matrix());
        }
        Ok(Self { road, boxes, valid: masks.valid.clone() })
    }

    fn level(&self, tokens: BundleVars, level: usize) -> LevelCondition<'_> {
        LevelCondition { tokens, road_mask: &self.road[level], box_masks: &self.boxes[level], valid: &self.valid }
    }
}

/// Noise prediction per camera plus the attention weights of the last
/// full-resolution block.
#[derive(Clone, Debug)]
pub struct DenoiserOutput {
    /// `[3, H, W]` per camera.
    pub eps: Vec<Var>,
    pub attention: Vec<AttentionVars>,
}

const BLOCK_NAMES: [(&str, usize); 5] = [("down0", 0), ("down1", 1), ("mid", 2), ("up1", 1), ("up0", 0)];

/// Small U-Net with one controlling block after each stage.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    pub vocab: Vocabulary,
    blocks: Vec<PerlCmBlock>,
}

impl DenoiserModel {
    pub fn new(config: DenoiserConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let blocks = BLOCK_NAMES
            .iter()
            .map(|&(name, level)| {
                let width = config.widths[level];
                let pixels = (config.height >> level) * (config.width >> level);
                PerlCmBlock {
                    prefix: format!("unet.{name}.perl"),
                    width,
                    cond_dim: config.channels,
                    attn_dim: width,
                    lambda_scene: config.lambda_scene,
                    lambda_object: config.lambda_object,
                    view_attention: pixels <= config.view_max_pixels,
                }
            })
            .collect();
        Ok(Self { config, vocab, blocks })
    }

    pub fn blocks(&self) -> &[PerlCmBlock] {
        &self.blocks
    }

    /// Fresh parameters for the encoders and the U-Net. The output conv is
    /// zero, so an untrained model predicts zero noise.
    pub fn init(&self, seed: u64) -> Result<ParameterStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let cfg = &self.config;
        let [c0, c1, c2] = cfg.widths;
        init_encoders(&mut store, &self.vocab, cfg.encoder_dims(), &mut rng)?;
        init_linear(&mut store, "unet.time.fc1", cfg.time_dim, cfg.time_dim, &mut rng)?;
        init_linear(&mut store, "unet.time.fc2", cfg.time_dim, cfg.time_dim, &mut rng)?;
        init_conv(&mut store, "unet.conv_in", 3, c0, &mut rng)?;
        let res = [
            ("unet.down0.res", c0, c0),
            ("unet.down1.res", c1, c1),
            ("unet.mid.res0", c2, c2),
            ("unet.mid.res1", c2, c2),
            ("unet.up1.res", 2 * c1, c1),
            ("unet.up0.res", 2 * c0, c0),
        ];
        for (prefix, cin, cout) in res {
            self.init_res(&mut store, prefix, cin, cout, &mut rng)?;
        }
        init_conv(&mut store, "unet.down1.conv", c0, c1, &mut rng)?;
        init_conv(&mut store, "unet.mid.conv", c1, c2, &mut rng)?;
        init_conv(&mut store, "unet.up1.conv", c2, c1, &mut rng)?;
        init_conv(&mut store, "unet.up0.conv", c1, c0, &mut rng)?;
        init_group_norm(&mut store, "unet.out.norm", c0)?;
        init_conv_zero(&mut store, "unet.out.conv", c0, 3)?;
        for b in &self.blocks {
            b.init(&mut store, &mut rng)?;
        }
        Ok(store)
    }

    fn init_res(&self, store: &mut ParameterStore, p: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        init_group_norm(store, &format!("{p}.norm1"), cin)?;
        init_conv(store, &format!("{p}.conv1"), cin, cout, rng)?;
        init_linear(store, &format!("{p}.time"), self.config.time_dim, cout, rng)?;
        init_group_norm(store, &format!("{p}.norm2"), cout)?;
        init_conv_zero(store, &format!("{p}.conv2"), cout, cout)?;
        if cin != cout {
            init_pointwise(store, &format!("{p}.skip"), cin, cout, rng)?;
        }
        Ok(())
    }

    fn res(&self, g: &mut Graph, store: &ParameterStore, p: &str, x: Var, temb: Var) -> Result<Var> {
        let cin = g.dims(x)[0];
        let h = group_norm(g, store, &format!("{p}.norm1"), x, self.config.groups_for(cin))?;
        let h = g.silu(h);
        let h = conv(g, store, &format!("{p}.conv1"), h, 1)?;
        let cout = g.dims(h)[0];
        let t = linear(g, store, &format!("{p}.time"), temb)?;
        let h = g.add_channel_bias(h, t)?;
        let h = group_norm(g, store, &format!("{p}.norm2"), h, self.config.groups_for(cout))?;
        let h = g.silu(h);
        let h = conv(g, store, &format!("{p}.conv2"), h, 1)?;
        let skip = if cin != cout { pointwise(g, store, &format!("{p}.skip"), x)? } else { x };
        g.add(skip, h)
    }

    /// Sinusoidal features of `t` followed by a two-layer MLP; returns the
    /// SiLU-activated embedding `[1, time_dim]` consumed by every ResBlock.
    fn time_embedding(&self, g: &mut Graph, store: &ParameterStore, t: usize) -> Result<Var> {
        let d = self.config.time_dim;
        let half = d / 2;
        let mut feats = vec![0.0; d];
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            feats[i] = (t as f64 * freq).sin();
            feats[half + i] = (t as f64 * freq).cos();
        }
        let x = g.constant(Tensor::matrix(1, d, feats)?);
        let h = linear(g, store, "unet.time.fc1", x)?;
        let h = g.silu(h);
        let h = linear(g, store, "unet.time.fc2", h)?;
        Ok(g.silu(h))
    }

    fn controlled(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        block: usize,
        xs: &[Var],
        tokens: &[BundleVars],
        masks: &[&MaskPyramid],
    ) -> Result<(Vec<Var>, Vec<AttentionVars>)> {
        let level = BLOCK_NAMES[block].1;
        let mut rows = Vec::with_capacity(xs.len());
        let mut shape = Vec::new();
        for &x in xs {
            shape = g.dims(x).to_vec();
            let flat = g.reshape(x, &[shape[0], shape[1] * shape[2]])?;
            rows.push(g.transpose(flat)?);
        }
        let conds: Vec<LevelCondition> = tokens.iter().zip(masks).map(|(&t, m)| m.level(t, level)).collect();
        let (zs, attn) = perlcm_block(g, store, &self.blocks[block], &rows, &conds)?;
        let mut out = Vec::with_capacity(zs.len());
        for z in zs {
            let t = g.transpose(z)?;
            out.push(g.reshape(t, &shape)?);
        }
        Ok((out, attn))
    }

    /// Predicts the noise in `xs` (one `[3, H, W]` image per camera of a rig) at timestep `t`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        xs: &[Var],
        t: usize,
        tokens: &[BundleVars],
        masks: &[&MaskPyramid],
    ) -> Result<DenoiserOutput> {
        let cfg = &self.config;
        if xs.is_empty() || xs.len() != tokens.len() || xs.len() != masks.len() {
            return Err(Error::Shape(format!(
                "{} images, {} token sets, {} mask sets",
                xs.len(),
                tokens.len(),
                masks.len()
            )));
        }
        for &x in xs {
            if g.dims(x) != [3, cfg.height, cfg.width] {
                return Err(Error::Shape(format!("image {:?}, expected [3, {}, {}]", g.dims(x), cfg.height, cfg.width)));
            }
        }
        for m in masks {
            if m.valid.len() != cfg.max_boxes || m.road[0].len() != cfg.height * cfg.width {
                return Err(Error::Shape("mask pyramid does not match the model".into()));
            }
        }
        let temb = self.time_embedding(g, store, t)?;
        let each = |g: &mut Graph, xs: &[Var], f: &dyn Fn(&mut Graph, Var) -> Result<Var>| -> Result<Vec<Var>> {
            xs.iter().map(|&x| f(g, x)).collect()
        };

        let h0 = each(g, xs, &|g, x| {
            let h = conv(g, store, "unet.conv_in", x, 1)?;
            self.res(g, store, "unet.down0.res", h, temb)
        })?;
        let (skip0, _) = self.controlled(g, store, 0, &h0, tokens, masks)?;

        let h1 = each(g, &skip0, &|g, x| {
            let h = conv(g, store, "unet.down1.conv", x, 2)?;
            self.res(g, store, "unet.down1.res", h, temb)
        })?;
        let (skip1, _) = self.controlled(g, store, 1, &h1, tokens, masks)?;

        let h2 = each(g, &skip1, &|g, x| {
            let h = conv(g, store, "unet.mid.conv", x, 2)?;
            self.res(g, store, "unet.mid.res0", h, temb)
        })?;
        let (h2, _) = self.controlled(g, store, 2, &h2, tokens, masks)?;
        let h2 = each(g, &h2, &|g, x| self.res(g, store, "unet.mid.res1", x, temb))?;

        let mut u1 = Vec::with_capacity(xs.len());
        for (&x, &skip) in h2.iter().zip(&skip1) {
            let up = g.upsample2x(x)?;
            let up = conv(g, store, "unet.up1.conv", up, 1)?;
            let cat = g.concat0(up, skip)?;
            u1.push(self.res(g, store, "unet.up1.res", cat, temb)?);
        }
        let (u1, _) = self.controlled(g, store, 3, &u1, tokens, masks)?;

        let mut u0 = Vec::with_capacity(xs.len());
        for (&x, &skip) in u1.iter().zip(&skip0) {
            let up = g.upsample2x(x)?;
            let up = conv(g, store, "unet.up0.conv", up, 1)?;
            let cat = g.concat0(up, skip)?;
            u0.push(self.res(g, store, "unet.up0.res", cat, temb)?);
        }
        let (u0, attention) = self.controlled(g, store, 4, &u0, tokens, masks)?;

        let eps = each(g, &u0, &|g, x| {
            let h = group_norm(g, store, "unet.out.norm", x, cfg.groups_for(cfg.widths[0]))?;
            let h = g.silu(h);
            conv(g, store, "unet.out.conv", h, 1)
        })?;
        Ok(DenoiserOutput { eps, attention })
    }
}
