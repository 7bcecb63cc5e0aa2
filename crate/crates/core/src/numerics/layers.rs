//! Parameterized building blocks shared by the encoders and the denoiser.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::error::Result;

/// `x W + b` for `x[n, inp]`; parameters `{prefix}.weight[inp, out]`, `{prefix}.bias[out]`.
pub fn linear(g: &mut Graph, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    let y = g.matmul(x, w)?;
    g.add_row_bias(y, b)
}

/// 3x3 convolution plus per-channel bias.
pub fn conv(g: &mut Graph, store: &ParameterStore, prefix: &str, x: Var, stride: usize) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    let y = g.conv2d(x, w, stride)?;
    g.add_channel_bias(y, b)
}

/// Per-pixel channel mixing of `x[cin, h, w]` with `{prefix}.weight[cout, cin]`.
pub fn pointwise(g: &mut Graph, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
    let d = g.dims(x).to_vec();
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let cout = g.dims(w)[0];
    let flat = g.reshape(x, &[d[0], d[1] * d[2]])?;
    let y = g.matmul(w, flat)?;
    let y = g.reshape(y, &[cout, d[1], d[2]])?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    g.add_channel_bias(y, b)
}

pub fn group_norm(g: &mut Graph, store: &ParameterStore, prefix: &str, x: Var, groups: usize) -> Result<Var> {
    let gamma = g.param(store, &format!("{prefix}.gamma"))?;
    let beta = g.param(store, &format!("{prefix}.beta"))?;
    g.group_norm(x, gamma, beta, groups)
}

pub fn init_linear(store: &mut ParameterStore, prefix: &str, inp: usize, out: usize, rng: &mut impl Rng) -> Result<()> {
    store.insert_uniform(&format!("{prefix}.weight"), &[inp, out], inp, rng)?;
    store.insert_uniform(&format!("{prefix}.bias"), &[out], inp, rng)
}

/// Linear layer that starts as the zero map.
pub fn init_linear_zero(store: &mut ParameterStore, prefix: &str, inp: usize, out: usize) -> Result<()> {
    store.insert_zeros(&format!("{prefix}.weight"), &[inp, out])?;
    store.insert_zeros(&format!("{prefix}.bias"), &[out])
}

pub fn init_conv(store: &mut ParameterStore, prefix: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<()> {
    store.insert_uniform(&format!("{prefix}.weight"), &[cout, cin, 3, 3], cin * 9, rng)?;
    store.insert_uniform(&format!("{prefix}.bias"), &[cout], cin * 9, rng)
}

pub fn init_conv_zero(store: &mut ParameterStore, prefix: &str, cin: usize, cout: usize) -> Result<()> {
    store.insert_zeros(&format!("{prefix}.weight"), &[cout, cin, 3, 3])?;
    store.insert_zeros(&format!("{prefix}.bias"), &[cout])
}

pub fn init_pointwise(store: &mut ParameterStore, prefix: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<()> {
    store.insert_uniform(&format!("{prefix}.weight"), &[cout, cin], cin, rng)?;
    store.insert_uniform(&format!("{prefix}.bias"), &[cout], cin, rng)
}

pub fn init_group_norm(store: &mut ParameterStore, prefix: &str, channels: usize) -> Result<()> {
    store.insert_full(&format!("{prefix}.gamma"), &[channels], 1.0)?;
    store.insert_zeros(&format!("{prefix}.beta"), &[channels])
}
