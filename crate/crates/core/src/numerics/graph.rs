//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in evaluation order. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and returns
//! one gradient buffer per node.

use std::collections::HashMap;

use super::kernels::{self, conv_out_size};
use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy { x: Var, s: Var },
    AddRowBias { x: Var, b: Var },
    AddChannelBias { x: Var, b: Var },
    Softmax(Var),
    Conv2d { x: Var, k: Var, stride: usize, cols: Option<Vec<f64>> },
    Silu(Var),
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Upsample2x(Var),
    Concat0(Var, Var),
    ConcatCols(Var, Var),
    Transpose(Var),
    Reshape(Var),
    MeanLast(Var),
    Mse { pred: Var, target: Tensor },
    ReplaceRows { x: Var, fill: Var, keep: Vec<bool> },
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 3] {
        match *self {
            Op::Leaf | Op::Param => [None; 3],
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => [Some(a), Some(b), None],
            Op::Concat0(a, b) | Op::ConcatCols(a, b) => [Some(a), Some(b), None],
            Op::ScaleBy { x, s: b } | Op::AddRowBias { x, b } | Op::AddChannelBias { x, b } => [Some(x), Some(b), None],
            Op::Conv2d { x, k, .. } => [Some(x), Some(k), None],
            Op::ReplaceRows { x, fill, .. } => [Some(x), Some(fill), None],
            Op::GroupNorm { x, gamma, beta, .. } => [Some(x), Some(gamma), Some(beta)],
            Op::Scale(x, _) | Op::Softmax(x) | Op::Silu(x) | Op::Upsample2x(x) => [Some(x), None, None],
            Op::Transpose(x) | Op::Reshape(x) | Op::MeanLast(x) => [Some(x), None, None],
            Op::Mse { pred, .. } => [Some(pred), None, None],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter feeds this node; constants get no gradient.
    needs_grad: bool,
}

/// Per-node gradient buffers produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    keep_caches: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), keep_caches: true }
    }

    /// A graph that will never be differentiated; large backward caches are skipped.
    pub fn inference() -> Self {
        Self { keep_caches: false, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {name}");
        let _ = name;
        let needs_grad = matches!(op, Op::Param) || op.inputs().iter().flatten().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, "constant")
    }

    /// Looks up a named parameter, inserting it as a leaf the first time.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?.clone();
        let v = self.push(t, Op::Param, "param");
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn param_vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// `op(a) * op(b)` for rank-2 operands.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ad, bd) = (self.dims(a), self.dims(b));
        if ad.len() != 2 || bd.len() != 2 {
            return shape_err(format!("matmul needs rank-2 operands, got {ad:?} and {bd:?}"));
        }
        let (m, ka) = if ta { (ad[1], ad[0]) } else { (ad[0], ad[1]) };
        let (kb, n) = if tb { (bd[1], bd[0]) } else { (bd[0], bd[1]) };
        if ka != kb {
            return shape_err(format!(
                "matmul inner dims disagree: {ad:?}{} x {bd:?}{}",
                if ta { "^T" } else { "" },
                if tb { "^T" } else { "" }
            ));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, ka, n, self.value(a).data(), ta, self.value(b).data(), tb, &mut out, 0.0);
        let t = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(t, Op::MatMul { a, b, ta, tb, m, k: ka, n }, "matmul"))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return shape_err(format!("{op}: {:?} vs {:?}", self.dims(a), self.dims(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_parts(x.dims().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push(t, Op::Add(a, b), "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push(t, Op::Sub(a, b), "sub"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push(t, Op::Mul(a, b), "mul"))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a).map(|v| v * factor);
        self.push(t, Op::Scale(a, factor), "scale")
    }

    /// Multiplies `x` by the single element held in `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return shape_err(format!("scale_by needs a scalar, got {:?}", self.dims(s)));
        }
        let f = self.value(s).data()[0];
        let t = self.value(x).map(|v| v * f);
        Ok(self.push(t, Op::ScaleBy { x, s }, "scale_by"))
    }

    /// Adds `b[c]` to every row of `x[.., c]`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, cols) = self.value(x).as_matrix_dims();
        if self.value(b).numel() != cols {
            return shape_err(format!("row bias {:?} for {:?}", self.dims(b), self.dims(x)));
        }
        let bias = self.value(b).data().to_vec();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_exact_mut(cols) {
            row.iter_mut().zip(&bias).for_each(|(v, b)| *v += b);
        }
        Ok(self.push(t, Op::AddRowBias { x, b }, "add_row_bias"))
    }

    /// Adds `b[c]` to every element of channel `c` of `x[c, ...]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.dims(x)[0];
        if self.value(b).numel() != c {
            return shape_err(format!("channel bias {:?} for {:?}", self.dims(b), self.dims(x)));
        }
        let per = self.value(x).numel() / c;
        let bias = self.value(b).data().to_vec();
        let mut t = self.value(x).clone();
        for (chunk, b) in t.data_mut().chunks_exact_mut(per).zip(&bias) {
            chunk.iter_mut().for_each(|v| *v += b);
        }
        Ok(self.push(t, Op::AddChannelBias { x, b }, "add_channel_bias"))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let (_, cols) = self.value(x).as_matrix_dims();
        let src = self.value(x);
        let mut out = vec![0.0; src.numel()];
        kernels::softmax_rows(src.data(), cols, &mut out);
        let t = Tensor::from_parts(src.dims().to_vec(), out);
        self.push(t, Op::Softmax(x), "softmax")
    }

    /// 3x3 cross-correlation with zero padding 1: `x[cin, h, w]`, `k[cout, cin, 3, 3]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let (xd, kd) = (self.dims(x).to_vec(), self.dims(k).to_vec());
        if xd.len() != 3 || kd.len() != 4 || kd[2] != 3 || kd[3] != 3 || kd[1] != xd[0] {
            return shape_err(format!("conv2d input {xd:?} with kernel {kd:?}"));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidArgument(format!("conv2d stride {stride}")));
        }
        let (cin, h, w, cout) = (xd[0], xd[1], xd[2], kd[0]);
        let (oh, ow) = (conv_out_size(h, stride), conv_out_size(w, stride));
        let cols = kernels::im2col(self.value(x).data(), cin, h, w, stride);
        let mut out = vec![0.0; cout * oh * ow];
        kernels::gemm(cout, cin * 9, oh * ow, self.value(k).data(), false, &cols, false, &mut out, 0.0);
        let t = Tensor::from_parts(vec![cout, oh, ow], out);
        let cols = self.keep_caches.then_some(cols);
        Ok(self.push(t, Op::Conv2d { x, k, stride, cols }, "conv2d"))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v / (1.0 + (-v).exp()));
        self.push(t, Op::Silu(x), "silu")
    }

    /// Group normalization over `x[c, ...]` with per-channel affine `gamma`, `beta`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let c = self.dims(x)[0];
        if groups == 0 || c % groups != 0 {
            return shape_err(format!("group_norm: {c} channels in {groups} groups"));
        }
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return shape_err(format!("group_norm affine params must have {c} elements"));
        }
        let per_channel = self.value(x).numel() / c;
        let group_len = per_channel * (c / groups);
        let src = self.value(x).data();
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; groups];
        for g in 0..groups {
            let range = g * group_len..(g + 1) * group_len;
            let slice = &src[range.clone()];
            let mean = slice.iter().sum::<f64>() / group_len as f64;
            let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / group_len as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std[g] = inv;
            for (dst, v) in xhat[range].iter_mut().zip(slice) {
                *dst = (v - mean) * inv;
            }
        }
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for (ch, chunk) in out.chunks_exact_mut(per_channel).enumerate() {
            chunk.iter_mut().for_each(|v| *v = *v * gm[ch] + bt[ch]);
        }
        let t = Tensor::from_parts(self.dims(x).to_vec(), out);
        Ok(self.push(t, Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std }, "group_norm"))
    }

    /// Nearest-neighbour 2x upsampling of `x[c, h, w]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let d = self.dims(x).to_vec();
        if d.len() != 3 {
            return shape_err(format!("upsample2x needs [c, h, w], got {d:?}"));
        }
        let (c, h, w) = (d[0], d[1], d[2]);
        let src = self.value(x).data();
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ch * 2 * h + y) * 2 * w + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let t = Tensor::from_parts(vec![c, 2 * h, 2 * w], out);
        Ok(self.push(t, Op::Upsample2x(x), "upsample2x"))
    }

    /// Concatenation along the leading dimension.
    pub fn concat0(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ad, bd) = (self.dims(a), self.dims(b));
        if ad.len() != bd.len() || ad[1..] != bd[1..] {
            return shape_err(format!("concat0: {ad:?} vs {bd:?}"));
        }
        let mut dims = ad.to_vec();
        dims[0] += bd[0];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        Ok(self.push(Tensor::from_parts(dims, data), Op::Concat0(a, b), "concat0"))
    }

    /// Concatenation of two matrices along the column axis.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ad, bd) = (self.dims(a).to_vec(), self.dims(b).to_vec());
        if ad.len() != 2 || bd.len() != 2 || ad[0] != bd[0] {
            return shape_err(format!("concat_cols: {ad:?} vs {bd:?}"));
        }
        let (r, ca, cb) = (ad[0], ad[1], bd[1]);
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&x[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&y[i * cb..(i + 1) * cb]);
        }
        let t = Tensor::from_parts(vec![r, ca + cb], data);
        Ok(self.push(t, Op::ConcatCols(a, b), "concat_cols"))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose2()?;
        Ok(self.push(t, Op::Transpose(x), "transpose"))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(dims)?;
        Ok(self.push(t, Op::Reshape(x), "reshape"))
    }

    /// Mean over the last dimension; result has dims `[1, rows]`.
    pub fn mean_last(&mut self, x: Var) -> Var {
        let (rows, cols) = self.value(x).as_matrix_dims();
        let data = self
            .value(x)
            .data()
            .chunks_exact(cols)
            .map(|c| c.iter().sum::<f64>() / cols as f64)
            .collect();
        self.push(Tensor::from_parts(vec![1, rows], data), Op::MeanLast(x), "mean_last")
    }

    /// Mean squared error against a constant target, as a `[1]` tensor.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        if self.dims(pred) != target.dims() {
            return shape_err(format!("mse: {:?} vs {:?}", self.dims(pred), target.dims()));
        }
        let p = self.value(pred).data();
        let n = p.len() as f64;
        let loss = p.iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }, "mse"))
    }

    /// Row `i` of the result is `x[i]` when `keep[i]`, otherwise the single row of `fill`.
    pub fn replace_rows(&mut self, x: Var, fill: Var, keep: &[bool]) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        if xd.len() != 2 || xd[0] != keep.len() || self.value(fill).numel() != xd[1] {
            return shape_err(format!(
                "replace_rows: {xd:?} with fill {:?} and {} flags",
                self.dims(fill),
                keep.len()
            ));
        }
        let cols = xd[1];
        let mut t = self.value(x).clone();
        let f = self.value(fill).data().to_vec();
        for (row, &k) in t.data_mut().chunks_exact_mut(cols).zip(keep) {
            if !k {
                row.copy_from_slice(&f);
            }
        }
        Ok(self.push(t, Op::ReplaceRows { x, fill, keep: keep.to_vec() }, "replace_rows"))
    }

    /// Reverse sweep from a single-element `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.dims(output)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let acc = |grads: &mut [Option<Vec<f64>>], v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul { a, b, ta, tb, m, k, n } => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                // dA: m x k (or k x m when ta)
                acc(grads, a, &|buf| {
                    if ta {
                        // dA^T = op(B) * dC^T  => dA (k x m) = op(B) (k x n) * dC^T (n x m)
                        kernels::gemm(k, n, m, bv, tb, g, true, buf, 1.0);
                    } else {
                        // dA (m x k) = dC (m x n) * op(B)^T (n x k)
                        kernels::gemm(m, n, k, g, false, bv, !tb, buf, 1.0);
                    }
                });
                acc(grads, b, &|buf| {
                    if tb {
                        // dB (n x k) = dC^T (n x m) * op(A) (m x k)
                        kernels::gemm(n, m, k, g, true, av, ta, buf, 1.0);
                    } else {
                        // dB (k x n) = op(A)^T (k x m) * dC (m x n)
                        kernels::gemm(k, m, n, av, !ta, g, false, buf, 1.0);
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(grads, a, &|buf| add_into(buf, g));
                acc(grads, b, &|buf| add_into(buf, g));
            }
            &Op::Sub(a, b) => {
                acc(grads, a, &|buf| add_into(buf, g));
                acc(grads, b, &|buf| buf.iter_mut().zip(g).for_each(|(d, s)| *d -= s));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                acc(grads, a, &|buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * bv[i];
                    }
                });
                acc(grads, b, &|buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * av[i];
                    }
                });
            }
            &Op::Scale(a, f) => acc(grads, a, &|buf| buf.iter_mut().zip(g).for_each(|(d, s)| *d += f * s)),
            &Op::ScaleBy { x, s } => {
                let f = self.value(s).data()[0];
                let xv = self.value(x).data();
                acc(grads, x, &|buf| buf.iter_mut().zip(g).for_each(|(d, v)| *d += f * v));
                let ds: f64 = xv.iter().zip(g).map(|(a, b)| a * b).sum();
                acc(grads, s, &|buf| buf[0] += ds);
            }
            &Op::AddRowBias { x, b } => {
                acc(grads, x, &|buf| add_into(buf, g));
                let cols = self.value(b).numel();
                acc(grads, b, &|buf| {
                    for row in g.chunks_exact(cols) {
                        add_into(buf, row);
                    }
                });
            }
            &Op::AddChannelBias { x, b } => {
                acc(grads, x, &|buf| add_into(buf, g));
                let c = self.value(b).numel();
                let per = g.len() / c;
                acc(grads, b, &|buf| {
                    for (d, chunk) in buf.iter_mut().zip(g.chunks_exact(per)) {
                        *d += chunk.iter().sum::<f64>();
                    }
                });
            }
            &Op::Softmax(x) => {
                let y = node.value.data();
                let (_, cols) = node.value.as_matrix_dims();
                acc(grads, x, &|buf| {
                    for ((d, yr), gr) in
                        buf.chunks_exact_mut(cols).zip(y.chunks_exact(cols)).zip(g.chunks_exact(cols))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            d[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Conv2d { x, k, stride, cols } => {
                let (x, k, stride) = (*x, *k, *stride);
                let xd = self.dims(x);
                let (cin, h, w) = (xd[0], xd[1], xd[2]);
                let cout = self.dims(k)[0];
                let npix = node.value.numel() / cout;
                let owned;
                let cols = match cols {
                    Some(c) => c,
                    None => {
                        owned = kernels::im2col(self.value(x).data(), cin, h, w, stride);
                        &owned
                    }
                };
                acc(grads, k, &|buf| kernels::gemm(cout, npix, cin * 9, g, false, cols, true, buf, 1.0));
                if self.nodes[x.0].needs_grad {
                    let kv = self.value(k).data();
                    let mut dcols = vec![0.0; cin * 9 * npix];
                    kernels::gemm(cin * 9, cout, npix, kv, true, g, false, &mut dcols, 0.0);
                    acc(grads, x, &|buf| kernels::col2im_add(&dcols, cin, h, w, stride, buf));
                }
            }
            &Op::Silu(x) => {
                let xv = self.value(x).data();
                acc(grads, x, &|buf| {
                    for i in 0..buf.len() {
                        let s = 1.0 / (1.0 + (-xv[i]).exp());
                        buf[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
                    }
                });
            }
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std } => {
                let (x, gamma, beta, groups) = (*x, *gamma, *beta, *groups);
                let c = self.dims(x)[0];
                let per_channel = xhat.len() / c;
                let group_len = per_channel * (c / groups);
                let gm = self.value(gamma).data();
                acc(grads, gamma, &|buf| {
                    for ch in 0..c {
                        let r = ch * per_channel..(ch + 1) * per_channel;
                        buf[ch] += g[r.clone()].iter().zip(&xhat[r]).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
                acc(grads, beta, &|buf| {
                    for ch in 0..c {
                        buf[ch] += g[ch * per_channel..(ch + 1) * per_channel].iter().sum::<f64>();
                    }
                });
                let mut dxhat: Vec<f64> = g.to_vec();
                for (ch, chunk) in dxhat.chunks_exact_mut(per_channel).enumerate() {
                    chunk.iter_mut().for_each(|v| *v *= gm[ch]);
                }
                acc(grads, x, &|buf| {
                    let n = group_len as f64;
                    for gi in 0..groups {
                        let r = gi * group_len..(gi + 1) * group_len;
                        let dh = &dxhat[r.clone()];
                        let xh = &xhat[r.clone()];
                        let sum_d: f64 = dh.iter().sum();
                        let sum_dx: f64 = dh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let scale = inv_std[gi] / n;
                        for ((d, &dv), &xv) in buf[r].iter_mut().zip(dh).zip(xh) {
                            *d += scale * (n * dv - sum_d - xv * sum_dx);
                        }
                    }
                });
            }
            &Op::Upsample2x(x) => {
                let d = self.dims(x);
                let (c, h, w) = (d[0], d[1], d[2]);
                acc(grads, x, &|buf| {
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                buf[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
                            }
                        }
                    }
                });
            }
            &Op::Concat0(a, b) => {
                let na = self.value(a).numel();
                acc(grads, a, &|buf| add_into(buf, &g[..na]));
                acc(grads, b, &|buf| add_into(buf, &g[na..]));
            }
            &Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.dims(a)[1], self.dims(b)[1]);
                acc(grads, a, &|buf| {
                    for (d, row) in buf.chunks_exact_mut(ca).zip(g.chunks_exact(ca + cb)) {
                        add_into(d, &row[..ca]);
                    }
                });
                acc(grads, b, &|buf| {
                    for (d, row) in buf.chunks_exact_mut(cb).zip(g.chunks_exact(ca + cb)) {
                        add_into(d, &row[ca..]);
                    }
                });
            }
            &Op::Transpose(x) => {
                let (r, c) = (self.dims(x)[0], self.dims(x)[1]);
                acc(grads, x, &|buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            &Op::Reshape(x) => acc(grads, x, &|buf| add_into(buf, g)),
            &Op::MeanLast(x) => {
                let (_, cols) = self.value(x).as_matrix_dims();
                acc(grads, x, &|buf| {
                    for (chunk, gv) in buf.chunks_exact_mut(cols).zip(g) {
                        let s = gv / cols as f64;
                        chunk.iter_mut().for_each(|d| *d += s);
                    }
                });
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let n = p.len() as f64;
                let g0 = g[0];
                acc(grads, *pred, &|buf| {
                    for ((d, a), b) in buf.iter_mut().zip(p).zip(target.data()) {
                        *d += g0 * 2.0 * (a - b) / n;
                    }
                });
            }
            Op::ReplaceRows { x, fill, keep } => {
                let cols = self.dims(*x)[1];
                acc(grads, *x, &|buf| {
                    for ((d, row), &k) in buf.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).zip(keep) {
                        if k {
                            add_into(d, row);
                        }
                    }
                });
                acc(grads, *fill, &|buf| {
                    for (row, &k) in g.chunks_exact(cols).zip(keep) {
                        if !k {
                            add_into(buf, row);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
