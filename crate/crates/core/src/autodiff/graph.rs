//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients into every tracked leaf. Gradient buffers are
//! additive across repeated `backward` calls.

use std::f64::consts::{LN_2, PI};

use super::conv::{gemm, ConvGeometry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Deconv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    /// Rounding forward, identity backward.
    RoundSte {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    AddConst {
        input: Var,
    },
    MulConst {
        input: Var,
        factor: Vec<f64>,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    SumSquares {
        input: Var,
    },
    LogisticBits {
        input: Var,
        loc: Var,
        log_scale: Var,
        floor: f64,
    },
    ColorMix {
        input: Var,
        matrix: [[f64; 3]; 3],
    },
    BlockDct {
        input: Var,
        inverse: bool,
    },
    SoftRound {
        input: Var,
        sharpness: f64,
    },
    Clamp {
        input: Var,
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability mass of the unit interval centred on `v` under a logistic
/// density with location `loc` and scale `scale`, plus the partial
/// derivatives of that mass with respect to `v` and `log(scale)`.
pub(crate) fn logistic_bin_mass(v: f64, loc: f64, scale: f64) -> (f64, f64, f64) {
    let upper = (v + 0.5 - loc) / scale;
    let lower = (v - 0.5 - loc) / scale;
    // Evaluate on the side of the density where the CDF difference does not cancel.
    let mass = if lower > 0.0 {
        sigmoid(-lower) - sigmoid(-upper)
    } else {
        sigmoid(upper) - sigmoid(lower)
    };
    let du = sigmoid(upper) * sigmoid(-upper);
    let dl = sigmoid(lower) * sigmoid(-lower);
    let d_value = (du - dl) / scale;
    let d_log_scale = -(du * upper - dl * lower);
    (mass, d_value, d_log_scale)
}

pub(crate) const DCT_BLOCK: usize = 8;

fn dct_matrix() -> [[f64; DCT_BLOCK]; DCT_BLOCK] {
    let mut m = [[0.0; DCT_BLOCK]; DCT_BLOCK];
    let n = DCT_BLOCK as f64;
    for (u, row) in m.iter_mut().enumerate() {
        let norm = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = norm * ((2.0 * x as f64 + 1.0) * u as f64 * PI / (2.0 * n)).cos();
        }
    }
    m
}

/// Orthonormal 8x8 type-II DCT (or its inverse) applied blockwise to every
/// channel of a `[C, H, W]` buffer.
pub(crate) fn block_dct(data: &[f64], dims: &[usize], inverse: bool) -> Vec<f64> {
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    let m = dct_matrix();
    let mut out = vec![0.0; data.len()];
    let mut tmp = [[0.0; DCT_BLOCK]; DCT_BLOCK];
    for ch in 0..c {
        let base = ch * h * w;
        for by in (0..h).step_by(DCT_BLOCK) {
            for bx in (0..w).step_by(DCT_BLOCK) {
                let at = |y: usize, x: usize| base + (by + y) * w + bx + x;
                // Rows: tmp = M * block (forward) or M^T * block (inverse).
                for (u, tmp_row) in tmp.iter_mut().enumerate() {
                    for (x, t) in tmp_row.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for y in 0..DCT_BLOCK {
                            let coef = if inverse { m[y][u] } else { m[u][y] };
                            acc += coef * data[at(y, x)];
                        }
                        *t = acc;
                    }
                }
                // Columns: out = tmp * M^T (forward) or tmp * M (inverse).
                for (u, tmp_row) in tmp.iter().enumerate() {
                    for v in 0..DCT_BLOCK {
                        let mut acc = 0.0;
                        for (x, &t) in tmp_row.iter().enumerate() {
                            let coef = if inverse { m[x][v] } else { m[v][x] };
                            acc += t * coef;
                        }
                        out[at(u, v)] = acc;
                    }
                }
            }
        }
    }
    out
}

fn check_chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.dims() {
        &[c, h, w] => Ok((c, h, w)),
        d => Err(Error::shape(format!("{what} must be [C, H, W], got {d:?}"))),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Records a leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Resets the gradient buffers of every leaf to zero.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if t.len() != 1 {
            return Err(Error::shape(format!("expected a scalar, got {:?}", t.dims())));
        }
        Ok(t.data()[0])
    }

    fn push_raw(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let tracked = inputs.iter().any(|&v| self.nodes[v.0].tracked);
        Ok(self.push_raw(value, op, tracked))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        let (ci, h, w) = check_chw(x, "conv2d input")?;
        let &[co, kci, kh, kw] = k.dims() else {
            return Err(Error::shape(format!("conv2d kernel must be [C_out, C_in, k, k], got {:?}", k.dims())));
        };
        if kci != ci {
            return Err(Error::shape(format!("conv2d kernel C_in {kci} != input channels {ci}")));
        }
        if kh != kw {
            return Err(Error::shape(format!("conv2d kernel must be square, got {kh}x{kw}")));
        }
        if b.dims() != [co] {
            return Err(Error::shape(format!("conv2d bias {:?} != [C_out = {co}]", b.dims())));
        }
        let geom = ConvGeometry::new(ci, h, w, kh, stride, pad)?;
        let cols = geom.im2col(x.data());
        let p = geom.col_cols();
        let mut out = vec![0.0; co * p];
        for (row, &bv) in out.chunks_mut(p).zip(b.data()) {
            row.iter_mut().for_each(|v| *v = bv);
        }
        gemm(co, geom.col_rows(), p, k.data(), false, &cols, false, &mut out, 1.0);
        let value = Tensor::new(&[co, geom.out_height, geom.out_width], out)?;
        self.push(value, Op::Conv2d { input, kernel, bias, geom }, &[input, kernel, bias], "conv2d")
    }

    /// Transposed convolution; `kernel` is `[C_in, C_out, k, k]`. Output extent
    /// is `(H - 1) * stride - 2 * pad + k`.
    pub fn deconv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        let (ci, h, w) = check_chw(x, "deconv2d input")?;
        let &[kci, co, kh, kw] = k.dims() else {
            return Err(Error::shape(format!("deconv2d kernel must be [C_in, C_out, k, k], got {:?}", k.dims())));
        };
        if kci != ci {
            return Err(Error::shape(format!("deconv2d kernel C_in {kci} != input channels {ci}")));
        }
        if kh != kw {
            return Err(Error::shape(format!("deconv2d kernel must be square, got {kh}x{kw}")));
        }
        if b.dims() != [co] {
            return Err(Error::shape(format!("deconv2d bias {:?} != [C_out = {co}]", b.dims())));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        let span = (h - 1) * stride + kh;
        let span_w = (w - 1) * stride + kh;
        if span <= 2 * pad || span_w <= 2 * pad {
            return Err(Error::shape(format!("deconv2d pad {pad} too large for input {h}x{w}")));
        }
        let (oh, ow) = (span - 2 * pad, span_w - 2 * pad);
        let geom = ConvGeometry::new(co, oh, ow, kh, stride, pad)?;
        debug_assert_eq!((geom.out_height, geom.out_width), (h, w));
        let mut cols = vec![0.0; geom.col_rows() * h * w];
        gemm(geom.col_rows(), ci, h * w, k.data(), true, x.data(), false, &mut cols, 0.0);
        let mut out = vec![0.0; co * oh * ow];
        for (plane, &bv) in out.chunks_mut(oh * ow).zip(b.data()) {
            plane.iter_mut().for_each(|v| *v = bv);
        }
        geom.col2im(&cols, &mut out);
        let value = Tensor::new(&[co, oh, ow], out)?;
        self.push(value, Op::Deconv2d { input, kernel, bias, geom }, &[input, kernel, bias], "deconv2d")
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::invalid(format!("leaky_relu slope {slope} outside [0, 1)")));
        }
        let value = self.value(input).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu { input, slope }, &[input], "leaky_relu")
    }

    /// Round-half-away-from-zero forward, identity gradient backward.
    pub fn round_ste(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(f64::round);
        self.push(value, Op::RoundSte { input }, &[input], "round_ste")
    }

    /// Non-differentiable rounding; rejects gradient-tracked inputs.
    pub fn round_hard(&mut self, input: Var) -> Result<Var> {
        if self.is_tracked(input) {
            return Err(Error::HardQuantizeTracked);
        }
        let value = self.value(input).map(f64::round);
        self.push(value, Op::Leaf, &[], "round_hard")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(value, Op::Add { a, b }, &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(value, Op::Sub { a, b }, &[a, b], "sub")
    }

    pub fn add_const(&mut self, input: Var, c: &Tensor) -> Result<Var> {
        let value = self.value(input).zip_map(c, |x, y| x + y)?;
        self.push(value, Op::AddConst { input }, &[input], "add_const")
    }

    pub fn mul_const(&mut self, input: Var, c: &Tensor) -> Result<Var> {
        let value = self.value(input).zip_map(c, |x, y| x * y)?;
        let factor = c.data().to_vec();
        self.push(value, Op::MulConst { input, factor }, &[input], "mul_const")
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::Scale { input, factor }, &[input], "scale")
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, Op::Sum { input }, &[input], "sum")
    }

    pub fn sum_squares(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(input).data().iter().map(|v| v * v).sum());
        self.push(value, Op::SumSquares { input }, &[input], "sum_squares")
    }

    /// Total code length in bits of `input` ([C, H, W]) under a per-channel
    /// logistic density discretized to unit bins. Bin masses below `floor`
    /// are clamped to `floor`.
    pub fn logistic_bits(&mut self, input: Var, loc: Var, log_scale: Var, floor: f64) -> Result<Var> {
        let y = self.value(input);
        let (c, h, w) = check_chw(y, "entropy model input")?;
        let mu = self.value(loc);
        let ls = self.value(log_scale);
        if mu.dims() != [c] || ls.dims() != [c] {
            return Err(Error::shape(format!(
                "entropy parameters {:?}/{:?} do not match {c} latent channels",
                mu.dims(),
                ls.dims()
            )));
        }
        let plane = h * w;
        let mut bits = 0.0;
        for ch in 0..c {
            let (m, s) = (mu.data()[ch], ls.data()[ch].exp());
            for &v in &y.data()[ch * plane..(ch + 1) * plane] {
                let (mass, _, _) = logistic_bin_mass(v, m, s);
                bits -= mass.max(floor).log2();
            }
        }
        self.push(
            Tensor::scalar(bits),
            Op::LogisticBits { input, loc, log_scale, floor },
            &[input, loc, log_scale],
            "logistic_bits",
        )
    }

    /// Per-pixel linear mixing of the three channels of a `[3, H, W]` tensor.
    pub fn color_mix(&mut self, input: Var, matrix: [[f64; 3]; 3]) -> Result<Var> {
        let x = self.value(input);
        let (c, h, w) = check_chw(x, "color_mix input")?;
        if c != 3 {
            return Err(Error::shape(format!("color_mix needs 3 channels, got {c}")));
        }
        let plane = h * w;
        let d = x.data();
        let mut out = vec![0.0; d.len()];
        for i in 0..plane {
            let px = [d[i], d[plane + i], d[2 * plane + i]];
            for (o, row) in matrix.iter().enumerate() {
                out[o * plane + i] = row[0] * px[0] + row[1] * px[1] + row[2] * px[2];
            }
        }
        let value = Tensor::new(x.dims(), out)?;
        self.push(value, Op::ColorMix { input, matrix }, &[input], "color_mix")
    }

    /// Orthonormal blockwise 8x8 DCT-II (or inverse) per channel.
    pub fn block_dct(&mut self, input: Var, inverse: bool) -> Result<Var> {
        let x = self.value(input);
        let (_, h, w) = check_chw(x, "block_dct input")?;
        if h % DCT_BLOCK != 0 || w % DCT_BLOCK != 0 {
            return Err(Error::shape(format!("block_dct needs dims divisible by 8, got {h}x{w}")));
        }
        let value = Tensor::new(x.dims(), block_dct(x.data(), x.dims(), inverse))?;
        self.push(value, Op::BlockDct { input, inverse }, &[input], "block_dct")
    }

    /// Smooth periodic stand-in for rounding: `x - sin(2*pi*x) / (2*pi*sharpness)`.
    pub fn soft_round(&mut self, input: Var, sharpness: f64) -> Result<Var> {
        if !(sharpness.is_finite() && sharpness > 0.0) {
            return Err(Error::invalid(format!("soft_round sharpness {sharpness} must be positive")));
        }
        let value = self
            .value(input)
            .map(|v| v - (2.0 * PI * v).sin() / (2.0 * PI * sharpness));
        self.push(value, Op::SoftRound { input, sharpness }, &[input], "soft_round")
    }

    pub fn clamp(&mut self, input: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp { input, lo, hi }, &[input], "clamp")
    }

    /// Back-propagates from a scalar `root`, accumulating into tracked leaves.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got {:?}",
                self.value(root).dims()
            )));
        }
        self.backward_with(root, vec![1.0])
    }

    /// Back-propagates an explicit upstream gradient from `root`.
    pub fn backward_with(&mut self, root: Var, upstream: Vec<f64>) -> Result<()> {
        if upstream.len() != self.value(root).len() {
            return Err(Error::shape("upstream gradient length differs from root"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(upstream);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].tracked {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.accumulate_grad(&g);
                continue;
            }
            for (target, contribution) in self.local_grads(idx, &g) {
                if !self.nodes[target.0].tracked {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let tracked = |v: Var| self.nodes[v.0].tracked;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geom } => {
                let k = self.value(*kernel);
                let co = k.dims()[0];
                let (rows, p) = (geom.col_rows(), geom.col_cols());
                if tracked(*input) {
                    let mut gcols = vec![0.0; rows * p];
                    gemm(rows, co, p, k.data(), true, g, false, &mut gcols, 0.0);
                    let mut gin = vec![0.0; self.value(*input).len()];
                    geom.col2im(&gcols, &mut gin);
                    out.push((*input, gin));
                }
                if tracked(*kernel) {
                    let cols = geom.im2col(self.value(*input).data());
                    let mut gk = vec![0.0; co * rows];
                    gemm(co, p, rows, g, false, &cols, true, &mut gk, 0.0);
                    out.push((*kernel, gk));
                }
                if tracked(*bias) {
                    out.push((*bias, g.chunks(p).map(|r| r.iter().sum()).collect()));
                }
            }
            Op::Deconv2d { input, kernel, bias, geom } => {
                let k = self.value(*kernel);
                let x = self.value(*input);
                let ci = k.dims()[0];
                let (rows, p) = (geom.col_rows(), geom.col_cols());
                let gcols = geom.im2col(g);
                if tracked(*input) {
                    let mut gin = vec![0.0; ci * p];
                    gemm(ci, rows, p, k.data(), false, &gcols, false, &mut gin, 0.0);
                    out.push((*input, gin));
                }
                if tracked(*kernel) {
                    let mut gk = vec![0.0; ci * rows];
                    gemm(ci, p, rows, x.data(), false, &gcols, true, &mut gk, 0.0);
                    out.push((*kernel, gk));
                }
                if tracked(*bias) {
                    let plane = geom.height * geom.width;
                    out.push((*bias, g.chunks(plane).map(|r| r.iter().sum()).collect()));
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                let gin = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { slope * gv })
                    .collect();
                out.push((*input, gin));
            }
            Op::RoundSte { input } | Op::AddConst { input } => out.push((*input, g.to_vec())),
            Op::Add { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|v| -v).collect()));
            }
            Op::MulConst { input, factor } => {
                out.push((*input, g.iter().zip(factor).map(|(a, b)| a * b).collect()));
            }
            Op::Scale { input, factor } => {
                out.push((*input, g.iter().map(|v| v * factor).collect()));
            }
            Op::Sum { input } => out.push((*input, vec![g[0]; self.value(*input).len()])),
            Op::SumSquares { input } => {
                let x = self.value(*input).data();
                out.push((*input, x.iter().map(|v| 2.0 * v * g[0]).collect()));
            }
            Op::LogisticBits { input, loc, log_scale, floor } => {
                let y = self.value(*input);
                let c = y.dims()[0];
                let plane = y.len() / c;
                let mu = self.value(*loc).data();
                let ls = self.value(*log_scale).data();
                let mut gy = vec![0.0; y.len()];
                let mut gmu = vec![0.0; c];
                let mut gls = vec![0.0; c];
                for ch in 0..c {
                    let s = ls[ch].exp();
                    for i in ch * plane..(ch + 1) * plane {
                        let (mass, dv, dls) = logistic_bin_mass(y.data()[i], mu[ch], s);
                        if mass < *floor {
                            continue;
                        }
                        let dbits = -g[0] / (mass * LN_2);
                        gy[i] = dbits * dv;
                        gmu[ch] -= dbits * dv;
                        gls[ch] += dbits * dls;
                    }
                }
                out.push((*input, gy));
                out.push((*loc, gmu));
                out.push((*log_scale, gls));
            }
            Op::ColorMix { input, matrix } => {
                let plane = g.len() / 3;
                let mut gin = vec![0.0; g.len()];
                for i in 0..plane {
                    for (o, row) in matrix.iter().enumerate() {
                        let go = g[o * plane + i];
                        for (ch, &m) in row.iter().enumerate() {
                            gin[ch * plane + i] += m * go;
                        }
                    }
                }
                out.push((*input, gin));
            }
            Op::BlockDct { input, inverse } => {
                out.push((*input, block_dct(g, node.value.dims(), !inverse)));
            }
            Op::SoftRound { input, sharpness } => {
                let x = self.value(*input).data();
                let gin = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| gv * (1.0 - (2.0 * PI * v).cos() / sharpness))
                    .collect();
                out.push((*input, gin));
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).data();
                let gin = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v >= *lo && v <= *hi { gv } else { 0.0 })
                    .collect();
                out.push((*input, gin));
            }
        }
        out
    }
}
