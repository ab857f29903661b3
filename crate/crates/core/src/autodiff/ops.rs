//! Forward and backward kernels for every [`OpKind`].

use super::OpKind;
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Result of a forward kernel: the output plus whatever the backward kernel
/// needs beyond the inputs and output.
pub(crate) struct Forward {
    pub value: Tensor,
    pub aux: Vec<f64>,
}

impl Forward {
    fn plain(value: Tensor) -> Self {
        Self { value, aux: Vec::new() }
    }
}

fn shape_err(op: &'static str, inputs: &[&Tensor]) -> Error {
    Error::Shape {
        op,
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn arity(op: &'static str, inputs: &[&Tensor], allowed: &[usize]) -> Result<()> {
    if allowed.contains(&inputs.len()) {
        Ok(())
    } else {
        Err(shape_err(op, inputs))
    }
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

/// C = alpha * A(m×k) * B(k×n) + beta * C, with explicit strides so that
/// transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: every access lies inside the slices: A spans m×k, B spans k×n
    // and C spans m×n under the given strides, which callers derive from the
    // checked operand shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn matmul_into(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm(m, k, n, a, (k as isize, 1), b, (n as isize, 1), 0.0, c);
}

pub(crate) fn forward(op: &OpKind, inputs: &[&Tensor]) -> Result<Forward> {
    match op {
        OpKind::MatMul => {
            arity("matmul", inputs, &[2])?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err("matmul", inputs));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; m * n];
            matmul_into(m, k, n, a.data(), b.data(), &mut out);
            Ok(Forward::plain(Tensor::new([m, n], out)?))
        }
        OpKind::Add => {
            arity("add", inputs, &[2])?;
            let (a, b) = (inputs[0], inputs[1]);
            if !broadcasts_onto(b.shape(), a.shape()) {
                return Err(shape_err("add", inputs));
            }
            let bd = b.data();
            let mut out = a.data().to_vec();
            for chunk in out.chunks_exact_mut(bd.len().max(1)) {
                for (o, &v) in chunk.iter_mut().zip(bd) {
                    *o += v;
                }
            }
            Ok(Forward::plain(Tensor::new(a.shape(), out)?))
        }
        OpKind::Scale(s) => {
            arity("scale", inputs, &[1])?;
            let out = inputs[0].data().iter().map(|v| v * s).collect();
            Ok(Forward::plain(Tensor::new(inputs[0].shape(), out)?))
        }
        OpKind::Concat { axis } => {
            let axis = *axis;
            if inputs.is_empty() {
                return Err(shape_err("concat", inputs));
            }
            let first = inputs[0].shape();
            if axis >= first.len() {
                return Err(shape_err("concat", inputs));
            }
            let mut total = 0;
            for t in inputs {
                let s = t.shape();
                if s.len() != first.len() || s.iter().zip(first).enumerate().any(|(i, (x, y))| i != axis && x != y) {
                    return Err(shape_err("concat", inputs));
                }
                total += s[axis];
            }
            let (outer, _, inner) = around_axis(first, axis);
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in inputs {
                    let chunk = t.shape()[axis] * inner;
                    out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = first.to_vec();
            shape[axis] = total;
            Ok(Forward::plain(Tensor::new(shape, out)?))
        }
        OpKind::Slice { axis, start, len } => {
            arity("slice", inputs, &[1])?;
            let x = inputs[0];
            let (axis, start, len) = (*axis, *start, *len);
            if axis >= x.rank() || start + len > x.shape()[axis] {
                return Err(shape_err("slice", inputs));
            }
            let (outer, dim, inner) = around_axis(x.shape(), axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * dim + start) * inner;
                out.extend_from_slice(&x.data()[base..base + len * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = len;
            Ok(Forward::plain(Tensor::new(shape, out)?))
        }
        OpKind::Reshape(shape) => {
            arity("reshape", inputs, &[1])?;
            if numel(shape) != inputs[0].numel() {
                return Err(Error::Shape {
                    op: "reshape",
                    shapes: vec![inputs[0].shape().to_vec(), shape.clone()],
                });
            }
            Ok(Forward::plain(Tensor::new(shape.clone(), inputs[0].data().to_vec())?))
        }
        OpKind::Transpose => {
            arity("transpose", inputs, &[1])?;
            let x = inputs[0];
            if x.rank() != 2 {
                return Err(shape_err("transpose", inputs));
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut out = vec![0.0; r * c];
            transpose_into(x.data(), r, c, &mut out);
            Ok(Forward::plain(Tensor::new([c, r], out)?))
        }
        OpKind::LayerNorm { eps } => {
            arity("layernorm", inputs, &[3])?;
            let (x, g, b) = (inputs[0], inputs[1], inputs[2]);
            let d = *x.shape().last().ok_or_else(|| shape_err("layernorm", inputs))?;
            if g.shape() != [d] || b.shape() != [d] || d == 0 {
                return Err(shape_err("layernorm", inputs));
            }
            let rows = x.numel() / d;
            // aux = [xhat (rows*d) | rstd (rows)]
            let mut aux = vec![0.0; rows * d + rows];
            let mut out = vec![0.0; rows * d];
            let (xhat, rstd) = aux.split_at_mut(rows * d);
            for r in 0..rows {
                let row = &x.data()[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let rs = 1.0 / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..d {
                    let h = (row[j] - mean) * rs;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * g.data()[j] + b.data()[j];
                }
            }
            Ok(Forward {
                value: Tensor::new(x.shape(), out)?,
                aux,
            })
        }
        OpKind::Gelu => {
            arity("gelu", inputs, &[1])?;
            let out = inputs[0]
                .data()
                .iter()
                .map(|&v| 0.5 * v * (1.0 + libm::erf(v / SQRT_2)))
                .collect();
            Ok(Forward::plain(Tensor::new(inputs[0].shape(), out)?))
        }
        OpKind::Softmax { axis } => {
            arity("softmax", inputs, &[1])?;
            let x = inputs[0];
            if *axis >= x.rank() {
                return Err(shape_err("softmax", inputs));
            }
            let (outer, dim, inner) = around_axis(x.shape(), *axis);
            let mut out = x.data().to_vec();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * dim * inner + i;
                    let idx = |j: usize| base + j * inner;
                    let max = (0..dim).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for j in 0..dim {
                        let e = (out[idx(j)] - max).exp();
                        out[idx(j)] = e;
                        sum += e;
                    }
                    for j in 0..dim {
                        out[idx(j)] /= sum;
                    }
                }
            }
            Ok(Forward::plain(Tensor::new(x.shape(), out)?))
        }
        OpKind::Conv2d { stride, padding } => {
            arity("conv2d", inputs, &[2, 3])?;
            let geom = ConvGeom::new(inputs, *stride, *padding)?;
            let cols = geom.im2col(inputs[0].data());
            let mut out = vec![0.0; geom.out_c * geom.out_hw()];
            matmul_into(
                geom.out_c,
                geom.patch_len(),
                geom.out_hw(),
                inputs[1].data(),
                &cols,
                &mut out,
            );
            if let Some(bias) = inputs.get(2) {
                for (o, chunk) in out.chunks_exact_mut(geom.out_hw()).enumerate() {
                    let b = bias.data()[o];
                    chunk.iter_mut().for_each(|v| *v += b);
                }
            }
            Ok(Forward {
                value: Tensor::new([geom.out_c, geom.out_h, geom.out_w], out)?,
                aux: cols,
            })
        }
        OpKind::Relu => {
            arity("relu", inputs, &[1])?;
            let out = inputs[0].data().iter().map(|&v| v.max(0.0)).collect();
            Ok(Forward::plain(Tensor::new(inputs[0].shape(), out)?))
        }
        OpKind::Sigmoid => {
            arity("sigmoid", inputs, &[1])?;
            let out = inputs[0].data().iter().map(|&v| sigmoid(v)).collect();
            Ok(Forward::plain(Tensor::new(inputs[0].shape(), out)?))
        }
    }
}

/// Computes the gradient contribution to each input for which `wants[i]`
/// is set; other slots come back as `None`.
pub(crate) fn backward(
    op: &OpKind,
    inputs: &[&Tensor],
    out: &Tensor,
    aux: &[f64],
    dout: &[f64],
    wants: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
    match op {
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            if wants[0] {
                // dA = dC · Bᵀ
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, dout, (n as isize, 1), b.data(), (1, n as isize), 0.0, &mut da);
                grads[0] = Some(da);
            }
            if wants[1] {
                // dB = Aᵀ · dC
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, a.data(), (1, k as isize), dout, (n as isize, 1), 0.0, &mut db);
                grads[1] = Some(db);
            }
        }
        OpKind::Add => {
            if wants[0] {
                grads[0] = Some(dout.to_vec());
            }
            if wants[1] {
                let len = inputs[1].numel();
                let mut db = vec![0.0; len];
                for chunk in dout.chunks_exact(len.max(1)) {
                    for (d, &g) in db.iter_mut().zip(chunk) {
                        *d += g;
                    }
                }
                grads[1] = Some(db);
            }
        }
        OpKind::Scale(s) => {
            if wants[0] {
                grads[0] = Some(dout.iter().map(|g| g * s).collect());
            }
        }
        OpKind::Concat { axis } => {
            let (outer, total, inner) = around_axis(out.shape(), *axis);
            let mut offset = 0;
            for (i, t) in inputs.iter().enumerate() {
                let dim = t.shape()[*axis];
                if wants[i] {
                    let mut g = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        g.extend_from_slice(&dout[base..base + dim * inner]);
                    }
                    grads[i] = Some(g);
                }
                offset += dim;
            }
        }
        OpKind::Slice { axis, start, len } => {
            if wants[0] {
                let x = inputs[0];
                let (outer, dim, inner) = around_axis(x.shape(), *axis);
                let mut g = vec![0.0; x.numel()];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    let src = o * len * inner;
                    g[dst..dst + len * inner].copy_from_slice(&dout[src..src + len * inner]);
                }
                grads[0] = Some(g);
            }
        }
        OpKind::Reshape(_) => {
            if wants[0] {
                grads[0] = Some(dout.to_vec());
            }
        }
        OpKind::Transpose => {
            if wants[0] {
                // out is (c, r); map back to (r, c)
                let (c, r) = (out.shape()[0], out.shape()[1]);
                let mut g = vec![0.0; r * c];
                transpose_into(dout, c, r, &mut g);
                grads[0] = Some(g);
            }
        }
        OpKind::LayerNorm { .. } => {
            let (x, gain) = (inputs[0], inputs[1]);
            let d = gain.numel();
            let rows = x.numel() / d;
            let (xhat, rstd) = aux.split_at(rows * d);
            if wants[1] {
                let mut dg = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        dg[j] += dout[r * d + j] * xhat[r * d + j];
                    }
                }
                grads[1] = Some(dg);
            }
            if wants[2] {
                let mut db = vec![0.0; d];
                for chunk in dout.chunks_exact(d) {
                    for (b, g) in db.iter_mut().zip(chunk) {
                        *b += g;
                    }
                }
                grads[2] = Some(db);
            }
            if wants[0] {
                let mut dx = vec![0.0; x.numel()];
                for r in 0..rows {
                    let xh = &xhat[r * d..(r + 1) * d];
                    let dy = &dout[r * d..(r + 1) * d];
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for j in 0..d {
                        let dxh = dy[j] * gain.data()[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    for j in 0..d {
                        let dxh = dy[j] * gain.data()[j];
                        dx[r * d + j] = rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
                grads[0] = Some(dx);
            }
        }
        OpKind::Gelu => {
            if wants[0] {
                let g = inputs[0]
                    .data()
                    .iter()
                    .zip(dout)
                    .map(|(&v, &g)| {
                        let cdf = 0.5 * (1.0 + libm::erf(v / SQRT_2));
                        let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
                        g * (cdf + v * pdf)
                    })
                    .collect();
                grads[0] = Some(g);
            }
        }
        OpKind::Softmax { axis } => {
            if wants[0] {
                let (outer, dim, inner) = around_axis(out.shape(), *axis);
                let y = out.data();
                let mut g = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * dim * inner + i;
                        let dot: f64 = (0..dim).map(|j| dout[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..dim {
                            let ix = base + j * inner;
                            g[ix] = y[ix] * (dout[ix] - dot);
                        }
                    }
                }
                grads[0] = Some(g);
            }
        }
        OpKind::Conv2d { stride, padding } => {
            let geom =
                ConvGeom::new(inputs, *stride, *padding).expect("conv2d shapes were validated in the forward pass");
            let (oc, pl, hw) = (geom.out_c, geom.patch_len(), geom.out_hw());
            if wants[1] {
                // dW = dOut · colsᵀ
                let mut dw = vec![0.0; oc * pl];
                gemm(oc, hw, pl, dout, (hw as isize, 1), aux, (1, hw as isize), 0.0, &mut dw);
                grads[1] = Some(dw);
            }
            if inputs.len() == 3 && wants[2] {
                grads[2] = Some(dout.chunks_exact(hw).map(|c| c.iter().sum()).collect());
            }
            if wants[0] {
                // dcols = Wᵀ · dOut, then scatter back
                let mut dcols = vec![0.0; pl * hw];
                gemm(
                    pl,
                    oc,
                    hw,
                    inputs[1].data(),
                    (1, pl as isize),
                    dout,
                    (hw as isize, 1),
                    0.0,
                    &mut dcols,
                );
                grads[0] = Some(geom.col2im(&dcols));
            }
        }
        OpKind::Relu => {
            if wants[0] {
                let g = inputs[0]
                    .data()
                    .iter()
                    .zip(dout)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                grads[0] = Some(g);
            }
        }
        OpKind::Sigmoid => {
            if wants[0] {
                let g = out.data().iter().zip(dout).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                grads[0] = Some(g);
            }
        }
    }
    grads
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `b` broadcasts onto `a` when it equals `a`'s shape or a proper suffix of it.
fn broadcasts_onto(b: &[usize], a: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn transpose_into(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

struct ConvGeom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn new(inputs: &[&Tensor], stride: usize, padding: usize) -> Result<Self> {
        let (x, w) = (inputs[0], inputs[1]);
        if x.rank() != 3 || w.rank() != 4 || w.shape()[1] != x.shape()[0] || stride == 0 {
            return Err(shape_err("conv2d", inputs));
        }
        if let Some(b) = inputs.get(2) {
            if b.shape() != [w.shape()[0]] {
                return Err(shape_err("conv2d", inputs));
            }
        }
        let (in_c, in_h, in_w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (out_c, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        if in_h + 2 * padding < kh || in_w + 2 * padding < kw {
            return Err(shape_err("conv2d", inputs));
        }
        Ok(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            out_h: (in_h + 2 * padding - kh) / stride + 1,
            out_w: (in_w + 2 * padding - kw) / stride + 1,
            stride,
            padding,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Calls `f(col_row, col_col, input_index)` for every in-bounds tap;
    /// zero-padded taps are skipped.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for c in 0..self.in_c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.in_w as isize {
                                continue;
                            }
                            let src = (c * self.in_h + iy as usize) * self.in_w + ix as usize;
                            f(row, oy * self.out_w + ox, src);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let hw = self.out_hw();
        let mut cols = vec![0.0; self.patch_len() * hw];
        self.for_each_tap(|row, col, src| cols[row * hw + col] = x[src]);
        cols
    }

    fn col2im(&self, dcols: &[f64]) -> Vec<f64> {
        let hw = self.out_hw();
        let mut dx = vec![0.0; self.in_c * self.in_h * self.in_w];
        self.for_each_tap(|row, col, src| dx[src] += dcols[row * hw + col]);
        dx
    }
}
