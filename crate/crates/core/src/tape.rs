//! Reverse-mode automatic differentiation over a linear operation tape.
//!
//! Values live on the tape as nodes; [`Var`] is an index into it. A forward
//! pass records every operation in execution order (inputs always precede
//! their consumers), and [`Tape::backward`] replays the tape once in reverse,
//! accumulating vector-Jacobian products. Gradients of shared subexpressions
//! add up rather than overwrite.
//!
//! One tape is one training step: single-threaded, consumed by `backward`.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Elementwise a + b, identical shapes.
    Add(Var, Var),
    /// Elementwise a * b, identical shapes.
    Mul(Var, Var),
    /// Elementwise scale * x + shift.
    Affine { x: Var, scale: f64 },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Ln(Var),
    /// Elementwise clamp into [lo, hi]; gradient passes only strictly inside.
    Clamp { x: Var, lo: f64, hi: f64 },
    /// Full reduction to a rank-0 scalar.
    Sum(Var),
    /// [m,k] x [k,n] -> [m,n].
    MatMul(Var, Var),
    /// [m,k] x [k] -> [m].
    MatVec(Var, Var),
    /// [r,c] -> [c,r].
    Transpose(Var),
    SelectRow { x: Var, row: usize },
    SelectCol { x: Var, col: usize },
    /// Stack rank-1 rows of equal length into a matrix.
    StackRows(Vec<Var>),
    /// Columns [from, to) of a matrix.
    SliceCols { x: Var, from: usize, to: usize },
    /// Same data, new shape.
    Reshape(Var),
    /// x[r,c] + bias[c] broadcast over rows.
    AddRowBias { x: Var, bias: Var },
    /// Cross-correlation of [c_in,h,w] with [c_out,c_in,kh,kw] plus bias.
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        padding: usize,
    },
    /// Per-row max over index windows of the column axis; `argmax` holds the
    /// chosen source column for every output element.
    WindowMax { x: Var, argmax: Vec<usize> },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Operation tape for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records `tensor` as a leaf; it participates in gradients iff it
    /// requires them.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let needs = tensor.requires_grad();
        self.push(Op::Leaf, tensor.clone(), needs)
    }

    /// Records a non-trainable value.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, TensorError> {
        Ok(self.push(Op::Leaf, Tensor::new(shape, data)?, false))
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.push(Op::Leaf, Tensor::scalar(value), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if one was computed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_same_shape("add", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x + y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), value, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_same_shape("mul", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x * y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), value, needs))
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|v| scale * v + shift).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::Affine { x, scale }, value, needs)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    /// Elementwise `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|&v| crate::math::sigmoid(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::Sigmoid(x), value, needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|&v| crate::math::tanh(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::Tanh(x), value, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::Relu(x), value, needs)
    }

    /// Natural log; caller is responsible for keeping inputs positive
    /// (losses clamp first).
    pub fn ln(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|&v| crate::math::ln(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::Ln(x), value, needs)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|v| v.clamp(lo, hi)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::Clamp { x, lo, hi }, value, needs)
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.data(x).iter().sum();
        let needs = self.needs(x);
        self.push(Op::Sum(x), Tensor::scalar(total), needs)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                axis: "inner dimension",
                expected: k,
                got: k2,
            });
        }
        let av = self.data(a);
        let bv = self.data(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bb) in orow.iter_mut().zip(brow) {
                    *o += x * bb;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, needs))
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.rank2("matvec", m)?;
        let vlen = self.rank1("matvec", v)?;
        if cols != vlen {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                axis: "vector length",
                expected: cols,
                got: vlen,
            });
        }
        let mv = self.data(m);
        let vv = self.data(v);
        let out: Vec<f64> = (0..rows)
            .map(|i| {
                mv[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(vv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let needs = self.needs(m) || self.needs(v);
        Ok(self.push(Op::MatVec(m, v), Tensor::new(vec![rows], out)?, needs))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.rank2("transpose", x)?;
        let xv = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Op::Transpose(x), Tensor::new(vec![c, r], out)?, needs))
    }

    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var, TensorError> {
        let (r, c) = self.rank2("select_row", x)?;
        if row >= r {
            return Err(TensorError::ShapeMismatch {
                op: "select_row",
                axis: "row index",
                expected: r,
                got: row,
            });
        }
        let data = self.data(x)[row * c..(row + 1) * c].to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::SelectRow { x, row }, Tensor::new(vec![c], data)?, needs))
    }

    pub fn select_col(&mut self, x: Var, col: usize) -> Result<Var, TensorError> {
        let (r, c) = self.rank2("select_col", x)?;
        if col >= c {
            return Err(TensorError::ShapeMismatch {
                op: "select_col",
                axis: "column index",
                expected: c,
                got: col,
            });
        }
        let xv = self.data(x);
        let data: Vec<f64> = (0..r).map(|i| xv[i * c + col]).collect();
        let needs = self.needs(x);
        Ok(self.push(Op::SelectCol { x, col }, Tensor::new(vec![r], data)?, needs))
    }

    /// Stacks rank-1 vectors of equal length into a [rows.len(), len] matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var, TensorError> {
        if rows.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "stack_rows",
                axis: "row count",
                expected: 1,
                got: 0,
            });
        }
        let len = self.rank1("stack_rows", rows[0])?;
        let mut data = Vec::with_capacity(rows.len() * len);
        for &r in rows {
            let l = self.rank1("stack_rows", r)?;
            if l != len {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    axis: "row length",
                    expected: len,
                    got: l,
                });
            }
            data.extend_from_slice(self.data(r));
        }
        let needs = rows.iter().any(|&r| self.needs(r));
        Ok(self.push(
            Op::StackRows(rows.to_vec()),
            Tensor::new(vec![rows.len(), len], data)?,
            needs,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, from: usize, to: usize) -> Result<Var, TensorError> {
        let (r, c) = self.rank2("slice_cols", x)?;
        if from > to || to > c {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                axis: "column range",
                expected: c,
                got: to,
            });
        }
        let w = to - from;
        let xv = self.data(x);
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&xv[i * c + from..i * c + to]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Op::SliceCols { x, from, to },
            Tensor::new(vec![r, w], data)?,
            needs,
        ))
    }

    /// Reinterprets `x` under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].value.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                axis: "element count",
                expected: self.nodes[x.0].value.numel(),
                got: numel,
            });
        }
        let value = Tensor::new(shape, self.data(x).to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(Op::Reshape(x), value, needs))
    }

    /// Adds `bias[c]` to every row of `x[r,c]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = self.rank2("add_row_bias", x)?;
        let blen = self.rank1("add_row_bias", bias)?;
        if blen != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_bias",
                axis: "bias length",
                expected: c,
                got: blen,
            });
        }
        let xv = self.data(x);
        let bv = self.data(bias);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(xv[i * c + j] + bv[j]);
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(
            Op::AddRowBias { x, bias },
            Tensor::new(vec![r, c], data)?,
            needs,
        ))
    }

    // ---- structured ops ----

    /// 2-D cross-correlation: input `[c_in,h,w]`, kernels
    /// `[c_out,c_in,kh,kw]`, bias `[c_out]`, zero padding on both spatial
    /// axes. Output is `[c_out, h+2p-kh+1, w+2p-kw+1]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let ishape = self.shape(input).to_vec();
        let kshape = self.shape(kernels).to_vec();
        if ishape.len() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                axis: "input rank",
                expected: 3,
                got: ishape.len(),
            });
        }
        if kshape.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                axis: "kernel rank",
                expected: 4,
                got: kshape.len(),
            });
        }
        let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (c_out, kc_in, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
        if kc_in != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                axis: "input channels",
                expected: c_in,
                got: kc_in,
            });
        }
        let blen = self.rank1("conv2d", bias)?;
        if blen != c_out {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                axis: "bias length",
                expected: c_out,
                got: blen,
            });
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                axis: "spatial extent",
                expected: kh.max(kw),
                got: (h + 2 * padding).min(w + 2 * padding),
            });
        }
        let h_out = h + 2 * padding - kh + 1;
        let w_out = w + 2 * padding - kw + 1;

        let padded = pad_planes(self.data(input), c_in, h, w, padding);
        let hp = h + 2 * padding;
        let wp = w + 2 * padding;
        let kv = self.data(kernels);
        let bv = self.data(bias);
        let mut out = vec![0.0; c_out * h_out * w_out];
        for co in 0..c_out {
            let plane = &mut out[co * h_out * w_out..(co + 1) * h_out * w_out];
            plane.fill(bv[co]);
            for ci in 0..c_in {
                let src_plane = &padded[ci * hp * wp..(ci + 1) * hp * wp];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wgt = kv[((co * c_in + ci) * kh + ky) * kw + kx];
                        if wgt == 0.0 {
                            continue;
                        }
                        for y in 0..h_out {
                            let src = &src_plane[(y + ky) * wp + kx..(y + ky) * wp + kx + w_out];
                            let dst = &mut plane[y * w_out..(y + 1) * w_out];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wgt * s;
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(input) || self.needs(kernels) || self.needs(bias);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernels,
                bias,
                padding,
            },
            Tensor::new(vec![c_out, h_out, w_out], out)?,
            needs,
        ))
    }

    /// Max over column windows of `x[d,t]`: output column `m` is the per-row
    /// max of columns `windows[m].0 .. windows[m].1`. An empty window reuses
    /// the previous output column (same source frame, so gradients follow).
    /// Gradient flows to the argmax element only.
    pub fn window_max(&mut self, x: Var, windows: &[(usize, usize)]) -> Result<Var, TensorError> {
        let (d, t) = self.rank2("window_max", x)?;
        if windows.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "window_max",
                axis: "window count",
                expected: 1,
                got: 0,
            });
        }
        for &(_, end) in windows {
            if end > t {
                return Err(TensorError::ShapeMismatch {
                    op: "window_max",
                    axis: "window end",
                    expected: t,
                    got: end,
                });
            }
        }
        let m = windows.len();
        let xv = self.data(x);
        let mut out = vec![0.0; d * m];
        let mut argmax = vec![0usize; d * m];
        for row in 0..d {
            let src = &xv[row * t..(row + 1) * t];
            for (mi, &(start, end)) in windows.iter().enumerate() {
                let (best_t, best_v) = if start < end {
                    let mut bt = start;
                    let mut bv = src[start];
                    for (ti, &v) in src.iter().enumerate().take(end).skip(start + 1) {
                        if v > bv {
                            bv = v;
                            bt = ti;
                        }
                    }
                    (bt, bv)
                } else if mi > 0 {
                    let prev = argmax[row * m + mi - 1];
                    (prev, src[prev])
                } else {
                    let fallback = start.min(t - 1);
                    (fallback, src[fallback])
                };
                out[row * m + mi] = best_v;
                argmax[row * m + mi] = best_t;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Op::WindowMax { x, argmax },
            Tensor::new(vec![d, m], out)?,
            needs,
        ))
    }

    // ---- backward ----

    /// Backpropagates from a scalar `loss` through the recorded graph.
    /// Every gradient-requiring node reachable from `loss` ends up with a
    /// gradient readable via [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::BackwardConsumed);
        }
        let numel = self.nodes[loss.0].value.numel();
        if numel != 1 {
            return Err(TensorError::NotScalar { numel });
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(TensorError::EmptyTape);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        self.consumed = true;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Runs `$body` on the input's grad buffer, allocating zeros on first
        // touch; inputs that never need gradients are skipped entirely.
        macro_rules! into_grad {
            ($v:expr, $body:expr) => {
                if self.needs($v) {
                    let numel = self.nodes[$v.0].value.numel();
                    let buf = grads[$v.0].get_or_insert_with(|| vec![0.0; numel]);
                    #[allow(clippy::redundant_closure_call)]
                    ($body)(buf.as_mut_slice());
                }
            };
        }

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                into_grad!(*a, |buf: &mut [f64]| add_assign(buf, g, 1.0));
                into_grad!(*b, |buf: &mut [f64]| add_assign(buf, g, 1.0));
            }
            Op::Mul(a, b) => {
                let av = self.data(*a).to_vec();
                let bv = self.data(*b).to_vec();
                into_grad!(*a, |buf: &mut [f64]| {
                    for ((d, gg), bb) in buf.iter_mut().zip(g).zip(&bv) {
                        *d += gg * bb;
                    }
                });
                into_grad!(*b, |buf: &mut [f64]| {
                    for ((d, gg), aa) in buf.iter_mut().zip(g).zip(&av) {
                        *d += gg * aa;
                    }
                });
            }
            Op::Affine { x, scale, .. } => {
                into_grad!(*x, |buf: &mut [f64]| add_assign(buf, g, *scale));
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                into_grad!(*x, |buf: &mut [f64]| {
                    for ((d, gg), yy) in buf.iter_mut().zip(g).zip(&y) {
                        *d += gg * yy * (1.0 - yy);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                into_grad!(*x, |buf: &mut [f64]| {
                    for ((d, gg), yy) in buf.iter_mut().zip(g).zip(&y) {
                        *d += gg * (1.0 - yy * yy);
                    }
                });
            }
            Op::Relu(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                into_grad!(*x, |buf: &mut [f64]| {
                    for ((d, gg), yy) in buf.iter_mut().zip(g).zip(&y) {
                        if *yy > 0.0 {
                            *d += gg;
                        }
                    }
                });
            }
            Op::Ln(x) => {
                let xv = self.data(*x).to_vec();
                into_grad!(*x, |buf: &mut [f64]| {
                    for ((d, gg), xx) in buf.iter_mut().zip(g).zip(&xv) {
                        *d += gg / xx;
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.data(*x).to_vec();
                let (lo, hi) = (*lo, *hi);
                into_grad!(*x, |buf: &mut [f64]| {
                    for ((d, gg), xx) in buf.iter_mut().zip(g).zip(&xv) {
                        if *xx > lo && *xx < hi {
                            *d += gg;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let s = g[0];
                into_grad!(*x, |buf: &mut [f64]| {
                    for d in buf.iter_mut() {
                        *d += s;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.data(*a).to_vec();
                let bv = self.data(*b).to_vec();
                into_grad!(*a, |buf: &mut [f64]| {
                    // dA[i,p] += sum_j g[i,j] * B[p,j]
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            let grow = &g[i * n..(i + 1) * n];
                            let brow = &bv[p * n..(p + 1) * n];
                            for (gg, bb) in grow.iter().zip(brow) {
                                s += gg * bb;
                            }
                            buf[i * k + p] += s;
                        }
                    }
                });
                into_grad!(*b, |buf: &mut [f64]| {
                    // dB[p,j] += sum_i A[i,p] * g[i,j]
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            let brow = &mut buf[p * n..(p + 1) * n];
                            for (d, gg) in brow.iter_mut().zip(grow) {
                                *d += x * gg;
                            }
                        }
                    }
                });
            }
            Op::MatVec(m, v) => {
                let (rows, cols) = (self.shape(*m)[0], self.shape(*m)[1]);
                let mv = self.data(*m).to_vec();
                let vv = self.data(*v).to_vec();
                into_grad!(*m, |buf: &mut [f64]| {
                    for i in 0..rows {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &mut buf[i * cols..(i + 1) * cols];
                        for (d, x) in row.iter_mut().zip(&vv) {
                            *d += gi * x;
                        }
                    }
                });
                into_grad!(*v, |buf: &mut [f64]| {
                    for i in 0..rows {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &mv[i * cols..(i + 1) * cols];
                        for (d, x) in buf.iter_mut().zip(row) {
                            *d += gi * x;
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                into_grad!(*x, |buf: &mut [f64]| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::SelectRow { x, row } => {
                let c = self.shape(*x)[1];
                let row = *row;
                into_grad!(*x, |buf: &mut [f64]| {
                    add_assign(&mut buf[row * c..(row + 1) * c], g, 1.0);
                });
            }
            Op::SelectCol { x, col } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let col = *col;
                into_grad!(*x, |buf: &mut [f64]| {
                    for i in 0..r {
                        buf[i * c + col] += g[i];
                    }
                });
            }
            Op::StackRows(rows) => {
                let len = self.nodes[idx].value.shape()[1];
                for (ri, &r) in rows.iter().enumerate() {
                    into_grad!(r, |buf: &mut [f64]| {
                        add_assign(buf, &g[ri * len..(ri + 1) * len], 1.0);
                    });
                }
            }
            Op::Reshape(x) => {
                into_grad!(*x, |buf: &mut [f64]| add_assign(buf, g, 1.0));
            }
            Op::SliceCols { x, from, to } => {
                let c = self.shape(*x)[1];
                let (from, to) = (*from, *to);
                let w = to - from;
                let r = self.shape(*x)[0];
                into_grad!(*x, |buf: &mut [f64]| {
                    for i in 0..r {
                        add_assign(
                            &mut buf[i * c + from..i * c + to],
                            &g[i * w..(i + 1) * w],
                            1.0,
                        );
                    }
                });
            }
            Op::AddRowBias { x, bias } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                into_grad!(*x, |buf: &mut [f64]| add_assign(buf, g, 1.0));
                into_grad!(*bias, |buf: &mut [f64]| {
                    for i in 0..r {
                        add_assign(buf, &g[i * c..(i + 1) * c], 1.0);
                    }
                });
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                padding,
            } => {
                self.conv2d_backward(*input, *kernels, *bias, *padding, idx, g, grads);
            }
            Op::WindowMax { x, argmax } => {
                let t = self.shape(*x)[1];
                let m = self.nodes[idx].value.shape()[1];
                let d = self.shape(*x)[0];
                into_grad!(*x, |buf: &mut [f64]| {
                    for row in 0..d {
                        for mi in 0..m {
                            buf[row * t + argmax[row * m + mi]] += g[row * m + mi];
                        }
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        input: Var,
        kernels: Var,
        bias: Var,
        padding: usize,
        out_idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let ishape = self.shape(input);
        let kshape = self.shape(kernels);
        let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (c_out, _, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
        let oshape = self.nodes[out_idx].value.shape();
        let (h_out, w_out) = (oshape[1], oshape[2]);
        let hp = h + 2 * padding;
        let wp = w + 2 * padding;
        let kv = self.data(kernels);

        if self.needs(bias) {
            let buf = grads[bias.0].get_or_insert_with(|| vec![0.0; c_out]);
            for co in 0..c_out {
                buf[co] += g[co * h_out * w_out..(co + 1) * h_out * w_out]
                    .iter()
                    .sum::<f64>();
            }
        }
        if self.needs(kernels) {
            let padded = pad_planes(self.data(input), c_in, h, w, padding);
            let buf = grads[kernels.0].get_or_insert_with(|| vec![0.0; kv.len()]);
            for co in 0..c_out {
                let gplane = &g[co * h_out * w_out..(co + 1) * h_out * w_out];
                for ci in 0..c_in {
                    let src_plane = &padded[ci * hp * wp..(ci + 1) * hp * wp];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let mut s = 0.0;
                            for y in 0..h_out {
                                let src =
                                    &src_plane[(y + ky) * wp + kx..(y + ky) * wp + kx + w_out];
                                let grow = &gplane[y * w_out..(y + 1) * w_out];
                                for (a, b) in src.iter().zip(grow) {
                                    s += a * b;
                                }
                            }
                            buf[((co * c_in + ci) * kh + ky) * kw + kx] += s;
                        }
                    }
                }
            }
        }
        if self.needs(input) {
            let mut dpad = vec![0.0; c_in * hp * wp];
            for co in 0..c_out {
                let gplane = &g[co * h_out * w_out..(co + 1) * h_out * w_out];
                for ci in 0..c_in {
                    let dst_plane = &mut dpad[ci * hp * wp..(ci + 1) * hp * wp];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wgt = kv[((co * c_in + ci) * kh + ky) * kw + kx];
                            if wgt == 0.0 {
                                continue;
                            }
                            for y in 0..h_out {
                                let dst = &mut dst_plane
                                    [(y + ky) * wp + kx..(y + ky) * wp + kx + w_out];
                                let grow = &gplane[y * w_out..(y + 1) * w_out];
                                for (d, gg) in dst.iter_mut().zip(grow) {
                                    *d += wgt * gg;
                                }
                            }
                        }
                    }
                }
            }
            let buf = grads[input.0].get_or_insert_with(|| vec![0.0; c_in * h * w]);
            for ci in 0..c_in {
                for y in 0..h {
                    for x in 0..w {
                        buf[(ci * h + y) * w + x] +=
                            dpad[ci * hp * wp + (y + padding) * wp + (x + padding)];
                    }
                }
            }
        }
    }

    // ---- shape helpers ----

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                axis: "elementwise operand",
                expected: sa.iter().product(),
                got: sb.iter().product(),
            });
        }
        Ok(())
    }

    fn rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op,
                axis: "rank",
                expected: 2,
                got: s.len(),
            });
        }
        Ok((s[0], s[1]))
    }

    fn rank1(&self, op: &'static str, v: Var) -> Result<usize, TensorError> {
        let s = self.shape(v);
        if s.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op,
                axis: "rank",
                expected: 1,
                got: s.len(),
            });
        }
        Ok(s[0])
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn add_assign(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn pad_planes(data: &[f64], c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    if p == 0 {
        return data.to_vec();
    }
    let hp = h + 2 * p;
    let wp = w + 2 * p;
    let mut out = vec![0.0; c * hp * wp];
    for ci in 0..c {
        for y in 0..h {
            let src = &data[(ci * h + y) * w..(ci * h + y) * w + w];
            let dst = &mut out[ci * hp * wp + (y + p) * wp + p..ci * hp * wp + (y + p) * wp + p + w];
            dst.copy_from_slice(src);
        }
    }
    out
}
