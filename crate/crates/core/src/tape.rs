//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied during a forward pass as a
//! node in topological order. [`Tape::backward`] walks the nodes in
//! reverse, accumulating gradients into per-node slots; a node consumed by
//! several downstream operations receives the sum of their contributions.
//!
//! Values are immutable once recorded. Independent tapes may live on
//! different threads; a single tape is single-threaded.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis selector for [`Tape::softmax`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftmaxAxis {
    /// Normalize over the rows within each column: column sums become 1.
    PerColumn,
    /// Normalize over the columns within each row: row sums become 1.
    PerRow,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Hadamard(ValueId, ValueId),
    Scale(ValueId, f64),
    AddConst(ValueId),
    Transpose(ValueId),
    Softmax(ValueId, SoftmaxAxis),
    LayerNormCols {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        epsilon: f64,
    },
    ConvTime {
        x: ValueId,
        kernel: ValueId,
    },
    Elu(ValueId),
    Relu(ValueId),
    Ln(ValueId),
    VConcat(ValueId, ValueId),
    HConcat(Vec<ValueId>),
    TileCols(ValueId, usize),
    ColSums(ValueId),
    SumAll(ValueId),
    Pick {
        x: ValueId,
        row: usize,
        col: usize,
    },
}

/// Recorded computation graph with one gradient slot per node.
pub struct Tape<T> {
    values: Vec<Matrix<T>>,
    ops: Vec<Op>,
    grads: Vec<Matrix<T>>,
    has_grads: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            has_grads: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Record an input node (parameter, data, or constant).
    pub fn leaf(&mut self, value: Matrix<T>) -> ValueId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: ValueId) -> &Matrix<T> {
        &self.values[id.0]
    }

    /// Value of a 1x1 node as a plain scalar.
    pub fn scalar_value(&self, id: ValueId) -> T {
        let m = self.value(id);
        debug_assert!(m.is_scalar());
        m.as_slice()[0]
    }

    /// Gradient of the most recent `backward` target with respect to `id`.
    /// Zero-filled for nodes the loss does not depend on.
    pub fn grad(&self, id: ValueId) -> Option<&Matrix<T>> {
        if self.has_grads {
            Some(&self.grads[id.0])
        } else {
            None
        }
    }

    fn push(&mut self, value: Matrix<T>, op: Op) -> ValueId {
        let id = ValueId(self.values.len());
        self.values.push(value);
        self.ops.push(op);
        id
    }

    fn shape_of(&self, id: ValueId) -> String {
        self.values[id.0].shape_string()
    }

    // ── Forward primitives ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ar, ac) = (self.values[a.0].rows(), self.values[a.0].cols());
        let (br, bc) = (self.values[b.0].rows(), self.values[b.0].cols());
        if ac != br {
            return Err(Error::shape("matmul", self.shape_of(a), self.shape_of(b)));
        }
        let mut out = Matrix::zeros(ar, bc);
        {
            let lhs = &self.values[a.0];
            let rhs = &self.values[b.0];
            for i in 0..ar {
                for k in 0..ac {
                    let aik = lhs[(i, k)];
                    for j in 0..bc {
                        out[(i, j)] = out[(i, j)] + aik * rhs[(k, j)];
                    }
                }
            }
        }
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: ValueId,
        b: ValueId,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<ValueId> {
        let ma = &self.values[a.0];
        let mb = &self.values[b.0];
        if ma.rows() != mb.rows() || ma.cols() != mb.cols() {
            return Err(Error::shape(name, ma.shape_string(), mb.shape_string()));
        }
        let data: Vec<T> = ma
            .as_slice()
            .iter()
            .zip(mb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Matrix::from_vec(ma.rows(), ma.cols(), data);
        Ok(self.push(out, op))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        let cv = T::from_f64(c);
        let out = self.values[a.0].map(|v| v * cv);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: ValueId, c: f64) -> ValueId {
        let cv = T::from_f64(c);
        let out = self.values[a.0].map(|v| v + cv);
        self.push(out, Op::AddConst(a))
    }

    pub fn transpose(&mut self, a: ValueId) -> ValueId {
        let out = self.values[a.0].transposed();
        self.push(out, Op::Transpose(a))
    }

    /// Numerically stable softmax along the chosen axis (max subtraction
    /// within each slice).
    pub fn softmax(&mut self, a: ValueId, axis: SoftmaxAxis) -> ValueId {
        let out = softmax_forward(&self.values[a.0], axis);
        self.push(out, Op::Softmax(a, axis))
    }

    /// LayerNorm applied to every column independently: each column is
    /// normalized over its rows (biased variance), then scaled by `gamma`
    /// and shifted by `beta` (both column vectors of matching height).
    pub fn layer_norm_cols(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        epsilon: f64,
    ) -> Result<ValueId> {
        let d = self.values[x.0].rows();
        for (name, id) in [("layer_norm gamma", gamma), ("layer_norm beta", beta)] {
            let m = &self.values[id.0];
            if m.rows() != d || m.cols() != 1 {
                return Err(Error::shape(name, self.shape_of(x), m.shape_string()));
            }
        }
        let xv = &self.values[x.0];
        let g = &self.values[gamma.0];
        let b = &self.values[beta.0];
        let eps = T::from_f64(epsilon);
        let den = T::from_f64(d as f64);
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        for j in 0..xv.cols() {
            let mut mean = T::zero();
            for i in 0..d {
                mean = mean + xv[(i, j)];
            }
            mean = mean / den;
            let mut var = T::zero();
            for i in 0..d {
                let c = xv[(i, j)] - mean;
                var = var + c * c;
            }
            var = var / den;
            let inv_std = T::one() / (var + eps).sqrt();
            for i in 0..d {
                out[(i, j)] = (xv[(i, j)] - mean) * inv_std * g[(i, 0)] + b[(i, 0)];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNormCols {
                x,
                gamma,
                beta,
                epsilon,
            },
        ))
    }

    /// 1-D convolution along the time axis (columns) with a 3-tap kernel,
    /// zero padding, one input/output channel, no bias. Each feature row
    /// is convolved independently, so rows never mix.
    pub fn conv1d_time(&mut self, x: ValueId, kernel: ValueId) -> Result<ValueId> {
        let k = &self.values[kernel.0];
        if k.rows() != 3 || k.cols() != 1 {
            return Err(Error::shape("conv1d_time kernel", "3x1", k.shape_string()));
        }
        let xv = &self.values[x.0];
        let (d, n) = (xv.rows(), xv.cols());
        let (k0, k1, k2) = (k[(0, 0)], k[(1, 0)], k[(2, 0)]);
        let mut out = Matrix::zeros(d, n);
        for i in 0..d {
            for t in 0..n {
                let mut acc = k1 * xv[(i, t)];
                if t > 0 {
                    acc = acc + k0 * xv[(i, t - 1)];
                }
                if t + 1 < n {
                    acc = acc + k2 * xv[(i, t + 1)];
                }
                out[(i, t)] = acc;
            }
        }
        Ok(self.push(out, Op::ConvTime { x, kernel }))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: ValueId) -> ValueId {
        let out = self.values[a.0].map(|v| {
            if v > T::zero() {
                v
            } else {
                v.exp() - T::one()
            }
        });
        self.push(out, Op::Elu(a))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let out = self.values[a.0].map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    /// Elementwise natural logarithm.
    pub fn ln(&mut self, a: ValueId) -> ValueId {
        let out = self.values[a.0].map(|v| v.ln());
        self.push(out, Op::Ln(a))
    }

    /// Stack `a` on top of `b` (row concatenation).
    pub fn vconcat(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let ma = &self.values[a.0];
        let mb = &self.values[b.0];
        if ma.cols() != mb.cols() {
            return Err(Error::shape(
                "vconcat",
                ma.shape_string(),
                mb.shape_string(),
            ));
        }
        let mut data = Vec::with_capacity(ma.len() + mb.len());
        data.extend_from_slice(ma.as_slice());
        data.extend_from_slice(mb.as_slice());
        let out = Matrix::from_vec(ma.rows() + mb.rows(), ma.cols(), data);
        Ok(self.push(out, Op::VConcat(a, b)))
    }

    /// Concatenate equal-height matrices left to right (column concatenation).
    pub fn hconcat(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::Usage("hconcat of zero matrices".into()));
        }
        let rows = self.values[parts[0].0].rows();
        let mut cols = 0;
        for &p in parts {
            let m = &self.values[p.0];
            if m.rows() != rows {
                return Err(Error::shape(
                    "hconcat",
                    format!("{rows}x_"),
                    m.shape_string(),
                ));
            }
            cols += m.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let m = &self.values[p.0];
            for i in 0..rows {
                for j in 0..m.cols() {
                    out[(i, at + j)] = m[(i, j)];
                }
            }
            at += m.cols();
        }
        Ok(self.push(out, Op::HConcat(parts.to_vec())))
    }

    /// Repeat a column vector `n` times side by side.
    pub fn tile_cols(&mut self, v: ValueId, n: usize) -> Result<ValueId> {
        let m = &self.values[v.0];
        if m.cols() != 1 || n == 0 {
            return Err(Error::shape(
                "tile_cols",
                m.shape_string(),
                format!("_x{n}"),
            ));
        }
        let rows = m.rows();
        let out = Matrix::from_fn(rows, n, |i, _| m[(i, 0)]);
        Ok(self.push(out, Op::TileCols(v, n)))
    }

    /// Column sums as a column vector: output[j] = sum_i input[i, j].
    pub fn col_sums(&mut self, a: ValueId) -> ValueId {
        let m = &self.values[a.0];
        let mut out = Matrix::zeros(m.cols(), 1);
        for j in 0..m.cols() {
            let mut acc = T::zero();
            for i in 0..m.rows() {
                acc = acc + m[(i, j)];
            }
            out[(j, 0)] = acc;
        }
        self.push(out, Op::ColSums(a))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum_all(&mut self, a: ValueId) -> ValueId {
        let s = self.values[a.0].sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumAll(a))
    }

    /// Extract a single entry as a 1x1 node.
    pub fn pick(&mut self, a: ValueId, row: usize, col: usize) -> Result<ValueId> {
        let m = &self.values[a.0];
        if row >= m.rows() || col >= m.cols() {
            return Err(Error::Usage(format!(
                "pick ({row}, {col}) out of range for {}",
                m.shape_string()
            )));
        }
        let v = m[(row, col)];
        Ok(self.push(Matrix::from_vec(1, 1, vec![v]), Op::Pick { x: a, row, col }))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar node. After this call the gradient slot
    /// of `loss` holds exactly 1 and every node reachable from it holds
    /// d(loss)/d(node), with fan-out contributions summed.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if !self.values[loss.0].is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.shape_of(loss),
            });
        }
        self.grads = self
            .values
            .iter()
            .map(|v| Matrix::zeros(v.rows(), v.cols()))
            .collect();
        self.grads[loss.0] = Matrix::from_vec(1, 1, vec![T::one()]);
        self.has_grads = true;

        for i in (0..=loss.0).rev() {
            let op = self.ops[i].clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let g = self.grads[i].clone();
                    // dA = G B^T, dB = A^T G
                    let bt = self.values[b.0].transposed();
                    let da = matmul_plain(&g, &bt);
                    let at = self.values[a.0].transposed();
                    let db = matmul_plain(&at, &g);
                    self.grads[a.0].add_assign(&da);
                    self.grads[b.0].add_assign(&db);
                }
                Op::Add(a, b) => {
                    let g = self.grads[i].clone();
                    self.grads[a.0].add_assign(&g);
                    self.grads[b.0].add_assign(&g);
                }
                Op::Sub(a, b) => {
                    let g = self.grads[i].clone();
                    self.grads[a.0].add_assign(&g);
                    let neg = g.scaled(T::zero() - T::one());
                    self.grads[b.0].add_assign(&neg);
                }
                Op::Hadamard(a, b) => {
                    let g = self.grads[i].clone();
                    let da = hadamard_plain(&g, &self.values[b.0]);
                    let db = hadamard_plain(&g, &self.values[a.0]);
                    self.grads[a.0].add_assign(&da);
                    self.grads[b.0].add_assign(&db);
                }
                Op::Scale(a, c) => {
                    let da = self.grads[i].scaled(T::from_f64(c));
                    self.grads[a.0].add_assign(&da);
                }
                Op::AddConst(a) => {
                    let g = self.grads[i].clone();
                    self.grads[a.0].add_assign(&g);
                }
                Op::Transpose(a) => {
                    let da = self.grads[i].transposed();
                    self.grads[a.0].add_assign(&da);
                }
                Op::Softmax(a, axis) => {
                    let da = softmax_backward(&self.values[i], &self.grads[i], axis);
                    self.grads[a.0].add_assign(&da);
                }
                Op::LayerNormCols {
                    x,
                    gamma,
                    beta,
                    epsilon,
                } => {
                    let (dx, dg, db) = layer_norm_backward(
                        &self.values[x.0],
                        &self.values[gamma.0],
                        epsilon,
                        &self.grads[i],
                    );
                    self.grads[x.0].add_assign(&dx);
                    self.grads[gamma.0].add_assign(&dg);
                    self.grads[beta.0].add_assign(&db);
                }
                Op::ConvTime { x, kernel } => {
                    let (dx, dk) =
                        conv_backward(&self.values[x.0], &self.values[kernel.0], &self.grads[i]);
                    self.grads[x.0].add_assign(&dx);
                    self.grads[kernel.0].add_assign(&dk);
                }
                Op::Elu(a) => {
                    let g = &self.grads[i];
                    let out = &self.values[i];
                    // out > 0 iff input > 0; for x <= 0, d/dx = e^x = out + 1.
                    let da = Matrix::from_fn(out.rows(), out.cols(), |r, c| {
                        let o = out[(r, c)];
                        let slope = if o > T::zero() { T::one() } else { o + T::one() };
                        g[(r, c)] * slope
                    });
                    self.grads[a.0].add_assign(&da);
                }
                Op::Relu(a) => {
                    let g = &self.grads[i];
                    let xin = &self.values[a.0];
                    let da = Matrix::from_fn(xin.rows(), xin.cols(), |r, c| {
                        if xin[(r, c)] > T::zero() {
                            g[(r, c)]
                        } else {
                            T::zero()
                        }
                    });
                    self.grads[a.0].add_assign(&da);
                }
                Op::Ln(a) => {
                    let g = &self.grads[i];
                    let xin = &self.values[a.0];
                    let da = Matrix::from_fn(xin.rows(), xin.cols(), |r, c| g[(r, c)] / xin[(r, c)]);
                    self.grads[a.0].add_assign(&da);
                }
                Op::VConcat(a, b) => {
                    let g = &self.grads[i];
                    let ra = self.values[a.0].rows();
                    let cols = g.cols();
                    let da = Matrix::from_fn(ra, cols, |r, c| g[(r, c)]);
                    let rb = self.values[b.0].rows();
                    let db = Matrix::from_fn(rb, cols, |r, c| g[(ra + r, c)]);
                    self.grads[a.0].add_assign(&da);
                    self.grads[b.0].add_assign(&db);
                }
                Op::HConcat(parts) => {
                    let g = self.grads[i].clone();
                    let mut at = 0;
                    for p in parts {
                        let w = self.values[p.0].cols();
                        let rows = self.values[p.0].rows();
                        let dp = Matrix::from_fn(rows, w, |r, c| g[(r, at + c)]);
                        self.grads[p.0].add_assign(&dp);
                        at += w;
                    }
                }
                Op::TileCols(v, n) => {
                    let g = &self.grads[i];
                    debug_assert_eq!(g.cols(), n);
                    let rows = g.rows();
                    let mut dv = Matrix::zeros(rows, 1);
                    for r in 0..rows {
                        let mut acc = T::zero();
                        for c in 0..g.cols() {
                            acc = acc + g[(r, c)];
                        }
                        dv[(r, 0)] = acc;
                    }
                    self.grads[v.0].add_assign(&dv);
                }
                Op::ColSums(a) => {
                    let g = &self.grads[i];
                    let m = &self.values[a.0];
                    let da = Matrix::from_fn(m.rows(), m.cols(), |_, c| g[(c, 0)]);
                    self.grads[a.0].add_assign(&da);
                }
                Op::SumAll(a) => {
                    let g = self.grads[i].as_slice()[0];
                    let m = &self.values[a.0];
                    let da = Matrix::filled(m.rows(), m.cols(), g);
                    self.grads[a.0].add_assign(&da);
                }
                Op::Pick { x, row, col } => {
                    let g = self.grads[i].as_slice()[0];
                    let m = &self.values[x.0];
                    let mut da = Matrix::zeros(m.rows(), m.cols());
                    da[(row, col)] = g;
                    self.grads[x.0].add_assign(&da);
                }
            }
        }
        Ok(())
    }
}

// ── Kernels shared by forward and backward ─────────────────────────────

fn matmul_plain<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            let aik = a[(i, k)];
            for j in 0..b.cols() {
                out[(i, j)] = out[(i, j)] + aik * b[(k, j)];
            }
        }
    }
    out
}

fn hadamard_plain<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] * b[(i, j)])
}

fn softmax_forward<T: Scalar>(m: &Matrix<T>, axis: SoftmaxAxis) -> Matrix<T> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    match axis {
        SoftmaxAxis::PerRow => {
            for i in 0..m.rows() {
                softmax_slice(
                    (0..m.cols()).map(|j| m[(i, j)]),
                    m.cols(),
                    |j, v| out[(i, j)] = v,
                );
            }
        }
        SoftmaxAxis::PerColumn => {
            for j in 0..m.cols() {
                softmax_slice(
                    (0..m.rows()).map(|i| m[(i, j)]),
                    m.rows(),
                    |i, v| out[(i, j)] = v,
                );
            }
        }
    }
    out
}

fn softmax_slice<T: Scalar>(
    values: impl Iterator<Item = T> + Clone,
    len: usize,
    mut write: impl FnMut(usize, T),
) {
    debug_assert!(len > 0);
    let mut max = T::neg_infinity();
    for v in values.clone() {
        if v > max {
            max = v;
        }
    }
    let mut exps = Vec::with_capacity(len);
    let mut total = T::zero();
    for v in values {
        let e = (v - max).exp();
        exps.push(e);
        total = total + e;
    }
    for (k, e) in exps.into_iter().enumerate() {
        write(k, e / total);
    }
}

fn softmax_backward<T: Scalar>(out: &Matrix<T>, g: &Matrix<T>, axis: SoftmaxAxis) -> Matrix<T> {
    // ds_k = s_k * (g_k - <g, s>) within each slice.
    let mut dx = Matrix::zeros(out.rows(), out.cols());
    match axis {
        SoftmaxAxis::PerRow => {
            for i in 0..out.rows() {
                let mut dot = T::zero();
                for j in 0..out.cols() {
                    dot = dot + g[(i, j)] * out[(i, j)];
                }
                for j in 0..out.cols() {
                    dx[(i, j)] = out[(i, j)] * (g[(i, j)] - dot);
                }
            }
        }
        SoftmaxAxis::PerColumn => {
            for j in 0..out.cols() {
                let mut dot = T::zero();
                for i in 0..out.rows() {
                    dot = dot + g[(i, j)] * out[(i, j)];
                }
                for i in 0..out.rows() {
                    dx[(i, j)] = out[(i, j)] * (g[(i, j)] - dot);
                }
            }
        }
    }
    dx
}

fn layer_norm_backward<T: Scalar>(
    x: &Matrix<T>,
    gamma: &Matrix<T>,
    epsilon: f64,
    g: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let d = x.rows();
    let dn = T::from_f64(d as f64);
    let eps = T::from_f64(epsilon);
    let mut dx = Matrix::zeros(d, x.cols());
    let mut dgamma = Matrix::zeros(d, 1);
    let mut dbeta = Matrix::zeros(d, 1);
    for j in 0..x.cols() {
        let mut mean = T::zero();
        for i in 0..d {
            mean = mean + x[(i, j)];
        }
        mean = mean / dn;
        let mut var = T::zero();
        for i in 0..d {
            let c = x[(i, j)] - mean;
            var = var + c * c;
        }
        var = var / dn;
        let inv_std = T::one() / (var + eps).sqrt();

        let xhat: Vec<T> = (0..d).map(|i| (x[(i, j)] - mean) * inv_std).collect();
        let dxhat: Vec<T> = (0..d).map(|i| g[(i, j)] * gamma[(i, 0)]).collect();

        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for i in 0..d {
            sum_dxhat = sum_dxhat + dxhat[i];
            sum_dxhat_xhat = sum_dxhat_xhat + dxhat[i] * xhat[i];
            dgamma[(i, 0)] = dgamma[(i, 0)] + g[(i, j)] * xhat[i];
            dbeta[(i, 0)] = dbeta[(i, 0)] + g[(i, j)];
        }
        for i in 0..d {
            dx[(i, j)] =
                inv_std / dn * (dn * dxhat[i] - sum_dxhat - xhat[i] * sum_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

fn conv_backward<T: Scalar>(
    x: &Matrix<T>,
    kernel: &Matrix<T>,
    g: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>) {
    let (d, n) = (x.rows(), x.cols());
    let mut dx = Matrix::zeros(d, n);
    let mut dk = Matrix::zeros(3, 1);
    for i in 0..d {
        for t in 0..n {
            let go = g[(i, t)];
            // out[i, t] = k0 x[i, t-1] + k1 x[i, t] + k2 x[i, t+1]
            for (tap, offset) in [(0usize, -1isize), (1, 0), (2, 1)] {
                let src = t as isize + offset;
                if src >= 0 && (src as usize) < n {
                    let xs = x[(i, src as usize)];
                    dk[(tap, 0)] = dk[(tap, 0)] + go * xs;
                    dx[(i, src as usize)] = dx[(i, src as usize)] + go * kernel[(tap, 0)];
                }
            }
        }
    }
    (dx, dk)
}
