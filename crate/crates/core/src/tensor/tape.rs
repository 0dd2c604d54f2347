use std::collections::BTreeMap;

use super::kernels::{gemm, sigmoid, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Relu,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Square,
    Recip,
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    SumAll(Var),
    SumRows(Var),
    SegmentSum(Var, usize),
    CumsumExcl(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    RowOuter(Var, Var),
    Transpose(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Unary(_, u) => match u {
                Unary::Sigmoid => "sigmoid",
                Unary::Relu => "relu",
                Unary::Sin => "sin",
                Unary::Cos => "cos",
                Unary::Exp => "exp",
                Unary::Log => "log",
                Unary::Sqrt => "sqrt",
                Unary::Abs => "abs",
                Unary::Square => "square",
                Unary::Recip => "recip",
            },
            Op::SumAll(_) => "sum_all",
            Op::SumRows(_) => "sum_rows",
            Op::SegmentSum(..) => "segment_sum",
            Op::CumsumExcl(_) => "cumsum_exclusive",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(_) => "reshape",
            Op::RowOuter(..) => "row_outer",
            Op::Transpose(_) => "transpose",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every named parameter on a tape.
pub type GradientMap = BTreeMap<String, Tensor>;

/// Define-by-run tape. Values are computed eagerly as nodes are recorded, so
/// recording the graph *is* the forward pass; [`Tape::backward`] walks the
/// nodes once in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(a: &Tensor, b: &Tensor) -> bool {
    a.numel() == b.numel() && a.rows() == b.rows()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulCol(a, b)
            | Op::RowOuter(a, b) => self.grad(*a) || self.grad(*b),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Unary(a, _)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::SegmentSum(a, _)
            | Op::CumsumExcl(a)
            | Op::SliceCols(a, ..)
            | Op::Reshape(a)
            | Op::Transpose(a) => self.grad(*a),
            Op::ConcatCols(vs) => vs.iter().any(|v| self.grad(*v)),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape_err(&self, op: &'static str, detail: String) -> Error {
        Error::Shape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    /// A named leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, name: impl Into<String>, t: Tensor) -> Var {
        self.push(Op::Param(name.into()), t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, k2, n) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(self.shape_err("matmul", format!("[{m}x{k}] . [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(MatRef::new(ta.data(), m, k), MatRef::new(tb.data(), k2, n), &mut out, 0.0);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)))
    }

    /// `a . b^T`, the layout used by linear layers stored as `[out x in]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n, k2) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(self.shape_err("matmul_nt", format!("[{m}x{k}] . [{n}x{k2}]^T")));
        }
        let mut out = vec![0.0; m * n];
        gemm(MatRef::new(ta.data(), m, k), MatRef::new(tb.data(), n, k2).t(), &mut out, 0.0);
        Ok(self.push(Op::MatMulNT(a, b), Tensor::matrix(m, n, out)))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let n = ta.cols();
        if tb.numel() != n {
            return Err(self.shape_err(
                "add_bias",
                format!("bias of {} entries for {n} columns", tb.numel()),
            ));
        }
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddBias(a, bias), out))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !same_shape(ta, tb) {
            return Err(self.shape_err(op.name(), format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let mut out = ta.clone();
        for (o, y) in out.data_mut().iter_mut().zip(tb.data()) {
            *o = f(*o, *y);
        }
        Ok(self.push(op, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.numel() != ta.rows() {
            return Err(self.shape_err(
                "mul_col",
                format!("{} row factors for {} rows", tc.numel(), ta.rows()),
            ));
        }
        let n = ta.cols();
        let mut out = ta.clone();
        for (row, s) in out.data_mut().chunks_mut(n).zip(tc.data()) {
            for o in row {
                *o *= s;
            }
        }
        Ok(self.push(Op::MulCol(a, col), out))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(Op::Scale(a, factor), out)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v += c);
        self.push(Op::AddScalar(a), out)
    }

    fn unary(&mut self, a: Var, u: Unary) -> Var {
        let mut out = self.value(a).clone();
        let f: fn(f64) -> f64 = match u {
            Unary::Sigmoid => sigmoid,
            Unary::Relu => |x| if x > 0.0 { x } else { 0.0 },
            Unary::Sin => f64::sin,
            Unary::Cos => f64::cos,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Sqrt => f64::sqrt,
            Unary::Abs => f64::abs,
            Unary::Square => |x| x * x,
            Unary::Recip => |x| 1.0 / x,
        };
        out.data_mut().iter_mut().for_each(|v| *v = f(*v));
        self.push(Op::Unary(a, u), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }
    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }
    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }
    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Recip)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s))
    }

    /// `[m x n] -> [m x 1]`
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().chunks(ta.cols()).map(|r| r.iter().sum()).collect();
        let m = out.len();
        self.push(Op::SumRows(a), Tensor::matrix(m, 1, out))
    }

    /// Sums consecutive groups of `group` rows: `[r*group x n] -> [r x n]`.
    pub fn segment_sum(&mut self, a: Var, group: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        if group == 0 || m % group != 0 {
            return Err(self.shape_err("segment_sum", format!("{m} rows in groups of {group}")));
        }
        let r = m / group;
        let mut out = vec![0.0; r * n];
        for (i, row) in ta.data().chunks(n).enumerate() {
            let dst = &mut out[(i / group) * n..(i / group + 1) * n];
            for (d, v) in dst.iter_mut().zip(row) {
                *d += v;
            }
        }
        Ok(self.push(Op::SegmentSum(a, group), Tensor::matrix(r, n, out)))
    }

    /// Exclusive prefix sum along each row.
    pub fn cumsum_exclusive(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; m * n];
        for (src, dst) in ta.data().chunks(n).zip(out.chunks_mut(n)) {
            let mut acc = 0.0;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = acc;
                acc += s;
            }
        }
        self.push(Op::CumsumExcl(a), Tensor::matrix(m, n, out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).rows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != m) {
            let rows = self.value(*bad).rows();
            return Err(self.shape_err("concat_cols", format!("row counts {m} vs {rows}")));
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(i));
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), Tensor::matrix(m, n, out)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start >= end || end > ta.cols() {
            return Err(self.shape_err(
                "slice_cols",
                format!("columns {start}..{end} of {}", ta.cols()),
            ));
        }
        let m = ta.rows();
        let out: Vec<f64> = (0..m).flat_map(|i| ta.row(i)[start..end].to_vec()).collect();
        Ok(self.push(Op::SliceCols(a, start, end), Tensor::matrix(m, end - start, out)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self
            .value(a)
            .clone()
            .reshaped(shape)
            .map_err(|e| self.shape_err("reshape", e.to_string()))?;
        Ok(self.push(Op::Reshape(a), out))
    }

    /// Per-row outer product: `out[i, c*q + j] = a[i, c] * b[i, j]`.
    pub fn row_outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(self.shape_err("row_outer", format!("{} vs {} rows", ta.rows(), tb.rows())));
        }
        let (m, p, q) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Vec::with_capacity(m * p * q);
        for i in 0..m {
            let bi = tb.row(i);
            for &x in ta.row(i) {
                out.extend(bi.iter().map(|y| x * y));
            }
        }
        Ok(self.push(Op::RowOuter(a, b), Tensor::matrix(m, p * q, out)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ta.data()[i * n + j];
            }
        }
        self.push(Op::Transpose(a), Tensor::matrix(n, m, out))
    }

    /// Reverse pass from a scalar node. Every parameter on the tape gets an
    /// entry; unreachable parameters receive zeros.
    pub fn backward(&self, output: Var) -> Result<GradientMap> {
        let out = self.value(output);
        if !out.is_scalar() {
            return Err(Error::NonScalarSeed(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Param(_) = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        let mut map = GradientMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let shape = node.value.shape().to_vec();
                let data = grads
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                let t = Tensor::new(shape, data)?;
                match map.get_mut(name) {
                    // the same parameter bound twice accumulates
                    Some(prev) => {
                        for (p, v) in prev.data_mut().iter_mut().zip(t.data()) {
                            *p += v;
                        }
                    }
                    None => {
                        map.insert(name.clone(), t);
                    }
                }
            }
        }
        Ok(map)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let y = node.value.data();

        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let gm = MatRef::new(g, m, n);
                acc(*a, &mut |s| gemm(gm, MatRef::new(tb.data(), k, n).t(), s, 1.0));
                acc(*b, &mut |s| gemm(MatRef::new(ta.data(), m, k).t(), gm, s, 1.0));
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                let gm = MatRef::new(g, m, n);
                acc(*a, &mut |s| gemm(gm, MatRef::new(tb.data(), n, k), s, 1.0));
                acc(*b, &mut |s| gemm(gm.t(), MatRef::new(ta.data(), m, k), s, 1.0));
            }
            Op::AddBias(a, b) => {
                let n = val(*a).cols();
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| {
                    for row in g.chunks(n) {
                        add_into(s, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| {
                    for ((x, d), o) in s.iter_mut().zip(g).zip(tb) {
                        *x += d * o;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, d), o) in s.iter_mut().zip(g).zip(ta) {
                        *x += d * o;
                    }
                });
            }
            Op::MulCol(a, c) => {
                let (ta, tc) = (val(*a), val(*c));
                let n = ta.cols();
                acc(*a, &mut |s| {
                    for ((srow, grow), f) in s.chunks_mut(n).zip(g.chunks(n)).zip(tc.data()) {
                        srow.iter_mut().zip(grow).for_each(|(x, d)| *x += d * f);
                    }
                });
                acc(*c, &mut |s| {
                    for (i, (grow, arow)) in g.chunks(n).zip(ta.data().chunks(n)).enumerate() {
                        s[i] += grow.iter().zip(arow).map(|(d, x)| d * x).sum::<f64>();
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d * f)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::Unary(a, u) => {
                let x = val(*a).data();
                let u = *u;
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        let d = match u {
                            Unary::Sigmoid => y[i] * (1.0 - y[i]),
                            Unary::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Sin => x[i].cos(),
                            Unary::Cos => -x[i].sin(),
                            Unary::Exp => y[i],
                            Unary::Log => 1.0 / x[i],
                            Unary::Sqrt => 0.5 / y[i],
                            Unary::Abs => {
                                if x[i] > 0.0 {
                                    1.0
                                } else if x[i] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Square => 2.0 * x[i],
                            Unary::Recip => -y[i] * y[i],
                        };
                        s[i] += g[i] * d;
                    }
                });
            }
            Op::SumAll(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::SumRows(a) => {
                let n = val(*a).cols();
                acc(*a, &mut |s| {
                    for (row, d) in s.chunks_mut(n).zip(g) {
                        row.iter_mut().for_each(|x| *x += d);
                    }
                });
            }
            Op::SegmentSum(a, group) => {
                let n = val(*a).cols();
                acc(*a, &mut |s| {
                    for (i, row) in s.chunks_mut(n).enumerate() {
                        add_into(row, &g[(i / group) * n..(i / group + 1) * n]);
                    }
                });
            }
            Op::CumsumExcl(a) => {
                let n = val(*a).cols();
                acc(*a, &mut |s| {
                    for (srow, grow) in s.chunks_mut(n).zip(g.chunks(n)) {
                        let mut tail = 0.0;
                        for j in (0..n).rev() {
                            srow[j] += tail;
                            tail += grow[j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    acc(*p, &mut |s| {
                        for (srow, grow) in s.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(srow, &grow[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let n = val(*a).cols();
                let w = end - start;
                acc(*a, &mut |s| {
                    for (srow, grow) in s.chunks_mut(n).zip(g.chunks(w)) {
                        add_into(&mut srow[*start..*end], grow);
                    }
                });
            }
            Op::RowOuter(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (p, q) = (ta.cols(), tb.cols());
                acc(*a, &mut |s| {
                    for (i, grow) in g.chunks(p * q).enumerate() {
                        let bi = tb.row(i);
                        for c in 0..p {
                            s[i * p + c] += grow[c * q..(c + 1) * q]
                                .iter()
                                .zip(bi)
                                .map(|(d, y)| d * y)
                                .sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for (i, grow) in g.chunks(p * q).enumerate() {
                        let ai = ta.row(i);
                        let srow = &mut s[i * q..(i + 1) * q];
                        for (c, x) in ai.iter().enumerate() {
                            srow.iter_mut()
                                .zip(&grow[c * q..(c + 1) * q])
                                .for_each(|(o, d)| *o += d * x);
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (val(*a).rows(), val(*a).cols());
                acc(*a, &mut |s| {
                    for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j * m + i];
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn identity_tape_returns_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.5, -2.0]));
        assert_eq!(tape.value(x).data(), &[1.5, -2.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).item(), 0.5);
    }

    #[test]
    fn small_matmul() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 1]);
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn shape_mismatch_names_node() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
        match tape.matmul(a, b) {
            Err(Error::Shape { node, op, .. }) => {
                assert_eq!(node, 2);
                assert_eq!(op, "matmul");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::scalar(3.0));
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g["x"].item(), 6.0);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::scalar(4.0));
        let y = tape.scale(c, 2.0);
        let _ = x;
        let g = tape.backward(y).unwrap();
        assert_eq!(g["x"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_seed_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarSeed(_))));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::scalar(0.0));
        let y = tape.relu(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g["x"].item(), 0.0);
    }

    #[test]
    fn linearity_of_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xt = rand_tensor(&mut rng, 3, 4);
        let (a, b) = (1.7, -0.4);
        let grad = |which: u8| {
            let mut tape = Tape::new();
            let x = tape.param("x", xt.clone());
            let f = tape.sin(x);
            let f = tape.sum_all(f);
            let sq = tape.square(x);
            let g = tape.sum_all(sq);
            let out = match which {
                0 => f,
                1 => g,
                _ => {
                    let fa = tape.scale(f, a);
                    let gb = tape.scale(g, b);
                    tape.add(fa, gb).unwrap()
                }
            };
            tape.backward(out).unwrap().remove("x").unwrap()
        };
        let (gf, gg, gc) = (grad(0), grad(1), grad(2));
        for i in 0..gc.numel() {
            let expect = a * gf.data()[i] + b * gg.data()[i];
            assert!((gc.data()[i] - expect).abs() < 1e-14);
        }
    }
}
