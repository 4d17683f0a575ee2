//! Reverse-mode differentiation on a Wengert tape.
//!
//! Every primitive records itself as a node; [`Tape::grad`] walks the tape
//! backwards and emits the vector-Jacobian products as *new nodes on the
//! same tape*. Gradients are therefore ordinary differentiable values, so
//! differentiating the gradient-norm penalty of a critic with respect to
//! the critic's parameters is just a second `grad` call.
//!
//! A tape is confined to one logical thread; independent tapes may run
//! concurrently. Replaying a tape reproduces every value bit-identically.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{relative_error, Real, Tensor};

/// Handle to a node on a specific tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var, Vec<usize>),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    PadCols(Var, usize, usize),
    ConcatRows(Var, Var),
    SliceRows(Var, usize, usize),
    PadRows(Var, usize, usize),
    GatherCols(Var, Rc<Vec<usize>>),
    ScatterCols(Var, Rc<Vec<usize>>, usize),
    AddRow(Var, Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    TileRows(Var, usize),
    TileCols(Var, usize),
    BroadcastScalar(Var, Vec<usize>),
    AddScalar(Var, Real),
    MulScalar(Var, Real),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    LeakyRelu(Var, Real),
    MulConst(Var, Rc<Tensor>),
    AddConst(Var, Rc<Tensor>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::PadCols(..) => "pad_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::PadRows(..) => "pad_rows",
            Op::GatherCols(..) => "gather_cols",
            Op::ScatterCols(..) => "scatter_cols",
            Op::AddRow(..) => "add_row",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::TileRows(..) => "tile_rows",
            Op::TileCols(..) => "tile_cols",
            Op::BroadcastScalar(..) => "broadcast_scalar",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Sqrt(..) => "sqrt",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::MulConst(..) => "mul_const",
            Op::AddConst(..) => "add_const",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn eval_op<'a, F>(op: &Op, val: F) -> Result<Tensor>
where
    F: Fn(Var) -> &'a Tensor,
{
    let out = match op {
        Op::Leaf => unreachable!("leaf values are stored, not recomputed"),
        Op::Add(a, b) => zip(val(*a), val(*b), |x, y| x + y),
        Op::Sub(a, b) => zip(val(*a), val(*b), |x, y| x - y),
        Op::Mul(a, b) => zip(val(*a), val(*b), |x, y| x * y),
        Op::Div(a, b) => zip(val(*a), val(*b), |x, y| x / y),
        Op::Neg(a) => map(val(*a), |x| -x),
        Op::MatMul(a, b) => matmul_kernel(val(*a), val(*b)),
        Op::Transpose(a) => {
            let t = val(*a);
            let (r, c) = (t.rows(), t.cols());
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = t.data()[i * c + j];
                }
            }
            Tensor::from_vec(&[c, r], out)?
        }
        Op::Reshape(a, shape) => Tensor::from_vec(shape, val(*a).data().to_vec())?,
        Op::ConcatCols(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let r = ta.rows();
            let (ca, cb) = (ta.cols(), tb.cols());
            let mut out = Vec::with_capacity(r * (ca + cb));
            for i in 0..r {
                out.extend_from_slice(ta.row(i));
                out.extend_from_slice(tb.row(i));
            }
            Tensor::from_vec(&[r, ca + cb], out)?
        }
        Op::SliceCols(a, start, len) => {
            let t = val(*a);
            let (r, c) = (t.rows(), t.cols());
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
            }
            Tensor::from_vec(&[r, *len], out)?
        }
        Op::PadCols(a, start, total) => {
            let t = val(*a);
            let (r, c) = (t.rows(), t.cols());
            let mut out = vec![0.0; r * total];
            for i in 0..r {
                out[i * total + start..i * total + start + c].copy_from_slice(t.row(i));
            }
            Tensor::from_vec(&[r, *total], out)?
        }
        Op::ConcatRows(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let mut out = Vec::with_capacity(ta.len() + tb.len());
            out.extend_from_slice(ta.data());
            out.extend_from_slice(tb.data());
            Tensor::from_vec(&[ta.rows() + tb.rows(), ta.cols()], out)?
        }
        Op::SliceRows(a, start, len) => {
            let t = val(*a);
            let c = t.cols();
            let out = t.data()[start * c..(start + len) * c].to_vec();
            Tensor::from_vec(&[*len, c], out)?
        }
        Op::PadRows(a, start, total) => {
            let t = val(*a);
            let c = t.cols();
            let mut out = vec![0.0; total * c];
            out[start * c..(start + t.rows()) * c].copy_from_slice(t.data());
            Tensor::from_vec(&[*total, c], out)?
        }
        Op::GatherCols(a, idx) => {
            let t = val(*a);
            let c = t.cols();
            let out = idx
                .iter()
                .enumerate()
                .map(|(i, &j)| t.data()[i * c + j])
                .collect();
            Tensor::vector(out)
        }
        Op::ScatterCols(a, idx, cols) => {
            let t = val(*a);
            let mut out = vec![0.0; t.len() * cols];
            for (i, &j) in idx.iter().enumerate() {
                out[i * cols + j] = t.data()[i];
            }
            Tensor::from_vec(&[t.len(), *cols], out)?
        }
        Op::AddRow(a, b) => {
            let (t, row) = (val(*a), val(*b));
            let c = t.cols();
            let mut out = t.data().to_vec();
            for i in 0..t.rows() {
                for j in 0..c {
                    out[i * c + j] += row.data()[j];
                }
            }
            Tensor::from_vec(t.shape(), out)?
        }
        Op::Sum(a) => Tensor::scalar(val(*a).data().iter().sum()),
        Op::SumRows(a) => {
            let t = val(*a);
            let out = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
            Tensor::vector(out)
        }
        Op::SumCols(a) => {
            let t = val(*a);
            let c = t.cols();
            let mut out = vec![0.0; c];
            for i in 0..t.rows() {
                for j in 0..c {
                    out[j] += t.data()[i * c + j];
                }
            }
            Tensor::vector(out)
        }
        Op::TileRows(a, n) => {
            let v = val(*a);
            let mut out = Vec::with_capacity(n * v.len());
            for _ in 0..*n {
                out.extend_from_slice(v.data());
            }
            Tensor::from_vec(&[*n, v.len()], out)?
        }
        Op::TileCols(a, n) => {
            let v = val(*a);
            let mut out = Vec::with_capacity(v.len() * n);
            for &x in v.data() {
                out.extend(std::iter::repeat(x).take(*n));
            }
            Tensor::from_vec(&[v.len(), *n], out)?
        }
        Op::BroadcastScalar(a, shape) => {
            let s = val(*a).data()[0];
            let n: usize = shape.iter().product();
            Tensor::from_vec(shape, vec![s; n])?
        }
        Op::AddScalar(a, c) => map(val(*a), |x| x + c),
        Op::MulScalar(a, c) => map(val(*a), |x| x * c),
        Op::Exp(a) => map(val(*a), |x| x.exp()),
        Op::Ln(a) => map(val(*a), |x| x.ln()),
        Op::Sqrt(a) => map(val(*a), |x| x.sqrt()),
        Op::LeakyRelu(a, slope) => map(val(*a), |x| if x >= 0.0 { x } else { slope * x }),
        Op::MulConst(a, c) => zip(val(*a), c, |x, y| x * y),
        Op::AddConst(a, c) => zip(val(*a), c, |x, y| x + y),
    };
    Ok(out)
}

fn map(t: &Tensor, f: impl Fn(Real) -> Real) -> Tensor {
    let data = t.data().iter().map(|&x| f(x)).collect();
    Tensor::from_vec(t.shape(), data).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(Real, Real) -> Real) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

fn matmul_kernel(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    // i-k-j order: deterministic ascending-k accumulation per output cell.
    for i in 0..m {
        for p in 0..k {
            let aip = a.data()[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data()[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    Tensor::from_vec(&[m, n], out).expect("matmul shape")
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "var #{} is not on this tape (len {})",
                v.0,
                self.nodes.len()
            )))
        }
    }

    fn push_value(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = eval_op(&op, |v| &self.nodes[v.0].value)?;
        self.push_value(value, op)
    }

    /// Record an input value (parameter, data, or constant).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push_value(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Real) -> Result<Var> {
        self.leaf(Tensor::scalar(value))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape(a, b, "add")?;
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape(a, b, "sub")?;
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape(a, b, "mul")?;
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        self.same_shape(a, b, "div")?;
        self.push(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        self.push(Op::Neg(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        if ta.cols() != tb.rows() {
            return Err(Error::Shape(format!(
                "matmul inner dims: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        if self.value(a).shape().len() != 2 {
            return Err(Error::Shape("transpose needs rank-2".into()));
        }
        self.push(Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {:?}",
                self.value(a).shape(),
                shape
            )));
        }
        self.push(Op::Reshape(a, shape.to_vec()))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if self.value(a).rows() != self.value(b).rows() {
            return Err(Error::Shape("concat_cols row counts differ".into()));
        }
        self.push(Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check(a)?;
        if start + len > self.value(a).cols() {
            return Err(Error::Shape("slice_cols out of range".into()));
        }
        self.push(Op::SliceCols(a, start, len))
    }

    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        self.check(a)?;
        if start + self.value(a).cols() > total {
            return Err(Error::Shape("pad_cols out of range".into()));
        }
        self.push(Op::PadCols(a, start, total))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if self.value(a).cols() != self.value(b).cols() {
            return Err(Error::Shape("concat_rows column counts differ".into()));
        }
        self.push(Op::ConcatRows(a, b))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check(a)?;
        if start + len > self.value(a).rows() {
            return Err(Error::Shape("slice_rows out of range".into()));
        }
        self.push(Op::SliceRows(a, start, len))
    }

    pub fn pad_rows(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        self.check(a)?;
        if start + self.value(a).rows() > total {
            return Err(Error::Shape("pad_rows out of range".into()));
        }
        self.push(Op::PadRows(a, start, total))
    }

    /// `out[i] = x[i, idx[i]]`.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        if idx.len() != t.rows() {
            return Err(Error::Shape("gather_cols needs one index per row".into()));
        }
        if idx.iter().any(|&j| j >= t.cols()) {
            return Err(Error::Shape("gather_cols index out of range".into()));
        }
        self.push(Op::GatherCols(a, Rc::new(idx.to_vec())))
    }

    pub fn scatter_cols(&mut self, a: Var, idx: &[usize], cols: usize) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        if t.shape().len() != 1 || idx.len() != t.len() {
            return Err(Error::Shape("scatter_cols needs rank-1 with matching indices".into()));
        }
        if idx.iter().any(|&j| j >= cols) {
            return Err(Error::Shape("scatter_cols index out of range".into()));
        }
        self.push(Op::ScatterCols(a, Rc::new(idx.to_vec()), cols))
    }

    /// Broadcast-add a rank-1 bias over the rows of a matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.check(a)?;
        self.check(bias)?;
        if self.value(bias).shape().len() != 1 || self.value(bias).len() != self.value(a).cols() {
            return Err(Error::Shape("add_row bias must be rank-1 of matching width".into()));
        }
        self.push(Op::AddRow(a, bias))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        self.push(Op::Sum(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        if self.value(a).shape().len() != 2 {
            return Err(Error::Shape("sum_rows needs rank-2".into()));
        }
        self.push(Op::SumRows(a))
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        if self.value(a).shape().len() != 2 {
            return Err(Error::Shape("sum_cols needs rank-2".into()));
        }
        self.push(Op::SumCols(a))
    }

    pub fn tile_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        self.check(a)?;
        if self.value(a).shape().len() != 1 {
            return Err(Error::Shape("tile_rows needs rank-1".into()));
        }
        self.push(Op::TileRows(a, n))
    }

    pub fn tile_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        self.check(a)?;
        if self.value(a).shape().len() != 1 {
            return Err(Error::Shape("tile_cols needs rank-1".into()));
        }
        self.push(Op::TileCols(a, n))
    }

    pub fn broadcast_scalar(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        if !self.value(a).is_scalar() {
            return Err(Error::Shape("broadcast_scalar needs a scalar".into()));
        }
        self.push(Op::BroadcastScalar(a, shape.to_vec()))
    }

    pub fn add_scalar(&mut self, a: Var, c: Real) -> Result<Var> {
        self.check(a)?;
        self.push(Op::AddScalar(a, c))
    }

    pub fn mul_scalar(&mut self, a: Var, c: Real) -> Result<Var> {
        self.check(a)?;
        self.push(Op::MulScalar(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        self.push(Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        self.push(Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        self.push(Op::Sqrt(a))
    }

    /// Elementwise `x >= 0 ? x : slope*x`; the subgradient at 0 takes the
    /// positive branch. `slope` must lie in (0, 1).
    pub fn leaky_relu(&mut self, a: Var, slope: Real) -> Result<Var> {
        self.check(a)?;
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Contract(format!(
                "leaky_relu slope must be in (0,1), got {slope}"
            )));
        }
        self.push(Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        self.push(Op::LeakyRelu(a, 0.0))
    }

    /// Elementwise multiply by a constant tensor (no gradient into the constant).
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        self.check(a)?;
        if self.value(a).shape() != c.shape() {
            return Err(Error::Shape("mul_const shape mismatch".into()));
        }
        self.push(Op::MulConst(a, Rc::new(c.clone())))
    }

    /// Elementwise add a constant tensor.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        self.check(a)?;
        if self.value(a).shape() != c.shape() {
            return Err(Error::Shape("add_const shape mismatch".into()));
        }
        self.push(Op::AddConst(a, Rc::new(c.clone())))
    }

    /// Mean over all elements.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum(a)?;
        self.mul_scalar(s, 1.0 / n as Real)
    }

    fn accum(&mut self, adj: &mut [Option<Var>], target: Var, contrib: Var) -> Result<()> {
        adj[target.0] = Some(match adj[target.0] {
            Some(prev) => self.add(prev, contrib)?,
            None => contrib,
        });
        Ok(())
    }

    /// Reverse-mode gradients of a scalar `output` with respect to `inputs`.
    ///
    /// The returned vars live on the same tape and are differentiable in
    /// turn. Inputs the output does not depend on get zero gradients.
    pub fn grad(&mut self, output: Var, inputs: &[Var]) -> Result<Vec<Var>> {
        self.check(output)?;
        for v in inputs {
            self.check(*v)?;
        }
        if !self.value(output).is_scalar() {
            return Err(Error::Contract(format!(
                "grad output must be scalar, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let n = output.0;
        let mut adj: Vec<Option<Var>> = vec![None; n + 1];
        let out_shape = self.value(output).shape().to_vec();
        let seed = self.leaf(Tensor::from_vec(&out_shape, vec![1.0])?)?;
        adj[n] = Some(seed);

        for i in (0..=n).rev() {
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            let out_var = Var(i);
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accum(&mut adj, a, g)?;
                    self.accum(&mut adj, b, g)?;
                }
                Op::Sub(a, b) => {
                    self.accum(&mut adj, a, g)?;
                    let gb = self.neg(g)?;
                    self.accum(&mut adj, b, gb)?;
                }
                Op::Mul(a, b) => {
                    let ga = self.mul(g, b)?;
                    self.accum(&mut adj, a, ga)?;
                    let gb = self.mul(g, a)?;
                    self.accum(&mut adj, b, gb)?;
                }
                Op::Div(a, b) => {
                    let ga = self.div(g, b)?;
                    self.accum(&mut adj, a, ga)?;
                    // d(a/b)/db = -out/b
                    let t = self.mul(g, out_var)?;
                    let t = self.div(t, b)?;
                    let gb = self.neg(t)?;
                    self.accum(&mut adj, b, gb)?;
                }
                Op::Neg(a) => {
                    let ga = self.neg(g)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::MatMul(a, b) => {
                    let bt = self.transpose(b)?;
                    let ga = self.matmul(g, bt)?;
                    self.accum(&mut adj, a, ga)?;
                    let at = self.transpose(a)?;
                    let gb = self.matmul(at, g)?;
                    self.accum(&mut adj, b, gb)?;
                }
                Op::Transpose(a) => {
                    let ga = self.transpose(g)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::Reshape(a, _) => {
                    let shape = self.value(a).shape().to_vec();
                    let ga = self.reshape(g, &shape)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (self.value(a).cols(), self.value(b).cols());
                    let ga = self.slice_cols(g, 0, ca)?;
                    self.accum(&mut adj, a, ga)?;
                    let gb = self.slice_cols(g, ca, cb)?;
                    self.accum(&mut adj, b, gb)?;
                }
                Op::SliceCols(a, start, _) => {
                    let total = self.value(a).cols();
                    let ga = self.pad_cols(g, start, total)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::PadCols(a, start, _) => {
                    let len = self.value(a).cols();
                    let ga = self.slice_cols(g, start, len)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::ConcatRows(a, b) => {
                    let (ra, rb) = (self.value(a).rows(), self.value(b).rows());
                    let ga = self.slice_rows(g, 0, ra)?;
                    self.accum(&mut adj, a, ga)?;
                    let gb = self.slice_rows(g, ra, rb)?;
                    self.accum(&mut adj, b, gb)?;
                }
                Op::SliceRows(a, start, _) => {
                    let total = self.value(a).rows();
                    let ga = self.pad_rows(g, start, total)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::PadRows(a, start, _) => {
                    let len = self.value(a).rows();
                    let ga = self.slice_rows(g, start, len)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::GatherCols(a, idx) => {
                    let cols = self.value(a).cols();
                    let ga = self.scatter_cols(g, &idx, cols)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::ScatterCols(a, idx, _) => {
                    let ga = self.gather_cols(g, &idx)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::AddRow(a, b) => {
                    self.accum(&mut adj, a, g)?;
                    let gb = self.sum_cols(g)?;
                    self.accum(&mut adj, b, gb)?;
                }
                Op::Sum(a) => {
                    let shape = self.value(a).shape().to_vec();
                    let ga = self.broadcast_scalar(g, &shape)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::SumRows(a) => {
                    let cols = self.value(a).cols();
                    let ga = self.tile_cols(g, cols)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::SumCols(a) => {
                    let rows = self.value(a).rows();
                    let ga = self.tile_rows(g, rows)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::TileRows(a, _) => {
                    let ga = self.sum_cols(g)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::TileCols(a, _) => {
                    let ga = self.sum_rows(g)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::BroadcastScalar(a, _) => {
                    let s = self.sum(g)?;
                    let shape = self.value(a).shape().to_vec();
                    let ga = self.reshape(s, &shape)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::AddScalar(a, _) => {
                    self.accum(&mut adj, a, g)?;
                }
                Op::MulScalar(a, c) => {
                    let ga = self.mul_scalar(g, c)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::Exp(a) => {
                    let ga = self.mul(g, out_var)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::Ln(a) => {
                    let ga = self.div(g, a)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::Sqrt(a) => {
                    let two = self.mul_scalar(out_var, 2.0)?;
                    let ga = self.div(g, two)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::LeakyRelu(a, slope) => {
                    // Piecewise-constant mask captured from the input values;
                    // exact a.e., and constant under further differentiation.
                    let mask = map(self.value(a), |x| if x >= 0.0 { 1.0 } else { slope });
                    let ga = self.mul_const(g, &mask)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::MulConst(a, c) => {
                    let ga = self.mul_const(g, &c)?;
                    self.accum(&mut adj, a, ga)?;
                }
                Op::AddConst(a, _) => {
                    self.accum(&mut adj, a, g)?;
                }
            }
        }

        inputs
            .iter()
            .map(|v| match adj.get(v.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.value(*v).shape().to_vec();
                    self.leaf(Tensor::zeros(&shape))
                }
            })
            .collect()
    }

    /// L2 norm of `d(d_out)/d(f_hat)` as a differentiable scalar.
    ///
    /// A critic that ignores `f_hat` yields norm 0; the penalty
    /// `(norm - 1)^2` can be differentiated again with respect to the
    /// critic's parameters because the gradient lives on the tape.
    pub fn input_grad_norm(&mut self, d_out: Var, f_hat: Var) -> Result<Var> {
        self.check(d_out)?;
        self.check(f_hat)?;
        let g = self.grad(d_out, &[f_hat])?[0];
        let flat_len = self.value(g).len();
        let flat = self.reshape(g, &[1, flat_len])?;
        let sq = self.mul(flat, flat)?;
        let total = self.sum(sq)?;
        self.sqrt(total)
    }

    /// Recompute every non-leaf value from scratch, in recorded order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                op => eval_op(op, |v| &values[v.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True iff replaying reproduces every stored value bit-for-bit.
    pub fn replay_is_bit_identical(&self) -> Result<bool> {
        let values = self.replay()?;
        Ok(values
            .iter()
            .zip(&self.nodes)
            .all(|(v, n)| v.bit_eq(&n.value)))
    }
}

/// Worst-case relative error between reverse-mode and central-difference
/// gradients of a scalar-valued function of one tensor.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: Real) -> Result<Real>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Contract("finite_diff_check eps must be > 0".into()));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone())?;
    let out = f(&mut tape, xv)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::Contract("finite_diff_check needs a scalar function".into()));
    }
    let g = tape.grad(out, &[xv])?[0];
    let analytic = tape.value(g).clone();

    let eval = |data: Vec<Real>| -> Result<Real> {
        let mut t = Tape::new();
        let v = t.leaf(Tensor::from_vec(x.shape(), data)?)?;
        let y = f(&mut t, v)?;
        t.value(y).item()
    };

    let mut worst: Real = 0.0;
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        plus[i] += eps;
        let mut minus = x.data().to_vec();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
