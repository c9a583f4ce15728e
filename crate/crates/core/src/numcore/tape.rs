use super::tensor::Tensor;
use super::vector::DEGENERACY_EPS;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `scale * x + shift`; the shift carries no gradient.
    Affine { x: Var, scale: f64 },
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    AddRow { x: Var, bias: Var },
    MulCol { x: Var, col: Var },
    Column { x: Var, col: usize },
    Relu(Var),
    Tanh(Var),
    XLogX(Var),
    Sum(Var),
    MeanRows(Var),
    GatherRows { x: Var, indices: Vec<usize> },
    RowMax { x: Var, argmax: Vec<usize> },
    RowNorm(Var),
    NormalizeRows { x: Var, norms: Vec<f64> },
    SoftmaxRows(Var),
    RowLogSumExpOffDiag(Var),
    Pick { x: Var, entries: Vec<(usize, usize)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eager record-then-reverse computation tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a tracked node, `None` if the node is not tracked.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::contract(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], f: impl FnOnce(&mut [f64])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(t.data_mut());
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node; previously issued [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `scale * x + shift`, element-wise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|e| scale * e + shift).collect();
        let out = Tensor::new(v.shape().to_vec(), data).expect("shape preserved");
        let rg = self.tracked(&[x]);
        self.push(out, Op::Affine { x, scale }, rg)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// Matrix product `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (n, k) = va.dims2()?;
        let (k2, m) = vb.dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", va.shape(), vb.shape()));
        }
        let mut out = vec![0.0; n * m];
        let (ad, bd) = (va.data(), vb.data());
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * m..(p + 1) * m];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += aip * b;
                }
            }
        }
        let out = Tensor::matrix(n, m, out)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Matrix product `a · bᵀ`; rows of both operands share a width.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (n, k) = va.dims2()?;
        let (m, k2) = vb.dims2()?;
        if k != k2 {
            return Err(shape_err("matmul_t", va.shape(), vb.shape()));
        }
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let ar = va.row(i);
            for j in 0..m {
                out.push(dot(ar, vb.row(j)));
            }
        }
        let out = Tensor::matrix(n, m, out)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(out, Op::MatMulT(a, b), rg))
    }

    /// Adds a `[1, c]` bias to every row of an `[n, c]` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (n, c) = vx.dims2()?;
        if vb.shape() != [1, c] {
            return Err(shape_err("add_row", vx.shape(), vb.shape()));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(c.max(1)).take(n) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let out = Tensor::matrix(n, c, data)?;
        let rg = self.tracked(&[x, bias]);
        Ok(self.push(out, Op::AddRow { x, bias }, rg))
    }

    /// Scales row `i` of an `[n, c]` matrix by entry `i` of an `[n, 1]` column.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (vx, vc) = (self.value(x), self.value(col));
        let (n, c) = vx.dims2()?;
        if vc.shape() != [n, 1] {
            return Err(shape_err("mul_col", vx.shape(), vc.shape()));
        }
        let mut data = vx.data().to_vec();
        for i in 0..n {
            let s = vc.data()[i];
            for o in &mut data[i * c..(i + 1) * c] {
                *o *= s;
            }
        }
        let out = Tensor::matrix(n, c, data)?;
        let rg = self.tracked(&[x, col]);
        Ok(self.push(out, Op::MulCol { x, col }, rg))
    }

    /// Column `col` of a matrix as an `[n, 1]` matrix.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        let vx = self.value(x);
        let (n, c) = vx.dims2()?;
        if col >= c {
            return Err(Error::contract(format!("column {col} out of range for {c} columns")));
        }
        let data = (0..n).map(|i| vx.data()[i * c + col]).collect();
        let out = Tensor::matrix(n, 1, data)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::Column { x, col }, rg))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|e| f(*e)).collect();
        let out = Tensor::new(v.shape().to_vec(), data).expect("shape preserved");
        let rg = self.tracked(&[x]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |e| e.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    /// `x ln x` element-wise with `0 ln 0 = 0`. Negative entries are a domain error.
    pub fn xlogx(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|e| !(**e >= 0.0)) {
            return Err(Error::domain(format!("xlogx of {bad}")));
        }
        Ok(self.map(x, |e| if e == 0.0 { 0.0 } else { e * e.ln() }, Op::XLogX(x)))
    }

    /// Sum of all entries as a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.tracked(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Column means of an `[n, c]` matrix as `[1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, c) = vx.dims2()?;
        if n == 0 {
            return Err(Error::contract("mean_rows of an empty matrix"));
        }
        let mut acc = vec![0.0; c];
        for r in vx.row_iter() {
            for (a, e) in acc.iter_mut().zip(r) {
                *a += e;
            }
        }
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        let out = Tensor::matrix(1, c, acc)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::MeanRows(x), rg))
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (n, _) = vx.dims2()?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::contract(format!("row index {bad} out of range for {n} rows")));
        }
        let out = vx.select_rows(indices);
        let rg = self.tracked(&[x]);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Row maxima as `[n, 1]`; the gradient routes to the lowest-index maximizer.
    pub fn row_max(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, c) = vx.dims2()?;
        if c == 0 {
            return Err(Error::contract("row_max over zero columns"));
        }
        let argmax: Vec<usize> = vx.row_iter().map(argmax_first).collect();
        let data = argmax.iter().enumerate().map(|(i, &j)| vx.get(i, j)).collect();
        let out = Tensor::matrix(n, 1, data)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::RowMax { x, argmax }, rg))
    }

    /// Euclidean norm of every row as `[n, 1]`. The gradient at a zero row is zero.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, _) = vx.dims2()?;
        let data = vx.row_iter().map(|r| dot(r, r).sqrt()).collect();
        let out = Tensor::matrix(n, 1, data)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::RowNorm(x), rg))
    }

    /// Scales every row to unit Euclidean norm.
    ///
    /// A row with norm at or below [`DEGENERACY_EPS`] is a domain error.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, c) = vx.dims2()?;
        let mut norms = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * c);
        for (i, r) in vx.row_iter().enumerate() {
            let norm = dot(r, r).sqrt();
            if !(norm > DEGENERACY_EPS) {
                return Err(Error::domain(format!("row {i} has degenerate norm {norm:e}")));
            }
            data.extend(r.iter().map(|e| e / norm));
            norms.push(norm);
        }
        let out = Tensor::matrix(n, c, data)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::NormalizeRows { x, norms }, rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, c) = vx.dims2()?;
        let mut data = Vec::with_capacity(n * c);
        for r in vx.row_iter() {
            data.extend(super::vector::softmax(r)?);
        }
        let out = Tensor::matrix(n, c, data)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    /// For a square matrix, `y_i = log Σ_{k≠i} exp(x[i,k])` as `[n, 1]`.
    pub fn row_logsumexp_off_diag(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, c) = vx.dims2()?;
        if n != c || n < 2 {
            return Err(Error::contract(format!(
                "off-diagonal log-sum-exp needs a square matrix of size >= 2, got {:?}",
                vx.shape()
            )));
        }
        let mut data = Vec::with_capacity(n);
        for (i, r) in vx.row_iter().enumerate() {
            let max = r
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != i)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::domain(format!("non-finite logits in row {i}")));
            }
            let s: f64 = r
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != i)
                .map(|(_, v)| (v - max).exp())
                .sum();
            data.push(max + s.ln());
        }
        let out = Tensor::matrix(n, 1, data)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::RowLogSumExpOffDiag(x), rg))
    }

    /// Picks individual `(row, col)` entries into a `[k, 1]` column.
    pub fn pick(&mut self, x: Var, entries: &[(usize, usize)]) -> Result<Var> {
        let vx = self.value(x);
        let (n, c) = vx.dims2()?;
        if let Some(&(r, k)) = entries.iter().find(|(r, k)| *r >= n || *k >= c) {
            return Err(Error::contract(format!("entry ({r}, {k}) out of range for {:?}", vx.shape())));
        }
        let data = entries.iter().map(|&(r, k)| vx.get(r, k)).collect();
        let out = Tensor::matrix(entries.len(), 1, data)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(
            out,
            Op::Pick {
                x,
                entries: entries.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a one-element `loss`.
    ///
    /// Every tracked leaf receives a gradient of its own shape (zeros when the
    /// loss does not depend on it).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        // Tracked leaves that the loss never reached still get a zero gradient.
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        let y = &node.value;
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let shape = |v: Var| self.nodes[v.0].value.shape().to_vec();

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if want(*a) {
                    accumulate(&mut grads[a.0], &shape(*a), |t| {
                        t.iter_mut().zip(gd).for_each(|(o, g)| *o += g)
                    });
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], &shape(*b), |t| {
                        t.iter_mut().zip(gd).for_each(|(o, g)| *o += sign * g)
                    });
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if want(*a) {
                    accumulate(&mut grads[a.0], &shape(*a), |t| {
                        for i in 0..t.len() {
                            t[i] += gd[i] * vb[i];
                        }
                    });
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], &shape(*b), |t| {
                        for i in 0..t.len() {
                            t[i] += gd[i] * va[i];
                        }
                    });
                }
            }
            Op::Affine { x, scale } => {
                if want(*x) {
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        t.iter_mut().zip(gd).for_each(|(o, g)| *o += scale * g)
                    });
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k) = (va.rows(), va.cols());
                let m = vb.cols();
                if want(*a) {
                    // dA = G · Bᵀ
                    accumulate(&mut grads[a.0], &shape(*a), |t| {
                        for i in 0..n {
                            let grow = &gd[i * m..(i + 1) * m];
                            for p in 0..k {
                                t[i * k + p] += dot(grow, vb.row(p));
                            }
                        }
                    });
                }
                if want(*b) {
                    // dB = Aᵀ · G
                    accumulate(&mut grads[b.0], &shape(*b), |t| {
                        for i in 0..n {
                            let grow = &gd[i * m..(i + 1) * m];
                            for p in 0..k {
                                let aip = va.data()[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for (o, g) in t[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                    *o += aip * g;
                                }
                            }
                        }
                    });
                }
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k) = (va.rows(), va.cols());
                let m = vb.rows();
                if want(*a) {
                    // dA = G · B
                    accumulate(&mut grads[a.0], &shape(*a), |t| {
                        for i in 0..n {
                            for j in 0..m {
                                let gij = gd[i * m + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for (o, b) in t[i * k..(i + 1) * k].iter_mut().zip(vb.row(j)) {
                                    *o += gij * b;
                                }
                            }
                        }
                    });
                }
                if want(*b) {
                    // dB = Gᵀ · A
                    accumulate(&mut grads[b.0], &shape(*b), |t| {
                        for i in 0..n {
                            for j in 0..m {
                                let gij = gd[i * m + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for (o, a) in t[j * k..(j + 1) * k].iter_mut().zip(va.row(i)) {
                                    *o += gij * a;
                                }
                            }
                        }
                    });
                }
            }
            Op::AddRow { x, bias } => {
                let c = y.cols();
                if want(*x) {
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        t.iter_mut().zip(gd).for_each(|(o, g)| *o += g)
                    });
                }
                if want(*bias) {
                    accumulate(&mut grads[bias.0], &shape(*bias), |t| {
                        for grow in gd.chunks(c.max(1)) {
                            t.iter_mut().zip(grow).for_each(|(o, g)| *o += g);
                        }
                    });
                }
            }
            Op::MulCol { x, col } => {
                let (vx, vc) = (self.value(*x), self.value(*col));
                let (n, c) = (vx.rows(), vx.cols());
                if want(*x) {
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for i in 0..n {
                            let s = vc.data()[i];
                            for j in 0..c {
                                t[i * c + j] += gd[i * c + j] * s;
                            }
                        }
                    });
                }
                if want(*col) {
                    accumulate(&mut grads[col.0], &shape(*col), |t| {
                        for i in 0..n {
                            t[i] += dot(&gd[i * c..(i + 1) * c], vx.row(i));
                        }
                    });
                }
            }
            Op::Column { x, col } => {
                if want(*x) {
                    let c = self.value(*x).cols();
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for (i, g) in gd.iter().enumerate() {
                            t[i * c + col] += g;
                        }
                    });
                }
            }
            Op::Relu(x) => {
                if want(*x) {
                    let vx = self.value(*x).data();
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for i in 0..t.len() {
                            if vx[i] > 0.0 {
                                t[i] += gd[i];
                            }
                        }
                    });
                }
            }
            Op::Tanh(x) => {
                if want(*x) {
                    let yd = y.data();
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for i in 0..t.len() {
                            t[i] += gd[i] * (1.0 - yd[i] * yd[i]);
                        }
                    });
                }
            }
            Op::XLogX(x) => {
                if want(*x) {
                    let vx = self.value(*x).data();
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for i in 0..t.len() {
                            if vx[i] > 0.0 {
                                t[i] += gd[i] * (vx[i].ln() + 1.0);
                            }
                        }
                    });
                }
            }
            Op::Sum(x) => {
                if want(*x) {
                    let g0 = gd[0];
                    accumulate(&mut grads[x.0], &shape(*x), |t| t.iter_mut().for_each(|o| *o += g0));
                }
            }
            Op::MeanRows(x) => {
                if want(*x) {
                    let (n, c) = self.value(*x).dims2().expect("matrix");
                    let inv = 1.0 / n as f64;
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for row in t.chunks_mut(c.max(1)) {
                            row.iter_mut().zip(gd).for_each(|(o, g)| *o += g * inv);
                        }
                    });
                }
            }
            Op::GatherRows { x, indices } => {
                if want(*x) {
                    let c = y.cols();
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for (r, &src) in indices.iter().enumerate() {
                            for j in 0..c {
                                t[src * c + j] += gd[r * c + j];
                            }
                        }
                    });
                }
            }
            Op::RowMax { x, argmax } => {
                if want(*x) {
                    let c = self.value(*x).cols();
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for (i, &j) in argmax.iter().enumerate() {
                            t[i * c + j] += gd[i];
                        }
                    });
                }
            }
            Op::RowNorm(x) => {
                if want(*x) {
                    let vx = self.value(*x);
                    let c = vx.cols();
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for (i, r) in vx.row_iter().enumerate() {
                            let norm = y.data()[i];
                            if norm == 0.0 {
                                continue;
                            }
                            let s = gd[i] / norm;
                            for j in 0..c {
                                t[i * c + j] += s * r[j];
                            }
                        }
                    });
                }
            }
            Op::NormalizeRows { x, norms } => {
                if want(*x) {
                    let c = y.cols();
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for (i, norm) in norms.iter().enumerate() {
                            let yr = y.row(i);
                            let gr = &gd[i * c..(i + 1) * c];
                            let proj = dot(yr, gr);
                            for j in 0..c {
                                t[i * c + j] += (gr[j] - yr[j] * proj) / norm;
                            }
                        }
                    });
                }
            }
            Op::SoftmaxRows(x) => {
                if want(*x) {
                    let c = y.cols();
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for i in 0..y.rows() {
                            let yr = y.row(i);
                            let gr = &gd[i * c..(i + 1) * c];
                            let proj = dot(yr, gr);
                            for j in 0..c {
                                t[i * c + j] += yr[j] * (gr[j] - proj);
                            }
                        }
                    });
                }
            }
            Op::RowLogSumExpOffDiag(x) => {
                if want(*x) {
                    let vx = self.value(*x);
                    let n = vx.rows();
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for i in 0..n {
                            let lse = y.data()[i];
                            let r = vx.row(i);
                            for k in 0..n {
                                if k != i {
                                    t[i * n + k] += gd[i] * (r[k] - lse).exp();
                                }
                            }
                        }
                    });
                }
            }
            Op::Pick { x, entries } => {
                if want(*x) {
                    let c = self.value(*x).cols();
                    accumulate(&mut grads[x.0], &shape(*x), |t| {
                        for (e, &(r, k)) in entries.iter().enumerate() {
                            t[r * c + k] += gd[e];
                        }
                    });
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the first maximal entry.
pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(&[0.3, -1.2, 2.5, 0.0]));
        let p = tape.softmax_rows(x).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        for v in g.get(x).unwrap().data() {
            assert!(v.abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(&[1.0, 2.0]));
        let unused = tape.param(Tensor::zeros(&[2, 3]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused).unwrap().shape(), &[2, 3]);
        assert!(g.get(unused).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constants_are_not_tracked() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.param(Tensor::scalar(5.0));
        let y = tape.mul(c, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn shared_operand_accumulates() {
        // y = sum(x * x + x) → dy/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(&[1.5, -2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.add(sq, x).unwrap();
        let y = tape.sum(s);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, -3.0]);
    }

    #[test]
    fn normalize_rows_rejects_zero_row() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        assert!(matches!(tape.normalize_rows(x), Err(Error::Domain(_))));
    }

    #[test]
    fn row_max_ties_go_to_lowest_index() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::matrix(1, 3, vec![0.4, 0.4, 0.2]).unwrap());
        let m = tape.row_max(x).unwrap();
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn clear_resets_the_tape() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.0));
        let _ = tape.scale(x, 2.0);
        assert_eq!(tape.len(), 2);
        tape.clear();
        assert!(tape.is_empty());
    }
}
