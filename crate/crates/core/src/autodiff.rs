//! Dense 2-D tensors and a reverse-mode tape.
//!
//! Every operation on a [`Tape`] stores its output value together with the
//! indices of its inputs. [`Tape::backward`] walks the tape once in reverse
//! and returns the gradient of a scalar node with respect to every leaf.
//! Parameters enter as leaves tagged with their slot in a parameter list so
//! gradients can be gathered per slot afterwards.

use serde::{Deserialize, Serialize};

/// Row-major matrix of `f64`. Vectors are `1 × n` rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape {rows}x{cols} does not match {} values", data.len());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Self { rows: 1, cols: values.len(), data: values }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, b: &Tensor) -> Tensor {
        assert_eq!(self.cols, b.rows, "matmul {:?} x {:?}", self.shape(), b.shape());
        let mut out = Tensor::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let br = &b.data[k * b.cols..(k + 1) * b.cols];
                for (x, &y) in o.iter_mut().zip(br) {
                    *x += a * y;
                }
            }
        }
        out
    }

    /// `self · bᵀ`.
    pub fn matmul_t(&self, b: &Tensor) -> Tensor {
        assert_eq!(self.cols, b.cols, "matmul_t {:?} x {:?}ᵀ", self.shape(), b.shape());
        let mut out = Tensor::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a = self.row_slice(i);
            for j in 0..b.rows {
                out.data[i * b.rows + j] = dot(a, b.row_slice(j));
            }
        }
        out
    }

    /// `selfᵀ · b`.
    pub fn t_matmul(&self, b: &Tensor) -> Tensor {
        assert_eq!(self.rows, b.rows, "t_matmul {:?}ᵀ x {:?}", self.shape(), b.shape());
        let mut out = Tensor::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let ar = self.row_slice(k);
            let br = b.row_slice(k);
            for (i, &a) in ar.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (x, &y) in o.iter_mut().zip(br) {
                    *x += a * y;
                }
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Column sums as a `1 × cols` row.
    fn sum_rows(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row_slice(r)) {
                *o += v;
            }
        }
        out
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    /// Stand-in before a real node exists; using it on a tape panics.
    pub(crate) const DANGLING: Var = Var(usize::MAX);
}

pub const LEAKY_SLOPE: f64 = 0.01;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    MeanCols(Var),
    /// Per-column standardisation over the rows; keeps `1 / σ` per column.
    NormRows(Var, Vec<f64>),
    /// `log softmax(x)[pick]` over the allowed entries; keeps the softmax.
    LogSoftmaxPick(Var, usize, Vec<f64>),
    Sum(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; receives no gradient that anyone reads.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A trainable tensor living in parameter slot `slot`.
    pub fn param(&mut self, slot: usize, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Param(slot))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.shape(), self.value(b).shape(), "add shape mismatch");
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((r.rows, r.cols), (1, x.cols), "add_row shape mismatch");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, &b) in v.data[i * v.cols..(i + 1) * v.cols].iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 × cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((r.rows, r.cols), (1, x.cols), "mul_row shape mismatch");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, &b) in v.data[i * v.cols..(i + 1) * v.cols].iter_mut().zip(&r.data) {
                *o *= b;
            }
        }
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x });
        self.push(v, Op::LeakyRelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for r in 0..v.rows {
            let row = &mut v.data[r * v.cols..(r + 1) * v.cols];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.data[r * cols + off..r * cols + off + t.cols].copy_from_slice(t.row_slice(r));
            }
            off += t.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let mut v = Tensor::zeros(x.rows, len);
        for r in 0..x.rows {
            v.data[r * len..(r + 1) * len].copy_from_slice(&x.row_slice(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let mut v = Tensor::zeros(idx.len(), x.cols);
        for (k, &r) in idx.iter().enumerate() {
            v.data[k * x.cols..(k + 1) * x.cols].copy_from_slice(x.row_slice(r));
        }
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    /// Mean over rows: `n × c → 1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.rows as f64;
        let v = x.sum_rows().map(|s| s / n);
        self.push(v, Op::MeanRows(a))
    }

    /// Mean over columns: `n × c → n × 1`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols as f64;
        let data = (0..x.rows).map(|r| x.row_slice(r).iter().sum::<f64>() / c).collect();
        self.push(Tensor::new(x.rows, 1, data), Op::MeanCols(a))
    }

    /// Standardises each column over the rows (population variance plus
    /// [`NORM_EPS`]).
    pub fn norm_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.rows as f64;
        let mut v = x.clone();
        let mut inv = Vec::with_capacity(x.cols);
        for c in 0..x.cols {
            let mean = (0..x.rows).map(|r| x.at(r, c)).sum::<f64>() / n;
            let var = (0..x.rows).map(|r| (x.at(r, c) - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            for r in 0..x.rows {
                v.data[r * x.cols + c] = (x.at(r, c) - mean) * is;
            }
            inv.push(is);
        }
        self.push(v, Op::NormRows(a, inv))
    }

    /// `log softmax(a)[pick]`, the softmax taken over entries with
    /// `allowed[i]`. `a` is read as a flat vector.
    pub fn log_softmax_pick(&mut self, a: Var, allowed: &[bool], pick: usize) -> Var {
        let probs = masked_softmax(&self.value(a).data, allowed);
        assert!(allowed[pick], "picked entry {pick} is masked");
        let lp = probs[pick].ln();
        self.push(Tensor::scalar(lp), Op::LogSoftmaxPick(a, pick, probs))
    }

    /// Sum of `1 × 1` nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let s = parts.iter().map(|&p| self.value(p).data[0]).sum();
        self.push(Tensor::scalar(s), Op::Sum(parts.to_vec()))
    }

    /// Gradients of the `1 × 1` node `root` with respect to every leaf.
    /// Entries are `None` for leaves that `root` does not depend on.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), [1, 1], "backward needs a scalar root");
        let mut g: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        g[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    g[i] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = dy.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&dy);
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = dy.matmul(self.value(*b));
                    let db = dy.t_matmul(self.value(*a));
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, dy.clone());
                    acc(&mut g, *a, dy);
                }
                Op::AddRow(a, r) => {
                    acc(&mut g, *r, dy.sum_rows());
                    acc(&mut g, *a, dy);
                }
                Op::MulRow(a, r) => {
                    let x = self.value(*a);
                    let row = self.value(*r);
                    let mut da = dy.clone();
                    let mut dr = Tensor::zeros(1, x.cols);
                    for i in 0..x.rows {
                        for c in 0..x.cols {
                            let k = i * x.cols + c;
                            da.data[k] = dy.data[k] * row.data[c];
                            dr.data[c] += dy.data[k] * x.data[k];
                        }
                    }
                    acc(&mut g, *a, da);
                    acc(&mut g, *r, dr);
                }
                Op::Scale(a, k) => acc(&mut g, *a, dy.map(|d| d * k)),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(&mut g, *a, zip_map(&dy, x, |d, x| if x > 0.0 { d } else { 0.0 }));
                }
                Op::LeakyRelu(a) => {
                    let x = self.value(*a);
                    acc(&mut g, *a, zip_map(&dy, x, |d, x| if x > 0.0 { d } else { LEAKY_SLOPE * d }));
                }
                Op::Tanh(a) => acc(&mut g, *a, zip_map(&dy, y, |d, t| d * (1.0 - t * t))),
                Op::SoftmaxRows(a) => {
                    let mut dx = dy.clone();
                    for r in 0..y.rows {
                        let yr = y.row_slice(r);
                        let s = dot(dy.row_slice(r), yr);
                        for c in 0..y.cols {
                            let k = r * y.cols + c;
                            dx.data[k] = yr[c] * (dy.data[k] - s);
                        }
                    }
                    acc(&mut g, *a, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut d = Tensor::zeros(y.rows, w);
                        for r in 0..y.rows {
                            d.data[r * w..(r + 1) * w].copy_from_slice(&dy.row_slice(r)[off..off + w]);
                        }
                        acc(&mut g, p, d);
                        off += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        d.data[r * x.cols + start..r * x.cols + start + y.cols].copy_from_slice(dy.row_slice(r));
                    }
                    acc(&mut g, *a, d);
                }
                Op::GatherRows(a, idx) => {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for (k, &r) in idx.iter().enumerate() {
                        for (o, &v) in d.data[r * x.cols..(r + 1) * x.cols].iter_mut().zip(dy.row_slice(k)) {
                            *o += v;
                        }
                    }
                    acc(&mut g, *a, d);
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let n = x.rows as f64;
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        for c in 0..x.cols {
                            d.data[r * x.cols + c] = dy.data[c] / n;
                        }
                    }
                    acc(&mut g, *a, d);
                }
                Op::MeanCols(a) => {
                    let x = self.value(*a);
                    let c = x.cols as f64;
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        for k in 0..x.cols {
                            d.data[r * x.cols + k] = dy.data[r] / c;
                        }
                    }
                    acc(&mut g, *a, d);
                }
                Op::NormRows(a, inv) => {
                    let n = y.rows as f64;
                    let mut dx = Tensor::zeros(y.rows, y.cols);
                    for c in 0..y.cols {
                        let mut m_dy = 0.0;
                        let mut m_dyy = 0.0;
                        for r in 0..y.rows {
                            let k = r * y.cols + c;
                            m_dy += dy.data[k];
                            m_dyy += dy.data[k] * y.data[k];
                        }
                        m_dy /= n;
                        m_dyy /= n;
                        for r in 0..y.rows {
                            let k = r * y.cols + c;
                            dx.data[k] = inv[c] * (dy.data[k] - m_dy - y.data[k] * m_dyy);
                        }
                    }
                    acc(&mut g, *a, dx);
                }
                Op::LogSoftmaxPick(a, pick, probs) => {
                    let x = self.value(*a);
                    let s = dy.data[0];
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for (k, &p) in probs.iter().enumerate() {
                        d.data[k] = -s * p;
                    }
                    d.data[*pick] += s;
                    acc(&mut g, *a, d);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(&mut g, p, dy.clone());
                    }
                }
            }
        }
        Gradients { grads: g }
    }

    /// Parameter leaves on the tape as `(slot, var)`.
    pub fn params(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(slot) => Some((slot, Var(i))),
            _ => None,
        })
    }

    /// Adds the gradient of every parameter leaf into `out[slot]`, scaled by
    /// `k`. Leaves are visited in tape order, so the summation order is
    /// fixed for a given tape.
    pub fn accumulate_param_grads(&self, grads: &Gradients, k: f64, out: &mut [Tensor]) {
        for (slot, v) in self.params() {
            if let Some(d) = grads.get(v) {
                for (o, &x) in out[slot].data.iter_mut().zip(&d.data) {
                    *o += k * x;
                }
            }
        }
    }
}

fn acc(g: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut g[v.0] {
        Some(t) => t.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

/// Softmax restricted to `allowed`; masked entries get exactly zero.
pub fn masked_softmax(logits: &[f64], allowed: &[bool]) -> Vec<f64> {
    assert_eq!(logits.len(), allowed.len(), "mask length mismatch");
    let m = logits
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().zip(allowed).map(|(&x, &a)| if a { (x - m).exp() } else { 0.0 }).collect();
    let s: f64 = p.iter().sum();
    for v in &mut p {
        *v /= s;
    }
    p
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of `f` over every entry of every parameter.
    fn check(params: &mut [Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var, h: f64) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect();
        let root = f(&mut tape, &vars);
        let grads = tape.backward(root);
        let mut analytic: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        tape.accumulate_param_grads(&grads, 1.0, &mut analytic);
        let eval = |ps: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().enumerate().map(|(i, p)| t.param(i, p)).collect();
            let r = f(&mut t, &vs);
            t.value(r).data[0]
        };
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            for k in 0..params[i].len() {
                let orig = params[i].data[k];
                params[i].data[k] = orig + h;
                let up = eval(params);
                params[i].data[k] = orig - h;
                let down = eval(params);
                params[i].data[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[i].data[k];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
            }
        }
        worst
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, 3, 4);
        let b = rand_tensor(&mut rng, 5, 4);
        let bt = Tensor::new(4, 5, (0..20).map(|k| b.at(k % 5, k / 5)).collect());
        let x = a.matmul_t(&b);
        let y = a.matmul(&bt);
        for (p, q) in x.data.iter().zip(&y.data) {
            assert!((p - q).abs() < 1e-12);
        }
        let at = Tensor::new(4, 3, (0..12).map(|k| a.at(k % 3, k / 3)).collect());
        let z = at.t_matmul(&bt.matmul_t(&bt));
        assert_eq!(z.shape(), [3, 4]);
    }

    #[test]
    fn linear_graph_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = vec![rand_tensor(&mut rng, 4, 3), rand_tensor(&mut rng, 3, 5), rand_tensor(&mut rng, 1, 5)];
        let f = |t: &mut Tape, v: &[Var]| {
            let h = t.matmul(v[0], v[1]);
            let h = t.add_row(h, v[2]);
            let m = t.mean_rows(h);
            let c = t.mean_cols(m);
            t.scale(c, 3.0)
        };
        // Quadratic in the parameters, so central differences are exact up
        // to rounding.
        assert!(check(&mut ps, &f, 1e-3) < 1e-9);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ps = vec![
                rand_tensor(&mut rng, 5, 3),
                rand_tensor(&mut rng, 3, 6),
                rand_tensor(&mut rng, 1, 6),
                rand_tensor(&mut rng, 1, 6),
                rand_tensor(&mut rng, 6, 4),
            ];
            let f = |t: &mut Tape, v: &[Var]| {
                let h = t.matmul(v[0], v[1]);
                let h = t.norm_rows(h);
                let h = t.mul_row(h, v[2]);
                let h = t.add_row(h, v[3]);
                let a = t.relu(h);
                let b = t.leaky_relu(h);
                let q = t.slice_cols(a, 0, 3);
                let k = t.slice_cols(b, 3, 3);
                let s = t.matmul_t(q, k);
                let s = t.scale(s, 0.5);
                let s = t.softmax_rows(s);
                let z = t.matmul(s, h);
                let z = t.add(z, h);
                let z = t.concat_cols(&[z, a]);
                let g = t.gather_rows(z, &[4, 0, 4]);
                let g = t.slice_cols(g, 2, 6);
                let w = t.matmul(g, v[4]);
                let w = t.tanh(w);
                let m = t.mean_cols(w);
                let l1 = t.log_softmax_pick(m, &[true, false, true], 2);
                let r = t.mean_rows(z);
                let r = t.tanh(r);
                let l2 = t.log_softmax_pick(r, &[true; 12], 5);
                t.sum(&[l1, l2])
            };
            let err = check(&mut ps, &f, 1e-6);
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let p = masked_softmax(&[1.0, 50.0, -2.0], &[true, false, true]);
        assert_eq!(p[1], 0.0);
        assert!((p[0] + p[2] - 1.0).abs() < 1e-15);
        assert_eq!(masked_softmax(&[3.0, 4.0], &[false, true]), vec![0.0, 1.0]);
    }

    #[test]
    fn norm_rows_standardises_columns() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(3, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]));
        let y = t.norm_rows(x);
        let v = t.value(y);
        assert!((v.at(0, 0) + v.at(2, 0)).abs() < 1e-12);
        assert!(v.at(1, 0).abs() < 1e-12);
        // A constant column maps to zeros rather than NaN.
        assert!((0..3).all(|r| v.at(r, 1) == 0.0));
    }
}
