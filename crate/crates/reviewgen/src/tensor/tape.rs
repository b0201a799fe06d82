//! Wengert tape: ops append nodes during the forward pass, `backward`
//! walks them once in reverse. Nodes are topologically ordered by
//! construction since every input must already exist on the tape.

use super::{Tensor, TensorError};

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

// Some recorded operands (e.g. the AddScalar constant) are not needed by
// the backward pass but are kept so a node fully describes its op.
#[allow(dead_code)]
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// a[m,n] + row[n] broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    SoftmaxRows(Var),
    /// Column-wise max over rows; saved argmax row per column.
    MaxPoolRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Transpose(Var),
    /// Row-wise layer norm with gain/bias; saved (mean, inv_std) per row.
    LayerNorm(Var, Var, Var, Vec<(f64, f64)>),
    /// Rows of a table selected by index.
    GatherRows(Var, Vec<usize>),
    /// One column pick per row: y[i] = a[i, cols[i]].
    GatherPerRow(Var, Vec<usize>),
    /// y[i, ids[j]] += src[i, j]; duplicate ids accumulate.
    ScatterCols(Var, Vec<usize>, usize),
    /// Zero-pad columns on the right up to `width`.
    PadCols(Var, usize),
    /// a[m,n] * s[m,1] broadcast over columns.
    MulCol(Var, Var),
    /// e[t,s] = w . tanh(keys[s] + queries[t] + bias); additive attention energies.
    AdditiveScores {
        keys: Var,
        queries: Var,
        bias: Var,
        weight: Var,
    },
    Sum(Var),
    Mean(Var),
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

const LN_EPS: f64 = 1e-8;

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

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn value(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
    }

    fn rows(&self, v: Var) -> usize {
        let s = &self.nodes[v.0].shape;
        if s.len() >= 2 {
            s[0]
        } else {
            1
        }
    }

    fn cols(&self, v: Var) -> usize {
        let s = &self.nodes[v.0].shape;
        match s.len() {
            0 => 1,
            1 => s[0],
            _ => s[1],
        }
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        needs_grad: bool,
    ) -> Result<Var, TensorError> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if !data.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Record a leaf. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            "leaf",
            t.shape.clone(),
            t.data.clone(),
            Op::Leaf,
            t.requires_grad,
        )
        .expect("leaf values must be finite")
    }

    /// Record a non-differentiable constant.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        self.push("constant", shape, data, Op::Leaf, false)
            .expect("constants must be finite")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = (self.rows(a), self.cols(a));
        let (k2, n) = (self.rows(b), self.cols(b));
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].data;
            let bv = &self.nodes[b.0].data;
            matmul_into(av, bv, &mut out, m, k, n);
        }
        let ng = self.any_grad(&[a, b]);
        self.push("matmul", vec![m, n], out, Op::Matmul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.any_grad(&[a, b]);
        self.push(name, shape, out, op, ng)
    }

    /// `a[m,n] + row` where `row` has n elements.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        if self.nodes[row.0].data.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[row.0].shape.clone(),
            });
        }
        let mut out = self.nodes[a.0].data.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += self.nodes[row.0].data[j];
            }
        }
        let ng = self.any_grad(&[a, row]);
        self.push("add_row", vec![m, n], out, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.any_grad(&[a]);
        self.push("scale", shape, out, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x + c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.any_grad(&[a]);
        self.push("add_scalar", shape, out, Op::AddScalar(a, c), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| f(*x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.any_grad(&[a]);
        self.push(name, shape, out, op, ng)
    }

    /// Row-wise softmax, stabilized by row-max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        if n == 0 {
            return Err(TensorError::EmptyInput { op: "softmax_rows" });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.nodes[a.0].data[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                z += e;
            }
            for j in 0..n {
                out[i * n + j] /= z;
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.any_grad(&[a]);
        self.push("softmax_rows", shape, out, Op::SoftmaxRows(a), ng)
    }

    /// Column-wise max over rows: x[r,d] -> [d]. Gradient goes to the first
    /// maximal row of each column.
    pub fn maxpool_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, d) = (self.rows(a), self.cols(a));
        if r == 0 {
            return Err(TensorError::EmptyInput { op: "maxpool_rows" });
        }
        let av = &self.nodes[a.0].data;
        let mut out = vec![f64::NEG_INFINITY; d];
        let mut arg = vec![0usize; d];
        for i in 0..r {
            for j in 0..d {
                let x = av[i * d + j];
                if x > out[j] {
                    out[j] = x;
                    arg[j] = i;
                }
            }
        }
        let ng = self.any_grad(&[a]);
        self.push("maxpool_rows", vec![d], out, Op::MaxPoolRows(a, arg), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat_rows" });
        }
        let n = self.cols(parts[0]);
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            if self.cols(p) != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
            m += self.rows(p);
            out.extend_from_slice(&self.nodes[p.0].data);
        }
        let ng = self.any_grad(parts);
        self.push(
            "concat_rows",
            vec![m, n],
            out,
            Op::ConcatRows(parts.to_vec()),
            ng,
        )
    }

    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Result<Var, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        if r1 > m || r0 > r1 {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_rows",
                index: r1,
                extent: m,
            });
        }
        let out = self.nodes[a.0].data[r0 * n..r1 * n].to_vec();
        let ng = self.any_grad(&[a]);
        self.push(
            "slice_rows",
            vec![r1 - r0, n],
            out,
            Op::SliceRows(a, r0, r1),
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat_cols" });
        }
        let m = self.rows(parts[0]);
        let widths: Vec<usize> = parts.iter().map(|&p| self.cols(p)).collect();
        for &p in parts {
            if self.rows(p) != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
        }
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let mut off = 0;
            for (pi, &p) in parts.iter().enumerate() {
                let w = widths[pi];
                out[i * n + off..i * n + off + w]
                    .copy_from_slice(&self.nodes[p.0].data[i * w..(i + 1) * w]);
                off += w;
            }
        }
        let ng = self.any_grad(parts);
        self.push(
            "concat_cols",
            vec![m, n],
            out,
            Op::ConcatCols(parts.to_vec()),
            ng,
        )
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Result<Var, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        if c1 > n || c0 > c1 {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_cols",
                index: c1,
                extent: n,
            });
        }
        let w = c1 - c0;
        let mut out = vec![0.0; m * w];
        for i in 0..m {
            out[i * w..(i + 1) * w].copy_from_slice(&self.nodes[a.0].data[i * n + c0..i * n + c1]);
        }
        let ng = self.any_grad(&[a]);
        self.push("slice_cols", vec![m, w], out, Op::SliceCols(a, c0, c1), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.nodes[a.0].data[i * n + j];
            }
        }
        let ng = self.any_grad(&[a]);
        self.push("transpose", vec![n, m], out, Op::Transpose(a), ng)
    }

    /// Row-wise layer normalization with learnable gain and bias (each n elements).
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        if self.nodes[gain.0].data.len() != n || self.nodes[bias.0].data.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[gain.0].shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        let mut stats = Vec::with_capacity(m);
        for i in 0..m {
            let row = &self.nodes[a.0].data[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let inv_std = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..n {
                let xh = (row[j] - mean) * inv_std;
                out[i * n + j] = self.nodes[gain.0].data[j] * xh + self.nodes[bias.0].data[j];
            }
            stats.push((mean, inv_std));
        }
        let ng = self.any_grad(&[a, gain, bias]);
        self.push(
            "layer_norm",
            vec![m, n],
            out,
            Op::LayerNorm(a, gain, bias, stats),
            ng,
        )
    }

    /// Select rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (v, d) = (self.rows(table), self.cols(table));
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: id,
                    extent: v,
                });
            }
            out.extend_from_slice(&self.nodes[table.0].data[id * d..(id + 1) * d]);
        }
        let ng = self.any_grad(&[table]);
        self.push(
            "gather_rows",
            vec![ids.len(), d],
            out,
            Op::GatherRows(table, ids.to_vec()),
            ng,
        )
    }

    /// y[i] = a[i, cols[i]].
    pub fn gather_per_row(&mut self, a: Var, cols: &[usize]) -> Result<Var, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        if cols.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "gather_per_row",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: vec![cols.len()],
            });
        }
        let mut out = Vec::with_capacity(m);
        for (i, &c) in cols.iter().enumerate() {
            if c >= n {
                return Err(TensorError::IndexOutOfBounds {
                    op: "gather_per_row",
                    index: c,
                    extent: n,
                });
            }
            out.push(self.nodes[a.0].data[i * n + c]);
        }
        let ng = self.any_grad(&[a]);
        self.push(
            "gather_per_row",
            vec![m],
            out,
            Op::GatherPerRow(a, cols.to_vec()),
            ng,
        )
    }

    /// Scatter columns of src[m,l] into [m,width]: out[i, ids[j]] += src[i,j].
    pub fn scatter_cols(
        &mut self,
        src: Var,
        ids: &[usize],
        width: usize,
    ) -> Result<Var, TensorError> {
        let (m, l) = (self.rows(src), self.cols(src));
        if ids.len() != l {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_cols",
                lhs: self.nodes[src.0].shape.clone(),
                rhs: vec![ids.len()],
            });
        }
        for &id in ids {
            if id >= width {
                return Err(TensorError::IndexOutOfBounds {
                    op: "scatter_cols",
                    index: id,
                    extent: width,
                });
            }
        }
        let mut out = vec![0.0; m * width];
        for i in 0..m {
            for (j, &id) in ids.iter().enumerate() {
                out[i * width + id] += self.nodes[src.0].data[i * l + j];
            }
        }
        let ng = self.any_grad(&[src]);
        self.push(
            "scatter_cols",
            vec![m, width],
            out,
            Op::ScatterCols(src, ids.to_vec(), width),
            ng,
        )
    }

    /// Zero-pad columns on the right to `width`.
    pub fn pad_cols(&mut self, a: Var, width: usize) -> Result<Var, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        if width < n {
            return Err(TensorError::IndexOutOfBounds {
                op: "pad_cols",
                index: width,
                extent: n,
            });
        }
        let mut out = vec![0.0; m * width];
        for i in 0..m {
            out[i * width..i * width + n].copy_from_slice(&self.nodes[a.0].data[i * n..(i + 1) * n]);
        }
        let ng = self.any_grad(&[a]);
        self.push("pad_cols", vec![m, width], out, Op::PadCols(a, width), ng)
    }

    /// a[m,n] * s[m,1], broadcasting the per-row scalar over columns.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        if self.nodes[s.0].data.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "mul_col",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[s.0].shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let c = self.nodes[s.0].data[i];
            for j in 0..n {
                out[i * n + j] = self.nodes[a.0].data[i * n + j] * c;
            }
        }
        let ng = self.any_grad(&[a, s]);
        self.push("mul_col", vec![m, n], out, Op::MulCol(a, s), ng)
    }

    /// Additive attention energies: e[t,s] = w . tanh(keys[s] + queries[t] + bias).
    /// `keys` is [S,D], `queries` is [T,D], `bias` and `weight` are D-vectors.
    pub fn additive_scores(
        &mut self,
        keys: Var,
        queries: Var,
        bias: Var,
        weight: Var,
    ) -> Result<Var, TensorError> {
        let (s_n, d) = (self.rows(keys), self.cols(keys));
        let (t_n, d2) = (self.rows(queries), self.cols(queries));
        if d != d2 || self.nodes[bias.0].data.len() != d || self.nodes[weight.0].data.len() != d {
            return Err(TensorError::ShapeMismatch {
                op: "additive_scores",
                lhs: self.nodes[keys.0].shape.clone(),
                rhs: self.nodes[queries.0].shape.clone(),
            });
        }
        if s_n == 0 {
            return Err(TensorError::EmptyInput {
                op: "additive_scores",
            });
        }
        let mut out = vec![0.0; t_n * s_n];
        {
            let kv = &self.nodes[keys.0].data;
            let qv = &self.nodes[queries.0].data;
            let bv = &self.nodes[bias.0].data;
            let wv = &self.nodes[weight.0].data;
            for t in 0..t_n {
                for s in 0..s_n {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += wv[j] * (kv[s * d + j] + qv[t * d + j] + bv[j]).tanh();
                    }
                    out[t * s_n + s] = acc;
                }
            }
        }
        let ng = self.any_grad(&[keys, queries, bias, weight]);
        self.push(
            "additive_scores",
            vec![t_n, s_n],
            out,
            Op::AdditiveScores {
                keys,
                queries,
                bias,
                weight,
            },
            ng,
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.nodes[a.0].data.iter().sum();
        let ng = self.any_grad(&[a]);
        self.push("sum", vec![1], vec![s], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.nodes[a.0].data.len();
        if n == 0 {
            return Err(TensorError::EmptyInput { op: "mean" });
        }
        let s = self.nodes[a.0].data.iter().sum::<f64>() / n as f64;
        let ng = self.any_grad(&[a]);
        self.push("mean", vec![1], vec![s], Op::Mean(a), ng)
    }

    /// Read the gradient accumulated for `v` by the last `backward` call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads
            .as_ref()
            .and_then(|g| g[v.0].as_ref().map(|x| x.as_slice()))
    }

    /// Reverse sweep from a scalar `loss`. Fills per-node gradients readable
    /// through [`Tape::grad`]. Each node is visited exactly once.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn add_grad(&self, grads: &mut [Option<Vec<f64>>], v: Var, update: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].data.len()]);
        update(slot);
    }

    fn backprop_node(&self, idx: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.rows(*a), self.cols(*a));
                let n = self.cols(*b);
                let av = self.nodes[a.0].data.clone();
                let bv = self.nodes[b.0].data.clone();
                self.add_grad(grads, *a, |ga| {
                    // dA += dC * B^T
                    for i in 0..m {
                        for j in 0..n {
                            let g = gout[i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                ga[i * k + p] += g * bv[p * n + j];
                            }
                        }
                    }
                });
                self.add_grad(grads, *b, |gb| {
                    // dB += A^T * dC
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += a_ip * gout[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.add_grad(grads, *a, |g| axpy(g, gout, 1.0));
                self.add_grad(grads, *b, |g| axpy(g, gout, 1.0));
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, |g| axpy(g, gout, 1.0));
                self.add_grad(grads, *b, |g| axpy(g, gout, -1.0));
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].data;
                let bv = &self.nodes[b.0].data;
                self.add_grad(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * bv[i];
                    }
                });
                self.add_grad(grads, *b, |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * av[i];
                    }
                });
            }
            Op::AddRow(a, row) => {
                let (m, n) = (self.rows(*a), self.cols(*a));
                self.add_grad(grads, *a, |g| axpy(g, gout, 1.0));
                self.add_grad(grads, *row, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[j] += gout[i * n + j];
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.add_grad(grads, *a, |g| axpy(g, gout, c));
            }
            Op::AddScalar(a, _) => {
                self.add_grad(grads, *a, |g| axpy(g, gout, 1.0));
            }
            Op::Tanh(a) => {
                let y = &node.data;
                self.add_grad(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.data;
                self.add_grad(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].data;
                self.add_grad(grads, *a, |g| {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            g[i] += gout[i];
                        }
                    }
                });
            }
            Op::Log(a) => {
                let x = &self.nodes[a.0].data;
                self.add_grad(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] / x[i];
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = (self.rows(*a), self.cols(*a));
                let y = &node.data;
                self.add_grad(grads, *a, |g| {
                    for i in 0..m {
                        let mut dot = 0.0;
                        for j in 0..n {
                            dot += gout[i * n + j] * y[i * n + j];
                        }
                        for j in 0..n {
                            g[i * n + j] += y[i * n + j] * (gout[i * n + j] - dot);
                        }
                    }
                });
            }
            Op::MaxPoolRows(a, arg) => {
                let d = self.cols(*a);
                self.add_grad(grads, *a, |g| {
                    for j in 0..d {
                        g[arg[j] * d + j] += gout[j];
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let n = self.cols(parts[0]);
                let mut off = 0;
                for &p in parts {
                    let rows = self.rows(p);
                    self.add_grad(grads, p, |g| {
                        g.iter_mut()
                            .zip(&gout[off * n..(off + rows) * n])
                            .for_each(|(d, s)| *d += *s);
                    });
                    off += rows;
                }
            }
            Op::SliceRows(a, r0, _) => {
                let n = self.cols(*a);
                let r0 = *r0;
                self.add_grad(grads, *a, |g| {
                    g[r0 * n..r0 * n + gout.len()]
                        .iter_mut()
                        .zip(gout)
                        .for_each(|(d, s)| *d += *s);
                });
            }
            Op::ConcatCols(parts) => {
                let m = self.rows(parts[0]);
                let total: usize = parts.iter().map(|&p| self.cols(p)).sum();
                let mut off = 0;
                for &p in parts {
                    let w = self.cols(p);
                    self.add_grad(grads, p, |g| {
                        for i in 0..m {
                            for j in 0..w {
                                g[i * w + j] += gout[i * total + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols(a, c0, c1) => {
                let (m, n) = (self.rows(*a), self.cols(*a));
                let (c0, c1) = (*c0, *c1);
                let w = c1 - c0;
                self.add_grad(grads, *a, |g| {
                    for i in 0..m {
                        for j in 0..w {
                            g[i * n + c0 + j] += gout[i * w + j];
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (self.rows(*a), self.cols(*a));
                self.add_grad(grads, *a, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += gout[j * m + i];
                        }
                    }
                });
            }
            Op::LayerNorm(a, gain, bias, stats) => {
                let (m, n) = (self.rows(*a), self.cols(*a));
                let xv = self.nodes[a.0].data.clone();
                let gv = self.nodes[gain.0].data.clone();
                self.add_grad(grads, *a, |g| {
                    for i in 0..m {
                        let (mean, inv_std) = stats[i];
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for j in 0..n {
                            let xh = (xv[i * n + j] - mean) * inv_std;
                            let dxh = gout[i * n + j] * gv[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh;
                        }
                        mean_dxh /= n as f64;
                        mean_dxh_xh /= n as f64;
                        for j in 0..n {
                            let xh = (xv[i * n + j] - mean) * inv_std;
                            let dxh = gout[i * n + j] * gv[j];
                            g[i * n + j] += inv_std * (dxh - mean_dxh - xh * mean_dxh_xh);
                        }
                    }
                });
                self.add_grad(grads, *gain, |g| {
                    for i in 0..m {
                        let (mean, inv_std) = stats[i];
                        for j in 0..n {
                            let xh = (xv[i * n + j] - mean) * inv_std;
                            g[j] += gout[i * n + j] * xh;
                        }
                    }
                });
                self.add_grad(grads, *bias, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[j] += gout[i * n + j];
                        }
                    }
                });
            }
            Op::GatherRows(table, ids) => {
                let d = self.cols(*table);
                self.add_grad(grads, *table, |g| {
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            g[id * d + j] += gout[i * d + j];
                        }
                    }
                });
            }
            Op::GatherPerRow(a, cols) => {
                let n = self.cols(*a);
                self.add_grad(grads, *a, |g| {
                    for (i, &c) in cols.iter().enumerate() {
                        g[i * n + c] += gout[i];
                    }
                });
            }
            Op::ScatterCols(src, ids, width) => {
                let (m, l) = (self.rows(*src), self.cols(*src));
                let width = *width;
                self.add_grad(grads, *src, |g| {
                    for i in 0..m {
                        for (j, &id) in ids.iter().enumerate() {
                            g[i * l + j] += gout[i * width + id];
                        }
                    }
                });
            }
            Op::PadCols(a, width) => {
                let (m, n) = (self.rows(*a), self.cols(*a));
                let width = *width;
                self.add_grad(grads, *a, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += gout[i * width + j];
                        }
                    }
                });
            }
            Op::MulCol(a, s) => {
                let (m, n) = (self.rows(*a), self.cols(*a));
                let av = &self.nodes[a.0].data;
                let sv = &self.nodes[s.0].data;
                self.add_grad(grads, *a, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += gout[i * n + j] * sv[i];
                        }
                    }
                });
                self.add_grad(grads, *s, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i] += gout[i * n + j] * av[i * n + j];
                        }
                    }
                });
            }
            Op::AdditiveScores {
                keys,
                queries,
                bias,
                weight,
            } => {
                let (s_n, d) = (self.rows(*keys), self.cols(*keys));
                let t_n = self.rows(*queries);
                let kv = self.nodes[keys.0].data.clone();
                let qv = self.nodes[queries.0].data.clone();
                let bv = self.nodes[bias.0].data.clone();
                let wv = self.nodes[weight.0].data.clone();
                // Recompute tanh activations instead of storing the T*S*D cube.
                let mut dk = vec![0.0; s_n * d];
                let mut dq = vec![0.0; t_n * d];
                let mut db = vec![0.0; d];
                let mut dw = vec![0.0; d];
                for t in 0..t_n {
                    for s in 0..s_n {
                        let g = gout[t * s_n + s];
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..d {
                            let u = (kv[s * d + j] + qv[t * d + j] + bv[j]).tanh();
                            let pre = g * wv[j] * (1.0 - u * u);
                            dk[s * d + j] += pre;
                            dq[t * d + j] += pre;
                            db[j] += pre;
                            dw[j] += g * u;
                        }
                    }
                }
                self.add_grad(grads, *keys, |g| axpy(g, &dk, 1.0));
                self.add_grad(grads, *queries, |g| axpy(g, &dq, 1.0));
                self.add_grad(grads, *bias, |g| axpy(g, &db, 1.0));
                self.add_grad(grads, *weight, |g| axpy(g, &dw, 1.0));
            }
            Op::Sum(a) => {
                let g0 = gout[0];
                self.add_grad(grads, *a, |g| g.iter_mut().for_each(|x| *x += g0));
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].data.len() as f64;
                let g0 = gout[0] / n;
                self.add_grad(grads, *a, |g| g.iter_mut().for_each(|x| *x += g0));
            }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * *s;
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    // ikj order keeps the inner loop streaming over contiguous rows of b.
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] += a_ip * b_row[j];
            }
        }
    }
}
