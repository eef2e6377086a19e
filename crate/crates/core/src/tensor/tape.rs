use std::rc::Rc;

use super::{gemm, log_sigmoid, sigmoid, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        b_trans: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulRow {
        a: Var,
        v: Var,
    },
    RowScale {
        a: Var,
        s: Var,
    },
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    SliceCols {
        a: Var,
        start: usize,
    },
    SliceRows {
        a: Var,
        start: usize,
    },
    Gather {
        a: Var,
        idx: Rc<[usize]>,
    },
    Pick {
        a: Var,
        idx: Rc<[usize]>,
    },
    SegmentSum {
        a: Var,
        seg: Rc<[usize]>,
    },
    SegmentSoftmax {
        a: Var,
        seg: Rc<[usize]>,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    LogSigmoid(Var),
    RowDot(Var, Var),
    RowSum(Var),
    Sum(Var),
    PairDot {
        a: Var,
        b: Var,
        i: Rc<[usize]>,
        j: Rc<[usize]>,
    },
    EdgeAggregate {
        msg: Var,
        alpha: Var,
        src: Rc<[usize]>,
        dst: Rc<[usize]>,
    },
    NormalizeRows(Var),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic record of one forward pass. Operations are appended in
/// evaluation order; [`Tape::backward`] replays them in exact reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_indices(op: &'static str, idx: &[usize], bound: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(&i) => Err(Error::Dimension {
            op,
            lhs: vec![i],
            rhs: vec![bound],
        }),
        None => Ok(()),
    }
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

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf. Its gradient is reported iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        let value = Tensor::from_parts(t.shape().to_vec(), t.into_data());
        self.push(value, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let value = Tensor::from_parts(t.shape().to_vec(), t.into_data());
        self.push(value, Op::Leaf, false)
    }

    /// `A·B`, or `A·Bᵀ` when `b_trans`.
    fn matmul_impl(&mut self, a: Var, b: Var, b_trans: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims(ta);
        let (kb, n) = if b_trans {
            (tb.cols(), tb.rows())
        } else {
            (tb.rows(), tb.cols())
        };
        if ta.shape().len() != 2 || tb.shape().len() != 2 || k != kb {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), b_trans, 0.0, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, b_trans }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `A·Bᵀ`: applies a weight stored as `[out, in]` to row vectors.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * c).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.map(a, log_sigmoid, Op::LogSigmoid(a))
    }

    /// Multiplies every row of `a [n, d]` element-wise by `v` (`d` values).
    pub fn mul_row(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ta, tv) = (self.value(a), self.value(v));
        let (n, d) = dims(ta);
        if tv.numel() != d {
            return Err(Error::Dimension {
                op: "mul_row",
                lhs: ta.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let mut out = ta.data().to_vec();
        for r in 0..n {
            for (x, w) in out[r * d..(r + 1) * d].iter_mut().zip(tv.data()) {
                *x *= w;
            }
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let rg = self.rg(&[a, v]);
        Ok(self.push(t, Op::MulRow { a, v }, rg))
    }

    /// Multiplies row `i` of `a [n, d]` by the scalar `s[i]`.
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        let (n, d) = dims(ta);
        if ts.numel() != n {
            return Err(Error::Dimension {
                op: "row_scale",
                lhs: ta.shape().to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        let mut out = ta.data().to_vec();
        for (r, &c) in ts.data().iter().enumerate() {
            out[r * d..(r + 1) * d].iter_mut().for_each(|x| *x *= c);
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let rg = self.rg(&[a, s]);
        Ok(self.push(t, Op::RowScale { a, s }, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((n, p), (nb, q)) = (dims(ta), dims(tb));
        if n != nb {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            out.extend_from_slice(ta.row(r));
            out.extend_from_slice(tb.row(r));
        }
        let t = Tensor::from_parts(vec![n, p + q], out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::ConcatCols(a, b), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let d = self.value(*first).cols();
        let mut out = Vec::new();
        let mut n = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != d {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            n += t.rows();
            out.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_parts(vec![n, d], out), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, d) = dims(ta);
        if start >= end || end > d {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let mut out = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            out.extend_from_slice(&ta.row(r)[start..end]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![n, end - start], out),
            Op::SliceCols { a, start },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, d) = dims(ta);
        if start >= end || end > n {
            return Err(Error::Dimension {
                op: "slice_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let out = ta.data()[start * d..end * d].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![end - start, d], out),
            Op::SliceRows { a, start },
            rg,
        ))
    }

    /// Same values, new shape; element count must match.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(shape, ta.data().to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Row gather: `out[e] = a[idx[e]]`.
    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let ta = self.value(a);
        let (n, d) = dims(ta);
        check_indices("gather_rows", &idx, n)?;
        if idx.is_empty() {
            return Err(Error::Contract("gather_rows with no indices".into()));
        }
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            out.extend_from_slice(ta.row(i));
        }
        let shape = if ta.shape().len() == 1 {
            vec![idx.len()]
        } else {
            vec![idx.len(), d]
        };
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Gather { a, idx }, rg))
    }

    /// Element gather over the flattened tensor, producing a vector.
    pub fn pick(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let ta = self.value(a);
        check_indices("pick", &idx, ta.numel())?;
        if idx.is_empty() {
            return Err(Error::Contract("pick with no indices".into()));
        }
        let out = idx.iter().map(|&i| ta.data()[i]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![idx.len()], out), Op::Pick { a, idx }, rg))
    }

    /// `out[s] = Σ_{e: seg[e] = s} a[e]` over `n_seg` output rows.
    pub fn segment_sum(&mut self, a: Var, seg: Rc<[usize]>, n_seg: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, d) = dims(ta);
        if seg.len() != m {
            return Err(Error::Dimension {
                op: "segment_sum",
                lhs: ta.shape().to_vec(),
                rhs: vec![seg.len()],
            });
        }
        check_indices("segment_sum", &seg, n_seg)?;
        let mut out = vec![0.0; n_seg * d];
        for (e, &s) in seg.iter().enumerate() {
            for (o, x) in out[s * d..(s + 1) * d].iter_mut().zip(ta.row(e)) {
                *o += x;
            }
        }
        let shape = if ta.shape().len() == 1 {
            vec![n_seg]
        } else {
            vec![n_seg, d]
        };
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::SegmentSum { a, seg }, rg))
    }

    /// Column-wise softmax over the rows sharing a segment id.
    pub fn segment_softmax(&mut self, a: Var, seg: Rc<[usize]>, n_seg: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, k) = dims(ta);
        if seg.len() != m {
            return Err(Error::Dimension {
                op: "segment_softmax",
                lhs: ta.shape().to_vec(),
                rhs: vec![seg.len()],
            });
        }
        check_indices("segment_softmax", &seg, n_seg)?;
        let mut max = vec![f64::NEG_INFINITY; n_seg * k];
        for (e, &s) in seg.iter().enumerate() {
            for c in 0..k {
                let v = ta.data()[e * k + c];
                if v > max[s * k + c] {
                    max[s * k + c] = v;
                }
            }
        }
        let mut out = vec![0.0; m * k];
        let mut denom = vec![0.0; n_seg * k];
        for (e, &s) in seg.iter().enumerate() {
            for c in 0..k {
                let x = (ta.data()[e * k + c] - max[s * k + c]).exp();
                out[e * k + c] = x;
                denom[s * k + c] += x;
            }
        }
        for (e, &s) in seg.iter().enumerate() {
            for c in 0..k {
                out[e * k + c] /= denom[s * k + c];
            }
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SegmentSoftmax { a, seg }, rg))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a).rows();
        self.segment_softmax(a, vec![0; m].into(), 1)
    }

    /// Row-wise inner product of two `[m, d]` tensors.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("row_dot", ta, tb)?;
        let m = ta.rows();
        let out = (0..m)
            .map(|r| ta.row(r).iter().zip(tb.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m], out), Op::RowDot(a, b), rg))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let m = ta.rows();
        let out = (0..m).map(|r| ta.row(r).iter().sum()).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![m], out), Op::RowSum(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `out[p] = a[i[p]] · b[j[p]]` without materializing the gathered rows.
    pub fn pair_dot(&mut self, a: Var, b: Var, i: Rc<[usize]>, j: Rc<[usize]>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() || i.len() != j.len() || i.is_empty() {
            return Err(Error::Dimension {
                op: "pair_dot",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        check_indices("pair_dot", &i, ta.rows())?;
        check_indices("pair_dot", &j, tb.rows())?;
        let out = i
            .iter()
            .zip(j.iter())
            .map(|(&p, &q)| ta.row(p).iter().zip(tb.row(q)).map(|(x, y)| x * y).sum())
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![i.len()], out), Op::PairDot { a, b, i, j }, rg))
    }

    /// Weighted neighbor aggregation with per-head weights:
    /// `out[dst[e], c] += alpha[e, c / w] · msg[src[e], c]`, where
    /// `w = cols(msg) / cols(alpha)` is the head width. Edges are summed
    /// in storage order.
    pub fn edge_aggregate(
        &mut self,
        msg: Var,
        alpha: Var,
        src: Rc<[usize]>,
        dst: Rc<[usize]>,
        n_out: usize,
    ) -> Result<Var> {
        let (tm, ta) = (self.value(msg), self.value(alpha));
        let (rows, d) = dims(tm);
        let (m, heads) = dims(ta);
        if src.len() != m || dst.len() != m || heads == 0 || d % heads != 0 {
            return Err(Error::Dimension {
                op: "edge_aggregate",
                lhs: tm.shape().to_vec(),
                rhs: ta.shape().to_vec(),
            });
        }
        check_indices("edge_aggregate", &src, rows)?;
        check_indices("edge_aggregate", &dst, n_out)?;
        let w = d / heads;
        let mut out = vec![0.0; n_out * d];
        for e in 0..m {
            let (s, t) = (src[e], dst[e]);
            let row = tm.row(s);
            let o = &mut out[t * d..(t + 1) * d];
            for h in 0..heads {
                let a = ta.data()[e * heads + h];
                for c in h * w..(h + 1) * w {
                    o[c] += a * row[c];
                }
            }
        }
        let rg = self.rg(&[msg, alpha]);
        Ok(self.push(
            Tensor::from_parts(vec![n_out, d], out),
            Op::EdgeAggregate { msg, alpha, src, dst },
            rg,
        ))
    }

    /// Scales every row to unit L2 norm; rows with norm below 1e-12 are rejected.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (n, d) = dims(ta);
        let mut out = ta.data().to_vec();
        for r in 0..n {
            let norm = ta.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::DegenerateNormal { bin: r, norm });
            }
            out[r * d..(r + 1) * d].iter_mut().for_each(|x| *x /= norm);
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::NormalizeRows(a), rg))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate across
    /// every use of a value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop(idx, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backprop(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, b_trans } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = dims(ta);
                let n = out.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    // dA = dC · op(B)ᵀ
                    gemm(m, n, k, g, false, tb.data(), !b_trans, 1.0, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    if *b_trans {
                        // B is [n, k]: dB = dCᵀ · A
                        gemm(n, m, k, g, true, ta.data(), false, 1.0, gb);
                    } else {
                        // dB = Aᵀ · dC
                        gemm(k, m, n, ta.data(), true, g, false, 1.0, gb);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *x += y * z;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, y), z) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *x += y * z;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::MulRow { a, v } => {
                let (ta, tv) = (self.value(*a), self.value(*v));
                let (n, d) = dims(ta);
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..n {
                        for c in 0..d {
                            ga[r * d + c] += g[r * d + c] * tv.data()[c];
                        }
                    }
                }
                if let Some(gv) = self.acc(grads, *v) {
                    for r in 0..n {
                        for c in 0..d {
                            gv[c] += g[r * d + c] * ta.data()[r * d + c];
                        }
                    }
                }
            }
            Op::RowScale { a, s } => {
                let (ta, ts) = (self.value(*a), self.value(*s));
                let (n, d) = dims(ta);
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..n {
                        let c = ts.data()[r];
                        for k in r * d..(r + 1) * d {
                            ga[k] += g[k] * c;
                        }
                    }
                }
                if let Some(gs) = self.acc(grads, *s) {
                    for r in 0..n {
                        gs[r] += (r * d..(r + 1) * d).map(|k| g[k] * ta.data()[k]).sum::<f64>();
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (p, q) = (self.value(*a).cols(), self.value(*b).cols());
                let n = out.rows();
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..n {
                        for c in 0..p {
                            ga[r * p + c] += g[r * (p + q) + c];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for r in 0..n {
                        for c in 0..q {
                            gb[r * q + c] += g[r * (p + q) + p + c];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if let Some(gp) = self.acc(grads, p) {
                        gp.iter_mut().zip(&g[off..off + len]).for_each(|(x, y)| *x += y);
                    }
                    off += len;
                }
            }
            Op::SliceCols { a, start } => {
                let d = self.value(*a).cols();
                let (n, w) = dims(out);
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..n {
                        for c in 0..w {
                            ga[r * d + start + c] += g[r * w + c];
                        }
                    }
                }
            }
            Op::SliceRows { a, start } => {
                let d = self.value(*a).cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, y) in ga[start * d..start * d + g.len()].iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            Op::Gather { a, idx } => {
                let d = self.value(*a).cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (e, &i) in idx.iter().enumerate() {
                        for c in 0..d {
                            ga[i * d + c] += g[e * d + c];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Pick { a, idx } => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (e, &i) in idx.iter().enumerate() {
                        ga[i] += g[e];
                    }
                }
            }
            Op::SegmentSum { a, seg } => {
                let d = self.value(*a).cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (e, &s) in seg.iter().enumerate() {
                        for c in 0..d {
                            ga[e * d + c] += g[s * d + c];
                        }
                    }
                }
            }
            Op::SegmentSoftmax { a, seg } => {
                let k = out.cols();
                let y = out.data();
                let n_seg = seg.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg * k];
                for (e, &s) in seg.iter().enumerate() {
                    for c in 0..k {
                        dot[s * k + c] += y[e * k + c] * g[e * k + c];
                    }
                }
                if let Some(ga) = self.acc(grads, *a) {
                    for (e, &s) in seg.iter().enumerate() {
                        for c in 0..k {
                            let i = e * k + c;
                            ga[i] += y[i] * (g[i] - dot[s * k + c]);
                        }
                    }
                }
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(ta.data()) {
                        if *z > 0.0 {
                            *x += y;
                        }
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let ta = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(ta.data()) {
                        *x += if *z > 0.0 { *y } else { slope * y };
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), s) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += y * s * (1.0 - s);
                    }
                }
            }
            Op::LogSigmoid(a) => {
                let ta = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(ta.data()) {
                        *x += y * sigmoid(-z);
                    }
                }
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let d = ta.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, gr) in g.iter().enumerate() {
                        for c in 0..d {
                            ga[r * d + c] += gr * tb.data()[r * d + c];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (r, gr) in g.iter().enumerate() {
                        for c in 0..d {
                            gb[r * d + c] += gr * ta.data()[r * d + c];
                        }
                    }
                }
            }
            Op::RowSum(a) => {
                let d = self.value(*a).cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, gr) in g.iter().enumerate() {
                        ga[r * d..(r + 1) * d].iter_mut().for_each(|x| *x += gr);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::PairDot { a, b, i, j } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let d = ta.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (p, (&ii, &jj)) in i.iter().zip(j.iter()).enumerate() {
                        for c in 0..d {
                            ga[ii * d + c] += g[p] * tb.data()[jj * d + c];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (p, (&ii, &jj)) in i.iter().zip(j.iter()).enumerate() {
                        for c in 0..d {
                            gb[jj * d + c] += g[p] * ta.data()[ii * d + c];
                        }
                    }
                }
            }
            Op::EdgeAggregate { msg, alpha, src, dst } => {
                let (tm, ta) = (self.value(*msg), self.value(*alpha));
                let d = tm.cols();
                let heads = ta.cols();
                let w = d / heads;
                if let Some(gm) = self.acc(grads, *msg) {
                    for e in 0..src.len() {
                        let (s, t) = (src[e], dst[e]);
                        for h in 0..heads {
                            let a = ta.data()[e * heads + h];
                            for c in h * w..(h + 1) * w {
                                gm[s * d + c] += a * g[t * d + c];
                            }
                        }
                    }
                }
                if let Some(gal) = self.acc(grads, *alpha) {
                    for e in 0..src.len() {
                        let (s, t) = (src[e], dst[e]);
                        for h in 0..heads {
                            gal[e * heads + h] += (h * w..(h + 1) * w)
                                .map(|c| g[t * d + c] * tm.data()[s * d + c])
                                .sum::<f64>();
                        }
                    }
                }
            }
            Op::NormalizeRows(a) => {
                let ta = self.value(*a);
                let (n, d) = dims(ta);
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..n {
                        let norm = ta.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                        let y = out.row(r);
                        let gr = &g[r * d..(r + 1) * d];
                        let yg: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..d {
                            ga[r * d + c] += (gr[c] - y[c] * yg) / norm;
                        }
                    }
                }
            }
        }
    }
}
