//! Tape-based reverse-mode differentiation over 2-D row-major tensors.
//!
//! Every operation evaluates eagerly and records itself on the tape; a
//! backward pass walks the tape in reverse. Parameters are read from a
//! borrowed [`ParamStore`] and their gradients are returned as [`Gradients`].

use super::tensor::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Silu(Var),
    LayerNorm { x: Var, rstd: Vec<f64> },
    Attention { qkv: Var, segments: Vec<(usize, usize)>, heads: usize, probs: Vec<f64> },
    GatherRows { src: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceCols { src: Var, start: usize },
    WeightedSumSquares { src: Var, weights: Vec<f64> },
    Sum(Var),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

/// `c = a * b (+ beta * c)` for strided row-major operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), k, 1, self.value(b).data(), n, 1, &mut out, 0.0);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    fn row_broadcast(&self, a: Var, row: Var, name: &'static str) -> Result<()> {
        let (_, c) = self.dims(a);
        let r = self.value(row);
        if r.len() != c {
            return Err(shape_err(name, format!("{:?} with row {:?}", self.value(a).shape(), r.shape())));
        }
        Ok(())
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, "add_row")?;
        let ta = self.value(a);
        let r = self.value(row).data();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_exact_mut(r.len()) {
            chunk.iter_mut().zip(r).for_each(|(x, y)| *x += y);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(a, row)))
    }

    /// Multiplies every row elementwise by a length-`cols` vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, "mul_row")?;
        let ta = self.value(a);
        let r = self.value(row).data();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_exact_mut(r.len()) {
            chunk.iter_mut().zip(r).for_each(|(x, y)| *x *= y);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::MulRow(a, row)))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect())
            .expect("unary keeps shape")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |x| x + c);
        self.push(t, Op::AddScalar(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(t, Op::Gelu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x / (1.0 + (-x).exp()));
        self.push(t, Op::Silu(a))
    }

    /// Row-wise standardization without affine terms.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let c = tx.cols();
        let mut out = tx.data().to_vec();
        let mut rstd = Vec::with_capacity(tx.rows());
        for row in out.chunks_exact_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * r);
            rstd.push(r);
        }
        let t = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        self.push(t, Op::LayerNorm { x, rstd })
    }

    /// Bidirectional multi-head self-attention.
    ///
    /// `qkv` is `[rows, 3 * width]` holding query, key and value blocks side by
    /// side. Each `(start, len)` segment is an independent sequence; rows never
    /// attend across segments. Output is `[rows, width]`.
    pub fn attention(&mut self, qkv: Var, segments: &[(usize, usize)], heads: usize) -> Result<Var> {
        let t = self.value(qkv);
        let (rows, c3) = (t.rows(), t.cols());
        if c3 % 3 != 0 || heads == 0 || (c3 / 3) % heads != 0 {
            return Err(shape_err(
                "attention",
                format!("qkv width {c3} is not 3 x heads ({heads}) x head_dim"),
            ));
        }
        let mut covered = 0;
        for &(s, l) in segments {
            if s != covered || l == 0 {
                return Err(shape_err("attention", format!("segments {segments:?} do not tile rows")));
            }
            covered += l;
        }
        if covered != rows {
            return Err(shape_err("attention", format!("segments cover {covered} of {rows} rows")));
        }
        let width = c3 / 3;
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let data = t.data();
        let mut out = vec![0.0; rows * width];
        let mut probs = Vec::with_capacity(segments.iter().map(|(_, l)| heads * l * l).sum());
        let mut scores = Vec::new();
        for &(s, l) in segments {
            for h in 0..heads {
                let (qo, ko, vo) = (h * dh, width + h * dh, 2 * width + h * dh);
                for i in 0..l {
                    let q = &data[(s + i) * c3 + qo..(s + i) * c3 + qo + dh];
                    scores.clear();
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..l {
                        let k = &data[(s + j) * c3 + ko..(s + j) * c3 + ko + dh];
                        let sc = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(sc);
                        scores.push(sc);
                    }
                    let mut z = 0.0;
                    for sc in scores.iter_mut() {
                        *sc = (*sc - max).exp();
                        z += *sc;
                    }
                    let o = &mut out[(s + i) * width + h * dh..(s + i) * width + (h + 1) * dh];
                    for (j, sc) in scores.iter().enumerate() {
                        let p = sc / z;
                        probs.push(p);
                        let v = &data[(s + j) * c3 + vo..(s + j) * c3 + vo + dh];
                        o.iter_mut().zip(v).for_each(|(a, b)| *a += p * b);
                    }
                }
            }
        }
        let value = Tensor::matrix(rows, width, out)?;
        Ok(self.push(
            value,
            Op::Attention {
                qkv,
                segments: segments.to_vec(),
                heads,
                probs,
            },
        ))
    }

    /// `out[i] = src[idx[i]]`.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(src);
        let (rows, c) = (t.rows(), t.cols());
        if idx.is_empty() {
            return Err(shape_err("gather_rows", "empty index".into()));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("row {bad} of {rows}")));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.push(value, Op::GatherRows { src, idx: idx.to_vec() }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = match parts.first() {
            Some(p) => self.value(*p).cols(),
            None => return Err(shape_err("concat_rows", "no inputs".into())),
        };
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.cols() != c {
                return Err(shape_err("concat_rows", format!("widths {c} and {}", t.cols())));
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(data.len() / c, c, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        let (rows, c) = (t.rows(), t.cols());
        if len == 0 || start + len > c {
            return Err(shape_err("slice_cols", format!("[{start}, {}) of width {c}", start + len)));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let value = Tensor::matrix(rows, len, data)?;
        Ok(self.push(value, Op::SliceCols { src, start }))
    }

    /// `sum_r weights[r] * sum_c src[r, c]^2` as a scalar.
    pub fn weighted_sum_squares(&mut self, src: Var, weights: &[f64]) -> Result<Var> {
        let t = self.value(src);
        if weights.len() != t.rows() {
            return Err(shape_err(
                "weighted_sum_squares",
                format!("{} weights for {} rows", weights.len(), t.rows()),
            ));
        }
        let c = t.cols();
        let total = (0..t.rows())
            .map(|r| weights[r] * t.row(r).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>();
        debug_assert_eq!(t.len(), t.rows() * c);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSumSquares {
                src,
                weights: weights.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            per_param: vec![None; self.store.len()],
        };
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let len_of = |v: Var| self.value(v).len();
            match &self.nodes[idx].op {
                Op::Constant => {}
                Op::Param(id) => {
                    if self.store.param(*id).requires_grad {
                        let slot = accumulate(&mut out.per_param[id.0], g.len());
                        slot.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let (_, n) = self.dims(*b);
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    // dA = G B^T, dB = A^T G
                    let ga = accumulate(&mut grads[a.0], m * k);
                    gemm(m, n, k, &g, n, 1, tb, 1, n, ga, 1.0);
                    let gb = accumulate(&mut grads[b.0], k * n);
                    gemm(k, m, n, ta, 1, k, &g, n, 1, gb, 1.0);
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let s = accumulate(&mut grads[v.0], g.len());
                        s.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                }
                Op::Sub(a, b) => {
                    let s = accumulate(&mut grads[a.0], g.len());
                    s.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    let s = accumulate(&mut grads[b.0], g.len());
                    s.iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    let s = accumulate(&mut grads[a.0], g.len());
                    for ((x, gv), bv) in s.iter_mut().zip(&g).zip(tb) {
                        *x += gv * bv;
                    }
                    let s = accumulate(&mut grads[b.0], g.len());
                    for ((x, gv), av) in s.iter_mut().zip(&g).zip(ta) {
                        *x += gv * av;
                    }
                }
                Op::AddRow(a, row) => {
                    let c = len_of(*row);
                    let s = accumulate(&mut grads[a.0], g.len());
                    s.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    let s = accumulate(&mut grads[row.0], c);
                    for chunk in g.chunks_exact(c) {
                        s.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
                Op::MulRow(a, row) => {
                    let c = len_of(*row);
                    let (ta, tr) = (self.value(*a).data(), self.value(*row).data());
                    let s = accumulate(&mut grads[a.0], g.len());
                    for (sc, gc) in s.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                        for ((x, gv), rv) in sc.iter_mut().zip(gc).zip(tr) {
                            *x += gv * rv;
                        }
                    }
                    let s = accumulate(&mut grads[row.0], c);
                    for (ac, gc) in ta.chunks_exact(c).zip(g.chunks_exact(c)) {
                        for ((x, gv), av) in s.iter_mut().zip(gc).zip(ac) {
                            *x += gv * av;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let s = accumulate(&mut grads[a.0], g.len());
                    s.iter_mut().zip(&g).for_each(|(x, y)| *x += c * y);
                }
                Op::AddScalar(a) => {
                    let s = accumulate(&mut grads[a.0], g.len());
                    s.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
                Op::Gelu(a) => {
                    let ta = self.value(*a).data();
                    let s = accumulate(&mut grads[a.0], g.len());
                    for ((x, gv), &v) in s.iter_mut().zip(&g).zip(ta) {
                        let th = (GELU_C * (v + 0.044715 * v * v * v)).tanh();
                        let d = 0.5 * (1.0 + th)
                            + 0.5 * v * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        *x += gv * d;
                    }
                }
                Op::Silu(a) => {
                    let ta = self.value(*a).data();
                    let s = accumulate(&mut grads[a.0], g.len());
                    for ((x, gv), &v) in s.iter_mut().zip(&g).zip(ta) {
                        let sig = 1.0 / (1.0 + (-v).exp());
                        *x += gv * sig * (1.0 + v * (1.0 - sig));
                    }
                }
                Op::LayerNorm { x, rstd } => {
                    let y = self.nodes[idx].value.as_ref().expect("layer norm value");
                    let c = y.cols();
                    let s = accumulate(&mut grads[x.0], g.len());
                    for (r, ((sc, gc), yc)) in s
                        .chunks_exact_mut(c)
                        .zip(g.chunks_exact(c))
                        .zip(y.data().chunks_exact(c))
                        .enumerate()
                    {
                        let mean_g = gc.iter().sum::<f64>() / c as f64;
                        let mean_gy = gc.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for ((o, gv), yv) in sc.iter_mut().zip(gc).zip(yc) {
                            *o += rstd[r] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                }
                Op::Attention {
                    qkv,
                    segments,
                    heads,
                    probs,
                } => {
                    let t = self.value(*qkv);
                    let c3 = t.cols();
                    let width = c3 / 3;
                    let dh = width / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let data = t.data();
                    let s = accumulate(&mut grads[qkv.0], t.len());
                    let mut off = 0;
                    let mut dp = Vec::new();
                    for &(st, l) in segments {
                        for h in 0..*heads {
                            let (qo, ko, vo) = (h * dh, width + h * dh, 2 * width + h * dh);
                            for i in 0..l {
                                let p = &probs[off..off + l];
                                off += l;
                                let go = &g[(st + i) * width + h * dh..(st + i) * width + (h + 1) * dh];
                                dp.clear();
                                for j in 0..l {
                                    let v = &data[(st + j) * c3 + vo..(st + j) * c3 + vo + dh];
                                    dp.push(go.iter().zip(v).map(|(a, b)| a * b).sum::<f64>());
                                    let dv = &mut s[(st + j) * c3 + vo..(st + j) * c3 + vo + dh];
                                    dv.iter_mut().zip(go).for_each(|(a, b)| *a += p[j] * b);
                                }
                                let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                                for j in 0..l {
                                    let ds = p[j] * (dp[j] - dot) * scale;
                                    if ds == 0.0 {
                                        continue;
                                    }
                                    for e in 0..dh {
                                        let kj = data[(st + j) * c3 + ko + e];
                                        let qi = data[(st + i) * c3 + qo + e];
                                        s[(st + i) * c3 + qo + e] += ds * kj;
                                        s[(st + j) * c3 + ko + e] += ds * qi;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::GatherRows { src, idx: rows } => {
                    let t = self.value(*src);
                    let c = t.cols();
                    let s = accumulate(&mut grads[src.0], t.len());
                    for (gc, &r) in g.chunks_exact(c).zip(rows) {
                        s[r * c..(r + 1) * c].iter_mut().zip(gc).for_each(|(x, y)| *x += y);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = len_of(*p);
                        let s = accumulate(&mut grads[p.0], n);
                        s.iter_mut().zip(&g[off..off + n]).for_each(|(x, y)| *x += y);
                        off += n;
                    }
                }
                Op::SliceCols { src, start } => {
                    let t = self.value(*src);
                    let c = t.cols();
                    let len = g.len() / t.rows();
                    let s = accumulate(&mut grads[src.0], t.len());
                    for (r, gc) in g.chunks_exact(len).enumerate() {
                        s[r * c + start..r * c + start + len]
                            .iter_mut()
                            .zip(gc)
                            .for_each(|(x, y)| *x += y);
                    }
                }
                Op::WeightedSumSquares { src, weights } => {
                    let t = self.value(*src);
                    let c = t.cols();
                    let s = accumulate(&mut grads[src.0], t.len());
                    for (r, (sc, xc)) in s.chunks_exact_mut(c).zip(t.data().chunks_exact(c)).enumerate() {
                        let w = 2.0 * weights[r] * g[0];
                        sc.iter_mut().zip(xc).for_each(|(o, x)| *o += w * x);
                    }
                }
                Op::Sum(a) => {
                    let s = accumulate(&mut grads[a.0], len_of(*a));
                    s.iter_mut().for_each(|x| *x += g[0]);
                }
            }
        }
        Ok(out)
    }
}
