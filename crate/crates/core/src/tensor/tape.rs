use std::sync::Arc;

use rand::Rng;

use super::kernels;
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{invalid, shape, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<F: Scalar> {
    Leaf,
    Param(ParamId),
    MatMul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    BatchMatMul { a: NodeId, b: NodeId, trans_b: bool, g: usize, m: usize, k: usize, n: usize },
    Add { a: NodeId, b: NodeId },
    AddBias { a: NodeId, bias: NodeId },
    Scale { a: NodeId, s: F },
    Softmax { a: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<F>, rstd: Vec<F> },
    Gelu { a: NodeId },
    Gather { table: NodeId, idx: Vec<usize> },
    Dropout { a: NodeId, mask: Vec<F> },
    Concat { parts: Vec<NodeId> },
    Slice { a: NodeId, start: usize },
    Reshape { a: NodeId },
    SplitHeads { a: NodeId, batch: usize, seq: usize, heads: usize },
    MergeHeads { a: NodeId, batch: usize, seq: usize, heads: usize },
    CrossEntropy { logits: NodeId, targets: Vec<Option<usize>>, probs: Vec<F>, count: usize },
}

struct Node<F: Scalar> {
    value: Arc<Tensor<F>>,
    op: Op<F>,
}

/// Records operations in execution order for one forward pass.
///
/// A tape built with [`Tape::no_grad`] keeps values only; calling
/// [`Tape::backward`] on it is an error.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    recording: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), recording: true }
    }

    pub fn no_grad() -> Self {
        Self { nodes: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, what: &str) -> Result<NodeId> {
        value.check_finite(what)?;
        self.push_unchecked(Arc::new(value), op)
    }

    fn push_unchecked(&mut self, value: Arc<Tensor<F>>, op: Op<F>) -> Result<NodeId> {
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Result<NodeId> {
        self.push(t, Op::Leaf, "constant")
    }

    /// Bring a parameter onto the tape without copying it.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        let value = store.get(id).shared();
        self.push_unchecked(value, Op::Param(id)).expect("push cannot fail")
    }

    /// `a[.., k] x b[k, n]`; leading axes of `a` are flattened.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(shape(format!("matmul {:?} x {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.shape()[1]);
        let mut out = vec![F::zero(); m * n];
        kernels::matmul(av.data(), bv.data(), &mut out, m, k, n);
        let mut s = av.shape().to_vec();
        *s.last_mut().unwrap() = n;
        self.push(Tensor::new(s, out)?, Op::MatMul { a, b, m, k, n }, "matmul")
    }

    /// Batched product over the leading axis: `[g,m,k] x [g,k,n]`, or
    /// `[g,m,k] x [g,n,k]^T` when `trans_b`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape(format!("bmm {sa:?} x {sb:?}")));
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let kb = if trans_b { sb[2] } else { sb[1] };
        if kb != k {
            return Err(shape(format!("bmm {sa:?} x {sb:?} (trans_b={trans_b})")));
        }
        let mut out = vec![F::zero(); g * m * n];
        for gi in 0..g {
            let ad = &av.data()[gi * m * k..(gi + 1) * m * k];
            let bd = &bv.data()[gi * k * n..(gi + 1) * k * n];
            let od = &mut out[gi * m * n..(gi + 1) * m * n];
            if trans_b {
                kernels::matmul_bt(ad, bd, od, m, k, n);
            } else {
                kernels::matmul(ad, bd, od, m, k, n);
            }
        }
        self.push(
            Tensor::new(vec![g, m, n], out)?,
            Op::BatchMatMul { a, b, trans_b, g, m, k, n },
            "bmm",
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape(format!("add {:?} + {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| *x + *y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, Op::Add { a, b }, "add")
    }

    /// `a[.., c] + bias[c]` broadcast over rows.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.len() != av.cols() {
            return Err(shape(format!("bias {:?} for {:?}", bv.shape(), av.shape())));
        }
        let c = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += *b;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, Op::AddBias { a, bias }, "add_bias")
    }

    pub fn scale(&mut self, a: NodeId, s: F) -> Result<NodeId> {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| *x * s).collect())?;
        self.push(t, Op::Scale { a, s }, "scale")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let c = av.cols();
        let mut out = vec![F::zero(); av.len()];
        for (x, y) in av.data().chunks_exact(c).zip(out.chunks_exact_mut(c)) {
            kernels::softmax_row(x, y);
        }
        let t = Tensor::new(av.shape().to_vec(), out)?;
        self.push(t, Op::Softmax { a }, "softmax")
    }

    /// Attention softmax over `[batch*heads, seq, seq]` scores where key
    /// columns with `key_mask == 0` get exactly zero weight. `key_mask` is
    /// `[batch, seq]`.
    pub fn masked_softmax(&mut self, a: NodeId, key_mask: &[u8], heads: usize) -> Result<NodeId> {
        let av = self.value(a);
        let s = av.shape();
        if s.len() != 3 || s[1] != s[2] || heads == 0 || !s[0].is_multiple_of(heads) {
            return Err(shape(format!("masked_softmax over {s:?} with {heads} heads")));
        }
        let (g, seq) = (s[0], s[1]);
        if key_mask.len() != (g / heads) * seq {
            return Err(shape(format!("key mask of {} for {s:?}", key_mask.len())));
        }
        let mut out = vec![F::zero(); av.len()];
        let mut keep: Vec<usize> = Vec::with_capacity(seq);
        let mut buf_in = Vec::with_capacity(seq);
        let mut buf_out = vec![F::zero(); seq];
        for gi in 0..g {
            let mask = &key_mask[(gi / heads) * seq..(gi / heads + 1) * seq];
            keep.clear();
            keep.extend((0..seq).filter(|&j| mask[j] != 0));
            if keep.is_empty() {
                continue;
            }
            for r in 0..seq {
                let base = (gi * seq + r) * seq;
                buf_in.clear();
                buf_in.extend(keep.iter().map(|&j| av.data()[base + j]));
                kernels::softmax_row(&buf_in, &mut buf_out[..keep.len()]);
                for (&j, &p) in keep.iter().zip(&buf_out) {
                    out[base + j] = p;
                }
            }
        }
        let t = Tensor::new(s.to_vec(), out)?;
        // Backward only needs the output, which zeroes masked columns.
        self.push(t, Op::Softmax { a }, "masked_softmax")
    }

    /// Row-wise layer normalization with gain and bias over the last axis.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: F) -> Result<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = xv.cols();
        if gv.len() != c || bv.len() != c {
            return Err(shape(format!("layer_norm gain {:?} for {:?}", gv.shape(), xv.shape())));
        }
        let rows = xv.rows();
        let cf = F::of(c as f64);
        let mut out = vec![F::zero(); xv.len()];
        let mut xhat = vec![F::zero(); xv.len()];
        let mut rstd = vec![F::zero(); rows];
        for r in 0..rows {
            let row = &xv.data()[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<F>() / cf;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() / cf;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(t, Op::LayerNorm { x, gain, bias, xhat, rstd }, "layer_norm")
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| kernels::gelu(*x)).collect())?;
        self.push(t, Op::Gelu { a }, "gelu")
    }

    /// Rows of a `[r, c]` table, giving `[idx.len(), c]`.
    pub fn gather(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(shape(format!("gather from {:?}", tv.shape())));
        }
        let (r, c) = (tv.shape()[0], tv.shape()[1]);
        if idx.is_empty() {
            return Err(shape("gather with no indices"));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(invalid(format!("gather index {i} out of range for {r} rows")));
            }
            out.extend_from_slice(tv.row(i));
        }
        let t = Tensor::new(vec![idx.len(), c], out)?;
        self.push(t, Op::Gather { table, idx: idx.to_vec() }, "gather")
    }

    /// Inverted dropout. `p == 0` returns the input node unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: NodeId, p: f64, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid(format!("dropout probability {p} not in [0,1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = F::of(1.0 / (1.0 - p));
        let av = self.value(a);
        let mask: Vec<F> = (0..av.len())
            .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
            .collect();
        let data = av.data().iter().zip(&mask).map(|(x, m)| *x * *m).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, Op::Dropout { a, mask }, "dropout")
    }

    /// Concatenate along the first axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| shape("concat of nothing"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = self.value(*p);
            if v.shape()[1..] != tail[..] {
                return Err(shape(format!("concat {:?} with trailing {tail:?}", v.shape())));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut s = vec![lead];
        s.extend(tail);
        self.push(Tensor::new(s, data)?, Op::Concat { parts: parts.to_vec() }, "concat")
    }

    /// `a[start..end]` along the first axis.
    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = self.value(a);
        let lead = av.shape()[0];
        if start >= end || end > lead {
            return Err(shape(format!("slice {start}..{end} of {:?}", av.shape())));
        }
        let inner = av.len() / lead;
        let data = av.data()[start * inner..end * inner].to_vec();
        let mut s = av.shape().to_vec();
        s[0] = end - start;
        self.push(Tensor::new(s, data)?, Op::Slice { a, start }, "slice")
    }

    pub fn reshape(&mut self, a: NodeId, new_shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a).clone().reshaped(new_shape)?;
        self.push_unchecked(Arc::new(t), Op::Reshape { a })
    }

    /// `[batch*seq, heads*d]` to `[batch*heads, seq, d]`.
    pub fn split_heads(&mut self, a: NodeId, batch: usize, seq: usize, heads: usize) -> Result<NodeId> {
        let av = self.value(a);
        let width = av.cols();
        if av.rows() != batch * seq || heads == 0 || !width.is_multiple_of(heads) {
            return Err(shape(format!("split_heads {:?} into b={batch} s={seq} h={heads}", av.shape())));
        }
        let d = width / heads;
        let mut out = vec![F::zero(); av.len()];
        for b in 0..batch {
            for s in 0..seq {
                let src = &av.data()[(b * seq + s) * width..(b * seq + s + 1) * width];
                for h in 0..heads {
                    let dst = ((b * heads + h) * seq + s) * d;
                    out[dst..dst + d].copy_from_slice(&src[h * d..(h + 1) * d]);
                }
            }
        }
        let t = Tensor::new(vec![batch * heads, seq, d], out)?;
        self.push_unchecked(Arc::new(t), Op::SplitHeads { a, batch, seq, heads })
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, a: NodeId, batch: usize, seq: usize, heads: usize) -> Result<NodeId> {
        let av = self.value(a);
        let s = av.shape();
        if s.len() != 3 || s[0] != batch * heads || s[1] != seq {
            return Err(shape(format!("merge_heads {s:?} from b={batch} s={seq} h={heads}")));
        }
        let out = merge(av.data(), batch, seq, heads, s[2]);
        let t = Tensor::new(vec![batch * seq, heads * s[2]], out)?;
        self.push_unchecked(Arc::new(t), Op::MergeHeads { a, batch, seq, heads })
    }

    /// Mean negative log-likelihood over rows whose target is `Some`.
    /// With no counted rows the loss is zero and so is its gradient.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let lv = self.value(logits);
        let c = lv.cols();
        if lv.rows() != targets.len() {
            return Err(shape(format!("{} targets for logits {:?}", targets.len(), lv.shape())));
        }
        let mut probs = vec![F::zero(); lv.len()];
        let mut total = F::zero();
        let mut count = 0usize;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= c {
                return Err(invalid(format!("target {t} out of range for {c} classes")));
            }
            let row = lv.row(r);
            kernels::softmax_row(row, &mut probs[r * c..(r + 1) * c]);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|v| (*v - max).exp()).sum::<F>().ln();
            total += lse - row[t];
            count += 1;
        }
        let loss = if count == 0 { F::zero() } else { total / F::of(count as f64) };
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count },
            "cross_entropy",
        )
    }

    /// Reverse pass from a scalar `loss`, adding parameter gradients into
    /// `store`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore<F>) -> Result<()> {
        if !self.recording {
            return Err(invalid("backward on a tape that did not record"));
        }
        if loss.0 >= self.nodes.len() {
            return Err(invalid("backward without forward"));
        }
        if self.value(loss).len() != 1 {
            return Err(shape(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), F::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    g.check_finite(&format!("gradient of {}", store.get(*id).name))?;
                    store.accumulate(*id, &g);
                }
                Op::MatMul { a, b, m, k, n } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = vec![F::zero(); m * k];
                    kernels::matmul_bt(g.data(), bv.data(), &mut da, *m, *n, *k);
                    let mut db = vec![F::zero(); k * n];
                    kernels::matmul_at_acc(av.data(), g.data(), &mut db, *m, *k, *n);
                    accumulate(&mut grads, *a, av.shape(), da);
                    accumulate(&mut grads, *b, bv.shape(), db);
                }
                Op::BatchMatMul { a, b, trans_b, g: groups, m, k, n } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (*m, *k, *n);
                    let mut da = vec![F::zero(); av.len()];
                    let mut db = vec![F::zero(); bv.len()];
                    for gi in 0..*groups {
                        let gd = &g.data()[gi * m * n..(gi + 1) * m * n];
                        let ad = &av.data()[gi * m * k..(gi + 1) * m * k];
                        let bd = &bv.data()[gi * k * n..(gi + 1) * k * n];
                        let dad = &mut da[gi * m * k..(gi + 1) * m * k];
                        let dbd = &mut db[gi * k * n..(gi + 1) * k * n];
                        if *trans_b {
                            // out = a * b^T with b [n,k]: da = g * b, db = g^T * a
                            kernels::matmul(gd, bd, dad, m, n, k);
                            kernels::matmul_at_acc(gd, ad, dbd, m, n, k);
                        } else {
                            kernels::matmul_bt(gd, bd, dad, m, n, k);
                            kernels::matmul_at_acc(ad, gd, dbd, m, k, n);
                        }
                    }
                    accumulate(&mut grads, *a, av.shape(), da);
                    accumulate(&mut grads, *b, bv.shape(), db);
                }
                Op::Add { a, b } => {
                    let s = g.shape().to_vec();
                    accumulate(&mut grads, *a, &s, g.data().to_vec());
                    accumulate(&mut grads, *b, &s, g.into_data());
                }
                Op::AddBias { a, bias } => {
                    let c = g.cols();
                    let mut db = vec![F::zero(); c];
                    for row in g.data().chunks_exact(c) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                    let bs = self.shape(*bias).to_vec();
                    accumulate(&mut grads, *bias, &bs, db);
                    let s = g.shape().to_vec();
                    accumulate(&mut grads, *a, &s, g.into_data());
                }
                Op::Scale { a, s } => {
                    let shp = g.shape().to_vec();
                    let d = g.data().iter().map(|v| *v * *s).collect();
                    accumulate(&mut grads, *a, &shp, d);
                }
                Op::Softmax { a } => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut d = vec![F::zero(); y.len()];
                    for ((yr, gr), dr) in y
                        .data()
                        .chunks_exact(c)
                        .zip(g.data().chunks_exact(c))
                        .zip(d.chunks_exact_mut(c))
                    {
                        kernels::softmax_row_backward(yr, gr, dr);
                    }
                    accumulate(&mut grads, *a, y.shape(), d);
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let gv = self.value(*gain);
                    let c = gv.len();
                    let cf = F::of(c as f64);
                    let mut dx = vec![F::zero(); xhat.len()];
                    let mut dgain = vec![F::zero(); c];
                    let mut dbias = vec![F::zero(); c];
                    let mut dxhat = vec![F::zero(); c];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut sum_d = F::zero();
                        let mut sum_dh = F::zero();
                        for j in 0..c {
                            dgain[j] += gr[j] * hr[j];
                            dbias[j] += gr[j];
                            dxhat[j] = gr[j] * gv.data()[j];
                            sum_d += dxhat[j];
                            sum_dh += dxhat[j] * hr[j];
                        }
                        let dr = &mut dx[r * c..(r + 1) * c];
                        for j in 0..c {
                            dr[j] = rs / cf * (cf * dxhat[j] - sum_d - hr[j] * sum_dh);
                        }
                    }
                    let xs = self.shape(*x).to_vec();
                    accumulate(&mut grads, *x, &xs, dx);
                    accumulate(&mut grads, *gain, &[c], dgain);
                    let bs = self.shape(*bias).to_vec();
                    accumulate(&mut grads, *bias, &bs, dbias);
                }
                Op::Gelu { a } => {
                    let av = self.value(*a);
                    let d = av.data().iter().zip(g.data()).map(|(x, gv)| kernels::gelu_grad(*x) * *gv).collect();
                    accumulate(&mut grads, *a, av.shape(), d);
                }
                Op::Gather { table, idx } => {
                    let tv = self.value(*table);
                    let c = tv.cols();
                    let mut d = vec![F::zero(); tv.len()];
                    for (r, &i) in idx.iter().enumerate() {
                        for (dv, gv) in d[i * c..(i + 1) * c].iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                            *dv += *gv;
                        }
                    }
                    accumulate(&mut grads, *table, tv.shape(), d);
                }
                Op::Dropout { a, mask } => {
                    let d = g.data().iter().zip(mask).map(|(x, m)| *x * *m).collect();
                    let s = g.shape().to_vec();
                    accumulate(&mut grads, *a, &s, d);
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let ps = self.shape(*p).to_vec();
                        let n: usize = ps.iter().product();
                        accumulate(&mut grads, *p, &ps, g.data()[off..off + n].to_vec());
                        off += n;
                    }
                }
                Op::Slice { a, start } => {
                    let av = self.value(*a);
                    let inner = av.len() / av.shape()[0];
                    let mut d = vec![F::zero(); av.len()];
                    d[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, av.shape(), d);
                }
                Op::Reshape { a } => {
                    let s = self.shape(*a).to_vec();
                    accumulate(&mut grads, *a, &s, g.into_data());
                }
                Op::SplitHeads { a, batch, seq, heads } => {
                    let d = g.shape()[2];
                    let back = merge(g.data(), *batch, *seq, *heads, d);
                    let s = self.shape(*a).to_vec();
                    accumulate(&mut grads, *a, &s, back);
                }
                Op::MergeHeads { a, batch, seq, heads } => {
                    let s = self.shape(*a).to_vec();
                    let back = split(g.data(), *batch, *seq, *heads, s[2]);
                    accumulate(&mut grads, *a, &s, back);
                }
                Op::CrossEntropy { logits, targets, probs, count } => {
                    let ls = self.shape(*logits).to_vec();
                    let c = *ls.last().unwrap();
                    let mut d = vec![F::zero(); probs.len()];
                    if *count > 0 {
                        let scale = g.item() / F::of(*count as f64);
                        for (r, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            for j in 0..c {
                                d[r * c + j] = probs[r * c + j] * scale;
                            }
                            d[r * c + t] -= scale;
                        }
                    }
                    accumulate(&mut grads, *logits, &ls, d);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Tensor<F>>], id: NodeId, shape: &[usize], d: Vec<F>) {
    match &mut grads[id.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(&d) {
                *a += *b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), d).expect("gradient shape matches value"));
        }
    }
}

fn merge<F: Scalar>(src: &[F], batch: usize, seq: usize, heads: usize, d: usize) -> Vec<F> {
    let width = heads * d;
    let mut out = vec![F::zero(); src.len()];
    for b in 0..batch {
        for h in 0..heads {
            for s in 0..seq {
                let from = ((b * heads + h) * seq + s) * d;
                let to = (b * seq + s) * width + h * d;
                out[to..to + d].copy_from_slice(&src[from..from + d]);
            }
        }
    }
    out
}

fn split<F: Scalar>(src: &[F], batch: usize, seq: usize, heads: usize, d: usize) -> Vec<F> {
    let width = heads * d;
    let mut out = vec![F::zero(); src.len()];
    for b in 0..batch {
        for s in 0..seq {
            for h in 0..heads {
                let from = (b * seq + s) * width + h * d;
                let to = ((b * heads + h) * seq + s) * d;
                out[to..to + d].copy_from_slice(&src[from..from + d]);
            }
        }
    }
    out
}
