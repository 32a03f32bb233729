//! Minimal reverse-mode autodiff over dense `f64` tensors.
//!
//! The engine is a flat tape: forward calls append nodes (computing values
//! eagerly) and [`Tape::backward`] walks the tape in reverse, accumulating
//! parameter gradients into a [`GradStore`]. Only the operations the model
//! actually needs exist: affine maps, layer norm, ReLU, residual add,
//! concatenation, a gradient rescaling pass-through, and the two loss
//! heads (softmax cross-entropy and weighted Gaussian log-likelihood).
//!
//! Parameters live outside the tape in a [`ParamSet`] and are referenced
//! by index, so one parameter set can serve many tapes and the inference
//! path can skip the tape entirely.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Dense row-major matrix; vectors are `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { rows: data.len(), cols: 1, data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of parameter tensors.
///
/// Insertion order is the canonical order: gradients, optimizer state and
/// checkpoints all follow it.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.tensors.len());
        self.index.insert(name.to_string(), id.0);
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Gradient accumulator shape-matched to a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct GradStore {
    grads: Vec<Tensor>,
}

impl GradStore {
    pub fn zeros_like(params: &ParamSet) -> Self {
        let grads = params
            .tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows, t.cols))
            .collect();
        GradStore { grads }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Euclidean norm over every gradient scalar, in index order.
    pub fn global_norm(&self) -> f64 {
        let mut sum = 0.0;
        for g in &self.grads {
            for &x in &g.data {
                sum += x * x;
            }
        }
        sum.sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }
}

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Input,
    Linear { w: ParamId, b: ParamId, x: NodeId },
    Relu { x: NodeId },
    LayerNorm { scale: ParamId, offset: ParamId, x: NodeId, xhat: Vec<f64>, inv_std: f64 },
    Add { a: NodeId, b: NodeId },
    Concat { a: NodeId, b: NodeId },
    ScaleGrad { x: NodeId, factor: f64 },
    BoundedScale { x: NodeId, amin: usize, amax: usize, inv_range: f64 },
    SoftmaxCrossEntropy { logits: NodeId, target: Vec<f64>, softmax: Vec<f64> },
    GaussianNll { mean: NodeId, log_scale: NodeId, actions: Vec<Vec<f64>>, weights: Vec<f64> },
    WeightedSum { terms: Vec<(NodeId, f64)> },
}

struct Node {
    val: Vec<f64>,
    op: Op,
}

/// Forward tape over one parameter set.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const LN_2PI: f64 = 1.8378770664093453;

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape { params, nodes: Vec::with_capacity(256) }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].val
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].val.len(), 1);
        self.nodes[id.0].val[0]
    }

    fn push(&mut self, val: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { val, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf carrying constant data; no gradient flows into it.
    pub fn input(&mut self, data: Vec<f64>) -> NodeId {
        self.push(data, Op::Input)
    }

    /// `y = W x + b` where `W` is `out x in` and `b` is `out`.
    pub fn linear(&mut self, w: ParamId, b: ParamId, x: NodeId) -> NodeId {
        let wt = self.params.get(w);
        let bt = self.params.get(b);
        let xv = &self.nodes[x.0].val;
        debug_assert_eq!(wt.cols, xv.len(), "linear input width mismatch");
        debug_assert_eq!(wt.rows, bt.len(), "linear bias width mismatch");
        let mut out = vec![0.0; wt.rows];
        matvec(wt, xv, &mut out);
        for (o, &bi) in out.iter_mut().zip(&bt.data) {
            *o += bi;
        }
        self.push(out, Op::Linear { w, b, x })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].val.iter().map(|&v| v.max(0.0)).collect();
        self.push(out, Op::Relu { x })
    }

    /// Layer normalization with learnable scale and offset.
    pub fn layer_norm(&mut self, scale: ParamId, offset: ParamId, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].val;
        let st = self.params.get(scale);
        let ot = self.params.get(offset);
        debug_assert_eq!(st.len(), xv.len());
        debug_assert_eq!(ot.len(), xv.len());
        let (xhat, inv_std) = layer_norm_stats(xv);
        let out = xhat
            .iter()
            .zip(&st.data)
            .zip(&ot.data)
            .map(|((&xh, &s), &o)| s * xh + o)
            .collect();
        self.push(out, Op::LayerNorm { scale, offset, x, xhat, inv_std })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = &self.nodes[a.0].val;
        let bv = &self.nodes[b.0].val;
        debug_assert_eq!(av.len(), bv.len());
        let out = av.iter().zip(bv).map(|(&x, &y)| x + y).collect();
        self.push(out, Op::Add { a, b })
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.nodes[a.0].val.clone();
        out.extend_from_slice(&self.nodes[b.0].val);
        self.push(out, Op::Concat { a, b })
    }

    /// Identity forward; multiplies the incoming gradient by `factor` on
    /// the way back.
    pub fn scale_grad(&mut self, x: NodeId, factor: f64) -> NodeId {
        let out = self.nodes[x.0].val.clone();
        self.push(out, Op::ScaleGrad { x, factor })
    }

    /// Rescales a vector into [0, 1] by its own minimum and maximum so
    /// the result stays on the scale of a one-hot encoding; constant
    /// vectors pass through unchanged.
    pub fn bounded_scale(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].val;
        let (amin, amax) = min_max_indices(xv);
        let min = xv[amin];
        let range = xv[amax] - min;
        if range <= 0.0 {
            let out = xv.clone();
            return self.push(out, Op::BoundedScale { x, amin, amax, inv_range: 0.0 });
        }
        let out = xv.iter().map(|&v| (v - min) / range).collect();
        self.push(out, Op::BoundedScale { x, amin, amax, inv_range: 1.0 / range })
    }

    /// Cross-entropy `logsumexp(z) - sum(t * z)` against a distribution
    /// summing to one. Scalar output.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: Vec<f64>) -> NodeId {
        let z = &self.nodes[logits.0].val;
        debug_assert_eq!(z.len(), target.len());
        let softmax = softmax(z);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let dot: f64 = target.iter().zip(z).map(|(&t, &v)| t * v).sum();
        self.push(vec![lse - dot], Op::SoftmaxCrossEntropy { logits, target, softmax })
    }

    /// Negative weighted log-likelihood of `actions` under a diagonal
    /// Gaussian given by `mean` and `log_scale`. Scalar output.
    pub fn gaussian_nll(
        &mut self,
        mean: NodeId,
        log_scale: NodeId,
        actions: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> NodeId {
        let mu = &self.nodes[mean.0].val;
        let ls = &self.nodes[log_scale.0].val;
        debug_assert_eq!(mu.len(), ls.len());
        debug_assert_eq!(actions.len(), weights.len());
        let mut loss = 0.0;
        for (a, &w) in actions.iter().zip(&weights) {
            debug_assert_eq!(a.len(), mu.len());
            let mut log_p = 0.0;
            for d in 0..mu.len() {
                let z = (a[d] - mu[d]) * (-ls[d]).exp();
                log_p += -0.5 * z * z - ls[d] - 0.5 * LN_2PI;
            }
            loss -= w * log_p;
        }
        self.push(vec![loss], Op::GaussianNll { mean, log_scale, actions, weights })
    }

    /// `sum(coeff_i * scalar_i)` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(NodeId, f64)>) -> NodeId {
        let mut total = 0.0;
        for &(id, c) in &terms {
            debug_assert_eq!(self.nodes[id.0].val.len(), 1);
            total += c * self.nodes[id.0].val[0];
        }
        self.push(vec![total], Op::WeightedSum { terms })
    }

    /// Backpropagates from a scalar `root`, scaling the seed gradient by
    /// `seed`, and accumulates parameter gradients into `grads`.
    pub fn backward(&self, root: NodeId, seed: f64, grads: &mut GradStore) {
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        debug_assert_eq!(self.nodes[root.0].val.len(), 1, "backward root must be scalar");
        adj[root.0] = Some(vec![seed]);

        for i in (0..=root.0).rev() {
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Linear { w, b, x } => {
                    let wt = self.params.get(*w);
                    let xv = &self.nodes[x.0].val;
                    {
                        let gw = grads.get_mut(*w);
                        for r in 0..wt.rows {
                            let row = &mut gw.data[r * wt.cols..(r + 1) * wt.cols];
                            let gr = g[r];
                            for (dst, &xi) in row.iter_mut().zip(xv) {
                                *dst += gr * xi;
                            }
                        }
                    }
                    {
                        let gb = grads.get_mut(*b);
                        for (dst, &gi) in gb.data.iter_mut().zip(&g) {
                            *dst += gi;
                        }
                    }
                    let gx = accum(&mut adj, *x, wt.cols);
                    for r in 0..wt.rows {
                        let row = &wt.data[r * wt.cols..(r + 1) * wt.cols];
                        let gr = g[r];
                        for (dst, &wi) in gx.iter_mut().zip(row) {
                            *dst += gr * wi;
                        }
                    }
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[x.0].val;
                    let gx = accum(&mut adj, *x, xv.len());
                    for ((dst, &gi), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                        if xi > 0.0 {
                            *dst += gi;
                        }
                    }
                }
                Op::LayerNorm { scale, offset, x, xhat, inv_std } => {
                    let st = self.params.get(*scale);
                    let h = xhat.len();
                    {
                        let gs = grads.get_mut(*scale);
                        for ((dst, &gi), &xh) in gs.data.iter_mut().zip(&g).zip(xhat) {
                            *dst += gi * xh;
                        }
                    }
                    {
                        let go = grads.get_mut(*offset);
                        for (dst, &gi) in go.data.iter_mut().zip(&g) {
                            *dst += gi;
                        }
                    }
                    let ghat: Vec<f64> =
                        g.iter().zip(&st.data).map(|(&gi, &s)| gi * s).collect();
                    let mean_ghat = ghat.iter().sum::<f64>() / h as f64;
                    let mean_ghat_xhat =
                        ghat.iter().zip(xhat).map(|(&gh, &xh)| gh * xh).sum::<f64>() / h as f64;
                    let gx = accum(&mut adj, *x, h);
                    for ((dst, &gh), &xh) in gx.iter_mut().zip(&ghat).zip(xhat) {
                        *dst += inv_std * (gh - mean_ghat - xh * mean_ghat_xhat);
                    }
                }
                Op::Add { a, b } => {
                    let n = g.len();
                    {
                        let ga = accum(&mut adj, *a, n);
                        for (dst, &gi) in ga.iter_mut().zip(&g) {
                            *dst += gi;
                        }
                    }
                    let gb = accum(&mut adj, *b, n);
                    for (dst, &gi) in gb.iter_mut().zip(&g) {
                        *dst += gi;
                    }
                }
                Op::Concat { a, b } => {
                    let na = self.nodes[a.0].val.len();
                    let nb = self.nodes[b.0].val.len();
                    {
                        let ga = accum(&mut adj, *a, na);
                        for (dst, &gi) in ga.iter_mut().zip(&g[..na]) {
                            *dst += gi;
                        }
                    }
                    let gb = accum(&mut adj, *b, nb);
                    for (dst, &gi) in gb.iter_mut().zip(&g[na..]) {
                        *dst += gi;
                    }
                }
                Op::ScaleGrad { x, factor } => {
                    let n = g.len();
                    let gx = accum(&mut adj, *x, n);
                    for (dst, &gi) in gx.iter_mut().zip(&g) {
                        *dst += factor * gi;
                    }
                }
                Op::BoundedScale { x, amin, amax, inv_range } => {
                    let yv = &self.nodes[i].val;
                    let gx = accum(&mut adj, *x, g.len());
                    if *inv_range == 0.0 {
                        for (dst, &gi) in gx.iter_mut().zip(&g) {
                            *dst += gi;
                        }
                    } else {
                        let sum_g: f64 = g.iter().sum();
                        let sum_gy: f64 = g.iter().zip(yv).map(|(&gi, &yi)| gi * yi).sum();
                        for (dst, &gi) in gx.iter_mut().zip(&g) {
                            *dst += gi * inv_range;
                        }
                        gx[*amin] += (sum_gy - sum_g) * inv_range;
                        gx[*amax] -= sum_gy * inv_range;
                    }
                }
                Op::SoftmaxCrossEntropy { logits, target, softmax } => {
                    let gs = g[0];
                    let gx = accum(&mut adj, *logits, softmax.len());
                    for ((dst, &p), &t) in gx.iter_mut().zip(softmax).zip(target) {
                        *dst += gs * (p - t);
                    }
                }
                Op::GaussianNll { mean, log_scale, actions, weights } => {
                    let gs = g[0];
                    let mu = &self.nodes[mean.0].val;
                    let ls = &self.nodes[log_scale.0].val;
                    let dim = mu.len();
                    let mut dmu = vec![0.0; dim];
                    let mut dls = vec![0.0; dim];
                    for (a, &w) in actions.iter().zip(weights) {
                        for d in 0..dim {
                            let inv_s = (-ls[d]).exp();
                            let z = (a[d] - mu[d]) * inv_s;
                            dmu[d] -= w * z * inv_s;
                            dls[d] += w * (1.0 - z * z);
                        }
                    }
                    {
                        let gm = accum(&mut adj, *mean, dim);
                        for (dst, &d) in gm.iter_mut().zip(&dmu) {
                            *dst += gs * d;
                        }
                    }
                    let gl = accum(&mut adj, *log_scale, dim);
                    for (dst, &d) in gl.iter_mut().zip(&dls) {
                        *dst += gs * d;
                    }
                }
                Op::WeightedSum { terms } => {
                    let gs = g[0];
                    for &(id, c) in terms {
                        let gt = accum(&mut adj, id, 1);
                        gt[0] += gs * c;
                    }
                }
            }
        }
    }
}

fn accum(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    adj[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn min_max_indices(x: &[f64]) -> (usize, usize) {
    let mut amin = 0;
    let mut amax = 0;
    for (i, &v) in x.iter().enumerate() {
        if v < x[amin] {
            amin = i;
        }
        if v > x[amax] {
            amax = i;
        }
    }
    (amin, amax)
}

fn layer_norm_stats(x: &[f64]) -> (Vec<f64>, f64) {
    let h = x.len() as f64;
    let mean = x.iter().sum::<f64>() / h;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / h;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    (x.iter().map(|&v| (v - mean) * inv_std).collect(), inv_std)
}

/// `out = W x` without allocation.
pub fn matvec(w: &Tensor, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w.data[r * w.cols..(r + 1) * w.cols];
        let mut acc = 0.0;
        for (&wi, &xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

/// Tape-free counterparts of the forward operations, for inference.
pub mod infer {
    use super::{layer_norm_stats, matvec, min_max_indices, ParamSet, ParamId, Tensor};

    pub fn linear(params: &ParamSet, w: ParamId, b: ParamId, x: &[f64]) -> Vec<f64> {
        let wt = params.get(w);
        let bt = params.get(b);
        let mut out = vec![0.0; wt.rows];
        matvec(wt, x, &mut out);
        for (o, &bi) in out.iter_mut().zip(&bt.data) {
            *o += bi;
        }
        out
    }

    pub fn relu_in_place(x: &mut [f64]) {
        for v in x {
            *v = v.max(0.0);
        }
    }

    pub fn layer_norm(params: &ParamSet, scale: ParamId, offset: ParamId, x: &[f64]) -> Vec<f64> {
        let st = params.get(scale);
        let ot = params.get(offset);
        let (mut xhat, _) = layer_norm_stats(x);
        for ((v, &s), &o) in xhat.iter_mut().zip(&st.data).zip(&ot.data) {
            *v = s * *v + o;
        }
        xhat
    }

    pub fn add_in_place(x: &mut [f64], y: &[f64]) {
        for (a, &b) in x.iter_mut().zip(y) {
            *a += b;
        }
    }

    pub fn bounded_scale_in_place(x: &mut [f64]) {
        let (amin, amax) = min_max_indices(x);
        let min = x[amin];
        let range = x[amax] - min;
        if range <= 0.0 {
            return;
        }
        for v in x {
            *v = (*v - min) / range;
        }
    }

    pub fn tensor_is_finite(t: &Tensor) -> bool {
        t.data.iter().all(|v| v.is_finite())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Index of the largest element, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Validates that every element is finite.
pub fn ensure_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng) -> (ParamSet, Vec<ParamId>) {
        let mut params = ParamSet::new();
        let mut ids = Vec::new();
        ids.push(params.add("w0", random_tensor(rng, 5, 4)));
        ids.push(params.add("b0", random_tensor(rng, 5, 1)));
        ids.push(params.add("ln_s", random_tensor(rng, 5, 1)));
        ids.push(params.add("ln_o", random_tensor(rng, 5, 1)));
        ids.push(params.add("w1", random_tensor(rng, 5, 5)));
        ids.push(params.add("b1", random_tensor(rng, 5, 1)));
        ids.push(params.add("w2", random_tensor(rng, 3, 10)));
        ids.push(params.add("b2", random_tensor(rng, 3, 1)));
        ids.push(params.add("w_mu", random_tensor(rng, 2, 10)));
        ids.push(params.add("b_mu", random_tensor(rng, 2, 1)));
        ids.push(params.add("w_ls", random_tensor(rng, 2, 10)));
        ids.push(params.add("b_ls", random_tensor(rng, 2, 1)));
        (params, ids)
    }

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-0.8..0.8)).collect();
        Tensor { rows, cols, data }
    }

    /// Composite graph exercising every op (gradient scaling at factor 1
    /// so analytic gradients equal true derivatives); returns the tape
    /// and the scalar loss node.
    fn build_graph<'p>(params: &'p ParamSet, x: &[f64]) -> (Tape<'p>, NodeId) {
        let p = |n: &str| params.id(n).unwrap();
        let mut tape = Tape::new(params);
        let x0 = tape.input(x.to_vec());
        let h1 = tape.linear(p("w0"), p("b0"), x0);
        let h1n = tape.layer_norm(p("ln_s"), p("ln_o"), h1);
        let h1r = tape.relu(h1n);
        let h2 = tape.linear(p("w1"), p("b1"), h1r);
        let res = tape.add(h1, h2);
        let bounded = tape.bounded_scale(res);
        let scaled = tape.scale_grad(bounded, 1.0);
        let wide = tape.concat(scaled, h1r);
        let logits = tape.linear(p("w2"), p("b2"), wide);
        let ce = tape.softmax_cross_entropy(logits, vec![0.2, 0.5, 0.3]);
        let mu = tape.linear(p("w_mu"), p("b_mu"), wide);
        let ls = tape.linear(p("w_ls"), p("b_ls"), wide);
        let nll = tape.gaussian_nll(
            mu,
            ls,
            vec![vec![0.3, -0.4], vec![-0.1, 0.2]],
            vec![0.6, 0.4],
        );
        let total = tape.weighted_sum(vec![(ce, 1.0), (nll, 0.25)]);
        (tape, total)
    }

    fn forward_loss(params: &ParamSet, x: &[f64]) -> f64 {
        let (tape, total) = build_graph(params, x);
        tape.scalar(total)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (params, ids) = random_params(&mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();

        let (tape, total) = build_graph(&params, &x);
        let mut grads = GradStore::zeros_like(&params);
        tape.backward(total, 1.0, &mut grads);

        let eps = 1e-6;
        let mut checked = 0usize;
        for &id in &ids {
            let n = params.get(id).len();
            for k in 0..n {
                let mut plus = params.clone();
                plus.get_mut(id).data[k] += eps;
                let mut minus = params.clone();
                minus.get_mut(id).data[k] -= eps;
                let fd = (forward_loss(&plus, &x) - forward_loss(&minus, &x)) / (2.0 * eps);
                let an = grads.get(id).data[k];
                let tol = 1e-6 * (1.0 + fd.abs().max(an.abs()));
                assert!(
                    (fd - an).abs() < tol,
                    "param {} [{k}]: fd {fd} vs analytic {an}",
                    params.name(id),
                );
                checked += 1;
            }
        }
        assert!(checked > 100, "finite-difference sweep covered {checked} scalars");
    }

    #[test]
    fn bounded_scale_maps_to_unit_range_and_matches_infer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = ParamSet::new();
        for _ in 0..20 {
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut tape = Tape::new(&params);
            let x = tape.input(v.clone());
            let y = tape.bounded_scale(x);
            let yv = tape.value(y).to_vec();
            let lo = yv.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = yv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(lo, 0.0);
            assert_eq!(hi, 1.0);
            for i in 0..v.len() {
                for j in 0..v.len() {
                    assert_eq!(v[i] < v[j], yv[i] < yv[j]);
                }
            }
            let mut infer_v = v.clone();
            infer::bounded_scale_in_place(&mut infer_v);
            assert_eq!(infer_v, yv);
        }

        let constant = vec![1.5; 6];
        let mut tape = Tape::new(&params);
        let x = tape.input(constant.clone());
        let y = tape.bounded_scale(x);
        assert_eq!(tape.value(y), constant.as_slice());
    }

    #[test]
    fn scale_grad_multiplies_gradient_only() {
        let mut params = ParamSet::new();
        let w = params.add("w", Tensor::matrix(1, 1, vec![2.0]));
        let b = params.add("b", Tensor::vector(vec![0.0]));

        let run = |factor: f64| {
            let mut tape = Tape::new(&params);
            let x = tape.input(vec![3.0]);
            let y = tape.linear(w, b, x);
            let s = tape.scale_grad(y, factor);
            let loss = tape.weighted_sum(vec![(s, 1.0)]);
            let mut grads = GradStore::zeros_like(&params);
            tape.backward(loss, 1.0, &mut grads);
            (tape.scalar(loss), grads.get(w).data[0])
        };

        let (v_full, g_full) = run(1.0);
        let (v_half, g_half) = run(0.5);
        assert_eq!(v_full, v_half);
        assert!((g_half - 0.5 * g_full).abs() < 1e-15);
    }

    #[test]
    fn softmax_cross_entropy_matches_hand_value() {
        let params = ParamSet::new();
        let mut tape = Tape::new(&params);
        let logits = tape.input(vec![1.0, 2.0, 3.0]);
        let loss = tape.softmax_cross_entropy(logits, vec![0.0, 0.0, 1.0]);
        let lse = (1.0f64.exp() + 2.0f64.exp() + 3.0f64.exp()).ln();
        assert!((tape.scalar(loss) - (lse - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_nll_matches_hand_value() {
        let params = ParamSet::new();
        let mut tape = Tape::new(&params);
        let mu = tape.input(vec![0.5]);
        let ls = tape.input(vec![-0.2]);
        let loss = tape.gaussian_nll(mu, ls, vec![vec![0.8]], vec![1.0]);
        let sigma = (-0.2f64).exp();
        let z: f64 = (0.8 - 0.5) / sigma;
        let expected = -(-0.5 * z * z - (-0.2) - 0.5 * LN_2PI);
        assert!((tape.scalar(loss) - expected).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_output_is_standardized_before_affine() {
        let mut params = ParamSet::new();
        let h = 16;
        let scale = params.add("s", Tensor::vector(vec![1.0; h]));
        let offset = params.add("o", Tensor::vector(vec![0.0; h]));
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..20 {
            let x: Vec<f64> = (0..h).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut tape = Tape::new(&params);
            let xin = tape.input(x);
            let out = tape.layer_norm(scale, offset, xin);
            let y = tape.value(out);
            let mean = y.iter().sum::<f64>() / h as f64;
            let var = y.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            assert!(mean.abs() <= 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-3, "variance {var}");
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let probs = softmax(&[1000.0, 1000.0, 999.0]);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert!((probs[0] - probs[1]).abs() < 1e-12);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn global_norm_sums_all_tensors() {
        let mut params = ParamSet::new();
        let a = params.add("a", Tensor::vector(vec![0.0, 0.0]));
        let b = params.add("b", Tensor::vector(vec![0.0]));
        let mut grads = GradStore::zeros_like(&params);
        grads.get_mut(a).data.copy_from_slice(&[3.0, 0.0]);
        grads.get_mut(b).data.copy_from_slice(&[4.0]);
        assert!((grads.global_norm() - 5.0).abs() < 1e-15);
    }
}
