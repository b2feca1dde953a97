//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive in execution order, so node inputs always
//! precede the node itself. [`Tape::backward`] walks the tape in reverse and
//! accumulates gradients additively, which handles fan-out without special
//! cases. A tape belongs to one thread for the duration of a forward/backward
//! pass; the resulting [`Tensor`] values can be cloned out and shared freely.
//!
//! ```
//! use coopens_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let y = tape.sum(sq);
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

mod kernels;

use alloc::vec;
use alloc::vec::Vec;
use core::mem;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::ConvDims;

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Floor on the non-ground-truth mass when renormalizing conditional probabilities.
pub const COND_MASS_FLOOR: f64 = 1e-9;
/// Floor on vector norms inside cosine similarity.
pub const NORM_FLOOR: f64 = 1e-12;

/// Handle to a node recorded on a [`Tape`].
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
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Conv3x3 {
        x: Var,
        kernels: Var,
        bias: Option<Var>,
        dims: ConvDims,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
        spatial: usize,
    },
    Reshape(Var),
    SoftmaxTemp {
        x: Var,
        temperature: f64,
    },
    ConditionNonGt {
        p: Var,
        labels: Vec<usize>,
    },
    CrossEntropy {
        target: Var,
        pred: Var,
    },
    Cosine(Var, Var),
    Kl(Var, Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    L2NormSq(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    FaultyScale(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Recorded computation plus per-node gradient slots.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn row_split(shape: &[usize]) -> (usize, usize, Vec<usize>) {
    match shape.split_last() {
        Some((&d, lead)) => (lead.iter().product(), d, lead.to_vec()),
        None => (1, 1, Vec::new()),
    }
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

    /// Record a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Record a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].value.len()],
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    // ---- primitives -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `x[m,n] + bias[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::dim("add_row_bias", sx, sb));
        }
        let n = sb[0];
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRowBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = map(self.value(x), |v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu(x), &[x])
    }

    /// 3x3 cross-correlation with stride 1 and zero padding 1.
    ///
    /// `x` is `[c_in, h, w]` or batched `[b, c_in, h, w]`; `kernels` is
    /// `[c_out, c_in, 3, 3]`; the optional `bias` is `[c_out]`.
    pub fn conv2d(&mut self, x: Var, kernels: Var, bias: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernels).to_vec();
        let (batch, c_in, h, w) = match *sx.as_slice() {
            [c, h, w] => (1, c, h, w),
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(Error::dim("conv2d", &sx, &sk)),
        };
        if sk.len() != 4 || sk[2] != 3 || sk[3] != 3 || sk[1] != c_in {
            return Err(Error::dim("conv2d", &sx, &sk));
        }
        let c_out = sk[0];
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::dim("conv2d bias", self.shape(b), &[c_out]));
            }
        }
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            h,
            w,
        };
        let out = kernels::conv3x3_forward(
            self.value(x).data(),
            self.value(kernels).data(),
            bias.map(|b| self.value(b).data()),
            dims,
        );
        let shape = if sx.len() == 3 {
            vec![c_out, h, w]
        } else {
            vec![batch, c_out, h, w]
        };
        let mut inputs = vec![x, kernels];
        inputs.extend(bias);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Conv3x3 { x, kernels, bias, dims },
            &inputs,
        ))
    }

    /// 2x2 max pooling with stride 2 over the two trailing dimensions.
    /// Odd trailing rows/columns are dropped.
    pub fn max_pool_2x2(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || sx[sx.len() - 2] < 2 || sx[sx.len() - 1] < 2 {
            return Err(Error::dim("max_pool_2x2", &sx, &[2, 2]));
        }
        let (h, w) = (sx[sx.len() - 2], sx[sx.len() - 1]);
        let planes: usize = sx[..sx.len() - 2].iter().product();
        let (h2, w2) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(planes * h2 * w2);
        let mut argmax = Vec::with_capacity(planes * h2 * w2);
        for p in 0..planes {
            let base = p * h * w;
            for y in 0..h2 {
                for xx in 0..w2 {
                    let i0 = base + 2 * y * w + 2 * xx;
                    let mut best = i0;
                    for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                        if xd[cand] > xd[best] {
                            best = cand;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let mut shape = sx[..sx.len() - 2].to_vec();
        shape.extend([h2, w2]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// Mean over the two trailing (spatial) dimensions.
    pub fn global_average_pool(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 3 {
            return Err(Error::dim("global_average_pool", &sx, &[]));
        }
        let spatial = sx[sx.len() - 2] * sx[sx.len() - 1];
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(spatial)
            .map(|c| c.iter().sum::<f64>() / spatial as f64)
            .collect();
        let shape = sx[..sx.len() - 2].to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::GlobalAvgPool { x, spatial }, &[x]))
    }

    /// Collapse everything but the leading (batch) dimension.
    pub fn flatten(&mut self, x: Var) -> Var {
        let sx = self.shape(x);
        let shape = match sx.split_first() {
            Some((&b, rest)) if !rest.is_empty() => vec![b, rest.iter().product()],
            _ => sx.to_vec(),
        };
        self.reshape(x, shape).expect("flatten preserves element count")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = Tensor::new(shape, self.value(x).data().to_vec())?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Row-wise `softmax(x / temperature)` over the last dimension.
    pub fn softmax_temp(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::param("temperature", "must be positive and finite"));
        }
        let (_, d, _) = row_split(self.shape(x));
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            softmax_in_place(row, temperature);
        }
        Ok(self.push(out, Op::SoftmaxTemp { x, temperature }, &[x]))
    }

    /// Zero the ground-truth entry of each probability row and renormalize
    /// the rest to sum to one. The normalizer is the non-ground-truth mass,
    /// floored at [`COND_MASS_FLOOR`].
    pub fn condition_non_gt(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let (rows, d, _) = row_split(self.shape(p));
        if labels.len() != rows {
            return Err(Error::dim("condition_non_gt", self.shape(p), &[labels.len()]));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= d) {
            return Err(Error::param(
                "label",
                alloc::format!("{y} out of range for {d} classes"),
            ));
        }
        let mut out = self.value(p).clone();
        for (row, &y) in out.data_mut().chunks_exact_mut(d).zip(labels) {
            let mass = non_gt_mass(row, y).max(COND_MASS_FLOOR);
            for (j, v) in row.iter_mut().enumerate() {
                *v = if j == y { 0.0 } else { *v / mass };
            }
        }
        Ok(self.push(
            out,
            Op::ConditionNonGt {
                p,
                labels: labels.to_vec(),
            },
            &[p],
        ))
    }

    /// Row-wise `-sum_c target_c * ln(clamp(pred_c))`.
    pub fn cross_entropy(&mut self, target: Var, pred: Var) -> Result<Var> {
        self.same_shape("cross_entropy", target, pred)?;
        let (_, d, lead) = row_split(self.shape(pred));
        let out: Vec<f64> = self
            .value(target)
            .rows_of(d)
            .zip(self.value(pred).rows_of(d))
            .map(|(t, p)| -t.iter().zip(p).map(|(tv, pv)| tv * clamp_ln(*pv)).sum::<f64>())
            .collect();
        Ok(self.push(
            Tensor::from_parts(lead, out),
            Op::CrossEntropy { target, pred },
            &[target, pred],
        ))
    }

    /// Row-wise cosine similarity with norms floored at [`NORM_FLOOR`].
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        self.same_shape("cosine_similarity", u, v)?;
        let (_, d, lead) = row_split(self.shape(u));
        let out: Vec<f64> = self
            .value(u)
            .rows_of(d)
            .zip(self.value(v).rows_of(d))
            .map(|(a, b)| cosine(a, b))
            .collect();
        Ok(self.push(Tensor::from_parts(lead, out), Op::Cosine(u, v), &[u, v]))
    }

    /// Row-wise `KL(p || q)`; logarithms see inputs clamped to
    /// `[PROB_FLOOR, 1]` and the result is floored at zero.
    pub fn kl_divergence(&mut self, p: Var, q: Var) -> Result<Var> {
        self.same_shape("kl_divergence", p, q)?;
        let (_, d, lead) = row_split(self.shape(p));
        let out: Vec<f64> = self
            .value(p)
            .rows_of(d)
            .zip(self.value(q).rows_of(d))
            .map(|(a, b)| kl_row(a, b))
            .collect();
        Ok(self.push(Tensor::from_parts(lead, out), Op::Kl(p, q), &[p, q]))
    }

    /// Inverted dropout: kept activations are divided by `1 - p_drop`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p_drop: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p_drop) {
            return Err(Error::param("p_drop", "must lie in [0, 1)"));
        }
        let keep = 1.0 / (1.0 - p_drop);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p_drop { 0.0 } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::Dropout { x, mask }, &[x]))
    }

    pub fn l2_norm_squared(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::L2NormSq(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Sum over the last dimension.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let (_, d, lead) = row_split(self.shape(x));
        let out: Vec<f64> = self.value(x).rows_of(d).map(|r| r.iter().sum()).collect();
        self.push(Tensor::from_parts(lead, out), Op::SumLast(x), &[x])
    }

    /// `c * x` whose backward rule deliberately omits the factor `c`.
    /// Negative control for gradient-check harnesses; never use in models.
    #[doc(hidden)]
    pub fn faulty_scale(&mut self, x: Var, c: f64) -> Var {
        let out = map(self.value(x), |v| v * c);
        self.push(out, Op::FaultyScale(x), &[x])
    }

    // ---- backward ---------------------------------------------------------

    /// Backpropagate from a single-element `root` seeded with 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::dim("backward root", self.shape(root), &[]));
        }
        self.backward_with(&[(root, &[1.0])])
    }

    /// Backpropagate from arbitrary seeds; each seed slice must match the
    /// element count of its node. Seeds add onto any existing gradient.
    pub fn backward_with(&mut self, seeds: &[(Var, &[f64])]) -> Result<()> {
        let mut top = 0;
        for &(v, g) in seeds {
            let n = self.value(v).len();
            if g.len() != n {
                return Err(Error::dim("backward seed", &[g.len()], &[n]));
            }
            if self.nodes[v.0].requires_grad {
                add_into(self.grad_slot(v), g);
            }
            top = top.max(v.0 + 1);
        }
        for i in (0..top).rev() {
            let Some(gout) = self.nodes[i].grad.take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                self.nodes[i].grad = Some(gout);
                continue;
            }
            let op = mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop_node(i, &op, &gout);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(gout);
        }
        Ok(())
    }

    fn grad_slot(&mut self, v: Var) -> &mut Vec<f64> {
        let n = self.nodes[v.0].value.len();
        self.nodes[v.0].grad.get_or_insert_with(|| vec![0.0; n])
    }

    /// Run `f` with read access to all node values and write access to the
    /// gradient buffer of `target`. No-op for nodes that do not need gradients.
    fn accumulate(&mut self, target: Var, f: impl FnOnce(&[Node], &mut [f64])) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let mut g = mem::take(self.grad_slot(target));
        f(&self.nodes, &mut g);
        self.nodes[target.0].grad = Some(g);
    }

    fn backprop_node(&mut self, i: usize, op: &Op, gout: &[f64]) {
        let out = Var(i);
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                self.accumulate(a, |nodes, ga| {
                    kernels::matmul_bt_acc(gout, nodes[b.0].value.data(), ga, m, n, k)
                });
                self.accumulate(b, |nodes, gb| {
                    kernels::matmul_at_acc(nodes[a.0].value.data(), gout, gb, m, k, n)
                });
            }
            Op::Add(a, b) => {
                self.accumulate(a, |_, g| add_into(g, gout));
                self.accumulate(b, |_, g| add_into(g, gout));
            }
            Op::Sub(a, b) => {
                self.accumulate(a, |_, g| add_into(g, gout));
                self.accumulate(b, |_, g| {
                    for (gv, o) in g.iter_mut().zip(gout) {
                        *gv -= o;
                    }
                });
            }
            Op::Mul(a, b) => {
                self.accumulate(a, |nodes, g| {
                    for ((gv, o), bv) in g.iter_mut().zip(gout).zip(nodes[b.0].value.data()) {
                        *gv += o * bv;
                    }
                });
                self.accumulate(b, |nodes, g| {
                    for ((gv, o), av) in g.iter_mut().zip(gout).zip(nodes[a.0].value.data()) {
                        *gv += o * av;
                    }
                });
            }
            Op::AddRowBias(x, bias) => {
                self.accumulate(x, |_, g| add_into(g, gout));
                self.accumulate(bias, |_, g| {
                    let n = g.len();
                    for row in gout.chunks_exact(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::Scale(x, c) => self.accumulate(x, |_, g| {
                for (gv, o) in g.iter_mut().zip(gout) {
                    *gv += c * o;
                }
            }),
            Op::FaultyScale(x) => self.accumulate(x, |_, g| add_into(g, gout)),
            Op::Relu(x) => self.accumulate(x, |nodes, g| {
                for ((gv, o), xv) in g.iter_mut().zip(gout).zip(nodes[x.0].value.data()) {
                    if *xv > 0.0 {
                        *gv += o;
                    }
                }
            }),
            Op::Conv3x3 {
                x,
                kernels: k,
                bias,
                dims,
            } => {
                self.accumulate(x, |nodes, g| {
                    kernels::conv3x3_backward_input(gout, nodes[k.0].value.data(), g, dims)
                });
                self.accumulate(k, |nodes, g| {
                    kernels::conv3x3_backward_params(gout, nodes[x.0].value.data(), Some(g), None, dims)
                });
                if let Some(b) = bias {
                    self.accumulate(b, |nodes, g| {
                        kernels::conv3x3_backward_params(gout, nodes[x.0].value.data(), None, Some(g), dims)
                    });
                }
            }
            Op::MaxPool2 { x, ref argmax } => self.accumulate(x, |_, g| {
                for (o, &src) in gout.iter().zip(argmax) {
                    g[src] += o;
                }
            }),
            Op::GlobalAvgPool { x, spatial } => self.accumulate(x, |_, g| {
                let inv = 1.0 / spatial as f64;
                for (chunk, o) in g.chunks_exact_mut(spatial).zip(gout) {
                    for gv in chunk {
                        *gv += o * inv;
                    }
                }
            }),
            Op::Reshape(x) => self.accumulate(x, |_, g| add_into(g, gout)),
            Op::SoftmaxTemp { x, temperature } => self.accumulate(x, |nodes, g| {
                let y = nodes[out.0].value.data();
                let d = *nodes[out.0].value.shape().last().unwrap_or(&1);
                for ((gr, yr), or) in g.chunks_exact_mut(d).zip(y.chunks_exact(d)).zip(gout.chunks_exact(d)) {
                    let inner: f64 = yr.iter().zip(or).map(|(a, b)| a * b).sum();
                    for ((gv, yv), ov) in gr.iter_mut().zip(yr).zip(or) {
                        *gv += yv * (ov - inner) / temperature;
                    }
                }
            }),
            Op::ConditionNonGt { p, ref labels } => self.accumulate(p, |nodes, g| {
                let pv = nodes[p.0].value.data();
                let d = *nodes[p.0].value.shape().last().unwrap_or(&1);
                for (((gr, pr), or), &y) in g
                    .chunks_exact_mut(d)
                    .zip(pv.chunks_exact(d))
                    .zip(gout.chunks_exact(d))
                    .zip(labels)
                {
                    let raw = non_gt_mass(pr, y);
                    let mass = raw.max(COND_MASS_FLOOR);
                    // d out_i / d p_j = delta_ij / s - p_i / s^2 (mass not floored)
                    let cross = if raw >= COND_MASS_FLOOR {
                        (0..d).filter(|&j| j != y).map(|j| or[j] * pr[j]).sum::<f64>() / (mass * mass)
                    } else {
                        0.0
                    };
                    for j in (0..d).filter(|&j| j != y) {
                        gr[j] += or[j] / mass - cross;
                    }
                }
            }),
            Op::CrossEntropy { target, pred } => {
                let d = *self.shape(pred).last().unwrap_or(&1);
                self.accumulate(target, |nodes, g| {
                    let pv = nodes[pred.0].value.data();
                    for ((gr, pr), o) in g.chunks_exact_mut(d).zip(pv.chunks_exact(d)).zip(gout) {
                        for (gv, p) in gr.iter_mut().zip(pr) {
                            *gv -= o * clamp_ln(*p);
                        }
                    }
                });
                self.accumulate(pred, |nodes, g| {
                    let tv = nodes[target.0].value.data();
                    let pv = nodes[pred.0].value.data();
                    for (((gr, tr), pr), o) in g
                        .chunks_exact_mut(d)
                        .zip(tv.chunks_exact(d))
                        .zip(pv.chunks_exact(d))
                        .zip(gout)
                    {
                        for ((gv, t), p) in gr.iter_mut().zip(tr).zip(pr) {
                            if (PROB_FLOOR..=1.0).contains(p) {
                                *gv -= o * t / p;
                            }
                        }
                    }
                });
            }
            Op::Cosine(u, v) => {
                let d = *self.shape(u).last().unwrap_or(&1);
                self.accumulate(u, |nodes, g| {
                    cosine_backward(nodes[u.0].value.data(), nodes[v.0].value.data(), gout, g, d)
                });
                self.accumulate(v, |nodes, g| {
                    cosine_backward(nodes[v.0].value.data(), nodes[u.0].value.data(), gout, g, d)
                });
            }
            Op::Kl(p, q) => {
                let d = *self.shape(p).last().unwrap_or(&1);
                self.accumulate(p, |nodes, g| {
                    let (pv, qv, ov) = (
                        nodes[p.0].value.data(),
                        nodes[q.0].value.data(),
                        nodes[out.0].value.data(),
                    );
                    for ((((gr, pr), qr), o), kl) in g
                        .chunks_exact_mut(d)
                        .zip(pv.chunks_exact(d))
                        .zip(qv.chunks_exact(d))
                        .zip(gout)
                        .zip(ov)
                    {
                        if *kl <= 0.0 && kl_raw(pr, qr) < 0.0 {
                            continue;
                        }
                        for ((gv, a), b) in gr.iter_mut().zip(pr).zip(qr) {
                            let mut dv = clamp_ln(*a) - clamp_ln(*b);
                            if (PROB_FLOOR..=1.0).contains(a) {
                                dv += 1.0;
                            }
                            *gv += o * dv;
                        }
                    }
                });
                self.accumulate(q, |nodes, g| {
                    let (pv, qv, ov) = (
                        nodes[p.0].value.data(),
                        nodes[q.0].value.data(),
                        nodes[out.0].value.data(),
                    );
                    for ((((gr, pr), qr), o), kl) in g
                        .chunks_exact_mut(d)
                        .zip(pv.chunks_exact(d))
                        .zip(qv.chunks_exact(d))
                        .zip(gout)
                        .zip(ov)
                    {
                        if *kl <= 0.0 && kl_raw(pr, qr) < 0.0 {
                            continue;
                        }
                        for ((gv, a), b) in gr.iter_mut().zip(pr).zip(qr) {
                            if (PROB_FLOOR..=1.0).contains(b) {
                                *gv -= o * a.clamp(0.0, 1.0) / b;
                            }
                        }
                    }
                });
            }
            Op::Dropout { x, ref mask } => self.accumulate(x, |_, g| {
                for ((gv, o), m) in g.iter_mut().zip(gout).zip(mask) {
                    *gv += o * m;
                }
            }),
            Op::L2NormSq(x) => self.accumulate(x, |nodes, g| {
                let o = gout[0];
                for (gv, xv) in g.iter_mut().zip(nodes[x.0].value.data()) {
                    *gv += 2.0 * xv * o;
                }
            }),
            Op::Sum(x) => self.accumulate(x, |_, g| {
                for gv in g.iter_mut() {
                    *gv += gout[0];
                }
            }),
            Op::Mean(x) => self.accumulate(x, |_, g| {
                let s = gout[0] / g.len() as f64;
                for gv in g.iter_mut() {
                    *gv += s;
                }
            }),
            Op::SumLast(x) => self.accumulate(x, |_, g| {
                let d = g.len() / gout.len();
                for (gr, o) in g.chunks_exact_mut(d).zip(gout) {
                    for gv in gr {
                        *gv += o;
                    }
                }
            }),
        }
    }
}

// ---- shared scalar helpers ------------------------------------------------

trait RowsOf {
    fn rows_of(&self, d: usize) -> core::slice::ChunksExact<'_, f64>;
}

impl RowsOf for Tensor {
    fn rows_of(&self, d: usize) -> core::slice::ChunksExact<'_, f64> {
        self.data().chunks_exact(d)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn clamp_ln(p: f64) -> f64 {
    libm::log(p.clamp(PROB_FLOOR, 1.0))
}

/// Max-subtracted `softmax(row / t)` in place.
pub(crate) fn softmax_in_place(row: &mut [f64], t: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp((*v - max) / t);
        total += *v;
    }
    // exp underflow would otherwise produce exact zeros for spreads beyond ~745
    for v in row.iter_mut() {
        *v = (*v / total).max(f64::MIN_POSITIVE);
    }
}

fn non_gt_mass(row: &[f64], y: usize) -> f64 {
    row.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, v)| v).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    libm::sqrt(kernels::dot(a, a))
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    kernels::dot(a, b) / (norm(a).max(NORM_FLOOR) * norm(b).max(NORM_FLOOR))
}

fn cosine_backward(a: &[f64], b: &[f64], gout: &[f64], g: &mut [f64], d: usize) {
    for (((gr, ar), br), o) in g
        .chunks_exact_mut(d)
        .zip(a.chunks_exact(d))
        .zip(b.chunks_exact(d))
        .zip(gout)
    {
        let (na_raw, nb) = (norm(ar), norm(br).max(NORM_FLOOR));
        let na = na_raw.max(NORM_FLOOR);
        let dot = kernels::dot(ar, br);
        let radial = if na_raw >= NORM_FLOOR {
            dot / (na * na * na * nb)
        } else {
            0.0
        };
        for ((gv, av), bv) in gr.iter_mut().zip(ar).zip(br) {
            *gv += o * (bv / (na * nb) - av * radial);
        }
    }
}

fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| a.clamp(0.0, 1.0) * (clamp_ln(*a) - clamp_ln(*b)))
        .sum()
}

pub(crate) fn kl_row(p: &[f64], q: &[f64]) -> f64 {
    kl_raw(p, q).max(0.0)
}

#[cfg(test)]
mod tests;
