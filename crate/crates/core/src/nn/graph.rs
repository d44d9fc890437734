//! Tape-based reverse-mode differentiation over the handful of operations
//! the network needs. Nodes are appended in evaluation order, so a reverse
//! sweep over the tape visits every node after all of its consumers.

use super::conv::{conv_backward, conv_forward, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Lower clamp on probabilities inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Batch-row indices of one mined triplet and the margin it trains with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub margin: f64,
}

enum Op<T: Real> {
    Leaf,
    Constant,
    Param(ParamId),
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
        in_dims: [usize; 3],
        cols: Vec<Vec<T>>,
    },
    Relu(Var),
    SliceStride {
        input: Var,
        stride: usize,
    },
    Concat(Var, Var),
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Softmax(Var),
    WeightedCe {
        probs: Var,
        labels: Vec<usize>,
        weights: Vec<T>,
    },
    Triplet {
        emb: Var,
        triplets: Vec<Triplet>,
    },
    Add(Var, Var),
    Scale(Var, T),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    /// False when no leaf or parameter upstream can receive gradient.
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to every node on the tape.
pub struct Gradients<T: Real> {
    node_grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.node_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[T])> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.node_grads[node].as_deref().map(|g| (id, g)))
    }
}

fn dims5(shape: &[usize]) -> Result<[usize; 5]> {
    <[usize; 5]>::try_from(shape)
        .map_err(|_| Error::ShapeMismatch(format!("expected [B, C, Z, Y, X], got {shape:?}")))
}

fn dims2(shape: &[usize]) -> Result<[usize; 2]> {
    <[usize; 2]>::try_from(shape)
        .map_err(|_| Error::ShapeMismatch(format!("expected [B, F], got {shape:?}")))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        let needs_grad = match &op {
            Op::Leaf | Op::Param(_) => true,
            Op::Constant => false,
            Op::Conv {
                input, weight, bias, ..
            }
            | Op::Linear {
                input, weight, bias, ..
            } => needs(input) || needs(weight) || needs(bias),
            Op::Relu(x)
            | Op::SliceStride { input: x, .. }
            | Op::GlobalAvgPool(x)
            | Op::Softmax(x)
            | Op::WeightedCe { probs: x, .. }
            | Op::Triplet { emb: x, .. }
            | Op::Scale(x, _) => needs(x),
            Op::Concat(a, b) | Op::Add(a, b) => needs(a) || needs(b),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }


    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let mut value = store.get(id).tensor.clone();
        value.zero_grad();
        self.push(value, Op::Param(id))
    }

    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeom) -> Result<Var> {
        let [b, c, z, y, x] = dims5(self.value(input).shape())?;
        if c != geom.in_channels
            || self.value(weight).shape() != geom.weight_shape().as_slice()
            || self.value(bias).shape() != [geom.out_channels]
        {
            return Err(Error::ShapeMismatch(format!(
                "conv {geom:?} on input {:?} with weight {:?}",
                self.value(input).shape(),
                self.value(weight).shape()
            )));
        }
        let in_dims = [z, y, x];
        let od = geom
            .out_dims(in_dims)
            .ok_or_else(|| Error::ShapeMismatch(format!("input {in_dims:?} smaller than kernel")))?;
        let in_len = c * z * y * x;
        let out_len = geom.out_channels * od.iter().product::<usize>();
        let mut out = vec![T::ZERO; b * out_len];
        let mut cols = Vec::with_capacity(b);
        {
            let xin = self.value(input).data();
            let w = self.value(weight).data();
            let bs = self.value(bias).data();
            for i in 0..b {
                cols.push(conv_forward(
                    &xin[i * in_len..(i + 1) * in_len],
                    in_dims,
                    &geom,
                    w,
                    bs,
                    &mut out[i * out_len..(i + 1) * out_len],
                ));
            }
        }
        let value = Tensor::new(vec![b, geom.out_channels, od[0], od[1], od[2]], out)?;
        Ok(self.push(
            value,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
                in_dims,
                cols,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let src = self.value(input);
        let data = src
            .data()
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu(input))
    }

    /// Keeps slices `0, stride, 2*stride, ...` along the z axis.
    pub fn slice_stride(&mut self, input: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::invalid("slice stride must be positive"));
        }
        let [b, c, z, y, x] = dims5(self.value(input).shape())?;
        let zs = z.div_ceil(stride);
        let plane = y * x;
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(b * c * zs * plane);
        for bc in 0..b * c {
            for k in 0..zs {
                let start = (bc * z + k * stride) * plane;
                out.extend_from_slice(&src[start..start + plane]);
            }
        }
        let value = Tensor::new(vec![b, c, zs, y, x], out)?;
        Ok(self.push(value, Op::SliceStride { input, stride }))
    }

    /// Concatenates along axis 1; all other extents must agree.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::ShapeMismatch(format!("cannot concat {sa:?} and {sb:?}")));
        }
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1] * inner, sb[1] * inner);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.len() + db.len());
        for i in 0..sa[0] {
            out.extend_from_slice(&da[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&db[i * cb..(i + 1) * cb]);
        }
        let mut shape = sa.clone();
        shape[1] += sb[1];
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat(a, b)))
    }

    /// Mean over every axis after the channel axis: `[B, C, ...] -> [B, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() < 3 {
            return Err(Error::ShapeMismatch(format!("cannot pool {shape:?}")));
        }
        let inner: usize = shape[2..].iter().product();
        let scale = T::from_f64(1.0 / inner as f64);
        let out = self
            .value(input)
            .data()
            .chunks(inner)
            .map(|ch| {
                let mut s = T::ZERO;
                for &v in ch {
                    s += v;
                }
                s * scale
            })
            .collect();
        let value = Tensor::new(vec![shape[0], shape[1]], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(input)))
    }

    /// `x [B, I] * w[O, I]^T + b[O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [b, i] = dims2(self.value(input).shape())?;
        let [o, wi] = dims2(self.value(weight).shape())?;
        if wi != i || self.value(bias).shape() != [o] {
            return Err(Error::ShapeMismatch(format!(
                "linear {:?} x {:?}",
                self.value(input).shape(),
                self.value(weight).shape()
            )));
        }
        let mut out: Vec<T> = (0..b).flat_map(|_| self.value(bias).data().iter().copied()).collect();
        T::gemm(
            b,
            i,
            o,
            T::ONE,
            self.value(input).data(),
            i as isize,
            1,
            self.value(weight).data(),
            1,
            i as isize,
            T::ONE,
            &mut out,
            o as isize,
            1,
        );
        let value = Tensor::new(vec![b, o], out)?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Row-wise softmax of a `[B, C]` tensor.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let [_, c] = dims2(self.value(input).shape())?;
        let mut out = Vec::with_capacity(self.value(input).len());
        for row in self.value(input).data().chunks(c) {
            let m = row.iter().copied().fold(row[0], |a, v| if v > a { v } else { a });
            let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
            let mut s = T::ZERO;
            for &v in &e {
                s += v;
            }
            out.extend(e.into_iter().map(|v| v / s));
        }
        let value = Tensor::new(self.value(input).shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax(input)))
    }

    /// Mean over the batch of `-w[label] * ln(max(p[label], 1e-12))`.
    pub fn weighted_ce(&mut self, probs: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let [b, c] = dims2(self.value(probs).shape())?;
        if labels.len() != b || weights.len() != c || labels.iter().any(|&l| l >= c) {
            return Err(Error::ShapeMismatch(format!(
                "{} labels / {} weights for probabilities {b}x{c}",
                labels.len(),
                weights.len()
            )));
        }
        let p = self.value(probs).data();
        let floor = T::from_f64(PROB_FLOOR);
        let mut total = T::ZERO;
        for (i, &l) in labels.iter().enumerate() {
            let pl = p[i * c + l];
            let pl = if pl > floor { pl } else { floor };
            total += T::from_f64(weights[l]) * -pl.ln();
        }
        let value = Tensor::scalar(total / T::from_f64(b as f64));
        Ok(self.push(
            value,
            Op::WeightedCe {
                probs,
                labels: labels.to_vec(),
                weights: weights.iter().map(|&w| T::from_f64(w)).collect(),
            },
        ))
    }

    /// Mean hinge `max(0, |a-p|^2 - |a-n|^2 + margin)` over the triplets;
    /// zero when the list is empty.
    pub fn triplet(&mut self, emb: Var, triplets: Vec<Triplet>) -> Result<Var> {
        let [b, d] = dims2(self.value(emb).shape())?;
        if triplets
            .iter()
            .any(|t| t.anchor >= b || t.positive >= b || t.negative >= b)
        {
            return Err(Error::ShapeMismatch(format!("triplet row out of range for batch {b}")));
        }
        let e = self.value(emb).data();
        let mut total = 0.0;
        for t in &triplets {
            total += triplet_hinge(
                &e[t.anchor * d..][..d],
                &e[t.positive * d..][..d],
                &e[t.negative * d..][..d],
                t.margin,
            );
        }
        let mean = if triplets.is_empty() {
            0.0
        } else {
            total / triplets.len() as f64
        };
        Ok(self.push(Tensor::scalar(T::from_f64(mean)), Op::Triplet { emb, triplets }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch("add of different shapes".into()));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let src = self.value(input);
        let data = src.data().iter().map(|&v| v * f).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(input, f))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoGraph);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf | Op::Constant | Op::Param(_) => {}
                Op::Conv {
                    input,
                    weight,
                    bias,
                    geom,
                    in_dims,
                    cols,
                } => {
                    let b = cols.len();
                    let out_len = g.len() / b;
                    let in_len = self.value(*input).len() / b;
                    let w = self.value(*weight).data();
                    let mut dw = vec![T::ZERO; w.len()];
                    let mut db = vec![T::ZERO; geom.out_channels];
                    let want_dx = self.nodes[input.0].needs_grad;
                    let mut dx = vec![T::ZERO; if want_dx { in_len * b } else { 0 }];
                    for i in 0..b {
                        conv_backward(
                            &g[i * out_len..(i + 1) * out_len],
                            &cols[i],
                            *in_dims,
                            geom,
                            w,
                            &mut dw,
                            &mut db,
                            want_dx.then(|| &mut dx[i * in_len..(i + 1) * in_len]),
                        );
                    }
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                    if want_dx {
                        accumulate(&mut grads, *input, dx);
                    }
                }
                Op::Relu(input) => {
                    let dx = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&gv, &y)| if y > T::ZERO { gv } else { T::ZERO })
                        .collect();
                    accumulate(&mut grads, *input, dx);
                }
                Op::SliceStride { input, stride } => {
                    let [b, c, z, y, x] = dims5(self.value(*input).shape())?;
                    let zs = node.value.shape()[2];
                    let plane = y * x;
                    let mut dx = vec![T::ZERO; b * c * z * plane];
                    for bc in 0..b * c {
                        for k in 0..zs {
                            let dst = (bc * z + k * stride) * plane;
                            let src = (bc * zs + k) * plane;
                            dx[dst..dst + plane].copy_from_slice(&g[src..src + plane]);
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::Concat(a, b) => {
                    let sa = self.value(*a).shape();
                    let sb = self.value(*b).shape();
                    let inner: usize = sa[2..].iter().product();
                    let (ca, cb) = (sa[1] * inner, sb[1] * inner);
                    let mut da = Vec::with_capacity(sa[0] * ca);
                    let mut dbv = Vec::with_capacity(sa[0] * cb);
                    for row in g.chunks(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        dbv.extend_from_slice(&row[ca..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, dbv);
                }
                Op::GlobalAvgPool(input) => {
                    let shape = self.value(*input).shape();
                    let inner: usize = shape[2..].iter().product();
                    let scale = T::from_f64(1.0 / inner as f64);
                    let dx = g
                        .iter()
                        .flat_map(|&gv| std::iter::repeat_n(gv * scale, inner))
                        .collect();
                    accumulate(&mut grads, *input, dx);
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let [b, i] = dims2(self.value(*input).shape())?;
                    let o = self.value(*bias).len();
                    let xin = self.value(*input).data();
                    let w = self.value(*weight).data();
                    // dW[O,I] = g^T[O,B] * x[B,I]
                    let mut dw = vec![T::ZERO; o * i];
                    T::gemm(o, b, i, T::ONE, &g, 1, o as isize, xin, i as isize, 1, T::ZERO, &mut dw, i as isize, 1);
                    let mut db = vec![T::ZERO; o];
                    for row in g.chunks(o) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    // dX[B,I] = g[B,O] * W[O,I]
                    let mut dx = vec![T::ZERO; b * i];
                    T::gemm(b, o, i, T::ONE, &g, o as isize, 1, w, i as isize, 1, T::ZERO, &mut dx, i as isize, 1);
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *input, dx);
                }
                Op::Softmax(input) => {
                    let c = node.value.shape()[1];
                    let mut dx = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks(c).zip(node.value.data().chunks(c)) {
                        let mut dot = T::ZERO;
                        for (&a, &b) in gr.iter().zip(yr) {
                            dot += a * b;
                        }
                        dx.extend(gr.iter().zip(yr).map(|(&gv, &y)| y * (gv - dot)));
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::WeightedCe {
                    probs,
                    labels,
                    weights,
                } => {
                    let p = self.value(*probs);
                    let c = p.shape()[1];
                    let b = labels.len();
                    let floor = T::from_f64(PROB_FLOOR);
                    let mut dp = vec![T::ZERO; p.len()];
                    for (i, &l) in labels.iter().enumerate() {
                        let pl = p.data()[i * c + l];
                        if pl > floor {
                            dp[i * c + l] = -g[0] * weights[l] / (pl * T::from_f64(b as f64));
                        }
                    }
                    accumulate(&mut grads, *probs, dp);
                }
                Op::Triplet { emb, triplets } => {
                    let e = self.value(*emb);
                    let d = e.shape()[1];
                    let mut de = vec![T::ZERO; e.len()];
                    if !triplets.is_empty() {
                        let s = g[0].to_f64() / triplets.len() as f64;
                        let data = e.data();
                        for t in triplets {
                            let (a, p, n) = (&data[t.anchor * d..][..d], &data[t.positive * d..][..d], &data[t.negative * d..][..d]);
                            if triplet_hinge(a, p, n, t.margin) <= 0.0 {
                                continue;
                            }
                            for k in 0..d {
                                let (av, pv, nv) = (a[k].to_f64(), p[k].to_f64(), n[k].to_f64());
                                de[t.anchor * d + k] += T::from_f64(s * 2.0 * (nv - pv));
                                de[t.positive * d + k] += T::from_f64(s * -2.0 * (av - pv));
                                de[t.negative * d + k] += T::from_f64(s * 2.0 * (av - nv));
                            }
                        }
                    }
                    accumulate(&mut grads, *emb, de);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Scale(input, f) => {
                    let dx = g.iter().map(|&v| v * *f).collect();
                    accumulate(&mut grads, *input, dx);
                }
            }
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            node_grads: grads,
            params,
        })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

/// `max(0, |a-p|^2 - |a-n|^2 + margin)`, accumulated in f64.
pub fn triplet_hinge<T: Real>(a: &[T], p: &[T], n: &[T], margin: f64) -> f64 {
    let mut dap = 0.0;
    let mut dan = 0.0;
    for k in 0..a.len() {
        let (av, pv, nv) = (a[k].to_f64(), p[k].to_f64(), n[k].to_f64());
        dap += (av - pv) * (av - pv);
        dan += (av - nv) * (av - nv);
    }
    (dap - dan + margin).max(0.0)
}
