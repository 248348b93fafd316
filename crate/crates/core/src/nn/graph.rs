//! A small define-by-run reverse-mode differentiation tape over `f64`
//! n-dimensional arrays.
//!
//! Every operation appends a node; node indices are therefore a topological
//! order and [`Graph::backward`] simply walks them in reverse. Parameters
//! enter the tape as shared (`Arc`) leaves so building a graph never copies
//! weights.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use ndarray::{Array2, ArrayD, Axis, Ix2, Ix4, IxDyn, Zip};

use super::conv::{self, ConvGeom};
use super::params::ParamStore;

pub type Tensor = ArrayD<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Input,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Sum(Var),
    MeanAxes(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Gather(Var, Vec<usize>),
    Conv2d {
        input: Var,
        weight: Var,
        geom: ConvGeom,
        cols: Option<Array2<f64>>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        input: Var,
        geom: ConvGeom,
    },
    AdaptiveAvgPool(Var),
    WeightedSum {
        weights: Var,
        items: Var,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Array2<f64>,
    },
    BceLogits {
        logits: Var,
        targets: Tensor,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// Records a computation for later differentiation.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

/// Sums `grad` down to `shape`, undoing numpy-style broadcasting.
fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (axis, &len) in shape.iter().enumerate() {
        if len == 1 && g.shape()[axis] != 1 {
            g = g.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    g.into_shape_with_order(IxDyn(shape))
        .expect("broadcast reduction preserves element count")
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn as2(t: &Tensor) -> ndarray::ArrayView2<'_, f64> {
    t.view().into_dimensionality::<Ix2>().expect("rank-2 tensor")
}

fn as4(t: &Tensor) -> ndarray::ArrayView4<'_, f64> {
    t.view().into_dimensionality::<Ix4>().expect("rank-4 tensor")
}

fn softmax_last(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let last = Axis(x.ndim() - 1);
    for mut lane in out.lanes_mut(last) {
        let max = lane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        lane.mapv_inplace(|v| (v - max).exp());
        let s = lane.sum();
        lane.mapv_inplace(|v| v / s);
    }
    out
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            record: true,
        }
    }

    /// A graph that evaluates only; ops skip saving backward state and
    /// [`Graph::backward`] panics.
    pub fn inference() -> Self {
        Graph {
            record: false,
            ..Graph::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_shared(Arc::new(value), op)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar() on tensor of shape {:?}", t.shape());
        *t.iter().next().unwrap()
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a named parameter. Repeated requests for the same name
    /// return the same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let value = store
            .shared(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        let v = self.push_shared(value, Op::Param);
        self.params.insert(name.to_string(), v);
        v
    }

    fn broadcast(&mut self, a: Var, b: Var, what: &str) -> Vec<usize> {
        broadcast_shape(self.shape(a), self.shape(b)).unwrap_or_else(|| {
            panic!(
                "{what}: cannot broadcast {} with {}",
                shape_str(self.shape(a)),
                shape_str(self.shape(b))
            )
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.broadcast(a, b, "add");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.broadcast(a, b, "sub");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.broadcast(a, b, "mul");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Rank-2 matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul: incompatible shapes {} x {}",
            shape_str(sa),
            shape_str(sb)
        );
        let v = as2(self.value(a)).dot(&as2(self.value(b))).into_dyn();
        self.push(v, Op::MatMul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a) * factor;
        self.push(v, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x < 0.0 { 0.0 } else { x });
        self.push(v, Op::Relu(a))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_last(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = ArrayD::from_elem(IxDyn(&[]), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Mean over the listed axes, which are removed from the result.
    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        let mut v = self.value(a).clone();
        for &ax in axes.iter().rev() {
            v = v.mean_axis(Axis(ax)).expect("non-empty axis");
        }
        self.push(v, Op::MeanAxes(a, axes))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|_| {
                panic!(
                    "reshape: {} -> {}",
                    shape_str(self.shape(a)),
                    shape_str(shape)
                )
            });
        self.push(v, Op::Reshape(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        self.push(v, Op::Concat(parts.to_vec(), axis))
    }

    /// `input[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, end: usize) -> Var {
        let v = self
            .value(input)
            .slice_axis(Axis(axis), ndarray::Slice::from(start..end))
            .to_owned();
        self.push(v, Op::Slice { input, axis, start })
    }

    /// Selects rows of a rank-2 table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Var {
        let t = as2(self.value(table));
        let v = t.select(Axis(0), rows).into_dyn();
        self.push(v, Op::Gather(table, rows.to_vec()))
    }

    /// Cross-correlation of an NCHW input with an OCKK weight.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Var {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        assert!(
            si.len() == 4 && sw.len() == 4 && si[1] == sw[1],
            "conv2d: input {} incompatible with weight {}",
            shape_str(&si),
            shape_str(&sw)
        );
        let geom = ConvGeom::new([si[0], si[1], si[2], si[3]], (sw[2], sw[3]), stride, pad)
            .expect("conv2d: kernel larger than padded input");
        let cols = conv::im2col(&as4(self.value(input)), &geom);
        let w2 = as2_reshaped(self.value(weight), sw[0], geom.patch());
        let out = cols.dot(&w2.t());
        let out = out
            .into_shape_with_order((geom.n, geom.oh, geom.ow, sw[0]))
            .expect("conv output")
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .into_owned()
            .into_dyn();
        let cols = self.record.then_some(cols);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                geom,
                cols,
            },
        )
    }

    pub fn max_pool(&mut self, input: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let s = self.shape(input).to_vec();
        let geom = ConvGeom::new([s[0], s[1], s[2], s[3]], (kernel, kernel), stride, pad)
            .expect("max_pool: kernel larger than input");
        let (out, argmax) = conv::max_pool(&as4(self.value(input)), &geom);
        let argmax = if self.record { argmax } else { Vec::new() };
        self.push(out.into_dyn(), Op::MaxPool { input, argmax })
    }

    pub fn avg_pool(&mut self, input: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let s = self.shape(input).to_vec();
        let geom = ConvGeom::new([s[0], s[1], s[2], s[3]], (kernel, kernel), stride, pad)
            .expect("avg_pool: kernel larger than input");
        let out = conv::avg_pool(&as4(self.value(input)), &geom);
        self.push(out.into_dyn(), Op::AvgPool { input, geom })
    }

    pub fn adaptive_avg_pool(&mut self, input: Var, out_h: usize, out_w: usize) -> Var {
        let out = conv::adaptive_avg_pool(&as4(self.value(input)), out_h, out_w);
        self.push(out.into_dyn(), Op::AdaptiveAvgPool(input))
    }

    /// `out[b, d] = Σ_r weights[b, r] · items[b, r, d]`.
    pub fn weighted_sum(&mut self, weights: Var, items: Var) -> Var {
        let (sw, si) = (self.shape(weights), self.shape(items));
        assert!(
            sw.len() == 2 && si.len() == 3 && sw[0] == si[0] && sw[1] == si[1],
            "weighted_sum: weights {} vs items {}",
            shape_str(sw),
            shape_str(si)
        );
        let w = as2(self.value(weights));
        let it = self.value(items).view().into_dimensionality::<ndarray::Ix3>().unwrap();
        let (b, _, d) = it.dim();
        let mut out = Array2::<f64>::zeros((b, d));
        for bi in 0..b {
            let row = w.row(bi).dot(&it.index_axis(Axis(0), bi));
            out.row_mut(bi).assign(&row);
        }
        self.push(out.into_dyn(), Op::WeightedSum { weights, items })
    }

    /// `Σ_i weights[i] · −log softmax(logits[i])[targets[i]]` for rank-2
    /// logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let l = as2(self.value(logits));
        assert_eq!(l.nrows(), targets.len(), "one target per logit row");
        assert_eq!(targets.len(), weights.len(), "one weight per target");
        let probs = softmax_last(&l.to_owned().into_dyn())
            .into_dimensionality::<Ix2>()
            .unwrap();
        let mut loss = 0.0;
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            let row = l.row(i);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += w * (lse - row[t]);
        }
        let probs = if self.record { probs } else { Array2::zeros((0, 0)) };
        self.push(
            ArrayD::from_elem(IxDyn(&[]), loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        )
    }

    /// Summed binary cross-entropy computed from logits,
    /// `Σ softplus(z) − y·z`, which equals `−Σ[y log σ(z) + (1−y) log(1−σ(z))]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Var {
        assert_eq!(self.shape(logits), targets.shape(), "bce: target shape");
        let z = self.value(logits);
        let loss: f64 = Zip::from(z)
            .and(targets)
            .fold(0.0, |acc, &z, &y| acc + z.max(0.0) - y * z + (-z.abs()).exp().ln_1p());
        self.push(
            ArrayD::from_elem(IxDyn(&[]), loss),
            Op::BceLogits {
                logits,
                targets: targets.clone(),
            },
        )
    }

    /// Back-propagates from a scalar `root` with seed 1.
    pub fn backward(&self, root: Var) -> Grads {
        let seed = ArrayD::from_elem(self.value(root).raw_dim(), 1.0);
        self.backward_with_seed(root, seed)
    }

    /// Back-propagates `seed = ∂L/∂root` through the tape.
    pub fn backward_with_seed(&self, root: Var, seed: Tensor) -> Grads {
        assert!(self.record, "backward on an inference graph");
        assert_eq!(seed.shape(), self.shape(root), "seed shape");
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }
        let node = &self.nodes[idx];
        {
            match &node.op {
                Op::Input | Op::Param => {}
                Op::Add(a, b) => {
                    acc(grads, *a, reduce_to_shape(g, self.shape(*a)));
                    acc(grads, *b, reduce_to_shape(g, self.shape(*b)));
                }
                Op::Sub(a, b) => {
                    acc(grads, *a, reduce_to_shape(g, self.shape(*a)));
                    acc(grads, *b, reduce_to_shape(&g.mapv(|v| -v), self.shape(*b)));
                }
                Op::Mul(a, b) => {
                    let ga = g * self.value(*b);
                    let gb = g * self.value(*a);
                    acc(grads, *a, reduce_to_shape(&ga, self.shape(*a)));
                    acc(grads, *b, reduce_to_shape(&gb, self.shape(*b)));
                }
                Op::MatMul(a, b) => {
                    let g2 = as2(g);
                    let ga = g2.dot(&as2(self.value(*b)).t()).into_dyn();
                    let gb = as2(self.value(*a)).t().dot(&g2).into_dyn();
                    acc(grads, *a, ga);
                    acc(grads, *b, gb);
                }
                Op::Scale(a, f) => acc(grads, *a, g * *f),
                Op::Tanh(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(&**y).for_each(|g, &y| *g *= 1.0 - y * y);
                    acc(grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(&**y).for_each(|g, &y| *g *= y * (1.0 - y));
                    acc(grads, *a, ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(x).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                    acc(grads, *a, ga);
                }
                Op::Softmax(a) => {
                    // dx = y ⊙ (g − Σ g⊙y) per lane
                    let y = &node.value;
                    let last = Axis(y.ndim() - 1);
                    let mut ga = g.clone();
                    for (mut gl, yl) in ga.lanes_mut(last).into_iter().zip(y.lanes(last)) {
                        let dot: f64 = gl.iter().zip(yl.iter()).map(|(g, y)| g * y).sum();
                        Zip::from(&mut gl).and(&yl).for_each(|g, &y| *g = y * (*g - dot));
                    }
                    acc(grads, *a, ga);
                }
                Op::Sum(a) => {
                    let s = *g.iter().next().unwrap();
                    acc(grads, *a, ArrayD::from_elem(self.value(*a).raw_dim(), s));
                }
                Op::MeanAxes(a, axes) => {
                    let in_shape = self.shape(*a);
                    let count: usize = axes.iter().map(|&ax| in_shape[ax]).product();
                    let mut ge = g.clone();
                    for &ax in axes {
                        ge = ge.insert_axis(Axis(ax));
                    }
                    let ge = ge
                        .broadcast(IxDyn(in_shape))
                        .expect("mean broadcast")
                        .mapv(|v| v / count as f64);
                    acc(grads, *a, ge);
                }
                Op::Reshape(a) => {
                    let ga = g
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order(IxDyn(self.shape(*a)))
                        .expect("reshape grad");
                    acc(grads, *a, ga);
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.shape(p)[*axis];
                        let gp = g
                            .slice_axis(Axis(*axis), ndarray::Slice::from(offset..offset + len))
                            .to_owned();
                        acc(grads, p, gp);
                        offset += len;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let mut full = ArrayD::zeros(self.value(*input).raw_dim());
                    let len = g.shape()[*axis];
                    full.slice_axis_mut(Axis(*axis), ndarray::Slice::from(*start..*start + len))
                        .assign(g);
                    acc(grads, *input, full);
                }
                Op::Gather(table, rows) => {
                    let mut full = Array2::<f64>::zeros(as2(self.value(*table)).raw_dim());
                    let g2 = as2(g);
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = full.row_mut(r);
                        dst += &g2.row(i);
                    }
                    acc(grads, *table, full.into_dyn());
                }
                Op::Conv2d {
                    input,
                    weight,
                    geom,
                    cols,
                } => {
                    let cols = cols.as_ref().expect("conv recorded");
                    let out_c = self.shape(*weight)[0];
                    let g2 = as4(g)
                        .permuted_axes([0, 2, 3, 1])
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order((geom.rows(), out_c))
                        .expect("conv grad");
                    let w2 = as2_reshaped(self.value(*weight), out_c, geom.patch());
                    let gw = g2
                        .t()
                        .dot(cols)
                        .into_shape_with_order(IxDyn(self.shape(*weight)))
                        .expect("weight grad");
                    let gcols = g2.dot(&w2);
                    acc(grads, *weight, gw);
                    acc(grads, *input, conv::col2im(&gcols, geom).into_dyn());
                }
                Op::MaxPool { input, argmax } => {
                    let mut full = ArrayD::<f64>::zeros(self.value(*input).raw_dim());
                    {
                        let dst = full.as_slice_mut().unwrap();
                        for (gv, &src) in g.iter().zip(argmax) {
                            dst[src] += gv;
                        }
                    }
                    acc(grads, *input, full);
                }
                Op::AvgPool { input, geom } => {
                    let ga = conv::avg_pool_backward(&as4(g), geom);
                    acc(grads, *input, ga.into_dyn());
                }
                Op::AdaptiveAvgPool(input) => {
                    let s = self.shape(*input);
                    let ga = conv::adaptive_avg_pool_backward(&as4(g), s[2], s[3]);
                    acc(grads, *input, ga.into_dyn());
                }
                Op::WeightedSum { weights, items } => {
                    let g2 = as2(g);
                    let w = as2(self.value(*weights));
                    let it = self
                        .value(*items)
                        .view()
                        .into_dimensionality::<ndarray::Ix3>()
                        .unwrap();
                    let (b, r, d) = it.dim();
                    let mut gw = Array2::<f64>::zeros((b, r));
                    let mut gi = ndarray::Array3::<f64>::zeros((b, r, d));
                    for bi in 0..b {
                        let items_b = it.index_axis(Axis(0), bi);
                        gw.row_mut(bi).assign(&items_b.dot(&g2.row(bi)));
                        for ri in 0..r {
                            let mut dst = gi.slice_mut(ndarray::s![bi, ri, ..]);
                            dst.scaled_add(w[[bi, ri]], &g2.row(bi));
                        }
                    }
                    acc(grads, *weights, gw.into_dyn());
                    acc(grads, *items, gi.into_dyn());
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let s = *g.iter().next().unwrap();
                    let mut gl = probs.clone();
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let mut row = gl.row_mut(i);
                        row[t] -= 1.0;
                        row *= w * s;
                    }
                    acc(grads, *logits, gl.into_dyn());
                }
                Op::BceLogits { logits, targets } => {
                    let s = *g.iter().next().unwrap();
                    let mut gl = self.value(*logits).mapv(sigmoid);
                    Zip::from(&mut gl).and(targets).for_each(|p, &y| *p = (*p - y) * s);
                    acc(grads, *logits, gl);
                }
            }
        }
    }
}

fn as2_reshaped(t: &Tensor, rows: usize, cols: usize) -> Array2<f64> {
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, cols))
        .expect("reshape to matrix")
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the root with respect to `v`, if `v` influenced it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of every parameter leaf on `graph`, keyed by name.
    pub fn params(&self, graph: &Graph) -> BTreeMap<String, Tensor> {
        graph
            .params
            .iter()
            .filter_map(|(name, &v)| self.get(v).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}
