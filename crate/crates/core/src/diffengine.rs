//! Reverse-mode differentiation over dense row-major blocks.
//!
//! A [`Tape`] records operations on 2-D arrays. A 1×1 array plays the role of
//! a scalar; larger arrays hold a whole mini-batch at once so a single matrix
//! product covers every sample.
//!
//! Input derivatives of a network are carried as *jets*: the rows of a block
//! are split into components (value, one first partial per input axis, and a
//! pure second partial for selected axes), each `batch` rows tall. Tangents
//! pass through a linear layer with the same weight matrix and no bias, so one
//! product propagates all components. The activation is the only place
//! components interact, and the fused jet operation implements that step
//! together with its adjoint. Running [`Tape::backward`] on a loss built from
//! jet components therefore differentiates through the input derivatives,
//! which is what a residual loss requires.
//!
//! Parameter gradients are flattened leaf by leaf, each leaf row-major, in the
//! order the caller lists the leaves (see [`grad_params`]).

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Mlp, NetworkParams};

/// Smooth activation functions usable inside residual losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sin,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sin => z.sin(),
        }
    }

    /// The function and its first three derivatives at `z`.
    #[inline]
    pub fn derivs(self, z: f64) -> [f64; 4] {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let s = 1.0 - t * t;
                [t, s, -2.0 * t * s, -2.0 * s * (1.0 - 3.0 * t * t)]
            }
            Activation::Sin => {
                let (sn, cs) = z.sin_cos();
                [sn, cs, -sn, -cs]
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sin => "sin",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sin" => Ok(Activation::Sin),
            other => Err(Error::config(format!(
                "unknown activation `{other}` (expected tanh or sin)"
            ))),
        }
    }
}

/// Row layout of a jet block.
///
/// Component 0 holds values. With `first` set, components `1..=n_inputs` hold
/// the first partial along each input axis and the remaining components the
/// pure second partials for the axes listed in `second`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JetLayout {
    pub batch: usize,
    pub n_inputs: usize,
    pub first: bool,
    pub second: Vec<usize>,
}

impl JetLayout {
    pub fn values_only(batch: usize, n_inputs: usize) -> Self {
        Self {
            batch,
            n_inputs,
            first: false,
            second: Vec::new(),
        }
    }

    /// First partials on every axis, pure second partials on `second`.
    pub fn with_second(batch: usize, n_inputs: usize, second: Vec<usize>) -> Self {
        assert!(second.iter().all(|&a| a < n_inputs));
        Self {
            batch,
            n_inputs,
            first: true,
            second,
        }
    }

    /// First and pure second partials on every axis.
    pub fn full(batch: usize, n_inputs: usize) -> Self {
        Self::with_second(batch, n_inputs, (0..n_inputs).collect())
    }

    fn n_first(&self) -> usize {
        if self.first {
            self.n_inputs
        } else {
            0
        }
    }

    pub fn n_components(&self) -> usize {
        1 + self.n_first() + self.second.len()
    }

    pub fn rows(&self) -> usize {
        self.batch * self.n_components()
    }

    pub fn value_component(&self) -> usize {
        0
    }

    pub fn first_component(&self, axis: usize) -> Option<usize> {
        (self.first && axis < self.n_inputs).then_some(1 + axis)
    }

    pub fn second_component(&self, axis: usize) -> Option<usize> {
        self.second
            .iter()
            .position(|&a| a == axis)
            .map(|j| 1 + self.n_first() + j)
    }

    /// Seed block for inputs `x` (batch × n_inputs) under the affine map
    /// `x ↦ (x - shift) * scale`, applied per axis.
    pub fn seed(&self, x: ArrayView2<f64>, shift: &[f64], scale: &[f64]) -> Array2<f64> {
        let b = self.batch;
        assert_eq!(x.nrows(), b);
        assert_eq!(x.ncols(), self.n_inputs);
        let mut out = Array2::zeros((self.rows(), self.n_inputs));
        for r in 0..b {
            for a in 0..self.n_inputs {
                out[[r, a]] = (x[[r, a]] - shift[a]) * scale[a];
            }
        }
        if self.first {
            for a in 0..self.n_inputs {
                let c = 1 + a;
                for r in 0..b {
                    out[[c * b + r, a]] = scale[a];
                }
            }
        }
        out
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias { x: Var, bias: Var, rows: usize },
    Jet { z: Var, layout: JetLayout, act: Activation },
    Block { x: Var, row0: usize, col0: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MeanSquare(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder. Single-threaded; build one per evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by one reverse sweep.
pub struct Gradients {
    adj: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.adj.get(v.0).and_then(|a| a.as_ref())
    }
}

fn broadcast_shape(a: &Array2<f64>, b: &Array2<f64>) -> (usize, usize) {
    if a.dim() == b.dim() || b.dim() == (1, 1) {
        a.dim()
    } else if a.dim() == (1, 1) {
        b.dim()
    } else {
        panic!("incompatible shapes {:?} and {:?}", a.dim(), b.dim())
    }
}

fn binary(a: &Array2<f64>, b: &Array2<f64>, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
    let shape = broadcast_shape(a, b);
    if a.dim() == b.dim() {
        ndarray::Zip::from(a).and(b).map_collect(|&x, &y| f(x, y))
    } else if b.dim() == (1, 1) {
        let y = b[[0, 0]];
        a.mapv(|x| f(x, y))
    } else {
        let x = a[[0, 0]];
        let out = b.mapv(|y| f(x, y));
        debug_assert_eq!(out.dim(), shape);
        out
    }
}

/// Reduce an adjoint to the shape of an operand that may have been broadcast.
fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    if g.dim() == shape {
        g
    } else {
        debug_assert_eq!(shape, (1, 1));
        Array2::from_elem((1, 1), g.sum())
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut adj[v.0] {
        Some(a) => *a += &g,
        slot @ None => *slot = Some(g),
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

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable leaf.
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar_variable(&mut self, value: f64) -> Var {
        self.variable(Array2::from_elem((1, 1), value))
    }

    /// A leaf that never receives an adjoint.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// Adds the 1×n row `bias` to the first `rows` rows of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var, rows: usize) -> Var {
        let mut value = self.nodes[x.0].value.clone();
        {
            let b = self.nodes[bias.0].value.row(0);
            for mut r in value.slice_mut(s![..rows, ..]).rows_mut() {
                r += &b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(value, Op::AddBias { x, bias, rows }, rg)
    }

    /// Applies `act` to a jet block, propagating first and pure second partials.
    pub fn jet(&mut self, z: Var, layout: &JetLayout, act: Activation) -> Var {
        let zv = &self.nodes[z.0].value;
        assert_eq!(zv.nrows(), layout.rows(), "jet block height");
        let zs = zv.as_slice().expect("standard layout");
        let len = layout.batch * zv.ncols();
        let nf = layout.n_first();
        let mut out = vec![0.0; zs.len()];
        for i in 0..len {
            let [p0, p1, p2, _] = act.derivs(zs[i]);
            out[i] = p0;
            for a in 0..nf {
                let k = (1 + a) * len + i;
                out[k] = p1 * zs[k];
            }
            for (j, &a) in layout.second.iter().enumerate() {
                let k1 = (1 + a) * len + i;
                let k2 = (1 + nf + j) * len + i;
                out[k2] = p1 * zs[k2] + p2 * zs[k1] * zs[k1];
            }
        }
        let value = Array2::from_shape_vec(zv.dim(), out).expect("shape");
        let rg = self.rg(z);
        self.push(
            value,
            Op::Jet {
                z,
                layout: layout.clone(),
                act,
            },
            rg,
        )
    }

    /// Copies the `rows × cols` block of `x` starting at (`row0`, `col0`).
    pub fn block(&mut self, x: Var, row0: usize, col0: usize, rows: usize, cols: usize) -> Var {
        let value = self.nodes[x.0]
            .value
            .slice(s![row0..row0 + rows, col0..col0 + cols])
            .to_owned();
        let rg = self.rg(x);
        self.push(value, Op::Block { x, row0, col0 }, rg)
    }

    /// Column `col` of jet component `component` (batch × 1).
    pub fn component(&mut self, x: Var, layout: &JetLayout, component: usize, col: usize) -> Var {
        self.block(x, component * layout.batch, col, layout.batch, 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = binary(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = binary(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = binary(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Mean of squared entries, as a 1×1 node.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let n = v.len().max(1) as f64;
        let ms = v.iter().map(|x| x * x).sum::<f64>() / n;
        let rg = self.rg(a);
        self.push(Array2::from_elem((1, 1), ms), Op::MeanSquare(a), rg)
    }

    /// Sum of 1×1 nodes, left to right.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let mut it = terms.iter().copied();
        let first = it.next().expect("sum of no terms");
        it.fold(first, |acc, t| self.add(acc, t))
    }

    /// Reverse sweep seeded with ones at `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        if !self.nodes[root.0].requires_grad {
            return Gradients { adj };
        }
        adj[root.0] = Some(Array2::ones(self.nodes[root.0].value.dim()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                adj[idx] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g.dot(&bv.t()));
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, av.t().dot(&g));
                    }
                }
                Op::AddBias { x, bias, rows } => {
                    if self.rg(*bias) {
                        let gb = g.slice(s![..*rows, ..]).sum_axis(ndarray::Axis(0));
                        let n = gb.len();
                        accumulate(&mut adj, *bias, gb.into_shape_with_order((1, n)).unwrap());
                    }
                    if self.rg(*x) {
                        accumulate(&mut adj, *x, g);
                    }
                }
                Op::Jet { z, layout, act } => {
                    if self.rg(*z) {
                        let gz = jet_adjoint(&self.nodes[z.0].value, &g, layout, *act);
                        accumulate(&mut adj, *z, gz);
                    }
                }
                Op::Block { x, row0, col0 } => {
                    let (r, c) = g.dim();
                    let slot = adj[x.0]
                        .get_or_insert_with(|| Array2::zeros(self.nodes[x.0].value.dim()));
                    let mut dst = slot.slice_mut(s![*row0..*row0 + r, *col0..*col0 + c]);
                    dst += &g;
                }
                Op::Add(a, b) => {
                    let (sa, sb) = (self.nodes[a.0].value.dim(), self.nodes[b.0].value.dim());
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, reduce_to(g.clone(), sa));
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, reduce_to(g, sb));
                    }
                }
                Op::Sub(a, b) => {
                    let (sa, sb) = (self.nodes[a.0].value.dim(), self.nodes[b.0].value.dim());
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, reduce_to(g.clone(), sa));
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, reduce_to(-g, sb));
                    }
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, reduce_to(binary(&g, bv, |x, y| x * y), av.dim()));
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, reduce_to(binary(&g, av, |x, y| x * y), bv.dim()));
                    }
                }
                Op::Scale(a, c) => {
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g * *c);
                    }
                }
                Op::MeanSquare(a) => {
                    if self.rg(*a) {
                        let av = &self.nodes[a.0].value;
                        let k = 2.0 * g[[0, 0]] / av.len().max(1) as f64;
                        accumulate(&mut adj, *a, av.mapv(|x| k * x));
                    }
                }
            }
        }
        Gradients { adj }
    }
}

fn jet_adjoint(z: &Array2<f64>, g: &Array2<f64>, layout: &JetLayout, act: Activation) -> Array2<f64> {
    let zs = z.as_slice().expect("standard layout");
    let gs = g.as_slice().expect("standard layout");
    let len = layout.batch * z.ncols();
    let nf = layout.n_first();
    let mut out = vec![0.0; zs.len()];
    for i in 0..len {
        let [_, p1, p2, p3] = act.derivs(zs[i]);
        let mut g0 = gs[i] * p1;
        for a in 0..nf {
            let k = (1 + a) * len + i;
            g0 += gs[k] * p2 * zs[k];
            out[k] = gs[k] * p1;
        }
        for (j, &a) in layout.second.iter().enumerate() {
            let k1 = (1 + a) * len + i;
            let k2 = (1 + nf + j) * len + i;
            let z1 = zs[k1];
            g0 += gs[k2] * (p2 * zs[k2] + p3 * z1 * z1);
            out[k1] += gs[k2] * 2.0 * p2 * z1;
            out[k2] = gs[k2] * p1;
        }
        out[i] = g0;
    }
    Array2::from_shape_vec(z.dim(), out).expect("shape")
}

/// Flattened gradient of `loss` with respect to `leaves`, each leaf row-major,
/// leaves in the given order. Leaves the loss does not depend on contribute zeros.
pub fn grad_params(tape: &Tape, loss: Var, leaves: &[Var]) -> Result<Vec<f64>> {
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss value {value}")));
    }
    let grads = tape.backward(loss);
    Ok(flatten_gradients(tape, &grads, leaves))
}

pub(crate) fn flatten_gradients(tape: &Tape, grads: &Gradients, leaves: &[Var]) -> Vec<f64> {
    let total: usize = leaves.iter().map(|&v| tape.value(v).len()).sum();
    let mut out = Vec::with_capacity(total);
    for &leaf in leaves {
        match grads.get(leaf) {
            Some(g) => out.extend(g.iter().copied()),
            None => out.extend(std::iter::repeat_n(0.0, tape.value(leaf).len())),
        }
    }
    out
}

/// First and pure second partials of every network output along every input axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeBundle {
    pub values: Vec<f64>,
    /// `first[k][i]` = ∂out_k/∂in_i
    pub first: Vec<Vec<f64>>,
    /// `second[k][i]` = ∂²out_k/∂in_i²
    pub second: Vec<Vec<f64>>,
}

impl DerivativeBundle {
    pub fn n_outputs(&self) -> usize {
        self.first.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.first.first().map_or(0, Vec::len)
    }
}

/// Input derivatives at a single point.
pub fn input_derivatives(net: &Mlp, params: &NetworkParams, point: &[f64]) -> Result<DerivativeBundle> {
    let mut v = input_derivatives_batch(net, params, &[point.to_vec()])?;
    Ok(v.pop().expect("one bundle"))
}

/// Input derivatives at many points, evaluated in one batch.
pub fn input_derivatives_batch(
    net: &Mlp,
    params: &NetworkParams,
    points: &[Vec<f64>],
) -> Result<Vec<DerivativeBundle>> {
    let n_in = net.config().n_inputs;
    for p in points {
        if p.len() != n_in {
            return Err(Error::Dimension {
                what: "point width",
                expected: n_in,
                got: p.len(),
            });
        }
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let b = points.len();
    let x = Array2::from_shape_fn((b, n_in), |(r, c)| points[r][c]);
    let layout = JetLayout::full(b, n_in);
    let mut tape = Tape::new();
    let pv = params.constants(&mut tape);
    let out = net.record(&mut tape, &pv, x.view(), &layout)?;
    let o = tape.value(out);
    let n_out = o.ncols();
    let bundles = (0..b)
        .map(|r| DerivativeBundle {
            values: (0..n_out).map(|k| o[[r, k]]).collect(),
            first: (0..n_out)
                .map(|k| {
                    (0..n_in)
                        .map(|a| o[[layout.first_component(a).unwrap() * b + r, k]])
                        .collect()
                })
                .collect(),
            second: (0..n_out)
                .map(|k| {
                    (0..n_in)
                        .map(|a| o[[layout.second_component(a).unwrap() * b + r, k]])
                        .collect()
                })
                .collect(),
        })
        .collect();
    Ok(bundles)
}

/// Elementwise arithmetic shared by plain reals and tape nodes, so residual
/// formulas are written once and evaluated either way.
pub trait ScalarOps {
    type T: Clone;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn scale(&mut self, a: &Self::T, c: f64) -> Self::T;
}

/// [`ScalarOps`] over `f64`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Real;

impl ScalarOps for Real {
    type T = f64;
    fn add(&mut self, a: &f64, b: &f64) -> f64 {
        a + b
    }
    fn sub(&mut self, a: &f64, b: &f64) -> f64 {
        a - b
    }
    fn mul(&mut self, a: &f64, b: &f64) -> f64 {
        a * b
    }
    fn scale(&mut self, a: &f64, c: f64) -> f64 {
        a * c
    }
}

impl ScalarOps for Tape {
    type T = Var;
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        Tape::add(self, *a, *b)
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        Tape::sub(self, *a, *b)
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        Tape::mul(self, *a, *b)
    }
    fn scale(&mut self, a: &Var, c: f64) -> Var {
        Tape::scale(self, *a, c)
    }
}
