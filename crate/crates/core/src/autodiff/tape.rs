use std::cell::RefCell;
use std::rc::Rc;

use crate::autodiff::{CsrMatrix, ParamId, ParamStore, Tensor, TensorError};
use crate::scalar::Scalar;

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Softmax(usize),
    LayerNorm { input: usize, inv_std: Vec<T> },
    Sum(usize),
    Mean(usize),
    Mse(usize, usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Reshape(usize),
    Slice { input: usize, axis: usize, start: usize, end: usize },
    Transpose(usize),
    GatherRows { input: usize, indices: Rc<Vec<usize>> },
    SpMM { input: usize, matrix: Rc<CsrMatrix<T>> },
    NormalizeRows { input: usize, norms: Vec<T> },
    RowDot(usize, usize),
    CrossRows(usize, usize),
    RowSum(usize),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Mse(..) => "mse",
            Op::Concat { .. } => "concat",
            Op::Reshape(_) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Transpose(_) => "transpose",
            Op::GatherRows { .. } => "gather_rows",
            Op::SpMM { .. } => "spmm",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::RowDot(..) => "row_dot",
            Op::CrossRows(..) => "cross_rows",
            Op::RowSum(_) => "row_sum",
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    generation: u64,
}

/// Dynamic computation tape. Rebuilt per forward pass; cleared by
/// [`Tape::backward`]. Single-threaded by construction.
pub struct Tape<T> {
    inner: RefCell<Inner<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    idx: usize,
    generation: u64,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.idx)
    }
}

/// Gradients of non-parameter leaves produced by a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    generation: u64,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf created by [`Tape::leaf`]. Leaves the
    /// loss does not depend on get a zero gradient.
    pub fn wrt(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get(var.idx).and_then(|g| g.as_ref())
    }
}

fn mismatch(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_K) * (x + T::of(GELU_C) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let t = (k * (x + c * x * x * x)).tanh();
    let half = T::of(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                generation: 0,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var<'_, T>> {
        self.push_rc(Rc::new(value), op, requires_grad)
    }

    fn push_rc(&self, value: Rc<Tensor<T>>, op: Op<T>, requires_grad: bool) -> Result<Var<'_, T>> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                op: op.name(),
                node: idx,
            });
        }
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            idx,
            generation: inner.generation,
        })
    }

    /// Records a constant (no gradient).
    pub fn constant(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.push(value, Op::Leaf, false)
    }

    /// Records a shared constant without copying its data.
    pub fn constant_rc(&self, value: Rc<Tensor<T>>) -> Result<Var<'_, T>> {
        self.push_rc(value, Op::Leaf, false)
    }

    /// Records a leaf whose gradient is reported through [`Gradients::wrt`].
    pub fn leaf(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a trainable parameter; its gradient accumulates into the store.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Result<Var<'_, T>> {
        self.push_rc(store.value_rc(id), Op::Param(id), true)
    }

    fn check(&self, v: &Var<'_, T>) -> Result<()> {
        if v.generation != self.inner.borrow().generation || !std::ptr::eq(v.tape, self) {
            return Err(TensorError::StaleVar);
        }
        Ok(())
    }

    fn value_of(&self, idx: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.inner.borrow().nodes[idx].value)
    }

    fn rg(&self, idx: usize) -> bool {
        self.inner.borrow().nodes[idx].requires_grad
    }

    /// Discards all recorded nodes; outstanding `Var`s become stale.
    pub fn clear(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.clear();
        inner.generation += 1;
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients accumulate into
    /// `store` (every parameter in it ends up with a gradient, zero if unused);
    /// leaf gradients are returned. The tape is cleared afterwards.
    pub fn backward(
        &self,
        loss: Var<'_, T>,
        store: Option<&mut ParamStore<T>>,
    ) -> Result<Gradients<T>> {
        if self.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        self.check(&loss)?;
        let nodes = std::mem::take(&mut self.inner.borrow_mut().nodes);
        let generation = self.inner.borrow().generation;
        let loss_shape = nodes[loss.idx].value.shape().to_vec();
        if nodes[loss.idx].value.numel() != 1 {
            self.inner.borrow_mut().nodes = nodes;
            return Err(TensorError::NotScalar(loss_shape));
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::full(&loss_shape, T::one()));

        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[idx] = Some(g);
                continue;
            }
            if let Err(e) = backprop_node(&nodes, idx, &g, &mut grads) {
                self.clear();
                return Err(e);
            }
        }

        if let Some(store) = store {
            for (idx, node) in nodes.iter().enumerate() {
                if let (Op::Param(id), Some(g)) = (&node.op, &grads[idx]) {
                    store.accumulate_grad(*id, g);
                }
            }
            store.fill_missing_grads();
        }

        // Only leaves keep their gradients in the returned map.
        for (idx, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[idx] = None;
            } else if grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        drop(nodes);
        self.clear();
        Ok(Gradients { grads, generation })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], idx: usize, g: Tensor<T>) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Sums a full-shape gradient down to a broadcast operand's shape.
fn reduce_to<T: Scalar>(g: &Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    if g.shape() == target.shape() {
        g.clone()
    } else {
        Tensor::full(target.shape(), g.sum())
    }
}

fn backprop_node<T: Scalar>(
    nodes: &[Node<T>],
    idx: usize,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) -> Result<()> {
    let out = &nodes[idx].value;
    let val = |i: usize| -> &Tensor<T> { &nodes[i].value };
    let needs = |i: usize| nodes[i].requires_grad;
    match &nodes[idx].op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if needs(*a) {
                // dA = G * B^T
                let mut da = vec![T::zero(); m * k];
                T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    g.data(),
                    (n as isize, 1),
                    bv.data(),
                    (1, n as isize),
                    T::zero(),
                    &mut da,
                    (k as isize, 1),
                );
                accumulate(grads, *a, Tensor::new(&[m, k], da)?);
            }
            if needs(*b) {
                // dB = A^T * G
                let mut db = vec![T::zero(); k * n];
                T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    av.data(),
                    (1, k as isize),
                    g.data(),
                    (n as isize, 1),
                    T::zero(),
                    &mut db,
                    (n as isize, 1),
                );
                accumulate(grads, *b, Tensor::new(&[k, n], db)?);
            }
        }
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, reduce_to(g, val(*a)));
            }
            if needs(*b) {
                accumulate(grads, *b, reduce_to(g, val(*b)));
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, reduce_to(g, val(*a)));
            }
            if needs(*b) {
                accumulate(grads, *b, reduce_to(&g.map(|x| -x), val(*b)));
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let expand = |t: &Tensor<T>| -> Tensor<T> {
                if t.shape() == g.shape() {
                    t.clone()
                } else {
                    Tensor::full(g.shape(), t.item())
                }
            };
            if needs(*a) {
                let full = g.zip_map(&expand(bv), |x, y| x * y);
                accumulate(grads, *a, reduce_to(&full, av));
            }
            if needs(*b) {
                let full = g.zip_map(&expand(av), |x, y| x * y);
                accumulate(grads, *b, reduce_to(&full, bv));
            }
        }
        Op::AddRow(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone());
            }
            if needs(*b) {
                let d = g.cols();
                let mut gb = vec![T::zero(); d];
                for row in g.data().chunks(d) {
                    for (o, &x) in gb.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                accumulate(grads, *b, Tensor::new(val(*b).shape(), gb)?);
            }
        }
        Op::MulRow(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let d = g.cols();
            if needs(*a) {
                let mut ga = g.clone();
                for row in ga.data_mut().chunks_mut(d) {
                    for (x, &s) in row.iter_mut().zip(bv.data()) {
                        *x *= s;
                    }
                }
                accumulate(grads, *a, ga);
            }
            if needs(*b) {
                let mut gb = vec![T::zero(); d];
                for (grow, arow) in g.data().chunks(d).zip(av.data().chunks(d)) {
                    for j in 0..d {
                        gb[j] += grow[j] * arow[j];
                    }
                }
                accumulate(grads, *b, Tensor::new(bv.shape(), gb)?);
            }
        }
        Op::Scale(a, c) => {
            let c = *c;
            accumulate(grads, *a, g.map(|x| x * c));
        }
        Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
        Op::Relu(a) => {
            let ga = g.zip_map(val(*a), |gi, x| if x > T::zero() { gi } else { T::zero() });
            accumulate(grads, *a, ga);
        }
        Op::Gelu(a) => {
            let ga = g.zip_map(val(*a), |gi, x| gi * gelu_grad(x));
            accumulate(grads, *a, ga);
        }
        Op::Sigmoid(a) => {
            let ga = g.zip_map(out, |gi, y| gi * y * (T::one() - y));
            accumulate(grads, *a, ga);
        }
        Op::Softmax(a) => {
            let d = out.cols();
            let mut ga = vec![T::zero(); out.numel()];
            for ((dst, grow), yrow) in ga
                .chunks_mut(d)
                .zip(g.data().chunks(d))
                .zip(out.data().chunks(d))
            {
                let dot: T = grow.iter().zip(yrow).map(|(&x, &y)| x * y).sum();
                for j in 0..d {
                    dst[j] = yrow[j] * (grow[j] - dot);
                }
            }
            accumulate(grads, *a, Tensor::new(out.shape(), ga)?);
        }
        Op::LayerNorm { input, inv_std } => {
            let d = out.cols();
            let dn = T::of(d as f64);
            let mut ga = vec![T::zero(); out.numel()];
            for (r, ((dst, grow), yrow)) in ga
                .chunks_mut(d)
                .zip(g.data().chunks(d))
                .zip(out.data().chunks(d))
                .enumerate()
            {
                let mean_g: T = grow.iter().copied().sum::<T>() / dn;
                let mean_gy: T = grow.iter().zip(yrow).map(|(&x, &y)| x * y).sum::<T>() / dn;
                for j in 0..d {
                    dst[j] = inv_std[r] * (grow[j] - mean_g - yrow[j] * mean_gy);
                }
            }
            accumulate(grads, *input, Tensor::new(out.shape(), ga)?);
        }
        Op::Sum(a) => {
            accumulate(grads, *a, Tensor::full(val(*a).shape(), g.item()));
        }
        Op::Mean(a) => {
            let n = T::of(val(*a).numel() as f64);
            accumulate(grads, *a, Tensor::full(val(*a).shape(), g.item() / n));
        }
        Op::Mse(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let scale = T::of(2.0) * g.item() / T::of(av.numel() as f64);
            let diff = av.zip_map(bv, |x, y| (x - y) * scale);
            if needs(*b) {
                accumulate(grads, *b, diff.map(|x| -x));
            }
            if needs(*a) {
                accumulate(grads, *a, diff);
            }
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = axis_extents(out.shape(), *axis);
            let total = out.shape()[*axis] * inner;
            let mut offset = 0;
            for &i in inputs {
                let part = val(i);
                let width = part.shape()[*axis] * inner;
                if needs(i) {
                    let mut gi = Vec::with_capacity(part.numel());
                    for o in 0..outer {
                        let start = o * total + offset;
                        gi.extend_from_slice(&g.data()[start..start + width]);
                    }
                    accumulate(grads, i, Tensor::new(part.shape(), gi)?);
                }
                offset += width;
            }
        }
        Op::Reshape(a) => {
            accumulate(grads, *a, g.clone().reshape(val(*a).shape())?);
        }
        Op::Slice {
            input,
            axis,
            start,
            end,
        } => {
            let src = val(*input);
            let (outer, len, inner) = axis_extents(src.shape(), *axis);
            let mut gi = vec![T::zero(); src.numel()];
            let width = (end - start) * inner;
            for o in 0..outer {
                let dst = o * len * inner + start * inner;
                gi[dst..dst + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
            }
            accumulate(grads, *input, Tensor::new(src.shape(), gi)?);
        }
        Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
        Op::GatherRows { input, indices } => {
            let src = val(*input);
            let d = src.cols();
            let mut gi = vec![T::zero(); src.numel()];
            for (k, &r) in indices.iter().enumerate() {
                for j in 0..d {
                    gi[r * d + j] += g.data()[k * d + j];
                }
            }
            accumulate(grads, *input, Tensor::new(src.shape(), gi)?);
        }
        Op::SpMM { input, matrix } => {
            let src = val(*input);
            let d = src.cols();
            let gi = matrix.tmul_dense(g.data(), d);
            accumulate(grads, *input, Tensor::new(src.shape(), gi)?);
        }
        Op::NormalizeRows { input, norms } => {
            let d = out.cols();
            let mut gi = vec![T::zero(); out.numel()];
            for (r, ((dst, grow), yrow)) in gi
                .chunks_mut(d)
                .zip(g.data().chunks(d))
                .zip(out.data().chunks(d))
                .enumerate()
            {
                let dot: T = grow.iter().zip(yrow).map(|(&x, &y)| x * y).sum();
                for j in 0..d {
                    dst[j] = (grow[j] - yrow[j] * dot) / norms[r];
                }
            }
            accumulate(grads, *input, Tensor::new(out.shape(), gi)?);
        }
        Op::RowDot(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let d = av.cols();
            let scaled = |other: &Tensor<T>| -> Result<Tensor<T>> {
                let mut v = other.data().to_vec();
                for (row, &gr) in v.chunks_mut(d).zip(g.data()) {
                    row.iter_mut().for_each(|x| *x *= gr);
                }
                Tensor::new(other.shape(), v)
            };
            if needs(*a) {
                accumulate(grads, *a, scaled(bv)?);
            }
            if needs(*b) {
                accumulate(grads, *b, scaled(av)?);
            }
        }
        Op::CrossRows(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let n = av.rows();
            // d(a x b)/da applied to g is b x g; for b it is g x a.
            if needs(*a) {
                let mut ga = vec![T::zero(); 3 * n];
                for r in 0..n {
                    let c = cross(&bv.data()[3 * r..3 * r + 3], &g.data()[3 * r..3 * r + 3]);
                    ga[3 * r..3 * r + 3].copy_from_slice(&c);
                }
                accumulate(grads, *a, Tensor::new(av.shape(), ga)?);
            }
            if needs(*b) {
                let mut gb = vec![T::zero(); 3 * n];
                for r in 0..n {
                    let c = cross(&g.data()[3 * r..3 * r + 3], &av.data()[3 * r..3 * r + 3]);
                    gb[3 * r..3 * r + 3].copy_from_slice(&c);
                }
                accumulate(grads, *b, Tensor::new(bv.shape(), gb)?);
            }
        }
        Op::RowSum(a) => {
            let src = val(*a);
            let d = src.cols();
            let mut gi = Vec::with_capacity(src.numel());
            for &gr in g.data() {
                gi.extend(std::iter::repeat_n(gr, d));
            }
            accumulate(grads, *a, Tensor::new(src.shape(), gi)?);
        }
    }
    Ok(())
}

fn cross<T: Scalar>(a: &[T], b: &[T]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Current value (shared, cheap to clone).
    ///
    /// # Panics
    /// If the tape has been cleared since this variable was recorded.
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.val().expect("variable from a cleared tape")
    }

    fn val(&self) -> Result<Rc<Tensor<T>>> {
        self.tape.check(self)?;
        Ok(self.tape.value_of(self.idx))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Result<Var<'t, T>> {
        self.tape.check(self)?;
        let rg = self.tape.rg(self.idx);
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Result<Var<'t, T>> {
        self.tape.check(self)?;
        self.tape.check(other)?;
        let rg = self.tape.rg(self.idx) || self.tape.rg(other.idx);
        self.tape.push(value, op, rg)
    }

    fn elementwise(
        &self,
        other: &Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        let (a, b) = (self.val()?, other.val()?);
        let value = if a.shape() == b.shape() {
            a.zip_map(&b, f)
        } else if b.numel() == 1 {
            let s = b.item();
            a.map(|x| f(x, s))
        } else if a.numel() == 1 {
            let s = a.item();
            b.map(|y| f(s, y))
        } else {
            return Err(mismatch(name, &a, &b));
        };
        self.binary(other, value, op)
    }

    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.val()?, other.val()?);
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(mismatch("matmul", &a, &b));
        }
        let value = a.matmul(&b)?;
        self.binary(other, value, Op::MatMul(self.idx, other.idx))
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "add", |x, y| x + y, Op::Add(self.idx, other.idx))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "sub", |x, y| x - y, Op::Sub(self.idx, other.idx))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "mul", |x, y| x * y, Op::Mul(self.idx, other.idx))
    }

    fn row_broadcast(
        &self,
        row: &Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        let (a, b) = (self.val()?, row.val()?);
        let d = a.cols();
        if b.numel() != d || a.rank() == 0 {
            return Err(mismatch(name, &a, &b));
        }
        let mut value = (*a).clone();
        for r in value.data_mut().chunks_mut(d) {
            for (x, &y) in r.iter_mut().zip(b.data()) {
                *x = f(*x, y);
            }
        }
        self.binary(row, value, op)
    }

    /// Adds a length-`d` row vector to every row.
    pub fn add_row(&self, row: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.row_broadcast(row, "add_row", |x, y| x + y, Op::AddRow(self.idx, row.idx))
    }

    /// Multiplies every row elementwise by a length-`d` row vector.
    pub fn mul_row(&self, row: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.row_broadcast(row, "mul_row", |x, y| x * y, Op::MulRow(self.idx, row.idx))
    }

    pub fn scale(&self, c: T) -> Result<Var<'t, T>> {
        let value = self.val()?.map(|x| x * c);
        self.unary(value, Op::Scale(self.idx, c))
    }

    pub fn add_scalar(&self, c: T) -> Result<Var<'t, T>> {
        let value = self.val()?.map(|x| x + c);
        self.unary(value, Op::AddScalar(self.idx))
    }

    pub fn neg(&self) -> Result<Var<'t, T>> {
        self.scale(-T::one())
    }

    pub fn relu(&self) -> Result<Var<'t, T>> {
        let value = self.val()?.map(|x| x.max(T::zero()));
        self.unary(value, Op::Relu(self.idx))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Var<'t, T>> {
        let value = self.val()?.map(gelu);
        self.unary(value, Op::Gelu(self.idx))
    }

    pub fn sigmoid(&self) -> Result<Var<'t, T>> {
        let value = self.val()?.map(sigmoid);
        self.unary(value, Op::Sigmoid(self.idx))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t, T>> {
        let mut value = (*self.val()?).clone();
        let d = value.cols();
        for row in value.data_mut().chunks_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        self.unary(value, Op::Softmax(self.idx))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, eps: T) -> Result<Var<'t, T>> {
        let mut value = (*self.val()?).clone();
        let d = value.cols();
        let dn = T::of(d as f64);
        let mut inv_std = Vec::with_capacity(value.rows());
        for row in value.data_mut().chunks_mut(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
            inv_std.push(inv);
        }
        self.unary(
            value,
            Op::LayerNorm {
                input: self.idx,
                inv_std,
            },
        )
    }

    pub fn sum(&self) -> Result<Var<'t, T>> {
        let value = Tensor::scalar(self.val()?.sum());
        self.unary(value, Op::Sum(self.idx))
    }

    pub fn mean(&self) -> Result<Var<'t, T>> {
        let v = self.val()?;
        let value = Tensor::scalar(v.sum() / T::of(v.numel() as f64));
        self.unary(value, Op::Mean(self.idx))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&self, target: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.val()?, target.val()?);
        if a.shape() != b.shape() {
            return Err(mismatch("mse", &a, &b));
        }
        let sq: T = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let value = Tensor::scalar(sq / T::of(a.numel().max(1) as f64));
        self.binary(target, value, Op::Mse(self.idx, target.idx))
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.val()).collect::<Result<_>>()?;
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {}", base.len()),
            });
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &values[0], v));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = axis_extents(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let w = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let mut rg = false;
        for p in parts {
            tape.check(p)?;
            rg |= tape.rg(p.idx);
        }
        tape.push(
            Tensor::new(&out_shape, data)?,
            Op::Concat {
                inputs: parts.iter().map(|p| p.idx).collect(),
                axis,
            },
            rg,
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = (*self.val()?).clone().reshape(shape)?;
        self.unary(value, Op::Reshape(self.idx))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t, T>> {
        let v = self.val()?;
        if axis >= v.rank() || start > end || end > v.shape()[axis] {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("range {start}..{end} on axis {axis} of {:?}", v.shape()),
            });
        }
        let (outer, len, inner) = axis_extents(v.shape(), axis);
        let width = (end - start) * inner;
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let s = o * len * inner + start * inner;
            data.extend_from_slice(&v.data()[s..s + width]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = end - start;
        self.unary(
            Tensor::new(&shape, data)?,
            Op::Slice {
                input: self.idx,
                axis,
                start,
                end,
            },
        )
    }

    pub fn transpose(&self) -> Result<Var<'t, T>> {
        let v = self.val()?;
        if v.rank() != 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                msg: format!("expected rank 2, got {:?}", v.shape()),
            });
        }
        self.unary(v.transpose(), Op::Transpose(self.idx))
    }

    /// Selects rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&self, indices: Rc<Vec<usize>>) -> Result<Var<'t, T>> {
        let v = self.val()?;
        let (n, d) = (v.rows(), v.cols());
        let mut data = Vec::with_capacity(indices.len() * d);
        for &r in indices.iter() {
            if r >= n {
                return Err(TensorError::Invalid {
                    op: "gather_rows",
                    msg: format!("row {r} out of range for {n} rows"),
                });
            }
            data.extend_from_slice(v.row(r));
        }
        self.unary(
            Tensor::new(&[indices.len(), d], data)?,
            Op::GatherRows {
                input: self.idx,
                indices,
            },
        )
    }

    /// Constant sparse matrix times this `cols x d` block.
    pub fn spmm(&self, matrix: Rc<CsrMatrix<T>>) -> Result<Var<'t, T>> {
        let v = self.val()?;
        if v.rank() != 2 || v.rows() != matrix.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "spmm",
                lhs: vec![matrix.rows(), matrix.cols()],
                rhs: v.shape().to_vec(),
            });
        }
        let d = v.cols();
        let data = matrix.mul_dense(v.data(), d);
        let rows = matrix.rows();
        self.unary(
            Tensor::new(&[rows, d], data)?,
            Op::SpMM {
                input: self.idx,
                matrix,
            },
        )
    }

    /// Scales each row to unit length; `eps` is added under the square root.
    pub fn normalize_rows(&self, eps: T) -> Result<Var<'t, T>> {
        let mut value = (*self.val()?).clone();
        let d = value.cols();
        let mut norms = Vec::with_capacity(value.rows());
        for row in value.data_mut().chunks_mut(d) {
            let n = (row.iter().map(|&x| x * x).sum::<T>() + eps).sqrt();
            row.iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        self.unary(
            value,
            Op::NormalizeRows {
                input: self.idx,
                norms,
            },
        )
    }

    /// Per-row dot product, `N x d` with `N x d` to `N x 1`.
    pub fn row_dot(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.val()?, other.val()?);
        if a.shape() != b.shape() {
            return Err(mismatch("row_dot", &a, &b));
        }
        let d = a.cols();
        let data: Vec<T> = a
            .data()
            .chunks(d)
            .zip(b.data().chunks(d))
            .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p * q).sum())
            .collect();
        let n = data.len();
        self.binary(other, Tensor::new(&[n, 1], data)?, Op::RowDot(self.idx, other.idx))
    }

    /// Per-row cross product of two `N x 3` tensors.
    pub fn cross_rows(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.val()?, other.val()?);
        if a.shape() != b.shape() || a.cols() != 3 || a.rank() != 2 {
            return Err(mismatch("cross_rows", &a, &b));
        }
        let mut data = Vec::with_capacity(a.numel());
        for (x, y) in a.data().chunks(3).zip(b.data().chunks(3)) {
            data.extend_from_slice(&cross(x, y));
        }
        self.binary(
            other,
            Tensor::new(a.shape(), data)?,
            Op::CrossRows(self.idx, other.idx),
        )
    }

    /// Sum over the last axis, `N x d` to `N x 1`.
    pub fn row_sum(&self) -> Result<Var<'t, T>> {
        let v = self.val()?;
        let d = v.cols();
        let data: Vec<T> = v.data().chunks(d).map(|r| r.iter().copied().sum()).collect();
        let n = data.len();
        self.unary(Tensor::new(&[n, 1], data)?, Op::RowSum(self.idx))
    }

    /// Elementwise square.
    pub fn square(&self) -> Result<Var<'t, T>> {
        self.mul(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let i = tape.constant(Tensor::eye(2)).unwrap();
        assert_eq!(a.matmul(&i).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softmax_symmetric() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(x.softmax().unwrap().value().data(), &[0.5, 0.5]);
    }

    #[test]
    fn mse_zero() {
        let tape = Tape::new();
        let a = tape.constant(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let b = tape.constant(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(a.mse(&b).unwrap().item(), 0.0);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn non_finite_is_an_error() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t(&[1], &[f64::MAX])).unwrap();
        let err = a.scale(10.0).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { op: "scale", .. }));
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let loss = x.square().unwrap().sum().unwrap();
        let grads = tape.backward(loss, None).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn constant_loss_gives_zero_grads() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0])).unwrap();
        let c = tape.constant(t(&[], &[5.0])).unwrap();
        let grads = tape.backward(c, None).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            tape.backward(x, None),
            Err(TensorError::NotScalar(_))
        ));
        tape.clear();
        assert!(matches!(tape.backward(x, None), Err(TensorError::EmptyTape)));
    }

    #[test]
    fn stale_var_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2])).unwrap();
        tape.clear();
        let _ = tape.leaf(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(x.relu(), Err(TensorError::StaleVar)));
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = tape.constant(t(&[2, 1], &[5.0, 6.0])).unwrap();
        let c = Var::concat(&[a, b], 1).unwrap();
        assert_eq!(c.value().data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = c.slice(1, 2, 3).unwrap();
        assert_eq!(s.value().data(), &[5.0, 6.0]);
    }
}
