//! Reverse-mode gradient tape over [`NdArray`] values.
//!
//! The primitive set is closed: anything the model needs must be expressed in
//! terms of these ops so that gradient coverage stays testable. Ops execute
//! eagerly; when the tape is recording, each application is appended to an
//! ordered list and replayed in reverse by [`Var::backward`].

use std::cell::RefCell;
use std::rc::Rc;

use super::array::{
    binary_op, gather_rows, matmul, matmul_spec, reduce_to_shape, scatter_add_rows, softmax_last,
    sum_axis, unsum_axis, Element, NdArray,
};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Input binding of a primitive: a recorded node or an untracked constant.
#[derive(Clone)]
enum In<E> {
    Node(usize),
    Const(Rc<NdArray<E>>),
}

enum Op<E> {
    Leaf,
    Add(In<E>, In<E>),
    Mul(In<E>, In<E>),
    Div(In<E>, In<E>),
    Matmul { a: In<E>, b: In<E>, transpose_b: bool },
    Softmax(In<E>),
    Gather { x: In<E>, idx: Rc<Vec<usize>> },
    ScatterAdd { x: In<E>, idx: Rc<Vec<usize>> },
    Sum { x: In<E>, axis: Option<usize>, orig: Vec<usize> },
    Exp(In<E>),
    Log(In<E>),
    Rsqrt(In<E>),
    Sin(In<E>),
    Gelu(In<E>),
    Reshape { x: In<E>, orig: Vec<usize> },
}

struct Node<E> {
    value: Rc<NdArray<E>>,
    op: Op<E>,
}

/// Ordered record of primitive applications (one evaluation context).
/// Not thread-safe by design; independent tapes may run concurrently.
pub struct Tape<E: Element> {
    nodes: RefCell<Vec<Node<E>>>,
    recording: bool,
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), recording: true }
    }

    /// A tape that executes ops without recording them (inference mode).
    pub fn inference() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Untracked constant.
    pub fn constant(&self, value: NdArray<E>) -> Var<'_, E> {
        Var { tape: self, value: Rc::new(value), id: None }
    }

    pub fn constant_scalar(&self, v: f64) -> Var<'_, E> {
        self.constant(NdArray::scalar(E::from_f64(v)))
    }

    /// Gradient-enabled leaf. On a non-recording tape this degrades to a constant.
    pub fn leaf(&self, value: NdArray<E>) -> Var<'_, E> {
        let value = Rc::new(value);
        if !self.recording {
            return Var { tape: self, value, id: None };
        }
        let id = self.push(value.clone(), Op::Leaf);
        Var { tape: self, value, id: Some(id) }
    }

    fn push(&self, value: Rc<NdArray<E>>, op: Op<E>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        nodes.len() - 1
    }

    fn node_value(&self, id: usize) -> Rc<NdArray<E>> {
        self.nodes.borrow()[id].value.clone()
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value on (or alongside) a tape.
#[derive(Clone)]
pub struct Var<'t, E: Element> {
    tape: &'t Tape<E>,
    value: Rc<NdArray<E>>,
    id: Option<usize>,
}

impl<'t, E: Element> Var<'t, E> {
    pub fn value(&self) -> &NdArray<E> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    fn as_in(&self) -> In<E> {
        match self.id {
            Some(id) => In::Node(id),
            None => In::Const(self.value.clone()),
        }
    }

    fn tracked(&self) -> bool {
        self.id.is_some()
    }

    fn wrap(&self, value: NdArray<E>, op: Op<E>, any_tracked: bool) -> Var<'t, E> {
        let value = Rc::new(value);
        if self.tape.recording && any_tracked {
            let id = self.tape.push(value.clone(), op);
            Var { tape: self.tape, value, id: Some(id) }
        } else {
            Var { tape: self.tape, value, id: None }
        }
    }

    pub fn add(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        let v = binary_op("add", &self.value, &other.value, |a, b| a + b)?;
        Ok(self.wrap(v, Op::Add(self.as_in(), other.as_in()), self.tracked() || other.tracked()))
    }

    pub fn mul(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        let v = binary_op("mul", &self.value, &other.value, |a, b| a * b)?;
        Ok(self.wrap(v, Op::Mul(self.as_in(), other.as_in()), self.tracked() || other.tracked()))
    }

    pub fn div(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        let v = binary_op("div", &self.value, &other.value, |a, b| a / b)?;
        Ok(self.wrap(v, Op::Div(self.as_in(), other.as_in()), self.tracked() || other.tracked()))
    }

    pub fn matmul(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        self.matmul_impl(other, false)
    }

    /// `self @ other^T` (other stored `(…, n, k)`).
    pub fn matmul_tb(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: &Var<'t, E>, transpose_b: bool) -> Result<Var<'t, E>> {
        let v = matmul(&self.value, &other.value, transpose_b)?;
        Ok(self.wrap(
            v,
            Op::Matmul { a: self.as_in(), b: other.as_in(), transpose_b },
            self.tracked() || other.tracked(),
        ))
    }

    pub fn softmax(&self) -> Result<Var<'t, E>> {
        let v = softmax_last(&self.value)?;
        Ok(self.wrap(v, Op::Softmax(self.as_in()), self.tracked()))
    }

    pub fn gather(&self, indices: Rc<Vec<usize>>) -> Result<Var<'t, E>> {
        let v = gather_rows(&self.value, &indices)?;
        Ok(self.wrap(v, Op::Gather { x: self.as_in(), idx: indices }, self.tracked()))
    }

    pub fn scatter_add(&self, indices: Rc<Vec<usize>>, out_rows: usize) -> Result<Var<'t, E>> {
        let v = scatter_add_rows(&self.value, &indices, out_rows)?;
        Ok(self.wrap(v, Op::ScatterAdd { x: self.as_in(), idx: indices }, self.tracked()))
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, E>> {
        let v = sum_axis(&self.value, Some(axis))?;
        let orig = self.shape().to_vec();
        Ok(self.wrap(v, Op::Sum { x: self.as_in(), axis: Some(axis), orig }, self.tracked()))
    }

    pub fn sum_all(&self) -> Result<Var<'t, E>> {
        let v = sum_axis(&self.value, None)?;
        let orig = self.shape().to_vec();
        Ok(self.wrap(v, Op::Sum { x: self.as_in(), axis: None, orig }, self.tracked()))
    }

    pub fn exp(&self) -> Result<Var<'t, E>> {
        let v = self.value.map(|x| x.exp());
        Ok(self.wrap(v, Op::Exp(self.as_in()), self.tracked()))
    }

    pub fn log(&self) -> Result<Var<'t, E>> {
        let v = self.value.map(|x| x.ln());
        Ok(self.wrap(v, Op::Log(self.as_in()), self.tracked()))
    }

    pub fn rsqrt(&self) -> Result<Var<'t, E>> {
        let v = self.value.map(|x| x.sqrt().recip());
        Ok(self.wrap(v, Op::Rsqrt(self.as_in()), self.tracked()))
    }

    pub fn sin(&self) -> Result<Var<'t, E>> {
        let v = self.value.map(|x| x.sin());
        Ok(self.wrap(v, Op::Sin(self.as_in()), self.tracked()))
    }

    pub fn gelu(&self) -> Result<Var<'t, E>> {
        let c = E::from_f64(GELU_C);
        let a = E::from_f64(GELU_A);
        let half = E::from_f64(0.5);
        let v = self.value.map(|x| {
            let u = c * (x + a * x * x * x);
            half * x * (E::one() + u.tanh())
        });
        Ok(self.wrap(v, Op::Gelu(self.as_in()), self.tracked()))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t, E>> {
        let v = self.value.reshaped(shape)?;
        let orig = self.shape().to_vec();
        Ok(self.wrap(v, Op::Reshape { x: self.as_in(), orig }, self.tracked()))
    }

    // Derived helpers (compositions of primitives).

    pub fn scale(&self, c: f64) -> Result<Var<'t, E>> {
        self.mul(&self.tape.constant_scalar(c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t, E>> {
        self.add(&self.tape.constant_scalar(c))
    }

    pub fn neg(&self) -> Result<Var<'t, E>> {
        self.scale(-1.0)
    }

    pub fn sub(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        self.add(&other.neg()?)
    }

    /// `sqrt(x) = x * rsqrt(x)`; caller guarantees strictly positive input.
    pub fn sqrt(&self) -> Result<Var<'t, E>> {
        self.mul(&self.rsqrt()?)
    }

    pub fn square(&self) -> Result<Var<'t, E>> {
        self.mul(self)
    }

    pub fn sigmoid(&self) -> Result<Var<'t, E>> {
        let one = self.tape.constant_scalar(1.0);
        one.div(&self.neg()?.exp()?.add_scalar(1.0)?)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t, E>> {
        let n = self.shape()[axis] as f64;
        self.sum_axis(axis)?.scale(1.0 / n)
    }

    pub fn mean_all(&self) -> Result<Var<'t, E>> {
        let n = self.value.len() as f64;
        self.sum_all()?.scale(1.0 / n)
    }

    /// Reverse sweep from a scalar output. Returns per-node adjoints.
    pub fn backward(&self) -> Result<Gradients<E>> {
        if self.value.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("output must be scalar, shape {:?}", self.shape()),
            ));
        }
        let id = self.id.ok_or_else(|| {
            Error::invalid("backward", "output is not recorded on the tape (inference mode?)")
        })?;
        let nodes = self.tape.nodes.borrow();
        let mut grads: Vec<Option<NdArray<E>>> = vec![None; nodes.len()];
        grads[id] = Some(NdArray::scalar(E::one()));

        for i in (0..=id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            backprop(node, &g, &nodes, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn in_value<E: Element>(input: &In<E>, nodes: &[Node<E>]) -> Rc<NdArray<E>> {
    match input {
        In::Node(id) => nodes[*id].value.clone(),
        In::Const(v) => v.clone(),
    }
}

fn accumulate<E: Element>(
    input: &In<E>,
    grad: NdArray<E>,
    grads: &mut [Option<NdArray<E>>],
) -> Result<()> {
    if let In::Node(id) = input {
        match &mut grads[*id] {
            Some(acc) => acc.add_assign(&grad)?,
            slot @ None => *slot = Some(grad),
        }
    }
    Ok(())
}

fn backprop<E: Element>(
    node: &Node<E>,
    g: &NdArray<E>,
    nodes: &[Node<E>],
    grads: &mut [Option<NdArray<E>>],
) -> Result<()> {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            let va = in_value(a, nodes);
            let vb = in_value(b, nodes);
            accumulate(a, reduce_to_shape(g, va.shape()), grads)?;
            accumulate(b, reduce_to_shape(g, vb.shape()), grads)?;
        }
        Op::Mul(a, b) => {
            let va = in_value(a, nodes);
            let vb = in_value(b, nodes);
            let da = binary_op("mul_grad", g, &vb, |x, y| x * y)?;
            accumulate(a, reduce_to_shape(&da, va.shape()), grads)?;
            let db = binary_op("mul_grad", g, &va, |x, y| x * y)?;
            accumulate(b, reduce_to_shape(&db, vb.shape()), grads)?;
        }
        Op::Div(a, b) => {
            let va = in_value(a, nodes);
            let vb = in_value(b, nodes);
            let da = binary_op("div_grad", g, &vb, |x, y| x / y)?;
            accumulate(a, reduce_to_shape(&da, va.shape()), grads)?;
            // d/db (a/b) = -a / b^2
            let num = binary_op("div_grad", g, &va, |x, y| x * y)?;
            let db = binary_op("div_grad", &num, &vb, |x, y| -x / (y * y))?;
            accumulate(b, reduce_to_shape(&db, vb.shape()), grads)?;
        }
        Op::Matmul { a, b, transpose_b } => {
            let va = in_value(a, nodes);
            let vb = in_value(b, nodes);
            if matches!(a, In::Node(_)) {
                let da = if *transpose_b {
                    matmul(g, &vb, false)?
                } else {
                    matmul(g, &vb, true)?
                };
                accumulate(a, da, grads)?;
            }
            if matches!(b, In::Node(_)) {
                let db = matmul_grad_rhs(&va, &vb, g, *transpose_b)?;
                accumulate(b, db, grads)?;
            }
        }
        Op::Softmax(x) => {
            let y = &node.value;
            let w = *y.shape().last().unwrap();
            let mut dx = vec![E::zero(); y.len()];
            for ((yr, gr), dr) in
                y.data().chunks(w).zip(g.data().chunks(w)).zip(dx.chunks_mut(w))
            {
                let mut dot = E::zero();
                for (yv, gv) in yr.iter().zip(gr.iter()) {
                    dot += *yv * *gv;
                }
                for ((d, yv), gv) in dr.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                    *d = *yv * (*gv - dot);
                }
            }
            accumulate(x, NdArray::new(y.shape().to_vec(), dx)?, grads)?;
        }
        Op::Gather { x, idx } => {
            let vx = in_value(x, nodes);
            accumulate(x, scatter_add_rows(g, idx, vx.shape()[0])?, grads)?;
        }
        Op::ScatterAdd { x, idx } => {
            accumulate(x, gather_rows(g, idx)?, grads)?;
        }
        Op::Sum { x, axis, orig } => {
            accumulate(x, unsum_axis(g, orig, *axis), grads)?;
        }
        Op::Exp(x) => {
            let dx = binary_op("exp_grad", g, &node.value, |gv, yv| gv * yv)?;
            accumulate(x, dx, grads)?;
        }
        Op::Log(x) => {
            let vx = in_value(x, nodes);
            let dx = binary_op("log_grad", g, &vx, |gv, xv| gv / xv)?;
            accumulate(x, dx, grads)?;
        }
        Op::Rsqrt(x) => {
            // y = x^{-1/2}; dy/dx = -y^3 / 2
            let half = E::from_f64(-0.5);
            let dx = binary_op("rsqrt_grad", g, &node.value, |gv, yv| gv * half * yv * yv * yv)?;
            accumulate(x, dx, grads)?;
        }
        Op::Sin(x) => {
            let vx = in_value(x, nodes);
            let dx = binary_op("sin_grad", g, &vx, |gv, xv| gv * xv.cos())?;
            accumulate(x, dx, grads)?;
        }
        Op::Gelu(x) => {
            let vx = in_value(x, nodes);
            let c = E::from_f64(GELU_C);
            let a = E::from_f64(GELU_A);
            let half = E::from_f64(0.5);
            let three = E::from_f64(3.0);
            let dx = binary_op("gelu_grad", g, &vx, |gv, xv| {
                let u = c * (xv + a * xv * xv * xv);
                let t = u.tanh();
                let du = c * (E::one() + three * a * xv * xv);
                gv * (half * (E::one() + t) + half * xv * (E::one() - t * t) * du)
            })?;
            accumulate(x, dx, grads)?;
        }
        Op::Reshape { x, orig } => {
            accumulate(x, g.reshaped(orig.clone())?, grads)?;
        }
    }
    Ok(())
}

/// dB for C = A @ B (or A @ B^T). Handles batch-shared rhs by summing over batch.
fn matmul_grad_rhs<E: Element>(
    a: &NdArray<E>,
    b: &NdArray<E>,
    g: &NdArray<E>,
    transpose_b: bool,
) -> Result<NdArray<E>> {
    let spec = matmul_spec(a.shape(), b.shape(), transpose_b)?;
    let (batch, m, k, n) = (spec.batch, spec.m, spec.k, spec.n);
    let mut db = vec![E::zero(); b.len()];
    let per_batch = if spec.rhs_batched { b.len() / batch } else { b.len() };
    for bi in 0..batch {
        let ab = &a.data()[bi * m * k..(bi + 1) * m * k];
        let gb = &g.data()[bi * m * n..(bi + 1) * m * n];
        let off = if spec.rhs_batched { bi * per_batch } else { 0 };
        let dbb = &mut db[off..off + per_batch];
        if transpose_b {
            // B stored (n,k): dB[j,:] += g[i,j] * A[i,:]
            for i in 0..m {
                let ar = &ab[i * k..(i + 1) * k];
                let gr = &gb[i * n..(i + 1) * n];
                for j in 0..n {
                    let gv = gr[j];
                    if gv == E::zero() {
                        continue;
                    }
                    let dr = &mut dbb[j * k..(j + 1) * k];
                    for t in 0..k {
                        dr[t] += gv * ar[t];
                    }
                }
            }
        } else {
            // B stored (k,n): dB[t,:] += A[i,t] * g[i,:]
            for i in 0..m {
                let ar = &ab[i * k..(i + 1) * k];
                let gr = &gb[i * n..(i + 1) * n];
                for t in 0..k {
                    let av = ar[t];
                    if av == E::zero() {
                        continue;
                    }
                    let dr = &mut dbb[t * n..(t + 1) * n];
                    for j in 0..n {
                        dr[j] += av * gr[j];
                    }
                }
            }
        }
    }
    NdArray::new(b.shape().to_vec(), db)
}

/// Adjoints produced by one reverse sweep.
pub struct Gradients<E: Element> {
    grads: Vec<Option<NdArray<E>>>,
}

impl<E: Element> Gradients<E> {
    /// Gradient with respect to a recorded leaf/var. Non-participating leaves
    /// get a zero gradient of matching shape.
    pub fn wrt(&self, var: &Var<'_, E>) -> Result<NdArray<E>> {
        let id = var
            .id
            .ok_or_else(|| Error::invalid("Gradients::wrt", "variable is not on the tape"))?;
        Ok(match &self.grads[id] {
            Some(g) => g.clone(),
            None => NdArray::zeros(var.shape()),
        })
    }
}
