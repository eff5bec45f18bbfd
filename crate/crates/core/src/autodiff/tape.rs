use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::Tensor;
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Matmul {
        a: NodeId,
        b: NodeId,
        a_vec: bool,
        b_vec: bool,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Softplus(NodeId),
    SqrtGuarded(NodeId),
    Concat(Vec<NodeId>),
    Slice { a: NodeId, start: usize, len: usize },
    Sum(NodeId),
    Mean(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone, Debug)]
pub struct NonFinite {
    pub node: NodeId,
    pub op: String,
}

#[derive(Default)]
struct TapeCore {
    nodes: Vec<Node>,
    first_nonfinite: Option<NonFinite>,
}

/// Recording tape for reverse-mode differentiation over dense tensors.
///
/// The tape is a cheaply cloneable handle; clones share the same recording.
/// Forward primitives record enough to replay the chain rule in reverse, and
/// the first non-finite output produced by any primitive is remembered so
/// callers can surface it as a numeric failure.
#[derive(Clone, Default)]
pub struct Tape {
    core: Rc<RefCell<TapeCore>>,
}

/// Gradients of one scalar loss with respect to tape nodes.
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id.0)
    }

    /// Gradient for `id`, or a zero tensor of the given shape when the loss
    /// does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor {
        self.grads
            .get(&id.0)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.core.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn first_nonfinite(&self) -> Option<NonFinite> {
        self.core.borrow().first_nonfinite.clone()
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// Non-differentiable leaf (data, targets, physical constants).
    pub fn constant(&self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false, "leaf")
    }

    pub fn constant_scalar(&self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, id: NodeId) -> Tensor {
        self.core.borrow().nodes[id.0].value.clone()
    }

    pub fn value_data(&self, id: NodeId) -> Vec<f64> {
        self.core.borrow().nodes[id.0].value.data().to_vec()
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.core.borrow().nodes[id.0].value.scalar_value()
    }

    pub fn shape(&self, id: NodeId) -> Vec<usize> {
        self.core.borrow().nodes[id.0].value.shape().to_vec()
    }

    pub fn is_finite(&self, id: NodeId) -> bool {
        self.core.borrow().nodes[id.0].value.is_finite()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool, opname: &str) -> NodeId {
        let mut core = self.core.borrow_mut();
        let id = NodeId(core.nodes.len());
        if core.first_nonfinite.is_none() && !value.is_finite() {
            core.first_nonfinite = Some(NonFinite { node: id, op: opname.to_string() });
        }
        core.nodes.push(Node { value, op, requires_grad });
        id
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        let core = self.core.borrow();
        ids.iter().any(|id| core.nodes[id.0].requires_grad)
    }

    fn binary_same_shape(
        &self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, AutodiffError> {
        let (va, vb) = {
            let core = self.core.borrow();
            (
                core.nodes[a.0].value.clone(),
                core.nodes[b.0].value.clone(),
            )
        };
        if va.shape() != vb.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: name.to_string(),
                lhs: format!("{:?}", va.shape()),
                rhs: format!("{:?}", vb.shape()),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(out, op, rg, name))
    }

    fn unary(&self, a: NodeId, name: &str, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let va = self.core.borrow().nodes[a.0].value.clone();
        let data = va.data().iter().map(|x| f(*x)).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.needs_grad(&[a]);
        self.push(out, op, rg, name)
    }

    pub fn add(&self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary_same_shape(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&self, a: NodeId) -> NodeId {
        self.unary(a, "neg", |x| -x, Op::Neg(a))
    }

    pub fn scale(&self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, "scale", |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, "add_scalar", |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&self, a: NodeId) -> NodeId {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: NodeId) -> NodeId {
        self.unary(a, "sigmoid", stable_sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&self, a: NodeId) -> NodeId {
        self.unary(a, "relu", |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&self, a: NodeId) -> NodeId {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn sin(&self, a: NodeId) -> NodeId {
        self.unary(a, "sin", f64::sin, Op::Sin(a))
    }

    pub fn cos(&self, a: NodeId) -> NodeId {
        self.unary(a, "cos", f64::cos, Op::Cos(a))
    }

    pub fn square(&self, a: NodeId) -> NodeId {
        self.unary(a, "square", |x| x * x, Op::Square(a))
    }

    pub fn abs(&self, a: NodeId) -> NodeId {
        self.unary(a, "abs", f64::abs, Op::Abs(a))
    }

    pub fn softplus(&self, a: NodeId) -> NodeId {
        self.unary(a, "softplus", stable_softplus, Op::Softplus(a))
    }

    /// Square root clamped at zero: `sqrt(max(x, 0))`, with zero subgradient
    /// at and below zero.
    pub fn sqrt_guarded(&self, a: NodeId) -> NodeId {
        self.unary(a, "sqrt_guarded", |x| x.max(0.0).sqrt(), Op::SqrtGuarded(a))
    }

    /// Matrix product with vector promotion: a 1-D left operand is treated as
    /// a row, a 1-D right operand as a column, and promoted axes are dropped
    /// from the result.
    pub fn matmul(&self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = {
            let core = self.core.borrow();
            (
                core.nodes[a.0].value.clone(),
                core.nodes[b.0].value.clone(),
            )
        };
        let a_vec = va.rank() == 1;
        let b_vec = vb.rank() == 1;
        let (m, ka) = if a_vec { (1, va.len()) } else { va.dims2() };
        let (kb, n) = if b_vec { (vb.len(), 1) } else { vb.dims2() };
        if va.rank() > 2 || vb.rank() > 2 || ka != kb {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul".to_string(),
                lhs: format!("{:?}", va.shape()),
                rhs: format!("{:?}", vb.shape()),
            });
        }
        let mut out = vec![0.0; m * n];
        let ad = va.data();
        let bd = vb.data();
        for i in 0..m {
            for k in 0..ka {
                let aik = ad[i * ka + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bd[k * n..(k + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        let shape = match (a_vec, b_vec) {
            (true, true) => vec![1],
            (true, false) => vec![n],
            (false, true) => vec![m],
            (false, false) => vec![m, n],
        };
        let out = Tensor::new(shape, out).expect("matmul shape");
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(out, Op::Matmul { a, b, a_vec, b_vec }, rg, "matmul"))
    }

    /// Concatenation of 1-D tensors.
    pub fn concat(&self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::BadShape("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        {
            let core = self.core.borrow();
            for id in parts {
                let v = &core.nodes[id.0].value;
                if v.rank() != 1 {
                    return Err(AutodiffError::BadShape(format!(
                        "concat expects vectors, got shape {:?}",
                        v.shape()
                    )));
                }
                data.extend_from_slice(v.data());
            }
        }
        let rg = self.needs_grad(parts);
        Ok(self.push(
            Tensor::vector(data),
            Op::Concat(parts.to_vec()),
            rg,
            "concat",
        ))
    }

    /// Contiguous 1-D slice `[start, start+len)`.
    pub fn slice(&self, a: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        let va = self.core.borrow().nodes[a.0].value.clone();
        if va.rank() != 1 || start + len > va.len() {
            return Err(AutodiffError::BadShape(format!(
                "slice [{start}, {start}+{len}) out of bounds for shape {:?}",
                va.shape()
            )));
        }
        let data = va.data()[start..start + len].to_vec();
        let rg = self.needs_grad(&[a]);
        Ok(self.push(
            Tensor::vector(data),
            Op::Slice { a, start, len },
            rg,
            "slice",
        ))
    }

    pub fn sum(&self, a: NodeId) -> NodeId {
        let s: f64 = self.core.borrow().nodes[a.0].value.data().iter().sum();
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    pub fn mean(&self, a: NodeId) -> NodeId {
        let core = self.core.borrow();
        let v = &core.nodes[a.0].value;
        let s: f64 = v.data().iter().sum();
        let m = s / v.len() as f64;
        drop(core);
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg, "mean")
    }

    /// Reverse pass from a scalar loss node. Gradients accumulate additively
    /// across fan-out and are returned for every node that requires them.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let core = self.core.borrow();
        if core.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(format!(
                "{:?}",
                core.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; core.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &core.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Leaf);
            let mut acc = |target: NodeId, delta: Tensor| {
                match &mut grads[target.0] {
                    Some(t) => {
                        for (dst, src) in t.data_mut().iter_mut().zip(delta.data()) {
                            *dst += src;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    let mut d = g.clone();
                    for v in d.data_mut() {
                        *v = -*v;
                    }
                    acc(*b, d);
                }
                Op::Mul(a, b) => {
                    let va = &core.nodes[a.0].value;
                    let vb = &core.nodes[b.0].value;
                    let da = Tensor::new(
                        va.shape().to_vec(),
                        g.data().iter().zip(vb.data()).map(|(g, y)| g * y).collect(),
                    )
                    .unwrap();
                    let db = Tensor::new(
                        vb.shape().to_vec(),
                        g.data().iter().zip(va.data()).map(|(g, x)| g * x).collect(),
                    )
                    .unwrap();
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Div(a, b) => {
                    let va = &core.nodes[a.0].value;
                    let vb = &core.nodes[b.0].value;
                    let da = Tensor::new(
                        va.shape().to_vec(),
                        g.data().iter().zip(vb.data()).map(|(g, y)| g / y).collect(),
                    )
                    .unwrap();
                    let db = Tensor::new(
                        vb.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(va.data().iter().zip(vb.data()))
                            .map(|(g, (x, y))| -g * x / (y * y))
                            .collect(),
                    )
                    .unwrap();
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Neg(a) => {
                    let mut d = g.clone();
                    for v in d.data_mut() {
                        *v = -*v;
                    }
                    acc(*a, d);
                }
                Op::Scale(a, c) => {
                    let mut d = g.clone();
                    for v in d.data_mut() {
                        *v *= c;
                    }
                    acc(*a, d);
                }
                Op::AddScalar(a) => acc(*a, g.clone()),
                Op::Matmul { a, b, a_vec, b_vec } => {
                    let va = &core.nodes[a.0].value;
                    let vb = &core.nodes[b.0].value;
                    let (m, k) = if *a_vec { (1, va.len()) } else { va.dims2() };
                    let n = if *b_vec { 1 } else { vb.dims2().1 };
                    let gd = g.data();
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    let bd = vb.data();
                    for i in 0..m {
                        for j in 0..n {
                            let gij = gd[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                da[i * k + kk] += gij * bd[kk * n + j];
                            }
                        }
                    }
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    let ad = va.data();
                    for i in 0..m {
                        for kk in 0..k {
                            let aik = ad[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[kk * n + j] += aik * gd[i * n + j];
                            }
                        }
                    }
                    acc(*a, Tensor::new(va.shape().to_vec(), da).unwrap());
                    acc(*b, Tensor::new(vb.shape().to_vec(), db).unwrap());
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = Tensor::new(
                        y.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(g, y)| g * (1.0 - y * y))
                            .collect(),
                    )
                    .unwrap();
                    acc(*a, d);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = Tensor::new(
                        y.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(g, y)| g * y * (1.0 - y))
                            .collect(),
                    )
                    .unwrap();
                    acc(*a, d);
                }
                Op::Relu(a) => {
                    let x = &core.nodes[a.0].value;
                    let d = Tensor::new(
                        x.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                            .collect(),
                    )
                    .unwrap();
                    acc(*a, d);
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let d = Tensor::new(
                        y.shape().to_vec(),
                        g.data().iter().zip(y.data()).map(|(g, y)| g * y).collect(),
                    )
                    .unwrap();
                    acc(*a, d);
                }
                Op::Sin(a) => {
                    let x = &core.nodes[a.0].value;
                    let d = Tensor::new(
                        x.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(g, x)| g * x.cos())
                            .collect(),
                    )
                    .unwrap();
                    acc(*a, d);
                }
                Op::Cos(a) => {
                    let x = &core.nodes[a.0].value;
                    let d = Tensor::new(
                        x.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(g, x)| -g * x.sin())
                            .collect(),
                    )
                    .unwrap();
                    acc(*a, d);
                }
                Op::Square(a) => {
                    let x = &core.nodes[a.0].value;
                    let d = Tensor::new(
                        x.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(g, x)| 2.0 * g * x)
                            .collect(),
                    )
                    .unwrap();
                    acc(*a, d);
                }
                Op::Abs(a) => {
                    let x = &core.nodes[a.0].value;
                    let d = Tensor::new(
                        x.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(g, x)| {
                                if *x > 0.0 {
                                    *g
                                } else if *x < 0.0 {
                                    -*g
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    )
                    .unwrap();
                    acc(*a, d);
                }
                Op::Softplus(a) => {
                    let x = &core.nodes[a.0].value;
                    let d = Tensor::new(
                        x.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(g, x)| g * stable_sigmoid(*x))
                            .collect(),
                    )
                    .unwrap();
                    acc(*a, d);
                }
                Op::SqrtGuarded(a) => {
                    let x = &core.nodes[a.0].value;
                    let y = &node.value;
                    let d = Tensor::new(
                        x.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(x.data().iter().zip(y.data()))
                            .map(|(g, (x, y))| if *x > 0.0 { g / (2.0 * y) } else { 0.0 })
                            .collect(),
                    )
                    .unwrap();
                    acc(*a, d);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = core.nodes[p.0].value.len();
                        let d = Tensor::vector(g.data()[offset..offset + len].to_vec());
                        acc(*p, d);
                        offset += len;
                    }
                }
                Op::Slice { a, start, len } => {
                    let x = &core.nodes[a.0].value;
                    let mut d = vec![0.0; x.len()];
                    d[*start..start + len].copy_from_slice(g.data());
                    acc(*a, Tensor::vector(d));
                }
                Op::Sum(a) => {
                    let x = &core.nodes[a.0].value;
                    acc(*a, Tensor::filled(x.shape(), g.scalar_value()));
                }
                Op::Mean(a) => {
                    let x = &core.nodes[a.0].value;
                    let n = x.len() as f64;
                    acc(*a, Tensor::filled(x.shape(), g.scalar_value() / n));
                }
            }
            if is_leaf {
                // only leaf gradients survive; interior ones are dropped
                // once consumed
                grads[idx] = Some(g);
            }
        }

        let mut out = HashMap::new();
        for (idx, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if core.nodes[idx].requires_grad {
                    out.insert(idx, g);
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_center_has_unit_slope() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.0));
        let y = tape.tanh(x);
        assert_eq!(tape.scalar_value(y), 0.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().scalar_value(), 1.0);
    }

    #[test]
    fn identity_matmul_preserves_and_sums_to_ones_grad() {
        let tape = Tape::new();
        let eye = tape.constant(
            Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let a = tape.param(Tensor::matrix(2, 2, vec![3.0, -1.0, 2.0, 5.0]).unwrap());
        let prod = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(prod).data(), &[3.0, -1.0, 2.0, 5.0]);
        let loss = tape.sum(prod);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn sqrt_guard_clamps_value_and_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(-1.0));
        let y = tape.sqrt_guarded(x);
        assert_eq!(tape.scalar_value(y), 0.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().scalar_value(), 0.0);
    }

    #[test]
    fn quadratic_gradient_is_two_w() {
        let tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn fanout_accumulates_additively() {
        // w used twice: loss = sum(w*w) + sum(w) has grad 2w + 1
        let tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![3.0, -1.0]));
        let sq = tape.mul(w, w).unwrap();
        let l1 = tape.sum(sq);
        let l2 = tape.sum(w);
        let loss = tape.add(l1, l2).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[7.0, -1.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn unused_parameter_has_no_gradient_entry() {
        let tape = Tape::new();
        let used = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::scalar(5.0));
        let loss = tape.square(used);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(
            g.get_or_zeros(unused, &[1]).data(),
            &[0.0],
            "missing gradients materialize as zeros"
        );
    }

    #[test]
    fn nan_is_detected_and_reported() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(-1.0));
        let bad = tape.div(x, tape.constant_scalar(0.0)).unwrap();
        let _ = bad;
        let nf = tape.first_nonfinite().expect("non-finite recorded");
        assert_eq!(nf.op, "div");
    }
}
