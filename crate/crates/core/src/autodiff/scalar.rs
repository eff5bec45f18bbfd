use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Scalar view of a `[1]` tape node with operator sugar.
///
/// Used to write small closed-form computations (the plant dynamics) in
/// ordinary arithmetic notation while still recording on the tape.
#[derive(Clone)]
pub struct Val {
    tape: Tape,
    id: NodeId,
}

impl Val {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn value(&self) -> f64 {
        self.tape.scalar_value(self.id)
    }

    /// Constant scalar on the same tape.
    pub fn lift(&self, v: f64) -> Val {
        self.tape.wrap(self.tape.constant_scalar(v))
    }

    pub fn sqrt_guarded(&self) -> Val {
        self.tape.wrap(self.tape.sqrt_guarded(self.id))
    }

    pub fn sin(&self) -> Val {
        self.tape.wrap(self.tape.sin(self.id))
    }

    pub fn cos(&self) -> Val {
        self.tape.wrap(self.tape.cos(self.id))
    }

    pub fn exp(&self) -> Val {
        self.tape.wrap(self.tape.exp(self.id))
    }

    pub fn relu(&self) -> Val {
        self.tape.wrap(self.tape.relu(self.id))
    }

    pub fn min_const(&self, c: f64) -> Val {
        // min(x, c) = c - relu(c - x); keeps the subgradient convention of relu
        let cx = self.tape.wrap(self.tape.neg(self.id));
        let shifted = self.tape.wrap(self.tape.add_scalar(cx.id, c));
        let r = shifted.relu();
        let neg_r = self.tape.wrap(self.tape.neg(r.id));
        self.tape.wrap(self.tape.add_scalar(neg_r.id, c))
    }
}

impl Tape {
    pub(crate) fn wrap(&self, id: NodeId) -> Val {
        Val { tape: self.clone(), id }
    }

    /// Non-differentiable scalar constant as a [`Val`].
    pub fn scalar(&self, v: f64) -> Val {
        self.wrap(self.constant_scalar(v))
    }

    /// Differentiable scalar leaf as a [`Val`].
    pub fn scalar_param(&self, v: f64) -> Val {
        self.wrap(self.param(Tensor::scalar(v)))
    }

    /// View an existing `[1]` node as a [`Val`].
    pub fn as_val(&self, id: NodeId) -> Val {
        debug_assert_eq!(self.shape(id), vec![1]);
        self.wrap(id)
    }
}

macro_rules! val_binop {
    ($trait:ident, $method:ident, $tape_op:ident) => {
        impl $trait for Val {
            type Output = Val;
            fn $method(self, rhs: Val) -> Val {
                let id = self.tape.$tape_op(self.id, rhs.id).expect("scalar shapes");
                self.tape.wrap(id)
            }
        }
        impl $trait<&Val> for &Val {
            type Output = Val;
            fn $method(self, rhs: &Val) -> Val {
                let id = self.tape.$tape_op(self.id, rhs.id).expect("scalar shapes");
                self.tape.wrap(id)
            }
        }
        impl $trait<f64> for Val {
            type Output = Val;
            fn $method(self, rhs: f64) -> Val {
                let r = self.lift(rhs);
                let id = self.tape.$tape_op(self.id, r.id).expect("scalar shapes");
                self.tape.wrap(id)
            }
        }
        impl $trait<Val> for f64 {
            type Output = Val;
            fn $method(self, rhs: Val) -> Val {
                let l = rhs.lift(self);
                let id = l.tape.$tape_op(l.id, rhs.id).expect("scalar shapes");
                l.tape.wrap(id)
            }
        }
    };
}

val_binop!(Add, add, add);
val_binop!(Sub, sub, sub);
val_binop!(Mul, mul, mul);
val_binop!(Div, div, div);

impl Neg for Val {
    type Output = Val;
    fn neg(self) -> Val {
        let id = self.tape.neg(self.id);
        self.tape.wrap(id)
    }
}

impl Neg for &Val {
    type Output = Val;
    fn neg(self) -> Val {
        let id = self.tape.neg(self.id);
        self.tape.wrap(id)
    }
}
