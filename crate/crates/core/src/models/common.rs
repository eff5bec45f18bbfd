use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, ParamStore, Tape, Tensor};

use super::{Bound, ModelError};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight matrix. Draws happen in a
/// fixed order so initialization is a pure function of the rng state.
pub fn init_weight(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("weight shape")
}

pub fn zeros_vec(n: usize) -> Tensor {
    Tensor::zeros(&[n])
}

/// Registers a `W x + b` pair under `{prefix}.w` / `{prefix}.b`.
pub fn insert_linear(
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    out_dim: usize,
    in_dim: usize,
) {
    params.insert(format!("{prefix}.w"), init_weight(rng, out_dim, in_dim));
    params.insert(format!("{prefix}.b"), zeros_vec(out_dim));
}

/// Applies the linear map registered under `prefix`.
pub fn linear(
    tape: &Tape,
    bound: &Bound,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId, ModelError> {
    let wx = tape.matmul(bound.get(&format!("{prefix}.w")), x)?;
    Ok(tape.add(wx, bound.get(&format!("{prefix}.b")))?)
}

/// Constant vector node.
pub fn const_vec(tape: &Tape, data: &[f64]) -> NodeId {
    tape.constant(Tensor::vector(data.to_vec()))
}

/// Inverse of softplus: `ln(exp(y) - 1)`, for seeding positive parameters.
pub fn softplus_inverse(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

/// Inter-layer dropout: multiplies by a seeded Bernoulli mask scaled by
/// 1/(1-p). Identity when not training or p == 0.
pub fn dropout(
    tape: &Tape,
    x: NodeId,
    p: f64,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, ModelError> {
    if !train || p <= 0.0 {
        return Ok(x);
    }
    let n = tape.shape(x).iter().product();
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = tape.constant(Tensor::vector(mask));
    Ok(tape.mul(x, mask)?)
}
