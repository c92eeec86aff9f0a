//! Finite-difference gradient checking.
//!
//! Test support: compares tape gradients against central differences of a
//! forward-only closure. The closure is re-evaluated from plain tensors each
//! time, so this path never touches the backward rules it is checking.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function of several tensors,
/// perturbing one element at a time.
pub fn finite_difference(
    inputs: &[Tensor],
    step: f64,
    f: impl Fn(&[Tensor]) -> f64,
) -> Vec<Tensor> {
    let mut grads = Vec::with_capacity(inputs.len());
    for (idx, input) in inputs.iter().enumerate() {
        let mut grad = Tensor::zeros(&input.shape().to_vec());
        for e in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[e] += step;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[e] -= step;
            grad.data_mut()[e] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
        grads.push(grad);
    }
    grads
}

/// Largest relative error between tape gradients and central differences for
/// a scalar-valued tape computation.
///
/// `build` receives the tape and the leaf vars (in `inputs` order) and must
/// return the scalar loss var.
pub fn max_relative_error(
    inputs: &[Tensor],
    step: f64,
    build: impl Fn(&Tape, &[Var<'_>]) -> NodeLoss,
) -> f64 {
    let eval = |tensors: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let NodeLoss(loss_id) = build(&tape, &vars);
        // The loss var borrows the local tape; identify it by id instead.
        tape_scalar(&tape, loss_id)
    };

    let fd = finite_difference(inputs, step, eval);

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let NodeLoss(loss_id) = build(&tape, &vars);
    let loss = var_by_id(&tape, loss_id);
    let grads = tape.backward(loss);

    let mut worst: f64 = 0.0;
    for (var, fd_grad) in vars.iter().zip(fd.iter()) {
        let analytic = grads.get_or_zeros(*var);
        for (a, b) in analytic.data().iter().zip(fd_grad.data()) {
            let denom = a.abs().max(b.abs()).max(1e-6);
            worst = worst.max((a - b).abs() / denom);
        }
    }
    worst
}

/// Loss identified by tape node id, so `build` closures can be reused across
/// tapes with different lifetimes.
pub struct NodeLoss(pub usize);

impl NodeLoss {
    pub fn of(var: Var<'_>) -> Self {
        NodeLoss(var.id())
    }
}

fn tape_scalar(tape: &Tape, id: usize) -> f64 {
    var_by_id(tape, id).value().scalar_value()
}

fn var_by_id(tape: &Tape, id: usize) -> Var<'_> {
    tape.var_at(id)
}
