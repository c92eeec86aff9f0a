//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles during a
//! forward pass; [`Tape::backward`] replays the record in reverse,
//! accumulating vector–Jacobian products into per-node gradients. Tapes are
//! created per step and dropped afterwards, so memory stays bounded by one
//! forward pass.
//!
//! Shape rules are deliberately narrow: elementwise ops need identical
//! shapes, `matmul` is rank-2 only, and the single broadcast allowed is
//! adding a length-`n` bias to a `m×n` matrix. A tape is confined to one
//! thread (`RefCell` inside); independent tapes over immutable parameter
//! snapshots may run concurrently.

use std::cell::RefCell;

use crate::linalg;
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

/// Index of a node on its tape.
pub type NodeId = usize;

enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddBias { a: NodeId, bias: NodeId },
    Scale { a: NodeId, c: f64 },
    AddScalar { a: NodeId },
    Neg { a: NodeId },
    Exp { a: NodeId },
    Log { a: NodeId },
    Sqrt { a: NodeId },
    Recip { a: NodeId },
    Tanh { a: NodeId },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    Softplus { a: NodeId },
    Clamp { a: NodeId, lo: f64, hi: f64 },
    Sum { a: NodeId },
    Mean { a: NodeId },
    RowSum { a: NodeId },
    ScaleRows { a: NodeId, s: NodeId },
    Concat { parts: Vec<NodeId> },
    Slice { a: NodeId, start: usize, len: usize },
    Transpose { a: NodeId },
    ReverseCols { a: NodeId },
    Reshape { a: NodeId },
    /// Inverse square root of a symmetric positive-definite matrix, with the
    /// eigendecomposition saved for the Daleckii–Krein backward rule.
    SpdInvSqrt { a: NodeId, eigvals: Vec<f64>, eigvecs: Vec<f64> },
    /// Ascending eigenvalues of a symmetric matrix; backward maps the
    /// eigenvalue gradient back through the saved eigenvectors.
    SymEigvals { a: NodeId, eigvecs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Operation tape. Create one per differentiated computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if the loss depends on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, densified to zeros when the loss does not reach it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&var.value().shape().to_vec()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Records an input node. Leaves are where gradients terminate; both
    /// trainable parameters and constants enter this way.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// Handle to an already-recorded node.
    pub fn var_at(&self, id: NodeId) -> Var<'_> {
        assert!(id < self.len(), "node {id} not on this tape");
        Var { tape: self, id }
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(v))
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, op });
        Var { tape: self, id }
    }

    fn value_clone(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn with_value<R>(&self, id: NodeId, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Reverse pass from a one-element `loss`. Every node the loss depends on
    /// receives a gradient of the same shape as its value.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        assert!(
            std::ptr::eq(self, loss.tape),
            "loss was recorded on a different tape"
        );
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        assert!(
            loss_node.value.is_scalar(),
            "backward needs a scalar loss, got shape {:?}",
            loss_node.value.shape()
        );

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::new(
            loss_node.value.shape().to_vec(),
            vec![1.0],
        ));

        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &nodes[id];
            self.accumulate(node, &grad, &nodes, &mut grads);
            grads[id] = Some(grad);
        }
        Gradients { grads }
    }

    fn accumulate(
        &self,
        node: &Node,
        grad: &Tensor,
        nodes: &[Node],
        grads: &mut [Option<Tensor>],
    ) {
        let mut add = |id: NodeId, contribution: Tensor| {
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&contribution),
                slot @ None => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let av = &nodes[*a].value;
                let bv = &nodes[*b].value;
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let mut da = Tensor::zeros(&[m, k]);
                matmul_nt(grad.data(), bv.data(), m, n, k, da.data_mut());
                let mut db = Tensor::zeros(&[k, n]);
                matmul_tn(av.data(), grad.data(), k, m, n, db.data_mut());
                add(*a, da);
                add(*b, db);
            }
            Op::Add { a, b } => {
                add(*a, grad.clone());
                add(*b, grad.clone());
            }
            Op::Sub { a, b } => {
                add(*a, grad.clone());
                add(*b, grad.map(|v| -v));
            }
            Op::Mul { a, b } => {
                let bv = &nodes[*b].value;
                let av = &nodes[*a].value;
                add(*a, zip_mul(grad, bv));
                add(*b, zip_mul(grad, av));
            }
            Op::AddBias { a, bias } => {
                let n = nodes[*bias].value.numel();
                let mut db = Tensor::zeros(&[n]);
                for row in grad.data().chunks_exact(n) {
                    for (d, g) in db.data_mut().iter_mut().zip(row) {
                        *d += g;
                    }
                }
                add(*a, grad.clone());
                add(*bias, db);
            }
            Op::Scale { a, c } => add(*a, grad.map(|v| v * c)),
            Op::AddScalar { a } => add(*a, grad.clone()),
            Op::Neg { a } => add(*a, grad.map(|v| -v)),
            Op::Exp { a } => add(*a, zip_mul(grad, &node.value)),
            Op::Log { a } => {
                let av = &nodes[*a].value;
                add(*a, zip_with(grad, av, |g, x| g / x));
            }
            Op::Sqrt { a } => add(*a, zip_with(grad, &node.value, |g, y| g / (2.0 * y))),
            Op::Recip { a } => add(*a, zip_with(grad, &node.value, |g, y| -g * y * y)),
            Op::Tanh { a } => add(*a, zip_with(grad, &node.value, |g, y| g * (1.0 - y * y))),
            Op::Relu { a } => {
                let av = &nodes[*a].value;
                add(*a, zip_with(grad, av, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::Sigmoid { a } => {
                add(*a, zip_with(grad, &node.value, |g, y| g * y * (1.0 - y)))
            }
            Op::Softplus { a } => {
                let av = &nodes[*a].value;
                add(*a, zip_with(grad, av, |g, x| g * stable_sigmoid(x)));
            }
            Op::Clamp { a, lo, hi } => {
                let av = &nodes[*a].value;
                add(
                    *a,
                    zip_with(grad, av, |g, x| if x > *lo && x < *hi { g } else { 0.0 }),
                );
            }
            Op::Sum { a } => {
                let g = grad.scalar_value();
                let av = &nodes[*a].value;
                add(*a, Tensor::full(av.shape(), g));
            }
            Op::Mean { a } => {
                let av = &nodes[*a].value;
                let g = grad.scalar_value() / av.numel() as f64;
                add(*a, Tensor::full(av.shape(), g));
            }
            Op::RowSum { a } => {
                let av = &nodes[*a].value;
                let (m, n) = (av.shape()[0], av.shape()[1]);
                let mut da = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    let g = grad.data()[i];
                    for v in &mut da.data_mut()[i * n..(i + 1) * n] {
                        *v = g;
                    }
                }
                add(*a, da);
            }
            Op::ScaleRows { a, s } => {
                let av = &nodes[*a].value;
                let sv = &nodes[*s].value;
                let (m, n) = (av.shape()[0], av.shape()[1]);
                let mut da = Tensor::zeros(&[m, n]);
                let mut ds = Tensor::zeros(&[m]);
                for i in 0..m {
                    let si = sv.data()[i];
                    let mut acc = 0.0;
                    for j in 0..n {
                        let g = grad.data()[i * n + j];
                        da.data_mut()[i * n + j] = g * si;
                        acc += g * av.data()[i * n + j];
                    }
                    ds.data_mut()[i] = acc;
                }
                add(*a, da);
                add(*s, ds);
            }
            Op::Concat { parts } => {
                let m = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p].value.shape()[1];
                    let mut dp = Tensor::zeros(&[m, w]);
                    for i in 0..m {
                        let src = &grad.data()[i * total + offset..i * total + offset + w];
                        dp.data_mut()[i * w..(i + 1) * w].copy_from_slice(src);
                    }
                    add(p, dp);
                    offset += w;
                }
            }
            Op::Slice { a, start, len } => {
                let av = &nodes[*a].value;
                let (m, n) = (av.shape()[0], av.shape()[1]);
                let mut da = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    let dst = &mut da.data_mut()[i * n + start..i * n + start + len];
                    dst.copy_from_slice(&grad.data()[i * len..(i + 1) * len]);
                }
                add(*a, da);
            }
            Op::Transpose { a } => add(*a, grad.transposed()),
            Op::ReverseCols { a } => add(*a, reverse_cols_tensor(grad)),
            Op::Reshape { a } => {
                let av_shape = nodes[*a].value.shape().to_vec();
                add(*a, grad.reshaped(av_shape));
            }
            Op::SpdInvSqrt { a, eigvals, eigvecs } => {
                add(*a, spd_inv_sqrt_vjp(grad, eigvals, eigvecs));
            }
            Op::SymEigvals { a, eigvecs } => {
                let n = grad.numel();
                let da = linalg::recompose(eigvecs, grad.data(), n);
                add(*a, Tensor::new(vec![n, n], da));
            }
        }
    }
}

fn zip_mul(a: &Tensor, b: &Tensor) -> Tensor {
    zip_with(a, b, |x, y| x * y)
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data().iter()).map(|(&x, &y)| f(x, y)).collect(),
    )
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

fn reverse_cols_tensor(t: &Tensor) -> Tensor {
    let (m, n) = (t.shape()[0], t.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            out.data_mut()[i * n + j] = t.data()[i * n + (n - 1 - j)];
        }
    }
    out
}

/// Daleckii–Krein rule for `y = a^{-1/2}` on the symmetric cone: with
/// `a = u·diag(λ)·uᵀ`, the adjoint is `u (k ∘ uᵀ ḡ u) uᵀ` where
/// `k_ij = (f(λ_i) − f(λ_j)) / (λ_i − λ_j)` and `k_ii = f'(λ_i)`.
fn spd_inv_sqrt_vjp(grad: &Tensor, eigvals: &[f64], eigvecs: &[f64]) -> Tensor {
    let n = eigvals.len();
    // Symmetrize the upstream gradient: the primal input is symmetric, so
    // only the symmetric part of the adjoint is meaningful.
    let mut gs = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            gs[i * n + j] = 0.5 * (grad.data()[i * n + j] + grad.data()[j * n + i]);
        }
    }
    // uᵀ · gs · u
    let mut tmp = vec![0.0; n * n];
    matmul_tn(eigvecs, &gs, n, n, n, &mut tmp);
    let mut inner = vec![0.0; n * n];
    matmul_nn(&tmp, eigvecs, n, n, n, &mut inner);

    let f = |l: f64| 1.0 / l.sqrt();
    let fprime = |l: f64| -0.5 / (l * l.sqrt());
    for i in 0..n {
        for j in 0..n {
            let k = if i == j || (eigvals[i] - eigvals[j]).abs() < 1e-12 {
                fprime(0.5 * (eigvals[i] + eigvals[j]))
            } else {
                (f(eigvals[i]) - f(eigvals[j])) / (eigvals[i] - eigvals[j])
            };
            inner[i * n + j] *= k;
        }
    }
    // u · inner · uᵀ
    let mut left = vec![0.0; n * n];
    matmul_nn(eigvecs, &inner, n, n, n, &mut left);
    let mut out = vec![0.0; n * n];
    matmul_nt(&left, eigvecs, n, n, n, &mut out);
    Tensor::new(vec![n, n], out)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Clones the recorded value (tensors here are small).
    pub fn value(&self) -> Tensor {
        self.tape.value_clone(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |v| v.shape().to_vec())
    }

    fn same_tape(&self, other: Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands live on different tapes"
        );
    }

    /// `self (m×k) · other (k×n)`.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let (value, a, b) = self.tape.with_value(self.id, |av| {
            self.tape.with_value(other.id, |bv| {
                assert_eq!(av.rank(), 2, "matmul lhs must be rank 2");
                assert_eq!(bv.rank(), 2, "matmul rhs must be rank 2");
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let (k2, n) = (bv.shape()[0], bv.shape()[1]);
                assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
                let mut out = Tensor::zeros(&[m, n]);
                matmul_nn(av.data(), bv.data(), m, k, n, out.data_mut());
                (out, self.id, other.id)
            })
        });
        self.tape.push(value, Op::Matmul { a, b })
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(other.id, |b| zip_with(a, b, |x, y| x + y))
        });
        self.tape.push(value, Op::Add { a: self.id, b: other.id })
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(other.id, |b| zip_with(a, b, |x, y| x - y))
        });
        self.tape.push(value, Op::Sub { a: self.id, b: other.id })
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(other.id, |b| zip_with(a, b, |x, y| x * y))
        });
        self.tape.push(value, Op::Mul { a: self.id, b: other.id })
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix — the one
    /// sanctioned broadcast.
    pub fn add_bias(self, bias: Var<'t>) -> Var<'t> {
        self.same_tape(bias);
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(bias.id, |b| {
                assert_eq!(a.rank(), 2, "add_bias lhs must be rank 2");
                assert_eq!(b.rank(), 1, "add_bias rhs must be rank 1");
                let n = b.numel();
                assert_eq!(a.shape()[1], n, "bias width mismatch");
                let mut out = a.clone();
                for row in out.data_mut().chunks_exact_mut(n) {
                    for (v, bv) in row.iter_mut().zip(b.data()) {
                        *v += bv;
                    }
                }
                out
            })
        });
        self.tape.push(value, Op::AddBias { a: self.id, bias: bias.id })
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(|v| v * c));
        self.tape.push(value, Op::Scale { a: self.id, c })
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(|v| v + c));
        self.tape.push(value, Op::AddScalar { a: self.id })
    }

    pub fn neg(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(|v| -v));
        self.tape.push(value, Op::Neg { a: self.id })
    }

    pub fn exp(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(f64::exp));
        self.tape.push(value, Op::Exp { a: self.id })
    }

    /// Natural log; defined only for strictly positive inputs.
    pub fn log(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| {
            assert!(
                a.data().iter().all(|&v| v > 0.0),
                "log domain error: non-positive input"
            );
            a.map(f64::ln)
        });
        self.tape.push(value, Op::Log { a: self.id })
    }

    /// Square root; defined only for strictly positive inputs.
    pub fn sqrt(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| {
            assert!(
                a.data().iter().all(|&v| v > 0.0),
                "sqrt domain error: non-positive input"
            );
            a.map(f64::sqrt)
        });
        self.tape.push(value, Op::Sqrt { a: self.id })
    }

    pub fn recip(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(|v| 1.0 / v));
        self.tape.push(value, Op::Recip { a: self.id })
    }

    pub fn tanh(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(f64::tanh));
        self.tape.push(value, Op::Tanh { a: self.id })
    }

    pub fn relu(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(|v| v.max(0.0)));
        self.tape.push(value, Op::Relu { a: self.id })
    }

    pub fn sigmoid(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(stable_sigmoid));
        self.tape.push(value, Op::Sigmoid { a: self.id })
    }

    pub fn softplus(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(stable_softplus));
        self.tape.push(value, Op::Softplus { a: self.id })
    }

    /// Elementwise clamp. Gradient passes through strictly inside `(lo, hi)`
    /// and is zero where the clamp binds.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.map(|v| v.clamp(lo, hi)));
        self.tape.push(value, Op::Clamp { a: self.id, lo, hi })
    }

    /// Full reduction to a rank-0 scalar.
    pub fn sum(self) -> Var<'t> {
        let value = self
            .tape
            .with_value(self.id, |a| Tensor::scalar(a.data().iter().sum()));
        self.tape.push(value, Op::Sum { a: self.id })
    }

    pub fn mean(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| {
            Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64)
        });
        self.tape.push(value, Op::Mean { a: self.id })
    }

    /// Per-row sum of an `m×n` matrix, yielding a length-`m` vector.
    pub fn row_sum(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| {
            assert_eq!(a.rank(), 2, "row_sum needs a rank-2 tensor");
            let n = a.shape()[1];
            Tensor::vector(a.data().chunks_exact(n).map(|r| r.iter().sum()).collect())
        });
        self.tape.push(value, Op::RowSum { a: self.id })
    }

    /// Multiplies row `i` of an `m×n` matrix by `s[i]`.
    pub fn scale_rows(self, s: Var<'t>) -> Var<'t> {
        self.same_tape(s);
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(s.id, |sv| {
                assert_eq!(a.rank(), 2, "scale_rows lhs must be rank 2");
                assert_eq!(sv.rank(), 1, "scale_rows rhs must be rank 1");
                let (m, n) = (a.shape()[0], a.shape()[1]);
                assert_eq!(sv.numel(), m, "row-scale length mismatch");
                let mut out = a.clone();
                for i in 0..m {
                    let c = sv.data()[i];
                    for v in &mut out.data_mut()[i * n..(i + 1) * n] {
                        *v *= c;
                    }
                }
                out
            })
        });
        self.tape.push(value, Op::ScaleRows { a: self.id, s: s.id })
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let tape = parts[0].tape;
        for p in parts {
            parts[0].same_tape(*p);
        }
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let m = values[0].shape()[0];
        for v in &values {
            assert_eq!(v.rank(), 2, "concat needs rank-2 tensors");
            assert_eq!(v.shape()[0], m, "concat row mismatch");
        }
        let total: usize = values.iter().map(|v| v.shape()[1]).sum();
        let mut out = Tensor::zeros(&[m, total]);
        for i in 0..m {
            let mut offset = 0;
            for v in &values {
                let w = v.shape()[1];
                out.data_mut()[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&v.data()[i * w..(i + 1) * w]);
                offset += w;
            }
        }
        tape.push(out, Op::Concat { parts: parts.iter().map(|p| p.id).collect() })
    }

    /// Columns `[start, start+len)` of a rank-2 tensor.
    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| {
            assert_eq!(a.rank(), 2, "slice needs a rank-2 tensor");
            let (m, n) = (a.shape()[0], a.shape()[1]);
            assert!(start + len <= n, "slice [{start}, {}) out of {n} columns", start + len);
            let mut out = Tensor::zeros(&[m, len]);
            for i in 0..m {
                out.data_mut()[i * len..(i + 1) * len]
                    .copy_from_slice(&a.data()[i * n + start..i * n + start + len]);
            }
            out
        });
        self.tape.push(value, Op::Slice { a: self.id, start, len })
    }

    pub fn transpose(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.transposed());
        self.tape.push(value, Op::Transpose { a: self.id })
    }

    /// Reverses the column order of a rank-2 tensor (a self-inverse
    /// permutation, so the adjoint is the same reversal).
    pub fn reverse_cols(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| {
            assert_eq!(a.rank(), 2, "reverse_cols needs a rank-2 tensor");
            reverse_cols_tensor(a)
        });
        self.tape.push(value, Op::ReverseCols { a: self.id })
    }

    pub fn reshape(self, shape: Vec<usize>) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.reshaped(shape.clone()));
        self.tape.push(value, Op::Reshape { a: self.id })
    }

    /// `a^{-1/2}` for symmetric positive-definite `a`.
    pub fn spd_inv_sqrt(self) -> Var<'t> {
        let (value, eigvals, eigvecs) = self.tape.with_value(self.id, |a| {
            assert_eq!(a.rank(), 2, "spd_inv_sqrt needs a square matrix");
            let n = a.shape()[0];
            assert_eq!(a.shape()[1], n, "spd_inv_sqrt needs a square matrix");
            let (vals, vecs) = linalg::sym_eig(a.data(), n);
            assert!(
                vals.iter().all(|&v| v > 0.0),
                "spd_inv_sqrt: matrix not positive definite (min eigenvalue {:e})",
                vals.first().copied().unwrap_or(f64::NAN)
            );
            let fv: Vec<f64> = vals.iter().map(|&v| 1.0 / v.sqrt()).collect();
            let out = linalg::recompose(&vecs, &fv, n);
            (Tensor::new(vec![n, n], out), vals, vecs)
        });
        self.tape.push(value, Op::SpdInvSqrt { a: self.id, eigvals, eigvecs })
    }

    /// Ascending eigenvalues of a symmetric matrix as a rank-1 tensor.
    pub fn sym_eigvals(self) -> Var<'t> {
        let (value, eigvecs) = self.tape.with_value(self.id, |a| {
            assert_eq!(a.rank(), 2, "sym_eigvals needs a square matrix");
            let n = a.shape()[0];
            assert_eq!(a.shape()[1], n, "sym_eigvals needs a square matrix");
            let (vals, vecs) = linalg::sym_eig(a.data(), n);
            (Tensor::vector(vals), vecs)
        });
        self.tape.push(value, Op::SymEigvals { a: self.id, eigvecs })
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}
