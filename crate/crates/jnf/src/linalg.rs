//! Small dense symmetric linear algebra.
//!
//! Everything here operates on matrices of side ≤ a few dozen (projection
//! dimensions, feature covariances), so a cyclic Jacobi eigensolver is
//! accurate, dependency-free, and deterministic.

/// Eigendecomposition of a symmetric matrix: `a = u · diag(values) · uᵀ`.
///
/// `values` are ascending; column `i` of `u` is the eigenvector for
/// `values[i]`. Input is symmetrized first so tiny asymmetries from
/// accumulated rounding cannot derail the rotations.
pub fn sym_eig(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n, "sym_eig expects an n×n matrix");
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a[i * n + j] + a[j * n + i]);
        }
    }
    let mut u = vec![0.0; n * n];
    for i in 0..n {
        u[i * n + i] = 1.0;
    }

    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s
    };
    let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().max(1e-300);

    for _sweep in 0..100 {
        if off(&m) <= 1e-28 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let ukp = u[k * n + p];
                    let ukq = u[k * n + q];
                    u[k * n + p] = c * ukp - s * ukq;
                    u[k * n + q] = s * ukp + c * ukq;
                }
            }
        }
    }

    let mut values: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    // Sort ascending, carrying eigenvector columns along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let sorted_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut sorted_u = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            sorted_u[row * n + new_col] = u[row * n + old_col];
        }
    }
    values = sorted_values;
    (values, sorted_u)
}

/// Applies `f` to the spectrum: `u · diag(f(values)) · uᵀ`.
pub fn sym_matrix_function(a: &[f64], n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let (values, u) = sym_eig(a, n);
    let fv: Vec<f64> = values.iter().map(|&v| f(v)).collect();
    recompose(&u, &fv, n)
}

/// `u · diag(d) · uᵀ` for an orthogonal `u`.
pub fn recompose(u: &[f64], d: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += u[i * n + k] * d[k] * u[j * n + k];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Trace of the principal square root of a symmetric PSD matrix, clamping
/// slightly negative eigenvalues (rounding noise) to zero.
pub fn trace_sqrt_psd(a: &[f64], n: usize) -> f64 {
    let (values, _) = sym_eig(a, n);
    values.iter().map(|&v| v.max(0.0).sqrt()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_hand_case() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let (values, u) = sym_eig(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((values[0] - 1.0).abs() < 1e-12);
        assert!((values[1] - 3.0).abs() < 1e-12);
        // Reconstruction.
        let r = recompose(&u, &values, 2);
        for (got, want) in r.iter().zip([2.0, 1.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn random_spd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = 5;
            let mut b = vec![0.0; n * n];
            for v in b.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            // a = b·bᵀ + 0.1·I is SPD.
            let mut a = vec![0.0; n * n];
            crate::tensor::matmul_nt(&b, &b, n, n, n, &mut a);
            for i in 0..n {
                a[i * n + i] += 0.1;
            }
            let (values, u) = sym_eig(&a, n);
            assert!(values.iter().all(|&v| v > 0.0));
            let r = recompose(&u, &values, n);
            for (got, want) in r.iter().zip(a.iter()) {
                assert!((got - want).abs() < 1e-10, "got {got} want {want}");
            }
            // Inverse square root composes to the inverse.
            let inv_sqrt = sym_matrix_function(&a, n, |v| 1.0 / v.sqrt());
            let mut isq = vec![0.0; n * n];
            crate::tensor::matmul_nn(&inv_sqrt, &inv_sqrt, n, n, n, &mut isq);
            let mut prod = vec![0.0; n * n];
            crate::tensor::matmul_nn(&isq, &a, n, n, n, &mut prod);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[i * n + j] - want).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn trace_sqrt_of_diagonal() {
        let a = [4.0, 0.0, 0.0, 9.0];
        assert!((trace_sqrt_psd(&a, 2) - 5.0).abs() < 1e-12);
    }
}
