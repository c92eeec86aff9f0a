//! Dense row-major `f64` tensors.
//!
//! These are plain value containers; automatic differentiation lives in
//! [`crate::tape`], which records operations over tensors. Shapes are
//! explicit: rank 0 is a scalar, rank 1 a vector, rank 2 a matrix stored
//! row-major. Anything higher is unsupported on purpose — every model in
//! this crate is fully connected.

/// Shape-tagged row-major array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `shape` accounts for every element.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} does not match {} elements",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    /// Identity matrix of side `n`.
    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor { shape: vec![n, n], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn scalar_value(&self) -> f64 {
        assert!(self.is_scalar(), "tensor of shape {:?} is not a scalar", self.shape);
        self.data[0]
    }

    /// Rows of a rank-2 tensor; vectors count as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => 1,
            r => panic!("rows() on rank-{} tensor", r),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            r => panic!("cols() on rank-{} tensor", r),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// In-place `self += other` over identical shapes.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Tensor {
        Tensor::new(shape, self.data.clone())
    }

    pub fn transposed(&self) -> Tensor {
        assert_eq!(self.rank(), 2, "transpose needs a rank-2 tensor");
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// Maximum absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out = a (m×k) · b (k×n)`, row-major. Accumulates four `b` rows per pass
/// so the contiguous inner loop stays vectorizable while the accumulator row
/// is loaded and stored once per group.
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        let mut kk = 0;
        while kk + 4 <= k {
            let a0 = a_row[kk];
            let a1 = a_row[kk + 1];
            let a2 = a_row[kk + 2];
            let a3 = a_row[kk + 3];
            let b0 = &b[kk * n..kk * n + n];
            let b1 = &b[(kk + 1) * n..(kk + 1) * n + n];
            let b2 = &b[(kk + 2) * n..(kk + 2) * n + n];
            let b3 = &b[(kk + 3) * n..(kk + 3) * n + n];
            for j in 0..n {
                out_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            kk += 4;
        }
        while kk < k {
            let aik = a_row[kk];
            let b_row = &b[kk * n..kk * n + n];
            for j in 0..n {
                out_row[j] += aik * b_row[j];
            }
            kk += 1;
        }
    }
}

fn transpose_into(src: &[f64], rows: usize, cols: usize, dst: &mut Vec<f64>) {
    dst.clear();
    dst.resize(rows * cols, 0.0);
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// `out = a (m×k) · bᵀ` where `b` is stored `n×k`. Transposes `b` and reuses
/// the accumulator kernel — a row-dot formulation would reduce serially and
/// defeat vectorization.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let mut bt = Vec::new();
    transpose_into(b, n, k, &mut bt);
    matmul_nn(a, &bt, m, k, n, out);
}

/// `out = aᵀ · b` where `a` is stored `k×m`, `b` is `k×n`.
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut at = Vec::new();
    transpose_into(a, k, m, &mut at);
    matmul_nn(&at, b, m, k, n, out);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_accounts_for_elements() {
        let t = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(t.numel(), 6);
        assert_eq!(t.row(1), &[4., 5., 6.]);
    }

    #[test]
    #[should_panic(expected = "does not match")]
    fn bad_shape_panics() {
        Tensor::new(vec![2, 2], vec![1.0; 3]);
    }

    #[test]
    fn matmul_hand_oracle() {
        // [[1,2],[3,4]] · [[5],[6]] = [[17],[39]], each entry an inner product
        // computed by hand.
        let a = [1., 2., 3., 4.];
        let b = [5., 6.];
        let mut out = [0.0; 2];
        matmul_nn(&a, &b, 2, 2, 1, &mut out);
        assert_eq!(out, [17., 39.]);
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::eye(3);
        let b = Tensor::matrix(3, 3, (0..9).map(|v| v as f64 * 0.5 - 2.0).collect());
        let mut out = vec![0.0; 9];
        matmul_nn(a.data(), b.data(), 3, 3, 3, &mut out);
        assert_eq!(out, b.data());
    }

    #[test]
    fn transposed_variants_agree() {
        let a = Tensor::matrix(2, 3, vec![1., -2., 3., 0.5, 4., -1.]);
        let b = Tensor::matrix(3, 4, (0..12).map(|v| (v as f64).sin()).collect());
        let mut nn = vec![0.0; 8];
        matmul_nn(a.data(), b.data(), 2, 3, 4, &mut nn);

        let bt = b.transposed();
        let mut nt = vec![0.0; 8];
        matmul_nt(a.data(), bt.data(), 2, 3, 4, &mut nt);

        let at = a.transposed();
        let mut tn = vec![0.0; 8];
        matmul_tn(at.data(), b.data(), 2, 3, 4, &mut tn);

        for i in 0..8 {
            assert!((nn[i] - nt[i]).abs() < 1e-14);
            assert!((nn[i] - tn[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn finite_detection() {
        let mut t = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert!(t.is_finite());
        t.data_mut()[1] = f64::NAN;
        assert_eq!(t.first_non_finite(), Some(1));
    }
}
