//! Dense small-matrix primitives: normalization, cosine similarity, Gram
//! matrices, Householder reflections and QR.
//!
//! Everything is plain `f64` over row-major `Vec<f64>` storage. The sizes in
//! this crate are tiny (tens of rows), so clarity and reproducibility win
//! over BLAS-level performance.

use crate::error::{LabError, Result};

/// Global zero-norm threshold: vectors at or below this norm cannot be
/// normalized or used as directions.
pub const EPS_NORM: f64 = 1e-12;

/// Pivot threshold below which QR declares rank deficiency.
pub const EPS_RANK: f64 = 1e-10;

/// Dense vector with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    /// Panics on non-finite entries; use [`Vector::try_new`] for untrusted
    /// input such as file contents.
    pub fn new(data: Vec<f64>) -> Self {
        assert!(data.iter().all(|x| x.is_finite()), "non-finite entry in vector");
        Vector { data }
    }

    pub fn try_new(data: Vec<f64>) -> Result<Self> {
        if data.iter().all(|x| x.is_finite()) {
            Ok(Vector { data })
        } else {
            Err(LabError::NonFinite("vector"))
        }
    }

    pub fn zeros(n: usize) -> Self {
        Vector { data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(LabError::DimensionMismatch(format!(
                "dot: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(dot(&self.data, &other.data))
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn slice_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dense row-major matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape does not match data length");
        assert!(data.iter().all(|x| x.is_finite()), "non-finite entry in matrix");
        Matrix { rows, cols, data }
    }

    pub fn try_new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(LabError::DimensionMismatch(format!(
                "matrix {}x{} with {} entries",
                rows,
                cols,
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(LabError::NonFinite("matrix"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "from_rows needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    /// `self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `self^T * x`, i.e. x projected through the transpose without
    /// materializing it.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "matvec_t shape mismatch");
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            for c in 0..self.cols {
                out[c] += self.data[r * self.cols + c] * xr;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        slice_norm(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Scales `v` to unit L2 norm.
pub fn l2_normalize(v: &Vector) -> Result<Vector> {
    let n = v.norm();
    if n <= EPS_NORM {
        return Err(LabError::ZeroNorm);
    }
    Ok(Vector { data: v.data.iter().map(|x| x / n).collect() })
}

/// Cosine of the angle between `a` and `b`.
pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(LabError::DimensionMismatch(format!(
            "cosine: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na <= EPS_NORM || nb <= EPS_NORM {
        return Err(LabError::ZeroNorm);
    }
    Ok(dot(&a.data, &b.data) / (na * nb))
}

/// `E E^T`. For row-normalized `E` the off-diagonal entries are pairwise
/// cosine similarities. The result is symmetric to the bit: each pair is
/// computed once and mirrored.
pub fn gram_matrix(e: &Matrix) -> Matrix {
    let c = e.rows();
    let mut g = Matrix::zeros(c, c);
    for i in 0..c {
        for j in i..c {
            let v = dot(e.row(i), e.row(j));
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    g
}

/// Householder reflector `H = I - 2 v v^T / ||v||^2`: symmetric, orthogonal
/// and involutory, with `H v = -v`.
pub fn householder_reflector(v: &Vector) -> Result<Matrix> {
    let n = v.norm();
    if n <= EPS_NORM {
        return Err(LabError::ZeroNorm);
    }
    let d = v.len();
    let scale = 2.0 / (n * n);
    let mut h = Matrix::identity(d);
    for i in 0..d {
        for j in 0..d {
            let cur = h.get(i, j);
            h.set(i, j, cur - scale * v[i] * v[j]);
        }
    }
    Ok(h)
}

/// Thin QR factorization `A = Q R` by Householder reflections for `m x n`
/// input with `m >= n`.
///
/// `Q` is `m x n` with orthonormal columns and `R` is `n x n` upper
/// triangular with strictly positive diagonal: the reflector for each column
/// points away from the pivot's sign (no cancellation), and residual sign
/// freedom is removed afterwards by folding row/column sign flips into `Q`.
pub fn householder_qr(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(LabError::DimensionMismatch(format!(
            "qr expects m >= n, got {m}x{n}"
        )));
    }
    let mut r = a.clone();
    let mut q = Matrix::identity(m);

    let mut v = vec![0.0; m];
    for k in 0..n {
        let sub = m - k;
        let mut norm_sq = 0.0;
        for i in 0..sub {
            let x = r.get(k + i, k);
            v[i] = x;
            norm_sq += x * x;
        }
        let norm = norm_sq.sqrt();
        if norm <= EPS_RANK {
            return Err(LabError::RankDeficient(norm));
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * norm;
        let beta = 2.0 / v[..sub].iter().map(|x| x * x).sum::<f64>();

        // R <- H R on the trailing block.
        for j in k..n {
            let mut s = 0.0;
            for i in 0..sub {
                s += v[i] * r.get(k + i, j);
            }
            s *= beta;
            for i in 0..sub {
                let cur = r.get(k + i, j);
                r.set(k + i, j, cur - s * v[i]);
            }
        }
        // Q <- Q H (H symmetric, applied from the right on columns k..m).
        for row in 0..m {
            let mut s = 0.0;
            for i in 0..sub {
                s += q.get(row, k + i) * v[i];
            }
            s *= beta;
            for i in 0..sub {
                let cur = q.get(row, k + i);
                q.set(row, k + i, cur - s * v[i]);
            }
        }
    }

    // Exact upper triangle, then make the diagonal positive.
    let mut r_thin = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r_thin.set(i, j, r.get(i, j));
        }
    }
    let mut q_thin = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            q_thin.set(i, j, q.get(i, j));
        }
    }
    for k in 0..n {
        if r_thin.get(k, k) < 0.0 {
            for j in k..n {
                let cur = r_thin.get(k, j);
                r_thin.set(k, j, -cur);
            }
            for i in 0..m {
                let cur = q_thin.get(i, k);
                q_thin.set(i, k, -cur);
            }
        }
    }
    Ok((q_thin, r_thin))
}

/// Back-substitution for upper-triangular `R x = b`.
pub fn solve_upper_triangular(r: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = r.rows();
    if r.cols() != n || b.len() != n {
        return Err(LabError::DimensionMismatch(format!(
            "triangular solve: {}x{} with rhs {}",
            r.rows(),
            r.cols(),
            b.len()
        )));
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= r.get(i, j) * x[j];
        }
        let d = r.get(i, i);
        if d.abs() <= EPS_RANK {
            return Err(LabError::RankDeficient(d.abs()));
        }
        x[i] = s / d;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    fn random_matrix(rng: &mut CounterRng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Matrix::new(rows, cols, data)
    }

    fn random_vector(rng: &mut CounterRng, n: usize) -> Vector {
        Vector::new((0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    #[test]
    fn normalize_analytic() {
        let v = l2_normalize(&Vector::new(vec![3.0, 4.0])).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15);
        assert!((v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_identity_case() {
        let v = l2_normalize(&Vector::new(vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_zero_errors() {
        assert!(matches!(
            l2_normalize(&Vector::new(vec![0.0, 0.0])),
            Err(LabError::ZeroNorm)
        ));
    }

    #[test]
    fn normalize_unit_norm_within_tolerance() {
        let mut rng = CounterRng::new(1);
        for _ in 0..50 {
            let v = random_vector(&mut rng, 7);
            let u = l2_normalize(&v).unwrap();
            assert!((u.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn cosine_orthogonal_parallel_analytic() {
        let cos = cosine_similarity(&Vector::new(vec![1.0, 0.0]), &Vector::new(vec![0.0, 1.0]))
            .unwrap();
        assert_eq!(cos, 0.0);
        let cos = cosine_similarity(&Vector::new(vec![2.0, 2.0]), &Vector::new(vec![1.0, 1.0]))
            .unwrap();
        assert!((cos - 1.0).abs() < 1e-15);
        let cos = cosine_similarity(&Vector::new(vec![1.0, 0.0]), &Vector::new(vec![1.0, 1.0]))
            .unwrap();
        assert!((cos - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        let a = Vector::new(vec![1.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&a, &Vector::new(vec![1.0, 0.0, 0.0])),
            Err(LabError::DimensionMismatch(_))
        ));
        assert!(matches!(
            cosine_similarity(&a, &Vector::new(vec![0.0, 0.0])),
            Err(LabError::ZeroNorm)
        ));
    }

    #[test]
    fn gram_identity_and_duplicates() {
        let g = gram_matrix(&Matrix::identity(2));
        assert_eq!(g, Matrix::identity(2));
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let g = gram_matrix(&e);
        assert_eq!(g.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn gram_matches_double_loop_oracle() {
        let mut rng = CounterRng::new(5);
        let e = random_matrix(&mut rng, 3, 4);
        let g = gram_matrix(&e);
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for d in 0..4 {
                    s += e.get(i, d) * e.get(j, d);
                }
                assert!((g.get(i, j) - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gram_symmetric_on_random_inputs() {
        let mut rng = CounterRng::new(9);
        for _ in 0..50 {
            let e = random_matrix(&mut rng, 5, 3);
            let g = gram_matrix(&e);
            assert!(g.max_abs_diff(&g.transpose()) <= 1e-12);
        }
    }

    #[test]
    fn reflector_on_e1() {
        let h = householder_reflector(&Vector::new(vec![1.0, 0.0, 0.0])).unwrap();
        let expect = Matrix::from_rows(&[
            vec![-1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        assert!(h.max_abs_diff(&expect) <= 1e-15);
    }

    #[test]
    fn reflector_properties_random() {
        let mut rng = CounterRng::new(17);
        for _ in 0..50 {
            let v = random_vector(&mut rng, 5);
            let h = householder_reflector(&v).unwrap();
            let eye = Matrix::identity(5);
            assert!(h.matmul(&h).max_abs_diff(&eye) <= 1e-10, "HH = I");
            assert!(h.matmul(&h.transpose()).max_abs_diff(&eye) <= 1e-10, "HH^T = I");
            assert!(h.max_abs_diff(&h.transpose()) <= 1e-12, "H = H^T");
            let hv = h.matvec(v.as_slice());
            for (a, b) in hv.iter().zip(v.as_slice()) {
                assert!((a + b).abs() <= 1e-10, "Hv = -v");
            }
        }
    }

    #[test]
    fn reflector_fixes_orthogonal_complement() {
        let mut rng = CounterRng::new(23);
        let v = random_vector(&mut rng, 6);
        let h = householder_reflector(&v).unwrap();
        // Build x orthogonal to v by Gram-Schmidt.
        let w = random_vector(&mut rng, 6);
        let coef = w.dot(&v).unwrap() / v.dot(&v).unwrap();
        let x: Vec<f64> = w
            .as_slice()
            .iter()
            .zip(v.as_slice())
            .map(|(wi, vi)| wi - coef * vi)
            .collect();
        let hx = h.matvec(&x);
        for (a, b) in hx.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn qr_identity() {
        let (q, r) = householder_qr(&Matrix::identity(3)).unwrap();
        assert!(q.max_abs_diff(&Matrix::identity(3)) <= 1e-12);
        assert!(r.max_abs_diff(&Matrix::identity(3)) <= 1e-12);
    }

    #[test]
    fn qr_single_column() {
        let a = Matrix::from_rows(&[vec![3.0], vec![4.0]]);
        let (q, r) = householder_qr(&a).unwrap();
        assert!((q.get(0, 0) - 0.6).abs() <= 1e-12);
        assert!((q.get(1, 0) - 0.8).abs() <= 1e-12);
        assert!((r.get(0, 0) - 5.0).abs() <= 1e-12);
    }

    #[test]
    fn qr_reconstruction_and_orthonormality_random() {
        let mut rng = CounterRng::new(31);
        for _ in 0..50 {
            let a = random_matrix(&mut rng, 6, 4);
            let (q, r) = householder_qr(&a).unwrap();
            let qr = q.matmul(&r);
            let resid = qr.max_abs_diff(&a) / a.frobenius_norm().max(1.0);
            assert!(resid <= 1e-10, "reconstruction residual {resid}");
            let qtq = q.transpose().matmul(&q);
            assert!(qtq.max_abs_diff(&Matrix::identity(4)) <= 1e-10);
            for k in 0..4 {
                assert!(r.get(k, k) > 0.0, "diagonal must be positive");
                for j in 0..k {
                    assert_eq!(r.get(k, j), 0.0, "strict lower triangle must be zero");
                }
            }
        }
    }

    #[test]
    fn qr_rank_deficient_errors() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(householder_qr(&a), Err(LabError::RankDeficient(_))));
    }

    #[test]
    fn qr_rejects_wide_input() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(householder_qr(&a), Err(LabError::DimensionMismatch(_))));
    }

    #[test]
    fn triangular_solve_roundtrip() {
        let r = Matrix::from_rows(&[vec![2.0, 1.0, -1.0], vec![0.0, 3.0, 0.5], vec![0.0, 0.0, 1.5]]);
        let x = vec![1.0, -2.0, 4.0];
        let b = r.matvec(&x);
        let got = solve_upper_triangular(&r, &b).unwrap();
        for (a, e) in got.iter().zip(&x) {
            assert!((a - e).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn prop_gram_symmetric_and_bounded(seed in 0u64..500) {
            let mut rng = CounterRng::new(seed);
            let rows = 2 + (seed % 5) as usize;
            let cols = rows + (seed % 4) as usize;
            let raw = random_matrix(&mut rng, rows, cols);
            let unit_rows: Vec<Vec<f64>> = (0..rows)
                .map(|i| {
                    let v = Vector::new(raw.row(i).to_vec());
                    l2_normalize(&v).unwrap().as_slice().to_vec()
                })
                .collect();
            let e = Matrix::from_rows(&unit_rows);
            let g = gram_matrix(&e);
            prop_assert!(g.max_abs_diff(&g.transpose()) <= 1e-12);
            for i in 0..rows {
                prop_assert!((g.get(i, i) - 1.0).abs() <= 1e-12);
                for j in 0..rows {
                    prop_assert!(g.get(i, j).abs() <= 1.0 + 1e-12);
                }
            }
        }

        #[test]
        fn prop_qr_roundtrip(seed in 0u64..200) {
            let mut rng = CounterRng::new(seed.wrapping_add(1000));
            let n = 2 + (seed % 4) as usize;
            let m = n + (seed % 3) as usize;
            let a = random_matrix(&mut rng, m, n);
            // Random matrices of this size are full rank with overwhelming
            // probability; skip the rare degenerate draw.
            if let Ok((q, r)) = householder_qr(&a) {
                let resid = q.matmul(&r).max_abs_diff(&a) / a.frobenius_norm().max(1.0);
                prop_assert!(resid <= 1e-10);
            }
        }
    }
}
