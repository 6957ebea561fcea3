//! Dense f64 linear algebra and the scalar maps shared by the model, the
//! gradient engines and the diagnostics.
//!
//! Everything here is small-matrix code: the largest operands are `h × d`
//! weight matrices, so plain row-major `Vec<f64>` storage is enough.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::NumericsError;

/// Default guard used by [`normalize`] when the input norm is tiny.
pub const NORM_GUARD: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch {
                expected: (rows, cols),
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * m);
        for row in rows {
            if row.len() != m {
                return Err(NumericsError::ShapeMismatch { expected: (n, m), found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: n, cols: m, data })
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        Self::from_fn(a.len(), b.len(), |r, c| a[r] * b[c])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self · v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `selfᵀ · v`
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            axpy(vr, self.row(r), &mut out);
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a != 0.0 {
                    axpy(a, other.row(k), out.row_mut(r));
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        axpy(s, &other.data, &mut self.data);
    }

    /// Flattened Euclidean (Frobenius) norm.
    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a · x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Max-shifted softmax written into `out`.
pub fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    out
}

/// `log Σ exp(v)`, computed with the max shift.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Standard normal cumulative distribution function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// `Φ(x) + x φ(x)`.
#[inline]
pub fn gelu_prime(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// `v / max(‖v‖, guard)`.
pub fn normalize(v: &[f64], guard: f64) -> Vec<f64> {
    let denom = norm(v).max(guard);
    v.iter().map(|x| x / denom).collect()
}

/// C¹ ramp `3r² − 2r³` on `[0, 1]`, clamped to 1 above.
#[inline]
pub fn smoothstep(r: f64) -> f64 {
    if r >= 1.0 {
        1.0
    } else {
        r * r * (3.0 - 2.0 * r)
    }
}

#[inline]
pub fn smoothstep_prime(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        6.0 * r * (1.0 - r)
    }
}

/// `smoothstep(‖v‖) · v / ‖v‖`; vanishes at the origin instead of blowing up.
pub fn smoothed_normalize(v: &[f64]) -> Vec<f64> {
    let r = norm(v);
    let (denom, gain) = (r.max(NORM_GUARD), smoothstep(r));
    v.iter().map(|x| x / denom * gain).collect()
}

/// Which projection onto the sphere the model uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormVariant {
    #[default]
    Standard,
    Smoothed,
}

impl NormVariant {
    /// Writes the normalized `v` into `out` and returns `‖v‖`.
    #[inline]
    pub fn apply_into(self, v: &[f64], out: &mut [f64]) -> f64 {
        let r = norm(v);
        let denom = r.max(NORM_GUARD);
        let gain = self.gain(r);
        for (o, x) in out.iter_mut().zip(v) {
            *o = x / denom * gain;
        }
        r
    }

    /// Length of the image of a vector of length `r`.
    #[inline]
    pub fn gain(self, r: f64) -> f64 {
        match self {
            NormVariant::Standard => 1.0,
            NormVariant::Smoothed => smoothstep(r),
        }
    }

    pub fn apply(self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        out
    }

    /// Vector-Jacobian product of the normalization at `v` (with `r = ‖v‖`),
    /// added into `grad_in`. The Jacobian is symmetric, so this is also the
    /// Jacobian-vector product.
    #[inline]
    pub fn backward_into(self, v: &[f64], r: f64, grad_out: &[f64], grad_in: &mut [f64]) {
        match self {
            NormVariant::Standard => {
                if r <= NORM_GUARD {
                    // Guarded branch is linear: v / guard.
                    axpy(1.0 / NORM_GUARD, grad_out, grad_in);
                    return;
                }
                let inv = 1.0 / r;
                let proj = dot(v, grad_out) * inv * inv;
                for ((gi, &g), &x) in grad_in.iter_mut().zip(grad_out).zip(v) {
                    *gi += inv * (g - proj * x);
                }
            }
            NormVariant::Smoothed => {
                if r <= NORM_GUARD {
                    // smoothstep(r)/r → 0 and the radial slope → 0 at the origin.
                    return;
                }
                let inv = 1.0 / r;
                let tangential = smoothstep(r) * inv;
                let radial = smoothstep_prime(r);
                let along = dot(v, grad_out) * inv * inv;
                for ((gi, &g), &x) in grad_in.iter_mut().zip(grad_out).zip(v) {
                    *gi += tangential * (g - along * x) + radial * along * x;
                }
            }
        }
    }
}

/// Total variation distance `½‖p − q‖₁`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, NumericsError> {
    if p.len() != q.len() {
        return Err(NumericsError::LengthMismatch { left: p.len(), right: q.len() });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

const OP_NORM_TOL: f64 = 1e-10;
const OP_NORM_MAX_ITER: usize = 10_000;

/// Largest singular value, by power iteration on the smaller of `MᵀM` and `MMᵀ`.
///
/// Starts from the normalized all-ones vector. Converged once the residual
/// `‖MᵀMv − λv‖` drops below `1e-10 · λ`, which bounds the relative error of
/// λ by the same amount.
pub fn operator_norm(m: &Matrix) -> Result<f64, NumericsError> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(NumericsError::Empty);
    }
    let gram = if m.rows() < m.cols() { m.matmul(&m.transpose()) } else { m.transpose().matmul(m) };
    let n = gram.rows();
    if gram.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    // An all-ones start orthogonal to every dominant direction would stall at
    // zero; fall back to the heaviest coordinate axis in that case.
    if norm(&gram.matvec(&v)) == 0.0 {
        let best = (0..n)
            .max_by(|&a, &b| gram[(a, a)].total_cmp(&gram[(b, b)]))
            .unwrap_or(0);
        v = vec![0.0; n];
        v[best] = 1.0;
    }
    for _ in 0..OP_NORM_MAX_ITER {
        let gv = gram.matvec(&v);
        let lambda = dot(&v, &gv);
        let residual = gv.iter().zip(&v).map(|(g, x)| (g - lambda * x).powi(2)).sum::<f64>().sqrt();
        if residual <= OP_NORM_TOL * lambda.abs() {
            return Ok(lambda.max(0.0).sqrt());
        }
        let len = norm(&gv);
        if len == 0.0 {
            return Ok(0.0);
        }
        v = gv.into_iter().map(|x| x / len).collect();
    }
    Err(NumericsError::ConvergenceFailure { iterations: OP_NORM_MAX_ITER })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&[0.0, 0.0, 0.0]);
        assert!(s.iter().all(|&x| close(x, 1.0 / 3.0, 1e-15)));
        let s = softmax(&[2f64.ln(), 0.0]);
        assert!(close(s[0], 2.0 / 3.0, 1e-15) && close(s[1], 1.0 / 3.0, 1e-15));
        // exp(-1000) underflows to exactly 0 in f64; the extended-precision value is ~5e-435.
        let s = softmax(&[1000.0, 0.0]);
        assert_eq!(s, vec![1.0, 0.0]);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(gelu_prime(0.0), 0.5);
        assert!(close(gelu(10.0), 10.0, 1e-15));
        for x in [-2.0, -0.5, 0.3, 1.7] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            let rel = (fd - gelu_prime(x)).abs() / gelu_prime(x).abs();
            assert!(rel <= 1e-8, "x={x} rel={rel}");
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[3.0, 4.0], NORM_GUARD), vec![0.6, 0.8]);
        assert_eq!(normalize(&[0.0, 0.0], NORM_GUARD), vec![0.0, 0.0]);
        let v = [6e-10, 8e-10];
        assert!(close(norm(&normalize(&v, NORM_GUARD)), 1.0, 1e-12));
    }

    #[test]
    fn smoothed_normalize_examples() {
        assert_eq!(smoothed_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
        let v = [1.2, -1.6];
        assert_eq!(smoothed_normalize(&v), normalize(&v, NORM_GUARD));
        let v = [0.3, 0.4];
        assert!(close(norm(&smoothed_normalize(&v)), 0.5, 1e-15));
    }

    #[test]
    fn operator_norm_examples() {
        assert!(close(operator_norm(&Matrix::identity(3)).unwrap(), 1.0, 1e-12));
        assert!(close(operator_norm(&Matrix::diag(&[2.0, 5.0])).unwrap(), 5.0, 1e-9));
        // all-ones start is in the kernel of this Gram matrix
        let m = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        assert!(close(operator_norm(&m).unwrap(), 2f64.sqrt(), 1e-12));
        assert!(matches!(operator_norm(&Matrix::zeros(0, 3)), Err(NumericsError::Empty)));
        assert_eq!(operator_norm(&Matrix::zeros(2, 3)).unwrap(), 0.0);
    }

    #[test]
    fn tv_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(tv_distance(&[1.0], &[0.5, 0.5]), Err(NumericsError::LengthMismatch { .. })));
    }

    #[test]
    fn normalization_backward_matches_finite_differences() {
        let v = [0.3, -0.2, 0.5];
        let g = [0.7, 0.1, -0.4];
        for variant in [NormVariant::Standard, NormVariant::Smoothed] {
            let mut grad = vec![0.0; 3];
            variant.backward_into(&v, norm(&v), &g, &mut grad);
            for i in 0..3 {
                let h = 1e-6;
                let mut vp = v;
                let mut vm = v;
                vp[i] += h;
                vm[i] -= h;
                let fd = (dot(&variant.apply(&vp), &g) - dot(&variant.apply(&vm), &g)) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-8, "{variant:?} {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..20),
            c in -100.0f64..100.0,
        ) {
            let s = softmax(&v);
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            for (a, b) in s.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn normalize_is_unit_and_homogeneous(
            v in prop::collection::vec(-10.0f64..10.0, 1..8),
            alpha in 1e-3f64..1e3,
        ) {
            prop_assume!(norm(&v) >= 1e-6);
            let n = normalize(&v, NORM_GUARD);
            prop_assert!((norm(&n) - 1.0).abs() <= 1e-12);
            let scaled: Vec<f64> = v.iter().map(|x| alpha * x).collect();
            for (a, b) in n.iter().zip(normalize(&scaled, NORM_GUARD)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn operator_norm_is_transpose_invariant(
            rows in 1usize..6, cols in 1usize..6,
            seed in prop::collection::vec(-3.0f64..3.0, 36),
        ) {
            let m = Matrix::from_fn(rows, cols, |r, c| seed[r * 6 + c]);
            let a = operator_norm(&m).unwrap();
            let b = operator_norm(&m.transpose()).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }

        #[test]
        fn tv_is_a_metric(
            raw in prop::collection::vec(0.01f64..1.0, 12),
        ) {
            let mk = |s: &[f64]| { let t: f64 = s.iter().sum(); s.iter().map(|x| x / t).collect::<Vec<_>>() };
            let (p, q, r) = (mk(&raw[0..4]), mk(&raw[4..8]), mk(&raw[8..12]));
            let pq = tv_distance(&p, &q).unwrap();
            prop_assert_eq!(pq, tv_distance(&q, &p).unwrap());
            prop_assert!(pq <= tv_distance(&p, &r).unwrap() + tv_distance(&r, &q).unwrap() + 1e-15);
            prop_assert!((0.0..=1.0).contains(&pq));
        }
    }
}
