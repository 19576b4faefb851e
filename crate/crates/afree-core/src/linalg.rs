//! Dense matrices over an abstract field, exact rational elimination, and the
//! float lane backed by nalgebra.
//!
//! Rank, kernel, and span decisions in the rational lane never see a
//! tolerance. The float lane follows the convention that singular values
//! below `1e-10` times the largest one count as zero.

use nalgebra::DMatrix;
use num::traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::{Field, Rat};

/// Relative singular-value threshold for float rank decisions.
pub const FLOAT_RANK_RTOL: f64 = 1e-10;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Field> Mat<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == nc), "ragged rows");
        Mat {
            rows: nr,
            cols: nc,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vec(&self, i: usize) -> Vec<T> {
        self.row(i).to_vec()
    }

    pub fn col_vec(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)].clone()).collect()
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1))
    }

    pub fn transpose(&self) -> Mat<T> {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)].clone())
    }

    pub fn matmul(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        Mat::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = T::zero();
            for k in 0..self.cols {
                acc = acc + self[(i, k)].clone() * other[(k, j)].clone();
            }
            acc
        })
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows)
            .map(|i| {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc = acc + self[(i, k)].clone() * v[k].clone();
                }
                acc
            })
            .collect()
    }

    pub fn add(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat::from_fn(self.rows, self.cols, |i, j| {
            self[(i, j)].clone() + other[(i, j)].clone()
        })
    }

    pub fn sub(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat::from_fn(self.rows, self.cols, |i, j| {
            self[(i, j)].clone() - other[(i, j)].clone()
        })
    }

    pub fn scale(&self, by: &T) -> Mat<T> {
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)].clone() * by.clone())
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn vstack(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, other.cols, "vstack shape mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Mat {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    /// Matrix entries flattened row-major into one vector.
    pub fn flatten(&self) -> Vec<T> {
        self.data.clone()
    }

    pub fn map<U: Field>(&self, f: impl Fn(&T) -> U) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn to_f64(&self) -> Mat<f64> {
        self.map(Field::to_f64)
    }

    pub fn max_abs_f64(&self) -> f64 {
        self.data
            .iter()
            .map(|x| x.to_f64().abs())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(Zero::is_zero)
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn mat_from_i64(rows: &[&[i64]]) -> Mat<Rat> {
    Mat::from_rows(
        rows.iter()
            .map(|r| r.iter().map(|&x| crate::scalar::rat(x)).collect())
            .collect(),
    )
}

pub fn dot<T: Field>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

// ---------------------------------------------------------------------------
// Exact lane
// ---------------------------------------------------------------------------

/// Reduced row echelon form in place; returns the pivot columns.
pub fn rref_exact(m: &mut Mat<Rat>) -> Vec<usize> {
    let (nr, nc) = (m.nrows(), m.ncols());
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..nc {
        let Some(p) = (r..nr).find(|&i| !m[(i, c)].is_zero()) else {
            continue;
        };
        if p != r {
            for j in 0..nc {
                let tmp = m[(p, j)].clone();
                m[(p, j)] = m[(r, j)].clone();
                m[(r, j)] = tmp;
            }
        }
        let inv = m[(r, c)].clone().recip();
        for j in 0..nc {
            m[(r, j)] = &m[(r, j)] * &inv;
        }
        for i in 0..nr {
            if i != r && !m[(i, c)].is_zero() {
                let factor = m[(i, c)].clone();
                for j in 0..nc {
                    let sub = &factor * &m[(r, j)];
                    m[(i, j)] = &m[(i, j)] - &sub;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == nr {
            break;
        }
    }
    pivots
}

pub fn rank_exact(m: &Mat<Rat>) -> usize {
    let mut work = m.clone();
    rref_exact(&mut work).len()
}

/// Basis of `{x : Mx = 0}`; free variables set to one in column order.
pub fn kernel_basis_exact(m: &Mat<Rat>) -> Vec<Vec<Rat>> {
    let mut work = m.clone();
    let pivots = rref_exact(&mut work);
    let nc = m.ncols();
    let mut basis = Vec::new();
    for free in (0..nc).filter(|c| !pivots.contains(c)) {
        let mut v = vec![Rat::zero(); nc];
        v[free] = Rat::one();
        for (r, &pc) in pivots.iter().enumerate() {
            v[pc] = -work[(r, free)].clone();
        }
        basis.push(v);
    }
    basis
}

/// A particular solution of `Mx = rhs` with free variables zero
/// (the "first pivot" solution), or `None` when inconsistent.
pub fn solve_exact(m: &Mat<Rat>, rhs: &[Rat]) -> Option<Vec<Rat>> {
    assert_eq!(m.nrows(), rhs.len());
    let mut aug = Mat::from_fn(m.nrows(), m.ncols() + 1, |i, j| {
        if j < m.ncols() {
            m[(i, j)].clone()
        } else {
            rhs[i].clone()
        }
    });
    let pivots = rref_exact(&mut aug);
    if pivots.contains(&m.ncols()) {
        return None;
    }
    let mut x = vec![Rat::zero(); m.ncols()];
    for (r, &pc) in pivots.iter().enumerate() {
        x[pc] = aug[(r, m.ncols())].clone();
    }
    Some(x)
}

pub fn inverse_exact(m: &Mat<Rat>) -> Option<Mat<Rat>> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "inverse of non-square matrix");
    let mut aug = Mat::from_fn(n, 2 * n, |i, j| {
        if j < n {
            m[(i, j)].clone()
        } else if j - n == i {
            Rat::one()
        } else {
            Rat::zero()
        }
    });
    let pivots = rref_exact(&mut aug);
    if pivots.len() < n || pivots.iter().take(n).enumerate().any(|(i, &p)| p != i) {
        return None;
    }
    Some(Mat::from_fn(n, n, |i, j| aug[(i, j + n)].clone()))
}

pub fn det_exact(m: &Mat<Rat>) -> Rat {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "determinant of non-square matrix");
    let mut work = m.clone();
    let mut det = Rat::one();
    for c in 0..n {
        let Some(p) = (c..n).find(|&i| !work[(i, c)].is_zero()) else {
            return Rat::zero();
        };
        if p != c {
            for j in 0..n {
                let tmp = work[(p, j)].clone();
                work[(p, j)] = work[(c, j)].clone();
                work[(c, j)] = tmp;
            }
            det = -det;
        }
        det = &det * &work[(c, c)];
        let inv = work[(c, c)].clone().recip();
        for i in c + 1..n {
            if !work[(i, c)].is_zero() {
                let factor = &work[(i, c)] * &inv;
                for j in c..n {
                    let sub = &factor * &work[(c, j)];
                    work[(i, j)] = &work[(i, j)] - &sub;
                }
            }
        }
    }
    det
}

/// Exact normalization `A = U · Id_{r,d,m} · Vᵀ` with `U`, `V` invertible,
/// built from elementary row and column operations.
pub fn normal_form_exact(a: &Mat<Rat>) -> (Mat<Rat>, Mat<Rat>, usize) {
    let (d, m) = (a.nrows(), a.ncols());
    // Row stage: E·A = R in rref, E recorded on an identity.
    let mut r_mat = a.clone();
    let mut e = Mat::<Rat>::identity(d);
    let mut pivots: Vec<usize> = Vec::new();
    {
        let mut r = 0;
        for c in 0..m {
            let Some(p) = (r..d).find(|&i| !r_mat[(i, c)].is_zero()) else {
                continue;
            };
            if p != r {
                for j in 0..m {
                    let tmp = r_mat[(p, j)].clone();
                    r_mat[(p, j)] = r_mat[(r, j)].clone();
                    r_mat[(r, j)] = tmp;
                }
                for j in 0..d {
                    let tmp = e[(p, j)].clone();
                    e[(p, j)] = e[(r, j)].clone();
                    e[(r, j)] = tmp;
                }
            }
            let inv = r_mat[(r, c)].clone().recip();
            for j in 0..m {
                r_mat[(r, j)] = &r_mat[(r, j)] * &inv;
            }
            for j in 0..d {
                e[(r, j)] = &e[(r, j)] * &inv;
            }
            for i in 0..d {
                if i != r && !r_mat[(i, c)].is_zero() {
                    let factor = r_mat[(i, c)].clone();
                    for j in 0..m {
                        let sub = &factor * &r_mat[(r, j)];
                        r_mat[(i, j)] = &r_mat[(i, j)] - &sub;
                    }
                    for j in 0..d {
                        let sub = &factor * &e[(r, j)];
                        e[(i, j)] = &e[(i, j)] - &sub;
                    }
                }
            }
            pivots.push(c);
            r += 1;
            if r == d {
                break;
            }
        }
    }
    let rank = pivots.len();
    // Column stage: R·F = Id_{r,d,m}. Permute pivot columns to the front,
    // then clear the remaining columns against the pivot ones.
    let mut f = Mat::<Rat>::identity(m);
    // Column permutation: target column k takes pivot column pivots[k].
    let mut perm: Vec<usize> = (0..m).collect();
    for (k, &pc) in pivots.iter().enumerate() {
        let pos = perm.iter().position(|&x| x == pc).unwrap();
        perm.swap(k, pos);
    }
    let permuted = Mat::from_fn(d, m, |i, j| r_mat[(i, perm[j])].clone());
    let perm_mat = Mat::from_fn(m, m, |i, j| {
        if perm[j] == i {
            Rat::one()
        } else {
            Rat::zero()
        }
    });
    f = f.matmul(&perm_mat);
    let mut g = permuted;
    // g now has identity in its leading r×r block; clear columns r..m.
    let mut clear = Mat::<Rat>::identity(m);
    for j in rank..m {
        for i in 0..rank {
            clear[(i, j)] = -g[(i, j)].clone();
        }
    }
    g = g.matmul(&clear);
    f = f.matmul(&clear);
    debug_assert!({
        let expected = Mat::from_fn(d, m, |i, j| {
            if i == j && i < rank {
                Rat::one()
            } else {
                Rat::zero()
            }
        });
        g == expected
    });
    // A = E⁻¹ · Id_{r,d,m} · F⁻¹, so U = E⁻¹ and Vᵀ = F⁻¹.
    let u = inverse_exact(&e).expect("row-operation product is invertible");
    let f_inv = inverse_exact(&f).expect("column-operation product is invertible");
    (u, f_inv.transpose(), rank)
}

// ---------------------------------------------------------------------------
// Float lane
// ---------------------------------------------------------------------------

pub fn to_na(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn from_na(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn singular_values(m: &Mat<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = to_na(m).singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Rank with singular values below `1e-10 · σ_max` counted as zero.
pub fn rank_f64(m: &Mat<f64>) -> usize {
    let sv = singular_values(m);
    let Some(&smax) = sv.first() else { return 0 };
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > FLOAT_RANK_RTOL * smax).count()
}

/// Kernel basis by elimination with partial pivoting; the negligibility
/// threshold is relative to the largest input entry.
pub fn kernel_basis_f64(m: &Mat<f64>) -> Vec<Vec<f64>> {
    let scale = m.max_abs_f64();
    if scale == 0.0 {
        return (0..m.ncols())
            .map(|j| {
                let mut v = vec![0.0; m.ncols()];
                v[j] = 1.0;
                v
            })
            .collect();
    }
    let tol = FLOAT_RANK_RTOL * scale;
    let mut work = m.clone();
    let (nr, nc) = (work.nrows(), work.ncols());
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..nc {
        let Some(p) = (r..nr)
            .filter(|&i| work[(i, c)].abs() > tol)
            .max_by(|&a, &b| work[(a, c)].abs().partial_cmp(&work[(b, c)].abs()).unwrap())
        else {
            continue;
        };
        for j in 0..nc {
            let tmp = work[(p, j)];
            work[(p, j)] = work[(r, j)];
            work[(r, j)] = tmp;
        }
        let inv = 1.0 / work[(r, c)];
        for j in 0..nc {
            work[(r, j)] *= inv;
        }
        for i in 0..nr {
            if i != r {
                let factor = work[(i, c)];
                if factor != 0.0 {
                    for j in 0..nc {
                        work[(i, j)] -= factor * work[(r, j)];
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == nr {
            break;
        }
    }
    (0..nc)
        .filter(|c| !pivots.contains(c))
        .map(|free| {
            let mut v = vec![0.0; nc];
            v[free] = 1.0;
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -work[(r, free)];
            }
            v
        })
        .collect()
}

/// Minimal-norm least-squares solution via SVD.
pub fn lstsq_f64(m: &Mat<f64>, rhs: &[f64]) -> Vec<f64> {
    assert_eq!(m.nrows(), rhs.len());
    let na = to_na(m);
    let svd = na.svd(true, true);
    let b = nalgebra::DVector::from_column_slice(rhs);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = if smax > 0.0 {
        FLOAT_RANK_RTOL * smax
    } else {
        f64::EPSILON
    };
    let x = svd.solve(&b, eps).expect("svd solve");
    x.iter().copied().collect()
}

/// Gram–Schmidt with column pivoting over the given vectors; returns an
/// orthonormal set spanning them (up to `tol`).
pub fn gram_schmidt(vectors: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut pool: Vec<Vec<f64>> = vectors.to_vec();
    loop {
        // Orthogonalize the pool and pick the largest remaining vector.
        for v in pool.iter_mut() {
            for b in &basis {
                let c = dot(v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= c * y;
                }
            }
        }
        let Some((best, norm)) = pool
            .iter()
            .enumerate()
            .map(|(i, v)| (i, dot(v, v).sqrt()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        else {
            break;
        };
        if norm <= tol {
            break;
        }
        let v = pool.swap_remove(best);
        basis.push(v.iter().map(|x| x / norm).collect());
    }
    basis
}

/// Completes an orthonormal set to an orthonormal basis of ℝⁿ using standard
/// basis vectors in lexicographic order.
pub fn complete_orthonormal(partial: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut basis = partial.to_vec();
    for j in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[j] = 1.0;
        for b in &basis {
            let c = dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    assert_eq!(basis.len(), n, "orthonormal completion failed");
    basis
}

/// Float normalization surrogate `A ≈ U · Id_{r,d,m} · Vᵀ`: `U` orthogonal
/// from a Gram–Schmidt basis of the column space, `Vᵀ` the leading rows of
/// `UᵀA` completed to an invertible matrix.
pub fn normal_form_f64(a: &Mat<f64>) -> (Mat<f64>, Mat<f64>, usize) {
    let (d, m) = (a.nrows(), a.ncols());
    let rank = rank_f64(a);
    let scale = a.max_abs_f64();
    let cols: Vec<Vec<f64>> = (0..m).map(|j| a.col_vec(j)).collect();
    let mut col_basis = gram_schmidt(&cols, FLOAT_RANK_RTOL * scale.max(1e-300));
    col_basis.truncate(rank);
    let u_cols = complete_orthonormal(&col_basis, d);
    let u = Mat::from_fn(d, d, |i, j| u_cols[j][i]);
    let b = u.transpose().matmul(a); // rows beyond `rank` are ~0
    let lead: Vec<Vec<f64>> = (0..rank).map(|i| b.row_vec(i)).collect();
    let lead_unit = gram_schmidt(&lead, 0.0);
    let vt_rows = {
        let mut rows = lead;
        let completion = complete_orthonormal(&lead_unit, m);
        rows.extend_from_slice(&completion[rank..]);
        rows
    };
    let vt = Mat::from_rows(vt_rows);
    (u, vt.transpose(), rank)
}

// ---------------------------------------------------------------------------
// Mode dispatch
// ---------------------------------------------------------------------------

/// Field with rank/kernel/solve decisions appropriate for its lane.
pub trait LinScalar: Field {
    fn mat_rank(m: &Mat<Self>) -> usize;
    fn mat_kernel(m: &Mat<Self>) -> Vec<Vec<Self>>;
    fn mat_solve(m: &Mat<Self>, rhs: &[Self]) -> Option<Vec<Self>>;
    fn mat_inverse(m: &Mat<Self>) -> Result<Mat<Self>>;
}

impl LinScalar for Rat {
    fn mat_rank(m: &Mat<Self>) -> usize {
        rank_exact(m)
    }

    fn mat_kernel(m: &Mat<Self>) -> Vec<Vec<Self>> {
        kernel_basis_exact(m)
    }

    fn mat_solve(m: &Mat<Self>, rhs: &[Self]) -> Option<Vec<Self>> {
        solve_exact(m, rhs)
    }

    fn mat_inverse(m: &Mat<Self>) -> Result<Mat<Self>> {
        inverse_exact(m).ok_or(Error::NotInvertible)
    }
}

impl LinScalar for f64 {
    fn mat_rank(m: &Mat<Self>) -> usize {
        rank_f64(m)
    }

    fn mat_kernel(m: &Mat<Self>) -> Vec<Vec<Self>> {
        kernel_basis_f64(m)
    }

    fn mat_solve(m: &Mat<Self>, rhs: &[Self]) -> Option<Vec<Self>> {
        // Least squares, accepted only if it actually solves the system.
        let x = lstsq_f64(m, rhs);
        let residual: f64 = (0..m.nrows())
            .map(|i| (dot(m.row(i), &x) - rhs[i]).abs())
            .fold(0.0, f64::max);
        let scale = m.max_abs_f64().max(rhs.iter().fold(0.0f64, |a, b| a.max(f64::abs(*b))));
        (residual <= 1e-9 * scale.max(1.0)).then_some(x)
    }

    fn mat_inverse(m: &Mat<Self>) -> Result<Mat<Self>> {
        let na = to_na(m);
        na.try_inverse()
            .map(|inv| from_na(&inv))
            .ok_or(Error::NotInvertible)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, ratio};

    /// Independent oracle: plain row-echelon rank without normalization,
    /// deliberately a different code path from `rref_exact`.
    fn echelon_rank_oracle(m: &Mat<Rat>) -> usize {
        let mut rows: Vec<Vec<Rat>> = (0..m.nrows()).map(|i| m.row_vec(i)).collect();
        let mut rank = 0;
        for c in 0..m.ncols() {
            if let Some(p) = (rank..rows.len()).find(|&i| !rows[i][c].is_zero()) {
                rows.swap(rank, p);
                for i in rank + 1..rows.len() {
                    if !rows[i][c].is_zero() {
                        let factor = &rows[i][c] / &rows[rank][c];
                        for j in 0..m.ncols() {
                            let sub = &factor * &rows[rank][j];
                            rows[i][j] = &rows[i][j] - &sub;
                        }
                    }
                }
                rank += 1;
            }
        }
        rank
    }

    fn sample_matrices() -> Vec<Mat<Rat>> {
        vec![
            mat_from_i64(&[&[1, 0], &[0, 1]]),
            mat_from_i64(&[&[1, 2], &[2, 4]]),
            mat_from_i64(&[&[0, 0], &[0, 0]]),
            mat_from_i64(&[&[1, 2, 3], &[4, 5, 6], &[7, 8, 9]]),
            mat_from_i64(&[&[2, 0, 0], &[0, 0, 5]]),
            Mat::from_rows(vec![
                vec![ratio(1, 2), ratio(-3, 7), rat(0)],
                vec![ratio(2, 3), rat(1), ratio(5, 11)],
            ]),
        ]
    }

    #[test]
    fn rank_matches_independent_oracle() {
        for m in sample_matrices() {
            assert_eq!(rank_exact(&m), echelon_rank_oracle(&m), "matrix {m:?}");
            assert_eq!(rank_f64(&m.to_f64()), echelon_rank_oracle(&m));
        }
    }

    #[test]
    fn kernel_vectors_annihilate() {
        for m in sample_matrices() {
            let basis = kernel_basis_exact(&m);
            assert_eq!(basis.len(), m.ncols() - rank_exact(&m));
            for v in &basis {
                assert!(m.mul_vec(v).iter().all(Zero::is_zero));
            }
        }
    }

    #[test]
    fn solve_exact_consistent_and_inconsistent() {
        let m = mat_from_i64(&[&[1, 2], &[2, 4]]);
        let sol = solve_exact(&m, &[rat(3), rat(6)]).unwrap();
        assert_eq!(m.mul_vec(&sol), vec![rat(3), rat(6)]);
        assert!(solve_exact(&m, &[rat(3), rat(7)]).is_none());
    }

    #[test]
    fn inverse_and_det() {
        let m = mat_from_i64(&[&[2, 1], &[1, 1]]);
        let inv = inverse_exact(&m).unwrap();
        assert_eq!(m.matmul(&inv), Mat::identity(2));
        assert_eq!(det_exact(&m), rat(1));
        assert_eq!(det_exact(&mat_from_i64(&[&[1, 2], &[2, 4]])), rat(0));
        assert!(inverse_exact(&mat_from_i64(&[&[1, 2], &[2, 4]])).is_none());
    }

    #[test]
    fn normal_form_reconstructs_exactly() {
        for m in sample_matrices() {
            let (u, v, r) = normal_form_exact(&m);
            assert_eq!(r, rank_exact(&m));
            let id_rdm = Mat::from_fn(m.nrows(), m.ncols(), |i, j| {
                if i == j && i < r {
                    Rat::one()
                } else {
                    Rat::zero()
                }
            });
            assert_eq!(u.matmul(&id_rdm).matmul(&v.transpose()), m);
            assert!(inverse_exact(&u).is_some());
            assert!(inverse_exact(&v).is_some());
        }
    }

    #[test]
    fn normal_form_f64_reconstructs() {
        for m in sample_matrices() {
            let a = m.to_f64();
            let (u, v, r) = normal_form_f64(&a);
            let id_rdm = Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
                if i == j && i < r {
                    1.0
                } else {
                    0.0
                }
            });
            let rec = u.matmul(&id_rdm).matmul(&v.transpose());
            let err = rec.sub(&a).max_abs_f64();
            assert!(
                err <= 1e-12 * a.max_abs_f64().max(1.0),
                "reconstruction error {err}"
            );
        }
    }

    #[test]
    fn lstsq_minimal_norm() {
        // Underdetermined: x + y = 2 has minimal-norm solution (1, 1).
        let m = Mat::from_rows(vec![vec![1.0, 1.0]]);
        let x = lstsq_f64(&m, &[2.0]);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
