//! Operators `A = (A¹,…,Aⁿ)` of d×m matrices: Fourier symbols, wave cones,
//! normal forms, and span equivalence.

use crate::error::{Error, Result};
use crate::linalg::{self, LinScalar, Mat};
use crate::scalar::{Field, Rat};

/// A first-order constant-coefficient operator from ℝᵐ-valued to ℝⁿ-valued
/// fields on ℝᵈ, represented by `n` matrices of shape d×m. Component `k` of
/// the operator acts as `f ↦ Σ_{i,j} Aᵏ_{ij} ∂_i f_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSpec<T> {
    d: usize,
    m: usize,
    n: usize,
    mats: Vec<Mat<T>>,
}

/// Invertible factors of the normal form `A = U · Id_{r,d,m} · Vᵀ`.
#[derive(Clone, Debug)]
pub struct SvdNormalization<T> {
    pub u: Mat<T>,
    pub v: Mat<T>,
    pub rank: usize,
}

impl<T: Field> OperatorSpec<T> {
    pub fn new(mats: Vec<Mat<T>>) -> Result<Self> {
        let n = mats.len();
        if n == 0 {
            return Err(Error::DimMismatch("operator needs at least one matrix".into()));
        }
        let d = mats[0].nrows();
        let m = mats[0].ncols();
        if d == 0 || m == 0 {
            return Err(Error::DimMismatch("operator matrices must be nonempty".into()));
        }
        if mats.iter().any(|a| a.nrows() != d || a.ncols() != m) {
            return Err(Error::DimMismatch(
                "all matrices of an operator must share the shape d×m".into(),
            ));
        }
        Ok(OperatorSpec { d, m, n, mats })
    }

    /// Scalar operator (n = 1) from a single matrix.
    pub fn scalar(a: Mat<T>) -> Self {
        OperatorSpec::new(vec![a]).expect("single-matrix operator")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mats(&self) -> &[Mat<T>] {
        &self.mats
    }

    pub fn mat(&self, k: usize) -> &Mat<T> {
        &self.mats[k]
    }

    pub fn is_scalar(&self) -> bool {
        self.n == 1
    }

    /// The Fourier symbol `ξ ↦ Σ_i ξ_i Mⁱ` as an n×m matrix, where
    /// `Mⁱ_{kj} = Aᵏ_{ij}`. Row `k` equals `ξᵀ Aᵏ`.
    pub fn fourier_symbol(&self, xi: &[T]) -> Result<Mat<T>> {
        if xi.len() != self.d {
            return Err(Error::DimMismatch(format!(
                "frequency vector has length {}, expected d = {}",
                xi.len(),
                self.d
            )));
        }
        Ok(Mat::from_fn(self.n, self.m, |k, j| {
            let mut acc = T::zero();
            for i in 0..self.d {
                acc = acc + xi[i].clone() * self.mats[k][(i, j)].clone();
            }
            acc
        }))
    }

    /// The d-column stack `[A¹f; …; Aⁿf]` as an n×d matrix (row k is `Aᵏf`).
    pub fn apply_stack(&self, f: &[T]) -> Result<Mat<T>> {
        if f.len() != self.m {
            return Err(Error::DimMismatch(format!(
                "vector has length {}, expected m = {}",
                f.len(),
                self.m
            )));
        }
        Ok(Mat::from_rows(
            self.mats.iter().map(|a| a.mul_vec(f)).collect(),
        ))
    }

    /// All matrices flattened row-major into an n×(d·m) stack.
    pub fn span_stack(&self) -> Mat<T> {
        Mat::from_rows(self.mats.iter().map(Mat::flatten).collect())
    }

    pub fn to_f64(&self) -> OperatorSpec<f64> {
        OperatorSpec {
            d: self.d,
            m: self.m,
            n: self.n,
            mats: self.mats.iter().map(Mat::to_f64).collect(),
        }
    }
}

impl<T: LinScalar> OperatorSpec<T> {
    /// Wave-cone membership: `f ∈ Λ_A` iff some direction `e ∈ S^{d-1}` is
    /// orthogonal to every `Aᵏf`, i.e. iff `rank [A¹f; …; Aⁿf] < d`.
    pub fn wave_cone_contains(&self, f: &[T]) -> Result<bool> {
        let stack = self.apply_stack(f)?;
        Ok(T::mat_rank(&stack) < self.d)
    }

    /// Span equivalence of two operators as subspaces of ℝ^{d·m}.
    pub fn equivalent(&self, other: &OperatorSpec<T>) -> Result<bool> {
        if self.d != other.d || self.m != other.m {
            return Err(Error::DimMismatch(
                "operators on different spaces cannot be compared".into(),
            ));
        }
        let a = self.span_stack();
        let b = other.span_stack();
        let ra = T::mat_rank(&a);
        let rb = T::mat_rank(&b);
        Ok(ra == rb && T::mat_rank(&a.vstack(&b)) == ra)
    }

    /// Recombined operator `Bᵏ = Σ_i C_{ki} Aⁱ`; `C` must be n×n invertible
    /// for the result to be span-equivalent.
    pub fn recombine(&self, c: &Mat<T>) -> Result<OperatorSpec<T>> {
        if c.nrows() != self.n || c.ncols() != self.n {
            return Err(Error::DimMismatch("recombination matrix must be n×n".into()));
        }
        let mats = (0..self.n)
            .map(|k| {
                let mut acc = Mat::zeros(self.d, self.m);
                for i in 0..self.n {
                    acc = acc.add(&self.mats[i].scale(&c[(k, i)]));
                }
                acc
            })
            .collect();
        OperatorSpec::new(mats)
    }
}

impl OperatorSpec<Rat> {
    /// Rank of a scalar operator's matrix, exactly.
    pub fn rank(&self) -> usize {
        linalg::rank_exact(&self.mats[0])
    }
}

/// Basis of the scalar one-dimensional wave cone
/// `Λ¹_A = {x : Ax·ξ = 0 for all ξ} = ker A`.
pub fn ell1_wave_cone_scalar<T: LinScalar>(a: &Mat<T>) -> Vec<Vec<T>> {
    T::mat_kernel(a)
}

/// Normalization `A = U · Id_{r,d,m} · Vᵀ`. Exact elimination in the
/// rational lane; a Gram–Schmidt surrogate with the SVD rank in the float
/// lane, certified by the reconstruction check either way.
pub fn svd_normalize(a: &Mat<Rat>) -> SvdNormalization<Rat> {
    let (u, v, rank) = linalg::normal_form_exact(a);
    SvdNormalization { u, v, rank }
}

pub fn svd_normalize_f64(a: &Mat<f64>) -> SvdNormalization<f64> {
    let (u, v, rank) = linalg::normal_form_f64(a);
    SvdNormalization { u, v, rank }
}

/// `Id_{r,d,m}`: the d×m block matrix with an r×r identity in the corner.
pub fn id_rdm<T: Field>(r: usize, d: usize, m: usize) -> Mat<T> {
    Mat::from_fn(d, m, |i, j| {
        if i == j && i < r {
            T::one()
        } else {
            T::zero()
        }
    })
}

// ---------------------------------------------------------------------------
// Stock operators
// ---------------------------------------------------------------------------

/// Divergence on ℝᵈ-valued fields: the scalar operator with matrix `Id_d`.
pub fn divergence<T: Field>(d: usize) -> OperatorSpec<T> {
    OperatorSpec::scalar(Mat::identity(d))
}

/// Gradient on scalar fields over ℝᵈ (m = 1, n = d); elliptic, so its wave
/// cone is trivial.
pub fn gradient<T: Field>(d: usize) -> OperatorSpec<T> {
    let mats = (0..d)
        .map(|k| Mat::from_fn(d, 1, |i, _| if i == k { T::one() } else { T::zero() }))
        .collect();
    OperatorSpec::new(mats).expect("gradient operator")
}

/// The pair (div, curl) on plane fields (d = m = n = 2); elliptic.
pub fn div_curl_2d<T: Field>() -> OperatorSpec<T> {
    let div = Mat::identity(2);
    // curl f = ∂₁f₂ − ∂₂f₁
    let mut curl = Mat::zeros(2, 2);
    curl[(0, 1)] = T::one();
    curl[(1, 0)] = T::zero() - T::one();
    OperatorSpec::new(vec![div, curl]).expect("div-curl operator")
}

/// Divergence on symmetric 2×2 matrix fields, components ordered
/// (f₁₁, f₁₂, f₂₂); the recorded example of a nontrivial operator with no
/// witness certificate.
pub fn symmetric_divergence_2d<T: Field>() -> OperatorSpec<T> {
    let one = T::one;
    let zero = T::zero;
    let a1 = Mat::from_rows(vec![
        vec![one(), zero(), zero()],
        vec![zero(), one(), zero()],
    ]);
    let a2 = Mat::from_rows(vec![
        vec![zero(), one(), zero()],
        vec![zero(), zero(), one()],
    ]);
    OperatorSpec::new(vec![a1, a2]).expect("symmetric divergence operator")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat_from_i64;
    use crate::scalar::rat;

    #[test]
    fn symbol_of_divergence() {
        let op = divergence::<Rat>(3);
        let sym = op
            .fourier_symbol(&[rat(1), rat(0), rat(0)])
            .unwrap();
        assert_eq!(sym, mat_from_i64(&[&[1, 0, 0]]));
        let zero = op.fourier_symbol(&vec![rat(0); 3]).unwrap();
        assert!(zero.is_zero());
    }

    #[test]
    fn symbol_of_gradient_is_column() {
        // Derived by expanding Σ_i ξ_i Mⁱ: for the gradient in ℝ²,
        // M¹ = (1,0)ᵀ-ish and the symbol at ξ = (a,b) is the column (a,b)ᵀ.
        let op = gradient::<Rat>(2);
        let sym = op.fourier_symbol(&[rat(3), rat(-5)]).unwrap();
        assert_eq!(sym, mat_from_i64(&[&[3], &[-5]]));
    }

    #[test]
    fn symbol_is_linear_in_xi() {
        let op = div_curl_2d::<Rat>();
        let xi = [rat(2), rat(-1)];
        let zeta = [rat(1), rat(4)];
        let combo: Vec<Rat> = xi
            .iter()
            .zip(&zeta)
            .map(|(a, b)| rat(3) * a.clone() + rat(-2) * b.clone())
            .collect();
        let lhs = op.fourier_symbol(&combo).unwrap();
        let rhs = op
            .fourier_symbol(&xi)
            .unwrap()
            .scale(&rat(3))
            .add(&op.fourier_symbol(&zeta).unwrap().scale(&rat(-2)));
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn wave_cone_divergence_and_gradient() {
        // Divergence in ℝ³: the stack [f] has rank ≤ 1 < 3, every f is in.
        let div3 = divergence::<Rat>(3);
        assert!(div3.wave_cone_contains(&[rat(1), rat(2), rat(3)]).unwrap());
        assert!(div3.wave_cone_contains(&vec![rat(0); 3]).unwrap());
        // Gradient is elliptic: only 0 is in the cone.
        let grad = gradient::<Rat>(3);
        assert!(!grad.wave_cone_contains(&[rat(1)]).unwrap());
        assert!(grad.wave_cone_contains(&[rat(0)]).unwrap());
        // (div, curl) in 2d is elliptic as well.
        let dc = div_curl_2d::<Rat>();
        assert!(!dc.wave_cone_contains(&[rat(1), rat(1)]).unwrap());
    }

    #[test]
    fn scalar_ell1_cone_is_kernel() {
        assert!(ell1_wave_cone_scalar::<Rat>(&Mat::identity(3)).is_empty());
        let zero = Mat::<Rat>::zeros(3, 2);
        assert_eq!(ell1_wave_cone_scalar(&zero).len(), 2);
        // rank-1 e₁f₁ᵀ in ℝ^{3×2}: kernel spanned by f₂
        let a = mat_from_i64(&[&[1, 0], &[0, 0], &[0, 0]]);
        let basis = ell1_wave_cone_scalar(&a);
        assert_eq!(basis.len(), 1);
        assert_eq!(basis[0], vec![rat(0), rat(1)]);
    }

    #[test]
    fn normalize_identity_block_is_fixed_point() {
        let a = id_rdm::<Rat>(2, 3, 4);
        let nf = svd_normalize(&a);
        assert_eq!(nf.rank, 2);
        let rec = nf
            .u
            .matmul(&id_rdm(nf.rank, 3, 4))
            .matmul(&nf.v.transpose());
        assert_eq!(rec, a);
    }

    #[test]
    fn normalize_scaled_identity() {
        let a = mat_from_i64(&[&[2, 0], &[0, 2]]);
        let nf = svd_normalize(&a);
        assert_eq!(nf.rank, 2);
        let rec = nf
            .u
            .matmul(&id_rdm(2, 2, 2))
            .matmul(&nf.v.transpose());
        assert_eq!(rec, a);
    }

    #[test]
    fn normalize_zero_matrix() {
        let a = Mat::<Rat>::zeros(2, 3);
        let nf = svd_normalize(&a);
        assert_eq!(nf.rank, 0);
        let rec = nf
            .u
            .matmul(&id_rdm(0, 2, 3))
            .matmul(&nf.v.transpose());
        assert_eq!(rec, a);
    }

    #[test]
    fn equivalence_by_recombination_and_scaling() {
        let op = div_curl_2d::<Rat>();
        let c = mat_from_i64(&[&[1, 1], &[1, -1]]);
        let recombined = op.recombine(&c).unwrap();
        assert!(op.equivalent(&recombined).unwrap());
        let scaled = OperatorSpec::scalar(Mat::<Rat>::identity(2).scale(&rat(2)));
        assert!(divergence::<Rat>(2).equivalent(&scaled).unwrap());
    }

    #[test]
    fn rotation_is_not_equivalent_to_identity() {
        let id = OperatorSpec::scalar(Mat::<Rat>::identity(2));
        let rot = OperatorSpec::scalar(mat_from_i64(&[&[0, -1], &[1, 0]]));
        assert!(!id.equivalent(&rot).unwrap());
    }

    #[test]
    fn wave_cone_agrees_across_equivalent_operators() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let op = symmetric_divergence_2d::<Rat>();
        let c = mat_from_i64(&[&[2, 1], &[1, 1]]);
        let op2 = op.recombine(&c).unwrap();
        assert!(op.equivalent(&op2).unwrap());
        for _ in 0..100 {
            let f: Vec<Rat> = (0..3).map(|_| rat(rng.random_range(-6..=6))).collect();
            assert_eq!(
                op.wave_cone_contains(&f).unwrap(),
                op2.wave_cone_contains(&f).unwrap()
            );
        }
    }
}
