//! Certificates for the algebraic balanceability condition on operator
//! tuples, their verifier, constructors for the scalar and worked cases, and
//! a best-effort randomized search.
//!
//! A witness fixes a basis of ℝᵐ and, for each basis vector `f`, a
//! recombination `B = C·A` of the operator, an integer `p`, a unit vector
//! `e`, and vectors `g₁,…,gₙ` such that
//!
//!   1. `(B¹f,…,Bᵖf)` is orthonormal and `Bᵏf = 0` for `k > p`;
//!   2. `Bᵏgₖ = e` for `k ≤ p`;
//!   3. `Bˡgₖ ∈ span(B¹f,…,Bᵖf)` for `ℓ ≠ k`;
//!   4. `Bˡgₖ·Bʰf = −Bˡg_h·Bᵏf` for all `ℓ,h,k`.
//!
//! Unit-norm data is stored in scaled form `√rad · (rational vector)` so the
//! rational lane verifies every relation with tolerance zero even when the
//! norms involved are irrational.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use num::traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::linalg::{self, LinScalar, Mat};
use crate::operator::OperatorSpec;
use crate::scalar::{f64_to_rat, rat, Field, Quad, Rat, ScaledVec};

/// Per-basis-vector certificate data. Row `k` of `c` together with the
/// radicand `c_rads[k]` defines `Bᵏ = √c_rads[k] · Σ_i c[(k,i)] Aⁱ`.
#[derive(Clone, Debug, PartialEq)]
pub struct WitnessFragment<T> {
    pub c: Mat<T>,
    pub c_rads: Vec<T>,
    pub p: usize,
    pub e: ScaledVec<T>,
    pub g: Vec<ScaledVec<T>>,
}

/// A full certificate: one fragment per basis vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness<T> {
    pub basis: Vec<Vec<T>>,
    pub fragments: Vec<WitnessFragment<T>>,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub max_violation: f64,
}

/// Outcome of running every verifier check; passes iff all checks pass.
#[derive(Clone, Debug)]
pub struct WitnessReport {
    pub checks: Vec<CheckResult>,
}

impl WitnessReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn max_violation(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_violation)
            .fold(0.0, f64::max)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed_names(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name)
            .collect()
    }
}

struct CheckAccum {
    name: &'static str,
    pass: bool,
    max: f64,
}

impl CheckAccum {
    fn new(name: &'static str) -> Self {
        CheckAccum {
            name,
            pass: true,
            max: 0.0,
        }
    }

    fn record(&mut self, ok: bool, violation: f64) {
        if !ok {
            self.pass = false;
        }
        if violation.abs() > self.max {
            self.max = violation.abs();
        }
    }

    fn into_result(self) -> CheckResult {
        CheckResult {
            name: self.name,
            pass: self.pass,
            max_violation: self.max,
        }
    }
}

fn structural_check<T: Field>(op: &OperatorSpec<T>, w: &Witness<T>) -> Result<()> {
    let (m, n, d) = (op.m(), op.n(), op.d());
    if w.basis.len() != m || w.fragments.len() != m {
        return Err(Error::DimMismatch(format!(
            "witness needs {m} basis vectors and fragments, got {} and {}",
            w.basis.len(),
            w.fragments.len()
        )));
    }
    for (i, (b, frag)) in w.basis.iter().zip(&w.fragments).enumerate() {
        if b.len() != m {
            return Err(Error::DimMismatch(format!(
                "basis vector {i} has wrong length"
            )));
        }
        if frag.c.nrows() != n || frag.c.ncols() != n || frag.c_rads.len() != n {
            return Err(Error::DimMismatch(format!("fragment {i}: C must be n×n")));
        }
        if frag.p > n.min(d) {
            return Err(Error::Precondition(format!(
                "fragment {i}: p = {} exceeds min(n, d) = {}",
                frag.p,
                n.min(d)
            )));
        }
        if frag.e.len() != d {
            return Err(Error::DimMismatch(format!(
                "fragment {i}: e must live in ℝᵈ"
            )));
        }
        if frag.g.len() != n || frag.g.iter().any(|g| g.len() != m) {
            return Err(Error::DimMismatch(format!(
                "fragment {i}: needs n vectors g in ℝᵐ"
            )));
        }
    }
    Ok(())
}

fn rat_dot(a: &[Rat], b: &[Rat]) -> Rat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x * y)
        .fold(Rat::zero(), |acc, t| acc + t)
}

struct Accums {
    frame: CheckAccum,
    e_unit: CheckAccum,
    eq_a: CheckAccum,
    eq_b: CheckAccum,
    eq_c: CheckAccum,
    cons_1: CheckAccum,
    cons_2: CheckAccum,
    e_perp: CheckAccum,
}

impl Accums {
    fn new() -> Self {
        Accums {
            frame: CheckAccum::new("frame_orthonormal"),
            e_unit: CheckAccum::new("e_unit"),
            eq_a: CheckAccum::new("eq_a"),
            eq_b: CheckAccum::new("eq_b"),
            eq_c: CheckAccum::new("eq_c"),
            cons_1: CheckAccum::new("cons_1"),
            cons_2: CheckAccum::new("cons_2"),
            e_perp: CheckAccum::new("e_perp_bf"),
        }
    }

    fn into_checks(self) -> Vec<CheckResult> {
        vec![
            self.frame.into_result(),
            self.e_unit.into_result(),
            self.eq_a.into_result(),
            self.eq_b.into_result(),
            self.eq_c.into_result(),
            self.cons_1.into_result(),
            self.cons_2.into_result(),
            self.e_perp.into_result(),
        ]
    }
}

/// Exact verification; every relation is checked with tolerance zero.
/// `tol` mirrors the float verifier's signature and must be zero here.
pub fn verify_witness(
    op: &OperatorSpec<Rat>,
    w: &Witness<Rat>,
    tol: f64,
) -> Result<WitnessReport> {
    if tol != 0.0 {
        return Err(Error::Precondition(
            "rational-mode verification requires tol = 0".into(),
        ));
    }
    structural_check(op, w)?;

    let mut basis_spans = CheckAccum::new("basis_spans");
    let basis_mat = Mat::from_rows(w.basis.clone());
    basis_spans.record(linalg::rank_exact(&basis_mat) == op.m(), 1.0);

    let mut acc = Accums::new();
    for (f, frag) in w.basis.iter().zip(&w.fragments) {
        fragment_checks_exact(op, f, frag, &mut acc)?;
    }

    let mut checks = vec![basis_spans.into_result()];
    checks.extend(acc.into_checks());
    Ok(WitnessReport { checks })
}

/// Runs the per-direction checks of one fragment in isolation.
pub fn verify_fragment(
    op: &OperatorSpec<Rat>,
    f: &[Rat],
    frag: &WitnessFragment<Rat>,
) -> Result<WitnessReport> {
    let mut acc = Accums::new();
    fragment_checks_exact(op, f, frag, &mut acc)?;
    Ok(WitnessReport {
        checks: acc.into_checks(),
    })
}

fn fragment_checks_exact(
    op: &OperatorSpec<Rat>,
    f: &[Rat],
    frag: &WitnessFragment<Rat>,
    acc: &mut Accums,
) -> Result<()> {
    let n = op.n();
    let Accums {
        frame,
        e_unit,
        eq_a,
        eq_b,
        eq_c,
        cons_1,
        cons_2,
        e_perp,
    } = acc;
    {
        for rad in &frag.c_rads {
            if rad.is_negative() || rad.is_zero() {
                return Err(Error::Precondition(
                    "row radicands must be positive".into(),
                ));
            }
        }
        if linalg::rank_exact(&frag.c) < n {
            return Err(Error::NotInvertible);
        }
        let p = frag.p;
        let b0: Vec<Mat<Rat>> = (0..n)
            .map(|k| {
                let mut acc = Mat::zeros(op.d(), op.m());
                for i in 0..n {
                    acc = acc.add(&op.mat(i).scale(&frag.c[(k, i)]));
                }
                acc
            })
            .collect();
        let bf: Vec<ScaledVec<Rat>> = (0..n)
            .map(|k| ScaledVec {
                v: b0[k].mul_vec(f),
                rad: frag.c_rads[k].clone(),
            })
            .collect();
        let bg = |l: usize, k: usize| ScaledVec {
            v: b0[l].mul_vec(&frag.g[k].v),
            rad: &frag.c_rads[l] * &frag.g[k].rad,
        };

        // Point 1: orthonormal leading frame, zero tail.
        for k in 0..p {
            for l in k..p {
                let d = bf[k].dot_exact(&bf[l]);
                let target = if k == l {
                    Quad::from_rat(rat(1))
                } else {
                    Quad::zero()
                };
                let ok = d == target;
                frame.record(ok, d.to_f64() - if k == l { 1.0 } else { 0.0 });
            }
        }
        for bfk in bf.iter().skip(p) {
            let ok = bfk.is_zero_vec();
            let viol = if ok {
                0.0
            } else {
                bfk.to_f64_vec().iter().map(|x| x.abs()).fold(0.0, f64::max)
            };
            frame.record(ok, viol);
        }

        if p >= 1 {
            let nsq = frag.e.norm_sq_exact();
            e_unit.record(nsq == Rat::one(), nsq.to_f64() - 1.0);
        }

        // (a): Bᵏgₖ = e for k ≤ p.
        for k in 0..p {
            let lhs = bg(k, k);
            let ok = lhs.equals_exact(&frag.e);
            let viol = if ok {
                0.0
            } else {
                lhs.to_f64_vec()
                    .iter()
                    .zip(frag.e.to_f64_vec())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            };
            eq_a.record(ok, viol);
        }

        // (b): Bˡgₖ ∈ span(B¹f,…,Bᵖf) for ℓ ≠ k. The projection residual is
        // a rational multiple of the vector's own radicand, so the exact test
        // only needs the rational parts.
        for k in 0..n {
            for l in 0..n {
                if l == k {
                    continue;
                }
                let v = bg(l, k);
                let mut resid = v.v.clone();
                for bfh in bf.iter().take(p) {
                    let coeff = &rat_dot(&v.v, &bfh.v) * &bfh.rad;
                    for (r, u) in resid.iter_mut().zip(&bfh.v) {
                        *r = &*r - &(&coeff * u);
                    }
                }
                let ok = v.rad.is_zero() || resid.iter().all(Zero::is_zero);
                let viol = if ok {
                    0.0
                } else {
                    let s = v.rad.to_f64().sqrt();
                    resid
                        .iter()
                        .map(|x| (x.to_f64() * s).abs())
                        .fold(0.0, f64::max)
                };
                eq_b.record(ok, viol);
            }
        }

        // (c): Bˡgₖ·Bʰf = −Bˡg_h·Bᵏf for all ℓ,h,k. The two sides may carry
        // different radicands, so this is an equality of scaled scalars.
        for l in 0..n {
            for k in 0..n {
                for h in 0..n {
                    let t1 = bg(l, k).dot_exact(&bf[h]);
                    let t2 = bg(l, h).dot_exact(&bf[k]);
                    let ok = t1 == t2.neg();
                    eq_c.record(ok, if ok { 0.0 } else { t1.to_f64() + t2.to_f64() });
                }
            }
        }

        // Redundant consequences, kept as cross-validation.
        for l in 0..n {
            for k in 0..n {
                let d1 = bg(l, k).dot_exact(&bf[k]);
                cons_1.record(d1.is_zero(), d1.to_f64());
            }
        }
        for k in 0..p {
            for h in 0..n {
                let d2 = bg(k, h).dot_exact(&bf[k]);
                cons_2.record(d2.is_zero(), d2.to_f64());
            }
        }
        for bfk in &bf {
            let d3 = frag.e.dot_exact(bfk);
            e_perp.record(d3.is_zero(), d3.to_f64());
        }
    }
    Ok(())
}

/// Float verification of the same relations, violations measured against
/// `tol`.
pub fn verify_witness_f64(
    op: &OperatorSpec<f64>,
    w: &Witness<f64>,
    tol: f64,
) -> Result<WitnessReport> {
    structural_check(op, w)?;
    let n = op.n();

    let mut basis_spans = CheckAccum::new("basis_spans");
    let mut frame = CheckAccum::new("frame_orthonormal");
    let mut e_unit = CheckAccum::new("e_unit");
    let mut eq_a = CheckAccum::new("eq_a");
    let mut eq_b = CheckAccum::new("eq_b");
    let mut eq_c = CheckAccum::new("eq_c");
    let mut cons_1 = CheckAccum::new("cons_1");
    let mut cons_2 = CheckAccum::new("cons_2");
    let mut e_perp = CheckAccum::new("e_perp_bf");

    let basis_mat = Mat::from_rows(w.basis.clone());
    basis_spans.record(linalg::rank_f64(&basis_mat) == op.m(), 1.0);

    for (f, frag) in w.basis.iter().zip(&w.fragments) {
        if linalg::rank_f64(&frag.c) < n {
            return Err(Error::NotInvertible);
        }
        let p = frag.p;
        let b: Vec<Mat<f64>> = (0..n)
            .map(|k| {
                let scale = frag.c_rads[k].sqrt();
                let mut acc = Mat::zeros(op.d(), op.m());
                for i in 0..n {
                    acc = acc.add(&op.mat(i).scale(&(frag.c[(k, i)] * scale)));
                }
                acc
            })
            .collect();
        let e: Vec<f64> = frag.e.to_f64_vec();
        let gs: Vec<Vec<f64>> = frag.g.iter().map(ScaledVec::to_f64_vec).collect();
        let bf: Vec<Vec<f64>> = (0..n).map(|k| b[k].mul_vec(f)).collect();
        let bg: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|l| (0..n).map(|k| b[l].mul_vec(&gs[k])).collect())
            .collect();

        for k in 0..n {
            if k < p {
                for l in k..p {
                    let dot = linalg::dot(&bf[k], &bf[l]);
                    let target = if k == l { 1.0 } else { 0.0 };
                    frame.record((dot - target).abs() <= tol, dot - target);
                }
            } else {
                let mag = bf[k].iter().map(|x| x.abs()).fold(0.0, f64::max);
                frame.record(mag <= tol, mag);
            }
        }
        if p >= 1 {
            let nsq = linalg::dot(&e, &e);
            e_unit.record((nsq - 1.0).abs() <= tol, nsq - 1.0);
        }
        for k in 0..p {
            let viol = bg[k][k]
                .iter()
                .zip(&e)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            eq_a.record(viol <= tol, viol);
        }
        for k in 0..n {
            for l in 0..n {
                if l == k {
                    continue;
                }
                let mut resid = bg[l][k].clone();
                for bfh in bf.iter().take(p) {
                    let c = linalg::dot(&resid, bfh);
                    for (r, u) in resid.iter_mut().zip(bfh) {
                        *r -= c * u;
                    }
                }
                let mag = resid.iter().map(|x| x.abs()).fold(0.0, f64::max);
                eq_b.record(mag <= tol, mag);
            }
        }
        for l in 0..n {
            for k in 0..n {
                for h in 0..n {
                    let s = linalg::dot(&bg[l][k], &bf[h]) + linalg::dot(&bg[l][h], &bf[k]);
                    eq_c.record(s.abs() <= tol, s);
                }
            }
        }
        for l in 0..n {
            for k in 0..n {
                let d1 = linalg::dot(&bg[l][k], &bf[k]);
                cons_1.record(d1.abs() <= tol, d1);
            }
        }
        for k in 0..p {
            for h in 0..n {
                let d2 = linalg::dot(&bg[k][h], &bf[k]);
                cons_2.record(d2.abs() <= tol, d2);
            }
        }
        for bfk in &bf {
            let d3 = linalg::dot(&e, bfk);
            e_perp.record(d3.abs() <= tol, d3);
        }
    }

    Ok(WitnessReport {
        checks: vec![
            basis_spans.into_result(),
            frame.into_result(),
            e_unit.into_result(),
            eq_a.into_result(),
            eq_b.into_result(),
            eq_c.into_result(),
            cons_1.into_result(),
            cons_2.into_result(),
            e_perp.into_result(),
        ],
    })
}

// ---------------------------------------------------------------------------
// Scalar operators
// ---------------------------------------------------------------------------

/// Scalar operators admit a witness iff `rank A = 0` or `rank A ≥ 2`.
pub fn scalar_condition_decision<T: LinScalar>(a: &Mat<T>) -> bool {
    T::mat_rank(a) != 1
}

/// Constructs a full witness over the standard basis for a scalar operator,
/// or `None` when `rank A = 1` (no witness exists).
///
/// For a basis vector with `Af ≠ 0` the recombination is `B = A/|Af|`
/// (stored exactly through the radicand `1/|Af|²`), `e` is the first column
/// of `A` with a nonzero part orthogonal to `Af`, Gram–Schmidt projected and
/// normalized, and `g₁` solves the linear system with free variables zero.
pub fn scalar_witness(a: &Mat<Rat>) -> Option<Witness<Rat>> {
    let r = linalg::rank_exact(a);
    if r == 1 {
        return None;
    }
    let (d, m) = (a.nrows(), a.ncols());
    let basis: Vec<Vec<Rat>> = (0..m)
        .map(|j| {
            let mut v = vec![Rat::zero(); m];
            v[j] = Rat::one();
            v
        })
        .collect();
    let fragments = basis
        .iter()
        .map(|f| {
            let u = a.mul_vec(f);
            if u.iter().all(Zero::is_zero) {
                return WitnessFragment {
                    c: Mat::identity(1),
                    c_rads: vec![Rat::one()],
                    p: 0,
                    e: ScaledVec::zeros(d),
                    g: vec![ScaledVec::zeros(m)],
                };
            }
            let u_sq = rat_dot(&u, &u);
            // First column of A with a nonzero component orthogonal to u.
            let z = (0..m)
                .map(|j| {
                    let col = a.col_vec(j);
                    let coeff = &rat_dot(&col, &u) / &u_sq;
                    col.iter()
                        .zip(&u)
                        .map(|(x, y)| x - &(&coeff * y))
                        .collect::<Vec<Rat>>()
                })
                .find(|z| z.iter().any(|c| !c.is_zero()))
                .expect("rank >= 2 guarantees a direction orthogonal to Af");
            let z_sq = rat_dot(&z, &z);
            // g₁ = √(|u|²/|z|²)·w with Aw = z, so (A/|u|)g₁ = z/|z| = e.
            let w = linalg::solve_exact(a, &z).expect("z lies in the column space");
            WitnessFragment {
                c: Mat::identity(1),
                c_rads: vec![u_sq.clone().recip()],
                p: 1,
                e: ScaledVec {
                    v: z,
                    rad: z_sq.clone().recip(),
                },
                g: vec![ScaledVec {
                    v: w,
                    rad: &u_sq / &z_sq,
                }],
            }
        })
        .collect();
    Some(Witness { basis, fragments })
}

/// Float variant of [`scalar_witness`] (minimal-norm solve for `g₁`).
pub fn scalar_witness_f64(a: &Mat<f64>) -> Option<Witness<f64>> {
    let r = linalg::rank_f64(a);
    if r == 1 {
        return None;
    }
    let (d, m) = (a.nrows(), a.ncols());
    let basis: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut v = vec![0.0; m];
            v[j] = 1.0;
            v
        })
        .collect();
    let scale = a.max_abs_f64();
    let fragments = basis
        .iter()
        .map(|f| {
            let u = a.mul_vec(f);
            let u_norm = linalg::dot(&u, &u).sqrt();
            if u_norm <= 1e-10 * scale.max(1.0) {
                return WitnessFragment {
                    c: Mat::identity(1),
                    c_rads: vec![1.0],
                    p: 0,
                    e: ScaledVec::zeros(d),
                    g: vec![ScaledVec::zeros(m)],
                };
            }
            let z = (0..m)
                .map(|j| {
                    let col = a.col_vec(j);
                    let coeff = linalg::dot(&col, &u) / (u_norm * u_norm);
                    col.iter()
                        .zip(&u)
                        .map(|(x, y)| x - coeff * y)
                        .collect::<Vec<f64>>()
                })
                .max_by(|a, b| linalg::dot(a, a).partial_cmp(&linalg::dot(b, b)).unwrap())
                .expect("nonempty columns");
            let z_norm = linalg::dot(&z, &z).sqrt();
            let e: Vec<f64> = z.iter().map(|x| x / z_norm).collect();
            let rhs: Vec<f64> = z.iter().map(|x| x * u_norm / z_norm).collect();
            let g1 = linalg::lstsq_f64(a, &rhs);
            WitnessFragment {
                c: Mat::new(1, 1, vec![1.0 / u_norm]),
                c_rads: vec![1.0],
                p: 1,
                e: ScaledVec::plain(e),
                g: vec![ScaledVec::plain(g1)],
            }
        })
        .collect();
    Some(Witness { basis, fragments })
}

// ---------------------------------------------------------------------------
// Worked vector-valued example
// ---------------------------------------------------------------------------

/// The d=3, m=5, n=2 operator with a hand-checkable witness over the
/// standard basis; its wave cone is all of ℝ⁵.
pub fn example55_witness() -> (OperatorSpec<Rat>, Witness<Rat>) {
    let a1 = linalg::mat_from_i64(&[
        &[1, 0, 0, 0, 0],
        &[0, 0, 0, 0, 1],
        &[0, 0, 1, 0, 0],
    ]);
    let a2 = linalg::mat_from_i64(&[
        &[0, 0, 0, 1, 0],
        &[1, 0, 0, 0, 0],
        &[0, 1, 0, 0, 0],
    ]);
    let op = OperatorSpec::new(vec![a1, a2]).expect("example operator");

    let m = 5;
    let basis: Vec<Vec<Rat>> = (0..m)
        .map(|j| {
            let mut v = vec![Rat::zero(); m];
            v[j] = Rat::one();
            v
        })
        .collect();

    let id2 = Mat::<Rat>::identity(2);
    let swap = linalg::mat_from_i64(&[&[0, 1], &[1, 0]]);
    let e_vec = |i: usize| {
        let mut v = vec![Rat::zero(); 3];
        v[i] = Rat::one();
        ScaledVec::plain(v)
    };
    let f_vec = |i: usize| {
        let mut v = vec![Rat::zero(); m];
        v[i] = Rat::one();
        ScaledVec::plain(v)
    };
    let zero_g = ScaledVec::zeros(m);

    // Indices zero-based. First fragment: B¹=A¹, B²=A², g₁=f₃, g₂=f₂, e=e₃;
    // second: B¹=A², B²=A¹, g₁=f₄, e=e₁; the rest follow the same pattern
    // with the unique column of A¹/A² that keeps relation 3 inside the frame.
    let fragments = vec![
        WitnessFragment {
            c: id2.clone(),
            c_rads: vec![Rat::one(); 2],
            p: 2,
            e: e_vec(2),
            g: vec![f_vec(2), f_vec(1)],
        },
        WitnessFragment {
            c: swap.clone(),
            c_rads: vec![Rat::one(); 2],
            p: 1,
            e: e_vec(0),
            g: vec![f_vec(3), zero_g.clone()],
        },
        WitnessFragment {
            c: id2.clone(),
            c_rads: vec![Rat::one(); 2],
            p: 1,
            e: e_vec(1),
            g: vec![f_vec(4), zero_g.clone()],
        },
        WitnessFragment {
            c: swap,
            c_rads: vec![Rat::one(); 2],
            p: 1,
            e: e_vec(2),
            g: vec![f_vec(1), zero_g.clone()],
        },
        WitnessFragment {
            c: id2,
            c_rads: vec![Rat::one(); 2],
            p: 1,
            e: e_vec(2),
            g: vec![f_vec(2), zero_g],
        },
    ];
    (op, Witness { basis, fragments })
}

/// Divergence on symmetric 2×2 matrix fields: the recorded operator that
/// provably has no certificate; the expected search outcome is `NotFound`.
pub fn sym_div_negative_fixture() -> (OperatorSpec<Rat>, &'static str) {
    (
        crate::operator::symmetric_divergence_2d(),
        "divergence on symmetric 2x2 fields admits no certificate: the shared \
         rank-2 and combined antisymmetry relations are inconsistent in d = 2",
    )
}

// ---------------------------------------------------------------------------
// Heuristic search
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum SearchOutcome {
    /// Exact reconstruction passed the rational verifier.
    Found(Witness<Rat>),
    /// Passes the float verifier at `1e-8`; exact reconstruction failed.
    FoundFloat(Witness<f64>),
    /// Inconclusive (never a proof of nonexistence).
    NotFound(NotFoundReason),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NotFoundReason {
    /// The detected wave cone does not span ℝᵐ, so no witness can exist.
    WaveConeSpanDeficient,
    /// The trial budget ran out.
    Exhausted,
}

pub const SEARCH_FLOAT_TOL: f64 = 1e-8;

/// Randomized best-effort witness search.
///
/// The wave cone is probed first: every certified direction must lie in it,
/// so detected members failing to span ℝᵐ short-circuit the search. Each
/// basis direction is then attacked independently: `p` is forced to
/// `rank [A¹f … Aⁿf]`, a trial draws an orthonormal frame of that range and
/// a unit `e` from its complement, and the remaining relations become a
/// linear system in `g₁,…,g_p` solved by least squares. Every candidate is
/// re-verified; nothing is trusted from the solve alone. `NotFound` is
/// inconclusive.
pub fn heuristic_witness_search(
    op: &OperatorSpec<Rat>,
    trials: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if trials == 0 {
        return Err(Error::Precondition("trials must be at least 1".into()));
    }
    let m = op.m();

    // Wave-cone span probe with exact membership tests.
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x57a7e_c04e);
    let mut candidates: Vec<Vec<Rat>> = Vec::new();
    for j in 0..m {
        let mut v = vec![Rat::zero(); m];
        v[j] = Rat::one();
        candidates.push(v.clone());
        v[j] = -Rat::one();
        candidates.push(v);
    }
    for _ in 0..200 {
        candidates.push(
            (0..m)
                .map(|_| rat(probe_rng.random_range(-3..=3i64)))
                .collect(),
        );
    }
    let mut members: Vec<Vec<Rat>> = Vec::new();
    for cand in candidates {
        if cand.iter().all(Zero::is_zero) {
            continue;
        }
        if op.wave_cone_contains(&cand)? {
            members.push(cand);
        }
    }
    let span_rank = if members.is_empty() {
        0
    } else {
        linalg::rank_exact(&Mat::from_rows(members.clone()))
    };
    if span_rank < m {
        return Ok(SearchOutcome::NotFound(
            NotFoundReason::WaveConeSpanDeficient,
        ));
    }

    // Greedy basis of wave-cone members.
    let mut basis: Vec<Vec<Rat>> = Vec::new();
    for cand in &members {
        if basis.len() == m {
            break;
        }
        let mut trial_rows = basis.clone();
        trial_rows.push(cand.clone());
        if linalg::rank_exact(&Mat::from_rows(trial_rows)) == basis.len() + 1 {
            basis.push(cand.clone());
        }
    }
    assert_eq!(basis.len(), m, "span check guarantees a full basis");

    let op_f = op.to_f64();
    let mut fragments_f: Vec<WitnessFragment<f64>> = Vec::with_capacity(m);
    for (fi, f_rat) in basis.iter().enumerate() {
        let f: Vec<f64> = f_rat.iter().map(Field::to_f64).collect();
        match search_fragment(&op_f, &f, trials, seed, fi) {
            Some(frag) => fragments_f.push(frag),
            None => return Ok(SearchOutcome::NotFound(NotFoundReason::Exhausted)),
        }
    }
    let witness_f = Witness {
        basis: basis
            .iter()
            .map(|v| v.iter().map(Field::to_f64).collect())
            .collect(),
        fragments: fragments_f,
    };
    let report = verify_witness_f64(&op_f, &witness_f, SEARCH_FLOAT_TOL)?;
    if !report.pass() {
        return Ok(SearchOutcome::NotFound(NotFoundReason::Exhausted));
    }
    if let Some(exact) = try_exact_reconstruction(op, &basis, &witness_f) {
        return Ok(SearchOutcome::Found(exact));
    }
    Ok(SearchOutcome::FoundFloat(witness_f))
}

/// Search one fragment. Trials run in parallel; the lowest succeeding trial
/// index wins, so the result is deterministic for a fixed seed.
fn search_fragment(
    op: &OperatorSpec<f64>,
    f: &[f64],
    trials: usize,
    seed: u64,
    fragment_index: usize,
) -> Option<WitnessFragment<f64>> {
    (0..trials)
        .into_par_iter()
        .find_map_first(|t| attempt_fragment(op, f, seed, fragment_index, t))
}

fn attempt_fragment(
    op: &OperatorSpec<f64>,
    f: &[f64],
    seed: u64,
    fragment_index: usize,
    trial: usize,
) -> Option<WitnessFragment<f64>> {
    let (d, m, n) = (op.d(), op.m(), op.n());
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ (fragment_index as u64).wrapping_mul(0x9e3779b97f4a7c15)
            ^ ((trial as u64) << 20),
    );
    let stack = op.apply_stack(f).ok()?; // n×d, row k = Aᵏf
    let p = linalg::rank_f64(&stack);
    if p >= d {
        return None; // no room for e
    }

    // Orthonormal frame of the range. Trial 0 keeps the stack's own row
    // order (the permutation-like choice); later trials rotate randomly.
    let rows: Vec<Vec<f64>> = (0..n).map(|k| stack.row_vec(k)).collect();
    let range_basis = {
        let base = linalg::gram_schmidt(&rows, 1e-10 * stack.max_abs_f64().max(1e-300));
        if base.len() < p {
            return None;
        }
        let base: Vec<Vec<f64>> = base[..p].to_vec();
        if trial == 0 {
            base
        } else {
            random_rotation(&base, &mut rng)
        }
    };
    // e from the orthogonal complement.
    let full = linalg::complete_orthonormal(&range_basis, d);
    let complement = &full[p..];
    let e: Vec<f64> = if trial % 3 == 0 {
        complement[(trial / 3) % complement.len()].clone()
    } else {
        let coeffs: Vec<f64> = complement.iter().map(|_| rng.random::<f64>() - 0.5).collect();
        let mut v = vec![0.0; d];
        for (c, b) in coeffs.iter().zip(complement) {
            for (x, y) in v.iter_mut().zip(b) {
                *x += c * y;
            }
        }
        let norm = linalg::dot(&v, &v).sqrt();
        if norm < 1e-9 {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        v
    };

    // Rows of C: preimages of the frame under c ↦ Σ cᵢ Aⁱf, then a kernel
    // basis for the zero tail.
    let stack_t = stack.transpose(); // d×n
    let mut c_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for v in &range_basis {
        c_rows.push(linalg::lstsq_f64(&stack_t, v));
    }
    c_rows.extend(linalg::kernel_basis_f64(&stack_t));
    if c_rows.len() != n {
        return None;
    }
    let c = Mat::from_rows(c_rows);
    if linalg::rank_f64(&c) < n {
        return None;
    }

    let b: Vec<Mat<f64>> = (0..n)
        .map(|k| {
            let mut acc = Mat::zeros(d, m);
            for i in 0..n {
                acc = acc.add(&op.mat(i).scale(&c[(k, i)]));
            }
            acc
        })
        .collect();
    let bf: Vec<Vec<f64>> = (0..n).map(|k| b[k].mul_vec(f)).collect();

    // Linear system in the stacked unknowns g₁..g_p (vectors beyond p are
    // zero, which satisfies the remaining relations automatically):
    //   (a) Bᵏgₖ = e                       for k ≤ p
    //   (b) proj⊥(Bˡgₖ) = 0                for ℓ ≠ k
    //   (c) Bˡgₖ·Bʰf + Bˡg_h·Bᵏf = 0       for k ≤ h ≤ p, all ℓ
    let unknowns = p * m;
    let mut rows_sys: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for k in 0..p {
        for i in 0..d {
            let mut row = vec![0.0; unknowns];
            for j in 0..m {
                row[k * m + j] = b[k][(i, j)];
            }
            rows_sys.push(row);
            rhs.push(e[i]);
        }
    }
    let mut proj = Mat::<f64>::identity(d);
    for v in &range_basis {
        for i in 0..d {
            for j in 0..d {
                proj[(i, j)] -= v[i] * v[j];
            }
        }
    }
    for k in 0..p {
        for l in 0..n {
            if l == k {
                continue;
            }
            let pb = proj.matmul(&b[l]);
            for i in 0..d {
                let mut row = vec![0.0; unknowns];
                for j in 0..m {
                    row[k * m + j] = pb[(i, j)];
                }
                rows_sys.push(row);
                rhs.push(0.0);
            }
        }
    }
    for l in 0..n {
        for k in 0..p {
            for h in k..p {
                let mut row = vec![0.0; unknowns];
                for j in 0..m {
                    let col = b[l].col_vec(j);
                    let d1 = linalg::dot(&col, &bf[h]);
                    row[k * m + j] += d1;
                    if h == k {
                        row[k * m + j] += d1;
                    } else {
                        row[h * m + j] += linalg::dot(&col, &bf[k]);
                    }
                }
                rows_sys.push(row);
                rhs.push(0.0);
            }
        }
    }
    let sol = if unknowns == 0 {
        Vec::new()
    } else {
        let sys = Mat::from_rows(rows_sys.clone());
        let sol = linalg::lstsq_f64(&sys, &rhs);
        let resid: f64 = (0..sys.nrows())
            .map(|i| (linalg::dot(sys.row(i), &sol) - rhs[i]).abs())
            .fold(0.0, f64::max);
        if resid > 1e-9 {
            return None;
        }
        sol
    };
    let mut g: Vec<ScaledVec<f64>> = (0..p)
        .map(|k| ScaledVec::plain(sol[k * m..(k + 1) * m].to_vec()))
        .collect();
    g.extend((p..n).map(|_| ScaledVec::zeros(m)));
    Some(WitnessFragment {
        c,
        c_rads: vec![1.0; n],
        p,
        e: ScaledVec::plain(e),
        g,
    })
}

fn random_rotation(basis: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let p = basis.len();
    if p <= 1 {
        return basis.to_vec();
    }
    let combos: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let coeffs: Vec<f64> = (0..p).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut v = vec![0.0; basis[0].len()];
            for (c, b) in coeffs.iter().zip(basis) {
                for (x, y) in v.iter_mut().zip(b) {
                    *x += c * y;
                }
            }
            v
        })
        .collect();
    let rot = linalg::gram_schmidt(&combos, 1e-12);
    if rot.len() == p {
        rot
    } else {
        basis.to_vec()
    }
}

/// Best rational approximation with bounded denominator (Stern–Brocot walk).
fn rationalize(x: f64, max_den: i64) -> Option<Rat> {
    if !x.is_finite() {
        return None;
    }
    if x == 0.0 {
        return Some(Rat::zero());
    }
    let neg = x < 0.0;
    let mut y = x.abs();
    let int_part = y.floor();
    if int_part > 1e15 {
        return None;
    }
    y -= int_part;
    let (mut lo, mut hi) = ((0i64, 1i64), (1i64, 1i64));
    let mut best = (0i64, 1i64);
    let mut best_err = y;
    if (1.0 - y).abs() < best_err {
        best = (1, 1);
        best_err = (1.0 - y).abs();
    }
    for _ in 0..64 {
        let med = (lo.0 + hi.0, lo.1 + hi.1);
        if med.1 > max_den {
            break;
        }
        let val = med.0 as f64 / med.1 as f64;
        let err = (val - y).abs();
        if err < best_err {
            best = med;
            best_err = err;
        }
        if val < y {
            lo = med;
        } else {
            hi = med;
        }
    }
    let mut r = rat(int_part as i64) + Rat::new(best.0.into(), best.1.into());
    if neg {
        r = -r;
    }
    Some(r)
}

/// Attempts to lift a float witness to an exact one: rationalize the
/// unnormalized data, recompute radicands from exact norms, re-solve the
/// certificate relations over ℚ, and accept only if the exact verifier
/// passes.
fn try_exact_reconstruction(
    op: &OperatorSpec<Rat>,
    basis: &[Vec<Rat>],
    wf: &Witness<f64>,
) -> Option<Witness<Rat>> {
    let n = op.n();
    let m_dim = op.m();
    let mut fragments = Vec::with_capacity(wf.fragments.len());
    for (f, frag_f) in basis.iter().zip(&wf.fragments) {
        let p = frag_f.p;
        // Rationalize the C rows after scaling each to unit max entry.
        let mut c_rows: Vec<Vec<Rat>> = Vec::with_capacity(n);
        for k in 0..n {
            let row = frag_f.c.row(k);
            let scale = row.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if scale == 0.0 {
                return None;
            }
            let mut rrow = Vec::with_capacity(n);
            for x in row {
                rrow.push(rationalize(x / scale, 1_000)?);
            }
            c_rows.push(rrow);
        }
        let c = Mat::from_rows(c_rows);
        if linalg::rank_exact(&c) < n {
            return None;
        }
        let b0: Vec<Mat<Rat>> = (0..n)
            .map(|k| {
                let mut acc = Mat::zeros(op.d(), op.m());
                for i in 0..n {
                    acc = acc.add(&op.mat(i).scale(&c[(k, i)]));
                }
                acc
            })
            .collect();
        let bf0: Vec<Vec<Rat>> = (0..n).map(|k| b0[k].mul_vec(f)).collect();
        // Exact frame relations for the rationalized C.
        for (k, bk) in bf0.iter().enumerate() {
            if k < p {
                if bk.iter().all(Zero::is_zero) {
                    return None;
                }
                for bl in bf0.iter().take(k) {
                    if !rat_dot(bk, bl).is_zero() {
                        return None;
                    }
                }
            } else if bk.iter().any(|x| !x.is_zero()) {
                return None;
            }
        }
        let rads: Vec<Rat> = bf0
            .iter()
            .enumerate()
            .map(|(k, bk)| {
                if k < p {
                    rat_dot(bk, bk).recip()
                } else {
                    Rat::one()
                }
            })
            .collect();
        let (e, e_rad) = if p == 0 {
            (vec![Rat::zero(); op.d()], Rat::one())
        } else {
            let ef = frag_f.e.to_f64_vec();
            let scale = ef.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if scale == 0.0 {
                return None;
            }
            let mut ev = Vec::with_capacity(op.d());
            for x in &ef {
                ev.push(rationalize(x / scale, 1_000)?);
            }
            let nsq = rat_dot(&ev, &ev);
            if nsq.is_zero() {
                return None;
            }
            (ev, nsq.recip())
        };
        // Solve the relations exactly for w₁..w_p where gₖ = √(e_rad/rads[k])·wₖ;
        // with the radicands factored out every block is rational.
        let g = if p == 0 {
            vec![ScaledVec::zeros(m_dim); n]
        } else {
            let unknowns = p * m_dim;
            let mut rows_sys: Vec<Vec<Rat>> = Vec::new();
            let mut rhs: Vec<Rat> = Vec::new();
            for k in 0..p {
                for i in 0..op.d() {
                    let mut row = vec![Rat::zero(); unknowns];
                    for j in 0..m_dim {
                        row[k * m_dim + j] = b0[k][(i, j)].clone();
                    }
                    rows_sys.push(row);
                    rhs.push(e[i].clone());
                }
            }
            let mut proj = Mat::<Rat>::identity(op.d());
            for h in 0..p {
                for i in 0..op.d() {
                    for j in 0..op.d() {
                        let sub = &(&rads[h] * &bf0[h][i]) * &bf0[h][j];
                        proj[(i, j)] = &proj[(i, j)] - &sub;
                    }
                }
            }
            for k in 0..p {
                for l in 0..n {
                    if l == k {
                        continue;
                    }
                    let pb = proj.matmul(&b0[l]);
                    for i in 0..op.d() {
                        let mut row = vec![Rat::zero(); unknowns];
                        for j in 0..m_dim {
                            row[k * m_dim + j] = pb[(i, j)].clone();
                        }
                        rows_sys.push(row);
                        rhs.push(Rat::zero());
                    }
                }
            }
            for l in 0..n {
                for k in 0..p {
                    for h in k..p {
                        let mut row = vec![Rat::zero(); unknowns];
                        for j in 0..m_dim {
                            let col = b0[l].col_vec(j);
                            let c1 = &rads[h] * &rat_dot(&col, &bf0[h]);
                            row[k * m_dim + j] = &row[k * m_dim + j] + &c1;
                            if h == k {
                                row[k * m_dim + j] = &row[k * m_dim + j] + &c1;
                            } else {
                                let c2 = &rads[k] * &rat_dot(&col, &bf0[k]);
                                row[h * m_dim + j] = &row[h * m_dim + j] + &c2;
                            }
                        }
                        rows_sys.push(row);
                        rhs.push(Rat::zero());
                    }
                }
            }
            let sys = Mat::from_rows(rows_sys);
            let sol = linalg::solve_exact(&sys, &rhs)?;
            let mut g: Vec<ScaledVec<Rat>> = (0..p)
                .map(|k| ScaledVec {
                    v: sol[k * m_dim..(k + 1) * m_dim].to_vec(),
                    rad: &e_rad / &rads[k],
                })
                .collect();
            g.extend((p..n).map(|_| ScaledVec::zeros(m_dim)));
            g
        };
        fragments.push(WitnessFragment {
            c,
            c_rads: rads,
            p,
            e: ScaledVec { v: e, rad: e_rad },
            g,
        });
    }
    let candidate = Witness {
        basis: basis.to_vec(),
        fragments,
    };
    match verify_witness(op, &candidate, 0.0) {
        Ok(report) if report.pass() => Some(candidate),
        _ => None,
    }
}

/// Witness transport along a span-preserving recombination: if `w` certifies
/// `op` and `op'ᵏ = Σ R_{ki} Aⁱ` with `R` invertible, composing each
/// fragment's `C` with `R⁻¹` certifies `op'`.
pub fn transport_witness(w: &Witness<Rat>, r_inv: &Mat<Rat>) -> Witness<Rat> {
    Witness {
        basis: w.basis.clone(),
        fragments: w
            .fragments
            .iter()
            .map(|frag| WitnessFragment {
                c: frag.c.matmul(r_inv),
                c_rads: frag.c_rads.clone(),
                p: frag.p,
                e: frag.e.clone(),
                g: frag.g.clone(),
            })
            .collect(),
    }
}

/// Converts a rational witness to the float lane.
pub fn witness_to_f64(w: &Witness<Rat>) -> Witness<f64> {
    Witness {
        basis: w
            .basis
            .iter()
            .map(|v| v.iter().map(Field::to_f64).collect())
            .collect(),
        fragments: w
            .fragments
            .iter()
            .map(|frag| WitnessFragment {
                c: frag.c.to_f64(),
                c_rads: frag.c_rads.iter().map(Field::to_f64).collect(),
                p: frag.p,
                e: ScaledVec {
                    v: frag.e.v.iter().map(Field::to_f64).collect(),
                    rad: frag.e.rad.to_f64(),
                },
                g: frag
                    .g
                    .iter()
                    .map(|g| ScaledVec {
                        v: g.v.iter().map(Field::to_f64).collect(),
                        rad: g.rad.to_f64(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Exact lift of a float witness whose entries are finite floats (floats are
/// rationals, so this is lossless); used when a float-mode witness file is
/// fed to rational-mode machinery.
pub fn witness_to_rat(w: &Witness<f64>) -> Result<Witness<Rat>> {
    let conv_vec =
        |v: &Vec<f64>| -> Result<Vec<Rat>> { v.iter().map(|x| f64_to_rat(*x)).collect() };
    Ok(Witness {
        basis: w.basis.iter().map(conv_vec).collect::<Result<_>>()?,
        fragments: w
            .fragments
            .iter()
            .map(|frag| {
                Ok(WitnessFragment {
                    c: Mat::from_rows(
                        (0..frag.c.nrows())
                            .map(|i| conv_vec(&frag.c.row_vec(i)))
                            .collect::<Result<_>>()?,
                    ),
                    c_rads: frag
                        .c_rads
                        .iter()
                        .map(|x| f64_to_rat(*x))
                        .collect::<Result<_>>()?,
                    p: frag.p,
                    e: ScaledVec {
                        v: conv_vec(&frag.e.v)?,
                        rad: f64_to_rat(frag.e.rad)?,
                    },
                    g: frag
                        .g
                        .iter()
                        .map(|g| {
                            Ok(ScaledVec {
                                v: conv_vec(&g.v)?,
                                rad: f64_to_rat(g.rad)?,
                            })
                        })
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat_from_i64;
    use crate::operator;
    use crate::scalar::ratio;

    fn standard_basis(m: usize) -> Vec<Vec<Rat>> {
        (0..m)
            .map(|j| {
                let mut v = vec![Rat::zero(); m];
                v[j] = Rat::one();
                v
            })
            .collect()
    }

    #[test]
    fn zero_operator_trivial_witness_passes() {
        let op = OperatorSpec::scalar(Mat::<Rat>::zeros(2, 3));
        let w = Witness {
            basis: standard_basis(3),
            fragments: (0..3)
                .map(|_| WitnessFragment {
                    c: Mat::identity(1),
                    c_rads: vec![Rat::one()],
                    p: 0,
                    e: ScaledVec::zeros(2),
                    g: vec![ScaledVec::zeros(3)],
                })
                .collect(),
        };
        let report = verify_witness(&op, &w, 0.0).unwrap();
        assert!(report.pass(), "failed: {:?}", report.failed_names());
    }

    #[test]
    fn divergence_witness_verifies_exactly() {
        for d in 2..=4 {
            let a = Mat::<Rat>::identity(d);
            let w = scalar_witness(&a).expect("identity has full rank");
            let op = OperatorSpec::scalar(a);
            let report = verify_witness(&op, &w, 0.0).unwrap();
            assert!(report.pass(), "d={d} failed: {:?}", report.failed_names());
            // Every certified direction lies in the wave cone.
            for f in &w.basis {
                assert!(op.wave_cone_contains(f).unwrap());
            }
        }
    }

    #[test]
    fn planar_divergence_witness_matches_hand_solution() {
        // For A = Id₂ and f = f₁: B = A, e should be the f₂ direction and
        // g₁ = f₂ solves Ag₁ = e.
        let w = scalar_witness(&Mat::<Rat>::identity(2)).unwrap();
        let frag = &w.fragments[0];
        assert_eq!(frag.p, 1);
        assert!(frag
            .e
            .equals_exact(&ScaledVec::plain(vec![Rat::zero(), Rat::one()])));
        assert!(frag.g[0].equals_exact(&ScaledVec::plain(vec![Rat::zero(), Rat::one()])));
    }

    #[test]
    fn perturbed_divergence_witness_fails_eq_a() {
        let a = Mat::<Rat>::identity(3);
        let mut w = scalar_witness(&a).unwrap();
        // g₁ ← g₁ + (1/10)·f₁ breaks Bg₁ = e.
        w.fragments[0].g[0].v[0] = &w.fragments[0].g[0].v[0] + &ratio(1, 10);
        let op = OperatorSpec::scalar(a);
        let report = verify_witness(&op, &w, 0.0).unwrap();
        assert!(!report.pass());
        assert!(!report.check("eq_a").unwrap().pass);
    }

    #[test]
    fn scalar_witness_with_irrational_norms_is_exact() {
        // Columns of this matrix have non-square norms, which exercises the
        // scaled-radical bookkeeping.
        let a = mat_from_i64(&[&[1, 1], &[1, 2], &[0, 3]]);
        let w = scalar_witness(&a).unwrap();
        let op = OperatorSpec::scalar(a);
        let report = verify_witness(&op, &w, 0.0).unwrap();
        assert!(report.pass(), "failed: {:?}", report.failed_names());
    }

    #[test]
    fn rank_one_scalar_not_representable() {
        let a = mat_from_i64(&[&[1, 0], &[0, 0], &[0, 0]]);
        assert!(scalar_witness(&a).is_none());
        assert!(!scalar_condition_decision(&a));
        assert!(scalar_condition_decision(&Mat::<Rat>::zeros(3, 2)));
        assert!(scalar_condition_decision(&Mat::<Rat>::identity(3)));
    }

    #[test]
    fn example_operator_witness_passes_exactly() {
        let (op, w) = example55_witness();
        let report = verify_witness(&op, &w, 0.0).unwrap();
        assert!(report.pass(), "failed: {:?}", report.failed_names());
        for f in &w.basis {
            assert!(op.wave_cone_contains(f).unwrap());
        }
    }

    #[test]
    fn corrupting_example_witness_fails() {
        let (op, mut w) = example55_witness();
        // g₁ for the first fragment swapped to f₄: B¹g₁ = A¹f₄ = 0 ≠ e.
        let mut v = vec![Rat::zero(); 5];
        v[3] = Rat::one();
        w.fragments[0].g[0] = ScaledVec::plain(v);
        let report = verify_witness(&op, &w, 0.0).unwrap();
        assert!(!report.pass());
        assert!(!report.check("eq_a").unwrap().pass);
    }

    #[test]
    fn float_verifier_accepts_float_witness() {
        let a = Mat::<f64>::identity(3);
        let w = scalar_witness_f64(&a).unwrap();
        let op = OperatorSpec::scalar(a);
        let report = verify_witness_f64(&op, &w, 1e-12).unwrap();
        assert!(report.pass(), "failed: {:?}", report.failed_names());
    }

    #[test]
    fn scalar_decision_agrees_with_witness_constructor() {
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let d = rng.random_range(2..=4usize);
            let m = rng.random_range(2..=4usize);
            let a = Mat::from_fn(d, m, |_, _| rat(rng.random_range(-3..=3i64)));
            assert_eq!(scalar_condition_decision(&a), scalar_witness(&a).is_some());
            if let Some(w) = scalar_witness(&a) {
                let op = OperatorSpec::scalar(a);
                let report = verify_witness(&op, &w, 0.0).unwrap();
                assert!(report.pass(), "failed: {:?}", report.failed_names());
            }
        }
    }

    #[test]
    fn witness_transport_under_equivalence() {
        let (op, w) = example55_witness();
        let r = mat_from_i64(&[&[1, 1], &[0, 1]]);
        let op2 = op.recombine(&r).unwrap();
        assert!(op.equivalent(&op2).unwrap());
        let r_inv = linalg::inverse_exact(&r).unwrap();
        let w2 = transport_witness(&w, &r_inv);
        let report = verify_witness(&op2, &w2, 0.0).unwrap();
        assert!(report.pass(), "failed: {:?}", report.failed_names());
    }

    #[test]
    fn search_finds_example_witness() {
        let (op, _) = example55_witness();
        match heuristic_witness_search(&op, 64, 42).unwrap() {
            SearchOutcome::Found(w) => {
                let report = verify_witness(&op, &w, 0.0).unwrap();
                assert!(report.pass());
            }
            SearchOutcome::FoundFloat(w) => {
                let report = verify_witness_f64(&op.to_f64(), &w, SEARCH_FLOAT_TOL).unwrap();
                assert!(report.pass());
            }
            SearchOutcome::NotFound(r) => panic!("search failed: {r:?}"),
        }
    }

    #[test]
    fn search_short_circuits_on_elliptic_operators() {
        let grad = operator::gradient::<Rat>(3);
        match heuristic_witness_search(&grad, 10, 1).unwrap() {
            SearchOutcome::NotFound(NotFoundReason::WaveConeSpanDeficient) => {}
            other => panic!("expected wave-cone short-circuit, got {other:?}"),
        }
        let dc = operator::div_curl_2d::<Rat>();
        match heuristic_witness_search(&dc, 10, 1).unwrap() {
            SearchOutcome::NotFound(NotFoundReason::WaveConeSpanDeficient) => {}
            other => panic!("expected wave-cone short-circuit, got {other:?}"),
        }
    }

    #[test]
    fn search_exhausts_on_symmetric_divergence() {
        let (op, _) = sym_div_negative_fixture();
        match heuristic_witness_search(&op, 300, 5).unwrap() {
            SearchOutcome::NotFound(NotFoundReason::Exhausted) => {}
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn search_reconstructs_divergence_exactly() {
        let op = operator::divergence::<Rat>(2);
        match heuristic_witness_search(&op, 64, 3).unwrap() {
            SearchOutcome::Found(w) => {
                assert!(verify_witness(&op, &w, 0.0).unwrap().pass());
            }
            other => panic!("expected exact witness, got {other:?}"),
        }
    }
}
