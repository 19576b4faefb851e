//! Scalar arithmetic: exact rationals, the field abstraction shared by the
//! rational and float lanes, and quantities of the form `q·√r` that arise
//! when witness data carries unit-norm constraints.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num::bigint::BigInt;
use num::traits::{One, Signed, Zero};
use num::BigRational;

use crate::error::{Error, Result};

/// Exact rational scalar used by every algebraic decision.
pub type Rat = BigRational;

/// Minimal field interface implemented by [`Rat`] and `f64`.
///
/// Generic code uses only operations that are exact in both lanes; anything
/// that needs a tolerance (rank, kernels, solving) goes through [`LinScalar`].
pub trait Field:
    Clone
    + PartialEq
    + fmt::Debug
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// True when equality tests are exact (rational lane).
    const EXACT: bool;

    fn from_int(n: i64) -> Self;
    fn to_f64(&self) -> f64;
    fn field_abs(&self) -> Self;
}

impl Field for Rat {
    const EXACT: bool = true;

    fn from_int(n: i64) -> Self {
        Rat::from_integer(BigInt::from(n))
    }

    fn to_f64(&self) -> f64 {
        rat_to_f64(self)
    }

    fn field_abs(&self) -> Self {
        Signed::abs(self)
    }
}

impl Field for f64 {
    const EXACT: bool = false;

    fn from_int(n: i64) -> Self {
        n as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn field_abs(&self) -> Self {
        f64::abs(*self)
    }
}

/// Rational from small integers.
pub fn rat(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Rational `n/d`.
pub fn ratio(n: i64, d: i64) -> Rat {
    assert!(d != 0, "zero denominator");
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Dyadic rational `n / 2^exp`.
pub fn dyadic(n: i64, exp: u32) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(1i64) << exp)
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    // Split into quotient and remainder so huge numerators stay accurate.
    let (q, rem) = (
        r.numer() / r.denom(),
        r.numer() - (r.numer() / r.denom()) * r.denom(),
    );
    let qf = bigint_to_f64(&q);
    let rf = bigint_to_f64(&rem) / bigint_to_f64(r.denom());
    qf + rf
}

fn bigint_to_f64(b: &BigInt) -> f64 {
    use num::ToPrimitive;
    b.to_f64().unwrap_or(f64::NAN)
}

/// Every finite f64 is a rational; the conversion is exact.
pub fn f64_to_rat(x: f64) -> Result<Rat> {
    Rat::from_float(x).ok_or_else(|| Error::Parse(format!("non-finite float {x}")))
}

/// Parses `"p/q"`, `"p"`, or a decimal like `"0.25"` into an exact rational.
pub fn parse_rat(s: &str) -> Result<Rat> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let num: BigInt = p
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad numerator in {s:?}")))?;
        let den: BigInt = q
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad denominator in {s:?}")))?;
        if den.is_zero() {
            return Err(Error::Parse(format!("zero denominator in {s:?}")));
        }
        Ok(Rat::new(num, den))
    } else if let Some((int, frac)) = s.split_once('.') {
        let int_part: BigInt = if int.is_empty() || int == "-" {
            BigInt::zero()
        } else {
            int.parse()
                .map_err(|_| Error::Parse(format!("bad decimal {s:?}")))?
        };
        let scale = BigInt::from(10u32).pow(frac.len() as u32);
        let frac_part: BigInt = if frac.is_empty() {
            BigInt::zero()
        } else {
            frac.parse()
                .map_err(|_| Error::Parse(format!("bad decimal {s:?}")))?
        };
        let neg = s.starts_with('-');
        let mag = int_part.abs() * &scale + frac_part;
        Ok(Rat::new(if neg { -mag } else { mag }, scale))
    } else {
        let num: BigInt = s
            .parse()
            .map_err(|_| Error::Parse(format!("bad rational {s:?}")))?;
        Ok(Rat::from_integer(num))
    }
}

/// Canonical `"p/q"` (or `"p"` for integers) rendering.
pub fn format_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn bigint_sqrt_exact(b: &BigInt) -> Option<BigInt> {
    if b.is_negative() {
        return None;
    }
    let root = b.sqrt();
    (&root * &root == *b).then_some(root)
}

/// Exact square root of a nonnegative rational, when it exists.
pub fn rat_sqrt_exact(r: &Rat) -> Option<Rat> {
    let n = bigint_sqrt_exact(r.numer())?;
    let d = bigint_sqrt_exact(r.denom())?;
    Some(Rat::new(n, d))
}

/// A scalar of the form `coef · √rad` with `coef, rad` rational and `rad ≥ 0`.
///
/// Closed under multiplication; addition is supported exactly when the
/// radicands have a square rational ratio. Equality and zero tests are exact,
/// which is what the rational-mode witness verifier and the branched-tree
/// mass ledger rely on.
#[derive(Clone, Debug)]
pub struct Quad {
    coef: Rat,
    rad: Rat,
}

impl Quad {
    pub fn new(coef: Rat, rad: Rat) -> Self {
        assert!(!rad.is_negative(), "negative radicand");
        let mut q = Quad { coef, rad };
        q.normalize();
        q
    }

    pub fn from_rat(coef: Rat) -> Self {
        Quad::new(coef, Rat::one())
    }

    pub fn sqrt_of(rad: Rat) -> Self {
        Quad::new(Rat::one(), rad)
    }

    pub fn zero() -> Self {
        Quad {
            coef: Rat::zero(),
            rad: Rat::one(),
        }
    }

    fn normalize(&mut self) {
        if self.coef.is_zero() || self.rad.is_zero() {
            self.coef = Rat::zero();
            self.rad = Rat::one();
        } else if let Some(root) = rat_sqrt_exact(&self.rad) {
            self.coef = &self.coef * root;
            self.rad = Rat::one();
        }
    }

    pub fn coef(&self) -> &Rat {
        &self.coef
    }

    pub fn rad(&self) -> &Rat {
        &self.rad
    }

    pub fn is_zero(&self) -> bool {
        self.coef.is_zero()
    }

    pub fn mul(&self, other: &Quad) -> Quad {
        Quad::new(&self.coef * &other.coef, &self.rad * &other.rad)
    }

    pub fn scale(&self, by: &Rat) -> Quad {
        Quad::new(&self.coef * by, self.rad.clone())
    }

    pub fn neg(&self) -> Quad {
        Quad {
            coef: -self.coef.clone(),
            rad: self.rad.clone(),
        }
    }

    /// The square is always rational.
    pub fn square(&self) -> Rat {
        &(&self.coef * &self.coef) * &self.rad
    }

    /// Exact sum when the radicands are compatible.
    pub fn try_add(&self, other: &Quad) -> Option<Quad> {
        if self.is_zero() {
            return Some(other.clone());
        }
        if other.is_zero() {
            return Some(self.clone());
        }
        let ratio = &other.rad / &self.rad;
        let root = rat_sqrt_exact(&ratio)?;
        Some(Quad::new(&self.coef + &other.coef * root, self.rad.clone()))
    }

    pub fn to_f64(&self) -> f64 {
        rat_to_f64(&self.coef) * rat_to_f64(&self.rad).sqrt()
    }
}

impl PartialEq for Quad {
    fn eq(&self, other: &Self) -> bool {
        if self.coef.is_zero() || other.coef.is_zero() {
            return self.coef.is_zero() && other.coef.is_zero();
        }
        self.coef.is_positive() == other.coef.is_positive() && self.square() == other.square()
    }
}

impl Eq for Quad {}

impl fmt::Display for Quad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rad.is_one() {
            write!(f, "{}", format_rat(&self.coef))
        } else {
            write!(f, "{}*sqrt({})", format_rat(&self.coef), format_rat(&self.rad))
        }
    }
}

/// A vector `√rad · v` with all components sharing one radicand.
///
/// Witness data (operator recombinations, the vectors `e` and `g_k`) is
/// stored this way so that unit-norm and orthogonality relations stay exactly
/// checkable even when the norms involved are irrational.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledVec<T> {
    pub v: Vec<T>,
    pub rad: T,
}

impl<T: Field> ScaledVec<T> {
    pub fn plain(v: Vec<T>) -> Self {
        ScaledVec { v, rad: T::one() }
    }

    pub fn zeros(len: usize) -> Self {
        ScaledVec {
            v: vec![T::zero(); len],
            rad: T::one(),
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn is_zero_vec(&self) -> bool {
        self.v.iter().all(|c| c.is_zero()) || self.rad.is_zero()
    }

    /// Numeric value `√rad · v`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        let s = self.rad.to_f64().sqrt();
        self.v.iter().map(|c| c.to_f64() * s).collect()
    }
}

impl ScaledVec<Rat> {
    /// Exact dot product of two scaled vectors as a `Quad`.
    pub fn dot_exact(&self, other: &ScaledVec<Rat>) -> Quad {
        let raw: Rat = self
            .v
            .iter()
            .zip(&other.v)
            .map(|(a, b)| a * b)
            .fold(Rat::zero(), |acc, t| acc + t);
        Quad::new(raw, &self.rad * &other.rad)
    }

    /// Exact squared norm (always rational).
    pub fn norm_sq_exact(&self) -> Rat {
        self.dot_exact(self).square().clone()
    }

    /// Componentwise equality of the represented vectors.
    pub fn equals_exact(&self, other: &ScaledVec<Rat>) -> bool {
        if self.v.len() != other.v.len() {
            return false;
        }
        self.v.iter().zip(&other.v).all(|(a, b)| {
            Quad::new(a.clone(), self.rad.clone()) == Quad::new(b.clone(), other.rad.clone())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_roundtrip() {
        for s in ["3/4", "-7/2", "5", "0", "-12"] {
            let r = parse_rat(s).unwrap();
            assert_eq!(format_rat(&r), s);
        }
        assert_eq!(parse_rat("0.25").unwrap(), ratio(1, 4));
        assert_eq!(parse_rat("-1.5").unwrap(), ratio(-3, 2));
        assert_eq!(parse_rat("6/4").unwrap(), ratio(3, 2));
        assert!(parse_rat("1/0").is_err());
        assert!(parse_rat("abc").is_err());
    }

    #[test]
    fn quad_normalizes_perfect_squares() {
        let q = Quad::new(rat(3), ratio(4, 9));
        assert_eq!(q.rad(), &Rat::one());
        assert_eq!(q.coef(), &rat(2));
    }

    #[test]
    fn quad_equality_is_exact() {
        // 2·√2 == √8
        let a = Quad::new(rat(2), rat(2));
        let b = Quad::sqrt_of(rat(8));
        assert_eq!(a, b);
        assert_ne!(a, Quad::from_rat(rat(2)));
        // sign matters: −√2 ≠ √2
        assert_ne!(a.neg(), b);
    }

    #[test]
    fn quad_addition_combines_compatible_radicands() {
        let a = Quad::sqrt_of(rat(2));
        let b = Quad::sqrt_of(rat(8)); // 2√2
        let sum = a.try_add(&b).unwrap();
        assert_eq!(sum, Quad::new(rat(3), rat(2)));
        // √2 + √3 is not representable
        assert!(a.try_add(&Quad::sqrt_of(rat(3))).is_none());
        // zero combines with anything
        assert_eq!(Quad::zero().try_add(&a).unwrap(), a);
    }

    #[test]
    fn scaled_vec_dot_and_equality() {
        // (1/√2)(1,1) has unit norm
        let e = ScaledVec {
            v: vec![rat(1), rat(1)],
            rad: ratio(1, 2),
        };
        assert_eq!(e.norm_sq_exact(), Rat::one());
        // (1/√8)(2,2) is the same vector
        let e2 = ScaledVec {
            v: vec![rat(2), rat(2)],
            rad: ratio(1, 8),
        };
        assert!(e.equals_exact(&e2));
        let f = ScaledVec::plain(vec![rat(1), rat(-1)]);
        assert!(e.dot_exact(&f).is_zero());
    }

    #[test]
    fn dyadic_values() {
        assert_eq!(dyadic(3, 2), ratio(3, 4));
        assert_eq!(rat_to_f64(&dyadic(-5, 4)), -0.3125);
    }
}
