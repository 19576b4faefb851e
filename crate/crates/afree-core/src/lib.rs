//! Constructive balancing machinery for first-order constant-coefficient
//! linear differential operators.
//!
//! The crate decides algebraic balanceability conditions on matrix tuples,
//! builds the explicit rectifiable measures (branched trees, product
//! measures, sphere correctors) that annihilate `A(f + σ)` weakly, and
//! certifies every construction by quadrature against smooth test functions.
//!
//! Two arithmetic lanes coexist: exact rationals for every rank, span, and
//! witness decision, and `f64` for quadrature-facing code. Conversions always
//! go rational → float; no algebraic decision depends on a tolerance.

pub mod balance;
pub mod error;
pub mod forms;
pub mod io;
pub mod linalg;
pub mod measure;
pub mod operator;
pub mod quadrature;
pub mod scalar;
pub mod sphere;
pub mod testfn;
pub mod tree;
pub mod witness;

pub use error::{Error, Result};
pub use measure::{DiscreteMeasure, MeasurePiece};
pub use testfn::TestFunction;
pub use linalg::Mat;

pub use operator::OperatorSpec;
pub use scalar::{Quad, Rat, ScaledVec};



