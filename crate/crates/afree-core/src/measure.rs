//! Discrete vector-valued measures: a finite union of geometric pieces with
//! constant or polynomial densities, the weak pairing `⟨Aμ, φ⟩`, total
//! variation, and affine push-forwards.
//!
//! The carriers are exactly the ones the constructions use: segments,
//! axis-aligned faces and cubes, balls, parallelepiped patches, and
//! spheres/circles with polynomial densities. Patches close the family
//! under affine maps (a face dragged through a non-axis-aligned map becomes
//! a patch).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::operator::OperatorSpec;
use crate::quadrature::{
    ball_rule, ball_volume, circle_rule, for_tensor_indices, gauss_legendre, gauss_legendre_on,
    pairwise_sum, sphere_rule,
};
use crate::testfn::ScalarField;

/// Vector-valued polynomial density on ℝᵈ: each term contributes
/// `coeffs · Π x_i^{powers_i}` with `coeffs ∈ ℝᵐ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyDensity {
    pub terms: Vec<PolyTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyTerm {
    pub coeffs: Vec<f64>,
    pub powers: Vec<u32>,
}

impl PolyDensity {
    pub fn constant(w: Vec<f64>, d: usize) -> Self {
        PolyDensity {
            terms: vec![PolyTerm {
                coeffs: w,
                powers: vec![0; d],
            }],
        }
    }

    pub fn eval(&self, x: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for term in &self.terms {
            let mono: f64 = term
                .powers
                .iter()
                .zip(x)
                .map(|(&p, &xi)| xi.powi(p as i32))
                .product();
            for (o, c) in out.iter_mut().zip(&term.coeffs) {
                *o += c * mono;
            }
        }
        out
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.powers.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn scale(&self, by: f64) -> Self {
        PolyDensity {
            terms: self
                .terms
                .iter()
                .map(|t| PolyTerm {
                    coeffs: t.coeffs.iter().map(|c| c * by).collect(),
                    powers: t.powers.clone(),
                })
                .collect(),
        }
    }
}

/// One geometric carrier with its density.
///
/// Densities are per unit Hausdorff measure of the piece's own dimension:
/// length for segments, k-area for faces and patches, volume for cubes and
/// balls, (d−1)-area for spheres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeasurePiece {
    Segment {
        p: Vec<f64>,
        q: Vec<f64>,
        w: Vec<f64>,
    },
    Face {
        center: Vec<f64>,
        axes: Vec<usize>,
        halfwidths: Vec<f64>,
        w: Vec<f64>,
    },
    Cube {
        center: Vec<f64>,
        halfwidths: Vec<f64>,
        w: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
        w: Vec<f64>,
    },
    /// Parallelepiped patch `{origin + Σ t_i·edges_i : t ∈ [0,1]^k}`.
    Patch {
        origin: Vec<f64>,
        edges: Vec<Vec<f64>>,
        w: Vec<f64>,
    },
    /// Sphere ∂B_radius(center) carrying a polynomial density.
    Sphere {
        center: Vec<f64>,
        radius: f64,
        density: PolyDensity,
    },
    /// Circle of the given radius in the coordinate plane spanned by the two
    /// axes, carrying a polynomial density.
    Circle {
        center: Vec<f64>,
        radius: f64,
        axes: (usize, usize),
        density: PolyDensity,
    },
}

impl MeasurePiece {
    /// Ambient dimension.
    pub fn ambient_dim(&self) -> usize {
        match self {
            MeasurePiece::Segment { p, .. } => p.len(),
            MeasurePiece::Face { center, .. }
            | MeasurePiece::Cube { center, .. }
            | MeasurePiece::Ball { center, .. }
            | MeasurePiece::Sphere { center, .. }
            | MeasurePiece::Circle { center, .. } => center.len(),
            MeasurePiece::Patch { origin, .. } => origin.len(),
        }
    }

    /// Rectifiability dimension of the carrier.
    pub fn carrier_dim(&self) -> usize {
        match self {
            MeasurePiece::Segment { .. } | MeasurePiece::Circle { .. } => 1,
            MeasurePiece::Face { axes, .. } => axes.len(),
            MeasurePiece::Cube { center, .. } | MeasurePiece::Ball { center, .. } => center.len(),
            MeasurePiece::Patch { edges, .. } => edges.len(),
            MeasurePiece::Sphere { center, .. } => center.len() - 1,
        }
    }

    /// Hausdorff measure of the carrier (quadrature-free closed forms).
    pub fn carrier_measure(&self) -> f64 {
        match self {
            MeasurePiece::Segment { p, q, .. } => dist(p, q),
            MeasurePiece::Face { halfwidths, .. } => {
                halfwidths.iter().map(|h| 2.0 * h).product()
            }
            MeasurePiece::Cube { halfwidths, .. } => halfwidths.iter().map(|h| 2.0 * h).product(),
            MeasurePiece::Ball { center, radius, .. } => {
                ball_volume(center.len()) * radius.powi(center.len() as i32)
            }
            MeasurePiece::Patch { edges, .. } => gram_volume(edges),
            MeasurePiece::Sphere { center, radius, .. } => {
                crate::quadrature::sphere_area(center.len())
                    * radius.powi(center.len() as i32 - 1)
            }
            MeasurePiece::Circle { radius, .. } => 2.0 * std::f64::consts::PI * radius,
        }
    }
}

fn dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn gram_volume(edges: &[Vec<f64>]) -> f64 {
    let k = edges.len();
    let gram = Mat::from_fn(k, k, |i, j| linalg::dot(&edges[i], &edges[j]));
    let na = linalg::to_na(&gram);
    na.determinant().max(0.0).sqrt()
}

/// A finite union of measure pieces sharing the codomain dimension `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub m: usize,
    pub pieces: Vec<MeasurePiece>,
}

impl DiscreteMeasure {
    pub fn new(m: usize) -> Self {
        DiscreteMeasure { m, pieces: Vec::new() }
    }

    pub fn with_pieces(m: usize, pieces: Vec<MeasurePiece>) -> Result<Self> {
        let mu = DiscreteMeasure { m, pieces };
        mu.validate()?;
        Ok(mu)
    }

    pub fn ambient_dim(&self) -> Option<usize> {
        self.pieces.first().map(MeasurePiece::ambient_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let d = match self.ambient_dim() {
            Some(d) => d,
            None => return Ok(()),
        };
        for (i, piece) in self.pieces.iter().enumerate() {
            if piece.ambient_dim() != d {
                return Err(Error::DimMismatch(format!(
                    "piece {i} lives in ℝ^{}, expected ℝ^{d}",
                    piece.ambient_dim()
                )));
            }
            match piece {
                MeasurePiece::Segment { p, q, w } => {
                    if p == q {
                        return Err(Error::Precondition(format!(
                            "piece {i}: degenerate segment"
                        )));
                    }
                    check_w(i, w, self.m)?;
                }
                MeasurePiece::Face {
                    axes, halfwidths, w, ..
                } => {
                    let mut sorted = axes.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != axes.len() || axes.iter().any(|&a| a >= d) {
                        return Err(Error::Precondition(format!(
                            "piece {i}: face axes must be distinct coordinates"
                        )));
                    }
                    if halfwidths.len() != axes.len() || halfwidths.iter().any(|&h| h <= 0.0) {
                        return Err(Error::Precondition(format!(
                            "piece {i}: face halfwidths must be positive, one per axis"
                        )));
                    }
                    check_w(i, w, self.m)?;
                }
                MeasurePiece::Cube { halfwidths, w, .. } => {
                    if halfwidths.len() != d || halfwidths.iter().any(|&h| h <= 0.0) {
                        return Err(Error::Precondition(format!(
                            "piece {i}: cube needs d positive halfwidths"
                        )));
                    }
                    check_w(i, w, self.m)?;
                }
                MeasurePiece::Ball { radius, w, .. } => {
                    if *radius <= 0.0 {
                        return Err(Error::Precondition(format!(
                            "piece {i}: ball radius must be positive"
                        )));
                    }
                    check_w(i, w, self.m)?;
                }
                MeasurePiece::Patch { edges, w, .. } => {
                    if edges.is_empty() || edges.iter().any(|e| e.len() != d) {
                        return Err(Error::Precondition(format!(
                            "piece {i}: patch edges must be nonempty vectors in ℝᵈ"
                        )));
                    }
                    check_w(i, w, self.m)?;
                }
                MeasurePiece::Sphere {
                    radius, density, ..
                } => {
                    if *radius <= 0.0 {
                        return Err(Error::Precondition(format!(
                            "piece {i}: sphere radius must be positive"
                        )));
                    }
                    check_density(i, density, self.m, d)?;
                }
                MeasurePiece::Circle {
                    radius,
                    axes,
                    density,
                    ..
                } => {
                    if *radius <= 0.0 || axes.0 == axes.1 || axes.0 >= d || axes.1 >= d {
                        return Err(Error::Precondition(format!(
                            "piece {i}: circle needs a positive radius and two distinct axes"
                        )));
                    }
                    check_density(i, density, self.m, d)?;
                }
            }
        }
        Ok(())
    }

    pub fn push(&mut self, piece: MeasurePiece) {
        self.pieces.push(piece);
    }

    /// Piece-list concatenation.
    pub fn union(mut self, other: DiscreteMeasure) -> DiscreteMeasure {
        assert_eq!(self.m, other.m, "union of measures with different codomains");
        self.pieces.extend(other.pieces);
        self
    }

    /// All densities multiplied by a scalar.
    pub fn scale_density(&self, by: f64) -> DiscreteMeasure {
        DiscreteMeasure {
            m: self.m,
            pieces: self
                .pieces
                .iter()
                .map(|piece| match piece.clone() {
                    MeasurePiece::Segment { p, q, w } => MeasurePiece::Segment {
                        p,
                        q,
                        w: scale_vec(&w, by),
                    },
                    MeasurePiece::Face {
                        center,
                        axes,
                        halfwidths,
                        w,
                    } => MeasurePiece::Face {
                        center,
                        axes,
                        halfwidths,
                        w: scale_vec(&w, by),
                    },
                    MeasurePiece::Cube {
                        center,
                        halfwidths,
                        w,
                    } => MeasurePiece::Cube {
                        center,
                        halfwidths,
                        w: scale_vec(&w, by),
                    },
                    MeasurePiece::Ball { center, radius, w } => MeasurePiece::Ball {
                        center,
                        radius,
                        w: scale_vec(&w, by),
                    },
                    MeasurePiece::Patch { origin, edges, w } => MeasurePiece::Patch {
                        origin,
                        edges,
                        w: scale_vec(&w, by),
                    },
                    MeasurePiece::Sphere {
                        center,
                        radius,
                        density,
                    } => MeasurePiece::Sphere {
                        center,
                        radius,
                        density: density.scale(by),
                    },
                    MeasurePiece::Circle {
                        center,
                        radius,
                        axes,
                        density,
                    } => MeasurePiece::Circle {
                        center,
                        radius,
                        axes,
                        density: density.scale(by),
                    },
                })
                .collect(),
        }
    }
}

fn check_w(i: usize, w: &[f64], m: usize) -> Result<()> {
    if w.len() != m {
        return Err(Error::DimMismatch(format!(
            "piece {i}: density has length {}, expected m = {m}",
            w.len()
        )));
    }
    Ok(())
}

fn check_density(i: usize, density: &PolyDensity, m: usize, d: usize) -> Result<()> {
    for term in &density.terms {
        if term.coeffs.len() != m || term.powers.len() != d {
            return Err(Error::DimMismatch(format!(
                "piece {i}: polynomial density term shapes must be (m, d)"
            )));
        }
    }
    if density.degree() > 3 {
        return Err(Error::Precondition(format!(
            "piece {i}: polynomial densities are limited to degree 3"
        )));
    }
    Ok(())
}

fn scale_vec(v: &[f64], by: f64) -> Vec<f64> {
    v.iter().map(|x| x * by).collect()
}

/// Segment carrying `coeff` units of transport from `p` to `q`: with the
/// weak pairing `⟨div μ, φ⟩ = −∫ w·∇φ dH¹` its divergence is
/// `coeff·(δ_q − δ_p)`. (The density points from `q` to `p`; a field whose
/// flow ends at `q` has a sink there.)
pub fn transport_segment(p: Vec<f64>, q: Vec<f64>, coeff: f64) -> MeasurePiece {
    let len = dist(&p, &q);
    let w: Vec<f64> = p.iter().zip(&q).map(|(a, b)| coeff * (a - b) / len).collect();
    MeasurePiece::Segment { p, q, w }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Total variation
// ---------------------------------------------------------------------------

/// Total variation `Σ |w| · H^k(carrier)`; sphere and circle pieces
/// integrate |density| by quadrature at the given order.
pub fn total_variation(mu: &DiscreteMeasure, order: usize) -> Result<f64> {
    mu.validate()?;
    let mut total = 0.0;
    for piece in &mu.pieces {
        total += match piece {
            MeasurePiece::Segment { w, .. }
            | MeasurePiece::Face { w, .. }
            | MeasurePiece::Cube { w, .. }
            | MeasurePiece::Ball { w, .. }
            | MeasurePiece::Patch { w, .. } => norm(w) * piece.carrier_measure(),
            MeasurePiece::Sphere {
                center,
                radius,
                density,
            } => {
                let d = center.len();
                let rule = sphere_rule(d, order.max(4))?;
                let rd = radius.powi(d as i32 - 1);
                rule.iter()
                    .map(|(omega, wq)| {
                        let x: Vec<f64> =
                            center.iter().zip(omega).map(|(c, o)| c + radius * o).collect();
                        norm(&density.eval(&x, mu.m)) * wq * rd
                    })
                    .sum::<f64>()
            }
            MeasurePiece::Circle {
                center,
                radius,
                axes,
                density,
            } => circle_rule(order.max(8))
                .iter()
                .map(|(theta, wq)| {
                    let mut x = center.clone();
                    x[axes.0] += radius * theta.cos();
                    x[axes.1] += radius * theta.sin();
                    norm(&density.eval(&x, mu.m)) * wq * radius
                })
                .sum::<f64>(),
        };
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Weak pairing
// ---------------------------------------------------------------------------

/// Component `k` of `⟨Aμ, φ⟩`, namely `−∫ (Aᵏ dμ)·∇φ`, by per-piece
/// quadrature. Gauss–Legendre rules are exact for polynomial integrands of
/// degree ≤ 2·order−1 per axis; circles and spheres use the trapezoid-based
/// rules (`order` = point count on a circle).
pub fn weak_apply(
    op: &OperatorSpec<f64>,
    mu: &DiscreteMeasure,
    phi: &(impl ScalarField + ?Sized),
    order: usize,
) -> Result<Vec<f64>> {
    if order < 1 {
        return Err(Error::Precondition("quadrature order must be >= 1".into()));
    }
    mu.validate()?;
    if op.m() != mu.m {
        return Err(Error::DimMismatch(format!(
            "operator has m = {}, measure has m = {}",
            op.m(),
            mu.m
        )));
    }
    if let Some(d) = mu.ambient_dim() {
        if d != op.d() {
            return Err(Error::DimMismatch(format!(
                "operator acts on ℝ^{}, measure lives in ℝ^{d}",
                op.d()
            )));
        }
    }
    // Deterministic reduction: fixed-size chunks are summed sequentially in
    // piece order; the per-chunk results are combined by pairwise summation.
    const CHUNK: usize = 1024;
    let chunks: Vec<Vec<f64>> = mu
        .pieces
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; op.n()];
            for piece in chunk {
                let contribution = piece_pairing(op, mu.m, piece, phi, order)?;
                for (a, c) in acc.iter_mut().zip(&contribution) {
                    *a += c;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let n = op.n();
    Ok((0..n)
        .map(|k| {
            let vals: Vec<f64> = chunks.iter().map(|c| c[k]).collect();
            pairwise_sum(&vals)
        })
        .collect())
}

/// `−∫_piece (Aᵏ w(x))·∇φ(x) dH` for every component k.
fn piece_pairing(
    op: &OperatorSpec<f64>,
    m: usize,
    piece: &MeasurePiece,
    phi: &(impl ScalarField + ?Sized),
    order: usize,
) -> Result<Vec<f64>> {
    let n = op.n();
    let mut acc = vec![0.0; n];
    let mut absorb = |x: &[f64], w_density: &[f64], weight: f64| {
        let grad = phi.grad(x);
        for k in 0..n {
            let av = op.mat(k).mul_vec(w_density);
            acc[k] -= weight * linalg::dot(&av, &grad);
        }
    };
    match piece {
        MeasurePiece::Segment { p, q, w } => {
            let len = dist(p, q);
            let (ts, ws) = gauss_legendre_on(order, 0.0, 1.0);
            for (t, wq) in ts.iter().zip(&ws) {
                let x: Vec<f64> = p.iter().zip(q).map(|(a, b)| a + t * (b - a)).collect();
                absorb(&x, w, wq * len);
            }
        }
        MeasurePiece::Face {
            center,
            axes,
            halfwidths,
            w,
        } => {
            let (ts, ws) = gauss_legendre(order);
            let k = axes.len();
            let jac: f64 = halfwidths.iter().product();
            for_tensor_indices(&vec![order; k], |idx| {
                let mut x = center.clone();
                let mut weight = jac;
                for (a, &i) in idx.iter().enumerate() {
                    x[axes[a]] += halfwidths[a] * ts[i];
                    weight *= ws[i];
                }
                absorb(&x, w, weight);
            });
        }
        MeasurePiece::Cube {
            center,
            halfwidths,
            w,
        } => {
            let (ts, ws) = gauss_legendre(order);
            let d = center.len();
            let jac: f64 = halfwidths.iter().product();
            for_tensor_indices(&vec![order; d], |idx| {
                let mut x = center.clone();
                let mut weight = jac;
                for (a, &i) in idx.iter().enumerate() {
                    x[a] += halfwidths[a] * ts[i];
                    weight *= ws[i];
                }
                absorb(&x, w, weight);
            });
        }
        MeasurePiece::Ball { center, radius, w } => {
            for (pt, wq) in ball_rule(center.len(), *radius, order)? {
                let x: Vec<f64> = center.iter().zip(&pt).map(|(c, o)| c + o).collect();
                absorb(&x, w, wq);
            }
        }
        MeasurePiece::Patch { origin, edges, w } => {
            let k = edges.len();
            let jac = gram_volume(edges);
            let (ts, ws) = gauss_legendre_on(order, 0.0, 1.0);
            for_tensor_indices(&vec![order; k], |idx| {
                let mut x = origin.clone();
                let mut weight = jac;
                for (a, &i) in idx.iter().enumerate() {
                    for (xc, e) in x.iter_mut().zip(&edges[a]) {
                        *xc += ts[i] * e;
                    }
                    weight *= ws[i];
                }
                absorb(&x, w, weight);
            });
        }
        MeasurePiece::Sphere {
            center,
            radius,
            density,
        } => {
            let d = center.len();
            let rd = radius.powi(d as i32 - 1);
            for (omega, wq) in sphere_rule(d, order)? {
                let x: Vec<f64> = center
                    .iter()
                    .zip(&omega)
                    .map(|(c, o)| c + radius * o)
                    .collect();
                let w_density = density.eval(&x, m);
                absorb(&x, &w_density, wq * rd);
            }
        }
        MeasurePiece::Circle {
            center,
            radius,
            axes,
            density,
        } => {
            for (theta, wq) in circle_rule(order) {
                let mut x = center.clone();
                x[axes.0] += radius * theta.cos();
                x[axes.1] += radius * theta.sin();
                let w_density = density.eval(&x, m);
                absorb(&x, &w_density, wq * radius);
            }
        }
    }
    Ok(acc)
}

/// Maximal component magnitude of `⟨Aμ, φ⟩` over a suite of test functions.
pub fn weak_residual(
    op: &OperatorSpec<f64>,
    mu: &DiscreteMeasure,
    suite: &[impl ScalarField],
    order: usize,
) -> Result<f64> {
    if suite.is_empty() {
        return Err(Error::Precondition("test suite must be nonempty".into()));
    }
    let mut max = 0.0f64;
    for phi in suite {
        let components = weak_apply(op, mu, phi, order)?;
        for c in components {
            max = max.max(c.abs());
        }
    }
    Ok(max)
}

// ---------------------------------------------------------------------------
// Push-forwards
// ---------------------------------------------------------------------------

/// If `u` is a signed permutation composed with per-axis scaling, returns
/// for each input axis `j` the pair (image axis, signed scale).
fn signed_perm_scale(u: &Mat<f64>) -> Option<Vec<(usize, f64)>> {
    let d = u.nrows();
    let mut seen = vec![false; d];
    let mut map = Vec::with_capacity(d);
    for j in 0..d {
        let mut hit = None;
        for i in 0..d {
            if u[(i, j)] != 0.0 {
                if hit.is_some() {
                    return None;
                }
                hit = Some((i, u[(i, j)]));
            }
        }
        let (i, s) = hit?;
        if seen[i] {
            return None;
        }
        seen[i] = true;
        map.push((i, s));
    }
    Some(map)
}

/// If `u = λ·Q` with `Q` orthogonal, returns λ (> 0).
fn scaled_orthogonal(u: &Mat<f64>) -> Option<f64> {
    let d = u.nrows();
    let utu = u.transpose().matmul(u);
    let lambda2 = utu[(0, 0)];
    if lambda2 <= 0.0 {
        return None;
    }
    let scale = utu.max_abs_f64().max(1.0);
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { lambda2 } else { 0.0 };
            if (utu[(i, j)] - target).abs() > 1e-12 * scale {
                return None;
            }
        }
    }
    Some(lambda2.sqrt())
}

/// Affine push-forward in the piece-mapping convention: supports are mapped
/// through `x ↦ Ux + b`, each density is replaced by
/// `mass_scale · density_map · w`, and piece measures are recomputed on the
/// image. Faces and cubes survive signed-permutation-with-scaling maps;
/// otherwise they are re-expressed as parallelepiped patches. Balls and
/// spheres require a scaled-orthogonal map.
pub fn push_forward_affine(
    mu: &DiscreteMeasure,
    u: &Mat<f64>,
    b: &[f64],
    density_map: &Mat<f64>,
    mass_scale: f64,
) -> Result<DiscreteMeasure> {
    mu.validate()?;
    let d = match mu.ambient_dim() {
        Some(d) => d,
        None => return Ok(mu.clone()),
    };
    if u.nrows() != d || u.ncols() != d || b.len() != d {
        return Err(Error::DimMismatch("affine map must act on ℝᵈ".into()));
    }
    if density_map.nrows() != mu.m || density_map.ncols() != mu.m {
        return Err(Error::DimMismatch("density map must be m×m".into()));
    }
    if linalg::rank_f64(u) < d {
        return Err(Error::NotInvertible);
    }
    let perm = signed_perm_scale(u);
    let ortho = scaled_orthogonal(u);
    let map_point = |x: &[f64]| -> Vec<f64> {
        u.mul_vec(x)
            .iter()
            .zip(b)
            .map(|(ux, bi)| ux + bi)
            .collect()
    };
    let map_density =
        |w: &[f64]| -> Vec<f64> { scale_vec(&density_map.mul_vec(w), mass_scale) };

    let pieces = mu
        .pieces
        .iter()
        .map(|piece| -> Result<MeasurePiece> {
            Ok(match piece {
                MeasurePiece::Segment { p, q, w } => MeasurePiece::Segment {
                    p: map_point(p),
                    q: map_point(q),
                    w: map_density(w),
                },
                MeasurePiece::Face {
                    center,
                    axes,
                    halfwidths,
                    w,
                } => {
                    if let Some(ref perm) = perm {
                        let mut new_axes = Vec::with_capacity(axes.len());
                        let mut new_halfwidths = Vec::with_capacity(axes.len());
                        for (a, h) in axes.iter().zip(halfwidths) {
                            let (img, s) = perm[*a];
                            new_axes.push(img);
                            new_halfwidths.push(h * s.abs());
                        }
                        MeasurePiece::Face {
                            center: map_point(center),
                            axes: new_axes,
                            halfwidths: new_halfwidths,
                            w: map_density(w),
                        }
                    } else {
                        // Re-express as a parametrized patch.
                        let mut origin = center.clone();
                        for (a, h) in axes.iter().zip(halfwidths) {
                            origin[*a] -= h;
                        }
                        let edges: Vec<Vec<f64>> = axes
                            .iter()
                            .zip(halfwidths)
                            .map(|(a, h)| {
                                let mut e = vec![0.0; d];
                                e[*a] = 2.0 * h;
                                u.mul_vec(&e)
                            })
                            .collect();
                        MeasurePiece::Patch {
                            origin: map_point(&origin),
                            edges,
                            w: map_density(w),
                        }
                    }
                }
                MeasurePiece::Cube {
                    center,
                    halfwidths,
                    w,
                } => {
                    if let Some(ref perm) = perm {
                        let mut new_halfwidths = vec![0.0; d];
                        for (a, h) in halfwidths.iter().enumerate() {
                            let (img, s) = perm[a];
                            new_halfwidths[img] = h * s.abs();
                        }
                        MeasurePiece::Cube {
                            center: map_point(center),
                            halfwidths: new_halfwidths,
                            w: map_density(w),
                        }
                    } else {
                        let origin: Vec<f64> = center
                            .iter()
                            .zip(halfwidths)
                            .map(|(c, h)| c - h)
                            .collect();
                        let edges: Vec<Vec<f64>> = (0..d)
                            .map(|a| {
                                let mut e = vec![0.0; d];
                                e[a] = 2.0 * halfwidths[a];
                                u.mul_vec(&e)
                            })
                            .collect();
                        MeasurePiece::Patch {
                            origin: map_point(&origin),
                            edges,
                            w: map_density(w),
                        }
                    }
                }
                MeasurePiece::Ball { center, radius, w } => {
                    let lambda = ortho.ok_or_else(|| {
                        Error::UnsupportedPushForward(
                            "balls require a scaled-orthogonal map".into(),
                        )
                    })?;
                    MeasurePiece::Ball {
                        center: map_point(center),
                        radius: radius * lambda,
                        w: map_density(w),
                    }
                }
                MeasurePiece::Patch { origin, edges, w } => MeasurePiece::Patch {
                    origin: map_point(origin),
                    edges: edges.iter().map(|e| u.mul_vec(e)).collect(),
                    w: map_density(w),
                },
                MeasurePiece::Sphere { .. } | MeasurePiece::Circle { .. } => {
                    return Err(Error::UnsupportedPushForward(
                        "polynomial sphere densities do not compose with affine maps".into(),
                    ))
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscreteMeasure { m: mu.m, pieces })
}

/// Measure-theoretic push-forward `T#μ` with value map `density_map`: like
/// [`push_forward_affine`] but the density is divided by the per-piece
/// distortion `H^k(image)/H^k(original)`, so total mass transforms only
/// through `density_map`.
pub fn push_forward_measure(
    mu: &DiscreteMeasure,
    u: &Mat<f64>,
    b: &[f64],
    density_map: &Mat<f64>,
) -> Result<DiscreteMeasure> {
    let originals: Vec<f64> = mu.pieces.iter().map(MeasurePiece::carrier_measure).collect();
    let mapped = push_forward_affine(mu, u, b, density_map, 1.0)?;
    let pieces = mapped
        .pieces
        .into_iter()
        .zip(originals)
        .map(|(piece, h_orig)| {
            let ratio = h_orig / piece.carrier_measure();
            match piece {
                MeasurePiece::Segment { p, q, w } => MeasurePiece::Segment {
                    p,
                    q,
                    w: scale_vec(&w, ratio),
                },
                MeasurePiece::Face {
                    center,
                    axes,
                    halfwidths,
                    w,
                } => MeasurePiece::Face {
                    center,
                    axes,
                    halfwidths,
                    w: scale_vec(&w, ratio),
                },
                MeasurePiece::Cube {
                    center,
                    halfwidths,
                    w,
                } => MeasurePiece::Cube {
                    center,
                    halfwidths,
                    w: scale_vec(&w, ratio),
                },
                MeasurePiece::Ball { center, radius, w } => MeasurePiece::Ball {
                    center,
                    radius,
                    w: scale_vec(&w, ratio),
                },
                MeasurePiece::Patch { origin, edges, w } => MeasurePiece::Patch {
                    origin,
                    edges,
                    w: scale_vec(&w, ratio),
                },
                other => other,
            }
        })
        .collect();
    Ok(DiscreteMeasure { m: mu.m, pieces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::divergence;
    use crate::testfn::{MultiPoly, TestFunction};
    use approx::assert_relative_eq;

    fn unit_segment_measure() -> DiscreteMeasure {
        // Unit transport from the origin to e₁.
        DiscreteMeasure::with_pieces(
            2,
            vec![transport_segment(vec![0.0, 0.0], vec![1.0, 0.0], 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn tv_of_basic_pieces() {
        assert_relative_eq!(total_variation(&unit_segment_measure(), 8).unwrap(), 1.0);
        // The +x₁ face of (−1,1)³ has area 4.
        let face = DiscreteMeasure::with_pieces(
            3,
            vec![MeasurePiece::Face {
                center: vec![1.0, 0.0, 0.0],
                axes: vec![1, 2],
                halfwidths: vec![1.0, 1.0],
                w: vec![1.0, 0.0, 0.0],
            }],
        )
        .unwrap();
        assert_relative_eq!(total_variation(&face, 8).unwrap(), 4.0);
        let cube = DiscreteMeasure::with_pieces(
            2,
            vec![MeasurePiece::Cube {
                center: vec![0.0, 0.0],
                halfwidths: vec![1.0, 1.0],
                w: vec![0.0, 3.0],
            }],
        )
        .unwrap();
        assert_relative_eq!(total_variation(&cube, 8).unwrap(), 12.0);
    }

    #[test]
    fn segment_divergence_telescopes_exactly_for_polynomials() {
        // ⟨div μ[p,q], φ⟩ = φ(q) − φ(p), exact at order 3 for degree ≤ 5.
        let p = vec![0.2, -0.4];
        let q = vec![0.9, 0.7];
        let mu = DiscreteMeasure::with_pieces(
            2,
            vec![transport_segment(p.clone(), q.clone(), 1.0)],
        )
        .unwrap();
        let phi = MultiPoly {
            terms: vec![
                (1.0, vec![5, 0]),
                (-2.0, vec![2, 3]),
                (0.7, vec![0, 4]),
                (1.3, vec![1, 1]),
            ],
        };
        let op = divergence::<f64>(2);
        let pairing = weak_apply(&op, &mu, &phi, 3).unwrap();
        let expected = phi.eval(&q) - phi.eval(&p);
        assert_relative_eq!(pairing[0], expected, epsilon = 1e-13, max_relative = 1e-13);
    }

    #[test]
    fn polyline_chain_telescopes() {
        let points = [
            vec![0.0, 0.0],
            vec![0.3, 0.5],
            vec![0.8, 0.2],
            vec![0.5, -0.4],
        ];
        let mut mu = DiscreteMeasure::new(2);
        for pq in points.windows(2) {
            mu.push(transport_segment(pq[0].clone(), pq[1].clone(), 1.0));
        }
        let phi = TestFunction::bump(vec![0.2, 0.0], 1.5, 4);
        let op = divergence::<f64>(2);
        let pairing = weak_apply(&op, &mu, &phi, 24).unwrap();
        let expected = phi.value(&points[3]) - phi.value(&points[0]);
        assert_relative_eq!(pairing[0], expected, epsilon = 1e-10);
    }

    #[test]
    fn zero_density_pairs_to_zero() {
        let mu = DiscreteMeasure::with_pieces(
            2,
            vec![MeasurePiece::Cube {
                center: vec![0.0, 0.0],
                halfwidths: vec![1.0, 1.0],
                w: vec![0.0, 0.0],
            }],
        )
        .unwrap();
        let op = divergence::<f64>(2);
        let phi = TestFunction::bump(vec![0.0, 0.0], 1.0, 4);
        assert_eq!(weak_apply(&op, &mu, &phi, 8).unwrap(), vec![0.0]);
    }

    #[test]
    fn closed_circle_tangent_field_is_divergence_free() {
        // Circle in the (x₁,x₂)-plane of ℝ³ with unit tangent density: the
        // weak divergence vanishes; trapezoid quadrature is spectrally
        // accurate, so order 64 is plenty.
        let radius = 0.8;
        let tangent = PolyDensity {
            terms: vec![
                PolyTerm {
                    coeffs: vec![-1.0 / radius, 0.0, 0.0],
                    powers: vec![0, 1, 0],
                },
                PolyTerm {
                    coeffs: vec![0.0, 1.0 / radius, 0.0],
                    powers: vec![1, 0, 0],
                },
            ],
        };
        let mu = DiscreteMeasure::with_pieces(
            3,
            vec![MeasurePiece::Circle {
                center: vec![0.0, 0.0, 0.0],
                radius,
                axes: (0, 1),
                density: tangent,
            }],
        )
        .unwrap();
        let op = divergence::<f64>(3);
        let suite = crate::testfn::default_suite(3, 6);
        let residual = weak_residual(&op, &mu, &suite, 64).unwrap();
        assert!(residual < 1e-8, "residual {residual}");
        assert_relative_eq!(
            total_variation(&mu, 64).unwrap(),
            2.0 * std::f64::consts::PI * radius,
            max_relative = 1e-12
        );
    }

    #[test]
    fn weak_apply_is_additive_over_piece_lists() {
        let mu1 = unit_segment_measure();
        let mut mu2 = DiscreteMeasure::new(2);
        mu2.push(MeasurePiece::Cube {
            center: vec![0.3, 0.1],
            halfwidths: vec![0.4, 0.5],
            w: vec![0.2, -0.7],
        });
        let op = divergence::<f64>(2);
        let phi = TestFunction::bump(vec![0.1, 0.1], 1.2, 4);
        let lhs = weak_apply(&op, &mu1.clone().union(mu2.clone()), &phi, 12).unwrap();
        let a = weak_apply(&op, &mu1, &phi, 12).unwrap();
        let b = weak_apply(&op, &mu2, &phi, 12).unwrap();
        for k in 0..1 {
            assert_relative_eq!(lhs[k], a[k] + b[k], epsilon = 1e-15, max_relative = 1e-14);
        }
    }

    #[test]
    fn pushforward_identity_preserves_everything() {
        let mu = unit_segment_measure();
        let id = Mat::<f64>::identity(2);
        let out = push_forward_affine(&mu, &id, &[0.0, 0.0], &id, 1.0).unwrap();
        assert_eq!(out, mu);
    }

    #[test]
    fn pushforward_scaling_follows_piece_convention() {
        // τ(x) = x₀ + r·x with massScale r^d: image segment length r·L and
        // total variation r^{d+1}·|w|·L (density replaced, measure
        // recomputed).
        let mu = unit_segment_measure();
        let r = 0.5;
        let d = 2;
        let u = Mat::<f64>::identity(2).scale(&r);
        let out = push_forward_affine(
            &mu,
            &u,
            &[1.0, 2.0],
            &Mat::identity(2),
            r.powi(d as i32),
        )
        .unwrap();
        let tv = total_variation(&out, 8).unwrap();
        assert_relative_eq!(tv, r.powi(d as i32) * r * 1.0, epsilon = 1e-14);
        // The measure-theoretic push-forward instead preserves mass.
        let true_pf = push_forward_measure(&mu, &u, &[1.0, 2.0], &Mat::identity(2)).unwrap();
        assert_relative_eq!(
            total_variation(&true_pf, 8).unwrap(),
            1.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn face_through_rotation_becomes_patch_with_same_mass() {
        let face = DiscreteMeasure::with_pieces(
            2,
            vec![MeasurePiece::Face {
                center: vec![1.0, 0.0],
                axes: vec![1],
                halfwidths: vec![1.0],
                w: vec![2.0, 0.0],
            }],
        )
        .unwrap();
        let angle = 0.3f64;
        let rot = Mat::from_rows(vec![
            vec![angle.cos(), -angle.sin()],
            vec![angle.sin(), angle.cos()],
        ]);
        let out = push_forward_affine(&face, &rot, &[0.0, 0.0], &Mat::identity(2), 1.0).unwrap();
        assert!(matches!(out.pieces[0], MeasurePiece::Patch { .. }));
        assert_relative_eq!(
            total_variation(&out, 8).unwrap(),
            total_variation(&face, 8).unwrap(),
            epsilon = 1e-12
        );
        // A signed-permutation map keeps it a face.
        let flip = Mat::from_rows(vec![vec![0.0, 1.0], vec![-1.0, 0.0]]);
        let kept = push_forward_affine(&face, &flip, &[0.0, 0.0], &Mat::identity(2), 1.0).unwrap();
        assert!(matches!(kept.pieces[0], MeasurePiece::Face { .. }));
    }

    #[test]
    fn reflection_of_transport_segment() {
        // Reflecting μ[0, e₁] through the origin with density map −Id gives
        // the transport from 0 to −e₁.
        let mu = unit_segment_measure();
        let neg = Mat::<f64>::identity(2).scale(&-1.0);
        let out = push_forward_affine(&mu, &neg, &[0.0, 0.0], &neg, 1.0).unwrap();
        match &out.pieces[0] {
            MeasurePiece::Segment { p, q, w } => {
                assert_eq!(p, &vec![0.0, 0.0]);
                assert_eq!(q, &vec![-1.0, 0.0]);
                // transport density toward −e₁ points back at the origin
                assert_eq!(w, &vec![1.0, 0.0]);
            }
            other => panic!("unexpected piece {other:?}"),
        }
        // Its weak divergence is δ_{−e₁} − δ₀.
        let op = divergence::<f64>(2);
        let phi = TestFunction::bump(vec![0.0, 0.0], 1.5, 4);
        let pairing = weak_apply(&op, &out, &phi, 24).unwrap();
        let expected = phi.value(&[-1.0, 0.0]) - phi.value(&[0.0, 0.0]);
        assert_relative_eq!(pairing[0], expected, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_and_mismatched_pieces_are_rejected() {
        let bad = DiscreteMeasure {
            m: 2,
            pieces: vec![MeasurePiece::Segment {
                p: vec![0.0, 0.0],
                q: vec![0.0, 0.0],
                w: vec![1.0, 0.0],
            }],
        };
        assert!(bad.validate().is_err());
        let wrong_m = DiscreteMeasure {
            m: 3,
            pieces: vec![MeasurePiece::Cube {
                center: vec![0.0, 0.0],
                halfwidths: vec![1.0, 1.0],
                w: vec![1.0, 0.0],
            }],
        };
        assert!(wrong_m.validate().is_err());
    }

    #[test]
    fn ball_pushforward_requires_scaled_orthogonal() {
        let mu = DiscreteMeasure::with_pieces(
            2,
            vec![MeasurePiece::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
                w: vec![1.0, 0.0],
            }],
        )
        .unwrap();
        let shear = Mat::from_rows(vec![vec![1.0, 1.0], vec![0.0, 1.0]]);
        assert!(push_forward_affine(&mu, &shear, &[0.0, 0.0], &Mat::identity(2), 1.0).is_err());
        let rot = Mat::from_rows(vec![vec![0.0, -2.0], vec![2.0, 0.0]]);
        let out = push_forward_affine(&mu, &rot, &[0.0, 0.0], &Mat::identity(2), 1.0).unwrap();
        match &out.pieces[0] {
            MeasurePiece::Ball { radius, .. } => assert_relative_eq!(*radius, 2.0),
            other => panic!("unexpected piece {other:?}"),
        }
    }
}
