//! The dyadic branched tree: a 1-rectifiable measure transporting a Dirac at
//! the origin to the uniform measure on a face of the cube (−1,1)^{h+1},
//! truncated at level L, and the face-to-face measure built from it and its
//! reflection.
//!
//! Node coordinates are dyadic and handled as integers scaled by powers of
//! two, so flow conservation and the mass ledger are exact; conversion to
//! f64 (also exact for these dyadics) happens only at quadrature time.

use rayon::prelude::*;

use num::traits::One;

use crate::error::{Error, Result};
use crate::measure::{transport_segment, DiscreteMeasure};
use crate::quadrature::{gauss_legendre, pairwise_sum};
use crate::scalar::{rat, ratio, Quad, Rat};
use crate::testfn::ScalarField;

/// Hard cap on materialized segments (and CSV rows).
pub const MAX_MATERIALIZED_SEGMENTS: u128 = 1 << 24;

const BYTES_PER_SEGMENT: u128 = 200;

/// The truncated tree γ_L in ℝ^{h+1}: `2^{ℓh}` segments at level ℓ, each of
/// weight `2^{−ℓh}`, connecting dyadic cell centers of consecutive levels.
#[derive(Clone, Debug)]
pub struct BranchTree {
    h: usize,
    levels: usize,
    /// Increment mass |γ_ℓ − γ_{ℓ−1}| per level, exact: √(h+1)/2^ℓ.
    level_masses: Vec<Quad>,
}

/// Number of segments of γ_L (level ℓ contributes 2^{ℓh}).
pub fn gamma_segment_count(h: usize, levels: usize) -> u128 {
    (1..=levels as u32).map(|l| 1u128 << (l * h as u32)).sum()
}

/// Builds the tree skeleton and its exact mass ledger.
///
/// The per-level mass is computed from the recursion's actual endpoint
/// offsets (one transport step of 2^{−ℓ} in the axis direction and 2^{−ℓ}
/// in each of the h branching directions), aggregated exactly over the
/// 2^{ℓh} congruent segments of weight 2^{−ℓh}.
pub fn build_gamma(h: usize, levels: usize) -> Result<BranchTree> {
    if h > 6 || levels == 0 || levels > 20 {
        let count = gamma_segment_count(h, levels.max(1));
        return Err(Error::ResourceGuard {
            what: format!("branched tree with h = {h}, L = {levels}"),
            bytes: count.saturating_mul(BYTES_PER_SEGMENT),
            limit: MAX_MATERIALIZED_SEGMENTS * BYTES_PER_SEGMENT,
        });
    }
    let level_masses = (1..=levels)
        .map(|l| {
            // |Δ|² = (h+1)·4^{−ℓ} from the endpoint formula; the segment
            // count and the weight cancel exactly: 2^{ℓh}·2^{−ℓh} = 1.
            let len_sq = ratio(h as i64 + 1, 1i64 << (2 * l) as u32);
            Quad::new(Rat::one(), len_sq)
        })
        .collect();
    Ok(BranchTree {
        h,
        levels,
        level_masses,
    })
}

impl BranchTree {
    pub fn h(&self) -> usize {
        self.h
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Exact per-level increment masses (level ℓ at index ℓ−1).
    pub fn level_masses(&self) -> &[Quad] {
        &self.level_masses
    }

    /// Closed form √(h+1)/2^ℓ the ledger is asserted against.
    pub fn closed_form_mass(&self, level: usize) -> Quad {
        Quad::new(ratio(1, 1i64 << level as u32), rat(self.h as i64 + 1))
    }

    pub fn segment_count(&self) -> u128 {
        gamma_segment_count(self.h, self.levels)
    }

    /// Total variation of γ_L as an exact scaled radical.
    pub fn gamma_total_variation(&self) -> Quad {
        let mut acc = Quad::zero();
        for m in &self.level_masses {
            acc = acc.try_add(m).expect("all levels share the radicand h+1");
        }
        acc
    }

    /// Streams every segment of γ_L as (level, p, q, weight); `p` is the
    /// inner endpoint. Coordinates are exact dyadics representable in f64.
    pub fn for_each_gamma_segment(&self, mut visit: impl FnMut(usize, &[f64], &[f64], f64)) {
        let h = self.h;
        let mut p = vec![0.0f64; h + 1];
        let mut q = vec![0.0f64; h + 1];
        for level in 1..=self.levels {
            let weight = 0.5f64.powi((level * h) as i32);
            let parent_cells: u128 = 1 << ((level - 1) * h);
            for parent in 0..parent_cells {
                decode_node(h, level - 1, parent, &mut p);
                for child_code in 0..(1u32 << h) {
                    child_node(h, level, &p, child_code, &mut q);
                    visit(level, &p, &q, weight);
                }
            }
        }
    }

    /// Leaf Diracs of the truncation: positions `(1−2^{−L}, q(T))` with
    /// uniform weight `2^{−Lh}`, visited by cell index.
    pub fn for_each_leaf(&self, mut visit: impl FnMut(&[f64], f64)) {
        let h = self.h;
        let weight = 0.5f64.powi((self.levels * h) as i32);
        let cells: u128 = 1 << (self.levels * h);
        let mut x = vec![0.0f64; h + 1];
        for cell in 0..cells {
            decode_node(h, self.levels, cell, &mut x);
            visit(&x, weight);
        }
    }

    fn guard_materialization(&self, what: &str, count: u128) -> Result<()> {
        if count > MAX_MATERIALIZED_SEGMENTS {
            return Err(Error::ResourceGuard {
                what: format!("{what} with h = {}, L = {}", self.h, self.levels),
                bytes: count.saturating_mul(BYTES_PER_SEGMENT),
                limit: MAX_MATERIALIZED_SEGMENTS * BYTES_PER_SEGMENT,
            });
        }
        Ok(())
    }

    /// Materializes γ_L as transport segments (weak divergence of each piece
    /// is weight·(δ_child − δ_parent)).
    pub fn gamma_measure(&self) -> Result<DiscreteMeasure> {
        self.guard_materialization("materializing the tree", self.segment_count())?;
        let mut mu = DiscreteMeasure::new(self.h + 1);
        self.for_each_gamma_segment(|_, p, q, w| {
            mu.push(transport_segment(p.to_vec(), q.to_vec(), w));
        });
        Ok(mu)
    }

    /// Streams the face-to-face measure μ_L = 2^h·(γ_L − γ'_L) as transport
    /// segments (from, to, coefficient). Subtracting the reflected tree
    /// reverses its transports, so the mirrored piece runs from −q to −p and
    /// the origin Diracs of the two halves cancel.
    pub fn for_each_mu_segment(&self, mut visit: impl FnMut(&[f64], &[f64], f64)) {
        let amp = (1u64 << self.h) as f64;
        let mut neg_p = vec![0.0f64; self.h + 1];
        let mut neg_q = vec![0.0f64; self.h + 1];
        self.for_each_gamma_segment(|_, p, q, w| {
            visit(p, q, amp * w);
            for (n, v) in neg_p.iter_mut().zip(p) {
                *n = -v;
            }
            for (n, v) in neg_q.iter_mut().zip(q) {
                *n = -v;
            }
            visit(&neg_q, &neg_p, amp * w);
        });
    }

    /// Materializes μ_L.
    pub fn mu_measure(&self) -> Result<DiscreteMeasure> {
        self.guard_materialization("materializing the face-to-face measure", 2 * self.segment_count())?;
        let mut mu = DiscreteMeasure::new(self.h + 1);
        self.for_each_mu_segment(|p, q, w| {
            mu.push(transport_segment(p.to_vec(), q.to_vec(), w));
        });
        Ok(mu)
    }

    /// `⟨div μ_L, φ⟩` by the exact telescoping identity: only the level-L
    /// leaf Diracs survive (the Diracs at the origin cancel between the tree
    /// and its reflection).
    pub fn mu_divergence_pairing(&self, phi: &(impl ScalarField + ?Sized)) -> f64 {
        let h = self.h;
        let cells: u128 = 1 << (self.levels * h);
        let weight = (1u64 << h) as f64 * 0.5f64.powi((self.levels * h) as i32);
        const CHUNK: u128 = 1 << 14;
        let chunk_count = cells.div_ceil(CHUNK);
        let sums: Vec<f64> = (0..chunk_count)
            .into_par_iter()
            .map(|chunk| {
                let mut x = vec![0.0f64; h + 1];
                let mut neg = vec![0.0f64; h + 1];
                let mut acc = 0.0;
                let lo = chunk * CHUNK;
                let hi = ((chunk + 1) * CHUNK).min(cells);
                for cell in lo..hi {
                    decode_node(h, self.levels, cell, &mut x);
                    for (n, v) in neg.iter_mut().zip(&x) {
                        *n = -v;
                    }
                    acc += phi.value(&x) - phi.value(&neg);
                }
                acc
            })
            .collect();
        weight * pairwise_sum(&sums)
    }

    /// |⟨div μ_L, φ⟩ − (∫_{Γ₁₊} φ − ∫_{Γ₁₋} φ)|: the tree side uses the
    /// telescoping identity, the faces tensor Gauss–Legendre quadrature.
    pub fn face_residual(&self, phi: &(impl ScalarField + ?Sized), order: usize) -> f64 {
        let tree_side = self.mu_divergence_pairing(phi);
        let faces = self.face_integral(phi, order, 1.0) - self.face_integral(phi, order, -1.0);
        (tree_side - faces).abs()
    }

    /// ∫_{Γ₁±} φ dH^h over the face {±1} × (−1,1)^h.
    pub fn face_integral(&self, phi: &(impl ScalarField + ?Sized), order: usize, side: f64) -> f64 {
        let h = self.h;
        if h == 0 {
            // Zero-dimensional face: a point mass.
            return phi.value(&[side]);
        }
        let (ts, ws) = gauss_legendre(order);
        let mut idx = vec![0usize; h];
        let mut x = vec![0.0f64; h + 1];
        x[0] = side;
        let mut acc = Vec::with_capacity(order.pow(h as u32));
        loop {
            let mut weight = 1.0;
            for (a, &i) in idx.iter().enumerate() {
                x[a + 1] = ts[i];
                weight *= ws[i];
            }
            acc.push(weight * phi.value(&x));
            let mut axis = h;
            loop {
                if axis == 0 {
                    return pairwise_sum(&acc);
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < order {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }

    /// The leaf-displacement bound `2^{h+1}·Lip(φ)·√h·2^{−L}` on the face
    /// residual (vacuous at h = 0 where the leaves sit on the face axis).
    pub fn residual_bound(&self, lipschitz: f64) -> f64 {
        2.0f64.powi(self.h as i32 + 1)
            * lipschitz
            * (self.h as f64).sqrt()
            * 0.5f64.powi(self.levels as i32)
    }
}

/// Decodes the center of dyadic cell `index` of 𝒫_level((−1,1)^h), embedded
/// at axis coordinate `1 − 2^{−level}` (the origin for level 0).
fn decode_node(h: usize, level: usize, index: u128, out: &mut [f64]) {
    debug_assert_eq!(out.len(), h + 1);
    if level == 0 {
        out.fill(0.0);
        return;
    }
    let scale = 0.5f64.powi(level as i32);
    out[0] = 1.0 - scale;
    let cells_per_axis = 1u128 << level;
    let mut rest = index;
    for coord in out.iter_mut().skip(1) {
        let k = (rest % cells_per_axis) as i64;
        rest /= cells_per_axis;
        // center = (2k+1)/2^level − 1, an exact dyadic
        *coord = (2 * k + 1) as f64 * scale - 1.0;
    }
    debug_assert_eq!(rest, 0, "cell index out of range");
}

/// Child center at `level` from the parent's branching coordinates: each
/// coordinate moves by ±2^{−level} according to the bits of `code`.
fn child_node(h: usize, level: usize, parent: &[f64], code: u32, out: &mut [f64]) {
    let scale = 0.5f64.powi(level as i32);
    out[0] = 1.0 - scale;
    for a in 0..h {
        let sign = if code & (1 << a) != 0 { 1.0 } else { -1.0 };
        out[a + 1] = parent[a + 1] + sign * scale;
    }
}

/// Convenience wrapper matching the construction's usual entry point.
pub fn build_mu(h: usize, levels: usize) -> Result<DiscreteMeasure> {
    build_gamma(h, levels)?.mu_measure()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{total_variation, weak_apply};
    use crate::operator::divergence;
    use crate::testfn::TestFunction;
    use approx::assert_relative_eq;
    use std::collections::HashMap;

    #[test]
    fn mass_ledger_matches_closed_form_exactly() {
        for h in 0..=4 {
            let tree = build_gamma(h, 12).unwrap();
            for l in 1..=12 {
                assert_eq!(
                    tree.level_masses()[l - 1],
                    tree.closed_form_mass(l),
                    "h={h} level={l}"
                );
            }
        }
    }

    #[test]
    fn enumerated_masses_agree_with_ledger() {
        // Ground the structural ledger in a full enumeration at small sizes:
        // sum |q−p|·weight per level, exactly (lengths are √((h+1))·2^{−ℓ},
        // so the sum is count·weight·that length).
        for h in 0..=2 {
            let tree = build_gamma(h, 5).unwrap();
            let mut level_data: HashMap<usize, (u64, f64)> = HashMap::new();
            tree.for_each_gamma_segment(|level, p, q, w| {
                let len_sq: f64 = p
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let entry = level_data.entry(level).or_insert((0, 0.0));
                entry.0 += 1;
                // every segment at a level is congruent; record the length²
                entry.1 = len_sq;
                let expected_len_sq = (h as f64 + 1.0) * 0.25f64.powi(level as i32);
                assert_eq!(len_sq, expected_len_sq);
                assert_eq!(w, 0.5f64.powi((level * h) as i32));
            });
            for (level, (count, len_sq)) in level_data {
                assert_eq!(count, 1 << (level * h));
                let mass = count as f64 * 0.5f64.powi((level * h) as i32) * len_sq.sqrt();
                assert_relative_eq!(
                    mass,
                    tree.level_masses()[level - 1].to_f64(),
                    max_relative = 1e-14
                );
            }
        }
    }

    #[test]
    fn h0_is_a_polyline() {
        let tree = build_gamma(0, 3).unwrap();
        let mut segments = Vec::new();
        tree.for_each_gamma_segment(|_, p, q, w| segments.push((p.to_vec(), q.to_vec(), w)));
        assert_eq!(
            segments,
            vec![
                (vec![0.0], vec![0.5], 1.0),
                (vec![0.5], vec![0.75], 1.0),
                (vec![0.75], vec![0.875], 1.0),
            ]
        );
    }

    #[test]
    fn h1_level1_matches_worked_example() {
        // Two segments from the origin to (1/2, ±1/2), weight 1/2 each;
        // increment mass √2/2.
        let tree = build_gamma(1, 1).unwrap();
        let mut segments = Vec::new();
        tree.for_each_gamma_segment(|_, p, q, w| segments.push((p.to_vec(), q.to_vec(), w)));
        segments.sort_by(|a, b| a.1[1].partial_cmp(&b.1[1]).unwrap());
        assert_eq!(
            segments,
            vec![
                (vec![0.0, 0.0], vec![0.5, -0.5], 0.5),
                (vec![0.0, 0.0], vec![0.5, 0.5], 0.5),
            ]
        );
        assert_eq!(
            tree.level_masses()[0],
            Quad::new(ratio(1, 2), rat(2)),
        );
        // μ at (h=1, L=1): 4 segments, TV = 2√2.
        let mu = tree.mu_measure().unwrap();
        assert_eq!(mu.pieces.len(), 4);
        assert_relative_eq!(
            total_variation(&mu, 4).unwrap(),
            2.0 * 2.0f64.sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn h2_level2_counts_and_mass() {
        let tree = build_gamma(2, 2).unwrap();
        let mut counts = HashMap::new();
        tree.for_each_gamma_segment(|level, _, _, _| *counts.entry(level).or_insert(0u64) += 1);
        assert_eq!(counts[&1], 4);
        assert_eq!(counts[&2], 16);
        // level-2 increment mass √3/4
        assert_eq!(
            tree.level_masses()[1],
            Quad::new(ratio(1, 4), rat(3)),
        );
    }

    #[test]
    fn flow_is_conserved_at_interior_nodes() {
        // Incoming weight at each node equals the sum of outgoing weights.
        let tree = build_gamma(2, 4).unwrap();
        let key = |x: &[f64]| -> Vec<i64> { x.iter().map(|v| (v * 65536.0) as i64).collect() };
        let mut incoming: HashMap<Vec<i64>, f64> = HashMap::new();
        let mut outgoing: HashMap<Vec<i64>, f64> = HashMap::new();
        tree.for_each_gamma_segment(|_, p, q, w| {
            *incoming.entry(key(q)).or_insert(0.0) += w;
            *outgoing.entry(key(p)).or_insert(0.0) += w;
        });
        for (node, inflow) in &incoming {
            if let Some(outflow) = outgoing.get(node) {
                assert_eq!(inflow, outflow, "node {node:?}");
            }
        }
        // The origin sources total mass 1.
        assert_eq!(outgoing[&key(&[0.0, 0.0, 0.0])], 1.0);
    }

    #[test]
    fn leaves_are_the_level_l_cell_centers() {
        let tree = build_gamma(1, 3).unwrap();
        let mut leaves = Vec::new();
        tree.for_each_leaf(|x, w| leaves.push((x.to_vec(), w)));
        assert_eq!(leaves.len(), 8);
        for (x, w) in &leaves {
            assert_eq!(*w, 0.125);
            assert_eq!(x[0], 1.0 - 0.125);
            // centers of 𝒫₃((−1,1)): odd multiples of 1/8
            let scaled = x[1] * 8.0;
            assert_eq!(scaled.fract().abs(), 0.0);
            assert_eq!((scaled as i64).rem_euclid(2), 1);
        }
    }

    #[test]
    fn mu_symmetry_under_reflection_with_density_negation() {
        // Reflect supports and negate densities (the current push-forward
        // composed with negation): the piece multiset is unchanged.
        let tree = build_gamma(1, 3).unwrap();
        let mut original: Vec<(Vec<i64>, Vec<i64>, i64)> = Vec::new();
        let mut transformed: Vec<(Vec<i64>, Vec<i64>, i64)> = Vec::new();
        let enc = |x: &[f64]| -> Vec<i64> { x.iter().map(|v| (v * 4096.0) as i64).collect() };
        tree.for_each_mu_segment(|p, q, w| {
            original.push((enc(p), enc(q), (w * 4096.0) as i64));
            // Reflecting the support and negating the density sends the
            // transport (from, to) to (−to, −from) with the same coefficient.
            let neg_p: Vec<f64> = p.iter().map(|v| -v).collect();
            let neg_q: Vec<f64> = q.iter().map(|v| -v).collect();
            transformed.push((enc(&neg_q), enc(&neg_p), (w * 4096.0) as i64));
        });
        original.sort();
        transformed.sort();
        assert_eq!(original, transformed);
    }

    #[test]
    fn mu_total_variation_bound() {
        // TV(μ_L) = 2^{h+1} Σ √(h+1)/2^ℓ ≤ 2^{h+1}√(h+1).
        for h in 0..=2 {
            let tree = build_gamma(h, 6).unwrap();
            let mu = tree.mu_measure().unwrap();
            let tv = total_variation(&mu, 4).unwrap();
            let expected: f64 = (1..=6)
                .map(|l| ((h + 1) as f64).sqrt() * 0.5f64.powi(l))
                .sum::<f64>()
                * 2.0f64.powi(h as i32 + 1);
            assert_relative_eq!(tv, expected, max_relative = 1e-12);
            assert!(tv <= 2.0f64.powi(h as i32 + 1) * ((h + 1) as f64).sqrt());
        }
    }

    #[test]
    fn telescoped_pairing_matches_quadrature_pairing() {
        // The telescoping identity and the generic weak pairing agree on the
        // materialized measure.
        let tree = build_gamma(1, 5).unwrap();
        let mu = tree.mu_measure().unwrap();
        let op = divergence::<f64>(2);
        // Support covering the tree: the integrand is polynomial on every
        // segment and Gauss–Legendre is exact.
        let smooth = TestFunction::bump(vec![0.1, -0.2], 3.0, 4);
        let quadrature_side = weak_apply(&op, &mu, &smooth, 8).unwrap()[0];
        let telescoped = tree.mu_divergence_pairing(&smooth);
        assert_relative_eq!(quadrature_side, telescoped, epsilon = 1e-13);
        // A bump whose support boundary crosses segments leaves only the
        // quadrature error of the C³ kink.
        let kinked = TestFunction::bump(vec![0.7, 0.2], 0.9, 4);
        let q2 = weak_apply(&op, &mu, &kinked, 24).unwrap()[0];
        let t2 = tree.mu_divergence_pairing(&kinked);
        assert_relative_eq!(q2, t2, epsilon = 1e-4);
    }

    #[test]
    fn face_residual_decays_with_level() {
        let phi = TestFunction::bump(vec![1.0, 0.0], 0.5, 4);
        let lip = phi.lipschitz();
        let mut previous = f64::INFINITY;
        for levels in [4, 5, 6, 7, 8, 9, 10] {
            let tree = build_gamma(1, levels).unwrap();
            let r = tree.face_residual(&phi, 40);
            assert!(
                r <= tree.residual_bound(lip) + 1e-9,
                "L={levels}: {r} vs bound {}",
                tree.residual_bound(lip)
            );
            // monotone within 25% slack
            assert!(r <= previous * 1.25, "L={levels}: {r} vs previous {previous}");
            previous = r;
        }
    }

    #[test]
    fn face_residual_halves_when_level_increments() {
        // Generic bump crossing the face: the leading error is first order
        // in the leaf displacement 2^{−L}, so the residual halves per level.
        let phi = TestFunction::bump(vec![0.7, 0.1], 0.55, 4);
        for levels in 4..=9 {
            let r1 = build_gamma(1, levels).unwrap().face_residual(&phi, 40);
            let r2 = build_gamma(1, levels + 1).unwrap().face_residual(&phi, 40);
            let ratio = r2 / r1;
            assert!(
                (0.3..=0.7).contains(&ratio),
                "L={levels}: ratio {ratio} (r1={r1}, r2={r2})"
            );
        }
        // A bump centered exactly on the face has vanishing normal
        // derivative there; its residual decays at least quadratically.
        let centered = TestFunction::bump(vec![1.0, 0.0], 0.5, 4);
        for levels in 4..=8 {
            let r1 = build_gamma(1, levels).unwrap().face_residual(&centered, 40);
            let r2 = build_gamma(1, levels + 1).unwrap().face_residual(&centered, 40);
            assert!(r2 / r1 <= 0.35, "L={levels}: ratio {}", r2 / r1);
        }
    }

    #[test]
    fn symmetric_test_function_gives_zero_residual() {
        // A function equal on both faces by symmetry pairs to zero against
        // div μ (equal face integrals and equal leaf sums cancel).
        struct EvenInAxis;
        impl ScalarField for EvenInAxis {
            fn value(&self, x: &[f64]) -> f64 {
                let c = x[0] * x[0];
                c + 0.3 * x[1] * x[1]
            }
            fn grad(&self, x: &[f64]) -> Vec<f64> {
                vec![2.0 * x[0], 0.6 * x[1]]
            }
        }
        let tree = build_gamma(1, 6).unwrap();
        let r = tree.face_residual(&EvenInAxis, 40);
        assert!(r < 1e-12, "residual {r}");
    }

    #[test]
    fn resource_guard_refuses_huge_trees() {
        let err = build_gamma(5, 21).unwrap_err();
        assert!(matches!(err, Error::ResourceGuard { .. }));
        // h=5, L=20 is structurally fine but cannot be materialized.
        let tree = build_gamma(5, 20).unwrap();
        let err = tree.mu_measure().unwrap_err();
        match err {
            Error::ResourceGuard { bytes, .. } => {
                assert!(bytes > 1 << 40);
            }
            other => panic!("expected resource guard, got {other}"),
        }
    }
}
