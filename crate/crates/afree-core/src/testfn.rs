//! Compactly supported polynomial bump test functions with exact gradients
//! and Lipschitz bounds, used as the dual side of every weak pairing.

use serde::{Deserialize, Serialize};

/// Anything the weak pairing can integrate against: a C¹ scalar field with
/// an analytic gradient.
pub trait ScalarField: Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
}

/// Multivariate polynomial as a list of monomials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiPoly {
    /// (coefficient, exponent per coordinate)
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl MultiPoly {
    pub fn constant(c: f64, dim: usize) -> Self {
        MultiPoly {
            terms: vec![(c, vec![0; dim])],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, powers)| {
                c * powers
                    .iter()
                    .zip(x)
                    .map(|(&p, &xi)| xi.powi(p as i32))
                    .product::<f64>()
            })
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let dim = x.len();
        (0..dim)
            .map(|axis| {
                self.terms
                    .iter()
                    .map(|(c, powers)| {
                        let p = powers[axis];
                        if p == 0 {
                            return 0.0;
                        }
                        let mut v = c * p as f64 * x[axis].powi(p as i32 - 1);
                        for (a, (&q, &xi)) in powers.iter().zip(x).enumerate() {
                            if a != axis {
                                v *= xi.powi(q as i32);
                            }
                        }
                        v
                    })
                    .sum()
            })
            .collect()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|(_, powers)| powers.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Upper bound of |p| on the box `|x_i − c_i| ≤ r` by summing absolute
    /// coefficient contributions.
    pub fn sup_bound_on_ball(&self, center: &[f64], radius: f64) -> f64 {
        self.terms
            .iter()
            .map(|(c, powers)| {
                c.abs()
                    * powers
                        .iter()
                        .zip(center)
                        .map(|(&p, &ci)| (ci.abs() + radius).powi(p as i32))
                        .product::<f64>()
            })
            .sum()
    }

    /// Coefficient-bound on |∇p| (sum of per-axis sup bounds) over the ball.
    pub fn grad_bound_on_ball(&self, center: &[f64], radius: f64) -> f64 {
        let dim = center.len();
        let per_axis: Vec<f64> = (0..dim)
            .map(|axis| {
                self.terms
                    .iter()
                    .map(|(c, powers)| {
                        let p = powers[axis];
                        if p == 0 {
                            return 0.0;
                        }
                        let mut v = c.abs() * p as f64
                            * (center[axis].abs() + radius).powi(p as i32 - 1);
                        for (a, (&q, &ci)) in powers.iter().zip(center).enumerate() {
                            if a != axis {
                                v *= (ci.abs() + radius).powi(q as i32);
                            }
                        }
                        v
                    })
                    .sum()
            })
            .collect();
        per_axis.iter().map(|b| b * b).sum::<f64>().sqrt()
    }
}

impl ScalarField for MultiPoly {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.gradient(x)
    }
}

/// Smooth compactly supported test function:
/// `Bump`: x ↦ ((1 − |x−c|²/ρ²)₊)^s, supported in the ball B_ρ(c) and C^{s−1};
/// `PolyBump`: a bump multiplied by a polynomial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TestFunction {
    Bump {
        center: Vec<f64>,
        radius: f64,
        smoothness: u32,
    },
    PolyBump {
        center: Vec<f64>,
        radius: f64,
        smoothness: u32,
        poly: MultiPoly,
    },
}

impl TestFunction {
    pub fn bump(center: Vec<f64>, radius: f64, smoothness: u32) -> Self {
        assert!(radius > 0.0, "bump radius must be positive");
        assert!(smoothness >= 3, "smoothness must be at least 3 for C²");
        TestFunction::Bump {
            center,
            radius,
            smoothness,
        }
    }

    pub fn poly_bump(center: Vec<f64>, radius: f64, smoothness: u32, poly: MultiPoly) -> Self {
        assert!(radius > 0.0, "bump radius must be positive");
        assert!(smoothness >= 3, "smoothness must be at least 3 for C²");
        TestFunction::PolyBump {
            center,
            radius,
            smoothness,
            poly,
        }
    }

    pub fn center(&self) -> &[f64] {
        match self {
            TestFunction::Bump { center, .. } | TestFunction::PolyBump { center, .. } => center,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            TestFunction::Bump { radius, .. } | TestFunction::PolyBump { radius, .. } => *radius,
        }
    }

    pub fn dim(&self) -> usize {
        self.center().len()
    }

    fn bump_parts(&self, x: &[f64]) -> (f64, f64, Vec<f64>) {
        // Returns (u = (1−t)₊ with t = |x−c|²/ρ², bump value u^s, x−c).
        let (center, radius, s) = match self {
            TestFunction::Bump {
                center,
                radius,
                smoothness,
            }
            | TestFunction::PolyBump {
                center,
                radius,
                smoothness,
                ..
            } => (center, *radius, *smoothness),
        };
        let diff: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
        let t = diff.iter().map(|d| d * d).sum::<f64>() / (radius * radius);
        let u = (1.0 - t).max(0.0);
        (u, u.powi(s as i32), diff)
    }

    /// Exact supremum of |∇bump| for the plain bump: the radial profile
    /// (1 − r²/ρ²)^s has gradient magnitude (2s/ρ)·t(1−t²)^{s−1} at
    /// t = r/ρ, maximized at t² = 1/(2s−1).
    pub fn lipschitz(&self) -> f64 {
        match self {
            TestFunction::Bump {
                radius, smoothness, ..
            } => bump_lipschitz(*radius, *smoothness),
            TestFunction::PolyBump {
                center,
                radius,
                smoothness,
                poly,
            } => {
                // |∇(B·P)| ≤ Lip(B)·sup|P| + sup|B|·sup|∇P| with sup|B| ≤ 1.
                bump_lipschitz(*radius, *smoothness) * poly.sup_bound_on_ball(center, *radius)
                    + poly.grad_bound_on_ball(center, *radius)
            }
        }
    }
}

fn bump_lipschitz(radius: f64, s: u32) -> f64 {
    let s = s as f64;
    let t_star = 1.0 / (2.0 * s - 1.0f64).sqrt();
    (2.0 * s / radius) * t_star * (1.0 - t_star * t_star).powf(s - 1.0)
}

impl ScalarField for TestFunction {
    fn value(&self, x: &[f64]) -> f64 {
        let (_, bump, _) = self.bump_parts(x);
        match self {
            TestFunction::Bump { .. } => bump,
            TestFunction::PolyBump { poly, .. } => bump * poly.eval(x),
        }
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let (u, bump, diff) = self.bump_parts(x);
        let (radius, s) = match self {
            TestFunction::Bump {
                radius, smoothness, ..
            }
            | TestFunction::PolyBump {
                radius, smoothness, ..
            } => (*radius, *smoothness),
        };
        if u <= 0.0 {
            return vec![0.0; x.len()];
        }
        // ∇(u^s) = s·u^{s−1}·(−2(x−c)/ρ²)
        let factor = -2.0 * s as f64 * u.powi(s as i32 - 1) / (radius * radius);
        let bump_grad: Vec<f64> = diff.iter().map(|d| factor * d).collect();
        match self {
            TestFunction::Bump { .. } => bump_grad,
            TestFunction::PolyBump { poly, .. } => {
                let pval = poly.eval(x);
                let pgrad = poly.gradient(x);
                bump_grad
                    .iter()
                    .zip(&pgrad)
                    .map(|(bg, pg)| bg * pval + bump * pg)
                    .collect()
            }
        }
    }
}

/// A default deterministic bump suite covering the cube [−1,1]^d and its
/// faces: one central bump, one per face center (straddling the boundary),
/// and corner-leaning bumps.
pub fn default_suite(d: usize, count: usize) -> Vec<TestFunction> {
    let mut suite = Vec::new();
    suite.push(TestFunction::bump(vec![0.0; d], 0.8, 4));
    for axis in 0..d {
        for sign in [1.0f64, -1.0] {
            let mut c = vec![0.0; d];
            c[axis] = sign;
            suite.push(TestFunction::bump(c, 0.6, 4));
        }
    }
    // Diagonal fill with varied radii.
    let mut k = 1usize;
    while suite.len() < count {
        let c: Vec<f64> = (0..d)
            .map(|a| {
                let phase = (k * (a + 2) * 2654435761usize) % 2000;
                phase as f64 / 1000.0 - 1.0
            })
            .collect();
        let radius = 0.4 + 0.3 * ((k * 7919) % 10) as f64 / 10.0;
        suite.push(TestFunction::bump(c, radius, 4));
        k += 1;
    }
    suite.truncate(count);
    suite
}

/// Largest Lipschitz bound over a suite.
pub fn suite_lipschitz(suite: &[TestFunction]) -> f64 {
    suite.iter().map(TestFunction::lipschitz).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn finite_diff_grad(f: &impl ScalarField, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f.value(&xp) - f.value(&xm)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn bump_support_and_smooth_values() {
        let b = TestFunction::bump(vec![0.0, 0.0], 1.0, 4);
        assert_relative_eq!(b.value(&[0.0, 0.0]), 1.0);
        assert_eq!(b.value(&[1.0, 0.0]), 0.0);
        assert_eq!(b.value(&[2.0, 0.3]), 0.0);
        assert!(b.grad(&[1.5, 0.0]).iter().all(|g| *g == 0.0));
        let v = b.value(&[0.5, 0.0]);
        assert_relative_eq!(v, 0.75f64.powi(4), epsilon = 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = TestFunction::bump(vec![0.2, -0.1, 0.4], 0.9, 4);
        let poly = MultiPoly {
            terms: vec![(1.5, vec![1, 0, 2]), (-0.3, vec![0, 1, 0])],
        };
        let pb = TestFunction::poly_bump(vec![0.0, 0.3, -0.2], 0.7, 5, poly.clone());
        for x in [
            vec![0.1, 0.0, 0.3],
            vec![0.4, 0.2, 0.1],
            vec![-0.2, 0.5, -0.3],
        ] {
            for f in [&b, &pb] {
                let analytic = f.grad(&x);
                let numeric = finite_diff_grad(f, &x);
                for (a, n) in analytic.iter().zip(&numeric) {
                    assert_relative_eq!(a, n, epsilon = 1e-6, max_relative = 1e-5);
                }
            }
            let pa = poly.gradient(&x);
            let pn = finite_diff_grad(&poly, &x);
            for (a, n) in pa.iter().zip(&pn) {
                assert_relative_eq!(a, n, epsilon = 1e-6, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn lipschitz_bound_dominates_sampled_gradients() {
        let b = TestFunction::bump(vec![0.0, 0.0], 0.5, 4);
        let lip = b.lipschitz();
        let mut max_seen = 0.0f64;
        for i in 0..200 {
            for j in 0..200 {
                let x = [i as f64 / 200.0 - 0.5, j as f64 / 200.0 - 0.5];
                let g = b.grad(&x);
                let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
                max_seen = max_seen.max(norm);
            }
        }
        assert!(max_seen <= lip * (1.0 + 1e-9), "{max_seen} vs {lip}");
        // The bound is tight for the plain bump: the sampled maximum gets
        // close.
        assert!(max_seen >= 0.95 * lip);
    }

    #[test]
    fn default_suite_is_deterministic_and_sized() {
        let s1 = default_suite(2, 10);
        let s2 = default_suite(2, 10);
        assert_eq!(s1, s2);
        assert_eq!(s1.len(), 10);
        assert!(suite_lipschitz(&s1) > 0.0);
    }
}
