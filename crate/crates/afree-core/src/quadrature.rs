//! Gauss–Legendre rules, tensor grids, and sphere/circle rules for the
//! ambient dimensions the verification targets (d ≤ 4 for spheres).

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use crate::error::{Error, Result};

/// Nodes and weights of the n-point Gauss–Legendre rule on [−1, 1],
/// exact for polynomials of degree ≤ 2n−1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    static CACHE: OnceLock<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&n) {
        return rule.clone();
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess, Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    cache
        .lock()
        .unwrap()
        .insert(n, (nodes.clone(), weights.clone()));
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        xs.iter().map(|x| mid + half * x).collect(),
        ws.iter().map(|w| w * half).collect(),
    )
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

/// Visits every multi-index of the tensor grid with the given axis sizes.
pub fn for_tensor_indices(sizes: &[usize], mut visit: impl FnMut(&[usize])) {
    let k = sizes.len();
    if k == 0 {
        visit(&[]);
        return;
    }
    if sizes.iter().any(|&s| s == 0) {
        return;
    }
    let mut idx = vec![0usize; k];
    loop {
        visit(&idx);
        let mut axis = k;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < sizes[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Equispaced trapezoid points on the circle: `n` angles with uniform
/// weight 2π/n (spectrally accurate for smooth periodic integrands).
pub fn circle_rule(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let w = 2.0 * std::f64::consts::PI / n as f64;
    (0..n)
        .map(|k| (2.0 * std::f64::consts::PI * k as f64 / n as f64, w))
        .collect()
}

/// Quadrature for the unit sphere S^{d−1}: pairs of (point, weight) with
/// Σw = surface measure. Supported for d ∈ {2, 3, 4}.
///
/// d = 2 is the `order`-point trapezoid on the circle; d = 3 tensors
/// Gauss–Legendre in cos θ with a 2·order trapezoid in azimuth; d = 4 adds a
/// Gauss–Legendre polar layer with the sin² factor folded into the weights.
pub fn sphere_rule(d: usize, order: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    assert!(order >= 1);
    match d {
        2 => Ok(circle_rule(order)
            .into_iter()
            .map(|(theta, w)| (vec![theta.cos(), theta.sin()], w))
            .collect()),
        3 => {
            let (us, wus) = gauss_legendre(order);
            let azimuth = circle_rule(2 * order);
            // dH² = sinθ dθ dφ = du dφ with u = cosθ.
            let mut rule = Vec::with_capacity(us.len() * azimuth.len());
            for (u, wu) in us.iter().zip(&wus) {
                let sin_theta = (1.0 - u * u).sqrt();
                for (phi, wphi) in &azimuth {
                    rule.push((
                        vec![sin_theta * phi.cos(), sin_theta * phi.sin(), *u],
                        wu * wphi,
                    ));
                }
            }
            Ok(rule)
        }
        4 => {
            let (psis, wpsis) = gauss_legendre_on(order, 0.0, std::f64::consts::PI);
            let inner = sphere_rule(3, order)?;
            let mut rule = Vec::with_capacity(psis.len() * inner.len());
            for (psi, wpsi) in psis.iter().zip(&wpsis) {
                let (c, s) = (psi.cos(), psi.sin());
                for (omega, womega) in &inner {
                    rule.push((
                        vec![c, s * omega[0], s * omega[1], s * omega[2]],
                        wpsi * s * s * womega,
                    ));
                }
            }
            Ok(rule)
        }
        _ => Err(Error::UnsupportedSphereDim(d)),
    }
}

/// Surface measure of the unit sphere S^{d−1}.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        4 => 2.0 * std::f64::consts::PI * std::f64::consts::PI,
        _ => {
            // Γ-recursion: |S^{d-1}| = 2π^{d/2}/Γ(d/2)
            let mut area = if d % 2 == 0 {
                2.0 * std::f64::consts::PI.powi((d / 2) as i32)
            } else {
                2.0f64.powi(d as i32) * std::f64::consts::PI.powi(((d - 1) / 2) as i32)
            };
            let mut denom = 1.0;
            if d % 2 == 0 {
                for k in 1..d / 2 {
                    denom *= k as f64;
                }
            } else {
                for k in (1..=d - 2).step_by(2) {
                    denom *= k as f64;
                }
            }
            area /= denom;
            area
        }
    }
}

/// Volume of the unit ball in ℝᵈ.
pub fn ball_volume(d: usize) -> f64 {
    sphere_area(d) / d as f64
}

/// Quadrature for the ball of given radius: radial Gauss–Legendre with the
/// ρ^{d−1} factor folded in, tensored with the sphere rule.
pub fn ball_rule(d: usize, radius: f64, order: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    let (rs, wrs) = gauss_legendre_on(order, 0.0, radius);
    let surface = sphere_rule(d, order)?;
    let mut rule = Vec::with_capacity(rs.len() * surface.len());
    for (r, wr) in rs.iter().zip(&wrs) {
        let radial = wr * r.powi(d as i32 - 1);
        for (omega, womega) in &surface {
            rule.push((omega.iter().map(|x| x * r).collect(), radial * womega));
        }
    }
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gl_nodes_integrate_polynomials_exactly() {
        for n in 1..=12 {
            let (xs, ws) = gauss_legendre(n);
            // ∫_{-1}^{1} x^k dx for k ≤ 2n−1
            for k in 0..2 * n {
                let got: f64 = xs
                    .iter()
                    .zip(&ws)
                    .map(|(x, w)| w * x.powi(k as i32))
                    .sum();
                let expected = if k % 2 == 0 {
                    2.0 / (k as f64 + 1.0)
                } else {
                    0.0
                };
                assert_relative_eq!(got, expected, epsilon = 1e-13, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn gl_on_interval() {
        let (xs, ws) = gauss_legendre_on(5, 0.0, 2.0);
        let got: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x * x).sum();
        assert_relative_eq!(got, 8.0 / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn sphere_rules_have_correct_total_measure() {
        for d in 2..=4 {
            let rule = sphere_rule(d, 16).unwrap();
            let total: f64 = rule.iter().map(|(_, w)| w).sum();
            assert_relative_eq!(total, sphere_area(d), max_relative = 1e-10);
            for (x, _) in &rule {
                let norm: f64 = x.iter().map(|c| c * c).sum::<f64>();
                assert_relative_eq!(norm, 1.0, epsilon = 1e-12);
            }
        }
        assert!(sphere_rule(5, 8).is_err());
    }

    #[test]
    fn sphere_rule_integrates_coordinates() {
        // ∫_{S²} x₃² dH² = 4π/3
        let rule = sphere_rule(3, 24).unwrap();
        let got: f64 = rule.iter().map(|(x, w)| w * x[2] * x[2]).sum();
        assert_relative_eq!(got, 4.0 * std::f64::consts::PI / 3.0, max_relative = 1e-10);
        // odd moments vanish
        let odd: f64 = rule.iter().map(|(x, w)| w * x[0]).sum();
        assert!(odd.abs() < 1e-12);
    }

    #[test]
    fn ball_rule_measures_volume_and_moments() {
        for d in 2..=3 {
            let rule = ball_rule(d, 1.0, 20).unwrap();
            let vol: f64 = rule.iter().map(|(_, w)| w).sum();
            assert_relative_eq!(vol, ball_volume(d), max_relative = 1e-10);
        }
        // ∫_{B₁ ⊂ ℝ²} x₁² = π/4
        let rule = ball_rule(2, 1.0, 24).unwrap();
        let got: f64 = rule.iter().map(|(x, w)| w * x[0] * x[0]).sum();
        assert_relative_eq!(got, std::f64::consts::PI / 4.0, max_relative = 1e-10);
    }

    #[test]
    fn tensor_indices_cover_grid() {
        let mut count = 0;
        let mut seen_last = vec![0, 0, 0];
        for_tensor_indices(&[2, 3, 4], |idx| {
            count += 1;
            seen_last = idx.to_vec();
        });
        assert_eq!(count, 24);
        assert_eq!(seen_last, vec![1, 2, 3]);
        let mut empty_called = 0;
        for_tensor_indices(&[], |_| empty_called += 1);
        assert_eq!(empty_called, 1);
    }

    #[test]
    fn pairwise_matches_naive_sum() {
        let values: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = values.iter().sum();
        assert_relative_eq!(pairwise_sum(&values), naive, epsilon = 1e-9);
    }
}
