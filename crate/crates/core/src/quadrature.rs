//! Gauss-Legendre and Gauss-Hermite rules.
//!
//! Nodes are found by Newton iteration on the three-term recurrences, which is
//! accurate to round-off for the sizes used here (a few hundred Legendre nodes,
//! up to 128 Hermite nodes).

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Number of Legendre nodes carried by every density grid on [-1, 1].
pub const LEGENDRE_NODES: usize = 201;
/// Number of Hermite nodes used for Gaussian expectations.
pub const HERMITE_NODES: usize = 64;

/// A quadrature rule: `sum_k weights[k] * f(nodes[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss-Legendre rule on [-1, 1]; nodes ascending, weights sum to 2.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        // Tricomi initial guess for the i-th largest root.
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
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
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Physicists' Gauss-Hermite rule for the weight `exp(-x^2)`; weights sum to sqrt(pi).
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let pim4 = PI.powf(-0.25);
    let mut z: f64 = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[n - 1],
            3 => 1.91 * z - 0.91 * nodes[n - 2],
            _ => 2.0 * z - nodes[n + 1 - i],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let (p, d) = hermite_normalized(n, z, pim4);
            pp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = hermite_normalized(n, z, pim4);
        if d != 0.0 {
            pp = d;
        }
        nodes[n - 1 - i] = z;
        nodes[i] = -z;
        let w = 2.0 / (pp * pp);
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

// Orthonormal Hermite recurrence; returns (H_n(x), H_n'(x)) up to the common normalisation.
fn hermite_normalized(n: usize, x: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = x * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    let d = (2.0 * n as f64).sqrt() * p2;
    (p1, d)
}

/// Cached 201-node Legendre rule.
pub fn legendre_default() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(LEGENDRE_NODES))
}

/// Cached 64-node Hermite rule.
pub fn hermite_default() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(HERMITE_NODES))
}

/// Nodes and probability weights for `N(mean, var)` built from a Hermite rule.
///
/// Returned weights sum to one, so `E f(Z) ~= sum w_k f(x_k)`.
pub fn normal_nodes(rule: &Rule, mean: f64, var: f64) -> Vec<(f64, f64)> {
    let scale = (2.0 * var).sqrt();
    let norm = PI.sqrt();
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(x, w)| (mean + scale * x, w / norm))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(201);
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
        let m2: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x * x).sum();
        assert!((m2 - 2.0 / 3.0).abs() < 1e-13);
        let m10: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x.powi(10))
            .sum();
        assert!((m10 - 2.0 / 11.0).abs() < 1e-13);
        // symmetric, ascending, odd rule contains the origin
        assert_eq!(rule.nodes[100], 0.0);
        for k in 0..201 {
            assert_eq!(rule.nodes[k], -rule.nodes[200 - k]);
        }
        assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn legendre_even_sizes() {
        let rule = gauss_legendre(200);
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
        let e: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * x.exp())
            .sum();
        assert!((e - (1f64.exp() - (-1f64).exp())).abs() < 1e-13);
    }

    #[test]
    fn hermite_moments() {
        for n in [16, 64, 128] {
            let rule = gauss_hermite(n);
            let pts = normal_nodes(&rule, 0.0, 1.0);
            let m0: f64 = pts.iter().map(|(_, w)| w).sum();
            let m2: f64 = pts.iter().map(|(x, w)| w * x * x).sum();
            let m4: f64 = pts.iter().map(|(x, w)| w * x.powi(4)).sum();
            assert!((m0 - 1.0).abs() < 1e-13, "n={n} m0={m0}");
            assert!((m2 - 1.0).abs() < 1e-12, "n={n}");
            assert!((m4 - 3.0).abs() < 1e-11, "n={n}");
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn hermite_gaussian_mgf() {
        // E exp(t Z) = exp(t^2 var / 2) for Z ~ N(0, var)
        let pts = normal_nodes(hermite_default(), 0.0, 2.0);
        let v: f64 = pts.iter().map(|(x, w)| w * (0.7 * x).exp()).sum();
        assert!((v - (0.49f64).exp()).abs() < 1e-12);
    }
}
