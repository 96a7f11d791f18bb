//! Gauss-Legendre rules on an interval and a product rule on the unit sphere.

use std::f64::consts::{PI, TAU};

use crate::vec3::Direction;

/// Default Gauss-Legendre nodes in `cos(theta)` for the sphere rule.
pub const DEFAULT_THETA_NODES: usize = 32;
/// Default trapezoid nodes in azimuth for the sphere rule.
pub const DEFAULT_PHI_NODES: usize = 64;

/// Gauss-Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi's initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
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
        dp = if d != 0.0 { d } else { dp };
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> GaussRule {
        let (nodes, weights) = gauss_legendre(n);
        GaussRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(t, w)` pairs for `[a, b]`.
    pub fn points(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<E>(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
        let mut acc = 0.0;
        for (t, w) in self.points(a, b) {
            acc += w * f(t)?;
        }
        Ok(acc)
    }
}

/// One node of a sphere rule, weight in steradians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereNode {
    pub n: Direction,
    pub weight: f64,
}

/// Product rule: Gauss-Legendre in `cos(theta)` times the trapezoid rule in `phi`.
///
/// With `nt` polar and `np` azimuthal nodes it integrates every polynomial in
/// `(x, y, z)` of total degree `L` exactly when `L <= 2 nt - 1` and `L < np`.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    nodes: Vec<SphereNode>,
    theta_nodes: usize,
    phi_nodes: usize,
}

impl SphereQuadrature {
    pub fn product(theta_nodes: usize, phi_nodes: usize) -> SphereQuadrature {
        let (z, wz) = gauss_legendre(theta_nodes);
        let dphi = TAU / phi_nodes as f64;
        let mut nodes = Vec::with_capacity(theta_nodes * phi_nodes);
        for (&ct, &w) in z.iter().zip(&wz) {
            let theta = ct.clamp(-1.0, 1.0).acos();
            for j in 0..phi_nodes {
                let phi = (j as f64 + 0.5) * dphi;
                nodes.push(SphereNode { n: Direction::from_angles(theta, phi), weight: w * dphi });
            }
        }
        SphereQuadrature { nodes, theta_nodes, phi_nodes }
    }

    /// Smallest product rule exact through polynomial degree `degree`.
    pub fn for_degree(degree: usize) -> SphereQuadrature {
        Self::product(degree / 2 + 1, degree + 1)
    }

    pub fn nodes(&self) -> &[SphereNode] {
        &self.nodes
    }

    pub fn theta_nodes(&self) -> usize {
        self.theta_nodes
    }

    pub fn phi_nodes(&self) -> usize {
        self.phi_nodes
    }

    /// Highest total polynomial degree integrated exactly.
    pub fn exact_degree(&self) -> usize {
        (2 * self.theta_nodes - 1).min(self.phi_nodes - 1)
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    pub fn integrate(&self, f: impl Fn(Direction) -> f64) -> f64 {
        self.nodes.iter().map(|node| node.weight * f(node.n)).sum()
    }
}

impl Default for SphereQuadrature {
    fn default() -> Self {
        Self::product(DEFAULT_THETA_NODES, DEFAULT_PHI_NODES)
    }
}
