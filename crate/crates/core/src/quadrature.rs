//! Quadrature rules: Gauss-Legendre, Gauss-Hermite, the Fubini-Study rule on
//! the zeta plane, and the scaled complex-Gaussian product rule.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Gauss-Legendre nodes and weights on [-1, 1].
///
/// Newton iteration on the Legendre recurrence; exact for polynomials of
/// degree 2n-1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative by recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Legendre transported to [0, 1]; weights sum to 1.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        w.iter().map(|t| 0.5 * t).collect(),
    )
}

/// Gauss-Hermite nodes and weights for the weight e^{-x^2} on the real line.
///
/// Golub-Welsch: eigen-decomposition of the symmetric Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for j in 1..n {
        let b = (j as f64 / 2.0).sqrt();
        jac[(j - 1, j)] = b;
        jac[(j, j - 1)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let q0 = eig.eigenvectors[(0, j)];
            (eig.eigenvalues[j], std::f64::consts::PI.sqrt() * q0 * q0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // Symmetrize: the rule is even in x, eigen-solvers are not.
    let n2 = n / 2;
    for i in 0..n2 {
        let w = 0.5 * (pairs[i].1 + pairs[n - 1 - i].1);
        let x = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
        pairs[i] = (-x, w);
        pairs[n - 1 - i] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// Node/weight table for the complex-Gaussian probability measure
/// (k/pi) e^{-k|v|^2} dRe(v) dIm(v) on one complex coordinate.
#[derive(Debug, Clone)]
pub struct ComplexGaussRule {
    /// Real axis nodes in the scaled variable (node/sqrt(k) per axis).
    pub axis_nodes: Vec<f64>,
    /// Weights per axis; the product of two axis weights already includes 1/pi.
    pub axis_weights: Vec<f64>,
}

impl ComplexGaussRule {
    pub fn new(order: usize, k: f64) -> Self {
        let (x, w) = gauss_hermite(order);
        let s = 1.0 / k.sqrt();
        let pi_quarter_inv = 1.0 / std::f64::consts::PI.sqrt();
        ComplexGaussRule {
            axis_nodes: x.iter().map(|t| t * s).collect(),
            axis_weights: w.iter().map(|t| t * pi_quarter_inv).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.axis_nodes.len()
    }

    /// All 2D nodes (as complex numbers) with product weights.
    pub fn nodes_2d(&self) -> Vec<(Complex64, f64)> {
        let mut out = Vec::with_capacity(self.order() * self.order());
        for (i, &x) in self.axis_nodes.iter().enumerate() {
            for (j, &y) in self.axis_nodes.iter().enumerate() {
                out.push((
                    Complex64::new(x, y),
                    self.axis_weights[i] * self.axis_weights[j],
                ));
            }
        }
        out
    }
}

/// Quadrature for the Fubini-Study probability measure
/// dFS = dmu(zeta) / (pi (1+|zeta|^2)^2) on the zeta plane.
///
/// The substitution s = |zeta|^2/(1+|zeta|^2) turns the radial factor into the
/// uniform measure ds on [0,1]; the angle is handled by the trapezoid rule,
/// which is exact for harmonics of order below `angular_order`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FsQuadrature {
    pub radial_order: usize,
    pub angular_order: usize,
    #[serde(skip)]
    nodes: Vec<(Complex64, f64)>,
}

impl FsQuadrature {
    pub fn new(radial_order: usize, angular_order: usize) -> Self {
        assert!(radial_order >= 1 && angular_order >= 1);
        let (s, ws) = gauss_legendre_01(radial_order);
        let mut nodes = Vec::with_capacity(radial_order * angular_order);
        for (si, wi) in s.iter().zip(&ws) {
            let r = (si / (1.0 - si)).sqrt();
            let w = wi / angular_order as f64;
            for j in 0..angular_order {
                let th = 2.0 * std::f64::consts::PI * j as f64 / angular_order as f64;
                nodes.push((Complex64::from_polar(r, th), w));
            }
        }
        FsQuadrature {
            radial_order,
            angular_order,
            nodes,
        }
    }

    pub fn nodes(&self) -> &[(Complex64, f64)] {
        &self.nodes
    }

    pub fn integrate<F: FnMut(Complex64) -> Complex64>(&self, mut f: F) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(z, w) in &self.nodes {
            acc += w * f(z);
        }
        acc
    }

    /// Rebuild node tables after deserialization.
    pub fn rebuild(&mut self) {
        *self = FsQuadrature::new(self.radial_order, self.angular_order);
    }
}

impl PartialEq for FsQuadrature {
    fn eq(&self, other: &Self) -> bool {
        self.radial_order == other.radial_order && self.angular_order == other.angular_order
    }
}
