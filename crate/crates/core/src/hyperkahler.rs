//! Linear algebra of the flat hyperkahler structure on R^{4n}: the complex
//! structures I, J, K, the sphere aI + bJ + cK, the Kahler two-forms, and the
//! fiberwise restriction of the twistor form.
//!
//! Coordinates are block-ordered (x1, x2, x3, x4), each block of length n,
//! with z = x1 + i x2 and w = x3 + i x4.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub const UNIT_TOL: f64 = 1e-12;

/// A point of R^{4n} in block coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RealPoint4n {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: Vec<f64>,
    pub x4: Vec<f64>,
}

impl RealPoint4n {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>, x3: Vec<f64>, x4: Vec<f64>) -> Self {
        let n = x1.len();
        assert!(n >= 1 && x2.len() == n && x3.len() == n && x4.len() == n);
        RealPoint4n { x1, x2, x3, x4 }
    }

    pub fn zero(n: usize) -> Self {
        RealPoint4n::new(vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n])
    }

    pub fn n(&self) -> usize {
        self.x1.len()
    }

    /// z = x1 + i x2, componentwise.
    pub fn z(&self) -> Vec<Complex64> {
        self.x1
            .iter()
            .zip(&self.x2)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect()
    }

    /// w = x3 + i x4, componentwise.
    pub fn w(&self) -> Vec<Complex64> {
        self.x3
            .iter()
            .zip(&self.x4)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect()
    }

    pub fn from_zw(z: &[Complex64], w: &[Complex64]) -> Self {
        RealPoint4n::new(
            z.iter().map(|c| c.re).collect(),
            z.iter().map(|c| c.im).collect(),
            w.iter().map(|c| c.re).collect(),
            w.iter().map(|c| c.im).collect(),
        )
    }

    /// Flat column-vector layout (x1 block, then x2, x3, x4).
    pub fn to_vector(&self) -> nalgebra::DVector<f64> {
        let n = self.n();
        let mut v = nalgebra::DVector::zeros(4 * n);
        for l in 0..n {
            v[l] = self.x1[l];
            v[n + l] = self.x2[l];
            v[2 * n + l] = self.x3[l];
            v[3 * n + l] = self.x4[l];
        }
        v
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// A unit vector (a, b, c), indexing the induced complex structure aI+bJ+cK.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SpherePoint {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let s = SpherePoint { a, b, c };
        if (s.norm_sqr() - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitSphere(a, b, c));
        }
        Ok(s)
    }

    /// Normalizes a nonzero vector onto the sphere.
    pub fn normalized(a: f64, b: f64, c: f64) -> Self {
        let r = (a * a + b * b + c * c).sqrt();
        SpherePoint {
            a: a / r,
            b: b / r,
            c: c / r,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.a * self.a + self.b * self.b + self.c * self.c
    }

    pub fn dist(&self, other: &SpherePoint) -> f64 {
        ((self.a - other.a).powi(2) + (self.b - other.b).powi(2) + (self.c - other.c).powi(2))
            .sqrt()
    }
}

/// Builds the 4n x 4n matrix of I (block form [[0,-1,0,0],[1,0,0,0],[0,0,0,-1],[0,0,1,0]]).
pub fn matrix_i(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(4 * n, 4 * n);
    for l in 0..n {
        m[(n + l, l)] = 1.0;
        m[(l, n + l)] = -1.0;
        m[(3 * n + l, 2 * n + l)] = 1.0;
        m[(2 * n + l, 3 * n + l)] = -1.0;
    }
    m
}

/// Matrix of J: takes d/dx1 -> d/dx3 and d/dx4 -> d/dx2.
pub fn matrix_j(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(4 * n, 4 * n);
    for l in 0..n {
        m[(2 * n + l, l)] = 1.0;
        m[(l, 2 * n + l)] = -1.0;
        m[(n + l, 3 * n + l)] = 1.0;
        m[(3 * n + l, n + l)] = -1.0;
    }
    m
}

/// Matrix of K: takes d/dx1 -> d/dx4 and d/dx2 -> d/dx3.
pub fn matrix_k(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(4 * n, 4 * n);
    for l in 0..n {
        m[(3 * n + l, l)] = 1.0;
        m[(l, 3 * n + l)] = -1.0;
        m[(2 * n + l, n + l)] = 1.0;
        m[(n + l, 2 * n + l)] = -1.0;
    }
    m
}

/// An induced complex structure aI + bJ + cK together with its matrix.
#[derive(Debug, Clone)]
pub struct ComplexStructure {
    pub sphere: SpherePoint,
    pub n: usize,
    pub matrix: DMatrix<f64>,
}

/// Assembles the matrix of aI + bJ + cK on R^{4n}.
pub fn structure_matrix(s: SpherePoint, n: usize) -> Result<ComplexStructure> {
    SpherePoint::new(s.a, s.b, s.c)?;
    let m = matrix_i(n) * s.a + matrix_j(n) * s.b + matrix_k(n) * s.c;
    Ok(ComplexStructure {
        sphere: s,
        n,
        matrix: m,
    })
}

/// A constant-coefficient 2-form on R^{4n}: omega(X, X') = X^T M X' with M
/// antisymmetric. The basis form dx_i ^ dx_j has M_ij = +1, M_ji = -1.
#[derive(Debug, Clone)]
pub struct TwoForm4n {
    coeff: DMatrix<f64>,
}

impl TwoForm4n {
    pub fn new(coeff: DMatrix<f64>) -> Self {
        let anti = (&coeff + coeff.transpose()).norm();
        assert!(anti == 0.0, "coefficient matrix must be exactly antisymmetric");
        TwoForm4n { coeff }
    }

    pub fn coeff(&self) -> &DMatrix<f64> {
        &self.coeff
    }

    pub fn dim(&self) -> usize {
        self.coeff.nrows()
    }

    pub fn eval(&self, x: &nalgebra::DVector<f64>, y: &nalgebra::DVector<f64>) -> f64 {
        (x.transpose() * &self.coeff * y)[(0, 0)]
    }
}

/// The Kahler form omega_A(X, X') = g(AX, X') = X^T A^T X'.
pub fn kahler_form(s: SpherePoint, n: usize) -> Result<TwoForm4n> {
    let a = structure_matrix(s, n)?;
    Ok(TwoForm4n::new(a.matrix.transpose()))
}

/// Fiberwise restriction of the twistor form omega_M; coincides with
/// kahler_form but is checked against its own printed n=1 expansion.
pub fn omega_m_fiberwise(s: SpherePoint, n: usize) -> Result<TwoForm4n> {
    kahler_form(s, n)
}

/// The scalar lambda with form^{2n} = lambda (2n)! dx1^(1) ^ ... ^ dx4^(n),
/// computed as the Pfaffian of the coefficient matrix. Degenerate forms give 0.
pub fn top_wedge_coefficient(form: &TwoForm4n) -> f64 {
    pfaffian(form.coeff())
}

/// Pfaffian of an antisymmetric matrix. Recursive cofactor expansion up to
/// dimension 12, skew-symmetric Householder tridiagonalization beyond.
pub fn pfaffian(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    if n % 2 == 1 {
        return 0.0;
    }
    if n == 0 {
        return 1.0;
    }
    if n <= 12 {
        pfaffian_recursive(m)
    } else {
        pfaffian_tridiag(m.clone())
    }
}

fn pfaffian_recursive(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 2 {
        return m[(0, 1)];
    }
    let mut acc = 0.0;
    for j in 1..n {
        let a = m[(0, j)];
        if a == 0.0 {
            continue;
        }
        // Minor with rows/cols 0 and j removed.
        let keep: Vec<usize> = (1..n).filter(|&i| i != j).collect();
        let mut sub = DMatrix::zeros(n - 2, n - 2);
        for (r, &i) in keep.iter().enumerate() {
            for (c, &l) in keep.iter().enumerate() {
                sub[(r, c)] = m[(i, l)];
            }
        }
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        acc += sign * a * pfaffian_recursive(&sub);
    }
    acc
}

/// Householder reduction A -> H A H^T to skew tridiagonal form; the Pfaffian
/// is the product of the (2i, 2i+1) superdiagonal entries times det(H).
fn pfaffian_tridiag(mut a: DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut det_h = 1.0;
    for col in 0..n - 2 {
        // Zero out a[col+2.., col] with a Householder reflection on rows col+1..
        let tail = a.view_range(col + 1.., col).clone_owned();
        let alpha = tail.norm();
        if alpha == 0.0 {
            continue;
        }
        let mut v = tail;
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vn = v.norm();
        if vn == 0.0 {
            continue;
        }
        v /= vn;
        // A <- (I - 2vv^T) A (I - 2vv^T) acting on rows/cols col+1.. only.
        let mut block = a.view_range(col + 1.., ..).clone_owned();
        let vt_block = v.transpose() * &block;
        block -= 2.0 * &v * vt_block;
        a.view_range_mut(col + 1.., ..).copy_from(&block);
        let mut block2 = a.view_range(.., col + 1..).clone_owned();
        let block2_v = &block2 * &v;
        block2 -= 2.0 * block2_v * v.transpose();
        a.view_range_mut(.., col + 1..).copy_from(&block2);
        det_h = -det_h;
    }
    let mut pf = 1.0;
    let mut i = 0;
    while i + 1 < n {
        pf *= a[(i, i + 1)];
        i += 2;
    }
    pf * det_h
}
