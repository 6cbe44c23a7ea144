//! The truncated weighted Bergman space A^(k)(C^{2n+1}).
//!
//! Its elements are independent of the sphere coordinate, so the space is
//! represented as polynomials in (v, xi) with the Gaussian weight
//! (k/pi)^{2n} e^{-k(|v|^2+|xi|^2)}; the sphere factor of the measure has
//! total mass one and drops out of every inner product. The monomials
//! psi_{l,m} = sqrt(k^{|l|+|m|}/(l! m!)) v^l xi^m, ordered graded-
//! lexicographically and truncated at total degree D, are an orthonormal
//! basis.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::One;

use crate::charts::ChartCoords;
use crate::error::{Error, Result};

/// ln(n!) with exact summation of logs; good to full precision for the
/// factorials reachable at practical cutoffs.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Binomial coefficient as f64 (exact for the small arguments used here).
pub fn binomial(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    let r = r.min(n - r);
    let mut out = 1.0;
    for i in 0..r {
        out = out * ((n - i) as f64) / ((i + 1) as f64);
    }
    out
}

/// A multi-index pair (l, m) with l, m in Z_+^n.
pub type IndexPair = (Vec<usize>, Vec<usize>);

/// Orthonormal monomial basis of the degree-D truncation of A^(k).
#[derive(Debug, Clone, PartialEq)]
pub struct FockBasis {
    pub n: usize,
    pub k: f64,
    pub cutoff: usize,
    indices: Vec<IndexPair>,
}

/// All multi-indices of length `len` with entry sum exactly `total`, in
/// lexicographic order.
fn compositions(len: usize, total: usize) -> Vec<Vec<usize>> {
    if len == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for rest in compositions(len - 1, total - first) {
            let mut idx = Vec::with_capacity(len);
            idx.push(first);
            idx.extend(rest);
            out.push(idx);
        }
    }
    debug_assert!(out.windows(2).all(|w| w[0] < w[1]));
    out
}

impl FockBasis {
    pub fn new(n: usize, k: f64, cutoff: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("need n >= 1".into()));
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "semiclassical parameter k must be positive and finite, got {k}"
            )));
        }
        let mut indices = Vec::new();
        for degree in 0..=cutoff {
            for joint in compositions(2 * n, degree) {
                let (l, m) = joint.split_at(n);
                indices.push((l.to_vec(), m.to_vec()));
            }
        }
        Ok(FockBasis {
            n,
            k,
            cutoff,
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[IndexPair] {
        &self.indices
    }

    pub fn index(&self, i: usize) -> Result<&IndexPair> {
        self.indices.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            size: self.indices.len(),
        })
    }

    pub fn degree(&self, i: usize) -> Result<usize> {
        let (l, m) = self.index(i)?;
        Ok(l.iter().sum::<usize>() + m.iter().sum::<usize>())
    }

    /// Number of leading basis elements of total degree <= `max_degree`
    /// (a prefix, thanks to the graded order).
    pub fn prefix_len(&self, max_degree: usize) -> usize {
        self.indices
            .iter()
            .take_while(|(l, m)| l.iter().sum::<usize>() + m.iter().sum::<usize>() <= max_degree)
            .count()
    }

    /// Normalization sqrt(k^{|l|+|m|}/(l! m!)) evaluated in log space.
    pub fn norm_coeff(&self, l: &[usize], m: &[usize]) -> f64 {
        let degree = l.iter().sum::<usize>() + m.iter().sum::<usize>();
        let ln_fact: f64 = l
            .iter()
            .chain(m.iter())
            .map(|&e| ln_factorial(e))
            .sum();
        (0.5 * (degree as f64 * self.k.ln() - ln_fact)).exp()
    }
}

/// The product measure dmu_k: Gaussian fiber factor times the unit-mass
/// sphere factor 1/(pi (1+|zeta|^2)^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMeasure {
    pub n: usize,
    pub k: f64,
}

impl WeightedMeasure {
    /// (k/pi)^{2n} e^{-k(|v|^2+|xi|^2)}.
    pub fn fiber_density(&self, v: &[Complex64], xi: &[Complex64]) -> f64 {
        let s: f64 = v.iter().chain(xi.iter()).map(|z| z.norm_sqr()).sum();
        (self.k / std::f64::consts::PI).powi(2 * self.n as i32) * (-self.k * s).exp()
    }

    /// 1/(pi (1+|zeta|^2)^2), the unit-mass density on the sphere coordinate.
    pub fn sphere_density(&self, zeta: Complex64) -> f64 {
        let d = 1.0 + zeta.norm_sqr();
        1.0 / (std::f64::consts::PI * d * d)
    }
}

/// A dense operator on the truncated space, rows/cols in basis order.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub basis: FockBasis,
    pub entries: DMatrix<Complex64>,
}

impl OperatorMatrix {
    pub fn new(basis: FockBasis, entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() != basis.len() || entries.ncols() != basis.len() {
            return Err(Error::InvalidConfig(format!(
                "entry matrix is {}x{} but basis has size {}",
                entries.nrows(),
                entries.ncols(),
                basis.len()
            )));
        }
        Ok(OperatorMatrix { basis, entries })
    }

    pub fn identity(basis: FockBasis) -> Self {
        let dim = basis.len();
        OperatorMatrix {
            basis,
            entries: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn max_abs_dev_from_identity(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let expect = if i == j {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                worst = worst.max((self.entries[(i, j)] - expect).norm());
            }
        }
        worst
    }
}

/// Value of the basis element psi_{l,m} at the chart point; independent of
/// the zeta slot of `c`.
pub fn basis_eval(b: &FockBasis, index: usize, c: &ChartCoords) -> Result<Complex64> {
    let (l, m) = b.index(index)?;
    let mut out = Complex64::new(b.norm_coeff(l, m), 0.0);
    for (j, &e) in l.iter().enumerate() {
        out *= c.v[j].powu(e as u32);
    }
    for (j, &e) in m.iter().enumerate() {
        out *= c.xi[j].powu(e as u32);
    }
    Ok(out)
}

fn big_factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

/// Exact Gram matrix of the basis, from the closed-form Gaussian moment
/// int v^a conj(v)^b e^{-k|v|^2} (k/pi) dmu = delta_{ab} a!/k^a applied per
/// coordinate. Mixed entries vanish by moment orthogonality; diagonal
/// entries are evaluated in exact rational arithmetic (k is a binary
/// rational as an f64), so the result is exactly the identity whenever the
/// formula says so.
pub fn gram_matrix(b: &FockBasis) -> Result<OperatorMatrix> {
    let k_rat = BigRational::from_float(b.k)
        .ok_or(Error::NonFinite("rational conversion of k in gram_matrix"))?;
    let dim = b.len();
    let mut entries = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let (l, m) = b.index(i)?;
        // <psi_lm, psi_lm> = (k^deg / (l! m!)) * prod_j (l_j!/k^{l_j}) (m_j!/k^{m_j}) = 1.
        let degree: usize = l.iter().sum::<usize>() + m.iter().sum::<usize>();
        let mut fact = BigInt::one();
        for &e in l.iter().chain(m.iter()) {
            fact *= big_factorial(e);
        }
        let norm_sq = k_rat.pow(degree as i32) / BigRational::from_integer(fact.clone());
        let moment = BigRational::from_integer(fact) / k_rat.pow(degree as i32);
        let diag = norm_sq * moment;
        debug_assert!(diag.is_one());
        let as_f64 = if diag.is_one() {
            1.0
        } else {
            diag.numer().to_string().parse::<f64>().unwrap_or(f64::NAN)
                / diag.denom().to_string().parse::<f64>().unwrap_or(f64::NAN)
        };
        entries[(i, i)] = Complex64::new(as_f64, 0.0);
    }
    OperatorMatrix::new(b.clone(), entries)
}

/// Floating-point Gram matrix computed the same way, kept as a cross-check
/// against the exact path.
pub fn gram_matrix_float(b: &FockBasis) -> Result<OperatorMatrix> {
    let dim = b.len();
    let mut entries = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let (l, m) = b.index(i)?;
        let degree: usize = l.iter().sum::<usize>() + m.iter().sum::<usize>();
        let ln_fact: f64 = l.iter().chain(m.iter()).map(|&e| ln_factorial(e)).sum();
        // exp(deg ln k - ln(l! m!)) * exp(ln(l! m!) - deg ln k) written out:
        let value = (degree as f64 * b.k.ln() - ln_fact).exp() * (ln_fact - degree as f64 * b.k.ln()).exp();
        entries[(i, i)] = Complex64::new(value, 0.0);
    }
    OperatorMatrix::new(b.clone(), entries)
}

/// Reproducing kernel e^{k (u . conj(v) + eta . conj(xi))} of A^(k), with
/// (u, eta) = p and (v, xi) = q; both zeta slots are ignored.
pub fn kernel_eval(k: f64, p: &ChartCoords, q: &ChartCoords) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for (u, v) in p.v.iter().zip(q.v.iter()) {
        s += u * v.conj();
    }
    for (eta, xi) in p.xi.iter().zip(q.xi.iter()) {
        s += eta * xi.conj();
    }
    (k * s).exp()
}

/// One complex coordinate's worth of shift-operator matrix element:
/// <U_a psi_l, psi_s> for the 1D Fock factor, in closed form.
fn shift_entry_1d(k: f64, a: Complex64, row: usize, col: usize) -> Complex64 {
    let pref = (-0.5 * k * a.norm_sqr()).exp()
        * (0.5 * (col as f64 * k.ln() - ln_factorial(col))).exp()
        * (0.5 * (ln_factorial(row) - row as f64 * k.ln())).exp();
    let ka = k * a.conj();
    let mut sum = Complex64::new(0.0, 0.0);
    for r in 0..=col.min(row) {
        let mut term = Complex64::new(binomial(col, r), 0.0);
        term *= (-a).powu((col - r) as u32);
        term *= ka.powu((row - r) as u32);
        term /= (ln_factorial(row - r)).exp();
        sum += term;
    }
    pref * sum
}

/// Matrix of the shift unitary U^(k)_{(a,c)} f(v, xi) =
/// e^{k(v . conj(a) + xi . conj(c)) - (k/2)(|a|^2 + |c|^2)} f(v - a, xi - c)
/// in the truncated basis (entries beyond the cutoff are discarded, so the
/// matrix is only approximately unitary on the interior block).
pub fn shift_matrix(b: &FockBasis, a: &[Complex64], c: &[Complex64]) -> Result<OperatorMatrix> {
    if a.len() != b.n || c.len() != b.n {
        return Err(Error::InvalidConfig(format!(
            "shift vectors must have length n = {}, got {} and {}",
            b.n,
            a.len(),
            c.len()
        )));
    }
    let dim = b.len();
    let mut entries = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let (li, mi) = b.index(i)?.clone();
        for j in 0..dim {
            let (lj, mj) = b.index(j)?;
            let mut val = Complex64::new(1.0, 0.0);
            for t in 0..b.n {
                val *= shift_entry_1d(b.k, a[t], li[t], lj[t]);
                val *= shift_entry_1d(b.k, c[t], mi[t], mj[t]);
            }
            entries[(i, j)] = val;
        }
    }
    OperatorMatrix::new(b.clone(), entries)
}
