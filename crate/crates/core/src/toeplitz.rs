//! Truncated Toeplitz operators T_s: h -> P(s h) on the weighted Bergman
//! space, assembled exactly for polynomial symbols or by tensor
//! Gauss-Hermite quadrature for general symbols, plus operator norms.
//!
//! The quadrature assembly is factorized: for each v-block node the
//! xi-block contraction is a small dense product, and the v-block
//! contribution is a rank-one update on the coupled basis. Chunks of
//! v-nodes run in parallel and partial sums are combined in chunk order,
//! so results are independent of thread count.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{ln_factorial, FockBasis, OperatorMatrix};
use crate::parallel::{chunk_ranges, chunked_map, default_chunks};
use crate::quadrature::{ComplexGaussRule, FsQuadrature};
use crate::symbols::Symbol;

/// Quadrature plan for one Toeplitz assembly.
#[derive(Debug, Clone)]
pub struct QuadratureSpec {
    /// Gauss-Hermite order per real dimension; nodes are scaled by 1/sqrt(k).
    pub hermite_order: usize,
    /// Sphere rule applied when the symbol is zeta-dependent.
    pub fs: FsQuadrature,
    /// Optional radius r such that the symbol's underlying function on
    /// R^{4n} vanishes for |x| > r; lets the sphere average skip nodes with
    /// (|v|^2+|xi|^2)/(|alpha|^2+|beta|^2) > r^2.
    pub support_radius: Option<f64>,
}

impl QuadratureSpec {
    pub fn new(hermite_order: usize, fs: FsQuadrature) -> Result<Self> {
        if hermite_order < 2 {
            return Err(Error::InvalidConfig(format!(
                "Hermite order must be >= 2, got {hermite_order}"
            )));
        }
        Ok(QuadratureSpec {
            hermite_order,
            fs,
            support_radius: None,
        })
    }

    /// Default order max(2D+4, 24): degree-2D integrands are exact and bump
    /// symbols keep resolution near their support edge.
    pub fn default_for(basis: &FockBasis, fs: FsQuadrature) -> Self {
        QuadratureSpec {
            hermite_order: (2 * basis.cutoff + 4).max(24),
            fs,
            support_radius: None,
        }
    }

    pub fn with_support_radius(mut self, r: f64) -> Self {
        self.support_radius = Some(r);
        self
    }
}

/// Product nodes over one C^n block: (coordinates, weight).
pub fn block_nodes(n: usize, k: f64, hermite_order: usize) -> Vec<(Vec<Complex64>, f64)> {
    let rule = ComplexGaussRule::new(hermite_order, k);
    let plane = rule.nodes_2d();
    let mut out: Vec<(Vec<Complex64>, f64)> = vec![(Vec::new(), 1.0)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * plane.len());
        for (coords, w) in &out {
            for &(z, wz) in &plane {
                let mut c = coords.clone();
                c.push(z);
                next.push((c, w * wz));
            }
        }
        out = next;
    }
    out
}

/// All multi-indices of length n and sum <= d, in the basis order's
/// lexicographic convention.
fn block_indices(n: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, d: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for first in 0..=d {
            for rest in rec(n - 1, d - first) {
                let mut v = Vec::with_capacity(n);
                v.push(first);
                v.extend(rest);
                out.push(v);
            }
        }
        out.sort();
        out
    }
    rec(n, d)
}

/// Normalized monomial value sqrt(k^{|l|}/l!) * prod z^{l_t}.
fn block_monomial(k: f64, l: &[usize], z: &[Complex64]) -> Complex64 {
    let degree: usize = l.iter().sum();
    let ln_fact: f64 = l.iter().map(|&e| ln_factorial(e)).sum();
    let mut out = Complex64::new(
        (0.5 * (degree as f64 * k.ln() - ln_fact)).exp(),
        0.0,
    );
    for (t, &e) in l.iter().enumerate() {
        out *= z[t].powu(e as u32);
    }
    out
}

/// Pointwise symbol value for assembly: zeta-independent symbols evaluate
/// directly; pulled-back symbols are averaged over the sphere rule (this is
/// what makes the assembled matrix agree with that of the reduced symbol).
fn assembly_value(
    s: &Symbol,
    v: &[Complex64],
    xi: &[Complex64],
    q: &QuadratureSpec,
) -> Result<Complex64> {
    match s {
        Symbol::PulledBack { chart, .. } => {
            let rho_sqr: f64 = v.iter().chain(xi.iter()).map(|z| z.norm_sqr()).sum();
            let mut acc = Complex64::new(0.0, 0.0);
            for &(zeta, w) in q.fs.nodes() {
                if let Some(r) = q.support_radius {
                    if rho_sqr > r * r * chart.frame_norm_sqr(zeta) {
                        continue;
                    }
                }
                let val = s.eval(v, xi, zeta)?;
                if !val.re.is_finite() || !val.im.is_finite() {
                    return Err(Error::NonFinite("Toeplitz node evaluation"));
                }
                acc += w * val;
            }
            Ok(acc)
        }
        _ => {
            let val = s.eval(v, xi, Complex64::new(0.0, 0.0))?;
            if !val.re.is_finite() || !val.im.is_finite() {
                return Err(Error::NonFinite("Toeplitz node evaluation"));
            }
            Ok(val)
        }
    }
}

/// Assemble <T_s psi_j, psi_i> from a grid of symbol values at the product
/// of `v_nodes` x `xi_nodes` (rows indexed by v-node, columns by xi-node).
pub fn assemble_from_values(
    b: &FockBasis,
    v_nodes: &[(Vec<Complex64>, f64)],
    xi_nodes: &[(Vec<Complex64>, f64)],
    values: &DMatrix<Complex64>,
) -> Result<OperatorMatrix> {
    let mut out = assemble_many_from_values(b, v_nodes, xi_nodes, &[values])?;
    Ok(out.pop().expect("one matrix per grid"))
}

/// Assemble several operators over a shared node grid in one pass; the
/// basis-monomial tables and index bookkeeping are computed once for all
/// value grids.
pub fn assemble_many_from_values(
    b: &FockBasis,
    v_nodes: &[(Vec<Complex64>, f64)],
    xi_nodes: &[(Vec<Complex64>, f64)],
    value_grids: &[&DMatrix<Complex64>],
) -> Result<Vec<OperatorMatrix>> {
    for values in value_grids {
        if values.nrows() != v_nodes.len() || values.ncols() != xi_nodes.len() {
            return Err(Error::InvalidConfig(format!(
                "value grid is {}x{}, expected {}x{}",
                values.nrows(),
                values.ncols(),
                v_nodes.len(),
                xi_nodes.len()
            )));
        }
    }
    let n_grids = value_grids.len();
    let dim = b.len();
    let l_list = block_indices(b.n, b.cutoff);
    let m_list = l_list.clone();
    let n_m = m_list.len();

    // Map each basis element to its (l, m) positions in the block lists.
    let find = |list: &[Vec<usize>], key: &[usize]| -> usize {
        list.binary_search_by(|probe| probe.as_slice().cmp(key)).expect("index in block list")
    };
    let positions: Vec<(usize, usize)> = b
        .indices()
        .iter()
        .map(|(l, m)| (find(&l_list, l), find(&m_list, m)))
        .collect();

    // Monomial tables: Phi_xi[q, m] and per-v-node rows computed on the fly.
    let mut phi_xi = DMatrix::<Complex64>::zeros(xi_nodes.len(), n_m);
    for (qi, (xz, _)) in xi_nodes.iter().enumerate() {
        for (mi, m) in m_list.iter().enumerate() {
            phi_xi[(qi, mi)] = block_monomial(b.k, m, xz);
        }
    }

    let chunks = default_chunks();
    let ranges = chunk_ranges(v_nodes.len(), chunks);
    let phi_xi_adj = phi_xi.adjoint();
    let partials = chunked_map(ranges.len(), ranges.len(), |range| {
        let mut accs = vec![DMatrix::<Complex64>::zeros(dim, dim); n_grids];
        let mut scaled = DMatrix::<Complex64>::zeros(xi_nodes.len(), n_m);
        for ri in range {
            let node_range = ranges[ri].clone();
            for p in node_range {
                let (vz, wv) = &v_nodes[p];
                let av: Vec<Complex64> = l_list
                    .iter()
                    .map(|l| block_monomial(b.k, l, vz))
                    .collect();
                for (gi, values) in value_grids.iter().enumerate() {
                    // S[m, m'] = sum_q w_q s(v_p, xi_q) conj(phi_m(xi_q)) phi_m'(xi_q)
                    for (qi, (_, wq)) in xi_nodes.iter().enumerate() {
                        let f = values[(p, qi)] * *wq;
                        for mi in 0..n_m {
                            scaled[(qi, mi)] = f * phi_xi[(qi, mi)];
                        }
                    }
                    let s_block = &phi_xi_adj * &scaled;
                    let acc = &mut accs[gi];
                    for i in 0..dim {
                        let (li, mi) = positions[i];
                        let left = *wv * av[li].conj();
                        for j in 0..dim {
                            let (lj, mj) = positions[j];
                            acc[(i, j)] += left * av[lj] * s_block[(mi, mj)];
                        }
                    }
                }
            }
        }
        accs
    });
    let mut totals = vec![DMatrix::<Complex64>::zeros(dim, dim); n_grids];
    for chunk in partials {
        for (total, part) in totals.iter_mut().zip(chunk) {
            *total += part;
        }
    }
    totals
        .into_iter()
        .map(|t| OperatorMatrix::new(b.clone(), t))
        .collect()
}

/// Toeplitz matrix of a symbol by quadrature. Polynomial symbols whose
/// degree exceeds the exactness range of the Hermite order are refused
/// (use `toeplitz_matrix_exact` or raise the order).
pub fn toeplitz_matrix(s: &Symbol, b: &FockBasis, q: &QuadratureSpec) -> Result<OperatorMatrix> {
    if let Symbol::Polynomial(p) = s {
        let needed_degree = p.total_degree() + 2 * b.cutoff;
        if 2 * q.hermite_order - 1 < needed_degree {
            return Err(Error::QuadratureOrderTooLow {
                order: q.hermite_order,
                needed: needed_degree.div_ceil(2) + 1,
            });
        }
    }
    let v_nodes = block_nodes(b.n, b.k, q.hermite_order);
    let xi_nodes = v_nodes.clone();
    let mut values = DMatrix::<Complex64>::zeros(v_nodes.len(), xi_nodes.len());
    for (p, (vz, _)) in v_nodes.iter().enumerate() {
        for (qi, (xz, _)) in xi_nodes.iter().enumerate() {
            values[(p, qi)] = assembly_value(s, vz, xz, q)?;
        }
    }
    assemble_from_values(b, &v_nodes, &xi_nodes, &values)
}

/// Exact Toeplitz matrix of a polynomial symbol via closed Gaussian moments
/// int v^a conj(v)^b dGauss_k = delta_{ab} a!/k^a, applied per coordinate in
/// log space.
pub fn toeplitz_matrix_exact(p: &crate::symbols::PolySymbol, b: &FockBasis) -> Result<OperatorMatrix> {
    if p.n() != b.n {
        return Err(Error::InvalidConfig(format!(
            "symbol has n = {}, basis has n = {}",
            p.n(),
            b.n
        )));
    }
    let n = b.n;
    let dim = b.len();
    let ln_k = b.k.ln();
    let mut entries = DMatrix::<Complex64>::zeros(dim, dim);
    for i in 0..dim {
        let (li, mi) = b.index(i)?.clone();
        for j in 0..dim {
            let (lj, mj) = b.index(j)?;
            let mut entry = Complex64::new(0.0, 0.0);
            'terms: for (key, coeff) in p.terms() {
                let mut ln_mag = 0.0;
                for t in 0..n {
                    // v_t factor: degrees (a + lj_t) vs (b + li_t)
                    let a = key[t] + lj[t];
                    let bb = key[n + t] + li[t];
                    if a != bb {
                        continue 'terms;
                    }
                    ln_mag += ln_factorial(a) - a as f64 * ln_k
                        + 0.5 * (lj[t] as f64 * ln_k - ln_factorial(lj[t]))
                        + 0.5 * (li[t] as f64 * ln_k - ln_factorial(li[t]));
                    // xi_t factor
                    let c = key[2 * n + t] + mj[t];
                    let d = key[3 * n + t] + mi[t];
                    if c != d {
                        continue 'terms;
                    }
                    ln_mag += ln_factorial(c) - c as f64 * ln_k
                        + 0.5 * (mj[t] as f64 * ln_k - ln_factorial(mj[t]))
                        + 0.5 * (mi[t] as f64 * ln_k - ln_factorial(mi[t]));
                }
                entry += coeff * ln_mag.exp();
            }
            entries[(i, j)] = entry;
        }
    }
    OperatorMatrix::new(b.clone(), entries)
}

/// Largest singular value by power iteration on M* M, with a deterministic
/// start vector. Public so tests can use it as an independent oracle.
pub fn power_iteration_norm(m: &DMatrix<Complex64>, max_iters: usize) -> f64 {
    let dim = m.ncols();
    if dim == 0 {
        return 0.0;
    }
    let mut x = nalgebra::DVector::<Complex64>::from_element(dim, Complex64::new(1.0, 0.0));
    // Break symmetry deterministically so the start is not orthogonal to
    // the top singular subspace by accident.
    for i in 0..dim {
        x[i] += Complex64::new(0.0, (i as f64 + 1.0) / (dim as f64 + 1.0));
    }
    x /= Complex64::new(x.norm(), 0.0);
    let mut sigma = 0.0f64;
    for _ in 0..max_iters {
        let y = m * &x;
        let z = m.adjoint() * y;
        let norm = z.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        let x_next = z / Complex64::new(norm, 0.0);
        if (next - sigma).abs() <= 1e-14 * next.max(1.0) {
            return next;
        }
        sigma = next;
        x = x_next;
    }
    sigma
}

/// Operator norm of a dense complex matrix: full SVD up to dimension 2000,
/// power iteration above.
pub fn matrix_operator_norm(m: &DMatrix<Complex64>) -> Result<f64> {
    for e in m.iter() {
        if !e.re.is_finite() || !e.im.is_finite() {
            return Err(Error::NonFinite("operator norm input"));
        }
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if m.nrows() <= 2000 {
        let sv = m.clone().svd(false, false);
        Ok(sv.singular_values.max())
    } else {
        Ok(power_iteration_norm(m, 10_000))
    }
}

/// Operator norm of an assembled Toeplitz matrix.
pub fn operator_norm(m: &OperatorMatrix) -> Result<f64> {
    matrix_operator_norm(&m.entries)
}
