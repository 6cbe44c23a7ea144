//! Semiclassical decay harness: residual norms of the first-order product
//! expansion and of the commutator-vs-bracket comparison across a sweep of
//! quantization levels k, with log-log least-squares decay fits.
//!
//! For a pair of reduced symbols a, b the two residuals are
//!   ||M_a M_b - M_{ab} + (1/k) M_corr||   (expected O(1/k^2))
//!   ||i k [M_a, M_b] - M_{a,b}||          (expected O(1/k)),
//! where M_corr is the Toeplitz matrix of sum_j(a_vj b_vbarj + a_xij b_xibarj)
//! and {a,b} is the fiberwise Poisson bracket. Norms are reported on an
//! interior basis block (degree cutoff minus a margin) to keep truncation
//! leakage out of the decay signal; full-block values are logged alongside.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::charts::RemovedFiberChart;
use crate::error::{Error, Result};
use crate::fock::FockBasis;
use crate::hyperkahler::{RealPoint4n, SpherePoint};
use crate::parallel::{chunk_ranges, chunked_map, default_chunks};
use crate::quadrature::FsQuadrature;
use crate::symbols::{
    correction_symbol, fiber_gradient, fs_quadrature_build, poisson_bracket_fiber_symbol,
    BumpFunction, PolySymbol, Symbol, DEFAULT_FD_STEP,
};
use crate::toeplitz::{
    assemble_many_from_values, block_nodes, matrix_operator_norm, toeplitz_matrix_exact,
};

/// Residuals below this are treated as exact cancellation (rounding floor)
/// rather than a decaying signal; no decay fit is attempted on them.
pub const CANCELLATION_FLOOR: f64 = 1e-9;

/// Ordinary least-squares fit of log(residual) against log(k).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// OLS on (log k, log r); points with r <= 0 or non-finite are excluded,
/// and fewer than 3 surviving points is an error.
pub fn fit_decay(points: &[(f64, f64)]) -> Result<DecayFit> {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|(k, r)| *k > 0.0 && *r > 0.0 && r.is_finite())
        .map(|&(k, r)| (k.ln(), r.ln()))
        .collect();
    if data.len() < 3 {
        return Err(Error::FitUnderdetermined(data.len()));
    }
    let n = data.len() as f64;
    let mx = data.iter().map(|p| p.0).sum::<f64>() / n;
    let my = data.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = data.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = data.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig(
            "decay fit needs at least two distinct k values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = data
        .iter()
        .map(|&(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = (data.len() - 2).max(1) as f64;
    let stderr = (ss_res / dof / sxx).sqrt();
    Ok(DecayFit {
        slope,
        intercept,
        stderr,
    })
}

/// Chart parameters for a sweep; `removed: None` means the standard chart
/// (fiber over (-1,0,0) removed, default phase).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    #[serde(default)]
    pub removed: Option<[f64; 3]>,
    #[serde(default)]
    pub psi: Option<f64>,
}

impl ChartSpec {
    pub fn build(&self) -> Result<RemovedFiberChart> {
        match self.removed {
            None => {
                let mut chart = RemovedFiberChart::standard();
                if let Some(psi) = self.psi {
                    chart = RemovedFiberChart::new(chart.removed, psi)?;
                }
                Ok(chart)
            }
            Some([a, b, c]) => {
                let s = SpherePoint::new(a, b, c)?;
                match self.psi {
                    Some(psi) => RemovedFiberChart::new(s, psi),
                    None => RemovedFiberChart::for_point(s),
                }
            }
        }
    }
}

/// A compactly supported bump exp(1 - 1/(1 - |x-c|^2/R^2)) given by its
/// center (flat coordinates [x1.. | x2.. | x3.. | x4..], length 4n) and
/// radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BumpSpec {
    pub fn build(&self, n: usize) -> Result<BumpFunction> {
        if self.center.len() != 4 * n {
            return Err(Error::InvalidConfig(format!(
                "bump center has {} coordinates, expected 4n = {}",
                self.center.len(),
                4 * n
            )));
        }
        let block = |i: usize| self.center[i * n..(i + 1) * n].to_vec();
        let center = RealPoint4n::new(block(0), block(1), block(2), block(3));
        BumpFunction::new(center, self.radius)
    }
}

/// The symbol pair driving a sweep: either two bumps on R^{4n} (pulled back
/// through the chart and reduced over the sphere) or two polynomial
/// surrogates on the fiber (assembled exactly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SymbolPairSpec {
    Bumps { f: BumpSpec, g: BumpSpec },
    Polynomial { f: PolySymbol, g: PolySymbol },
}

fn default_fs_radial() -> usize {
    32
}
fn default_fs_angular() -> usize {
    24
}
fn default_interior_margin() -> usize {
    8
}
fn default_degree_extra() -> usize {
    8
}

/// Full description of one decay sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n: usize,
    pub symbols: SymbolPairSpec,
    #[serde(default)]
    pub chart: ChartSpec,
    /// Quantization levels; strictly increasing, at least 3.
    pub ks: Vec<f64>,
    /// Explicit basis cutoffs per k; default is ceil(k R^2) + degree_extra
    /// with R the larger symbol support radius, so the coherent-state mass
    /// of the support is resolved at every k.
    #[serde(default)]
    pub degrees: Option<Vec<usize>>,
    #[serde(default = "default_degree_extra")]
    pub degree_extra: usize,
    /// Gauss-Hermite order per real dimension; default max(2D+4, 24).
    #[serde(default)]
    pub hermite_order: Option<usize>,
    #[serde(default = "default_fs_radial")]
    pub fs_radial: usize,
    #[serde(default = "default_fs_angular")]
    pub fs_angular: usize,
    #[serde(default = "default_interior_margin")]
    pub interior_margin: usize,
    /// When false (default) wall_ms is reported as 0 so artifacts are
    /// bitwise reproducible.
    #[serde(default)]
    pub emit_timings: bool,
    #[serde(default)]
    pub csv_path: Option<String>,
    #[serde(default)]
    pub json_path: Option<String>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        if self.ks.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "k-list must have at least 3 entries, got {}",
                self.ks.len()
            )));
        }
        if !self.ks.iter().all(|k| k.is_finite() && *k > 0.0) {
            return Err(Error::InvalidConfig("k values must be positive".into()));
        }
        if !self.ks.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "k-list must be strictly increasing".into(),
            ));
        }
        if let Some(ds) = &self.degrees {
            if ds.len() != self.ks.len() {
                return Err(Error::InvalidConfig(format!(
                    "degrees has {} entries for {} k values",
                    ds.len(),
                    self.ks.len()
                )));
            }
        }
        match &self.symbols {
            SymbolPairSpec::Bumps { f, g } => {
                f.build(self.n)?;
                g.build(self.n)?;
            }
            SymbolPairSpec::Polynomial { f, g } => {
                if f.n() != self.n || g.n() != self.n {
                    return Err(Error::InvalidConfig(
                        "polynomial symbol n does not match config n".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Support radius bound used by the default cutoff schedule.
    pub fn support_bound(&self) -> f64 {
        match &self.symbols {
            SymbolPairSpec::Bumps { f, g } => {
                let r = |b: &BumpSpec| {
                    b.radius + b.center.iter().map(|c| c * c).sum::<f64>().sqrt()
                };
                r(f).max(r(g))
            }
            SymbolPairSpec::Polynomial { .. } => 1.0,
        }
    }

    pub fn degree_for(&self, index: usize) -> usize {
        match &self.degrees {
            Some(ds) => ds[index],
            None => {
                let r = self.support_bound();
                (self.ks[index] * r * r).ceil() as usize + self.degree_extra
            }
        }
    }
}

/// Per-k outcome; on failure `error` is set and the residual fields are None.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub k: f64,
    pub degree: usize,
    pub basis_size: usize,
    pub res_first_order: Option<f64>,
    pub res_first_order_full: Option<f64>,
    pub res_commutator: Option<f64>,
    pub res_commutator_full: Option<f64>,
    pub wall_ms: u64,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    /// None when the residuals sit at the rounding floor (flagged below) or
    /// when too few records survive.
    pub fit_first_order: Option<DecayFit>,
    pub fit_commutator: Option<DecayFit>,
    /// True when all first-order residuals are at or below the cancellation
    /// floor (constant/linear symbol regimes).
    pub exact_cancellation: bool,
    pub config: SweepConfig,
}

/// Both residual norms at one level, interior block and full block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub first_order: f64,
    pub first_order_full: f64,
    pub commutator: f64,
    pub commutator_full: f64,
}

/// Everything needed to evaluate the residuals at one level.
pub struct ResidualParams<'a> {
    pub basis: &'a FockBasis,
    pub hermite_order: usize,
    pub fs: &'a FsQuadrature,
    pub support_f: Option<f64>,
    pub support_g: Option<f64>,
    pub interior_margin: usize,
}

fn interior_and_full_norm(
    m: &DMatrix<Complex64>,
    basis: &FockBasis,
    margin: usize,
) -> Result<(f64, f64)> {
    let full = matrix_operator_norm(m)?;
    let p = basis.prefix_len(basis.cutoff.saturating_sub(margin));
    let interior = matrix_operator_norm(&m.view((0, 0), (p, p)).into_owned())?;
    Ok((interior, full))
}

/// Reduced value and fiber gradient of one symbol at a fiber point: sphere
/// average for pulled-back symbols (with a support short-circuit), direct
/// evaluation otherwise.
fn reduced_value_and_grad(
    s: &Symbol,
    v: &[Complex64],
    xi: &[Complex64],
    fs: &FsQuadrature,
    support: Option<f64>,
) -> Result<(Complex64, Vec<Complex64>)> {
    let n = v.len();
    match s {
        Symbol::PulledBack { chart, .. } => {
            let rho_sqr: f64 = v.iter().chain(xi.iter()).map(|z| z.norm_sqr()).sum();
            let mut val = Complex64::new(0.0, 0.0);
            let mut grad = vec![Complex64::new(0.0, 0.0); 4 * n];
            for &(zeta, w) in fs.nodes() {
                if let Some(r) = support {
                    if rho_sqr > r * r * chart.frame_norm_sqr(zeta) {
                        continue;
                    }
                }
                val += w * s.eval(v, xi, zeta)?;
                let g = fiber_gradient(s, v, xi, zeta, DEFAULT_FD_STEP)?;
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += w * gi;
                }
            }
            Ok((val, grad))
        }
        _ => {
            let zeta = Complex64::new(0.0, 0.0);
            Ok((
                s.eval(v, xi, zeta)?,
                fiber_gradient(s, v, xi, zeta, DEFAULT_FD_STEP)?,
            ))
        }
    }
}

/// Value grids over the (v-node) x (xi-node) product for the five assembled
/// symbols: f, g, f*g, the (1/k)-correction, and the fiber Poisson bracket.
struct ValueGrids {
    f: DMatrix<Complex64>,
    g: DMatrix<Complex64>,
    fg: DMatrix<Complex64>,
    corr: DMatrix<Complex64>,
    bracket: DMatrix<Complex64>,
}

/// One pulled-back symbol with an analytic gradient, unpacked for the
/// allocation-free grid sweep.
struct FastPulledBack<'a> {
    func: &'a crate::symbols::PointFn,
    grad: &'a crate::symbols::PointGradFn,
    chart: &'a RemovedFiberChart,
    support: Option<f64>,
}

fn fast_pulled_back<'a>(s: &'a Symbol, support: Option<f64>) -> Option<FastPulledBack<'a>> {
    match s {
        Symbol::PulledBack {
            func,
            grad: Some(grad),
            chart,
        } => Some(FastPulledBack {
            func: func.as_ref(),
            grad: grad.as_ref(),
            chart,
            support,
        }),
        _ => None,
    }
}

/// Per-symbol sphere-averaged value and fiber-gradient grids.
struct SymbolGrids {
    val: DMatrix<Complex64>,
    grad: [DMatrix<Complex64>; 4],
}

/// Sweep the sphere rule once for one pulled-back symbol over all n=1 node
/// pairs, with the chart inversion and gradient chain rule inlined. Node
/// norms are visited in ascending order so each sphere node touches only the
/// pairs inside the symbol's support.
fn sweep_symbol_n1(
    s: &FastPulledBack<'_>,
    v_nodes: &[(Vec<Complex64>, f64)],
    xi_nodes: &[(Vec<Complex64>, f64)],
    fs: &FsQuadrature,
) -> Result<SymbolGrids> {
    let rows = v_nodes.len();
    let cols = xi_nodes.len();
    let order = |nodes: &[(Vec<Complex64>, f64)]| {
        let mut idx: Vec<usize> = (0..nodes.len()).collect();
        idx.sort_by(|&a, &b| {
            nodes[a].0[0]
                .norm_sqr()
                .total_cmp(&nodes[b].0[0].norm_sqr())
        });
        idx
    };
    let v_order = order(v_nodes);
    let xi_order = order(xi_nodes);
    let v_norms: Vec<f64> = v_nodes.iter().map(|(z, _)| z[0].norm_sqr()).collect();
    let xi_norms: Vec<f64> = xi_nodes.iter().map(|(z, _)| z[0].norm_sqr()).collect();

    let mut grids = SymbolGrids {
        val: DMatrix::zeros(rows, cols),
        grad: std::array::from_fn(|_| DMatrix::zeros(rows, cols)),
    };
    let mut x = RealPoint4n::zero(1);
    let im_unit = Complex64::new(0.0, 1.0);
    for &(zeta, w) in fs.nodes() {
        let (alpha, beta) = s.chart.fiber_frame(zeta);
        let det = alpha.norm_sqr() + beta.norm_sqr();
        let budget = s.support.map_or(f64::INFINITY, |r| r * r * det);
        let (ac, bc) = (alpha.conj(), beta.conj());
        for &pi in &v_order {
            if v_norms[pi] > budget {
                break;
            }
            let row_budget = budget - v_norms[pi];
            let v = v_nodes[pi].0[0];
            for &qi in &xi_order {
                if xi_norms[qi] > row_budget {
                    break;
                }
                let xi = xi_nodes[qi].0[0];
                let xic = xi.conj();
                let z = (ac * v - beta * xic) / det;
                let wc = ((bc * v + alpha * xic) / det).conj();
                x.x1[0] = z.re;
                x.x2[0] = z.im;
                x.x3[0] = wc.re;
                x.x4[0] = wc.im;
                let val = (s.func)(&x);
                let gr = (s.grad)(&x);
                let f_z = (gr[0] - im_unit * gr[1]) * 0.5;
                let f_zb = (gr[0] + im_unit * gr[1]) * 0.5;
                let f_w = (gr[2] - im_unit * gr[3]) * 0.5;
                let f_wb = (gr[2] + im_unit * gr[3]) * 0.5;
                grids.val[(pi, qi)] += w * val;
                grids.grad[0][(pi, qi)] += w * (ac * f_z + bc * f_wb) / det;
                grids.grad[1][(pi, qi)] += w * (alpha * f_zb + beta * f_w) / det;
                grids.grad[2][(pi, qi)] += w * (ac * f_w - bc * f_zb) / det;
                grids.grad[3][(pi, qi)] += w * (alpha * f_wb - beta * f_z) / det;
            }
        }
    }
    for e in grids.val.iter().chain(grids.grad.iter().flat_map(|m| m.iter())) {
        if !e.re.is_finite() || !e.im.is_finite() {
            return Err(Error::NonFinite("symbol grid sweep"));
        }
    }
    Ok(grids)
}

fn combine_symbol_grids(fg_f: &SymbolGrids, fg_g: &SymbolGrids) -> ValueGrids {
    let rows = fg_f.val.nrows();
    let cols = fg_f.val.ncols();
    let im_unit = Complex64::new(0.0, 1.0);
    let mut out = ValueGrids {
        f: fg_f.val.clone(),
        g: fg_g.val.clone(),
        fg: DMatrix::zeros(rows, cols),
        corr: DMatrix::zeros(rows, cols),
        bracket: DMatrix::zeros(rows, cols),
    };
    for r in 0..rows {
        for c in 0..cols {
            let (fd, fdb, fx, fxb) = (
                fg_f.grad[0][(r, c)],
                fg_f.grad[1][(r, c)],
                fg_f.grad[2][(r, c)],
                fg_f.grad[3][(r, c)],
            );
            let (gd, gdb, gx, gxb) = (
                fg_g.grad[0][(r, c)],
                fg_g.grad[1][(r, c)],
                fg_g.grad[2][(r, c)],
                fg_g.grad[3][(r, c)],
            );
            out.fg[(r, c)] = fg_f.val[(r, c)] * fg_g.val[(r, c)];
            out.corr[(r, c)] = fd * gdb + fx * gxb;
            out.bracket[(r, c)] = -im_unit * (fd * gdb - gd * fdb + fx * gxb - gx * fxb);
        }
    }
    out
}

/// Sphere-averaged values of one symbol over the (v-node) x (xi-node)
/// product grid, suitable for `assemble_from_values`. Pulled-back symbols
/// with analytic gradients at n=1 take the inlined sweep; everything else
/// goes through the generic reduction.
pub fn reduced_value_grid(
    s: &Symbol,
    v_nodes: &[(Vec<Complex64>, f64)],
    xi_nodes: &[(Vec<Complex64>, f64)],
    fs: &FsQuadrature,
    support: Option<f64>,
) -> Result<DMatrix<Complex64>> {
    let n = v_nodes.first().map(|(c, _)| c.len()).unwrap_or(0);
    if n == 1 {
        if let Some(fp) = fast_pulled_back(s, support) {
            return Ok(sweep_symbol_n1(&fp, v_nodes, xi_nodes, fs)?.val);
        }
    }
    let mut out = DMatrix::zeros(v_nodes.len(), xi_nodes.len());
    for (row, (vz, _)) in v_nodes.iter().enumerate() {
        for (col, (xz, _)) in xi_nodes.iter().enumerate() {
            out[(row, col)] = match s {
                Symbol::PulledBack { chart, .. } => {
                    let rho_sqr: f64 =
                        vz.iter().chain(xz.iter()).map(|z| z.norm_sqr()).sum();
                    let mut val = Complex64::new(0.0, 0.0);
                    for &(zeta, w) in fs.nodes() {
                        if let Some(r) = support {
                            if rho_sqr > r * r * chart.frame_norm_sqr(zeta) {
                                continue;
                            }
                        }
                        val += w * s.eval(vz, xz, zeta)?;
                    }
                    val
                }
                _ => s.eval(vz, xz, Complex64::new(0.0, 0.0))?,
            };
        }
    }
    Ok(out)
}

fn build_grids(
    f: &Symbol,
    g: &Symbol,
    v_nodes: &[(Vec<Complex64>, f64)],
    xi_nodes: &[(Vec<Complex64>, f64)],
    p: &ResidualParams<'_>,
) -> Result<ValueGrids> {
    if p.basis.n == 1 {
        if let (Some(ff), Some(fg)) = (
            fast_pulled_back(f, p.support_f),
            fast_pulled_back(g, p.support_g),
        ) {
            let grids_f = sweep_symbol_n1(&ff, v_nodes, xi_nodes, p.fs)?;
            let grids_g = sweep_symbol_n1(&fg, v_nodes, xi_nodes, p.fs)?;
            return Ok(combine_symbol_grids(&grids_f, &grids_g));
        }
    }
    build_grids_generic(f, g, v_nodes, xi_nodes, p)
}

fn build_grids_generic(
    f: &Symbol,
    g: &Symbol,
    v_nodes: &[(Vec<Complex64>, f64)],
    xi_nodes: &[(Vec<Complex64>, f64)],
    p: &ResidualParams<'_>,
) -> Result<ValueGrids> {
    let rows = v_nodes.len();
    let cols = xi_nodes.len();
    let n = v_nodes.first().map(|(c, _)| c.len()).unwrap_or(0);
    let im_unit = Complex64::new(0.0, 1.0);

    let ranges = chunk_ranges(rows, default_chunks());
    let chunk_results: Vec<Result<Vec<[Complex64; 5]>>> =
        chunked_map(ranges.len(), ranges.len(), |range| {
            let mut out = Vec::new();
            for ri in range {
                for row in ranges[ri].clone() {
                    let (vz, _) = &v_nodes[row];
                    for (xz, _) in xi_nodes {
                        let (fv, fgr) =
                            reduced_value_and_grad(f, vz, xz, p.fs, p.support_f)?;
                        let (gv, ggr) =
                            reduced_value_and_grad(g, vz, xz, p.fs, p.support_g)?;
                        let mut corr = Complex64::new(0.0, 0.0);
                        let mut br = Complex64::new(0.0, 0.0);
                        for j in 0..n {
                            let (fd, fdb) = (fgr[j], fgr[n + j]);
                            let (gd, gdb) = (ggr[j], ggr[n + j]);
                            let (fx, fxb) = (fgr[2 * n + j], fgr[3 * n + j]);
                            let (gx, gxb) = (ggr[2 * n + j], ggr[3 * n + j]);
                            corr += fd * gdb + fx * gxb;
                            br += fd * gdb - gd * fdb + fx * gxb - gx * fxb;
                        }
                        out.push([fv, gv, fv * gv, corr, -im_unit * br]);
                    }
                }
            }
            Ok(out)
        });

    let mut grids = ValueGrids {
        f: DMatrix::zeros(rows, cols),
        g: DMatrix::zeros(rows, cols),
        fg: DMatrix::zeros(rows, cols),
        corr: DMatrix::zeros(rows, cols),
        bracket: DMatrix::zeros(rows, cols),
    };
    let mut flat = Vec::with_capacity(rows * cols);
    for chunk in chunk_results {
        flat.extend(chunk?);
    }
    for row in 0..rows {
        for col in 0..cols {
            let vals = flat[row * cols + col];
            grids.f[(row, col)] = vals[0];
            grids.g[(row, col)] = vals[1];
            grids.fg[(row, col)] = vals[2];
            grids.corr[(row, col)] = vals[3];
            grids.bracket[(row, col)] = vals[4];
        }
    }
    Ok(grids)
}

fn as_poly(s: &Symbol) -> Option<&PolySymbol> {
    match s {
        Symbol::Polynomial(p) => Some(p),
        _ => None,
    }
}

/// Both residual norms for a symbol pair at one level. Polynomial pairs use
/// the exact-moment assembly end to end; all other pairs are reduced on a
/// shared node grid and assembled by quadrature, so every term sees the same
/// sphere rule.
pub fn compute_residuals(f: &Symbol, g: &Symbol, p: &ResidualParams<'_>) -> Result<Residuals> {
    let basis = p.basis;
    let k = basis.k;
    let im_unit = Complex64::new(0.0, 1.0);

    let (tf, tg, tfg, tcorr, tbr) = match (as_poly(f), as_poly(g)) {
        (Some(pf), Some(pg)) => {
            let corr = correction_symbol(f, g, DEFAULT_FD_STEP)?;
            let br = poisson_bracket_fiber_symbol(f, g, DEFAULT_FD_STEP)?;
            let corr_p = as_poly(&corr).expect("polynomial correction");
            let br_p = as_poly(&br).expect("polynomial bracket");
            (
                toeplitz_matrix_exact(pf, basis)?,
                toeplitz_matrix_exact(pg, basis)?,
                toeplitz_matrix_exact(&pf.mul(pg), basis)?,
                toeplitz_matrix_exact(corr_p, basis)?,
                toeplitz_matrix_exact(br_p, basis)?,
            )
        }
        _ => {
            let v_nodes = block_nodes(basis.n, k, p.hermite_order);
            let xi_nodes = v_nodes.clone();
            let grids = build_grids(f, g, &v_nodes, &xi_nodes, p)?;
            let mut ops = assemble_many_from_values(
                basis,
                &v_nodes,
                &xi_nodes,
                &[&grids.f, &grids.g, &grids.fg, &grids.corr, &grids.bracket],
            )?;
            let tbr = ops.pop().expect("bracket");
            let tcorr = ops.pop().expect("correction");
            let tfg = ops.pop().expect("product");
            let tg = ops.pop().expect("g");
            let tf = ops.pop().expect("f");
            (tf, tg, tfg, tcorr, tbr)
        }
    };

    let prod = &tf.entries * &tg.entries;
    let first = &prod - &tfg.entries + &tcorr.entries / Complex64::new(k, 0.0);
    let comm = (&prod - &tg.entries * &tf.entries) * (im_unit * k) - &tbr.entries;
    let (fo, fo_full) = interior_and_full_norm(&first, basis, p.interior_margin)?;
    let (cm, cm_full) = interior_and_full_norm(&comm, basis, p.interior_margin)?;
    Ok(Residuals {
        first_order: fo,
        first_order_full: fo_full,
        commutator: cm,
        commutator_full: cm_full,
    })
}

/// Interior-block norm of M_f M_g - M_{fg} + (1/k) M_corr.
pub fn residual_first_order(f: &Symbol, g: &Symbol, p: &ResidualParams<'_>) -> Result<f64> {
    Ok(compute_residuals(f, g, p)?.first_order)
}

/// Interior-block norm of i k [M_f, M_g] - M_{f,g}.
pub fn residual_commutator(f: &Symbol, g: &Symbol, p: &ResidualParams<'_>) -> Result<f64> {
    Ok(compute_residuals(f, g, p)?.commutator)
}

fn build_symbol_pair(
    cfg: &SweepConfig,
) -> Result<(Symbol, Symbol, Option<f64>, Option<f64>)> {
    match &cfg.symbols {
        SymbolPairSpec::Bumps { f, g } => {
            let chart = cfg.chart.build()?;
            let bf = f.build(cfg.n)?;
            let bg = g.build(cfg.n)?;
            let rf = bf.support_radius();
            let rg = bg.support_radius();
            Ok((
                bf.symbol(chart.clone()),
                bg.symbol(chart),
                Some(rf),
                Some(rg),
            ))
        }
        SymbolPairSpec::Polynomial { f, g } => Ok((
            Symbol::polynomial(f.clone()),
            Symbol::polynomial(g.clone()),
            None,
            None,
        )),
    }
}

/// Run the full sweep: per-k residuals (failures recorded, sweep continues)
/// followed by decay fits over the surviving records.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let fs = fs_quadrature_build(cfg.fs_radial, cfg.fs_angular)?;
    let (f, g, support_f, support_g) = build_symbol_pair(cfg)?;

    let mut records = Vec::with_capacity(cfg.ks.len());
    for (idx, &k) in cfg.ks.iter().enumerate() {
        let degree = cfg.degree_for(idx);
        let started = Instant::now();
        let outcome = FockBasis::new(cfg.n, k, degree).and_then(|basis| {
            let params = ResidualParams {
                basis: &basis,
                hermite_order: cfg.hermite_order.unwrap_or((2 * degree + 4).max(24)),
                fs: &fs,
                support_f,
                support_g,
                interior_margin: cfg.interior_margin,
            };
            compute_residuals(&f, &g, &params).map(|r| (basis.len(), r))
        });
        let wall_ms = if cfg.emit_timings {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        records.push(match outcome {
            Ok((basis_size, r)) => SweepRecord {
                k,
                degree,
                basis_size,
                res_first_order: Some(r.first_order),
                res_first_order_full: Some(r.first_order_full),
                res_commutator: Some(r.commutator),
                res_commutator_full: Some(r.commutator_full),
                wall_ms,
                error: None,
            },
            Err(e) => SweepRecord {
                k,
                degree,
                basis_size: 0,
                res_first_order: None,
                res_first_order_full: None,
                res_commutator: None,
                res_commutator_full: None,
                wall_ms,
                error: Some(e.to_string()),
            },
        });
    }

    let fo_points: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.res_first_order.map(|v| (r.k, v)))
        .collect();
    let cm_points: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.res_commutator.map(|v| (r.k, v)))
        .collect();
    let exact_cancellation = !fo_points.is_empty()
        && fo_points.iter().all(|(_, r)| *r <= CANCELLATION_FLOOR);
    let fit_first_order = if exact_cancellation {
        None
    } else {
        fit_decay(&fo_points).ok()
    };
    let commutator_floor =
        !cm_points.is_empty() && cm_points.iter().all(|(_, r)| *r <= CANCELLATION_FLOOR);
    let fit_commutator = if commutator_floor {
        None
    } else {
        fit_decay(&cm_points).ok()
    };

    Ok(SweepResult {
        records,
        fit_first_order,
        fit_commutator,
        exact_cancellation,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::Var;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poly_pair_config(f: PolySymbol, g: PolySymbol) -> SweepConfig {
        SweepConfig {
            n: 1,
            symbols: SymbolPairSpec::Polynomial { f, g },
            chart: ChartSpec::default(),
            ks: vec![2.0, 4.0, 8.0],
            degrees: Some(vec![8, 8, 8]),
            degree_extra: default_degree_extra(),
            hermite_order: None,
            fs_radial: 8,
            fs_angular: 8,
            interior_margin: 4,
            emit_timings: false,
            csv_path: None,
            json_path: None,
        }
    }

    #[test]
    fn fit_examples() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&k| (k, 7.0 / (k * k)))
            .collect();
        let fit = fit_decay(&pts).unwrap();
        assert_abs_diff_eq!(fit.slope, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, 7.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(fit.stderr, 0.0, epsilon = 1e-12);

        let pts: Vec<(f64, f64)> = [1.0, 3.0, 9.0].iter().map(|&k| (k, 3.0 / k)).collect();
        assert_abs_diff_eq!(fit_decay(&pts).unwrap().slope, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_noisy_inverse_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<(f64, f64)> = (1..=8)
            .map(|i| {
                let k = 2.0f64.powi(i);
                let noise = 1.0 + 0.05 * (2.0 * rng.gen::<f64>() - 1.0);
                (k, noise / (k * k))
            })
            .collect();
        let fit = fit_decay(&pts).unwrap();
        assert!(
            fit.slope >= -2.2 && fit.slope <= -1.8,
            "slope {}",
            fit.slope
        );
    }

    #[test]
    fn fit_excludes_nonpositive_and_underdetermines() {
        let pts = vec![(1.0, 1.0), (2.0, 0.0), (4.0, -1.0), (8.0, 0.125)];
        assert!(matches!(
            fit_decay(&pts),
            Err(Error::FitUnderdetermined(2))
        ));
    }

    #[test]
    fn constant_pair_cancels_exactly() {
        let one = PolySymbol::constant(1, Complex64::new(1.0, 0.0));
        let f = Symbol::polynomial(one.clone());
        let g = Symbol::polynomial(one.clone());
        let basis = FockBasis::new(1, 4.0, 8).unwrap();
        let fs = fs_quadrature_build(4, 4).unwrap();
        let params = ResidualParams {
            basis: &basis,
            hermite_order: 24,
            fs: &fs,
            support_f: None,
            support_g: None,
            interior_margin: 2,
        };
        let r = compute_residuals(&f, &g, &params).unwrap();
        assert!(r.first_order <= 1e-14 && r.first_order_full <= 1e-14);
        assert!(r.commutator <= 1e-14);
    }

    #[test]
    fn linear_pair_is_exact_cancellation() {
        // f = v, g = conj(v): M_f M_g - M_{|v|^2} + (1/k) Id = 0 on the
        // interior block, and ik[M_f, M_g] - M_{-i(-i)} ... bracket {v, vbar}
        // = -i, so ik[M_f,M_g] + i... both residuals at rounding floor.
        let v = PolySymbol::coordinate(1, Var::V(0));
        let vb = PolySymbol::coordinate(1, Var::VBar(0));
        let f = Symbol::polynomial(v.clone());
        let g = Symbol::polynomial(vb.clone());
        let basis = FockBasis::new(1, 4.0, 12).unwrap();
        let fs = fs_quadrature_build(4, 4).unwrap();
        let params = ResidualParams {
            basis: &basis,
            hermite_order: 32,
            fs: &fs,
            support_f: None,
            support_g: None,
            interior_margin: 2,
        };
        let r = compute_residuals(&f, &g, &params).unwrap();
        assert!(r.first_order <= 1e-10, "first order {}", r.first_order);
        assert!(r.commutator <= 1e-10, "commutator {}", r.commutator);

        // The sweep flags this regime instead of fitting it.
        let sweep = run_sweep(&poly_pair_config(v, vb)).unwrap();
        assert!(sweep.exact_cancellation);
        assert!(sweep.fit_first_order.is_none());
    }

    #[test]
    fn commutator_residual_symmetric_under_swap() {
        let v = PolySymbol::coordinate(1, Var::V(0));
        let vb = PolySymbol::coordinate(1, Var::VBar(0));
        // real/imaginary part symbols: nontrivial commutator content
        let re = v.add(&vb).scale(Complex64::new(0.5, 0.0));
        let im = v.sub(&vb).scale(Complex64::new(0.0, -0.5));
        let f = Symbol::polynomial(re);
        let g = Symbol::polynomial(im);
        let basis = FockBasis::new(1, 3.0, 10).unwrap();
        let fs = fs_quadrature_build(4, 4).unwrap();
        let params = ResidualParams {
            basis: &basis,
            hermite_order: 28,
            fs: &fs,
            support_f: None,
            support_g: None,
            interior_margin: 2,
        };
        let fg = residual_commutator(&f, &g, &params).unwrap();
        let gf = residual_commutator(&g, &f, &params).unwrap();
        assert!((fg - gf).abs() <= 1e-12, "{fg} vs {gf}");
    }

    #[test]
    fn quadrature_path_matches_exact_path_for_polynomials() {
        // The same polynomial pair pushed through the grid/quadrature path
        // (as Reduced closures) must reproduce the exact-moment residuals.
        let v = PolySymbol::coordinate(1, Var::V(0));
        let vb = PolySymbol::coordinate(1, Var::VBar(0));
        let s = v.mul(&vb); // |v|^2, degree 2
        let f_exact = Symbol::polynomial(s.clone());
        let g_exact = Symbol::polynomial(v.clone());
        let basis = FockBasis::new(1, 2.0, 6).unwrap();
        let fs = fs_quadrature_build(4, 4).unwrap();
        let params = ResidualParams {
            basis: &basis,
            hermite_order: 24,
            fs: &fs,
            support_f: None,
            support_g: None,
            interior_margin: 2,
        };
        let exact = compute_residuals(&f_exact, &g_exact, &params).unwrap();

        let sf = s.clone();
        let f_closure = Symbol::reduced_with_gradient(
            move |v: &[Complex64], xi: &[Complex64]| Ok(sf.eval(v, xi)),
            {
                let sg = s.clone();
                move |v: &[Complex64], xi: &[Complex64]| {
                    let mut out = Vec::with_capacity(4);
                    for var in [Var::V(0), Var::VBar(0), Var::Xi(0), Var::XiBar(0)] {
                        out.push(sg.derivative(var).eval(v, xi));
                    }
                    Ok(out)
                }
            },
        );
        let vf = v.clone();
        let g_closure = Symbol::reduced_with_gradient(
            move |vv: &[Complex64], xx: &[Complex64]| Ok(vf.eval(vv, xx)),
            {
                let vg = v.clone();
                move |vv: &[Complex64], xx: &[Complex64]| {
                    let mut out = Vec::with_capacity(4);
                    for var in [Var::V(0), Var::VBar(0), Var::Xi(0), Var::XiBar(0)] {
                        out.push(vg.derivative(var).eval(vv, xx));
                    }
                    Ok(out)
                }
            },
        );
        let quad = compute_residuals(&f_closure, &g_closure, &params).unwrap();
        assert!(
            (exact.first_order - quad.first_order).abs() <= 1e-9,
            "{} vs {}",
            exact.first_order,
            quad.first_order
        );
        assert!(
            (exact.commutator - quad.commutator).abs() <= 1e-9,
            "{} vs {}",
            exact.commutator,
            quad.commutator
        );
    }

    #[test]
    fn interior_residual_bounded_by_full() {
        let v = PolySymbol::coordinate(1, Var::V(0));
        let vb = PolySymbol::coordinate(1, Var::VBar(0));
        let f = Symbol::polynomial(v.mul(&v).add(&vb));
        let g = Symbol::polynomial(vb.mul(&vb));
        let basis = FockBasis::new(1, 2.0, 10).unwrap();
        let fs = fs_quadrature_build(4, 4).unwrap();
        let params = ResidualParams {
            basis: &basis,
            hermite_order: 28,
            fs: &fs,
            support_f: None,
            support_g: None,
            interior_margin: 4,
        };
        let r = compute_residuals(&f, &g, &params).unwrap();
        assert!(r.first_order <= r.first_order_full + 1e-13);
        assert!(r.commutator <= r.commutator_full + 1e-13);
    }

    #[test]
    fn config_validation_rejects_bad_k_lists() {
        let v = PolySymbol::coordinate(1, Var::V(0));
        let vb = PolySymbol::coordinate(1, Var::VBar(0));
        let mut cfg = poly_pair_config(v, vb);
        cfg.ks = vec![1.0, 2.0];
        cfg.degrees = Some(vec![4, 4]);
        assert!(cfg.validate().is_err());
        cfg.ks = vec![1.0, 2.0, 2.0];
        cfg.degrees = Some(vec![4, 4, 4]);
        assert!(cfg.validate().is_err());
        cfg.ks = vec![1.0, 2.0, 4.0];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn default_degree_schedule_tracks_support() {
        let cfg = SweepConfig {
            n: 1,
            symbols: SymbolPairSpec::Bumps {
                f: BumpSpec {
                    center: vec![0.2, 0.0, 0.0, 0.0],
                    radius: 1.0,
                },
                g: BumpSpec {
                    center: vec![-0.2, 0.0, 0.0, 0.0],
                    radius: 1.0,
                },
            },
            chart: ChartSpec::default(),
            ks: vec![2.0, 4.0, 8.0],
            degrees: None,
            degree_extra: 8,
            hermite_order: None,
            fs_radial: 8,
            fs_angular: 8,
            interior_margin: 8,
            emit_timings: false,
            csv_path: None,
            json_path: None,
        };
        assert_abs_diff_eq!(cfg.support_bound(), 1.2, epsilon = 1e-15);
        // ceil(k * 1.44) + 8
        assert_eq!(cfg.degree_for(0), 11);
        assert_eq!(cfg.degree_for(2), 20);
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let v = PolySymbol::coordinate(1, Var::V(0));
        let vb = PolySymbol::coordinate(1, Var::VBar(0));
        let mut cfg = poly_pair_config(v, vb);
        cfg.ks = vec![1.0, 2.0, 4.0];
        cfg.degrees = Some(vec![6, 6, 6]);
        let res = run_sweep(&cfg).unwrap();
        assert_eq!(res.records.len(), 3);
        assert!(res.records.windows(2).all(|w| w[0].k < w[1].k));
        assert!(res.records.iter().all(|r| r.error.is_none()));
        assert!(res.records.iter().all(|r| r.wall_ms == 0));

        // A non-finite symbol makes every level fail; the sweep still
        // returns one record per k with the error recorded.
        let nan = PolySymbol::constant(1, Complex64::new(f64::NAN, 0.0));
        let v = PolySymbol::coordinate(1, Var::V(0));
        let bad = run_sweep(&poly_pair_config(nan, v)).unwrap();
        assert_eq!(bad.records.len(), 3);
        assert!(bad.records.iter().all(|r| r.error.is_some()));
        assert!(bad.fit_first_order.is_none() && bad.fit_commutator.is_none());
    }

    #[test]
    fn fast_grid_sweep_matches_generic_path() {
        let chart = RemovedFiberChart::standard();
        let bf = BumpSpec {
            center: vec![0.2, 0.0, 0.0, 0.0],
            radius: 1.0,
        }
        .build(1)
        .unwrap();
        let bg = BumpSpec {
            center: vec![-0.2, 0.0, 0.0, 0.0],
            radius: 1.0,
        }
        .build(1)
        .unwrap();
        let (sf, rf) = (bf.symbol(chart.clone()), bf.support_radius());
        let (sg, rg) = (bg.symbol(chart), bg.support_radius());

        let basis = FockBasis::new(1, 2.0, 6).unwrap();
        let fs = fs_quadrature_build(8, 6).unwrap();
        let p = ResidualParams {
            basis: &basis,
            hermite_order: 12,
            fs: &fs,
            support_f: Some(rf),
            support_g: Some(rg),
            interior_margin: 2,
        };
        let v_nodes = block_nodes(1, basis.k, p.hermite_order);
        let fast = build_grids(&sf, &sg, &v_nodes, &v_nodes, &p).unwrap();
        let generic = build_grids_generic(&sf, &sg, &v_nodes, &v_nodes, &p).unwrap();
        for (a, b) in [
            (&fast.f, &generic.f),
            (&fast.g, &generic.g),
            (&fast.fg, &generic.fg),
            (&fast.corr, &generic.corr),
            (&fast.bracket, &generic.bracket),
        ] {
            let diff = (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(diff <= 1e-12, "grid mismatch {diff:e}");
        }
    }
}
