//! Symbols on the twistor family: pull-back of functions from R^{4n},
//! reduction over the sphere against the unit-mass Fubini-Study weight, and
//! the fiber / full Poisson brackets.
//!
//! A symbol is an evaluation contract (v, xi, zeta) -> C with one of three
//! kinds: `PulledBack` wraps a function on R^{4n} composed with a chart
//! inverse, `Reduced` is zeta-independent, and `Polynomial` is a finite
//! coefficient table in v, conj(v), xi, conj(xi) with exact arithmetic.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::charts::{from_chart, ChartCoords, RemovedFiberChart};
use crate::error::{Error, Result};
use crate::hyperkahler::RealPoint4n;
use crate::quadrature::FsQuadrature;

/// Default base step for finite-difference derivatives; the effective step
/// is scaled by max(1, |coordinate|).
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// One complex differentiation slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    V(usize),
    VBar(usize),
    Xi(usize),
    XiBar(usize),
}

/// Exact polynomial in v, conj(v), xi, conj(xi). Exponent keys are vectors
/// of length 4n laid out as [v | conj(v) | xi | conj(xi)] blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PolyRepr", into = "PolyRepr")]
pub struct PolySymbol {
    n: usize,
    terms: BTreeMap<Vec<usize>, Complex64>,
}

/// Serialization form: one record per term, exponents split per block.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolyTermRepr {
    v: Vec<usize>,
    v_bar: Vec<usize>,
    xi: Vec<usize>,
    xi_bar: Vec<usize>,
    re: f64,
    im: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolyRepr {
    n: usize,
    terms: Vec<PolyTermRepr>,
}

impl From<PolySymbol> for PolyRepr {
    fn from(p: PolySymbol) -> PolyRepr {
        let n = p.n;
        PolyRepr {
            n,
            terms: p
                .terms
                .into_iter()
                .map(|(key, c)| PolyTermRepr {
                    v: key[..n].to_vec(),
                    v_bar: key[n..2 * n].to_vec(),
                    xi: key[2 * n..3 * n].to_vec(),
                    xi_bar: key[3 * n..].to_vec(),
                    re: c.re,
                    im: c.im,
                })
                .collect(),
        }
    }
}

impl From<PolyRepr> for PolySymbol {
    fn from(r: PolyRepr) -> PolySymbol {
        let mut p = PolySymbol::zero(r.n);
        for t in r.terms {
            let mut key = t.v;
            key.extend(t.v_bar);
            key.extend(t.xi);
            key.extend(t.xi_bar);
            key.resize(4 * r.n, 0);
            p.add_term(key, Complex64::new(t.re, t.im));
        }
        p
    }
}

impl PolySymbol {
    pub fn zero(n: usize) -> Self {
        PolySymbol {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, c: Complex64) -> Self {
        let mut p = Self::zero(n);
        p.add_term(vec![0; 4 * n], c);
        p
    }

    /// The coordinate monomial for a single slot.
    pub fn coordinate(n: usize, var: Var) -> Self {
        let mut key = vec![0; 4 * n];
        key[Self::slot(n, var)] = 1;
        let mut p = Self::zero(n);
        p.add_term(key, Complex64::new(1.0, 0.0));
        p
    }

    fn slot(n: usize, var: Var) -> usize {
        match var {
            Var::V(j) => j,
            Var::VBar(j) => n + j,
            Var::Xi(j) => 2 * n + j,
            Var::XiBar(j) => 3 * n + j,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &BTreeMap<Vec<usize>, Complex64> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree counting all four blocks.
    pub fn total_degree(&self) -> usize {
        self.terms
            .keys()
            .map(|k| k.iter().sum::<usize>())
            .max()
            .unwrap_or(0)
    }

    pub fn add_term(&mut self, key: Vec<usize>, coeff: Complex64) {
        assert_eq!(key.len(), 4 * self.n, "exponent key has wrong length");
        let entry = self.terms.entry(key.clone()).or_insert(Complex64::new(0.0, 0.0));
        *entry += coeff;
        if entry.norm_sqr() == 0.0 {
            self.terms.remove(&key);
        }
    }

    pub fn add(&self, other: &PolySymbol) -> PolySymbol {
        assert_eq!(self.n, other.n);
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(k.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &PolySymbol) -> PolySymbol {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: Complex64) -> PolySymbol {
        let mut out = Self::zero(self.n);
        for (k, a) in &self.terms {
            out.add_term(k.clone(), a * c);
        }
        out
    }

    pub fn mul(&self, other: &PolySymbol) -> PolySymbol {
        assert_eq!(self.n, other.n);
        let mut out = Self::zero(self.n);
        for (ka, ca) in &self.terms {
            for (kb, cb) in &other.terms {
                let key: Vec<usize> = ka.iter().zip(kb.iter()).map(|(a, b)| a + b).collect();
                out.add_term(key, ca * cb);
            }
        }
        out
    }

    /// Exact partial derivative in one complex slot.
    pub fn derivative(&self, var: Var) -> PolySymbol {
        let slot = Self::slot(self.n, var);
        let mut out = Self::zero(self.n);
        for (k, c) in &self.terms {
            if k[slot] == 0 {
                continue;
            }
            let mut key = k.clone();
            key[slot] -= 1;
            out.add_term(key, c * k[slot] as f64);
        }
        out
    }

    pub fn eval(&self, v: &[Complex64], xi: &[Complex64]) -> Complex64 {
        let n = self.n;
        let mut out = Complex64::new(0.0, 0.0);
        for (k, c) in &self.terms {
            let mut term = *c;
            for j in 0..n {
                term *= v[j].powu(k[j] as u32);
                term *= v[j].conj().powu(k[n + j] as u32);
                term *= xi[j].powu(k[2 * n + j] as u32);
                term *= xi[j].conj().powu(k[3 * n + j] as u32);
            }
            out += term;
        }
        out
    }
}

/// Function on R^{4n}.
pub type PointFn = dyn Fn(&RealPoint4n) -> Complex64 + Send + Sync;
/// Real-coordinate gradient on R^{4n}, in [x1 | x2 | x3 | x4] block order.
pub type PointGradFn = dyn Fn(&RealPoint4n) -> Vec<Complex64> + Send + Sync;
/// zeta-independent fiber function.
pub type FiberFn = dyn Fn(&[Complex64], &[Complex64]) -> Result<Complex64> + Send + Sync;
/// Fiber gradient [d/dv | d/dconj(v) | d/dxi | d/dconj(xi)], length 4n.
pub type FiberGradFn =
    dyn Fn(&[Complex64], &[Complex64]) -> Result<Vec<Complex64>> + Send + Sync;

/// A symbol on the twistor family.
#[derive(Clone)]
pub enum Symbol {
    /// h composed with a chart inverse; optionally carries the analytic
    /// gradient of h for derivative-hungry consumers.
    PulledBack {
        func: Arc<PointFn>,
        grad: Option<Arc<PointGradFn>>,
        chart: RemovedFiberChart,
    },
    /// zeta-independent function of (v, xi), e.g. the output of `reduce`.
    Reduced {
        func: Arc<FiberFn>,
        grad: Option<Arc<FiberGradFn>>,
    },
    Polynomial(PolySymbol),
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::PulledBack { chart, grad, .. } => f
                .debug_struct("PulledBack")
                .field("chart", chart)
                .field("has_grad", &grad.is_some())
                .finish(),
            Symbol::Reduced { grad, .. } => f
                .debug_struct("Reduced")
                .field("has_grad", &grad.is_some())
                .finish(),
            Symbol::Polynomial(p) => f.debug_tuple("Polynomial").field(p).finish(),
        }
    }
}

impl Symbol {
    pub fn polynomial(p: PolySymbol) -> Symbol {
        Symbol::Polynomial(p)
    }

    pub fn reduced<F>(f: F) -> Symbol
    where
        F: Fn(&[Complex64], &[Complex64]) -> Result<Complex64> + Send + Sync + 'static,
    {
        Symbol::Reduced {
            func: Arc::new(f),
            grad: None,
        }
    }

    pub fn reduced_with_gradient<F, G>(f: F, grad: G) -> Symbol
    where
        F: Fn(&[Complex64], &[Complex64]) -> Result<Complex64> + Send + Sync + 'static,
        G: Fn(&[Complex64], &[Complex64]) -> Result<Vec<Complex64>> + Send + Sync + 'static,
    {
        Symbol::Reduced {
            func: Arc::new(f),
            grad: Some(Arc::new(grad)),
        }
    }

    pub fn is_zeta_independent(&self) -> bool {
        !matches!(self, Symbol::PulledBack { .. })
    }

    /// Evaluate at chart coordinates (v, xi, zeta).
    pub fn eval(&self, v: &[Complex64], xi: &[Complex64], zeta: Complex64) -> Result<Complex64> {
        match self {
            Symbol::PulledBack { func, chart, .. } => {
                let coords = ChartCoords {
                    v: v.to_vec(),
                    xi: xi.to_vec(),
                    zeta,
                };
                let (x, _) = from_chart(&coords, chart);
                Ok(func(&x))
            }
            Symbol::Reduced { func, .. } => func(v, xi),
            Symbol::Polynomial(p) => Ok(p.eval(v, xi)),
        }
    }

    pub fn eval_at(&self, at: &ChartCoords) -> Result<Complex64> {
        self.eval(&at.v, &at.xi, at.zeta)
    }
}

/// Pull a function on R^{4n} back to the twistor family through a chart.
pub fn pull_back<F>(h: F, chart: RemovedFiberChart) -> Symbol
where
    F: Fn(&RealPoint4n) -> Complex64 + Send + Sync + 'static,
{
    Symbol::PulledBack {
        func: Arc::new(h),
        grad: None,
        chart,
    }
}

/// Pull-back that also records the analytic gradient of h.
pub fn pull_back_with_gradient<F, G>(h: F, grad: G, chart: RemovedFiberChart) -> Symbol
where
    F: Fn(&RealPoint4n) -> Complex64 + Send + Sync + 'static,
    G: Fn(&RealPoint4n) -> Vec<Complex64> + Send + Sync + 'static,
{
    Symbol::PulledBack {
        func: Arc::new(h),
        grad: Some(Arc::new(grad)),
        chart,
    }
}

/// Quadrature rule for the unit-mass Fubini-Study weight; orders must be >= 1.
pub fn fs_quadrature_build(radial_order: usize, angular_order: usize) -> Result<FsQuadrature> {
    if radial_order == 0 || angular_order == 0 {
        return Err(Error::InvalidConfig(
            "Fubini-Study quadrature orders must be >= 1".into(),
        ));
    }
    Ok(FsQuadrature::new(radial_order, angular_order))
}

/// Fiberwise averaging over the sphere: (v, xi) -> int s(v, xi, zeta) dFS(zeta).
/// zeta-independent symbols are returned unchanged; for pulled-back symbols
/// the output is a `Reduced` symbol whose gradient (when the input carries
/// one) is the quadrature of the chain-rule gradient.
pub fn reduce(s: &Symbol, q: &FsQuadrature) -> Result<Symbol> {
    match s {
        Symbol::Reduced { .. } | Symbol::Polynomial(_) => Ok(s.clone()),
        Symbol::PulledBack { grad, .. } => {
            let inner = s.clone();
            let rule = q.clone();
            let func = move |v: &[Complex64], xi: &[Complex64]| -> Result<Complex64> {
                let mut acc = Complex64::new(0.0, 0.0);
                for &(zeta, w) in rule.nodes() {
                    let val = inner.eval(v, xi, zeta)?;
                    if !val.re.is_finite() || !val.im.is_finite() {
                        return Err(Error::NonFinite("fiberwise symbol reduction"));
                    }
                    acc += w * val;
                }
                Ok(acc)
            };
            let grad_closure: Option<Arc<FiberGradFn>> = if grad.is_some() {
                let inner = s.clone();
                let rule = q.clone();
                Some(Arc::new(
                    move |v: &[Complex64], xi: &[Complex64]| -> Result<Vec<Complex64>> {
                        let mut acc = vec![Complex64::new(0.0, 0.0); 4 * v.len()];
                        for &(zeta, w) in rule.nodes() {
                            let g = pulled_back_fiber_gradient(&inner, v, xi, zeta)?;
                            for (a, b) in acc.iter_mut().zip(g) {
                                *a += w * b;
                            }
                        }
                        Ok(acc)
                    },
                ))
            } else {
                None
            };
            Ok(Symbol::Reduced {
                func: Arc::new(func),
                grad: grad_closure,
            })
        }
    }
}

/// Chain rule through the chart inverse: exact fiber gradient of a
/// pulled-back symbol carrying an analytic gradient.
fn pulled_back_fiber_gradient(
    s: &Symbol,
    v: &[Complex64],
    xi: &[Complex64],
    zeta: Complex64,
) -> Result<Vec<Complex64>> {
    let Symbol::PulledBack { grad, chart, .. } = s else {
        return Err(Error::InvalidConfig(
            "chain-rule gradient requires a pulled-back symbol".into(),
        ));
    };
    let Some(grad) = grad else {
        return Err(Error::InvalidConfig(
            "pulled-back symbol carries no analytic gradient".into(),
        ));
    };
    let n = v.len();
    let coords = ChartCoords {
        v: v.to_vec(),
        xi: xi.to_vec(),
        zeta,
    };
    let (x, _) = from_chart(&coords, chart);
    let g = grad(&x);
    let (alpha, beta) = chart_frame(chart, zeta);
    let det = alpha.norm_sqr() + beta.norm_sqr();
    let half = Complex64::new(0.5, 0.0);
    let i = Complex64::new(0.0, 1.0);
    let mut out = vec![Complex64::new(0.0, 0.0); 4 * n];
    for l in 0..n {
        // Wirtinger combinations of the real gradient per quaternionic block.
        let f_z = half * (g[l] - i * g[n + l]);
        let f_zbar = half * (g[l] + i * g[n + l]);
        let f_w = half * (g[2 * n + l] - i * g[3 * n + l]);
        let f_wbar = half * (g[2 * n + l] + i * g[3 * n + l]);
        out[l] = (alpha.conj() * f_z + beta.conj() * f_wbar) / det;
        out[n + l] = (alpha * f_zbar + beta * f_w) / det;
        out[2 * n + l] = (alpha.conj() * f_w - beta.conj() * f_zbar) / det;
        out[3 * n + l] = (alpha * f_wbar - beta * f_z) / det;
    }
    Ok(out)
}

/// The fiber-map coefficients (alpha, beta) of a chart at given zeta:
/// v = alpha z + beta conj(w), xi = alpha w - beta conj(z).
fn chart_frame(chart: &RemovedFiberChart, zeta: Complex64) -> (Complex64, Complex64) {
    match chart.zeta0 {
        None => (Complex64::new(1.0, 0.0), zeta),
        Some(z0) => {
            let e2 = Complex64::from_polar(1.0, 2.0 * chart.psi);
            (zeta + e2 * z0.conj(), z0 * zeta - e2)
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    V(usize),
    Xi(usize),
    Zeta,
}

fn eval_displaced(
    s: &Symbol,
    v: &[Complex64],
    xi: &[Complex64],
    zeta: Complex64,
    slot: Slot,
    d: Complex64,
) -> Result<Complex64> {
    match slot {
        Slot::V(j) => {
            let mut vv = v.to_vec();
            vv[j] += d;
            s.eval(&vv, xi, zeta)
        }
        Slot::Xi(j) => {
            let mut xx = xi.to_vec();
            xx[j] += d;
            s.eval(v, &xx, zeta)
        }
        Slot::Zeta => s.eval(v, xi, zeta + d),
    }
}

/// Fourth-order central finite difference of `f` along one real direction.
fn central_diff_4<F: FnMut(f64) -> Result<Complex64>>(mut f: F, h: f64) -> Result<Complex64> {
    let fm2 = f(-2.0 * h)?;
    let fm1 = f(-h)?;
    let fp1 = f(h)?;
    let fp2 = f(2.0 * h)?;
    Ok((fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h))
}

/// Wirtinger pair (d/dc, d/dconj(c)) of the symbol in one complex slot, by
/// finite differences with the step scaled to the coordinate magnitude.
fn wirtinger_pair_fd(
    s: &Symbol,
    v: &[Complex64],
    xi: &[Complex64],
    zeta: Complex64,
    slot: Slot,
    step: f64,
) -> Result<(Complex64, Complex64)> {
    let base = match slot {
        Slot::V(j) => v[j],
        Slot::Xi(j) => xi[j],
        Slot::Zeta => zeta,
    };
    let h = step * base.norm().max(1.0);
    let fx = central_diff_4(
        |t| eval_displaced(s, v, xi, zeta, slot, Complex64::new(t, 0.0)),
        h,
    )?;
    let fy = central_diff_4(
        |t| eval_displaced(s, v, xi, zeta, slot, Complex64::new(0.0, t)),
        h,
    )?;
    let i = Complex64::new(0.0, 1.0);
    Ok(((fx - i * fy) * 0.5, (fx + i * fy) * 0.5))
}

/// Fiber gradient [d/dv | d/dconj(v) | d/dxi | d/dconj(xi)] of a symbol at a
/// point, using the best available path: exact coefficients for polynomials,
/// carried analytic gradients, chain rule for pulled-backs with gradients,
/// and finite differences otherwise.
pub fn fiber_gradient(
    s: &Symbol,
    v: &[Complex64],
    xi: &[Complex64],
    zeta: Complex64,
    step: f64,
) -> Result<Vec<Complex64>> {
    let n = v.len();
    match s {
        Symbol::Polynomial(p) => {
            let mut out = Vec::with_capacity(4 * n);
            for j in 0..n {
                out.push(p.derivative(Var::V(j)).eval(v, xi));
            }
            for j in 0..n {
                out.push(p.derivative(Var::VBar(j)).eval(v, xi));
            }
            for j in 0..n {
                out.push(p.derivative(Var::Xi(j)).eval(v, xi));
            }
            for j in 0..n {
                out.push(p.derivative(Var::XiBar(j)).eval(v, xi));
            }
            Ok(out)
        }
        Symbol::Reduced {
            grad: Some(grad), ..
        } => grad(v, xi),
        Symbol::PulledBack { grad: Some(_), .. } => pulled_back_fiber_gradient(s, v, xi, zeta),
        _ => {
            let mut dv = Vec::with_capacity(n);
            let mut dvbar = Vec::with_capacity(n);
            let mut dxi = Vec::with_capacity(n);
            let mut dxibar = Vec::with_capacity(n);
            for j in 0..n {
                let (d, dbar) = wirtinger_pair_fd(s, v, xi, zeta, Slot::V(j), step)?;
                dv.push(d);
                dvbar.push(dbar);
            }
            for j in 0..n {
                let (d, dbar) = wirtinger_pair_fd(s, v, xi, zeta, Slot::Xi(j), step)?;
                dxi.push(d);
                dxibar.push(dbar);
            }
            let mut out = dv;
            out.extend(dvbar);
            out.extend(dxi);
            out.extend(dxibar);
            Ok(out)
        }
    }
}

fn fiber_bracket_from_gradients(gf: &[Complex64], gg: &[Complex64], n: usize) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    let mut sum = Complex64::new(0.0, 0.0);
    for j in 0..n {
        sum += gf[j] * gg[n + j] - gg[j] * gf[n + j];
        sum += gf[2 * n + j] * gg[3 * n + j] - gg[2 * n + j] * gf[3 * n + j];
    }
    -i * sum
}

/// Fiber Poisson bracket -i sum_l (f_v g_vbar - g_v f_vbar + f_xi g_xibar - g_xi f_xibar)
/// evaluated at a point.
pub fn poisson_bracket_fiber(
    f: &Symbol,
    g: &Symbol,
    at: &ChartCoords,
    step: f64,
) -> Result<Complex64> {
    let gf = fiber_gradient(f, &at.v, &at.xi, at.zeta, step)?;
    let gg = fiber_gradient(g, &at.v, &at.xi, at.zeta, step)?;
    Ok(fiber_bracket_from_gradients(&gf, &gg, at.n()))
}

/// Full Poisson bracket: the fiber bracket plus the zeta term
/// -i (f_zeta g_zetabar - g_zeta f_zetabar). The zeta derivatives vanish for
/// zeta-independent kinds and are finite differences otherwise.
pub fn poisson_bracket_full(
    f: &Symbol,
    g: &Symbol,
    at: &ChartCoords,
    step: f64,
) -> Result<Complex64> {
    let mut out = poisson_bracket_fiber(f, g, at, step)?;
    if !(f.is_zeta_independent() && g.is_zeta_independent()) {
        let zero = Complex64::new(0.0, 0.0);
        let (fz, fzb) = if f.is_zeta_independent() {
            (zero, zero)
        } else {
            wirtinger_pair_fd(f, &at.v, &at.xi, at.zeta, Slot::Zeta, step)?
        };
        let (gz, gzb) = if g.is_zeta_independent() {
            (zero, zero)
        } else {
            wirtinger_pair_fd(g, &at.v, &at.xi, at.zeta, Slot::Zeta, step)?
        };
        out += -Complex64::new(0.0, 1.0) * (fz * gzb - gz * fzb);
    }
    Ok(out)
}

/// The fiber bracket as a symbol (exact polynomial when both inputs are
/// polynomials; a `Reduced` evaluation otherwise). Inputs must be
/// zeta-independent.
pub fn poisson_bracket_fiber_symbol(f: &Symbol, g: &Symbol, step: f64) -> Result<Symbol> {
    match (f, g) {
        (Symbol::Polynomial(pf), Symbol::Polynomial(pg)) => {
            let n = pf.n();
            let mut sum = PolySymbol::zero(n);
            for j in 0..n {
                let a = pf.derivative(Var::V(j)).mul(&pg.derivative(Var::VBar(j)));
                let b = pg.derivative(Var::V(j)).mul(&pf.derivative(Var::VBar(j)));
                let c = pf.derivative(Var::Xi(j)).mul(&pg.derivative(Var::XiBar(j)));
                let d = pg.derivative(Var::Xi(j)).mul(&pf.derivative(Var::XiBar(j)));
                sum = sum.add(&a.sub(&b)).add(&c.sub(&d));
            }
            Ok(Symbol::Polynomial(sum.scale(Complex64::new(0.0, -1.0))))
        }
        _ => {
            if !f.is_zeta_independent() || !g.is_zeta_independent() {
                return Err(Error::InvalidConfig(
                    "bracket symbol needs zeta-independent inputs; reduce first".into(),
                ));
            }
            let f = f.clone();
            let g = g.clone();
            let zeta = Complex64::new(0.0, 0.0);
            Ok(Symbol::reduced(move |v, xi| {
                let gf = fiber_gradient(&f, v, xi, zeta, step)?;
                let gg = fiber_gradient(&g, v, xi, zeta, step)?;
                Ok(fiber_bracket_from_gradients(&gf, &gg, v.len()))
            }))
        }
    }
}

/// First-order correction symbol sum_j (f_vj g_vbarj + f_xij g_xibarj);
/// exact for polynomial inputs. Inputs must be zeta-independent.
pub fn correction_symbol(f: &Symbol, g: &Symbol, step: f64) -> Result<Symbol> {
    match (f, g) {
        (Symbol::Polynomial(pf), Symbol::Polynomial(pg)) => {
            let n = pf.n();
            let mut sum = PolySymbol::zero(n);
            for j in 0..n {
                sum = sum.add(&pf.derivative(Var::V(j)).mul(&pg.derivative(Var::VBar(j))));
                sum = sum.add(&pf.derivative(Var::Xi(j)).mul(&pg.derivative(Var::XiBar(j))));
            }
            Ok(Symbol::Polynomial(sum))
        }
        _ => {
            if !f.is_zeta_independent() || !g.is_zeta_independent() {
                return Err(Error::InvalidConfig(
                    "correction symbol needs zeta-independent inputs; reduce first".into(),
                ));
            }
            let f = f.clone();
            let g = g.clone();
            let zeta = Complex64::new(0.0, 0.0);
            Ok(Symbol::reduced(move |v, xi| {
                let n = v.len();
                let gf = fiber_gradient(&f, v, xi, zeta, step)?;
                let gg = fiber_gradient(&g, v, xi, zeta, step)?;
                let mut sum = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    sum += gf[j] * gg[n + j];
                    sum += gf[2 * n + j] * gg[3 * n + j];
                }
                Ok(sum)
            }))
        }
    }
}

/// The canonical compactly supported smooth profile:
/// exp(1 - 1/(1 - r^2/R^2)) inside the ball of radius R about the center,
/// zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpFunction {
    pub center: RealPoint4n,
    pub radius: f64,
}

impl BumpFunction {
    pub fn new(center: RealPoint4n, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bump radius must be positive, got {radius}"
            )));
        }
        Ok(BumpFunction { center, radius })
    }

    fn rho(&self, x: &RealPoint4n) -> f64 {
        let xv = x.to_vector();
        let cv = self.center.to_vector();
        let mut r2 = 0.0;
        for i in 0..xv.len() {
            r2 += (xv[i] - cv[i]).powi(2);
        }
        r2 / (self.radius * self.radius)
    }

    pub fn eval(&self, x: &RealPoint4n) -> f64 {
        let rho = self.rho(x);
        if rho >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - rho)).exp()
        }
    }

    /// Analytic gradient in real coordinates, [x1 | x2 | x3 | x4] order.
    pub fn gradient(&self, x: &RealPoint4n) -> Vec<f64> {
        let xv = x.to_vector();
        let cv = self.center.to_vector();
        let rho = self.rho(x);
        let mut out = vec![0.0; xv.len()];
        if rho >= 1.0 {
            return out;
        }
        // d/drho exp(1 - (1-rho)^{-1}) = -value / (1-rho)^2
        let value = (1.0 - 1.0 / (1.0 - rho)).exp();
        let dval = -value / ((1.0 - rho) * (1.0 - rho));
        for i in 0..xv.len() {
            out[i] = dval * 2.0 * (xv[i] - cv[i]) / (self.radius * self.radius);
        }
        out
    }

    /// Pull-back through a chart, carrying the analytic gradient.
    pub fn symbol(&self, chart: RemovedFiberChart) -> Symbol {
        let this = self.clone();
        let that = self.clone();
        pull_back_with_gradient(
            move |x| Complex64::new(this.eval(x), 0.0),
            move |x| {
                that.gradient(x)
                    .into_iter()
                    .map(|g| Complex64::new(g, 0.0))
                    .collect()
            },
            chart,
        )
    }

    /// Largest distance from the origin at which the bump is nonzero.
    pub fn support_radius(&self) -> f64 {
        self.center.norm() + self.radius
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charts::zeta_to_sphere;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn at1(v: Complex64, xi: Complex64, zeta: Complex64) -> ChartCoords {
        ChartCoords {
            v: vec![v],
            xi: vec![xi],
            zeta,
        }
    }

    fn two_x1() -> Symbol {
        pull_back(
            |x: &RealPoint4n| Complex64::new(2.0 * x.x1[0], 0.0),
            RemovedFiberChart::standard(),
        )
    }

    #[test]
    fn pull_back_of_linear_function_matches_closed_form() {
        let s = two_x1();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let v = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            let xi = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            let zeta = c(2.0 * rng.gen::<f64>() - 1.0, 2.0 * rng.gen::<f64>() - 1.0);
            let got = s.eval(&[v], &[xi], zeta).unwrap();
            let d = 1.0 + zeta.norm_sqr();
            let want = (v + v.conj() - zeta * xi.conj() - zeta.conj() * xi) / d;
            assert!((got - want).norm() <= 1e-13, "{got} vs {want}");
        }
        // zeta = 0 slice: v + conj(v).
        let got = s.eval(&[c(0.3, 0.7)], &[c(1.0, -1.0)], c(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(got.re, 0.6, epsilon = 1e-14);
        assert_abs_diff_eq!(got.im, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn pull_back_of_constant_is_constant() {
        let s = pull_back(
            |_: &RealPoint4n| c(2.5, -1.0),
            RemovedFiberChart::standard(),
        );
        let got = s.eval(&[c(1.0, 2.0)], &[c(-3.0, 0.5)], c(0.7, -0.2)).unwrap();
        assert!((got - c(2.5, -1.0)).norm() <= 1e-15);
    }

    #[test]
    fn reduce_linear_example_gives_re_v() {
        let q = fs_quadrature_build(24, 16).unwrap();
        let red = reduce(&two_x1(), &q).unwrap();
        assert!(red.is_zeta_independent());
        for (v, xi) in [
            (c(1.3, 0.4), c(0.0, 0.0)),
            (c(-0.2, 0.9), c(0.7, -0.3)),
            (c(0.0, -2.0), c(1.0, 1.0)),
        ] {
            let got = red.eval(&[v], &[xi], c(9.0, 9.0)).unwrap();
            assert!((got - c(v.re, 0.0)).norm() <= 1e-10, "{got} vs {}", v.re);
        }
    }

    #[test]
    fn reduce_even_powers_match_derived_closed_form() {
        // For h = (2 x1)^m with m even, the fiber average over the sphere is
        //   sum_{j even} C(m,j) C(j,j/2) (2 Re v)^{m-j} |xi|^j (j/2)! (m-j/2)! / (m+1)!
        // which at xi = 0 collapses to 2^m (Re v)^m / (m+1).
        fn factorial(n: usize) -> f64 {
            crate::fock::ln_factorial(n).exp()
        }
        fn closed(m: usize, v: Complex64, xi: Complex64) -> f64 {
            let mut sum = 0.0;
            let mut j = 0;
            while j <= m {
                sum += crate::fock::binomial(m, j)
                    * crate::fock::binomial(j, j / 2)
                    * (2.0 * v.re).powi((m - j) as i32)
                    * xi.norm().powi(j as i32)
                    * factorial(j / 2)
                    * factorial(m - j / 2)
                    / factorial(m + 1);
                j += 2;
            }
            sum
        }
        let q = fs_quadrature_build(48, 32).unwrap();
        for m in [2usize, 4] {
            let s = pull_back(
                move |x: &RealPoint4n| Complex64::new((2.0 * x.x1[0]).powi(m as i32), 0.0),
                RemovedFiberChart::standard(),
            );
            let red = reduce(&s, &q).unwrap();
            for (v, xi) in [
                (c(1.3, 0.4), c(0.0, 0.0)),
                (c(1.3, 0.4), c(0.7, -0.2)),
                (c(0.5, -1.1), c(1.2, 0.3)),
            ] {
                let got = red.eval(&[v], &[xi], c(0.0, 0.0)).unwrap();
                let want = closed(m, v, xi);
                assert!(
                    (got - c(want, 0.0)).norm() <= 1e-9 * (1.0 + want.abs()),
                    "m={m} got {got} want {want}"
                );
                if xi.norm() == 0.0 {
                    let special = 2f64.powi(m as i32) * v.re.powi(m as i32) / (m as f64 + 1.0);
                    assert_abs_diff_eq!(want, special, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn reduce_is_stable_under_order_increase_and_positive() {
        let bump = BumpFunction::new(RealPoint4n::zero(1), 1.5).unwrap();
        let s = bump.symbol(RemovedFiberChart::standard());
        let q1 = fs_quadrature_build(24, 16).unwrap();
        let q2 = fs_quadrature_build(40, 24).unwrap();
        let r1 = reduce(&s, &q1).unwrap();
        let r2 = reduce(&s, &q2).unwrap();
        for (v, xi) in [(c(0.2, 0.1), c(0.3, -0.2)), (c(0.8, 0.0), c(0.0, 0.6))] {
            let a = r1.eval(&[v], &[xi], c(0.0, 0.0)).unwrap();
            let b = r2.eval(&[v], &[xi], c(0.0, 0.0)).unwrap();
            assert!((a - b).norm() <= 1e-8, "order drift {a} vs {b}");
            assert!(a.re >= 0.0 && a.im.abs() <= 1e-15);
        }
        // Reduced and Polynomial inputs pass through unchanged.
        let p = Symbol::polynomial(PolySymbol::coordinate(1, Var::V(0)));
        let rp = reduce(&p, &q1).unwrap();
        let got = rp.eval(&[c(0.4, -0.6)], &[c(0.0, 0.0)], c(1.0, 1.0)).unwrap();
        assert_eq!(got, c(0.4, -0.6));
    }

    #[test]
    fn polynomial_arithmetic_and_serialization() {
        let v = PolySymbol::coordinate(1, Var::V(0));
        let vbar = PolySymbol::coordinate(1, Var::VBar(0));
        let prod = v.mul(&vbar); // |v|^2
        assert_eq!(prod.eval(&[c(3.0, 4.0)], &[c(0.0, 0.0)]), c(25.0, 0.0));
        assert_eq!(prod.total_degree(), 2);
        let dv = prod.derivative(Var::V(0));
        assert_eq!(dv.eval(&[c(3.0, 4.0)], &[c(0.0, 0.0)]), c(3.0, -4.0));

        let json = serde_json::to_string(&prod).unwrap();
        let back: PolySymbol = serde_json::from_str(&json).unwrap();
        assert_eq!(back, prod);

        // cancellation prunes terms
        let zero = v.sub(&v);
        assert!(zero.is_zero());
    }

    #[test]
    fn bracket_of_v_and_vbar_is_minus_i() {
        let f = Symbol::polynomial(PolySymbol::coordinate(1, Var::V(0)));
        let g = Symbol::polynomial(PolySymbol::coordinate(1, Var::VBar(0)));
        let at = at1(c(0.3, 0.5), c(-0.7, 0.1), c(0.0, 0.0));
        let got = poisson_bracket_fiber(&f, &g, &at, DEFAULT_FD_STEP).unwrap();
        assert!((got - c(0.0, -1.0)).norm() <= 1e-14);
        let full = poisson_bracket_full(&f, &g, &at, DEFAULT_FD_STEP).unwrap();
        assert_eq!(got, full);
    }

    #[test]
    fn bracket_re_v_im_v_is_one_half() {
        // f = (v+conj v)/2, g = (v-conj v)/(2i): {f,g} = 1/2.
        let v = PolySymbol::coordinate(1, Var::V(0));
        let vbar = PolySymbol::coordinate(1, Var::VBar(0));
        let f = Symbol::polynomial(v.add(&vbar).scale(c(0.5, 0.0)));
        let g = Symbol::polynomial(v.sub(&vbar).scale(c(0.0, -0.5)));
        let at = at1(c(1.0, -2.0), c(0.4, 0.4), c(0.0, 0.0));
        let got = poisson_bracket_fiber(&f, &g, &at, DEFAULT_FD_STEP).unwrap();
        assert!((got - c(0.5, 0.0)).norm() <= 1e-14);
    }

    #[test]
    fn brackets_are_antisymmetric_and_vanish_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let bump = BumpFunction::new(RealPoint4n::zero(1), 2.0).unwrap();
        let f = bump.symbol(RemovedFiberChart::standard());
        let g = two_x1();
        for _ in 0..5 {
            let at = at1(
                c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
            );
            let fg = poisson_bracket_full(&f, &g, &at, DEFAULT_FD_STEP).unwrap();
            let gf = poisson_bracket_full(&g, &f, &at, DEFAULT_FD_STEP).unwrap();
            assert!((fg + gf).norm() <= 1e-8 * (1.0 + fg.norm()));
            let ff = poisson_bracket_full(&f, &f, &at, DEFAULT_FD_STEP).unwrap();
            assert!(ff.norm() <= 1e-9);
        }
    }

    #[test]
    fn bracket_satisfies_leibniz_on_polynomials() {
        // Integer coefficients keep every f64 operation exact.
        let v = PolySymbol::coordinate(2, Var::V(0));
        let xibar = PolySymbol::coordinate(2, Var::XiBar(1));
        let vbar = PolySymbol::coordinate(2, Var::VBar(0));
        let f = v.mul(&v).add(&xibar); // v^2 + conj(xi_2)
        let g = vbar.mul(&xibar); // conj(v) conj(xi_2)
        let h = v.add(&vbar); // v + conj(v)
        let fs = Symbol::polynomial(f.clone());
        let gh = Symbol::polynomial(g.mul(&h));
        let lhs = match poisson_bracket_fiber_symbol(&fs, &gh, DEFAULT_FD_STEP).unwrap() {
            Symbol::Polynomial(p) => p,
            _ => unreachable!(),
        };
        let fg = match poisson_bracket_fiber_symbol(
            &fs,
            &Symbol::polynomial(g.clone()),
            DEFAULT_FD_STEP,
        )
        .unwrap()
        {
            Symbol::Polynomial(p) => p,
            _ => unreachable!(),
        };
        let fh = match poisson_bracket_fiber_symbol(
            &fs,
            &Symbol::polynomial(h.clone()),
            DEFAULT_FD_STEP,
        )
        .unwrap()
        {
            Symbol::Polynomial(p) => p,
            _ => unreachable!(),
        };
        let rhs = fg.mul(&h).add(&g.mul(&fh));
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn fd_gradient_matches_exact_polynomial_gradient() {
        // Route the polynomial through an opaque Reduced wrapper so the
        // finite-difference path is exercised, then compare to exact.
        let v = PolySymbol::coordinate(1, Var::V(0));
        let xib = PolySymbol::coordinate(1, Var::XiBar(0));
        let p = v.mul(&v).mul(&xib).add(&v); // v^2 conj(xi) + v
        let p2 = p.clone();
        let opaque = Symbol::reduced(move |vv, xx| Ok(p2.eval(vv, xx)));
        let exact = Symbol::polynomial(p);
        let (vv, xx) = ([c(0.7, -0.3)], [c(-0.2, 0.9)]);
        let gf = fiber_gradient(&opaque, &vv, &xx, c(0.0, 0.0), DEFAULT_FD_STEP).unwrap();
        let ge = fiber_gradient(&exact, &vv, &xx, c(0.0, 0.0), DEFAULT_FD_STEP).unwrap();
        for (a, b) in gf.iter().zip(ge.iter()) {
            assert!((a - b).norm() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn correction_symbol_examples() {
        let v = Symbol::polynomial(PolySymbol::coordinate(1, Var::V(0)));
        let vbar = Symbol::polynomial(PolySymbol::coordinate(1, Var::VBar(0)));
        let corr = correction_symbol(&v, &vbar, DEFAULT_FD_STEP).unwrap();
        let got = corr.eval(&[c(5.0, 5.0)], &[c(1.0, 2.0)], c(0.0, 0.0)).unwrap();
        assert_eq!(got, c(1.0, 0.0));

        // f = g = Re v: dv f = 1/2 each, correction 1/4.
        let rev = match (&v, &vbar) {
            (Symbol::Polynomial(a), Symbol::Polynomial(b)) => {
                Symbol::polynomial(a.add(b).scale(c(0.5, 0.0)))
            }
            _ => unreachable!(),
        };
        let corr = correction_symbol(&rev, &rev, DEFAULT_FD_STEP).unwrap();
        let got = corr.eval(&[c(0.1, 0.2)], &[c(0.3, 0.4)], c(0.0, 0.0)).unwrap();
        assert_eq!(got, c(0.25, 0.0));

        // Real-valued f: value is a sum of squared moduli, nonnegative.
        let bump = BumpFunction::new(RealPoint4n::zero(1), 2.0).unwrap();
        let q = fs_quadrature_build(16, 12).unwrap();
        let f = reduce(&bump.symbol(RemovedFiberChart::standard()), &q).unwrap();
        let corr = correction_symbol(&f, &f, DEFAULT_FD_STEP).unwrap();
        let got = corr
            .eval(&[c(0.4, -0.1)], &[c(0.2, 0.3)], c(0.0, 0.0))
            .unwrap();
        assert!(got.re >= -1e-12 && got.im.abs() <= 1e-10, "{got}");

        assert!(correction_symbol(&two_x1(), &v, DEFAULT_FD_STEP).is_err());
    }

    #[test]
    fn bump_profile_and_gradient() {
        let bump = BumpFunction::new(RealPoint4n::zero(1), 2.0).unwrap();
        let origin = RealPoint4n::zero(1);
        assert_abs_diff_eq!(bump.eval(&origin), 1.0);
        let outside = RealPoint4n::new(vec![3.0], vec![0.0], vec![0.0], vec![0.0]);
        assert_eq!(bump.eval(&outside), 0.0);
        assert!(bump.gradient(&outside).iter().all(|g| *g == 0.0));
        assert_abs_diff_eq!(bump.support_radius(), 2.0);

        // Analytic gradient against central differences.
        let x = RealPoint4n::new(vec![0.5], vec![-0.3], vec![0.8], vec![0.1]);
        let grad = bump.gradient(&x);
        let h = 1e-6;
        for slot in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            match slot {
                0 => {
                    xp.x1[0] += h;
                    xm.x1[0] -= h;
                }
                1 => {
                    xp.x2[0] += h;
                    xm.x2[0] -= h;
                }
                2 => {
                    xp.x3[0] += h;
                    xm.x3[0] -= h;
                }
                _ => {
                    xp.x4[0] += h;
                    xm.x4[0] -= h;
                }
            }
            let fd = (bump.eval(&xp) - bump.eval(&xm)) / (2.0 * h);
            assert!((fd - grad[slot]).abs() <= 1e-8, "slot {slot}: {fd} vs {}", grad[slot]);
        }
    }

    #[test]
    fn pulled_back_chain_rule_gradient_matches_fd() {
        let bump = BumpFunction::new(RealPoint4n::zero(1), 2.0).unwrap();
        let with_grad = bump.symbol(RemovedFiberChart::standard());
        let bump2 = bump.clone();
        let without_grad = pull_back(
            move |x: &RealPoint4n| Complex64::new(bump2.eval(x), 0.0),
            RemovedFiberChart::standard(),
        );
        let (v, xi) = ([c(0.4, 0.2)], [c(-0.3, 0.5)]);
        for zeta in [c(0.0, 0.0), c(0.6, -0.8), c(1.5, 0.3)] {
            let exact = fiber_gradient(&with_grad, &v, &xi, zeta, DEFAULT_FD_STEP).unwrap();
            let fd = fiber_gradient(&without_grad, &v, &xi, zeta, DEFAULT_FD_STEP).unwrap();
            for (a, b) in exact.iter().zip(fd.iter()) {
                assert!((a - b).norm() <= 1e-8, "zeta {zeta}: {a} vs {b}");
            }
        }
        // And through a moved chart (exercises the general-frame chain rule).
        let moved = RemovedFiberChart::for_point(zeta_to_sphere(c(1.0, 1.0))).unwrap();
        let with_grad = bump.symbol(moved.clone());
        let bump3 = bump.clone();
        let without_grad = pull_back(move |x: &RealPoint4n| Complex64::new(bump3.eval(x), 0.0), moved);
        let exact = fiber_gradient(&with_grad, &v, &xi, c(0.3, 0.7), DEFAULT_FD_STEP).unwrap();
        let fd = fiber_gradient(&without_grad, &v, &xi, c(0.3, 0.7), DEFAULT_FD_STEP).unwrap();
        for (a, b) in exact.iter().zip(fd.iter()) {
            assert!((a - b).norm() <= 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn reduced_bump_gradient_matches_fd() {
        let bump = BumpFunction::new(RealPoint4n::zero(1), 2.0).unwrap();
        let q = fs_quadrature_build(20, 16).unwrap();
        let red = reduce(&bump.symbol(RemovedFiberChart::standard()), &q).unwrap();
        // Strip the carried gradient to force finite differences.
        let stripped = match &red {
            Symbol::Reduced { func, .. } => Symbol::Reduced {
                func: func.clone(),
                grad: None,
            },
            _ => unreachable!(),
        };
        let (v, xi) = ([c(0.5, -0.2)], [c(0.1, 0.4)]);
        let exact = fiber_gradient(&red, &v, &xi, c(0.0, 0.0), DEFAULT_FD_STEP).unwrap();
        let fd = fiber_gradient(&stripped, &v, &xi, c(0.0, 0.0), DEFAULT_FD_STEP).unwrap();
        for (a, b) in exact.iter().zip(fd.iter()) {
            assert!((a - b).norm() <= 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn fs_build_rejects_zero_orders() {
        assert!(fs_quadrature_build(0, 4).is_err());
        assert!(fs_quadrature_build(4, 0).is_err());
    }
}
