//! Coordinate charts on the twistor family of R^{4n} with one fiber removed.
//!
//! The standard chart removes the fiber over (-1, 0, 0) and uses the complex
//! coordinates v = z + zeta*conj(w), xi = w - zeta*conj(z) together with the
//! stereographic coordinate zeta on the two-sphere. Charts removing an
//! arbitrary fiber are obtained by moving the sphere with an SU(2) element
//! and come with a free phase parameter psi.

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hyperkahler::{structure_matrix, RealPoint4n, SpherePoint};

/// Proximity threshold for rejecting evaluation on the removed fiber.
pub const REMOVED_FIBER_TOL: f64 = 1e-9;

///// Default phase: psi = pi/2, so e^{2i psi} = -1 and the chart with
/// zeta0 = 0 reproduces the transition chart (v/zeta, xi/zeta, 1/zeta).
pub const DEFAULT_PSI: f64 = std::f64::consts::FRAC_PI_2;

/// Complex coordinates (v, xi, zeta) of a point of the twistor family.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartCoords {
    pub v: Vec<Complex64>,
    pub xi: Vec<Complex64>,
    pub zeta: Complex64,
}

impl ChartCoords {
    pub fn n(&self) -> usize {
        debug_assert_eq!(self.v.len(), self.xi.len());
        self.v.len()
    }
}

/// An element [[alpha, beta], [-conj(beta), conj(alpha)]] of SU(2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Su2Matrix {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl Su2Matrix {
    /// Unit-norm check to 1e-12, matching the sphere-point tolerance.
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let r = alpha.norm_sqr() + beta.norm_sqr();
        if (r - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "SU(2) entries have |alpha|^2 + |beta|^2 = {r}, expected 1"
            )));
        }
        Ok(Su2Matrix { alpha, beta })
    }

    pub fn identity() -> Self {
        Su2Matrix {
            alpha: Complex64::new(1.0, 0.0),
            beta: Complex64::new(0.0, 0.0),
        }
    }

    pub fn matrix(&self) -> Matrix2<Complex64> {
        Matrix2::new(self.alpha, self.beta, -self.beta.conj(), self.alpha.conj())
    }

    /// The inverse [[conj(alpha), -beta], [conj(beta), alpha]], again in SU(2).
    pub fn inverse(&self) -> Su2Matrix {
        Su2Matrix {
            alpha: self.alpha.conj(),
            beta: -self.beta,
        }
    }

    /// Projective action on CP^1: [z0 : z1] -> [alpha z0 + beta z1 : -conj(beta) z0 + conj(alpha) z1].
    pub fn mobius_ratio(&self, num: Complex64, den: Complex64) -> (Complex64, Complex64) {
        (
            self.alpha * num + self.beta * den,
            -self.beta.conj() * num + self.alpha.conj() * den,
        )
    }

    /// The same action in the affine coordinate zeta = z0/z1.
    pub fn mobius(&self, zeta: Complex64) -> Complex64 {
        let (num, den) = self.mobius_ratio(zeta, Complex64::new(1.0, 0.0));
        num / den
    }

    /// Induced rotation of the two-sphere, written out in (a, b, c).
    pub fn sphere_action(&self, s: SpherePoint) -> SpherePoint {
        let (al, be) = (self.alpha, self.beta);
        let ab_conj = al * be.conj();
        let ab = al * be;
        let sum = al * al + be.conj() * be.conj();
        let dif = al * al - be.conj() * be.conj();
        let a = (al.norm_sqr() - be.norm_sqr()) * s.a + 2.0 * ab_conj.im * s.b
            + 2.0 * ab_conj.re * s.c;
        let b = 2.0 * ab.im * s.a + sum.re * s.b - sum.im * s.c;
        let c = -2.0 * ab.re * s.a + dif.im * s.b + dif.re * s.c;
        SpherePoint::normalized(a, b, c)
    }
}

/// Stereographic coordinate zeta = (-c + ib)/(a + 1) of the standard chart.
pub fn sphere_to_zeta(s: SpherePoint) -> Result<Complex64> {
    if s.a + 1.0 < REMOVED_FIBER_TOL {
        return Err(Error::RemovedFiber {
            tol: REMOVED_FIBER_TOL,
        });
    }
    Ok(Complex64::new(-s.c, s.b) / (s.a + 1.0))
}

/// Sphere point of a projective coordinate [num : den]; pole-free.
fn sphere_from_ratio(num: Complex64, den: Complex64) -> SpherePoint {
    let nn = num.norm_sqr();
    let dd = den.norm_sqr();
    let cross = num * den.conj();
    let total = nn + dd;
    SpherePoint::normalized(
        (dd - nn) / total,
        2.0 * cross.im / total,
        -2.0 * cross.re / total,
    )
}

/// Inverse stereographic map: a = (1 - |zeta|^2)/(1 + |zeta|^2), etc.
pub fn zeta_to_sphere(zeta: Complex64) -> SpherePoint {
    sphere_from_ratio(zeta, Complex64::new(1.0, 0.0))
}

/// A chart on the twistor family minus the fiber over `removed`.
///
/// `zeta0` is the stereographic image of the removed point; it is `None`
/// exactly for the standard chart (removed point (-1, 0, 0), whose
/// stereographic image is the point at infinity).
#[derive(Debug, Clone, PartialEq)]
pub struct RemovedFiberChart {
    pub removed: SpherePoint,
    pub zeta0: Option<Complex64>,
    pub psi: f64,
}

impl RemovedFiberChart {
    /// The chart removing the fiber over (-1, 0, 0).
    pub fn standard() -> Self {
        RemovedFiberChart {
            removed: SpherePoint {
                a: -1.0,
                b: 0.0,
                c: 0.0,
            },
            zeta0: None,
            psi: DEFAULT_PSI,
        }
    }

    /// Chart removing the fiber over `removed`, with an explicit phase.
    pub fn new(removed: SpherePoint, psi: f64) -> Result<Self> {
        SpherePoint::new(removed.a, removed.b, removed.c)?;
        let zeta0 = if removed.a + 1.0 < REMOVED_FIBER_TOL {
            None
        } else {
            Some(sphere_to_zeta(removed)?)
        };
        Ok(RemovedFiberChart {
            removed,
            zeta0,
            psi,
        })
    }

    /// Chart removing the fiber over `removed` with the default phase.
    pub fn for_point(removed: SpherePoint) -> Result<Self> {
        Self::new(removed, DEFAULT_PSI)
    }

    pub fn is_standard(&self) -> bool {
        self.zeta0.is_none()
    }

    fn e2(&self) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * self.psi)
    }

    /// Chart coordinate of a sphere point, with removed-fiber rejection.
    ///
    /// For a moved chart this is the Moebius action of the inverse of the
    /// chart-moving SU(2) element: zeta' = -e^{2i psi} (conj(zeta0) zeta + 1)/(zeta - zeta0)
    /// in terms of the standard coordinate zeta.
    pub fn zeta_of_sphere(&self, s: SpherePoint) -> Result<Complex64> {
        if s.dist(&self.removed) < REMOVED_FIBER_TOL {
            return Err(Error::RemovedFiber {
                tol: REMOVED_FIBER_TOL,
            });
        }
        let nb = Complex64::new(-s.c, s.b);
        let da = Complex64::new(s.a + 1.0, 0.0);
        match self.zeta0 {
            None => Ok(nb / da),
            Some(z0) => {
                let num = z0.conj() * nb + da;
                let den = nb - z0 * da;
                Ok(-self.e2() * num / den)
            }
        }
    }

    /// Chart coordinate in terms of the standard stereographic coordinate.
    pub fn zeta_from_standard(&self, zeta: Complex64) -> Result<Complex64> {
        match self.zeta0 {
            None => Ok(zeta),
            Some(z0) => {
                let den = zeta - z0;
                if den.norm() < REMOVED_FIBER_TOL {
                    return Err(Error::RemovedFiber {
                        tol: REMOVED_FIBER_TOL,
                    });
                }
                Ok(-self.e2() * (z0.conj() * zeta + 1.0) / den)
            }
        }
    }

    /// Inverse of `zeta_from_standard`; the pole maps to the removed point's
    /// antipode chartwise, handled projectively.
    pub fn sphere_of_zeta(&self, zeta: Complex64) -> SpherePoint {
        match self.zeta0 {
            None => zeta_to_sphere(zeta),
            Some(z0) => {
                let e2 = self.e2();
                sphere_from_ratio(z0 * zeta - e2, zeta + e2 * z0.conj())
            }
        }
    }

    /// |alpha|^2 + |beta|^2 of the fiber frame at `zeta`; this is the ratio
    /// (|v|^2 + |xi|^2)/|x|^2, useful for support short-circuits.
    pub fn frame_norm_sqr(&self, zeta: Complex64) -> f64 {
        let (alpha, beta, _, _) = self.frame(zeta);
        alpha.norm_sqr() + beta.norm_sqr()
    }

    /// Fiber frame (alpha, beta) at `zeta`: v = alpha z + beta conj(w),
    /// xi = alpha w - beta conj(z).
    pub fn fiber_frame(&self, zeta: Complex64) -> (Complex64, Complex64) {
        let (alpha, beta, _, _) = self.frame(zeta);
        (alpha, beta)
    }

    /// Coefficients (alpha, beta) of the fiber map v = alpha z + beta conj(w),
    /// xi = alpha w - beta conj(z), and their zeta-derivatives.
    fn frame(&self, zeta: Complex64) -> (Complex64, Complex64, Complex64, Complex64) {
        let one = Complex64::new(1.0, 0.0);
        match self.zeta0 {
            None => (one, zeta, Complex64::new(0.0, 0.0), one),
            Some(z0) => {
                let e2 = self.e2();
                (zeta + e2 * z0.conj(), z0 * zeta - e2, one, z0)
            }
        }
    }
}

/// Chart coordinates of the twistor point (x, s).
pub fn to_chart(x: &RealPoint4n, s: SpherePoint, chart: &RemovedFiberChart) -> Result<ChartCoords> {
    let zeta = chart.zeta_of_sphere(s)?;
    let (alpha, beta, _, _) = chart.frame(zeta);
    let z = x.z();
    let w = x.w();
    let n = x.n();
    let mut v = Vec::with_capacity(n);
    let mut xi = Vec::with_capacity(n);
    for l in 0..n {
        v.push(alpha * z[l] + beta * w[l].conj());
        xi.push(alpha * w[l] - beta * z[l].conj());
    }
    Ok(ChartCoords { v, xi, zeta })
}

/// Inverse chart map. For the standard chart this is the displayed inversion
/// z = (v - zeta conj(xi))/(1 + |zeta|^2), w = (xi + zeta conj(v))/(1 + |zeta|^2);
/// in general it solves the 2x2 fiber system with determinant |alpha|^2 + |beta|^2 > 0.
pub fn from_chart(c: &ChartCoords, chart: &RemovedFiberChart) -> (RealPoint4n, SpherePoint) {
    let (alpha, beta, _, _) = chart.frame(c.zeta);
    let det = alpha.norm_sqr() + beta.norm_sqr();
    let n = c.n();
    let mut z = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for l in 0..n {
        let xic = c.xi[l].conj();
        z.push((alpha.conj() * c.v[l] - beta * xic) / det);
        w.push(((beta.conj() * c.v[l] + alpha * xic) / det).conj());
    }
    (RealPoint4n::from_zw(&z, &w), chart.sphere_of_zeta(c.zeta))
}

/// Transition to the chart at the antipode: (v, xi, zeta) -> (v/zeta, xi/zeta, 1/zeta).
pub fn transition(c: &ChartCoords) -> Result<ChartCoords> {
    if c.zeta.norm() == 0.0 {
        return Err(Error::TransitionPole);
    }
    let inv = 1.0 / c.zeta;
    Ok(ChartCoords {
        v: c.v.iter().map(|v| v * inv).collect(),
        xi: c.xi.iter().map(|x| x * inv).collect(),
        zeta: inv,
    })
}

/// The SU(2) element gamma taking [1:0] to [zeta0:1], whose inverse moves the
/// removed point to (-1, 0, 0). The standard chart yields the identity.
pub fn su2_for_removed_point(chart: &RemovedFiberChart) -> Su2Matrix {
    match chart.zeta0 {
        None => Su2Matrix::identity(),
        Some(z0) => {
            let scale = 1.0 / (1.0 + z0.norm_sqr()).sqrt();
            let em = Complex64::from_polar(scale, -chart.psi);
            let ep = Complex64::from_polar(scale, chart.psi);
            // gamma = s * [[-e^{-i psi} zeta0, e^{i psi}], [-e^{-i psi}, -e^{i psi} conj(zeta0)]]
            Su2Matrix {
                alpha: -em * z0,
                beta: ep,
            }
        }
    }
}

/// Operator norm of J0 * Df - Df * (A + I_CP1), where Df is the exact real
/// Jacobian of (x, zeta) -> (v, xi, zeta), A = structure_matrix at s, and
/// I_CP1 acts as multiplication by i in the zeta plane. Zero (to rounding)
/// certifies that the chart coordinates are holomorphic.
pub fn holomorphy_residual(
    x: &RealPoint4n,
    s: SpherePoint,
    chart: &RemovedFiberChart,
) -> Result<f64> {
    let n = x.n();
    let zeta = chart.zeta_of_sphere(s)?;
    let (alpha, beta, dalpha, dbeta) = chart.frame(zeta);
    let z = x.z();
    let w = x.w();
    let i = Complex64::new(0.0, 1.0);

    // Complex Jacobian rows: v_1..v_n, xi_1..xi_n, zeta; columns: x1 | x2 | x3 | x4 blocks
    // then the zeta column (holomorphic, so the two real columns are determined).
    let rows = 2 * n + 1;
    let mut fiber = DMatrix::<Complex64>::zeros(rows, 4 * n);
    let mut horiz = vec![Complex64::new(0.0, 0.0); rows];
    for l in 0..n {
        fiber[(l, l)] = alpha;
        fiber[(l, n + l)] = i * alpha;
        fiber[(l, 2 * n + l)] = beta;
        fiber[(l, 3 * n + l)] = -i * beta;
        fiber[(n + l, l)] = -beta;
        fiber[(n + l, n + l)] = i * beta;
        fiber[(n + l, 2 * n + l)] = alpha;
        fiber[(n + l, 3 * n + l)] = i * alpha;
        horiz[l] = dalpha * z[l] + dbeta * w[l].conj();
        horiz[n + l] = dalpha * w[l] - dbeta * z[l].conj();
    }
    horiz[2 * n] = Complex64::new(1.0, 0.0);

    let dim_in = 4 * n + 2;
    let mut df = DMatrix::<f64>::zeros(2 * rows, dim_in);
    for r in 0..rows {
        for c in 0..4 * n {
            df[(2 * r, c)] = fiber[(r, c)].re;
            df[(2 * r + 1, c)] = fiber[(r, c)].im;
        }
        df[(2 * r, 4 * n)] = horiz[r].re;
        df[(2 * r + 1, 4 * n)] = horiz[r].im;
        df[(2 * r, 4 * n + 1)] = -horiz[r].im;
        df[(2 * r + 1, 4 * n + 1)] = horiz[r].re;
    }

    let mut j0 = DMatrix::<f64>::zeros(2 * rows, 2 * rows);
    for r in 0..rows {
        j0[(2 * r, 2 * r + 1)] = -1.0;
        j0[(2 * r + 1, 2 * r)] = 1.0;
    }
    let a = structure_matrix(s, n)?;
    let mut j_dom = DMatrix::<f64>::zeros(dim_in, dim_in);
    j_dom.view_mut((0, 0), (4 * n, 4 * n)).copy_from(&a.matrix);
    j_dom[(4 * n, 4 * n + 1)] = -1.0;
    j_dom[(4 * n + 1, 4 * n)] = 1.0;

    let resid = &j0 * &df - &df * &j_dom;
    let sv = resid.svd(false, false);
    Ok(sv.singular_values.max())
}
