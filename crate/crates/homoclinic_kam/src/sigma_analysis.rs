//! The homoclinic disk Σ, traces of KAM cylinders on it, enclosed actions
//! and the transverse intersections of the two traces.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use robust::{orient2d, Coord};

use crate::center_dynamics::{solve_model_fiber, CenterMap, KamCurve};
use crate::error::{Error, Result};
use crate::homoclinic::{HomoclinicOrbit, Side};
use crate::model_zoo::MapModel;
use crate::scattering::{genericity_of_matrix, GenericityClass, GenericityReport, ScatteringMap};
use crate::symplectic_core::{PhasePoint, SmoothMap4};

pub const TOL_ANGLE: f64 = 1e-3;
pub const TOL_MATCH: f64 = 0.1;
pub const TOL_SECTION: f64 = 1e-9;
pub const SECTION_BUDGET: usize = 10_000;

/// Bilinear interpolation on a square grid over [−R, R]².
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub radius: f64,
    pub n: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    fn node(&self, i: usize) -> f64 {
        -self.radius + 2.0 * self.radius * i as f64 / (self.n - 1) as f64
    }

    pub fn sample<F: FnMut(f64, f64) -> Result<f64>>(radius: f64, n: usize, mut f: F) -> Result<Self> {
        let mut g = GridFunction { radius, n, values: vec![0.0; n * n] };
        for i in 0..n {
            for j in 0..n {
                g.values[i * n + j] = f(g.node(i), g.node(j))?;
            }
        }
        Ok(g)
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let h = 2.0 * self.radius / (self.n - 1) as f64;
        let fu = ((u + self.radius) / h).clamp(0.0, (self.n - 1) as f64);
        let fv = ((v + self.radius) / h).clamp(0.0, (self.n - 1) as f64);
        let i = (fu.floor() as usize).min(self.n - 2);
        let j = (fv.floor() as usize).min(self.n - 2);
        let (a, b) = (fu - i as f64, fv - j as f64);
        let at = |i: usize, j: usize| self.values[i * self.n + j];
        (1.0 - a) * (1.0 - b) * at(i, j) + a * (1.0 - b) * at(i + 1, j) + (1.0 - a) * b * at(i, j + 1) + a * b * at(i + 1, j + 1)
    }

    /// Largest |coefficient| of the quadratic monomials in a least-squares
    /// quadratic fit of the grid values.
    pub fn quadratic_coefficient_bound(&self) -> f64 {
        let mut rows = Vec::with_capacity(self.n * self.n * 6);
        let mut rhs = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let (u, v) = (self.node(i) / self.radius, self.node(j) / self.radius);
                rows.extend_from_slice(&[1.0, u, v, u * u, u * v, v * v]);
                rhs.push(self.values[i * self.n + j]);
            }
        }
        let a = DMatrix::from_row_slice(self.n * self.n, 6, &rows);
        let x = a.svd(true, true).solve(&DVector::from_vec(rhs), 1e-14).unwrap_or(DVector::zeros(6));
        let s = self.radius * self.radius;
        (x[3] / s).abs().max((x[4] / s).abs()).max((x[5] / s).abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaDisk {
    pub q_plus: PhasePoint,
    pub q_minus: PhasePoint,
    pub chart_radius: f64,
    /// Σ₋ : x = 0, y − y₁ = Ψ(u, v).
    pub psi: GridFunction,
    /// Σ₊ : x = Φ(u, v), y = 0.
    pub phi: GridFunction,
    pub interpolation_error: f64,
    pub mapping_residual: f64,
    pub quadratic_bound: f64,
}

fn section_minus_solve(model: &MapModel, u: f64, v: f64) -> Result<f64> {
    let y1 = model.spec().y1;
    let mut psi = 0.0;
    for _ in 0..50 {
        let p = PhasePoint::new(0.0, y1 + psi, u, v);
        let img = model.global.eval(&p);
        let dy = model.global.jacobian_at(&p)[(1, 1)];
        if dy.abs() < 1e-12 {
            return Err(Error::ChartTooLarge(format!("Σ₋ graph folds at ({u}, {v})")));
        }
        let step = img.y / dy;
        psi -= step;
        if step.abs() <= 1e-15 * (1.0 + psi.abs()) {
            return Ok(psi);
        }
    }
    Err(Error::ChartTooLarge(format!("Σ₋ Newton failed at ({u}, {v})")))
}

/// Point of Σ₋ whose image under the global map has Σ₊ chart (U, V).
fn section_plus_preimage(model: &MapModel, uu: f64, vv: f64) -> Result<PhasePoint> {
    let y1 = model.spec().y1;
    let mut z = Vector3::new(0.0, uu, vv);
    for _ in 0..50 {
        let p = PhasePoint::new(0.0, y1 + z[0], z[1], z[2]);
        let img = model.global.eval(&p);
        let res = Vector3::new(img.y, img.u - uu, img.v - vv);
        let m = model.global.jacobian_at(&p);
        let jac = Matrix3::from_fn(|i, j| m[(i + 1, j + 1)]);
        let det = jac.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::ChartTooLarge(format!("Σ₊ graph folds at ({uu}, {vv})")));
        }
        let step = jac.lu().solve(&res).ok_or_else(|| Error::ChartTooLarge("singular Σ₊ chart".into()))?;
        z -= step;
        if step.amax() <= 1e-15 * (1.0 + z.amax()) {
            return Ok(PhasePoint::new(0.0, y1 + z[0], z[1], z[2]));
        }
    }
    Err(Error::ChartTooLarge(format!("Σ₊ Newton failed at ({uu}, {vv})")))
}

impl SigmaDisk {
    pub fn point_minus(&self, u: f64, v: f64) -> PhasePoint {
        PhasePoint::new(0.0, self.q_minus.y + self.psi.eval(u, v), u, v)
    }

    pub fn point_plus(&self, u: f64, v: f64) -> PhasePoint {
        PhasePoint::new(self.phi.eval(u, v), 0.0, u, v)
    }
}

/// Builds Σ₋ and Σ₊ as graphs over a square chart of half-width `chart_radius`.
pub fn build_sigma_disk(model: &MapModel, orbit: &HomoclinicOrbit, chart_radius: f64) -> Result<SigmaDisk> {
    let q_minus = orbit.point(orbit.gluing_index);
    let q_plus = orbit.point(orbit.gluing_index + 1);
    if model.spec().transversality_determinant().abs() <= crate::scattering::TOL_TRANS {
        return Err(Error::TransversalityFailure("anchor determinant vanishes".into()));
    }
    if chart_radius >= model.gluing_radius {
        return Err(Error::ChartTooLarge(format!("chart radius {chart_radius} exceeds the gluing ball")));
    }
    let n = 33;
    let psi = GridFunction::sample(chart_radius, n, |u, v| section_minus_solve(model, u, v))?;
    let phi = GridFunction::sample(chart_radius, n, |u, v| Ok(model.global.eval(&section_plus_preimage(model, u, v)?).x))?;
    let mut interpolation_error: f64 = 0.0;
    let mut mapping_residual: f64 = 0.0;
    let m = 17;
    for i in 0..m {
        for j in 0..m {
            let u = chart_radius * (2.0 * (i as f64 + 0.37) / m as f64 - 1.0);
            let v = chart_radius * (2.0 * (j as f64 + 0.61) / m as f64 - 1.0);
            interpolation_error = interpolation_error.max((psi.eval(u, v) - section_minus_solve(model, u, v)?).abs());
            let exact_phi = model.global.eval(&section_plus_preimage(model, u, v)?).x;
            interpolation_error = interpolation_error.max((phi.eval(u, v) - exact_phi).abs());
            let img = model.global.eval(&PhasePoint::new(0.0, q_minus.y + psi.eval(u, v), u, v));
            mapping_residual = mapping_residual.max(img.y.abs()).max((img.x - phi.eval(img.u, img.v)).abs());
        }
    }
    if interpolation_error > 1e-8 {
        return Err(Error::ChartTooLarge(format!("interpolation error {interpolation_error:e}")));
    }
    let quadratic_bound = psi.quadratic_coefficient_bound().max(phi.quadratic_coefficient_bound());
    Ok(SigmaDisk { q_plus, q_minus, chart_radius, psi, phi, interpolation_error, mapping_residual, quadratic_bound })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceCurve {
    pub side: Side,
    pub action: f64,
    /// Parameter of the originating point on γ.
    pub thetas: Vec<f64>,
    /// Vertices in the Σ₊ chart.
    pub points: Vec<Vector2<f64>>,
    pub section_residual: f64,
    pub closure_gap: f64,
}

impl TraceCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn orbit_center(cm: &CenterMap, m: Vector2<f64>, steps: usize, forward: bool) -> Result<Vector2<f64>> {
    let mut z = m;
    for _ in 0..steps {
        z = if forward { cm.eval(z) } else { cm.inverse(z)? };
    }
    Ok(z)
}

/// Trace point over the curve point m: follow the fibre through the center
/// orbit point k steps away until it meets Σ, solving the section condition
/// by bisection on the fibre parameter.
fn trace_point(model: &MapModel, cm: &CenterMap, sigma: &SigmaDisk, side: Side, m: Vector2<f64>) -> Result<(Vector2<f64>, f64)> {
    let p = model.params();
    let spec = model.spec();
    let target = match side {
        Side::Unstable => spec.y1,
        Side::Stable => spec.x0,
    };
    let s_max = 1e-6;
    let k = ((target / s_max).ln() / (1.0 / p.mu).ln()).ceil() as usize;
    if k > SECTION_BUDGET {
        return Err(Error::SectionMiss("iteration budget exceeded".into()));
    }
    let base = orbit_center(cm, m, k, side == Side::Stable)?;
    let fibre = solve_model_fiber(model, base, side, 60)?;
    let slope = fibre.direction();
    let flow = |s: f64| -> Result<PhasePoint> {
        let c = base + slope * s;
        let mut z = match side {
            Side::Unstable => PhasePoint::new(0.0, s, c[0], c[1]),
            Side::Stable => PhasePoint::new(s, 0.0, c[0], c[1]),
        };
        for _ in 0..k {
            z = match side {
                Side::Unstable => model.local.eval(&z),
                Side::Stable => model.local.inverse_eval(&z)?,
            };
            if !z.is_finite() {
                return Err(Error::SectionMiss("fibre left the domain".into()));
            }
        }
        Ok(z)
    };
    let section = |z: &PhasePoint| match side {
        Side::Unstable => z.y - spec.y1 - sigma.psi.eval(z.u, z.v),
        Side::Stable => z.x - sigma.phi.eval(z.u, z.v),
    };
    let scale = target * p.mu.powi(k as i32);
    let (mut lo, mut hi) = (scale * p.mu, scale / p.mu);
    let (flo, fhi) = (section(&flow(lo)?), section(&flow(hi)?));
    if flo * fhi > 0.0 {
        return Err(Error::SectionMiss(format!("no sign change on the fibre over {m:?}")));
    }
    let mut f_lo = flo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = section(&flow(mid)?);
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    let hit = flow(0.5 * (lo + hi))?;
    let residual = section(&hit).abs();
    let chart = match side {
        Side::Stable => Vector2::new(hit.u, hit.v),
        Side::Unstable => {
            let img = model.global.eval(&hit);
            Vector2::new(img.u, img.v)
        }
    };
    Ok((chart, residual))
}

/// Closed polygon w_s(γ) or w_u(γ) in the Σ₊ chart with n vertices.
pub fn trace_manifold_on_sigma(model: &MapModel, cm: &CenterMap, sigma: &SigmaDisk, gamma: &KamCurve, side: Side, n: usize) -> Result<TraceCurve> {
    use rayon::prelude::*;
    let thetas: Vec<f64> = (0..=n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
    let pts: Vec<(Vector2<f64>, f64)> =
        thetas.par_iter().map(|th| trace_point(model, cm, sigma, side, gamma.point(*th))).collect::<Result<_>>()?;
    let closure_gap = (pts[n].0 - pts[0].0).norm();
    let section_residual = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    if section_residual > TOL_SECTION {
        return Err(Error::SectionMiss(format!("section residual {section_residual:e}")));
    }
    Ok(TraceCurve {
        side,
        action: gamma.action,
        thetas: thetas[..n].to_vec(),
        points: pts[..n].iter().map(|p| p.0).collect(),
        section_residual,
        closure_gap,
    })
}

fn coord(p: &Vector2<f64>) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

fn segments_cross(a0: &Vector2<f64>, a1: &Vector2<f64>, b0: &Vector2<f64>, b1: &Vector2<f64>) -> bool {
    let d1 = orient2d(coord(a0), coord(a1), coord(b0));
    let d2 = orient2d(coord(a0), coord(a1), coord(b1));
    let d3 = orient2d(coord(b0), coord(b1), coord(a0));
    let d4 = orient2d(coord(b0), coord(b1), coord(a1));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

pub fn is_simple(points: &[Vector2<f64>]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(&points[i], &points[(i + 1) % n], &points[j], &points[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

pub fn shoelace_area(points: &[Vector2<f64>]) -> f64 {
    let n = points.len();
    0.5 * (0..n).map(|i| {
        let (a, b) = (points[i], points[(i + 1) % n]);
        a[0] * b[1] - a[1] * b[0]
    })
    .sum::<f64>()
}

/// Enclosed ω-area of a simple closed trace, orientation normalized positive.
pub fn enclosed_action(tc: &TraceCurve) -> Result<f64> {
    if !is_simple(&tc.points) {
        return Err(Error::SelfIntersecting);
    }
    Ok(shoelace_area(&tc.points).abs())
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + d * t)).norm()
}

fn directed_distance(from: &[Vector2<f64>], to: &[Vector2<f64>]) -> f64 {
    let n = to.len();
    from.iter()
        .map(|p| (0..n).map(|i| point_segment_distance(p, &to[i], &to[(i + 1) % n])).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Hausdorff distance between two closed polygons (vertex to edge).
pub fn hausdorff_distance(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    directed_distance(a, b).max(directed_distance(b, a))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub point: Vector2<f64>,
    pub angle: f64,
    /// Parameter on γ of the unstable-trace point at the crossing.
    pub bearing: f64,
    pub transverse: bool,
    pub matched_root: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionReport {
    pub action: f64,
    pub crossings: Vec<Crossing>,
    pub degenerate_overlap: bool,
    pub overlap_distance: f64,
    pub predicted_count: Option<usize>,
    pub predicted_roots: Vec<f64>,
    pub all_matched: bool,
}

impl IntersectionReport {
    pub fn count(&self) -> usize {
        self.crossings.len()
    }

    pub fn min_angle(&self) -> f64 {
        self.crossings.iter().map(|c| c.angle).fold(f64::INFINITY, f64::min)
    }
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn vertex_tangent(points: &[Vector2<f64>], i: usize) -> Vector2<f64> {
    let n = points.len();
    points[(i + 1) % n] - points[(i + n - 1) % n]
}

pub fn count_transverse_intersections(ws: &TraceCurve, wu: &TraceCurve, s: &ScatteringMap) -> Result<IntersectionReport> {
    count_with_prediction(ws, wu, &genericity_of_matrix(&s.a))
}

pub fn count_with_prediction(ws: &TraceCurve, wu: &TraceCurve, prediction: &GenericityReport) -> Result<IntersectionReport> {
    count_with_tolerances(ws, wu, prediction, TOL_ANGLE, TOL_MATCH)
}

pub fn count_with_tolerances(
    ws: &TraceCurve,
    wu: &TraceCurve,
    prediction: &GenericityReport,
    tol_angle: f64,
    tol_match: f64,
) -> Result<IntersectionReport> {
    let scale = ws.points.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1e-300);
    let overlap_distance = hausdorff_distance(&ws.points, &wu.points);
    let (predicted_count, predicted_roots) = match prediction.class {
        GenericityClass::Generic => (Some(4), prediction.roots.clone()),
        _ => (None, vec![]),
    };
    let mut report = IntersectionReport {
        action: ws.action,
        crossings: Vec::new(),
        degenerate_overlap: false,
        overlap_distance,
        predicted_count,
        predicted_roots,
        all_matched: false,
    };
    if overlap_distance <= 1e-8 * scale {
        report.degenerate_overlap = true;
        return Ok(report);
    }
    let (a, b) = (&ws.points, &wu.points);
    let (na, nb) = (a.len(), b.len());
    for i in 0..na {
        let (a0, a1) = (a[i], a[(i + 1) % na]);
        for j in 0..nb {
            let (b0, b1) = (b[j], b[(j + 1) % nb]);
            if !segments_cross(&a0, &a1, &b0, &b1) {
                continue;
            }
            let da = a1 - a0;
            let db = b1 - b0;
            let m = Matrix2::from_columns(&[da, -db]);
            let ts = m.lu().solve(&(b0 - a0)).unwrap_or(Vector2::new(0.5, 0.5));
            let point = a0 + da * ts[0];
            let ta = vertex_tangent(a, i) * (1.0 - ts[0]) + vertex_tangent(a, (i + 1) % na) * ts[0];
            let tb = vertex_tangent(b, j) * (1.0 - ts[1]) + vertex_tangent(b, (j + 1) % nb) * ts[1];
            let sin = (ta[0] * tb[1] - ta[1] * tb[0]).abs() / (ta.norm() * tb.norm());
            let angle = sin.clamp(0.0, 1.0).asin();
            let th0 = wu.thetas[j];
            let th1 = if j + 1 < nb { wu.thetas[j + 1] } else { wu.thetas[0] + 2.0 * PI };
            let bearing = (th0 + ts[1] * (th1 - th0)).rem_euclid(2.0 * PI);
            let matched_root = report
                .predicted_roots
                .iter()
                .copied()
                .filter(|r| circular_distance(*r, bearing) <= tol_match)
                .min_by(|x, y| circular_distance(*x, bearing).total_cmp(&circular_distance(*y, bearing)));
            report.crossings.push(Crossing { point, angle, bearing, transverse: angle >= tol_angle, matched_root });
        }
    }
    report.crossings.sort_by(|x, y| x.bearing.total_cmp(&y.bearing));
    if let Some(c) = report.crossings.iter().find(|c| !c.transverse) {
        return Err(Error::TangencySuspected(c.angle));
    }
    report.all_matched = report.predicted_count == Some(report.count()) && report.crossings.iter().all(|c| c.matched_root.is_some());
    Ok(report)
}
