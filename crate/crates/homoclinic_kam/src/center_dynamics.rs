//! Dynamics on the center manifold: restriction, rotation numbers, KAM
//! curve detection, periodic orbits in resonance zones, and the fiber
//! contraction producing the stable/unstable cylinders of KAM curves.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::homoclinic::Side;
use crate::model_zoo::MapModel;
use crate::symplectic_core::{omega, rotation, PhasePoint, SmoothMap4};

pub const TOL_KAM: f64 = 1e-8;
pub const TOL_CLASS: f64 = 1e-6;
pub const TOL_FIBER: f64 = 1e-12;
pub const TOL_INVARIANCE: f64 = 1e-12;
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Clone)]
pub enum CenterKind {
    /// Exact restriction of a 4-D map to {x = y = 0}.
    Restricted(Arc<dyn SmoothMap4>),
    /// (u, v) ↦ R_{α+ν r²}(u, v).
    Twist,
    /// Twist after the area-preserving kick v ↦ v + kick·u^{order−1}.
    KickedTwist { kick: f64, order: u32 },
}

impl std::fmt::Debug for CenterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CenterKind::Restricted(m) => write!(f, "Restricted({})", m.name()),
            CenterKind::Twist => write!(f, "Twist"),
            CenterKind::KickedTwist { kick, order } => write!(f, "KickedTwist {{ kick: {kick}, order: {order} }}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CenterMap {
    pub kind: CenterKind,
    pub alpha: f64,
    pub nu: f64,
    /// Moser scale ε; actions I label circles r² = 2ε²I.
    pub epsilon: f64,
    /// Orbits leaving this radius are reported as escaped.
    pub max_radius: f64,
    /// Largest |det Df − 1| over the certification sample.
    pub area_defect: f64,
}

fn twist_eval(alpha: f64, nu: f64, p: Vector2<f64>) -> Vector2<f64> {
    rotation(alpha + nu * p.norm_squared()) * p
}

fn twist_jacobian(alpha: f64, nu: f64, p: Vector2<f64>) -> Matrix2<f64> {
    let r = rotation(alpha + nu * p.norm_squared());
    let jp = r * Vector2::new(-p[1], p[0]);
    r + jp * (p * (2.0 * nu)).transpose()
}

impl CenterMap {
    pub fn twist(alpha: f64, nu: f64) -> Self {
        CenterMap { kind: CenterKind::Twist, alpha, nu, epsilon: DEFAULT_EPSILON, max_radius: 10.0, area_defect: 0.0 }
    }

    pub fn kicked_twist(alpha: f64, nu: f64, kick: f64, order: u32) -> Self {
        CenterMap { kind: CenterKind::KickedTwist { kick, order }, ..CenterMap::twist(alpha, nu) }
    }

    pub fn eval(&self, p: Vector2<f64>) -> Vector2<f64> {
        match &self.kind {
            CenterKind::Restricted(m) => {
                let q = m.eval(&PhasePoint::new(0.0, 0.0, p[0], p[1]));
                Vector2::new(q.u, q.v)
            }
            CenterKind::Twist => twist_eval(self.alpha, self.nu, p),
            CenterKind::KickedTwist { kick, order } => {
                let k = Vector2::new(p[0], p[1] + kick * p[0].powi(*order as i32 - 1));
                twist_eval(self.alpha, self.nu, k)
            }
        }
    }

    pub fn jacobian(&self, p: Vector2<f64>) -> Matrix2<f64> {
        match &self.kind {
            CenterKind::Restricted(m) => m.jacobian_at(&PhasePoint::new(0.0, 0.0, p[0], p[1])).fixed_view::<2, 2>(2, 2).into_owned(),
            CenterKind::Twist => twist_jacobian(self.alpha, self.nu, p),
            CenterKind::KickedTwist { kick, order } => {
                let q = *order as i32;
                let k = Vector2::new(p[0], p[1] + kick * p[0].powi(q - 1));
                let dk = Matrix2::new(1.0, 0.0, kick * (q - 1) as f64 * p[0].powi(q - 2), 1.0);
                twist_jacobian(self.alpha, self.nu, k) * dk
            }
        }
    }

    pub fn inverse(&self, p: Vector2<f64>) -> Result<Vector2<f64>> {
        match &self.kind {
            CenterKind::Restricted(m) => {
                let q = m.inverse_eval(&PhasePoint::new(0.0, 0.0, p[0], p[1]))?;
                Ok(Vector2::new(q.u, q.v))
            }
            CenterKind::Twist => Ok(twist_eval(-self.alpha, -self.nu, p)),
            CenterKind::KickedTwist { kick, order } => {
                let k = twist_eval(-self.alpha, -self.nu, p);
                Ok(Vector2::new(k[0], k[1] - kick * k[0].powi(*order as i32 - 1)))
            }
        }
    }

    /// Largest |det Df − 1| over a polar grid of the disk of radius r.
    pub fn measure_area_defect(&self, r: f64, n: usize) -> f64 {
        let side = (n as f64).sqrt().ceil() as usize;
        let mut worst: f64 = 0.0;
        for i in 0..side {
            for j in 0..side {
                let rad = r * (i as f64 + 0.5) / side as f64;
                let th = 2.0 * PI * j as f64 / side as f64;
                let p = Vector2::new(rad * th.cos(), rad * th.sin());
                worst = worst.max((self.jacobian(p).determinant() - 1.0).abs());
            }
        }
        worst
    }

    pub fn radius_of_action(&self, action: f64) -> f64 {
        self.epsilon * (2.0 * action).sqrt()
    }
}

/// Restricts a 4-D map to {x = y = 0}, certifying invariance and area
/// preservation on a sample disk of radius `r`.
pub fn restrict_map_to_center(map: Arc<dyn SmoothMap4>, alpha: f64, nu: f64, r: f64) -> Result<CenterMap> {
    let n = 32;
    let mut leak: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let rad = r * (i as f64 + 0.5) / n as f64;
            let th = 2.0 * PI * j as f64 / n as f64;
            let q = map.eval(&PhasePoint::new(0.0, 0.0, rad * th.cos(), rad * th.sin()));
            if !q.is_finite() {
                return Err(Error::CenterNotInvariant(f64::INFINITY));
            }
            leak = leak.max(q.x.abs()).max(q.y.abs());
        }
    }
    if leak > TOL_INVARIANCE {
        return Err(Error::CenterNotInvariant(leak));
    }
    let mut cm = CenterMap {
        kind: CenterKind::Restricted(map),
        alpha,
        nu,
        epsilon: DEFAULT_EPSILON,
        max_radius: r,
        area_defect: 0.0,
    };
    cm.area_defect = cm.measure_area_defect(r, 1000);
    if cm.area_defect > 1e-10 {
        return Err(Error::NonSymplecticJacobian { residual: cm.area_defect, tol: 1e-10 });
    }
    Ok(cm)
}

pub fn restrict_to_center(model: &MapModel) -> Result<CenterMap> {
    let p = model.params();
    let r = 0.25 * p.h;
    restrict_map_to_center(Arc::new(model.local.clone()), p.alpha, p.nu, r)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationEstimate {
    /// Mean angle increment per iterate, in radians.
    pub value: f64,
    /// Difference to the estimate from the first half of the orbit.
    pub error: f64,
}

fn bump_weights(n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n)
        .map(|k| {
            let t = (k as f64 + 0.5) / n as f64;
            (-1.0 / (t * (1.0 - t))).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn weighted_average(incs: &[f64]) -> f64 {
    bump_weights(incs.len()).iter().zip(incs).map(|(w, d)| w * d).sum()
}

fn angle_increment(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    (a[0] * b[1] - a[1] * b[0]).atan2(a.dot(&b))
}

/// Weighted Birkhoff average of the angle increments along the orbit of p0.
pub fn rotation_number(cm: &CenterMap, p0: Vector2<f64>, n_iter: usize) -> Result<RotationEstimate> {
    let r0 = p0.norm();
    if r0 == 0.0 {
        let j = cm.jacobian(p0);
        let value = (j[(1, 0)] - j[(0, 1)]).atan2(j[(0, 0)] + j[(1, 1)]);
        return Ok(RotationEstimate { value, error: 0.0 });
    }
    let mut incs = Vec::with_capacity(n_iter);
    let mut p = p0;
    for _ in 0..n_iter {
        let q = cm.eval(p);
        let r = q.norm();
        if !r.is_finite() || r > cm.max_radius || r < 1e-3 * r0 {
            return Err(Error::EscapedAnnulus);
        }
        incs.push(angle_increment(p, q));
        p = q;
    }
    let value = weighted_average(&incs);
    let half = weighted_average(&incs[..n_iter / 2]);
    Ok(RotationEstimate { value, error: (value - half).abs() })
}

/// Partial quotients a₁…a_depth of the fractional part of x.
pub fn partial_quotients(x: f64, depth: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(depth);
    let mut frac = x - x.floor();
    for _ in 0..depth {
        if frac < 1e-15 {
            out.push(u64::MAX);
            break;
        }
        let inv = 1.0 / frac;
        let a = inv.floor();
        out.push(if a > 1e15 { u64::MAX } else { a as u64 });
        frac = inv - a;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KamCriteria {
    pub n_iter: usize,
    pub degree: usize,
    pub tol_kam: f64,
    pub max_quotient: u64,
    pub depth: usize,
    pub invariance_samples: usize,
}

impl Default for KamCriteria {
    fn default() -> Self {
        KamCriteria { n_iter: 4096, degree: 12, tol_kam: TOL_KAM, max_quotient: 50, depth: 8, invariance_samples: 256 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Quasiperiodic,
    Resonant,
    Chaotic,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Quasiperiodic => "quasiperiodic",
            Verdict::Resonant => "resonant",
            Verdict::Chaotic => "chaotic",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KamCurve {
    pub action: f64,
    pub epsilon: f64,
    pub rotation_number: f64,
    pub rotation_stability: f64,
    /// r(θ) = c₀ + Σ cₖ cos kθ + sₖ sin kθ, stored as [c₀, c₁, s₁, c₂, s₂, …].
    pub coeffs: Vec<f64>,
    pub fit_residual: f64,
    pub invariance_residual: f64,
    pub partial_quotients: Vec<u64>,
    pub diophantine: bool,
    pub verdict: Verdict,
    /// max_θ |r(θ)² − 2ε²I|.
    pub closeness: f64,
}

fn trig_row(theta: f64, degree: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(2 * degree + 1);
    row.push(1.0);
    for k in 1..=degree {
        let (s, c) = (k as f64 * theta).sin_cos();
        row.push(c);
        row.push(s);
    }
    row
}

impl KamCurve {
    pub fn degree(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    pub fn radius(&self, theta: f64) -> f64 {
        trig_row(theta, self.degree()).iter().zip(&self.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn point(&self, theta: f64) -> Vector2<f64> {
        let r = self.radius(theta);
        Vector2::new(r * theta.cos(), r * theta.sin())
    }

    pub fn sample(&self, n: usize) -> Vec<Vector2<f64>> {
        (0..n).map(|j| self.point(2.0 * PI * j as f64 / n as f64)).collect()
    }

    /// Distance of a point from the curve, measured radially.
    pub fn radial_distance(&self, p: Vector2<f64>) -> f64 {
        (p.norm() - self.radius(p[1].atan2(p[0]))).abs()
    }

    pub fn is_quasiperiodic(&self) -> bool {
        self.verdict == Verdict::Quasiperiodic
    }
}

fn fit_trig(thetas: &[f64], radii: &[f64], degree: usize) -> Vec<f64> {
    let cols = 2 * degree + 1;
    let a = DMatrix::from_fn(thetas.len(), cols, |i, j| trig_row(thetas[i], degree)[j]);
    let b = DVector::from_column_slice(radii);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).map(|x| x.iter().copied().collect()).unwrap_or_else(|_| vec![0.0; cols])
}

pub fn analyze_action(cm: &CenterMap, action: f64, criteria: &KamCriteria) -> KamCurve {
    let r0 = cm.radius_of_action(action);
    let p0 = Vector2::new(r0, 0.0);
    let degree = criteria.degree;
    let failed = |verdict| KamCurve {
        action,
        epsilon: cm.epsilon,
        rotation_number: f64::NAN,
        rotation_stability: f64::INFINITY,
        coeffs: {
            let mut c = vec![0.0; 2 * degree + 1];
            c[0] = r0;
            c
        },
        fit_residual: f64::INFINITY,
        invariance_residual: f64::INFINITY,
        partial_quotients: vec![],
        diophantine: false,
        verdict,
        closeness: f64::INFINITY,
    };
    let (rho, rho2) = match (rotation_number(cm, p0, criteria.n_iter), rotation_number(cm, p0, 2 * criteria.n_iter)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return failed(Verdict::Chaotic),
    };
    let stability = (rho.value - rho2.value).abs();
    let mut thetas = Vec::with_capacity(criteria.n_iter);
    let mut radii = Vec::with_capacity(criteria.n_iter);
    let mut p = p0;
    for _ in 0..criteria.n_iter {
        thetas.push(p[1].atan2(p[0]));
        radii.push(p.norm());
        p = cm.eval(p);
    }
    let coeffs = fit_trig(&thetas, &radii, degree);
    let mut curve = KamCurve {
        action,
        epsilon: cm.epsilon,
        rotation_number: rho2.value,
        rotation_stability: stability,
        coeffs,
        fit_residual: 0.0,
        invariance_residual: 0.0,
        partial_quotients: partial_quotients(rho2.value / (2.0 * PI), criteria.depth),
        diophantine: false,
        verdict: Verdict::Chaotic,
        closeness: 0.0,
    };
    curve.fit_residual = thetas.iter().zip(&radii).map(|(t, r)| (r - curve.radius(*t)).abs()).fold(0.0, f64::max);
    let m = criteria.invariance_samples;
    let target = 2.0 * cm.epsilon * cm.epsilon * action;
    for j in 0..m {
        let th = 2.0 * PI * j as f64 / m as f64;
        let q = cm.eval(curve.point(th));
        curve.invariance_residual = curve.invariance_residual.max(curve.radial_distance(q));
        curve.closeness = curve.closeness.max((curve.radius(th).powi(2) - target).abs());
    }
    curve.diophantine = curve.partial_quotients.len() == criteria.depth
        && curve.partial_quotients.iter().all(|a| *a <= criteria.max_quotient);
    let stable = stability <= 10.0 / criteria.n_iter as f64;
    curve.verdict = if !stable || !curve.invariance_residual.is_finite() {
        Verdict::Chaotic
    } else if curve.diophantine && curve.invariance_residual <= criteria.tol_kam && curve.fit_residual <= criteria.tol_kam.sqrt() {
        Verdict::Quasiperiodic
    } else {
        Verdict::Resonant
    };
    curve
}

/// Evenly spaced actions on [0.25·I_max, I_max].
pub fn annulus_grid(i_max: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![i_max];
    }
    (0..n).map(|k| i_max * (0.25 + 0.75 * k as f64 / (n - 1) as f64)).collect()
}

/// Scans the action grid in parallel; results keep the grid order.
pub fn detect_kam_curves(cm: &CenterMap, grid: &[f64], criteria: &KamCriteria) -> Vec<KamCurve> {
    grid.par_iter().map(|i| analyze_action(cm, *i, criteria)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrbitClass {
    Elliptic,
    Hyperbolic,
    /// Trace 2 within tolerance: member of a one-parameter family.
    DegenerateFamily,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicOrbitRecord {
    pub period: usize,
    pub winding: i64,
    pub points: Vec<Vector2<f64>>,
    pub residual: f64,
    pub trace: f64,
    pub class: OrbitClass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicScan {
    pub orbits: Vec<PeriodicOrbitRecord>,
    pub failed_seeds: usize,
    pub degenerate_family: bool,
}

fn power_with_jacobian(cm: &CenterMap, p: Vector2<f64>, q: usize) -> (Vector2<f64>, Matrix2<f64>, f64) {
    let mut z = p;
    let mut jac = Matrix2::identity();
    let mut winding = 0.0;
    for _ in 0..q {
        jac = cm.jacobian(z) * jac;
        let next = cm.eval(z);
        winding += angle_increment(z, next);
        z = next;
    }
    (z, jac, winding)
}

fn newton_periodic(cm: &CenterMap, seed: Vector2<f64>, q: usize) -> Result<Vector2<f64>> {
    let mut z = seed;
    for _ in 0..60 {
        let (img, jac, _) = power_with_jacobian(cm, z, q);
        let f = img - z;
        if !f.iter().all(|x| x.is_finite()) {
            return Err(Error::NewtonDivergence("non-finite iterate".into()));
        }
        if f.amax() <= 1e-13 {
            return Ok(z);
        }
        let svd = (jac - Matrix2::identity()).svd(true, true);
        let step = svd.solve(&f, 1e-9).map_err(|e| Error::NewtonDivergence(e.into()))?;
        z -= step;
        if z.norm() > cm.max_radius {
            return Err(Error::NewtonDivergence("left the annulus".into()));
        }
    }
    let (img, _, _) = power_with_jacobian(cm, z, q);
    if (img - z).amax() <= 1e-10 {
        Ok(z)
    } else {
        Err(Error::NewtonDivergence(format!("residual {:e}", (img - z).amax())))
    }
}

/// Periodic orbits of winding p and period q whose radius lies in
/// [r_lo, r_hi], found by Newton on fᵠ from a radial-angular seed grid.
pub fn find_periodic_orbits(cm: &CenterMap, p: i64, q: usize, r_lo: f64, r_hi: f64) -> PeriodicScan {
    let n_r = 7;
    let n_th = 8 * q;
    let seeds: Vec<Vector2<f64>> = (0..n_r)
        .flat_map(|i| {
            let r = r_lo + (r_hi - r_lo) * (i as f64 + 0.5) / n_r as f64;
            (0..n_th).map(move |j| {
                let th = 2.0 * PI * j as f64 / n_th as f64;
                Vector2::new(r * th.cos(), r * th.sin())
            })
        })
        .collect();
    let results: Vec<Result<Vector2<f64>>> = seeds.par_iter().map(|s| newton_periodic(cm, *s, q)).collect();
    let mut scan = PeriodicScan { orbits: Vec::new(), failed_seeds: 0, degenerate_family: false };
    let margin = 0.2 * (r_hi - r_lo);
    for res in results {
        let z = match res {
            Ok(z) => z,
            Err(_) => {
                scan.failed_seeds += 1;
                continue;
            }
        };
        let r = z.norm();
        if r < r_lo - margin || r > r_hi + margin {
            continue;
        }
        let (img, jac, wind) = power_with_jacobian(cm, z, q);
        let winding = (wind / (2.0 * PI)).round() as i64;
        if winding != p {
            continue;
        }
        let trace = jac.trace();
        let class = if (trace - 2.0).abs() < TOL_CLASS {
            scan.degenerate_family = true;
            OrbitClass::DegenerateFamily
        } else if trace.abs() < 2.0 {
            OrbitClass::Elliptic
        } else {
            OrbitClass::Hyperbolic
        };
        if class == OrbitClass::DegenerateFamily {
            continue;
        }
        let duplicate = scan.orbits.iter().any(|o| o.points.iter().any(|pt| (pt - z).norm() < 1e-7));
        if duplicate {
            continue;
        }
        let mut points = Vec::with_capacity(q);
        let mut w = z;
        for _ in 0..q {
            points.push(w);
            w = cm.eval(w);
        }
        scan.orbits.push(PeriodicOrbitRecord { period: q, winding, points, residual: (img - z).amax(), trace, class });
    }
    scan.orbits.sort_by(|a, b| {
        let angle = |o: &PeriodicOrbitRecord| {
            o.points.iter().map(|p| p[1].atan2(p[0]).rem_euclid(2.0 * PI)).fold(f64::INFINITY, f64::min)
        };
        angle(a).total_cmp(&angle(b))
    });
    scan
}

/// Affine slope field σ(u, v) = offset + linear·(u, v) used to tilt fibres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tilt {
    pub offset: Vector2<f64>,
    pub linear: Matrix2<f64>,
}

impl Tilt {
    pub fn slope(&self, m: Vector2<f64>) -> Vector2<f64> {
        self.offset + self.linear * m
    }
}

/// Three-dimensional chart (w, u, v) on W^cu (w = y, map f) or on W^cs
/// (w = x, map f⁻¹), optionally conjugated by (w, u, v) ↦ (w, (u, v) + w·σ(u, v)).
#[derive(Clone)]
pub struct FiberChart {
    pub map: Arc<dyn SmoothMap4>,
    pub side: Side,
    pub tilt: Option<Tilt>,
}

impl FiberChart {
    pub fn new(map: Arc<dyn SmoothMap4>, side: Side) -> Self {
        FiberChart { map, side, tilt: None }
    }

    pub fn for_model(model: &MapModel, side: Side) -> Self {
        FiberChart::new(Arc::new(model.local.clone()), side)
    }

    pub fn embed(&self, c: &Vector3<f64>) -> PhasePoint {
        let w = c[0];
        let uv = match &self.tilt {
            None => Vector2::new(c[1], c[2]),
            Some(t) => {
                let lhs = Matrix2::identity() + t.linear * w;
                lhs.lu().solve(&(Vector2::new(c[1], c[2]) - t.offset * w)).unwrap_or(Vector2::new(f64::NAN, f64::NAN))
            }
        };
        match self.side {
            Side::Unstable => PhasePoint::new(0.0, w, uv[0], uv[1]),
            Side::Stable => PhasePoint::new(w, 0.0, uv[0], uv[1]),
        }
    }

    pub fn chart(&self, p: &PhasePoint) -> Vector3<f64> {
        let w = match self.side {
            Side::Unstable => p.y,
            Side::Stable => p.x,
        };
        let uv = Vector2::new(p.u, p.v);
        let uv = match &self.tilt {
            None => uv,
            Some(t) => uv + t.slope(uv) * w,
        };
        Vector3::new(w, uv[0], uv[1])
    }

    fn chart_jacobian(&self, p: &PhasePoint) -> Matrix3<f64> {
        let mut d = Matrix3::identity();
        if let Some(t) = &self.tilt {
            let w = self.chart(p)[0];
            let uv = Vector2::new(p.u, p.v);
            let s = t.slope(uv);
            d[(1, 0)] = s[0];
            d[(2, 0)] = s[1];
            let blk = Matrix2::identity() + t.linear * w;
            d.fixed_view_mut::<2, 2>(1, 1).copy_from(&blk);
        }
        d
    }

    fn sub_indices(&self) -> [usize; 3] {
        match self.side {
            Side::Unstable => [1, 2, 3],
            Side::Stable => [0, 2, 3],
        }
    }

    /// The expanding map in the chart (f on W^cu, f⁻¹ on W^cs).
    pub fn eval(&self, c: &Vector3<f64>) -> Result<Vector3<f64>> {
        let p = self.embed(c);
        let q = match self.side {
            Side::Unstable => self.map.eval(&p),
            Side::Stable => self.map.inverse_eval(&p)?,
        };
        if !q.is_finite() {
            return Err(Error::DomainEscape("fiber chart image".into()));
        }
        Ok(self.chart(&q))
    }

    pub fn inverse(&self, c: &Vector3<f64>) -> Result<Vector3<f64>> {
        let p = self.embed(c);
        let q = match self.side {
            Side::Unstable => self.map.inverse_eval(&p)?,
            Side::Stable => self.map.eval(&p),
        };
        if !q.is_finite() {
            return Err(Error::DomainEscape("fiber chart preimage".into()));
        }
        Ok(self.chart(&q))
    }

    pub fn jacobian(&self, c: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let p = self.embed(c);
        let (q, full) = match self.side {
            Side::Unstable => (self.map.eval(&p), self.map.jacobian_at(&p)),
            Side::Stable => {
                let q = self.map.inverse_eval(&p)?;
                let j = self.map.jacobian_at(&q).try_inverse().ok_or(Error::NotInvertible)?;
                (q, j)
            }
        };
        let idx = self.sub_indices();
        let sub = Matrix3::from_fn(|i, j| full[(idx[i], idx[j])]);
        let din = self.chart_jacobian(&p).try_inverse().ok_or(Error::NotInvertible)?;
        Ok(self.chart_jacobian(&q) * sub * din)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiberSolution {
    pub side: Side,
    pub base: Vector2<f64>,
    pub truncation: usize,
    /// Slopes (p*, q*) at the orbit points m_n, n = first_index…
    pub first_index: i64,
    pub slopes: Vec<Vector2<f64>>,
    pub lipschitz: f64,
    /// |slope₀(k) − slope₀(k−1)| for transport started k steps back.
    pub convergence: Vec<f64>,
    pub tail_bound: f64,
    pub alpha_star: f64,
    pub rho_star: f64,
    pub tau_star: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub tau1: f64,
    pub alpha_interval: (f64, f64),
    pub oracle_error: f64,
    pub fenichel_residual: f64,
}

impl FiberSolution {
    pub fn slope_at(&self, n: i64) -> Vector2<f64> {
        self.slopes[(n - self.first_index) as usize]
    }

    pub fn direction(&self) -> Vector2<f64> {
        self.slope_at(0)
    }

    /// Expanding-structure certificate with the l′ = 2 smoothness claim.
    pub fn certified(&self) -> bool {
        self.alpha_star < 1.0
            && self.rho_star < 1.0
            && self.tau_star < 0.5
            && self.alpha_star >= self.alpha_interval.0 * (1.0 - 1e-9)
            && self.alpha_star <= self.alpha_interval.1 * (1.0 + 1e-9)
    }
}

const GRAPH_TRANSFORM_STEPS: usize = 50;

fn transport(jac: &Matrix3<f64>, s: Vector2<f64>) -> Vector2<f64> {
    let lam = jac[(0, 0)];
    let col = Vector2::new(jac[(1, 0)], jac[(2, 0)]);
    let c = jac.fixed_view::<2, 2>(1, 1).into_owned();
    (col + c * s) / lam
}

/// Invariant line field over the orbit of the center point `base`, obtained
/// by transporting the horizontal line from m_{−t} forward.
pub fn solve_fiber(chart: &FiberChart, mu: f64, alpha: f64, base: Vector2<f64>, t: usize) -> Result<FiberSolution> {
    let t = t.max(GRAPH_TRANSFORM_STEPS + 2);
    let ti = t as i64;
    let mut orbit = vec![Vector3::zeros(); 2 * t + 1];
    let at = |n: i64| (n + ti) as usize;
    orbit[at(0)] = Vector3::new(0.0, base[0], base[1]);
    for n in 1..=ti {
        orbit[at(n)] = chart.eval(&orbit[at(n - 1)])?;
        orbit[at(-n)] = chart.inverse(&orbit[at(-n + 1)])?;
    }
    let jacs: Vec<Matrix3<f64>> = orbit.iter().map(|c| chart.jacobian(c)).collect::<Result<_>>()?;
    let mut lipschitz: f64 = 0.0;
    let mut leak: f64 = 0.0;
    for j in &jacs {
        let lam = j[(0, 0)].abs();
        let rows = (j[(1, 1)].abs() + j[(1, 2)].abs()).max(j[(2, 1)].abs() + j[(2, 2)].abs());
        lipschitz = lipschitz.max(rows / lam);
        leak = leak.max(j[(0, 1)].abs()).max(j[(0, 2)].abs());
    }
    if leak > 1e-9 {
        return Err(Error::CenterNotInvariant(leak));
    }
    if lipschitz >= 1.0 {
        return Err(Error::NoContraction(lipschitz));
    }
    let mut slopes = vec![Vector2::zeros(); 2 * t + 1];
    for n in -ti..ti {
        slopes[at(n + 1)] = transport(&jacs[at(n)], slopes[at(n)]);
    }
    let mut convergence = Vec::new();
    let mut prev: Option<Vector2<f64>> = None;
    for k in 1..=ti {
        let mut s = Vector2::zeros();
        for n in -k..0 {
            s = transport(&jacs[at(n)], s);
        }
        if let Some(p) = prev {
            convergence.push((s - p).amax());
        }
        prev = Some(s);
    }
    let first_index = -ti / 2;
    let kept: Vec<Vector2<f64>> = (first_index..=ti).map(|n| slopes[at(n)]).collect();

    let k = t;
    let mut log_alpha = 0.0;
    let mut prod = Matrix2::<f64>::identity();
    let mut delta1: f64 = 0.0;
    let mut delta2: f64 = 0.0;
    for j in 1..=ti {
        let jac = &jacs[at(-j)];
        log_alpha -= jac[(0, 0)].abs().ln();
        let c = jac.fixed_view::<2, 2>(1, 1).into_owned();
        let cinv = c.try_inverse().ok_or(Error::NotInvertible)?;
        prod = prod * cinv;
        let n = -j;
        let rotated = rotation(-(n as f64) * alpha) * cinv * rotation((n + 1) as f64 * alpha) - Matrix2::identity();
        delta2 = delta2.max(rotated.amax());
    }
    for j in &jacs {
        delta1 = delta1.max((j[(0, 0)] - 1.0 / mu).abs());
    }
    let alpha_star = (log_alpha / k as f64).exp();
    let sv = prod.singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    let rho_star = alpha_star / smin.powf(1.0 / k as f64);
    let g_xi = smax.ln() / k as f64;
    let g_r = rho_star.ln();
    let tau_star = if g_r < 0.0 { g_xi.max(0.0) / (-g_r) } else { f64::INFINITY };
    let tau1 = (1.0 + 2.0 * delta2).ln() / (((1.0 - mu * delta1) * (1.0 - 2.0 * delta2)).ln() - mu.ln());
    let alpha_interval = (mu / (1.0 + mu * delta1), mu / (1.0 - mu * delta1));

    let mut v = Vector3::new(1.0, 0.0, 0.0);
    for n in -(GRAPH_TRANSFORM_STEPS as i64)..0 {
        v = jacs[at(n)] * v;
    }
    let oracle = Vector2::new(v[1] / v[0], v[2] / v[0]);
    let oracle_error = (oracle - slopes[at(0)]).amax();

    let s = 1e-3;
    let w0 = slopes[at(0)];
    let z = Vector3::new(s, base[0] + s * w0[0], base[1] + s * w0[1]);
    let zp = chart.inverse(&z)?;
    let m1 = orbit[at(-1)];
    let w1 = slopes[at(-1)];
    let on_line = Vector3::new(m1[0] + zp[0], m1[1] + zp[0] * w1[0], m1[2] + zp[0] * w1[1]);
    let fenichel_residual = (zp - on_line).amax();

    let tail_bound = lipschitz.powi(t as i32) * kept.iter().map(|s| s.amax()).fold(1.0, f64::max);
    Ok(FiberSolution {
        side: chart.side,
        base,
        truncation: t,
        first_index,
        slopes: kept,
        lipschitz,
        convergence,
        tail_bound,
        alpha_star,
        rho_star,
        tau_star,
        delta1,
        delta2,
        tau1,
        alpha_interval,
        oracle_error,
        fenichel_residual,
    })
}

pub fn solve_model_fiber(model: &MapModel, base: Vector2<f64>, side: Side, t: usize) -> Result<FiberSolution> {
    let p = model.params();
    solve_fiber(&FiberChart::for_model(model, side), p.mu, p.alpha, base, t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KamCylinder {
    pub side: Side,
    pub action: f64,
    pub thetas: Vec<f64>,
    /// levels[ℓ][j][i]: fibre j, parameter i, after ℓ applications of the
    /// expanding map to the seed fundamental domain.
    pub levels: Vec<Vec<Vec<PhasePoint>>>,
    pub invariance_residual: f64,
    pub lagrangian_residual: f64,
}

impl KamCylinder {
    pub fn points(&self) -> impl Iterator<Item = &PhasePoint> {
        self.levels.iter().flatten().flatten()
    }
}

/// Samples W^{s|u}(γ) as fibres over curve samples, extended by iterating
/// the expanding map until the hyperbolic coordinate exceeds `extent`.
pub fn build_kam_cylinder(model: &MapModel, gamma: &KamCurve, side: Side, extent: f64, n_theta: usize, n_fibre: usize) -> Result<KamCylinder> {
    let chart = FiberChart::for_model(model, side);
    let p = model.params();
    let thetas: Vec<f64> = (0..n_theta).map(|j| 2.0 * PI * j as f64 / n_theta as f64).collect();
    let fibres: Vec<FiberSolution> =
        thetas.par_iter().map(|th| solve_fiber(&chart, p.mu, p.alpha, gamma.point(*th), 60)).collect::<Result<_>>()?;
    let s0 = 1e-3 * extent;
    let seed: Vec<Vec<Vector3<f64>>> = fibres
        .iter()
        .map(|f| {
            (0..n_fibre)
                .map(|i| {
                    let s = s0 * p.mu.powf(1.0 - i as f64 / n_fibre as f64);
                    let d = f.direction();
                    Vector3::new(s, f.base[0] + s * d[0], f.base[1] + s * d[1])
                })
                .collect()
        })
        .collect();
    let mut levels_chart = vec![seed];
    while levels_chart.last().unwrap().iter().flatten().map(|c| c[0].abs()).fold(0.0, f64::max) < extent {
        let last = levels_chart.last().unwrap();
        let next: Vec<Vec<Vector3<f64>>> =
            last.iter().map(|row| row.iter().map(|c| chart.eval(c)).collect::<Result<_>>()).collect::<Result<_>>()?;
        levels_chart.push(next);
        if levels_chart.len() > 10_000 {
            return Err(Error::SectionMiss("cylinder never reaches the requested extent".into()));
        }
    }
    let levels: Vec<Vec<Vec<PhasePoint>>> =
        levels_chart.iter().map(|lv| lv.iter().map(|row| row.iter().map(|c| chart.embed(c)).collect()).collect()).collect();
    let mut invariance_residual: f64 = 0.0;
    for (lv, lvc) in levels_chart.iter().enumerate() {
        for (j, row) in lvc.iter().enumerate() {
            let n = ((lv + 1) as i64).min(fibres[j].truncation as i64);
            let slope = fibres[j].slope_at(n);
            for c in row {
                let img = chart.eval(c)?;
                let base = Vector2::new(img[1], img[2]) - slope * img[0];
                let q = chart.embed(&img);
                let off = match side {
                    Side::Unstable => q.x.abs(),
                    Side::Stable => q.y.abs(),
                };
                invariance_residual = invariance_residual.max(gamma.radial_distance(base)).max(off);
            }
        }
    }
    let mut lagrangian_residual: f64 = 0.0;
    for lv in &levels {
        for j in 0..n_theta {
            let jn = (j + 1) % n_theta;
            for i in 0..n_fibre.saturating_sub(1) {
                let e_theta = lv[jn][i].to_vec() - lv[j][i].to_vec();
                let e_s = lv[j][i + 1].to_vec() - lv[j][i].to_vec();
                let denom = e_theta.norm() * e_s.norm();
                if denom > 0.0 {
                    lagrangian_residual = lagrangian_residual.max(omega(&e_theta, &e_s).abs() / denom);
                }
            }
        }
    }
    Ok(KamCylinder { side, action: gamma.action, thetas, levels, invariance_residual, lagrangian_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::{build_local_map, LocalModelParams};

    #[test]
    fn unperturbed_restriction_is_twist() {
        let params = LocalModelParams { eps_pert: 0.0, ..LocalModelParams::demo() };
        let local = build_local_map(params).unwrap();
        let cm = restrict_map_to_center(Arc::new(local), params.alpha, params.nu, 0.5).unwrap();
        let p = Vector2::new(0.3, -0.2);
        let expect = twist_eval(params.alpha, params.nu, p);
        assert!((cm.eval(p) - expect).amax() < 1e-15);
        assert!(cm.area_defect < 1e-12);
    }

    #[test]
    fn rotation_number_closed_form() {
        let cm = CenterMap::twist(1.0, 0.1);
        let r = rotation_number(&cm, Vector2::new(0.5f64.sqrt(), 0.0), 100_000).unwrap();
        assert!((r.value - 1.05).abs() < 1e-4);
        let r0 = rotation_number(&cm, Vector2::zeros(), 10).unwrap();
        assert!((r0.value - 1.0).abs() < 1e-15);
        let flipped = CenterMap::twist(1.0, -0.1);
        let a = rotation_number(&flipped, Vector2::new(0.5, 0.0), 2000).unwrap();
        assert!(a.value < 1.0);
    }

    #[test]
    fn partial_quotients_of_golden_mean() {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        assert_eq!(partial_quotients(g, 8), vec![1; 8]);
        assert_eq!(partial_quotients(0.25, 3)[0], 4);
    }

    #[test]
    fn integrable_kam_scan() {
        let cm = CenterMap::twist(1.0, 0.1);
        let curves = detect_kam_curves(&cm, &annulus_grid(1.0, 8), &KamCriteria::default());
        for c in &curves {
            assert!(c.invariance_residual <= 1e-12, "{c:?}");
        }
    }

    #[test]
    fn kicked_twist_birkhoff_pair() {
        let cm = CenterMap::kicked_twist(1.0, 1.0, 0.05, 5);
        let r_res = ((2.0 * PI / 5.0 - 1.0) / 1.0f64).sqrt();
        let scan = find_periodic_orbits(&cm, 1, 5, 0.9 * r_res, 1.1 * r_res);
        assert!(!scan.orbits.is_empty());
        assert_eq!(scan.orbits.len() % 2, 0);
        let n_ell = scan.orbits.iter().filter(|o| o.class == OrbitClass::Elliptic).count();
        assert_eq!(2 * n_ell, scan.orbits.len());
        for o in &scan.orbits {
            assert!(o.residual <= 1e-10);
            if o.class == OrbitClass::Hyperbolic {
                assert!(o.trace.abs() > 2.0);
            }
        }
        let flat = find_periodic_orbits(&CenterMap::twist(1.0, 1.0), 1, 5, 0.9 * r_res, 1.1 * r_res);
        assert!(flat.degenerate_family && flat.orbits.is_empty());
    }

    #[test]
    fn tilted_fibres_have_analytic_slope() {
        let model = MapModel::demo();
        let tilt = Tilt { offset: Vector2::new(0.2, -0.1), linear: Matrix2::new(0.3, 0.1, -0.2, 0.4) };
        let chart = FiberChart { tilt: Some(tilt), ..FiberChart::for_model(&model, Side::Unstable) };
        let base = Vector2::new(0.1, 0.05);
        let f = solve_fiber(&chart, 0.5, 1.0, base, 80).unwrap();
        assert!((f.direction() - tilt.slope(base)).amax() < 1e-10, "{:?}", f.direction());
        assert!(f.oracle_error < 1e-8);
        assert!(f.fenichel_residual < 1e-8);
        assert!(f.certified(), "{f:?}");
    }
}
