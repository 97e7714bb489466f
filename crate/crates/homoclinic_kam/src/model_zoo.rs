//! Glued first-return models: an exactly symplectic local map in normal-form
//! coordinates plus an affine symplectic global map carrying the unstable
//! anchor onto the stable anchor.
//!
//! The local map is the composition
//! `saddle-rotation ∘ twist ∘ hyperbolic-shear flow ∘ perturbation`, each
//! factor exactly symplectic:
//! * perturbation: type-2 generating function x·Y + u·V + ε P(x, Y, u, V);
//! * hyperbolic-shear flow: time-one map of a(xy)²/2 + b·xy·(u²+v²), which
//!   conserves xy and u²+v² and is therefore explicit;
//! * twist: rotation of (u, v) by ν(u²+v²);
//! * saddle-rotation: blockdiag(diag(μ, μ⁻¹), R_α).
//!
//! The shear flow rotates (u, v) by −2b·xy, so the coupling coefficient of the
//! normal form is κ = −2b for every model built here.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::poly::Poly4;
use crate::symplectic_core::{
    block_diag, canonical_permutation, rotation, symplectic_residual, DomainBox, Mat4, PhasePoint,
    SmoothMap4,
};

/// Strong-resonance exclusion half-width around π/2 and 2π/3.
pub const TOL_RES: f64 = 1e-3;
/// Threshold on the anchor transversality determinant.
pub const TOL_TRANS: f64 = 1e-8;

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalModelParams {
    pub mu: f64,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub nu: f64,
    pub kappa: f64,
    pub eps_pert: f64,
    pub h: f64,
}

impl LocalModelParams {
    pub fn demo() -> Self {
        LocalModelParams { mu: 0.5, alpha: 1.0, a: 0.0, b: 0.0, nu: 0.1, kappa: 0.0, eps_pert: 1e-3, h: 2.0 }
    }

    /// Checks everything except the strong-resonance exclusion.
    pub fn validate_structure(&self) -> Result<()> {
        let finite = [self.mu, self.alpha, self.a, self.b, self.nu, self.kappa, self.eps_pert, self.h]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameters("non-finite parameter".into()));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::InvalidParameters(format!("mu = {} not in (0, 1)", self.mu)));
        }
        if !(self.alpha > 0.0 && self.alpha < PI) {
            return Err(Error::InvalidParameters(format!("alpha = {} not in (0, pi)", self.alpha)));
        }
        if self.nu == 0.0 {
            return Err(Error::ZeroTwist);
        }
        if self.eps_pert < 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidParameters("eps_pert must be >= 0 and h > 0".into()));
        }
        if (self.kappa + 2.0 * self.b).abs() > 1e-12 * (1.0 + self.b.abs()) {
            return Err(Error::InvalidParameters(format!(
                "kappa = {} incompatible with b = {}: symplecticity forces kappa = -2b",
                self.kappa, self.b
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        check_strong_resonance(self.alpha, TOL_RES)
    }
}

pub fn check_strong_resonance(alpha: f64, tol: f64) -> Result<()> {
    for resonance in [PI / 2.0, 2.0 * PI / 3.0] {
        if (alpha - resonance).abs() < tol {
            return Err(Error::StrongResonance { alpha, resonance, tol });
        }
    }
    Ok(())
}

/// Generating polynomial of the built-in perturbation in (x, Y, u, V).
/// Every term has degree five, carries the factors needed to keep
/// {x = 0}, {y = 0}, {x = y = 0} and both axes invariant, and two terms
/// couple the hyperbolic and center directions along the axes.
pub fn perturbation_generator() -> Poly4 {
    let mut p = Poly4::zero();
    p.add_term([2, 2, 1, 0], 0.5);
    p.add_term([2, 2, 0, 1], -0.3);
    // (u² + V²)² (0.4 u + 0.2 V)
    for (e, c) in [([0u8, 0, 4, 0], 1.0), ([0, 0, 2, 2], 2.0), ([0, 0, 0, 4], 1.0)] {
        p.add_term([e[0], e[1], e[2] + 1, e[3]], 0.4 * c);
        p.add_term([e[0], e[1], e[2], e[3] + 1], 0.2 * c);
    }
    p.add_term([3, 1, 0, 1], 1.0);
    p.add_term([1, 3, 1, 0], 0.8);
    p
}

/// Generating-function step with precomputed derivatives.
#[derive(Clone, Debug)]
struct GeneratingStep {
    eps: f64,
    grad: [Poly4; 4],
    hess: [[Poly4; 4]; 4],
}

const Q_IDX: [usize; 2] = [0, 2];
const P_IDX: [usize; 2] = [1, 3];

impl GeneratingStep {
    fn new(gen: &Poly4, eps: f64) -> Self {
        let grad = [gen.derivative(0), gen.derivative(1), gen.derivative(2), gen.derivative(3)];
        let hess = std::array::from_fn(|i| std::array::from_fn(|j| grad[i].derivative(j)));
        GeneratingStep { eps, grad, hess }
    }

    fn grad_at(&self, w: &[f64; 4], idx: [usize; 2]) -> Vector2<f64> {
        Vector2::new(self.grad[idx[0]].eval(w), self.grad[idx[1]].eval(w))
    }

    fn hess_block(&self, w: &[f64; 4], rows: [usize; 2], cols: [usize; 2]) -> Matrix2<f64> {
        Matrix2::from_fn(|i, j| self.hess[rows[i]][cols[j]].eval(w))
    }

    /// (q, p) ↦ (Q, p') with p = p' + ε ∂_q P(q, p'), Q = q + ε ∂_p' P(q, p').
    fn forward(&self, z: &PhasePoint) -> Result<PhasePoint> {
        let q = [z.x, z.u];
        let p = Vector2::new(z.y, z.v);
        let mut pn = p;
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let w = [q[0], pn[0], q[1], pn[1]];
            let g = pn + self.grad_at(&w, Q_IDX) * self.eps - p;
            let a = Matrix2::identity() + self.hess_block(&w, Q_IDX, P_IDX) * self.eps;
            let step = a.lu().solve(&g).ok_or_else(|| Error::InverseDivergence("singular generating step".into()))?;
            pn -= step;
            if step.amax() <= NEWTON_TOL * (1.0 + p.amax()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::InverseDivergence("generating step did not converge".into()));
        }
        let w = [q[0], pn[0], q[1], pn[1]];
        let dq = self.grad_at(&w, P_IDX) * self.eps;
        Ok(PhasePoint::new(q[0] + dq[0], pn[0], q[1] + dq[1], pn[1]))
    }

    fn inverse(&self, z: &PhasePoint) -> Result<PhasePoint> {
        let qn = Vector2::new(z.x, z.u);
        let pn = [z.y, z.v];
        let mut q = qn;
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let w = [q[0], pn[0], q[1], pn[1]];
            let g = q + self.grad_at(&w, P_IDX) * self.eps - qn;
            let a = Matrix2::identity() + self.hess_block(&w, P_IDX, Q_IDX) * self.eps;
            let step = a.lu().solve(&g).ok_or_else(|| Error::InverseDivergence("singular inverse step".into()))?;
            q -= step;
            if step.amax() <= NEWTON_TOL * (1.0 + qn.amax()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::InverseDivergence("inverse generating step did not converge".into()));
        }
        let w = [q[0], pn[0], q[1], pn[1]];
        let dp = self.grad_at(&w, Q_IDX) * self.eps;
        Ok(PhasePoint::new(q[0], pn[0] + dp[0], q[1], pn[1] + dp[1]))
    }

    /// Jacobian at the input point z, given the already computed image.
    fn jacobian(&self, z: &PhasePoint, image: &PhasePoint) -> Mat4 {
        let w = [z.x, image.y, z.u, image.v];
        let e = self.eps;
        let hqq = self.hess_block(&w, Q_IDX, Q_IDX);
        let hqp = self.hess_block(&w, Q_IDX, P_IDX);
        let hpq = hqp.transpose();
        let hpp = self.hess_block(&w, P_IDX, P_IDX);
        let a_inv = (Matrix2::identity() + hqp * e).try_inverse().unwrap_or_else(Matrix2::identity);
        let dp_dq = -(a_inv * hqq) * e;
        let dp_dp = a_inv;
        let dq_dq = Matrix2::identity() + hpq * e + hpp * dp_dq * e;
        let dq_dp = hpp * a_inv * e;
        // canonical ordering (x, u | y, v) then permute back
        let mut c = Mat4::zeros();
        c.fixed_view_mut::<2, 2>(0, 0).copy_from(&dq_dq);
        c.fixed_view_mut::<2, 2>(0, 2).copy_from(&dq_dp);
        c.fixed_view_mut::<2, 2>(2, 0).copy_from(&dp_dq);
        c.fixed_view_mut::<2, 2>(2, 2).copy_from(&dp_dp);
        let p = canonical_permutation();
        p.transpose() * c * p
    }
}

/// Exactly symplectic local map realizing the third-order normal form.
#[derive(Clone, Debug)]
pub struct LocalMap {
    pub params: LocalModelParams,
    step: Option<GeneratingStep>,
}

fn rot_apply(theta: f64, u: f64, v: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * u - s * v, s * u + c * v)
}

impl LocalMap {
    fn shear_flow(&self, z: &PhasePoint, sign: f64) -> PhasePoint {
        let LocalModelParams { a, b, .. } = self.params;
        let c = z.x * z.y;
        let s = (a * c + b * z.center_radius_sq()) * sign;
        let (u, v) = rot_apply(-2.0 * b * c * sign, z.u, z.v);
        PhasePoint::new(z.x * s.exp(), z.y * (-s).exp(), u, v)
    }

    fn shear_flow_jacobian(&self, z: &PhasePoint) -> Mat4 {
        let LocalModelParams { a, b, .. } = self.params;
        let (x, y, u, v) = (z.x, z.y, z.u, z.v);
        let s = a * x * y + b * (u * u + v * v);
        let ds = [a * y, a * x, 2.0 * b * u, 2.0 * b * v];
        let (ep, em) = (s.exp(), (-s).exp());
        let theta = -2.0 * b * x * y;
        let r = rotation(theta);
        let ju = r * Vector2::new(-v, u);
        let dtheta = [-2.0 * b * y, -2.0 * b * x, 0.0, 0.0];
        let mut m = Mat4::zeros();
        for k in 0..4 {
            m[(0, k)] = x * ep * ds[k];
            m[(1, k)] = -y * em * ds[k];
            m[(2, k)] = ju[0] * dtheta[k];
            m[(3, k)] = ju[1] * dtheta[k];
        }
        m[(0, 0)] += ep;
        m[(1, 1)] += em;
        let mut blk = m.fixed_view_mut::<2, 2>(2, 2);
        blk += r;
        m
    }

    fn twist_linear(&self, z: &PhasePoint) -> PhasePoint {
        let p = &self.params;
        let (u, v) = rot_apply(p.alpha + p.nu * z.center_radius_sq(), z.u, z.v);
        PhasePoint::new(p.mu * z.x, z.y / p.mu, u, v)
    }

    fn twist_linear_inverse(&self, z: &PhasePoint) -> PhasePoint {
        let p = &self.params;
        let (u, v) = rot_apply(-(p.alpha + p.nu * z.center_radius_sq()), z.u, z.v);
        PhasePoint::new(z.x / p.mu, z.y * p.mu, u, v)
    }

    fn twist_linear_jacobian(&self, z: &PhasePoint) -> Mat4 {
        let p = &self.params;
        let phi = p.alpha + p.nu * z.center_radius_sq();
        let r = rotation(phi);
        let ju = r * Vector2::new(-z.v, z.u);
        let grad = Vector2::new(2.0 * p.nu * z.u, 2.0 * p.nu * z.v);
        let center = r + ju * grad.transpose();
        let mut m = Mat4::zeros();
        m[(0, 0)] = p.mu;
        m[(1, 1)] = 1.0 / p.mu;
        m.fixed_view_mut::<2, 2>(2, 2).copy_from(&center);
        m
    }

    fn try_eval(&self, z: &PhasePoint) -> Result<PhasePoint> {
        let w1 = match &self.step {
            Some(st) => st.forward(z)?,
            None => *z,
        };
        let w2 = self.shear_flow(&w1, 1.0);
        Ok(self.twist_linear(&w2))
    }

    pub fn has_perturbation(&self) -> bool {
        self.step.is_some()
    }
}

impl SmoothMap4 for LocalMap {
    fn name(&self) -> String {
        "local normal-form map".into()
    }
    fn domain(&self) -> DomainBox {
        DomainBox::new(self.params.h)
    }
    fn eval(&self, p: &PhasePoint) -> PhasePoint {
        self.try_eval(p).unwrap_or(PhasePoint::new(f64::NAN, f64::NAN, f64::NAN, f64::NAN))
    }
    fn jacobian_at(&self, z: &PhasePoint) -> Mat4 {
        let (w1, j1) = match &self.step {
            Some(st) => match st.forward(z) {
                Ok(w) => (w, st.jacobian(z, &w)),
                Err(_) => return Mat4::from_element(f64::NAN),
            },
            None => (*z, Mat4::identity()),
        };
        let j2 = self.shear_flow_jacobian(&w1);
        let w2 = self.shear_flow(&w1, 1.0);
        self.twist_linear_jacobian(&w2) * j2 * j1
    }
    fn inverse_eval(&self, z: &PhasePoint) -> Result<PhasePoint> {
        let w2 = self.twist_linear_inverse(z);
        let w1 = self.shear_flow(&w2, -1.0);
        match &self.step {
            Some(st) => st.inverse(&w1),
            None => Ok(w1),
        }
    }
}

pub fn build_local_map(params: LocalModelParams) -> Result<LocalMap> {
    params.validate()?;
    Ok(local_map_unchecked_resonance(params))
}

/// Builds the local map after structural validation only; the caller takes
/// over the strong-resonance check.
pub fn build_local_map_deferred(params: LocalModelParams) -> Result<LocalMap> {
    params.validate_structure()?;
    Ok(local_map_unchecked_resonance(params))
}

fn local_map_unchecked_resonance(params: LocalModelParams) -> LocalMap {
    let step = (params.eps_pert > 0.0).then(|| GeneratingStep::new(&perturbation_generator(), params.eps_pert));
    LocalMap { params, step }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalMapSpec {
    pub x0: f64,
    pub y1: f64,
    pub m: Mat4,
}

impl GlobalMapSpec {
    pub fn q_minus(&self) -> PhasePoint {
        PhasePoint::new(0.0, self.y1, 0.0, 0.0)
    }
    pub fn q_plus(&self) -> PhasePoint {
        PhasePoint::new(self.x0, 0.0, 0.0, 0.0)
    }

    pub fn demo() -> Self {
        GlobalMapSpec { x0: 0.8, y1: 0.8, m: default_global_matrix(1.0, &Matrix2::new(1.5, 0.0, 0.0, 1.0 / 1.5), 0.0) }
    }

    /// det[e_x | M e_y | M e_u | M e_v].
    pub fn transversality_determinant(&self) -> f64 {
        let mut cols = self.m;
        cols.set_column(0, &crate::symplectic_core::Vec4::new(1.0, 0.0, 0.0, 0.0));
        cols.determinant()
    }
}

/// blockdiag(diag(1/σ, σ), B) composed with the symplectic shear
/// (x, y, u, v) ↦ (x + s v, y, u + s y, v).
pub fn default_global_matrix(sigma: f64, center: &Matrix2<f64>, shear: f64) -> Mat4 {
    let base = block_diag(&Matrix2::new(1.0 / sigma, 0.0, 0.0, sigma), center);
    base * coupling_shear(shear)
}

pub fn coupling_shear(s: f64) -> Mat4 {
    let mut m = Mat4::identity();
    m[(0, 3)] = s;
    m[(2, 1)] = s;
    m
}

/// Random symplectic matrix: product of block shears with symmetric random
/// blocks in the canonical ordering.
pub fn random_symplectic<R: Rng>(rng: &mut R, scale: f64) -> Mat4 {
    let mut acc = Mat4::identity();
    for k in 0..4 {
        let a = rng.gen_range(-scale..scale);
        let b = rng.gen_range(-scale..scale);
        let c = rng.gen_range(-scale..scale);
        let s = Matrix2::new(a, b, b, c);
        let mut g = Mat4::identity();
        if k % 2 == 0 {
            g.fixed_view_mut::<2, 2>(0, 2).copy_from(&s);
        } else {
            g.fixed_view_mut::<2, 2>(2, 0).copy_from(&s);
        }
        acc = g * acc;
    }
    let p = canonical_permutation();
    p.transpose() * acc * p
}

#[derive(Clone, Debug)]
pub struct GlobalMap {
    pub spec: GlobalMapSpec,
    m_inv: Mat4,
}

impl SmoothMap4 for GlobalMap {
    fn name(&self) -> String {
        "affine global map".into()
    }
    fn domain(&self) -> DomainBox {
        DomainBox::unbounded()
    }
    fn eval(&self, p: &PhasePoint) -> PhasePoint {
        let d = p.to_vec() - self.spec.q_minus().to_vec();
        PhasePoint::from_vec(&(self.spec.q_plus().to_vec() + self.spec.m * d))
    }
    fn jacobian_at(&self, _p: &PhasePoint) -> Mat4 {
        self.spec.m
    }
    fn inverse_eval(&self, p: &PhasePoint) -> Result<PhasePoint> {
        let d = p.to_vec() - self.spec.q_plus().to_vec();
        Ok(PhasePoint::from_vec(&(self.spec.q_minus().to_vec() + self.m_inv * d)))
    }
}

pub fn build_global_map(spec: GlobalMapSpec) -> Result<GlobalMap> {
    let residual = symplectic_residual(&spec.m);
    if residual > crate::symplectic_core::TOL_SYMP || !residual.is_finite() {
        return Err(Error::NonSymplecticM(residual));
    }
    let det = spec.transversality_determinant();
    if det.abs() <= TOL_TRANS {
        return Err(Error::TransversalityFailure(format!("anchor determinant {det:e}")));
    }
    if !(spec.x0 > 0.0 && spec.y1 > 0.0) {
        return Err(Error::InvalidParameters("anchors must satisfy x0 > 0 and y1 > 0".into()));
    }
    let m_inv = spec.m.try_inverse().ok_or(Error::NonSymplecticM(residual))?;
    Ok(GlobalMap { spec, m_inv })
}

/// Which rule of the first-return map applies at a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Local,
    Gluing,
    /// Within `margin` of the gluing sphere: flagged, rule still decided by the ball.
    Boundary,
}

#[derive(Clone, Debug)]
pub struct MapModel {
    pub local: LocalMap,
    pub global: GlobalMap,
    pub gluing_radius: f64,
}

impl MapModel {
    pub fn params(&self) -> &LocalModelParams {
        &self.local.params
    }

    pub fn spec(&self) -> &GlobalMapSpec {
        &self.global.spec
    }

    pub fn in_gluing_ball(&self, p: &PhasePoint) -> bool {
        p.dist(&self.spec().q_minus()) < self.gluing_radius
    }

    pub fn region(&self, p: &PhasePoint, margin: f64) -> Region {
        let d = p.dist(&self.spec().q_minus());
        if (d - self.gluing_radius).abs() < margin {
            Region::Boundary
        } else if d < self.gluing_radius {
            Region::Gluing
        } else {
            Region::Local
        }
    }

    pub fn demo() -> Self {
        build_model(LocalModelParams::demo(), GlobalMapSpec::demo(), 0.3).expect("demo model is valid")
    }
}

impl SmoothMap4 for MapModel {
    fn name(&self) -> String {
        "glued first-return model".into()
    }
    fn domain(&self) -> DomainBox {
        self.local.domain()
    }
    fn eval(&self, p: &PhasePoint) -> PhasePoint {
        if self.in_gluing_ball(p) {
            self.global.eval(p)
        } else {
            self.local.eval(p)
        }
    }
    fn jacobian_at(&self, p: &PhasePoint) -> Mat4 {
        if self.in_gluing_ball(p) {
            self.global.jacobian_at(p)
        } else {
            self.local.jacobian_at(p)
        }
    }
    fn inverse_eval(&self, p: &PhasePoint) -> Result<PhasePoint> {
        let pre = self.global.inverse_eval(p)?;
        if self.in_gluing_ball(&pre) {
            Ok(pre)
        } else {
            self.local.inverse_eval(p)
        }
    }
}

pub fn build_model(params: LocalModelParams, spec: GlobalMapSpec, gluing_radius: f64) -> Result<MapModel> {
    assemble_model(build_local_map(params)?, spec, gluing_radius)
}

pub fn assemble_model(local: LocalMap, spec: GlobalMapSpec, gluing_radius: f64) -> Result<MapModel> {
    let global = build_global_map(spec)?;
    let h = local.params.h;
    if !(gluing_radius > 0.0) || global.spec.y1 + gluing_radius > h || global.spec.x0 >= h {
        return Err(Error::InvalidParameters("gluing ball or exit anchor outside the local domain".into()));
    }
    if global.spec.q_plus().dist(&global.spec.q_minus()) < gluing_radius {
        return Err(Error::GluingOverlap);
    }
    Ok(MapModel { local, global, gluing_radius })
}

/// Literal third-order normal form without higher-order terms, with κ free.
/// Symplectic only up to third order when κ = −2b.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedNormalForm {
    pub mu: f64,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub nu: f64,
    pub kappa: f64,
}

impl SmoothMap4 for TruncatedNormalForm {
    fn name(&self) -> String {
        "truncated normal form".into()
    }
    fn domain(&self) -> DomainBox {
        DomainBox::new(1.0)
    }
    fn eval(&self, z: &PhasePoint) -> PhasePoint {
        let (x, y, u, v) = (z.x, z.y, z.u, z.v);
        let r2 = u * u + v * v;
        let (ur, vr) = rot_apply(self.alpha + self.nu * r2, u, v);
        let (jr0, jr1) = rot_apply(self.alpha, -v, u);
        let k = self.kappa * x * y;
        PhasePoint::new(
            self.mu * x * (1.0 + self.a * x * y + self.b * r2),
            y / self.mu * (1.0 - self.a * x * y - self.b * r2),
            ur + k * jr0,
            vr + k * jr1,
        )
    }
    fn jacobian_at(&self, z: &PhasePoint) -> Mat4 {
        let (x, y, u, v) = (z.x, z.y, z.u, z.v);
        let (mu, a, b) = (self.mu, self.a, self.b);
        let r2 = u * u + v * v;
        let mut m = Mat4::zeros();
        m[(0, 0)] = mu * (1.0 + 2.0 * a * x * y + b * r2);
        m[(0, 1)] = mu * a * x * x;
        m[(0, 2)] = 2.0 * mu * b * x * u;
        m[(0, 3)] = 2.0 * mu * b * x * v;
        m[(1, 0)] = -a * y * y / mu;
        m[(1, 1)] = (1.0 - 2.0 * a * x * y - b * r2) / mu;
        m[(1, 2)] = -2.0 * b * y * u / mu;
        m[(1, 3)] = -2.0 * b * y * v / mu;
        let phi = self.alpha + self.nu * r2;
        let r = rotation(phi);
        let ra = rotation(self.alpha);
        let ju = r * Vector2::new(-v, u);
        let jra = ra * Vector2::new(-v, u);
        let kxy = self.kappa * x * y;
        let du = r.column(0) + ju * (2.0 * self.nu * u) + ra * Vector2::new(0.0, 1.0) * kxy;
        let dv = r.column(1) + ju * (2.0 * self.nu * v) + ra * Vector2::new(-1.0, 0.0) * kxy;
        let dx = jra * (self.kappa * y);
        let dy = jra * (self.kappa * x);
        for i in 0..2 {
            m[(2 + i, 0)] = dx[i];
            m[(2 + i, 1)] = dy[i];
            m[(2 + i, 2)] = du[i];
            m[(2 + i, 3)] = dv[i];
        }
        m
    }
}

/// Symplectic shear driven by a polynomial W of the positions (x, u):
/// y += ∂W/∂x, v += ∂W/∂u. With `on_positions` the roles swap: W is a
/// polynomial of the momenta (y, v) and x += ∂W/∂y, u += ∂W/∂v.
#[derive(Clone, Debug)]
pub struct PolyShear {
    pub w: Poly4,
    pub on_positions: bool,
}

impl PolyShear {
    fn kick(&self, z: &PhasePoint, sign: f64) -> PhasePoint {
        let w = [z.x, z.y, z.u, z.v];
        let g = self.w.gradient(&w);
        if self.on_positions {
            PhasePoint::new(z.x + sign * g[1], z.y, z.u + sign * g[3], z.v)
        } else {
            PhasePoint::new(z.x, z.y + sign * g[0], z.u, z.v + sign * g[2])
        }
    }
}

impl SmoothMap4 for PolyShear {
    fn name(&self) -> String {
        "polynomial shear".into()
    }
    fn domain(&self) -> DomainBox {
        DomainBox::unbounded()
    }
    fn eval(&self, p: &PhasePoint) -> PhasePoint {
        self.kick(p, 1.0)
    }
    fn jacobian_at(&self, z: &PhasePoint) -> Mat4 {
        let h = self.w.hessian(&[z.x, z.y, z.u, z.v]);
        let mut m = Mat4::identity();
        let (src, dst) = if self.on_positions { ([1, 3], [0, 2]) } else { ([0, 2], [1, 3]) };
        for i in 0..2 {
            for j in 0..2 {
                m[(dst[i], src[j])] += h[src[i]][src[j]];
            }
        }
        m
    }
    fn inverse_eval(&self, p: &PhasePoint) -> Result<PhasePoint> {
        Ok(self.kick(p, -1.0))
    }
}

/// Fitted constant c in |x₁y₁ − xy| ≤ c‖p‖⁵ over the given points.
pub fn product_drift_constant(local: &LocalMap, points: &[PhasePoint]) -> f64 {
    points
        .iter()
        .filter(|p| p.norm() > 0.0)
        .map(|p| {
            let q = local.eval(p);
            (q.x * q.y - p.x * p.y).abs() / p.norm().powi(5)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic_core::{apply, saddle_center_matrix, max_abs};

    fn params(nu: f64, eps: f64) -> LocalModelParams {
        LocalModelParams { mu: 0.5, alpha: 1.0, a: 0.0, b: 0.0, nu, kappa: 0.0, eps_pert: eps, h: 2.0 }
    }

    #[test]
    fn linear_when_nonlinearities_off() {
        let f = build_local_map(params(1e-300, 0.0)).unwrap();
        let j = f.jacobian_at(&PhasePoint::new(0.1, 0.2, 0.0, 0.0));
        assert!(max_abs(&(j - saddle_center_matrix(0.5, 1.0))) < 1e-15);
    }

    #[test]
    fn center_plane_rotates_by_twist() {
        let f = build_local_map(params(0.1, 0.0)).unwrap();
        let q = apply(&f, &PhasePoint::new(0.0, 0.0, 1.0, 0.0)).unwrap();
        assert_eq!((q.x, q.y), (0.0, 0.0));
        assert!((q.u - 1.1f64.cos()).abs() < 1e-15 && (q.v - 1.1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn strong_resonance_rejected() {
        let mut p = params(0.1, 0.0);
        p.alpha = 2.0 * PI / 3.0;
        assert!(matches!(build_local_map(p), Err(Error::StrongResonance { .. })));
        p.alpha = 1.0;
        p.nu = 0.0;
        assert_eq!(build_local_map(p).unwrap_err(), Error::ZeroTwist);
    }

    #[test]
    fn kappa_must_match_b() {
        let mut p = params(0.1, 0.0);
        p.b = 0.1;
        p.kappa = 0.05;
        assert!(matches!(build_local_map(p), Err(Error::InvalidParameters(_))));
        p.kappa = -0.2;
        assert!(build_local_map(p).is_ok());
    }

    #[test]
    fn global_anchor_and_certificate() {
        let g = build_global_map(GlobalMapSpec::demo()).unwrap();
        assert_eq!(g.eval(&g.spec.q_minus()), g.spec.q_plus());
        assert!((g.spec.transversality_determinant() - 1.0).abs() < 1e-15);
        let swap = block_diag(&Matrix2::new(0.0, 1.0, -1.0, 0.0), &Matrix2::identity());
        let bad = GlobalMapSpec { m: swap, ..GlobalMapSpec::demo() };
        assert!(matches!(build_global_map(bad), Err(Error::TransversalityFailure(_))));
    }

    #[test]
    fn gluing_overlap_detected() {
        let spec = GlobalMapSpec { x0: 0.1, y1: 0.1, ..GlobalMapSpec::demo() };
        assert_eq!(build_model(params(0.1, 0.0), spec, 0.3).unwrap_err(), Error::GluingOverlap);
    }

    #[test]
    fn generating_step_round_trip() {
        let f = build_local_map(params(0.1, 1e-2)).unwrap();
        let p = PhasePoint::new(0.3, -0.4, 0.2, 0.1);
        let back = f.inverse_eval(&f.eval(&p)).unwrap();
        assert!(back.dist(&p) < 1e-13);
    }

    fn fd_jacobian(f: &dyn SmoothMap4, p: &PhasePoint) -> Mat4 {
        let h = 1e-6;
        let mut m = Mat4::zeros();
        for k in 0..4 {
            let mut e = crate::symplectic_core::Vec4::zeros();
            e[k] = h;
            let a = f.eval(&PhasePoint::from_vec(&(p.to_vec() + e))).to_vec();
            let b = f.eval(&PhasePoint::from_vec(&(p.to_vec() - e))).to_vec();
            m.set_column(k, &((a - b) / (2.0 * h)));
        }
        m
    }

    #[test]
    fn full_local_map_jacobian_symplectic_and_consistent() {
        let p = LocalModelParams { mu: 0.4, alpha: 0.9, a: 0.3, b: -0.2, nu: 0.15, kappa: 0.4, eps_pert: 0.05, h: 2.0 };
        let f = build_local_map(p).unwrap();
        for z in [PhasePoint::new(0.3, -0.2, 0.25, 0.1), PhasePoint::new(-0.5, 0.4, -0.3, 0.6)] {
            let j = f.jacobian_at(&z);
            assert!(symplectic_residual(&j) < 1e-12);
            assert!(max_abs(&(j - fd_jacobian(&f, &z))) < 1e-8);
            let back = f.inverse_eval(&f.eval(&z)).unwrap();
            assert!(back.dist(&z) < 1e-13);
        }
    }

    #[test]
    fn truncated_form_jacobian_consistent() {
        let t = TruncatedNormalForm { mu: 0.5, alpha: 1.0, a: 0.3, b: -0.2, nu: 0.1, kappa: 0.05 };
        let z = PhasePoint::new(0.1, 0.2, -0.15, 0.05);
        assert!(max_abs(&(t.jacobian_at(&z) - fd_jacobian(&t, &z))) < 1e-9);
    }

    #[test]
    fn shears_and_random_matrices_symplectic() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            assert!(symplectic_residual(&random_symplectic(&mut rng, 1.0)) < 1e-12);
        }
        let mut w = Poly4::monomial(0.3, [2, 0, 1, 0]);
        w.add_term([1, 0, 2, 0], -0.2);
        for on_positions in [false, true] {
            let s = PolyShear { w: w.clone(), on_positions };
            let z = PhasePoint::new(0.2, 0.3, -0.1, 0.4);
            let j = s.jacobian_at(&z);
            assert!(symplectic_residual(&j) < 1e-14);
            assert!(max_abs(&(j - fd_jacobian(&s, &z))) < 1e-9);
        }
        assert!(symplectic_residual(&default_global_matrix(2.0, &Matrix2::new(1.5, 0.0, 0.0, 1.0 / 1.5), 0.3)) < 1e-15);
    }
}
