//! Phase points, smooth maps of the 4-D phase space and symplecticity checks.
//!
//! Coordinates are stored as (x, y, u, v) with the symplectic form
//! dx∧dy + du∧dv. Block identities are evaluated in the (x, u | y, v)
//! position/momentum splitting.

use std::sync::Arc;

use nalgebra::{Matrix2, Matrix4, Vector4};

use crate::error::{Error, Result};

pub type Mat4 = Matrix4<f64>;
pub type Vec4 = Vector4<f64>;

/// Default symplecticity tolerance for Jacobians.
pub const TOL_SYMP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

impl PhasePoint {
    pub const fn new(x: f64, y: f64, u: f64, v: f64) -> Self {
        PhasePoint { x, y, u, v }
    }

    pub const fn origin() -> Self {
        PhasePoint::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn from_vec(w: &Vec4) -> Self {
        PhasePoint::new(w[0], w[1], w[2], w[3])
    }

    pub fn to_vec(&self) -> Vec4 {
        Vec4::new(self.x, self.y, self.u, self.v)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.u.is_finite() && self.v.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.to_vec().norm()
    }

    pub fn dist(&self, other: &PhasePoint) -> f64 {
        (self.to_vec() - other.to_vec()).norm()
    }

    pub fn center_radius_sq(&self) -> f64 {
        self.u * self.u + self.v * self.v
    }
}

/// Tangent vector (ξ, η, χ¹, χ²) in the (x, y, u, v) ordering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentVector {
    pub xi: f64,
    pub eta: f64,
    pub chi1: f64,
    pub chi2: f64,
}

impl TangentVector {
    pub const fn new(xi: f64, eta: f64, chi1: f64, chi2: f64) -> Self {
        TangentVector { xi, eta, chi1, chi2 }
    }

    pub fn from_vec(w: &Vec4) -> Self {
        TangentVector::new(w[0], w[1], w[2], w[3])
    }

    pub fn to_vec(&self) -> Vec4 {
        Vec4::new(self.xi, self.eta, self.chi1, self.chi2)
    }
}

/// Structure matrix of dx∧dy + du∧dv: Ω(a, b) = aᵀ J b.
pub fn structure_matrix() -> Mat4 {
    let mut j = Mat4::zeros();
    j[(0, 1)] = 1.0;
    j[(1, 0)] = -1.0;
    j[(2, 3)] = 1.0;
    j[(3, 2)] = -1.0;
    j
}

pub fn omega(a: &Vec4, b: &Vec4) -> f64 {
    (a.transpose() * structure_matrix() * b)[(0, 0)]
}

pub fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// blockdiag(diag(μ, μ⁻¹), R_α).
pub fn saddle_center_matrix(mu: f64, alpha: f64) -> Mat4 {
    let mut m = Mat4::zeros();
    m[(0, 0)] = mu;
    m[(1, 1)] = 1.0 / mu;
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(&rotation(alpha));
    m
}

pub fn block_diag(hyp: &Matrix2<f64>, center: &Matrix2<f64>) -> Mat4 {
    let mut m = Mat4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(hyp);
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(center);
    m
}

/// Inverse of a symplectic matrix via −J Mᵀ J.
pub fn symplectic_inverse(m: &Mat4) -> Mat4 {
    let j = structure_matrix();
    -(j * m.transpose() * j)
}

pub fn max_abs(m: &Mat4) -> f64 {
    m.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()))
}

/// Largest entry of |MᵀJM − J|.
pub fn symplectic_residual(m: &Mat4) -> f64 {
    let j = structure_matrix();
    max_abs(&(m.transpose() * j * m - j))
}

/// Permutation taking (x, y, u, v) to (x, u, y, v).
pub fn canonical_permutation() -> Mat4 {
    let mut p = Mat4::zeros();
    p[(0, 0)] = 1.0;
    p[(1, 2)] = 1.0;
    p[(2, 1)] = 1.0;
    p[(3, 3)] = 1.0;
    p
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jacobian4(pub Mat4);

impl Jacobian4 {
    pub fn identity() -> Self {
        Jacobian4(Mat4::identity())
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    pub fn symplectic_residual(&self) -> f64 {
        symplectic_residual(&self.0)
    }

    /// Matrix in the (x, u, y, v) ordering.
    pub fn canonical(&self) -> Mat4 {
        let p = canonical_permutation();
        p * self.0 * p.transpose()
    }

    /// Blocks (a, b, c, d) of the canonical ordering: a = ∂(x̄,ū)/∂(x,u),
    /// b = ∂(x̄,ū)/∂(y,v), c = ∂(ȳ,v̄)/∂(x,u), d = ∂(ȳ,v̄)/∂(y,v).
    pub fn blocks(&self) -> [Matrix2<f64>; 4] {
        let c = self.canonical();
        [
            c.fixed_view::<2, 2>(0, 0).into_owned(),
            c.fixed_view::<2, 2>(0, 2).into_owned(),
            c.fixed_view::<2, 2>(2, 0).into_owned(),
            c.fixed_view::<2, 2>(2, 2).into_owned(),
        ]
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockIdentityReport {
    /// |aᵀc − cᵀa|
    pub ac_symmetry: f64,
    /// |bᵀd − dᵀb|
    pub bd_symmetry: f64,
    /// |dᵀa − bᵀc − E|
    pub unimodularity: f64,
    pub pass: bool,
}

fn max_abs2(m: &Matrix2<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()))
}

pub fn check_symplectic_block_identities(jac: &Jacobian4, tol: f64) -> BlockIdentityReport {
    let [a, b, c, d] = jac.blocks();
    let ac_symmetry = max_abs2(&(a.transpose() * c - c.transpose() * a));
    let bd_symmetry = max_abs2(&(b.transpose() * d - d.transpose() * b));
    let unimodularity = max_abs2(&(d.transpose() * a - b.transpose() * c - Matrix2::identity()));
    BlockIdentityReport {
        ac_symmetry,
        bd_symmetry,
        unimodularity,
        pass: ac_symmetry <= tol && bd_symmetry <= tol && unimodularity <= tol,
    }
}

/// Axis-aligned box |coord| ≤ half_width, with an escape margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainBox {
    pub half_width: f64,
    pub margin: f64,
}

impl DomainBox {
    pub fn new(half_width: f64) -> Self {
        DomainBox { half_width, margin: 0.5 * half_width }
    }

    pub fn unbounded() -> Self {
        DomainBox { half_width: f64::INFINITY, margin: 0.0 }
    }

    pub fn contains(&self, p: &PhasePoint) -> bool {
        let lim = self.half_width + self.margin;
        p.is_finite() && p.x.abs() <= lim && p.y.abs() <= lim && p.u.abs() <= lim && p.v.abs() <= lim
    }
}

pub trait SmoothMap4: Send + Sync {
    fn name(&self) -> String;
    fn domain(&self) -> DomainBox;
    fn eval(&self, p: &PhasePoint) -> PhasePoint;
    fn jacobian_at(&self, p: &PhasePoint) -> Mat4;
    fn inverse_eval(&self, _p: &PhasePoint) -> Result<PhasePoint> {
        Err(Error::NotInvertible)
    }
}

pub fn apply(map: &dyn SmoothMap4, p: &PhasePoint) -> Result<PhasePoint> {
    let dom = map.domain();
    if !dom.contains(p) {
        return Err(Error::DomainEscape(format!("{} input {:?}", map.name(), p)));
    }
    let q = map.eval(p);
    if !dom.contains(&q) {
        return Err(Error::DomainEscape(format!("{} image {:?}", map.name(), q)));
    }
    Ok(q)
}

pub fn jacobian(map: &dyn SmoothMap4, p: &PhasePoint) -> Result<Jacobian4> {
    jacobian_with_tol(map, p, TOL_SYMP)
}

pub fn jacobian_with_tol(map: &dyn SmoothMap4, p: &PhasePoint, tol: f64) -> Result<Jacobian4> {
    let jac = Jacobian4(map.jacobian_at(p));
    let residual = jac.symplectic_residual();
    if residual > tol || !residual.is_finite() {
        return Err(Error::NonSymplecticJacobian { residual, tol });
    }
    Ok(jac)
}

/// Orbit segment of length |n| + 1; negative n iterates the inverse.
pub fn iterate(map: &dyn SmoothMap4, p: &PhasePoint, n: i64) -> Result<Vec<PhasePoint>> {
    let mut out = Vec::with_capacity(n.unsigned_abs() as usize + 1);
    out.push(*p);
    let mut cur = *p;
    for _ in 0..n.unsigned_abs() {
        cur = if n > 0 {
            apply(map, &cur)?
        } else {
            let q = map.inverse_eval(&cur)?;
            if !map.domain().contains(&q) {
                return Err(Error::DomainEscape(format!("{} preimage {:?}", map.name(), q)));
            }
            q
        };
        out.push(cur);
    }
    Ok(out)
}

/// Jacobian of fⁿ at p by the chain rule along the orbit.
pub fn jacobian_of_power(map: &dyn SmoothMap4, p: &PhasePoint, n: usize) -> Result<Jacobian4> {
    let mut acc = Mat4::identity();
    let mut cur = *p;
    for _ in 0..n {
        acc = map.jacobian_at(&cur) * acc;
        cur = apply(map, &cur)?;
    }
    Ok(Jacobian4(acc))
}

#[derive(Clone, Debug)]
pub struct LinearMap {
    pub matrix: Mat4,
    pub label: String,
    pub domain: DomainBox,
}

impl LinearMap {
    pub fn new(matrix: Mat4, label: &str) -> Self {
        LinearMap { matrix, label: label.to_string(), domain: DomainBox::unbounded() }
    }

    pub fn identity() -> Self {
        LinearMap::new(Mat4::identity(), "identity")
    }
}

impl SmoothMap4 for LinearMap {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn domain(&self) -> DomainBox {
        self.domain
    }
    fn eval(&self, p: &PhasePoint) -> PhasePoint {
        PhasePoint::from_vec(&(self.matrix * p.to_vec()))
    }
    fn jacobian_at(&self, _p: &PhasePoint) -> Mat4 {
        self.matrix
    }
    fn inverse_eval(&self, p: &PhasePoint) -> Result<PhasePoint> {
        let inv = self.matrix.try_inverse().ok_or(Error::NotInvertible)?;
        Ok(PhasePoint::from_vec(&(inv * p.to_vec())))
    }
}

/// Composition applying `maps[0]` first.
#[derive(Clone)]
pub struct Composition {
    pub maps: Vec<Arc<dyn SmoothMap4>>,
}

impl Composition {
    pub fn new(maps: Vec<Arc<dyn SmoothMap4>>) -> Self {
        Composition { maps }
    }
}

impl SmoothMap4 for Composition {
    fn name(&self) -> String {
        let names: Vec<String> = self.maps.iter().map(|m| m.name()).collect();
        names.join(" then ")
    }
    fn domain(&self) -> DomainBox {
        self.maps.first().map(|m| m.domain()).unwrap_or_else(DomainBox::unbounded)
    }
    fn eval(&self, p: &PhasePoint) -> PhasePoint {
        self.maps.iter().fold(*p, |q, m| m.eval(&q))
    }
    fn jacobian_at(&self, p: &PhasePoint) -> Mat4 {
        let mut acc = Mat4::identity();
        let mut cur = *p;
        for m in &self.maps {
            acc = m.jacobian_at(&cur) * acc;
            cur = m.eval(&cur);
        }
        acc
    }
    fn inverse_eval(&self, p: &PhasePoint) -> Result<PhasePoint> {
        let mut cur = *p;
        for m in self.maps.iter().rev() {
            cur = m.inverse_eval(&cur)?;
        }
        Ok(cur)
    }
}
