//! Fixed point location, 1-elliptic spectrum classification, curve
//! straightening, resonance bookkeeping and third-order normal forms.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector, Matrix2, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::model_zoo::{check_strong_resonance, TruncatedNormalForm, TOL_RES};
use crate::poly::{
    compose, field_homogeneous, field_identity, field_linear_combination, field_precompose_linear,
    field_sub, field_zero, monomials, Exp, Poly4, VecField,
};
use crate::symplectic_core::{
    block_diag, omega, rotation, structure_matrix, DomainBox, Mat4, PhasePoint, SmoothMap4, Vec4,
    TOL_SYMP,
};

pub const TOL_EIG: f64 = 1e-9;
pub const TOL_NF: f64 = 1e-6;
pub const TOL_DIV: f64 = 1e-4;
const FP_TOL: f64 = 1e-12;
const FP_MAX_ITER: usize = 50;

pub fn find_fixed_point(map: &dyn SmoothMap4, guess: PhasePoint) -> Result<PhasePoint> {
    let dom = map.domain();
    let mut p = guess;
    for _ in 0..FP_MAX_ITER {
        if !dom.contains(&p) {
            return Err(Error::NewtonDivergence(format!("iterate {p:?} left the domain")));
        }
        let fp = map.eval(&p);
        let res = fp.to_vec() - p.to_vec();
        if !res.iter().all(|r| r.is_finite()) {
            return Err(Error::NewtonDivergence("non-finite residual".into()));
        }
        if res.norm() <= FP_TOL {
            return Ok(p);
        }
        let a = map.jacobian_at(&p) - Mat4::identity();
        let step = a
            .lu()
            .solve(&res)
            .ok_or_else(|| Error::NewtonDivergence("singular Newton matrix".into()))?;
        p = PhasePoint::from_vec(&(p.to_vec() - step));
    }
    let res = (map.eval(&p).to_vec() - p.to_vec()).norm();
    if res <= FP_TOL && dom.contains(&p) {
        Ok(p)
    } else {
        Err(Error::NewtonDivergence(format!("no convergence in {FP_MAX_ITER} iterations, residual {res:e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spectrum1Elliptic {
    pub mu: f64,
    pub alpha: f64,
    /// Sign of the real multiplier pair.
    pub orientation: f64,
    /// Sign of Ω on the center eigenplane; the center block is R_{sign·α}.
    pub center_sign: f64,
    /// Symplectic basis: columns (stable, unstable, center-u, center-v).
    pub basis: Mat4,
}

impl Spectrum1Elliptic {
    /// blockdiag(diag(sμ, s/μ), R_{±α}).
    pub fn normal_matrix(&self) -> Mat4 {
        let s = self.orientation;
        block_diag(
            &Matrix2::new(s * self.mu, 0.0, 0.0, s / self.mu),
            &rotation(self.center_sign * self.alpha),
        )
    }
}

fn null_vector_real(m: &Mat4) -> Vec4 {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let k = (0..4)
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .unwrap();
    v_t.row(k).transpose()
}

fn null_vector_complex(m: &Matrix4<Complex<f64>>) -> Vector4<Complex<f64>> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let k = (0..4)
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .unwrap();
    v_t.row(k).adjoint()
}

pub fn classify_spectrum(jac: &Mat4) -> Result<Spectrum1Elliptic> {
    let eig = jac.complex_eigenvalues();
    let mut real_off = Vec::new();
    let mut on_circle = Vec::new();
    for z in eig.iter() {
        let modulus = z.norm();
        if (modulus - 1.0).abs() <= 1e-7 && z.im.abs() > 1e-7 {
            on_circle.push(*z);
        } else if z.im.abs() <= 1e-9 * (1.0 + modulus) && (modulus - 1.0).abs() > 1e-7 {
            real_off.push(z.re);
        } else {
            return Err(Error::NotOneElliptic(format!("multiplier {z} fits neither class")));
        }
    }
    if real_off.len() != 2 || on_circle.len() != 2 {
        return Err(Error::NotOneElliptic(format!(
            "{} real off-circle and {} unit-circle multipliers",
            real_off.len(),
            on_circle.len()
        )));
    }
    real_off.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let (ls, lu) = (real_off[0], real_off[1]);
    if ls.signum() != lu.signum() || (ls * lu - 1.0).abs() > TOL_EIG {
        return Err(Error::NotOneElliptic(format!("real pair {ls}, {lu} is not reciprocal")));
    }
    let w = if on_circle[0].im > 0.0 { on_circle[0] } else { on_circle[1] };
    let alpha = w.im.atan2(w.re);
    check_strong_resonance(alpha, TOL_RES)?;

    let es = null_vector_real(&(jac - Mat4::identity() * ls));
    let mut eu = null_vector_real(&(jac - Mat4::identity() * lu));
    let o = omega(&es, &eu);
    if o.abs() < 1e-12 {
        return Err(Error::NotOneElliptic("degenerate hyperbolic eigenplane".into()));
    }
    eu /= o;
    let jc: Matrix4<Complex<f64>> = jac.map(|e| Complex::new(e, 0.0));
    let wc = null_vector_complex(&(jc - Matrix4::<Complex<f64>>::identity() * w));
    let fa: Vec4 = wc.map(|z| z.re);
    let fb: Vec4 = wc.map(|z| -z.im);
    let oc = omega(&fa, &fb);
    if oc.abs() < 1e-12 {
        return Err(Error::NotOneElliptic("degenerate center eigenplane".into()));
    }
    let center_sign = oc.signum();
    let scale = 1.0 / oc.abs().sqrt();
    let (fu, fv) = if center_sign > 0.0 { (fa * scale, fb * scale) } else { (fa * scale, -fb * scale) };
    let basis = Mat4::from_columns(&[es, eu, fu, fv]);
    let spec = Spectrum1Elliptic { mu: ls.abs(), alpha, orientation: ls.signum(), center_sign, basis };
    let sres = crate::symplectic_core::symplectic_residual(&basis);
    if sres > TOL_SYMP {
        return Err(Error::NotOneElliptic(format!("basis not symplectic: {sres:e}")));
    }
    let inv = basis.try_inverse().ok_or_else(|| Error::NotOneElliptic("singular basis".into()))?;
    let dev = crate::symplectic_core::max_abs(&(inv * jac * basis - spec.normal_matrix()));
    if dev > TOL_EIG * (1.0 + crate::symplectic_core::max_abs(jac)) {
        return Err(Error::NotOneElliptic(format!("block-diagonalization residual {dev:e}")));
    }
    Ok(spec)
}

/// Curve through the origin given as a graph over x, with derivatives.
pub trait CurveGraph: Send + Sync {
    /// (y, u, v) at x.
    fn value(&self, x: f64) -> [f64; 3];
    fn derivative(&self, x: f64) -> [f64; 3];
    fn second_derivative(&self, x: f64) -> [f64; 3];
}

/// Polynomial graph; `coeffs[k][j]` multiplies x^j in component k of (y, u, v).
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialCurve {
    pub coeffs: [Vec<f64>; 3],
}

impl PolynomialCurve {
    fn eval_deriv(c: &[f64], x: f64, order: u32) -> f64 {
        let mut s = 0.0;
        for (j, cj) in c.iter().enumerate() {
            let j = j as u32;
            if j < order {
                continue;
            }
            let falling: f64 = (0..order).map(|t| (j - t) as f64).product();
            s += cj * falling * x.powi((j - order) as i32);
        }
        s
    }
}

impl CurveGraph for PolynomialCurve {
    fn value(&self, x: f64) -> [f64; 3] {
        std::array::from_fn(|k| Self::eval_deriv(&self.coeffs[k], x, 0))
    }
    fn derivative(&self, x: f64) -> [f64; 3] {
        std::array::from_fn(|k| Self::eval_deriv(&self.coeffs[k], x, 1))
    }
    fn second_derivative(&self, x: f64) -> [f64; 3] {
        std::array::from_fn(|k| Self::eval_deriv(&self.coeffs[k], x, 2))
    }
}

/// Symplectic change (x, y, u, v) ↦ (ξ, η, ν, ω) sending the curve onto the
/// first coordinate axis.
pub struct StraighteningChange<C: CurveGraph> {
    pub curve: C,
}

impl<C: CurveGraph> SmoothMap4 for StraighteningChange<C> {
    fn name(&self) -> String {
        "curve straightening".into()
    }
    fn domain(&self) -> DomainBox {
        DomainBox::unbounded()
    }
    fn eval(&self, p: &PhasePoint) -> PhasePoint {
        let [yc, uc, vc] = self.curve.value(p.x);
        let [_, du, dv] = self.curve.derivative(p.x);
        let (nu, om) = (p.u - uc, p.v - vc);
        PhasePoint::new(p.x, p.y - yc - dv * nu + du * om, nu, om)
    }
    fn jacobian_at(&self, p: &PhasePoint) -> Mat4 {
        let [_, uc, vc] = self.curve.value(p.x);
        let [dy, du, dv] = self.curve.derivative(p.x);
        let [_, ddu, ddv] = self.curve.second_derivative(p.x);
        let mut m = Mat4::zeros();
        m[(0, 0)] = 1.0;
        m[(1, 0)] = -dy - ddv * (p.u - uc) + ddu * (p.v - vc);
        m[(1, 1)] = 1.0;
        m[(1, 2)] = -dv;
        m[(1, 3)] = du;
        m[(2, 0)] = -du;
        m[(2, 2)] = 1.0;
        m[(3, 0)] = -dv;
        m[(3, 3)] = 1.0;
        m
    }
    fn inverse_eval(&self, p: &PhasePoint) -> Result<PhasePoint> {
        let [yc, uc, vc] = self.curve.value(p.x);
        let [_, du, dv] = self.curve.derivative(p.x);
        Ok(PhasePoint::new(p.x, p.y + yc + dv * p.u - du * p.v, p.u + uc, p.v + vc))
    }
}

pub fn straighten_invariant_curve<C: CurveGraph>(curve: C) -> Result<StraighteningChange<C>> {
    let v0 = curve.value(0.0);
    let d0 = curve.derivative(0.0);
    let worst = v0.iter().chain(d0.iter()).fold(0.0_f64, |a, b| a.max(b.abs()));
    if worst > 1e-10 || !worst.is_finite() {
        return Err(Error::BadCurveData(format!("curve value/derivative at 0 deviates by {worst:e}")));
    }
    Ok(StraighteningChange { curve })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ResonantEquation {
    /// μ^{m1−m2−1} e^{iα(n1−n2)} = 1
    X,
    /// μ^{m1−m2+1} e^{iα(n1−n2)} = 1
    Y,
    /// μ^{m1−m2} e^{iα(n1−n2−1)} = 1
    Z,
    /// μ^{m1−m2} e^{iα(n1−n2+1)} = 1
    ZBar,
}

impl ResonantEquation {
    pub fn conjugate(self) -> Self {
        match self {
            ResonantEquation::X => ResonantEquation::Y,
            ResonantEquation::Y => ResonantEquation::X,
            ResonantEquation::Z => ResonantEquation::ZBar,
            ResonantEquation::ZBar => ResonantEquation::Z,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResonanceEntry {
    /// (m1, m2, n1, n2): powers of x, y, z, z̄.
    pub exponents: [u8; 4],
    pub equation: ResonantEquation,
    /// Winding integer k of the angular relation.
    pub k: i64,
    pub strong: bool,
    /// Real monomial names for weak resonances; complex name for strong ones.
    pub names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResonanceReport {
    pub alpha: f64,
    pub entries: Vec<ResonanceEntry>,
}

impl ResonanceReport {
    pub fn has_strong(&self) -> bool {
        self.entries.iter().any(|e| e.strong)
    }

    pub fn strong_entries(&self) -> impl Iterator<Item = &ResonanceEntry> {
        self.entries.iter().filter(|e| e.strong)
    }

    /// Real resonant monomial names of the weak resonances of one order.
    pub fn real_monomials(&self, order: u8) -> BTreeSet<String> {
        self.entries
            .iter()
            .filter(|e| !e.strong && e.exponents.iter().sum::<u8>() == order)
            .flat_map(|e| e.names.iter().cloned())
            .collect()
    }
}

fn power_name(base: &str, k: u8) -> String {
    match k {
        0 => String::new(),
        1 => base.to_string(),
        2 => format!("{base}²"),
        3 => format!("{base}³"),
        _ => format!("{base}^{k}"),
    }
}

fn complex_name(e: [u8; 4]) -> String {
    let s = [power_name("x", e[0]), power_name("y", e[1]), power_name("z", e[2]), power_name("z̄", e[3])].concat();
    if s.is_empty() {
        "1".into()
    } else {
        s
    }
}

fn real_names(e: [u8; 4], eq: ResonantEquation) -> Vec<String> {
    let hyper = [power_name("x", e[0]), power_name("y", e[1])].concat();
    let r = e[2].min(e[3]);
    let radial = match r {
        0 => String::new(),
        1 => "(u²+v²)".to_string(),
        k => format!("(u²+v²)^{k}"),
    };
    match eq {
        ResonantEquation::X | ResonantEquation::Y => vec![format!("{hyper}{radial}")],
        ResonantEquation::Z | ResonantEquation::ZBar => {
            ["u", "v"].iter().map(|c| format!("{hyper}{c}{radial}")).collect()
        }
    }
}

pub fn enumerate_resonances(alpha: f64, max_order: u8) -> ResonanceReport {
    let mut entries = Vec::new();
    for order in 2..=max_order {
        for e in monomials(order) {
            let (m1, m2, n1, n2) = (e[0] as i64, e[1] as i64, e[2] as i64, e[3] as i64);
            let candidates = [
                (ResonantEquation::X, m1 == m2 + 1, n1 - n2),
                (ResonantEquation::Y, m2 == m1 + 1, n1 - n2),
                (ResonantEquation::Z, m1 == m2, n1 - n2 - 1),
                (ResonantEquation::ZBar, m1 == m2, n1 - n2 + 1),
            ];
            for (equation, hyperbolic_ok, d) in candidates {
                if !hyperbolic_ok {
                    continue;
                }
                let phase = alpha * d as f64;
                let k = (phase / (2.0 * PI)).round() as i64;
                if (phase - 2.0 * PI * k as f64).abs() > TOL_RES * (d.abs().max(1) as f64) {
                    continue;
                }
                let strong = k != 0;
                let names = if strong { vec![complex_name(e)] } else { real_names(e, equation) };
                entries.push(ResonanceEntry { exponents: e, equation, k, strong, names });
            }
        }
    }
    ResonanceReport { alpha, entries }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalFormCoeffs {
    pub a: f64,
    pub b: f64,
    pub nu: f64,
    pub kappa: f64,
    /// Least-squares residual of the order-3 reduction.
    pub residual: f64,
    /// Largest quadratic coefficient left after the order-2 step.
    pub quadratic_remainder: f64,
    /// Deviation of the resonant part from the symplectic pattern
    /// (y-equation coefficients −a, −b; no xy(u,v) or r²(u,v) terms).
    pub symplectic_defect: f64,
}

impl NormalFormCoeffs {
    pub fn twist_certified(&self) -> bool {
        self.nu != 0.0 && self.residual <= TOL_NF
    }

    pub fn truncated_map(&self, spectrum: &Spectrum1Elliptic) -> TruncatedNormalForm {
        TruncatedNormalForm { mu: spectrum.mu, alpha: spectrum.alpha, a: self.a, b: self.b, nu: self.nu, kappa: self.kappa }
    }
}

/// Taylor jet (orders 1..3) of the map written in the spectrum basis around
/// a base point, from central differences of the closed-form Jacobian with
/// one Richardson level.
pub fn taylor_jet(map: &dyn SmoothMap4, base: &PhasePoint, basis: &Mat4, step: f64) -> Result<VecField> {
    let inv = basis.try_inverse().ok_or(Error::NotInvertible)?;
    let jac_at = |z: &Vec4| -> Mat4 { inv * map.jacobian_at(&PhasePoint::from_vec(&(base.to_vec() + basis * z))) * basis };
    let e = |k: usize| {
        let mut v = Vec4::zeros();
        v[k] = 1.0;
        v
    };
    // first derivative of the Jacobian in direction k
    let d1 = |k: usize, h: f64| (jac_at(&(e(k) * h)) - jac_at(&(e(k) * -h))) / (2.0 * h);
    // mixed second derivative in directions k, l
    let d2 = |k: usize, l: usize, h: f64| {
        if k == l {
            (jac_at(&(e(k) * h)) - jac_at(&Vec4::zeros()) * 2.0 + jac_at(&(e(k) * -h))) / (h * h)
        } else {
            (jac_at(&((e(k) + e(l)) * h)) - jac_at(&((e(k) - e(l)) * h)) - jac_at(&((e(l) - e(k)) * h))
                + jac_at(&((e(k) + e(l)) * -h)))
                / (4.0 * h * h)
        }
    };
    let rich = |a: Mat4, b: Mat4| (b * 4.0 - a) / 3.0;
    let lin = jac_at(&Vec4::zeros());
    let mut field = field_zero();
    for i in 0..4 {
        for j in 0..4 {
            field[i].add_term(unit_exp(j), lin[(i, j)]);
        }
    }
    let hess: Vec<Mat4> = (0..4).map(|k| rich(d1(k, step), d1(k, step / 2.0))).collect();
    for e2 in monomials(2) {
        let idx: Vec<usize> = expand_exp(&e2);
        let (j, k) = (idx[0], idx[1]);
        let fact: f64 = e2.iter().map(|&p| factorial(p)).product();
        for i in 0..4 {
            let c = hess[k][(i, j)] / fact;
            if !c.is_finite() {
                return Err(Error::DomainEscape("non-finite Taylor coefficient".into()));
            }
            field[i].add_term(e2, c);
        }
    }
    for e3 in monomials(3) {
        let idx = expand_exp(&e3);
        let (j, k, l) = (idx[0], idx[1], idx[2]);
        let t = rich(d2(k, l, step), d2(k, l, step / 2.0));
        let fact: f64 = e3.iter().map(|&p| factorial(p)).product();
        for i in 0..4 {
            field[i].add_term(e3, t[(i, j)] / fact);
        }
    }
    Ok(field)
}

fn unit_exp(j: usize) -> Exp {
    let mut e = [0u8; 4];
    e[j] = 1;
    e
}

fn expand_exp(e: &Exp) -> Vec<usize> {
    let mut out = Vec::new();
    for (j, &p) in e.iter().enumerate() {
        for _ in 0..p {
            out.push(j);
        }
    }
    out
}

fn factorial(p: u8) -> f64 {
    (1..=p as u64).product::<u64>() as f64
}

fn field_to_vec(f: &VecField, d: u8) -> DVector<f64> {
    let mons = monomials(d);
    let nm = mons.len();
    let mut v = DVector::zeros(4 * nm);
    for i in 0..4 {
        for (k, e) in mons.iter().enumerate() {
            v[i * nm + k] = f[i].coeff(e);
        }
    }
    v
}

fn vec_to_field(v: &DVector<f64>, d: u8) -> VecField {
    let mons = monomials(d);
    let nm = mons.len();
    let mut f = field_zero();
    for i in 0..4 {
        for (k, e) in mons.iter().enumerate() {
            f[i].add_term(*e, v[i * nm + k]);
        }
    }
    f
}

/// Matrix of g ↦ g∘Λ − Λg on homogeneous fields of degree d.
fn homological_matrix(lam: &Mat4, d: u8) -> DMatrix<f64> {
    let mons = monomials(d);
    let nm = mons.len();
    let mut m = DMatrix::zeros(4 * nm, 4 * nm);
    for i in 0..4 {
        for (k, e) in mons.iter().enumerate() {
            let mut g = field_zero();
            g[i] = Poly4::monomial(1.0, *e);
            let lg = field_sub(&field_precompose_linear(&g, lam, d), &field_linear_combination(lam, &g));
            m.set_column(i * nm + k, &field_to_vec(&lg, d));
        }
    }
    m
}

/// The eight resonant cubic fields in (x, y, u, v) order.
pub fn resonant_cubic_fields() -> [VecField; 8] {
    let r2 = |pre: Exp| {
        let mut p = Poly4::zero();
        p.add_term([pre[0], pre[1], pre[2] + 2, pre[3]], 1.0);
        p.add_term([pre[0], pre[1], pre[2], pre[3] + 2], 1.0);
        p
    };
    let only = |i: usize, p: Poly4| {
        let mut f = field_zero();
        f[i] = p;
        f
    };
    let center = |pu: Poly4, pv: Poly4| {
        let mut f = field_zero();
        f[2] = pu;
        f[3] = pv;
        f
    };
    // r²·u and r²·v
    let r2u = r2([0, 0, 1, 0]);
    let r2v = r2([0, 0, 0, 1]);
    [
        only(0, Poly4::monomial(1.0, [2, 1, 0, 0])),
        only(0, r2([1, 0, 0, 0])),
        only(1, Poly4::monomial(1.0, [1, 2, 0, 0])),
        only(1, r2([0, 1, 0, 0])),
        center(Poly4::monomial(1.0, [1, 1, 1, 0]), Poly4::monomial(1.0, [1, 1, 0, 1])),
        center(Poly4::monomial(-1.0, [1, 1, 0, 1]), Poly4::monomial(1.0, [1, 1, 1, 0])),
        center(r2u.clone(), r2v.clone()),
        center(r2v.scale(-1.0), r2u),
    ]
}

/// Reduces a cubic jet with linear part `lam` to the resonant normal form.
pub fn normalize_jet(jet: &VecField, lam: &Mat4) -> Result<NormalFormCoeffs> {
    let lam_inv = lam.try_inverse().ok_or(Error::NotInvertible)?;
    // order 2
    let f2 = field_to_vec(&field_homogeneous(jet, 2), 2);
    let l2 = homological_matrix(lam, 2);
    let svd2 = l2.clone().svd(true, true);
    let smin = svd2.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin < TOL_DIV {
        return Err(Error::IllConditionedHomological(smin));
    }
    let g2 = vec_to_field(&svd2.solve(&f2, 0.0).map_err(|_| Error::IllConditionedHomological(smin))?, 2);
    let h = crate::poly::field_add(&field_identity(), &g2);
    let mut dg2g2 = field_zero();
    for i in 0..4 {
        for j in 0..4 {
            dg2g2[i] = dg2g2[i].add(&g2[i].derivative(j).mul(&g2[j], 3));
        }
    }
    let h_inv = crate::poly::field_add(&field_sub(&field_identity(), &g2), &dg2g2);
    let conj = compose(&h_inv, &compose(jet, &h, 3), 3);
    let quadratic_remainder = field_homogeneous(&conj, 2).iter().map(|p| p.max_abs_coeff()).fold(0.0, f64::max);

    // order 3: f3 = L3 g3 + K c
    let f3 = field_to_vec(&field_homogeneous(&conj, 3), 3);
    let l3 = homological_matrix(lam, 3);
    let kf = resonant_cubic_fields();
    let n = l3.nrows();
    let mut sys = DMatrix::zeros(n, l3.ncols() + 8);
    sys.view_mut((0, 0), (n, l3.ncols())).copy_from(&l3);
    let lam_kf: Vec<DVector<f64>> = kf.iter().map(|f| field_to_vec(&field_linear_combination(lam, f), 3)).collect();
    for (c, col) in lam_kf.iter().enumerate() {
        sys.set_column(l3.ncols() + c, col);
    }
    let sol = sys.clone().svd(true, true).solve(&f3, 1e-13).map_err(|_| Error::IllConditionedHomological(0.0))?;
    let residual = (&sys * &sol - &f3).amax();
    let c: Vec<f64> = (0..8).map(|k| sol[l3.ncols() + k]).collect();
    // re-project Λ⁻¹·(resonant part) onto the resonant fields to absorb basis drift
    let mut res_field = field_zero();
    for (k, f) in kf.iter().enumerate() {
        res_field = crate::poly::field_add(&res_field, &field_linear_combination(&(lam * c[k]), f));
    }
    let back = field_to_vec(&field_linear_combination(&lam_inv, &res_field), 3);
    let kmat = DMatrix::from_columns(&kf.iter().map(|f| field_to_vec(f, 3)).collect::<Vec<_>>());
    let coeffs = kmat.svd(true, true).solve(&back, 1e-14).map_err(|_| Error::IllConditionedHomological(0.0))?;
    let symplectic_defect = [coeffs[2] + coeffs[0], coeffs[3] + coeffs[1], coeffs[4], coeffs[6]]
        .iter()
        .fold(0.0_f64, |a, b| a.max(b.abs()));
    Ok(NormalFormCoeffs {
        a: coeffs[0],
        b: coeffs[1],
        kappa: coeffs[5],
        nu: coeffs[7],
        residual,
        quadratic_remainder,
        symplectic_defect,
    })
}

pub fn extract_normal_form(map: &dyn SmoothMap4, spectrum: &Spectrum1Elliptic) -> Result<NormalFormCoeffs> {
    extract_normal_form_at(map, &PhasePoint::origin(), spectrum)
}

pub fn extract_normal_form_at(
    map: &dyn SmoothMap4,
    base: &PhasePoint,
    spectrum: &Spectrum1Elliptic,
) -> Result<NormalFormCoeffs> {
    check_strong_resonance(spectrum.alpha, TOL_RES)?;
    let jet = taylor_jet(map, base, &spectrum.basis, 1e-2)?;
    let lam = spectrum.normal_matrix();
    let nf = normalize_jet(&jet, &lam)?;
    Ok(nf)
}

/// Ω-compatibility of a computed basis, for diagnostics.
pub fn basis_symplectic_residual(basis: &Mat4) -> f64 {
    let j = structure_matrix();
    crate::symplectic_core::max_abs(&(basis.transpose() * j * basis - j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::{build_local_map, LocalModelParams};
    use crate::symplectic_core::{saddle_center_matrix, LinearMap};

    #[test]
    fn fixed_point_of_model() {
        let f = build_local_map(LocalModelParams::demo()).unwrap();
        let p = find_fixed_point(&f, PhasePoint::new(0.01, -0.02, 0.01, 0.0)).unwrap();
        assert!(p.norm() < 1e-12);
        let far = find_fixed_point(&f, PhasePoint::new(50.0, 50.0, 0.0, 0.0));
        assert!(matches!(far, Err(Error::NewtonDivergence(_))));
    }

    #[test]
    fn spectrum_of_block_matrix() {
        let s = classify_spectrum(&saddle_center_matrix(0.5, 1.0)).unwrap();
        assert!((s.mu - 0.5).abs() < 1e-12 && (s.alpha - 1.0).abs() < 1e-12);
        let ell = block_diag(&rotation(0.3), &rotation(1.0));
        assert!(matches!(classify_spectrum(&ell), Err(Error::NotOneElliptic(_))));
        let res = saddle_center_matrix(0.5, 2.0 * PI / 3.0);
        assert!(matches!(classify_spectrum(&res), Err(Error::StrongResonance { .. })));
    }

    #[test]
    fn straightening_parabola() {
        let c = PolynomialCurve { coeffs: [vec![0.0, 0.0, 1.0], vec![], vec![]] };
        let s = straighten_invariant_curve(c).unwrap();
        let q = s.eval(&PhasePoint::new(0.3, 0.09, 0.0, 0.0));
        assert!(q.y.abs() < 1e-16);
        let bad = PolynomialCurve { coeffs: [vec![0.0, 1.0], vec![], vec![]] };
        assert!(matches!(straighten_invariant_curve(bad), Err(Error::BadCurveData(_))));
    }

    #[test]
    fn resonant_set_non_resonant_alpha() {
        let r = enumerate_resonances(1.0, 3);
        let expected: BTreeSet<String> = ["x²y", "x(u²+v²)", "xy²", "y(u²+v²)", "xyu", "xyv", "u(u²+v²)", "v(u²+v²)"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(r.real_monomials(3), expected);
        assert!(r.real_monomials(2).is_empty() && !r.has_strong());
        assert!(enumerate_resonances(2.0 * PI / 3.0, 3).strong_entries().any(|e| e.exponents.iter().sum::<u8>() == 2));
        assert!(enumerate_resonances(PI / 2.0, 3).has_strong());
    }

    #[test]
    fn linear_map_has_zero_coefficients() {
        let m = LinearMap::new(saddle_center_matrix(0.5, 1.0), "linear");
        let s = classify_spectrum(&m.matrix).unwrap();
        let nf = extract_normal_form(&m, &s).unwrap();
        assert!(nf.a.abs() < 1e-14 && nf.b.abs() < 1e-14 && nf.nu.abs() < 1e-14 && nf.kappa.abs() < 1e-14);
    }

    #[test]
    fn local_map_coefficients_recovered() {
        let p = LocalModelParams { mu: 0.5, alpha: 1.0, a: 0.3, b: -0.2, nu: 0.1, kappa: 0.4, eps_pert: 1e-3, h: 2.0 };
        let f = build_local_map(p).unwrap();
        let s = classify_spectrum(&f.jacobian_at(&PhasePoint::origin())).unwrap();
        let nf = extract_normal_form(&f, &s).unwrap();
        assert!((nf.a - 0.3).abs() < 1e-8, "{nf:?}");
        assert!((nf.b + 0.2).abs() < 1e-8 && (nf.nu - 0.1).abs() < 1e-8 && (nf.kappa - 0.4).abs() < 1e-8, "{nf:?}");
        assert!(nf.symplectic_defect < 1e-8);
    }
}
