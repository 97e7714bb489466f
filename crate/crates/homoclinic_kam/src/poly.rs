//! Sparse real polynomials in four variables and truncated algebra on
//! polynomial vector fields.

use std::collections::BTreeMap;

pub type Exp = [u8; 4];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly4 {
    pub terms: BTreeMap<Exp, f64>,
}

fn degree_of(e: &Exp) -> u8 {
    e.iter().sum()
}

fn powi(x: f64, k: u8) -> f64 {
    match k {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        _ => x.powi(k as i32),
    }
}

/// All exponents of total degree `d`, in a fixed lexicographic order.
pub fn monomials(d: u8) -> Vec<Exp> {
    let mut out = Vec::new();
    for a in (0..=d).rev() {
        for b in (0..=d - a).rev() {
            for c in (0..=d - a - b).rev() {
                out.push([a, b, c, d - a - b - c]);
            }
        }
    }
    out
}

impl Poly4 {
    pub fn zero() -> Self {
        Poly4::default()
    }

    pub fn constant(c: f64) -> Self {
        Poly4::monomial(c, [0, 0, 0, 0])
    }

    pub fn var(i: usize) -> Self {
        let mut e = [0u8; 4];
        e[i] = 1;
        Poly4::monomial(1.0, e)
    }

    pub fn monomial(c: f64, e: Exp) -> Self {
        let mut p = Poly4::zero();
        p.add_term(e, c);
        p
    }

    pub fn add_term(&mut self, e: Exp, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(e).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.remove(&e);
        }
    }

    pub fn coeff(&self, e: &Exp) -> f64 {
        self.terms.get(e).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, w: &[f64; 4]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * powi(w[0], e[0]) * powi(w[1], e[1]) * powi(w[2], e[2]) * powi(w[3], e[3]))
            .sum()
    }

    pub fn derivative(&self, i: usize) -> Poly4 {
        let mut out = Poly4::zero();
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut f = *e;
                f[i] -= 1;
                out.add_term(f, c * e[i] as f64);
            }
        }
        out
    }

    pub fn gradient(&self, w: &[f64; 4]) -> [f64; 4] {
        let mut g = [0.0; 4];
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = self.derivative(i).eval(w);
        }
        g
    }

    pub fn hessian(&self, w: &[f64; 4]) -> [[f64; 4]; 4] {
        let mut h = [[0.0; 4]; 4];
        for i in 0..4 {
            let di = self.derivative(i);
            for j in i..4 {
                let val = di.derivative(j).eval(w);
                h[i][j] = val;
                h[j][i] = val;
            }
        }
        h
    }

    pub fn scale(&self, s: f64) -> Poly4 {
        let mut out = Poly4::zero();
        for (e, c) in &self.terms {
            out.add_term(*e, c * s);
        }
        out
    }

    pub fn add(&self, other: &Poly4) -> Poly4 {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(*e, *c);
        }
        out
    }

    pub fn sub(&self, other: &Poly4) -> Poly4 {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Poly4, max_deg: u8) -> Poly4 {
        let mut out = Poly4::zero();
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e = [e1[0] + e2[0], e1[1] + e2[1], e1[2] + e2[2], e1[3] + e2[3]];
                if degree_of(&e) <= max_deg {
                    out.add_term(e, c1 * c2);
                }
            }
        }
        out
    }

    pub fn homogeneous_part(&self, d: u8) -> Poly4 {
        let mut out = Poly4::zero();
        for (e, c) in &self.terms {
            if degree_of(e) == d {
                out.add_term(*e, *c);
            }
        }
        out
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0_f64, |a, c| a.max(c.abs()))
    }
}

/// Polynomial vector field with components in (x, y, u, v) order.
pub type VecField = [Poly4; 4];

pub fn field_zero() -> VecField {
    [Poly4::zero(), Poly4::zero(), Poly4::zero(), Poly4::zero()]
}

pub fn field_identity() -> VecField {
    [Poly4::var(0), Poly4::var(1), Poly4::var(2), Poly4::var(3)]
}

pub fn field_add(a: &VecField, b: &VecField) -> VecField {
    [a[0].add(&b[0]), a[1].add(&b[1]), a[2].add(&b[2]), a[3].add(&b[3])]
}

pub fn field_sub(a: &VecField, b: &VecField) -> VecField {
    [a[0].sub(&b[0]), a[1].sub(&b[1]), a[2].sub(&b[2]), a[3].sub(&b[3])]
}

pub fn field_homogeneous(a: &VecField, d: u8) -> VecField {
    [a[0].homogeneous_part(d), a[1].homogeneous_part(d), a[2].homogeneous_part(d), a[3].homogeneous_part(d)]
}

/// Components mixed by a constant matrix: (M a)_i = Σ_j M_ij a_j.
pub fn field_linear_combination(m: &nalgebra::Matrix4<f64>, a: &VecField) -> VecField {
    let mut out = field_zero();
    for i in 0..4 {
        for j in 0..4 {
            if m[(i, j)] != 0.0 {
                out[i] = out[i].add(&a[j].scale(m[(i, j)]));
            }
        }
    }
    out
}

/// outer ∘ inner with all terms above `max_deg` discarded. `inner` must have
/// no constant terms.
pub fn compose(outer: &VecField, inner: &VecField, max_deg: u8) -> VecField {
    let mut powers: Vec<Vec<Poly4>> = Vec::with_capacity(4);
    for comp in inner.iter() {
        let mut row = vec![Poly4::constant(1.0)];
        for k in 1..=max_deg as usize {
            let next = row[k - 1].mul(comp, max_deg);
            row.push(next);
        }
        powers.push(row);
    }
    let mut out = field_zero();
    for (i, comp) in outer.iter().enumerate() {
        for (e, c) in &comp.terms {
            if degree_of(e) > max_deg {
                continue;
            }
            let mut term = Poly4::constant(*c);
            for j in 0..4 {
                if e[j] > 0 {
                    term = term.mul(&powers[j][e[j] as usize], max_deg);
                }
            }
            out[i] = out[i].add(&term);
        }
    }
    out
}

/// Linear substitution a ∘ M (argument transformed by the matrix).
pub fn field_precompose_linear(a: &VecField, m: &nalgebra::Matrix4<f64>, max_deg: u8) -> VecField {
    let mut inner = field_zero();
    for (i, comp) in inner.iter_mut().enumerate() {
        for j in 0..4 {
            comp.add_term(
                {
                    let mut e = [0u8; 4];
                    e[j] = 1;
                    e
                },
                m[(i, j)],
            );
        }
    }
    compose(a, &inner, max_deg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(2).len(), 10);
        assert_eq!(monomials(3).len(), 20);
    }

    #[test]
    fn derivatives_and_eval() {
        // p = x^2 y + 3 u v^2
        let mut p = Poly4::monomial(1.0, [2, 1, 0, 0]);
        p.add_term([0, 0, 1, 2], 3.0);
        let w = [1.5, -0.5, 2.0, 0.25];
        assert!((p.eval(&w) - (1.5f64.powi(2) * -0.5 + 3.0 * 2.0 * 0.0625)).abs() < 1e-15);
        let g = p.gradient(&w);
        assert!((g[0] - 2.0 * 1.5 * -0.5).abs() < 1e-15);
        assert!((g[3] - 6.0 * 2.0 * 0.25).abs() < 1e-15);
        let h = p.hessian(&w);
        assert!((h[0][1] - 3.0).abs() < 1e-15 && (h[2][3] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn compose_truncates() {
        // outer = (x^2, 0, 0, 0), inner = (x + y^2, ...) => x^2 + 2 x y^2 up to degree 3
        let mut outer = field_zero();
        outer[0] = Poly4::monomial(1.0, [2, 0, 0, 0]);
        let mut inner = field_identity();
        inner[0].add_term([0, 2, 0, 0], 1.0);
        let c = compose(&outer, &inner, 3);
        assert_eq!(c[0].coeff(&[2, 0, 0, 0]), 1.0);
        assert_eq!(c[0].coeff(&[1, 2, 0, 0]), 2.0);
        assert_eq!(c[0].coeff(&[0, 4, 0, 0]), 0.0);
    }
}
