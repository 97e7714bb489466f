//! Linearization along the homoclinic orbit, the bounded-solution boundary
//! value problems in the rotating frame, the scattering map of the center
//! tangent plane, and the transversality and genericity certificates.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix2x4, RowVector4, Vector2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::homoclinic::{assemble_homoclinic_orbit, fit_decay, HomoclinicOrbit};
use crate::model_zoo::{random_symplectic, MapModel};
use crate::symplectic_core::{
    check_symplectic_block_identities, max_abs, rotation, saddle_center_matrix, symplectic_residual,
    BlockIdentityReport, Jacobian4, Mat4, SmoothMap4, Vec4,
};

pub const TOL_BVP: f64 = 1e-10;
pub const TOL_ROOT: f64 = 1e-6;
pub const TOL_TRANS: f64 = 1e-8;
const PICARD_MAX_ITER: usize = 2000;
const LIMIT_TOL: f64 = 1e-6;

fn row_norm1(r: &RowVector4<f64>) -> f64 {
    r.iter().map(|e| e.abs()).sum()
}

fn block_norm_inf(h: &Matrix2x4<f64>) -> f64 {
    (0..2).map(|i| h.row(i).iter().map(|e| e.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// blockdiag(1, 1, R_{kα}).
pub fn frame_matrix(k: i64, alpha: f64) -> Mat4 {
    let mut s = Mat4::identity();
    s.fixed_view_mut::<2, 2>(2, 2).copy_from(&rotation(k as f64 * alpha));
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearizationSequence {
    /// Index of the first matrix; `mats[i]` is L_{lo+i} : T_{q_n} → T_{q_{n+1}}.
    pub lo: i64,
    pub mats: Vec<Mat4>,
    pub mu: f64,
    pub alpha: f64,
    /// Limit matrix blockdiag(diag(μ, μ⁻¹), R_α).
    pub limit: Mat4,
    pub p_blocks: Vec<RowVector4<f64>>,
    pub q_blocks: Vec<RowVector4<f64>>,
    pub w_blocks: Vec<Matrix2x4<f64>>,
    /// Rotating-frame blocks; `None` until derotated.
    pub frame_reference: Option<i64>,
    pub f_blocks: Vec<RowVector4<f64>>,
    pub g_blocks: Vec<RowVector4<f64>>,
    pub h_blocks: Vec<Matrix2x4<f64>>,
    /// Certified coupling decay rate μ₁ ∈ (μ, 1).
    pub decay_rate: f64,
    /// Raw fitted rate of the coupling norms (0 if all couplings vanish).
    pub fitted_rate: f64,
    pub max_symplectic_residual: f64,
}

impl LinearizationSequence {
    pub fn from_matrices(lo: i64, mats: Vec<Mat4>, mu: f64, alpha: f64) -> Result<Self> {
        let limit = saddle_center_matrix(mu, alpha);
        let mut p_blocks = Vec::with_capacity(mats.len());
        let mut q_blocks = Vec::with_capacity(mats.len());
        let mut w_blocks = Vec::with_capacity(mats.len());
        let mut max_symplectic_residual: f64 = 0.0;
        for m in &mats {
            let c = m - limit;
            p_blocks.push(c.fixed_view::<1, 4>(0, 0).into_owned());
            q_blocks.push(c.fixed_view::<1, 4>(1, 0).into_owned());
            w_blocks.push(c.fixed_view::<2, 4>(2, 0).into_owned());
            max_symplectic_residual = max_symplectic_residual.max(symplectic_residual(m));
        }
        let mut seq = LinearizationSequence {
            lo,
            mats,
            mu,
            alpha,
            limit,
            f_blocks: p_blocks.clone(),
            g_blocks: q_blocks.clone(),
            h_blocks: w_blocks.clone(),
            p_blocks,
            q_blocks,
            w_blocks,
            frame_reference: None,
            decay_rate: mu.sqrt(),
            fitted_rate: 0.0,
            max_symplectic_residual,
        };
        seq.fit_coupling_decay()?;
        Ok(seq)
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.mats.len() as i64 - 1
    }

    fn idx(&self, n: i64) -> Option<usize> {
        (n >= self.lo && n <= self.hi()).then(|| (n - self.lo) as usize)
    }

    pub fn matrix(&self, n: i64) -> Option<&Mat4> {
        self.idx(n).map(|i| &self.mats[i])
    }

    /// max(‖Pₙ‖, ‖Qₙ‖, ‖Wₙ‖) in row-sum norms; 0 outside the stored range.
    pub fn coupling_norm(&self, n: i64) -> f64 {
        match self.idx(n) {
            Some(i) => row_norm1(&self.p_blocks[i]).max(row_norm1(&self.q_blocks[i])).max(block_norm_inf(&self.w_blocks[i])),
            None => 0.0,
        }
    }

    fn fit_coupling_decay(&mut self) -> Result<()> {
        let kmax = (-self.lo).min(self.hi()).max(0);
        let ns: Vec<f64> = (1..=kmax).map(|k| k as f64).collect();
        let ds: Vec<f64> = (1..=kmax).map(|k| self.coupling_norm(k).max(self.coupling_norm(-k))).collect();
        let start = ds.len() / 2;
        if ds[start..].iter().all(|d| *d == 0.0) {
            self.fitted_rate = 0.0;
            self.decay_rate = self.mu.sqrt();
            return Ok(());
        }
        let fit = fit_decay(&ns, &ds)?;
        self.fitted_rate = fit.rate;
        self.decay_rate = fit.rate.max(self.mu.sqrt());
        if self.decay_rate >= 1.0 {
            return Err(Error::DecayFitFailure(format!("coupling rate {}", self.decay_rate)));
        }
        Ok(())
    }

    /// Smallest C with coupling_norm(n) ≤ C·μ₁^{|n|} for all stored |n| ≥ n0.
    pub fn decay_constant(&self, n0: i64) -> f64 {
        (self.lo..=self.hi())
            .filter(|n| n.abs() >= n0)
            .map(|n| self.coupling_norm(n) / self.decay_rate.powi(n.abs() as i32))
            .fold(0.0, f64::max)
    }

    /// Rotating-frame blocks with frame S_{n−reference}. Repeated calls with
    /// the same reference return the sequence unchanged.
    pub fn derotate(&self, reference: i64) -> LinearizationSequence {
        if self.frame_reference == Some(reference) {
            return self.clone();
        }
        let mut out = self.clone();
        for (i, n) in (self.lo..=self.hi()).enumerate() {
            let k = n - reference;
            let s = frame_matrix(k, self.alpha);
            out.f_blocks[i] = self.p_blocks[i] * s;
            out.g_blocks[i] = self.q_blocks[i] * s;
            out.h_blocks[i] = rotation(-((k + 1) as f64) * self.alpha) * self.w_blocks[i] * s;
        }
        out.frame_reference = Some(reference);
        out
    }

    /// Center block of the rotating-frame limit step at index n.
    pub fn derotated_limit_center(&self, n: i64) -> Matrix2<f64> {
        let k = n - self.frame_reference.unwrap_or(0);
        rotation(-((k + 1) as f64) * self.alpha) * rotation(self.alpha) * rotation(k as f64 * self.alpha)
    }
}

pub fn linearize_along_orbit(model: &MapModel, orbit: &HomoclinicOrbit) -> Result<LinearizationSequence> {
    let params = model.params();
    let at_p = model.jacobian_at(&orbit.fixed_point);
    let limit = saddle_center_matrix(params.mu, params.alpha);
    let dev = max_abs(&(at_p - limit));
    if dev > LIMIT_TOL {
        return Err(Error::DecayFitFailure(format!("Jacobian at p deviates from the limit matrix by {dev:e}")));
    }
    let m = orbit.n_max as i64;
    let mats: Vec<Mat4> = (-m..m).map(|n| model.jacobian_at(&orbit.point(n))).collect();
    LinearizationSequence::from_matrices(-m, mats, params.mu, params.alpha)
}

/// L_n = Λ·G_n with G_n a random symplectic matrix of size scale·rate^{|n|}.
pub fn synthetic_sequence<R: Rng>(mu: f64, alpha: f64, n_max: usize, scale: f64, rate: f64, rng: &mut R) -> Result<LinearizationSequence> {
    let lam = saddle_center_matrix(mu, alpha);
    let m = n_max as i64;
    let mats = (-m..m).map(|n| lam * random_symplectic(rng, scale * rate.powi(n.abs() as i32))).collect();
    LinearizationSequence::from_matrices(-m, mats, mu, alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// n ≥ N, boundary data (ξ_N, χ₊).
    Forward,
    /// n ≤ −N, boundary data (η_{−N}, χ₋).
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BvpBoundaryData {
    pub direction: Direction,
    pub n: usize,
    /// ξ⁰ for the forward problem, η⁰ for the backward one.
    pub hyperbolic: f64,
    /// χ₊ or χ₋.
    pub chi: Vector2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundedSeqSolution {
    pub data: BvpBoundaryData,
    /// First stored index.
    pub start: i64,
    pub truncation: usize,
    /// Rotating-frame values ψₙ = (ξ, η, χ¹, χ²).
    pub psi: Vec<Vec4>,
    pub iterations: usize,
    pub fixed_point_residual: f64,
    pub lipschitz: f64,
    pub corrections: Vec<f64>,
    /// Bound on the neglected tail couplings times the solution size.
    pub tail_bound: f64,
}

impl BoundedSeqSolution {
    pub fn index_range(&self) -> std::ops::RangeInclusive<i64> {
        self.start..=self.start + self.psi.len() as i64 - 1
    }

    pub fn psi_at(&self, n: i64) -> Vec4 {
        self.psi[(n - self.start) as usize]
    }

    /// Value in the original (unrotated) tangent coordinates.
    pub fn zeta_at(&self, n: i64, alpha: f64) -> Vec4 {
        let reference = match self.data.direction {
            Direction::Forward => self.data.n as i64,
            Direction::Backward => -(self.data.n as i64),
        };
        frame_matrix(n - reference, alpha) * self.psi_at(n)
    }
}

fn step_terms(seq: &LinearizationSequence, n: i64, psi: &Vec4) -> (f64, f64, Vector2<f64>) {
    let i = seq.idx(n).expect("index inside the sequence");
    ((seq.f_blocks[i] * psi)[0], (seq.g_blocks[i] * psi)[0], seq.h_blocks[i] * psi)
}

fn apply_operator(seq: &LinearizationSequence, data: &BvpBoundaryData, start: i64, psi: &[Vec4]) -> Vec<Vec4> {
    let mu = seq.mu;
    let len = psi.len();
    let mut out = vec![Vec4::zeros(); len];
    let terms: Vec<(f64, f64, Vector2<f64>)> =
        psi.iter().enumerate().map(|(i, p)| step_terms(seq, start + i as i64, p)).collect();
    match data.direction {
        Direction::Forward => {
            out[0][0] = data.hyperbolic;
            for i in 1..len {
                out[i][0] = mu * out[i - 1][0] + terms[i - 1].0;
            }
            out[len - 1][1] = -mu * terms[len - 1].1;
            let c = data.chi - terms[len - 1].2;
            out[len - 1][2] = c[0];
            out[len - 1][3] = c[1];
            for i in (0..len - 1).rev() {
                out[i][1] = mu * (out[i + 1][1] - terms[i].1);
                out[i][2] = out[i + 1][2] - terms[i].2[0];
                out[i][3] = out[i + 1][3] - terms[i].2[1];
            }
        }
        Direction::Backward => {
            out[0][0] = 0.0;
            out[0][2] = data.chi[0];
            out[0][3] = data.chi[1];
            for i in 1..len {
                out[i][0] = mu * out[i - 1][0] + terms[i - 1].0;
                out[i][2] = out[i - 1][2] + terms[i - 1].2[0];
                out[i][3] = out[i - 1][3] + terms[i - 1].2[1];
            }
            out[len - 1][1] = data.hyperbolic;
            for i in (0..len - 1).rev() {
                out[i][1] = mu * (out[i + 1][1] - terms[i].1);
            }
        }
    }
    out
}

fn sup_norm(v: &[Vec4]) -> f64 {
    v.iter().map(|p| p.amax()).fold(0.0, f64::max)
}

fn sup_diff(a: &[Vec4], b: &[Vec4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

/// Lipschitz constant of the truncated operator in the sup norm.
pub fn operator_lipschitz(seq: &LinearizationSequence, direction: Direction, start: i64, len: usize) -> f64 {
    let mu = seq.mu;
    let idx = |i: usize| seq.idx(start + i as i64).expect("index inside the sequence");
    let fnorm: Vec<f64> = (0..len).map(|i| row_norm1(&seq.f_blocks[idx(i)])).collect();
    let gnorm: Vec<f64> = (0..len).map(|i| row_norm1(&seq.g_blocks[idx(i)])).collect();
    let hnorm: Vec<f64> = (0..len).map(|i| block_norm_inf(&seq.h_blocks[idx(i)])).collect();
    let mut lx = vec![0.0; len];
    let mut ly = vec![0.0; len];
    let mut lc = vec![0.0; len];
    for i in 1..len {
        lx[i] = mu * lx[i - 1] + fnorm[i - 1];
    }
    match direction {
        Direction::Forward => {
            ly[len - 1] = mu * gnorm[len - 1];
            lc[len - 1] = hnorm[len - 1];
            for i in (0..len - 1).rev() {
                ly[i] = mu * (ly[i + 1] + gnorm[i]);
                lc[i] = lc[i + 1] + hnorm[i];
            }
        }
        Direction::Backward => {
            for i in 1..len {
                lc[i] = lc[i - 1] + hnorm[i - 1];
            }
            for i in (0..len - 1).rev() {
                ly[i] = mu * (ly[i + 1] + gnorm[i]);
            }
        }
    }
    (0..len).map(|i| lx[i].max(ly[i]).max(lc[i])).fold(0.0, f64::max)
}

/// Smallest truncation length with C·κ^{N+T} < tol_bvp/10, κ = max(μ, μ₁).
pub fn choose_truncation(seq: &LinearizationSequence, n: usize) -> usize {
    let kappa = seq.mu.max(seq.decay_rate);
    let c = seq.decay_constant(n as i64);
    if c == 0.0 {
        return 4;
    }
    let target = TOL_BVP / 10.0;
    let mut t = 1usize;
    while c * kappa.powi((n + t) as i32) >= target && t < 100_000 {
        t += 1;
    }
    t
}

pub fn solve_bvp(seq: &LinearizationSequence, data: &BvpBoundaryData, t: usize) -> Result<BoundedSeqSolution> {
    let n = data.n as i64;
    let (reference, start) = match data.direction {
        Direction::Forward => (n, n),
        Direction::Backward => (-n, -n - t as i64),
    };
    let len = t + 1;
    if seq.idx(start).is_none() || seq.idx(start + t as i64).is_none() {
        return Err(Error::InvalidParameters(format!(
            "indices {start}..={} outside the linearization range {}..={}",
            start + t as i64,
            seq.lo,
            seq.hi()
        )));
    }
    let seq = seq.derotate(reference);
    let lipschitz = operator_lipschitz(&seq, data.direction, start, len);
    if lipschitz >= 1.0 || !lipschitz.is_finite() {
        return Err(Error::NoContraction(lipschitz));
    }
    let zero = vec![Vec4::zeros(); len];
    let mut psi = apply_operator(&seq, data, start, &zero);
    let mut corrections = Vec::new();
    let mut iterations = 0;
    loop {
        let next = apply_operator(&seq, data, start, &psi);
        let corr = sup_diff(&next, &psi);
        psi = next;
        iterations += 1;
        corrections.push(corr);
        let scale = 1.0 + sup_norm(&psi);
        if corr <= 1e-16 * scale || iterations >= PICARD_MAX_ITER {
            break;
        }
        // stagnation at round-off level
        if corr <= 1e-14 * scale && corrections.len() >= 2 && corr >= corrections[corrections.len() - 2] {
            break;
        }
    }
    let fixed_point_residual = sup_diff(&apply_operator(&seq, data, start, &psi), &psi);
    let kappa = seq.mu.max(seq.decay_rate);
    let tail_bound =
        seq.decay_constant(n) * kappa.powi((n + t as i64) as i32) * sup_norm(&psi) / (1.0 - kappa);
    Ok(BoundedSeqSolution {
        data: *data,
        start,
        truncation: t,
        psi,
        iterations,
        fixed_point_residual,
        lipschitz,
        corrections,
        tail_bound,
    })
}

/// Largest |ζ_{n+1} − L_n ζ_n| over the stored interior steps, evaluated in
/// the original coordinates.
pub fn stepwise_residual(seq: &LinearizationSequence, sol: &BoundedSeqSolution) -> f64 {
    let range: Vec<i64> = sol.index_range().collect();
    range
        .windows(2)
        .map(|w| {
            let l = seq.matrix(w[0]).expect("index inside the sequence");
            (sol.zeta_at(w[1], seq.alpha) - l * sol.zeta_at(w[0], seq.alpha)).amax()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearityReport {
    pub relation_i: f64,
    pub relation_ii: f64,
    pub relation_iii: f64,
    pub samples: usize,
}

impl LinearityReport {
    pub fn max_violation(&self) -> f64 {
        self.relation_i.max(self.relation_ii).max(self.relation_iii)
    }
}

pub fn verify_linearity<R: Rng>(
    seq: &LinearizationSequence,
    n: usize,
    t: usize,
    samples: usize,
    rng: &mut R,
) -> Result<LinearityReport> {
    let solve = |xi0: f64, chi: Vector2<f64>| -> Result<Vec<Vec4>> {
        let data = BvpBoundaryData { direction: Direction::Forward, n, hyperbolic: xi0, chi };
        Ok(solve_bvp(seq, &data, t)?.psi)
    };
    let comb = |terms: &[(f64, &Vec<Vec4>)]| -> Vec<Vec4> {
        let len = terms[0].1.len();
        (0..len).map(|i| terms.iter().fold(Vec4::zeros(), |acc, (c, v)| acc + v[i] * *c)).collect()
    };
    let z = Vector2::zeros();
    let mut rep = LinearityReport { relation_i: 0.0, relation_ii: 0.0, relation_iii: 0.0, samples };
    for _ in 0..samples {
        let x1: f64 = rng.gen_range(-1.0..1.0);
        let x2: f64 = rng.gen_range(-1.0..1.0);
        let c1 = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let c2 = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let a: f64 = rng.gen_range(-2.0..2.0);
        let b: f64 = rng.gen_range(-2.0..2.0);
        let s1 = solve(x1, c1)?;
        let s2 = solve(x2, z)?;
        let s12 = solve(x1 + x2, c1)?;
        rep.relation_i = rep.relation_i.max(sup_norm(&comb(&[(1.0, &s1), (1.0, &s2), (-1.0, &s12)])));
        let p1 = solve(x1, z)?;
        let pab = solve(a * x1 + b * x2, z)?;
        rep.relation_ii = rep.relation_ii.max(sup_norm(&comb(&[(1.0, &pab), (-a, &p1), (-b, &s2)])));
        let q1 = solve(0.0, c1)?;
        let q2 = solve(0.0, c2)?;
        let qab = solve(0.0, c1 * a + c2 * b)?;
        rep.relation_iii = rep.relation_iii.max(sup_norm(&comb(&[(1.0, &qab), (-a, &q1), (-b, &q2)])));
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameConvention {
    /// Asymptotic phases read at the gluing pair (q₋, q₊).
    Gluing,
    /// Phases co-rotating with the reference indices ±N.
    CoRotating,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScatteringMap {
    /// Matrix in the gluing frame (N-independent for exact models).
    pub a: Matrix2<f64>,
    /// Matrix between the co-rotating frames at −N and N.
    pub a_corotating: Matrix2<f64>,
    pub frame: FrameConvention,
    pub n: usize,
    pub truncation: usize,
    pub det_residual: f64,
    pub max_lipschitz: f64,
    /// Smallest singular value ratio of the line/3-space intersection system.
    pub intersection_conditioning: f64,
}

impl ScatteringMap {
    pub fn from_matrix(a: Matrix2<f64>) -> Self {
        ScatteringMap {
            a,
            a_corotating: a,
            frame: FrameConvention::Gluing,
            n: 0,
            truncation: 0,
            det_residual: (a.determinant() - 1.0).abs(),
            max_lipschitz: 0.0,
            intersection_conditioning: 1.0,
        }
    }

    pub fn matrix(&self, frame: FrameConvention) -> Matrix2<f64> {
        match frame {
            FrameConvention::Gluing => self.a,
            FrameConvention::CoRotating => self.a_corotating,
        }
    }
}

fn solve_intersection(cols: [Vec4; 4], rhs: &Vec4) -> Result<(Vec4, f64)> {
    let m = Mat4::from_columns(&cols);
    let sv = m.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smax > 0.0 { smin / smax } else { 0.0 };
    if cond < 1e-14 {
        return Err(Error::TransversalityFailure(format!("transported line parallel to the bounded 3-space (ratio {cond:e})")));
    }
    let x = m.lu().solve(rhs).ok_or_else(|| Error::TransversalityFailure("singular intersection system".into()))?;
    Ok((x, cond))
}

/// Scattering matrix from a linearization sequence whose gluing step sits at
/// index `gluing_index` (q₋ = q_{gluing_index}).
pub fn scattering_from_sequence(
    seq: &LinearizationSequence,
    n: usize,
    t: usize,
    gluing_index: i64,
) -> Result<ScatteringMap> {
    let ni = n as i64;
    let alpha = seq.alpha;
    let back = |eta0: f64, chi: Vector2<f64>| {
        solve_bvp(seq, &BvpBoundaryData { direction: Direction::Backward, n, hyperbolic: eta0, chi }, t)
    };
    let fwd = |xi0: f64, chi: Vector2<f64>| {
        solve_bvp(seq, &BvpBoundaryData { direction: Direction::Forward, n, hyperbolic: xi0, chi }, t)
    };
    let e1 = Vector2::new(1.0, 0.0);
    let e2 = Vector2::new(0.0, 1.0);
    let b_eta = back(1.0, Vector2::zeros())?;
    let b1 = back(0.0, e1)?;
    let b2 = back(0.0, e2)?;
    let f_xi = fwd(1.0, Vector2::zeros())?;
    let f1 = fwd(0.0, e1)?;
    let f2 = fwd(0.0, e2)?;
    let mut transport = Mat4::identity();
    for k in -ni..ni {
        transport = seq.matrix(k).ok_or_else(|| Error::InvalidParameters("orbit too short for 2N steps".into()))? * transport;
    }
    let line_dir = transport * b_eta.zeta_at(-ni, alpha);
    let basis = [f_xi.zeta_at(ni, alpha), f1.zeta_at(ni, alpha), f2.zeta_at(ni, alpha)];
    let mut a_co = Matrix2::zeros();
    let mut conditioning: f64 = 1.0;
    for (col, bs) in [b1.clone(), b2.clone()].iter().enumerate() {
        let rhs = transport * bs.zeta_at(-ni, alpha);
        let (x, cond) = solve_intersection([-line_dir, basis[0], basis[1], basis[2]], &rhs)?;
        conditioning = conditioning.min(cond);
        a_co[(0, col)] = x[2];
        a_co[(1, col)] = x[3];
    }
    let steps_in = gluing_index + ni;
    let steps_out = ni - (gluing_index + 1);
    let a = rotation(-(steps_out as f64) * alpha) * a_co * rotation(-(steps_in as f64) * alpha);
    let max_lipschitz = [&b_eta, &b1, &b2, &f_xi, &f1, &f2].iter().map(|s| s.lipschitz).fold(0.0, f64::max);
    Ok(ScatteringMap {
        a,
        a_corotating: a_co,
        frame: FrameConvention::Gluing,
        n,
        truncation: t,
        det_residual: (a.determinant() - 1.0).abs(),
        max_lipschitz,
        intersection_conditioning: conditioning,
    })
}

/// Builds S for the model; `t = None` selects the truncation adaptively and
/// the orbit is extended when it is too short.
pub fn build_scattering_map(model: &MapModel, orbit: &HomoclinicOrbit, n: usize, t: Option<usize>) -> Result<ScatteringMap> {
    let mut seq = linearize_along_orbit(model, orbit)?;
    let t = t.unwrap_or_else(|| choose_truncation(&seq, n));
    let needed = n + t + 1;
    if orbit.n_max < needed {
        let longer = assemble_homoclinic_orbit(model, needed)?;
        seq = linearize_along_orbit(model, &longer)?;
    }
    let s = scattering_from_sequence(&seq, n, t, orbit.gluing_index)?;
    if s.det_residual > 1e-8 {
        return Err(Error::NonSymplecticJacobian { residual: s.det_residual, tol: 1e-8 });
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransversalityReport {
    pub d11: f64,
    /// det[e_x | L e_y | e_u | e_v].
    pub direct_determinant: f64,
    /// Δ assembled from the canonical blocks of L = Df^{2N}.
    pub delta: f64,
    pub identity_error: f64,
    pub blocks: BlockIdentityReport,
    pub pass: bool,
}

/// Δ from the block entries; equals d₁₁² for symplectic L.
pub fn transversality_delta(jac: &Jacobian4) -> f64 {
    let [a, b, c, d] = jac.blocks();
    let (a22, b21, b22) = (a[(1, 1)], b[(1, 0)], b[(1, 1)]);
    let (c12, c22) = (c[(0, 1)], c[(1, 1)]);
    let (d11, d12, d21, d22) = (d[(0, 0)], d[(0, 1)], d[(1, 0)], d[(1, 1)]);
    (d11 * a22 - b21 * c12) * (d22 * d11 - d21 * d12) - (b22 * d11 - b21 * d12) * (d11 * c22 - d21 * c12)
}

pub fn transversality_of_matrix(l: &Mat4) -> Result<TransversalityReport> {
    let jac = Jacobian4(*l);
    let d11 = jac.blocks()[3][(0, 0)];
    let mut cols = Mat4::identity();
    cols.set_column(1, &(l * Vec4::new(0.0, 1.0, 0.0, 0.0)));
    let direct_determinant = cols.determinant();
    let delta = transversality_delta(&jac);
    let identity_error = (delta - d11 * d11).abs();
    let scale = max_abs(l).max(1.0);
    let blocks = check_symplectic_block_identities(&jac, 1e-10 * scale * scale);
    let pass = d11.abs() > TOL_TRANS && identity_error <= 1e-8 * (1.0 + d11 * d11);
    let rep = TransversalityReport { d11, direct_determinant, delta, identity_error, blocks, pass };
    if d11.abs() <= TOL_TRANS {
        return Err(Error::TransversalityFailure(format!("d11 = {d11:e}")));
    }
    Ok(rep)
}

pub fn check_transversality(model: &MapModel, orbit: &HomoclinicOrbit, n: usize) -> Result<TransversalityReport> {
    let ni = n as i64;
    if orbit.n_max < n {
        return Err(Error::InvalidParameters("orbit shorter than N".into()));
    }
    let mut l = Mat4::identity();
    for k in -ni..ni {
        l = model.jacobian_at(&orbit.point(k)) * l;
    }
    transversality_of_matrix(&l)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenericityClass {
    Generic,
    DegenerateRotation,
    NearDegenerate,
}

impl GenericityClass {
    pub fn label(self) -> &'static str {
        match self {
            GenericityClass::Generic => "generic",
            GenericityClass::DegenerateRotation => "degenerate-rotation",
            GenericityClass::NearDegenerate => "near-degenerate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenericityReport {
    pub class: GenericityClass,
    pub roots: Vec<f64>,
    pub derivatives: Vec<f64>,
    /// Smallest angle between the unit circle and its image at a root.
    pub min_angle: f64,
    pub max_abs_residual: f64,
    pub min_abs_residual: f64,
    pub matrix: Matrix2<f64>,
}

/// ρ(θ) = |A(cos θ, sin θ)|² − 1.
pub fn genericity_residual(a: &Matrix2<f64>, theta: f64) -> f64 {
    (a * Vector2::new(theta.cos(), theta.sin())).norm_squared() - 1.0
}

fn genericity_derivative(a: &Matrix2<f64>, theta: f64) -> f64 {
    let c = Vector2::new(theta.cos(), theta.sin());
    let dc = Vector2::new(-theta.sin(), theta.cos());
    2.0 * (a * dc).dot(&(a * c))
}

pub const GENERICITY_GRID: usize = 4096;

pub fn check_genericity(s: &ScatteringMap) -> GenericityReport {
    genericity_of_matrix(&s.a)
}

pub fn genericity_of_matrix(a: &Matrix2<f64>) -> GenericityReport {
    let grid: Vec<f64> = (0..GENERICITY_GRID).map(|i| 2.0 * PI * i as f64 / GENERICITY_GRID as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|t| genericity_residual(a, *t)).collect();
    let max_abs_residual = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min_abs_residual = vals.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let mut roots = Vec::new();
    if max_abs_residual > 1e-12 {
        for i in 0..GENERICITY_GRID {
            let (t0, v0) = (grid[i], vals[i]);
            let (t1, v1) = if i + 1 < GENERICITY_GRID { (grid[i + 1], vals[i + 1]) } else { (2.0 * PI, vals[0]) };
            if v0 == 0.0 {
                roots.push(t0);
                continue;
            }
            if v0 * v1 < 0.0 {
                let (mut lo, mut hi, mut flo) = (t0, t1, v0);
                while hi - lo > 1e-12 {
                    let mid = 0.5 * (lo + hi);
                    let fm = genericity_residual(a, mid);
                    if fm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if (fm < 0.0) == (flo < 0.0) {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
        }
    }
    let derivatives: Vec<f64> = roots.iter().map(|t| genericity_derivative(a, *t)).collect();
    let min_angle = roots
        .iter()
        .map(|t| {
            let c = Vector2::new(t.cos(), t.sin());
            let p = a * c;
            let tangent_img = a * Vector2::new(-t.sin(), t.cos());
            let tangent_circle = Vector2::new(-p[1], p[0]);
            let cosang = (tangent_img.dot(&tangent_circle) / (tangent_img.norm() * tangent_circle.norm())).abs().min(1.0);
            cosang.acos()
        })
        .fold(f64::INFINITY, f64::min);
    let class = if max_abs_residual <= 1e-12 {
        GenericityClass::DegenerateRotation
    } else if roots.len() == 4 && derivatives.iter().all(|d| d.abs() > TOL_ROOT) && min_abs_residual >= 0.0 {
        GenericityClass::Generic
    } else {
        GenericityClass::NearDegenerate
    };
    GenericityReport {
        class,
        roots,
        derivatives,
        min_angle: if min_angle.is_finite() { min_angle } else { 0.0 },
        max_abs_residual,
        min_abs_residual,
        matrix: *a,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::{build_model, default_global_matrix, GlobalMapSpec, LocalModelParams};
    use rand::SeedableRng;

    #[test]
    fn derotation_of_pure_rotation_is_identity() {
        let lam = saddle_center_matrix(0.5, 1.0);
        let seq = LinearizationSequence::from_matrices(-5, vec![lam; 10], 0.5, 1.0).unwrap();
        let d = seq.derotate(2);
        assert!(d.h_blocks.iter().all(|h| h.amax() == 0.0));
        assert!((d.derotated_limit_center(3) - Matrix2::identity()).amax() < 1e-15);
        assert_eq!(d.derotate(2), d);
    }

    #[test]
    fn zero_coupling_solution() {
        let lam = saddle_center_matrix(0.5, 1.0);
        let seq = LinearizationSequence::from_matrices(-20, vec![lam; 40], 0.5, 1.0).unwrap();
        let data = BvpBoundaryData { direction: Direction::Forward, n: 4, hyperbolic: 2.0, chi: Vector2::new(0.3, -0.1) };
        let sol = solve_bvp(&seq, &data, 10).unwrap();
        for (i, p) in sol.psi.iter().enumerate() {
            assert!((p[0] - 2.0 * 0.5f64.powi(i as i32)).abs() < 1e-15);
            assert_eq!(p[1], 0.0);
            assert_eq!((p[2], p[3]), (0.3, -0.1));
        }
    }

    #[test]
    fn synthetic_bvp_and_linearity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let seq = synthetic_sequence(0.5, 1.0, 60, 0.5, 0.8, &mut rng).unwrap();
        let data = BvpBoundaryData { direction: Direction::Forward, n: 8, hyperbolic: 0.7, chi: Vector2::new(1.0, 0.5) };
        let sol = solve_bvp(&seq, &data, 40).unwrap();
        assert!(sol.lipschitz < 1.0);
        assert!(stepwise_residual(&seq, &sol) < 1e-10);
        let back = BvpBoundaryData { direction: Direction::Backward, ..data };
        let sol = solve_bvp(&seq, &back, 40).unwrap();
        assert!(stepwise_residual(&seq, &sol) < 1e-10);
        let rep = verify_linearity(&seq, 8, 40, 5, &mut rng).unwrap();
        assert!(rep.max_violation() < 1e-10);
    }

    #[test]
    fn scattering_of_uncoupled_model_is_global_block() {
        let b = Matrix2::new(1.5, 0.0, 0.0, 1.0 / 1.5);
        let params = LocalModelParams { eps_pert: 0.0, ..LocalModelParams::demo() };
        let spec = GlobalMapSpec { m: default_global_matrix(1.0, &b, 0.0), ..GlobalMapSpec::demo() };
        let model = build_model(params, spec, 0.3).unwrap();
        let orbit = assemble_homoclinic_orbit(&model, 40).unwrap();
        let s = build_scattering_map(&model, &orbit, 4, None).unwrap();
        assert!((s.a - b).amax() < 1e-12, "{}", s.a);
        assert!(s.det_residual < 1e-12);
    }

    #[test]
    fn demo_scattering_and_transversality() {
        let model = MapModel::demo();
        let orbit = assemble_homoclinic_orbit(&model, 60).unwrap();
        let s = build_scattering_map(&model, &orbit, 4, None).unwrap();
        assert!(s.det_residual < 1e-8);
        assert_eq!(check_genericity(&s).class, GenericityClass::Generic);
        let t = check_transversality(&model, &orbit, 4).unwrap();
        assert!(t.pass && t.blocks.pass, "{t:?}");
        assert!((t.direct_determinant - t.d11).abs() <= 1e-12 * t.d11.abs());
    }

    #[test]
    fn genericity_classes() {
        let r = genericity_of_matrix(&rotation(0.7));
        assert_eq!(r.class, GenericityClass::DegenerateRotation);
        let d = genericity_of_matrix(&Matrix2::new(1.5, 0.0, 0.0, 2.0 / 3.0));
        assert_eq!(d.class, GenericityClass::Generic);
        let t0 = (4.0f64 / 13.0).sqrt().acos();
        let expected = [t0, PI - t0, PI + t0, 2.0 * PI - t0];
        for (r, e) in d.roots.iter().zip(expected) {
            assert!((r - e).abs() < 1e-9);
        }
    }
}
