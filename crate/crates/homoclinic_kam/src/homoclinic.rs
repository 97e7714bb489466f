//! One-dimensional stable and unstable curves of the saddle-center point, the
//! discrete homoclinic orbit of a glued model and the settle index N.

use crate::error::{Error, Result};
use crate::fixed_point_analysis::{classify_spectrum, Spectrum1Elliptic};
use crate::model_zoo::MapModel;
use crate::symplectic_core::{apply, PhasePoint, SmoothMap4, Vec4};

pub const TOL_MFLD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Stable,
    Unstable,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Stable => "stable",
            Side::Unstable => "unstable",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvariantCurve1D {
    pub side: Side,
    pub points: Vec<PhasePoint>,
    pub arclength: Vec<f64>,
    /// Distances from p of the seed fundamental domain [δ, δ/μ).
    pub fundamental_domain: (f64, f64),
    /// Largest mismatch between consecutive images of the fundamental domain.
    pub tiling_gap: f64,
    /// Angle between the first chord and the linear eigendirection.
    pub tangent_error: f64,
    /// Largest distance of a sample from the coordinate axis of its side.
    pub off_axis: f64,
}

const SEED_DELTA: f64 = 1e-6;
const SAMPLES_PER_DOMAIN: usize = 32;

/// Continues a 1-D invariant curve of the fixed point `p` of any map, by
/// iterating a linear fundamental domain (forward on the unstable side,
/// backward on the stable side) until the requested arclength is reached.
pub fn continue_curve_of_map(
    map: &dyn SmoothMap4,
    p: &PhasePoint,
    spectrum: &Spectrum1Elliptic,
    side: Side,
    length: f64,
) -> Result<InvariantCurve1D> {
    let col = match side {
        Side::Stable => 0,
        Side::Unstable => 1,
    };
    let dir: Vec4 = spectrum.basis.column(col).normalize();
    let ratio = 1.0 / spectrum.mu;
    let step = |q: &PhasePoint| -> Result<PhasePoint> {
        match side {
            Side::Unstable => apply(map, q),
            Side::Stable => {
                let r = map.inverse_eval(q)?;
                if !map.domain().contains(&r) {
                    return Err(Error::DomainEscape(format!("{} preimage {r:?}", map.name())));
                }
                Ok(r)
            }
        }
    };
    let seeds: Vec<PhasePoint> = (0..=SAMPLES_PER_DOMAIN)
        .map(|i| {
            let s = SEED_DELTA * ratio.powf(i as f64 / SAMPLES_PER_DOMAIN as f64);
            PhasePoint::from_vec(&(p.to_vec() + dir * s))
        })
        .collect();
    let mut domain = seeds.clone();
    let mut points = vec![*p];
    let mut arclength = vec![0.0];
    let mut tiling_gap: f64 = 0.0;
    let mut total = 0.0;
    'outer: for _ in 0..400 {
        for q in &domain[..SAMPLES_PER_DOMAIN] {
            total += q.dist(points.last().unwrap());
            points.push(*q);
            arclength.push(total);
            if total >= length {
                break 'outer;
            }
        }
        let next: Vec<PhasePoint> = domain.iter().map(step).collect::<Result<_>>()?;
        tiling_gap = tiling_gap.max(next[0].dist(&domain[SAMPLES_PER_DOMAIN]));
        domain = next;
    }
    if total < length {
        return Err(Error::DomainEscape(format!("curve did not reach arclength {length}")));
    }
    let chord = (points[1].to_vec() - p.to_vec()).normalize();
    let tangent_error = chord.dot(&dir).abs().min(1.0).acos();
    let off_axis = points
        .iter()
        .map(|q| {
            let d = q.to_vec() - p.to_vec();
            match side {
                Side::Unstable => d[0].abs().max(d[2].abs()).max(d[3].abs()),
                Side::Stable => d[1].abs().max(d[2].abs()).max(d[3].abs()),
            }
        })
        .fold(0.0, f64::max);
    Ok(InvariantCurve1D {
        side,
        points,
        arclength,
        fundamental_domain: (SEED_DELTA, SEED_DELTA * ratio),
        tiling_gap,
        tangent_error,
        off_axis,
    })
}

/// Curve of the model's local map through the origin.
pub fn continue_manifold_curve(model: &MapModel, side: Side, length: f64) -> Result<InvariantCurve1D> {
    let p = PhasePoint::origin();
    let spectrum = classify_spectrum(&model.local.jacobian_at(&p))?;
    continue_curve_of_map(&model.local, &p, &spectrum, side, length)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    /// Fitted geometric rate of ‖qₙ − p‖ along the tail.
    pub rate: f64,
    /// Smallest C with ‖qₙ − p‖ ≤ C·rate^{|n|} on the fitted tail.
    pub constant: f64,
    /// Largest deviation of log‖qₙ − p‖ from the fitted line.
    pub log_residual: f64,
}

/// Least-squares fit of log d against n on the second half of the samples.
pub fn fit_decay(ns: &[f64], dists: &[f64]) -> Result<DecayFit> {
    let start = ns.len() / 2;
    let pts: Vec<(f64, f64)> = ns[start..]
        .iter()
        .zip(&dists[start..])
        .filter(|(_, d)| **d > 0.0 && d.is_finite())
        .map(|(n, d)| (*n, d.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::DecayFitFailure("fewer than two positive tail samples".into()));
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DecayFitFailure("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rate = slope.exp();
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::DecayFitFailure(format!("fitted rate {rate} not in (0, 1)")));
    }
    let log_residual = pts.iter().map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    let constant = ns
        .iter()
        .zip(dists)
        .map(|(n, d)| d / rate.powf(*n))
        .fold(0.0, f64::max);
    Ok(DecayFit { rate, constant, log_residual })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomoclinicOrbit {
    /// Points q_{−n_max} … q_{n_max}.
    pub points: Vec<PhasePoint>,
    pub n_max: usize,
    pub fixed_point: PhasePoint,
    /// Index of the anchor q₋ (the global map is applied from here).
    pub gluing_index: i64,
    pub forward_fit: DecayFit,
    pub backward_fit: DecayFit,
    /// Largest |f(qₙ) − q_{n+1}| over stored indices.
    pub step_residual: f64,
}

impl HomoclinicOrbit {
    pub fn point(&self, n: i64) -> PhasePoint {
        self.points[(n + self.n_max as i64) as usize]
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        let m = self.n_max as i64;
        -m..=m
    }

    pub fn distance(&self, n: i64) -> f64 {
        self.point(n).dist(&self.fixed_point)
    }

    /// Slowest of the two fitted tail rates.
    pub fn decay_rate(&self) -> f64 {
        self.forward_fit.rate.max(self.backward_fit.rate)
    }
}

pub fn assemble_homoclinic_orbit(model: &MapModel, n_max: usize) -> Result<HomoclinicOrbit> {
    if n_max < 2 {
        return Err(Error::InvalidParameters("n_max must be at least 2".into()));
    }
    let spec = model.spec();
    let dom = model.domain();
    let mut forward = vec![spec.q_plus()];
    for _ in 0..n_max {
        let q = apply(model, forward.last().unwrap())?;
        forward.push(q);
    }
    let mut backward = vec![spec.q_minus()];
    for _ in 1..n_max {
        let q = model.local.inverse_eval(backward.last().unwrap())?;
        if !dom.contains(&q) {
            return Err(Error::DomainEscape(format!("backward tail left the domain at {q:?}")));
        }
        backward.push(q);
    }
    let mut points: Vec<PhasePoint> = backward.iter().rev().cloned().collect();
    points.extend(forward);
    let p = PhasePoint::origin();
    let mut step_residual: f64 = 0.0;
    for w in points.windows(2) {
        step_residual = step_residual.max(model.eval(&w[0]).dist(&w[1]));
    }
    let fwd_n: Vec<f64> = (1..=n_max).map(|n| n as f64).collect();
    let fwd_d: Vec<f64> = (1..=n_max).map(|n| points[n_max + n].dist(&p)).collect();
    let bwd_d: Vec<f64> = (1..=n_max).map(|n| points[n_max - n].dist(&p)).collect();
    let forward_fit = fit_decay(&fwd_n, &fwd_d)?;
    let backward_fit = fit_decay(&fwd_n, &bwd_d)?;
    Ok(HomoclinicOrbit {
        points,
        n_max,
        fixed_point: p,
        gluing_index: -1,
        forward_fit,
        backward_fit,
        step_residual,
    })
}

/// Minimal N with ‖qₙ − p‖ ≤ V_radius for all stored |n| ≥ N.
pub fn choose_settle_index(orbit: &HomoclinicOrbit, v_radius: f64) -> Result<usize> {
    let m = orbit.n_max as i64;
    if orbit.distance(m) > v_radius || orbit.distance(-m) > v_radius {
        return Err(Error::NeverSettles);
    }
    let mut n = orbit.n_max;
    while n > 0 {
        let k = (n - 1) as i64;
        if orbit.distance(k) > v_radius || orbit.distance(-k) > v_radius {
            break;
        }
        n -= 1;
    }
    Ok(n)
}

/// Closest approach of two sampled curves: a diagnostic for maps whose
/// homoclinic orbit is not known by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomoclinicDiagnostic {
    pub min_distance: f64,
    pub unstable_point: PhasePoint,
    pub stable_point: PhasePoint,
    pub found: bool,
}

pub fn manifold_distance_diagnostic(
    unstable: &InvariantCurve1D,
    stable: &InvariantCurve1D,
    threshold: f64,
    exclude_radius: f64,
) -> HomoclinicDiagnostic {
    let mut best = (f64::INFINITY, PhasePoint::origin(), PhasePoint::origin());
    let origin_u = unstable.points[0];
    for a in &unstable.points {
        if a.dist(&origin_u) < exclude_radius {
            continue;
        }
        for b in &stable.points {
            if b.dist(&origin_u) < exclude_radius {
                continue;
            }
            let d = a.dist(b);
            if d < best.0 {
                best = (d, *a, *b);
            }
        }
    }
    HomoclinicDiagnostic { min_distance: best.0, unstable_point: best.1, stable_point: best.2, found: best.0 <= threshold }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::{build_model, GlobalMapSpec, LocalModelParams};

    #[test]
    fn axis_curves() {
        let model = MapModel::demo();
        let u = continue_manifold_curve(&model, Side::Unstable, 0.5).unwrap();
        assert_eq!(u.off_axis, 0.0);
        assert!(u.tangent_error < 1e-6 && u.tiling_gap < TOL_MFLD);
        let s = continue_manifold_curve(&model, Side::Stable, 0.5).unwrap();
        assert_eq!(s.off_axis, 0.0);
    }

    #[test]
    fn orbit_decay_and_settle() {
        let model = MapModel::demo();
        let orbit = assemble_homoclinic_orbit(&model, 30).unwrap();
        assert!(orbit.step_residual < 1e-12);
        assert!((orbit.forward_fit.rate - 0.5).abs() < 1e-6);
        assert!((orbit.backward_fit.rate - 0.5).abs() < 1e-6);
        assert!(orbit.points.iter().all(|q| q.u == 0.0 && q.v == 0.0));
        assert_eq!(choose_settle_index(&orbit, 10.0).unwrap(), 0);
        assert_eq!(choose_settle_index(&orbit, 1e-30), Err(Error::NeverSettles));
    }

    #[test]
    fn settle_index_halving() {
        let spec = GlobalMapSpec { y1: 0.4, ..GlobalMapSpec::demo() };
        let model = build_model(LocalModelParams::demo(), spec, 0.2).unwrap();
        let orbit = assemble_homoclinic_orbit(&model, 20).unwrap();
        assert_eq!(choose_settle_index(&orbit, 0.4).unwrap(), 1);
    }
}
