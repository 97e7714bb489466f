//! End-to-end run: build → fixed point → homoclinic → scattering →
//! genericity → KAM scan → Σ traces → intersections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::RunConfig;
use crate::center_dynamics::{detect_kam_curves, restrict_to_center, CenterMap, KamCurve};
use crate::error::{Error, Result};
use crate::fixed_point_analysis::{classify_spectrum, extract_normal_form, find_fixed_point, NormalFormCoeffs, Spectrum1Elliptic};
use crate::homoclinic::{assemble_homoclinic_orbit, HomoclinicOrbit, Side};
use crate::model_zoo::{assemble_model, build_local_map_deferred, check_strong_resonance, GlobalMapSpec, MapModel, TOL_RES};
use crate::scattering::{
    build_scattering_map, check_genericity, check_transversality, linearize_along_orbit, verify_linearity, GenericityClass,
    GenericityReport, LinearityReport, ScatteringMap, TransversalityReport,
};
use crate::sigma_analysis::{
    build_sigma_disk, count_with_tolerances, enclosed_action, hausdorff_distance, trace_manifold_on_sigma, IntersectionReport,
    SigmaDisk, TraceCurve,
};
use crate::symplectic_core::{PhasePoint, SmoothMap4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Build,
    FixedPoint,
    Homoclinic,
    Scattering,
    Genericity,
    KamScan,
    SigmaTraces,
    Intersections,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Build,
        Stage::FixedPoint,
        Stage::Homoclinic,
        Stage::Scattering,
        Stage::Genericity,
        Stage::KamScan,
        Stage::SigmaTraces,
        Stage::Intersections,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Build => "build",
            Stage::FixedPoint => "fixed-point",
            Stage::Homoclinic => "homoclinic",
            Stage::Scattering => "scattering",
            Stage::Genericity => "genericity",
            Stage::KamScan => "kam-scan",
            Stage::SigmaTraces => "sigma-traces",
            Stage::Intersections => "intersections",
        }
    }

    pub fn from_name(s: &str) -> Option<Stage> {
        Stage::ALL.iter().copied().find(|st| st.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StageStatus {
    Ok,
    Failed(String),
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveTraces {
    pub stable: TraceCurve,
    pub unstable: TraceCurve,
    pub area_stable: f64,
    pub area_unstable: f64,
    pub hausdorff: f64,
}

impl CurveTraces {
    pub fn relative_area_gap(&self) -> f64 {
        (self.area_stable - self.area_unstable).abs() / self.area_stable
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcceptanceLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct PipelineReport {
    pub stages: Vec<(Stage, StageStatus)>,
    pub fixed_point: Option<PhasePoint>,
    pub spectrum: Option<Spectrum1Elliptic>,
    pub normal_form: Option<NormalFormCoeffs>,
    pub orbit: Option<HomoclinicOrbit>,
    pub transversality: Option<TransversalityReport>,
    pub scattering: Option<ScatteringMap>,
    pub linearity: Option<LinearityReport>,
    pub genericity: Option<GenericityReport>,
    pub kam: Vec<KamCurve>,
    pub sigma: Option<SigmaDisk>,
    pub traces: Vec<CurveTraces>,
    pub intersections: Vec<IntersectionReport>,
    pub checks: Vec<AcceptanceLine>,
}

impl PipelineReport {
    pub fn status(&self, stage: Stage) -> StageStatus {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, st)| st.clone()).unwrap_or(StageStatus::Skipped)
    }

    pub fn all_checks_pass(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }
}

struct Context {
    model: Option<MapModel>,
    center: Option<CenterMap>,
}

fn check(report: &mut PipelineReport, name: &str, pass: bool, detail: String) {
    report.checks.push(AcceptanceLine { name: name.into(), pass, detail });
}

fn run_stage(cfg: &RunConfig, stage: Stage, ctx: &mut Context, report: &mut PipelineReport) -> Result<()> {
    match stage {
        Stage::Build => {
            let local = build_local_map_deferred(cfg.params)?;
            let spec = GlobalMapSpec { x0: cfg.x0, y1: cfg.y1, m: cfg.m };
            ctx.model = Some(assemble_model(local, spec, cfg.gluing_radius)?);
        }
        Stage::FixedPoint => {
            let model = ctx.model.as_ref().expect("build precedes fixed point");
            let p = find_fixed_point(&model.local, PhasePoint::origin())?;
            let spectrum = classify_spectrum(&model.local.jacobian_at(&p))?;
            check_strong_resonance(spectrum.alpha, TOL_RES)?;
            let nf = extract_normal_form(&model.local, &spectrum)?;
            if !nf.twist_certified() {
                return Err(Error::ZeroTwist);
            }
            report.fixed_point = Some(p);
            report.spectrum = Some(spectrum);
            report.normal_form = Some(nf);
        }
        Stage::Homoclinic => {
            let model = ctx.model.as_ref().expect("model built");
            let orbit = assemble_homoclinic_orbit(model, cfg.n_max)?;
            let tr = check_transversality(model, &orbit, cfg.n)?;
            check(report, "transversality", tr.pass, format!("d11 = {:.6e}, |Δ − d11²| = {:.3e}", tr.d11, tr.identity_error));
            report.transversality = Some(tr);
            report.orbit = Some(orbit);
        }
        Stage::Scattering => {
            let model = ctx.model.as_ref().expect("model built");
            let orbit = report.orbit.as_ref().expect("orbit assembled");
            let s = build_scattering_map(model, orbit, cfg.n, cfg.t)?;
            let seq = linearize_along_orbit(model, orbit)?;
            let t_lin = s.truncation.min(orbit.n_max - cfg.n - 1);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let lin = verify_linearity(&seq, cfg.n, t_lin, cfg.linearity_samples, &mut rng)?;
            check(report, "scattering-det", s.det_residual <= 1e-8, format!("|det A − 1| = {:.3e}", s.det_residual));
            check(report, "linearity", lin.max_violation() <= 1e-10, format!("max violation {:.3e}", lin.max_violation()));
            report.scattering = Some(s);
            report.linearity = Some(lin);
        }
        Stage::Genericity => {
            let g = check_genericity(report.scattering.as_ref().expect("scattering built"));
            check(report, "generic", g.class == GenericityClass::Generic, format!("class {}, {} roots", g.class.label(), g.roots.len()));
            report.genericity = Some(g);
        }
        Stage::KamScan => {
            let model = ctx.model.as_ref().expect("model built");
            let mut cm = restrict_to_center(model)?;
            cm.epsilon = cfg.epsilon;
            report.kam = detect_kam_curves(&cm, &cfg.action_grid(), &cfg.kam);
            let n_q = report.kam.iter().filter(|c| c.is_quasiperiodic()).count();
            check(report, "kam-curves", n_q > 0, format!("{n_q} of {} actions quasiperiodic", report.kam.len()));
            ctx.center = Some(cm);
        }
        Stage::SigmaTraces => {
            let model = ctx.model.as_ref().expect("model built");
            let cm = ctx.center.as_ref().expect("center restricted");
            let orbit = report.orbit.as_ref().expect("orbit assembled");
            let disk = build_sigma_disk(model, orbit, 0.9 * cfg.gluing_radius)?;
            let curves: Vec<&KamCurve> = report.kam.iter().filter(|c| c.is_quasiperiodic()).collect();
            let traces: Vec<CurveTraces> = curves
                .par_iter()
                .map(|gamma| -> Result<CurveTraces> {
                    let stable = trace_manifold_on_sigma(model, cm, &disk, gamma, Side::Stable, cfg.trace_vertices)?;
                    let unstable = trace_manifold_on_sigma(model, cm, &disk, gamma, Side::Unstable, cfg.trace_vertices)?;
                    let area_stable = enclosed_action(&stable)?;
                    let area_unstable = enclosed_action(&unstable)?;
                    let hausdorff = hausdorff_distance(&stable.points, &unstable.points);
                    Ok(CurveTraces { stable, unstable, area_stable, area_unstable, hausdorff })
                })
                .collect::<Result<_>>()?;
            let worst = traces.iter().map(|t| t.relative_area_gap()).fold(0.0, f64::max);
            check(report, "equal-action", worst <= cfg.tol_action, format!("max relative area gap {worst:.3e}"));
            report.sigma = Some(disk);
            report.traces = traces;
        }
        Stage::Intersections => {
            let g = report.genericity.as_ref().expect("genericity classified");
            let reps: Vec<IntersectionReport> = report
                .traces
                .iter()
                .map(|t| count_with_tolerances(&t.stable, &t.unstable, g, cfg.tol_angle, cfg.tol_match))
                .collect::<Result<_>>()?;
            if g.class == GenericityClass::Generic {
                let ok = reps.iter().all(|r| r.count() == 4 && r.all_matched);
                check(report, "four-crossings", ok, format!("counts {:?}", reps.iter().map(|r| r.count()).collect::<Vec<_>>()));
            } else {
                let ok = reps.iter().all(|r| r.degenerate_overlap);
                check(report, "coinciding-traces", ok, format!("{} of {} traces coincide", reps.iter().filter(|r| r.degenerate_overlap).count(), reps.len()));
            }
            report.intersections = reps;
        }
    }
    Ok(())
}

/// Runs the stages up to and including `last`. Returns the partial report
/// together with the stage-tagged error that halted it, if any.
pub fn run_pipeline_until(cfg: &RunConfig, stages: &[Stage]) -> (PipelineReport, Option<Error>) {
    let mut report = PipelineReport::default();
    let mut ctx = Context { model: None, center: None };
    let mut halted: Option<Error> = None;
    for &stage in &Stage::ALL {
        if halted.is_some() || !stages.contains(&stage) {
            report.stages.push((stage, StageStatus::Skipped));
            continue;
        }
        match run_stage(cfg, stage, &mut ctx, &mut report) {
            Ok(()) => report.stages.push((stage, StageStatus::Ok)),
            Err(e) => {
                report.stages.push((stage, StageStatus::Failed(e.to_string())));
                halted = Some(e.at_stage(stage.name()));
            }
        }
    }
    (report, halted)
}

/// Stages needed to reach `target`.
pub fn stages_through(target: Stage) -> Vec<Stage> {
    let needs: &[Stage] = match target {
        Stage::KamScan => &[Stage::Build, Stage::FixedPoint, Stage::KamScan],
        _ => &Stage::ALL,
    };
    needs.iter().copied().filter(|s| *s <= target).collect()
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineReport> {
    match run_pipeline_until(cfg, &Stage::ALL) {
        (report, None) => Ok(report),
        (_, Some(e)) => Err(e),
    }
}
