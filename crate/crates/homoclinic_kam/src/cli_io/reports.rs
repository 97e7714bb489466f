//! Report files with fixed schemas. Floats carry 17 significant digits and
//! lines end in LF, so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::pipeline::{PipelineReport, StageStatus};
use crate::error::Result;

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn write(dir: &Path, name: &str, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body)?;
    written.push(path);
    Ok(())
}

pub fn render_summary(report: &PipelineReport, cfg: &RunConfig) -> String {
    let mut s = String::new();
    s.push_str("# configuration\n");
    s.push_str(&cfg.echo_text());
    s.push_str("# stages\n");
    for (stage, status) in &report.stages {
        let st = match status {
            StageStatus::Ok => "ok".to_string(),
            StageStatus::Skipped => "skipped".to_string(),
            StageStatus::Failed(msg) => format!("failed: {msg}"),
        };
        let _ = writeln!(s, "{} {}", stage.name(), st);
    }
    if let Some(sp) = &report.spectrum {
        let _ = writeln!(s, "# fixed point\nalpha {}\nmu {}", f(sp.alpha), f(sp.mu));
    }
    if let Some(nf) = &report.normal_form {
        let _ = writeln!(s, "twist {}", f(nf.nu));
    }
    if let Some(o) = &report.orbit {
        let _ = writeln!(s, "# orbit\nn_max {}\ndecay_rate {}\nstep_residual {}", o.n_max, f(o.decay_rate()), f(o.step_residual));
    }
    if let Some(sc) = &report.scattering {
        let _ = writeln!(s, "# scattering\nN {}\nT {}\ndet_residual {}", sc.n, sc.truncation, f(sc.det_residual));
    }
    if let Some(g) = &report.genericity {
        let _ = writeln!(s, "class {}", g.class.label());
    }
    if !report.kam.is_empty() {
        let n_q = report.kam.iter().filter(|c| c.is_quasiperiodic()).count();
        let _ = writeln!(s, "# kam\ncurves {}\nquasiperiodic {}", report.kam.len(), n_q);
    }
    for (k, t) in report.traces.iter().enumerate() {
        let _ = writeln!(
            s,
            "traces_I{k:02} action {} area_stable {} area_unstable {} hausdorff {}",
            f(t.stable.action),
            f(t.area_stable),
            f(t.area_unstable),
            f(t.hausdorff)
        );
    }
    s.push_str("# checks\n");
    for c in &report.checks {
        let _ = writeln!(s, "{} {} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let _ = writeln!(s, "overall {}", if report.all_checks_pass() { "pass" } else { "fail" });
    s
}

/// Writes every file for which the report holds data and returns the paths.
pub fn emit_reports(report: &PipelineReport, outdir: &Path, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir)?;
    let mut written = Vec::new();

    if let Some(o) = &report.orbit {
        let mut s = String::from("n,x,y,u,v\n");
        for n in o.indices() {
            let p = o.point(n);
            let _ = writeln!(s, "{n},{},{},{},{}", f(p.x), f(p.y), f(p.u), f(p.v));
        }
        write(outdir, "orbit.csv", &s, &mut written)?;
    }

    if let Some(sc) = &report.scattering {
        let a = sc.a;
        let mut s = String::new();
        let _ = writeln!(s, "A {} {} {} {}", f(a[(0, 0)]), f(a[(0, 1)]), f(a[(1, 0)]), f(a[(1, 1)]));
        let _ = writeln!(s, "det_residual {}", f(sc.det_residual));
        let _ = writeln!(s, "N {}\nT {}", sc.n, sc.truncation);
        if let Some(g) = &report.genericity {
            let _ = writeln!(s, "class {}", g.class.label());
            let roots: Vec<String> = g.roots.iter().map(|r| f(*r)).collect();
            let _ = writeln!(s, "roots {}", roots.join(" "));
        }
        write(outdir, "scattering.txt", &s, &mut written)?;
    }

    let mut s = String::from("I,rotation_number,verdict,residual\n");
    for c in &report.kam {
        let _ = writeln!(s, "{},{},{},{}", f(c.action), f(c.rotation_number), c.verdict.label(), f(c.invariance_residual));
    }
    write(outdir, "kam.csv", &s, &mut written)?;

    for (k, t) in report.traces.iter().enumerate() {
        let mut s = String::from("side,theta,u,v\n");
        for curve in [&t.stable, &t.unstable] {
            for (th, p) in curve.thetas.iter().zip(&curve.points) {
                let _ = writeln!(s, "{},{},{},{}", curve.side.label(), f(*th), f(p[0]), f(p[1]));
            }
        }
        write(outdir, &format!("traces_I{k:02}.csv"), &s, &mut written)?;
    }

    if !report.intersections.is_empty() {
        let mut s = String::from("I,count,angles\n");
        for r in &report.intersections {
            let _ = write!(s, "{},{}", f(r.action), r.count());
            for c in &r.crossings {
                let _ = write!(s, ",{}", f(c.angle));
            }
            s.push('\n');
        }
        write(outdir, "intersections.csv", &s, &mut written)?;
    }

    write(outdir, "summary.txt", &render_summary(report, cfg), &mut written)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli_io::config::{demo_config_text, parse_config_str};

    #[test]
    fn empty_kam_list_gives_header_only() {
        let cfg = parse_config_str(demo_config_text()).unwrap();
        let dir = std::env::temp_dir().join(format!("hkam-empty-{}", std::process::id()));
        emit_reports(&PipelineReport::default(), &dir, &cfg).unwrap();
        let kam = fs::read_to_string(dir.join("kam.csv")).unwrap();
        assert_eq!(kam, "I,rotation_number,verdict,residual\n");
        fs::remove_dir_all(&dir).unwrap();
    }
}
