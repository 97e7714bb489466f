//! Line-oriented `key = value` run configuration.

use std::path::{Path, PathBuf};

use nalgebra::Matrix2;

use crate::center_dynamics::KamCriteria;
use crate::error::{Error, Result};
use crate::model_zoo::{default_global_matrix, LocalModelParams};
use crate::symplectic_core::{symplectic_residual, Mat4, TOL_SYMP};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: LocalModelParams,
    pub x0: f64,
    pub y1: f64,
    pub m: Mat4,
    pub gluing_radius: f64,
    pub n: usize,
    pub t: Option<usize>,
    pub n_max: usize,
    pub i_max: f64,
    pub i_count: usize,
    pub epsilon: f64,
    pub trace_vertices: usize,
    pub kam: KamCriteria,
    pub linearity_samples: usize,
    pub tol_angle: f64,
    pub tol_match: f64,
    pub tol_action: f64,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    /// Effective value of every key, with a flag for filled-in defaults.
    pub echo: Vec<(String, String, bool)>,
}

impl RunConfig {
    pub fn action_grid(&self) -> Vec<f64> {
        crate::center_dynamics::annulus_grid(self.i_max, self.i_count)
    }

    pub fn echo_text(&self) -> String {
        let mut out = String::new();
        for (k, v, defaulted) in &self.echo {
            out.push_str(&format!("{k} = {v}{}\n", if *defaulted { "  # default" } else { "" }));
        }
        out
    }
}

const KNOWN_KEYS: &[&str] = &[
    "model.mu",
    "model.alpha",
    "model.a",
    "model.b",
    "model.nu",
    "model.kappa",
    "model.eps_pert",
    "model.h",
    "model.x0",
    "model.y1",
    "model.M",
    "model.sigma",
    "model.B",
    "model.shear",
    "model.gluing_radius",
    "analysis.N",
    "analysis.T",
    "analysis.n_max",
    "analysis.I_max",
    "analysis.I_count",
    "analysis.epsilon",
    "analysis.trace_vertices",
    "analysis.kam_iter",
    "analysis.kam_degree",
    "analysis.linearity_samples",
    "tol.kam",
    "tol.angle",
    "tol.match",
    "tol.action",
    "tol.max_quotient",
    "tol.cf_depth",
    "output.dir",
    "run.seed",
];

struct Entry {
    line: usize,
    column: usize,
    value: String,
}

fn parse_number(text: &str, line: usize, column: usize) -> Result<f64> {
    let t = text.trim();
    let parsed = match t.split_once('/') {
        Some((n, d)) => match (n.trim().parse::<f64>(), d.trim().parse::<f64>()) {
            (Ok(n), Ok(d)) if d != 0.0 => Some(n / d),
            _ => None,
        },
        None => t.parse::<f64>().ok(),
    };
    match parsed {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(Error::ParseError { line, column, message: format!("malformed number '{t}'") }),
    }
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:e}")
    }
}

fn parse_list(e: &Entry) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for piece in e.value.split(|c: char| c == ',' || c.is_whitespace()) {
        if !piece.is_empty() {
            out.push(parse_number(piece, e.line, e.column + offset)?);
        }
        offset += piece.len() + 1;
    }
    Ok(out)
}

/// Parses configuration text and fills in defaults.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut entries: Vec<(String, Entry)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let eq = content.find('=').ok_or_else(|| Error::ParseError {
            line,
            column: content.len() - content.trim_start().len() + 1,
            message: "expected 'key = value'".into(),
        })?;
        let key = content[..eq].trim().to_string();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::ParseError { line, column: 1, message: format!("bad key '{key}'") });
        }
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::ParseError { line, column: content.find(&key).unwrap_or(0) + 1, message: format!("unknown key '{key}'") });
        }
        let rest = &content[eq + 1..];
        let column = eq + 2 + (rest.len() - rest.trim_start().len());
        if entries.iter().any(|(k, _)| *k == key) {
            return Err(Error::ParseError { line, column: 1, message: format!("duplicate key '{key}'") });
        }
        entries.push((key, Entry { line, column, value: rest.trim().to_string() }));
    }
    build_config(&entries)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

struct Lookup<'a> {
    entries: &'a [(String, Entry)],
    echo: Vec<(String, String, bool)>,
}

impl<'a> Lookup<'a> {
    fn get(&self, key: &str) -> Option<&'a Entry> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, e)| e)
    }

    fn num(&mut self, key: &str, default: Option<f64>) -> Result<Option<f64>> {
        match self.get(key) {
            Some(e) => {
                let x = parse_number(&e.value, e.line, e.column)?;
                self.echo.push((key.into(), fmt_num(x), false));
                Ok(Some(x))
            }
            None => {
                if let Some(d) = default {
                    self.echo.push((key.into(), fmt_num(d), true));
                }
                Ok(default)
            }
        }
    }

    fn req(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.num(key, Some(default))?.expect("default supplied"))
    }

    fn count(&mut self, key: &str, default: usize) -> Result<usize> {
        let x = self.req(key, default as f64)?;
        if x < 0.0 || x.fract() != 0.0 {
            let e = self.get(key).expect("non-default value");
            return Err(Error::ParseError { line: e.line, column: e.column, message: format!("{key} must be a non-negative integer") });
        }
        Ok(x as usize)
    }
}

fn build_config(entries: &[(String, Entry)]) -> Result<RunConfig> {
    let mut lk = Lookup { entries, echo: Vec::new() };
    let demo = LocalModelParams::demo();
    let mu = lk.req("model.mu", demo.mu)?;
    let alpha = lk.req("model.alpha", demo.alpha)?;
    let a = lk.req("model.a", demo.a)?;
    let b = lk.req("model.b", demo.b)?;
    let nu = lk.num("model.nu", None)?.ok_or_else(|| Error::ValidationError("twist coefficient required (model.nu)".into()))?;
    let kappa = lk.req("model.kappa", -2.0 * b)?;
    let eps_pert = lk.req("model.eps_pert", demo.eps_pert)?;
    let h = lk.req("model.h", demo.h)?;
    let params = LocalModelParams { mu, alpha, a, b, nu, kappa, eps_pert, h };
    if nu == 0.0 {
        return Err(Error::ValidationError("twist coefficient required (model.nu must be nonzero)".into()));
    }
    params.validate_structure().map_err(|e| Error::ValidationError(e.to_string()))?;
    let x0 = lk.req("model.x0", 0.8)?;
    let y1 = lk.req("model.y1", 0.8)?;
    let gluing_radius = lk.req("model.gluing_radius", 0.3)?;

    let m = if let Some(e) = lk.get("model.M") {
        if ["model.sigma", "model.B", "model.shear"].iter().any(|k| lk.get(k).is_some()) {
            return Err(Error::ValidationError("model.M excludes model.sigma, model.B and model.shear".into()));
        }
        let vals = parse_list(e)?;
        if vals.len() != 16 {
            return Err(Error::ParseError { line: e.line, column: e.column, message: format!("model.M needs 16 values, got {}", vals.len()) });
        }
        lk.echo.push(("model.M".into(), vals.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(", "), false));
        Mat4::from_row_slice(&vals)
    } else {
        let sigma = lk.req("model.sigma", 1.0)?;
        let center = match lk.get("model.B") {
            Some(e) => {
                let vals = parse_list(e)?;
                if vals.len() != 4 {
                    return Err(Error::ParseError { line: e.line, column: e.column, message: format!("model.B needs 4 values, got {}", vals.len()) });
                }
                lk.echo.push(("model.B".into(), vals.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(", "), false));
                Matrix2::from_row_slice(&vals)
            }
            None => {
                lk.echo.push(("model.B".into(), "1.5, 0, 0, 1/1.5".into(), true));
                Matrix2::new(1.5, 0.0, 0.0, 1.0 / 1.5)
            }
        };
        let shear = lk.req("model.shear", 0.0)?;
        if sigma == 0.0 {
            return Err(Error::ValidationError("model.sigma must be nonzero".into()));
        }
        default_global_matrix(sigma, &center, shear)
    };
    let residual = symplectic_residual(&m);
    if residual > TOL_SYMP {
        return Err(Error::ValidationError(format!("global matrix M not symplectic (residual {residual:e})")));
    }

    let n = lk.count("analysis.N", 4)?;
    let t = match lk.get("analysis.T") {
        Some(e) if e.value == "auto" => {
            lk.echo.push(("analysis.T".into(), "auto".into(), false));
            None
        }
        Some(_) => Some(lk.count("analysis.T", 0)?),
        None => {
            lk.echo.push(("analysis.T".into(), "auto".into(), true));
            None
        }
    };
    let n_max = lk.count("analysis.n_max", 60)?;
    let i_max = lk.req("analysis.I_max", 1.0)?;
    let i_count = lk.count("analysis.I_count", 8)?;
    let epsilon = lk.req("analysis.epsilon", crate::center_dynamics::DEFAULT_EPSILON)?;
    let trace_vertices = lk.count("analysis.trace_vertices", 256)?;
    let defaults = KamCriteria::default();
    let kam_iter = lk.count("analysis.kam_iter", defaults.n_iter)?;
    let kam_degree = lk.count("analysis.kam_degree", defaults.degree)?;
    let linearity_samples = lk.count("analysis.linearity_samples", 20)?;
    let tol_kam = lk.req("tol.kam", defaults.tol_kam)?;
    let tol_angle = lk.req("tol.angle", crate::sigma_analysis::TOL_ANGLE)?;
    let tol_match = lk.req("tol.match", crate::sigma_analysis::TOL_MATCH)?;
    let tol_action = lk.req("tol.action", 1e-4)?;
    let max_quotient = lk.count("tol.max_quotient", defaults.max_quotient as usize)?;
    let depth = lk.count("tol.cf_depth", defaults.depth)?;
    let out_dir = lk.get("output.dir").map(|e| PathBuf::from(&e.value));
    if let Some(d) = &out_dir {
        lk.echo.push(("output.dir".into(), d.display().to_string(), false));
    }
    let seed = lk.count("run.seed", 0)? as u64;

    for (name, v) in [("tol.kam", tol_kam), ("tol.angle", tol_angle), ("tol.match", tol_match), ("tol.action", tol_action)] {
        if v <= 0.0 {
            return Err(Error::ValidationError(format!("tolerance {name} must be positive")));
        }
    }
    if i_count == 0 || i_max <= 0.0 {
        return Err(Error::ValidationError("action grid must be non-empty (analysis.I_count ≥ 1, analysis.I_max > 0)".into()));
    }
    if epsilon <= 0.0 {
        return Err(Error::ValidationError("analysis.epsilon must be positive".into()));
    }
    if n == 0 || n_max <= n {
        return Err(Error::ValidationError("need 1 ≤ analysis.N < analysis.n_max".into()));
    }
    if trace_vertices < 256 {
        return Err(Error::ValidationError("analysis.trace_vertices must be at least 256".into()));
    }
    if kam_iter < 16 || depth == 0 {
        return Err(Error::ValidationError("analysis.kam_iter ≥ 16 and tol.cf_depth ≥ 1 required".into()));
    }
    Ok(RunConfig {
        params,
        x0,
        y1,
        m,
        gluing_radius,
        n,
        t,
        n_max,
        i_max,
        i_count,
        epsilon,
        trace_vertices,
        kam: KamCriteria { n_iter: kam_iter, degree: kam_degree, tol_kam, max_quotient: max_quotient as u64, depth, ..defaults },
        linearity_samples,
        tol_angle,
        tol_match,
        tol_action,
        out_dir,
        seed,
        echo: lk.echo,
    })
}

/// The demo configuration as text.
pub fn demo_config_text() -> &'static str {
    "# demo saddle-center model\n\
     model.mu = 0.5\n\
     model.alpha = 1.0\n\
     model.nu = 0.1\n\
     model.eps_pert = 1e-3\n\
     model.B = 1.5, 0, 0, 1/1.5\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_loads() {
        let cfg = parse_config_str(demo_config_text()).unwrap();
        assert_eq!(cfg.params.mu, 0.5);
        assert_eq!(cfg.params.kappa, 0.0);
        assert!((cfg.m[(3, 3)] - 1.0 / 1.5).abs() < 1e-16);
        assert!(cfg.echo.iter().any(|(k, _, d)| k == "analysis.N" && *d));
    }

    #[test]
    fn missing_twist() {
        let err = parse_config_str("model.mu = 0.5\n").unwrap_err();
        assert!(matches!(&err, Error::ValidationError(m) if m.contains("twist coefficient required")));
    }

    #[test]
    fn malformed_number_location() {
        let err = parse_config_str("model.nu = 0.1\nmodel.mu =  0.5x\n").unwrap_err();
        assert_eq!(err, Error::ParseError { line: 2, column: 13, message: "malformed number '0.5x'".into() });
    }

    #[test]
    fn non_symplectic_matrix_rejected() {
        let text = "model.nu = 0.1\nmodel.M = 2 0 0 0  0 1 0 0  0 0 1 0  0 0 0 1\n";
        assert!(matches!(parse_config_str(text), Err(Error::ValidationError(_))));
    }
}
