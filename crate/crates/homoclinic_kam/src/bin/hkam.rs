//! Command-line front end: runs pipeline stages and writes report files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use homoclinic_kam::cli_io::{
    demo_config_text, emit_reports, parse_config, parse_config_str, run_pipeline_until, stages_through, RunConfig, Stage,
};
use homoclinic_kam::Error;

#[derive(Parser)]
#[command(name = "hkam", version, about = "Homoclinic orbits to KAM curves of saddle-center symplectic maps")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Configuration file; the built-in demo model when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for report files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Last stage to run (build, fixed-point, homoclinic, scattering,
    /// genericity, kam-scan, sigma-traces, intersections).
    #[arg(long, global = true)]
    stage: Option<String>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the KAM and trace stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Verb {
    /// Full pipeline through the intersection count.
    Analyze,
    /// Through the scattering map.
    Scatter,
    /// Through the genericity classification.
    Genericity,
    /// KAM scan of the center map.
    KamScan,
    /// Through the homoclinic orbit and its transversality.
    HomoclinicScan,
    /// Prints the summary of a previous run in the output directory.
    Report,
}

impl Verb {
    fn target(self) -> Stage {
        match self {
            Verb::Analyze | Verb::Report => Stage::Intersections,
            Verb::Scatter => Stage::Scattering,
            Verb::Genericity => Stage::Genericity,
            Verb::KamScan => Stage::KamScan,
            Verb::HomoclinicScan => Stage::Homoclinic,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => parse_config_str(demo_config_text())?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out.clone().or_else(|| cfg.and_then(|c| c.out_dir.clone())).unwrap_or_else(|| PathBuf::from("hkam-out"))
}

fn run(cli: &Cli) -> Result<bool, Error> {
    if let Verb::Report = cli.verb {
        let path = out_dir(cli, load(cli).ok().as_ref()).join("summary.txt");
        print!("{}", std::fs::read_to_string(&path)?);
        return Ok(true);
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameters(format!("thread pool: {e}")))?;
    }
    let cfg = load(cli)?;
    let target = match &cli.stage {
        Some(name) => Stage::from_name(name).ok_or_else(|| Error::InvalidParameters(format!("unknown stage '{name}'")))?,
        None => cli.verb.target(),
    };
    let (report, halted) = run_pipeline_until(&cfg, &stages_through(target));
    let dir = out_dir(cli, Some(&cfg));
    emit_reports(&report, &dir, &cfg)?;
    for (stage, status) in &report.stages {
        eprintln!("{:<14} {:?}", stage.name(), status);
    }
    for c in &report.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(e) = halted {
        return Err(e);
    }
    Ok(report.checks.iter().all(|c| c.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_certificate_failure() { 2 } else { 1 })
        }
    }
}
