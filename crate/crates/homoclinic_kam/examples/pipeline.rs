//! Full staged run on the demo configuration with report files written to a
//! directory given as the first argument (default: hkam-example-out).

use std::path::PathBuf;

use homoclinic_kam::cli_io::{demo_config_text, emit_reports, parse_config_str, run_pipeline};

fn main() {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("hkam-example-out"));
    let cfg = parse_config_str(demo_config_text()).expect("demo config");
    let report = run_pipeline(&cfg).expect("pipeline");
    for c in &report.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let files = emit_reports(&report, &out, &cfg).expect("write reports");
    println!("wrote {} files to {}", files.len(), out.display());
}
