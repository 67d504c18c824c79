//! Finite-difference verification driver.

use crate::manifest::RunManifest;
use anyhow::Result;
use objmap_core::gradcheck::{run_gradcheck, FaultInjection, GradcheckReport};
use std::path::PathBuf;

pub fn run(
    samples: usize,
    seed: u64,
    out: Option<PathBuf>,
    flip_block: Option<String>,
) -> Result<u8> {
    let fault = match flip_block {
        Some(name) => FaultInjection::FlipBlock(name),
        None => FaultInjection::None,
    };
    let report = run_gradcheck(samples, seed, &fault);
    let text = format_report(&report);
    print!("{text}");

    if let Some(out) = out {
        let dir = crate::outdir::prepare(&out)?;
        std::fs::write(dir.join("gradcheck_report.txt"), &text)?;
        let mut manifest = RunManifest::new("gradcheck", None, seed, &dir);
        manifest.metric("samples", samples);
        manifest.metric("all_passed", report.all_passed());
        for block in &report.blocks {
            manifest.metric(&format!("max_rel_err_{}", block.name), block.max_rel_err);
        }
        manifest.output("gradcheck_report.txt");
        manifest.write_once(&dir)?;
    }

    if report.all_passed() {
        println!("gradcheck: PASS");
        Ok(0)
    } else {
        let names: Vec<&str> = report.failing().iter().map(|b| b.name).collect();
        println!("gradcheck: FAIL ({})", names.join(", "));
        Ok(1)
    }
}

fn format_report(report: &GradcheckReport) -> String {
    let mut text = String::new();
    for block in &report.blocks {
        text.push_str(&format!(
            "block {:<20} samples {:>4}  max rel err {:>12.5e}  tolerance {:>8.0e}  {}\n",
            block.name,
            block.samples,
            block.max_rel_err,
            block.tolerance,
            if block.passed() { "PASS" } else { "FAIL" }
        ));
    }
    text
}
