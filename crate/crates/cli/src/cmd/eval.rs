//! `qsmforge eval`: score one reconstruction against a reference.
//!
//! The metric report (L1, PSNR, NMSE, HFEN, SSIM) goes to stdout as JSON;
//! `--out` additionally writes it to a file. PSNR serializes as `null`
//! when undefined (zero error or zero reference range).

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args as ClapArgs;
use qsmforge_core::metrics::evaluate;

use crate::manifest::{manifest_path_for, RunManifest};
use crate::{dataset, CliError, CliResult, Ctx};

#[derive(ClapArgs)]
pub struct Args {
    /// Reconstruction to score (.qvol).
    #[arg(long)]
    recon: PathBuf,

    /// Ground-truth reference (.qvol).
    #[arg(long)]
    reference: PathBuf,

    /// Binary mask restricting the comparison (.qvol).
    #[arg(long)]
    mask: Option<PathBuf>,

    /// Also write the report to this JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args, ctx: &Ctx) -> CliResult {
    let mut manifest = RunManifest::new(ctx);
    manifest.input(&args.recon)?;
    manifest.input(&args.reference)?;

    let recon = dataset::read_qvol(&args.recon)?;
    let reference = dataset::read_qvol(&args.reference)?;
    let mask = match &args.mask {
        Some(p) => {
            manifest.input(p)?;
            Some(dataset::read_qvol(p)?)
        }
        None => None,
    };

    let t = Instant::now();
    let report = evaluate(&recon, &reference, mask.as_ref())?;
    manifest.timing("evaluate", t);

    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::data(format!("report serialization: {e}")))?;
    text.push('\n');
    print!("{text}");
    if let Some(out) = &args.out {
        fs::write(out, &text).map_err(|e| CliError::in_file(out, e))?;
        manifest.output(out)?;
        manifest.write(&manifest_path_for(out))?;
    }
    Ok(())
}
