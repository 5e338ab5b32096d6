//! `qsmforge forward`: susceptibility volume in, field-shift volume out.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args as ClapArgs;
use qsmforge_core::dipole::{build_kernel, forward_field};

use crate::manifest::{manifest_path_for, RunManifest};
use crate::{dataset, parse_b0, CliResult, Ctx};

#[derive(ClapArgs)]
pub struct Args {
    /// Susceptibility volume (.qvol, ppm).
    #[arg(long)]
    chi: PathBuf,

    /// Output field volume (.qvol, ppm).
    #[arg(long)]
    out: PathBuf,

    /// B0 direction "x,y,z" (normalized by the CLI).
    #[arg(long, default_value = "0,0,1")]
    b0: String,
}

pub fn run(args: Args, ctx: &Ctx) -> CliResult {
    let orientation = parse_b0(&args.b0)?;
    let mut manifest = RunManifest::new(ctx);
    manifest.input(&args.chi)?;

    let chi = dataset::read_qvol(&args.chi)?;
    let t = Instant::now();
    let kernel = build_kernel::<f64>(chi.dims(), chi.voxel_size_mm(), orientation)?;
    let field = forward_field(&chi, &kernel)?;
    manifest.timing("forward", t);

    let t = Instant::now();
    dataset::write_qvol(&args.out, &field)?;
    manifest.output(&args.out)?;
    manifest.timing("write", t);
    manifest.write(&manifest_path_for(&args.out))
}
