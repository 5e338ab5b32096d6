//! `qsmforge invert`: classical dipole inversions.
//!
//! `tkd` and `tikhonov` take one field volume; `cosmos` takes one
//! `--field`/`--b0` pair per orientation (the b0 list must match the field
//! list). A single-orientation cosmos run is allowed but warned about: the
//! per-frequency system is under-determined near the dipole cone.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args as ClapArgs, ValueEnum};
use qsmforge_core::dipole::build_kernel;
use qsmforge_core::inversion::{cosmos_invert, tikhonov_invert, tkd_invert, TkdConfig};
use qsmforge_core::volume::Orientation;

use crate::manifest::{manifest_path_for, RunManifest};
use crate::{dataset, parse_b0, CliError, CliResult, Ctx};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Tkd,
    Tikhonov,
    Cosmos,
}

#[derive(ClapArgs)]
pub struct Args {
    #[arg(long, value_enum)]
    method: Method,

    /// Field volume(s); repeat the flag for cosmos orientations.
    #[arg(long = "field", required = true)]
    fields: Vec<PathBuf>,

    /// B0 direction "x,y,z" per field; defaults to the z axis for
    /// single-orientation methods.
    #[arg(long = "b0")]
    b0: Vec<String>,

    /// Output susceptibility volume (.qvol, ppm).
    #[arg(long)]
    out: PathBuf,

    /// TKD kernel magnitude threshold.
    #[arg(long, default_value_t = TkdConfig::default().threshold)]
    threshold: f64,

    /// Tikhonov regularization weight.
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,

    /// Optional mask multiplied into the output.
    #[arg(long)]
    mask: Option<PathBuf>,
}

fn orientations(args: &Args) -> CliResult<Vec<Orientation>> {
    match args.method {
        Method::Cosmos => {
            if args.b0.len() != args.fields.len() {
                return Err(CliError::usage(format!(
                    "cosmos needs one --b0 per --field: got {} field(s) but {} b0 direction(s)",
                    args.fields.len(),
                    args.b0.len()
                )));
            }
            args.b0.iter().map(|s| parse_b0(s)).collect()
        }
        _ => {
            if args.fields.len() != 1 {
                return Err(CliError::usage(format!(
                    "this method takes exactly one --field, got {}",
                    args.fields.len()
                )));
            }
            if args.b0.len() > 1 {
                return Err(CliError::usage("multiple --b0 only make sense with cosmos"));
            }
            match args.b0.first() {
                Some(s) => Ok(vec![parse_b0(s)?]),
                None => Ok(vec![Orientation::z()]),
            }
        }
    }
}

pub fn run(args: Args, ctx: &Ctx) -> CliResult {
    let orientations = orientations(&args)?;
    let mut manifest = RunManifest::new(ctx);
    for path in &args.fields {
        manifest.input(path)?;
    }

    let fields: Vec<_> =
        args.fields.iter().map(|p| dataset::read_qvol(p)).collect::<CliResult<_>>()?;
    let t = Instant::now();
    let mut chi = match args.method {
        Method::Tkd => {
            let kernel =
                build_kernel(fields[0].dims(), fields[0].voxel_size_mm(), orientations[0])?;
            tkd_invert(&fields[0], &kernel, &TkdConfig { threshold: args.threshold })?
        }
        Method::Tikhonov => {
            let kernel =
                build_kernel(fields[0].dims(), fields[0].voxel_size_mm(), orientations[0])?;
            tikhonov_invert(&fields[0], &kernel, args.lambda)?
        }
        Method::Cosmos => {
            if fields.len() == 1 {
                eprintln!(
                    "warning: cosmos with a single orientation is under-determined \
                     near the dipole cone; expect streaking"
                );
            }
            cosmos_invert(&fields, &orientations)?
        }
    };
    manifest.timing("invert", t);

    if let Some(mask_path) = &args.mask {
        manifest.input(mask_path)?;
        let mask = dataset::read_qvol(mask_path)?;
        chi.same_grid(&mask).map_err(|e| CliError::in_file(mask_path, e))?;
        for (v, &m) in chi.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
    }

    let t = Instant::now();
    dataset::write_qvol(&args.out, &chi)?;
    manifest.output(&args.out)?;
    manifest.timing("write", t);
    manifest.write(&manifest_path_for(&args.out))
}
