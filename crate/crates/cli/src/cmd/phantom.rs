//! `qsmforge phantom`: synthesize ground truth.
//!
//! Without `--count`, writes one phantom exactly as described by the spec
//! file: `chi.qvol`, `mask.qvol`, and the forward-modeled `field.qvol`
//! straight into `--out`. With `--count N`, writes a randomized dataset of
//! N subjects (`subject_000/`, `subject_001/`, ...) instead, optionally
//! with field-domain noise.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args as ClapArgs;
use qsmforge_core::dipole::{build_kernel, forward_field};
use qsmforge_core::phantom::{generate, synth_dataset, PhantomSpec, Sample};

use crate::manifest::RunManifest;
use crate::{dataset, parse_b0, CliError, CliResult, Ctx};

#[derive(ClapArgs)]
pub struct Args {
    /// Phantom description (JSON).
    #[arg(long)]
    spec: PathBuf,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,

    /// Generate a randomized dataset of N subjects instead of the single
    /// phantom described by the spec.
    #[arg(long)]
    count: Option<usize>,

    /// Gaussian noise std (ppm) added to the fields in dataset mode.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,

    /// B0 direction "x,y,z" for the forward model (single-phantom mode;
    /// datasets always use the scanner z axis).
    #[arg(long, default_value = "0,0,1")]
    b0: String,
}

pub fn run(args: Args, ctx: &Ctx) -> CliResult {
    let spec_bytes = fs::read(&args.spec).map_err(|e| CliError::in_file(&args.spec, e))?;
    let mut spec: PhantomSpec =
        serde_json::from_slice(&spec_bytes).map_err(|e| CliError::in_file(&args.spec, e))?;
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }

    let mut manifest = RunManifest::new(ctx);
    manifest.input(&args.spec)?;
    let resolved = serde_json::to_vec(&spec).map_err(|e| CliError::data(e.to_string()))?;
    manifest.config_bytes(&resolved);

    fs::create_dir_all(&args.out).map_err(|e| CliError::in_file(&args.out, e))?;
    let t = Instant::now();
    match args.count {
        None => {
            let (chi, mask) = generate::<f64>(&spec)?;
            let kernel = build_kernel::<f64>(spec.dims, spec.voxel_size_mm, parse_b0(&args.b0)?)?;
            let field = forward_field(&chi, &kernel)?;
            manifest.timing("generate", t);
            let t = Instant::now();
            for path in dataset::write_subject(&args.out, &Sample { chi, field, mask })? {
                manifest.output(&path)?;
            }
            manifest.timing("write", t);
        }
        Some(count) => {
            if count == 0 {
                return Err(CliError::usage("--count must be at least 1"));
            }
            let samples = synth_dataset::<f64>(count, &spec, args.noise)?;
            manifest.timing("generate", t);
            let t = Instant::now();
            for (i, sample) in samples.iter().enumerate() {
                let dir = args.out.join(format!("subject_{i:03}"));
                for path in dataset::write_subject(&dir, sample)? {
                    manifest.output(&path)?;
                }
            }
            // Record how the dataset was made next to it.
            let summary = serde_json::json!({
                "template": spec,
                "count": count,
                "noise_std_ppm": args.noise,
            });
            let path = args.out.join("dataset.json");
            fs::write(&path, format!("{summary:#}\n")).map_err(|e| CliError::in_file(&path, e))?;
            manifest.output(&path)?;
            manifest.timing("write", t);
        }
    }
    manifest.write(&args.out.join("manifest.json"))
}
