//! `qsmforge infer`: patch-wise network reconstruction of a full volume.
//!
//! The field is phase-scaled, tiled into non-overlapping output windows
//! (inputs dilated by the checkpoint's margin, zero-padded at the volume
//! boundary), pushed through the generator in eval mode, stitched back
//! together, and mapped out of surrogate space into ppm.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args as ClapArgs;
use qsmforge_core::nn::checkpoint::load_generator;
use qsmforge_core::nn::{Generator, Shape5, Tensor};
use qsmforge_core::patching::{extract_padded, stitch, tile_plan};
use qsmforge_core::transform::{from_surrogate, scale_phase, TransformConfig};
use qsmforge_core::volume::{Quantity, Volume};

use crate::manifest::{manifest_path_for, RunManifest};
use crate::{dataset, parse_geometry, CliError, CliResult, Ctx};

#[derive(ClapArgs)]
pub struct Args {
    /// Generator checkpoint (.ckpt).
    #[arg(long)]
    model: PathBuf,

    /// Input field volume (.qvol, ppm).
    #[arg(long)]
    field: PathBuf,

    /// Output susceptibility volume (.qvol, ppm).
    #[arg(long)]
    out: PathBuf,

    /// Optional mask multiplied into the output.
    #[arg(long)]
    mask: Option<PathBuf>,

    /// Expected patch geometry "IN:OUT"; errors if the checkpoint disagrees.
    #[arg(long)]
    geometry: Option<String>,
}

/// Full-volume reconstruction: scale, tile, infer, stitch, untransform.
/// Returns the ppm susceptibility map and the count of surrogate samples
/// that had to be clamped away from ±1.
pub fn infer_volume(
    gen: &Generator<f32>,
    field: &Volume<f64>,
    tcfg: &TransformConfig,
) -> CliResult<(Volume<f64>, usize)> {
    let scaled = scale_phase(field, tcfg).cast::<f32>();
    let plan = tile_plan(field.dims(), &gen.geom)?;
    let input = gen.geom.input_size;
    let output = gen.geom.output_size;
    let mut patches = Vec::with_capacity(plan.tiles.len());
    for tile in &plan.tiles {
        // extract_padded is center-addressed; the input window corner is
        // out_start - margin, whose center lands at out_start + output/2.
        let center = [
            tile.out_start[0] + output / 2,
            tile.out_start[1] + output / 2,
            tile.out_start[2] + output / 2,
        ];
        let window = extract_padded(&scaled, center, input);
        let x = Tensor::from_vec(Shape5::new(1, 1, input, input, input), window)?;
        patches.push(gen.infer(&x)?.into_data());
    }
    let stitched = stitch(&plan, &patches, field.voxel_size_mm(), Quantity::Arbitrary)?;
    let (chi, clamped) = from_surrogate(&stitched.cast::<f64>(), tcfg);
    Ok((chi, clamped))
}

pub fn run(args: Args, ctx: &Ctx) -> CliResult {
    let mut manifest = RunManifest::new(ctx);
    manifest.input(&args.model)?;

    let gen = load_generator::<f32>(&args.model).map_err(|e| CliError::in_file(&args.model, e))?;
    if let Some(g) = &args.geometry {
        let want = parse_geometry(g)?;
        if gen.geom != want {
            return Err(CliError::data(format!(
                "checkpoint geometry {}:{} does not match requested geometry {}:{}",
                gen.geom.input_size, gen.geom.output_size, want.input_size, want.output_size
            )));
        }
    }
    manifest.input(&args.field)?;
    let field = dataset::read_qvol(&args.field)?;

    let t = Instant::now();
    let (mut chi, clamped) = infer_volume(&gen, &field, &TransformConfig::default())?;
    if clamped > 0 {
        eprintln!("warning: {clamped} saturated surrogate sample(s) clamped before atanh");
    }
    manifest.timing("infer", t);

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
