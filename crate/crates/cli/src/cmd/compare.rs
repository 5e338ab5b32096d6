//! `qsmforge compare`: score several reconstruction methods over a whole
//! dataset into one CSV table.
//!
//! One row per (method, subject): classical inversions (tkd, tikhonov) and
//! any number of trained generators passed as `--model name=path`. All
//! methods are scored against the stored ground truth inside the mask; the
//! `geometry` column carries the model's patch geometry ("-" for classical
//! methods). PSNR cells are empty when the metric is undefined.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args as ClapArgs, ValueEnum};
use qsmforge_core::dipole::build_kernel;
use qsmforge_core::inversion::{tikhonov_invert, tkd_invert, TkdConfig};
use qsmforge_core::metrics::evaluate;
use qsmforge_core::nn::checkpoint::load_generator;
use qsmforge_core::nn::Generator;
use qsmforge_core::transform::TransformConfig;
use qsmforge_core::volume::Orientation;
use serde::Serialize;

use crate::cmd::infer::infer_volume;
use crate::manifest::{manifest_path_for, RunManifest};
use crate::{dataset, CliError, CliResult, Ctx};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Classical {
    Tkd,
    Tikhonov,
}

#[derive(ClapArgs)]
pub struct Args {
    /// Dataset directory (subject subdirs with chi/field/mask.qvol).
    #[arg(long)]
    data: PathBuf,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,

    /// Classical methods to include.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "tkd,tikhonov")]
    methods: Vec<Classical>,

    /// Trained generator as "name=path/to/generator.ckpt"; repeatable.
    #[arg(long = "model")]
    models: Vec<String>,

    /// TKD kernel magnitude threshold.
    #[arg(long, default_value_t = TkdConfig::default().threshold)]
    threshold: f64,

    /// Tikhonov regularization weight.
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
}

#[derive(Serialize)]
struct Row {
    method: String,
    geometry: String,
    seed: String,
    l1: f64,
    psnr_db: Option<f64>,
    nmse: f64,
    hfen: f64,
    ssim: f64,
}

fn parse_models(specs: &[String]) -> CliResult<Vec<(String, PathBuf)>> {
    specs
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(name, path)| (name.to_string(), PathBuf::from(path)))
                .ok_or_else(|| {
                    CliError::usage(format!("--model must look like name=path, got '{s}'"))
                })
        })
        .collect()
}

pub fn run(args: Args, ctx: &Ctx) -> CliResult {
    let model_specs = parse_models(&args.models)?;
    if args.methods.is_empty() && model_specs.is_empty() {
        return Err(CliError::usage("nothing to compare: no --methods and no --model"));
    }

    let mut manifest = RunManifest::new(ctx);
    let mut models: Vec<(String, Generator<f32>)> = Vec::with_capacity(model_specs.len());
    for (name, path) in &model_specs {
        manifest.input(path)?;
        let gen = load_generator::<f32>(path).map_err(|e| CliError::in_file(path, e))?;
        models.push((name.clone(), gen));
    }

    let subjects = dataset::list_subjects(&args.data)?;
    let tcfg = TransformConfig::default();
    let mut rows: Vec<Row> = Vec::new();
    let t = Instant::now();
    for subject in &subjects {
        manifest.input(&subject.chi())?;
        manifest.input(&subject.field())?;
        manifest.input(&subject.mask())?;
        let sample = subject.load()?;
        let mut score = |method: String, geometry: String, recon| -> CliResult {
            let m = evaluate(&recon, &sample.chi, Some(&sample.mask))?;
            rows.push(Row {
                method,
                geometry,
                seed: subject.name.clone(),
                l1: m.l1,
                psnr_db: m.psnr_db,
                nmse: m.nmse,
                hfen: m.hfen,
                ssim: m.ssim,
            });
            Ok(())
        };
        if !args.methods.is_empty() {
            let kernel = build_kernel::<f64>(
                sample.field.dims(),
                sample.field.voxel_size_mm(),
                Orientation::z(),
            )?;
            for method in &args.methods {
                match method {
                    Classical::Tkd => {
                        let recon = tkd_invert(
                            &sample.field,
                            &kernel,
                            &TkdConfig { threshold: args.threshold },
                        )?;
                        score("tkd".to_string(), "-".to_string(), recon)?;
                    }
                    Classical::Tikhonov => {
                        let recon = tikhonov_invert(&sample.field, &kernel, args.lambda)?;
                        score("tikhonov".to_string(), "-".to_string(), recon)?;
                    }
                }
            }
        }
        for (name, gen) in &models {
            let (recon, _) = infer_volume(gen, &sample.field, &tcfg)?;
            let geometry = format!("{}:{}", gen.geom.input_size, gen.geom.output_size);
            score(name.clone(), geometry, recon)?;
        }
    }
    manifest.timing("compare", t);

    let t = Instant::now();
    let mut writer = csv::Writer::from_path(&args.out).map_err(|e| CliError::in_file(&args.out, e))?;
    for row in &rows {
        writer.serialize(row).map_err(|e| CliError::in_file(&args.out, e))?;
    }
    writer.flush().map_err(|e| CliError::in_file(&args.out, e))?;
    drop(writer);
    manifest.output(&args.out)?;
    manifest.timing("write", t);
    manifest.write(&manifest_path_for(&args.out))
}
