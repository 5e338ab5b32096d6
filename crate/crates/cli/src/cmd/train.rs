//! `qsmforge train`: patch-based U-Net training over a dataset directory.
//!
//! Configuration comes from an optional JSON file (all fields defaulted),
//! with command-line flags overriding individual entries. `--phase`
//! selects the schedule: `baseline` runs the pure-L1 phase, `gan` runs
//! critic pretraining plus the joint WGAN-GP phase starting from `--init`,
//! and `all` chains them. Training runs in f32; checkpoints store f64 and
//! round-trip f32 exactly.
//!
//! Outputs in `--out`: `generator.ckpt` (final), `generator_best.ckpt`
//! (best validation snapshot), `critic.ckpt` (gan phases), `history.csv`,
//! `config.json` (fully resolved), `manifest.json`.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args as ClapArgs, ValueEnum};
use qsmforge_core::gan::{
    build_val_data, prepare_training_set, train_baseline, train_gan, GanConfig, HistoryRow,
    TrainOutcome,
};
use qsmforge_core::nn::checkpoint::{load_generator, save_critic, save_generator};
use qsmforge_core::nn::{CriticSpec, Generator, GeneratorSpec};
use qsmforge_core::patching::PatchGeometry;
use qsmforge_core::transform::TransformConfig;
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::{dataset, parse_geometry, CliError, CliResult, Ctx};

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    Gan,
    All,
}

/// Everything a training run needs, JSON-serializable with full defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Network input patch edge (voxels).
    pub input_size: usize,
    /// Predicted output patch edge; smaller than `input_size` means the
    /// network output is center-cropped.
    pub output_size: usize,
    pub phase: Phase,
    pub generator: GeneratorSpec,
    pub critic: CriticSpec,
    pub transform: TransformConfig,
    pub gan: GanConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            input_size: 24,
            output_size: 16,
            phase: Phase::All,
            generator: GeneratorSpec::default(),
            critic: CriticSpec::default(),
            transform: TransformConfig::default(),
            gan: GanConfig::default(),
        }
    }
}

#[derive(ClapArgs)]
pub struct Args {
    /// Dataset directory (subject subdirs with chi/field/mask.qvol).
    #[arg(long)]
    data: PathBuf,

    /// Output directory for checkpoints, history, and config.
    #[arg(long)]
    out: PathBuf,

    /// Training configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the configured phase schedule.
    #[arg(long, value_enum)]
    phase: Option<Phase>,

    /// Continue from this generator checkpoint (required for --phase gan).
    #[arg(long)]
    init: Option<PathBuf>,

    /// Patch geometry "IN:OUT", e.g. "24:16"; also sizes the critic input.
    #[arg(long)]
    geometry: Option<String>,

    #[arg(long)]
    iters_baseline: Option<usize>,

    #[arg(long)]
    iters_critic: Option<usize>,

    #[arg(long)]
    iters_joint: Option<usize>,

    #[arg(long)]
    batch: Option<usize>,

    #[arg(long)]
    lr_baseline: Option<f64>,

    #[arg(long)]
    lr_joint: Option<f64>,

    #[arg(long)]
    lambda_adv: Option<f64>,

    #[arg(long)]
    val_patches: Option<usize>,

    #[arg(long)]
    val_every: Option<usize>,
}

fn resolve_config(args: &Args, ctx: &Ctx) -> CliResult<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| CliError::in_file(path, e))?;
            serde_json::from_slice(&bytes).map_err(|e| CliError::in_file(path, e))?
        }
        None => TrainConfig::default(),
    };
    if let Some(g) = &args.geometry {
        let geom = parse_geometry(g)?;
        cfg.input_size = geom.input_size;
        cfg.output_size = geom.output_size;
        cfg.critic.input_size = geom.output_size;
    }
    if let Some(p) = args.phase {
        cfg.phase = p;
    }
    if let Some(v) = args.iters_baseline {
        cfg.gan.iters_baseline = v;
    }
    if let Some(v) = args.iters_critic {
        cfg.gan.iters_critic_pretrain = v;
    }
    if let Some(v) = args.iters_joint {
        cfg.gan.iters_joint = v;
    }
    if let Some(v) = args.batch {
        cfg.gan.batch_size = v;
    }
    if let Some(v) = args.lr_baseline {
        cfg.gan.lr_baseline = v;
    }
    if let Some(v) = args.lr_joint {
        cfg.gan.lr_joint = v;
    }
    if let Some(v) = args.lambda_adv {
        cfg.gan.lambda_adv = v;
    }
    if let Some(v) = args.val_patches {
        cfg.gan.val_patches = v;
    }
    if let Some(v) = args.val_every {
        cfg.gan.val_every = v;
    }
    if let Some(seed) = ctx.seed {
        cfg.gan.seed = seed;
    }
    if cfg.phase != Phase::Baseline && cfg.critic.input_size != cfg.output_size {
        return Err(CliError::data(format!(
            "critic input size {} does not match the patch output size {}",
            cfg.critic.input_size, cfg.output_size
        )));
    }
    Ok(cfg)
}

fn write_history(path: &PathBuf, rows: &[HistoryRow]) -> CliResult {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::in_file(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| CliError::in_file(path, e))?;
    }
    writer.flush().map_err(|e| CliError::in_file(path, e))?;
    Ok(())
}

fn log_outcome(label: &str, outcome: &TrainOutcome<f32>) {
    let last = outcome.history.iter().rev().find_map(|r| r.g_l1);
    match last {
        Some(l1) => eprintln!(
            "{label}: {} iterations, final L1 {l1:.5}, best val L1 {}",
            outcome.history.len(),
            if outcome.best_val_l1.is_finite() {
                format!("{:.5}", outcome.best_val_l1)
            } else {
                "n/a".to_string()
            }
        ),
        None => eprintln!("{label}: {} iterations", outcome.history.len()),
    }
}

pub fn run(args: Args, ctx: &Ctx) -> CliResult {
    let cfg = resolve_config(&args, ctx)?;
    let geom = PatchGeometry::new(cfg.input_size, cfg.output_size)
        .map_err(|e| CliError::data(e.to_string()))?;
    geom.check_depth(cfg.generator.depth as u32)?;

    let mut manifest = RunManifest::new(ctx);
    let resolved = serde_json::to_vec_pretty(&cfg).map_err(|e| CliError::data(e.to_string()))?;
    manifest.config_bytes(&resolved);

    let t = Instant::now();
    let subjects = dataset::list_subjects(&args.data)?;
    let mut samples = Vec::with_capacity(subjects.len());
    for s in &subjects {
        manifest.input(&s.chi())?;
        manifest.input(&s.field())?;
        manifest.input(&s.mask())?;
        samples.push(s.load()?);
    }
    let set = prepare_training_set::<f32>(&samples, geom, &cfg.gan.sampler, &cfg.transform)?;
    let val = build_val_data(&set, &cfg.gan);
    manifest.timing("load", t);
    eprintln!(
        "loaded {} subjects; patch geometry {}:{}; phase {:?}",
        samples.len(),
        cfg.input_size,
        cfg.output_size,
        cfg.phase
    );

    let init: Option<Generator<f32>> = match &args.init {
        Some(path) => {
            manifest.input(path)?;
            let gen = load_generator::<f32>(path).map_err(|e| CliError::in_file(path, e))?;
            if gen.geom != geom {
                return Err(CliError::data(format!(
                    "checkpoint geometry {}:{} does not match configured geometry {}:{}",
                    gen.geom.input_size, gen.geom.output_size, geom.input_size, geom.output_size
                )));
            }
            Some(gen)
        }
        None => None,
    };
    if cfg.phase == Phase::Gan && init.is_none() {
        return Err(CliError::usage("--phase gan continues a baseline model; pass --init"));
    }

    let mut history: Vec<HistoryRow> = Vec::new();
    let mut critic = None;
    let t = Instant::now();
    let (model, best) = match cfg.phase {
        Phase::Baseline => {
            let out = train_baseline::<f32>(&set, val.as_ref(), cfg.generator, &cfg.gan, init)?;
            log_outcome("baseline", &out);
            history.extend(out.history);
            (out.model, out.best)
        }
        Phase::Gan => {
            let out =
                train_gan::<f32>(&set, val.as_ref(), cfg.generator, cfg.critic, &cfg.gan, init)?;
            log_outcome("gan", &out);
            history.extend(out.history);
            critic = out.critic;
            (out.model, out.best)
        }
        Phase::All => {
            let base = train_baseline::<f32>(&set, val.as_ref(), cfg.generator, &cfg.gan, init)?;
            log_outcome("baseline", &base);
            history.extend(base.history);
            let out = train_gan::<f32>(
                &set,
                val.as_ref(),
                cfg.generator,
                cfg.critic,
                &cfg.gan,
                Some(base.model),
            )?;
            log_outcome("gan", &out);
            history.extend(out.history);
            critic = out.critic;
            (out.model, out.best)
        }
    };
    manifest.timing("train", t);

    let t = Instant::now();
    fs::create_dir_all(&args.out).map_err(|e| CliError::in_file(&args.out, e))?;
    let gen_path = args.out.join("generator.ckpt");
    save_generator(&model, &gen_path).map_err(|e| CliError::in_file(&gen_path, e))?;
    manifest.output(&gen_path)?;
    let best_path = args.out.join("generator_best.ckpt");
    save_generator(&best, &best_path).map_err(|e| CliError::in_file(&best_path, e))?;
    manifest.output(&best_path)?;
    if let Some(critic) = &critic {
        let critic_path = args.out.join("critic.ckpt");
        save_critic(critic, &critic_path).map_err(|e| CliError::in_file(&critic_path, e))?;
        manifest.output(&critic_path)?;
    }
    let history_path = args.out.join("history.csv");
    write_history(&history_path, &history)?;
    manifest.output(&history_path)?;
    let config_path = args.out.join("config.json");
    let mut config_text = String::from_utf8(resolved).expect("json is utf-8");
    config_text.push('\n');
    fs::write(&config_path, config_text).map_err(|e| CliError::in_file(&config_path, e))?;
    manifest.output(&config_path)?;
    manifest.timing("write", t);
    manifest.write(&args.out.join("manifest.json"))
}
