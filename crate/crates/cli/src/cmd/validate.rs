//! `qsmforge validate`: check a phantom directory against the analytic
//! sphere oracle.
//!
//! For a spec describing exactly one sphere, the stored `field.qvol` must
//! match the closed-form external dipole field on the shell
//! `1.5a < r < 3a` (relative L2 < 5%) and average to ~0 inside the sphere
//! (|mean| < 0.02 ppm). The volumes must share one grid and the mask must
//! be binary. A failing check is a data error (exit 3); the report prints
//! to stdout either way.

use std::fs;
use std::path::PathBuf;

use clap::Args as ClapArgs;
use qsmforge_core::phantom::{analytic_sphere_field, PhantomSpec, Shape};
use serde::Serialize;

use crate::{dataset, CliError, CliResult, Ctx};

const SHELL_REL_L2_MAX: f64 = 0.05;
const INTERIOR_MEAN_MAX_PPM: f64 = 0.02;

#[derive(ClapArgs)]
pub struct Args {
    /// Phantom directory holding chi/field/mask.qvol.
    #[arg(long)]
    dir: PathBuf,

    /// The spec the phantom was generated from (single sphere).
    #[arg(long)]
    spec: PathBuf,
}

#[derive(Serialize)]
struct Report {
    shell_rel_l2: f64,
    interior_mean_ppm: f64,
    shell_voxels: usize,
    interior_voxels: usize,
    pass: bool,
}

pub fn run(args: Args, ctx: &Ctx) -> CliResult {
    let spec_bytes = fs::read(&args.spec).map_err(|e| CliError::in_file(&args.spec, e))?;
    let mut spec: PhantomSpec =
        serde_json::from_slice(&spec_bytes).map_err(|e| CliError::in_file(&args.spec, e))?;
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    let sphere = match spec.elements.as_slice() {
        [e] if e.shape == Shape::Sphere => e.clone(),
        _ => {
            return Err(CliError::data(
                "the analytic oracle needs a spec with exactly one Sphere element".to_string(),
            ))
        }
    };

    let subject = dataset::Subject { name: String::new(), dir: args.dir.clone() };
    let sample = subject.load()?;
    if sample.chi.dims() != spec.dims {
        return Err(CliError::data(format!(
            "{}: volume dims {:?} do not match spec dims {:?}",
            args.dir.display(),
            sample.chi.dims(),
            spec.dims
        )));
    }
    if sample.mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(CliError::data(format!(
            "{}: mask is not binary",
            subject.mask().display()
        )));
    }

    let oracle = analytic_sphere_field::<f64>(
        spec.dims,
        spec.voxel_size_mm,
        sphere.center_voxel,
        sphere.size_voxels,
        sphere.delta_chi_ppm,
        qsmforge_core::volume::Orientation::z(),
    )?;

    let a = sphere.size_voxels;
    let c = sphere.center_voxel;
    let mut shell_err = 0.0f64;
    let mut shell_ref = 0.0f64;
    let mut shell_n = 0usize;
    let mut interior_sum = 0.0f64;
    let mut interior_n = 0usize;
    let dims = spec.dims;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let r = ((x as f64 - c[0]).powi(2)
                    + (y as f64 - c[1]).powi(2)
                    + (z as f64 - c[2]).powi(2))
                .sqrt();
                let got = sample.field.at(x, y, z);
                if r > 1.5 * a && r < 3.0 * a {
                    let want = oracle.at(x, y, z);
                    shell_err += (got - want) * (got - want);
                    shell_ref += want * want;
                    shell_n += 1;
                } else if r <= a {
                    interior_sum += got;
                    interior_n += 1;
                }
            }
        }
    }
    if shell_n == 0 || interior_n == 0 {
        return Err(CliError::data(format!(
            "sphere (radius {a} voxels) leaves no shell/interior voxels inside {dims:?}; \
             cannot run the oracle check"
        )));
    }
    let report = Report {
        shell_rel_l2: (shell_err / shell_ref).sqrt(),
        interior_mean_ppm: interior_sum / interior_n as f64,
        shell_voxels: shell_n,
        interior_voxels: interior_n,
        pass: false,
    };
    let pass = report.shell_rel_l2 < SHELL_REL_L2_MAX
        && report.interior_mean_ppm.abs() < INTERIOR_MEAN_MAX_PPM;
    let report = Report { pass, ..report };

    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::data(format!("report serialization: {e}")))?;
    text.push('\n');
    print!("{text}");
    if pass {
        Ok(())
    } else {
        Err(CliError::data(format!(
            "field oracle check failed: shell relative L2 {:.4} (limit {SHELL_REL_L2_MAX}), \
             interior mean {:.4} ppm (limit ±{INTERIOR_MEAN_MAX_PPM})",
            report.shell_rel_l2, report.interior_mean_ppm
        )))
    }
}
