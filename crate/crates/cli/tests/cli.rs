//! End-to-end tests of the installed binary: file formats, exit codes,
//! manifests, and reproducibility. Heavier statistical behavior lives in
//! the acceptance suite.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsmforge_core::qvol;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qsmforge"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn qsmforge");
    assert!(
        out.status.success(),
        "qsmforge {args:?} failed with {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_code(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("spawn qsmforge");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn sphere_spec(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let c = (n as f64 - 1.0) / 2.0;
    let spec = serde_json::json!({
        "dims": {"nx": n, "ny": n, "nz": n},
        "voxel_size_mm": [1.0, 1.0, 1.0],
        "seed": seed,
        "elements": [
            {"shape": "Sphere", "center_voxel": [c, c, c], "size_voxels": (n as f64) / 8.0,
             "delta_chi_ppm": 1.0}
        ]
    });
    let path = dir.join("spec.json");
    fs::write(&path, format!("{spec:#}")).unwrap();
    path
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn phantom_writes_parseable_consistent_volumes_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let spec = sphere_spec(tmp.path(), 32, 7);
    let out = tmp.path().join("ph");
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&out)]);

    let chi = qvol::read(out.join("chi.qvol")).unwrap();
    let field = qvol::read(out.join("field.qvol")).unwrap();
    let mask = qvol::read(out.join("mask.qvol")).unwrap();
    assert_eq!(chi.dims(), field.dims());
    assert_eq!(chi.dims(), mask.dims());
    assert!(mask.data().iter().all(|&m| m == 0.0 || m == 1.0));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    for key in ["tool", "command", "inputs", "outputs", "timings", "config_sha256"] {
        assert!(manifest.get(key).is_some(), "manifest missing {key}");
    }
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn phantom_is_reproducible_for_equal_seed_and_diverges_otherwise() {
    let tmp = TempDir::new().unwrap();
    let spec = sphere_spec(tmp.path(), 24, 7);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&a), "--count", "2"]);
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&b), "--count", "2"]);
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&c), "--count", "2", "--seed", "8"]);
    for name in ["subject_000/chi.qvol", "subject_001/field.qvol"] {
        let bytes_a = fs::read(a.join(name)).unwrap();
        assert_eq!(bytes_a, fs::read(b.join(name)).unwrap(), "{name} not reproducible");
        assert_ne!(bytes_a, fs::read(c.join(name)).unwrap(), "{name} ignored the seed");
    }
}

#[test]
fn malformed_phantom_spec_names_the_offending_field() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, r#"{"voxel_size_mm": [1.0, 1.0, 1.0], "seed": 1, "elements": []}"#).unwrap();
    let (code, stderr) =
        run_code(&["phantom", "--spec", &s(&path), "--out", &s(&tmp.path().join("o"))]);
    assert_eq!(code, 3, "stderr: {stderr}");
    assert!(stderr.contains("dims"), "error should name the missing field: {stderr}");
}

#[test]
fn forward_then_validate_matches_phantom_field() {
    let tmp = TempDir::new().unwrap();
    // The analytic oracle's 5% shell tolerance assumes a reasonably
    // resolved sphere; 64^3 with radius 8 is the calibrated setting.
    let spec = sphere_spec(tmp.path(), 64, 3);
    let out = tmp.path().join("ph");
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&out)]);
    // Recomputing the field from chi must reproduce the stored field bytes.
    let f2 = tmp.path().join("field2.qvol");
    run_ok(&["forward", "--chi", &s(&out.join("chi.qvol")), "--out", &s(&f2)]);
    assert_eq!(fs::read(out.join("field.qvol")).unwrap(), fs::read(&f2).unwrap());
    // And the stored field passes the analytic oracle.
    let out_text = run_ok(&["validate", "--dir", &s(&out), "--spec", &s(&spec)]);
    let report: serde_json::Value = serde_json::from_slice(&out_text.stdout).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
}

#[test]
fn tkd_inversion_correlates_with_ground_truth() {
    let tmp = TempDir::new().unwrap();
    let spec = sphere_spec(tmp.path(), 32, 3);
    let out = tmp.path().join("ph");
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&out)]);
    let recon = tmp.path().join("tkd.qvol");
    run_ok(&[
        "invert",
        "--method",
        "tkd",
        "--field",
        &s(&out.join("field.qvol")),
        "--out",
        &s(&recon),
    ]);
    let chi = qvol::read(out.join("chi.qvol")).unwrap();
    let mask = qvol::read(out.join("mask.qvol")).unwrap();
    let tkd = qvol::read(&recon).unwrap();
    let r = qsmforge_core::metrics::pearson(&tkd, &chi, Some(&mask)).unwrap();
    assert!(r > 0.9, "TKD correlation {r}");
    // Idempotence: a second identical run writes identical bytes.
    let recon2 = tmp.path().join("tkd2.qvol");
    run_ok(&[
        "invert",
        "--method",
        "tkd",
        "--field",
        &s(&out.join("field.qvol")),
        "--out",
        &s(&recon2),
    ]);
    assert_eq!(fs::read(&recon).unwrap(), fs::read(&recon2).unwrap());
}

#[test]
fn single_orientation_cosmos_warns_but_succeeds() {
    let tmp = TempDir::new().unwrap();
    let spec = sphere_spec(tmp.path(), 24, 3);
    let out = tmp.path().join("ph");
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&out)]);
    let recon = tmp.path().join("cosmos.qvol");
    let output = run_ok(&[
        "invert",
        "--method",
        "cosmos",
        "--field",
        &s(&out.join("field.qvol")),
        "--b0",
        "0,0,1",
        "--out",
        &s(&recon),
    ]);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("under-determined"), "expected a warning, got: {stderr}");
    assert!(recon.is_file());
}

#[test]
fn cosmos_without_matching_b0_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let spec = sphere_spec(tmp.path(), 24, 3);
    let out = tmp.path().join("ph");
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&out)]);
    let (code, stderr) = run_code(&[
        "invert",
        "--method",
        "cosmos",
        "--field",
        &s(&out.join("field.qvol")),
        "--out",
        &s(&tmp.path().join("x.qvol")),
    ]);
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.contains("--b0"), "stderr: {stderr}");
}

#[test]
fn unknown_method_is_a_usage_error() {
    let (code, _) = run_code(&[
        "invert",
        "--method",
        "medi",
        "--field",
        "whatever.qvol",
        "--out",
        "x.qvol",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn missing_input_file_is_a_data_error() {
    let (code, _) =
        run_code(&["invert", "--method", "tkd", "--field", "/nonexistent.qvol", "--out", "x.qvol"]);
    assert_eq!(code, 3);
}

#[test]
fn zero_reference_eval_is_a_numerical_error() {
    let tmp = TempDir::new().unwrap();
    let dims = qsmforge_core::volume::Dims::cubic(8).unwrap();
    let zeros = qsmforge_core::VolumeF64::zeros(
        dims,
        [1.0; 3],
        qsmforge_core::volume::Quantity::SusceptibilityPpm,
    )
    .unwrap();
    let mut ones = zeros.clone();
    ones.data_mut().fill(1.0);
    let zp = tmp.path().join("zeros.qvol");
    let op = tmp.path().join("ones.qvol");
    qvol::write(&zp, &zeros).unwrap();
    qvol::write(&op, &ones).unwrap();
    let (code, stderr) = run_code(&["eval", "--recon", &s(&op), "--reference", &s(&zp)]);
    assert_eq!(code, 4, "stderr: {stderr}");
}

#[test]
fn eval_identical_files_reports_identity_metrics() {
    let tmp = TempDir::new().unwrap();
    let spec = sphere_spec(tmp.path(), 24, 3);
    let out = tmp.path().join("ph");
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&out)]);
    let chi = s(&out.join("chi.qvol"));
    let output = run_ok(&["eval", "--recon", &chi, "--reference", &chi]);
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["l1"], 0.0);
    assert_eq!(report["nmse"], 0.0);
    assert_eq!(report["hfen"], 0.0);
    assert_eq!(report["ssim"], 1.0);
    assert!(report["psnr_db"].is_null(), "PSNR must be null for a perfect match");
}

#[test]
fn zero_weight_generator_inference_is_identically_zero() {
    use qsmforge_core::nn::checkpoint::save_generator;
    use qsmforge_core::nn::{Generator, GeneratorSpec};
    use qsmforge_core::patching::PatchGeometry;
    use rand::SeedableRng;

    let tmp = TempDir::new().unwrap();
    let spec = sphere_spec(tmp.path(), 24, 3);
    let out = tmp.path().join("ph");
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&out)]);

    let geom = PatchGeometry::new(16, 8).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut gen: Generator<f32> =
        Generator::init(GeneratorSpec { base_channels: 2, ..Default::default() }, geom, &mut rng)
            .unwrap();
    for p in &mut gen.params {
        p.value.data_mut().fill(0.0);
    }
    let ckpt = tmp.path().join("zero.ckpt");
    save_generator(&gen, &ckpt).unwrap();

    let recon = tmp.path().join("zero.qvol");
    run_ok(&[
        "infer",
        "--model",
        &s(&ckpt),
        "--field",
        &s(&out.join("field.qvol")),
        "--out",
        &s(&recon),
    ]);
    let vol = qvol::read(&recon).unwrap();
    assert!(vol.data().iter().all(|&v| v == 0.0), "zero weights must reconstruct exact zeros");
    assert!(tmp.path().join("zero.manifest.json").is_file());
}

#[test]
fn infer_geometry_mismatch_names_both_sizes() {
    use qsmforge_core::nn::checkpoint::save_generator;
    use qsmforge_core::nn::{Generator, GeneratorSpec};
    use qsmforge_core::patching::PatchGeometry;
    use rand::SeedableRng;

    let tmp = TempDir::new().unwrap();
    let geom = PatchGeometry::new(24, 16).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let gen: Generator<f32> =
        Generator::init(GeneratorSpec { base_channels: 2, ..Default::default() }, geom, &mut rng)
            .unwrap();
    let ckpt = tmp.path().join("g.ckpt");
    save_generator(&gen, &ckpt).unwrap();

    let (code, stderr) = run_code(&[
        "infer",
        "--model",
        &s(&ckpt),
        "--field",
        "unused.qvol",
        "--out",
        "x.qvol",
        "--geometry",
        "16:16",
    ]);
    assert_eq!(code, 3, "stderr: {stderr}");
    assert!(
        stderr.contains("24:16") && stderr.contains("16:16"),
        "error must name both geometries: {stderr}"
    );
}

#[test]
fn unparseable_train_config_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let run_dir = tmp.path().join("run");
    let (code, stderr) = run_code(&[
        "train",
        "--data",
        &s(&tmp.path().join("nonexistent")),
        "--out",
        &s(&run_dir),
        "--config",
        "/dev/null",
    ]);
    assert_eq!(code, 3, "stderr: {stderr}");
    assert!(!run_dir.join("generator.ckpt").exists());
}

#[test]
fn train_writes_checkpoints_history_and_resolved_config() {
    let tmp = TempDir::new().unwrap();
    let spec = sphere_spec(tmp.path(), 32, 11);
    let data = tmp.path().join("ds");
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&data), "--count", "2"]);
    let cfg = tmp.path().join("train.json");
    fs::write(&cfg, r#"{"generator": {"base_channels": 2}, "critic": {"base_channels": 2}}"#)
        .unwrap();
    let run_dir = tmp.path().join("run");
    run_ok(&[
        "train",
        "--data",
        &s(&data),
        "--out",
        &s(&run_dir),
        "--config",
        &s(&cfg),
        "--phase",
        "all",
        "--geometry",
        "16:16",
        "--iters-baseline",
        "4",
        "--iters-critic",
        "3",
        "--iters-joint",
        "2",
        "--batch",
        "2",
        "--val-patches",
        "2",
        "--val-every",
        "2",
        "--seed",
        "1",
    ]);
    for file in ["generator.ckpt", "generator_best.ckpt", "critic.ckpt", "config.json", "manifest.json"]
    {
        assert!(run_dir.join(file).is_file(), "missing {file}");
    }
    let history = fs::read_to_string(run_dir.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    // Header + 4 baseline + 3 critic + 2 joint rows.
    assert_eq!(lines.len(), 1 + 4 + 3 + 2, "history:\n{history}");
    assert!(lines[0].starts_with("phase,iteration"));
    assert_eq!(history.matches("\ncritic,").count(), 3);
    assert_eq!(history.matches("\njoint,").count(), 2);

    // Model inference consumes what train wrote.
    let recon = tmp.path().join("net.qvol");
    run_ok(&[
        "infer",
        "--model",
        &s(&run_dir.join("generator_best.ckpt")),
        "--field",
        &s(&data.join("subject_000/field.qvol")),
        "--out",
        &s(&recon),
        "--mask",
        &s(&data.join("subject_000/mask.qvol")),
    ]);
    let vol = qvol::read(&recon).unwrap();
    assert!(vol.data().iter().all(|v| v.is_finite()));

    // compare covers classical methods and the trained model in one table.
    let table = tmp.path().join("table.csv");
    run_ok(&[
        "compare",
        "--data",
        &s(&data),
        "--out",
        &s(&table),
        "--model",
        &format!("unet={}", s(&run_dir.join("generator_best.ckpt"))),
    ]);
    let text = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,geometry,seed,l1,psnr_db,nmse,hfen,ssim");
    // 2 subjects x (tkd, tikhonov, unet).
    assert_eq!(lines.len(), 1 + 6, "table:\n{text}");
    assert!(text.contains("unet,16:16,subject_001"));
}

#[test]
fn gan_phase_requires_an_init_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let spec = sphere_spec(tmp.path(), 32, 11);
    let data = tmp.path().join("ds");
    run_ok(&["phantom", "--spec", &s(&spec), "--out", &s(&data), "--count", "1"]);
    let (code, stderr) = run_code(&[
        "train",
        "--data",
        &s(&data),
        "--out",
        &s(&tmp.path().join("run")),
        "--phase",
        "gan",
        "--geometry",
        "16:16",
    ]);
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.contains("--init"), "stderr: {stderr}");
}
