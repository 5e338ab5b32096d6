//! End-to-end physics checks: the forward model against the closed-form
//! sphere solution, and the classical inversions on phantom suites.

use qsmforge_core::dipole::{build_kernel, forward_field};
use qsmforge_core::inversion::{cosmos_invert, tikhonov_invert, tkd_invert, TkdConfig};
use qsmforge_core::phantom::{analytic_sphere_field, generate, synth_dataset, Element, PhantomSpec, Shape};
use qsmforge_core::volume::{Dims, Orientation, Quantity, Volume};

fn sphere_spec(n: usize, radius: f64) -> PhantomSpec {
    let c = n as f64 / 2.0;
    PhantomSpec {
        dims: Dims::cubic(n).unwrap(),
        voxel_size_mm: [1.0; 3],
        seed: 7,
        background_chi_ppm: 0.0,
        elements: vec![Element {
            shape: Shape::Sphere,
            center_voxel: [c, c, c],
            size_voxels: radius,
            delta_chi_ppm: 1.0,
        }],
    }
}

fn mixed_template(n: usize) -> PhantomSpec {
    PhantomSpec {
        dims: Dims::cubic(n).unwrap(),
        voxel_size_mm: [1.0; 3],
        seed: 1234,
        background_chi_ppm: 0.0,
        elements: vec![
            Element { shape: Shape::Sphere, center_voxel: [0.0; 3], size_voxels: 6.0, delta_chi_ppm: 0.3 },
            Element { shape: Shape::Sphere, center_voxel: [0.0; 3], size_voxels: 4.0, delta_chi_ppm: -0.2 },
            Element { shape: Shape::GaussianBlob, center_voxel: [0.0; 3], size_voxels: 5.0, delta_chi_ppm: 0.25 },
            Element { shape: Shape::Cylinder, center_voxel: [0.0; 3], size_voxels: 2.0, delta_chi_ppm: -0.15 },
            Element { shape: Shape::PointSource, center_voxel: [0.0; 3], size_voxels: 0.0, delta_chi_ppm: 0.8 },
        ],
    }
}

fn pearson(a: &[f64], b: &[f64], mask: &[f64]) -> f64 {
    let idx: Vec<usize> = (0..a.len()).filter(|&i| mask[i] != 0.0).collect();
    let n = idx.len() as f64;
    let ma = idx.iter().map(|&i| a[i]).sum::<f64>() / n;
    let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for &i in &idx {
        let (da, db) = (a[i] - ma, b[i] - mb);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn nmse(reference: &Volume<f64>, recon: &Volume<f64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (r, x) in reference.data().iter().zip(recon.data()) {
        num += (r - x) * (r - x);
        den += r * r;
    }
    num / den
}

/// Forward model vs the analytic sphere solution: relative L2 on the
/// exterior shell 1.5a < r < 3a below 5%, interior mean within 0.02 ppm.
#[test]
fn forward_model_matches_analytic_sphere() {
    let start = std::time::Instant::now();
    let n = 64;
    let a = 8.0;
    let c = [32.0, 32.0, 32.0];
    let spec = sphere_spec(n, a);
    let (chi, _) = generate::<f64>(&spec).unwrap();
    let kernel = build_kernel(spec.dims, spec.voxel_size_mm, Orientation::z()).unwrap();
    let field = forward_field(&chi, &kernel).unwrap();
    let exact =
        analytic_sphere_field::<f64>(spec.dims, spec.voxel_size_mm, c, a, 1.0, Orientation::z()).unwrap();

    let mut num = 0.0;
    let mut den = 0.0;
    let mut interior_sum = 0.0;
    let mut interior_n = 0usize;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let r = ((x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2))
                    .sqrt();
                if r > 1.5 * a && r < 3.0 * a {
                    let d = field.at(x, y, z) - exact.at(x, y, z);
                    num += d * d;
                    den += exact.at(x, y, z) * exact.at(x, y, z);
                } else if r <= a {
                    interior_sum += field.at(x, y, z);
                    interior_n += 1;
                }
            }
        }
    }
    let rel = (num / den).sqrt();
    let interior_mean = interior_sum / interior_n as f64;
    println!(
        "sphere oracle: shell rel L2 {rel:.4}, interior mean {interior_mean:.4} ppm, {:?}",
        start.elapsed()
    );
    assert!(rel < 0.05, "shell relative L2 {rel} >= 5%");
    assert!(interior_mean.abs() < 0.02, "interior mean {interior_mean} outside +-0.02 ppm");
    assert!(start.elapsed().as_secs_f64() < 5.0, "oracle budget exceeded");
}

#[test]
fn tkd_recovers_noiseless_phantoms() {
    let samples = synth_dataset::<f64>(3, &mixed_template(48), 0.0).unwrap();
    let kernel = build_kernel(Dims::cubic(48).unwrap(), [1.0; 3], Orientation::z()).unwrap();
    for (i, s) in samples.iter().enumerate() {
        let rec = tkd_invert(&s.field, &kernel, &TkdConfig::default()).unwrap();
        let r = pearson(s.chi.data(), rec.data(), s.mask.data());
        println!("tkd subject {i}: pearson {r:.4}");
        assert!(r > 0.90, "subject {i}: pearson {r} <= 0.90");
    }
}

#[test]
fn tikhonov_beats_tkd_on_noisy_fields() {
    let noise = 0.005;
    let samples = synth_dataset::<f64>(3, &mixed_template(48), noise).unwrap();
    let kernel = build_kernel(Dims::cubic(48).unwrap(), [1.0; 3], Orientation::z()).unwrap();
    for (i, s) in samples.iter().enumerate() {
        let rec_tkd = tkd_invert(&s.field, &kernel, &TkdConfig::default()).unwrap();
        let rec_tik = tikhonov_invert(&s.field, &kernel, 0.01).unwrap();
        let (e_tkd, e_tik) = (nmse(&s.chi, &rec_tkd), nmse(&s.chi, &rec_tik));
        println!("noisy subject {i}: tkd nmse {e_tkd:.4}, tikhonov nmse {e_tik:.4}");
        assert!(e_tik < e_tkd, "subject {i}: tikhonov {e_tik} not better than tkd {e_tkd}");
    }
}

#[test]
fn cosmos_recovery_improves_with_orientations() {
    let orientations = [
        Orientation::z(),
        Orientation::tilted(20.0, 0.0),
        Orientation::tilted(20.0, 90.0),
        Orientation::tilted(20.0, 225.0),
    ];
    let samples = synth_dataset::<f64>(2, &mixed_template(48), 0.0).unwrap();
    for (i, s) in samples.iter().enumerate() {
        let fields: Vec<Volume<f64>> = orientations
            .iter()
            .map(|&o| {
                let k = build_kernel(s.chi.dims(), s.chi.voxel_size_mm(), o).unwrap();
                forward_field(&s.chi, &k).unwrap()
            })
            .collect();
        let mut prev = f64::INFINITY;
        for m in 2..=4 {
            let rec = cosmos_invert(&fields[..m], &orientations[..m]).unwrap();
            let e = nmse(&s.chi, &rec);
            println!("cosmos subject {i}, {m} orientations: nmse {e:.5}");
            if m == 3 {
                assert!(e < 0.02, "subject {i}: 3-orientation nmse {e} >= 0.02");
            }
            assert!(e <= prev + 1e-6, "subject {i}: nmse got worse with {m} orientations");
            prev = e;
        }
    }
}

/// Sanity anchor for every inversion: reconstructing its own forward field
/// keeps the susceptibility quantity tag.
#[test]
fn inversion_outputs_are_tagged() {
    let samples = synth_dataset::<f64>(1, &sphere_spec(32, 5.0), 0.0).unwrap();
    let kernel = build_kernel(Dims::cubic(32).unwrap(), [1.0; 3], Orientation::z()).unwrap();
    let rec = tkd_invert(&samples[0].field, &kernel, &TkdConfig::default()).unwrap();
    assert_eq!(rec.quantity(), Quantity::SusceptibilityPpm);
}
