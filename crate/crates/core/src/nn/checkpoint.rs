//! Model checkpoints: a one-line JSON manifest, a newline, then the
//! parameter values as little-endian f64 in manifest entry order.
//!
//! Values are always stored as f64 regardless of the in-memory scalar, so
//! f32 models round-trip bit-exactly and files stay precision-portable.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::PatchGeometry;
use crate::scalar::Real;

use super::model::{Critic, CriticSpec, Generator, GeneratorSpec};

pub const FORMAT: &str = "qsmforge-model-v1";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GenMeta {
    spec: GeneratorSpec,
    geom: PatchGeometry,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<GenMeta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    critic: Option<CriticSpec>,
    entries: Vec<Entry>,
}

fn write_file(path: &Path, manifest: &Manifest, values: &[f64]) -> Result<()> {
    let total: usize = manifest.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if total != values.len() {
        return Err(Error::Format(format!(
            "manifest declares {total} values, blob has {}",
            values.len()
        )));
    }
    let head = serde_json::to_string(manifest)?;
    let mut bytes = Vec::with_capacity(head.len() + 1 + values.len() * 8);
    bytes.extend_from_slice(head.as_bytes());
    bytes.push(b'\n');
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<(Manifest, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint has no manifest line".to_string()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[..nl])?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!(
            "unsupported checkpoint format {:?} (expected {FORMAT:?})",
            manifest.format
        )));
    }
    let blob = &bytes[nl + 1..];
    let total: usize = manifest.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if blob.len() != total * 8 {
        return Err(Error::Format(format!(
            "blob is {} bytes, manifest declares {} values ({} bytes)",
            blob.len(),
            total,
            total * 8
        )));
    }
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((manifest, values))
}

fn gen_entries<T: Real>(gen: &Generator<T>) -> (Vec<Entry>, Vec<f64>) {
    let mut entries = Vec::new();
    let mut values = Vec::new();
    for p in &gen.params {
        let s = p.value.shape();
        entries.push(Entry { name: p.name.clone(), shape: vec![s.b, s.c, s.nx, s.ny, s.nz] });
        values.extend(p.value.data().iter().map(|v| v.tof()));
    }
    for st in &gen.bn {
        entries.push(Entry { name: format!("{}.running_mean", st.name), shape: vec![st.mean.len()] });
        values.extend(st.mean.iter().map(|v| v.tof()));
        entries.push(Entry { name: format!("{}.running_var", st.name), shape: vec![st.var.len()] });
        values.extend(st.var.iter().map(|v| v.tof()));
    }
    (entries, values)
}

pub fn save_generator<T: Real>(gen: &Generator<T>, path: &Path) -> Result<()> {
    let (entries, values) = gen_entries(gen);
    let manifest = Manifest {
        format: FORMAT.to_string(),
        kind: "generator".to_string(),
        generator: Some(GenMeta { spec: gen.spec, geom: gen.geom }),
        critic: None,
        entries,
    };
    write_file(path, &manifest, &values)
}

/// Cursor over the flat value blob that checks each entry's identity.
struct Loader<'a> {
    entries: &'a [Entry],
    values: &'a [f64],
    at: usize,
    offset: usize,
}

impl<'a> Loader<'a> {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<&'a [f64]> {
        let e = self.entries.get(self.at).ok_or_else(|| {
            Error::Format(format!("checkpoint is missing entry {name:?}"))
        })?;
        if e.name != name || e.shape != shape {
            return Err(Error::Format(format!(
                "checkpoint entry {} is {:?} {:?}, model expects {:?} {:?}",
                self.at, e.name, e.shape, name, shape
            )));
        }
        let n: usize = shape.iter().product();
        let out = &self.values[self.offset..self.offset + n];
        self.at += 1;
        self.offset += n;
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.entries.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} extra entries (first: {:?})",
                self.entries.len() - self.at,
                self.entries[self.at].name
            )));
        }
        Ok(())
    }
}

pub fn load_generator<T: Real>(path: &Path) -> Result<Generator<T>> {
    let (manifest, values) = read_file(path)?;
    if manifest.kind != "generator" {
        return Err(Error::Format(format!("checkpoint kind {:?} is not a generator", manifest.kind)));
    }
    let meta = manifest
        .generator
        .ok_or_else(|| Error::Format("generator checkpoint lacks spec/geometry".to_string()))?;
    // Structure comes from init (values are all overwritten below).
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut gen: Generator<T> = Generator::init(meta.spec, meta.geom, &mut rng)?;
    let mut ld = Loader { entries: &manifest.entries, values: &values, at: 0, offset: 0 };
    for p in &mut gen.params {
        let s = p.value.shape();
        let src = ld.take(&p.name, &[s.b, s.c, s.nx, s.ny, s.nz])?;
        for (dst, v) in p.value.data_mut().iter_mut().zip(src) {
            *dst = T::fromf(*v);
        }
    }
    for st in &mut gen.bn {
        let src = ld.take(&format!("{}.running_mean", st.name), &[st.mean.len()])?;
        for (dst, v) in st.mean.iter_mut().zip(src) {
            *dst = T::fromf(*v);
        }
        let src = ld.take(&format!("{}.running_var", st.name), &[st.var.len()])?;
        for (dst, v) in st.var.iter_mut().zip(src) {
            *dst = T::fromf(*v);
        }
    }
    ld.finish()?;
    Ok(gen)
}

pub fn save_critic<T: Real>(critic: &Critic<T>, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut values = Vec::new();
    for p in &critic.params {
        let s = p.value.shape();
        entries.push(Entry { name: p.name.clone(), shape: vec![s.b, s.c, s.nx, s.ny, s.nz] });
        values.extend(p.value.data().iter().map(|v| v.tof()));
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        kind: "critic".to_string(),
        generator: None,
        critic: Some(critic.spec),
        entries,
    };
    write_file(path, &manifest, &values)
}

pub fn load_critic<T: Real>(path: &Path) -> Result<Critic<T>> {
    let (manifest, values) = read_file(path)?;
    if manifest.kind != "critic" {
        return Err(Error::Format(format!("checkpoint kind {:?} is not a critic", manifest.kind)));
    }
    let spec = manifest
        .critic
        .ok_or_else(|| Error::Format("critic checkpoint lacks its spec".to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut critic: Critic<T> = Critic::init(spec, &mut rng)?;
    let mut ld = Loader { entries: &manifest.entries, values: &values, at: 0, offset: 0 };
    for p in &mut critic.params {
        let s = p.value.shape();
        let src = ld.take(&p.name, &[s.b, s.c, s.nx, s.ny, s.nz])?;
        for (dst, v) in p.value.data_mut().iter_mut().zip(src) {
            *dst = T::fromf(*v);
        }
    }
    ld.finish()?;
    Ok(critic)
}
