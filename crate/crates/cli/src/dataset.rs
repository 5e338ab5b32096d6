//! Dataset directory layout: one subdirectory per subject, each holding
//! `chi.qvol`, `field.qvol`, and `mask.qvol`.

use std::fs;
use std::path::{Path, PathBuf};

use qsmforge_core::phantom::Sample;
use qsmforge_core::qvol;

use crate::{CliError, CliResult};

pub const CHI: &str = "chi.qvol";
pub const FIELD: &str = "field.qvol";
pub const MASK: &str = "mask.qvol";

pub struct Subject {
    pub name: String,
    pub dir: PathBuf,
}

impl Subject {
    pub fn chi(&self) -> PathBuf {
        self.dir.join(CHI)
    }

    pub fn field(&self) -> PathBuf {
        self.dir.join(FIELD)
    }

    pub fn mask(&self) -> PathBuf {
        self.dir.join(MASK)
    }

    pub fn load(&self) -> CliResult<Sample<f64>> {
        let chi = read_qvol(&self.chi())?;
        let field = read_qvol(&self.field())?;
        let mask = read_qvol(&self.mask())?;
        chi.same_grid(&field).map_err(|e| CliError::in_file(&self.dir, e))?;
        chi.same_grid(&mask).map_err(|e| CliError::in_file(&self.dir, e))?;
        Ok(Sample { chi, field, mask })
    }
}

/// Lists subject subdirectories (those containing `chi.qvol`), sorted by
/// name so subject order — and thus everything downstream — is stable.
pub fn list_subjects(dir: &Path) -> CliResult<Vec<Subject>> {
    let mut subjects = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| CliError::in_file(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::in_file(dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join(CHI).is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            subjects.push(Subject { name, dir: path });
        }
    }
    subjects.sort_by(|a, b| a.name.cmp(&b.name));
    if subjects.is_empty() {
        return Err(CliError::data(format!(
            "{}: no subject directories (expected subdirs containing {CHI})",
            dir.display()
        )));
    }
    Ok(subjects)
}

pub fn read_qvol(path: &Path) -> CliResult<qsmforge_core::VolumeF64> {
    qvol::read(path).map_err(|e| CliError::in_file(path, e))
}

pub fn write_qvol(path: &Path, vol: &qsmforge_core::VolumeF64) -> CliResult {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CliError::in_file(parent, e))?;
        }
    }
    qvol::write(path, vol).map_err(|e| CliError::in_file(path, e))
}

/// Writes one subject's three volumes, returning the paths written.
pub fn write_subject(dir: &Path, sample: &Sample<f64>) -> CliResult<Vec<PathBuf>> {
    let paths = [dir.join(CHI), dir.join(FIELD), dir.join(MASK)];
    write_qvol(&paths[0], &sample.chi)?;
    write_qvol(&paths[1], &sample.field)?;
    write_qvol(&paths[2], &sample.mask)?;
    Ok(paths.to_vec())
}
