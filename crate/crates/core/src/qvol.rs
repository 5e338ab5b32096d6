//! `.qvol` on-disk volume format.
//!
//! One UTF-8 JSON header line, then the raw samples:
//!
//! ```text
//! {"magic":"qvol1","dims":[nx,ny,nz],"voxel_size_mm":[dx,dy,dz],"quantity":"...","dtype":"f64le"}\n
//! <nx*ny*nz little-endian f64, x fastest>
//! ```
//!
//! Writing the same volume twice produces byte-identical files.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Dims, Quantity, Volume};

pub const MAGIC: &str = "qvol1";
pub const DTYPE: &str = "f64le";

/// Field order here is the on-disk header order; do not reorder.
#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    quantity: Quantity,
    dtype: String,
}

/// Serializes a volume to `.qvol` bytes.
pub fn to_bytes(volume: &Volume<f64>) -> Result<Vec<u8>> {
    let header = Header {
        magic: MAGIC.to_string(),
        dims: volume.dims().as_array(),
        voxel_size_mm: volume.voxel_size_mm(),
        quantity: volume.quantity(),
        dtype: DTYPE.to_string(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(volume.data().len() * 8);
    for v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write(path: impl AsRef<Path>, volume: &Volume<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&to_bytes(volume)?)?;
    w.flush()?;
    Ok(())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Volume<f64>> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Format(format!("bad qvol header: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", header.magic)));
    }
    if header.dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    let dims = Dims::new(header.dims[0], header.dims[1], header.dims[2])?;
    let blob = &bytes[nl + 1..];
    if blob.len() != dims.len() * 8 {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {} for dims {:?}",
            blob.len(),
            dims.len() * 8,
            header.dims
        )));
    }
    let data: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Volume::new(dims, header.voxel_size_mm, header.quantity, data)
}

pub fn read(path: impl AsRef<Path>) -> Result<Volume<f64>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
