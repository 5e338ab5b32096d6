//! Dense 5-D tensors, layout (batch, channel, x, y, z) with x fastest —
//! a Volume's buffer drops straight into a (1,1,nx,ny,nz) tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Quantity, Volume};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Shape5 {
    pub b: usize,
    pub c: usize,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Shape5 {
    pub fn new(b: usize, c: usize, nx: usize, ny: usize, nz: usize) -> Self {
        Shape5 { b, c, nx, ny, nz }
    }

    pub fn scalar() -> Self {
        Shape5::new(1, 1, 1, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.b * self.c * self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn spatial_len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(b < self.b && c < self.c && x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * (z + self.nz * (c + self.c * b)))
    }

    pub fn with_spatial(&self, s: [usize; 3]) -> Shape5 {
        Shape5 { nx: s[0], ny: s[1], nz: s[2], ..*self }
    }
}

impl std::fmt::Display for Shape5 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{},{})", self.b, self.c, self.nx, self.ny, self.nz)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape5,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape5) -> Tensor<T> {
        Tensor { shape, data: vec![T::zero(); shape.len()] }
    }

    pub fn filled(shape: Shape5, v: T) -> Tensor<T> {
        Tensor { shape, data: vec![v; shape.len()] }
    }

    pub fn from_vec(shape: Shape5, data: Vec<T>) -> Result<Tensor<T>> {
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "tensor data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: T) -> Tensor<T> {
        Tensor { shape: Shape5::scalar(), data: vec![v] }
    }

    /// Wraps a volume as a (1, 1, nx, ny, nz) tensor (same buffer order).
    pub fn from_volume(v: &Volume<T>) -> Tensor<T> {
        let d = v.dims();
        Tensor {
            shape: Shape5::new(1, 1, d.nx, d.ny, d.nz),
            data: v.data().to_vec(),
        }
    }

    /// Extracts batch sample `b`, channel 0 into a volume; requires c == 1.
    pub fn to_volume(&self, b: usize, voxel_size_mm: [f64; 3], quantity: Quantity) -> Result<Volume<T>> {
        if self.shape.c != 1 || b >= self.shape.b {
            return Err(Error::invalid(format!(
                "cannot view tensor {} sample {b} as a volume",
                self.shape
            )));
        }
        let dims = crate::volume::Dims::new(self.shape.nx, self.shape.ny, self.shape.nz)?;
        let n = self.shape.spatial_len();
        Volume::new(dims, voxel_size_mm, quantity, self.data[b * n..(b + 1) * n].to_vec())
    }

    pub fn shape(&self) -> Shape5 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, x: usize, y: usize, z: usize) -> T {
        self.data[self.shape.index(b, c, x, y, z)]
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.shape.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::fromf(v.tof())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    #[test]
    fn layout_is_x_fastest_then_y_z_c_b() {
        let s = Shape5::new(2, 3, 4, 5, 6);
        assert_eq!(s.index(0, 0, 1, 0, 0), 1);
        assert_eq!(s.index(0, 0, 0, 1, 0), 4);
        assert_eq!(s.index(0, 0, 0, 0, 1), 20);
        assert_eq!(s.index(0, 1, 0, 0, 0), 120);
        assert_eq!(s.index(1, 0, 0, 0, 0), 360);
        assert_eq!(s.len(), 720);
    }

    #[test]
    fn volume_round_trip_preserves_order() {
        let dims = Dims::new(3, 4, 5).unwrap();
        let v = Volume::from_fn(dims, [1.0; 3], Quantity::Arbitrary, |x, y, z| {
            (x + 10 * y + 100 * z) as f64
        })
        .unwrap();
        let t = Tensor::from_volume(&v);
        assert_eq!(t.shape(), Shape5::new(1, 1, 3, 4, 5));
        assert_eq!(t.data(), v.data());
        assert_eq!(t.at(0, 0, 2, 1, 3), v.at(2, 1, 3));
        let back = t.to_volume(0, [1.0; 3], Quantity::Arbitrary).unwrap();
        assert_eq!(back.data(), v.data());
    }

    #[test]
    fn from_vec_validates_length() {
        assert!(Tensor::from_vec(Shape5::new(1, 1, 2, 2, 2), vec![0.0f64; 7]).is_err());
        assert!(Tensor::from_vec(Shape5::new(1, 1, 2, 2, 2), vec![0.0f64; 8]).is_ok());
    }
}
