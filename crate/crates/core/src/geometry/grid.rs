use std::io::{Read, Write};
use std::path::Path;

use super::camera::Vec3;
use super::GeometryError;

fn f32_precision(v: f64) -> f64 {
    v as f32 as f64
}

/// Axis-aligned voxel lattice. Voxel `(x, y, z)` covers
/// `origin + [x, x+1) · voxel_size` on each axis.
///
/// Origin, voxel size and truncation are held at `f32` precision so that a
/// grid read back from disk is identical to the one written.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub voxel_size: f64,
    pub truncation: f64,
}

impl GridSpec {
    pub fn new(dims: [usize; 3], origin: Vec3, voxel_size: f64, truncation: f64) -> Result<Self, GeometryError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(GeometryError::InvalidGrid(format!(
                "all dims must be ≥ 1, got {dims:?}"
            )));
        }
        if !(voxel_size > 0.0 && truncation > 0.0) {
            return Err(GeometryError::InvalidGrid(format!(
                "voxel_size and truncation must be positive, got {voxel_size} and {truncation}"
            )));
        }
        Ok(GridSpec {
            dims,
            origin: origin.map(f32_precision),
            voxel_size: f32_precision(voxel_size),
            truncation: f32_precision(truncation),
        })
    }

    /// 240×144×240 voxels of 2 cm, truncation 0.24 m (4.8 × 2.88 × 4.8 m).
    pub fn full_scale() -> Self {
        Self::new([240, 144, 240], [0.0; 3], 0.02, 0.24).unwrap()
    }

    /// 24×16×24 voxels of 20 cm with a 0.8 m truncation band.
    pub fn desk() -> Self {
        Self::new([24, 16, 24], [0.0; 3], 0.2, 0.8).unwrap()
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn extent(&self) -> Vec3 {
        [0, 1, 2].map(|a| self.dims[a] as f64 * self.voxel_size)
    }

    /// Flat index, x slowest and z fastest.
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let z = index % self.dims[2];
        let y = (index / self.dims[2]) % self.dims[1];
        let x = index / (self.dims[1] * self.dims[2]);
        [x, y, z]
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        [
            self.origin[0] + (x as f64 + 0.5) * self.voxel_size,
            self.origin[1] + (y as f64 + 0.5) * self.voxel_size,
            self.origin[2] + (z as f64 + 0.5) * self.voxel_size,
        ]
    }

    /// Voxel containing a world point.
    pub fn locate(&self, p: Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    /// Spec of the grid coarsened by `factor` on every axis.
    pub fn downsampled(&self, factor: usize) -> Result<GridSpec, GeometryError> {
        if factor == 0 || self.dims.iter().any(|d| d % factor != 0) {
            return Err(GeometryError::InvalidGrid(format!(
                "dims {:?} not divisible by {factor}",
                self.dims
            )));
        }
        GridSpec::new(
            self.dims.map(|d| d / factor),
            self.origin,
            self.voxel_size * factor as f64,
            self.truncation,
        )
    }
}

/// Element types storable in a VXG1 file.
pub trait VoxelScalar: Copy + Default + PartialEq + std::fmt::Debug {
    const TAG: u8;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl VoxelScalar for f32 {
    const TAG: u8 = 0;
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl VoxelScalar for u8 {
    const TAG: u8 = 1;
    const SIZE: usize = 1;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

/// Dense multi-channel voxel payload indexed (channel, x, y, z).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T = f32> {
    pub spec: GridSpec,
    pub channels: usize,
    pub values: Vec<T>,
}

pub type LabelGrid = VoxelGrid<u8>;

const VXG_MAGIC: &[u8; 4] = b"VXG1";

impl<T: VoxelScalar> VoxelGrid<T> {
    pub fn filled(spec: GridSpec, channels: usize, value: T) -> Self {
        VoxelGrid {
            spec,
            channels,
            values: vec![value; channels * spec.voxel_count()],
        }
    }

    pub fn from_values(spec: GridSpec, channels: usize, values: Vec<T>) -> Result<Self, GeometryError> {
        if values.len() != channels * spec.voxel_count() {
            return Err(GeometryError::DimensionMismatch(format!(
                "{} values for {channels} channels of {:?}",
                values.len(),
                spec.dims
            )));
        }
        Ok(VoxelGrid { spec, channels, values })
    }

    pub fn get(&self, channel: usize, x: usize, y: usize, z: usize) -> T {
        self.values[channel * self.spec.voxel_count() + self.spec.index(x, y, z)]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.spec.voxel_count();
        &self.values[c * n..(c + 1) * n]
    }

    /// VXG1 encoding: magic, `u32` channels/nx/ny/nz, `f32` origin[3],
    /// voxel_size and truncation, a `u8` dtype tag (0 = f32, 1 = u8), then the
    /// little-endian payload in (channel, x, y, z) order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(41 + self.values.len() * T::SIZE);
        out.extend_from_slice(VXG_MAGIC);
        for v in [self.channels, self.spec.dims[0], self.spec.dims[1], self.spec.dims[2]] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in self
            .spec
            .origin
            .iter()
            .chain([&self.spec.voxel_size, &self.spec.truncation])
        {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.push(T::TAG);
        for &v in &self.values {
            v.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GeometryError> {
        const HEADER: usize = 4 + 16 + 20 + 1;
        if bytes.len() < HEADER {
            return Err(GeometryError::FormatViolation(format!(
                "VXG1 header truncated ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[..4] != VXG_MAGIC {
            return Err(GeometryError::FormatViolation("bad magic, expected VXG1".into()));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let f = |i: usize| f32::from_le_bytes(bytes[20 + 4 * i..24 + 4 * i].try_into().unwrap()) as f64;
        let channels = u(0);
        let dims = [u(1), u(2), u(3)];
        let spec = GridSpec::new(dims, [f(0), f(1), f(2)], f(3), f(4))
            .map_err(|e| GeometryError::FormatViolation(format!("invalid grid header: {e}")))?;
        let tag = bytes[40];
        if tag != T::TAG {
            return Err(GeometryError::FormatViolation(format!(
                "dtype tag {tag}, expected {}",
                T::TAG
            )));
        }
        let n = channels
            .checked_mul(spec.voxel_count())
            .ok_or_else(|| GeometryError::FormatViolation("payload size overflows".into()))?;
        let payload = &bytes[HEADER..];
        if payload.len() != n * T::SIZE {
            return Err(GeometryError::FormatViolation(format!(
                "payload holds {} bytes, header implies {}",
                payload.len(),
                n * T::SIZE
            )));
        }
        let values = payload.chunks_exact(T::SIZE).map(T::read_le).collect();
        Ok(VoxelGrid { spec, channels, values })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), GeometryError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, GeometryError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), GeometryError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, GeometryError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_constants() {
        let g = GridSpec::full_scale();
        assert_eq!(g.dims, [240, 144, 240]);
        let e = g.extent();
        assert!((e[0] - 4.8).abs() < 1e-5 && (e[1] - 2.88).abs() < 1e-5 && (e[2] - 4.8).abs() < 1e-5);
        assert!((g.truncation - 0.24).abs() < 1e-7);
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(GridSpec::new([0, 1, 1], [0.0; 3], 0.1, 0.1).is_err());
        assert!(GridSpec::new([1, 1, 1], [0.0; 3], 0.0, 0.1).is_err());
        assert!(GridSpec::new([1, 1, 1], [0.0; 3], 0.1, -1.0).is_err());
    }

    #[test]
    fn index_coords_inverse() {
        let g = GridSpec::desk();
        for i in [0, 1, 23, 24 * 16, 9215] {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
    }

    #[test]
    fn locate_matches_centers() {
        let g = GridSpec::desk();
        assert_eq!(g.locate(g.voxel_center(3, 7, 11)), Some([3, 7, 11]));
        assert_eq!(g.locate([-0.01, 0.0, 0.0]), None);
        assert_eq!(g.locate([0.0, 100.0, 0.0]), None);
    }

    #[test]
    fn vxg1_round_trip_and_violations() {
        let spec = GridSpec::new([2, 3, 4], [0.5, -1.0, 0.25], 0.2, 0.8).unwrap();
        let grid = VoxelGrid::from_values(spec, 2, (0..48).map(|i| i as f32 * 0.1 - 1.0).collect()).unwrap();
        let bytes = grid.to_bytes();
        assert_eq!(VoxelGrid::<f32>::from_bytes(&bytes).unwrap(), grid);
        assert!(matches!(
            VoxelGrid::<f32>::from_bytes(&bytes[..bytes.len() - 1]),
            Err(GeometryError::FormatViolation(_))
        ));
        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(matches!(
            VoxelGrid::<f32>::from_bytes(&bad),
            Err(GeometryError::FormatViolation(_))
        ));
        assert!(matches!(
            VoxelGrid::<u8>::from_bytes(&bytes),
            Err(GeometryError::FormatViolation(_))
        ));
    }
}
