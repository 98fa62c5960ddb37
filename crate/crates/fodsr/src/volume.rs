//! Volume containers: headers, 4D coefficient volumes, tissue fractions.

use crate::error::{FodError, Result};

/// Geometry and typing metadata for a 3D/4D float32 volume.
///
/// `dims` has 3 or 4 entries (voxels); `affine` maps voxel indices to world
/// millimetres and its last row is always `[0,0,0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: Vec<usize>,
    pub voxel_size: [f32; 3],
    pub affine: [[f32; 4]; 4],
    /// Free-form description (stored in the NIfTI `descrip` field).
    pub intent: String,
}

impl VolumeHeader {
    pub fn new(
        dims: Vec<usize>,
        voxel_size: [f32; 3],
        affine: [[f32; 4]; 4],
        intent: impl Into<String>,
    ) -> Result<Self> {
        let h = Self {
            dims,
            voxel_size,
            affine,
            intent: intent.into(),
        };
        h.validate()?;
        Ok(h)
    }

    /// Identity affine scaled by the voxel size, origin at zero.
    pub fn isotropic(dims: Vec<usize>, voxel_mm: f32, intent: impl Into<String>) -> Result<Self> {
        let mut affine = [[0.0f32; 4]; 4];
        for (i, row) in affine.iter_mut().enumerate().take(3) {
            row[i] = voxel_mm;
        }
        affine[3][3] = 1.0;
        Self::new(dims, [voxel_mm; 3], affine, intent)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 3 || self.dims.len() > 4 {
            return Err(FodError::InvalidArgument(format!(
                "header dims must have 3 or 4 entries, got {}",
                self.dims.len()
            )));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(FodError::InvalidArgument(
                "header dims must all be >= 1".into(),
            ));
        }
        if self.voxel_size.iter().any(|&v| !(v > 0.0)) {
            return Err(FodError::InvalidArgument(
                "voxel sizes must be positive".into(),
            ));
        }
        if self.affine[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(FodError::InvalidArgument(
                "affine last row must be [0,0,0,1]".into(),
            ));
        }
        Ok(())
    }

    /// Total number of voxels-times-channels.
    pub fn n_values(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dims[0], self.dims[1], self.dims[2]]
    }

    pub fn n_channels(&self) -> usize {
        if self.dims.len() == 4 {
            self.dims[3]
        } else {
            1
        }
    }

    /// Header for a single-channel volume with the same geometry.
    pub fn scalar_like(&self, intent: impl Into<String>) -> VolumeHeader {
        VolumeHeader {
            dims: self.dims[..3].to_vec(),
            voxel_size: self.voxel_size,
            affine: self.affine,
            intent: intent.into(),
        }
    }
}

/// A 4D grid `[X,Y,Z,C]` of spherical-harmonic coefficients.
///
/// Storage follows the NIfTI convention: x varies fastest, the channel axis
/// is slowest. Flat index = `x + X*(y + Y*(z + Z*c))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FodVolume {
    pub header: VolumeHeader,
    pub data: Vec<f32>,
}

impl FodVolume {
    pub fn new(header: VolumeHeader, data: Vec<f32>) -> Result<Self> {
        header.validate()?;
        if header.dims.len() != 4 {
            return Err(FodError::InvalidArgument(
                "FodVolume requires a 4D header".into(),
            ));
        }
        if data.len() != header.n_values() {
            return Err(FodError::InvalidArgument(format!(
                "data length {} does not match dims product {}",
                data.len(),
                header.n_values()
            )));
        }
        Ok(Self { header, data })
    }

    pub fn zeros(dims: [usize; 3], channels: usize, voxel_mm: f32) -> Result<Self> {
        let header = VolumeHeader::isotropic(
            vec![dims[0], dims[1], dims[2], channels],
            voxel_mm,
            "fod coefficients",
        )?;
        let n = header.n_values();
        Self::new(header, vec![0.0; n])
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        self.header.spatial_dims()
    }

    pub fn n_channels(&self) -> usize {
        self.header.n_channels()
    }

    pub fn n_voxels(&self) -> usize {
        let d = self.spatial_dims();
        d[0] * d[1] * d[2]
    }

    #[inline]
    pub fn value_index(&self, x: usize, y: usize, z: usize, c: usize) -> usize {
        let [nx, ny, nz] = self.spatial_dims();
        debug_assert!(x < nx && y < ny && z < nz && c < self.n_channels());
        x + nx * (y + ny * (z + nz * c))
    }

    /// Copy the coefficient vector of one voxel into `out`.
    pub fn coeffs_at(&self, x: usize, y: usize, z: usize, out: &mut [f64]) {
        let stride = self.n_voxels();
        let base = {
            let [nx, ny, _] = self.spatial_dims();
            x + nx * (y + ny * z)
        };
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.data[base + c * stride] as f64;
        }
    }

    pub fn set_coeffs_at(&mut self, x: usize, y: usize, z: usize, coeffs: &[f64]) {
        let stride = self.n_voxels();
        let base = {
            let [nx, ny, _] = self.spatial_dims();
            x + nx * (y + ny * z)
        };
        for (c, &v) in coeffs.iter().enumerate() {
            self.data[base + c * stride] = v as f32;
        }
    }
}

/// Co-registered WM / cortical-GM / subcortical-GM fraction maps.
///
/// Each per-voxel fraction lies in `[0,1]`; the three sum to at most 1.
/// Storage is x-fastest, matching [`FodVolume`].
#[derive(Debug, Clone, PartialEq)]
pub struct TissueFractions {
    pub dims: [usize; 3],
    pub wm: Vec<f32>,
    pub cgm: Vec<f32>,
    pub sgm: Vec<f32>,
}

impl TissueFractions {
    pub fn new(dims: [usize; 3], wm: Vec<f32>, cgm: Vec<f32>, sgm: Vec<f32>) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if wm.len() != n || cgm.len() != n || sgm.len() != n {
            return Err(FodError::InvalidArgument(
                "tissue fraction maps must match the volume dims".into(),
            ));
        }
        Ok(Self {
            dims,
            wm,
            cgm,
            sgm,
        })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self {
            dims,
            wm: vec![0.0; n],
            cgm: vec![0.0; n],
            sgm: vec![0.0; n],
        }
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Summed tissue fraction at a flat voxel index.
    #[inline]
    pub fn total(&self, i: usize) -> f32 {
        self.wm[i] + self.cgm[i] + self.sgm[i]
    }

    /// A voxel counts as tissue when its summed fraction exceeds 0.5.
    #[inline]
    pub fn is_tissue(&self, i: usize) -> bool {
        self.total(i) > 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_rejects_bad_dims() {
        assert!(VolumeHeader::isotropic(vec![4, 4], 1.0, "x").is_err());
        assert!(VolumeHeader::isotropic(vec![4, 0, 4], 1.0, "x").is_err());
        assert!(VolumeHeader::isotropic(vec![4, 4, 4, 45, 2], 1.0, "x").is_err());
    }

    #[test]
    fn header_rejects_bad_affine_row() {
        let mut h = VolumeHeader::isotropic(vec![4, 4, 4], 1.0, "x").unwrap();
        h.affine[3] = [0.0, 0.0, 0.0, 2.0];
        assert!(h.validate().is_err());
    }

    #[test]
    fn volume_coeff_roundtrip() {
        let mut v = FodVolume::zeros([3, 4, 5], 6, 1.25).unwrap();
        let coeffs: Vec<f64> = (0..6).map(|c| c as f64 * 0.5 - 1.0).collect();
        v.set_coeffs_at(2, 1, 3, &coeffs);
        let mut out = vec![0.0; 6];
        v.coeffs_at(2, 1, 3, &mut out);
        assert_eq!(out, coeffs);
        // neighbours untouched
        v.coeffs_at(1, 1, 3, &mut out);
        assert!(out.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn volume_rejects_length_mismatch() {
        let h = VolumeHeader::isotropic(vec![2, 2, 2, 3], 1.0, "x").unwrap();
        assert!(FodVolume::new(h, vec![0.0; 7]).is_err());
    }
}
