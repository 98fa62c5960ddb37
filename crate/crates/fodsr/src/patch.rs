//! Tissue-gated random 3D patch sampling, extraction, and insertion.

use crate::error::{FodError, Result};
use crate::volume::{FodVolume, TissueFractions};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// An axis-aligned sub-block of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub origin: [usize; 3],
    pub size: [usize; 3],
}

impl PatchSpec {
    pub fn new(origin: [usize; 3], size: [usize; 3]) -> Self {
        Self { origin, size }
    }

    pub fn check_bounds(&self, dims: [usize; 3]) -> Result<()> {
        for a in 0..3 {
            if self.size[a] == 0 {
                return Err(FodError::InvalidArgument(format!(
                    "patch size axis {a} must be ≥ 1"
                )));
            }
            if self.origin[a] + self.size[a] > dims[a] {
                return Err(FodError::InvalidArgument(format!(
                    "patch origin {:?} + size {:?} exceeds dims {:?} on axis {a}",
                    self.origin, self.size, dims
                )));
            }
        }
        Ok(())
    }

    pub fn n_voxels(&self) -> usize {
        self.size[0] * self.size[1] * self.size[2]
    }
}

/// Fraction of patch voxels that are majority-tissue (summed fraction > 0.5).
pub fn tissue_fraction(masks: &TissueFractions, spec: &PatchSpec) -> Result<f64> {
    spec.check_bounds(masks.dims)?;
    let mut tissue = 0usize;
    for z in spec.origin[2]..spec.origin[2] + spec.size[2] {
        for y in spec.origin[1]..spec.origin[1] + spec.size[1] {
            for x in spec.origin[0]..spec.origin[0] + spec.size[0] {
                if masks.is_tissue(masks.index(x, y, z)) {
                    tissue += 1;
                }
            }
        }
    }
    Ok(tissue as f64 / spec.n_voxels() as f64)
}

/// Rejection-sample a uniformly placed patch whose [`tissue_fraction`] is at
/// least `min_frac`. Deterministic given `rng_seed`.
pub fn sample_patch(
    masks: &TissueFractions,
    size: [usize; 3],
    min_frac: f64,
    rng_seed: u64,
    max_attempts: usize,
) -> Result<PatchSpec> {
    for a in 0..3 {
        if size[a] == 0 || size[a] > masks.dims[a] {
            return Err(FodError::InvalidArgument(format!(
                "patch size {:?} invalid for volume dims {:?}",
                size, masks.dims
            )));
        }
    }
    if !(0.0..=1.0).contains(&min_frac) {
        return Err(FodError::InvalidArgument(format!(
            "min_frac {min_frac} must be in [0,1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for _ in 0..max_attempts {
        let origin = [
            rng.random_range(0..=masks.dims[0] - size[0]),
            rng.random_range(0..=masks.dims[1] - size[1]),
            rng.random_range(0..=masks.dims[2] - size[2]),
        ];
        let spec = PatchSpec::new(origin, size);
        if tissue_fraction(masks, &spec)? >= min_frac {
            return Ok(spec);
        }
    }
    Err(FodError::Sampling(format!(
        "no patch with tissue fraction ≥ {min_frac} found in {max_attempts} attempts \
         (degenerate mask?)"
    )))
}

/// A dense patch tensor `[sx, sy, sz, C]`, channel-fastest:
/// index = `((x·sy + y)·sz + z)·C + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: [usize; 3],
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Patch {
    pub fn zeros(size: [usize; 3], channels: usize) -> Self {
        Self {
            size,
            channels,
            data: vec![0.0; size[0] * size[1] * size[2] * channels],
        }
    }

    pub fn n_values(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize, c: usize) -> usize {
        ((x * self.size[1] + y) * self.size[2] + z) * self.channels + c
    }
}

/// Copy a sub-block out of a volume (no aliasing with the source).
pub fn extract(vol: &FodVolume, spec: &PatchSpec) -> Result<Patch> {
    spec.check_bounds(vol.spatial_dims())?;
    let channels = vol.n_channels();
    let [nx, ny, _nz] = vol.spatial_dims();
    let stride_c = vol.n_voxels();
    let mut patch = Patch::zeros(spec.size, channels);
    let mut i = 0;
    for x in spec.origin[0]..spec.origin[0] + spec.size[0] {
        for y in spec.origin[1]..spec.origin[1] + spec.size[1] {
            for z in spec.origin[2]..spec.origin[2] + spec.size[2] {
                let base = x + nx * (y + ny * z);
                for c in 0..channels {
                    patch.data[i] = vol.data[base + c * stride_c];
                    i += 1;
                }
            }
        }
    }
    Ok(patch)
}

/// Write a patch back into a volume at `spec`.
pub fn insert(vol: &mut FodVolume, spec: &PatchSpec, patch: &Patch) -> Result<()> {
    spec.check_bounds(vol.spatial_dims())?;
    if patch.size != spec.size || patch.channels != vol.n_channels() {
        return Err(FodError::InvalidArgument(format!(
            "patch shape {:?}×{} does not match spec {:?}×{}",
            patch.size,
            patch.channels,
            spec.size,
            vol.n_channels()
        )));
    }
    let [nx, ny, _nz] = vol.spatial_dims();
    let stride_c = vol.n_voxels();
    let mut i = 0;
    for x in spec.origin[0]..spec.origin[0] + spec.size[0] {
        for y in spec.origin[1]..spec.origin[1] + spec.size[1] {
            for z in spec.origin[2]..spec.origin[2] + spec.size[2] {
                let base = x + nx * (y + ny * z);
                for c in 0..vol.n_channels() {
                    vol.data[base + c * stride_c] = patch.data[i];
                    i += 1;
                }
            }
        }
    }
    Ok(())
}
