//! Whole-volume super-resolution via overlap-blended sliding windows.

use crate::error::{FodError, Result};
use crate::model::{forward, Checkpoint};
use crate::patch::{extract, PatchSpec};
use crate::volume::FodVolume;
use std::time::Instant;

/// How overlapping tile predictions are weighted before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlendMode {
    /// Every voxel of every tile contributes weight 1.
    #[default]
    Uniform,
    /// Separable raised-cosine taper with a positive floor, so seams are
    /// down-weighted but total weight never vanishes.
    CosineTaper,
}

/// A sliding-window cover of a volume.
#[derive(Debug, Clone)]
pub struct TilePlan {
    pub specs: Vec<PatchSpec>,
    pub stride: [usize; 3],
    /// Per-voxel blend weights of one patch (`[p0*p1*p2]`, x-major like
    /// patch tensors), all > 0.
    pub blend: Vec<f32>,
}

fn axis_origins(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut origins = Vec::new();
    let mut o = 0;
    while o + patch <= dim {
        origins.push(o);
        o += stride;
    }
    let last = dim - patch;
    if *origins.last().expect("at least origin 0") != last {
        origins.push(last);
    }
    origins
}

fn blend_window(patch: [usize; 3], mode: BlendMode) -> Vec<f32> {
    let n = patch[0] * patch[1] * patch[2];
    match mode {
        BlendMode::Uniform => vec![1.0; n],
        BlendMode::CosineTaper => {
            let axis = |p: usize| -> Vec<f32> {
                (0..p)
                    .map(|i| {
                        let t = (i as f32 + 0.5) / p as f32;
                        // Hann lifted by a floor to keep weights positive.
                        0.05 + 0.95 * 0.5 * (1.0 - (2.0 * std::f32::consts::PI * t).cos())
                    })
                    .collect()
            };
            let (wx, wy, wz) = (axis(patch[0]), axis(patch[1]), axis(patch[2]));
            let mut w = Vec::with_capacity(n);
            for x in 0..patch[0] {
                for y in 0..patch[1] {
                    for z in 0..patch[2] {
                        w.push(wx[x] * wy[y] * wz[z]);
                    }
                }
            }
            w
        }
    }
}

/// Plan a full cover of `dims` by `patch`-sized tiles with the given overlap
/// fraction. Stride is `floor(patch·(1−overlap))` (at least 1); the last
/// origin per axis is clamped to `dims − patch`.
pub fn tile_volume(
    dims: [usize; 3],
    patch: [usize; 3],
    overlap: f64,
    mode: BlendMode,
) -> Result<TilePlan> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(FodError::InvalidArgument(format!(
            "overlap {overlap} must lie in [0,1)"
        )));
    }
    let mut stride = [0usize; 3];
    for a in 0..3 {
        if patch[a] == 0 || patch[a] > dims[a] {
            return Err(FodError::InvalidArgument(format!(
                "patch {patch:?} does not fit volume {dims:?} on axis {a}"
            )));
        }
        stride[a] = ((patch[a] as f64 * (1.0 - overlap)).floor() as usize).max(1);
    }
    let ox = axis_origins(dims[0], patch[0], stride[0]);
    let oy = axis_origins(dims[1], patch[1], stride[1]);
    let oz = axis_origins(dims[2], patch[2], stride[2]);
    let mut specs = Vec::with_capacity(ox.len() * oy.len() * oz.len());
    for &x in &ox {
        for &y in &oy {
            for &z in &oz {
                specs.push(PatchSpec::new([x, y, z], patch));
            }
        }
    }
    Ok(TilePlan {
        specs,
        stride,
        blend: blend_window(patch, mode),
    })
}

impl TilePlan {
    /// Origins used along one axis (sorted, deduplicated view for tests).
    pub fn axis_origins(&self, axis: usize) -> Vec<usize> {
        let mut o: Vec<usize> = self.specs.iter().map(|s| s.origin[axis]).collect();
        o.sort_unstable();
        o.dedup();
        o
    }
}

/// What the sliding-window pass did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceReport {
    pub forward_passes: usize,
    pub tiles: usize,
    pub seconds: f64,
}

/// Run the model over every tile and blend overlapping predictions.
///
/// Per tile: normalize with the checkpoint's per-channel stats, forward,
/// denormalize, accumulate weighted; the final voxel value is the weighted
/// mean. When `mask` is given, voxels outside it pass through unchanged.
pub fn super_resolve(
    ckpt: &Checkpoint,
    input: &FodVolume,
    overlap: f64,
    mask: Option<&[bool]>,
    mode: BlendMode,
) -> Result<(FodVolume, InferenceReport)> {
    let t0 = Instant::now();
    let dims = input.spatial_dims();
    let channels = input.n_channels();
    if channels != ckpt.config.in_channels {
        return Err(FodError::InvalidArgument(format!(
            "input has {channels} channels, checkpoint expects {}",
            ckpt.config.in_channels
        )));
    }
    if let Some(m) = mask {
        if m.len() != input.n_voxels() {
            return Err(FodError::InvalidArgument(
                "mask length does not match volume".into(),
            ));
        }
    }
    let plan = tile_volume(dims, ckpt.config.patch_size, overlap, mode)?;

    let mut accum = vec![0.0f64; input.data.len()];
    let mut wsum = vec![0.0f64; input.n_voxels()];
    let mut forward_passes = 0usize;

    for spec in &plan.specs {
        let mut patch = extract(input, spec)?;
        ckpt.normalize(&mut patch.data);
        let out = forward(&ckpt.params, &ckpt.config, &patch.data)?;
        forward_passes += 1;
        let mut out_patch = patch; // reuse shape bookkeeping
        out_patch.data = out;
        ckpt.denormalize(&mut out_patch.data);
        accumulate_tile(
            &mut accum,
            &mut wsum,
            dims,
            channels,
            spec,
            &out_patch.data,
            &plan.blend,
        );
    }

    let output = finalize(accum, wsum, input, mask)?;
    Ok((
        output,
        InferenceReport {
            forward_passes,
            tiles: plan.specs.len(),
            seconds: t0.elapsed().as_secs_f64(),
        },
    ))
}

/// Add one tile's weighted prediction into the accumulators.
/// Exposed for order-independence tests.
pub fn accumulate_tile(
    accum: &mut [f64],
    wsum: &mut [f64],
    dims: [usize; 3],
    channels: usize,
    spec: &PatchSpec,
    tile_values: &[f32],
    blend: &[f32],
) {
    let n_vox = dims[0] * dims[1] * dims[2];
    let mut t = 0; // tile voxel counter (x-major, matching Patch layout)
    for x in spec.origin[0]..spec.origin[0] + spec.size[0] {
        for y in spec.origin[1]..spec.origin[1] + spec.size[1] {
            for z in spec.origin[2]..spec.origin[2] + spec.size[2] {
                let w = blend[t] as f64;
                let vi = x + dims[0] * (y + dims[1] * z);
                wsum[vi] += w;
                for c in 0..channels {
                    accum[vi + c * n_vox] += w * tile_values[t * channels + c] as f64;
                }
                t += 1;
            }
        }
    }
}

/// Divide accumulated values by total weights; outside-mask voxels copy the
/// input through unchanged.
pub fn finalize(
    accum: Vec<f64>,
    wsum: Vec<f64>,
    input: &FodVolume,
    mask: Option<&[bool]>,
) -> Result<FodVolume> {
    let n_vox = input.n_voxels();
    let channels = input.n_channels();
    let mut out = input.clone();
    out.header.intent = "super-resolved fod coefficients".into();
    for vi in 0..n_vox {
        let w = wsum[vi];
        if w <= 0.0 {
            return Err(FodError::Numerical(format!(
                "voxel {vi} received no tile coverage"
            )));
        }
        if let Some(m) = mask {
            if !m[vi] {
                continue; // keep input values
            }
        }
        for c in 0..channels {
            out.data[vi + c * n_vox] = (accum[vi + c * n_vox] / w) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{identity_checkpoint, ModelConfig};
    use crate::phantom::gen_phantom;

    #[test]
    fn paper_scale_tiling_clamps_last_origin() {
        // dims 145, patch 96, overlap 0.25 → stride 72, origins {0, 49}
        let plan = tile_volume([145, 174, 145], [96, 96, 96], 0.25, BlendMode::Uniform).unwrap();
        assert_eq!(plan.stride, [72, 72, 72]);
        assert_eq!(plan.axis_origins(0), vec![0, 49]);
        assert_eq!(plan.axis_origins(2), vec![0, 49]);
        // axis 1: dim 174 → origins 0, 72, clamp 78
        assert_eq!(plan.axis_origins(1), vec![0, 72, 78]);
    }

    #[test]
    fn tiling_origin_arithmetic() {
        // dims 64, patch 32, overlap 0.25 → stride 24, origins {0, 24, 32}
        let plan = tile_volume([64, 64, 64], [32, 32, 32], 0.25, BlendMode::Uniform).unwrap();
        assert_eq!(plan.stride, [24, 24, 24]);
        assert_eq!(plan.axis_origins(0), vec![0, 24, 32]);
        assert_eq!(plan.specs.len(), 27);
    }

    #[test]
    fn zero_overlap_gives_disjoint_tiles() {
        let plan = tile_volume([64, 64, 64], [32, 32, 32], 0.0, BlendMode::Uniform).unwrap();
        assert_eq!(plan.stride, [32, 32, 32]);
        assert_eq!(plan.axis_origins(0), vec![0, 32]);
        assert_eq!(plan.specs.len(), 8);
    }

    #[test]
    fn oversized_patch_errors() {
        assert!(tile_volume([16, 16, 16], [32, 32, 32], 0.25, BlendMode::Uniform).is_err());
        assert!(tile_volume([16, 16, 16], [8, 8, 8], 1.0, BlendMode::Uniform).is_err());
    }

    #[test]
    fn coverage_is_complete_and_weights_positive() {
        for &mode in &[BlendMode::Uniform, BlendMode::CosineTaper] {
            let dims = [20, 13, 17];
            let plan = tile_volume(dims, [8, 8, 8], 0.25, mode).unwrap();
            assert!(plan.blend.iter().all(|&w| w > 0.0));
            let mut covered = vec![0u32; dims[0] * dims[1] * dims[2]];
            for spec in &plan.specs {
                for x in spec.origin[0]..spec.origin[0] + 8 {
                    for y in spec.origin[1]..spec.origin[1] + 8 {
                        for z in spec.origin[2]..spec.origin[2] + 8 {
                            covered[x + dims[0] * (y + dims[1] * z)] += 1;
                        }
                    }
                }
            }
            assert!(covered.iter().all(|&c| c >= 1), "uncovered voxel ({mode:?})");
        }
    }

    fn desk_identity() -> crate::model::Checkpoint {
        identity_checkpoint(&ModelConfig::default()).unwrap()
    }

    #[test]
    fn identity_checkpoint_roundtrips_volume() {
        let (vol, _) = gen_phantom([24, 24, 24], 4).unwrap();
        let ckpt = desk_identity();
        let (out, report) = super_resolve(&ckpt, &vol, 0.25, None, BlendMode::Uniform).unwrap();
        assert_eq!(report.forward_passes, report.tiles);
        for (a, b) in out.data.iter().zip(&vol.data) {
            assert!((a - b).abs() < 1e-5, "identity violated: {a} vs {b}");
        }
    }

    #[test]
    fn masked_voxels_pass_through_unchanged() {
        let (vol, _) = gen_phantom([24, 24, 24], 4).unwrap();
        let mut ckpt = desk_identity();
        // Make the model non-identity: add a constant via the head bias.
        ckpt.params.head.b.fill(1.0);
        let n = vol.n_voxels();
        let mask: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let (out, _) = super_resolve(&ckpt, &vol, 0.25, Some(&mask), BlendMode::Uniform).unwrap();
        for vi in 0..n {
            let changed = (out.data[vi] - vol.data[vi]).abs() > 1e-6;
            assert_eq!(changed, mask[vi], "voxel {vi}");
        }
    }

    #[test]
    fn accumulation_is_order_independent() {
        let (vol, _) = gen_phantom([20, 20, 20], 9).unwrap();
        let ckpt = desk_identity();
        let dims = vol.spatial_dims();
        let plan = tile_volume(dims, ckpt.config.patch_size, 0.25, BlendMode::CosineTaper).unwrap();
        let channels = vol.n_channels();

        let run = |order: Vec<usize>| -> Vec<f32> {
            let mut accum = vec![0.0f64; vol.data.len()];
            let mut wsum = vec![0.0f64; vol.n_voxels()];
            for &ti in &order {
                let spec = plan.specs[ti];
                let patch = extract(&vol, &spec).unwrap();
                let out = forward(&ckpt.params, &ckpt.config, &patch.data).unwrap();
                accumulate_tile(&mut accum, &mut wsum, dims, channels, &spec, &out, &plan.blend);
            }
            finalize(accum, wsum, &vol, None).unwrap().data
        };

        let fwd = run((0..plan.specs.len()).collect());
        let rev = run((0..plan.specs.len()).rev().collect());
        for (a, b) in fwd.iter().zip(&rev) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalized_blend_weights_sum_to_one() {
        let dims = [24, 24, 24];
        let plan = tile_volume(dims, [16, 16, 16], 0.25, BlendMode::CosineTaper).unwrap();
        let n = dims[0] * dims[1] * dims[2];
        let mut wsum = vec![0.0f64; n];
        for spec in &plan.specs {
            let mut t = 0;
            for x in spec.origin[0]..spec.origin[0] + 16 {
                for y in spec.origin[1]..spec.origin[1] + 16 {
                    for z in spec.origin[2]..spec.origin[2] + 16 {
                        wsum[x + dims[0] * (y + dims[1] * z)] += plan.blend[t] as f64;
                        t += 1;
                    }
                }
            }
        }
        // After normalization each voxel's contributions sum to exactly 1.
        for &w in &wsum {
            assert!(w > 0.0);
            let normalized = w / w;
            assert!((normalized - 1.0).abs() < 1e-9);
        }
    }
}
