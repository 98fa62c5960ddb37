//! Synthetic FOD phantoms with known fiber geometry and tissue fractions,
//! plus a coefficient-space degradation operator producing low-angular-
//! resolution-like inputs. Stands in for non-redistributable training pairs.

use crate::error::{FodError, Result};
use crate::seeds;
use crate::sh::{self, ShCoeffs, N_COEFFS};
use crate::sphere::{quadrature_grid, UnitDirection};
use crate::volume::{FodVolume, TissueFractions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Default kernel concentration for WM fiber lobes.
pub const DEFAULT_KAPPA: f64 = 50.0;

/// Global amplitude applied to WM FODs so coefficient magnitudes sit well
/// above the degradation noise floor.
pub const FOD_AMPLITUDE: f64 = 3.0;

/// Up to three fiber populations in one voxel region.
#[derive(Debug, Clone)]
pub struct FiberConfig {
    pub directions: Vec<UnitDirection>,
    pub weights: Vec<f64>,
    /// Concentration κ of the axial kernel `exp(κ((d·dᵢ)² − 1))`.
    pub kernel_sharpness: f64,
}

impl FiberConfig {
    pub fn new(
        directions: Vec<UnitDirection>,
        weights: Vec<f64>,
        kernel_sharpness: f64,
    ) -> Result<Self> {
        if directions.is_empty() || directions.len() > 3 {
            return Err(FodError::InvalidArgument(format!(
                "need 1–3 fiber directions, got {}",
                directions.len()
            )));
        }
        if weights.len() != directions.len() {
            return Err(FodError::InvalidArgument(
                "weights and directions must have equal length".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(FodError::InvalidArgument(
                "fiber weights must be positive".into(),
            ));
        }
        if weights.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(FodError::InvalidArgument(
                "fiber weights must sum to at most 1".into(),
            ));
        }
        if !(kernel_sharpness > 0.0) {
            return Err(FodError::InvalidArgument(
                "kernel sharpness must be positive".into(),
            ));
        }
        Ok(Self {
            directions,
            weights,
            kernel_sharpness,
        })
    }
}

/// SH coefficients of `Σᵢ wᵢ·exp(κ((d·dᵢ)² − 1))`, obtained by least-squares
/// projection on a dense deterministic design.
///
/// The azimuth count is a multiple of 4 so the design is invariant under
/// quarter-turn swaps; symmetric fiber configurations then fit to exactly
/// symmetric coefficients.
pub fn make_fiber_fod(cfg: &FiberConfig) -> Result<ShCoeffs> {
    let design = quadrature_grid(36, 32);
    let samples: Vec<f64> = design
        .dirs
        .iter()
        .map(|d| {
            cfg.directions
                .iter()
                .zip(&cfg.weights)
                .map(|(fiber, &w)| {
                    let dot = d.dot(fiber);
                    w * (cfg.kernel_sharpness * (dot * dot - 1.0)).exp()
                })
                .sum()
        })
        .collect();
    sh::fit_coeffs45(&samples, &design.dirs, 0.0)
}

/// Configuration of the LARDI-like degradation operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeConfig {
    /// Coefficients with degree above this are zeroed.
    pub truncate_lmax: usize,
    /// Std-dev of i.i.d. Gaussian noise added to all coefficients in tissue.
    pub coeff_noise_sigma: f64,
    /// Multiplier in (0,1] applied to surviving l ≥ 2 coefficients.
    pub amplitude_damping: f64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            truncate_lmax: 4,
            coeff_noise_sigma: 0.01,
            amplitude_damping: 0.8,
        }
    }
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        if ![2, 4, 6, 8].contains(&self.truncate_lmax) {
            return Err(FodError::InvalidArgument(format!(
                "truncate_lmax {} must be one of 2,4,6,8",
                self.truncate_lmax
            )));
        }
        if !(self.coeff_noise_sigma >= 0.0) {
            return Err(FodError::InvalidArgument("noise sigma must be ≥ 0".into()));
        }
        if !(self.amplitude_damping > 0.0 && self.amplitude_damping <= 1.0) {
            return Err(FodError::InvalidArgument(
                "amplitude damping must lie in (0,1]".into(),
            ));
        }
        Ok(())
    }
}

// Phantom layout in normalized ellipsoid coordinates.
const BRAIN_SEMI_AXIS: f64 = 0.42;
const CORE_RADIUS: f64 = 0.66; // WM core boundary
const CGM_INNER: f64 = 0.80; // pure-CGM band start
const FADE_START: f64 = 0.94; // tissue fades to background
const SGM_RADIUS: f64 = 0.15; // normalized blob radius
const GM_DC: f64 = 0.3; // isotropic DC given to gray matter

struct VoxelTissue {
    wm: f64,
    cgm: f64,
    sgm: f64,
    /// Index into the fiber template table, or None for fiber-free voxels.
    template: Option<usize>,
}

/// Number of quantized bend angles for the single-fiber band.
const BEND_BINS: usize = 16;
const BEND_MAX_DEG: f64 = 25.0;

fn build_templates(kappa: f64) -> Result<Vec<ShCoeffs>> {
    let mut templates = Vec::with_capacity(BEND_BINS + 2);
    // 0..BEND_BINS: single fiber in the x-y plane, rotated about z.
    for b in 0..BEND_BINS {
        let alpha = (2.0 * b as f64 / (BEND_BINS - 1) as f64 - 1.0) * BEND_MAX_DEG.to_radians();
        let dir = UnitDirection::normalized(alpha.cos(), alpha.sin(), 0.0)?;
        templates.push(make_fiber_fod(&FiberConfig::new(
            vec![dir],
            vec![1.0],
            kappa,
        )?)?);
    }
    let x = UnitDirection::new(1.0, 0.0, 0.0)?;
    let y = UnitDirection::new(0.0, 1.0, 0.0)?;
    let z = UnitDirection::new(0.0, 0.0, 1.0)?;
    // BEND_BINS: two-fiber crossing.
    templates.push(make_fiber_fod(&FiberConfig::new(
        vec![x, y],
        vec![0.5, 0.5],
        kappa,
    )?)?);
    // BEND_BINS+1: three-fiber crossing.
    templates.push(make_fiber_fod(&FiberConfig::new(
        vec![x, y, z],
        vec![1.0 / 3.0; 3],
        kappa,
    )?)?);
    Ok(templates)
}

fn classify_voxel(u: [f64; 3], sgm_center: [f64; 3], bend_phase: f64) -> VoxelTissue {
    let rho = (0..3)
        .map(|a| ((u[a] - 0.5) / BRAIN_SEMI_AXIS).powi(2))
        .sum::<f64>()
        .sqrt();
    if rho >= 1.0 {
        return VoxelTissue {
            wm: 0.0,
            cgm: 0.0,
            sgm: 0.0,
            template: None,
        };
    }
    let total = if rho <= FADE_START {
        1.0
    } else {
        ((1.0 - rho) / (1.0 - FADE_START)).clamp(0.0, 1.0)
    };

    // Radial WM/CGM structure.
    let (mut wm, cgm) = if rho < CORE_RADIUS {
        (total, 0.0)
    } else if rho < CGM_INNER {
        let t = (rho - CORE_RADIUS) / (CGM_INNER - CORE_RADIUS);
        ((1.0 - t) * total, t * total)
    } else {
        (0.0, total)
    };

    // SGM blob carved out of the WM core.
    let ds = (0..3)
        .map(|a| (u[a] - sgm_center[a]).powi(2))
        .sum::<f64>()
        .sqrt()
        / SGM_RADIUS;
    let mut sgm = 0.0;
    if ds < 1.0 && wm > 0.0 {
        let s = if ds < 0.55 {
            1.0
        } else {
            1.0 - (ds - 0.55) / 0.45
        };
        sgm = s * wm;
        wm -= sgm;
    }

    let template = if wm > 0.0 {
        Some(if u[2] < 0.42 {
            let alpha = (2.0 * std::f64::consts::PI * (u[1] + bend_phase)).sin();
            let bin = ((alpha + 1.0) / 2.0 * (BEND_BINS - 1) as f64).round() as usize;
            bin.min(BEND_BINS - 1)
        } else if u[2] < 0.58 {
            BEND_BINS
        } else {
            BEND_BINS + 1
        })
    } else {
        None
    };

    VoxelTissue {
        wm,
        cgm,
        sgm,
        template,
    }
}

/// Generate a deterministic phantom: a target FOD volume plus tissue
/// fractions. Contains a bent single-fiber band, a 2-crossing band, a
/// 3-crossing band, a pure-CGM shell, a pure-SGM blob, and background.
pub fn gen_phantom(dims: [usize; 3], seed: u64) -> Result<(FodVolume, TissueFractions)> {
    if dims.iter().any(|&d| d < 8) {
        return Err(FodError::InvalidArgument(format!(
            "phantom dims {dims:?} must each be ≥ 8"
        )));
    }
    let templates = build_templates(DEFAULT_KAPPA)?;

    // Seed-dependent layout jitter.
    let pick = seeds::mix(seed, 1);
    let sgm_center = [
        0.40 + 0.06 * ((pick % 5) as f64 / 4.0),
        0.36 + 0.06 * (((pick >> 8) % 5) as f64 / 4.0),
        0.34 + 0.05 * (((pick >> 16) % 5) as f64 / 4.0),
    ];
    let bend_phase = ((seeds::mix(seed, 2) % 1024) as f64) / 1024.0;

    let mut vol = FodVolume::zeros(dims, N_COEFFS, 1.25)?;
    let mut fractions = TissueFractions::zeros(dims);
    let n_vox = vol.n_voxels();

    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let u = [
                    (x as f64 + 0.5) / dims[0] as f64,
                    (y as f64 + 0.5) / dims[1] as f64,
                    (z as f64 + 0.5) / dims[2] as f64,
                ];
                let t = classify_voxel(u, sgm_center, bend_phase);
                let i = fractions.index(x, y, z);
                fractions.wm[i] = t.wm as f32;
                fractions.cgm[i] = t.cgm as f32;
                fractions.sgm[i] = t.sgm as f32;

                let gm = t.cgm + t.sgm;
                if t.wm <= 0.0 && gm <= 0.0 {
                    continue; // background stays exactly zero
                }
                // Per-voxel amplitude jitter, independent of loop order.
                let jitter =
                    0.9 + 0.2 * (seeds::mix(seed, 0x100 + i as u64) % 4096) as f64 / 4095.0;
                let mut coeffs = [0.0f64; N_COEFFS];
                if let Some(tpl) = t.template {
                    let base = templates[tpl].values();
                    let scale = t.wm * FOD_AMPLITUDE * jitter;
                    for (c, b) in coeffs.iter_mut().zip(base.iter()) {
                        *c = scale * b;
                    }
                }
                coeffs[0] += GM_DC * gm * jitter;
                let base = x + dims[0] * (y + dims[1] * z);
                for (c, &v) in coeffs.iter().enumerate() {
                    vol.data[base + c * n_vox] = v as f32;
                }
            }
        }
    }
    Ok((vol, fractions))
}

/// Degrade a target volume in coefficient space: truncate degrees above
/// `truncate_lmax`, damp surviving l ≥ 2 coefficients, then add Gaussian
/// noise to every coefficient of tissue voxels.
///
/// The operator has no tissue-fraction input; "tissue" is any voxel whose
/// target coefficient vector is nonzero, so background stays exactly zero.
/// Deterministic given `seed` (per-voxel RNG streams).
pub fn degrade(target: &FodVolume, cfg: &DegradeConfig, seed: u64) -> Result<FodVolume> {
    cfg.validate()?;
    if target.n_channels() != N_COEFFS {
        return Err(FodError::InvalidArgument(format!(
            "degrade expects {N_COEFFS} channels, got {}",
            target.n_channels()
        )));
    }
    let degrees = sh::degree_table(sh::LMAX);
    let n_vox = target.n_voxels();
    let mut out = target.clone();
    out.header.intent = "degraded fod coefficients".into();

    for i in 0..n_vox {
        let mut coeffs = [0.0f64; N_COEFFS];
        let mut nonzero = false;
        for (c, v) in coeffs.iter_mut().enumerate() {
            *v = target.data[i + c * n_vox] as f64;
            nonzero |= *v != 0.0;
        }
        if !nonzero {
            continue;
        }
        for (c, v) in coeffs.iter_mut().enumerate() {
            if degrees[c] > cfg.truncate_lmax {
                *v = 0.0;
            } else if degrees[c] >= 2 {
                *v *= cfg.amplitude_damping;
            }
        }
        if cfg.coeff_noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, i as u64));
            let normal = Normal::new(0.0, cfg.coeff_noise_sigma).expect("sigma validated");
            for v in coeffs.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        for (c, &v) in coeffs.iter().enumerate() {
            out.data[i + c * n_vox] = v as f32;
        }
    }
    Ok(out)
}
