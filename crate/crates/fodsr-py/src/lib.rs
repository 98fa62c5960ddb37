//! Python bindings for the FOD super-resolution toolkit.
//!
//! Volumes cross the boundary as numpy arrays shaped `(X, Y, Z, C)` (or
//! `(X, Y, Z)` for scalar maps), C-contiguous on the Python side.

use fodsr::error::FodError;
use fodsr::eval::{region_mask, stats_from_values, RegionRule};
use fodsr::infer::{self, BlendMode};
use fodsr::model::{identity_checkpoint, Checkpoint, ModelConfig};
use fodsr::phantom::{self, DegradeConfig};
use fodsr::sh::{self, ShCoeffs, N_COEFFS};
use fodsr::sphere::UnitDirection;
use fodsr::volume::{FodVolume, TissueFractions};
use numpy::ndarray as nd;
use numpy::{
    IntoPyArray, PyArray1, PyArray2, PyArray3, PyArray4, PyReadonlyArray1, PyReadonlyArray2,
    PyReadonlyArray3, PyReadonlyArray4,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::PathBuf;

fn to_py_err(e: FodError) -> PyErr {
    match e {
        FodError::Io(_) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_dirs(dirs: &PyReadonlyArray2<f64>) -> PyResult<Vec<UnitDirection>> {
    let a = dirs.as_array();
    if a.shape()[1] != 3 {
        return Err(PyValueError::new_err("directions must have shape (N, 3)"));
    }
    (0..a.shape()[0])
        .map(|i| UnitDirection::new(a[[i, 0]], a[[i, 1]], a[[i, 2]]).map_err(to_py_err))
        .collect()
}

fn coeffs_from(array: &PyReadonlyArray1<f64>) -> PyResult<ShCoeffs> {
    let v = array.as_array().to_vec();
    ShCoeffs::from_slice(&v).map_err(to_py_err)
}

/// FodVolume (x-fastest, channel-slowest) → numpy (X,Y,Z,C) C-order.
fn volume_to_array(vol: &FodVolume) -> nd::Array4<f32> {
    let [nx, ny, nz] = vol.spatial_dims();
    let c = vol.n_channels();
    let n_vox = vol.n_voxels();
    let mut out = nd::Array4::<f32>::zeros((nx, ny, nz, c));
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let base = x + nx * (y + ny * z);
                for ch in 0..c {
                    out[[x, y, z, ch]] = vol.data[base + ch * n_vox];
                }
            }
        }
    }
    out
}

fn array_to_volume(array: &PyReadonlyArray4<f32>) -> PyResult<FodVolume> {
    let a = array.as_array();
    let (nx, ny, nz, c) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    let mut vol =
        FodVolume::zeros([nx, ny, nz], c, 1.25).map_err(to_py_err)?;
    let n_vox = nx * ny * nz;
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let base = x + nx * (y + ny * z);
                for ch in 0..c {
                    vol.data[base + ch * n_vox] = a[[x, y, z, ch]];
                }
            }
        }
    }
    Ok(vol)
}

fn scalar_to_array(dims: [usize; 3], data: &[f32]) -> nd::Array3<f32> {
    let [nx, ny, nz] = dims;
    let mut out = nd::Array3::<f32>::zeros((nx, ny, nz));
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                out[[x, y, z]] = data[x + nx * (y + ny * z)];
            }
        }
    }
    out
}

fn array_to_mask(array: &PyReadonlyArray3<f32>) -> (Vec<bool>, [usize; 3]) {
    let a = array.as_array();
    let (nx, ny, nz) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let mut mask = vec![false; nx * ny * nz];
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                mask[x + nx * (y + ny * z)] = a[[x, y, z]] != 0.0;
            }
        }
    }
    (mask, [nx, ny, nz])
}

fn array_to_fractions(
    wm: &PyReadonlyArray3<f32>,
    cgm: &PyReadonlyArray3<f32>,
    sgm: &PyReadonlyArray3<f32>,
) -> PyResult<TissueFractions> {
    let a = wm.as_array();
    let dims = [a.shape()[0], a.shape()[1], a.shape()[2]];
    let flatten = |arr: &PyReadonlyArray3<f32>| -> Vec<f32> {
        let a = arr.as_array();
        let mut out = vec![0.0; dims[0] * dims[1] * dims[2]];
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    out[x + dims[0] * (y + dims[1] * z)] = a[[x, y, z]];
                }
            }
        }
        out
    };
    TissueFractions::new(dims, flatten(wm), flatten(cgm), flatten(sgm)).map_err(to_py_err)
}

/// Real even-degree SH basis matrix at the given unit directions.
#[pyfunction]
#[pyo3(signature = (dirs, lmax = 8))]
fn sh_basis<'py>(
    py: Python<'py>,
    dirs: PyReadonlyArray2<'py, f64>,
    lmax: usize,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let dirs = parse_dirs(&dirs)?;
    let basis = sh::eval_basis(&dirs, lmax).map_err(to_py_err)?;
    let arr = nd::Array2::from_shape_vec((basis.n_dirs, basis.n_coeffs), basis.data)
        .expect("shape matches");
    Ok(arr.into_pyarray(py))
}

/// Least-squares SH fit of amplitude samples.
#[pyfunction]
#[pyo3(signature = (samples, dirs, lmax = 8, ridge = 0.0))]
fn fit_coeffs<'py>(
    py: Python<'py>,
    samples: PyReadonlyArray1<'py, f64>,
    dirs: PyReadonlyArray2<'py, f64>,
    lmax: usize,
    ridge: f64,
) -> PyResult<Bound<'py, PyArray1<f64>>> {
    let dirs = parse_dirs(&dirs)?;
    let samples = samples.as_array().to_vec();
    let c = sh::fit_coeffs(&samples, &dirs, lmax, ridge).map_err(to_py_err)?;
    Ok(c.into_pyarray(py))
}

/// FOD amplitudes of one coefficient vector at many directions.
#[pyfunction]
fn amplitude<'py>(
    py: Python<'py>,
    coeffs: PyReadonlyArray1<'py, f64>,
    dirs: PyReadonlyArray2<'py, f64>,
) -> PyResult<Bound<'py, PyArray1<f64>>> {
    let c = coeffs_from(&coeffs)?;
    let dirs = parse_dirs(&dirs)?;
    let amps: Vec<f64> = dirs.iter().map(|d| sh::amplitude(&c, d)).collect();
    Ok(amps.into_pyarray(py))
}

/// Angular Correlation Coefficient of two 45-vectors (None if undefined).
#[pyfunction]
fn acc(u: PyReadonlyArray1<f64>, v: PyReadonlyArray1<f64>) -> PyResult<Option<f64>> {
    Ok(sh::acc_voxel(&coeffs_from(&u)?, &coeffs_from(&v)?))
}

/// Voxel-wise ACC of two (X,Y,Z,45) volumes inside a mask (NaN = undefined
/// or outside the mask).
#[pyfunction]
#[pyo3(signature = (a, b, mask = None))]
fn acc_volume<'py>(
    py: Python<'py>,
    a: PyReadonlyArray4<'py, f32>,
    b: PyReadonlyArray4<'py, f32>,
    mask: Option<PyReadonlyArray3<'py, f32>>,
) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let va = array_to_volume(&a)?;
    let vb = array_to_volume(&b)?;
    let mask = match &mask {
        Some(m) => array_to_mask(m).0,
        None => vec![true; va.n_voxels()],
    };
    let map = sh::acc_volume(&va, &vb, &mask).map_err(to_py_err)?;
    Ok(scalar_to_array(map.dims, &map.values).into_pyarray(py))
}

/// Summary statistics (min/max/mean/std/lq/uq) of finite values.
#[pyfunction]
fn acc_stats<'py>(py: Python<'py>, values: PyReadonlyArray1<'py, f64>) -> PyResult<Bound<'py, PyDict>> {
    let raw = values.as_array();
    let finite: Vec<f64> = raw.iter().copied().filter(|v| v.is_finite()).collect();
    let undefined = raw.len() - finite.len();
    let st = stats_from_values(&finite, undefined).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("min", st.min)?;
    d.set_item("max", st.max)?;
    d.set_item("mean", st.mean)?;
    d.set_item("std", st.std)?;
    d.set_item("lq", st.lower_quartile)?;
    d.set_item("uq", st.upper_quartile)?;
    d.set_item("n", st.n_voxels)?;
    d.set_item("undefined", st.n_undefined)?;
    Ok(d)
}

/// Boolean region mask from tissue fractions and per-tissue minima.
#[pyfunction]
#[pyo3(signature = (wm, cgm, sgm, min_wm, min_cgm = 0.0, min_sgm = 0.0))]
fn region_mask_py<'py>(
    py: Python<'py>,
    wm: PyReadonlyArray3<'py, f32>,
    cgm: PyReadonlyArray3<'py, f32>,
    sgm: PyReadonlyArray3<'py, f32>,
    min_wm: f64,
    min_cgm: f64,
    min_sgm: f64,
) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let fractions = array_to_fractions(&wm, &cgm, &sgm)?;
    let rule = RegionRule::new("custom", min_wm, min_cgm, min_sgm).map_err(to_py_err)?;
    let mask = region_mask(&fractions, &rule);
    let data: Vec<f32> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    Ok(scalar_to_array(fractions.dims, &data).into_pyarray(py))
}

/// Synthetic phantom: (target, wm, cgm, sgm).
#[pyfunction]
fn gen_phantom<'py>(
    py: Python<'py>,
    dims: (usize, usize, usize),
    seed: u64,
) -> PyResult<(
    Bound<'py, PyArray4<f32>>,
    Bound<'py, PyArray3<f32>>,
    Bound<'py, PyArray3<f32>>,
    Bound<'py, PyArray3<f32>>,
)> {
    let (vol, fr) = phantom::gen_phantom([dims.0, dims.1, dims.2], seed).map_err(to_py_err)?;
    Ok((
        volume_to_array(&vol).into_pyarray(py),
        scalar_to_array(fr.dims, &fr.wm).into_pyarray(py),
        scalar_to_array(fr.dims, &fr.cgm).into_pyarray(py),
        scalar_to_array(fr.dims, &fr.sgm).into_pyarray(py),
    ))
}

/// Coefficient-space degradation (truncate, damp, add noise).
#[pyfunction]
#[pyo3(signature = (target, seed, truncate_lmax = 4, noise_sigma = 0.01, damping = 0.8))]
fn degrade<'py>(
    py: Python<'py>,
    target: PyReadonlyArray4<'py, f32>,
    seed: u64,
    truncate_lmax: usize,
    noise_sigma: f64,
    damping: f64,
) -> PyResult<Bound<'py, PyArray4<f32>>> {
    let vol = array_to_volume(&target)?;
    let cfg = DegradeConfig {
        truncate_lmax,
        coeff_noise_sigma: noise_sigma,
        amplitude_damping: damping,
    };
    let out = phantom::degrade(&vol, &cfg, seed).map_err(to_py_err)?;
    Ok(volume_to_array(&out).into_pyarray(py))
}

/// Sliding-window tile origins and stride for a volume/patch/overlap.
#[pyfunction]
fn tile_plan(
    dims: (usize, usize, usize),
    patch: (usize, usize, usize),
    overlap: f64,
) -> PyResult<(Vec<(usize, usize, usize)>, (usize, usize, usize))> {
    let plan = infer::tile_volume(
        [dims.0, dims.1, dims.2],
        [patch.0, patch.1, patch.2],
        overlap,
        BlendMode::Uniform,
    )
    .map_err(to_py_err)?;
    let origins = plan
        .specs
        .iter()
        .map(|s| (s.origin[0], s.origin[1], s.origin[2]))
        .collect();
    Ok((origins, (plan.stride[0], plan.stride[1], plan.stride[2])))
}

/// Write a diagnostic identity checkpoint.
#[pyfunction]
#[pyo3(signature = (path, patch = (16, 16, 16), embed = 24, window = (4, 4, 4), depths = vec![2, 2], heads = vec![3, 6]))]
fn write_identity_checkpoint(
    path: PathBuf,
    patch: (usize, usize, usize),
    embed: usize,
    window: (usize, usize, usize),
    depths: Vec<usize>,
    heads: Vec<usize>,
) -> PyResult<()> {
    let cfg = ModelConfig {
        patch_size: [patch.0, patch.1, patch.2],
        embed_dim: embed,
        window_size: [window.0, window.1, window.2],
        depths,
        num_heads: heads,
        shift: true,
        residual: true,
        in_channels: N_COEFFS,
        out_channels: N_COEFFS,
        mlp_ratio: 4,
    };
    let ckpt = identity_checkpoint(&cfg).map_err(to_py_err)?;
    ckpt.save(&path).map_err(to_py_err)
}

/// Overlap-blended sliding-window inference with a saved checkpoint.
/// Returns (output volume, forward-pass count).
#[pyfunction]
#[pyo3(signature = (input, ckpt_path, overlap = 0.25))]
fn super_resolve<'py>(
    py: Python<'py>,
    input: PyReadonlyArray4<'py, f32>,
    ckpt_path: PathBuf,
    overlap: f64,
) -> PyResult<(Bound<'py, PyArray4<f32>>, usize)> {
    let vol = array_to_volume(&input)?;
    let ckpt = Checkpoint::load(&ckpt_path).map_err(to_py_err)?;
    let (out, report) =
        infer::super_resolve(&ckpt, &vol, overlap, None, BlendMode::Uniform).map_err(to_py_err)?;
    Ok((volume_to_array(&out).into_pyarray(py), report.forward_passes))
}

/// Read a float32 NIfTI-1 volume; returns the array shaped (X,Y,Z) or
/// (X,Y,Z,C) plus the 4×4 affine.
#[pyfunction]
fn read_nifti<'py>(py: Python<'py>, path: PathBuf) -> PyResult<(Py<PyAny>, Bound<'py, PyArray2<f32>>)> {
    let (header, data) = fodsr::nifti::read_nifti(&path).map_err(to_py_err)?;
    let mut affine = nd::Array2::<f32>::zeros((4, 4));
    for r in 0..4 {
        for c in 0..4 {
            affine[[r, c]] = header.affine[r][c];
        }
    }
    let obj = if header.dims.len() == 4 {
        let vol = FodVolume::new(header, data).map_err(to_py_err)?;
        volume_to_array(&vol).into_pyarray(py).into_any().unbind()
    } else {
        let dims = [header.dims[0], header.dims[1], header.dims[2]];
        scalar_to_array(dims, &data).into_pyarray(py).into_any().unbind()
    };
    Ok((obj, affine.into_pyarray(py)))
}

/// Write a float32 NIfTI-1 volume from an (X,Y,Z,C) array.
#[pyfunction]
#[pyo3(signature = (path, volume, voxel_mm = 1.25))]
fn write_nifti(path: PathBuf, volume: PyReadonlyArray4<f32>, voxel_mm: f32) -> PyResult<()> {
    let vol = array_to_volume(&volume)?;
    let mut header = vol.header.clone();
    header.voxel_size = [voxel_mm; 3];
    fodsr::nifti::write_nifti(&header, &vol.data, &path).map_err(to_py_err)
}

#[pymodule]
fn fodsr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("N_COEFFS", N_COEFFS)?;
    m.add_function(wrap_pyfunction!(sh_basis, m)?)?;
    m.add_function(wrap_pyfunction!(fit_coeffs, m)?)?;
    m.add_function(wrap_pyfunction!(amplitude, m)?)?;
    m.add_function(wrap_pyfunction!(acc, m)?)?;
    m.add_function(wrap_pyfunction!(acc_volume, m)?)?;
    m.add_function(wrap_pyfunction!(acc_stats, m)?)?;
    m.add_function(wrap_pyfunction!(region_mask_py, m)?)?;
    m.add_function(wrap_pyfunction!(gen_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(tile_plan, m)?)?;
    m.add_function(wrap_pyfunction!(write_identity_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(super_resolve, m)?)?;
    m.add_function(wrap_pyfunction!(read_nifti, m)?)?;
    m.add_function(wrap_pyfunction!(write_nifti, m)?)?;
    Ok(())
}
