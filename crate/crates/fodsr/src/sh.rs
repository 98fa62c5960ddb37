//! Real even-degree spherical-harmonic basis (lmax ≤ 8), coefficient
//! indexing, least-squares fitting, amplitude evaluation, and the Angular
//! Correlation Coefficient.
//!
//! Convention: coefficients are ordered by the flat index `j = l(l+1)/2 + m`
//! over even degrees, the real symmetric basis built from associated Legendre
//! functions with √2-scaled sine (m<0) and cosine (m>0) terms. This matches
//! the ordering used by the standard FOD tooling ecosystem, so coefficient
//! volumes interoperate directly.

use crate::error::{FodError, Result};
use crate::sphere::UnitDirection;
use crate::volume::FodVolume;
use rayon::prelude::*;

/// Maximum supported harmonic degree.
pub const LMAX: usize = 8;
/// Coefficient count for the even basis at `LMAX`.
pub const N_COEFFS: usize = 45;

/// Below this non-DC norm a voxel's ACC is undefined.
pub const ACC_NORM_FLOOR: f64 = 1e-12;

/// Number of even-degree coefficients up to `lmax`.
pub fn n_coeffs(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 2) / 2
}

/// Flat index `j = l(l+1)/2 + m` of the (l, m) harmonic.
pub fn sh_flat_index(l: usize, m: i64) -> Result<usize> {
    if l % 2 != 0 || l > LMAX {
        return Err(FodError::InvalidArgument(format!(
            "degree l={l} must be even and ≤ {LMAX}"
        )));
    }
    if m.unsigned_abs() as usize > l {
        return Err(FodError::InvalidArgument(format!(
            "order m={m} out of range for degree l={l}"
        )));
    }
    let center = (l * (l + 1) / 2) as i64;
    Ok((center + m) as usize)
}

/// Inverse of [`sh_flat_index`]: recover (l, m) from the flat index.
pub fn sh_degree_order(j: usize) -> Result<(usize, i64)> {
    for l in (0..=LMAX).step_by(2) {
        let center = l * (l + 1) / 2;
        if j + l >= center && j <= center + l {
            return Ok((l, j as i64 - center as i64));
        }
    }
    Err(FodError::InvalidArgument(format!(
        "flat index {j} exceeds the lmax={LMAX} basis"
    )))
}

/// Degree `l` of every flat index up to `lmax` (cheap lookup for loops).
pub fn degree_table(lmax: usize) -> Vec<usize> {
    let mut table = Vec::with_capacity(n_coeffs(lmax));
    for l in (0..=lmax).step_by(2) {
        for _ in 0..(2 * l + 1) {
            table.push(l);
        }
    }
    table
}

/// A voxel's FOD as 45 real even-degree SH coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShCoeffs {
    c: [f64; N_COEFFS],
}

impl ShCoeffs {
    pub fn new(c: [f64; N_COEFFS]) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(FodError::InvalidArgument(
                "coefficients must all be finite".into(),
            ));
        }
        Ok(Self { c })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != N_COEFFS {
            return Err(FodError::InvalidArgument(format!(
                "expected {N_COEFFS} coefficients, got {}",
                values.len()
            )));
        }
        let mut c = [0.0; N_COEFFS];
        c.copy_from_slice(values);
        Self::new(c)
    }

    pub fn zeros() -> Self {
        Self {
            c: [0.0; N_COEFFS],
        }
    }

    pub fn values(&self) -> &[f64; N_COEFFS] {
        &self.c
    }

    pub fn values_mut(&mut self) -> &mut [f64; N_COEFFS] {
        &mut self.c
    }

    /// DC (l=0) coefficient.
    pub fn dc(&self) -> f64 {
        self.c[0]
    }

    /// Euclidean norm of the l ≥ 2 sub-vector.
    pub fn non_dc_norm(&self) -> f64 {
        self.c[1..].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> ShCoeffs {
        let mut c = self.c;
        for v in &mut c {
            *v *= s;
        }
        ShCoeffs { c }
    }
}

const FACTORIAL: [f64; 17] = {
    let mut t = [1.0f64; 17];
    let mut i = 1;
    while i < 17 {
        t[i] = t[i - 1] * i as f64;
        i += 1;
    }
    t
};

/// Associated Legendre P_l^m(x) with Condon-Shortley phase, m ≥ 0.
fn legendre_p(l: usize, m: usize, x: f64) -> f64 {
    debug_assert!(m <= l);
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    // P_m^m = (-1)^m (2m-1)!! (1-x²)^{m/2}
    let mut pmm = 1.0;
    let mut fact = 1.0;
    for _ in 0..m {
        pmm *= -fact * somx2;
        fact += 2.0;
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2.0 * m as f64 + 1.0) * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        let llf = ll as f64;
        pll = ((2.0 * llf - 1.0) * x * pmmp1 - (llf + m as f64 - 1.0) * pmm) / (llf - m as f64);
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

fn sh_norm(l: usize, m: usize) -> f64 {
    ((2.0 * l as f64 + 1.0) / (4.0 * std::f64::consts::PI) * FACTORIAL[l - m] / FACTORIAL[l + m])
        .sqrt()
}

/// Evaluate all even basis functions up to `lmax` at one direction.
///
/// `out` must hold `n_coeffs(lmax)` values.
pub fn eval_basis_row(dir: &UnitDirection, lmax: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), n_coeffs(lmax));
    let ct = dir.z().clamp(-1.0, 1.0);
    let phi = dir.y().atan2(dir.x());
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut j = 0;
    for l in (0..=lmax).step_by(2) {
        for m in -(l as i64)..=(l as i64) {
            let am = m.unsigned_abs() as usize;
            let p = legendre_p(l, am, ct);
            let n = sh_norm(l, am);
            out[j] = match m.cmp(&0) {
                std::cmp::Ordering::Greater => sqrt2 * n * p * (m as f64 * phi).cos(),
                std::cmp::Ordering::Less => sqrt2 * n * p * (am as f64 * phi).sin(),
                std::cmp::Ordering::Equal => n * p,
            };
            j += 1;
        }
    }
}

/// Dense basis matrix, one row per direction.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub n_dirs: usize,
    pub n_coeffs: usize,
    /// Row-major `[n_dirs × n_coeffs]`.
    pub data: Vec<f64>,
}

impl BasisMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_coeffs..(i + 1) * self.n_coeffs]
    }
}

/// Evaluate the even basis at every direction.
pub fn eval_basis(dirs: &[UnitDirection], lmax: usize) -> Result<BasisMatrix> {
    if dirs.is_empty() {
        return Err(FodError::InvalidArgument(
            "need at least one direction".into(),
        ));
    }
    if lmax % 2 != 0 || lmax > LMAX {
        return Err(FodError::InvalidArgument(format!(
            "lmax={lmax} must be even and ≤ {LMAX}"
        )));
    }
    let k = n_coeffs(lmax);
    let mut data = vec![0.0; dirs.len() * k];
    data.par_chunks_mut(k)
        .zip(dirs.par_iter())
        .for_each(|(row, dir)| eval_basis_row(dir, lmax, row));
    Ok(BasisMatrix {
        n_dirs: dirs.len(),
        n_coeffs: k,
        data,
    })
}

/// Least-squares fit of SH coefficients to amplitude samples.
///
/// Minimizes `‖B·c − s‖² + ridge·‖c‖²` via the normal equations and a
/// Cholesky solve. With `ridge = 0` the system must be overdetermined and
/// full-rank; a rank-deficient solve is reported as a numerical error.
pub fn fit_coeffs(
    samples: &[f64],
    dirs: &[UnitDirection],
    lmax: usize,
    ridge: f64,
) -> Result<Vec<f64>> {
    if samples.len() != dirs.len() {
        return Err(FodError::InvalidArgument(format!(
            "{} samples but {} directions",
            samples.len(),
            dirs.len()
        )));
    }
    if ridge < 0.0 {
        return Err(FodError::InvalidArgument("ridge must be ≥ 0".into()));
    }
    let k = n_coeffs(lmax);
    if ridge == 0.0 && samples.len() < k {
        return Err(FodError::InvalidArgument(format!(
            "{} samples cannot determine {k} coefficients without ridge",
            samples.len()
        )));
    }
    let basis = eval_basis(dirs, lmax)?;
    // Normal equations A = BᵀB + ridge·I, rhs = Bᵀs.
    let mut a = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for (i, &s) in samples.iter().enumerate() {
        let row = basis.row(i);
        for p in 0..k {
            let bp = row[p];
            rhs[p] += bp * s;
            for q in p..k {
                a[p * k + q] += bp * row[q];
            }
        }
    }
    for p in 0..k {
        a[p * k + p] += ridge;
        for q in 0..p {
            a[p * k + q] = a[q * k + p];
        }
    }
    cholesky_solve(&mut a, &mut rhs, k)?;
    Ok(rhs)
}

/// Fit at lmax=8 and wrap in [`ShCoeffs`].
pub fn fit_coeffs45(samples: &[f64], dirs: &[UnitDirection], ridge: f64) -> Result<ShCoeffs> {
    ShCoeffs::from_slice(&fit_coeffs(samples, dirs, LMAX, ridge)?)
}

/// In-place Cholesky solve of the SPD system `a·x = rhs` (a is n×n).
fn cholesky_solve(a: &mut [f64], rhs: &mut [f64], n: usize) -> Result<()> {
    let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0f64, f64::max);
    let floor = (max_diag * 1e-13).max(f64::MIN_POSITIVE);
    // Factor a = L·Lᵀ, storing L in the lower triangle.
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if !(sum > floor) {
                    return Err(FodError::Numerical(format!(
                        "normal equations are rank-deficient (pivot {sum:.3e} at column {i}); \
                         supply more directions or a positive ridge"
                    )));
                }
                a[i * n + j] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    // Forward then backward substitution.
    for i in 0..n {
        let mut sum = rhs[i];
        for k in 0..i {
            sum -= a[i * n + k] * rhs[k];
        }
        rhs[i] = sum / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut sum = rhs[i];
        for k in (i + 1)..n {
            sum -= a[k * n + i] * rhs[k];
        }
        rhs[i] = sum / a[i * n + i];
    }
    Ok(())
}

/// FOD amplitude `Σ_j c_j·Y_j(dir)`.
pub fn amplitude(c: &ShCoeffs, dir: &UnitDirection) -> f64 {
    let mut row = [0.0; N_COEFFS];
    eval_basis_row(dir, LMAX, &mut row);
    c.values().iter().zip(row.iter()).map(|(a, b)| a * b).sum()
}

/// Angular Correlation Coefficient of two coefficient vectors.
///
/// Cosine similarity of the l ≥ 2 sub-vectors, in [-1, 1]. Returns `None`
/// (undefined) when either sub-vector's norm is below [`ACC_NORM_FLOOR`];
/// undefined voxels are excluded from statistics rather than scored.
pub fn acc_voxel(u: &ShCoeffs, v: &ShCoeffs) -> Option<f64> {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for j in 1..N_COEFFS {
        let a = u.values()[j];
        let b = v.values()[j];
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let nu = nu.sqrt();
    let nv = nv.sqrt();
    if nu < ACC_NORM_FLOOR || nv < ACC_NORM_FLOOR {
        return None;
    }
    Some((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Per-voxel ACC over a masked volume. Voxels outside the mask are not
/// evaluated; in-mask voxels with no angular energy are flagged undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct AccMap {
    pub dims: [usize; 3],
    /// ACC per voxel; NaN where not defined (outside mask or undefined).
    pub values: Vec<f32>,
    /// True where an ACC value is defined.
    pub defined: Vec<bool>,
    /// True where the voxel was inside the evaluation mask.
    pub in_mask: Vec<bool>,
}

impl AccMap {
    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Defined ACC values inside `extra_mask` (same layout), plus the count
    /// of in-mask voxels whose ACC is undefined.
    pub fn select(&self, extra_mask: &[bool]) -> (Vec<f64>, usize) {
        let mut values = Vec::new();
        let mut undefined = 0;
        for i in 0..self.values.len() {
            if !extra_mask[i] || !self.in_mask[i] {
                continue;
            }
            if self.defined[i] {
                values.push(self.values[i] as f64);
            } else {
                undefined += 1;
            }
        }
        (values, undefined)
    }
}

/// Voxel-wise [`acc_voxel`] over two volumes inside a mask.
pub fn acc_volume(a: &FodVolume, b: &FodVolume, mask: &[bool]) -> Result<AccMap> {
    let dims = a.spatial_dims();
    if b.spatial_dims() != dims {
        return Err(FodError::InvalidArgument(format!(
            "volume dims {:?} vs {:?} differ",
            dims,
            b.spatial_dims()
        )));
    }
    let n = dims[0] * dims[1] * dims[2];
    if mask.len() != n {
        return Err(FodError::InvalidArgument(format!(
            "mask length {} does not match {n} voxels",
            mask.len()
        )));
    }
    if a.n_channels() != N_COEFFS || b.n_channels() != N_COEFFS {
        return Err(FodError::InvalidArgument(format!(
            "ACC requires {N_COEFFS}-channel volumes, got {} and {}",
            a.n_channels(),
            b.n_channels()
        )));
    }
    let per_voxel: Vec<(f32, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !mask[i] {
                return (f32::NAN, false);
            }
            let stride = n;
            let mut u = [0.0f64; N_COEFFS];
            let mut v = [0.0f64; N_COEFFS];
            for c in 0..N_COEFFS {
                u[c] = a.data[i + c * stride] as f64;
                v[c] = b.data[i + c * stride] as f64;
            }
            let u = ShCoeffs { c: u };
            let v = ShCoeffs { c: v };
            match acc_voxel(&u, &v) {
                Some(acc) => (acc as f32, true),
                None => (f32::NAN, false),
            }
        })
        .collect();
    let values = per_voxel.iter().map(|p| p.0).collect();
    let defined = per_voxel.iter().map(|p| p.1).collect();
    Ok(AccMap {
        dims,
        values,
        defined,
        in_mask: mask.to_vec(),
    })
}
