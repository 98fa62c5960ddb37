//! Layer primitives with explicit forward/backward passes.
//!
//! Backward functions ACCUMULATE into their gradient buffers so branches
//! (residuals, skips) compose by simple repeated calls. All parallel loops
//! write disjoint output rows with fixed-order inner sums, so results are
//! bitwise independent of the thread schedule.

use super::tensor::Real;
use rayon::prelude::*;

/// Row count above which matmuls switch to rayon.
const PAR_THRESHOLD: usize = 256;

/// y[n×dout] = x[n×di] · w[di×dout] + b
pub fn linear_forward<T: Real>(
    x: &[T],
    w: &[T],
    b: &[T],
    n: usize,
    di: usize,
    dout: usize,
    y: &mut [T],
) {
    debug_assert_eq!(x.len(), n * di);
    debug_assert_eq!(w.len(), di * dout);
    debug_assert_eq!(b.len(), dout);
    debug_assert_eq!(y.len(), n * dout);
    let row = |(yr, xr): (&mut [T], &[T])| {
        yr.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate() {
            let wrow = &w[i * dout..(i + 1) * dout];
            for (yo, &wo) in yr.iter_mut().zip(wrow) {
                *yo += xi * wo;
            }
        }
    };
    if n >= PAR_THRESHOLD {
        y.par_chunks_mut(dout).zip(x.par_chunks(di)).for_each(row);
    } else {
        y.chunks_mut(dout).zip(x.chunks(di)).for_each(row);
    }
}

/// Accumulate linear gradients: dx += dy·wᵀ, dw += xᵀ·dy, db += Σ_rows dy.
pub fn linear_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    n: usize,
    di: usize,
    dout: usize,
    mut dx: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
) {
    debug_assert_eq!(dy.len(), n * dout);
    if let Some(dx) = dx.as_deref_mut() {
        let row = |(dxr, dyr): (&mut [T], &[T])| {
            for (i, dxi) in dxr.iter_mut().enumerate() {
                let wrow = &w[i * dout..(i + 1) * dout];
                let mut acc = T::zero();
                for (&g, &wo) in dyr.iter().zip(wrow) {
                    acc += g * wo;
                }
                *dxi += acc;
            }
        };
        if n >= PAR_THRESHOLD {
            dx.par_chunks_mut(di).zip(dy.par_chunks(dout)).for_each(row);
        } else {
            dx.chunks_mut(di).zip(dy.chunks(dout)).for_each(row);
        }
    }
    // dw rows are independent; each row i scans all samples in fixed order.
    let wrow = |(i, dwr): (usize, &mut [T])| {
        for r in 0..n {
            let xi = x[r * di + i];
            if xi == T::zero() {
                continue;
            }
            let dyr = &dy[r * dout..(r + 1) * dout];
            for (dwo, &g) in dwr.iter_mut().zip(dyr) {
                *dwo += xi * g;
            }
        }
    };
    if n * di >= PAR_THRESHOLD * 8 {
        dw.par_chunks_mut(dout).enumerate().map(|(i, c)| (i, c)).for_each(wrow);
    } else {
        dw.chunks_mut(dout).enumerate().for_each(wrow);
    }
    for r in 0..n {
        let dyr = &dy[r * dout..(r + 1) * dout];
        for (dbo, &g) in db.iter_mut().zip(dyr) {
            *dbo += g;
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Layer norm over the last dimension; caches per-row mean and 1/std.
pub fn layernorm_forward<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    n: usize,
    c: usize,
    y: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
) {
    debug_assert_eq!(x.len(), n * c);
    let eps = T::of_f64(LN_EPS);
    let cf = T::of_f64(c as f64);
    for r in 0..n {
        let xr = &x[r * c..(r + 1) * c];
        let mut m = T::zero();
        for &v in xr {
            m += v;
        }
        m /= cf;
        let mut var = T::zero();
        for &v in xr {
            var += (v - m) * (v - m);
        }
        var /= cf;
        let rs = (var + eps).sqrt().recip();
        mean[r] = m;
        rstd[r] = rs;
        let yr = &mut y[r * c..(r + 1) * c];
        for j in 0..c {
            yr[j] = gamma[j] * ((xr[j] - m) * rs) + beta[j];
        }
    }
}

/// Layer norm backward; accumulates dx, dgamma, dbeta.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward<T: Real>(
    x: &[T],
    gamma: &[T],
    mean: &[T],
    rstd: &[T],
    dy: &[T],
    n: usize,
    c: usize,
    dx: &mut [T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let cf = T::of_f64(c as f64);
    for r in 0..n {
        let xr = &x[r * c..(r + 1) * c];
        let dyr = &dy[r * c..(r + 1) * c];
        let m = mean[r];
        let rs = rstd[r];
        let mut m1 = T::zero(); // mean of dxhat
        let mut m2 = T::zero(); // mean of dxhat·xhat
        for j in 0..c {
            let xhat = (xr[j] - m) * rs;
            let dxhat = dyr[j] * gamma[j];
            m1 += dxhat;
            m2 += dxhat * xhat;
            dgamma[j] += dyr[j] * xhat;
            dbeta[j] += dyr[j];
        }
        m1 /= cf;
        m2 /= cf;
        let dxr = &mut dx[r * c..(r + 1) * c];
        for j in 0..c {
            let xhat = (xr[j] - m) * rs;
            let dxhat = dyr[j] * gamma[j];
            dxr[j] += rs * (dxhat - m1 - xhat * m2);
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// GELU (tanh approximation), elementwise.
pub fn gelu_forward<T: Real>(x: &[T], y: &mut [T]) {
    let k = T::of_f64(GELU_K);
    let a = T::of_f64(GELU_A);
    let half = T::of_f64(0.5);
    for (yo, &v) in y.iter_mut().zip(x) {
        let t = (k * (v + a * v * v * v)).tanh();
        *yo = half * v * (T::one() + t);
    }
}

/// GELU backward; accumulates dx.
pub fn gelu_backward<T: Real>(x: &[T], dy: &[T], dx: &mut [T]) {
    let k = T::of_f64(GELU_K);
    let a = T::of_f64(GELU_A);
    let half = T::of_f64(0.5);
    let three = T::of_f64(3.0);
    for ((dxi, &v), &g) in dx.iter_mut().zip(x).zip(dy) {
        let inner = k * (v + a * v * v * v);
        let t = inner.tanh();
        let sech2 = T::one() - t * t;
        let dinner = k * (T::one() + three * a * v * v);
        let dgelu = half * (T::one() + t) + half * v * sech2 * dinner;
        *dxi += g * dgelu;
    }
}

/// Row-wise softmax, in place.
pub fn softmax_rows<T: Real>(x: &mut [T], rows: usize, cols: usize) {
    for r in 0..rows {
        let xr = &mut x[r * cols..(r + 1) * cols];
        let mut maxv = xr[0];
        for &v in xr.iter() {
            if v > maxv {
                maxv = v;
            }
        }
        let mut sum = T::zero();
        for v in xr.iter_mut() {
            *v = (*v - maxv).exp();
            sum += *v;
        }
        let inv = sum.recip();
        for v in xr.iter_mut() {
            *v *= inv;
        }
    }
}

/// Softmax backward given the softmax output `y`; accumulates dx.
pub fn softmax_backward<T: Real>(y: &[T], dy: &[T], rows: usize, cols: usize, dx: &mut [T]) {
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let dyr = &dy[r * cols..(r + 1) * cols];
        let mut dot = T::zero();
        for (&yv, &gv) in yr.iter().zip(dyr) {
            dot += yv * gv;
        }
        let dxr = &mut dx[r * cols..(r + 1) * cols];
        for j in 0..cols {
            dxr[j] += yr[j] * (dyr[j] - dot);
        }
    }
}
