//! 3D window partitioning with optional cyclic shift.
//!
//! Feature tensors are `[D,H,W,C]` row-major (channel fastest). Windows are
//! emitted as `[n_windows, tokens_per_window, C]` with tokens ordered
//! d-major. Partition and reverse are exact inverse permutations, so the
//! backward pass of one is the other.

use crate::error::{FodError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGrid {
    pub dims: [usize; 3],
    pub channels: usize,
    pub window: [usize; 3],
    /// Cyclic shift applied before partitioning (0 ≤ shift < window).
    pub shift: [usize; 3],
    pub n_windows: usize,
    pub tokens_per_window: usize,
}

impl WindowGrid {
    pub fn new(
        dims: [usize; 3],
        channels: usize,
        window: [usize; 3],
        shift: [usize; 3],
    ) -> Result<Self> {
        for a in 0..3 {
            if window[a] == 0 || dims[a] % window[a] != 0 {
                return Err(FodError::InvalidArgument(format!(
                    "dims {dims:?} not divisible by window {window:?} on axis {a}"
                )));
            }
        }
        let shift = [
            shift[0] % window[0],
            shift[1] % window[1],
            shift[2] % window[2],
        ];
        let n_windows = (dims[0] / window[0]) * (dims[1] / window[1]) * (dims[2] / window[2]);
        Ok(Self {
            dims,
            channels,
            window,
            shift,
            n_windows,
            tokens_per_window: window[0] * window[1] * window[2],
        })
    }

    pub fn n_values(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2] * self.channels
    }
}

/// Gather the (cyclically shifted) volume into window-major order.
pub fn partition<T: Copy>(grid: &WindowGrid, x: &[T], out: &mut [T]) {
    debug_assert_eq!(x.len(), grid.n_values());
    debug_assert_eq!(out.len(), grid.n_values());
    let [gd, gh, gw] = [
        grid.dims[0] / grid.window[0],
        grid.dims[1] / grid.window[1],
        grid.dims[2] / grid.window[2],
    ];
    let [wd, wh, ww] = grid.window;
    let [d_all, h_all, w_all] = grid.dims;
    let c = grid.channels;
    let mut o = 0;
    for bd in 0..gd {
        for bh in 0..gh {
            for bw in 0..gw {
                for td in 0..wd {
                    let sd = (bd * wd + td + grid.shift[0]) % d_all;
                    for th in 0..wh {
                        let sh = (bh * wh + th + grid.shift[1]) % h_all;
                        for tw in 0..ww {
                            let sw = (bw * ww + tw + grid.shift[2]) % w_all;
                            let src = ((sd * h_all + sh) * w_all + sw) * c;
                            out[o..o + c].copy_from_slice(&x[src..src + c]);
                            o += c;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter window-major data back to the volume (inverse of [`partition`]).
pub fn reverse<T: Copy>(grid: &WindowGrid, windows: &[T], out: &mut [T]) {
    debug_assert_eq!(windows.len(), grid.n_values());
    debug_assert_eq!(out.len(), grid.n_values());
    let [gd, gh, gw] = [
        grid.dims[0] / grid.window[0],
        grid.dims[1] / grid.window[1],
        grid.dims[2] / grid.window[2],
    ];
    let [wd, wh, ww] = grid.window;
    let [d_all, h_all, w_all] = grid.dims;
    let c = grid.channels;
    let mut o = 0;
    for bd in 0..gd {
        for bh in 0..gh {
            for bw in 0..gw {
                for td in 0..wd {
                    let sd = (bd * wd + td + grid.shift[0]) % d_all;
                    for th in 0..wh {
                        let sh = (bh * wh + th + grid.shift[1]) % h_all;
                        for tw in 0..ww {
                            let sw = (bw * ww + tw + grid.shift[2]) % w_all;
                            let dst = ((sd * h_all + sh) * w_all + sw) * c;
                            out[dst..dst + c].copy_from_slice(&windows[o..o + c]);
                            o += c;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_no_shift_is_identity() {
        let grid = WindowGrid::new([4, 4, 4], 3, [4, 4, 4], [0, 0, 0]).unwrap();
        let x: Vec<f32> = (0..grid.n_values()).map(|i| i as f32).collect();
        let mut w = vec![0.0; x.len()];
        partition(&grid, &x, &mut w);
        assert_eq!(w, x);
        assert_eq!(grid.n_windows, 1);
    }

    #[test]
    fn window_count_arithmetic() {
        let grid = WindowGrid::new([8, 8, 8], 2, [4, 4, 4], [0, 0, 0]).unwrap();
        assert_eq!(grid.n_windows, 8);
        assert_eq!(grid.tokens_per_window, 64);
    }

    #[test]
    fn indivisible_dims_error() {
        assert!(WindowGrid::new([6, 8, 8], 1, [4, 4, 4], [0, 0, 0]).is_err());
    }

    #[test]
    fn partition_reverse_roundtrip_with_shift() {
        let grid = WindowGrid::new([8, 4, 8], 5, [4, 2, 4], [2, 1, 2]).unwrap();
        let x: Vec<f64> = (0..grid.n_values()).map(|i| (i as f64).sin()).collect();
        let mut w = vec![0.0; x.len()];
        let mut back = vec![0.0; x.len()];
        partition(&grid, &x, &mut w);
        assert_ne!(w, x); // the shift actually moved content
        reverse(&grid, &w, &mut back);
        assert_eq!(back, x); // exact bijection
    }

    #[test]
    fn shift_wraps_cyclically() {
        // 1D-ish check: D=4, window 2, shift 1, single channel.
        let grid = WindowGrid::new([4, 1, 1], 1, [2, 1, 1], [1, 0, 0]).unwrap();
        let x = vec![10.0, 11.0, 12.0, 13.0];
        let mut w = vec![0.0; 4];
        partition(&grid, &x, &mut w);
        // shifted view = [11,12,13,10] → windows [11,12],[13,10]
        assert_eq!(w, vec![11.0, 12.0, 13.0, 10.0]);
    }
}
