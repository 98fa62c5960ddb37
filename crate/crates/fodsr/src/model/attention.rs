//! Multi-head self-attention within windows, with learned per-head relative
//! position bias.

use super::layers::{linear_backward, linear_forward, softmax_backward, softmax_rows};
use super::tensor::Real;

/// Pairwise relative-position bias table indices for one window shape.
///
/// `idx[i*N + j]` selects the table row for token pair (i, j); the table has
/// `(2w0−1)(2w1−1)(2w2−1)` entries per head.
#[derive(Debug, Clone)]
pub struct RelIndex {
    pub idx: Vec<usize>,
    pub table_len: usize,
    pub n_tokens: usize,
}

pub fn rel_position_index(window: [usize; 3]) -> RelIndex {
    let [w0, w1, w2] = window;
    let n = w0 * w1 * w2;
    let span1 = 2 * w1 - 1;
    let span2 = 2 * w2 - 1;
    let coord = |t: usize| -> (i64, i64, i64) {
        let d = (t / (w1 * w2)) as i64;
        let h = ((t / w2) % w1) as i64;
        let w = (t % w2) as i64;
        (d, h, w)
    };
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (di, hi, wi) = coord(i);
        for j in 0..n {
            let (dj, hj, wj) = coord(j);
            let a = (di - dj + w0 as i64 - 1) as usize;
            let b = (hi - hj + w1 as i64 - 1) as usize;
            let c = (wi - wj + w2 as i64 - 1) as usize;
            idx.push((a * span1 + b) * span2 + c);
        }
    }
    RelIndex {
        idx,
        table_len: (2 * w0 - 1) * span1 * span2,
        n_tokens: n,
    }
}

/// Intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct AttnCache<T> {
    pub qkv: Vec<T>,
    /// Post-softmax attention `[nw, heads, N, N]`.
    pub attn: Vec<T>,
    /// Per-head context before the output projection `[nw, N, C]`.
    pub ctx: Vec<T>,
}

/// Window attention forward over a batch of `nw` windows.
///
/// `x` and `y` are `[nw, N, C]`; weights are shared across windows.
#[allow(clippy::too_many_arguments)]
pub fn window_attention_forward<T: Real>(
    x: &[T],
    nw: usize,
    n_tok: usize,
    c: usize,
    heads: usize,
    wqkv: &[T],
    bqkv: &[T],
    wproj: &[T],
    bproj: &[T],
    rel_bias: &[T],
    rel: &RelIndex,
    y: &mut [T],
) -> AttnCache<T> {
    debug_assert_eq!(rel.n_tokens, n_tok);
    debug_assert_eq!(c % heads, 0);
    let dh = c / heads;
    let scale = T::of_f64(1.0 / (dh as f64).sqrt());
    let rows = nw * n_tok;

    let mut qkv = vec![T::zero(); rows * 3 * c];
    linear_forward(x, wqkv, bqkv, rows, c, 3 * c, &mut qkv);

    let mut attn = vec![T::zero(); nw * heads * n_tok * n_tok];
    let mut ctx = vec![T::zero(); rows * c];

    for w in 0..nw {
        let qkv_w = &qkv[w * n_tok * 3 * c..(w + 1) * n_tok * 3 * c];
        for h in 0..heads {
            let ho = h * dh;
            let bias = &rel_bias[h * rel.table_len..(h + 1) * rel.table_len];
            let a = &mut attn[(w * heads + h) * n_tok * n_tok..(w * heads + h + 1) * n_tok * n_tok];
            for i in 0..n_tok {
                let q = &qkv_w[i * 3 * c + ho..i * 3 * c + ho + dh];
                for j in 0..n_tok {
                    let k = &qkv_w[j * 3 * c + c + ho..j * 3 * c + c + ho + dh];
                    let mut dot = T::zero();
                    for d in 0..dh {
                        dot += q[d] * k[d];
                    }
                    a[i * n_tok + j] = scale * dot + bias[rel.idx[i * n_tok + j]];
                }
            }
            softmax_rows(a, n_tok, n_tok);
            for i in 0..n_tok {
                let out = &mut ctx[(w * n_tok + i) * c + ho..(w * n_tok + i) * c + ho + dh];
                for j in 0..n_tok {
                    let p = a[i * n_tok + j];
                    if p == T::zero() {
                        continue;
                    }
                    let v = &qkv_w[j * 3 * c + 2 * c + ho..j * 3 * c + 2 * c + ho + dh];
                    for d in 0..dh {
                        out[d] += p * v[d];
                    }
                }
            }
        }
    }

    linear_forward(&ctx, wproj, bproj, rows, c, c, y);
    AttnCache { qkv, attn, ctx }
}

/// Window attention backward; accumulates all gradient buffers.
#[allow(clippy::too_many_arguments)]
pub fn window_attention_backward<T: Real>(
    x: &[T],
    cache: &AttnCache<T>,
    dy: &[T],
    nw: usize,
    n_tok: usize,
    c: usize,
    heads: usize,
    wqkv: &[T],
    wproj: &[T],
    rel: &RelIndex,
    dx: &mut [T],
    dwqkv: &mut [T],
    dbqkv: &mut [T],
    dwproj: &mut [T],
    dbproj: &mut [T],
    drel_bias: &mut [T],
) {
    let dh = c / heads;
    let scale = T::of_f64(1.0 / (dh as f64).sqrt());
    let rows = nw * n_tok;

    let mut dctx = vec![T::zero(); rows * c];
    linear_backward(
        &cache.ctx,
        wproj,
        dy,
        rows,
        c,
        c,
        Some(&mut dctx),
        dwproj,
        dbproj,
    );

    let mut dqkv = vec![T::zero(); rows * 3 * c];
    let mut dattn = vec![T::zero(); n_tok * n_tok];
    let mut dlogits = vec![T::zero(); n_tok * n_tok];

    for w in 0..nw {
        let qkv_w = &cache.qkv[w * n_tok * 3 * c..(w + 1) * n_tok * 3 * c];
        let dqkv_w = &mut dqkv[w * n_tok * 3 * c..(w + 1) * n_tok * 3 * c];
        for h in 0..heads {
            let ho = h * dh;
            let a = &cache.attn
                [(w * heads + h) * n_tok * n_tok..(w * heads + h + 1) * n_tok * n_tok];
            dattn.iter_mut().for_each(|v| *v = T::zero());
            dlogits.iter_mut().for_each(|v| *v = T::zero());

            // dattn[i,j] = dctx_i · v_j ; dv_j += attn[i,j] · dctx_i
            for i in 0..n_tok {
                let dc = &dctx[(w * n_tok + i) * c + ho..(w * n_tok + i) * c + ho + dh];
                for j in 0..n_tok {
                    let v = &qkv_w[j * 3 * c + 2 * c + ho..j * 3 * c + 2 * c + ho + dh];
                    let mut dot = T::zero();
                    for d in 0..dh {
                        dot += dc[d] * v[d];
                    }
                    dattn[i * n_tok + j] = dot;
                }
            }
            for j in 0..n_tok {
                let dv =
                    &mut dqkv_w[j * 3 * c + 2 * c + ho..j * 3 * c + 2 * c + ho + dh];
                for i in 0..n_tok {
                    let p = a[i * n_tok + j];
                    if p == T::zero() {
                        continue;
                    }
                    let dc = &dctx[(w * n_tok + i) * c + ho..(w * n_tok + i) * c + ho + dh];
                    for d in 0..dh {
                        dv[d] += p * dc[d];
                    }
                }
            }

            softmax_backward(a, &dattn, n_tok, n_tok, &mut dlogits);

            let db = &mut drel_bias[h * rel.table_len..(h + 1) * rel.table_len];
            for i in 0..n_tok {
                for j in 0..n_tok {
                    db[rel.idx[i * n_tok + j]] += dlogits[i * n_tok + j];
                }
            }

            // dq_i += scale·Σ_j dlogits[i,j]·k_j ; dk_j += scale·Σ_i dlogits[i,j]·q_i
            for i in 0..n_tok {
                let dl = &dlogits[i * n_tok..(i + 1) * n_tok];
                let q_i: Vec<T> =
                    qkv_w[i * 3 * c + ho..i * 3 * c + ho + dh].to_vec();
                for (j, &g) in dl.iter().enumerate() {
                    if g == T::zero() {
                        continue;
                    }
                    let g = g * scale;
                    let k = &qkv_w[j * 3 * c + c + ho..j * 3 * c + c + ho + dh];
                    let dq = &mut dqkv_w[i * 3 * c + ho..i * 3 * c + ho + dh];
                    for d in 0..dh {
                        dq[d] += g * k[d];
                    }
                    let dk = &mut dqkv_w[j * 3 * c + c + ho..j * 3 * c + c + ho + dh];
                    for d in 0..dh {
                        dk[d] += g * q_i[d];
                    }
                }
            }
        }
    }

    linear_backward(x, wqkv, &dqkv, rows, c, 3 * c, Some(dx), dwqkv, dbqkv);
}
