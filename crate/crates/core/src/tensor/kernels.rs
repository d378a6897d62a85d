//! Raw dense loops behind the tape operations. All buffers are row-major.

use crate::par;

/// Rows per partial buffer when a weight gradient is reduced over the batch.
const REDUCE_GROUP: usize = 16;

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Sequential left-to-right dot product.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Column tile width of the accumulate-style kernels.
const COL_TILE: usize = 256;

/// `a[m×k] · b[k×n]`, each entry summed over `p` in index order.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    par::for_each_chunk_mut(&mut out, ROW_GROUP * n, |g, rows| {
        let i0 = g * ROW_GROUP;
        for c0 in (0..n).step_by(COL_TILE) {
            let c1 = (c0 + COL_TILE).min(n);
            for (r, row) in rows.chunks_exact_mut(n).enumerate() {
                let arow = &a[(i0 + r) * k..(i0 + r + 1) * k];
                for (p, &av) in arow.iter().enumerate() {
                    axpy(av, &b[p * n + c0..p * n + c1], &mut row[c0..c1]);
                }
            }
        }
    });
    out
}

/// `a[m×k] · b[n×k]ᵀ`, each entry a sequential dot product.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    dots_nt(a, b, k, n, 0, &mut out);
    out
}

/// Fills `out` (whole rows of width `n`, starting at row `row0` of `a`) with
/// `a·bᵀ`. Outputs are computed in 4×4 tiles so independent accumulators
/// overlap, but every entry still sums its k products left to right.
fn dots_nt(a: &[f64], b: &[f64], k: usize, n: usize, row0: usize, out: &mut [f64]) {
    let rows = if n == 0 { 0 } else { out.len() / n };
    let mut i = 0;
    while i + 4 <= rows {
        let ar: [&[f64]; 4] = std::array::from_fn(|r| &a[(row0 + i + r) * k..(row0 + i + r + 1) * k]);
        let mut j = 0;
        while j + 4 <= n {
            let bt = &b[j * k..(j + 4) * k];
            let (b0, rest) = bt.split_at(k);
            let (b1, rest) = rest.split_at(k);
            let (b2, b3) = rest.split_at(k);
            let (a0, a1, a2, a3) = (&ar[0][..k], &ar[1][..k], &ar[2][..k], &ar[3][..k]);
            let mut acc = [[0.0f64; 4]; 4];
            for p in 0..k {
                let bv = [b0[p], b1[p], b2[p], b3[p]];
                let av = [a0[p], a1[p], a2[p], a3[p]];
                for r in 0..4 {
                    for c in 0..4 {
                        acc[r][c] += av[r] * bv[c];
                    }
                }
            }
            for r in 0..4 {
                out[(i + r) * n + j..(i + r) * n + j + 4].copy_from_slice(&acc[r]);
            }
            j += 4;
        }
        for jj in j..n {
            for r in 0..4 {
                out[(i + r) * n + jj] = dot(ar[r], &b[jj * k..(jj + 1) * k]);
            }
        }
        i += 4;
    }
    for ii in i..rows {
        let arow = &a[(row0 + ii) * k..(row0 + ii + 1) * k];
        for j in 0..n {
            out[ii * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `a[m×k]ᵀ · b[m×n]` → `[k×n]`, summed over rows in index order.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    if n == 0 {
        return out;
    }
    par::for_each_chunk_mut(&mut out, ROW_GROUP * n, |g, rows| {
        let p0 = g * ROW_GROUP;
        for c0 in (0..n).step_by(COL_TILE) {
            let c1 = (c0 + COL_TILE).min(n);
            for (r, orow) in rows.chunks_exact_mut(n).enumerate() {
                let p = p0 + r;
                for i in 0..m {
                    let av = a[i * k + p];
                    if av != 0.0 {
                        axpy(av, &b[i * n + c0..i * n + c1], &mut orow[c0..c1]);
                    }
                }
            }
        }
    });
    out
}

/// Rows per parallel task in the dense kernels; a multiple of the tile height.
const ROW_GROUP: usize = 32;

/// `y[i, j] = Σ_k x[i, k]·w[j, k] + bias[j]`, with the dot product accumulated
/// left to right before the bias is added.
pub(crate) fn linear(x: &[f64], w: &[f64], bias: &[f64], rows: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * out];
    if out == 0 {
        return y;
    }
    par::for_each_chunk_mut(&mut y, ROW_GROUP * out, |g, ys| {
        dots_nt(x, w, inp, out, g * ROW_GROUP, ys);
        for yrow in ys.chunks_exact_mut(out) {
            for (yv, bv) in yrow.iter_mut().zip(bias) {
                *yv += bv;
            }
        }
    });
    debug_assert_eq!(x.len(), rows * inp);
    y
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub len: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvDims {
    pub fn out_len(&self) -> usize {
        self.len + 1 - self.k
    }
}

/// Valid cross-correlation over the last axis.
pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], bias: &[f64], d: &ConvDims) -> Vec<f64> {
    let lo = d.out_len();
    let mut y = vec![0.0; d.batch * d.cout * lo];
    par::for_each_chunk_mut(&mut y, d.cout * lo, |b, yb| {
        let xb = &x[b * d.cin * d.len..(b + 1) * d.cin * d.len];
        for o in 0..d.cout {
            let row = &mut yb[o * lo..(o + 1) * lo];
            row.fill(bias[o]);
            for c in 0..d.cin {
                let xc = &xb[c * d.len..(c + 1) * d.len];
                let wo = &w[(o * d.cin + c) * d.k..(o * d.cin + c + 1) * d.k];
                for (j, &wv) in wo.iter().enumerate() {
                    axpy(wv, &xc[j..j + lo], row);
                }
            }
        }
    });
    y
}

/// Returns (dx, dw, db) for a valid 1-D convolution. `need_x`/`need_w` skip
/// the corresponding work.
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    d: &ConvDims,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let lo = d.out_len();
    let dx = need_x.then(|| {
        let mut dx = vec![0.0; d.batch * d.cin * d.len];
        par::for_each_chunk_mut(&mut dx, d.cin * d.len, |b, dxb| {
            let dyb = &dy[b * d.cout * lo..(b + 1) * d.cout * lo];
            for o in 0..d.cout {
                let g = &dyb[o * lo..(o + 1) * lo];
                for c in 0..d.cin {
                    let wo = &w[(o * d.cin + c) * d.k..(o * d.cin + c + 1) * d.k];
                    let dxc = &mut dxb[c * d.len..(c + 1) * d.len];
                    for (j, &wv) in wo.iter().enumerate() {
                        axpy(wv, g, &mut dxc[j..j + lo]);
                    }
                }
            }
        });
        dx
    });
    let (dw, db) = if need_w {
        let wlen = d.cout * d.cin * d.k;
        let groups = d.batch.div_ceil(REDUCE_GROUP);
        let mut acc = vec![0.0; wlen + d.cout];
        par::sum_partials(groups, wlen + d.cout, &mut acc, |gi, buf| {
            let (dwp, dbp) = buf.split_at_mut(wlen);
            let start = gi * REDUCE_GROUP;
            let end = (start + REDUCE_GROUP).min(d.batch);
            for b in start..end {
                let xb = &x[b * d.cin * d.len..(b + 1) * d.cin * d.len];
                let dyb = &dy[b * d.cout * lo..(b + 1) * d.cout * lo];
                for o in 0..d.cout {
                    let g = &dyb[o * lo..(o + 1) * lo];
                    dbp[o] += g.iter().sum::<f64>();
                    for c in 0..d.cin {
                        let xc = &xb[c * d.len..(c + 1) * d.len];
                        let base = (o * d.cin + c) * d.k;
                        for j in 0..d.k {
                            dwp[base + j] += dot(g, &xc[j..j + lo]);
                        }
                    }
                }
            }
        });
        let db = acc.split_off(wlen);
        (Some(acc), Some(db))
    } else {
        (None, None)
    };
    (dx, dw, db)
}

/// Non-overlapping average pooling over the last axis; trailing remainder dropped.
pub(crate) fn avg_pool_forward(x: &[f64], rows: usize, len: usize, window: usize) -> Vec<f64> {
    let lo = len / window;
    let inv = 1.0 / window as f64;
    let mut y = vec![0.0; rows * lo];
    for r in 0..rows {
        let xr = &x[r * len..(r + 1) * len];
        for t in 0..lo {
            let s: f64 = xr[t * window..(t + 1) * window].iter().sum();
            y[r * lo + t] = s * inv;
        }
    }
    y
}

pub(crate) fn avg_pool_backward(dy: &[f64], rows: usize, len: usize, window: usize) -> Vec<f64> {
    let lo = len / window;
    let inv = 1.0 / window as f64;
    let mut dx = vec![0.0; rows * len];
    for r in 0..rows {
        for t in 0..lo {
            let g = dy[r * lo + t] * inv;
            for v in &mut dx[r * len + t * window..r * len + (t + 1) * window] {
                *v = g;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let c = matmul(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
        // bᵀ stored as 2x3
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        assert_eq!(matmul_nt(&a, &bt, 2, 3, 2), c);
        // aᵀ·c with a as 2x3 → 3x2
        let atc = matmul_tn(&a, &c, 2, 3, 2);
        assert_eq!(atc[0], 1.0 * 58.0 + 4.0 * 139.0);
    }

    #[test]
    fn conv_backward_bias_is_output_sum() {
        let d = ConvDims {
            batch: 2,
            cin: 1,
            len: 4,
            cout: 1,
            k: 2,
        };
        let x = [1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 0.0, 1.0];
        let w = [1.0, 1.0];
        let y = conv1d_forward(&x, &w, &[0.0], &d);
        assert_eq!(&y[..3], &[3.0, 5.0, 7.0]);
        let dy = vec![1.0; 6];
        let (_, dw, db) = conv1d_backward(&x, &w, &dy, &d, false, true);
        assert_eq!(db.unwrap(), vec![6.0]);
        assert_eq!(dw.unwrap(), vec![1.0 + 2.0 + 3.0 + 1.0, 2.0 + 3.0 + 4.0 + 1.0 + 1.0]);
    }
}
