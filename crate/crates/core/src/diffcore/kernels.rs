//! Raw forward/backward kernels over flat buffers.
//!
//! Image tensors are NCHW. Convolutions are stride 1 with zero "same"
//! padding and an odd square kernel.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvDims {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    /// For kernel offset `k`, the valid output range along an axis of length
    /// `len` and the signed input shift.
    fn span(&self, k: usize, len: usize) -> (usize, usize, isize) {
        let shift = k as isize - (self.kernel / 2) as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (len as isize - shift).min(len as isize).max(0) as usize;
        (lo, hi, shift)
    }
}

/// Unfolds one sample `(c_in, H, W)` into `(c_in·k·k, H·W)` patch columns.
fn im2col(d: ConvDims, x: &[f64], col: &mut [f64]) {
    let plane = d.plane();
    let k = d.kernel;
    col.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..d.c_in {
        let in_plane = &x[i * plane..][..plane];
        for ky in 0..k {
            let (y0, y1, sy) = d.span(ky, d.height);
            for kx in 0..k {
                let (x0, x1, sx) = d.span(kx, d.width);
                if x0 >= x1 {
                    continue;
                }
                let row = &mut col[((i * k + ky) * k + kx) * plane..][..plane];
                let ix0 = (x0 as isize + sx) as usize;
                for y in y0..y1 {
                    let iy = (y as isize + sy) as usize;
                    row[y * d.width + x0..y * d.width + x1]
                        .copy_from_slice(&in_plane[iy * d.width + ix0..][..x1 - x0]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(d: ConvDims, col: &[f64], g_x: &mut [f64]) {
    let plane = d.plane();
    let k = d.kernel;
    for i in 0..d.c_in {
        let gx_plane = &mut g_x[i * plane..][..plane];
        for ky in 0..k {
            let (y0, y1, sy) = d.span(ky, d.height);
            for kx in 0..k {
                let (x0, x1, sx) = d.span(kx, d.width);
                if x0 >= x1 {
                    continue;
                }
                let row = &col[((i * k + ky) * k + kx) * plane..][..plane];
                let ix0 = (x0 as isize + sx) as usize;
                for y in y0..y1 {
                    let iy = (y as isize + sy) as usize;
                    let dst = &mut gx_plane[iy * d.width + ix0..][..x1 - x0];
                    for (gv, cv) in dst.iter_mut().zip(&row[y * d.width + x0..y * d.width + x1]) {
                        *gv += cv;
                    }
                }
            }
        }
    }
}

/// `c ← alpha·a·b + beta·c` on row-major matrices, with explicit strides for
/// transposed operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted bounds cover every element addressed by the given
    // dimensions and strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa as isize, csa as isize, b.as_ptr(), rsb as isize, csb as isize, beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

pub(crate) fn conv2d_forward(d: ConvDims, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let plane = d.plane();
    let kk = d.c_in * d.kernel * d.kernel;
    let mut col = vec![0.0; kk * plane];
    for n in 0..d.batch {
        im2col(d, &x[n * d.c_in * plane..][..d.c_in * plane], &mut col);
        let out_n = &mut out[n * d.c_out * plane..][..d.c_out * plane];
        for (o, chunk) in out_n.chunks_exact_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = b[o]);
        }
        gemm(d.c_out, kk, plane, w, (kk, 1), &col, (plane, 1), 1.0, out_n);
    }
}

/// Accumulates (`+=`) the gradients of every conv operand.
pub(crate) fn conv2d_backward(
    d: ConvDims,
    x: &[f64],
    w: &[f64],
    g_out: &[f64],
    g_x: &mut [f64],
    g_w: &mut [f64],
    g_b: &mut [f64],
) {
    let plane = d.plane();
    let kk = d.c_in * d.kernel * d.kernel;
    let mut col = vec![0.0; kk * plane];
    let mut g_col = vec![0.0; kk * plane];
    for n in 0..d.batch {
        let go = &g_out[n * d.c_out * plane..][..d.c_out * plane];
        for (o, chunk) in go.chunks_exact(plane).enumerate() {
            g_b[o] += chunk.iter().sum::<f64>();
        }
        im2col(d, &x[n * d.c_in * plane..][..d.c_in * plane], &mut col);
        // dW (c_out, kk) += gOut (c_out, P) · colᵀ (P, kk)
        gemm(d.c_out, plane, kk, go, (plane, 1), &col, (1, plane), 1.0, g_w);
        // dcol (kk, P) = Wᵀ (kk, c_out) · gOut (c_out, P)
        gemm(kk, d.c_out, plane, w, (1, kk), go, (plane, 1), 0.0, &mut g_col);
        col2im(d, &g_col, &mut g_x[n * d.c_in * plane..][..d.c_in * plane]);
    }
}

/// Four-lane dot product; fixed association order keeps results
/// reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            lanes[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// y = x Wᵀ + b with `x: (n, in)`, `w: (out, in)`.
pub(crate) fn dense_forward(n: usize, d_in: usize, d_out: usize, x: &[f64], w: &[f64], b: &[f64], y: &mut [f64]) {
    for r in 0..n {
        let xr = &x[r * d_in..][..d_in];
        for o in 0..d_out {
            y[r * d_out + o] = b[o] + dot(&w[o * d_in..][..d_in], xr);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    n: usize,
    d_in: usize,
    d_out: usize,
    x: &[f64],
    w: &[f64],
    g_y: &[f64],
    g_x: &mut [f64],
    g_w: &mut [f64],
    g_b: &mut [f64],
) {
    for r in 0..n {
        let xr = &x[r * d_in..][..d_in];
        for o in 0..d_out {
            let g = g_y[r * d_out + o];
            if g == 0.0 {
                continue;
            }
            g_b[o] += g;
            let wrow = &w[o * d_in..][..d_in];
            let gwrow = &mut g_w[o * d_in..][..d_in];
            for j in 0..d_in {
                gwrow[j] += g * xr[j];
            }
            let gxr = &mut g_x[r * d_in..][..d_in];
            for j in 0..d_in {
                gxr[j] += g * wrow[j];
            }
        }
    }
}

/// 2×2 max pooling, stride 2. Returns argmax offsets into `x`.
pub(crate) fn maxpool_forward(planes: usize, h: usize, w: usize, x: &[f64], y: &mut [f64]) -> Vec<usize> {
    let (oh, ow) = (h / 2, w / 2);
    let mut arg = vec![0usize; planes * oh * ow];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = p * oh * ow + oy * ow + ox;
                y[o] = x[best];
                arg[o] = best;
            }
        }
    }
    arg
}

pub(crate) fn softmax_rows(cols: usize, x: &[f64], y: &mut [f64]) {
    for (xr, yr) in x.chunks_exact(cols).zip(y.chunks_exact_mut(cols)) {
        let max = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (yv, xv) in yr.iter_mut().zip(xr) {
            *yv = (xv - max).exp();
            sum += *yv;
        }
        yr.iter_mut().for_each(|v| *v /= sum);
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition of "same" convolution, used as an oracle.
    fn conv_naive(d: ConvDims, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let (h, wd, k) = (d.height as isize, d.width as isize, d.kernel as isize);
        let pad = k / 2;
        let mut out = vec![0.0; d.batch * d.c_out * d.plane()];
        for n in 0..d.batch {
            for o in 0..d.c_out {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = b[o];
                        for i in 0..d.c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let (iy, ix) = (y + ky - pad, xx + kx - pad);
                                    if iy < 0 || ix < 0 || iy >= h || ix >= wd {
                                        continue;
                                    }
                                    let xi = ((n * d.c_in + i) as isize * h + iy) * wd + ix;
                                    let wi = ((o * d.c_in + i) as isize * k + ky) * k + kx;
                                    acc += w[wi as usize] * x[xi as usize];
                                }
                            }
                        }
                        out[((n * d.c_out + o) as isize * h + y) as usize * d.width + xx as usize] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_definition() {
        let d = ConvDims { batch: 2, c_in: 3, c_out: 2, height: 5, width: 4, kernel: 3 };
        let x: Vec<f64> = (0..2 * 3 * 20).map(|i| ((i * 37) % 11) as f64 * 0.1 - 0.5).collect();
        let w: Vec<f64> = (0..2 * 3 * 9).map(|i| ((i * 13) % 7) as f64 * 0.2 - 0.6).collect();
        let b = vec![0.3, -0.1];
        let mut out = vec![0.0; 2 * 2 * 20];
        conv2d_forward(d, &x, &w, &b, &mut out);
        let expect = conv_naive(d, &x, &w, &b);
        for (a, e) in out.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_picks_maximum() {
        let x = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 1.0];
        let mut y = [0.0; 2];
        let arg = maxpool_forward(1, 2, 4, &x, &mut y);
        assert_eq!(y, [5.0, 9.0]);
        assert_eq!(arg, vec![1, 6]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
