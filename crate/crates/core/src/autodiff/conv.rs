//! 1-D convolution kernels lowered to matrix products (im2col).

/// `(width_out, K * cin)` matrix of input patches; out-of-range taps are zero.
fn im2col(x: &[f64], width: usize, cin: usize, k: usize, stride: usize, pad: usize, out_w: usize) -> Vec<f64> {
    let kc = k * cin;
    let mut col = vec![0.0; out_w * kc];
    for t in 0..out_w {
        let row = &mut col[t * kc..(t + 1) * kc];
        for kk in 0..k {
            let src = (t * stride + kk) as isize - pad as isize;
            if src >= 0 && (src as usize) < width {
                let s = src as usize;
                row[kk * cin..(kk + 1) * cin].copy_from_slice(&x[s * cin..(s + 1) * cin]);
            }
        }
    }
    col
}

/// `c (m x n) += a (m x k) * b (k x n)`, all row-major unless transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe matrices that fit inside the slices checked above.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 1.0, c.as_mut_ptr(), n as isize, 1);
    }
}

pub(super) struct ConvDims {
    pub width: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_w: usize,
}

pub(super) fn forward(d: &ConvDims, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let col = im2col(x, d.width, d.cin, d.k, d.stride, d.pad, d.out_w);
    let mut out: Vec<f64> = (0..d.out_w).flat_map(|_| b.iter().copied()).collect();
    gemm(d.out_w, d.k * d.cin, d.cout, &col, false, w, false, &mut out);
    out
}

/// Returns `(dx, dw, db)` for upstream gradient `g` of shape `(out_w, cout)`.
pub(super) fn backward(d: &ConvDims, x: &[f64], w: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let kc = d.k * d.cin;
    let col = im2col(x, d.width, d.cin, d.k, d.stride, d.pad, d.out_w);
    let mut dw = vec![0.0; kc * d.cout];
    gemm(kc, d.out_w, d.cout, &col, true, g, false, &mut dw);
    let mut dcol = vec![0.0; d.out_w * kc];
    gemm(d.out_w, d.cout, kc, g, false, w, true, &mut dcol);
    let mut dx = vec![0.0; x.len()];
    for t in 0..d.out_w {
        for kk in 0..d.k {
            let src = (t * d.stride + kk) as isize - d.pad as isize;
            if src >= 0 && (src as usize) < d.width {
                let s = src as usize;
                let from = &dcol[t * kc + kk * d.cin..t * kc + (kk + 1) * d.cin];
                for (a, v) in dx[s * d.cin..(s + 1) * d.cin].iter_mut().zip(from) {
                    *a += v;
                }
            }
        }
    }
    let mut db = vec![0.0; d.cout];
    for row in g.chunks(d.cout) {
        for (a, v) in db.iter_mut().zip(row) {
            *a += v;
        }
    }
    (dx, dw, db)
}
