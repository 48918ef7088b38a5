//! Linear prediction: autocorrelation, Levinson-Durbin, the LPC <-> LSP
//! transforms, sub-frame residual computation and synthesis filtering.
//!
//! Predictor convention: `s_hat(t) = sum_i a_i s(t - i)`, so the inverse
//! filter is `A(z) = 1 - sum_i a_i z^-i`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::signal::{
    subframe_overlap_add, AnalysisFrame, WindowBank, ANALYSIS_LEN, CODING_LEN, SUBFRAME_LEN,
};

/// Prediction order used by the codec.
pub const LPC_ORDER: usize = 16;
/// White-noise correction applied to `r[0]` before the recursion.
pub const WHITE_NOISE_CORRECTION: f64 = 1.0001;
/// Grid resolution of the LSP root search over (0, pi).
pub const LSP_GRID: usize = 512;
/// Bisection stops once the bracket is narrower than this (radians).
pub const LSP_TOLERANCE: f64 = 1e-10;
/// Reflection coefficients are clamped to this magnitude.
const MAX_REFLECTION: f64 = 0.9999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpcError {
    #[error("degenerate frame: non-positive zero-lag autocorrelation")]
    Degenerate,
    #[error("reflection coefficient magnitude >= 1 at order {order}; clamped")]
    ReflectionClamped { order: usize, coeffs: LpcCoeffs },
    #[error("LSP search failure: found {found} of {expected} roots")]
    LspSearch { found: usize, expected: usize },
    #[error("invalid LSP ordering")]
    LspOrdering,
    #[error("odd prediction order {0} is not supported")]
    OddOrder(usize),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
}

/// Prediction coefficients `a_1..a_p` and the final prediction error.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcCoeffs {
    pub a: Vec<f64>,
    pub gain_error: f64,
}

impl LpcCoeffs {
    pub fn zeros(order: usize) -> Self {
        Self { a: vec![0.0; order], gain_error: 0.0 }
    }

    pub fn order(&self) -> usize {
        self.a.len()
    }
}

/// Line spectral frequencies in radians, strictly increasing in (0, pi).
#[derive(Debug, Clone, PartialEq)]
pub struct LspVector {
    omega: Vec<f64>,
}

impl LspVector {
    pub fn new(omega: Vec<f64>) -> Result<Self, LpcError> {
        let in_range = omega.iter().all(|&w| w > 0.0 && w < PI);
        let increasing = omega.windows(2).all(|p| p[0] < p[1]);
        if !in_range || !increasing {
            return Err(LpcError::LspOrdering);
        }
        if omega.len() % 2 == 1 {
            return Err(LpcError::OddOrder(omega.len()));
        }
        Ok(Self { omega })
    }

    /// LSPs of the flat (all-zero predictor) filter: `k pi / (p + 1)`.
    pub fn uniform(order: usize) -> Self {
        let step = PI / (order + 1) as f64;
        Self { omega: (1..=order).map(|k| k as f64 * step).collect() }
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }
}

/// Reflection-coefficient view of a recursion, one error value per order.
#[derive(Debug, Clone, PartialEq)]
pub struct LevinsonTrace {
    pub reflection: Vec<f64>,
    /// `errors[m]` is the prediction error of the order-`m` model (`errors[0] = r[0]`).
    pub errors: Vec<f64>,
}

/// `r[k] = sum_t x[t] x[t + k]` for `k = 0..=order`.
pub fn autocorrelation(x: &[f64], order: usize) -> Vec<f64> {
    (0..=order)
        .map(|k| if k < x.len() { x[..x.len() - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum() } else { 0.0 })
        .collect()
}

/// Solves the Toeplitz normal equations for a predictor of order `r.len() - 1`.
///
/// Returns [`LpcError::Degenerate`] when `r[0] <= 0`. If a reflection
/// coefficient reaches magnitude 1 it is clamped and the clamped (stable)
/// solution is returned inside [`LpcError::ReflectionClamped`].
pub fn levinson_durbin(r: &[f64]) -> Result<LpcCoeffs, LpcError> {
    levinson_durbin_traced(r).map(|(c, _)| c)
}

pub fn levinson_durbin_traced(r: &[f64]) -> Result<(LpcCoeffs, LevinsonTrace), LpcError> {
    let order = r.len().saturating_sub(1);
    if r.is_empty() || !(r[0] > 0.0) {
        return Err(LpcError::Degenerate);
    }
    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut err = r[0];
    let mut trace = LevinsonTrace { reflection: Vec::with_capacity(order), errors: vec![err] };
    let mut clamped_at = None;
    for m in 0..order {
        let acc = r[m + 1] - (0..m).map(|i| a[i] * r[m - i]).sum::<f64>();
        let mut k = acc / err;
        if k.abs() >= 1.0 || !k.is_finite() {
            clamped_at.get_or_insert(m + 1);
            k = if k.is_finite() { k.signum() * MAX_REFLECTION } else { 0.0 };
        }
        prev[..m].copy_from_slice(&a[..m]);
        for i in 0..m {
            a[i] = prev[i] - k * prev[m - 1 - i];
        }
        a[m] = k;
        err *= 1.0 - k * k;
        trace.reflection.push(k);
        trace.errors.push(err);
    }
    let coeffs = LpcCoeffs { a, gain_error: err.max(0.0) };
    match clamped_at {
        Some(order) => Err(LpcError::ReflectionClamped { order, coeffs }),
        None => Ok((coeffs, trace)),
    }
}

/// Mean-square level (per windowed sample) treated as digital silence:
/// roughly the quantization noise power of 16-bit PCM.
pub const SILENCE_POWER: f64 = 1e-10;

/// Full analysis of one windowed frame with the degenerate-frame guard.
///
/// Silent frames yield zero coefficients; clamped recursions keep the
/// clamped solution. The flag is true when either fallback was taken.
pub fn analyze_windowed(windowed: &[f64], order: usize) -> (LpcCoeffs, bool) {
    let mut r = autocorrelation(windowed, order);
    // Below the PCM noise floor the "spectrum" is filter ringing and
    // rounding; fitting it gives near-unit-circle poles.
    if r[0] < SILENCE_POWER * windowed.len() as f64 {
        return (LpcCoeffs::zeros(order), true);
    }
    r[0] *= WHITE_NOISE_CORRECTION;
    match levinson_durbin(&r) {
        Ok(c) => (c, false),
        Err(LpcError::ReflectionClamped { coeffs, .. }) => (coeffs, true),
        Err(_) => (LpcCoeffs::zeros(order), true),
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Sum/difference polynomials with their trivial roots divided out.
///
/// Both are symmetric of degree `p`; `P'` holds the even-indexed LSPs.
fn sum_difference_polys(a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = a.len();
    // A(z) coefficients in z^-1: [1, -a1, ..., -ap].
    let mut poly = vec![1.0];
    poly.extend(a.iter().map(|x| -x));
    let mut sum = vec![0.0; p + 2];
    let mut diff = vec![0.0; p + 2];
    for i in 0..=p + 1 {
        let fwd = if i <= p { poly[i] } else { 0.0 };
        let rev = if i >= 1 { poly[p + 1 - i] } else { 0.0 };
        sum[i] = fwd + rev;
        diff[i] = fwd - rev;
    }
    // Synthetic division by (1 + z^-1) and (1 - z^-1).
    let mut ps = vec![0.0; p + 1];
    let mut qs = vec![0.0; p + 1];
    ps[0] = sum[0];
    qs[0] = diff[0];
    for i in 1..=p {
        ps[i] = sum[i] - ps[i - 1];
        qs[i] = diff[i] + qs[i - 1];
    }
    (ps, qs)
}

/// Evaluates a symmetric polynomial of even degree on the unit circle,
/// with the linear-phase term removed, as a Chebyshev series in `cos w`.
fn eval_symmetric(c: &[f64], w: f64) -> f64 {
    let m = (c.len() - 1) / 2;
    let x = w.cos();
    let (mut t_prev, mut t_cur) = (1.0, x);
    let mut acc = c[m];
    for k in 1..=m {
        let tk = if k == 1 { x } else {
            let next = 2.0 * x * t_cur - t_prev;
            t_prev = t_cur;
            t_cur = next;
            next
        };
        acc += 2.0 * c[m - k] * tk;
    }
    acc
}

fn find_roots(c: &[f64], out: &mut Vec<f64>) {
    let step = PI / LSP_GRID as f64;
    let mut lo = 0.0;
    let mut f_lo = eval_symmetric(c, lo);
    for g in 1..=LSP_GRID {
        let hi = g as f64 * step;
        let f_hi = eval_symmetric(c, hi);
        if f_lo == 0.0 && lo > 0.0 {
            out.push(lo);
        } else if f_lo * f_hi < 0.0 {
            let (mut a, mut b, mut fa) = (lo, hi, f_lo);
            while b - a > LSP_TOLERANCE {
                let mid = 0.5 * (a + b);
                let fm = eval_symmetric(c, mid);
                if fm == 0.0 {
                    a = mid;
                    b = mid;
                    break;
                }
                if fa * fm < 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    fa = fm;
                }
            }
            out.push(0.5 * (a + b));
        }
        lo = hi;
        f_lo = f_hi;
    }
}

/// Converts stable prediction coefficients to line spectral frequencies.
pub fn lpc_to_lsp(coeffs: &LpcCoeffs) -> Result<LspVector, LpcError> {
    let p = coeffs.order();
    if p % 2 == 1 {
        return Err(LpcError::OddOrder(p));
    }
    let (ps, qs) = sum_difference_polys(&coeffs.a);
    let mut roots = Vec::with_capacity(p);
    find_roots(&ps, &mut roots);
    find_roots(&qs, &mut roots);
    if roots.len() != p {
        return Err(LpcError::LspSearch { found: roots.len(), expected: p });
    }
    roots.sort_by(f64::total_cmp);
    LspVector::new(roots).map_err(|_| LpcError::LspSearch { found: p, expected: p })
}

fn lsp_products(omega: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![1.0, 1.0];
    let mut q = vec![1.0, -1.0];
    for (k, w) in omega.iter().enumerate() {
        let factor = [1.0, -2.0 * w.cos(), 1.0];
        if k % 2 == 0 {
            p = poly_mul(&p, &factor);
        } else {
            q = poly_mul(&q, &factor);
        }
    }
    (p, q)
}

/// Prediction coefficients from raw frequencies, without ordering checks.
///
/// Used on the training path, where frequencies are kept ordered by
/// construction but may touch.
pub fn lsp_to_lpc_unchecked(omega: &[f64]) -> Vec<f64> {
    let (p, q) = lsp_products(omega);
    (1..=omega.len()).map(|i| -0.5 * (p[i] + q[i])).collect()
}

/// Jacobian `d a_i / d omega_k` of [`lsp_to_lpc_unchecked`], row-major `[i][k]`.
pub fn lsp_to_lpc_jacobian(omega: &[f64]) -> Vec<f64> {
    let order = omega.len();
    let mut jac = vec![0.0; order * order];
    for (k, wk) in omega.iter().enumerate() {
        let mut poly = if k % 2 == 0 { vec![1.0, 1.0] } else { vec![1.0, -1.0] };
        for (j, w) in omega.iter().enumerate() {
            if j != k && j % 2 == k % 2 {
                poly = poly_mul(&poly, &[1.0, -2.0 * w.cos(), 1.0]);
            }
        }
        // d/dw of (1 - 2 cos w z^-1 + z^-2) is 2 sin w z^-1.
        let deriv = poly_mul(&poly, &[0.0, 2.0 * wk.sin()]);
        for i in 1..=order {
            jac[(i - 1) * order + k] = -0.5 * deriv[i];
        }
    }
    jac
}

/// Rebuilds prediction coefficients from a valid LSP vector.
pub fn lsp_to_lpc(lsp: &LspVector) -> LpcCoeffs {
    LpcCoeffs { a: lsp_to_lpc_unchecked(lsp.omega()), gain_error: 0.0 }
}

/// Prediction residual of the middle 512 samples of an analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFrame {
    pub e: Vec<f64>,
    pub frame_index: usize,
}

/// Inverse filtering `e(t) = s(t) - sum_i a_i s(t - i)` over `context[p..]`,
/// where the first `p` samples of `context` are the filter memory.
pub fn fir_residual(context: &[f64], a: &[f64]) -> Vec<f64> {
    let p = a.len();
    (p..context.len())
        .map(|t| context[t] - a.iter().enumerate().map(|(i, ai)| ai * context[t - 1 - i]).sum::<f64>())
        .collect()
}

/// Computes the residual of the frame's middle half one sub-frame at a time.
///
/// Each sub-frame is inverse filtered with the true preceding samples as
/// memory, weighted by its sub-frame window and overlap-added. The windows
/// sum to one, so the result equals plain inverse filtering of the region.
pub fn compute_residual(
    frame: &AnalysisFrame,
    coeffs: &LpcCoeffs,
    bank: &WindowBank,
    frame_index: usize,
) -> Result<ResidualFrame, LpcError> {
    if frame.samples.len() != ANALYSIS_LEN {
        return Err(LpcError::Length { expected: ANALYSIS_LEN, got: frame.samples.len() });
    }
    let p = coeffs.order();
    let mid = (ANALYSIS_LEN - CODING_LEN) / 2;
    let subs: Vec<Vec<f64>> = bank
        .sub_frames
        .iter()
        .enumerate()
        .map(|(w, win)| {
            let start = mid + WindowBank::sub_frame_offset(w);
            let e = fir_residual(&frame.samples[start - p..start + SUBFRAME_LEN], &coeffs.a);
            e.iter().zip(win).map(|(x, w)| x * w).collect()
        })
        .collect();
    Ok(ResidualFrame { e: subframe_overlap_add(&subs), frame_index })
}

/// All-pole synthesis `s(t) = e(t) + sum_i a_i s(t - i)`.
///
/// `memory` holds the previous `p` output samples in chronological order and
/// is returned updated to the last `p` outputs.
pub fn synthesize(residual: &[f64], coeffs: &LpcCoeffs, memory: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = coeffs.order();
    let mut buf = Vec::with_capacity(p + residual.len());
    buf.extend_from_slice(&memory[memory.len() - p..]);
    for (t, e) in residual.iter().enumerate() {
        let pred: f64 = coeffs.a.iter().enumerate().map(|(i, ai)| ai * buf[p + t - 1 - i]).sum();
        buf.push(e + pred);
    }
    let new_memory = buf[buf.len() - p..].to_vec();
    (buf.split_off(p), new_memory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::apply_cross_frame_window;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Gaussian elimination with partial pivoting on the Toeplitz system.
    fn toeplitz_solve(r: &[f64]) -> Vec<f64> {
        let p = r.len() - 1;
        let mut m: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                let mut row: Vec<f64> = (0..p).map(|j| r[i.abs_diff(j)]).collect();
                row.push(r[i + 1]);
                row
            })
            .collect();
        for c in 0..p {
            let piv = (c..p).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, piv);
            for row in c + 1..p {
                let f = m[row][c] / m[c][c];
                for k in c..=p {
                    m[row][k] -= f * m[c][k];
                }
            }
        }
        let mut x = vec![0.0; p];
        for i in (0..p).rev() {
            let s: f64 = (i + 1..p).map(|j| m[i][j] * x[j]).sum();
            x[i] = (m[i][p] - s) / m[i][i];
        }
        x
    }

    /// Step-up recursion from reflection coefficients to a stable predictor.
    pub(crate) fn random_stable(rng: &mut ChaCha8Rng, order: usize, max_k: f64) -> Vec<f64> {
        let mut a: Vec<f64> = Vec::new();
        for m in 0..order {
            let k = rng.random_range(-max_k..max_k);
            let prev = a.clone();
            a.push(k);
            for i in 0..m {
                a[i] = prev[i] - k * prev[m - 1 - i];
            }
        }
        a
    }

    fn ar_signal(rng: &mut ChaCha8Rng, a: &[f64], n: usize) -> Vec<f64> {
        let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let (s, _) = synthesize(&e, &LpcCoeffs { a: a.to_vec(), gain_error: 0.0 }, &vec![0.0; a.len()]);
        s
    }

    #[test]
    fn autocorrelation_examples() {
        let mut impulse = vec![0.0; 1024];
        impulse[0] = 1.0;
        let r = autocorrelation(&impulse, 16);
        assert_eq!(r[0], 1.0);
        assert!(r[1..].iter().all(|&v| v == 0.0));
        assert!(autocorrelation(&[0.0; 1024], 16).iter().all(|&v| v == 0.0));

        let x: Vec<f64> = (0..1024).map(|t| (2.0 * PI * t as f64 / 64.0).cos()).collect();
        let r = autocorrelation(&x, 16);
        for k in 0..=16 {
            // Exact finite sum: sum_t cos(a t) cos(a (t+k)).
            let exact: f64 = (0..1024 - k)
                .map(|t| (2.0 * PI * t as f64 / 64.0).cos() * (2.0 * PI * (t + k) as f64 / 64.0).cos())
                .sum();
            assert!((r[k] - exact).abs() < 1e-9);
            assert!((r[k] / r[0] - (2.0 * PI * k as f64 / 64.0).cos()).abs() < 0.02);
        }
    }

    #[test]
    fn levinson_examples() {
        let mut r = vec![0.0; 17];
        r[0] = 1.0;
        let c = levinson_durbin(&r).unwrap();
        assert!(c.a.iter().all(|&v| v == 0.0));
        assert_eq!(c.gain_error, 1.0);

        let r: Vec<f64> = (0..17).map(|k| 0.9f64.powi(k)).collect();
        let c = levinson_durbin(&r).unwrap();
        let direct = toeplitz_solve(&r);
        assert!((direct[0] - 0.9).abs() < 1e-10);
        assert!((c.a[0] - 0.9).abs() < 1e-10);
        assert!(c.a[1..].iter().all(|v| v.abs() < 1e-10));
        assert!((c.gain_error - (1.0 - 0.81)).abs() < 1e-12);

        assert_eq!(levinson_durbin(&[0.0; 17]), Err(LpcError::Degenerate));
        assert_eq!(levinson_durbin(&[-1.0, 0.5]), Err(LpcError::Degenerate));
        match levinson_durbin(&[1.0, 1.5, 0.2]) {
            Err(LpcError::ReflectionClamped { order: 1, coeffs }) => {
                assert!(coeffs.a.iter().all(|v| v.is_finite()));
            }
            other => panic!("expected clamp, got {other:?}"),
        }
    }

    #[test]
    fn levinson_matches_direct_solve_and_error_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_stable(&mut rng, 16, 0.9);
            let x = ar_signal(&mut rng, &a, 1024);
            let r = autocorrelation(&x, 16);
            let (c, trace) = levinson_durbin_traced(&r).unwrap();
            let direct = toeplitz_solve(&r);
            let scale = direct.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..16 {
                assert!((c.a[i] - direct[i]).abs() <= 1e-8 * scale);
                let row: f64 = (0..16).map(|j| r[i.abs_diff(j)] * c.a[j]).sum();
                assert!((row - r[i + 1]).abs() < 1e-8 * r[0]);
            }
            assert!(c.gain_error >= 0.0 && c.gain_error <= r[0]);
            assert!(trace.errors.windows(2).all(|w| w[1] <= w[0]));
            assert!(trace.reflection.iter().all(|k| k.abs() < 1.0));
        }
    }

    #[test]
    fn zero_predictor_has_uniform_lsp() {
        let lsp = lpc_to_lsp(&LpcCoeffs::zeros(16)).unwrap();
        for (k, w) in lsp.omega().iter().enumerate() {
            assert!((w - (k + 1) as f64 * PI / 17.0).abs() < 1e-9);
        }
        let back = lsp_to_lpc(&LspVector::uniform(16));
        assert!(back.a.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn lsp_roundtrip_on_random_stable_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = random_stable(&mut rng, 16, 0.95);
            let lsp = lpc_to_lsp(&LpcCoeffs { a: a.clone(), gain_error: 0.0 }).unwrap();
            assert!(lsp.omega().windows(2).all(|w| w[0] < w[1]));
            let back = lsp_to_lpc(&lsp);
            for i in 0..16 {
                assert!((back.a[i] - a[i]).abs() < 1e-6, "{i}: {} vs {}", back.a[i], a[i]);
            }
        }
    }

    #[test]
    fn lsp_ordering_is_validated() {
        let mut w = LspVector::uniform(16).omega().to_vec();
        w.swap(3, 4);
        assert_eq!(LspVector::new(w), Err(LpcError::LspOrdering));
        assert_eq!(LspVector::new(vec![0.0, 1.0]), Err(LpcError::LspOrdering));
        assert!(matches!(lpc_to_lsp(&LpcCoeffs::zeros(3)), Err(LpcError::OddOrder(3))));
    }

    #[test]
    fn unstable_filter_fails_lsp_search() {
        // 1 - 2.5 z^-1 + z^-2 has a root outside the unit circle.
        let mut a = vec![0.0; 16];
        a[0] = 2.5;
        a[1] = -1.0;
        assert!(matches!(
            lpc_to_lsp(&LpcCoeffs { a, gain_error: 0.0 }),
            Err(LpcError::LspSearch { .. })
        ));
    }

    #[test]
    fn lsp_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_stable(&mut rng, 16, 0.8);
        let w = lpc_to_lsp(&LpcCoeffs { a, gain_error: 0.0 }).unwrap().omega().to_vec();
        let jac = lsp_to_lpc_jacobian(&w);
        let eps = 1e-6;
        for k in 0..16 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += eps;
            wm[k] -= eps;
            let ap = lsp_to_lpc_unchecked(&wp);
            let am = lsp_to_lpc_unchecked(&wm);
            for i in 0..16 {
                let fd = (ap[i] - am[i]) / (2.0 * eps);
                assert!((fd - jac[i * 16 + k]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    fn frame_from(x: &[f64]) -> AnalysisFrame {
        AnalysisFrame { samples: x.to_vec(), start_index: 0 }
    }

    #[test]
    fn residual_with_zero_coefficients_is_the_signal() {
        let bank = WindowBank::new();
        let x: Vec<f64> = (0..1024).map(|t| ((t * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let res = compute_residual(&frame_from(&x), &LpcCoeffs::zeros(16), &bank, 0).unwrap();
        for t in 0..512 {
            assert!((res.e[t] - x[256 + t]).abs() < 1e-12);
        }
        assert!(compute_residual(&frame_from(&x[..1000]), &LpcCoeffs::zeros(16), &bank, 0).is_err());
    }

    #[test]
    fn residual_of_free_ar_response_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_stable(&mut rng, 16, 0.7);
        let coeffs = LpcCoeffs { a: a.clone(), gain_error: 0.0 };
        // Drive 1/A(z) with a short burst, then let it ring freely.
        let mut e = vec![0.0; 1024];
        for v in e.iter_mut().take(32) {
            *v = rng.sample(StandardNormal);
        }
        let (s, _) = synthesize(&e, &coeffs, &[0.0; 16]);
        let res = compute_residual(&frame_from(&s), &coeffs, &WindowBank::new(), 0).unwrap();
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        let sig = rms(&s[256..768]);
        assert!(sig > 0.0);
        assert!(rms(&res.e) < 1e-4 * sig);
    }

    #[test]
    fn subframe_residual_equals_direct_filtering() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..1024).map(|_| rng.sample(StandardNormal)).collect();
        let a = random_stable(&mut rng, 16, 0.8);
        let coeffs = LpcCoeffs { a: a.clone(), gain_error: 0.0 };
        let res = compute_residual(&frame_from(&x), &coeffs, &WindowBank::new(), 3).unwrap();
        let direct = fir_residual(&x[240..768], &a);
        assert_eq!(res.frame_index, 3);
        for t in 0..512 {
            assert!((res.e[t] - direct[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn white_noise_residual_energy_is_bounded() {
        let bank = WindowBank::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..1024).map(|_| rng.sample(StandardNormal)).collect();
        let frame = frame_from(&x);
        let windowed = apply_cross_frame_window(&frame, &bank).unwrap();
        let r = autocorrelation(&windowed, 16);
        let c = levinson_durbin(&r).unwrap();
        assert!(c.gain_error <= r[0] + 1e-9);
        let res = compute_residual(&frame, &c, &bank, 0).unwrap();
        let energy = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        // The middle half carries unit window weight, so its energy is bounded by r[0].
        assert!(energy(&x[256..768]) <= r[0] + 1e-9);
        assert!(energy(&res.e) <= r[0] + 1e-9);
    }

    #[test]
    fn synthesis_examples() {
        let (y, mem) = synthesize(&[0.0; 512], &LpcCoeffs { a: vec![0.5; 16], gain_error: 0.0 }, &[0.0; 16]);
        assert!(y.iter().all(|&v| v == 0.0) && mem.iter().all(|&v| v == 0.0));
        let e: Vec<f64> = (0..512).map(|t| (t as f64).sin()).collect();
        let (y, _) = synthesize(&e, &LpcCoeffs::zeros(16), &[0.0; 16]);
        assert_eq!(y, e);
    }

    #[test]
    fn analysis_synthesis_roundtrip() {
        let bank = WindowBank::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_stable(&mut rng, 16, 0.9);
        let s = ar_signal(&mut rng, &a, 2048);
        let frame = frame_from(&s[512..1536]);
        let (c, _) = analyze_windowed(&apply_cross_frame_window(&frame, &bank).unwrap(), 16);
        let res = compute_residual(&frame, &c, &bank, 0).unwrap();
        let (y, _) = synthesize(&res.e, &c, &s[512 + 240..512 + 256]);
        let target = &s[768..1280];
        let err: f64 = y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum();
        let sig: f64 = target.iter().map(|v| v * v).sum();
        assert!(10.0 * (sig / err).log10() > 40.0);
        assert!((err / 512.0).sqrt() < 1e-4);

        let windowed_energy: f64 = apply_cross_frame_window(&frame, &bank).unwrap().iter().map(|v| v * v).sum();
        let res_energy: f64 = res.e.iter().map(|v| v * v).sum();
        assert!(res_energy < windowed_energy);
    }

    #[test]
    fn silent_frame_is_flagged() {
        let (c, flagged) = analyze_windowed(&[0.0; 1024], 16);
        assert!(flagged);
        assert!(c.a.iter().all(|&v| v == 0.0));
    }
}
