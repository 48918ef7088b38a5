//! Soft-to-hard scalar quantization against a learnable codebook, the two
//! assignment regularizers and first-difference coding of code vectors.
//!
//! These are the reference (non-differentiable) forms. The training graph
//! in [`crate::autodiff`] mirrors them op for op.

use thiserror::Error;

/// Default softmax sharpness.
pub const DEFAULT_ALPHA: f64 = 300.0;
/// Centroids per residual codebook.
pub const RESIDUAL_CENTROIDS: usize = 32;
/// Centroids per LSP codebook.
pub const LSP_CENTROIDS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("codebook needs at least 2 centroids, got {0}")]
    TooFewCentroids(usize),
    #[error("non-finite centroid at index {0}")]
    NonFinite(usize),
    #[error("alpha must be positive, got {0}")]
    Alpha(f64),
}

/// Learnable scalar centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<f64>,
}

impl Codebook {
    pub fn new(centroids: Vec<f64>) -> Result<Self, QuantError> {
        if centroids.len() < 2 {
            return Err(QuantError::TooFewCentroids(centroids.len()));
        }
        if let Some(i) = centroids.iter().position(|c| !c.is_finite()) {
            return Err(QuantError::NonFinite(i));
        }
        Ok(Self { centroids })
    }

    /// `size` centroids evenly spaced over `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, size: usize) -> Result<Self, QuantError> {
        let step = if size > 1 { (hi - lo) / (size - 1) as f64 } else { 0.0 };
        Self::new((0..size).map(|k| lo + step * k as f64).collect())
    }

    /// Centroids placed at the `(k + 1/2) / size` quantiles of `values`.
    pub fn from_quantiles(values: &[f64], size: usize) -> Result<Self, QuantError> {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.is_empty() {
            return Self::uniform(0.0, 1.0, size);
        }
        let n = sorted.len();
        Self::new(
            (0..size)
                .map(|k| {
                    let pos = ((k as f64 + 0.5) / size as f64 * n as f64).floor() as usize;
                    sorted[pos.min(n - 1)]
                })
                .collect(),
        )
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Bits per symbol when the size is a power of two.
    pub fn bits(&self) -> Option<u32> {
        self.len().is_power_of_two().then(|| self.len().trailing_zeros())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerConfig {
    pub alpha: f64,
    pub size: usize,
}

impl QuantizerConfig {
    pub fn new(alpha: f64, size: usize) -> Result<Self, QuantError> {
        if !(alpha > 0.0) {
            return Err(QuantError::Alpha(alpha));
        }
        if size < 2 {
            return Err(QuantError::TooFewCentroids(size));
        }
        Ok(Self { alpha, size })
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignMode {
    Soft,
    Hard,
}

/// Row-stochastic assignment of `I` code elements to `J` centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    pub matrix: Matrix,
    pub mode: AssignMode,
}

/// `D(i, j) = (h_i - b_j)^2`.
pub fn distance_matrix(h: &[f64], codebook: &Codebook) -> Matrix {
    let b = codebook.centroids();
    let data = h.iter().flat_map(|&x| b.iter().map(move |&c| (x - c) * (x - c))).collect();
    Matrix { rows: h.len(), cols: b.len(), data }
}

/// Row-wise `softmax(-alpha D)`.
pub fn soft_assign(d: &Matrix, alpha: f64) -> CodeMatrix {
    let mut data = Vec::with_capacity(d.data.len());
    for i in 0..d.rows {
        let row = d.row(i);
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        let start = data.len();
        data.extend(row.iter().map(|&v| (-alpha * (v - min)).exp()));
        let total: f64 = data[start..].iter().sum();
        data[start..].iter_mut().for_each(|v| *v /= total);
    }
    CodeMatrix { matrix: Matrix { rows: d.rows, cols: d.cols, data }, mode: AssignMode::Soft }
}

/// Index of the nearest centroid per row; ties go to the lowest index.
pub fn nearest_indices(d: &Matrix) -> Vec<usize> {
    (0..d.rows)
        .map(|i| {
            let row = d.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v < row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// One-hot rows selecting the nearest centroid.
pub fn hard_assign(d: &Matrix) -> CodeMatrix {
    let mut data = vec![0.0; d.rows * d.cols];
    for (i, j) in nearest_indices(d).into_iter().enumerate() {
        data[i * d.cols + j] = 1.0;
    }
    CodeMatrix { matrix: Matrix { rows: d.rows, cols: d.cols, data }, mode: AssignMode::Hard }
}

/// `h_bar = A b` under the chosen assignment.
pub fn quantize(h: &[f64], codebook: &Codebook, mode: AssignMode, alpha: f64) -> Vec<f64> {
    let d = distance_matrix(h, codebook);
    match mode {
        AssignMode::Hard => nearest_indices(&d).into_iter().map(|j| codebook.centroids()[j]).collect(),
        AssignMode::Soft => {
            let a = soft_assign(&d, alpha).matrix;
            (0..a.rows)
                .map(|i| a.row(i).iter().zip(codebook.centroids()).map(|(p, c)| p * c).sum())
                .collect()
        }
    }
}

/// `sum_ij (sqrt(A_ij) - 1) / I`; equals `1 - J` for one-hot rows.
pub fn quant_penalty(a: &CodeMatrix) -> f64 {
    let m = &a.matrix;
    m.data.iter().map(|v| v.sqrt() - 1.0).sum::<f64>() / m.rows as f64
}

/// Entropy in bits of the column-usage distribution `p_j = sum_i A_ij / I`.
pub fn entropy_estimate(a: &CodeMatrix) -> f64 {
    let m = &a.matrix;
    let mut cols = vec![0.0; m.cols];
    for i in 0..m.rows {
        for (c, v) in cols.iter_mut().zip(m.row(i)) {
            *c += v;
        }
    }
    entropy_of_counts(&cols, m.rows as f64)
}

/// `-sum_j p_j log2 p_j` with `p_j = counts_j / total` and `0 log 0 = 0`.
pub fn entropy_of_counts(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    counts
        .iter()
        .map(|&c| c / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum::<f64>()
        .max(0.0)
}

/// `[h_0, h_1 - h_0, h_2 - h_1, ...]`.
pub fn differential_encode(h: &[f64]) -> Vec<f64> {
    (0..h.len()).map(|i| if i == 0 { h[0] } else { h[i] - h[i - 1] }).collect()
}

/// Cumulative sum; inverse of [`differential_encode`].
pub fn differential_decode(dh: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    dh.iter()
        .map(|d| {
            acc += d;
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cb(v: &[f64]) -> Codebook {
        Codebook::new(v.to_vec()).unwrap()
    }

    #[test]
    fn codebook_validation() {
        assert_eq!(Codebook::new(vec![1.0]), Err(QuantError::TooFewCentroids(1)));
        assert_eq!(Codebook::new(vec![1.0, f64::NAN]), Err(QuantError::NonFinite(1)));
        assert_eq!(cb(&[0.0; 32]).bits(), Some(5));
        assert_eq!(cb(&[0.0; 256]).bits(), Some(8));
        assert_eq!(cb(&[0.0; 3]).bits(), None);
        assert!(QuantizerConfig::new(0.0, 32).is_err());
        let q = Codebook::from_quantiles(&(0..1000).map(f64::from).collect::<Vec<_>>(), 4).unwrap();
        assert_eq!(q.centroids(), &[125.0, 375.0, 625.0, 875.0]);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance_matrix(&[0.0], &cb(&[0.0, 1.0])).data, vec![0.0, 1.0]);
        let two = Codebook { centroids: vec![1.0] };
        assert_eq!(distance_matrix(&[1.0, 2.0], &two).data, vec![0.0, 1.0]);
    }

    #[test]
    fn soft_assign_examples() {
        let d = Matrix { rows: 1, cols: 2, data: vec![0.0, 0.0] };
        assert_eq!(soft_assign(&d, 300.0).matrix.data, vec![0.5, 0.5]);
        let d = Matrix { rows: 1, cols: 2, data: vec![0.0, 1.0] };
        let hard = soft_assign(&d, 1e6).matrix.data;
        assert!((hard[0] - 1.0).abs() < 1e-9 && hard[1].abs() < 1e-9);
        let a = soft_assign(&d, 3f64.ln()).matrix.data;
        assert!((a[0] - 0.75).abs() < 1e-9 && (a[1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn hard_assign_examples() {
        let b = cb(&[0.0, 1.0]);
        assert_eq!(quantize(&[0.4], &b, AssignMode::Hard, DEFAULT_ALPHA), vec![0.0]);
        let tie = Matrix { rows: 1, cols: 2, data: vec![0.5, 0.5] };
        assert_eq!(hard_assign(&tie).matrix.data, vec![1.0, 0.0]);
    }

    #[test]
    fn quantize_is_identity_on_codebook() {
        let b = cb(&[-1.0, 0.25, 0.5, 3.0]);
        let h = vec![0.5, -1.0, 3.0, 0.25];
        assert_eq!(quantize(&h, &b, AssignMode::Hard, DEFAULT_ALPHA), h);
    }

    #[test]
    fn soft_quantize_approaches_hard() {
        let b = cb(&[-1.0, 0.0, 0.5, 2.0]);
        let h = vec![0.3, -0.8, 1.4, 0.1];
        let hard = quantize(&h, &b, AssignMode::Hard, 0.0);
        let mut prev_gap = f64::INFINITY;
        for alpha in [1.0, 10.0, 100.0, 1000.0, 1e5] {
            let soft = quantize(&h, &b, AssignMode::Soft, alpha);
            let gap: f64 = soft.iter().zip(&hard).map(|(s, h)| (s - h).abs()).sum();
            assert!(gap <= prev_gap + 1e-12);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-9);
    }

    #[test]
    fn penalty_examples() {
        let one_hot = CodeMatrix {
            matrix: Matrix { rows: 2, cols: 4, data: vec![1., 0., 0., 0., 0., 0., 1., 0.] },
            mode: AssignMode::Hard,
        };
        assert_eq!(quant_penalty(&one_hot), -3.0);
        let uniform = CodeMatrix {
            matrix: Matrix { rows: 1, cols: 4, data: vec![0.25; 4] },
            mode: AssignMode::Soft,
        };
        assert_eq!(quant_penalty(&uniform), -2.0);
    }

    #[test]
    fn entropy_examples() {
        let make = |rows: Vec<usize>, cols: usize| {
            let mut data = vec![0.0; rows.len() * cols];
            for (i, j) in rows.iter().enumerate() {
                data[i * cols + j] = 1.0;
            }
            CodeMatrix { matrix: Matrix { rows: rows.len(), cols, data }, mode: AssignMode::Hard }
        };
        assert_eq!(entropy_estimate(&make(vec![0; 10], 32)), 0.0);
        assert!((entropy_estimate(&make((0..64).map(|i| i % 32).collect(), 32)) - 5.0).abs() < 1e-12);
        assert!((entropy_estimate(&make(vec![0, 1, 0, 1], 32)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn differential_examples() {
        assert_eq!(differential_encode(&[5.0, 5.0, 5.0]), vec![5.0, 0.0, 0.0]);
        assert_eq!(differential_encode(&[0.0, 1.0, 3.0]), vec![0.0, 1.0, 2.0]);
        assert_eq!(differential_decode(&[5.0, 0.0, 0.0]), vec![5.0, 5.0, 5.0]);
        assert_eq!(differential_decode(&[0.0]), vec![0.0]);
    }

    proptest! {
        #[test]
        fn soft_rows_are_stochastic_and_agree_with_hard(
            h in prop::collection::vec(-3.0f64..3.0, 1..8),
            b in prop::collection::vec(-3.0f64..3.0, 2..12),
            alpha in 0.01f64..1000.0,
        ) {
            let book = cb(&b);
            let d = distance_matrix(&h, &book);
            let soft = soft_assign(&d, alpha).matrix;
            let hard = nearest_indices(&d);
            for i in 0..soft.rows {
                let row = soft.row(i);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                let best = row.iter().enumerate()
                    .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
                // Equal distances give equal probabilities, so both rules pick the lowest index.
                prop_assert_eq!(best, hard[i]);
            }
        }

        #[test]
        fn hard_error_is_bounded_by_half_gap(
            h in prop::collection::vec(-2.0f64..2.0, 1..16),
            b in prop::collection::vec(-2.0f64..2.0, 2..16),
        ) {
            let mut sorted = b.clone();
            sorted.sort_by(f64::total_cmp);
            let max_gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
            let q = quantize(&h, &cb(&b), AssignMode::Hard, DEFAULT_ALPHA);
            for (x, y) in h.iter().zip(&q) {
                prop_assert!(b.contains(y));
                if (lo..=hi).contains(x) {
                    prop_assert!((x - y).abs() <= max_gap / 2.0 + 1e-12);
                }
            }
        }

        #[test]
        fn penalty_and_entropy_bounds(
            logits in prop::collection::vec(-5.0f64..5.0, 8..64),
            alpha_lo in 0.1f64..2.0,
        ) {
            let cols = 4;
            let rows = logits.len() / cols;
            let d = Matrix { rows, cols, data: logits[..rows * cols].iter().map(|v| v * v).collect() };
            let lo = soft_assign(&d, alpha_lo);
            let hi = soft_assign(&d, alpha_lo * 10.0);
            prop_assert!(quant_penalty(&hi) <= quant_penalty(&lo) + 1e-12);
            let one_hot = 1.0 - cols as f64;
            prop_assert!(quant_penalty(&lo) >= one_hot - 1e-12);
            let e = entropy_estimate(&lo);
            prop_assert!((0.0..=(cols as f64).log2() + 1e-12).contains(&e));
        }

        #[test]
        fn differential_roundtrip(h in prop::collection::vec(-100i32..100, 1..64)) {
            let h: Vec<f64> = h.into_iter().map(f64::from).collect();
            prop_assert_eq!(differential_decode(&differential_encode(&h)), h);
        }

        #[test]
        fn hard_entropy_matches_histogram(idx in prop::collection::vec(0usize..8, 1..200)) {
            let cols = 8;
            let mut data = vec![0.0; idx.len() * cols];
            let mut hist = [0usize; 8];
            for (i, &j) in idx.iter().enumerate() {
                data[i * cols + j] = 1.0;
                hist[j] += 1;
            }
            let a = CodeMatrix { matrix: Matrix { rows: idx.len(), cols, data }, mode: AssignMode::Hard };
            let n = idx.len() as f64;
            let empirical: f64 = hist.iter().filter(|&&c| c > 0)
                .map(|&c| { let p = c as f64 / n; -p * p.log2() }).sum();
            prop_assert!((entropy_estimate(&a) - empirical).abs() < 1e-12);
        }
    }
}
