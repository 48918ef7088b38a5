//! Triangular mel filterbanks and the multi-resolution spectral loss.

use std::sync::Arc;

use crate::autodiff::{ConstMatrix, Graph, GraphError, NodeId, SpectrumBasis, Tensor};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `bands` unit-peak triangles over the `n_fft / 2 + 1` magnitude bins.
///
/// Edge frequencies are spaced evenly on the mel scale and snapped to
/// bins; at dense low frequencies the snapped edges are pushed apart so
/// every triangle has a distinct center.
pub fn filterbank(bands: usize, n_fft: usize, sample_rate: f64) -> ConstMatrix {
    let bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let mut edges = Vec::with_capacity(bands + 2);
    for k in 0..bands + 2 {
        let hz = mel_to_hz(top * k as f64 / (bands + 1) as f64);
        let mut bin = (hz / sample_rate * n_fft as f64).round() as usize;
        if let Some(&prev) = edges.last() {
            bin = bin.max(prev + 1);
        }
        edges.push(bin);
    }
    // Pull the upper edges back inside the spectrum if the push-apart overran it.
    let last = edges.len() - 1;
    for k in (0..=last).rev() {
        let cap = bins - 1 - (last - k);
        if edges[k] > cap {
            edges[k] = cap;
        }
    }
    let mut data = vec![0.0; bands * bins];
    for m in 0..bands {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in l..=r {
            let w = if k <= c {
                (k - l) as f64 / (c - l) as f64
            } else {
                (r - k) as f64 / (r - c) as f64
            };
            data[m * bins + k] = w;
        }
    }
    ConstMatrix { rows: bands, cols: bins, data }
}

/// Precomputed transforms for the spectral loss.
#[derive(Debug, Clone)]
pub struct MelLoss {
    pub basis: Arc<SpectrumBasis>,
    pub banks: Vec<Arc<ConstMatrix>>,
}

impl MelLoss {
    pub fn new(bank_sizes: &[usize], n_fft: usize, sample_rate: f64) -> Self {
        Self {
            basis: Arc::new(SpectrumBasis::hann(n_fft)),
            banks: bank_sizes.iter().map(|&b| Arc::new(filterbank(b, n_fft, sample_rate))).collect(),
        }
    }

    /// Mel band magnitudes of one frame, one vector per bank.
    pub fn features(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let (_, _, mag) = self.basis.magnitudes(x);
        self.banks
            .iter()
            .map(|m| m.data.chunks(m.cols).map(|row| row.iter().zip(&mag).map(|(a, b)| a * b).sum()).collect())
            .collect()
    }

    /// Sum over banks of the band-magnitude MSE.
    pub fn loss(&self, y: &[f64], y_hat: &[f64]) -> f64 {
        self.features(y)
            .iter()
            .zip(self.features(y_hat))
            .map(|(a, b)| a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64)
            .sum()
    }

    /// Graph version against precomputed target features.
    pub fn graph_loss(&self, g: &mut Graph, y_hat: NodeId, target: &[Vec<f64>]) -> Result<NodeId, GraphError> {
        let spec = g.spectrum(y_hat, self.basis.clone())?;
        let mut terms = Vec::with_capacity(self.banks.len());
        for (bank, t) in self.banks.iter().zip(target) {
            let est = g.mat_vec(spec, bank.clone())?;
            let tn = g.input(Tensor::vector(t.clone()));
            terms.push((g.mse(est, tn)?, 1.0));
        }
        g.weighted_sum(terms)
    }

    /// Like [`MelLoss::graph_loss`], with a target that is itself a graph node.
    pub fn graph_loss_nodes(&self, g: &mut Graph, y_hat: NodeId, y: NodeId) -> Result<NodeId, GraphError> {
        let spec_hat = g.spectrum(y_hat, self.basis.clone())?;
        let spec = g.spectrum(y, self.basis.clone())?;
        let mut terms = Vec::with_capacity(self.banks.len());
        for bank in &self.banks {
            let est = g.mat_vec(spec_hat, bank.clone())?;
            let tn = g.mat_vec(spec, bank.clone())?;
            terms.push((g.mse(est, tn)?, 1.0));
        }
        g.weighted_sum(terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    #[test]
    fn triangles_have_unit_peaks_and_overlap_at_most_two() {
        for bands in [128, 32, 16, 8] {
            let fb = filterbank(bands, 512, 16000.0);
            let mut first_center = usize::MAX;
            for m in 0..bands {
                let row = &fb.data[m * fb.cols..(m + 1) * fb.cols];
                let peak = row.iter().cloned().fold(0.0, f64::max);
                assert!((peak - 1.0).abs() < 1e-12, "bank {bands} band {m}");
                let center = row.iter().position(|&w| w == 1.0).unwrap();
                first_center = first_center.min(center);
            }
            for k in first_center..fb.cols {
                let active = (0..bands).filter(|&m| fb.data[m * fb.cols + k] > 0.0).count();
                assert!(active <= 2, "bin {k} in {active} bands of {bands}");
            }
        }
    }

    #[test]
    fn mel_scale_roundtrip() {
        for f in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.5);
    }

    #[test]
    fn loss_is_zero_for_identical_and_positive_otherwise() {
        let mel = MelLoss::new(&[128, 32, 16, 8], 512, 16000.0);
        let y: Vec<f64> = (0..512).map(|t| (t as f64 * 0.05).sin()).collect();
        assert_eq!(mel.loss(&y, &y), 0.0);
        let z: Vec<f64> = y.iter().map(|v| v * 0.5).collect();
        assert!(mel.loss(&y, &z) > 0.0);
    }

    #[test]
    fn graph_loss_matches_direct_evaluation() {
        let mel = MelLoss::new(&[16, 8], 64, 16000.0);
        let y: Vec<f64> = (0..64).map(|t| (t as f64 * 0.3).sin()).collect();
        let z: Vec<f64> = (0..64).map(|t| (t as f64 * 0.2).cos()).collect();
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let zn = g.input(Tensor::vector(z.clone()));
        let l = mel.graph_loss(&mut g, zn, &mel.features(&y)).unwrap();
        assert!((g.value(l).item() - mel.loss(&y, &z)).abs() < 1e-12);
        let yn = g.input(Tensor::vector(y.clone()));
        let l2 = mel.graph_loss_nodes(&mut g, zn, yn).unwrap();
        assert!((g.value(l2).item() - mel.loss(&y, &z)).abs() < 1e-12);
    }
}
