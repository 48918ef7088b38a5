//! Deterministic pre- and post-processing around the codec: high-pass and
//! (de-)emphasis filters, analysis framing, the three window shapes and the
//! crossfading overlap-add used when stitching decoded frames together.

use std::f64::consts::{PI, SQRT_2};

use thiserror::Error;

/// Only supported sample rate.
pub const SAMPLE_RATE: u32 = 16_000;
/// Analysis frame length used for LPC estimation.
pub const ANALYSIS_LEN: usize = 1024;
/// Length of the coding region in the middle of an analysis frame.
pub const CODING_LEN: usize = 512;
/// Number of residual sub-frames inside the coding region.
pub const SUBFRAMES: usize = 7;
/// Sub-frame length.
pub const SUBFRAME_LEN: usize = 128;
/// Sub-frame hop (50% overlap).
pub const SUBFRAME_HOP: usize = 64;
/// Crossfade length between decoded frames.
pub const SYNTHESIS_OVERLAP: usize = 32;
/// High-pass cutoff in Hz.
pub const HIGH_PASS_HZ: f64 = 50.0;
/// Pre-emphasis coefficient of `1 - 0.68 z^-1`.
pub const EMPHASIS: f64 = 0.68;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("empty signal")]
    EmptySignal,
    #[error("unsupported sample rate {0} Hz, expected {SAMPLE_RATE} Hz")]
    SampleRate(u32),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("invalid framing: frame_len={frame_len}, hop={hop}")]
    InvalidFraming { frame_len: usize, hop: usize },
    #[error("signal of {len} samples is shorter than one frame of {frame_len}")]
    TooShort { len: usize, frame_len: usize },
    #[error("expected {expected} samples, got {got}")]
    Length { expected: usize, got: usize },
}

/// Mono 16 kHz signal with nominal amplitude range [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PcmSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl PcmSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        if sample_rate != SAMPLE_RATE {
            return Err(SignalError::SampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Wraps samples assumed to be at 16 kHz.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self, SignalError> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    fn map(&self, samples: Vec<f64>) -> PcmSignal {
        PcmSignal { samples, sample_rate: self.sample_rate }
    }
}

/// Second-order section in direct form I.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Feedback coefficients `a1`, `a2` (with `a0 = 1`).
    pub a: [f64; 2],
}

impl Biquad {
    /// Butterworth high-pass designed by the bilinear transform with the
    /// cutoff pre-warped, so the digital -3 dB point lands exactly on `cutoff_hz`.
    pub fn butterworth_high_pass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let k = (PI * cutoff_hz / sample_rate).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        Self {
            b: [norm, -2.0 * norm, norm],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm],
        }
    }

    /// Magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let eval = |c0: f64, c1: f64, c2: f64| {
            let re = c0 + c1 * w.cos() + c2 * (2.0 * w).cos();
            let im = -c1 * w.sin() - c2 * (2.0 * w).sin();
            (re * re + im * im).sqrt()
        };
        eval(self.b[0], self.b[1], self.b[2]) / eval(1.0, self.a[0], self.a[1])
    }

    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2
                    - self.a[0] * y1
                    - self.a[1] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

/// Removes content below 50 Hz with a 2nd-order Butterworth section.
pub fn high_pass(signal: &PcmSignal) -> Result<PcmSignal, SignalError> {
    if signal.is_empty() {
        return Err(SignalError::EmptySignal);
    }
    let hp = Biquad::butterworth_high_pass(HIGH_PASS_HZ, f64::from(signal.sample_rate));
    Ok(signal.map(hp.filter(signal.samples())))
}

/// `y[t] = x[t] - 0.68 x[t-1]` with `x[-1] = 0`.
pub fn pre_emphasize(signal: &PcmSignal) -> Result<PcmSignal, SignalError> {
    if signal.is_empty() {
        return Err(SignalError::EmptySignal);
    }
    let x = signal.samples();
    let y = (0..x.len())
        .map(|t| x[t] - if t > 0 { EMPHASIS * x[t - 1] } else { 0.0 })
        .collect();
    Ok(signal.map(y))
}

/// Inverse recursion `y[t] = x[t] + 0.68 y[t-1]`.
pub fn de_emphasize(signal: &PcmSignal) -> Result<PcmSignal, SignalError> {
    if signal.is_empty() {
        return Err(SignalError::EmptySignal);
    }
    let mut prev = 0.0;
    let y = signal
        .samples()
        .iter()
        .map(|&x| {
            prev = x + EMPHASIS * prev;
            prev
        })
        .collect();
    Ok(signal.map(y))
}

/// A fixed-length slice of a (padded) signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisFrame {
    pub samples: Vec<f64>,
    /// Offset of `samples[0]` in the unpadded source; negative inside the lead padding.
    pub start_index: i64,
}

/// Splits a signal into frames of `frame_len` advancing by `hop`.
///
/// The signal is zero-padded by `(frame_len - hop) / 2` at the front, so that
/// with 50% overlap the middle halves of consecutive frames tile the source
/// without gaps, and padded at the back until the last sample is covered.
pub fn frame_signal(
    signal: &PcmSignal,
    frame_len: usize,
    hop: usize,
) -> Result<Vec<AnalysisFrame>, SignalError> {
    if frame_len == 0 || hop == 0 || hop > frame_len {
        return Err(SignalError::InvalidFraming { frame_len, hop });
    }
    if signal.is_empty() {
        return Err(SignalError::EmptySignal);
    }
    let lead = (frame_len - hop) / 2;
    let n = signal.len();
    if n + 2 * lead < frame_len {
        return Err(SignalError::TooShort { len: n, frame_len });
    }
    // Enough frames that the middle regions cover [0, n).
    let count = n.div_ceil(hop);
    let mut padded = vec![0.0; lead];
    padded.extend_from_slice(signal.samples());
    padded.resize((count - 1) * hop + frame_len, 0.0);
    Ok((0..count)
        .map(|k| AnalysisFrame {
            samples: padded[k * hop..k * hop + frame_len].to_vec(),
            start_index: (k * hop) as i64 - lead as i64,
        })
        .collect())
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos())).collect()
}

/// The three fixed window shapes of the codec.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBank {
    /// LPC analysis window: Hann flanks around a flat middle half.
    pub cross_frame: Vec<f64>,
    /// Residual sub-frame windows, each [`SUBFRAME_LEN`] long.
    pub sub_frames: Vec<Vec<f64>>,
    /// Fade-in ramp for the synthesis crossfade.
    pub ramp_in: Vec<f64>,
    /// Fade-out ramp; `ramp_out[k] = 1 - ramp_in[k]`.
    pub ramp_out: Vec<f64>,
}

impl Default for WindowBank {
    fn default() -> Self {
        Self::new()
    }
}

impl WindowBank {
    pub fn new() -> Self {
        let quarter = ANALYSIS_LEN / 4;
        let rise: Vec<f64> = hann(2 * quarter)[..quarter].to_vec();
        let mut cross_frame = vec![1.0; ANALYSIS_LEN];
        for (k, &w) in rise.iter().enumerate() {
            cross_frame[k] = w;
            cross_frame[ANALYSIS_LEN - 1 - k] = w;
        }

        let h = hann(SUBFRAME_LEN);
        let half = SUBFRAME_LEN / 2;
        let mut sub_frames = vec![h.clone(); SUBFRAMES];
        let first = &mut sub_frames[0];
        first[..half].iter_mut().for_each(|w| *w = 1.0);
        let last = &mut sub_frames[SUBFRAMES - 1];
        last[half..].iter_mut().for_each(|w| *w = 1.0);

        let ramp_in: Vec<f64> = (0..SYNTHESIS_OVERLAP)
            .map(|k| {
                let x = PI * (k as f64 + 0.5) / SYNTHESIS_OVERLAP as f64;
                0.5 * (1.0 - x.cos())
            })
            .collect();
        let ramp_out = ramp_in.iter().map(|w| 1.0 - w).collect();
        Self { cross_frame, sub_frames, ramp_in, ramp_out }
    }

    /// Offset of sub-frame `w` within the coding region.
    pub fn sub_frame_offset(w: usize) -> usize {
        w * SUBFRAME_HOP
    }
}

fn check_len(x: &[f64], expected: usize) -> Result<(), SignalError> {
    if x.len() != expected {
        return Err(SignalError::Length { expected, got: x.len() });
    }
    Ok(())
}

/// Multiplies a 1024-sample frame by the cross-frame window.
pub fn apply_cross_frame_window(
    frame: &AnalysisFrame,
    bank: &WindowBank,
) -> Result<Vec<f64>, SignalError> {
    check_len(&frame.samples, ANALYSIS_LEN)?;
    Ok(frame.samples.iter().zip(&bank.cross_frame).map(|(x, w)| x * w).collect())
}

/// Cuts the 512-sample coding region into the 7 windowed sub-frames.
pub fn subframe_decompose(
    frame_mid: &[f64],
    bank: &WindowBank,
) -> Result<Vec<Vec<f64>>, SignalError> {
    check_len(frame_mid, CODING_LEN)?;
    Ok(bank
        .sub_frames
        .iter()
        .enumerate()
        .map(|(w, win)| {
            let off = WindowBank::sub_frame_offset(w);
            frame_mid[off..off + SUBFRAME_LEN].iter().zip(win).map(|(x, w)| x * w).collect()
        })
        .collect())
}

/// Overlap-adds sub-frames back into a 512-sample region.
pub fn subframe_overlap_add(sub_frames: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; CODING_LEN];
    for (w, sub) in sub_frames.iter().enumerate() {
        let off = WindowBank::sub_frame_offset(w);
        for (o, s) in out[off..off + sub.len()].iter_mut().zip(sub) {
            *o += s;
        }
    }
    out
}

/// Joins decoded frames, crossfading the `overlap` samples they share.
pub fn synthesis_overlap_add(
    frames: &[Vec<f64>],
    overlap: usize,
    bank: &WindowBank,
) -> Result<PcmSignal, SignalError> {
    let Some(first) = frames.first() else {
        return Err(SignalError::EmptySignal);
    };
    if overlap != bank.ramp_in.len() || overlap >= first.len() {
        return Err(SignalError::InvalidFraming { frame_len: first.len(), hop: overlap });
    }
    let len = first.len();
    let hop = len - overlap;
    let mut out = vec![0.0; len + (frames.len() - 1) * hop];
    for (k, frame) in frames.iter().enumerate() {
        check_len(frame, len)?;
        let base = k * hop;
        for (t, &x) in frame.iter().enumerate() {
            let mut w = 1.0;
            if k > 0 && t < overlap {
                w = bank.ramp_in[t];
            }
            if k + 1 < frames.len() && t >= hop {
                w = bank.ramp_out[t - hop];
            }
            out[base + t] += w * x;
        }
    }
    PcmSignal::from_samples(out)
}
