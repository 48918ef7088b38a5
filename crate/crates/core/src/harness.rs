//! Operator-facing plumbing: WAV I/O, corpus ingestion, objective
//! metrics and the per-epoch metrics CSV.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{PcmSignal, SignalError, CODING_LEN, SAMPLE_RATE};
use crate::train::EpochMetrics;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Wav { path: String, source: hound::Error },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("length mismatch: {reference} vs {degraded} samples")]
    LengthMismatch { reference: usize, degraded: usize },
    #[error("no usable WAV files in {0}")]
    EmptyCorpus(String),
}

const SCALE: f64 = 32768.0;

/// Reads a 16-bit mono 16 kHz PCM file, scaling samples by 1/32768.
pub fn load_wav(path: &Path) -> Result<PcmSignal, HarnessError> {
    let p = path.display().to_string();
    let wav_err = |source| HarnessError::Wav { path: p.clone(), source };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let bad = |reason: String| HarnessError::Format { path: p.clone(), reason };
    if spec.channels != 1 {
        return Err(bad(format!("mono required, found {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(bad(format!("{} Hz required, found {} Hz", SAMPLE_RATE, spec.sample_rate)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(bad(format!("16-bit PCM required, found {} bit {:?}", spec.bits_per_sample, spec.sample_format)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / SCALE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Ok(PcmSignal::new(samples, SAMPLE_RATE)?)
}

/// Writes 16-bit mono PCM; values outside [-1, 1) are clipped.
pub fn save_wav(path: &Path, signal: &PcmSignal) -> Result<(), HarnessError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let p = path.display().to_string();
    let wav_err = |source| HarnessError::Wav { path: p.clone(), source };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &v in signal.samples() {
        let q = (v * SCALE).round().clamp(-SCALE, SCALE - 1.0) as i16;
        w.write_sample(q).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Files in `dir` whose names match `pattern` (`*suffix`, case-insensitive), sorted.
pub fn list_corpus(dir: &Path, pattern: &str) -> Result<Vec<PathBuf>, HarnessError> {
    let suffix = pattern.trim_start_matches('*').to_lowercase();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.to_lowercase().ends_with(&suffix)))
        .collect();
    files.sort();
    Ok(files)
}

/// Loaded utterances plus the files that were skipped and why.
#[derive(Debug)]
pub struct Corpus {
    pub signals: Vec<PcmSignal>,
    pub skipped: Vec<(PathBuf, String)>,
}

impl Corpus {
    pub fn duration_s(&self) -> f64 {
        self.signals.iter().map(PcmSignal::duration_s).sum()
    }
}

/// Loads every matching WAV, skipping unreadable or empty ones with a warning.
pub fn load_corpus(dir: &Path, pattern: &str) -> Result<Corpus, HarnessError> {
    let mut corpus = Corpus { signals: Vec::new(), skipped: Vec::new() };
    for path in list_corpus(dir, pattern)? {
        match load_wav(&path) {
            Ok(s) if !s.is_empty() => corpus.signals.push(s),
            Ok(_) => corpus.skipped.push((path, "no samples".into())),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                corpus.skipped.push((path, e.to_string()));
            }
        }
    }
    if !corpus.skipped.is_empty() {
        log::warn!("skipped {} corpus file(s)", corpus.skipped.len());
    }
    if corpus.signals.is_empty() {
        return Err(HarnessError::EmptyCorpus(dir.display().to_string()));
    }
    Ok(corpus)
}

/// `10 log10(sum x^2 / sum (x - y)^2)`; `+inf` for identical signals.
pub fn snr_db(x: &[f64], y: &[f64]) -> f64 {
    let signal: f64 = x.iter().map(|v| v * v).sum();
    let noise: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if noise == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (signal / noise).log10()
}

pub const SEG_SNR_MIN: f64 = -10.0;
pub const SEG_SNR_MAX: f64 = 35.0;

/// Mean over 512-sample segments of the per-segment SNR clamped to
/// [-10, 35] dB. A trailing partial segment counts as its own segment.
pub fn seg_snr_db(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n == 0 {
        return SEG_SNR_MAX;
    }
    let segs: Vec<f64> = x[..n]
        .chunks(CODING_LEN)
        .zip(y[..n].chunks(CODING_LEN))
        .map(|(a, b)| {
            let s: f64 = a.iter().map(|v| v * v).sum();
            let e: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            let v = if e == 0.0 {
                SEG_SNR_MAX
            } else if s == 0.0 {
                SEG_SNR_MIN
            } else {
                10.0 * (s / e).log10()
            };
            v.clamp(SEG_SNR_MIN, SEG_SNR_MAX)
        })
        .collect();
    segs.iter().sum::<f64>() / segs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub snr_db: f64,
    pub seg_snr_db: f64,
    /// Only known when the bitstream is supplied.
    pub measured_bitrate_kbps: Option<f64>,
    pub frame_count: usize,
    pub duration_s: f64,
}

/// Compares equal-length signals; a length difference up to one coding
/// frame is tolerated and the common prefix is scored.
pub fn evaluate(reference: &PcmSignal, degraded: &PcmSignal) -> Result<EvalReport, HarnessError> {
    let (r, d) = (reference.samples(), degraded.samples());
    if r.len().abs_diff(d.len()) > CODING_LEN {
        return Err(HarnessError::LengthMismatch { reference: r.len(), degraded: d.len() });
    }
    let n = r.len().min(d.len());
    Ok(EvalReport {
        snr_db: snr_db(&r[..n], &d[..n]),
        seg_snr_db: seg_snr_db(&r[..n], &d[..n]),
        measured_bitrate_kbps: None,
        frame_count: n.div_ceil(CODING_LEN),
        duration_s: n as f64 / f64::from(SAMPLE_RATE),
    })
}

fn json_number(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

impl EvalReport {
    /// One-line JSON; non-finite values become the strings `"inf"`, `"-inf"`, `"nan"`.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "snr_db": json_number(self.snr_db),
            "seg_snr_db": json_number(self.seg_snr_db),
            "measured_bitrate_kbps": self.measured_bitrate_kbps.map(json_number),
            "frame_count": self.frame_count,
            "duration_s": json_number(self.duration_s),
        })
        .to_string()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub mse_time: f64,
    pub mel_loss: f64,
    pub quant_penalty: f64,
    pub entropy_bits: f64,
    pub measured_kbps: f64,
}

impl From<&EpochMetrics> for MetricsRow {
    fn from(m: &EpochMetrics) -> Self {
        Self {
            epoch: m.epoch,
            mse_time: m.mse_time,
            mel_loss: m.mel_loss,
            quant_penalty: m.quant_penalty,
            entropy_bits: m.entropy_bits,
            measured_kbps: m.measured_kbps,
        }
    }
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?)
}
