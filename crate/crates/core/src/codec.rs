//! The complete codec: LPC analysis with a trainable LSP quantizer, a
//! cascade of residual autoencoders, and LPC synthesis.
//!
//! Two code paths share every building block. [`Codec::frame_graph`] builds
//! the differentiable soft-quantized version used for training; the hard
//! path ([`Codec::encode_frame`], [`Codec::decode_frame`]) produces and
//! consumes the integer indices that go into a bitstream.

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{stabilize_lsp, Graph, GraphError, NodeId, ParamId, ParamStore, Tensor};
use crate::config::{Config, ConfigError, LspCodebookMode};
use crate::entropy::{self, CodeTables, EntropyError, FrameCode, FrameLayout, StreamMeta};
use crate::lpc::{self, LpcCoeffs};
use crate::model::{Autoencoder, ModelError};
use crate::quant::{differential_decode, differential_encode};
use crate::signal::{self, PcmSignal, SignalError, WindowBank, ANALYSIS_LEN, CODING_LEN, SYNTHESIS_OVERLAP};

/// Coding-frame advance at test time: frames share a 32-sample crossfade.
pub const TEST_HOP: usize = CODING_LEN - SYNTHESIS_OVERLAP;
/// Coding-frame advance during training.
pub const TRAIN_HOP: usize = CODING_LEN;
/// Samples of look-back and look-ahead around a coding frame in its analysis frame.
const ANALYSIS_LEAD: usize = (ANALYSIS_LEN - CODING_LEN) / 2;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model has untrained or non-finite parameters ({0})")]
    NonFinite(String),
    #[error("model has no entropy-coder tables")]
    MissingTables,
    #[error("checkpoint hash mismatch: bitstream was made with {found:016x}, this model is {expected:016x}")]
    HashMismatch { expected: u64, found: u64 },
    #[error("bitstream does not fit this model: {0}")]
    Layout(String),
}

/// First 8 bytes of SHA-256, little-endian.
pub fn short_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// High-pass then pre-emphasis; the domain in which frames are coded.
pub fn preprocess(signal: &PcmSignal) -> Result<Vec<f64>, SignalError> {
    Ok(signal::pre_emphasize(&signal::high_pass(signal)?)?.into_samples())
}

/// Number of coding frames needed to cover `n` samples.
pub fn frame_count(n: usize, hop: usize) -> usize {
    1 + n.saturating_sub(CODING_LEN).div_ceil(hop)
}

/// Per-frame analysis results, independent of any trainable state.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    /// Unquantized line spectral frequencies of the analysis frame.
    pub lsp: Vec<f64>,
    /// `order` true samples before the frame followed by its `CODING_LEN` samples.
    pub context: Vec<f64>,
}

impl FrameData {
    pub fn target(&self) -> &[f64] {
        &self.context[self.context.len() - CODING_LEN..]
    }

    pub fn past(&self) -> &[f64] {
        &self.context[..self.context.len() - CODING_LEN]
    }
}

fn sample_at(x: &[f64], i: isize) -> f64 {
    if i < 0 {
        0.0
    } else {
        x.get(i as usize).copied().unwrap_or(0.0)
    }
}

/// LPC analysis of every coding frame of a preprocessed signal.
pub fn analyze_frames(x: &[f64], hop: usize, order: usize, bank: &WindowBank) -> Vec<FrameData> {
    (0..frame_count(x.len(), hop))
        .map(|k| {
            let start = (k * hop) as isize;
            let frame = signal::AnalysisFrame {
                samples: (0..ANALYSIS_LEN as isize).map(|t| sample_at(x, start - ANALYSIS_LEAD as isize + t)).collect(),
                start_index: start as i64 - ANALYSIS_LEAD as i64,
            };
            let windowed = signal::apply_cross_frame_window(&frame, bank).expect("analysis length");
            let (coeffs, _) = lpc::analyze_windowed(&windowed, order);
            let lsp = lpc::lpc_to_lsp(&coeffs).map(|l| l.omega().to_vec()).unwrap_or_else(|_| {
                log::debug!("frame {k}: LSP search failed, using a flat envelope");
                lpc::LspVector::uniform(order).omega().to_vec()
            });
            let context = (-(order as isize)..CODING_LEN as isize).map(|t| sample_at(x, start + t)).collect();
            FrameData { lsp, context }
        })
        .collect()
}

/// Whether the quantizers are active in a training graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Continuous values pass straight through (warm-up).
    Bypass,
    /// Softmax assignment.
    Soft,
    /// Autoencoders from this index on are bypassed; the LSP quantizer and
    /// earlier autoencoders are soft (warm-up of a later cascade stage).
    BypassFrom(usize),
}

impl QuantMode {
    fn lsp_quantized(self) -> bool {
        match self {
            QuantMode::Bypass => false,
            QuantMode::Soft => true,
            QuantMode::BypassFrom(i) => i > 0,
        }
    }

    fn ae_quantized(self, ae: usize) -> bool {
        match self {
            QuantMode::Bypass => false,
            QuantMode::Soft => true,
            QuantMode::BypassFrom(i) => ae < i,
        }
    }
}

/// Nodes of one soft quantizer, for the regularizers.
#[derive(Debug, Clone, Copy)]
pub struct QuantNodes {
    pub penalty: NodeId,
    pub col_sum: NodeId,
    /// Number of quantized values (rows of the assignment matrix).
    pub rows: usize,
}

/// Handles into a per-frame training graph.
#[derive(Debug, Clone)]
pub struct FrameGraph {
    pub output: NodeId,
    pub target: NodeId,
    pub lsp_quant: Option<QuantNodes>,
    pub residual_quants: Vec<QuantNodes>,
    /// Encoder outputs before differential coding, per active autoencoder.
    pub codes: Vec<NodeId>,
    /// Per active autoencoder: the residual it codes and its reconstruction.
    pub ae_inputs: Vec<NodeId>,
    pub ae_outputs: Vec<NodeId>,
}

/// Result of hard-encoding one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrame {
    pub code: FrameCode,
    /// Decoded residual, identical to what [`Codec::decode_frame`] returns.
    pub residual: Vec<f64>,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Codec {
    pub config: Config,
    pub params: ParamStore,
    pub lsp_codebook: ParamId,
    pub autoencoders: Vec<Autoencoder>,
    pub residual_codebooks: Vec<ParamId>,
    /// Fixed per-autoencoder factor applied to the code before quantization
    /// (and removed before decoding); never trained.
    pub code_scales: Vec<ParamId>,
    pub tables: Option<CodeTables>,
    bank: WindowBank,
}

fn lsp_codebook_shape(cfg: &Config) -> Vec<usize> {
    match cfg.codec.lsp_codebook {
        LspCodebookMode::Shared => vec![cfg.codec.lsp_centroids],
        LspCodebookMode::PerCoefficient => vec![cfg.codec.lpc_order, cfg.codec.lsp_centroids],
    }
}

pub const LSP_CODEBOOK: &str = "lsp.codebook";

fn residual_codebook_name(i: usize) -> String {
    format!("ae{i}.codebook")
}

fn code_scale_name(i: usize) -> String {
    format!("ae{i}.code_scale")
}

impl Codec {
    /// Fresh model with randomly initialized autoencoders.
    ///
    /// The LSP codebook starts evenly spread over `(0, pi)` and the residual
    /// codebooks over `[-1, 1]`; training re-initializes both from data.
    pub fn new<R: Rng>(config: Config, rng: &mut R) -> Result<Self, CodecError> {
        config.validate()?;
        let c = &config.codec;
        let mut params = ParamStore::new();
        let j = c.lsp_centroids;
        let row: Vec<f64> = (0..j).map(|k| (k as f64 + 0.5) * std::f64::consts::PI / j as f64).collect();
        let shape = lsp_codebook_shape(&config);
        let rows = if shape.len() == 2 { shape[0] } else { 1 };
        let lsp_codebook = params.insert(LSP_CODEBOOK, Tensor::new(shape, row.repeat(rows))?);
        let mut autoencoders = Vec::new();
        let mut residual_codebooks = Vec::new();
        let mut code_scales = Vec::new();
        for i in 0..c.n_autoencoders {
            autoencoders.push(Autoencoder::build(c, &mut params, &format!("ae{i}"), config.train.init_gain, rng)?);
            let book = crate::quant::Codebook::uniform(-1.0, 1.0, c.residual_centroids).expect("valid size");
            residual_codebooks.push(params.insert(residual_codebook_name(i), Tensor::vector(book.centroids().to_vec())));
            let scale = params.insert(code_scale_name(i), Tensor::vector(vec![1.0]));
            params.set_frozen(scale, true);
            code_scales.push(scale);
        }
        Ok(Self {
            config,
            params,
            lsp_codebook,
            autoencoders,
            residual_codebooks,
            code_scales,
            tables: None,
            bank: WindowBank::new(),
        })
    }

    /// Rebinds a model to a loaded parameter store.
    pub fn from_parts(config: Config, params: ParamStore, tables: Option<CodeTables>) -> Result<Self, CodecError> {
        config.validate()?;
        let find = |name: &str, shape: &[usize]| -> Result<ParamId, CodecError> {
            let id = params.find(name).ok_or_else(|| CodecError::Layout(format!("missing parameter {name}")))?;
            if params.get(id).shape() != shape {
                return Err(CodecError::Layout(format!("parameter {name} has shape {:?}", params.get(id).shape())));
            }
            Ok(id)
        };
        let lsp_codebook = find(LSP_CODEBOOK, &lsp_codebook_shape(&config))?;
        let mut autoencoders = Vec::new();
        let mut residual_codebooks = Vec::new();
        let mut code_scales = Vec::new();
        for i in 0..config.codec.n_autoencoders {
            autoencoders.push(Autoencoder::attach(&config.codec, &params, &format!("ae{i}"))?);
            residual_codebooks.push(find(&residual_codebook_name(i), &[config.codec.residual_centroids])?);
            code_scales.push(find(&code_scale_name(i), &[1])?);
        }
        let mut params = params;
        for &id in &code_scales {
            params.set_frozen(id, true);
        }
        if let Some(t) = &tables {
            if t.residual.len() != autoencoders.len() {
                return Err(CodecError::Layout("one residual table per autoencoder required".into()));
            }
        }
        Ok(Self { config, params, lsp_codebook, autoencoders, residual_codebooks, code_scales, tables, bank: WindowBank::new() })
    }

    pub fn bank(&self) -> &WindowBank {
        &self.bank
    }

    pub fn layout(&self) -> FrameLayout {
        FrameLayout {
            lsp_count: self.config.codec.lpc_order,
            residual_widths: vec![self.config.codec.code_width(); self.autoencoders.len()],
        }
    }

    /// Scalars in the autoencoders alone.
    pub fn autoencoder_param_count(&self) -> usize {
        self.autoencoders.iter().map(|ae| ae.param_count(&self.params)).sum()
    }

    pub fn analyze(&self, x: &[f64], hop: usize) -> Vec<FrameData> {
        analyze_frames(x, hop, self.config.codec.lpc_order, &self.bank)
    }

    fn soft_quantize(
        &self,
        g: &mut Graph,
        values: NodeId,
        book: ParamId,
    ) -> Result<(NodeId, QuantNodes), GraphError> {
        let b = g.param(book);
        let d = g.sq_dist(values, b)?;
        let a = g.softmax_neg(d, self.config.codec.alpha);
        let q = g.row_dot(a, b)?;
        let penalty = g.sqrt_penalty(a);
        let col_sum = g.col_sum(a);
        let rows = g.value(values).len();
        Ok((q, QuantNodes { penalty, col_sum, rows }))
    }

    /// Differentiable forward pass of one training frame through the
    /// first `active` autoencoders.
    pub fn frame_graph(
        &self,
        g: &mut Graph,
        frame: &FrameData,
        mode: QuantMode,
        active: usize,
    ) -> Result<FrameGraph, CodecError> {
        let c = &self.config.codec;
        let lsp = g.input(Tensor::vector(frame.lsp.clone()));
        let (q, lsp_quant) = if mode.lsp_quantized() {
            let (q, n) = self.soft_quantize(g, lsp, self.lsp_codebook)?;
            (q, Some(n))
        } else {
            (lsp, None)
        };
        let stable = g.lsp_stabilize(q, c.lsp_min_gap);
        let a = g.lsp_to_lpc(stable);
        let a_res = if c.residual_from_quantized_lpc {
            a
        } else {
            let (raw, _, _) = stabilize_lsp(&frame.lsp, c.lsp_min_gap);
            g.input(Tensor::vector(lpc::lsp_to_lpc_unchecked(&raw)))
        };
        let e = g.fir_residual(a_res, frame.context.clone())?;

        let width = c.code_width();
        let mut residual_quants = Vec::new();
        let mut codes = Vec::new();
        let mut ae_inputs = Vec::new();
        let mut ae_outputs = Vec::new();
        let mut recon: Option<NodeId> = None;
        for (i, (ae, &book)) in self.autoencoders.iter().zip(&self.residual_codebooks).enumerate().take(active) {
            let gamma = self.code_scale(i);
            let input = match recon {
                Some(r) => g.sub(e, r)?,
                None => e,
            };
            ae_inputs.push(input);
            let x = g.reshape(input, vec![CODING_LEN, 1])?;
            let h = ae.encode(g, x)?;
            let h = g.reshape(h, vec![width])?;
            let h = g.scale(h, gamma);
            codes.push(h);
            let hq = if mode.ae_quantized(i) {
                let dh = g.diff_encode(h);
                let (q, n) = self.soft_quantize(g, dh, book)?;
                residual_quants.push(n);
                g.cumsum(q)
            } else {
                h
            };
            let hq = g.scale(hq, 1.0 / gamma);
            let hq = g.reshape(hq, vec![width, 1])?;
            let y = ae.decode(g, hq)?;
            let y = g.reshape(y, vec![CODING_LEN])?;
            ae_outputs.push(y);
            recon = Some(match recon {
                Some(r) => g.add(r, y)?,
                None => y,
            });
        }
        let excitation = match recon {
            Some(r) => r,
            None => g.input(Tensor::zeros(vec![CODING_LEN])),
        };
        let output = g.iir_synth(excitation, a, frame.past().to_vec())?;
        let target = g.input(Tensor::vector(frame.target().to_vec()));
        Ok(FrameGraph { output, target, lsp_quant, residual_quants, codes, ae_inputs, ae_outputs })
    }

    fn check_finite(&self) -> Result<(), CodecError> {
        for id in self.params.ids() {
            if self.params.get(id).data().iter().any(|v| !v.is_finite()) {
                return Err(CodecError::NonFinite(self.params.name(id).to_string()));
            }
        }
        Ok(())
    }

    pub fn code_scale(&self, ae: usize) -> f64 {
        self.params.get(self.code_scales[ae]).data()[0]
    }

    fn lsp_row(&self, i: usize) -> &[f64] {
        let book = self.params.get(self.lsp_codebook).data();
        let j = self.config.codec.lsp_centroids;
        match self.config.codec.lsp_codebook {
            LspCodebookMode::Shared => book,
            LspCodebookMode::PerCoefficient => &book[i * j..(i + 1) * j],
        }
    }

    /// Nearest centroid, lowest index on ties.
    fn nearest(book: &[f64], v: f64) -> u32 {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, &c) in book.iter().enumerate() {
            let d = (v - c) * (v - c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best as u32
    }

    fn coeffs_from_indices(&self, idx: &[u32]) -> Result<Vec<f64>, CodecError> {
        let c = &self.config.codec;
        let mut w = Vec::with_capacity(idx.len());
        for (i, &k) in idx.iter().enumerate() {
            let row = self.lsp_row(i);
            w.push(*row.get(k as usize).ok_or_else(|| CodecError::Layout(format!("LSP index {k} out of range")))?);
        }
        let (stable, _, _) = stabilize_lsp(&w, c.lsp_min_gap);
        Ok(lpc::lsp_to_lpc_unchecked(&stable))
    }

    fn run_decoder(&self, ae: usize, indices: &[u32]) -> Result<Vec<f64>, CodecError> {
        let book = self.params.get(self.residual_codebooks[ae]).data();
        let dh = indices
            .iter()
            .map(|&k| book.get(k as usize).copied().ok_or_else(|| CodecError::Layout(format!("residual index {k} out of range"))))
            .collect::<Result<Vec<_>, _>>()?;
        let inv = 1.0 / self.code_scale(ae);
        let h: Vec<f64> = differential_decode(&dh).into_iter().map(|v| v * inv).collect();
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::new(vec![h.len(), 1], h)?);
        let y = self.autoencoders[ae].decode(&mut g, x)?;
        Ok(g.value(y).data().to_vec())
    }

    /// Excitation and synthesis coefficients for a frame's indices.
    pub fn decode_frame(&self, code: &FrameCode) -> Result<(Vec<f64>, Vec<f64>), CodecError> {
        if code.lsp_indices.len() != self.config.codec.lpc_order || code.residual_indices.len() != self.autoencoders.len() {
            return Err(CodecError::Layout("frame shape does not match the model".into()));
        }
        let coeffs = self.coeffs_from_indices(&code.lsp_indices)?;
        let mut residual = vec![0.0; CODING_LEN];
        for (ae, idx) in code.residual_indices.iter().enumerate() {
            for (r, v) in residual.iter_mut().zip(self.run_decoder(ae, idx)?) {
                *r += v;
            }
        }
        Ok((residual, coeffs))
    }

    /// Hard-quantized encoding of one analyzed frame.
    pub fn encode_frame(&self, frame: &FrameData) -> Result<EncodedFrame, CodecError> {
        let c = &self.config.codec;
        let lsp_indices: Vec<u32> = frame.lsp.iter().enumerate().map(|(i, &w)| Self::nearest(self.lsp_row(i), w)).collect();
        let coeffs = self.coeffs_from_indices(&lsp_indices)?;
        let a_res = if c.residual_from_quantized_lpc {
            coeffs.clone()
        } else {
            let (raw, _, _) = stabilize_lsp(&frame.lsp, c.lsp_min_gap);
            lpc::lsp_to_lpc_unchecked(&raw)
        };
        let e = lpc::fir_residual(&frame.context, &a_res);
        let mut residual = vec![0.0; CODING_LEN];
        let mut residual_indices = Vec::with_capacity(self.autoencoders.len());
        for (ae, model) in self.autoencoders.iter().enumerate() {
            let input: Vec<f64> = e.iter().zip(&residual).map(|(a, b)| a - b).collect();
            let mut g = Graph::new(&self.params);
            let x = g.input(Tensor::column(input));
            let h = model.encode(&mut g, x)?;
            let gamma = self.code_scale(ae);
            let scaled: Vec<f64> = g.value(h).data().iter().map(|v| v * gamma).collect();
            let dh = differential_encode(&scaled);
            let book = self.params.get(self.residual_codebooks[ae]).data();
            let idx: Vec<u32> = dh.iter().map(|&v| Self::nearest(book, v)).collect();
            for (r, v) in residual.iter_mut().zip(self.run_decoder(ae, &idx)?) {
                *r += v;
            }
            residual_indices.push(idx);
        }
        Ok(EncodedFrame { code: FrameCode { lsp_indices, residual_indices }, residual, coeffs })
    }

    /// Preprocessed signal at the model's working level.
    pub fn prepare(&self, signal: &PcmSignal) -> Result<Vec<f64>, CodecError> {
        let g = self.config.codec.input_gain;
        Ok(preprocess(signal)?.into_iter().map(|v| v * g).collect())
    }

    /// Hard-codes a whole utterance at test-time framing.
    pub fn encode_frames(&self, signal: &PcmSignal) -> Result<Vec<FrameCode>, CodecError> {
        self.check_finite()?;
        let x = self.prepare(signal)?;
        self.analyze(&x, TEST_HOP).iter().map(|f| self.encode_frame(f).map(|e| e.code)).collect()
    }

    /// Synthesizes, crossfades and de-emphasizes decoded frames.
    pub fn decode_frames(&self, frames: &[FrameCode], sample_count: usize) -> Result<PcmSignal, CodecError> {
        self.check_finite()?;
        let order = self.config.codec.lpc_order;
        let mut memory = vec![0.0; order];
        let mut outputs = Vec::with_capacity(frames.len());
        for code in frames {
            let (residual, coeffs) = self.decode_frame(code)?;
            let (y, _) = lpc::synthesize(&residual, &LpcCoeffs { a: coeffs, gain_error: 0.0 }, &memory);
            // The next frame starts TEST_HOP samples later.
            memory = y[TEST_HOP - order..TEST_HOP].to_vec();
            outputs.push(y);
        }
        if outputs.is_empty() {
            return Ok(PcmSignal::from_samples(vec![0.0; sample_count])?);
        }
        let mut joined = signal::synthesis_overlap_add(&outputs, SYNTHESIS_OVERLAP, &self.bank)?.into_samples();
        let g = self.config.codec.input_gain;
        joined.iter_mut().for_each(|v| *v /= g);
        let mut y = signal::de_emphasize(&PcmSignal::from_samples(joined)?)?.into_samples();
        y.resize(sample_count, 0.0);
        Ok(PcmSignal::from_samples(y)?)
    }

    pub fn config_hash(&self) -> Result<u64, CodecError> {
        Ok(short_hash(self.config.to_toml()?.as_bytes()))
    }

    pub fn tables(&self) -> Result<&CodeTables, CodecError> {
        self.tables.as_ref().ok_or(CodecError::MissingTables)
    }

    /// Pair statistics of the hard codes of `signals`, as entropy-coder tables.
    pub fn build_tables(&self, codes: &[Vec<FrameCode>]) -> Result<CodeTables, CodecError> {
        let c = &self.config.codec;
        let mut lsp = entropy::PairCounter::new(c.lsp_centroids as u32);
        let mut res = vec![entropy::PairCounter::new(c.residual_centroids as u32); self.autoencoders.len()];
        for f in codes.iter().flatten() {
            lsp.add_stream(&f.lsp_indices)?;
            for (counter, idx) in res.iter_mut().zip(&f.residual_indices) {
                counter.add_stream(idx)?;
            }
        }
        Ok(CodeTables { lsp: lsp.build()?, residual: res.iter().map(|c| c.build()).collect::<Result<_, _>>()? })
    }

    /// Full encoder: signal to bitstream bytes.
    pub fn encode(&self, signal: &PcmSignal, checkpoint_hash: u64) -> Result<Vec<u8>, CodecError> {
        let frames = self.encode_frames(signal)?;
        let meta = StreamMeta { config_hash: self.config_hash()?, checkpoint_hash, sample_count: signal.len() as u64 };
        Ok(entropy::serialize(&frames, self.tables()?, &self.layout(), &meta)?)
    }

    /// Full decoder: bitstream bytes to signal, refusing streams from other models.
    pub fn decode(&self, bytes: &[u8], checkpoint_hash: u64) -> Result<PcmSignal, CodecError> {
        let header = entropy::parse_header(bytes)?;
        if header.meta.checkpoint_hash != checkpoint_hash {
            return Err(CodecError::HashMismatch { expected: checkpoint_hash, found: header.meta.checkpoint_hash });
        }
        if header.layout != self.layout() {
            return Err(CodecError::Layout(format!("stream layout {:?}", header.layout)));
        }
        let parsed = entropy::parse(bytes, self.tables()?)?;
        self.decode_frames(&parsed.frames, parsed.meta.sample_count as usize)
    }
}

/// Coded payload rate in kbit/s.
pub fn measure_bitrate(payload_bits: u64, duration_s: f64) -> f64 {
    if payload_bits == 0 || duration_s <= 0.0 {
        return 0.0;
    }
    payload_bits as f64 / duration_s / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CodecConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> Config {
        Config {
            codec: CodecConfig { channels: 4, bottleneck_channels: 2, kernel_width: 3, n_autoencoders: 2, ..CodecConfig::default() },
            ..Config::default()
        }
    }

    fn speechish(n: usize, seed: u64) -> PcmSignal {
        crate::synthetic::utterance(n, seed)
    }

    #[test]
    fn frame_counts() {
        assert_eq!(frame_count(16_000, TEST_HOP), 34);
        assert_eq!(frame_count(512, TEST_HOP), 1);
        assert_eq!(frame_count(10, TRAIN_HOP), 1);
        assert_eq!(frame_count(1024, TRAIN_HOP), 2);
        let n = frame_count(16_000, TEST_HOP);
        assert!(CODING_LEN + (n - 1) * TEST_HOP >= 16_000);
    }

    #[test]
    fn analysis_uses_true_history() {
        let x: Vec<f64> = (0..3000).map(|t| (t as f64 * 0.01).sin()).collect();
        let frames = analyze_frames(&x, TEST_HOP, 16, &WindowBank::new());
        assert_eq!(frames[1].past(), &x[TEST_HOP - 16..TEST_HOP]);
        assert_eq!(frames[1].target(), &x[TEST_HOP..TEST_HOP + CODING_LEN]);
        assert_eq!(frames[0].past(), &[0.0; 16]);
        assert!(frames.iter().all(|f| f.lsp.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn encode_decode_telescopes_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let codec = Codec::new(tiny_config(), &mut rng).unwrap();
        let s = speechish(4000, 1);
        let x = preprocess(&s).unwrap();
        for f in codec.analyze(&x, TEST_HOP) {
            let enc = codec.encode_frame(&f).unwrap();
            assert_eq!(enc.code.residual_indices.iter().map(Vec::len).collect::<Vec<_>>(), vec![256, 256]);
            let (res, coeffs) = codec.decode_frame(&enc.code).unwrap();
            assert_eq!(res, enc.residual);
            assert_eq!(coeffs, enc.coeffs);
            assert_eq!(codec.encode_frame(&f).unwrap(), enc);
        }
    }

    #[test]
    fn soft_graph_matches_hard_path_for_sharp_codebooks() {
        // With huge alpha the soft quantizers are numerically hard, so the
        // graph output must equal synthesis of the hard path's excitation.
        let mut cfg = tiny_config();
        cfg.codec.alpha = 1e9;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let codec = Codec::new(cfg, &mut rng).unwrap();
        let x = preprocess(&speechish(16_000, 2)).unwrap();
        let frames = codec.analyze(&x, TRAIN_HOP);
        let energy = |f: &FrameData| f.target().iter().map(|v| v * v).sum::<f64>();
        let f = frames.iter().max_by(|a, b| energy(a).total_cmp(&energy(b))).unwrap();
        let enc = codec.encode_frame(f).unwrap();
        let (y, _) = lpc::synthesize(&enc.residual, &LpcCoeffs { a: enc.coeffs.clone(), gain_error: 0.0 }, f.past());
        let mut g = Graph::new(&codec.params);
        let fg = codec.frame_graph(&mut g, f, QuantMode::Soft, 2).unwrap();
        let err = g.value(fg.output).data().iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut codec = Codec::new(tiny_config(), &mut rng).unwrap();
        let id = codec.residual_codebooks[0];
        codec.params.get_mut(id).data_mut()[0] = f64::NAN;
        assert!(matches!(codec.encode_frames(&speechish(1000, 3)), Err(CodecError::NonFinite(_))));
    }

    #[test]
    fn bitrate_arithmetic() {
        assert_eq!(measure_bitrate(48_000, 2.0), 24.0);
        assert_eq!(measure_bitrate(0, 2.0), 0.0);
    }
}
