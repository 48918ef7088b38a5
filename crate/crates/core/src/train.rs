//! Training: warm-up, codebook initialization, stage-wise cascade
//! training, joint finetuning and entropy-weight bitrate control.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{adam_step, entropy_grad, AdamConfig, Graph, GraphError, NodeId, OptimizerState};
use crate::codec::{self, Codec, CodecError, FrameData, QuantMode, TEST_HOP, TRAIN_HOP};
use crate::config::{Config, LspCodebookMode};
use crate::entropy;
use crate::mel::MelLoss;
use crate::quant::{differential_encode, entropy_of_counts, Codebook};
use crate::signal::{PcmSignal, CODING_LEN, SAMPLE_RATE};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("target {target:.3} kbps is below the coding floor of {floor:.3} kbps")]
    BelowFloor { target: f64, floor: f64 },
    #[error("bitrate control stopped at {achieved:.3} kbps after {iterations} adjustments (target {target:.3} kbps)")]
    Unreachable { target: f64, achieved: f64, iterations: usize },
}

/// Averages over one epoch (or one batch).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mse_time: f64,
    pub mel_loss: f64,
    /// Sum over active quantizers of the assignment penalty.
    pub quant_penalty: f64,
    /// Sum over active quantizers of the soft entropy estimate.
    pub entropy_bits: f64,
    pub measured_kbps: f64,
    /// Weighted loss with the reconstruction terms taken on the synthesized
    /// signal, comparable across stage training and finetuning.
    pub total_loss: f64,
    /// Weighted loss actually minimized; during stage training its
    /// reconstruction terms compare an autoencoder with its own input.
    pub objective_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitrateStep {
    pub iteration: usize,
    pub lambda_entropy: f64,
    pub measured_kbps: f64,
    pub entropy_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BitrateReport {
    pub target_kbps: f64,
    pub floor_kbps: f64,
    pub steps: Vec<BitrateStep>,
    pub converged: bool,
}

impl BitrateReport {
    pub fn final_kbps(&self) -> Option<f64> {
        self.steps.last().map(|s| s.measured_kbps)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub warmup_losses: Vec<f64>,
    pub epochs: Vec<EpochMetrics>,
    pub bitrate: Option<BitrateReport>,
    /// Set when bitrate control gave up; the model is still usable.
    pub bitrate_error: Option<String>,
}

struct TrainFrame {
    data: FrameData,
    mel: Vec<Vec<f64>>,
}

/// What a training step compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Autoencoder `i` against its own input residual (stage training).
    Residual(usize),
    /// Synthesized output against the input frame (joint finetuning).
    Signal,
}

/// Minimum `alpha * spacing^2` between adjacent residual centroids; at 9
/// a code sitting on a centroid gives each neighbour weight about 1e-4.
pub const MIN_CENTROID_SEPARATION: f64 = 9.0;

/// Lowest rate any table can reach: one bit per coded pair.
pub fn floor_kbps(cfg: &Config) -> f64 {
    let pairs = cfg.codec.lpc_order.div_ceil(2) + cfg.codec.n_autoencoders * cfg.codec.code_width().div_ceil(2);
    pairs as f64 * f64::from(SAMPLE_RATE) / TEST_HOP as f64 / 1000.0
}

/// Owns a model and everything needed to optimize it.
pub struct Trainer {
    pub codec: Codec,
    frames: Vec<TrainFrame>,
    validation: Vec<PcmSignal>,
    validation_seconds: f64,
    mel: MelLoss,
    opt: OptimizerState,
    adam: AdamConfig,
    rng: ChaCha8Rng,
    pub lambda_entropy: f64,
}

/// Inverse RMS of the preprocessed corpus.
fn input_gain(corpus: &[PcmSignal]) -> Result<f64, TrainError> {
    let (mut energy, mut n) = (0.0, 0usize);
    for s in corpus.iter().filter(|s| !s.is_empty()) {
        let x = codec::preprocess(s).map_err(CodecError::from)?;
        energy += x.iter().map(|v| v * v).sum::<f64>();
        n += x.len();
    }
    let rms = (energy / n.max(1) as f64).sqrt();
    Ok(if rms > 0.0 { 1.0 / rms } else { 1.0 })
}

/// Leading audio of the corpus up to `seconds`.
fn validation_slice(corpus: &[PcmSignal], seconds: f64) -> Vec<PcmSignal> {
    let mut left = (seconds * f64::from(SAMPLE_RATE)).round() as usize;
    let mut out = Vec::new();
    for s in corpus {
        if left == 0 {
            break;
        }
        let take = left.min(s.len());
        out.push(PcmSignal::from_samples(s.samples()[..take].to_vec()).expect("finite slice"));
        left -= take;
    }
    out
}

impl Trainer {
    pub fn new(config: Config, corpus: &[PcmSignal]) -> Result<Self, TrainError> {
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(TrainError::EmptyCorpus);
        }
        let mut config = config;
        config.codec.input_gain = input_gain(corpus)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let codec = Codec::new(config.clone(), &mut rng)?;
        let mel = MelLoss::new(&config.loss.mel_bank_sizes, config.loss.stft_len, f64::from(SAMPLE_RATE));
        let mut frames = Vec::new();
        for s in corpus.iter().filter(|s| !s.is_empty()) {
            let x = codec.prepare(s)?;
            for data in codec.analyze(&x, TRAIN_HOP) {
                let mel_t = mel.features(data.target());
                frames.push(TrainFrame { data, mel: mel_t });
            }
        }
        let validation = validation_slice(corpus, config.train.validation_seconds);
        let validation_seconds = validation.iter().map(PcmSignal::duration_s).sum();
        let opt = OptimizerState::new(&codec.params);
        let t = &config.train;
        let adam = AdamConfig { lr: t.learning_rate, beta1: t.beta1, beta2: t.beta2, eps: t.adam_eps };
        Ok(Self {
            codec,
            frames,
            validation,
            validation_seconds,
            mel,
            opt,
            adam,
            rng,
            lambda_entropy: config.loss.lambda_entropy,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Freezes everything, then unfreezes autoencoder `stage` (and the LSP
    /// codebook for the first stage). `None` unfreezes all modules.
    pub fn set_stage(&mut self, stage: Option<usize>) {
        let p = &mut self.codec.params;
        let ids: Vec<_> = p.ids().collect();
        for id in &ids {
            p.set_frozen(*id, stage.is_some());
        }
        for &id in &self.codec.code_scales {
            p.set_frozen(id, true);
        }
        let Some(i) = stage else { return };
        if i == 0 {
            p.set_frozen(self.codec.lsp_codebook, false);
        }
        for id in self.codec.autoencoders[i].param_ids() {
            p.set_frozen(id, false);
        }
        p.set_frozen(self.codec.residual_codebooks[i], false);
    }

    /// Autoencoder `stage` only; its quantizer is bypassed during warm-up.
    pub fn set_warmup(&mut self, stage: usize) {
        self.set_stage(Some(stage));
        let p = &mut self.codec.params;
        p.set_frozen(self.codec.lsp_codebook, true);
        p.set_frozen(self.codec.residual_codebooks[stage], true);
    }

    /// One optimizer step over the given frames.
    ///
    /// The entropy term is computed from the assignment counts of the whole
    /// batch, so its gradient needs every sample's column sums before any
    /// backward pass; the forward pass is therefore run twice.
    pub fn step(
        &mut self,
        batch: &[usize],
        mode: QuantMode,
        active: usize,
        objective: Objective,
    ) -> Result<EpochMetrics, TrainError> {
        let l = self.codec.config.loss.clone();
        let inv_b = 1.0 / batch.len() as f64;
        let use_entropy = mode != QuantMode::Bypass;

        // Pass 1: batch-level assignment counts per quantizer.
        let mut counts: Vec<Vec<f64>> = Vec::new();
        let mut totals: Vec<f64> = Vec::new();
        if use_entropy {
            for &k in batch {
                let mut g = Graph::new(&self.codec.params);
                let fg = self.codec.frame_graph(&mut g, &self.frames[k].data, mode, active)?;
                for (q, n) in fg.lsp_quant.iter().chain(&fg.residual_quants).enumerate() {
                    let cs = g.value(n.col_sum).data();
                    if counts.len() <= q {
                        counts.push(vec![0.0; cs.len()]);
                        totals.push(0.0);
                    }
                    counts[q].iter_mut().zip(cs).for_each(|(a, b)| *a += b);
                    totals[q] += n.rows as f64;
                }
            }
        }
        let entropies: Vec<f64> = counts.iter().zip(&totals).map(|(c, &t)| entropy_of_counts(c, t)).collect();
        let entropy_seeds: Vec<Vec<f64>> = counts
            .iter()
            .zip(&totals)
            .map(|(c, &t)| entropy_grad(c, t).into_iter().map(|v| v * self.lambda_entropy).collect())
            .collect();

        // Pass 2: per-sample losses and gradients.
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.codec.params.len()];
        let mut m = EpochMetrics::default();
        for &k in batch {
            let frame = &self.frames[k];
            let mut g = Graph::new(&self.codec.params);
            let fg = self.codec.frame_graph(&mut g, &frame.data, mode, active)?;
            let signal_mse = g.mse(fg.output, fg.target)?;
            let signal_mel = self.mel.graph_loss(&mut g, fg.output, &frame.mel)?;
            let (mse, mel) = match objective {
                Objective::Signal => (signal_mse, signal_mel),
                Objective::Residual(i) => {
                    let (x, y) = (fg.ae_inputs[i], fg.ae_outputs[i]);
                    (g.mse(y, x)?, self.mel.graph_loss_nodes(&mut g, y, x)?)
                }
            };
            let quants: Vec<_> = fg.lsp_quant.iter().chain(&fg.residual_quants).copied().collect();
            let mut terms = vec![(mse, l.lambda_mse), (mel, l.lambda_mel)];
            terms.extend(quants.iter().map(|q| (q.penalty, l.lambda_quant)));
            let loss = g.weighted_sum(terms)?;
            m.mse_time += g.value(signal_mse).item() * inv_b;
            m.mel_loss += g.value(signal_mel).item() * inv_b;
            let recon = l.lambda_mse * g.value(mse).item() + l.lambda_mel * g.value(mel).item();
            m.objective_loss += recon * inv_b;
            m.quant_penalty += quants.iter().map(|q| g.value(q.penalty).item()).sum::<f64>() * inv_b;
            let mut seeds: Vec<(NodeId, Vec<f64>)> = vec![(loss, vec![inv_b])];
            if use_entropy {
                seeds.extend(quants.iter().zip(&entropy_seeds).map(|(q, s)| (q.col_sum, s.clone())));
            }
            for (acc, g) in grads.iter_mut().zip(g.backward_seeded(&seeds).into_params()) {
                if let Some(g) = g {
                    match acc {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                        None => *acc = Some(g),
                    }
                }
            }
        }
        m.entropy_bits = entropies.iter().sum();
        let rest = l.lambda_quant * m.quant_penalty + self.lambda_entropy * m.entropy_bits;
        m.total_loss = l.lambda_mse * m.mse_time + l.lambda_mel * m.mel_loss + rest;
        m.objective_loss += rest;
        adam_step(&mut self.codec.params, &grads, &mut self.opt, &self.adam)?;
        Ok(m)
    }

    /// One pass over `frames` (all training frames when `None`) in shuffled batches.
    pub fn epoch(
        &mut self,
        mode: QuantMode,
        active: usize,
        objective: Objective,
        frames: Option<usize>,
    ) -> Result<EpochMetrics, TrainError> {
        let mut order: Vec<usize> = (0..self.frames.len()).collect();
        order.shuffle(&mut self.rng);
        if let Some(n) = frames {
            order.truncate(n.max(1));
        }
        let bs = self.codec.config.train.batch_size;
        let mut sum = EpochMetrics::default();
        let mut weight = 0.0;
        for batch in order.chunks(bs) {
            let m = self.step(batch, mode, active, objective)?;
            let w = batch.len() as f64;
            sum.mse_time += m.mse_time * w;
            sum.mel_loss += m.mel_loss * w;
            sum.quant_penalty += m.quant_penalty * w;
            sum.entropy_bits += m.entropy_bits * w;
            sum.total_loss += m.total_loss * w;
            sum.objective_loss += m.objective_loss * w;
            weight += w;
        }
        let fields = [
            &mut sum.mse_time,
            &mut sum.mel_loss,
            &mut sum.quant_penalty,
            &mut sum.entropy_bits,
            &mut sum.total_loss,
            &mut sum.objective_loss,
        ];
        for v in fields {
            *v /= weight;
        }
        Ok(sum)
    }

    /// Places the LSP centroids at quantiles of the training LSPs.
    pub fn init_lsp_codebook(&mut self) {
        let c = self.codec.config.codec.clone();
        let lsp_id = self.codec.lsp_codebook;
        let book = match c.lsp_codebook {
            LspCodebookMode::Shared => {
                let all: Vec<f64> = self.frames.iter().flat_map(|f| f.data.lsp.iter().copied()).collect();
                Codebook::from_quantiles(&all, c.lsp_centroids).expect("valid size").centroids().to_vec()
            }
            LspCodebookMode::PerCoefficient => (0..c.lpc_order)
                .flat_map(|i| {
                    let col: Vec<f64> = self.frames.iter().map(|f| f.data.lsp[i]).collect();
                    Codebook::from_quantiles(&col, c.lsp_centroids).expect("valid size").centroids().to_vec()
                })
                .collect(),
        };
        self.codec.params.get_mut(lsp_id).data_mut().copy_from_slice(&book);
    }

    /// Spreads autoencoder `ae`'s centroids evenly over the range of its
    /// warmed-up differential code, on a grid through zero, scaling the code if they would be too
    /// close for the soft assignment to be nearly hard.
    pub fn init_residual_codebook(&mut self, ae: usize) -> Result<(), TrainError> {
        let c = self.codec.config.codec.clone();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for f in &self.frames {
            let mut g = Graph::new(&self.codec.params);
            let fg = self.codec.frame_graph(&mut g, &f.data, QuantMode::BypassFrom(ae), ae + 1)?;
            for v in differential_encode(g.value(fg.codes[ae]).data()) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !(hi > lo) {
            (lo, hi) = (lo.min(-1e-3), hi.max(1e-3));
        }
        // Scale the code until neighbouring centroids are far apart on
        // the softmax scale, so soft and hard assignments agree.
        let spacing = (hi - lo) / (c.residual_centroids - 1) as f64;
        let min_spacing = (MIN_CENTROID_SEPARATION / c.alpha).sqrt();
        if spacing < min_spacing {
            let gamma = min_spacing / spacing;
            self.codec.params.get_mut(self.codec.code_scales[ae]).data_mut()[0] *= gamma;
            (lo, hi) = (lo * gamma, hi * gamma);
        }
        // Same spacing, shifted so one centroid is exactly zero: a constant
        // code then differences to exact zeros and the decoder's running
        // sum does not drift.
        let spacing = spacing.max(min_spacing);
        let start = (lo / spacing).round();
        let book: Vec<f64> = (0..c.residual_centroids).map(|k| (start + k as f64) * spacing).collect();
        let id = self.codec.residual_codebooks[ae];
        self.codec.params.get_mut(id).data_mut().copy_from_slice(&book);
        log::info!("ae{ae} codebook spans [{lo:.4}, {hi:.4}]");
        Ok(())
    }

    /// Hard-codes the validation slice with tables fitted to it and returns
    /// its rate in kbit/s.
    pub fn measure_validation_kbps(&self) -> Result<f64, TrainError> {
        let codes = self.validation.iter().map(|s| self.codec.encode_frames(s)).collect::<Result<Vec<_>, _>>()?;
        let tables = self.codec.build_tables(&codes)?;
        let bits: u64 = codes.iter().map(|c| entropy::payload_bits(c, &tables)).sum();
        Ok(codec::measure_bitrate(bits, self.validation_seconds))
    }

    /// Adjusts the entropy weight until the measured rate is within
    /// tolerance of `target_kbps`, finetuning all modules after each change.
    pub fn bitrate_control(&mut self, target_kbps: f64) -> Result<BitrateReport, TrainError> {
        let cfg = self.codec.config.bitrate.clone();
        let floor = floor_kbps(&self.codec.config);
        let mut report = BitrateReport { target_kbps, floor_kbps: floor, ..Default::default() };
        if target_kbps < floor {
            return Err(TrainError::BelowFloor { target: target_kbps, floor });
        }
        let n_ae = self.codec.autoencoders.len();
        let mut entropy_bits = f64::NAN;
        for iteration in 0..=cfg.max_iterations {
            let measured = self.measure_validation_kbps()?;
            report.steps.push(BitrateStep { iteration, lambda_entropy: self.lambda_entropy, measured_kbps: measured, entropy_bits });
            log::info!("bitrate step {iteration}: lambda_entropy {:.5} -> {measured:.3} kbps", self.lambda_entropy);
            if (measured - target_kbps).abs() <= cfg.tolerance * target_kbps {
                report.converged = true;
                return Ok(report);
            }
            if iteration == cfg.max_iterations {
                break;
            }
            if measured > target_kbps {
                self.lambda_entropy *= cfg.factor;
            } else {
                self.lambda_entropy /= cfg.factor;
            }
            self.set_stage(None);
            let frames = (cfg.frames_per_iteration > 0).then_some(cfg.frames_per_iteration);
            for _ in 0..cfg.epochs_per_iteration {
                entropy_bits = self.epoch(QuantMode::Soft, n_ae, Objective::Signal, frames)?.entropy_bits;
            }
        }
        let achieved = report.final_kbps().unwrap_or(0.0);
        log::warn!("bitrate control did not converge: {achieved:.3} kbps vs target {target_kbps:.3}");
        Err(TrainError::Unreachable { target: target_kbps, achieved, iterations: cfg.max_iterations })
    }

    /// Fixes the model for export: stores the final entropy weight, rounds
    /// parameters to on-disk precision and fits the entropy-coder tables on
    /// the training corpus.
    pub fn finish(mut self, corpus: &[PcmSignal]) -> Result<Codec, TrainError> {
        self.codec.config.loss.lambda_entropy = self.lambda_entropy;
        self.codec.params.snap_to_f32();
        let codes = corpus
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| self.codec.encode_frames(s))
            .collect::<Result<Vec<_>, _>>()?;
        self.codec.tables = Some(self.codec.build_tables(&codes)?);
        Ok(self.codec)
    }
}

/// Training schedule: per autoencoder a warm-up with its quantizer
/// bypassed and a quantized stage, each against its own input residual;
/// then joint finetuning on the reconstructed signal. The trainer is
/// returned for bitrate control.
pub fn cmrl_train(config: Config, corpus: &[PcmSignal]) -> Result<(Trainer, TrainReport), TrainError> {
    let mut t = Trainer::new(config.clone(), corpus)?;
    let mut report = TrainReport::default();
    let n_ae = config.codec.n_autoencoders;
    log::info!("training on {} frames ({} autoencoders)", t.frame_count(), n_ae);

    t.init_lsp_codebook();
    let record = |t: &mut Trainer, m: EpochMetrics, report: &mut TrainReport| -> Result<(), TrainError> {
        let measured = t.measure_validation_kbps()?;
        let m = EpochMetrics { epoch: report.epochs.len() + 1, measured_kbps: measured, ..m };
        log::info!(
            "epoch {}: loss {:.6} mse {:.3e} mel {:.3e} entropy {:.3} bits, {:.3} kbps",
            m.epoch,
            m.total_loss,
            m.mse_time,
            m.mel_loss,
            m.entropy_bits,
            m.measured_kbps
        );
        report.epochs.push(m);
        Ok(())
    };
    for stage in 0..n_ae {
        t.set_warmup(stage);
        for e in 0..config.train.warmup_epochs {
            let m = t.epoch(QuantMode::BypassFrom(stage), stage + 1, Objective::Residual(stage), None)?;
            log::info!("ae{stage} warm-up {}: loss {:.6}", e + 1, m.total_loss);
            report.warmup_losses.push(m.total_loss);
        }
        t.init_residual_codebook(stage)?;
        t.set_stage(Some(stage));
        for _ in 0..config.train.epochs {
            let m = t.epoch(QuantMode::Soft, stage + 1, Objective::Residual(stage), None)?;
            record(&mut t, m, &mut report)?;
        }
    }
    t.set_stage(None);
    for _ in 0..config.train.finetune_epochs {
        let m = t.epoch(QuantMode::Soft, n_ae, Objective::Signal, None)?;
        record(&mut t, m, &mut report)?;
    }
    Ok((t, report))
}

/// [`cmrl_train`], then bitrate control when enabled, then export.
pub fn train_codec(config: Config, corpus: &[PcmSignal]) -> Result<(Codec, TrainReport), TrainError> {
    let (mut t, mut report) = cmrl_train(config.clone(), corpus)?;
    if config.bitrate.enabled {
        match t.bitrate_control(config.codec.target_bitrate_kbps) {
            Ok(r) => report.bitrate = Some(r),
            Err(e @ (TrainError::Unreachable { .. } | TrainError::BelowFloor { .. })) => {
                report.bitrate_error = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    let codec = t.finish(corpus)?;
    Ok((codec, report))
}

/// Samples covered by the training geometry, for reporting.
pub fn training_seconds(corpus: &[PcmSignal]) -> f64 {
    corpus.iter().map(|s| (codec::frame_count(s.len(), TRAIN_HOP) * CODING_LEN) as f64).sum::<f64>() / f64::from(SAMPLE_RATE)
}
