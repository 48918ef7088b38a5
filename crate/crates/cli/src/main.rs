//! `cq`: train, run and evaluate the codec from the command line.
//!
//! Failures print a single line `error[<kind>]: <message>` on stderr and
//! exit with a nonzero status.

use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cq_codec::checkpoint::{self, Checkpoint};
use cq_codec::codec::measure_bitrate;
use cq_codec::config::Config;
use cq_codec::entropy::parse_header;
use cq_codec::harness::{self, MetricsRow};
use cq_codec::signal::SAMPLE_RATE;
use cq_codec::train;

#[derive(Parser)]
#[command(name = "cq", version, about = "LPC + cascaded autoencoder speech codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of 16 kHz mono WAV files.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Epochs per autoencoder stage.
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch metrics CSV; defaults to the checkpoint path with a `.csv` extension.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Compress a WAV file into a bitstream.
    Encode {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Reconstruct a WAV file from a bitstream.
    Decode {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Objective comparison of a decoded file against its reference.
    Eval {
        reference: PathBuf,
        degraded: PathBuf,
        /// Bitstream the degraded file came from, to report its bitrate.
        #[arg(long)]
        bitstream: Option<PathBuf>,
    },
    /// Summarize a checkpoint.
    Inspect { path: PathBuf },
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Keep it on one line whatever the source error looks like.
        write!(f, "error[{}]: {}", self.kind, self.message.replace('\n', " "))
    }
}

fn err(kind: &'static str) -> impl Fn(&dyn fmt::Display) -> CliError {
    move |e| CliError { kind, message: e.to_string() }
}

type CliResult<T = ()> = Result<T, CliError>;

fn load_model(path: &Path) -> CliResult<Checkpoint> {
    checkpoint::load(path).map_err(|e| CliError { kind: "checkpoint", message: format!("{}: {e}", path.display()) })
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError { kind: "io", message: format!("{}: {e}", path.display()) })
}

fn write(path: &Path, bytes: &[u8]) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| CliError { kind: "io", message: format!("{}: {e}", path.display()) })
}

fn cmd_train(
    config: &Path,
    corpus: &Path,
    out: &Path,
    seed: Option<u64>,
    epochs: Option<usize>,
    metrics: Option<PathBuf>,
) -> CliResult {
    let text = std::fs::read_to_string(config)
        .map_err(|e| CliError { kind: "config", message: format!("{}: {e}", config.display()) })?;
    let mut cfg = Config::from_toml(&text).map_err(|e| err("config")(&e))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = epochs {
        cfg.train.epochs = n;
    }
    cfg.validate().map_err(|e| err("config")(&e))?;
    let metrics = metrics.unwrap_or_else(|| out.with_extension("csv"));
    // Fail before training if the outputs cannot be written.
    for p in [out, metrics.as_path()] {
        File::create(p).map_err(|e| CliError { kind: "io", message: format!("{}: {e}", p.display()) })?;
    }

    let data = harness::load_corpus(corpus, &cfg.train.corpus_glob).map_err(|e| err("corpus")(&e))?;
    if !data.skipped.is_empty() {
        eprintln!("warning: skipped {} unreadable corpus file(s)", data.skipped.len());
    }
    log::info!("corpus: {} files, {:.1} s", data.signals.len(), data.duration_s());

    let (codec, report) = train::train_codec(cfg, &data.signals).map_err(|e| err("train")(&e))?;
    let hash = checkpoint::save(&codec, out).map_err(|e| err("checkpoint")(&e))?;
    let rows: Vec<MetricsRow> = report.epochs.iter().map(MetricsRow::from).collect();
    let file = File::create(&metrics).map_err(|e| err("io")(&e))?;
    harness::write_metrics_csv(file, &rows).map_err(|e| err("io")(&e))?;
    println!("checkpoint={} hash={hash:016x} epochs={}", out.display(), rows.len());
    if let Some(b) = &report.bitrate {
        println!("bitrate_kbps={:.3} target_kbps={:.3} adjustments={}", b.final_kbps().unwrap_or(0.0), b.target_kbps, b.steps.len() - 1);
    }
    if let Some(e) = report.bitrate_error {
        // Model is saved, but the requested rate was not met.
        return Err(CliError { kind: "bitrate", message: e });
    }
    Ok(())
}

fn cmd_encode(model: &Path, input: &Path, output: &Path) -> CliResult {
    let ck = load_model(model)?;
    let signal = harness::load_wav(input).map_err(|e| err("wav")(&e))?;
    let bytes = ck.codec.encode(&signal, ck.hash).map_err(|e| err("encode")(&e))?;
    write(output, &bytes)?;
    let header = parse_header(&bytes).map_err(|e| err("encode")(&e))?;
    println!(
        "frames={} payload_bits={} measured_kbps={:.3}",
        header.frame_count,
        header.payload_bits,
        measure_bitrate(header.payload_bits, signal.duration_s())
    );
    Ok(())
}

fn cmd_decode(model: &Path, input: &Path, output: &Path) -> CliResult {
    let ck = load_model(model)?;
    let bytes = read(input)?;
    let signal = ck.codec.decode(&bytes, ck.hash).map_err(|e| err("decode")(&e))?;
    harness::save_wav(output, &signal).map_err(|e| err("wav")(&e))?;
    println!("samples={}", signal.len());
    Ok(())
}

fn cmd_eval(reference: &Path, degraded: &Path, bitstream: Option<PathBuf>) -> CliResult {
    let r = harness::load_wav(reference).map_err(|e| err("wav")(&e))?;
    let d = harness::load_wav(degraded).map_err(|e| err("wav")(&e))?;
    let mut report = harness::evaluate(&r, &d).map_err(|e| err("eval")(&e))?;
    if let Some(p) = bitstream {
        let header = parse_header(&read(&p)?).map_err(|e| err("bitstream")(&e))?;
        let seconds = header.meta.sample_count as f64 / f64::from(SAMPLE_RATE);
        report.measured_bitrate_kbps = Some(measure_bitrate(header.payload_bits, seconds));
    }
    println!("{}", report.to_json());
    Ok(())
}

fn cmd_inspect(path: &Path) -> CliResult {
    print!("{}", checkpoint::describe(&load_model(path)?));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, corpus, out, seed, epochs, metrics } => {
            cmd_train(&config, &corpus, &out, seed, epochs, metrics)
        }
        Command::Encode { model, input, output } => cmd_encode(&model, &input, &output),
        Command::Decode { model, input, output } => cmd_decode(&model, &input, &output),
        Command::Eval { reference, degraded, bitstream } => cmd_eval(&reference, &degraded, bitstream),
        Command::Inspect { path } => cmd_inspect(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
