//! Pair-wise Huffman coding of quantization indices and the bitstream
//! container that carries them.

mod bits;
mod bitstream;
mod huffman;

use thiserror::Error;

pub use bits::{BitReader, BitWriter};
pub use bitstream::{
    parse, parse_header, payload_bits, serialize, CodeTables, FrameCode, FrameLayout, Header, ParsedStream,
    StreamMeta, MAGIC, VERSION,
};
pub use huffman::{code_lengths, limited_code_lengths, pairs, HuffmanTable, PairCounter, MAX_CODE_LEN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("unexpected end of stream")]
    UnexpectedEnd,
    #[error("symbol {symbol} outside alphabet of {alphabet}")]
    SymbolRange { symbol: u32, alphabet: u32 },
    #[error("invalid Huffman table: {0}")]
    InvalidTable(String),
    #[error("not a CQ bitstream")]
    NotCq,
    #[error("unsupported bitstream version {0}")]
    Version(u16),
    #[error("corrupt bitstream: {0} checksum mismatch")]
    Checksum(&'static str),
    #[error("corrupt bitstream: {0}")]
    Corrupt(String),
    #[error("malformed bitstream: {0}")]
    Format(String),
}

/// Empirical entropy in bits of a count vector.
pub fn empirical_entropy<I: IntoIterator<Item = u64>>(counts: I) -> f64 {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}
