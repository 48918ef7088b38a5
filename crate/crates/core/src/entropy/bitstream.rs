use super::bits::{BitReader, BitWriter};
use super::{EntropyError, HuffmanTable};

pub const MAGIC: &[u8; 4] = b"CQC1";
pub const VERSION: u16 = 1;
const FLAG_ODD_TAIL: u16 = 1;

/// Quantization indices of one coding frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameCode {
    pub lsp_indices: Vec<u32>,
    /// One index sequence per autoencoder.
    pub residual_indices: Vec<Vec<u32>>,
}

/// Symbol counts per frame; identical for every frame of a stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLayout {
    pub lsp_count: usize,
    pub residual_widths: Vec<usize>,
}

impl FrameLayout {
    fn has_odd_tail(&self) -> bool {
        self.lsp_count % 2 == 1 || self.residual_widths.iter().any(|w| w % 2 == 1)
    }

    fn check(&self, f: &FrameCode) -> Result<(), EntropyError> {
        let widths: Vec<usize> = f.residual_indices.iter().map(Vec::len).collect();
        if f.lsp_indices.len() != self.lsp_count || widths != self.residual_widths {
            return Err(EntropyError::Format(format!(
                "frame has {} LSP and {widths:?} residual symbols, layout expects {} and {:?}",
                f.lsp_indices.len(),
                self.lsp_count,
                self.residual_widths
            )));
        }
        Ok(())
    }
}

/// Entropy-coder tables, one per index stream.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeTables {
    pub lsp: HuffmanTable,
    pub residual: Vec<HuffmanTable>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamMeta {
    pub config_hash: u64,
    pub checkpoint_hash: u64,
    pub sample_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedStream {
    pub meta: StreamMeta,
    pub layout: FrameLayout,
    pub frames: Vec<FrameCode>,
    /// Coded bits excluding the header and byte padding.
    pub payload_bits: u64,
}

/// Header fields needed before the payload can be located.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub meta: StreamMeta,
    pub layout: FrameLayout,
    pub flags: u16,
    pub frame_count: u32,
    pub payload_bits: u64,
    pub payload_crc: u32,
    pub header_len: usize,
}

fn encode_payload(frames: &[FrameCode], tables: &CodeTables, layout: &FrameLayout) -> Result<BitWriter, EntropyError> {
    if tables.residual.len() != layout.residual_widths.len() {
        return Err(EntropyError::Format("one residual table per autoencoder required".into()));
    }
    let mut w = BitWriter::new();
    for f in frames {
        layout.check(f)?;
        tables.lsp.encode(&f.lsp_indices, &mut w)?;
        for (idx, table) in f.residual_indices.iter().zip(&tables.residual) {
            table.encode(idx, &mut w)?;
        }
    }
    Ok(w)
}

/// Payload size in bits without producing the container.
pub fn payload_bits(frames: &[FrameCode], tables: &CodeTables) -> u64 {
    frames
        .iter()
        .map(|f| {
            tables.lsp.encoded_bits(&f.lsp_indices)
                + f.residual_indices.iter().zip(&tables.residual).map(|(i, t)| t.encoded_bits(i)).sum::<u64>()
        })
        .sum()
}

pub fn serialize(
    frames: &[FrameCode],
    tables: &CodeTables,
    layout: &FrameLayout,
    meta: &StreamMeta,
) -> Result<Vec<u8>, EntropyError> {
    let payload = encode_payload(frames, tables, layout)?;
    let payload_bits = payload.bit_len();
    let payload = payload.into_bytes();
    let mut out = Vec::with_capacity(64 + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if layout.has_odd_tail() { FLAG_ODD_TAIL } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&meta.config_hash.to_le_bytes());
    out.extend_from_slice(&meta.checkpoint_hash.to_le_bytes());
    out.extend_from_slice(&meta.sample_count.to_le_bytes());
    let frame_count = u32::try_from(frames.len()).map_err(|_| EntropyError::Format("too many frames".into()))?;
    out.extend_from_slice(&frame_count.to_le_bytes());
    let narrow = |v: usize| u16::try_from(v).map_err(|_| EntropyError::Format("layout too large".into()));
    out.extend_from_slice(&narrow(layout.lsp_count)?.to_le_bytes());
    let n_streams = u8::try_from(layout.residual_widths.len()).map_err(|_| EntropyError::Format("too many streams".into()))?;
    out.push(n_streams);
    for &w in &layout.residual_widths {
        out.extend_from_slice(&narrow(w)?.to_le_bytes());
    }
    out.extend_from_slice(&payload_bits.to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    let header_crc = crc32fast::hash(&out);
    out.extend_from_slice(&header_crc.to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EntropyError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(EntropyError::UnexpectedEnd)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], EntropyError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Validates magic, version and header checksum.
pub fn parse_header(bytes: &[u8]) -> Result<Header, EntropyError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(EntropyError::NotCq);
    }
    let mut c = Cursor { bytes, pos: 4 };
    let version = u16::from_le_bytes(c.array()?);
    if version != VERSION {
        return Err(EntropyError::Version(version));
    }
    let flags = u16::from_le_bytes(c.array()?);
    let meta = StreamMeta {
        config_hash: u64::from_le_bytes(c.array()?),
        checkpoint_hash: u64::from_le_bytes(c.array()?),
        sample_count: u64::from_le_bytes(c.array()?),
    };
    let frame_count = u32::from_le_bytes(c.array()?);
    let lsp_count = usize::from(u16::from_le_bytes(c.array()?));
    let n_streams = c.array::<1>()?[0];
    let mut residual_widths = Vec::with_capacity(usize::from(n_streams));
    for _ in 0..n_streams {
        residual_widths.push(usize::from(u16::from_le_bytes(c.array()?)));
    }
    let payload_bits = u64::from_le_bytes(c.array()?);
    let payload_crc = u32::from_le_bytes(c.array()?);
    let covered = c.pos;
    let header_crc = u32::from_le_bytes(c.array()?);
    if crc32fast::hash(&bytes[..covered]) != header_crc {
        return Err(EntropyError::Checksum("header"));
    }
    let layout = FrameLayout { lsp_count, residual_widths };
    if (flags & FLAG_ODD_TAIL != 0) != layout.has_odd_tail() || flags & !FLAG_ODD_TAIL != 0 {
        return Err(EntropyError::Format(format!("inconsistent flags {flags:#06x}")));
    }
    Ok(Header { meta, layout, flags, frame_count, payload_bits, payload_crc, header_len: c.pos })
}

pub fn parse(bytes: &[u8], tables: &CodeTables) -> Result<ParsedStream, EntropyError> {
    let h = parse_header(bytes)?;
    let payload = &bytes[h.header_len..];
    if payload.len() as u64 != h.payload_bits.div_ceil(8) {
        return Err(EntropyError::Format(format!(
            "payload is {} bytes, header announces {} bits",
            payload.len(),
            h.payload_bits
        )));
    }
    if crc32fast::hash(payload) != h.payload_crc {
        return Err(EntropyError::Checksum("payload"));
    }
    if tables.residual.len() != h.layout.residual_widths.len() {
        return Err(EntropyError::Format("stream count does not match the model".into()));
    }
    let mut r = BitReader::new(payload, h.payload_bits);
    let mut frames = Vec::with_capacity(h.frame_count as usize);
    for _ in 0..h.frame_count {
        let lsp_indices = tables.lsp.decode(&mut r, h.layout.lsp_count)?;
        let residual_indices = h
            .layout
            .residual_widths
            .iter()
            .zip(&tables.residual)
            .map(|(&w, t)| t.decode(&mut r, w))
            .collect::<Result<_, _>>()?;
        frames.push(FrameCode { lsp_indices, residual_indices });
    }
    if r.remaining() != 0 {
        return Err(EntropyError::Format(format!("{} trailing payload bits", r.remaining())));
    }
    Ok(ParsedStream { meta: h.meta, layout: h.layout, frames, payload_bits: h.payload_bits })
}
