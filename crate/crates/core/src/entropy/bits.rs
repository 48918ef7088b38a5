use super::EntropyError;

/// MSB-first bit packer.
#[derive(Debug, Clone, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `n` bits of `value`, most significant first.
    pub fn write(&mut self, value: u64, n: u32) {
        debug_assert!(n <= 64);
        for k in (0..n).rev() {
            let bit = (value >> k) & 1;
            let pos = (self.bits % 8) as u32;
            if pos == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().expect("pushed") |= 0x80 >> pos;
            }
            self.bits += 1;
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    /// Packed bytes; the final byte is zero-padded.
    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Reader over a bit slice of known length.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    len: u64,
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], len_bits: u64) -> Self {
        Self { bytes, len: len_bits.min(bytes.len() as u64 * 8), pos: 0 }
    }

    pub fn read_bit(&mut self) -> Result<u32, EntropyError> {
        if self.pos >= self.len {
            return Err(EntropyError::UnexpectedEnd);
        }
        let byte = self.bytes[(self.pos / 8) as usize];
        let bit = (byte >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        Ok(u32::from(bit))
    }

    pub fn read(&mut self, n: u32) -> Result<u64, EntropyError> {
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.len - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_packing() {
        let mut w = BitWriter::new();
        w.write(0b1, 1);
        w.write(0b0110, 4);
        w.write(0b101, 3);
        w.write(0b11, 2);
        assert_eq!(w.bit_len(), 10);
        let bytes = w.into_bytes();
        assert_eq!(bytes, vec![0b1011_0101, 0b1100_0000]);
        let mut r = BitReader::new(&bytes, 10);
        assert_eq!(r.read(1).unwrap(), 1);
        assert_eq!(r.read(4).unwrap(), 0b0110);
        assert_eq!(r.read(5).unwrap(), 0b10111);
        assert_eq!(r.read_bit(), Err(EntropyError::UnexpectedEnd));
    }
}
