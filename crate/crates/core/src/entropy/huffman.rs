use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use super::bits::{BitReader, BitWriter};
use super::EntropyError;

/// Longest code the tables may contain.
pub const MAX_CODE_LEN: u8 = 24;

/// Optimal prefix-code lengths for positive frequencies.
///
/// Ties merge in index order, so the result is deterministic. A single
/// symbol gets a 1-bit code.
pub fn code_lengths(freqs: &[u64]) -> Vec<u8> {
    let n = freqs.len();
    if n <= 1 {
        return vec![1; n];
    }
    // Nodes 0..n are leaves; internal nodes are appended.
    let mut parent = vec![usize::MAX; n];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = freqs.iter().enumerate().map(|(i, &f)| Reverse((f, i))).collect();
    while heap.len() > 1 {
        let Reverse((fa, a)) = heap.pop().expect("len > 1");
        let Reverse((fb, b)) = heap.pop().expect("len > 1");
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((fa + fb, id)));
    }
    (0..n)
        .map(|leaf| {
            let mut depth = 0u32;
            let mut node = leaf;
            while parent[node] != usize::MAX {
                node = parent[node];
                depth += 1;
            }
            depth.min(u32::from(u8::MAX)) as u8
        })
        .collect()
}

/// Like [`code_lengths`] but no code exceeds `max_len`; frequencies are
/// halved (rounding up) until the constraint holds.
pub fn limited_code_lengths(freqs: &[u64], max_len: u8) -> Vec<u8> {
    let mut f = freqs.to_vec();
    loop {
        let lens = code_lengths(&f);
        if lens.iter().all(|&l| l <= max_len) {
            return lens;
        }
        f.iter_mut().for_each(|v| *v = v.div_ceil(2));
    }
}

/// Splits a symbol stream into disjoint adjacent pairs, padding an odd tail with 0.
pub fn pairs(symbols: &[u32]) -> impl Iterator<Item = (u32, u32)> + '_ {
    symbols.chunks(2).map(|c| (c[0], c.get(1).copied().unwrap_or(0)))
}

/// Accumulates pair statistics over many short streams.
#[derive(Debug, Clone, Default)]
pub struct PairCounter {
    pub alphabet: u32,
    pub counts: BTreeMap<u32, u64>,
}

impl PairCounter {
    pub fn new(alphabet: u32) -> Self {
        Self { alphabet, counts: BTreeMap::new() }
    }

    pub fn add_stream(&mut self, symbols: &[u32]) -> Result<(), EntropyError> {
        for (a, b) in pairs(symbols) {
            if a >= self.alphabet || b >= self.alphabet {
                return Err(EntropyError::SymbolRange { symbol: a.max(b), alphabet: self.alphabet });
            }
            *self.counts.entry(a * self.alphabet + b).or_default() += 1;
        }
        Ok(())
    }

    pub fn build(&self) -> Result<HuffmanTable, EntropyError> {
        HuffmanTable::from_pair_counts(self.alphabet, &self.counts)
    }
}

/// Canonical Huffman code over symbol pairs with an escape for unseen pairs.
///
/// Pair `(s1, s2)` maps to `s1 * J + s2`; the escape symbol is `J * J` and
/// is followed by the pair value in `raw_pair_bits` bits.
#[derive(Debug, Clone)]
pub struct HuffmanTable {
    alphabet: u32,
    /// `(symbol, length)` in canonical order: by length, then symbol.
    entries: Vec<(u32, u8)>,
    codes: HashMap<u32, (u32, u8)>,
    first_code: Vec<u32>,
    first_index: Vec<usize>,
    counts: Vec<usize>,
}

impl PartialEq for HuffmanTable {
    fn eq(&self, other: &Self) -> bool {
        self.alphabet == other.alphabet && self.entries == other.entries
    }
}

impl HuffmanTable {
    /// Table for the empirical pair distribution of one stream.
    pub fn build_pairs(symbols: &[u32], alphabet: u32) -> Result<Self, EntropyError> {
        let mut counter = PairCounter::new(alphabet);
        counter.add_stream(symbols)?;
        counter.build()
    }

    pub fn from_pair_counts(alphabet: u32, counts: &BTreeMap<u32, u64>) -> Result<Self, EntropyError> {
        let escape = alphabet * alphabet;
        let mut symbols: Vec<u32> = counts.iter().filter(|(_, &c)| c > 0).map(|(&s, _)| s).collect();
        let mut freqs: Vec<u64> = symbols.iter().map(|s| counts[s]).collect();
        symbols.push(escape);
        freqs.push(1);
        let lens = limited_code_lengths(&freqs, MAX_CODE_LEN);
        Self::from_lengths(alphabet, symbols.into_iter().zip(lens).collect())
    }

    /// Rebuilds the canonical code from `(symbol, length)` pairs.
    pub fn from_lengths(alphabet: u32, mut entries: Vec<(u32, u8)>) -> Result<Self, EntropyError> {
        if alphabet < 2 || alphabet.checked_mul(alphabet).is_none() {
            return Err(EntropyError::InvalidTable(format!("alphabet {alphabet}")));
        }
        let escape = alphabet * alphabet;
        if entries.iter().any(|&(s, l)| s > escape || l == 0 || l > MAX_CODE_LEN) {
            return Err(EntropyError::InvalidTable("symbol or length out of range".into()));
        }
        if !entries.iter().any(|&(s, _)| s == escape) {
            return Err(EntropyError::InvalidTable("missing escape".into()));
        }
        entries.sort_by_key(|&(s, l)| (l, s));
        let kraft: f64 = entries.iter().map(|&(_, l)| 2f64.powi(-i32::from(l))).sum();
        if kraft > 1.0 + 1e-12 {
            return Err(EntropyError::InvalidTable(format!("Kraft sum {kraft} exceeds 1")));
        }
        let max = usize::from(MAX_CODE_LEN);
        let mut counts = vec![0usize; max + 1];
        let mut first_code = vec![0u32; max + 1];
        let mut first_index = vec![0usize; max + 1];
        let mut codes = HashMap::with_capacity(entries.len());
        let mut code = 0u32;
        let mut prev_len = 0u8;
        for (i, &(sym, len)) in entries.iter().enumerate() {
            code <<= len - prev_len;
            if counts[usize::from(len)] == 0 {
                first_code[usize::from(len)] = code;
                first_index[usize::from(len)] = i;
            }
            counts[usize::from(len)] += 1;
            if codes.insert(sym, (code, len)).is_some() {
                return Err(EntropyError::InvalidTable("duplicate symbol".into()));
            }
            code += 1;
            prev_len = len;
        }
        Ok(Self { alphabet, entries, codes, first_code, first_index, counts })
    }

    pub fn alphabet(&self) -> u32 {
        self.alphabet
    }

    pub fn escape(&self) -> u32 {
        self.alphabet * self.alphabet
    }

    pub fn entries(&self) -> &[(u32, u8)] {
        &self.entries
    }

    /// Bits of the fixed-length pair written after an escape.
    pub fn raw_pair_bits(&self) -> u32 {
        let values = u64::from(self.alphabet) * u64::from(self.alphabet);
        64 - (values - 1).leading_zeros()
    }

    pub fn kraft_sum(&self) -> f64 {
        self.entries.iter().map(|&(_, l)| 2f64.powi(-i32::from(l))).sum()
    }

    /// Code bits for a pair, escape included.
    pub fn pair_bits(&self, a: u32, b: u32) -> u64 {
        match self.codes.get(&(a * self.alphabet + b)) {
            Some(&(_, len)) => u64::from(len),
            None => u64::from(self.codes[&self.escape()].1) + u64::from(self.raw_pair_bits()),
        }
    }

    fn check(&self, s: u32) -> Result<(), EntropyError> {
        if s >= self.alphabet {
            return Err(EntropyError::SymbolRange { symbol: s, alphabet: self.alphabet });
        }
        Ok(())
    }

    pub fn encode_pair(&self, a: u32, b: u32, w: &mut BitWriter) -> Result<(), EntropyError> {
        self.check(a)?;
        self.check(b)?;
        let sym = a * self.alphabet + b;
        match self.codes.get(&sym) {
            Some(&(code, len)) => w.write(u64::from(code), u32::from(len)),
            None => {
                let (code, len) = self.codes[&self.escape()];
                w.write(u64::from(code), u32::from(len));
                w.write(u64::from(sym), self.raw_pair_bits());
            }
        }
        Ok(())
    }

    pub fn decode_pair(&self, r: &mut BitReader) -> Result<(u32, u32), EntropyError> {
        let mut code = 0u32;
        for len in 1..=usize::from(MAX_CODE_LEN) {
            code = (code << 1) | r.read_bit()?;
            let n = self.counts[len];
            if n > 0 && code >= self.first_code[len] && ((code - self.first_code[len]) as usize) < n {
                let sym = self.entries[self.first_index[len] + (code - self.first_code[len]) as usize].0;
                let sym = if sym == self.escape() {
                    let raw = r.read(self.raw_pair_bits())? as u32;
                    if raw >= self.escape() {
                        return Err(EntropyError::Corrupt("escaped pair out of range".into()));
                    }
                    raw
                } else {
                    sym
                };
                return Ok((sym / self.alphabet, sym % self.alphabet));
            }
        }
        Err(EntropyError::Corrupt("invalid code word".into()))
    }

    /// Pair-codes a stream; an odd tail is padded with symbol 0.
    pub fn encode(&self, symbols: &[u32], w: &mut BitWriter) -> Result<(), EntropyError> {
        pairs(symbols).try_for_each(|(a, b)| self.encode_pair(a, b, w))
    }

    /// Reads back `n` symbols written by [`HuffmanTable::encode`].
    pub fn decode(&self, r: &mut BitReader, n: usize) -> Result<Vec<u32>, EntropyError> {
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let (a, b) = self.decode_pair(r)?;
            out.push(a);
            out.push(b);
        }
        out.truncate(n);
        Ok(out)
    }

    pub fn encoded_bits(&self, symbols: &[u32]) -> u64 {
        pairs(symbols).map(|(a, b)| self.pair_bits(a, b)).sum()
    }
}
