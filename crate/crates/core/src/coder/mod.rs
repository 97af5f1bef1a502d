//! Entropy coding: integer CDF construction, the reference range coder and
//! the boundary through which an external coding backend plugs in.
//!
//! The boundary is deliberately flat. A caller hands over symbols, a table
//! index per symbol and a batch of concatenated CDF tables, and gets opaque
//! bytes back. Backends report the format version they implement and are
//! refused when it differs from [`FORMAT_VERSION`].

mod cdf;
mod range;
pub mod vectors;

pub use cdf::{build_cdf, CdfTable, PRECISION_BITS, TOTAL};
pub use range::{RangeDecoder, RangeEncoder};

use serde::{Deserialize, Serialize};

use crate::error::{NvcError, Result};

/// Byte format produced by [`ReferenceCoder`]. Bump on any change to the
/// coder arithmetic or the CDF quantization rule.
pub const FORMAT_VERSION: u32 = 1;

/// Coded payload plus the number of symbols it holds.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CodedChunk {
    pub bytes: Vec<u8>,
    pub symbol_count: u32,
}

/// Concatenated CDF tables. Table `k` spans
/// `cdf[offsets[k] .. offsets[k + 1]]` and starts at symbol `min_symbol[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CdfBatch {
    pub cdf: Vec<u32>,
    pub offsets: Vec<u32>,
    pub min_symbol: Vec<i32>,
}

impl CdfBatch {
    pub fn new() -> Self {
        CdfBatch { cdf: Vec::new(), offsets: vec![0], min_symbol: Vec::new() }
    }

    /// Appends a table and returns its index.
    pub fn push(&mut self, table: &CdfTable) -> u32 {
        self.cdf.extend_from_slice(&table.cdf);
        self.offsets.push(self.cdf.len() as u32);
        self.min_symbol.push(table.min_symbol);
        (self.min_symbol.len() - 1) as u32
    }

    pub fn len(&self) -> usize {
        self.min_symbol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min_symbol.is_empty()
    }

    pub fn table(&self, k: usize) -> Result<CdfTable> {
        if k >= self.len() || self.offsets.len() != self.len() + 1 {
            return Err(NvcError::InvalidIndex(format!("cdf table {k} of {}", self.len())));
        }
        let (a, b) = (self.offsets[k] as usize, self.offsets[k + 1] as usize);
        let t = CdfTable {
            min_symbol: self.min_symbol[k],
            cdf: self.cdf.get(a..b).ok_or_else(|| NvcError::InvalidIndex(format!("cdf offsets {a}..{b}")))?.to_vec(),
        };
        if !t.is_valid() {
            return Err(NvcError::MalformedStream(format!("cdf table {k} is not a valid 16-bit table")));
        }
        Ok(t)
    }

    fn tables(&self) -> Result<Vec<CdfTable>> {
        (0..self.len()).map(|k| self.table(k)).collect()
    }
}

/// A range-coding implementation that honors the byte format.
pub trait CoderBackend {
    fn format_version(&self) -> u32;

    fn encode(&self, symbols: &[i32], table_index: &[u32], tables: &CdfBatch) -> Result<CodedChunk>;

    /// Opens an incremental decoder. Callers whose later tables depend on
    /// earlier symbols decode a chunk in several calls.
    fn decode_session<'a>(&self, chunk: &'a CodedChunk) -> Result<Box<dyn DecodeSession + 'a>>;

    fn decode(&self, chunk: &CodedChunk, table_index: &[u32], tables: &CdfBatch) -> Result<Vec<i32>> {
        if chunk.symbol_count as usize != table_index.len() {
            return Err(NvcError::MalformedStream(format!(
                "chunk holds {} symbols, model expects {}",
                chunk.symbol_count,
                table_index.len()
            )));
        }
        let mut s = self.decode_session(chunk)?;
        let out = s.decode(table_index, tables)?;
        s.finish()?;
        Ok(out)
    }
}

pub trait DecodeSession {
    fn decode(&mut self, table_index: &[u32], tables: &CdfBatch) -> Result<Vec<i32>>;

    /// Fails unless exactly `symbol_count` symbols and every byte were used.
    fn finish(self: Box<Self>) -> Result<()>;
}

/// Refuses a backend built for another byte format.
pub fn check_backend(backend: &dyn CoderBackend) -> Result<()> {
    match backend.format_version() {
        FORMAT_VERSION => Ok(()),
        found => Err(NvcError::BackendVersion { expected: FORMAT_VERSION, found }),
    }
}

/// The in-crate coder that pins the byte format.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceCoder;

impl CoderBackend for ReferenceCoder {
    fn format_version(&self) -> u32 {
        FORMAT_VERSION
    }

    fn encode(&self, symbols: &[i32], table_index: &[u32], tables: &CdfBatch) -> Result<CodedChunk> {
        if symbols.len() != table_index.len() {
            return Err(NvcError::ShapeMismatch(format!(
                "{} symbols but {} table indices",
                symbols.len(),
                table_index.len()
            )));
        }
        let tables = tables.tables()?;
        let mut enc = RangeEncoder::new();
        for (&s, &k) in symbols.iter().zip(table_index) {
            let t = tables.get(k as usize).ok_or_else(|| NvcError::InvalidIndex(format!("cdf table {k}")))?;
            enc.encode(s, t)?;
        }
        Ok(CodedChunk { bytes: enc.finish(), symbol_count: symbols.len() as u32 })
    }

    fn decode_session<'a>(&self, chunk: &'a CodedChunk) -> Result<Box<dyn DecodeSession + 'a>> {
        Ok(Box::new(ReferenceSession { dec: RangeDecoder::new(&chunk.bytes)?, expected: chunk.symbol_count as usize, done: 0 }))
    }
}

struct ReferenceSession<'a> {
    dec: RangeDecoder<'a>,
    expected: usize,
    done: usize,
}

impl DecodeSession for ReferenceSession<'_> {
    fn decode(&mut self, table_index: &[u32], tables: &CdfBatch) -> Result<Vec<i32>> {
        if self.done + table_index.len() > self.expected {
            return Err(NvcError::MalformedStream(format!(
                "chunk holds {} symbols, model asks for {}",
                self.expected,
                self.done + table_index.len()
            )));
        }
        let tables = tables.tables()?;
        let mut out = Vec::with_capacity(table_index.len());
        for &k in table_index {
            let t = tables.get(k as usize).ok_or_else(|| NvcError::InvalidIndex(format!("cdf table {k}")))?;
            out.push(self.dec.decode(t)?);
        }
        self.done += out.len();
        Ok(out)
    }

    fn finish(self: Box<Self>) -> Result<()> {
        if self.done != self.expected {
            return Err(NvcError::MalformedStream(format!(
                "chunk holds {} symbols, {} were decoded",
                self.expected, self.done
            )));
        }
        self.dec.finish()
    }
}

/// Ideal code length in bits of `symbols` under their tables.
pub fn ideal_bits(symbols: &[i32], table_index: &[u32], tables: &CdfBatch) -> Result<f64> {
    let tables = tables.tables()?;
    let mut bits = 0.0;
    for (&s, &k) in symbols.iter().zip(table_index) {
        let (_, size) = tables[k as usize].slot(s)?;
        bits -= (size as f64 / TOTAL as f64).log2();
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Future;
    impl CoderBackend for Future {
        fn format_version(&self) -> u32 {
            2
        }
        fn encode(&self, _: &[i32], _: &[u32], _: &CdfBatch) -> Result<CodedChunk> {
            unreachable!()
        }
        fn decode_session<'a>(&self, _: &'a CodedChunk) -> Result<Box<dyn DecodeSession + 'a>> {
            unreachable!()
        }
    }

    #[test]
    fn version_is_checked() {
        assert!(check_backend(&ReferenceCoder).is_ok());
        assert!(matches!(check_backend(&Future), Err(NvcError::BackendVersion { expected: 1, found: 2 })));
    }

    #[test]
    fn batch_roundtrip_with_shared_tables() {
        let mut batch = CdfBatch::new();
        let a = batch.push(&build_cdf(&[0.7, 0.2, 0.1], -1).unwrap());
        let b = batch.push(&build_cdf(&[0.1; 10], 0).unwrap());
        let symbols = vec![-1, 9, 0, 1, 3, -1, -1];
        let index = vec![a, b, a, a, b, a, a];
        let chunk = ReferenceCoder.encode(&symbols, &index, &batch).unwrap();
        assert_eq!(chunk.symbol_count, 7);
        assert_eq!(ReferenceCoder.decode(&chunk, &index, &batch).unwrap(), symbols);
        let short = &index[..6];
        assert!(matches!(ReferenceCoder.decode(&chunk, short, &batch), Err(NvcError::MalformedStream(_))));
    }

    #[test]
    fn sessions_decode_in_pieces() {
        let mut batch = CdfBatch::new();
        let a = batch.push(&build_cdf(&[0.2, 0.5, 0.3], 0).unwrap());
        let symbols = vec![0, 2, 1, 1, 2, 0, 1];
        let chunk = ReferenceCoder.encode(&symbols, &[a; 7], &batch).unwrap();
        let mut s = ReferenceCoder.decode_session(&chunk).unwrap();
        let mut got = s.decode(&[a; 3], &batch).unwrap();
        got.extend(s.decode(&[a; 4], &batch).unwrap());
        assert_eq!(got, symbols);
        s.finish().unwrap();
        let mut s = ReferenceCoder.decode_session(&chunk).unwrap();
        s.decode(&[a; 5], &batch).unwrap();
        assert!(s.finish().is_err());
    }

    #[test]
    fn empty_list_roundtrips() {
        let batch = CdfBatch::new();
        let chunk = ReferenceCoder.encode(&[], &[], &batch).unwrap();
        assert!(ReferenceCoder.decode(&chunk, &[], &batch).unwrap().is_empty());
    }
}
