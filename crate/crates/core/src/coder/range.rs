//! Reference range coder: 32-bit range, 16-bit totals, carry propagation
//! through a cached byte, byte renormalization. Written for clarity; any
//! faster backend must produce byte-identical output.
//!
//! The carry cache starts as a byte above the 32-bit window that can never
//! become nonzero, so it is not written: a stream is its flush plus four
//! bytes shorter than the classic layout would make it.

use super::cdf::{CdfTable, PRECISION_BITS, TOTAL};
use crate::error::{NvcError, Result};

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    pub fn encode(&mut self, symbol: i32, table: &CdfTable) -> Result<()> {
        let (start, size) = table.slot(symbol)?;
        self.encode_slot(start, size);
        Ok(())
    }

    pub fn encode_slot(&mut self, start: u32, size: u32) {
        debug_assert!(size > 0 && start + size <= TOTAL);
        let r = self.range >> PRECISION_BITS;
        self.low += r as u64 * start as u64;
        self.range = r * size;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        debug_assert_eq!(self.out[0], 0);
        self.out.remove(0);
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder { code: 0, range: u32::MAX, bytes, pos: 0 };
        for _ in 0..4 {
            let b = d.next_byte()?;
            d.code = (d.code << 8) | b as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| NvcError::MalformedStream("range decoder ran past the payload".into()))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, table: &CdfTable) -> Result<i32> {
        let r = self.range >> PRECISION_BITS;
        let value = (self.code / r).min(TOTAL - 1);
        let i = table.find(value);
        let (start, end) = (table.cdf[i], table.cdf[i + 1]);
        self.code -= r * start;
        self.range = r * (end - start);
        if self.code >= self.range {
            return Err(NvcError::MalformedStream("code outside the decoded slot".into()));
        }
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(table.min_symbol + i as i32)
    }

    /// Fails unless every payload byte was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(NvcError::MalformedStream(format!(
                "{} trailing bytes after the last symbol",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::cdf::build_cdf;
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn roundtrip(symbols: &[i32], tables: &[CdfTable]) -> Vec<u8> {
        let mut enc = RangeEncoder::new();
        for (s, t) in symbols.iter().zip(tables) {
            enc.encode(*s, t).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        let decoded: Vec<i32> = tables.iter().map(|t| dec.decode(t).unwrap()).collect();
        dec.finish().unwrap();
        assert_eq!(decoded, symbols);
        bytes
    }

    #[test]
    fn empty_stream() {
        let bytes = roundtrip(&[], &[]);
        assert_eq!(bytes.len(), 4);
    }

    #[test]
    fn fair_coins_cost_one_bit_each() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let table = build_cdf(&[0.5, 0.5], 0).unwrap();
        let symbols: Vec<i32> = (0..8000).map(|_| rng.random_range(0..2)).collect();
        let bytes = roundtrip(&symbols, &vec![table; 8000]);
        assert!((1000..=1032).contains(&bytes.len()), "{}", bytes.len());
    }

    #[test]
    fn carries_propagate_through_runs_of_ff() {
        // a near-certain top symbol keeps `low` close to the top of the range
        let table = build_cdf(&[1e-9, 1.0], 0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let symbols: Vec<i32> = (0..20000).map(|i| if i % 997 == 0 { rng.random_range(0..2) } else { 1 }).collect();
        roundtrip(&symbols, &vec![table; symbols.len()]);
    }

    #[test]
    fn truncated_and_padded_payloads_are_rejected() {
        let table = build_cdf(&[0.3, 0.7], 0).unwrap();
        let symbols = vec![0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 0, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0];
        let bytes = roundtrip(&symbols, &vec![table.clone(); symbols.len()]);
        let mut padded = bytes.clone();
        padded.push(0);
        let mut dec = RangeDecoder::new(&padded).unwrap();
        for _ in &symbols {
            dec.decode(&table).unwrap();
        }
        assert!(matches!(dec.finish(), Err(NvcError::MalformedStream(_))));
        let short = &bytes[..bytes.len() - 1];
        let mut dec = RangeDecoder::new(short).unwrap();
        let r: Result<Vec<i32>> = symbols.iter().map(|_| dec.decode(&table)).collect();
        assert!(r.is_err() || dec.finish().is_err());
    }

    #[test]
    fn out_of_range_symbol() {
        let table = build_cdf(&[0.5, 0.5], -1).unwrap();
        let mut enc = RangeEncoder::new();
        assert!(matches!(enc.encode(1, &table), Err(NvcError::SymbolOutOfRange { .. })));
    }

    fn random_table(rng: &mut impl Rng) -> CdfTable {
        let n = rng.random_range(1..40);
        let pmf: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>().powi(4) })
            .collect();
        build_cdf(&pmf, rng.random_range(-20..20)).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn random_streams_roundtrip(seed in any::<u64>(), len in 0usize..600) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let tables: Vec<CdfTable> = (0..len).map(|_| random_table(&mut rng)).collect();
            let symbols: Vec<i32> = tables
                .iter()
                .map(|t| t.min_symbol + rng.random_range(0..t.symbol_count() as i32))
                .collect();
            roundtrip(&symbols, &tables);
        }
    }
}
