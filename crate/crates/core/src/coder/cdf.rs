use crate::error::{NvcError, Result};

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION_BITS;

/// Integer cumulative table over the symbols `min_symbol ..= max_symbol()`.
/// `cdf[0] == 0`, `cdf[n] == TOTAL`, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    pub min_symbol: i32,
    pub cdf: Vec<u32>,
}

impl CdfTable {
    pub fn symbol_count(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn max_symbol(&self) -> i32 {
        self.min_symbol + self.symbol_count() as i32 - 1
    }

    pub fn contains(&self, symbol: i32) -> bool {
        symbol >= self.min_symbol && symbol <= self.max_symbol()
    }

    /// `(start, size)` of a symbol's slot.
    pub fn slot(&self, symbol: i32) -> Result<(u32, u32)> {
        if !self.contains(symbol) {
            return Err(NvcError::SymbolOutOfRange {
                symbol,
                min: self.min_symbol,
                max: self.max_symbol(),
            });
        }
        let i = (symbol - self.min_symbol) as usize;
        Ok((self.cdf[i], self.cdf[i + 1] - self.cdf[i]))
    }

    /// Index of the slot containing `value`, which must be below `TOTAL`.
    pub fn find(&self, value: u32) -> usize {
        self.cdf.partition_point(|&c| c <= value) - 1
    }

    pub fn probability(&self, symbol: i32) -> f64 {
        self.slot(symbol).map_or(0.0, |(_, s)| s as f64 / TOTAL as f64)
    }

    pub fn is_valid(&self) -> bool {
        self.cdf.len() >= 2
            && self.cdf[0] == 0
            && *self.cdf.last().unwrap() == TOTAL
            && self.cdf.windows(2).all(|w| w[0] < w[1])
    }
}

/// Quantizes a pmf over consecutive symbols starting at `min_symbol` to
/// 16-bit counts.
///
/// Every symbol first gets one count. The remaining `TOTAL - n` counts are
/// split in proportion to the pmf by largest remainder, ties to the lower
/// index. An all-zero pmf is treated as uniform. Inputs are scaled by a power
/// of two to 62-bit integers, so the split is exact for any pmf whose entries
/// are within 2^-9 of its maximum.
pub fn build_cdf(pmf: &[f64], min_symbol: i32) -> Result<CdfTable> {
    let n = pmf.len();
    if n == 0 {
        return Err(NvcError::EmptyRange);
    }
    if n > TOTAL as usize {
        return Err(crate::error::invalid("pmf", format!("{n} symbols exceed {TOTAL} counts")));
    }
    if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(crate::error::invalid("pmf", "entries must be finite and nonnegative"));
    }
    let weights = integer_weights(pmf);
    let sum: u128 = weights.iter().sum();
    let spare = (TOTAL as usize - n) as u128;
    let mut counts: Vec<u128> = Vec::with_capacity(n);
    let mut remainders: Vec<(u128, usize)> = Vec::with_capacity(n);
    for (i, &w) in weights.iter().enumerate() {
        let share = spare * w;
        counts.push(1 + share / sum);
        remainders.push((share % sum, i));
    }
    let assigned: u128 = counts.iter().sum::<u128>() - n as u128;
    let leftover = (spare - assigned) as usize;
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(leftover) {
        counts[i] += 1;
    }
    let mut cdf = Vec::with_capacity(n + 1);
    let mut acc = 0u32;
    cdf.push(0);
    for c in counts {
        acc += c as u32;
        cdf.push(acc);
    }
    debug_assert_eq!(acc, TOTAL);
    Ok(CdfTable { min_symbol, cdf })
}

fn integer_weights(pmf: &[f64]) -> Vec<u128> {
    let max = pmf.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![1; pmf.len()];
    }
    // 2^k * max lands in [2^61, 2^63)
    let k = 61 - max.log2().floor() as i32;
    let scale = 2f64.powi(k);
    pmf.iter().map(|&p| (p * scale).round() as u128).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_splits_evenly() {
        let t = build_cdf(&[0.25; 4], -2).unwrap();
        assert_eq!(t.cdf, vec![0, 16384, 32768, 49152, 65536]);
        assert_eq!((t.min_symbol, t.max_symbol()), (-2, 1));
    }

    #[test]
    fn zero_mass_symbol_keeps_one_count() {
        let t = build_cdf(&[0.5, 0.5, 0.0], 0).unwrap();
        assert_eq!(t.cdf, vec![0, 32768, 65535, 65536]);
        assert!(t.is_valid());
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(build_cdf(&[], 0), Err(NvcError::EmptyRange)));
        assert!(build_cdf(&[0.5, f64::NAN], 0).is_err());
        assert!(build_cdf(&[0.5, -0.1], 0).is_err());
        let t = build_cdf(&[0.0; 3], 0).unwrap();
        assert!(t.is_valid());
    }

    #[test]
    fn slot_lookup() {
        let t = build_cdf(&[0.25; 4], 5).unwrap();
        assert_eq!(t.slot(6).unwrap(), (16384, 16384));
        assert_eq!(t.find(16383), 0);
        assert_eq!(t.find(16384), 1);
        assert_eq!(t.find(65535), 3);
        assert!(matches!(t.slot(9), Err(NvcError::SymbolOutOfRange { symbol: 9, min: 5, max: 8 })));
    }
}
