//! Quantized frequency tables for the range coder.
//!
//! A table covers the values `center − ESCAPE_RADIUS ..= center + ESCAPE_RADIUS`
//! plus one escape symbol for everything outside that window. Frequencies are
//! 16-bit and every symbol gets at least one count, so the smallest
//! representable probability is `P_MIN = 2^−16`.

use serde::{Deserialize, Serialize};

use super::gaussian::bin_mass;
use super::gmm::PairModel;
use super::normal::{std_cdf, std_sf};
use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
pub const P_MIN: f64 = 1.0 / PROB_TOTAL as f64;
pub const ESCAPE_RADIUS: i64 = 64;
/// Symbols per table: the window plus the escape.
pub const TABLE_SYMBOLS: usize = 2 * ESCAPE_RADIUS as usize + 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreqTable {
    pub center: i64,
    /// Cumulative counts, `cum[0] = 0`, `cum[TABLE_SYMBOLS] = PROB_TOTAL`.
    pub cum: Vec<u32>,
}

/// Bits spent on the escape payload of a value `e ≥ 0` past the window edge
/// (a sign bit and an order-0 Exp-Golomb code).
pub fn escape_payload_bits(e: u64) -> u32 {
    1 + 2 * (64 - (e + 1).leading_zeros() - 1) + 1
}

impl FreqTable {
    /// Quantizes `probs` (window then escape, `TABLE_SYMBOLS` entries).
    pub fn from_probs(center: i64, probs: &[f64]) -> Result<Self> {
        if probs.len() != TABLE_SYMBOLS {
            return Err(Error::Parameter(format!(
                "table needs {TABLE_SYMBOLS} probabilities, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Parameter("table probabilities must be finite and nonnegative".into()));
        }
        let total = PROB_TOTAL as i64;
        let mut freq: Vec<i64> = probs
            .iter()
            .map(|p| ((p * total as f64).round() as i64).max(1))
            .collect();
        let mut diff = total - freq.iter().sum::<i64>();
        let mut order: Vec<usize> = (0..freq.len()).collect();
        order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
        if diff > 0 {
            freq[order[0]] += diff;
        } else {
            for &i in &order {
                if diff == 0 {
                    break;
                }
                let take = (freq[i] - 1).min(-diff);
                freq[i] -= take;
                diff += take;
            }
        }
        let mut cum = Vec::with_capacity(TABLE_SYMBOLS + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freq {
            acc += f as u32;
            cum.push(acc);
        }
        debug_assert_eq!(acc, PROB_TOTAL);
        Ok(FreqTable { center, cum })
    }

    pub fn escape_symbol() -> usize {
        TABLE_SYMBOLS - 1
    }

    /// Symbol index of `value`, or `None` when it must be escaped.
    pub fn symbol_of(&self, value: i64) -> Option<usize> {
        let d = value - self.center;
        (d.abs() <= ESCAPE_RADIUS).then(|| (d + ESCAPE_RADIUS) as usize)
    }

    pub fn value_of(&self, symbol: usize) -> i64 {
        self.center + symbol as i64 - ESCAPE_RADIUS
    }

    pub fn freq(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    /// Symbol whose cumulative interval contains `target`.
    pub fn find(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }

    /// Ideal code length of `value` under this table, escape payload included.
    pub fn bits(&self, value: i64) -> f64 {
        match self.symbol_of(value) {
            Some(s) => -(self.freq(s) as f64 / PROB_TOTAL as f64).log2(),
            None => {
                let e = ((value - self.center).unsigned_abs()) - ESCAPE_RADIUS as u64 - 1;
                -(self.freq(Self::escape_symbol()) as f64 / PROB_TOTAL as f64).log2() + escape_payload_bits(e) as f64
            }
        }
    }

    /// `center` (8 bytes) then the symbol counts (2 bytes each, count − 1).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 2 * TABLE_SYMBOLS);
        out.extend_from_slice(&self.center.to_le_bytes());
        for s in 0..TABLE_SYMBOLS {
            out.extend_from_slice(&((self.freq(s) - 1) as u16).to_le_bytes());
        }
        out
    }

    pub const SERIALIZED_LEN: usize = 8 + 2 * TABLE_SYMBOLS;

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::SERIALIZED_LEN {
            return Err(Error::Decode(format!("frequency table of {} bytes", bytes.len())));
        }
        let center = i64::from_le_bytes(bytes[..8].try_into().unwrap());
        let mut cum = vec![0u32];
        let mut acc = 0u32;
        for ch in bytes[8..].chunks(2) {
            acc += u16::from_le_bytes([ch[0], ch[1]]) as u32 + 1;
            cum.push(acc);
        }
        if acc != PROB_TOTAL {
            return Err(Error::Decode(format!("frequency table totals {acc}")));
        }
        Ok(FreqTable { center, cum })
    }
}

/// Table for a latent element with `N(mu, sigma²) ∗ U(−½, ½)`.
pub fn gaussian_table(mu: f64, sigma: f64) -> FreqTable {
    let center = mu.round() as i64;
    let mut probs = Vec::with_capacity(TABLE_SYMBOLS);
    for d in -ESCAPE_RADIUS..=ESCAPE_RADIUS {
        probs.push(bin_mass((center + d) as f64, mu, sigma));
    }
    let lo = (center as f64 - ESCAPE_RADIUS as f64 - 0.5 - mu) / sigma;
    let hi = (center as f64 + ESCAPE_RADIUS as f64 + 0.5 - mu) / sigma;
    probs.push(std_cdf(lo) + std_sf(hi));
    FreqTable::from_probs(center, &probs).expect("gaussian probabilities are valid")
}

/// Table for one user's marginal of a pair model (`axis` 0 for user 1).
pub fn marginal_table(pair: &PairModel, axis: usize) -> FreqTable {
    let center = pair.marginal_mean(axis).round() as i64;
    let mut probs = Vec::with_capacity(TABLE_SYMBOLS);
    for d in -ESCAPE_RADIUS..=ESCAPE_RADIUS {
        probs.push(pair.marginal_bin_pmf(axis, (center + d) as f64));
    }
    let tail: f64 = pair
        .components()
        .iter()
        .map(|c| {
            let lo = (center as f64 - ESCAPE_RADIUS as f64 - 0.5 - c.mean[axis]) / c.sigma[axis];
            let hi = (center as f64 + ESCAPE_RADIUS as f64 + 0.5 - c.mean[axis]) / c.sigma[axis];
            c.weight * (std_cdf(lo) + std_sf(hi))
        })
        .sum();
    probs.push(tail);
    FreqTable::from_probs(center, &probs).expect("mixture probabilities are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_total_and_floor() {
        for &(mu, sigma) in &[(0.0, 1.0), (3.7, 0.01), (-12.2, 40.0), (0.5, 1e-6), (1000.0, 500.0)] {
            let t = gaussian_table(mu, sigma);
            assert_eq!(*t.cum.last().unwrap(), PROB_TOTAL);
            assert!((0..TABLE_SYMBOLS).all(|s| t.freq(s) >= 1));
        }
    }

    #[test]
    fn lookup_inverts_cumulative() {
        let t = gaussian_table(0.3, 2.0);
        for s in 0..TABLE_SYMBOLS {
            assert_eq!(t.find(t.cum[s]), s);
            assert_eq!(t.find(t.cum[s + 1] - 1), s);
        }
        assert_eq!(t.symbol_of(t.value_of(17)), Some(17));
        assert_eq!(t.symbol_of(t.center + 65), None);
    }

    #[test]
    fn serialization_round_trip() {
        let t = gaussian_table(-4.2, 3.3);
        let b = t.to_bytes();
        assert_eq!(b.len(), FreqTable::SERIALIZED_LEN);
        assert_eq!(FreqTable::from_bytes(&b).unwrap(), t);
        let mut bad = b.clone();
        bad[10] ^= 1;
        assert!(FreqTable::from_bytes(&bad).is_err());
    }

    #[test]
    fn escape_payload_lengths() {
        assert_eq!(escape_payload_bits(0), 2);
        assert_eq!(escape_payload_bits(1), 4);
        assert_eq!(escape_payload_bits(2), 4);
        assert_eq!(escape_payload_bits(3), 6);
    }
}
