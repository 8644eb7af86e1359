//! Byte-oriented range coder with carry propagation (LZMA layout).

use crate::error::{Error, Result};

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
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low as u32) >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = ((self.low as u32) << 8) as u64;
    }

    /// Codes the interval `[cum, cum + freq)` out of `2^bits`.
    pub fn encode(&mut self, cum: u32, freq: u32, bits: u32) {
        debug_assert!(freq > 0 && cum + freq <= 1 << bits);
        let r = self.range >> bits;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Codes `n` raw bits of `value`, most significant first.
    pub fn encode_bits(&mut self, value: u64, n: u32) {
        for i in (0..n).rev() {
            self.encode(((value >> i) & 1) as u32, 1, 1);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
    overrun: bool,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        if input.len() < 5 {
            return Err(Error::Decode(format!("range-coded segment of {} bytes is truncated", input.len())));
        }
        if input[0] != 0 {
            return Err(Error::Decode("range-coded segment has a nonzero lead byte".into()));
        }
        let mut d = RangeDecoder {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
            overrun: false,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> u8 {
        match self.input.get(self.pos) {
            Some(&b) => {
                self.pos += 1;
                b
            }
            None => {
                self.overrun = true;
                0
            }
        }
    }

    /// Returns the cumulative target in `[0, 2^bits)`; call [`Self::consume`] next.
    pub fn target(&mut self, bits: u32) -> Result<u32> {
        self.range >>= bits;
        let t = self.code / self.range;
        if t >> bits != 0 {
            return Err(Error::Decode("range decoder state out of bounds".into()));
        }
        Ok(t)
    }

    pub fn consume(&mut self, cum: u32, freq: u32) {
        self.code -= self.range * cum;
        self.range *= freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.range <<= 8;
        }
    }

    pub fn decode_bits(&mut self, n: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..n {
            let b = self.target(1)?;
            self.consume(b, 1);
            v = (v << 1) | b as u64;
        }
        Ok(v)
    }

    /// Fails if the decoder read past the segment or left bytes unread.
    pub fn finish(self) -> Result<()> {
        if self.overrun || self.pos != self.input.len() {
            return Err(Error::Decode(format!(
                "range-coded segment length mismatch: consumed {} of {} bytes",
                self.pos,
                self.input.len()
            )));
        }
        Ok(())
    }
}
