//! Table-driven coding of quantized latents and hyperpriors.

use super::quant::IntGrid;
use super::range::{RangeDecoder, RangeEncoder};
use crate::entropy::tables::{gaussian_table, marginal_table, FreqTable, ESCAPE_RADIUS, PROB_BITS};
use crate::entropy::JointHyperModel;
use crate::error::{Error, Result};
use crate::transforms::GaussianParams;

fn encode_value(enc: &mut RangeEncoder, table: &FreqTable, v: i64) {
    match table.symbol_of(v) {
        Some(s) => enc.encode(table.cum[s], table.freq(s), PROB_BITS),
        None => {
            let esc = FreqTable::escape_symbol();
            enc.encode(table.cum[esc], table.freq(esc), PROB_BITS);
            let d = v - table.center;
            enc.encode_bits((d < 0) as u64, 1);
            let m = d.unsigned_abs() - ESCAPE_RADIUS as u64;
            // order-0 Exp-Golomb of m − 1 ≥ 0, written as m with its length in unary
            let n = 64 - m.leading_zeros();
            enc.encode_bits(0, n - 1);
            enc.encode_bits(m, n);
        }
    }
}

fn decode_value(dec: &mut RangeDecoder, table: &FreqTable) -> Result<i64> {
    let t = dec.target(PROB_BITS)?;
    let s = table.find(t);
    dec.consume(table.cum[s], table.freq(s));
    if s != FreqTable::escape_symbol() {
        return Ok(table.value_of(s));
    }
    let negative = dec.decode_bits(1)? == 1;
    let mut zeros = 0;
    while dec.decode_bits(1)? == 0 {
        zeros += 1;
        if zeros >= 63 {
            return Err(Error::Decode("escape code too long".into()));
        }
    }
    let m = (1u64 << zeros) | dec.decode_bits(zeros)?;
    let mag = m
        .checked_add(ESCAPE_RADIUS as u64)
        .filter(|v| *v <= i64::MAX as u64)
        .ok_or_else(|| Error::Decode("escape value overflows".into()))? as i64;
    Ok(if negative { table.center - mag } else { table.center + mag })
}

/// Codes `values[i]` with `table(i)`. An empty input yields an empty segment.
pub fn encode_with<F: Fn(usize) -> FreqTable>(values: &[i64], table: F) -> Vec<u8> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut enc = RangeEncoder::new();
    for (i, &v) in values.iter().enumerate() {
        encode_value(&mut enc, &table(i), v);
    }
    enc.finish()
}

/// Decodes `n` values coded by [`encode_with`] with the same tables.
pub fn decode_with<F: Fn(usize) -> FreqTable>(bytes: &[u8], n: usize, table: F) -> Result<Vec<i64>> {
    if n == 0 {
        if !bytes.is_empty() {
            return Err(Error::Decode(format!("{} stray bytes in an empty segment", bytes.len())));
        }
        return Ok(Vec::new());
    }
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(decode_value(&mut dec, &table(i))?);
    }
    dec.finish()?;
    Ok(out)
}

/// Sum of ideal code lengths of `values` under the quantized tables.
pub fn table_bits<F: Fn(usize) -> FreqTable>(values: &[i64], table: F) -> f64 {
    values.iter().enumerate().map(|(i, &v)| table(i).bits(v)).sum()
}

fn latent_table(params: &GaussianParams) -> impl Fn(usize) -> FreqTable + '_ {
    move |i| gaussian_table(params.mu.data[i], params.sigma.data[i])
}

fn check_latent(dims: (usize, usize, usize), params: &GaussianParams) -> Result<()> {
    if dims != params.mu.dims() || dims != params.sigma.dims() {
        return Err(Error::Shape(format!(
            "symbols {dims:?} vs entropy parameters {:?}",
            params.mu.dims()
        )));
    }
    Ok(())
}

pub fn encode_latent(y_bar: &IntGrid, params: &GaussianParams) -> Result<Vec<u8>> {
    check_latent(y_bar.dims(), params)?;
    Ok(encode_with(&y_bar.data, latent_table(params)))
}

pub fn decode_latent(bytes: &[u8], params: &GaussianParams) -> Result<IntGrid> {
    let (h, w, c) = params.mu.dims();
    let data = decode_with(bytes, h * w * c, latent_table(params))?;
    IntGrid::new(h, w, c, data)
}

/// Ideal code length of `y_bar` under the quantized latent tables.
pub fn latent_table_bits(y_bar: &IntGrid, params: &GaussianParams) -> Result<f64> {
    check_latent(y_bar.dims(), params)?;
    Ok(table_bits(&y_bar.data, latent_table(params)))
}

/// Per-channel marginal tables of user `user` (0 or 1).
pub fn hyper_tables(model: &JointHyperModel, user: usize) -> Vec<FreqTable> {
    (0..model.channels()).map(|ch| marginal_table(model.pair(ch), user)).collect()
}

pub fn encode_hyper(z_bar: &IntGrid, tables: &[FreqTable]) -> Result<Vec<u8>> {
    if z_bar.c != tables.len() {
        return Err(Error::Shape(format!("{} channels vs {} tables", z_bar.c, tables.len())));
    }
    Ok(encode_with(&z_bar.data, |i| tables[i % tables.len()].clone()))
}

pub fn decode_hyper(bytes: &[u8], dims: (usize, usize, usize), tables: &[FreqTable]) -> Result<IntGrid> {
    let (h, w, c) = dims;
    if c != tables.len() {
        return Err(Error::Shape(format!("{c} channels vs {} tables", tables.len())));
    }
    let data = decode_with(bytes, h * w * c, |i| tables[i % c].clone())?;
    IntGrid::new(h, w, c, data)
}

pub fn hyper_table_bits(z_bar: &IntGrid, tables: &[FreqTable]) -> f64 {
    table_bits(&z_bar.data, |i| tables[i % tables.len()].clone())
}
