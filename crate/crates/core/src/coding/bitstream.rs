//! The coded container for one user's image.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `DNTC` |
//! | 1 | version |
//! | 1 | flags (bit 0: embedded hyper tables) |
//! | 1 | user id (0 or 1) |
//! | 8 | image height, width (`u32` each) |
//! | 12 | latent `h, w, c` (`u32` each) |
//! | 12 | hyperprior `h, w, c` (`u32` each) |
//! | 12 | table, z and y segment lengths (`u32` each) |
//! | … | table segment, z segment, y segment |

use crate::entropy::tables::FreqTable;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DNTC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 8 + 12 + 12 + 12;
const FLAG_TABLES: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub user: u8,
    pub image_dims: (usize, usize),
    pub latent_dims: (usize, usize, usize),
    pub hyper_dims: (usize, usize, usize),
    /// Optional copy of the hyperprior coding tables, one per channel.
    pub tables: Option<Vec<FreqTable>>,
    pub z_segment: Vec<u8>,
    pub y_segment: Vec<u8>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Framing(format!("field {v} exceeds 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Framing(format!("truncated at byte {} (need {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

impl Bitstream {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let table_bytes: Vec<u8> = self
            .tables
            .as_ref()
            .map(|ts| ts.iter().flat_map(|t| t.to_bytes()).collect())
            .unwrap_or_default();
        let mut out = Vec::with_capacity(HEADER_LEN + table_bytes.len() + self.z_segment.len() + self.y_segment.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(if self.tables.is_some() { FLAG_TABLES } else { 0 });
        out.push(self.user);
        put_u32(&mut out, self.image_dims.0)?;
        put_u32(&mut out, self.image_dims.1)?;
        for d in [self.latent_dims, self.hyper_dims] {
            put_u32(&mut out, d.0)?;
            put_u32(&mut out, d.1)?;
            put_u32(&mut out, d.2)?;
        }
        put_u32(&mut out, table_bytes.len())?;
        put_u32(&mut out, self.z_segment.len())?;
        put_u32(&mut out, self.y_segment.len())?;
        out.extend_from_slice(&table_bytes);
        out.extend_from_slice(&self.z_segment);
        out.extend_from_slice(&self.y_segment);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Framing("bad magic".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Framing(format!("unsupported version {version}")));
        }
        let flags = r.u8()?;
        if flags & !FLAG_TABLES != 0 {
            return Err(Error::Framing(format!("unknown flags {flags:#x}")));
        }
        let user = r.u8()?;
        if user > 1 {
            return Err(Error::Framing(format!("user id {user}")));
        }
        let image_dims = (r.u32()?, r.u32()?);
        let latent_dims = (r.u32()?, r.u32()?, r.u32()?);
        let hyper_dims = (r.u32()?, r.u32()?, r.u32()?);
        let (tl, zl, yl) = (r.u32()?, r.u32()?, r.u32()?);
        let declared = HEADER_LEN as u64 + tl as u64 + zl as u64 + yl as u64;
        if declared != bytes.len() as u64 {
            return Err(Error::Framing(format!(
                "declared length {declared} but stream has {} bytes",
                bytes.len()
            )));
        }
        let table_bytes = r.take(tl)?;
        let tables = if flags & FLAG_TABLES != 0 {
            if tl != hyper_dims.2 * FreqTable::SERIALIZED_LEN {
                return Err(Error::Framing(format!("table segment of {tl} bytes for {} channels", hyper_dims.2)));
            }
            Some(
                table_bytes
                    .chunks(FreqTable::SERIALIZED_LEN)
                    .map(FreqTable::from_bytes)
                    .collect::<Result<Vec<_>>>()?,
            )
        } else if tl != 0 {
            return Err(Error::Framing("table bytes present without the table flag".into()));
        } else {
            None
        };
        let z_segment = r.take(zl)?.to_vec();
        let y_segment = r.take(yl)?.to_vec();
        Ok(Bitstream {
            user,
            image_dims,
            latent_dims,
            hyper_dims,
            tables,
            z_segment,
            y_segment,
        })
    }

    pub fn len_bytes(&self) -> usize {
        HEADER_LEN
            + self.tables.as_ref().map_or(0, |t| t.len() * FreqTable::SERIALIZED_LEN)
            + self.z_segment.len()
            + self.y_segment.len()
    }
}
