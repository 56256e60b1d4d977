//! `F0SB` feature cache: little-endian header followed by row-major f32.
//!
//! ```text
//! magic "F0SB" | version u16 | win u32 | hop u32 | rows u16 | cols u16
//! | eps f64 | window-id u8 | rows·cols × f32
//! ```

use super::{DspError, FeatureBlock, Result, WindowKind};

pub const CACHE_MAGIC: &[u8; 4] = b"F0SB";
pub const CACHE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 2 + 2 + 8 + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CacheHeader {
    pub version: u16,
    pub win: u32,
    pub hop: u32,
    pub rows: u16,
    pub cols: u16,
    pub eps: f64,
    pub window: WindowKind,
}

pub fn encode_cache(header: &CacheHeader, block: &FeatureBlock) -> Result<Vec<u8>> {
    if block.rows() != header.rows as usize || block.cols() != header.cols as usize {
        return Err(DspError::Cache(format!(
            "block is {}x{}, header says {}x{}",
            block.rows(),
            block.cols(),
            header.rows,
            header.cols
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * block.values().len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    out.extend_from_slice(&header.win.to_le_bytes());
    out.extend_from_slice(&header.hop.to_le_bytes());
    out.extend_from_slice(&header.rows.to_le_bytes());
    out.extend_from_slice(&header.cols.to_le_bytes());
    out.extend_from_slice(&header.eps.to_le_bytes());
    out.push(header.window.id());
    for v in block.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| DspError::Cache("truncated header".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length"))
    }
}

pub fn decode_cache(bytes: &[u8]) -> Result<(CacheHeader, FeatureBlock)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r.take::<4>()? != CACHE_MAGIC {
        return Err(DspError::Cache("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take()?);
    if version != CACHE_VERSION {
        return Err(DspError::Cache(format!("unsupported version {version}")));
    }
    let win = u32::from_le_bytes(r.take()?);
    let hop = u32::from_le_bytes(r.take()?);
    let rows = u16::from_le_bytes(r.take()?);
    let cols = u16::from_le_bytes(r.take()?);
    let eps = f64::from_le_bytes(r.take()?);
    let [wid] = r.take::<1>()?;
    let window = WindowKind::from_id(wid)
        .ok_or_else(|| DspError::Cache(format!("unknown window id {wid}")))?;
    let n = rows as usize * cols as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * n {
        return Err(DspError::Cache(format!(
            "expected {} payload bytes, found {}",
            4 * n,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    let block = FeatureBlock::new(rows as usize, cols as usize, values)
        .map_err(|e| DspError::Cache(e.to_string()))?;
    let header = CacheHeader {
        version,
        win,
        hop,
        rows,
        cols,
        eps,
        window,
    };
    Ok((header, block))
}
