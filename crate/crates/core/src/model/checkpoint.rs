//! `MPIF` checkpoint container, little-endian throughout.
//!
//! ```text
//! magic "MPIF" | version u16 | config_len u32 | canonical config JSON
//! | step u64 | n_params u32 | param*  | n_stats u32 | stats*
//! param: name_len u16 | name | dtype u8 (0 f32, 1 f64) | ndim u8
//!        | dims u32 × ndim | data
//! stats: name_len u16 | name | channels u32 | mean f64 × c | var f64 × c
//! ```

use super::config::NetworkConfig;
use super::network::Network;
use super::params::RunningStats;
use super::{ModelError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MPIF";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlob {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub step: u64,
    pub params: Vec<ParamBlob>,
    pub stats: Vec<RunningStats>,
}

impl Checkpoint {
    /// Snapshot of a network. Parameters are stored as f64 so a reloaded
    /// network reproduces eval outputs bit for bit.
    pub fn from_network(net: &Network, step: u64) -> Self {
        Self {
            config: net.config().clone(),
            step,
            params: net
                .store
                .params()
                .iter()
                .map(|p| ParamBlob {
                    name: p.name.clone(),
                    dtype: Dtype::F64,
                    shape: p.shape.clone(),
                    data: p.data.clone(),
                })
                .collect(),
            stats: net.store.stats().to_vec(),
        }
    }

    pub fn to_network(&self) -> Result<Network> {
        Network::with_state(
            &self.config,
            self.params
                .iter()
                .map(|p| (p.name.clone(), p.shape.clone(), p.data.clone()))
                .collect(),
            self.stats
                .iter()
                .map(|s| (s.name.clone(), s.mean.clone(), s.var.clone()))
                .collect(),
        )
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| ModelError::Checkpoint(format!("name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let too_big = |what: &str| ModelError::Checkpoint(format!("{what} does not fit the format"));
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = ck.config.to_canonical_json();
    out.extend_from_slice(&u32::try_from(cfg.len()).map_err(|_| too_big("config"))?.to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&ck.step.to_le_bytes());
    out.extend_from_slice(&u32::try_from(ck.params.len()).map_err(|_| too_big("parameter count"))?.to_le_bytes());
    for p in &ck.params {
        if p.shape.iter().product::<usize>() != p.data.len() {
            return Err(ModelError::Checkpoint(format!("{}: shape {:?} vs {} values", p.name, p.shape, p.data.len())));
        }
        put_name(&mut out, &p.name)?;
        out.push(p.dtype as u8);
        out.push(u8::try_from(p.shape.len()).map_err(|_| too_big("rank"))?);
        for &d in &p.shape {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| too_big("dimension"))?.to_le_bytes());
        }
        match p.dtype {
            Dtype::F32 => p.data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            Dtype::F64 => p.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out.extend_from_slice(&u32::try_from(ck.stats.len()).map_err(|_| too_big("stats count"))?.to_le_bytes());
    for s in &ck.stats {
        if s.mean.len() != s.var.len() {
            return Err(ModelError::Checkpoint(format!("{}: mean/var length differ", s.name)));
        }
        put_name(&mut out, &s.name)?;
        out.extend_from_slice(&u32::try_from(s.mean.len()).map_err(|_| too_big("channels"))?.to_le_bytes());
        s.mean.iter().chain(&s.var).for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::Checkpoint(format!("truncated {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn arr<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.bytes(N, what)?.try_into().expect("length checked"))
    }

    fn name(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.arr("name length")?) as usize;
        let raw = self.bytes(len, "name")?;
        String::from_utf8(raw.to_vec()).map_err(|_| ModelError::Checkpoint("name is not UTF-8".into()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.bytes(n.checked_mul(8).ok_or_else(|| ModelError::Checkpoint(format!("{what} too large")))?, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r.arr::<4>("magic")? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.arr("version")?);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg_len = u32::from_le_bytes(r.arr("config length")?) as usize;
    let config: NetworkConfig = serde_json::from_slice(r.bytes(cfg_len, "config")?)
        .map_err(|e| ModelError::Checkpoint(format!("config: {e}")))?;
    config.validate()?;
    let step = u64::from_le_bytes(r.arr("step")?);

    let n_params = u32::from_le_bytes(r.arr("parameter count")?) as usize;
    let mut params = Vec::new();
    for _ in 0..n_params {
        let name = r.name()?;
        let dtype = match r.arr::<1>("dtype")?[0] {
            0 => Dtype::F32,
            1 => Dtype::F64,
            t => return Err(ModelError::Checkpoint(format!("{name}: unknown dtype {t}"))),
        };
        let ndim = r.arr::<1>("rank")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(r.arr("dimension")?) as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|n| n.checked_mul(dtype.width()).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| ModelError::Checkpoint(format!("{name}: truncated data")))?;
        let data = match dtype {
            Dtype::F64 => r.f64s(numel, "parameter data")?,
            Dtype::F32 => r
                .bytes(numel * 4, "parameter data")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        };
        params.push(ParamBlob {
            name,
            dtype,
            shape,
            data,
        });
    }

    let n_stats = u32::from_le_bytes(r.arr("stats count")?) as usize;
    let mut stats = Vec::new();
    for _ in 0..n_stats {
        let name = r.name()?;
        let c = u32::from_le_bytes(r.arr("channels")?) as usize;
        let mean = r.f64s(c, "running mean")?;
        let var = r.f64s(c, "running var")?;
        stats.push(RunningStats { name, mean, var });
    }
    if r.remaining() != 0 {
        return Err(ModelError::Checkpoint(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint {
        config,
        step,
        params,
        stats,
    })
}
