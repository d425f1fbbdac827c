//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic    8 bytes  "ICRLCKPT"
//! version  u32      1
//! arch     7 x u32  vocab d_model n_heads n_layers d_ff context max_rel
//! n        u64      parameter count
//! values   n x f64
//! state    u8       0, or 1 followed by the training state:
//!            next_stage u64, global_step u64, adam_t u64,
//!            adam_m n x f64, adam_v n x f64, reference n x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ArchSpec, PolicyParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ICRLCKPT";
const VERSION: u32 = 1;

/// Optimizer and schedule position needed to resume a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub next_stage: u64,
    pub global_step: u64,
    pub adam_t: u64,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub reference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub state: Option<TrainState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let a = &p.arch;
        let mut out = Vec::with_capacity(64 + 8 * 4 * p.values.len());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        for v in [a.vocab, a.d_model, a.n_heads, a.n_layers, a.d_ff, a.context, a.max_rel] {
            put_u32(&mut out, v as u32);
        }
        put_u64(&mut out, p.values.len() as u64);
        put_f64s(&mut out, &p.values);
        match &self.state {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                put_u64(&mut out, s.next_stage);
                put_u64(&mut out, s.global_step);
                put_u64(&mut out, s.adam_t);
                put_f64s(&mut out, &s.adam_m);
                put_f64s(&mut out, &s.adam_v);
                put_f64s(&mut out, &s.reference);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 7];
        for d in dims.iter_mut() {
            *d = r.u32()? as usize;
        }
        let arch = ArchSpec {
            vocab: dims[0],
            d_model: dims[1],
            n_heads: dims[2],
            n_layers: dims[3],
            d_ff: dims[4],
            context: dims[5],
            max_rel: dims[6],
        };
        arch.validate()
            .map_err(|e| Error::Checkpoint(format!("invalid architecture header: {e}")))?;
        let n = r.u64()? as usize;
        if n != arch.n_params() {
            return Err(Error::Checkpoint(format!(
                "parameter count {n} does not match architecture ({})",
                arch.n_params()
            )));
        }
        let values = r.f64s(n)?;
        let state = match r.take(1)?[0] {
            0 => None,
            1 => Some(TrainState {
                next_stage: r.u64()?,
                global_step: r.u64()?,
                adam_t: r.u64()?,
                adam_m: r.f64s(n)?,
                adam_v: r.f64s(n)?,
                reference: r.f64s(n)?,
            }),
            other => return Err(Error::Checkpoint(format!("bad state flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            params: PolicyParams { arch, values },
            state,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Checkpoint::from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_arch;
    use super::*;

    #[test]
    fn round_trip_with_and_without_state() {
        let params = PolicyParams::init(tiny_arch(), 2, 0.3).unwrap();
        let plain = Checkpoint {
            params: params.clone(),
            state: None,
        };
        assert_eq!(Checkpoint::from_bytes(&plain.to_bytes()).unwrap(), plain);

        let n = params.values.len();
        let full = Checkpoint {
            params,
            state: Some(TrainState {
                next_stage: 1,
                global_step: 7,
                adam_t: 7,
                adam_m: vec![0.5; n],
                adam_v: vec![0.25; n],
                reference: vec![-1.0; n],
            }),
        };
        assert_eq!(Checkpoint::from_bytes(&full.to_bytes()).unwrap(), full);
    }

    #[test]
    fn header_layout() {
        let params = PolicyParams::zeros(tiny_arch()).unwrap();
        let bytes = Checkpoint { params, state: None }.to_bytes();
        assert_eq!(&bytes[..8], b"ICRLCKPT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 12);
    }

    #[test]
    fn rejects_corruption() {
        let params = PolicyParams::zeros(tiny_arch()).unwrap();
        let mut bytes = Checkpoint { params, state: None }.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
