//! `.cxmp` model checkpoints.
//!
//! Layout (little-endian): `CXMP`, u16 version, u32 input_dim, u32
//! hidden_dim, f64 dropout, u64 seed, u8 layout (0 direct, 1 projected) and
//! for projected models u32 wsi_dim, u8 modality count followed by
//! u16-length-prefixed UTF-8 names, then every parameter tensor in
//! [`RiskNet::tensors`] order as f64.

use std::fs;
use std::path::Path;

use super::{InputLayout, MlpConfig, MlpParams, NnError, Result, RiskNet};
use crate::fusion::CtProjection;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CXMP";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: MlpConfig,
    /// Modalities whose embeddings are concatenated, in order, to form the input.
    pub modalities: Vec<String>,
    pub net: RiskNet,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(ckpt.config.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(ckpt.config.hidden_dim as u32).to_le_bytes());
    buf.extend_from_slice(&ckpt.config.dropout.to_le_bytes());
    buf.extend_from_slice(&ckpt.config.seed.to_le_bytes());
    match ckpt.net.layout() {
        InputLayout::Direct => buf.push(0),
        InputLayout::ProjectCt { wsi_dim } => {
            buf.push(1);
            buf.extend_from_slice(&(wsi_dim as u32).to_le_bytes());
        }
    }
    buf.push(ckpt.modalities.len() as u8);
    for m in &ckpt.modalities {
        buf.extend_from_slice(&(m.len() as u16).to_le_bytes());
        buf.extend_from_slice(m.as_bytes());
    }
    for (_, t) in ckpt.net.tensors() {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(NnError::BadCheckpoint(format!("truncated at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(NnError::BadCheckpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(NnError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let config = MlpConfig {
        input_dim: r.u32()?,
        hidden_dim: r.u32()?,
        dropout: r.f64()?,
        seed: r.u64()?,
    };
    let layout = match r.u8()? {
        0 => InputLayout::Direct,
        1 => InputLayout::ProjectCt { wsi_dim: r.u32()? },
        other => return Err(NnError::BadCheckpoint(format!("unknown layout tag {other}"))),
    };
    let n_mod = r.u8()?;
    let mut modalities = Vec::with_capacity(n_mod as usize);
    for _ in 0..n_mod {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
        modalities.push(name.to_string());
    }

    let (input, hidden) = (config.input_dim, config.hidden_dim);
    let mut net = match layout {
        InputLayout::Direct => RiskNet::from_mlp(MlpParams::zeros(input, hidden)),
        InputLayout::ProjectCt { wsi_dim } => {
            if wsi_dim == 0 || wsi_dim >= input {
                return Err(NnError::BadCheckpoint(format!("wsi_dim {wsi_dim} invalid for input {input}")));
            }
            RiskNet {
                projection: Some(CtProjection::zeros(wsi_dim, input - wsi_dim)),
                mlp: MlpParams::zeros(2 * wsi_dim, hidden),
            }
        }
    };
    for (_, t) in net.tensors_mut() {
        for v in t.iter_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(NnError::BadCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { config, modalities, net })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(layout: InputLayout) -> Checkpoint {
        let config = MlpConfig {
            input_dim: 6,
            hidden_dim: 33,
            dropout: 0.25,
            seed: 77,
        };
        let modalities = match layout {
            InputLayout::Direct => vec!["wsi".to_string()],
            InputLayout::ProjectCt { .. } => vec!["wsi".to_string(), "ct".to_string()],
        };
        let mut net = RiskNet::init(&config, layout).unwrap();
        net.mlp.b2 = -0.125;
        Checkpoint { config, modalities, net }
    }

    #[test]
    fn round_trips_both_layouts() {
        for layout in [InputLayout::Direct, InputLayout::ProjectCt { wsi_dim: 4 }] {
            let c = ckpt(layout);
            let bytes = encode_checkpoint(&c);
            assert_eq!(&bytes[..4], b"CXMP");
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(encode_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&ckpt(InputLayout::Direct));
        let mut bad = bytes.clone();
        bad[1] = b'Y';
        assert!(decode_checkpoint(&bad).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
    }
}
