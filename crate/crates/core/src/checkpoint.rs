//! `R3DCKPT1` checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    "R3DCKPT1"
//! u32      manifest length, then UTF-8 manifest (TOML, carries the model config)
//! u32      completed epochs
//! u32      parameter count
//! per parameter, in declaration order:
//!   u32 name length, name, u8 flags (bit 0 trainable, bit 1 decay),
//!   u32 rank, u64 per extent, f64 values
//! u64      optimizer step
//! per parameter: f64 first moments, f64 second moments
//! u32      CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use r3d_autodiff::Tensor;

use crate::dataset::{to_u32, Cursor};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::model::Model;
use crate::optim::AdamState;
use crate::train::TrainRun;

pub const MAGIC: &[u8; 8] = b"R3DCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Stored verbatim so a read/write cycle is byte-identical.
    pub manifest_text: String,
    pub run: TrainRun,
}

impl Checkpoint {
    pub fn new(manifest: &RunManifest, run: TrainRun) -> Result<Self> {
        if manifest.model.as_ref() != Some(&run.model.config) {
            return Err(Error::Format("checkpoint manifest must carry the model config".into()));
        }
        Ok(Self {
            manifest_text: manifest.to_toml()?,
            run,
        })
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        RunManifest::from_toml(&self.manifest_text)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&to_u32("manifest", self.manifest_text.len())?.to_le_bytes());
        out.extend_from_slice(self.manifest_text.as_bytes());
        out.extend_from_slice(&to_u32("epoch", self.run.epoch)?.to_le_bytes());
        let params = &self.run.model.params;
        out.extend_from_slice(&to_u32("params", params.len())?.to_le_bytes());
        for p in params.iter() {
            out.extend_from_slice(&to_u32("name", p.name.len())?.to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(u8::from(p.trainable) | (u8::from(p.decay) << 1));
            out.extend_from_slice(&to_u32("rank", p.value.rank())?.to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.run.opt.step.to_le_bytes());
        for (m, v) in self.run.opt.m.iter().zip(&self.run.opt.v) {
            for x in m.iter().chain(v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not an R3DCKPT1 checkpoint".into()));
        }
        let (body, footer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(footer.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut c = Cursor {
            bytes: body,
            pos: MAGIC.len(),
        };
        let n = c.u32()? as usize;
        let manifest_text = std::str::from_utf8(c.take(n)?)
            .map_err(|_| Error::Format("manifest is not UTF-8".into()))?
            .to_string();
        let manifest = RunManifest::from_toml(&manifest_text)?;
        let config = manifest
            .model
            .ok_or_else(|| Error::Format("manifest lacks a model section".into()))?;
        let mut model = Model::new(config)?;
        let epoch = c.u32()? as usize;
        let count = c.u32()? as usize;
        if count != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {count} parameters, model declares {}",
                model.params.len()
            )));
        }
        for i in 0..count {
            let len = c.u32()? as usize;
            let name = std::str::from_utf8(c.take(len)?).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let flags = c.take(1)?[0];
            let rank = c.u32()? as usize;
            let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let p = model.params.by_index_mut(i);
            if p.name != name || p.value.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {i}: found {name} {shape:?}, expected {} {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            let data = read_f64s(&mut c, p.value.numel())?;
            p.value = Tensor::new(shape, data)?;
            p.trainable = flags & 1 != 0;
            p.decay = flags & 2 != 0;
        }
        let mut opt = AdamState::new(&model.params);
        opt.step = c.u64()?;
        for i in 0..count {
            let n = model.params.by_index(i).value.numel();
            opt.m[i] = read_f64s(&mut c, n)?;
            opt.v[i] = read_f64s(&mut c, n)?;
        }
        if c.pos != body.len() {
            return Err(Error::Format(format!("{} trailing bytes", body.len() - c.pos)));
        }
        Ok(Self {
            manifest_text,
            run: TrainRun {
                model,
                opt,
                epoch,
                log: Vec::new(),
            },
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn read_f64s(c: &mut Cursor, n: usize) -> Result<Vec<f64>> {
    let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::Format("parameter too large".into()))?)?;
    Ok(raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect())
}
