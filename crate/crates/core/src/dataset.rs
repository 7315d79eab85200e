//! `CSI3D1` dataset files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    "CSI3D1\n"                      7 bytes
//! version  u32 = 1
//! T K U N  u32 ×4
//! seed     u64
//! record   u32 byte length + UTF-8 `key=value` lines
//! payload  N·T·K·U × (f32 re, f32 im), t-major then k then u
//! footer   u32 CRC32 of the payload bytes
//! ```
//!
//! The record holds the canonical channel config followed by the split.

use std::fs;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;

use crate::channel::{self, parse_record, ChannelConfig, CsiArray, Dims};
use crate::error::{invalid, Error, Result};

pub const MAGIC: &[u8; 7] = b"CSI3D1\n";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "csi3d";

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let all = [train, val, test];
        if all.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(invalid("split", "ratios must be finite and non-negative"));
        }
        let total: f64 = all.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("split", format!("ratios must sum to 1, got {total}")));
        }
        Ok(Self { train, val, test })
    }

    /// Ratios from integer-like weights, e.g. `9:1:2`.
    pub fn from_weights(train: f64, val: f64, test: f64) -> Result<Self> {
        let total = train + val + test;
        if !(total > 0.0) {
            return Err(invalid("split", "weights must have a positive sum"));
        }
        Self::new(train / total, val / total, 1.0 - train / total - val / total)
    }

    /// Contiguous index ranges over `n` i.i.d. samples. Train and validation
    /// counts are rounded to nearest; test takes the remainder.
    pub fn partition(&self, n: usize) -> SplitIndices {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        SplitIndices {
            train: 0..train,
            val: train..train + val,
            test: train + val..n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitIndices {
    pub fn all_train(n: usize) -> Self {
        Self {
            train: 0..n,
            val: n..n,
            test: n..n,
        }
    }

    pub fn get(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    fn to_record(&self) -> String {
        format!(
            "split.train={}..{}\nsplit.val={}..{}\nsplit.test={}..{}\n",
            self.train.start, self.train.end, self.val.start, self.val.end, self.test.start, self.test.end
        )
    }

    fn from_record(text: &str, n: usize) -> Result<Self> {
        let map = parse_record(text);
        let range = |key: &str| -> Result<Range<usize>> {
            let v = map
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("record is missing `{key}`")))?;
            let (a, b) = v
                .split_once("..")
                .ok_or_else(|| Error::Format(format!("bad range for `{key}`: {v:?}")))?;
            let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad range for `{key}`: {v:?}")));
            Ok(parse(a)?..parse(b)?)
        };
        let s = Self {
            train: range("split.train")?,
            val: range("split.val")?,
            test: range("split.test")?,
        };
        if s.train.start != 0 || s.train.end != s.val.start || s.val.end != s.test.start || s.test.end != n {
            return Err(Error::Format("split ranges do not partition the samples".into()));
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// An in-memory dataset: one channel config, its samples and their split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: ChannelConfig,
    pub split: SplitIndices,
    pub samples: Vec<CsiArray>,
}

impl Dataset {
    pub fn generate(config: &ChannelConfig, n_samples: usize, ratios: SplitRatios) -> Result<Self> {
        Ok(Self {
            config: config.clone(),
            split: ratios.partition(n_samples),
            samples: channel::generate(config, n_samples)?,
        })
    }

    pub fn dims(&self) -> Dims {
        self.config.dims()
    }

    pub fn subset(&self, split: Split) -> &[CsiArray] {
        &self.samples[self.split.get(split)]
    }

    fn record(&self) -> String {
        let mut r = self.config.to_record();
        r.push_str(&self.split.to_record());
        r
    }

    /// Serialize to the `CSI3D1` byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dims = self.dims();
        let n = self.samples.len();
        let record = self.record();
        let mut out = Vec::with_capacity(64 + record.len() + n * dims.len() * 8);
        out.extend_from_slice(MAGIC);
        for v in [VERSION, to_u32("t", dims.t)?, to_u32("k", dims.k)?, to_u32("u", dims.u)?, to_u32("n", n)?] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&to_u32("record", record.len())?.to_le_bytes());
        out.extend_from_slice(record.as_bytes());
        let payload_start = out.len();
        for s in &self.samples {
            if s.dims != dims {
                return Err(Error::Contract("sample extents differ from the dataset config".into()));
            }
            for z in &s.h {
                out.extend_from_slice(&(z.re as f32).to_le_bytes());
                out.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a CSI3D1 file (bad magic)".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported CSI3D1 version {version}")));
        }
        let (t, k, u, n) = (cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize);
        let seed = cur.u64()?;
        let rec_len = cur.u32()? as usize;
        let record = std::str::from_utf8(cur.take(rec_len)?)
            .map_err(|_| Error::Format("config record is not UTF-8".into()))?
            .to_string();
        let config = ChannelConfig::from_record(&record)?;
        if config.dims() != Dims::new(t, k, u) || config.seed != seed {
            return Err(Error::Format("header disagrees with config record".into()));
        }
        let split = SplitIndices::from_record(&record, n)?;
        let dims = Dims::new(t, k, u);
        let payload_len = n
            .checked_mul(dims.len())
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        let payload = cur.take(payload_len)?;
        let stored = cur.u32()?;
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after footer".into()));
        }
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let shared = Arc::new(config.clone());
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let samples = (0..n)
            .map(|i| {
                let h = (0..dims.len())
                    .map(|_| {
                        let re = floats.next().expect("length checked");
                        let im = floats.next().expect("length checked");
                        Complex64::new(re, im)
                    })
                    .collect();
                CsiArray {
                    dims,
                    h,
                    config: Some(Arc::clone(&shared)),
                    sample_index: i as u64,
                }
            })
            .collect();
        Ok(Self { config, split, samples })
    }

    /// Write to `path`. An existing file is only replaced when `force` is set.
    pub fn write(&self, path: &Path, force: bool) -> Result<()> {
        if path.exists() && !force {
            return Err(Error::AlreadyExists(path.to_path_buf()));
        }
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// CRC32 of a whole file, used to pin datasets in run manifests.
pub fn file_crc32(path: &Path) -> Result<u32> {
    Ok(crc32fast::hash(&fs::read(path)?))
}

pub(crate) fn to_u32(field: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| invalid(field, "does not fit in u32"))
}

pub(crate) struct Cursor<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// One entry of a dataset suite.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub n_samples: usize,
    pub channel: ChannelConfig,
}

/// Generate and write one `CSI3D1` file per entry into `dir`, named
/// `<name>.csi3d`. Nothing is written if any target exists and `force` is
/// off.
pub fn make_dataset_suite(entries: &[SuiteEntry], ratios: SplitRatios, dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = entries
        .iter()
        .map(|e| dir.join(format!("{}.{EXTENSION}", e.name)))
        .collect();
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(Error::AlreadyExists(p.clone()));
        }
    }
    fs::create_dir_all(dir)?;
    for (entry, path) in entries.iter().zip(&paths) {
        if entry.name.is_empty() || entry.name.contains(['/', '\\']) {
            return Err(invalid("name", format!("not a plain file stem: {:?}", entry.name)));
        }
        let ds = Dataset::generate(&entry.channel, entry.n_samples, ratios)?;
        ds.write(path, true)?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_split_counts() {
        let r = SplitRatios::new(0.75, 1.0 / 12.0, 2.0 / 12.0).unwrap();
        let s = r.partition(12_000);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (9000, 1000, 2000));
        let w = SplitRatios::from_weights(9.0, 1.0, 2.0).unwrap();
        assert_eq!(w.partition(12_000), s);
    }

    #[test]
    fn all_train_split() {
        let s = SplitRatios::new(1.0, 0.0, 0.0).unwrap().partition(37);
        assert_eq!(s, SplitIndices::all_train(37));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        assert!(SplitRatios::new(0.5, 0.2, 0.2).is_err());
        assert!(SplitRatios::new(1.2, -0.1, -0.1).is_err());
    }

    #[test]
    fn corrupt_payload_is_detected() {
        let ds = Dataset::generate(&ChannelConfig::example(4, 4, 2), 3, SplitRatios::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        let mut bytes = ds.to_bytes().unwrap();
        let mid = bytes.len() - 20;
        bytes[mid] ^= 0x40;
        assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::Checksum { .. })));
        assert!(matches!(Dataset::from_bytes(&bytes[..10]), Err(Error::Format(_))));
    }
}
