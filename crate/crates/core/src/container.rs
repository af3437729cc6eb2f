//! Versioned binary container shared by network checkpoints and fitted models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "ILDNETv1"
//! version      u32       FORMAT_VERSION
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON, always carrying a "kind" field
//! block_count  u32
//! block_count times:
//!   name_len   u16
//!   name       name_len bytes of UTF-8
//!   len        u64       number of values
//!   values     len × f64
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::{Network, NetworkSpec};

pub const MAGIC: &[u8; 8] = b"ILDNETv1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Value,
    pub blocks: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn new(kind: &str, header: impl Serialize) -> Self {
        let mut value = serde_json::to_value(header).expect("header serializes");
        if !value.is_object() {
            value = serde_json::json!({ "value": value });
        }
        value["kind"] = Value::String(kind.to_string());
        Self {
            header: value,
            blocks: Vec::new(),
        }
    }

    pub fn kind(&self) -> &str {
        self.header["kind"].as_str().unwrap_or("")
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind() != kind {
            return Err(Error::Data(format!("expected a `{kind}` container, found `{}`", self.kind())));
        }
        Ok(())
    }

    /// Deserialize the header field `key`.
    pub fn field<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .header
            .get(key)
            .ok_or_else(|| Error::Data(format!("container header lacks `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Data(format!("header field `{key}`: {e}")))
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.blocks.push((name.into(), values));
    }

    pub fn block(&self, name: &str) -> Result<&[f64]> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Data(format!("container lacks block `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let payload: usize = self.blocks.iter().map(|(n, v)| 10 + n.len() + 8 * v.len()).sum();
        let mut out = Vec::with_capacity(24 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, values) in &self.blocks {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Data("not an ildnet container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported container version {version}")));
        }
        let header_len = u64::from_le_bytes(r.array()?) as usize;
        let header: Value = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::Data(format!("container header: {e}")))?;
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Data("block name is not UTF-8".into()))?
                .to_string();
            let len = u64::from_le_bytes(r.array()?) as usize;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Data("block too large".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.push((name, values));
        }
        if r.at != bytes.len() {
            return Err(Error::Data(format!("{} trailing bytes after last block", bytes.len() - r.at)));
        }
        Ok(Self { header, blocks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Data("truncated container".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

impl Network {
    /// Network spec in the header, one weight and one bias block per parametric layer.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("network", serde_json::json!({ "spec": self.spec() }));
        self.append_blocks(&mut c, "");
        c
    }

    /// Add this network's parameter blocks under `prefix`.
    pub fn append_blocks(&self, c: &mut Container, prefix: &str) {
        for (tag, p) in self.spec().tags().iter().zip(self.params()) {
            if p.weight.is_empty() {
                continue;
            }
            c.push(format!("{prefix}{tag}.weight"), p.weight.clone());
            c.push(format!("{prefix}{tag}.bias"), p.bias.clone());
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let spec: NetworkSpec = c.field("spec")?;
        Self::from_blocks(spec, c, "")
    }

    pub fn from_blocks(spec: NetworkSpec, c: &Container, prefix: &str) -> Result<Self> {
        let mut net = Network::zeros(spec)?;
        let tags = net.spec().tags();
        for (tag, p) in tags.iter().zip(net.params_mut()) {
            if p.weight.is_empty() {
                continue;
            }
            for (field, dst) in [("weight", &mut p.weight), ("bias", &mut p.bias)] {
                let src = c.block(&format!("{prefix}{tag}.{field}"))?;
                if src.len() != dst.len() {
                    return Err(Error::Data(format!(
                        "block {prefix}{tag}.{field} has {} values, expected {}",
                        src.len(),
                        dst.len()
                    )));
                }
                dst.copy_from_slice(src);
            }
        }
        Ok(net)
    }
}
