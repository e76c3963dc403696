//! LIDC checkpoint files.
//!
//! ```text
//! "LIDC"  u32 version (1)  u32 parameter count
//! per parameter: u16 name length, UTF-8 name, u8 rank, rank × u32 dims, f32 values
//! footer: u64 step, u32 snapshot length, UTF-8 `key=value` lines
//! ```
//!
//! All integers and reals are little-endian. Training state that has no
//! field of its own (rng, best validation loss) travels in the snapshot
//! under `state.*` keys.

use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{LidError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LIDC";
const VERSION: u32 = 1;
const KIND: &str = "checkpoint";

const KEY_SEED: &str = "state.rng_seed";
const KEY_WORD_POS: &str = "state.rng_word_pos";
const KEY_BEST: &str = "state.best_val_loss";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Tensor)>,
    pub step: u64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub best_val_loss: Option<f64>,
    /// Effective run configuration, `key=value` in file order.
    pub config: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        Checkpoint {
            params: store
                .iter()
                .map(|(_, p)| (p.name().to_string(), p.value().clone()))
                .collect(),
            step: 0,
            rng_seed: 0,
            rng_word_pos: 0,
            best_val_loss: None,
            config: Vec::new(),
        }
    }

    /// Copies the saved values into `store`, which must hold exactly the
    /// same parameter names and shapes.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        for (name, value) in &self.params {
            let id = store.id(name).ok_or_else(|| LidError::ParamShape {
                name: name.clone(),
                expected: vec![],
                found: value.shape().to_vec(),
            })?;
            let expected = store.value(id).shape();
            if expected != value.shape() {
                return Err(LidError::ParamShape {
                    name: name.clone(),
                    expected: expected.to_vec(),
                    found: value.shape().to_vec(),
                });
            }
        }
        if let Some((_, p)) = store
            .iter()
            .find(|(_, p)| !self.params.iter().any(|(n, _)| n == p.name()))
        {
            return Err(LidError::ParamShape {
                name: p.name().to_string(),
                expected: p.value().shape().to_vec(),
                found: vec![],
            });
        }
        for (name, value) in &self.params {
            let id = store.id(name).expect("checked above");
            *store.get_mut(id).value_mut() = value.clone();
        }
        Ok(())
    }

    /// Looks up a key of the configuration snapshot.
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, value) in &self.params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(value.rank() as u8);
            for &d in value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        let snapshot = self.snapshot_text();
        out.extend_from_slice(&(snapshot.len() as u32).to_le_bytes());
        out.extend_from_slice(snapshot.as_bytes());
        out
    }

    fn snapshot_text(&self) -> String {
        let mut text = String::new();
        for (k, v) in &self.config {
            text.push_str(&format!("{k}={v}\n"));
        }
        text.push_str(&format!("{KEY_SEED}={}\n", self.rng_seed));
        text.push_str(&format!("{KEY_WORD_POS}={}\n", self.rng_word_pos));
        if let Some(best) = self.best_val_loss {
            // `{}` on f64 prints the shortest string that parses back exactly
            text.push_str(&format!("{KEY_BEST}={best}\n"));
        }
        text
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "header")?;
        if magic != MAGIC {
            return Err(format_error("magic", format!("found {magic:?}")));
        }
        let version = r.u32("header")?;
        if version != VERSION {
            return Err(LidError::UnsupportedVersion {
                kind: KIND,
                found: version,
                expected: VERSION,
            });
        }
        let count = r.u32("header")? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for i in 0..count {
            let section = format!("parameter {i}");
            let len = r.u16(&section)? as usize;
            let name = std::str::from_utf8(r.take(len, &section)?)
                .map_err(|e| format_error(&section, format!("name is not UTF-8: {e}")))?
                .to_string();
            let section = format!("parameter `{name}`");
            let rank = r.take(1, &section)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32(&section).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if rank == 0 || n == 0 {
                return Err(format_error(&section, format!("invalid shape {shape:?}")));
            }
            let data = r
                .take(4 * n, &section)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push((name, Tensor::new(shape, data)?));
        }
        let step = u64::from_le_bytes(r.take(8, "footer")?.try_into().unwrap());
        let len = r.u32("footer")? as usize;
        let text = std::str::from_utf8(r.take(len, "footer")?)
            .map_err(|e| format_error("footer", format!("snapshot is not UTF-8: {e}")))?;
        if r.pos != bytes.len() {
            return Err(format_error("footer", format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut ckpt = Checkpoint {
            params,
            step,
            rng_seed: 0,
            rng_word_pos: 0,
            best_val_loss: None,
            config: Vec::new(),
        };
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format_error("footer", format!("snapshot line `{line}` has no `=`")))?;
            let bad = |e: &dyn std::fmt::Display| format_error("footer", format!("{k}: {e}"));
            match k {
                KEY_SEED => ckpt.rng_seed = v.parse().map_err(|e| bad(&e))?,
                KEY_WORD_POS => ckpt.rng_word_pos = v.parse().map_err(|e| bad(&e))?,
                KEY_BEST => ckpt.best_val_loss = Some(v.parse().map_err(|e| bad(&e))?),
                _ => ckpt.config.push((k.to_string(), v.to_string())),
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| LidError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| LidError::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn format_error(section: &str, detail: String) -> LidError {
    LidError::Format {
        kind: KIND,
        section: section.to_string(),
        detail,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format_error(
                section,
                format!("truncated: need {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, section: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }
}
