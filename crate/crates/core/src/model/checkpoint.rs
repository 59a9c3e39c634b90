//! Checkpoint file layout:
//!
//! ```text
//! magic "FEDFACE1"
//! u32 LE config length, config text (`key = value` lines)
//! u32 LE public tensor count, u32 LE private tensor count
//! per tensor: u16 LE name length, UTF-8 name, tensor encoding
//! ```
//!
//! Public tensors come first, in declaration order.

use std::fs;
use std::path::Path;

use super::arch::BackboneSpec;
use super::backbone::Backbone;
use super::params::{schema_diff, NamedTensors, PrivateParams, PublicParams};
use crate::error::{Error, Result};
use crate::tensor::ByteCursor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FEDFACE1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: BackboneSpec,
    pub public: PublicParams,
    pub private: Option<PrivateParams>,
}

pub(crate) fn write_named(out: &mut Vec<u8>, tensors: &NamedTensors) {
    for (name, t) in tensors.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        t.write_to(out);
    }
}

pub(crate) fn read_named(cur: &mut ByteCursor<'_>, count: usize) -> Result<NamedTensors> {
    let mut out = NamedTensors::new();
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let t = cur.tensor()?;
        out.push(name, t);
    }
    Ok(out)
}

impl Checkpoint {
    pub fn from_backbone(backbone: &Backbone) -> Self {
        Checkpoint {
            spec: backbone.spec().clone(),
            public: PublicParams(backbone.values()),
            private: None,
        }
    }

    pub fn config_text(&self) -> String {
        format!("input = {}\narch = {}\n", self.spec.input_string(), self.spec.arch_string())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = self.config_text();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        let private_count = self.private.as_ref().map_or(0, |p| p.0.len());
        out.extend_from_slice(&(self.public.0.len() as u32).to_le_bytes());
        out.extend_from_slice(&(private_count as u32).to_le_bytes());
        write_named(&mut out, &self.public.0);
        if let Some(p) = &self.private {
            write_named(&mut out, &p.0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        let magic = cur.take(CHECKPOINT_MAGIC.len())?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let clen = cur.u32()? as usize;
        let config = std::str::from_utf8(cur.take(clen)?)
            .map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
        let mut input = None;
        let mut arch = None;
        for line in config.lines().filter(|l| !l.trim().is_empty()) {
            match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                Some(("input", v)) => input = Some(v),
                Some(("arch", v)) => arch = Some(v),
                _ => return Err(Error::Format(format!("bad checkpoint config line `{line}`"))),
            }
        }
        let (Some(input), Some(arch)) = (input, arch) else {
            return Err(Error::Format("checkpoint config lacks input/arch".into()));
        };
        let spec = BackboneSpec::from_parts(input, arch)?;
        let n_pub = cur.u32()? as usize;
        let n_priv = cur.u32()? as usize;
        let public = PublicParams(read_named(&mut cur, n_pub)?);
        let private = if n_priv > 0 {
            Some(PrivateParams(read_named(&mut cur, n_priv)?))
        } else {
            None
        };
        if !cur.rest().is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", cur.rest().len())));
        }
        Ok(Checkpoint { spec, public, private })
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Rebuilds the backbone. Fails with a schema error listing each tensor
    /// that differs from what `expected` (when given) would construct.
    pub fn restore(&self, expected: Option<&BackboneSpec>) -> Result<Backbone> {
        let spec = expected.unwrap_or(&self.spec);
        let mut backbone = Backbone::new(spec, &mut crate::rng::seeded(0))?;
        let diffs = schema_diff(&backbone.values().schema(), &self.public.0.schema());
        if !diffs.is_empty() {
            return Err(Error::Schema(format!(
                "checkpoint does not match architecture `{spec}`: {}",
                diffs.join("; ")
            )));
        }
        backbone.load_values(&self.public.0)?;
        Ok(backbone)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
