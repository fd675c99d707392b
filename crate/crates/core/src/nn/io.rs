use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{n_params_for, Activation, InputNorm, MlpModel};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u8 = 1;

const MAGIC: &[u8; 4] = b"PNNM";

/// Where a model came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    /// SHA-256 (hex) of the canonical run configuration.
    pub config_hash: String,
    pub component: String,
    pub seeds: BTreeMap<String, u64>,
    pub epochs_run: usize,
}

impl Provenance {
    pub fn hash_config(text: &str) -> String {
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Layout: magic, version, activation, layer count, widths (u32),
/// parameters, normalization `lo` and `width`, seed, provenance JSON,
/// SHA-256 of everything before it. Integers and floats little-endian.
pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.push(MODEL_FORMAT_VERSION);
    b.push(match model.activation() {
        Activation::Tanh => 0,
        Activation::Identity => 1,
    });
    b.extend_from_slice(&(model.dims().len() as u32).to_le_bytes());
    for &d in model.dims() {
        b.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in model.params().iter().chain(&model.norm().lo).chain(&model.norm().width) {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&model.seed().to_le_bytes());
    let prov = serde_json::to_vec(&model.provenance).map_err(|e| Error::io(path, e.into()))?;
    b.extend_from_slice(&(prov.len() as u32).to_le_bytes());
    b.extend_from_slice(&prov);
    let digest = Sha256::digest(&b);
    b.extend_from_slice(&digest);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, b).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::FormatVersionMismatch(format!(
                "{}: truncated model file",
                self.path.display()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::FormatVersionMismatch(format!("{}: {msg}", path.display()));
    if bytes.len() < 4 + 2 + 32 || &bytes[..4] != MAGIC {
        return Err(bad("not a PNNM model file".into()));
    }
    if bytes[4] != MODEL_FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::ChecksumMismatch(path.to_path_buf()));
    }
    let activation = match body[5] {
        0 => Activation::Tanh,
        1 => Activation::Identity,
        other => return Err(bad(format!("unknown activation code {other}"))),
    };
    let mut r = Reader { buf: body, pos: 6, path };
    let n_layers = r.u32()?;
    if !(2..=1024).contains(&n_layers) {
        return Err(bad(format!("implausible layer count {n_layers}")));
    }
    let dims = (0..n_layers).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let params = r.f64s(n_params_for(&dims))?;
    let lo = r.f64s(dims[0])?;
    let width = r.f64s(dims[0])?;
    let seed = r.u64()?;
    let prov_len = r.u32()?;
    let provenance: Provenance = serde_json::from_slice(r.take(prov_len)?)
        .map_err(|e| bad(format!("provenance: {e}")))?;
    if r.pos != body.len() {
        return Err(bad("layer widths do not match the stored parameters".into()));
    }
    let norm = InputNorm::new(lo, width).map_err(|e| bad(e.to_string()))?;
    MlpModel::from_parts(dims, &params, activation, norm, seed, provenance).map_err(|e| bad(e.to_string()))
}
