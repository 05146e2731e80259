use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::OptimizerState;
use crate::error::{Error, Result};
use crate::hash::Fnv64;
use crate::model::{ModelConfig, ModelParams, ParamLayout};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NNPF";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// How a checkpoint's weights were initialized.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "init", rename_all = "snake_case")]
pub enum Provenance {
    Scratch,
    /// `lineage` lists every ancestor id, oldest first; its last entry is the parent.
    Pretrain { lineage: Vec<String> },
}

impl Provenance {
    pub fn parent(&self) -> Option<&str> {
        match self {
            Provenance::Scratch => None,
            Provenance::Pretrain { lineage } => lineage.last().map(String::as_str),
        }
    }

    pub fn chain_len(&self) -> usize {
        match self {
            Provenance::Scratch => 0,
            Provenance::Pretrain { lineage } => lineage.len(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Provenance::Scratch => "scratch",
            Provenance::Pretrain { .. } => "pretrain",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<OptimizerState>,
    pub history: Vec<EpochRecord>,
    pub provenance: Provenance,
    pub dataset_tag: String,
    pub seed: u64,
    /// Training clusters behind the stored weights.
    pub n_train: usize,
}

impl Checkpoint {
    /// Content hash of the weights and configuration.
    pub fn id(&self) -> String {
        let mut h = Fnv64::default();
        h.update(serde_json::to_string(&self.params.config).unwrap_or_default().as_bytes());
        h.update_f64s(&self.params.values);
        h.hex()
    }

    /// Provenance for a model initialized from this one.
    pub fn child_provenance(&self) -> Provenance {
        let mut lineage = match &self.provenance {
            Provenance::Scratch => Vec::new(),
            Provenance::Pretrain { lineage } => lineage.clone(),
        };
        lineage.push(self.id());
        Provenance::Pretrain { lineage }
    }
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    id: String,
    model: ModelConfig,
    optimizer: Option<OptimizerState>,
    history: Vec<EpochRecord>,
    provenance: Provenance,
    dataset_tag: String,
    seed: u64,
    #[serde(default)]
    n_train: usize,
}

fn put_array(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F64);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serializes to the `NNPF` binary document: magic, version, JSON metadata,
/// then named little-endian `f64` arrays.
pub fn checkpoint_to_bytes(c: &Checkpoint) -> Result<Vec<u8>> {
    let meta = Metadata {
        id: c.id(),
        model: c.params.config.clone(),
        optimizer: c.optimizer.clone(),
        history: c.history.clone(),
        provenance: c.provenance.clone(),
        dataset_tag: c.dataset_tag.clone(),
        seed: c.seed,
        n_train: c.n_train,
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(64 + json.len() + 8 * c.params.len() * 3);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);

    let layout = c.params.layout();
    let n_arrays = layout.tensors.len() + if c.optimizer.is_some() { 2 } else { 0 };
    out.extend_from_slice(&(n_arrays as u32).to_le_bytes());
    for t in &layout.tensors {
        put_array(&mut out, &format!("params/{}", t.name), &t.shape, &c.params.values[t.range()]);
    }
    if let Some(o) = &c.optimizer {
        put_array(&mut out, "adam/m", &[o.m.len()], &o.m);
        put_array(&mut out, "adam/v", &[o.v.len()], &o.v);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated file while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {n} for {what}")))
    }
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes (not an NNPF checkpoint)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version} (expected {CHECKPOINT_VERSION})")));
    }
    let meta_len = r.len("metadata length")?;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    meta.model.validate()?;

    let n_arrays = r.u32("array count")? as usize;
    let mut arrays = std::collections::BTreeMap::new();
    for _ in 0..n_arrays {
        let name_len = r.u32("array name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "array name")?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
            .to_string();
        if r.take(1, "dtype")?[0] != DTYPE_F64 {
            return Err(Error::Checkpoint(format!("array `{name}` has unsupported dtype")));
        }
        let ndim = r.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.len("dimension")?);
        }
        let count: usize = shape.iter().product();
        let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too large".into()))?, &name)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        arrays.insert(name, (shape, data));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }

    let layout = ParamLayout::new(&meta.model);
    let mut values = vec![0.0; layout.total];
    for t in &layout.tensors {
        let key = format!("params/{}", t.name);
        let (shape, data) = arrays.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing array `{key}`")))?;
        if shape != &t.shape {
            return Err(Error::Checkpoint(format!("array `{key}` has shape {shape:?}, expected {:?}", t.shape)));
        }
        values[t.range()].copy_from_slice(data);
    }
    let params = ModelParams::from_values(meta.model, values)?;
    let optimizer = match meta.optimizer {
        Some(mut o) => {
            let m = arrays.remove("adam/m").ok_or_else(|| Error::Checkpoint("missing optimizer moments".into()))?.1;
            let v = arrays.remove("adam/v").ok_or_else(|| Error::Checkpoint("missing optimizer moments".into()))?.1;
            if m.len() != params.len() || v.len() != params.len() {
                return Err(Error::Checkpoint("optimizer moment shape mismatch".into()));
            }
            o.m = m;
            o.v = v;
            Some(o)
        }
        None => None,
    };
    let c = Checkpoint {
        params,
        optimizer,
        history: meta.history,
        provenance: meta.provenance,
        dataset_tag: meta.dataset_tag,
        seed: meta.seed,
        n_train: meta.n_train,
    };
    if c.id() != meta.id {
        return Err(Error::Checkpoint(format!("content id mismatch: stored {}, computed {}", meta.id, c.id())));
    }
    Ok(c)
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, checkpoint_to_bytes(c)?)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    checkpoint_from_bytes(&buf)
}
