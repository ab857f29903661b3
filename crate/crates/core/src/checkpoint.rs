//! `BATCKPT1` checkpoint files.
//!
//! ```text
//! magic    8 bytes  "BATCKPT1"
//! count    u64
//! entry*   u32 name length, UTF-8 name, u8 dtype (0 = f64), u32 rank, u64 dims…
//! data     f64 values of every entry, in manifest order
//! ```
//!
//! All integers and floats are little-endian. The model configuration is
//! stored as small `config.*` tensors next to the parameters.

use std::fs;
use std::path::Path;

use crate::adapter::{AdapterConfig, AdapterPlan, Stage, Variant};
use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::tracker::{HeadConfig, Model, ModelConfig};

pub const MAGIC: &[u8; 8] = b"BATCKPT1";
const DTYPE_F64: u8 = 0;

/// Serializes named tensors in the given order.
pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let entries: Vec<(&str, &Tensor)> = entries.into_iter().collect();
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, t) in &entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in &entries {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            reason: reason.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos..self.pos.saturating_add(n)) {
            Some(s) => {
                self.pos += n;
                Ok(s)
            }
            None => self.fail(format!("truncated {what}")),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses a checkpoint into an ordered store (all tensors frozen).
pub fn decode(bytes: &[u8], path: &Path) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8, "magic")? != MAGIC {
        r.pos = 0;
        return r.fail("bad magic, expected BATCKPT1");
    }
    let count = r.u64("entry count")?;
    let mut manifest = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = match std::str::from_utf8(r.take(len, "name")?) {
            Ok(s) => s.to_string(),
            Err(_) => {
                r.pos = at;
                return r.fail("entry name is not UTF-8");
            }
        };
        let dtype = r.take(1, "dtype")?[0];
        if dtype != DTYPE_F64 {
            r.pos -= 1;
            return r.fail(format!("unsupported dtype code {dtype}"));
        }
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(r.u64("dimension")? as usize);
        }
        manifest.push((name, dims));
    }
    let mut store = ParamStore::new();
    for (name, dims) in manifest {
        let n: usize = dims.iter().product();
        let raw = r.take(n.saturating_mul(8), &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.insert(name, Tensor::new(dims, data)?)?;
    }
    if r.pos != bytes.len() {
        return r.fail("trailing bytes after tensor data");
    }
    Ok(store)
}

fn vector(values: &[f64]) -> Tensor {
    Tensor::new([values.len()], values.to_vec()).expect("vector")
}

fn config_tensors(cfg: &ModelConfig) -> Vec<(&'static str, Tensor)> {
    let b = &cfg.backbone;
    let a = &cfg.adapter;
    let p = &cfg.plan;
    vec![
        (
            "config.backbone",
            vector(&[
                b.image_size_template as f64,
                b.image_size_search as f64,
                b.patch_size as f64,
                b.d_t as f64,
                b.num_layers as f64,
                b.num_heads as f64,
                b.mlp_ratio as f64,
                b.channels as f64,
                b.ln_eps,
            ]),
        ),
        (
            "config.adapter",
            vector(&[a.d_t as f64, a.d_e as f64, f64::from(u8::from(a.include_bias))]),
        ),
        (
            "config.plan",
            vector(&[f64::from(p.variant.code()), p.num_layers as f64]),
        ),
        (
            "config.plan.layers",
            vector(&p.layers.iter().map(|&l| l as f64).collect::<Vec<_>>()),
        ),
        (
            "config.plan.stages",
            vector(
                &p.stages
                    .iter()
                    .map(|s| match s {
                        Stage::Attention => 0.0,
                        Stage::Mlp => 1.0,
                    })
                    .collect::<Vec<_>>(),
            ),
        ),
        ("config.head", vector(&[cfg.head.hidden as f64])),
        ("config.crop", vector(&[cfg.template_factor, cfg.search_factor])),
    ]
}

fn read_vector<'a>(store: &'a ParamStore, name: &str, len: Option<usize>) -> Result<&'a [f64]> {
    let t = store
        .get(name)
        .map_err(|_| Error::Config(format!("checkpoint lacks `{name}`")))?;
    if t.rank() != 1 || len.is_some_and(|n| n != t.numel()) {
        return Err(Error::Config(format!(
            "checkpoint entry `{name}` has shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data())
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("checkpoint {what} {v} is not a count")))
    }
}

fn config_from(store: &ParamStore) -> Result<ModelConfig> {
    let b = read_vector(store, "config.backbone", Some(9))?;
    let n = |i: usize, what| as_count(b[i], what);
    let backbone = BackboneConfig {
        image_size_template: n(0, "template size")?,
        image_size_search: n(1, "search size")?,
        patch_size: n(2, "patch size")?,
        d_t: n(3, "d_t")?,
        num_layers: n(4, "layer count")?,
        num_heads: n(5, "head count")?,
        mlp_ratio: n(6, "mlp ratio")?,
        channels: n(7, "channels")?,
        ln_eps: b[8],
    };
    let a = read_vector(store, "config.adapter", Some(3))?;
    let adapter = AdapterConfig {
        d_t: as_count(a[0], "adapter d_t")?,
        d_e: as_count(a[1], "d_e")?,
        include_bias: a[2] != 0.0,
    };
    let p = read_vector(store, "config.plan", Some(2))?;
    let variant = Variant::from_code(as_count(p[0], "variant")? as u32)?;
    let layers = read_vector(store, "config.plan.layers", None)?
        .iter()
        .map(|&l| as_count(l, "adapter layer"))
        .collect::<Result<Vec<_>>>()?;
    let stages = read_vector(store, "config.plan.stages", None)?
        .iter()
        .map(|&s| match s {
            0.0 => Ok(Stage::Attention),
            1.0 => Ok(Stage::Mlp),
            _ => Err(Error::Config(format!("unknown stage code {s}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let plan = AdapterPlan::new(variant, layers, &stages, as_count(p[1], "plan depth")?)?;
    let h = read_vector(store, "config.head", Some(1))?;
    let c = read_vector(store, "config.crop", Some(2))?;
    let cfg = ModelConfig {
        backbone,
        adapter,
        plan,
        head: HeadConfig {
            hidden: as_count(h[0], "head width")?,
        },
        template_factor: c[0],
        search_factor: c[1],
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let cfg = config_tensors(&model.cfg);
    encode(cfg.iter().map(|(n, t)| (*n, t)).chain(model.params.iter()))
}

/// Bytes of the backbone tensors alone, in store order.
pub fn encode_backbone(model: &Model) -> Vec<u8> {
    encode(model.params.iter().filter(|(n, _)| n.starts_with("backbone.")))
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<Model> {
    let store = decode(bytes, path)?;
    let cfg = config_from(&store)?;
    // Start from a fresh model so names and shapes are checked against the
    // configuration, then copy every stored tensor over it.
    let mut model = Model::init(cfg, 0)?;
    let mut seen = 0;
    for (name, t) in store.iter() {
        if name.starts_with("config.") {
            continue;
        }
        let slot = model
            .params
            .get_mut(name)
            .map_err(|_| Error::Config(format!("checkpoint entry `{name}` is not part of the model")))?;
        if slot.shape() != t.shape() {
            return Err(Error::Config(format!(
                "checkpoint entry `{name}` has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        slot.data_mut().copy_from_slice(t.data());
        seen += 1;
    }
    if seen != model.params.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {seen} of the model's {} tensors",
            model.params.len()
        )));
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}
