//! Checkpoint file.
//!
//! ```text
//! "SBRT" | version: u8
//! header_len: u32 | header: UTF-8 "key:value\n" lines
//! count: u32
//! per tensor:
//!   name_len: u32 | name: UTF-8 | rank: u32 | dims: u32 × rank
//!   data: f32 × product(dims)
//! ```
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SBRT";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Parameters plus free-form header metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    /// Extra header entries beyond the model config (e.g. vocabulary
    /// fingerprint, training step).
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>) -> Self {
        Self { params, meta: BTreeMap::new() }
    }
}

fn header_lines(c: &ModelConfig) -> Vec<(String, String)> {
    vec![
        ("layers".into(), c.layers.to_string()),
        ("hidden".into(), c.hidden.to_string()),
        ("heads".into(), c.heads.to_string()),
        ("vocab_size".into(), c.vocab_size.to_string()),
        ("max_len".into(), c.max_len.to_string()),
        ("dropout".into(), format!("{:?}", c.dropout)),
        ("layer_norm_eps".into(), format!("{:?}", c.layer_norm_eps)),
        ("init_std".into(), format!("{:?}", c.init_std)),
    ]
}

const CONFIG_KEYS: [&str; 8] =
    ["layers", "hidden", "heads", "vocab_size", "max_len", "dropout", "layer_norm_eps", "init_std"];

fn u32_of(v: usize) -> Result<[u8; 4]> {
    u32::try_from(v).map(u32::to_le_bytes).map_err(|_| Error::Format(format!("{v} does not fit in u32")))
}

pub fn write_checkpoint(w: &mut impl Write, ck: &Checkpoint) -> Result<()> {
    let mut header = String::new();
    for (k, v) in header_lines(&ck.params.config).into_iter().chain(ck.meta.clone()) {
        if k.contains(':') || k.contains('\n') || v.contains('\n') {
            return Err(Error::Format(format!("header entry {k:?} not representable")));
        }
        header.push_str(&format!("{k}:{v}\n"));
    }
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    w.write_all(&u32_of(header.len())?)?;
    w.write_all(header.as_bytes())?;
    let named = ck.params.weights.named();
    w.write_all(&u32_of(named.len())?)?;
    for (name, t) in named {
        w.write_all(&u32_of(name.len())?)?;
        w.write_all(name.as_bytes())?;
        w.write_all(&u32_of(t.rank())?)?;
        for &d in t.shape() {
            w.write_all(&u32_of(d)?)?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::Format(format!("checkpoint header missing {key}")))?
        .parse()
        .map_err(|_| Error::Format(format!("checkpoint header {key} unparsable")))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    if magic[4] != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", magic[4])));
    }
    let hlen = read_u32(r)?;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes)?;
    let header = String::from_utf8(hbytes).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let mut map = BTreeMap::new();
    for line in header.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once(':').ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
        map.insert(k.to_owned(), v.to_owned());
    }
    let config = ModelConfig {
        layers: parse(&map, "layers")?,
        hidden: parse(&map, "hidden")?,
        heads: parse(&map, "heads")?,
        vocab_size: parse(&map, "vocab_size")?,
        max_len: parse(&map, "max_len")?,
        dropout: parse(&map, "dropout")?,
        layer_norm_eps: parse(&map, "layer_norm_eps")?,
        init_std: parse(&map, "init_std")?,
    };
    config.validate_shapes()?;

    let count = read_u32(r)?;
    let mut tensors: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for _ in 0..count {
        let nlen = read_u32(r)?;
        let mut nb = vec![0u8; nlen];
        r.read_exact(&mut nb)?;
        let name = String::from_utf8(nb).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r)?;
        let dims = (0..rank).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.insert(name, Tensor::new(dims, data)?);
    }

    let template = ModelParams::<f32>::init_unchecked(&config, &mut crate::rng::from_seed(0));
    let mut missing = None;
    let weights = template.weights.map(|name, _| match tensors.remove(name) {
        Some(t) => t,
        None => {
            missing.get_or_insert_with(|| name.to_owned());
            Tensor::zeros(&[1])
        }
    });
    if let Some(name) = missing {
        return Err(Error::Format(format!("checkpoint lacks tensor {name}")));
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor {extra}")));
    }
    let params = ModelParams { config, weights };
    params.check_shapes()?;
    for k in CONFIG_KEYS {
        map.remove(k);
    }
    Ok(Checkpoint { params, meta: map })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ck)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
