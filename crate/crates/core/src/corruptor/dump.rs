//! Versioned binary dump of pre-training examples.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SBEX" | version: u8 | count: u32
//! per record:
//!   len: u32 | input_ids: u32 × len | segment_ids: u8 × len
//!   n_mlm: u32 | (position: u32, id: u32) × n_mlm
//!   n_shuffle: u32 | (position: u32, id: u32) × n_shuffle
//!   label: u8   (0 = NEXT, 1 = PREV, 2 = RAND)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::PretrainExample;
use crate::corpus::SentenceLabel;
use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 4] = b"SBEX";
pub const DUMP_VERSION: u8 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub fn write_examples(w: &mut impl Write, examples: &[PretrainExample]) -> Result<()> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&[DUMP_VERSION])?;
    put_u32(w, examples.len())?;
    for ex in examples {
        put_u32(w, ex.input_ids.len())?;
        for &id in &ex.input_ids {
            put_u32(w, id as usize)?;
        }
        w.write_all(&ex.segment_ids)?;
        for targets in [&ex.mlm_targets, &ex.shuffle_targets] {
            put_u32(w, targets.len())?;
            for (&p, &id) in targets {
                put_u32(w, p)?;
                put_u32(w, id as usize)?;
            }
        }
        w.write_all(&[ex.sentence_label.index() as u8])?;
    }
    Ok(())
}

pub fn read_examples(r: &mut impl Read) -> Result<Vec<PretrainExample>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Format("not an example dump (bad magic)".into()));
    }
    let version = get_u8(r)?;
    if version != DUMP_VERSION {
        return Err(Error::Format(format!("unsupported example dump version {version}")));
    }
    let count = get_u32(r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = get_u32(r)? as usize;
        let input_ids = (0..len).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let mut segment_ids = vec![0u8; len];
        r.read_exact(&mut segment_ids)?;
        let mut maps = [BTreeMap::new(), BTreeMap::new()];
        for m in &mut maps {
            let n = get_u32(r)?;
            for _ in 0..n {
                let p = get_u32(r)? as usize;
                m.insert(p, get_u32(r)?);
            }
        }
        let label = get_u8(r)?;
        let sentence_label = SentenceLabel::from_index(label as usize)
            .ok_or_else(|| Error::Format(format!("bad sentence label {label}")))?;
        let [mlm_targets, shuffle_targets] = maps;
        out.push(PretrainExample { input_ids, segment_ids, mlm_targets, shuffle_targets, sentence_label });
    }
    Ok(out)
}
