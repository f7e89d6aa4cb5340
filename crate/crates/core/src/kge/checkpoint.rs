//! Model checkpoints.
//!
//! ```text
//! "CKGE" | version u32 | architecture u8 | dim u32 | |E| u64 | |R| u64
//! | entity block f32[|E| * dim] | relation block f32[|R| * width]
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Architecture, KgeModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CKGE";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 8 + 8;

pub fn write_model<W: Write>(m: &KgeModel, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[m.architecture().tag()])?;
    w.write_all(&(m.dim() as u32).to_le_bytes())?;
    w.write_all(&(m.num_entities() as u64).to_le_bytes())?;
    w.write_all(&(m.num_relations() as u64).to_le_bytes())?;
    for v in m.entity_embeddings().iter().chain(m.relation_parameters()) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_model(m: &KgeModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_model(m, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_model(bytes: &[u8]) -> Result<KgeModel> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let arch = Architecture::from_tag(bytes[8])
        .ok_or_else(|| Error::Format(format!("unknown architecture tag {}", bytes[8])))?;
    let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let ne = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    let nr = u64::from_le_bytes(bytes[21..29].try_into().unwrap()) as usize;
    let n_ent = ne * dim;
    let n_rel = nr * arch.relation_width(dim);
    let expected = HEADER_LEN + 4 * (n_ent + n_rel);
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    let floats: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (entity, relation) = floats.split_at(n_ent);
    KgeModel::from_parts(arch, dim, ne, nr, entity.to_vec(), relation.to_vec())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KgeModel> {
    read_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kge::tests::random_model;

    #[test]
    fn bit_exact_round_trip_all_architectures() {
        for arch in Architecture::ALL {
            let m = random_model(arch, 4, 7, 3, 11);
            let mut buf = Vec::new();
            write_model(&m, &mut buf).unwrap();
            let back = read_model(&buf).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let m = random_model(Architecture::TransE, 2, 3, 1, 0);
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        assert!(matches!(read_model(&buf[..buf.len() - 1]), Err(Error::Truncated { .. })));
    }
}
