//! Binary score-matrix files.
//!
//! ```text
//! "CSCM" | version u32 | rows u64 | entities u64 | scale u8
//! | rows*entities f32 (row-major)
//! | rows * (direction u8, anchor u32, relation u32, gold u32)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ScaleTag, ScoreMatrix};
use crate::error::{Error, Result};
use crate::kg::{Direction, Query, QueryKey};

pub const MAGIC: &[u8; 4] = b"CSCM";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: u64 = 4 + 4 + 8 + 8 + 1;
const KEY_LEN: u64 = 1 + 4 + 4 + 4;

pub fn write_matrix<W: Write>(m: &ScoreMatrix, mut w: W) -> Result<()> {
    if let Some(pos) = m.values().iter().position(|v| !v.is_finite()) {
        let n = m.num_entities().max(1);
        return Err(Error::NonFinite(format!(
            "refusing to save score at row {}, column {}",
            pos / n,
            pos % n
        )));
    }
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(m.num_queries() as u64).to_le_bytes())?;
    w.write_all(&(m.num_entities() as u64).to_le_bytes())?;
    w.write_all(&[m.scale().to_byte()])?;
    for v in m.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    for k in m.keys() {
        w.write_all(&[k.direction.to_byte()])?;
        w.write_all(&k.anchor.to_le_bytes())?;
        w.write_all(&k.relation.to_le_bytes())?;
        w.write_all(&k.gold.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_matrix(m: &ScoreMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_matrix(m, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
}

pub fn read_matrix(bytes: &[u8]) -> Result<ScoreMatrix> {
    let actual = bytes.len() as u64;
    if actual < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let mut c = Cursor { buf: bytes, pos: 4 };
    let version = u32::from_le_bytes(c.take());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let rows = u64::from_le_bytes(c.take());
    let cols = u64::from_le_bytes(c.take());
    let scale_byte = c.take::<1>()[0];
    let scale = ScaleTag::from_byte(scale_byte)
        .ok_or_else(|| Error::Format(format!("unknown scale tag {scale_byte}")))?;

    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(rows.checked_mul(KEY_LEN)?))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("implausible dimensions {rows}x{cols}")))?;
    if expected != actual {
        return Err(Error::Truncated { expected, actual });
    }

    let (rows, cols) = (rows as usize, cols as usize);
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        values.push(f32::from_le_bytes(c.take()));
    }
    let mut keys = Vec::with_capacity(rows);
    for i in 0..rows {
        let d = c.take::<1>()[0];
        let direction =
            Direction::from_byte(d).ok_or_else(|| Error::Format(format!("row {i}: bad direction byte {d}")))?;
        keys.push(QueryKey {
            direction,
            anchor: u32::from_le_bytes(c.take()),
            relation: u32::from_le_bytes(c.take()),
            gold: u32::from_le_bytes(c.take()),
        });
    }
    ScoreMatrix::new(values, cols, keys, scale)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<ScoreMatrix> {
    read_matrix(&fs::read(path)?)
}

/// Loads a matrix and checks it against the queries it is meant to score.
pub fn load_matrix_for(path: impl AsRef<Path>, queries: &[Query], num_entities: usize) -> Result<ScoreMatrix> {
    let m = load_matrix(path)?;
    if m.num_entities() != num_entities {
        return Err(Error::Alignment(format!(
            "matrix has {} columns, graph has {num_entities} entities",
            m.num_entities()
        )));
    }
    m.check_aligned(queries)?;
    Ok(m)
}
