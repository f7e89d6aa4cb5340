//! TSV dataset directories: `entities.tsv`, `relations.tsv` and one triple
//! file per split.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{KnowledgeGraph, Split, Triple};
use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        msg: msg.into(),
    }
}

fn split_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.tsv", split.name()))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let dir = dir.as_ref();

    let ent_path = dir.join("entities.tsv");
    let mut entities = Vec::new();
    let mut meta = Vec::new();
    for (i, line) in read(&ent_path)?.lines().enumerate() {
        let (label, desc) = match line.split_once('\t') {
            Some((l, d)) => (l, Some(d.to_string())),
            None => (line, None),
        };
        if label.is_empty() {
            return Err(parse_error(&ent_path, i, "empty entity label"));
        }
        entities.push(label.to_string());
        meta.push(desc);
    }

    let rel_path = dir.join("relations.tsv");
    let mut relations = Vec::new();
    for (i, line) in read(&rel_path)?.lines().enumerate() {
        if line.is_empty() || line.contains('\t') {
            return Err(parse_error(&rel_path, i, "expected a single relation label"));
        }
        relations.push(line.to_string());
    }

    let ent_ids: HashMap<&str, u32> = entities
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i as u32))
        .collect();
    let rel_ids: HashMap<&str, u32> = relations
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i as u32))
        .collect();

    let mut splits: Vec<Vec<Triple>> = Vec::with_capacity(3);
    for split in Split::ALL {
        let path = split_file(dir, split);
        let mut triples = Vec::new();
        for (i, line) in read(&path)?.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_error(
                    &path,
                    i,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            }
            let entity = |label: &str| {
                ent_ids.get(label).copied().ok_or_else(|| {
                    Error::Validation(format!(
                        "{}:{}: unknown entity `{label}`",
                        path.display(),
                        i + 1
                    ))
                })
            };
            let relation = rel_ids.get(fields[1]).copied().ok_or_else(|| {
                Error::Validation(format!(
                    "{}:{}: unknown relation `{}`",
                    path.display(),
                    i + 1,
                    fields[1]
                ))
            })?;
            triples.push(Triple::new(entity(fields[0])?, relation, entity(fields[2])?));
        }
        splits.push(triples);
    }
    let test = splits.pop().unwrap_or_default();
    let dev = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    KnowledgeGraph::new(entities, meta, relations, train, dev, test)
}

pub fn save_dataset(kg: &KnowledgeGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut w = BufWriter::new(fs::File::create(dir.join("entities.tsv"))?);
    for (id, label) in kg.entity_labels().iter().enumerate() {
        match kg.entity_description(id as u32) {
            Some(d) => writeln!(w, "{label}\t{d}")?,
            None => writeln!(w, "{label}")?,
        }
    }
    w.flush()?;

    let mut w = BufWriter::new(fs::File::create(dir.join("relations.tsv"))?);
    for label in kg.relation_labels() {
        writeln!(w, "{label}")?;
    }
    w.flush()?;

    for split in Split::ALL {
        let mut w = BufWriter::new(fs::File::create(split_file(dir, split))?);
        for t in kg.split(split) {
            writeln!(
                w,
                "{}\t{}\t{}",
                kg.entity_label(t.head),
                kg.relation_label(t.relation),
                kg.entity_label(t.tail)
            )?;
        }
        w.flush()?;
    }
    Ok(())
}
