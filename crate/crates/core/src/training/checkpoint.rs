//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u32` version, little-endian `u64`
//! header length, a JSON header (labels, hyperparameters, vocabulary,
//! tensor directory, optimizer step), then every tensor as raw
//! little-endian `f64` in directory order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Hyperparams, Model};
use super::optim::{AdamState, Optimizer};
use super::trainer::Trainer;
use crate::data::{LabelInventory, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"BIFLAGCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    labels: LabelInventory,
    hyperparams: Hyperparams,
    vocab: Vocabulary,
    tensors: Vec<Entry>,
    adam_step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

const FIRST_MOMENT: &str = "adam.m:";
const SECOND_MOMENT: &str = "adam.v:";

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let model = &trainer.model;
    let mut tensors: Vec<(String, &Tensor)> = model
        .store
        .iter()
        .map(|(_, p)| (p.name.clone(), &p.value))
        .collect();
    let adam = &trainer.optimizer.adam;
    let mut moments: Vec<(&String, &Tensor)> = adam.first.iter().collect();
    moments.sort_by(|a, b| a.0.cmp(b.0));
    for (name, t) in moments {
        tensors.push((format!("{FIRST_MOMENT}{name}"), t));
        tensors.push((format!("{SECOND_MOMENT}{name}"), &adam.second[name]));
    }
    let header = Header {
        labels: model.labels.clone(),
        hyperparams: model.hp.clone(),
        vocab: model.vocab.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        adam_step: adam.step,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, t) in &tensors {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn corrupt(what: impl Into<String>) -> Error {
    Error::Checkpoint(what.into())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => corrupt(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

/// Restores a trainer (model and optimizer slots).
pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic header")?;
    if &magic != MAGIC {
        return Err(corrupt(format!("{} is not a checkpoint (bad magic header)", path.display())));
    }
    let mut word = [0u8; 4];
    read_exact(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}, expected {VERSION}")));
    }
    let mut len = [0u8; 8];
    read_exact(&mut r, &mut len, "header length")?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| corrupt("header length"))?;
    let mut json = vec![0u8; len];
    read_exact(&mut r, &mut json, "header")?;
    let mut header: Header = serde_json::from_slice(&json).map_err(|e| corrupt(format!("header: {e}")))?;
    header.vocab.reindex();

    let mut values: HashMap<String, Tensor> = HashMap::new();
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        read_exact(&mut r, &mut bytes, &entry.name)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(entry.shape.clone(), data).map_err(|e| corrupt(e.to_string()))?;
        values.insert(entry.name.clone(), t);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(corrupt("trailing bytes after the last tensor"));
    }

    let embeddings = None;
    let mut model = Model::new(header.labels, header.vocab, embeddings, header.hyperparams)?;
    let ids: Vec<_> = model.store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let t = values
            .remove(&name)
            .ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if t.shape() != model.store.get(id).shape() {
            return Err(corrupt(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                model.store.get(id).shape()
            )));
        }
        *model.store.get_mut(id) = t;
    }
    let mut adam = AdamState {
        step: header.adam_step,
        ..AdamState::default()
    };
    for (name, t) in values {
        if let Some(p) = name.strip_prefix(FIRST_MOMENT) {
            adam.first.insert(p.to_string(), t);
        } else if let Some(p) = name.strip_prefix(SECOND_MOMENT) {
            adam.second.insert(p.to_string(), t);
        } else {
            return Err(corrupt(format!("unknown tensor {name}")));
        }
    }
    let mut optimizer = Optimizer::new(model.hp.lr_flat, model.hp.lr_graph);
    optimizer.adam = adam;
    Ok(Trainer::with_optimizer(model, optimizer))
}

/// Loads a checkpoint and checks it was trained on `labels`.
pub fn load_checkpoint_for(path: &Path, labels: &LabelInventory) -> Result<Trainer> {
    let trainer = load_checkpoint(path)?;
    if &trainer.model.labels != labels {
        return Err(Error::LabelMismatch {
            expected: trainer.model.labels.names(),
            found: labels.names(),
        });
    }
    Ok(trainer)
}
