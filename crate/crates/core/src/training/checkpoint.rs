//! Versioned JSON checkpoints with little-endian f64 tensor blobs (base64).

use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{EpochLog, TrainConfig, STREAM_TRAIN};
use crate::error::{NrkgError, Result};
use crate::gnn::{GcnStack, PropertyDecoder};
use crate::kg::EdgeLabel;
use crate::math::{Parameter, Tensor};
use crate::model::{ModelDims, ModelParams};
use crate::projection::{NumericalProjectionLayer, SemanticDictionary};

pub const CHECKPOINT_FORMAT: &str = "nrkg-checkpoint";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A trained model plus everything needed to rebuild its training graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: ModelParams,
    pub semantic_labels: Vec<String>,
    pub relation_names: Vec<String>,
    pub target_mean: f64,
    pub target_std: f64,
    pub train_ids: Vec<String>,
    pub masked_edges: Vec<EdgeLabel>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub history: Vec<EpochLog>,
    /// Position of the training generator when training ended.
    pub rng_word_pos: u128,
}

#[derive(Serialize, Deserialize)]
struct TensorBlob {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    /// base64 of the little-endian f64 values
    data: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    dims: ModelDims,
    dictionary: SemanticDictionary,
    npl: NumericalProjectionLayer,
    gcn: GcnStack,
    decoder: PropertyDecoder,
    tensors: Vec<TensorBlob>,
}

#[derive(Serialize, Deserialize)]
struct Vocab {
    semantic: Vec<String>,
    relations: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TargetScale {
    mean: f64,
    std: f64,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: u64,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    format_version: u32,
    config: TrainConfig,
    model: ModelFile,
    vocab: Vocab,
    target: TargetScale,
    train_ids: Vec<String>,
    masked_edges: Vec<EdgeLabel>,
    best_epoch: usize,
    best_validation_loss: f64,
    history: Vec<EpochLog>,
    rng: RngState,
}

fn encode_tensor(p: &Parameter) -> TensorBlob {
    let bytes: Vec<u8> = p.value.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    TensorBlob {
        name: p.name.clone(),
        shape: p.value.shape().to_vec(),
        trainable: p.trainable,
        data: STANDARD.encode(bytes),
    }
}

fn decode_tensor(blob: TensorBlob) -> Result<Parameter> {
    let bad = |m: String| NrkgError::Checkpoint(format!("tensor {:?}: {m}", blob.name));
    let bytes = STANDARD.decode(&blob.data).map_err(|e| bad(e.to_string()))?;
    let n: usize = blob.shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(bad(format!("{} bytes for shape {:?}", bytes.len(), blob.shape)));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let value = Tensor::new(blob.shape.clone(), values).map_err(|e| bad(e.to_string()))?;
    let mut p = Parameter::new(blob.name.clone(), value);
    p.trainable = blob.trainable;
    Ok(p)
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let m = &self.model;
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            model: ModelFile {
                dims: m.dims,
                dictionary: m.dictionary,
                npl: m.npl.clone(),
                gcn: m.gcn.clone(),
                decoder: m.decoder.clone(),
                tensors: m.params.iter().map(encode_tensor).collect(),
            },
            vocab: Vocab {
                semantic: self.semantic_labels.clone(),
                relations: self.relation_names.clone(),
            },
            target: TargetScale {
                mean: self.target_mean,
                std: self.target_std,
            },
            train_ids: self.train_ids.clone(),
            masked_edges: self.masked_edges.clone(),
            best_epoch: self.best_epoch,
            best_validation_loss: self.best_validation_loss,
            history: self.history.clone(),
            rng: RngState {
                seed: self.config.seed,
                stream: STREAM_TRAIN,
                word_pos: self.rng_word_pos.to_string(),
            },
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: serde_json::Value =
            serde_json::from_str(text).map_err(|e| NrkgError::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if header.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(NrkgError::Checkpoint("not an nrkg checkpoint".into()));
        }
        let version = header.get("format_version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_FORMAT_VERSION as u64) {
            return Err(NrkgError::Checkpoint(format!(
                "format_version {version:?} unsupported, expected {CHECKPOINT_FORMAT_VERSION}"
            )));
        }
        let file: CheckpointFile =
            serde_json::from_value(header).map_err(|e| NrkgError::Checkpoint(format!("malformed checkpoint: {e}")))?;
        let params = file
            .model
            .tensors
            .into_iter()
            .map(decode_tensor)
            .collect::<Result<Vec<_>>>()?;
        let model = ModelParams {
            params,
            dictionary: file.model.dictionary,
            npl: file.model.npl,
            gcn: file.model.gcn,
            decoder: file.model.decoder,
            dims: file.model.dims,
        };
        model.check_slots().map_err(|e| NrkgError::Checkpoint(e.to_string()))?;
        Ok(Self {
            config: file.config,
            model,
            semantic_labels: file.vocab.semantic,
            relation_names: file.vocab.relations,
            target_mean: file.target.mean,
            target_std: file.target.std,
            train_ids: file.train_ids,
            masked_edges: file.masked_edges,
            best_epoch: file.best_epoch,
            best_validation_loss: file.best_validation_loss,
            history: file.history,
            rng_word_pos: file
                .rng
                .word_pos
                .parse()
                .map_err(|_| NrkgError::Checkpoint(format!("bad rng position {:?}", file.rng.word_pos)))?,
        })
    }
}

/// Writes atomically: a sibling temp file renamed over `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, ckpt.to_json().as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| NrkgError::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    std::fs::rename(&tmp, path)?;
    Ok(())
}
