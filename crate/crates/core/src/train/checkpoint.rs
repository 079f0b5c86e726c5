use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::retrieval::RetrievalConfig;
use crate::tensor::{decode_container, encode_container, ParameterStore, Tensor};
use crate::train::{AdamState, EarlyStopping, TrainConfig};

pub const CHECKPOINT_FORMAT: &str = "insert-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub retrieval: RetrievalConfig,
    /// Content hash of the dataset the parameters were trained on.
    pub dataset_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub early_stopping: EarlyStopping,
    /// No further epochs will run: stopped early or reached `max_epochs`.
    pub finished: bool,
    /// Caller-supplied provenance, e.g. the resolved run configuration.
    pub extra: serde_json::Value,
}

/// Parameters plus everything needed to continue training.
///
/// Parameter tensors keep their store names. Optimizer moments are stored
/// as `adam.m.<name>` and `adam.v.<name>`, and the best parameters seen so
/// far (when kept) as `best.<name>`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ParameterStore,
    pub adam: Option<AdamState>,
    pub best: Option<ParameterStore>,
}

fn store_from(tensors: &[(String, Tensor)], prefix: &str) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    for (name, t) in tensors {
        if let Some(rest) = name.strip_prefix(prefix) {
            if prefix.is_empty() && (name.starts_with("adam.") || name.starts_with("best.")) {
                continue;
            }
            store.insert(rest, t.clone())?;
        }
    }
    Ok(store)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_value(&self.manifest).expect("manifest serializes");
        let mut owned: Vec<(String, &Tensor)> = Vec::new();
        for id in self.params.ids() {
            owned.push((self.params.name(id).to_string(), self.params.value(id)));
        }
        if let Some(adam) = &self.adam {
            for id in self.params.ids() {
                owned.push((format!("adam.m.{}", self.params.name(id)), &adam.m[id.index()]));
            }
            for id in self.params.ids() {
                owned.push((format!("adam.v.{}", self.params.name(id)), &adam.v[id.index()]));
            }
        }
        if let Some(best) = &self.best {
            for id in best.ids() {
                owned.push((format!("best.{}", best.name(id)), best.value(id)));
            }
        }
        let refs: Vec<(&str, &Tensor)> = owned.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        encode_container(&manifest, &refs)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let c = decode_container(bytes, path)?;
        let manifest: CheckpointManifest = serde_json::from_value(c.manifest.clone())
            .map_err(|e| Error::format(path, format!("bad checkpoint manifest: {e}")))?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::format(path, format!("unsupported format {:?}", manifest.format)));
        }
        let params = store_from(&c.tensors, "")?;
        let m = store_from(&c.tensors, "adam.m.")?;
        let v = store_from(&c.tensors, "adam.v.")?;
        let adam = if m.is_empty() {
            None
        } else {
            let ordered = |s: &ParameterStore| -> Result<Vec<Tensor>> {
                params.ids().map(|id| Ok(s.value(s.id(params.name(id))?).clone())).collect()
            };
            let state = AdamState {
                step: manifest.step,
                m: ordered(&m)?,
                v: ordered(&v)?,
            };
            if !state.matches(&params) {
                return Err(Error::format(path, "optimizer moments do not match parameters"));
            }
            Some(state)
        };
        let best = store_from(&c.tensors, "best.")?;
        let best = if best.is_empty() { None } else { Some(best) };
        Ok(Checkpoint {
            manifest,
            params,
            adam,
            best,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Fail unless the checkpoint was trained on the dataset with `hash`.
    pub fn check_dataset(&self, hash: &str) -> Result<()> {
        if self.manifest.dataset_hash != hash {
            return Err(Error::ArtifactMismatch(format!(
                "checkpoint was trained on dataset {}, got {}",
                self.manifest.dataset_hash, hash
            )));
        }
        Ok(())
    }
}
