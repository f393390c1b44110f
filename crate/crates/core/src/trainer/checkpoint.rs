//! Checkpoint directory: `params.bin` holds one `f64` tensor block per
//! parameter back to back; `index.json` maps parameter names to byte
//! offsets and carries the training config, epoch and best score.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::autodiff::Tensor;
use crate::data::features::{decode_f64_block, encode_f64_block};
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const PARAMS_FILE: &str = "params.bin";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub epoch: usize,
    pub best_score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    config: TrainConfig,
    epoch: usize,
    best_score: f64,
    tensors: BTreeMap<String, usize>,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bin = Vec::new();
        let mut tensors = BTreeMap::new();
        for (name, t) in self.params.named_tensors() {
            tensors.insert(name, bin.len());
            encode_f64_block(&mut bin, t.rows(), t.cols(), t.data())?;
        }
        let index = Index {
            config: self.config.clone(),
            epoch: self.epoch,
            best_score: self.best_score,
            tensors,
        };
        let bin_path = dir.join(PARAMS_FILE);
        fs::write(&bin_path, bin).map_err(|e| Error::io(&bin_path, e))?;
        let idx_path = dir.join(INDEX_FILE);
        let mut json = serde_json::to_vec_pretty(&index).map_err(|e| Error::json(&idx_path, e))?;
        json.push(b'\n');
        fs::write(&idx_path, json).map_err(|e| Error::io(&idx_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let idx_path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
        let index: Index = serde_json::from_str(&text).map_err(|e| Error::json(&idx_path, e))?;
        index.config.validate()?;
        let bin_path = dir.join(PARAMS_FILE);
        let bin = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;

        // Shapes come from the config; values are overwritten below.
        let mut params = ModelParams::init(&index.config.model, &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut loaded = Vec::new();
        for (name, t) in params.named_tensors() {
            let &offset = index.tensors.get(&name).ok_or_else(|| {
                Error::Data(format!("{}: missing tensor {name}", idx_path.display()))
            })?;
            let (rows, cols, data) = decode_f64_block(&bin, offset)?;
            if [rows, cols] != t.shape() {
                return Err(Error::Dimension {
                    op: "checkpoint tensor",
                    lhs: vec![rows, cols],
                    rhs: t.shape().to_vec(),
                });
            }
            loaded.push(Tensor::matrix(rows, cols, data)?);
        }
        if loaded.len() != index.tensors.len() {
            return Err(Error::Data(format!(
                "{}: {} tensors indexed, model expects {}",
                idx_path.display(),
                index.tensors.len(),
                loaded.len()
            )));
        }
        params.set_tensors(loaded)?;
        Ok(Self {
            config: index.config,
            params,
            epoch: index.epoch,
            best_score: index.best_score,
        })
    }
}
