// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model parameters and the JSON model file.
//!
//! A model file is one JSON object:
//!
//! ```text
//! {"header": {<ModelConfig fields>},
//!  "tensors": [{"name": "embed", "shape": [V, d], "values": [...]}, ...]}
//! ```
//!
//! Matrices are row-major `[out, in]`. Tensor order is fixed: `embed`, then
//! for each layer `i` (0-based) `layers.i.attn_norm`, `layers.i.wq`,
//! `layers.i.wk`, `layers.i.wv`, `layers.i.wo`, `layers.i.ffn_norm`,
//! `layers.i.w_up`, `layers.i.w_down`, then `final_norm` and `unembed`.
//! Numbers use the shortest representation that parses back to the same
//! `f64`, so writing a loaded file reproduces it byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Parameters of one pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ffn_norm: Vec<f64>,
    pub w_up: Vec<f64>,
    pub w_down: Vec<f64>,
}

/// All parameters of a model together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// `[vocab, hidden]`
    pub embed: Vec<f64>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f64>,
    /// `[vocab, hidden]`
    pub unembed: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    header: ModelConfig,
    tensors: Vec<TensorEntry>,
}

impl ModelWeights {
    /// All-zero projections with unit normalization gains.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let f = config.ffn_dim;
        let v = config.vocab;
        let layer = LayerWeights {
            attn_norm: vec![1.0; d],
            wq: vec![0.0; d * d],
            wk: vec![0.0; d * d],
            wv: vec![0.0; d * d],
            wo: vec![0.0; d * d],
            ffn_norm: vec![1.0; d],
            w_up: vec![0.0; f * d],
            w_down: vec![0.0; d * f],
        };
        Ok(Self {
            embed: vec![0.0; v * d],
            layers: vec![layer; config.n_layers],
            final_norm: vec![1.0; d],
            unembed: vec![0.0; v * d],
            config,
        })
    }

    /// Tensor names, shapes and data in file order.
    fn tensors(&self) -> Vec<(String, Vec<usize>, &Vec<f64>)> {
        let d = self.config.hidden;
        let f = self.config.ffn_dim;
        let v = self.config.vocab;
        let mut out = vec![("embed".to_string(), vec![v, d], &self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), vec![d], &l.attn_norm));
            out.push((format!("layers.{i}.wq"), vec![d, d], &l.wq));
            out.push((format!("layers.{i}.wk"), vec![d, d], &l.wk));
            out.push((format!("layers.{i}.wv"), vec![d, d], &l.wv));
            out.push((format!("layers.{i}.wo"), vec![d, d], &l.wo));
            out.push((format!("layers.{i}.ffn_norm"), vec![d], &l.ffn_norm));
            out.push((format!("layers.{i}.w_up"), vec![f, d], &l.w_up));
            out.push((format!("layers.{i}.w_down"), vec![d, f], &l.w_down));
        }
        out.push(("final_norm".to_string(), vec![d], &self.final_norm));
        out.push(("unembed".to_string(), vec![v, d], &self.unembed));
        out
    }

    /// Check every tensor's shape against the config and that all values are finite.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.n_layers {
            return Err(Error::Validation(format!(
                "expected {} layers, found {}",
                self.config.n_layers,
                self.layers.len()
            )));
        }
        for (name, shape, values) in self.tensors() {
            let expected: usize = shape.iter().product();
            if values.len() != expected {
                return Err(Error::Validation(format!(
                    "tensor {name}: expected {expected} values for shape {shape:?}, found {}",
                    values.len()
                )));
            }
            if let Some(i) = values.iter().position(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "tensor {name}: non-finite value at index {i}"
                )));
            }
        }
        Ok(())
    }

    /// Canonical model-file bytes.
    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let file = ModelFile {
            header: self.config.clone(),
            tensors: self
                .tensors()
                .into_iter()
                .map(|(name, shape, values)| TensorEntry {
                    name,
                    shape,
                    values: values.clone(),
                })
                .collect(),
        };
        let mut bytes = serde_json::to_vec(&file)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let file: ModelFile = serde_json::from_slice(bytes)?;
        file.header.validate()?;
        let mut weights = Self::zeros(file.header)?;
        let mut expected = weights
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect::<Vec<_>>()
            .into_iter();
        for entry in file.tensors {
            let (name, shape) = expected.next().ok_or_else(|| {
                Error::Validation(format!("unexpected extra tensor {}", entry.name))
            })?;
            if entry.name != name {
                return Err(Error::Validation(format!(
                    "expected tensor {name}, found {}",
                    entry.name
                )));
            }
            if entry.shape != shape {
                return Err(Error::Validation(format!(
                    "tensor {name}: expected shape {shape:?}, found {:?}",
                    entry.shape
                )));
            }
            *weights.tensor_mut(&name) = entry.values;
        }
        if let Some((name, _)) = expected.next() {
            return Err(Error::Validation(format!("missing tensor {name}")));
        }
        weights.validate()?;
        Ok(weights)
    }

    fn tensor_mut(&mut self, name: &str) -> &mut Vec<f64> {
        match name {
            "embed" => &mut self.embed,
            "final_norm" => &mut self.final_norm,
            "unembed" => &mut self.unembed,
            _ => {
                let rest = name.strip_prefix("layers.").expect("known tensor name");
                let (idx, field) = rest.split_once('.').expect("known tensor name");
                let layer = &mut self.layers[idx.parse::<usize>().expect("layer index")];
                match field {
                    "attn_norm" => &mut layer.attn_norm,
                    "wq" => &mut layer.wq,
                    "wk" => &mut layer.wk,
                    "wv" => &mut layer.wv,
                    "wo" => &mut layer.wo,
                    "ffn_norm" => &mut layer.ffn_norm,
                    "w_up" => &mut layer.w_up,
                    "w_down" => &mut layer.w_down,
                    other => unreachable!("unknown layer tensor {other}"),
                }
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_slice(&bytes)
    }

    /// Hex SHA-256 of the canonical model-file bytes.
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json_bytes()?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::config::AttentionScale;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 1,
            head_dim: 2,
            hidden: 2,
            vocab: 10,
            ffn_dim: 4,
            rope_base: 10_000.0,
            seed: 0,
            attention_scale: AttentionScale::PerHead,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let mut w = ModelWeights::zeros(cfg()).unwrap();
        w.embed[3] = 0.1 + 0.2;
        w.layers[1].wq[2] = -1.0e-300;
        w.unembed[7] = std::f64::consts::PI;
        let bytes = w.to_json_bytes().unwrap();
        let back = ModelWeights::from_json_slice(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_json_bytes().unwrap(), bytes);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let w = ModelWeights::zeros(cfg()).unwrap();
        let text = String::from_utf8(w.to_json_bytes().unwrap()).unwrap();
        let broken = text.replacen("\"shape\":[10,2]", "\"shape\":[2,10]", 1);
        assert!(matches!(
            ModelWeights::from_json_slice(broken.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut w = ModelWeights::zeros(cfg()).unwrap();
        w.final_norm[0] = f64::NAN;
        assert!(w.validate().is_err());
    }
}
