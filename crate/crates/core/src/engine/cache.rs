// SPDX-License-Identifier: MIT OR Apache-2.0

/// Per-layer key/value history of the tokens processed so far.
///
/// Keys are stored after the rotary rotation for their layer, so a cached
/// key never needs to be re-rotated.
#[derive(Debug, Clone, Default)]
pub struct KvCache {
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl KvCache {
    pub fn new(n_layers: usize) -> Self {
        Self {
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.keys.len()
    }

    /// Number of cached positions (all layers advance together).
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&mut self, layer: usize, key: Vec<f64>, value: Vec<f64>) {
        self.keys[layer].push(key);
        self.values[layer].push(value);
    }

    pub fn keys(&self, layer: usize) -> &[Vec<f64>] {
        &self.keys[layer]
    }

    pub fn values(&self, layer: usize) -> &[Vec<f64>] {
        &self.values[layer]
    }

    pub fn layer_len(&self, layer: usize) -> usize {
        self.keys[layer].len()
    }
}
