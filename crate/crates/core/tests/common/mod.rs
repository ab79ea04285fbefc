// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded model sweep shared by the integration tests.

#![allow(dead_code)]

use clvs::engine::{Model, TokenLayout};
use clvs::harness::{gen_prompt, gen_weights, GenDims};

pub const LAYERS: [usize; 3] = [4, 6, 8];
pub const HEADS: [usize; 2] = [2, 4];
pub const VISUAL: [usize; 3] = [4, 9, 16];
pub const N_CASES: usize = 50;

/// Output sharpness per case, cycled so that some runs terminate early and
/// some never do.
pub const LOGIT_GAINS: [f64; 2] = [1.0, GAIN_SHARP];
pub const GAIN_SHARP: f64 = 3.0;

pub struct Case {
    pub index: usize,
    pub seed: u64,
    pub dims: GenDims,
    pub model: Model,
    pub layout: TokenLayout,
    pub prompt: Vec<usize>,
    pub max_new: usize,
}

impl Case {
    pub fn label(&self) -> String {
        format!(
            "case {} (seed {}, L={}, H={}, N_v={})",
            self.index, self.seed, self.dims.n_layers, self.dims.n_heads, self.layout.n_vis
        )
    }
}

/// Case `i` of the sweep; the grid over layers, heads and visual counts is
/// covered every 18 cases.
pub fn case(i: usize) -> Case {
    let seed = 1000 + i as u64;
    let dims = GenDims {
        n_layers: LAYERS[i % 3],
        n_heads: HEADS[(i / 3) % 2],
        head_dim: 4,
        vocab: 32,
        logit_gain: LOGIT_GAINS[(i / 18 + i) % 2],
        ..GenDims::default()
    };
    let layout = TokenLayout::new(2, VISUAL[(i / 6) % 3], 3).unwrap();
    let model = Model::new(gen_weights(seed, &dims).unwrap()).unwrap();
    let prompt = gen_prompt(seed, dims.vocab, layout.prompt_len());
    Case {
        index: i,
        seed,
        dims,
        model,
        layout,
        prompt,
        max_new: 6,
    }
}

pub fn cases() -> Vec<Case> {
    (0..N_CASES).map(case).collect()
}
