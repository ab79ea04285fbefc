// SPDX-License-Identifier: MIT OR Apache-2.0

//! Greedy decoding over a laid-out prompt.

use super::hook::AttentionHook;
use super::layout::TokenLayout;
use super::math::argmax;
use super::model::{Model, StepOutput, TokenPosition};
use crate::error::{Error, Result};

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct Generation {
    pub tokens: Vec<usize>,
    /// One entry per generating position: the final prompt token followed by
    /// every generated token that was fed back. Step `t` predicts `tokens[t]`.
    pub steps: Vec<StepOutput>,
}

/// Greedy generation of up to `max_new` tokens.
///
/// `first_layer_positions` gives the layer-1 position index of every prompt
/// token; all other layers use sequential positions. Generated tokens
/// continue consecutively after the last prompt index at layer 1 and after
/// the prompt length elsewhere.
///
/// The hook (if any) sees only the generating positions: the final prompt
/// token and each generated token. Earlier prompt tokens are processed
/// without intervention. With `max_new = 0` the prompt is still processed
/// and its final step recorded, but no token is returned.
pub fn generate(
    model: &Model,
    prompt: &[usize],
    layout: &TokenLayout,
    first_layer_positions: &[usize],
    max_new: usize,
    mut hook: Option<&mut dyn AttentionHook>,
) -> Result<Generation> {
    layout.validate()?;
    if prompt.len() != layout.prompt_len() {
        return Err(Error::Input(format!(
            "prompt has {} tokens, layout declares {}",
            prompt.len(),
            layout.prompt_len()
        )));
    }
    if first_layer_positions.len() != prompt.len() {
        return Err(Error::Input(format!(
            "{} position indices for {} prompt tokens",
            first_layer_positions.len(),
            prompt.len()
        )));
    }

    let visual = layout.visual_range();
    let mut cache = model.new_cache();
    let n = prompt.len();
    for (i, (&tok, &p)) in prompt[..n - 1].iter().zip(first_layer_positions).enumerate() {
        let pos = TokenPosition {
            first_layer: p,
            other_layers: i,
        };
        model.forward_step(&mut cache, tok, pos, visual.clone(), None)?;
    }

    let next_first_layer = first_layer_positions[n - 1];
    let mut tokens = Vec::with_capacity(max_new);
    let mut steps = Vec::with_capacity(max_new.max(1));
    let mut current = prompt[n - 1];
    let mut t = 0;
    loop {
        let pos = TokenPosition {
            first_layer: next_first_layer + t,
            other_layers: n - 1 + t,
        };
        let out = model.forward_step(&mut cache, current, pos, visual.clone(), hook.as_mut().map(|h| &mut **h as &mut dyn AttentionHook))?;
        let next = argmax(&out.logits);
        steps.push(out);
        if tokens.len() >= max_new {
            break;
        }
        tokens.push(next);
        if tokens.len() == max_new {
            break;
        }
        current = next;
        t += 1;
    }
    Ok(Generation { tokens, steps })
}
