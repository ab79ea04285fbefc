// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token counts of a `[system | visual | user]` prompt plus generated tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub n_sys: usize,
    pub n_vis: usize,
    pub n_usr: usize,
    #[serde(default)]
    pub generated_so_far: usize,
}

impl TokenLayout {
    pub fn new(n_sys: usize, n_vis: usize, n_usr: usize) -> Result<Self> {
        let layout = Self {
            n_sys,
            n_vis,
            n_usr,
            generated_so_far: 0,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vis == 0 {
            return Err(Error::Config("layout needs at least one visual token".into()));
        }
        Ok(())
    }

    /// `N = N_s + N_v + N_i`.
    pub fn prompt_len(&self) -> usize {
        self.n_sys + self.n_vis + self.n_usr
    }

    /// Prompt plus generated tokens.
    pub fn total_len(&self) -> usize {
        self.prompt_len() + self.generated_so_far
    }

    /// Sequence positions occupied by visual tokens.
    pub fn visual_range(&self) -> Range<usize> {
        self.n_sys..self.n_sys + self.n_vis
    }

    /// Sequential positions `0..total_len`.
    pub fn original_positions(&self) -> Vec<usize> {
        (0..self.total_len()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_and_ranges() {
        let l = TokenLayout::new(3, 4, 2).unwrap();
        assert_eq!(l.prompt_len(), 9);
        assert_eq!(l.visual_range(), 3..7);
        assert_eq!(l.original_positions(), (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn zero_visual_tokens_rejected() {
        assert!(TokenLayout::new(1, 0, 1).is_err());
    }
}
