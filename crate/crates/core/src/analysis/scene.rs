// SPDX-License-Identifier: MIT OR Apache-2.0

//! Patch grids and object overlaps.
//!
//! A scene file is JSON:
//!
//! ```text
//! {"grid": {"rows": 3, "cols": 3},
//!  "objects": [{"name": "cup", "overlap": [0.0, 0.5, ...], "bbox": [x0, y0, x1, y1]}]}
//! ```
//!
//! Visual tokens are patches in row-major order. `overlap[i]` is the
//! fraction of patch `i`'s area covered by the object. `bbox`, in unit image
//! coordinates, is optional and informational.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn n_patches(&self) -> usize {
        self.rows * self.cols
    }
}

/// Fraction of each patch covered by one named object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectOverlap {
    pub name: String,
    pub overlap: Vec<f64>,
}

impl ObjectOverlap {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self
            .overlap
            .iter()
            .position(|o| !(0.0..=1.0).contains(o))
        {
            return Err(Error::Validation(format!(
                "object {:?}: overlap[{i}] = {} is outside [0, 1]",
                self.name, self.overlap[i]
            )));
        }
        Ok(())
    }

    /// Object covering exactly the listed patches.
    pub fn one_hot(name: &str, n_patches: usize, patches: &[usize]) -> Self {
        let mut overlap = vec![0.0; n_patches];
        for &p in patches {
            overlap[p] = 1.0;
        }
        Self {
            name: name.to_string(),
            overlap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub overlap: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub grid: PatchGrid,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n_patches();
        if n == 0 {
            return Err(Error::Validation("scene grid has no patches".into()));
        }
        for obj in &self.objects {
            if obj.overlap.len() != n {
                return Err(Error::Validation(format!(
                    "object {:?} has {} overlap entries, grid has {n} patches",
                    obj.name,
                    obj.overlap.len()
                )));
            }
            self.overlap(obj).validate()?;
        }
        Ok(())
    }

    fn overlap(&self, obj: &SceneObject) -> ObjectOverlap {
        ObjectOverlap {
            name: obj.name.clone(),
            overlap: obj.overlap.clone(),
        }
    }

    pub fn object(&self, name: &str) -> Option<ObjectOverlap> {
        self.objects.iter().find(|o| o.name == name).map(|o| self.overlap(o))
    }

    pub fn overlaps(&self) -> Vec<ObjectOverlap> {
        self.objects.iter().map(|o| self.overlap(o)).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let scene: Scene = serde_json::from_slice(&bytes)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_bytes()?).map_err(|e| Error::io(path, e))
    }
}

/// Per-patch area fraction covered by the box `[x0, y0, x1, y1]` in unit
/// image coordinates (x to the right, y downwards).
pub fn box_overlap(grid: PatchGrid, bbox: [f64; 4]) -> Vec<f64> {
    let [x0, y0, x1, y1] = bbox;
    let pw = 1.0 / grid.cols as f64;
    let ph = 1.0 / grid.rows as f64;
    let mut out = Vec::with_capacity(grid.n_patches());
    for r in 0..grid.rows {
        let (top, bottom) = (r as f64 * ph, (r + 1) as f64 * ph);
        let h = (bottom.min(y1) - top.max(y0)).max(0.0);
        for c in 0..grid.cols {
            let (left, right) = (c as f64 * pw, (c + 1) as f64 * pw);
            let w = (right.min(x1) - left.max(x0)).max(0.0);
            out.push(((w * h) / (pw * ph)).clamp(0.0, 1.0));
        }
    }
    out
}
