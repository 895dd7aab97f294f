//! Dataset ingestion and generation: extended-XYZ parsing/writing, synthetic
//! datasets labeled by exact oracle potentials, and train/val/test splitting.

pub mod extxyz;
pub mod generate;
pub mod oracles;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AtomicSystem, Mat3};

pub use extxyz::{parse_extxyz, write_extxyz};
pub use generate::{generate_lj_dataset, generate_yukawa_dataset};
pub use oracles::{lj_energy_forces, yukawa_energy_forces, OracleLabels};

/// A frame with reference labels for training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub system: AtomicSystem,
    /// Reference total energy (eV).
    pub energy: Option<f64>,
    /// Reference forces (eV/Å).
    pub forces: Option<Vec<[f64; 3]>>,
    /// Reference stress (eV/Å³).
    pub stress: Option<Mat3>,
}

impl LabeledFrame {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if let Some(e) = self.energy {
            if !e.is_finite() {
                return Err(Error::invalid("LabeledFrame", "non-finite energy"));
            }
        }
        if let Some(f) = &self.forces {
            if f.len() != self.system.len() {
                return Err(Error::invalid(
                    "LabeledFrame",
                    format!("{} forces vs {} atoms", f.len(), self.system.len()),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Ordered frames with disjoint split tags and generation provenance.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub frames: Vec<LabeledFrame>,
    pub splits: Vec<Split>,
    pub provenance: String,
}

impl Dataset {
    pub fn split(&self, which: Split) -> Vec<&LabeledFrame> {
        self.frames
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == which)
            .map(|(f, _)| f)
            .collect()
    }

    /// Deterministic 80/10/10 split by index.
    pub fn assign_splits(n: usize) -> Vec<Split> {
        (0..n)
            .map(|i| match i % 10 {
                8 => Split::Val,
                9 => Split::Test,
                _ => Split::Train,
            })
            .collect()
    }

    /// Write train/val/test extxyz files plus a key-value manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, which) in [("train", Split::Train), ("val", Split::Val), ("test", Split::Test)] {
            let frames: Vec<LabeledFrame> = self.split(which).into_iter().cloned().collect();
            let text = write_extxyz(&frames)?;
            std::fs::write(dir.join(format!("{name}.extxyz")), text)?;
        }
        let mut manifest = String::new();
        manifest.push_str(&format!("provenance = {}\n", self.provenance));
        manifest.push_str(&format!("frames = {}\n", self.frames.len()));
        for (name, which) in [("train", Split::Train), ("val", Split::Val), ("test", Split::Test)] {
            manifest.push_str(&format!("{name}_frames = {}\n", self.split(which).len()));
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let mut frames = Vec::new();
        let mut splits = Vec::new();
        for (name, which) in [("train", Split::Train), ("val", Split::Val), ("test", Split::Test)] {
            let path = dir.join(format!("{name}.extxyz"));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)?;
            for frame in parse_extxyz(&text)? {
                frames.push(frame);
                splits.push(which);
            }
        }
        if frames.is_empty() {
            return Err(Error::invalid("Dataset::load", format!("no frames under {dir:?}")));
        }
        let provenance = std::fs::read_to_string(dir.join("manifest.txt"))
            .ok()
            .and_then(|m| {
                m.lines()
                    .find(|l| l.starts_with("provenance"))
                    .map(|l| l.splitn(2, '=').nth(1).unwrap_or("").trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Ok(Dataset { frames, splits, provenance })
    }
}
