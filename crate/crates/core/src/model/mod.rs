//! The interatomic potential model: configuration, parameters, differentiable
//! graph construction, forward pass, and prediction heads.

pub mod config;
pub mod forward;
pub mod graphio;
pub mod params;


pub use config::{ForceMode, ModelConfig};
pub use forward::{
    build_model_graph, compute_stress, forward_energy, predict, predict_conservative,
    predict_direct, BuildOptions, ComponentTimes, ModelGraph, PredictionOutput,
};
pub use params::{has_direct_head, init_parameters, BoundParams};

use crate::diffcore::{Element, ParameterStore};
use crate::error::Result;
use std::path::Path;

/// Serialized alongside checkpoints so a model can be reloaded from disk.
#[derive(serde::Serialize, serde::Deserialize)]
pub struct ModelManifest {
    pub config: ModelConfig,
    pub parameter_names: Vec<String>,
}

pub fn save_model<E: Element>(
    dir: &Path,
    stem: &str,
    cfg: &ModelConfig,
    store: &ParameterStore<E>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    store.save(&dir.join(format!("{stem}.ckpt")))?;
    let manifest = ModelManifest {
        config: cfg.clone(),
        parameter_names: store.names().map(String::from).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(())
}

pub fn load_model<E: Element>(dir: &Path, stem: &str) -> Result<(ModelConfig, ParameterStore<E>)> {
    let manifest: ModelManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let store = ParameterStore::load(&dir.join(format!("{stem}.ckpt")))?;
    for name in &manifest.parameter_names {
        store.get(name)?;
    }
    Ok((manifest.config, store))
}
