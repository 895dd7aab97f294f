//! Parameter initialization, naming, and tape binding.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::config::{ForceMode, ModelConfig};
use crate::diffcore::{Element, Gradients, NdArray, ParameterStore, Tape, Var};
use crate::encodings::DegreeAllocation;
use crate::error::{Error, Result};

/// Charge conditioning covers total charges in [-10, 10].
pub const CHARGE_RANGE: i32 = 10;
/// Spin conditioning covers total spins in [0, 10].
pub const SPIN_MAX: i32 = 10;

pub fn charge_index(charge: i32) -> usize {
    (charge.clamp(-CHARGE_RANGE, CHARGE_RANGE) + CHARGE_RANGE) as usize
}

pub fn spin_index(spin: i32) -> usize {
    spin.clamp(0, SPIN_MAX) as usize
}

/// Width of the concatenated edge-token input.
pub fn edge_input_width(cfg: &ModelConfig) -> usize {
    let dir = if cfg.use_direction_embeddings { cfg.edge_direction_expansion_size } else { 0 };
    3 * cfg.hidden_size + dir
}

/// Width of the concatenated node-token input.
pub fn node_input_width(cfg: &ModelConfig) -> usize {
    let dir = if cfg.use_direction_embeddings { cfg.node_direction_expansion_size } else { 0 };
    3 * cfg.hidden_size + dir
}

pub fn lae_allocation(cfg: &ModelConfig) -> Result<DegreeAllocation> {
    DegreeAllocation::equal_split(cfg.lae_max_degree, cfg.head_dim())
}

fn normal<E: Element>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> NdArray<E> {
    let n: usize = shape.iter().product();
    let dist = rand_distr::Normal::new(0.0, std).expect("valid std");
    let data = (0..n).map(|_| E::from_f64(dist.sample(rng))).collect();
    NdArray::new(shape.to_vec(), data).expect("shape/data consistent")
}

fn xavier<E: Element>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> NdArray<E> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| E::from_f64(rng.gen_range(-a..a))).collect();
    NdArray::new(vec![fan_in, fan_out], data).expect("shape/data consistent")
}

fn zeros<E: Element>(shape: &[usize]) -> NdArray<E> {
    NdArray::zeros(shape)
}

fn ones<E: Element>(shape: &[usize]) -> NdArray<E> {
    NdArray::full(shape, E::one())
}

/// Create all learnable arrays for a configuration. Deterministic per seed.
pub fn init_parameters<E: Element>(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore<E>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.hidden_size;
    let dh = cfg.head_dim();
    let mut store = ParameterStore::new();
    let mut put = |store: &mut ParameterStore<E>, name: String, arr: NdArray<E>| -> Result<()> {
        store.insert(&name, arr)
    };

    // Embedding tables (row 0 of species is padding).
    put(&mut store, "embed/species".into(), normal(&mut rng, &[cfg.max_num_elements + 1, d], 0.02))?;
    put(&mut store, "embed/charge".into(), normal(&mut rng, &[(2 * CHARGE_RANGE + 1) as usize, d], 0.02))?;
    put(&mut store, "embed/spin".into(), normal(&mut rng, &[(SPIN_MAX + 1) as usize, d], 0.02))?;
    put(&mut store, "embed/rbf_w".into(), xavier(&mut rng, cfg.edge_distance_expansion_size, d))?;
    put(&mut store, "embed/rbf_b".into(), zeros(&[d]))?;
    put(&mut store, "embed/edge_in_w".into(), xavier(&mut rng, edge_input_width(cfg), d))?;
    put(&mut store, "embed/edge_in_b".into(), zeros(&[d]))?;
    put(&mut store, "embed/node_in_w".into(), xavier(&mut rng, node_input_width(cfg), d))?;
    put(&mut store, "embed/node_in_b".into(), zeros(&[d]))?;

    for l in 0..cfg.num_layers {
        let p = format!("layer{l}");
        put(&mut store, format!("{p}/nbr/norm_gain"), ones(&[d]))?;
        for pass in ["out", "in"] {
            for h in 0..cfg.num_heads {
                put(&mut store, format!("{p}/nbr/{pass}/h{h}/wq"), xavier(&mut rng, d, dh))?;
                put(&mut store, format!("{p}/nbr/{pass}/h{h}/wk"), xavier(&mut rng, d, dh))?;
                put(&mut store, format!("{p}/nbr/{pass}/h{h}/wv"), xavier(&mut rng, d, dh))?;
            }
        }
        put(&mut store, format!("{p}/nbr/merge_w"), xavier(&mut rng, 2 * d, d))?;
        put(&mut store, format!("{p}/nbr/merge_b"), zeros(&[d]))?;
        let hidden = cfg.ffn_hidden_multiplier * d;
        put(&mut store, format!("{p}/edge_ffn/norm_gain"), ones(&[d]))?;
        put(&mut store, format!("{p}/edge_ffn/w1"), xavier(&mut rng, d, hidden))?;
        put(&mut store, format!("{p}/edge_ffn/b1"), zeros(&[hidden]))?;
        put(&mut store, format!("{p}/edge_ffn/w2"), xavier(&mut rng, hidden, d))?;
        put(&mut store, format!("{p}/edge_ffn/b2"), zeros(&[d]))?;
        if cfg.use_node_attention {
            put(&mut store, format!("{p}/node_attn/norm_gain"), ones(&[d]))?;
            for h in 0..cfg.num_heads {
                put(&mut store, format!("{p}/node_attn/h{h}/wq"), xavier(&mut rng, d, dh))?;
                put(&mut store, format!("{p}/node_attn/h{h}/wk"), xavier(&mut rng, d, dh))?;
                put(&mut store, format!("{p}/node_attn/h{h}/wv"), xavier(&mut rng, d, dh))?;
            }
            put(&mut store, format!("{p}/node_attn/out_w"), xavier(&mut rng, d, d))?;
            put(&mut store, format!("{p}/node_attn/out_b"), zeros(&[d]))?;
            if cfg.use_erope {
                // Zero init: the radial bias starts as a no-op.
                put(
                    &mut store,
                    format!("{p}/node_attn/erope_w"),
                    zeros(&[cfg.num_heads, cfg.num_frequencies]),
                )?;
            }
        }
        put(&mut store, format!("{p}/node_ffn/norm_gain"), ones(&[d]))?;
        put(&mut store, format!("{p}/node_ffn/w1"), xavier(&mut rng, d, hidden))?;
        put(&mut store, format!("{p}/node_ffn/b1"), zeros(&[hidden]))?;
        put(&mut store, format!("{p}/node_ffn/w2"), xavier(&mut rng, hidden, d))?;
        put(&mut store, format!("{p}/node_ffn/b2"), zeros(&[d]))?;
        put(&mut store, format!("{p}/concat_w"), xavier(&mut rng, 2 * d, d))?;
        put(&mut store, format!("{p}/concat_b"), zeros(&[d]))?;
    }

    // Energy head: two hidden layers.
    let oh = cfg.output_hidden_multiplier * d;
    put(&mut store, "head/norm_gain".into(), ones(&[d]))?;
    put(&mut store, "head/w1".into(), xavier(&mut rng, d, oh))?;
    put(&mut store, "head/b1".into(), zeros(&[oh]))?;
    put(&mut store, "head/w2".into(), xavier(&mut rng, oh, oh))?;
    put(&mut store, "head/b2".into(), zeros(&[oh]))?;
    put(&mut store, "head/w3".into(), xavier(&mut rng, oh, 1))?;
    put(&mut store, "head/b3".into(), zeros(&[1]))?;
    // Per-species reference energies.
    put(&mut store, "head/species_ref".into(), zeros(&[cfg.max_num_elements + 1, 1]))?;

    if cfg.force_mode == ForceMode::Direct {
        add_direct_head(cfg, &mut rng, &mut store)?;
    }
    Ok(store)
}

/// Direct-force head arrays (node vector MLP + per-edge scalar gates).
pub fn add_direct_head<E: Element>(
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
    store: &mut ParameterStore<E>,
) -> Result<()> {
    let d = cfg.hidden_size;
    let oh = cfg.output_hidden_multiplier * d;
    store.insert("force/node_w1", xavier::<E>(rng, d, oh))?;
    store.insert("force/node_b1", zeros::<E>(&[oh]))?;
    store.insert("force/node_w2", normal::<E>(rng, &[oh, 3], 0.01))?;
    store.insert("force/node_b2", zeros::<E>(&[3]))?;
    store.insert("force/edge_w1", xavier::<E>(rng, d, oh))?;
    store.insert("force/edge_b1", zeros::<E>(&[oh]))?;
    store.insert("force/edge_w2", normal::<E>(rng, &[oh, 1], 0.01))?;
    store.insert("force/edge_b2", zeros::<E>(&[1]))?;
    Ok(())
}

pub fn has_direct_head<E: Element>(store: &ParameterStore<E>) -> bool {
    store.contains("force/node_w1")
}

/// Parameters bound onto a tape as gradient-enabled leaves.
pub struct BoundParams<'t, E: Element> {
    vars: BTreeMap<String, Var<'t, E>>,
}

impl<'t, E: Element> BoundParams<'t, E> {
    pub fn bind(tape: &'t Tape<E>, store: &ParameterStore<E>) -> Self {
        let mut vars = BTreeMap::new();
        for (name, arr) in store.iter() {
            vars.insert(name.to_string(), tape.leaf(arr.clone()));
        }
        BoundParams { vars }
    }

    pub fn get(&self, name: &str) -> Result<&Var<'t, E>> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::invalid("BoundParams::get", format!("unknown parameter {name}")))
    }

    /// Pull this evaluation's parameter gradients into the store accumulators.
    pub fn accumulate_grads(&self, grads: &Gradients<E>, store: &mut ParameterStore<E>) -> Result<()> {
        for (name, var) in &self.vars {
            store.accumulate_grad(name, grads.wrt(var)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_complete() {
        let cfg = ModelConfig::toy();
        let a = init_parameters::<f64>(&cfg, 7).unwrap();
        let b = init_parameters::<f64>(&cfg, 7).unwrap();
        assert_eq!(a.len(), b.len());
        for (name, arr) in a.iter() {
            assert_eq!(arr.data(), b.get(name).unwrap().data(), "{name}");
        }
        let c = init_parameters::<f64>(&cfg, 8).unwrap();
        assert_ne!(
            a.get("embed/species").unwrap().data(),
            c.get("embed/species").unwrap().data()
        );
        // ERoPE weights start as a no-op bias.
        assert!(a.get("layer0/node_attn/erope_w").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direct_mode_adds_force_head() {
        let mut cfg = ModelConfig::toy();
        cfg.force_mode = ForceMode::Direct;
        let store = init_parameters::<f64>(&cfg, 1).unwrap();
        assert!(has_direct_head(&store));
        cfg.force_mode = ForceMode::Conservative;
        let store = init_parameters::<f64>(&cfg, 1).unwrap();
        assert!(!has_direct_head(&store));
    }

    #[test]
    fn toggles_change_parameter_set() {
        let mut cfg = ModelConfig::toy();
        cfg.use_node_attention = false;
        let off = init_parameters::<f64>(&cfg, 1).unwrap();
        assert!(!off.contains("layer0/node_attn/out_w"));
        cfg.use_node_attention = true;
        cfg.use_erope = false;
        let no_erope = init_parameters::<f64>(&cfg, 1).unwrap();
        assert!(no_erope.contains("layer0/node_attn/out_w"));
        assert!(!no_erope.contains("layer0/node_attn/erope_w"));
    }
}
