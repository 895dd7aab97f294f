//! Full model assembly: embeddings -> blocks (neighbor attention + edge FFN,
//! node attention + node FFN, node/neighbor concatenation) -> energy head,
//! with direct-force, conservative-force, and stress outputs.

use std::rc::Rc;
use std::time::{Duration, Instant};

use super::config::{ForceMode, ModelConfig};
use super::graphio::{build_geometry_vars, direction_expansion, GeometryVars};
use super::params::{
    charge_index, edge_input_width, has_direct_head, node_input_width, spin_index, BoundParams,
};
use crate::attention::{concat_channels, feed_forward, linear, multi_head_attention, rms_norm, MhaParams};
use crate::diffcore::{Element, NdArray, ParameterStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{build_neighbor_graph, AtomicSystem, NeighborGraph, RadialBasis};

/// Wall-clock spent in each component of a forward pass.
#[derive(Debug, Default, Clone)]
pub struct ComponentTimes {
    pub embedding: Duration,
    pub neighbor_attention: Duration,
    pub edge_ffn: Duration,
    pub node_attention: Duration,
    pub node_ffn: Duration,
}

impl ComponentTimes {
    pub fn total(&self) -> Duration {
        self.embedding
            + self.neighbor_attention
            + self.edge_ffn
            + self.node_attention
            + self.node_ffn
    }
}

/// Model outputs of one evaluation.
#[derive(Debug, Clone)]
pub struct PredictionOutput {
    /// Total energy (eV).
    pub energy: f64,
    /// Per-atom energy contributions (eV).
    pub per_atom_energies: Vec<f64>,
    /// Forces (eV/Å), direct or conservative per the config.
    pub forces: Vec<[f64; 3]>,
    /// Strain-derivative stress (eV/Å³), when requested.
    pub stress: Option<[[f64; 3]; 3]>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    pub with_direct_forces: bool,
    pub with_strain: bool,
}

/// The evaluation graph, with handles needed to extract gradients.
pub struct ModelGraph<'t, E: Element> {
    pub total_energy: Var<'t, E>,
    pub per_atom: Var<'t, E>,
    pub direct_forces: Option<Var<'t, E>>,
    pub positions: Var<'t, E>,
    pub strain: Option<Var<'t, E>>,
    pub bound: BoundParams<'t, E>,
    pub n_atoms: usize,
}

fn positions_array<E: Element>(system: &AtomicSystem) -> NdArray<E> {
    let flat: Vec<E> =
        system.positions.iter().flat_map(|p| p.iter().map(|&v| E::from_f64(v))).collect();
    NdArray::new(vec![system.len(), 3], flat).expect("positions shape")
}

/// Gather a contiguous row range of a parameter matrix.
fn rows<'t, E: Element>(w: &Var<'t, E>, start: usize, len: usize) -> Result<Var<'t, E>> {
    let idx: Vec<usize> = (start..start + len).collect();
    w.gather(Rc::new(idx))
}

fn mha_params<'t, E: Element>(
    bound: &BoundParams<'t, E>,
    prefix: &str,
    heads: usize,
) -> Result<MhaParams<'t, E>> {
    let mut wq = Vec::with_capacity(heads);
    let mut wk = Vec::with_capacity(heads);
    let mut wv = Vec::with_capacity(heads);
    for h in 0..heads {
        wq.push(bound.get(&format!("{prefix}/h{h}/wq"))?.clone());
        wk.push(bound.get(&format!("{prefix}/h{h}/wk"))?.clone());
        wv.push(bound.get(&format!("{prefix}/h{h}/wv"))?.clone());
    }
    Ok(MhaParams { wq, wk, wv })
}

struct EmbedOut<'t, E: Element> {
    edge: Var<'t, E>, // (N, T, d)
    node: Var<'t, E>, // (1, N, d)
}

fn embed_inputs<'t, E: Element>(
    tape: &'t Tape<E>,
    system: &AtomicSystem,
    cfg: &ModelConfig,
    bound: &BoundParams<'t, E>,
    geo: &GeometryVars<'t, E>,
) -> Result<EmbedOut<'t, E>> {
    let n = system.len();
    let t = geo.tokens;
    let d = cfg.hidden_size;
    for &z in &system.species {
        if z as usize > cfg.max_num_elements {
            return Err(Error::invalid(
                "embed_inputs",
                format!("species {z} outside embedding table (max {})", cfg.max_num_elements),
            ));
        }
    }
    let species_idx: Rc<Vec<usize>> = Rc::new(system.species.iter().map(|&z| z as usize).collect());
    let species_table = bound.get("embed/species")?;
    let species_emb = species_table.gather(species_idx.clone())?; // (N, d)

    // Per-token center/neighbor species rows (padded slots fall back to the
    // center; their attention weight is ~0).
    let mut tok_center = vec![0usize; n * t];
    let mut tok_neighbor = vec![0usize; n * t];
    for i in 0..n {
        for s in 0..t {
            tok_center[i * t + s] = species_idx[i];
            tok_neighbor[i * t + s] = species_idx[i];
        }
    }
    for (flat, (&tok, &nb)) in geo.real_token.iter().zip(geo.real_neighbor.iter()).enumerate() {
        let _ = flat;
        tok_neighbor[tok] = species_idx[nb];
    }
    let c_emb = species_table.gather(Rc::new(tok_center))?; // (N·T, d)
    let n_emb = species_table.gather(Rc::new(tok_neighbor))?;

    // Gaussian RBF of slot distances, scattered into the token layout; the
    // self token carries the r = 0 expansion.
    let basis = RadialBasis::uniform(cfg.edge_distance_expansion_size, cfg.r_cut)?;
    let nb_rbf = basis.len();
    let rbf_tokens = {
        let centers = tape.constant(NdArray::from_f64s(&[nb_rbf], &basis.centers)?);
        let inv = -1.0 / (2.0 * basis.width * basis.width);
        let self_rbf = basis.expand(0.0);
        if geo.n_real > 0 {
            let delta = geo.r.sub(&centers)?; // (n_real, nb_rbf)
            let real = delta.square()?.scale(inv)?.exp()?;
            let scattered = real.scatter_add(geo.real_token.clone(), n * t)?;
            let mut self_rows = vec![E::zero(); n * t * nb_rbf];
            for &tok in geo.self_token.iter() {
                for (c, &v) in self_rbf.iter().enumerate() {
                    self_rows[tok * nb_rbf + c] = E::from_f64(v);
                }
            }
            scattered.add(&tape.constant(NdArray::new(vec![n * t, nb_rbf], self_rows)?))?
        } else {
            let mut rows_host = vec![E::zero(); n * t * nb_rbf];
            for &tok in geo.self_token.iter() {
                for (c, &v) in self_rbf.iter().enumerate() {
                    rows_host[tok * nb_rbf + c] = E::from_f64(v);
                }
            }
            tape.constant(NdArray::new(vec![n * t, nb_rbf], rows_host)?)
        }
    };
    let rbf_proj = linear(&rbf_tokens, bound.get("embed/rbf_w")?, bound.get("embed/rbf_b")?)?;

    // Assemble the edge-token projection piecewise over input-row slices.
    let ew = bound.get("embed/edge_in_w")?;
    debug_assert_eq!(ew.shape()[0], edge_input_width(cfg));
    let mut edge_tok = c_emb
        .matmul(&rows(ew, 0, d)?)?
        .add(&n_emb.matmul(&rows(ew, d, d)?)?)?
        .add(&rbf_proj.matmul(&rows(ew, 2 * d, d)?)?)?;
    if cfg.use_direction_embeddings {
        let size = cfg.edge_direction_expansion_size;
        if geo.n_real > 0 {
            let dir_exp = direction_expansion(geo, size)?; // (n_real, size)
            let dir_tokens = dir_exp.scatter_add(geo.real_token.clone(), n * t)?;
            edge_tok = edge_tok.add(&dir_tokens.matmul(&rows(ew, 3 * d, size)?)?)?;
        }
    }
    let edge = edge_tok.add(bound.get("embed/edge_in_b")?)?.reshape(vec![n, t, d])?;

    // Node tokens: species + total charge/spin conditioning + aggregated
    // direction expansion.
    let nw = bound.get("embed/node_in_w")?;
    debug_assert_eq!(nw.shape()[0], node_input_width(cfg));
    let charge_emb = bound
        .get("embed/charge")?
        .gather(Rc::new(vec![charge_index(system.total_charge)]))?; // (1, d)
    let spin_emb =
        bound.get("embed/spin")?.gather(Rc::new(vec![spin_index(system.total_spin)]))?;
    let mut node_tok = species_emb
        .matmul(&rows(nw, 0, d)?)?
        .add(&charge_emb.matmul(&rows(nw, d, d)?)?)?
        .add(&spin_emb.matmul(&rows(nw, 2 * d, d)?)?)?;
    if cfg.use_direction_embeddings {
        let size = cfg.node_direction_expansion_size;
        if geo.n_real > 0 {
            let dir_exp = direction_expansion(geo, size)?;
            let weighted = dir_exp.mul(&geo.eff_weight)?;
            let agg = weighted.scatter_add(geo.real_center.clone(), n)?; // (N, size)
            node_tok = node_tok.add(&agg.matmul(&rows(nw, 3 * d, size)?)?)?;
        }
    }
    let node = node_tok.add(bound.get("embed/node_in_b")?)?.reshape(vec![1, n, d])?;
    Ok(EmbedOut { edge, node })
}

/// ERoPE logit bias matrices per head: b_h = sinc_stack @ w_h.
fn erope_bias_vars<'t, E: Element>(
    bound: &BoundParams<'t, E>,
    layer: usize,
    heads: usize,
    n: usize,
    sinc_stack: &Var<'t, E>,
) -> Result<Vec<Var<'t, E>>> {
    let w = bound.get(&format!("layer{layer}/node_attn/erope_w"))?; // (H, M)
    let m = w.shape()[1];
    let mut out = Vec::with_capacity(heads);
    for h in 0..heads {
        let wh = w.gather(Rc::new(vec![h]))?.reshape(vec![m, 1])?;
        out.push(sinc_stack.matmul(&wh)?.reshape(vec![1, n, n])?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn build_model_graph<'t, E: Element>(
    tape: &'t Tape<E>,
    system: &AtomicSystem,
    graph: &NeighborGraph,
    cfg: &ModelConfig,
    store: &ParameterStore<E>,
    opts: BuildOptions,
    mut times: Option<&mut ComponentTimes>,
) -> Result<ModelGraph<'t, E>> {
    cfg.validate()?;
    let n = system.len();
    let d = cfg.hidden_size;
    let bound = BoundParams::bind(tape, store);

    // Position leaf, optionally routed through a symmetric strain transform
    // (positions and cell both multiplied by I + ε).
    let positions = tape.leaf(positions_array::<E>(system));
    let (pos_final, cell_final, strain) = if opts.with_strain {
        if !system.is_periodic() {
            return Err(Error::invalid("build_model_graph", "strain requires a periodic system"));
        }
        let strain = tape.leaf(NdArray::zeros(&[3, 3]));
        let eye = tape.constant(NdArray::eye(3));
        let transform = strain.add(&eye)?;
        let cell = system.cell.unwrap();
        let cell_flat: Vec<f64> = cell.iter().flatten().copied().collect();
        let cell_const = tape.constant(NdArray::from_f64s(&[3, 3], &cell_flat)?);
        (
            positions.matmul(&transform)?,
            Some(cell_const.matmul(&transform)?),
            Some(strain),
        )
    } else {
        let cell_var = match (system.is_periodic(), system.cell) {
            (true, Some(cell)) => {
                let flat: Vec<f64> = cell.iter().flatten().copied().collect();
                Some(tape.constant(NdArray::from_f64s(&[3, 3], &flat)?))
            }
            _ => None,
        };
        (positions.clone(), cell_var, None)
    };

    let t0 = Instant::now();
    let need_pairs = cfg.use_node_attention && cfg.use_erope;
    let geo = build_geometry_vars(tape, system, graph, cfg, &pos_final, cell_final.as_ref(), need_pairs)?;
    let embedded = embed_inputs(tape, system, cfg, &bound, &geo)?;
    if let Some(ts) = times.as_deref_mut() {
        ts.embedding += t0.elapsed();
    }

    let mut edge = embedded.edge;
    let mut node = embedded.node;
    for l in 0..cfg.num_layers {
        let p = format!("layer{l}");
        // Neighborhood self-attention: two directional passes over the stencil.
        let t0 = Instant::now();
        let xn = rms_norm(&edge, bound.get(&format!("{p}/nbr/norm_gain"))?)?;
        let out_pass = multi_head_attention(
            &xn,
            &mha_params(&bound, &format!("{p}/nbr/out"), cfg.num_heads)?,
            Some(&geo.log_mask),
            None,
            geo.lae_out.as_ref(),
        )?;
        let in_pass = multi_head_attention(
            &xn,
            &mha_params(&bound, &format!("{p}/nbr/in"), cfg.num_heads)?,
            Some(&geo.log_mask),
            None,
            geo.lae_in.as_ref(),
        )?;
        let merged = linear(
            &concat_channels(&out_pass, &in_pass)?,
            bound.get(&format!("{p}/nbr/merge_w"))?,
            bound.get(&format!("{p}/nbr/merge_b"))?,
        )?;
        edge = edge.add(&merged)?;
        if let Some(ts) = times.as_deref_mut() {
            ts.neighbor_attention += t0.elapsed();
        }

        let t0 = Instant::now();
        let ffn_in = rms_norm(&edge, bound.get(&format!("{p}/edge_ffn/norm_gain"))?)?;
        let ffn = feed_forward(
            &ffn_in,
            bound.get(&format!("{p}/edge_ffn/w1"))?,
            bound.get(&format!("{p}/edge_ffn/b1"))?,
            bound.get(&format!("{p}/edge_ffn/w2"))?,
            bound.get(&format!("{p}/edge_ffn/b2"))?,
        )?;
        edge = edge.add(&ffn)?;
        if let Some(ts) = times.as_deref_mut() {
            ts.edge_ffn += t0.elapsed();
        }
        if !edge.value().all_finite() {
            return Err(Error::NonFinite { context: format!("layer {l} edge stream") });
        }

        // Node stream: pool the self slot, then optional all-to-all mixing.
        let t0 = Instant::now();
        let flat = edge.reshape(vec![n * geo.tokens, d])?;
        let self_feats = flat.gather(geo.self_token.clone())?.reshape(vec![1, n, d])?;
        node = node.add(&self_feats)?;
        if cfg.use_node_attention {
            let nn = rms_norm(&node, bound.get(&format!("{p}/node_attn/norm_gain"))?)?;
            let bias = match (cfg.use_erope, geo.sinc_stack.as_ref()) {
                (true, Some(stack)) => {
                    Some(erope_bias_vars(&bound, l, cfg.num_heads, n, stack)?)
                }
                _ => None,
            };
            let attn = multi_head_attention(
                &nn,
                &mha_params(&bound, &format!("{p}/node_attn"), cfg.num_heads)?,
                None,
                bias.as_deref(),
                None,
            )?;
            let projected = linear(
                &attn,
                bound.get(&format!("{p}/node_attn/out_w"))?,
                bound.get(&format!("{p}/node_attn/out_b"))?,
            )?;
            node = node.add(&projected)?;
        }
        if let Some(ts) = times.as_deref_mut() {
            ts.node_attention += t0.elapsed();
        }

        let t0 = Instant::now();
        let nf_in = rms_norm(&node, bound.get(&format!("{p}/node_ffn/norm_gain"))?)?;
        let nf = feed_forward(
            &nf_in,
            bound.get(&format!("{p}/node_ffn/w1"))?,
            bound.get(&format!("{p}/node_ffn/b1"))?,
            bound.get(&format!("{p}/node_ffn/w2"))?,
            bound.get(&format!("{p}/node_ffn/b2"))?,
        )?;
        node = node.add(&nf)?;
        if let Some(ts) = times.as_deref_mut() {
            ts.node_ffn += t0.elapsed();
        }
        if !node.value().all_finite() {
            return Err(Error::NonFinite { context: format!("layer {l} node stream") });
        }

        // Carry updated node features back onto the neighbor tokens.
        let t0 = Instant::now();
        let node_rows = node.reshape(vec![n, 1, d])?;
        let cat = concat_channels(&edge, &node_rows)?;
        let carried = linear(
            &cat,
            bound.get(&format!("{p}/concat_w"))?,
            bound.get(&format!("{p}/concat_b"))?,
        )?;
        edge = edge.add(&carried)?;
        if let Some(ts) = times.as_deref_mut() {
            ts.edge_ffn += t0.elapsed();
        }
    }

    // Energy head: 2-hidden-layer MLP on final node features + per-species
    // reference energies; per-atom scalars summed to the total.
    let hn = rms_norm(&node, bound.get("head/norm_gain")?)?;
    let h1 = linear(&hn, bound.get("head/w1")?, bound.get("head/b1")?)?.gelu()?;
    let h2 = linear(&h1, bound.get("head/w2")?, bound.get("head/b2")?)?.gelu()?;
    let e = linear(&h2, bound.get("head/w3")?, bound.get("head/b3")?)?.reshape(vec![n, 1])?;
    let species_idx: Rc<Vec<usize>> = Rc::new(system.species.iter().map(|&z| z as usize).collect());
    let refs = bound.get("head/species_ref")?.gather(species_idx)?;
    let per_atom = e.add(&refs)?;
    let total_energy = per_atom.sum_all()?;
    if !total_energy.value().all_finite() {
        return Err(Error::NonFinite { context: "energy head".into() });
    }

    // Direct-force heads: node vector MLP + gated edge directions.
    let direct_forces = if opts.with_direct_forces {
        if !has_direct_head(store) {
            return Err(Error::invalid("build_model_graph", "direct force head not present"));
        }
        let nf = node.reshape(vec![n, d])?;
        let h = linear(&nf, bound.get("force/node_w1")?, bound.get("force/node_b1")?)?.gelu()?;
        let node_part = linear(&h, bound.get("force/node_w2")?, bound.get("force/node_b2")?)?;
        let total = if geo.n_real > 0 {
            let ef = edge
                .reshape(vec![n * geo.tokens, d])?
                .gather(geo.real_token.clone())?;
            let g =
                linear(&ef, bound.get("force/edge_w1")?, bound.get("force/edge_b1")?)?.gelu()?;
            let gate = linear(&g, bound.get("force/edge_w2")?, bound.get("force/edge_b2")?)?;
            let contrib = geo.dirs.mul(&gate)?.mul(&geo.eff_weight)?;
            let edge_part = contrib.scatter_add(geo.real_center.clone(), n)?;
            node_part.add(&edge_part)?
        } else {
            node_part
        };
        Some(total)
    } else {
        None
    };

    Ok(ModelGraph {
        total_energy,
        per_atom,
        direct_forces,
        positions,
        strain,
        bound,
        n_atoms: n,
    })
}

#[cfg(test)]
pub(crate) fn test_embed<'t, E: Element>(
    tape: &'t Tape<E>,
    system: &AtomicSystem,
    cfg: &ModelConfig,
    bound: &BoundParams<'t, E>,
    geo: &GeometryVars<'t, E>,
) -> Result<Var<'t, E>> {
    embed_inputs(tape, system, cfg, bound, geo).map(|e| e.edge)
}

/// Total energy and per-atom contributions (no gradients).
pub fn forward_energy<E: Element>(
    system: &AtomicSystem,
    cfg: &ModelConfig,
    store: &ParameterStore<E>,
) -> Result<(f64, Vec<f64>)> {
    let graph = build_neighbor_graph(system, cfg.k, cfg.r_cut, cfg.knn)?;
    let tape = Tape::<E>::inference();
    let g = build_model_graph(&tape, system, &graph, cfg, store, BuildOptions::default(), None)?;
    Ok((
        g.total_energy.value().scalar_value()?.as_f64(),
        g.per_atom.value().data().iter().map(|v| v.as_f64()).collect(),
    ))
}

/// Energy + direct forces from the dedicated heads (inference mode).
pub fn predict_direct<E: Element>(
    system: &AtomicSystem,
    cfg: &ModelConfig,
    store: &ParameterStore<E>,
) -> Result<PredictionOutput> {
    let graph = build_neighbor_graph(system, cfg.k, cfg.r_cut, cfg.knn)?;
    let tape = Tape::<E>::inference();
    let opts = BuildOptions { with_direct_forces: true, with_strain: false };
    let g = build_model_graph(&tape, system, &graph, cfg, store, opts, None)?;
    let fvals = g.direct_forces.as_ref().expect("requested direct forces").value();
    let forces = fvals.data().chunks(3).map(|c| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()]).collect();
    Ok(PredictionOutput {
        energy: g.total_energy.value().scalar_value()?.as_f64(),
        per_atom_energies: g.per_atom.value().data().iter().map(|v| v.as_f64()).collect(),
        forces,
        stress: None,
    })
}

/// Energy + forces as exact reverse-mode gradients, F = -dE/dx. Gradient
/// flows through the soft-kNN weights, envelope, RBF, directions, and codes.
pub fn predict_conservative<E: Element>(
    system: &AtomicSystem,
    cfg: &ModelConfig,
    store: &ParameterStore<E>,
) -> Result<PredictionOutput> {
    let graph = build_neighbor_graph(system, cfg.k, cfg.r_cut, cfg.knn)?;
    let tape = Tape::<E>::new();
    let g = build_model_graph(&tape, system, &graph, cfg, store, BuildOptions::default(), None)?;
    let grads = g.total_energy.backward()?;
    let dpos = grads.wrt(&g.positions)?;
    let forces = dpos
        .data()
        .chunks(3)
        .map(|c| [-c[0].as_f64(), -c[1].as_f64(), -c[2].as_f64()])
        .collect();
    Ok(PredictionOutput {
        energy: g.total_energy.value().scalar_value()?.as_f64(),
        per_atom_energies: g.per_atom.value().data().iter().map(|v| v.as_f64()).collect(),
        forces,
        stress: None,
    })
}

/// Stress as the volume-normalized symmetric strain derivative (1/V)·dE/dε.
pub fn compute_stress<E: Element>(
    system: &AtomicSystem,
    cfg: &ModelConfig,
    store: &ParameterStore<E>,
) -> Result<[[f64; 3]; 3]> {
    if !system.is_periodic() {
        return Err(Error::invalid("compute_stress", "stress requires a periodic system"));
    }
    if cfg.force_mode != ForceMode::Conservative {
        return Err(Error::invalid("compute_stress", "stress requires conservative mode"));
    }
    let graph = build_neighbor_graph(system, cfg.k, cfg.r_cut, cfg.knn)?;
    let tape = Tape::<E>::new();
    let opts = BuildOptions { with_direct_forces: false, with_strain: true };
    let g = build_model_graph(&tape, system, &graph, cfg, store, opts, None)?;
    let grads = g.total_energy.backward()?;
    let de = grads.wrt(g.strain.as_ref().expect("strain leaf present"))?;
    let v = system.volume()?;
    let d = de.data();
    let mut stress = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            stress[a][b] = 0.5 * (d[a * 3 + b].as_f64() + d[b * 3 + a].as_f64()) / v;
        }
    }
    Ok(stress)
}

/// Dispatch on the configured force mode.
pub fn predict<E: Element>(
    system: &AtomicSystem,
    cfg: &ModelConfig,
    store: &ParameterStore<E>,
) -> Result<PredictionOutput> {
    match cfg.force_mode {
        ForceMode::Direct => predict_direct(system, cfg, store),
        ForceMode::Conservative => predict_conservative(system, cfg, store),
    }
}
