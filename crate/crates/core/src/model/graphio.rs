//! Differentiable geometry: rebuilds every position-dependent quantity of a
//! neighbor graph (distances, directions, envelope, soft-kNN weights, angular
//! codes, pairwise distances) on the gradient tape, so the energy is an exact
//! differentiable function of atom positions and strain.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::config::ModelConfig;
use super::params::lae_allocation;
use crate::attention::{log_mask_from_weights, LaeModulation};
use crate::diffcore::{Element, NdArray, Tape, Var};
use crate::encodings::{self, DegreeAllocation, FrequencyBank};
use crate::error::{Error, Result};
use crate::geometry::{envelope_poly, AtomicSystem, NeighborGraph};
use crate::geometry::softknn::FULL_SELECT_MARGIN;

/// Everything the model reads about one frame's geometry, as tape variables.
pub struct GeometryVars<'t, E: Element> {
    pub n_atoms: usize,
    /// Neighbor slots per stencil (excluding the self token).
    pub width: usize,
    /// Tokens per stencil: self + width.
    pub tokens: usize,
    pub n_real: usize,
    /// (n_real, 1) distances of real slots, slot-major order.
    pub r: Var<'t, E>,
    /// (n_real, 3) unit directions center -> neighbor.
    pub dirs: Var<'t, E>,
    /// (n_real, 1) soft-kNN weight × envelope.
    pub eff_weight: Var<'t, E>,
    /// (N, 1, T) additive attention log-mask (self slot weight 1).
    pub log_mask: Var<'t, E>,
    /// Flat token index of each real slot (atom-major; slot s -> token s+1).
    pub real_token: Rc<Vec<usize>>,
    /// Center atom of each real slot.
    pub real_center: Rc<Vec<usize>>,
    /// Neighbor atom of each real slot.
    pub real_neighbor: Rc<Vec<usize>>,
    /// Flat token index of each atom's self slot.
    pub self_token: Rc<Vec<usize>>,
    /// LAE modulation codes (N·T, d_hr) for the out/in directional passes.
    pub lae_out: Option<LaeModulation<'t, E>>,
    pub lae_in: Option<LaeModulation<'t, E>>,
    /// Stacked sinc features (N·N, M) for the radial node-attention bias.
    pub sinc_stack: Option<Var<'t, E>>,
}

fn constant_idx(v: Vec<usize>) -> Rc<Vec<usize>> {
    Rc::new(v)
}

/// Column j of an (R, 3) array as (R, 1), via a constant selector.
fn column<'t, E: Element>(x: &Var<'t, E>, j: usize) -> Result<Var<'t, E>> {
    let mut sel = vec![E::zero(); 3];
    sel[j] = E::one();
    let s = x.tape().constant(NdArray::new(vec![3, 1], sel)?);
    x.matmul(&s)
}

/// Assemble columns (each (R,1)) into an (R, width) matrix, entry i in
/// column positions[i].
fn assemble_columns<'t, E: Element>(
    cols: &[(usize, Var<'t, E>)],
    width: usize,
) -> Result<Var<'t, E>> {
    let mut acc: Option<Var<'t, E>> = None;
    for (pos, c) in cols {
        let mut row = vec![E::zero(); width];
        row[*pos] = E::one();
        let p = c.tape().constant(NdArray::new(vec![1, width], row)?);
        let placed = c.matmul(&p)?;
        acc = Some(match acc {
            Some(a) => a.add(&placed)?,
            None => placed,
        });
    }
    acc.ok_or_else(|| Error::invalid("assemble_columns", "no columns"))
}

/// In-graph soft-kNN weights over real slots, grouped by candidate count so
/// the soft-sort runs batched per group. Mirrors
/// [`crate::geometry::softknn::soft_knn_weights`].
fn in_graph_soft_weights<'t, E: Element>(
    tape: &'t Tape<E>,
    r: &Var<'t, E>, // (n_real, 1)
    graph: &NeighborGraph,
) -> Result<Var<'t, E>> {
    let k = graph.k;
    let t = graph.config.lse_scale;
    let sig = graph.config.sigmoid_scale;
    let n_real = r.shape()[0];
    // slot base offset of each atom in the flat real-slot order
    let mut base = vec![0usize; graph.n_atoms];
    let mut off = 0;
    for i in 0..graph.n_atoms {
        base[i] = off;
        off += graph.count[i];
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..graph.n_atoms {
        if graph.count[i] > 0 {
            groups.entry(graph.count[i]).or_default().push(i);
        }
    }
    let mut acc: Option<Var<'t, E>> = None;
    for (&n, atoms) in &groups {
        let g = atoms.len();
        let mut idx = Vec::with_capacity(g * n);
        for &a in atoms {
            for s in 0..n {
                idx.push(base[a] + s);
            }
        }
        let idx = constant_idx(idx);
        let rg = r.gather(idx.clone())?.reshape(vec![g, n])?;
        // Smoothed |r_i - r_j| via LSE: t·ln(e^{x/t} + e^{-x/t}).
        let diff = rg.reshape(vec![g, n, 1])?.sub(&rg.reshape(vec![g, 1, n])?)?;
        let scaled = diff.scale(1.0 / t)?;
        let sm_abs = scaled.exp()?.add(&scaled.neg()?.exp()?)?.log()?.scale(t)?;
        let pairsum = sm_abs.sum_axis(2)?; // (g, n)
        let stat = |m: usize| -> Result<Var<'t, E>> {
            let coeff = (n as f64) + 1.0 - 2.0 * (m as f64);
            let scores = rg.scale(-coeff)?.sub(&pairsum)?.scale(1.0 / t)?;
            let p = scores.softmax()?;
            p.mul(&rg)?.sum_axis(1)?.reshape(vec![g, 1])
        };
        let tau = if n <= k {
            stat(n)?.add_scalar(FULL_SELECT_MARGIN * sig)?
        } else {
            stat(k)?.add(&stat(k + 1)?)?.scale(0.5)?
        };
        let w = tau.sub(&rg)?.scale(1.0 / sig)?.sigmoid()?; // (g, n)
        let flat = w.reshape(vec![g * n, 1])?;
        let scattered = flat.scatter_add(idx, n_real)?;
        acc = Some(match acc {
            Some(a) => a.add(&scattered)?,
            None => scattered,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => Ok(tape.constant(NdArray::zeros(&[n_real, 1]))),
    }
}

/// Flattened spherical-harmonic components (R, (L+1)^2) for unit directions
/// given as (R,1) columns.
fn sh_matrix<'t, E: Element>(
    x: &Var<'t, E>,
    y: &Var<'t, E>,
    z: &Var<'t, E>,
    max_degree: usize,
) -> Result<Var<'t, E>> {
    let blocks = encodings::sh_blocks_generic(max_degree, x, y, z);
    let width = (max_degree + 1) * (max_degree + 1);
    let mut cols = Vec::with_capacity(width);
    let mut pos = 0;
    for block in blocks {
        for comp in block {
            cols.push((pos, comp));
            pos += 1;
        }
    }
    assemble_columns(&cols, width)
}

/// Constant duplication matrix ((L+1)^2, d_hr) mapping distinct components to
/// the repeated-block code layout.
fn duplication_matrix<'t, E: Element>(
    tape: &'t Tape<E>,
    alloc: &DegreeAllocation,
) -> Result<Var<'t, E>> {
    let n_sh = (alloc.max_degree + 1) * (alloc.max_degree + 1);
    let mut data = vec![E::zero(); n_sh * alloc.expanded_dim];
    let mut slot = 0;
    for (l, &reps) in alloc.repeats.iter().enumerate() {
        let block_start = l * l; // Σ_{ℓ'<ℓ} (2ℓ'+1)
        for _ in 0..reps {
            for m in 0..(2 * l + 1) {
                data[(block_start + m) * alloc.expanded_dim + slot] = E::one();
                slot += 1;
            }
        }
    }
    Ok(tape.constant(NdArray::new(vec![n_sh, alloc.expanded_dim], data)?))
}

/// Scatter real-slot code rows into the (N·T, d_hr) token layout and add the
/// constant self-token code rows.
fn token_codes<'t, E: Element>(
    tape: &'t Tape<E>,
    real_codes: &Var<'t, E>,
    geo_tokens: usize,
    n_atoms: usize,
    real_token: &Rc<Vec<usize>>,
    self_token: &[usize],
    alloc: &DegreeAllocation,
) -> Result<Var<'t, E>> {
    let total = n_atoms * geo_tokens;
    let scattered = real_codes.scatter_add(real_token.clone(), total)?;
    let self_code = encodings::self_token_lae_code(alloc);
    let mut base = vec![E::zero(); total * alloc.expanded_dim];
    for &t in self_token {
        for (c, &v) in self_code.iter().enumerate() {
            base[t * alloc.expanded_dim + c] = E::from_f64(v);
        }
    }
    let base = tape.constant(NdArray::new(vec![total, alloc.expanded_dim], base)?);
    scattered.add(&base)
}

#[allow(clippy::too_many_arguments)]
pub fn build_geometry_vars<'t, E: Element>(
    tape: &'t Tape<E>,
    system: &AtomicSystem,
    graph: &NeighborGraph,
    cfg: &ModelConfig,
    positions: &Var<'t, E>,       // (N, 3), possibly strained
    cell: Option<&Var<'t, E>>,    // (3, 3), possibly strained
    need_pair_matrix: bool,
) -> Result<GeometryVars<'t, E>> {
    let n = graph.n_atoms;
    let width = graph.width;
    let tokens = width + 1;
    let mut real_center = Vec::new();
    let mut real_neighbor = Vec::new();
    let mut real_token = Vec::new();
    let mut real_shift = Vec::new();
    for i in 0..n {
        for s in 0..graph.count[i] {
            let ix = i * width + s;
            real_center.push(i);
            real_neighbor.push(graph.neighbor[ix]);
            real_token.push(i * tokens + 1 + s);
            real_shift.push(graph.shift[ix]);
        }
    }
    let n_real = real_center.len();
    let self_token: Vec<usize> = (0..n).map(|i| i * tokens).collect();
    let real_center = constant_idx(real_center);
    let real_neighbor = constant_idx(real_neighbor);
    let real_token = constant_idx(real_token);
    let self_token_rc = constant_idx(self_token.clone());

    if n_real == 0 {
        // Frame with no interactions: mask keeps only self tokens.
        let mut mask_w = vec![E::zero(); n * tokens];
        for &t in &self_token {
            mask_w[t] = E::one();
        }
        let wvar = tape.constant(NdArray::new(vec![n, 1, tokens], mask_w)?);
        let log_mask = log_mask_from_weights(&wvar)?;
        let zero1 = tape.constant(NdArray::zeros(&[0, 1]));
        let zero3 = tape.constant(NdArray::zeros(&[0, 3]));
        return Ok(GeometryVars {
            n_atoms: n,
            width,
            tokens,
            n_real: 0,
            r: zero1.clone(),
            dirs: zero3,
            eff_weight: zero1,
            log_mask,
            real_token,
            real_center,
            real_neighbor,
            self_token: self_token_rc,
            lae_out: None,
            lae_in: None,
            sinc_stack: None,
        });
    }

    let pi = positions.gather(real_center.clone())?;
    let pj = positions.gather(real_neighbor.clone())?;
    let mut disp = pj.sub(&pi)?;
    if let Some(cell_var) = cell {
        let shifts: Vec<E> = real_shift
            .iter()
            .flat_map(|s| s.iter().map(|&v| E::from_f64(v as f64)))
            .collect();
        let shift_mat = tape.constant(NdArray::new(vec![n_real, 3], shifts)?);
        disp = disp.add(&shift_mat.matmul(cell_var)?)?;
    }
    let r2 = disp.square()?.sum_axis(1)?.reshape(vec![n_real, 1])?;
    let r = r2.sqrt()?;
    let dirs = disp.mul(&r2.rsqrt()?)?;

    let envelope = envelope_poly(&r.scale(1.0 / cfg.r_cut)?);
    let weight = if graph.config.soft {
        in_graph_soft_weights(tape, &r, graph)?
    } else {
        let w: Vec<E> = {
            let mut v = Vec::with_capacity(n_real);
            for i in 0..n {
                for s in 0..graph.count[i] {
                    v.push(E::from_f64(graph.weight[i * width + s]));
                }
            }
            v
        };
        tape.constant(NdArray::new(vec![n_real, 1], w)?)
    };
    let eff_weight = weight.mul(&envelope)?;

    // Attention log-mask: self slot weight 1, real slots w·u, padding 0.
    let mut self_ones = vec![E::zero(); n * tokens];
    for &t in &self_token {
        self_ones[t] = E::one();
    }
    let base = tape.constant(NdArray::new(vec![n * tokens, 1], self_ones)?);
    let mask_w = eff_weight.scatter_add(real_token.clone(), n * tokens)?.add(&base)?;
    let log_mask = log_mask_from_weights(&mask_w)?.reshape(vec![n, 1, tokens])?;

    // LAE codes for both directional passes.
    let (lae_out, lae_in) = if cfg.use_lae {
        let alloc = lae_allocation(cfg)?;
        let x = column(&dirs, 0)?;
        let y = column(&dirs, 1)?;
        let z = column(&dirs, 2)?;
        let dup = duplication_matrix(tape, &alloc)?;
        let make = |sh: Var<'t, E>| -> Result<LaeModulation<'t, E>> {
            let real_codes = sh.matmul(&dup)?;
            let codes =
                token_codes(tape, &real_codes, tokens, n, &real_token, &self_token, &alloc)?
                    .reshape(vec![n, tokens, alloc.expanded_dim])?;
            Ok(LaeModulation {
                expand: LaeModulation::expansion_matrix(&alloc, &codes),
                codes,
            })
        };
        let sh_out = sh_matrix(&x, &y, &z, alloc.max_degree)?;
        let sh_in = sh_matrix(&x.neg()?, &y.neg()?, &z.neg()?, alloc.max_degree)?;
        (Some(make(sh_out)?), Some(make(sh_in)?))
    } else {
        (None, None)
    };

    // Pairwise distances -> stacked sinc features for the radial bias.
    let sinc_stack = if need_pair_matrix {
        Some(build_sinc_stack(tape, system, cfg, positions, cell)?)
    } else {
        None
    };

    Ok(GeometryVars {
        n_atoms: n,
        width,
        tokens,
        n_real,
        r,
        dirs,
        eff_weight,
        log_mask,
        real_token,
        real_center,
        real_neighbor,
        self_token: self_token_rc,
        lae_out,
        lae_in,
        sinc_stack,
    })
}

/// (N·N, M) matrix of sinc(ω_k r_ij) with exact 1 on the diagonal. Periodic
/// systems use fixed minimum-image shifts (chosen host-side, differentiable
/// through the chosen image's displacement).
fn build_sinc_stack<'t, E: Element>(
    tape: &'t Tape<E>,
    system: &AtomicSystem,
    cfg: &ModelConfig,
    positions: &Var<'t, E>,
    cell: Option<&Var<'t, E>>,
) -> Result<Var<'t, E>> {
    let n = system.len();
    let bank = FrequencyBank::default_bank(cfg.num_frequencies)?;
    let diff = positions.reshape(vec![n, 1, 3])?.sub(&positions.reshape(vec![1, n, 3])?)?;
    // diff[i][j] = x_i - x_j; add minimum-image shifts for periodic frames.
    let diff = if system.is_periodic() {
        let cell_var = cell.ok_or_else(|| Error::invalid("sinc_stack", "periodic frame needs a cell var"))?;
        let mut shifts = vec![E::zero(); n * n * 3];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                // displacement j->i image shift: x_i - (x_j + s·H) minimized
                let (_, s) = crate::geometry::minimum_image_displacement(system, j, i)?;
                for d in 0..3 {
                    shifts[(i * n + j) * 3 + d] = E::from_f64(s[d] as f64);
                }
            }
        }
        let smat = tape.constant(NdArray::new(vec![n * n, 3], shifts)?);
        let offsets = smat.matmul(cell_var)?.reshape(vec![n, n, 3])?;
        diff.add(&offsets)?
    } else {
        diff
    };
    let r2 = diff.square()?.sum_axis(2)?.reshape(vec![n * n, 1])?;
    let eye: Vec<E> =
        (0..n * n).map(|ix| if ix / n == ix % n { E::one() } else { E::zero() }).collect();
    let eye = tape.constant(NdArray::new(vec![n * n, 1], eye)?);
    let off_diag = eye.neg()?.add_scalar(1.0)?;
    // Diagonal r would be 0; bias it to 1 under the sqrt, then overwrite the
    // sinc diagonal with the exact limit value 1.
    let r_safe = r2.add(&eye)?.sqrt()?;
    let mut cols = Vec::with_capacity(bank.len());
    for (kf, &omega) in bank.frequencies.iter().enumerate() {
        let x = r_safe.scale(omega)?;
        let s = x.sin()?.div(&x)?;
        let fixed = s.mul(&off_diag)?.add(&eye)?;
        cols.push((kf, fixed));
    }
    let mut acc: Option<Var<'t, E>> = None;
    let m = bank.len();
    for (pos, c) in cols {
        let mut row = vec![E::zero(); m];
        row[pos] = E::one();
        let p = tape.constant(NdArray::new(vec![1, m], row)?);
        let placed = c.matmul(&p)?;
        acc = Some(match acc {
            Some(a) => a.add(&placed)?,
            None => placed,
        });
    }
    Ok(acc.expect("at least one frequency"))
}

/// Truncated spherical-harmonic expansion of the real-slot directions,
/// (n_real, size).
pub fn direction_expansion<'t, E: Element>(
    geo: &GeometryVars<'t, E>,
    size: usize,
) -> Result<Var<'t, E>> {
    let degree = ModelConfig::direction_expansion_degree(size);
    let x = column(&geo.dirs, 0)?;
    let y = column(&geo.dirs, 1)?;
    let z = column(&geo.dirs, 2)?;
    let blocks = encodings::sh_blocks_generic(degree, &x, &y, &z);
    let mut cols = Vec::with_capacity(size);
    let mut pos = 0;
    'outer: for block in blocks {
        for comp in block {
            if pos == size {
                break 'outer;
            }
            cols.push((pos, comp));
            pos += 1;
        }
    }
    assemble_columns(&cols, size)
}
