//! Neighbor-graph construction: candidate search (brute force or cell list),
//! soft-kNN weights, and smooth envelope values per stencil slot.

use rayon::prelude::*;

use super::softknn::{hard_knn_weights, soft_knn_weights, SoftKnnConfig};
use super::{invert3, norm, smooth_envelope, vecmat, AtomicSystem, Vec3};
use crate::error::{Error, Result};

/// Atoms below this count use the brute-force candidate search even when a
/// cell list would apply.
const CELL_LIST_MIN_ATOMS: usize = 512;

/// Marker for padded stencil slots.
pub const PAD: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub neighbor: usize,
    pub shift: [i32; 3],
    pub disp: Vec3,
    pub dist: f64,
}

/// Per-atom neighbor stencil view (all candidates within r_cut, sorted by
/// distance; the attention layer appends the self token separately).
pub struct Stencil<'a> {
    pub neighbor: &'a [usize],
    pub shift: &'a [[i32; 3]],
    pub distance: &'a [f64],
    pub direction: &'a [Vec3],
    pub weight: &'a [f64],
    pub envelope: &'a [f64],
    pub count: usize,
}

/// Dense neighbor stencils: `width` slots per atom, padded slots carry
/// neighbor = PAD and weight = envelope = 0.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub n_atoms: usize,
    pub width: usize,
    pub k: usize,
    pub r_cut: f64,
    pub config: SoftKnnConfig,
    pub neighbor: Vec<usize>,
    pub shift: Vec<[i32; 3]>,
    pub distance: Vec<f64>,
    pub direction: Vec<Vec3>,
    pub weight: Vec<f64>,
    pub envelope: Vec<f64>,
    pub count: Vec<usize>,
}

impl NeighborGraph {
    pub fn stencil(&self, i: usize) -> Stencil<'_> {
        let a = i * self.width;
        let b = a + self.width;
        Stencil {
            neighbor: &self.neighbor[a..b],
            shift: &self.shift[a..b],
            distance: &self.distance[a..b],
            direction: &self.direction[a..b],
            weight: &self.weight[a..b],
            envelope: &self.envelope[a..b],
            count: self.count[i],
        }
    }

    /// Effective slot weight (soft membership × envelope).
    pub fn slot_weight(&self, i: usize, slot: usize) -> f64 {
        let ix = i * self.width + slot;
        self.weight[ix] * self.envelope[ix]
    }
}

/// Image shift search ranges needed to cover r_cut along each periodic axis.
fn shift_ranges(system: &AtomicSystem, r_cut: f64) -> Result<[i32; 3]> {
    let mut ranges = [0i32; 3];
    if !system.is_periodic() {
        return Ok(ranges);
    }
    let cell = system.cell.unwrap();
    let vol = system.volume()?;
    for d in 0..3 {
        if !system.pbc[d] {
            continue;
        }
        let b = cell[(d + 1) % 3];
        let c = cell[(d + 2) % 3];
        let cross = [
            b[1] * c[2] - b[2] * c[1],
            b[2] * c[0] - b[0] * c[2],
            b[0] * c[1] - b[1] * c[0],
        ];
        let perp = vol / norm(cross);
        ranges[d] = (r_cut / perp).ceil() as i32;
    }
    Ok(ranges)
}

/// All candidates within r_cut of atom i (over periodic images; excludes the
/// zero-shift self pair). Brute force.
pub fn candidates_within(system: &AtomicSystem, i: usize, r_cut: f64) -> Result<Vec<Candidate>> {
    let ranges = shift_ranges(system, r_cut)?;
    let cell = system.cell.unwrap_or([[0.0; 3]; 3]);
    let xi = system.positions[i];
    let mut out = Vec::new();
    for j in 0..system.len() {
        let xj = system.positions[j];
        for sa in -ranges[0]..=ranges[0] {
            for sb in -ranges[1]..=ranges[1] {
                for sc in -ranges[2]..=ranges[2] {
                    if j == i && sa == 0 && sb == 0 && sc == 0 {
                        continue;
                    }
                    let sv = vecmat([sa as f64, sb as f64, sc as f64], &cell);
                    let disp = [
                        xj[0] + sv[0] - xi[0],
                        xj[1] + sv[1] - xi[1],
                        xj[2] + sv[2] - xi[2],
                    ];
                    let dist = norm(disp);
                    if dist < r_cut {
                        out.push(Candidate { neighbor: j, shift: [sa, sb, sc], disp, dist });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Cell-list candidate search for fully periodic systems with at least three
/// bins of edge >= r_cut along each axis. Returns None when inapplicable.
fn cell_list_candidates(system: &AtomicSystem, r_cut: f64) -> Result<Option<Vec<Vec<Candidate>>>> {
    if !system.pbc.iter().all(|&p| p) {
        return Ok(None);
    }
    let cell = system.cell.unwrap();
    let inv = invert3(&cell)?;
    let vol = system.volume()?;
    let mut bins = [0usize; 3];
    for d in 0..3 {
        let b = cell[(d + 1) % 3];
        let c = cell[(d + 2) % 3];
        let cross = [
            b[1] * c[2] - b[2] * c[1],
            b[2] * c[0] - b[0] * c[2],
            b[0] * c[1] - b[1] * c[0],
        ];
        let perp = vol / norm(cross);
        bins[d] = (perp / r_cut).floor() as usize;
        if bins[d] < 3 {
            return Ok(None);
        }
    }
    let n = system.len();
    // Wrapped fractional coordinates and the wrap shift applied to each atom.
    let mut frac = vec![[0.0f64; 3]; n];
    let mut wrap = vec![[0i32; 3]; n];
    let mut bin_of = vec![[0usize; 3]; n];
    let mut buckets = vec![Vec::new(); bins[0] * bins[1] * bins[2]];
    for a in 0..n {
        let f = vecmat(system.positions[a], &inv);
        for d in 0..3 {
            let w = f[d].floor();
            wrap[a][d] = -(w as i32);
            frac[a][d] = f[d] - w;
            bin_of[a][d] = ((frac[a][d] * bins[d] as f64) as usize).min(bins[d] - 1);
        }
        let b = (bin_of[a][0] * bins[1] + bin_of[a][1]) * bins[2] + bin_of[a][2];
        buckets[b].push(a);
    }
    let result: Vec<Vec<Candidate>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = system.positions[i];
            let mut cands = Vec::new();
            for da in -1i32..=1 {
                for db in -1i32..=1 {
                    for dc in -1i32..=1 {
                        let mut bshift = [0i32; 3];
                        let mut bix = [0usize; 3];
                        for (d, &o) in [da, db, dc].iter().enumerate() {
                            let raw = bin_of[i][d] as i32 + o;
                            let m = bins[d] as i32;
                            let wrapped = raw.rem_euclid(m);
                            bshift[d] = (raw - wrapped) / m;
                            bix[d] = wrapped as usize;
                        }
                        let b = (bix[0] * bins[1] + bix[1]) * bins[2] + bix[2];
                        for &j in &buckets[b] {
                            // Total image shift: wrap difference + bin-shell wrap.
                            let s = [
                                wrap[i][0] - wrap[j][0] + bshift[0],
                                wrap[i][1] - wrap[j][1] + bshift[1],
                                wrap[i][2] - wrap[j][2] + bshift[2],
                            ];
                            if j == i && s == [0, 0, 0] {
                                continue;
                            }
                            let sv = vecmat([s[0] as f64, s[1] as f64, s[2] as f64], &cell);
                            let xj = system.positions[j];
                            let disp = [
                                xj[0] + sv[0] - xi[0],
                                xj[1] + sv[1] - xi[1],
                                xj[2] + sv[2] - xi[2],
                            ];
                            let dist = norm(disp);
                            if dist < r_cut {
                                cands.push(Candidate { neighbor: j, shift: s, disp, dist });
                            }
                        }
                    }
                }
            }
            cands
        })
        .collect();
    Ok(Some(result))
}

/// Build per-atom stencils of every candidate within r_cut, sorted by
/// distance, with soft-kNN weights (threshold from the full candidate set)
/// and envelope values attached. Stencils are padded to the frame-wide
/// maximum width; an isolated atom yields an all-padded stencil.
pub fn build_neighbor_graph(
    system: &AtomicSystem,
    k: usize,
    r_cut: f64,
    config: SoftKnnConfig,
) -> Result<NeighborGraph> {
    if k == 0 {
        return Err(Error::invalid("build_neighbor_graph", "k must be >= 1"));
    }
    if r_cut <= 0.0 {
        return Err(Error::invalid("build_neighbor_graph", "r_cut must be > 0"));
    }
    let n = system.len();
    let mut per_atom: Vec<Vec<Candidate>> = match if n >= CELL_LIST_MIN_ATOMS {
        cell_list_candidates(system, r_cut)?
    } else {
        None
    } {
        Some(c) => c,
        None => {
            let res: Result<Vec<_>> =
                (0..n).map(|i| candidates_within(system, i, r_cut)).collect();
            res?
        }
    };
    for cands in &mut per_atom {
        cands.sort_by(|a, b| {
            a.dist
                .partial_cmp(&b.dist)
                .unwrap()
                .then(a.neighbor.cmp(&b.neighbor))
                .then(a.shift.cmp(&b.shift))
        });
    }
    let width = per_atom.iter().map(|c| c.len()).max().unwrap_or(0);
    let mut graph = NeighborGraph {
        n_atoms: n,
        width,
        k,
        r_cut,
        config,
        neighbor: vec![PAD; n * width],
        shift: vec![[0; 3]; n * width],
        distance: vec![r_cut; n * width],
        direction: vec![[1.0, 0.0, 0.0]; n * width],
        weight: vec![0.0; n * width],
        envelope: vec![0.0; n * width],
        count: vec![0; n],
    };
    for (i, cands) in per_atom.iter().enumerate() {
        let dists: Vec<f64> = cands.iter().map(|c| c.dist).collect();
        let weights = if config.soft {
            soft_knn_weights(&dists, k, config.sigmoid_scale, config.lse_scale)
        } else {
            hard_knn_weights(&dists, k)
        };
        graph.count[i] = cands.len();
        for (s, c) in cands.iter().enumerate() {
            let ix = i * width + s;
            graph.neighbor[ix] = c.neighbor;
            graph.shift[ix] = c.shift;
            graph.distance[ix] = c.dist;
            let inv_r = 1.0 / c.dist;
            graph.direction[ix] = [c.disp[0] * inv_r, c.disp[1] * inv_r, c.disp[2] * inv_r];
            graph.weight[ix] = weights[s];
            graph.envelope[ix] = smooth_envelope(c.dist, r_cut)?;
        }
    }
    Ok(graph)
}
