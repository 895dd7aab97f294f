//! Seeded synthetic dataset generators labeled by the oracle potentials.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::oracles::{lj_energy_forces, yukawa_energy_forces, LjParams, YukawaParams};
use super::{Dataset, LabeledFrame};
use crate::error::{Error, Result};
use crate::geometry::AtomicSystem;


const MIN_SEPARATION: f64 = 0.5;
const MAX_RESAMPLE: usize = 10_000;

fn min_pair_distance(positions: &[[f64; 3]], candidate: &[f64; 3]) -> f64 {
    positions
        .iter()
        .map(|p| {
            ((p[0] - candidate[0]).powi(2)
                + (p[1] - candidate[1]).powi(2)
                + (p[2] - candidate[2]).powi(2))
            .sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Periodic argon-like frames on a jittered lattice at the requested density,
/// labeled with exact shifted-LJ energy/forces/stress.
pub fn generate_lj_dataset(
    n_frames: usize,
    atoms_per_frame: usize,
    density: f64,
    jitter: f64,
    seed: u64,
    params: &LjParams,
) -> Result<Dataset> {
    if n_frames == 0 || atoms_per_frame == 0 || density <= 0.0 || jitter < 0.0 {
        return Err(Error::invalid("generate_lj_dataset", "parameters must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let box_len = (atoms_per_frame as f64 / density).cbrt();
    let cells = (atoms_per_frame as f64).cbrt().ceil() as usize;
    let spacing = box_len / cells as f64;
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let mut positions: Vec<[f64; 3]> = Vec::with_capacity(atoms_per_frame);
        let mut sites: Vec<[usize; 3]> = Vec::new();
        'fill: for a in 0..cells {
            for b in 0..cells {
                for c in 0..cells {
                    sites.push([a, b, c]);
                    if sites.len() == atoms_per_frame {
                        break 'fill;
                    }
                }
            }
        }
        for site in &sites {
            let mut attempts = 0;
            loop {
                let p = [
                    (site[0] as f64 + 0.5) * spacing + rng.gen_range(-jitter..=jitter),
                    (site[1] as f64 + 0.5) * spacing + rng.gen_range(-jitter..=jitter),
                    (site[2] as f64 + 0.5) * spacing + rng.gen_range(-jitter..=jitter),
                ];
                if min_pair_distance(&positions, &p) > MIN_SEPARATION {
                    positions.push(p);
                    break;
                }
                attempts += 1;
                if attempts > MAX_RESAMPLE {
                    return Err(Error::invalid(
                        "generate_lj_dataset",
                        "could not place atoms without overlap",
                    ));
                }
            }
        }
        let system = AtomicSystem::new(positions, vec![18; atoms_per_frame])?
            .with_cell(
                [[box_len, 0.0, 0.0], [0.0, box_len, 0.0], [0.0, 0.0, box_len]],
                [true; 3],
            )?;
        let labels = lj_energy_forces(&system, params)?;
        frames.push(LabeledFrame {
            system,
            energy: Some(labels.energy),
            forces: Some(labels.forces),
            stress: labels.stress,
        });
    }
    let splits = Dataset::assign_splits(frames.len());
    Ok(Dataset {
        frames,
        splits,
        provenance: format!(
            "lj seed={seed} frames={n_frames} atoms={atoms_per_frame} density={density} jitter={jitter}"
        ),
    })
}

/// Non-periodic ±1-charged clusters (Na/Cl species carry the charge) labeled
/// with the Yukawa oracle; interactions deliberately span beyond the model's
/// graph cutoff.
pub fn generate_yukawa_dataset(
    n_frames: usize,
    atoms_per_frame: usize,
    span: f64,
    params: &YukawaParams,
    seed: u64,
) -> Result<Dataset> {
    if n_frames == 0 || atoms_per_frame < 2 || span <= 0.0 {
        return Err(Error::invalid("generate_yukawa_dataset", "parameters must be positive"));
    }
    if atoms_per_frame % 2 != 0 {
        return Err(Error::invalid("generate_yukawa_dataset", "need an even atom count (neutral cluster)"));
    }
    let diameter = span * 3f64.sqrt();
    if params.screening_length <= diameter / 4.0 {
        return Err(Error::invalid(
            "generate_yukawa_dataset",
            format!(
                "screening length {} too short for cluster diameter {diameter:.1}",
                params.screening_length
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let mut positions: Vec<[f64; 3]> = Vec::with_capacity(atoms_per_frame);
        for _ in 0..atoms_per_frame {
            let mut attempts = 0;
            loop {
                let p = [
                    rng.gen_range(0.0..span),
                    rng.gen_range(0.0..span),
                    rng.gen_range(0.0..span),
                ];
                // resample overlaps; 1.5 Å floor keeps 1/r energies sane
                if min_pair_distance(&positions, &p) > MIN_SEPARATION.max(1.5) {
                    positions.push(p);
                    break;
                }
                attempts += 1;
                if attempts > MAX_RESAMPLE {
                    return Err(Error::invalid(
                        "generate_yukawa_dataset",
                        "could not place atoms without overlap",
                    ));
                }
            }
        }
        let mut species: Vec<u8> = (0..atoms_per_frame)
            .map(|i| if i < atoms_per_frame / 2 { 11 } else { 17 })
            .collect();
        species.shuffle(&mut rng);
        let system = AtomicSystem::new(positions, species)?;
        let labels = yukawa_energy_forces(&system, params)?;
        frames.push(LabeledFrame {
            system,
            energy: Some(labels.energy),
            forces: Some(labels.forces),
            stress: None,
        });
    }
    let splits = Dataset::assign_splits(frames.len());
    Ok(Dataset {
        frames,
        splits,
        provenance: format!(
            "yukawa seed={seed} frames={n_frames} atoms={atoms_per_frame} span={span} lambda={}",
            params.screening_length
        ),
    })
}
