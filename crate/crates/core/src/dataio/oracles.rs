//! Exact reference potentials for synthetic labels: shifted Lennard-Jones
//! (short-range) and Yukawa-screened Coulomb (long-range).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{candidates_within, AtomicSystem, Mat3};

/// Coulomb constant in eV·Å·e⁻².
pub const COULOMB_EV_ANGSTROM: f64 = 14.4;

#[derive(Debug, Clone)]
pub struct OracleLabels {
    pub energy: f64,
    pub forces: Vec<[f64; 3]>,
    pub stress: Option<Mat3>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LjParams {
    pub epsilon: f64,
    pub sigma: f64,
    pub r_cut: f64,
}

impl Default for LjParams {
    fn default() -> Self {
        // Argon-like, energy-shifted at the 10 Å cutoff.
        LjParams { epsilon: 0.0103, sigma: 3.4, r_cut: 10.0 }
    }
}

impl LjParams {
    pub fn pair_energy(&self, r: f64) -> f64 {
        let s6 = (self.sigma / r).powi(6);
        let sc6 = (self.sigma / self.r_cut).powi(6);
        4.0 * self.epsilon * (s6 * s6 - s6) - 4.0 * self.epsilon * (sc6 * sc6 - sc6)
    }

    /// du/dr.
    pub fn pair_derivative(&self, r: f64) -> f64 {
        let s6 = (self.sigma / r).powi(6);
        24.0 * self.epsilon * (s6 - 2.0 * s6 * s6) / r
    }
}

/// Energy, forces, and strain-derivative stress of shifted LJ over all pairs
/// (and periodic images) within the cutoff. Each pair is visited once through
/// a canonical ordering so forces cancel exactly and Σ F = 0 to roundoff.
pub fn lj_energy_forces(system: &AtomicSystem, params: &LjParams) -> Result<OracleLabels> {
    let n = system.len();
    let mut energy = 0.0;
    let mut forces = vec![[0.0; 3]; n];
    let mut virial = [[0.0; 3]; 3];
    for i in 0..n {
        for c in candidates_within(system, i, params.r_cut)? {
            // canonical representative: j > i, or same atom with positive shift
            if c.neighbor < i || (c.neighbor == i && c.shift <= [0, 0, 0]) {
                continue;
            }
            let u = params.pair_energy(c.dist);
            let du = params.pair_derivative(c.dist);
            energy += u;
            for d in 0..3 {
                let f = du * c.disp[d] / c.dist;
                forces[i][d] += f;
                forces[c.neighbor][d] -= f;
            }
            for a in 0..3 {
                for b in 0..3 {
                    virial[a][b] += du * c.disp[a] * c.disp[b] / c.dist;
                }
            }
        }
    }
    let stress = if system.is_periodic() {
        let v = system.volume()?;
        let mut s = virial;
        for row in &mut s {
            for x in row.iter_mut() {
                *x /= v;
            }
        }
        Some(s)
    } else {
        None
    };
    Ok(OracleLabels { energy, forces, stress })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct YukawaParams {
    /// Screening length λ (Å).
    pub screening_length: f64,
    /// Coupling constant (eV·Å·e⁻²).
    pub coupling: f64,
}

impl Default for YukawaParams {
    fn default() -> Self {
        YukawaParams { screening_length: 10.0, coupling: COULOMB_EV_ANGSTROM }
    }
}

impl YukawaParams {
    pub fn pair_energy(&self, qi: f64, qj: f64, r: f64) -> f64 {
        self.coupling * qi * qj * (-r / self.screening_length).exp() / r
    }

    pub fn pair_derivative(&self, qi: f64, qj: f64, r: f64) -> f64 {
        -self.coupling * qi * qj * (-r / self.screening_length).exp()
            * (1.0 / (r * r) + 1.0 / (self.screening_length * r))
    }
}

/// Per-species charge convention for the synthetic electrolyte clusters:
/// Na (11) carries +1, Cl (17) carries -1.
pub fn species_charge(z: u8) -> Result<f64> {
    match z {
        11 => Ok(1.0),
        17 => Ok(-1.0),
        _ => Err(Error::invalid("species_charge", format!("no charge mapping for species {z}"))),
    }
}

/// Energy and forces of the Yukawa oracle over all pairs (non-periodic; the
/// interaction range deliberately exceeds any graph cutoff).
pub fn yukawa_energy_forces(system: &AtomicSystem, params: &YukawaParams) -> Result<OracleLabels> {
    if system.is_periodic() {
        return Err(Error::invalid("yukawa_energy_forces", "oracle is for non-periodic clusters"));
    }
    let n = system.len();
    let charges: Vec<f64> =
        system.species.iter().map(|&z| species_charge(z)).collect::<Result<_>>()?;
    let mut energy = 0.0;
    let mut forces = vec![[0.0; 3]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let disp = [
                system.positions[j][0] - system.positions[i][0],
                system.positions[j][1] - system.positions[i][1],
                system.positions[j][2] - system.positions[i][2],
            ];
            let r = (disp[0] * disp[0] + disp[1] * disp[1] + disp[2] * disp[2]).sqrt();
            energy += params.pair_energy(charges[i], charges[j], r);
            let du = params.pair_derivative(charges[i], charges[j], r);
            for d in 0..3 {
                forces[i][d] += du * disp[d] / r;
                forces[j][d] -= du * disp[d] / r;
            }
        }
    }
    Ok(OracleLabels { energy, forces, stress: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_difference_gradient;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lj_dimer_minimum_has_zero_force() {
        let r_min = 2f64.powf(1.0 / 6.0) * 3.4;
        let sys =
            AtomicSystem::new(vec![[0.0; 3], [r_min, 0.0, 0.0]], vec![18, 18]).unwrap();
        let labels = lj_energy_forces(&sys, &LjParams::default()).unwrap();
        for f in &labels.forces {
            for d in 0..3 {
                assert!(f[d].abs() < 1e-12, "force {f:?}");
            }
        }
        // energy at the minimum: -ε minus the cutoff shift
        let p = LjParams::default();
        assert!((labels.energy - p.pair_energy(r_min)).abs() < 1e-15);
    }

    #[test]
    fn lj_matches_independent_pairwise_loop() {
        // Periodic frame checked against a direct double loop over atom pairs
        // and explicitly enumerated image shifts.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = 12.0;
        let positions: Vec<[f64; 3]> = (0..12)
            .map(|_| [rng.gen_range(0.0..a), rng.gen_range(0.0..a), rng.gen_range(0.0..a)])
            .collect();
        let sys = AtomicSystem::new(positions, vec![18; 12])
            .unwrap()
            .with_cell([[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]], [true; 3])
            .unwrap();
        let p = LjParams::default();
        let labels = lj_energy_forces(&sys, &p).unwrap();

        let mut energy = 0.0;
        let mut forces = vec![[0.0; 3]; 12];
        for i in 0..12 {
            for j in 0..12 {
                for sa in -1i32..=1 {
                    for sb in -1i32..=1 {
                        for sc in -1i32..=1 {
                            if i == j && sa == 0 && sb == 0 && sc == 0 {
                                continue;
                            }
                            let disp = [
                                sys.positions[j][0] + sa as f64 * a - sys.positions[i][0],
                                sys.positions[j][1] + sb as f64 * a - sys.positions[i][1],
                                sys.positions[j][2] + sc as f64 * a - sys.positions[i][2],
                            ];
                            let r = (disp[0] * disp[0] + disp[1] * disp[1] + disp[2] * disp[2])
                                .sqrt();
                            if r >= p.r_cut {
                                continue;
                            }
                            energy += 0.5 * p.pair_energy(r);
                            let du = p.pair_derivative(r);
                            for d in 0..3 {
                                forces[i][d] += du * disp[d] / r;
                            }
                        }
                    }
                }
            }
        }
        assert!((labels.energy - energy).abs() < 1e-12, "{} vs {}", labels.energy, energy);
        for (fa, fb) in labels.forces.iter().zip(&forces) {
            for d in 0..3 {
                assert!((fa[d] - fb[d]).abs() < 1e-12);
            }
        }
    }

    fn separated_cluster(seed: u64, n: usize, span: f64, min_dist: f64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positions: Vec<[f64; 3]> = Vec::new();
        while positions.len() < n {
            let p = [
                rng.gen_range(0.0..span),
                rng.gen_range(0.0..span),
                rng.gen_range(0.0..span),
            ];
            let ok = positions.iter().all(|q| {
                ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt()
                    > min_dist
            });
            if ok {
                positions.push(p);
            }
        }
        positions
    }

    #[test]
    fn lj_forces_are_energy_gradients() {
        let positions = separated_cluster(8, 8, 9.0, 2.6);
        let sys = AtomicSystem::new(positions, vec![18; 8]).unwrap();
        let p = LjParams::default();
        let labels = lj_energy_forces(&sys, &p).unwrap();
        let flat: Vec<f64> = sys.positions.iter().flatten().copied().collect();
        let fd = finite_difference_gradient(
            |x| {
                let pos: Vec<[f64; 3]> = x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
                let s = AtomicSystem::new(pos, sys.species.clone())?;
                Ok(lj_energy_forces(&s, &p)?.energy)
            },
            &flat,
            1e-6,
        )
        .unwrap();
        for (i, f) in labels.forces.iter().enumerate() {
            for d in 0..3 {
                assert!((f[d] + fd[i * 3 + d]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn yukawa_pair_closed_form() {
        // Two opposite charges at distance r, unit coupling:
        // E = -e^{-r/λ}/r.
        let sys =
            AtomicSystem::new(vec![[0.0; 3], [3.0, 0.0, 0.0]], vec![11, 17]).unwrap();
        let p = YukawaParams { screening_length: 8.0, coupling: 1.0 };
        let labels = yukawa_energy_forces(&sys, &p).unwrap();
        let expected = -(-3.0f64 / 8.0).exp() / 3.0;
        assert!((labels.energy - expected).abs() < 1e-15);

        // Same-sign pair is repulsive and mirrors the magnitude.
        let sys2 = AtomicSystem::new(vec![[0.0; 3], [3.0, 0.0, 0.0]], vec![11, 11]).unwrap();
        let labels2 = yukawa_energy_forces(&sys2, &p).unwrap();
        assert!((labels2.energy + expected).abs() < 1e-15);
    }

    #[test]
    fn yukawa_forces_match_analytic_derivative() {
        let positions = separated_cluster(9, 6, 9.0, 2.0);
        let species = vec![11, 17, 11, 17, 11, 17];
        let sys = AtomicSystem::new(positions, species.clone()).unwrap();
        let p = YukawaParams::default();
        let labels = yukawa_energy_forces(&sys, &p).unwrap();
        let flat: Vec<f64> = sys.positions.iter().flatten().copied().collect();
        let fd = finite_difference_gradient(
            |x| {
                let pos: Vec<[f64; 3]> = x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
                let s = AtomicSystem::new(pos, species.clone())?;
                Ok(yukawa_energy_forces(&s, &p)?.energy)
            },
            &flat,
            1e-5,
        )
        .unwrap();
        for (i, f) in labels.forces.iter().enumerate() {
            for d in 0..3 {
                let tol = 1e-8 * f[d].abs().max(1.0);
                assert!((f[d] + fd[i * 3 + d]).abs() < tol, "atom {i} dim {d}");
            }
        }
        // net force zero
        for d in 0..3 {
            let net: f64 = labels.forces.iter().map(|f| f[d]).sum();
            assert!(net.abs() < 1e-12);
        }
    }
}
