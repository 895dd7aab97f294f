//! Atomic systems, periodic images, differentiable soft-kNN neighbor graphs,
//! smooth cutoff envelope, and radial basis expansion.

pub mod graph;
pub mod softknn;

use serde::{Deserialize, Serialize};

use crate::diffcore::Algebra;
use crate::elements::MAX_ELEMENTS;
use crate::error::{Error, Result};

pub use graph::{build_neighbor_graph, candidates_within, Candidate, NeighborGraph, Stencil};
pub use softknn::{soft_knn_weights, SoftKnnConfig};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// One simulation frame: positions in Å, species as atomic numbers, optional
/// periodic cell (rows are lattice vectors), total charge/spin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicSystem {
    pub positions: Vec<Vec3>,
    pub species: Vec<u8>,
    pub cell: Option<Mat3>,
    pub pbc: [bool; 3],
    pub total_charge: i32,
    pub total_spin: i32,
}

impl AtomicSystem {
    pub fn new(positions: Vec<Vec3>, species: Vec<u8>) -> Result<Self> {
        let sys = AtomicSystem {
            positions,
            species,
            cell: None,
            pbc: [false; 3],
            total_charge: 0,
            total_spin: 0,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn with_cell(mut self, cell: Mat3, pbc: [bool; 3]) -> Result<Self> {
        self.cell = Some(cell);
        self.pbc = pbc;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::invalid("AtomicSystem", "need at least one atom"));
        }
        if self.positions.len() != self.species.len() {
            return Err(Error::invalid(
                "AtomicSystem",
                format!("{} positions vs {} species", self.positions.len(), self.species.len()),
            ));
        }
        for &z in &self.species {
            if z == 0 || z as usize > MAX_ELEMENTS {
                return Err(Error::invalid("AtomicSystem", format!("species {z} outside 1..={MAX_ELEMENTS}")));
            }
        }
        if self.pbc.iter().any(|&p| p) {
            let cell = self
                .cell
                .ok_or_else(|| Error::invalid("AtomicSystem", "periodic flags set but no cell"))?;
            invert3(&cell)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_periodic(&self) -> bool {
        self.pbc.iter().any(|&p| p)
    }

    /// Cell volume in Å³.
    pub fn volume(&self) -> Result<f64> {
        let cell = self.cell.ok_or_else(|| Error::invalid("volume", "no cell"))?;
        Ok(det3(&cell).abs())
    }

    pub fn translated(&self, offset: Vec3) -> AtomicSystem {
        let mut out = self.clone();
        for p in &mut out.positions {
            for d in 0..3 {
                p[d] += offset[d];
            }
        }
        out
    }

    pub fn rotated(&self, rot: &Mat3) -> AtomicSystem {
        let mut out = self.clone();
        for p in &mut out.positions {
            *p = matvec(rot, *p);
        }
        if let Some(cell) = &mut out.cell {
            for row in cell.iter_mut() {
                *row = matvec(rot, *row);
            }
        }
        out
    }

    pub fn permuted(&self, perm: &[usize]) -> AtomicSystem {
        let mut out = self.clone();
        out.positions = perm.iter().map(|&i| self.positions[i]).collect();
        out.species = perm.iter().map(|&i| self.species[i]).collect();
        out
    }
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn invert3(m: &Mat3) -> Result<Mat3> {
    let d = det3(m);
    if d.abs() < 1e-12 {
        return Err(Error::invalid("invert3", "singular cell matrix"));
    }
    let inv_d = 1.0 / d;
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((i + 1) % 3, (i + 2) % 3);
            let (c, e) = ((j + 1) % 3, (j + 2) % 3);
            // adjugate transpose
            out[j][i] = (m[a][c] * m[b][e] - m[a][e] * m[b][c]) * inv_d;
        }
    }
    Ok(out)
}

pub fn matvec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Uniform-ish random rotation composed from three random axis rotations.
pub fn random_rotation(rng: &mut impl rand::Rng) -> Mat3 {
    let (a, b, c) = (
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
    );
    let rz = |t: f64| [[t.cos(), -t.sin(), 0.0], [t.sin(), t.cos(), 0.0], [0.0, 0.0, 1.0]];
    let ry = |t: f64| [[t.cos(), 0.0, t.sin()], [0.0, 1.0, 0.0], [-t.sin(), 0.0, t.cos()]];
    let mul = |x: &Mat3, y: &Mat3| {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += x[i][k] * y[k][j];
                }
            }
        }
        out
    };
    mul(&mul(&rz(a), &ry(b)), &rz(c))
}

/// Row vector times matrix (`v · M`); fractional->cartesian for cell rows.
pub fn vecmat(v: Vec3, m: &Mat3) -> Vec3 {
    [
        v[0] * m[0][0] + v[1] * m[1][0] + v[2] * m[2][0],
        v[0] * m[0][1] + v[1] * m[1][1] + v[2] * m[2][1],
        v[0] * m[0][2] + v[1] * m[1][2] + v[2] * m[2][2],
    ]
}

pub fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Displacement of the nearest periodic image of atom `j` relative to atom `i`
/// and the integer image shift `s` such that `disp = x_j + s·H - x_i`.
/// Non-periodic axes use the raw difference.
pub fn minimum_image_displacement(
    system: &AtomicSystem,
    i: usize,
    j: usize,
) -> Result<(Vec3, [i32; 3])> {
    if i >= system.len() || j >= system.len() {
        return Err(Error::invalid("minimum_image_displacement", "atom index out of range"));
    }
    let raw = [
        system.positions[j][0] - system.positions[i][0],
        system.positions[j][1] - system.positions[i][1],
        system.positions[j][2] - system.positions[i][2],
    ];
    if !system.is_periodic() {
        return Ok((raw, [0; 3]));
    }
    let cell = system.cell.unwrap();
    let inv = invert3(&cell)?;
    let frac = vecmat(raw, &inv);
    let mut base = [0i32; 3];
    for d in 0..3 {
        if system.pbc[d] {
            base[d] = -frac[d].round() as i32;
        }
    }
    // Wrapping by rounding is exact for orthorhombic cells; refine over the
    // ±1 neighborhood so skewed cells land on the true nearest image.
    let mut best = (f64::INFINITY, [0i32; 3], raw);
    let range = |d: usize| if system.pbc[d] { -1..=1 } else { 0..=0 };
    for sa in range(0) {
        for sb in range(1) {
            for sc in range(2) {
                let s = [base[0] + sa, base[1] + sb, base[2] + sc];
                let shift_vec = vecmat([s[0] as f64, s[1] as f64, s[2] as f64], &cell);
                let disp = [raw[0] + shift_vec[0], raw[1] + shift_vec[1], raw[2] + shift_vec[2]];
                let r = norm(disp);
                if r < best.0 {
                    best = (r, s, disp);
                }
            }
        }
    }
    Ok((best.2, best.1))
}

/// Replicate a periodic system by integer factors along each lattice vector.
pub fn replicate_supercell(system: &AtomicSystem, factors: [usize; 3]) -> Result<AtomicSystem> {
    if !system.is_periodic() {
        return Err(Error::invalid("replicate_supercell", "system is not periodic"));
    }
    if factors.iter().any(|&f| f == 0) {
        return Err(Error::invalid("replicate_supercell", "factors must be positive"));
    }
    let cell = system.cell.unwrap();
    let n_images: usize = factors.iter().product();
    let mut positions = Vec::with_capacity(system.len() * n_images);
    let mut species = Vec::with_capacity(system.len() * n_images);
    for ia in 0..factors[0] {
        for ib in 0..factors[1] {
            for ic in 0..factors[2] {
                let offset = vecmat([ia as f64, ib as f64, ic as f64], &cell);
                for (p, &z) in system.positions.iter().zip(&system.species) {
                    positions.push([p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]]);
                    species.push(z);
                }
            }
        }
    }
    let mut new_cell = cell;
    for d in 0..3 {
        for c in 0..3 {
            new_cell[d][c] *= factors[d] as f64;
        }
    }
    Ok(AtomicSystem {
        positions,
        species,
        cell: Some(new_cell),
        pbc: system.pbc,
        total_charge: system.total_charge * n_images as i32,
        total_spin: system.total_spin * n_images as i32,
    })
}

const ENVELOPE_P: f64 = 5.0;

/// Polynomial cutoff envelope on x = r/r_cut in [0,1]:
/// u(x) = 1 - (p+1)(p+2)/2 x^p + p(p+2) x^{p+1} - p(p+1)/2 x^{p+2}, p = 5.
/// C²-smooth with u(0)=1, u(1)=0, u'(1)=0.
pub fn envelope_poly<T: Algebra>(x: &T) -> T {
    let p = ENVELOPE_P;
    let c1 = -(p + 1.0) * (p + 2.0) / 2.0;
    let c2 = p * (p + 2.0);
    let c3 = -p * (p + 1.0) / 2.0;
    let x2 = x.mul(x);
    let x4 = x2.mul(&x2);
    let x5 = x4.mul(x);
    let x6 = x5.mul(x);
    let x7 = x6.mul(x);
    x5.scale(c1).add(&x6.scale(c2)).add(&x7.scale(c3)).add_const(1.0)
}

/// Smooth cutoff value u(r) in [0,1]; zero at and beyond r_cut.
pub fn smooth_envelope(r: f64, r_cut: f64) -> Result<f64> {
    if r_cut <= 0.0 {
        return Err(Error::invalid("smooth_envelope", "r_cut must be > 0"));
    }
    if r < 0.0 {
        return Err(Error::invalid("smooth_envelope", "r must be >= 0"));
    }
    if r >= r_cut {
        return Ok(0.0);
    }
    Ok(envelope_poly(&(r / r_cut)))
}

/// Gaussian radial basis: strictly increasing centers spanning [0, r_cut].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialBasis {
    pub centers: Vec<f64>,
    pub width: f64,
    pub r_cut: f64,
}

impl RadialBasis {
    /// Uniform centers over [0, r_cut]; width = spacing between centers.
    pub fn uniform(n_centers: usize, r_cut: f64) -> Result<Self> {
        if n_centers < 2 || r_cut <= 0.0 {
            return Err(Error::invalid("RadialBasis", "need >= 2 centers and r_cut > 0"));
        }
        let spacing = r_cut / (n_centers as f64 - 1.0);
        let centers = (0..n_centers).map(|m| m as f64 * spacing).collect();
        Ok(RadialBasis { centers, width: spacing, r_cut })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// exp(-(r - c_m)^2 / (2 σ^2)) per center m.
    pub fn expand(&self, r: f64) -> Vec<f64> {
        let inv = 1.0 / (2.0 * self.width * self.width);
        self.centers.iter().map(|&c| (-(r - c) * (r - c) * inv).exp()).collect()
    }
}
