//! Geometric attention encodings: Legendre angular codes built from real
//! spherical harmonics (directional), and a sinc-kernel radial bias bank
//! (distance-only).

use serde::{Deserialize, Serialize};

use crate::diffcore::Algebra;
use crate::error::{Error, Result};

pub const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// P_ℓ(x) by the Bonnet recurrence.
pub fn legendre_polynomial(degree: usize, x: f64) -> Result<f64> {
    if x.abs() > 1.0 + 1e-12 {
        return Err(Error::invalid("legendre_polynomial", format!("|x| = {} > 1", x.abs())));
    }
    let mut p0 = 1.0;
    if degree == 0 {
        return Ok(p0);
    }
    let mut p1 = x;
    for l in 1..degree {
        let next = ((2 * l + 1) as f64 * x * p1 - l as f64 * p0) / (l + 1) as f64;
        p0 = p1;
        p1 = next;
    }
    Ok(p1)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Orthonormality constant K_ℓm = sqrt((2ℓ+1)/(4π)·(ℓ-m)!/(ℓ+m)!).
fn sh_norm(l: usize, m: usize) -> f64 {
    ((2 * l + 1) as f64 / FOUR_PI * factorial(l - m) / factorial(l + m)).sqrt()
}

/// Real spherical harmonic blocks Y_ℓ ∈ R^{2ℓ+1} for ℓ = 0..=max_degree,
/// evaluated on a unit direction given by components (x, y, z). Written over
/// the shared scalar algebra so the same code serves plain floats and tape
/// variables (Cartesian polynomial form: pole-safe, no divisions).
///
/// Within a degree, components are ordered m = -ℓ..ℓ. Convention is
/// Condon–Shortley-free with orthonormal scaling: Y_00 = 1/sqrt(4π),
/// Y_1 = sqrt(3/4π)·(y, z, x).
pub fn sh_blocks_generic<T: Algebra>(max_degree: usize, x: &T, y: &T, z: &T) -> Vec<Vec<T>> {
    let lmax = max_degree;
    let one = x.scale(0.0).add_const(1.0);
    // c_m = Re[(x+iy)^m], s_m = Im[(x+iy)^m]
    let mut cm: Vec<T> = vec![one.clone()];
    let mut sm: Vec<T> = vec![x.scale(0.0)];
    for m in 0..lmax {
        cm.push(x.mul(&cm[m]).sub(&y.mul(&sm[m])));
        sm.push(x.mul(&sm[m]).add(&y.mul(&cm[m])));
    }
    // Q[l][m] with P_ℓ^m(cosθ) = Q_ℓ^m(z)·sinθ^m; sinθ^m folded into c_m/s_m.
    let mut q: Vec<Vec<T>> = vec![vec![one.clone(); lmax + 1]; lmax + 1];
    for m in 0..=lmax {
        if m == 0 {
            q[0][0] = one.clone();
        } else {
            q[m][m] = q[m - 1][m - 1].scale((2 * m - 1) as f64);
        }
        if m + 1 <= lmax {
            q[m + 1][m] = z.mul(&q[m][m]).scale((2 * m + 1) as f64);
        }
        for l in (m + 2)..=lmax {
            let a = z.mul(&q[l - 1][m]).scale((2 * l - 1) as f64);
            let b = q[l - 2][m].scale((l + m - 1) as f64);
            q[l][m] = a.sub(&b).scale(1.0 / (l - m) as f64);
        }
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    (0..=lmax)
        .map(|l| {
            let mut block = Vec::with_capacity(2 * l + 1);
            for m in -(l as isize)..=(l as isize) {
                let ma = m.unsigned_abs();
                let k = sh_norm(l, ma);
                let v = if m < 0 {
                    q[l][ma].mul(&sm[ma]).scale(sqrt2 * k)
                } else if m == 0 {
                    q[l][0].scale(k)
                } else {
                    q[l][ma].mul(&cm[ma]).scale(sqrt2 * k)
                };
                block.push(v);
            }
            block
        })
        .collect()
}

/// Host-side real spherical harmonics for a unit 3-vector.
pub fn real_spherical_harmonics(max_degree: usize, dir: [f64; 3]) -> Result<Vec<Vec<f64>>> {
    let n2 = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
    if n2 == 0.0 {
        return Err(Error::invalid("real_spherical_harmonics", "zero direction vector"));
    }
    if (n2.sqrt() - 1.0).abs() > 1e-8 {
        return Err(Error::invalid(
            "real_spherical_harmonics",
            format!("direction not unit (norm {})", n2.sqrt()),
        ));
    }
    Ok(sh_blocks_generic(max_degree, &dir[0], &dir[1], &dir[2]))
}

/// How a per-head dimension is split across spherical-harmonic degrees:
/// Σ r_ℓ = d_h and the expanded length is d_hr = Σ r_ℓ(2ℓ+1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeAllocation {
    pub max_degree: usize,
    pub repeats: Vec<usize>,
    pub head_dim: usize,
    pub expanded_dim: usize,
}

impl DegreeAllocation {
    pub fn new(max_degree: usize, repeats: Vec<usize>) -> Result<Self> {
        if repeats.len() != max_degree + 1 {
            return Err(Error::invalid("DegreeAllocation", "need one repeat count per degree"));
        }
        let head_dim: usize = repeats.iter().sum();
        if head_dim == 0 {
            return Err(Error::invalid("DegreeAllocation", "all repeats zero"));
        }
        let expanded_dim = repeats.iter().enumerate().map(|(l, r)| r * (2 * l + 1)).sum();
        Ok(DegreeAllocation { max_degree, repeats, head_dim, expanded_dim })
    }

    /// Repeats as equal as Σ r_ℓ = d_h allows, remainder assigned to the
    /// lowest degrees.
    pub fn equal_split(max_degree: usize, head_dim: usize) -> Result<Self> {
        let n = max_degree + 1;
        if head_dim < n {
            return Err(Error::invalid(
                "DegreeAllocation",
                format!("head_dim {head_dim} < {n} degrees"),
            ));
        }
        let base = head_dim / n;
        let rem = head_dim % n;
        let repeats = (0..n).map(|l| base + usize::from(l < rem)).collect();
        Self::new(max_degree, repeats)
    }

    /// For each expanded slot: the head-dim component it copies.
    pub fn expansion_map(&self) -> Vec<usize> {
        let mut map = Vec::with_capacity(self.expanded_dim);
        let mut p = 0;
        for (l, &r) in self.repeats.iter().enumerate() {
            for _ in 0..r {
                for _ in 0..(2 * l + 1) {
                    map.push(p);
                }
                p += 1;
            }
        }
        map
    }

    /// Degree of each expanded slot (aligned with [`Self::expansion_map`]).
    pub fn degree_map(&self) -> Vec<usize> {
        let mut map = Vec::with_capacity(self.expanded_dim);
        for (l, &r) in self.repeats.iter().enumerate() {
            for _ in 0..r {
                for _ in 0..(2 * l + 1) {
                    map.push(l);
                }
            }
        }
        map
    }
}

/// Angular code γ for one direction: degree blocks repeated r_ℓ times and
/// concatenated; length `alloc.expanded_dim`.
pub fn build_lae_code(dir: [f64; 3], alloc: &DegreeAllocation) -> Result<Vec<f64>> {
    let blocks = real_spherical_harmonics(alloc.max_degree, dir)?;
    let mut code = Vec::with_capacity(alloc.expanded_dim);
    for (l, &r) in alloc.repeats.iter().enumerate() {
        for _ in 0..r {
            code.extend_from_slice(&blocks[l]);
        }
    }
    Ok(code)
}

/// Angular code for the self token: direction is undefined, so degree-0
/// slots take the constant harmonic and higher degrees vanish.
pub fn self_token_lae_code(alloc: &DegreeAllocation) -> Vec<f64> {
    let y00 = 1.0 / FOUR_PI.sqrt();
    alloc
        .degree_map()
        .iter()
        .map(|&l| if l == 0 { y00 } else { 0.0 })
        .collect()
}

/// Duplicate each head-dim component of `vec` (2ℓ+1) times for its degree,
/// aligned with [`build_lae_code`] ordering.
pub fn lae_expand_head(vec: &[f64], alloc: &DegreeAllocation) -> Result<Vec<f64>> {
    if vec.len() != alloc.head_dim {
        return Err(Error::invalid(
            "lae_expand_head",
            format!("vector length {} != head_dim {}", vec.len(), alloc.head_dim),
        ));
    }
    Ok(alloc.expansion_map().iter().map(|&p| vec[p]).collect())
}

/// Log-spaced frequency bank shared across heads (1/Å).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBank {
    pub frequencies: Vec<f64>,
}

impl FrequencyBank {
    pub fn log_spaced(count: usize, omega_min: f64, omega_max: f64) -> Result<Self> {
        if count < 1 || omega_min <= 0.0 || omega_max <= omega_min {
            return Err(Error::invalid("FrequencyBank", "need count >= 1, 0 < ω_min < ω_max"));
        }
        let frequencies = if count == 1 {
            vec![omega_min]
        } else {
            let ratio = (omega_max / omega_min).ln() / (count - 1) as f64;
            (0..count).map(|i| omega_min * (i as f64 * ratio).exp()).collect()
        };
        Ok(FrequencyBank { frequencies })
    }

    /// Default span: intermolecular (50 Å) down to bonded (0.5 Å) length scales.
    pub fn default_bank(count: usize) -> Result<Self> {
        let tau = 2.0 * std::f64::consts::PI;
        Self::log_spaced(count, tau / 50.0, tau / 0.5)
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// s_k = sinc(ω_k r), with the limit value 1 at r = 0.
pub fn sinc_kernel(r: f64, bank: &FrequencyBank) -> Vec<f64> {
    bank.frequencies.iter().map(|&w| sinc(w * r)).collect()
}

/// Additive per-head logit bias b_{ij,h} = Σ_k w_{h,k}·sinc(ω_k r_ij).
/// `distances` is a flat N×N symmetric matrix with zero diagonal;
/// `head_weights` is H×M row-major. Returns H matrices of N×N, row-major.
pub fn erope_bias(
    distances: &[f64],
    n: usize,
    bank: &FrequencyBank,
    head_weights: &[f64],
    num_heads: usize,
) -> Result<Vec<Vec<f64>>> {
    if distances.len() != n * n {
        return Err(Error::invalid("erope_bias", "distance matrix size mismatch"));
    }
    let m = bank.len();
    if head_weights.len() != num_heads * m {
        return Err(Error::invalid("erope_bias", "head weight size mismatch"));
    }
    for i in 0..n {
        if distances[i * n + i] != 0.0 {
            return Err(Error::invalid("erope_bias", "nonzero diagonal"));
        }
        for j in 0..n {
            let d = distances[i * n + j];
            if d < 0.0 {
                return Err(Error::invalid("erope_bias", format!("negative distance {d}")));
            }
            if (d - distances[j * n + i]).abs() > 1e-9 {
                return Err(Error::invalid("erope_bias", "asymmetric distance matrix"));
            }
        }
    }
    let mut out = vec![vec![0.0; n * n]; num_heads];
    for (h, mat) in out.iter_mut().enumerate() {
        let w = &head_weights[h * m..(h + 1) * m];
        for (b, &r) in mat.iter_mut().zip(distances.iter()) {
            let mut acc = 0.0;
            for (wk, &om) in w.iter().zip(bank.frequencies.iter()) {
                acc += wk * sinc(om * r);
            }
            *b = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
        loop {
            let v: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 0.1 && n < 1.0 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        }
    }

    #[test]
    fn legendre_endpoint_and_closed_forms() {
        for l in 0..=8 {
            assert!((legendre_polynomial(l, 1.0).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((legendre_polynomial(2, 0.0).unwrap() - -0.5).abs() < 1e-15);
        assert!(legendre_polynomial(3, 1.5).is_err());
    }

    #[test]
    fn legendre_p5_grid_vs_explicit_series() {
        // P5(x) = (63x^5 - 70x^3 + 15x)/8
        for i in 0..=100 {
            let x = -1.0 + 2.0 * i as f64 / 100.0;
            let explicit = (63.0 * x.powi(5) - 70.0 * x.powi(3) + 15.0 * x) / 8.0;
            assert!((legendre_polynomial(5, x).unwrap() - explicit).abs() < 1e-12);
        }
    }

    #[test]
    fn sh_low_degree_values() {
        let blocks = real_spherical_harmonics(0, [0.3, -0.9, 0.316227766016838]).unwrap();
        assert!((blocks[0][0] - 0.282_094_791_773_878_14).abs() < 1e-14);

        let blocks = real_spherical_harmonics(1, [0.0, 0.0, 1.0]).unwrap();
        assert!((blocks[1][1] - (3.0 / FOUR_PI).sqrt()).abs() < 1e-14);
        assert!(blocks[1][0].abs() < 1e-14 && blocks[1][2].abs() < 1e-14);

        assert!(real_spherical_harmonics(2, [0.0, 0.0, 0.0]).is_err());
        assert!(real_spherical_harmonics(2, [0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn sh_addition_theorem() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let a = random_unit(&mut rng);
            let b = random_unit(&mut rng);
            let ya = real_spherical_harmonics(4, a).unwrap();
            let yb = real_spherical_harmonics(4, b).unwrap();
            let cos_theta = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            for l in 0..=4 {
                let dot: f64 = ya[l].iter().zip(yb[l].iter()).map(|(p, q)| p * q).sum();
                let expected = (2 * l + 1) as f64 / FOUR_PI
                    * legendre_polynomial(l, cos_theta.clamp(-1.0, 1.0)).unwrap();
                assert!((dot - expected).abs() < 1e-10, "l={l} dot={dot} exp={expected}");
            }
        }
    }

    #[test]
    fn allocation_invariants() {
        let a = DegreeAllocation::equal_split(3, 10).unwrap();
        assert_eq!(a.repeats, vec![3, 3, 2, 2]);
        assert_eq!(a.head_dim, 10);
        assert_eq!(a.expanded_dim, 3 + 9 + 10 + 14);
        assert!(DegreeAllocation::equal_split(3, 2).is_err());
    }

    #[test]
    fn lae_code_degenerate_l0_is_constant() {
        let alloc = DegreeAllocation::new(0, vec![4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let code = build_lae_code(random_unit(&mut rng), &alloc).unwrap();
        assert_eq!(code.len(), 4);
        for &c in &code {
            assert!((c - 1.0 / FOUR_PI.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn lae_block_inner_products_reduce_to_legendre() {
        let alloc = DegreeAllocation::equal_split(3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let a = random_unit(&mut rng);
            let b = random_unit(&mut rng);
            let ga = build_lae_code(a, &alloc).unwrap();
            let gb = build_lae_code(b, &alloc).unwrap();
            let cos_theta = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
            let mut off = 0;
            for (l, &r) in alloc.repeats.iter().enumerate() {
                let width = r * (2 * l + 1);
                let dot: f64 = ga[off..off + width]
                    .iter()
                    .zip(&gb[off..off + width])
                    .map(|(p, q)| p * q)
                    .sum();
                let expected = r as f64 * (2 * l + 1) as f64 / FOUR_PI
                    * legendre_polynomial(l, cos_theta).unwrap();
                assert!((dot - expected).abs() < 1e-10);
                off += width;
            }
        }
    }

    #[test]
    fn lae_inner_products_rotation_invariant() {
        let alloc = DegreeAllocation::equal_split(2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (s, c) = (0.7f64.sin(), 0.7f64.cos());
        let rot = [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]];
        for _ in 0..50 {
            let a = random_unit(&mut rng);
            let b = random_unit(&mut rng);
            let ra = crate::geometry::matvec(&rot, a);
            let rb = crate::geometry::matvec(&rot, b);
            let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(p, q)| p * q).sum() };
            let d0 = dot(
                &build_lae_code(a, &alloc).unwrap(),
                &build_lae_code(b, &alloc).unwrap(),
            );
            let d1 = dot(
                &build_lae_code(ra, &alloc).unwrap(),
                &build_lae_code(rb, &alloc).unwrap(),
            );
            assert!((d0 - d1).abs() < 1e-10);
        }
    }

    #[test]
    fn expand_head_examples() {
        let alloc = DegreeAllocation::new(1, vec![1, 1]).unwrap();
        let e = lae_expand_head(&[3.0, 5.0], &alloc).unwrap();
        assert_eq!(e, vec![3.0, 5.0, 5.0, 5.0]);

        let alloc0 = DegreeAllocation::new(0, vec![3]).unwrap();
        let e0 = lae_expand_head(&[1.0, 2.0, 3.0], &alloc0).unwrap();
        assert_eq!(e0, vec![1.0, 2.0, 3.0]);

        assert!(lae_expand_head(&[1.0], &alloc).is_err());
    }

    #[test]
    fn modulated_inner_product_is_legendre_series() {
        // <expand(q)⊙γ_t, expand(k)⊙γ_s> = Σ_ℓ (2ℓ+1)/(4π)·(Σ_{p∈ℓ} q_p k_p)·P_ℓ(cosθ)
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for &(l, dh) in &[(1usize, 2usize), (1, 4), (2, 3), (3, 8)] {
            let alloc = DegreeAllocation::equal_split(l, dh).unwrap();
            let q: Vec<f64> = (0..dh).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..dh).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = random_unit(&mut rng);
            let b = random_unit(&mut rng);
            let gq = {
                let e = lae_expand_head(&q, &alloc).unwrap();
                let g = build_lae_code(a, &alloc).unwrap();
                e.iter().zip(&g).map(|(x, y)| x * y).collect::<Vec<_>>()
            };
            let gk = {
                let e = lae_expand_head(&k, &alloc).unwrap();
                let g = build_lae_code(b, &alloc).unwrap();
                e.iter().zip(&g).map(|(x, y)| x * y).collect::<Vec<_>>()
            };
            let actual: f64 = gq.iter().zip(&gk).map(|(x, y)| x * y).sum();
            let cos_theta = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
            let mut expected = 0.0;
            let mut p = 0;
            for (deg, &r) in alloc.repeats.iter().enumerate() {
                let qk: f64 = (p..p + r).map(|i| q[i] * k[i]).sum();
                expected += (2 * deg + 1) as f64 / FOUR_PI
                    * qk
                    * legendre_polynomial(deg, cos_theta).unwrap();
                p += r;
            }
            assert!((actual - expected).abs() < 1e-9, "L={l} dh={dh}");
        }
    }

    #[test]
    fn sinc_kernel_values() {
        let bank = FrequencyBank { frequencies: vec![1.0, 2.0] };
        let s0 = sinc_kernel(0.0, &bank);
        assert_eq!(s0, vec![1.0, 1.0]);
        let s = sinc_kernel(std::f64::consts::PI, &bank); // ω=1 -> sin(π)/π = 0
        assert!(s[0].abs() < 1e-15);
        let s = sinc_kernel(std::f64::consts::FRAC_PI_2, &bank);
        assert!((s[0] - 2.0 / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn sinc_bounds_and_smooth_origin() {
        let bank = FrequencyBank::default_bank(32).unwrap();
        for i in 0..2000 {
            let r = i as f64 * 0.01;
            for v in sinc_kernel(r, &bank) {
                assert!((-0.218..=1.0).contains(&v), "sinc out of range: {v}");
            }
        }
        // derivative -> 0 as r -> 0
        let h = 1e-6;
        for (sp, sm) in sinc_kernel(h, &bank).iter().zip(sinc_kernel(0.0, &bank).iter()) {
            assert!(((sp - sm) / h).abs() < 1e-3);
        }
    }

    #[test]
    fn erope_bias_against_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let n = 6;
        let bank = FrequencyBank::default_bank(32).unwrap();
        let heads = 3;
        let w: Vec<f64> = (0..heads * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Symmetric distances with zero diagonal.
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let r = rng.gen_range(0.5..12.0);
                d[i * n + j] = r;
                d[j * n + i] = r;
            }
        }
        let bias = erope_bias(&d, n, &bank, &w, heads).unwrap();
        for h in 0..heads {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for (k, &om) in bank.frequencies.iter().enumerate() {
                        let x = om * d[i * n + j];
                        let s = if x == 0.0 { 1.0 } else { x.sin() / x };
                        acc += w[h * 32 + k] * s;
                    }
                    assert!((bias[h][i * n + j] - acc).abs() < 1e-12);
                    assert!((bias[h][i * n + j] - bias[h][j * n + i]).abs() < 1e-12);
                }
            }
        }
        // zero weights -> zero bias
        let zero = erope_bias(&d, n, &bank, &vec![0.0; heads * 32], heads).unwrap();
        assert!(zero.iter().all(|m| m.iter().all(|&b| b == 0.0)));
        // single frequency, unit weight -> sinc values directly
        let single = FrequencyBank { frequencies: vec![2.0] };
        let b1 = erope_bias(&d, n, &single, &[1.0], 1).unwrap();
        for (bv, &dv) in b1[0].iter().zip(d.iter()) {
            let x = 2.0 * dv;
            let s = if x == 0.0 { 1.0 } else { x.sin() / x };
            assert!((bv - s).abs() < 1e-15);
        }
        // negative distance rejected
        let mut bad = d.clone();
        bad[1] = -1.0;
        bad[n] = -1.0;
        assert!(erope_bias(&bad, n, &bank, &w, heads).is_err());
    }

    #[test]
    fn frequency_bank_log_spacing() {
        let bank = FrequencyBank::default_bank(32).unwrap();
        assert_eq!(bank.len(), 32);
        assert!(bank.frequencies.windows(2).all(|w| w[1] > w[0]));
        let r0 = bank.frequencies[1] / bank.frequencies[0];
        let r1 = bank.frequencies[31] / bank.frequencies[30];
        assert!((r0 - r1).abs() < 1e-12);
        assert!((bank.frequencies[0] - 2.0 * std::f64::consts::PI / 50.0).abs() < 1e-12);
        assert!((bank.frequencies[31] - 2.0 * std::f64::consts::PI / 0.5).abs() < 1e-9);
    }
}
