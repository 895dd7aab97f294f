//! Central finite differences — the independent oracle for every gradient
//! path in the crate. Must stay free of tape machinery.

use crate::error::{Error, Result};

/// Central-difference gradient estimate of a scalar function, component-wise.
pub fn finite_difference_gradient<F>(mut f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::invalid("finite_difference_gradient", "eps must be > 0"));
    }
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let fp = f(&probe)?;
        probe[i] = x[i] - eps;
        let fm = f(&probe)?;
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite differences at component {i} (f+={fp}, f-={fm})"),
            });
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(grad)
}

/// Max relative deviation between two gradient vectors:
/// `max_i |a_i - b_i| / max(scale, |a_i|, |b_i|)`.
pub fn max_relative_deviation(a: &[f64], b: &[f64], scale: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs() / scale.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm_gradient() {
        let f = |x: &[f64]| Ok(x.iter().map(|v| v * v).sum());
        let g = finite_difference_gradient(f, &[1.0, 0.0, 0.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!(g[1].abs() < 1e-8);
        assert!(g[2].abs() < 1e-8);
    }

    #[test]
    fn sine_gradient_at_zero() {
        let f = |x: &[f64]| Ok(x[0].sin());
        let eps = 1e-5;
        let g = finite_difference_gradient(f, &[0.0], eps).unwrap();
        assert!((g[0] - 1.0).abs() < eps * eps);
    }

    #[test]
    fn non_finite_rejected() {
        let f = |_: &[f64]| Ok(f64::NAN);
        assert!(finite_difference_gradient(f, &[0.0], 1e-5).is_err());
    }
}
