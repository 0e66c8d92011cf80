//! Signed one-hot observation encoding and the associated affine
//! decomposition of functions on the alphabet.
//!
//! `e(z)` is the one-hot vector for `z = 1..m`, and `e(0)` is chosen so
//! that the encodings sum to zero. Any `s: {0..m} -> R` then has a unique
//! representation `s(z) = s_bar + s_tilde' e(z)`.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Encoding `e(z)` in `R^m`.
pub fn e_encode(z: usize, m: usize) -> Result<DVector<f64>> {
    if m == 0 {
        return Err(Error::Dimension("alphabet parameter m must be >= 1".into()));
    }
    if z > m {
        return Err(Error::Dimension(format!(
            "symbol {z} outside alphabet 0..={m}"
        )));
    }
    let mut e = DVector::zeros(m);
    if z == 0 {
        e.fill(-1.0);
    } else {
        e[z - 1] = 1.0;
    }
    Ok(e)
}

/// Unique decomposition `s(z) = s_bar + s_tilde' e(z)`:
/// `s_bar` is the uniform average over the alphabet and
/// `s_tilde(i) = s(i) - s_bar`.
pub fn decompose(s: &[f64]) -> (f64, DVector<f64>) {
    debug_assert!(s.len() >= 2, "need values for all of 0..=m");
    let m = s.len() - 1;
    let s_bar = s.iter().sum::<f64>() / (m + 1) as f64;
    let s_tilde = DVector::from_fn(m, |i, _| s[i + 1] - s_bar);
    (s_bar, s_tilde)
}

/// Evaluate `s_bar + s_tilde' e(z)` without materializing `e(z)`.
pub fn decomposed_eval(s_bar: f64, s_tilde: &DVector<f64>, z: usize) -> f64 {
    if z == 0 {
        s_bar - s_tilde.sum()
    } else {
        s_bar + s_tilde[z - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_encoding_is_signed() {
        assert_eq!(e_encode(1, 1).unwrap()[0], 1.0);
        assert_eq!(e_encode(0, 1).unwrap()[0], -1.0);
    }

    #[test]
    fn encodings_sum_to_zero() {
        for m in [1usize, 2, 5] {
            let mut sum = DVector::zeros(m);
            for z in 0..=m {
                sum += e_encode(z, m).unwrap();
            }
            assert_eq!(sum.amax(), 0.0);
        }
    }

    #[test]
    fn ternary_zero_symbol() {
        let e0 = e_encode(0, 2).unwrap();
        assert_eq!(e0[0], -1.0);
        assert_eq!(e0[1], -1.0);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(e_encode(3, 2).is_err());
    }

    #[test]
    fn binary_decomposition_is_half_sum_half_difference() {
        // s(1)=3, s(0)=1 -> s_bar=2, s_tilde=1.
        let (s_bar, s_tilde) = decompose(&[1.0, 3.0]);
        assert_eq!(s_bar, 2.0);
        assert_eq!(s_tilde[0], 1.0);
    }

    #[test]
    fn constant_function_has_zero_tilde() {
        let (s_bar, s_tilde) = decompose(&[4.2, 4.2, 4.2]);
        assert!((s_bar - 4.2).abs() < 1e-15);
        assert_eq!(s_tilde.amax(), 0.0);
    }

    #[test]
    fn reconstruction_is_exact() {
        let s = [0.3, -1.7, 2.2, 0.0, 5.5];
        let (s_bar, s_tilde) = decompose(&s);
        for (z, &want) in s.iter().enumerate() {
            let e = e_encode(z, 4).unwrap();
            let got = s_bar + s_tilde.dot(&e);
            assert!((got - want).abs() < 1e-15);
            assert!((decomposed_eval(s_bar, &s_tilde, z) - want).abs() < 1e-15);
        }
    }
}
