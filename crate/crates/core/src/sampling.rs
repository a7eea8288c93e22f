//! Numeric primitives shared by the renderer and the networks: stochastic
//! rounding of RRS factors, input encodings and the RRSNet output activation.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Number of negative inputs that `box_cox` clamped to zero.
static BOX_COX_CLAMPED: AtomicU64 = AtomicU64::new(0);

pub fn box_cox_clamp_count() -> u64 {
    BOX_COX_CLAMPED.load(Ordering::Relaxed)
}

/// Integer sample count for a real factor `q`: `floor(q) + 1` with
/// probability `q - floor(q)`, otherwise `floor(q)`.
pub fn stochastic_round(q: f64, u: f64) -> Result<u32> {
    if !q.is_finite() || q < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "stochastic_round needs a finite non-negative factor, got {q}"
        )));
    }
    let floor = q.floor();
    let residual = q - floor;
    let extra = if u < residual { 1 } else { 0 };
    Ok(floor as u32 + extra)
}

/// Which encoding produced an [`EncodedFeature`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    OneBlob { bins: usize },
    BoxCox,
    Remap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeature {
    pub values: Vec<f32>,
    pub layout: Layout,
}

/// One-blob kernel parameters: Gaussian bumps with width `1/bins` centred at
/// `(i + 0.5) / bins`, normalised to sum to one.
#[derive(Debug, Clone, Copy)]
pub struct OneBlob {
    pub sigma_scale: f32,
}

impl Default for OneBlob {
    fn default() -> Self {
        Self { sigma_scale: 1.0 }
    }
}

impl OneBlob {
    pub fn encode_into(&self, x: f32, out: &mut [f32]) {
        let bins = out.len();
        let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        let sigma = self.sigma_scale / bins as f32;
        let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
        let mut sum = 0.0;
        for (i, o) in out.iter_mut().enumerate() {
            let c = (i as f32 + 0.5) / bins as f32;
            let d = x - c;
            *o = (-d * d * inv_two_sigma2).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
}

pub fn one_blob_encode(x: f32, bins: usize) -> EncodedFeature {
    let mut values = vec![0.0; bins];
    OneBlob::default().encode_into(x, &mut values);
    EncodedFeature {
        values,
        layout: Layout::OneBlob { bins },
    }
}

/// `(x^lambda - 1) / lambda`; negative inputs are clamped to zero and counted.
pub fn box_cox(x: f32, lambda: f32) -> f32 {
    let x = if x < 0.0 || x.is_nan() {
        BOX_COX_CLAMPED.fetch_add(1, Ordering::Relaxed);
        0.0
    } else {
        x
    };
    if lambda == 0.5 {
        2.0 * (x.sqrt() - 1.0)
    } else if lambda.abs() < 1e-6 {
        x.max(f32::MIN_POSITIVE).ln()
    } else {
        (x.powf(lambda) - 1.0) / lambda
    }
}

pub fn roughness_remap(alpha: f32) -> f32 {
    1.0 - (-alpha.max(0.0)).exp()
}

/// Softplus on the negative half-line, `0.5x + ln 2` on the positive one.
#[inline]
pub fn softplus_mod(x: f32) -> f32 {
    if x < 0.0 {
        x.exp().ln_1p()
    } else {
        0.5 * x + std::f32::consts::LN_2
    }
}

#[inline]
pub fn softplus_mod_derivative(x: f32) -> f32 {
    if x < 0.0 {
        let e = x.exp();
        e / (1.0 + e)
    } else {
        0.5
    }
}

/// Pre-activation that makes `softplus_mod` output `y > 0`.
pub fn softplus_mod_inverse(y: f32) -> f32 {
    let ln2 = std::f32::consts::LN_2;
    if y >= ln2 {
        2.0 * (y - ln2)
    } else {
        y.exp_m1().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    #[test]
    fn stochastic_round_examples() {
        assert_eq!(stochastic_round(2.0, 0.0).unwrap(), 2);
        assert_eq!(stochastic_round(2.0, 0.999).unwrap(), 2);
        assert_eq!(stochastic_round(1.3, 0.2).unwrap(), 2);
        assert_eq!(stochastic_round(1.3, 0.31).unwrap(), 1);
        assert!(stochastic_round(-0.1, 0.5).is_err());
        assert!(stochastic_round(f64::NAN, 0.5).is_err());
        assert!(stochastic_round(f64::INFINITY, 0.5).is_err());
    }

    #[test]
    fn stochastic_round_mean_at_point_seven() {
        let n = 1_000_000;
        let mut rng = RngStream::new(11, 0);
        let sum: u64 = (0..n)
            .map(|_| stochastic_round(0.7, rng.next_f64()).unwrap() as u64)
            .sum();
        let mean = sum as f64 / n as f64;
        assert!((mean - 0.7).abs() < 4.0 * (0.21f64 / n as f64).sqrt());
    }

    #[test]
    fn one_blob_symmetry_and_shape() {
        let e = one_blob_encode(0.5, 4);
        assert_eq!(e.values.len(), 4);
        assert!((e.values[1] - e.values[2]).abs() < 1e-6);
        assert!((e.values[0] - e.values[3]).abs() < 1e-6);

        let e = one_blob_encode(0.0, 4);
        assert!(e.values.windows(2).all(|w| w[0] > w[1]));

        // centres at 0.125, 0.375, ...: 0.25 is equidistant from bins 0 and 1,
        // so nudge to either side and the nearest centre must win.
        let argmax = |v: &[f32]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&one_blob_encode(0.24, 4).values), 0);
        assert_eq!(argmax(&one_blob_encode(0.26, 4).values), 1);
        assert_eq!(argmax(&one_blob_encode(0.9, 8).values), 7);
    }

    #[test]
    fn box_cox_examples() {
        assert_eq!(box_cox(1.0, 0.5), 0.0);
        assert_eq!(box_cox(4.0, 0.5), 2.0);
        assert_eq!(box_cox(0.0, 0.5), -2.0);
        let before = box_cox_clamp_count();
        assert_eq!(box_cox(-3.0, 0.5), -2.0);
        assert!(box_cox_clamp_count() > before);
    }

    #[test]
    fn roughness_remap_examples() {
        assert_eq!(roughness_remap(0.0), 0.0);
        assert!((roughness_remap(1.0) - 0.632_120_56).abs() < 1e-6);
        let big = roughness_remap(50.0);
        assert!(big <= 1.0 && big > 0.999);
    }

    #[test]
    fn softplus_mod_examples() {
        assert!((softplus_mod(0.0) - std::f32::consts::LN_2).abs() < 1e-7);
        assert!((softplus_mod(-1e-7) - std::f32::consts::LN_2).abs() < 1e-6);
        assert!((softplus_mod(2.0) - (1.0 + std::f32::consts::LN_2)).abs() < 1e-6);
        let tiny = softplus_mod(-20.0);
        assert!(tiny > 0.0 && (tiny - (-20.0f32).exp()).abs() < 1e-12);
        // value and slope continuity at zero
        let gap = (softplus_mod(-1e-7) - softplus_mod(0.0)).abs();
        assert!(gap < 1e-6);
        let dgap = (softplus_mod_derivative(-1e-7) - softplus_mod_derivative(0.0)).abs();
        assert!(dgap < 1e-6);
        for y in [0.01f32, 0.5, 1.0, 3.0] {
            assert!((softplus_mod(softplus_mod_inverse(y)) - y).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn one_blob_entries_in_unit_range(x in -1.0f32..2.0, wide in any::<bool>()) {
            let bins = if wide { 8 } else { 4 };
            let e = one_blob_encode(x, bins);
            prop_assert_eq!(e.values.len(), bins);
            prop_assert!(e.values.iter().all(|v| (0.0..=1.0).contains(v)));
            let s: f32 = e.values.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
        }

        #[test]
        fn softplus_mod_positive_and_monotone(a in -60.0f32..60.0, b in -60.0f32..60.0) {
            prop_assert!(softplus_mod(a) > 0.0);
            if a < b {
                prop_assert!(softplus_mod(a) <= softplus_mod(b));
            }
        }

        #[test]
        fn box_cox_monotone_and_finite(a in 0.0f32..1e6, b in 0.0f32..1e6) {
            prop_assert!(box_cox(a, 0.5).is_finite());
            if a < b {
                prop_assert!(box_cox(a, 0.5) <= box_cox(b, 0.5));
            }
        }

        #[test]
        fn stochastic_round_brackets_q(q in 0.0f64..100.0, u in 0.0f64..1.0) {
            let k = stochastic_round(q, u).unwrap() as f64;
            prop_assert!(k == q.floor() || k == q.floor() + 1.0);
        }
    }
}
