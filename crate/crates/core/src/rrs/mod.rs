//! Russian roulette and splitting: factor normalization, rate control,
//! stochastic realization and the classic factor heuristics.
//!
//! Raw factors `q_orig` from any strategy go through three steps before they
//! become child counts:
//!
//! 1. [`normalize`] rescales them by `F_norm = Npx / sum(q_orig)` when that
//!    factor is below one, so the expected number of children never exceeds
//!    the pixel budget. Factors are never scaled up.
//! 2. [`apply_rate_control`] multiplies by `f_rate * alpha` to leave head
//!    room against realized counts overshooting the budget.
//! 3. [`realize`] turns each factor into an integer by stochastic rounding.

pub mod strategy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Rgb;
use crate::rng::RngStream;
use crate::sampling::stochastic_round;

pub use strategy::{adrrs_guard, evaluate_factors, FactorContext, FactorSource, RadianceSource, ShadingEvent, Strategy, StrategyKind};

/// The factor of one path through every stage of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrsDecision {
    pub q_orig: f32,
    pub q_norm: f32,
    pub q_rate: f32,
    pub count: u32,
}

impl RrsDecision {
    pub fn residual(&self) -> f32 {
        self.q_rate - self.q_rate.floor()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateControl {
    pub f_rate: f32,
    pub alpha: f32,
    pub epsilon: f32,
    #[serde(skip)]
    pub overflow_events: u64,
}

impl Default for RateControl {
    fn default() -> Self {
        Self {
            f_rate: 0.85,
            alpha: 1.0,
            epsilon: 0.01,
            overflow_events: 0,
        }
    }
}

impl RateControl {
    pub fn new(f_rate: f32, epsilon: f32) -> Result<Self> {
        if !(f_rate > 0.0 && f_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!("f_rate must lie in (0, 1], got {f_rate}")));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!("epsilon must lie in [0, 1), got {epsilon}")));
        }
        Ok(Self {
            f_rate,
            alpha: 1.0,
            epsilon,
            overflow_events: 0,
        })
    }

    /// A controller that leaves factors untouched.
    pub fn disabled() -> Self {
        Self {
            f_rate: 1.0,
            alpha: 1.0,
            epsilon: 0.0,
            overflow_events: 0,
        }
    }

    pub fn effective(&self) -> f32 {
        self.f_rate * self.alpha
    }

    /// Shrink `alpha` after a realized count exceeded the budget.
    pub fn record_overflow(&mut self) {
        self.overflow_events += 1;
        self.alpha = (self.alpha * (1.0 - self.epsilon)).max(f32::MIN_POSITIVE);
    }
}

/// Scale factors so they sum to `npx` when they would otherwise exceed it.
///
/// Returns the (possibly unchanged) factors and `F_norm = npx / sum`. When
/// every factor is zero, `F_norm` is infinite and the input passes through.
pub fn normalize(q_orig: &[f32], npx: usize) -> Result<(Vec<f32>, f64)> {
    if npx == 0 {
        return Err(Error::InvalidArgument("pixel budget must be positive".into()));
    }
    let mut sum = 0.0f64;
    for &q in q_orig {
        if !q.is_finite() || q < 0.0 {
            return Err(Error::InvalidArgument(format!("RRS factor must be finite and non-negative, got {q}")));
        }
        sum += q as f64;
    }
    if sum == 0.0 {
        return Ok((q_orig.to_vec(), f64::INFINITY));
    }
    let f_norm = npx as f64 / sum;
    if f_norm >= 1.0 {
        return Ok((q_orig.to_vec(), f_norm));
    }
    Ok((q_orig.iter().map(|&q| (q as f64 * f_norm) as f32).collect(), f_norm))
}

pub fn apply_rate_control(q_norm: &[f32], rc: &RateControl) -> Vec<f32> {
    let s = rc.effective();
    if s == 1.0 {
        return q_norm.to_vec();
    }
    q_norm.iter().map(|&q| q * s).collect()
}

/// Stochastically round every factor; `uniform(i)` supplies the draw for
/// entry `i`. Returns the counts and their total.
pub fn realize(q_rate: &[f32], mut uniform: impl FnMut(usize) -> f64) -> Result<(Vec<u32>, u64)> {
    let mut total = 0u64;
    let counts = q_rate
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let k = stochastic_round(q as f64, uniform(i))?;
            total += k as u64;
            Ok(k)
        })
        .collect::<Result<Vec<u32>>>()?;
    Ok((counts, total))
}

pub fn realize_with_rng(q_rate: &[f32], rng: &mut RngStream) -> Result<(Vec<u32>, u64)> {
    realize(q_rate, |_| rng.next_f64())
}

/// Bernstein bound on `P(S' >= npx)` when factors summing to `npx` are
/// scaled by `f_rate`.
pub fn bernstein_bound(f_rate: f64, npx: usize) -> f64 {
    if f_rate >= 1.0 {
        return 1.0;
    }
    let d = 1.0 - f_rate;
    (-(d * d) * npx as f64 / (2.0 * f_rate + (2.0 / 3.0) * d)).exp()
}

/// Throughput-based roulette: survive with probability `min(1, lum(w))`.
pub fn throughput_rr(weight: Rgb) -> f32 {
    let l = weight.luminance();
    if l.is_finite() {
        l.clamp(0.0, 1.0)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdrrsParams {
    pub q_min: f32,
    pub q_max: f32,
    /// Dark-pixel guard as a fraction of the mean image luminance.
    pub relative_guard: f32,
}

impl Default for AdrrsParams {
    fn default() -> Self {
        Self {
            q_min: 0.05,
            q_max: 20.0,
            relative_guard: 1e-4,
        }
    }
}

/// Expected contribution of the path relative to its pixel:
/// `lum(w * L) / (lum(I) + guard)`, clamped.
pub fn adrrs_factor(weight: Rgb, radiance: Rgb, pixel: Rgb, guard: f32, params: &AdrrsParams) -> f32 {
    let num = (weight * radiance).luminance();
    let den = pixel.luminance().max(0.0) + guard.max(1e-8);
    let q = num / den;
    if q.is_nan() {
        return params.q_min;
    }
    q.clamp(params.q_min, params.q_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let (q, f) = normalize(&[1.0; 16], 16).unwrap();
        assert_eq!(q, vec![1.0; 16]);
        assert_eq!(f, 1.0);

        let (q, f) = normalize(&[2.0, 2.0], 2).unwrap();
        assert_eq!(f, 0.5);
        assert_eq!(q, vec![1.0, 1.0]);

        let (q, f) = normalize(&[0.1, 0.1], 2).unwrap();
        assert!((f - 10.0).abs() < 1e-6);
        assert_eq!(q, vec![0.1, 0.1]);

        let (q, f) = normalize(&[0.0, 0.0], 2).unwrap();
        assert!(f.is_infinite());
        assert_eq!(q, vec![0.0, 0.0]);

        assert!(normalize(&[1.0, f32::NAN], 2).is_err());
        assert!(normalize(&[1.0, -1.0], 2).is_err());
    }

    #[test]
    fn rate_control_examples() {
        let q = vec![0.5, 1.5, 2.0];
        assert_eq!(apply_rate_control(&q, &RateControl::disabled()), q);

        let rc = RateControl::default();
        let q_norm = vec![1.0f32; 100];
        let total: f32 = apply_rate_control(&q_norm, &rc).iter().sum();
        assert!((total - 85.0).abs() < 1e-3);

        let mut rc = RateControl::default();
        rc.record_overflow();
        assert!((rc.alpha - 0.99).abs() < 1e-7);
        assert_eq!(rc.overflow_events, 1);
        assert!(RateControl::new(1.5, 0.01).is_err());
    }

    #[test]
    fn integer_factors_realize_exactly() {
        let q = vec![0.0, 1.0, 3.0, 2.0];
        for seed in 0..10 {
            let mut rng = RngStream::new(seed, 0);
            let (counts, total) = realize_with_rng(&q, &mut rng).unwrap();
            assert_eq!(counts, vec![0, 1, 3, 2]);
            assert_eq!(total, 6);
        }
    }

    #[test]
    fn bernstein_examples() {
        // exponent coefficient -(0.15^2) / (1.7 + 0.1) = -0.0125
        let coef = bernstein_bound(0.85, 1).ln();
        assert!((coef + 0.0125).abs() < 1e-9);
        assert!((bernstein_bound(0.85, 100) - (-1.25f64).exp()).abs() < 1e-12);
        assert!((bernstein_bound(0.85, 100) - 0.2865).abs() < 1e-4);
        assert!(bernstein_bound(1.0 - 1e-9, 1000) > 0.999);
        assert_eq!(bernstein_bound(1.0, 10), 1.0);
    }

    #[test]
    fn throughput_rr_examples() {
        assert_eq!(throughput_rr(Rgb::splat(1.0)), 1.0);
        assert_eq!(throughput_rr(Rgb::BLACK), 0.0);
        assert!((throughput_rr(Rgb::splat(0.5)) - 0.5).abs() < 1e-6);
        assert_eq!(throughput_rr(Rgb::splat(7.0)), 1.0);
    }

    #[test]
    fn adrrs_examples() {
        let p = AdrrsParams::default();
        let w = Rgb::splat(0.5);
        let l = Rgb::splat(2.0);
        let q = adrrs_factor(w, l, Rgb::splat(1.0), 1e-6, &p);
        assert!((q - 1.0).abs() < 1e-4);
        assert_eq!(adrrs_factor(w, Rgb::BLACK, Rgb::splat(1.0), 1e-6, &p), p.q_min);
        let q = adrrs_factor(w, Rgb::splat(8.0), Rgb::splat(1.0), 1e-6, &p);
        assert!((q - 4.0).abs() < 1e-3);
        assert_eq!(adrrs_factor(w, Rgb::splat(1e6), Rgb::splat(1.0), 1e-6, &p), p.q_max);
    }

    proptest! {
        #[test]
        fn normalization_preserves_order_and_budget(
            q in proptest::collection::vec(0.0f32..10.0, 1..200),
            npx in 1usize..300,
        ) {
            let (n, f) = normalize(&q, npx).unwrap();
            let sum: f64 = n.iter().map(|&x| x as f64).sum();
            if f < 1.0 {
                prop_assert!((sum - npx as f64).abs() <= 1e-3 * npx as f64);
            } else {
                prop_assert_eq!(&n, &q);
            }
            for i in 0..q.len() {
                for j in 0..q.len() {
                    if q[i] < q[j] {
                        prop_assert!(n[i] <= n[j]);
                    }
                }
            }
        }
    }
}
