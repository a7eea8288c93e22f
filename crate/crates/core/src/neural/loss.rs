//! Losses and their gradients. RRSNet never sees the pixel variance
//! directly; its gradient is transferred through the derivative of the
//! variance with respect to the factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Rgb;

/// Guard shared by the relative losses and the pixel error.
pub const LOSS_EPSILON: f32 = 0.01;

/// Relative squared error `(a - b)^2 / (b^2 + eps)` with `b` held constant.
/// Returns the value and its derivative in `a`.
pub fn l2_relative(a: f32, b: f32, eps: f32) -> (f32, f32) {
    let inv = 1.0 / (b * b + eps);
    let d = a - b;
    (d * d * inv, 2.0 * d * inv)
}

/// Same error normalized by the held-constant prediction instead,
/// `(a - b)^2 / (sg(a)^2 + eps)`. Its minimizer over noisy `b` is the mean
/// of `b`.
pub fn l2_relative_to_prediction(a: f32, b: f32, eps: f32) -> (f32, f32) {
    let inv = 1.0 / (a * a + eps);
    let d = a - b;
    (d * d * inv, 2.0 * d * inv)
}

/// How StatNet's outputs are compared with a radiance sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatLossForm {
    /// Errors normalized by the target; the variance output
    /// `m2 - sg(m)^2` is fitted to `(L - sg(m))^2`.
    TargetRelative,
    /// Errors normalized by the held-constant prediction; the second
    /// moment is fitted to `L^2` directly.
    #[default]
    Moments,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatLoss {
    pub value: f32,
    pub d_mean: [f32; 3],
    pub d_second: [f32; 3],
}

/// Mean and second-moment losses for one sample; see [`StatLossForm`].
pub fn statnet_loss(mean: [f32; 3], second: [f32; 3], target: [f32; 3], eps: f32, form: StatLossForm) -> StatLoss {
    let mut out = StatLoss {
        value: 0.0,
        d_mean: [0.0; 3],
        d_second: [0.0; 3],
    };
    for c in 0..3 {
        let l = target[c];
        let ((v1, g1), (v2, g2)) = match form {
            StatLossForm::TargetRelative => {
                let m = mean[c];
                let dev = l - m;
                (l2_relative(m, l, eps), l2_relative(second[c] - m * m, dev * dev, eps))
            }
            StatLossForm::Moments => (
                l2_relative_to_prediction(mean[c], l, eps),
                l2_relative_to_prediction(second[c], l * l, eps),
            ),
        };
        out.value += v1 + v2;
        out.d_mean[c] = g1;
        out.d_second[c] = g2;
    }
    out
}

/// d Var / d p for Russian roulette with survival probability `p`, given the
/// second moment of the suffix estimate (luminance).
pub fn grad_pixelvar_wrt_rr(weight: Rgb, second_moment: f32, p: f32) -> Result<f32> {
    if !(p > 0.0) {
        return Err(Error::InvalidArgument(format!("roulette probability must be positive, got {p}")));
    }
    let w = weight.luminance();
    Ok(-w * w * second_moment / (p * p))
}

/// d Var / d n for splitting into `n` samples, given the variance of the
/// suffix estimate (luminance). Rounding variance is ignored.
pub fn grad_pixelvar_wrt_split(weight: Rgb, variance: f32, n: f32) -> Result<f32> {
    if !(n > 0.0) {
        return Err(Error::InvalidArgument(format!("split count must be positive, got {n}")));
    }
    let w = weight.luminance();
    Ok(-w * w * variance / (n * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub avg: f32,
    pub min: f32,
    pub rrs: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            avg: 0.01,
            min: 0.05,
            rrs: 0.01,
        }
    }
}

/// One RRSNet training sample reduced to what the loss needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrsTerm {
    /// Current network factor.
    pub q: f32,
    /// Normalized factor the sample was rendered with.
    pub q_norm: f32,
    pub weight: Rgb,
    /// StatNet second moment (luminance).
    pub second_moment: f32,
    /// StatNet variance (luminance).
    pub variance: f32,
    pub pixel: u32,
}

/// Per-pixel relative error `E_i` and pixel luminance `I_i`. Non-finite
/// entries mark pixels without an error estimate.
#[derive(Debug, Clone, Copy)]
pub struct PixelErrors<'a> {
    pub error: &'a [f32],
    pub intensity: &'a [f32],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RrsLoss {
    pub l_min: f32,
    pub l_avg: f32,
    pub l_rrs: f32,
    pub total: f32,
    /// Batch-mean gradient with respect to each sample's `q`.
    pub d_q: Vec<f32>,
    pub skipped: u64,
}

/// Combined RRSNet loss. Pixel losses are shared equally among the pixel's
/// samples in the batch; the variance derivative takes the roulette branch
/// when the sample's normalized factor was below one and the splitting
/// branch otherwise. `q_floor` bounds the factor used in the derivative.
pub fn rrsnet_loss(terms: &[RrsTerm], errors: &PixelErrors, w: LossWeights, eps: f32, q_floor: f32) -> RrsLoss {
    let n = terms.len();
    let mut out = RrsLoss {
        d_q: vec![0.0; n],
        ..Default::default()
    };
    if n == 0 {
        return out;
    }
    let valid = |px: u32| errors.error.get(px as usize).is_some_and(|e| e.is_finite());
    let (mut sum, mut cnt) = (0.0f64, 0usize);
    for &e in errors.error.iter().filter(|e| e.is_finite()) {
        sum += e as f64;
        cnt += 1;
    }
    let e_avg = if cnt > 0 { (sum / cnt as f64) as f32 } else { 0.0 };

    let mut k = std::collections::BTreeMap::<u32, u32>::new();
    for t in terms {
        if valid(t.pixel) {
            *k.entry(t.pixel).or_default() += 1;
        }
    }
    if !k.is_empty() {
        for &px in k.keys() {
            let e = errors.error[px as usize];
            out.l_min += e;
            out.l_avg += (e - e_avg) * (e - e_avg);
        }
        out.l_min /= k.len() as f32;
        out.l_avg /= k.len() as f32;
    }

    let inv_n = 1.0 / n as f32;
    for (i, t) in terms.iter().enumerate() {
        let d_rrs = 2.0 * (t.q - t.q_norm);
        out.l_rrs += (t.q - t.q_norm) * (t.q - t.q_norm) * inv_n;
        let mut g = w.rrs * d_rrs;
        if valid(t.pixel) {
            let px = t.pixel as usize;
            let e = errors.error[px];
            let intensity = errors.intensity.get(px).copied().unwrap_or(0.0);
            let d_e = 1.0 / (intensity * intensity + eps);
            let q = t.q.max(q_floor);
            let d_var = if t.q_norm < 1.0 {
                grad_pixelvar_wrt_rr(t.weight, t.second_moment.max(0.0), q)
            } else {
                grad_pixelvar_wrt_split(t.weight, t.variance.max(0.0), q)
            }
            .unwrap_or(0.0);
            let share = 1.0 / k[&t.pixel] as f32;
            g += (w.avg * 2.0 * (e - e_avg) + w.min) * d_e * share * d_var;
        } else {
            out.skipped += 1;
        }
        out.d_q[i] = g * inv_n;
    }
    out.total = w.avg * out.l_avg + w.min * out.l_min + w.rrs * out.l_rrs;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn l2_formula_and_zero() {
        let (v, _) = l2_relative(2.0, 1.0, 0.01);
        assert!((v - 1.0 / 1.01).abs() < 1e-6);
        assert_eq!(l2_relative(0.7, 0.7, 0.01), (0.0, 0.0));
    }

    #[test]
    fn statnet_loss_vanishes_at_the_target() {
        for d in [StatLossForm::TargetRelative, StatLossForm::Moments] {
            let l = statnet_loss([0.5, 1.0, 2.0], [0.25, 1.0, 4.0], [0.5, 1.0, 2.0], 0.01, d);
            assert_eq!(l.value, 0.0);
            assert_eq!(l.d_mean, [0.0; 3]);
            assert_eq!(l.d_second, [0.0; 3]);
        }
    }

    #[test]
    fn statnet_mean_gradient_ignores_the_variance_term() {
        let (m, s, t) = ([0.3, 0.8, 1.2], [0.5, 0.1, 3.0], [1.0, 0.2, 0.7]);
        let d = StatLossForm::TargetRelative;
        let l = statnet_loss(m, s, t, 0.01, d);
        for c in 0..3 {
            assert_eq!(l.d_mean[c], l2_relative(m[c], t[c], 0.01).1);
        }
        // the target moves the value, never the gradient path into it
        let l2 = statnet_loss(m, s, [1.1, 0.2, 0.7], 0.01, d);
        assert_ne!(l.value, l2.value);
        // finite difference in the second moment
        let h = 1e-3;
        let up = statnet_loss(m, [s[0] + h, s[1], s[2]], t, 0.01, d).value;
        let dn = statnet_loss(m, [s[0] - h, s[1], s[2]], t, 0.01, d).value;
        assert!(((up - dn) / (2.0 * h) - l.d_second[0]).abs() < 1e-2);
    }

    #[test]
    fn prediction_denominator_is_minimized_by_the_sample_mean() {
        let samples = [0.0f32, 0.0, 3.0, 1.0];
        let at_mean = samples.iter().map(|&b| l2_relative_to_prediction(1.0, b, 0.01).1).sum::<f32>();
        assert!(at_mean.abs() < 1e-6);
        // normalizing by the target pulls the optimum toward small samples
        let literal = samples.iter().map(|&b| l2_relative(1.0, b, 0.01).1).sum::<f32>();
        assert!(literal > 0.0);
    }

    #[test]
    fn transfer_signs_and_scaling() {
        let w = Rgb::splat(0.5);
        let g1 = grad_pixelvar_wrt_rr(w, 2.0, 0.5).unwrap();
        let g2 = grad_pixelvar_wrt_rr(w, 2.0, 1.0).unwrap();
        assert!(g1 < 0.0 && (g1 / g2 - 4.0).abs() < 1e-5);
        let s1 = grad_pixelvar_wrt_split(w, 2.0, 2.0).unwrap();
        let s2 = grad_pixelvar_wrt_split(w, 2.0, 4.0).unwrap();
        assert!(s1 < 0.0 && (s1 / s2 - 4.0).abs() < 1e-5);
        assert!(grad_pixelvar_wrt_rr(w, 1.0, 0.0).is_err());
        assert!(grad_pixelvar_wrt_split(w, 1.0, -1.0).is_err());
    }

    /// Empirical variance of `w * H * 1[u < p] / p` with shared random numbers.
    fn rr_variance(p: f64, u: &[f64], h: &[f64]) -> f64 {
        let xs: Vec<f64> = u.iter().zip(h).map(|(&u, &h)| if u < p { h / p } else { 0.0 }).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    }

    #[test]
    fn roulette_derivative_matches_a_variance_sweep() {
        let mut rng = RngStream::new(5, 5);
        let n = 400_000;
        let u: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let h: Vec<f64> = (0..n).map(|_| 1.0 + 0.5 * rng.next_normal()).collect();
        let second = h.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let p = 0.5;
        let d = 0.05;
        let fd = (rr_variance(p + d, &u, &h) - rr_variance(p - d, &u, &h)) / (2.0 * d);
        let an = grad_pixelvar_wrt_rr(Rgb::splat(1.0), second as f32, p as f32).unwrap() as f64;
        assert!(((fd - an) / an).abs() < 0.1, "{fd} vs {an}");
    }

    fn term(q: f32, q_norm: f32, pixel: u32) -> RrsTerm {
        RrsTerm {
            q,
            q_norm,
            weight: Rgb::splat(0.8),
            second_moment: 2.0,
            variance: 1.0,
            pixel,
        }
    }

    #[test]
    fn rrs_loss_components() {
        let err = [0.3f32, 0.3, 0.3];
        let int = [1.0f32, 0.5, 2.0];
        let pe = PixelErrors {
            error: &err,
            intensity: &int,
        };
        let terms = [term(0.4, 0.4, 0), term(1.5, 1.5, 1), term(2.0, 2.0, 2)];
        let l = rrsnet_loss(&terms, &pe, LossWeights::default(), 0.01, 0.05);
        assert_eq!(l.l_rrs, 0.0);
        assert!(l.l_avg.abs() < 1e-12);
        assert!((l.l_min - 0.3).abs() < 1e-6);

        // only the minimum term: every gradient non-positive
        let only_min = LossWeights {
            avg: 0.0,
            min: 1.0,
            rrs: 0.0,
        };
        let terms = [term(0.4, 0.9, 0), term(1.5, 0.2, 1), term(2.0, 3.0, 2), term(0.1, 1.0, 0)];
        let l = rrsnet_loss(&terms, &pe, only_min, 0.01, 0.05);
        assert!(l.d_q.iter().all(|&g| g <= 0.0));
    }

    #[test]
    fn missing_pixel_errors_are_skipped() {
        let err = [0.1f32, f32::NAN];
        let int = [1.0f32, 1.0];
        let pe = PixelErrors {
            error: &err,
            intensity: &int,
        };
        let l = rrsnet_loss(&[term(1.0, 1.0, 1), term(1.0, 1.0, 7), term(1.0, 1.0, 0)], &pe, LossWeights::default(), 0.01, 0.05);
        assert_eq!(l.skipped, 2);
        assert_eq!(l.d_q[0], 0.0);
        assert!(l.d_q[2] < 0.0);
    }
}
