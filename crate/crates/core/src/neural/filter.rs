//! Per-pixel error signal for RRSNet training: a temporally mixed estimate
//! compared against the running mean, then smoothed with an edge-aware
//! à-trous filter guided by primary-hit normals.

use serde::{Deserialize, Serialize};

use crate::math::{Rgb, Vec3};
use crate::wavefront::Film;

const B3: [f32; 5] = [1.0 / 16.0, 1.0 / 4.0, 3.0 / 8.0, 1.0 / 4.0, 1.0 / 16.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtrousFilter {
    /// Passes with step sizes 1, 2, 4, ...
    pub iterations: u32,
    /// Exponent of the normal similarity weight.
    pub normal_power: f32,
}

impl Default for AtrousFilter {
    fn default() -> Self {
        Self {
            iterations: 3,
            normal_power: 128.0,
        }
    }
}

impl AtrousFilter {
    fn normal_weight(&self, a: Vec3, b: Vec3) -> f32 {
        let za = a.length_squared() == 0.0;
        let zb = b.length_squared() == 0.0;
        match (za, zb) {
            (true, true) => 1.0,
            (false, false) => a.dot(b).max(0.0).powf(self.normal_power),
            _ => 0.0,
        }
    }

    /// Filter a scalar image. Non-finite pixels are left as they are and do
    /// not contribute to their neighbours.
    pub fn apply(&self, values: &[f32], normals: &[Vec3], width: u32, height: u32) -> Vec<f32> {
        let (w, h) = (width as i64, height as i64);
        let mut cur = values.to_vec();
        for it in 0..self.iterations {
            let step = 1i64 << it;
            let mut next = cur.clone();
            for y in 0..h {
                for x in 0..w {
                    let c = (y * w + x) as usize;
                    if !cur[c].is_finite() {
                        continue;
                    }
                    let (mut sum, mut wsum) = (0.0f32, 0.0f32);
                    for (j, ky) in B3.iter().enumerate() {
                        let yy = y + (j as i64 - 2) * step;
                        if yy < 0 || yy >= h {
                            continue;
                        }
                        for (i, kx) in B3.iter().enumerate() {
                            let xx = x + (i as i64 - 2) * step;
                            if xx < 0 || xx >= w {
                                continue;
                            }
                            let n = (yy * w + xx) as usize;
                            if !cur[n].is_finite() {
                                continue;
                            }
                            let nw = if n == c { 1.0 } else { self.normal_weight(normals[c], normals[n]) };
                            let wt = kx * ky * nw;
                            sum += wt * cur[n];
                            wsum += wt;
                        }
                    }
                    next[c] = sum / wsum;
                }
            }
            cur = next;
        }
        cur
    }
}

/// Update the film's mixed estimate with its latest frame and return the
/// relative error image `lum(I_acc - I_prev)^2 / (lum(I_prev)^2 + eps)`.
/// `mean_prev` is the film mean before the latest frame was added; pixels
/// with no earlier samples have no error (NaN).
pub fn update_error_signal(film: &mut Film, mean_prev: &[Rgb], filter: Option<&AtrousFilter>, eps: f32) -> Vec<f32> {
    let first = film.frames() <= 1;
    for (acc, &cur) in film.accumulated.iter_mut().zip(&film.current) {
        *acc = if first { cur } else { *acc * 0.5 + cur * 0.5 };
    }
    let raw: Vec<f32> = (0..film.pixel_count())
        .map(|i| {
            if film.samples(i) <= 1 {
                return f32::NAN;
            }
            let prev = mean_prev[i].luminance();
            let d = film.accumulated[i].luminance() - prev;
            d * d / (prev * prev + eps)
        })
        .collect();
    match filter {
        Some(f) => f.apply(&raw, &film.normals, film.width, film.height),
        None => raw,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn unchanged_estimate_keeps_accumulation() {
        let mut film = Film::new(2, 2);
        film.add_frame(&[Rgb::splat(1.0); 4]);
        let prev = film.mean();
        update_error_signal(&mut film, &prev, None, 0.01);
        film.add_frame(&[Rgb::splat(1.0); 4]);
        let e = update_error_signal(&mut film, &prev, None, 0.01);
        assert!(film.accumulated.iter().all(|&c| c == Rgb::splat(1.0)));
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_frame_has_no_error() {
        let mut film = Film::new(2, 1);
        film.add_frame(&[Rgb::splat(3.0); 2]);
        let e = update_error_signal(&mut film, &[Rgb::BLACK; 2], None, 0.01);
        assert!(e.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn constant_image_filters_to_zero() {
        let n = vec![Vec3::new(0.0, 0.0, 1.0); 64];
        let out = AtrousFilter::default().apply(&[0.0; 64], &n, 8, 8);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filter_denoises_and_keeps_the_edge() {
        let (w, h) = (32u32, 16u32);
        let mut rng = RngStream::new(7, 7);
        let mut truth = Vec::new();
        let mut normals = Vec::new();
        for _y in 0..h {
            for x in 0..w {
                let left = x < w / 2;
                truth.push(if left { 1.0f32 } else { 5.0 });
                normals.push(if left { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(1.0, 0.0, 0.0) });
            }
        }
        let noisy: Vec<f32> = truth.iter().map(|&t| t + 0.5 * rng.next_normal() as f32).collect();
        let out = AtrousFilter::default().apply(&noisy, &normals, w, h);
        let err = |v: &[f32]| v.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f32>() / truth.len() as f32;
        assert!(err(&out) < 0.5 * err(&noisy));
        for y in 0..h {
            let l = out[(y * w + w / 2 - 1) as usize];
            let r = out[(y * w + w / 2) as usize];
            assert!((l - 1.0).abs() < (l - 5.0).abs());
            assert!((r - 5.0).abs() < (r - 1.0).abs());
        }
    }
}
