use crate::math::{Rgb, Vec3};

/// Per-pixel accumulation of frame estimates.
#[derive(Debug, Clone)]
pub struct Film {
    pub width: u32,
    pub height: u32,
    sum: Vec<[f64; 3]>,
    samples: Vec<u64>,
    /// Most recent frame.
    pub current: Vec<Rgb>,
    /// Exponentially mixed estimate used by the training error signal.
    pub accumulated: Vec<Rgb>,
    /// Shading normals at the primary hits of the latest frame.
    pub normals: Vec<Vec3>,
}

impl Film {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            sum: vec![[0.0; 3]; n],
            samples: vec![0; n],
            current: vec![Rgb::BLACK; n],
            accumulated: vec![Rgb::BLACK; n],
            normals: vec![Vec3::ZERO; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.sum.len()
    }

    pub fn samples(&self, pixel: usize) -> u64 {
        self.samples[pixel]
    }

    pub fn frames(&self) -> u64 {
        self.samples.iter().copied().max().unwrap_or(0)
    }

    /// Add one frame estimate per pixel.
    pub fn add_frame(&mut self, frame: &[Rgb]) {
        assert_eq!(frame.len(), self.sum.len(), "frame size mismatch");
        for (i, c) in frame.iter().enumerate() {
            self.sum[i][0] += c.r as f64;
            self.sum[i][1] += c.g as f64;
            self.sum[i][2] += c.b as f64;
            self.samples[i] += 1;
        }
        self.current.copy_from_slice(frame);
    }

    pub fn mean_pixel(&self, pixel: usize) -> Rgb {
        let n = self.samples[pixel];
        if n == 0 {
            return Rgb::BLACK;
        }
        let s = self.sum[pixel];
        let inv = 1.0 / n as f64;
        Rgb::new((s[0] * inv) as f32, (s[1] * inv) as f32, (s[2] * inv) as f32)
    }

    pub fn mean(&self) -> Vec<Rgb> {
        (0..self.sum.len()).map(|i| self.mean_pixel(i)).collect()
    }

    /// Per-pixel mean in double precision, channel-interleaved.
    pub fn mean_f64(&self) -> Vec<[f64; 3]> {
        self.sum
            .iter()
            .zip(&self.samples)
            .map(|(s, &n)| {
                if n == 0 {
                    [0.0; 3]
                } else {
                    [s[0] / n as f64, s[1] / n as f64, s[2] / n as f64]
                }
            })
            .collect()
    }

    /// Drop all accumulated samples, keeping the resolution.
    pub fn reset(&mut self) {
        *self = Film::new(self.width, self.height);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_is_sum_over_samples() {
        let mut f = Film::new(2, 1);
        f.add_frame(&[Rgb::splat(1.0), Rgb::splat(2.0)]);
        f.add_frame(&[Rgb::splat(3.0), Rgb::splat(2.0)]);
        assert_eq!(f.mean(), vec![Rgb::splat(2.0), Rgb::splat(2.0)]);
        assert_eq!(f.frames(), 2);
        assert_eq!(f.current[0], Rgb::splat(3.0));
        let mut g = Film::new(1, 1);
        assert_eq!(g.mean_pixel(0), Rgb::BLACK);
        g.reset();
        assert_eq!(g.samples(0), 0);
    }
}
