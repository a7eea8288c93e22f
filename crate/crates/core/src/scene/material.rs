//! Lambertian diffuse and GGX rough-conductor BSDFs.
//!
//! All routines work in the local shading frame where the normal is +z and
//! the outgoing direction lies in the upper hemisphere.

use std::f32::consts::{FRAC_1_PI, PI};

use crate::math::{Rgb, Vec3};

/// Roughness below this is treated as a perfect mirror.
pub const SPECULAR_ROUGHNESS: f32 = 1e-3;

/// Sampling densities below this are rejected.
pub const MIN_PDF: f32 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaterialKind {
    Diffuse { albedo: Rgb },
    Conductor { reflectance: Rgb, roughness: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    pub kind: MaterialKind,
    /// Two-sided emitted radiance.
    pub emission: Rgb,
}

#[derive(Debug, Clone, Copy)]
pub struct BsdfSample {
    pub wi: Vec3,
    /// Solid-angle density; 1 for the mirror lobe.
    pub pdf: f32,
    /// `f * |cos| / pdf`.
    pub throughput: Rgb,
    pub specular: bool,
}

impl Material {
    pub fn diffuse(name: &str, albedo: Rgb) -> Self {
        Self {
            name: name.into(),
            kind: MaterialKind::Diffuse { albedo },
            emission: Rgb::BLACK,
        }
    }

    pub fn conductor(name: &str, reflectance: Rgb, roughness: f32) -> Self {
        Self {
            name: name.into(),
            kind: MaterialKind::Conductor {
                reflectance,
                roughness: roughness.max(0.0),
            },
            emission: Rgb::BLACK,
        }
    }

    pub fn with_emission(mut self, emission: Rgb) -> Self {
        self.emission = emission;
        self
    }

    pub fn is_emissive(&self) -> bool {
        !self.emission.is_black()
    }

    /// Whether a path hitting this surface can continue at all.
    pub fn scatters(&self) -> bool {
        match self.kind {
            MaterialKind::Diffuse { albedo } => !albedo.is_black(),
            MaterialKind::Conductor { reflectance, .. } => !reflectance.is_black(),
        }
    }

    /// Roughness fed to the networks; diffuse surfaces report 1.
    pub fn roughness(&self) -> f32 {
        match self.kind {
            MaterialKind::Diffuse { .. } => 1.0,
            MaterialKind::Conductor { roughness, .. } => roughness,
        }
    }

    pub fn is_specular(&self) -> bool {
        matches!(self.kind, MaterialKind::Conductor { roughness, .. } if roughness < SPECULAR_ROUGHNESS)
    }

    /// BSDF value `f(wo, wi)` (without the cosine).
    pub fn eval(&self, wo: Vec3, wi: Vec3) -> Rgb {
        if wo.z <= 0.0 || wi.z <= 0.0 {
            return Rgb::BLACK;
        }
        match self.kind {
            MaterialKind::Diffuse { albedo } => albedo * FRAC_1_PI,
            MaterialKind::Conductor {
                reflectance,
                roughness,
            } => {
                if roughness < SPECULAR_ROUGHNESS {
                    return Rgb::BLACK;
                }
                let h = (wo + wi).normalized();
                let d = ggx_d(h.z, roughness);
                let g = smith_g1(wo, roughness) * smith_g1(wi, roughness);
                let f = schlick(reflectance, wi.dot(h));
                f * (d * g / (4.0 * wo.z * wi.z))
            }
        }
    }

    pub fn pdf(&self, wo: Vec3, wi: Vec3) -> f32 {
        if wo.z <= 0.0 || wi.z <= 0.0 {
            return 0.0;
        }
        match self.kind {
            MaterialKind::Diffuse { .. } => wi.z * FRAC_1_PI,
            MaterialKind::Conductor { roughness, .. } => {
                if roughness < SPECULAR_ROUGHNESS {
                    return 0.0;
                }
                let h = (wo + wi).normalized();
                ggx_d(h.z, roughness) * h.z / (4.0 * wo.dot(h))
            }
        }
    }

    /// Importance-sample an incoming direction. `None` when the sample falls
    /// below the surface or its density underflows.
    pub fn sample(&self, wo: Vec3, u: [f32; 2]) -> Option<BsdfSample> {
        if wo.z <= 0.0 {
            return None;
        }
        match self.kind {
            MaterialKind::Diffuse { albedo } => {
                let wi = cosine_hemisphere(u);
                let pdf = wi.z * FRAC_1_PI;
                if pdf < MIN_PDF {
                    return None;
                }
                Some(BsdfSample {
                    wi,
                    pdf,
                    throughput: albedo,
                    specular: false,
                })
            }
            MaterialKind::Conductor {
                reflectance,
                roughness,
            } => {
                if roughness < SPECULAR_ROUGHNESS {
                    let wi = Vec3::new(-wo.x, -wo.y, wo.z);
                    return Some(BsdfSample {
                        wi,
                        pdf: 1.0,
                        throughput: schlick(reflectance, wo.z),
                        specular: true,
                    });
                }
                let a2 = roughness * roughness;
                let cos2 = (1.0 - u[0]) / (u[0] * (a2 - 1.0) + 1.0);
                let cos_h = cos2.max(0.0).sqrt();
                let sin_h = (1.0 - cos2).max(0.0).sqrt();
                let phi = 2.0 * PI * u[1];
                let h = Vec3::new(sin_h * phi.cos(), sin_h * phi.sin(), cos_h);
                let wo_h = wo.dot(h);
                if wo_h <= 0.0 {
                    return None;
                }
                let wi = h * (2.0 * wo_h) - wo;
                if wi.z <= 0.0 {
                    return None;
                }
                let pdf = ggx_d(cos_h, roughness) * cos_h / (4.0 * wo_h);
                if !(pdf >= MIN_PDF) {
                    return None;
                }
                let g = smith_g1(wo, roughness) * smith_g1(wi, roughness);
                let throughput = schlick(reflectance, wo_h) * (g * wo_h / (wo.z * cos_h));
                if !throughput.is_valid_weight() {
                    return None;
                }
                Some(BsdfSample {
                    wi,
                    pdf,
                    throughput,
                    specular: false,
                })
            }
        }
    }
}

pub fn cosine_hemisphere(u: [f32; 2]) -> Vec3 {
    let r = u[0].sqrt();
    let phi = 2.0 * PI * u[1];
    Vec3::new(r * phi.cos(), r * phi.sin(), (1.0 - u[0]).max(0.0).sqrt())
}

fn ggx_d(cos_h: f32, alpha: f32) -> f32 {
    if cos_h <= 0.0 {
        return 0.0;
    }
    let a2 = alpha * alpha;
    let c2 = cos_h * cos_h;
    let denom = c2 * (a2 - 1.0) + 1.0;
    a2 / (PI * denom * denom)
}

fn smith_g1(v: Vec3, alpha: f32) -> f32 {
    let c2 = v.z * v.z;
    if c2 <= 0.0 {
        return 0.0;
    }
    let tan2 = (1.0 - c2).max(0.0) / c2;
    2.0 / (1.0 + (1.0 + alpha * alpha * tan2).sqrt())
}

fn schlick(f0: Rgb, cos: f32) -> Rgb {
    let m = (1.0 - cos.clamp(0.0, 1.0)).powi(5);
    f0 + (Rgb::WHITE - f0) * m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn materials() -> Vec<Material> {
        vec![
            Material::diffuse("d", Rgb::new(0.8, 0.5, 0.2)),
            Material::conductor("c1", Rgb::new(0.95, 0.9, 0.8), 0.1),
            Material::conductor("c2", Rgb::splat(1.0), 0.5),
            Material::conductor("c3", Rgb::splat(1.0), 1.0),
        ]
    }

    fn wo_for(i: usize) -> Vec3 {
        let cos = [0.95f32, 0.6, 0.2][i % 3];
        Vec3::new((1.0 - cos * cos).sqrt(), 0.0, cos)
    }

    #[test]
    fn diffuse_throughput_is_albedo() {
        let m = Material::diffuse("d", Rgb::new(0.8, 0.5, 0.2));
        let mut rng = RngStream::new(1, 1);
        for _ in 0..100 {
            let s = m.sample(Vec3::new(0.0, 0.0, 1.0), rng.next_2d()).unwrap();
            assert_eq!(s.throughput, Rgb::new(0.8, 0.5, 0.2));
            assert!(s.wi.z > 0.0);
        }
    }

    #[test]
    fn smooth_conductor_reflects() {
        let m = Material::conductor("m", Rgb::splat(0.9), 0.0);
        let wo = Vec3::new(0.3, -0.4, 0.866).normalized();
        let s = m.sample(wo, [0.3, 0.7]).unwrap();
        assert!(s.specular);
        let expected = wo.reflect(Vec3::new(0.0, 0.0, 1.0));
        assert!((s.wi - expected).length() < 1e-6);
    }

    #[test]
    fn sampled_pdf_matches_eval_pdf() {
        let mut rng = RngStream::new(2, 2);
        for (i, m) in materials().iter().enumerate() {
            let wo = wo_for(i);
            for _ in 0..2000 {
                if let Some(s) = m.sample(wo, rng.next_2d()) {
                    let p = m.pdf(wo, s.wi);
                    assert!((p - s.pdf).abs() <= 1e-4 * s.pdf.max(1e-3), "{} vs {}", p, s.pdf);
                    let tp = m.eval(wo, s.wi) * (s.wi.z / s.pdf);
                    for c in 0..3 {
                        assert!((tp[c] - s.throughput[c]).abs() <= 1e-3 * s.throughput[c].max(1e-2));
                    }
                }
            }
        }
    }

    /// Uniform-hemisphere quadrature of the pdf and of `f cos`.
    #[test]
    fn pdf_integrates_to_at_most_one_and_furnace_holds() {
        let n = 200_000;
        let mut rng = RngStream::new(3, 3);
        for (i, m) in materials().iter().enumerate() {
            let wo = wo_for(i);
            let (mut pdf_sum, mut pdf_sq) = (0.0f64, 0.0f64);
            let mut energy = [0.0f64; 3];
            let mut energy_sq = [0.0f64; 3];
            for _ in 0..n {
                let [u1, u2] = rng.next_2d();
                let z = u1;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = 2.0 * PI * u2;
                let wi = Vec3::new(r * phi.cos(), r * phi.sin(), z);
                let inv_pdf = 2.0 * PI as f64;
                let p = m.pdf(wo, wi) as f64 * inv_pdf;
                pdf_sum += p;
                pdf_sq += p * p;
                let f = m.eval(wo, wi) * wi.z;
                for c in 0..3 {
                    let e = f[c] as f64 * inv_pdf;
                    energy[c] += e;
                    energy_sq[c] += e * e;
                }
            }
            let nf = n as f64;
            let mean = pdf_sum / nf;
            let se = ((pdf_sq / nf - mean * mean) / nf).sqrt();
            // microfacet sampling can place mass below the horizon, so <= 1
            assert!(mean <= 1.0 + 3.0 * se, "material {i}: pdf integral {mean}");
            if matches!(m.kind, MaterialKind::Diffuse { .. }) || i == 1 {
                assert!((mean - 1.0).abs() < 3.0 * se + 0.02, "material {i}: {mean}");
            }
            for c in 0..3 {
                let e = energy[c] / nf;
                let se = ((energy_sq[c] / nf - e * e) / nf).sqrt();
                assert!(e <= 1.0 + 3.0 * se, "material {i} channel {c}: {e}");
            }
        }
    }
}
