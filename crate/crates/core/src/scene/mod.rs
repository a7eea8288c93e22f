//! Scene representation: triangle meshes, materials, area lights, camera,
//! ray queries and next-event-estimation sampling.

mod builtin;
pub mod bvh;
mod description;
pub mod material;
pub mod obj;

use crate::error::{Error, Result};
use crate::math::{Frame, Rgb, Vec3};

pub use builtin::{builtin_scene, BuiltinScene, FURNACE_ALBEDO, FURNACE_EMISSION};
pub use bvh::{Aabb, Bvh};
pub use description::load_scene_file;
pub use material::{BsdfSample, Material, MaterialKind};

/// Offset applied to spawned ray origins along the geometric normal.
pub const RAY_EPSILON: f32 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_max: f32,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Self {
            origin,
            dir,
            t_max: f32::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.origin.is_finite() || !self.dir.is_finite() {
            return Err(Error::InvalidArgument("ray has non-finite components".into()));
        }
        if self.dir.length_squared() == 0.0 {
            return Err(Error::DegenerateRay);
        }
        Ok(())
    }
}

/// Triangle stored in the Moller-Trumbore edge form.
#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub v0: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub normals: Option<[Vec3; 3]>,
    pub material: u32,
}

impl Triangle {
    pub fn new(a: Vec3, b: Vec3, c: Vec3, material: u32) -> Self {
        Self {
            v0: a,
            e1: b - a,
            e2: c - a,
            normals: None,
            material,
        }
    }

    pub fn area(&self) -> f32 {
        0.5 * self.e1.cross(self.e2).length()
    }

    pub fn geometric_normal(&self) -> Vec3 {
        self.e1.cross(self.e2).normalized()
    }

    pub fn point(&self, u: f32, v: f32) -> Vec3 {
        self.v0 + self.e1 * u + self.e2 * v
    }

    /// Returns `(t, u, v)` for hits with `t` in `(0, t_max)`.
    #[inline]
    pub fn intersect(&self, ray: &Ray, t_max: f32) -> Option<(f32, f32, f32)> {
        let p = ray.dir.cross(self.e2);
        let det = self.e1.dot(p);
        if det.abs() < 1e-12 {
            return None;
        }
        let inv = 1.0 / det;
        let s = ray.origin - self.v0;
        let u = s.dot(p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(self.e1);
        let v = ray.dir.dot(q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = self.e2.dot(q) * inv;
        if t > 1e-7 && t < t_max {
            Some((t, u, v))
        } else {
            None
        }
    }
}

/// A surface hit with everything shading needs.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceInteraction {
    pub position: Vec3,
    /// Geometric normal, flipped to the side of `wo`.
    pub geometric_normal: Vec3,
    /// Shading normal, flipped to the side of `wo`.
    pub normal: Vec3,
    /// Unit direction back toward the ray origin.
    pub wo: Vec3,
    pub material: u32,
    pub triangle: u32,
    pub t: f32,
    pub emitted: Rgb,
}

impl SurfaceInteraction {
    pub fn frame(&self) -> Frame {
        Frame::from_normal(self.normal)
    }

    /// Ray leaving the surface in direction `dir`.
    pub fn spawn(&self, dir: Vec3) -> Ray {
        let side = if dir.dot(self.geometric_normal) >= 0.0 { 1.0 } else { -1.0 };
        Ray::new(self.position + self.geometric_normal * (RAY_EPSILON * side), dir)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Intersection {
    Hit(SurfaceInteraction),
    /// Nothing was hit; carries the environment radiance.
    Miss { emission: Rgb },
}

impl Intersection {
    pub fn hit(&self) -> Option<&SurfaceInteraction> {
        match self {
            Intersection::Hit(h) => Some(h),
            Intersection::Miss { .. } => None,
        }
    }
}

/// One light sample from a shading point.
#[derive(Debug, Clone, Copy)]
pub struct NeeSample {
    pub light_point: Vec3,
    pub wi: Vec3,
    pub pdf_area: f32,
    /// Light-sampling density converted to solid angle at the shading point.
    pub pdf_solid: f32,
    /// BSDF density of `wi`, for multiple importance sampling.
    pub bsdf_pdf: f32,
    /// `f * |cos| * Le / pdf_solid`, assuming the light is visible.
    pub contribution: Rgb,
    pub shadow_ray: Ray,
}

impl NeeSample {
    /// Power-heuristic weight of the light-sampling technique.
    pub fn mis_weight(&self) -> f32 {
        power_heuristic(self.pdf_solid, self.bsdf_pdf)
    }
}

pub fn power_heuristic(a: f32, b: f32) -> f32 {
    let a2 = a * a;
    let b2 = b * b;
    if a2 + b2 == 0.0 {
        0.0
    } else if !a2.is_finite() {
        1.0
    } else {
        a2 / (a2 + b2)
    }
}

#[derive(Debug, Clone)]
pub struct Camera {
    pub origin: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    tan_half_fov: f32,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn look_at(origin: Vec3, target: Vec3, up: Vec3, vfov_deg: f32, width: u32, height: u32) -> Self {
        let forward = (target - origin).normalized();
        let right = forward.cross(up).normalized();
        let up = right.cross(forward);
        Self {
            origin,
            forward,
            right,
            up,
            tan_half_fov: (vfov_deg.to_radians() * 0.5).tan(),
            width,
            height,
        }
    }

    pub fn with_resolution(&self, width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ..self.clone()
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Primary ray through pixel `pixel` offset by `jitter` in `[0,1)^2`.
    pub fn generate_ray(&self, pixel: u32, jitter: [f32; 2]) -> Ray {
        let x = (pixel % self.width) as f32 + jitter[0];
        let y = (pixel / self.width) as f32 + jitter[1];
        let aspect = self.width as f32 / self.height as f32;
        let sx = (2.0 * x / self.width as f32 - 1.0) * self.tan_half_fov * aspect;
        let sy = (1.0 - 2.0 * y / self.height as f32) * self.tan_half_fov;
        let dir = (self.forward + self.right * sx + self.up * sy).normalized();
        Ray::new(self.origin, dir)
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub triangles: Vec<Triangle>,
    pub materials: Vec<Material>,
    /// Indices of emissive triangles.
    pub lights: Vec<u32>,
    light_lookup: Vec<i32>,
    pub environment: Rgb,
    pub camera: Camera,
    bvh: Bvh,
}

impl Scene {
    pub fn new(
        triangles: Vec<Triangle>,
        materials: Vec<Material>,
        environment: Rgb,
        camera: Camera,
    ) -> Result<Self> {
        if let Some(bad) = triangles.iter().find(|t| t.material as usize >= materials.len()) {
            return Err(Error::InvalidArgument(format!(
                "triangle references material {} but only {} exist",
                bad.material,
                materials.len()
            )));
        }
        let mut lights = Vec::new();
        let mut light_lookup = vec![-1; triangles.len()];
        for (i, t) in triangles.iter().enumerate() {
            if materials[t.material as usize].is_emissive() && t.area() > 0.0 {
                light_lookup[i] = lights.len() as i32;
                lights.push(i as u32);
            }
        }
        let bvh = Bvh::build(&triangles);
        Ok(Self {
            triangles,
            materials,
            lights,
            light_lookup,
            environment,
            camera,
            bvh,
        })
    }

    pub fn bounds(&self) -> Aabb {
        self.bvh.bounds()
    }

    pub fn material(&self, id: u32) -> &Material {
        &self.materials[id as usize]
    }

    pub fn intersect(&self, ray: &Ray) -> Result<Intersection> {
        ray.validate()?;
        Ok(self.intersect_unchecked(ray))
    }

    pub(crate) fn intersect_unchecked(&self, ray: &Ray) -> Intersection {
        match self.bvh.intersect(&self.triangles, ray) {
            Some((id, t, u, v)) => Intersection::Hit(self.interaction(ray, id, t, u, v)),
            None => Intersection::Miss {
                emission: self.environment,
            },
        }
    }

    /// Linear scan over every triangle; the reference for BVH queries.
    pub fn intersect_brute_force(&self, ray: &Ray) -> Result<Intersection> {
        ray.validate()?;
        let mut best: Option<(u32, f32, f32, f32)> = None;
        for (i, tri) in self.triangles.iter().enumerate() {
            let t_max = best.map(|b| b.1).unwrap_or(ray.t_max);
            if let Some((t, u, v)) = tri.intersect(ray, t_max) {
                best = Some((i as u32, t, u, v));
            }
        }
        Ok(match best {
            Some((id, t, u, v)) => Intersection::Hit(self.interaction(ray, id, t, u, v)),
            None => Intersection::Miss {
                emission: self.environment,
            },
        })
    }

    pub fn occluded(&self, ray: &Ray) -> bool {
        self.bvh.occluded(&self.triangles, ray)
    }

    fn interaction(&self, ray: &Ray, id: u32, t: f32, u: f32, v: f32) -> SurfaceInteraction {
        let tri = &self.triangles[id as usize];
        let wo = -ray.dir.normalized();
        let mut ng = tri.geometric_normal();
        if ng.dot(wo) < 0.0 {
            ng = -ng;
        }
        let mut ns = match tri.normals {
            Some([a, b, c]) => {
                let n = a * (1.0 - u - v) + b * u + c * v;
                if n.length_squared() > 0.0 {
                    n.normalized()
                } else {
                    ng
                }
            }
            None => ng,
        };
        if ns.dot(wo) < 0.0 {
            ns = -ns;
        }
        let mat = &self.materials[tri.material as usize];
        SurfaceInteraction {
            position: ray.origin + ray.dir * t,
            geometric_normal: ng,
            normal: ns,
            wo,
            material: tri.material,
            triangle: id,
            t,
            emitted: mat.emission,
        }
    }

    /// Sample the BSDF at `it`; directions and densities are in world space.
    pub fn sample_bsdf(&self, it: &SurfaceInteraction, u: [f32; 2]) -> Option<BsdfSample> {
        let frame = it.frame();
        let wo = frame.to_local(it.wo);
        let s = self.material(it.material).sample(wo, u)?;
        let wi = frame.to_world(s.wi);
        Some(BsdfSample { wi, ..s })
    }

    pub fn eval_bsdf(&self, it: &SurfaceInteraction, wi: Vec3) -> (Rgb, f32) {
        let frame = it.frame();
        let wo = frame.to_local(it.wo);
        let wi_l = frame.to_local(wi);
        let m = self.material(it.material);
        (m.eval(wo, wi_l) * wi_l.z.max(0.0), m.pdf(wo, wi_l))
    }

    /// Density with which light sampling from `from` would pick the point
    /// `hit` on an emissive triangle, in solid angle.
    pub fn light_pdf(&self, from: Vec3, hit: &SurfaceInteraction) -> f32 {
        if self.light_lookup.get(hit.triangle as usize).copied().unwrap_or(-1) < 0 {
            return 0.0;
        }
        let tri = &self.triangles[hit.triangle as usize];
        let d2 = (hit.position - from).length_squared();
        let cos_l = hit.geometric_normal.dot(hit.wo).abs();
        if cos_l <= 0.0 {
            return 0.0;
        }
        d2 / (cos_l * tri.area() * self.lights.len() as f32)
    }

    /// Uniformly pick an emissive triangle, then a uniform point on it.
    /// Returns `None` when the scene has no lights or the sample carries no
    /// energy.
    pub fn sample_nee(&self, it: &SurfaceInteraction, u_pick: f32, u: [f32; 2]) -> Option<NeeSample> {
        if self.lights.is_empty() || self.material(it.material).is_specular() {
            return None;
        }
        let n = self.lights.len();
        let pick = ((u_pick * n as f32) as usize).min(n - 1);
        let tri = &self.triangles[self.lights[pick] as usize];
        let su = u[0].sqrt();
        let p = tri.point(1.0 - su, u[1] * su);
        let to_light = p - it.position;
        let d2 = to_light.length_squared();
        if d2 <= 0.0 {
            return None;
        }
        let dist = d2.sqrt();
        let wi = to_light / dist;
        let cos_l = tri.geometric_normal().dot(wi).abs();
        if cos_l <= 1e-7 {
            return None;
        }
        let area = tri.area();
        let pdf_area = 1.0 / (n as f32 * area);
        let pdf_solid = pdf_area * d2 / cos_l;
        let (f_cos, bsdf_pdf) = self.eval_bsdf(it, wi);
        if f_cos.is_black() {
            return None;
        }
        let le = self.material(tri.material).emission;
        let contribution = f_cos * le / pdf_solid;
        let mut shadow_ray = it.spawn(wi);
        shadow_ray.t_max = (p - shadow_ray.origin).length() * (1.0 - 1e-4);
        Some(NeeSample {
            light_point: p,
            wi,
            pdf_area,
            pdf_solid,
            bsdf_pdf,
            contribution,
            shadow_ray,
        })
    }

    /// Light sample with its visibility resolved.
    pub fn direct_light(&self, it: &SurfaceInteraction, u_pick: f32, u: [f32; 2]) -> Rgb {
        match self.sample_nee(it, u_pick, u) {
            Some(s) if !self.occluded(&s.shadow_ray) => s.contribution,
            _ => Rgb::BLACK,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn unit_triangle_scene(extra: Vec<Triangle>) -> Scene {
        let mut tris = vec![Triangle::new(
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(1.0, -1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            0,
        )];
        tris.extend(extra);
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 5.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 40.0, 8, 8);
        Scene::new(
            tris,
            vec![
                Material::diffuse("white", Rgb::splat(0.5)),
                Material::diffuse("lamp", Rgb::BLACK).with_emission(Rgb::splat(4.0)),
            ],
            Rgb::BLACK,
            cam,
        )
        .unwrap()
    }

    #[test]
    fn axis_aligned_ray_hits_at_plane_distance() {
        let scene = unit_triangle_scene(vec![]);
        let ray = Ray::new(Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, -1.0));
        let hit = *scene.intersect(&ray).unwrap().hit().unwrap();
        assert!((hit.t - 3.0).abs() < 1e-6);
        assert!((hit.normal - Vec3::new(0.0, 0.0, 1.0)).length() < 1e-6);
    }

    #[test]
    fn ray_away_from_geometry_misses() {
        let scene = unit_triangle_scene(vec![]);
        let ray = Ray::new(Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, 1.0));
        assert!(scene.intersect(&ray).unwrap().hit().is_none());
    }

    #[test]
    fn zero_direction_is_an_error() {
        let scene = unit_triangle_scene(vec![]);
        let ray = Ray::new(Vec3::ZERO, Vec3::ZERO);
        assert!(matches!(scene.intersect(&ray), Err(Error::DegenerateRay)));
    }

    #[test]
    fn bad_material_reference_is_rejected() {
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 5.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 40.0, 8, 8);
        let tris = vec![Triangle::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 3)];
        assert!(Scene::new(tris, vec![Material::diffuse("a", Rgb::WHITE)], Rgb::BLACK, cam).is_err());
    }

    #[test]
    fn bvh_matches_brute_force() {
        let scene = builtin_scene(BuiltinScene::Cornell, 8, 8);
        let b = scene.bounds();
        let mut rng = RngStream::new(9, 9);
        let mut hits = 0;
        for _ in 0..10_000 {
            let o = Vec3::new(
                b.min.x + rng.next_f32() * (b.max.x - b.min.x),
                b.min.y + rng.next_f32() * (b.max.y - b.min.y),
                b.min.z + rng.next_f32() * (b.max.z - b.min.z),
            );
            let d = crate::scene::material::cosine_hemisphere(rng.next_2d());
            let d = if rng.next_f32() < 0.5 { d } else { -d };
            let ray = Ray::new(o, d);
            let a = scene.intersect(&ray).unwrap();
            let c = scene.intersect_brute_force(&ray).unwrap();
            match (a.hit(), c.hit()) {
                (Some(x), Some(y)) => {
                    hits += 1;
                    assert_eq!(x.triangle, y.triangle);
                    assert!((x.t - y.t).abs() <= 1e-4 * y.t.max(1.0));
                }
                (None, None) => {}
                _ => panic!("bvh and brute force disagree"),
            }
        }
        assert!(hits > 5000);
    }

    fn facing_light_scene(light_area_side: f32, dist: f32, blocker: bool, two: bool) -> Scene {
        let s = light_area_side * 0.5;
        let quad = |z: f32, x0: f32| {
            vec![
                Triangle::new(Vec3::new(x0 - s, -s, z), Vec3::new(x0 + s, -s, z), Vec3::new(x0 + s, s, z), 1),
                Triangle::new(Vec3::new(x0 - s, -s, z), Vec3::new(x0 + s, s, z), Vec3::new(x0 - s, s, z), 1),
            ]
        };
        let mut extra = quad(dist, 0.0);
        if two {
            extra.extend(quad(dist, 0.0));
        }
        if blocker {
            extra.push(Triangle::new(
                Vec3::new(-5.0, -5.0, dist * 0.5),
                Vec3::new(5.0, -5.0, dist * 0.5),
                Vec3::new(0.0, 5.0, dist * 0.5),
                0,
            ));
        }
        unit_triangle_scene(extra)
    }

    fn floor_hit(scene: &Scene) -> SurfaceInteraction {
        let ray = Ray::new(Vec3::new(0.0, 0.0, 0.5), Vec3::new(0.0, 0.0, -1.0));
        *scene.intersect(&ray).unwrap().hit().unwrap()
    }

    #[test]
    fn occluded_light_contributes_nothing() {
        let scene = facing_light_scene(0.1, 4.0, true, false);
        let it = floor_hit(&scene);
        let mut rng = RngStream::new(4, 4);
        for _ in 0..100 {
            assert!(scene.direct_light(&it, rng.next_f32(), rng.next_2d()).is_black());
        }
    }

    #[test]
    fn small_distant_light_matches_solid_angle_estimate() {
        let side = 0.05;
        let dist = 4.0;
        let scene = facing_light_scene(side, dist, false, false);
        let it = floor_hit(&scene);
        let mut rng = RngStream::new(5, 5);
        let n = 2000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += scene.direct_light(&it, rng.next_f32(), rng.next_2d()).r as f64;
        }
        let got = sum / n as f64;
        // f_r = 0.5 / pi, both cosines ~ 1, L = 4, A = side^2
        let expected = (0.5 / std::f64::consts::PI) * 4.0 * (side * side) as f64 / (dist * dist) as f64;
        assert!((got - expected).abs() < 1e-3 * expected + 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn equal_lights_are_picked_uniformly() {
        let scene = facing_light_scene(0.5, 4.0, false, true);
        assert_eq!(scene.lights.len(), 4);
        let it = floor_hit(&scene);
        let s = scene.sample_nee(&it, 0.1, [0.3, 0.3]).unwrap();
        assert!((s.pdf_area * 4.0 * 0.125 - 1.0).abs() < 1e-5);
    }
}
