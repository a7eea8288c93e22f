//! Procedural scenes that need no asset files.

use std::str::FromStr;

use crate::error::Error;
use crate::math::{Rgb, Vec3};

use super::{Camera, Material, Scene, Triangle};

/// Diffuse albedo of every wall of the furnace box.
pub const FURNACE_ALBEDO: f32 = 0.5;
/// Radiance emitted by every wall of the furnace box.
pub const FURNACE_EMISSION: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinScene {
    Cornell,
    Furnace,
    GlossyCaustic,
}

impl BuiltinScene {
    pub fn name(&self) -> &'static str {
        match self {
            BuiltinScene::Cornell => "cornell",
            BuiltinScene::Furnace => "furnace",
            BuiltinScene::GlossyCaustic => "glossy-caustic",
        }
    }

    /// Exact pixel value of the furnace scene for paths of at most
    /// `max_depth` surface vertices: `Le * (1 + a + ... + a^(B-1))`.
    pub fn furnace_value(max_depth: u32) -> f64 {
        let a = FURNACE_ALBEDO as f64;
        FURNACE_EMISSION as f64 * (1.0 - a.powi(max_depth as i32)) / (1.0 - a)
    }
}

impl FromStr for BuiltinScene {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "cornell" => Ok(BuiltinScene::Cornell),
            "furnace" => Ok(BuiltinScene::Furnace),
            "glossy-caustic" | "caustic" => Ok(BuiltinScene::GlossyCaustic),
            other => Err(Error::InvalidArgument(format!("unknown builtin scene '{other}'"))),
        }
    }
}

pub fn builtin_scene(kind: BuiltinScene, width: u32, height: u32) -> Scene {
    let mut b = Builder::default();
    let (camera, environment) = match kind {
        BuiltinScene::Cornell => cornell(&mut b, width, height),
        BuiltinScene::Furnace => furnace(&mut b, width, height),
        BuiltinScene::GlossyCaustic => glossy_caustic(&mut b, width, height),
    };
    Scene::new(b.triangles, b.materials, environment, camera).expect("builtin scenes are well formed")
}

#[derive(Default)]
struct Builder {
    triangles: Vec<Triangle>,
    materials: Vec<Material>,
}

impl Builder {
    fn material(&mut self, m: Material) -> u32 {
        self.materials.push(m);
        self.materials.len() as u32 - 1
    }

    fn tri(&mut self, a: Vec3, b: Vec3, c: Vec3, m: u32) {
        self.triangles.push(Triangle::new(a, b, c, m));
    }

    /// Quad with corners in order around the boundary.
    fn quad(&mut self, a: Vec3, b: Vec3, c: Vec3, d: Vec3, m: u32) {
        self.tri(a, b, c, m);
        self.tri(a, c, d, m);
    }

    /// Axis-aligned box. Boxes resting on a floor skip the bottom face so it
    /// does not overlap the floor.
    fn cuboid(&mut self, lo: Vec3, hi: Vec3, m: u32, bottom: bool) {
        let p = |x: f32, y: f32, z: f32| Vec3::new(x, y, z);
        let (x0, y0, z0, x1, y1, z1) = (lo.x, lo.y, lo.z, hi.x, hi.y, hi.z);
        if bottom {
            self.quad(p(x0, y0, z0), p(x1, y0, z0), p(x1, y0, z1), p(x0, y0, z1), m);
        }
        self.quad(p(x0, y1, z0), p(x0, y1, z1), p(x1, y1, z1), p(x1, y1, z0), m);
        self.quad(p(x0, y0, z0), p(x0, y1, z0), p(x1, y1, z0), p(x1, y0, z0), m);
        self.quad(p(x0, y0, z1), p(x1, y0, z1), p(x1, y1, z1), p(x0, y1, z1), m);
        self.quad(p(x0, y0, z0), p(x0, y0, z1), p(x0, y1, z1), p(x0, y1, z0), m);
        self.quad(p(x1, y0, z0), p(x1, y1, z0), p(x1, y1, z1), p(x1, y0, z1), m);
    }
}

fn cornell(b: &mut Builder, w: u32, h: u32) -> (Camera, Rgb) {
    let white = b.material(Material::diffuse("white", Rgb::new(0.73, 0.73, 0.73)));
    let red = b.material(Material::diffuse("red", Rgb::new(0.65, 0.05, 0.05)));
    let green = b.material(Material::diffuse("green", Rgb::new(0.12, 0.45, 0.15)));
    let metal = b.material(Material::conductor("metal", Rgb::new(0.95, 0.85, 0.6), 0.2));
    let lamp = b.material(Material::diffuse("lamp", Rgb::BLACK).with_emission(Rgb::new(17.0, 12.0, 4.0)));
    let p = |x: f32, y: f32, z: f32| Vec3::new(x, y, z);
    // floor, ceiling, back, left, right
    b.quad(p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(1.0, 0.0, 1.0), p(0.0, 0.0, 1.0), white);
    b.quad(p(0.0, 1.0, 0.0), p(0.0, 1.0, 1.0), p(1.0, 1.0, 1.0), p(1.0, 1.0, 0.0), white);
    b.quad(p(0.0, 0.0, 0.0), p(0.0, 1.0, 0.0), p(1.0, 1.0, 0.0), p(1.0, 0.0, 0.0), white);
    b.quad(p(0.0, 0.0, 0.0), p(0.0, 0.0, 1.0), p(0.0, 1.0, 1.0), p(0.0, 1.0, 0.0), red);
    b.quad(p(1.0, 0.0, 0.0), p(1.0, 1.0, 0.0), p(1.0, 1.0, 1.0), p(1.0, 0.0, 1.0), green);
    b.quad(p(0.4, 0.999, 0.4), p(0.6, 0.999, 0.4), p(0.6, 0.999, 0.6), p(0.4, 0.999, 0.6), lamp);
    b.cuboid(p(0.15, 0.0, 0.2), p(0.45, 0.6, 0.5), white, false);
    b.cuboid(p(0.55, 0.0, 0.5), p(0.85, 0.3, 0.8), metal, false);
    let cam = Camera::look_at(p(0.5, 0.5, 2.2), p(0.5, 0.5, 0.0), p(0.0, 1.0, 0.0), 38.0, w, h);
    (cam, Rgb::BLACK)
}

fn furnace(b: &mut Builder, w: u32, h: u32) -> (Camera, Rgb) {
    let wall = b.material(
        Material::diffuse("furnace", Rgb::splat(FURNACE_ALBEDO)).with_emission(Rgb::splat(FURNACE_EMISSION)),
    );
    b.cuboid(Vec3::splat(-1.0), Vec3::splat(1.0), wall, true);
    let cam = Camera::look_at(
        Vec3::new(0.1, -0.05, 0.2),
        Vec3::new(0.4, 0.3, -1.0),
        Vec3::new(0.0, 1.0, 0.0),
        70.0,
        w,
        h,
    );
    (cam, Rgb::BLACK)
}

/// Closed room, dim walls, a lamp hidden behind a low wall and a wavy
/// glossy reflector under the ceiling that throws a caustic onto the floor.
fn glossy_caustic(b: &mut Builder, w: u32, h: u32) -> (Camera, Rgb) {
    let floor = b.material(Material::diffuse("floor", Rgb::new(0.6, 0.58, 0.55)));
    let wall = b.material(Material::diffuse("wall", Rgb::new(0.2, 0.2, 0.22)));
    let dark = b.material(Material::diffuse("occluder", Rgb::new(0.05, 0.05, 0.05)));
    let mirror = b.material(Material::conductor("reflector", Rgb::new(0.95, 0.93, 0.88), 0.08));
    let lamp = b.material(Material::diffuse("lamp", Rgb::BLACK).with_emission(Rgb::new(60.0, 55.0, 45.0)));
    let p = |x: f32, y: f32, z: f32| Vec3::new(x, y, z);

    let (x0, x1, y0, y1, z0, z1) = (-2.0, 2.0, 0.0, 2.0, -2.0, 2.0);
    b.quad(p(x0, y0, z0), p(x1, y0, z0), p(x1, y0, z1), p(x0, y0, z1), floor);
    b.quad(p(x0, y1, z0), p(x0, y1, z1), p(x1, y1, z1), p(x1, y1, z0), wall);
    b.quad(p(x0, y0, z0), p(x0, y1, z0), p(x1, y1, z0), p(x1, y0, z0), wall);
    b.quad(p(x0, y0, z1), p(x1, y0, z1), p(x1, y1, z1), p(x0, y1, z1), wall);
    b.quad(p(x0, y0, z0), p(x0, y0, z1), p(x0, y1, z1), p(x0, y1, z0), wall);
    b.quad(p(x1, y0, z0), p(x1, y1, z0), p(x1, y1, z1), p(x1, y0, z1), wall);

    // lamp facing up, tucked behind a low wall near the back
    b.quad(p(-0.3, 0.05, -1.85), p(-0.3, 0.05, -1.6), p(0.3, 0.05, -1.6), p(0.3, 0.05, -1.85), lamp);
    b.cuboid(p(-1.2, 0.0, -1.45), p(1.2, 0.7, -1.35), dark, false);

    // corrugated reflector
    let (nx, nz) = (24usize, 16usize);
    let (rx0, rx1, rz0, rz1) = (-1.4f32, 1.4f32, -1.9f32, 0.3f32);
    let height = |x: f32, z: f32| 1.75 + 0.06 * (4.0 * x).sin() * (3.0 * z).cos() + 0.08 * (z - rz0);
    for i in 0..nx {
        for j in 0..nz {
            let xa = rx0 + (rx1 - rx0) * i as f32 / nx as f32;
            let xb = rx0 + (rx1 - rx0) * (i + 1) as f32 / nx as f32;
            let za = rz0 + (rz1 - rz0) * j as f32 / nz as f32;
            let zb = rz0 + (rz1 - rz0) * (j + 1) as f32 / nz as f32;
            b.quad(
                p(xa, height(xa, za), za),
                p(xb, height(xb, za), za),
                p(xb, height(xb, zb), zb),
                p(xa, height(xa, zb), zb),
                mirror,
            );
        }
    }

    let cam = Camera::look_at(p(0.0, 1.1, 1.95), p(0.0, 0.45, -0.6), p(0.0, 1.0, 0.0), 60.0, w, h);
    (cam, Rgb::BLACK)
}
