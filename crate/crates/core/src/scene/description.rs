//! Line-oriented scene description files.
//!
//! ```text
//! # comments start with '#'
//! camera origin 0 1 3 target 0 1 0 up 0 1 0 fov 40
//! environment 0 0 0
//! material white diffuse albedo 0.7 0.7 0.7
//! material gold conductor reflectance 1 0.8 0.4 roughness 0.2
//! material lamp diffuse albedo 0 0 0 emission 10 10 10
//! mesh floor.obj white scale 2 translate 0 -1 0
//! quad -1 0 -1  1 0 -1  1 0 1  -1 0 1  white
//! ```
//!
//! Mesh paths are relative to the description file.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};

use super::obj::load_obj;
use super::{Camera, Material, MaterialKind, Scene, Triangle};

struct Cursor<'a> {
    tokens: Vec<&'a str>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self) -> Option<&'a str> {
        let t = self.tokens.get(self.pos).copied();
        self.pos += 1;
        t
    }

    fn float(&mut self) -> std::result::Result<f32, String> {
        let t = self.next().ok_or("expected a number")?;
        t.parse::<f32>().map_err(|e| format!("bad number '{t}': {e}"))
    }

    fn vec3(&mut self) -> std::result::Result<Vec3, String> {
        Ok(Vec3::new(self.float()?, self.float()?, self.float()?))
    }
}

pub fn load_scene_file(path: &Path, width: u32, height: u32) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scene(&text, base, path, width, height)
}

pub(crate) fn parse_scene(text: &str, base: &Path, source: &Path, width: u32, height: u32) -> Result<Scene> {
    let mut materials: Vec<Material> = Vec::new();
    let mut by_name: HashMap<String, u32> = HashMap::new();
    let mut triangles: Vec<Triangle> = Vec::new();
    let mut environment = Rgb::BLACK;
    let mut camera = Camera::look_at(Vec3::new(0.0, 0.0, 5.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 40.0, width, height);

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let raw = raw.split('#').next().unwrap_or("").trim();
        if raw.is_empty() {
            continue;
        }
        let mut c = Cursor {
            tokens: raw.split_whitespace().collect(),
            pos: 0,
        };
        let err = |message: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            message,
        };
        let keyword = c.next().unwrap_or_default();
        match keyword {
            "camera" => {
                let (mut origin, mut target, mut up, mut fov) =
                    (Vec3::new(0.0, 0.0, 5.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 40.0);
                while let Some(key) = c.next() {
                    match key {
                        "origin" => origin = c.vec3().map_err(err)?,
                        "target" => target = c.vec3().map_err(err)?,
                        "up" => up = c.vec3().map_err(err)?,
                        "fov" => fov = c.float().map_err(err)?,
                        other => return Err(err(format!("unknown camera key '{other}'"))),
                    }
                }
                camera = Camera::look_at(origin, target, up, fov, width, height);
            }
            "environment" => environment = Rgb::new(c.float().map_err(err)?, c.float().map_err(err)?, c.float().map_err(err)?),
            "material" => {
                let name = c.next().ok_or_else(|| err("material needs a name".into()))?.to_string();
                let kind = c.next().ok_or_else(|| err("material needs a kind".into()))?;
                let mut color = Rgb::splat(0.5);
                let mut roughness = 0.2;
                let mut emission = Rgb::BLACK;
                while let Some(key) = c.next() {
                    match key {
                        "albedo" | "reflectance" => {
                            color = Rgb::new(c.float().map_err(err)?, c.float().map_err(err)?, c.float().map_err(err)?)
                        }
                        "roughness" => roughness = c.float().map_err(err)?,
                        "emission" => {
                            emission = Rgb::new(c.float().map_err(err)?, c.float().map_err(err)?, c.float().map_err(err)?)
                        }
                        other => return Err(err(format!("unknown material key '{other}'"))),
                    }
                }
                let kind = match kind {
                    "diffuse" => MaterialKind::Diffuse { albedo: color },
                    "conductor" => MaterialKind::Conductor {
                        reflectance: color,
                        roughness,
                    },
                    other => return Err(err(format!("unknown material kind '{other}'"))),
                };
                by_name.insert(name.clone(), materials.len() as u32);
                materials.push(Material { name, kind, emission });
            }
            "mesh" => {
                let file = c.next().ok_or_else(|| err("mesh needs a file".into()))?;
                let mat_name = c.next().ok_or_else(|| err("mesh needs a material".into()))?;
                let mat = *by_name
                    .get(mat_name)
                    .ok_or_else(|| err(format!("unknown material '{mat_name}'")))?;
                let mut scale = 1.0;
                let mut translate = Vec3::ZERO;
                while let Some(key) = c.next() {
                    match key {
                        "scale" => scale = c.float().map_err(err)?,
                        "translate" => translate = c.vec3().map_err(err)?,
                        other => return Err(err(format!("unknown mesh key '{other}'"))),
                    }
                }
                for t in load_obj(&base.join(file), mat)? {
                    let a = t.v0 * scale + translate;
                    let b = (t.v0 + t.e1) * scale + translate;
                    let cc = (t.v0 + t.e2) * scale + translate;
                    let mut nt = Triangle::new(a, b, cc, mat);
                    nt.normals = t.normals;
                    triangles.push(nt);
                }
            }
            "quad" => {
                let mut v = [Vec3::ZERO; 4];
                for p in v.iter_mut() {
                    *p = c.vec3().map_err(err)?;
                }
                let mat_name = c.next().ok_or_else(|| err("quad needs a material".into()))?;
                let mat = *by_name
                    .get(mat_name)
                    .ok_or_else(|| err(format!("unknown material '{mat_name}'")))?;
                triangles.push(Triangle::new(v[0], v[1], v[2], mat));
                triangles.push(Triangle::new(v[0], v[2], v[3], mat));
            }
            other => return Err(err(format!("unknown keyword '{other}'"))),
        }
    }
    if triangles.is_empty() {
        return Err(Error::Parse {
            path: source.to_path_buf(),
            line: 0,
            message: "scene has no geometry".into(),
        });
    }
    Scene::new(triangles, materials, environment, camera)
}
