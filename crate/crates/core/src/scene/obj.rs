//! Minimal Wavefront OBJ reader: positions, normals and polygonal faces.

use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

use super::Triangle;

/// Parse OBJ text into triangles that all use `material`. Polygons are
/// fan-triangulated; texture coordinates are ignored.
pub fn parse_obj(text: &str, material: u32, source: &Path) -> Result<Vec<Triangle>> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut out = Vec::new();
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let raw = raw.split('#').next().unwrap_or("").trim();
        let mut it = raw.split_whitespace();
        let Some(tag) = it.next() else { continue };
        match tag {
            "v" | "vn" => {
                let xs: Vec<f32> = it
                    .take(3)
                    .map(|s| s.parse::<f32>().map_err(|e| err(line, format!("bad number '{s}': {e}"))))
                    .collect::<Result<_>>()?;
                if xs.len() != 3 {
                    return Err(err(line, format!("'{tag}' needs three components")));
                }
                let v = Vec3::new(xs[0], xs[1], xs[2]);
                if tag == "v" {
                    positions.push(v);
                } else {
                    normals.push(v);
                }
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let vi = resolve(parts.next(), positions.len()).ok_or_else(|| err(line, format!("bad vertex '{tok}'")))?;
                    let _vt = parts.next();
                    let ni = match parts.next() {
                        Some(s) if !s.is_empty() => {
                            Some(resolve(Some(s), normals.len()).ok_or_else(|| err(line, format!("bad normal '{tok}'")))?)
                        }
                        _ => None,
                    };
                    corners.push((vi, ni));
                }
                if corners.len() < 3 {
                    return Err(err(line, "face needs at least three vertices".into()));
                }
                for k in 1..corners.len() - 1 {
                    let (a, b, c) = (corners[0], corners[k], corners[k + 1]);
                    let mut t = Triangle::new(positions[a.0], positions[b.0], positions[c.0], material);
                    if let (Some(na), Some(nb), Some(nc)) = (a.1, b.1, c.1) {
                        t.normals = Some([normals[na], normals[nb], normals[nc]]);
                    }
                    out.push(t);
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// OBJ indices are 1-based; negative values count back from the end.
fn resolve(tok: Option<&str>, len: usize) -> Option<usize> {
    let i: i64 = tok?.parse().ok()?;
    let idx = if i > 0 { i - 1 } else { len as i64 + i };
    (idx >= 0 && (idx as usize) < len).then_some(idx as usize)
}

pub fn load_obj(path: &Path, material: u32) -> Result<Vec<Triangle>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, material, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_with_normals_and_negative_indices() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf -4//1 -3//1 -2//1 -1//1\n";
        let tris = parse_obj(src, 2, Path::new("q.obj")).unwrap();
        assert_eq!(tris.len(), 2);
        assert!(tris.iter().all(|t| t.material == 2 && t.normals.is_some()));
        let area: f32 = tris.iter().map(|t| t.area()).sum();
        assert!((area - 1.0).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_index_reports_line() {
        let src = "v 0 0 0\nv 1 0 0\nf 1 2 3\n";
        match parse_obj(src, 0, Path::new("bad.obj")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
