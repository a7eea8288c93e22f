//! PFM (float) and PPM (8-bit preview) image files.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Rgb;

fn check_len(pixels: &[Rgb], width: u32, height: u32) -> Result<()> {
    let n = width as usize * height as usize;
    if pixels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{width}x{height} = {n} pixels"),
            actual: format!("{} pixels", pixels.len()),
        });
    }
    Ok(())
}

/// Encode a little-endian color PFM. Rows are stored bottom to top.
pub fn encode_pfm(pixels: &[Rgb], width: u32, height: u32) -> Result<Vec<u8>> {
    check_len(pixels, width, height)?;
    let mut out = format!("PF\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(pixels.len() * 12);
    for y in (0..height as usize).rev() {
        for p in &pixels[y * width as usize..(y + 1) * width as usize] {
            for v in [p.r, p.g, p.b] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Decode a color (`PF`) or grayscale (`Pf`) PFM of either byte order.
pub fn decode_pfm(bytes: &[u8]) -> Result<(u32, u32, Vec<Rgb>)> {
    let bad = |m: &str| Error::InvalidArgument(format!("malformed PFM: {m}"));
    // header: three whitespace-separated tokens after the magic, then one
    // whitespace byte before the raster
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("unknown magic")),
    };
    let width: u32 = tokens[1].parse().map_err(|_| bad("width"))?;
    let height: u32 = tokens[2].parse().map_err(|_| bad("height"))?;
    let scale: f32 = tokens[3].parse().map_err(|_| bad("scale"))?;
    let little = scale < 0.0;
    let n = width as usize * height as usize;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() < n * channels * 4 {
        return Err(bad("truncated raster"));
    }
    let value = |i: usize| {
        let b: [u8; 4] = raster[i * 4..i * 4 + 4].try_into().expect("four bytes");
        if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let mut pixels = vec![Rgb::BLACK; n];
    for row in 0..height as usize {
        let y = height as usize - 1 - row;
        for x in 0..width as usize {
            let i = (row * width as usize + x) * channels;
            pixels[y * width as usize + x] = if channels == 3 {
                Rgb::new(value(i), value(i + 1), value(i + 2))
            } else {
                Rgb::splat(value(i))
            };
        }
    }
    Ok((width, height, pixels))
}

pub fn write_pfm(path: &Path, pixels: &[Rgb], width: u32, height: u32) -> Result<()> {
    let bytes = encode_pfm(pixels, width, height)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<(u32, u32, Vec<Rgb>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

/// Clamp to `[0,1]` and apply a 2.2 gamma.
pub fn tonemap(v: f32) -> u8 {
    if !v.is_finite() || v <= 0.0 {
        return 0;
    }
    (v.min(1.0).powf(1.0 / 2.2) * 255.0 + 0.5) as u8
}

pub fn write_ppm(path: &Path, pixels: &[Rgb], width: u32, height: u32) -> Result<()> {
    check_len(pixels, width, height)?;
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    write!(f, "P6\n{width} {height}\n255\n").map_err(io)?;
    let raster: Vec<u8> = pixels.iter().flat_map(|p| [tonemap(p.r), tonemap(p.g), tonemap(p.b)]).collect();
    f.write_all(&raster).map_err(io)?;
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_keeps_orientation() {
        let px: Vec<Rgb> = (0..6).map(|i| Rgb::new(i as f32, 0.5 * i as f32, -1.0)).collect();
        let bytes = encode_pfm(&px, 3, 2).unwrap();
        // first stored row is the bottom one
        let header = b"PF\n3 2\n-1.0\n".len();
        assert_eq!(f32::from_le_bytes(bytes[header..header + 4].try_into().unwrap()), 3.0);
        let (w, h, back) = decode_pfm(&bytes).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(back, px);
    }

    #[test]
    fn big_endian_grayscale_is_read() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        for v in [0.25f32, 4.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let (_, _, px) = decode_pfm(&bytes).unwrap();
        assert_eq!(px, vec![Rgb::splat(0.25), Rgb::splat(4.0)]);
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(decode_pfm(b"P6\n1 1\n255\n").is_err());
        assert!(decode_pfm(b"PF\n2 2\n-1.0\n\0\0").is_err());
        assert!(encode_pfm(&[Rgb::BLACK], 2, 2).is_err());
    }

    #[test]
    fn tonemap_clamps_and_applies_gamma() {
        assert_eq!(tonemap(-1.0), 0);
        assert_eq!(tonemap(f32::NAN), 0);
        assert_eq!(tonemap(7.0), 255);
        assert_eq!(tonemap(0.5), (0.5f32.powf(1.0 / 2.2) * 255.0 + 0.5) as u8);
    }
}
