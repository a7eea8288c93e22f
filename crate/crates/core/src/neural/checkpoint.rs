//! Binary weight checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `NRRSCKPT` | 8 bytes |
//! | version | u32 |
//! | variant (0 NRRS, 1 AID) | u8 |
//! | config length, config as TOML | u32, bytes |
//! | position bounds min xyz, max xyz | 6 x f32 |
//! | optimizer steps, skipped steps | 2 x u64 |
//! | StatNet: count, weights, averaged weights | u64, f32..., f32... |
//! | RRSNet: same | |
//!
//! Optimizer moments are not stored; training resumed from a checkpoint
//! restarts Adam.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

use super::adam::Ema;
use super::trainer::NeuralRrs;
use super::{NeuralConfig, Variant};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NRRSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    data: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() < n {
            return Err(bad("truncated checkpoint"));
        }
        let (a, b) = self.data.split_at(n);
        self.data = b;
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| bad("bad length"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl NeuralRrs {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match self.config.variant {
            Variant::Nrrs => 0,
            Variant::Aid => 1,
        });
        let cfg = toml::to_string(&self.config).map_err(|e| bad(format!("cannot encode config: {e}")))?;
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        let (lo, hi) = self.statnet.bounds();
        put_f32s(&mut out, &[lo.x, lo.y, lo.z, hi.x, hi.y, hi.z]);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.skipped_steps.to_le_bytes());
        for (p, e) in [(&self.stat_params, &self.stat_ema), (&self.rrs_params, &self.rrs_ema)] {
            out.extend_from_slice(&(p.len() as u64).to_le_bytes());
            put_f32s(&mut out, p);
            put_f32s(&mut out, e.weights());
        }
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let variant = match r.take(1)?[0] {
            0 => Variant::Nrrs,
            1 => Variant::Aid,
            v => return Err(bad(format!("unknown variant tag {v}"))),
        };
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| bad("config is not UTF-8"))?;
        let config: NeuralConfig = toml::from_str(text).map_err(|e| bad(format!("bad config: {e}")))?;
        if config.variant != variant {
            return Err(bad("variant tag disagrees with config"));
        }
        let b = r.f32s(6)?;
        let bounds = (Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]));
        let mut net = NeuralRrs::new(config, bounds)?;
        net.step = r.u64()?;
        net.skipped_steps = r.u64()?;
        let decay = net.config.ema_decay;
        for which in 0..2 {
            let expected = if which == 0 { net.stat_params.len() } else { net.rrs_params.len() };
            let n = r.u64()? as usize;
            if n != expected {
                return Err(bad(format!("network {which} has {n} weights, config implies {expected}")));
            }
            let params = r.f32s(n)?;
            let mut ema = Ema::new(decay, &[]);
            ema.set_weights(r.f32s(n)?);
            if which == 0 {
                net.stat_params = params;
                net.stat_ema = ema;
            } else {
                net.rrs_params = params;
                net.rrs_ema = ema;
            }
        }
        if !r.data.is_empty() {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        f.write_all(&bytes).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut data = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut data))
            .map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        Self::from_bytes(&data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rgb;
    use crate::neural::HashGridConfig;
    use crate::rrs::ShadingEvent;

    #[test]
    fn round_trip_preserves_predictions() {
        let cfg = NeuralConfig {
            variant: Variant::Aid,
            grid: HashGridConfig {
                levels: 2,
                log2_table_size: 10,
                init_scale: 0.3,
                ..Default::default()
            },
            ..Default::default()
        };
        let net = NeuralRrs::new(cfg, (Vec3::splat(-1.0), Vec3::splat(2.0))).unwrap();
        let bytes = net.to_bytes().unwrap();
        let back = NeuralRrs::from_bytes(&bytes).unwrap();
        let ev = [ShadingEvent {
            position: Vec3::new(0.2, 0.4, 1.5),
            normal: Vec3::new(0.0, 1.0, 0.0),
            wo: Vec3::new(0.0, 1.0, 0.0),
            roughness: 0.2,
            weight: Rgb::splat(0.7),
            pixel: 0,
            depth: 3,
        }];
        assert_eq!(net.predict_factors(&ev, &[Rgb::splat(0.5)]), back.predict_factors(&ev, &[Rgb::splat(0.5)]));
        assert_eq!(net.inference_weights(), back.inference_weights());

        let mut broken = bytes.clone();
        broken[0] = b'X';
        assert!(NeuralRrs::from_bytes(&broken).is_err());
        assert!(NeuralRrs::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
