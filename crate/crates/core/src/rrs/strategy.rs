//! Per-depth RRS strategies and batched factor evaluation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};

use super::{adrrs_factor, throughput_rr, AdrrsParams};

/// A surface hit waiting for its RRS decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadingEvent {
    pub position: Vec3,
    pub normal: Vec3,
    pub wo: Vec3,
    pub roughness: f32,
    /// Prefix throughput `g(x) / p(x)`.
    pub weight: Rgb,
    pub pixel: u32,
    pub depth: u32,
}

/// Anything that can estimate mean outgoing radiance at shading events
/// (the octree cache, StatNet).
pub trait RadianceSource: Sync {
    fn mean_radiance(&self, events: &[ShadingEvent]) -> Vec<Rgb>;
}

/// Anything that predicts raw RRS factors directly (RRSNet variants).
pub trait FactorSource: Sync {
    fn factors(&self, events: &[ShadingEvent], pixel_estimate: &[Rgb]) -> Vec<f32>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Fixed(f32),
    Throughput,
    AdrrsTree,
    AdrrsNn,
    Nrrs,
    AidNrrs,
}

impl StrategyKind {
    pub fn needs_network(&self) -> bool {
        matches!(self, StrategyKind::AdrrsNn | StrategyKind::Nrrs | StrategyKind::AidNrrs)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::Fixed(q) => write!(f, "fixed:{q}"),
            StrategyKind::Throughput => f.write_str("throughput"),
            StrategyKind::AdrrsTree => f.write_str("adrrs-tree"),
            StrategyKind::AdrrsNn => f.write_str("adrrs-nn"),
            StrategyKind::Nrrs => f.write_str("nrrs"),
            StrategyKind::AidNrrs => f.write_str("aid-nrrs"),
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(v) = s.strip_prefix("fixed:") {
            let q: f32 = v
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad fixed factor '{v}'")))?;
            if !q.is_finite() || q < 0.0 {
                return Err(Error::InvalidArgument(format!("fixed factor must be finite and >= 0, got {q}")));
            }
            return Ok(StrategyKind::Fixed(q));
        }
        match s {
            "fixed" | "pt" => Ok(StrategyKind::Fixed(1.0)),
            "throughput" => Ok(StrategyKind::Throughput),
            "adrrs-tree" | "adrrs" => Ok(StrategyKind::AdrrsTree),
            "adrrs-nn" => Ok(StrategyKind::AdrrsNn),
            "nrrs" => Ok(StrategyKind::Nrrs),
            "aid-nrrs" | "aid" => Ok(StrategyKind::AidNrrs),
            other => Err(Error::InvalidArgument(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Strategy per vertex depth. Entry `i` applies at depth `i + 1`; depths
/// past the end reuse the last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub depths: Vec<StrategyKind>,
}

impl Strategy {
    pub fn uniform(kind: StrategyKind) -> Self {
        Self { depths: vec![kind] }
    }

    pub fn per_depth(depths: Vec<StrategyKind>) -> Result<Self> {
        if depths.is_empty() {
            return Err(Error::InvalidArgument("strategy needs at least one entry".into()));
        }
        Ok(Self { depths })
    }

    pub fn plain() -> Self {
        Self::uniform(StrategyKind::Fixed(1.0))
    }

    pub fn kind_at(&self, depth: u32) -> StrategyKind {
        let i = (depth.max(1) as usize - 1).min(self.depths.len() - 1);
        self.depths[i]
    }

    pub fn uses(&self, pred: impl Fn(&StrategyKind) -> bool) -> bool {
        self.depths.iter().any(pred)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.depths.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let kinds = s.split(',').map(str::parse).collect::<Result<Vec<_>>>()?;
        Strategy::per_depth(kinds)
    }
}

/// Everything factor evaluation may read. Sources are optional; asking for
/// a strategy whose source is missing is an error.
#[derive(Clone, Copy)]
pub struct FactorContext<'a> {
    /// Accumulated per-pixel estimate from previous frames.
    pub pixel_estimate: &'a [Rgb],
    /// Absolute ADRRS division guard.
    pub guard: f32,
    pub adrrs: AdrrsParams,
    pub tree: Option<&'a dyn RadianceSource>,
    pub statnet: Option<&'a dyn RadianceSource>,
    pub nrrs: Option<&'a dyn FactorSource>,
    pub aid: Option<&'a dyn FactorSource>,
}

impl<'a> FactorContext<'a> {
    pub fn new(pixel_estimate: &'a [Rgb]) -> Self {
        let adrrs = AdrrsParams::default();
        let guard = adrrs_guard(pixel_estimate, adrrs.relative_guard);
        Self {
            pixel_estimate,
            guard,
            adrrs,
            tree: None,
            statnet: None,
            nrrs: None,
            aid: None,
        }
    }
}

/// `relative * mean luminance`, kept away from zero.
pub fn adrrs_guard(image: &[Rgb], relative: f32) -> f32 {
    if image.is_empty() {
        return 1e-8;
    }
    let mean = image.iter().map(|c| c.luminance().max(0.0) as f64).sum::<f64>() / image.len() as f64;
    ((relative as f64 * mean) as f32).max(1e-8)
}

/// Raw factors `q_orig` for a batch of events. Depth-1 events always get 1,
/// zero-throughput events get 0, and non-finite predictions fall back to 1.
pub fn evaluate_factors(strategy: &Strategy, events: &[ShadingEvent], ctx: &FactorContext) -> Result<Vec<f32>> {
    let mut q = vec![1.0f32; events.len()];
    let mut groups: Vec<(StrategyKind, Vec<usize>)> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        if e.depth <= 1 {
            continue;
        }
        if e.weight.is_black() {
            q[i] = 0.0;
            continue;
        }
        let kind = strategy.kind_at(e.depth);
        match groups.iter_mut().find(|(k, _)| *k == kind) {
            Some((_, v)) => v.push(i),
            None => groups.push((kind, vec![i])),
        }
    }
    let pixel = |e: &ShadingEvent| ctx.pixel_estimate.get(e.pixel as usize).copied().unwrap_or(Rgb::BLACK);
    for (kind, idx) in groups {
        let batch: Vec<ShadingEvent> = idx.iter().map(|&i| events[i]).collect();
        let values: Vec<f32> = match kind {
            StrategyKind::Fixed(f) => vec![f; batch.len()],
            StrategyKind::Throughput => batch.iter().map(|e| throughput_rr(e.weight)).collect(),
            StrategyKind::AdrrsTree | StrategyKind::AdrrsNn => {
                let source = if kind == StrategyKind::AdrrsTree {
                    ctx.tree.ok_or(Error::MissingResource("radiance tree for adrrs-tree"))?
                } else {
                    ctx.statnet.ok_or(Error::MissingResource("StatNet for adrrs-nn"))?
                };
                let radiance = source.mean_radiance(&batch);
                batch
                    .iter()
                    .zip(&radiance)
                    .map(|(e, &l)| adrrs_factor(e.weight, l.map(|c| c.max(0.0)), pixel(e), ctx.guard, &ctx.adrrs))
                    .collect()
            }
            StrategyKind::Nrrs => ctx
                .nrrs
                .ok_or(Error::MissingResource("RRSNet for nrrs"))?
                .factors(&batch, ctx.pixel_estimate),
            StrategyKind::AidNrrs => ctx
                .aid
                .ok_or(Error::MissingResource("RRSNet for aid-nrrs"))?
                .factors(&batch, ctx.pixel_estimate),
        };
        for (&i, v) in idx.iter().zip(values) {
            q[i] = if v.is_finite() { v.max(0.0) } else { 1.0 };
        }
    }
    Ok(q)
}
