//! Post-training search over per-depth strategy assignments.
//!
//! Every candidate assignment is scored by a short probe render. Small
//! depths are searched exhaustively; larger ones segment the depth range
//! and optimize one segment at a time with the later ones held at fixed RR.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Rgb;
use crate::neural::NeuralRrs;
use crate::rrs::{FactorContext, Strategy, StrategyKind};
use crate::scene::Scene;
use crate::wavefront::{Engine, EngineConfig, Film};

/// Exhaustive searches larger than this are refused.
pub const DEFAULT_SEARCH_CAP: usize = 729;

/// One strategy per depth, depth 1 first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthAssignment {
    pub kinds: Vec<StrategyKind>,
}

impl DepthAssignment {
    pub fn uniform(kind: StrategyKind, depth: usize) -> Self {
        Self { kinds: vec![kind; depth] }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn to_strategy(&self) -> Result<Strategy> {
        Strategy::per_depth(self.kinds.clone())
    }
}

impl fmt::Display for DepthAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.kinds.iter().map(|k| k.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// RelMSE times probe wall time.
    #[default]
    RelMseTime,
    /// RelMSE alone; reproducible.
    RelMse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEstimate {
    pub relmse: f64,
    pub rays: u64,
    pub seconds: f64,
    pub score: f64,
}

impl EfficiencyEstimate {
    pub fn new(relmse: f64, rays: u64, seconds: f64, mode: ScoreMode) -> Self {
        let score = match mode {
            ScoreMode::RelMseTime => relmse * seconds,
            ScoreMode::RelMse => relmse,
        };
        let score = if score.is_finite() { score } else { f64::MAX };
        Self {
            relmse,
            rays,
            seconds,
            score,
        }
    }
}

/// Scores one assignment.
pub trait Probe {
    fn probe(&mut self, assignment: &DepthAssignment) -> Result<EfficiencyEstimate>;
}

impl<F> Probe for F
where
    F: FnMut(&DepthAssignment) -> Result<EfficiencyEstimate>,
{
    fn probe(&mut self, assignment: &DepthAssignment) -> Result<EfficiencyEstimate> {
        self(assignment)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchRow {
    pub assignment: String,
    pub score: f64,
    pub relmse: f64,
    pub rays: u64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: DepthAssignment,
    pub estimate: EfficiencyEstimate,
    pub probes: usize,
    pub log: Vec<SearchRow>,
}

impl SearchResult {
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.log {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn check_args(strategies: &[StrategyKind], depth: usize) -> Result<()> {
    if strategies.is_empty() || depth == 0 {
        return Err(Error::InvalidArgument("search needs at least one strategy and one depth".into()));
    }
    Ok(())
}

/// Number of assignments of `len` slots from `k` strategies, if it fits.
fn combinations(k: usize, len: usize) -> u128 {
    (0..len).fold(1u128, |acc, _| acc.saturating_mul(k as u128))
}

/// Exhaustively try every value of `slots` (indices into `base.kinds`),
/// in lexicographic order with the first slot most significant. Ties keep
/// the earlier assignment.
fn enumerate(
    strategies: &[StrategyKind],
    base: &DepthAssignment,
    slots: std::ops::Range<usize>,
    probe: &mut dyn Probe,
    log: &mut Vec<SearchRow>,
) -> Result<(DepthAssignment, EfficiencyEstimate, usize)> {
    let len = slots.len();
    let combos = combinations(strategies.len(), len);
    let total = usize::try_from(combos).map_err(|_| Error::SearchTooLarge {
        combinations: combos,
        cap: usize::MAX as u128,
    })?;
    let mut digits = vec![0usize; len];
    let mut best: Option<(DepthAssignment, EfficiencyEstimate)> = None;
    for _ in 0..total {
        let mut a = base.clone();
        for (d, slot) in digits.iter().zip(slots.clone()) {
            a.kinds[slot] = strategies[*d];
        }
        let est = probe.probe(&a)?;
        log.push(SearchRow {
            assignment: a.to_string(),
            score: est.score,
            relmse: est.relmse,
            rays: est.rays,
            time: est.seconds,
        });
        if best.as_ref().is_none_or(|(_, b)| est.score < b.score) {
            best = Some((a, est));
        }
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < strategies.len() {
                break;
            }
            *d = 0;
        }
    }
    let (a, e) = best.expect("at least one combination");
    Ok((a, e, total))
}

/// Try all `|strategies|^depth` assignments.
pub fn brute_force_search(strategies: &[StrategyKind], depth: usize, cap: usize, probe: &mut dyn Probe) -> Result<SearchResult> {
    check_args(strategies, depth)?;
    let n = combinations(strategies.len(), depth);
    if n > cap as u128 {
        return Err(Error::SearchTooLarge {
            combinations: n,
            cap: cap as u128,
        });
    }
    let mut log = Vec::new();
    let base = DepthAssignment::uniform(strategies[0], depth);
    let (best, estimate, probes) = enumerate(strategies, &base, 0..depth, probe, &mut log)?;
    Ok(SearchResult {
        best,
        estimate,
        probes,
        log,
    })
}

/// Segments of `segment` depths (the last one takes the remainder),
/// optimized front to back with later depths at fixed RR.
pub fn heuristic_search(strategies: &[StrategyKind], depth: usize, segment: usize, probe: &mut dyn Probe) -> Result<SearchResult> {
    check_args(strategies, depth)?;
    if segment == 0 || segment > depth {
        return Err(Error::InvalidArgument(format!("segment length must be in 1..={depth}, got {segment}")));
    }
    let mut current = DepthAssignment::uniform(StrategyKind::Fixed(1.0), depth);
    let mut log = Vec::new();
    let mut probes = 0;
    let mut estimate = None;
    let mut start = 0;
    while start < depth {
        let end = (start + segment).min(depth);
        let (best, e, n) = enumerate(strategies, &current, start..end, probe, &mut log)?;
        current = best;
        estimate = Some(e);
        probes += n;
        start = end;
    }
    Ok(SearchResult {
        best: current,
        estimate: estimate.expect("at least one segment"),
        probes,
        log,
    })
}

/// Probes by rendering a few frames with fixed seeds and comparing against
/// a reference.
pub struct RenderProbe<'a> {
    pub scene: &'a Scene,
    pub engine: EngineConfig,
    pub network: Option<&'a NeuralRrs>,
    /// Pixel estimate handed to the factor strategies.
    pub pixel_estimate: &'a [Rgb],
    pub reference: &'a [Rgb],
    pub frames: u32,
    pub mode: ScoreMode,
}

impl Probe for RenderProbe<'_> {
    fn probe(&mut self, assignment: &DepthAssignment) -> Result<EfficiencyEstimate> {
        let strategy = assignment.to_strategy()?;
        let cam = &self.scene.camera;
        let mut engine = Engine::new(
            EngineConfig {
                record_training: false,
                ..self.engine.clone()
            },
            cam.pixel_count(),
        )?;
        let mut film = Film::new(cam.width, cam.height);
        let mut ctx = FactorContext::new(self.pixel_estimate);
        if let Some(n) = self.network {
            n.bind(&mut ctx);
        }
        let start = Instant::now();
        let mut rays = 0;
        for _ in 0..self.frames.max(1) {
            rays += engine.trace_frame(self.scene, &strategy, &ctx, &mut film)?.report.total_rays();
        }
        let seconds = start.elapsed().as_secs_f64();
        let relmse = crate::bench::relmse(&film.mean(), self.reference)?;
        Ok(EfficiencyEstimate::new(relmse, rays, seconds, self.mode))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    const S3: [StrategyKind; 3] = [StrategyKind::Nrrs, StrategyKind::AdrrsNn, StrategyKind::Fixed(1.0)];

    fn frozen(seed: u64) -> impl FnMut(&DepthAssignment) -> Result<EfficiencyEstimate> {
        let mut table = HashMap::new();
        let mut rng = crate::rng::RngStream::new(seed, 0);
        move |a: &DepthAssignment| {
            let s = *table.entry(a.to_string()).or_insert_with(|| rng.next_f64());
            Ok(EfficiencyEstimate::new(s, 1, 1.0, ScoreMode::RelMse))
        }
    }

    #[test]
    fn brute_force_counts_and_cap() {
        let mut n = 0;
        let mut count = |_: &DepthAssignment| {
            n += 1;
            Ok(EfficiencyEstimate::new(1.0, 0, 0.0, ScoreMode::RelMse))
        };
        let r = brute_force_search(&S3, 1, DEFAULT_SEARCH_CAP, &mut count).unwrap();
        assert!(matches!(
            brute_force_search(&S3, 7, DEFAULT_SEARCH_CAP, &mut count),
            Err(Error::SearchTooLarge { combinations: 2187, .. })
        ));
        assert_eq!(r.probes, 3);
        assert_eq!(n, 3);
        // all ties: the lexicographically first assignment wins
        assert_eq!(r.best.kinds, vec![StrategyKind::Nrrs]);
    }

    #[test]
    fn heuristic_probe_counts() {
        let mut p = frozen(1);
        assert_eq!(heuristic_search(&S3, 10, 6, &mut p).unwrap().probes, 810);
        let two = [StrategyKind::Nrrs, StrategyKind::Fixed(1.0)];
        assert_eq!(heuristic_search(&two, 4, 2, &mut p).unwrap().probes, 8);
        assert!(heuristic_search(&two, 4, 5, &mut p).is_err());
    }

    #[test]
    fn single_segment_equals_brute_force() {
        for seed in 0..5 {
            let a = brute_force_search(&S3, 4, DEFAULT_SEARCH_CAP, &mut frozen(seed)).unwrap();
            let b = heuristic_search(&S3, 4, 4, &mut frozen(seed)).unwrap();
            assert_eq!(a.best, b.best);
        }
    }

    #[test]
    fn heuristic_lies_between_optimum_and_baseline() {
        for seed in 0..10 {
            let mut p = frozen(seed);
            let global = brute_force_search(&S3, 5, DEFAULT_SEARCH_CAP, &mut p).unwrap();
            let h = heuristic_search(&S3, 5, 2, &mut p).unwrap();
            let base = p(&DepthAssignment::uniform(StrategyKind::Fixed(1.0), 5)).unwrap();
            assert!(h.estimate.score >= global.estimate.score);
            assert!(h.estimate.score <= base.score);
        }
    }
}
