//! Run configuration, image metrics, references and the comparison runner.

mod image;
mod run;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cache::OctreeConfig;
use crate::error::{Error, Result};
use crate::math::Rgb;
use crate::mixdepth::{ScoreMode, DEFAULT_SEARCH_CAP};
use crate::neural::NeuralConfig;
use crate::wavefront::EngineConfig;

pub use image::{decode_pfm, encode_pfm, read_pfm, tonemap, write_pfm, write_ppm};
pub use run::{
    load_scene, reference_image, render, run_comparison, run_method, search, train, Method, MethodOutcome, Rendered,
    Trained,
};

/// Guard added to the squared reference.
pub const RELMSE_EPSILON: f64 = 0.01;

/// Mean over pixels and channels of `(x - ref)^2 / (ref^2 + 0.01)`.
pub fn relmse(image: &[Rgb], reference: &[Rgb]) -> Result<f64> {
    if image.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} pixels", reference.len()),
            actual: format!("{} pixels", image.len()),
        });
    }
    if image.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (x, r) in image.iter().zip(reference) {
        for c in 0..3 {
            let (x, r) = (x[c] as f64, r[c] as f64);
            sum += (x - r) * (x - r) / (r * r + RELMSE_EPSILON);
        }
    }
    Ok(sum / (3 * image.len()) as f64)
}

/// Rays times RelMSE; lower is better.
pub fn ray_eff_inv(rays: u64, relmse: f64) -> f64 {
    rays as f64 * relmse
}

/// Result of one method in a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub method: String,
    pub frames: u64,
    pub rays: u64,
    pub relmse: Option<f64>,
    pub ray_eff_inv: Option<f64>,
    pub overflow_events: u64,
    pub bias_drop_events: u64,
    pub train_frames: u64,
    pub train_rays: u64,
    pub train_seconds: f64,
    pub search_seconds: f64,
    pub render_seconds: f64,
}

/// Reproducible columns of a report; wall times go to a separate file.
#[derive(Debug, Serialize)]
pub(crate) struct ReportRow<'a> {
    method: &'a str,
    frames: u64,
    rays: u64,
    relmse: Option<f64>,
    ray_eff_inv: Option<f64>,
    overflow_events: u64,
    bias_drop_events: u64,
    train_frames: u64,
    train_rays: u64,
}

#[derive(Debug, Serialize)]
pub(crate) struct TimingRow<'a> {
    method: &'a str,
    train_seconds: f64,
    search_seconds: f64,
    render_seconds: f64,
}

impl MetricsReport {
    pub fn with_reference(mut self, relmse: f64) -> Self {
        self.relmse = Some(relmse);
        self.ray_eff_inv = Some(ray_eff_inv(self.rays, relmse));
        self
    }

    pub(crate) fn row(&self) -> ReportRow<'_> {
        ReportRow {
            method: &self.method,
            frames: self.frames,
            rays: self.rays,
            relmse: self.relmse,
            ray_eff_inv: self.ray_eff_inv,
            overflow_events: self.overflow_events,
            bias_drop_events: self.bias_drop_events,
            train_frames: self.train_frames,
            train_rays: self.train_rays,
        }
    }

    pub(crate) fn timing(&self) -> TimingRow<'_> {
        TimingRow {
            method: &self.method,
            train_seconds: self.train_seconds,
            search_seconds: self.search_seconds,
            render_seconds: self.render_seconds,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Exhaustive when the space fits under the cap, segmented otherwise.
    #[default]
    Auto,
    BruteForce,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub mode: SearchMode,
    pub segment: usize,
    pub cap: usize,
    pub score: ScoreMode,
    /// Frames per probe render.
    pub probe_frames: u32,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            mode: SearchMode::Auto,
            segment: 6,
            cap: DEFAULT_SEARCH_CAP,
            score: ScoreMode::RelMseTime,
            probe_frames: 1,
        }
    }
}

/// Everything a run needs. Every field has a default, so a TOML file only
/// lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Builtin scene name or a scene file path.
    pub scene: String,
    pub width: u32,
    pub height: u32,
    /// Maximum number of surface vertices per path.
    pub max_depth: u32,
    pub seed: u64,
    /// Methods for `compare`; `render` uses the first one. A method is a
    /// strategy (uniform or comma-separated per depth) or `<base>+mix`.
    pub methods: Vec<String>,
    pub train_frames: u32,
    pub render_frames: u32,
    /// When set, rendering stops at the first frame that reaches this many
    /// rays instead of after `render_frames`.
    pub ray_budget: Option<u64>,
    pub rate_control: bool,
    pub f_rate: f32,
    pub rate_epsilon: f32,
    pub deterministic: bool,
    pub threads: usize,
    pub output_dir: PathBuf,
    /// Reference image; generated and cached in `output_dir` when absent.
    pub reference: Option<PathBuf>,
    pub reference_frames: u32,
    pub neural: NeuralConfig,
    pub octree: OctreeConfig,
    pub search: SearchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let engine = EngineConfig::default();
        Self {
            scene: "cornell".into(),
            width: 160,
            height: 90,
            max_depth: engine.max_depth,
            seed: 0,
            methods: vec!["pt".into(), "nrrs".into()],
            train_frames: 64,
            render_frames: 64,
            ray_budget: None,
            rate_control: engine.rate_control,
            f_rate: engine.f_rate,
            rate_epsilon: engine.rate_epsilon,
            deterministic: engine.deterministic,
            threads: engine.threads,
            output_dir: PathBuf::from("out"),
            reference: None,
            reference_frames: 2048,
            neural: NeuralConfig::default(),
            octree: OctreeConfig::default(),
            search: SearchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.width < 8 || self.height < 8 {
            return bad(format!("resolution must be at least 8x8, got {}x{}", self.width, self.height));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive".into());
        }
        if self.train_frames == 0 || self.render_frames == 0 || self.reference_frames == 0 {
            return bad("frame budgets must be positive".into());
        }
        if self.ray_budget == Some(0) {
            return bad("ray_budget must be positive".into());
        }
        if !(self.f_rate > 0.0 && self.f_rate <= 1.0) {
            return bad(format!("f_rate must be in (0, 1], got {}", self.f_rate));
        }
        if self.search.segment == 0 || self.search.probe_frames == 0 {
            return bad("search segment and probe frames must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        for m in &self.methods {
            m.parse::<Method>()?;
        }
        self.neural.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            max_depth: self.max_depth,
            seed: self.seed,
            rate_control: self.rate_control,
            f_rate: self.f_rate,
            rate_epsilon: self.rate_epsilon,
            deterministic: self.deterministic,
            threads: self.threads,
            record_training: false,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}
