use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::cache::OctreeCache;
use crate::error::{Error, Result};
use crate::math::Rgb;
use crate::mixdepth::{brute_force_search, heuristic_search, RenderProbe, SearchResult};
use crate::neural::{NeuralConfig, NeuralRrs, Variant};
use crate::rrs::{FactorContext, Strategy, StrategyKind};
use crate::scene::{builtin_scene, load_scene_file, BuiltinScene, Scene};
use crate::wavefront::{Engine, EngineConfig, Film, FrameReport};

use super::{read_pfm, relmse, write_pfm, write_ppm, MetricsReport, RunConfig, SearchMode};

// Seed offsets keep training and probe renders on streams disjoint from
// the final render.
const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0000;
const PROBE_STREAM: u64 = 0x7072_6f62_6500_0000;
/// References do not depend on the run seed, so runs that differ only in
/// seed share one.
const REFERENCE_SEED: u64 = 0x7265_6600_0000_0000;

/// Hard stop for ray-budgeted renders.
const MAX_BUDGET_FRAMES: u64 = 1 << 20;

/// What a run renders with: a fixed strategy, or a per-depth assignment
/// searched after training the base network.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Strategy(Strategy),
    MixDepth(StrategyKind),
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(base) = s.trim().strip_suffix("+mix") {
            let kind: StrategyKind = base.parse()?;
            if !matches!(kind, StrategyKind::Nrrs | StrategyKind::AidNrrs) {
                return Err(Error::InvalidArgument(format!("mix-depth base must be nrrs or aid-nrrs, got {kind}")));
            }
            return Ok(Method::MixDepth(kind));
        }
        Ok(Method::Strategy(s.parse()?))
    }
}

impl Method {
    /// Strategy used while training.
    pub fn training_strategy(&self) -> Strategy {
        match self {
            Method::Strategy(s) => s.clone(),
            Method::MixDepth(k) => Strategy::uniform(*k),
        }
    }
}

fn variant_for(strategy: &Strategy) -> Result<Option<Variant>> {
    let nrrs = strategy.uses(|k| *k == StrategyKind::Nrrs);
    let aid = strategy.uses(|k| *k == StrategyKind::AidNrrs);
    match (nrrs, aid) {
        (true, true) => Err(Error::InvalidArgument("nrrs and aid-nrrs cannot share one run".into())),
        (false, true) => Ok(Some(Variant::Aid)),
        (true, false) => Ok(Some(Variant::Nrrs)),
        // ADRRS-NN only needs StatNet, which either variant trains
        (false, false) if strategy.uses(StrategyKind::needs_network) => Ok(Some(Variant::Nrrs)),
        (false, false) => Ok(None),
    }
}

/// Learned state produced before the final render.
#[derive(Debug, Clone)]
pub struct Trained {
    pub network: Option<NeuralRrs>,
    pub tree: Option<OctreeCache>,
    /// Pixel estimate handed to the first render frame.
    pub pixel_estimate: Vec<Rgb>,
    pub report: FrameReport,
    pub frames: u32,
    pub seconds: f64,
}

impl Trained {
    fn bind<'a>(&'a self, ctx: &mut FactorContext<'a>) {
        if let Some(n) = &self.network {
            n.bind(ctx);
        }
        if let Some(t) = &self.tree {
            ctx.tree = Some(t);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub film: Film,
    pub report: FrameReport,
    pub frames: u64,
    pub seconds: f64,
}

impl Rendered {
    pub fn image(&self) -> Vec<Rgb> {
        self.film.mean()
    }
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub report: MetricsReport,
    pub trained: Trained,
    pub rendered: Rendered,
    pub search: Option<SearchResult>,
    /// Strategy the final image was rendered with.
    pub strategy: Strategy,
}

pub fn load_scene(cfg: &RunConfig) -> Result<Scene> {
    match cfg.scene.parse::<BuiltinScene>() {
        Ok(kind) => Ok(builtin_scene(kind, cfg.width, cfg.height)),
        Err(_) => load_scene_file(Path::new(&cfg.scene), cfg.width, cfg.height),
    }
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn reference_path(cfg: &RunConfig) -> PathBuf {
    let scene = Path::new(&cfg.scene).file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
    cfg.output_dir.join(format!(
        "reference-{}-{}x{}-d{}-n{}.pfm",
        file_stem(scene),
        cfg.width,
        cfg.height,
        cfg.max_depth,
        cfg.reference_frames
    ))
}

fn read_reference(path: &Path, cfg: &RunConfig) -> Result<Vec<Rgb>> {
    let (w, h, px) = read_pfm(path)?;
    if (w, h) != (cfg.width, cfg.height) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} reference", cfg.width, cfg.height),
            actual: format!("{w}x{h} in {}", path.display()),
        });
    }
    Ok(px)
}

/// The reference for `cfg`: an explicit file, the analytic furnace value,
/// a cached render in the output directory, or a new long plain render.
pub fn reference_image(cfg: &RunConfig, scene: &Scene) -> Result<Vec<Rgb>> {
    if let Some(path) = &cfg.reference {
        return read_reference(path, cfg);
    }
    if cfg.scene.parse::<BuiltinScene>().ok() == Some(BuiltinScene::Furnace) {
        let v = BuiltinScene::furnace_value(cfg.max_depth) as f32;
        return Ok(vec![Rgb::splat(v); cfg.pixel_count()]);
    }
    let path = reference_path(cfg);
    if path.exists() {
        log::info!("using cached reference {}", path.display());
        return read_reference(&path, cfg);
    }
    log::warn!(
        "no reference for this configuration; rendering {} frames of plain path tracing into {}",
        cfg.reference_frames,
        path.display()
    );
    let mut engine = Engine::new(
        EngineConfig {
            seed: REFERENCE_SEED,
            ..cfg.engine()
        },
        scene.camera.pixel_count(),
    )?;
    let mut film = Film::new(scene.camera.width, scene.camera.height);
    let blank = vec![Rgb::BLACK; scene.camera.pixel_count()];
    let ctx = FactorContext::new(&blank);
    let strategy = Strategy::plain();
    for _ in 0..cfg.reference_frames {
        engine.trace_frame(scene, &strategy, &ctx, &mut film)?;
    }
    let image = film.mean();
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    write_pfm(&path, &image, cfg.width, cfg.height)?;
    Ok(image)
}

/// Train whatever `strategy` reads: the networks, the octree, or nothing.
/// A given `network` continues training from its current state.
pub fn train(cfg: &RunConfig, scene: &Scene, strategy: &Strategy, network: Option<NeuralRrs>) -> Result<Trained> {
    let npx = scene.camera.pixel_count();
    let mut engine = Engine::new(
        EngineConfig {
            seed: cfg.seed ^ TRAIN_STREAM,
            ..cfg.engine()
        },
        npx,
    )?;
    let mut trained = Trained {
        network: None,
        tree: None,
        pixel_estimate: vec![Rgb::BLACK; npx],
        report: FrameReport::default(),
        frames: 0,
        seconds: 0.0,
    };
    let needs_tree = strategy.uses(|k| *k == StrategyKind::AdrrsTree);
    let variant = variant_for(strategy)?;
    if needs_tree && variant.is_some() {
        return Err(Error::InvalidArgument("adrrs-tree cannot be combined with network strategies".into()));
    }
    if let Some(variant) = variant {
        let mut net = match network {
            Some(n) if n.variant() == variant => n,
            Some(n) => {
                return Err(Error::InvalidArgument(format!(
                    "strategy needs the {variant} network, checkpoint holds {}",
                    n.variant()
                )))
            }
            None => NeuralRrs::for_scene(
                NeuralConfig {
                    variant,
                    ..cfg.neural.clone()
                },
                scene,
            )?,
        };
        let summary = net.train_frames(scene, &mut engine, strategy, cfg.train_frames)?;
        trained.report = summary.report;
        trained.seconds = summary.seconds;
        trained.frames = summary.frames;
        trained.pixel_estimate = summary.pixel_estimate;
        trained.network = Some(net);
    } else if needs_tree {
        let start = Instant::now();
        let mut tree = OctreeCache::for_scene(scene, cfg.octree);
        let mut film = Film::new(scene.camera.width, scene.camera.height);
        engine.set_record_training(true);
        for _ in 0..cfg.train_frames {
            let prev = film.mean();
            let out = {
                let mut ctx = FactorContext::new(&prev);
                ctx.tree = Some(&tree);
                engine.trace_frame(scene, strategy, &ctx, &mut film)?
            };
            trained.report.merge(&out.report);
            for s in out.samples.iter().filter(|s| s.has_radiance()) {
                tree.insert(s.position, s.radiance);
            }
        }
        trained.frames = cfg.train_frames;
        trained.seconds = start.elapsed().as_secs_f64();
        trained.pixel_estimate = film.mean();
        trained.tree = Some(tree);
    }
    Ok(trained)
}

/// Search a per-depth assignment over `{base, adrrs-nn, fixed RR}` using
/// the trained network.
pub fn search(
    cfg: &RunConfig,
    scene: &Scene,
    trained: &Trained,
    base: StrategyKind,
    reference: &[Rgb],
) -> Result<SearchResult> {
    let network = trained.network.as_ref().ok_or(Error::MissingResource("mix-depth search"))?;
    let strategies = [base, StrategyKind::AdrrsNn, StrategyKind::Fixed(1.0)];
    let mut probe = RenderProbe {
        scene,
        engine: EngineConfig {
            seed: cfg.seed ^ PROBE_STREAM,
            ..cfg.engine()
        },
        network: Some(network),
        pixel_estimate: &trained.pixel_estimate,
        reference,
        frames: cfg.search.probe_frames,
        mode: cfg.search.score,
    };
    let depth = cfg.max_depth as usize;
    let s = &cfg.search;
    let exhaustive = match s.mode {
        SearchMode::BruteForce => true,
        SearchMode::Heuristic => false,
        SearchMode::Auto => (strategies.len() as u128).checked_pow(depth as u32).is_some_and(|n| n <= s.cap as u128),
    };
    if exhaustive {
        brute_force_search(&strategies, depth, s.cap, &mut probe)
    } else {
        heuristic_search(&strategies, depth, s.segment.min(depth), &mut probe)
    }
}

/// Final render into a fresh film. Training frames never enter it.
pub fn render(cfg: &RunConfig, scene: &Scene, strategy: &Strategy, trained: &Trained) -> Result<Rendered> {
    let start = Instant::now();
    let mut engine = Engine::new(cfg.engine(), scene.camera.pixel_count())?;
    let mut film = Film::new(scene.camera.width, scene.camera.height);
    let mut report = FrameReport::default();
    let mut frames = 0u64;
    loop {
        let prev = if frames == 0 {
            trained.pixel_estimate.clone()
        } else {
            film.mean()
        };
        let out = {
            let mut ctx = FactorContext::new(&prev);
            trained.bind(&mut ctx);
            engine.trace_frame(scene, strategy, &ctx, &mut film)?
        };
        report.merge(&out.report);
        frames += 1;
        let done = match cfg.ray_budget {
            Some(budget) => report.total_rays() >= budget || frames >= MAX_BUDGET_FRAMES,
            None => frames >= cfg.render_frames as u64,
        };
        if done {
            break;
        }
    }
    Ok(Rendered {
        film,
        report,
        frames,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Train, optionally search, and render one method.
pub fn run_method(
    cfg: &RunConfig,
    scene: &Scene,
    name: &str,
    method: &Method,
    reference: Option<&[Rgb]>,
    network: Option<NeuralRrs>,
) -> Result<MethodOutcome> {
    let trained = train(cfg, scene, &method.training_strategy(), network)?;
    let (strategy, search_result, search_seconds) = match method {
        Method::Strategy(s) => (s.clone(), None, 0.0),
        Method::MixDepth(base) => {
            let reference = reference.ok_or(Error::MissingResource("mix-depth reference"))?;
            let start = Instant::now();
            let result = search(cfg, scene, &trained, *base, reference)?;
            log::info!("{name}: best assignment {} after {} probes", result.best, result.probes);
            (result.best.to_strategy()?, Some(result), start.elapsed().as_secs_f64())
        }
    };
    let rendered = render(cfg, scene, &strategy, &trained)?;
    let mut report = MetricsReport {
        method: name.to_string(),
        frames: rendered.frames,
        rays: rendered.report.total_rays(),
        relmse: None,
        ray_eff_inv: None,
        overflow_events: rendered.report.overflow_events,
        bias_drop_events: rendered.report.bias_drop_events,
        train_frames: trained.frames as u64,
        train_rays: trained.report.total_rays(),
        train_seconds: trained.seconds,
        search_seconds,
        render_seconds: rendered.seconds,
    };
    if let Some(r) = reference {
        report = report.with_reference(relmse(&rendered.image(), r)?);
    }
    Ok(MethodOutcome {
        report,
        trained,
        rendered,
        search: search_result,
        strategy,
    })
}

fn write_rows<T: serde::Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Run every configured method with identical seeds and budgets against a
/// shared reference. Writes `<method>.pfm/.ppm`, training curves, search
/// logs, `report.csv` and `timings.csv` to the output directory.
pub fn run_comparison(cfg: &RunConfig) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let scene = load_scene(cfg)?;
    let reference = reference_image(cfg, &scene)?;
    let mut reports = Vec::new();
    for name in &cfg.methods {
        let method: Method = name.parse()?;
        let outcome = run_method(cfg, &scene, name, &method, Some(&reference), None)?;
        let stem = file_stem(name);
        let image = outcome.rendered.image();
        write_pfm(&out.join(format!("{stem}.pfm")), &image, cfg.width, cfg.height)?;
        write_ppm(&out.join(format!("{stem}.ppm")), &image, cfg.width, cfg.height)?;
        if let Some(net) = &outcome.trained.network {
            net.write_curve(&out.join(format!("{stem}-train.csv")))?;
        }
        if let Some(s) = &outcome.search {
            s.write_log(&out.join(format!("{stem}-search.csv")))?;
        }
        let r = &outcome.report;
        log::info!(
            "{name}: {} frames, {} rays, RelMSE {:.5}, bias drops {}",
            r.frames,
            r.rays,
            r.relmse.unwrap_or(f64::NAN),
            r.bias_drop_events
        );
        reports.push(outcome.report);
    }
    write_rows(&out.join("report.csv"), reports.iter().map(MetricsReport::row))?;
    write_rows(&out.join("timings.csv"), reports.iter().map(MetricsReport::timing))?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig {
            scene: "cornell".into(),
            width: 8,
            height: 8,
            train_frames: 2,
            render_frames: 4,
            reference_frames: 8,
            ..Default::default()
        }
    }

    #[test]
    fn methods_parse() {
        assert_eq!("nrrs+mix".parse::<Method>().unwrap(), Method::MixDepth(StrategyKind::Nrrs));
        assert!("pt+mix".parse::<Method>().is_err());
        assert_eq!(
            "pt".parse::<Method>().unwrap(),
            Method::Strategy(Strategy::uniform(StrategyKind::Fixed(1.0)))
        );
        assert!(matches!("fixed:1,nrrs".parse::<Method>().unwrap(), Method::Strategy(s) if s.depths.len() == 2));
    }

    #[test]
    fn variant_follows_strategy() {
        assert_eq!(variant_for(&"aid".parse().unwrap()).unwrap(), Some(Variant::Aid));
        assert_eq!(variant_for(&"adrrs-nn".parse().unwrap()).unwrap(), Some(Variant::Nrrs));
        assert_eq!(variant_for(&Strategy::plain()).unwrap(), None);
        assert!(variant_for(&"nrrs,aid".parse().unwrap()).is_err());
    }

    #[test]
    fn plain_ray_count_matches_accounting() {
        // camera rays = Npx per frame; every other ray is a report counter
        let cfg = tiny();
        let scene = load_scene(&cfg).unwrap();
        let trained = train(&cfg, &scene, &Strategy::plain(), None).unwrap();
        assert_eq!(trained.frames, 0);
        let r = render(&cfg, &scene, &Strategy::plain(), &trained).unwrap();
        assert_eq!(r.frames, 4);
        assert_eq!(r.report.camera_rays, 4 * 64);
        assert_eq!(
            r.report.total_rays(),
            r.report.camera_rays + r.report.scatter_rays + r.report.shadow_rays
        );
    }

    #[test]
    fn ray_budget_stops_at_first_frame_over_budget() {
        let cfg = RunConfig {
            ray_budget: Some(1000),
            ..tiny()
        };
        let scene = load_scene(&cfg).unwrap();
        let trained = train(&cfg, &scene, &Strategy::plain(), None).unwrap();
        let r = render(&cfg, &scene, &Strategy::plain(), &trained).unwrap();
        assert!(r.report.total_rays() >= 1000);
        let per_frame = r.report.total_rays() as f64 / r.frames as f64;
        assert!((r.report.total_rays() as f64) < 1000.0 + 2.0 * per_frame);
    }

    #[test]
    fn reference_is_cached_and_reused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            output_dir: dir.path().to_path_buf(),
            ..tiny()
        };
        let scene = load_scene(&cfg).unwrap();
        let a = reference_image(&cfg, &scene).unwrap();
        assert!(reference_path(&cfg).exists());
        let b = reference_image(&cfg, &scene).unwrap();
        assert_eq!(a, b);
        let wrong = RunConfig {
            width: 16,
            reference: Some(reference_path(&cfg)),
            ..cfg.clone()
        };
        assert!(reference_image(&wrong, &scene).is_err());
    }

    #[test]
    fn furnace_reference_is_analytic() {
        let cfg = RunConfig {
            scene: "furnace".into(),
            ..tiny()
        };
        let scene = load_scene(&cfg).unwrap();
        let r = reference_image(&cfg, &scene).unwrap();
        assert!(r.iter().all(|p| (p.g as f64 - BuiltinScene::furnace_value(6)).abs() < 1e-6));
    }
}
