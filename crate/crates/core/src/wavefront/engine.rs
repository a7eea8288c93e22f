use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};
use crate::rng::{camera_lineage, child_lineage, Purpose, RngStream};
use crate::rrs::{apply_rate_control, normalize, evaluate_factors, FactorContext, RateControl, ShadingEvent, Strategy};
use crate::sampling::stochastic_round;
use crate::scene::{power_heuristic, Intersection, Scene, SurfaceInteraction};

use super::{dispatch, queue_capacity, Film, PathState, WorkQueue};

const NO_RECORD: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Maximum number of surface vertices per path.
    pub max_depth: u32,
    pub seed: u64,
    pub rate_control: bool,
    pub f_rate: f32,
    pub rate_epsilon: f32,
    /// Accumulate the film in a fixed order so results do not depend on the
    /// number of workers.
    pub deterministic: bool,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    /// Emit training samples with their local radiance targets.
    pub record_training: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_depth: 6,
            seed: 0,
            rate_control: true,
            f_rate: 0.85,
            rate_epsilon: 0.01,
            deterministic: true,
            threads: 0,
            record_training: false,
        }
    }
}

/// Counters for one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: u64,
    pub camera_rays: u64,
    pub scatter_rays: u64,
    pub shadow_rays: u64,
    /// Rays intersected at each depth (index 0 is the camera depth).
    pub rays_per_depth: Vec<u64>,
    pub surface_hits: u64,
    pub light_hits: u64,
    pub misses: u64,
    /// Sum of realized counts before any capacity clipping.
    pub realized_children: u64,
    pub spawned_children: u64,
    /// Realized totals above the pixel budget (absorbed by queue slack).
    pub overflow_events: u64,
    /// Depths at which the realized total exceeded queue capacity.
    pub bias_drop_events: u64,
    pub dropped_children: u64,
    pub nonfinite_children: u64,
    /// Children whose BSDF sample was rejected.
    pub rejected_children: u64,
    pub f_norm: Vec<f64>,
    pub mean_q_orig: Vec<f64>,
    pub mean_q_norm: Vec<f64>,
}

impl FrameReport {
    pub fn total_rays(&self) -> u64 {
        self.camera_rays + self.scatter_rays + self.shadow_rays
    }

    pub fn merge(&mut self, o: &FrameReport) {
        self.camera_rays += o.camera_rays;
        self.scatter_rays += o.scatter_rays;
        self.shadow_rays += o.shadow_rays;
        if self.rays_per_depth.len() < o.rays_per_depth.len() {
            self.rays_per_depth.resize(o.rays_per_depth.len(), 0);
        }
        for (a, b) in self.rays_per_depth.iter_mut().zip(&o.rays_per_depth) {
            *a += b;
        }
        self.surface_hits += o.surface_hits;
        self.light_hits += o.light_hits;
        self.misses += o.misses;
        self.realized_children += o.realized_children;
        self.spawned_children += o.spawned_children;
        self.overflow_events += o.overflow_events;
        self.bias_drop_events += o.bias_drop_events;
        self.dropped_children += o.dropped_children;
        self.nonfinite_children += o.nonfinite_children;
        self.rejected_children += o.rejected_children;
        self.frame = o.frame;
    }
}

/// Everything the losses need about one shading event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSample {
    pub position: Vec3,
    pub normal: Vec3,
    pub wo: Vec3,
    pub roughness: f32,
    /// Prefix throughput `t_x`.
    pub throughput: Rgb,
    /// Pixel estimate the factor was computed with.
    pub pixel_estimate: Rgb,
    /// One-sample estimate of scattered radiance, averaged over the
    /// realized children. Meaningful only when `count > 0`.
    pub radiance: Rgb,
    pub q_orig: f32,
    pub q_norm: f32,
    pub q_rate: f32,
    pub count: u32,
    pub pixel: u32,
    pub depth: u32,
}

impl TrainSample {
    pub fn has_radiance(&self) -> bool {
        self.count > 0
    }

    pub fn event(&self) -> ShadingEvent {
        ShadingEvent {
            position: self.position,
            normal: self.normal,
            wo: self.wo,
            roughness: self.roughness,
            weight: self.throughput,
            pixel: self.pixel,
            depth: self.depth,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FrameOutput {
    pub report: FrameReport,
    /// This frame's one-path-per-pixel estimate.
    pub image: Vec<Rgb>,
    pub samples: Vec<TrainSample>,
    /// Pixel values rebuilt from the training records; equals `image` up to
    /// rounding. Empty unless recording.
    pub reconstructed: Vec<Rgb>,
}

/// Bookkeeping for one traced ray, used to build unbiased training targets.
#[derive(Debug, Clone, Copy)]
struct Record {
    parent: u32,
    /// `f * cos / pdf` of the BSDF sample that produced this ray.
    edge: Rgb,
    /// MIS-weighted emission found by this ray.
    emitted: Rgb,
    /// Sum over children of their contributions, plus NEE.
    child_sum: [f64; 3],
    q_rate: f32,
    count: u32,
    sample: u32,
}

impl Record {
    fn new(parent: u32, edge: Rgb) -> Self {
        Self {
            parent,
            edge,
            emitted: Rgb::BLACK,
            child_sum: [0.0; 3],
            q_rate: 0.0,
            count: 0,
            sample: NO_RECORD,
        }
    }

    fn scattered(&self) -> Rgb {
        if self.q_rate > 0.0 && self.count > 0 {
            let inv = 1.0 / self.q_rate as f64;
            Rgb::new(
                (self.child_sum[0] * inv) as f32,
                (self.child_sum[1] * inv) as f32,
                (self.child_sum[2] * inv) as f32,
            )
        } else {
            Rgb::BLACK
        }
    }
}

struct Accumulator {
    sums: Vec<[AtomicU64; 3]>,
    deterministic: bool,
}

fn atomic_add(cell: &AtomicU64, v: f64) {
    let mut cur = cell.load(Ordering::Relaxed);
    loop {
        let next = (f64::from_bits(cur) + v).to_bits();
        match cell.compare_exchange_weak(cur, next, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(actual) => cur = actual,
        }
    }
}

impl Accumulator {
    fn new(n: usize, deterministic: bool) -> Self {
        Self {
            sums: (0..n).map(|_| [AtomicU64::new(0), AtomicU64::new(0), AtomicU64::new(0)]).collect(),
            deterministic,
        }
    }

    fn add_all(&self, contributions: &[(u32, Rgb)]) {
        let add = |&(px, c): &(u32, Rgb)| {
            if c.is_black() {
                return;
            }
            let cell = &self.sums[px as usize];
            atomic_add(&cell[0], c.r as f64);
            atomic_add(&cell[1], c.g as f64);
            atomic_add(&cell[2], c.b as f64);
        };
        if self.deterministic {
            contributions.iter().for_each(add);
        } else {
            contributions.par_iter().for_each(add);
        }
    }

    fn image(&self) -> Vec<Rgb> {
        self.sums
            .iter()
            .map(|c| {
                let v = |i: usize| f64::from_bits(c[i].load(Ordering::Relaxed)) as f32;
                Rgb::new(v(0), v(1), v(2))
            })
            .collect()
    }
}

#[derive(Default)]
struct VertexOut {
    children: Vec<(PathState, Rgb)>,
    nee: Rgb,
    shadow_rays: u64,
    nonfinite: u64,
    rejected: u64,
}

pub struct Engine {
    config: EngineConfig,
    rate: RateControl,
    npx: usize,
    frame: u64,
    current: WorkQueue<PathState>,
    next: WorkQueue<PathState>,
    pool: Option<rayon::ThreadPool>,
}

impl Engine {
    pub fn new(config: EngineConfig, npx: usize) -> Result<Self> {
        if config.max_depth == 0 {
            return Err(Error::InvalidArgument("max depth must be at least 1".into()));
        }
        if npx == 0 {
            return Err(Error::InvalidArgument("image has no pixels".into()));
        }
        let rate = if config.rate_control {
            RateControl::new(config.f_rate, config.rate_epsilon)?
        } else {
            RateControl::disabled()
        };
        let pool = if config.threads > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?,
            )
        } else {
            None
        };
        let cap = queue_capacity(npx);
        Ok(Self {
            config,
            rate,
            npx,
            frame: 0,
            current: WorkQueue::with_capacity(cap),
            next: WorkQueue::with_capacity(cap),
            pool,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn rate_control(&self) -> &RateControl {
        &self.rate
    }

    pub fn frame_index(&self) -> u64 {
        self.frame
    }

    pub fn set_frame_index(&mut self, frame: u64) {
        self.frame = frame;
    }

    pub fn set_record_training(&mut self, on: bool) {
        self.config.record_training = on;
    }

    /// Trace one path per pixel, add the result to `film` and report what
    /// happened.
    pub fn trace_frame(
        &mut self,
        scene: &Scene,
        strategy: &Strategy,
        ctx: &FactorContext,
        film: &mut Film,
    ) -> Result<FrameOutput> {
        if scene.camera.pixel_count() != self.npx || film.pixel_count() != self.npx {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixels", self.npx),
                actual: format!("camera {} / film {}", scene.camera.pixel_count(), film.pixel_count()),
            });
        }
        let out = match self.pool.take() {
            Some(pool) => {
                let r = pool.install(|| self.run(scene, strategy, ctx));
                self.pool = Some(pool);
                r
            }
            None => self.run(scene, strategy, ctx),
        }?;
        film.add_frame(&out.0.image);
        film.normals = out.1;
        Ok(out.0)
    }

    fn run(&mut self, scene: &Scene, strategy: &Strategy, ctx: &FactorContext) -> Result<(FrameOutput, Vec<Vec3>)> {
        let npx = self.npx;
        let seed = self.config.seed;
        let depth_max = self.config.max_depth;
        let recording = self.config.record_training;
        let frame = self.frame;
        self.frame += 1;

        let acc = Accumulator::new(npx, self.config.deterministic);
        let mut report = FrameReport {
            frame,
            rays_per_depth: vec![0; depth_max as usize],
            ..Default::default()
        };
        let mut records: Vec<Record> = Vec::new();
        let mut samples: Vec<TrainSample> = Vec::new();
        let mut normals = vec![Vec3::ZERO; npx];

        self.current.clear();
        for px in 0..npx as u32 {
            let lineage = camera_lineage(frame, px);
            let mut rng = RngStream::for_path(seed, lineage, 0, Purpose::Camera);
            let ray = scene.camera.generate_ray(px, rng.next_2d());
            let record = if recording {
                records.push(Record::new(NO_RECORD, Rgb::WHITE));
                records.len() as u32 - 1
            } else {
                NO_RECORD
            };
            let path = PathState {
                pixel: px,
                depth: 1,
                ray,
                weight: Rgb::WHITE,
                lineage,
                factor: 1.0,
                prev_position: ray.origin,
                prev_bsdf_pdf: 0.0,
                prev_specular: true,
                record,
            };
            if self.current.push(path).is_err() {
                unreachable!("camera queue holds every pixel");
            }
        }
        report.camera_rays = npx as u64;

        for depth in 1..=depth_max {
            let paths = self.current.as_slice();
            if paths.is_empty() {
                break;
            }
            report.rays_per_depth[depth as usize - 1] = paths.len() as u64;
            if depth > 1 {
                report.scatter_rays += paths.len() as u64;
            }

            // intersect and resolve emission
            let hits: Vec<(Intersection, Rgb)> = paths
                .par_iter()
                .map(|p| {
                    let hit = scene.intersect_unchecked(&p.ray);
                    let le = match &hit {
                        Intersection::Miss { emission } => *emission,
                        Intersection::Hit(it) if !it.emitted.is_black() => {
                            let mis = if p.prev_specular {
                                1.0
                            } else {
                                power_heuristic(p.prev_bsdf_pdf, scene.light_pdf(p.prev_position, it))
                            };
                            it.emitted * mis
                        }
                        Intersection::Hit(_) => Rgb::BLACK,
                    };
                    (hit, le)
                })
                .collect();
            let contributions: Vec<(u32, Rgb)> =
                paths.iter().zip(&hits).map(|(p, (_, le))| (p.pixel, p.weight * *le)).collect();
            acc.add_all(&contributions);
            if recording {
                for (p, (_, le)) in paths.iter().zip(&hits) {
                    records[p.record as usize].emitted = *le;
                }
            }

            let plain: Vec<Intersection> = hits.iter().map(|h| h.0).collect();
            let part = dispatch(&plain, |m| scene.material(m).scatters());
            report.surface_hits += part.surface.len() as u64;
            report.light_hits += part.light.len() as u64;
            report.misses += part.miss.len() as u64;
            if depth == 1 {
                for (p, h) in paths.iter().zip(&plain) {
                    if let Intersection::Hit(it) = h {
                        normals[p.pixel as usize] = it.normal;
                    }
                }
            }
            if depth == depth_max || part.surface.is_empty() {
                break;
            }

            // RRS stage
            let verts: Vec<(&PathState, &SurfaceInteraction)> = part
                .surface
                .iter()
                .map(|&i| {
                    let it = plain[i as usize].hit().expect("surface partition holds hits");
                    (&paths[i as usize], it)
                })
                .collect();
            let events: Vec<ShadingEvent> = verts
                .iter()
                .map(|(p, it)| ShadingEvent {
                    position: it.position,
                    normal: it.normal,
                    wo: it.wo,
                    roughness: scene.material(it.material).roughness(),
                    weight: p.weight,
                    pixel: p.pixel,
                    depth,
                })
                .collect();
            let q_orig = evaluate_factors(strategy, &events, ctx)?;
            let (q_norm, f_norm) = normalize(&q_orig, npx)?;
            let q_rate = if self.config.rate_control && f_norm < 1.0 {
                apply_rate_control(&q_norm, &self.rate)
            } else {
                q_norm.clone()
            };
            let mut counts = Vec::with_capacity(verts.len());
            for ((p, _), &q) in verts.iter().zip(&q_rate) {
                let u = RngStream::for_path(seed, p.lineage, depth, Purpose::Rrs).next_f64();
                counts.push(stochastic_round(q as f64, u)?);
            }
            let total: u64 = counts.iter().map(|&k| k as u64).sum();
            report.realized_children += total;
            report.f_norm.push(f_norm);
            let n = q_orig.len().max(1) as f64;
            report.mean_q_orig.push(q_orig.iter().map(|&q| q as f64).sum::<f64>() / n);
            report.mean_q_norm.push(q_norm.iter().map(|&q| q as f64).sum::<f64>() / n);
            if total > npx as u64 {
                report.overflow_events += 1;
                if self.config.rate_control {
                    self.rate.record_overflow();
                }
            }
            let mut room = self.next.capacity() as u64;
            let mut dropped = 0u64;
            for k in counts.iter_mut() {
                let keep = (*k as u64).min(room);
                dropped += *k as u64 - keep;
                room -= keep;
                *k = keep as u32;
            }
            if dropped > 0 {
                report.bias_drop_events += 1;
                report.dropped_children += dropped;
                log::warn!("frame {frame} depth {depth}: dropped {dropped} children beyond queue capacity");
            }

            // scatter stage
            let outs: Vec<VertexOut> = verts
                .par_iter()
                .zip(counts.par_iter())
                .zip(q_rate.par_iter())
                .map(|((&(p, it), &k), &q)| scatter_vertex(scene, seed, p, it, depth, q, k))
                .collect();

            let mut nee_contrib = Vec::with_capacity(outs.len());
            self.next.clear();
            for (vi, out) in outs.into_iter().enumerate() {
                let (p, it) = verts[vi];
                let q = q_rate[vi];
                report.shadow_rays += out.shadow_rays;
                report.nonfinite_children += out.nonfinite;
                report.rejected_children += out.rejected;
                if out.shadow_rays > 0 && q > 0.0 {
                    nee_contrib.push((p.pixel, p.weight * out.nee / q));
                }
                if recording {
                    let r = &mut records[p.record as usize];
                    r.q_rate = q;
                    r.count = counts[vi];
                    r.child_sum = [out.nee.r as f64, out.nee.g as f64, out.nee.b as f64];
                    r.sample = samples.len() as u32;
                    samples.push(TrainSample {
                        position: it.position,
                        normal: it.normal,
                        wo: it.wo,
                        roughness: events[vi].roughness,
                        throughput: p.weight,
                        pixel_estimate: ctx.pixel_estimate.get(p.pixel as usize).copied().unwrap_or(Rgb::BLACK),
                        radiance: Rgb::BLACK,
                        q_orig: q_orig[vi],
                        q_norm: q_norm[vi],
                        q_rate: q,
                        count: counts[vi],
                        pixel: p.pixel,
                        depth,
                    });
                }
                for (mut child, edge) in out.children {
                    if recording {
                        records.push(Record::new(p.record, edge));
                        child.record = records.len() as u32 - 1;
                    }
                    report.spawned_children += 1;
                    if self.next.push(child).is_err() {
                        unreachable!("counts were clipped to the queue capacity");
                    }
                }
            }
            acc.add_all(&nee_contrib);
            std::mem::swap(&mut self.current, &mut self.next);
        }

        let image = acc.image();
        let mut reconstructed = Vec::new();
        if recording {
            for i in (0..records.len()).rev() {
                let r = records[i];
                let value = r.emitted + r.scattered();
                if r.parent != NO_RECORD {
                    let x = r.edge * value;
                    let parent = &mut records[r.parent as usize];
                    parent.child_sum[0] += x.r as f64;
                    parent.child_sum[1] += x.g as f64;
                    parent.child_sum[2] += x.b as f64;
                }
                if r.sample != NO_RECORD && r.count > 0 {
                    let inv = 1.0 / r.count as f64;
                    samples[r.sample as usize].radiance = Rgb::new(
                        (r.child_sum[0] * inv) as f32,
                        (r.child_sum[1] * inv) as f32,
                        (r.child_sum[2] * inv) as f32,
                    );
                }
            }
            reconstructed = records[..npx].iter().map(|r| r.emitted + r.scattered()).collect();
        }
        Ok((
            FrameOutput {
                report,
                image,
                samples,
                reconstructed,
            },
            normals,
        ))
    }
}

fn scatter_vertex(
    scene: &Scene,
    seed: u64,
    path: &PathState,
    it: &SurfaceInteraction,
    depth: u32,
    q_rate: f32,
    count: u32,
) -> VertexOut {
    let mut out = VertexOut::default();
    for j in 0..count {
        let lineage = child_lineage(path.lineage, j);
        let mut light_rng = RngStream::for_path(seed, lineage, depth, Purpose::Light);
        let u_pick = light_rng.next_f32();
        if let Some(s) = scene.sample_nee(it, u_pick, light_rng.next_2d()) {
            out.shadow_rays += 1;
            if !scene.occluded(&s.shadow_ray) {
                out.nee += s.contribution * s.mis_weight();
            }
        }
        let mut bsdf_rng = RngStream::for_path(seed, lineage, depth, Purpose::Bsdf);
        let Some(bs) = scene.sample_bsdf(it, bsdf_rng.next_2d()) else {
            out.rejected += 1;
            continue;
        };
        let weight = path.weight * bs.throughput / q_rate;
        if !weight.is_valid_weight() {
            out.nonfinite += 1;
            continue;
        }
        let child = PathState {
            pixel: path.pixel,
            depth: depth + 1,
            ray: it.spawn(bs.wi),
            weight,
            lineage,
            factor: q_rate,
            prev_position: it.position,
            prev_bsdf_pdf: bs.pdf,
            prev_specular: bs.specular,
            record: NO_RECORD,
        };
        out.children.push((child, bs.throughput));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rrs::StrategyKind;
    use crate::scene::{builtin_scene, BuiltinScene};

    fn render(scene: &Scene, strategy: &Strategy, config: EngineConfig, frames: usize) -> (Film, FrameReport) {
        let npx = scene.camera.pixel_count();
        let mut engine = Engine::new(config, npx).unwrap();
        let mut film = Film::new(scene.camera.width, scene.camera.height);
        let mut total = FrameReport::default();
        for _ in 0..frames {
            let est = film.mean();
            let ctx = FactorContext::new(&est);
            let out = engine.trace_frame(scene, strategy, &ctx, &mut film).unwrap();
            total.merge(&out.report);
        }
        (film, total)
    }

    #[test]
    fn fixed_one_traces_npx_camera_rays_and_at_most_npx_per_depth() {
        let scene = builtin_scene(BuiltinScene::Cornell, 12, 12);
        let (_, r) = render(&scene, &Strategy::plain(), EngineConfig::default(), 1);
        assert_eq!(r.camera_rays, 144);
        assert!(r.rays_per_depth.iter().all(|&n| n <= 144));
        assert_eq!(r.overflow_events, 0);
        assert_eq!(r.bias_drop_events, 0);
        assert_eq!(
            r.spawned_children + r.nonfinite_children + r.rejected_children + r.dropped_children,
            r.realized_children
        );
    }

    #[test]
    fn factor_zero_at_depth_two_matches_depth_limit_two() {
        let scene = builtin_scene(BuiltinScene::Cornell, 10, 10);
        let cut: Strategy = "fixed:1,fixed:0".parse().unwrap();
        let a = render(&scene, &cut, EngineConfig::default(), 3).0;
        let b = render(
            &scene,
            &Strategy::plain(),
            EngineConfig {
                max_depth: 2,
                ..Default::default()
            },
            3,
        )
        .0;
        assert_eq!(a.mean(), b.mean());
    }

    #[test]
    fn records_rebuild_the_frame_estimate() {
        let scene = builtin_scene(BuiltinScene::Cornell, 8, 8);
        let mut engine = Engine::new(
            EngineConfig {
                record_training: true,
                ..Default::default()
            },
            64,
        )
        .unwrap();
        let mut film = Film::new(8, 8);
        let est = vec![Rgb::splat(0.5); 64];
        let ctx = FactorContext::new(&est);
        let strategy = Strategy::uniform(StrategyKind::Fixed(1.7));
        let out = engine.trace_frame(&scene, &strategy, &ctx, &mut film).unwrap();
        assert_eq!(out.reconstructed.len(), 64);
        for (a, b) in out.image.iter().zip(&out.reconstructed) {
            let tol = 1e-4 * a.max_component().max(1.0);
            assert!((*a - *b).max_component().abs() <= tol && (*b - *a).max_component().abs() <= tol, "{a:?} vs {b:?}");
        }
        assert!(!out.samples.is_empty());
        assert!(out.samples.iter().all(|s| s.depth < 6 && s.radiance.is_finite()));
    }

    #[test]
    fn deterministic_mode_is_independent_of_thread_count() {
        let scene = builtin_scene(BuiltinScene::Cornell, 10, 10);
        let s = Strategy::uniform(StrategyKind::Throughput);
        let one = render(&scene, &s, EngineConfig { threads: 1, ..Default::default() }, 2).0;
        let three = render(&scene, &s, EngineConfig { threads: 3, ..Default::default() }, 2).0;
        let bits = |f: &Film| f.mean().iter().flat_map(|c| c.to_array()).map(f32::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(&one), bits(&three));
    }

    #[test]
    fn heavy_splitting_is_normalized_and_never_drops() {
        let scene = builtin_scene(BuiltinScene::Furnace, 16, 16);
        let (_, r) = render(&scene, &Strategy::uniform(StrategyKind::Fixed(5.0)), EngineConfig::default(), 4);
        assert_eq!(r.bias_drop_events, 0);
        assert!(r.rays_per_depth.iter().all(|&n| n <= queue_capacity(256) as u64 * 4));
        assert!(r.f_norm.iter().all(|&f| f <= 1.0));
    }
}
