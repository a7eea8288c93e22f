use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};
use crate::rng::RngStream;
use crate::rrs::{FactorContext, FactorSource, RadianceSource, ShadingEvent, Strategy};
use crate::sampling::{softplus_mod, softplus_mod_derivative, softplus_mod_inverse};
use crate::scene::Scene;
use crate::wavefront::{Engine, Film, FrameReport, TrainSample};

use super::adam::{Adam, AdamConfig, Ema};
use super::filter::update_error_signal;
use super::loss::{rrsnet_loss, statnet_loss, PixelErrors, RrsTerm};
use super::mlp::MlpConfig;
use super::network::{aid_extra, build_rows, nrrs_input, statnet_extra, Network, AID_EXTRA, NRRS_INPUTS, STATNET_EXTRA};
use super::{NeuralConfig, Phase, Variant};

/// Steps with finite gradients before a halved loss scale is doubled again.
const LOSS_SCALE_RECOVERY: u32 = 1000;

/// One row of the training curve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CurveRow {
    pub step: u64,
    #[serde(rename = "L_StatNet")]
    pub l_statnet: f32,
    #[serde(rename = "L_min")]
    pub l_min: f32,
    #[serde(rename = "L_avg")]
    pub l_avg: f32,
    #[serde(rename = "L_rrs")]
    pub l_rrs: f32,
}

#[derive(Debug, Clone, Default)]
pub struct TrainSummary {
    pub frames: u32,
    pub steps: u64,
    pub report: FrameReport,
    pub seconds: f64,
    pub last: Option<CurveRow>,
    /// Mean image of the training frames.
    pub pixel_estimate: Vec<Rgb>,
}

/// StatNet and one RRSNet variant with their optimizers and moving
/// averages. Inference always reads the moving averages.
#[derive(Debug, Clone)]
pub struct NeuralRrs {
    pub(super) config: NeuralConfig,
    pub(super) statnet: Network,
    pub(super) rrsnet: Network,
    pub(super) stat_params: Vec<f32>,
    pub(super) stat_ema: Ema,
    stat_adam: Adam,
    pub(super) rrs_params: Vec<f32>,
    pub(super) rrs_ema: Ema,
    rrs_adam: Adam,
    rng: RngStream,
    loss_scale: f32,
    good_steps: u32,
    pub(super) skipped_steps: u64,
    pub(super) step: u64,
    curve: Vec<CurveRow>,
    errors: Vec<f32>,
    intensity: Vec<f32>,
    skipped_samples: u64,
}

pub(super) fn build_networks(config: &NeuralConfig, bounds: (Vec3, Vec3)) -> (Network, Network) {
    let mlp = |output| MlpConfig {
        input: 0,
        hidden: config.hidden,
        hidden_layers: config.hidden_layers,
        output,
        leaky_slope: config.leaky_slope,
    };
    let statnet = Network::new(Some(config.grid), STATNET_EXTRA, mlp(6), bounds);
    let rrsnet = match config.variant {
        Variant::Nrrs => Network::new(None, NRRS_INPUTS, mlp(1), bounds),
        Variant::Aid => Network::new(Some(config.grid), AID_EXTRA, mlp(1), bounds),
    };
    (statnet, rrsnet)
}

fn rgb(row: ndarray::ArrayView1<f32>, at: usize) -> [f32; 3] {
    [row[at], row[at + 1], row[at + 2]]
}

impl NeuralRrs {
    /// Networks over positions inside `bounds`. RRSNet starts out predicting
    /// a factor of one.
    pub fn new(config: NeuralConfig, bounds: (Vec3, Vec3)) -> Result<Self> {
        config.validate()?;
        if !(bounds.0.is_finite() && bounds.1.is_finite()) {
            return Err(Error::InvalidArgument("network bounds must be finite".into()));
        }
        let (statnet, rrsnet) = build_networks(&config, bounds);
        let mut rng = RngStream::new(config.seed, 0x4e52_5253);
        let stat_params = statnet.init_params(&mut rng);
        let mut rrs_params = rrsnet.init_params(&mut rng);
        rrsnet.init_output(&mut rrs_params, 0.1, softplus_mod_inverse(1.0));
        let adam = |lr| AdamConfig {
            learning_rate: lr,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.adam_epsilon,
        };
        Ok(Self {
            stat_adam: Adam::new(adam(config.statnet_lr), stat_params.len()),
            rrs_adam: Adam::new(adam(config.rrsnet_lr), rrs_params.len()),
            stat_ema: Ema::new(config.ema_decay, &stat_params),
            rrs_ema: Ema::new(config.ema_decay, &rrs_params),
            rng,
            statnet,
            rrsnet,
            stat_params,
            rrs_params,
            config,
            loss_scale: 1.0,
            good_steps: 0,
            skipped_steps: 0,
            step: 0,
            curve: Vec::new(),
            errors: Vec::new(),
            intensity: Vec::new(),
            skipped_samples: 0,
        })
    }

    /// Networks covering the scene's bounding box.
    pub fn for_scene(config: NeuralConfig, scene: &Scene) -> Result<Self> {
        let b = scene.bounds();
        let pad = (b.max - b.min) * 1e-3 + Vec3::splat(1e-4);
        Self::new(config, (b.min - pad, b.max + pad))
    }

    pub fn config(&self) -> &NeuralConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn skipped_steps(&self) -> u64 {
        self.skipped_steps
    }

    /// Samples dropped from the pixel losses for lack of an error estimate.
    pub fn skipped_samples(&self) -> u64 {
        self.skipped_samples
    }

    pub fn loss_scale(&self) -> f32 {
        self.loss_scale
    }

    pub fn curve(&self) -> &[CurveRow] {
        &self.curve
    }

    pub fn statnet(&self) -> &Network {
        &self.statnet
    }

    pub fn rrsnet(&self) -> &Network {
        &self.rrsnet
    }

    /// Moving-average weights of StatNet and RRSNet.
    pub fn inference_weights(&self) -> (&[f32], &[f32]) {
        (self.stat_ema.weights(), self.rrs_ema.weights())
    }

    /// Raw training weights of StatNet and RRSNet.
    pub fn training_weights(&self) -> (&[f32], &[f32]) {
        (&self.stat_params, &self.rrs_params)
    }

    pub fn set_learning_rates(&mut self, statnet: f32, rrsnet: f32) {
        self.stat_adam.config.learning_rate = statnet;
        self.rrs_adam.config.learning_rate = rrsnet;
    }

    pub fn set_loss_weights(&mut self, w: super::LossWeights) {
        self.config.loss_weights = w;
    }

    /// Offer StatNet and this variant's RRSNet to factor evaluation.
    pub fn bind<'a>(&'a self, ctx: &mut FactorContext<'a>) {
        ctx.statnet = Some(self);
        match self.config.variant {
            Variant::Nrrs => ctx.nrrs = Some(self),
            Variant::Aid => ctx.aid = Some(self),
        }
    }

    pub fn phase_at(&self, progress: f32) -> Phase {
        if progress < self.config.warmup_fraction {
            Phase::Warmup
        } else {
            Phase::Full
        }
    }

    fn statnet_eval(&self, params: &[f32], events: &[ShadingEvent]) -> Array2<f32> {
        let pos: Vec<Vec3> = events.iter().map(|e| e.position).collect();
        let extra = build_rows(events, STATNET_EXTRA, statnet_extra);
        self.statnet.forward_batched(params, &pos, &extra, false).0
    }

    /// StatNet mean and second moment per event.
    pub fn predict_statistics(&self, events: &[ShadingEvent]) -> Vec<([f32; 3], [f32; 3])> {
        let out = self.statnet_eval(self.stat_ema.weights(), events);
        out.rows().into_iter().map(|r| (rgb(r, 0), rgb(r, 3))).collect()
    }

    fn rrs_inputs(&self, events: &[ShadingEvent], pixels: &[Rgb]) -> (Vec<Vec3>, Array2<f32>) {
        let idx: Vec<usize> = (0..events.len()).collect();
        match self.config.variant {
            Variant::Nrrs => {
                let stats = self.statnet_eval(self.stat_ema.weights(), events);
                let x = build_rows(&idx, NRRS_INPUTS, |&i, row| {
                    let s = stats.row(i);
                    nrrs_input(&events[i], pixels[i], rgb(s, 0), rgb(s, 3), row)
                });
                (Vec::new(), x)
            }
            Variant::Aid => {
                let pos = events.iter().map(|e| e.position).collect();
                let x = build_rows(&idx, AID_EXTRA, |&i, row| aid_extra(&events[i], pixels[i], row));
                (pos, x)
            }
        }
    }

    /// RRSNet factors from the moving-average weights; `pixels` holds one
    /// pixel estimate per event.
    pub fn predict_factors(&self, events: &[ShadingEvent], pixels: &[Rgb]) -> Vec<f32> {
        let (pos, x) = self.rrs_inputs(events, pixels);
        let (o, _) = self.rrsnet.forward_batched(self.rrs_ema.weights(), &pos, &x, false);
        o.column(0).iter().map(|&v| softplus_mod(v)).collect()
    }

    /// Refresh the per-pixel error signal after `film` received a frame.
    /// `mean_prev` is the film mean before that frame.
    pub fn observe_frame(&mut self, film: &mut Film, mean_prev: &[Rgb], progress: f32) {
        let filter = self.config.filter;
        let on = progress < 1.0 - self.config.filter_off_fraction;
        self.errors = update_error_signal(film, mean_prev, on.then_some(&filter), self.config.epsilon);
        self.intensity = film.mean().iter().map(|c| c.luminance()).collect();
    }

    /// Install an error signal directly (frozen-data training).
    pub fn set_pixel_errors(&mut self, errors: Vec<f32>, intensity: Vec<f32>) {
        self.errors = errors;
        self.intensity = intensity;
    }

    fn choose(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        if k >= n {
            return idx;
        }
        for i in 0..k {
            let j = i + self.rng.next_below((n - i) as u64) as usize;
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }

    /// Run the configured number of steps on random batches of `samples`.
    pub fn train_frame(&mut self, samples: &[TrainSample], progress: f32) -> Option<CurveRow> {
        if samples.is_empty() {
            return None;
        }
        let phase = self.phase_at(progress);
        let mut last = None;
        for _ in 0..self.config.steps_per_frame {
            let idx = self.choose(samples.len(), self.config.batch_size);
            let batch: Vec<TrainSample> = idx.iter().map(|&i| samples[i]).collect();
            last = Some(self.train_step(&batch, phase));
        }
        last
    }

    /// Rescale, check and apply a gradient. Returns false if it was skipped.
    fn apply(&mut self, mut grad: Vec<f32>, statnet: bool) -> bool {
        let inv = 1.0 / self.loss_scale;
        let mut finite = true;
        for g in grad.iter_mut() {
            *g *= inv;
            finite &= g.is_finite();
        }
        if !finite {
            self.skipped_steps += 1;
            self.loss_scale *= 0.5;
            self.good_steps = 0;
            log::warn!("non-finite gradient at step {}, step skipped", self.step);
            return false;
        }
        if statnet {
            self.stat_adam.step(&mut self.stat_params, &grad);
            self.stat_ema.update(&self.stat_params);
        } else {
            self.rrs_adam.step(&mut self.rrs_params, &grad);
            self.rrs_ema.update(&self.rrs_params);
        }
        true
    }

    fn after_step(&mut self) {
        self.good_steps += 1;
        if self.good_steps >= LOSS_SCALE_RECOVERY && self.loss_scale < 1.0 {
            self.loss_scale = (self.loss_scale * 2.0).min(1.0);
            self.good_steps = 0;
        }
    }

    /// One optimizer step for each network. StatNet only ever receives its
    /// own loss.
    pub fn train_step(&mut self, batch: &[TrainSample], phase: Phase) -> CurveRow {
        let eps = self.config.epsilon;
        let scale = self.loss_scale;
        let mut row = CurveRow {
            step: self.step + 1,
            ..Default::default()
        };
        let mut ok = true;

        let stat: Vec<&TrainSample> = batch.iter().filter(|s| s.has_radiance() && s.radiance.is_finite()).collect();
        if !stat.is_empty() {
            let events: Vec<ShadingEvent> = stat.iter().map(|s| s.event()).collect();
            let pos: Vec<Vec3> = events.iter().map(|e| e.position).collect();
            let extra = build_rows(&events, STATNET_EXTRA, statnet_extra);
            let (out, caches) = self.statnet.forward_batched(&self.stat_params, &pos, &extra, true);
            let n = stat.len() as f32;
            let mut d = Array2::zeros((stat.len(), 6));
            let mut total = 0.0f64;
            for (r, s) in stat.iter().enumerate() {
                let o = out.row(r);
                let l = statnet_loss(rgb(o, 0), rgb(o, 3), s.radiance.to_array(), eps, self.config.statnet_loss);
                total += l.value as f64;
                for c in 0..3 {
                    d[[r, c]] = l.d_mean[c] * scale / n;
                    d[[r, 3 + c]] = l.d_second[c] * scale / n;
                }
            }
            row.l_statnet = (total / n as f64) as f32;
            let g = self.statnet.backward_batched(&self.stat_params, &caches, &d);
            ok &= self.apply(g, true);
        }

        let rrs: Vec<&TrainSample> = batch
            .iter()
            .filter(|s| s.depth >= 2 && s.q_norm.is_finite() && s.throughput.is_finite())
            .collect();
        if !rrs.is_empty() {
            let events: Vec<ShadingEvent> = rrs.iter().map(|s| s.event()).collect();
            let pixels: Vec<Rgb> = rrs.iter().map(|s| s.pixel_estimate).collect();
            let (pos, x) = self.rrs_inputs(&events, &pixels);
            let (out, caches) = self.rrsnet.forward_batched(&self.rrs_params, &pos, &x, true);
            let raw: Vec<f32> = out.column(0).to_vec();
            let q: Vec<f32> = raw.iter().map(|&v| softplus_mod(v)).collect();
            let n = rrs.len() as f32;
            let d_q: Vec<f32> = match phase {
                Phase::Warmup => {
                    let mut total = 0.0f64;
                    let d = q
                        .iter()
                        .map(|&q| {
                            total += ((q - 1.0) * (q - 1.0) / (1.0 + eps)) as f64;
                            2.0 * (q - 1.0) / (1.0 + eps) / n
                        })
                        .collect();
                    row.l_rrs = (total / n as f64) as f32;
                    d
                }
                Phase::Full => {
                    let stats = self.statnet_eval(self.stat_ema.weights(), &events);
                    let terms: Vec<RrsTerm> = rrs
                        .iter()
                        .enumerate()
                        .map(|(i, s)| {
                            let m = Rgb::from_array(rgb(stats.row(i), 0));
                            let m2 = Rgb::from_array(rgb(stats.row(i), 3)).map(|v| v.max(0.0));
                            let var = Rgb::new(m2.r - m.r * m.r, m2.g - m.g * m.g, m2.b - m.b * m.b).map(|v| v.max(0.0));
                            RrsTerm {
                                q: q[i],
                                q_norm: s.q_norm,
                                weight: s.throughput,
                                second_moment: m2.luminance(),
                                variance: var.luminance(),
                                pixel: s.pixel,
                            }
                        })
                        .collect();
                    let errors = PixelErrors {
                        error: &self.errors,
                        intensity: &self.intensity,
                    };
                    let l = rrsnet_loss(&terms, &errors, self.config.loss_weights, eps, self.config.q_floor);
                    row.l_min = l.l_min;
                    row.l_avg = l.l_avg;
                    row.l_rrs = l.l_rrs;
                    self.skipped_samples += l.skipped;
                    l.d_q
                }
            };
            let d = Array2::from_shape_fn((rrs.len(), 1), |(r, _)| d_q[r] * softplus_mod_derivative(raw[r]) * scale);
            let g = self.rrsnet.backward_batched(&self.rrs_params, &caches, &d);
            ok &= self.apply(g, false);
        }

        self.step += 1;
        if ok {
            self.after_step();
        }
        self.curve.push(row);
        row
    }

    /// Render `frames` training frames with `strategy`, training after each.
    /// The training film is discarded.
    pub fn train_frames(&mut self, scene: &Scene, engine: &mut Engine, strategy: &Strategy, frames: u32) -> Result<TrainSummary> {
        let start = Instant::now();
        let was_recording = engine.config().record_training;
        engine.set_record_training(true);
        let mut film = Film::new(scene.camera.width, scene.camera.height);
        let mut summary = TrainSummary {
            frames,
            ..Default::default()
        };
        for f in 0..frames {
            let progress = f as f32 / frames as f32;
            let prev = film.mean();
            let out = {
                let mut ctx = FactorContext::new(&prev);
                self.bind(&mut ctx);
                engine.trace_frame(scene, strategy, &ctx, &mut film)
            };
            let out = match out {
                Ok(o) => o,
                Err(e) => {
                    engine.set_record_training(was_recording);
                    return Err(e);
                }
            };
            summary.report.merge(&out.report);
            self.observe_frame(&mut film, &prev, progress);
            if let Some(row) = self.train_frame(&out.samples, progress) {
                summary.last = Some(row);
            }
            log::debug!("training frame {f}: {} samples", out.samples.len());
        }
        engine.set_record_training(was_recording);
        summary.steps = self.step;
        summary.seconds = start.elapsed().as_secs_f64();
        summary.pixel_estimate = film.mean();
        Ok(summary)
    }

    /// Write the training curve as CSV.
    pub fn write_curve(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.curve {
            w.serialize(r)?;
        }
        if self.curve.is_empty() {
            w.write_record(["step", "L_StatNet", "L_min", "L_avg", "L_rrs"])?;
        }
        w.flush().map_err(io)
    }
}

impl RadianceSource for NeuralRrs {
    fn mean_radiance(&self, events: &[ShadingEvent]) -> Vec<Rgb> {
        self.predict_statistics(events).into_iter().map(|(m, _)| Rgb::from_array(m)).collect()
    }
}

impl FactorSource for NeuralRrs {
    fn factors(&self, events: &[ShadingEvent], pixel_estimate: &[Rgb]) -> Vec<f32> {
        let pixels: Vec<Rgb> = events
            .iter()
            .map(|e| pixel_estimate.get(e.pixel as usize).copied().unwrap_or(Rgb::BLACK))
            .collect();
        self.predict_factors(events, &pixels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{HashGridConfig, LossWeights};

    fn small(variant: Variant) -> NeuralConfig {
        NeuralConfig {
            variant,
            grid: HashGridConfig {
                levels: 4,
                log2_table_size: 12,
                ..Default::default()
            },
            batch_size: 512,
            ..Default::default()
        }
    }

    fn sample(rng: &mut RngStream, radiance: Rgb) -> TrainSample {
        TrainSample {
            position: Vec3::new(rng.next_f32(), rng.next_f32(), rng.next_f32()),
            normal: Vec3::new(0.0, 0.0, 1.0),
            wo: Vec3::new(0.0, 0.0, 1.0),
            roughness: 1.0,
            throughput: Rgb::splat(0.5 + rng.next_f32()),
            pixel_estimate: Rgb::splat(1.0),
            radiance,
            q_orig: 1.0,
            q_norm: 1.0,
            q_rate: 1.0,
            count: 1,
            pixel: rng.next_below(16) as u32,
            depth: 2 + rng.next_below(3) as u32,
        }
    }

    fn unit() -> (Vec3, Vec3) {
        (Vec3::ZERO, Vec3::splat(1.0))
    }

    #[test]
    fn fresh_networks_are_near_zero_and_one() {
        for v in [Variant::Nrrs, Variant::Aid] {
            let n = NeuralRrs::new(small(v), unit()).unwrap();
            let mut rng = RngStream::new(1, 1);
            let events: Vec<ShadingEvent> = (0..64).map(|_| sample(&mut rng, Rgb::BLACK).event()).collect();
            for (m, s) in n.predict_statistics(&events) {
                assert!(m.iter().chain(&s).all(|v| v.abs() < 0.5));
            }
            let q = n.predict_factors(&events, &vec![Rgb::splat(1.0); 64]);
            assert!(q.iter().all(|&q| (q - 1.0).abs() < 0.3), "{v}: {q:?}");
            assert_eq!(q, n.predict_factors(&events, &vec![Rgb::splat(1.0); 64]));
        }
    }

    #[test]
    fn statnet_fits_a_constant() {
        let mut n = NeuralRrs::new(small(Variant::Aid), unit()).unwrap();
        let mut rng = RngStream::new(2, 2);
        // fresh targets uniform on [1, 3] every frame: mean 2, second
        // moment 13/3
        let mut data = Vec::new();
        for _ in 0..1500 {
            data = (0..1024)
                .map(|_| {
                    let l = 1.0 + 2.0 * rng.next_f32();
                    sample(&mut rng, Rgb::splat(l))
                })
                .collect::<Vec<_>>();
            n.train_frame(&data, 0.0);
        }
        let events: Vec<ShadingEvent> = data[..100].iter().map(|s| s.event()).collect();
        for (m, s) in n.predict_statistics(&events) {
            for c in 0..3 {
                assert!((m[c] - 2.0).abs() < 0.2, "mean {m:?}");
                assert!((s[c] - 13.0 / 3.0).abs() < 0.5, "second {s:?}");
            }
        }
        assert_eq!(n.skipped_steps(), 0);
    }

    #[test]
    fn full_phase_regresses_toward_normalized_factors() {
        let mut n = NeuralRrs::new(small(Variant::Aid), unit()).unwrap();
        n.set_learning_rates(0.005, 0.005);
        n.set_loss_weights(LossWeights {
            avg: 0.0,
            min: 0.0,
            rrs: 1.0,
        });
        let mut rng = RngStream::new(3, 3);
        let data: Vec<TrainSample> = (0..2048)
            .map(|_| {
                let mut s = sample(&mut rng, Rgb::splat(1.0));
                s.q_norm = 0.5 + 2.0 * s.position.x;
                s
            })
            .collect();
        let gap = |n: &NeuralRrs| {
            let ev: Vec<ShadingEvent> = data.iter().map(|s| s.event()).collect();
            let q = n.predict_factors(&ev, &vec![Rgb::splat(1.0); ev.len()]);
            q.iter().zip(&data).map(|(q, s)| (q - s.q_norm).abs()).sum::<f32>() / q.len() as f32
        };
        let before = gap(&n);
        for _ in 0..600 {
            n.train_frame(&data, 1.0);
        }
        let after = gap(&n);
        assert!(after < 0.5 * before && after < 0.15, "{before} -> {after}");
    }

    #[test]
    fn non_finite_gradients_skip_the_step() {
        let mut n = NeuralRrs::new(small(Variant::Nrrs), unit()).unwrap();
        let mut rng = RngStream::new(4, 4);
        let mut s = sample(&mut rng, Rgb::splat(1.0));
        s.radiance = Rgb::splat(f32::MAX);
        let (before, _) = n.training_weights();
        let before = before.to_vec();
        n.train_step(&[s], Phase::Warmup);
        assert_eq!(n.skipped_steps(), 1);
        assert_eq!(n.loss_scale(), 0.5);
        assert_eq!(n.training_weights().0, &before[..]);
    }
}
