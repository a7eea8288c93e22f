use std::path::PathBuf;

use nrrs::bench::{self, load_scene, reference_image, relmse, run_method, RunConfig};
use nrrs::math::Rgb;
use nrrs::mixdepth::ScoreMode;
use nrrs::neural::NeuralRrs;
use nrrs::rrs::{FactorContext, Strategy, StrategyKind};
use nrrs::wavefront::{Engine, Film};

fn small(scene: &str, dir: PathBuf) -> RunConfig {
    let mut c = RunConfig {
        scene: scene.into(),
        width: 16,
        height: 16,
        max_depth: 4,
        train_frames: 4,
        render_frames: 4,
        reference_frames: 16,
        output_dir: dir,
        ..Default::default()
    };
    c.neural.batch_size = 2048;
    c.search.score = ScoreMode::RelMse;
    c
}

fn scene_path(name: &str) -> String {
    format!("{}/scenes/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn scene_file_renders_with_every_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&scene_path("hallway.scene"), dir.path().into());
    let scene = load_scene(&cfg).unwrap();
    for name in ["pt", "throughput", "adrrs-tree", "adrrs-nn", "nrrs", "aid-nrrs"] {
        let out = run_method(&cfg, &scene, name, &name.parse().unwrap(), None, None).unwrap();
        let img = out.rendered.image();
        assert_eq!(img.len(), 256);
        assert!(img.iter().all(|p| p.r.is_finite() && p.g >= 0.0), "{name}");
        assert!(img.iter().any(|p| p.luminance() > 0.0), "{name} rendered black");
        assert_eq!(out.report.bias_drop_events, 0, "{name}");
    }
}

#[test]
fn checkpoint_round_trip_keeps_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("cornell", dir.path().into());
    let scene = load_scene(&cfg).unwrap();
    let trained = bench::train(&cfg, &scene, &"nrrs".parse().unwrap(), None).unwrap();
    let net = trained.network.unwrap();
    let path = dir.path().join("n.ckpt");
    net.save(&path).unwrap();
    let back = NeuralRrs::load(&path).unwrap();
    assert_eq!(back.inference_weights(), net.inference_weights());
    assert_eq!(back.variant(), net.variant());

    // identical weights give identical renders
    let render = |n: &NeuralRrs| {
        let mut engine = Engine::new(cfg.engine(), cfg.pixel_count()).unwrap();
        let mut film = Film::new(cfg.width, cfg.height);
        let strategy: Strategy = "nrrs".parse().unwrap();
        for _ in 0..2 {
            let prev = film.mean();
            let mut ctx = FactorContext::new(&prev);
            n.bind(&mut ctx);
            engine.trace_frame(&scene, &strategy, &ctx, &mut film).unwrap();
        }
        film.mean()
    };
    assert_eq!(render(&net), render(&back));
}

#[test]
fn mix_depth_method_renders_searched_assignment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("cornell", dir.path().into());
    let scene = load_scene(&cfg).unwrap();
    let reference = reference_image(&cfg, &scene).unwrap();
    let out = run_method(&cfg, &scene, "nrrs+mix", &"nrrs+mix".parse().unwrap(), Some(&reference), None).unwrap();
    let search = out.search.as_ref().expect("searched");
    assert_eq!(search.probes, 81);
    assert_eq!(search.best.kinds.len(), 4);
    let allowed = [StrategyKind::Nrrs, StrategyKind::AdrrsNn, StrategyKind::Fixed(1.0)];
    assert!(search.best.kinds.iter().all(|k| allowed.contains(k)));
    assert_eq!(out.strategy.to_string(), search.best.to_string());
    assert!(out.report.relmse.unwrap().is_finite());
}

#[test]
fn longer_renders_approach_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("furnace", dir.path().into());
    cfg.width = 8;
    cfg.height = 8;
    let scene = load_scene(&cfg).unwrap();
    let reference = reference_image(&cfg, &scene).unwrap();
    let err = |frames: u32| {
        let c = RunConfig {
            render_frames: frames,
            ..cfg.clone()
        };
        let out = run_method(&c, &scene, "pt", &"pt".parse().unwrap(), Some(&reference), None).unwrap();
        relmse(&out.rendered.image(), &reference).unwrap()
    };
    let (short, long) = (err(4), err(256));
    assert!(long < short * 0.25, "{short} -> {long}");
}

#[test]
fn reference_file_is_used_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("cornell", dir.path().into());
    let path = dir.path().join("given.pfm");
    let pixels: Vec<Rgb> = (0..256).map(|i| Rgb::splat(i as f32 / 256.0)).collect();
    bench::write_pfm(&path, &pixels, 16, 16).unwrap();
    cfg.reference = Some(path);
    let scene = load_scene(&cfg).unwrap();
    assert_eq!(reference_image(&cfg, &scene).unwrap(), pixels);
}
