//! Every strategy converges to the analytic furnace value.

use nrrs::bench::{load_scene, train, RunConfig};
use nrrs::rrs::{FactorContext, Strategy};
use nrrs::scene::BuiltinScene;
use nrrs::wavefront::{Engine, Film};

fn main() -> nrrs::Result<()> {
    let frames: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let cfg = RunConfig {
        scene: "furnace".into(),
        width: 8,
        height: 8,
        train_frames: 32,
        ..Default::default()
    };
    let scene = load_scene(&cfg)?;
    let truth = BuiltinScene::furnace_value(cfg.max_depth);
    println!("analytic value {truth:.5}");
    for name in ["pt", "fixed:0.6", "throughput", "adrrs-tree", "adrrs-nn", "nrrs", "aid-nrrs"] {
        let strategy: Strategy = name.parse()?;
        let trained = train(&cfg, &scene, &strategy, None)?;
        let mut engine = Engine::new(cfg.engine(), cfg.pixel_count())?;
        let mut film = Film::new(cfg.width, cfg.height);
        let (mut sum, mut sq) = (0.0f64, 0.0f64);
        for f in 0..frames {
            let prev = if f == 0 { trained.pixel_estimate.clone() } else { film.mean() };
            let mut ctx = FactorContext::new(&prev);
            if let Some(n) = &trained.network {
                n.bind(&mut ctx);
            }
            if let Some(t) = &trained.tree {
                ctx.tree = Some(t);
            }
            let out = engine.trace_frame(&scene, &strategy, &ctx, &mut film)?;
            let m = out.image.iter().map(|p| p.luminance() as f64).sum::<f64>() / out.image.len() as f64;
            sum += m;
            sq += m * m;
        }
        let n = frames as f64;
        let mean = sum / n;
        let se = ((sq / n - mean * mean) / (n - 1.0)).sqrt();
        println!("{name:<12} {mean:.5} +- {se:.5}  ({:+.2} se)", (mean - truth) / se);
    }
    Ok(())
}
