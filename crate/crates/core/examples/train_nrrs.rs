//! Train StatNet and an RRSNet online, save a checkpoint and reload it.
//!
//! cargo run --release --example train_nrrs -- aid

use nrrs::bench::{load_scene, RunConfig};
use nrrs::neural::{NeuralConfig, NeuralRrs, Variant};
use nrrs::rrs::{Strategy, StrategyKind};
use nrrs::wavefront::Engine;

fn main() -> nrrs::Result<()> {
    let variant: Variant = std::env::args().nth(1).as_deref().unwrap_or("nrrs").parse()?;
    let cfg = RunConfig {
        scene: "cornell".into(),
        width: 64,
        height: 64,
        ..Default::default()
    };
    let scene = load_scene(&cfg)?;
    let neural = NeuralConfig {
        variant,
        batch_size: 1 << 13,
        steps_per_frame: 2,
        ..Default::default()
    };
    let mut net = NeuralRrs::for_scene(neural, &scene)?;
    let kind = match variant {
        Variant::Nrrs => StrategyKind::Nrrs,
        Variant::Aid => StrategyKind::AidNrrs,
    };
    let mut engine = Engine::new(cfg.engine(), cfg.pixel_count())?;
    let summary = net.train_frames(&scene, &mut engine, &Strategy::uniform(kind), 40)?;
    println!(
        "{variant}: {} steps in {:.1}s, {} rays traced",
        summary.steps,
        summary.seconds,
        summary.report.total_rays()
    );
    if let Some(last) = summary.last {
        println!(
            "last losses: statnet {:.4} min {:.4} avg {:.4} rrs {:.4}",
            last.l_statnet, last.l_min, last.l_avg, last.l_rrs
        );
    }

    net.write_curve("train_curve.csv".as_ref())?;
    net.save("network.ckpt".as_ref())?;
    let back = NeuralRrs::load("network.ckpt".as_ref())?;
    assert_eq!(back.inference_weights(), net.inference_weights());
    println!("wrote train_curve.csv and network.ckpt");
    Ok(())
}
