//! Load a text scene description and render it.
//!
//! cargo run --release --example scene_file -- crates/core/scenes/hallway.scene

use std::path::PathBuf;

use nrrs::bench::write_ppm;
use nrrs::math::Rgb;
use nrrs::rrs::{FactorContext, Strategy};
use nrrs::scene::load_scene_file;
use nrrs::wavefront::{Engine, EngineConfig, Film};

fn main() -> nrrs::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenes/hallway.scene"));
    let (w, h) = (128, 96);
    let scene = load_scene_file(&path, w, h)?;
    println!(
        "{}: {} triangles, {} emitters",
        path.display(),
        scene.triangles.len(),
        scene.lights.len()
    );

    let mut engine = Engine::new(EngineConfig::default(), scene.camera.pixel_count())?;
    let mut film = Film::new(w, h);
    let blank = vec![Rgb::BLACK; scene.camera.pixel_count()];
    let ctx = FactorContext::new(&blank);
    for _ in 0..16 {
        engine.trace_frame(&scene, &Strategy::plain(), &ctx, &mut film)?;
    }
    write_ppm("scene_file.ppm".as_ref(), &film.mean(), w, h)?;
    println!("wrote scene_file.ppm");
    Ok(())
}
