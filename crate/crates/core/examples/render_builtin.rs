//! Plain path tracing of a builtin scene.
//!
//! cargo run --release --example render_builtin -- cornell 64

use std::path::Path;

use nrrs::bench::{write_pfm, write_ppm};
use nrrs::math::Rgb;
use nrrs::rrs::{FactorContext, Strategy};
use nrrs::scene::{builtin_scene, BuiltinScene};
use nrrs::wavefront::{Engine, EngineConfig, Film};

fn main() -> nrrs::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: BuiltinScene = args.next().as_deref().unwrap_or("cornell").parse()?;
    let frames: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(32);
    let (w, h) = (160, 120);

    let scene = builtin_scene(kind, w, h);
    let mut engine = Engine::new(EngineConfig::default(), scene.camera.pixel_count())?;
    let mut film = Film::new(w, h);
    let blank = vec![Rgb::BLACK; scene.camera.pixel_count()];
    let ctx = FactorContext::new(&blank);
    let strategy = Strategy::plain();

    let mut rays = 0;
    for _ in 0..frames {
        rays += engine.trace_frame(&scene, &strategy, &ctx, &mut film)?.report.total_rays();
    }
    let image = film.mean();
    let name = kind.name();
    write_pfm(Path::new(&format!("{name}.pfm")), &image, w, h)?;
    write_ppm(Path::new(&format!("{name}.ppm")), &image, w, h)?;
    println!("{name}: {frames} frames, {rays} rays -> {name}.pfm, {name}.ppm");
    Ok(())
}
