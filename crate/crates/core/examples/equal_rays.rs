//! NRRS against plain path tracing at a matched ray count.
//!
//! cargo run --release --example equal_rays -- 64

use nrrs::bench::{load_scene, reference_image, run_method, Method, RunConfig};

fn main() -> nrrs::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let train_frames = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let mut cfg = RunConfig {
        scene: "glossy-caustic".into(),
        width: 160,
        height: 90,
        train_frames,
        render_frames: 16,
        reference_frames: 1024,
        output_dir: "out/equal_rays".into(),
        ..Default::default()
    };
    cfg.neural.batch_size = 1 << 14;
    cfg.neural.steps_per_frame = 4;
    let scene = load_scene(&cfg)?;
    let reference = reference_image(&cfg, &scene)?;

    let nrrs = run_method(&cfg, &scene, "nrrs", &"nrrs".parse()?, Some(&reference), None)?.report;
    // plain path tracing stops at the first frame past the NRRS ray count
    let pt_cfg = RunConfig {
        ray_budget: Some(nrrs.rays),
        ..cfg.clone()
    };
    let method: Method = "pt".parse()?;
    let pt = run_method(&pt_cfg, &scene, "pt", &method, Some(&reference), None)?.report;
    for r in [&nrrs, &pt] {
        println!(
            "{:<5} {:>3} frames {:>9} rays  RelMSE {:.4}",
            r.method,
            r.frames,
            r.rays,
            r.relmse.unwrap_or(f64::NAN)
        );
    }
    let ratio = nrrs.ray_eff_inv.unwrap_or(f64::NAN) / pt.ray_eff_inv.unwrap_or(f64::NAN);
    println!("rays*RelMSE ratio NRRS / PT: {ratio:.3}");
    Ok(())
}
