//! Run a comparison described by a TOML file.
//!
//! cargo run --release --example compare -- crates/core/configs/compare.toml

use std::path::PathBuf;

use nrrs::bench::{run_comparison, RunConfig};

fn main() -> nrrs::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/compare.toml"));
    let text = std::fs::read_to_string(&path).map_err(|e| nrrs::Error::io(&path, e))?;
    let cfg = RunConfig::from_toml(&text)?;
    for r in run_comparison(&cfg)? {
        println!(
            "{:<12} rays {:>10}  RelMSE {:.5}  rays*RelMSE {:.1}",
            r.method,
            r.rays,
            r.relmse.unwrap_or(f64::NAN),
            r.ray_eff_inv.unwrap_or(f64::NAN)
        );
    }
    println!("images and CSVs in {}", cfg.output_dir.display());
    Ok(())
}
