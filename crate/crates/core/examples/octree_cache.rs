//! Fill the octree radiance cache while rendering with tree-based ADRRS and
//! dump its means at the primary hits.

use nrrs::bench::{load_scene, train, write_ppm, RunConfig};
use nrrs::rrs::{Strategy, StrategyKind};

fn main() -> nrrs::Result<()> {
    let cfg = RunConfig {
        scene: "cornell".into(),
        width: 96,
        height: 96,
        train_frames: 24,
        ..Default::default()
    };
    let scene = load_scene(&cfg)?;
    let trained = train(&cfg, &scene, &Strategy::uniform(StrategyKind::AdrrsTree), None)?;
    let tree = trained.tree.expect("adrrs-tree trains the octree");
    println!(
        "{} nodes after {} frames ({} samples rejected)",
        tree.node_count(),
        trained.frames,
        tree.rejected()
    );
    write_ppm("octree_cache.ppm".as_ref(), &tree.debug_image(&scene), cfg.width, cfg.height)?;
    println!("wrote octree_cache.ppm");
    Ok(())
}
