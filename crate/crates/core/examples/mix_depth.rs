//! Per-depth strategy search, first on a frozen score table, then with
//! real probe renders after training NRRS.

use std::collections::HashMap;

use nrrs::bench::{load_scene, reference_image, search, train, RunConfig, SearchMode};
use nrrs::mixdepth::{brute_force_search, heuristic_search, DepthAssignment, EfficiencyEstimate, ScoreMode};
use nrrs::rng::RngStream;
use nrrs::rrs::{Strategy, StrategyKind};

fn main() -> nrrs::Result<()> {
    let kinds = [StrategyKind::Nrrs, StrategyKind::AdrrsNn, StrategyKind::Fixed(1.0)];
    let mut table = HashMap::new();
    let mut rng = RngStream::new(3, 0);
    let mut frozen = |a: &DepthAssignment| {
        let s = *table.entry(a.to_string()).or_insert_with(|| rng.next_f64());
        Ok(EfficiencyEstimate::new(s, 0, 0.0, ScoreMode::RelMse))
    };
    let exact = brute_force_search(&kinds, 5, 729, &mut frozen)?;
    let fast = heuristic_search(&kinds, 5, 2, &mut frozen)?;
    println!("frozen scores, depth 5:");
    println!("  exhaustive {} ({:.4}) in {} probes", exact.best, exact.estimate.score, exact.probes);
    println!("  segmented  {} ({:.4}) in {} probes", fast.best, fast.estimate.score, fast.probes);

    let mut cfg = RunConfig {
        scene: "cornell".into(),
        width: 32,
        height: 24,
        max_depth: 4,
        train_frames: 24,
        reference_frames: 256,
        output_dir: "out/mix_depth".into(),
        ..Default::default()
    };
    cfg.search.mode = SearchMode::Auto;
    cfg.search.score = ScoreMode::RelMse;
    cfg.neural.batch_size = 1 << 12;
    let scene = load_scene(&cfg)?;
    let reference = reference_image(&cfg, &scene)?;
    let trained = train(&cfg, &scene, &Strategy::uniform(StrategyKind::Nrrs), None)?;
    let result = search(&cfg, &scene, &trained, StrategyKind::Nrrs, &reference)?;
    println!("rendered probes: best {} after {} probes", result.best, result.probes);
    result.write_log(&cfg.output_dir.join("search.csv"))?;
    Ok(())
}
