use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nrrs::bench::{self, Method, MetricsReport, RunConfig, SearchMode};
use nrrs::mixdepth::ScoreMode;
use nrrs::neural::{NeuralRrs, Variant};
use nrrs::rrs::{FactorContext, Strategy};
use nrrs::scene::BuiltinScene;
use nrrs::wavefront::{Engine, Film};

/// Wavefront path tracer with normalized Russian roulette and splitting.
#[derive(Parser)]
#[command(name = "nrrs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (if needed) and render the first method.
    Render {
        #[command(flatten)]
        run: RunArgs,
        /// Start from a saved network instead of a fresh one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the networks for the first method and save a checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "network.ckpt")]
        out: PathBuf,
    },
    /// Train, then search a per-depth strategy assignment.
    Search {
        #[command(flatten)]
        run: RunArgs,
        /// Base RRSNet variant of the search set.
        #[arg(long, default_value = "nrrs")]
        base: Variant,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every method with the same seed and budget against one reference.
    Compare {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Render and cache the reference image.
    Reference {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Short unbiasedness check on the furnace scene.
    Selftest {
        #[arg(long, default_value_t = 2000)]
        frames: u32,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin scene (cornell, furnace, glossy-caustic) or scene file.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    max_depth: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Method: strategy, comma-separated per-depth strategies, or
    /// `<nrrs|aid-nrrs>+mix`. Repeatable.
    #[arg(long = "method")]
    methods: Vec<String>,
    #[arg(long)]
    train_frames: Option<u32>,
    #[arg(long)]
    render_frames: Option<u32>,
    #[arg(long)]
    ray_budget: Option<u64>,
    #[arg(long)]
    no_rate_control: bool,
    #[arg(long)]
    f_rate: Option<f32>,
    #[arg(long)]
    rate_epsilon: Option<f32>,
    /// Parallel film accumulation; results depend on scheduling.
    #[arg(long)]
    fast: bool,
    /// Worker threads (also NRRS_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    reference_frames: Option<u32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps_per_frame: Option<usize>,
    #[arg(long)]
    statnet_lr: Option<f32>,
    #[arg(long)]
    rrsnet_lr: Option<f32>,
    #[arg(long, value_parser = parse_search_mode)]
    search_mode: Option<SearchMode>,
    #[arg(long)]
    segment: Option<usize>,
    #[arg(long)]
    search_cap: Option<usize>,
    /// relmse-time or relmse.
    #[arg(long, value_parser = parse_score)]
    score: Option<ScoreMode>,
    #[arg(long)]
    probe_frames: Option<u32>,
}

fn parse_search_mode(s: &str) -> Result<SearchMode, String> {
    match s {
        "auto" => Ok(SearchMode::Auto),
        "brute-force" | "brute" => Ok(SearchMode::BruteForce),
        "heuristic" => Ok(SearchMode::Heuristic),
        _ => Err(format!("unknown search mode '{s}'")),
    }
}

fn parse_score(s: &str) -> Result<ScoreMode, String> {
    match s {
        "relmse-time" => Ok(ScoreMode::RelMseTime),
        "relmse" => Ok(ScoreMode::RelMse),
        _ => Err(format!("unknown score '{s}'")),
    }
}

impl RunArgs {
    fn resolve(self) -> nrrs::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| nrrs::Error::io(p, e))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident).+ <- $v:expr) => {
                if let Some(v) = $v {
                    c.$($field).+ = v;
                }
            };
        }
        set!(scene <- self.scene);
        set!(width <- self.width);
        set!(height <- self.height);
        set!(max_depth <- self.max_depth);
        set!(seed <- self.seed);
        set!(train_frames <- self.train_frames);
        set!(render_frames <- self.render_frames);
        set!(f_rate <- self.f_rate);
        set!(rate_epsilon <- self.rate_epsilon);
        set!(output_dir <- self.output_dir);
        set!(reference_frames <- self.reference_frames);
        set!(neural.batch_size <- self.batch_size);
        set!(neural.steps_per_frame <- self.steps_per_frame);
        set!(neural.statnet_lr <- self.statnet_lr);
        set!(neural.rrsnet_lr <- self.rrsnet_lr);
        set!(search.mode <- self.search_mode);
        set!(search.segment <- self.segment);
        set!(search.cap <- self.search_cap);
        set!(search.score <- self.score);
        set!(search.probe_frames <- self.probe_frames);
        let env_threads = std::env::var("NRRS_THREADS").ok().and_then(|v| v.parse().ok());
        set!(threads <- self.threads.or(env_threads));
        if self.ray_budget.is_some() {
            c.ray_budget = self.ray_budget;
        }
        if self.reference.is_some() {
            c.reference = self.reference;
        }
        if self.no_rate_control {
            c.rate_control = false;
        }
        if self.fast {
            c.deterministic = false;
        }
        if !self.methods.is_empty() {
            c.methods = self.methods;
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_reports(reports: &[MetricsReport]) {
    println!(
        "{:<24} {:>7} {:>12} {:>12} {:>14} {:>9} {:>10}",
        "method", "frames", "rays", "relmse", "ray_eff_inv", "overflow", "bias_drop"
    );
    for r in reports {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        println!(
            "{:<24} {:>7} {:>12} {:>12} {:>14} {:>9} {:>10}",
            r.method,
            r.frames,
            r.rays,
            f(r.relmse),
            f(r.ray_eff_inv),
            r.overflow_events,
            r.bias_drop_events
        );
    }
}

fn exit_for(reports: &[MetricsReport]) -> ExitCode {
    if reports.iter().any(|r| r.bias_drop_events > 0) {
        eprintln!("bias-drop events occurred; the estimate is biased");
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn load_network(path: &Option<PathBuf>) -> nrrs::Result<Option<NeuralRrs>> {
    path.as_deref().map(NeuralRrs::load).transpose()
}

fn render_cmd(cfg: RunConfig, checkpoint: Option<PathBuf>) -> nrrs::Result<ExitCode> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| nrrs::Error::io(&cfg.output_dir, e))?;
    let scene = bench::load_scene(&cfg)?;
    let name = &cfg.methods[0];
    let method: Method = name.parse()?;
    let reference = match (&method, &cfg.reference) {
        (Method::MixDepth(_), _) | (_, Some(_)) => Some(bench::reference_image(&cfg, &scene)?),
        _ => None,
    };
    let outcome = bench::run_method(&cfg, &scene, name, &method, reference.as_deref(), load_network(&checkpoint)?)?;
    let image = outcome.rendered.image();
    bench::write_pfm(&cfg.output_dir.join("render.pfm"), &image, cfg.width, cfg.height)?;
    bench::write_ppm(&cfg.output_dir.join("render.ppm"), &image, cfg.width, cfg.height)?;
    println!("strategy: {}", outcome.strategy);
    let reports = [outcome.report];
    print_reports(&reports);
    Ok(exit_for(&reports))
}

fn train_cmd(cfg: RunConfig, out: PathBuf) -> nrrs::Result<ExitCode> {
    let scene = bench::load_scene(&cfg)?;
    let method: Method = cfg.methods[0].parse()?;
    let trained = bench::train(&cfg, &scene, &method.training_strategy(), None)?;
    let Some(net) = trained.network else {
        return Err(nrrs::Error::InvalidArgument(format!("method '{}' has no network to train", cfg.methods[0])));
    };
    net.save(&out)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| nrrs::Error::io(&cfg.output_dir, e))?;
    net.write_curve(&cfg.output_dir.join("train.csv"))?;
    println!(
        "trained {} for {} frames ({} steps, {} skipped) in {:.1}s -> {}",
        net.variant(),
        trained.frames,
        net.steps(),
        net.skipped_steps(),
        trained.seconds,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn search_cmd(cfg: RunConfig, base: Variant, checkpoint: Option<PathBuf>) -> nrrs::Result<ExitCode> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| nrrs::Error::io(&cfg.output_dir, e))?;
    let scene = bench::load_scene(&cfg)?;
    let reference = bench::reference_image(&cfg, &scene)?;
    let kind = match base {
        Variant::Nrrs => nrrs::rrs::StrategyKind::Nrrs,
        Variant::Aid => nrrs::rrs::StrategyKind::AidNrrs,
    };
    let network = load_network(&checkpoint)?;
    let trained = match network {
        // a checkpoint is used as is
        Some(net) => bench::Trained {
            network: Some(net),
            tree: None,
            pixel_estimate: reference.clone(),
            report: Default::default(),
            frames: 0,
            seconds: 0.0,
        },
        None => bench::train(&cfg, &scene, &Strategy::uniform(kind), None)?,
    };
    let result = bench::search(&cfg, &scene, &trained, kind, &reference)?;
    result.write_log(&cfg.output_dir.join("search.csv"))?;
    println!("best: {}", result.best);
    println!("score: {:.6e} after {} probes", result.estimate.score, result.probes);
    Ok(ExitCode::SUCCESS)
}

fn selftest(frames: u32) -> nrrs::Result<ExitCode> {
    let cfg = RunConfig {
        scene: "furnace".into(),
        width: 8,
        height: 8,
        ..Default::default()
    };
    let scene = bench::load_scene(&cfg)?;
    let truth = BuiltinScene::furnace_value(cfg.max_depth);
    let mut ok = true;
    for s in ["pt", "throughput", "fixed:0.7", "fixed:1.5"] {
        let strategy: Strategy = s.parse()?;
        let mut engine = Engine::new(cfg.engine(), cfg.pixel_count())?;
        let mut film = Film::new(cfg.width, cfg.height);
        let blank = vec![nrrs::math::Rgb::BLACK; cfg.pixel_count()];
        let ctx = FactorContext::new(&blank);
        let (mut sum, mut sq, mut n) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..frames {
            let out = engine.trace_frame(&scene, &strategy, &ctx, &mut film)?;
            // pixels of one frame are correlated through normalization, so
            // the frame mean is the sample unit
            let m = out.image.iter().map(|p| p.luminance() as f64).sum::<f64>() / out.image.len() as f64;
            sum += m;
            sq += m * m;
            n += 1.0;
        }
        let mean = sum / n;
        let se = ((sq / n - mean * mean).max(0.0) / (n - 1.0)).sqrt();
        let pass = (mean - truth).abs() <= 4.0 * se.max(1e-9);
        ok &= pass;
        println!(
            "{} {s:<12} mean {mean:.5} analytic {truth:.5} ({:+.2} se)",
            if pass { "PASS" } else { "FAIL" },
            (mean - truth) / se.max(1e-12)
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run(cli: Cli) -> nrrs::Result<ExitCode> {
    match cli.command {
        Command::Render { run, checkpoint } => render_cmd(run.resolve()?, checkpoint),
        Command::Train { run, out } => train_cmd(run.resolve()?, out),
        Command::Search { run, base, checkpoint } => search_cmd(run.resolve()?, base, checkpoint),
        Command::Compare { run } => {
            let reports = bench::run_comparison(&run.resolve()?)?;
            print_reports(&reports);
            Ok(exit_for(&reports))
        }
        Command::Reference { run } => {
            let cfg = run.resolve()?;
            let scene = bench::load_scene(&cfg)?;
            let image = bench::reference_image(&cfg, &scene)?;
            let mean = image.iter().map(|p| p.luminance() as f64).sum::<f64>() / image.len() as f64;
            println!("reference ready, mean luminance {mean:.5}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { frames } => selftest(frames),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("NRRS_THREADS").ok().and_then(|v| v.parse().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
