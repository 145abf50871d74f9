use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use esc_gates::config::{config_hash, grid_space_from_json_str, RunConfig};
use esc_gates::harness::{grid_search, run_closed_loop, run_offset_demo, suppression_ratio};
use esc_gates::report::{self, Provenance};

/// Extremum-seeking gate calibration simulator.
#[derive(Parser)]
#[command(name = "escg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write trace.csv and esc_trace.csv.
    Simulate(Common),
    /// Run every cell of a hyperparameter space and write grid.csv.
    Grid {
        #[command(flatten)]
        common: Common,
        /// JSON grid space: `points` and/or a `product` of axes.
        #[arg(long)]
        space: PathBuf,
    },
    /// Recover injected control offsets and write offset_demo.csv.
    OffsetDemo(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`; default `.`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    /// Bad input; exit 2.
    Config(String),
    /// Anything that went wrong after validation; exit 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

struct Loaded {
    config: RunConfig,
    hash: String,
    out_dir: PathBuf,
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let src = read(&common.config)?;
    let mut config =
        RunConfig::from_json_str(&src).map_err(|issue| Failure::Config(format!("{}: {issue}", common.config.display())))?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out_dir = common
        .out_dir
        .clone()
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    Ok(Loaded {
        hash: config_hash(&src),
        config,
        out_dir,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    report::write_file(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn simulate(common: &Common) -> Result<(), Failure> {
    let run = load(common)?;
    let cfg = run.config.loop_config();
    let prov = Provenance::new(&run.hash, run.config.seeds());
    let trace = run_closed_loop(&cfg).context("closed loop failed")?;
    let s = suppression_ratio(&trace).context("suppression ratio")?;
    write(&run.out_dir, "trace.csv", &report::trace_csv(&prov, &trace.rows))?;
    write(&run.out_dir, "esc_trace.csv", &report::esc_csv(&prov, &trace.history, &trace.knobs))?;

    println!("{}", prov.seeds);
    println!("calibrations: {}", trace.calibrations.len());
    println!("mean error uncontrolled: {:.6e}", s.mean_uncontrolled);
    println!("mean error controlled: {:.6e}", s.mean_controlled);
    println!(
        "suppression ratio (arithmetic means): {}{}",
        s.ratio,
        if s.degenerate { " (degenerate: controlled mean is zero)" } else { "" }
    );
    println!(
        "benchmark time charged: {:.1} min total, {:.2} min/h",
        trace.charged_seconds() / 60.0,
        cfg.runtime_minutes_per_hour()
    );
    Ok(())
}

fn grid(common: &Common, space_path: &Path) -> Result<(), Failure> {
    let run = load(common)?;
    let space_src = read(space_path)?;
    let space = grid_space_from_json_str(&space_src)
        .map_err(|issue| Failure::Config(format!("{}: {issue}", space_path.display())))?;
    let base = run.config.loop_config();
    for (i, point) in space.enumerate().iter().enumerate() {
        point
            .apply(&base)
            .validate()
            .map_err(|e| Failure::Config(format!("{}: point {i}: {e}", space_path.display())))?;
    }
    let prov = Provenance::new(format!("{}+{}", run.hash, config_hash(&space_src)), run.config.seeds());
    let results = grid_search(&space, &base).context("grid search failed")?;
    write(&run.out_dir, "grid.csv", &report::grid_csv(&prov, &results))?;

    let mut succeeded = 0;
    for r in &results {
        let p = &r.point;
        let outcome = match &r.outcome {
            Ok(s) => {
                succeeded += 1;
                format!("suppression {:.2}", s.ratio)
            }
            Err(e) => format!("failed: {e}"),
        };
        println!(
            "interval {} min, {} circuits x {} shots, {} x {}: {:.2} min/h, {outcome}",
            p.interval_minutes, p.circuits_per_depth, p.shots_per_circuit, p.iterations, p.n_samples, r.runtime_minutes_per_hour
        );
    }
    if succeeded == 0 {
        return Err(Failure::Runtime(anyhow::anyhow!("every grid cell failed")));
    }
    Ok(())
}

fn offset_demo(common: &Common) -> Result<(), Failure> {
    let run = load(common)?;
    let cfg = run.config.loop_config();
    let calibrations = run.config.loop_.offset_demo_calibrations;
    let prov = Provenance::new(&run.hash, run.config.seeds());
    let demo = run_offset_demo(&cfg, calibrations).context("offset demo failed")?;
    write(&run.out_dir, "offset_demo.csv", &report::offset_csv(&prov, &demo.rows))?;
    write(&run.out_dir, "reference_drb.csv", &report::drb_csv(&prov, &demo.reference_records))?;
    write(&run.out_dir, "esc_trace.csv", &report::esc_csv(&prov, &demo.history, &cfg.knobs))?;

    println!("{}", prov.seeds);
    println!(
        "per-shot overhead: {:.3} ms; one iteration charged {:.2} min",
        cfg.runtime.overhead_per_shot * 1e3,
        cfg.n_samples as f64 * cfg.evaluation_seconds() / 60.0
    );
    if let (Some(first), Some(last)) = (demo.rows.first(), demo.rows.last()) {
        println!(
            "residual psi1: {:.4} -> {:.4} rad; psi2: {:.4} -> {:.4} rad; gain product: {:.4} -> {:.4}",
            first.residual_psi1,
            last.residual_psi1,
            first.residual_psi2,
            last.residual_psi2,
            first.residual_gain_product,
            last.residual_gain_product
        );
        println!("true error: {:.3e} -> {:.3e}", first.true_error, last.true_error);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Grid { common, space } => grid(common, space),
        Command::OffsetDemo(c) => offset_demo(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
