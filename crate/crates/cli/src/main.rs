use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::{json, Value};

use qfvio::error::ErrorCategory;
use qfvio::evaluation::{associate, evaluate, timing_report, TimingRow};
use qfvio::filter::FilterMode;
use qfvio::harness::io::{load_ground_truth, load_sequence, save_sequence, SequencePaths};
use qfvio::harness::pipeline::{
    bench, compare_modes, evaluate_run, run_pipeline, sweep, sweep_csv, SweepGrid, SweepStrategy,
};
use qfvio::harness::sim::{simulate, standard_corruption, ScenarioSpec, TrajectoryKind};
use qfvio::harness::{RunConfig, SequenceBundle};
use qfvio::{Error, Result};

#[derive(Parser)]
#[command(name = "qfvio", version, about = "Visual-inertial odometry experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file with dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set adaptive.s=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// eskf, full_sukf, hybrid_qf or adaptive_hybrid_qf.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Output directory for this run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Args, Clone)]
struct Source {
    /// Sequence directory in EuRoC layout, with an optional `vo/data.csv`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic trajectory used when no data directory is given.
    #[arg(long, default_value = "figure8")]
    scenario: String,
    /// Length of the synthetic sequence in seconds.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// Fraction of the synthetic timeline covered by corruption episodes.
    #[arg(long, default_value_t = 0.0)]
    corruption: f64,
    /// Disable every synthetic noise source.
    #[arg(long)]
    noise_free: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence on disk.
    Simulate(Source),
    /// Run one filter mode over a sequence.
    Run(Source),
    /// Score an estimated trajectory against ground truth.
    Evaluate {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
    },
    /// Run all four modes on the same sequence and tabulate improvements.
    Compare(Source),
    /// Time the propagation step of each mode.
    Bench {
        #[command(flatten)]
        source: Source,
        /// Minimum number of timed propagation steps per mode.
        #[arg(long, default_value_t = 100_000)]
        min_steps: usize,
        /// Modes to time; all when omitted.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
    },
    /// Rank adaptive parameter settings by ATE.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Parameter and values, e.g. `--param w_thr=0.2,0.3,0.4`.
        #[arg(long = "param", value_name = "NAME=V1,V2,...", required = true)]
        params: Vec<String>,
        /// ovat or full.
        #[arg(long, default_value = "ovat")]
        strategy: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Run(_) => "run",
            Command::Evaluate { .. } => "evaluate",
            Command::Compare(_) => "compare",
            Command::Bench { .. } => "bench",
            Command::Sweep { .. } => "sweep",
        }
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(mode) = &common.mode {
        cfg.mode = mode.parse()?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Loaded {
    bundle: SequenceBundle,
    scenario: Option<ScenarioSpec>,
}

fn scenario_spec(src: &Source, seed: u64) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::new(TrajectoryKind::from_name(&src.scenario)?, src.duration, seed);
    spec.noise_free = src.noise_free;
    if src.corruption > 0.0 {
        spec.corruption_episodes = standard_corruption(src.duration, src.corruption);
    }
    spec.validate()?;
    Ok(spec)
}

fn load_source(src: &Source, cfg: &RunConfig) -> Result<Loaded> {
    match &src.data {
        Some(dir) => {
            let name = dir
                .file_name()
                .map_or_else(|| "sequence".to_string(), |n| n.to_string_lossy().into_owned());
            let bundle = load_sequence(&name, &SequencePaths::from_dir(dir))?;
            info!("loaded {name}: {} IMU samples, {} VO samples", bundle.imu.len(), bundle.vo.len());
            Ok(Loaded { bundle, scenario: None })
        }
        None => {
            let spec = scenario_spec(src, cfg.seed)?;
            let bundle = simulate(&spec)?;
            info!("simulated {}: {} IMU samples", bundle.name, bundle.imu.len());
            Ok(Loaded {
                bundle,
                scenario: Some(spec),
            })
        }
    }
}

struct RunDir {
    path: PathBuf,
    outputs: Vec<String>,
}

impl RunDir {
    fn create(path: PathBuf) -> Result<Self> {
        fs::create_dir_all(&path).map_err(|e| io_error(&path, e))?;
        Ok(Self {
            path,
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path.join(name);
        fs::write(&p, contents).map_err(|e| io_error(&p, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("JSON values serialise");
        self.write(name, &(text + "\n"))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_out(command: &str, cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{command}-{}-seed{}", cfg.mode, cfg.seed))
}

fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("mode,processing_time,rtf,mean_step_latency,p99_step_latency\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.mode, r.processing_time, r.rtf, r.mean_step_latency, r.p99_step_latency
        )
        .unwrap();
    }
    out
}

fn parse_grid(params: &[String]) -> Result<SweepGrid> {
    params
        .iter()
        .map(|p| {
            let (k, vs) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("sweep parameter '{p}' is not NAME=V1,V2,...")))?;
            let values = vs
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("'{v}' in '{p}' is not a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((k.trim().to_string(), values))
        })
        .collect()
}

fn parse_modes(names: &[String]) -> Result<Vec<FilterMode>> {
    if names.is_empty() {
        return Ok(FilterMode::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| n.parse())
        .collect()
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let command = cli.command.name();
    let mut dir = RunDir::create(cli.common.out.clone().unwrap_or_else(|| default_out(command, &cfg)))?;
    let mut manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(cfg).expect("configuration serialises"),
        "config_file": cli.common.config,
        "overrides": cli.common.overrides,
    });

    match &cli.command {
        Command::Simulate(src) => {
            let spec = scenario_spec(src, cfg.seed)?;
            let bundle = simulate(&spec)?;
            let paths = save_sequence(&dir.path, &bundle)?;
            manifest["scenario"] = serde_json::to_value(&spec).expect("scenario serialises");
            manifest["sequence"] = json!({
                "imu": paths.imu,
                "ground_truth": paths.ground_truth,
                "vo": paths.vo,
            });
            println!(
                "wrote {} IMU, {} VO and {} ground-truth samples to {}",
                bundle.imu.len(),
                bundle.vo.len(),
                bundle.ground_truth.len(),
                dir.path.display()
            );
        }
        Command::Run(src) => {
            let loaded = load_source(src, &cfg)?;
            record_source(&mut manifest, src, &loaded);
            let out = run_pipeline(&loaded.bundle, &cfg)?;
            dir.write("trajectory.csv", &out.trajectory_csv())?;
            dir.write("log.csv", &out.log.to_csv())?;
            let timing = timing_report(&[out.timing.mode_timing(cfg.mode)], loaded.bundle.duration())?;
            dir.write("timing.csv", &timing_csv(&timing))?;
            manifest["diverged"] = json!(out.diverged);
            if out.diverged {
                warn!("filter diverged; outputs stop at the last good step");
            }
            if !loaded.bundle.ground_truth.is_empty() {
                let report = evaluate_run(&loaded.bundle, &out, &cfg)?;
                let value = serde_json::to_value(report).expect("report serialises");
                dir.write_json("report.json", &value)?;
                println!(
                    "{}: ATE {:.4} m, quaternion RMSE {:.4} deg",
                    cfg.mode, report.ate_rmse, report.quat_rmse
                );
            }
            println!("RTF {:.2}, mean step {:.2} µs", timing[0].rtf, timing[0].mean_step_latency * 1e6);
        }
        Command::Evaluate {
            estimate,
            ground_truth,
        } => {
            let est = load_ground_truth(estimate)?;
            let gt = load_ground_truth(ground_truth)?;
            let pairs = associate(&est, &gt, cfg.eval.max_dt)?;
            let report = evaluate(&pairs, cfg.eval.align)?;
            dir.write_json("report.json", &serde_json::to_value(report).expect("report serialises"))?;
            manifest["inputs"] = json!({ "estimate": estimate, "ground_truth": ground_truth });
            println!(
                "ATE {:.4} m (x {:.4}, y {:.4}, z {:.4}); roll {:.3}, pitch {:.3}, yaw {:.3} deg; quaternion {:.3} deg over {} pairs",
                report.ate_rmse,
                report.rmse_x,
                report.rmse_y,
                report.rmse_z,
                report.roll_rmse,
                report.pitch_rmse,
                report.yaw_rmse,
                report.quat_rmse,
                report.n_pairs
            );
        }
        Command::Compare(src) => {
            let loaded = load_source(src, &cfg)?;
            record_source(&mut manifest, src, &loaded);
            let cmp = compare_modes(&loaded.bundle, &cfg)?;
            dir.write("comparison.csv", &cmp.to_csv())?;
            dir.write("reports.csv", &cmp.reports_csv())?;
            manifest["timing_order_ok"] = json!(cmp.timing_order_ok);
            print!("{}", cmp.to_csv());
            if !cmp.timing_order_ok {
                warn!("mean step latency is not ordered ESKF < hybrid < full sigma-point on this run");
            }
        }
        Command::Bench {
            source,
            min_steps,
            modes,
        } => {
            let loaded = load_source(source, &cfg)?;
            record_source(&mut manifest, source, &loaded);
            let modes = parse_modes(modes)?;
            let timings = bench(&loaded.bundle, &cfg, &modes, *min_steps)?;
            let sequence = loaded.bundle.duration() * (timings[0].step_latencies.len() as f64)
                / (loaded.bundle.imu.len().saturating_sub(1).max(1) as f64);
            let rows = timing_report(&timings, sequence)?;
            dir.write("timing.csv", &timing_csv(&rows))?;
            for r in &rows {
                println!("{:<20} mean {:>8.2} µs  p99 {:>8.2} µs", r.mode, r.mean_step_latency * 1e6, r.p99_step_latency * 1e6);
            }
        }
        Command::Sweep {
            source,
            params,
            strategy,
        } => {
            let loaded = load_source(source, &cfg)?;
            record_source(&mut manifest, source, &loaded);
            if cfg.mode != FilterMode::AdaptiveHybridQf {
                warn!("mode {} ignores the adaptive parameters being swept", cfg.mode);
            }
            let grid = parse_grid(params)?;
            let strategy: SweepStrategy = strategy.parse()?;
            let rows = sweep(&loaded.bundle, &cfg, &grid, strategy)?;
            dir.write("sweep.csv", &sweep_csv(&rows))?;
            manifest["grid"] = json!(grid);
            print!("{}", sweep_csv(&rows));
        }
    }

    manifest["outputs"] = json!(dir.outputs);
    let path = dir.path.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("JSON values serialise") + "\n";
    fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    info!("outputs in {}", dir.path.display());
    Ok(())
}

fn record_source(manifest: &mut Value, src: &Source, loaded: &Loaded) {
    manifest["sequence"] = json!(loaded.bundle.name);
    match &loaded.scenario {
        Some(spec) => manifest["scenario"] = serde_json::to_value(spec).expect("scenario serialises"),
        None => manifest["data"] = json!(src.data),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(ErrorCategory::Config.exit_code() as u8);
        }
        Err(e) => e.exit(),
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
