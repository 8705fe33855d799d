//! Command-line surface: run the pipeline, benchmark the detector against
//! synthetic scenarios, inspect a single frame pair, or emit a scenario.
//!
//! Exit codes: 0 on success, 1 on configuration or usage errors, 2 on
//! runtime failures.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use pyrowatch::config::load_config;
use pyrowatch::detect::DetectParams;
use pyrowatch::imaging::{decode_frame, encode_png, sniff_format, Frame};
use pyrowatch::pipeline::{run_pipeline, Engine, EngineConfig, PipelineMetrics};
use pyrowatch::simharness::{
    default_benchmark_scenarios, generate_sequence, parse_scenario, place_start, run_benchmark,
    write_scenario, FlowSpec, Scenario,
};

#[derive(Parser)]
#[command(
    name = "pyrowatch",
    version,
    about = "Detects incandescent flow fronts in fixed-camera volcano footage and raises alerts"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a frame directory or stream file per a config file.
    Run {
        /// Path to a key=value pipeline config.
        #[arg(long)]
        config: PathBuf,
        /// Stamp events with wall-clock time instead of frame timestamps.
        #[arg(long)]
        live: bool,
    },
    /// Score the detector against synthetic scenarios.
    Bench {
        /// Directory of scenario files; the built-in 100-scenario set is
        /// used when omitted.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Emit the report as JSON instead of an aligned table.
        #[arg(long)]
        json: bool,
    },
    /// Run one frame pair through detection and print flows as JSON.
    DetectOnce {
        /// Earlier frame (PNG or PPM).
        #[arg(long)]
        prev: PathBuf,
        /// Later frame (PNG or PPM).
        #[arg(long)]
        curr: PathBuf,
    },
    /// Write a scenario file (and optionally its rendered frames).
    GenScenario {
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        frames: u32,
        #[arg(long, default_value_t = 320)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
        /// Per-pixel Gaussian noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Generate a calm clip with no flow.
        #[arg(long)]
        no_flow: bool,
        /// Flow screen bearing in degrees (0 = right, 90 = up).
        #[arg(long, default_value_t = 315.0)]
        bearing: f64,
        /// Flow tail speed, px/frame.
        #[arg(long, default_value_t = 2.0)]
        speed: f64,
        /// Flow stroke width, px.
        #[arg(long, default_value_t = 6.0)]
        flow_width: f64,
        /// Flow length growth, px/frame.
        #[arg(long, default_value_t = 2.0)]
        growth: f64,
        /// Override the computed start position.
        #[arg(long, requires = "start_y")]
        start_x: Option<f64>,
        #[arg(long, requires = "start_x")]
        start_y: Option<f64>,
        /// Also render the frames to <out>/frames as PNG.
        #[arg(long)]
        render: bool,
    },
}

/// Error with the process exit code it maps to.
struct CliError {
    code: i32,
    message: String,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: 1,
        message: e.to_string(),
    }
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: 2,
        message: e.to_string(),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    match execute(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::Run { config, live } => cmd_run(&config, live),
        Command::Bench { scenarios, json } => cmd_bench(scenarios.as_deref(), json),
        Command::DetectOnce { prev, curr } => cmd_detect_once(&prev, &curr),
        Command::GenScenario {
            out,
            seed,
            frames,
            width,
            height,
            sigma,
            no_flow,
            bearing,
            speed,
            flow_width,
            growth,
            start_x,
            start_y,
            render,
        } => {
            let flow = if no_flow {
                None
            } else {
                let start = match (start_x, start_y) {
                    (Some(x), Some(y)) => (x, y),
                    _ => place_start(bearing, speed, flow_width, growth, frames, (width, height)),
                };
                Some(FlowSpec {
                    start,
                    bearing_deg: bearing,
                    speed,
                    width: flow_width,
                    growth,
                    ..FlowSpec::default()
                })
            };
            let id = out
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into());
            let scenario = Scenario {
                id,
                frames,
                size: (width, height),
                noise_sigma: sigma,
                flow,
                seed,
            };
            cmd_gen_scenario(&out, &scenario, render)
        }
    }
}

fn cmd_run(config: &Path, live: bool) -> Result<(), CliError> {
    let mut cfg = load_config(config).map_err(config_err)?;
    if live {
        cfg.live = true;
    }
    let metrics = run_pipeline(&cfg).map_err(runtime_err)?;
    print_metrics(&metrics);
    Ok(())
}

fn print_metrics(m: &PipelineMetrics) {
    eprintln!("frames:       {} ({} skipped)", m.frames, m.frames_skipped);
    eprintln!("events:       {}", m.events);
    eprintln!("mean latency: {:.2} ms/frame", m.mean_latency_ms);
    eprintln!("throughput:   {:.2} fps over {:.2} s", m.fps, m.elapsed_s);
}

fn cmd_bench(scenarios: Option<&Path>, json: bool) -> Result<(), CliError> {
    let set = match scenarios {
        None => default_benchmark_scenarios(),
        Some(dir) => load_scenario_dir(dir)?,
    };
    let report = run_benchmark(&set, &DetectParams::default()).map_err(runtime_err)?;
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table_text());
    }
    Ok(())
}

/// Parse every regular file in the directory as one scenario, in name order.
fn load_scenario_dir(dir: &Path) -> Result<Vec<Scenario>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| config_err(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(config_err(format!(
            "no scenario files in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into());
            parse_scenario(&text, &stem)
                .map_err(|e| config_err(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn cmd_detect_once(prev: &Path, curr: &Path) -> Result<(), CliError> {
    let load = |path: &Path, id: u64| -> Result<Frame, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| runtime_err(format!("cannot read {}: {e}", path.display())))?;
        let format = sniff_format(&bytes)
            .map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
        let mut frame = decode_frame(&bytes, format)
            .map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
        frame.frame_id = id;
        frame.timestamp_ms = id * 100;
        Ok(frame)
    };
    let prev = load(prev, 0)?;
    let curr = load(curr, 1)?;
    let mut engine = Engine::new(EngineConfig::default());
    engine.process(prev).map_err(runtime_err)?;
    let result = engine.process(curr).map_err(runtime_err)?;
    let flows: Vec<serde_json::Value> = result
        .flows
        .iter()
        .map(|(blob, traj)| {
            serde_json::json!({
                "area": blob.area,
                "centroid": [blob.centroid.0, blob.centroid.1],
                "grados": traj.grados,
                "direction": traj.direction,
                "deviation": traj.displayed_deviation,
                "source": traj.source,
            })
        })
        .collect();
    println!("{}", serde_json::json!({ "flows": flows }));
    Ok(())
}

fn cmd_gen_scenario(out: &Path, scenario: &Scenario, render: bool) -> Result<(), CliError> {
    scenario.validate().map_err(config_err)?;
    std::fs::create_dir_all(out).map_err(runtime_err)?;
    let cfg_path = out.join("scenario.cfg");
    std::fs::write(&cfg_path, write_scenario(scenario)).map_err(runtime_err)?;
    eprintln!("wrote {}", cfg_path.display());
    if render {
        let frames = generate_sequence(scenario).map_err(runtime_err)?;
        let frames_dir = out.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(runtime_err)?;
        for frame in &frames {
            let png = encode_png(frame).map_err(runtime_err)?;
            let path = frames_dir.join(format!("frame_{:04}.png", frame.frame_id));
            std::fs::write(&path, png).map_err(runtime_err)?;
        }
        eprintln!("wrote {} frames to {}", frames.len(), frames_dir.display());
    }
    Ok(())
}
