use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csitrack::eval::{align, cdf_of, percentile};
use csitrack::experiment::{ablate, by_ap, direct_path_aods, simulate_run, trace_header, AblationMode};
use csitrack::io::{
    pair_streams, read_trace_file, read_trajectory_file, write_cdf, write_trace_file, write_trajectory_file,
    RunConfig, TraceHeader,
};
use csitrack::scenario::{MotionSpec, Preset};
use csitrack::tracker::{track, SampleQuality, TrackOutput, TrackerConfig};
use csitrack::{ApId, CsiRecord, Error};

/// Motion tracking from multipath WiFi CSI.
#[derive(Debug, Parser)]
#[command(name = "csitrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic CSI trace and its ground-truth trajectory.
    Simulate(SimulateArgs),
    /// Track a trace and write the estimated trajectory.
    Track(TrackArgs),
    /// Align an estimate to ground truth and report point errors.
    Evaluate(EvaluateArgs),
    /// Compare the full method with an ablated variant on one trace.
    Ablate(AblateArgs),
    /// Simulate, track and evaluate a preset into one directory.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
struct Source {
    /// Run configuration (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: square, indoor-4ap or stationary.
    #[arg(long)]
    preset: Option<Preset>,
    /// RNG seed; overrides the config's seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    /// Trace output.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth trajectory CSV output.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Waypoint CSV (t,x,y) used instead of the config's motion.
    #[arg(long)]
    waypoints: Option<PathBuf>,
    /// Write the effective run configuration here.
    #[arg(long)]
    save_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// Input trace.
    #[arg(long)]
    trace: PathBuf,
    /// Run configuration; only the tracker and aps sections are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trajectory CSV output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Error CDF output (error_m,fraction).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// assume-same-clock or single-packet-aod.
    #[arg(long)]
    mode: AblationMode,
    /// Run configuration; its sim section supplies true angles for single-packet-aod.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report output (TOML).
    #[arg(long)]
    out: Option<PathBuf>,
    /// CDF output (series,error,fraction).
    #[arg(long)]
    cdf: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, default_value = "indoor-4ap")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidGeometry(_) => 3,
        Error::Io(_) | Error::Parse { .. } | Error::Version(_) | Error::MixedAps(..) | Error::InvalidInput(_) => 4,
        Error::StreamOrder { .. } => 5,
        Error::WindowUnderfull { .. }
        | Error::DegenerateGeometry { .. }
        | Error::WeakPath { .. }
        | Error::InsufficientPaths(_)
        | Error::UnobservableDisplacement { .. }
        | Error::Trajectory(_) => 6,
    }
}

fn with_seed(mut cfg: RunConfig, seed: u64) -> RunConfig {
    if let Some(sim) = &mut cfg.sim {
        sim.seed = seed;
    }
    if let Some(MotionSpec::RandomSmooth { seed: s, .. }) = &mut cfg.motion {
        *s = seed;
    }
    cfg
}

fn load_source(src: &Source) -> csitrack::Result<(RunConfig, u64)> {
    match (&src.config, src.preset) {
        (Some(path), _) => {
            let cfg = RunConfig::load(path)?;
            match src.seed {
                Some(seed) => Ok((with_seed(cfg, seed), seed)),
                None => {
                    let seed = cfg.sim.as_ref().map_or(0, |s| s.seed);
                    Ok((cfg, seed))
                }
            }
        }
        (None, Some(preset)) => {
            let seed = src.seed.unwrap_or(0);
            Ok((preset.config(seed), seed))
        }
        (None, None) => Err(Error::Config {
            field: "--config".into(),
            reason: "either --config or --preset is required".into(),
        }),
    }
}

fn simulate(args: &SimulateArgs) -> csitrack::Result<()> {
    let (cfg, seed) = load_source(&args.source)?;
    let waypoints = args.waypoints.as_deref().map(read_trajectory_file).transpose()?;
    let (sim, out) = simulate_run(&cfg, waypoints.as_ref())?;
    let records = out.interleaved();
    write_trace_file(&args.out, &trace_header(&sim, &cfg.tracker), &records)?;
    if let Some(path) = &args.truth {
        write_trajectory_file(path, &out.truth, None)?;
    }
    if let Some(path) = &args.save_config {
        cfg.save(path)?;
    }
    println!(
        "seed {seed}: {} packets x {} APs -> {}",
        out.truth.len(),
        sim.aps.len(),
        args.out.display()
    );
    Ok(())
}

fn tracker_setup(header: &TraceHeader, config: Option<&Path>) -> csitrack::Result<(TrackerConfig, Vec<ApId>)> {
    match config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            cfg.tracker.validate(header.antennas())?;
            let aps = cfg.aps.unwrap_or_else(|| header.aps.clone());
            for ap in &aps {
                if !header.aps.contains(ap) {
                    return Err(Error::Config {
                        field: "aps".into(),
                        reason: format!("AP {ap} is not in the trace"),
                    });
                }
            }
            Ok((cfg.tracker, aps))
        }
        None => {
            let mut t = TrackerConfig::default();
            if let Some(l) = header.num_paths {
                t.aod.num_paths = l;
            }
            if let Some(v) = header.window_seconds {
                t.aod.window_seconds = v;
            }
            t.validate(header.antennas())?;
            Ok((t, header.aps.clone()))
        }
    }
}

fn run_tracker(
    header: &TraceHeader,
    tracker: &TrackerConfig,
    aps: &[ApId],
    records: Vec<CsiRecord>,
) -> csitrack::Result<TrackOutput> {
    let records = records.into_iter().filter(|r| aps.contains(&r.ap));
    track(&header.geometry, tracker, pair_streams(aps, records))
}

fn summary(out: &TrackOutput) -> String {
    let s = out.stats;
    let count = |q: SampleQuality| out.quality.iter().filter(|&&v| v == q).count();
    format!(
        "{} samples: {} ok, {} unobservable, {} warmup ({} weak-path, {} degenerate-steering, {} unresolved)",
        out.quality.len(),
        count(SampleQuality::Ok),
        count(SampleQuality::Unobservable),
        count(SampleQuality::Warmup),
        s.weak_paths,
        s.degenerate_steering,
        s.unresolved_paths
    )
}

fn track_cmd(args: &TrackArgs) -> csitrack::Result<()> {
    let (header, records) = read_trace_file(&args.trace)?;
    let (tracker, aps) = tracker_setup(&header, args.config.as_deref())?;
    let out = run_tracker(&header, &tracker, &aps, records)?;
    write_trajectory_file(&args.out, &out.trajectory, Some(&out.quality))?;
    println!("{}", summary(&out));
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> csitrack::Result<()> {
    let est = read_trajectory_file(&args.estimate)?;
    let truth = read_trajectory_file(&args.truth)?;
    let aligned = align(&est, &truth)?;
    if let Some(path) = &args.out {
        write_cdf(fs::File::create(path)?, &cdf_of(&aligned.errors)?.rows)?;
    }
    println!(
        "median {:.4} cm, p90 {:.4} cm, max {:.4} cm, rotation {:.2} deg over {} points",
        aligned.median() * 100.0,
        aligned.percentile(90.0) * 100.0,
        aligned.max() * 100.0,
        aligned.rotation.to_degrees(),
        aligned.errors.len()
    );
    Ok(())
}

fn ablate_cmd(args: &AblateArgs) -> csitrack::Result<()> {
    let (header, records) = read_trace_file(&args.trace)?;
    let truth = read_trajectory_file(&args.truth)?;
    let cfg = args.config.as_deref().map(RunConfig::load).transpose()?;
    let tracker = match &cfg {
        Some(c) => c.tracker,
        None => tracker_setup(&header, None)?.0,
    };
    let angles = cfg.as_ref().and_then(|c| c.sim.as_ref()).map(direct_path_aods);
    if args.mode == AblationMode::SinglePacketAod && angles.is_none() {
        eprintln!("note: no sim section in --config; angle errors not compared");
    }
    let streams = by_ap(&records);
    let groups = pair_streams(&header.aps, records);
    let result = ablate(
        &header.geometry,
        &tracker,
        &groups,
        &truth,
        args.mode,
        angles.as_ref().map(|a| (&streams, a)),
    )?;
    let report = &result.report;
    if let Some(path) = &args.out {
        fs::write(path, report.to_toml()?)?;
    }
    if let Some(path) = &args.cdf {
        let mut text = String::from("series,error,fraction\n");
        for (series, row) in result.cdf_series()? {
            let _ = writeln!(text, "{series},{},{}", row.error_m, row.fraction);
        }
        fs::write(path, text)?;
    }
    println!(
        "{}: median {:.4} cm vs {:.4} cm full (ratio {:.2})",
        report.mode,
        report.ablated_median_error_m * 100.0,
        report.full_median_error_m * 100.0,
        report.error_ratio
    );
    if let Some(a) = &report.aod {
        println!(
            "angle p80: {:.3} deg multi-packet vs {:.3} deg single-packet ({} packets)",
            a.multi_packet_p80_deg, a.single_packet_p80_deg, a.samples
        );
    }
    Ok(())
}

fn demo(args: &DemoArgs) -> csitrack::Result<()> {
    fs::create_dir_all(&args.out)?;
    let dir = &args.out;
    let cfg = args.preset.config(args.seed);
    cfg.save(&dir.join("config.toml"))?;
    let (sim, out) = simulate_run(&cfg, None)?;
    let trace = dir.join("trace.csi");
    write_trace_file(&trace, &trace_header(&sim, &cfg.tracker), &out.interleaved())?;
    write_trajectory_file(&dir.join("truth.csv"), &out.truth, None)?;

    let (header, records) = read_trace_file(&trace)?;
    let tracked = run_tracker(&header, &cfg.tracker, &header.aps, records.clone())?;
    write_trajectory_file(&dir.join("trajectory.csv"), &tracked.trajectory, Some(&tracked.quality))?;
    let aligned = align(&tracked.trajectory, &out.truth)?;
    write_cdf(fs::File::create(dir.join("cdf.csv"))?, &cdf_of(&aligned.errors)?.rows)?;

    let groups = pair_streams(&header.aps, records);
    let abl = ablate(
        &header.geometry,
        &cfg.tracker,
        &groups,
        &out.truth,
        AblationMode::AssumeSameClock,
        None,
    )?;
    fs::write(dir.join("ablation.toml"), abl.report.to_toml()?)?;

    println!("preset {} seed {}", args.preset, args.seed);
    println!("{}", summary(&tracked));
    println!(
        "median error {:.4} cm, p90 {:.4} cm; assume-same-clock median {:.4} cm",
        aligned.median() * 100.0,
        percentile(&aligned.errors, 90.0) * 100.0,
        abl.report.ablated_median_error_m * 100.0
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Track(a) => track_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Demo(a) => demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
