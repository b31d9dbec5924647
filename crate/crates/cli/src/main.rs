//! `m3sel`: the command-line surface over the event-selection library.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 corrupt or
//! unreadable data, 3 unreachable tuning target.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use m3sel_core::config::{ConfigError, RunConfig};
use m3sel_core::cuts::select_triplets;
use m3sel_core::framestore::{read_chunk_file, FileError};
use m3sel_core::geometry::{PhysicsConstants, Vec3, NUM_LAYERS};
use m3sel_core::pipeline::{self, PipelineError, RunReport, Verdict};
use m3sel_core::toygen::{generate_to_files, read_truth_file, GenError};
use m3sel_core::triplet_fit::fit_track;
use m3sel_core::tune::{tune_thresholds, TuneError};
use m3sel_core::vertex::evaluate_frame;

#[derive(Parser)]
#[command(
    name = "m3sel",
    version,
    about = "Online event selection for a three-track decay search"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a toy frame stream (chunk file plus optional truth sidecar).
    Gen {
        /// Config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of frames to generate.
        #[arg(long)]
        frames: u64,
        /// Output chunk file (.m3c); a .meta sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Optional truth sidecar (line-delimited JSON).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Generator seed; same seed, same bytes.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Tune cut, fit and vertex thresholds to a truth-labeled stream.
    Tune {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Truth sidecar matching the input stream.
        #[arg(long)]
        truth: PathBuf,
        /// Input chunk file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Per-stage fraction of truth samples the thresholds must keep.
        #[arg(long, default_value_t = 0.985)]
        retention: f64,
        /// Where to write the tuned config.
        #[arg(long, default_value = "tuned.toml")]
        out: PathBuf,
    },
    /// Filter a frame stream and report what was kept and why.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input chunk file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Kept-frame output chunk file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the run report (with the config echoed) as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Truth sidecar; enables efficiency metrics in the report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Override the configured worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Measure filter throughput across worker counts.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input chunk file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated worker counts.
        #[arg(long, default_value = "1,2,4,8")]
        workers: String,
        /// Runs per worker count; the median is reported.
        #[arg(long, default_value_t = 3)]
        repeat: usize,
    },
    /// Dump one frame's hits and its stage-by-stage outcome.
    Inspect {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input chunk file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Frame id to look up.
        #[arg(long)]
        frame: u64,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Unreachable(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        let (code, label, msg) = match self {
            Failure::Usage(m) => (1, "usage", m),
            Failure::Data(m) => (2, "data", m),
            Failure::Unreachable(m) => (3, "tuning", m),
        };
        eprintln!("m3sel: {label} error: {msg}");
        ExitCode::from(code)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Write { .. } => Failure::Data(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<FileError> for Failure {
    fn from(e: FileError) -> Self {
        match e {
            FileError::Store(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<GenError> for Failure {
    fn from(e: GenError) -> Self {
        match e {
            GenError::File(f) => f.into(),
            GenError::Io(_) | GenError::Truth(_) => Failure::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::File(f) => f.into(),
            PipelineError::Store(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<TuneError> for Failure {
    fn from(e: TuneError) -> Self {
        match e {
            TuneError::InvalidRetention(_) => Failure::Usage(e.to_string()),
            TuneError::NoSamples { .. } => Failure::Unreachable(e.to_string()),
            TuneError::TruthMismatch { .. } => Failure::Data(e.to_string()),
            TuneError::File(f) => f.into(),
            TuneError::Pipeline(p) => p.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            e.print().ok();
            return if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };

    let result = match cli.cmd {
        Cmd::Gen {
            config,
            frames,
            out,
            truth,
            seed,
        } => cmd_gen(config.as_deref(), frames, &out, truth.as_deref(), seed),
        Cmd::Tune {
            config,
            truth,
            input,
            retention,
            out,
        } => cmd_tune(config.as_deref(), &truth, &input, retention, &out),
        Cmd::Run {
            config,
            input,
            out,
            report,
            truth,
            workers,
        } => cmd_run(
            config.as_deref(),
            &input,
            out.as_deref(),
            report.as_deref(),
            truth.as_deref(),
            workers,
        ),
        Cmd::Bench {
            config,
            input,
            workers,
            repeat,
        } => cmd_bench(config.as_deref(), &input, &workers, repeat),
        Cmd::Inspect {
            config,
            input,
            frame,
        } => cmd_inspect(config.as_deref(), &input, frame),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.exit(),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn cmd_gen(
    config: Option<&Path>,
    frames: u64,
    out: &Path,
    truth: Option<&Path>,
    seed: u64,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let meta = generate_to_files(
        &cfg.gen,
        &cfg.geometry,
        &PhysicsConstants::default(),
        frames,
        seed,
        cfg.pipeline.chunk_capacity,
        out,
        truth,
    )?;
    println!(
        "wrote {} frames in {} chunks ({} B each) to {}",
        meta.frames,
        meta.chunks,
        meta.capacity,
        out.display()
    );
    if let Some(t) = truth {
        println!("truth sidecar: {}", t.display());
    }
    Ok(())
}

fn cmd_tune(
    config: Option<&Path>,
    truth: &Path,
    input: &Path,
    retention: f64,
    out: &Path,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let truth = read_truth_file(truth)?;
    let (tuned, report) = tune_thresholds(&cfg, input, &truth, retention)?;
    tuned.save(out)?;

    println!(
        "tuned on {} frames: {} truth triplets, {} track and {} vertex chi2 samples",
        report.frames, report.truth_triplets, report.track_chi2_samples, report.vertex_chi2_samples
    );
    println!(
        "achieved retention: triplets {:.4}, tracks {:.4}, vertices {:.4} (target {:.4})",
        report.triplet_retention, report.track_retention, report.vertex_retention, retention
    );
    println!(
        "combination rejection at tuned cuts: {:.4}",
        report.combination_rejection
    );
    println!(
        "thresholds: dlambda<{:.4} cos01>{:.6} cos12>{:.6} rt in [{:.2}, {:.2}] chi2<{:.2} vchi2<={:.2}",
        tuned.cuts.delta_lambda_max,
        tuned.cuts.phi01_min_cos,
        tuned.cuts.phi12_min_cos,
        tuned.cuts.rt_min,
        tuned.cuts.rt_max,
        tuned.fit.chi2_max,
        tuned.vertex.chi2_vertex_max,
    );
    if report.degenerate {
        println!("warning: retention 0 pins every threshold at the sample minimum; expect heavy signal loss");
    }
    println!("tuned config written to {}", out.display());
    Ok(())
}

fn print_report(report: &RunReport) {
    let kept_frac = if report.frames_total > 0 {
        report.frames_kept as f64 / report.frames_total as f64
    } else {
        0.0
    };
    println!("frames            {}", report.frames_total);
    if report.frames_kept > 0 {
        println!(
            "kept              {} ({:.3}%, reduction factor {:.1})",
            report.frames_kept,
            100.0 * kept_frac,
            report.frames_total as f64 / report.frames_kept as f64
        );
    } else {
        println!("kept              0");
    }
    println!(
        "  triplet overflow  {}",
        report.kept_by_reason.triplet_overflow
    );
    println!(
        "  track overflow    {}",
        report.kept_by_reason.track_overflow
    );
    println!(
        "  comb overflow     {}",
        report.kept_by_reason.comb_overflow
    );
    println!("  vertex found      {}", report.kept_by_reason.vertex_found);
    println!("combinations      {}", report.combinations);
    println!("cut survivors     {}", report.cut_survivors);
    println!("tracks            {}", report.tracks);
    println!("vertex triples    {}", report.vertex_triples);
    println!(
        "throughput        {:.1} frames/s ({} workers, {:.3} s wall)",
        report.frames_per_sec, report.workers, report.wall_seconds
    );
    if let Some(t) = &report.truth {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "n/a".into(),
        };
        println!(
            "truth             signal eff {} (raw {}), bg rejection {}, track eff {}",
            fmt(t.signal_efficiency()),
            fmt(t.raw_signal_efficiency()),
            fmt(t.background_rejection()),
            fmt(t.track_efficiency()),
        );
    }
}

fn cmd_run(
    config: Option<&Path>,
    input: &Path,
    out: Option<&Path>,
    report_path: Option<&Path>,
    truth: Option<&Path>,
    workers: Option<usize>,
) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(w) = workers {
        cfg.pipeline.workers = w;
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let truth = truth.map(read_truth_file).transpose()?;
    let report = pipeline::run(&cfg, input, out, truth.as_deref())?;
    print_report(&report);

    if let Some(path) = report_path {
        #[derive(serde::Serialize)]
        struct Provenance<'a> {
            config: &'a RunConfig,
            report: &'a RunReport,
        }
        let text = serde_json::to_string_pretty(&Provenance {
            config: &cfg,
            report: &report,
        })
        .expect("report serialization");
        std::fs::write(path, text).map_err(|e| Failure::Data(e.to_string()))?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_bench(
    config: Option<&Path>,
    input: &Path,
    workers: &str,
    repeat: usize,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let counts: Vec<usize> = workers
        .split(',')
        .map(|w| w.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("invalid worker list {workers:?}")))?;
    if counts.is_empty() || counts.contains(&0) {
        return Err(Failure::Usage("worker counts must be positive".into()));
    }

    let rows = pipeline::bench(&cfg, input, &counts, repeat)?;
    println!("workers   frames    median f/s       min f/s       max f/s");
    for row in &rows {
        println!(
            "{:>7} {:>8} {:>13.1} {:>13.1} {:>13.1}",
            row.workers, row.frames, row.median_fps, row.min_fps, row.max_fps
        );
    }
    Ok(())
}

fn cmd_inspect(config: Option<&Path>, input: &Path, frame: u64) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let consts = PhysicsConstants::default();
    let capacity = pipeline::stream_capacity(&cfg, input)?;
    let chunks = read_chunk_file(input, capacity)?;

    for chunk in &chunks {
        for fr in chunk.iter() {
            if fr.frame_id() != frame {
                continue;
            }

            let layers = fr.layers();
            println!("frame {frame}");
            for (l, hits) in layers.iter().enumerate() {
                println!("  layer {l}: {} hits", hits.len());
            }

            let (decision, _) = pipeline::process_frame(frame, layers, &cfg, &consts);
            println!(
                "  combinations {}, cut survivors {}, tracks {}, vertex triples {}",
                decision.n_combinations,
                decision.n_cut_survivors,
                decision.n_tracks,
                decision.n_triples
            );

            // Re-run the stages to show the accepted tracks and the vertex.
            let hits: [Vec<Vec3<f64>>; NUM_LAYERS] = std::array::from_fn(|l| {
                layers[l]
                    .iter()
                    .map(|h| Vec3::new(h[0] as f64, h[1] as f64, h[2] as f64))
                    .collect()
            });
            let slices: [&[Vec3<f64>]; NUM_LAYERS] = std::array::from_fn(|l| hits[l].as_slice());
            let sel = select_triplets([slices[0], slices[1], slices[2]], &cfg.cuts);
            let mut tracks = Vec::new();
            for cand in &sel.candidates {
                if let Ok(t) = fit_track(cand, slices, &cfg.fit, &cfg.geometry, &consts) {
                    if tracks.len() < cfg.fit.max_tracks {
                        tracks.push(t);
                    }
                }
            }
            for (i, t) in tracks.iter().enumerate() {
                println!(
                    "  track {i}: charge {:+}, pt {:.2} MeV, lambda {:.3}, chi2 {:.2}, hits {:?}",
                    t.charge, t.pt, t.lambda, t.chi2_global, t.hits
                );
            }
            let outcome = evaluate_frame(&tracks, &cfg.vertex, &cfg.geometry, &consts);
            match outcome.best {
                Some(v) => println!(
                    "  best vertex: ({:.2}, {:.2}, {:.2}) mm, chi2 {:.2}",
                    v.position.x, v.position.y, v.position.z, v.chi2
                ),
                None => println!("  best vertex: none"),
            }
            match decision.verdict {
                Verdict::Keep => println!("  verdict: keep ({})", decision.reason),
                Verdict::Discard => println!("  verdict: discard"),
            }
            return Ok(());
        }
    }
    Err(Failure::Usage(format!(
        "frame {frame} not found in {}",
        input.display()
    )))
}
