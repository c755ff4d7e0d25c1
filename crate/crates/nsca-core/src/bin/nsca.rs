//! Command-line front end: synthesize recordings, extract nonstationary
//! components, score estimates, and run SNR robustness sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use nsca_core::error::NscaError;
use nsca_core::evaluation::{generate_mixture, score_component, snr_sweep, MetricReport};
use nsca_core::io::{
    self, EpochsFile, RankingEntry, RankingFile, RecordingFile, RunConfigFile, TruthFile,
    FORMAT_VERSION,
};
use nsca_core::pipeline::run_nsca;

#[derive(Parser)]
#[command(name = "nsca", about = "Nonstationary component analysis for multichannel recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the extraction pipeline on a recording and write components,
    /// demixing matrix, epoch sets, ranking and index traces.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic multichannel recording plus ground truth.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Score estimated components against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
    },
    /// Run the SNR x noise-kind robustness sweep.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    kind: &'a str,
    message: String,
}

#[derive(Serialize)]
struct MetricsFile {
    format_version: u32,
    /// Input channel selected as the best fetal estimate.
    channel: usize,
    metrics: MetricReport,
}

#[derive(Serialize)]
struct SweepSummaryFile<'a> {
    format_version: u32,
    summary: &'a [nsca_core::evaluation::SweepSummaryCell],
}

/// Exit 1 for input/configuration problems, 2 for pipeline failures.
fn exit_code_for(err: &NscaError) -> u8 {
    match err {
        NscaError::Parse(_)
        | NscaError::MissingSamplingRate
        | NscaError::Io(_)
        | NscaError::EmptySignal
        | NscaError::InvalidParameter(_) => 1,
        _ => 2,
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfigFile, NscaError> {
    match path {
        Some(p) => RunConfigFile::read(p),
        None => Ok(RunConfigFile::default()),
    }
}

fn write_trace_csv(path: &Path, traces: &[(usize, Vec<f64>)]) -> Result<(), NscaError> {
    if traces.is_empty() {
        return Ok(());
    }
    let mut out = String::new();
    let header: Vec<String> = traces.iter().map(|(ch, _)| format!("ch{ch}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    let len = traces.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
    for i in 0..len {
        let row: Vec<String> = traces
            .iter()
            .map(|(_, t)| t.get(i).map(|v| format!("{v}")).unwrap_or_default())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn cmd_extract(
    input: &Path,
    config: &Option<PathBuf>,
    out_dir: &Path,
) -> Result<(), NscaError> {
    let cfg = load_config(config)?;
    let pipeline_cfg = cfg.pipeline.to_config()?;
    let rec = io::read_recording(input)?;
    let out = run_nsca(&rec.signal, &pipeline_cfg)?;

    std::fs::create_dir_all(out_dir)?;
    let components = RecordingFile {
        channel_names: (0..out.components.n_channels())
            .map(|i| format!("comp{i}"))
            .collect(),
        signal: out.components.clone(),
    };
    io::write_recording(&out_dir.join("components.csv"), &components)?;
    std::fs::write(out_dir.join("demixing.csv"), io::format_matrix(&out.demixing))?;
    io::write_json(
        &out_dir.join("epochs.json"),
        &EpochsFile::from_sets(&out.epoch_sets_used, rec.signal.fs()),
    )?;
    io::write_json(
        &out_dir.join("ranking.json"),
        &RankingFile {
            format_version: FORMAT_VERSION,
            ranking: out
                .ranking
                .iter()
                .map(|s| RankingEntry { component: s.component, score: s.score })
                .collect(),
        },
    )?;
    let plot_dir = out_dir.join("plotdata");
    std::fs::create_dir_all(&plot_dir)?;
    write_trace_csv(&plot_dir.join("rho.csv"), &out.traces.rho)?;
    write_trace_csv(&plot_dir.join("inn_mean.csv"), &out.traces.inn_mean)?;
    write_trace_csv(&plot_dir.join("inn_var.csv"), &out.traces.inn_var)?;
    write_trace_csv(&plot_dir.join("inn_q.csv"), &out.traces.inn_q)?;
    write_trace_csv(&plot_dir.join("inn_eps.csv"), &out.traces.inn_eps)?;
    Ok(())
}

fn cmd_synth(config: &Option<PathBuf>, out: &Path, truth_path: &Path) -> Result<(), NscaError> {
    let cfg = load_config(config)?;
    let truth = generate_mixture(&cfg.synth.to_config(cfg.seed))?;
    let rec = RecordingFile::with_default_names(truth.observed.clone());
    io::write_recording(out, &rec)?;
    io::write_json(
        truth_path,
        &TruthFile {
            format_version: FORMAT_VERSION,
            fs: truth.observed.fs(),
            mixing: truth
                .mixing
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            fetal_rpeaks: truth.fetal_rpeaks.clone(),
            maternal_rpeaks: truth.maternal_rpeaks.clone(),
        },
    )?;
    Ok(())
}

fn cmd_eval(
    est: &Path,
    truth_path: &Path,
    config: &Option<PathBuf>,
    out: &Path,
) -> Result<(), NscaError> {
    let cfg = load_config(config)?;
    let rec = io::read_recording(est)?;
    let truth = TruthFile::read(truth_path)?;
    // Content-based channel selection: score every channel and keep the best
    // F1 so metrics are invariant to channel order.
    let mut best: Option<(usize, MetricReport)> = None;
    let mut last_err: Option<NscaError> = None;
    for ch in 0..rec.signal.n_channels() {
        let component = rec.signal.data().row(ch).to_vec();
        match score_component(
            &component,
            rec.signal.fs(),
            &truth.fetal_rpeaks,
            cfg.sweep.tol,
            cfg.sweep.fetal_min_rr,
        ) {
            Ok(report) => {
                let better = best
                    .as_ref()
                    .map(|(_, b)| report.f1_percent > b.f1_percent)
                    .unwrap_or(true);
                if better {
                    best = Some((ch, report));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (channel, metrics) =
        best.ok_or_else(|| last_err.unwrap_or(NscaError::NoPeaksFound))?;
    io::write_json(out, &MetricsFile { format_version: FORMAT_VERSION, channel, metrics })?;
    Ok(())
}

fn cmd_sweep(config: &Option<PathBuf>, out: &Path) -> Result<(), NscaError> {
    let cfg = load_config(config)?;
    let report = snr_sweep(&cfg.to_sweep_config()?)?;
    std::fs::write(out, report.to_csv())?;
    let summary_path = out.with_extension("json");
    io::write_json(
        &summary_path,
        &SweepSummaryFile { format_version: FORMAT_VERSION, summary: &report.summary },
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Extract { input, config, out_dir } => cmd_extract(input, config, out_dir),
        Command::Synth { config, out, truth } => cmd_synth(config, out, truth),
        Command::Eval { est, truth, config, out } => cmd_eval(est, truth, config, out),
        Command::Sweep { config, out } => cmd_sweep(config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let json = serde_json::to_string(&ErrorJson {
                kind: err.kind(),
                message: err.to_string(),
            })
            .unwrap_or_else(|_| format!("{{\"kind\":\"{}\"}}", err.kind()));
            eprintln!("{json}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
