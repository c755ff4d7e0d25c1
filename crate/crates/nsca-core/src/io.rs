//! File formats: CSV recordings with an `# fs=` metadata line, strict JSON
//! run configurations, and the epochs/ranking/ground-truth JSON schemas.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ecg::EkfConfig;
use crate::error::{NscaError, Result};
use crate::evaluation::{MixtureConfig, NoiseKind, SweepConfig};
use crate::pipeline::{DetectorKind, PipelineConfig, SeparationMode};
use crate::signal::{EpochSet, MultichannelSignal};

pub const FORMAT_VERSION: u32 = 1;

/// Multichannel CSV: a `# fs=<Hz>` comment line, a header row naming the
/// channels, then one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingFile {
    pub signal: MultichannelSignal,
    pub channel_names: Vec<String>,
}

impl RecordingFile {
    pub fn with_default_names(signal: MultichannelSignal) -> Self {
        let channel_names = (0..signal.n_channels()).map(|i| format!("ch{i}")).collect();
        Self { signal, channel_names }
    }
}

/// Parse a recording from CSV text.
pub fn parse_recording(text: &str) -> Result<RecordingFile> {
    let mut fs: Option<f64> = None;
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("fs=") {
                let parsed: f64 = v
                    .trim()
                    .parse()
                    .map_err(|e| NscaError::Parse(format!("line {}: bad fs: {e}", lineno + 1)))?;
                fs = Some(parsed);
            }
            continue;
        }
        if header.is_none() {
            header = Some(line.split(',').map(|s| s.trim().to_string()).collect());
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| NscaError::Parse(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if vals.iter().any(|v| v.is_nan()) {
            return Err(NscaError::Parse(format!("line {}: NaN sample", lineno + 1)));
        }
        let width = header.as_ref().map(|h| h.len()).unwrap_or(0);
        if vals.len() != width {
            return Err(NscaError::Parse(format!(
                "line {}: expected {} columns, got {}",
                lineno + 1,
                width,
                vals.len()
            )));
        }
        rows.push(vals);
    }
    let fs = fs.ok_or(NscaError::MissingSamplingRate)?;
    let header = header.ok_or_else(|| NscaError::Parse("missing header row".into()))?;
    if rows.is_empty() {
        return Err(NscaError::EmptySignal);
    }
    let n_channels = header.len();
    let n_samples = rows.len();
    let mut data = Array2::zeros((n_channels, n_samples));
    for (t, row) in rows.iter().enumerate() {
        for c in 0..n_channels {
            data[[c, t]] = row[c];
        }
    }
    Ok(RecordingFile {
        signal: MultichannelSignal::new(data, fs)?,
        channel_names: header,
    })
}

/// Serialize a recording to canonical CSV text.
pub fn format_recording(rec: &RecordingFile) -> String {
    let mut out = String::new();
    out.push_str(&format!("# fs={}\n", rec.signal.fs()));
    out.push_str(&rec.channel_names.join(","));
    out.push('\n');
    let data = rec.signal.data();
    for t in 0..rec.signal.n_samples() {
        let row: Vec<String> = (0..rec.signal.n_channels())
            .map(|c| format!("{}", data[[c, t]]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_recording(path: &Path) -> Result<RecordingFile> {
    parse_recording(&fs::read_to_string(path)?)
}

pub fn write_recording(path: &Path, rec: &RecordingFile) -> Result<()> {
    fs::write(path, format_recording(rec))?;
    Ok(())
}

/// Write a plain matrix (e.g. the demixing matrix) as headerless CSV.
pub fn format_matrix(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[[r, c]])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn mode_name(mode: SeparationMode) -> &'static str {
    match mode {
        SeparationMode::GevdSingle => "gevd-single",
        SeparationMode::GevdUnion => "gevd-union",
        SeparationMode::GevdIntersection => "gevd-intersection",
        SeparationMode::Ajd => "ajd",
    }
}

fn parse_mode(s: &str) -> Result<SeparationMode> {
    match s {
        "gevd-single" => Ok(SeparationMode::GevdSingle),
        "gevd-union" => Ok(SeparationMode::GevdUnion),
        "gevd-intersection" => Ok(SeparationMode::GevdIntersection),
        "ajd" => Ok(SeparationMode::Ajd),
        other => Err(NscaError::Parse(format!("unknown mode '{other}'"))),
    }
}

fn parse_detector(s: &str) -> Result<DetectorKind> {
    match s {
        "lpe" => Ok(DetectorKind::Lpe),
        "inn_mean" => Ok(DetectorKind::InnMean),
        "inn_var" => Ok(DetectorKind::InnVar),
        "inn_eps" => Ok(DetectorKind::InnEps),
        "inn_q" => Ok(DetectorKind::InnQ),
        other => Err(NscaError::Parse(format!("unknown detector '{other}'"))),
    }
}

fn parse_noise(s: &str) -> Result<NoiseKind> {
    match s {
        "wgn" => Ok(NoiseKind::Wgn),
        "ngn" => Ok(NoiseKind::Ngn),
        other => Err(NscaError::Parse(format!("unknown noise kind '{other}'"))),
    }
}

/// Strict (unknown keys rejected) JSON mirror of [`EkfConfig`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EkfSection {
    pub q_process: f64,
    pub q_phase: f64,
    pub r_ecg: f64,
    pub r_phase: f64,
    pub kernel_param_noise: f64,
}

impl From<EkfConfig> for EkfSection {
    fn from(c: EkfConfig) -> Self {
        Self {
            q_process: c.q_process,
            q_phase: c.q_phase,
            r_ecg: c.r_ecg,
            r_phase: c.r_phase,
            kernel_param_noise: c.kernel_param_noise,
        }
    }
}

impl From<EkfSection> for EkfConfig {
    fn from(s: EkfSection) -> Self {
        Self {
            q_process: s.q_process,
            q_phase: s.q_phase,
            r_ecg: s.r_ecg,
            r_phase: s.r_phase,
            kernel_param_noise: s.kernel_param_noise,
        }
    }
}

/// Strict JSON mirror of [`PipelineConfig`]. All fields are optional in the
/// file; absent fields take the documented defaults. Window lengths are in
/// seconds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub mode: String,
    pub detectors: Vec<String>,
    pub reference_channel_maternal: usize,
    pub candidate_channel_fetal: Option<usize>,
    pub fetal_lpe_w1: f64,
    pub fetal_lpe_w2: f64,
    pub maternal_lpe_w1: f64,
    pub maternal_lpe_w2: f64,
    pub maternal_dilation: f64,
    pub w_a: f64,
    pub w_var: f64,
    pub w_r: f64,
    pub mean_removal_w: f64,
    pub max_lag: Option<usize>,
    pub threshold_sigmas: f64,
    pub min_rr: f64,
    pub n_bins: usize,
    pub n_gaussians: usize,
    pub min_channel_votes: usize,
    pub max_epoch_run: Option<f64>,
    pub burst_window: f64,
    pub burst_power_ratio: Option<f64>,
    pub noise_weighting: bool,
    pub adaptive_normalization: bool,
    pub channel_leveling: bool,
    pub ekf: Option<EkfSection>,
    pub causal: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        (&PipelineConfig::default()).into()
    }
}

impl From<&PipelineConfig> for PipelineSection {
    fn from(c: &PipelineConfig) -> Self {
        Self {
            mode: mode_name(c.mode).to_string(),
            detectors: c.detector_selection.iter().map(|d| d.name().to_string()).collect(),
            reference_channel_maternal: c.reference_channel_maternal,
            candidate_channel_fetal: c.candidate_channel_fetal,
            fetal_lpe_w1: c.fetal_lpe_w1,
            fetal_lpe_w2: c.fetal_lpe_w2,
            maternal_lpe_w1: c.maternal_lpe_w1,
            maternal_lpe_w2: c.maternal_lpe_w2,
            maternal_dilation: c.maternal_dilation,
            w_a: c.w_a,
            w_var: c.w_var,
            w_r: c.w_r,
            mean_removal_w: c.mean_removal_w,
            max_lag: c.max_lag,
            threshold_sigmas: c.threshold_sigmas,
            min_rr: c.min_rr,
            n_bins: c.n_bins,
            n_gaussians: c.n_gaussians,
            min_channel_votes: c.min_channel_votes,
            max_epoch_run: c.max_epoch_run,
            burst_window: c.burst_window,
            burst_power_ratio: c.burst_power_ratio,
            noise_weighting: c.noise_weighting,
            adaptive_normalization: c.adaptive_normalization,
            channel_leveling: c.channel_leveling,
            ekf: c.ekf.map(EkfSection::from),
            causal: c.causal,
        }
    }
}

impl PipelineSection {
    pub fn to_config(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            mode: parse_mode(&self.mode)?,
            detector_selection: self
                .detectors
                .iter()
                .map(|d| parse_detector(d))
                .collect::<Result<_>>()?,
            reference_channel_maternal: self.reference_channel_maternal,
            candidate_channel_fetal: self.candidate_channel_fetal,
            fetal_lpe_w1: self.fetal_lpe_w1,
            fetal_lpe_w2: self.fetal_lpe_w2,
            maternal_lpe_w1: self.maternal_lpe_w1,
            maternal_lpe_w2: self.maternal_lpe_w2,
            maternal_dilation: self.maternal_dilation,
            w_a: self.w_a,
            w_var: self.w_var,
            w_r: self.w_r,
            mean_removal_w: self.mean_removal_w,
            max_lag: self.max_lag,
            threshold_sigmas: self.threshold_sigmas,
            min_rr: self.min_rr,
            n_bins: self.n_bins,
            n_gaussians: self.n_gaussians,
            min_channel_votes: self.min_channel_votes,
            max_epoch_run: self.max_epoch_run,
            burst_window: self.burst_window,
            burst_power_ratio: self.burst_power_ratio,
            noise_weighting: self.noise_weighting,
            adaptive_normalization: self.adaptive_normalization,
            channel_leveling: self.channel_leveling,
            ekf: self.ekf.clone().map(EkfConfig::from),
            causal: self.causal,
        })
    }
}

/// Strict JSON mirror of [`MixtureConfig`] (kernel sets keep their built-in
/// defaults; override via the library API if needed).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub maternal_hr: Vec<f64>,
    pub fetal_hr: Vec<f64>,
    pub n_channels: usize,
    pub fs: f64,
    pub duration: f64,
    pub fetal_power_db: f64,
    pub noise_power_db: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let c = MixtureConfig::default();
        Self {
            maternal_hr: c.maternal_hr,
            fetal_hr: c.fetal_hr,
            n_channels: c.n_channels,
            fs: c.fs,
            duration: c.duration,
            fetal_power_db: c.fetal_power_db,
            noise_power_db: c.noise_power_db,
        }
    }
}

impl SynthSection {
    pub fn to_config(&self, seed: u64) -> MixtureConfig {
        MixtureConfig {
            maternal_hr: self.maternal_hr.clone(),
            fetal_hr: self.fetal_hr.clone(),
            n_channels: self.n_channels,
            fs: self.fs,
            duration: self.duration,
            fetal_power_db: self.fetal_power_db,
            noise_power_db: self.noise_power_db,
            seed,
            ..MixtureConfig::default()
        }
    }
}

/// Sweep settings: SNR grid, noise kinds and trial count.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub snr_list: Vec<f64>,
    pub noise_kinds: Vec<String>,
    pub n_trials: usize,
    pub tol: f64,
    pub fetal_min_rr: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let c = SweepConfig::default();
        Self {
            snr_list: c.snr_list,
            noise_kinds: c.noise_kinds.iter().map(|k| k.name().to_string()).collect(),
            n_trials: c.n_trials,
            tol: c.tol,
            fetal_min_rr: c.fetal_min_rr,
        }
    }
}

/// Top-level run configuration document shared by all CLI commands.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub format_version: u32,
    pub seed: u64,
    pub pipeline: PipelineSection,
    pub synth: SynthSection,
    pub sweep: SweepSection,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            seed: 0,
            pipeline: PipelineSection::default(),
            synth: SynthSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| NscaError::Parse(format!("config: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_sweep_config(&self) -> Result<SweepConfig> {
        Ok(SweepConfig {
            mixture: self.synth.to_config(self.seed),
            pipeline: self.pipeline.to_config()?,
            snr_list: self.sweep.snr_list.clone(),
            noise_kinds: self
                .sweep
                .noise_kinds
                .iter()
                .map(|k| parse_noise(k))
                .collect::<Result<_>>()?,
            n_trials: self.sweep.n_trials,
            tol: self.sweep.tol,
            fetal_min_rr: self.sweep.fetal_min_rr,
            seed: self.seed,
        })
    }
}

/// Half-open interval of an epoch run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NamedIntervals {
    pub name: String,
    pub intervals: Vec<Interval>,
}

/// JSON schema for named epoch sets: interval lists over a shared horizon.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochsFile {
    pub format_version: u32,
    pub fs: f64,
    pub horizon: usize,
    pub sets: Vec<NamedIntervals>,
}

impl EpochsFile {
    pub fn from_sets(sets: &[(String, EpochSet)], fs: f64) -> Self {
        let horizon = sets.first().map(|(_, s)| s.horizon()).unwrap_or(0);
        Self {
            format_version: FORMAT_VERSION,
            fs,
            horizon,
            sets: sets
                .iter()
                .map(|(name, s)| NamedIntervals {
                    name: name.clone(),
                    intervals: s
                        .runs()
                        .iter()
                        .map(|&(start, end)| Interval { start, end })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_sets(&self) -> Result<Vec<(String, EpochSet)>> {
        self.sets
            .iter()
            .map(|ni| {
                let runs: Vec<(usize, usize)> =
                    ni.intervals.iter().map(|i| (i.start, i.end)).collect();
                Ok((ni.name.clone(), EpochSet::from_runs(runs, self.horizon)?))
            })
            .collect()
    }
}

/// Ground-truth JSON emitted next to synthetic recordings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TruthFile {
    pub format_version: u32,
    pub fs: f64,
    pub mixing: Vec<Vec<f64>>,
    pub fetal_rpeaks: Vec<usize>,
    pub maternal_rpeaks: Vec<usize>,
}

impl TruthFile {
    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| NscaError::Parse(format!("truth: {e}")))
    }
}

/// Component ranking JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankingFile {
    pub format_version: u32,
    pub ranking: Vec<RankingEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankingEntry {
    pub component: usize,
    pub score: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| NscaError::Parse(format!("serialize: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recording_round_trip_byte_identical() {
        let sig = MultichannelSignal::from_channels(
            &[vec![0.25, -1.5, 3.125], vec![0.1, 0.2, 0.3]],
            500.0,
        )
        .unwrap();
        let rec = RecordingFile::with_default_names(sig);
        let text = format_recording(&rec);
        let back = parse_recording(&text).unwrap();
        assert_eq!(back, rec);
        assert_eq!(format_recording(&back), text);
    }

    #[test]
    fn recording_missing_fs() {
        let text = "a,b\n1,2\n3,4\n";
        assert!(matches!(
            parse_recording(text),
            Err(NscaError::MissingSamplingRate)
        ));
    }

    #[test]
    fn recording_rejects_nan() {
        let text = "# fs=100\na,b\n1,NaN\n";
        assert!(matches!(parse_recording(text), Err(NscaError::Parse(_))));
    }

    #[test]
    fn recording_rejects_ragged_rows() {
        let text = "# fs=100\na,b\n1,2\n3\n";
        assert!(matches!(parse_recording(text), Err(NscaError::Parse(_))));
    }

    #[test]
    fn config_defaults_round_trip() {
        let cfg = RunConfigFile::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfigFile::parse(&text).unwrap();
        assert_eq!(back, cfg);
        // documented defaults
        assert_eq!(back.pipeline.fetal_lpe_w1, 0.010);
        assert_eq!(back.pipeline.fetal_lpe_w2, 0.200);
        assert_eq!(back.pipeline.maternal_lpe_w1, 0.020);
        assert_eq!(back.pipeline.maternal_lpe_w2, 0.400);
        assert_eq!(back.pipeline.maternal_dilation, 0.015);
        assert_eq!(back.pipeline.w_a, 0.010);
        assert_eq!(back.pipeline.w_var, 0.010);
        assert_eq!(back.pipeline.w_r, 0.020);
        assert_eq!(back.pipeline.mean_removal_w, 0.050);
        assert_eq!(back.pipeline.threshold_sigmas, 3.0);
        assert_eq!(back.sweep.snr_list, vec![-5.0, 0.0, 5.0, 10.0, 15.0]);
        assert_eq!(back.sweep.tol, 0.050);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let text = r#"{"pipeline": {"w_q": 0.01}}"#;
        assert!(matches!(RunConfigFile::parse(text), Err(NscaError::Parse(_))));
        let text = r#"{"not_a_key": 1}"#;
        assert!(matches!(RunConfigFile::parse(text), Err(NscaError::Parse(_))));
    }

    #[test]
    fn config_partial_overrides() {
        let text = r#"{"seed": 7, "pipeline": {"mode": "ajd", "detectors": ["lpe", "inn_var"]}}"#;
        let cfg = RunConfigFile::parse(text).unwrap();
        assert_eq!(cfg.seed, 7);
        let pc = cfg.pipeline.to_config().unwrap();
        assert_eq!(pc.mode, SeparationMode::Ajd);
        assert_eq!(pc.detector_selection, vec![DetectorKind::Lpe, DetectorKind::InnVar]);
        assert_eq!(pc.w_a, 0.010); // untouched default
    }

    #[test]
    fn epochs_file_round_trip() {
        let sets = vec![
            (
                "lpe".to_string(),
                EpochSet::from_runs(vec![(2, 5), (10, 11)], 20).unwrap(),
            ),
            ("fused".to_string(), EpochSet::empty(20)),
        ];
        let file = EpochsFile::from_sets(&sets, 500.0);
        let text = serde_json::to_string(&file).unwrap();
        let back: EpochsFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_sets().unwrap(), sets);
    }

    #[test]
    fn matrix_format_parses_back() {
        let m = ndarray::array![[1.5, -2.0], [0.0, 0.125]];
        let text = format_matrix(&m);
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows, vec![vec![1.5, -2.0], vec![0.0, 0.125]]);
    }
}
