//! End-to-end orchestration: maternal R-peaks, beat model, per-channel EKF,
//! nonstationarity detectors, epoch fusion, targeted covariances, and the
//! GEVD/AJD separation stage.

use ndarray::Array2;

use crate::detectors::{
    innovation_mean_index, innovation_variance_index, innovation_whiteness_index, lpe_index,
    population_std, sliding_mean, threshold_abs, threshold_band, LpeConfig, VarianceIndexConfig,
    WhitenessIndexConfig,
};
use crate::ecg::{
    average_beat, detect_rpeaks_lpd, ekf_mecg, fit_gaussian_kernels, phase_from_rpeaks,
    EkfConfig, Polarity,
};
use crate::eig::{ajd, apply_transform, gevd};
use crate::error::{NscaError, Result};
use crate::fusion::{dilate, exclude, intersection, union, vote, LabeledEpochs};
use crate::signal::{covariance_full, covariance_on_epochs, EpochSet, MultichannelSignal};
use crate::SymmetricMatrix;

/// How the targeted covariances are combined in the separation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparationMode {
    /// GEVD against the epoch set of the first selected detector.
    GevdSingle,
    /// GEVD against the union of all selected detectors' epoch sets.
    GevdUnion,
    /// GEVD against the intersection of all selected detectors' epoch sets.
    GevdIntersection,
    /// Approximate joint diagonalization of the whole-record covariance plus
    /// one covariance per selected detector.
    Ajd,
}

/// The five nonstationarity indexes available for epoch detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    /// Local power envelope of the raw candidate channel.
    Lpe,
    /// Sliding mean of the EKF innovation.
    InnMean,
    /// Normalized sliding variance of the EKF innovation.
    InnVar,
    /// Spectral-color decay constant of the innovation autocovariance.
    InnEps,
    /// Spectral-color magnitude of the innovation autocovariance.
    InnQ,
}

impl DetectorKind {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::Lpe => "lpe",
            DetectorKind::InnMean => "inn_mean",
            DetectorKind::InnVar => "inn_var",
            DetectorKind::InnEps => "inn_eps",
            DetectorKind::InnQ => "inn_q",
        }
    }
}

/// Full pipeline configuration. Window lengths are in seconds; thresholds are
/// derived from each index trace by the `threshold_sigmas * std` rule.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: SeparationMode,
    pub detector_selection: Vec<DetectorKind>,
    /// Channel carrying a clean maternal ECG for R-peak detection.
    pub reference_channel_maternal: usize,
    /// Channel whose nonstationarities are of interest; `None` runs the
    /// detectors on every channel and unions the epochs per detector.
    pub candidate_channel_fetal: Option<usize>,
    /// Short/long LPE windows for the candidate (fetal) channel, seconds.
    pub fetal_lpe_w1: f64,
    pub fetal_lpe_w2: f64,
    /// Short/long LPE windows used to locate maternal QRS epochs, seconds.
    pub maternal_lpe_w1: f64,
    pub maternal_lpe_w2: f64,
    /// Dilation applied to maternal epochs before exclusion, seconds/side.
    pub maternal_dilation: f64,
    /// Innovation mean window, seconds.
    pub w_a: f64,
    /// Innovation variance window, seconds.
    pub w_var: f64,
    /// Innovation autocovariance window, seconds.
    pub w_r: f64,
    /// Mean-removal window for the variance and whiteness indexes, seconds.
    pub mean_removal_w: f64,
    /// Maximum autocovariance lag in samples; `None` adapts to the window.
    pub max_lag: Option<usize>,
    /// Multiplier of the index-trace standard deviation in the automatic
    /// threshold rule.
    pub threshold_sigmas: f64,
    /// Minimum maternal R-R interval, seconds.
    pub min_rr: f64,
    /// Phase bins of the synchronous average beat.
    pub n_bins: usize,
    /// Gaussian kernels fitted to the average beat.
    pub n_gaussians: usize,
    /// Channels that must flag a sample before a detector keeps it (1 =
    /// plain cross-channel union). Source events appear simultaneously in
    /// every channel of an instantaneous mixture while channel-local noise
    /// bursts do not, so a quorum of 2 suppresses independent noise.
    pub min_channel_votes: usize,
    /// Maximum duration of a single epoch run in seconds; longer runs are
    /// sustained background-variance shifts rather than the impulsive
    /// QRS-like events being targeted and are dropped from the fetal sets.
    /// `None` disables the cap.
    pub max_epoch_run: Option<f64>,
    /// Window (seconds) for the local innovation-power trace used to locate
    /// sustained background-noise bursts.
    pub burst_window: f64,
    /// Samples whose local innovation power exceeds this multiple of the
    /// channel's median are treated as noise bursts and excluded from the
    /// fetal epoch sets: epochs flagged inside a burst are dominated by the
    /// elevated background rather than source activity. Under stationary
    /// noise the local power never strays this far from its median, so the
    /// exclusion set is empty and behavior is unchanged. `None` disables it.
    pub burst_power_ratio: Option<f64>,
    /// Weight covariance estimates by the inverse of the local background
    /// power (a generalized-least-squares estimate for heteroscedastic
    /// noise). Samples inside noise bursts then contribute in proportion to
    /// their information content rather than their energy; under stationary
    /// noise the weights are uniform and the estimates are unchanged.
    pub noise_weighting: bool,
    /// Normalize each innovation trace by its local background level (over
    /// `burst_window`) before the index computations, a constant-false-alarm
    /// -rate detector front end: transient events compete against the local
    /// noise floor instead of a global one, so quiet intervals keep their
    /// full detection sensitivity when the background level wanders. Under
    /// stationary noise the local level is flat and the traces are unchanged.
    pub adaptive_normalization: bool,
    /// Divide each channel by its local background level (estimated from
    /// that channel's EKF innovation) before the covariance and separation
    /// stage, so channel-local noise bursts cannot masquerade as targeted
    /// nonstationarity. Under stationary noise the level is flat and the
    /// signal is unchanged.
    pub channel_leveling: bool,
    /// Fixed EKF noise levels; `None` calibrates them from the beat
    /// statistics of each channel.
    pub ekf: Option<EkfConfig>,
    /// Use causal (trailing) windows in all detector indexes.
    pub causal: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: SeparationMode::GevdUnion,
            detector_selection: vec![
                DetectorKind::Lpe,
                DetectorKind::InnMean,
                DetectorKind::InnVar,
            ],
            reference_channel_maternal: 0,
            candidate_channel_fetal: None,
            fetal_lpe_w1: 0.010,
            fetal_lpe_w2: 0.200,
            maternal_lpe_w1: 0.020,
            maternal_lpe_w2: 0.400,
            maternal_dilation: 0.015,
            w_a: 0.010,
            w_var: 0.010,
            w_r: 0.020,
            mean_removal_w: 0.050,
            max_lag: None,
            threshold_sigmas: 3.0,
            min_rr: 0.4,
            n_bins: 250,
            n_gaussians: 7,
            min_channel_votes: 1,
            max_epoch_run: Some(0.200),
            burst_window: 1.0,
            burst_power_ratio: Some(3.0),
            noise_weighting: true,
            adaptive_normalization: true,
            channel_leveling: true,
            ekf: None,
            causal: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, n_channels: usize) -> Result<()> {
        if self.detector_selection.is_empty() {
            return Err(NscaError::InvalidParameter(
                "detector selection is empty".into(),
            ));
        }
        if self.reference_channel_maternal >= n_channels {
            return Err(NscaError::InvalidParameter(format!(
                "maternal reference channel {} outside 0..{}",
                self.reference_channel_maternal, n_channels
            )));
        }
        if let Some(c) = self.candidate_channel_fetal {
            if c >= n_channels {
                return Err(NscaError::InvalidParameter(format!(
                    "fetal candidate channel {c} outside 0..{n_channels}"
                )));
            }
        }
        if self.mode == SeparationMode::Ajd && self.detector_selection.len() < 2 {
            return Err(NscaError::InvalidParameter(
                "AJD mode needs at least 2 detectors (covariance matrices)".into(),
            ));
        }
        if !(self.threshold_sigmas > 0.0) {
            return Err(NscaError::InvalidParameter(
                "threshold_sigmas must be positive".into(),
            ));
        }
        if self.min_channel_votes == 0 {
            return Err(NscaError::InvalidParameter(
                "min_channel_votes must be at least 1".into(),
            ));
        }
        if !(self.burst_window > 0.0) {
            return Err(NscaError::InvalidParameter(
                "burst_window must be positive".into(),
            ));
        }
        if let Some(r) = self.burst_power_ratio {
            if !(r > 1.0) {
                return Err(NscaError::InvalidParameter(
                    "burst_power_ratio must exceed 1".into(),
                ));
            }
        }
        Ok(())
    }

    fn max_lag_samples(&self, fs: f64) -> usize {
        match self.max_lag {
            Some(l) => l,
            None => {
                let w_r = (self.w_r * fs).round() as usize;
                (w_r / 2).max(2)
            }
        }
    }
}

/// Per-channel index traces retained for inspection and plot export.
#[derive(Debug, Clone, Default)]
pub struct DetectorTraces {
    /// (channel, trace) pairs; only candidate channels are present.
    pub rho: Vec<(usize, Vec<f64>)>,
    pub inn_mean: Vec<(usize, Vec<f64>)>,
    pub inn_var: Vec<(usize, Vec<f64>)>,
    pub inn_q: Vec<(usize, Vec<f64>)>,
    pub inn_eps: Vec<(usize, Vec<f64>)>,
}

/// Detector stage output: per-detector epoch sets (after maternal exclusion)
/// plus the supporting sets and traces.
#[derive(Debug, Clone)]
pub struct FetalEpochs {
    /// One channel-union epoch set per selected detector, maternal epochs
    /// excluded.
    pub per_detector: Vec<(String, EpochSet)>,
    /// Dilated maternal-QRS epoch set from the reference channel.
    pub maternal: EpochSet,
    /// Union of the per-detector sets.
    pub fused: EpochSet,
    pub traces: DetectorTraces,
}

#[derive(Debug, Clone)]
pub struct ComponentScore {
    pub component: usize,
    pub score: f64,
}

/// Separation result: components in demixing order with the epoch sets and
/// ranking that produced them.
#[derive(Debug, Clone)]
pub struct SeparationOutput {
    pub components: MultichannelSignal,
    /// Demixing matrix W with y = W^T x; column i produces component i.
    pub demixing: Array2<f64>,
    pub epoch_sets_used: Vec<(String, EpochSet)>,
    /// Components ordered most-target-like first.
    pub ranking: Vec<ComponentScore>,
    /// Generalized eigenvalues (descending, aligned with components) in GEVD
    /// modes.
    pub eigenvalues: Option<Vec<f64>>,
    /// Set when the targeted epoch set was smaller than 3x the channel count
    /// and the separation proceeded on thin statistics.
    pub insufficient_statistics: bool,
    pub traces: DetectorTraces,
    /// Maternal R-peak indexes detected on the reference channel.
    pub maternal_rpeaks: Vec<usize>,
}

/// Upper bound applied to rank scores when a component has no energy outside
/// the epoch set.
const SCORE_CAP: f64 = 1e15;

/// Score components by their energy ratio inside vs outside the epoch set and
/// order them descending (ties broken by channel index).
pub fn rank_components(y: &MultichannelSignal, epochs: &EpochSet) -> Result<Vec<ComponentScore>> {
    if epochs.is_empty() {
        return Err(NscaError::EmptyEpochSet);
    }
    if epochs.horizon() != y.n_samples() {
        return Err(NscaError::HorizonMismatch(epochs.horizon(), y.n_samples()));
    }
    let n_in = epochs.len() as f64;
    let n_total = y.n_samples() as f64;
    let mut scores: Vec<ComponentScore> = (0..y.n_channels())
        .map(|c| {
            let ch = y.channel(c);
            let mut inside = 0.0;
            for t in epochs.iter() {
                inside += ch[t] * ch[t];
            }
            let total: f64 = ch.iter().map(|v| v * v).sum();
            let p_in = inside / n_in;
            let p_all = total / n_total;
            let score = if p_all <= 0.0 {
                0.0
            } else {
                (p_in / p_all).min(SCORE_CAP)
            };
            ComponentScore { component: c, score }
        })
        .collect();
    scores.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.component.cmp(&b.component))
    });
    Ok(scores)
}

// Threshold an index trace at mean + sigmas * std, never below `floor`.
fn auto_upper(trace: &[f64], sigmas: f64, floor: f64) -> f64 {
    let finite: Vec<f64> = trace.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return floor;
    }
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    (mean + sigmas * population_std(trace)).max(floor)
}

struct EkfStage {
    innovations: Vec<Option<crate::detectors::InnovationTrace>>,
    maternal_rpeaks: Vec<usize>,
    /// Channel the maternal R-peaks were taken from (the configured
    /// reference, unless its beat sequence was implausible).
    reference_channel: usize,
}

/// RR-interval coefficient of variation above which a channel's R-peak
/// sequence is considered implausible for a maternal reference.
const REFERENCE_CV_LIMIT: f64 = 0.15;

fn rr_cv(peaks: &[usize]) -> f64 {
    if peaks.len() < 4 {
        return f64::INFINITY;
    }
    let rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let mean = rr.iter().sum::<f64>() / rr.len() as f64;
    let var = rr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rr.len() as f64;
    var.sqrt() / mean
}

fn median_rr(peaks: &[usize]) -> Option<f64> {
    if peaks.len() < 4 {
        return None;
    }
    let mut rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    rr.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(rr[rr.len() / 2])
}

/// Maternal R-peak source: the configured reference channel, validated by a
/// cross-channel consensus. The maternal source dominates the mixture, so
/// most channels detect beats at the maternal rate; a channel that locks
/// onto a different rhythm (e.g. the fetal one when the mixing leaves it
/// almost maternal-free) is rejected in favor of the most regular channel in
/// the majority-rate group.
fn select_maternal_reference(
    x: &MultichannelSignal,
    cfg: &PipelineConfig,
) -> Result<(usize, Vec<usize>)> {
    let fs = x.fs();
    let configured = cfg.reference_channel_maternal;
    // (channel, peaks, cv, median rr)
    let mut cands: Vec<(usize, Vec<usize>, f64, f64)> = Vec::new();
    for ch in 0..x.n_channels() {
        let mut s: Vec<f64> = x.channel(ch).to_vec();
        if cfg.adaptive_normalization {
            // suppress spurious peaks inside background-noise bursts by
            // leveling the local background before detection
            s = normalize_samples(&s, cfg.burst_window, fs);
        }
        let Ok(peaks) = detect_rpeaks_lpd(&s, fs, cfg.min_rr, Polarity::Auto) else {
            continue;
        };
        let cv = rr_cv(&peaks);
        if let Some(rr) = median_rr(&peaks) {
            cands.push((ch, peaks, cv, rr));
        }
    }
    if cands.is_empty() {
        return Err(NscaError::NoPeaksFound);
    }
    // majority-rate group: channels whose median RR agrees within 10%
    let support = |rr: f64| -> usize {
        cands.iter().filter(|(_, _, _, r)| (r - rr).abs() <= 0.1 * rr).count()
    };
    let max_support = cands.iter().map(|&(_, _, _, rr)| support(rr)).max().unwrap();
    let in_majority: Vec<&(usize, Vec<usize>, f64, f64)> = cands
        .iter()
        .filter(|&&(_, _, _, rr)| support(rr) == max_support)
        .collect();
    if let Some(c) = in_majority
        .iter()
        .find(|&&&(ch, _, cv, _)| ch == configured && cv <= REFERENCE_CV_LIMIT)
    {
        return Ok((c.0, c.1.clone()));
    }
    let best = in_majority
        .iter()
        .min_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
        .unwrap();
    Ok((best.0, best.1.clone()))
}

fn needs_ekf(cfg: &PipelineConfig) -> bool {
    cfg.detector_selection.iter().any(|d| {
        matches!(
            d,
            DetectorKind::InnMean | DetectorKind::InnVar | DetectorKind::InnEps | DetectorKind::InnQ
        )
    })
}

fn candidate_channels(x: &MultichannelSignal, cfg: &PipelineConfig) -> Vec<usize> {
    match cfg.candidate_channel_fetal {
        Some(c) => vec![c],
        None => (0..x.n_channels()).collect(),
    }
}

// Steps 1-4: maternal R-peaks on the reference channel, per-channel beat
// model and EKF innovation.
fn run_ekf_stage(x: &MultichannelSignal, cfg: &PipelineConfig) -> Result<EkfStage> {
    let fs = x.fs();
    let (reference_channel, rpeaks) = select_maternal_reference(x, cfg)?;
    let mut innovations = vec![None; x.n_channels()];
    if needs_ekf(cfg) {
        if rpeaks.len() < 4 {
            return Err(NscaError::TooFewPeaks { needed: 4, got: rpeaks.len() });
        }
        let phase = phase_from_rpeaks(&rpeaks, x.n_samples(), fs)?;
        for ch in candidate_channels(x, cfg) {
            let s: Vec<f64> = x.channel(ch).to_vec();
            let beat = average_beat(&s, &rpeaks, cfg.n_bins)?;
            let fit = fit_gaussian_kernels(&beat.mean_beat, cfg.n_gaussians)?;
            let ekf_cfg = match cfg.ekf {
                Some(c) => c,
                None => EkfConfig::from_beat_stats(&s, &phase, &beat)?,
            };
            let out = ekf_mecg(&s, &phase, &fit.kernels, &ekf_cfg)?;
            innovations[ch] = Some(out.innovation);
        }
    }
    Ok(EkfStage { innovations, maternal_rpeaks: rpeaks, reference_channel })
}

/// Step 5: run the selected detectors over the candidate channels, union the
/// epochs per detector, and remove the dilated maternal-QRS epochs.
pub fn build_fetal_epochs(x: &MultichannelSignal, cfg: &PipelineConfig) -> Result<FetalEpochs> {
    cfg.validate(x.n_channels())?;
    let stage = run_ekf_stage(x, cfg)?;
    build_fetal_epochs_from_stage(x, cfg, &stage)
}

/// Robust local background power of a trace: the squared, consistency-scaled
/// sliding median of |v| over `w` samples, evaluated every `w/8` samples and
/// linearly interpolated in between. A median ignores sparse transients (a
/// QRS complex occupies a few percent of a one-second window), so the
/// estimate follows the background noise level rather than the events
/// riding on it.
fn local_background_power(values: &[f64], w: usize) -> Vec<f64> {
    let n = values.len();
    let stride = (w / 8).max(1);
    let half = w / 2;
    let mut centers: Vec<usize> = (0..n).step_by(stride).collect();
    if *centers.last().unwrap() != n - 1 {
        centers.push(n - 1);
    }
    let mut coarse = Vec::with_capacity(centers.len());
    let mut buf: Vec<f64> = Vec::with_capacity(w + 1);
    for &c in &centers {
        let lo = c.saturating_sub(half);
        let hi = (c + half + 1).min(n);
        buf.clear();
        buf.extend(values[lo..hi].iter().map(|v| v.abs()));
        let mid = buf.len() / 2;
        buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        // median(|v|) = 0.6745 sigma for Gaussian backgrounds
        let sigma = buf[mid] / 0.6745;
        coarse.push(sigma * sigma);
    }
    let mut out = vec![0.0; n];
    for k in 0..centers.len() - 1 {
        let (a, b) = (centers[k], centers[k + 1]);
        let (pa, pb) = (coarse[k], coarse[k + 1]);
        for t in a..=b {
            let frac = if b > a { (t - a) as f64 / (b - a) as f64 } else { 0.0 };
            out[t] = pa + frac * (pb - pa);
        }
    }
    out
}

/// Local background level of `values`, with a `signal` offset that freezes
/// any derived gain wherever genuine signal dominates the background.
struct BackgroundLevel {
    power: Vec<f64>,
    median: f64,
    /// Mean power of `reference` in excess of the background; gains built
    /// as `(signal + power) / (signal + median)` stay near 1 whenever this
    /// dwarfs the background fluctuations.
    signal: f64,
}

impl BackgroundLevel {
    /// `reference_power` is the mean square of the sequence whose structure
    /// the caller wants to preserve (the trace itself, or the channel the
    /// trace was derived from). Returns `None` for an all-zero background.
    fn estimate(values: &[f64], reference_power: f64, w: usize) -> Option<Self> {
        let power = local_background_power(values, w);
        let mut sorted = power.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let median = sorted[sorted.len() / 2];
        if !(median > 0.0) {
            return None;
        }
        let background = power.iter().sum::<f64>() / power.len() as f64;
        let signal = (reference_power - background).max(0.0);
        Some(Self { power, median, signal })
    }

    /// Relative local level `(signal + power) / (signal + median)`, floored
    /// at 1/4 so quiet stretches are amplified at most 2x in amplitude.
    fn gain(&self, t: usize) -> f64 {
        ((self.signal + self.power[t]) / (self.signal + self.median)).max(0.25)
    }
}

fn mean_power(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64
}

/// Divide a sample sequence by its local background level so transient
/// events compete against the local noise floor rather than a global one: a
/// constant-false-alarm-rate front end for the peak and index detectors.
/// Unlike the separation-stage leveling, no signal term damps the gain —
/// detection wants full sensitivity to the background wherever it wanders.
/// Under stationary noise the level is flat and the sequence is returned
/// essentially unchanged.
fn normalize_samples(s: &[f64], window: f64, fs: f64) -> Vec<f64> {
    let w = ((window * fs).round() as usize).max(1);
    let sq: Vec<f64> = s.iter().map(|v| v * v).collect();
    let power = sliding_mean(&sq, w, false);
    let mut sorted = power.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[sorted.len() / 2];
    if !(median > 0.0) {
        return s.to_vec();
    }
    s.iter()
        .zip(&power)
        .map(|(&v, &p)| v / (p / median).max(0.25).sqrt())
        .collect()
}

/// Attenuate background-noise bursts channel by channel before the
/// separation stage: each channel is divided by its local background level,
/// estimated from its EKF innovation (the innovation tracks the noise once
/// the maternal ECG is removed, so the leveling does not follow the beat
/// rhythm). Channel-local bursts inflate that channel's variance inside the
/// targeted epochs in a way no whole-vector weighting can counter; leveling
/// restores a near-stationary background so the targeted covariances see the
/// sources. Channels without an innovation fall back to their own local
/// power. Wherever the signal dominates the background — and everywhere
/// under stationary noise — the gain is ~1 and the channel is unchanged.
fn level_channels(
    x: &MultichannelSignal,
    stage: &EkfStage,
    window: f64,
) -> Result<MultichannelSignal> {
    let fs = x.fs();
    let w = ((window * fs).round() as usize).max(1);
    let mut chans = Vec::with_capacity(x.n_channels());
    for ch in 0..x.n_channels() {
        let s: Vec<f64> = x.channel(ch).to_vec();
        let basis: &[f64] = match stage.innovations[ch].as_ref() {
            Some(tr) => &tr.values,
            None => &s,
        };
        match BackgroundLevel::estimate(basis, mean_power(&s), w) {
            Some(level) => chans.push(
                s.iter()
                    .enumerate()
                    .map(|(t, &v)| v / level.gain(t).sqrt())
                    .collect(),
            ),
            None => chans.push(s),
        }
    }
    MultichannelSignal::from_channels(&chans, fs)
}

fn normalize_trace(
    trace: &crate::detectors::InnovationTrace,
    window: f64,
    fs: f64,
) -> crate::detectors::InnovationTrace {
    crate::detectors::InnovationTrace::new(
        normalize_samples(&trace.values, window, fs),
        trace.predicted_variance.clone(),
    )
    .expect("lengths preserved and predicted variance unchanged")
}

/// Locate sustained background-noise bursts: intervals where a channel's
/// local total power (its retained signal power plus the local innovation
/// power over `window` seconds) exceeds `ratio` times its typical value.
/// The EKF removes the maternal ECG, so the innovation's long-window power
/// tracks the background noise level; comparing totals rather than raw
/// noise levels keeps the set empty whenever the signal dominates, and
/// under stationary noise the trace never strays from its median at all.
fn burst_epochs(
    x: &MultichannelSignal,
    stage: &EkfStage,
    channels: &[usize],
    window: f64,
    ratio: f64,
) -> Result<EpochSet> {
    let fs = x.fs();
    let n = x.n_samples();
    let w = ((window * fs).round() as usize).max(1);
    let mut sets = Vec::new();
    for &ch in channels {
        let Some(trace) = stage.innovations[ch].as_ref() else {
            continue;
        };
        let chan_power = mean_power(&x.channel(ch).to_vec());
        let Some(level) = BackgroundLevel::estimate(&trace.values, chan_power, w) else {
            continue;
        };
        let gains: Vec<f64> = (0..n).map(|t| level.gain(t)).collect();
        sets.push(threshold_band(&gains, ratio, f64::NEG_INFINITY));
    }
    if sets.is_empty() {
        Ok(EpochSet::empty(n))
    } else {
        union(&sets)
    }
}

/// Per-sample covariance weights: the inverse of the cross-channel local
/// background power (plus the retained signal power, normalized to its
/// typical value and floored to avoid exploding weights in near-silent
/// stretches). This is a generalized-least-squares weighting for
/// heteroscedastic background noise that leaves the estimates untouched
/// wherever the signal dominates or the noise is stationary.
fn noise_weights(
    x: &MultichannelSignal,
    stage: &EkfStage,
    channels: &[usize],
    window: f64,
) -> Vec<f64> {
    let fs = x.fs();
    let n = x.n_samples();
    let w = ((window * fs).round() as usize).max(1);
    let mut power = vec![0.0; n];
    let mut signal = 0.0;
    let mut used = 0usize;
    for &ch in channels {
        let Some(trace) = stage.innovations[ch].as_ref() else {
            continue;
        };
        let chan_power = mean_power(&x.channel(ch).to_vec());
        let Some(level) = BackgroundLevel::estimate(&trace.values, chan_power, w) else {
            continue;
        };
        for (acc, p) in power.iter_mut().zip(&level.power) {
            *acc += p;
        }
        signal += level.signal;
        used += 1;
    }
    if used == 0 {
        return vec![1.0; n];
    }
    let mut sorted = power.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[n / 2];
    if !(median > 0.0) {
        return vec![1.0; n];
    }
    power
        .iter()
        .map(|&p| 1.0 / ((signal + p) / (signal + median)).max(0.25))
        .collect()
}

/// Weighted covariance over `set` (or the whole record when `set` is
/// `None`): `C = sum w_u (x_u - m)(x_u - m)^T / sum w_u` with the weighted
/// mean `m`. With uniform weights this matches the unweighted estimates.
fn weighted_covariance(
    x: &MultichannelSignal,
    set: Option<&EpochSet>,
    weights: &[f64],
) -> Result<SymmetricMatrix> {
    let n = x.n_channels();
    let samples: Vec<usize> = match set {
        Some(p) => p.iter().collect(),
        None => (0..x.n_samples()).collect(),
    };
    let total: f64 = samples.iter().map(|&u| weights[u]).sum();
    if !(total > 0.0) {
        return Err(NscaError::EmptyEpochSet);
    }
    let mut means = vec![0.0; n];
    for &u in &samples {
        for i in 0..n {
            means[i] += weights[u] * x.data()[[i, u]];
        }
    }
    for v in &mut means {
        *v /= total;
    }
    let mut c = Array2::zeros((n, n));
    for &u in &samples {
        for i in 0..n {
            let xi = x.data()[[i, u]] - means[i];
            for j in i..n {
                let xj = x.data()[[j, u]] - means[j];
                c[[i, j]] += weights[u] * xi * xj;
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = c[[i, j]] / total;
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    SymmetricMatrix::new(c)
}

fn build_fetal_epochs_from_stage(
    x: &MultichannelSignal,
    cfg: &PipelineConfig,
    stage: &EkfStage,
) -> Result<FetalEpochs> {
    let fs = x.fs();
    let n = x.n_samples();
    let sigmas = cfg.threshold_sigmas;
    let channels = candidate_channels(x, cfg);
    let mut traces = DetectorTraces::default();

    // maternal-QRS epochs from the reference channel's LPE, dilated
    let ref_ch: Vec<f64> = x.channel(stage.reference_channel).to_vec();
    let m_lpe = lpe_index(
        &ref_ch,
        fs,
        &LpeConfig {
            w1: cfg.maternal_lpe_w1,
            w2: cfg.maternal_lpe_w2,
            zeta_upper: 2.0,
            zeta_lower: 0.0,
            global_denominator: false,
        },
    )?;
    let m_upper = auto_upper(&m_lpe.rho, sigmas, 1.0 + 1e-9);
    let m_epochs = threshold_band(&m_lpe.rho, m_upper, 0.0);
    let pad = (cfg.maternal_dilation * fs).round() as usize;
    let maternal = dilate(&m_epochs, pad, pad);

    let bursts = match cfg.burst_power_ratio {
        Some(ratio) => burst_epochs(x, stage, &channels, cfg.burst_window, ratio)?,
        None => EpochSet::empty(n),
    };

    let normalized: Vec<Option<crate::detectors::InnovationTrace>> = if cfg.adaptive_normalization {
        stage
            .innovations
            .iter()
            .map(|opt| opt.as_ref().map(|tr| normalize_trace(tr, cfg.burst_window, fs)))
            .collect()
    } else {
        stage.innovations.clone()
    };
    let innovation = |ch: usize| -> &crate::detectors::InnovationTrace {
        normalized[ch].as_ref().expect("EKF ran for innovation detectors")
    };

    let mut per_detector = Vec::new();
    for det in &cfg.detector_selection {
        let mut sets: Vec<EpochSet> = Vec::new();
        for &ch in &channels {
            let set = match det {
                DetectorKind::Lpe => {
                    let s: Vec<f64> = x.channel(ch).to_vec();
                    let res = lpe_index(
                        &s,
                        fs,
                        &LpeConfig {
                            w1: cfg.fetal_lpe_w1,
                            w2: cfg.fetal_lpe_w2,
                            zeta_upper: 2.0,
                            zeta_lower: 0.0,
                            global_denominator: false,
                        },
                    )?;
                    if res.degenerate {
                        EpochSet::empty(n)
                    } else {
                        let upper = auto_upper(&res.rho, sigmas, 1.0 + 1e-9);
                        let set = threshold_band(&res.rho, upper, 0.0);
                        traces.rho.push((ch, res.rho));
                        set
                    }
                }
                DetectorKind::InnMean => {
                    let trace = innovation(ch);
                    let (a, _) = innovation_mean_index(trace, cfg.w_a, fs, f64::MAX, cfg.causal)?;
                    let mu = auto_upper(
                        &a.iter().map(|v| v.abs()).collect::<Vec<_>>(),
                        sigmas,
                        0.0,
                    );
                    let set = threshold_abs(&a, mu.max(1e-300));
                    traces.inn_mean.push((ch, a));
                    set
                }
                DetectorKind::InnVar => {
                    let trace = innovation(ch);
                    let (gamma, _) = innovation_variance_index(
                        trace,
                        fs,
                        &VarianceIndexConfig {
                            w: cfg.w_var,
                            mean_removal_w: cfg.mean_removal_w,
                            lambda_upper: 2.0,
                            lambda_lower: 0.0,
                            causal: cfg.causal,
                        },
                    )?;
                    let upper = auto_upper(&gamma, sigmas, 1.0);
                    let set = threshold_band(&gamma, upper, 0.0);
                    traces.inn_var.push((ch, gamma));
                    set
                }
                DetectorKind::InnEps | DetectorKind::InnQ => {
                    let trace = innovation(ch);
                    let res = innovation_whiteness_index(
                        trace,
                        fs,
                        &WhitenessIndexConfig {
                            w_r: cfg.w_r,
                            max_lag: cfg.max_lag_samples(fs),
                            mean_removal_w: cfg.mean_removal_w,
                            xi: 0.0,
                            kappa: 0.0,
                            causal: cfg.causal,
                        },
                    )?;
                    let (vals, failed) = if *det == DetectorKind::InnEps {
                        (&res.fit.eps, &res.failed)
                    } else {
                        (&res.fit.q, &res.failed)
                    };
                    let abs: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
                    let thr = auto_upper(&abs, sigmas, 0.0).max(1e-300);
                    let raw = threshold_abs(vals, thr);
                    let set = exclude(&raw, failed, 0)?;
                    if *det == DetectorKind::InnEps {
                        traces.inn_eps.push((ch, vals.clone()));
                    } else {
                        traces.inn_q.push((ch, vals.clone()));
                    }
                    set
                }
            };
            sets.push(set);
        }
        let votes = cfg.min_channel_votes.min(sets.len());
        let combined = if votes <= 1 {
            union(&sets)?
        } else {
            let labeled: Vec<LabeledEpochs> = sets
                .iter()
                .enumerate()
                .map(|(i, s)| LabeledEpochs::new(format!("ch{i}"), s.clone(), 1.0))
                .collect::<Result<_>>()?;
            vote(&labeled, votes as f64 / sets.len() as f64)?
        };
        let combined = match cfg.max_epoch_run {
            Some(limit) => {
                let cap = ((limit * fs).round() as usize).max(1);
                let runs: Vec<(usize, usize)> = combined
                    .runs()
                    .iter()
                    .copied()
                    .filter(|&(a, b)| b - a <= cap)
                    .collect();
                EpochSet::from_runs(runs, n)?
            }
            None => combined,
        };
        let cleaned = exclude(&combined, &maternal, 0)?;
        let cleaned = exclude(&cleaned, &bursts, 0)?;
        per_detector.push((det.name().to_string(), cleaned));
    }
    let fused = union(
        &per_detector
            .iter()
            .map(|(_, s)| s.clone())
            .collect::<Vec<_>>(),
    )?;
    Ok(FetalEpochs { per_detector, maternal, fused, traces })
}

/// Run the full extraction: detectors, targeted covariances, and GEVD/AJD
/// separation, with components ordered most-nonstationary first.
pub fn run_nsca(x: &MultichannelSignal, cfg: &PipelineConfig) -> Result<SeparationOutput> {
    cfg.validate(x.n_channels())?;
    let n = x.n_channels();
    let stage = run_ekf_stage(x, cfg)?;
    let epochs = build_fetal_epochs_from_stage(x, cfg, &stage)?;
    if epochs
        .per_detector
        .iter()
        .all(|(_, s)| s.len() < n)
    {
        return Err(NscaError::InsufficientEpochs);
    }
    let leveled;
    let x = if cfg.channel_leveling {
        leveled = level_channels(x, &stage, cfg.burst_window)?;
        &leveled
    } else {
        x
    };
    let weights = if cfg.noise_weighting {
        Some(noise_weights(
            x,
            &stage,
            &candidate_channels(x, cfg),
            cfg.burst_window,
        ))
    } else {
        None
    };
    let cov_on = |set: &EpochSet| -> Result<SymmetricMatrix> {
        match &weights {
            Some(w) => weighted_covariance(x, Some(set), w),
            None => Ok(covariance_on_epochs(x, set)?.matrix),
        }
    };
    let c_x = match &weights {
        Some(w) => weighted_covariance(x, None, w)?,
        None => covariance_full(x)?,
    };

    // step 7-8: targeted covariances and the separation transform
    let target_set = |sets: &[(String, EpochSet)]| -> Result<EpochSet> {
        match cfg.mode {
            SeparationMode::GevdSingle => Ok(sets[0].1.clone()),
            SeparationMode::GevdUnion => {
                union(&sets.iter().map(|(_, s)| s.clone()).collect::<Vec<_>>())
            }
            SeparationMode::GevdIntersection => {
                intersection(&sets.iter().map(|(_, s)| s.clone()).collect::<Vec<_>>())
            }
            SeparationMode::Ajd => unreachable!("AJD handled separately"),
        }
    };

    let mut epoch_sets_used: Vec<(String, EpochSet)> = epochs.per_detector.clone();
    epoch_sets_used.push(("maternal".into(), epochs.maternal.clone()));
    epoch_sets_used.push(("fused".into(), epochs.fused.clone()));

    let (demixing, eigenvalues, ranking_set, insufficient) = match cfg.mode {
        SeparationMode::Ajd => {
            let mut cs: Vec<SymmetricMatrix> = Vec::new();
            let mut thin = false;
            for (_, set) in &epochs.per_detector {
                if set.len() < n {
                    continue;
                }
                let cov = cov_on(set)?;
                thin |= set.len() < 3 * n;
                cs.push(cov);
            }
            if cs.len() < 2 {
                return Err(NscaError::InsufficientEpochs);
            }
            let res = ajd(&cs, &c_x)?;
            (res.demixing, None, epochs.fused.clone(), thin)
        }
        _ => {
            let set = target_set(&epochs.per_detector)?;
            if set.len() < n {
                return Err(NscaError::InsufficientEpochs);
            }
            let thin = set.len() < 3 * n;
            let c_theta = cov_on(&set)?;
            let res = gevd(&c_theta, &c_x)?;
            // eigenvalues ascend; order components most-nonstationary first
            let mut w = Array2::zeros((n, n));
            let mut vals = Vec::with_capacity(n);
            for (dst, src) in (0..n).rev().enumerate() {
                for r in 0..n {
                    w[[r, dst]] = res.eigenmatrix[[r, src]];
                }
                vals.push(res.eigenvalues[src]);
            }
            (w, Some(vals), set, thin)
        }
    };

    epoch_sets_used.push(("target".into(), ranking_set.clone()));
    let components = apply_transform(&demixing, x)?;
    let ranking = rank_components(&components, &ranking_set)?;
    Ok(SeparationOutput {
        components,
        demixing,
        epoch_sets_used,
        ranking,
        eigenvalues,
        insufficient_statistics: insufficient,
        traces: epochs.traces,
        maternal_rpeaks: stage.maternal_rpeaks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecg::{default_fetal_kernels, default_maternal_kernels, synthesize_ecg};
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    /// 4-channel synthetic mixture: maternal + fetal ECG + two noise sources.
    fn mixture(seed: u64, fetal_gain: f64, noise_gain: f64) -> (MultichannelSignal, Vec<usize>) {
        let fs = 500.0;
        let dur = 30.0;
        let m_out = synthesize_ecg(&default_maternal_kernels(), &[1.2], fs, dur).unwrap();
        let f_out = synthesize_ecg(&default_fetal_kernels(), &[2.2], fs, dur).unwrap();
        let n = m_out.signal.len();
        let mut r = rng(seed);
        let noise1: Vec<f64> = (0..n).map(|_| (r.gen::<f64>() - 0.5) * noise_gain).collect();
        let noise2: Vec<f64> = (0..n).map(|_| (r.gen::<f64>() - 0.5) * noise_gain).collect();
        let mixing = array![
            [1.0, 0.3, 0.1, 0.05],
            [0.8, -0.5, 0.05, 0.1],
            [0.6, 0.7, 0.15, 0.02],
            [0.9, 0.2, 0.02, 0.2],
        ];
        let mut data = Array2::zeros((4, n));
        for t in 0..n {
            let s = [
                m_out.signal[t],
                fetal_gain * f_out.signal[t],
                noise1[t],
                noise2[t],
            ];
            for ch in 0..4 {
                data[[ch, t]] = (0..4).map(|k| mixing[[ch, k]] * s[k]).sum();
            }
        }
        (
            MultichannelSignal::new(data, fs).unwrap(),
            f_out.rpeaks.clone(),
        )
    }

    #[test]
    fn identity_mixing_ranks_fetal_first() {
        // fetal source alone in channel 1, stationary noise elsewhere
        let fs = 500.0;
        let dur = 30.0;
        let m_out = synthesize_ecg(&default_maternal_kernels(), &[1.2], fs, dur).unwrap();
        let f_out = synthesize_ecg(&default_fetal_kernels(), &[2.2], fs, dur).unwrap();
        let n = m_out.signal.len();
        let mut r = rng(2);
        let ch0: Vec<f64> = m_out.signal.clone();
        let ch1: Vec<f64> = f_out.signal.iter().map(|v| v * 0.5).collect();
        let ch2: Vec<f64> = (0..n).map(|_| (r.gen::<f64>() - 0.5) * 0.02).collect();
        let x = MultichannelSignal::from_channels(&[ch0, ch1.clone(), ch2], fs).unwrap();
        let cfg = PipelineConfig {
            detector_selection: vec![DetectorKind::Lpe],
            candidate_channel_fetal: Some(1),
            ..PipelineConfig::default()
        };
        let out = run_nsca(&x, &cfg).unwrap();
        let top = out.ranking[0].component;
        let y = out.components.channel(top);
        // correlation with the fetal source
        let my = y.iter().sum::<f64>() / n as f64;
        let mf = ch1.iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut dy = 0.0;
        let mut df = 0.0;
        for t in 0..n {
            num += (y[t] - my) * (ch1[t] - mf);
            dy += (y[t] - my) * (y[t] - my);
            df += (ch1[t] - mf) * (ch1[t] - mf);
        }
        let corr = num / (dy * df).sqrt();
        assert!(corr.abs() >= 0.99, "|corr| = {}", corr.abs());
    }

    #[test]
    fn mixture_components_uncorrelated() {
        let (x, _) = mixture(3, 0.3, 0.05);
        // exact GEVD decorrelation holds for the plain (unweighted,
        // unleveled) covariance the components are whitened against
        let cfg = PipelineConfig {
            noise_weighting: false,
            channel_leveling: false,
            ..PipelineConfig::default()
        };
        let out = run_nsca(&x, &cfg).unwrap();
        let y = out.components;
        let c = covariance_full(&y).unwrap();
        let m = c.entries();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let corr = m[[i, j]] / (m[[i, i]] * m[[j, j]]).sqrt();
                    assert!(corr.abs() <= 1e-6, "corr[{i},{j}] = {corr}");
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let (x, _) = mixture(4, 0.3, 0.05);
        let out1 = run_nsca(&x, &PipelineConfig::default()).unwrap();
        // swap channels 1 and 2
        let perm = [0usize, 2, 1, 3];
        let mut data = Array2::zeros((4, x.n_samples()));
        for (dst, &src) in perm.iter().enumerate() {
            for t in 0..x.n_samples() {
                data[[dst, t]] = x.data()[[src, t]];
            }
        }
        let xp = MultichannelSignal::new(data, x.fs()).unwrap();
        let out2 = run_nsca(&xp, &PipelineConfig::default()).unwrap();
        for c in 0..4 {
            let y1 = out1.components.channel(c);
            let y2 = out2.components.channel(c);
            // identical up to sign
            let dot: f64 = y1.iter().zip(y2.iter()).map(|(a, b)| a * b).sum();
            let n1: f64 = y1.iter().map(|v| v * v).sum();
            let n2: f64 = y2.iter().map(|v| v * v).sum();
            let cos = dot / (n1 * n2).sqrt();
            assert!(cos.abs() > 1.0 - 1e-9, "component {c} cos {cos}");
        }
    }

    #[test]
    fn disjoint_intersection_is_insufficient() {
        // two detectors firing on disjoint epochs: LPE catches bursts, while
        // a manual second run is emulated by intersecting with inn_mean on a
        // channel whose innovation never deviates — instead drive the public
        // contract directly with an intersection over detectors that cannot
        // agree on this record
        let (x, _) = mixture(5, 0.0, 1e-9);
        let cfg = PipelineConfig {
            mode: SeparationMode::GevdIntersection,
            detector_selection: vec![DetectorKind::Lpe, DetectorKind::InnVar],
            ..PipelineConfig::default()
        };
        match run_nsca(&x, &cfg) {
            Err(NscaError::InsufficientEpochs) => {}
            Ok(out) => {
                // if the detectors happened to overlap, the run must still
                // have produced a nonempty target set
                assert!(out.epoch_sets_used.iter().any(|(n, s)| n == "target" && !s.is_empty()));
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn exclusion_identity_with_empty_maternal() {
        // no maternal activity on the reference channel: a flat channel has
        // no LPE excursions, so the fused set equals the raw candidate set
        let fs = 500.0;
        let n = 5000;
        let mut r = rng(6);
        let flat: Vec<f64> = (0..n).map(|_| (r.gen::<f64>() - 0.5) * 1e-3).collect();
        let mut bursty: Vec<f64> = (0..n).map(|_| (r.gen::<f64>() - 0.5) * 1e-3).collect();
        for t in 2000..2010 {
            bursty[t] += 1.0;
        }
        let x = MultichannelSignal::from_channels(&[flat, bursty], fs).unwrap();
        let cfg = PipelineConfig {
            detector_selection: vec![DetectorKind::Lpe],
            candidate_channel_fetal: Some(1),
            maternal_dilation: 0.0,
            // the isolated burst is the signal of interest here, not noise,
            // and with no real rhythm on either channel the adaptive
            // reference consensus is arbitrary — test the plain exclusion
            // algebra
            burst_power_ratio: None,
            adaptive_normalization: false,
            ..PipelineConfig::default()
        };
        let eps = build_fetal_epochs(&x, &cfg).unwrap();
        // the burst must survive exclusion
        assert!(!eps.fused.is_empty());
        assert!(eps.fused.iter().any(|t| (2000..2010).contains(&t)));
    }

    #[test]
    fn maternal_only_negative_control() {
        let (x, _) = mixture(7, 0.0, 0.01);
        let cfg = PipelineConfig::default();
        let eps = build_fetal_epochs(&x, &cfg).unwrap();
        assert!(
            eps.fused.coverage() < 0.02,
            "fused coverage {} on maternal-only record",
            eps.fused.coverage()
        );
    }

    #[test]
    fn fetal_bumps_intersect_fused_epochs() {
        let (x, fetal_rpeaks) = mixture(8, 0.3, 0.005);
        let cfg = PipelineConfig::default();
        let eps = build_fetal_epochs(&x, &cfg).unwrap();
        let fs = 500.0;
        let support = (0.020 * fs) as usize; // +-20 ms around each fetal R
        let mut hits = 0;
        let mut total = 0;
        for &p in &fetal_rpeaks {
            if p < support || p + support >= x.n_samples() {
                continue;
            }
            total += 1;
            if (p - support..p + support).any(|t| eps.fused.contains(t)) {
                hits += 1;
            }
        }
        let frac = hits as f64 / total as f64;
        assert!(frac >= 0.8, "only {frac:.2} of fetal QRS supports covered");
    }

    #[test]
    fn gevd_top_component_maximizes_rayleigh_ratio() {
        let (x, _) = mixture(9, 0.3, 0.05);
        let cfg = PipelineConfig {
            mode: SeparationMode::GevdUnion,
            ..PipelineConfig::default()
        };
        let out = run_nsca(&x, &cfg).unwrap();
        let target = out
            .epoch_sets_used
            .iter()
            .find(|(n, _)| n == "target")
            .unwrap()
            .1
            .clone();
        let ranking = rank_components(&out.components, &target).unwrap();
        // the first demixing column is the top generalized eigenvector, so
        // component 0 must carry the largest ratio
        assert_eq!(ranking[0].component, 0);
    }

    #[test]
    fn rank_components_trivial_cases() {
        let fs = 100.0;
        let n = 1000;
        let epochs = EpochSet::from_runs(vec![(100, 200)], n).unwrap();
        // component 0 nonzero only inside the epochs
        let mut c0 = vec![0.0; n];
        for t in 100..200 {
            c0[t] = 1.0;
        }
        let c1: Vec<f64> = (0..n).map(|t| ((t as f64) * 0.1).sin()).collect();
        let y = MultichannelSignal::from_channels(&[c1, c0], fs).unwrap();
        let ranking = rank_components(&y, &epochs).unwrap();
        assert_eq!(ranking[0].component, 1);
        assert!(ranking[0].score > ranking[1].score);
        assert!(matches!(
            rank_components(&y, &EpochSet::empty(n)),
            Err(NscaError::EmptyEpochSet)
        ));
    }

    #[test]
    fn rank_components_white_noise_scores_close() {
        let mut r = rng(11);
        let n = 200_000;
        let chans: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let u1: f64 = r.gen::<f64>().max(1e-12);
                        let u2: f64 = r.gen();
                        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                    })
                    .collect()
            })
            .collect();
        let y = MultichannelSignal::from_channels(&chans, 500.0).unwrap();
        let epochs = EpochSet::from_runs(vec![(1000, 21000)], n).unwrap();
        let ranking = rank_components(&y, &epochs).unwrap();
        let hi = ranking[0].score;
        let lo = ranking.last().unwrap().score;
        assert!((hi - lo) / lo < 0.1, "score spread {} vs {}", hi, lo);
    }

    #[test]
    fn determinism_same_input_same_output() {
        let (x, _) = mixture(12, 0.3, 0.05);
        let out1 = run_nsca(&x, &PipelineConfig::default()).unwrap();
        let out2 = run_nsca(&x, &PipelineConfig::default()).unwrap();
        assert_eq!(out1.components.data(), out2.components.data());
        assert_eq!(out1.demixing, out2.demixing);
    }
}
