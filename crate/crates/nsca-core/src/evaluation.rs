//! Synthetic maternal/fetal mixture generation, noise injection, and the
//! R-peak F1 / heart-rate agreement metrics used to score extractions.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::ecg::{
    default_fetal_kernels, default_maternal_kernels, detect_rpeaks_lpd, synthesize_ecg,
    GaussianKernelSet, Polarity,
};
use crate::eig::sym_eig;
use crate::error::{NscaError, Result};
use crate::pipeline::{run_nsca, PipelineConfig};
use crate::signal::MultichannelSignal;

/// Everything needed to generate a synthetic abdominal mixture.
#[derive(Debug, Clone)]
pub struct MixtureConfig {
    /// Beat-wise maternal heart rate profile, Hz.
    pub maternal_hr: Vec<f64>,
    /// Beat-wise fetal heart rate profile, Hz.
    pub fetal_hr: Vec<f64>,
    pub maternal_kernels: GaussianKernelSet,
    pub fetal_kernels: GaussianKernelSet,
    pub n_channels: usize,
    pub fs: f64,
    pub duration: f64,
    /// Fetal-to-maternal source power ratio in dB.
    pub fetal_power_db: f64,
    /// Power of each background-noise source relative to the maternal
    /// source, dB.
    pub noise_power_db: f64,
    /// Fixed mixing matrix; `None` draws a conditioned random one.
    pub mixing: Option<Array2<f64>>,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            maternal_hr: vec![1.2],
            fetal_hr: vec![2.2],
            maternal_kernels: default_maternal_kernels(),
            fetal_kernels: default_fetal_kernels(),
            n_channels: 4,
            fs: 500.0,
            duration: 60.0,
            fetal_power_db: -15.0,
            noise_power_db: -30.0,
            mixing: None,
            seed: 0,
        }
    }
}

/// A generated mixture with its full ground truth.
#[derive(Debug, Clone)]
pub struct MixtureGroundTruth {
    /// Row 0 maternal, row 1 fetal, remaining rows background noise.
    pub sources: MultichannelSignal,
    /// Observed mixture x = A s.
    pub observed: MultichannelSignal,
    pub mixing: Array2<f64>,
    pub fetal_rpeaks: Vec<usize>,
    pub maternal_rpeaks: Vec<usize>,
}

/// Condition-number ceiling enforced on randomly drawn mixing matrices.
pub const MIXING_COND_LIMIT: f64 = 100.0;

fn condition_number(a: &Array2<f64>) -> f64 {
    let gram = a.t().dot(a);
    let (vals, _) = sym_eig(&gram).expect("gram matrix is symmetric");
    let min = vals[0].max(0.0);
    let max = vals[vals.len() - 1];
    if min <= 0.0 {
        f64::INFINITY
    } else {
        (max / min).sqrt()
    }
}

/// Synthesize a maternal + fetal + noise source set and mix it with a
/// conditioned random (or caller-fixed) matrix.
pub fn generate_mixture(cfg: &MixtureConfig) -> Result<MixtureGroundTruth> {
    if cfg.n_channels < 2 {
        return Err(NscaError::InvalidParameter(
            "mixture needs at least 2 channels".into(),
        ));
    }
    let m_out = synthesize_ecg(&cfg.maternal_kernels, &cfg.maternal_hr, cfg.fs, cfg.duration)?;
    let f_out = synthesize_ecg(&cfg.fetal_kernels, &cfg.fetal_hr, cfg.fs, cfg.duration)?;
    let n = m_out.signal.len();
    let power = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
    let p_m = power(&m_out.signal);
    let p_f = power(&f_out.signal);
    let fetal_scale = if p_f > 0.0 {
        (p_m / p_f * 10f64.powf(cfg.fetal_power_db / 10.0)).sqrt()
    } else {
        0.0
    };
    let noise_std = (p_m * 10f64.powf(cfg.noise_power_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e3779b97f4a7c15));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut sources = Array2::zeros((cfg.n_channels, n));
    for t in 0..n {
        sources[[0, t]] = m_out.signal[t];
        sources[[1, t]] = fetal_scale * f_out.signal[t];
    }
    for ch in 2..cfg.n_channels {
        for t in 0..n {
            sources[[ch, t]] = noise_std * normal.sample(&mut rng);
        }
    }
    let mixing = match &cfg.mixing {
        Some(a) => {
            if a.nrows() != cfg.n_channels || a.ncols() != cfg.n_channels {
                return Err(NscaError::DimensionMismatch(
                    "mixing matrix shape must match channel count".into(),
                ));
            }
            a.clone()
        }
        None => loop {
            let mut a = Array2::zeros((cfg.n_channels, cfg.n_channels));
            for v in a.iter_mut() {
                *v = rng.gen::<f64>() * 2.0 - 1.0;
            }
            if condition_number(&a) <= MIXING_COND_LIMIT {
                break a;
            }
        },
    };
    let observed = MultichannelSignal::new(mixing.dot(&sources), cfg.fs)?;
    Ok(MixtureGroundTruth {
        sources: MultichannelSignal::new(sources, cfg.fs)?,
        observed,
        mixing,
        fetal_rpeaks: f_out.rpeaks,
        maternal_rpeaks: m_out.rpeaks,
    })
}

/// Additive noise flavors for robustness sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Stationary white Gaussian noise.
    Wgn,
    /// Gaussian noise whose variance follows a smoothed random envelope
    /// spanning one decade.
    Ngn,
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Wgn => "wgn",
            NoiseKind::Ngn => "ngn",
        }
    }
}

/// Add per-channel noise at the requested SNR. An infinite SNR returns the
/// input unchanged.
pub fn add_noise(
    x: &MultichannelSignal,
    kind: NoiseKind,
    snr_db: f64,
    seed: u64,
) -> Result<MultichannelSignal> {
    if snr_db.is_nan() {
        return Err(NscaError::InvalidParameter("snr_db must not be NaN".into()));
    }
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(x.clone());
    }
    let n = x.n_samples();
    let fs = x.fs();
    let mut data = x.data().clone();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for ch in 0..x.n_channels() {
        // distinct stream per channel so channels get independent noise
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(ch as u64),
        );
        let p_sig: f64 = x.channel(ch).iter().map(|v| v * v).sum::<f64>() / n as f64;
        let p_noise = p_sig / 10f64.powf(snr_db / 10.0);
        let mut noise: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        if kind == NoiseKind::Ngn {
            // envelope: uniform noise lowpassed at 1 Hz, min-max normalized
            // to [0, 1], then raised to a one-decade variance swing; the
            // running mean divides by the true in-range coverage so the
            // record edges don't bias the normalization
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let w = (fs.round() as usize).max(1).min(n);
            let smooth: Vec<f64> = (0..n)
                .map(|t| {
                    let a = t.saturating_sub(w / 2);
                    let b = (t + w - w / 2).min(n);
                    raw[a..b].iter().sum::<f64>() / (b - a) as f64
                })
                .collect();
            let lo = smooth.iter().cloned().fold(f64::MAX, f64::min);
            let hi = smooth.iter().cloned().fold(f64::MIN, f64::max);
            let span = (hi - lo).max(1e-300);
            for t in 0..n {
                // stretch 2x about the midpoint with clamping so the envelope
                // saturates at both decade ends long enough for 1 s windows
                // to see the full variance swing
                let e = (2.0 * (smooth[t] - lo) / span - 0.5).clamp(0.0, 1.0);
                noise[t] *= 10f64.powf(e / 2.0); // variance spans one decade
            }
        }
        let p_emp: f64 = noise.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let scale = (p_noise / p_emp.max(1e-300)).sqrt();
        for t in 0..n {
            data[[ch, t]] += scale * noise[t];
        }
    }
    MultichannelSignal::new(data, fs)
}

/// R-peak detection and heart-rate agreement report.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub f1_percent: f64,
    pub hrm_percent: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Beat-wise heart rates (bpm) of the estimate and reference lists.
    pub hr_series_est: Vec<f64>,
    pub hr_series_ref: Vec<f64>,
}

/// Greedy one-to-one R-peak matching within a `tol`-second window.
///
/// References are visited in time order; each takes the nearest unmatched
/// estimate within the window. Empty lists score F1 = 0 (the 0/0 case is
/// defined as 0).
pub fn f1_score(est: &[usize], reference: &[usize], tol: f64, fs: f64) -> (usize, usize, usize, f64) {
    let tol_samples = (tol * fs).round() as i64;
    let mut matched = vec![false; est.len()];
    let mut tp = 0usize;
    for &r in reference {
        let mut best: Option<usize> = None;
        let mut best_dist = i64::MAX;
        for (i, &e) in est.iter().enumerate() {
            if matched[i] {
                continue;
            }
            let d = (e as i64 - r as i64).abs();
            if d <= tol_samples && d < best_dist {
                best = Some(i);
                best_dist = d;
            }
            if e as i64 - (r as i64) > tol_samples {
                break;
            }
        }
        if let Some(i) = best {
            matched[i] = true;
            tp += 1;
        }
    }
    let fp = est.len() - tp;
    let fn_ = reference.len() - tp;
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 { 0.0 } else { 100.0 * 2.0 * tp as f64 / denom as f64 };
    (tp, fp, fn_, f1)
}

fn hr_series(peaks: &[usize], fs: f64) -> Vec<(usize, f64)> {
    peaks
        .windows(2)
        .map(|w| (w[1], 60.0 * fs / (w[1] - w[0]) as f64))
        .collect()
}

/// Fraction of reference beat rates whose nearest-in-time estimated beat rate
/// agrees within +-5 bpm, as a percentage.
pub fn hrm_score(est: &[usize], reference: &[usize], fs: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if est.len() < 2 {
        return Err(NscaError::TooFewPeaks { needed: 2, got: est.len() });
    }
    if reference.len() < 2 {
        return Err(NscaError::TooFewPeaks { needed: 2, got: reference.len() });
    }
    let hr_est = hr_series(est, fs);
    let hr_ref = hr_series(reference, fs);
    let mut hits = 0usize;
    for &(t_ref, hr_r) in &hr_ref {
        let nearest = hr_est
            .iter()
            .min_by_key(|(t, _)| (*t as i64 - t_ref as i64).abs())
            .expect("est series nonempty")
            .1;
        if (nearest - hr_r).abs() <= 5.0 {
            hits += 1;
        }
    }
    let pct = 100.0 * hits as f64 / hr_ref.len() as f64;
    Ok((
        pct,
        hr_est.iter().map(|p| p.1).collect(),
        hr_ref.iter().map(|p| p.1).collect(),
    ))
}

/// Score an extracted component against reference fetal R-peaks: detect
/// R-peaks on the component and compute both metrics.
pub fn score_component(
    component: &[f64],
    fs: f64,
    reference: &[usize],
    tol: f64,
    min_rr: f64,
) -> Result<MetricReport> {
    let est = detect_rpeaks_lpd(component, fs, min_rr, Polarity::Auto)?;
    let (tp, fp, fn_, f1) = f1_score(&est, reference, tol, fs);
    let (hrm, hr_est, hr_ref) = hrm_score(&est, reference, fs)?;
    Ok(MetricReport {
        f1_percent: f1,
        hrm_percent: hrm,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        hr_series_est: hr_est,
        hr_series_ref: hr_ref,
    })
}

/// One sweep cell: a single trial at one SNR and noise kind.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub noise: String,
    pub snr_db: f64,
    pub trial: usize,
    /// NaN when the trial failed.
    pub f1_percent: f64,
    pub hrm_percent: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummaryCell {
    pub noise: String,
    pub snr_db: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub hrm_mean: f64,
    pub hrm_std: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummaryCell>,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub mixture: MixtureConfig,
    pub pipeline: PipelineConfig,
    pub snr_list: Vec<f64>,
    pub noise_kinds: Vec<NoiseKind>,
    pub n_trials: usize,
    /// F1 matching tolerance, seconds.
    pub tol: f64,
    /// Minimum fetal R-R interval for peak detection on components, seconds.
    pub fetal_min_rr: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mixture: MixtureConfig::default(),
            pipeline: PipelineConfig::default(),
            snr_list: vec![-5.0, 0.0, 5.0, 10.0, 15.0],
            noise_kinds: vec![NoiseKind::Wgn, NoiseKind::Ngn],
            n_trials: 1,
            tol: 0.050,
            fetal_min_rr: 0.25,
            seed: 0,
        }
    }
}

/// Run a single extract-and-score trial on a noisy copy of a mixture.
pub fn run_trial(
    truth: &MixtureGroundTruth,
    pipeline: &PipelineConfig,
    kind: NoiseKind,
    snr_db: f64,
    tol: f64,
    fetal_min_rr: f64,
    noise_seed: u64,
) -> Result<MetricReport> {
    let noisy = add_noise(&truth.observed, kind, snr_db, noise_seed)?;
    let out = run_nsca(&noisy, pipeline)?;
    let top = out.ranking[0].component;
    let comp: Vec<f64> = out.components.channel(top).to_vec();
    score_component(&comp, noisy.fs(), &truth.fetal_rpeaks, tol, fetal_min_rr)
}

/// Full SNR sweep: per-trial rows plus mean/std summary per (noise, SNR)
/// cell. Each trial draws its mixture from a stream derived from
/// `(seed, trial)`; failures become NaN rows with the error kind recorded.
pub fn snr_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.n_trials < 1 {
        return Err(NscaError::InvalidParameter("n_trials must be >= 1".into()));
    }
    let mut rows = Vec::new();
    for trial in 0..cfg.n_trials {
        let mut mix_cfg = cfg.mixture.clone();
        mix_cfg.seed = cfg.seed.wrapping_add(1 + trial as u64);
        let truth = generate_mixture(&mix_cfg)?;
        for kind in &cfg.noise_kinds {
            for &snr in &cfg.snr_list {
                let noise_seed = cfg
                    .seed
                    .wrapping_mul(31)
                    .wrapping_add(trial as u64 * 7 + snr.abs() as u64);
                match run_trial(
                    &truth,
                    &cfg.pipeline,
                    *kind,
                    snr,
                    cfg.tol,
                    cfg.fetal_min_rr,
                    noise_seed,
                ) {
                    Ok(m) => rows.push(SweepRow {
                        noise: kind.name().into(),
                        snr_db: snr,
                        trial,
                        f1_percent: m.f1_percent,
                        hrm_percent: m.hrm_percent,
                        error: None,
                    }),
                    Err(e) => rows.push(SweepRow {
                        noise: kind.name().into(),
                        snr_db: snr,
                        trial,
                        f1_percent: f64::NAN,
                        hrm_percent: f64::NAN,
                        error: Some(e.kind().to_string()),
                    }),
                }
            }
        }
    }
    let mut summary = Vec::new();
    for kind in &cfg.noise_kinds {
        for &snr in &cfg.snr_list {
            let cell: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.noise == kind.name() && r.snr_db == snr)
                .collect();
            let ok: Vec<&&SweepRow> = cell.iter().filter(|r| r.error.is_none()).collect();
            let stat = |f: fn(&SweepRow) -> f64| -> (f64, f64) {
                if ok.is_empty() {
                    return (f64::NAN, f64::NAN);
                }
                let vals: Vec<f64> = ok.iter().map(|r| f(r)).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var =
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                (mean, var.sqrt())
            };
            let (f1_mean, f1_std) = stat(|r| r.f1_percent);
            let (hrm_mean, hrm_std) = stat(|r| r.hrm_percent);
            summary.push(SweepSummaryCell {
                noise: kind.name().into(),
                snr_db: snr,
                f1_mean,
                f1_std,
                hrm_mean,
                hrm_std,
                failures: cell.len() - ok.len(),
            });
        }
    }
    Ok(SweepReport { rows, summary })
}

impl SweepReport {
    /// One row per cell: `noise,snr_db,trial,f1_percent,hrm_percent,error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("noise,snr_db,trial,f1_percent,hrm_percent,error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.noise,
                r.snr_db,
                r.trial,
                r.f1_percent,
                r.hrm_percent,
                r.error.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mixture_identity_two_channels() {
        let cfg = MixtureConfig {
            n_channels: 2,
            duration: 10.0,
            mixing: Some(array![[1.0, 0.0], [0.0, 1.0]]),
            ..MixtureConfig::default()
        };
        let truth = generate_mixture(&cfg).unwrap();
        for t in 0..truth.observed.n_samples() {
            assert_eq!(
                truth.observed.data()[[0, t]],
                truth.sources.data()[[0, t]]
            );
        }
    }

    #[test]
    fn mixture_fetal_power_ratio() {
        let truth = generate_mixture(&MixtureConfig {
            duration: 30.0,
            ..MixtureConfig::default()
        })
        .unwrap();
        let p = |ch: usize| -> f64 {
            truth
                .sources
                .channel(ch)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                / truth.sources.n_samples() as f64
        };
        let ratio_db = 10.0 * (p(1) / p(0)).log10();
        assert!((ratio_db + 15.0).abs() < 0.1, "ratio {ratio_db} dB");
    }

    #[test]
    fn mixture_zero_fetal_amplitude() {
        let cfg = MixtureConfig {
            fetal_power_db: f64::NEG_INFINITY,
            duration: 10.0,
            ..MixtureConfig::default()
        };
        let truth = generate_mixture(&cfg).unwrap();
        assert!(truth.sources.channel(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mixture_conditioning_contract() {
        for seed in 0..20 {
            let truth = generate_mixture(&MixtureConfig {
                seed,
                duration: 5.0,
                ..MixtureConfig::default()
            })
            .unwrap();
            assert!(condition_number(&truth.mixing) <= MIXING_COND_LIMIT);
        }
    }

    #[test]
    fn mixture_determinism() {
        let cfg = MixtureConfig { duration: 5.0, seed: 42, ..MixtureConfig::default() };
        let a = generate_mixture(&cfg).unwrap();
        let b = generate_mixture(&cfg).unwrap();
        assert_eq!(a.observed.data(), b.observed.data());
        assert_eq!(a.mixing, b.mixing);
    }

    #[test]
    fn noise_infinite_snr_is_identity() {
        let truth = generate_mixture(&MixtureConfig {
            duration: 5.0,
            ..MixtureConfig::default()
        })
        .unwrap();
        let y = add_noise(&truth.observed, NoiseKind::Wgn, f64::INFINITY, 1).unwrap();
        assert_eq!(y.data(), truth.observed.data());
    }

    #[test]
    fn wgn_power_ratio_at_zero_db() {
        let truth = generate_mixture(&MixtureConfig {
            duration: 30.0,
            ..MixtureConfig::default()
        })
        .unwrap();
        let noisy = add_noise(&truth.observed, NoiseKind::Wgn, 0.0, 3).unwrap();
        for ch in 0..4 {
            let p_sig: f64 = truth.observed.channel(ch).iter().map(|v| v * v).sum();
            let p_noise: f64 = noisy
                .channel(ch)
                .iter()
                .zip(truth.observed.channel(ch).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let ratio = p_noise / p_sig;
            assert!((0.9..=1.1).contains(&ratio), "channel {ch} ratio {ratio}");
        }
    }

    fn windowed_variances(noise: &[f64], w: usize) -> Vec<f64> {
        noise
            .chunks(w)
            .filter(|c| c.len() == w)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() / w as f64)
            .collect()
    }

    #[test]
    fn ngn_envelope_contrast() {
        let truth = generate_mixture(&MixtureConfig {
            duration: 60.0,
            ..MixtureConfig::default()
        })
        .unwrap();
        let noisy = add_noise(&truth.observed, NoiseKind::Ngn, 0.0, 5).unwrap();
        let injected: Vec<f64> = noisy
            .channel(0)
            .iter()
            .zip(truth.observed.channel(0).iter())
            .map(|(a, b)| a - b)
            .collect();
        let vars = windowed_variances(&injected, 500);
        let lo = vars.iter().cloned().fold(f64::MAX, f64::min);
        let hi = vars.iter().cloned().fold(f64::MIN, f64::max);
        assert!(hi / lo >= 3.0, "contrast {} too small", hi / lo);
    }

    #[test]
    fn wgn_is_stationary() {
        let truth = generate_mixture(&MixtureConfig {
            duration: 60.0,
            ..MixtureConfig::default()
        })
        .unwrap();
        let noisy = add_noise(&truth.observed, NoiseKind::Wgn, 0.0, 6).unwrap();
        let injected: Vec<f64> = noisy
            .channel(0)
            .iter()
            .zip(truth.observed.channel(0).iter())
            .map(|(a, b)| a - b)
            .collect();
        let vars = windowed_variances(&injected, 500);
        let lo = vars.iter().cloned().fold(f64::MAX, f64::min);
        let hi = vars.iter().cloned().fold(f64::MIN, f64::max);
        assert!(hi / lo <= 2.0, "WGN windowed variance ratio {}", hi / lo);
    }

    #[test]
    fn f1_identical_lists() {
        let peaks: Vec<usize> = (0..20).map(|i| 100 + i * 250).collect();
        let (tp, fp, fn_, f1) = f1_score(&peaks, &peaks, 0.050, 500.0);
        assert_eq!((tp, fp, fn_), (20, 0, 0));
        assert_eq!(f1, 100.0);
    }

    #[test]
    fn f1_shift_beyond_tolerance() {
        let reference: Vec<usize> = (0..20).map(|i| 100 + i * 250).collect();
        let est: Vec<usize> = reference.iter().map(|p| p + 26).collect(); // tol+1 at 50 ms/500 Hz
        let (tp, _, _, f1) = f1_score(&est, &reference, 0.050, 500.0);
        assert_eq!(tp, 0);
        assert_eq!(f1, 0.0);
    }

    #[test]
    fn f1_every_fourth_dropped() {
        let reference: Vec<usize> = (0..40).map(|i| 100 + i * 250).collect();
        let est: Vec<usize> = reference
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 4 != 3)
            .map(|(_, &p)| p)
            .collect();
        let (tp, fp, fn_, f1) = f1_score(&est, &reference, 0.050, 500.0);
        assert_eq!((tp, fp, fn_), (30, 0, 10));
        // 2 * 0.75 / 1.75
        assert!((f1 - 100.0 * 1.5 / 1.75).abs() < 1e-12);
    }

    #[test]
    fn f1_swap_symmetry() {
        let a: Vec<usize> = vec![100, 350, 610, 900, 1400];
        let b: Vec<usize> = vec![105, 360, 1100, 1395];
        let (tp1, fp1, fn1, f1a) = f1_score(&a, &b, 0.050, 500.0);
        let (tp2, fp2, fn2, f1b) = f1_score(&b, &a, 0.050, 500.0);
        assert_eq!(tp1, tp2);
        assert_eq!(fp1, fn2);
        assert_eq!(fn1, fp2);
        assert_eq!(f1a, f1b);
    }

    #[test]
    fn f1_empty_lists_are_zero() {
        let (_, _, _, f1) = f1_score(&[], &[], 0.050, 500.0);
        assert_eq!(f1, 0.0);
        let (_, _, _, f1) = f1_score(&[], &[100], 0.050, 500.0);
        assert_eq!(f1, 0.0);
    }

    /// Brute-force optimal one-to-one matching via O(n^2) greedy on the
    /// globally nearest pair first.
    fn oracle_match(est: &[usize], reference: &[usize], tol_samples: i64) -> usize {
        let mut pairs: Vec<(i64, usize, usize)> = Vec::new();
        for (i, &e) in est.iter().enumerate() {
            for (j, &r) in reference.iter().enumerate() {
                let d = (e as i64 - r as i64).abs();
                if d <= tol_samples {
                    pairs.push((d, i, j));
                }
            }
        }
        pairs.sort();
        let mut used_e = vec![false; est.len()];
        let mut used_r = vec![false; reference.len()];
        let mut tp = 0;
        for (_, i, j) in pairs {
            if !used_e[i] && !used_r[j] {
                used_e[i] = true;
                used_r[j] = true;
                tp += 1;
            }
        }
        tp
    }

    #[test]
    fn f1_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n_ref = rng.gen_range(2..30);
            let mut reference: Vec<usize> = (0..n_ref)
                .map(|_| rng.gen_range(0..20_000usize))
                .collect();
            reference.sort_unstable();
            reference.dedup();
            let mut est: Vec<usize> = Vec::new();
            for &p in &reference {
                if rng.gen_bool(0.8) {
                    est.push((p as i64 + rng.gen_range(-30..30)).max(0) as usize);
                }
            }
            est.sort_unstable();
            let (tp, _, _, _) = f1_score(&est, &reference, 0.050, 500.0);
            let oracle_tp = oracle_match(&est, &reference, 25);
            // greedy-in-time-order is one-to-one; on these peak spacings it
            // matches the globally greedy count
            assert_eq!(tp, oracle_tp, "est {est:?} ref {reference:?}");
            assert!(tp <= est.len().min(reference.len()));
        }
    }

    #[test]
    fn hrm_identical_lists() {
        let peaks: Vec<usize> = (0..20).map(|i| 100 + i * 230).collect();
        let (pct, _, _) = hrm_score(&peaks, &peaks, 500.0).unwrap();
        assert_eq!(pct, 100.0);
    }

    #[test]
    fn hrm_uniform_offset_fails() {
        // reference at 60 bpm (RR 500 at fs 500), estimate at 70 bpm
        let reference: Vec<usize> = (0..30).map(|i| i * 500).collect();
        let est: Vec<usize> = (0..30).map(|i| (i as f64 * 500.0 * 60.0 / 70.0) as usize).collect();
        let (pct, _, _) = hrm_score(&est, &reference, 500.0).unwrap();
        assert_eq!(pct, 0.0);
    }

    #[test]
    fn hrm_half_corrupted() {
        let reference: Vec<usize> = (0..40).map(|i| i * 500).collect();
        // first half clean, second half at a wildly different rate
        let est: Vec<usize> = reference
            .iter()
            .take(20)
            .copied()
            .chain((0..20).map(|i| 10_000 + i * 300))
            .collect();
        let (pct, _, _) = hrm_score(&est, &reference, 500.0).unwrap();
        assert!((pct - 50.0).abs() <= 10.0, "HR_m {pct}");
    }

    #[test]
    fn hrm_too_few_peaks() {
        assert!(matches!(
            hrm_score(&[100], &[100, 200], 500.0),
            Err(NscaError::TooFewPeaks { .. })
        ));
    }

    #[test]
    fn noiseless_end_to_end_f1() {
        let truth = generate_mixture(&MixtureConfig {
            duration: 30.0,
            seed: 1,
            ..MixtureConfig::default()
        })
        .unwrap();
        let report = run_trial(
            &truth,
            &PipelineConfig::default(),
            NoiseKind::Wgn,
            f64::INFINITY,
            0.050,
            0.25,
            1,
        )
        .unwrap();
        assert!(report.f1_percent >= 99.0, "noiseless F1 {}", report.f1_percent);
    }

    #[test]
    fn sweep_shape_and_determinism() {
        let cfg = SweepConfig {
            mixture: MixtureConfig { duration: 20.0, ..MixtureConfig::default() },
            snr_list: vec![10.0],
            noise_kinds: vec![NoiseKind::Wgn],
            n_trials: 2,
            seed: 3,
            ..SweepConfig::default()
        };
        let a = snr_sweep(&cfg).unwrap();
        let b = snr_sweep(&cfg).unwrap();
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.summary.len(), 1);
        assert_eq!(a.to_csv(), b.to_csv());
    }
}
