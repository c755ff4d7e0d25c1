//! Nonstationarity indexes and their epoch extractors.
//!
//! Five indexes are computed per channel: the local power envelope (LPE), the
//! innovation-process mean and variance, and the two spectral-color
//! parameters (q, epsilon) of an exponential fit to the innovation
//! autocovariance. Each index is thresholded pointwise into an [`EpochSet`].

use crate::error::{NscaError, Result};
use crate::signal::{sliding_power, window_samples, EpochSet};

/// Local power envelope configuration.
///
/// `rho(t) = P_w1(t) / P_w2(t)` flags epochs where the short-window power
/// deviates from the long-window background.
#[derive(Debug, Clone)]
pub struct LpeConfig {
    /// Short window in seconds.
    pub w1: f64,
    /// Long window in seconds; must be at least twice `w1`.
    pub w2: f64,
    /// Upper threshold, > 1.
    pub zeta_upper: f64,
    /// Lower threshold, in [0, 1).
    pub zeta_lower: f64,
    /// Replace the long-window denominator by the average signal power.
    pub global_denominator: bool,
}

impl LpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta_upper > 1.0 && self.zeta_lower < 1.0 && self.zeta_lower >= 0.0) {
            return Err(NscaError::InvalidParameter(format!(
                "LPE thresholds must satisfy zeta_upper > 1 > zeta_lower >= 0, got {} / {}",
                self.zeta_upper, self.zeta_lower
            )));
        }
        if !(self.w1 > 0.0 && self.w2 >= 2.0 * self.w1) {
            return Err(NscaError::InvalidParameter(format!(
                "LPE windows must satisfy w2 >= 2*w1 > 0, got w1={} w2={}",
                self.w1, self.w2
            )));
        }
        Ok(())
    }
}

/// Per-channel EKF innovation samples together with the filter's predicted
/// innovation variance at each sample.
#[derive(Debug, Clone)]
pub struct InnovationTrace {
    pub values: Vec<f64>,
    pub predicted_variance: Vec<f64>,
}

impl InnovationTrace {
    pub fn new(values: Vec<f64>, predicted_variance: Vec<f64>) -> Result<Self> {
        if values.len() != predicted_variance.len() {
            return Err(NscaError::DimensionMismatch(
                "innovation and predicted variance lengths differ".into(),
            ));
        }
        if let Some(t) = predicted_variance.iter().position(|v| !(*v > 0.0)) {
            return Err(NscaError::NonpositivePredictedVariance(t));
        }
        Ok(Self { values, predicted_variance })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Exponential-decay fit `q(t) * exp(-|tau| / eps(t))` to the innovation
/// autocovariance, tracked per sample.
#[derive(Debug, Clone)]
pub struct WhitenessFit {
    pub q: Vec<f64>,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpeResult {
    pub rho: Vec<f64>,
    pub epochs: EpochSet,
    /// Set when the signal was identically zero and rho is undefined.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct WhitenessResult {
    pub fit: WhitenessFit,
    pub epochs_q: EpochSet,
    pub epochs_eps: EpochSet,
    /// Samples where the nonlinear fit failed; excluded from both epoch sets.
    pub failed: EpochSet,
}

/// Population standard deviation of the finite entries of an index trace,
/// used by the default `3 * std` thresholding rule.
pub fn population_std(trace: &[f64]) -> f64 {
    let finite: Vec<f64> = trace.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return 0.0;
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    (finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Sliding mean over the window `[t - w/2, t + w/2 - 1]` with zero padding
/// and a constant `1/w` denominator. With `causal` set the window is shifted
/// to end at `t`.
pub fn sliding_mean(s: &[f64], w: usize, causal: bool) -> Vec<f64> {
    let w = w.max(1);
    let n = s.len();
    let (left, right) = if causal {
        (w - 1, 0)
    } else {
        (w / 2, w - w / 2 - 1)
    };
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    // prime the window for t = 0: covers [0 - left, 0 + right]
    let mut acc = 0.0;
    for u in 0..=right.min(n - 1) {
        acc += s[u];
    }
    for t in 0..n {
        out[t] = acc / w as f64;
        if t + 1 + right < n {
            acc += s[t + 1 + right];
        }
        if t >= left {
            acc -= s[t - left];
        }
    }
    out
}

/// Flag samples where a ratio-style index leaves the band `(lower, upper)`.
pub fn threshold_band(trace: &[f64], upper: f64, lower: f64) -> EpochSet {
    let mask: Vec<bool> = trace
        .iter()
        .map(|&v| v.is_finite() && (v >= upper || v <= lower))
        .collect();
    EpochSet::from_mask(&mask)
}

/// Flag samples where an index's magnitude reaches `threshold`.
pub fn threshold_abs(trace: &[f64], threshold: f64) -> EpochSet {
    let mask: Vec<bool> = trace
        .iter()
        .map(|&v| v.is_finite() && v.abs() >= threshold)
        .collect();
    EpochSet::from_mask(&mask)
}

/// Local power envelope index: ratio of short- to long-window sliding power,
/// thresholded into nonstationary epochs.
pub fn lpe_index(s: &[f64], fs: f64, cfg: &LpeConfig) -> Result<LpeResult> {
    cfg.validate()?;
    if s.is_empty() {
        return Err(NscaError::EmptySignal);
    }
    let w1 = window_samples(cfg.w1, fs);
    let w2 = window_samples(cfg.w2, fs);
    let p1 = sliding_power(s, w1)?;
    let p_inf = s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
    if p_inf == 0.0 {
        return Ok(LpeResult {
            rho: vec![0.0; s.len()],
            epochs: EpochSet::empty(s.len()),
            degenerate: true,
        });
    }
    let floor = 1e-12 * p_inf;
    let rho: Vec<f64> = if cfg.global_denominator {
        p1.iter().map(|&a| a / p_inf.max(floor)).collect()
    } else {
        let p2 = sliding_power(s, w2)?;
        p1.iter().zip(&p2).map(|(&a, &b)| a / b.max(floor)).collect()
    };
    let epochs = threshold_band(&rho, cfg.zeta_upper, cfg.zeta_lower);
    Ok(LpeResult { rho, epochs, degenerate: false })
}

/// Innovation mean index: sliding mean of the innovation compared against an
/// absolute threshold `mu`.
pub fn innovation_mean_index(
    trace: &InnovationTrace,
    w_a: f64,
    fs: f64,
    mu: f64,
    causal: bool,
) -> Result<(Vec<f64>, EpochSet)> {
    let w = (w_a * fs).round() as usize;
    if w < 1 {
        return Err(NscaError::InvalidParameter(
            "mean window converts to zero samples".into(),
        ));
    }
    if w > trace.len() {
        return Err(NscaError::WindowTooLarge { window: w, len: trace.len() });
    }
    let a = sliding_mean(&trace.values, w, causal);
    let epochs = threshold_abs(&a, mu);
    Ok((a, epochs))
}

/// Configuration for the innovation variance index.
#[derive(Debug, Clone)]
pub struct VarianceIndexConfig {
    /// Detection window in seconds.
    pub w: f64,
    /// Window used to estimate the local innovation mean that is removed
    /// before squaring, in seconds.
    pub mean_removal_w: f64,
    /// Upper threshold, >= 1.
    pub lambda_upper: f64,
    /// Lower threshold, in [0, 1).
    pub lambda_lower: f64,
    pub causal: bool,
}

/// Innovation variance index: windowed ratio of the observed squared
/// (mean-removed) innovation to the filter's predicted innovation variance.
pub fn innovation_variance_index(
    trace: &InnovationTrace,
    fs: f64,
    cfg: &VarianceIndexConfig,
) -> Result<(Vec<f64>, EpochSet)> {
    if !(cfg.lambda_upper >= 1.0 && cfg.lambda_lower < 1.0 && cfg.lambda_lower >= 0.0) {
        return Err(NscaError::InvalidParameter(format!(
            "variance thresholds must satisfy lambda_upper >= 1 > lambda_lower >= 0, got {} / {}",
            cfg.lambda_upper, cfg.lambda_lower
        )));
    }
    let w = (cfg.w * fs).round() as usize;
    if w < 2 {
        return Err(NscaError::InvalidParameter(
            "variance window must be at least 2 samples".into(),
        ));
    }
    if w > trace.len() {
        return Err(NscaError::WindowTooLarge { window: w, len: trace.len() });
    }
    let w_mean = ((cfg.mean_removal_w * fs).round() as usize).max(1);
    let a = sliding_mean(&trace.values, w_mean, cfg.causal);
    let z: Vec<f64> = trace
        .values
        .iter()
        .zip(&a)
        .zip(&trace.predicted_variance)
        .map(|((&v, &m), &g)| (v - m) * (v - m) / g)
        .collect();
    let gamma = sliding_mean(&z, w, cfg.causal);
    let epochs = threshold_band(&gamma, cfg.lambda_upper, cfg.lambda_lower);
    Ok((gamma, epochs))
}

/// Configuration for the innovation whiteness (spectral color) index.
#[derive(Debug, Clone)]
pub struct WhitenessIndexConfig {
    /// Autocovariance estimation window in seconds.
    pub w_r: f64,
    /// Maximum lag in samples; the fit runs over tau = 1..=max_lag.
    pub max_lag: usize,
    /// Mean-removal window in seconds.
    pub mean_removal_w: f64,
    /// Threshold on |q(t)|.
    pub xi: f64,
    /// Threshold on |eps(t)|.
    pub kappa: f64,
    pub causal: bool,
}

/// Innovation whiteness index: per-sample autocovariance over a sliding
/// window, fitted with `q * exp(-tau/eps)` and thresholded on both fit
/// parameters.
pub fn innovation_whiteness_index(
    trace: &InnovationTrace,
    fs: f64,
    cfg: &WhitenessIndexConfig,
) -> Result<WhitenessResult> {
    if cfg.max_lag < 2 {
        return Err(NscaError::InvalidParameter("max_lag must be >= 2".into()));
    }
    let w_r = (cfg.w_r * fs).round() as usize;
    if w_r < 2 * cfg.max_lag {
        return Err(NscaError::InvalidParameter(format!(
            "whiteness window ({w_r} samples) must be >= 2 * max_lag ({})",
            cfg.max_lag
        )));
    }
    let n = trace.len();
    if w_r > n {
        return Err(NscaError::WindowTooLarge { window: w_r, len: n });
    }
    let w_mean = ((cfg.mean_removal_w * fs).round() as usize).max(1);
    let a = sliding_mean(&trace.values, w_mean, cfg.causal);
    let centered: Vec<f64> = trace.values.iter().zip(&a).map(|(&v, &m)| v - m).collect();
    // r(t, tau) = sliding mean of centered(s) * centered(s + tau); the
    // integer-lag form is an index shift of the half-sample centered
    // definition, identical up to boundary samples.
    let mut r_by_lag: Vec<Vec<f64>> = Vec::with_capacity(cfg.max_lag);
    for tau in 1..=cfg.max_lag {
        let mut prod = vec![0.0; n];
        for s in 0..n.saturating_sub(tau) {
            prod[s] = centered[s] * centered[s + tau];
        }
        r_by_lag.push(sliding_mean(&prod, w_r, cfg.causal));
    }
    let mut q = vec![0.0; n];
    let mut eps = vec![0.0; n];
    let mut failed_mask = vec![false; n];
    let mut r_vals = vec![0.0; cfg.max_lag];
    for t in 0..n {
        for (i, rl) in r_by_lag.iter().enumerate() {
            r_vals[i] = rl[t];
        }
        match fit_exponential_decay(&r_vals) {
            Some((qf, ef)) => {
                q[t] = qf;
                eps[t] = ef;
            }
            None => {
                failed_mask[t] = true;
                q[t] = 0.0;
                eps[t] = 0.0;
            }
        }
    }
    let mut mask_q = vec![false; n];
    let mut mask_eps = vec![false; n];
    for t in 0..n {
        if failed_mask[t] {
            continue;
        }
        mask_q[t] = q[t].abs() >= cfg.xi;
        mask_eps[t] = eps[t].abs() >= cfg.kappa;
    }
    Ok(WhitenessResult {
        fit: WhitenessFit { q, eps },
        epochs_q: EpochSet::from_mask(&mask_q),
        epochs_eps: EpochSet::from_mask(&mask_eps),
        failed: EpochSet::from_mask(&failed_mask),
    })
}

/// Fit `q * exp(-tau/eps)` to `r[tau-1]` for tau = 1..=max_lag: log-linear
/// initialization on the positive samples, then 10 Gauss-Newton refinement
/// steps with a positivity clamp on eps.
fn fit_exponential_decay(r: &[f64]) -> Option<(f64, f64)> {
    let m = r.len();
    let pos: Vec<(f64, f64)> = r
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| ((i + 1) as f64, v.ln()))
        .collect();
    if pos.len() < 2 {
        return None;
    }
    // linear regression ln r = ln q - tau / eps
    let np = pos.len() as f64;
    let sx: f64 = pos.iter().map(|p| p.0).sum();
    let sy: f64 = pos.iter().map(|p| p.1).sum();
    let sxx: f64 = pos.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pos.iter().map(|p| p.0 * p.1).sum();
    let denom = np * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    let slope = (np * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / np;
    let mut q = intercept.exp();
    let mut eps = if slope < -1e-12 { -1.0 / slope } else { 1e6 };
    eps = eps.clamp(1e-6, 1e6);
    // Gauss-Newton refinement on (q, eps)
    for _ in 0..10 {
        let mut jtj = [[0.0f64; 2]; 2];
        let mut jtr = [0.0f64; 2];
        for tau_i in 0..m {
            let tau = (tau_i + 1) as f64;
            let e = (-tau / eps).exp();
            let model = q * e;
            let res = model - r[tau_i];
            let dq = e;
            let de = q * e * tau / (eps * eps);
            jtj[0][0] += dq * dq;
            jtj[0][1] += dq * de;
            jtj[1][1] += de * de;
            jtr[0] += dq * res;
            jtr[1] += de * res;
        }
        jtj[1][0] = jtj[0][1];
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let dq = (jtj[1][1] * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let de = (-jtj[1][0] * jtr[0] + jtj[0][0] * jtr[1]) / det;
        q -= dq;
        eps -= de;
        if !q.is_finite() || !eps.is_finite() {
            return None;
        }
        eps = eps.clamp(1e-6, 1e6);
    }
    Some((q, eps))
}
