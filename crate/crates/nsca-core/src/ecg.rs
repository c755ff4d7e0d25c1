//! Gaussian-sum ECG dynamic model: R-peak detection, cardiac phase, beat
//! averaging, kernel fitting, a forward generator, and the extended Kalman
//! filter that produces the maternal ECG estimate and its innovation trace.

use crate::detectors::InnovationTrace;
use crate::error::{NscaError, Result};
use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Wrap an angle into (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x % TWO_PI;
    if y > PI {
        y -= TWO_PI;
    } else if y <= -PI {
        y += TWO_PI;
    }
    y
}

/// One Gaussian kernel of the sum-of-Gaussians ECG shape model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    /// Amplitude, in signal units.
    pub alpha: f64,
    /// Width in radians, strictly positive.
    pub b: f64,
    /// Center in radians, in (-pi, pi].
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernelSet {
    pub kernels: Vec<GaussianKernel>,
}

impl GaussianKernelSet {
    pub fn new(kernels: Vec<GaussianKernel>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(NscaError::InvalidParameter("kernel set is empty".into()));
        }
        for k in &kernels {
            if !(k.b > 0.0) || !k.b.is_finite() {
                return Err(NscaError::InvalidParameter(format!(
                    "kernel width must be positive, got {}",
                    k.b
                )));
            }
            if !(k.psi > -PI && k.psi <= PI) {
                return Err(NscaError::InvalidParameter(format!(
                    "kernel center must be in (-pi, pi], got {}",
                    k.psi
                )));
            }
            if !k.alpha.is_finite() {
                return Err(NscaError::NonFinite);
            }
        }
        Ok(Self { kernels })
    }

    pub fn count(&self) -> usize {
        self.kernels.len()
    }

    /// Waveform value at phase `phi`: sum of Gaussians in wrapped phase
    /// distance.
    pub fn value(&self, phi: f64) -> f64 {
        self.kernels
            .iter()
            .map(|k| {
                let d = wrap_phase(phi - k.psi);
                k.alpha * (-d * d / (2.0 * k.b * k.b)).exp()
            })
            .sum()
    }

    /// Derivative of the waveform with respect to phase.
    pub fn derivative(&self, phi: f64) -> f64 {
        self.kernels
            .iter()
            .map(|k| {
                let d = wrap_phase(phi - k.psi);
                -k.alpha * d / (k.b * k.b) * (-d * d / (2.0 * k.b * k.b)).exp()
            })
            .sum()
    }

    /// Second derivative of the waveform with respect to phase.
    pub fn second_derivative(&self, phi: f64) -> f64 {
        self.kernels
            .iter()
            .map(|k| {
                let d = wrap_phase(phi - k.psi);
                let b2 = k.b * k.b;
                -k.alpha / b2 * (1.0 - d * d / b2) * (-d * d / (2.0 * b2)).exp()
            })
            .sum()
    }

    /// Plain-text serialization: one kernel per line as `alpha b psi`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in &self.kernels {
            out.push_str(&format!("{:.17e} {:.17e} {:.17e}\n", k.alpha, k.b, k.psi));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kernels = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(NscaError::Parse(format!(
                    "kernel line {} needs 3 fields, got {}",
                    lineno + 1,
                    parts.len()
                )));
            }
            let vals: Vec<f64> = parts
                .iter()
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|e| NscaError::Parse(format!("line {}: {e}", lineno + 1)))
                })
                .collect::<Result<_>>()?;
            kernels.push(GaussianKernel { alpha: vals[0], b: vals[1], psi: vals[2] });
        }
        Self::new(kernels)
    }
}

/// Per-sample cardiac phase and normalized angular velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSignal {
    /// Phase in radians, wrapped to (-pi, pi]; zero at R-peaks.
    pub phi: Vec<f64>,
    /// Angular velocity in radians per sample, strictly positive.
    pub omega: Vec<f64>,
}

/// Local peak detector over a sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Auto,
    Positive,
    Negative,
}

/// Find R-peak candidates: local maxima (after polarity normalization) over a
/// window of `min_rr` seconds, with successive peaks at least `min_rr` apart.
pub fn detect_rpeaks_lpd(
    s: &[f64],
    fs: f64,
    min_rr: f64,
    polarity: Polarity,
) -> Result<Vec<usize>> {
    if !(fs > 0.0) {
        return Err(NscaError::InvalidParameter("fs must be positive".into()));
    }
    if min_rr < 0.2 {
        return Err(NscaError::InvalidParameter(format!(
            "min_rr must be at least 0.2 s, got {min_rr}"
        )));
    }
    let n = s.len();
    let half = ((min_rr / 2.0) * fs).round() as usize;
    if n == 0 || half == 0 || n < 2 * half {
        return Err(NscaError::NoPeaksFound);
    }
    let mean = s.iter().sum::<f64>() / n as f64;
    let mut centered: Vec<f64> = s.iter().map(|v| v - mean).collect();
    let flip = match polarity {
        Polarity::Positive => false,
        Polarity::Negative => true,
        Polarity::Auto => {
            let max = centered.iter().cloned().fold(f64::MIN, f64::max);
            let min = centered.iter().cloned().fold(f64::MAX, f64::min);
            min.abs() > max.abs()
        }
    };
    if flip {
        for v in &mut centered {
            *v = -*v;
        }
    }
    let std = (centered.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let threshold = 0.5 * std;
    let mut candidates: Vec<usize> = Vec::new();
    for t in 0..n {
        let v = centered[t];
        if v <= threshold {
            continue;
        }
        let lo = t.saturating_sub(half);
        let hi = (t + half + 1).min(n);
        let win_max = centered[lo..hi].iter().cloned().fold(f64::MIN, f64::max);
        if v < win_max {
            continue;
        }
        // plateau: keep only the first sample of a run of equal maxima
        if t > lo && centered[t - 1] == v {
            continue;
        }
        candidates.push(t);
    }
    // enforce minimum spacing, keeping the larger of close pairs
    let min_gap = (min_rr * fs).round() as usize;
    let mut peaks: Vec<usize> = Vec::new();
    for &c in &candidates {
        match peaks.last() {
            Some(&p) if c - p < min_gap => {
                if centered[c] > centered[p] {
                    *peaks.last_mut().unwrap() = c;
                }
            }
            _ => peaks.push(c),
        }
    }
    if peaks.is_empty() {
        return Err(NscaError::NoPeaksFound);
    }
    Ok(peaks)
}

/// Linear phase map between consecutive R-peaks: phase sweeps from 0 at one
/// peak to 2*pi at the next, wrapped to (-pi, pi]; omega is constant within
/// each R-R interval and extrapolated at the record edges.
pub fn phase_from_rpeaks(peaks: &[usize], n_samples: usize, _fs: f64) -> Result<PhaseSignal> {
    if peaks.len() < 2 {
        return Err(NscaError::TooFewPeaks { needed: 2, got: peaks.len() });
    }
    for w in peaks.windows(2) {
        if w[1] <= w[0] {
            return Err(NscaError::InvalidParameter("peaks must be strictly increasing".into()));
        }
    }
    if *peaks.last().unwrap() >= n_samples {
        return Err(NscaError::InvalidParameter("peak index outside signal".into()));
    }
    let mut phi = vec![0.0; n_samples];
    let mut omega = vec![0.0; n_samples];
    for w in peaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let om = TWO_PI / (b - a) as f64;
        for t in a..b {
            omega[t] = om;
            phi[t] = wrap_phase((t - a) as f64 * om);
        }
    }
    // leading edge: nearest interval's omega
    let om0 = TWO_PI / (peaks[1] - peaks[0]) as f64;
    for t in 0..peaks[0] {
        omega[t] = om0;
        phi[t] = wrap_phase((t as f64 - peaks[0] as f64) * om0);
    }
    let last = *peaks.last().unwrap();
    let om_last = TWO_PI / (last - peaks[peaks.len() - 2]) as f64;
    for t in last..n_samples {
        omega[t] = om_last;
        phi[t] = wrap_phase((t - last) as f64 * om_last);
    }
    Ok(PhaseSignal { phi, omega })
}

#[derive(Debug, Clone)]
pub struct AverageBeat {
    /// Per-bin mean, bin 0 centered on the R-peak (phase 0).
    pub mean_beat: Vec<f64>,
    /// Per-bin standard deviation over beats.
    pub std_beat: Vec<f64>,
    /// Bins that received no samples and were filled by interpolation.
    pub empty_bins: Vec<usize>,
}

/// Synchronous averaging of beats into phase bins.
pub fn average_beat(s: &[f64], peaks: &[usize], n_bins: usize) -> Result<AverageBeat> {
    if peaks.len() < 4 {
        return Err(NscaError::TooFewPeaks { needed: 4, got: peaks.len() });
    }
    if n_bins < 16 {
        return Err(NscaError::InvalidParameter("n_bins must be at least 16".into()));
    }
    let phase = phase_from_rpeaks(peaks, s.len(), 1.0)?;
    let first = peaks[0];
    let last = *peaks.last().unwrap();
    let mut sums = vec![0.0f64; n_bins];
    let mut counts = vec![0usize; n_bins];
    let bins: Vec<usize> = (first..last)
        .map(|t| {
            let pos = phase.phi[t].rem_euclid(TWO_PI); // [0, 2pi)
            ((pos / TWO_PI * n_bins as f64).round() as usize) % n_bins
        })
        .collect();
    for (t, &bin) in (first..last).zip(&bins) {
        sums[bin] += s[t];
        counts[bin] += 1;
    }
    let mut mean_beat = vec![0.0; n_bins];
    let mut std_beat = vec![0.0; n_bins];
    let mut empty_bins = Vec::new();
    for j in 0..n_bins {
        if counts[j] == 0 {
            empty_bins.push(j);
            continue;
        }
        mean_beat[j] = sums[j] / counts[j] as f64;
    }
    // second pass for the variance avoids cancellation on low-spread bins
    let mut devs = vec![0.0f64; n_bins];
    for (t, &bin) in (first..last).zip(&bins) {
        let d = s[t] - mean_beat[bin];
        devs[bin] += d * d;
    }
    for j in 0..n_bins {
        if counts[j] > 0 {
            std_beat[j] = (devs[j] / counts[j] as f64).sqrt();
        }
    }
    // fill empty bins by linear interpolation from circular neighbors
    for &j in &empty_bins {
        let mut lo = j;
        let mut hi = j;
        for _ in 0..n_bins {
            lo = (lo + n_bins - 1) % n_bins;
            if counts[lo] > 0 {
                break;
            }
        }
        for _ in 0..n_bins {
            hi = (hi + 1) % n_bins;
            if counts[hi] > 0 {
                break;
            }
        }
        if counts[lo] == 0 || counts[hi] == 0 {
            return Err(NscaError::InvalidParameter("all phase bins empty".into()));
        }
        let gap = ((hi + n_bins - lo) % n_bins) as f64;
        let off = ((j + n_bins - lo) % n_bins) as f64;
        let frac = off / gap;
        mean_beat[j] = mean_beat[lo] * (1.0 - frac) + mean_beat[hi] * frac;
        std_beat[j] = std_beat[lo] * (1.0 - frac) + std_beat[hi] * frac;
    }
    Ok(AverageBeat { mean_beat, std_beat, empty_bins })
}

#[derive(Debug, Clone)]
pub struct KernelFit {
    pub kernels: GaussianKernelSet,
    /// RMS of the waveform residual over the phase grid.
    pub residual_rms: f64,
    /// Cleared when Levenberg-Marquardt failed to improve on the
    /// initialization.
    pub converged: bool,
}

/// Fit a sum-of-Gaussians model to an average beat sampled on a uniform phase
/// grid (bin 0 at phase 0).
///
/// Initialization peels kernels greedily off the beat's largest residual
/// excursions; Levenberg-Marquardt then refines all parameters jointly.
pub fn fit_gaussian_kernels(mean_beat: &[f64], n_kernels: usize) -> Result<KernelFit> {
    let m = mean_beat.len();
    if !(1..=11).contains(&n_kernels) {
        return Err(NscaError::InvalidParameter(format!(
            "kernel count must be in [1, 11], got {n_kernels}"
        )));
    }
    if m < 16 {
        return Err(NscaError::InvalidParameter("beat grid too short".into()));
    }
    let peak = mean_beat.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let grid: Vec<f64> = (0..m).map(|j| wrap_phase(TWO_PI * j as f64 / m as f64)).collect();
    if peak == 0.0 {
        let kernels = (0..n_kernels)
            .map(|i| GaussianKernel {
                alpha: 0.0,
                b: 0.1,
                psi: wrap_phase(TWO_PI * i as f64 / n_kernels as f64),
            })
            .collect();
        return Ok(KernelFit {
            kernels: GaussianKernelSet::new(kernels)?,
            residual_rms: 0.0,
            converged: true,
        });
    }
    // greedy peeling: repeatedly seed a kernel at the residual's largest
    // excursion, with the width read off the half-maximum extent so broad
    // waves (T) and narrow ones (Q/R/S) both get sensible starts
    let mut params: Vec<f64> = Vec::with_capacity(3 * n_kernels);
    let mut resid = mean_beat.to_vec();
    let bin_width = TWO_PI / m as f64;
    for _ in 0..n_kernels {
        let j = (0..m)
            .max_by(|&a, &b| resid[a].abs().partial_cmp(&resid[b].abs()).unwrap())
            .unwrap();
        let (alpha, psi) = (resid[j], grid[j]);
        let mut half_extent = m / 2;
        for step in 1..m / 2 {
            let lo = resid[(j + m - step) % m].abs();
            let hi = resid[(j + step) % m].abs();
            if lo.min(hi) < 0.5 * alpha.abs() {
                half_extent = step;
                break;
            }
        }
        // half width at half maximum = b * sqrt(2 ln 2)
        let b = (half_extent as f64 * bin_width / (2.0 * (2f64).ln()).sqrt())
            .clamp(0.05, 1.0);
        params.push(alpha);
        params.push(b);
        params.push(psi);
        for (t, &phi) in grid.iter().enumerate() {
            let d = wrap_phase(phi - psi);
            resid[t] -= alpha * (-d * d / (2.0 * b * b)).exp();
        }
    }
    refit_amplitudes(&mut params, &grid, mean_beat);
    let init = params.clone();
    let init_cost = residual_cost(&init, &grid, mean_beat);
    let mut best = params;
    let mut best_cost = lm_refine(&mut best, &grid, mean_beat);
    // relocation restarts: when the fit is stuck, move the lowest-energy
    // kernel onto the largest remaining residual and polish again
    for _restart in 0..4 {
        if best_cost <= 1e-26 * peak * peak * m as f64 {
            break;
        }
        let mut trial = best.clone();
        let weakest = (0..n_kernels)
            .min_by(|&a, &b| {
                (trial[3 * a].abs() * trial[3 * a + 1])
                    .partial_cmp(&(trial[3 * b].abs() * trial[3 * b + 1]))
                    .unwrap()
            })
            .unwrap();
        let (mut jmax, mut rmax) = (0usize, 0.0f64);
        for (j, &phi) in grid.iter().enumerate() {
            let r = model_value(&trial, phi) - mean_beat[j];
            if r.abs() > rmax {
                rmax = r.abs();
                jmax = j;
            }
        }
        trial[3 * weakest] = -(model_value(&trial, grid[jmax]) - mean_beat[jmax]);
        trial[3 * weakest + 1] = 0.1;
        trial[3 * weakest + 2] = grid[jmax];
        refit_amplitudes(&mut trial, &grid, mean_beat);
        let trial_cost = lm_refine(&mut trial, &grid, mean_beat);
        if trial_cost < best_cost {
            best = trial;
            best_cost = trial_cost;
        }
    }
    let converged = best_cost <= init_cost;
    let final_params = if converged { &best } else { &init };
    let kernels: Vec<GaussianKernel> = final_params
        .chunks(3)
        .map(|c| GaussianKernel { alpha: c[0], b: c[1], psi: wrap_phase(c[2]) })
        .collect();
    Ok(KernelFit {
        kernels: GaussianKernelSet::new(kernels)?,
        residual_rms: (best_cost.min(init_cost) / m as f64).sqrt(),
        converged,
    })
}

fn residual_cost(p: &[f64], grid: &[f64], target: &[f64]) -> f64 {
    grid.iter()
        .zip(target)
        .map(|(&phi, &y)| {
            let r = model_value(p, phi) - y;
            r * r
        })
        .sum()
}

// The model is linear in the amplitudes: refit them by least squares with the
// widths and centers held fixed.
fn refit_amplitudes(params: &mut [f64], grid: &[f64], target: &[f64]) {
    let np = params.len() / 3;
    let m = grid.len();
    let basis: Vec<Vec<f64>> = (0..np)
        .map(|i| {
            grid.iter()
                .map(|&phi| {
                    let d = wrap_phase(phi - params[3 * i + 2]);
                    let b = params[3 * i + 1];
                    (-d * d / (2.0 * b * b)).exp()
                })
                .collect()
        })
        .collect();
    let mut gram = vec![vec![0.0f64; np]; np];
    let mut rhs = vec![0.0f64; np];
    for i in 0..np {
        for k in i..np {
            let v: f64 = (0..m).map(|t| basis[i][t] * basis[k][t]).sum();
            gram[i][k] = v;
            gram[k][i] = v;
        }
        rhs[i] = (0..m).map(|t| basis[i][t] * target[t]).sum();
    }
    if let Some(alphas) = solve_dense(&mut gram, &rhs) {
        if alphas.iter().all(|a| a.is_finite()) {
            for i in 0..np {
                params[3 * i] = alphas[i];
            }
        }
    }
}

// Levenberg-Marquardt descent on the full parameter vector; returns the final
// squared-residual cost.
fn lm_refine(params: &mut Vec<f64>, grid: &[f64], target: &[f64]) -> f64 {
    let np = params.len();
    let mut cost = residual_cost(params, grid, target);
    let mut lambda = 1e-3;
    for _iter in 0..400 {
        let mut jtj = vec![vec![0.0f64; np]; np];
        let mut jtr = vec![0.0f64; np];
        for (j, &phi) in grid.iter().enumerate() {
            let r = model_value(params, phi) - target[j];
            let grad = model_gradient(params, phi);
            for a in 0..np {
                jtr[a] += grad[a] * r;
                for b in a..np {
                    jtj[a][b] += grad[a] * grad[b];
                }
            }
        }
        for a in 0..np {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }
        let mut improved = false;
        for _try in 0..12 {
            let mut lhs = jtj.clone();
            for (a, row) in lhs.iter_mut().enumerate() {
                row[a] += lambda * (jtj[a][a].max(1e-12));
            }
            if let Some(step) = solve_dense(&mut lhs, &jtr) {
                let mut trial = params.clone();
                for a in 0..np {
                    trial[a] -= step[a];
                }
                clamp_params(&mut trial);
                let trial_cost = residual_cost(&trial, grid, target);
                if trial_cost < cost {
                    *params = trial;
                    cost = trial_cost;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    cost
}

fn model_value(p: &[f64], phi: f64) -> f64 {
    p.chunks(3)
        .map(|c| {
            let d = wrap_phase(phi - c[2]);
            c[0] * (-d * d / (2.0 * c[1] * c[1])).exp()
        })
        .sum()
}

fn model_gradient(p: &[f64], phi: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(p.len());
    for c in p.chunks(3) {
        let (alpha, b, psi) = (c[0], c[1], c[2]);
        let d = wrap_phase(phi - psi);
        let e = (-d * d / (2.0 * b * b)).exp();
        g.push(e);
        g.push(alpha * e * d * d / (b * b * b));
        g.push(alpha * e * d / (b * b));
    }
    g
}

fn clamp_params(p: &mut [f64]) {
    for c in p.chunks_mut(3) {
        c[1] = c[1].abs().max(1e-3);
        c[2] = wrap_phase(c[2]);
    }
}

// Gaussian elimination with partial pivoting; lhs is consumed.
fn solve_dense(lhs: &mut [Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if lhs[r][col].abs() > lhs[piv][col].abs() {
                piv = r;
            }
        }
        if lhs[piv][col].abs() < 1e-300 {
            return None;
        }
        lhs.swap(col, piv);
        b.swap(col, piv);
        for r in (col + 1)..n {
            let f = lhs[r][col] / lhs[col][col];
            for c in col..n {
                lhs[r][c] -= f * lhs[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in (r + 1)..n {
            acc -= lhs[r][c] * x[c];
        }
        x[r] = acc / lhs[r][r];
    }
    Some(x)
}

#[derive(Debug, Clone)]
pub struct SynthesizedEcg {
    pub signal: Vec<f64>,
    pub rpeaks: Vec<usize>,
    pub phase: PhaseSignal,
}

/// Noise-free forward generator: the phase advances by omega per sample
/// (beat-wise heart rate) and the waveform is the Gaussian sum evaluated at
/// the integrated phase. R instants are the zero crossings of the wrapped
/// phase.
pub fn synthesize_ecg(
    kernels: &GaussianKernelSet,
    hr_profile: &[f64],
    fs: f64,
    duration: f64,
) -> Result<SynthesizedEcg> {
    if hr_profile.is_empty() {
        return Err(NscaError::InvalidParameter("empty heart-rate profile".into()));
    }
    for &hr in hr_profile {
        if !(0.5..=4.5).contains(&hr) {
            return Err(NscaError::InvalidParameter(format!(
                "heart rate {hr} Hz outside [0.5, 4.5]"
            )));
        }
    }
    if !(fs > 0.0 && duration > 0.0) {
        return Err(NscaError::InvalidParameter("fs and duration must be positive".into()));
    }
    let n = (duration * fs).round() as usize;
    let mut signal = vec![0.0; n];
    let mut phi = vec![0.0; n];
    let mut omega = vec![0.0; n];
    let mut rpeaks = Vec::new();
    // unwrapped phase starts mid-diastole so the first R-peak falls inside
    // the record
    let mut theta = -PI;
    let mut beat = 0usize;
    let mut next_crossing = 0.0f64;
    for t in 0..n {
        let hr = hr_profile[beat % hr_profile.len()];
        let om = TWO_PI * hr / fs;
        omega[t] = om;
        phi[t] = wrap_phase(theta);
        signal[t] = kernels.value(phi[t]);
        // tolerance absorbs accumulated floating-point error so exact-period
        // rhythms cross on the exact sample
        if theta - next_crossing >= -1e-9 {
            rpeaks.push(t);
            next_crossing += TWO_PI;
            beat += 1;
        }
        theta += om;
    }
    Ok(SynthesizedEcg {
        signal,
        rpeaks,
        phase: PhaseSignal { phi, omega },
    })
}

/// Extended Kalman filter configuration (state: cardiac phase and mECG
/// amplitude).
#[derive(Debug, Clone, Copy)]
pub struct EkfConfig {
    /// Process-noise variance of the mECG amplitude state, per sample.
    pub q_process: f64,
    /// Process-noise variance of the phase state, per sample (may be zero).
    pub q_phase: f64,
    /// Observation noise variance of the ECG measurement.
    pub r_ecg: f64,
    /// Observation noise variance of the phase measurement.
    pub r_phase: f64,
    /// Variance allotted to kernel-amplitude deviations inside the linearized
    /// process noise.
    pub kernel_param_noise: f64,
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_process > 0.0 && self.r_ecg > 0.0 && self.r_phase > 0.0) {
            return Err(NscaError::InvalidParameter(
                "q_process, r_ecg and r_phase must be positive".into(),
            ));
        }
        if self.q_phase < 0.0 || self.kernel_param_noise < 0.0 {
            return Err(NscaError::InvalidParameter(
                "q_phase and kernel_param_noise must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Calibrate noise levels from the synchronous beat statistics: the ECG
    /// observation noise from the residual against the averaged beat, the
    /// amplitude process noise from the beat-to-beat variability spread over
    /// one beat, and the phase process noise from the spread of the R-R
    /// derived angular velocity.
    pub fn from_beat_stats(
        x: &[f64],
        phase: &PhaseSignal,
        beat: &AverageBeat,
    ) -> Result<Self> {
        let n_bins = beat.mean_beat.len();
        let mut resid_acc = 0.0;
        for (t, &v) in x.iter().enumerate() {
            let pos = phase.phi[t].rem_euclid(TWO_PI);
            let bin = ((pos / TWO_PI * n_bins as f64).round() as usize) % n_bins;
            let r = v - beat.mean_beat[bin];
            resid_acc += r * r;
        }
        let r_ecg = (resid_acc / x.len() as f64).max(1e-12);
        let mean_var =
            beat.std_beat.iter().map(|s| s * s).sum::<f64>() / n_bins as f64;
        let om_mean = phase.omega.iter().sum::<f64>() / phase.omega.len() as f64;
        let beat_len = (TWO_PI / om_mean).max(1.0);
        let q_process = (mean_var / beat_len).max(1e-14);
        let om_sq = phase.omega.iter().map(|o| o * o).sum::<f64>() / phase.omega.len() as f64;
        let q_phase = (om_sq - om_mean * om_mean).max(0.0);
        Ok(Self {
            q_process,
            q_phase,
            r_ecg,
            r_phase: 0.05 * 0.05,
            kernel_param_noise: q_process,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EkfOutput {
    /// Posterior mECG estimate per sample.
    pub mecg_estimate: Vec<f64>,
    /// Innovation x(t) - x_hat(t) with the predicted innovation variance.
    pub innovation: InnovationTrace,
    /// Trace of the posterior state covariance per sample.
    pub state_cov_trace: Vec<f64>,
    /// Set when the covariance trace exceeded 1e6 times its initial value.
    pub diverged: bool,
}

/// State-transition value and Jacobian of the Gaussian-sum process model at
/// state (psi, z) with angular velocity omega.
pub fn state_transition(
    kernels: &GaussianKernelSet,
    psi: f64,
    z: f64,
    omega: f64,
) -> ((f64, f64), [[f64; 2]; 2]) {
    let psi_next = wrap_phase(psi + omega);
    let z_next = z + omega * kernels.derivative(psi);
    let dz_dpsi = omega * kernels.second_derivative(psi);
    ((psi_next, z_next), [[1.0, 0.0], [dz_dpsi, 1.0]])
}

/// EKF over the (phase, mECG amplitude) state with (phase, ECG) observations.
///
/// The fetal component and noise are never modeled in the filter; they
/// surface in the innovation, which is what the nonstationarity detectors
/// consume.
pub fn ekf_mecg(
    x: &[f64],
    phase: &PhaseSignal,
    kernels: &GaussianKernelSet,
    cfg: &EkfConfig,
) -> Result<EkfOutput> {
    cfg.validate()?;
    let n = x.len();
    if phase.phi.len() != n {
        return Err(NscaError::DimensionMismatch(
            "signal and phase lengths differ".into(),
        ));
    }
    if n == 0 {
        return Err(NscaError::EmptySignal);
    }
    // posterior state and covariance
    let mut psi = phase.phi[0];
    let mut z = x[0];
    let mut p = [[0.1, 0.0], [0.0, 10.0 * cfg.r_ecg]];
    let initial_trace = p[0][0] + p[1][1];
    let mut mecg = vec![0.0; n];
    let mut innov = vec![0.0; n];
    let mut gamma = vec![0.0; n];
    let mut cov_trace = vec![0.0; n];
    let mut diverged = false;
    for t in 0..n {
        // predict (the initial state serves as the prior at t = 0)
        let (prior, a) = if t == 0 {
            ((psi, z), [[1.0, 0.0], [0.0, 1.0]])
        } else {
            state_transition(kernels, psi, z, phase.omega[t - 1])
        };
        let (psi_p, z_p) = prior;
        // kernel-amplitude deviations enter the linearized process noise
        // through d z'/d alpha_i = omega * d/d alpha of the derivative term
        let mut q_kernel = 0.0;
        if t > 0 && cfg.kernel_param_noise > 0.0 {
            let om = phase.omega[t - 1];
            for k in &kernels.kernels {
                let d = wrap_phase(psi - k.psi);
                let g = -d / (k.b * k.b) * (-d * d / (2.0 * k.b * k.b)).exp();
                q_kernel += (om * g) * (om * g) * cfg.kernel_param_noise;
            }
        }
        let q = [[cfg.q_phase, 0.0], [0.0, cfg.q_process + q_kernel]];
        let mut pp = mat_add(&mat_mul(&mat_mul(&a, &p), &transpose(&a)), &q);
        symmetrize(&mut pp);
        // innovation (H = I)
        let v_phi = wrap_phase(phase.phi[t] - psi_p);
        let v_x = x[t] - z_p;
        let s00 = pp[0][0] + cfg.r_phase;
        let s11 = pp[1][1] + cfg.r_ecg;
        let s01 = pp[0][1];
        innov[t] = v_x;
        gamma[t] = s11;
        // gain K = P S^-1
        let det = s00 * s11 - s01 * s01;
        if det.abs() < 1e-300 {
            return Err(NscaError::InvalidParameter(
                "singular innovation covariance".into(),
            ));
        }
        let sinv = [[s11 / det, -s01 / det], [-s01 / det, s00 / det]];
        let k = mat_mul(&pp, &sinv);
        psi = wrap_phase(psi_p + k[0][0] * v_phi + k[0][1] * v_x);
        z = z_p + k[1][0] * v_phi + k[1][1] * v_x;
        // Joseph-form covariance update
        let ik = [[1.0 - k[0][0], -k[0][1]], [-k[1][0], 1.0 - k[1][1]]];
        let r = [[cfg.r_phase, 0.0], [0.0, cfg.r_ecg]];
        let mut pu = mat_add(
            &mat_mul(&mat_mul(&ik, &pp), &transpose(&ik)),
            &mat_mul(&mat_mul(&k, &r), &transpose(&k)),
        );
        symmetrize(&mut pu);
        p = pu;
        mecg[t] = z;
        cov_trace[t] = p[0][0] + p[1][1];
        if cov_trace[t] > 1e6 * initial_trace {
            diverged = true;
        }
    }
    Ok(EkfOutput {
        mecg_estimate: mecg,
        innovation: InnovationTrace::new(innov, gamma)?,
        state_cov_trace: cov_trace,
        diverged,
    })
}

type Mat2 = [[f64; 2]; 2];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn mat_add(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn symmetrize(a: &mut Mat2) {
    let v = 0.5 * (a[0][1] + a[1][0]);
    a[0][1] = v;
    a[1][0] = v;
}

/// A 7-kernel adult ECG morphology (P, Q, R, S, T waves) used as the default
/// maternal shape in synthetic mixtures.
pub fn default_maternal_kernels() -> GaussianKernelSet {
    GaussianKernelSet::new(vec![
        GaussianKernel { alpha: 0.08, b: 0.25, psi: -1.05 },  // P
        GaussianKernel { alpha: -0.11, b: 0.10, psi: -0.25 }, // Q
        GaussianKernel { alpha: 1.00, b: 0.10, psi: 0.0 },    // R
        GaussianKernel { alpha: -0.14, b: 0.10, psi: 0.25 },  // S
        GaussianKernel { alpha: 0.05, b: 0.30, psi: 0.90 },   // ST
        GaussianKernel { alpha: 0.25, b: 0.40, psi: 1.60 },   // T
        GaussianKernel { alpha: 0.02, b: 0.60, psi: 2.60 },   // baseline tail
    ])
    .expect("static kernel set is valid")
}

/// A narrower, lower-amplitude morphology used as the default fetal shape.
pub fn default_fetal_kernels() -> GaussianKernelSet {
    GaussianKernelSet::new(vec![
        GaussianKernel { alpha: -0.08, b: 0.08, psi: -0.22 },
        GaussianKernel { alpha: 1.00, b: 0.07, psi: 0.0 },
        GaussianKernel { alpha: -0.10, b: 0.08, psi: 0.22 },
        GaussianKernel { alpha: 0.12, b: 0.30, psi: 1.40 },
    ])
    .expect("static kernel set is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn wrap_phase_range() {
        for &x in &[-10.0, -PI, 0.0, PI, 3.5, 100.0, -100.0] {
            let y = wrap_phase(x);
            assert!(y > -PI && y <= PI, "wrap({x}) = {y}");
        }
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
    }

    #[test]
    fn rpeaks_on_clean_synthetic_ecg() {
        let k = default_maternal_kernels();
        let out = synthesize_ecg(&k, &[1.0], 500.0, 10.0).unwrap();
        let peaks = detect_rpeaks_lpd(&out.signal, 500.0, 0.3, Polarity::Auto).unwrap();
        assert_eq!(peaks.len(), out.rpeaks.len());
        for (got, truth) in peaks.iter().zip(&out.rpeaks) {
            assert!(
                (*got as i64 - *truth as i64).abs() <= 2,
                "peak {got} vs truth {truth}"
            );
        }
    }

    #[test]
    fn rpeaks_dc_signal_is_error() {
        let s = vec![2.5; 1000];
        assert!(matches!(
            detect_rpeaks_lpd(&s, 500.0, 0.3, Polarity::Auto),
            Err(NscaError::NoPeaksFound)
        ));
    }

    #[test]
    fn rpeaks_two_impulses() {
        let mut s = vec![0.0; 1000];
        s[200] = 1.0;
        s[450] = 1.0; // 0.5 s apart at fs 500
        let peaks = detect_rpeaks_lpd(&s, 500.0, 0.3, Polarity::Auto).unwrap();
        assert_eq!(peaks, vec![200, 450]);
    }

    #[test]
    fn rpeaks_negative_polarity() {
        let mut s = vec![0.0; 1000];
        s[300] = -1.0;
        s[600] = -1.0;
        let peaks = detect_rpeaks_lpd(&s, 500.0, 0.3, Polarity::Auto).unwrap();
        assert_eq!(peaks, vec![300, 600]);
    }

    #[test]
    fn phase_uniform_rhythm() {
        let peaks: Vec<usize> = (0..5).map(|i| i * 500).collect();
        let p = phase_from_rpeaks(&peaks, 2500, 500.0).unwrap();
        for t in 0..2500 {
            assert!((p.omega[t] - TWO_PI / 500.0).abs() < 1e-15);
        }
        for &pk in &peaks {
            assert_eq!(p.phi[pk], 0.0);
        }
    }

    #[test]
    fn phase_piecewise_omega() {
        let peaks = vec![0usize, 400, 1000];
        let p = phase_from_rpeaks(&peaks, 1100, 500.0).unwrap();
        assert!((p.omega[100] - TWO_PI / 400.0).abs() < 1e-15);
        assert!((p.omega[700] - TWO_PI / 600.0).abs() < 1e-15);
    }

    #[test]
    fn phase_unwrap_consistency() {
        let peaks = vec![10usize, 350, 780, 1200];
        let p = phase_from_rpeaks(&peaks, 1300, 500.0).unwrap();
        // cumulative omega matches unwrapped phi within each interval
        for w in peaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mut acc = 0.0;
            for t in a..b {
                let diff = wrap_phase(p.phi[t] - acc);
                assert!(diff.abs() < 1e-9, "t={t} diff={diff}");
                acc += p.omega[t];
            }
        }
    }

    #[test]
    fn average_beat_identical_beats() {
        let k = default_maternal_kernels();
        let out = synthesize_ecg(&k, &[1.0], 500.0, 12.0).unwrap();
        // one bin per sample of the 500-sample beat: every bin then collects
        // the same phase offset from every beat and the std must vanish
        let beat = average_beat(&out.signal, &out.rpeaks, 500).unwrap();
        for (j, &s) in beat.std_beat.iter().enumerate() {
            assert!(s < 1e-9, "bin {j} std {s}");
        }
        // mean beat equals one beat resampled on the phase grid
        for (j, &m) in beat.mean_beat.iter().enumerate() {
            let phi = wrap_phase(TWO_PI * j as f64 / 500.0);
            assert!((m - k.value(phi)).abs() <= 1e-9, "bin {j}");
        }
    }

    #[test]
    fn average_beat_noise_std_recovered() {
        let k = default_maternal_kernels();
        let fs = 500.0;
        let out = synthesize_ecg(&k, &[1.0], fs, 100.0).unwrap();
        let mut r = rng(5);
        let sigma = 0.1;
        let normal = Normal::new(0.0, sigma).unwrap();
        let noisy: Vec<f64> = out.signal.iter().map(|v| v + normal.sample(&mut r)).collect();
        let beat = average_beat(&noisy, &out.rpeaks, 250).unwrap();
        let mean_std = beat.std_beat.iter().sum::<f64>() / 250.0;
        assert!(
            (mean_std - sigma).abs() / sigma < 0.15,
            "mean std {mean_std} vs {sigma}"
        );
    }

    #[test]
    fn kernel_fit_single_gaussian_exact() {
        let truth = GaussianKernelSet::new(vec![GaussianKernel {
            alpha: 0.8,
            b: 0.3,
            psi: 0.4,
        }])
        .unwrap();
        let m = 250;
        let beat: Vec<f64> = (0..m)
            .map(|j| truth.value(wrap_phase(TWO_PI * j as f64 / m as f64)))
            .collect();
        let fit = fit_gaussian_kernels(&beat, 1).unwrap();
        assert!(fit.converged);
        let k = fit.kernels.kernels[0];
        assert!((k.alpha - 0.8).abs() < 1e-6);
        assert!((k.b - 0.3).abs() < 1e-6);
        assert!((k.psi - 0.4).abs() < 1e-6);
    }

    #[test]
    fn kernel_fit_five_gaussians_waveform() {
        let truth = GaussianKernelSet::new(vec![
            GaussianKernel { alpha: 0.1, b: 0.25, psi: -1.1 },
            GaussianKernel { alpha: -0.15, b: 0.12, psi: -0.3 },
            GaussianKernel { alpha: 1.0, b: 0.11, psi: 0.0 },
            GaussianKernel { alpha: -0.2, b: 0.12, psi: 0.3 },
            GaussianKernel { alpha: 0.3, b: 0.35, psi: 1.5 },
        ])
        .unwrap();
        let m = 250;
        let grid: Vec<f64> = (0..m).map(|j| wrap_phase(TWO_PI * j as f64 / m as f64)).collect();
        let beat: Vec<f64> = grid.iter().map(|&p| truth.value(p)).collect();
        let fit = fit_gaussian_kernels(&beat, 5).unwrap();
        let peak = beat.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let rms = (grid
            .iter()
            .zip(&beat)
            .map(|(&p, &y)| {
                let e = fit.kernels.value(p) - y;
                e * e
            })
            .sum::<f64>()
            / m as f64)
            .sqrt();
        assert!(rms < 1e-6 * peak, "waveform RMS {rms} vs peak {peak}");
    }

    #[test]
    fn kernel_fit_zero_beat() {
        let fit = fit_gaussian_kernels(&vec![0.0; 100], 3).unwrap();
        assert_eq!(fit.residual_rms, 0.0);
        assert!(fit.kernels.kernels.iter().all(|k| k.alpha == 0.0));
    }

    #[test]
    fn synthesize_periodicity() {
        let k = GaussianKernelSet::new(vec![GaussianKernel { alpha: 1.0, b: 0.2, psi: 0.0 }])
            .unwrap();
        let out = synthesize_ecg(&k, &[1.0], 500.0, 4.0).unwrap();
        for w in out.rpeaks.windows(2) {
            assert_eq!(w[1] - w[0], 500);
        }
        // samples match the closed-form Gaussian sum at the integrated phase
        for t in 0..out.signal.len() {
            assert!((out.signal[t] - k.value(out.phase.phi[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn synthesize_amplitude_linearity() {
        let k1 = default_fetal_kernels();
        let scaled: Vec<GaussianKernel> = k1
            .kernels
            .iter()
            .map(|k| GaussianKernel { alpha: 2.5 * k.alpha, ..*k })
            .collect();
        let k2 = GaussianKernelSet::new(scaled).unwrap();
        let a = synthesize_ecg(&k1, &[2.0], 500.0, 3.0).unwrap();
        let b = synthesize_ecg(&k2, &[2.0], 500.0, 3.0).unwrap();
        for t in 0..a.signal.len() {
            assert!((b.signal[t] - 2.5 * a.signal[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let k = default_maternal_kernels();
        let mut r = rng(9);
        let omega = TWO_PI * 1.2 / 500.0;
        for _ in 0..100 {
            let psi = r.gen::<f64>() * TWO_PI - PI;
            let z = r.gen::<f64>() * 2.0 - 1.0;
            let (_, jac) = state_transition(&k, psi, z, omega);
            let h = 1e-6;
            let ((_, zp), _) = state_transition(&k, psi + h, z, omega);
            let ((_, zm), _) = state_transition(&k, psi - h, z, omega);
            let fd = (zp - zm) / (2.0 * h);
            let scale = jac[1][0].abs().max(1e-3);
            assert!(
                (jac[1][0] - fd).abs() <= 1e-6 * scale + 1e-9,
                "psi={psi}: analytic {} vs fd {fd}",
                jac[1][0]
            );
            // z column is exactly the identity
            assert_eq!(jac[1][1], 1.0);
            assert_eq!(jac[0][1], 0.0);
        }
    }

    #[test]
    fn ekf_innovation_consistency_on_matched_data() {
        let k = default_maternal_kernels();
        let fs = 500.0;
        let out = synthesize_ecg(&k, &[1.2], fs, 20.0).unwrap();
        let sigma = 0.05;
        let mut r = rng(21);
        let normal = Normal::new(0.0, sigma).unwrap();
        let noisy: Vec<f64> = out.signal.iter().map(|v| v + normal.sample(&mut r)).collect();
        let cfg = EkfConfig {
            q_process: 1e-6,
            q_phase: 1e-10,
            r_ecg: sigma * sigma,
            r_phase: 1e-4,
            kernel_param_noise: 1e-6,
        };
        let res = ekf_mecg(&noisy, &out.phase, &k, &cfg).unwrap();
        assert!(!res.diverged);
        let n = res.innovation.values.len();
        let skip = 500; // transient
        let v = &res.innovation.values[skip..];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        let std = var.sqrt();
        // P1
        assert!(mean.abs() <= 3.0 * std / (v.len() as f64).sqrt() * 3.0, "mean {mean} std {std}");
        // P2
        let gbar = res.innovation.predicted_variance[skip..].iter().sum::<f64>()
            / (n - skip) as f64;
        let ratio = var / gbar;
        assert!((0.8..=1.2).contains(&ratio), "variance ratio {ratio}");
        // P3: normalized autocorrelation small at lags 1..10
        for tau in 1..=10 {
            let mut acc = 0.0;
            for t in 0..v.len() - tau {
                acc += (v[t] - mean) * (v[t + tau] - mean);
            }
            acc /= (v.len() - tau) as f64;
            assert!(acc.abs() / var <= 0.1, "lag {tau}: {}", acc.abs() / var);
        }
    }

    #[test]
    fn ekf_detects_injected_bump() {
        let k = default_maternal_kernels();
        let fs = 500.0;
        let out = synthesize_ecg(&k, &[1.2], fs, 10.0).unwrap();
        let sigma = 0.02;
        let mut r = rng(31);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut noisy: Vec<f64> =
            out.signal.iter().map(|v| v + normal.sample(&mut r)).collect();
        // 50 ms bump at a known instant
        let t0 = 2600usize;
        let w = (0.05 * fs) as usize;
        for i in 0..w {
            let ph = (i as f64 / w as f64 - 0.5) * PI;
            noisy[t0 + i] += 0.5 * ph.cos().powi(2);
        }
        let cfg = EkfConfig {
            q_process: 1e-6,
            q_phase: 1e-10,
            r_ecg: sigma * sigma,
            r_phase: 1e-4,
            kernel_param_noise: 1e-6,
        };
        let res = ekf_mecg(&noisy, &out.phase, &k, &cfg).unwrap();
        let v = &res.innovation.values;
        let bg: Vec<f64> = (500..2500).map(|t| v[t]).collect();
        let bg_std = (bg.iter().map(|x| x * x).sum::<f64>() / bg.len() as f64).sqrt();
        let peak_in_bump = (t0..t0 + w).map(|t| v[t].abs()).fold(0.0f64, f64::max);
        assert!(
            peak_in_bump > 3.0 * bg_std,
            "bump innovation {peak_in_bump} vs background std {bg_std}"
        );
    }

    #[test]
    fn ekf_perfect_measurement_limit() {
        let k = default_maternal_kernels();
        let out = synthesize_ecg(&k, &[1.0], 500.0, 5.0).unwrap();
        let cfg = EkfConfig {
            q_process: 1e-8,
            q_phase: 0.0,
            r_ecg: 1e-12,
            r_phase: 1e-6,
            kernel_param_noise: 0.0,
        };
        let res = ekf_mecg(&out.signal, &out.phase, &k, &cfg).unwrap();
        let err: f64 = res
            .mecg_estimate
            .iter()
            .zip(&out.signal)
            .skip(100)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max posterior error {err}");
    }

    #[test]
    fn ekf_covariance_stays_psd() {
        let k = default_maternal_kernels();
        let out = synthesize_ecg(&k, &[1.5], 500.0, 5.0).unwrap();
        let cfg = EkfConfig {
            q_process: 1e-4,
            q_phase: 1e-8,
            r_ecg: 1e-3,
            r_phase: 1e-4,
            kernel_param_noise: 1e-4,
        };
        let res = ekf_mecg(&out.signal, &out.phase, &k, &cfg).unwrap();
        for &tr in &res.state_cov_trace {
            assert!(tr >= 0.0 && tr.is_finite());
        }
        assert!(!res.diverged);
    }

    #[test]
    fn kernel_text_round_trip() {
        let k = default_maternal_kernels();
        let text = k.to_text();
        let back = GaussianKernelSet::from_text(&text).unwrap();
        assert_eq!(k, back);
    }
}
