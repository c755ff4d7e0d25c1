//! Signal containers, epoch sets, sliding-window power and covariance estimation.

use crate::error::{NscaError, Result};
use ndarray::{Array1, Array2, ArrayView1};

/// Uniformly sampled multichannel real time series.
///
/// Data is stored channel-major: `data[[k, t]]` is channel `k` at sample `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSignal {
    data: Array2<f64>,
    fs: f64,
}

impl MultichannelSignal {
    pub fn new(data: Array2<f64>, fs: f64) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(NscaError::EmptySignal);
        }
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(NscaError::InvalidParameter(format!(
                "sampling rate must be positive, got {fs}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NscaError::NonFinite);
        }
        Ok(Self { data, fs })
    }

    pub fn from_channels(channels: &[Vec<f64>], fs: f64) -> Result<Self> {
        if channels.is_empty() || channels[0].is_empty() {
            return Err(NscaError::EmptySignal);
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(NscaError::DimensionMismatch(
                "channels have different lengths".into(),
            ));
        }
        let mut data = Array2::zeros((channels.len(), n));
        for (k, ch) in channels.iter().enumerate() {
            for (t, &v) in ch.iter().enumerate() {
                data[[k, t]] = v;
            }
        }
        Self::new(data, fs)
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn channel(&self, k: usize) -> ArrayView1<'_, f64> {
        self.data.row(k)
    }
}

/// Set of discrete-time sample indexes flagged as nonstationary.
///
/// Stored as sorted, non-overlapping half-open runs `[start, end)` so that set
/// algebra on sparse epochs is linear in the number of runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochSet {
    runs: Vec<(usize, usize)>,
    horizon: usize,
}

impl EpochSet {
    pub fn empty(horizon: usize) -> Self {
        Self { runs: Vec::new(), horizon }
    }

    pub fn full(horizon: usize) -> Self {
        if horizon == 0 {
            return Self::empty(0);
        }
        Self { runs: vec![(0, horizon)], horizon }
    }

    /// Build from an arbitrary iterator of sample indexes. Out-of-range
    /// indexes are rejected; duplicates are merged.
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I, horizon: usize) -> Result<Self> {
        let mut idx: Vec<usize> = indices.into_iter().collect();
        idx.sort_unstable();
        idx.dedup();
        if let Some(&last) = idx.last() {
            if last >= horizon {
                return Err(NscaError::InvalidParameter(format!(
                    "epoch index {last} outside horizon {horizon}"
                )));
            }
        }
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for i in idx {
            match runs.last_mut() {
                Some((_, end)) if *end == i => *end += 1,
                _ => runs.push((i, i + 1)),
            }
        }
        Ok(Self { runs, horizon })
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &m) in mask.iter().enumerate() {
            match (m, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, mask.len()));
        }
        Self { runs, horizon: mask.len() }
    }

    pub fn from_runs(runs: Vec<(usize, usize)>, horizon: usize) -> Result<Self> {
        let mut mask = vec![false; horizon];
        for &(s, e) in &runs {
            if s > e || e > horizon {
                return Err(NscaError::InvalidParameter(format!(
                    "invalid run [{s}, {e}) for horizon {horizon}"
                )));
            }
            for m in &mut mask[s..e] {
                *m = true;
            }
        }
        Ok(Self::from_mask(&mask))
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.runs.iter().map(|&(s, e)| e - s).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.runs
            .binary_search_by(|&(s, e)| {
                if t < s {
                    std::cmp::Ordering::Greater
                } else if t >= e {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .is_ok()
    }

    pub fn runs(&self) -> &[(usize, usize)] {
        &self.runs
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.runs.iter().flat_map(|&(s, e)| s..e)
    }

    pub fn to_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.horizon];
        for &(s, e) in &self.runs {
            for m in &mut mask[s..e] {
                *m = true;
            }
        }
        mask
    }

    /// Fraction of the horizon covered by this set.
    pub fn coverage(&self) -> f64 {
        if self.horizon == 0 {
            0.0
        } else {
            self.len() as f64 / self.horizon as f64
        }
    }
}

/// Real symmetric n x n matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    entries: Array2<f64>,
}

impl SymmetricMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(NscaError::DimensionMismatch(format!(
                "{}x{} matrix is not square",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let scale = entries.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let n = entries.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (entries[[i, j]] - entries[[j, i]]).abs() > 1e-12 * scale.max(1e-300) {
                    return Err(NscaError::InvalidParameter(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        // symmetrize exactly
        let mut m = entries;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[[i, j]] + m[[j, i]]);
                m[[i, j]] = v;
                m[[j, i]] = v;
            }
        }
        Ok(Self { entries: m })
    }

    pub fn identity(n: usize) -> Self {
        Self { entries: Array2::eye(n) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.diag().sum()
    }
}

/// Result of restricted covariance estimation; `rank_warning` is set when the
/// epoch set is smaller than the channel count.
#[derive(Debug, Clone)]
pub struct EpochCovariance {
    pub matrix: SymmetricMatrix,
    pub rank_warning: bool,
}

/// Covariance over all samples, `(1/|T|) sum_t x(t) x(t)^T`, per-channel mean
/// removed when `remove_mean` is on (the default in the pipeline).
pub fn covariance_full_opts(x: &MultichannelSignal, remove_mean: bool) -> Result<SymmetricMatrix> {
    let n = x.n_channels();
    let t = x.n_samples();
    if t < n {
        return Err(NscaError::InvalidParameter(format!(
            "need at least {n} samples for a {n}-channel covariance, got {t}"
        )));
    }
    let means: Array1<f64> = if remove_mean {
        x.data().mean_axis(ndarray::Axis(1)).unwrap()
    } else {
        Array1::zeros(n)
    };
    let mut c = Array2::zeros((n, n));
    for s in 0..t {
        for i in 0..n {
            let xi = x.data()[[i, s]] - means[i];
            for j in i..n {
                let xj = x.data()[[j, s]] - means[j];
                c[[i, j]] += xi * xj;
            }
        }
    }
    let scale = 1.0 / t as f64;
    for i in 0..n {
        for j in i..n {
            let v = c[[i, j]] * scale;
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    SymmetricMatrix::new(c)
}

pub fn covariance_full(x: &MultichannelSignal) -> Result<SymmetricMatrix> {
    covariance_full_opts(x, true)
}

/// Covariance restricted to an epoch set, `(1/|P|) sum_{u in P} x(u) x(u)^T`,
/// with the mean taken over P only.
pub fn covariance_on_epochs_opts(
    x: &MultichannelSignal,
    p: &EpochSet,
    remove_mean: bool,
) -> Result<EpochCovariance> {
    let n = x.n_channels();
    if p.horizon() != x.n_samples() {
        return Err(NscaError::HorizonMismatch(p.horizon(), x.n_samples()));
    }
    let m = p.len();
    if m == 0 {
        return Err(NscaError::EmptyEpochSet);
    }
    let mut means = vec![0.0; n];
    if remove_mean {
        for u in p.iter() {
            for i in 0..n {
                means[i] += x.data()[[i, u]];
            }
        }
        for v in &mut means {
            *v /= m as f64;
        }
    }
    let mut c = Array2::zeros((n, n));
    for u in p.iter() {
        for i in 0..n {
            let xi = x.data()[[i, u]] - means[i];
            for j in i..n {
                let xj = x.data()[[j, u]] - means[j];
                c[[i, j]] += xi * xj;
            }
        }
    }
    let scale = 1.0 / m as f64;
    for i in 0..n {
        for j in i..n {
            let v = c[[i, j]] * scale;
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    Ok(EpochCovariance {
        matrix: SymmetricMatrix::new(c)?,
        rank_warning: m < n,
    })
}

pub fn covariance_on_epochs(x: &MultichannelSignal, p: &EpochSet) -> Result<EpochCovariance> {
    covariance_on_epochs_opts(x, p, true)
}

/// Sliding-window signal power with symmetric zero-padding:
/// `P_w(t) = (1/w) sum_{a=-w/2}^{w/2} |s(t-a)|^2`.
///
/// Even window lengths are bumped to the next odd value so the window is
/// integer-symmetric about `t`.
pub fn sliding_power(s: &[f64], w: usize) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(NscaError::EmptySignal);
    }
    let w = adjust_window(w);
    if w > s.len() {
        return Err(NscaError::WindowTooLarge { window: w, len: s.len() });
    }
    let half = w / 2;
    let n = s.len();
    let sq: Vec<f64> = s.iter().map(|v| v * v).collect();
    // running sum over [t - half, t + half], out-of-range treated as 0
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in 0..half.min(n) {
        acc += sq[t];
    }
    for t in 0..n {
        if t + half < n {
            acc += sq[t + half];
        }
        out[t] = acc / w as f64;
        if t >= half {
            acc -= sq[t - half];
        }
    }
    Ok(out)
}

/// Bump even windows to the next odd length.
pub fn adjust_window(w: usize) -> usize {
    let w = w.max(1);
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Convert a window in seconds to an odd sample count, at least 1.
pub fn window_samples(seconds: f64, fs: f64) -> usize {
    adjust_window((seconds * fs).round() as usize)
}
