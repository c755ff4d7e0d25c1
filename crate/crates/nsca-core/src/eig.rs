//! Generalized eigenvalue decomposition and approximate joint diagonalization.
//!
//! GEVD reduces the symmetric pencil (A, B) by Cholesky factorization of B and
//! a cyclic Jacobi eigensolve. AJD whitens by B first and then iterates
//! Givens-style orthogonal rotations that minimize the summed off-diagonal
//! energy of the matrix set (Cardoso-Souloumiac scheme).

use crate::error::{NscaError, Result};
use crate::signal::{MultichannelSignal, SymmetricMatrix};
use ndarray::Array2;

const COND_LIMIT: f64 = 1e12;
const REG_FACTOR: f64 = 1e-10;
const AJD_MAX_SWEEPS: usize = 200;
const AJD_ANGLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct GevdResult {
    /// Generalized eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Columns w_1..w_n; satisfies W^T B W = I and W^T A W = diag(eigenvalues).
    pub eigenmatrix: Array2<f64>,
    /// Set when B had to be diagonally regularized.
    pub regularized: bool,
}

#[derive(Debug, Clone)]
pub struct AjdResult {
    pub demixing: Array2<f64>,
    /// Residual off-diagonal energy recorded after each sweep (index 0 is the
    /// pre-rotation score).
    pub offdiag_score: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Condition number of the demixing matrix.
    pub condition: f64,
}

/// Eigen-decomposition of a dense real symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues ascending with matching eigenvector columns.
pub fn sym_eig(m: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(NscaError::DimensionMismatch("sym_eig needs a square matrix".into()));
    }
    let mut a = m.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() <= 1e-15 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = 0.5 * (2.0 * apq).atan2(aqq - app);
                let (s, c) = theta.sin_cos();
                rotate_sym(&mut a, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vecs = Array2::zeros((n, n));
    for (k, &i) in order.iter().enumerate() {
        for r in 0..n {
            vecs[[r, k]] = v[[r, i]];
        }
    }
    Ok((vals, vecs))
}

// Apply a Jacobi rotation J(p,q,theta) as J^T A J for symmetric A.
fn rotate_sym(a: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[[k, p]];
        let akq = a[[k, q]];
        a[[k, p]] = c * akp - s * akq;
        a[[k, q]] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[[p, k]];
        let aqk = a[[q, k]];
        a[[p, k]] = c * apk - s * aqk;
        a[[q, k]] = s * apk + c * aqk;
    }
}

fn rotate_cols(v: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = v.nrows();
    for k in 0..n {
        let vkp = v[[k, p]];
        let vkq = v[[k, q]];
        v[[k, p]] = c * vkp - s * vkq;
        v[[k, q]] = s * vkp + c * vkq;
    }
}

/// Lower-triangular Cholesky factor of an SPD matrix.
fn cholesky(m: &Array2<f64>) -> Option<Array2<f64>> {
    let n = m.nrows();
    let mut l: Array2<f64> = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

// Solve L Y = B for lower-triangular L (forward substitution), column-wise.
fn forward_solve(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let m = b.ncols();
    let mut y = Array2::zeros((n, m));
    for c in 0..m {
        for i in 0..n {
            let mut sum = b[[i, c]];
            for k in 0..i {
                sum -= l[[i, k]] * y[[k, c]];
            }
            y[[i, c]] = sum / l[[i, i]];
        }
    }
    y
}

// Solve L^T Y = B (back substitution).
fn back_solve_transposed(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let m = b.ncols();
    let mut y = Array2::zeros((n, m));
    for c in 0..m {
        for i in (0..n).rev() {
            let mut sum = b[[i, c]];
            for k in (i + 1)..n {
                sum -= l[[k, i]] * y[[k, c]];
            }
            y[[i, c]] = sum / l[[i, i]];
        }
    }
    y
}

// Regularize B if ill-conditioned and return (cholesky factor, flag).
fn whitening_factor(b: &SymmetricMatrix) -> Result<(Array2<f64>, bool)> {
    let n = b.dim();
    let (vals, _) = sym_eig(b.entries())?;
    let min = vals[0];
    let max = vals[n - 1];
    let eps = REG_FACTOR * b.trace() / n as f64;
    let needs_reg = min <= 0.0 || max / min.max(1e-300) > COND_LIMIT;
    let mut m = b.entries().clone();
    if needs_reg {
        for i in 0..n {
            m[[i, i]] += eps;
        }
        if min + eps <= eps {
            return Err(NscaError::SingularB);
        }
    }
    let l = cholesky(&m).ok_or(NscaError::SingularB)?;
    Ok((l, needs_reg))
}

/// Generalized eigenvalue decomposition of the symmetric pair (A, B).
///
/// Returns W with W^T A W diagonal and W^T B W = I, eigenvalues ascending.
/// Each eigenvector is sign-normalized so its largest-magnitude entry is
/// positive.
pub fn gevd(a: &SymmetricMatrix, b: &SymmetricMatrix) -> Result<GevdResult> {
    let n = a.dim();
    if b.dim() != n {
        return Err(NscaError::DimensionMismatch(format!(
            "A is {}x{} but B is {}x{}",
            n,
            n,
            b.dim(),
            b.dim()
        )));
    }
    let (l, regularized) = whitening_factor(b)?;
    // M = L^-1 A L^-T, symmetrized against round-off
    let y = forward_solve(&l, a.entries());
    let m_t = forward_solve(&l, &y.t().to_owned());
    let mut m = m_t;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    let (vals, vecs) = sym_eig(&m)?;
    let mut w = back_solve_transposed(&l, &vecs);
    normalize_column_signs(&mut w);
    Ok(GevdResult {
        eigenvalues: vals,
        eigenmatrix: w,
        regularized,
    })
}

fn normalize_column_signs(w: &mut Array2<f64>) {
    let (n, m) = w.dim();
    for c in 0..m {
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for r in 0..n {
            if w[[r, c]].abs() > best_abs {
                best_abs = w[[r, c]].abs();
                best = r;
            }
        }
        if w[[best, c]] < 0.0 {
            for r in 0..n {
                w[[r, c]] = -w[[r, c]];
            }
        }
    }
}

fn offdiag_energy(ms: &[Array2<f64>]) -> f64 {
    let mut acc = 0.0;
    for m in ms {
        let n = m.nrows();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += m[[i, j]] * m[[i, j]];
                }
            }
        }
    }
    acc
}

/// Approximate joint diagonalization of a matrix set, exactly diagonalizing
/// `b` (whitening) and minimizing the off-diagonal energy of `cs` by Jacobi
/// sweeps in the whitened space.
pub fn ajd(cs: &[SymmetricMatrix], b: &SymmetricMatrix) -> Result<AjdResult> {
    if cs.len() < 2 {
        return Err(NscaError::InvalidParameter(format!(
            "AJD needs at least 2 matrices, got {}",
            cs.len()
        )));
    }
    let n = b.dim();
    for c in cs {
        if c.dim() != n {
            return Err(NscaError::DimensionMismatch(
                "AJD matrix set dimension mismatch".into(),
            ));
        }
    }
    let (l, _reg) = whitening_factor(b)?;
    // whiten: C -> L^-1 C L^-T
    let mut ws: Vec<Array2<f64>> = cs
        .iter()
        .map(|c| {
            let y = forward_solve(&l, c.entries());
            forward_solve(&l, &y.t().to_owned())
        })
        .collect();
    let mut q: Array2<f64> = Array2::eye(n);
    let mut scores = vec![offdiag_energy(&ws)];
    let mut converged = false;
    let mut sweeps = 0;
    for _ in 0..AJD_MAX_SWEEPS {
        sweeps += 1;
        let mut max_angle = 0.0f64;
        for p in 0..n {
            for r in (p + 1)..n {
                // 2x2 Givens angle minimizing summed off-diagonal energy
                let (mut g11, mut g12, mut g22) = (0.0, 0.0, 0.0);
                for m in &ws {
                    let h1 = m[[p, p]] - m[[r, r]];
                    let h2 = 2.0 * m[[p, r]];
                    g11 += h1 * h1;
                    g12 += h1 * h2;
                    g22 += h2 * h2;
                }
                let x = g11 - g22;
                let y = 2.0 * g12;
                // negated relative to the usual G^T A G convention because
                // rotate_sym applies R A R^T with R = [c -s; s c]
                let theta = -0.5 * y.atan2(x + (x * x + y * y).sqrt());
                if theta.abs() > max_angle {
                    max_angle = theta.abs();
                }
                if theta.abs() < 1e-300 {
                    continue;
                }
                let (s, c) = theta.sin_cos();
                for m in ws.iter_mut() {
                    rotate_sym(m, p, r, c, s);
                }
                rotate_cols(&mut q, p, r, c, s);
            }
        }
        let score = offdiag_energy(&ws);
        // guard against round-off blips in the recorded trace
        let last = *scores.last().unwrap();
        scores.push(score.min(last));
        if max_angle < AJD_ANGLE_TOL {
            converged = true;
            break;
        }
    }
    let demixing = back_solve_transposed(&l, &q);
    let gram = demixing.t().dot(&demixing);
    let (gvals, _) = sym_eig(&gram)?;
    let condition = (gvals[n - 1] / gvals[0].max(1e-300)).sqrt();
    Ok(AjdResult {
        demixing,
        offdiag_score: scores,
        iterations: sweeps,
        converged,
        condition,
    })
}

/// Component extraction: y(t) = W^T x(t).
pub fn apply_transform(w: &Array2<f64>, x: &MultichannelSignal) -> Result<MultichannelSignal> {
    let n = x.n_channels();
    if w.nrows() != n || w.ncols() != n {
        return Err(NscaError::DimensionMismatch(format!(
            "transform is {}x{} but signal has {} channels",
            w.nrows(),
            w.ncols(),
            n
        )));
    }
    let y = w.t().dot(x.data());
    MultichannelSignal::new(y, x.fs())
}

/// Amari performance index of G = estimated^T * true_mixing, normalized to
/// [0, 1]; zero exactly when G is a scaled permutation.
pub fn amari_index(estimated: &Array2<f64>, true_mixing: &Array2<f64>) -> Result<f64> {
    let n = estimated.nrows();
    if estimated.ncols() != n || true_mixing.nrows() != n || true_mixing.ncols() != n {
        return Err(NscaError::DimensionMismatch(
            "amari_index needs square matrices of equal size".into(),
        ));
    }
    let g = estimated.t().dot(true_mixing);
    let mut total = 0.0;
    for i in 0..n {
        let row_max = (0..n).map(|j| g[[i, j]].abs()).fold(0.0f64, f64::max).max(1e-300);
        let row_sum: f64 = (0..n).map(|j| g[[i, j]].abs()).sum();
        total += row_sum / row_max - 1.0;
    }
    for j in 0..n {
        let col_max = (0..n).map(|i| g[[i, j]].abs()).fold(0.0f64, f64::max).max(1e-300);
        let col_sum: f64 = (0..n).map(|i| g[[i, j]].abs()).sum();
        total += col_sum / col_max - 1.0;
    }
    Ok(total / (2.0 * n as f64 * (n as f64 - 1.0)))
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng;

    pub fn random_spd(n: usize, rng: &mut impl Rng) -> SymmetricMatrix {
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                m[[i, j]] = rng.gen::<f64>() * 2.0 - 1.0;
            }
        }
        let spd = m.t().dot(&m) + Array2::<f64>::eye(n) * 0.1;
        SymmetricMatrix::new(spd).unwrap()
    }

    pub fn random_invertible(n: usize, rng: &mut impl Rng) -> Array2<f64> {
        loop {
            let mut m = Array2::zeros((n, n));
            for v in m.iter_mut() {
                *v = rng.gen::<f64>() * 2.0 - 1.0;
            }
            let gram = m.t().dot(&m);
            let (vals, _) = sym_eig(&gram).unwrap();
            if vals[0] > 1e-4 {
                return m;
            }
        }
    }
}
