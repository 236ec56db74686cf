//! POET baseline: top-r principal components plus a thresholded residual.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::io::{sample_covariance, CovarianceScaling};
use crate::linalg::{
    hard_threshold_offdiag, soft_threshold_offdiag, sym_eig, EigenPair, LowRankComponent,
    SparseComponent, SymMatrix,
};
use crate::scores::cholesky_pd;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdKind {
    Soft,
    Hard,
}

impl ThresholdKind {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdKind::Soft => "soft",
            ThresholdKind::Hard => "hard",
        }
    }
}

impl std::str::FromStr for ThresholdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(ThresholdKind::Soft),
            "hard" => Ok(ThresholdKind::Hard),
            other => Err(Error::input(format!("unknown threshold kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoetFit {
    pub l_poet: LowRankComponent,
    pub s_poet: SparseComponent,
    pub r: usize,
    pub c: f64,
    /// Applied threshold `c * sqrt(ln p / n)`.
    pub level: f64,
    pub kind: ThresholdKind,
}

impl PoetFit {
    pub fn sigma(&self) -> SymMatrix {
        self.l_poet.reconstruct().add(self.s_poet.matrix())
    }
}

/// `sqrt(ln p / n)`.
pub fn poet_rate(p: usize, n: usize) -> f64 {
    ((p as f64).ln() / n as f64).sqrt()
}

/// POET with `r` factors and threshold constant `c`; `n` sets the threshold rate.
pub fn poet_fit(
    sigma_n: &SymMatrix,
    n: usize,
    r: usize,
    c: f64,
    kind: ThresholdKind,
) -> Result<PoetFit> {
    let eig = sym_eig(sigma_n)?;
    poet_from_eigen(sigma_n, &eig, n, r, c, kind)
}

fn poet_from_eigen(
    sigma_n: &SymMatrix,
    eig: &EigenPair,
    n: usize,
    r: usize,
    c: f64,
    kind: ThresholdKind,
) -> Result<PoetFit> {
    let p = sigma_n.dim();
    if r == 0 || r >= p {
        return Err(Error::input(format!(
            "POET needs 1 <= r < p, got r={r}, p={p}"
        )));
    }
    if n == 0 {
        return Err(Error::input("POET needs n >= 1"));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::input(format!(
            "threshold constant must be >= 0, got {c}"
        )));
    }
    let l_poet = top_r_component(eig, r)?;
    let resid = sigma_n.sub(&l_poet.reconstruct());
    let level = c * poet_rate(p, n);
    let s_poet = threshold(&resid, level, kind)?;
    Ok(PoetFit {
        l_poet,
        s_poet,
        r,
        c,
        level,
        kind,
    })
}

fn threshold(m: &SymMatrix, level: f64, kind: ThresholdKind) -> Result<SparseComponent> {
    match kind {
        ThresholdKind::Soft => soft_threshold_offdiag(m, level),
        ThresholdKind::Hard => hard_threshold_offdiag(m, level),
    }
}

fn top_r_component(eig: &EigenPair, r: usize) -> Result<LowRankComponent> {
    if eig.values[r - 1] <= 0.0 {
        return Err(Error::DegenerateSpectrum(format!(
            "eigenvalue {r} of the sample covariance is {:.3e}",
            eig.values[r - 1]
        )));
    }
    Ok(LowRankComponent::from_parts_unchecked(
        eig.vectors.columns(0, r).into_owned(),
        eig.values[..r].to_vec(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub kind: ThresholdKind,
    /// Only consider constants whose full-sample fit has a positive definite
    /// sparse part; falls back to the whole grid when none qualifies.
    pub require_pd: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub c: f64,
    /// Mean validation loss per grid entry (`f64::INFINITY` when excluded).
    pub losses: Vec<f64>,
}

/// Fold-wise cross-validation of the POET constant. See [`cross_validate_c_with`].
pub fn cross_validate_c(
    data: &DMatrix<f64>,
    r: usize,
    c_grid: &[f64],
    folds: usize,
    kind: ThresholdKind,
) -> Result<f64> {
    let opts = CvOptions {
        folds,
        kind,
        require_pd: false,
    };
    Ok(cross_validate_c_with(data, r, c_grid, &opts)?.c)
}

/// Positive definite with room to spare for a Cholesky factorization.
fn clearly_pd(s: &SymMatrix) -> bool {
    let scale = s.trace().abs() / s.dim() as f64;
    s.min_eigenvalue() > 1e-10 * scale && cholesky_pd(s).is_ok()
}

/// Splits the rows of `data` into contiguous folds. For each constant the loss
/// is the off-diagonal squared Frobenius distance between the thresholded
/// training residual and the raw validation residual (validation covariance
/// minus its own top-r components), averaged over folds. Ties go to the
/// earlier grid entry.
pub fn cross_validate_c_with(
    data: &DMatrix<f64>,
    r: usize,
    c_grid: &[f64],
    opts: &CvOptions,
) -> Result<CvResult> {
    let (n, p) = data.shape();
    if opts.folds < 2 {
        return Err(Error::input("cross-validation needs at least 2 folds"));
    }
    if c_grid.is_empty() {
        return Err(Error::input("cross-validation grid is empty"));
    }
    if n < opts.folds {
        return Err(Error::input(format!(
            "cannot split {n} observations into {} folds",
            opts.folds
        )));
    }
    if r == 0 || r >= p {
        return Err(Error::input(format!(
            "POET needs 1 <= r < p, got r={r}, p={p}"
        )));
    }
    if c_grid.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
        return Err(Error::input("cross-validation constants must be >= 0"));
    }

    let mut losses = vec![0.0; c_grid.len()];
    for f in 0..opts.folds {
        let lo = f * n / opts.folds;
        let hi = (f + 1) * n / opts.folds;
        let val_rows: Vec<usize> = (lo..hi).collect();
        let train_rows: Vec<usize> = (0..lo).chain(hi..n).collect();
        if val_rows.len() < 2 || train_rows.len() < 2 {
            return Err(Error::input("each fold needs at least 2 observations"));
        }
        let train = data.select_rows(&train_rows);
        let val = data.select_rows(&val_rows);
        let cov_t = sample_covariance(&train, CovarianceScaling::Unbiased)?;
        let cov_v = sample_covariance(&val, CovarianceScaling::Unbiased)?;

        let eig_t = sym_eig(&cov_t)?;
        let resid_t = cov_t.sub(&top_r_component(&eig_t, r)?.reconstruct());
        let eig_v = sym_eig(&cov_v)?;
        let top_v = LowRankComponent::from_parts_unchecked(
            eig_v.vectors.columns(0, r).into_owned(),
            eig_v.values[..r].to_vec(),
        );
        let resid_v = cov_v.sub(&top_v.reconstruct());
        let rate = poet_rate(p, train_rows.len());

        for (loss, &c) in losses.iter_mut().zip(c_grid) {
            let s = threshold(&resid_t, c * rate, opts.kind)?;
            let mut acc = 0.0;
            for j in 0..p {
                for i in 0..p {
                    if i != j {
                        let d = s.matrix().get(i, j) - resid_v.get(i, j);
                        acc += d * d;
                    }
                }
            }
            *loss += acc / opts.folds as f64;
        }
    }

    if opts.require_pd {
        let cov = sample_covariance(data, CovarianceScaling::Unbiased)?;
        let eig = sym_eig(&cov)?;
        let pd: Vec<bool> = c_grid
            .iter()
            .map(|&c| {
                poet_from_eigen(&cov, &eig, n, r, c, opts.kind)
                    .map(|fit| clearly_pd(fit.s_poet.matrix()))
                    .unwrap_or(false)
            })
            .collect();
        if pd.iter().any(|ok| *ok) {
            for (loss, ok) in losses.iter_mut().zip(&pd) {
                if !ok {
                    *loss = f64::INFINITY;
                }
            }
        } else {
            log::warn!("no POET constant in the grid gives a positive definite residual");
        }
    }

    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = i;
        }
    }
    Ok(CvResult {
        c: c_grid[best],
        losses,
    })
}

/// Eigenvalue-ratio rank heuristic: `argmax_{i <= r_max} lambda_i / lambda_{i+1}`.
///
/// A convenience only; logs a warning when the winning ratio is below 1.5.
pub fn estimate_rank_heuristic(sigma_n: &SymMatrix, r_max: usize) -> Result<usize> {
    let p = sigma_n.dim();
    if r_max == 0 || r_max >= p {
        return Err(Error::input(format!(
            "rank heuristic needs 1 <= r_max < p, got {r_max}"
        )));
    }
    let vals = sigma_n.eigenvalues();
    let tiny = f64::EPSILON * vals[0].abs().max(1.0) * p as f64;
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..=r_max {
        let ratio = if vals[i] > tiny {
            vals[i - 1] / vals[i]
        } else if vals[i - 1] > tiny {
            f64::INFINITY
        } else {
            1.0
        };
        if ratio > best.1 {
            best = (i, ratio);
        }
    }
    if best.1 < 1.5 {
        log::warn!(
            "weak eigenvalue gap: best ratio {:.3} at rank {}",
            best.1,
            best.0
        );
    }
    Ok(best.0)
}
