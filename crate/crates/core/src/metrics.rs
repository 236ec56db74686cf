//! Evaluation metrics: rotated losses, projection error, recovery indicators,
//! eigenvalue dispersion, variability statistics and summaries.
//!
//! Losses are undivided by any normalizing rate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{
    norm, operator_norm, project_off_colspace, project_rows_off, LowRankComponent, NormKind,
    SparseComponent, SymMatrix,
};

/// `max_j ||b_hat_j - H b_j||` over variables (rows).
pub fn loss_b(b_hat: &DMatrix<f64>, b_true: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<f64> {
    max_row_distance(b_hat, b_true, h, "B")
}

/// `max_k ||f_hat_k - H f_k||` over observations (rows).
pub fn loss_f(f_hat: &DMatrix<f64>, f_true: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<f64> {
    max_row_distance(f_hat, f_true, h, "F")
}

fn max_row_distance(
    est: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    h: &DMatrix<f64>,
    what: &str,
) -> Result<f64> {
    if est.nrows() != truth.nrows() || h.nrows() != est.ncols() || h.ncols() != truth.ncols() {
        return Err(Error::input(format!(
            "{what} loss: estimate {:?}, truth {:?}, H {:?} are inconsistent",
            est.shape(),
            truth.shape(),
            h.shape()
        )));
    }
    let diff = est - truth * h.transpose();
    Ok(diff.row_iter().map(|r| r.norm()).fold(0.0, f64::max))
}

/// `max_{j,k} |b_hat_j^T f_hat_k - b_j^T f_k|`.
pub fn loss_bf(
    b_hat: &DMatrix<f64>,
    f_hat: &DMatrix<f64>,
    b_true: &DMatrix<f64>,
    f_true: &DMatrix<f64>,
) -> Result<f64> {
    if b_hat.ncols() != f_hat.ncols()
        || b_true.ncols() != f_true.ncols()
        || b_hat.nrows() != b_true.nrows()
        || f_hat.nrows() != f_true.nrows()
    {
        return Err(Error::input("common-component loss: inconsistent shapes"));
    }
    Ok((f_hat * b_hat.transpose() - f_true * b_true.transpose()).amax())
}

/// `||(I - U U^T)(L_hat - L*)||_2` with `U` the true latent basis.
pub fn pr_err(l_hat: &SymMatrix, l_true: &LowRankComponent) -> Result<f64> {
    if l_hat.dim() != l_true.dim() {
        return Err(Error::input("projection error: dimension mismatch"));
    }
    let diff = l_hat.sub(&l_true.reconstruct());
    Ok(operator_norm(&project_rows_off(
        l_true.basis(),
        diff.as_matrix(),
    )))
}

/// `||(I - U U^T)(L_hat - L*)(I - U U^T)||_2`.
pub fn pr_err_two_sided(l_hat: &SymMatrix, l_true: &LowRankComponent) -> Result<f64> {
    let diff = l_hat.sub(&l_true.reconstruct());
    Ok(norm(
        &project_off_colspace(l_true.basis(), &diff)?,
        NormKind::Spectral,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryFlags {
    pub rank_hit: bool,
    pub support_exact: bool,
    pub sign_exact: bool,
}

pub fn recovery_flags(
    rank_hat: usize,
    s_hat: &SparseComponent,
    rank_true: usize,
    s_true: &SparseComponent,
) -> Result<RecoveryFlags> {
    if s_hat.dim() != s_true.dim() {
        return Err(Error::input("recovery flags: dimension mismatch"));
    }
    let p = s_hat.dim();
    let mut sign_exact = true;
    for i in 0..p {
        for j in (i + 1)..p {
            let a = sign(s_hat.matrix().get(i, j));
            let b = sign(s_true.matrix().get(i, j));
            if a != b {
                sign_exact = false;
            }
        }
    }
    Ok(RecoveryFlags {
        rank_hit: rank_hat == rank_true,
        support_exact: s_hat.support() == s_true.support(),
        sign_exact,
    })
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// True entries with `|s*_ij| >= level` that the estimate sets to zero.
pub fn false_negatives(s_hat: &SparseComponent, s_true: &SparseComponent, level: f64) -> usize {
    s_true
        .support()
        .iter()
        .filter(|&&(i, j)| s_true.matrix().get(i, j).abs() >= level && !s_hat.contains(i, j))
        .count()
}

/// `(1/p) sum_i (lambda_i(M) - mu)^2`.
pub fn eigen_dispersion(m: &SymMatrix, mu: f64) -> f64 {
    let vals = m.eigenvalues();
    vals.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / vals.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariabilityStats {
    pub var_b: f64,
    pub var_f: f64,
    pub var_bf: f64,
}

/// `var_B = sum_j ||b_j - b_bar||`, `var_f = sum_k ||f_k||`,
/// `var_Bf = sum_k ||B f_k - mean_k B f_k||`.
pub fn variability_stats(b: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<VariabilityStats> {
    if b.ncols() != f.ncols() {
        return Err(Error::input(
            "variability: B and F have different column counts",
        ));
    }
    let var_b = if b.nrows() == 0 {
        0.0
    } else {
        let mean = b.row_mean();
        b.row_iter().map(|r| (r - &mean).norm()).sum()
    };
    let var_f = f.row_iter().map(|r| r.norm()).sum();
    let proj = f * b.transpose();
    let var_bf = if proj.nrows() == 0 {
        0.0
    } else {
        let mean = proj.row_mean();
        proj.row_iter().map(|r| (r - &mean).norm()).sum()
    };
    Ok(VariabilityStats {
        var_b,
        var_f,
        var_bf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub mad: f64,
    pub n: usize,
}

/// Mean, standard deviation (n - 1), median and unscaled median absolute deviation.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::input("cannot summarize an empty sample"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let median = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - median).abs()).collect();
    Ok(Summary {
        mean,
        std,
        median,
        mad: self::median(&dev),
        n,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Greedy absolute-correlation matching of estimated factor columns to true
/// ones. Returns, for each estimated column, the matched true column (if any)
/// and the sign that best aligns it.
pub fn align_factors(f_hat: &DMatrix<f64>, f_true: &DMatrix<f64>) -> Vec<Option<(usize, f64)>> {
    let (rh, rt) = (f_hat.ncols(), f_true.ncols());
    let mut corr = DMatrix::zeros(rh, rt);
    for a in 0..rh {
        for b in 0..rt {
            let x = f_hat.column(a);
            let y = f_true.column(b);
            let d = x.norm() * y.norm();
            corr[(a, b)] = if d > 0.0 { x.dot(&y) / d } else { 0.0 };
        }
    }
    let mut out = vec![None; rh];
    let mut used_hat = vec![false; rh];
    let mut used_true = vec![false; rt];
    for _ in 0..rh.min(rt) {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in (0..rh).filter(|a| !used_hat[*a]) {
            for b in (0..rt).filter(|b| !used_true[*b]) {
                let c = corr[(a, b)].abs();
                if best.map_or(true, |x| c > x.2) {
                    best = Some((a, b, c));
                }
            }
        }
        let (a, b, _) = best.expect("unmatched columns remain");
        used_hat[a] = true;
        used_true[b] = true;
        let s = if corr[(a, b)] < 0.0 { -1.0 } else { 1.0 };
        out[a] = Some((b, s));
    }
    if out
        .iter()
        .enumerate()
        .any(|(a, m)| matches!(m, Some((b, _)) if *b != a))
    {
        log::debug!("factor alignment permuted columns: {out:?}");
    }
    out
}

/// Covariance-fit summary in the layout of a real-data results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSummary {
    pub rank: usize,
    /// `tr(L_hat) / tr(Sigma_hat)`.
    pub theta_hat: f64,
    /// `sum_{i<j} |s_ij| / sum_{i<=j} |sigma_ij|`.
    pub rho_s_hat: f64,
    /// Share of nonzero off-diagonal entries of `S_hat`.
    pub pi_nz: f64,
    pub spectral_loss: f64,
    pub frobenius_loss: f64,
}

pub fn covariance_summary(
    l: &LowRankComponent,
    s: &SparseComponent,
    sigma_n: &SymMatrix,
) -> Result<CovarianceSummary> {
    let p = s.dim();
    if l.dim() != p || sigma_n.dim() != p {
        return Err(Error::input("covariance summary: dimension mismatch"));
    }
    let sigma = l.reconstruct().add(s.matrix());
    let s_off = norm(s.matrix(), NormKind::L1Off);
    let mut upper = 0.0;
    for j in 0..p {
        for i in 0..=j {
            upper += sigma.get(i, j).abs();
        }
    }
    let pairs = (p * (p - 1) / 2).max(1) as f64;
    let diff = sigma.sub(sigma_n);
    Ok(CovarianceSummary {
        rank: l.rank(),
        theta_hat: l.trace() / sigma.trace(),
        rho_s_hat: if upper > 0.0 { s_off / upper } else { 0.0 },
        pi_nz: s.support().len() as f64 / pairs,
        spectral_loss: norm(&diff, NormKind::Spectral),
        frobenius_loss: norm(&diff, NormKind::Frobenius),
    })
}
