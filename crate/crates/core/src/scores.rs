//! Factor loadings and scores: two OLS variants, Bartlett and Thompson scores,
//! the rotation matrix H and communalities.
//!
//! Score functions use the rows of `x` as observations exactly as given;
//! center the data first with [`crate::io::center_columns`].

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMethod {
    Ols1,
    Ols2,
    Bartlett,
    Thompson,
}

impl ScoreMethod {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::Ols1 => "ols1",
            ScoreMethod::Ols2 => "ols2",
            ScoreMethod::Bartlett => "bartlett",
            ScoreMethod::Thompson => "thompson",
        }
    }
}

impl std::str::FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ols1" => Ok(ScoreMethod::Ols1),
            "ols2" => Ok(ScoreMethod::Ols2),
            "bartlett" => Ok(ScoreMethod::Bartlett),
            "thompson" => Ok(ScoreMethod::Thompson),
            other => Err(Error::input(format!("unknown score method '{other}'"))),
        }
    }
}

/// Which covariance estimate the loadings came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovSource {
    SampleCov,
    Alce,
    Unalce,
    Poet,
}

impl CovSource {
    pub fn name(self) -> &'static str {
        match self {
            CovSource::SampleCov => "sample",
            CovSource::Alce => "alce",
            CovSource::Unalce => "unalce",
            CovSource::Poet => "poet",
        }
    }
}

/// Loadings `b` (p x r) and scores `f` (n x r).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    pub b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub method: ScoreMethod,
    pub source: CovSource,
}

/// OLS solution with `F^T F / n = I`: `F = sqrt(n) * (top-r eigenvectors of X X^T)`,
/// `B = X^T F / n`.
pub fn ols_factors_v1(x: &DMatrix<f64>, r: usize) -> Result<FactorFit> {
    let (n, p) = x.shape();
    if r == 0 || r > n.min(p) {
        return Err(Error::input(format!(
            "rank {r} must lie in 1..={} for a {n}x{p} data matrix",
            n.min(p)
        )));
    }
    check_finite(x)?;
    let u = if n <= p {
        let g = SymMatrix::symmetrized(x * x.transpose());
        let eig = sym_eig(&g)?;
        check_leading_positive(&eig.values, r)?;
        eig.vectors.columns(0, r).into_owned()
    } else {
        // left singular vectors from the p x p Gram matrix
        let g = SymMatrix::symmetrized(x.transpose() * x);
        let eig = sym_eig(&g)?;
        check_leading_positive(&eig.values, r)?;
        let mut u = x * eig.vectors.columns(0, r);
        for k in 0..r {
            let s = eig.values[k].sqrt();
            u.column_mut(k).unscale_mut(s);
            let pivot = u.column(k).iamax();
            if u[(pivot, k)] < 0.0 {
                u.column_mut(k).neg_mut();
            }
        }
        u
    };
    let f = u * (n as f64).sqrt();
    let b = x.transpose() * &f / n as f64;
    Ok(FactorFit {
        b,
        f,
        method: ScoreMethod::Ols1,
        source: CovSource::SampleCov,
    })
}

/// OLS solution with diagonal `B^T B`: `B = U_r Lambda_r^{1/2}`, `f = Lambda_r^{-1} B^T x`.
pub fn ols_factors_v2(sigma_n: &SymMatrix, x: &DMatrix<f64>, r: usize) -> Result<FactorFit> {
    let p = sigma_n.dim();
    if x.ncols() != p {
        return Err(Error::input(format!(
            "data has {} columns but covariance is {p}x{p}",
            x.ncols()
        )));
    }
    if r == 0 || r > p {
        return Err(Error::input(format!("rank {r} must lie in 1..={p}")));
    }
    check_finite(x)?;
    let eig = sym_eig(sigma_n)?;
    check_leading_positive(&eig.values, r)?;
    let u = eig.vectors.columns(0, r).into_owned();
    let lam = &eig.values[..r];
    let roots: Vec<f64> = lam.iter().map(|v| v.sqrt()).collect();
    let mut b = u.clone();
    for (k, s) in roots.iter().enumerate() {
        b.column_mut(k).scale_mut(*s);
    }
    let mut f = x * &b;
    for (k, l) in lam.iter().enumerate() {
        f.column_mut(k).unscale_mut(*l);
    }
    Ok(FactorFit {
        b,
        f,
        method: ScoreMethod::Ols2,
        source: CovSource::SampleCov,
    })
}

/// GLS scores `(B^T S^-1 B)^-1 B^T S^-1 x` for every row of `x`.
pub fn bartlett_scores(b: &DMatrix<f64>, s: &SymMatrix, x: &DMatrix<f64>) -> Result<FactorFit> {
    check_shapes(b, s, x)?;
    let chol_s = cholesky_pd(s)?;
    let s_inv_b = chol_s.solve(b);
    let m = SymMatrix::symmetrized(b.transpose() * &s_inv_b);
    let chol_m = Cholesky::new(m.into_matrix()).ok_or_else(|| {
        Error::Collinear("B^T S^-1 B is singular; loadings are collinear".to_string())
    })?;
    // F = X S^-1 B M^-1
    let f = chol_m
        .solve(&(s_inv_b.transpose() * x.transpose()))
        .transpose();
    Ok(FactorFit {
        b: b.clone(),
        f,
        method: ScoreMethod::Bartlett,
        source: CovSource::SampleCov,
    })
}

/// Posterior-mean scores `B^T (B B^T + S)^-1 x` for every row of `x`.
pub fn thompson_scores(b: &DMatrix<f64>, s: &SymMatrix, x: &DMatrix<f64>) -> Result<FactorFit> {
    check_shapes(b, s, x)?;
    let total = SymMatrix::symmetrized(b * b.transpose() + s.as_matrix());
    let chol = cholesky_pd(&total)?;
    let f = (x * chol.solve(b)).into_owned();
    Ok(FactorFit {
        b: b.clone(),
        f,
        method: ScoreMethod::Thompson,
        source: CovSource::SampleCov,
    })
}

/// `H = (1/n) diag(lambda)^-1 F_hat^T F B^T B`.
pub fn rotation_h(
    lambda: &[f64],
    f_hat: &DMatrix<f64>,
    f_true: &DMatrix<f64>,
    b_true: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r_hat = lambda.len();
    let n = f_hat.nrows();
    if f_hat.ncols() != r_hat || f_true.nrows() != n || b_true.ncols() != f_true.ncols() {
        return Err(Error::input(format!(
            "inconsistent shapes for H: lambda {r_hat}, F_hat {:?}, F {:?}, B {:?}",
            f_hat.shape(),
            f_true.shape(),
            b_true.shape()
        )));
    }
    if n == 0 {
        return Err(Error::input("H needs at least one observation"));
    }
    if lambda.iter().any(|l| *l == 0.0 || !l.is_finite()) {
        return Err(Error::DegenerateSpectrum(
            "zero eigenvalue in rotation H".into(),
        ));
    }
    let mut h = f_hat.transpose() * f_true * (b_true.transpose() * b_true) / n as f64;
    for (k, l) in lambda.iter().enumerate() {
        h.row_mut(k).unscale_mut(*l);
    }
    Ok(h)
}

/// Projections onto the latent space: row `k` is `(B f_k)^T`.
pub fn communalities(b: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.ncols() != f.ncols() {
        return Err(Error::input(format!(
            "B has {} columns but F has {}",
            b.ncols(),
            f.ncols()
        )));
    }
    Ok(f * b.transpose())
}

fn check_shapes(b: &DMatrix<f64>, s: &SymMatrix, x: &DMatrix<f64>) -> Result<()> {
    let p = s.dim();
    if b.nrows() != p || x.ncols() != p {
        return Err(Error::input(format!(
            "dimension mismatch: B is {:?}, S is {p}x{p}, X is {:?}",
            b.shape(),
            x.shape()
        )));
    }
    if b.ncols() == 0 {
        return Err(Error::input("loadings have no columns"));
    }
    check_finite(b)?;
    check_finite(x)
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::input("matrix has non-finite entries"))
    }
}

fn check_leading_positive(values: &[f64], r: usize) -> Result<()> {
    if values[r - 1] > 0.0 {
        Ok(())
    } else {
        Err(Error::DegenerateSpectrum(format!(
            "eigenvalue {r} is {:.3e}, not positive",
            values[r - 1]
        )))
    }
}

pub(crate) fn cholesky_pd(s: &SymMatrix) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(s.as_matrix().clone()).ok_or_else(|| Error::NotPositiveDefinite {
        eigenvalue: s.min_eigenvalue(),
    })
}
