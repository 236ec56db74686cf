//! Dense symmetric linear algebra kernels and the matrix norm catalog.
//!
//! Everything here is a pure function of its inputs. Eigendecompositions are
//! returned in a canonical form (descending eigenvalues, each eigenvector
//! oriented so that its largest-magnitude entry is positive) so that repeated
//! runs produce bit-identical output. When eigenvalues are tied the order of
//! the underlying decomposition is kept; factors are then only identified up
//! to a rotation inside the tied eigenspace.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance used when validating semi-orthogonal bases supplied by callers.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Dense symmetric `p x p` matrix.
///
/// Construction symmetrizes the input as `(M + M^T) / 2`, so both triangles
/// always agree exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::input(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::input("symmetric matrix must have dimension >= 1"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("matrix has non-finite entries"));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without validation. Callers guarantee a square, finite input.
    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let p = m.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn from_row_slice(p: usize, data: &[f64]) -> Result<Self> {
        if data.len() != p * p {
            return Err(Error::input(format!(
                "expected {} entries for a {p}x{p} matrix, got {}",
                p * p,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(p, p, data))
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    pub fn zeros(p: usize) -> Self {
        SymMatrix(DMatrix::zeros(p, p))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    pub fn scale(&self, factor: f64) -> SymMatrix {
        SymMatrix(&self.0 * factor)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Eigenvalues only, descending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut vals: Vec<f64> = self
            .0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        vals
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Eigenvalues in descending order with their orthonormal eigenvectors
/// (column `i` pairs with `values[i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPair {
    pub fn reconstruct(&self) -> SymMatrix {
        let scaled = scale_columns(&self.vectors, &self.values);
        SymMatrix::symmetrized(scaled * self.vectors.transpose())
    }
}

/// Symmetric eigendecomposition in canonical form.
pub fn sym_eig(m: &SymMatrix) -> Result<EigenPair> {
    if !m.is_finite() {
        return Err(Error::input("sym_eig: matrix has non-finite entries"));
    }
    Ok(canonical_eigen(m.as_matrix().clone()))
}

fn canonical_eigen(m: DMatrix<f64>) -> EigenPair {
    let p = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    // stable: equal eigenvalues keep the decomposition's order
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut vectors = DMatrix::zeros(p, p);
    let mut values = Vec::with_capacity(p);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..p {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..p {
            vectors[(i, dst)] = sign * col[i];
        }
    }
    EigenPair { values, vectors }
}

/// Norms of the catalog. `L1Off` is the single-triangle sum `sum_{i<j} |m_ij|`;
/// `Spectral` is the largest absolute eigenvalue (equal to the top eigenvalue on
/// positive semidefinite input); `Nuclear` is the sum of eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L0,
    L1,
    L1Off,
    Frobenius,
    Max,
    DegreeMax,
    L1RowMax,
    Spectral,
    Nuclear,
}

pub fn norm(m: &SymMatrix, kind: NormKind) -> f64 {
    let a = m.as_matrix();
    let p = m.dim();
    match kind {
        NormKind::L0 => a.iter().filter(|v| **v != 0.0).count() as f64,
        NormKind::L1 => a.iter().map(|v| v.abs()).sum(),
        NormKind::L1Off => off_diagonal_l1(a),
        NormKind::Frobenius => a.norm(),
        NormKind::Max => a.amax(),
        NormKind::DegreeMax => (0..p)
            .map(|j| a.column(j).iter().filter(|v| **v != 0.0).count())
            .max()
            .unwrap_or(0) as f64,
        NormKind::L1RowMax => (0..p)
            .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Spectral => a
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs())),
        NormKind::Nuclear => a.clone().symmetric_eigenvalues().iter().sum(),
    }
}

pub(crate) fn off_diagonal_l1(a: &DMatrix<f64>) -> f64 {
    let p = a.nrows();
    let mut acc = 0.0;
    for j in 0..p {
        for i in 0..j {
            acc += a[(i, j)].abs();
        }
    }
    acc
}

/// Largest singular value of a general (possibly rectangular) matrix.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    let gram = if a.nrows() >= a.ncols() {
        a.transpose() * a
    } else {
        a * a.transpose()
    };
    gram.symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(*v))
        .sqrt()
}

/// Low-rank positive semidefinite component `U diag(eigvals) U^T`.
///
/// `basis` is `p x r` with orthonormal columns; `eigvals` are strictly positive
/// and descending. `r = 0` is allowed and represents the zero matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankComponent {
    basis: DMatrix<f64>,
    eigvals: Vec<f64>,
}

impl LowRankComponent {
    pub fn new(basis: DMatrix<f64>, eigvals: Vec<f64>) -> Result<Self> {
        if basis.ncols() != eigvals.len() {
            return Err(Error::input(format!(
                "basis has {} columns but {} eigenvalues were given",
                basis.ncols(),
                eigvals.len()
            )));
        }
        if basis.nrows() == 0 {
            return Err(Error::input("low-rank component needs dimension >= 1"));
        }
        if eigvals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::input(
                "low-rank eigenvalues must be finite and positive",
            ));
        }
        if eigvals.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::input("low-rank eigenvalues must be descending"));
        }
        check_orthonormal(&basis, ORTHONORMAL_TOL)?;
        Ok(Self { basis, eigvals })
    }

    pub fn empty(p: usize) -> Self {
        Self {
            basis: DMatrix::zeros(p, 0),
            eigvals: Vec::new(),
        }
    }

    pub(crate) fn from_parts_unchecked(basis: DMatrix<f64>, eigvals: Vec<f64>) -> Self {
        Self { basis, eigvals }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn reconstruct(&self) -> SymMatrix {
        if self.rank() == 0 {
            return SymMatrix::zeros(self.dim());
        }
        let scaled = scale_columns(&self.basis, &self.eigvals);
        SymMatrix::symmetrized(scaled * self.basis.transpose())
    }

    /// Diagonal of the reconstruction without forming the full matrix.
    pub fn diagonal(&self) -> DVector<f64> {
        let p = self.dim();
        DVector::from_fn(p, |i, _| {
            (0..self.rank())
                .map(|k| self.basis[(i, k)] * self.basis[(i, k)] * self.eigvals[k])
                .sum()
        })
    }

    pub fn trace(&self) -> f64 {
        self.eigvals.iter().sum()
    }

    /// Loadings `U diag(sqrt(eigvals))`, so that `B B^T` reconstructs the component.
    pub fn loadings(&self) -> DMatrix<f64> {
        let roots: Vec<f64> = self.eigvals.iter().map(|v| v.sqrt()).collect();
        scale_columns(&self.basis, &roots)
    }

    /// Same basis with every eigenvalue shifted by `shift`.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        let eigvals: Vec<f64> = self.eigvals.iter().map(|v| v + shift).collect();
        if eigvals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::input("shift leaves a non-positive eigenvalue"));
        }
        Ok(Self {
            basis: self.basis.clone(),
            eigvals,
        })
    }
}

/// Symmetric matrix together with its off-diagonal support.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseComponent {
    matrix: SymMatrix,
    support: Vec<(usize, usize)>,
}

impl SparseComponent {
    pub fn from_matrix(matrix: SymMatrix) -> Self {
        let p = matrix.dim();
        let a = matrix.as_matrix();
        let mut support = Vec::new();
        for i in 0..p {
            for j in (i + 1)..p {
                if a[(i, j)] != 0.0 {
                    support.push((i, j));
                }
            }
        }
        Self { matrix, support }
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> SymMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Off-diagonal support as pairs `(i, j)` with `i < j`, row-major order.
    pub fn support(&self) -> &[(usize, usize)] {
        &self.support
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.support.binary_search(&key).is_ok()
    }

    /// Off-diagonal nonzero count per row.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.dim()];
        for &(i, j) in &self.support {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Same off-diagonal entries with a new diagonal.
    pub fn with_diagonal(&self, diag: &DVector<f64>) -> Self {
        let mut m = self.matrix.as_matrix().clone();
        m.set_diagonal(diag);
        Self {
            matrix: SymMatrix(m),
            support: self.support.clone(),
        }
    }
}

/// Eigenvalue thresholding: keeps eigenpairs with `lambda_i - psi > 0` and
/// shifts them down by `psi`.
pub fn svt(m: &SymMatrix, psi: f64) -> Result<LowRankComponent> {
    if !(psi >= 0.0 && psi.is_finite()) {
        return Err(Error::input(format!(
            "svt threshold must be >= 0, got {psi}"
        )));
    }
    let eig = sym_eig(m)?;
    Ok(truncate_eigen(&eig, psi))
}

pub(crate) fn truncate_eigen(eig: &EigenPair, psi: f64) -> LowRankComponent {
    let keep = eig.values.iter().take_while(|v| **v - psi > 0.0).count();
    let basis = eig.vectors.columns(0, keep).into_owned();
    let eigvals = eig.values[..keep].iter().map(|v| v - psi).collect();
    LowRankComponent::from_parts_unchecked(basis, eigvals)
}

/// Entrywise soft-thresholding of off-diagonal entries; the diagonal is kept.
pub fn soft_threshold_offdiag(m: &SymMatrix, rho: f64) -> Result<SparseComponent> {
    check_threshold(rho)?;
    Ok(SparseComponent::from_matrix(SymMatrix(soft_offdiag_raw(
        m.as_matrix(),
        rho,
    ))))
}

pub(crate) fn soft_offdiag_raw(a: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let p = a.nrows();
    let mut out = a.clone();
    for j in 0..p {
        for i in 0..p {
            if i != j {
                let v = a[(i, j)];
                let shrunk = (v.abs() - rho).max(0.0);
                out[(i, j)] = if shrunk == 0.0 {
                    0.0
                } else {
                    v.signum() * shrunk
                };
            }
        }
    }
    out
}

/// Entrywise hard-thresholding of off-diagonal entries: entries with
/// `|m_ij| < level` are zeroed, survivors are untouched.
pub fn hard_threshold_offdiag(m: &SymMatrix, level: f64) -> Result<SparseComponent> {
    check_threshold(level)?;
    let p = m.dim();
    let mut out = m.as_matrix().clone();
    for j in 0..p {
        for i in 0..p {
            if i != j && out[(i, j)].abs() < level {
                out[(i, j)] = 0.0;
            }
        }
    }
    Ok(SparseComponent::from_matrix(SymMatrix(out)))
}

fn check_threshold(level: f64) -> Result<()> {
    if level >= 0.0 && level.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("threshold must be >= 0, got {level}")))
    }
}

/// `(I - U U^T) M (I - U U^T)`.
pub fn project_off_colspace(u: &DMatrix<f64>, m: &SymMatrix) -> Result<SymMatrix> {
    if u.nrows() != m.dim() {
        return Err(Error::input(format!(
            "basis has {} rows but matrix is {}x{}",
            u.nrows(),
            m.dim(),
            m.dim()
        )));
    }
    check_orthonormal(u, ORTHONORMAL_TOL)?;
    let left = project_rows_off(u, m.as_matrix());
    let both = project_rows_off(u, &left.transpose());
    Ok(SymMatrix::symmetrized(both))
}

/// `(I - U U^T) A` for a `p x k` matrix `A`.
pub fn project_rows_off(u: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    if u.ncols() == 0 {
        return a.clone();
    }
    let coeffs = u.transpose() * a;
    a - u * coeffs
}

pub fn check_orthonormal(u: &DMatrix<f64>, tol: f64) -> Result<()> {
    let r = u.ncols();
    if r == 0 {
        return Ok(());
    }
    let gram = u.transpose() * u;
    let dev = (gram - DMatrix::<f64>::identity(r, r)).amax();
    if dev.is_finite() && dev <= tol {
        Ok(())
    } else {
        Err(Error::input(format!(
            "basis is not orthonormal (max |U^T U - I| = {dev:.3e})"
        )))
    }
}

/// `A diag(d)`.
pub(crate) fn scale_columns(a: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut out = a.clone();
    for (k, s) in d.iter().enumerate() {
        out.column_mut(k).scale_mut(*s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(p: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
        SymMatrix::new(&a + a.transpose()).unwrap()
    }

    fn random_psd(p: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(p, p + 2, |_, _| rng.gen_range(-1.0..1.0));
        SymMatrix::new(&a * a.transpose()).unwrap()
    }

    #[test]
    fn construction_symmetrizes() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let s = SymMatrix::new(m).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(1, 0), 1.0);
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
        assert!(SymMatrix::new(DMatrix::zeros(0, 0)).is_err());
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(SymMatrix::new(m).is_err());
    }

    #[test]
    fn eig_identity() {
        let e = sym_eig(&SymMatrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(e.vectors, DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn eig_diagonal() {
        let e = sym_eig(&SymMatrix::from_diagonal(&[1.0, 3.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(e.values[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eig_reconstructs_random_5x5() {
        let m = random_sym(5, 11);
        let e = sym_eig(&m).unwrap();
        let rel = (e.reconstruct().as_matrix() - m.as_matrix()).norm() / m.as_matrix().norm();
        assert!(rel < 1e-8, "relative error {rel}");
        let gram = e.vectors.transpose() * &e.vectors;
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-10);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        for k in 0..5 {
            let col = e.vectors.column(k);
            let pivot = col.iamax();
            assert!(col[pivot] > 0.0);
        }
    }

    #[test]
    fn eig_is_bitwise_deterministic() {
        let m = random_sym(9, 3);
        assert_eq!(sym_eig(&m).unwrap(), sym_eig(&m).unwrap());
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm(&SymMatrix::identity(3), NormKind::Nuclear), 3.0);
        let m = SymMatrix::from_row_slice(2, &[1.0, 0.5, 0.5, 2.0]).unwrap();
        assert_eq!(norm(&m, NormKind::L1Off), 0.5);
        assert_abs_diff_eq!(
            norm(&m, NormKind::Spectral),
            (3.0 + 2f64.sqrt()) / 2.0,
            epsilon = 1e-12
        );
        assert_eq!(norm(&m, NormKind::L0), 4.0);
        assert_eq!(norm(&m, NormKind::L1), 4.0);
        assert_eq!(norm(&m, NormKind::Max), 2.0);
        assert_eq!(norm(&m, NormKind::DegreeMax), 2.0);
        assert_eq!(norm(&m, NormKind::L1RowMax), 2.5);
        assert_abs_diff_eq!(
            norm(&m, NormKind::Frobenius),
            5.5f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn spectral_norm_of_indefinite_uses_magnitude() {
        let m = SymMatrix::from_diagonal(&[1.0, -4.0]).unwrap();
        assert_eq!(norm(&m, NormKind::Spectral), 4.0);
        assert_eq!(norm(&m, NormKind::Nuclear), -3.0);
    }

    #[test]
    fn svt_examples() {
        let l = svt(&SymMatrix::from_diagonal(&[3.0, 1.0]).unwrap(), 2.0).unwrap();
        assert_eq!(l.rank(), 1);
        assert_abs_diff_eq!(l.eigvals()[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(l.basis()[(0, 0)].abs(), 1.0, epsilon = 1e-14);

        let l = svt(&SymMatrix::from_diagonal(&[5.0, 4.0, 1.0]).unwrap(), 1.5).unwrap();
        assert_eq!(l.rank(), 2);
        assert_abs_diff_eq!(l.eigvals()[0], 3.5, epsilon = 1e-14);
        assert_abs_diff_eq!(l.eigvals()[1], 2.5, epsilon = 1e-14);

        let m = random_psd(6, 4);
        let l = svt(&m, 0.0).unwrap();
        assert_eq!(l.rank(), 6);
        assert!((l.reconstruct().as_matrix() - m.as_matrix()).amax() < 1e-10);

        let empty = svt(&SymMatrix::identity(3), 1.0).unwrap();
        assert_eq!(empty.rank(), 0);
        assert_eq!(empty.reconstruct(), SymMatrix::zeros(3));
        assert!(svt(&SymMatrix::identity(2), -1.0).is_err());
    }

    #[test]
    fn soft_threshold_examples() {
        let m = SymMatrix::from_row_slice(2, &[1.0, 0.5, 0.5, 2.0]).unwrap();
        let s = soft_threshold_offdiag(&m, 0.3).unwrap();
        assert_abs_diff_eq!(s.matrix().get(0, 1), 0.2, epsilon = 1e-15);
        assert_eq!(s.matrix().get(0, 0), 1.0);
        assert_eq!(s.matrix().get(1, 1), 2.0);
        assert_eq!(s.support(), &[(0, 1)]);

        assert_eq!(soft_threshold_offdiag(&m, 0.0).unwrap().matrix(), &m);

        let m = SymMatrix::from_row_slice(2, &[1.0, 0.1, 0.1, 1.0]).unwrap();
        let s = soft_threshold_offdiag(&m, 0.2).unwrap();
        assert_eq!(s.matrix(), &SymMatrix::identity(2));
        assert!(s.support().is_empty());
    }

    #[test]
    fn hard_threshold_keeps_survivors() {
        let m =
            SymMatrix::from_row_slice(3, &[1.0, 0.5, -0.1, 0.5, 2.0, 0.3, -0.1, 0.3, 3.0]).unwrap();
        let s = hard_threshold_offdiag(&m, 0.3).unwrap();
        assert_eq!(s.matrix().get(0, 1), 0.5);
        assert_eq!(s.matrix().get(1, 2), 0.3);
        assert_eq!(s.matrix().get(0, 2), 0.0);
        assert_eq!(s.support(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn projection_examples() {
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let p = project_off_colspace(&u, &SymMatrix::identity(2)).unwrap();
        assert_eq!(p, SymMatrix::from_diagonal(&[0.0, 1.0]).unwrap());

        let eig = sym_eig(&random_sym(4, 8)).unwrap();
        let u = eig.vectors.columns(0, 2).into_owned();
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, -1.0]);
        let inside = SymMatrix::new(&u * a * u.transpose()).unwrap();
        let p = project_off_colspace(&u, &inside).unwrap();
        assert!(p.as_matrix().amax() < 1e-12);

        let bad = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(project_off_colspace(&bad, &SymMatrix::identity(2)).is_err());
    }

    #[test]
    fn projection_matches_explicit_products() {
        let m = random_sym(4, 21);
        let eig = sym_eig(&random_sym(4, 22)).unwrap();
        let u = eig.vectors.columns(0, 2).into_owned();
        let proj = DMatrix::identity(4, 4) - &u * u.transpose();
        let oracle = &proj * m.as_matrix() * &proj;
        let got = project_off_colspace(&u, &m).unwrap();
        assert!((got.as_matrix() - oracle).amax() < 1e-12);
    }

    #[test]
    fn operator_norm_matches_singular_values() {
        let a = DMatrix::from_row_slice(2, 3, &[3.0, 0.0, 0.0, 0.0, -2.0, 0.0]);
        assert_abs_diff_eq!(operator_norm(&a), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(operator_norm(&a.transpose()), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn low_rank_validation() {
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(LowRankComponent::new(u.clone(), vec![1.0]).is_ok());
        assert!(LowRankComponent::new(u.clone(), vec![-1.0]).is_err());
        assert!(LowRankComponent::new(u, vec![1.0, 2.0]).is_err());
        let two = DMatrix::identity(2, 2);
        assert!(LowRankComponent::new(two, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn sparse_degrees_and_support() {
        let m =
            SymMatrix::from_row_slice(3, &[1.0, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 1.0]).unwrap();
        let s = SparseComponent::from_matrix(m);
        assert_eq!(s.degrees(), vec![1, 2, 1]);
        assert!(s.contains(2, 1));
        assert!(!s.contains(0, 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn svt_spectral_bound(seed in 0u64..10_000, psi in 0.0f64..3.0) {
            let m = random_sym(6, seed);
            let l = svt(&m, psi).unwrap();
            let top = m.eigenvalues()[0];
            let bound = (top - psi).max(0.0);
            prop_assert!(norm(&l.reconstruct(), NormKind::Spectral) <= bound + 1e-10);
        }

        #[test]
        fn soft_threshold_contracts(seed in 0u64..10_000, rho in 0.0f64..1.5) {
            let m = random_sym(6, seed);
            let s = soft_threshold_offdiag(&m, rho).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert!(s.matrix().get(i, j).abs() <= m.get(i, j).abs());
                    prop_assert_eq!(s.matrix().get(i, j), s.matrix().get(j, i));
                }
            }
            let expected: Vec<(usize, usize)> = (0..6)
                .flat_map(|i| ((i + 1)..6).map(move |j| (i, j)))
                .filter(|&(i, j)| s.matrix().get(i, j) != 0.0)
                .collect();
            prop_assert_eq!(s.support(), expected.as_slice());
        }

        #[test]
        fn nuclear_equals_trace_on_psd(seed in 0u64..10_000) {
            let m = random_psd(5, seed);
            let diff = (norm(&m, NormKind::Nuclear) - m.trace()).abs();
            prop_assert!(diff <= 1e-10 * m.trace().max(1.0));
        }

        #[test]
        fn projection_annihilates_basis(seed in 0u64..10_000, r in 1usize..4) {
            let m = random_sym(5, seed);
            let u = sym_eig(&random_sym(5, seed + 1)).unwrap().vectors.columns(0, r).into_owned();
            let p = project_off_colspace(&u, &m).unwrap();
            prop_assert!((u.transpose() * p.as_matrix()).amax() < 1e-8);
        }
    }
}
