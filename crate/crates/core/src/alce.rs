//! ALCE solver, UNALCE re-fit, threshold grids and threshold diagnostics.
//!
//! The solver minimizes
//!
//! ```text
//! 1/2 ||Sigma_n - L - S||_F^2 + 2 psi tr(L) + 2 rho sum_{i != j} |S_ij|,   L psd
//! ```
//!
//! by accelerated proximal gradient with step 1/2. Each step is an eigenvalue
//! threshold of the L-directed gradient iterate at `psi` followed by an
//! off-diagonal soft threshold of the S-directed iterate at `rho`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    norm, off_diagonal_l1, project_off_colspace, soft_offdiag_raw, sym_eig, truncate_eigen,
    LowRankComponent, NormKind, SparseComponent, SymMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Relative tolerance on the Frobenius change between accepted iterates.
    pub tol: f64,
    pub accelerate: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: 1e-6,
            accelerate: true,
        }
    }
}

/// Output of [`solve_penalized`].
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedFit {
    pub l_alce: LowRankComponent,
    pub s_alce: SparseComponent,
    /// Pre-threshold L iterate of the final accepted iteration.
    pub y_pre: SymMatrix,
    /// Pre-threshold S iterate of the final accepted iteration.
    pub z_pre: SymMatrix,
    pub psi: f64,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted iteration.
    pub objective_trace: Vec<f64>,
    /// Iteration indices at which momentum was reset.
    pub restarts: Vec<usize>,
}

impl PenalizedFit {
    pub fn rank(&self) -> usize {
        self.l_alce.rank()
    }

    pub fn sigma(&self) -> SymMatrix {
        self.l_alce.reconstruct().add(self.s_alce.matrix())
    }
}

/// Objective of the penalized problem at `(l, s)`.
pub fn objective(sigma_n: &SymMatrix, l: &SymMatrix, s: &SymMatrix, psi: f64, rho: f64) -> f64 {
    let resid = sigma_n.as_matrix() - l.as_matrix() - s.as_matrix();
    0.5 * resid.norm_squared() + 2.0 * psi * l.trace() + 4.0 * rho * off_diagonal_l1(s.as_matrix())
}

fn check_thresholds(psi: f64, rho: f64) -> Result<()> {
    if !(psi > 0.0 && psi.is_finite()) {
        return Err(Error::input(format!("psi must be positive, got {psi}")));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::input(format!("rho must be positive, got {rho}")));
    }
    Ok(())
}

/// Solves the penalized problem from the default start `L = 0`, `S = diag(Sigma_n)`.
pub fn solve_penalized(
    sigma_n: &SymMatrix,
    psi: f64,
    rho: f64,
    opts: &SolverOptions,
) -> Result<PenalizedFit> {
    solve_penalized_from(sigma_n, psi, rho, opts, None)
}

/// Solves the penalized problem starting from `start = (L, S)` when given.
pub fn solve_penalized_from(
    sigma_n: &SymMatrix,
    psi: f64,
    rho: f64,
    opts: &SolverOptions,
    start: Option<(&SymMatrix, &SymMatrix)>,
) -> Result<PenalizedFit> {
    check_thresholds(psi, rho)?;
    if opts.max_iter == 0 || !(opts.tol > 0.0) {
        return Err(Error::input("solver needs max_iter >= 1 and tol > 0"));
    }
    if !sigma_n.is_finite() {
        return Err(Error::input("sample covariance has non-finite entries"));
    }
    let p = sigma_n.dim();
    let sig = sigma_n.as_matrix();
    let (mut l, mut s) = match start {
        Some((l0, s0)) => {
            if l0.dim() != p || s0.dim() != p {
                return Err(Error::input("warm start has the wrong dimension"));
            }
            (l0.as_matrix().clone(), s0.as_matrix().clone())
        }
        None => (
            DMatrix::zeros(p, p),
            DMatrix::from_diagonal(&sigma_n.diagonal()),
        ),
    };
    let obj = |l: &DMatrix<f64>, l_trace: f64, s: &DMatrix<f64>| {
        0.5 * (sig - l - s).norm_squared() + 2.0 * psi * l_trace + 4.0 * rho * off_diagonal_l1(s)
    };

    let mut obj_prev = obj(&l, l.trace(), &s);
    let mut lm = l.clone();
    let mut sm = s.clone();
    let mut t = 1.0_f64;
    let mut momentum = false;
    let scale = opts.tol * sig.norm().max(1.0);

    let mut trace = Vec::new();
    let mut restarts = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last: Option<(LowRankComponent, DMatrix<f64>, DMatrix<f64>)> = None;

    for k in 0..opts.max_iter {
        iterations = k + 1;
        let resid = sig - &lm - &sm;
        let y = &lm + &resid * 0.5;
        let z = &sm + &resid * 0.5;
        if y.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite iterate at iteration {k}"
            )));
        }
        let y_sym = SymMatrix::symmetrized(y);
        let low = truncate_eigen(&sym_eig(&y_sym)?, psi);
        let l_new = low.reconstruct().into_matrix();
        let s_new = soft_offdiag_raw(&z, rho);
        let obj_new = obj(&l_new, low.trace(), &s_new);

        if opts.accelerate && momentum && obj_new > obj_prev {
            t = 1.0;
            lm = l.clone();
            sm = s.clone();
            momentum = false;
            restarts.push(k);
            continue;
        }

        let change = ((&l_new - &l).norm_squared() + (&s_new - &s).norm_squared()).sqrt();
        if opts.accelerate {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            lm = &l_new + (&l_new - &l) * beta;
            sm = &s_new + (&s_new - &s) * beta;
            momentum = beta > 0.0;
            t = t_next;
        } else {
            lm = l_new.clone();
            sm = s_new.clone();
        }
        l = l_new;
        s = s_new;
        obj_prev = obj_new;
        trace.push(obj_new);
        last = Some((low, y_sym.into_matrix(), z));
        if change <= scale {
            converged = true;
            break;
        }
    }

    let (low, y, z) = match last {
        Some(v) => v,
        None => return Err(Error::numeric("solver accepted no iterate")),
    };
    if !converged {
        log::warn!(
            "solver stopped at max_iter={} without converging (psi={psi}, rho={rho})",
            opts.max_iter
        );
    }
    Ok(PenalizedFit {
        l_alce: low,
        s_alce: SparseComponent::from_matrix(SymMatrix::symmetrized(s)),
        y_pre: SymMatrix::symmetrized(y),
        z_pre: SymMatrix::symmetrized(z),
        psi,
        rho,
        iterations,
        converged,
        objective_trace: trace,
        restarts,
    })
}

/// UNALCE re-fit of a [`PenalizedFit`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnalceFit {
    pub l_un: LowRankComponent,
    pub s_un: SparseComponent,
    pub psi_breve: f64,
    /// Thresholds of the fit this re-fit was derived from.
    pub source_psi: f64,
    pub source_rho: f64,
}

impl UnalceFit {
    pub fn rank(&self) -> usize {
        self.l_un.rank()
    }

    pub fn sigma(&self) -> SymMatrix {
        self.l_un.reconstruct().add(self.s_un.matrix())
    }
}

/// Shifts the ALCE eigenvalues up by `psi_breve` (default: the fit's `psi`)
/// and moves the diagonal difference into the sparse part.
pub fn unalce_refit(fit: &PenalizedFit, psi_breve: Option<f64>) -> Result<UnalceFit> {
    if fit.rank() == 0 {
        return Err(Error::RankZeroRefit);
    }
    let shift = psi_breve.unwrap_or(fit.psi);
    if !(shift >= 0.0 && shift.is_finite()) {
        return Err(Error::input(format!("psi_breve must be >= 0, got {shift}")));
    }
    let l_un = fit.l_alce.shifted(shift)?;
    let total_diag = fit.l_alce.diagonal() + fit.s_alce.matrix().diagonal();
    let s_diag = total_diag - l_un.diagonal();
    let s_un = fit.s_alce.with_diagonal(&s_diag);
    Ok(UnalceFit {
        l_un,
        s_un,
        psi_breve: shift,
        source_psi: fit.psi,
        source_rho: fit.rho,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalThresholds {
    pub psi: f64,
    pub rho_low: f64,
    pub rho_high: f64,
}

impl TheoreticalThresholds {
    pub fn interval_empty(&self) -> bool {
        self.rho_low > self.rho_high
    }
}

/// `psi = p^alpha / (xi_t sqrt(n))` and `rho in [9 xi_t psi, psi / (6 mu_omega)]`.
pub fn compute_theoretical_thresholds(
    p: usize,
    n: usize,
    alpha: f64,
    xi_t: f64,
    mu_omega: f64,
) -> Result<TheoreticalThresholds> {
    if p == 0 || n == 0 {
        return Err(Error::input("p and n must be positive"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::input(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    if !(xi_t > 0.0 && mu_omega > 0.0) {
        return Err(Error::input("xi_t and mu_omega must be positive"));
    }
    let psi = (p as f64).powf(alpha) / (xi_t * (n as f64).sqrt());
    let out = TheoreticalThresholds {
        psi,
        rho_low: 9.0 * xi_t * psi,
        rho_high: psi / (6.0 * mu_omega),
    };
    if out.interval_empty() {
        log::warn!(
            "admissible rho interval is empty: 9*xi={:.4} > 1/(6*mu)={:.4}",
            9.0 * xi_t,
            1.0 / (6.0 * mu_omega)
        );
    }
    Ok(out)
}

/// `2 max_i ||U_i||^2`, an upper-bound proxy for the rank-sparsity measure xi(T).
pub fn incoherence_proxy(l: &LowRankComponent) -> Result<f64> {
    if l.rank() == 0 {
        return Err(Error::input("incoherence proxy needs rank >= 1"));
    }
    let u = l.basis();
    let max_row = (0..u.nrows())
        .map(|i| u.row(i).norm_squared())
        .fold(0.0, f64::max);
    Ok(2.0 * max_row)
}

/// Maximum off-diagonal degree of the sparse component.
pub fn degree_mu(s: &SparseComponent) -> usize {
    s.degrees().into_iter().max().unwrap_or(0)
}

/// How the UNALCE shift is chosen for each grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsiBreve {
    /// Shift by the cell's own `psi`.
    SameAsPsi,
    Fixed(f64),
}

/// Model-selection rule applied to a threshold grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    /// Minimum `||Sigma_un - Sigma_n||_2` among admissible fits.
    SpectralLoss,
    /// Minimum `||Sigma_un - Sigma_n||_F` among admissible fits.
    FrobeniusLoss,
    /// Restricts to the most frequent admissible rank (ties toward smaller
    /// rank), then minimum spectral loss.
    RankPlateau,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub solver: SolverOptions,
    pub psi_breve: PsiBreve,
    pub rule: SelectionRule,
    /// Fit cells concurrently without warm starts.
    pub parallel: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            psi_breve: PsiBreve::SameAsPsi,
            rule: SelectionRule::SpectralLoss,
            parallel: false,
        }
    }
}

/// Per-cell diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDiagnostics {
    pub rank: usize,
    pub s_un_min_eig: Option<f64>,
    pub spectral_loss: Option<f64>,
    pub frobenius_loss: Option<f64>,
    pub converged: bool,
    /// Empty when the cell is admissible.
    pub inadmissible: Vec<String>,
}

impl CellDiagnostics {
    pub fn admissible(&self) -> bool {
        self.inadmissible.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub psi: f64,
    pub rho: f64,
    pub fit: PenalizedFit,
    pub unalce: Option<UnalceFit>,
    pub diagnostics: CellDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGridResult {
    /// Cells in `psi`-major order of the input grids.
    pub fits: Vec<GridCell>,
    pub selected: usize,
    /// Criterion per cell; `f64::INFINITY` for inadmissible cells.
    pub criterion_values: Vec<f64>,
    pub rule: SelectionRule,
}

impl ThresholdGridResult {
    pub fn selected_cell(&self) -> &GridCell {
        &self.fits[self.selected]
    }

    pub fn selected_unalce(&self) -> &UnalceFit {
        self.fits[self.selected]
            .unalce
            .as_ref()
            .expect("selected cell is admissible")
    }
}

fn evaluate_cell(
    sigma_n: &SymMatrix,
    psi: f64,
    rho: f64,
    fit: PenalizedFit,
    psi_breve: PsiBreve,
) -> Result<GridCell> {
    let mut reasons = Vec::new();
    let rank = fit.rank();
    let (unalce, s_min, spec, frob) = if rank == 0 {
        reasons.push("rank 0".to_string());
        (None, None, None, None)
    } else {
        let shift = match psi_breve {
            PsiBreve::SameAsPsi => psi,
            PsiBreve::Fixed(v) => v,
        };
        let un = unalce_refit(&fit, Some(shift))?;
        let s_min = un.s_un.matrix().min_eigenvalue();
        if !(s_min > 0.0) {
            reasons.push(format!("S_un not positive definite (min eig {s_min:.3e})"));
        }
        let diff = un.sigma().sub(sigma_n);
        let spec = norm(&diff, NormKind::Spectral);
        let frob = norm(&diff, NormKind::Frobenius);
        (Some(un), Some(s_min), Some(spec), Some(frob))
    };
    if !fit.converged {
        log::debug!("grid cell psi={psi}, rho={rho} did not converge");
    }
    Ok(GridCell {
        psi,
        rho,
        diagnostics: CellDiagnostics {
            rank,
            s_un_min_eig: s_min,
            spectral_loss: spec,
            frobenius_loss: frob,
            converged: fit.converged,
            inadmissible: reasons,
        },
        fit,
        unalce,
    })
}

/// Fits every `(psi, rho)` pair and selects one cell by `opts.rule`.
///
/// The serial path visits `psi` values in the given order, warm-starting each
/// cell from its predecessor; the parallel path starts every cell cold.
pub fn threshold_grid(
    sigma_n: &SymMatrix,
    psi_grid: &[f64],
    rho_grid: &[f64],
    opts: &GridOptions,
) -> Result<ThresholdGridResult> {
    if psi_grid.is_empty() || rho_grid.is_empty() {
        return Err(Error::input("threshold grids must be non-empty"));
    }
    for &v in psi_grid.iter().chain(rho_grid) {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::input(format!(
                "grid thresholds must be positive, got {v}"
            )));
        }
    }
    let pairs: Vec<(f64, f64)> = psi_grid
        .iter()
        .flat_map(|&psi| rho_grid.iter().map(move |&rho| (psi, rho)))
        .collect();

    let cells: Vec<GridCell> = if opts.parallel {
        pairs
            .par_iter()
            .map(|&(psi, rho)| {
                let fit = solve_penalized(sigma_n, psi, rho, &opts.solver)?;
                evaluate_cell(sigma_n, psi, rho, fit, opts.psi_breve)
            })
            .collect::<Result<_>>()?
    } else {
        let mut out: Vec<GridCell> = Vec::with_capacity(pairs.len());
        for &(psi, rho) in &pairs {
            let fit = match out.last() {
                Some(prev) => {
                    let l0 = prev.fit.l_alce.reconstruct();
                    solve_penalized_from(
                        sigma_n,
                        psi,
                        rho,
                        &opts.solver,
                        Some((&l0, prev.fit.s_alce.matrix())),
                    )?
                }
                None => solve_penalized(sigma_n, psi, rho, &opts.solver)?,
            };
            out.push(evaluate_cell(sigma_n, psi, rho, fit, opts.psi_breve)?);
        }
        out
    };

    let criterion_values = selection_criterion(&cells, opts.rule);
    let keys: Vec<(f64, f64)> = cells.iter().map(|c| (c.psi, c.rho)).collect();
    let selected = select_index(&criterion_values, &keys);
    let Some(selected) = selected else {
        let listing: Vec<String> = cells
            .iter()
            .map(|c| {
                format!(
                    "(psi={}, rho={}): {}",
                    c.psi,
                    c.rho,
                    c.diagnostics.inadmissible.join("; ")
                )
            })
            .collect();
        return Err(Error::NoAdmissibleFit(listing.join(", ")));
    };
    Ok(ThresholdGridResult {
        fits: cells,
        selected,
        criterion_values,
        rule: opts.rule,
    })
}

/// Index of the smallest finite value; ties go to the larger `psi`, then the
/// larger `rho`.
fn select_index(values: &[f64], keys: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &c) in values.iter().enumerate() {
        if !c.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(j) => {
                let cj = values[j];
                let better = c < cj || (c == cj && keys[i] > keys[j]);
                Some(if better { i } else { j })
            }
        };
    }
    best
}

fn selection_criterion(cells: &[GridCell], rule: SelectionRule) -> Vec<f64> {
    let base = |c: &GridCell| -> f64 {
        if !c.diagnostics.admissible() {
            return f64::INFINITY;
        }
        match rule {
            SelectionRule::FrobeniusLoss => c.diagnostics.frobenius_loss,
            _ => c.diagnostics.spectral_loss,
        }
        .unwrap_or(f64::INFINITY)
    };
    let mut values: Vec<f64> = cells.iter().map(base).collect();
    if rule == SelectionRule::RankPlateau {
        let max_rank = cells.iter().map(|c| c.diagnostics.rank).max().unwrap_or(0);
        let mut counts = vec![0usize; max_rank + 1];
        for c in cells.iter().filter(|c| c.diagnostics.admissible()) {
            counts[c.diagnostics.rank] += 1;
        }
        let modal = counts
            .iter()
            .enumerate()
            .fold(
                (0, 0),
                |best, (r, &n)| if n > best.1 { (r, n) } else { best },
            )
            .0;
        for (v, c) in values.iter_mut().zip(cells) {
            if c.diagnostics.rank != modal {
                *v = f64::INFINITY;
            }
        }
    }
    values
}

/// Ground truth used by [`corollary_bound_report`].
#[derive(Debug, Clone, Copy)]
pub struct TruthRef<'a> {
    pub l: &'a LowRankComponent,
    pub s: &'a SymMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthLosses {
    pub l_spectral: f64,
    pub s_max: f64,
    pub sigma_spectral: f64,
    pub projection_spectral: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub s_un_min_eig: f64,
    pub sigma_un_min_eig: f64,
    pub s_un_pd: bool,
    pub sigma_un_pd: bool,
    pub rank: usize,
    pub truth: Option<TruthLosses>,
}

/// Positive-definiteness diagnostics of a UNALCE fit and, with ground truth,
/// its estimation losses.
pub fn corollary_bound_report(
    fit: &PenalizedFit,
    unalce: &UnalceFit,
    truth: Option<TruthRef<'_>>,
) -> Result<BoundReport> {
    let s_min = unalce.s_un.matrix().min_eigenvalue();
    let sigma_un = unalce.sigma();
    let sigma_min = sigma_un.min_eigenvalue();
    let truth = match truth {
        None => None,
        Some(t) => {
            let l_hat = unalce.l_un.reconstruct();
            let l_star = t.l.reconstruct();
            let dl = l_hat.sub(&l_star);
            let ds = unalce.s_un.matrix().sub(t.s);
            let dsig = sigma_un.sub(&l_star.add(t.s));
            let proj = project_off_colspace(t.l.basis(), &dl)?;
            Some(TruthLosses {
                l_spectral: norm(&dl, NormKind::Spectral),
                s_max: norm(&ds, NormKind::Max),
                sigma_spectral: norm(&dsig, NormKind::Spectral),
                projection_spectral: norm(&proj, NormKind::Spectral),
            })
        }
    };
    Ok(BoundReport {
        s_un_min_eig: s_min,
        sigma_un_min_eig: sigma_min,
        s_un_pd: s_min > 0.0,
        sigma_un_pd: sigma_min > 0.0,
        rank: fit.rank(),
        truth,
    })
}

/// `k` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp())
        .collect()
}
