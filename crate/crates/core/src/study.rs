//! Estimator pipelines evaluated by the replicate runner: UNALCE and POET
//! followed by factor scores and the standard loss metrics.

use crate::alce::{
    log_grid, solve_penalized, threshold_grid, unalce_refit, GridOptions, PenalizedFit, PsiBreve,
    SelectionRule, SolverOptions, ThresholdGridResult, UnalceFit,
};
use crate::error::{Error, Result};
use crate::io::{sample_covariance, CovarianceScaling};
use crate::linalg::{LowRankComponent, SparseComponent, SymMatrix};
use crate::metrics::{
    covariance_summary, eigen_dispersion, false_negatives, loss_b, loss_bf, loss_f, pr_err,
    recovery_flags, variability_stats, CovarianceSummary, VariabilityStats,
};
use crate::poet::{cross_validate_c_with, poet_fit, CvOptions, PoetFit, ThresholdKind};
use crate::report::{covariance_table, key_values, variability_table};
use crate::scores::{bartlett_scores, rotation_h, thompson_scores, ScoreMethod};
use crate::sim::{MetricValues, Replicate, ReplicateEvaluator};
use nalgebra::DMatrix;

pub const LOSS_B: &str = "loss_b";
pub const LOSS_F: &str = "loss_f";
pub const LOSS_BF: &str = "loss_bf";
pub const PR_ERR: &str = "pr_err";
pub const DISPERSION: &str = "dispersion";
pub const RANK: &str = "rank";
pub const RANK_HIT: &str = "rank_hit";
pub const NO_FALSE_NEGATIVES: &str = "no_false_negatives";
pub const PSI: &str = "psi";
pub const RHO: &str = "rho";
pub const POET_C: &str = "c";

/// How an evaluator picks `(psi, rho)` for each replicate.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdPolicy {
    Fixed {
        psi: f64,
        rho: f64,
    },
    /// `psi` as fractions of `lambda_1(Sigma_n)`, `rho` as fractions of the
    /// mean sample variance, so that one grid serves data of any scale.
    Relative {
        psi_frac: Vec<f64>,
        rho_frac: Vec<f64>,
        rule: SelectionRule,
    },
    Grid {
        psi: Vec<f64>,
        rho: Vec<f64>,
        rule: SelectionRule,
    },
}

impl ThresholdPolicy {
    /// Eight `psi` values log-spaced over `[0.01, 0.5] * lambda_1`, three `rho`
    /// values at 2%, 5% and 10% of the mean variance, rank-plateau selection.
    pub fn study_default() -> Self {
        ThresholdPolicy::Relative {
            psi_frac: log_grid(0.01, 0.5, 8),
            rho_frac: vec![0.02, 0.05, 0.1],
            rule: SelectionRule::RankPlateau,
        }
    }
}

/// Selected ALCE fit and its UNALCE re-fit.
#[derive(Debug, Clone)]
pub struct SelectedFit {
    pub fit: PenalizedFit,
    pub unalce: UnalceFit,
}

pub fn fit_with_policy(
    sigma_n: &SymMatrix,
    policy: &ThresholdPolicy,
    psi_breve: PsiBreve,
    solver: &SolverOptions,
) -> Result<SelectedFit> {
    let grid = |psi: Vec<f64>, rho: Vec<f64>, rule: SelectionRule| -> Result<SelectedFit> {
        let opts = GridOptions {
            solver: *solver,
            psi_breve,
            rule,
            parallel: false,
        };
        let mut res = threshold_grid(sigma_n, &psi, &rho, &opts)?;
        let cell = res.fits.swap_remove(res.selected);
        Ok(SelectedFit {
            fit: cell.fit,
            unalce: cell.unalce.expect("selected cell is admissible"),
        })
    };
    match policy {
        ThresholdPolicy::Fixed { psi, rho } => {
            let fit = solve_penalized(sigma_n, *psi, *rho, solver)?;
            let shift = match psi_breve {
                PsiBreve::SameAsPsi => *psi,
                PsiBreve::Fixed(v) => v,
            };
            let unalce = unalce_refit(&fit, Some(shift))?;
            Ok(SelectedFit { fit, unalce })
        }
        ThresholdPolicy::Relative {
            psi_frac,
            rho_frac,
            rule,
        } => {
            let top = sigma_n.max_eigenvalue();
            let var = sigma_n.trace() / sigma_n.dim() as f64;
            if !(top > 0.0 && var > 0.0) {
                return Err(Error::DegenerateSpectrum(
                    "sample covariance is zero".into(),
                ));
            }
            grid(
                psi_frac.iter().map(|f| f * top).collect(),
                rho_frac.iter().map(|f| f * var).collect(),
                *rule,
            )
        }
        ThresholdPolicy::Grid { psi, rho, rule } => grid(psi.clone(), rho.clone(), *rule),
    }
}

/// Loadings, eigenvalues and residual of an estimate, ready for scoring.
struct Estimate<'a> {
    low: &'a LowRankComponent,
    sparse: &'a SparseComponent,
}

fn score_metrics(
    rep: &Replicate,
    est: &Estimate<'_>,
    method: ScoreMethod,
    out: &mut MetricValues,
) -> Result<()> {
    let b_hat = est.low.loadings();
    let x = &rep.centered;
    let fit = match method {
        ScoreMethod::Bartlett => bartlett_scores(&b_hat, est.sparse.matrix(), x)?,
        ScoreMethod::Thompson => thompson_scores(&b_hat, est.sparse.matrix(), x)?,
        other => {
            return Err(Error::input(format!(
                "score method {} is not supported in studies",
                other.name()
            )))
        }
    };
    let f_true = &rep.draw.factors;
    let b_true = &rep.truth.b_true;
    let h = rotation_h(est.low.eigvals(), &fit.f, f_true, b_true)?;
    out.push((LOSS_B.into(), loss_b(&b_hat, b_true, &h)?));
    out.push((LOSS_F.into(), loss_f(&fit.f, f_true, &h)?));
    out.push((LOSS_BF.into(), loss_bf(&b_hat, &fit.f, b_true, f_true)?));
    Ok(())
}

fn covariance_metrics(rep: &Replicate, est: &Estimate<'_>, out: &mut MetricValues) -> Result<()> {
    let l_hat = est.low.reconstruct();
    let sigma_hat = l_hat.add(est.sparse.matrix());
    let mu = rep.truth.sigma_true.trace() / rep.truth.sigma_true.dim() as f64;
    out.push((PR_ERR.into(), pr_err(&l_hat, &rep.truth.l_true)?));
    out.push((DISPERSION.into(), eigen_dispersion(&sigma_hat, mu)));
    out.push((RANK.into(), est.low.rank() as f64));
    Ok(())
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// UNALCE followed by factor scores.
#[derive(Debug, Clone)]
pub struct UnalceEvaluator {
    pub name: String,
    pub policy: ThresholdPolicy,
    pub psi_breve: PsiBreve,
    pub scores: ScoreMethod,
    pub solver: SolverOptions,
}

impl UnalceEvaluator {
    pub fn new(policy: ThresholdPolicy) -> Self {
        Self {
            name: "unalce".into(),
            policy,
            psi_breve: PsiBreve::SameAsPsi,
            scores: ScoreMethod::Bartlett,
            solver: SolverOptions::default(),
        }
    }
}

impl Default for UnalceEvaluator {
    /// Study configuration: [`ThresholdPolicy::study_default`] solved to a
    /// relative tolerance of `1e-5`.
    fn default() -> Self {
        let mut ev = Self::new(ThresholdPolicy::study_default());
        ev.solver.tol = 1e-5;
        ev
    }
}

impl ReplicateEvaluator for UnalceEvaluator {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, rep: &Replicate) -> Result<MetricValues> {
        let sel = fit_with_policy(&rep.sigma_n, &self.policy, self.psi_breve, &self.solver)?;
        let est = Estimate {
            low: &sel.unalce.l_un,
            sparse: &sel.unalce.s_un,
        };
        let mut out = Vec::new();
        score_metrics(rep, &est, self.scores, &mut out)?;
        covariance_metrics(rep, &est, &mut out)?;
        let flags = recovery_flags(
            sel.fit.rank(),
            &sel.fit.s_alce,
            rep.truth.l_true.rank(),
            &rep.truth.s_true,
        )?;
        let missed = false_negatives(&sel.fit.s_alce, &rep.truth.s_true, 2.0 * sel.fit.rho);
        out.push((RANK_HIT.into(), indicator(flags.rank_hit)));
        out.push((NO_FALSE_NEGATIVES.into(), indicator(missed == 0)));
        out.push((PSI.into(), sel.fit.psi));
        out.push((RHO.into(), sel.fit.rho));
        Ok(out)
    }
}

/// How the POET threshold constant is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum PoetConstant {
    Fixed(f64),
    CrossValidated { grid: Vec<f64>, folds: usize },
}

/// POET with the true rank followed by factor scores.
#[derive(Debug, Clone)]
pub struct PoetEvaluator {
    pub name: String,
    pub constant: PoetConstant,
    pub kind: ThresholdKind,
    pub scores: ScoreMethod,
}

impl PoetEvaluator {
    pub fn new(constant: PoetConstant) -> Self {
        Self {
            name: "poet".into(),
            constant,
            kind: ThresholdKind::Soft,
            scores: ScoreMethod::Bartlett,
        }
    }

    pub fn fit(&self, rep: &Replicate) -> Result<PoetFit> {
        let r = rep.truth.l_true.rank();
        let n = rep.centered.nrows();
        let c = match &self.constant {
            PoetConstant::Fixed(c) => *c,
            PoetConstant::CrossValidated { grid, folds } => {
                let opts = CvOptions {
                    folds: *folds,
                    kind: self.kind,
                    require_pd: true,
                };
                cross_validate_c_with(&rep.centered, r, grid, &opts)?.c
            }
        };
        poet_fit(&rep.sigma_n, n, r, c, self.kind)
    }
}

impl Default for PoetEvaluator {
    /// Soft thresholding with `C` cross-validated over `0, 0.25, ..., 3` in
    /// five folds.
    fn default() -> Self {
        Self::new(PoetConstant::CrossValidated {
            grid: linear_grid(0.0, 3.0, 13),
            folds: 5,
        })
    }
}

impl ReplicateEvaluator for PoetEvaluator {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, rep: &Replicate) -> Result<MetricValues> {
        let fit = self.fit(rep)?;
        let est = Estimate {
            low: &fit.l_poet,
            sparse: &fit.s_poet,
        };
        let mut out = Vec::new();
        score_metrics(rep, &est, self.scores, &mut out)?;
        covariance_metrics(rep, &est, &mut out)?;
        out.push((POET_C.into(), fit.c));
        Ok(out)
    }
}

/// Settings of the real-data pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RealDataOptions {
    /// `psi` values as fractions of `lambda_1(Sigma_n)`.
    pub psi_frac: Vec<f64>,
    /// `rho` values as fractions of the mean sample variance.
    pub rho_frac: Vec<f64>,
    pub rule: SelectionRule,
    pub solver: SolverOptions,
    /// POET rank; defaults to the selected UNALCE rank.
    pub poet_rank: Option<usize>,
    pub poet_grid: Vec<f64>,
    pub poet_folds: usize,
    pub poet_kind: ThresholdKind,
}

impl Default for RealDataOptions {
    /// 20 x 20 log-spaced thresholds, POET with hard thresholding and `C`
    /// cross-validated over 1000 values in `[0, 100]` with 10 folds.
    fn default() -> Self {
        Self {
            psi_frac: log_grid(0.005, 0.5, 20),
            rho_frac: log_grid(0.001, 0.5, 20),
            rule: SelectionRule::RankPlateau,
            solver: SolverOptions::default(),
            poet_rank: None,
            poet_grid: linear_grid(0.0, 100.0, 1000),
            poet_folds: 10,
            poet_kind: ThresholdKind::Hard,
        }
    }
}

/// Everything the real-data report prints.
#[derive(Debug, Clone)]
pub struct RealDataReport {
    pub grid: ThresholdGridResult,
    pub poet: PoetFit,
    pub unalce_summary: CovarianceSummary,
    pub poet_summary: CovarianceSummary,
    /// `(estimator, score method, stats)`.
    pub variability: Vec<(String, String, VariabilityStats)>,
}

impl RealDataReport {
    pub fn unalce(&self) -> &UnalceFit {
        self.grid.selected_unalce()
    }

    pub fn render(&self) -> String {
        let cell = self.grid.selected_cell();
        let mut out = key_values(&[
            ("selected psi", format!("{:.6e}", cell.psi)),
            ("selected rho", format!("{:.6e}", cell.rho)),
            ("poet C", format!("{:.4}", self.poet.c)),
            ("poet rank", self.poet.r.to_string()),
        ]);
        out.push('\n');
        out.push_str(&covariance_table(&[
            ("UNALCE", self.unalce_summary),
            ("POET", self.poet_summary),
        ]));
        out.push('\n');
        let rows: Vec<(&str, &str, VariabilityStats)> = self
            .variability
            .iter()
            .map(|(e, m, v)| (e.as_str(), m.as_str(), *v))
            .collect();
        out.push_str(&variability_table(&rows));
        out
    }
}

/// Threshold grid with UNALCE, POET at the selected rank, both summarized
/// against the sample covariance, then Bartlett and Thompson variabilities.
/// `data` must be centered.
pub fn real_data_pipeline(data: &DMatrix<f64>, opts: &RealDataOptions) -> Result<RealDataReport> {
    let sigma_n = sample_covariance(data, CovarianceScaling::Unbiased)?;
    let top = sigma_n.max_eigenvalue();
    let var = sigma_n.trace() / sigma_n.dim() as f64;
    if !(top > 0.0 && var > 0.0) {
        return Err(Error::DegenerateSpectrum(
            "sample covariance is zero".into(),
        ));
    }
    let psi: Vec<f64> = opts.psi_frac.iter().map(|f| f * top).collect();
    let rho: Vec<f64> = opts.rho_frac.iter().map(|f| f * var).collect();
    let grid = threshold_grid(
        &sigma_n,
        &psi,
        &rho,
        &GridOptions {
            solver: opts.solver,
            psi_breve: PsiBreve::SameAsPsi,
            rule: opts.rule,
            parallel: false,
        },
    )?;
    let un = grid.selected_unalce();
    let r = opts.poet_rank.unwrap_or(un.rank());
    let cv = cross_validate_c_with(
        data,
        r,
        &opts.poet_grid,
        &CvOptions {
            folds: opts.poet_folds,
            kind: opts.poet_kind,
            require_pd: true,
        },
    )?;
    let poet = poet_fit(&sigma_n, data.nrows(), r, cv.c, opts.poet_kind)?;
    let unalce_summary = covariance_summary(&un.l_un, &un.s_un, &sigma_n)?;
    let poet_summary = covariance_summary(&poet.l_poet, &poet.s_poet, &sigma_n)?;
    let mut variability = Vec::new();
    for (name, low, sparse) in [
        ("UNALCE", &un.l_un, &un.s_un),
        ("POET", &poet.l_poet, &poet.s_poet),
    ] {
        let b = low.loadings();
        for method in [ScoreMethod::Bartlett, ScoreMethod::Thompson] {
            let fit = match method {
                ScoreMethod::Bartlett => bartlett_scores(&b, sparse.matrix(), data)?,
                _ => thompson_scores(&b, sparse.matrix(), data)?,
            };
            variability.push((
                name.to_string(),
                method.name().to_string(),
                variability_stats(&b, &fit.f)?,
            ));
        }
    }
    Ok(RealDataReport {
        grid,
        poet,
        unalce_summary,
        poet_summary,
        variability,
    })
}

/// Evenly spaced values `lo, lo + step, ..., hi`.
pub fn linear_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k <= 1 {
        return vec![lo];
    }
    (0..k)
        .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_replicates, SimulationSetting};

    fn setting() -> SimulationSetting {
        SimulationSetting {
            name: "t".into(),
            p: 30,
            n: 300,
            r: 2,
            tau: 1.0,
            theta: 0.7,
            cond: 2.0,
            s: 20,
            dependence: 0.8,
            dirichlet_concentration: 1.0,
        }
    }

    #[test]
    fn fixed_policy_matches_direct_solve() {
        let rep = Replicate::generate(&setting(), 1, 0).unwrap();
        let opts = SolverOptions::default();
        let pol = ThresholdPolicy::Fixed {
            psi: 0.3,
            rho: 0.05,
        };
        let sel = fit_with_policy(&rep.sigma_n, &pol, PsiBreve::SameAsPsi, &opts).unwrap();
        let direct = solve_penalized(&rep.sigma_n, 0.3, 0.05, &opts).unwrap();
        assert_eq!(sel.fit, direct);
        assert_eq!(sel.unalce, unalce_refit(&direct, None).unwrap());
    }

    #[test]
    fn relative_policy_is_scale_free() {
        let rep = Replicate::generate(&setting(), 2, 0).unwrap();
        let pol = ThresholdPolicy::Relative {
            psi_frac: log_grid(0.02, 0.5, 4),
            rho_frac: vec![0.05, 0.1],
            rule: SelectionRule::RankPlateau,
        };
        let opts = SolverOptions::default();
        let a = fit_with_policy(&rep.sigma_n, &pol, PsiBreve::SameAsPsi, &opts).unwrap();
        let scaled = rep.sigma_n.scale(4.0);
        let b = fit_with_policy(&scaled, &pol, PsiBreve::SameAsPsi, &opts).unwrap();
        assert_eq!(a.fit.rank(), b.fit.rank());
        assert!((b.fit.psi - 4.0 * a.fit.psi).abs() < 1e-9 * b.fit.psi);
        assert!((b.fit.rho - 4.0 * a.fit.rho).abs() < 1e-9 * b.fit.rho);
        assert!(fit_with_policy(&SymMatrix::zeros(3), &pol, PsiBreve::SameAsPsi, &opts).is_err());
    }

    #[test]
    fn evaluators_report_every_metric() {
        let un = UnalceEvaluator::default();
        let poet = PoetEvaluator::default();
        let res = run_replicates(&setting(), 3, 5, &[&un, &poet]).unwrap();
        for m in [LOSS_B, LOSS_F, LOSS_BF, PR_ERR, DISPERSION, RANK] {
            assert_eq!(res.values("unalce", m).len(), 3, "{m}");
            assert_eq!(res.values("poet", m).len(), 3, "{m}");
        }
        for m in [RANK_HIT, NO_FALSE_NEGATIVES] {
            assert!(res
                .values("unalce", m)
                .iter()
                .all(|v| *v == 0.0 || *v == 1.0));
        }
        assert!(res
            .values("poet", POET_C)
            .iter()
            .all(|c| (0.0..=3.0).contains(c)));
        assert!(res.values("poet", RANK).iter().all(|r| *r == 2.0));
        assert!(res
            .values("unalce", LOSS_B)
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn thompson_scores_in_studies() {
        let rep = Replicate::generate(&setting(), 3, 1).unwrap();
        let mut ev = PoetEvaluator::new(PoetConstant::Fixed(1.0));
        ev.scores = ScoreMethod::Thompson;
        let out = ev.evaluate(&rep).unwrap();
        assert!(out.iter().any(|(k, _)| k == LOSS_F));
        ev.scores = ScoreMethod::Ols1;
        assert!(ev.evaluate(&rep).unwrap_err().is_input_error());
    }

    #[test]
    fn linear_grid_examples() {
        assert_eq!(linear_grid(0.0, 3.0, 4), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(linear_grid(2.0, 5.0, 1), vec![2.0]);
        assert_eq!(linear_grid(0.0, 3.0, 13)[1], 0.25);
    }
}
