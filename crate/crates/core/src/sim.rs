//! Ground-truth generation, Gaussian sampling, the setting registry and the
//! Monte Carlo replicate runner.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{center_columns, sample_covariance, CovarianceScaling};
use crate::linalg::{norm, sym_eig, LowRankComponent, NormKind, SparseComponent, SymMatrix};
use crate::metrics::{summarize, Summary};

/// Parameters of a simulated low-rank plus sparse covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSetting {
    pub name: String,
    pub p: usize,
    pub n: usize,
    pub r: usize,
    pub tau: f64,
    /// Share of total variance carried by the low-rank part.
    pub theta: f64,
    /// Condition number `lambda_1 / lambda_r` of the low-rank part.
    pub cond: f64,
    /// Number of nonzero off-diagonal pairs of the sparse part.
    pub s: usize,
    /// Scale of off-diagonal residual covariances relative to the
    /// Cauchy-Schwarz envelope.
    pub dependence: f64,
    /// Symmetric Dirichlet concentration for residual variances.
    pub dirichlet_concentration: f64,
}

impl SimulationSetting {
    pub fn validate(&self) -> Result<()> {
        let max_pairs = self.p * self.p.saturating_sub(1) / 2;
        let bad = |m: String| Err(Error::input(m));
        if self.p < 2 || self.n < 2 {
            return bad(format!(
                "need p >= 2 and n >= 2, got p={}, n={}",
                self.p, self.n
            ));
        }
        if self.r == 0 || self.r >= self.p {
            return bad(format!("need 1 <= r < p, got r={}", self.r));
        }
        if !(self.tau > 0.0) || !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!(
                "need tau > 0 and theta in (0, 1), got {} and {}",
                self.tau, self.theta
            ));
        }
        if !(self.cond >= 1.0) || (self.r == 1 && self.cond != 1.0) {
            return bad(format!(
                "invalid condition number {} for r={}",
                self.cond, self.r
            ));
        }
        if self.s > max_pairs {
            return bad(format!("s={} exceeds p(p-1)/2={max_pairs}", self.s));
        }
        if !(self.dependence > 0.0 && self.dependence < 1.0) {
            return bad(format!(
                "dependence must lie in (0, 1), got {}",
                self.dependence
            ));
        }
        if !(self.dirichlet_concentration > 0.0) {
            return bad("Dirichlet concentration must be positive".into());
        }
        Ok(())
    }

    pub fn low_rank_trace(&self) -> f64 {
        self.tau * self.p as f64 * self.theta
    }

    pub fn residual_trace(&self) -> f64 {
        self.tau * self.p as f64 * (1.0 - self.theta)
    }
}

/// Off-diagonal nonzero count `round(pi_s * p(p-1)/2)`.
pub fn pairs_from_fraction(p: usize, pi_s: f64) -> usize {
    (pi_s * (p * (p - 1) / 2) as f64).round() as usize
}

/// The four simulated settings.
pub fn setting_registry() -> Vec<SimulationSetting> {
    let mk = |name: &str, p, n, r, tau, theta, cond, pi_s| SimulationSetting {
        name: name.to_string(),
        p,
        n,
        r,
        tau,
        theta,
        cond,
        s: pairs_from_fraction(p, pi_s),
        dependence: 0.8,
        dirichlet_concentration: 0.3,
    };
    vec![
        mk("1", 100, 1000, 4, 1.0, 0.7, 2.0, 0.0238),
        mk("2", 100, 1000, 3, 3.0, 0.8, 4.0, 0.1172),
        mk("3", 150, 150, 5, 1.0, 0.8, 2.0, 0.0320),
        mk("4", 200, 100, 6, 1.0, 0.8, 2.0, 0.0366),
    ]
}

pub fn setting_by_name(name: &str) -> Result<SimulationSetting> {
    setting_registry()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::input(format!("unknown setting '{name}' (expected 1-4)")))
}

/// Arithmetic sequence `lambda_1 >= ... >= lambda_r` with ratio `cond` and sum `total`.
pub fn equispaced_eigenvalues(r: usize, cond: f64, total: f64) -> Result<Vec<f64>> {
    if r == 0 {
        return Err(Error::input("need r >= 1"));
    }
    if !(cond >= 1.0) || !(total > 0.0) {
        return Err(Error::input(format!(
            "need cond >= 1 and total > 0, got {cond}, {total}"
        )));
    }
    if r == 1 {
        if cond != 1.0 {
            return Err(Error::input("a single eigenvalue has condition number 1"));
        }
        return Ok(vec![total]);
    }
    let last = 2.0 * total / (r as f64 * (1.0 + cond));
    let first = cond * last;
    let step = (first - last) / (r - 1) as f64;
    Ok((0..r).map(|k| first - step * k as f64).collect())
}

/// Orthonormal `p x r` basis from Gram-Schmidt on standard normal columns.
pub fn random_orthobasis<R: Rng + ?Sized>(p: usize, r: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if r == 0 || r > p {
        return Err(Error::input(format!("need 1 <= r <= p, got r={r}, p={p}")));
    }
    let mut u: DMatrix<f64> = DMatrix::from_fn(p, r, |_, _| StandardNormal.sample(rng));
    // modified Gram-Schmidt, two passes for stability
    for k in 0..r {
        for _ in 0..2 {
            for j in 0..k {
                let proj: f64 = u.column(j).dot(&u.column(k));
                let qj = u.column(j).into_owned();
                u.column_mut(k).axpy(-proj, &qj, 1.0);
            }
        }
        let nrm = u.column(k).norm();
        if nrm < 1e-12 {
            return Err(Error::Generation(
                "Gram-Schmidt produced a zero column".into(),
            ));
        }
        u.column_mut(k).unscale_mut(nrm);
    }
    Ok(u)
}

/// Bookkeeping recorded alongside a generated truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthStats {
    pub s_min_off: f64,
    pub max_degree: usize,
    pub s_spectral: f64,
    pub s_condition: f64,
    pub l_eigvals: Vec<f64>,
    pub pd_repairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub l_true: LowRankComponent,
    pub s_true: SparseComponent,
    /// `U diag(sqrt(lambda))`.
    pub b_true: DMatrix<f64>,
    pub sigma_true: SymMatrix,
    pub stats: TruthStats,
}

pub fn generate_truth<R: Rng + ?Sized>(
    setting: &SimulationSetting,
    rng: &mut R,
) -> Result<GroundTruth> {
    setting.validate()?;
    let p = setting.p;
    let lambda = equispaced_eigenvalues(setting.r, setting.cond, setting.low_rank_trace())?;
    let u = random_orthobasis(p, setting.r, rng)?;
    let l_true = LowRankComponent::new(u, lambda.clone())?;
    let l_diag = l_true.diagonal();

    let gamma = Gamma::new(setting.dirichlet_concentration, 1.0)
        .map_err(|e| Error::Generation(e.to_string()))?;
    let mut draws: Vec<f64> = (0..p).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Generation(
            "Dirichlet draw degenerated to zero".into(),
        ));
    }
    let budget = setting.residual_trace();
    for v in &mut draws {
        *v *= budget / total;
    }
    draws.sort_by(|a, b| a.total_cmp(b));
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| l_diag[a].total_cmp(&l_diag[b]));
    let mut d = vec![0.0; p];
    for (rank, &coord) in order.iter().enumerate() {
        d[coord] = draws[rank];
    }

    let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in (i + 1)..p {
            let env = (d[i] * d[j]).sqrt();
            let v = rng.gen_range(-1.0..1.0) * setting.dependence * env;
            pairs.push((i, j, v));
        }
    }
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.sort_by(|&a, &b| pairs[b].2.abs().total_cmp(&pairs[a].2.abs()));
    let mut s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d));
    for &k in &idx[..setting.s] {
        let (i, j, v) = pairs[k];
        s[(i, j)] = v;
        s[(j, i)] = v;
    }

    let mut repairs = 0;
    let mut min_eig = SymMatrix::symmetrized(s.clone()).min_eigenvalue();
    while min_eig <= 0.0 {
        if repairs == 50 {
            return Err(Error::Generation(format!(
                "residual covariance still not positive definite after 50 shrinkages \
                 (min eigenvalue {min_eig:.3e})"
            )));
        }
        for j in 0..p {
            for i in 0..p {
                if i != j {
                    s[(i, j)] *= 0.9;
                }
            }
        }
        repairs += 1;
        min_eig = SymMatrix::symmetrized(s.clone()).min_eigenvalue();
    }

    let s_sym = SymMatrix::symmetrized(s);
    let s_true = SparseComponent::from_matrix(s_sym.clone());
    if s_true.support().len() != setting.s {
        return Err(Error::Generation(format!(
            "support has {} pairs, expected {}",
            s_true.support().len(),
            setting.s
        )));
    }
    let s_min_off = s_true
        .support()
        .iter()
        .map(|&(i, j)| s_sym.get(i, j).abs())
        .fold(f64::INFINITY, f64::min);
    let s_spectral = norm(&s_sym, NormKind::Spectral);
    let stats = TruthStats {
        s_min_off: if s_min_off.is_finite() {
            s_min_off
        } else {
            0.0
        },
        max_degree: s_true.degrees().into_iter().max().unwrap_or(0),
        s_spectral,
        s_condition: s_spectral / min_eig,
        l_eigvals: lambda,
        pd_repairs: repairs,
    };
    if repairs > 0 {
        log::debug!("residual covariance repaired {repairs} times");
    }
    let sigma_true = l_true.reconstruct().add(&s_sym);
    Ok(GroundTruth {
        b_true: l_true.loadings(),
        l_true,
        s_true,
        sigma_true,
        stats,
    })
}

/// One Gaussian sample from the factor model.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    /// `n x p` observations `x_k = B f_k + e_k`.
    pub x: DMatrix<f64>,
    /// `n x r` latent factors.
    pub factors: DMatrix<f64>,
}

pub fn sample_data<R: Rng + ?Sized>(
    truth: &GroundTruth,
    n: usize,
    rng: &mut R,
) -> Result<SampleDraw> {
    if n < 2 {
        return Err(Error::input("need n >= 2 observations"));
    }
    let p = truth.sigma_true.dim();
    let r = truth.b_true.ncols();
    let eig = sym_eig(truth.s_true.matrix())?;
    if eig.values[p - 1] <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: eig.values[p - 1],
        });
    }
    let mut root = eig.vectors.clone();
    for (k, v) in eig.values.iter().enumerate() {
        root.column_mut(k).scale_mut(v.sqrt());
    }
    let factors: DMatrix<f64> = DMatrix::from_fn(n, r, |_, _| StandardNormal.sample(rng));
    let z: DMatrix<f64> = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    let x = &factors * truth.b_true.transpose() + z * root.transpose();
    Ok(SampleDraw { x, factors })
}

/// Synthetic panel of annualized daily returns: one market factor with
/// positive loadings, a weak within-sector correlation among blocks of ten
/// assets and heteroscedastic idiosyncratic noise.
pub fn synthetic_returns(n: usize, p: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n < 2 || p == 0 {
        return Err(Error::input("synthetic returns need n >= 2 and p >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loadings: Vec<f64> = (0..p).map(|_| rng.gen_range(0.4..1.4)).collect();
    let noise: Vec<f64> = (0..p).map(|_| rng.gen_range(0.008..0.02)).collect();
    let blocks = p.div_ceil(10);
    let mut x = DMatrix::zeros(n, p);
    for k in 0..n {
        let market: f64 = StandardNormal.sample(&mut rng);
        let sectors: Vec<f64> = (0..blocks)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        for j in 0..p {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(k, j)] =
                252.0 * (0.01 * loadings[j] * market + 0.002 * sectors[j / 10] + noise[j] * e);
        }
    }
    Ok(x)
}

/// Per-replicate generator: counter-based stream split of the study seed.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Everything an estimator and a metric may look at for one replicate.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub index: usize,
    pub truth: GroundTruth,
    pub draw: SampleDraw,
    /// Column-centered observations.
    pub centered: DMatrix<f64>,
    /// Unbiased sample covariance of the centered observations.
    pub sigma_n: SymMatrix,
}

impl Replicate {
    pub fn generate(setting: &SimulationSetting, seed: u64, index: usize) -> Result<Self> {
        let mut rng = replicate_rng(seed, index);
        let truth = generate_truth(setting, &mut rng)?;
        let draw = sample_data(&truth, setting.n, &mut rng)?;
        let (centered, _) = center_columns(&draw.x);
        let sigma_n = sample_covariance(&centered, CovarianceScaling::Unbiased)?;
        Ok(Self {
            index,
            truth,
            draw,
            centered,
            sigma_n,
        })
    }
}

/// Named metric values produced by one estimator on one replicate.
pub type MetricValues = Vec<(String, f64)>;

/// An estimator-plus-metrics evaluation run on every replicate.
pub trait ReplicateEvaluator: Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, rep: &Replicate) -> Result<MetricValues>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimator: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub setting: String,
    pub estimator: String,
    pub metric: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub setting: String,
    pub replicates: usize,
    pub rows: Vec<SummaryRow>,
    pub records: Vec<ReplicateRecord>,
    /// `(replicate, estimator, error message)`; estimator is empty when data
    /// generation itself failed.
    pub failures: Vec<(usize, String, String)>,
}

impl StudyResult {
    pub fn row(&self, estimator: &str, metric: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.metric == metric)
    }

    pub fn values(&self, estimator: &str, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.estimator == estimator && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    /// Summary CSV with columns setting, estimator, metric, mean, std, median, mad, n_ok.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "setting",
            "estimator",
            "metric",
            "mean",
            "std",
            "median",
            "mad",
            "n_ok",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            let s = &r.summary;
            w.write_record([
                r.setting.clone(),
                r.estimator.clone(),
                r.metric.clone(),
                crate::io::fmt_f64(s.mean),
                crate::io::fmt_f64(s.std),
                crate::io::fmt_f64(s.median),
                crate::io::fmt_f64(s.mad),
                s.n.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// Per-replicate CSV with columns setting, replicate, estimator, metric, value.
    pub fn records_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["setting", "replicate", "estimator", "metric", "value"])
            .map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                self.setting.clone(),
                r.replicate.to_string(),
                r.estimator.clone(),
                r.metric.clone(),
                crate::io::fmt_f64(r.value),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Largest tolerated share of failed replicates per estimator.
pub const MAX_FAILURE_RATE: f64 = 0.2;

/// Runs `n_reps` replicates of `setting` in parallel and summarizes every
/// `(estimator, metric)` pair. Results depend only on `seed`, not on thread
/// scheduling.
pub fn run_replicates(
    setting: &SimulationSetting,
    n_reps: usize,
    seed: u64,
    evaluators: &[&dyn ReplicateEvaluator],
) -> Result<StudyResult> {
    if n_reps == 0 {
        return Err(Error::input("need at least one replicate"));
    }
    setting.validate()?;
    type RepOutcome = std::result::Result<Vec<std::result::Result<MetricValues, String>>, String>;
    let outcomes: Vec<RepOutcome> = (0..n_reps)
        .into_par_iter()
        .map(|index| {
            let rep = Replicate::generate(setting, seed, index).map_err(|e| e.to_string())?;
            Ok(evaluators
                .iter()
                .map(|ev| ev.evaluate(&rep).map_err(|e| e.to_string()))
                .collect())
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut failed_per_eval = vec![0usize; evaluators.len()];
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Err(msg) => {
                failures.push((index, String::new(), msg));
                for f in &mut failed_per_eval {
                    *f += 1;
                }
            }
            Ok(per_eval) => {
                for (k, res) in per_eval.into_iter().enumerate() {
                    let name = evaluators[k].name().to_string();
                    match res {
                        Ok(values) => {
                            for (metric, value) in values {
                                records.push(ReplicateRecord {
                                    replicate: index,
                                    estimator: name.clone(),
                                    metric,
                                    value,
                                });
                            }
                        }
                        Err(msg) => {
                            failed_per_eval[k] += 1;
                            failures.push((index, name, msg));
                        }
                    }
                }
            }
        }
    }
    for (k, &failed) in failed_per_eval.iter().enumerate() {
        if failed as f64 > MAX_FAILURE_RATE * n_reps as f64 {
            let first = failures
                .iter()
                .find(|f| f.1.is_empty() || f.1 == evaluators[k].name())
                .map(|f| f.2.clone())
                .unwrap_or_default();
            return Err(Error::Study {
                failed,
                total: n_reps,
                first,
            });
        }
    }
    if !failures.is_empty() {
        log::warn!(
            "{} replicate evaluations failed and were excluded",
            failures.len()
        );
    }

    let mut keys: Vec<(String, String)> = Vec::new();
    for r in &records {
        let key = (r.estimator.clone(), r.metric.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut rows = Vec::with_capacity(keys.len());
    for (estimator, metric) in keys {
        let vals: Vec<f64> = records
            .iter()
            .filter(|r| r.estimator == estimator && r.metric == metric)
            .map(|r| r.value)
            .collect();
        rows.push(SummaryRow {
            setting: setting.name.clone(),
            estimator,
            metric,
            summary: summarize(&vals)?,
        });
    }
    Ok(StudyResult {
        setting: setting.name.clone(),
        replicates: n_reps,
        rows,
        records,
        failures,
    })
}
