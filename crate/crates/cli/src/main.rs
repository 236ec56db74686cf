//! `factor-lrs` command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 input or parse failure, 4 numeric failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use factor_lrs::alce::{
    log_grid, solve_penalized, threshold_grid, unalce_refit, GridOptions, PenalizedFit, PsiBreve,
    SelectionRule, SolverOptions, ThresholdGridResult, UnalceFit,
};
use factor_lrs::io::{
    load_matrix, sample_covariance, write_matrix_csv_file, CovarianceScaling, DatasetSpec,
    FitBlock, FitFile, OutputHeader,
};
use factor_lrs::metrics::{covariance_summary, variability_stats, CovarianceSummary};
use factor_lrs::poet::{
    cross_validate_c_with, estimate_rank_heuristic, poet_fit, CvOptions, PoetFit, ThresholdKind,
};
use factor_lrs::report::{covariance_table, key_values, variability_table, RETURNS_SCHEMA};
use factor_lrs::scores::{
    bartlett_scores, ols_factors_v1, ols_factors_v2, thompson_scores, FactorFit, ScoreMethod,
};
use factor_lrs::sim::{
    run_replicates, setting_by_name, setting_registry, Replicate, ReplicateEvaluator,
    SimulationSetting, StudyResult,
};
use factor_lrs::study::{
    linear_grid, real_data_pipeline, PoetEvaluator, RealDataOptions, UnalceEvaluator, LOSS_B,
    LOSS_BF, LOSS_F, PR_ERR,
};
use factor_lrs::{Error, LowRankComponent, SparseComponent, SymMatrix};

const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "factor-lrs",
    version,
    about = "Low-rank plus sparse factor model estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a ground truth and a sample from a simulation setting.
    Simulate(SimulateArgs),
    /// ALCE and UNALCE fit at fixed thresholds.
    FitAlce(FitAlceArgs),
    /// POET fit with a fixed or cross-validated threshold constant.
    FitPoet(FitPoetArgs),
    /// Factor loadings and scores.
    Scores(ScoresArgs),
    /// Threshold grid with model selection on a returns panel.
    Grid(GridArgs),
    /// Monte Carlo study of UNALCE and POET.
    Study(StudyArgs),
    /// Human-readable summaries of stored fits.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// File has a header row to skip.
    #[arg(long)]
    header: bool,
    /// Field delimiter.
    #[arg(long, default_value = ",")]
    delimiter: char,
}

impl DataArgs {
    fn spec(&self, path: &Path, demean: bool) -> Result<DatasetSpec, CliError> {
        if !self.delimiter.is_ascii() {
            return Err(CliError::Usage(
                "delimiter must be a single ASCII character".into(),
            ));
        }
        Ok(DatasetSpec {
            path: path.to_path_buf(),
            has_header: self.header,
            delimiter: self.delimiter as u8,
            demean,
        })
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Setting name (1-4).
    #[arg(long)]
    setting: String,
    #[arg(long)]
    seed: u64,
    /// Replicate index within the seed's stream family.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct FitAlceArgs {
    /// Covariance matrix (p x p CSV).
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    input: Option<PathBuf>,
    /// Observations (n x p CSV); the unbiased sample covariance is fitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    format: DataArgs,
    #[arg(long)]
    psi: f64,
    #[arg(long)]
    rho: f64,
    /// UNALCE eigenvalue shift (defaults to psi).
    #[arg(long)]
    psi_breve: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitPoetArgs {
    /// Observations (n x p CSV), demeaned before fitting.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    format: DataArgs,
    /// Number of factors; estimated by the eigenvalue-ratio heuristic when absent.
    #[arg(long)]
    rank: Option<usize>,
    /// Threshold constant; cross-validated when absent.
    #[arg(long)]
    c: Option<f64>,
    /// Cross-validation grid as lo,hi,count.
    #[arg(long, default_value = "0,3,13", value_parser = parse_range3)]
    c_grid: (f64, f64, usize),
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, value_enum, default_value_t = Kind::Soft)]
    kind: Kind,
    #[arg(long, default_value_t = 10)]
    max_rank: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoresArgs {
    /// Observations (n x p CSV), demeaned before scoring.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    format: DataArgs,
    #[arg(long, value_enum)]
    method: Method,
    /// Fit file providing loadings and residual covariance (required for bartlett/thompson).
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Number of factors for the OLS methods (defaults to the fit's rank).
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Returns panel (n x p CSV), demeaned before estimation.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    format: DataArgs,
    /// Number of psi values.
    #[arg(long, default_value_t = 20)]
    psi_grid: usize,
    /// Number of rho values.
    #[arg(long, default_value_t = 20)]
    rho_grid: usize,
    /// psi range as fractions of the largest sample eigenvalue.
    #[arg(long, default_value = "0.005,0.5", value_parser = parse_range2)]
    psi_range: (f64, f64),
    /// rho range as fractions of the mean sample variance.
    #[arg(long, default_value = "0.001,0.5", value_parser = parse_range2)]
    rho_range: (f64, f64),
    #[arg(long, value_enum, default_value_t = Rule::Plateau)]
    rule: Rule,
    /// Skip the POET comparison and the score variabilities.
    #[arg(long)]
    no_poet: bool,
    /// Selected fit file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-cell CSV of the whole grid.
    #[arg(long)]
    table: Option<PathBuf>,
    /// POET fit file.
    #[arg(long)]
    poet_output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    /// Setting name (1-4) or `all`.
    #[arg(long)]
    setting: String,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value = "unalce,poet", value_delimiter = ',')]
    estimators: Vec<String>,
    #[arg(long)]
    seed: u64,
    /// Directory for the summary and per-replicate CSVs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Fit files to summarize (repeatable).
    #[arg(long)]
    fit: Vec<PathBuf>,
    /// Observations used for the sample covariance and score variabilities.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    format: DataArgs,
    /// Print the expected returns-file layout and exit.
    #[arg(long)]
    schema: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Kind {
    Soft,
    Hard,
}

impl From<Kind> for ThresholdKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Soft => ThresholdKind::Soft,
            Kind::Hard => ThresholdKind::Hard,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Method {
    Ols1,
    Ols2,
    Bartlett,
    Thompson,
}

impl From<Method> for ScoreMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Ols1 => ScoreMethod::Ols1,
            Method::Ols2 => ScoreMethod::Ols2,
            Method::Bartlett => ScoreMethod::Bartlett,
            Method::Thompson => ScoreMethod::Thompson,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Rule {
    Spectral,
    Frobenius,
    Plateau,
}

impl From<Rule> for SelectionRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Spectral => SelectionRule::SpectralLoss,
            Rule::Frobenius => SelectionRule::FrobeniusLoss,
            Rule::Plateau => SelectionRule::RankPlateau,
        }
    }
}

fn parse_range2(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [lo, hi] = parts.as_slice() else {
        return Err("expected lo,hi".into());
    };
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad number '{lo}'"))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| format!("bad number '{hi}'"))?;
    if !(lo > 0.0 && hi >= lo) {
        return Err("need 0 < lo <= hi".into());
    }
    Ok((lo, hi))
}

fn parse_range3(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [lo, hi, k] = parts.as_slice() else {
        return Err("expected lo,hi,count".into());
    };
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad number '{lo}'"))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| format!("bad number '{hi}'"))?;
    let k: usize = k.trim().parse().map_err(|_| format!("bad count '{k}'"))?;
    if !(lo >= 0.0 && hi >= lo && k >= 1) {
        return Err("need 0 <= lo <= hi and count >= 1".into());
    }
    Ok((lo, hi, k))
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let header = OutputHeader::new(command_line(), seed_of(&cli.command));
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(&a, &header),
        Command::FitAlce(a) => fit_alce(&a, &header),
        Command::FitPoet(a) => fit_poet_cmd(&a, &header),
        Command::Scores(a) => scores(&a, &header),
        Command::Grid(a) => grid(&a, &header),
        Command::Study(a) => study(&a, &header),
        Command::Report(a) => report(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::from(EXIT_NUMERIC)
            }
        }
    }
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn seed_of(cmd: &Command) -> Option<u64> {
    match cmd {
        Command::Simulate(a) => Some(a.seed),
        Command::Study(a) => Some(a.seed),
        _ => None,
    }
}

fn load_centered(path: &Path, format: &DataArgs) -> CliResult<DMatrix<f64>> {
    let ds = load_matrix(&format.spec(path, true)?)?;
    log::info!("loaded {} x {} from {}", ds.n(), ds.p(), path.display());
    Ok(ds.data)
}

fn load_covariance(path: &Path, format: &DataArgs) -> CliResult<SymMatrix> {
    let ds = load_matrix(&format.spec(path, false)?)?;
    if ds.n() != ds.p() {
        return Err(Error::Input(format!(
            "covariance file must be square, got {} x {}",
            ds.n(),
            ds.p()
        ))
        .into());
    }
    let m = ds.data;
    let scale = m.amax().max(1.0);
    if (&m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Input("covariance file is not symmetric".into()).into());
    }
    Ok(SymMatrix::new((&m + m.transpose()) * 0.5)?)
}

fn print_or_write(fit: &FitFile, path: Option<&Path>, header: &OutputHeader) -> CliResult<()> {
    match path {
        Some(p) => fit.write(p, Some(header))?,
        None => print!("{}", fit.render(Some(header))),
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, header: &OutputHeader) -> CliResult<()> {
    let setting = setting_by_name(&a.setting)?;
    let rep = Replicate::generate(&setting, a.seed, a.replicate)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let mut truth = FitFile::default();
    truth.push_scalar("setting", &setting.name);
    truth.push_scalar("p", setting.p);
    truth.push_scalar("n", setting.n);
    truth.push_scalar("r", setting.r);
    truth.push_scalar("replicate", a.replicate);
    truth.push_f64("s_spectral", rep.truth.stats.s_spectral);
    truth.push_f64("s_condition", rep.truth.stats.s_condition);
    truth
        .blocks
        .push(FitBlock::LowRank("L_true".into(), rep.truth.l_true.clone()));
    truth.blocks.push(FitBlock::Sparse(
        "S_true".into(),
        rep.truth.s_true.matrix().clone(),
    ));
    truth
        .blocks
        .push(FitBlock::Dense("B_true".into(), rep.truth.b_true.clone()));
    truth.write(&a.out_dir.join("truth.txt"), Some(header))?;
    write_matrix_csv_file(&a.out_dir.join("data.csv"), Some(header), &rep.draw.x)?;
    write_matrix_csv_file(
        &a.out_dir.join("factors.csv"),
        Some(header),
        &rep.draw.factors,
    )?;
    println!(
        "setting {}: p = {}, n = {}, r = {}, written to {}",
        setting.name,
        setting.p,
        setting.n,
        setting.r,
        a.out_dir.display()
    );
    Ok(())
}

fn alce_blocks(out: &mut FitFile, fit: &PenalizedFit, un: Option<&UnalceFit>) {
    out.push_f64("psi", fit.psi);
    out.push_f64("rho", fit.rho);
    out.push_scalar("iterations", fit.iterations);
    out.push_scalar("converged", fit.converged);
    out.push_scalar("rank", fit.rank());
    if let Some(un) = un {
        out.push_f64("psi_breve", un.psi_breve);
    }
    out.blocks
        .push(FitBlock::LowRank("L_alce".into(), fit.l_alce.clone()));
    out.blocks.push(FitBlock::Sparse(
        "S_alce".into(),
        fit.s_alce.matrix().clone(),
    ));
    if let Some(un) = un {
        out.blocks
            .push(FitBlock::LowRank("L_un".into(), un.l_un.clone()));
        out.blocks
            .push(FitBlock::Sparse("S_un".into(), un.s_un.matrix().clone()));
    }
}

fn fit_alce(a: &FitAlceArgs, header: &OutputHeader) -> CliResult<()> {
    let sigma = match (&a.input, &a.data) {
        (Some(p), _) => load_covariance(p, &a.format)?,
        (None, Some(p)) => {
            sample_covariance(&load_centered(p, &a.format)?, CovarianceScaling::Unbiased)?
        }
        (None, None) => return Err(CliError::Usage("need --input or --data".into())),
    };
    let opts = SolverOptions {
        max_iter: a.max_iter,
        tol: a.tol,
        ..Default::default()
    };
    let fit = solve_penalized(&sigma, a.psi, a.rho, &opts)?;
    let un = if fit.rank() > 0 {
        Some(unalce_refit(&fit, a.psi_breve)?)
    } else {
        None
    };
    let mut out = FitFile::default();
    out.push_scalar("estimator", if un.is_some() { "unalce" } else { "alce" });
    alce_blocks(&mut out, &fit, un.as_ref());
    print_or_write(&out, a.output.as_deref(), header)?;
    eprint!(
        "{}",
        key_values(&[
            ("rank", fit.rank().to_string()),
            ("iterations", fit.iterations.to_string()),
            ("converged", fit.converged.to_string()),
            ("sparse nonzeros", fit.s_alce.support().len().to_string()),
        ])
    );
    Ok(())
}

fn poet_file(fit: &PoetFit) -> FitFile {
    let mut out = FitFile::default();
    out.push_scalar("estimator", "poet");
    out.push_scalar("rank", fit.r);
    out.push_f64("c", fit.c);
    out.push_f64("level", fit.level);
    out.push_scalar("kind", fit.kind.name());
    out.blocks
        .push(FitBlock::LowRank("L_poet".into(), fit.l_poet.clone()));
    out.blocks.push(FitBlock::Sparse(
        "S_poet".into(),
        fit.s_poet.matrix().clone(),
    ));
    out
}

fn fit_poet_cmd(a: &FitPoetArgs, header: &OutputHeader) -> CliResult<()> {
    let x = load_centered(&a.input, &a.format)?;
    let sigma = sample_covariance(&x, CovarianceScaling::Unbiased)?;
    let r = match a.rank {
        Some(r) => r,
        None => estimate_rank_heuristic(&sigma, a.max_rank.min(sigma.dim() - 1))?,
    };
    let c = match a.c {
        Some(c) => c,
        None => {
            let (lo, hi, k) = a.c_grid;
            let opts = CvOptions {
                folds: a.folds,
                kind: a.kind.into(),
                require_pd: true,
            };
            cross_validate_c_with(&x, r, &linear_grid(lo, hi, k), &opts)?.c
        }
    };
    let fit = poet_fit(&sigma, x.nrows(), r, c, a.kind.into())?;
    print_or_write(&poet_file(&fit), a.output.as_deref(), header)?;
    eprintln!("poet: rank {r}, C = {c:.4}, level {:.4e}", fit.level);
    Ok(())
}

/// Low-rank and sparse parts of the main estimate in a fit file.
fn primary_parts(fit: &FitFile) -> CliResult<(&'static str, LowRankComponent, SparseComponent)> {
    for (label, low, sparse) in [
        ("UNALCE", "L_un", "S_un"),
        ("POET", "L_poet", "S_poet"),
        ("ALCE", "L_alce", "S_alce"),
        ("TRUTH", "L_true", "S_true"),
    ] {
        if fit.block(low).is_some() {
            return Ok((label, fit.low_rank(low)?.clone(), fit.sparse(sparse)?));
        }
    }
    Err(Error::Input("fit file has no low-rank/sparse pair".into()).into())
}

fn scores(a: &ScoresArgs, header: &OutputHeader) -> CliResult<()> {
    let x = load_centered(&a.data, &a.format)?;
    let parts = match &a.fit {
        Some(p) => Some(primary_parts(&FitFile::read(p)?)?),
        None => None,
    };
    let rank = a.rank.or(parts.as_ref().map(|(_, l, _)| l.rank()));
    let method = ScoreMethod::from(a.method);
    let need_rank =
        || rank.ok_or_else(|| CliError::Usage("OLS scores need --rank or --fit".into()));
    let fit: FactorFit = match method {
        ScoreMethod::Ols1 => ols_factors_v1(&x, need_rank()?)?,
        ScoreMethod::Ols2 => {
            let sigma = sample_covariance(&x, CovarianceScaling::Unbiased)?;
            ols_factors_v2(&sigma, &x, need_rank()?)?
        }
        ScoreMethod::Bartlett | ScoreMethod::Thompson => {
            let Some((_, low, sparse)) = &parts else {
                return Err(CliError::Usage(format!(
                    "{} scores need --fit",
                    method.name()
                )));
            };
            let b = low.loadings();
            if method == ScoreMethod::Bartlett {
                bartlett_scores(&b, sparse.matrix(), &x)?
            } else {
                thompson_scores(&b, sparse.matrix(), &x)?
            }
        }
    };
    let mut out = FitFile::default();
    out.push_scalar("method", method.name());
    if let Some((label, _, _)) = &parts {
        out.push_scalar("source", label.to_lowercase());
    }
    out.blocks.push(FitBlock::Dense("B".into(), fit.b.clone()));
    out.blocks.push(FitBlock::Dense("F".into(), fit.f.clone()));
    out.write(&a.output, Some(header))?;
    let v = variability_stats(&fit.b, &fit.f)?;
    eprintln!(
        "{} scores: r = {}, var_B {:.4}, var_f {:.4}, var_Bf {:.4}",
        method.name(),
        fit.b.ncols(),
        v.var_b,
        v.var_f,
        v.var_bf
    );
    Ok(())
}

fn grid_table(res: &ThresholdGridResult) -> String {
    let mut out = String::from(
        "psi,rho,rank,converged,admissible,spectral_loss,frobenius_loss,criterion,selected\n",
    );
    let opt = |v: Option<f64>| v.map(factor_lrs::io::fmt_f64).unwrap_or_default();
    for (k, cell) in res.fits.iter().enumerate() {
        let d = &cell.diagnostics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            factor_lrs::io::fmt_f64(cell.psi),
            factor_lrs::io::fmt_f64(cell.rho),
            d.rank,
            d.converged,
            d.admissible(),
            opt(d.spectral_loss),
            opt(d.frobenius_loss),
            factor_lrs::io::fmt_f64(res.criterion_values[k]),
            k == res.selected
        );
    }
    out
}

fn grid(a: &GridArgs, header: &OutputHeader) -> CliResult<()> {
    if a.psi_grid == 0 || a.rho_grid == 0 {
        return Err(CliError::Usage("grid sizes must be positive".into()));
    }
    let x = load_centered(&a.input, &a.format)?;
    let opts = RealDataOptions {
        psi_frac: log_grid(a.psi_range.0, a.psi_range.1, a.psi_grid),
        rho_frac: log_grid(a.rho_range.0, a.rho_range.1, a.rho_grid),
        rule: a.rule.into(),
        ..Default::default()
    };
    let (grid_res, text, poet) = if a.no_poet {
        let sigma = sample_covariance(&x, CovarianceScaling::Unbiased)?;
        let top = sigma.max_eigenvalue();
        let var = sigma.trace() / sigma.dim() as f64;
        let psi: Vec<f64> = opts.psi_frac.iter().map(|f| f * top).collect();
        let rho: Vec<f64> = opts.rho_frac.iter().map(|f| f * var).collect();
        let res = threshold_grid(
            &sigma,
            &psi,
            &rho,
            &GridOptions {
                solver: opts.solver,
                psi_breve: PsiBreve::SameAsPsi,
                rule: opts.rule,
                parallel: false,
            },
        )?;
        let un = res.selected_unalce();
        let summary = covariance_summary(&un.l_un, &un.s_un, &sigma)?;
        let cell = res.selected_cell();
        let mut text = key_values(&[
            ("selected psi", format!("{:.6e}", cell.psi)),
            ("selected rho", format!("{:.6e}", cell.rho)),
        ]);
        text.push('\n');
        text.push_str(&covariance_table(&[("UNALCE", summary)]));
        (res, text, None)
    } else {
        let rep = real_data_pipeline(&x, &opts)?;
        let text = rep.render();
        (rep.grid, text, Some(rep.poet))
    };
    print!("{text}");
    let cell = grid_res.selected_cell();
    let mut out = FitFile::default();
    out.push_scalar("estimator", "unalce");
    alce_blocks(&mut out, &cell.fit, cell.unalce.as_ref());
    if let Some(p) = &a.output {
        out.write(p, Some(header))?;
    }
    if let Some(p) = &a.table {
        std::fs::write(p, header.render() + &grid_table(&grid_res))?;
    }
    match (&a.poet_output, &poet) {
        (Some(p), Some(fit)) => poet_file(fit).write(p, Some(header))?,
        (Some(_), None) => {
            return Err(CliError::Usage(
                "--poet-output conflicts with --no-poet".into(),
            ))
        }
        _ => {}
    }
    Ok(())
}

fn study_table(res: &StudyResult, estimators: &[String]) -> String {
    let mut out = format!("setting {} ({} replicates)\n", res.setting, res.replicates);
    let _ = writeln!(
        out,
        "{:<10} {:<8} {:>10} {:>10} {:>10}",
        "estimator", "metric", "mean", "median", "mad"
    );
    for est in estimators {
        for m in [LOSS_B, LOSS_F, LOSS_BF, PR_ERR] {
            if let Some(row) = res.row(est, m) {
                let s = &row.summary;
                let _ = writeln!(
                    out,
                    "{est:<10} {m:<8} {:>10.4} {:>10.4} {:>10.4}",
                    s.mean, s.median, s.mad
                );
            }
        }
    }
    if !res.failures.is_empty() {
        let _ = writeln!(out, "failed evaluations: {}", res.failures.len());
    }
    out
}

fn study(a: &StudyArgs, header: &OutputHeader) -> CliResult<()> {
    let settings: Vec<SimulationSetting> = if a.setting == "all" {
        setting_registry()
    } else {
        vec![setting_by_name(&a.setting)?]
    };
    let unalce = UnalceEvaluator::default();
    let poet = PoetEvaluator::default();
    let mut evaluators: Vec<&dyn ReplicateEvaluator> = Vec::new();
    for name in &a.estimators {
        match name.as_str() {
            "unalce" => evaluators.push(&unalce),
            "poet" => evaluators.push(&poet),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown estimator '{other}' (expected unalce, poet)"
                )))
            }
        }
    }
    if evaluators.is_empty() {
        return Err(CliError::Usage("no estimators given".into()));
    }
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    for setting in &settings {
        let res = run_replicates(setting, a.replicates, a.seed, &evaluators)?;
        print!("{}", study_table(&res, &a.estimators));
        match &a.out_dir {
            Some(dir) => {
                let name = &setting.name;
                std::fs::write(
                    dir.join(format!("summary_setting{name}.csv")),
                    header.render() + &res.summary_csv()?,
                )?;
                std::fs::write(
                    dir.join(format!("records_setting{name}.csv")),
                    header.render() + &res.records_csv()?,
                )?;
            }
            None => print!("{}", header.render() + &res.summary_csv()?),
        }
    }
    Ok(())
}

fn report(a: &ReportArgs) -> CliResult<()> {
    if a.schema {
        println!("{RETURNS_SCHEMA}");
        return Ok(());
    }
    if a.fit.is_empty() {
        return Err(CliError::Usage(
            "report needs at least one --fit (or --schema)".into(),
        ));
    }
    let data = match &a.data {
        Some(p) => Some(load_centered(p, &a.format)?),
        None => None,
    };
    let sigma = match &data {
        Some(x) => Some(sample_covariance(x, CovarianceScaling::Unbiased)?),
        None => None,
    };
    let mut fits = Vec::new();
    for path in &a.fit {
        let file = FitFile::read(path)?;
        let (label, low, sparse) = primary_parts(&file)?;
        let mut scalars: Vec<(&str, String)> = vec![("file", path.display().to_string())];
        for key in ["psi", "rho", "c", "iterations"] {
            if let Some(v) = file.scalar(key) {
                scalars.push((key, v.to_string()));
            }
        }
        println!("{label}");
        print!("{}", key_values(&scalars));
        println!();
        fits.push((label, low, sparse));
    }
    let sigma_ref = match &sigma {
        Some(s) => s.clone(),
        None => {
            eprintln!("note: no --data given; total losses are against the first fit's covariance");
            let (_, l, s) = &fits[0];
            l.reconstruct().add(s.matrix())
        }
    };
    let mut summaries: Vec<(&str, CovarianceSummary)> = Vec::new();
    for (label, low, sparse) in &fits {
        summaries.push((*label, covariance_summary(low, sparse, &sigma_ref)?));
    }
    print!("{}", covariance_table(&summaries));
    if let Some(x) = &data {
        let mut rows = Vec::new();
        for (label, low, sparse) in &fits {
            if low.rank() == 0 {
                continue;
            }
            let b = low.loadings();
            let stats = bartlett_scores(&b, sparse.matrix(), x)
                .and_then(|bart| variability_stats(&b, &bart.f))
                .and_then(|vb| {
                    let thom = thompson_scores(&b, sparse.matrix(), x)?;
                    Ok((vb, variability_stats(&b, &thom.f)?))
                });
            match stats {
                Ok((vb, vt)) => {
                    rows.push((*label, "bartlett", vb));
                    rows.push((*label, "thompson", vt));
                }
                Err(e) => eprintln!("note: no scores for {label}: {e}"),
            }
        }
        if !rows.is_empty() {
            println!();
            print!("{}", variability_table(&rows));
        }
    }
    Ok(())
}
