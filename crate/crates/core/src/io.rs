//! Data ingestion, sample covariance, and plain-text emission of matrices and fits.
//!
//! Numbers are written with 17 significant digits so that a write followed by
//! a read reproduces every `f64` exactly. Lines starting with `#` are comments
//! and carry the provenance header.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{LowRankComponent, SparseComponent, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceScaling {
    /// `X^T X / (n - 1)`.
    Unbiased,
    /// `X^T X / n`.
    Ml,
}

/// Sample covariance of already centered data (rows are observations).
pub fn sample_covariance(x: &DMatrix<f64>, scaling: CovarianceScaling) -> Result<SymMatrix> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::input(format!(
            "sample covariance needs n >= 2, got {n}"
        )));
    }
    if p == 0 {
        return Err(Error::input("sample covariance needs p >= 1"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("data has non-finite entries"));
    }
    let denom = match scaling {
        CovarianceScaling::Unbiased => (n - 1) as f64,
        CovarianceScaling::Ml => n as f64,
    };
    Ok(SymMatrix::symmetrized(x.transpose() * x / denom))
}

/// Column-centers `x`, returning the centered copy and the column means.
pub fn center_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = x.nrows().max(1) as f64;
    let means: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
    let mut out = x.clone();
    for (j, m) in means.iter().enumerate() {
        out.column_mut(j).add_scalar_mut(-m);
    }
    (out, means)
}

/// How to read a delimited data file (observations in rows, variables in columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub has_header: bool,
    pub delimiter: u8,
    pub demean: bool,
}

impl DatasetSpec {
    pub fn csv(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            has_header: false,
            delimiter: b',',
            demean: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: DMatrix<f64>,
    /// Column means before demeaning (computed whether or not demeaning was requested).
    pub column_means: Vec<f64>,
    pub demeaned: bool,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }
}

pub fn load_matrix(spec: &DatasetSpec) -> Result<Dataset> {
    let file = File::open(&spec.path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", spec.path.display())))?;
    load_matrix_from_reader(file, spec)
}

pub fn load_matrix_from_reader<R: Read>(reader: R, spec: &DatasetSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(spec.has_header)
        .delimiter(spec.delimiter)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {}: '{field}' is not a number", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {}: non-finite value", col + 1),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    let p = width.unwrap_or(0);
    if rows < 2 {
        return Err(Error::Parse {
            line: rows,
            message: format!("need at least 2 data rows, found {rows}"),
        });
    }
    let data = DMatrix::from_row_slice(rows, p, &values);
    let (centered, means) = center_columns(&data);
    Ok(Dataset {
        data: if spec.demean { centered } else { data },
        column_means: means,
        demeaned: spec.demean,
    })
}

/// Provenance lines written at the top of every output file.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHeader {
    pub version: String,
    pub command_line: String,
    pub seed: Option<u64>,
}

impl OutputHeader {
    pub fn new(command_line: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command_line: command_line.into(),
            seed,
        }
    }

    pub fn render(&self) -> String {
        let seed = self
            .seed
            .map(|s| s.to_string())
            .unwrap_or_else(|| "none".into());
        format!(
            "# factor-lrs version={}\n# command={}\n# seed={}\n",
            self.version, self.command_line, seed
        )
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a dense matrix as CSV preceded by the header comment lines.
pub fn write_matrix_csv<W: Write>(
    out: &mut W,
    header: Option<&OutputHeader>,
    m: &DMatrix<f64>,
) -> Result<()> {
    if let Some(h) = header {
        out.write_all(h.render().as_bytes())?;
    }
    let mut line = String::new();
    for i in 0..m.nrows() {
        line.clear();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&fmt_f64(m[(i, j)]));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn write_matrix_csv_file(
    path: &Path,
    header: Option<&OutputHeader>,
    m: &DMatrix<f64>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write_matrix_csv(&mut f, header, m)?;
    f.flush()?;
    Ok(())
}

/// One named block of a fit file.
#[derive(Debug, Clone, PartialEq)]
pub enum FitBlock {
    LowRank(String, LowRankComponent),
    Sparse(String, SymMatrix),
    Dense(String, DMatrix<f64>),
}

impl FitBlock {
    pub fn name(&self) -> &str {
        match self {
            FitBlock::LowRank(n, _) | FitBlock::Sparse(n, _) | FitBlock::Dense(n, _) => n,
        }
    }
}

/// Plain-text fit file: `key=value` scalars followed by matrix blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitFile {
    pub scalars: Vec<(String, String)>,
    pub blocks: Vec<FitBlock>,
}

impl FitFile {
    pub fn push_scalar(&mut self, key: &str, value: impl ToString) {
        self.scalars.push((key.to_string(), value.to_string()));
    }

    pub fn push_f64(&mut self, key: &str, value: f64) {
        self.push_scalar(key, fmt_f64(value));
    }

    pub fn scalar(&self, key: &str) -> Option<&str> {
        self.scalars
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn scalar_f64(&self, key: &str) -> Result<f64> {
        let raw = self
            .scalar(key)
            .ok_or_else(|| Error::input(format!("fit file has no '{key}' entry")))?;
        raw.parse()
            .map_err(|_| Error::input(format!("fit file entry '{key}' is not a number: {raw}")))
    }

    pub fn block(&self, name: &str) -> Option<&FitBlock> {
        self.blocks.iter().find(|b| b.name() == name)
    }

    pub fn low_rank(&self, name: &str) -> Result<&LowRankComponent> {
        match self.block(name) {
            Some(FitBlock::LowRank(_, l)) => Ok(l),
            _ => Err(Error::input(format!(
                "fit file has no low-rank block '{name}'"
            ))),
        }
    }

    pub fn sparse(&self, name: &str) -> Result<SparseComponent> {
        match self.block(name) {
            Some(FitBlock::Sparse(_, s)) => Ok(SparseComponent::from_matrix(s.clone())),
            _ => Err(Error::input(format!(
                "fit file has no sparse block '{name}'"
            ))),
        }
    }

    pub fn dense(&self, name: &str) -> Result<&DMatrix<f64>> {
        match self.block(name) {
            Some(FitBlock::Dense(_, m)) => Ok(m),
            _ => Err(Error::input(format!(
                "fit file has no dense block '{name}'"
            ))),
        }
    }

    pub fn render(&self, header: Option<&OutputHeader>) -> String {
        let mut out = String::new();
        if let Some(h) = header {
            out.push_str(&h.render());
        }
        for (k, v) in &self.scalars {
            let _ = writeln!(out, "{k}={v}");
        }
        for block in &self.blocks {
            match block {
                FitBlock::LowRank(name, l) => {
                    let _ = writeln!(out, "@lowrank {name} {} {}", l.dim(), l.rank());
                    push_row(&mut out, l.eigvals().iter().copied());
                    for i in 0..l.dim() {
                        push_row(&mut out, l.basis().row(i).iter().copied());
                    }
                }
                FitBlock::Sparse(name, s) => {
                    let p = s.dim();
                    let mut lines = String::new();
                    let mut count = 0;
                    for i in 0..p {
                        for j in i..p {
                            let v = s.get(i, j);
                            if v != 0.0 {
                                let _ = writeln!(lines, "{},{},{}", i + 1, j + 1, fmt_f64(v));
                                count += 1;
                            }
                        }
                    }
                    let _ = writeln!(out, "@sparse {name} {p} {count}");
                    out.push_str(&lines);
                }
                FitBlock::Dense(name, m) => {
                    let _ = writeln!(out, "@dense {name} {} {}", m.nrows(), m.ncols());
                    for i in 0..m.nrows() {
                        push_row(&mut out, m.row(i).iter().copied());
                    }
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path, header: Option<&OutputHeader>) -> Result<()> {
        std::fs::write(path, self.render(header))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path)
            .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
        Self::parse(BufReader::new(f))
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            lines.push((idx + 1, t.to_string()));
        }
        let mut file = FitFile::default();
        let mut it = lines.into_iter().peekable();
        while let Some((lineno, line)) = it.next() {
            if let Some(rest) = line.strip_prefix('@') {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let bad = |m: &str| Error::Parse {
                    line: lineno,
                    message: m.to_string(),
                };
                if parts.len() != 4 {
                    return Err(bad("block header needs kind, name and two sizes"));
                }
                let a: usize = parts[2].parse().map_err(|_| bad("bad block size"))?;
                let b: usize = parts[3].parse().map_err(|_| bad("bad block size"))?;
                let name = parts[1].to_string();
                let mut take = |count: usize| -> Result<Vec<(usize, String)>> {
                    let mut out = Vec::with_capacity(count);
                    for _ in 0..count {
                        match it.next() {
                            Some(l) if !l.1.starts_with('@') => out.push(l),
                            _ => return Err(bad("block ended early")),
                        }
                    }
                    Ok(out)
                };
                match parts[0] {
                    "lowrank" => {
                        let eig_line = if b == 0 {
                            Vec::new()
                        } else {
                            parse_row(&take(1)?[0], b)?
                        };
                        let mut basis = DMatrix::zeros(a, b);
                        if b > 0 {
                            for (i, row) in take(a)?.iter().enumerate() {
                                let vals = parse_row(row, b)?;
                                for (j, v) in vals.into_iter().enumerate() {
                                    basis[(i, j)] = v;
                                }
                            }
                        }
                        let l = if b == 0 {
                            LowRankComponent::empty(a)
                        } else {
                            LowRankComponent::new(basis, eig_line).map_err(|e| Error::Parse {
                                line: lineno,
                                message: e.to_string(),
                            })?
                        };
                        file.blocks.push(FitBlock::LowRank(name, l));
                    }
                    "sparse" => {
                        let mut m = DMatrix::zeros(a, a);
                        for row in take(b)? {
                            let fields: Vec<&str> = row.1.split(',').map(str::trim).collect();
                            let err = || Error::Parse {
                                line: row.0,
                                message: "expected i,j,value".into(),
                            };
                            if fields.len() != 3 {
                                return Err(err());
                            }
                            let i: usize = fields[0].parse().map_err(|_| err())?;
                            let j: usize = fields[1].parse().map_err(|_| err())?;
                            let v: f64 = fields[2].parse().map_err(|_| err())?;
                            if i == 0 || j == 0 || i > a || j > a {
                                return Err(Error::Parse {
                                    line: row.0,
                                    message: format!("index ({i}, {j}) out of range 1..={a}"),
                                });
                            }
                            m[(i - 1, j - 1)] = v;
                            m[(j - 1, i - 1)] = v;
                        }
                        file.blocks
                            .push(FitBlock::Sparse(name, SymMatrix::symmetrized(m)));
                    }
                    "dense" => {
                        let mut m = DMatrix::zeros(a, b);
                        for (i, row) in take(a)?.iter().enumerate() {
                            for (j, v) in parse_row(row, b)?.into_iter().enumerate() {
                                m[(i, j)] = v;
                            }
                        }
                        file.blocks.push(FitBlock::Dense(name, m));
                    }
                    other => return Err(bad(&format!("unknown block kind '{other}'"))),
                }
            } else if let Some((k, v)) = line.split_once('=') {
                if !file.blocks.is_empty() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "scalar entries must precede matrix blocks".into(),
                    });
                }
                file.scalars
                    .push((k.trim().to_string(), v.trim().to_string()));
            } else {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("unrecognized line '{line}'"),
                });
            }
        }
        Ok(file)
    }
}

fn push_row(out: &mut String, vals: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in vals {
        if !first {
            out.push(',');
        }
        first = false;
        out.push_str(&fmt_f64(v));
    }
    out.push('\n');
}

fn parse_row(row: &(usize, String), width: usize) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        row.1.split(',').map(|f| f.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if v.len() == width => Ok(v),
        Ok(v) => Err(Error::Parse {
            line: row.0,
            message: format!("expected {width} values, found {}", v.len()),
        }),
        Err(_) => Err(Error::Parse {
            line: row.0,
            message: "non-numeric value".into(),
        }),
    }
}

/// Column vector helper for callers building [`FitBlock::Dense`] entries.
pub fn column(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(values.len(), 1, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> DatasetSpec {
        DatasetSpec::csv("unused")
    }

    #[test]
    fn loads_small_csv() {
        let d = load_matrix_from_reader("1,2\n3,4\n5,6\n".as_bytes(), &spec()).unwrap();
        assert_eq!(
            d.data,
            DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        );
        assert_eq!(d.column_means, vec![3.0, 4.0]);
    }

    #[test]
    fn demean_and_header() {
        let mut s = spec();
        s.demean = true;
        s.has_header = true;
        let d = load_matrix_from_reader("a,b\n1,2\n3,4\n5,6\n".as_bytes(), &s).unwrap();
        assert_eq!(d.n(), 3);
        for c in d.data.column_iter() {
            assert!(c.sum().abs() < 1e-15);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match load_matrix_from_reader("1,2\n3\n".as_bytes(), &spec()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match load_matrix_from_reader("1,2\n3,x\n".as_bytes(), &spec()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(load_matrix_from_reader("1,2\n".as_bytes(), &spec()).is_err());
    }

    #[test]
    fn comments_are_skipped() {
        let d = load_matrix_from_reader("# hdr\n1,2\n3,4\n".as_bytes(), &spec()).unwrap();
        assert_eq!(d.n(), 2);
    }

    #[test]
    fn covariance_conventions() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        assert_eq!(
            sample_covariance(&x, CovarianceScaling::Unbiased)
                .unwrap()
                .get(0, 0),
            2.0
        );
        assert_eq!(
            sample_covariance(&x, CovarianceScaling::Ml)
                .unwrap()
                .get(0, 0),
            1.0
        );
        assert!(sample_covariance(&DMatrix::zeros(1, 2), CovarianceScaling::Ml).is_err());
    }

    #[test]
    fn covariance_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(30, 12, |_, _| rng.gen_range(-1.0..1.0));
        let (xc, _) = center_columns(&x);
        let s = sample_covariance(&xc, CovarianceScaling::Unbiased).unwrap();
        assert!(s.min_eigenvalue() >= -1e-12);
        assert_eq!(s.as_matrix(), &s.as_matrix().transpose());
    }

    #[test]
    fn fit_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let eig = sym_eig(&SymMatrix::new(&a + a.transpose()).unwrap()).unwrap();
        let l = LowRankComponent::new(
            eig.vectors.columns(0, 2).into_owned(),
            vec![std::f64::consts::PI, 0.1 + 0.2],
        )
        .unwrap();
        let s = SymMatrix::new(DMatrix::from_fn(5, 5, |i, j| {
            if i == j || (i + j) % 3 == 0 {
                1.0 / (1.0 + i as f64 + j as f64)
            } else {
                0.0
            }
        }))
        .unwrap();
        let mut f = FitFile::default();
        f.push_f64("psi", 1.0 / 3.0);
        f.push_scalar("rank", 2);
        f.blocks.push(FitBlock::LowRank("L_un".into(), l.clone()));
        f.blocks.push(FitBlock::LowRank(
            "L_empty".into(),
            LowRankComponent::empty(5),
        ));
        f.blocks.push(FitBlock::Sparse("S_un".into(), s.clone()));
        f.blocks.push(FitBlock::Dense("Y".into(), a.clone()));
        let text = f.render(Some(&OutputHeader::new("test", Some(7))));
        assert!(text.starts_with("# factor-lrs version="));
        let back = FitFile::parse(text.as_bytes()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.scalar_f64("psi").unwrap(), 1.0 / 3.0);
        assert_eq!(back.low_rank("L_un").unwrap(), &l);
        assert_eq!(back.sparse("S_un").unwrap().matrix(), &s);
        assert_eq!(back.dense("Y").unwrap(), &a);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -2.5e-300, 3.0, 1e300, 7.0 / 3.0, 0.0]);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, Some(&OutputHeader::new("x", None)), &m).unwrap();
        let back = load_matrix_from_reader(buf.as_slice(), &spec()).unwrap();
        assert_eq!(back.data, m);
    }
}
