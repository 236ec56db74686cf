//! Human-readable tables: covariance-fit summaries and score variabilities,
//! printed with four decimals.

use std::fmt::Write;

use crate::metrics::{CovarianceSummary, VariabilityStats};

/// Expected layout of a returns file for the real-data pipeline.
pub const RETURNS_SCHEMA: &str = "\
returns file: CSV, one row per trading day (n rows, e.g. 251), one column per
asset (p columns, e.g. 50), optional header row, '#' starts a comment line.
Values are (annualized) returns; columns are demeaned before estimation.";

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0usize; cols];
    for row in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        let cells: Vec<String> = row
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(k, (c, w))| {
                if k == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    };
    line(&mut out, header);
    let total: usize = width.iter().sum::<usize>() + 2 * (cols - 1);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for row in rows {
        line(&mut out, row);
    }
    out
}

fn f4(v: f64) -> String {
    format!("{:.4}", v + 0.0)
}

/// Metrics as rows, estimators as columns.
pub fn covariance_table(entries: &[(&str, CovarianceSummary)]) -> String {
    let mut header = vec!["metric".to_string()];
    header.extend(entries.iter().map(|(name, _)| name.to_string()));
    let row = |label: &str, f: &dyn Fn(&CovarianceSummary) -> String| {
        let mut r = vec![label.to_string()];
        r.extend(entries.iter().map(|(_, s)| f(s)));
        r
    };
    let rows = vec![
        row("r_hat", &|s| s.rank.to_string()),
        row("theta_hat", &|s| f4(s.theta_hat)),
        row("rho_S_hat", &|s| f4(s.rho_s_hat)),
        row("pi_nz", &|s| f4(s.pi_nz)),
        row("total_loss_spectral", &|s| f4(s.spectral_loss)),
        row("total_loss_frobenius", &|s| f4(s.frobenius_loss)),
    ];
    table(&header, &rows)
}

/// One entry per `(estimator, score method)`.
pub fn variability_table(entries: &[(&str, &str, VariabilityStats)]) -> String {
    let header: Vec<String> = ["estimator", "scores", "var_B", "var_f", "var_Bf"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|(est, method, v)| {
            vec![
                est.to_string(),
                method.to_string(),
                f4(v.var_b),
                f4(v.var_f),
                f4(v.var_bf),
            ]
        })
        .collect();
    table(&header, &rows)
}

/// `name = value` lines for scalar diagnostics.
pub fn key_values(pairs: &[(&str, String)]) -> String {
    let w = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    pairs
        .iter()
        .map(|(k, v)| format!("{k:<w$} = {v}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(rank: usize) -> CovarianceSummary {
        CovarianceSummary {
            rank,
            theta_hat: 0.19304,
            rho_s_hat: 0.0,
            pi_nz: 0.1902,
            spectral_loss: 0.00131,
            frobenius_loss: 0.002,
        }
    }

    #[test]
    fn covariance_table_layout() {
        let t = covariance_table(&[("unalce", summary(1)), ("poet", summary(1))]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 8);
        assert!(lines[0].starts_with("metric") && lines[0].ends_with("poet"));
        for key in [
            "r_hat",
            "theta_hat",
            "rho_S_hat",
            "pi_nz",
            "total_loss_spectral",
        ] {
            assert!(t.contains(key), "{key}");
        }
        assert!(t.contains("0.1930") && t.contains("0.0013"));
    }

    #[test]
    fn variability_table_layout() {
        let v = VariabilityStats {
            var_b: 0.199,
            var_f: 197.53,
            var_bf: 18.17,
        };
        let t = variability_table(&[("unalce", "bartlett", v)]);
        assert!(t.contains("197.5300") && t.contains("bartlett"));
        assert_eq!(t.lines().count(), 3);
    }

    #[test]
    fn key_values_align() {
        let s = key_values(&[("a", "1".into()), ("long", "2".into())]);
        assert_eq!(s, "a    = 1\nlong = 2\n");
    }
}
