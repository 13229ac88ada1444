//! Tab-separated output tables.
//!
//! All files are UTF-8, newline-terminated, with `#`-prefixed header comments.
//! Reals are printed with 17 significant digits so they parse back to the
//! same `f64`.

use std::fmt::Write as _;

use crate::basis::{Coefficients, EdgeFunction};
use crate::em::FitReport;
use crate::error::{Error, Result};
use crate::generate::LatentSample;
use crate::graph::Graph;

/// Round-trip decimal form of a double.
pub fn format_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        // `inf`, `-inf`, `NaN` all parse back with `str::parse`
        format!("{x}")
    }
}

fn parse_real(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::Argument(format!("line {line}: `{tok}` is not a number")))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.split('\t').collect()))
}

/// `posterior.tsv`: node label, posterior mean, posterior variance, then
/// `q_u` at each grid node.
pub fn posterior_tsv(g: &Graph, report: &FitReport) -> String {
    let grid = report.edge_function.grid();
    let mut out = String::new();
    out.push_str("# posterior node marginals q_u(t_i) on the quadrature grid\n");
    out.push_str("# grid");
    for t in grid.nodes() {
        let _ = write!(out, "\t{}", format_real(*t));
    }
    out.push('\n');
    out.push_str("# node\tmean\tvariance");
    for i in 0..grid.len() {
        let _ = write!(out, "\tq{i}");
    }
    out.push('\n');
    for u in 0..g.n() {
        let _ = write!(
            out,
            "{}\t{}\t{}",
            g.label(u),
            format_real(report.posterior_mean[u]),
            format_real(report.posterior_var[u])
        );
        for q in report.posterior(u) {
            let _ = write!(out, "\t{}", format_real(*q));
        }
        out.push('\n');
    }
    out
}

/// Parsed contents of `posterior.tsv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    pub labels: Vec<String>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// row-major `n x K`
    pub densities: Vec<f64>,
    pub grid_len: usize,
}

pub fn parse_posterior(text: &str) -> Result<PosteriorTable> {
    let mut t = PosteriorTable {
        labels: Vec::new(),
        mean: Vec::new(),
        variance: Vec::new(),
        densities: Vec::new(),
        grid_len: 0,
    };
    for (line, cols) in data_lines(text) {
        if cols.len() < 4 {
            return Err(Error::Argument(format!(
                "line {line}: too few posterior columns"
            )));
        }
        let k = cols.len() - 3;
        if t.labels.is_empty() {
            t.grid_len = k;
        } else if k != t.grid_len {
            return Err(Error::Argument(format!(
                "line {line}: ragged posterior row"
            )));
        }
        t.labels.push(cols[0].to_string());
        t.mean.push(parse_real(cols[1], line)?);
        t.variance.push(parse_real(cols[2], line)?);
        for c in &cols[3..] {
            t.densities.push(parse_real(c, line)?);
        }
    }
    if t.labels.is_empty() {
        return Err(Error::Argument("posterior table is empty".into()));
    }
    Ok(t)
}

/// `omega.tsv`: a `(K+1) x (K+1)` table whose first row and column hold the
/// grid nodes and whose body holds `omega(t_i, t_j)`.
pub fn omega_tsv(ef: &EdgeFunction) -> String {
    let nodes = ef.grid().nodes();
    let k = nodes.len();
    let mut out =
        String::from("# edge function omega(x, y); first row holds y, first column holds x\n");
    out.push_str("x\\y");
    for t in nodes {
        let _ = write!(out, "\t{}", format_real(*t));
    }
    out.push('\n');
    for i in 0..k {
        out.push_str(&format_real(nodes[i]));
        for j in 0..k {
            let _ = write!(out, "\t{}", format_real(ef.at(i, j)));
        }
        out.push('\n');
    }
    out
}

/// Grid nodes and the row-major `omega` table from `omega.tsv`.
pub fn parse_omega(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rows = data_lines(text);
    let (line, header) = rows
        .next()
        .ok_or_else(|| Error::Argument("omega table is empty".into()))?;
    let nodes = header[1..]
        .iter()
        .map(|c| parse_real(c, line))
        .collect::<Result<Vec<_>>>()?;
    let k = nodes.len();
    let mut values = Vec::with_capacity(k * k);
    let mut count = 0;
    for (line, cols) in rows {
        if cols.len() != k + 1 {
            return Err(Error::Argument(format!(
                "line {line}: expected {} columns",
                k + 1
            )));
        }
        if parse_real(cols[0], line)? != nodes[count.min(k - 1)] {
            return Err(Error::Argument(format!(
                "line {line}: row label does not match the grid"
            )));
        }
        for c in &cols[1..] {
            values.push(parse_real(c, line)?);
        }
        count += 1;
    }
    if count != k {
        return Err(Error::Argument(format!(
            "omega table has {count} rows, expected {k}"
        )));
    }
    Ok((nodes, values))
}

/// `coefficients.tsv`: one `j, k, c_jk` row per entry.
pub fn coefficients_tsv(c: &Coefficients) -> String {
    let mut out = String::from("# Bernstein coefficients of the edge function\n# j\tk\tc_jk\n");
    for j in 0..c.size() {
        for k in 0..c.size() {
            let _ = writeln!(out, "{j}\t{k}\t{}", format_real(c.get(j, k)));
        }
    }
    out
}

/// Reads a full `(N+1)^2` coefficient listing; the degree is inferred.
pub fn parse_coefficients(text: &str) -> Result<Coefficients> {
    let mut entries = Vec::new();
    for (line, cols) in data_lines(text) {
        if cols.len() != 3 {
            return Err(Error::Argument(format!("line {line}: expected `j k c_jk`")));
        }
        let j: usize = cols[0]
            .parse()
            .map_err(|_| Error::Argument(format!("line {line}: bad row index")))?;
        let k: usize = cols[1]
            .parse()
            .map_err(|_| Error::Argument(format!("line {line}: bad column index")))?;
        entries.push((j, k, parse_real(cols[2], line)?));
    }
    let size = entries
        .iter()
        .map(|&(j, k, _)| j.max(k) + 1)
        .max()
        .unwrap_or(0);
    if size == 0 || entries.len() != size * size {
        return Err(Error::Argument(format!(
            "expected a complete square coefficient listing, got {} entries",
            entries.len()
        )));
    }
    let mut values = vec![f64::NAN; size * size];
    for (j, k, c) in entries {
        if !values[j * size + k].is_nan() {
            return Err(Error::Argument(format!(
                "coefficient ({j}, {k}) listed twice"
            )));
        }
        values[j * size + k] = c;
    }
    Coefficients::new(size - 1, values)
}

/// `truth.tsv`: node label, planted position, planted group (`NA` if none).
pub fn truth_tsv(sample: &LatentSample) -> String {
    let mut out = String::from("# planted structure\n# node\tx_true\tgroup\n");
    for u in 0..sample.graph.n() {
        let group = sample
            .group_labels
            .as_ref()
            .map_or_else(|| "NA".to_string(), |g| g[u].to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            sample.graph.label(u),
            format_real(sample.x_true[u]),
            group
        );
    }
    out
}
