//! Text formats for graphs, matrices, labels, and flat config files.
//!
//! Edge lists are one `i<TAB>j` pair per line with `#` comments. Matrices
//! carry a header line `n d` followed by n whitespace-separated rows.
//! Labels are one integer per line, -1 meaning unlabeled. Floats are
//! written with 17 significant digits so every value round-trips exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::Graph;

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}:{}: {}", path.display(), line, msg))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Reads undirected pairs from an edge-list file.
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in content_lines(&text) {
        let mut it = line.split_whitespace();
        let a = it
            .next()
            .ok_or_else(|| parse_err(path, lineno, "missing source id"))?;
        let b = it
            .next()
            .ok_or_else(|| parse_err(path, lineno, "missing target id"))?;
        if it.next().is_some() {
            return Err(parse_err(path, lineno, "expected exactly two ids"));
        }
        let a = a
            .parse::<usize>()
            .map_err(|e| parse_err(path, lineno, format!("bad id {a:?}: {e}")))?;
        let b = b
            .parse::<usize>()
            .map_err(|e| parse_err(path, lineno, format!("bad id {b:?}: {e}")))?;
        pairs.push((a, b));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyGraph);
    }
    Ok(pairs)
}

pub fn read_graph(path: &Path) -> Result<Graph> {
    Graph::from_edge_list(&read_edge_list(path)?)
}

pub fn write_edge_list(g: &Graph, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, j) in g.to_edge_list() {
        writeln!(out, "{i}\t{j}").expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a matrix with its `n d` header.
pub fn write_matrix(m: &Array2<f64>, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{} {}", m.nrows(), m.ncols()).expect("string write");
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        writeln!(out, "{}", line.join(" ")).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a matrix in the `n d` header format.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = content_lines(&text);
    let (lineno, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 0, "empty matrix file"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_err(path, lineno, "header must be `n d`"));
    }
    let n: usize = dims[0]
        .parse()
        .map_err(|e| parse_err(path, lineno, format!("bad row count: {e}")))?;
    let d: usize = dims[1]
        .parse()
        .map_err(|e| parse_err(path, lineno, format!("bad column count: {e}")))?;
    let mut values = Vec::with_capacity(n * d);
    let mut rows = 0usize;
    for (lineno, line) in lines {
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| parse_err(path, lineno, format!("bad value {tok:?}: {e}")))?;
            values.push(v);
            count += 1;
        }
        if count != d {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {d} values, found {count}"),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(
            path,
            0,
            format!("expected {n} rows, found {rows}"),
        ));
    }
    Array2::from_shape_vec((n, d), values).map_err(|e| Error::Parse(e.to_string()))
}

/// Labels: one integer per line, -1 for unlabeled nodes.
pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (lineno, line) in content_lines(&text) {
        let v: i64 = line
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("bad label {line:?}: {e}")))?;
        if v < -1 {
            return Err(parse_err(path, lineno, "labels must be >= -1"));
        }
        labels.push(v);
    }
    Ok(labels)
}

pub fn write_labels(labels: &[i64], path: &Path) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        writeln!(out, "{l}").expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Node-id list: one id per line.
pub fn read_node_list(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    let mut ids = Vec::new();
    for (lineno, line) in content_lines(&text) {
        ids.push(
            line.parse::<usize>()
                .map_err(|e| parse_err(path, lineno, format!("bad node id {line:?}: {e}")))?,
        );
    }
    Ok(ids)
}

/// Flat `key = value` config file; `#` comments and blank lines ignored.
pub fn read_flat_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (lineno, line) in content_lines(&text) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, lineno, "expected `key = value`"))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}
