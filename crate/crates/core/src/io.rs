//! MatrixMarket ingestion and CSV emission.
//!
//! Readers report failures with the file path and 1-based line number.
//! All numeric output uses 17-significant-digit scientific notation, which
//! round-trips every finite `f64` exactly, so a written envelope reloads
//! bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::experiments::{MethodEnvelope, TrialEnvelope};
use crate::linalg::{LinalgError, Matrix};
use crate::solvers::IterateTrace;

/// Column layout shared by trace and envelope CSVs.
pub const TRACE_HEADER: &str =
    "k,row_touches,method,mean_err_sq,min_err_sq,max_err_sq,bound_rk,bound_2srk";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads a dense matrix from a MatrixMarket file (`array` or `coordinate`
/// format, `real`, `general`). Coordinate entries not listed default to zero;
/// listing the same position twice is rejected rather than summed, since for
/// a dense solver input a duplicate is almost certainly a typo.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<Matrix, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(idx, line)| (idx + 1, line.trim()))
        .filter(|&(_, line)| !line.is_empty());

    let (banner_line, banner) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "empty file, expected a MatrixMarket banner"))?;
    let format = parse_banner(path, banner_line, banner)?;

    // Comments may only appear after the banner and before the data per the
    // format spec, but accepting them anywhere costs nothing.
    let mut rows = lines.filter(|&(_, line)| !line.starts_with('%'));

    let (size_line, size) = rows
        .next()
        .ok_or_else(|| parse_error(path, banner_line, "missing size line"))?;
    let fields: Vec<&str> = size.split_whitespace().collect();

    match format {
        MmFormat::Array => {
            let [m, n] = parse_counts(path, size_line, &fields, ["rows", "cols"])?;
            read_array_entries(path, m, n, rows)
        }
        MmFormat::Coordinate => {
            let [m, n, nnz] = parse_counts(path, size_line, &fields, ["rows", "cols", "nonzeros"])?;
            read_coordinate_entries(path, m, n, nnz, rows)
        }
    }
}

enum MmFormat {
    Array,
    Coordinate,
}

fn parse_banner(path: &Path, line: usize, banner: &str) -> Result<MmFormat, IoError> {
    let tokens: Vec<String> = banner
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    if tokens.first().map(String::as_str) != Some("%%matrixmarket") {
        return Err(parse_error(path, line, "expected a %%MatrixMarket banner"));
    }
    if tokens.len() != 5 {
        return Err(parse_error(
            path,
            line,
            "banner must read '%%MatrixMarket matrix <format> <field> <symmetry>'",
        ));
    }
    if tokens[1] != "matrix" {
        return Err(parse_error(
            path,
            line,
            format!("unsupported object '{}'", tokens[1]),
        ));
    }
    let format = match tokens[2].as_str() {
        "array" => MmFormat::Array,
        "coordinate" => MmFormat::Coordinate,
        other => {
            return Err(parse_error(
                path,
                line,
                format!("unsupported format '{other}'"),
            ))
        }
    };
    if tokens[3] != "real" {
        return Err(parse_error(
            path,
            line,
            format!("unsupported field '{}', only real", tokens[3]),
        ));
    }
    if tokens[4] != "general" {
        return Err(parse_error(
            path,
            line,
            format!("unsupported symmetry '{}', only general", tokens[4]),
        ));
    }
    Ok(format)
}

fn parse_counts<const K: usize>(
    path: &Path,
    line: usize,
    fields: &[&str],
    names: [&str; K],
) -> Result<[usize; K], IoError> {
    if fields.len() != K {
        return Err(parse_error(
            path,
            line,
            format!(
                "size line must hold exactly {K} integers ({})",
                names.join(" ")
            ),
        ));
    }
    let mut out = [0usize; K];
    for (slot, (&field, name)) in out.iter_mut().zip(fields.iter().zip(names)) {
        *slot = field
            .parse()
            .map_err(|_| parse_error(path, line, format!("invalid {name} count '{field}'")))?;
    }
    Ok(out)
}

fn parse_value(path: &Path, line: usize, token: &str) -> Result<f64, IoError> {
    let value: f64 = token
        .parse()
        .map_err(|_| parse_error(path, line, format!("invalid real value '{token}'")))?;
    if !value.is_finite() {
        return Err(parse_error(
            path,
            line,
            format!("non-finite value '{token}'"),
        ));
    }
    Ok(value)
}

/// Array format stores entries in column-major order, any number per line.
fn read_array_entries<'a>(
    path: &Path,
    m: usize,
    n: usize,
    rows: impl Iterator<Item = (usize, &'a str)>,
) -> Result<Matrix, IoError> {
    if m == 0 || n == 0 {
        return Err(parse_error(path, 1, "matrix dimensions must be positive"));
    }
    let total = m * n;
    let mut data = vec![0.0; total];
    let mut filled = 0usize;
    let mut last_line = 1;
    for (line, text) in rows {
        last_line = line;
        for token in text.split_whitespace() {
            if filled == total {
                return Err(parse_error(
                    path,
                    line,
                    format!("more than {total} entries"),
                ));
            }
            let value = parse_value(path, line, token)?;
            // Entry index walks down column `filled / m`.
            let (col, row) = (filled / m, filled % m);
            data[row * n + col] = value;
            filled += 1;
        }
    }
    if filled != total {
        return Err(parse_error(
            path,
            last_line,
            format!("expected {total} entries, found {filled}"),
        ));
    }
    Ok(Matrix::from_row_major(m, n, data)?)
}

/// Coordinate format lists `i j value` triples with 1-based indices.
fn read_coordinate_entries<'a>(
    path: &Path,
    m: usize,
    n: usize,
    nnz: usize,
    rows: impl Iterator<Item = (usize, &'a str)>,
) -> Result<Matrix, IoError> {
    if m == 0 || n == 0 {
        return Err(parse_error(path, 1, "matrix dimensions must be positive"));
    }
    let mut data = vec![0.0; m * n];
    let mut seen = vec![false; m * n];
    let mut listed = 0usize;
    let mut last_line = 1;
    for (line, text) in rows {
        last_line = line;
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_error(
                path,
                line,
                "coordinate entry must read 'i j value'",
            ));
        }
        if listed == nnz {
            return Err(parse_error(path, line, format!("more than {nnz} entries")));
        }
        let i: usize = fields[0]
            .parse()
            .map_err(|_| parse_error(path, line, format!("invalid row index '{}'", fields[0])))?;
        let j: usize = fields[1].parse().map_err(|_| {
            parse_error(path, line, format!("invalid column index '{}'", fields[1]))
        })?;
        if i < 1 || i > m {
            return Err(parse_error(
                path,
                line,
                format!("row index {i} outside 1..={m}"),
            ));
        }
        if j < 1 || j > n {
            return Err(parse_error(
                path,
                line,
                format!("column index {j} outside 1..={n}"),
            ));
        }
        let slot = (i - 1) * n + (j - 1);
        if seen[slot] {
            return Err(parse_error(
                path,
                line,
                format!("duplicate entry for ({i}, {j})"),
            ));
        }
        seen[slot] = true;
        data[slot] = parse_value(path, line, fields[2])?;
        listed += 1;
    }
    if listed != nnz {
        return Err(parse_error(
            path,
            last_line,
            format!("expected {nnz} entries, found {listed}"),
        ));
    }
    Ok(Matrix::from_row_major(m, n, data)?)
}

/// Writes `matrix` in MatrixMarket array format (column-major entry order).
pub fn write_matrix_market(matrix: &Matrix, path: impl AsRef<Path>) -> Result<(), IoError> {
    let mut out = String::from("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(out, "{} {}", matrix.nrows(), matrix.ncols());
    for j in 0..matrix.ncols() {
        for i in 0..matrix.nrows() {
            let _ = writeln!(out, "{:.16e}", matrix.get(i, j));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn push_curve_row(
    out: &mut String,
    k: usize,
    row_touches: u64,
    label: &str,
    err: [f64; 3],
    bounds: [f64; 2],
) {
    let _ = writeln!(
        out,
        "{k},{row_touches},{label},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
        err[0], err[1], err[2], bounds[0], bounds[1],
    );
}

/// Writes one method block per envelope entry, `k` running from 0 in each.
pub fn write_envelope_csv(envelope: &TrialEnvelope, path: impl AsRef<Path>) -> Result<(), IoError> {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for method in &envelope.methods {
        let label = method.method.label();
        for k in 0..method.mean_err_sq.len() {
            push_curve_row(
                &mut out,
                k,
                method.row_touches[k],
                label,
                [
                    method.mean_err_sq[k],
                    method.min_err_sq[k],
                    method.max_err_sq[k],
                ],
                [method.bound_rk[k], method.bound_two_subspace[k]],
            );
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a single solve's error history in the envelope layout: the three
/// error columns coincide (a trace is a one-sample envelope) and the bound
/// columns are NaN, since a bare trace fixes neither R nor D. Row touches use
/// the nominal equal-rows axis (`k * rows_per_iteration`); fallback bookkeeping
/// stays in the trace itself. A trace without ground truth writes the header
/// only, as there is no error curve to plot.
pub fn write_trace_csv(trace: &IterateTrace, path: impl AsRef<Path>) -> Result<(), IoError> {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    let label = trace.method.label();
    let per_iteration = trace.method.rows_per_iteration() as u64;
    for (k, &err) in trace.errors_sq.iter().enumerate() {
        push_curve_row(
            &mut out,
            k,
            k as u64 * per_iteration,
            label,
            [err; 3],
            [f64::NAN; 2],
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reloads the method blocks of an envelope or trace CSV. Each block must
/// start at `k = 0` and count up by one; the block boundary is the `k` reset.
pub fn read_envelope_csv(path: impl AsRef<Path>) -> Result<Vec<MethodEnvelope>, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(idx, line)| (idx + 1, line));

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "empty file, expected a trace header"))?;
    if header != TRACE_HEADER {
        return Err(parse_error(
            path,
            1,
            format!("expected header '{TRACE_HEADER}'"),
        ));
    }

    let mut blocks: Vec<MethodEnvelope> = Vec::new();
    for (line, text) in lines {
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 8 {
            return Err(parse_error(path, line, "expected 8 comma-separated fields"));
        }
        let k: usize = fields[0].parse().map_err(|_| {
            parse_error(
                path,
                line,
                format!("invalid iteration index '{}'", fields[0]),
            )
        })?;
        let row_touches: u64 = fields[1]
            .parse()
            .map_err(|_| parse_error(path, line, format!("invalid row touches '{}'", fields[1])))?;
        let method = fields[2]
            .parse()
            .map_err(|message| parse_error(path, line, message))?;
        let mut values = [0.0f64; 5];
        for (slot, &field) in values.iter_mut().zip(&fields[3..]) {
            // NaN is legal here: trace CSVs carry NaN bound columns.
            *slot = field
                .parse()
                .map_err(|_| parse_error(path, line, format!("invalid value '{field}'")))?;
        }

        if k == 0 {
            blocks.push(MethodEnvelope {
                method,
                row_touches: Vec::new(),
                mean_err_sq: Vec::new(),
                min_err_sq: Vec::new(),
                max_err_sq: Vec::new(),
                bound_rk: Vec::new(),
                bound_two_subspace: Vec::new(),
            });
        }
        let block = blocks
            .last_mut()
            .ok_or_else(|| parse_error(path, line, "first data row must start at k = 0"))?;
        if k != block.mean_err_sq.len() {
            return Err(parse_error(
                path,
                line,
                format!("iteration index {k} breaks the consecutive count from 0"),
            ));
        }
        if method != block.method {
            return Err(parse_error(
                path,
                line,
                format!("method changed mid-block without a k = 0 reset: '{method}'"),
            ));
        }
        block.row_touches.push(row_touches);
        block.mean_err_sq.push(values[0]);
        block.min_err_sq.push(values[1]);
        block.max_err_sq.push(values[2]);
        block.bound_rk.push(values[3]);
        block.bound_two_subspace.push(values[4]);
    }
    Ok(blocks)
}

/// Writes the `(delta, delta_max, d)` grid from `dfactor_grid` as CSV.
pub fn write_dfactor_csv(grid: &[(f64, f64, f64)], path: impl AsRef<Path>) -> Result<(), IoError> {
    let mut out = String::from("delta,delta_max,d\n");
    for &(delta, delta_max, d) in grid {
        let _ = writeln!(out, "{delta:.16e},{delta_max:.16e},{d:.16e}");
    }
    fs::write(path, out)?;
    Ok(())
}
