//! Plain-text and JSON exports for plotting and for exchange with other tools.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes the nonzero entries of `m` as `row, col, value` lines (0-based)
/// under a `# rows cols nnz` header.
pub fn write_coo<W: Write>(m: &DMatrix<f64>, mut w: W) -> Result<()> {
    let nnz = m.iter().filter(|v| **v != 0.0).count();
    writeln!(w, "# {} {} {}", m.nrows(), m.ncols(), nnz)?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                writeln!(w, "{i}, {j}, {v:e}")?;
            }
        }
    }
    Ok(())
}

/// Reads a matrix written by [`write_coo`].
pub fn read_coo<R: BufRead>(r: R) -> Result<DMatrix<f64>> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty input".into(),
    })?;
    let header = header?;
    let dims: Vec<usize> = header
        .strip_prefix('#')
        .ok_or(Error::Parse {
            line: 1,
            message: "expected '# rows cols nnz'".into(),
        })?
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
    let [rows, cols, nnz] = dims[..] else {
        return Err(Error::Parse {
            line: 1,
            message: "expected three header fields".into(),
        });
    };
    let mut m = DMatrix::zeros(rows, cols);
    let mut seen = 0;
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [i, j, v] = fields[..] else {
            return Err(bad(format!("expected 'row, col, value', got '{line}'")));
        };
        let i: usize = i.parse().map_err(|e| bad(format!("row: {e}")))?;
        let j: usize = j.parse().map_err(|e| bad(format!("col: {e}")))?;
        let v: f64 = v.parse().map_err(|e| bad(format!("value: {e}")))?;
        if i >= rows || j >= cols {
            return Err(bad(format!(
                "entry ({i}, {j}) outside a {rows}x{cols} matrix"
            )));
        }
        m[(i, j)] = v;
        seen += 1;
    }
    if seen != nnz {
        return Err(Error::Parse {
            line: 1,
            message: format!("header announces {nnz} entries, found {seen}"),
        });
    }
    Ok(m)
}

pub fn write_json<T: Serialize, W: Write>(value: &T, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

/// Writes `header` then one record per row.
pub fn write_csv<W, R>(w: W, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()>
where
    W: Write,
    R: Serialize,
{
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}
