//! File formats: CSV matrices and data tables (RFC-4180 subset: UTF-8,
//! comma-separated, no quoting), histogram CSV export, and JSON reports.
//!
//! Numbers are written with 17 significant digits so matrices round-trip
//! bit-for-bit through files.

use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{GeometryError, Role, SymMatrix};
use crate::numerics::Mat;
use crate::simlab::Histogram;

#[derive(Error, Debug)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Shape { path: String, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Split a CSV line into trimmed fields; quoting is not supported.
fn fields(line: &str) -> Vec<String> {
    line.trim_end_matches('\r')
        .split(',')
        .map(|f| f.trim().to_string())
        .collect()
}

fn is_numeric_row(row: &[String]) -> bool {
    !row.is_empty() && row.iter().all(|f| f.parse::<f64>().is_ok())
}

fn parse_rows(path: &Path) -> Result<(Option<Vec<String>>, Vec<Vec<f64>>), IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fs = fields(line);
        if rows.is_empty() && header.is_none() && !is_numeric_row(&fs) {
            header = Some(fs);
            continue;
        }
        let mut row = Vec::with_capacity(fs.len());
        for (col, f) in fs.iter().enumerate() {
            row.push(f.parse::<f64>().map_err(|_| IoError::Parse {
                path: path.display().to_string(),
                line: ln + 1,
                message: format!("field {} is not a number: {f:?}", col + 1),
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::Shape {
            path: path.display().to_string(),
            message: "no data rows".to_string(),
        });
    }
    let width = rows[0].len();
    if let Some(h) = &header {
        if h.len() != width {
            return Err(IoError::Shape {
                path: path.display().to_string(),
                message: format!("header has {} fields but rows have {width}", h.len()),
            });
        }
    }
    if rows.iter().any(|r| r.len() != width) {
        return Err(IoError::Shape {
            path: path.display().to_string(),
            message: "rows have inconsistent field counts".to_string(),
        });
    }
    Ok((header, rows))
}

/// Read a square symmetric matrix with an optional leading header row of
/// variable names.
pub fn read_matrix_csv(path: &Path, role: Role) -> Result<SymMatrix, IoError> {
    let (header, rows) = parse_rows(path)?;
    if rows.len() != rows[0].len() {
        return Err(IoError::Shape {
            path: path.display().to_string(),
            message: format!("matrix must be square, got {}x{}", rows.len(), rows[0].len()),
        });
    }
    Ok(SymMatrix::new(role, &rows, header)?)
}

/// Read a data table: rows are observations, columns are (optionally named)
/// variables.
pub fn read_data_csv(path: &Path) -> Result<(Mat, Option<Vec<String>>), IoError> {
    let (header, rows) = parse_rows(path)?;
    Ok((Mat::from_rows(&rows), header))
}

pub fn write_matrix_csv(path: &Path, s: &SymMatrix) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str(&s.names().join(","));
    out.push('\n');
    for i in 0..s.dim() {
        let row: Vec<String> = (0..s.dim()).map(|j| fmt17(s.get(i, j))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn write_data_csv(path: &Path, x: &Mat, names: Option<&[String]>) -> Result<(), IoError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let emit = |w: &mut dyn std::io::Write, line: &str| -> Result<(), IoError> {
        writeln!(w, "{line}").map_err(|e| io_err(path, e))
    };
    if let Some(n) = names {
        emit(&mut w, &n.join(","))?;
    }
    for r in 0..x.rows {
        let row: Vec<String> = (0..x.cols).map(|c| fmt17(x[(r, c)])).collect();
        emit(&mut w, &row.join(","))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Export a histogram as `bin_lo,bin_hi,count,chi2_density_at_mid` rows.
pub fn write_histogram_csv(path: &Path, h: &Histogram) -> Result<(), IoError> {
    let mut out = String::from("bin_lo,bin_hi,count,chi2_density_at_mid\n");
    for b in 0..h.counts.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt17(h.bin_edges[b]),
            fmt17(h.bin_edges[b + 1]),
            h.counts[b],
            fmt17(h.chi2_density_at_mid[b]),
        ));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Write any serializable report as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("corrtree-io-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn matrix_round_trip_with_header() {
        let s = SymMatrix::new(
            Role::Correlation,
            &[
                vec![1.0, 0.123456789012345678, 0.5],
                vec![0.123456789012345678, 1.0, -0.25],
                vec![0.5, -0.25, 1.0],
            ],
            Some(vec!["x".into(), "y".into(), "z".into()]),
        )
        .unwrap();
        let p = tmp("mat.csv");
        write_matrix_csv(&p, &s).unwrap();
        let back = read_matrix_csv(&p, Role::Correlation).unwrap();
        assert_eq!(back.names(), vec!["x", "y", "z"]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(back.get(i, j), s.get(i, j), "entry ({i},{j})");
            }
        }
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn matrix_without_header_gets_index_names() {
        let p = tmp("noheader.csv");
        std::fs::write(&p, "1.0,0.5\n0.5,1.0\n").unwrap();
        let s = read_matrix_csv(&p, Role::Correlation).unwrap();
        assert_eq!(s.names(), vec!["1", "2"]);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn data_round_trip() {
        let x = Mat::from_rows(&[vec![1.5, -2.25], vec![0.1, 3.75], vec![4.0, 0.0]]);
        let p = tmp("data.csv");
        write_data_csv(&p, &x, Some(&["a".to_string(), "b".to_string()])).unwrap();
        let (back, names) = read_data_csv(&p).unwrap();
        assert_eq!(names, Some(vec!["a".to_string(), "b".to_string()]));
        assert_eq!(back, x);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn parse_error_reports_line() {
        let p = tmp("bad.csv");
        std::fs::write(&p, "a,b\n1.0,2.0\n1.0,oops\n").unwrap();
        match read_data_csv(&p) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn non_square_matrix_rejected() {
        let p = tmp("rect.csv");
        std::fs::write(&p, "1.0,0.5,0.2\n0.5,1.0,0.1\n").unwrap();
        assert!(matches!(
            read_matrix_csv(&p, Role::Correlation),
            Err(IoError::Shape { .. })
        ));
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn histogram_csv_shape() {
        let h = Histogram {
            dof: 1,
            reps: 3,
            bin_edges: vec![0.0, 1.0, 2.0],
            counts: vec![2, 1],
            chi2_density_at_mid: vec![0.3, 0.1],
            ks_distance: 0.05,
            mean: 0.8,
            variance: 0.6,
        };
        let p = tmp("hist.csv");
        write_histogram_csv(&p, &h).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "bin_lo,bin_hi,count,chi2_density_at_mid");
        assert!(lines[1].split(',').count() == 4);
        std::fs::remove_file(&p).ok();
    }
}
