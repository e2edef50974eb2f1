//! Minimal comma-delimited table reader with per-cell provenance, and a
//! matching writer. All CLI inputs are plain headered CSV without quoting.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

/// A loaded table: header names plus rows tagged with their source line.
pub struct Table {
    pub file: PathBuf,
    pub header: Vec<String>,
    /// `(line number, cells)` — line numbers are 1-based file positions.
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, raw)) if raw.trim().is_empty() => continue,
                Some((_, raw)) => {
                    break raw.split(',').map(|c| c.trim().to_string()).collect::<Vec<_>>()
                }
                None => {
                    return Err(CliError::Table {
                        file: path.to_path_buf(),
                        message: "file is empty (expected a header line)".into(),
                    })
                }
            }
        };
        let mut rows = Vec::new();
        for (idx, raw) in lines {
            if raw.trim().is_empty() {
                continue;
            }
            let cells: Vec<String> = raw.split(',').map(|c| c.trim().to_string()).collect();
            let line = idx + 1;
            if cells.len() != header.len() {
                return Err(CliError::Parse {
                    file: path.to_path_buf(),
                    line,
                    field: format!("(row with {} cells)", cells.len()),
                    message: format!("expected {} comma-separated cells", header.len()),
                });
            }
            rows.push((line, cells));
        }
        Ok(Table {
            file: path.to_path_buf(),
            header,
            rows,
        })
    }

    /// Index of a required column, by exact header name.
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| CliError::Table {
            file: self.file.clone(),
            message: format!(
                "missing column '{name}' (found: {})",
                self.header.join(", ")
            ),
        })
    }

    pub fn cell<'a>(&self, row: &'a (usize, Vec<String>), col: usize) -> &'a str {
        &row.1[col]
    }

    pub fn parse_f64(&self, row: &(usize, Vec<String>), col: usize) -> Result<f64> {
        let raw = &row.1[col];
        raw.parse::<f64>().map_err(|_| CliError::Parse {
            file: self.file.clone(),
            line: row.0,
            field: self.header[col].clone(),
            message: format!("'{raw}' is not a number"),
        })
    }

}

/// Write a headered comma-delimited file; cells must already be formatted.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Shortest round-trip decimal for a float (Rust's default float display).
pub fn fmt(v: f64) -> String {
    format!("{v}")
}
