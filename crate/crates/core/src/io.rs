//! Delimited numeric text: ensembles (rows = data points, columns = draws)
//! and columnar tables with a header.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn is_blank_or_comment(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// A numeric matrix from comma-, tab- or space-separated text. A first line
/// that does not parse as numbers is taken as a header and skipped.
pub fn read_matrix<R: BufRead>(reader: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    let mut first = true;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if is_blank_or_comment(&line) {
            continue;
        }
        let fields = split_fields(&line);
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if first => {
                first = false;
                continue;
            }
            Err(e) => {
                return Err(Error::Parse {
                    line: k + 1,
                    msg: e.to_string(),
                })
            }
        };
        first = false;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    line: k + 1,
                    msg: format!("expected {w} fields, found {}", values.len()),
                })
            }
            _ => {}
        }
        rows.push(values);
    }
    let w = width.ok_or_else(|| Error::InvalidData("no numeric rows".into()))?;
    Ok(DMatrix::from_fn(rows.len(), w, |i, j| rows[i][j]))
}

/// Named numeric columns from text whose first line is a header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.columns[k].as_slice())
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

pub fn read_table<R: BufRead>(reader: R) -> Result<Table> {
    let mut lines = reader.lines().enumerate().filter(|(_, l)| match l {
        Ok(s) => !is_blank_or_comment(s),
        Err(_) => true,
    });
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::InvalidData("empty table".into()))?;
    let header = header?;
    let names: Vec<String> = split_fields(&header)
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut columns = vec![Vec::new(); names.len()];
    for (k, line) in lines {
        let line = line?;
        let fields = split_fields(&line);
        if fields.len() != names.len() {
            return Err(Error::Parse {
                line: k + 1,
                msg: format!("expected {} fields, found {}", names.len(), fields.len()),
            });
        }
        for (c, f) in fields.iter().enumerate() {
            columns[c].push(f.parse::<f64>().map_err(|e| Error::Parse {
                line: k + 1,
                msg: format!("column `{}`: {e}", names[c]),
            })?);
        }
    }
    Ok(Table { names, columns })
}

/// Comma-separated matrix, floats in shortest round-trip form.
pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    if let Some(h) = header {
        writeln!(w, "{}", h.join(","))?;
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
