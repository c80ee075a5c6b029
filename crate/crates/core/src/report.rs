//! CSV and JSON export of matrices, sensitivity rankings, and diagnostics.
//!
//! Numeric CSV cells are written with 17 significant digits so that a
//! write → read round trip reproduces every f64 bit for bit. Human-facing
//! rounding is the consumer's concern.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uq::{LinearResponse, PropagationResult, ILL_CONDITIONED_THRESHOLD};

/// Format one number with 17 significant digits (round-trip exact).
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a labelled matrix as CSV: a header of column labels (prefixed by
/// an empty cell when row labels are present), then one row per line.
pub fn write_matrix_csv<W: Write>(
    mut w: W,
    row_labels: Option<&[String]>,
    col_labels: &[String],
    matrix: &DMatrix<f64>,
) -> io::Result<()> {
    let mut header = Vec::new();
    if row_labels.is_some() {
        header.push(String::new());
    }
    header.extend(col_labels.iter().cloned());
    writeln!(w, "{}", header.join(","))?;
    for i in 0..matrix.nrows() {
        let mut cells = Vec::with_capacity(matrix.ncols() + 1);
        if let Some(labels) = row_labels {
            cells.push(labels[i].clone());
        }
        for j in 0..matrix.ncols() {
            cells.push(format_f64(matrix[(i, j)]));
        }
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Read back a CSV written by [`write_matrix_csv`].
pub fn read_matrix_csv(text: &str, has_row_labels: bool) -> Result<DMatrix<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Evaluation("empty CSV".into()))?;
    let ncols = header.split(',').count() - usize::from(has_row_labels);
    let mut values: Vec<f64> = Vec::new();
    let mut nrows = 0;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let data = if has_row_labels { &cells[1..] } else { &cells[..] };
        if data.len() != ncols {
            return Err(Error::Evaluation(format!(
                "row {nrows} has {} cells, expected {ncols}",
                data.len()
            )));
        }
        for cell in data {
            values.push(
                cell.parse::<f64>()
                    .map_err(|e| Error::Evaluation(format!("bad float `{cell}`: {e}")))?,
            );
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

/// Write the sensitivity ranking as CSV, sorted descending (tornado order).
pub fn write_sensitivity_csv<W: Write>(
    mut w: W,
    labels: &[String],
    sensitivity: &DVector<f64>,
) -> io::Result<()> {
    let mut order: Vec<usize> = (0..sensitivity.len()).collect();
    order.sort_by(|&i, &j| sensitivity[j].total_cmp(&sensitivity[i]));
    writeln!(w, "parameter,sensitivity")?;
    for i in order {
        writeln!(w, "{},{}", labels[i], format_f64(sensitivity[i]))?;
    }
    Ok(())
}

/// Diagnostics record attached to every propagation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub m: usize,
    pub rank: usize,
    pub kappa_h: f64,
    pub ill_conditioned: bool,
    pub used_pseudoinverse: bool,
    pub weak_indices: Vec<usize>,
}

impl Diagnostics {
    /// Collect diagnostics from a response and its propagation.
    pub fn from_propagation(lr: &LinearResponse, prop: &PropagationResult) -> Self {
        Self {
            n: lr.t().nrows(),
            m: lr.t().ncols(),
            rank: prop.rank,
            kappa_h: prop.kappa_h,
            ill_conditioned: prop.kappa_h > ILL_CONDITIONED_THRESHOLD,
            used_pseudoinverse: prop.used_pseudoinverse,
            weak_indices: prop.weak.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn matrix_csv_roundtrip_is_bit_exact() {
        let m = dmatrix![
            1.0/3.0, -2.0e-17, 3.5;
            f64::MIN_POSITIVE, 1.2345678901234567, -9.87e300
        ];
        let labels: Vec<String> = vec!["c1".into(), "c2".into(), "c3".into()];
        let rows: Vec<String> = vec!["r1".into(), "r2".into()];
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, Some(&rows), &labels, &m).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = read_matrix_csv(&text, true).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn sensitivity_csv_is_sorted_descending() {
        let labels: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let s = nalgebra::dvector![0.3, 6.4, 1.1];
        let mut buf = Vec::new();
        write_sensitivity_csv(&mut buf, &labels, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "parameter,sensitivity");
        assert!(lines[1].starts_with("b,"));
        assert!(lines[2].starts_with("c,"));
        assert!(lines[3].starts_with("a,"));
    }
}
