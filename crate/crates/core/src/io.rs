//! CSV formats for datasets, kernels and marginals.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kdpp::MarginalVector;
use crate::kernels::Dataset;

/// Read a dataset: feature columns, then optional `label`, then optional
/// `stratum`. A header row is required.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text).map_err(|m| Error::parse(path, m))
}

fn parse_dataset(text: &str) -> std::result::Result<Dataset, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers().map_err(|e| e.to_string())?.iter().map(str::to_owned).collect();
    let mut cols = headers.len();
    let has_stratum = headers.last().is_some_and(|h| h == "stratum");
    if has_stratum {
        cols -= 1;
    }
    let has_label = cols > 0 && headers[cols - 1] == "label";
    if has_label {
        cols -= 1;
    }
    if headers[..cols].iter().any(|h| h == "label" || h == "stratum") {
        return Err("`label` and `stratum` must be the last columns, in that order".into());
    }
    if cols == 0 {
        return Err("no feature columns".into());
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut strata = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        let line = r + 2;
        let row = (0..cols)
            .map(|c| record[c].parse::<f64>().map_err(|e| format!("line {line}, column `{}`: {e}", headers[c])))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        rows.push(row);
        let int = |c: usize| record[c].parse::<usize>().map_err(|e| format!("line {line}, column `{}`: {e}", headers[c]));
        if has_label {
            labels.push(int(cols)?);
        }
        if has_stratum {
            strata.push(int(headers.len() - 1)?);
        }
    }
    Dataset::from_rows(&rows, has_label.then_some(labels), has_stratum.then_some(strata)).map_err(|e| e.to_string())
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    if data.labels.is_some() {
        header.push("label".into());
    }
    if data.strata.is_some() {
        header.push("stratum".into());
    }
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.features.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = &data.labels {
            rec.push(l[i].to_string());
        }
        if let Some(s) = &data.strata {
            rec.push(s[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Full matrix, no header, 17 significant digits per entry.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 24);
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_string(path, &out)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|v| v.trim().parse::<f64>()).collect())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::parse(path, "ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// `index,marginal` rows; the header records `k`.
pub fn write_marginals(path: &Path, b: &MarginalVector) -> Result<()> {
    let mut out = String::from("index,marginal\n");
    for (i, v) in b.values.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt_f64(*v)));
    }
    write_string(path, &out)
}

/// Reads a marginals file; `k` is recovered as the rounded sum.
pub fn read_marginals(path: &Path) -> Result<MarginalVector> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut values = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let idx: usize = rec[0].parse().map_err(|_| Error::parse(path, format!("row {r}: bad index")))?;
        if idx != r {
            return Err(Error::parse(path, format!("row {r}: index {idx} out of order")));
        }
        values.push(rec[1].parse::<f64>().map_err(|_| Error::parse(path, format!("row {r}: bad value")))?);
    }
    let k = values.iter().sum::<f64>().round() as usize;
    Ok(MarginalVector::new(values, k))
}

pub fn write_string(path: &Path, s: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_columns() {
        let d = parse_dataset("a,b,label,stratum\n1,2,0,1\n3,4.5,2,0\n").unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.labels, Some(vec![0, 2]));
        assert_eq!(d.strata, Some(vec![1, 0]));
        assert_eq!(d.num_classes(), 3);

        let d = parse_dataset("x0\n1\n2\n").unwrap();
        assert!(d.labels.is_none() && d.strata.is_none());

        let d = parse_dataset("x0,stratum\n1,0\n2,1\n").unwrap();
        assert!(d.labels.is_none());
        assert_eq!(d.strata, Some(vec![0, 1]));
    }

    #[test]
    fn dataset_errors() {
        assert!(parse_dataset("label\n1\n").is_err());
        assert!(parse_dataset("x,label\n1,-1\n").is_err());
        assert!(parse_dataset("x,y\n1,zz\n").is_err());
        assert!(parse_dataset("label,x\n1,2\n").is_err());
        assert!(parse_dataset("x\n").is_err());
    }

    #[test]
    fn dataset_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = Dataset::from_rows(&[vec![0.1, -1e-300], vec![1.0 / 3.0, 2.5]], Some(vec![1, 0]), None).unwrap();
        write_dataset(&p, &d).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), d);
    }

    #[test]
    fn matrix_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 2.0 / 3.0]);
        write_matrix(&p, &m).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "1.0000000000000000e0,1.0000000000000001e-1");
        assert_eq!(read_matrix(&p).unwrap(), m);
    }
}
