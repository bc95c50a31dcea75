//! Columnar observations and their CSV representation.
//!
//! Default header layout is `y,x,z1..zk[,iv1..ivm][,v_true]`. Values are
//! written with the shortest decimal that round-trips to the same `f64`.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Observations `(y, x, controls, instruments)` plus simulation-only ground
/// truth for the first-stage residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Outcome levels, strictly positive.
    pub y: Vec<f64>,
    /// Treatment: `log X` under the elasticity convention, `X` under the
    /// semi-elasticity convention.
    pub x: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
    pub control_names: Vec<String>,
    pub instruments: Vec<Vec<f64>>,
    pub instrument_names: Vec<String>,
    pub v_true: Option<Vec<f64>>,
}

/// Maps CSV header names onto dataset roles.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnBinding {
    pub y: String,
    pub x: String,
    pub controls: Vec<String>,
    pub instruments: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        Self::with_columns(y, x, Vec::new(), Vec::new(), None)
    }

    pub fn with_columns(
        y: Vec<f64>,
        x: Vec<f64>,
        controls: Vec<Vec<f64>>,
        instruments: Vec<Vec<f64>>,
        v_true: Option<Vec<f64>>,
    ) -> Result<Self> {
        let control_names = (1..=controls.len()).map(|i| format!("z{i}")).collect();
        let instrument_names = (1..=instruments.len()).map(|i| format!("iv{i}")).collect();
        let d = Dataset {
            y,
            x,
            controls,
            control_names,
            instruments,
            instrument_names,
            v_true,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if self.x.len() != n {
            return Err(Error::InvalidData(format!(
                "x has {} rows, y has {n}",
                self.x.len()
            )));
        }
        for (i, y) in self.y.iter().enumerate() {
            if !(y.is_finite() && *y > 0.0) {
                return Err(Error::InvalidData(format!(
                    "y[{i}] = {y} is not strictly positive and finite"
                )));
            }
        }
        let mut cols: Vec<(&str, &Vec<f64>)> = vec![("x", &self.x)];
        for (name, c) in self.control_names.iter().zip(&self.controls) {
            cols.push((name, c));
        }
        for (name, c) in self.instrument_names.iter().zip(&self.instruments) {
            cols.push((name, c));
        }
        if let Some(v) = &self.v_true {
            cols.push(("v_true", v));
        }
        for (name, c) in cols {
            if c.len() != n {
                return Err(Error::InvalidData(format!(
                    "column `{name}` has {} rows, expected {n}",
                    c.len()
                )));
            }
            if let Some(i) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "column `{name}` row {i} is not finite"
                )));
            }
        }
        if self.control_names.len() != self.controls.len()
            || self.instrument_names.len() != self.instruments.len()
        {
            return Err(Error::InvalidData("column names do not match columns".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn log_y(&self) -> Vec<f64> {
        self.y.iter().map(|y| y.ln()).collect()
    }

    pub fn has_instruments(&self) -> bool {
        !self.instruments.is_empty()
    }

    /// True when `x` takes exactly the values {0, 1} with both present.
    pub fn is_binary_x(&self) -> bool {
        let mut seen0 = false;
        let mut seen1 = false;
        for &v in &self.x {
            if v == 0.0 {
                seen0 = true;
            } else if v == 1.0 {
                seen1 = true;
            } else {
                return false;
            }
        }
        seen0 && seen1
    }

    pub fn distinct_x(&self) -> usize {
        self.x.iter().map(|v| v.to_bits()).collect::<BTreeSet<_>>().len()
    }

    /// Row `i` of the control matrix.
    pub fn control_row(&self, i: usize) -> Vec<f64> {
        self.controls.iter().map(|c| c[i]).collect()
    }

    pub fn instrument_row(&self, i: usize) -> Vec<f64> {
        self.instruments.iter().map(|c| c[i]).collect()
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let pick = |c: &Vec<f64>| idx.iter().map(|&i| c[i]).collect::<Vec<f64>>();
        Dataset {
            y: pick(&self.y),
            x: pick(&self.x),
            controls: self.controls.iter().map(pick).collect(),
            control_names: self.control_names.clone(),
            instruments: self.instruments.iter().map(pick).collect(),
            instrument_names: self.instrument_names.clone(),
            v_true: self.v_true.as_ref().map(pick),
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["y".to_string(), "x".to_string()];
        h.extend(self.control_names.iter().cloned());
        h.extend(self.instrument_names.iter().cloned());
        if self.v_true.is_some() {
            h.push("v_true".into());
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header())?;
        for i in 0..self.n() {
            let mut row = vec![fmt_f64(self.y[i]), fmt_f64(self.x[i])];
            row.extend(self.controls.iter().map(|c| fmt_f64(c[i])));
            row.extend(self.instruments.iter().map(|c| fmt_f64(c[i])));
            if let Some(v) = &self.v_true {
                row.push(fmt_f64(v[i]));
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads a CSV using the default header convention: `y`, `x`, columns
    /// starting with `z` are controls, `iv` instruments, and `v_true`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let table = RawTable::read(r)?;
        let binding = ColumnBinding {
            y: "y".into(),
            x: "x".into(),
            controls: table
                .header
                .iter()
                .filter(|h| h.starts_with('z'))
                .cloned()
                .collect(),
            instruments: table
                .header
                .iter()
                .filter(|h| h.starts_with("iv"))
                .cloned()
                .collect(),
        };
        let mut d = table.bind(&binding)?;
        if table.header.iter().any(|h| h == "v_true") {
            d.v_true = Some(table.column("v_true")?);
        }
        d.validate()?;
        Ok(d)
    }

    /// Reads a CSV binding columns explicitly by header name.
    pub fn read_csv_bound<R: Read>(r: R, binding: &ColumnBinding) -> Result<Self> {
        RawTable::read(r)?.bind(binding)
    }

    pub fn load_csv(path: impl AsRef<Path>, binding: Option<&ColumnBinding>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        match binding {
            Some(b) => Self::read_csv_bound(f, b),
            None => Self::read_csv(f),
        }
    }

    /// SHA-256 over the canonical CSV rendering.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_string().as_bytes()))
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl RawTable {
    fn read<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            rows.push(rec?.iter().map(|s| s.trim().to_string()).collect());
        }
        Ok(RawTable { header, rows })
    }

    fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidData(format!("missing column `{name}`")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.get(j)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::InvalidData(format!("column `{name}` row {i} is not a number"))
                    })
            })
            .collect()
    }

    fn bind(&self, b: &ColumnBinding) -> Result<Dataset> {
        let controls = b
            .controls
            .iter()
            .map(|c| self.column(c))
            .collect::<Result<Vec<_>>>()?;
        let instruments = b
            .instruments
            .iter()
            .map(|c| self.column(c))
            .collect::<Result<Vec<_>>>()?;
        let d = Dataset {
            y: self.column(&b.y)?,
            x: self.column(&b.x)?,
            controls,
            control_names: b.controls.clone(),
            instruments,
            instrument_names: b.instruments.clone(),
            v_true: None,
        };
        d.validate()?;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_nonpositive_outcome() {
        let err = Dataset::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidData(_)));
    }

    #[test]
    fn rejects_ragged_columns() {
        assert!(Dataset::with_columns(vec![1.0, 2.0], vec![0.0, 1.0], vec![vec![1.0]], vec![], None).is_err());
    }

    #[test]
    fn header_layout() {
        let d = Dataset::with_columns(
            vec![1.0],
            vec![0.5],
            vec![vec![2.0], vec![3.0]],
            vec![vec![4.0]],
            Some(vec![0.1]),
        )
        .unwrap();
        let s = d.to_csv_string();
        assert_eq!(s.lines().next().unwrap(), "y,x,z1,z2,iv1,v_true");
    }

    #[test]
    fn missing_bound_column_is_named() {
        let csv = "y,x\n1,2\n";
        let b = ColumnBinding {
            y: "y".into(),
            x: "dose".into(),
            ..Default::default()
        };
        let err = Dataset::read_csv_bound(csv.as_bytes(), &b).unwrap_err();
        assert!(err.to_string().contains("dose"));
    }

    #[test]
    fn binary_detection() {
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 1.0]).unwrap().is_binary_x());
        assert!(!Dataset::new(vec![1.0, 2.0], vec![0.0, 2.0]).unwrap().is_binary_x());
        assert!(!Dataset::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap().is_binary_x());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(rows in proptest::collection::vec((1e-300f64..1e300, -1e6f64..1e6, any::<f64>().prop_filter("finite", |v| v.is_finite())), 1..30)) {
            let y = rows.iter().map(|r| r.0).collect();
            let x = rows.iter().map(|r| r.1).collect();
            let z = vec![rows.iter().map(|r| r.2).collect()];
            let d = Dataset::with_columns(y, x, z, vec![], None).unwrap();
            let back = Dataset::read_csv(d.to_csv_string().as_bytes()).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
