//! Observed-data representation: role-tagged numeric columns with CSV ingest/emit.
//!
//! A [`Dataset`] is a rectangular block of finite `f64` columns plus a
//! [`ColumnRoles`] schema naming the outcome `Y`, the binary treatment `A`,
//! covariates `X`, treatment confounding proxies `Z`, outcome confounding
//! proxies `W`, and (for simulated data only) hidden confounder columns `U`.
//! Datasets are immutable after construction and safe to share across
//! concurrent estimator runs.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-role schema. Order within each role is significant: it defines the
/// basis ordering used by bridge specifications.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRoles {
    /// Outcome column `Y`.
    pub outcome: String,
    /// Treatment column `A`; must contain only 0 and 1.
    pub treatment: String,
    /// Observed covariates `X` (may be empty).
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Treatment confounding proxies `Z` (at least one).
    pub treatment_proxies: Vec<String>,
    /// Outcome confounding proxies `W` (at least one).
    pub outcome_proxies: Vec<String>,
    /// Hidden confounder columns `U`, present only in simulated data.
    #[serde(default)]
    pub hidden: Vec<String>,
}

impl ColumnRoles {
    /// Convenience constructor for the scalar-role layout used by the
    /// reference simulation models.
    pub fn scalar(outcome: &str, treatment: &str, x: &str, z: &str, w: &str) -> Self {
        ColumnRoles {
            outcome: outcome.to_string(),
            treatment: treatment.to_string(),
            covariates: vec![x.to_string()],
            treatment_proxies: vec![z.to_string()],
            outcome_proxies: vec![w.to_string()],
            hidden: Vec::new(),
        }
    }

    /// All role names in a fixed order (outcome, treatment, X, Z, W, U).
    pub fn all_names(&self) -> Vec<&str> {
        let mut names = vec![self.outcome.as_str(), self.treatment.as_str()];
        names.extend(self.covariates.iter().map(String::as_str));
        names.extend(self.treatment_proxies.iter().map(String::as_str));
        names.extend(self.outcome_proxies.iter().map(String::as_str));
        names.extend(self.hidden.iter().map(String::as_str));
        names
    }

    fn validate(&self) -> Result<()> {
        if self.treatment_proxies.is_empty() {
            return Err(Error::Validation(
                "at least one treatment proxy column (Z) is required".into(),
            ));
        }
        if self.outcome_proxies.is_empty() {
            return Err(Error::Validation(
                "at least one outcome proxy column (W) is required".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in self.all_names() {
            if !seen.insert(name) {
                return Err(Error::Validation(format!(
                    "column '{name}' appears in more than one role"
                )));
            }
        }
        Ok(())
    }
}

/// Immutable rectangular dataset with validated roles.
#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    roles: ColumnRoles,
}

impl Dataset {
    /// Builds a dataset from named columns, validating the full contract:
    /// equal lengths, n >= 1, only finite values, roles present and disjoint,
    /// and a strictly 0/1 treatment column.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>, roles: ColumnRoles) -> Result<Self> {
        roles.validate()?;
        if columns.is_empty() {
            return Err(Error::Validation("dataset has no columns".into()));
        }
        let n = columns[0].1.len();
        if n == 0 {
            return Err(Error::Validation("dataset must have at least one row".into()));
        }
        let mut names = Vec::with_capacity(columns.len());
        let mut data = Vec::with_capacity(columns.len());
        let mut index = HashMap::with_capacity(columns.len());
        for (name, col) in columns {
            if col.len() != n {
                return Err(Error::Validation(format!(
                    "column '{name}' has {} rows, expected {n}",
                    col.len()
                )));
            }
            for (i, v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "column '{name}' has a non-finite value at data row {}",
                        i + 1
                    )));
                }
            }
            if index.insert(name.clone(), data.len()).is_some() {
                return Err(Error::Validation(format!("duplicate column '{name}'")));
            }
            names.push(name);
            data.push(col);
        }
        for role_name in roles.all_names() {
            if !index.contains_key(role_name) {
                return Err(Error::MissingColumn(role_name.to_string()));
            }
        }
        let treatment = &data[index[&roles.treatment]];
        for (i, a) in treatment.iter().enumerate() {
            if *a != 0.0 && *a != 1.0 {
                return Err(Error::Validation(format!(
                    "treatment column '{}' must be 0 or 1, found {a} at data row {}",
                    roles.treatment,
                    i + 1
                )));
            }
        }
        Ok(Dataset {
            n,
            names,
            columns: data,
            index,
            roles,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn roles(&self) -> &ColumnRoles {
        &self.roles
    }

    /// Column names in storage order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Column by name.
    pub fn col(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.columns[i].as_slice())
    }

    /// Storage index of a column, for hot loops that pre-resolve names.
    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Column by storage index.
    pub fn col_at(&self, idx: usize) -> &[f64] {
        &self.columns[idx]
    }

    #[inline]
    pub fn value(&self, col_idx: usize, row: usize) -> f64 {
        self.columns[col_idx][row]
    }

    pub fn outcome(&self) -> &[f64] {
        self.col(&self.roles.outcome).expect("validated role")
    }

    pub fn treatment(&self) -> &[f64] {
        self.col(&self.roles.treatment).expect("validated role")
    }

    /// New dataset containing the given rows (with repetition allowed), in
    /// the given order. Used by the bootstrap and permutation tests.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .names
            .iter()
            .zip(&self.columns)
            .map(|(name, col)| {
                let taken: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
                (name.clone(), taken)
            })
            .collect();
        Dataset::from_columns(columns, self.roles.clone()).expect("row subset of valid data")
    }
}

/// Reads a CSV file (RFC-4180, mandatory header row, '.' decimal separator)
/// and validates it against `roles`.
pub fn read_csv<P: AsRef<Path>>(path: P, roles: ColumnRoles) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let header_set: HashSet<&str> = headers.iter().map(String::as_str).collect();
    for role_name in roles.all_names() {
        if !header_set.contains(role_name) {
            return Err(Error::MissingColumn(role_name.to_string()));
        }
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: row_idx + 1,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (col_idx, field) in record.iter().enumerate() {
            let parsed: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row: row_idx + 1,
                column: headers[col_idx].clone(),
                message: format!("cannot parse '{field}' as a number"),
            })?;
            if !parsed.is_finite() {
                return Err(Error::Parse {
                    row: row_idx + 1,
                    column: headers[col_idx].clone(),
                    message: format!("non-finite value '{field}'"),
                });
            }
            columns[col_idx].push(parsed);
        }
    }
    if columns.iter().all(|c| c.is_empty()) {
        return Err(Error::Validation("CSV file contains no data rows".into()));
    }
    Dataset::from_columns(headers.into_iter().zip(columns).collect(), roles)
}

/// Writes a dataset as CSV. Values are written in the shortest decimal form
/// that parses back to the identical f64 bit pattern, so a read of the
/// written file reproduces the dataset exactly.
pub fn write_csv<P: AsRef<Path>>(data: &Dataset, path: P, include_hidden: bool) -> Result<()> {
    let hidden: HashSet<&str> = data.roles.hidden.iter().map(String::as_str).collect();
    let keep: Vec<usize> = (0..data.names.len())
        .filter(|&i| include_hidden || !hidden.contains(data.names[i].as_str()))
        .collect();
    let file = std::fs::File::create(path.as_ref())?;
    let mut out = std::io::BufWriter::new(file);
    let header: Vec<&str> = keep.iter().map(|&i| data.names[i].as_str()).collect();
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for row in 0..data.n {
        line.clear();
        for (k, &i) in keep.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&format!("{}", data.columns[i][row]));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles() -> ColumnRoles {
        ColumnRoles {
            outcome: "Y".into(),
            treatment: "A".into(),
            covariates: vec!["X1".into()],
            treatment_proxies: vec!["Z1".into()],
            outcome_proxies: vec!["W1".into()],
            hidden: vec![],
        }
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_minimal_well_formed_file() {
        let f = write_temp("Y,A,X1,Z1,W1\n1.5,0,0.1,0.2,0.3\n2.5,1,0.4,0.5,0.6\n3.5,0,0.7,0.8,0.9\n");
        let d = read_csv(f.path(), roles()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.outcome(), &[1.5, 2.5, 3.5]);
        assert_eq!(d.treatment(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_non_binary_treatment_citing_row() {
        let f = write_temp("Y,A,X1,Z1,W1\n1.0,0,0,0,0\n2.0,2,0,0,0\n3.0,1,0,0,0\n");
        let err = read_csv(f.path(), roles()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "message was: {msg}");
        assert!(msg.contains("0 or 1"), "message was: {msg}");
    }

    #[test]
    fn rejects_missing_role_column_by_name() {
        let f = write_temp("Y,A,X1,Z1\n1.0,0,0,0\n");
        let err = read_csv(f.path(), roles()).unwrap_err();
        match err {
            Error::MissingColumn(name) => assert_eq!(name, "W1"),
            other => panic!("expected MissingColumn, got {other}"),
        }
    }

    #[test]
    fn rejects_unparseable_cell_with_row_index() {
        let f = write_temp("Y,A,X1,Z1,W1\n1.0,0,0,0,0\n1.0,1,abc,0,0\n");
        let err = read_csv(f.path(), roles()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "X1");
            }
            other => panic!("expected Parse, got {other}"),
        }
    }

    #[test]
    fn write_has_header_plus_one_line_per_row() {
        let d = Dataset::from_columns(
            vec![
                ("Y".into(), vec![1.0, 2.0, 3.0]),
                ("A".into(), vec![0.0, 1.0, 0.0]),
                ("X1".into(), vec![0.0, 0.0, 0.0]),
                ("Z1".into(), vec![0.0, 0.0, 0.0]),
                ("W1".into(), vec![0.0, 0.0, 0.0]),
            ],
            roles(),
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&d, f.path(), true).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn hidden_columns_dropped_when_excluded() {
        let mut r = roles();
        r.hidden = vec!["U".into()];
        let d = Dataset::from_columns(
            vec![
                ("Y".into(), vec![1.0]),
                ("A".into(), vec![0.0]),
                ("X1".into(), vec![0.0]),
                ("Z1".into(), vec![0.0]),
                ("W1".into(), vec![0.0]),
                ("U".into(), vec![9.0]),
            ],
            r,
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&d, f.path(), false).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert!(!text.contains('U'));
        let f2 = tempfile::NamedTempFile::new().unwrap();
        write_csv(&d, f2.path(), true).unwrap();
        assert!(std::fs::read_to_string(f2.path()).unwrap().starts_with("Y,A,X1,Z1,W1,U"));
    }

    #[test]
    fn rejects_overlapping_roles() {
        let mut r = roles();
        r.outcome_proxies = vec!["Z1".into()];
        let d = Dataset::from_columns(
            vec![
                ("Y".into(), vec![1.0]),
                ("A".into(), vec![0.0]),
                ("X1".into(), vec![0.0]),
                ("Z1".into(), vec![0.0]),
            ],
            r,
        );
        assert!(d.is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let d = Dataset::from_columns(
            vec![
                ("Y".into(), vec![1.0, f64::NAN]),
                ("A".into(), vec![0.0, 1.0]),
                ("X1".into(), vec![0.0, 0.0]),
                ("Z1".into(), vec![0.0, 0.0]),
                ("W1".into(), vec![0.0, 0.0]),
            ],
            roles(),
        );
        assert!(d.is_err());
    }

    #[test]
    fn select_rows_gathers_in_order() {
        let d = Dataset::from_columns(
            vec![
                ("Y".into(), vec![1.0, 2.0, 3.0]),
                ("A".into(), vec![0.0, 1.0, 0.0]),
                ("X1".into(), vec![10.0, 20.0, 30.0]),
                ("Z1".into(), vec![0.0, 0.0, 0.0]),
                ("W1".into(), vec![0.0, 0.0, 0.0]),
            ],
            roles(),
        )
        .unwrap();
        let s = d.select_rows(&[2, 0, 2]);
        assert_eq!(s.outcome(), &[3.0, 1.0, 3.0]);
        assert_eq!(s.col("X1").unwrap(), &[30.0, 10.0, 30.0]);
    }
}
