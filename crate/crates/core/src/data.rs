//! Observational datasets and the stacked factual/counterfactual design.

use std::path::Path;

use faer::Mat;

use crate::error::{Error, Result};

/// Features `X` (n×d), binary treatment `R` and outcome `Y` for n units.
///
/// Construction validates the invariants once; the type is immutable afterwards.
#[derive(Debug, Clone)]
pub struct ObservationalDataset {
    x: Mat<f64>,
    treatment: Vec<bool>,
    outcome: Vec<f64>,
    feature_names: Vec<String>,
}

impl ObservationalDataset {
    pub fn new(x: Mat<f64>, treatment: Vec<bool>, outcome: Vec<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, treatment, outcome, names)
    }

    pub fn with_names(
        x: Mat<f64>,
        treatment: Vec<bool>,
        outcome: Vec<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 units, got {n}")));
        }
        if x.ncols() < 1 {
            return Err(Error::InvalidData("need at least one feature column".into()));
        }
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::InvalidData(format!(
                "length mismatch: X has {n} rows, R has {}, Y has {}",
                treatment.len(),
                outcome.len()
            )));
        }
        if feature_names.len() != x.ncols() {
            return Err(Error::InvalidData("feature name count does not match X".into()));
        }
        for j in 0..x.ncols() {
            for i in 0..n {
                if !x[(i, j)].is_finite() {
                    return Err(Error::InvalidData(format!(
                        "non-finite feature value at row {}, column {}",
                        i + 1,
                        feature_names[j]
                    )));
                }
            }
        }
        if let Some(i) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite outcome at row {}", i + 1)));
        }
        let treated = treatment.iter().filter(|&&r| r).count();
        if treated == 0 {
            return Err(Error::InvalidData("no treated units".into()));
        }
        if treated == n {
            return Err(Error::InvalidData("no control units".into()));
        }
        Ok(Self {
            x,
            treatment,
            outcome,
            feature_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Mat<f64> {
        &self.x
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    /// Treatment indicator as 0.0 / 1.0.
    pub fn r(&self, i: usize) -> f64 {
        if self.treatment[i] {
            1.0
        } else {
            0.0
        }
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&r| r).count()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.d()).map(|j| self.x[(i, j)]).collect()
    }

    /// Writes the dataset as CSV with the feature columns followed by
    /// `treatment` and `outcome`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.extend(["treatment", "outcome"]);
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = (0..self.d()).map(|j| format_float(self.x[(i, j)])).collect();
            rec.push(if self.treatment[i] { "1" } else { "0" }.to_string());
            rec.push(format_float(self.outcome[i]));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Column mapping for [`load_dataset`].
///
/// When `features` is `None`, every column other than the treatment and outcome
/// columns is a feature, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub treatment: String,
    pub outcome: String,
    pub features: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            treatment: "treatment".into(),
            outcome: "outcome".into(),
            features: None,
        }
    }
}

/// Raw table of named numeric columns, shared by the dataset loader and the
/// covariate-only loader used for semi-synthetic outcomes.
pub(crate) struct NumericTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub(crate) fn read_table(path: &Path) -> Result<NumericTable> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(NumericTable { header, rows })
}

impl NumericTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidData(format!("column `{name}` not found in header")))
    }

    pub fn number(&self, row: usize, col: usize) -> Result<f64> {
        let cell = self.rows[row].get(col).map(String::as_str).unwrap_or("");
        if cell.is_empty() {
            return Err(Error::InvalidData(format!(
                "missing value at row {}, column {}",
                row + 1,
                self.header[col]
            )));
        }
        let v: f64 = cell.parse().map_err(|_| {
            Error::InvalidData(format!(
                "non-numeric value `{cell}` at row {}, column {}",
                row + 1,
                self.header[col]
            ))
        })?;
        if !v.is_finite() {
            return Err(Error::InvalidData(format!(
                "non-finite value at row {}, column {}",
                row + 1,
                self.header[col]
            )));
        }
        Ok(v)
    }

    pub fn binary(&self, row: usize, col: usize) -> Result<bool> {
        let v = self.number(row, col)?;
        if v == 0.0 {
            Ok(false)
        } else if v == 1.0 {
            Ok(true)
        } else {
            Err(Error::InvalidData(format!(
                "treatment must be 0 or 1, found {v} at row {}, column {}",
                row + 1,
                self.header[col]
            )))
        }
    }

    pub fn matrix(&self, cols: &[usize]) -> Result<Mat<f64>> {
        let mut x = Mat::zeros(self.rows.len(), cols.len());
        for i in 0..self.rows.len() {
            for (j, &c) in cols.iter().enumerate() {
                x[(i, j)] = self.number(i, c)?;
            }
        }
        Ok(x)
    }
}

/// Reads a CSV with a header row into a validated dataset.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<ObservationalDataset> {
    let table = read_table(path)?;
    if table.rows.len() < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 data rows, found {}",
            table.rows.len()
        )));
    }
    let t_col = table.column_index(&schema.treatment)?;
    let y_col = table.column_index(&schema.outcome)?;
    let f_cols: Vec<usize> = match &schema.features {
        Some(names) => names
            .iter()
            .map(|name| table.column_index(name))
            .collect::<Result<_>>()?,
        None => (0..table.header.len()).filter(|&c| c != t_col && c != y_col).collect(),
    };
    if f_cols.is_empty() {
        return Err(Error::InvalidData("no feature columns".into()));
    }
    let x = table.matrix(&f_cols)?;
    let treatment = (0..table.rows.len())
        .map(|i| table.binary(i, t_col))
        .collect::<Result<Vec<_>>>()?;
    let outcome = (0..table.rows.len())
        .map(|i| table.number(i, y_col))
        .collect::<Result<Vec<_>>>()?;
    let names = f_cols.iter().map(|&c| table.header[c].clone()).collect();
    ObservationalDataset::with_names(x, treatment, outcome, names)
}

/// Factual inputs `Z = [X | R]` and the stacked `Z* = [X | R ; X | 1-R]`.
#[derive(Debug, Clone)]
pub struct StackedDesign {
    pub z: Mat<f64>,
    pub z_star: Mat<f64>,
}

impl StackedDesign {
    pub fn n(&self) -> usize {
        self.z.nrows()
    }
}

pub fn stack_design(data: &ObservationalDataset) -> StackedDesign {
    stack_raw(data.x(), data.treatment())
}

/// Same as [`stack_design`] without requiring a validated dataset.
pub fn stack_raw(x: &Mat<f64>, treatment: &[bool]) -> StackedDesign {
    let (n, d) = (x.nrows(), x.ncols());
    let r = |i: usize| if treatment[i] { 1.0 } else { 0.0 };
    let z = Mat::from_fn(n, d + 1, |i, j| if j < d { x[(i, j)] } else { r(i) });
    let z_star = Mat::from_fn(2 * n, d + 1, |i, j| {
        let unit = i % n;
        if j < d {
            x[(unit, j)]
        } else if i < n {
            r(unit)
        } else {
            1.0 - r(unit)
        }
    });
    StackedDesign { z, z_star }
}
