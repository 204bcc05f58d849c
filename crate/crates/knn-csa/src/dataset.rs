//! Data model, CSV ingestion/emission, and source-statistics
//! standardization.
//!
//! CSV schema: UTF-8, comma-separated, header row naming the covariate
//! columns `x0..x{d-1}` followed by an optional label column `y`. Emitted
//! files use the same schema (the label column may be renamed, e.g.
//! `y_pseudo` for adapted output). Numbers are written in shortest
//! round-trip decimal form so that write-then-read reproduces values
//! bit-exactly.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense row-major matrix of real covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    /// Build from a flat row-major buffer.
    pub fn from_vec(data: Vec<f64>, rows: usize, cols: usize) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "buffer length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { data, rows, cols })
    }

    /// Build from per-row slices; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {} has {} columns, expected {}",
                    i,
                    r.len(),
                    cols
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            data,
            rows: rows.len(),
            cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A supervised label: a real value for regression or a categorical token
/// for classification.
#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Real(f64),
    Class(String),
}

impl Label {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Label::Real(v) => Some(*v),
            Label::Class(_) => None,
        }
    }

    pub fn is_real(&self) -> bool {
        matches!(self, Label::Real(_))
    }

    fn same_tag(&self, other: &Label) -> bool {
        matches!(
            (self, other),
            (Label::Real(_), Label::Real(_)) | (Label::Class(_), Label::Class(_))
        )
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Real(v) => write!(f, "{v}"),
            Label::Class(s) => write!(f, "{s}"),
        }
    }
}

/// The labeled source sample: an n×d covariate matrix plus n labels.
///
/// All covariate entries are finite and all labels share one tag.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    covariates: Matrix,
    labels: Vec<Label>,
}

impl LabeledDataset {
    pub fn new(covariates: Matrix, labels: Vec<Label>) -> Result<LabeledDataset> {
        if covariates.rows() == 0 {
            return Err(Error::Data("labeled dataset must contain at least one row".into()));
        }
        Self::from_parts(covariates, labels)
    }

    /// Like [`LabeledDataset::new`] but permits zero rows. Pseudo-labeling an
    /// empty target set legitimately produces an empty labeled set.
    pub(crate) fn from_parts(covariates: Matrix, labels: Vec<Label>) -> Result<LabeledDataset> {
        if covariates.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} covariate rows but {} labels",
                covariates.rows(),
                labels.len()
            )));
        }
        if !covariates.is_finite() {
            return Err(Error::Data("non-finite covariate entry".into()));
        }
        for w in labels.windows(2) {
            if !w[0].same_tag(&w[1]) {
                return Err(Error::Schema(
                    "labels mix real and categorical values".into(),
                ));
            }
        }
        if let Some(bad) = labels.iter().find_map(|l| match l {
            Label::Real(v) if !v.is_finite() => Some(*v),
            _ => None,
        }) {
            return Err(Error::Data(format!("non-finite label value {bad}")));
        }
        Ok(LabeledDataset { covariates, labels })
    }

    pub fn n(&self) -> usize {
        self.covariates.rows()
    }

    pub fn d(&self) -> usize {
        self.covariates.cols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn covariate(&self, i: usize) -> &[f64] {
        self.covariates.row(i)
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &Label {
        &self.labels[i]
    }
}

/// The unlabeled target sample: an m×d covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    covariates: Matrix,
}

impl UnlabeledDataset {
    pub fn new(covariates: Matrix) -> Result<UnlabeledDataset> {
        if !covariates.is_finite() {
            return Err(Error::Data("non-finite covariate entry".into()));
        }
        Ok(UnlabeledDataset { covariates })
    }

    pub fn m(&self) -> usize {
        self.covariates.rows()
    }

    pub fn d(&self) -> usize {
        self.covariates.cols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn covariate(&self, i: usize) -> &[f64] {
        self.covariates.row(i)
    }
}

fn expected_header(d: usize, label: Option<&str>) -> Vec<String> {
    let mut h: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    if let Some(name) = label {
        h.push(name.to_string());
    }
    h
}

fn validate_header(header: &csv::StringRecord, has_labels: bool) -> Result<usize> {
    let cols: Vec<&str> = header.iter().collect();
    let d = if has_labels {
        if cols.last() != Some(&"y") {
            return Err(Error::Schema(format!(
                "expected final column `y`, found {:?}",
                cols.last()
            )));
        }
        cols.len().saturating_sub(1)
    } else {
        cols.len()
    };
    if d == 0 {
        return Err(Error::Schema("no covariate columns".into()));
    }
    for (j, name) in cols.iter().take(d).enumerate() {
        let want = format!("x{j}");
        if *name != want {
            return Err(Error::Schema(format!(
                "covariate column {j} is named `{name}`, expected `{want}`"
            )));
        }
    }
    Ok(d)
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_covariate(field: &str, line: u64) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse `{field}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Data(format!("non-finite value `{field}` at line {line}")));
    }
    Ok(v)
}

fn parse_label(field: &str, line: u64) -> Result<Label> {
    let token = field.trim();
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Label::Real(v)),
        Ok(_) => Err(Error::Data(format!(
            "non-finite label `{token}` at line {line}"
        ))),
        Err(_) => {
            if token.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "empty label field".into(),
                });
            }
            Ok(Label::Class(token.to_string()))
        }
    }
}

/// Load a labeled dataset from `path` (columns `x0..x{d-1},y`).
pub fn load_labeled_csv<P: AsRef<Path>>(path: P) -> Result<LabeledDataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let d = validate_header(reader.headers()?, true)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != d + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        for field in record.iter().take(d) {
            data.push(parse_covariate(field, line)?);
        }
        labels.push(parse_label(&record[d], line)?);
    }
    let rows = labels.len();
    LabeledDataset::new(Matrix::from_vec(data, rows, d)?, labels)
}

/// Load an unlabeled dataset from `path` (columns `x0..x{d-1}`).
pub fn load_unlabeled_csv<P: AsRef<Path>>(path: P) -> Result<UnlabeledDataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let d = validate_header(reader.headers()?, false)?;
    let mut data = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != d {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", d, record.len()),
            });
        }
        for field in record.iter() {
            data.push(parse_covariate(field, line)?);
        }
        rows += 1;
    }
    UnlabeledDataset::new(Matrix::from_vec(data, rows, d)?)
}

fn write_header<W: Write>(out: &mut W, d: usize, label: Option<&str>) -> Result<()> {
    writeln!(out, "{}", expected_header(d, label).join(","))?;
    Ok(())
}

/// Write a labeled dataset; `label_column` names the final column
/// (typically `y`, or `y_pseudo` for adapted output).
pub fn write_labeled_csv<P: AsRef<Path>>(
    dataset: &LabeledDataset,
    path: P,
    label_column: &str,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_header(&mut out, dataset.d(), Some(label_column))?;
    for i in 0..dataset.n() {
        for v in dataset.covariate(i) {
            write!(out, "{v},")?;
        }
        writeln!(out, "{}", dataset.label(i))?;
    }
    out.flush()?;
    Ok(())
}

/// Write an unlabeled dataset (covariate columns only).
pub fn write_unlabeled_csv<P: AsRef<Path>>(dataset: &UnlabeledDataset, path: P) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_header(&mut out, dataset.d(), None)?;
    for i in 0..dataset.m() {
        let row = dataset.covariate(i);
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Centering/scaling parameters fitted on the source sample.
///
/// Scales are per-dimension population standard deviations (divide by n);
/// zero-variance dimensions get scale 1 and are recorded in
/// `constant_dims`. Label statistics are present only for real-valued
/// labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub label_mean: Option<f64>,
    pub label_scale: Option<f64>,
    pub constant_dims: Vec<usize>,
}

impl StandardizationParams {
    /// Fit means and population standard deviations on the source sample.
    pub fn fit(source: &LabeledDataset) -> StandardizationParams {
        let n = source.n();
        let d = source.d();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (j, v) in source.covariate(i).iter().enumerate() {
                mean[j] += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for (j, v) in source.covariate(i).iter().enumerate() {
                let c = v - mean[j];
                var[j] += c * c;
            }
        }
        let mut constant_dims = Vec::new();
        let scale: Vec<f64> = var
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let sd = (v / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    constant_dims.push(j);
                    1.0
                }
            })
            .collect();

        let (label_mean, label_scale) = if source.labels().iter().all(Label::is_real) {
            let ys: Vec<f64> = source.labels().iter().filter_map(Label::as_real).collect();
            let lm = ys.iter().sum::<f64>() / n as f64;
            let lv = ys.iter().map(|y| (y - lm) * (y - lm)).sum::<f64>() / n as f64;
            let ls = lv.sqrt();
            (Some(lm), Some(if ls > 0.0 { ls } else { 1.0 }))
        } else {
            (None, None)
        };

        StandardizationParams {
            mean,
            scale,
            label_mean,
            label_scale,
            constant_dims,
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.mean.len() {
            return Err(Error::Dimension(format!(
                "data has {} dimensions but params were fitted on {}",
                d,
                self.mean.len()
            )));
        }
        Ok(())
    }

    fn map_matrix(&self, m: &Matrix, f: impl Fn(f64, f64, f64) -> f64) -> Result<Matrix> {
        self.check_dim(m.cols())?;
        let mut data = Vec::with_capacity(m.rows() * m.cols());
        for i in 0..m.rows() {
            for (j, v) in m.row(i).iter().enumerate() {
                data.push(f(*v, self.mean[j], self.scale[j]));
            }
        }
        Matrix::from_vec(data, m.rows(), m.cols())
    }

    fn map_labels(&self, labels: &[Label], f: impl Fn(f64, f64, f64) -> f64) -> Vec<Label> {
        match (self.label_mean, self.label_scale) {
            (Some(lm), Some(ls)) => labels
                .iter()
                .map(|l| match l {
                    Label::Real(v) => Label::Real(f(*v, lm, ls)),
                    other => other.clone(),
                })
                .collect(),
            _ => labels.to_vec(),
        }
    }

    /// Standardize a labeled dataset (covariates and, for regression,
    /// labels) with these source-derived parameters.
    pub fn transform_labeled(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        let cov = self.map_matrix(ds.covariates(), |v, m, s| (v - m) / s)?;
        let labels = self.map_labels(ds.labels(), |v, m, s| (v - m) / s);
        LabeledDataset::from_parts(cov, labels)
    }

    /// Standardize target covariates with these source-derived parameters.
    pub fn transform_unlabeled(&self, ds: &UnlabeledDataset) -> Result<UnlabeledDataset> {
        UnlabeledDataset::new(self.map_matrix(ds.covariates(), |v, m, s| (v - m) / s)?)
    }

    /// Map a standardized labeled dataset back to the original scale.
    pub fn invert_labeled(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        let cov = self.map_matrix(ds.covariates(), |v, m, s| v * s + m)?;
        let labels = self.map_labels(ds.labels(), |v, m, s| v * s + m);
        LabeledDataset::from_parts(cov, labels)
    }

    /// Map standardized target covariates back to the original scale.
    pub fn invert_unlabeled(&self, ds: &UnlabeledDataset) -> Result<UnlabeledDataset> {
        UnlabeledDataset::new(self.map_matrix(ds.covariates(), |v, m, s| v * s + m)?)
    }

    /// Map a single standardized label value back to the original scale.
    pub fn invert_label_value(&self, v: f64) -> f64 {
        match (self.label_mean, self.label_scale) {
            (Some(m), Some(s)) => v * s + m,
            _ => v,
        }
    }
}

/// Standardize source and targets together using statistics of the source
/// sample only.
pub fn standardize(
    source: &LabeledDataset,
    targets: &UnlabeledDataset,
) -> Result<(LabeledDataset, UnlabeledDataset, StandardizationParams)> {
    if source.d() != targets.d() {
        return Err(Error::Dimension(format!(
            "source has d={} but targets have d={}",
            source.d(),
            targets.d()
        )));
    }
    let params = StandardizationParams::fit(source);
    let s = params.transform_labeled(source)?;
    let t = params.transform_unlabeled(targets)?;
    Ok((s, t, params))
}
