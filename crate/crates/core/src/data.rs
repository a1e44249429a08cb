//! Dataset abstraction, training configuration and CSV ingestion.
//!
//! Predictors are stored column-major; every column has one value per row
//! and row order is exactly the file order. A dataset is immutable once
//! built, so it can be shared across worker threads freely.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column roles for reading a CSV file.
///
/// When `predictors` is `None`, every column not claimed by another role
/// becomes a predictor, in header order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsvSchema {
    pub response: Option<String>,
    pub predictors: Option<Vec<String>>,
    pub weight: Option<String>,
    pub id: Option<String>,
    pub stratum: Option<String>,
}

impl CsvSchema {
    pub fn with_response(response: impl Into<String>) -> Self {
        CsvSchema {
            response: Some(response.into()),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    predictor_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    response: Option<Vec<f64>>,
    weights: Vec<f64>,
    row_ids: Vec<String>,
    stratum: Option<Vec<String>>,
    /// Source role names, kept so a dataset can be written back out.
    roles: CsvSchema,
    has_weight_column: bool,
}

/// Equal data under equal effective column names.
impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.predictor_names == other.predictor_names
            && self.columns == other.columns
            && self.response == other.response
            && self.weights == other.weights
            && self.row_ids == other.row_ids
            && self.stratum == other.stratum
            && self.schema() == other.schema()
    }
}

impl Dataset {
    /// Builds a dataset from column-major predictors. Weights default to 1
    /// and row ids to the 1-based row ordinal.
    pub fn new(
        predictor_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        response: Option<Vec<f64>>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        let row_ids = (1..=n).map(|i| i.to_string()).collect();
        Self::from_parts(predictor_names, columns, response, weights, row_ids, None)
    }

    pub fn from_parts(
        predictor_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        response: Option<Vec<f64>>,
        weights: Option<Vec<f64>>,
        row_ids: Vec<String>,
        stratum: Option<Vec<String>>,
    ) -> Result<Self> {
        if predictor_names.is_empty() || columns.is_empty() {
            return Err(Error::Empty("dataset needs at least one predictor"));
        }
        if predictor_names.len() != columns.len() {
            return Err(Error::LengthMismatch {
                what: "predictor names vs columns",
                left: predictor_names.len(),
                right: columns.len(),
            });
        }
        check_unique(&predictor_names)?;
        let n = columns[0].len();
        if n == 0 {
            return Err(Error::Empty("dataset needs at least one row"));
        }
        for col in &columns {
            check_len("predictor column", col.len(), n)?;
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("predictor column"));
            }
        }
        if let Some(y) = &response {
            check_len("response", y.len(), n)?;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("response"));
            }
        }
        let has_weight_column = weights.is_some();
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        check_len("weights", weights.len(), n)?;
        for (i, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::NonPositiveWeight {
                    row: i + 1,
                    value: w,
                });
            }
        }
        check_len("row ids", row_ids.len(), n)?;
        if let Some(s) = &stratum {
            check_len("stratum", s.len(), n)?;
        }
        Ok(Dataset {
            predictor_names,
            columns,
            response,
            weights,
            row_ids,
            stratum,
            roles: CsvSchema::default(),
            has_weight_column,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.weights.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.columns.len()
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.predictor_names
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.predictor_names.iter().position(|n| n == name)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn response(&self) -> Option<&[f64]> {
        self.response.as_deref()
    }

    pub fn require_response(&self) -> Result<&[f64]> {
        self.response.as_deref().ok_or(Error::MissingResponse)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn stratum(&self) -> Option<&[String]> {
        self.stratum.as_deref()
    }

    /// Returns the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            predictor_names: self.predictor_names.clone(),
            columns: self.columns.iter().map(|c| pick(c)).collect(),
            response: self.response.as_deref().map(pick),
            weights: pick(&self.weights),
            row_ids: indices.iter().map(|&i| self.row_ids[i].clone()).collect(),
            stratum: self
                .stratum
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i].clone()).collect()),
            roles: self.roles.clone(),
            has_weight_column: self.has_weight_column,
        }
    }

    /// Copy of the dataset with predictor `j` replaced.
    pub fn with_column(&self, j: usize, values: Vec<f64>) -> Result<Dataset> {
        check_len("replacement column", values.len(), self.n_rows())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("replacement column"));
        }
        let mut out = self.clone();
        out.columns[j] = values;
        Ok(out)
    }

    /// The role mapping that reproduces this dataset from its saved CSV.
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            response: self
                .response
                .as_ref()
                .map(|_| self.roles.response.clone().unwrap_or_else(|| "y".into())),
            predictors: Some(self.predictor_names.clone()),
            weight: self
                .has_weight_column
                .then(|| self.roles.weight.clone().unwrap_or_else(|| "weight".into())),
            id: Some(self.roles.id.clone().unwrap_or_else(|| "row_id".into())),
            stratum: self.stratum.as_ref().map(|_| {
                self.roles
                    .stratum
                    .clone()
                    .unwrap_or_else(|| "stratum".into())
            }),
        }
    }

    /// Writes the dataset as CSV. Floats use the shortest representation that
    /// parses back to the same bits.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<CsvSchema> {
        let path = path.as_ref();
        let schema = self.schema();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);

        let mut header: Vec<String> = vec![schema.id.clone().unwrap()];
        header.extend(self.predictor_names.iter().cloned());
        header.extend(schema.response.iter().cloned());
        header.extend(schema.weight.iter().cloned());
        header.extend(schema.stratum.iter().cloned());
        check_unique(&header)?;
        w.write_record(&header)?;

        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            record.clear();
            record.push(self.row_ids[i].clone());
            record.extend(self.columns.iter().map(|c| c[i].to_string()));
            if let Some(y) = &self.response {
                record.push(y[i].to_string());
            }
            if self.has_weight_column {
                record.push(self.weights[i].to_string());
            }
            if let Some(s) = &self.stratum {
                record.push(s[i].clone());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(schema)
    }
}

fn check_len(what: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::LengthMismatch {
            what,
            left: got,
            right: want,
        });
    }
    Ok(())
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::DuplicateColumn(n.clone()));
        }
    }
    Ok(())
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Err(Error::MissingValue {
            row,
            column: column.to_string(),
        });
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonNumeric {
            row,
            column: column.to_string(),
            value: s.to_string(),
        }),
    }
}

/// Reads a header-first CSV file into a validated [`Dataset`].
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    check_unique(&header)?;

    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let response_idx = schema.response.as_deref().map(find).transpose()?;
    let weight_idx = schema.weight.as_deref().map(find).transpose()?;
    let id_idx = schema.id.as_deref().map(find).transpose()?;
    let stratum_idx = schema.stratum.as_deref().map(find).transpose()?;

    let claimed: Vec<usize> = [response_idx, weight_idx, id_idx, stratum_idx]
        .into_iter()
        .flatten()
        .collect();
    let predictor_idx: Vec<usize> = match &schema.predictors {
        Some(names) => {
            let idx = names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
            if let Some(&clash) = idx.iter().find(|i| claimed.contains(i)) {
                return Err(Error::InvalidConfig(format!(
                    "column `{}` cannot be both a predictor and another role",
                    header[clash]
                )));
            }
            check_unique(names)?;
            idx
        }
        None => (0..header.len()).filter(|i| !claimed.contains(i)).collect(),
    };
    if predictor_idx.is_empty() {
        return Err(Error::Empty("no predictor columns"));
    }

    let p = predictor_idx.len();
    let mut columns = vec![Vec::new(); p];
    let mut response = response_idx.map(|_| Vec::new());
    let mut weights = weight_idx.map(|_| Vec::new());
    let mut row_ids = Vec::new();
    let mut stratum = stratum_idx.map(|_| Vec::new());

    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        for (col, &i) in columns.iter_mut().zip(&predictor_idx) {
            col.push(parse_number(cell(i), row, &header[i])?);
        }
        if let (Some(y), Some(i)) = (response.as_mut(), response_idx) {
            y.push(parse_number(cell(i), row, &header[i])?);
        }
        if let (Some(w), Some(i)) = (weights.as_mut(), weight_idx) {
            let v = parse_number(cell(i), row, &header[i])?;
            if v <= 0.0 {
                return Err(Error::NonPositiveWeight { row, value: v });
            }
            w.push(v);
        }
        match id_idx {
            Some(i) => row_ids.push(cell(i).to_string()),
            None => row_ids.push(row.to_string()),
        }
        if let (Some(s), Some(i)) = (stratum.as_mut(), stratum_idx) {
            s.push(cell(i).to_string());
        }
    }
    if row_ids.is_empty() {
        return Err(Error::Empty("csv has no data rows"));
    }

    let names = predictor_idx.iter().map(|&i| header[i].clone()).collect();
    let mut ds = Dataset::from_parts(names, columns, response, weights, row_ids, stratum)?;
    ds.roles = CsvSchema {
        response: schema.response.clone(),
        predictors: None,
        weight: schema.weight.clone(),
        id: schema.id.clone(),
        stratum: schema.stratum.clone(),
    };
    Ok(ds)
}

/// Converts a stakeholder cost ratio (cost of underestimating : cost of
/// overestimating) into the asymmetry parameter.
pub fn cost_ratio_to_alpha(under_cost: f64, over_cost: f64) -> Result<f64> {
    for (name, c) in [("under", under_cost), ("over", over_cost)] {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidCost(format!(
                "{name}-estimation cost must be positive and finite, got {c}"
            )));
        }
    }
    Ok(under_cost / (under_cost + over_cost))
}

/// Parses `U:V` into a pair of costs.
pub fn parse_cost_ratio(s: &str) -> Result<(f64, f64)> {
    let (u, v) = s
        .split_once(':')
        .ok_or_else(|| Error::InvalidCost(format!("expected U:V, got `{s}`")))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidCost(format!("expected U:V, got `{s}`")))
    };
    Ok((parse(u)?, parse(v)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub max_trees: usize,
    pub splits_per_tree: usize,
    pub min_node_size: usize,
    pub subsample_fraction: f64,
    pub cv_folds: usize,
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 1;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            learning_rate: 0.001,
            max_trees: 6000,
            splits_per_tree: 10,
            min_node_size: 5,
            subsample_fraction: 0.5,
            cv_folds: 10,
            seed: DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        TrainConfig {
            alpha,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.max_trees < 1 {
            return bad("max_trees must be at least 1".into());
        }
        if self.splits_per_tree < 1 {
            return bad("splits_per_tree must be at least 1".into());
        }
        if self.min_node_size < 1 {
            return bad("min_node_size must be at least 1".into());
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad(format!(
                "subsample fraction must lie in (0, 1], got {}",
                self.subsample_fraction
            ));
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2".into());
        }
        Ok(())
    }

    /// N' = fraction * N rounded to the nearest whole number (halves round
    /// up), kept within 1..=N.
    pub fn subsample_size(&self, n: usize) -> usize {
        let m = (self.subsample_fraction * n as f64).round() as usize;
        m.clamp(1, n.max(1))
    }
}

/// Writes `(iteration, value)` style two-column tables.
pub(crate) fn write_rows<W: Write>(out: W, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io("<table>", e))?;
    Ok(())
}
