use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

use super::output::csv_error;

/// Column roles for an external binary-choice file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularSchema {
    pub label: String,
    /// Raw value of the label column meaning "alternative 1 chosen".
    pub positive_label: String,
    pub negative_label: String,
    /// Continuous columns, standardized with training-split moments.
    pub features: Vec<String>,
    /// Categorical columns, one-hot encoded over their sorted distinct values.
    pub categorical: Vec<String>,
    /// Omit the first (smallest) level of each categorical column.
    pub drop_first: bool,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TabularSchema {
    fn default() -> Self {
        Self {
            label: "choice".into(),
            positive_label: "1".into(),
            negative_label: "0".into(),
            features: Vec::new(),
            categorical: Vec::new(),
            drop_first: false,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TabularSchema {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: TabularSchema =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() && self.categorical.is_empty() {
            return Err(Error::Config("schema lists no feature columns".into()));
        }
        if self.positive_label == self.negative_label {
            return Err(Error::Config("positive and negative labels coincide".into()));
        }
        let mut seen = BTreeSet::new();
        for c in self.features.iter().chain(&self.categorical) {
            if c == &self.label {
                return Err(Error::Config(format!("label column {c} is also a feature")));
            }
            if !seen.insert(c) {
                return Err(Error::Config(format!("feature column {c} is listed twice")));
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction must lie in [0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Train/test split of an external file with the fitted preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    /// Model input names: continuous columns, then `column=level` dummies.
    pub feature_names: Vec<String>,
    /// Training-split mean and standard deviation of each continuous column.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

struct RawRow {
    label: u8,
    numeric: Vec<f64>,
    levels: Vec<String>,
}

/// Reads a CSV with a header row and applies `schema`.
///
/// Rows are split by a shuffled permutation seeded by `schema.seed`; the
/// test split gets `round(test_fraction * n)` rows while the training split
/// keeps at least one.
pub fn load_tabular(path: impl AsRef<Path>, schema: &TabularSchema) -> Result<TabularData> {
    let path = path.as_ref();
    schema.validate()?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| parse_err(1, format!("missing column {name:?}")))
    };
    let label_col = col(&schema.label)?;
    let num_cols: Vec<usize> = schema.features.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let cat_cols: Vec<usize> = schema.categorical.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let lab = rec.get(label_col).unwrap_or("");
        let label = if lab == schema.positive_label {
            1
        } else if lab == schema.negative_label {
            0
        } else {
            return Err(parse_err(
                line,
                format!(
                    "label {lab:?} in column {:?} is neither {:?} nor {:?}",
                    schema.label, schema.positive_label, schema.negative_label
                ),
            ));
        };
        let mut numeric = Vec::with_capacity(num_cols.len());
        for (&c, name) in num_cols.iter().zip(&schema.features) {
            let cell = rec.get(c).unwrap_or("");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => numeric.push(v),
                _ => return Err(parse_err(line, format!("column {name:?}: cannot parse {cell:?} as a number"))),
            }
        }
        let mut levels = Vec::with_capacity(cat_cols.len());
        for (&c, name) in cat_cols.iter().zip(&schema.categorical) {
            let cell = rec.get(c).unwrap_or("");
            if cell.is_empty() {
                return Err(parse_err(line, format!("column {name:?} is empty")));
            }
            levels.push(cell.to_string());
        }
        raw.push(RawRow {
            label,
            numeric,
            levels,
        });
    }
    let n = raw.len();
    if n == 0 {
        return Err(Error::Size(format!("{}: no data rows", path.display())));
    }

    // Category levels over the whole file: an encoding choice only, no labels involved.
    let level_sets: Vec<Vec<String>> = (0..cat_cols.len())
        .map(|k| {
            let set: BTreeSet<&String> = raw.iter().map(|r| &r.levels[k]).collect();
            let mut v: Vec<String> = set.into_iter().cloned().collect();
            if schema.drop_first && !v.is_empty() {
                v.remove(0);
            }
            v
        })
        .collect();

    let mut n_test = (schema.test_fraction * n as f64).round() as usize;
    if n_test >= n {
        n_test = n - 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(schema.seed).shuffle(&mut order);
    let (test_idx, train_idx) = order.split_at(n_test);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let p = num_cols.len();
    let mut means = vec![0.0; p];
    let mut stds = vec![0.0; p];
    for j in 0..p {
        let m = train_idx.iter().map(|&i| raw[i].numeric[j]).sum::<f64>() / train_idx.len() as f64;
        let var = train_idx
            .iter()
            .map(|&i| (raw[i].numeric[j] - m).powi(2))
            .sum::<f64>()
            / train_idx.len() as f64;
        means[j] = m;
        // A constant column is only centered.
        stds[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    let mut feature_names: Vec<String> = schema.features.clone();
    for (name, levels) in schema.categorical.iter().zip(&level_sets) {
        feature_names.extend(levels.iter().map(|l| format!("{name}={l}")));
    }
    let width = feature_names.len();
    if width == 0 {
        return Err(Error::Config("encoding produced no model inputs".into()));
    }
    let build = |idx: &[usize]| -> Result<Dataset> {
        let mut x = Matrix::zeros(idx.len(), width);
        let mut y = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            let row = x.row_mut(r);
            for j in 0..p {
                row[j] = (raw[i].numeric[j] - means[j]) / stds[j];
            }
            let mut offset = p;
            for (k, levels) in level_sets.iter().enumerate() {
                if let Ok(pos) = levels.binary_search(&raw[i].levels[k]) {
                    row[offset + pos] = 1.0;
                }
                offset += levels.len();
            }
            y.push(raw[i].label);
        }
        Dataset::new(x, y, None)
    };
    Ok(TabularData {
        train: build(&train_idx)?,
        test: if test_idx.is_empty() { None } else { Some(build(&test_idx)?) },
        feature_names,
        means,
        stds,
    })
}
