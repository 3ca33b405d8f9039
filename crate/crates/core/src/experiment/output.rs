use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dgp::Scenario;
use crate::error::{Error, Result};
use crate::interpret::ProbCurve;

/// Status of a cell that trained and evaluated without error.
pub const STATUS_OK: &str = "ok";

macro_rules! row_values {
    (ints: [$($i:ident),* $(,)?], floats: [$($f:ident),* $(,)?]) => {
        /// Every numeric column of a result row; `None` is written as an empty cell.
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        pub struct RowValues {
            $(pub $i: Option<u64>,)*
            $(pub $f: Option<f64>,)*
        }

        impl RowValues {
            pub const INT_COLUMNS: &'static [&'static str] = &[$(stringify!($i)),*];
            pub const FLOAT_COLUMNS: &'static [&'static str] = &[$(stringify!($f)),*];

            fn to_fields(&self) -> Vec<String> {
                let mut out = Vec::new();
                $(out.push(self.$i.map(|v| v.to_string()).unwrap_or_default());)*
                $(out.push(self.$f.map(format_float).unwrap_or_default());)*
                out
            }

            fn from_fields(fields: &[&str]) -> std::result::Result<Self, String> {
                let mut it = fields.iter();
                Ok(Self {
                    $($i: parse_opt(stringify!($i), it.next())?,)*
                    $($f: parse_opt(stringify!($f), it.next())?,)*
                })
            }
        }
    };
}

row_values! {
    ints: [param_count, depth, train_steps, epochs, empirical_rows],
    floats: [
        initial_train_loss,
        final_train_loss,
        train_log_loss,
        eval_log_loss,
        train_prediction_loss,
        prediction_loss,
        prediction_loss_se,
        interpretation_loss,
        interpretation_loss_se,
        mse,
        mse_se,
        gamma,
        ramp_loss,
        margin_loss,
        bayes_prediction_loss,
        bayes_prediction_loss_se,
        irreducible_mse,
        irreducible_mse_se,
        model_market_share,
        true_market_share,
        prediction_reference_loss,
        prediction_estimation_error,
        prediction_approximation_error,
        interpretation_reference_loss,
        interpretation_estimation_error,
        interpretation_approximation_error,
        vc_dim,
        vc_rad_bound,
        norm_oneinf_bound,
        norm_frobenius_bound,
        empirical_rad,
        empirical_rad_se,
        empirical_reference_bound,
        prediction_upper,
        interpretation_upper,
    ]
}

fn parse_opt<T: std::str::FromStr>(name: &str, field: Option<&&str>) -> std::result::Result<Option<T>, String> {
    match field {
        None => Err(format!("missing column {name}")),
        Some(s) if s.is_empty() => Ok(None),
        Some(s) => s.parse().map(Some).map_err(|_| format!("column {name}: cannot parse {s:?}")),
    }
}

/// Nine significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.8e}")
}

/// One (scenario, model, d, N, seed) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub scenario: Scenario,
    pub model: String,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub status: String,
    pub values: RowValues,
    pub warnings: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }
}

const KEY_COLUMNS: [&str; 7] = ["config_hash", "scenario", "model", "d", "n", "seed", "status"];

pub fn result_header() -> Vec<&'static str> {
    let mut h: Vec<&str> = KEY_COLUMNS.to_vec();
    h.extend_from_slice(RowValues::INT_COLUMNS);
    h.extend_from_slice(RowValues::FLOAT_COLUMNS);
    h.push("warnings");
    h
}

fn csv_writer<W: std::io::Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Serializes rows under the fixed header.
pub fn results_to_bytes(rows: &[ResultRow]) -> Vec<u8> {
    let mut w = csv_writer(Vec::new());
    w.write_record(result_header()).expect("in-memory write");
    for r in rows {
        let mut rec = vec![
            r.config_hash.clone(),
            r.scenario.to_string(),
            r.model.clone(),
            r.d.to_string(),
            r.n.to_string(),
            r.seed.to_string(),
            r.status.clone(),
        ];
        rec.extend(r.values.to_fields());
        rec.push(r.warnings.clone());
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Writes `rows` to `path` through a temporary file renamed into place.
pub fn write_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &results_to_bytes(rows))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != result_header() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let f: Vec<&str> = rec.iter().collect();
        let k = KEY_COLUMNS.len();
        let last = f.len() - 1;
        rows.push(ResultRow {
            config_hash: f[0].to_string(),
            scenario: f[1].parse().map_err(|_| bad(format!("bad scenario {:?}", f[1])))?,
            model: f[2].to_string(),
            d: f[3].parse().map_err(|_| bad(format!("bad d {:?}", f[3])))?,
            n: f[4].parse().map_err(|_| bad(format!("bad n {:?}", f[4])))?,
            seed: f[5].parse().map_err(|_| bad(format!("bad seed {:?}", f[5])))?,
            status: f[6].to_string(),
            values: RowValues::from_fields(&f[k..last]).map_err(bad)?,
            warnings: f[last].to_string(),
        });
    }
    Ok(rows)
}

/// Writes each curve to `dir/<name>.csv`, in name order.
pub fn write_curves(curves: &BTreeMap<String, ProbCurve>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, curve) in curves {
        curve.save_csv(dir.join(format!("{name}.csv")))?;
    }
    Ok(())
}

/// Parses a curve file written by [`ProbCurve::write_csv`] into
/// `(x_value, model_prob, true_prob)` triples.
pub fn read_curve(path: impl AsRef<Path>) -> Result<Vec<(f64, f64, Option<f64>)>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("column {i} is not a number"),
            })
        };
        let t = if rec.len() > 2 { Some(num(2)?) } else { None };
        out.push((num(0)?, num(1)?, t));
    }
    Ok(out)
}
