use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ModelSpec, SweepConfig};
use super::output::{write_atomic, write_results, ResultRow, RowValues, STATUS_OK};
use crate::bounds::{bound_report, empirical_rademacher, estimator_rows, NormBallNetworks};
use crate::dgp::{bayes_optimal_losses, sample_dataset, Dataset, DgpSpec, Scenario};
use crate::error::{Error, Result};
use crate::interpret::{linear_grid, market_share, prob_curve, ProbCurve};
use crate::metrics::evaluate;
use crate::models::MlpParams;
use crate::numerics::{derive_seed, Rng};
use crate::training::{train_erm, TrainConfig, TrainHistory};

const TRAIN_SAMPLE_STREAM: u64 = 0x5452_4149;
const EVAL_SAMPLE_STREAM: u64 = 0x4556_414c;
const BAYES_STREAM: u64 = 0x4241_5945;
const RADEMACHER_STREAM: u64 = 0x5241_4445;

/// Identifies one cell; `model` indexes `SweepConfig::models`. The derived
/// order (scenario, d, model, n, seed) is the row order of `results.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub scenario: Scenario,
    pub d: usize,
    pub model: usize,
    pub n: usize,
    pub seed: u64,
}

/// Every cell of the grid in row order.
pub fn cells(config: &SweepConfig) -> Vec<CellKey> {
    let mut out = Vec::new();
    for &scenario in &config.scenarios {
        for &d in &config.dims {
            for model in 0..config.models.len() {
                for &n in &config.sample_sizes {
                    for &seed in &config.seeds {
                        out.push(CellKey {
                            scenario,
                            d,
                            model,
                            n,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out.sort();
    out
}

/// Seed of the data-generating process for (scenario, d, seed). Every model
/// and sample size of that triple shares the spec and the evaluation sample.
pub fn spec_seed(scenario: Scenario, d: usize, seed: u64) -> u64 {
    let tag = match scenario {
        Scenario::S1 => 1,
        Scenario::S2 => 2,
        Scenario::S3 => 3,
    };
    derive_seed(derive_seed(seed, tag), d as u64)
}

fn name_seed(name: &str) -> u64 {
    name.bytes().fold(0x4d_4f44_454cu64, |acc, b| derive_seed(acc, u64::from(b)))
}

/// The data a cell trains and evaluates on.
pub struct CellData {
    pub spec: DgpSpec,
    pub train: Dataset,
    pub eval: Dataset,
}

pub fn cell_data(config: &SweepConfig, key: &CellKey) -> Result<CellData> {
    let s = spec_seed(key.scenario, key.d, key.seed);
    let scale = config
        .weight_scale
        .unwrap_or_else(|| key.scenario.default_weight_scale(key.d));
    let spec = DgpSpec::new(key.scenario, key.d, scale, s)?;
    let train_rng = &mut Rng::new(derive_seed(s, TRAIN_SAMPLE_STREAM)).split(key.n as u64);
    let train = sample_dataset(&spec, key.n, train_rng)?;
    let eval_rng = &mut Rng::new(derive_seed(s, EVAL_SAMPLE_STREAM));
    let eval = sample_dataset(&spec, config.metrics.eval_mc_size, eval_rng)?;
    Ok(CellData { spec, train, eval })
}

/// Training settings for a cell: the configured optimizer with a seed
/// derived from the cell and model name.
pub fn cell_train_config(config: &SweepConfig, key: &CellKey) -> TrainConfig {
    let s = spec_seed(key.scenario, key.d, key.seed);
    let mut t = config.train.clone();
    let model = &config.models[key.model];
    t.seed = derive_seed(
        derive_seed(s, key.n as u64),
        derive_seed(config.train.seed, name_seed(&model.name)),
    );
    t
}

/// File stem shared by a cell's curve and model files.
pub fn cell_stem(config: &SweepConfig, key: &CellKey) -> String {
    format!(
        "{}_{}_d{}_n{}_s{}",
        key.scenario, config.models[key.model].name, key.d, key.n, key.seed
    )
}

pub struct CellOutput {
    pub key: CellKey,
    pub row: ResultRow,
    pub curve: Option<ProbCurve>,
    pub params: Option<MlpParams>,
    pub history: Option<TrainHistory>,
    pub train_seconds: f64,
    pub total_seconds: f64,
}

fn empty_row(config: &SweepConfig, hash: &str, key: &CellKey, status: String) -> ResultRow {
    ResultRow {
        config_hash: hash.to_string(),
        scenario: key.scenario,
        model: config.models[key.model].name.clone(),
        d: key.d,
        n: key.n,
        seed: key.seed,
        status,
        values: RowValues::default(),
        warnings: String::new(),
    }
}

/// Trains and evaluates one cell. Failures are recorded in the row status.
pub fn run_cell(config: &SweepConfig, hash: &str, key: &CellKey) -> CellOutput {
    let start = Instant::now();
    let model = &config.models[key.model];
    let mut out = CellOutput {
        key: *key,
        row: empty_row(config, hash, key, STATUS_OK.into()),
        curve: None,
        params: None,
        history: None,
        train_seconds: 0.0,
        total_seconds: 0.0,
    };
    if config.gated(model, key.n) {
        out.row.status = format!("skipped: N above {} needs full", config.desk_max_n);
        return out;
    }
    if let Err(e) = fill_cell(config, key, model, &mut out) {
        let keep_time = out.train_seconds;
        out.row = empty_row(config, hash, key, format!("error: {e}"));
        out.curve = None;
        out.params = None;
        out.train_seconds = keep_time;
    }
    out.total_seconds = start.elapsed().as_secs_f64();
    out
}

fn fill_cell(config: &SweepConfig, key: &CellKey, model: &ModelSpec, out: &mut CellOutput) -> Result<()> {
    let data = cell_data(config, key)?;
    let train_config = cell_train_config(config, key);
    let arch = model.arch(data.train.dim())?;
    let t = Instant::now();
    let trained = train_erm(&arch, &data.train, None, &train_config);
    out.train_seconds = t.elapsed().as_secs_f64();
    let trained = trained?;
    let params = trained.params;
    let history = trained.history;

    let metrics = evaluate(&params, &data.train, &data.eval, &config.metrics)?;
    let s = spec_seed(key.scenario, key.d, key.seed);
    let bayes = bayes_optimal_losses(&data.spec, config.bayes_mc_size, &mut Rng::new(derive_seed(s, BAYES_STREAM)))?;

    let empirical = if config.bounds.empirical {
        let rconf = &config.bounds.rademacher;
        let x = estimator_rows(&data.train.x, rconf);
        let class = NormBallNetworks::matching(&params, rconf)?;
        let rng = &mut Rng::new(derive_seed(train_config.seed, RADEMACHER_STREAM));
        let est = empirical_rademacher(&class, &x, rconf.sign_draws, rng)?;
        Some((est, x.rows()))
    } else {
        None
    };
    let bounds = bound_report(&params, key.n, metrics.margin_loss, config.metrics.gamma, empirical)?;

    let true_share = data
        .eval
        .p_true
        .as_ref()
        .map(|p| p.iter().sum::<f64>() / p.len() as f64);

    let v = &mut out.row.values;
    v.param_count = Some(bounds.param_count as u64);
    v.depth = Some(bounds.depth as u64);
    v.train_steps = Some(history.steps as u64);
    v.epochs = Some(history.epochs.len() as u64);
    v.empirical_rows = bounds.empirical_rows.map(|r| r as u64);
    v.initial_train_loss = Some(history.initial_train_loss);
    v.final_train_loss = Some(history.final_train_loss);
    v.train_log_loss = Some(metrics.train_log_loss);
    v.eval_log_loss = Some(metrics.eval_log_loss);
    v.train_prediction_loss = Some(metrics.train_prediction_loss);
    v.prediction_loss = Some(metrics.prediction_loss.value);
    v.prediction_loss_se = Some(metrics.prediction_loss.se);
    v.interpretation_loss = metrics.interpretation_loss.map(|e| e.value);
    v.interpretation_loss_se = metrics.interpretation_loss.map(|e| e.se);
    v.mse = Some(metrics.mse.value);
    v.mse_se = Some(metrics.mse.se);
    v.gamma = Some(metrics.gamma);
    v.ramp_loss = Some(metrics.ramp_loss);
    v.margin_loss = Some(metrics.margin_loss);
    v.bayes_prediction_loss = Some(bayes.min_prediction_loss.value);
    v.bayes_prediction_loss_se = Some(bayes.min_prediction_loss.se);
    v.irreducible_mse = Some(bayes.irreducible_mse.value);
    v.irreducible_mse_se = Some(bayes.irreducible_mse.se);
    v.model_market_share = Some(market_share(&params, &data.eval)?);
    v.true_market_share = true_share;
    v.vc_dim = Some(bounds.vc_dim);
    v.vc_rad_bound = Some(bounds.vc_rad_bound);
    v.norm_oneinf_bound = bounds.norm_oneinf_bound;
    v.norm_frobenius_bound = bounds.norm_frobenius_bound;
    v.empirical_rad = bounds.empirical_rad.map(|e| e.value);
    v.empirical_rad_se = bounds.empirical_rad.map(|e| e.se);
    v.empirical_reference_bound = bounds.empirical_reference_bound;
    v.prediction_upper = bounds.prediction_upper;
    v.interpretation_upper = bounds.interpretation_upper;
    out.row.warnings = bounds.warnings.join("; ");

    if config.curves.enabled {
        let c = &config.curves;
        let grid = linear_grid(c.lo, c.hi, c.points)?;
        let baseline = vec![0.0; data.train.dim()];
        out.curve = Some(prob_curve(&params, c.coordinate, &grid, &baseline, Some(&data.spec))?);
    }
    out.params = Some(params);
    out.history = Some(history);
    Ok(())
}

/// Runs `keys` on a pool of `config.workers` threads; output order follows `keys`.
pub fn run_cells(config: &SweepConfig, keys: &[CellKey]) -> Result<Vec<CellOutput>> {
    run_cells_with(config, keys, |o| o)
}

fn run_cells_with<T: Send>(
    config: &SweepConfig,
    keys: &[CellKey],
    finish: impl Fn(CellOutput) -> T + Sync,
) -> Result<Vec<T>> {
    config.validate()?;
    let hash = config.hash();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        keys.par_iter()
            .map(|k| finish(run_cell(config, &hash, k)))
            .collect()
    }))
}

/// Fills the error-decomposition columns. The reference-class loss of a
/// (scenario, model, d) group is the seed mean at its largest sample size
/// with successful cells; the Bayes loss is the row's own Monte-Carlo
/// estimate for prediction and 0 for interpretation.
pub fn add_decompositions(rows: &mut [ResultRow]) {
    type Group = (Scenario, String, usize);
    let mut best: BTreeMap<Group, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let g = (r.scenario, r.model.clone(), r.d);
        let e = best.entry(g).or_insert((r.n, Vec::new(), Vec::new()));
        if r.n > e.0 {
            *e = (r.n, Vec::new(), Vec::new());
        }
        if r.n == e.0 {
            if let Some(p) = r.values.prediction_loss {
                e.1.push(p);
            }
            if let Some(i) = r.values.interpretation_loss {
                e.2.push(i);
            }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    for r in rows.iter_mut().filter(|r| r.is_ok()) {
        let Some((_, p, i)) = best.get(&(r.scenario, r.model.clone(), r.d)) else {
            continue;
        };
        let v = &mut r.values;
        if let (Some(reference), Some(test), Some(bayes)) = (mean(p), v.prediction_loss, v.bayes_prediction_loss) {
            let d = crate::metrics::decompose_error(test, reference, bayes);
            v.prediction_reference_loss = Some(reference);
            v.prediction_estimation_error = Some(d.estimation_error);
            v.prediction_approximation_error = Some(d.approximation_error);
        }
        if let (Some(reference), Some(test)) = (mean(i), v.interpretation_loss) {
            let d = crate::metrics::decompose_error(test, reference, 0.0);
            v.interpretation_reference_loss = Some(reference);
            v.interpretation_estimation_error = Some(d.estimation_error);
            v.interpretation_approximation_error = Some(d.approximation_error);
        }
    }
}

/// Wall-clock times, kept out of `results.csv` so result bytes stay
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub key: CellKey,
    pub model: String,
    pub train_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config_hash: String,
    pub rows: Vec<ResultRow>,
    pub timings: Vec<CellTiming>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: &'a str,
    cells: usize,
    ok: usize,
    skipped: usize,
    failed: usize,
    results: &'static str,
    curves_dir: Option<&'static str>,
    models_dir: Option<&'static str>,
    config: &'a SweepConfig,
}

/// Runs the whole grid and writes `results.csv`, `curves/`, `models/`,
/// `manifest.json`, `config.toml` and `timings.csv` under `config.output_dir`.
/// Everything except `timings.csv` is a function of the canonical config.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    let dir = config.output_dir.clone();
    run_sweep_into(config, &dir)
}

pub fn run_sweep_into(config: &SweepConfig, dir: &Path) -> Result<SweepResult> {
    config.validate()?;
    let curves_dir = dir.join("curves");
    let models_dir = dir.join("models");
    for d in [dir, curves_dir.as_path(), models_dir.as_path()] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let keys = cells(config);
    // Each cell writes only its own artifact files, so workers never share a path.
    let persisted = run_cells_with(config, &keys, |o| {
        let stem = cell_stem(config, &o.key);
        let mut io_error = None;
        if let Some(c) = &o.curve {
            if let Err(e) = c.save_csv(curves_dir.join(format!("{stem}.csv"))) {
                io_error = Some(e);
            }
        }
        if config.save_models {
            if let Some(p) = &o.params {
                if let Err(e) = p.save(models_dir.join(format!("{stem}.bin"))) {
                    io_error = Some(e);
                }
            }
        }
        let timing = CellTiming {
            key: o.key,
            model: o.row.model.clone(),
            train_seconds: o.train_seconds,
            total_seconds: o.total_seconds,
        };
        (o.row, timing, io_error)
    })?;
    let mut rows = Vec::with_capacity(persisted.len());
    let mut timings = Vec::with_capacity(persisted.len());
    for (row, timing, io_error) in persisted {
        if let Some(e) = io_error {
            return Err(e);
        }
        rows.push(row);
        timings.push(timing);
    }
    add_decompositions(&mut rows);
    let hash = config.hash();
    write_results(&rows, dir.join("results.csv"))?;
    write_timings(&timings, &dir.join("timings.csv"))?;
    let canonical = config.canonical();
    write_atomic(&dir.join("config.toml"), canonical.to_toml_string()?.as_bytes())?;
    let ok = rows.iter().filter(|r| r.is_ok()).count();
    let skipped = rows.iter().filter(|r| r.status.starts_with("skipped")).count();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: &hash,
        cells: rows.len(),
        ok,
        skipped,
        failed: rows.len() - ok - skipped,
        results: "results.csv",
        curves_dir: config.curves.enabled.then_some("curves"),
        models_dir: config.save_models.then_some("models"),
        config: &canonical,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(SweepResult {
        config_hash: hash,
        rows,
        timings,
    })
}

fn write_timings(timings: &[CellTiming], path: &Path) -> Result<()> {
    let mut s = String::from("scenario,model,d,n,seed,train_seconds,total_seconds\n");
    for t in timings {
        s.push_str(&format!(
            "{},{},{},{},{},{:.3},{:.3}\n",
            t.key.scenario, t.model, t.key.d, t.key.n, t.key.seed, t.train_seconds, t.total_seconds
        ));
    }
    write_atomic(path, s.as_bytes())
}
