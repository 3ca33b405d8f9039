use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use choice_lab::bounds::{bound_report, empirical_rademacher, estimator_rows, NormBallNetworks};
use choice_lab::experiment::{
    cells, load_tabular, run_sweep_into, ModelSpec, SweepConfig, TabularSchema,
};
use choice_lab::interpret::{derivative, elasticity, linear_grid, market_share, prob_curve, utility_difference, vtts};
use choice_lab::metrics::evaluate;
use choice_lab::numerics::standard_normal_matrix;
use choice_lab::{train_erm, ChoiceModel, Error, MlpParams, Result, Rng, Scenario};

#[derive(Parser)]
#[command(name = "choicelab", version, about = "Binary choice modeling laboratory: logit vs deep networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one (scenario, model, d, N, seed) cell.
    Simulate(SimulateArgs),
    /// Run the full grid of a sweep config.
    Sweep(SweepArgs),
    /// Train the configured models on a tabular CSV file.
    Fit(FitArgs),
    /// Probability curve and local economic quantities of a saved model.
    Interpret(InterpretArgs),
    /// Generalization-bound report for a saved model.
    Bounds(BoundsArgs),
}

#[derive(Args)]
struct Common {
    /// TOML sweep config; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow nonlinear models above the desk-scale sample size.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Override the optimizer step cap.
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Run the empirical Rademacher estimator.
    #[arg(long)]
    empirical: bool,
}

impl Common {
    fn load(&self) -> Result<SweepConfig> {
        let mut c = match &self.config {
            Some(p) => SweepConfig::load(p)?,
            None => SweepConfig::default(),
        };
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        c.full |= self.full;
        c.bounds.empirical |= self.empirical;
        if let Some(w) = self.workers {
            c.workers = w;
        }
        if self.max_steps.is_some() {
            c.train.max_steps = self.max_steps;
        }
        if let Some(e) = self.max_epochs {
            c.train.max_epochs = e;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "S1")]
    scenario: Scenario,
    #[arg(long, default_value_t = 20)]
    d: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model name; BNL and DNN are predefined, others need --hidden.
    #[arg(long, default_value = "BNL")]
    model: String,
    /// Comma-separated hidden widths for a custom model.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Restrict the sweep to this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Only print the number of cells.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// TOML tabular schema.
    #[arg(long)]
    schema: PathBuf,
    /// Override the split seed of the schema.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InterpretArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input index varied along the curve.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Evaluation point (comma-separated); defaults to all zeros.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    at: Option<Vec<f64>>,
    /// Cost input for the value-of-time ratio against `--index`.
    #[arg(long)]
    cost_index: Option<usize>,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    lo: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    hi: f64,
    #[arg(long, default_value_t = 61)]
    points: usize,
    /// Curve CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training sample size the bounds refer to.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Training margin loss at `gamma`.
    #[arg(long, default_value_t = 0.0)]
    margin_loss: f64,
    /// Also estimate the empirical Rademacher complexity on standard normal inputs.
    #[arg(long)]
    empirical: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json serializes"));
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut c = a.common.load()?;
    let model = match (a.model.as_str(), a.hidden) {
        (_, Some(h)) => ModelSpec {
            name: a.model.clone(),
            hidden_widths: h,
        },
        ("BNL", None) => ModelSpec::bnl(),
        ("DNN", None) => ModelSpec::dnn(),
        (other, None) => {
            return Err(Error::Config(format!("model {other:?} needs --hidden widths")));
        }
    };
    c.scenarios = vec![a.scenario];
    c.dims = vec![a.d];
    c.sample_sizes = vec![a.n];
    c.seeds = vec![a.seed];
    c.models = vec![model];
    let dir = c.output_dir.clone();
    let result = run_sweep_into(&c, &dir)?;
    let row = &result.rows[0];
    print_json(&json!({
        "output_dir": dir,
        "config_hash": result.config_hash,
        "row": row,
        "train_seconds": result.timings[0].train_seconds,
    }));
    if row.is_ok() || row.status.starts_with("skipped") {
        Ok(())
    } else {
        Err(Error::Config(row.status.clone()))
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut c = a.common.load()?;
    if let Some(s) = a.seed {
        c.seeds = vec![s];
    }
    c.validate()?;
    let n_cells = cells(&c).len();
    if a.dry_run {
        println!("{n_cells} cells, config hash {}", c.hash());
        return Ok(());
    }
    eprintln!("running {n_cells} cells into {}", c.output_dir.display());
    let dir = c.output_dir.clone();
    let result = run_sweep_into(&c, &dir)?;
    let failed: Vec<_> = result
        .rows
        .iter()
        .filter(|r| !r.is_ok() && !r.status.starts_with("skipped"))
        .collect();
    for r in &failed {
        eprintln!("{} {} d={} n={} seed={}: {}", r.scenario, r.model, r.d, r.n, r.seed, r.status);
    }
    println!(
        "{} rows ({} failed), config hash {}, results in {}",
        result.rows.len(),
        failed.len(),
        result.config_hash,
        dir.join("results.csv").display()
    );
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let c = a.common.load()?;
    let mut schema = TabularSchema::load(&a.schema)?;
    if let Some(s) = a.seed {
        schema.seed = s;
    }
    let data = load_tabular(&a.data, &schema)?;
    let dir = c.output_dir.clone();
    let models_dir = dir.join("models");
    let curves_dir = dir.join("curves");
    for d in [&dir, &models_dir, &curves_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::Io {
            path: d.clone(),
            source: e,
        })?;
    }
    let eval = data.test.as_ref().unwrap_or(&data.train);
    let mut reports = Vec::new();
    for (k, m) in c.models.iter().enumerate() {
        let arch = m.arch(data.train.dim())?;
        let mut train = c.train.clone();
        train.seed = choice_lab::numerics::derive_seed(c.train.seed, k as u64);
        let out = train_erm(&arch, &data.train, data.test.as_ref(), &train)?;
        let metrics = evaluate(&out.params, &data.train, eval, &c.metrics)?;
        let bounds = bound_report(&out.params, data.train.len(), metrics.margin_loss, c.metrics.gamma, None)?;
        out.params.save(models_dir.join(format!("{}.bin", m.name)))?;
        out.history.save_csv(dir.join(format!("{}_history.csv", m.name)))?;
        let baseline = vec![0.0; data.train.dim()];
        let grid = linear_grid(c.curves.lo, c.curves.hi, c.curves.points)?;
        prob_curve(&out.params, 0, &grid, &baseline, None)?
            .save_csv(curves_dir.join(format!("{}_{}.csv", m.name, data.feature_names[0])))?;
        reports.push(json!({
            "model": m.name,
            "metrics": metrics,
            "bounds": bounds,
            "eval_market_share": market_share(&out.params, eval)?,
            "observed_share": eval.y.iter().map(|&v| f64::from(v)).sum::<f64>() / eval.len() as f64,
            "train_steps": out.history.steps,
        }));
    }
    let report = json!({
        "data": a.data,
        "train_rows": data.train.len(),
        "test_rows": data.test.as_ref().map_or(0, |t| t.len()),
        "feature_names": data.feature_names,
        "models": reports,
    });
    let text = serde_json::to_string_pretty(&report).expect("json serializes") + "\n";
    let path = dir.join("fit.json");
    std::fs::write(&path, &text).map_err(|e| Error::Io { path, source: e })?;
    print!("{text}");
    Ok(())
}

fn interpret(a: InterpretArgs) -> Result<()> {
    let m = MlpParams::load(&a.model)?;
    let d = m.arch.input_dim;
    let x = a.at.unwrap_or_else(|| vec![0.0; d]);
    let grid = linear_grid(a.lo, a.hi, a.points)?;
    let curve = prob_curve(&m, a.index, &grid, &x, None)?;
    if let Some(out) = &a.out {
        curve.save_csv(out)?;
    }
    let as_json = |r: Result<f64>| match r {
        Ok(v) => json!(v),
        Err(e) => json!({ "error": e.to_string() }),
    };
    print_json(&json!({
        "point": x,
        "index": a.index,
        "probability": m.prob_at(&x)?,
        "derivative": as_json(derivative(&m, &x, a.index)),
        "elasticity": as_json(elasticity(&m, &x, a.index)),
        "utility_difference": as_json(utility_difference(&m, &x)),
        "vtts": a.cost_index.map(|c| as_json(vtts(&m, &x, a.index, c))),
        "curve_file": a.out,
    }));
    Ok(())
}

fn bounds(a: BoundsArgs) -> Result<()> {
    let m = MlpParams::load(&a.model)?;
    let empirical = if a.empirical {
        let config = choice_lab::bounds::RademacherConfig::default();
        let mut rng = Rng::new(a.seed);
        let x = standard_normal_matrix(&mut rng, a.n, m.arch.input_dim)?;
        let x = estimator_rows(&x, &config);
        let class = NormBallNetworks::matching(&m, &config)?;
        Some((empirical_rademacher(&class, &x, config.sign_draws, &mut rng)?, x.rows()))
    } else {
        None
    };
    let report = bound_report(&m, a.n, a.margin_loss, a.gamma, empirical)?;
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Fit(a) => fit(a),
        Command::Interpret(a) => interpret(a),
        Command::Bounds(a) => bounds(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
