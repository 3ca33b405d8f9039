//! Economic quantities read off a fitted choice-probability function.
//!
//! Everything here only needs `s(x)`, so it applies equally to logit models
//! and networks. Derivatives are central finite differences with step
//! `1e-4 * max(1, |x_j|)`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dgp::{Dataset, DgpSpec};
use crate::error::{Error, Result};
use crate::models::ChoiceModel;
use crate::numerics::{logit, Matrix};

const ELASTICITY_MIN_ABS_X: f64 = 1e-6;
const VTTS_MIN_DENOMINATOR: f64 = 1e-10;

/// Choice probability along one input with all others held at a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbCurve {
    pub varied_index: usize,
    pub grid: Vec<f64>,
    pub baseline: Vec<f64>,
    pub probs: Vec<f64>,
    pub true_probs: Option<Vec<f64>>,
}

impl ProbCurve {
    /// CSV with header `x_value,model_prob[,true_prob]`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        match &self.true_probs {
            Some(t) => {
                writeln!(out, "x_value,model_prob,true_prob")?;
                for ((x, p), q) in self.grid.iter().zip(&self.probs).zip(t) {
                    writeln!(out, "{x:.8e},{p:.8e},{q:.8e}")?;
                }
            }
            None => {
                writeln!(out, "x_value,model_prob")?;
                for (x, p) in self.grid.iter().zip(&self.probs) {
                    writeln!(out, "{x:.8e},{p:.8e}")?;
                }
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(hi > lo) {
        return Err(Error::Config(format!("grid needs n >= 2 and hi > lo, got {n} on [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect())
}

/// Sweeps observed coordinate `j` over `grid` with the rest at `baseline`.
///
/// With a spec, the true curve is evaluated at the full input whose observed
/// coordinates match and whose hidden coordinates sit at 0, the mean of `P_x`.
pub fn prob_curve(
    model: &impl ChoiceModel,
    j: usize,
    grid: &[f64],
    baseline: &[f64],
    spec: Option<&DgpSpec>,
) -> Result<ProbCurve> {
    let d = model.input_dim();
    if j >= d {
        return Err(Error::Domain(format!("index {j} out of range for {d} inputs")));
    }
    if baseline.len() != d {
        return Err(Error::Shape(format!("baseline has {} values, model has {d} inputs", baseline.len())));
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("grid must be nonempty and strictly increasing".into()));
    }
    let mut x = Matrix::zeros(grid.len(), d);
    for (i, &g) in grid.iter().enumerate() {
        let r = x.row_mut(i);
        r.copy_from_slice(baseline);
        r[j] = g;
    }
    let probs = model.probs(&x)?;
    let true_probs = match spec {
        Some(spec) => {
            let observed = spec.observed_indices();
            if observed.len() != d {
                return Err(Error::Shape(format!(
                    "spec observes {} inputs, model has {d}",
                    observed.len()
                )));
            }
            let mut full = vec![0.0; spec.d];
            let mut out = Vec::with_capacity(grid.len());
            for i in 0..grid.len() {
                for (k, &fj) in observed.iter().enumerate() {
                    full[fj] = x.get(i, k);
                }
                out.push(spec.true_prob(&full)?);
            }
            Some(out)
        }
        None => None,
    };
    Ok(ProbCurve {
        varied_index: j,
        grid: grid.to_vec(),
        baseline: baseline.to_vec(),
        probs,
        true_probs,
    })
}

fn check_point(model: &impl ChoiceModel, x: &[f64], j: usize) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::Shape(format!(
            "point has {} values, model has {} inputs",
            x.len(),
            model.input_dim()
        )));
    }
    if j >= x.len() {
        return Err(Error::Domain(format!("index {j} out of range for {} inputs", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("point must be finite".into()));
    }
    Ok(())
}

/// `ds/dx_j` at `x` by central difference.
pub fn derivative(model: &impl ChoiceModel, x: &[f64], j: usize) -> Result<f64> {
    check_point(model, x, j)?;
    let h = 1e-4 * x[j].abs().max(1.0);
    let mut pts = Matrix::zeros(2, x.len());
    pts.row_mut(0).copy_from_slice(x);
    pts.row_mut(1).copy_from_slice(x);
    pts.row_mut(0)[j] = x[j] + h;
    pts.row_mut(1)[j] = x[j] - h;
    let p = model.probs(&pts)?;
    Ok((p[0] - p[1]) / (2.0 * h))
}

/// `d log s / d log x_j = (x_j / s(x)) * ds/dx_j`. Undefined near `x_j = 0`,
/// where the derivative itself should be reported instead.
pub fn elasticity(model: &impl ChoiceModel, x: &[f64], j: usize) -> Result<f64> {
    check_point(model, x, j)?;
    if x[j].abs() <= ELASTICITY_MIN_ABS_X {
        return Err(Error::Domain(format!(
            "elasticity is undefined at x_{j} = {}; report the derivative instead",
            x[j]
        )));
    }
    let s = model.prob_at(x)?;
    Ok(x[j] / s * derivative(model, x, j)?)
}

/// Value of travel time savings: ratio of the time derivative to the cost derivative.
pub fn vtts(model: &impl ChoiceModel, x: &[f64], j_time: usize, j_cost: usize) -> Result<f64> {
    let denom = derivative(model, x, j_cost)?;
    if denom.abs() <= VTTS_MIN_DENOMINATOR {
        return Err(Error::UndefinedRatio(format!(
            "cost derivative {denom:e} is too close to zero"
        )));
    }
    if j_time == j_cost {
        return Ok(1.0);
    }
    Ok(derivative(model, x, j_time)? / denom)
}

/// Utility difference `V1 - V0 = logit(s(x))`.
pub fn utility_difference(model: &impl ChoiceModel, x: &[f64]) -> Result<f64> {
    let s = model.prob_at(x)?;
    logit(s).map_err(|_| {
        Error::Domain(format!("choice probability {s} is saturated; utility difference overflows"))
    })
}

/// Predicted share of alternative 1: `(1/N) sum s(x_i)`.
pub fn market_share(model: &impl ChoiceModel, data: &Dataset) -> Result<f64> {
    let p = model.probs(&data.x)?;
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}
