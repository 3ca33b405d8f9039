//! True data-generating processes for the three simulation scenarios.
//!
//! * `S1`: linear utility, `s*(x) = sigmoid(<w, x>)`. Both model classes
//!   contain the truth.
//! * `S2`: quadratic utility, `s*(x) = sigmoid(<w, [x, x^2]>)`. Outside the
//!   linear class, inside the network class.
//! * `S3`: quadratic utility with interactions and a constant, and a subset
//!   of inputs hidden from the modeler. Outside both classes.
//!
//! Inputs are drawn from a standard multivariate normal with identity
//! covariance. Weights take values in `{-scale, +scale}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, stable_sigmoid, standard_normal_matrix, Estimate, Matrix, Rng};

const WEIGHT_STREAM: u64 = 0x5745_4947;
const DROP_STREAM: u64 = 0x4452_4f50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
    S3,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::S1, Scenario::S2, Scenario::S3];

    /// Length of the transformed feature vector for a raw input of length `d`.
    pub fn transformed_dim(self, d: usize) -> usize {
        match self {
            Scenario::S1 => d,
            Scenario::S2 => 2 * d,
            Scenario::S3 => 1 + 2 * d + d * (d - 1) / 2,
        }
    }

    /// Number of inputs hidden from the modeler at dimension `d`.
    pub fn drop_count(self, d: usize) -> usize {
        match self {
            Scenario::S1 | Scenario::S2 => 0,
            Scenario::S3 => match d {
                20 => 5,
                50 => 20,
                _ => ((d as f64 / 4.0).round() as usize).clamp(1, d - 1),
            },
        }
    }

    /// Weight scale used when a configuration does not set one.
    pub fn default_weight_scale(self, d: usize) -> f64 {
        match (self, d) {
            (Scenario::S1, 50) => 1.25,
            (Scenario::S1, _) => 0.75,
            (Scenario::S2, 50) => 2.5,
            (Scenario::S2, _) => 1.75,
            (Scenario::S3, _) => 0.75,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
            Scenario::S3 => "S3",
        };
        f.write_str(s)
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S1" | "1" => Ok(Scenario::S1),
            "S2" | "2" => Ok(Scenario::S2),
            "S3" | "3" => Ok(Scenario::S3),
            other => Err(Error::Unsupported(format!("scenario {other:?}"))),
        }
    }
}

/// A fully seeded true data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub scenario: Scenario,
    /// Raw input dimension, before any columns are hidden.
    pub d: usize,
    /// Weights over the transformed features.
    pub w_true: Vec<f64>,
    /// Sorted raw-input indices hidden from the modeler.
    pub dropped: Vec<usize>,
    pub weight_scale: f64,
    pub seed: u64,
}

impl DgpSpec {
    /// Draws weights uniformly from `{-1, +1}`, scales them, and (for `S3`)
    /// picks hidden inputs without replacement.
    pub fn new(scenario: Scenario, d: usize, weight_scale: f64, seed: u64) -> Result<Self> {
        if d < 2 {
            return Err(Error::Config(format!("dimension must be >= 2, got {d}")));
        }
        if !(weight_scale > 0.0 && weight_scale.is_finite()) {
            return Err(Error::Config(format!(
                "weight scale must be positive, got {weight_scale}"
            )));
        }
        let mut wrng = Rng::new(derive_seed(seed, WEIGHT_STREAM));
        let w_true = (0..scenario.transformed_dim(d))
            .map(|_| wrng.rademacher() * weight_scale)
            .collect();
        let mut drng = Rng::new(derive_seed(seed, DROP_STREAM));
        let dropped = drng.sample_without_replacement(d, scenario.drop_count(d));
        Ok(Self {
            scenario,
            d,
            w_true,
            dropped,
            weight_scale,
            seed,
        })
    }

    /// A spec with explicit weights and hidden inputs, validated for shape.
    pub fn from_parts(
        scenario: Scenario,
        d: usize,
        w_true: Vec<f64>,
        mut dropped: Vec<usize>,
    ) -> Result<Self> {
        if d < 1 {
            return Err(Error::Config("dimension must be >= 1".into()));
        }
        let want = scenario.transformed_dim(d);
        if w_true.len() != want {
            return Err(Error::Shape(format!(
                "{scenario} at d={d} needs {want} weights, got {}",
                w_true.len()
            )));
        }
        dropped.sort_unstable();
        dropped.dedup();
        if dropped.iter().any(|&j| j >= d) || dropped.len() >= d {
            return Err(Error::Config(format!("invalid hidden inputs {dropped:?} for d={d}")));
        }
        Ok(Self {
            scenario,
            d,
            w_true,
            dropped,
            weight_scale: 1.0,
            seed: 0,
        })
    }

    pub fn transformed_dim(&self) -> usize {
        self.scenario.transformed_dim(self.d)
    }

    /// Number of inputs the modeler sees.
    pub fn observed_dim(&self) -> usize {
        self.d - self.dropped.len()
    }

    /// Raw-input indices visible to the modeler, ascending.
    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.d).filter(|j| self.dropped.binary_search(j).is_err()).collect()
    }

    /// Restricts a full input to the observed coordinates.
    pub fn observe(&self, x: &[f64]) -> Vec<f64> {
        self.observed_indices().into_iter().map(|j| x[j]).collect()
    }

    /// Feature map `phi(x)`. `S3` order is `[1, x, x^2, x_j x_k for j < k]`.
    pub fn transform_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut out = Vec::with_capacity(self.transformed_dim());
        match self.scenario {
            Scenario::S1 => out.extend_from_slice(x),
            Scenario::S2 => {
                out.extend_from_slice(x);
                out.extend(x.iter().map(|v| v * v));
            }
            Scenario::S3 => {
                out.push(1.0);
                out.extend_from_slice(x);
                out.extend(x.iter().map(|v| v * v));
                for j in 0..x.len() {
                    for k in j + 1..x.len() {
                        out.push(x[j] * x[k]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// True utility difference `<w, phi(x)>`, computed without materializing phi.
    pub fn true_logit(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        let d = self.d;
        let w = &self.w_true;
        let dot = |ws: &[f64], xs: &[f64]| ws.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
        let v = match self.scenario {
            Scenario::S1 => dot(w, x),
            Scenario::S2 => dot(&w[..d], x) + w[d..].iter().zip(x).map(|(a, v)| a * v * v).sum::<f64>(),
            Scenario::S3 => {
                let mut acc = w[0] + dot(&w[1..=d], x);
                acc += w[d + 1..2 * d + 1].iter().zip(x).map(|(a, v)| a * v * v).sum::<f64>();
                let mut idx = 2 * d + 1;
                for j in 0..d {
                    let xj = x[j];
                    for &xk in &x[j + 1..] {
                        acc += w[idx] * xj * xk;
                        idx += 1;
                    }
                }
                acc
            }
        };
        Ok(v)
    }

    /// `s*(x)` on a full (pre-drop) input.
    pub fn true_prob(&self, x: &[f64]) -> Result<f64> {
        Ok(stable_sigmoid(self.true_logit(x)?))
    }

    /// `s*` for every row of a full-dimensional input matrix.
    pub fn true_probs(&self, x_full: &Matrix) -> Result<Vec<f64>> {
        x_full.row_iter().map(|r| self.true_prob(r)).collect()
    }

    /// `n` full-dimensional inputs from `P_x`.
    pub fn sample_inputs(&self, n: usize, rng: &mut Rng) -> Result<Matrix> {
        standard_normal_matrix(rng, n, self.d)
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Shape(format!(
                "input has length {}, spec expects {}",
                x.len(),
                self.d
            )));
        }
        Ok(())
    }
}

/// Samples with binary labels and, for synthetic data, the true choice
/// probabilities that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<u8>,
    pub p_true: Option<Vec<f64>>,
    pub spec: Option<DgpSpec>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<u8>, p_true: Option<Vec<f64>>) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Size("dataset needs at least one row".into()));
        }
        if y.len() != x.rows() {
            return Err(Error::Shape(format!("{} labels for {} rows", y.len(), x.rows())));
        }
        if let Some(i) = y.iter().position(|&v| v > 1) {
            return Err(Error::Domain(format!("label {} at row {i} is not 0/1", y[i])));
        }
        if let Some(p) = &p_true {
            if p.len() != y.len() {
                return Err(Error::Shape(format!("{} true probabilities for {} rows", p.len(), y.len())));
            }
            // Closed interval: large true utilities round to exactly 0 or 1.
            if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Domain("true probabilities must lie in [0, 1]".into()));
            }
        }
        Ok(Self {
            x,
            y,
            p_true,
            spec: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&v| f64::from(v)).collect()
    }

    /// Rows `indices`, keeping provenance.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            p_true: self
                .p_true
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
            spec: self.spec.clone(),
        }
    }
}

/// Draws `n` labeled samples. Hidden inputs are removed from the returned
/// features but still drive `p_true` and the labels.
pub fn sample_dataset(spec: &DgpSpec, n: usize, rng: &mut Rng) -> Result<Dataset> {
    let x_full = spec.sample_inputs(n, rng)?;
    let p_true = spec.true_probs(&x_full)?;
    let y = p_true.iter().map(|&p| u8::from(rng.bernoulli(p))).collect();
    let x = if spec.dropped.is_empty() {
        x_full
    } else {
        x_full.select_cols(&spec.observed_indices())
    };
    let mut ds = Dataset::new(x, y, Some(p_true))?;
    ds.spec = Some(spec.clone());
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesLosses {
    /// `E[min(s*, 1 - s*)]`: the 0/1 loss of the Bayes classifier.
    pub min_prediction_loss: Estimate,
    /// `E[s*(1 - s*)]`: the MSE of the true probability function.
    pub irreducible_mse: Estimate,
}

pub const MIN_BAYES_MC: usize = 10_000;

/// Monte-Carlo estimates of the Bayes-optimal losses over fresh draws from `P_x`.
pub fn bayes_optimal_losses(spec: &DgpSpec, mc_size: usize, rng: &mut Rng) -> Result<BayesLosses> {
    if mc_size < MIN_BAYES_MC {
        return Err(Error::Config(format!(
            "Bayes-loss Monte Carlo needs at least {MIN_BAYES_MC} draws, got {mc_size}"
        )));
    }
    let x = spec.sample_inputs(mc_size, rng)?;
    let s = spec.true_probs(&x)?;
    Ok(BayesLosses {
        min_prediction_loss: Estimate::from_samples(s.iter().map(|&p| p.min(1.0 - p))),
        irreducible_mse: Estimate::from_samples(s.iter().map(|&p| p * (1.0 - p))),
    })
}
