//! Empirical risk minimization with mini-batch Adam on penalized log-loss.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::models::{init_he, loss_and_gradients, mean_log_loss, ChoiceModel, MlpArch, MlpParams};
use crate::numerics::{derive_seed, Rng};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub l1: f64,
    pub l2: f64,
    /// Stop after this many epochs without validation improvement and keep
    /// the best parameters. Needs a validation set.
    pub early_stop_patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            max_epochs: 200,
            max_steps: None,
            l1: 0.0,
            l2: 1e-5,
            early_stop_patience: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.l1 >= 0.0 && self.l2 >= 0.0) {
            return bad("penalties must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.epsilon <= 0.0 {
            return bad("Adam epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean unpenalized log-loss over the epoch's mini-batches.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Full-data log-loss at initialization.
    pub initial_train_loss: f64,
    /// Full-data log-loss of the returned parameters.
    pub final_train_loss: f64,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_loss,seconds")?;
        for r in &self.epochs {
            let val = r.val_loss.map(|v| format!("{v:.8e}")).unwrap_or_default();
            writeln!(out, "{},{:.8e},{},{:.3}", r.epoch, r.train_loss, val, r.seconds)?;
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

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub history: TrainHistory,
}

/// `-(1/N) sum [y ln p + (1 - y) ln(1 - p)]` with `p` clipped 1e-12 from the ends.
pub fn log_loss(probs: &[f64], y: &[u8]) -> Result<f64> {
    if probs.len() != y.len() {
        return Err(Error::Shape(format!("{} probabilities for {} labels", probs.len(), y.len())));
    }
    if probs.is_empty() {
        return Err(Error::Size("log-loss of an empty sample".into()));
    }
    Ok(mean_log_loss(probs, y))
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(arch: &MlpArch) -> Self {
        Self {
            m: MlpParams::zeros(arch),
            v: MlpParams::zeros(arch),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState, config: &TrainConfig) {
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let lr = config.learning_rate;
    let eps = config.epsilon;
    for (((w, g), m), v) in params
        .values_mut()
        .zip(grads.values())
        .zip(state.m.values_mut())
        .zip(state.v.values_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Full-data unpenalized log-loss of `model` on `data`.
pub fn dataset_log_loss(model: &impl ChoiceModel, data: &Dataset) -> Result<f64> {
    log_loss(&model.probs(&data.x)?, &data.y)
}

/// Trains `arch` from He initialization by mini-batch Adam.
///
/// Rows are reshuffled every epoch with the run's generator; the last partial
/// batch is kept. Returns [`Error::Diverged`] if a loss or coefficient
/// becomes non-finite.
pub fn train_erm(
    arch: &MlpArch,
    train: &Dataset,
    valid: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Size("empty training set".into()));
    }
    if arch.input_dim != train.dim() {
        return Err(Error::Shape(format!(
            "architecture expects {} inputs, data has {}",
            arch.input_dim,
            train.dim()
        )));
    }
    if config.early_stop_patience.is_some() && valid.is_none() {
        return Err(Error::Config("early stopping needs a validation set".into()));
    }

    let mut params = init_he(arch, &mut Rng::new(derive_seed(config.seed, INIT_STREAM)));
    let mut shuffle_rng = Rng::new(derive_seed(config.seed, SHUFFLE_STREAM));
    let mut state = AdamState::new(arch);
    let mut history = TrainHistory {
        initial_train_loss: dataset_log_loss(&params, train)?,
        ..Default::default()
    };

    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, MlpParams)> = None;
    let mut since_best = 0usize;
    let max_steps = config.max_steps.unwrap_or(usize::MAX);
    let started = Instant::now();

    'epochs: for epoch in 1..=config.max_epochs {
        if history.steps >= max_steps {
            break;
        }
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if history.steps >= max_steps {
                break;
            }
            let xb = train.x.select_rows(chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| train.y[i]).collect();
            let (loss, grads) = loss_and_gradients(&params, &xb, &yb, config.l1, config.l2)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: history.steps,
                    last_finite: Box::new(params),
                });
            }
            let (a, s) = params.weight_penalty_terms();
            let data_loss = loss - config.l1 * a - 0.5 * config.l2 * s;
            let previous = params.clone();
            adam_step(&mut params, &grads, &mut state, config);
            history.steps += 1;
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: history.steps,
                    last_finite: Box::new(previous),
                });
            }
            loss_sum += data_loss.max(0.0) * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_loss = valid.map(|v| dataset_log_loss(&params, v)).transpose()?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });

        if let (Some(patience), Some(vl)) = (config.early_stop_patience, val_loss) {
            match &best {
                Some((b, _)) if vl >= *b => {
                    since_best += 1;
                    if since_best >= patience {
                        break 'epochs;
                    }
                }
                _ => {
                    best = Some((vl, params.clone()));
                    since_best = 0;
                }
            }
        }
    }

    if let Some((_, p)) = best {
        params = p;
    }
    history.final_train_loss = dataset_log_loss(&params, train)?;
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_dataset, DgpSpec, Scenario};
    use crate::numerics::Matrix;

    #[test]
    fn log_loss_examples() {
        assert!((log_loss(&[0.5; 4], &[0, 1, 1, 0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_loss(&[0.0, 1.0], &[0, 1]).unwrap() <= 1e-11);
        assert!((log_loss(&[0.9], &[0]).unwrap() - 2.302_585_092_994_045).abs() < 1e-12);
        assert!(log_loss(&[0.5], &[0, 1]).is_err());
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let arch = MlpArch::bnl(3).unwrap();
        let mut params = MlpParams::zeros(&arch);
        let mut grads = MlpParams::zeros(&arch);
        grads.layers[0].weights = Matrix::from_vec(1, 3, vec![0.3, -2.0, 5e-3]).unwrap();
        grads.layers[0].bias = vec![1.0];
        let config = TrainConfig::default();
        let mut state = AdamState::new(&arch);
        adam_step(&mut params, &grads, &mut state, &config);
        // m_hat = g, v_hat = g^2 after one step, so the update is lr * g / (|g| + eps).
        for (w, g) in params.values().zip(grads.values()) {
            let want = -config.learning_rate * g / (g.abs() + config.epsilon);
            assert!((w - want).abs() < 1e-15);
            assert!((w.abs() - config.learning_rate).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let arch = MlpArch::dnn(2, 1, 3).unwrap();
        let mut params = init_he(&arch, &mut Rng::new(1));
        let before = params.clone();
        let mut state = AdamState::new(&arch);
        adam_step(&mut params, &MlpParams::zeros(&arch), &mut state, &TrainConfig::default());
        assert_eq!(params, before);
    }

    fn small_s1(n: usize, seed: u64) -> Dataset {
        let spec = DgpSpec::new(Scenario::S1, 4, 1.0, seed).unwrap();
        sample_dataset(&spec, n, &mut Rng::new(seed + 100)).unwrap()
    }

    #[test]
    fn training_is_deterministic_and_improves() {
        let data = small_s1(400, 1);
        let arch = MlpArch::dnn(4, 2, 8).unwrap();
        let config = TrainConfig {
            max_epochs: 20,
            seed: 3,
            ..Default::default()
        };
        let a = train_erm(&arch, &data, None, &config).unwrap();
        let b = train_erm(&arch, &data, None, &config).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.history.final_train_loss <= a.history.initial_train_loss);
        assert_eq!(a.history.epochs.len(), 20);
        let first = a.history.epochs[0].train_loss;
        assert!(a.history.epochs.last().unwrap().train_loss <= first);
    }

    #[test]
    fn constant_features_reach_label_entropy() {
        let x = Matrix::from_vec(100, 2, [0.5, -1.0].repeat(100)).unwrap();
        let y: Vec<u8> = (0..100).map(|i| u8::from(i < 30)).collect();
        let data = Dataset::new(x, y, None).unwrap();
        let config = TrainConfig {
            max_epochs: 400,
            batch_size: 100,
            l2: 0.0,
            learning_rate: 0.05,
            ..Default::default()
        };
        let out = train_erm(&MlpArch::bnl(2).unwrap(), &data, None, &config).unwrap();
        let entropy = -(0.3f64 * 0.3f64.ln() + 0.7 * 0.7f64.ln());
        assert!((out.history.final_train_loss - entropy).abs() < 1e-4);
    }

    #[test]
    fn separable_data_stays_finite_with_weight_decay() {
        let x = Matrix::from_rows(&[vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]]).unwrap();
        let data = Dataset::new(x, vec![0, 0, 1, 1], None).unwrap();
        let config = TrainConfig {
            max_epochs: 3000,
            l2: 1e-2,
            learning_rate: 0.05,
            ..Default::default()
        };
        let out = train_erm(&MlpArch::bnl(1).unwrap(), &data, None, &config).unwrap();
        assert!(out.params.is_finite());
        let (w, _) = out.params.linear_coefficients().unwrap();
        // The penalized optimum is finite: |w| stays well below the unpenalized blow-up.
        assert!(w[0] > 0.0 && w[0] < 50.0);
    }

    #[test]
    fn early_stopping_needs_validation_and_keeps_best() {
        let data = small_s1(100, 2);
        let valid = small_s1(200, 3);
        let arch = MlpArch::dnn(4, 2, 32).unwrap();
        let config = TrainConfig {
            early_stop_patience: Some(3),
            ..Default::default()
        };
        assert!(train_erm(&arch, &data, None, &config).is_err());
        let out = train_erm(&arch, &data, Some(&valid), &config).unwrap();
        let best = out
            .history
            .epochs
            .iter()
            .filter_map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        let got = dataset_log_loss(&out.params, &valid).unwrap();
        assert!((got - best).abs() < 1e-12);
        assert!(out.history.epochs.len() < config.max_epochs);
    }

    #[test]
    fn step_cap_is_respected() {
        let data = small_s1(1000, 4);
        let config = TrainConfig {
            max_steps: Some(10),
            ..Default::default()
        };
        let out = train_erm(&MlpArch::bnl(4).unwrap(), &data, None, &config).unwrap();
        assert_eq!(out.history.steps, 10);
        assert_eq!(out.history.epochs.len(), 2);
    }

    #[test]
    fn divergence_is_reported() {
        let data = small_s1(64, 5);
        let config = TrainConfig {
            learning_rate: f64::MAX,
            max_epochs: 5,
            ..Default::default()
        };
        match train_erm(&MlpArch::dnn(4, 2, 4).unwrap(), &data, None, &config) {
            Err(Error::Diverged { last_finite, .. }) => assert!(last_finite.is_finite()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let data = small_s1(50, 6);
        let config = TrainConfig {
            max_epochs: 3,
            ..Default::default()
        };
        let out = train_erm(&MlpArch::bnl(4).unwrap(), &data, None, &config).unwrap();
        let mut buf = Vec::new();
        out.history.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss,seconds\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
