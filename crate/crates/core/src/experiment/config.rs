use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::RademacherConfig;
use crate::dgp::Scenario;
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::models::MlpArch;
use crate::training::TrainConfig;

/// A named architecture; `hidden_widths = []` is the binary logit model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
}

impl ModelSpec {
    pub fn bnl() -> Self {
        Self {
            name: "BNL".into(),
            hidden_widths: Vec::new(),
        }
    }

    pub fn dnn() -> Self {
        Self {
            name: "DNN".into(),
            hidden_widths: vec![100; 5],
        }
    }

    pub fn arch(&self, input_dim: usize) -> Result<MlpArch> {
        MlpArch::new(input_dim, self.hidden_widths.clone())
    }

    pub fn is_linear(&self) -> bool {
        self.hidden_widths.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    /// Run the (slow) empirical Rademacher estimator for every cell.
    pub empirical: bool,
    pub rademacher: RademacherConfig,
}

/// Grid for the probability curve exported per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub enabled: bool,
    /// Observed input index that is varied.
    pub coordinate: usize,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            coordinate: 0,
            lo: -3.0,
            hi: 3.0,
            points: 61,
        }
    }
}

/// The full description of a sweep. Parsed from TOML; see the README for
/// the grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub scenarios: Vec<Scenario>,
    pub dims: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub models: Vec<ModelSpec>,
    /// Overrides the per-scenario default weight scale.
    pub weight_scale: Option<f64>,
    pub bayes_mc_size: usize,
    /// Run nonlinear models at sample sizes above `desk_max_n`.
    pub full: bool,
    pub desk_max_n: usize,
    pub save_models: bool,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub metrics: MetricConfig,
    pub bounds: BoundsConfig,
    pub curves: CurveConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scenarios: Scenario::ALL.to_vec(),
            dims: vec![20, 50],
            sample_sizes: vec![100, 1_000, 10_000, 100_000, 1_000_000],
            seeds: (0..5).collect(),
            models: vec![ModelSpec::bnl(), ModelSpec::dnn()],
            weight_scale: None,
            bayes_mc_size: 100_000,
            full: false,
            desk_max_n: 100_000,
            save_models: true,
            workers: 1,
            output_dir: PathBuf::from("results"),
            train: TrainConfig::default(),
            metrics: MetricConfig::default(),
            bounds: BoundsConfig::default(),
            curves: CurveConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: SweepConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("{name} must be nonempty")))
            } else {
                Ok(())
            }
        };
        nonempty("scenarios", self.scenarios.len())?;
        nonempty("dims", self.dims.len())?;
        nonempty("sample_sizes", self.sample_sizes.len())?;
        nonempty("seeds", self.seeds.len())?;
        nonempty("models", self.models.len())?;
        if self.sample_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sample_sizes must be strictly ascending".into()));
        }
        if self.sample_sizes[0] == 0 {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if let Some(&d) = self.dims.iter().find(|&&d| d < 2) {
            return Err(Error::Config(format!("dimension {d} is below 2")));
        }
        check_unique("dims", &self.dims)?;
        check_unique("seeds", &self.seeds)?;
        check_unique("scenarios", &self.scenarios)?;
        let names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        check_unique("model names", &names)?;
        for m in &self.models {
            if m.name.is_empty() || !m.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(Error::Config(format!(
                    "model name {:?} must be nonempty ASCII alphanumerics, '-' or '_'",
                    m.name
                )));
            }
            if m.hidden_widths.contains(&0) {
                return Err(Error::Config(format!("model {} has a zero-width layer", m.name)));
            }
        }
        if let Some(s) = self.weight_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("weight_scale must be positive, got {s}")));
            }
        }
        if self.bayes_mc_size < crate::dgp::MIN_BAYES_MC {
            return Err(Error::Config(format!(
                "bayes_mc_size must be at least {}",
                crate::dgp::MIN_BAYES_MC
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.curves.enabled && (self.curves.points < 2 || !(self.curves.hi > self.curves.lo)) {
            return Err(Error::Config("curve grid needs points >= 2 and hi > lo".into()));
        }
        self.train.validate()?;
        self.metrics.validate()?;
        let r = &self.bounds.rademacher;
        if self.bounds.empirical && (r.sign_draws == 0 || r.restarts == 0 || r.max_rows == Some(0)) {
            return Err(Error::Config("empirical Rademacher settings must be positive".into()));
        }
        Ok(())
    }

    /// The config with run-location settings (`output_dir`, `workers`) reset;
    /// these cannot change any result byte.
    pub fn canonical(&self) -> SweepConfig {
        let mut c = self.clone();
        c.output_dir = PathBuf::from(".");
        c.workers = 1;
        c
    }

    /// SHA-256 over the JSON form of [`SweepConfig::canonical`].
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.canonical()).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Whether the cell is skipped at desk scale.
    pub fn gated(&self, model: &ModelSpec, n: usize) -> bool {
        !self.full && !model.is_linear() && n > self.desk_max_n
    }
}

fn check_unique<T: PartialEq + std::fmt::Debug>(name: &str, items: &[T]) -> Result<()> {
    for (i, a) in items.iter().enumerate() {
        if items[..i].contains(a) {
            return Err(Error::Config(format!("{name} contains {a:?} twice")));
        }
    }
    Ok(())
}
