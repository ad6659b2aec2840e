//! Experiment configuration: one TOML schema for single runs, sweeps, and
//! figure presets.

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{InitialLaw, TruthSchedule};
use crate::error::{Error, Result};
use crate::estimators::{GammaClock, IndexPolicy, LearningRate, Variant};
use crate::models::{ModelSpec, WeightMode};

/// One piecewise-constant segment of the data-generating parameter,
/// half-open on the right: theta applies to steps [prev, until_step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSegment {
    pub until_step: usize,
    pub theta: Vec<f64>,
}

/// Initial parameter estimate: per-coordinate uniform bounds (degenerate
/// bounds pin the coordinate) or an explicit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThetaInit {
    Uniform { low: Vec<f64>, high: Vec<f64> },
    Explicit { values: Vec<f64> },
}

/// Optional per-coordinate box constraint on the estimate; every update is
/// clamped into [low, high].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// Error target for L2 aggregation: the scheduled truth, the closed-form
/// finite-N pseudo-target (quadratic, single free parameter), or explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Named(String),
    Explicit(Vec<f64>),
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Named("truth".into())
    }
}

fn default_record_stride() -> usize {
    1
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Averaged, Variant::Particlewise]
}

fn default_weight() -> WeightMode {
    WeightMode::Likelihood
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub sigma: f64,
    #[serde(default = "default_weight")]
    pub weight: WeightMode,
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_record_stride")]
    pub record_stride: usize,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    pub truth: Vec<TruthSegment>,
    pub learning_rate: LearningRate,
    #[serde(default)]
    pub gamma_clock: GammaClock,
    #[serde(default)]
    pub init: Option<InitialLaw>,
    pub theta_init: ThetaInit,
    #[serde(default)]
    pub mask: Option<Vec<bool>>,
    #[serde(default)]
    pub index_policy: IndexPolicy,
    #[serde(default)]
    pub projection: Option<ProjectionSpec>,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub output: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    /// Short content hash recorded in trace metadata.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.build_model()?;
        let p = model.p;
        if self.n < 1 {
            return Err(Error::Config("field \"n\": must be at least 1".into()));
        }
        if self.m < 1 {
            return Err(Error::Config("field \"m\": must be at least 1".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::Config("field \"dt\": must be positive".into()));
        }
        if self.steps < 1 {
            return Err(Error::Config("field \"steps\": must be at least 1".into()));
        }
        if self.record_stride < 1 {
            return Err(Error::Config("field \"record_stride\": must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("field \"seeds\": must be non-empty".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("field \"variants\": must be non-empty".into()));
        }
        if self.truth.is_empty() {
            return Err(Error::Config("field \"truth\": must be non-empty".into()));
        }
        for seg in &self.truth {
            if seg.theta.len() != p {
                return Err(Error::Config(format!(
                    "field \"truth\": theta has length {}, model has p = {p}",
                    seg.theta.len()
                )));
            }
        }
        self.build_schedule()
            .map_err(|e| Error::Config(format!("field \"truth\": {e}")))?;
        self.learning_rate
            .validate()
            .map_err(|e| Error::Config(format!("field \"learning_rate\": {e}")))?;
        match &self.theta_init {
            ThetaInit::Uniform { low, high } => {
                if low.len() != p || high.len() != p {
                    return Err(Error::Config(format!(
                        "field \"theta_init\": bounds must have length p = {p}"
                    )));
                }
                if low.iter().zip(high).any(|(l, h)| l > h) {
                    return Err(Error::Config(
                        "field \"theta_init\": low bound exceeds high bound".into(),
                    ));
                }
            }
            ThetaInit::Explicit { values } => {
                if values.len() != p {
                    return Err(Error::Config(format!(
                        "field \"theta_init\": values must have length p = {p}"
                    )));
                }
            }
        }
        if let Some(mask) = &self.mask {
            if mask.len() != p {
                return Err(Error::Config(format!(
                    "field \"mask\": must have length p = {p}"
                )));
            }
        }
        if let IndexPolicy::Fixed { j, k } = self.index_policy {
            if j >= self.m || k >= self.m {
                return Err(Error::Config(format!(
                    "field \"index_policy\": (j = {j}, k = {k}) out of range for m = {}",
                    self.m
                )));
            }
        }
        if let Some(proj) = &self.projection {
            if proj.low.len() != p || proj.high.len() != p {
                return Err(Error::Config(format!(
                    "field \"projection\": bounds must have length p = {p}"
                )));
            }
            if proj.low.iter().zip(&proj.high).any(|(l, h)| l > h) {
                return Err(Error::Config(
                    "field \"projection\": low bound exceeds high bound".into(),
                ));
            }
        }
        match &self.target {
            TargetSpec::Named(name) if name == "truth" || name == "pseudo" => {}
            TargetSpec::Named(other) => {
                return Err(Error::Config(format!(
                    "field \"target\": unknown name \"{other}\" (use \"truth\", \"pseudo\", or a vector)"
                )));
            }
            TargetSpec::Explicit(values) => {
                if values.len() != p {
                    return Err(Error::Config(format!(
                        "field \"target\": vector must have length p = {p}"
                    )));
                }
            }
        }
        if let Some(init) = &self.init {
            // shape check via a throwaway sample
            let mut probe = crate::dynamics::RngStream::new(0, 0);
            init.sample(1, model.d, &mut probe)
                .map_err(|e| Error::Config(format!("field \"init\": {e}")))?;
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        ModelSpec::by_name(&self.model, self.sigma, self.weight)
            .map_err(|e| Error::Config(format!("field \"model\": {e}")))
    }

    pub fn build_schedule(&self) -> Result<TruthSchedule> {
        let segments = self
            .truth
            .iter()
            .map(|seg| (seg.until_step, Array1::from_vec(seg.theta.clone())))
            .collect();
        TruthSchedule::new(segments, self.steps)
    }

    pub fn initial_law(&self, d: usize) -> InitialLaw {
        self.init
            .clone()
            .unwrap_or_else(|| InitialLaw::standard_gaussian(d))
    }

    pub fn mask_or_default(&self, p: usize) -> Vec<bool> {
        self.mask.clone().unwrap_or_else(|| vec![true; p])
    }

    /// Draw the initial parameter estimate. Degenerate uniform bounds
    /// (low == high) pin the coordinate without consuming randomness.
    pub fn sample_theta_init(&self, rng: &mut crate::dynamics::RngStream) -> Array1<f64> {
        match &self.theta_init {
            ThetaInit::Explicit { values } => Array1::from_vec(values.clone()),
            ThetaInit::Uniform { low, high } => Array1::from_iter(
                low.iter()
                    .zip(high)
                    .map(|(&l, &h)| if h > l { rng.uniform(l, h) } else { l }),
            ),
        }
    }

    /// Final-segment truth, used as the default error target.
    pub fn final_truth(&self) -> Array1<f64> {
        Array1::from_vec(self.truth.last().unwrap().theta.clone())
    }
}
