use serde::{Deserialize, Serialize};

use crate::cloudbuild::DEFAULT_THETA;
use crate::error::{Error, Result};
use crate::geometry::AugmentConfig;
use crate::network::NetworkSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Points per subcloud; must equal the network input size.
    pub subcloud_size: usize,
    pub learning_rate: f64,
    pub theta: f64,
    pub seed: u64,
    /// Upper bound on cloud size per case; larger clouds are an error.
    pub max_points: Option<usize>,
    pub augment: AugmentConfig,
    pub spec: NetworkSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_spec(NetworkSpec::standard())
    }
}

impl TrainConfig {
    pub fn for_spec(spec: NetworkSpec) -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            subcloud_size: spec.input_size(),
            learning_rate: 0.01,
            theta: DEFAULT_THETA,
            seed: 0,
            max_points: None,
            augment: AugmentConfig::default(),
            spec,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.subcloud_size != self.spec.input_size() {
            return Err(Error::Config(format!(
                "subcloud size {} differs from the network input size {}",
                self.subcloud_size,
                self.spec.input_size()
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::Config(format!("threshold {} outside [0, 1)", self.theta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub repetitions: usize,
    /// Points per subcloud; `None` takes the network input size.
    pub subcloud_size: Option<usize>,
    pub batch_size: usize,
    pub theta: f64,
    pub seed: u64,
    pub max_points: Option<usize>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            repetitions: 10,
            subcloud_size: None,
            batch_size: 8,
            theta: DEFAULT_THETA,
            seed: 0,
            max_points: None,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("at least one repetition is required".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(s) = self.subcloud_size {
            if s != spec.input_size() {
                return Err(Error::Config(format!(
                    "subcloud size {s} differs from the network input size {}",
                    spec.input_size()
                )));
            }
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::Config(format!("threshold {} outside [0, 1)", self.theta)));
        }
        Ok(())
    }
}
