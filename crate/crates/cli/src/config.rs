use std::path::Path;

use nnpforge::active::SamplingConfig;
use nnpforge::dynamics::MDConfig;
use nnpforge::model::ModelConfig;
use nnpforge::surrogate::SurrogateSpec;
use nnpforge::training::{LossConfig, Schedule};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Configuration sections shared by all commands. Loss and schedule stay
/// unset until a command fills in its own defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: Option<LossConfig>,
    pub schedule: Option<Schedule>,
    pub md: MDConfig,
    pub sampling: SamplingConfig,
    pub surrogate: SurrogateSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}
