//! TOML run configuration. Every section and key is optional; command-line
//! flags override file values.
//!
//! ```toml
//! [model]
//! d_model = 32
//! prefix_len = 4
//!
//! [prompt]
//! d_hidden = 64
//!
//! [pretrain]
//! max_steps = 1500
//! learning_rate = 3e-3
//!
//! [train]
//! max_steps = 1500
//! learning_rate = 3e-3
//! optimizer = { kind = "adam", beta1 = 0.9, beta2 = 0.999, eps = 1e-8 }
//!
//! [generate]
//! max_new_tokens = 48
//!
//! [synth]
//! n_dialogs = 500
//! seed = 0
//! ```

use std::path::Path;

use ctxprompt::experiment::DEFAULT_MAX_NEW_TOKENS;
use ctxprompt::train::{PromptConfig, TrainConfig};
use ctxprompt::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub max_new_tokens: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_dialogs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_dialogs: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub prompt: PromptConfig,
    pub pretrain: TrainConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }
}

/// Flag overrides for a training config.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct TrainOverrides {
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for data order.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.steps {
            cfg.max_steps = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.seed {
            cfg.rng_seed = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
    }
}
