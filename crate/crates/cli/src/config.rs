use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use cocyclelab::cocycle::GeneratorConfig;
use cocyclelab::dynamics::BaseSystem;
use cocyclelab::Cocycle;

/// Horizon knobs shared by the analysis and perturbation commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizons {
    pub n: usize,
    pub grid_size: usize,
    pub detection_horizon: usize,
}

/// A full run configuration; unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    pub base: BaseSystem,
    pub generator: GeneratorConfig,
    pub horizons: Horizons,
    pub epsilon: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text).context("parsing config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.horizons.n == 0 || self.horizons.grid_size == 0 || self.horizons.detection_horizon == 0
        {
            bail!("all horizons must be >= 1");
        }
        if !(self.epsilon > 0.0) {
            bail!("epsilon must be positive");
        }
        let gen_dim = self
            .generator
            .dim()
            .map_err(|e| anyhow::anyhow!("generator: {e}"))?;
        if gen_dim != self.dimension {
            bail!(
                "dimension {} does not match the generator's dimension {gen_dim}",
                self.dimension
            );
        }
        Ok(())
    }

    /// Dimension >= 2 is required wherever gaps and perturbations exist.
    pub fn require_perturbable(&self) -> anyhow::Result<()> {
        if self.dimension < 2 {
            bail!("perturbation commands require dimension >= 2");
        }
        Ok(())
    }

    pub fn build_cocycle(&self) -> anyhow::Result<Cocycle> {
        Cocycle::from_config(
            self.base.clone(),
            self.generator.clone(),
            self.horizons.grid_size,
        )
        .map_err(|e| anyhow::anyhow!("building cocycle: {e}"))
    }
}
