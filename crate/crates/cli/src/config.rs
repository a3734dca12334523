//! Experiment configuration, read from TOML.
//!
//! Every section except `[behavior]` has defaults; see `configs/` for
//! complete files.

use std::path::{Path, PathBuf};

use opesel_core::learners::ClassifierConfig;
use opesel_core::{EstimationConfig, HeuristicConfig, Method, PasifConfig, SelectionSettings};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSection {
    pub dim: usize,
    pub n_actions: usize,
    pub seed: u64,
    /// Draw a fresh reward function for every simulation.
    pub vary_per_sim: bool,
}

impl Default for EnvironmentSection {
    fn default() -> Self {
        Self {
            dim: 10,
            n_actions: 10,
            seed: 0,
            vary_per_sim: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorSection {
    /// Inverse temperatures of the data-collection policies.
    pub betas: Vec<f64>,
    /// Mixture weights; uniform when omitted.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Logged records per simulation.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Inverse temperatures of the evaluation policies (estimator selection).
    pub betas: Vec<f64>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            betas: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSection {
    pub methods: Vec<Method>,
}

impl Default for MethodSection {
    fn default() -> Self {
        Self {
            methods: vec![Method::Pasif, Method::Heuristic],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// Fresh contexts for true policy values.
    pub n_mc: usize,
    /// Fresh logged datasets for true candidate MSEs.
    pub n_reps: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            n_mc: 100_000,
            n_reps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub n_sims: usize,
    pub base_seed: u64,
    /// Worker threads; overridden by `--workers` or `OPESEL_WORKERS`.
    pub workers: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n_sims: 20,
            base_seed: 0,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// File name prefix for every output.
    pub prefix: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            prefix: "opesel".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpsSection {
    pub classifier: ClassifierConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub environment: EnvironmentSection,
    pub behavior: BehaviorSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub method: MethodSection,
    #[serde(default)]
    pub pasif: PasifConfig,
    #[serde(default)]
    pub heuristic: HeuristicConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub ops: OpsSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn behavior_weights(&self) -> Vec<f64> {
        match &self.behavior.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.behavior.betas.len() as f64; self.behavior.betas.len()],
        }
    }

    pub fn settings(&self) -> SelectionSettings {
        SelectionSettings {
            pasif: self.pasif.clone(),
            heuristic: self.heuristic.clone(),
            estimation: self.estimation.clone(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.environment.dim == 0 {
            return bad("environment.dim", "must be at least 1".into());
        }
        if self.environment.n_actions < 2 {
            return bad("environment.n_actions", "must be at least 2".into());
        }
        if self.behavior.betas.is_empty() {
            return bad("behavior.betas", "must list at least one policy".into());
        }
        if let Some(w) = &self.behavior.weights {
            if w.len() != self.behavior.betas.len() {
                return bad(
                    "behavior.weights",
                    format!("{} weights for {} policies", w.len(), self.behavior.betas.len()),
                );
            }
        }
        if self.behavior.n < 2 * self.estimation.n_folds.max(2) {
            return bad("behavior.n", format!("{} records are too few", self.behavior.n));
        }
        if self.evaluation.betas.is_empty() {
            return bad("evaluation.betas", "must list at least one policy".into());
        }
        if self.method.methods.is_empty() {
            return bad("method.methods", "must list at least one method".into());
        }
        if self.oracle.n_mc == 0 || self.oracle.n_reps == 0 {
            return bad("oracle", "n_mc and n_reps must be at least 1".into());
        }
        if self.run.n_sims == 0 {
            return bad("run.n_sims", "must be at least 1".into());
        }
        if self.run.workers == Some(0) {
            return bad("run.workers", "must be at least 1".into());
        }
        self.pasif
            .validate()
            .map_err(|e| CliError::Config(format!("pasif: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[behavior]\nbetas = [-2.0, 2.0]\nn = 100\n";

    #[test]
    fn defaults_fill_missing_sections() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.behavior_weights(), vec![0.5, 0.5]);
        assert_eq!(c.pasif.seeds.len(), 10);
        assert_eq!(c.method.methods, vec![Method::Pasif, Method::Heuristic]);
    }

    #[test]
    fn errors_name_the_field() {
        let e = ExperimentConfig::from_toml("[behavior]\nbetas = [1.0]\nn = 100\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = ExperimentConfig::from_toml("[behavior]\nbetas = [1.0]\nn = \"x\"\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let text = format!("{MINIMAL}[pasif]\ntarget_rate = 1.5\n");
        assert!(ExperimentConfig::from_toml(&text)
            .unwrap_err()
            .to_string()
            .contains("target_rate"));
    }

    #[test]
    fn method_and_mode_spelling() {
        let text =
            format!("{MINIMAL}[method]\nmethods = [\"heuristic\"]\n[heuristic]\nmode = {{ fixed = 1 }}\n");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c.method.methods, vec![Method::Heuristic]);
        assert_eq!(c.heuristic.mode, opesel_core::PseudoEvalMode::Fixed(1));
    }
}
