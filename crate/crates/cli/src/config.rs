//! Run configuration files: one JSON document with an optional section per
//! command, plus the resolution rules (seed overrides, relative paths).

use std::path::{Path, PathBuf};

use pdeseg::datagen::{CorpusConfig, Split};
use pdeseg::harness::ExperimentSpec;
use pdeseg::predictor::{ArchConfig, TrainConfig};
use pdeseg::solver::SolveConfig;
use pdeseg::BoundaryParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_threshold() -> f64 {
    0.5
}

fn default_fraction() -> u32 {
    100
}

fn default_eval_splits() -> Vec<Split> {
    vec![Split::TestIn, Split::TestOod]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    /// Mask PGM the field is fitted to.
    pub target: PathBuf,
    /// Optional clean mask to score against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default)]
    pub boundary: BoundaryParams,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub manifest: PathBuf,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub config: TrainConfig,
    /// Percentage of the train split to use.
    #[serde(default = "default_fraction")]
    pub fraction: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub manifest: PathBuf,
    /// Parameter file written by `train`.
    pub params: PathBuf,
    #[serde(default = "default_eval_splits")]
    pub splits: Vec<Split>,
    #[serde(default)]
    pub boundary: BoundaryParams,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub manifest: PathBuf,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Run in order; rows are concatenated.
    pub experiments: Vec<ExperimentSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces the seed of every section.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory; `--out` takes precedence. Not echoed.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen: Option<CorpusConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = std::path::absolute(path)
            .map_err(|e| CliError::io(format!("cannot resolve {}: {e}", path.display())))?;
        let base = base.parent().unwrap_or(Path::new("/")).to_path_buf();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    /// Makes every relative path absolute against `base` (the directory of
    /// the config file), so the echo can be re-run from anywhere.
    fn resolve_paths(&mut self, base: &Path) {
        if let Some(out) = &mut self.out {
            absolutize(base, out);
        }
        if let Some(s) = &mut self.solve {
            absolutize(base, &mut s.target);
            if let Some(t) = &mut s.truth {
                absolutize(base, t);
            }
        }
        if let Some(s) = &mut self.train {
            absolutize(base, &mut s.manifest);
        }
        if let Some(s) = &mut self.eval {
            absolutize(base, &mut s.manifest);
            absolutize(base, &mut s.params);
        }
        if let Some(s) = &mut self.sweep {
            absolutize(base, &mut s.manifest);
        }
    }

    /// Applies `--seed-override` (or the config's global seed) to every section.
    pub fn apply_seed(&mut self, seed_override: Option<u64>) {
        if seed_override.is_some() {
            self.seed = seed_override;
        }
        let Some(seed) = self.seed else { return };
        if let Some(g) = &mut self.gen {
            g.seed = seed;
        }
        if let Some(s) = &mut self.solve {
            s.solver.seed = seed;
        }
        if let Some(s) = &mut self.train {
            s.config.seed = seed;
        }
        if let Some(s) = &mut self.sweep {
            s.train.seed = seed;
        }
    }

    /// The config echo written next to every run's outputs: only the
    /// section that was run, with resolved seeds and absolute paths.
    pub fn echo(&self, command: &str) -> Result<String, CliError> {
        let only = RunConfig {
            seed: self.seed,
            out: None,
            gen: (command == "gen").then(|| self.gen.clone()).flatten(),
            solve: (command == "solve").then(|| self.solve.clone()).flatten(),
            train: (command == "train").then(|| self.train.clone()).flatten(),
            eval: (command == "eval").then(|| self.eval.clone()).flatten(),
            sweep: (command == "sweep").then(|| self.sweep.clone()).flatten(),
        };
        let mut text = serde_json::to_string_pretty(&only).map_err(|e| CliError::config(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }
}
