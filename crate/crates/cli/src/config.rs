//! TOML run configuration.
//!
//! Every key except `schema_version` may be omitted; omitted keys take the
//! documented defaults, and omitted per-stage seeds are derived from the
//! top-level `seed`. [`RunConfigFile::normalized`] spells every other key
//! out, so a normalized file parses back to itself. Derived seeds span the
//! full `u64` range, which TOML integers cannot hold, so they stay implicit.

use std::path::{Path, PathBuf};

use autosem_core::gp::Smoothness;
use autosem_core::{EnvSpec, Mode, PipelineConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that replaces `output.root`.
pub const OUT_ENV: &str = "AUTOSEM_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default = "current_schema")]
    pub schema_version: u32,
    /// Root seed; per-stage seeds left unset derive from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Seed of the environment's synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub bandit: BanditSection,
    #[serde(default)]
    pub stage2: Stage2Section,
    #[serde(default)]
    pub environment: EnvSpec,
}

fn current_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_mode() -> Mode {
    Mode::Full
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory holding run directories; `AUTOSEM_OUT` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<String>,
    /// Run directory name under the root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_prior_boost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_task_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches_per_round: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Section {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_initial: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Smoothness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        RunConfigFile {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            mode: Mode::Full,
            data_seed: None,
            output: OutputSection::default(),
            bandit: BanditSection::default(),
            stage2: Stage2Section::default(),
            environment: EnvSpec::default(),
        }
    }
}

impl RunConfigFile {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Replaces the root seed and forgets explicit per-stage seeds.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.data_seed = None;
        self.bandit.rng_seed = None;
        self.stage2.rng_seed = None;
    }

    /// Builds and validates the pipeline configuration.
    pub fn resolve(&self) -> Result<PipelineConfig, CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "invalid config `schema_version`: {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut config = PipelineConfig::new(self.environment.clone(), self.seed);
        config.mode = self.mode;
        if let Some(seed) = self.data_seed {
            config.env_data_seed = seed;
        }

        let b = &self.bandit;
        let bandit = &mut config.bandit;
        set(&mut bandit.gamma, b.gamma);
        set(&mut bandit.alpha0, b.alpha0);
        set(&mut bandit.beta0, b.beta0);
        set(&mut bandit.primary_prior_boost, b.primary_prior_boost);
        set(&mut bandit.primary_task_id, b.primary_task_id);
        set(&mut bandit.n_rounds, b.n_rounds);
        set(&mut bandit.batches_per_round, b.batches_per_round);
        set(&mut bandit.rng_seed, b.rng_seed);

        let s = &self.stage2;
        let stage2 = &mut config.stage2;
        set(&mut stage2.n_initial, s.n_initial);
        set(&mut stage2.n_samples, s.n_samples);
        set(&mut stage2.ratio_max, s.ratio_max);
        set(&mut stage2.nu, s.nu);
        set(&mut stage2.lambda, s.lambda);
        set(&mut stage2.eta, s.eta);
        set(&mut stage2.pool_size, s.pool_size);
        set(&mut stage2.rng_seed, s.rng_seed);

        config.validate()?;
        Ok(config)
    }

    /// The same configuration with every key except implicit seeds written out.
    pub fn normalized(&self) -> Result<RunConfigFile, CliError> {
        let c = self.resolve()?;
        Ok(RunConfigFile {
            schema_version: SCHEMA_VERSION,
            seed: self.seed,
            mode: c.mode,
            data_seed: self.data_seed,
            output: OutputSection {
                root: Some(self.output_root()),
                name: Some(self.output_name()),
            },
            bandit: BanditSection {
                gamma: Some(c.bandit.gamma),
                alpha0: Some(c.bandit.alpha0),
                beta0: Some(c.bandit.beta0),
                primary_prior_boost: Some(c.bandit.primary_prior_boost),
                primary_task_id: Some(c.bandit.primary_task_id),
                n_rounds: Some(c.bandit.n_rounds),
                batches_per_round: Some(c.bandit.batches_per_round),
                rng_seed: self.bandit.rng_seed,
            },
            stage2: Stage2Section {
                n_initial: Some(c.stage2.n_initial),
                n_samples: Some(c.stage2.n_samples),
                ratio_max: Some(c.stage2.ratio_max),
                nu: Some(c.stage2.nu),
                lambda: Some(c.stage2.lambda),
                eta: Some(c.stage2.eta),
                pool_size: Some(c.stage2.pool_size),
                rng_seed: self.stage2.rng_seed,
            },
            environment: c.environment,
        })
    }

    pub fn output_root(&self) -> String {
        self.output.root.clone().unwrap_or_else(|| "runs".into())
    }

    pub fn output_name(&self) -> String {
        self.output.name.clone().unwrap_or_else(|| "autosem".into())
    }

    /// Run directory: `$AUTOSEM_OUT/<name>` if the variable is set, else
    /// `<output.root>/<name>`.
    pub fn run_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUT_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(self.output_root()));
        root.join(self.output_name())
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
