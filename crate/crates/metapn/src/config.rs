//! Experiment configuration files.
//!
//! ```toml
//! bundle = "data/cora_ml"
//! method = "meta-pn"
//! shots = 5
//! k_max = 10
//! runs = 10
//! out_dir = "results"
//!
//! [train]
//! eta_theta = 0.01
//! patience = 100
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use metapn_core::meta::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("missing required field `{0}`")]
    Missing(&'static str),

    #[error("runs = {runs} but {seeds} seeds were listed")]
    RunsSeedsMismatch { runs: usize, seeds: usize },

    #[error("runs must be at least 1")]
    NoRuns,

    #[error("unknown method {0:?} (expected meta-pn, lp, mlp or static-lp)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MetaPn,
    Lp,
    Mlp,
    StaticLp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::MetaPn, Method::Lp, Method::Mlp, Method::StaticLp];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MetaPn => "meta-pn",
            Method::Lp => "lp",
            Method::Mlp => "mlp",
            Method::StaticLp => "static-lp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ConfigError::UnknownMethod(s.into()))
    }
}

/// `[train]` table: any subset of the trainer's hyperparameters. `k_max` and
/// the RNG seed are set per run by the experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub eta_theta: Option<f64>,
    pub eta_phi: Option<f64>,
    pub epsilon_scale: Option<f64>,
    pub batch_size: Option<usize>,
    pub l2_lambda: Option<f64>,
    pub dropout: Option<f64>,
    pub hidden_dim: Option<usize>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub finetune_epochs: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            eta_theta,
            eta_phi,
            epsilon_scale,
            batch_size,
            l2_lambda,
            dropout,
            hidden_dim,
            patience,
            max_epochs,
            finetune_epochs
        );
        cfg
    }
}

/// The file as written; every field is optional so command-line flags can
/// fill the gaps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub bundle: Option<PathBuf>,
    pub method: Option<Method>,
    /// Methods swept by the K ablation.
    pub methods: Option<Vec<Method>>,
    pub shots: Option<usize>,
    pub k_max: Option<usize>,
    pub alpha: Option<f64>,
    pub runs: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub val_per_class: Option<usize>,
    pub out_dir: Option<PathBuf>,
    /// Worker threads for independent seeds; defaults to the core count.
    pub threads: Option<usize>,
    #[serde(default)]
    pub train: TrainOverrides,
}

impl ConfigFile {
    /// Parses a file and resolves its relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut file: ConfigFile = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut file.bundle, &mut file.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(file)
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let seeds = match (&self.seeds, self.runs) {
            (Some(seeds), Some(runs)) if runs != seeds.len() => {
                return Err(ConfigError::RunsSeedsMismatch {
                    runs,
                    seeds: seeds.len(),
                })
            }
            (Some(seeds), _) => seeds.clone(),
            (None, runs) => (0..runs.unwrap_or(DEFAULT_RUNS) as u64).collect(),
        };
        if seeds.is_empty() {
            return Err(ConfigError::NoRuns);
        }
        Ok(ExperimentConfig {
            bundle: self.bundle.clone().ok_or(ConfigError::Missing("bundle"))?,
            method: self.method.unwrap_or(Method::MetaPn),
            shots: self.shots.ok_or(ConfigError::Missing("shots"))?,
            k_max: self.k_max.unwrap_or(DEFAULT_K),
            alpha: self.alpha.unwrap_or(DEFAULT_ALPHA),
            seeds,
            val_per_class: self.val_per_class.unwrap_or(DEFAULT_VAL_PER_CLASS),
            out_dir: self.out_dir.clone(),
            threads: self.threads,
            train: self.train.clone(),
        })
    }
}

pub const DEFAULT_RUNS: usize = 10;
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_VAL_PER_CLASS: usize = 30;

/// A fully specified multi-seed experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub bundle: PathBuf,
    pub method: Method,
    pub shots: usize,
    pub k_max: usize,
    /// Teleport probability of the static PPR pseudo-labels.
    pub alpha: f64,
    /// One run per seed; each seed draws its own split and initialization.
    pub seeds: Vec<u64>,
    pub val_per_class: usize,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub train: TrainOverrides,
}

impl ExperimentConfig {
    pub fn new(bundle: impl Into<PathBuf>, method: Method, shots: usize) -> Self {
        Self {
            bundle: bundle.into(),
            method,
            shots,
            k_max: DEFAULT_K,
            alpha: DEFAULT_ALPHA,
            seeds: (0..DEFAULT_RUNS as u64).collect(),
            val_per_class: DEFAULT_VAL_PER_CLASS,
            out_dir: None,
            threads: None,
            train: TrainOverrides::default(),
        }
    }

    pub fn runs(&self) -> usize {
        self.seeds.len()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            k_max: self.k_max,
            rng_seed: seed,
            ..self.train.apply(TrainConfig::default())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let file: ConfigFile = toml::from_str(
            r#"
            bundle = "/data/sbm"
            method = "static-lp"
            methods = ["meta-pn", "static-lp"]
            shots = 3
            k_max = 5
            alpha = 0.2
            seeds = [4, 5]
            out_dir = "/tmp/out"

            [train]
            eta_theta = 0.05
            patience = 7
            "#,
        )
        .unwrap();
        let cfg = file.resolve().unwrap();
        assert_eq!(cfg.method, Method::StaticLp);
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.runs(), 2);
        let train = cfg.train_config(5);
        assert_eq!(train.eta_theta, 0.05);
        assert_eq!(train.patience, 7);
        assert_eq!(train.k_max, 5);
        assert_eq!(train.rng_seed, 5);
        assert_eq!(train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn defaults() {
        let file: ConfigFile = toml::from_str("bundle = \"b\"\nshots = 5\n").unwrap();
        let cfg = file.resolve().unwrap();
        assert_eq!(cfg.method, Method::MetaPn);
        assert_eq!(cfg.seeds, (0..10).collect::<Vec<u64>>());
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.k_max, 10);
        assert_eq!(cfg.val_per_class, 30);
    }

    #[test]
    fn runs_must_match_seeds() {
        let file: ConfigFile = toml::from_str("bundle = \"b\"\nshots = 1\nruns = 3\nseeds = [1]").unwrap();
        assert!(matches!(
            file.resolve(),
            Err(ConfigError::RunsSeedsMismatch { runs: 3, seeds: 1 })
        ));
    }

    #[test]
    fn rejects_unknown_keys_and_methods() {
        assert!(toml::from_str::<ConfigFile>("shot = 3").is_err());
        assert!(toml::from_str::<ConfigFile>("[train]\nlr = 3").is_err());
        assert!(toml::from_str::<ConfigFile>("method = \"gcn\"").is_err());
        assert!(matches!(ConfigFile::default().resolve(), Err(ConfigError::Missing("bundle"))));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        fs::write(&path, "bundle = \"data/sbm\"\nshots = 2\nout_dir = \"/abs\"\n").unwrap();
        let file = ConfigFile::load(&path).unwrap();
        assert_eq!(file.bundle.unwrap(), dir.path().join("data/sbm"));
        assert_eq!(file.out_dir.unwrap(), PathBuf::from("/abs"));
    }
}
