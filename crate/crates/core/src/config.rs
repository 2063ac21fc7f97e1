//! Pipeline configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equiv::{DEFAULT_MAX_FREE_INPUTS, DEFAULT_UNROLL};
use crate::export::DEFAULT_RATIOS;
use crate::graph::DEFAULT_RECONV_RADIUS;
use crate::miner::{ConeBounds, FilterConfig, DEFAULT_THRESHOLD_PCT};
use crate::patterns::NamePatterns;
use crate::policy::{TrainHyper, DEFAULT_RANK_WEIGHTS};
use crate::scoap::DEFAULT_ALPHA;

pub const OUTPUT_DIR_ENV: &str = "HTGEN_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Bench,
    Verilog,
}

impl InputFormat {
    pub fn from_path(p: &Path) -> Option<Self> {
        match p.extension()?.to_str()? {
            "bench" => Some(InputFormat::Bench),
            "v" | "sv" => Some(InputFormat::Verilog),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    /// Gate cap per insertion; default `max(32, cells/1000)`.
    pub gate_budget: Option<usize>,
    /// Ranked candidates attempted per run.
    pub candidates: usize,
    /// Stop after this many accepted insertions.
    pub max_accepted: usize,
    /// Refuse an insertion that would push trigger+payload nets above this
    /// fraction of all nets.
    pub max_positive_fraction: Option<f64>,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            gate_budget: None,
            candidates: 64,
            max_accepted: 8,
            max_positive_fraction: Some(0.001),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivConfig {
    pub max_free_inputs: usize,
    /// Vectors for sampled checking once the exhaustive bound is exceeded.
    pub random_vectors: u64,
    pub unroll: u32,
}

impl Default for EquivConfig {
    fn default() -> Self {
        EquivConfig {
            max_free_inputs: DEFAULT_MAX_FREE_INPUTS,
            random_vectors: 1 << 16,
            unroll: DEFAULT_UNROLL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Trained weights; ranking falls back to the stealth proxy without them.
    pub weights: Option<PathBuf>,
    pub rank_weights: (f64, f64),
    /// Append-only history log; appended after each run when set.
    pub history: Option<PathBuf>,
    /// Retrain and rewrite `weights` after a run that grew the history.
    pub retrain: bool,
    pub train: TrainHyper,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            weights: None,
            rank_weights: DEFAULT_RANK_WEIGHTS,
            history: None,
            retrain: false,
            train: TrainHyper::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub mining: u64,
    pub templates: u64,
    pub splits: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            mining: 1,
            templates: 2,
            splits: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub format: Option<InputFormat>,
    pub alpha: f64,
    pub threshold_pct: f64,
    pub reconv_radius: u32,
    pub filters: FilterConfig,
    pub cone: ConeBounds,
    /// Descriptor directory; the built-in library when unset.
    pub templates: Option<PathBuf>,
    pub budget: BudgetConfig,
    pub equivalence: EquivConfig,
    pub policy: PolicyConfig,
    pub seeds: Seeds,
    pub split_ratios: (f64, f64, f64),
    pub output_dir: PathBuf,
    pub scan_patterns: NamePatterns,
    pub clock: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::new(),
            format: None,
            alpha: DEFAULT_ALPHA,
            threshold_pct: DEFAULT_THRESHOLD_PCT,
            reconv_radius: DEFAULT_RECONV_RADIUS,
            filters: FilterConfig::default(),
            cone: ConeBounds::default(),
            templates: None,
            budget: BudgetConfig::default(),
            equivalence: EquivConfig::default(),
            policy: PolicyConfig::default(),
            seeds: Seeds::default(),
            split_ratios: DEFAULT_RATIOS,
            output_dir: PathBuf::from("out"),
            scan_patterns: NamePatterns::scan_defaults(),
            clock: None,
        }
    }
}

impl PipelineConfig {
    /// Settings for designs of a few dozen nets, where the default rarity
    /// threshold and class-imbalance caps leave nothing to insert.
    pub fn small_design(input: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            input: input.into(),
            threshold_pct: 50.0,
            filters: FilterConfig {
                max_candidate_fraction: None,
                ..FilterConfig::default()
            },
            budget: BudgetConfig {
                max_positive_fraction: None,
                max_accepted: 2,
                ..BudgetConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base_dir.join(&*p);
            }
        };
        fix(&mut cfg.input);
        fix(&mut cfg.output_dir);
        if let Some(t) = cfg.templates.as_mut() {
            fix(t);
        }
        if let Some(w) = cfg.policy.weights.as_mut() {
            fix(w);
        }
        if let Some(h) = cfg.policy.history.as_mut() {
            fix(h);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Applies the output-directory environment override.
    pub fn with_env(mut self) -> Self {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
        self
    }

    pub fn input_format(&self) -> Option<InputFormat> {
        self.format.or_else(|| InputFormat::from_path(&self.input))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !self.input.is_file() {
            return bad(format!("input `{}` does not exist", self.input.display()));
        }
        if self.input_format().is_none() {
            return bad(format!("cannot infer the format of `{}`", self.input.display()));
        }
        if !(0.5..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0.5, 1]", self.alpha));
        }
        if !(0.0..100.0).contains(&self.threshold_pct) {
            return bad(format!("threshold_pct {} outside [0, 100)", self.threshold_pct));
        }
        if self.cone.max_nodes == 0 || self.cone.max_depth == 0 {
            return bad("cone bounds must be positive".into());
        }
        let f = &self.filters;
        if !(0.0..=1.0).contains(&f.min_overlap) || !(0.0..=1.0).contains(&f.min_disjointness) {
            return bad("filter thresholds must lie in [0, 1]".into());
        }
        if let Some(x) = f.max_candidate_fraction {
            if !(x > 0.0 && x <= 1.0) {
                return bad(format!("max_candidate_fraction {x} outside (0, 1]"));
            }
        }
        if let Some(x) = self.budget.max_positive_fraction {
            if !(x > 0.0 && x <= 1.0) {
                return bad(format!("max_positive_fraction {x} outside (0, 1]"));
            }
        }
        if self.budget.candidates == 0 || self.budget.max_accepted == 0 {
            return bad("candidate and acceptance budgets must be positive".into());
        }
        if self.equivalence.random_vectors == 0 {
            return bad("random_vectors must be positive".into());
        }
        let (wa, ws) = self.policy.rank_weights;
        if !(wa >= 0.0 && ws >= 0.0 && wa + ws > 0.0) {
            return bad(format!("rank weights ({wa}, {ws}) must be non-negative with a positive sum"));
        }
        let r = self.split_ratios;
        if !(r.0 > 0.0 && r.1 > 0.0 && r.2 > 0.0 && (r.0 + r.1 + r.2 - 1.0).abs() <= 1e-9) {
            return bad(format!("split ratios {r:?} must be positive and sum to 1"));
        }
        if let Some(t) = &self.templates {
            if !t.is_dir() {
                return bad(format!("template directory `{}` does not exist", t.display()));
            }
        }
        if let Some(w) = &self.policy.weights {
            if !w.is_file() && !self.policy.retrain {
                return bad(format!("policy weights `{}` do not exist", w.display()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_defaults_and_overrides() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
        let cfg = PipelineConfig::from_toml(
            r#"
input = "fixtures/c17.bench"
threshold_pct = 60.0
scan_patterns = ["se", "ti*"]

[seeds]
templates = 9

[budget]
max_accepted = 3
"#,
            dir,
        )
        .unwrap();
        assert_eq!(cfg.threshold_pct, 60.0);
        assert_eq!(cfg.seeds.templates, 9);
        assert_eq!(cfg.seeds.splits, Seeds::default().splits);
        assert_eq!(cfg.budget.max_accepted, 3);
        assert_eq!(cfg.budget.candidates, 64);
        assert!(cfg.scan_patterns.matches("ti0"));
        assert_eq!(cfg.input_format(), Some(InputFormat::Bench));
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
        assert!(matches!(
            PipelineConfig::from_toml("nonsense = 1", dir),
            Err(ConfigError::Toml(_))
        ));
        let mut cfg = PipelineConfig::small_design(dir.join("fixtures/c17.bench"));
        cfg.validate().unwrap();
        cfg.alpha = 2.0;
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig::small_design(dir.join("fixtures/missing.bench"));
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::small_design(dir.join("fixtures/c17.bench"));
        cfg.split_ratios = (0.5, 0.5, 0.5);
        assert!(cfg.validate().is_err());
    }
}
