//! Experiment configuration files and the built-in presets.
//!
//! A config is TOML unless the file name ends in `.json`. The scenario is
//! either a preset name or a full inline description:
//!
//! ```toml
//! scenario = "scenario1"
//! methods = ["bp", "gtbp-2best", "gtbp-4best"]
//! runs = 25
//!
//! [filter]
//! num_particles = 1000
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gtbp::filter::FilterConfig;
use gtbp::metrics::OspaParams;
use gtbp::sim::{build_scenario1, build_scenario2, ScenarioSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Targets in the scenario-2 preset formation.
pub const SCENARIO2_TARGETS: usize = 5;
/// Spacing of the scenario-2 formation, in m.
pub const SCENARIO2_SPACING: f64 = 50.0;

/// A tracker variant evaluated by an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Grouping disabled; every track moves on its own.
    Bp,
    /// Group tracking keeping the `m` best partitions.
    Gtbp { m: usize },
}

impl Method {
    /// The filter settings this method runs with.
    pub fn apply(&self, base: &FilterConfig) -> FilterConfig {
        match *self {
            Method::Bp => FilterConfig { grouping: false, m_best: 1, ..base.clone() },
            Method::Gtbp { m } => FilterConfig { grouping: true, m_best: m, ..base.clone() },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Bp => f.write_str("bp"),
            Method::Gtbp { m } => write!(f, "gtbp-{m}best"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    /// Accepts `bp`, `gtbp-<M>best`, `gtbp-<M>` and `gtbp<M>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        if s == "bp" {
            return Ok(Method::Bp);
        }
        let rest = s
            .strip_prefix("gtbp")
            .ok_or_else(|| format!("unknown method `{s}`, expected bp or gtbp-<M>best"))?;
        let rest = rest.trim_start_matches('-');
        let rest = rest.strip_suffix("best").unwrap_or(rest);
        match rest.parse::<usize>() {
            Ok(m) if m >= 1 => Ok(Method::Gtbp { m }),
            _ => Err(format!("bad partition count in method `{s}`")),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// A preset name or a full scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Preset(String),
    Inline(Box<ScenarioSpec>),
}

impl ScenarioSource {
    pub fn resolve(&self) -> Result<ScenarioSpec> {
        match self {
            ScenarioSource::Inline(s) => Ok((**s).clone()),
            ScenarioSource::Preset(name) => match name.as_str() {
                "scenario1" => Ok(build_scenario1()),
                "scenario2" => Ok(build_scenario2(SCENARIO2_TARGETS, SCENARIO2_SPACING)?),
                other => Err(CliError::Config(format!(
                    "scenario: unknown preset `{other}` (expected scenario1 or scenario2)"
                ))),
            },
        }
    }
}

fn default_runs() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Truncates the scenario to its first `steps` scans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Output directory; the `--out` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// When false the timing columns are written as zero, which makes the
    /// metrics file byte-reproducible.
    #[serde(default = "yes")]
    pub record_timings: bool,
    #[serde(default = "yes")]
    pub write_tracks: bool,
    pub methods: Vec<Method>,
    pub scenario: ScenarioSource,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub ospa: OspaParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, JSON if the extension says so and TOML otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Runtime(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.runs < 1 {
            return bad("runs: must be >= 1");
        }
        if self.methods.is_empty() {
            return bad("methods: at least one method is required");
        }
        let spec = self.scenario.resolve()?;
        spec.validate()?;
        self.filter.validate()?;
        for m in &self.methods {
            m.apply(&self.filter).validate()?;
        }
        self.ospa.validate()?;
        if (self.filter.dt - spec.dt).abs() > 1e-12 {
            return Err(CliError::Config(format!(
                "filter.dt: {} does not match the scenario sampling interval {}",
                self.filter.dt, spec.dt
            )));
        }
        if let Some(s) = self.steps {
            if s < 1 || s > spec.duration {
                return Err(CliError::Config(format!(
                    "steps: must lie in [1, {}]",
                    spec.duration
                )));
            }
        }
        Ok(())
    }

    /// Number of scans each run processes.
    pub fn num_steps(&self) -> Result<usize> {
        let spec = self.scenario.resolve()?;
        Ok(self.steps.unwrap_or(spec.duration))
    }
}

/// Filter settings matched to a scenario: the pruning threshold scales with
/// the clutter rate.
pub fn filter_for(spec: &ScenarioSpec, num_particles: usize) -> FilterConfig {
    FilterConfig {
        num_particles,
        prune_threshold: 1e-5 * spec.clutter_mean,
        dt: spec.dt,
        ..FilterConfig::default()
    }
}

/// The built-in experiments. Scenario 1 uses 3000 particles; scenario 2
/// uses 1000 particles and a fixed 20 association iterations.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let methods = vec![Method::Bp, Method::Gtbp { m: 2 }, Method::Gtbp { m: 4 }];
    let source = ScenarioSource::Preset(name.to_string());
    let spec = source.resolve()?;
    let filter = match name {
        "scenario1" => filter_for(&spec, 3000),
        _ => FilterConfig {
            bp_max_iter: 20,
            bp_tol: 0.0,
            ..filter_for(&spec, 1000)
        },
    };
    Ok(ExperimentConfig {
        runs: 100,
        base_seed: 0,
        steps: None,
        out: None,
        record_timings: true,
        write_tracks: true,
        methods,
        scenario: ScenarioSource::Inline(Box::new(spec)),
        filter,
        ospa: OspaParams::default(),
    })
}
