//! Experiment configuration: TOML parsing with strict key checking, followed
//! by a validation pass that reports every violation at once.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::dynamics::{BiasProfile, InitialSettings};
use crate::graph::{build_network, generate, parse_edge_list, Network};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSection,
    pub bias: BiasSection,
    #[serde(default)]
    pub init: InitSection,
    pub run: RunSection,
    #[serde(default)]
    pub estimators: EstimatorsSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    /// `complete:n`, `cycle:n`, `star:n`, or `gnp:n:p:seed`.
    pub generator: Option<String>,
    /// Path to an `i j weight` edge-list file.
    pub edge_list: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PerAgent {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl PerAgent {
    fn resolve(&self, n: usize, what: &str, violations: &mut Vec<String>) -> Vec<f64> {
        match self {
            PerAgent::Scalar(v) => vec![*v; n],
            PerAgent::Vector(vs) => {
                if vs.len() != n {
                    violations.push(format!(
                        "{what}: expected {n} per-agent values, got {}",
                        vs.len()
                    ));
                    vec![f64::NAN; n]
                } else {
                    vs.clone()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSection {
    /// Scalar applied to all agents or one value per agent.
    pub gamma: Option<PerAgent>,
    /// Alternative: consecutive blocks of agents sharing a value.
    pub groups: Option<Vec<GammaGroup>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaGroup {
    pub count: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    #[serde(default = "default_b1")]
    pub b1: PerAgent,
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection { b1: default_b1() }
    }
}

fn default_b1() -> PerAgent {
    PerAgent::Scalar(0.5)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: u64,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    #[serde(default = "default_replications")]
    pub replications: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_memory")]
    pub max_memory_mb: u64,
}

fn default_checkpoints() -> usize {
    50
}

fn default_replications() -> u64 {
    1
}

fn default_memory() -> u64 {
    4096
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorsSection {
    #[serde(default = "default_estimators")]
    pub enabled: Vec<String>,
}

impl Default for EstimatorsSection {
    fn default() -> Self {
        EstimatorsSection {
            enabled: default_estimators(),
        }
    }
}

fn default_estimators() -> Vec<String> {
    vec!["mle".into(), "belief".into(), "equilibrium".into()]
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Enables martingale traces with the pair (γᵢ, factor·γᵢ) per agent.
    pub martingale_factor: Option<f64>,
    pub coupled: Option<CoupledSection>,
    pub rate: Option<RateSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledSection {
    /// Coupling begins at the first checkpoint with max βᵢ at or below this.
    #[serde(default = "default_start_threshold")]
    pub start_threshold: f64,
    /// Disc radius the α bounds are computed for; the sandwich assertion is
    /// suspended (and flagged) if β ever leaves this disc after the start.
    #[serde(default = "default_validity_radius")]
    pub validity_radius: f64,
}

impl Default for CoupledSection {
    fn default() -> Self {
        CoupledSection {
            start_threshold: default_start_threshold(),
            validity_radius: default_validity_radius(),
        }
    }
}

fn default_start_threshold() -> f64 {
    0.2
}

fn default_validity_radius() -> f64 {
    0.35
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSection {
    /// Fit window as fractions of the horizon.
    #[serde(default = "default_window")]
    pub window: [f64; 2],
}

impl Default for RateSection {
    fn default() -> Self {
        RateSection {
            window: default_window(),
        }
    }
}

fn default_window() -> [f64; 2] {
    [0.1, 1.0]
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Overrides supplied on the command line; they beat the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub replications: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Everything the runner needs, with all invariants already enforced.
#[derive(Debug)]
pub struct ResolvedExperiment {
    pub net: Network,
    pub bias: BiasProfile,
    pub init: InitialSettings,
    pub horizon: u64,
    pub checkpoints: Vec<u64>,
    pub replications: u64,
    pub base_seed: u64,
    pub mle_enabled: bool,
    pub belief_enabled: bool,
    pub equilibrium_enabled: bool,
    pub martingale_factor: Option<f64>,
    pub coupled: Option<CoupledSection>,
    pub rate_window: Option<[f64; 2]>,
    pub out_dir: PathBuf,
    /// Raw config text, echoed into the manifest.
    pub config_text: String,
}

/// Parse a config document. Duplicate keys and unknown keys are parse errors;
/// everything else is collected into one validation report.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Geometric checkpoint grid on [2, horizon], strictly increasing, last = T.
pub fn geometric_checkpoints(horizon: u64, count: usize) -> Vec<u64> {
    assert!(horizon >= 2);
    let count = count.max(2);
    let lo = 2.0f64;
    let hi = horizon as f64;
    let mut ts: Vec<u64> = (0..count)
        .map(|k| {
            let frac = k as f64 / (count - 1) as f64;
            (lo * (hi / lo).powf(frac)).round() as u64
        })
        .collect();
    ts.dedup();
    if *ts.last().unwrap() != horizon {
        ts.push(horizon);
    }
    ts
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Validate and resolve a parsed config (builds the graph, bias profile and
/// initial settings). All violations are reported together.
pub fn resolve(
    cfg: &ExperimentConfig,
    text: &str,
    overrides: &Overrides,
) -> Result<ResolvedExperiment, ConfigError> {
    let mut violations = Vec::new();

    let net = match (&cfg.graph.generator, &cfg.graph.edge_list) {
        (Some(_), Some(_)) => {
            violations.push("graph: set exactly one of generator/edge_list, not both".into());
            None
        }
        (None, None) => {
            violations.push("graph: one of generator or edge_list is required".into());
            None
        }
        (Some(spec), None) => match generate(spec) {
            Ok(net) => Some(net),
            Err(e) => {
                violations.push(format!("graph.generator: {e}"));
                None
            }
        },
        (None, Some(path)) => match std::fs::read_to_string(path) {
            Err(e) => {
                violations.push(format!("graph.edge_list: cannot read {}: {e}", path.display()));
                None
            }
            Ok(text) => match parse_edge_list(&text).and_then(|edges| build_network(&edges)) {
                Ok(net) => Some(net),
                Err(e) => {
                    violations.push(format!("graph.edge_list: {e}"));
                    None
                }
            },
        },
    };

    let horizon = overrides.horizon.unwrap_or(cfg.run.horizon);
    if horizon < 2 {
        violations.push(format!("run.horizon = {horizon} must be at least 2"));
    }
    let replications = overrides.replications.unwrap_or(cfg.run.replications);
    if replications < 1 {
        violations.push("run.replications must be at least 1".into());
    }
    if cfg.run.checkpoints < 2 {
        violations.push("run.checkpoints must be at least 2".into());
    }

    let mut mle_enabled = false;
    let mut belief_enabled = false;
    let mut equilibrium_enabled = false;
    for name in &cfg.estimators.enabled {
        match name.as_str() {
            "mle" => mle_enabled = true,
            "belief" => belief_enabled = true,
            "equilibrium" => equilibrium_enabled = true,
            other => violations.push(format!(
                "estimators.enabled: unknown estimator '{other}' (expected mle, belief, equilibrium)"
            )),
        }
    }

    if let Some(f) = cfg.diagnostics.martingale_factor {
        if !(f > 0.0) || (f - 1.0).abs() < 1e-9 {
            violations.push(format!(
                "diagnostics.martingale_factor = {f} must be positive and not 1"
            ));
        }
    }
    if let Some(c) = &cfg.diagnostics.coupled {
        if !(c.start_threshold > 0.0 && c.start_threshold < 1.0) {
            violations.push(format!(
                "diagnostics.coupled.start_threshold = {} outside (0,1)",
                c.start_threshold
            ));
        }
        if !(c.validity_radius > 0.0 && c.validity_radius < 1.0)
            || c.validity_radius < c.start_threshold
        {
            violations.push(format!(
                "diagnostics.coupled.validity_radius = {} must lie in (0,1) at or above start_threshold",
                c.validity_radius
            ));
        }
    }
    if let Some(r) = &cfg.diagnostics.rate {
        if !(r.window[0] > 0.0 && r.window[0] < r.window[1] && r.window[1] <= 1.0) {
            violations.push(format!(
                "diagnostics.rate.window = {:?} must satisfy 0 < lo < hi <= 1",
                r.window
            ));
        }
    }

    let (bias, init) = if let Some(net) = &net {
        let n = net.n();
        let gamma = match (&cfg.bias.gamma, &cfg.bias.groups) {
            (Some(_), Some(_)) => {
                violations.push("bias: set exactly one of gamma/groups, not both".into());
                None
            }
            (None, None) => {
                violations.push("bias: one of gamma or groups is required".into());
                None
            }
            (Some(spec), None) => Some(spec.resolve(n, "bias.gamma", &mut violations)),
            (None, Some(groups)) => {
                let total: usize = groups.iter().map(|g| g.count).sum();
                if total != n {
                    violations.push(format!(
                        "bias.groups: counts sum to {total}, graph has {n} agents"
                    ));
                    None
                } else {
                    Some(
                        groups
                            .iter()
                            .flat_map(|g| std::iter::repeat_n(g.gamma, g.count))
                            .collect(),
                    )
                }
            }
        };
        let bias = gamma.and_then(|g| {
            if g.iter().any(|v| v.is_nan()) {
                return None;
            }
            match BiasProfile::new(g) {
                Ok(b) => Some(b),
                Err(e) => {
                    violations.push(format!("bias: {e}"));
                    None
                }
            }
        });
        let b1 = cfg.init.b1.resolve(n, "init.b1", &mut violations);
        let init = if b1.iter().any(|v| v.is_nan()) {
            None
        } else {
            match InitialSettings::new(net, &b1) {
                Ok(i) => Some(i),
                Err(e) => {
                    violations.push(format!("init.b1: {e}"));
                    None
                }
            }
        };

        // History retention is the dominant memory cost: n·(T−1) (μ, ψ) pairs
        // per in-flight replication.
        let per_rep_bytes = (n as u64) * horizon.max(2) * 24;
        let workers = (rayon::current_num_threads() as u64).min(replications.max(1));
        let estimated_mb = per_rep_bytes * workers / (1024 * 1024);
        if estimated_mb > cfg.run.max_memory_mb {
            violations.push(format!(
                "run: estimated history memory {estimated_mb} MiB (n = {n}, horizon = {horizon}, {workers} parallel replications) exceeds run.max_memory_mb = {}; lower the horizon or raise the budget",
                cfg.run.max_memory_mb
            ));
        }
        (bias, init)
    } else {
        (None, None)
    };

    if !violations.is_empty() {
        return Err(ConfigError::Validation(violations));
    }

    let out_dir = overrides
        .out_dir
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    Ok(ResolvedExperiment {
        net: net.unwrap(),
        bias: bias.unwrap(),
        init: init.unwrap(),
        horizon,
        checkpoints: geometric_checkpoints(horizon, cfg.run.checkpoints),
        replications,
        base_seed: overrides.seed.unwrap_or(cfg.run.base_seed),
        mle_enabled,
        belief_enabled,
        equilibrium_enabled,
        martingale_factor: cfg.diagnostics.martingale_factor,
        coupled: cfg.diagnostics.coupled.clone(),
        rate_window: cfg.diagnostics.rate.as_ref().map(|r| r.window),
        out_dir,
        config_text: text.to_string(),
    })
}

/// Convenience: parse + resolve in one call.
pub fn load(path: &Path, overrides: &Overrides) -> Result<ResolvedExperiment, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg = parse_config(&text)?;
    resolve(&cfg, &text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[graph]
generator = \"complete:5\"

[bias]
gamma = 2.0

[run]
horizon = 1000
";

    #[test]
    fn minimal_config_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        let resolved = resolve(&cfg, MINIMAL, &Overrides::default()).unwrap();
        assert_eq!(resolved.replications, 1);
        assert_eq!(resolved.net.n(), 5);
        assert_eq!(resolved.init.b1(0), 0.5);
        assert!(resolved.mle_enabled && resolved.belief_enabled && resolved.equilibrium_enabled);
        assert_eq!(*resolved.checkpoints.last().unwrap(), 1000);
        assert_eq!(resolved.checkpoints[0], 2);
        assert!(resolved.checkpoints.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn neutral_gamma_is_a_validation_error() {
        let text = MINIMAL.replace("2.0", "1.0");
        let cfg = parse_config(&text).unwrap();
        let err = resolve(&cfg, &text, &Overrides::default()).unwrap_err();
        match err {
            ConfigError::Validation(v) => {
                assert!(v.iter().any(|m| m.contains("neutral")), "{v:?}")
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn duplicate_and_unknown_keys_are_parse_errors() {
        let dup = "
[run]
horizon = 10
horizon = 20
";
        assert!(matches!(parse_config(dup), Err(ConfigError::Parse(_))));
        let unknown = MINIMAL.to_string() + "\n[run2]\nx = 1\n";
        assert!(matches!(parse_config(&unknown), Err(ConfigError::Parse(_))));
        let unknown_field = MINIMAL.replace("horizon = 1000", "horizon = 1000\nhorizn = 3");
        assert!(matches!(
            parse_config(&unknown_field),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn violations_are_collected_together() {
        let text = "
[graph]
generator = \"complete:4\"

[bias]
gamma = [2.0, 0.5]

[run]
horizon = 1
replications = 0
";
        let cfg = parse_config(text).unwrap();
        match resolve(&cfg, text, &Overrides::default()).unwrap_err() {
            ConfigError::Validation(v) => {
                assert!(v.len() >= 3, "{v:?}");
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn groups_and_overrides() {
        let text = "
[graph]
generator = \"complete:10\"

[bias]
groups = [{ count = 5, gamma = 2.0 }, { count = 5, gamma = 0.5 }]

[run]
horizon = 500
base_seed = 7
";
        let cfg = parse_config(text).unwrap();
        let over = Overrides {
            seed: Some(99),
            horizon: Some(300),
            replications: Some(4),
            out_dir: Some(PathBuf::from("/tmp/x")),
        };
        let r = resolve(&cfg, text, &over).unwrap();
        assert_eq!(r.bias.gamma(0), 2.0);
        assert_eq!(r.bias.gamma(9), 0.5);
        assert_eq!(r.base_seed, 99);
        assert_eq!(r.horizon, 300);
        assert_eq!(r.replications, 4);
        assert_eq!(r.out_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn memory_budget_refusal() {
        let text = "
[graph]
generator = \"complete:100\"

[bias]
gamma = 2.0

[run]
horizon = 100000000
max_memory_mb = 64
";
        let cfg = parse_config(text).unwrap();
        match resolve(&cfg, text, &Overrides::default()).unwrap_err() {
            ConfigError::Validation(v) => {
                assert!(v.iter().any(|m| m.contains("max_memory_mb")), "{v:?}")
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn checkpoint_grid_is_geometric_and_capped() {
        let cps = geometric_checkpoints(100_000, 50);
        assert_eq!(cps[0], 2);
        assert_eq!(*cps.last().unwrap(), 100_000);
        assert!(cps.windows(2).all(|w| w[0] < w[1]));
        let tiny = geometric_checkpoints(4, 50);
        assert_eq!(tiny, vec![2, 3, 4]);
    }
}
