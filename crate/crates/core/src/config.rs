//! JSON experiment configuration.
//!
//! Agent numbers in files are 1-based; [`RunConfig::topology`] converts them.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Layout, NetworkState};
use crate::error::{Error, Result};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Run,
    Verify,
    Privacy,
    Attack,
    ClusterDemo,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Run => "run",
            ExperimentKind::Verify => "verify",
            ExperimentKind::Privacy => "privacy",
            ExperimentKind::Attack => "attack",
            ExperimentKind::ClusterDemo => "cluster-demo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyOptions {
    /// Agent whose initial state is replaced.
    pub victim: usize,
    /// Legitimate neighbor of the victim that absorbs the change.
    pub helper: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Lower bound on the real-block perturbation norm.
    #[serde(default = "default_min_perturbation")]
    pub min_perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOptions {
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_schedules")]
    pub schedules: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            instances: default_instances(),
            schedules: default_schedules(),
        }
    }
}

fn default_trials() -> usize {
    50
}
fn default_min_perturbation() -> f64 {
    0.1
}
fn default_instances() -> usize {
    200
}
fn default_schedules() -> usize {
    100
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub agents: usize,
    /// 1-based undirected edges.
    pub edges: Vec<[usize; 2]>,
    /// 1-based honest-but-curious agents.
    #[serde(default)]
    pub adversaries: Vec<usize>,
    pub d: usize,
    pub d_virtual: usize,
    pub sigma: f64,
    pub seed: u64,
    pub steps: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Entrywise tolerance for equality assertions.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// One real block per agent; uniform `[0, 1)` from the seed if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_real: Option<Vec<Vec<f64>>>,
    /// One virtual block per agent; uniform `[0, 1)` from the seed if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_virtual: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacyOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyOptions>,
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Parses and validates config JSON.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::config(field, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn layout(&self) -> Layout {
        Layout::new(self.d, self.d_virtual)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::config("d", "need d >= 1"));
        }
        if self.d_virtual < 3 {
            return Err(Error::config("d_virtual", "need d' >= 3"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma", "need a finite sigma > 0"));
        }
        if self.steps < 1 {
            return Err(Error::config("steps", "need steps >= 1"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config("epsilon", "need epsilon > 0"));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::config("tol", "need tol > 0"));
        }
        for (i, e) in self.edges.iter().enumerate() {
            for (s, &a) in e.iter().enumerate() {
                if a < 1 || a > self.agents {
                    return Err(Error::config(
                        format!("edges[{i}][{s}]"),
                        format!("agent {a} outside 1..={}", self.agents),
                    ));
                }
            }
        }
        for (i, &a) in self.adversaries.iter().enumerate() {
            if a < 1 || a > self.agents {
                return Err(Error::config(
                    format!("adversaries[{i}]"),
                    format!("agent {a} outside 1..={}", self.agents),
                ));
            }
        }
        let topo = self.topology()?;
        if matches!(self.kind, ExperimentKind::Run | ExperimentKind::Privacy)
            && !topo.is_connected()
        {
            return Err(Error::config("edges", "topology must be connected"));
        }
        check_blocks(
            "initial_real",
            self.initial_real.as_deref(),
            self.agents,
            self.d,
        )?;
        check_blocks(
            "initial_virtual",
            self.initial_virtual.as_deref(),
            self.agents,
            self.d_virtual,
        )?;
        if let Some(p) = &self.privacy {
            for (name, a) in [("privacy.victim", p.victim), ("privacy.helper", p.helper)] {
                if a < 1 || a > self.agents {
                    return Err(Error::config(
                        name,
                        format!("agent {a} outside 1..={}", self.agents),
                    ));
                }
                if !topo.is_legitimate(a - 1) {
                    return Err(Error::config(name, format!("agent {a} is adversarial")));
                }
            }
            if !topo.has_edge(p.victim - 1, p.helper - 1) {
                return Err(Error::config(
                    "privacy.helper",
                    "helper must neighbor the victim",
                ));
            }
            if p.trials < 1 {
                return Err(Error::config("privacy.trials", "need at least one trial"));
            }
            if p.min_perturbation.is_nan() || p.min_perturbation <= 0.0 {
                return Err(Error::config(
                    "privacy.min_perturbation",
                    "need a positive norm",
                ));
            }
        } else if self.kind == ExperimentKind::Privacy {
            return Err(Error::config("privacy", "required for kind = privacy"));
        }
        if self.kind == ExperimentKind::Attack && self.adversaries.is_empty() {
            return Err(Error::config(
                "adversaries",
                "attack needs at least one adversary",
            ));
        }
        Ok(())
    }

    /// 0-based topology.
    pub fn topology(&self) -> Result<Topology> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0] - 1, e[1] - 1)).collect();
        let adv: Vec<usize> = self.adversaries.iter().map(|a| a - 1).collect();
        Topology::new(self.agents, &edges, &adv).map_err(|e| Error::config("edges", e.to_string()))
    }

    /// Lifted initial states; missing blocks are drawn from the seed, real
    /// blocks on stream 3 and virtual blocks on stream 1.
    pub fn initial_state(&self) -> Result<NetworkState> {
        let layout = self.layout();
        let real = match &self.initial_real {
            Some(r) => r.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(3);
                (0..self.agents)
                    .map(|_| (0..self.d).map(|_| rng.gen::<f64>()).collect())
                    .collect()
            }
        };
        let virt = match &self.initial_virtual {
            Some(v) => v.clone(),
            None => layout.random_virtual_states(self.agents, self.seed),
        };
        let states = real
            .iter()
            .zip(&virt)
            .map(|(r, v)| layout.lift(r, v))
            .collect::<Result<Vec<_>>>()?;
        NetworkState::new(states)
    }

    /// Applies command-line overrides and revalidates.
    pub fn with_overrides(mut self, seed: Option<u64>, steps: Option<usize>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(s) = steps {
            self.steps = s;
        }
        self.validate()?;
        Ok(self)
    }
}

fn check_blocks(field: &str, blocks: Option<&[Vec<f64>]>, n: usize, len: usize) -> Result<()> {
    let Some(blocks) = blocks else { return Ok(()) };
    if blocks.len() != n {
        return Err(Error::config(
            field,
            format!("expected {n} rows, got {}", blocks.len()),
        ));
    }
    for (i, b) in blocks.iter().enumerate() {
        if b.len() != len {
            return Err(Error::config(
                format!("{field}[{i}]"),
                format!("expected {len} entries, got {}", b.len()),
            ));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::config(format!("{field}[{i}]"), "non-finite entry"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "kind": "run", "agents": 3, "edges": [[1, 2], [2, 3]],
        "d": 2, "d_virtual": 3, "sigma": 1.0, "seed": 7, "steps": 10
    }"#;

    fn with(key: &str, value: &str) -> String {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        v[key] = serde_json::from_str(value).unwrap();
        v.to_string()
    }

    #[test]
    fn defaults_are_filled() {
        let c = parse_config(BASE).unwrap();
        assert_eq!(c.epsilon, 1e-8);
        assert_eq!(c.tol, 1e-10);
        assert!(c.adversaries.is_empty());
    }

    #[test]
    fn small_virtual_dimension_is_rejected() {
        let err = parse_config(&with("d_virtual", "2")).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "d_virtual"));
    }

    #[test]
    fn parse_errors_name_the_field() {
        let err = parse_config(&with("sigma", "\"two\"")).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "sigma"));
        let err = parse_config(&with("edges", "[[1, 2], [2, 9]]")).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "edges[1][1]"));
        let err = parse_config(&with("initial_real", "[[0.1, 0.2], [0.3]]")).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "initial_real"));
    }

    #[test]
    fn run_needs_connected_topology() {
        let err = parse_config(&with("edges", "[[1, 2]]")).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "edges"));
    }

    #[test]
    fn random_fill_is_deterministic() {
        let c = parse_config(BASE).unwrap();
        let a = c.initial_state().unwrap();
        let b = c.initial_state().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 5);
        let other = c
            .clone()
            .with_overrides(Some(8), None)
            .unwrap()
            .initial_state()
            .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn overrides_are_validated() {
        let c = parse_config(BASE).unwrap();
        assert_eq!(c.clone().with_overrides(None, Some(3)).unwrap().steps, 3);
        assert!(c.with_overrides(None, Some(0)).is_err());
    }

    #[test]
    fn privacy_options_are_checked() {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        v["kind"] = "privacy".into();
        assert!(parse_config(&v.to_string()).is_err());
        v["privacy"] = serde_json::json!({"victim": 1, "helper": 3});
        let err = parse_config(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "privacy.helper"));
        v["privacy"] = serde_json::json!({"victim": 2, "helper": 3});
        assert_eq!(
            parse_config(&v.to_string())
                .unwrap()
                .privacy
                .unwrap()
                .trials,
            50
        );
    }
}
