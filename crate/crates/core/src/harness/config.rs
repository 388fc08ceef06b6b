//! JSON experiment configuration.
//!
//! Minimal document:
//!
//! ```json
//! {"M": 4, "topology": "full", "demands": [8, 11, 11, 6]}
//! ```
//!
//! Everything else has a default: U12 generation at every node, transfer
//! cost `x + x³`, the default step schedule and tolerances.

use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::time::Duration;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::cost_models::CostModel;
use crate::market::{Scenario, StepSchedule, DEFAULT_MAX_ITERS, DEFAULT_TOL_GAP, DEFAULT_TOL_MISMATCH};
use crate::topology::{NodeId, Topology, TopologyError, TopologyKind};
use crate::transport::DEFAULT_TIMEOUT;

pub const OUT_DIR_ENV: &str = "GRIDCLEAR_OUT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Run,
    Sweep,
    #[serde(alias = "oracle_compare")]
    OracleCompare,
    Validate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub node: NodeId,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub mode: Mode,
    /// Present iff `mode` is [`Mode::Sweep`].
    pub sweep: Option<SweepSpec>,
    pub out_dir: PathBuf,
    /// Socket address of every agent, indexed by node.
    pub agents: Option<Vec<SocketAddr>>,
    pub timeout: Duration,
}

impl ExperimentSpec {
    /// Applies the `GRIDCLEAR_OUT` override when set.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            if !dir.is_empty() {
                self.out_dir = PathBuf::from(dir);
            }
        }
    }
}

pub fn default_sweep_values() -> Vec<f64> {
    (1..=11).map(f64::from).collect()
}

enum TopologyField {
    Kind(TopologyKind),
    Custom(CustomTopology),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomTopology {
    adj: Vec<Vec<AdjEntry>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum AdjEntry {
    Bool(bool),
    Int(u8),
}

enum GenCosts {
    Shared(CostModel),
    PerNode(Vec<CostModel>),
}

/// Deserializes a sub-document, prefixing error paths with `field`. Used
/// instead of untagged enums, which discard the inner error.
fn sub<T: serde::de::DeserializeOwned>(field: &str, v: Value) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let inner = e.path().to_string();
        let path = match inner.as_str() {
            "." => field.to_string(),
            p if p.starts_with('[') => format!("{field}{p}"),
            p => format!("{field}.{p}"),
        };
        ConfigError::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

fn topology_field(v: Value) -> Result<TopologyField, ConfigError> {
    match v {
        Value::String(_) => Ok(TopologyField::Kind(sub("topology", v)?)),
        _ => Ok(TopologyField::Custom(sub("topology", v)?)),
    }
}

fn gen_costs_field(v: Value) -> Result<GenCosts, ConfigError> {
    match v {
        Value::Array(_) => Ok(GenCosts::PerNode(sub("gen_costs", v)?)),
        _ => Ok(GenCosts::Shared(sub("gen_costs", v)?)),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepField {
    node: NodeId,
    #[serde(default = "default_sweep_values")]
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentField {
    id: NodeId,
    addr: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "M", alias = "m")]
    m: usize,
    topology: Value,
    demands: Vec<f64>,
    #[serde(default, alias = "gen_cost")]
    gen_costs: Option<Value>,
    #[serde(default)]
    transfer_cost: Option<CostModel>,
    #[serde(default)]
    step: StepSchedule,
    #[serde(default)]
    tol_gap: Option<f64>,
    #[serde(default)]
    tol_mismatch: Option<f64>,
    #[serde(default)]
    max_iters: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    mode: Mode,
    #[serde(default)]
    sweep: Option<SweepField>,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(default)]
    agents: Option<Vec<AgentField>>,
    #[serde(default)]
    timeout_s: Option<f64>,
}

fn build_topology(field: TopologyField, m: usize) -> Result<Topology, ConfigError> {
    let topo_err = |e: TopologyError| ConfigError::invalid("topology", e.to_string());
    match field {
        TopologyField::Kind(kind) => Topology::build(kind, m).map_err(topo_err),
        TopologyField::Custom(CustomTopology { adj }) => {
            let mut rows = Vec::with_capacity(adj.len());
            for (i, row) in adj.into_iter().enumerate() {
                let mut out = Vec::with_capacity(row.len());
                for (j, e) in row.into_iter().enumerate() {
                    out.push(match e {
                        AdjEntry::Bool(b) => b,
                        AdjEntry::Int(0) => false,
                        AdjEntry::Int(1) => true,
                        AdjEntry::Int(v) => {
                            return Err(ConfigError::invalid(
                                &format!("topology.adj[{i}][{j}]"),
                                format!("entries must be 0/1 or booleans, got {v}"),
                            ))
                        }
                    });
                }
                rows.push(out);
            }
            if rows.len() != m {
                return Err(ConfigError::invalid(
                    "topology.adj",
                    format!("{} rows for M = {m}", rows.len()),
                ));
            }
            Topology::from_adjacency(rows).map_err(|e| match e {
                TopologyError::SelfLoop(i) => ConfigError::invalid(&format!("topology.adj[{i}][{i}]"), e.to_string()),
                other => topo_err(other),
            })
        }
    }
}

fn resolve_agents(agents: Vec<AgentField>, m: usize) -> Result<Vec<SocketAddr>, ConfigError> {
    let mut addrs: Vec<Option<SocketAddr>> = vec![None; m];
    for (k, a) in agents.into_iter().enumerate() {
        let field = format!("agents[{k}]");
        if a.id >= m {
            return Err(ConfigError::invalid(&field, format!("id {} out of range for M = {m}", a.id)));
        }
        if addrs[a.id].is_some() {
            return Err(ConfigError::invalid(&field, format!("duplicate id {}", a.id)));
        }
        let addr = a
            .addr
            .to_socket_addrs()
            .map_err(|e| ConfigError::invalid(&field, format!("cannot resolve {}: {e}", a.addr)))?
            .next()
            .ok_or_else(|| ConfigError::invalid(&field, format!("{} resolves to nothing", a.addr)))?;
        addrs[a.id] = Some(addr);
    }
    addrs
        .into_iter()
        .enumerate()
        .map(|(i, a)| a.ok_or_else(|| ConfigError::invalid("agents", format!("no address for node {i}"))))
        .collect()
}

/// Parses and validates a JSON experiment configuration.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    let m = raw.m;
    if m == 0 {
        return Err(ConfigError::invalid("M", "need at least one microgrid"));
    }
    let topology = build_topology(topology_field(raw.topology)?, m)?;
    if raw.demands.len() != m {
        return Err(ConfigError::invalid(
            "demands",
            format!("has {} entries, expected M = {m}", raw.demands.len()),
        ));
    }
    if let Some(i) = raw.demands.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(ConfigError::invalid(
            &format!("demands[{i}]"),
            format!("must be finite and >= 0, got {}", raw.demands[i]),
        ));
    }
    let gen_costs = match raw.gen_costs.map(gen_costs_field).transpose()? {
        None => vec![CostModel::u12(); m],
        Some(GenCosts::Shared(c)) => vec![c; m],
        Some(GenCosts::PerNode(v)) if v.len() == m => v,
        Some(GenCosts::PerNode(v)) => {
            return Err(ConfigError::invalid(
                "gen_costs",
                format!("has {} entries, expected M = {m}", v.len()),
            ))
        }
    };
    for (i, c) in gen_costs.iter().enumerate() {
        c.validate()
            .map_err(|e| ConfigError::invalid(&format!("gen_costs[{i}]"), e.to_string()))?;
    }
    let transfer_cost = raw.transfer_cost.unwrap_or_else(CostModel::unit_cubic);
    transfer_cost
        .validate()
        .map_err(|e| ConfigError::invalid("transfer_cost", e.to_string()))?;

    let scenario = Scenario {
        topology,
        demands: raw.demands,
        gen_costs,
        transfer_cost,
        step: raw.step,
        tol_gap: raw.tol_gap.unwrap_or(DEFAULT_TOL_GAP),
        tol_mismatch: raw.tol_mismatch.unwrap_or(DEFAULT_TOL_MISMATCH),
        max_iters: raw.max_iters.unwrap_or(DEFAULT_MAX_ITERS),
        seed: raw.seed.unwrap_or(0),
        fault: crate::Fault::None,
    };
    scenario
        .validate()
        .map_err(|e| ConfigError::invalid("scenario", e.to_string()))?;

    let sweep = match (raw.mode, raw.sweep) {
        (Mode::Sweep, Some(s)) => {
            if s.node >= m {
                return Err(ConfigError::invalid("sweep.node", format!("{} out of range for M = {m}", s.node)));
            }
            if s.values.is_empty() || s.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(ConfigError::invalid("sweep.values", "need one or more finite loads >= 0"));
            }
            Some(SweepSpec {
                node: s.node,
                values: s.values,
            })
        }
        (Mode::Sweep, None) => return Err(ConfigError::invalid("sweep", "required when mode is \"sweep\"")),
        (_, Some(_)) => return Err(ConfigError::invalid("sweep", "only allowed when mode is \"sweep\"")),
        (_, None) => None,
    };
    let agents = raw.agents.map(|a| resolve_agents(a, m)).transpose()?;
    let timeout = match raw.timeout_s {
        None => DEFAULT_TIMEOUT,
        Some(t) if t.is_finite() && t > 0.0 => Duration::from_secs_f64(t),
        Some(t) => return Err(ConfigError::invalid("timeout_s", format!("must be > 0, got {t}"))),
    };
    Ok(ExperimentSpec {
        scenario,
        mode: raw.mode,
        sweep,
        out_dir: raw.out_dir.unwrap_or_else(|| PathBuf::from("out")),
        agents,
        timeout,
    })
}

/// Parses a load list: `1..11` (inclusive integer range), `0.5..3:0.5`
/// (range with step) or a comma list `1,2.5,4`.
pub fn parse_values(text: &str) -> Result<Vec<f64>, ConfigError> {
    let bad = |m: String| ConfigError::invalid("values", m);
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
    let values = if let Some((lo, rest)) = text.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (num(hi)?, num(step)?),
            None => (num(rest)?, 1.0),
        };
        let lo = num(lo)?;
        if !(step > 0.0 && hi >= lo) {
            return Err(bad(format!("empty range `{text}`")));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| lo + k as f64 * step).collect()
    } else {
        text.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(bad(format!("need finite loads >= 0 in `{text}`")));
    }
    Ok(values)
}
