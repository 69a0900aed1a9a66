//! Experiment configuration files: schema, profile selection, hashing, and
//! resolution into simulator objects.

use crate::CliError;
use flitsim::routing::RoutingSpec;
use flitsim::topology::{build_complete_graph, embed_service, Network, ServiceKind};
use flitsim::traffic::{KernelParams, PatternSpec};
use serde::{Deserialize, Serialize};
use std::rc::Rc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    /// "full_mesh" or "grid2d".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switches: Option<usize>,
    /// grid2d only: the two fully connected dimension sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    pub servers_per_switch: usize,
    /// full_mesh only: embedded service topology, when routing needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<String>,
    /// grid2d only: service embedded within each dimension's clique.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_service: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeCfg {
    Bernoulli { loads: Vec<f64> },
    FixedBurst { packets_per_server: u32 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCfg {
    #[serde(default = "one")]
    pub iterations: u32,
    #[serde(default = "one")]
    pub message_packets: u32,
    #[serde(default = "default_allreduce_base")]
    pub allreduce_base: u32,
}

fn one() -> u32 {
    1
}

fn default_allreduce_base() -> u32 {
    64
}

impl Default for KernelCfg {
    fn default() -> Self {
        KernelCfg { iterations: 1, message_packets: 1, allreduce_base: 64 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub topology: TopologySpec,
    pub routings: Vec<String>,
    pub patterns: Vec<String>,
    pub mode: ModeCfg,
    /// Bernoulli measurement window length in cycles.
    #[serde(default = "default_measure")]
    pub measure_cycles: u64,
    /// Cycles excluded before the window opens; defaults to a quarter of the
    /// run (a third of the measurement window).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_cycles: Option<u64>,
    /// Completion cap for burst and kernel runs.
    #[serde(default = "default_max_cycles")]
    pub max_cycles: u64,
    /// Seed count; runs use seeds 1..=seeds.
    #[serde(default = "one_u64")]
    pub seeds: u64,
    #[serde(default)]
    pub kernel: KernelCfg,
}

fn default_measure() -> u64 {
    80_000
}

fn default_max_cycles() -> u64 {
    20_000_000
}

fn one_u64() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn warmup(&self) -> u64 {
        self.warmup_cycles.unwrap_or(self.measure_cycles / 3)
    }
}

/// A figure bundle carries a full-scale profile and a quick CI profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureFile {
    pub full: ExperimentConfig,
    pub ci: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Full,
    Ci,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Profile::Full),
            "ci" => Ok(Profile::Ci),
            other => Err(format!("unknown profile {other:?}, expected full or ci")),
        }
    }
}

/// Load a config file: either a figure bundle with full/ci profiles or a
/// bare experiment config (used for both profiles).
pub fn load_config(path: &str, profile: Profile) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {path}: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{path}: {e}")))?;
    let cfg = if value.get("full").is_some() || value.get("ci").is_some() {
        let fig: FigureFile = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("{path}: {e}")))?;
        match profile {
            Profile::Full => fig.full,
            Profile::Ci => fig.ci,
        }
    } else {
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("{path}: {e}")))?
    };
    validate(&cfg)?;
    Ok(cfg)
}

/// Field-level checks beyond what serde enforces, so errors name the field.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let bad = |msg: String| Err(CliError::Config(format!("config {:?}: {msg}", cfg.name)));
    match cfg.topology.kind.as_str() {
        "full_mesh" => {
            if cfg.topology.switches.is_none() {
                return bad("topology.switches is required for full_mesh".into());
            }
        }
        "grid2d" => {
            match &cfg.topology.dims {
                Some(d) if d.len() == 2 => {}
                _ => return bad("topology.dims must list two dimension sizes".into()),
            }
            if cfg.topology.service.is_some() {
                return bad("topology.service applies to full_mesh; use inner_service".into());
            }
        }
        other => return bad(format!("topology.kind {other:?} unknown")),
    }
    if cfg.topology.servers_per_switch == 0 {
        return bad("topology.servers_per_switch must be positive".into());
    }
    if cfg.routings.is_empty() {
        return bad("routings must be non-empty".into());
    }
    for r in &cfg.routings {
        let spec: RoutingSpec = r
            .parse()
            .map_err(|e| CliError::Config(format!("routings entry {r:?}: {e}")))?;
        if cfg.topology.kind == "grid2d" && !matches!(spec, RoutingSpec::HyperxTera { .. }) {
            return bad(format!("routing {r:?} does not run on a grid2d fabric"));
        }
        if cfg.topology.kind == "full_mesh" && matches!(spec, RoutingSpec::HyperxTera { .. }) {
            return bad(format!("routing {r:?} requires a grid2d fabric"));
        }
    }
    if cfg.patterns.is_empty() {
        return bad("patterns must be non-empty".into());
    }
    for p in &cfg.patterns {
        let _: PatternSpec = p
            .parse()
            .map_err(|e| CliError::Config(format!("patterns entry {p:?}: {e}")))?;
    }
    if let Some(s) = &cfg.topology.service {
        let _: ServiceKind = s
            .parse()
            .map_err(|e| CliError::Config(format!("topology.service {s:?}: {e}")))?;
    }
    if let Some(s) = &cfg.topology.inner_service {
        let _: ServiceKind = s
            .parse()
            .map_err(|e| CliError::Config(format!("topology.inner_service {s:?}: {e}")))?;
    }
    if let ModeCfg::Bernoulli { loads } = &cfg.mode {
        if loads.is_empty() {
            return bad("mode.bernoulli.loads must be non-empty".into());
        }
        for &l in loads {
            if !(0.0..=1.0).contains(&l) {
                return bad(format!("load {l} outside [0, 1]"));
            }
        }
    }
    if cfg.seeds == 0 {
        return bad("seeds must be at least 1".into());
    }
    if cfg.measure_cycles == 0 {
        return bad("measure_cycles must be positive".into());
    }
    Ok(())
}

/// FNV-1a 64 over the canonical JSON of the config with the seed count
/// removed, so every row of a sweep shares one identity.
pub fn config_hash(cfg: &ExperimentConfig) -> u64 {
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    if let Some(map) = value.as_object_mut() {
        map.remove("seeds");
    }
    // serde_json objects iterate in sorted key order, so this is canonical.
    let text = value.to_string();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// The service kind a routing insists on, if any.
pub fn routing_service(spec: &RoutingSpec) -> Option<ServiceKind> {
    match spec {
        RoutingSpec::Tera { service, .. } => Some(service.clone()),
        RoutingSpec::ServiceDor(kind) => Some(kind.clone()),
        _ => None,
    }
}

/// Build the network for one run. Routings that embed a service override the
/// topology's default so one sweep can compare embeddings.
pub fn build_network(
    top: &TopologySpec,
    service_override: Option<&ServiceKind>,
) -> Result<Rc<Network>, CliError> {
    let cfg_err = |e: String| CliError::Config(e);
    match top.kind.as_str() {
        "full_mesh" => {
            let n = top.switches.expect("validated");
            let fm = build_complete_graph(n, top.servers_per_switch)
                .map_err(|e| cfg_err(e.to_string()))?;
            let kind = match service_override {
                Some(k) => Some(k.clone()),
                None => top
                    .service
                    .as_ref()
                    .map(|s| s.parse::<ServiceKind>())
                    .transpose()
                    .map_err(|e| cfg_err(e.to_string()))?,
            };
            let emb = kind
                .map(|k| embed_service(&fm, &k))
                .transpose()
                .map_err(|e| cfg_err(e.to_string()))?;
            Ok(Rc::new(Network::full_mesh(fm, emb)))
        }
        "grid2d" => {
            if service_override.is_some() {
                return Err(cfg_err(
                    "service-embedding routings do not run on a grid2d fabric".into(),
                ));
            }
            let dims = top.dims.as_ref().expect("validated");
            let inner: ServiceKind = top
                .inner_service
                .as_deref()
                .unwrap_or("hypercube")
                .parse()
                .map_err(|e: flitsim::topology::TopologyError| cfg_err(e.to_string()))?;
            let net = Network::grid2d(dims[0], dims[1], top.servers_per_switch, &inner)
                .map_err(|e| cfg_err(e.to_string()))?;
            Ok(Rc::new(net))
        }
        _ => unreachable!("validated"),
    }
}

impl From<&KernelCfg> for KernelParams {
    fn from(k: &KernelCfg) -> KernelParams {
        KernelParams {
            iterations: k.iterations,
            message_packets: k.message_packets,
            allreduce_base: k.allreduce_base,
        }
    }
}
