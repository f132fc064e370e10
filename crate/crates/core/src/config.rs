//! Scenario schema, defaults, validation, and dotted-path overrides.
//!
//! A scenario is a TOML document with one table per concern. Every field has
//! a default, so an empty document describes the default experiment.

use crate::adaptation::{compute_mu_ref, AdaptationParams, Epsilon};
use crate::dissemination::Policy;
use crate::queryapp::{DemandProfile, ReplyAccounting, ReplyLaw};
use crate::world::{ClusterLayout, MobilityModel, WaypointParams};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad override '{0}': expected key=value")]
    Override(String),
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.to_string(), message: message.into() }
    }

    /// Field named by a validation error, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_nodes: usize,
    /// Side of the square area, meters.
    pub area_side: f64,
    /// Unit-disk radio range, meters.
    pub radio_range: f64,
    /// Latency of one transmission, seconds.
    pub hop_latency: f64,
    /// Size of the content item, bytes. Recorded only.
    pub content_size: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { n_nodes: 2000, area_side: 500.0, radio_range: 20.0, hop_latency: 0.005, content_size: 1024 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeploymentKind {
    #[default]
    Uniform,
    Stationary,
    Clustered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentConfig {
    pub kind: DeploymentKind,
    /// Random waypoint time simulated before a stationary snapshot, seconds.
    pub warmup: f64,
    /// Redraws allowed to obtain a connected clustered layout.
    pub max_draws: u32,
    /// Cluster geometry; filled from the area side when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<ClusterLayout>,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        Self { kind: DeploymentKind::Uniform, warmup: 5000.0, max_draws: 50, clusters: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MobilityKind {
    #[default]
    Static,
    #[serde(alias = "rwp")]
    RandomWaypoint,
    RandomTrip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    pub kind: MobilityKind,
    pub speed_min: f64,
    pub speed_max: f64,
    pub pause: f64,
    /// Integration step, seconds.
    pub tick: f64,
    /// Random trip only: chance that a new waypoint lies in another cluster.
    pub inter_cluster_probability: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        let w = WaypointParams::default();
        Self {
            kind: MobilityKind::Static,
            speed_min: w.speed_min,
            speed_max: w.speed_max,
            pause: w.pause,
            tick: 1.0,
            inter_cluster_probability: 0.3,
        }
    }
}

impl MobilityConfig {
    pub fn waypoint(&self) -> WaypointParams {
        WaypointParams { speed_min: self.speed_min, speed_max: self.speed_max, pause: self.pause }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisseminationConfig {
    pub policy: Policy,
    pub initial_providers: usize,
    /// Caching time τ, seconds.
    pub cache_time: f64,
    /// Mean of the exponential move length, meters.
    pub mean_move_distance: f64,
    pub max_reflections: u32,
}

impl Default for DisseminationConfig {
    fn default() -> Self {
        Self {
            policy: Policy::RandomDirection,
            initial_providers: 200,
            cache_time: 10.0,
            mean_move_distance: 100.0,
            max_reflections: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    /// Flood TTL in hops.
    pub h_max: u32,
    pub reply: ReplyLaw,
    pub accounting: ReplyAccounting,
    pub demand: DemandProfile,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            h_max: 5,
            reply: ReplyLaw::default(),
            accounting: ReplyAccounting::default(),
            demand: DemandProfile::constant(0.0025),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Window of one χ² index and period of the provider-count samples.
    pub obs_interval: f64,
    pub n_bins: usize,
    /// Period of the closest-provider distance samples; τ when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub access_interval: Option<f64>,
    /// How often the node-pair reference histogram is recomputed on mobile
    /// runs, seconds.
    pub nodal_refresh: f64,
    /// Record every copy event.
    pub trace: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { obs_interval: 10.0, n_bins: 20, access_interval: None, nodal_refresh: 100.0, trace: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub runs: u32,
    /// Simulated duration, seconds.
    pub sim_time: f64,
    pub network: NetworkConfig,
    pub deployment: DeploymentConfig,
    pub mobility: MobilityConfig,
    pub dissemination: DisseminationConfig,
    pub queries: QueryConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adaptation: Option<AdaptationParams>,
    pub metrics: MetricsConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            runs: 10,
            sim_time: 10_000.0,
            network: NetworkConfig::default(),
            deployment: DeploymentConfig::default(),
            mobility: MobilityConfig::default(),
            dissemination: DisseminationConfig::default(),
            queries: QueryConfig::default(),
            adaptation: None,
            metrics: MetricsConfig::default(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn cache_time(&self) -> f64 {
        self.dissemination.cache_time
    }

    pub fn access_interval(&self) -> f64 {
        self.metrics.access_interval.unwrap_or(self.dissemination.cache_time)
    }

    pub fn cluster_layout(&self) -> ClusterLayout {
        self.deployment
            .clusters
            .clone()
            .unwrap_or_else(|| ClusterLayout::default_for(self.network.area_side))
    }

    pub fn mobility_model(&self) -> MobilityModel {
        match self.mobility.kind {
            MobilityKind::Static => MobilityModel::Static,
            MobilityKind::RandomWaypoint => MobilityModel::StationaryRandomWaypoint(self.mobility.waypoint()),
            MobilityKind::RandomTrip => MobilityModel::RandomTrip {
                params: self.mobility.waypoint(),
                layout: self.cluster_layout(),
                inter_cluster_probability: self.mobility.inter_cluster_probability,
            },
        }
    }

    /// Reference load implied by the initial demand.
    pub fn reference_load(&self) -> Option<f64> {
        let lambda0 = self.queries.demand.lambda_at(0.0).ok()?;
        compute_mu_ref(self.network.n_nodes, self.dissemination.initial_providers, lambda0).ok()
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the TOML
    /// document; a few short aliases are accepted. Values are TOML literals,
    /// and anything that does not parse as one is taken as a string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut doc = toml::Table::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw.split_once('=').ok_or_else(|| ConfigError::Override(raw.to_string()))?;
            let key = resolve_alias(key.trim());
            set_path(&mut doc, &key, parse_value(value.trim()))?;
        }
        doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }
}

fn resolve_alias(key: &str) -> String {
    let full = match key {
        "policy" | "initial_providers" | "cache_time" | "mean_move_distance" | "max_reflections" => {
            return format!("dissemination.{key}");
        }
        "c0" => "dissemination.initial_providers",
        "tau" => "dissemination.cache_time",
        "n_nodes" | "area_side" | "radio_range" | "hop_latency" => return format!("network.{key}"),
        "h_max" | "accounting" => return format!("queries.{key}"),
        "obs_interval" | "n_bins" | "trace" | "nodal_refresh" | "access_interval" => {
            return format!("metrics.{key}");
        }
        "deployment" => "deployment.kind",
        "mobility" => "mobility.kind",
        other => other,
    };
    full.to_string()
}

fn parse_value(text: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

fn set_path(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(key.to_string()));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| ConfigError::invalid(key, format!("'{part}' is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Checks every invariant and fills derived defaults: the cluster layout,
/// the access sampling period, and the reference load of the adaptation.
pub fn validate_scenario(mut s: Scenario) -> Result<Scenario, ConfigError> {
    let positive = |field: &str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(ConfigError::invalid(field, format!("must be positive and finite, got {v}")))
        }
    };
    let n = s.network.n_nodes;
    if n < 2 {
        return Err(ConfigError::invalid("network.n_nodes", format!("need at least 2 nodes, got {n}")));
    }
    positive("network.area_side", s.network.area_side)?;
    positive("network.radio_range", s.network.radio_range)?;
    if s.network.radio_range >= s.network.area_side {
        return Err(ConfigError::invalid(
            "network.radio_range",
            format!("range exceeds area ({} >= {})", s.network.radio_range, s.network.area_side),
        ));
    }
    if !(s.network.hop_latency.is_finite() && s.network.hop_latency >= 0.0) {
        return Err(ConfigError::invalid("network.hop_latency", "must be non-negative"));
    }
    let c0 = s.dissemination.initial_providers;
    if c0 == 0 || c0 > n {
        return Err(ConfigError::invalid(
            "dissemination.initial_providers",
            format!("initial_providers out of range (got {c0}, need 1..={n})"),
        ));
    }
    positive("dissemination.cache_time", s.dissemination.cache_time)?;
    positive("dissemination.mean_move_distance", s.dissemination.mean_move_distance)?;
    if s.queries.h_max < 1 {
        return Err(ConfigError::invalid("queries.h_max", "must be at least 1"));
    }
    if !(s.queries.reply.constant.is_finite() && s.queries.reply.constant > 0.0) {
        return Err(ConfigError::invalid("queries.reply.constant", "must be positive"));
    }
    positive("sim_time", s.sim_time)?;
    if s.runs < 1 {
        return Err(ConfigError::invalid("runs", "must be at least 1"));
    }
    s.queries
        .demand
        .validate(s.sim_time)
        .map_err(|e| ConfigError::invalid("queries.demand", e.to_string()))?;

    if !(s.deployment.warmup.is_finite() && s.deployment.warmup >= 0.0) {
        return Err(ConfigError::invalid("deployment.warmup", "must be non-negative"));
    }
    if s.deployment.max_draws < 1 {
        return Err(ConfigError::invalid("deployment.max_draws", "must be at least 1"));
    }
    let layout = s.cluster_layout();
    layout
        .validate(s.network.area_side)
        .map_err(|e| ConfigError::invalid("deployment.clusters", e.to_string()))?;
    s.deployment.clusters = Some(layout);

    let m = &s.mobility;
    positive("mobility.speed_min", m.speed_min)?;
    positive("mobility.speed_max", m.speed_max)?;
    if m.speed_min > m.speed_max {
        return Err(ConfigError::invalid("mobility.speed_min", "exceeds speed_max"));
    }
    if !(m.pause.is_finite() && m.pause >= 0.0) {
        return Err(ConfigError::invalid("mobility.pause", "must be non-negative"));
    }
    positive("mobility.tick", m.tick)?;
    if !(0.0..=1.0).contains(&m.inter_cluster_probability) {
        return Err(ConfigError::invalid("mobility.inter_cluster_probability", "must lie in [0, 1]"));
    }

    positive("metrics.obs_interval", s.metrics.obs_interval)?;
    positive("metrics.nodal_refresh", s.metrics.nodal_refresh)?;
    if s.metrics.n_bins < 2 {
        return Err(ConfigError::invalid("metrics.n_bins", "need at least 2 bins"));
    }
    let access = s.access_interval();
    positive("metrics.access_interval", access)?;
    s.metrics.access_interval = Some(access);

    if let Some(a) = s.adaptation.as_mut() {
        let mu_ref = match a.mu_ref {
            Some(mu) => mu,
            None => {
                let lambda0 = s.queries.demand.lambda_at(0.0).expect("validated profile covers 0");
                compute_mu_ref(n, c0, lambda0).map_err(|e| ConfigError::invalid("adaptation.mu_ref", e.to_string()))?
            }
        };
        positive("adaptation.mu_ref", mu_ref)?;
        a.mu_ref = Some(mu_ref);
        let eps = match a.epsilon {
            Epsilon::Absolute(v) | Epsilon::Relative(v) => v,
        };
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(ConfigError::invalid("adaptation.epsilon", "must be non-negative"));
        }
        if a.min_copies < 1 {
            return Err(ConfigError::invalid("adaptation.min_copies", "must be at least 1"));
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_is_valid() {
        let s = validate_scenario(Scenario::default()).unwrap();
        assert_eq!(s.network.n_nodes, 2000);
        assert_eq!(s.dissemination.initial_providers, 200);
        assert_eq!(s.dissemination.cache_time, 10.0);
        assert_eq!(s.network.area_side, 500.0);
        assert_eq!(s.metrics.access_interval, Some(10.0));
        assert!(s.deployment.clusters.is_some());
    }

    #[test]
    fn empty_document_means_defaults() {
        assert_eq!(Scenario::from_toml("").unwrap(), Scenario::default());
    }

    #[test]
    fn rejects_no_providers() {
        let mut s = Scenario::default();
        s.dissemination.initial_providers = 0;
        let err = validate_scenario(s).unwrap_err();
        assert_eq!(err.field(), Some("dissemination.initial_providers"));
        assert!(err.to_string().contains("initial_providers out of range"));
    }

    #[test]
    fn rejects_range_beyond_area() {
        let mut s = Scenario::default();
        s.network.radio_range = 600.0;
        let err = validate_scenario(s).unwrap_err();
        assert!(err.to_string().contains("range exceeds area"));
    }

    #[test]
    fn rejects_other_invariants() {
        let cases: Vec<(&str, fn(&mut Scenario))> = vec![
            ("dissemination.cache_time", |s| s.dissemination.cache_time = 0.0),
            ("queries.h_max", |s| s.queries.h_max = 0),
            ("dissemination.initial_providers", |s| s.dissemination.initial_providers = 2001),
            ("queries.demand", |s| s.queries.demand = DemandProfile { segments: vec![] }),
            ("metrics.n_bins", |s| s.metrics.n_bins = 1),
            ("mobility.speed_min", |s| s.mobility.speed_min = 9.0),
        ];
        for (field, mutate) in cases {
            let mut s = Scenario::default();
            mutate(&mut s);
            assert_eq!(validate_scenario(s).unwrap_err().field(), Some(field));
        }
    }

    #[test]
    fn adaptation_reference_is_filled() {
        let mut s = Scenario::default();
        s.adaptation = Some(AdaptationParams::default());
        let s = validate_scenario(s).unwrap();
        assert!((s.adaptation.unwrap().mu_ref.unwrap() - 0.0225).abs() < 1e-15);
    }

    #[test]
    fn toml_round_trip() {
        let mut s = Scenario::default();
        s.adaptation = Some(AdaptationParams::default());
        s.queries.demand = DemandProfile::four_phase(2000, 200);
        let s = validate_scenario(s).unwrap();
        let text = s.to_toml();
        assert_eq!(Scenario::from_toml(&text).unwrap(), s);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Scenario::from_toml("[network]\nradio = 3.0").is_err());
        assert!(Scenario::from_toml("colour = 1").is_err());
    }

    #[test]
    fn overrides() {
        let s = Scenario::default()
            .with_overrides(&["policy=RWD", "tau=100", "network.n_nodes=500", "mobility=random-waypoint"])
            .unwrap();
        assert_eq!(s.dissemination.policy, Policy::RandomWalk);
        assert_eq!(s.dissemination.cache_time, 100.0);
        assert_eq!(s.network.n_nodes, 500);
        assert_eq!(s.mobility.kind, MobilityKind::RandomWaypoint);
        let s = Scenario::default().with_overrides(&["adaptation.min_copies=2", "adaptation.epsilon={mode=\"absolute\", value=0.01}"]).unwrap();
        assert_eq!(s.adaptation.unwrap().epsilon, Epsilon::Absolute(0.01));
        assert!(Scenario::default().with_overrides(&["policy"]).is_err());
        assert!(Scenario::default().with_overrides(&["network.nodes=5"]).is_err());
        let bad = Scenario::default().with_overrides(&["c0=0"]).unwrap();
        assert!(validate_scenario(bad).is_err());
    }
}
