//! Experiment configuration: schema validation, typed parsing and hashing.

use std::path::{Path, PathBuf};

use collab_core::interval_map::{MapSpec, PiecewiseExpandingMap};
use collab_core::lattice::{CollisionScheme, Lattice, Literal, Mode, SchemeSpec};
use collab_core::stats::{InitKind, DEFAULT_BURN_IN, DEFAULT_CLUSTER_GAP};
use collab_core::theory::{DensityMode, ThetaOptions, DEFAULT_K_MAX};
use collab_core::ulam::BoxShape;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const CONFIG_SCHEMA: &str = include_str!("../schema/config.schema.json");
pub const SUMMARY_SCHEMA: &str = include_str!("../schema/summary.schema.json");
pub const MANIFEST_SCHEMA: &str = include_str!("../schema/manifest.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitName {
    Lebesgue,
    #[default]
    Invariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorName {
    Closed,
    #[default]
    Open,
    Twisted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_traj: usize,
    pub horizon: u64,
    pub t: f64,
    pub s_grid: Vec<f64>,
    /// Empty means the scheme's own δ.
    pub deltas: Vec<f64>,
    pub grid_sizes: Vec<usize>,
    #[serde(rename = "box")]
    pub box_shape: BoxShape,
    pub operator: OperatorName,
    pub seed: u64,
    pub burn_in: u64,
    pub init: InitName,
    pub mode: Option<Mode>,
    pub fit_window: Option<[u64; 2]>,
    pub gap: u64,
    pub hole_mass: Option<f64>,
    pub bootstrap: usize,
    pub replicates: usize,
    pub k_max: usize,
    pub truncation: usize,
    pub density: DensityMode,
    pub density_dump: bool,
    pub event_log_steps: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let theta = ThetaOptions::default();
        Self {
            n_traj: 10_000,
            horizon: 10_000,
            t: 5.0,
            s_grid: theta.s_grid,
            deltas: Vec::new(),
            grid_sizes: vec![theta.spectral_n],
            box_shape: BoxShape::Triple,
            operator: OperatorName::Open,
            seed: 0,
            burn_in: DEFAULT_BURN_IN,
            init: InitName::Invariant,
            mode: None,
            fit_window: None,
            gap: DEFAULT_CLUSTER_GAP,
            hole_mass: None,
            bootstrap: 200,
            replicates: 1,
            k_max: DEFAULT_K_MAX,
            truncation: theta.truncation,
            density: DensityMode::Idealized,
            density_dump: false,
            event_log_steps: 0,
        }
    }
}

impl RunConfig {
    pub fn init_kind(&self) -> InitKind {
        match self.init {
            InitName::Lebesgue => InitKind::Lebesgue,
            InitName::Invariant => InitKind::Invariant { burn_in: self.burn_in },
        }
    }

    pub fn theta_options(&self) -> ThetaOptions {
        let d = ThetaOptions::default();
        ThetaOptions {
            k_max: self.k_max,
            truncation: self.truncation,
            s_grid: self.s_grid.clone(),
            spectral_deltas: if self.deltas.is_empty() { d.spectral_deltas } else { self.deltas.clone() },
            spectral_n: self.grid_sizes.iter().copied().max().unwrap_or(d.spectral_n),
            density: self.density,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub map: MapSpec,
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// A validated config together with its content digest.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

impl ExperimentConfig {
    /// Site map and scheme, with `run.mode` overriding the scheme's mode.
    pub fn lattice(&self) -> Result<Lattice, CliError> {
        let map = PiecewiseExpandingMap::from_spec(&self.map).map_err(|e| CliError::Schema(format!("map: {e}")))?;
        let mut spec = self.scheme.clone();
        if let Some(mode) = self.run.mode {
            spec.mode = mode;
        }
        let scheme = CollisionScheme::new(spec).map_err(|e| CliError::Schema(format!("scheme: {e}")))?;
        Ok(Lattice::new(scheme, map))
    }

    /// δ values of the run; the scheme's δ when the list is empty.
    pub fn deltas(&self, lattice: &Lattice) -> Vec<f64> {
        if self.run.deltas.is_empty() {
            vec![lattice.scheme.delta()]
        } else {
            self.run.deltas.clone()
        }
    }
}

/// Lattice with δ replaced; exact literal when δ is the scheme's own value.
pub fn with_delta(lattice: &Lattice, delta: f64) -> Result<Lattice, CliError> {
    let lit = if delta == lattice.scheme.delta() {
        lattice.scheme.spec().delta.clone()
    } else {
        Literal::Number(delta)
    };
    let scheme = lattice.scheme.with_delta(lit).map_err(|e| CliError::Schema(format!("delta {delta}: {e}")))?;
    Ok(Lattice::new(scheme, lattice.map.clone()))
}

/// SHA-256 of the compact JSON rendering with object keys sorted.
pub fn canonical_hash(value: &Value) -> String {
    // key order is fixed here; serde_json may keep insertion order depending on features
    let canonical = serde_json::to_string(&sorted(value)).expect("JSON values always serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn sorted(value: &Value) -> Value {
    match value {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            Value::Object(keys.into_iter().map(|k| (k.clone(), sorted(&m[k]))).collect())
        }
        Value::Array(a) => Value::Array(a.iter().map(sorted).collect()),
        other => other.clone(),
    }
}

/// Errors of `instance` against a JSON Schema document, one line each.
pub fn schema_errors(schema: &str, instance: &Value) -> Vec<String> {
    let schema: Value = serde_json::from_str(schema).expect("bundled schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("bundled schema compiles");
    validator
        .iter_errors(instance)
        .map(|e| format!("{}: {}", e.instance_path(), e))
        .collect()
}

pub fn parse_config(text: &str) -> Result<LoadedConfig, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Schema(format!("not valid JSON: {e}")))?;
    let errors = schema_errors(CONFIG_SCHEMA, &value);
    if !errors.is_empty() {
        return Err(CliError::Schema(errors.join("; ")));
    }
    let config: ExperimentConfig = serde_json::from_value(value.clone()).map_err(|e| CliError::Schema(e.to_string()))?;
    if let Some([a, b]) = config.run.fit_window {
        if a >= b {
            return Err(CliError::Schema(format!("run.fit_window: start {a} must be below end {b}")));
        }
    }
    Ok(LoadedConfig {
        config,
        hash: canonical_hash(&value),
    })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}
