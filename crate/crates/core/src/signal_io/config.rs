//! Pipeline configuration, read from and echoed as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::rossler::RosslerParams;
use super::series::Column;
use crate::error::{Error, Result};
use crate::model::BasisFunction;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub input: InputConfig,
    pub rossler: RosslerParams,
    pub embedding: EmbeddingConfig,
    pub markers: MarkerConfig,
    pub fragments: FragmentConfig,
    pub spectral: SpectralConfig,
    pub ga: GaSettings,
    pub model: ModelConfig,
}

/// Where the scalar series comes from. Without a `path` the builtin
/// Rössler generator is used and `observable` picks the coordinate (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub column: ColumnSetting,
    pub observable: usize,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            path: None,
            column: ColumnSetting(Column::Index(1)),
            observable: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSetting(pub Column);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LagSetting {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub lag: LagSetting,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            lag: LagSetting::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerConfig {
    pub prominence: f64,
    pub spacing: usize,
}

impl Default for MarkerConfig {
    fn default() -> Self {
        Self {
            prominence: 0.0,
            spacing: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FragmentConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub resample_points: usize,
}

impl Default for FragmentConfig {
    fn default() -> Self {
        Self {
            min_len: 5,
            max_len: 50,
            resample_points: 60,
        }
    }
}

/// Number of conjugate pairs and their weights. When absent, `pairs`
/// defaults to `min(10, (m - 1) / 2)` and weights to `decay^(i-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    pub decay: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            pairs: None,
            betas: None,
            decay: 0.5,
        }
    }
}

impl SpectralConfig {
    pub fn resolved_pairs(&self, m_pts: usize) -> usize {
        match (&self.betas, self.pairs) {
            (_, Some(q)) => q,
            (Some(b), None) => b.len(),
            (None, None) => 10.min(m_pts.saturating_sub(1) / 2),
        }
    }

    pub fn resolved_betas(&self, m_pts: usize) -> Vec<f64> {
        match &self.betas {
            Some(b) => b.clone(),
            None => (0..self.resolved_pairs(m_pts))
                .map(|i| self.decay.powi(i as i32))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaSettings {
    pub population: usize,
    pub alpha: f64,
    pub beta: f64,
    pub stall_limit: usize,
    pub max_iterations: usize,
    pub elitism: usize,
}

impl Default for GaSettings {
    fn default() -> Self {
        Self {
            population: 200,
            alpha: 0.3,
            beta: 0.1,
            stall_limit: 5,
            max_iterations: 1000,
            elitism: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub basis: Vec<String>,
    pub ridge: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            basis: Vec::new(),
            ridge: 0.0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    #[serde(default)]
    input: InputConfig,
    #[serde(default)]
    rossler: RosslerParams,
    #[serde(default)]
    embedding: EmbeddingConfig,
    #[serde(default)]
    markers: MarkerConfig,
    #[serde(default)]
    fragments: FragmentConfig,
    #[serde(default)]
    spectral: SpectralConfig,
    #[serde(default)]
    ga: GaSettings,
    #[serde(default)]
    model: ModelConfig,
}

/// Reads a TOML config file, applying defaults and validating ranges.
pub fn parse_config(path: &Path) -> Result<PipelineConfig> {
    parse_config_with_seed(path, None)
}

pub fn parse_config_with_seed(path: &Path, seed_override: Option<u64>) -> Result<PipelineConfig> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    PipelineConfig::from_toml_str(&text, seed_override)
}

impl PipelineConfig {
    /// Defaults everywhere, with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            input: InputConfig::default(),
            rossler: RosslerParams::default(),
            embedding: EmbeddingConfig::default(),
            markers: MarkerConfig::default(),
            fragments: FragmentConfig::default(),
            spectral: SpectralConfig::default(),
            ga: GaSettings::default(),
            model: ModelConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::SchemaViolation {
            path: "<document>".into(),
            message: e.message().to_string(),
        })?;
        let seed = seed_override
            .or(raw.seed)
            .ok_or_else(|| schema("seed", "required field missing"))?;
        let cfg = PipelineConfig {
            seed,
            input: raw.input,
            rossler: raw.rossler,
            embedding: raw.embedding,
            markers: raw.markers,
            fragments: raw.fragments,
            spectral: raw.spectral,
            ga: raw.ga,
            model: raw.model,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Effective configuration in the same format it was read from.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let i = &self.input;
        if !(1..=3).contains(&i.observable) {
            return Err(schema("input.observable", "must be 1, 2 or 3"));
        }
        self.rossler
            .validate()
            .map_err(|e| schema("rossler", &e.to_string()))?;

        let e = &self.embedding;
        if e.dim == 0 {
            return Err(schema("embedding.dim", "must be positive"));
        }
        if e.lag == LagSetting::Fixed(0) {
            return Err(schema("embedding.lag", "must be positive or \"auto\""));
        }

        let m = &self.markers;
        if !(m.prominence.is_finite() && m.prominence >= 0.0) {
            return Err(schema(
                "markers.prominence",
                "must be finite and non-negative",
            ));
        }
        if m.spacing < 2 {
            return Err(schema("markers.spacing", "must be at least 2"));
        }

        let f = &self.fragments;
        if f.min_len < 2 {
            return Err(schema("fragments.min_len", "must be at least 2"));
        }
        if f.min_len > f.max_len {
            return Err(schema(
                "fragments.min_len",
                "must not exceed fragments.max_len",
            ));
        }
        if f.resample_points < 2 {
            return Err(schema("fragments.resample_points", "must be at least 2"));
        }

        let s = &self.spectral;
        let q = s.resolved_pairs(f.resample_points);
        let q_max = (f.resample_points - 1) / 2;
        if q == 0 || q > q_max {
            return Err(schema(
                "spectral.pairs",
                &format!("must lie in 1..={q_max}"),
            ));
        }
        if let Some(b) = &s.betas {
            if b.len() != q {
                return Err(schema(
                    "spectral.betas",
                    &format!("expected {q} weights, got {}", b.len()),
                ));
            }
            if b.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(schema("spectral.betas", "weights must be positive"));
            }
        }
        if !(s.decay.is_finite() && s.decay > 0.0) {
            return Err(schema("spectral.decay", "must be positive"));
        }

        let g = &self.ga;
        if g.population < 2 {
            return Err(schema("ga.population", "must be at least 2"));
        }
        if !(0.0..=1.0).contains(&g.alpha) {
            return Err(schema("ga.alpha", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&g.beta) {
            return Err(schema("ga.beta", "must lie in [0, 1]"));
        }
        if g.stall_limit == 0 {
            return Err(schema("ga.stall_limit", "must be positive"));
        }
        if g.max_iterations == 0 {
            return Err(schema("ga.max_iterations", "must be positive"));
        }
        if g.elitism == 0 || g.elitism >= g.population {
            return Err(schema("ga.elitism", "must lie in 1..population"));
        }

        let md = &self.model;
        if !(md.ridge.is_finite() && md.ridge >= 0.0) {
            return Err(schema("model.ridge", "must be finite and non-negative"));
        }
        for (k, id) in md.basis.iter().enumerate() {
            BasisFunction::parse(id)
                .map_err(|e| schema(&format!("model.basis[{k}]"), &e.to_string()))?;
        }
        Ok(())
    }
}

fn schema(path: &str, message: &str) -> Error {
    Error::SchemaViolation {
        path: path.to_string(),
        message: message.to_string(),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IntOrText {
    Int(i64),
    Text(String),
}

impl Serialize for LagSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LagSetting::Auto => s.serialize_str("auto"),
            LagSetting::Fixed(l) => s.serialize_u64(*l as u64),
        }
    }
}

impl<'de> Deserialize<'de> for LagSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match IntOrText::deserialize(d)? {
            IntOrText::Int(v) if v >= 0 => Ok(LagSetting::Fixed(v as usize)),
            IntOrText::Text(t) if t == "auto" => Ok(LagSetting::Auto),
            _ => Err(D::Error::custom(
                "lag must be a non-negative integer or \"auto\"",
            )),
        }
    }
}

impl Serialize for ColumnSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match &self.0 {
            Column::Name(n) => s.serialize_str(n),
            Column::Index(i) => s.serialize_u64(*i as u64),
        }
    }
}

impl<'de> Deserialize<'de> for ColumnSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match IntOrText::deserialize(d)? {
            IntOrText::Int(v) if v >= 0 => Ok(ColumnSetting(Column::Index(v as usize))),
            IntOrText::Text(t) => Ok(ColumnSetting(Column::Name(t))),
            _ => Err(D::Error::custom(
                "column must be a name or a non-negative index",
            )),
        }
    }
}
