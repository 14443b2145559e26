//! Series input/output, the Rössler benchmark generator and pipeline configuration.

mod config;
mod rossler;
mod series;

pub use config::{
    parse_config, parse_config_with_seed, ColumnSetting, EmbeddingConfig, FragmentConfig,
    GaSettings, InputConfig, LagSetting, MarkerConfig, ModelConfig, PipelineConfig, SpectralConfig,
};
pub use rossler::{generate_rossler, RosslerParams};
pub use series::{load_series, write_series, write_series_table, Column, TimeSeries};

pub(crate) use series::artifact_err;
