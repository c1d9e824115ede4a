use std::fmt;

use super::config::{CUNetConfig, DenseUNetConfig};
use super::network::{build_cu_net, build_dense_unet, NetworkGraph};
use crate::error::Result;

/// Configuration of any buildable architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    /// Coupled, or stacked when `coupling` is off.
    Cu(CUNetConfig),
    Dense(DenseUNetConfig),
}

impl ModelSpec {
    pub fn build(&self) -> Result<NetworkGraph> {
        match self {
            ModelSpec::Cu(c) => build_cu_net(c),
            ModelSpec::Dense(d) => build_dense_unet(d),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelSpec::Cu(c) => c.seed,
            ModelSpec::Dense(d) => d.seed,
        }
    }

    pub fn to_kv(&self) -> String {
        match self {
            ModelSpec::Cu(c) => c.to_kv(),
            ModelSpec::Dense(d) => d.to_kv(),
        }
    }

    /// Dense documents are recognised by their `layers` key.
    pub fn from_kv(text: &str) -> Result<Self> {
        let dense = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .any(|(k, _)| k.trim() == "layers");
        if dense {
            Ok(ModelSpec::Dense(DenseUNetConfig::from_kv(text)?))
        } else {
            Ok(ModelSpec::Cu(CUNetConfig::from_kv(text)?))
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv())
    }
}
