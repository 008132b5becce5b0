//! File configuration. Every key is optional; command-line flags win.

use std::path::Path;

use hoqs_core::pqc::KemParamSet;
use hoqs_core::protocol::Transport;
use hoqs_core::{ErrorCountRule, GridPreset, PeType};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "HOQS_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub s: Option<u32>,
    #[serde(rename = "N")]
    pub raw_bits: Option<u64>,
    pub delta: Option<f64>,
    pub pe: Option<PeType>,
    pub grid: Option<GridPreset>,
    pub cp_count: Option<ErrorCountRule>,
    pub syndrome_bits: Option<u64>,
    pub tag_count: Option<u32>,
    pub tag_bits: Option<u32>,
    pub n_obs: Option<u32>,
    pub qber: Option<f64>,
    pub kem: Option<KemParamSet>,
    pub seed: Option<u64>,
    pub psk_seed: Option<u64>,
    pub psk_bits: Option<usize>,
    pub message: Option<String>,
    pub cycles: Option<u32>,
    pub transport: Option<Transport>,
    pub max_nobs: Option<u32>,
    pub max_bp_iters: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }

    pub fn template() -> Self {
        FileConfig {
            s: Some(6),
            raw_bits: Some(20_000),
            delta: Some(0.0627),
            pe: Some(PeType::CpExact),
            grid: Some(GridPreset::Full),
            cp_count: Some(ErrorCountRule::Derived),
            syndrome_bits: Some(5000),
            tag_count: Some(1),
            tag_bits: Some(61),
            n_obs: Some(4),
            qber: Some(0.0644),
            kem: Some(KemParamSet::MlKem512),
            seed: Some(1),
            psk_seed: Some(2),
            psk_bits: Some(hoqs_core::protocol::DEFAULT_PSK_BITS),
            message: None,
            cycles: Some(10),
            transport: Some(Transport::Memory),
            max_nobs: Some(hoqs_core::instruction::DEFAULT_MAX_NOBS),
            max_bp_iters: Some(hoqs_core::qkd::DEFAULT_BP_ITERS),
        }
    }
}
