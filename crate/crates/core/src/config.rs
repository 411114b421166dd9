//! Hardware configuration shared by every stage of the toolchain.
//!
//! Instruction field widths are deliberately absent: they are fixed by the
//! ISA (see [`crate::isa`]) so that binaries stay compatible with the
//! reference simulators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod defaults {
    pub const BLOCK_SIZE: usize = 16;
    pub const INP_BUF_DEPTH: usize = 2048;
    pub const WGT_BUF_DEPTH: usize = 1024;
    pub const ACC_BUF_DEPTH: usize = 2048;
    /// OUT vectors are truncated ACC vectors, so the depth mirrors ACC.
    pub const OUT_BUF_DEPTH: usize = 2048;
    pub const UOP_BUF_DEPTH: usize = 8192;
    pub const PAGE_BYTES: usize = 4096;
    pub const DRAM_BYTES: usize = 64 * 1024 * 1024;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{0} not power of two")]
    NotPowerOfTwo(&'static str),
    #[error("{0} must be at least 2")]
    TooSmall(&'static str),
    #[error("{0} width must be 1")]
    NarrowWidth(&'static str),
    #[error("acc width must be 4")]
    AccWidth,
    #[error("dram_bytes must be a non-zero multiple of page_bytes")]
    DramBytes,
}

/// VTA hardware parameters.
///
/// Deserializes with every absent field taking its default, so a manifest may
/// override any subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VtaConfig {
    /// Elements per INP/ACC/OUT vector; WGT matrices are `block_size²`.
    pub block_size: usize,
    pub inp_buf_depth: usize,
    pub wgt_buf_depth: usize,
    pub acc_buf_depth: usize,
    pub out_buf_depth: usize,
    pub uop_buf_depth: usize,
    pub page_bytes: usize,
    pub inp_width_bytes: usize,
    pub wgt_width_bytes: usize,
    pub out_width_bytes: usize,
    pub acc_width_bytes: usize,
    /// Capacity of the DRAM region handed to the accelerator.
    pub dram_bytes: usize,
}

impl Default for VtaConfig {
    fn default() -> Self {
        default_config()
    }
}

pub fn default_config() -> VtaConfig {
    VtaConfig {
        block_size: defaults::BLOCK_SIZE,
        inp_buf_depth: defaults::INP_BUF_DEPTH,
        wgt_buf_depth: defaults::WGT_BUF_DEPTH,
        acc_buf_depth: defaults::ACC_BUF_DEPTH,
        out_buf_depth: defaults::OUT_BUF_DEPTH,
        uop_buf_depth: defaults::UOP_BUF_DEPTH,
        page_bytes: defaults::PAGE_BYTES,
        inp_width_bytes: 1,
        wgt_width_bytes: 1,
        out_width_bytes: 1,
        acc_width_bytes: 4,
        dram_bytes: defaults::DRAM_BYTES,
    }
}

impl VtaConfig {
    /// Accepts the configuration iff every invariant holds, reporting the
    /// first violation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let pow2 = [
            ("block_size", self.block_size),
            ("inp_buf_depth", self.inp_buf_depth),
            ("wgt_buf_depth", self.wgt_buf_depth),
            ("acc_buf_depth", self.acc_buf_depth),
            ("out_buf_depth", self.out_buf_depth),
            ("uop_buf_depth", self.uop_buf_depth),
            ("page_bytes", self.page_bytes),
        ];
        for (name, v) in pow2 {
            if !v.is_power_of_two() {
                return Err(ConfigError::NotPowerOfTwo(name));
            }
            if v < 2 {
                return Err(ConfigError::TooSmall(name));
            }
        }
        for (name, w) in [
            ("inp", self.inp_width_bytes),
            ("wgt", self.wgt_width_bytes),
            ("out", self.out_width_bytes),
        ] {
            if w != 1 {
                return Err(ConfigError::NarrowWidth(name));
            }
        }
        if self.acc_width_bytes != 4 {
            return Err(ConfigError::AccWidth);
        }
        if self.dram_bytes == 0 || self.dram_bytes % self.page_bytes != 0 {
            return Err(ConfigError::DramBytes);
        }
        Ok(())
    }

    /// Elements in one WGT matrix.
    pub fn block_area(&self) -> usize {
        self.block_size * self.block_size
    }
}

pub fn validate(cfg: &VtaConfig) -> Result<(), ConfigError> {
    cfg.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_hardware() {
        let cfg = default_config();
        assert_eq!(cfg.block_size, 16);
        assert_eq!(cfg.wgt_buf_depth, 1024);
        assert_eq!(cfg.inp_buf_depth, 2048);
        assert_eq!(cfg.acc_width_bytes, 4);
        assert_eq!(cfg.page_bytes, 4096);
        assert_eq!(validate(&cfg), Ok(()));
    }

    #[test]
    fn rejects_bad_block_size() {
        let cfg = VtaConfig { block_size: 15, ..default_config() };
        let err = validate(&cfg).unwrap_err();
        assert_eq!(err.to_string(), "block_size not power of two");
    }

    #[test]
    fn rejects_bad_acc_width() {
        let cfg = VtaConfig { acc_width_bytes: 2, ..default_config() };
        assert_eq!(validate(&cfg).unwrap_err().to_string(), "acc width must be 4");
    }

    #[test]
    fn rejects_depth_one() {
        let cfg = VtaConfig { uop_buf_depth: 1, ..default_config() };
        assert_eq!(validate(&cfg), Err(ConfigError::TooSmall("uop_buf_depth")));
    }

    #[test]
    fn partial_json_takes_defaults() {
        let cfg: VtaConfig = serde_json::from_str(r#"{"block_size": 4}"#).unwrap();
        assert_eq!(cfg.block_size, 4);
        assert_eq!(cfg.acc_buf_depth, 2048);
    }
}
