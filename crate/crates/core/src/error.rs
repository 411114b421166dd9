use thiserror::Error;

use crate::blocks::BlockError;
use crate::config::ConfigError;
use crate::disasm::DisasmError;
use crate::dram::DramError;
use crate::funcsim::SimError;
use crate::isa::IsaError;
use crate::oracle::OracleError;
use crate::progbuild::BuildError;
use crate::tensorfront::TensorError;

/// Any failure of the toolchain, tagged by the stage that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("isa: {0}")]
    Isa(#[from] IsaError),
    #[error("disasm: {0}")]
    Disasm(#[from] DisasmError),
    #[error("dram: {0}")]
    Dram(#[from] DramError),
    #[error("data definition: {0}")]
    Blocks(#[from] BlockError),
    #[error("operations definition: {0}")]
    Build(#[from] BuildError),
    #[error("tensor front end: {0}")]
    Tensor(#[from] TensorError),
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
}

impl Error {
    /// Short name of the failing pipeline stage.
    pub fn stage(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Isa(_) => "isa",
            Error::Disasm(_) => "disasm",
            Error::Dram(_) => "dram",
            Error::Blocks(_) => "data-definition",
            Error::Build(_) => "operations-definition",
            Error::Tensor(_) => "tensor-front-end",
            Error::Sim(_) => "simulator",
            Error::Oracle(_) => "oracle",
        }
    }
}
