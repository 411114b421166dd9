//! Stand-alone toolchain for the Versatile Tensor Accelerator (VTA).
//!
//! Hardware-agnostic matrix operations and CNN layers are lowered to
//! bit-exact VTA binaries (instructions, micro-ops, data buffers), executed
//! on a functional simulator, and checked against an independent integer
//! golden model.
//!
//! The pipeline, bottom-up:
//!
//! - [`config`]: hardware parameters.
//! - [`isa`] / [`disasm`]: 128-bit instruction and 32-bit UOP codec.
//! - [`dram`]: page allocator and physical/logical address mapping.
//! - [`blocks`]: padding, block splitting and binarisation of operands.
//! - [`progbuild`]: six-phase program generation with SRAM tiling.
//! - [`tensorfront`]: im2row/ker2col lowering and layer chaining.
//! - [`funcsim`]: functional simulator.
//! - [`oracle`]: naive reference implementations.

pub mod blocks;
pub mod config;
pub mod disasm;
pub mod dram;
pub mod funcsim;
pub mod isa;
pub mod oracle;
pub mod progbuild;
pub mod tensorfront;

mod error;

pub use blocks::{AgnosticMatrix, BlockMatrix, MatrixKind};
pub use config::{default_config, VtaConfig};
pub use dram::{DramImage, DramLayout, Region, RegionKind};
pub use error::Error;
pub use funcsim::{RunStats, Simulator};
pub use isa::{Instruction, Uop};
pub use progbuild::{CompiledMatMul, MatMulJob, PostOp, Program};
pub use tensorfront::{LayerSpec, Tensor4};
