#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vta_core::funcsim::Simulator;
use vta_core::oracle;
use vta_core::progbuild::{compile_matmul, CompiledMatMul, MatMulJob, PostOp};
use vta_core::{AgnosticMatrix, RunStats, VtaConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: i32, hi: i32) -> AgnosticMatrix {
    AgnosticMatrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..=hi))
}

pub struct Outcome {
    pub compiled: CompiledMatMul,
    pub stats: RunStats,
    pub out: Vec<u8>,
    pub expected: Vec<u8>,
}

/// Compiles, simulates and evaluates the oracle for one job.
pub fn run_job(
    a: &AgnosticMatrix,
    b: &AgnosticMatrix,
    x: Option<&AgnosticMatrix>,
    post_ops: Vec<PostOp>,
    cfg: &VtaConfig,
) -> Outcome {
    let job = MatMulJob::from_matrices(a, b, x, post_ops.clone(), cfg.block_size).expect("job");
    let mut compiled = compile_matmul(job, cfg).expect("compile");
    let mut sim = Simulator::new(cfg).unwrap().strict_deps(true);
    let instr = compiled.regions.instr.clone();
    let stats = sim.run(&mut compiled.image, &instr).expect("simulate");
    let out = compiled.image.read_region(&compiled.regions.out).unwrap();
    let expected = oracle::out_bytes(&oracle::matmul_job(a, b, x, &post_ops).unwrap(), cfg.block_size);
    Outcome { compiled, stats, out, expected }
}
