//! Operations definition: turns a block matrix multiplication
//! `C = A × B + X` plus element-wise post-ops into a VTA program.
//!
//! Every program follows the same template: a reset pair, then per tile
//! the operand loads, UOP load and GEMM (repeated per λ-segment), the ALU
//! post-ops, and the store of OUT vectors, and finally FINISH.
//!
//! With `A` an α×λ grid, `B` λ×β and `C`/`X` α×β, one GEMM computes a tile
//! using `lp_out = λ`, `lp_in = block_size`, one UOP per block of `C`:
//!
//! ```text
//! UOP(i, j) = { acc: (i·β + j)·bs, inp: i·λ·bs, wgt: j }
//! factors   = acc (0, 1), inp (bs, 1), wgt (β, 0)
//! ```
//!
//! so the outer loop walks `k`, the inner loop the rows of a block, and the
//! UOP loop the blocks of `C`.

use thiserror::Error;

use crate::blocks::{binarise, AgnosticMatrix, BlockError, BlockMatrix, MatrixKind};
use crate::config::{ConfigError, VtaConfig};
use crate::dram::{DramError, DramImage, Region, RegionKind};
use crate::isa::{
    encode_program, encode_uops, width, AluInstr, AluOpcode, BufferId, DepFlags, FinishInstr, GemmInstr,
    Instruction, IsaError, LoopNest, MemInstr, Module, Uop,
};
use crate::tensorfront::PoolMode;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("capacity exceeded: {bound} needs {need}, limit {limit}")]
    Capacity { bound: &'static str, need: u64, limit: u64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("device pooling: {0}")]
    Pool(String),
    #[error("ALU immediate {0} does not fit in 16 bits")]
    Immediate(i32),
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error(transparent)]
    Dram(#[from] DramError),
    #[error(transparent)]
    Blocks(#[from] BlockError),
}

fn capacity(bound: &'static str, need: u64, limit: u64) -> Result<(), BuildError> {
    if need > limit {
        return Err(BuildError::Capacity { bound, need, limit });
    }
    Ok(())
}

/// Pooling performed on the accelerator with ALU passes over the ACC
/// vectors of `C`, whose rows are the `in_h × in_w` spatial positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DevicePool {
    pub mode: PoolMode,
    pub in_h: usize,
    pub in_w: usize,
    pub window: usize,
    pub stride: usize,
}

impl DevicePool {
    pub fn out_dims(&self) -> (usize, usize) {
        ((self.in_h - self.window) / self.stride + 1, (self.in_w - self.window) / self.stride + 1)
    }

    pub fn out_rows(&self) -> usize {
        let (h, w) = self.out_dims();
        h * w
    }
}

/// Element-wise work applied to the GEMM result, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostOp {
    /// `acc = op(acc, imm)`, or `op(acc, acc)` without an immediate.
    Alu { op: AluOpcode, imm: Option<i32> },
    /// Spatial pooling; later ops act on the pooled vectors.
    Pool(DevicePool),
}

impl PostOp {
    pub fn relu() -> Self {
        PostOp::Alu { op: AluOpcode::Max, imm: Some(0) }
    }
}

/// `C = A × B + X` followed by post-ops, with operands already split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatMulJob {
    /// INP, α×λ grid.
    pub a: BlockMatrix,
    /// WGT, λ×β grid.
    pub b: BlockMatrix,
    /// ACC preload, α×β grid; zero when absent.
    pub x: Option<BlockMatrix>,
    pub post_ops: Vec<PostOp>,
    /// First free UOP SRAM slot; slot 0 holds the reset UOP.
    pub uop_epsilon: u32,
}

impl MatMulJob {
    /// Pads and splits hardware-agnostic operands.
    pub fn from_matrices(
        a: &AgnosticMatrix,
        b: &AgnosticMatrix,
        x: Option<&AgnosticMatrix>,
        post_ops: Vec<PostOp>,
        block_size: usize,
    ) -> Result<Self, BuildError> {
        if a.cols != b.rows {
            return Err(BuildError::Shape(format!("A is {}x{} but B is {}x{}", a.rows, a.cols, b.rows, b.cols)));
        }
        if let Some(x) = x {
            if (x.rows, x.cols) != (a.rows, b.cols) {
                return Err(BuildError::Shape(format!(
                    "X is {}x{}, expected {}x{}",
                    x.rows, x.cols, a.rows, b.cols
                )));
            }
        }
        let job = MatMulJob {
            a: BlockMatrix::from_matrix(a, block_size, MatrixKind::Inp)?,
            b: BlockMatrix::from_matrix(b, block_size, MatrixKind::Wgt)?,
            x: x.map(|x| BlockMatrix::from_matrix(x, block_size, MatrixKind::Acc)).transpose()?,
            post_ops,
            uop_epsilon: 1,
        };
        job.validate()?;
        Ok(job)
    }

    pub fn alpha(&self) -> usize {
        self.a.grid_rows
    }

    pub fn lambda(&self) -> usize {
        self.a.grid_cols
    }

    pub fn beta(&self) -> usize {
        self.b.grid_cols
    }

    pub fn block_size(&self) -> usize {
        self.a.block_size
    }

    pub fn pool(&self) -> Option<&DevicePool> {
        self.post_ops.iter().find_map(|p| match p {
            PostOp::Pool(d) => Some(d),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<(), BuildError> {
        let shape = |m: String| Err(BuildError::Shape(m));
        if self.a.kind != MatrixKind::Inp || self.b.kind != MatrixKind::Wgt {
            return shape("A must be INP and B must be WGT".into());
        }
        if self.a.block_size != self.b.block_size {
            return shape("operand block sizes differ".into());
        }
        if self.b.grid_rows != self.lambda() {
            return shape(format!("A has λ={} but B has {} block rows", self.lambda(), self.b.grid_rows));
        }
        if let Some(x) = &self.x {
            if x.kind != MatrixKind::Acc || (x.grid_rows, x.grid_cols) != (self.alpha(), self.beta()) {
                return shape(format!(
                    "X grid {}x{} must be ACC {}x{}",
                    x.grid_rows,
                    x.grid_cols,
                    self.alpha(),
                    self.beta()
                ));
            }
        }
        if self.uop_epsilon < 1 {
            return shape("uop_epsilon must be at least 1".into());
        }
        let pools = self.post_ops.iter().filter(|p| matches!(p, PostOp::Pool(_))).count();
        if pools > 1 {
            return Err(BuildError::Pool("at most one pooling step per job".into()));
        }
        if let Some(p) = self.pool() {
            if p.window == 0 || p.stride == 0 || p.window > p.in_h || p.window > p.in_w {
                return Err(BuildError::Pool(format!("bad geometry {p:?}")));
            }
            if p.in_h * p.in_w != self.a.orig_rows {
                return Err(BuildError::Pool(format!(
                    "{}x{} positions but C has {} rows",
                    p.in_h, p.in_w, self.a.orig_rows
                )));
            }
            if p.mode == PoolMode::Avg && !(p.window * p.window).is_power_of_two() {
                return Err(BuildError::Pool("average window area must be a power of two".into()));
            }
        }
        for op in &self.post_ops {
            if let PostOp::Alu { imm: Some(v), .. } = op {
                if *v < i16::MIN as i32 || *v > i16::MAX as i32 {
                    return Err(BuildError::Immediate(*v));
                }
            }
        }
        Ok(())
    }

    /// Grid of the OUT result.
    pub fn out_grid(&self) -> (usize, usize) {
        match self.pool() {
            Some(p) => (p.out_rows().div_ceil(self.block_size()), self.beta()),
            None => (self.alpha(), self.beta()),
        }
    }

    /// Shape of the result before padding.
    pub fn out_dims(&self) -> (usize, usize) {
        match self.pool() {
            Some(p) => (p.out_rows(), self.b.orig_cols),
            None => (self.a.orig_rows, self.b.orig_cols),
        }
    }
}

/// GEMM for an α×λ by λ×β block product whose UOPs start at SRAM slot `epsilon`.
pub fn gen_gemm(
    alpha: usize,
    lambda: usize,
    beta: usize,
    epsilon: u32,
    cfg: &VtaConfig,
) -> Result<(GemmInstr, Vec<Uop>), BuildError> {
    let bs = cfg.block_size;
    capacity("INP vectors (α×λ×block_size)", (alpha * lambda * bs) as u64, cfg.inp_buf_depth as u64)?;
    capacity("WGT matrices (λ×β)", (lambda * beta) as u64, cfg.wgt_buf_depth as u64)?;
    capacity("ACC vectors (α×β×block_size)", (alpha * beta * bs) as u64, cfg.acc_buf_depth as u64)?;
    capacity("UOP slots", epsilon as u64 + (alpha * beta) as u64, cfg.uop_buf_depth as u64)?;
    capacity("wgt_factor_out field", beta as u64, (1 << width::WGT_FACTOR) - 1)?;
    capacity("lp_out field", lambda as u64, (1 << width::LOOP) - 1)?;

    let mut uops = Vec::with_capacity(alpha * beta);
    for i in 0..alpha {
        for j in 0..beta {
            uops.push(Uop::new(((i * beta + j) * bs) as u32, (i * lambda * bs) as u32, j as u32));
        }
    }
    let gemm = GemmInstr {
        deps: DepFlags::default(),
        reset: false,
        nest: LoopNest {
            uop_begin: epsilon,
            uop_end: epsilon + (alpha * beta) as u32,
            lp_out: lambda as u32,
            lp_in: bs as u32,
        },
        acc_factor_out: 0,
        acc_factor_in: 1,
        inp_factor_out: bs as u32,
        inp_factor_in: 1,
        wgt_factor_out: beta as u32,
        wgt_factor_in: 0,
    };
    Ok((gemm, uops))
}

/// Element-wise ALU op over `vector_count` ACC vectors starting at `base`,
/// in place, driven by a single UOP at slot `epsilon`.
pub fn gen_alu(
    op: AluOpcode,
    imm: Option<i32>,
    base: u32,
    vector_count: usize,
    epsilon: u32,
    cfg: &VtaConfig,
) -> Result<(AluInstr, Uop), BuildError> {
    capacity("ACC vectors", base as u64 + vector_count as u64, cfg.acc_buf_depth as u64)?;
    if let Some(v) = imm {
        if v < i16::MIN as i32 || v > i16::MAX as i32 {
            return Err(BuildError::Immediate(v));
        }
    }
    let alu = AluInstr {
        deps: DepFlags::default(),
        reset: false,
        nest: LoopNest { uop_begin: epsilon, uop_end: epsilon + 1, lp_out: 1, lp_in: vector_count as u32 },
        dst_factor_out: 0,
        dst_factor_in: 1,
        src_factor_out: 0,
        src_factor_in: 1,
        op,
        use_imm: imm.is_some(),
        imm: imm.unwrap_or(0),
    };
    Ok((alu, Uop::new(base, base, 0)))
}

/// Reset pair: load an all-zero UOP into slot 0 from `uop_dram`, then a
/// reset GEMM zeroing `acc_vector_count` ACC vectors.
pub fn gen_reset(acc_vector_count: usize, uop_dram: u32) -> ([Instruction; 2], Uop) {
    let load = Instruction::Load(MemInstr::linear(BufferId::Uop, 0, uop_dram, 1));
    let reset = Instruction::Gemm(reset_gemm(0, acc_vector_count));
    ([load, reset], Uop::default())
}

fn reset_gemm(uop_slot: u32, count: usize) -> GemmInstr {
    GemmInstr {
        reset: true,
        nest: LoopNest { uop_begin: uop_slot, uop_end: uop_slot + 1, lp_out: 1, lp_in: count as u32 },
        acc_factor_in: 1,
        ..Default::default()
    }
}

pub fn gen_finish() -> FinishInstr {
    FinishInstr::default()
}

/// Store of `count` OUT vectors from SRAM slot 0 to `out_dram`.
pub fn gen_store(out_dram: u32, count: usize) -> MemInstr {
    MemInstr::linear(BufferId::Out, 0, out_dram, count as u32)
}

/// One SRAM-resident piece of the block product: rows `row0..row0+rows`
/// and columns `col0..col0+cols` of the C grid, accumulated over the listed
/// λ-segments `(k0, len)` with ACC kept resident between segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    pub row0: usize,
    pub rows: usize,
    pub col0: usize,
    pub cols: usize,
    pub segments: Vec<(usize, usize)>,
}

/// Partitions an α×λ×β block product into tiles that fit the SRAM buffers.
///
/// λ is kept whole when possible, then β, then α is split into row bands.
pub fn tile(alpha: usize, lambda: usize, beta: usize, cfg: &VtaConfig) -> Result<Vec<Tile>, BuildError> {
    let bs = cfg.block_size;
    let inp_blocks = cfg.inp_buf_depth / bs;
    let acc_blocks = cfg.acc_buf_depth.min(cfg.out_buf_depth) / bs;
    // slot 0 reset, one ALU UOP after the GEMM UOPs
    let uop_blocks = cfg.uop_buf_depth.saturating_sub(2);
    if inp_blocks == 0 || acc_blocks == 0 || cfg.wgt_buf_depth == 0 || uop_blocks == 0 {
        return Err(BuildError::Capacity { bound: "single block", need: bs as u64, limit: cfg.inp_buf_depth as u64 });
    }
    let max_wgt_factor = (1usize << width::WGT_FACTOR) - 1;
    let max_loop = (1usize << width::LOOP) - 1;

    let seg = lambda.min(inp_blocks).min(cfg.wgt_buf_depth).min(max_loop).max(1);
    let cols = beta
        .min(cfg.wgt_buf_depth / seg)
        .min(acc_blocks)
        .min(max_wgt_factor)
        .min(uop_blocks)
        .max(1);
    let rows = alpha.min(inp_blocks / seg).min(acc_blocks / cols).min(uop_blocks / cols).max(1);

    let mut tiles = Vec::new();
    for row0 in (0..alpha).step_by(rows) {
        for col0 in (0..beta).step_by(cols) {
            let segments = (0..lambda).step_by(seg).map(|k0| (k0, seg.min(lambda - k0))).collect();
            tiles.push(Tile { row0, rows: rows.min(alpha - row0), col0, cols: cols.min(beta - col0), segments });
        }
    }
    Ok(tiles)
}

/// Counters predicted from the generated instruction stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PredictedStats {
    pub gemm_loop_count: u64,
    pub reset_loop_count: u64,
    pub alu_loop_count: u64,
    pub dram_bytes_loaded: u64,
    pub dram_bytes_stored: u64,
}

impl PredictedStats {
    pub fn from_instructions(instrs: &[Instruction], block_size: usize) -> Self {
        let mut s = PredictedStats::default();
        for i in instrs {
            match i {
                Instruction::Gemm(g) if g.reset => s.reset_loop_count += g.nest.body_count(),
                Instruction::Gemm(g) => s.gemm_loop_count += g.nest.body_count(),
                Instruction::Alu(a) => s.alu_loop_count += a.nest.body_count(),
                Instruction::Load(m) => {
                    s.dram_bytes_loaded +=
                        m.payload_structures() * RegionKind::from_buffer(m.buffer).structure_bytes(block_size)
                }
                Instruction::Store(m) => {
                    s.dram_bytes_stored += m.payload_structures() * RegionKind::Out.structure_bytes(block_size)
                }
                Instruction::Finish(_) => {}
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    /// Contents of the UOP region, in load order.
    pub uops: Vec<Uop>,
    pub tiles: Vec<Tile>,
    pub predicted: PredictedStats,
}

/// Regions holding each operand of a compiled job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperandRegions {
    pub inp: Region,
    pub wgt: Region,
    pub acc: Option<Region>,
    pub out: Region,
    pub uop: Region,
    pub instr: Region,
}

impl OperandRegions {
    pub fn get(&self, kind: RegionKind) -> Option<&Region> {
        match kind {
            RegionKind::Inp => Some(&self.inp),
            RegionKind::Wgt => Some(&self.wgt),
            RegionKind::Acc => self.acc.as_ref(),
            RegionKind::Out => Some(&self.out),
            RegionKind::Uop => Some(&self.uop),
            RegionKind::Instr => Some(&self.instr),
        }
    }
}

/// Logical DRAM addresses the program refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Placement {
    pub inp: u32,
    pub wgt: u32,
    pub acc: u32,
    pub out: u32,
    pub uop: u32,
}

struct Builder<'a> {
    cfg: &'a VtaConfig,
    instrs: Vec<Instruction>,
    uops: Vec<Uop>,
    uop_base: u32,
}

impl Builder<'_> {
    fn load_uops(&mut self, slot: u32, uops: &[Uop]) {
        let at = self.uop_base + self.uops.len() as u32;
        self.uops.extend_from_slice(uops);
        self.instrs.push(Instruction::Load(MemInstr::linear(BufferId::Uop, slot, at, uops.len() as u32)));
    }

    fn load_2d(&mut self, buffer: BufferId, dram: usize, rows: usize, row_len: usize, stride: usize) {
        let m = if rows == 1 || row_len == stride {
            MemInstr::linear(buffer, 0, dram as u32, (rows * row_len) as u32)
        } else {
            MemInstr {
                y_size: rows as u32,
                x_size: row_len as u32,
                x_stride: stride as u32,
                ..MemInstr::linear(buffer, 0, dram as u32, 0)
            }
        };
        self.instrs.push(Instruction::Load(m));
    }
}

/// Emits the full program for `job` against the given DRAM placement.
pub fn build_program(job: &MatMulJob, at: &Placement, cfg: &VtaConfig) -> Result<Program, BuildError> {
    cfg.validate()?;
    job.validate()?;
    let bs = cfg.block_size;
    if job.block_size() != bs {
        return Err(BuildError::Shape(format!("job block size {} != config {}", job.block_size(), bs)));
    }
    let (alpha, lambda, beta) = (job.alpha(), job.lambda(), job.beta());
    let tiles = tile(alpha, lambda, beta, cfg)?;
    let pool = job.pool().copied();
    if pool.is_some() && tiles.iter().any(|t| t.rows != alpha || t.cols != beta) {
        return Err(BuildError::Pool("the GEMM result must fit on chip in one tile".into()));
    }
    let eps = job.uop_epsilon;

    let mut b = Builder { cfg, instrs: Vec::new(), uops: Vec::new(), uop_base: at.uop };
    let tile_vectors = |t: &Tile| t.rows * t.cols * bs;
    let pool_area = pool.map(|p| p.out_rows().div_ceil(bs) * beta * bs).unwrap_or(0);
    let first_sweep = tiles.iter().map(tile_vectors).max().unwrap_or(0) + pool_area;
    capacity("ACC vectors", first_sweep as u64, cfg.acc_buf_depth.min(cfg.out_buf_depth) as u64)?;

    // 1. reset pair
    b.load_uops(0, &[Uop::default()]);
    b.instrs.push(Instruction::Gemm(reset_gemm(0, first_sweep)));

    for (t_idx, t) in tiles.iter().enumerate() {
        // 2. ACC preload or re-zeroing
        if let Some(_) = &job.x {
            b.instrs.push(Instruction::Load(MemInstr {
                y_size: t.rows as u32,
                x_size: (t.cols * bs) as u32,
                x_stride: (beta * bs) as u32,
                ..MemInstr::linear(BufferId::Acc, 0, at.acc + ((t.row0 * beta + t.col0) * bs) as u32, 0)
            }));
        } else if t_idx > 0 {
            b.instrs.push(Instruction::Gemm(reset_gemm(0, tile_vectors(t))));
        }
        // 2-3. operand loads and GEMM per λ-segment
        for &(k0, seg) in &t.segments {
            b.load_2d(BufferId::Inp, at.inp as usize + (t.row0 * lambda + k0) * bs, t.rows, seg * bs, lambda * bs);
            b.load_2d(BufferId::Wgt, at.wgt as usize + k0 * beta + t.col0, seg, t.cols, beta);
            let (gemm, uops) = gen_gemm(t.rows, seg, t.cols, eps, cfg)?;
            b.load_uops(eps, &uops);
            b.instrs.push(Instruction::Gemm(gemm));
        }
        // 4. ALU post-ops
        let mut next_slot = eps + (t.rows * t.cols) as u32;
        let mut area_base = 0u32;
        let mut area_len = tile_vectors(t);
        let mut alu_slot: Option<u32> = None;
        for op in &job.post_ops {
            match *op {
                PostOp::Alu { op, imm } => {
                    let slot = match alu_slot {
                        Some(s) => s,
                        None => {
                            let s = next_slot;
                            next_slot += 1;
                            b.load_uops(s, &[Uop::new(area_base, area_base, 0)]);
                            alu_slot = Some(s);
                            s
                        }
                    };
                    let (alu, _) = gen_alu(op, imm, area_base, area_len, slot, cfg)?;
                    b.instrs.push(Instruction::Alu(alu));
                }
                PostOp::Pool(p) => {
                    let base = (alpha * beta * bs) as u32;
                    next_slot = emit_device_pool(&mut b, &p, beta, base, pool_area, next_slot)?;
                    area_base = base;
                    area_len = pool_area;
                    alu_slot = None;
                }
            }
        }
        capacity("UOP slots", next_slot as u64, cfg.uop_buf_depth as u64)?;
        // 5. store
        let store = if pool.is_some() {
            MemInstr { sram_base: area_base, ..gen_store(at.out, area_len) }
        } else if t.cols == beta {
            gen_store(at.out + (t.row0 * beta * bs) as u32, tile_vectors(t))
        } else {
            MemInstr {
                y_size: t.rows as u32,
                x_size: (t.cols * bs) as u32,
                x_stride: (beta * bs) as u32,
                ..gen_store(at.out + ((t.row0 * beta + t.col0) * bs) as u32, 0)
            }
        };
        b.instrs.push(Instruction::Store(store));
    }
    // 6. termination
    b.instrs.push(Instruction::Finish(gen_finish()));
    assign_dependency_flags(&mut b.instrs);

    let predicted = PredictedStats::from_instructions(&b.instrs, bs);
    Ok(Program { instructions: b.instrs, uops: b.uops, tiles, predicted })
}

/// Pooling over the rows of C (block layout, β column blocks) into a fresh
/// ACC area at `base`: reset the area, then accumulate each window element
/// with vector-vector ALU ops (ADD for average, ADD then MAX for max), and
/// divide average sums by an arithmetic shift. Returns the next free UOP slot.
fn emit_device_pool(
    b: &mut Builder<'_>,
    p: &DevicePool,
    beta: usize,
    base: u32,
    area_len: usize,
    first_slot: u32,
) -> Result<u32, BuildError> {
    let bs = b.cfg.block_size;
    let (out_h, out_w) = p.out_dims();
    capacity("ACC vectors (pool area)", base as u64 + area_len as u64, b.cfg.acc_buf_depth as u64)?;
    capacity("OUT vectors (pool area)", base as u64 + area_len as u64, b.cfg.out_buf_depth as u64)?;
    let vec_of = |row: usize, j: usize| ((row / bs) * beta + j) * bs + row % bs;

    let mut uops = vec![Uop::new(base, 0, 0)];
    for wy in 0..p.window {
        for wx in 0..p.window {
            for py in 0..out_h {
                for px in 0..out_w {
                    let o = py * out_w + px;
                    let r = (py * p.stride + wy) * p.in_w + px * p.stride + wx;
                    for j in 0..beta {
                        uops.push(Uop::new(base + vec_of(o, j) as u32, vec_of(r, j) as u32, 0));
                    }
                }
            }
        }
    }
    let shift_slot = first_slot + uops.len() as u32;
    uops.push(Uop::new(base, base, 0));
    capacity("UOP slots", shift_slot as u64 + 1, b.cfg.uop_buf_depth as u64)?;
    b.load_uops(first_slot, &uops);

    b.instrs.push(Instruction::Gemm(reset_gemm(first_slot, area_len)));
    let per_pass = (out_h * out_w * beta) as u32;
    let pass = |op, begin, end| AluInstr {
        deps: DepFlags::default(),
        reset: false,
        nest: LoopNest { uop_begin: begin, uop_end: end, lp_out: 1, lp_in: 1 },
        dst_factor_out: 0,
        dst_factor_in: 0,
        src_factor_out: 0,
        src_factor_in: 0,
        op,
        use_imm: false,
        imm: 0,
    };
    let first = first_slot + 1;
    match p.mode {
        PoolMode::Avg => {
            b.instrs.push(Instruction::Alu(pass(AluOpcode::Add, first, shift_slot)));
            let area = (p.window * p.window) as u32;
            let (shr, _) = gen_alu(AluOpcode::Shr, Some(area.trailing_zeros() as i32), base, area_len, shift_slot, b.cfg)?;
            b.instrs.push(Instruction::Alu(shr));
        }
        PoolMode::Max => {
            b.instrs.push(Instruction::Alu(pass(AluOpcode::Add, first, first + per_pass)));
            if p.window > 1 {
                b.instrs.push(Instruction::Alu(pass(AluOpcode::Max, first + per_pass, shift_slot)));
            }
        }
    }
    Ok(shift_slot + 1)
}

/// Sets push/pop flags for strictly sequential execution: whenever control
/// passes between neighbouring modules, the last instruction of one pushes a
/// token the first instruction of the other pops.
pub fn assign_dependency_flags(instrs: &mut [Instruction]) {
    for i in instrs.iter_mut() {
        *i.deps_mut() = DepFlags::default();
    }
    for n in 1..instrs.len() {
        let (from, to) = (instrs[n - 1].module(), instrs[n].module());
        let (push_next, pop_prev) = match (from, to) {
            (Module::Load, Module::Compute) | (Module::Compute, Module::Store) => (true, true),
            (Module::Compute, Module::Load) | (Module::Store, Module::Compute) => (false, false),
            _ => continue,
        };
        if push_next {
            instrs[n - 1].deps_mut().push_next = true;
        } else {
            instrs[n - 1].deps_mut().push_prev = true;
        }
        if pop_prev {
            instrs[n].deps_mut().pop_prev = true;
        } else {
            instrs[n].deps_mut().pop_next = true;
        }
    }
}

/// Rewrites the DRAM addresses of LOAD/STORE instructions from the
/// placement they were generated for to another one.
pub fn relink(instrs: &[Instruction], from: &Placement, to: &Placement) -> Vec<Instruction> {
    let shift = |buffer: BufferId, addr: u32| -> u32 {
        let (f, t) = match buffer {
            BufferId::Inp => (from.inp, to.inp),
            BufferId::Wgt => (from.wgt, to.wgt),
            BufferId::Acc => (from.acc, to.acc),
            BufferId::Out => (from.out, to.out),
            BufferId::Uop => (from.uop, to.uop),
        };
        addr - f + t
    };
    instrs
        .iter()
        .map(|i| match *i {
            Instruction::Load(mut m) => {
                m.dram_base = shift(m.buffer, m.dram_base);
                Instruction::Load(m)
            }
            Instruction::Store(mut m) => {
                m.dram_base = shift(m.buffer, m.dram_base);
                Instruction::Store(m)
            }
            other => other,
        })
        .collect()
}

/// A job compiled into a DRAM image ready to simulate.
#[derive(Debug, Clone)]
pub struct CompiledMatMul {
    pub job: MatMulJob,
    pub program: Program,
    pub image: DramImage,
    pub regions: OperandRegions,
    pub placement: Placement,
    pub inp_bytes: Vec<u8>,
    pub wgt_bytes: Vec<u8>,
    pub acc_bytes: Option<Vec<u8>>,
    pub instr_bytes: Vec<u8>,
    pub uop_bytes: Vec<u8>,
}

impl CompiledMatMul {
    pub fn out_grid(&self) -> (usize, usize) {
        self.job.out_grid()
    }

    pub fn out_dims(&self) -> (usize, usize) {
        self.job.out_dims()
    }
}

/// Allocates every region (INP, WGT, ACC, OUT, UOP, INSTR in that order),
/// builds the program and writes all binaries into a fresh DRAM image.
pub fn compile_matmul(job: MatMulJob, cfg: &VtaConfig) -> Result<CompiledMatMul, BuildError> {
    cfg.validate()?;
    job.validate()?;
    let bs = cfg.block_size;
    let mut image = DramImage::new(cfg, 0)?;
    let inp_bytes = binarise(&job.a)?;
    let wgt_bytes = binarise(&job.b)?;
    let acc_bytes = job.x.as_ref().map(binarise).transpose()?;
    let (out_rows, out_cols) = job.out_grid();
    let out_len = (out_rows * out_cols * bs * bs) as u64;

    let inp = image.allocate("inp", inp_bytes.len() as u64, RegionKind::Inp)?;
    let wgt = image.allocate("wgt", wgt_bytes.len() as u64, RegionKind::Wgt)?;
    let acc = acc_bytes
        .as_ref()
        .map(|a| image.allocate("acc", a.len() as u64, RegionKind::Acc))
        .transpose()?;
    let out = image.allocate("out", out_len, RegionKind::Out)?;
    let log = |r: &Region| r.log_start as u32;
    let mut placement = Placement {
        inp: log(&inp),
        wgt: log(&wgt),
        acc: acc.as_ref().map(log).unwrap_or(0),
        out: log(&out),
        uop: 0,
    };
    let sizing = build_program(&job, &placement, cfg)?;
    let uop = image.allocate("uop", (sizing.uops.len() * 4) as u64, RegionKind::Uop)?;
    placement.uop = log(&uop);
    let program = build_program(&job, &placement, cfg)?;
    let instr = image.allocate("instr", (program.instructions.len() * 16) as u64, RegionKind::Instr)?;

    let instr_bytes = encode_program(&program.instructions)?;
    let uop_bytes = encode_uops(&program.uops)?;
    image.write_region(&inp, &inp_bytes)?;
    image.write_region(&wgt, &wgt_bytes)?;
    if let (Some(r), Some(bytes)) = (&acc, &acc_bytes) {
        image.write_region(r, bytes)?;
    }
    image.write_region(&uop, &uop_bytes)?;
    image.write_region(&instr, &instr_bytes)?;

    Ok(CompiledMatMul {
        job,
        program,
        image,
        regions: OperandRegions { inp, wgt, acc, out, uop, instr },
        placement,
        inp_bytes,
        wgt_bytes,
        acc_bytes,
        instr_bytes,
        uop_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;

    fn cfg(bs: usize) -> VtaConfig {
        VtaConfig { block_size: bs, ..default_config() }
    }

    #[test]
    fn single_block_gemm() {
        let (g, uops) = gen_gemm(1, 1, 1, 1, &cfg(16)).unwrap();
        assert_eq!(g.nest, LoopNest { uop_begin: 1, uop_end: 2, lp_out: 1, lp_in: 16 });
        assert_eq!(uops, vec![Uop::new(0, 0, 0)]);
        assert_eq!(
            (g.acc_factor_out, g.acc_factor_in, g.inp_factor_out, g.inp_factor_in, g.wgt_factor_out, g.wgt_factor_in),
            (0, 1, 16, 1, 1, 0)
        );
    }

    #[test]
    fn two_by_one_grid_uops() {
        // C_{iβ+j} = Σ_k A_{iλ+k} B_{kβ+j}: blocks (0,0) and (1,0)
        let (_, uops) = gen_gemm(2, 1, 1, 1, &cfg(2)).unwrap();
        assert_eq!(uops, vec![Uop::new(0, 0, 0), Uop::new(2, 2, 0)]);
    }

    #[test]
    fn gemm_capacity_errors_name_bound() {
        let err = gen_gemm(129, 1, 1, 1, &cfg(16)).unwrap_err();
        assert!(matches!(err, BuildError::Capacity { bound, .. } if bound.starts_with("INP")), "{err}");
        let err = gen_gemm(1, 33, 32, 1, &cfg(16)).unwrap_err();
        assert!(matches!(err, BuildError::Capacity { bound, .. } if bound.starts_with("WGT")), "{err}");
        let err = gen_gemm(65, 1, 2, 1, &cfg(16)).unwrap_err();
        assert!(matches!(err, BuildError::Capacity { bound, .. } if bound.starts_with("ACC")), "{err}");
    }

    #[test]
    fn relu_alu() {
        let (alu, uop) = gen_alu(AluOpcode::Max, Some(0), 0, 16, 2, &cfg(16)).unwrap();
        assert_eq!(alu.op, AluOpcode::Max);
        assert!(alu.use_imm);
        assert_eq!(alu.imm, 0);
        assert_eq!(alu.nest, LoopNest { uop_begin: 2, uop_end: 3, lp_out: 1, lp_in: 16 });
        assert_eq!((alu.dst_factor_out, alu.dst_factor_in, alu.src_factor_out, alu.src_factor_in), (0, 1, 0, 1));
        assert_eq!(uop, Uop::default());
        assert!(gen_alu(AluOpcode::Max, Some(0), 0, 2049, 2, &cfg(16)).is_err());
        assert_eq!(gen_alu(AluOpcode::Add, Some(70000), 0, 1, 2, &cfg(16)), Err(BuildError::Immediate(70000)));
    }

    #[test]
    fn reset_pair_shape() {
        let ([load, gemm], uop) = gen_reset(16, 0x1000);
        assert_eq!(uop, Uop::default());
        assert!(matches!(load, Instruction::Load(m) if m.buffer == BufferId::Uop && m.dram_base == 0x1000 && m.x_size == 1));
        match gemm {
            Instruction::Gemm(g) => {
                assert!(g.reset);
                assert_eq!(g.nest, LoopNest { uop_begin: 0, uop_end: 1, lp_out: 1, lp_in: 16 });
            }
            other => panic!("{other:?}"),
        }
        let ([_, empty], _) = gen_reset(0, 0);
        assert!(matches!(empty, Instruction::Gemm(g) if g.nest.body_count() == 0));
    }

    #[test]
    fn tiling_examples() {
        let c = default_config();
        assert_eq!(tile(49, 2, 1, &c).unwrap().len(), 1);
        let t = tile(200, 1, 1, &c).unwrap();
        assert!(t.len() >= 2);
        assert_eq!(t.iter().map(|t| t.rows).sum::<usize>(), 200);
        // λ above the INP budget splits into segments
        let t = tile(1, 129, 1, &c).unwrap();
        assert_eq!(t[0].segments, vec![(0, 128), (128, 1)]);
        // β above the WGT budget splits into column bands
        let t = tile(1, 33, 32, &c).unwrap();
        assert!(t.len() >= 2 && t.iter().all(|t| t.segments.len() == 1));
        for t in tile(7, 300, 90, &c).unwrap() {
            let seg = t.segments.iter().map(|s| s.1).max().unwrap();
            assert!(gen_gemm(t.rows, seg, t.cols, 1, &c).is_ok());
        }
    }

    #[test]
    fn dependency_flags_balance() {
        let job = MatMulJob::from_matrices(
            &AgnosticMatrix::zeros(20, 20),
            &AgnosticMatrix::zeros(20, 20),
            None,
            vec![PostOp::relu()],
            16,
        )
        .unwrap();
        let p = build_program(&job, &Placement::default(), &cfg(16)).unwrap();
        let (mut lc, mut cl, mut cs, mut sc) = (0i32, 0i32, 0i32, 0i32);
        for i in &p.instructions {
            let d = i.deps();
            match i.module() {
                Module::Load => {
                    cl -= d.pop_next as i32;
                    lc += d.push_next as i32;
                    assert!(!d.pop_prev && !d.push_prev);
                }
                Module::Compute => {
                    lc -= d.pop_prev as i32;
                    sc -= d.pop_next as i32;
                    cl += d.push_prev as i32;
                    cs += d.push_next as i32;
                }
                Module::Store => {
                    cs -= d.pop_prev as i32;
                    sc += d.push_prev as i32;
                }
            }
            assert!(lc >= 0 && cl >= 0 && cs >= 0 && sc >= 0);
        }
        assert_eq!((lc, cl, cs, sc), (0, 0, 0, 0));
    }

    #[test]
    fn empty_post_ops_emit_no_alu() {
        let job = MatMulJob::from_matrices(
            &AgnosticMatrix::zeros(4, 4),
            &AgnosticMatrix::zeros(4, 4),
            None,
            vec![],
            4,
        )
        .unwrap();
        let p = build_program(&job, &Placement::default(), &cfg(4)).unwrap();
        assert!(!p.instructions.iter().any(|i| matches!(i, Instruction::Alu(_))));
        assert!(matches!(p.instructions.last(), Some(Instruction::Finish(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let err = MatMulJob::from_matrices(&AgnosticMatrix::zeros(2, 3), &AgnosticMatrix::zeros(4, 2), None, vec![], 2);
        assert!(matches!(err, Err(BuildError::Shape(_))));
    }

    #[test]
    fn relink_shifts_per_buffer() {
        let from = Placement { inp: 0x100, wgt: 0x20, acc: 0, out: 0x300, uop: 0x1000 };
        let to = Placement { inp: 0x500, wgt: 0x80, acc: 0, out: 0x700, uop: 0x3000 };
        let instrs = vec![
            Instruction::Load(MemInstr::linear(BufferId::Inp, 0, 0x104, 1)),
            Instruction::Load(MemInstr::linear(BufferId::Uop, 0, 0x1002, 1)),
            Instruction::Store(MemInstr::linear(BufferId::Out, 0, 0x300, 1)),
        ];
        let out = relink(&instrs, &from, &to);
        let addrs: Vec<u32> = out
            .iter()
            .map(|i| match i {
                Instruction::Load(m) | Instruction::Store(m) => m.dram_base,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(addrs, vec![0x504, 0x3002, 0x700]);
    }
}
