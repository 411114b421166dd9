//! Functional simulator.
//!
//! Executes an instruction stream held in DRAM strictly in order, with the
//! exact integer semantics of the accelerator: int8 × int8 products widened
//! and accumulated in wrapping int32, OUT = low byte of ACC. Dependency flags
//! are checked as a token ledger but never reorder execution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, VtaConfig};
use crate::disasm::format_instruction;
use crate::dram::{DramError, DramImage, Region, RegionKind};
use crate::isa::{
    decode_instruction, decode_uop, AluInstr, AluOpcode, BufferId, GemmInstr, Instruction, IsaError, MemInstr,
    Module, Uop, INSTRUCTION_BYTES,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("instruction {index}: {source}")]
    Decode { index: usize, source: IsaError },
    #[error("instruction stream in region {0} ends without FINISH")]
    MissingFinish(String),
    #[error("region {0} is not an INSTR region")]
    NotInstructions(String),
    #[error("instruction {index}: {buffer} index {value} out of range (depth {depth}){at}")]
    SramRange { index: usize, buffer: &'static str, value: u64, depth: usize, at: String },
    #[error("instruction {index}: STORE with padding is not supported")]
    StorePadding { index: usize },
    #[error("instruction {index}: dependency violation: {what}")]
    Dependency { index: usize, what: String },
    #[error("instruction {index}: {source}")]
    Dram { index: usize, source: DramError },
}

/// Counters reported after a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    /// Innermost-body executions of non-reset GEMMs (one vector × matrix).
    pub gemm_loop_count: u64,
    /// `lp_out × lp_in` iterations of non-reset GEMMs.
    pub gemm_inner_loop_count: u64,
    /// Innermost-body executions of reset GEMMs.
    pub reset_loop_count: u64,
    pub alu_loop_count: u64,
    pub dram_bytes_loaded: u64,
    pub dram_bytes_stored: u64,
    pub instruction_count: u64,
    /// Token-ledger violations tolerated in non-strict mode.
    pub dependency_violations: u64,
}

impl RunStats {
    pub fn accumulate(&mut self, o: &RunStats) {
        self.gemm_loop_count += o.gemm_loop_count;
        self.gemm_inner_loop_count += o.gemm_inner_loop_count;
        self.reset_loop_count += o.reset_loop_count;
        self.alu_loop_count += o.alu_loop_count;
        self.dram_bytes_loaded += o.dram_bytes_loaded;
        self.dram_bytes_stored += o.dram_bytes_stored;
        self.instruction_count += o.instruction_count;
        self.dependency_violations += o.dependency_violations;
    }
}

/// On-chip buffers, zero-initialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SramState {
    block_size: usize,
    pub inp: Vec<i8>,
    pub wgt: Vec<i8>,
    pub acc: Vec<i32>,
    pub out: Vec<i8>,
    pub uop: Vec<Uop>,
}

impl SramState {
    pub fn new(cfg: &VtaConfig) -> Self {
        let bs = cfg.block_size;
        SramState {
            block_size: bs,
            inp: vec![0; cfg.inp_buf_depth * bs],
            wgt: vec![0; cfg.wgt_buf_depth * bs * bs],
            acc: vec![0; cfg.acc_buf_depth * bs],
            out: vec![0; cfg.out_buf_depth * bs],
            uop: vec![Uop::default(); cfg.uop_buf_depth],
        }
    }

    pub fn acc_vector(&self, i: usize) -> &[i32] {
        &self.acc[i * self.block_size..(i + 1) * self.block_size]
    }

    pub fn acc_vector_mut(&mut self, i: usize) -> &mut [i32] {
        &mut self.acc[i * self.block_size..(i + 1) * self.block_size]
    }

    pub fn inp_vector(&self, i: usize) -> &[i8] {
        &self.inp[i * self.block_size..(i + 1) * self.block_size]
    }

    pub fn out_vector(&self, i: usize) -> &[i8] {
        &self.out[i * self.block_size..(i + 1) * self.block_size]
    }

    fn depth(&self, buffer: BufferId) -> usize {
        let bs = self.block_size;
        match buffer {
            BufferId::Uop => self.uop.len(),
            BufferId::Wgt => self.wgt.len() / (bs * bs),
            BufferId::Inp => self.inp.len() / bs,
            BufferId::Acc => self.acc.len() / bs,
            BufferId::Out => self.out.len() / bs,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct TokenQueues {
    load_to_compute: i64,
    compute_to_load: i64,
    compute_to_store: i64,
    store_to_compute: i64,
}

pub struct Simulator {
    cfg: VtaConfig,
    sram: SramState,
    stats: RunStats,
    strict_deps: bool,
    queues: TokenQueues,
    trace: Option<Vec<String>>,
    scratch: Vec<i32>,
}

impl Simulator {
    pub fn new(cfg: &VtaConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        Ok(Simulator {
            cfg: cfg.clone(),
            sram: SramState::new(cfg),
            stats: RunStats::default(),
            strict_deps: false,
            queues: TokenQueues::default(),
            trace: None,
            scratch: vec![0; cfg.block_size],
        })
    }

    /// Turns dependency-ledger violations into errors instead of counted
    /// warnings.
    pub fn strict_deps(mut self, strict: bool) -> Self {
        self.strict_deps = strict;
        self
    }

    /// Records one line per executed instruction.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn trace(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn sram(&self) -> &SramState {
        &self.sram
    }

    pub fn sram_mut(&mut self) -> &mut SramState {
        &mut self.sram
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    /// Runs the instruction stream stored in `instr_region` until FINISH.
    /// Returns the statistics of this run only; SRAM state persists.
    pub fn run(&mut self, dram: &mut DramImage, instr_region: &Region) -> Result<RunStats, SimError> {
        if instr_region.kind != RegionKind::Instr {
            return Err(SimError::NotInstructions(instr_region.name.clone()));
        }
        self.stats = RunStats::default();
        self.queues = TokenQueues::default();
        let count = instr_region.size_bytes as usize / INSTRUCTION_BYTES;
        for index in 0..count {
            let phy = instr_region.phy_start + (index * INSTRUCTION_BYTES) as u64;
            let word = dram.read(phy, INSTRUCTION_BYTES).map_err(|source| SimError::Dram { index, source })?;
            let instr = decode_instruction(&word).map_err(|source| SimError::Decode { index, source })?;
            if let Some(t) = self.trace.as_mut() {
                t.push(format!("{index:05}  {}", format_instruction(&instr)));
            }
            self.stats.instruction_count += 1;
            self.pop_tokens(index, &instr)?;
            match &instr {
                Instruction::Load(m) => self.exec_load(index, m, dram)?,
                Instruction::Store(m) => self.exec_store(index, m, dram)?,
                Instruction::Gemm(g) => self.exec_gemm(index, g)?,
                Instruction::Alu(a) => self.exec_alu(index, a)?,
                Instruction::Finish(_) => {}
            }
            self.push_tokens(index, &instr)?;
            if let Instruction::Finish(_) = instr {
                self.check_drained(index)?;
                return Ok(self.stats);
            }
        }
        Err(SimError::MissingFinish(instr_region.name.clone()))
    }

    fn violation(&mut self, index: usize, what: String) -> Result<(), SimError> {
        if self.strict_deps {
            return Err(SimError::Dependency { index, what });
        }
        self.stats.dependency_violations += 1;
        Ok(())
    }

    fn pop_tokens(&mut self, index: usize, instr: &Instruction) -> Result<(), SimError> {
        let d = instr.deps();
        let module = instr.module();
        let q = &mut self.queues;
        let mut bad = Vec::new();
        let mut pop = |flag: bool, queue: Option<&mut i64>, name: &str| {
            if !flag {
                return;
            }
            match queue {
                Some(v) if *v > 0 => *v -= 1,
                Some(_) => bad.push(format!("pop from empty {name} queue")),
                None => bad.push(format!("{module:?} module has no {name} neighbour")),
            }
        };
        match module {
            Module::Load => {
                pop(d.pop_prev, None, "prev");
                pop(d.pop_next, Some(&mut q.compute_to_load), "compute->load");
            }
            Module::Compute => {
                pop(d.pop_prev, Some(&mut q.load_to_compute), "load->compute");
                pop(d.pop_next, Some(&mut q.store_to_compute), "store->compute");
            }
            Module::Store => {
                pop(d.pop_prev, Some(&mut q.compute_to_store), "compute->store");
                pop(d.pop_next, None, "next");
            }
        }
        for what in bad {
            self.violation(index, what)?;
        }
        Ok(())
    }

    fn push_tokens(&mut self, index: usize, instr: &Instruction) -> Result<(), SimError> {
        let d = instr.deps();
        let q = &mut self.queues;
        let mut bad = None;
        match instr.module() {
            Module::Load => {
                q.load_to_compute += d.push_next as i64;
                if d.push_prev {
                    bad = Some("load module has no prev neighbour");
                }
            }
            Module::Compute => {
                q.compute_to_load += d.push_prev as i64;
                q.compute_to_store += d.push_next as i64;
            }
            Module::Store => {
                q.store_to_compute += d.push_prev as i64;
                if d.push_next {
                    bad = Some("store module has no next neighbour");
                }
            }
        }
        match bad {
            Some(what) => self.violation(index, what.to_string()),
            None => Ok(()),
        }
    }

    fn check_drained(&mut self, index: usize) -> Result<(), SimError> {
        let q = self.queues;
        if q.load_to_compute | q.compute_to_load | q.compute_to_store | q.store_to_compute != 0 {
            return self.violation(index, format!("token queues not drained at FINISH: {q:?}"));
        }
        Ok(())
    }

    fn range(&self, index: usize, buffer: BufferId, value: u64, at: impl FnOnce() -> String) -> Result<usize, SimError> {
        let depth = self.sram.depth(buffer);
        if value >= depth as u64 {
            return Err(SimError::SramRange { index, buffer: buffer.mnemonic(), value, depth, at: at() });
        }
        Ok(value as usize)
    }

    /// 2-D strided copy from DRAM into an SRAM buffer; pad rows/columns are
    /// zero-filled and excluded from the byte count.
    pub fn exec_load(&mut self, index: usize, m: &MemInstr, dram: &DramImage) -> Result<(), SimError> {
        let bs = self.cfg.block_size;
        let kind = RegionKind::from_buffer(m.buffer);
        let sbytes = kind.structure_bytes(bs) as usize;
        let row_len = m.x_pad_left as u64 + m.x_size as u64 + m.x_pad_right as u64;
        let rows = m.y_pad_top as u64 + m.y_size as u64 + m.y_pad_bottom as u64;
        let total = rows * row_len;
        if total == 0 {
            return Ok(());
        }
        self.range(index, m.buffer, m.sram_base as u64 + total - 1, String::new)?;

        for slot in 0..total {
            let r = slot / row_len;
            let c = slot % row_len;
            let is_pad = r < m.y_pad_top as u64
                || r >= m.y_pad_top as u64 + m.y_size as u64
                || c < m.x_pad_left as u64
                || c >= m.x_pad_left as u64 + m.x_size as u64;
            if is_pad {
                self.write_structure(m.buffer, m.sram_base as usize + slot as usize, &vec![0u8; sbytes]);
            }
        }
        let mut row = vec![0u8; m.x_size as usize * sbytes];
        for y in 0..m.y_size as u64 {
            let log = m.dram_base as u64 + y * m.x_stride as u64;
            let phy = dram.logical_to_phys(log, kind).map_err(|source| SimError::Dram { index, source })?;
            dram.read_into(phy, &mut row).map_err(|source| SimError::Dram { index, source })?;
            let first = m.sram_base as u64 + (m.y_pad_top as u64 + y) * row_len + m.x_pad_left as u64;
            for (x, chunk) in row.chunks_exact(sbytes).enumerate() {
                self.write_structure(m.buffer, first as usize + x, chunk);
            }
        }
        self.stats.dram_bytes_loaded += m.payload_structures() * sbytes as u64;
        Ok(())
    }

    fn write_structure(&mut self, buffer: BufferId, slot: usize, bytes: &[u8]) {
        let bs = self.cfg.block_size;
        match buffer {
            BufferId::Inp => {
                for (d, &b) in self.sram.inp[slot * bs..(slot + 1) * bs].iter_mut().zip(bytes) {
                    *d = b as i8;
                }
            }
            BufferId::Out => {
                for (d, &b) in self.sram.out[slot * bs..(slot + 1) * bs].iter_mut().zip(bytes) {
                    *d = b as i8;
                }
            }
            BufferId::Wgt => {
                let area = bs * bs;
                for (d, &b) in self.sram.wgt[slot * area..(slot + 1) * area].iter_mut().zip(bytes) {
                    *d = b as i8;
                }
            }
            BufferId::Acc => {
                for (d, c) in self.sram.acc[slot * bs..(slot + 1) * bs].iter_mut().zip(bytes.chunks_exact(4)) {
                    *d = i32::from_le_bytes(c.try_into().unwrap());
                }
            }
            BufferId::Uop => {
                self.sram.uop[slot] = decode_uop(u32::from_le_bytes(bytes.try_into().unwrap()));
            }
        }
    }

    /// OUT vectors `[first, first + count)` become the low byte of the
    /// corresponding ACC vectors.
    pub fn truncate_acc_to_out(&mut self, first: usize, count: usize) {
        let bs = self.cfg.block_size;
        let range = first * bs..(first + count) * bs;
        for (o, &a) in self.sram.out[range.clone()].iter_mut().zip(&self.sram.acc[range]) {
            *o = a as i8;
        }
    }

    /// Truncates the stored OUT range from ACC, then copies it to DRAM.
    pub fn exec_store(&mut self, index: usize, m: &MemInstr, dram: &mut DramImage) -> Result<(), SimError> {
        if m.has_padding() {
            return Err(SimError::StorePadding { index });
        }
        let count = m.payload_structures();
        if count == 0 {
            return Ok(());
        }
        let bs = self.cfg.block_size;
        self.range(index, BufferId::Out, m.sram_base as u64 + count - 1, String::new)?;
        self.range(index, BufferId::Acc, m.sram_base as u64 + count - 1, String::new)?;
        self.truncate_acc_to_out(m.sram_base as usize, count as usize);
        for y in 0..m.y_size as usize {
            let first = m.sram_base as usize + y * m.x_size as usize;
            let bytes: Vec<u8> =
                self.sram.out[first * bs..(first + m.x_size as usize) * bs].iter().map(|&v| v as u8).collect();
            let log = m.dram_base as u64 + (y as u64) * m.x_stride as u64;
            let phy = dram.logical_to_phys(log, RegionKind::Out).map_err(|source| SimError::Dram { index, source })?;
            dram.write(phy, &bytes).map_err(|source| SimError::Dram { index, source })?;
        }
        self.stats.dram_bytes_stored += count * bs as u64;
        Ok(())
    }

    pub fn exec_gemm(&mut self, index: usize, g: &GemmInstr) -> Result<(), SimError> {
        let bs = self.cfg.block_size;
        let n = &g.nest;
        for i_out in 0..n.lp_out as u64 {
            for i_in in 0..n.lp_in as u64 {
                for i_uop in n.uop_begin as u64..n.uop_end as u64 {
                    let coords = || format!(" at i_out={i_out} i_in={i_in} i_uop={i_uop}");
                    let u = self.sram.uop[self.range(index, BufferId::Uop, i_uop, coords)?];
                    let x = i_out * g.acc_factor_out as u64 + i_in * g.acc_factor_in as u64 + u.acc_idx as u64;
                    let x = self.range(index, BufferId::Acc, x, coords)?;
                    if g.reset {
                        self.sram.acc_vector_mut(x).fill(0);
                        self.stats.reset_loop_count += 1;
                        continue;
                    }
                    let a = i_out * g.inp_factor_out as u64 + i_in * g.inp_factor_in as u64 + u.inp_idx as u64;
                    let a = self.range(index, BufferId::Inp, a, coords)?;
                    let w = i_out * g.wgt_factor_out as u64 + i_in * g.wgt_factor_in as u64 + u.wgt_idx as u64;
                    let w = self.range(index, BufferId::Wgt, w, coords)?;
                    let inp = &self.sram.inp[a * bs..(a + 1) * bs];
                    let wgt = &self.sram.wgt[w * bs * bs..(w + 1) * bs * bs];
                    let acc = &mut self.sram.acc[x * bs..(x + 1) * bs];
                    // acc[x] = A × Wᵀ + X, W stored as Bᵀ
                    for (col, out) in acc.iter_mut().enumerate() {
                        let wrow = &wgt[col * bs..(col + 1) * bs];
                        let dot = inp
                            .iter()
                            .zip(wrow)
                            .fold(0i32, |s, (&p, &q)| s.wrapping_add(p as i32 * q as i32));
                        *out = out.wrapping_add(dot);
                    }
                    self.stats.gemm_loop_count += 1;
                }
                if !g.reset && n.uop_end > n.uop_begin {
                    self.stats.gemm_inner_loop_count += 1;
                }
            }
        }
        Ok(())
    }

    pub fn exec_alu(&mut self, index: usize, a: &AluInstr) -> Result<(), SimError> {
        let n = &a.nest;
        for i_out in 0..n.lp_out as u64 {
            for i_in in 0..n.lp_in as u64 {
                for i_uop in n.uop_begin as u64..n.uop_end as u64 {
                    let coords = || format!(" at i_out={i_out} i_in={i_in} i_uop={i_uop}");
                    let u = self.sram.uop[self.range(index, BufferId::Uop, i_uop, coords)?];
                    let dst = i_out * a.dst_factor_out as u64 + i_in * a.dst_factor_in as u64 + u.acc_idx as u64;
                    let dst = self.range(index, BufferId::Acc, dst, coords)?;
                    self.stats.alu_loop_count += 1;
                    if a.reset {
                        self.sram.acc_vector_mut(dst).fill(0);
                        continue;
                    }
                    if a.use_imm {
                        self.scratch.fill(a.imm);
                    } else {
                        let src = i_out * a.src_factor_out as u64 + i_in * a.src_factor_in as u64 + u.inp_idx as u64;
                        let src = self.range(index, BufferId::Acc, src, coords)?;
                        let v = self.sram.acc_vector(src).to_vec();
                        self.scratch.copy_from_slice(&v);
                    }
                    let op = a.op;
                    let scratch = std::mem::take(&mut self.scratch);
                    for (d, &s) in self.sram.acc_vector_mut(dst).iter_mut().zip(&scratch) {
                        *d = alu_apply(op, *d, s);
                    }
                    self.scratch = scratch;
                }
            }
        }
        Ok(())
    }
}

/// Element-wise TensorAlu semantics. SHR is an arithmetic shift; a negative
/// amount shifts left.
pub fn alu_apply(op: AluOpcode, a: i32, b: i32) -> i32 {
    match op {
        AluOpcode::Min => a.min(b),
        AluOpcode::Max => a.max(b),
        AluOpcode::Add => a.wrapping_add(b),
        AluOpcode::Shr => {
            if b >= 0 {
                a >> b.min(31)
            } else {
                a.wrapping_shl(b.unsigned_abs().min(31))
            }
        }
    }
}

/// Runs a program on a fresh simulator.
pub fn run(dram: &mut DramImage, instr_region: &Region, cfg: &VtaConfig) -> Result<RunStats, SimError> {
    Simulator::new(cfg)?.run(dram, instr_region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;
    use crate::isa::{encode_program, encode_uops, FinishInstr, LoopNest};

    fn small_cfg() -> VtaConfig {
        VtaConfig { block_size: 4, ..default_config() }
    }

    fn image_with(cfg: &VtaConfig, instrs: &[Instruction]) -> (DramImage, Region) {
        let mut img = DramImage::new(cfg, 0).unwrap();
        let bytes = encode_program(instrs).unwrap();
        let r = img.allocate("instr", bytes.len() as u64, RegionKind::Instr).unwrap();
        img.write_region(&r, &bytes).unwrap();
        (img, r)
    }

    #[test]
    fn finish_only_program() {
        let cfg = small_cfg();
        let (mut img, r) = image_with(&cfg, &[Instruction::Finish(FinishInstr::default())]);
        let before = img.clone();
        let stats = run(&mut img, &r, &cfg).unwrap();
        assert_eq!(img, before);
        assert_eq!(stats.gemm_loop_count, 0);
        assert_eq!(stats.instruction_count, 1);
    }

    #[test]
    fn missing_finish() {
        let cfg = small_cfg();
        let (mut img, r) = image_with(&cfg, &[Instruction::Gemm(GemmInstr::default())]);
        assert!(matches!(run(&mut img, &r, &cfg), Err(SimError::MissingFinish(_))));
    }

    #[test]
    fn load_copies_and_pads() {
        let cfg = small_cfg();
        let mut img = DramImage::new(&cfg, 0).unwrap();
        let data = img.allocate("inp", 64, RegionKind::Inp).unwrap();
        let payload: Vec<u8> = (1..=64).collect();
        img.write_region(&data, &payload).unwrap();
        let mut sim = Simulator::new(&cfg).unwrap();
        sim.exec_load(0, &MemInstr::linear(BufferId::Inp, 0, data.log_start as u32, 16), &img).unwrap();
        for i in 0..16 {
            let expect: Vec<i8> = payload[i * 4..i * 4 + 4].iter().map(|&b| b as i8).collect();
            assert_eq!(sim.sram().inp_vector(i), &expect[..]);
        }
        assert_eq!(sim.stats().dram_bytes_loaded, 64);

        let mut m = MemInstr::linear(BufferId::Inp, 20, data.log_start as u32, 2);
        m.y_size = 2;
        m.x_stride = 4;
        m.x_pad_left = 1;
        sim.exec_load(1, &m, &img).unwrap();
        // destination rows are [pad, v0, v1] and [pad, v4, v5]
        assert_eq!(sim.sram().inp_vector(20), &[0, 0, 0, 0]);
        assert_eq!(sim.sram().inp_vector(21), &[1, 2, 3, 4]);
        assert_eq!(sim.sram().inp_vector(23), &[0, 0, 0, 0]);
        assert_eq!(sim.sram().inp_vector(24), &[17, 18, 19, 20]);
        assert_eq!(sim.stats().dram_bytes_loaded, 64 + 16);
    }

    #[test]
    fn gemm_with_identity_weight_copies_input() {
        let cfg = small_cfg();
        let mut sim = Simulator::new(&cfg).unwrap();
        for i in 0..4 {
            sim.sram_mut().wgt[i * 4 + i] = 1;
        }
        for (k, v) in sim.sram_mut().inp[..16].iter_mut().enumerate() {
            *v = k as i8 - 8;
        }
        let g = GemmInstr {
            nest: LoopNest { uop_begin: 0, uop_end: 1, lp_out: 1, lp_in: 4 },
            acc_factor_in: 1,
            inp_factor_in: 1,
            ..Default::default()
        };
        sim.exec_gemm(0, &g).unwrap();
        for i in 0..4 {
            let expect: Vec<i32> = sim.sram().inp_vector(i).iter().map(|&v| v as i32).collect();
            assert_eq!(sim.sram().acc_vector(i), &expect[..]);
        }
        assert_eq!(sim.stats().gemm_loop_count, 4);
        assert_eq!(sim.stats().gemm_inner_loop_count, 4);

        let reset = GemmInstr { reset: true, ..g };
        sim.exec_gemm(1, &reset).unwrap();
        assert!(sim.sram().acc[..16].iter().all(|&v| v == 0));
        assert_eq!(sim.stats().reset_loop_count, 4);
    }

    #[test]
    fn gemm_reports_out_of_range_coordinates() {
        let cfg = small_cfg();
        let mut sim = Simulator::new(&cfg).unwrap();
        sim.sram_mut().uop[0] = Uop::new(2047, 0, 0);
        let g = GemmInstr {
            nest: LoopNest { uop_begin: 0, uop_end: 1, lp_out: 1, lp_in: 2 },
            acc_factor_in: 1,
            ..Default::default()
        };
        match sim.exec_gemm(7, &g) {
            Err(SimError::SramRange { index: 7, buffer: "ACC", value: 2048, at, .. }) => {
                assert!(at.contains("i_in=1"), "{at}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn alu(op: AluOpcode, imm: i32, count: u32) -> AluInstr {
        AluInstr {
            deps: Default::default(),
            reset: false,
            nest: LoopNest { uop_begin: 0, uop_end: 1, lp_out: 1, lp_in: count },
            dst_factor_out: 0,
            dst_factor_in: 1,
            src_factor_out: 0,
            src_factor_in: 1,
            op,
            use_imm: true,
            imm,
        }
    }

    #[test]
    fn alu_immediates() {
        let cfg = VtaConfig { block_size: 2, ..default_config() };
        let mut sim = Simulator::new(&cfg).unwrap();
        sim.sram_mut().acc[..4].copy_from_slice(&[-3, 5, 0, -2]);
        sim.exec_alu(0, &alu(AluOpcode::Max, 0, 2)).unwrap();
        assert_eq!(&sim.sram().acc[..4], &[0, 5, 0, 0]);
        sim.sram_mut().acc[..4].copy_from_slice(&[-2, 7, -8, 9]);
        sim.exec_alu(0, &alu(AluOpcode::Shr, 1, 2)).unwrap();
        assert_eq!(&sim.sram().acc[..4], &[-1, 3, -4, 4]);
        sim.exec_alu(0, &alu(AluOpcode::Add, 0, 2)).unwrap();
        assert_eq!(&sim.sram().acc[..4], &[-1, 3, -4, 4]);
        sim.exec_alu(0, &alu(AluOpcode::Min, -3, 2)).unwrap();
        assert_eq!(&sim.sram().acc[..4], &[-3, -3, -4, -3]);
        assert_eq!(sim.stats().alu_loop_count, 8);
    }

    #[test]
    fn alu_vector_add_matches_elementwise_oracle() {
        let cfg = VtaConfig { block_size: 4, ..default_config() };
        let mut sim = Simulator::new(&cfg).unwrap();
        let a: Vec<i32> = (0..16).map(|v| v * 3 - 20).collect();
        let b: Vec<i32> = (0..16).map(|v| i32::MAX - v).collect();
        sim.sram_mut().acc[..16].copy_from_slice(&a);
        sim.sram_mut().acc[16..32].copy_from_slice(&b);
        sim.sram_mut().uop[0] = Uop::new(0, 4, 0);
        let mut instr = alu(AluOpcode::Add, 0, 4);
        instr.use_imm = false;
        sim.exec_alu(0, &instr).unwrap();
        let expect: Vec<i32> = a.iter().zip(&b).map(|(x, y)| x.wrapping_add(*y)).collect();
        assert_eq!(&sim.sram().acc[..16], &expect[..]);
    }

    #[test]
    fn truncation_is_low_byte() {
        let cfg = VtaConfig { block_size: 4, ..default_config() };
        let mut sim = Simulator::new(&cfg).unwrap();
        sim.sram_mut().acc[..4].copy_from_slice(&[127, 128, -1, 0x1234_5680]);
        sim.truncate_acc_to_out(0, 1);
        assert_eq!(sim.sram().out_vector(0), &[127, -128, -1, -128]);
    }

    #[test]
    fn store_writes_truncated_acc() {
        let cfg = VtaConfig { block_size: 4, ..default_config() };
        let mut img = DramImage::new(&cfg, 0).unwrap();
        let out = img.allocate("out", 32, RegionKind::Out).unwrap();
        let mut sim = Simulator::new(&cfg).unwrap();
        for (i, v) in sim.sram_mut().acc[..8].iter_mut().enumerate() {
            *v = 250 + i as i32;
        }
        sim.exec_store(0, &MemInstr::linear(BufferId::Out, 0, out.log_start as u32, 2), &mut img).unwrap();
        let bytes = img.read_region(&out).unwrap();
        let expect: Vec<u8> = (0..8).map(|i| (250 + i) as u8).collect();
        assert_eq!(&bytes[..8], &expect[..]);
        assert_eq!(sim.stats().dram_bytes_stored, 8);
    }

    #[test]
    fn dependency_ledger() {
        let cfg = small_cfg();
        let mut bad = FinishInstr::default();
        bad.deps.pop_prev = true;
        let (mut img, r) = image_with(&cfg, &[Instruction::Finish(bad)]);
        let mut sim = Simulator::new(&cfg).unwrap().strict_deps(true);
        assert!(matches!(sim.run(&mut img, &r), Err(SimError::Dependency { index: 0, .. })));
        let mut lax = Simulator::new(&cfg).unwrap();
        assert_eq!(lax.run(&mut img, &r).unwrap().dependency_violations, 1);
    }

    #[test]
    fn uop_load_decodes_words() {
        let cfg = small_cfg();
        let mut img = DramImage::new(&cfg, 0).unwrap();
        let uops = [Uop::new(5, 3, 1), Uop::new(0, 1, 2)];
        let bytes = encode_uops(&uops).unwrap();
        let r = img.allocate("uop", bytes.len() as u64, RegionKind::Uop).unwrap();
        img.write_region(&r, &bytes).unwrap();
        let mut sim = Simulator::new(&cfg).unwrap();
        sim.exec_load(0, &MemInstr::linear(BufferId::Uop, 1, r.log_start as u32, 2), &img).unwrap();
        assert_eq!(&sim.sram().uop[1..3], &uops);
        assert_eq!(sim.stats().dram_bytes_loaded, 8);
    }
}
