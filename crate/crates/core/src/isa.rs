//! Bit-exact VTA instruction and micro-op codec.
//!
//! Instructions are 128-bit words stored little-endian; UOPs are 32-bit
//! words. Fields are packed LSB-first in declaration order and, like the C
//! bit-fields of the reference implementation, a field never straddles the
//! 64-bit boundary: it is moved to bit 64 instead.

use thiserror::Error;

pub const INSTRUCTION_BYTES: usize = 16;
pub const UOP_BYTES: usize = 4;

pub const OPCODE_LOAD: u8 = 0;
pub const OPCODE_STORE: u8 = 1;
pub const OPCODE_GEMM: u8 = 2;
pub const OPCODE_FINISH: u8 = 3;
pub const OPCODE_ALU: u8 = 4;

/// Field widths in bits.
pub mod width {
    pub const OPCODE: u32 = 3;
    pub const BUFFER_ID: u32 = 3;
    pub const SRAM_BASE: u32 = 16;
    pub const DRAM_BASE: u32 = 32;
    pub const SIZE: u32 = 16;
    pub const PAD: u32 = 4;
    pub const UOP_BEGIN: u32 = 13;
    pub const UOP_END: u32 = 14;
    pub const LOOP: u32 = 14;
    pub const ACC_FACTOR: u32 = 11;
    pub const INP_FACTOR: u32 = 11;
    pub const WGT_FACTOR: u32 = 10;
    pub const ALU_OPCODE: u32 = 2;
    pub const IMM: u32 = 16;
    pub const UOP_ACC: u32 = 11;
    pub const UOP_INP: u32 = 11;
    pub const UOP_WGT: u32 = 10;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("field {field} value {value} does not fit in {width} bits")]
    FieldOverflow { field: &'static str, value: i64, width: u32 },
    #[error("unknown opcode {0}")]
    UnknownOpcode(u8),
    #[error("unknown buffer id {0}")]
    UnknownBuffer(u8),
    #[error("STORE must target the OUT buffer, got {0}")]
    StoreTarget(BufferId),
    #[error("instruction word needs {INSTRUCTION_BYTES} bytes, got {0}")]
    ShortWord(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct DepFlags {
    pub pop_prev: bool,
    pub pop_next: bool,
    pub push_prev: bool,
    pub push_next: bool,
}

impl DepFlags {
    pub fn is_empty(&self) -> bool {
        !(self.pop_prev || self.pop_next || self.push_prev || self.push_next)
    }
}

/// SRAM buffer selector of LOAD/STORE instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BufferId {
    Uop = 0,
    Wgt = 1,
    Inp = 2,
    Acc = 3,
    Out = 4,
}

impl BufferId {
    pub fn from_bits(v: u8) -> Result<Self, IsaError> {
        Ok(match v {
            0 => BufferId::Uop,
            1 => BufferId::Wgt,
            2 => BufferId::Inp,
            3 => BufferId::Acc,
            4 => BufferId::Out,
            other => return Err(IsaError::UnknownBuffer(other)),
        })
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            BufferId::Uop => "UOP",
            BufferId::Wgt => "WGT",
            BufferId::Inp => "INP",
            BufferId::Acc => "ACC",
            BufferId::Out => "OUT",
        }
    }
}

impl std::fmt::Display for BufferId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Body shared by LOAD and STORE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemInstr {
    pub deps: DepFlags,
    pub buffer: BufferId,
    /// Logical SRAM index (structures).
    pub sram_base: u32,
    /// Logical DRAM address (structures).
    pub dram_base: u32,
    pub y_size: u32,
    pub x_size: u32,
    /// DRAM row stride in structures.
    pub x_stride: u32,
    pub y_pad_top: u8,
    pub y_pad_bottom: u8,
    pub x_pad_left: u8,
    pub x_pad_right: u8,
}

impl MemInstr {
    /// Contiguous 1-D transfer of `count` structures.
    pub fn linear(buffer: BufferId, sram_base: u32, dram_base: u32, count: u32) -> Self {
        MemInstr {
            deps: DepFlags::default(),
            buffer,
            sram_base,
            dram_base,
            y_size: 1,
            x_size: count,
            x_stride: count,
            y_pad_top: 0,
            y_pad_bottom: 0,
            x_pad_left: 0,
            x_pad_right: 0,
        }
    }

    /// Structures moved between DRAM and SRAM, padding excluded.
    pub fn payload_structures(&self) -> u64 {
        self.y_size as u64 * self.x_size as u64
    }

    pub fn has_padding(&self) -> bool {
        self.y_pad_top | self.y_pad_bottom | self.x_pad_left | self.x_pad_right != 0
    }
}

/// Loop nest shared by GEMM and ALU instructions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LoopNest {
    pub uop_begin: u32,
    pub uop_end: u32,
    pub lp_out: u32,
    pub lp_in: u32,
}

impl LoopNest {
    /// Innermost-body executions of the nest.
    pub fn body_count(&self) -> u64 {
        self.lp_out as u64 * self.lp_in as u64 * self.uop_end.saturating_sub(self.uop_begin) as u64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct GemmInstr {
    pub deps: DepFlags,
    pub reset: bool,
    pub nest: LoopNest,
    pub acc_factor_out: u32,
    pub acc_factor_in: u32,
    pub inp_factor_out: u32,
    pub inp_factor_in: u32,
    pub wgt_factor_out: u32,
    pub wgt_factor_in: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOpcode {
    Min = 0,
    Max = 1,
    Add = 2,
    Shr = 3,
}

impl AluOpcode {
    pub fn from_bits(v: u8) -> Self {
        match v & 0b11 {
            0 => AluOpcode::Min,
            1 => AluOpcode::Max,
            2 => AluOpcode::Add,
            _ => AluOpcode::Shr,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOpcode::Min => "MIN",
            AluOpcode::Max => "MAX",
            AluOpcode::Add => "ADD",
            AluOpcode::Shr => "SHR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AluInstr {
    pub deps: DepFlags,
    pub reset: bool,
    pub nest: LoopNest,
    pub dst_factor_out: u32,
    pub dst_factor_in: u32,
    pub src_factor_out: u32,
    pub src_factor_in: u32,
    pub op: AluOpcode,
    pub use_imm: bool,
    /// Signed 16-bit immediate.
    pub imm: i32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct FinishInstr {
    pub deps: DepFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Load(MemInstr),
    Store(MemInstr),
    Gemm(GemmInstr),
    Alu(AluInstr),
    Finish(FinishInstr),
}

impl Instruction {
    pub fn opcode(&self) -> u8 {
        match self {
            Instruction::Load(_) => OPCODE_LOAD,
            Instruction::Store(_) => OPCODE_STORE,
            Instruction::Gemm(_) => OPCODE_GEMM,
            Instruction::Finish(_) => OPCODE_FINISH,
            Instruction::Alu(_) => OPCODE_ALU,
        }
    }

    pub fn deps(&self) -> DepFlags {
        match self {
            Instruction::Load(m) | Instruction::Store(m) => m.deps,
            Instruction::Gemm(g) => g.deps,
            Instruction::Alu(a) => a.deps,
            Instruction::Finish(f) => f.deps,
        }
    }

    pub fn deps_mut(&mut self) -> &mut DepFlags {
        match self {
            Instruction::Load(m) | Instruction::Store(m) => &mut m.deps,
            Instruction::Gemm(g) => &mut g.deps,
            Instruction::Alu(a) => &mut a.deps,
            Instruction::Finish(f) => &mut f.deps,
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instruction::Load(_) => "LOAD",
            Instruction::Store(_) => "STORE",
            Instruction::Gemm(_) => "GEMM",
            Instruction::Alu(_) => "ALU",
            Instruction::Finish(_) => "FINISH",
        }
    }
}

/// Hardware module that executes an instruction. The modules form a chain
/// Load - Compute - Store linked by dependency token queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Module {
    Load,
    Compute,
    Store,
}

impl Instruction {
    /// INP/WGT loads run on the Load module, UOP/ACC loads on Compute.
    pub fn module(&self) -> Module {
        match self {
            Instruction::Load(m) => match m.buffer {
                BufferId::Inp | BufferId::Wgt => Module::Load,
                _ => Module::Compute,
            },
            Instruction::Store(_) => Module::Store,
            _ => Module::Compute,
        }
    }
}

/// Micro-op. For ALU instructions `acc_idx` is the destination and
/// `inp_idx` the source, both indexing the ACC buffer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Uop {
    pub acc_idx: u32,
    pub inp_idx: u32,
    pub wgt_idx: u32,
}

impl Uop {
    pub fn new(acc_idx: u32, inp_idx: u32, wgt_idx: u32) -> Self {
        Uop { acc_idx, inp_idx, wgt_idx }
    }
}

struct BitWriter {
    word: u128,
    pos: u32,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter { word: 0, pos: 0 }
    }

    fn put(&mut self, field: &'static str, value: u64, width: u32) -> Result<(), IsaError> {
        if width < 64 && value >> width != 0 {
            return Err(IsaError::FieldOverflow { field, value: value as i64, width });
        }
        if self.pos < 64 && self.pos + width > 64 {
            self.pos = 64;
        }
        self.word |= (value as u128) << self.pos;
        self.pos += width;
        Ok(())
    }

    fn put_bool(&mut self, v: bool) {
        // a single bit never straddles
        self.word |= (v as u128) << self.pos;
        self.pos += 1;
    }

    fn put_signed(&mut self, field: &'static str, value: i32, width: u32) -> Result<(), IsaError> {
        let min = -(1i64 << (width - 1));
        let max = (1i64 << (width - 1)) - 1;
        if (value as i64) < min || (value as i64) > max {
            return Err(IsaError::FieldOverflow { field, value: value as i64, width });
        }
        self.put(field, (value as u64) & ((1u64 << width) - 1), width)
    }
}

struct BitReader {
    word: u128,
    pos: u32,
}

impl BitReader {
    fn take(&mut self, width: u32) -> u64 {
        if self.pos < 64 && self.pos + width > 64 {
            self.pos = 64;
        }
        let v = (self.word >> self.pos) as u64 & ((1u64 << width) - 1);
        self.pos += width;
        v
    }

    fn take_bool(&mut self) -> bool {
        self.take(1) != 0
    }

    fn take_signed(&mut self, width: u32) -> i32 {
        let raw = self.take(width) as i64;
        let shift = 64 - width;
        ((raw << shift) >> shift) as i32
    }
}

fn put_header(w: &mut BitWriter, opcode: u8, deps: DepFlags) -> Result<(), IsaError> {
    w.put("opcode", opcode as u64, width::OPCODE)?;
    w.put_bool(deps.pop_prev);
    w.put_bool(deps.pop_next);
    w.put_bool(deps.push_prev);
    w.put_bool(deps.push_next);
    Ok(())
}

fn put_nest(w: &mut BitWriter, reset: bool, nest: &LoopNest) -> Result<(), IsaError> {
    w.put_bool(reset);
    w.put("uop_begin", nest.uop_begin as u64, width::UOP_BEGIN)?;
    w.put("uop_end", nest.uop_end as u64, width::UOP_END)?;
    w.put("lp_out", nest.lp_out as u64, width::LOOP)?;
    w.put("lp_in", nest.lp_in as u64, width::LOOP)
}

fn take_nest(r: &mut BitReader) -> (bool, LoopNest) {
    let reset = r.take_bool();
    let nest = LoopNest {
        uop_begin: r.take(width::UOP_BEGIN) as u32,
        uop_end: r.take(width::UOP_END) as u32,
        lp_out: r.take(width::LOOP) as u32,
        lp_in: r.take(width::LOOP) as u32,
    };
    (reset, nest)
}

pub fn encode_instruction(instr: &Instruction) -> Result<[u8; INSTRUCTION_BYTES], IsaError> {
    let mut w = BitWriter::new();
    put_header(&mut w, instr.opcode(), instr.deps())?;
    match instr {
        Instruction::Load(m) | Instruction::Store(m) => {
            if matches!(instr, Instruction::Store(_)) && m.buffer != BufferId::Out {
                return Err(IsaError::StoreTarget(m.buffer));
            }
            w.put("buffer_id", m.buffer as u64, width::BUFFER_ID)?;
            w.put("sram_base", m.sram_base as u64, width::SRAM_BASE)?;
            w.put("dram_base", m.dram_base as u64, width::DRAM_BASE)?;
            w.put("y_size", m.y_size as u64, width::SIZE)?;
            w.put("x_size", m.x_size as u64, width::SIZE)?;
            w.put("x_stride", m.x_stride as u64, width::SIZE)?;
            w.put("y_pad_top", m.y_pad_top as u64, width::PAD)?;
            w.put("y_pad_bottom", m.y_pad_bottom as u64, width::PAD)?;
            w.put("x_pad_left", m.x_pad_left as u64, width::PAD)?;
            w.put("x_pad_right", m.x_pad_right as u64, width::PAD)?;
        }
        Instruction::Gemm(g) => {
            put_nest(&mut w, g.reset, &g.nest)?;
            w.put("acc_factor_out", g.acc_factor_out as u64, width::ACC_FACTOR)?;
            w.put("acc_factor_in", g.acc_factor_in as u64, width::ACC_FACTOR)?;
            w.put("inp_factor_out", g.inp_factor_out as u64, width::INP_FACTOR)?;
            w.put("inp_factor_in", g.inp_factor_in as u64, width::INP_FACTOR)?;
            w.put("wgt_factor_out", g.wgt_factor_out as u64, width::WGT_FACTOR)?;
            w.put("wgt_factor_in", g.wgt_factor_in as u64, width::WGT_FACTOR)?;
        }
        Instruction::Alu(a) => {
            put_nest(&mut w, a.reset, &a.nest)?;
            w.put("dst_factor_out", a.dst_factor_out as u64, width::ACC_FACTOR)?;
            w.put("dst_factor_in", a.dst_factor_in as u64, width::ACC_FACTOR)?;
            w.put("src_factor_out", a.src_factor_out as u64, width::INP_FACTOR)?;
            w.put("src_factor_in", a.src_factor_in as u64, width::INP_FACTOR)?;
            w.put("alu_opcode", a.op as u64, width::ALU_OPCODE)?;
            w.put_bool(a.use_imm);
            w.put_signed("imm", a.imm, width::IMM)?;
        }
        Instruction::Finish(_) => {}
    }
    Ok(w.word.to_le_bytes())
}

pub fn decode_instruction(bytes: &[u8]) -> Result<Instruction, IsaError> {
    let word: [u8; INSTRUCTION_BYTES] =
        bytes.try_into().map_err(|_| IsaError::ShortWord(bytes.len()))?;
    let mut r = BitReader { word: u128::from_le_bytes(word), pos: 0 };
    let opcode = r.take(width::OPCODE) as u8;
    let deps = DepFlags {
        pop_prev: r.take_bool(),
        pop_next: r.take_bool(),
        push_prev: r.take_bool(),
        push_next: r.take_bool(),
    };
    Ok(match opcode {
        OPCODE_LOAD | OPCODE_STORE => {
            let buffer = BufferId::from_bits(r.take(width::BUFFER_ID) as u8)?;
            let m = MemInstr {
                deps,
                buffer,
                sram_base: r.take(width::SRAM_BASE) as u32,
                dram_base: r.take(width::DRAM_BASE) as u32,
                y_size: r.take(width::SIZE) as u32,
                x_size: r.take(width::SIZE) as u32,
                x_stride: r.take(width::SIZE) as u32,
                y_pad_top: r.take(width::PAD) as u8,
                y_pad_bottom: r.take(width::PAD) as u8,
                x_pad_left: r.take(width::PAD) as u8,
                x_pad_right: r.take(width::PAD) as u8,
            };
            if opcode == OPCODE_LOAD {
                Instruction::Load(m)
            } else {
                if buffer != BufferId::Out {
                    return Err(IsaError::StoreTarget(buffer));
                }
                Instruction::Store(m)
            }
        }
        OPCODE_GEMM => {
            let (reset, nest) = take_nest(&mut r);
            Instruction::Gemm(GemmInstr {
                deps,
                reset,
                nest,
                acc_factor_out: r.take(width::ACC_FACTOR) as u32,
                acc_factor_in: r.take(width::ACC_FACTOR) as u32,
                inp_factor_out: r.take(width::INP_FACTOR) as u32,
                inp_factor_in: r.take(width::INP_FACTOR) as u32,
                wgt_factor_out: r.take(width::WGT_FACTOR) as u32,
                wgt_factor_in: r.take(width::WGT_FACTOR) as u32,
            })
        }
        OPCODE_ALU => {
            let (reset, nest) = take_nest(&mut r);
            Instruction::Alu(AluInstr {
                deps,
                reset,
                nest,
                dst_factor_out: r.take(width::ACC_FACTOR) as u32,
                dst_factor_in: r.take(width::ACC_FACTOR) as u32,
                src_factor_out: r.take(width::INP_FACTOR) as u32,
                src_factor_in: r.take(width::INP_FACTOR) as u32,
                op: AluOpcode::from_bits(r.take(width::ALU_OPCODE) as u8),
                use_imm: r.take_bool(),
                imm: r.take_signed(width::IMM),
            })
        }
        OPCODE_FINISH => Instruction::Finish(FinishInstr { deps }),
        other => return Err(IsaError::UnknownOpcode(other)),
    })
}

pub fn encode_uop(u: &Uop) -> Result<u32, IsaError> {
    let fields = [
        ("acc_idx", u.acc_idx, width::UOP_ACC),
        ("inp_idx", u.inp_idx, width::UOP_INP),
        ("wgt_idx", u.wgt_idx, width::UOP_WGT),
    ];
    let mut word = 0u32;
    let mut pos = 0;
    for (field, value, bits) in fields {
        if value >> bits != 0 {
            return Err(IsaError::FieldOverflow { field, value: value as i64, width: bits });
        }
        word |= value << pos;
        pos += bits;
    }
    Ok(word)
}

pub fn decode_uop(word: u32) -> Uop {
    let mask = |bits: u32| (1u32 << bits) - 1;
    Uop {
        acc_idx: word & mask(width::UOP_ACC),
        inp_idx: (word >> width::UOP_ACC) & mask(width::UOP_INP),
        wgt_idx: word >> (width::UOP_ACC + width::UOP_INP),
    }
}

/// Concatenates encoded instructions into an `instructions.bin` stream.
pub fn encode_program(instrs: &[Instruction]) -> Result<Vec<u8>, IsaError> {
    let mut out = Vec::with_capacity(instrs.len() * INSTRUCTION_BYTES);
    for i in instrs {
        out.extend_from_slice(&encode_instruction(i)?);
    }
    Ok(out)
}

/// Concatenates encoded UOPs into a `uop.bin` stream.
pub fn encode_uops(uops: &[Uop]) -> Result<Vec<u8>, IsaError> {
    let mut out = Vec::with_capacity(uops.len() * UOP_BYTES);
    for u in uops {
        out.extend_from_slice(&encode_uop(u)?.to_le_bytes());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word_of(lo: u64, hi: u64) -> [u8; 16] {
        ((lo as u128) | ((hi as u128) << 64)).to_le_bytes()
    }

    #[test]
    fn finish_encodes_opcode_only() {
        let bytes = encode_instruction(&Instruction::Finish(FinishInstr::default())).unwrap();
        let mut expected = [0u8; 16];
        expected[0] = 0x03;
        assert_eq!(bytes, expected);
        assert_eq!(decode_instruction(&expected).unwrap(), Instruction::Finish(FinishInstr::default()));
    }

    #[test]
    fn empty_gemm_encodes_opcode_only() {
        let bytes = encode_instruction(&Instruction::Gemm(GemmInstr::default())).unwrap();
        let mut expected = [0u8; 16];
        expected[0] = 0x02;
        assert_eq!(bytes, expected);
    }

    #[test]
    fn gemm_matches_shift_or_oracle() {
        let g = GemmInstr {
            nest: LoopNest { uop_begin: 1, uop_end: 2, lp_out: 1, lp_in: 16 },
            ..Default::default()
        };
        // opcode@0, deps@3..7, reset@7, uop_begin@8, uop_end@21, lp_out@35, lp_in@49
        let lo: u64 = 2 | (1 << 8) | (2 << 21) | (1 << 35) | (16 << 49);
        assert_eq!(encode_instruction(&Instruction::Gemm(g)).unwrap(), word_of(lo, 0));
    }

    #[test]
    fn gemm_factors_start_at_bit_64() {
        let g = GemmInstr {
            acc_factor_out: 3,
            acc_factor_in: 1,
            inp_factor_out: 16,
            inp_factor_in: 1,
            wgt_factor_out: 5,
            wgt_factor_in: 7,
            ..Default::default()
        };
        let hi: u64 = 3 | (1 << 11) | (16 << 22) | (1 << 33) | (5 << 44) | (7 << 54);
        assert_eq!(encode_instruction(&Instruction::Gemm(g)).unwrap(), word_of(2, hi));
    }

    #[test]
    fn mem_and_alu_layout() {
        let mut m = MemInstr::linear(BufferId::Inp, 5, 0x100, 16);
        m.deps.push_next = true;
        m.x_pad_right = 9;
        let lo: u64 = (1 << 6) | (2 << 7) | (5 << 10) | (0x100 << 26);
        let hi: u64 = 1 | (16 << 16) | (16 << 32) | (9 << 60);
        assert_eq!(encode_instruction(&Instruction::Load(m)).unwrap(), word_of(lo, hi));

        let a = AluInstr {
            deps: DepFlags::default(),
            reset: false,
            nest: LoopNest { uop_begin: 2, uop_end: 3, lp_out: 1, lp_in: 16 },
            dst_factor_out: 0,
            dst_factor_in: 1,
            src_factor_out: 0,
            src_factor_in: 1,
            op: AluOpcode::Shr,
            use_imm: true,
            imm: -2,
        };
        let lo: u64 = 4 | (2 << 8) | (3 << 21) | (1 << 35) | (16 << 49);
        let hi: u64 = (1 << 11) | (1 << 33) | (3 << 44) | (1 << 46) | (0xFFFE << 47);
        let enc = encode_instruction(&Instruction::Alu(a)).unwrap();
        assert_eq!(enc, word_of(lo, hi));
        assert_eq!(decode_instruction(&enc).unwrap(), Instruction::Alu(a));
    }

    #[test]
    fn unknown_opcode_is_reported() {
        let mut w = [0u8; 16];
        w[0] = 7;
        assert_eq!(decode_instruction(&w), Err(IsaError::UnknownOpcode(7)));
        w[0] = 5;
        assert_eq!(decode_instruction(&w), Err(IsaError::UnknownOpcode(5)));
    }

    #[test]
    fn overflow_names_field() {
        let g = GemmInstr {
            nest: LoopNest { uop_begin: 1 << 13, ..Default::default() },
            ..Default::default()
        };
        match encode_instruction(&Instruction::Gemm(g)) {
            Err(IsaError::FieldOverflow { field, .. }) => assert_eq!(field, "uop_begin"),
            other => panic!("unexpected {other:?}"),
        }
        let a = AluInstr {
            deps: DepFlags::default(),
            reset: false,
            nest: LoopNest::default(),
            dst_factor_out: 0,
            dst_factor_in: 0,
            src_factor_out: 0,
            src_factor_in: 0,
            op: AluOpcode::Add,
            use_imm: true,
            imm: 40000,
        };
        assert!(matches!(
            encode_instruction(&Instruction::Alu(a)),
            Err(IsaError::FieldOverflow { field: "imm", .. })
        ));
    }

    #[test]
    fn store_must_target_out() {
        let m = MemInstr::linear(BufferId::Acc, 0, 0, 1);
        assert_eq!(
            encode_instruction(&Instruction::Store(m)),
            Err(IsaError::StoreTarget(BufferId::Acc))
        );
    }

    #[test]
    fn uop_packing() {
        assert_eq!(encode_uop(&Uop::new(0, 0, 0)).unwrap(), 0);
        assert_eq!(encode_uop(&Uop::new(5, 3, 1)).unwrap(), 5 | (3 << 11) | (1 << 22));
        assert_eq!(encode_uop(&Uop::new(5, 3, 1)).unwrap(), 0x0040_1805);
        assert_eq!(decode_uop(0x0040_1805), Uop::new(5, 3, 1));
        assert!(matches!(
            encode_uop(&Uop::new(2048, 0, 0)),
            Err(IsaError::FieldOverflow { field: "acc_idx", .. })
        ));
        assert!(matches!(
            encode_uop(&Uop::new(0, 0, 1024)),
            Err(IsaError::FieldOverflow { field: "wgt_idx", .. })
        ));
    }
}
