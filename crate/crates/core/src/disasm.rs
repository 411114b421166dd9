//! Text listings of `instructions.bin` / `uop.bin` streams.

use std::fmt::Write as _;

use thiserror::Error;

use crate::isa::{
    decode_instruction, decode_uop, BufferId, DepFlags, Instruction, IsaError, Uop,
    INSTRUCTION_BYTES, UOP_BYTES,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DisasmError {
    #[error("instruction stream: {source} at offset {offset}")]
    Instruction { offset: usize, source: IsaError },
    #[error("instruction stream truncated at offset {offset} ({len} bytes total)")]
    TruncatedInstructions { offset: usize, len: usize },
    #[error("uop stream truncated at offset {offset} ({len} bytes total)")]
    TruncatedUops { offset: usize, len: usize },
}

fn deps_str(d: DepFlags) -> String {
    [d.pop_prev, d.pop_next, d.push_prev, d.push_next]
        .iter()
        .map(|&b| if b { '1' } else { '0' })
        .collect()
}

/// One-line rendering of an instruction.
pub fn format_instruction(instr: &Instruction) -> String {
    match instr {
        Instruction::Load(m) | Instruction::Store(m) => format!(
            "{} buf={} sram={} dram={:#06x} y={} x={} stride={} pad={},{},{},{} deps={}",
            instr.mnemonic(),
            m.buffer,
            m.sram_base,
            m.dram_base,
            m.y_size,
            m.x_size,
            m.x_stride,
            m.y_pad_top,
            m.y_pad_bottom,
            m.x_pad_left,
            m.x_pad_right,
            deps_str(m.deps)
        ),
        Instruction::Gemm(g) => format!(
            "GEMM lp_out={} lp_in={} uop=[{},{}) acc={},{} inp={},{} wgt={},{} reset={} deps={}",
            g.nest.lp_out,
            g.nest.lp_in,
            g.nest.uop_begin,
            g.nest.uop_end,
            g.acc_factor_out,
            g.acc_factor_in,
            g.inp_factor_out,
            g.inp_factor_in,
            g.wgt_factor_out,
            g.wgt_factor_in,
            g.reset as u8,
            deps_str(g.deps)
        ),
        Instruction::Alu(a) => {
            let operand = if a.use_imm { format!("imm={}", a.imm) } else { "src=vec".to_string() };
            format!(
                "ALU {} {} lp_out={} lp_in={} uop=[{},{}) dst={},{} src={},{} reset={} deps={}",
                a.op.mnemonic(),
                operand,
                a.nest.lp_out,
                a.nest.lp_in,
                a.nest.uop_begin,
                a.nest.uop_end,
                a.dst_factor_out,
                a.dst_factor_in,
                a.src_factor_out,
                a.src_factor_in,
                a.reset as u8,
                deps_str(a.deps)
            )
        }
        Instruction::Finish(f) => format!("FINISH deps={}", deps_str(f.deps)),
    }
}

fn format_uop(u: &Uop) -> String {
    format!("acc={} inp={} wgt={}", u.acc_idx, u.inp_idx, u.wgt_idx)
}

pub fn decode_stream(bytes: &[u8]) -> Result<Vec<Instruction>, DisasmError> {
    let whole = bytes.len() / INSTRUCTION_BYTES * INSTRUCTION_BYTES;
    if whole != bytes.len() {
        return Err(DisasmError::TruncatedInstructions { offset: whole, len: bytes.len() });
    }
    bytes
        .chunks_exact(INSTRUCTION_BYTES)
        .enumerate()
        .map(|(i, w)| {
            decode_instruction(w)
                .map_err(|source| DisasmError::Instruction { offset: i * INSTRUCTION_BYTES, source })
        })
        .collect()
}

pub fn decode_uop_stream(bytes: &[u8]) -> Result<Vec<Uop>, DisasmError> {
    let whole = bytes.len() / UOP_BYTES * UOP_BYTES;
    if whole != bytes.len() {
        return Err(DisasmError::TruncatedUops { offset: whole, len: bytes.len() });
    }
    Ok(bytes
        .chunks_exact(UOP_BYTES)
        .map(|w| decode_uop(u32::from_le_bytes(w.try_into().unwrap())))
        .collect())
}

/// Lists the instruction stream and the UOP stream.
///
/// `uop_log_base` is the logical DRAM address of the first word of
/// `uop_bytes`. When given (or inferable from the first UOP load), each GEMM
/// and ALU line is followed by the UOPs its range resolves to, tracked
/// through the UOP loads that precede it.
pub fn disassemble(
    instr_bytes: &[u8],
    uop_bytes: &[u8],
    uop_log_base: Option<u32>,
) -> Result<String, DisasmError> {
    let instrs = decode_stream(instr_bytes)?;
    let uops = decode_uop_stream(uop_bytes)?;
    let base = uop_log_base.or_else(|| {
        instrs
            .iter()
            .filter_map(|i| match i {
                Instruction::Load(m) if m.buffer == BufferId::Uop => Some(m.dram_base),
                _ => None,
            })
            .min()
    });

    // SRAM slot -> index into `uops`
    let mut slots: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    let mut out = String::new();
    let _ = writeln!(out, "== instructions ({}) ==", instrs.len());
    for (n, instr) in instrs.iter().enumerate() {
        let _ = writeln!(out, "{n:04}  {}", format_instruction(instr));
        match instr {
            Instruction::Load(m) if m.buffer == BufferId::Uop => {
                let Some(base) = base else { continue };
                let row_len = m.x_pad_left as u32 + m.x_size + m.x_pad_right as u32;
                for y in 0..m.y_size {
                    for x in 0..m.x_size {
                        let slot = m.sram_base
                            + (m.y_pad_top as u32 + y) * row_len
                            + m.x_pad_left as u32
                            + x;
                        let word = (m.dram_base + y * m.x_stride + x).checked_sub(base);
                        match word.map(|w| w as usize).filter(|&w| w < uops.len()) {
                            Some(w) => slots.insert(slot, w),
                            None => slots.remove(&slot),
                        };
                    }
                }
            }
            Instruction::Gemm(g) => list_range(&mut out, &slots, &uops, g.nest.uop_begin, g.nest.uop_end),
            Instruction::Alu(a) => list_range(&mut out, &slots, &uops, a.nest.uop_begin, a.nest.uop_end),
            _ => {}
        }
    }
    let _ = writeln!(out, "== uops ({}) ==", uops.len());
    for (n, u) in uops.iter().enumerate() {
        let _ = writeln!(out, "{n:04}  {}", format_uop(u));
    }
    Ok(out)
}

fn list_range(
    out: &mut String,
    slots: &std::collections::HashMap<u32, usize>,
    uops: &[Uop],
    begin: u32,
    end: u32,
) {
    for slot in begin..end {
        match slots.get(&slot) {
            Some(&w) => {
                let _ = writeln!(out, "        uop[{slot}] {}", format_uop(&uops[w]));
            }
            None => {
                let _ = writeln!(out, "        uop[{slot}] ?");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{encode_instruction, MemInstr};

    #[test]
    fn zero_load_lists_uop_buffer() {
        let text = disassemble(&[0u8; 16], &[], None).unwrap();
        assert!(text.contains("LOAD buf=UOP sram=0 dram=0"), "{text}");
        assert!(text.contains("== uops (0) =="));
    }

    #[test]
    fn truncated_stream_errors_at_zero() {
        let err = disassemble(&[0u8; 15], &[], None).unwrap_err();
        assert_eq!(err, DisasmError::TruncatedInstructions { offset: 0, len: 15 });
    }

    #[test]
    fn decode_error_carries_offset() {
        let mut bytes = vec![0u8; 32];
        bytes[16] = 6;
        let err = disassemble(&bytes, &[], None).unwrap_err();
        assert_eq!(
            err,
            DisasmError::Instruction { offset: 16, source: IsaError::UnknownOpcode(6) }
        );
    }

    #[test]
    fn resolves_loaded_uops() {
        let load = Instruction::Load(MemInstr::linear(BufferId::Uop, 1, 0x1001, 1));
        let gemm = Instruction::Gemm(crate::isa::GemmInstr {
            nest: crate::isa::LoopNest { uop_begin: 1, uop_end: 2, lp_out: 1, lp_in: 16 },
            ..Default::default()
        });
        let mut bytes = encode_instruction(&load).unwrap().to_vec();
        bytes.extend(encode_instruction(&gemm).unwrap());
        let uops = [0u32, 5 | (3 << 11)].iter().flat_map(|w| w.to_le_bytes()).collect::<Vec<_>>();
        let text = disassemble(&bytes, &uops, Some(0x1000)).unwrap();
        assert!(text.contains("GEMM lp_out=1 lp_in=16 uop=[1,2)"));
        assert!(text.contains("uop[1] acc=5 inp=3 wgt=0"), "{text}");
    }
}
