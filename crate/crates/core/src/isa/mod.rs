//! The two-level instruction set: 128-bit task instructions that move data or
//! launch micro-coded kernels, and the 32-bit micro-ops those kernels are
//! made of.

mod asm;
mod codec;
mod container;
mod validate;

pub use asm::{assemble, disassemble, AsmError};
pub use codec::{decode_instruction, decode_uop, encode_instruction, encode_uop, CodecError};
pub use container::{read_program, write_program, ContainerError, PROGRAM_MAGIC, PROGRAM_VERSION};
pub use validate::{validate_program, Violation};

pub use crate::config::MemScope;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dependency-token flags carried by every instruction. "prev" and "next"
/// are relative to the executing module in the load -> compute -> store chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DepFlags {
    pub pop_prev: bool,
    pub pop_next: bool,
    pub push_prev: bool,
    pub push_next: bool,
}

impl DepFlags {
    pub const NONE: DepFlags = DepFlags {
        pop_prev: false,
        pop_next: false,
        push_prev: false,
        push_next: false,
    };

    pub fn is_empty(&self) -> bool {
        *self == DepFlags::NONE
    }
}

/// The three task-level modules fetch dispatches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Module {
    Load,
    Compute,
    Store,
}

impl Module {
    pub const ALL: [Module; 3] = [Module::Load, Module::Compute, Module::Store];

    pub fn name(self) -> &'static str {
        match self {
            Module::Load => "load",
            Module::Compute => "compute",
            Module::Store => "store",
        }
    }

    /// Whether this module has a "prev" / "next" neighbour to exchange tokens with.
    pub fn has_prev(self) -> bool {
        self != Module::Load
    }

    pub fn has_next(self) -> bool {
        self != Module::Store
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Opcode {
    Load = 0,
    Store = 1,
    Gemm = 2,
    Finish = 3,
    Alu = 4,
}

impl Opcode {
    pub fn name(self) -> &'static str {
        match self {
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Gemm => "GEMM",
            Opcode::Finish => "FINISH",
            Opcode::Alu => "ALU",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AluOp {
    Min = 0,
    Max = 1,
    Add = 2,
    Shr = 3,
}

impl AluOp {
    pub const ALL: [AluOp; 4] = [AluOp::Min, AluOp::Max, AluOp::Add, AluOp::Shr];

    pub fn from_code(code: u64) -> Option<AluOp> {
        AluOp::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AluOp::Min => "MIN",
            AluOp::Max => "MAX",
            AluOp::Add => "ADD",
            AluOp::Shr => "SHR",
        }
    }

    /// Applies the operation to two accumulator values. Addition wraps;
    /// SHR is arithmetic, with a negative amount shifting left.
    pub fn apply(self, a: i32, b: i32) -> i32 {
        match self {
            AluOp::Min => a.min(b),
            AluOp::Max => a.max(b),
            AluOp::Add => a.wrapping_add(b),
            AluOp::Shr => {
                if b >= 0 {
                    a >> b.min(31)
                } else {
                    let s = b.unsigned_abs();
                    if s >= 32 {
                        0
                    } else {
                        a.wrapping_shl(s)
                    }
                }
            }
        }
    }
}

/// 2D strided DMA between DRAM and an on-chip buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemInsn {
    pub deps: DepFlags,
    pub scope: MemScope,
    pub sram_base: u16,
    pub dram_base: u32,
    pub y_size: u16,
    pub x_size: u16,
    pub x_stride: u16,
    pub y_pad_top: u8,
    pub y_pad_bottom: u8,
    pub x_pad_left: u8,
    pub x_pad_right: u8,
}

impl MemInsn {
    /// A contiguous copy of `count` tiles with no padding.
    pub fn linear(scope: MemScope, sram_base: u16, dram_base: u32, count: u16) -> Self {
        MemInsn {
            deps: DepFlags::NONE,
            scope,
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

    pub fn is_noop(&self) -> bool {
        self.y_size == 0 || self.x_size == 0
    }

    /// Row pitch of the destination in SRAM.
    pub fn sram_row(&self) -> usize {
        self.x_pad_left as usize + self.x_size as usize + self.x_pad_right as usize
    }

    /// SRAM entries written by a LOAD including zero padding.
    pub fn sram_extent(&self) -> usize {
        if self.is_noop() {
            return 0;
        }
        let rows = self.y_pad_top as usize + self.y_size as usize + self.y_pad_bottom as usize;
        rows * self.sram_row()
    }

    pub fn moved_tiles(&self) -> usize {
        self.y_size as usize * self.x_size as usize
    }
}

/// Micro-coded kernel launch on the GEMM core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmInsn {
    pub deps: DepFlags,
    pub reset: bool,
    pub uop_bgn: u16,
    pub uop_end: u16,
    pub iter_out: u16,
    pub iter_in: u16,
    pub dst_factor_out: u16,
    pub dst_factor_in: u16,
    pub src_factor_out: u16,
    pub src_factor_in: u16,
    pub wgt_factor_out: u16,
    pub wgt_factor_in: u16,
}

/// Micro-coded kernel launch on the tensor ALU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AluInsn {
    pub deps: DepFlags,
    pub reset: bool,
    pub uop_bgn: u16,
    pub uop_end: u16,
    pub iter_out: u16,
    pub iter_in: u16,
    pub dst_factor_out: u16,
    pub dst_factor_in: u16,
    pub src_factor_out: u16,
    pub src_factor_in: u16,
    pub op: AluOp,
    pub use_imm: bool,
    pub imm: i16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "opcode", rename_all = "UPPERCASE")]
pub enum Instruction {
    Load(MemInsn),
    Store(MemInsn),
    Gemm(GemmInsn),
    Finish(DepFlags),
    Alu(AluInsn),
}

/// One entry of a micro-coded kernel: base tile indices for the affine nest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MicroOp {
    pub acc_idx: u16,
    pub inp_idx: u16,
    pub wgt_idx: u16,
}

impl MicroOp {
    pub fn new(acc_idx: u16, inp_idx: u16, wgt_idx: u16) -> Self {
        MicroOp {
            acc_idx,
            inp_idx,
            wgt_idx,
        }
    }
}

/// An instruction stream plus the micro-op table that UOP-scope loads read from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub instrs: Vec<Instruction>,
    pub uops: Vec<MicroOp>,
}

/// Bit widths of every field that does not fill its Rust type exactly.
pub(crate) mod width {
    pub const OPCODE: u32 = 3;
    pub const SCOPE: u32 = 3;
    pub const SRAM_BASE: u32 = 16;
    pub const DRAM_BASE: u32 = 32;
    pub const SIZE: u32 = 16;
    pub const PAD: u32 = 4;
    pub const UOP_BGN: u32 = 13;
    pub const UOP_END: u32 = 14;
    pub const ITER: u32 = 14;
    pub const FACTOR: u32 = 11;
    pub const WGT_FACTOR: u32 = 10;
    pub const ALU_OP: u32 = 2;
    pub const IMM: u32 = 16;
    pub const UOP_ACC: u32 = 11;
    pub const UOP_INP: u32 = 11;
    pub const UOP_WGT: u32 = 10;
}

/// A structural problem with a single instruction, independent of any
/// hardware configuration.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InsnError {
    #[error("field {field} = {value} does not fit in {bits} bits")]
    FieldOverflow {
        field: &'static str,
        value: u64,
        bits: u32,
    },
    #[error("uop_bgn {bgn} must be below uop_end {end}")]
    EmptyUopRange { bgn: u16, end: u16 },
    #[error("{field} must be at least 1")]
    ZeroIterations { field: &'static str },
    #[error("LOAD cannot target the OUT scope")]
    LoadToOut,
    #[error("STORE must read from the OUT scope, not {0}")]
    StoreFromScope(&'static str),
    #[error("STORE cannot carry padding")]
    StorePadding,
    #[error("SHR requires an immediate shift amount")]
    ShrWithoutImm,
}

pub(crate) fn check_width(field: &'static str, value: u64, bits: u32) -> Result<(), InsnError> {
    if bits < 64 && value >> bits != 0 {
        Err(InsnError::FieldOverflow { field, value, bits })
    } else {
        Ok(())
    }
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::Load(_) => Opcode::Load,
            Instruction::Store(_) => Opcode::Store,
            Instruction::Gemm(_) => Opcode::Gemm,
            Instruction::Finish(_) => Opcode::Finish,
            Instruction::Alu(_) => Opcode::Alu,
        }
    }

    /// Module that executes the instruction. Micro-op loads run on compute.
    pub fn module(&self) -> Module {
        match self {
            Instruction::Load(m) if m.scope == MemScope::Uop => Module::Compute,
            Instruction::Load(_) => Module::Load,
            Instruction::Store(_) => Module::Store,
            _ => Module::Compute,
        }
    }

    pub fn deps(&self) -> DepFlags {
        match self {
            Instruction::Load(m) | Instruction::Store(m) => m.deps,
            Instruction::Gemm(g) => g.deps,
            Instruction::Alu(a) => a.deps,
            Instruction::Finish(d) => *d,
        }
    }

    pub fn deps_mut(&mut self) -> &mut DepFlags {
        match self {
            Instruction::Load(m) | Instruction::Store(m) => &mut m.deps,
            Instruction::Gemm(g) => &mut g.deps,
            Instruction::Alu(a) => &mut a.deps,
            Instruction::Finish(d) => d,
        }
    }

    pub fn finish() -> Instruction {
        Instruction::Finish(DepFlags::NONE)
    }

    /// `(uop_bgn, uop_end)` for kernel launches.
    pub fn uop_range(&self) -> Option<(u16, u16)> {
        match self {
            Instruction::Gemm(g) => Some((g.uop_bgn, g.uop_end)),
            Instruction::Alu(a) => Some((a.uop_bgn, a.uop_end)),
            _ => None,
        }
    }

    pub fn set_uop_range(&mut self, bgn: u16, end: u16) {
        match self {
            Instruction::Gemm(g) => {
                g.uop_bgn = bgn;
                g.uop_end = end;
            }
            Instruction::Alu(a) => {
                a.uop_bgn = bgn;
                a.uop_end = end;
            }
            _ => {}
        }
    }

    /// Checks field widths and the per-variant invariants.
    pub fn check(&self) -> Result<(), InsnError> {
        use width::*;
        match self {
            Instruction::Load(m) | Instruction::Store(m) => {
                for (f, v) in [
                    ("y_pad_top", m.y_pad_top),
                    ("y_pad_bottom", m.y_pad_bottom),
                    ("x_pad_left", m.x_pad_left),
                    ("x_pad_right", m.x_pad_right),
                ] {
                    check_width(f, v as u64, PAD)?;
                }
                match (self.opcode(), m.scope) {
                    (Opcode::Load, MemScope::Out) => return Err(InsnError::LoadToOut),
                    (Opcode::Store, MemScope::Out) => {}
                    (Opcode::Store, s) => return Err(InsnError::StoreFromScope(s.name())),
                    _ => {}
                }
                if self.opcode() == Opcode::Store
                    && (m.y_pad_top | m.y_pad_bottom | m.x_pad_left | m.x_pad_right) != 0
                {
                    return Err(InsnError::StorePadding);
                }
                Ok(())
            }
            Instruction::Gemm(g) => {
                check_launch(g.uop_bgn, g.uop_end, g.iter_out, g.iter_in)?;
                for (f, v) in [
                    ("dst_factor_out", g.dst_factor_out),
                    ("dst_factor_in", g.dst_factor_in),
                    ("src_factor_out", g.src_factor_out),
                    ("src_factor_in", g.src_factor_in),
                ] {
                    check_width(f, v as u64, FACTOR)?;
                }
                check_width("wgt_factor_out", g.wgt_factor_out as u64, WGT_FACTOR)?;
                check_width("wgt_factor_in", g.wgt_factor_in as u64, WGT_FACTOR)?;
                Ok(())
            }
            Instruction::Alu(a) => {
                check_launch(a.uop_bgn, a.uop_end, a.iter_out, a.iter_in)?;
                for (f, v) in [
                    ("dst_factor_out", a.dst_factor_out),
                    ("dst_factor_in", a.dst_factor_in),
                    ("src_factor_out", a.src_factor_out),
                    ("src_factor_in", a.src_factor_in),
                ] {
                    check_width(f, v as u64, FACTOR)?;
                }
                if a.op == AluOp::Shr && !a.use_imm {
                    return Err(InsnError::ShrWithoutImm);
                }
                Ok(())
            }
            Instruction::Finish(_) => Ok(()),
        }
    }
}

fn check_launch(bgn: u16, end: u16, iter_out: u16, iter_in: u16) -> Result<(), InsnError> {
    use width::*;
    check_width("uop_bgn", bgn as u64, UOP_BGN)?;
    check_width("uop_end", end as u64, UOP_END)?;
    check_width("iter_out", iter_out as u64, ITER)?;
    check_width("iter_in", iter_in as u64, ITER)?;
    if bgn >= end {
        return Err(InsnError::EmptyUopRange { bgn, end });
    }
    if iter_out == 0 {
        return Err(InsnError::ZeroIterations { field: "iter_out" });
    }
    if iter_in == 0 {
        return Err(InsnError::ZeroIterations { field: "iter_in" });
    }
    Ok(())
}

impl MicroOp {
    pub fn check(&self) -> Result<(), InsnError> {
        check_width("acc_idx", self.acc_idx as u64, width::UOP_ACC)?;
        check_width("inp_idx", self.inp_idx as u64, width::UOP_INP)?;
        check_width("wgt_idx", self.wgt_idx as u64, width::UOP_WGT)?;
        Ok(())
    }
}
