//! Binary packing of instructions (16 bytes) and micro-ops (4 bytes).
//!
//! Instructions are two little-endian 64-bit words. Word 0 starts with the
//! opcode in bits [2:0] and the four dependency flags in bits [6:3]; variant
//! fields follow in declaration order, LSB first. A field that would straddle
//! bit 64 starts at bit 64 instead. Unused bits must be zero.

use thiserror::Error;

use super::{
    check_width, width, AluInsn, AluOp, DepFlags, GemmInsn, InsnError, Instruction, MemInsn,
    MemScope, MicroOp, Opcode,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("encoding error: {0}")]
    Encode(InsnError),
    #[error("unknown opcode {0}")]
    BadOpcode(u64),
    #[error("unknown memory scope {0}")]
    BadScope(u64),
    #[error("reserved bits set: {0:#x}")]
    ReservedBits(u128),
    #[error("validation error: {0}")]
    Invalid(InsnError),
}

struct BitWriter {
    bits: u128,
    pos: u32,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter { bits: 0, pos: 0 }
    }

    fn put(&mut self, field: &'static str, value: u64, w: u32) -> Result<(), CodecError> {
        check_width(field, value, w).map_err(CodecError::Encode)?;
        if self.pos < 64 && self.pos + w > 64 {
            self.pos = 64;
        }
        debug_assert!(self.pos + w <= 128);
        self.bits |= (value as u128) << self.pos;
        self.pos += w;
        Ok(())
    }

    fn flag(&mut self, v: bool) {
        self.bits |= (v as u128) << self.pos;
        self.pos += 1;
    }

    fn finish(self) -> [u8; 16] {
        self.bits.to_le_bytes()
    }
}

struct BitReader {
    bits: u128,
    pos: u32,
    used: u128,
}

impl BitReader {
    fn get(&mut self, w: u32) -> u64 {
        if self.pos < 64 && self.pos + w > 64 {
            self.pos = 64;
        }
        let mask = (1u128 << w) - 1;
        self.used |= mask << self.pos;
        let v = (self.bits >> self.pos) & mask;
        self.pos += w;
        v as u64
    }

    fn flag(&mut self) -> bool {
        self.get(1) != 0
    }

    fn finish(self) -> Result<(), CodecError> {
        let extra = self.bits & !self.used;
        if extra != 0 {
            Err(CodecError::ReservedBits(extra))
        } else {
            Ok(())
        }
    }
}

fn put_deps(w: &mut BitWriter, op: Opcode, d: &DepFlags) {
    w.bits = op as u128;
    w.pos = width::OPCODE;
    w.flag(d.pop_prev);
    w.flag(d.pop_next);
    w.flag(d.push_prev);
    w.flag(d.push_next);
}

fn get_deps(r: &mut BitReader) -> DepFlags {
    DepFlags {
        pop_prev: r.flag(),
        pop_next: r.flag(),
        push_prev: r.flag(),
        push_next: r.flag(),
    }
}

/// Packs an instruction. The instruction's structural invariants are
/// checked first; an overflowing field is reported by name.
pub fn encode_instruction(i: &Instruction) -> Result<[u8; 16], CodecError> {
    use width::*;
    // Width problems surface as encoding errors; other invariants as validation errors.
    if let Err(e) = i.check() {
        return Err(match e {
            InsnError::FieldOverflow { .. } => CodecError::Encode(e),
            other => CodecError::Invalid(other),
        });
    }
    let mut w = BitWriter::new();
    put_deps(&mut w, i.opcode(), &i.deps());
    match i {
        Instruction::Load(m) | Instruction::Store(m) => {
            w.put("mem_scope", m.scope as u64, SCOPE)?;
            w.put("sram_base", m.sram_base as u64, SRAM_BASE)?;
            w.put("dram_base", m.dram_base as u64, DRAM_BASE)?;
            w.put("y_size", m.y_size as u64, SIZE)?;
            w.put("x_size", m.x_size as u64, SIZE)?;
            w.put("x_stride", m.x_stride as u64, SIZE)?;
            w.put("y_pad_top", m.y_pad_top as u64, PAD)?;
            w.put("y_pad_bottom", m.y_pad_bottom as u64, PAD)?;
            w.put("x_pad_left", m.x_pad_left as u64, PAD)?;
            w.put("x_pad_right", m.x_pad_right as u64, PAD)?;
        }
        Instruction::Gemm(g) => {
            w.put("reset", g.reset as u64, 1)?;
            w.put("uop_bgn", g.uop_bgn as u64, UOP_BGN)?;
            w.put("uop_end", g.uop_end as u64, UOP_END)?;
            w.put("iter_out", g.iter_out as u64, ITER)?;
            w.put("iter_in", g.iter_in as u64, ITER)?;
            w.put("dst_factor_out", g.dst_factor_out as u64, FACTOR)?;
            w.put("dst_factor_in", g.dst_factor_in as u64, FACTOR)?;
            w.put("src_factor_out", g.src_factor_out as u64, FACTOR)?;
            w.put("src_factor_in", g.src_factor_in as u64, FACTOR)?;
            w.put("wgt_factor_out", g.wgt_factor_out as u64, WGT_FACTOR)?;
            w.put("wgt_factor_in", g.wgt_factor_in as u64, WGT_FACTOR)?;
        }
        Instruction::Alu(a) => {
            w.put("reset", a.reset as u64, 1)?;
            w.put("uop_bgn", a.uop_bgn as u64, UOP_BGN)?;
            w.put("uop_end", a.uop_end as u64, UOP_END)?;
            w.put("iter_out", a.iter_out as u64, ITER)?;
            w.put("iter_in", a.iter_in as u64, ITER)?;
            w.put("dst_factor_out", a.dst_factor_out as u64, FACTOR)?;
            w.put("dst_factor_in", a.dst_factor_in as u64, FACTOR)?;
            w.put("src_factor_out", a.src_factor_out as u64, FACTOR)?;
            w.put("src_factor_in", a.src_factor_in as u64, FACTOR)?;
            w.put("alu_opcode", a.op as u64, ALU_OP)?;
            w.put("use_imm", a.use_imm as u64, 1)?;
            w.put("imm", a.imm as u16 as u64, IMM)?;
        }
        Instruction::Finish(_) => {}
    }
    Ok(w.finish())
}

pub fn decode_instruction(b: &[u8; 16]) -> Result<Instruction, CodecError> {
    use width::*;
    let mut r = BitReader {
        bits: u128::from_le_bytes(*b),
        pos: 0,
        used: 0,
    };
    let opcode = r.get(OPCODE);
    let deps = get_deps(&mut r);
    let insn = match opcode {
        0 | 1 => {
            let scope_code = r.get(SCOPE);
            let scope = MemScope::from_code(scope_code).ok_or(CodecError::BadScope(scope_code))?;
            let m = MemInsn {
                deps,
                scope,
                sram_base: r.get(SRAM_BASE) as u16,
                dram_base: r.get(DRAM_BASE) as u32,
                y_size: r.get(SIZE) as u16,
                x_size: r.get(SIZE) as u16,
                x_stride: r.get(SIZE) as u16,
                y_pad_top: r.get(PAD) as u8,
                y_pad_bottom: r.get(PAD) as u8,
                x_pad_left: r.get(PAD) as u8,
                x_pad_right: r.get(PAD) as u8,
            };
            if opcode == 0 {
                Instruction::Load(m)
            } else {
                Instruction::Store(m)
            }
        }
        2 => Instruction::Gemm(GemmInsn {
            deps,
            reset: r.flag(),
            uop_bgn: r.get(UOP_BGN) as u16,
            uop_end: r.get(UOP_END) as u16,
            iter_out: r.get(ITER) as u16,
            iter_in: r.get(ITER) as u16,
            dst_factor_out: r.get(FACTOR) as u16,
            dst_factor_in: r.get(FACTOR) as u16,
            src_factor_out: r.get(FACTOR) as u16,
            src_factor_in: r.get(FACTOR) as u16,
            wgt_factor_out: r.get(WGT_FACTOR) as u16,
            wgt_factor_in: r.get(WGT_FACTOR) as u16,
        }),
        3 => Instruction::Finish(deps),
        4 => {
            let reset = r.flag();
            let uop_bgn = r.get(UOP_BGN) as u16;
            let uop_end = r.get(UOP_END) as u16;
            let iter_out = r.get(ITER) as u16;
            let iter_in = r.get(ITER) as u16;
            let dst_factor_out = r.get(FACTOR) as u16;
            let dst_factor_in = r.get(FACTOR) as u16;
            let src_factor_out = r.get(FACTOR) as u16;
            let src_factor_in = r.get(FACTOR) as u16;
            let op = AluOp::from_code(r.get(ALU_OP)).expect("2-bit ALU opcode is total");
            Instruction::Alu(AluInsn {
                deps,
                reset,
                uop_bgn,
                uop_end,
                iter_out,
                iter_in,
                dst_factor_out,
                dst_factor_in,
                src_factor_out,
                src_factor_in,
                op,
                use_imm: r.flag(),
                imm: r.get(IMM) as u16 as i16,
            })
        }
        other => return Err(CodecError::BadOpcode(other)),
    };
    r.finish()?;
    insn.check().map_err(CodecError::Invalid)?;
    Ok(insn)
}

/// `acc_idx` in bits [10:0], `inp_idx` in [21:11], `wgt_idx` in [31:22].
pub fn encode_uop(u: &MicroOp) -> Result<[u8; 4], CodecError> {
    u.check().map_err(CodecError::Encode)?;
    let word = u.acc_idx as u32 | (u.inp_idx as u32) << 11 | (u.wgt_idx as u32) << 22;
    Ok(word.to_le_bytes())
}

pub fn decode_uop(b: &[u8; 4]) -> MicroOp {
    let word = u32::from_le_bytes(*b);
    MicroOp {
        acc_idx: (word & 0x7ff) as u16,
        inp_idx: ((word >> 11) & 0x7ff) as u16,
        wgt_idx: (word >> 22) as u16,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::strategies;
    use proptest::prelude::*;

    fn gemm() -> GemmInsn {
        GemmInsn {
            deps: DepFlags::NONE,
            reset: false,
            uop_bgn: 0,
            uop_end: 1,
            iter_out: 1,
            iter_in: 1,
            dst_factor_out: 0,
            dst_factor_in: 0,
            src_factor_out: 0,
            src_factor_in: 0,
            wgt_factor_out: 0,
            wgt_factor_in: 0,
        }
    }

    #[test]
    fn finish_bytes() {
        let b = encode_instruction(&Instruction::finish()).unwrap();
        assert_eq!(b[0], 0x03);
        assert!(b[1..].iter().all(|&x| x == 0));
    }

    #[test]
    fn gemm_pop_prev_low_byte() {
        let mut g = gemm();
        g.deps.pop_prev = true;
        let b = encode_instruction(&Instruction::Gemm(g)).unwrap();
        assert_eq!(b[0] & 0x7f, 0x0A);
    }

    #[test]
    fn uop_packing() {
        assert_eq!(encode_uop(&MicroOp::new(0, 0, 0)).unwrap(), [0; 4]);
        let w = u32::from_le_bytes(encode_uop(&MicroOp::new(1, 1, 1)).unwrap());
        assert_eq!(w, 1 + (1 << 11) + (1 << 22));
        assert_eq!(w, 0x0040_0801);
        assert!(matches!(
            encode_uop(&MicroOp::new(2048, 0, 0)),
            Err(CodecError::Encode(InsnError::FieldOverflow { field: "acc_idx", .. }))
        ));
        assert!(encode_uop(&MicroOp::new(0, 0, 1024)).is_err());
    }

    #[test]
    fn bad_opcode() {
        let mut b = [0u8; 16];
        b[0] = 0x07;
        assert_eq!(decode_instruction(&b), Err(CodecError::BadOpcode(7)));
        b[0] = 0x05;
        assert_eq!(decode_instruction(&b), Err(CodecError::BadOpcode(5)));
    }

    #[test]
    fn all_zero_is_noop_uop_load() {
        let i = decode_instruction(&[0u8; 16]).unwrap();
        match i {
            Instruction::Load(m) => {
                assert_eq!(m.scope, MemScope::Uop);
                assert!(m.is_noop());
                assert!(m.deps.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reserved_bits_rejected() {
        let mut b = encode_instruction(&Instruction::finish()).unwrap();
        b[15] = 0x80;
        assert!(matches!(decode_instruction(&b), Err(CodecError::ReservedBits(_))));
        // GEMM word 0 uses 63 bits; bit 63 is reserved.
        let mut b = encode_instruction(&Instruction::Gemm(gemm())).unwrap();
        b[7] |= 0x80;
        assert!(matches!(decode_instruction(&b), Err(CodecError::ReservedBits(_))));
    }

    #[test]
    fn decode_rejects_invalid_variant() {
        // GEMM with uop_bgn == uop_end == 0.
        let mut g = gemm();
        g.uop_end = 0;
        let mut w = BitWriter::new();
        put_deps(&mut w, Opcode::Gemm, &g.deps);
        w.put("reset", 0, 1).unwrap();
        w.put("uop_bgn", 0, 13).unwrap();
        w.put("uop_end", 0, 14).unwrap();
        w.put("iter_out", 1, 14).unwrap();
        w.put("iter_in", 1, 14).unwrap();
        let b = w.finish();
        assert!(matches!(decode_instruction(&b), Err(CodecError::Invalid(_))));
    }

    #[test]
    fn encode_names_overflowing_field() {
        let mut g = gemm();
        g.wgt_factor_in = 1024;
        match encode_instruction(&Instruction::Gemm(g)) {
            Err(CodecError::Encode(InsnError::FieldOverflow { field, .. })) => {
                assert_eq!(field, "wgt_factor_in")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_layout_fills_second_word() {
        let m = MemInsn {
            deps: DepFlags::NONE,
            scope: MemScope::Inp,
            sram_base: 0,
            dram_base: 0,
            y_size: 0xffff,
            x_size: 0,
            x_stride: 0,
            y_pad_top: 0,
            y_pad_bottom: 0,
            x_pad_left: 0,
            x_pad_right: 0xf,
        };
        let b = encode_instruction(&Instruction::Load(m)).unwrap();
        let hi = u64::from_le_bytes(b[8..].try_into().unwrap());
        assert_eq!(hi & 0xffff, 0xffff);
        assert_eq!(hi >> 60, 0xf);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn instruction_roundtrip(i in strategies::instruction()) {
            let b = encode_instruction(&i).unwrap();
            prop_assert_eq!(decode_instruction(&b).unwrap(), i);
        }

        #[test]
        fn uop_roundtrip(u in strategies::uop()) {
            let b = encode_uop(&u).unwrap();
            prop_assert_eq!(decode_uop(&b), u);
        }
    }
}
