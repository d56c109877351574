//! Text assembly: one instruction per line as `OPCODE key=value ...`, with
//! micro-ops listed after an `@uops` marker as `acc=.. inp=.. wgt=..`.
//! `#` starts a comment. Dependency flags are written only when set.

use std::fmt::Write;

use thiserror::Error;

use super::{
    check_width, width, AluInsn, AluOp, DepFlags, GemmInsn, InsnError, Instruction, MemInsn,
    MemScope, MicroOp, Program,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct AsmError {
    pub line: usize,
    pub msg: String,
}

fn err(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError {
        line,
        msg: msg.into(),
    }
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str, bool)>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, tokens: &[&'a str]) -> Result<Self, AsmError> {
        let mut pairs: Vec<(&str, &str, bool)> = Vec::new();
        for t in tokens {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected key=value, got `{t}`")))?;
            if pairs.iter().any(|(pk, _, _)| *pk == k) {
                return Err(err(line, format!("duplicate key `{k}`")));
            }
            pairs.push((k, v, false));
        }
        Ok(Fields { line, pairs })
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        let p = self.pairs.iter_mut().find(|(k, _, _)| *k == key)?;
        p.2 = true;
        Some(p.1)
    }

    fn num(&mut self, key: &'static str, bits: u32) -> Result<u64, AsmError> {
        let Some(v) = self.raw(key) else {
            return Ok(0);
        };
        let n = parse_u64(v).ok_or_else(|| err(self.line, format!("bad number for {key}: `{v}`")))?;
        check_width(key, n, bits).map_err(|e| err(self.line, e.to_string()))?;
        Ok(n)
    }

    fn flag(&mut self, key: &'static str) -> Result<bool, AsmError> {
        Ok(self.num(key, 1)? == 1)
    }

    fn deps(&mut self) -> Result<DepFlags, AsmError> {
        Ok(DepFlags {
            pop_prev: self.flag("pop_prev")?,
            pop_next: self.flag("pop_next")?,
            push_prev: self.flag("push_prev")?,
            push_next: self.flag("push_next")?,
        })
    }

    fn done(self) -> Result<(), AsmError> {
        match self.pairs.iter().find(|(_, _, used)| !used) {
            Some((k, _, _)) => Err(err(self.line, format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

fn parse_u64(s: &str) -> Option<u64> {
    if let Some(h) = s.strip_prefix("0x") {
        u64::from_str_radix(h, 16).ok()
    } else {
        s.parse().ok()
    }
}

fn parse_scope(line: usize, s: &str) -> Result<MemScope, AsmError> {
    MemScope::ALL
        .iter()
        .copied()
        .find(|m| m.name().eq_ignore_ascii_case(s))
        .or_else(|| parse_u64(s).and_then(MemScope::from_code))
        .ok_or_else(|| err(line, format!("unknown scope `{s}`")))
}

fn parse_alu_op(line: usize, s: &str) -> Result<AluOp, AsmError> {
    AluOp::ALL
        .iter()
        .copied()
        .find(|m| m.name().eq_ignore_ascii_case(s))
        .or_else(|| parse_u64(s).and_then(AluOp::from_code))
        .ok_or_else(|| err(line, format!("unknown ALU op `{s}`")))
}

fn check(line: usize, i: Instruction) -> Result<Instruction, AsmError> {
    i.check().map_err(|e: InsnError| err(line, e.to_string()))?;
    Ok(i)
}

fn parse_mem(f: &mut Fields, store: bool) -> Result<MemInsn, AsmError> {
    use width::*;
    let scope = match f.raw("scope") {
        Some(s) => parse_scope(f.line, s)?,
        None if store => MemScope::Out,
        None => return Err(err(f.line, "LOAD requires scope=")),
    };
    Ok(MemInsn {
        deps: f.deps()?,
        scope,
        sram_base: f.num("sram_base", SRAM_BASE)? as u16,
        dram_base: f.num("dram_base", DRAM_BASE)? as u32,
        y_size: f.num("y_size", SIZE)? as u16,
        x_size: f.num("x_size", SIZE)? as u16,
        x_stride: f.num("x_stride", SIZE)? as u16,
        y_pad_top: f.num("y_pad_top", PAD)? as u8,
        y_pad_bottom: f.num("y_pad_bottom", PAD)? as u8,
        x_pad_left: f.num("x_pad_left", PAD)? as u8,
        x_pad_right: f.num("x_pad_right", PAD)? as u8,
    })
}

fn parse_imm(f: &mut Fields) -> Result<i16, AsmError> {
    let Some(v) = f.raw("imm") else {
        return Ok(0);
    };
    v.parse::<i16>()
        .map_err(|_| err(f.line, format!("imm `{v}` is not a 16-bit signed integer")))
}

fn parse_instruction(line: usize, op: &str, rest: &[&str]) -> Result<Instruction, AsmError> {
    use width::*;
    let mut f = Fields::parse(line, rest)?;
    let insn = match op.to_ascii_uppercase().as_str() {
        "LOAD" => Instruction::Load(parse_mem(&mut f, false)?),
        "STORE" => Instruction::Store(parse_mem(&mut f, true)?),
        "FINISH" => Instruction::Finish(f.deps()?),
        "GEMM" => Instruction::Gemm(GemmInsn {
            deps: f.deps()?,
            reset: f.flag("reset")?,
            uop_bgn: f.num("uop_bgn", UOP_BGN)? as u16,
            uop_end: f.num("uop_end", UOP_END)? as u16,
            iter_out: f.num("iter_out", ITER)? as u16,
            iter_in: f.num("iter_in", ITER)? as u16,
            dst_factor_out: f.num("dst_factor_out", FACTOR)? as u16,
            dst_factor_in: f.num("dst_factor_in", FACTOR)? as u16,
            src_factor_out: f.num("src_factor_out", FACTOR)? as u16,
            src_factor_in: f.num("src_factor_in", FACTOR)? as u16,
            wgt_factor_out: f.num("wgt_factor_out", WGT_FACTOR)? as u16,
            wgt_factor_in: f.num("wgt_factor_in", WGT_FACTOR)? as u16,
        }),
        "ALU" => {
            let op = match f.raw("op") {
                Some(s) => parse_alu_op(line, s)?,
                None => return Err(err(line, "ALU requires op=")),
            };
            Instruction::Alu(AluInsn {
                deps: f.deps()?,
                reset: f.flag("reset")?,
                uop_bgn: f.num("uop_bgn", UOP_BGN)? as u16,
                uop_end: f.num("uop_end", UOP_END)? as u16,
                iter_out: f.num("iter_out", ITER)? as u16,
                iter_in: f.num("iter_in", ITER)? as u16,
                dst_factor_out: f.num("dst_factor_out", FACTOR)? as u16,
                dst_factor_in: f.num("dst_factor_in", FACTOR)? as u16,
                src_factor_out: f.num("src_factor_out", FACTOR)? as u16,
                src_factor_in: f.num("src_factor_in", FACTOR)? as u16,
                op,
                use_imm: f.flag("use_imm")?,
                imm: parse_imm(&mut f)?,
            })
        }
        other => return Err(err(line, format!("unknown opcode `{other}`"))),
    };
    f.done()?;
    check(line, insn)
}

fn parse_uop(line: usize, tokens: &[&str]) -> Result<MicroOp, AsmError> {
    let mut f = Fields::parse(line, tokens)?;
    let u = MicroOp {
        acc_idx: f.num("acc", width::UOP_ACC)? as u16,
        inp_idx: f.num("inp", width::UOP_INP)? as u16,
        wgt_idx: f.num("wgt", width::UOP_WGT)? as u16,
    };
    f.done()?;
    Ok(u)
}

pub fn assemble(text: &str) -> Result<Program, AsmError> {
    let mut prog = Program::default();
    let mut in_uops = false;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if body.eq_ignore_ascii_case("@uops") {
            if in_uops {
                return Err(err(line, "duplicate @uops section"));
            }
            in_uops = true;
            continue;
        }
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if in_uops {
            let tokens = match tokens.first() {
                Some(t) if t.eq_ignore_ascii_case("UOP") => &tokens[1..],
                _ => &tokens[..],
            };
            prog.uops.push(parse_uop(line, tokens)?);
        } else {
            prog.instrs
                .push(parse_instruction(line, tokens[0], &tokens[1..])?);
        }
    }
    Ok(prog)
}

fn write_deps(out: &mut String, d: &DepFlags) {
    for (k, v) in [
        ("pop_prev", d.pop_prev),
        ("pop_next", d.pop_next),
        ("push_prev", d.push_prev),
        ("push_next", d.push_next),
    ] {
        if v {
            let _ = write!(out, " {k}=1");
        }
    }
}

/// Canonical text form of a program.
pub fn disassemble(prog: &Program) -> String {
    let mut out = String::new();
    for i in &prog.instrs {
        out.push_str(i.opcode().name());
        match i {
            Instruction::Load(m) | Instruction::Store(m) => {
                let _ = write!(
                    out,
                    " scope={} sram_base={} dram_base={} y_size={} x_size={} x_stride={}",
                    m.scope.name(),
                    m.sram_base,
                    m.dram_base,
                    m.y_size,
                    m.x_size,
                    m.x_stride
                );
                if m.y_pad_top | m.y_pad_bottom | m.x_pad_left | m.x_pad_right != 0 {
                    let _ = write!(
                        out,
                        " y_pad_top={} y_pad_bottom={} x_pad_left={} x_pad_right={}",
                        m.y_pad_top, m.y_pad_bottom, m.x_pad_left, m.x_pad_right
                    );
                }
            }
            Instruction::Gemm(g) => {
                let _ = write!(
                    out,
                    " reset={} uop_bgn={} uop_end={} iter_out={} iter_in={} \
                     dst_factor_out={} dst_factor_in={} src_factor_out={} src_factor_in={} \
                     wgt_factor_out={} wgt_factor_in={}",
                    g.reset as u8,
                    g.uop_bgn,
                    g.uop_end,
                    g.iter_out,
                    g.iter_in,
                    g.dst_factor_out,
                    g.dst_factor_in,
                    g.src_factor_out,
                    g.src_factor_in,
                    g.wgt_factor_out,
                    g.wgt_factor_in
                );
            }
            Instruction::Alu(a) => {
                let _ = write!(
                    out,
                    " op={} reset={} uop_bgn={} uop_end={} iter_out={} iter_in={} \
                     dst_factor_out={} dst_factor_in={} src_factor_out={} src_factor_in={} \
                     use_imm={} imm={}",
                    a.op.name(),
                    a.reset as u8,
                    a.uop_bgn,
                    a.uop_end,
                    a.iter_out,
                    a.iter_in,
                    a.dst_factor_out,
                    a.dst_factor_in,
                    a.src_factor_out,
                    a.src_factor_in,
                    a.use_imm as u8,
                    a.imm
                );
            }
            Instruction::Finish(_) => {}
        }
        write_deps(&mut out, &i.deps());
        out.push('\n');
    }
    if !prog.uops.is_empty() {
        out.push_str("@uops\n");
        for u in &prog.uops {
            let _ = writeln!(out, "acc={} inp={} wgt={}", u.acc_idx, u.inp_idx, u.wgt_idx);
        }
    }
    out
}
