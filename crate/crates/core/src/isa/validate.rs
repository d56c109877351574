use std::fmt;

use serde::Serialize;

use super::{Instruction, MemScope, MicroOp, Program};
use crate::config::HardwareParams;

/// A program-level problem found by [`validate_program`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Offending instruction, or `None` for whole-program problems.
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "instruction {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn max_index(base: u16, iter_out: u16, f_out: u16, iter_in: u16, f_in: u16) -> usize {
    base as usize
        + (iter_out as usize - 1) * f_out as usize
        + (iter_in as usize - 1) * f_in as usize
}

/// Checks a program against a hardware configuration. Micro-op contents are
/// tracked statically through UOP-scope loads (which execute in program
/// order) so every affine index a kernel can produce is bounds-checked.
/// An empty result means the program is valid.
pub fn validate_program(prog: &Program, p: &HardwareParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |index: Option<usize>, message: String| out.push(Violation { index, message });

    let uop_cap = p.capacity(MemScope::Uop);
    let mut uop_sram: Vec<Option<MicroOp>> = vec![None; uop_cap];
    let mut finished_at: Option<usize> = None;

    for (idx, insn) in prog.instrs.iter().enumerate() {
        let at = Some(idx);
        if let Some(f) = finished_at {
            v(at, format!("instruction after FINISH at {f}"));
        }
        if let Err(e) = insn.check() {
            v(at, e.to_string());
            continue;
        }
        let module = insn.module();
        let d = insn.deps();
        if (d.pop_prev || d.push_prev) && !module.has_prev() {
            v(at, format!("{} module has no previous stage to exchange tokens with", module.name()));
        }
        if (d.pop_next || d.push_next) && !module.has_next() {
            v(at, format!("{} module has no next stage to exchange tokens with", module.name()));
        }
        match insn {
            Instruction::Load(m) => {
                if m.is_noop() {
                    continue;
                }
                let cap = p.capacity(m.scope);
                let end = m.sram_base as usize + m.sram_extent();
                if end > cap {
                    v(at, format!(
                        "LOAD {} writes SRAM [{}, {end}) beyond capacity {cap}",
                        m.scope.name(),
                        m.sram_base
                    ));
                    continue;
                }
                if m.scope == MemScope::Uop {
                    let last = m.dram_base as usize
                        + (m.y_size as usize - 1) * m.x_stride as usize
                        + m.x_size as usize;
                    if last > prog.uops.len() {
                        v(at, format!(
                            "UOP load reads micro-ops up to {last} but the program has {}",
                            prog.uops.len()
                        ));
                        continue;
                    }
                    let row = m.sram_row();
                    let base = m.sram_base as usize;
                    for e in &mut uop_sram[base..end] {
                        *e = Some(MicroOp::default());
                    }
                    for r in 0..m.y_size as usize {
                        let src = m.dram_base as usize + r * m.x_stride as usize;
                        let dst = base + (m.y_pad_top as usize + r) * row + m.x_pad_left as usize;
                        for c in 0..m.x_size as usize {
                            uop_sram[dst + c] = Some(prog.uops[src + c]);
                        }
                    }
                }
            }
            Instruction::Store(m) => {
                if m.is_noop() {
                    continue;
                }
                let cap = p.capacity(MemScope::Out);
                let end = m.sram_base as usize + m.moved_tiles();
                if end > cap {
                    v(at, format!(
                        "STORE reads SRAM [{}, {end}) beyond capacity {cap}",
                        m.sram_base
                    ));
                }
            }
            Instruction::Gemm(_) | Instruction::Alu(_) => {
                let (bgn, end) = insn.uop_range().unwrap();
                if end as usize > uop_cap {
                    v(at, format!("uop range [{bgn}, {end}) exceeds micro-op buffer {uop_cap}"));
                    continue;
                }
                let mut missing = false;
                for k in bgn..end {
                    let Some(u) = uop_sram[k as usize] else {
                        missing = true;
                        break;
                    };
                    for msg in check_uop(insn, &u, p) {
                        v(at, msg);
                    }
                }
                if missing {
                    v(at, format!("uop range [{bgn}, {end}) references entries never loaded"));
                }
            }
            Instruction::Finish(_) => {
                if finished_at.is_none() {
                    finished_at = Some(idx);
                }
            }
        }
    }
    if finished_at.is_none() {
        v(None, "missing FINISH".to_string());
    }
    out
}

fn check_uop(insn: &Instruction, u: &MicroOp, p: &HardwareParams) -> Vec<String> {
    let mut msgs = Vec::new();
    let acc_cap = p.capacity(MemScope::Acc);
    let mut bound = |what: &str, max: usize, cap: usize| {
        if max >= cap {
            msgs.push(format!("{what} index reaches {max} but capacity is {cap}"));
        }
    };
    match insn {
        Instruction::Gemm(g) => {
            bound(
                "accumulator",
                max_index(u.acc_idx, g.iter_out, g.dst_factor_out, g.iter_in, g.dst_factor_in),
                acc_cap,
            );
            if !g.reset {
                bound(
                    "input",
                    max_index(u.inp_idx, g.iter_out, g.src_factor_out, g.iter_in, g.src_factor_in),
                    p.capacity(MemScope::Inp),
                );
                bound(
                    "weight",
                    max_index(u.wgt_idx, g.iter_out, g.wgt_factor_out, g.iter_in, g.wgt_factor_in),
                    p.capacity(MemScope::Wgt),
                );
            }
        }
        Instruction::Alu(a) => {
            bound(
                "accumulator",
                max_index(u.acc_idx, a.iter_out, a.dst_factor_out, a.iter_in, a.dst_factor_in),
                acc_cap,
            );
            if !a.reset && !a.use_imm {
                bound(
                    "ALU source",
                    max_index(u.inp_idx, a.iter_out, a.src_factor_out, a.iter_in, a.src_factor_in),
                    acc_cap,
                );
            }
        }
        _ => {}
    }
    msgs
}
