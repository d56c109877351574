//! Functional semantics of the individual task instructions.

use crate::config::{HardwareParams, MemScope};
use crate::isa::{AluInsn, GemmInsn, MemInsn, MicroOp};

use super::{Dram, SimError, TimingModel};

/// Sign-extends the low `bits` bits of `v`.
#[inline]
pub fn wrap_bits(v: i64, bits: u32) -> i32 {
    let sh = 64 - bits;
    ((v << sh) >> sh) as i32
}

/// One on-chip buffer of integer tiles, stored widened to i32.
#[derive(Debug, Clone)]
pub struct SramBuffer {
    scope: MemScope,
    tile_elems: usize,
    bits: u32,
    data: Vec<i32>,
}

impl SramBuffer {
    pub fn new(p: &HardwareParams, scope: MemScope) -> Self {
        let tile_elems = p.tile_elems(scope);
        SramBuffer {
            scope,
            tile_elems,
            bits: p.elem_bits(scope),
            data: vec![0; p.capacity(scope) * tile_elems],
        }
    }

    pub fn scope(&self) -> MemScope {
        self.scope
    }

    pub fn capacity(&self) -> usize {
        self.data.len() / self.tile_elems
    }

    pub fn tile_elems(&self) -> usize {
        self.tile_elems
    }

    pub fn tile(&self, idx: usize) -> &[i32] {
        &self.data[idx * self.tile_elems..(idx + 1) * self.tile_elems]
    }

    pub fn tile_mut(&mut self, idx: usize) -> &mut [i32] {
        &mut self.data[idx * self.tile_elems..(idx + 1) * self.tile_elems]
    }

    /// Stores `v` wrapped to the element width of this buffer.
    pub fn set(&mut self, tile: usize, elem: usize, v: i64) {
        self.data[tile * self.tile_elems + elem] = wrap_bits(v, self.bits);
    }
}

/// The complete on-chip state.
#[derive(Debug, Clone)]
pub struct Sram {
    pub uop: Vec<MicroOp>,
    pub inp: SramBuffer,
    pub wgt: SramBuffer,
    pub acc: SramBuffer,
}

impl Sram {
    pub fn new(p: &HardwareParams) -> Self {
        Sram {
            uop: vec![MicroOp::default(); p.capacity(MemScope::Uop)],
            inp: SramBuffer::new(p, MemScope::Inp),
            wgt: SramBuffer::new(p, MemScope::Wgt),
            acc: SramBuffer::new(p, MemScope::Acc),
        }
    }

    fn buffer_mut(&mut self, scope: MemScope) -> &mut SramBuffer {
        match scope {
            MemScope::Inp => &mut self.inp,
            MemScope::Wgt => &mut self.wgt,
            _ => &mut self.acc,
        }
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// DMA cost: fixed latency plus bandwidth-limited transfer.
pub fn dma_cycles(insn: &MemInsn, p: &HardwareParams, t: &TimingModel) -> u64 {
    let bytes = insn.moved_tiles() as u64 * p.dram_tile_bytes(insn.scope) as u64;
    t.dram_latency_cycles + ceil_div(bytes, t.dram_bytes_per_cycle)
}

pub fn gemm_cycles(g: &GemmInsn, t: &TimingModel) -> u64 {
    let n = g.iter_out as u64 * g.iter_in as u64 * (g.uop_end - g.uop_bgn) as u64;
    ceil_div(n, t.gemm_tiles_per_cycle)
}

pub fn alu_cycles(a: &AluInsn, p: &HardwareParams) -> u64 {
    a.iter_out as u64 * a.iter_in as u64 * (a.uop_end - a.uop_bgn) as u64 * TimingModel::alu_tile_cycles(p)
}

fn oob(index: usize, what: String) -> SimError {
    SimError::OutOfBounds { index, what }
}

fn dram_tile_offset(insn: &MemInsn, p: &HardwareParams, scope: MemScope, r: usize, c: usize) -> usize {
    (insn.dram_base as usize + r * insn.x_stride as usize + c) * p.dram_tile_bytes(scope)
}

/// Executes a LOAD: 2D strided copy from DRAM with zero padding. `uop_table`
/// is the program's micro-op table, which UOP loads index instead of DRAM.
pub fn exec_load(
    index: usize,
    insn: &MemInsn,
    dram: &Dram,
    sram: &mut Sram,
    uop_table: &[MicroOp],
    p: &HardwareParams,
    functional: bool,
) -> Result<(), SimError> {
    if insn.is_noop() {
        return Ok(());
    }
    let base = insn.sram_base as usize;
    let row = insn.sram_row();
    let extent = insn.sram_extent();
    if insn.scope == MemScope::Uop {
        if base + extent > sram.uop.len() {
            return Err(oob(index, format!("UOP SRAM [{base}, {})", base + extent)));
        }
        let last = insn.dram_base as usize
            + (insn.y_size as usize - 1) * insn.x_stride as usize
            + insn.x_size as usize;
        if last > uop_table.len() {
            return Err(oob(index, format!("micro-op table entry {}", last - 1)));
        }
        sram.uop[base..base + extent].fill(MicroOp::default());
        for r in 0..insn.y_size as usize {
            let src = insn.dram_base as usize + r * insn.x_stride as usize;
            let dst = base + (insn.y_pad_top as usize + r) * row + insn.x_pad_left as usize;
            sram.uop[dst..dst + insn.x_size as usize]
                .copy_from_slice(&uop_table[src..src + insn.x_size as usize]);
        }
        return Ok(());
    }

    let scope = insn.scope;
    let buf = sram.buffer_mut(scope);
    if base + extent > buf.capacity() {
        return Err(oob(index, format!("{} SRAM [{base}, {})", scope.name(), base + extent)));
    }
    let tile_bytes = p.dram_tile_bytes(scope);
    let last = dram_tile_offset(insn, p, scope, insn.y_size as usize - 1, insn.x_size as usize);
    if last > dram.len() {
        return Err(oob(index, format!("DRAM byte {}", last - 1)));
    }
    if !functional {
        return Ok(());
    }
    for t in base..base + extent {
        buf.tile_mut(t).fill(0);
    }
    let eb = p.dram_elem_bytes(scope);
    let bytes = dram.bytes();
    for r in 0..insn.y_size as usize {
        let dst_row = base + (insn.y_pad_top as usize + r) * row + insn.x_pad_left as usize;
        for c in 0..insn.x_size as usize {
            let off = dram_tile_offset(insn, p, scope, r, c);
            let src = &bytes[off..off + tile_bytes];
            let dst = dst_row + c;
            for e in 0..buf.tile_elems() {
                let v = read_elem(&src[e * eb..(e + 1) * eb]);
                buf.set(dst, e, v);
            }
        }
    }
    Ok(())
}

/// Little-endian signed integer of 1..=4 bytes.
fn read_elem(b: &[u8]) -> i64 {
    let mut v: i64 = 0;
    for (i, &x) in b.iter().enumerate() {
        v |= (x as i64) << (8 * i);
    }
    let sh = 64 - 8 * b.len() as u32;
    (v << sh) >> sh
}

/// Executes a STORE: accumulator tiles narrowed to the input width and
/// written as one byte per element.
pub fn exec_store(
    index: usize,
    insn: &MemInsn,
    dram: &mut Dram,
    sram: &Sram,
    p: &HardwareParams,
    functional: bool,
) -> Result<(), SimError> {
    if insn.is_noop() {
        return Ok(());
    }
    let base = insn.sram_base as usize;
    let end = base + insn.moved_tiles();
    if end > sram.acc.capacity() {
        return Err(oob(index, format!("OUT SRAM [{base}, {end})")));
    }
    let tile_bytes = p.dram_tile_bytes(MemScope::Out);
    let last = dram_tile_offset(insn, p, MemScope::Out, insn.y_size as usize - 1, insn.x_size as usize);
    if last > dram.len() {
        return Err(oob(index, format!("DRAM byte {}", last - 1)));
    }
    if !functional {
        return Ok(());
    }
    let bytes = dram.bytes_mut();
    for r in 0..insn.y_size as usize {
        for c in 0..insn.x_size as usize {
            let src = sram.acc.tile(base + r * insn.x_size as usize + c);
            let off = dram_tile_offset(insn, p, MemScope::Out, r, c);
            for (d, &v) in bytes[off..off + tile_bytes].iter_mut().zip(src) {
                *d = wrap_bits(v as i64, p.inp_bits) as u8;
            }
        }
    }
    Ok(())
}

#[inline]
fn affine(base: u16, i0: usize, f0: u16, i1: usize, f1: u16) -> usize {
    base as usize + i0 * f0 as usize + i1 * f1 as usize
}

/// Tile indices `(acc, inp, wgt)` touched by every step of a GEMM, in
/// execution order.
pub fn gemm_accesses<'a>(g: &'a GemmInsn, uops: &'a [MicroOp]) -> impl Iterator<Item = (usize, usize, usize)> + 'a {
    let n = (g.uop_end - g.uop_bgn) as usize;
    (0..g.iter_out as usize).flat_map(move |i0| {
        (0..g.iter_in as usize).flat_map(move |i1| {
            (0..n).map(move |k| {
                let u = uops[g.uop_bgn as usize + k];
                (
                    affine(u.acc_idx, i0, g.dst_factor_out, i1, g.dst_factor_in),
                    affine(u.inp_idx, i0, g.src_factor_out, i1, g.src_factor_in),
                    affine(u.wgt_idx, i0, g.wgt_factor_out, i1, g.wgt_factor_in),
                )
            })
        })
    })
}

/// Tile indices `(dst, src)` touched by every step of an ALU kernel.
pub fn alu_accesses<'a>(a: &'a AluInsn, uops: &'a [MicroOp]) -> impl Iterator<Item = (usize, usize)> + 'a {
    let n = (a.uop_end - a.uop_bgn) as usize;
    (0..a.iter_out as usize).flat_map(move |i0| {
        (0..a.iter_in as usize).flat_map(move |i1| {
            (0..n).map(move |k| {
                let u = uops[a.uop_bgn as usize + k];
                (
                    affine(u.acc_idx, i0, a.dst_factor_out, i1, a.dst_factor_in),
                    affine(u.inp_idx, i0, a.src_factor_out, i1, a.src_factor_in),
                )
            })
        })
    })
}

fn check_uop_range(index: usize, bgn: u16, end: u16, sram: &Sram) -> Result<(), SimError> {
    if end as usize > sram.uop.len() || bgn >= end {
        return Err(oob(index, format!("micro-op range [{bgn}, {end})")));
    }
    Ok(())
}

/// Executes a GEMM kernel: `acc[b][o] += sum_i inp[b][i] * wgt[o][i]` per
/// micro-op step, or zeroes the destination tiles when `reset` is set.
pub fn exec_gemm(index: usize, g: &GemmInsn, sram: &mut Sram, p: &HardwareParams, functional: bool) -> Result<(), SimError> {
    check_uop_range(index, g.uop_bgn, g.uop_end, sram)?;
    let (acc_cap, inp_cap, wgt_cap) = (sram.acc.capacity(), sram.inp.capacity(), sram.wgt.capacity());
    let (batch, bi, bo) = (p.batch, p.block_in, p.block_out);
    let Sram { uop, inp, wgt, acc } = sram;
    for (a, i, w) in gemm_accesses(g, uop) {
        if a >= acc_cap {
            return Err(oob(index, format!("accumulator tile {a}")));
        }
        if g.reset {
            if functional {
                acc.tile_mut(a).fill(0);
            }
            continue;
        }
        if i >= inp_cap {
            return Err(oob(index, format!("input tile {i}")));
        }
        if w >= wgt_cap {
            return Err(oob(index, format!("weight tile {w}")));
        }
        if !functional {
            continue;
        }
        let it = inp.tile(i);
        let wt = wgt.tile(w);
        for b in 0..batch {
            let x = &it[b * bi..(b + 1) * bi];
            for o in 0..bo {
                let k = &wt[o * bi..(o + 1) * bi];
                let dot: i64 = x.iter().zip(k).map(|(&u, &v)| u as i64 * v as i64).sum();
                let cur = acc.tile(a)[b * bo + o] as i64;
                acc.set(a, b * bo + o, cur + dot);
            }
        }
    }
    Ok(())
}

/// Executes an ALU kernel over accumulator tiles.
pub fn exec_alu(index: usize, a: &AluInsn, sram: &mut Sram, p: &HardwareParams, functional: bool) -> Result<(), SimError> {
    check_uop_range(index, a.uop_bgn, a.uop_end, sram)?;
    let cap = sram.acc.capacity();
    let n = p.tile_elems(MemScope::Acc);
    let Sram { uop, acc, .. } = sram;
    let mut src_tile = vec![0i32; n];
    for (d, s) in alu_accesses(a, uop) {
        if d >= cap {
            return Err(oob(index, format!("ALU destination tile {d}")));
        }
        if a.reset {
            if functional {
                acc.tile_mut(d).fill(0);
            }
            continue;
        }
        if !a.use_imm && s >= cap {
            return Err(oob(index, format!("ALU source tile {s}")));
        }
        if !functional {
            continue;
        }
        if a.use_imm {
            src_tile.fill(a.imm as i32);
        } else {
            src_tile.copy_from_slice(acc.tile(s));
        }
        for e in 0..n {
            let v = a.op.apply(acc.tile(d)[e], src_tile[e]);
            acc.set(d, e, v as i64);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_sign_extension() {
        assert_eq!(wrap_bits(127, 8), 127);
        assert_eq!(wrap_bits(128, 8), -128);
        assert_eq!(wrap_bits(-1, 4), -1);
        assert_eq!(wrap_bits(8, 4), -8);
        assert_eq!(wrap_bits(i32::MAX as i64 + 1, 32), i32::MIN);
        assert_eq!(read_elem(&[0xff, 0xff, 0xff, 0x7f]), i32::MAX as i64);
        assert_eq!(read_elem(&[0x80]), -128);
    }

    #[test]
    fn affine_visit_order() {
        let g = GemmInsn {
            deps: Default::default(),
            reset: true,
            uop_bgn: 0,
            uop_end: 1,
            iter_out: 2,
            iter_in: 3,
            dst_factor_out: 3,
            dst_factor_in: 1,
            src_factor_out: 0,
            src_factor_in: 0,
            wgt_factor_out: 0,
            wgt_factor_in: 0,
        };
        let uops = [MicroOp::default()];
        let acc: Vec<usize> = gemm_accesses(&g, &uops).map(|t| t.0).collect();
        assert_eq!(acc, vec![0, 1, 2, 3, 4, 5]);
    }
}
