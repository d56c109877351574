use std::collections::HashMap;

use serde::Serialize;

use super::layout::{pack_bias, pack_layout, unpack_layout, DramLayout, PackedTensor, Role};
use super::schedule::{axis_tiles, check_schedule, AxisTile, Footprint};
use super::{act_range, CompileError, OpInputs, OpKind, OperatorSpec, Schedule};
use crate::config::{HardwareParams, MemScope};
use crate::isa::{AluInsn, AluOp, DepFlags, GemmInsn, Instruction, MemInsn, MicroOp};
use crate::refops::Tensor;
use crate::sim::Dram;

/// An instruction of the abstract stream. Kernel launches carry the id of
/// their micro-kernel and a kernel-relative uop range `[0, len)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AbsInsn {
    pub insn: Instruction,
    pub kernel: Option<usize>,
}

/// Loads of one reduction step followed by the kernels consuming them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Step {
    pub loads: Vec<AbsInsn>,
    pub compute: Vec<AbsInsn>,
}

/// Everything needed to produce one output tile.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Block {
    /// Execution context (virtual thread) owning this block's SRAM half.
    pub ctx: usize,
    pub reset: Vec<AbsInsn>,
    pub steps: Vec<Step>,
    pub epilogue: Vec<AbsInsn>,
    pub stores: Vec<AbsInsn>,
}

impl Block {
    pub fn instructions(&self) -> impl Iterator<Item = &AbsInsn> {
        self.reset
            .iter()
            .chain(self.steps.iter().flat_map(|s| s.loads.iter().chain(&s.compute)))
            .chain(&self.epilogue)
            .chain(&self.stores)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct KernelStats {
    pub blocks: usize,
    pub instructions: usize,
    pub loads: usize,
    pub stores: usize,
    pub gemm_insns: usize,
    pub alu_insns: usize,
    pub kernels: usize,
    /// Micro-ops over all distinct kernels.
    pub kernel_uops: usize,
    /// Micro-ops referenced by non-reset GEMM launches.
    pub gemm_uops: u64,
    /// Multiplying GEMM intrinsic executions.
    pub gemm_steps: u64,
    pub macs: u64,
}

/// Serializable description of a lowered kernel, written next to its program.
#[derive(Debug, Clone, Serialize)]
pub struct Sidecar<'a> {
    pub spec: &'a OperatorSpec,
    pub schedule: &'a Schedule,
    pub params: &'a HardwareParams,
    pub layout: &'a DramLayout,
    pub footprint: &'a Footprint,
    pub stats: KernelStats,
    pub output_region: &'static str,
    pub kernel_lengths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LoweredKernel {
    pub spec: OperatorSpec,
    pub schedule: Schedule,
    pub params: HardwareParams,
    pub blocks: Vec<Block>,
    pub kernels: Vec<Vec<MicroOp>>,
    pub layout: DramLayout,
    pub footprint: Footprint,
}

impl LoweredKernel {
    pub fn stats(&self) -> KernelStats {
        let mut s = KernelStats {
            blocks: self.blocks.len(),
            kernels: self.kernels.len(),
            kernel_uops: self.kernels.iter().map(Vec::len).sum(),
            ..Default::default()
        };
        for a in self.blocks.iter().flat_map(Block::instructions) {
            s.instructions += 1;
            match &a.insn {
                Instruction::Load(_) => s.loads += 1,
                Instruction::Store(_) => s.stores += 1,
                Instruction::Gemm(g) => {
                    s.gemm_insns += 1;
                    if !g.reset {
                        let len = (g.uop_end - g.uop_bgn) as u64;
                        s.gemm_uops += len;
                        s.gemm_steps += len * g.iter_out as u64 * g.iter_in as u64;
                    }
                }
                Instruction::Alu(_) => s.alu_insns += 1,
                Instruction::Finish(_) => {}
            }
        }
        s.macs = s.gemm_steps * self.params.intrinsic_macs();
        s
    }

    pub fn sidecar(&self) -> Sidecar<'_> {
        Sidecar {
            spec: &self.spec,
            schedule: &self.schedule,
            params: &self.params,
            layout: &self.layout,
            footprint: &self.footprint,
            stats: self.stats(),
            output_region: "out",
            kernel_lengths: self.kernels.iter().map(Vec::len).collect(),
        }
    }

    /// A DRAM image holding the packed inputs.
    pub fn dram_image(&self, inputs: &OpInputs) -> Result<Dram, CompileError> {
        self.spec.check_inputs(inputs, &self.params)?;
        let p = &self.params;
        let mut dram = Dram::new(self.layout.total_bytes);
        let mut put = |name: &str, bytes: &[u8]| {
            let r = self.layout.get(name).expect("region exists");
            debug_assert_eq!(r.bytes, bytes.len());
            dram.bytes_mut()[r.offset..r.offset + bytes.len()].copy_from_slice(bytes);
        };
        match self.spec.kind {
            OpKind::Elementwise => {
                put("a", &pack_layout(&inputs.x, p, Role::Acc).bytes);
                if let Some(y) = &inputs.y {
                    put("b", &pack_layout(y, p, Role::Acc).bytes);
                }
            }
            OpKind::Maxpool => put("x", &pack_layout(&inputs.x, p, Role::Acc).bytes),
            _ => {
                put("inp", &pack_layout(&inputs.x, p, Role::Inp).bytes);
                put("wgt", &pack_layout(&self.packed_weights(inputs), p, Role::Wgt).bytes);
                if self.spec.epilogue.bias {
                    put("bias", &pack_bias(inputs.bias.as_ref().unwrap(), p));
                }
            }
        }
        Ok(dram)
    }

    /// Weights as the kernel expects them: transposed convolutions use the
    /// `[O, I, KH, KW]` tensor directly (taps are selected by index).
    fn packed_weights(&self, inputs: &OpInputs) -> Tensor<i32> {
        inputs.w.clone().expect("checked")
    }

    /// Reads and unpacks the operator output from DRAM.
    pub fn read_output(&self, dram: &Dram) -> Result<Tensor<i32>, CompileError> {
        let p = &self.params;
        let r = self.layout.get("out").expect("output region");
        let dims = self.spec.out_dims()?;
        let d4 = match dims.len() {
            2 => [dims[0], dims[1], 1, 1],
            _ => [dims[0], dims[1], dims[2], dims[3]],
        };
        let pk = PackedTensor {
            role: Role::Out,
            dims: d4,
            padded: [d4[0].next_multiple_of(p.batch), d4[1].next_multiple_of(p.block_out), d4[2], d4[3]],
            bytes: dram.bytes()[r.offset..r.offset + r.bytes].to_vec(),
        };
        Ok(unpack_layout(&pk, p, dims.len()))
    }
}

/// Interns micro-kernels by content.
#[derive(Default)]
struct Kernels {
    list: Vec<Vec<MicroOp>>,
    index: HashMap<Vec<MicroOp>, usize>,
}

impl Kernels {
    fn intern(&mut self, uops: Vec<MicroOp>) -> usize {
        if let Some(&id) = self.index.get(&uops) {
            return id;
        }
        let id = self.list.len();
        self.index.insert(uops.clone(), id);
        self.list.push(uops);
        id
    }
}

/// Two-level loop nest of a kernel launch. A factor is irrelevant (and
/// encoded as 0) when its loop has a single iteration.
#[derive(Debug, Clone, Copy, Default)]
struct Nest {
    iter_out: usize,
    iter_in: usize,
    dst: (usize, usize),
    src: (usize, usize),
    wgt: (usize, usize),
}

impl Nest {
    fn over(iter_out: usize, iter_in: usize) -> Self {
        Nest {
            iter_out,
            iter_in,
            ..Default::default()
        }
    }

    fn factors(&self, f: (usize, usize)) -> (u16, u16) {
        let o = if self.iter_out > 1 { f.0 } else { 0 };
        let i = if self.iter_in > 1 { f.1 } else { 0 };
        (clamp16(o), clamp16(i))
    }
}

/// Saturating conversion; oversized values fail the instruction width check.
fn clamp16(v: usize) -> u16 {
    v.min(u16::MAX as usize) as u16
}

fn uop(acc: usize, inp: usize, wgt: usize) -> MicroOp {
    MicroOp::new(clamp16(acc), clamp16(inp), clamp16(wgt))
}

struct Emitter<'a> {
    p: &'a HardwareParams,
    kernels: Kernels,
}

impl Emitter<'_> {
    fn gemm(&mut self, reset: bool, uops: Vec<MicroOp>, n: Nest) -> AbsInsn {
        let len = uops.len();
        let id = self.kernels.intern(uops);
        let (dst_factor_out, dst_factor_in) = n.factors(n.dst);
        let (src_factor_out, src_factor_in) = n.factors(n.src);
        let (wgt_factor_out, wgt_factor_in) = n.factors(n.wgt);
        AbsInsn {
            insn: Instruction::Gemm(GemmInsn {
                deps: DepFlags::NONE,
                reset,
                uop_bgn: 0,
                uop_end: clamp16(len),
                iter_out: clamp16(n.iter_out),
                iter_in: clamp16(n.iter_in),
                dst_factor_out,
                dst_factor_in,
                src_factor_out,
                src_factor_in,
                wgt_factor_out,
                wgt_factor_in,
            }),
            kernel: Some(id),
        }
    }

    fn alu(&mut self, op: AluOp, imm: Option<i32>, uops: Vec<MicroOp>, n: Nest) -> AbsInsn {
        let len = uops.len();
        let id = self.kernels.intern(uops);
        let (dst_factor_out, dst_factor_in) = n.factors(n.dst);
        let (src_factor_out, src_factor_in) = n.factors(n.src);
        AbsInsn {
            insn: Instruction::Alu(AluInsn {
                deps: DepFlags::NONE,
                reset: false,
                uop_bgn: 0,
                uop_end: clamp16(len),
                iter_out: clamp16(n.iter_out),
                iter_in: clamp16(n.iter_in),
                dst_factor_out,
                dst_factor_in,
                src_factor_out,
                src_factor_in,
                op,
                use_imm: imm.is_some(),
                imm: imm.unwrap_or(0).clamp(i16::MIN as i32, i16::MAX as i32) as i16,
            }),
            kernel: Some(id),
        }
    }

    /// Zeroes `tiles` consecutive groups of `per` accumulator tiles.
    fn reset(&mut self, acc_base: usize, groups: usize, per: usize) -> AbsInsn {
        let n = Nest {
            dst: (per, 1),
            ..Nest::over(groups, per)
        };
        self.gemm(true, vec![uop(acc_base, 0, 0)], n)
    }

    /// Bias add, shift, ReLU and clamp over `groups x per` output tiles.
    fn epilogue(&mut self, spec: &OperatorSpec, acc_base: usize, groups: usize, per: usize, bias_base: Option<usize>) -> Vec<AbsInsn> {
        let e = &spec.epilogue;
        let dst = Nest {
            dst: (per, 1),
            ..Nest::over(groups, per)
        };
        let imm_uops = vec![uop(acc_base, 0, 0)];
        let mut out = Vec::new();
        if let Some(b) = bias_base {
            let n = Nest { src: (1, 0), ..dst };
            out.push(self.alu(AluOp::Add, None, vec![uop(acc_base, b, 0)], n));
        }
        if e.shift != 0 {
            out.push(self.alu(AluOp::Shr, Some(e.shift as i32), imm_uops.clone(), dst));
        }
        let (lo, hi) = act_range(self.p.inp_bits);
        if e.relu {
            out.push(self.alu(AluOp::Max, Some(0), imm_uops.clone(), dst));
        }
        out.push(self.alu(AluOp::Min, Some(hi), imm_uops.clone(), dst));
        if !e.relu {
            out.push(self.alu(AluOp::Max, Some(lo), imm_uops, dst));
        }
        out
    }
}

fn checked(v: usize, what: &str) -> Result<u16, CompileError> {
    u16::try_from(v).map_err(|_| CompileError::Infeasible(format!("{what} = {v} exceeds 16 bits")))
}

#[allow(clippy::too_many_arguments)]
fn mem(
    scope: MemScope,
    sram_base: usize,
    dram_base: usize,
    y_size: usize,
    x_size: usize,
    x_stride: usize,
    pads: [usize; 4],
) -> Result<AbsInsn, CompileError> {
    let pad = |v: usize| u8::try_from(v).map_err(|_| CompileError::Infeasible(format!("padding {v}")));
    let m = MemInsn {
        deps: DepFlags::NONE,
        scope,
        sram_base: checked(sram_base, "sram_base")?,
        dram_base: u32::try_from(dram_base).map_err(|_| CompileError::Infeasible("dram_base exceeds 32 bits".into()))?,
        y_size: checked(y_size, "y_size")?,
        x_size: checked(x_size, "x_size")?,
        x_stride: checked(x_stride, "x_stride")?,
        y_pad_top: pad(pads[0])?,
        y_pad_bottom: pad(pads[1])?,
        x_pad_left: pad(pads[2])?,
        x_pad_right: pad(pads[3])?,
    };
    let insn = if scope == MemScope::Out {
        Instruction::Store(m)
    } else {
        Instruction::Load(m)
    };
    Ok(AbsInsn { insn, kernel: None })
}

/// In-bounds part of an input range `[lo, lo+len)` over an axis of `extent`:
/// `(start, size, pad_before, pad_after)`.
fn clip(lo: isize, len: usize, extent: usize) -> (usize, usize, usize, usize) {
    let hi = lo + len as isize;
    let start = lo.max(0);
    let end = hi.min(extent as isize);
    (
        start as usize,
        (end - start).max(0) as usize,
        (start - lo) as usize,
        (hi - end).max(0) as usize,
    )
}

/// Lowers any supported operator.
pub fn lower(spec: &OperatorSpec, sched: &Schedule, p: &HardwareParams) -> Result<LoweredKernel, CompileError> {
    spec.check_mappable(p)?;
    let fp = check_schedule(spec, sched, p)?;
    let mut em = Emitter {
        p,
        kernels: Kernels::default(),
    };
    let (blocks, layout) = match spec.kind {
        OpKind::Elementwise => lower_elementwise(spec, sched, p, &fp, &mut em)?,
        OpKind::Maxpool => lower_maxpool(spec, sched, p, &fp, &mut em)?,
        _ => lower_conv(spec, sched, p, &fp, &mut em)?,
    };
    for a in blocks.iter().flat_map(Block::instructions) {
        a.insn
            .check()
            .map_err(|e| CompileError::Infeasible(format!("emitted instruction: {e}")))?;
    }
    for k in &em.kernels.list {
        for u in k {
            u.check()
                .map_err(|e| CompileError::Infeasible(format!("emitted micro-op: {e}")))?;
        }
    }
    Ok(LoweredKernel {
        spec: spec.clone(),
        schedule: *sched,
        params: p.clone(),
        blocks,
        kernels: em.kernels.list,
        layout,
        footprint: fp,
    })
}

/// Grouped convolution: only diagonal channel-block pairs are visited.
pub fn lower_grouped(spec: &OperatorSpec, sched: &Schedule, p: &HardwareParams) -> Result<LoweredKernel, CompileError> {
    if spec.kind != OpKind::GroupedConv2d {
        return Err(spec.invalid("lower_grouped expects grouped_conv2d"));
    }
    lower(spec, sched, p)
}

/// Transposed convolution as stride² phase sub-convolutions.
pub fn lower_transpose(spec: &OperatorSpec, sched: &Schedule, p: &HardwareParams) -> Result<LoweredKernel, CompileError> {
    if spec.kind != OpKind::Conv2dTranspose {
        return Err(spec.invalid("lower_transpose expects conv2d_transpose"));
    }
    lower(spec, sched, p)
}

fn lower_conv(
    spec: &OperatorSpec,
    s: &Schedule,
    p: &HardwareParams,
    fp: &Footprint,
    em: &mut Emitter<'_>,
) -> Result<(Vec<Block>, DramLayout), CompileError> {
    let (nb, ib, ob) = spec.blocks(p);
    let g = spec.groups;
    let (ibg, obg) = (ib / g, ob / g);
    let (oh, ow) = spec.out_hw()?;
    let (kh, kw) = (spec.kh, spec.kw);
    let khw = kh * kw;
    let transpose = spec.kind == OpKind::Conv2dTranspose;

    let mut layout = DramLayout::default();
    let inp_bytes = nb * p.batch * ib * p.block_in * spec.h * spec.w;
    let wgt_bytes = ob * p.block_out * ibg * p.block_in * khw;
    let inp_r = layout.add("inp", MemScope::Inp, inp_bytes, p).base_tile(p);
    let wgt_r = layout.add("wgt", MemScope::Wgt, wgt_bytes, p).base_tile(p);
    let bias_r = if spec.epilogue.bias {
        Some(layout.add("bias", MemScope::Acc, ob * p.dram_tile_bytes(MemScope::Acc), p).base_tile(p))
    } else {
        None
    };
    let out_r = layout
        .add("out", MemScope::Out, nb * ob * oh * ow * p.dram_tile_bytes(MemScope::Out), p)
        .base_tile(p);

    let ytiles = axis_tiles(transpose, oh, s.tile_h, kh, spec.stride, spec.pad);
    let xtiles = axis_tiles(transpose, ow, s.tile_w, kw, spec.stride, spec.pad);
    let mut blocks = Vec::new();
    for n in 0..nb {
        for grp in 0..g {
            for ot in (0..obg).step_by(s.tile_oc) {
                let to = s.tile_oc.min(obg - ot);
                for (y0, th, ay) in &ytiles {
                    for (x0, tw, ax) in &xtiles {
                        let ctx = blocks.len() % s.vthreads;
                        let inp_base = ctx * fp.inp;
                        let wgt_base = ctx * fp.wgt;
                        let acc_base = ctx * fp.acc;
                        let bias_base = acc_base + fp.acc_out;
                        let per = th * tw;
                        let mut b = Block {
                            ctx,
                            ..Default::default()
                        };
                        b.reset.push(em.reset(acc_base, to, per));
                        let (ys, yn, ypb, ypa) = clip(ay.in_lo, ay.in_len, spec.h);
                        let (xs, xn, xpb, xpa) = clip(ax.in_lo, ax.in_len, spec.w);
                        let (ih, iw) = (ay.in_len, ax.in_len);
                        for st in (0..ibg).step_by(s.tile_ic) {
                            let tic = s.tile_ic.min(ibg - st);
                            let mut step = Step::default();
                            if st == 0 {
                                if let Some(br) = bias_r {
                                    step.loads.push(mem(
                                        MemScope::Acc,
                                        bias_base,
                                        br + grp * obg + ot,
                                        1,
                                        to,
                                        to,
                                        [0; 4],
                                    )?);
                                }
                            }
                            for icl in 0..tic {
                                let cb = grp * ibg + st + icl;
                                step.loads.push(mem(
                                    MemScope::Inp,
                                    inp_base + icl * ih * iw,
                                    inp_r + ((n * ib + cb) * spec.h + ys) * spec.w + xs,
                                    yn,
                                    xn,
                                    spec.w,
                                    [ypb, ypa, xpb, xpa],
                                )?);
                            }
                            step.loads.push(mem(
                                MemScope::Wgt,
                                wgt_base,
                                wgt_r + ((grp * obg + ot) * ibg + st) * khw,
                                to,
                                tic * khw,
                                ibg * khw,
                                [0; 4],
                            )?);
                            for py in &ay.phases {
                                for px in &ax.phases {
                                    let (uops, nest) = if s.oc_unroll {
                                        let mut u = Vec::new();
                                        for obl in 0..to {
                                            for icl in 0..tic {
                                                for &(ky, iy) in &py.taps {
                                                    for &(kx, ix) in &px.taps {
                                                        u.push(uop(
                                                            acc_base + obl * per + py.out_off * tw + px.out_off,
                                                            inp_base + icl * ih * iw + iy * iw + ix,
                                                            wgt_base + (obl * tic + icl) * khw + ky * kw + kx,
                                                        ));
                                                    }
                                                }
                                            }
                                        }
                                        let n = Nest {
                                            dst: (py.out_step * tw, px.out_step),
                                            src: (py.in_step * iw, px.in_step),
                                            ..Nest::over(py.count, px.count)
                                        };
                                        (u, n)
                                    } else {
                                        let mut u = Vec::new();
                                        for tx in 0..px.count {
                                            for icl in 0..tic {
                                                for &(ky, iy) in &py.taps {
                                                    for &(kx, ix) in &px.taps {
                                                        u.push(uop(
                                                            acc_base + py.out_off * tw + px.out_off + tx * px.out_step,
                                                            inp_base + icl * ih * iw + iy * iw + ix + tx * px.in_step,
                                                            wgt_base + icl * khw + ky * kw + kx,
                                                        ));
                                                    }
                                                }
                                            }
                                        }
                                        let n = Nest {
                                            dst: (per, py.out_step * tw),
                                            src: (0, py.in_step * iw),
                                            wgt: (tic * khw, 0),
                                            ..Nest::over(to, py.count)
                                        };
                                        (u, n)
                                    };
                                    step.compute.push(em.gemm(false, uops, nest));
                                }
                            }
                            b.steps.push(step);
                        }
                        b.epilogue = em.epilogue(spec, acc_base, to, per, bias_r.map(|_| bias_base));
                        for obl in 0..to {
                            let obk = grp * obg + ot + obl;
                            b.stores.push(mem(
                                MemScope::Out,
                                acc_base + obl * per,
                                out_r + ((n * ob + obk) * oh + y0) * ow + x0,
                                *th,
                                *tw,
                                ow,
                                [0; 4],
                            )?);
                        }
                        blocks.push(b);
                    }
                }
            }
        }
    }
    Ok((blocks, layout))
}

fn lower_elementwise(
    spec: &OperatorSpec,
    s: &Schedule,
    p: &HardwareParams,
    fp: &Footprint,
    em: &mut Emitter<'_>,
) -> Result<(Vec<Block>, DramLayout), CompileError> {
    let (nb, _, cb) = spec.blocks(p);
    let (h, w) = (spec.h, spec.w);
    let acc_tile = p.dram_tile_bytes(MemScope::Acc);
    let mut layout = DramLayout::default();
    let a_r = layout.add("a", MemScope::Acc, nb * cb * h * w * acc_tile, p).base_tile(p);
    let b_r = if spec.is_binary() {
        Some(layout.add("b", MemScope::Acc, nb * cb * h * w * acc_tile, p).base_tile(p))
    } else {
        None
    };
    let out_r = layout
        .add("out", MemScope::Out, nb * cb * h * w * p.dram_tile_bytes(MemScope::Out), p)
        .base_tile(p);
    let op = spec.alu_op.expect("validated");
    let mut blocks = Vec::new();
    for n in 0..nb {
        for ct in (0..cb).step_by(s.tile_oc) {
            let to = s.tile_oc.min(cb - ct);
            for y0 in (0..h).step_by(s.tile_h) {
                let th = s.tile_h.min(h - y0);
                for x0 in (0..w).step_by(s.tile_w) {
                    let tw = s.tile_w.min(w - x0);
                    let ctx = blocks.len() % s.vthreads;
                    let per = th * tw;
                    let out_base = ctx * fp.acc;
                    let a_base = out_base + fp.acc_out;
                    let b_base = a_base + fp.acc_out;
                    let mut b = Block {
                        ctx,
                        ..Default::default()
                    };
                    b.reset.push(em.reset(out_base, to, per));
                    let mut step = Step::default();
                    for cl in 0..to {
                        let src = ((n * cb + ct + cl) * h + y0) * w + x0;
                        step.loads
                            .push(mem(MemScope::Acc, a_base + cl * per, a_r + src, th, tw, w, [0; 4])?);
                        if let Some(br) = b_r {
                            step.loads
                                .push(mem(MemScope::Acc, b_base + cl * per, br + src, th, tw, w, [0; 4])?);
                        }
                    }
                    let nest = Nest {
                        dst: (per, 1),
                        src: (per, 1),
                        ..Nest::over(to, per)
                    };
                    step.compute
                        .push(em.alu(AluOp::Add, None, vec![uop(out_base, a_base, 0)], nest));
                    step.compute.push(match spec.imm {
                        Some(imm) => em.alu(op, Some(imm as i32), vec![uop(out_base, 0, 0)], nest),
                        None => em.alu(op, None, vec![uop(out_base, b_base, 0)], nest),
                    });
                    b.steps.push(step);
                    b.epilogue = em.epilogue(spec, out_base, to, per, None);
                    for cl in 0..to {
                        b.stores.push(mem(
                            MemScope::Out,
                            out_base + cl * per,
                            out_r + ((n * cb + ct + cl) * h + y0) * w + x0,
                            th,
                            tw,
                            w,
                            [0; 4],
                        )?);
                    }
                    blocks.push(b);
                }
            }
        }
    }
    Ok((blocks, layout))
}

fn lower_maxpool(
    spec: &OperatorSpec,
    s: &Schedule,
    p: &HardwareParams,
    fp: &Footprint,
    em: &mut Emitter<'_>,
) -> Result<(Vec<Block>, DramLayout), CompileError> {
    let (nb, _, cb) = spec.blocks(p);
    let (h, w) = (spec.h, spec.w);
    let (oh, ow) = spec.out_hw()?;
    let (k, st) = (spec.kh, spec.stride);
    let mut layout = DramLayout::default();
    let x_r = layout
        .add("x", MemScope::Acc, nb * cb * h * w * p.dram_tile_bytes(MemScope::Acc), p)
        .base_tile(p);
    let out_r = layout
        .add("out", MemScope::Out, nb * cb * oh * ow * p.dram_tile_bytes(MemScope::Out), p)
        .base_tile(p);
    let ytiles: Vec<(usize, usize, AxisTile)> = axis_tiles(false, oh, s.tile_h, k, st, 0);
    let xtiles: Vec<(usize, usize, AxisTile)> = axis_tiles(false, ow, s.tile_w, k, st, 0);
    let mut blocks = Vec::new();
    for n in 0..nb {
        for ct in (0..cb).step_by(s.tile_oc) {
            let to = s.tile_oc.min(cb - ct);
            for (y0, th, ay) in &ytiles {
                for (x0, tw, ax) in &xtiles {
                    let ctx = blocks.len() % s.vthreads;
                    let per = th * tw;
                    let (ih, iw) = (ay.in_len, ax.in_len);
                    let out_base = ctx * fp.acc;
                    let x_base = out_base + fp.acc_out;
                    let mut b = Block {
                        ctx,
                        ..Default::default()
                    };
                    b.reset.push(em.reset(out_base, to, per));
                    let mut step = Step::default();
                    for cl in 0..to {
                        let src = ((n * cb + ct + cl) * h + y0 * st) * w + x0 * st;
                        step.loads.push(mem(
                            MemScope::Acc,
                            x_base + cl * ih * iw,
                            x_r + src,
                            ih,
                            iw,
                            w,
                            [0; 4],
                        )?);
                    }
                    let nest = Nest {
                        dst: (*tw, 1),
                        src: (st * iw, st),
                        ..Nest::over(*th, *tw)
                    };
                    let first: Vec<MicroOp> = (0..to)
                        .map(|cl| uop(out_base + cl * per, x_base + cl * ih * iw, 0))
                        .collect();
                    step.compute.push(em.alu(AluOp::Add, None, first, nest));
                    let mut rest = Vec::new();
                    for cl in 0..to {
                        for ky in 0..k {
                            for kx in 0..k {
                                if (ky, kx) != (0, 0) {
                                    rest.push(uop(out_base + cl * per, x_base + cl * ih * iw + ky * iw + kx, 0));
                                }
                            }
                        }
                    }
                    if !rest.is_empty() {
                        step.compute.push(em.alu(AluOp::Max, None, rest, nest));
                    }
                    b.steps.push(step);
                    b.epilogue = em.epilogue(spec, out_base, to, per, None);
                    for cl in 0..to {
                        b.stores.push(mem(
                            MemScope::Out,
                            out_base + cl * per,
                            out_r + ((n * cb + ct + cl) * oh + y0) * ow + x0,
                            *th,
                            *tw,
                            ow,
                            [0; 4],
                        )?);
                    }
                    blocks.push(b);
                }
            }
        }
    }
    Ok((blocks, layout))
}
