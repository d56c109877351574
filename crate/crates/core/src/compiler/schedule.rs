use serde::{Deserialize, Serialize};

use super::{scope_cap, CompileError, OpKind, OperatorSpec, Schedule};
use crate::config::{HardwareParams, MemScope};

/// One output-to-input correspondence along an axis. Outputs
/// `out_off + t*out_step` (t < count) read input rows `in_off + t*in_step`
/// for every tap `(kernel index, in_off)`, relative to the tile's loaded input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Phase {
    pub out_off: usize,
    pub out_step: usize,
    pub count: usize,
    pub in_step: usize,
    pub taps: Vec<(usize, usize)>,
}

/// Input range and phases of one output tile along one axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct AxisTile {
    pub in_lo: isize,
    pub in_len: usize,
    pub phases: Vec<Phase>,
}

fn axis_tile(transpose: bool, t0: usize, tlen: usize, k: usize, s: usize, p: usize) -> AxisTile {
    if !transpose {
        return AxisTile {
            in_lo: (t0 * s) as isize - p as isize,
            in_len: (tlen - 1) * s + k,
            phases: vec![Phase {
                out_off: 0,
                out_step: 1,
                count: tlen,
                in_step: s,
                taps: (0..k).map(|ky| (ky, ky)).collect(),
            }],
        };
    }
    // Output y gathers input q with y + p = q*s + kidx. Outputs sharing a
    // residue r = (y + p) mod s form a dense sub-convolution over q.
    let mut raw = Vec::new();
    for r in 0..s.min(k) {
        let off = (r as isize - (t0 + p) as isize).rem_euclid(s as isize) as usize;
        if off >= tlen {
            continue;
        }
        let count = (tlen - off).div_ceil(s);
        let q0 = ((t0 + off + p - r) / s) as isize;
        let j = (k - r).div_ceil(s);
        raw.push((off, count, q0, r, j));
    }
    let in_lo = raw.iter().map(|&(_, _, q0, _, j)| q0 - j as isize + 1).min().unwrap_or(0);
    let in_hi = raw.iter().map(|&(_, c, q0, _, _)| q0 + c as isize - 1).max().unwrap_or(0);
    let phases = raw
        .into_iter()
        .map(|(off, count, q0, r, j)| Phase {
            out_off: off,
            out_step: s,
            count,
            in_step: 1,
            taps: (0..j).map(|jj| (r + jj * s, (q0 - jj as isize - in_lo) as usize)).collect(),
        })
        .collect();
    AxisTile {
        in_lo,
        in_len: (in_hi - in_lo + 1) as usize,
        phases,
    }
}

/// Tiles `[t0, t0+len)` of an output axis with their input mapping.
pub(crate) fn axis_tiles(transpose: bool, out: usize, tile: usize, k: usize, s: usize, p: usize) -> Vec<(usize, usize, AxisTile)> {
    (0..out)
        .step_by(tile.max(1))
        .map(|t0| {
            let len = tile.min(out - t0);
            (t0, len, axis_tile(transpose, t0, len, k, s, p))
        })
        .collect()
}

/// Per-context SRAM use of a schedule, in tiles, plus the largest
/// micro-kernel it needs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub inp: usize,
    pub wgt: usize,
    /// Accumulator tiles including operand regions of ALU operators.
    pub acc: usize,
    /// Accumulator tiles of the output tile alone.
    pub acc_out: usize,
    pub max_kernel: usize,
}

/// Pads needed to place `[lo, lo+len)` over `[0, extent)`.
fn pads(lo: isize, len: usize, extent: usize) -> usize {
    let before = (-lo).max(0) as usize;
    let after = (lo + len as isize - extent as isize).max(0) as usize;
    before.max(after)
}

/// Checks a schedule against the buffers and instruction fields of `p`.
pub fn check_schedule(spec: &OperatorSpec, s: &Schedule, p: &HardwareParams) -> Result<Footprint, CompileError> {
    spec.validate()?;
    let bad = |m: String| Err(CompileError::Infeasible(m));
    let (_, ib, ob) = spec.blocks(p);
    let g = if spec.kind == OpKind::GroupedConv2d { spec.groups } else { 1 };
    let (ibg, obg) = (ib / g, ob / g);
    let (oh, ow) = spec.out_hw()?;
    for (name, v, max) in [
        ("tile_oc", s.tile_oc, obg),
        ("tile_h", s.tile_h, oh),
        ("tile_w", s.tile_w, ow),
        ("vthreads", s.vthreads, 2),
    ] {
        if v == 0 || v > max {
            return bad(format!("{name} = {v} outside 1..={max}"));
        }
    }
    let gemm = spec.kind.is_gemm();
    if gemm && (s.tile_ic == 0 || s.tile_ic > ibg) {
        return bad(format!("tile_ic = {} outside 1..={ibg}", s.tile_ic));
    }
    if !gemm && (s.tile_ic != 1 || !s.oc_unroll) {
        return bad("ALU operators take tile_ic = 1 and oc_unroll".into());
    }

    let (to, ti, th, tw) = (s.tile_oc, s.tile_ic, s.tile_h, s.tile_w);
    let per = th * tw;
    let acc_out = to * per;
    let factor_max = (1usize << 11) - 1;
    let wgt_factor_max = (1usize << 10) - 1;
    let mut factors = vec![("dst_out", if to > 1 { per } else { 0 })];
    let mut wgt_factors = vec![];
    let fp = match spec.kind {
        OpKind::Elementwise => {
            let operands = if spec.is_binary() { 3 } else { 2 };
            factors.push(("src_out", if to > 1 { per } else { 0 }));
            Footprint {
                inp: 0,
                wgt: 0,
                acc: operands * acc_out,
                acc_out,
                max_kernel: 1,
            }
        }
        OpKind::Maxpool => {
            let (k, st) = (spec.kh, spec.stride);
            let (ih, iw) = ((th - 1) * st + k, (tw - 1) * st + k);
            factors.push(("dst_out", if th > 1 { tw } else { 0 }));
            factors.push(("src_out", if th > 1 { st * iw } else { 0 }));
            factors.push(("src_in", if tw > 1 { st } else { 0 }));
            Footprint {
                inp: 0,
                wgt: 0,
                acc: acc_out + to * ih * iw,
                acc_out,
                max_kernel: to * (k * k - 1).max(1),
            }
        }
        _ => {
            let transpose = spec.kind == OpKind::Conv2dTranspose;
            let ys = axis_tiles(transpose, oh, th, spec.kh, spec.stride, spec.pad);
            let xs = axis_tiles(transpose, ow, tw, spec.kw, spec.stride, spec.pad);
            let ih = ys.iter().map(|t| t.2.in_len).max().unwrap();
            let iw = xs.iter().map(|t| t.2.in_len).max().unwrap();
            let max_pad = ys
                .iter()
                .map(|t| pads(t.2.in_lo, t.2.in_len, spec.h))
                .chain(xs.iter().map(|t| pads(t.2.in_lo, t.2.in_len, spec.w)))
                .max()
                .unwrap();
            if max_pad > 15 {
                return bad(format!("tile needs {max_pad} rows of padding, the limit is 15"));
            }
            let khw = spec.kh * spec.kw;
            let mut max_kernel = 1;
            for (_, _, ay) in &ys {
                for (_, _, ax) in &xs {
                    let tw_ = ax.phases.iter().map(|ph| ph.count).max().unwrap_or(1);
                    for py in &ay.phases {
                        for px in &ax.phases {
                            let taps = py.taps.len() * px.taps.len() * ti;
                            max_kernel = max_kernel.max(if s.oc_unroll { to * taps } else { tw_ * taps });
                            if s.oc_unroll {
                                factors.push(("dst_out", if py.count > 1 { py.out_step * tw } else { 0 }));
                                factors.push(("dst_in", if px.count > 1 { px.out_step } else { 0 }));
                                factors.push(("src_out", if py.count > 1 { py.in_step * iw } else { 0 }));
                                factors.push(("src_in", if px.count > 1 { px.in_step } else { 0 }));
                            } else {
                                factors.push(("dst_in", if py.count > 1 { py.out_step * tw } else { 0 }));
                                factors.push(("src_in", if py.count > 1 { py.in_step * iw } else { 0 }));
                                wgt_factors.push(if to > 1 { ti * khw } else { 0 });
                            }
                        }
                    }
                }
            }
            Footprint {
                inp: ti * ih * iw,
                wgt: to * ti * khw,
                acc: acc_out + if spec.epilogue.bias { to } else { 0 },
                acc_out,
                max_kernel,
            }
        }
    };
    if let Some((name, v)) = factors.iter().find(|f| f.1 > factor_max) {
        return bad(format!("{name} factor {v} exceeds {factor_max}"));
    }
    if let Some(v) = wgt_factors.iter().find(|&&v| v > wgt_factor_max) {
        return bad(format!("weight factor {v} exceeds {wgt_factor_max}"));
    }
    let vt = s.vthreads;
    for (scope, need) in [(MemScope::Inp, fp.inp), (MemScope::Wgt, fp.wgt), (MemScope::Acc, fp.acc)] {
        let cap = scope_cap(p, scope);
        if need * vt > cap {
            return bad(format!("{} needs {} tiles x {vt} contexts, capacity {cap}", scope.name(), need));
        }
    }
    let uop_cap = scope_cap(p, MemScope::Uop);
    if fp.max_kernel > uop_cap {
        return bad(format!("micro-kernel of {} entries exceeds the {uop_cap}-entry cache", fp.max_kernel));
    }
    Ok(fp)
}

/// Powers of two below `extent`, then `extent` itself.
pub fn tile_candidates(extent: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..usize::BITS).map(|i| 1usize << i).take_while(|&t| t < extent).collect();
    v.push(extent);
    v
}

/// Every schedule of the template that fits `p`, in lexicographic order.
pub fn legal_schedules(spec: &OperatorSpec, p: &HardwareParams) -> Vec<Schedule> {
    if spec.check_mappable(p).is_err() {
        return Vec::new();
    }
    let Ok((oh, ow)) = spec.out_hw() else {
        return Vec::new();
    };
    let (_, ib, ob) = spec.blocks(p);
    let g = if spec.kind == OpKind::GroupedConv2d { spec.groups } else { 1 };
    let gemm = spec.kind.is_gemm();
    let ics = if gemm { tile_candidates(ib / g) } else { vec![1] };
    let unrolls: &[bool] = if gemm { &[false, true] } else { &[true] };
    let mut out = Vec::new();
    for &tile_oc in &tile_candidates(ob / g) {
        for &tile_ic in &ics {
            for &tile_h in &tile_candidates(oh) {
                for &tile_w in &tile_candidates(ow) {
                    for vthreads in [1, 2] {
                        for &oc_unroll in unrolls {
                            let s = Schedule {
                                tile_oc,
                                tile_ic,
                                tile_h,
                                tile_w,
                                vthreads,
                                oc_unroll,
                            };
                            if check_schedule(spec, &s, p).is_ok() {
                                out.push(s);
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort();
    out
}
