//! Event-driven simulator of the load/compute/store task pipeline.
//!
//! Fetch dispatches instruction `i` at cycle `i * fetch_dispatch_cycles`
//! into its module's unbounded command queue. Each module executes its
//! queue in order; an instruction starts once its module is free, it has
//! been dispatched, and every token it pops is available. Among ready
//! instructions the one with the earliest start time is simulated next, so
//! functional effects happen in simulated-time order.

mod exec;

pub use exec::{
    alu_accesses, alu_cycles, dma_cycles, exec_alu, exec_gemm, exec_load, exec_store, gemm_accesses, gemm_cycles,
    wrap_bits, Sram, SramBuffer,
};

use std::collections::VecDeque;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{HardwareParams, MemScope};
use crate::isa::{DepFlags, Instruction, MicroOp, Module, Opcode, Program};

/// Flat byte-addressed device memory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dram {
    bytes: Vec<u8>,
}

impl Dram {
    pub fn new(size: usize) -> Self {
        Dram { bytes: vec![0; size] }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Dram { bytes }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

fn default_latency() -> u64 {
    64
}
fn default_bw() -> u64 {
    8
}
fn one() -> u64 {
    1
}

/// Cycle-cost constants of the simulated device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingModel {
    #[serde(default = "default_latency")]
    pub dram_latency_cycles: u64,
    #[serde(default = "default_bw")]
    pub dram_bytes_per_cycle: u64,
    #[serde(default = "one")]
    pub gemm_tiles_per_cycle: u64,
    #[serde(default = "one")]
    pub fetch_dispatch_cycles: u64,
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel {
            dram_latency_cycles: default_latency(),
            dram_bytes_per_cycle: default_bw(),
            gemm_tiles_per_cycle: 1,
            fetch_dispatch_cycles: 1,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("dram_latency_cycles", self.dram_latency_cycles),
            ("dram_bytes_per_cycle", self.dram_bytes_per_cycle),
            ("gemm_tiles_per_cycle", self.gemm_tiles_per_cycle),
            ("fetch_dispatch_cycles", self.fetch_dispatch_cycles),
        ] {
            if v == 0 {
                return Err(SimError::Timing(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Cycles the ALU needs per accumulator tile.
    pub fn alu_tile_cycles(p: &HardwareParams) -> u64 {
        (p.batch * p.block_out).div_ceil(p.alu_lanes) as u64
    }

    /// Cycles an instruction occupies its module.
    pub fn cycles(&self, insn: &Instruction, p: &HardwareParams) -> u64 {
        match insn {
            Instruction::Load(m) | Instruction::Store(m) => dma_cycles(m, p, self),
            Instruction::Gemm(g) => gemm_cycles(g, self),
            Instruction::Alu(a) => alu_cycles(a, p),
            Instruction::Finish(_) => 1,
        }
    }
}

/// The four dependency-token queues between adjacent modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Queue {
    L2c,
    C2l,
    C2s,
    S2c,
}

impl Queue {
    pub const ALL: [Queue; 4] = [Queue::L2c, Queue::C2l, Queue::C2s, Queue::S2c];

    pub fn name(self) -> &'static str {
        match self {
            Queue::L2c => "l2c",
            Queue::C2l => "c2l",
            Queue::C2s => "c2s",
            Queue::S2c => "s2c",
        }
    }

    /// Queues popped and pushed by an instruction with `deps` on `module`.
    pub fn for_flags(module: Module, deps: DepFlags) -> (Vec<Queue>, Vec<Queue>) {
        let (prev_in, next_in, prev_out, next_out) = match module {
            Module::Load => (None, Some(Queue::C2l), None, Some(Queue::L2c)),
            Module::Compute => (Some(Queue::L2c), Some(Queue::S2c), Some(Queue::C2l), Some(Queue::C2s)),
            Module::Store => (Some(Queue::C2s), None, Some(Queue::S2c), None),
        };
        let mut pops = Vec::new();
        let mut pushes = Vec::new();
        if deps.pop_prev {
            pops.extend(prev_in);
        }
        if deps.pop_next {
            pops.extend(next_in);
        }
        if deps.push_prev {
            pushes.extend(prev_out);
        }
        if deps.push_next {
            pushes.extend(next_out);
        }
        (pops, pushes)
    }
}

/// Unbounded FIFO of tokens, each stamped with the cycle it becomes visible.
#[derive(Debug, Clone, Default)]
pub struct TokenQueue {
    tokens: VecDeque<u64>,
    pub pushed: u64,
    pub popped: u64,
}

impl TokenQueue {
    pub fn push(&mut self, at: u64) {
        self.tokens.push_back(at);
        self.pushed += 1;
    }

    pub fn front(&self) -> Option<u64> {
        self.tokens.front().copied()
    }

    pub fn pop(&mut self) -> Option<u64> {
        let t = self.tokens.pop_front()?;
        self.popped += 1;
        Some(t)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("instruction {index}: out-of-bounds access to {what}")]
    OutOfBounds { index: usize, what: String },
    #[error("deadlock: {}", fmt_blocked(.0))]
    Deadlock(Vec<Blocked>),
    #[error("program ended without executing FINISH")]
    Unfinished,
    #[error("timing model: {0}")]
    Timing(String),
}

fn fmt_blocked(b: &[Blocked]) -> String {
    b.iter()
        .map(|x| {
            let q: Vec<_> = x.waiting_on.iter().map(|q| q.name()).collect();
            format!(
                "{} blocked at instruction {} ({}) waiting on {}",
                x.module.name(),
                x.index,
                x.opcode.name(),
                q.join(",")
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// A module stuck on an empty token queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Blocked {
    pub module: Module,
    pub index: usize,
    pub opcode: Opcode,
    pub waiting_on: Vec<Queue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub index: usize,
    pub module: Module,
    pub opcode: Opcode,
    pub start: u64,
    pub end: u64,
    pub pushes: Vec<Queue>,
    pub pops: Vec<Queue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HazardKind {
    Raw,
    War,
    Waw,
}

/// Two instructions on different modules touched the same SRAM tile during
/// overlapping time intervals, at least one of them writing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hazard {
    pub kind: HazardKind,
    pub scope: MemScope,
    pub tile: usize,
    /// Instruction that accessed the tile first.
    pub first: usize,
    pub second: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BusyCycles {
    pub load: u64,
    pub compute: u64,
    pub store: u64,
}

impl BusyCycles {
    fn add(&mut self, m: Module, c: u64) {
        match m {
            Module::Load => self.load += c,
            Module::Compute => self.compute += c,
            Module::Store => self.store += c,
        }
    }

    pub fn get(&self, m: Module) -> u64 {
        match m {
            Module::Load => self.load,
            Module::Compute => self.compute,
            Module::Store => self.store,
        }
    }

    pub fn max(&self) -> u64 {
        self.load.max(self.compute).max(self.store)
    }

    pub fn sum(&self) -> u64 {
        self.load + self.compute + self.store
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QueueStats {
    pub queue: Queue,
    pub pushed: u64,
    pub popped: u64,
}

/// Outcome of one program execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecReport {
    pub total_cycles: u64,
    pub busy: BusyCycles,
    pub instructions: usize,
    /// GEMM micro-op steps that multiplied (reset steps excluded).
    pub gemm_steps: u64,
    pub alu_steps: u64,
    pub dram_bytes_read: u64,
    pub dram_bytes_written: u64,
    pub tokens: Vec<QueueStats>,
    pub hazard_checked: bool,
    pub hazards: Vec<Hazard>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

impl ExecReport {
    /// Writes the trace as JSON Lines, one record per executed instruction.
    pub fn write_trace_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.trace {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn tokens_balanced(&self) -> bool {
        self.tokens.iter().all(|q| q.pushed == q.popped)
    }
}

/// What a simulation computes besides timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Compute data; when false only timing and bounds are simulated.
    pub functional: bool,
    pub check_hazards: bool,
    pub trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            functional: true,
            check_hazards: true,
            trace: true,
        }
    }
}

impl SimOptions {
    pub fn timing_only() -> Self {
        SimOptions {
            functional: false,
            check_hazards: false,
            trace: false,
        }
    }
}

const MAX_HAZARDS: usize = 64;

#[derive(Debug, Clone, Copy, Default)]
struct TileHistory {
    write_end: u64,
    write_mod: Option<Module>,
    write_idx: usize,
    read_end: [u64; 3],
    read_idx: [usize; 3],
}

#[derive(Debug, Clone)]
struct HazardTracker {
    tiles: [Vec<TileHistory>; 3],
    found: Vec<Hazard>,
    total: usize,
}

fn mod_slot(m: Module) -> usize {
    m as usize
}

fn scope_slot(s: MemScope) -> usize {
    match s {
        MemScope::Inp => 0,
        MemScope::Wgt => 1,
        _ => 2,
    }
}

const SLOT_SCOPE: [MemScope; 3] = [MemScope::Inp, MemScope::Wgt, MemScope::Acc];

impl HazardTracker {
    fn new(p: &HardwareParams) -> Self {
        HazardTracker {
            tiles: SLOT_SCOPE.map(|s| vec![TileHistory::default(); p.capacity(s)]),
            found: Vec::new(),
            total: 0,
        }
    }

    fn report(&mut self, kind: HazardKind, slot: usize, tile: usize, first: usize, second: usize) {
        self.total += 1;
        if self.found.len() < MAX_HAZARDS {
            self.found.push(Hazard {
                kind,
                scope: SLOT_SCOPE[slot],
                tile,
                first,
                second,
            });
        }
    }

    /// Checks then records one instruction's accesses over `[start, end)`.
    fn access(
        &mut self,
        index: usize,
        m: Module,
        start: u64,
        end: u64,
        reads: &[(usize, usize)],
        writes: &[(usize, usize)],
    ) {
        let ms = mod_slot(m);
        for &(s, t) in reads {
            let h = self.tiles[s][t];
            if h.write_mod.is_some_and(|w| w != m) && h.write_end > start {
                self.report(HazardKind::Raw, s, t, h.write_idx, index);
            }
        }
        for &(s, t) in writes {
            let h = self.tiles[s][t];
            if h.write_mod.is_some_and(|w| w != m) && h.write_end > start {
                self.report(HazardKind::Waw, s, t, h.write_idx, index);
            }
            for o in 0..3 {
                if o != ms && h.read_end[o] > start {
                    self.report(HazardKind::War, s, t, h.read_idx[o], index);
                }
            }
        }
        for &(s, t) in reads {
            let h = &mut self.tiles[s][t];
            h.read_end[ms] = h.read_end[ms].max(end);
            h.read_idx[ms] = index;
        }
        for &(s, t) in writes {
            let h = &mut self.tiles[s][t];
            h.write_end = end;
            h.write_mod = Some(m);
            h.write_idx = index;
        }
    }
}

/// SRAM tiles read and written by an instruction, as `(scope slot, tile)`.
fn footprint(insn: &Instruction, uops: &[MicroOp]) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut reads = Vec::new();
    let mut writes = Vec::new();
    match insn {
        Instruction::Load(m) if m.scope != MemScope::Uop && !m.is_noop() => {
            let s = scope_slot(m.scope);
            let b = m.sram_base as usize;
            writes.extend((b..b + m.sram_extent()).map(|t| (s, t)));
        }
        Instruction::Store(m) if !m.is_noop() => {
            let b = m.sram_base as usize;
            reads.extend((b..b + m.moved_tiles()).map(|t| (2, t)));
        }
        Instruction::Gemm(g) => {
            for (a, i, w) in gemm_accesses(g, uops) {
                writes.push((2, a));
                if !g.reset {
                    reads.push((0, i));
                    reads.push((1, w));
                }
            }
        }
        Instruction::Alu(a) => {
            for (d, s) in alu_accesses(a, uops) {
                writes.push((2, d));
                if !a.reset && !a.use_imm {
                    reads.push((2, s));
                }
            }
        }
        _ => {}
    }
    reads.sort_unstable();
    reads.dedup();
    writes.sort_unstable();
    writes.dedup();
    (reads, writes)
}

/// Simulator state. SRAM contents persist across [`SimMachine::run`] calls
/// so resident micro-kernels can be reused by later programs.
#[derive(Debug, Clone)]
pub struct SimMachine {
    p: HardwareParams,
    t: TimingModel,
    pub opts: SimOptions,
    sram: Sram,
}

#[derive(Default)]
struct Counters {
    busy: BusyCycles,
    gemm_steps: u64,
    alu_steps: u64,
    read: u64,
    written: u64,
}

impl SimMachine {
    pub fn new(p: HardwareParams, t: TimingModel) -> Self {
        SimMachine {
            sram: Sram::new(&p),
            p,
            t,
            opts: SimOptions::default(),
        }
    }

    pub fn with_options(mut self, opts: SimOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn params(&self) -> &HardwareParams {
        &self.p
    }

    pub fn timing(&self) -> &TimingModel {
        &self.t
    }

    pub fn sram(&self) -> &Sram {
        &self.sram
    }

    /// Applies one instruction's functional effect and returns its cycle cost.
    fn execute(&mut self, index: usize, insn: &Instruction, dram: &mut Dram, prog: &Program, c: &mut Counters) -> Result<u64, SimError> {
        let f = self.opts.functional;
        let p = &self.p;
        match insn {
            Instruction::Load(m) => {
                exec_load(index, m, dram, &mut self.sram, &prog.uops, p, f)?;
                if m.scope != MemScope::Uop {
                    c.read += (m.moved_tiles() * p.dram_tile_bytes(m.scope)) as u64;
                }
            }
            Instruction::Store(m) => {
                exec_store(index, m, dram, &self.sram, p, f)?;
                c.written += (m.moved_tiles() * p.dram_tile_bytes(MemScope::Out)) as u64;
            }
            Instruction::Gemm(g) => {
                exec_gemm(index, g, &mut self.sram, p, f)?;
                if !g.reset {
                    c.gemm_steps += g.iter_out as u64 * g.iter_in as u64 * (g.uop_end - g.uop_bgn) as u64;
                }
            }
            Instruction::Alu(a) => {
                exec_alu(index, a, &mut self.sram, p, f)?;
                c.alu_steps += a.iter_out as u64 * a.iter_in as u64 * (a.uop_end - a.uop_bgn) as u64;
            }
            Instruction::Finish(_) => {}
        }
        let cycles = self.t.cycles(insn, p);
        c.busy.add(insn.module(), cycles);
        Ok(cycles)
    }

    fn report(&self, prog: &Program, total: u64, c: Counters, queues: &[TokenQueue; 4], hazards: Option<HazardTracker>, trace: Vec<TraceRecord>, mut warnings: Vec<String>) -> ExecReport {
        let tokens: Vec<QueueStats> = Queue::ALL
            .iter()
            .map(|&q| QueueStats {
                queue: q,
                pushed: queues[q as usize].pushed,
                popped: queues[q as usize].popped,
            })
            .collect();
        for q in &tokens {
            if q.pushed != q.popped {
                warnings.push(format!(
                    "queue {} unbalanced: {} pushed, {} popped",
                    q.queue.name(),
                    q.pushed,
                    q.popped
                ));
            }
        }
        let (hazard_checked, hazards) = match hazards {
            Some(h) => {
                if h.total > h.found.len() {
                    warnings.push(format!("{} hazards found, first {} reported", h.total, h.found.len()));
                }
                (true, h.found)
            }
            None => (false, Vec::new()),
        };
        ExecReport {
            total_cycles: total,
            busy: c.busy,
            instructions: prog.instrs.len(),
            gemm_steps: c.gemm_steps,
            alu_steps: c.alu_steps,
            dram_bytes_read: c.read,
            dram_bytes_written: c.written,
            tokens,
            hazard_checked,
            hazards,
            warnings,
            trace,
        }
    }

    /// Pipelined execution honoring dependency tokens.
    pub fn run(&mut self, dram: &mut Dram, prog: &Program) -> Result<ExecReport, SimError> {
        self.t.validate()?;
        let mut cmd: [VecDeque<usize>; 3] = Default::default();
        for (i, insn) in prog.instrs.iter().enumerate() {
            cmd[mod_slot(insn.module())].push_back(i);
        }
        let mut queues: [TokenQueue; 4] = Default::default();
        let mut free = [0u64; 3];
        let mut counters = Counters::default();
        let mut hazards = self.opts.check_hazards.then(|| HazardTracker::new(&self.p));
        let mut trace = Vec::new();
        let mut finished = false;
        let mut total = 0u64;
        let fetch = self.t.fetch_dispatch_cycles;

        loop {
            // Pick the ready head instruction with the earliest start time.
            let mut best: Option<(u64, usize)> = None;
            let mut any = false;
            for (ms, q) in cmd.iter().enumerate() {
                let Some(&i) = q.front() else { continue };
                any = true;
                let insn = &prog.instrs[i];
                let (pops, _) = Queue::for_flags(insn.module(), insn.deps());
                let mut start = free[ms].max(i as u64 * fetch);
                let mut ready = true;
                for qn in pops {
                    match queues[qn as usize].front() {
                        Some(t) => start = start.max(t),
                        None => ready = false,
                    }
                }
                if ready && best.is_none_or(|(s, _)| start < s) {
                    best = Some((start, ms));
                }
            }
            if !any {
                break;
            }
            let Some((start, ms)) = best else {
                let blocked = cmd
                    .iter()
                    .filter_map(|q| q.front())
                    .map(|&i| {
                        let insn = &prog.instrs[i];
                        let (pops, _) = Queue::for_flags(insn.module(), insn.deps());
                        Blocked {
                            module: insn.module(),
                            index: i,
                            opcode: insn.opcode(),
                            waiting_on: pops.into_iter().filter(|q| queues[*q as usize].is_empty()).collect(),
                        }
                    })
                    .collect();
                return Err(SimError::Deadlock(blocked));
            };
            let i = cmd[ms].pop_front().unwrap();
            let insn = &prog.instrs[i];
            let module = insn.module();
            let (pops, pushes) = Queue::for_flags(module, insn.deps());
            for &q in &pops {
                queues[q as usize].pop();
            }
            let cycles = self.execute(i, insn, dram, prog, &mut counters)?;
            let end = start + cycles;
            if let Some(h) = hazards.as_mut() {
                let (r, w) = footprint(insn, &self.sram.uop);
                h.access(i, module, start, end, &r, &w);
            }
            for &q in &pushes {
                queues[q as usize].push(end);
            }
            free[ms] = end;
            total = total.max(end);
            if matches!(insn, Instruction::Finish(_)) {
                finished = true;
            }
            if self.opts.trace {
                trace.push(TraceRecord {
                    index: i,
                    module,
                    opcode: insn.opcode(),
                    start,
                    end,
                    pushes,
                    pops,
                });
            }
        }
        if !finished {
            return Err(SimError::Unfinished);
        }
        Ok(self.report(prog, total, counters, &queues, hazards, trace, Vec::new()))
    }

    /// Reference executor: one instruction at a time in program order.
    /// Tokens are counted but never block; a pop from an empty queue or a
    /// queue left unbalanced at the end is recorded as a warning.
    pub fn run_sequential(&mut self, dram: &mut Dram, prog: &Program) -> Result<ExecReport, SimError> {
        self.t.validate()?;
        let mut queues: [TokenQueue; 4] = Default::default();
        let mut counters = Counters::default();
        let mut trace = Vec::new();
        let mut warnings = Vec::new();
        let mut now = 0u64;
        let mut finished = false;
        for (i, insn) in prog.instrs.iter().enumerate() {
            let module = insn.module();
            let (pops, pushes) = Queue::for_flags(module, insn.deps());
            for &q in &pops {
                if queues[q as usize].pop().is_none() {
                    warnings.push(format!("instruction {i} pops empty queue {}", q.name()));
                    queues[q as usize].popped += 1;
                }
            }
            let cycles = self.execute(i, insn, dram, prog, &mut counters)?;
            let start = now;
            now += cycles;
            for &q in &pushes {
                queues[q as usize].push(now);
            }
            if self.opts.trace {
                trace.push(TraceRecord {
                    index: i,
                    module,
                    opcode: insn.opcode(),
                    start,
                    end: now,
                    pushes,
                    pops,
                });
            }
            if matches!(insn, Instruction::Finish(_)) {
                finished = true;
                break;
            }
        }
        if !finished {
            return Err(SimError::Unfinished);
        }
        Ok(self.report(prog, now, counters, &queues, None, trace, warnings))
    }
}

/// Runs `prog` on a fresh machine with the pipelined executor.
pub fn run(p: &HardwareParams, t: &TimingModel, dram: &mut Dram, prog: &Program) -> Result<ExecReport, SimError> {
    SimMachine::new(p.clone(), *t).run(dram, prog)
}

/// Runs `prog` on a fresh machine with the sequential reference executor.
pub fn run_sequential(p: &HardwareParams, t: &TimingModel, dram: &mut Dram, prog: &Program) -> Result<ExecReport, SimError> {
    SimMachine::new(p.clone(), *t).run_sequential(dram, prog)
}

#[cfg(test)]
mod tests;
