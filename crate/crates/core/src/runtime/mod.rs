//! JIT layer between lowered kernels and the simulator: micro-op cache
//! management, dependency-token assignment and graph execution.

mod graph;

pub use graph::{default_schedule, execute_graph, Graph, GraphReport, GraphRun, Node, NodeReport, Placement, TensorDecl};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{AbsInsn, CompileError, LoweredKernel, OpInputs};
use crate::config::{HardwareParams, MemScope};
use crate::isa::{DepFlags, Instruction, MemInsn, MicroOp, Module, Program};
use crate::refops::Tensor;
use crate::sim::{ExecReport, SimError, SimMachine, SimOptions, TimingModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("micro-kernel of {len} entries does not fit the {capacity}-entry micro-op cache")]
    KernelTooLarge { len: usize, capacity: usize },
    #[error("internal error: {0}")]
    Internal(String),
    #[error("graph: {0}")]
    Graph(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Slot {
    uops: Vec<MicroOp>,
    start: usize,
    last_use: u64,
}

/// Residency of micro-kernels in the micro-op buffer, evicting least
/// recently used kernels and placing new ones first-fit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UopCache {
    capacity: usize,
    slots: Vec<Slot>,
    tick: u64,
    hits: u64,
    misses: u64,
}

/// Result of one cache lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Residency {
    pub start: usize,
    pub hit: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

impl UopCache {
    pub fn new(capacity: usize) -> Self {
        UopCache {
            capacity,
            slots: Vec::new(),
            tick: 0,
            hits: 0,
            misses: 0,
        }
    }

    /// A cache spanning the addressable micro-op buffer of `p`.
    pub fn for_params(p: &HardwareParams) -> Self {
        Self::new(p.addressable(MemScope::Uop))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits,
            misses: self.misses,
        }
    }

    /// Resident `(start, len)` ranges in address order.
    pub fn resident(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = self.slots.iter().map(|s| (s.start, s.uops.len())).collect();
        v.sort();
        v
    }

    /// Forgets all residency (the buffer contents are no longer trusted).
    pub fn clear(&mut self) {
        self.slots.clear();
    }

    fn first_fit(&self, len: usize) -> Option<usize> {
        let mut at = 0;
        for (start, l) in self.resident() {
            if start - at >= len {
                return Some(at);
            }
            at = start + l;
        }
        (self.capacity - at >= len).then_some(at)
    }

    /// Looks up a kernel by content, loading it on a miss.
    pub fn request(&mut self, uops: &[MicroOp]) -> Result<Residency, RuntimeError> {
        self.tick += 1;
        if let Some(s) = self.slots.iter_mut().find(|s| s.uops == uops) {
            s.last_use = self.tick;
            self.hits += 1;
            return Ok(Residency {
                start: s.start,
                hit: true,
            });
        }
        if uops.len() > self.capacity {
            return Err(RuntimeError::KernelTooLarge {
                len: uops.len(),
                capacity: self.capacity,
            });
        }
        let start = loop {
            if let Some(at) = self.first_fit(uops.len()) {
                break at;
            }
            let lru = (0..self.slots.len())
                .min_by_key(|&i| self.slots[i].last_use)
                .expect("a full cache has residents");
            self.slots.remove(lru);
        };
        self.misses += 1;
        self.slots.push(Slot {
            uops: uops.to_vec(),
            start,
            last_use: self.tick,
        });
        Ok(Residency { start, hit: false })
    }
}

/// The flagged instruction stream of one kernel, before micro-op placement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommandBuffer {
    pub instrs: Vec<AbsInsn>,
    /// Execution context of each instruction.
    pub thread: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token {
    L2c,
    C2l,
    C2s,
    S2c,
}

/// Positions of one block's instructions in the emitted stream.
#[derive(Debug, Default, Clone)]
struct Marks {
    first_compute: Option<usize>,
    final_compute: Option<usize>,
    steps: Vec<StepMarks>,
    first_store: Option<usize>,
    last_store: Option<usize>,
}

#[derive(Debug, Default, Clone, Copy)]
struct StepMarks {
    first_load: Option<usize>,
    last_load: Option<usize>,
    first_compute: Option<usize>,
    last_compute: Option<usize>,
}

/// Interleaves the blocks of `k` by context and assigns dependency flags.
///
/// Blocks are taken in consecutive runs of `vthreads` (one per context) and
/// their groups (reset, steps, epilogue, stores) alternate. Tokens:
/// a step's last load releases its first compute (l2c); a step's last
/// compute frees its load buffers for the next step of the same context
/// (c2l, the final compute of the block for its last step); the final
/// compute releases the stores (c2s); the last store frees the accumulator
/// for the next block of the same context (s2c). Buffers are never waited on
/// before their first use.
pub fn build_command_stream(k: &LoweredKernel) -> Result<CommandBuffer, RuntimeError> {
    let vt = k.schedule.vthreads.max(1);
    let mut instrs: Vec<AbsInsn> = Vec::new();
    let mut thread = Vec::new();
    let mut marks = vec![Marks::default(); k.blocks.len()];
    for (ci, chunk) in k.blocks.chunks(vt).enumerate() {
        let groups = chunk.iter().map(|b| b.steps.len() + 3).max().unwrap_or(0);
        for g in 0..groups {
            for (j, b) in chunk.iter().enumerate() {
                let bi = ci * vt + j;
                let m = &mut marks[bi];
                let nsteps = b.steps.len();
                let mut emit = |a: &AbsInsn| {
                    instrs.push(a.clone());
                    thread.push(b.ctx);
                    instrs.len() - 1
                };
                let compute = |m: &mut Marks, at: usize| {
                    m.first_compute.get_or_insert(at);
                    m.final_compute = Some(at);
                };
                if g == 0 {
                    for a in &b.reset {
                        let at = emit(a);
                        compute(m, at);
                    }
                } else if g <= nsteps {
                    let s = &b.steps[g - 1];
                    let mut sm = StepMarks::default();
                    for a in &s.loads {
                        let at = emit(a);
                        sm.first_load.get_or_insert(at);
                        sm.last_load = Some(at);
                    }
                    for a in &s.compute {
                        let at = emit(a);
                        sm.first_compute.get_or_insert(at);
                        sm.last_compute = Some(at);
                        compute(m, at);
                    }
                    m.steps.push(sm);
                } else if g == nsteps + 1 {
                    for a in &b.epilogue {
                        let at = emit(a);
                        compute(m, at);
                    }
                } else if g == nsteps + 2 {
                    for a in &b.stores {
                        let at = emit(a);
                        m.first_store.get_or_insert(at);
                        m.last_store = Some(at);
                    }
                }
            }
        }
    }

    let mut edges: Vec<(usize, usize, Token)> = Vec::new();
    for (bi, m) in marks.iter().enumerate() {
        let next = marks.get(bi + vt);
        for (si, s) in m.steps.iter().enumerate() {
            if let (Some(l), Some(c)) = (s.last_load, s.first_compute) {
                edges.push((l, c, Token::L2c));
            }
            let release = if si + 1 == m.steps.len() {
                m.final_compute
            } else {
                s.last_compute
            };
            let reuse = match m.steps.get(si + 1) {
                Some(n) => n.first_load,
                None => next.and_then(|n| n.steps.first()).and_then(|n| n.first_load),
            };
            if let (Some(r), Some(u)) = (release, reuse) {
                edges.push((r, u, Token::C2l));
            }
        }
        if let (Some(c), Some(s)) = (m.final_compute, m.first_store) {
            edges.push((c, s, Token::C2s));
        }
        if let (Some(s), Some(c)) = (m.last_store, next.and_then(|n| n.first_compute)) {
            edges.push((s, c, Token::S2c));
        }
    }

    for &(from, to, tok) in &edges {
        let (push, pop): (Flag, Flag) = match tok {
            Token::L2c | Token::C2s => (|d| &mut d.push_next, |d| &mut d.pop_prev),
            Token::C2l | Token::S2c => (|d| &mut d.push_prev, |d| &mut d.pop_next),
        };
        raise(&mut instrs[from], push, tok)?;
        raise(&mut instrs[to], pop, tok)?;
    }
    check_token_order(&instrs, &edges)?;
    Ok(CommandBuffer { instrs, thread })
}

type Flag = fn(&mut DepFlags) -> &mut bool;

fn raise(a: &mut AbsInsn, flag: Flag, tok: Token) -> Result<(), RuntimeError> {
    let f = flag(a.insn.deps_mut());
    if *f {
        return Err(RuntimeError::Internal(format!("{tok:?} flag assigned twice")));
    }
    *f = true;
    Ok(())
}

/// Tokens are FIFO per queue: pairing holds iff consumers, taken in
/// producer order, appear in increasing program order and every edge joins
/// the modules its queue connects.
fn check_token_order(instrs: &[AbsInsn], edges: &[(usize, usize, Token)]) -> Result<(), RuntimeError> {
    for tok in [Token::L2c, Token::C2l, Token::C2s, Token::S2c] {
        let (src, dst) = match tok {
            Token::L2c => (Module::Load, Module::Compute),
            Token::C2l => (Module::Compute, Module::Load),
            Token::C2s => (Module::Compute, Module::Store),
            Token::S2c => (Module::Store, Module::Compute),
        };
        let mut es: Vec<_> = edges.iter().filter(|e| e.2 == tok).collect();
        es.sort_by_key(|e| e.0);
        for w in es.windows(2) {
            if w[0].1 >= w[1].1 {
                return Err(RuntimeError::Internal(format!("{tok:?} tokens would be consumed out of order")));
            }
        }
        for e in es {
            if instrs[e.0].insn.module() != src || instrs[e.1].insn.module() != dst || e.0 >= e.1 {
                return Err(RuntimeError::Internal(format!("{tok:?} edge {} -> {} crosses the wrong modules", e.0, e.1)));
            }
        }
    }
    Ok(())
}

/// Places every referenced kernel in the micro-op cache, inserting a
/// UOP-scope LOAD before each launch that misses, and rebases uop ranges.
/// Kernels are copied into the program's micro-op table once each.
pub fn jit_microkernels(
    cb: &CommandBuffer,
    kernels: &[Vec<MicroOp>],
    cache: &mut UopCache,
) -> Result<Program, RuntimeError> {
    let mut prog = Program::default();
    let mut table: HashMap<usize, usize> = HashMap::new();
    for a in &cb.instrs {
        let mut insn = a.insn;
        if let Some(id) = a.kernel {
            let uops = &kernels[id];
            let r = cache.request(uops)?;
            if !r.hit {
                let off = *table.entry(id).or_insert_with(|| {
                    prog.uops.extend_from_slice(uops);
                    prog.uops.len() - uops.len()
                });
                let load = MemInsn::linear(MemScope::Uop, r.start as u16, off as u32, uops.len() as u16);
                prog.instrs.push(Instruction::Load(load));
            }
            insn.set_uop_range(r.start as u16, (r.start + uops.len()) as u16);
        }
        prog.instrs.push(insn);
    }
    Ok(prog)
}

/// Flags, places and terminates a kernel's instruction stream.
pub fn compile(k: &LoweredKernel, cache: &mut UopCache) -> Result<Program, RuntimeError> {
    let cb = build_command_stream(k)?;
    let mut prog = jit_microkernels(&cb, &k.kernels, cache)?;
    prog.instrs.push(Instruction::finish());
    Ok(prog)
}

/// A simulated accelerator together with the cache that tracks its
/// micro-op buffer. Both must live as long as each other.
#[derive(Debug, Clone)]
pub struct Runtime {
    pub machine: SimMachine,
    pub cache: UopCache,
}

/// Output and statistics of one kernel execution.
#[derive(Debug, Clone)]
pub struct KernelRun {
    pub output: Tensor<i32>,
    pub report: ExecReport,
    pub program: Program,
}

impl Runtime {
    pub fn new(p: HardwareParams, t: TimingModel) -> Self {
        let cache = UopCache::for_params(&p);
        Runtime {
            machine: SimMachine::new(p, t),
            cache,
        }
    }

    pub fn with_options(mut self, opts: SimOptions) -> Self {
        self.machine = self.machine.with_options(opts);
        self
    }

    /// Restricts the micro-op cache to `capacity` entries (at most the buffer).
    pub fn with_cache_capacity(mut self, capacity: usize) -> Self {
        let max = self.machine.params().addressable(MemScope::Uop);
        self.cache = UopCache::new(capacity.min(max));
        self
    }

    pub fn params(&self) -> &HardwareParams {
        self.machine.params()
    }

    pub fn run_kernel(&mut self, k: &LoweredKernel, inputs: &OpInputs) -> Result<KernelRun, RuntimeError> {
        if k.params != *self.params() {
            return Err(RuntimeError::Internal("kernel lowered for different hardware".into()));
        }
        let mut dram = k.dram_image(inputs)?;
        let program = compile(k, &mut self.cache)?;
        let report = self.machine.run(&mut dram, &program).inspect_err(|_| self.cache.clear())?;
        let output = k.read_output(&dram)?;
        Ok(KernelRun {
            output,
            report,
            program,
        })
    }
}

/// Outcome of checking one (operator, schedule, hardware) case end to end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verification {
    /// Simulated output equals the host reference.
    pub oracle_match: bool,
    /// Pipelined and sequential execution leave identical DRAM.
    pub sequential_match: bool,
    pub tokens_balanced: bool,
    pub hazards: usize,
    pub cycles: u64,
    pub sequential_cycles: u64,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.oracle_match && self.sequential_match && self.tokens_balanced && self.hazards == 0
    }
}

/// Lowers `spec`, runs it on seeded random inputs both pipelined and
/// sequentially, and compares against the host reference.
pub fn verify_case(
    spec: &crate::compiler::OperatorSpec,
    sched: &crate::compiler::Schedule,
    p: &HardwareParams,
    t: &TimingModel,
    seed: u64,
) -> Result<Verification, RuntimeError> {
    use rand::SeedableRng;
    let k = crate::compiler::lower(spec, sched, p)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // mix saturating and in-range value magnitudes
    let inputs = OpInputs::random(spec, p, &mut rng, [127, 16, 4][(seed % 3) as usize]);
    let expected = spec.reference(&inputs, p)?;
    let program = compile(&k, &mut UopCache::for_params(p))?;
    let image = k.dram_image(&inputs)?;
    let mut piped = image.clone();
    let report = SimMachine::new(p.clone(), t.clone()).run(&mut piped, &program)?;
    let mut seq = image;
    let seq_report = SimMachine::new(p.clone(), t.clone()).run_sequential(&mut seq, &program)?;
    Ok(Verification {
        oracle_match: k.read_output(&piped)? == expected,
        sequential_match: piped.bytes() == seq.bytes(),
        tokens_balanced: report.tokens_balanced() && seq_report.tokens_balanced(),
        hazards: report.hazards.len(),
        cycles: report.total_cycles,
        sequential_cycles: seq_report.total_cycles,
    })
}

#[cfg(test)]
mod tests;
