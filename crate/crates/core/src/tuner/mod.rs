//! Schedule search per operator and hardware selection by successive
//! halving over candidate designs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{legal_schedules, lower, OperatorSpec, Schedule};
use crate::config::{enumerate_candidates, peak_gops, prune_candidates, CandidateSpace, DeviceProfile, HardwareParams};
use crate::runtime::{compile, RuntimeError, UopCache};
use crate::sim::{Dram, SimMachine, SimOptions, TimingModel};
use crate::workloads::WorkloadDef;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuneError {
    /// The operator cannot run on the device; it stays on the host.
    #[error("{0} has no legal schedule and is host-only")]
    NoSchedules(String),
    #[error("invalid tuning request: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Uniform sampling without replacement.
    Random,
    /// Simulated annealing over neighbouring schedules.
    Anneal,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Anneal => "anneal",
        })
    }
}

impl FromStr for Strategy {
    type Err = TuneError;
    fn from_str(s: &str) -> Result<Self, TuneError> {
        match s {
            "random" => Ok(Strategy::Random),
            "anneal" => Ok(Strategy::Anneal),
            _ => Err(TuneError::Invalid(format!("unknown strategy {s:?}"))),
        }
    }
}

/// Search settings shared by every tuner in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunerConfig {
    pub strategy: Strategy,
    pub seed: u64,
    /// Initial annealing temperature, in units of relative slowdown.
    pub t0: f64,
    /// Per-trial temperature factor.
    pub decay: f64,
    /// Multiplier on the analytic lower bound for operators with no trial yet.
    pub pessimism: f64,
    /// Throughput assumed for operators left on the host.
    pub host_gops: f64,
    pub budget_per_round: usize,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            strategy: Strategy::Random,
            seed: 0,
            t0: 0.1,
            decay: 0.95,
            pessimism: 3.0,
            host_gops: 1.0,
            budget_per_round: 16,
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<(), TuneError> {
        let bad = |m: &str| Err(TuneError::Invalid(m.into()));
        if !(self.t0 > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("annealing needs t0 > 0 and decay in (0, 1]");
        }
        if !(self.pessimism >= 1.0) {
            return bad("pessimism must be at least 1");
        }
        if !(self.host_gops > 0.0) {
            return bad("host_gops must be positive");
        }
        if self.budget_per_round == 0 {
            return bad("budget_per_round must be at least 1");
        }
        Ok(())
    }
}

/// Timing of one schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measurement {
    pub schedule: Schedule,
    /// Total cycles; zero when infeasible.
    pub cycles: u64,
    pub feasible: bool,
    pub wallclock_ms: f64,
}

/// Lowers, compiles and simulates one schedule (timing only, cold cache).
pub fn measure(spec: &OperatorSpec, sched: &Schedule, p: &HardwareParams, t: &TimingModel) -> Measurement {
    let run = || -> Result<u64, RuntimeError> {
        let k = lower(spec, sched, p)?;
        let prog = compile(&k, &mut UopCache::for_params(p))?;
        let mut dram = Dram::new(k.layout.total_bytes);
        let r = SimMachine::new(p.clone(), *t)
            .with_options(SimOptions::timing_only())
            .run(&mut dram, &prog)?;
        Ok(r.total_cycles)
    };
    match run() {
        Ok(cycles) => Measurement {
            schedule: *sched,
            cycles,
            feasible: true,
            wallclock_ms: cycles as f64 / (p.freq_mhz * 1000.0),
        },
        Err(_) => Measurement {
            schedule: *sched,
            cycles: 0,
            feasible: false,
            wallclock_ms: 0.0,
        },
    }
}

/// Cycles no schedule can beat: full use of the GEMM core or ALU, or of
/// DRAM bandwidth for the compulsory traffic, whichever is larger.
pub fn lower_bound_cycles(spec: &OperatorSpec, p: &HardwareParams, t: &TimingModel) -> u64 {
    let compute = if spec.kind.is_gemm() {
        spec.macs().div_ceil(p.intrinsic_macs() * t.gemm_tiles_per_cycle)
    } else {
        spec.ops().div_ceil((p.batch * p.block_out) as u64) * TimingModel::alu_tile_cycles(p)
    };
    let elems = |d: Vec<usize>| d.iter().product::<usize>() as u64;
    let inp_b = (p.inp_bits as u64).div_ceil(8);
    let mut bytes = elems(spec.input_dims()) * inp_b + elems(spec.out_dims().unwrap_or_default()) * inp_b;
    if let Some(w) = spec.weight_dims() {
        bytes += elems(w) * (p.wgt_bits as u64).div_ceil(8);
    }
    compute.max(bytes / t.dram_bytes_per_cycle).max(1)
}

/// One measured trial in a tuner's history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Trial {
    pub trial: usize,
    pub measurement: Measurement,
    /// Best cycles over trials `0..=trial`.
    pub best_cycles: u64,
}

/// Search state for one operator on one design. Tuning can resume across
/// calls; the sequence of trials depends only on the seed.
#[derive(Debug, Clone)]
pub struct TunerState {
    spec: OperatorSpec,
    params: HardwareParams,
    strategy: Strategy,
    seed: u64,
    legal: Vec<Schedule>,
    visited: Vec<bool>,
    unvisited: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    temperature: f64,
    decay: f64,
    current: Option<(usize, u64)>,
    best: Option<(Schedule, u64)>,
    history: Vec<Trial>,
}

impl TunerState {
    pub fn new(spec: &OperatorSpec, p: &HardwareParams, cfg: &TunerConfig, seed: u64) -> Result<Self, TuneError> {
        let legal = legal_schedules(spec, p);
        if legal.is_empty() {
            let name = if spec.name.is_empty() { spec.kind.name().to_string() } else { spec.name.clone() };
            return Err(TuneError::NoSchedules(name));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..legal.len()).collect();
        if cfg.strategy == Strategy::Random {
            order.shuffle(&mut rng);
        }
        Ok(TunerState {
            spec: spec.clone(),
            params: p.clone(),
            strategy: cfg.strategy,
            seed,
            visited: vec![false; legal.len()],
            unvisited: legal.len(),
            legal,
            order,
            cursor: 0,
            rng,
            temperature: cfg.t0,
            decay: cfg.decay,
            current: None,
            best: None,
            history: Vec::new(),
        })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn legal(&self) -> &[Schedule] {
        &self.legal
    }

    pub fn trials(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[Trial] {
        &self.history
    }

    pub fn exhausted(&self) -> bool {
        self.unvisited == 0
    }

    pub fn best(&self) -> Option<(Schedule, u64)> {
        self.best
    }

    pub fn best_cycles(&self) -> Option<u64> {
        self.best.map(|b| b.1)
    }

    fn random_unvisited(&mut self) -> usize {
        let k = self.rng.gen_range(0..self.unvisited);
        self.visited
            .iter()
            .enumerate()
            .filter(|(_, v)| !**v)
            .nth(k)
            .map(|(i, _)| i)
            .expect("an unvisited schedule exists")
    }

    /// Unvisited legal schedules one step away from `i`: a tile knob moved
    /// to the adjacent legal value, or vthreads/oc_unroll toggled.
    fn neighbours(&self, i: usize) -> Vec<usize> {
        let s = self.legal[i];
        let values = |f: fn(&Schedule) -> usize| {
            let mut v: Vec<usize> = self.legal.iter().map(f).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut cands = Vec::new();
        let knobs: [(fn(&Schedule) -> usize, fn(&mut Schedule, usize)); 4] = [
            (|s| s.tile_oc, |s, v| s.tile_oc = v),
            (|s| s.tile_ic, |s, v| s.tile_ic = v),
            (|s| s.tile_h, |s, v| s.tile_h = v),
            (|s| s.tile_w, |s, v| s.tile_w = v),
        ];
        for (get, set) in knobs {
            let vals = values(get);
            let pos = vals.binary_search(&get(&s)).expect("own value is listed");
            for q in [pos.wrapping_sub(1), pos + 1] {
                if let Some(&v) = vals.get(q) {
                    let mut n = s;
                    set(&mut n, v);
                    cands.push(n);
                }
            }
        }
        cands.push(Schedule {
            vthreads: 3 - s.vthreads,
            ..s
        });
        cands.push(Schedule {
            oc_unroll: !s.oc_unroll,
            ..s
        });
        cands
            .into_iter()
            .filter_map(|n| self.legal.binary_search(&n).ok())
            .filter(|&j| !self.visited[j])
            .collect()
    }

    fn propose(&mut self) -> usize {
        match self.strategy {
            Strategy::Random => {
                while self.visited[self.order[self.cursor]] {
                    self.cursor += 1;
                }
                self.order[self.cursor]
            }
            Strategy::Anneal => match self.current {
                None => self.random_unvisited(),
                Some((cur, _)) => {
                    let n = self.neighbours(cur);
                    if n.is_empty() {
                        self.random_unvisited()
                    } else {
                        n[self.rng.gen_range(0..n.len())]
                    }
                }
            },
        }
    }

    /// Measures one more schedule. Returns `None` once every legal
    /// schedule has been tried.
    pub fn step(&mut self, t: &TimingModel) -> Option<Trial> {
        if self.exhausted() {
            return None;
        }
        let i = self.propose();
        self.visited[i] = true;
        self.unvisited -= 1;
        let m = measure(&self.spec, &self.legal[i], &self.params, t);
        if m.feasible {
            if self.best.is_none_or(|b| m.cycles < b.1) {
                self.best = Some((m.schedule, m.cycles));
            }
            if self.strategy == Strategy::Anneal {
                let accept = match self.current {
                    None => true,
                    Some((_, cur)) if m.cycles <= cur => true,
                    Some((_, cur)) => {
                        let delta = (m.cycles - cur) as f64 / cur as f64;
                        self.rng.gen::<f64>() < (-delta / self.temperature).exp()
                    }
                };
                if accept {
                    self.current = Some((i, m.cycles));
                }
                self.temperature *= self.decay;
            }
        }
        let trial = Trial {
            trial: self.history.len(),
            measurement: m,
            best_cycles: self.best_cycles().unwrap_or(0),
        };
        self.history.push(trial);
        Some(trial)
    }

    /// Runs up to `budget` trials; returns how many ran.
    pub fn run(&mut self, budget: usize, t: &TimingModel) -> usize {
        (0..budget).take_while(|_| self.step(t).is_some()).count()
    }
}

/// Tunes one operator with a fresh state seeded by `cfg.seed`.
pub fn tune_operator(
    spec: &OperatorSpec,
    p: &HardwareParams,
    t: &TimingModel,
    budget: usize,
    cfg: &TunerConfig,
) -> Result<TunerState, TuneError> {
    if budget == 0 {
        return Err(TuneError::Invalid("budget must be at least 1".into()));
    }
    let mut st = TunerState::new(spec, p, cfg, cfg.seed)?;
    st.run(budget, t);
    Ok(st)
}

/// One row of the tuning log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub round: usize,
    pub candidate_id: usize,
    pub operator_id: usize,
    pub trial: usize,
    pub knobs_json: String,
    pub cycles: u64,
    pub best_cycles: u64,
    pub wallclock_ms: f64,
}

impl LogRecord {
    fn from_trial(round: usize, candidate_id: usize, operator_id: usize, t: &Trial) -> Self {
        LogRecord {
            round,
            candidate_id,
            operator_id,
            trial: t.trial,
            knobs_json: t.measurement.schedule.knobs_json(),
            cycles: t.measurement.cycles,
            best_cycles: t.best_cycles,
            wallclock_ms: t.measurement.wallclock_ms,
        }
    }

    fn key(&self) -> (usize, usize, usize, usize) {
        (self.round, self.candidate_id, self.operator_id, self.trial)
    }
}

/// Log rows of a standalone tuning run (round 0, candidate 0).
pub fn state_log(st: &TunerState, operator_id: usize) -> Vec<LogRecord> {
    st.history().iter().map(|t| LogRecord::from_trial(0, 0, operator_id, t)).collect()
}

pub fn write_log_csv<W: Write>(log: &[LogRecord], w: W) -> Result<(), TuneError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in log {
        wr.serialize(r).map_err(|e| TuneError::Csv(e.to_string()))?;
    }
    wr.flush().map_err(|e| TuneError::Csv(e.to_string()))
}

pub fn read_log_csv<R: std::io::Read>(r: R) -> Result<Vec<LogRecord>, TuneError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| TuneError::Csv(e.to_string()))
}

/// Seed of the search for one operator on one design.
pub fn derive_seed(seed: u64, candidate: usize, operator: usize) -> u64 {
    let a = (candidate as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let b = (operator as u64).wrapping_add(1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    seed ^ a ^ b.rotate_left(29)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, TuneError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TuneError::Invalid(e.to_string()))
}

/// Per-operator estimate of one design in microseconds: best measured
/// time, or the pessimistic bound before any trial, or host time when the
/// operator does not map.
fn op_estimate_us(
    st: Option<&TunerState>,
    spec: &OperatorSpec,
    p: &HardwareParams,
    t: &TimingModel,
    cfg: &TunerConfig,
) -> f64 {
    match st {
        Some(s) => match s.best_cycles() {
            Some(c) => c as f64 / p.freq_mhz,
            None => lower_bound_cycles(spec, p, t) as f64 * cfg.pessimism / p.freq_mhz,
        },
        None => spec.ops() as f64 / (cfg.host_gops * 1e3),
    }
}

/// Weighted workload time of one design in microseconds; `None` (worse
/// than anything) when no operator maps to it.
fn design_score(
    states: &[Option<TunerState>],
    w: &WorkloadDef,
    p: &HardwareParams,
    t: &TimingModel,
    cfg: &TunerConfig,
) -> Option<f64> {
    if states.iter().all(Option::is_none) {
        return None;
    }
    Some(
        w.ops
            .iter()
            .zip(states)
            .map(|(op, st)| op.count as f64 * op_estimate_us(st.as_ref(), op, p, t, cfg))
            .sum(),
    )
}

fn cmp_score(a: (Option<f64>, usize), b: (Option<f64>, usize)) -> std::cmp::Ordering {
    let key = |s: Option<f64>| s.unwrap_or(f64::INFINITY);
    key(a.0).total_cmp(&key(b.0)).then(a.1.cmp(&b.1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub candidate_id: usize,
    /// Weighted workload time in microseconds; `null` when nothing maps.
    pub score_us: Option<f64>,
    /// Trials spent on this design so far.
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub survivors: Vec<usize>,
    pub scores: Vec<CandidateScore>,
    pub kept: Vec<usize>,
    pub measurements: usize,
    pub cumulative_measurements: usize,
}

/// Best schedule found for one operator of the winning design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorBest {
    pub operator_id: usize,
    pub name: String,
    pub count: u32,
    pub schedule: Option<Schedule>,
    pub cycles: Option<u64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShaResult {
    /// Candidate ids, best first: later elimination ranks higher, then
    /// score, then id.
    pub ranking: Vec<usize>,
    pub survivor_counts: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
    pub measurements: usize,
    pub winner_operators: Vec<OperatorBest>,
    #[serde(skip)]
    pub log: Vec<LogRecord>,
}

impl ShaResult {
    pub fn winner(&self) -> usize {
        self.ranking[0]
    }
}

/// Successive halving: every round each surviving design gets
/// `budget_per_round` more trials on every operator (continuing its
/// searches), designs are scored, and the better half (rounded up) is kept
/// until one remains. A single candidate still gets one round so that its
/// schedules are tuned.
pub fn successive_halving(
    cands: &[HardwareParams],
    w: &WorkloadDef,
    t: &TimingModel,
    cfg: &TunerConfig,
    jobs: usize,
) -> Result<ShaResult, TuneError> {
    cfg.validate()?;
    if cands.is_empty() || w.ops.is_empty() {
        return Err(TuneError::Invalid("successive halving needs candidates and operators".into()));
    }
    let mut states: Vec<Vec<Option<TunerState>>> = cands
        .iter()
        .enumerate()
        .map(|(c, p)| {
            w.ops
                .iter()
                .enumerate()
                .map(|(o, op)| TunerState::new(op, p, cfg, derive_seed(cfg.seed, c, o)).ok())
                .collect()
        })
        .collect();
    let pool = pool(jobs)?;
    let mut survivors: Vec<usize> = (0..cands.len()).collect();
    let mut eliminated: Vec<(usize, Option<f64>, usize)> = Vec::new();
    let mut rounds = Vec::new();
    let mut counts = Vec::new();
    let mut log = Vec::new();
    let mut total = 0;
    let mut round = 0;
    loop {
        counts.push(survivors.len());
        let mut work: Vec<(usize, usize, &mut TunerState)> = states
            .iter_mut()
            .enumerate()
            .filter(|(c, _)| survivors.contains(c))
            .flat_map(|(c, ops)| {
                ops.iter_mut()
                    .enumerate()
                    .filter_map(move |(o, s)| s.as_mut().map(|s| (c, o, s)))
            })
            .collect();
        let budget = cfg.budget_per_round;
        let mut fresh: Vec<LogRecord> = pool.install(|| {
            work.par_iter_mut()
                .flat_map_iter(|(c, o, st)| {
                    let from = st.trials();
                    st.run(budget, t);
                    st.history()[from..]
                        .iter()
                        .map(|tr| LogRecord::from_trial(round, *c, *o, tr))
                        .collect::<Vec<_>>()
                })
                .collect()
        });
        fresh.sort_by_key(LogRecord::key);
        let spent = fresh.len();
        total += spent;
        log.extend(fresh);
        let mut scored: Vec<(Option<f64>, usize)> = survivors
            .iter()
            .map(|&c| (design_score(&states[c], w, &cands[c], t, cfg), c))
            .collect();
        scored.sort_by(|a, b| cmp_score(*a, *b));
        let keep = if survivors.len() == 1 { 1 } else { survivors.len().div_ceil(2) };
        let kept: Vec<usize> = scored.iter().take(keep).map(|s| s.1).collect();
        for &(s, c) in scored.iter().skip(keep) {
            eliminated.push((round, s, c));
        }
        rounds.push(RoundRecord {
            round,
            survivors: survivors.clone(),
            scores: scored
                .iter()
                .map(|&(s, c)| CandidateScore {
                    candidate_id: c,
                    score_us: s,
                    trials: states[c].iter().flatten().map(TunerState::trials).sum(),
                })
                .collect(),
            kept: kept.clone(),
            measurements: spent,
            cumulative_measurements: total,
        });
        survivors = kept;
        round += 1;
        if survivors.len() == 1 {
            break;
        }
    }
    counts.push(1);
    let winner = survivors[0];
    eliminated.sort_by(|a, b| b.0.cmp(&a.0).then(cmp_score((a.1, a.2), (b.1, b.2))));
    let ranking = std::iter::once(winner).chain(eliminated.iter().map(|e| e.2)).collect();
    let winner_operators = w
        .ops
        .iter()
        .zip(&states[winner])
        .enumerate()
        .map(|(i, (op, st))| OperatorBest {
            operator_id: i,
            name: op.name.clone(),
            count: op.count,
            schedule: st.as_ref().and_then(|s| s.best()).map(|b| b.0),
            cycles: st.as_ref().and_then(TunerState::best_cycles),
            trials: st.as_ref().map_or(0, TunerState::trials),
        })
        .collect();
    Ok(ShaResult {
        ranking,
        survivor_counts: counts,
        rounds,
        measurements: total,
        winner_operators,
        log,
    })
}

/// Every legal schedule of every operator on every design: the reference
/// that successive halving is judged against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExhaustiveResult {
    /// `best[c][o]`: best cycles of operator `o` on design `c`.
    pub best: Vec<Vec<Option<u64>>>,
    pub scores: Vec<Option<f64>>,
    pub winner: usize,
    pub measurements: usize,
}

pub fn exhaustive(
    cands: &[HardwareParams],
    w: &WorkloadDef,
    t: &TimingModel,
    cfg: &TunerConfig,
    jobs: usize,
) -> Result<ExhaustiveResult, TuneError> {
    if cands.is_empty() {
        return Err(TuneError::Invalid("no candidates".into()));
    }
    let mut tasks = Vec::new();
    for (c, p) in cands.iter().enumerate() {
        for (o, op) in w.ops.iter().enumerate() {
            for s in legal_schedules(op, p) {
                tasks.push((c, o, s));
            }
        }
    }
    let results: Vec<Measurement> =
        pool(jobs)?.install(|| tasks.par_iter().map(|&(c, o, s)| measure(&w.ops[o], &s, &cands[c], t)).collect());
    let mut best = vec![vec![None::<u64>; w.ops.len()]; cands.len()];
    for (&(c, o, _), m) in tasks.iter().zip(&results) {
        if m.feasible {
            let b = &mut best[c][o];
            *b = Some(b.map_or(m.cycles, |v| v.min(m.cycles)));
        }
    }
    let scores: Vec<Option<f64>> = best
        .iter()
        .zip(cands)
        .map(|(row, p)| {
            if row.iter().all(Option::is_none) {
                return None;
            }
            Some(
                w.ops
                    .iter()
                    .zip(row)
                    .map(|(op, b)| {
                        op.count as f64
                            * match b {
                                Some(c) => *c as f64 / p.freq_mhz,
                                None => op.ops() as f64 / (cfg.host_gops * 1e3),
                            }
                    })
                    .sum(),
            )
        })
        .collect();
    let winner = (0..cands.len())
        .min_by(|&a, &b| cmp_score((scores[a], a), (scores[b], b)))
        .unwrap();
    Ok(ExhaustiveResult {
        best,
        scores,
        winner,
        measurements: results.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateInfo {
    pub candidate_id: usize,
    pub label: String,
    pub peak_gops: f64,
    pub params: HardwareParams,
}

/// Outcome of a full exploration. `winner` is `None` when no design was
/// feasible on the device.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExploreReport {
    pub workload: String,
    pub device: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub budget_per_round: usize,
    pub enumerated: usize,
    pub feasible: usize,
    pub candidates: Vec<CandidateInfo>,
    pub winner: Option<usize>,
    pub winner_params: Option<HardwareParams>,
    pub ranking: Vec<usize>,
    pub survivor_counts: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
    pub measurements: usize,
    /// Measurements an exhaustive search over the same designs would take.
    pub exhaustive_measurements: usize,
    pub winner_operators: Vec<OperatorBest>,
}

#[derive(Debug, Clone)]
pub struct Exploration {
    pub report: ExploreReport,
    pub log: Vec<LogRecord>,
}

/// Knobs of [`explore`] besides the tuner configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExploreKnobs {
    pub top_k: usize,
    pub jobs: usize,
}

impl Default for ExploreKnobs {
    fn default() -> Self {
        ExploreKnobs { top_k: 8, jobs: 1 }
    }
}

/// Enumerates the space, prunes it against the device, and runs
/// successive halving over the survivors of pruning.
pub fn explore(
    space: &CandidateSpace,
    device: &DeviceProfile,
    w: &WorkloadDef,
    t: &TimingModel,
    cfg: &TunerConfig,
    knobs: ExploreKnobs,
) -> Result<Exploration, TuneError> {
    cfg.validate()?;
    if knobs.top_k == 0 {
        return Err(TuneError::Invalid("top_k must be at least 1".into()));
    }
    let all = enumerate_candidates(space);
    let feasible = prune_candidates(&all, device, usize::MAX);
    let cands: Vec<HardwareParams> = feasible.iter().take(knobs.top_k).cloned().collect();
    let candidates = cands
        .iter()
        .enumerate()
        .map(|(i, p)| CandidateInfo {
            candidate_id: i,
            label: p.label(),
            peak_gops: peak_gops(p),
            params: p.clone(),
        })
        .collect();
    let mut report = ExploreReport {
        workload: w.name.clone(),
        device: device.name.clone(),
        seed: cfg.seed,
        strategy: cfg.strategy,
        budget_per_round: cfg.budget_per_round,
        enumerated: all.len(),
        feasible: feasible.len(),
        candidates,
        winner: None,
        winner_params: None,
        ranking: Vec::new(),
        survivor_counts: Vec::new(),
        rounds: Vec::new(),
        measurements: 0,
        exhaustive_measurements: cands
            .iter()
            .map(|p| w.ops.iter().map(|op| legal_schedules(op, p).len()).sum::<usize>())
            .sum(),
        winner_operators: Vec::new(),
    };
    if cands.is_empty() {
        return Ok(Exploration { report, log: Vec::new() });
    }
    let sha = successive_halving(&cands, w, t, cfg, knobs.jobs)?;
    report.winner = Some(sha.winner());
    report.winner_params = Some(cands[sha.winner()].clone());
    report.ranking = sha.ranking;
    report.survivor_counts = sha.survivor_counts;
    report.rounds = sha.rounds;
    report.measurements = sha.measurements;
    report.winner_operators = sha.winner_operators;
    Ok(Exploration { report, log: sha.log })
}
