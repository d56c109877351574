//! `vta`: assemble, simulate, compile and explore accelerator designs.
//!
//! Machine-readable results go to stdout or files; logs go to stderr.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use vta::compiler::OperatorSpec;
use vta::config::{CandidateSpace, DeviceProfile, HardwareParams};
use vta::isa::{self, Program, PROGRAM_VERSION};
use vta::refops::{Tensor, TENSOR_VERSION};
use vta::runtime::{execute_graph, Graph, Runtime};
use vta::sim::{Dram, SimMachine, SimOptions, TimingModel};
use vta::tuner::{self, ExploreKnobs, LogRecord, OperatorBest, Strategy, TunerConfig};
use vta::workloads::{self, WorkloadDef};

mod report;

/// Version of the tuning-log CSV and report JSON layouts.
const LOG_VERSION: u32 = 1;

fn long_version() -> &'static str {
    Box::leak(
        format!(
            "{} (program container VTAP v{PROGRAM_VERSION}, tensor container VTAT v{TENSOR_VERSION}, tuning log v{LOG_VERSION})",
            env!("CARGO_PKG_VERSION")
        )
        .into_boxed_str(),
    )
}

#[derive(Parser)]
#[command(name = "vta", version = long_version(), about = "Parameterizable tensor accelerator toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble program text into a binary container.
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print a binary program as canonical text.
    Disasm {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a program (binary or text) against a hardware configuration.
    Validate {
        program: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate a program on a DRAM image.
    Run(RunArgs),
    /// Execute an operator graph, offloading what maps to the device.
    ExecGraph(ExecGraphArgs),
    /// Tune the schedules of a workload's operators on one design.
    Tune(TuneArgs),
    /// Prune a design space and select a design by successive halving.
    Explore(ExploreArgs),
    /// Turn tuning logs and exploration reports into plot series.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    timing: Option<PathBuf>,
    #[arg(long)]
    program: PathBuf,
    /// Initial DRAM as a u8 tensor container.
    #[arg(long)]
    dram_in: PathBuf,
    #[arg(long)]
    dram_out: Option<PathBuf>,
    /// Instruction trace as JSON Lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Execute in program order on one unit instead of pipelined.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ExecGraphArgs {
    /// Graph JSON file or the name of a bundled graph or workload.
    #[arg(long)]
    graph: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    timing: Option<PathBuf>,
    /// Overrides the graph's weight seed.
    #[arg(long)]
    seed: Option<u64>,
    /// `name=path` of an i32 tensor container for a graph input.
    #[arg(long = "feed", value_name = "NAME=PATH")]
    feeds: Vec<String>,
    /// Directory for output tensors.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Reporting cost of host operators.
    #[arg(long, default_value_t = 4.0)]
    host_cycles_per_op: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Random,
    Anneal,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Strategy {
        match s {
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Anneal => Strategy::Anneal,
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "anneal")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    timing: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    t0: f64,
    #[arg(long, default_value_t = 0.95)]
    decay: f64,
    #[arg(long, default_value_t = 3.0)]
    pessimism: f64,
    #[arg(long, default_value_t = 1.0)]
    host_gops: f64,
}

impl SearchArgs {
    fn config(&self, budget_per_round: usize) -> TunerConfig {
        TunerConfig {
            strategy: self.strategy.into(),
            seed: self.seed,
            t0: self.t0,
            decay: self.decay,
            pessimism: self.pessimism,
            host_gops: self.host_gops,
            budget_per_round,
        }
    }
}

#[derive(Args)]
struct TuneArgs {
    /// Workload JSON file or bundled workload name.
    #[arg(long)]
    workload: String,
    /// Tune only this operator index.
    #[arg(long)]
    operator: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    budget: usize,
    #[command(flatten)]
    search: SearchArgs,
    /// Tuning log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Best schedules JSON (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExploreArgs {
    /// Candidate space JSON; the bundled 8-design space when absent.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Device JSON file or one of desk, ultra96, pynq-z1.
    #[arg(long, default_value = "desk")]
    device: String,
    #[arg(long, default_value = "toy-conv-mix")]
    workload: String,
    #[arg(long, default_value_t = 16)]
    budget_per_round: usize,
    #[arg(long, default_value_t = 8)]
    top_k: usize,
    #[command(flatten)]
    search: SearchArgs,
    /// Receives tuning.csv and report.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Tuning log CSV from `tune` or `explore`.
    #[arg(long)]
    log: PathBuf,
    /// Exploration report JSON, for the survivor table.
    #[arg(long)]
    explore: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub enum Failure {
    /// IO or parse errors.
    Input(String),
    Validation(String),
    Execution(String),
    /// Exploration found no feasible design.
    Empty(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Execution(_) => 3,
            Failure::Empty(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Validation(m) | Failure::Execution(m) | Failure::Empty(m) => m,
        }
    }
}

type Res<T> = Result<T, Failure>;

fn input<E: std::fmt::Display>(ctx: &Path) -> impl Fn(E) -> Failure + '_ {
    move |e| Failure::Input(format!("{}: {e}", ctx.display()))
}

pub(crate) fn read_bytes(p: &Path) -> Res<Vec<u8>> {
    fs::read(p).map_err(input(p))
}

pub(crate) fn write_bytes(p: &Path, bytes: &[u8]) -> Res<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(input(dir))?;
    }
    fs::write(p, bytes).map_err(input(p))
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Res<T> {
    let text = fs::read_to_string(p).map_err(input(p))?;
    serde_json::from_str(&text).map_err(input(p))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn emit(out: Option<&Path>, text: &str) -> Res<()> {
    match out {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Input(format!("stdout: {e}"))),
    }
}

fn load_params(p: Option<&Path>) -> Res<HardwareParams> {
    let hw = match p {
        Some(p) => read_json(p)?,
        None => HardwareParams::default(),
    };
    hw.validate().map_err(|e| Failure::Validation(format!("hardware config: {e}")))?;
    Ok(hw)
}

fn load_timing(p: Option<&Path>) -> Res<TimingModel> {
    let t: TimingModel = match p {
        Some(p) => read_json(p)?,
        None => TimingModel::default(),
    };
    t.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    Ok(t)
}

fn load_device(name: &str) -> Res<DeviceProfile> {
    let d = match name {
        "desk" => workloads::desk_device(),
        "ultra96" => DeviceProfile::ultra96(),
        "pynq-z1" => DeviceProfile::pynq_z1(),
        path => read_json(Path::new(path))?,
    };
    d.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    Ok(d)
}

/// A bundled workload by name, or a workload or graph JSON file.
fn load_workload(name: &str) -> Res<WorkloadDef> {
    if let Some(w) = workloads::builtin_workloads().remove(name) {
        return Ok(w);
    }
    if name == "resnet-tiny" {
        return WorkloadDef::from_graph(&workloads::resnet_tiny()).map_err(|e| Failure::Validation(e.to_string()));
    }
    let path = Path::new(name);
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{name}: not a bundled workload ({e})")))?;
    if let Ok(w) = serde_json::from_str::<WorkloadDef>(&text) {
        if w.ops.is_empty() {
            return Err(Failure::Validation(format!("{name}: workload is empty")));
        }
        for op in &w.ops {
            op.validate().map_err(|e| Failure::Validation(format!("{name}: {e}")))?;
        }
        return Ok(w);
    }
    let g = Graph::from_json(&text).map_err(input(path))?;
    WorkloadDef::from_graph(&g).map_err(|e| Failure::Validation(e.to_string()))
}

fn load_graph(name: &str) -> Res<Graph> {
    if name == "resnet-tiny" {
        return Ok(workloads::resnet_tiny());
    }
    if let Some(w) = workloads::builtin_workloads().remove(name) {
        return Ok(w.to_graph(0));
    }
    let path = Path::new(name);
    let text = fs::read_to_string(path).map_err(input(path))?;
    Graph::from_json(&text).map_err(input(path))
}

fn load_program(path: &Path) -> Res<Program> {
    let bytes = read_bytes(path)?;
    let text_ext = matches!(path.extension().and_then(|e| e.to_str()), Some("s" | "asm" | "txt"));
    if text_ext {
        let text = String::from_utf8(bytes).map_err(input(path))?;
        isa::assemble(&text).map_err(input(path))
    } else {
        isa::read_program(&bytes[..]).map_err(input(path))
    }
}

fn cmd_asm(input_path: &Path, output: &Path) -> Res<()> {
    let text = fs::read_to_string(input_path).map_err(input(input_path))?;
    let prog = isa::assemble(&text).map_err(input(input_path))?;
    let mut buf = Vec::new();
    isa::write_program(&mut buf, &prog).map_err(|e| Failure::Validation(e.to_string()))?;
    write_bytes(output, &buf)?;
    eprintln!("assembled {} instructions, {} micro-ops", prog.instrs.len(), prog.uops.len());
    Ok(())
}

fn cmd_disasm(input_path: &Path, output: Option<&Path>) -> Res<()> {
    let bytes = read_bytes(input_path)?;
    let prog = isa::read_program(&bytes[..]).map_err(input(input_path))?;
    emit(output, &isa::disassemble(&prog))
}

fn cmd_validate(program: &Path, config: Option<&Path>) -> Res<()> {
    let p = load_params(config)?;
    let prog = load_program(program)?;
    let v = isa::validate_program(&prog, &p);
    let mut out = String::new();
    for x in &v {
        out.push_str(&format!("{x}\n"));
    }
    if v.is_empty() {
        out.push_str("ok\n");
    }
    emit(None, &out)?;
    if v.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{} violation(s)", v.len())))
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    total_cycles: u64,
    busy: &'a vta::sim::BusyCycles,
    instructions: usize,
    dram_bytes_read: u64,
    dram_bytes_written: u64,
    tokens_balanced: bool,
    hazards: usize,
    warnings: &'a [String],
}

fn cmd_run(a: &RunArgs) -> Res<()> {
    let p = load_params(a.config.as_deref())?;
    let t = load_timing(a.timing.as_deref())?;
    let prog = load_program(&a.program)?;
    let image = Tensor::<u8>::read_from(&read_bytes(&a.dram_in)?[..]).map_err(input(&a.dram_in))?;
    let mut dram = Dram::from_bytes(image.into_data());
    let opts = SimOptions {
        trace: a.trace.is_some(),
        ..SimOptions::default()
    };
    let mut m = SimMachine::new(p, t).with_options(opts);
    let r = if a.sequential { m.run_sequential(&mut dram, &prog) } else { m.run(&mut dram, &prog) }
        .map_err(|e| Failure::Execution(format!("simulation failed: {e}")))?;
    if let Some(path) = &a.dram_out {
        let mut buf = Vec::new();
        let len = dram.len();
        Tensor::new(vec![len], dram.into_bytes())
            .and_then(|t| t.write_to(&mut buf))
            .map_err(input(path))?;
        write_bytes(path, &buf)?;
    }
    if let Some(path) = &a.trace {
        let mut buf = Vec::new();
        r.write_trace_jsonl(&mut buf).map_err(input(path))?;
        write_bytes(path, &buf)?;
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    emit(
        None,
        &to_json(&RunSummary {
            total_cycles: r.total_cycles,
            busy: &r.busy,
            instructions: r.instructions,
            dram_bytes_read: r.dram_bytes_read,
            dram_bytes_written: r.dram_bytes_written,
            tokens_balanced: r.tokens_balanced(),
            hazards: r.hazards.len(),
            warnings: &r.warnings,
        }),
    )
}

fn cmd_exec_graph(a: &ExecGraphArgs) -> Res<()> {
    let p = load_params(a.config.as_deref())?;
    let t = load_timing(a.timing.as_deref())?;
    let mut g = load_graph(&a.graph)?;
    if let Some(s) = a.seed {
        g.seed = s;
    }
    g.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    let mut feeds = BTreeMap::new();
    for f in &a.feeds {
        let (name, path) = f
            .split_once('=')
            .ok_or_else(|| Failure::Input(format!("--feed {f}: expected NAME=PATH")))?;
        let path = Path::new(path);
        let v = Tensor::<i32>::read_from(&read_bytes(path)?[..]).map_err(input(path))?;
        feeds.insert(name.to_string(), v);
    }
    let mut rt = Runtime::new(p, t);
    let run = execute_graph(&mut rt, &g, &feeds, a.host_cycles_per_op).map_err(|e| Failure::Execution(e.to_string()))?;
    if let Some(dir) = &a.out_dir {
        for (name, v) in &run.outputs {
            let mut buf = Vec::new();
            v.write_to(&mut buf).map_err(input(dir))?;
            write_bytes(&dir.join(format!("{name}.vtat")), &buf)?;
        }
    }
    for n in &run.report.per_node {
        if let Some(r) = &n.fallback_reason {
            eprintln!("{} runs on the host: {r}", n.name);
        }
    }
    emit(None, &to_json(&run.report))
}

#[derive(Serialize)]
struct TuneReport {
    workload: String,
    design: String,
    params: HardwareParams,
    seed: u64,
    strategy: Strategy,
    budget: usize,
    operators: Vec<OperatorBest>,
    /// Operators left on the host, with the reason.
    host_only: Vec<(usize, String)>,
}

fn cmd_tune(a: &TuneArgs) -> Res<()> {
    let p = load_params(a.config.as_deref())?;
    let t = load_timing(a.search.timing.as_deref())?;
    let w = load_workload(&a.workload)?;
    let cfg = a.search.config(a.budget.max(1));
    cfg.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    if a.budget == 0 {
        return Err(Failure::Validation("--budget must be at least 1".into()));
    }
    let ids: Vec<usize> = match a.operator {
        Some(i) if i < w.ops.len() => vec![i],
        Some(i) => return Err(Failure::Validation(format!("operator {i} out of range (workload has {})", w.ops.len()))),
        None => (0..w.ops.len()).collect(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.search.jobs.max(1))
        .build()
        .map_err(|e| Failure::Execution(e.to_string()))?;
    let results: Vec<(usize, Result<tuner::TunerState, tuner::TuneError>)> = pool.install(|| {
        ids.par_iter()
            .map(|&i| {
                let op: &OperatorSpec = &w.ops[i];
                let c = TunerConfig {
                    seed: tuner::derive_seed(cfg.seed, 0, i),
                    ..cfg
                };
                (i, tuner::tune_operator(op, &p, &t, a.budget, &c))
            })
            .collect()
    });
    let mut log: Vec<LogRecord> = Vec::new();
    let mut operators = Vec::new();
    let mut host_only = Vec::new();
    for (i, r) in results {
        match r {
            Ok(st) => {
                log.extend(tuner::state_log(&st, i));
                operators.push(OperatorBest {
                    operator_id: i,
                    name: w.ops[i].name.clone(),
                    count: w.ops[i].count,
                    schedule: st.best().map(|b| b.0),
                    cycles: st.best_cycles(),
                    trials: st.trials(),
                });
            }
            Err(e) => {
                eprintln!("operator {i}: {e}");
                host_only.push((i, e.to_string()));
            }
        }
    }
    if let Some(path) = &a.log {
        let mut buf = Vec::new();
        tuner::write_log_csv(&log, &mut buf).map_err(|e| Failure::Execution(e.to_string()))?;
        write_bytes(path, &buf)?;
    }
    let rep = TuneReport {
        workload: w.name.clone(),
        design: p.label(),
        params: p,
        seed: cfg.seed,
        strategy: cfg.strategy,
        budget: a.budget,
        operators,
        host_only,
    };
    emit(a.out.as_deref(), &to_json(&rep))
}

fn cmd_explore(a: &ExploreArgs) -> Res<()> {
    let space: CandidateSpace = match &a.space {
        Some(p) => read_json(p)?,
        None => workloads::toy_space(),
    };
    let device = load_device(&a.device)?;
    let w = load_workload(&a.workload)?;
    let t = load_timing(a.search.timing.as_deref())?;
    let cfg = a.search.config(a.budget_per_round);
    cfg.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    let knobs = ExploreKnobs {
        top_k: a.top_k,
        jobs: a.search.jobs,
    };
    let e = tuner::explore(&space, &device, &w, &t, &cfg, knobs).map_err(|e| Failure::Validation(e.to_string()))?;
    let mut csv = Vec::new();
    tuner::write_log_csv(&e.log, &mut csv).map_err(|e| Failure::Execution(e.to_string()))?;
    write_bytes(&a.out_dir.join("tuning.csv"), &csv)?;
    write_bytes(&a.out_dir.join("report.json"), to_json(&e.report).as_bytes())?;
    let r = &e.report;
    eprintln!(
        "{} designs enumerated, {} feasible, {} explored, {} measurements",
        r.enumerated,
        r.feasible,
        r.candidates.len(),
        r.measurements
    );
    match r.winner {
        Some(wi) => {
            eprintln!("winner: candidate {wi} {}", r.candidates[wi].label);
            Ok(())
        }
        None => Err(Failure::Empty(format!("no design in the space is feasible on {}", device.name))),
    }
}

fn dispatch(cli: Cli) -> Res<()> {
    match cli.cmd {
        Cmd::Asm { input, output } => cmd_asm(&input, &output),
        Cmd::Disasm { input, output } => cmd_disasm(&input, output.as_deref()),
        Cmd::Validate { program, config } => cmd_validate(&program, config.as_deref()),
        Cmd::Run(a) => cmd_run(&a),
        Cmd::ExecGraph(a) => cmd_exec_graph(&a),
        Cmd::Tune(a) => cmd_tune(&a),
        Cmd::Explore(a) => cmd_explore(&a),
        Cmd::Report(a) => report::cmd_report(&a.log, a.explore.as_deref(), &a.out_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
