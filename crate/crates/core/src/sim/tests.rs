use super::*;
use crate::isa::{assemble, AluOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit() -> HardwareParams {
    HardwareParams::with_tile_counts(1, 1, 1, 16, 16, 16, 16)
}

/// inp tile 0 at byte 0, wgt tile 1 at byte 1, acc tile 1 at bytes 4..8,
/// out tile 8 at byte 8.
fn single_mac(init: &str) -> Program {
    assemble(&format!(
        "LOAD scope=INP y_size=1 x_size=1 x_stride=1\n\
         LOAD scope=WGT dram_base=1 y_size=1 x_size=1 x_stride=1 push_next=1\n\
         LOAD scope=UOP y_size=1 x_size=1 x_stride=1\n\
         {init}\n\
         GEMM uop_end=1 iter_out=1 iter_in=1 pop_prev=1 push_next=1\n\
         STORE dram_base=8 y_size=1 x_size=1 x_stride=1 pop_prev=1\n\
         FINISH\n@uops\nacc=0 inp=0 wgt=0"
    ))
    .unwrap()
}

fn mac_dram() -> Dram {
    let mut d = Dram::new(16);
    d.bytes_mut()[0] = 3;
    d.bytes_mut()[1] = 4;
    d.bytes_mut()[4..8].copy_from_slice(&5i32.to_le_bytes());
    d
}

#[test]
fn single_mac_with_reset() {
    let prog = single_mac("GEMM reset=1 uop_end=1 iter_out=1 iter_in=1");
    let mut d = mac_dram();
    let r = run(&unit(), &TimingModel::default(), &mut d, &prog).unwrap();
    assert_eq!(d.bytes()[8], 12);
    assert!(r.tokens_balanced());
    assert!(r.hazards.is_empty(), "{:?}", r.hazards);
    assert!(r.hazard_checked);
}

/// Same as [`single_mac`] but the accumulator starts from the ACC tile in DRAM.
fn preset_mac() -> Program {
    assemble(
        "LOAD scope=INP y_size=1 x_size=1 x_stride=1\n\
         LOAD scope=ACC dram_base=1 y_size=1 x_size=1 x_stride=1\n\
         LOAD scope=WGT dram_base=1 y_size=1 x_size=1 x_stride=1 push_next=1\n\
         LOAD scope=UOP y_size=1 x_size=1 x_stride=1\n\
         GEMM uop_end=1 iter_out=1 iter_in=1 pop_prev=1 push_next=1\n\
         STORE dram_base=8 y_size=1 x_size=1 x_stride=1 pop_prev=1\n\
         FINISH\n@uops\nacc=0 inp=0 wgt=0",
    )
    .unwrap()
}

#[test]
fn single_mac_with_preset_accumulator() {
    let mut d = mac_dram();
    run(&unit(), &TimingModel::default(), &mut d, &preset_mac()).unwrap();
    assert_eq!(d.bytes()[8], 17);
}

#[test]
fn sequential_matches_on_examples() {
    for prog in [single_mac("GEMM reset=1 uop_end=1 iter_out=1 iter_in=1"), preset_mac()] {
        let (mut a, mut b) = (mac_dram(), mac_dram());
        run(&unit(), &TimingModel::default(), &mut a, &prog).unwrap();
        let r = run_sequential(&unit(), &TimingModel::default(), &mut b, &prog).unwrap();
        assert_eq!(a, b);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    }
}

#[test]
fn reset_zeroes_every_visited_tile() {
    let p = unit();
    let mut m = SimMachine::new(p.clone(), TimingModel::default());
    let mut d = Dram::new(64);
    for i in 0..4 {
        d.bytes_mut()[i * 4..i * 4 + 4].copy_from_slice(&(i as i32 + 9).to_le_bytes());
    }
    let prog = assemble(
        "LOAD scope=ACC y_size=1 x_size=4 x_stride=4 push_next=1\n\
         LOAD scope=UOP y_size=1 x_size=1 x_stride=1\n\
         GEMM reset=1 uop_end=1 iter_out=4 iter_in=1 dst_factor_out=1 pop_prev=1\n\
         FINISH\n@uops\nacc=0",
    )
    .unwrap();
    m.run(&mut d, &prog).unwrap();
    for t in 0..4 {
        assert_eq!(m.sram().acc.tile(t), &[0]);
    }
}

#[test]
fn load_padding_layout() {
    let p = HardwareParams::with_tile_counts(1, 1, 1, 16, 32, 16, 16);
    let mut d = Dram::new(16);
    for (i, b) in d.bytes_mut().iter_mut().enumerate() {
        *b = i as u8 + 1;
    }
    let prog = assemble(
        "LOAD scope=INP y_size=2 x_size=3 x_stride=3 x_pad_left=1 x_pad_right=1 y_pad_top=1\nFINISH",
    )
    .unwrap();
    let mut m = SimMachine::new(p, TimingModel::default());
    // dirty the buffer first so zero fill is observable
    let dirty = assemble("LOAD scope=INP y_size=1 x_size=15 x_stride=15\nFINISH").unwrap();
    m.run(&mut d, &dirty).unwrap();
    m.run(&mut d, &prog).unwrap();
    let got: Vec<i32> = (0..15).map(|t| m.sram().inp.tile(t)[0]).collect();
    assert_eq!(got, vec![0, 0, 0, 0, 0, 0, 1, 2, 3, 0, 0, 4, 5, 6, 0]);
}

#[test]
fn zero_extent_load_costs_latency_only() {
    let t = TimingModel::default();
    let prog = assemble("LOAD scope=INP sram_base=3 y_size=0\nFINISH").unwrap();
    let mut d = Dram::new(0);
    let r = run_sequential(&unit(), &t, &mut d, &prog).unwrap();
    assert_eq!(r.trace[0].end - r.trace[0].start, t.dram_latency_cycles);
    assert_eq!(r.dram_bytes_read, 0);
}

#[test]
fn stride_equal_to_width_is_flat_copy() {
    let p = HardwareParams::with_tile_counts(1, 2, 1, 16, 16, 16, 16);
    let mut d = Dram::new(32);
    for (i, b) in d.bytes_mut().iter_mut().enumerate() {
        *b = (i as i8 - 10) as u8;
    }
    let mut a = SimMachine::new(p.clone(), TimingModel::default());
    let mut b = SimMachine::new(p, TimingModel::default());
    a.run(&mut d, &assemble("LOAD scope=INP y_size=3 x_size=4 x_stride=4\nFINISH").unwrap())
        .unwrap();
    b.run(&mut d, &assemble("LOAD scope=INP y_size=1 x_size=12 x_stride=12\nFINISH").unwrap())
        .unwrap();
    for t in 0..12 {
        assert_eq!(a.sram().inp.tile(t), b.sram().inp.tile(t));
        assert_eq!(a.sram().inp.tile(t)[0], (2 * t) as i32 - 10);
    }
}

#[test]
fn dma_cycle_formula() {
    let p = HardwareParams::default();
    let t = TimingModel::default();
    // 2x3 input tiles of 16 bytes: 64 + ceil(96 / 8)
    let prog = assemble("LOAD scope=INP y_size=2 x_size=3 x_stride=3\nFINISH").unwrap();
    let mut d = Dram::new(96);
    let r = run(&p, &t, &mut d, &prog).unwrap();
    assert_eq!(r.busy.load, 64 + 12);
}

fn machine_with(p: &HardwareParams, inp: &[i8], wgt: &[i8]) -> (SimMachine, Dram) {
    let mut d = Dram::new(inp.len() + wgt.len());
    for (b, &v) in d.bytes_mut().iter_mut().zip(inp.iter().chain(wgt)) {
        *b = v as u8;
    }
    (SimMachine::new(p.clone(), TimingModel::default()), d)
}

#[test]
fn identity_weight_tile() {
    let p = HardwareParams::with_tile_counts(1, 2, 2, 16, 16, 16, 16);
    // inp tile 0 = [1,2] at bytes 0..2; wgt tile 1 = identity at bytes 4..8
    let (mut m, mut d) = machine_with(&p, &[1, 2, 0, 0], &[1, 0, 0, 1]);
    let prog = assemble(
        "LOAD scope=INP y_size=1 x_size=1 x_stride=1\n\
         LOAD scope=WGT dram_base=1 y_size=1 x_size=1 x_stride=1 push_next=1\n\
         LOAD scope=UOP y_size=1 x_size=1 x_stride=1\n\
         GEMM reset=1 uop_end=1 iter_out=1 iter_in=1\n\
         GEMM uop_end=1 iter_out=1 iter_in=1 pop_prev=1\n\
         GEMM uop_end=1 iter_out=1 iter_in=1\n\
         FINISH\n@uops\nacc=0 inp=0 wgt=0",
    )
    .unwrap();
    m.run(&mut d, &prog).unwrap();
    assert_eq!(m.sram().acc.tile(0), &[2, 4]);
}

#[test]
fn gemm_matches_triple_loop() {
    let p = HardwareParams::with_tile_counts(2, 4, 4, 16, 16, 16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inp: Vec<i8> = (0..8).map(|_| rng.gen()).collect();
    let wgt: Vec<i8> = (0..16).map(|_| rng.gen()).collect();
    // inp tile 0 (8 bytes), wgt tile 1 (bytes 16..32)
    let mut all = inp.clone();
    all.extend([0; 8]);
    let (mut m, mut d) = machine_with(&p, &all, &wgt);
    let prog = assemble(
        "LOAD scope=INP y_size=1 x_size=1 x_stride=1\n\
         LOAD scope=WGT dram_base=1 y_size=1 x_size=1 x_stride=1 push_next=1\n\
         LOAD scope=UOP y_size=1 x_size=1 x_stride=1\n\
         GEMM reset=1 uop_end=1 iter_out=1 iter_in=1\n\
         GEMM uop_end=1 iter_out=1 iter_in=1 pop_prev=1\n\
         FINISH\n@uops\nacc=0 inp=0 wgt=0",
    )
    .unwrap();
    m.run(&mut d, &prog).unwrap();
    for b in 0..2 {
        for o in 0..4 {
            let mut s = 0i32;
            for i in 0..4 {
                s += inp[b * 4 + i] as i32 * wgt[o * 4 + i] as i32;
            }
            assert_eq!(m.sram().acc.tile(0)[b * 4 + o], s);
        }
    }
}

#[test]
fn accumulator_wraps_at_acc_bits() {
    let mut p = HardwareParams::with_tile_counts(1, 1, 1, 16, 16, 16, 16);
    p.acc_bits = 16;
    p.acc_buf_bytes = 32;
    let (mut m, mut d) = machine_with(&p, &[127], &[127]);
    let mut text = String::from(
        "LOAD scope=INP y_size=1 x_size=1 x_stride=1\n\
         LOAD scope=WGT dram_base=1 y_size=1 x_size=1 x_stride=1 push_next=1\n\
         LOAD scope=UOP y_size=1 x_size=1 x_stride=1\n\
         GEMM reset=1 uop_end=1 iter_out=1 iter_in=1\n\
         GEMM uop_end=1 iter_out=3 iter_in=1 pop_prev=1\n",
    );
    text.push_str("FINISH\n@uops\nacc=0 inp=0 wgt=0");
    m.run(&mut d, &assemble(&text).unwrap()).unwrap();
    // 3 * 16129 = 48387 wraps to 48387 - 65536
    assert_eq!(m.sram().acc.tile(0)[0], 48387 - 65536);
}

fn alu_program(op: &str, extra: &str, values: &[i32]) -> (SimMachine, Program, Dram) {
    let p = HardwareParams::with_tile_counts(1, 1, 2, 16, 16, 16, 16);
    let mut d = Dram::new(values.len() * 4);
    for (i, v) in values.iter().enumerate() {
        d.bytes_mut()[i * 4..i * 4 + 4].copy_from_slice(&v.to_le_bytes());
    }
    let tiles = values.len() / 2;
    let prog = assemble(&format!(
        "LOAD scope=ACC y_size=1 x_size={tiles} x_stride={tiles} push_next=1\n\
         LOAD scope=UOP y_size=1 x_size=1 x_stride=1\n\
         ALU op={op} uop_end=1 iter_out=1 iter_in=1 pop_prev=1 {extra}\n\
         FINISH\n@uops\nacc=0 inp=1"
    ))
    .unwrap();
    (SimMachine::new(p, TimingModel::default()), prog, d)
}

#[test]
fn alu_relu_and_shift() {
    let (mut m, prog, mut d) = alu_program("MAX", "use_imm=1 imm=0", &[-3, 5]);
    m.run(&mut d, &prog).unwrap();
    assert_eq!(m.sram().acc.tile(0), &[0, 5]);
    let (mut m, prog, mut d) = alu_program("SHR", "use_imm=1 imm=1", &[5, -3]);
    m.run(&mut d, &prog).unwrap();
    assert_eq!(m.sram().acc.tile(0), &[2, -2]);
}

#[test]
fn alu_tile_to_tile_add_matches_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vals: Vec<i32> = (0..4).map(|_| rng.gen()).collect();
    let (mut m, prog, mut d) = alu_program("ADD", "", &vals);
    m.run(&mut d, &prog).unwrap();
    assert_eq!(
        m.sram().acc.tile(0),
        &[vals[0].wrapping_add(vals[2]), vals[1].wrapping_add(vals[3])]
    );
}

#[derive(serde::Deserialize)]
struct AluVector {
    op: String,
    a: i32,
    b: i32,
    expected: i32,
}

/// The same vectors are checked against the host reference operators.
#[test]
fn alu_conformance_vectors() {
    let vectors: Vec<AluVector> =
        serde_json::from_str(include_str!("../../tests/data/alu_vectors.json")).unwrap();
    for v in &vectors {
        let (op, imm) = if v.op == "SHR" {
            ("SHR", format!("use_imm=1 imm={}", v.b))
        } else {
            (v.op.as_str(), String::new())
        };
        let (mut m, prog, mut d) = alu_program(op, &imm, &[v.a, 0, v.b, 0]);
        m.run(&mut d, &prog).unwrap();
        assert_eq!(m.sram().acc.tile(0)[0], v.expected, "{} {} {}", v.op, v.a, v.b);
        assert_eq!(AluOp::ALL.iter().find(|o| o.name() == v.op).unwrap().apply(v.a, v.b), v.expected);
    }
}

#[test]
fn finish_only_program() {
    let prog = assemble("FINISH").unwrap();
    let mut d = Dram::new(4);
    let a = run(&unit(), &TimingModel::default(), &mut d, &prog).unwrap();
    let b = run_sequential(&unit(), &TimingModel::default(), &mut d, &prog).unwrap();
    for r in [&a, &b] {
        assert_eq!(r.dram_bytes_read + r.dram_bytes_written, 0);
        assert!(r.total_cycles <= 2);
    }
    assert_eq!(d.bytes(), &[0; 4]);
}

#[test]
fn imbalanced_tokens_warn() {
    let prog = assemble("LOAD scope=INP y_size=0 push_next=1\nFINISH").unwrap();
    let mut d = Dram::new(0);
    let r = run_sequential(&unit(), &TimingModel::default(), &mut d, &prog).unwrap();
    assert_eq!(r.warnings.len(), 1);
    assert!(r.warnings[0].contains("l2c"));
    let r = run(&unit(), &TimingModel::default(), &mut d, &prog).unwrap();
    assert!(!r.tokens_balanced());
}

#[test]
fn deadlock_reports_blocked_modules() {
    let prog = assemble(
        "LOAD scope=INP y_size=0 pop_next=1 push_next=1\n\
         GEMM reset=1 uop_end=1 iter_out=1 iter_in=1 pop_prev=1 push_prev=1\n\
         FINISH",
    )
    .unwrap();
    let mut d = Dram::new(0);
    let err = run(&unit(), &TimingModel::default(), &mut d, &prog).unwrap_err();
    let SimError::Deadlock(b) = &err else { panic!("{err}") };
    assert_eq!(b.len(), 2);
    assert_eq!(b[0].module, Module::Load);
    assert_eq!(b[0].waiting_on, vec![Queue::C2l]);
    assert_eq!(b[1].waiting_on, vec![Queue::L2c]);
    assert!(err.to_string().contains("compute blocked at instruction 1"));
}

#[test]
fn out_of_bounds_names_instruction() {
    let prog = assemble("LOAD scope=INP dram_base=100 y_size=1 x_size=1 x_stride=1\nFINISH").unwrap();
    let mut d = Dram::new(4);
    assert_eq!(
        run(&unit(), &TimingModel::default(), &mut d, &prog).unwrap_err(),
        SimError::OutOfBounds {
            index: 0,
            what: "DRAM byte 100".into()
        }
    );
}

#[test]
fn missing_flags_show_up_as_hazard() {
    // The GEMM does not wait for the weight load: both start early and overlap.
    let prog = single_mac("GEMM reset=1 uop_end=1 iter_out=1 iter_in=1");
    let mut unsynced = prog.clone();
    for insn in &mut unsynced.instrs {
        *insn.deps_mut() = DepFlags::NONE;
    }
    let mut d = mac_dram();
    let r = run(&unit(), &TimingModel::default(), &mut d, &unsynced).unwrap();
    assert!(r.hazards.iter().any(|h| h.kind == HazardKind::Raw));
}

#[test]
fn pipelined_overlaps_and_is_deterministic() {
    let prog = single_mac("GEMM reset=1 uop_end=1 iter_out=1 iter_in=1");
    let mut a = mac_dram();
    let r1 = run(&unit(), &TimingModel::default(), &mut a, &prog).unwrap();
    let mut b = mac_dram();
    let r2 = run(&unit(), &TimingModel::default(), &mut b, &prog).unwrap();
    assert_eq!(r1, r2);
    let mut c = mac_dram();
    let s = run_sequential(&unit(), &TimingModel::default(), &mut c, &prog).unwrap();
    assert!(r1.total_cycles <= s.total_cycles);
    assert!(r1.total_cycles >= r1.busy.max());
    for m in Module::ALL {
        let mut iv: Vec<_> = r1.trace.iter().filter(|t| t.module == m).map(|t| (t.start, t.end)).collect();
        iv.sort();
        assert!(iv.windows(2).all(|w| w[0].1 <= w[1].0));
    }
    let mut buf = Vec::new();
    r1.write_trace_jsonl(&mut buf).unwrap();
    let lines: Vec<_> = std::str::from_utf8(&buf).unwrap().lines().collect();
    assert_eq!(lines.len(), prog.instrs.len());
    assert!(lines[0].contains("\"module\":\"load\""));
}

#[test]
fn timing_only_skips_data() {
    let prog = single_mac("GEMM reset=1 uop_end=1 iter_out=1 iter_in=1");
    let mut d = mac_dram();
    let mut m = SimMachine::new(unit(), TimingModel::default()).with_options(SimOptions::timing_only());
    let r = m.run(&mut d, &prog).unwrap();
    let full = run(&unit(), &TimingModel::default(), &mut mac_dram(), &prog).unwrap();
    assert_eq!(d, mac_dram());
    assert_eq!(r.total_cycles, full.total_cycles);
    assert!(!r.hazard_checked);
}
