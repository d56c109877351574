use std::collections::BTreeMap;

use super::*;
use crate::compiler::{random_case, Block, DramLayout, Epilogue, Footprint, OperatorSpec, Schedule, Step};
use crate::isa::{AluOp, DepFlags, GemmInsn};
use crate::sim::Dram;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn uops(n: usize, tag: u16) -> Vec<MicroOp> {
    (0..n).map(|i| MicroOp::new(i as u16, tag, 0)).collect()
}

#[test]
fn cache_evicts_to_fit() {
    let mut c = UopCache::new(100);
    assert_eq!(c.request(&uops(60, 1)).unwrap(), Residency { start: 0, hit: false });
    assert_eq!(c.request(&uops(60, 2)).unwrap(), Residency { start: 0, hit: false });
    assert_eq!(c.stats(), CacheStats { hits: 0, misses: 2 });
    assert_eq!(c.resident(), vec![(0, 60)]);
}

#[test]
fn cache_hits_on_repeat() {
    let mut c = UopCache::new(100);
    let k = uops(10, 1);
    assert!(!c.request(&k).unwrap().hit);
    assert!(c.request(&k).unwrap().hit);
    assert_eq!(c.stats(), CacheStats { hits: 1, misses: 1 });
}

#[test]
fn cache_places_first_fit_and_evicts_lru() {
    let mut c = UopCache::new(100);
    let (a, b, d) = (uops(40, 1), uops(40, 2), uops(20, 3));
    c.request(&a).unwrap();
    c.request(&b).unwrap();
    c.request(&a).unwrap(); // b is now least recent
    assert_eq!(c.request(&d).unwrap().start, 80);
    // 30 entries: no gap, evict b (LRU) and land in its place
    assert_eq!(c.request(&uops(30, 4)).unwrap().start, 40);
    assert_eq!(c.resident(), vec![(0, 40), (40, 30), (80, 20)]);
    assert!(matches!(c.request(&uops(101, 5)), Err(RuntimeError::KernelTooLarge { .. })));
}

fn gemm(reset: bool, kernel: usize) -> AbsInsn {
    AbsInsn {
        insn: Instruction::Gemm(GemmInsn {
            deps: DepFlags::NONE,
            reset,
            uop_bgn: 0,
            uop_end: 1,
            iter_out: 1,
            iter_in: 1,
            dst_factor_out: 0,
            dst_factor_in: 0,
            src_factor_out: 0,
            src_factor_in: 0,
            wgt_factor_out: 0,
            wgt_factor_in: 0,
        }),
        kernel: Some(kernel),
    }
}

fn mem(scope: MemScope, sram: u16, dram: u32, n: u16) -> AbsInsn {
    let m = MemInsn::linear(scope, sram, dram, n);
    AbsInsn {
        insn: if scope == MemScope::Out { Instruction::Store(m) } else { Instruction::Load(m) },
        kernel: None,
    }
}

/// A hand-built kernel of `n` blocks of {LOAD inp, GEMM, STORE}.
fn chain_kernel(n: usize, vthreads: usize, tiles: u16) -> LoweredKernel {
    let p = HardwareParams::with_tile_counts(1, 4, 4, 64, 64, 64, 64);
    let blocks = (0..n)
        .map(|i| {
            let ctx = i % vthreads;
            let base = ctx as u16 * tiles;
            Block {
                ctx,
                reset: vec![],
                steps: vec![Step {
                    loads: vec![mem(MemScope::Inp, base, (i * tiles as usize) as u32, tiles)],
                    compute: vec![gemm(false, ctx)],
                }],
                epilogue: vec![],
                stores: vec![mem(MemScope::Out, base, (i * tiles as usize) as u32, tiles)],
            }
        })
        .collect();
    let spec = OperatorSpec::dense(1, 4, 4);
    LoweredKernel {
        schedule: Schedule {
            vthreads,
            ..Schedule::untiled(&spec, &p).unwrap()
        },
        spec,
        params: p,
        blocks,
        kernels: (0..vthreads as u16).map(|c| vec![MicroOp::new(c * tiles, c * tiles, 0)]).collect(),
        layout: DramLayout::default(),
        footprint: Footprint::default(),
    }
}

#[test]
fn three_stage_chain_flags() {
    let cb = build_command_stream(&chain_kernel(1, 1, 1)).unwrap();
    let d: Vec<DepFlags> = cb.instrs.iter().map(|a| a.insn.deps()).collect();
    let f = |pp, pn, up, un| DepFlags {
        pop_prev: pp,
        pop_next: pn,
        push_prev: up,
        push_next: un,
    };
    assert_eq!(d, vec![f(false, false, false, true), f(true, false, false, true), f(false, false, false, false)].into_iter().enumerate().map(|(i, x)| if i == 2 { f(true, false, false, false) } else { x }).collect::<Vec<_>>());
}

#[test]
fn two_contexts_interleave_and_overlap() {
    let k = chain_kernel(2, 2, 8);
    let cb = build_command_stream(&k).unwrap();
    assert_eq!(cb.instrs.len(), 6);
    assert_eq!(cb.thread, vec![0, 0, 1, 1, 0, 1]);
    let p = k.params.clone();
    let prog = compile(&k, &mut UopCache::for_params(&p)).unwrap();
    let t = TimingModel::default();
    let mut d1 = Dram::new(4096);
    let mut d2 = Dram::new(4096);
    let piped = crate::sim::run(&p, &t, &mut d1, &prog).unwrap();
    let seq = crate::sim::run_sequential(&p, &t, &mut d2, &prog).unwrap();
    assert!(piped.total_cycles < seq.total_cycles, "{} vs {}", piped.total_cycles, seq.total_cycles);
    assert!(piped.tokens_balanced() && piped.hazards.is_empty());
    assert_eq!(d1.bytes(), d2.bytes());
}

#[test]
fn jit_emits_one_load_per_miss() {
    let k = chain_kernel(4, 1, 1);
    let mut cache = UopCache::for_params(&k.params);
    let prog = compile(&k, &mut cache).unwrap();
    let uop_loads = prog
        .instrs
        .iter()
        .filter(|i| matches!(i, Instruction::Load(m) if m.scope == MemScope::Uop))
        .count();
    assert_eq!(uop_loads, 1);
    assert_eq!(prog.uops.len(), 1);
    assert_eq!(cache.stats(), CacheStats { hits: 3, misses: 1 });
    // a warm cache emits no loads at all
    let again = compile(&k, &mut cache).unwrap();
    assert!(again.instrs.iter().all(|i| !matches!(i, Instruction::Load(m) if m.scope == MemScope::Uop)));
}

#[test]
fn kernel_larger_than_cache_is_an_error() {
    let p = HardwareParams::default();
    let spec = OperatorSpec::conv2d(1, 64, 64, 4, 4, 3, 1, 1);
    let k = crate::compiler::lower(&spec, &Schedule::untiled(&spec, &p).unwrap(), &p).unwrap();
    let err = compile(&k, &mut UopCache::new(8)).unwrap_err();
    assert!(matches!(err, RuntimeError::KernelTooLarge { .. }), "{err}");
}

#[test]
fn results_independent_of_cache_capacity() {
    let p = HardwareParams::with_tile_counts(1, 4, 4, 4096, 256, 256, 512);
    let t = TimingModel::default();
    let specs = [
        OperatorSpec::conv2d(1, 8, 8, 6, 6, 3, 1, 1),
        OperatorSpec::conv2d(1, 8, 8, 7, 7, 3, 2, 1),
        OperatorSpec::conv2d_transpose(1, 8, 4, 3, 3, 4, 2, 1),
        OperatorSpec::dense(1, 16, 8),
    ];
    let kernels: Vec<_> = specs
        .iter()
        .map(|s| crate::compiler::lower(s, &default_schedule(s, &p).unwrap(), &p).unwrap())
        .collect();
    let min = kernels.iter().flat_map(|k| k.kernels.iter().map(Vec::len)).max().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs: Vec<_> = specs.iter().map(|s| OpInputs::random(s, &p, &mut rng, 20)).collect();
    let mut results = Vec::new();
    for cap in [min, 2 * min, 8 * min] {
        let mut rt = Runtime::new(p.clone(), t.clone()).with_cache_capacity(cap);
        let outs: Vec<_> = kernels.iter().zip(&inputs).map(|(k, x)| rt.run_kernel(k, x).unwrap().output).collect();
        for ((s, x), y) in specs.iter().zip(&inputs).zip(&outs) {
            assert_eq!(*y, s.reference(x, &p).unwrap());
        }
        results.push((outs, rt.cache.stats()));
    }
    assert!(results.windows(2).all(|w| w[0].0 == w[1].0));
    assert!(results[0].1.misses > results[2].1.misses);
}

fn conv_graph(placement: Placement) -> Graph {
    let conv = OperatorSpec::conv2d(1, 8, 8, 6, 6, 3, 1, 1).with_epilogue(Epilogue {
        bias: true,
        shift: 3,
        relu: true,
    });
    Graph {
        name: "g".into(),
        seed: 5,
        magnitude: 8,
        inputs: vec![TensorDecl {
            name: "x".into(),
            dims: vec![1, 8, 6, 6],
        }],
        nodes: vec![Node {
            name: "conv".into(),
            op: conv,
            inputs: vec!["x".into()],
            placement,
            schedule: None,
        }],
        outputs: vec!["conv".into()],
    }
}

#[test]
fn graph_of_one_conv_runs_on_device() {
    let p = HardwareParams::with_tile_counts(1, 4, 4, 1024, 256, 256, 512);
    let mut rt = Runtime::new(p.clone(), TimingModel::default());
    let g = conv_graph(Placement::Auto);
    let run = execute_graph(&mut rt, &g, &BTreeMap::new(), 1.0).unwrap();
    assert_eq!(run.report.per_node[0].placement, Placement::Device);
    assert!(run.report.total_cycles > 0);
    let mut host = Runtime::new(p, TimingModel::default());
    let href = execute_graph(&mut host, &conv_graph(Placement::Host), &BTreeMap::new(), 1.0).unwrap();
    assert_eq!(run.outputs, href.outputs);
    assert_eq!(href.report.total_cycles, 0);
    assert!(href.report.host_cycles > 0);
}

#[test]
fn unmappable_node_falls_back_to_host() {
    let p = HardwareParams::with_tile_counts(1, 4, 4, 1024, 256, 256, 512);
    let mut g = conv_graph(Placement::Auto);
    let mut odd = OperatorSpec::conv2d(1, 8, 6, 6, 6, 1, 1, 0);
    odd.pad_channels = false;
    g.nodes.push(Node {
        name: "odd".into(),
        op: odd,
        inputs: vec!["conv".into()],
        placement: Placement::Auto,
        schedule: None,
    });
    g.nodes.push(Node {
        name: "sum".into(),
        op: OperatorSpec::elementwise(1, 8, 6, 6, AluOp::Add, None),
        inputs: vec!["conv".into(), "x".into()],
        placement: Placement::Auto,
        schedule: None,
    });
    g.outputs = vec!["odd".into(), "sum".into()];
    let mut rt = Runtime::new(p.clone(), TimingModel::default());
    let run = execute_graph(&mut rt, &g, &BTreeMap::new(), 1.0).unwrap();
    let places: Vec<_> = run.report.per_node.iter().map(|n| n.placement).collect();
    assert_eq!(places, vec![Placement::Device, Placement::Host, Placement::Device]);
    let mut all_host = g.clone();
    for n in &mut all_host.nodes {
        n.placement = Placement::Host;
    }
    let href = execute_graph(&mut Runtime::new(p.clone(), TimingModel::default()), &all_host, &BTreeMap::new(), 1.0).unwrap();
    assert_eq!(run.outputs, href.outputs);
    g.nodes[1].placement = Placement::Device;
    assert!(execute_graph(&mut rt, &g, &BTreeMap::new(), 1.0).is_err());
}

#[test]
fn empty_graph() {
    let g = Graph {
        name: "empty".into(),
        seed: 0,
        magnitude: 8,
        inputs: vec![],
        nodes: vec![],
        outputs: vec![],
    };
    let mut rt = Runtime::new(HardwareParams::default(), TimingModel::default());
    let run = execute_graph(&mut rt, &g, &BTreeMap::new(), 1.0).unwrap();
    assert!(run.outputs.is_empty());
    assert_eq!(run.report.total_cycles, 0);
}

#[test]
fn graph_json_roundtrip_and_validation() {
    let g = conv_graph(Placement::Device);
    assert_eq!(Graph::from_json(&g.to_json()).unwrap(), g);
    let mut bad = g.clone();
    bad.nodes[0].inputs = vec!["missing".into()];
    assert!(bad.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn random_lowerings_are_exact_and_sequentially_equivalent(seed in any::<u64>()) {
        let c = random_case(&mut ChaCha8Rng::seed_from_u64(seed));
        let v = verify_case(&c.spec, &c.schedule, &c.params, &TimingModel::default(), seed).unwrap();
        prop_assert!(v.ok(), "{:?}: {:?}", c, v);
        prop_assert!(v.cycles <= v.sequential_cycles);
    }
}
