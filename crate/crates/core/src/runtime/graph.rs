use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CacheStats, Runtime, RuntimeError};
use crate::compiler::{self, act_range, OpInputs, OperatorSpec, Schedule};
use crate::config::HardwareParams;
use crate::refops::Tensor;

/// Where a node runs. `Auto` picks the device whenever the operator maps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    #[default]
    Auto,
    Device,
    Host,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDecl {
    pub name: String,
    pub dims: Vec<usize>,
}

/// One operator; its output tensor carries the node's name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub op: OperatorSpec,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
}

/// A topologically ordered operator graph. Weights are generated from
/// `seed`, as are graph inputs that are not fed explicitly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Bound on generated weight and input magnitudes.
    #[serde(default = "default_magnitude")]
    pub magnitude: i32,
    pub inputs: Vec<TensorDecl>,
    pub nodes: Vec<Node>,
    pub outputs: Vec<String>,
}

fn default_magnitude() -> i32 {
    8
}

impl Graph {
    /// Checks names, ordering, arity and shapes along every edge.
    pub fn validate(&self) -> Result<(), RuntimeError> {
        let err = |m: String| Err(RuntimeError::Graph(format!("{}: {m}", self.name)));
        let mut dims: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for t in &self.inputs {
            if dims.insert(&t.name, t.dims.clone()).is_some() {
                return err(format!("duplicate tensor {}", t.name));
            }
        }
        for n in &self.nodes {
            if let Err(e) = n.op.validate() {
                return err(format!("node {}: {e}", n.name));
            }
            let arity = if n.op.is_binary() { 2 } else { 1 };
            if n.inputs.len() != arity {
                return err(format!("node {} takes {arity} inputs, got {}", n.name, n.inputs.len()));
            }
            let want = n.op.input_dims();
            for i in &n.inputs {
                let Some(d) = dims.get(i.as_str()) else {
                    return err(format!("node {} reads {i}, which is not defined before it", n.name));
                };
                if d.iter().product::<usize>() != want.iter().product::<usize>() || d[0] != want[0] {
                    return err(format!("node {} expects {want:?}, {i} is {d:?}", n.name));
                }
            }
            let out = n.op.out_dims().map_err(RuntimeError::from)?;
            if dims.insert(&n.name, out).is_some() {
                return err(format!("duplicate tensor {}", n.name));
            }
        }
        for o in &self.outputs {
            if !dims.contains_key(o.as_str()) {
                return err(format!("unknown output {o}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Graph, RuntimeError> {
        serde_json::from_str(s).map_err(|e| RuntimeError::Graph(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeReport {
    pub name: String,
    pub kind: String,
    /// Resolved placement: device or host.
    pub placement: Placement,
    pub cycles: u64,
    /// Reporting-only host cost.
    pub host_cycles: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    pub instructions: usize,
    pub uop_loads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphReport {
    /// Sum of simulated device cycles.
    pub total_cycles: u64,
    pub host_cycles: u64,
    pub per_node: Vec<NodeReport>,
    /// Cache activity during this graph.
    pub cache: CacheStats,
}

#[derive(Debug, Clone)]
pub struct GraphRun {
    pub outputs: BTreeMap<String, Tensor<i32>>,
    pub report: GraphReport,
}

/// The schedule used when a node does not name one: the untiled schedule
/// if it fits, else the legal schedule with the largest tiles.
pub fn default_schedule(spec: &OperatorSpec, p: &HardwareParams) -> Option<Schedule> {
    if let Ok(s) = Schedule::untiled(spec, p) {
        if compiler::check_schedule(spec, &s, p).is_ok() {
            return Some(s);
        }
    }
    compiler::legal_schedules(spec, p)
        .into_iter()
        .max_by_key(|s| (s.tile_oc * s.tile_ic * s.tile_h * s.tile_w, s.vthreads, s.oc_unroll))
}

fn node_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Executes `g` node by node on `rt`, falling back to host references for
/// operators the device cannot run. `host_cycles_per_op` prices host nodes
/// for the report only.
pub fn execute_graph(
    rt: &mut Runtime,
    g: &Graph,
    feeds: &BTreeMap<String, Tensor<i32>>,
    host_cycles_per_op: f64,
) -> Result<GraphRun, RuntimeError> {
    g.validate()?;
    let p = rt.params().clone();
    let before = rt.cache.stats();
    let mut env: BTreeMap<String, Tensor<i32>> = BTreeMap::new();
    for (i, t) in g.inputs.iter().enumerate() {
        let v = match feeds.get(&t.name) {
            Some(v) if v.dims() == t.dims => v.clone(),
            Some(v) => {
                return Err(RuntimeError::Graph(format!("feed {} has dims {:?}, expected {:?}", t.name, v.dims(), t.dims)))
            }
            None => {
                let (lo, hi) = act_range(p.inp_bits);
                let (lo, hi) = (lo.max(-g.magnitude), hi.min(g.magnitude));
                let mut rng = node_rng(g.seed, usize::MAX - i);
                Tensor::from_fn(t.dims.clone(), |_| rand::Rng::gen_range(&mut rng, lo..=hi))
            }
        };
        env.insert(t.name.clone(), v);
    }
    let mut per_node = Vec::new();
    let (mut total, mut host_total) = (0u64, 0u64);
    for (i, n) in g.nodes.iter().enumerate() {
        let fetch = |name: &str| -> Result<Tensor<i32>, RuntimeError> {
            let t = env[name].clone();
            t.reshape(n.op.input_dims()).map_err(|e| RuntimeError::Graph(e.to_string()))
        };
        let mut inputs = OpInputs::random(&n.op, &p, &mut node_rng(g.seed, i), g.magnitude);
        inputs.x = fetch(&n.inputs[0])?;
        if n.op.is_binary() {
            inputs.y = Some(fetch(&n.inputs[1])?);
        }
        let mut rep = NodeReport {
            name: n.name.clone(),
            kind: n.op.kind.name().to_string(),
            placement: Placement::Host,
            cycles: 0,
            host_cycles: 0,
            schedule: None,
            instructions: 0,
            uop_loads: 0,
            fallback_reason: None,
        };
        let device = match n.placement {
            Placement::Host => Err("placed on host".to_string()),
            _ => match n.op.check_mappable(&p) {
                Err(e) => Err(e.to_string()),
                Ok(()) => n
                    .schedule
                    .or_else(|| default_schedule(&n.op, &p))
                    .ok_or_else(|| "no legal schedule".to_string()),
            },
        };
        let out = match device {
            Ok(sched) => {
                let k = compiler::lower(&n.op, &sched, &p)
                    .map_err(|e| RuntimeError::Graph(format!("node {}: {e}", n.name)))?;
                let run = rt
                    .run_kernel(&k, &inputs)
                    .map_err(|e| RuntimeError::Graph(format!("node {}: {e}", n.name)))?;
                rep.placement = Placement::Device;
                rep.cycles = run.report.total_cycles;
                rep.schedule = Some(sched);
                rep.instructions = run.program.instrs.len();
                rep.uop_loads = run
                    .program
                    .instrs
                    .iter()
                    .filter(|i| matches!(i, crate::isa::Instruction::Load(m) if m.scope == crate::config::MemScope::Uop))
                    .count();
                total += rep.cycles;
                run.output
            }
            Err(reason) => {
                if n.placement == Placement::Device {
                    return Err(RuntimeError::Graph(format!("node {} cannot run on the device: {reason}", n.name)));
                }
                let out = n
                    .op
                    .reference(&inputs, &p)
                    .map_err(|e| RuntimeError::Graph(format!("node {} has no host implementation: {e}", n.name)))?;
                rep.host_cycles = (n.op.ops() as f64 * host_cycles_per_op).ceil() as u64;
                rep.fallback_reason = Some(reason);
                host_total += rep.host_cycles;
                out
            }
        };
        env.insert(n.name.clone(), out);
        per_node.push(rep);
    }
    let after = rt.cache.stats();
    let outputs = g.outputs.iter().map(|o| (o.clone(), env[o].clone())).collect();
    Ok(GraphRun {
        outputs,
        report: GraphReport {
            total_cycles: total,
            host_cycles: host_total,
            per_node,
            cache: CacheStats {
                hits: after.hits - before.hits,
                misses: after.misses - before.misses,
            },
        },
    })
}
