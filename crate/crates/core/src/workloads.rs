//! Bundled workloads: distinct layer shapes with occurrence counts, an
//! executable residual network, and the small fixtures used by tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compiler::{Epilogue, OperatorSpec};
use crate::config::{CandidateSpace, DeviceProfile, LutModel};
use crate::isa::AluOp;
use crate::runtime::{Graph, Node, Placement, RuntimeError, TensorDecl};

/// A named multiset of operators. Each spec's `count` is its number of
/// occurrences in the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadDef {
    pub name: String,
    pub ops: Vec<OperatorSpec>,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl WorkloadDef {
    pub fn new(name: &str, ops: Vec<OperatorSpec>) -> Self {
        assert!(!ops.is_empty(), "workload {name} is empty");
        WorkloadDef {
            name: name.into(),
            ops,
            tags: Vec::new(),
        }
    }

    fn tagged(mut self, tags: &[&str]) -> Self {
        self.tags = tags.iter().map(|t| t.to_string()).collect();
        self
    }

    /// Operator occurrences in the full model.
    pub fn total_count(&self) -> u64 {
        self.ops.iter().map(|o| o.count as u64).sum()
    }

    /// The workload as a graph of independent nodes, each fed by its own
    /// input tensor(s).
    pub fn to_graph(&self, seed: u64) -> Graph {
        let mut inputs = Vec::new();
        let mut nodes = Vec::new();
        for (i, op) in self.ops.iter().enumerate() {
            let name = if op.name.is_empty() { format!("op{i}") } else { op.name.clone() };
            let arity = if op.is_binary() { 2 } else { 1 };
            let mut reads = Vec::new();
            for j in 0..arity {
                let t = format!("{name}.in{j}");
                inputs.push(TensorDecl {
                    name: t.clone(),
                    dims: op.input_dims(),
                });
                reads.push(t);
            }
            nodes.push(Node {
                name,
                op: op.clone(),
                inputs: reads,
                placement: Placement::Auto,
                schedule: None,
            });
        }
        Graph {
            name: self.name.clone(),
            seed,
            magnitude: 8,
            inputs,
            outputs: nodes.iter().map(|n| n.name.clone()).collect(),
            nodes,
        }
    }

    /// Recovers a workload from any graph: one entry per node.
    pub fn from_graph(g: &Graph) -> Result<WorkloadDef, RuntimeError> {
        g.validate()?;
        if g.nodes.is_empty() {
            return Err(RuntimeError::Graph(format!("{}: graph has no nodes", g.name)));
        }
        Ok(WorkloadDef {
            name: g.name.clone(),
            ops: g.nodes.iter().map(|n| n.op.clone()).collect(),
            tags: Vec::new(),
        })
    }
}

fn conv(name: &str, ic: usize, oc: usize, hw: usize, k: usize, s: usize, p: usize, count: u32) -> OperatorSpec {
    OperatorSpec::conv2d(1, ic, oc, hw, hw, k, s, p)
        .named(name)
        .with_count(count)
        .with_epilogue(Epilogue {
            bias: false,
            shift: 8,
            relu: true,
        })
}

/// The distinct convolution shapes of an 18-layer residual network on a
/// 224x224 image, plus its classifier. Strided layers take one row and
/// column fewer than the real activation; the dropped row is never read by
/// the real layer, so output shape and MAC count are unchanged.
pub fn resnet18_layers() -> WorkloadDef {
    WorkloadDef::new(
        "resnet18-layers",
        vec![
            conv("conv1", 3, 64, 223, 7, 2, 3, 1),
            conv("res2", 64, 64, 56, 3, 1, 1, 4),
            conv("res3a", 64, 128, 55, 3, 2, 1, 1),
            conv("res3", 128, 128, 28, 3, 1, 1, 3),
            conv("res3d", 64, 128, 55, 1, 2, 0, 1),
            conv("res4a", 128, 256, 27, 3, 2, 1, 1),
            conv("res4", 256, 256, 14, 3, 1, 1, 3),
            conv("res4d", 128, 256, 27, 1, 2, 0, 1),
            conv("res5a", 256, 512, 13, 3, 2, 1, 1),
            conv("res5", 512, 512, 7, 3, 1, 1, 3),
            conv("res5d", 256, 512, 13, 1, 2, 0, 1),
            OperatorSpec::dense(1, 512, 1000).named("fc").with_epilogue(Epilogue {
                bias: true,
                shift: 8,
                relu: false,
            }),
        ],
    )
    .tagged(&["res4"])
}

/// Grouped convolutions whose group width equals `block`, separated by
/// pointwise convolutions.
pub fn mobilenetg_mini(block: usize) -> WorkloadDef {
    let grouped = |name: &str, c: usize, hw: usize, s: usize, count: u32| {
        OperatorSpec::grouped_conv2d(1, c, c, hw, hw, 3, s, 1, c / block)
            .named(name)
            .with_count(count)
            .with_epilogue(Epilogue {
                bias: false,
                shift: 6,
                relu: true,
            })
    };
    WorkloadDef::new(
        "mobilenetg-mini",
        vec![
            conv("stem", 3, 32, 63, 3, 2, 1, 1),
            grouped("g1", 32, 32, 1, 1),
            conv("pw1", 32, 64, 32, 1, 1, 0, 1),
            grouped("g2", 64, 31, 2, 1),
            conv("pw2", 64, 128, 16, 1, 1, 0, 1),
            grouped("g3", 128, 16, 1, 2),
            conv("pw3", 128, 128, 16, 1, 1, 0, 2),
        ],
    )
}

/// A generator stack of stride-2 transposed convolutions with an ALU
/// activation at the end.
pub fn dcgan_mini() -> WorkloadDef {
    let up = |name: &str, ic: usize, oc: usize, hw: usize| {
        OperatorSpec::conv2d_transpose(1, ic, oc, hw, hw, 4, 2, 1)
            .named(name)
            .with_epilogue(Epilogue {
                bias: false,
                shift: 7,
                relu: true,
            })
    };
    WorkloadDef::new(
        "dcgan-mini",
        vec![
            up("up1", 128, 64, 4),
            up("up2", 64, 32, 8),
            up("up3", 32, 16, 16),
            OperatorSpec::elementwise(1, 16, 32, 32, AluOp::Shr, Some(1)).named("scale"),
            OperatorSpec::elementwise(1, 16, 32, 32, AluOp::Min, Some(63)).named("clip"),
        ],
    )
}

/// A handful of small convolutions and a dense layer; a full exploration
/// over it runs in seconds.
pub fn toy_conv_mix() -> WorkloadDef {
    WorkloadDef::new(
        "toy-conv-mix",
        vec![
            conv("c1", 16, 32, 8, 3, 1, 1, 2),
            conv("c2", 32, 32, 7, 3, 2, 1, 1),
            conv("c3", 32, 64, 4, 1, 1, 0, 1),
            OperatorSpec::dense(1, 64, 32).named("fc"),
        ],
    )
}

/// One operator of each kind the device supports.
pub fn toy_kinds() -> WorkloadDef {
    WorkloadDef::new(
        "toy-kinds",
        vec![
            conv("conv", 16, 16, 6, 3, 1, 1, 1),
            OperatorSpec::grouped_conv2d(1, 32, 32, 6, 6, 3, 1, 1, 2).named("grouped"),
            OperatorSpec::conv2d_transpose(1, 16, 16, 3, 3, 4, 2, 1).named("transpose"),
            OperatorSpec::dense(2, 32, 16).named("dense"),
            OperatorSpec::elementwise(1, 16, 4, 4, AluOp::Add, None).named("add"),
            OperatorSpec::maxpool(1, 16, 6, 6, 2, 2).named("pool"),
        ],
    )
}

/// A single small convolution.
pub fn toy_single() -> WorkloadDef {
    WorkloadDef::new("toy-single", vec![conv("conv", 16, 16, 8, 3, 1, 1, 1)])
}

/// Every bundled workload at the default 16-wide block.
pub fn builtin_workloads() -> BTreeMap<String, WorkloadDef> {
    [
        resnet18_layers(),
        mobilenetg_mini(16),
        dcgan_mini(),
        toy_conv_mix(),
        toy_kinds(),
        toy_single(),
    ]
    .into_iter()
    .map(|w| (w.name.clone(), w))
    .collect()
}

/// A residual network on 32x32 inputs with four basic blocks, runnable end
/// to end. Shortcut additions run on the ALU.
pub fn resnet_tiny() -> Graph {
    resnet_tiny_with(&[false, true, false, true])
}

/// The same network with one residual block per entry of `blocks`; a
/// `true` entry halves the resolution and doubles the channels.
pub fn resnet_tiny_with(blocks: &[bool]) -> Graph {
    let e = Epilogue {
        bias: true,
        shift: 6,
        relu: true,
    };
    let lin = Epilogue { relu: false, ..e };
    let mut nodes = Vec::new();
    let mut node = |name: &str, op: OperatorSpec, inputs: &[&str]| {
        nodes.push(Node {
            name: name.into(),
            op: op.named(name),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            placement: Placement::Auto,
            schedule: None,
        })
    };
    node("stem", OperatorSpec::conv2d(1, 3, 16, 32, 32, 3, 1, 1).with_epilogue(e), &["image"]);
    node("pool", OperatorSpec::maxpool(1, 16, 32, 32, 2, 2), &["stem"]);
    let mut prev = "pool".to_string();
    let mut c = 16;
    let mut hw = 16;
    for (b, &down) in blocks.iter().enumerate() {
        let (oc, s, k, p) = if down { (c * 2, 2, 4, 1) } else { (c, 1, 3, 1) };
        let ohw = hw / s;
        let a = format!("b{b}.a");
        let bn = format!("b{b}.b");
        let sum = format!("b{b}.sum");
        let out = format!("b{b}.out");
        node(&a, OperatorSpec::conv2d(1, c, oc, hw, hw, k, s, p).with_epilogue(e), &[&prev]);
        node(&bn, OperatorSpec::conv2d(1, oc, oc, ohw, ohw, 3, 1, 1).with_epilogue(lin), &[&a]);
        let short = if down {
            let d = format!("b{b}.down");
            node(&d, OperatorSpec::conv2d(1, c, oc, hw, hw, 2, 2, 0).with_epilogue(lin), &[&prev]);
            d
        } else {
            prev.clone()
        };
        node(&sum, OperatorSpec::elementwise(1, oc, ohw, ohw, AluOp::Add, None), &[&bn, &short]);
        node(
            &out,
            OperatorSpec::elementwise(1, oc, ohw, ohw, AluOp::Max, Some(0)),
            &[&sum],
        );
        prev = out;
        c = oc;
        hw = ohw;
    }
    node("fc", OperatorSpec::dense(1, c * hw * hw, 10).with_epilogue(lin), &[&prev]);
    Graph {
        name: "resnet-tiny".into(),
        seed: 7,
        magnitude: 8,
        inputs: vec![TensorDecl {
            name: "image".into(),
            dims: vec![1, 3, 32, 32],
        }],
        nodes,
        outputs: vec!["fc".into()],
    }
}

/// Eight designs crossing batch {1,2}, block_in {8,16} and block_out {8,16}
/// at 8-bit operands and 100 MHz.
pub fn toy_space() -> CandidateSpace {
    CandidateSpace {
        batch: vec![1, 2],
        block_in: vec![8, 16],
        block_out: vec![8, 16],
        intrinsics: vec![],
        inp_bits: vec![8],
        wgt_bits: vec![8],
        acc_bits: vec![32],
        uop_buf_bytes: vec![8192],
        inp_buf_bytes: vec![32768],
        wgt_buf_bytes: vec![65536],
        acc_buf_bytes: vec![65536],
        alu_lanes: vec![],
        freq_mhz: vec![100.0],
    }
}

/// The two intrinsic shapes (2,16)x(16,16) and (8,8)x(8,8) at 8-bit operands.
pub fn intrinsic_pair_space() -> CandidateSpace {
    CandidateSpace {
        intrinsics: vec![(2, 16, 16), (8, 8, 8)],
        batch: vec![],
        block_in: vec![],
        block_out: vec![],
        ..toy_space()
    }
}

/// A mid-size device large enough for every design of [`toy_space`].
pub fn desk_device() -> DeviceProfile {
    DeviceProfile {
        name: "desk".into(),
        dsp_total: 1728,
        bram_kbits_total: 11000,
        lut_total: 230_000,
        max_freq_mhz: 300.0,
        util_cap: 0.9,
        lut_model: LutModel::default(),
    }
}
