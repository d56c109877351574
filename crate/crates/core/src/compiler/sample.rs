use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::{legal_schedules, Epilogue, OpKind, OperatorSpec, Schedule};
use crate::config::HardwareParams;
use crate::isa::AluOp;

/// An (operator, schedule, hardware) triple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Case {
    pub spec: OperatorSpec,
    pub schedule: Schedule,
    pub params: HardwareParams,
}

fn random_params(rng: &mut impl Rng) -> HardwareParams {
    let (b, bi, bo) = *[(1, 4, 4), (2, 4, 4), (1, 8, 8), (2, 2, 4), (1, 16, 16), (4, 4, 2)]
        .choose(rng)
        .unwrap();
    let uops = [128, 512, 2048][rng.gen_range(0..3)];
    let mut p = HardwareParams::with_tile_counts(
        b,
        bi,
        bo,
        uops,
        rng.gen_range(48..=256),
        rng.gen_range(48..=256),
        rng.gen_range(96..=512),
    );
    if rng.gen_ratio(1, 5) {
        p.inp_bits = 4;
        p.wgt_bits = 4;
    }
    p
}

fn ch(rng: &mut impl Rng) -> usize {
    rng.gen_range(1..=20)
}

fn random_spec(rng: &mut impl Rng, p: &HardwareParams) -> OperatorSpec {
    let kind = *[
        OpKind::Conv2d,
        OpKind::Conv2d,
        OpKind::GroupedConv2d,
        OpKind::Conv2dTranspose,
        OpKind::Dense,
        OpKind::Elementwise,
        OpKind::Maxpool,
    ]
    .choose(rng)
    .unwrap();
    let n = rng.gen_range(1..=2);
    let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
    let epilogue = Epilogue {
        bias: kind.is_gemm() && rng.gen_bool(0.5),
        shift: if kind.is_gemm() { rng.gen_range(0..=5) } else { rng.gen_range(0..=1) },
        relu: rng.gen_bool(0.4),
    };
    let spec = match kind {
        OpKind::Conv2d => {
            let k = rng.gen_range(1..=3);
            let (h, w) = (h.max(k), w.max(k));
            OperatorSpec::conv2d(n, ch(rng), ch(rng), h, w, k, rng.gen_range(1..=2), rng.gen_range(0..k))
        }
        OpKind::GroupedConv2d => {
            let groups = rng.gen_range(1..=3);
            let k = rng.gen_range(1..=3);
            let (h, w) = (h.max(k), w.max(k));
            let icg = p.block_in * rng.gen_range(1..=2);
            let ocg = p.block_out * rng.gen_range(1..=2);
            OperatorSpec::grouped_conv2d(n, icg * groups, ocg * groups, h, w, k, rng.gen_range(1..=2), rng.gen_range(0..k), groups)
        }
        OpKind::Conv2dTranspose => {
            let k = rng.gen_range(2..=4);
            let s = rng.gen_range(1..=2.min(k));
            let (h, w) = (h.min(5), w.min(5));
            OperatorSpec::conv2d_transpose(n, ch(rng), ch(rng), h, w, k, s, rng.gen_range(0..k))
        }
        OpKind::Dense => OperatorSpec::dense(n, rng.gen_range(1..=40), rng.gen_range(1..=40)),
        OpKind::Elementwise => {
            let op = *[AluOp::Add, AluOp::Max, AluOp::Min, AluOp::Shr].choose(rng).unwrap();
            let imm = if op == AluOp::Shr || rng.gen_bool(0.4) {
                Some(if op == AluOp::Shr { rng.gen_range(0..=3) } else { rng.gen_range(-20..=20) })
            } else {
                None
            };
            OperatorSpec::elementwise(n, ch(rng), h, w, op, imm)
        }
        OpKind::Maxpool => {
            let k = rng.gen_range(1..=3);
            OperatorSpec::maxpool(n, ch(rng), h.max(k), w.max(k), k, rng.gen_range(1..=2))
        }
    };
    spec.with_epilogue(epilogue)
}

/// A random mappable case with a uniformly chosen legal schedule.
pub fn random_case(rng: &mut impl Rng) -> Case {
    loop {
        let p = random_params(rng);
        let spec = random_spec(rng, &p);
        if spec.check_mappable(&p).is_err() {
            continue;
        }
        if let Some(&schedule) = legal_schedules(&spec, &p).choose(rng) {
            return Case {
                spec,
                schedule,
                params: p,
            };
        }
    }
}
