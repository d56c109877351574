//! Lowers operators onto the task/micro-op ISA.
//!
//! An operator is tiled into blocks (one output tile each). A block is a
//! sequence of groups: an accumulator reset, one step per input-channel
//! tile (loads then GEMMs), an ALU epilogue and the stores. Dependency
//! flags and final micro-op addresses are left to the runtime.

mod layout;
mod lower;
mod sample;
mod schedule;

pub use layout::{pack_bias, pack_layout, unpack_layout, DramLayout, PackedTensor, Region, Role};
pub use lower::{lower, lower_grouped, lower_transpose, AbsInsn, Block, KernelStats, LoweredKernel, Sidecar, Step};
pub use sample::{random_case, Case};
pub use schedule::{check_schedule, legal_schedules, tile_candidates, Footprint};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{HardwareParams, MemScope};
use crate::isa::AluOp;
use crate::refops::{self, Operand, RefError, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error("invalid operator {name}: {msg}")]
    Invalid { name: String, msg: String },
    #[error("operator {name} is not mappable: {msg}")]
    NotMappable { name: String, msg: String },
    #[error("schedule does not fit: {0}")]
    Infeasible(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Reference(#[from] RefError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv2d,
    GroupedConv2d,
    Conv2dTranspose,
    Dense,
    Elementwise,
    Maxpool,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::GroupedConv2d => "grouped_conv2d",
            OpKind::Conv2dTranspose => "conv2d_transpose",
            OpKind::Dense => "dense",
            OpKind::Elementwise => "elementwise",
            OpKind::Maxpool => "maxpool",
        }
    }

    /// Operators whose main work is GEMM (as opposed to ALU-only).
    pub fn is_gemm(self) -> bool {
        !matches!(self, OpKind::Elementwise | OpKind::Maxpool)
    }
}

/// Post-processing applied to every accumulator before it is stored:
/// optional per-channel bias add, arithmetic right shift, optional ReLU,
/// then a clamp to the activation range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Epilogue {
    #[serde(default)]
    pub bias: bool,
    #[serde(default)]
    pub shift: u8,
    #[serde(default)]
    pub relu: bool,
}

fn one() -> usize {
    1
}
fn one_u32() -> u32 {
    1
}
fn yes() -> bool {
    true
}

/// One operator instance. Unused shape fields keep their defaults.
/// Dense layers use `ic` as the reduction length and `oc` as the output
/// width; elementwise and maxpool use `ic` as the channel count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperatorSpec {
    #[serde(default)]
    pub name: String,
    pub kind: OpKind,
    #[serde(default = "one")]
    pub n: usize,
    pub ic: usize,
    #[serde(default)]
    pub oc: usize,
    #[serde(default = "one")]
    pub h: usize,
    #[serde(default = "one")]
    pub w: usize,
    #[serde(default = "one")]
    pub kh: usize,
    #[serde(default = "one")]
    pub kw: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default = "one")]
    pub groups: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alu_op: Option<AluOp>,
    /// Immediate second operand of an elementwise op; `None` means a second tensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imm: Option<i16>,
    #[serde(default)]
    pub epilogue: Epilogue,
    /// Occurrences of this operator in its workload.
    #[serde(default = "one_u32")]
    pub count: u32,
    /// Zero-pad channel counts up to block multiples when packing.
    #[serde(default = "yes")]
    pub pad_channels: bool,
}

impl OperatorSpec {
    fn base(kind: OpKind) -> Self {
        OperatorSpec {
            name: String::new(),
            kind,
            n: 1,
            ic: 1,
            oc: 1,
            h: 1,
            w: 1,
            kh: 1,
            kw: 1,
            stride: 1,
            pad: 0,
            groups: 1,
            alu_op: None,
            imm: None,
            epilogue: Epilogue::default(),
            count: 1,
            pad_channels: true,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(n: usize, ic: usize, oc: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        OperatorSpec {
            n,
            ic,
            oc,
            h,
            w,
            kh: k,
            kw: k,
            stride,
            pad,
            ..Self::base(OpKind::Conv2d)
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn grouped_conv2d(
        n: usize,
        ic: usize,
        oc: usize,
        h: usize,
        w: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Self {
        OperatorSpec {
            kind: OpKind::GroupedConv2d,
            groups,
            ..Self::conv2d(n, ic, oc, h, w, k, stride, pad)
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d_transpose(
        n: usize,
        ic: usize,
        oc: usize,
        h: usize,
        w: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        OperatorSpec {
            kind: OpKind::Conv2dTranspose,
            ..Self::conv2d(n, ic, oc, h, w, k, stride, pad)
        }
    }

    pub fn dense(n: usize, k: usize, m: usize) -> Self {
        OperatorSpec {
            n,
            ic: k,
            oc: m,
            ..Self::base(OpKind::Dense)
        }
    }

    pub fn elementwise(n: usize, c: usize, h: usize, w: usize, op: AluOp, imm: Option<i16>) -> Self {
        OperatorSpec {
            n,
            ic: c,
            oc: c,
            h,
            w,
            alu_op: Some(op),
            imm,
            ..Self::base(OpKind::Elementwise)
        }
    }

    pub fn maxpool(n: usize, c: usize, h: usize, w: usize, window: usize, stride: usize) -> Self {
        OperatorSpec {
            n,
            ic: c,
            oc: c,
            h,
            w,
            kh: window,
            kw: window,
            stride,
            ..Self::base(OpKind::Maxpool)
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_epilogue(mut self, e: Epilogue) -> Self {
        self.epilogue = e;
        self
    }

    pub fn with_count(mut self, count: u32) -> Self {
        self.count = count;
        self
    }

    /// Output channels; defaults to `ic` for channel-preserving ops.
    pub fn out_channels(&self) -> usize {
        match self.kind {
            OpKind::Elementwise | OpKind::Maxpool => self.ic,
            _ => self.oc,
        }
    }

    fn invalid(&self, msg: impl Into<String>) -> CompileError {
        CompileError::Invalid {
            name: self.label(),
            msg: msg.into(),
        }
    }

    fn unmappable(&self, msg: impl Into<String>) -> CompileError {
        CompileError::NotMappable {
            name: self.label(),
            msg: msg.into(),
        }
    }

    pub fn label(&self) -> String {
        if self.name.is_empty() {
            self.kind.name().to_string()
        } else {
            self.name.clone()
        }
    }

    /// Output spatial extents `(OH, OW)`.
    pub fn out_hw(&self) -> Result<(usize, usize), CompileError> {
        Ok(match self.kind {
            OpKind::Dense | OpKind::Elementwise => (self.h, self.w),
            OpKind::Conv2dTranspose => (
                refops::transpose_out_extent("height", self.h, self.kh, self.stride, self.pad)?,
                refops::transpose_out_extent("width", self.w, self.kw, self.stride, self.pad)?,
            ),
            OpKind::Maxpool => (
                refops::conv_out_extent("height", self.h, self.kh, self.stride, 0)?,
                refops::conv_out_extent("width", self.w, self.kw, self.stride, 0)?,
            ),
            _ => (
                refops::conv_out_extent("height", self.h, self.kh, self.stride, self.pad)?,
                refops::conv_out_extent("width", self.w, self.kw, self.stride, self.pad)?,
            ),
        })
    }

    /// Logical output tensor shape.
    pub fn out_dims(&self) -> Result<Vec<usize>, CompileError> {
        let (oh, ow) = self.out_hw()?;
        Ok(match self.kind {
            OpKind::Dense => vec![self.n, self.oc],
            _ => vec![self.n, self.out_channels(), oh, ow],
        })
    }

    pub fn input_dims(&self) -> Vec<usize> {
        match self.kind {
            OpKind::Dense => vec![self.n, self.ic],
            _ => vec![self.n, self.ic, self.h, self.w],
        }
    }

    pub fn weight_dims(&self) -> Option<Vec<usize>> {
        match self.kind {
            OpKind::Dense => Some(vec![self.oc, self.ic]),
            OpKind::Conv2d | OpKind::GroupedConv2d => Some(vec![self.oc, self.ic / self.groups.max(1), self.kh, self.kw]),
            OpKind::Conv2dTranspose => Some(vec![self.oc, self.ic, self.kh, self.kw]),
            _ => None,
        }
    }

    /// Whether an elementwise op takes a second tensor.
    pub fn is_binary(&self) -> bool {
        self.kind == OpKind::Elementwise && self.imm.is_none()
    }

    /// Shape and parameter checks independent of any hardware.
    pub fn validate(&self) -> Result<(), CompileError> {
        for (f, v) in [
            ("n", self.n),
            ("ic", self.ic),
            ("h", self.h),
            ("w", self.w),
            ("kh", self.kh),
            ("kw", self.kw),
            ("stride", self.stride),
            ("groups", self.groups),
            ("count", self.count as usize),
        ] {
            if v == 0 {
                return Err(self.invalid(format!("{f} must be positive")));
            }
        }
        if self.kind.is_gemm() && self.oc == 0 {
            return Err(self.invalid("oc must be positive"));
        }
        match self.kind {
            OpKind::Dense => {
                if (self.h, self.w, self.kh, self.kw) != (1, 1, 1, 1) {
                    return Err(self.invalid("dense takes no spatial extent"));
                }
            }
            OpKind::Elementwise => {
                if self.alu_op.is_none() {
                    return Err(self.invalid("elementwise needs alu_op"));
                }
                if self.alu_op == Some(AluOp::Shr) && self.imm.is_none() {
                    return Err(self.invalid("SHR needs an immediate"));
                }
                if self.epilogue.bias {
                    return Err(self.invalid("bias is only defined for GEMM operators"));
                }
            }
            OpKind::Maxpool => {
                if self.epilogue.bias {
                    return Err(self.invalid("bias is only defined for GEMM operators"));
                }
            }
            OpKind::GroupedConv2d | OpKind::Conv2d | OpKind::Conv2dTranspose => {
                if self.kind != OpKind::GroupedConv2d && self.groups != 1 {
                    return Err(self.invalid("groups > 1 requires grouped_conv2d"));
                }
                if self.ic % self.groups != 0 || self.oc % self.groups != 0 {
                    return Err(self.invalid(format!(
                        "channels {}→{} not divisible by {} groups",
                        self.ic, self.oc, self.groups
                    )));
                }
            }
        }
        self.out_hw()?;
        Ok(())
    }

    /// Whether the accelerator can run this operator at `p`. Operators that
    /// are not mappable run on the host.
    pub fn check_mappable(&self, p: &HardwareParams) -> Result<(), CompileError> {
        self.validate()?;
        let (bi, bo) = (p.block_in, p.block_out);
        match self.kind {
            OpKind::GroupedConv2d if self.groups > 1 => {
                let (icg, ocg) = (self.ic / self.groups, self.oc / self.groups);
                if icg % bi != 0 || ocg % bo != 0 {
                    return Err(self.unmappable(format!(
                        "group width {icg}→{ocg} is not a multiple of the {bi}x{bo} block"
                    )));
                }
            }
            OpKind::Elementwise | OpKind::Maxpool => {
                if !self.pad_channels && self.ic % bo != 0 {
                    return Err(self.unmappable(format!("{} channels not divisible by block_out {bo}", self.ic)));
                }
            }
            _ => {
                if !self.pad_channels && (self.ic % bi != 0 || self.oc % bo != 0) {
                    return Err(self.unmappable(format!(
                        "channels {}→{} not divisible by the {bi}x{bo} block and padding is disabled",
                        self.ic, self.oc
                    )));
                }
            }
        }
        match self.kind {
            OpKind::Conv2d | OpKind::GroupedConv2d => {
                if self.pad >= self.kh || self.pad >= self.kw {
                    return Err(self.unmappable("padding must be smaller than the kernel"));
                }
            }
            OpKind::Conv2dTranspose => {
                if self.stride > self.kh || self.stride > self.kw {
                    return Err(self.unmappable("transpose stride larger than the kernel"));
                }
                if self.pad >= self.kh || self.pad >= self.kw {
                    return Err(self.unmappable("transpose crop must be smaller than the kernel"));
                }
            }
            _ => {}
        }
        if self.epilogue.shift > 31 {
            return Err(self.unmappable("shift larger than 31"));
        }
        Ok(())
    }

    /// Padded block counts `(batch blocks, in-channel blocks, out-channel blocks)`.
    pub fn blocks(&self, p: &HardwareParams) -> (usize, usize, usize) {
        let nb = self.n.div_ceil(p.batch);
        match self.kind {
            OpKind::Elementwise | OpKind::Maxpool => {
                let cb = self.ic.div_ceil(p.block_out);
                (nb, cb, cb)
            }
            _ => (nb, self.ic.div_ceil(p.block_in), self.oc.div_ceil(p.block_out)),
        }
    }

    /// Multiply-accumulates of the operator on its logical shape. For a
    /// transposed convolution only lattice-aligned taps are counted.
    pub fn macs(&self) -> u64 {
        let (oh, ow) = self.out_hw().unwrap_or((0, 0));
        let n = self.n as u64;
        match self.kind {
            OpKind::Conv2d | OpKind::GroupedConv2d | OpKind::Dense => {
                n * self.oc as u64
                    * (oh * ow) as u64
                    * (self.ic / self.groups) as u64
                    * (self.kh * self.kw) as u64
            }
            OpKind::Conv2dTranspose => {
                let ty = lattice_taps(oh, self.kh, self.stride, self.pad);
                let tx = lattice_taps(ow, self.kw, self.stride, self.pad);
                n * self.oc as u64 * self.ic as u64 * ty * tx
            }
            _ => 0,
        }
    }

    /// Arithmetic operations: 2 per MAC for GEMM operators, one per
    /// element-step for ALU operators.
    pub fn ops(&self) -> u64 {
        let (oh, ow) = self.out_hw().unwrap_or((0, 0));
        match self.kind {
            OpKind::Elementwise => (self.n * self.ic * oh * ow) as u64,
            OpKind::Maxpool => (self.n * self.ic * oh * ow * self.kh * self.kw) as u64,
            _ => 2 * self.macs(),
        }
    }

    /// Host reference for the whole operator including its epilogue. The
    /// result holds activation-range values.
    pub fn reference(&self, inputs: &OpInputs, p: &HardwareParams) -> Result<Tensor<i32>, CompileError> {
        self.validate()?;
        self.check_inputs(inputs, p)?;
        let acc = match self.kind {
            OpKind::Conv2d | OpKind::GroupedConv2d | OpKind::Dense | OpKind::Conv2dTranspose => {
                let x = inputs.x.map(|v| v as i8);
                let w = inputs.w.as_ref().unwrap().map(|v| v as i8);
                let mut acc = match self.kind {
                    OpKind::Dense => refops::dense_ref(&x, &w)?,
                    OpKind::Conv2dTranspose => refops::conv2d_transpose_ref(&x, &w, self.stride, self.pad)?,
                    _ => refops::grouped_conv2d_ref(&x, &w, self.stride, self.pad, self.groups)?,
                };
                if let Some(b) = inputs.bias.as_ref().filter(|_| self.epilogue.bias) {
                    let oc = self.oc;
                    let spatial = acc.len() / (self.n * oc);
                    let bb = Tensor::from_fn(acc.dims().to_vec(), |i| b.data()[(i / spatial) % oc]);
                    acc = refops::alu_ref(AluOp::Add, &acc, Operand::Tensor(&bb))?;
                }
                acc
            }
            OpKind::Elementwise => {
                let op = self.alu_op.unwrap();
                match (self.imm, inputs.y.as_ref()) {
                    (Some(imm), _) => refops::alu_ref(op, &inputs.x, Operand::Imm(imm as i32))?,
                    (None, Some(y)) => refops::alu_ref(op, &inputs.x, Operand::Tensor(y))?,
                    (None, None) => return Err(CompileError::Input("missing second operand".into())),
                }
            }
            OpKind::Maxpool => refops::maxpool2d_ref(&inputs.x, self.kh, self.stride)?,
        };
        Ok(apply_epilogue(&acc, &self.epilogue, p.inp_bits)?)
    }

    /// Checks input tensors against this operator's shapes and value ranges.
    pub fn check_inputs(&self, inputs: &OpInputs, p: &HardwareParams) -> Result<(), CompileError> {
        let bad = |m: String| Err(CompileError::Input(format!("{}: {m}", self.label())));
        if inputs.x.dims() != self.input_dims() {
            return bad(format!("input dims {:?}, expected {:?}", inputs.x.dims(), self.input_dims()));
        }
        let in_range = |t: &Tensor<i32>, bits: u32| {
            let lo = -(1i32 << (bits - 1));
            let hi = (1i32 << (bits - 1)) - 1;
            t.data().iter().all(|&v| (lo..=hi).contains(&v))
        };
        if self.kind.is_gemm() {
            if !in_range(&inputs.x, p.inp_bits) {
                return bad(format!("input values exceed {} bits", p.inp_bits));
            }
            let Some(w) = inputs.w.as_ref() else {
                return bad("missing weights".into());
            };
            let wd = self.weight_dims().unwrap();
            if w.dims() != wd {
                return bad(format!("weight dims {:?}, expected {wd:?}", w.dims()));
            }
            if !in_range(w, p.wgt_bits) {
                return bad(format!("weight values exceed {} bits", p.wgt_bits));
            }
            if self.epilogue.bias {
                match inputs.bias.as_ref() {
                    Some(b) if b.dims() == [self.oc] => {}
                    _ => return bad(format!("bias must have shape [{}]", self.oc)),
                }
            }
        } else if self.is_binary() {
            match inputs.y.as_ref() {
                Some(y) if y.dims() == inputs.x.dims() => {}
                _ => return bad("second operand must match the first".into()),
            }
        }
        Ok(())
    }
}

/// Number of lattice-aligned taps summed over all outputs of one axis of
/// a transposed convolution.
pub fn lattice_taps(out: usize, k: usize, s: usize, p: usize) -> u64 {
    (0..out)
        .map(|y| {
            let r = (y + p) % s;
            if r < k {
                ((k - r).div_ceil(s)) as u64
            } else {
                0
            }
        })
        .sum()
}

/// The epilogue as host operations: ADD bias (done by caller), SHR, ReLU,
/// and a clamp to the `bits`-wide signed range.
pub fn apply_epilogue(acc: &Tensor<i32>, e: &Epilogue, bits: u32) -> Result<Tensor<i32>, RefError> {
    let mut t = acc.clone();
    if e.shift != 0 {
        t = refops::alu_ref(AluOp::Shr, &t, Operand::Imm(e.shift as i32))?;
    }
    let (lo, hi) = act_range(bits);
    if e.relu {
        t = refops::alu_ref(AluOp::Max, &t, Operand::Imm(0))?;
    }
    t = refops::alu_ref(AluOp::Min, &t, Operand::Imm(hi))?;
    if !e.relu {
        t = refops::alu_ref(AluOp::Max, &t, Operand::Imm(lo))?;
    }
    Ok(t)
}

/// Signed range of a `bits`-wide activation.
pub fn act_range(bits: u32) -> (i32, i32) {
    (-(1i32 << (bits - 1)), (1i32 << (bits - 1)) - 1)
}

/// Operator inputs. Every tensor holds plain integer values; packing picks
/// the storage width from the role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpInputs {
    /// Activations, or the first elementwise operand.
    pub x: Tensor<i32>,
    pub w: Option<Tensor<i32>>,
    pub bias: Option<Tensor<i32>>,
    /// Second elementwise operand.
    pub y: Option<Tensor<i32>>,
}

impl OpInputs {
    pub fn new(x: Tensor<i32>) -> Self {
        OpInputs {
            x,
            w: None,
            bias: None,
            y: None,
        }
    }

    /// Deterministic random inputs in the value ranges of `p`. `magnitude`
    /// bounds every value (clipped to the element range).
    pub fn random(spec: &OperatorSpec, p: &HardwareParams, rng: &mut impl rand::Rng, magnitude: i32) -> Self {
        let (ilo, ihi) = act_range(p.inp_bits);
        let (wlo, whi) = act_range(p.wgt_bits);
        let mut gen = |dims: Vec<usize>, lo: i32, hi: i32| {
            let (lo, hi) = (lo.max(-magnitude), hi.min(magnitude));
            Tensor::from_fn(dims, |_| rng.gen_range(lo..=hi))
        };
        let gemm = spec.kind.is_gemm();
        let x = if gemm {
            gen(spec.input_dims(), ilo, ihi)
        } else {
            gen(spec.input_dims(), -magnitude, magnitude)
        };
        let w = spec.weight_dims().map(|d| gen(d, wlo, whi));
        let bias = (gemm && spec.epilogue.bias).then(|| gen(vec![spec.oc], -magnitude * 16, magnitude * 16));
        let y = spec.is_binary().then(|| gen(spec.input_dims(), -magnitude, magnitude));
        OpInputs { x, w, bias, y }
    }
}

/// Knobs of the fixed tiling template. Tile extents are in blocks for the
/// channel axes and in output pixels for the spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Schedule {
    pub tile_oc: usize,
    pub tile_ic: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub vthreads: usize,
    pub oc_unroll: bool,
}

impl Schedule {
    /// The schedule that puts the whole operator in one block.
    pub fn untiled(spec: &OperatorSpec, p: &HardwareParams) -> Result<Schedule, CompileError> {
        let (_, ib, ob) = spec.blocks(p);
        let (oh, ow) = spec.out_hw()?;
        let g = if spec.kind == OpKind::GroupedConv2d { spec.groups } else { 1 };
        Ok(Schedule {
            tile_oc: ob / g,
            tile_ic: if spec.kind.is_gemm() { ib / g } else { 1 },
            tile_h: oh,
            tile_w: ow,
            vthreads: 1,
            oc_unroll: true,
        })
    }

    pub fn knobs_json(&self) -> String {
        serde_json::to_string(self).expect("schedule serializes")
    }
}

pub(crate) fn scope_cap(p: &HardwareParams, s: MemScope) -> usize {
    p.addressable(s)
}
