//! Hardware design points, the resource/peak models used to prune them, and
//! the candidate space they are drawn from.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest tile index an 11-bit micro-op field can address.
pub const UOP_ACC_INDEX_LIMIT: usize = 1 << 11;
/// Largest tile index an 11-bit micro-op field can address.
pub const UOP_INP_INDEX_LIMIT: usize = 1 << 11;
/// Largest tile index a 10-bit micro-op field can address.
pub const UOP_WGT_INDEX_LIMIT: usize = 1 << 10;
/// `uop_bgn` is 13 bits wide, so kernels must start below this entry.
pub const UOP_BUFFER_LIMIT: usize = 1 << 13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{field} must be positive")]
    NotPositive { field: &'static str },
    #[error("{field} = {value} is not a power of two")]
    NotPowerOfTwo { field: &'static str, value: usize },
    #[error("{field} = {value} is not one of {allowed:?}")]
    BadPrecision {
        field: &'static str,
        value: u32,
        allowed: &'static [u32],
    },
    #[error("{field} = {bytes} bytes is not a multiple of its {tile_bits}-bit tile")]
    BufferNotTileMultiple {
        field: &'static str,
        bytes: usize,
        tile_bits: usize,
    },
    #[error("alu_lanes = {lanes} exceeds batch*block_out = {max}")]
    TooManyLanes { lanes: usize, max: usize },
    #[error("device {name}: {field} must be positive")]
    BadDevice { name: String, field: &'static str },
    #[error("device {name}: util_cap {cap} is outside (0, 1]")]
    BadUtilCap { name: String, cap: f64 },
}

/// Memory scopes addressed by LOAD/STORE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MemScope {
    Uop = 0,
    Wgt = 1,
    Inp = 2,
    Acc = 3,
    Out = 4,
}

impl MemScope {
    pub const ALL: [MemScope; 5] = [
        MemScope::Uop,
        MemScope::Wgt,
        MemScope::Inp,
        MemScope::Acc,
        MemScope::Out,
    ];

    pub fn from_code(code: u64) -> Option<MemScope> {
        MemScope::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MemScope::Uop => "UOP",
            MemScope::Wgt => "WGT",
            MemScope::Inp => "INP",
            MemScope::Acc => "ACC",
            MemScope::Out => "OUT",
        }
    }
}

/// One accelerator design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareParams {
    pub batch: usize,
    pub block_in: usize,
    pub block_out: usize,
    pub inp_bits: u32,
    pub wgt_bits: u32,
    pub acc_bits: u32,
    pub uop_buf_bytes: usize,
    pub inp_buf_bytes: usize,
    pub wgt_buf_bytes: usize,
    pub acc_buf_bytes: usize,
    pub alu_lanes: usize,
    pub freq_mhz: f64,
}

impl Default for HardwareParams {
    /// The (1,16)x(16,16) W8A8 design with 32-bit accumulators.
    fn default() -> Self {
        HardwareParams {
            batch: 1,
            block_in: 16,
            block_out: 16,
            inp_bits: 8,
            wgt_bits: 8,
            acc_bits: 32,
            uop_buf_bytes: 32 * 1024,
            inp_buf_bytes: 32 * 1024,
            wgt_buf_bytes: 256 * 1024,
            acc_buf_bytes: 128 * 1024,
            alu_lanes: 16,
            freq_mhz: 100.0,
        }
    }
}

const OPERAND_BITS: &[u32] = &[1, 2, 4, 8];
const ACC_BITS: &[u32] = &[8, 16, 32];

impl HardwareParams {
    /// Builds a design point whose buffers hold exactly the given tile counts.
    pub fn with_tile_counts(
        batch: usize,
        block_in: usize,
        block_out: usize,
        uops: usize,
        inp_tiles: usize,
        wgt_tiles: usize,
        acc_tiles: usize,
    ) -> Self {
        let mut p = HardwareParams {
            batch,
            block_in,
            block_out,
            alu_lanes: batch * block_out,
            ..HardwareParams::default()
        };
        p.uop_buf_bytes = uops * 4;
        p.inp_buf_bytes = inp_tiles * p.tile_bits(MemScope::Inp) / 8;
        p.wgt_buf_bytes = wgt_tiles * p.tile_bits(MemScope::Wgt) / 8;
        p.acc_buf_bytes = acc_tiles * p.tile_bits(MemScope::Acc) / 8;
        p
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("batch", self.batch),
            ("block_in", self.block_in),
            ("block_out", self.block_out),
            ("alu_lanes", self.alu_lanes),
        ] {
            if v == 0 {
                return Err(ConfigError::NotPositive { field });
            }
        }
        if !(self.freq_mhz > 0.0) {
            return Err(ConfigError::NotPositive { field: "freq_mhz" });
        }
        for (field, v) in [
            ("batch", self.batch),
            ("block_in", self.block_in),
            ("block_out", self.block_out),
        ] {
            if !v.is_power_of_two() {
                return Err(ConfigError::NotPowerOfTwo { field, value: v });
            }
        }
        for (field, v) in [("inp_bits", self.inp_bits), ("wgt_bits", self.wgt_bits)] {
            if !OPERAND_BITS.contains(&v) {
                return Err(ConfigError::BadPrecision {
                    field,
                    value: v,
                    allowed: OPERAND_BITS,
                });
            }
        }
        if !ACC_BITS.contains(&self.acc_bits) {
            return Err(ConfigError::BadPrecision {
                field: "acc_bits",
                value: self.acc_bits,
                allowed: ACC_BITS,
            });
        }
        for (field, scope, bytes) in [
            ("uop_buf_bytes", MemScope::Uop, self.uop_buf_bytes),
            ("inp_buf_bytes", MemScope::Inp, self.inp_buf_bytes),
            ("wgt_buf_bytes", MemScope::Wgt, self.wgt_buf_bytes),
            ("acc_buf_bytes", MemScope::Acc, self.acc_buf_bytes),
        ] {
            let tile_bits = self.tile_bits(scope);
            if (bytes * 8) % tile_bits != 0 {
                return Err(ConfigError::BufferNotTileMultiple {
                    field,
                    bytes,
                    tile_bits,
                });
            }
        }
        let max = self.batch * self.block_out;
        if self.alu_lanes > max {
            return Err(ConfigError::TooManyLanes {
                lanes: self.alu_lanes,
                max,
            });
        }
        Ok(())
    }

    /// Elements per tile of the given scope (1 for micro-ops).
    pub fn tile_elems(&self, scope: MemScope) -> usize {
        match scope {
            MemScope::Uop => 1,
            MemScope::Inp => self.batch * self.block_in,
            MemScope::Wgt => self.block_out * self.block_in,
            MemScope::Acc | MemScope::Out => self.batch * self.block_out,
        }
    }

    pub fn elem_bits(&self, scope: MemScope) -> u32 {
        match scope {
            MemScope::Uop => 32,
            MemScope::Inp | MemScope::Out => self.inp_bits,
            MemScope::Wgt => self.wgt_bits,
            MemScope::Acc => self.acc_bits,
        }
    }

    /// Logical tile size in bits, as seen by the on-chip memories and DMA engine.
    pub fn tile_bits(&self, scope: MemScope) -> usize {
        self.tile_elems(scope) * self.elem_bits(scope) as usize
    }

    /// Bytes occupied by one element in a DRAM image. Sub-byte operands are
    /// held in one byte each.
    pub fn dram_elem_bytes(&self, scope: MemScope) -> usize {
        match scope {
            MemScope::Uop => 4,
            MemScope::Inp | MemScope::Out | MemScope::Wgt => 1,
            MemScope::Acc => (self.acc_bits / 8) as usize,
        }
    }

    /// Bytes occupied by one tile in a DRAM image; `dram_base` counts in these units.
    pub fn dram_tile_bytes(&self, scope: MemScope) -> usize {
        self.tile_elems(scope) * self.dram_elem_bytes(scope)
    }

    pub fn buf_bytes(&self, scope: MemScope) -> usize {
        match scope {
            MemScope::Uop => self.uop_buf_bytes,
            MemScope::Inp => self.inp_buf_bytes,
            MemScope::Wgt => self.wgt_buf_bytes,
            MemScope::Acc | MemScope::Out => self.acc_buf_bytes,
        }
    }

    /// Number of tiles (or micro-op entries) a scope's buffer holds. OUT
    /// shares the accumulator buffer.
    pub fn capacity(&self, scope: MemScope) -> usize {
        let tile = match scope {
            MemScope::Out => MemScope::Acc,
            s => s,
        };
        self.buf_bytes(scope) * 8 / self.tile_bits(tile)
    }

    /// Capacity clipped to what the micro-op and instruction fields can address.
    pub fn addressable(&self, scope: MemScope) -> usize {
        let limit = match scope {
            MemScope::Uop => UOP_BUFFER_LIMIT,
            MemScope::Inp => UOP_INP_INDEX_LIMIT,
            MemScope::Wgt => UOP_WGT_INDEX_LIMIT,
            MemScope::Acc | MemScope::Out => UOP_ACC_INDEX_LIMIT,
        };
        self.capacity(scope).min(limit)
    }

    /// Multiply-accumulates performed by one GEMM intrinsic.
    pub fn intrinsic_macs(&self) -> u64 {
        (self.batch * self.block_in * self.block_out) as u64
    }

    /// Tuple used for deterministic lexicographic ordering.
    fn knob_key(&self) -> (usize, usize, usize, u32, u32, u32, usize, usize, usize, usize, usize, u64) {
        (
            self.batch,
            self.block_in,
            self.block_out,
            self.inp_bits,
            self.wgt_bits,
            self.acc_bits,
            self.uop_buf_bytes,
            self.inp_buf_bytes,
            self.wgt_buf_bytes,
            self.acc_buf_bytes,
            self.alu_lanes,
            self.freq_mhz.to_bits(),
        )
    }

    pub fn cmp_knobs(&self, other: &Self) -> Ordering {
        self.knob_key()
            .cmp(&other.knob_key())
            .then(self.freq_mhz.total_cmp(&other.freq_mhz))
    }

    /// Short human-readable label, e.g. `(2,16)x(16,16)@100`.
    pub fn label(&self) -> String {
        format!(
            "({},{})x({},{})@{}",
            self.batch, self.block_in, self.block_out, self.block_in, self.freq_mhz
        )
    }
}

/// A target device's resource budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub dsp_total: u64,
    pub bram_kbits_total: u64,
    pub lut_total: u64,
    pub max_freq_mhz: f64,
    pub util_cap: f64,
    /// Constants of the linear LUT proxy `lut = c0 + c1 * dsp`.
    #[serde(default)]
    pub lut_model: LutModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LutModel {
    pub c0: u64,
    pub c1: u64,
}

impl Default for LutModel {
    fn default() -> Self {
        LutModel { c0: 5000, c1: 40 }
    }
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field| ConfigError::BadDevice {
            name: self.name.clone(),
            field,
        };
        if self.dsp_total == 0 {
            return Err(bad("dsp_total"));
        }
        if self.bram_kbits_total == 0 {
            return Err(bad("bram_kbits_total"));
        }
        if self.lut_total == 0 {
            return Err(bad("lut_total"));
        }
        if !(self.max_freq_mhz > 0.0) {
            return Err(bad("max_freq_mhz"));
        }
        if !(self.util_cap > 0.0 && self.util_cap <= 1.0) {
            return Err(ConfigError::BadUtilCap {
                name: self.name.clone(),
                cap: self.util_cap,
            });
        }
        Ok(())
    }

    /// A small edge board in the class of the Ultra-96. The numbers are
    /// configuration inputs, not datasheet facts.
    pub fn ultra96() -> Self {
        DeviceProfile {
            name: "ultra96".into(),
            dsp_total: 360,
            bram_kbits_total: 7776,
            lut_total: 70560,
            max_freq_mhz: 333.0,
            util_cap: 0.9,
            lut_model: LutModel::default(),
        }
    }

    pub fn pynq_z1() -> Self {
        DeviceProfile {
            name: "pynq-z1".into(),
            dsp_total: 220,
            bram_kbits_total: 4480,
            lut_total: 53200,
            max_freq_mhz: 250.0,
            util_cap: 0.9,
            lut_model: LutModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub dsp: u64,
    pub bram_kbits: u64,
    pub lut: u64,
}

/// Allowed values per knob. The three GEMM-shape lists are crossed unless
/// `intrinsics` is given, in which case those exact shapes are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpace {
    #[serde(default)]
    pub batch: Vec<usize>,
    #[serde(default)]
    pub block_in: Vec<usize>,
    #[serde(default)]
    pub block_out: Vec<usize>,
    /// Explicit (batch, block_in, block_out) triples.
    #[serde(default)]
    pub intrinsics: Vec<(usize, usize, usize)>,
    pub inp_bits: Vec<u32>,
    pub wgt_bits: Vec<u32>,
    pub acc_bits: Vec<u32>,
    pub uop_buf_bytes: Vec<usize>,
    pub inp_buf_bytes: Vec<usize>,
    pub wgt_buf_bytes: Vec<usize>,
    pub acc_buf_bytes: Vec<usize>,
    /// ALU lane counts; an empty list means one lane per accumulator element.
    #[serde(default)]
    pub alu_lanes: Vec<usize>,
    pub freq_mhz: Vec<f64>,
}

impl CandidateSpace {
    /// A space that contains exactly `p`.
    pub fn singleton(p: &HardwareParams) -> Self {
        CandidateSpace {
            batch: vec![p.batch],
            block_in: vec![p.block_in],
            block_out: vec![p.block_out],
            intrinsics: vec![],
            inp_bits: vec![p.inp_bits],
            wgt_bits: vec![p.wgt_bits],
            acc_bits: vec![p.acc_bits],
            uop_buf_bytes: vec![p.uop_buf_bytes],
            inp_buf_bytes: vec![p.inp_buf_bytes],
            wgt_buf_bytes: vec![p.wgt_buf_bytes],
            acc_buf_bytes: vec![p.acc_buf_bytes],
            alu_lanes: vec![p.alu_lanes],
            freq_mhz: vec![p.freq_mhz],
        }
    }

    fn shapes(&self) -> Vec<(usize, usize, usize)> {
        if !self.intrinsics.is_empty() {
            return self.intrinsics.clone();
        }
        let mut out = Vec::new();
        for &b in &self.batch {
            for &bi in &self.block_in {
                for &bo in &self.block_out {
                    out.push((b, bi, bo));
                }
            }
        }
        out
    }
}

/// Cartesian product of the space, filtered by [`HardwareParams::validate`],
/// in lexicographic knob order with duplicates removed.
pub fn enumerate_candidates(space: &CandidateSpace) -> Vec<HardwareParams> {
    let mut out = Vec::new();
    for (batch, block_in, block_out) in space.shapes() {
        for &inp_bits in &space.inp_bits {
            for &wgt_bits in &space.wgt_bits {
                for &acc_bits in &space.acc_bits {
                    for &uop in &space.uop_buf_bytes {
                        for &inp in &space.inp_buf_bytes {
                            for &wgt in &space.wgt_buf_bytes {
                                for &acc in &space.acc_buf_bytes {
                                    let lanes = if space.alu_lanes.is_empty() {
                                        vec![batch * block_out]
                                    } else {
                                        space.alu_lanes.clone()
                                    };
                                    for alu_lanes in lanes {
                                        for &freq_mhz in &space.freq_mhz {
                                            let p = HardwareParams {
                                                batch,
                                                block_in,
                                                block_out,
                                                inp_bits,
                                                wgt_bits,
                                                acc_bits,
                                                uop_buf_bytes: uop,
                                                inp_buf_bytes: inp,
                                                wgt_buf_bytes: wgt,
                                                acc_buf_bytes: acc,
                                                alu_lanes,
                                                freq_mhz,
                                            };
                                            if p.validate().is_ok() {
                                                out.push(p);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.cmp_knobs(b));
    out.dedup();
    out
}

pub fn estimate_resources(p: &HardwareParams, lut: LutModel) -> ResourceEstimate {
    let per_mult = if p.inp_bits.max(p.wgt_bits) <= 8 { 1 } else { 2 };
    let dsp = (p.batch * p.block_in * p.block_out) as u64 * per_mult;
    let bytes = (p.uop_buf_bytes + p.inp_buf_bytes + p.wgt_buf_bytes + p.acc_buf_bytes) as u64;
    ResourceEstimate {
        dsp,
        bram_kbits: 8 * bytes / 1024,
        lut: lut.c0 + lut.c1 * dsp,
    }
}

/// Every resource within `util_cap` of the device total (inclusive) and the
/// clock within the device maximum.
pub fn is_feasible(p: &HardwareParams, d: &DeviceProfile) -> bool {
    let r = estimate_resources(p, d.lut_model);
    let fits = |used: u64, total: u64| used as f64 <= d.util_cap * total as f64;
    fits(r.dsp, d.dsp_total)
        && fits(r.bram_kbits, d.bram_kbits_total)
        && fits(r.lut, d.lut_total)
        && p.freq_mhz <= d.max_freq_mhz
}

/// Peak throughput in GOPS with a multiply-add counted as two operations.
pub fn peak_gops(p: &HardwareParams) -> f64 {
    2.0 * (p.batch * p.block_in * p.block_out) as f64 * p.freq_mhz / 1000.0
}

/// Feasible candidates ordered by peak throughput (descending), then by
/// smaller BRAM footprint, then by knob order; at most `top_k` returned.
pub fn prune_candidates(
    cands: &[HardwareParams],
    d: &DeviceProfile,
    top_k: usize,
) -> Vec<HardwareParams> {
    let mut feasible: Vec<&HardwareParams> = cands.iter().filter(|p| is_feasible(p, d)).collect();
    feasible.sort_by(|a, b| {
        peak_gops(b)
            .total_cmp(&peak_gops(a))
            .then_with(|| {
                let ra = estimate_resources(a, d.lut_model).bram_kbits;
                let rb = estimate_resources(b, d.lut_model).bram_kbits;
                ra.cmp(&rb)
            })
            .then_with(|| a.cmp_knobs(b))
    });
    feasible.into_iter().take(top_k).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(batch: usize, block_in: usize, block_out: usize) -> HardwareParams {
        HardwareParams::with_tile_counts(batch, block_in, block_out, 1024, 256, 256, 256)
    }

    fn space_8() -> CandidateSpace {
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
            wgt_buf_bytes: vec![262144],
            acc_buf_bytes: vec![131072],
            alu_lanes: vec![],
            freq_mhz: vec![100.0],
        }
    }

    #[test]
    fn default_is_valid() {
        let p = HardwareParams::default();
        p.validate().unwrap();
        assert_eq!(p.capacity(MemScope::Inp), 2048);
        assert_eq!(p.capacity(MemScope::Wgt), 1024);
        assert_eq!(p.capacity(MemScope::Acc), 2048);
        assert_eq!(p.capacity(MemScope::Uop), 8192);
    }

    #[test]
    fn invariants_rejected() {
        let mut p = HardwareParams::default();
        p.block_in = 12;
        assert!(matches!(p.validate(), Err(ConfigError::NotPowerOfTwo { .. })));
        let mut p = HardwareParams::default();
        p.inp_bits = 3;
        assert!(matches!(p.validate(), Err(ConfigError::BadPrecision { .. })));
        let mut p = HardwareParams::default();
        p.acc_bits = 64;
        assert!(p.validate().is_err());
        let mut p = HardwareParams::default();
        p.inp_buf_bytes += 1;
        assert!(matches!(
            p.validate(),
            Err(ConfigError::BufferNotTileMultiple { .. })
        ));
        let mut p = HardwareParams::default();
        p.alu_lanes = 17;
        assert!(matches!(p.validate(), Err(ConfigError::TooManyLanes { .. })));
    }

    #[test]
    fn sub_byte_tiles() {
        let mut p = HardwareParams::with_tile_counts(1, 1, 1, 8, 8, 8, 8);
        p.inp_bits = 1;
        p.inp_buf_bytes = 1;
        p.validate().unwrap();
        assert_eq!(p.capacity(MemScope::Inp), 8);
        assert_eq!(p.dram_tile_bytes(MemScope::Inp), 1);
    }

    #[test]
    fn enumerate_counts() {
        assert_eq!(enumerate_candidates(&space_8()).len(), 8);
        let one = CandidateSpace::singleton(&HardwareParams::default());
        assert_eq!(enumerate_candidates(&one), vec![HardwareParams::default()]);
        let mut empty = space_8();
        empty.batch.clear();
        assert!(enumerate_candidates(&empty).is_empty());
    }

    #[test]
    fn enumerate_contains_paired_intrinsics() {
        let mut s = space_8();
        s.intrinsics = vec![(2, 16, 16), (8, 8, 8)];
        let c = enumerate_candidates(&s);
        assert_eq!(c.len(), 2);
        assert!(c.iter().any(|p| (p.batch, p.block_in, p.block_out) == (2, 16, 16)));
        assert!(c.iter().any(|p| (p.batch, p.block_in, p.block_out) == (8, 8, 8)));
        assert!(c.iter().all(|p| p.inp_bits == 8 && p.wgt_bits == 8));
    }

    #[test]
    fn enumerate_is_lexicographic() {
        let c = enumerate_candidates(&space_8());
        let shapes: Vec<_> = c.iter().map(|p| (p.batch, p.block_in, p.block_out)).collect();
        let mut sorted = shapes.clone();
        sorted.sort();
        assert_eq!(shapes, sorted);
    }

    #[test]
    fn resources() {
        let p = shape(1, 16, 16);
        assert_eq!(estimate_resources(&p, LutModel::default()).dsp, 256);
        let p = shape(1, 1, 1);
        assert_eq!(estimate_resources(&p, LutModel::default()).dsp, 1);
        let mut p = HardwareParams::default();
        p.uop_buf_bytes = 32768;
        p.inp_buf_bytes = 32768;
        p.wgt_buf_bytes = 32768;
        p.acc_buf_bytes = 32768;
        let r = estimate_resources(&p, LutModel::default());
        assert_eq!(r.bram_kbits, 1024);
        assert_eq!(r.lut, 5000 + 40 * 256);
    }

    #[test]
    fn feasibility() {
        let mut d = DeviceProfile::pynq_z1();
        d.dsp_total = 220;
        d.util_cap = 0.9;
        d.bram_kbits_total = 1 << 20;
        d.lut_total = 1 << 30;
        let p = shape(1, 16, 16);
        assert!(!is_feasible(&p, &d));

        // Exactly at the cap is feasible.
        let p = shape(1, 8, 8);
        let mut d = DeviceProfile::ultra96();
        d.util_cap = 0.5;
        d.dsp_total = 128;
        d.bram_kbits_total = 1 << 20;
        d.lut_total = 1 << 30;
        assert!(is_feasible(&p, &d));
        d.dsp_total = 127;
        assert!(!is_feasible(&p, &d));

        let mut p = shape(1, 8, 8);
        p.freq_mhz = d.max_freq_mhz + 1.0;
        d.dsp_total = 1 << 20;
        assert!(!is_feasible(&p, &d));
    }

    #[test]
    fn zero_size_always_fits() {
        let p = HardwareParams {
            batch: 0,
            block_in: 0,
            block_out: 0,
            uop_buf_bytes: 0,
            inp_buf_bytes: 0,
            wgt_buf_bytes: 0,
            acc_buf_bytes: 0,
            freq_mhz: 0.0,
            ..HardwareParams::default()
        };
        let mut d = DeviceProfile::pynq_z1();
        d.lut_model = LutModel { c0: 0, c1: 40 };
        assert!(is_feasible(&p, &d));
    }

    #[test]
    fn peak() {
        let mut p = shape(2, 16, 16);
        p.freq_mhz = 100.0;
        assert_eq!(peak_gops(&p), 102.4);
        let mut p = shape(1, 1, 1);
        p.freq_mhz = 1000.0;
        assert_eq!(peak_gops(&p), 2.0);
        let mut p = shape(8, 8, 8);
        p.freq_mhz = 100.0;
        assert_eq!(peak_gops(&p), 102.4);
    }

    #[test]
    fn prune_orders_and_filters() {
        let cands = enumerate_candidates(&space_8());
        let mut d = DeviceProfile::ultra96();
        d.dsp_total = 1 << 20;
        d.bram_kbits_total = 1 << 20;
        d.lut_total = 1 << 30;
        let top = prune_candidates(&cands, &d, 8);
        assert_eq!(top.len(), 8);
        for w in top.windows(2) {
            assert!(peak_gops(&w[0]) >= peak_gops(&w[1]));
        }
        d.dsp_total = 1;
        assert!(prune_candidates(&cands, &d, 8).is_empty());
    }

    #[test]
    fn prune_tie_break_on_bram() {
        let a = shape(1, 16, 16);
        let mut b = shape(1, 16, 16);
        b.acc_buf_bytes *= 2;
        let mut d = DeviceProfile::ultra96();
        d.dsp_total = 1 << 20;
        d.bram_kbits_total = 1 << 20;
        d.lut_total = 1 << 30;
        let out = prune_candidates(&[b.clone(), a.clone()], &d, 2);
        assert_eq!(out, vec![a, b]);
    }

    #[test]
    fn json_field_names() {
        let v = serde_json::to_value(HardwareParams::default()).unwrap();
        for k in [
            "batch",
            "block_in",
            "block_out",
            "inp_bits",
            "wgt_bits",
            "acc_bits",
            "uop_buf_bytes",
            "inp_buf_bytes",
            "wgt_buf_bytes",
            "acc_buf_bytes",
            "alu_lanes",
            "freq_mhz",
        ] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
