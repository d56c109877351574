use serde::{Deserialize, Serialize};

use crate::config::{HardwareParams, MemScope};
use crate::refops::Tensor;
use crate::sim::wrap_bits;

/// How a tensor is blocked in DRAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Features `[N/b][C/bi][H][W][b][bi]`, one byte per element.
    Inp,
    /// Weights `[O/bo][I/bi][KH][KW][bo][bi]`, one byte per element.
    Wgt,
    /// Features `[N/b][C/bo][H][W][b][bo]` at accumulator width.
    Acc,
    /// Features `[N/b][C/bo][H][W][b][bo]`, one byte per element.
    Out,
}

impl Role {
    pub fn scope(self) -> MemScope {
        match self {
            Role::Inp => MemScope::Inp,
            Role::Wgt => MemScope::Wgt,
            Role::Acc => MemScope::Acc,
            Role::Out => MemScope::Out,
        }
    }

    /// Block sizes along (outer, inner) = (rows of a tile, columns of a tile).
    fn blocking(self, p: &HardwareParams) -> (usize, usize) {
        match self {
            Role::Inp => (p.batch, p.block_in),
            Role::Wgt => (p.block_out, p.block_in),
            Role::Acc | Role::Out => (p.batch, p.block_out),
        }
    }
}

/// A tensor in blocked DRAM layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTensor {
    pub role: Role,
    /// Logical shape, rank 4 (rank-2 tensors gain two unit dims).
    pub dims: [usize; 4],
    /// Shape after zero-padding the two blocked dims.
    pub padded: [usize; 4],
    pub bytes: Vec<u8>,
}

fn as4(dims: &[usize]) -> [usize; 4] {
    match *dims {
        [a, b] => [a, b, 1, 1],
        [a, b, c, d] => [a, b, c, d],
        _ => panic!("packing expects rank 2 or 4, got {dims:?}"),
    }
}

fn put(bytes: &mut [u8], at: usize, width: usize, v: i32, bits: u32) {
    let v = wrap_bits(v as i64, bits);
    bytes[at..at + width].copy_from_slice(&v.to_le_bytes()[..width]);
}

fn get(bytes: &[u8], at: usize, width: usize) -> i32 {
    let mut b = [0u8; 4];
    b[..width].copy_from_slice(&bytes[at..at + width]);
    let sh = 32 - 8 * width as u32;
    (i32::from_le_bytes(b) << sh) >> sh
}

/// Tile index and in-tile element offset of logical index `(a, b, c, d)`.
fn blocked_index(padded: [usize; 4], ra: usize, rb: usize, a: usize, b: usize, c: usize, d: usize) -> (usize, usize) {
    let [_, pb, pc, pd] = padded;
    let tile = (((a / ra) * (pb / rb) + b / rb) * pc + c) * pd + d;
    (tile, (a % ra) * rb + b % rb)
}

/// Packs a tensor into the blocked layout of `role`, zero-padding the
/// batch/output-channel and channel dims up to block multiples.
pub fn pack_layout(t: &Tensor<i32>, p: &HardwareParams, role: Role) -> PackedTensor {
    let dims = as4(t.dims());
    let (ra, rb) = role.blocking(p);
    let padded = [dims[0].next_multiple_of(ra), dims[1].next_multiple_of(rb), dims[2], dims[3]];
    let width = p.dram_elem_bytes(role.scope());
    let bits = p.elem_bits(role.scope());
    let tile_elems = ra * rb;
    let mut bytes = vec![0u8; padded.iter().product::<usize>() * width];
    for a in 0..dims[0] {
        for b in 0..dims[1] {
            for c in 0..dims[2] {
                for d in 0..dims[3] {
                    let v = t.data()[((a * dims[1] + b) * dims[2] + c) * dims[3] + d];
                    let (tile, e) = blocked_index(padded, ra, rb, a, b, c, d);
                    put(&mut bytes, (tile * tile_elems + e) * width, width, v, bits);
                }
            }
        }
    }
    PackedTensor {
        role,
        dims,
        padded,
        bytes,
    }
}

/// Inverse of [`pack_layout`]; padding is dropped. `rank` selects a rank-2
/// or rank-4 result.
pub fn unpack_layout(pk: &PackedTensor, p: &HardwareParams, rank: usize) -> Tensor<i32> {
    let dims = pk.dims;
    let (ra, rb) = pk.role.blocking(p);
    let width = p.dram_elem_bytes(pk.role.scope());
    let tile_elems = ra * rb;
    let out = Tensor::from_fn(dims.to_vec(), |i| {
        let d = i % dims[3];
        let c = (i / dims[3]) % dims[2];
        let b = (i / (dims[3] * dims[2])) % dims[1];
        let a = i / (dims[3] * dims[2] * dims[1]);
        let (tile, e) = blocked_index(pk.padded, ra, rb, a, b, c, d);
        get(&pk.bytes, (tile * tile_elems + e) * width, width)
    });
    if rank == 2 {
        out.reshape(dims[..2].to_vec()).expect("same element count")
    } else {
        out
    }
}

/// Per-channel bias as accumulator tiles `[C/bo][b][bo]`, replicated
/// across the batch rows of each tile.
pub fn pack_bias(bias: &Tensor<i32>, p: &HardwareParams) -> Vec<u8> {
    let c = bias.len();
    let cb = c.div_ceil(p.block_out);
    let width = p.dram_elem_bytes(MemScope::Acc);
    let mut bytes = vec![0u8; cb * p.batch * p.block_out * width];
    for (ch, &v) in bias.data().iter().enumerate() {
        let (tile, o) = (ch / p.block_out, ch % p.block_out);
        for b in 0..p.batch {
            let e = tile * p.batch * p.block_out + b * p.block_out + o;
            put(&mut bytes, e * width, width, v, p.acc_bits);
        }
    }
    bytes
}

/// A named DRAM range holding one packed tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub scope: MemScope,
    /// Byte offset; always a multiple of the scope's tile size.
    pub offset: usize,
    pub bytes: usize,
}

impl Region {
    /// `dram_base` of the first tile in the region.
    pub fn base_tile(&self, p: &HardwareParams) -> usize {
        self.offset / p.dram_tile_bytes(self.scope)
    }
}

/// The DRAM map of one lowered operator.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramLayout {
    pub regions: Vec<Region>,
    pub total_bytes: usize,
}

impl DramLayout {
    /// Appends a region aligned to its tile size.
    pub fn add(&mut self, name: &str, scope: MemScope, bytes: usize, p: &HardwareParams) -> &Region {
        let align = p.dram_tile_bytes(scope).max(64);
        let offset = self.total_bytes.next_multiple_of(align);
        self.total_bytes = offset + bytes;
        self.regions.push(Region {
            name: name.to_string(),
            scope,
            offset,
            bytes,
        });
        self.regions.last().unwrap()
    }

    pub fn get(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_blocks_are_identity() {
        let p = HardwareParams::with_tile_counts(1, 1, 1, 16, 16, 16, 16);
        let t = Tensor::from_fn(vec![2, 3, 2, 2], |i| i as i32 - 12);
        let pk = pack_layout(&t, &p, Role::Inp);
        let flat: Vec<i32> = pk.bytes.iter().map(|&b| b as i8 as i32).collect();
        assert_eq!(flat, t.data());
    }

    #[test]
    fn channel_blocking_of_four() {
        let p = HardwareParams::with_tile_counts(1, 2, 2, 16, 16, 16, 16);
        let t = Tensor::new(vec![1, 4, 1, 1], vec![10, 11, 12, 13]).unwrap();
        let pk = pack_layout(&t, &p, Role::Inp);
        // tile 0 = [c0, c1], tile 1 = [c2, c3]
        assert_eq!(pk.bytes, vec![10, 11, 12, 13]);
        let t = Tensor::new(vec![1, 3, 1, 1], vec![1, 2, 3]).unwrap();
        let pk = pack_layout(&t, &p, Role::Inp);
        assert_eq!(pk.padded, [1, 4, 1, 1]);
        assert_eq!(pk.bytes, vec![1, 2, 3, 0]);
    }

    #[test]
    fn weight_tiles_are_out_by_in() {
        let p = HardwareParams::with_tile_counts(1, 2, 2, 16, 16, 16, 16);
        // O=2, I=2, 1x1: tile = [[w00, w01], [w10, w11]]
        let t = Tensor::new(vec![2, 2, 1, 1], vec![1, 2, 3, 4]).unwrap();
        assert_eq!(pack_layout(&t, &p, Role::Wgt).bytes, vec![1, 2, 3, 4]);
    }

    #[test]
    fn bias_replicated_over_batch() {
        let p = HardwareParams::with_tile_counts(2, 2, 2, 16, 16, 16, 16);
        let b = Tensor::new(vec![3], vec![1, -2, 3]).unwrap();
        let bytes = pack_bias(&b, &p);
        let vals: Vec<i32> = bytes.chunks(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(vals, vec![1, -2, 1, -2, 3, 0, 3, 0]);
    }

    #[test]
    fn regions_are_tile_aligned() {
        let p = HardwareParams::default();
        let mut l = DramLayout::default();
        l.add("a", MemScope::Inp, 3, &p);
        let r = l.add("b", MemScope::Acc, 64, &p).clone();
        assert_eq!(r.offset % p.dram_tile_bytes(MemScope::Acc), 0);
        assert_eq!(r.base_tile(&p) * p.dram_tile_bytes(MemScope::Acc), r.offset);
    }

    proptest! {
        #[test]
        fn roundtrip(
            n in 1usize..4, c in 1usize..9, h in 1usize..4, w in 1usize..4,
            shape in 0usize..4, role in 0usize..4, seed in any::<u64>(),
        ) {
            let (b, blk) = [(1, 1), (1, 4), (2, 2), (4, 8)][shape];
            let p = HardwareParams::with_tile_counts(b, blk, blk, 16, 16, 16, 16);
            let role = [Role::Inp, Role::Wgt, Role::Acc, Role::Out][role];
            let t = Tensor::from_fn(vec![n, c, h, w], |i| ((i as u64 * 2654435761 + seed) % 255) as i32 - 127);
            let pk = pack_layout(&t, &p, role);
            prop_assert_eq!(unpack_layout(&pk, &p, 4), t);
        }
    }
}
