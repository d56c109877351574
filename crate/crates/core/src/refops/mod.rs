//! Host reference operators. These are the verification oracle for
//! everything the accelerator computes and also the CPU fallback used by
//! the runtime for operators the accelerator cannot run.

mod quant;
mod tensor;

pub use quant::{dequantize, quantize, requantize, saturate, QuantParams};
pub use tensor::{container_dtype, Element, Tensor, TensorError, TENSOR_MAGIC, TENSOR_VERSION};

use num_traits::{AsPrimitive, PrimInt};
use thiserror::Error;

use crate::isa::AluOp;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RefError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{axis}: ({extent} + 2*{pad} - {kernel}) is not divisible by stride {stride}")]
    NonIntegralOutput {
        axis: &'static str,
        extent: usize,
        pad: usize,
        kernel: usize,
        stride: usize,
    },
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("channels {channels} not divisible by groups {groups}")]
    Groups { channels: usize, groups: usize },
}

fn shape(msg: impl Into<String>) -> RefError {
    RefError::Shape(msg.into())
}

/// Output extent of a strided window. The window must tile the padded
/// input exactly.
pub fn conv_out_extent(
    axis: &'static str,
    extent: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, RefError> {
    if stride == 0 {
        return Err(RefError::Zero("stride"));
    }
    let padded = extent + 2 * pad;
    if kernel == 0 || padded < kernel {
        return Err(shape(format!(
            "{axis}: kernel {kernel} does not fit padded extent {padded}"
        )));
    }
    if (padded - kernel) % stride != 0 {
        return Err(RefError::NonIntegralOutput {
            axis,
            extent,
            pad,
            kernel,
            stride,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution: `(H-1)*stride + K - 2*pad`.
pub fn transpose_out_extent(
    axis: &'static str,
    extent: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, RefError> {
    if stride == 0 {
        return Err(RefError::Zero("stride"));
    }
    let full = (extent - 1) * stride + kernel;
    if extent == 0 || kernel == 0 || full <= 2 * pad {
        return Err(shape(format!(
            "{axis}: transpose of extent {extent} with kernel {kernel} and pad {pad} is empty"
        )));
    }
    Ok(full - 2 * pad)
}

fn rank4<T>(t: &Tensor<T>, what: &str) -> Result<[usize; 4], RefError>
where
    T: Copy,
{
    <[usize; 4]>::try_from(t.dims()).map_err(|_| shape(format!("{what} must be rank 4, got {:?}", t.dims())))
}

/// Direct grouped convolution with i32 accumulation. `w` is
/// `[O, I/groups, KH, KW]`; group `g` maps input channels
/// `[g*I/groups, (g+1)*I/groups)` to output channels `[g*O/groups, ...)`.
pub fn grouped_conv2d_ref<T>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<Tensor<i32>, RefError>
where
    T: PrimInt + AsPrimitive<i32>,
{
    let [n, c, h, wd] = rank4(x, "input")?;
    let [o, ig, kh, kw] = rank4(w, "weight")?;
    if groups == 0 {
        return Err(RefError::Zero("groups"));
    }
    if c % groups != 0 {
        return Err(RefError::Groups { channels: c, groups });
    }
    if o % groups != 0 {
        return Err(RefError::Groups { channels: o, groups });
    }
    if ig != c / groups {
        return Err(shape(format!(
            "weight has {ig} input channels per group, input has {c}/{groups}"
        )));
    }
    let oh = conv_out_extent("height", h, kh, stride, pad)?;
    let ow = conv_out_extent("width", wd, kw, stride, pad)?;
    let og = o / groups;
    let mut out = Tensor::filled(vec![n, o, oh, ow], 0i32);
    let xd = x.data();
    let wdta = w.data();
    for b in 0..n {
        for oc in 0..o {
            let g = oc / og;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0i32;
                    for icg in 0..ig {
                        let ic = g * ig + icg;
                        for ky in 0..kh {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let a: i32 = xd[x.offset4(b, ic, iy as usize, ix as usize)].as_();
                                let k: i32 = wdta[w.offset4(oc, icg, ky, kx)].as_();
                                acc = acc.wrapping_add(a.wrapping_mul(k));
                            }
                        }
                    }
                    let at = out.offset4(b, oc, y, xo);
                    out.data_mut()[at] = acc;
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_ref<T>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<i32>, RefError>
where
    T: PrimInt + AsPrimitive<i32>,
{
    grouped_conv2d_ref(x, w, stride, pad, 1)
}

/// Transposed convolution in scatter form: every input pixel adds the
/// kernel, scaled by its value, at output offset `(iy*stride, ix*stride)`;
/// the result is then cropped by `pad` on every side. `w` is `[O, I, KH, KW]`.
pub fn conv2d_transpose_ref<T>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<i32>, RefError>
where
    T: PrimInt + AsPrimitive<i32>,
{
    let [n, c, h, wd] = rank4(x, "input")?;
    let [o, i, kh, kw] = rank4(w, "weight")?;
    if i != c {
        return Err(shape(format!("weight has {i} input channels, input has {c}")));
    }
    let oh = transpose_out_extent("height", h, kh, stride, pad)?;
    let ow = transpose_out_extent("width", wd, kw, stride, pad)?;
    let mut out = Tensor::filled(vec![n, o, oh, ow], 0i32);
    for b in 0..n {
        for ic in 0..c {
            for iy in 0..h {
                for ix in 0..wd {
                    let v: i32 = x.at4(b, ic, iy, ix).as_();
                    if v == 0 {
                        continue;
                    }
                    for oc in 0..o {
                        for ky in 0..kh {
                            let y = (iy * stride + ky) as isize - pad as isize;
                            if y < 0 || y >= oh as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let xo = (ix * stride + kx) as isize - pad as isize;
                                if xo < 0 || xo >= ow as isize {
                                    continue;
                                }
                                let k: i32 = w.at4(oc, ic, ky, kx).as_();
                                let at = out.offset4(b, oc, y as usize, xo as usize);
                                let d = &mut out.data_mut()[at];
                                *d = d.wrapping_add(v.wrapping_mul(k));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `y[n][m] = sum_k x[n][k] * w[m][k]`.
pub fn dense_ref<T>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<i32>, RefError>
where
    T: PrimInt + AsPrimitive<i32>,
{
    let (&[n, k], &[m, k2]) = (x.dims(), w.dims()) else {
        return Err(shape(format!(
            "dense expects rank-2 operands, got {:?} and {:?}",
            x.dims(),
            w.dims()
        )));
    };
    if k != k2 {
        return Err(shape(format!("inner dimensions {k} and {k2} differ")));
    }
    let mut out = Tensor::filled(vec![n, m], 0i32);
    for r in 0..n {
        for c in 0..m {
            let mut acc = 0i32;
            for j in 0..k {
                let a: i32 = x.data()[r * k + j].as_();
                let b: i32 = w.data()[c * k + j].as_();
                acc = acc.wrapping_add(a.wrapping_mul(b));
            }
            out.data_mut()[r * m + c] = acc;
        }
    }
    Ok(out)
}

/// Second operand of an element-wise ALU operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor<i32>),
    Imm(i32),
}

/// Element-wise MIN/MAX/ADD/SHR with the accelerator's 32-bit semantics.
pub fn alu_ref(op: AluOp, a: &Tensor<i32>, b: Operand<'_>) -> Result<Tensor<i32>, RefError> {
    match b {
        Operand::Imm(imm) => Ok(a.map(|x| op.apply(x, imm))),
        Operand::Tensor(t) => {
            if t.dims() != a.dims() {
                return Err(shape(format!(
                    "ALU operands {:?} and {:?} differ",
                    a.dims(),
                    t.dims()
                )));
            }
            let data = a
                .data()
                .iter()
                .zip(t.data())
                .map(|(&x, &y)| op.apply(x, y))
                .collect();
            Tensor::new(a.dims().to_vec(), data).map_err(|e| shape(e.to_string()))
        }
    }
}

/// Window maximum over every channel plane of an N,C,H,W tensor.
pub fn maxpool2d_ref<T>(x: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>, RefError>
where
    T: PrimInt,
{
    let [n, c, h, w] = rank4(x, "input")?;
    if window == 0 {
        return Err(RefError::Zero("window"));
    }
    let oh = conv_out_extent("height", h, window, stride, 0)?;
    let ow = conv_out_extent("width", w, window, stride, 0)?;
    let mut out = Tensor::filled(vec![n, c, oh, ow], T::min_value());
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut m = T::min_value();
                    for ky in 0..window {
                        for kx in 0..window {
                            m = m.max(x.at4(b, ch, y * stride + ky, xo * stride + kx));
                        }
                    }
                    let at = out.offset4(b, ch, y, xo);
                    out.data_mut()[at] = m;
                }
            }
        }
    }
    Ok(out)
}

/// Inserts `stride - 1` zeros between input pixels and pads every border by
/// `edge`. Used to express a transposed convolution as a plain one.
pub fn zero_insert<T: PrimInt>(x: &Tensor<T>, stride: usize, edge: usize) -> Result<Tensor<T>, RefError> {
    let [n, c, h, w] = rank4(x, "input")?;
    let hh = (h - 1) * stride + 1 + 2 * edge;
    let ww = (w - 1) * stride + 1 + 2 * edge;
    let mut out = Tensor::filled(vec![n, c, hh, ww], T::zero());
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xo in 0..w {
                    let at = out.offset4(b, ch, edge + y * stride, edge + xo * stride);
                    out.data_mut()[at] = x.at4(b, ch, y, xo);
                }
            }
        }
    }
    Ok(out)
}

/// Rotates every kernel plane by 180 degrees.
pub fn flip_kernel<T: Copy>(w: &Tensor<T>) -> Tensor<T> {
    let d = w.dims();
    let (kh, kw) = (d[2], d[3]);
    Tensor::from_fn(d.to_vec(), |i| {
        let kx = i % kw;
        let ky = (i / kw) % kh;
        let base = i - ky * kw - kx;
        w.data()[base + (kh - 1 - ky) * kw + (kw - 1 - kx)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_i8(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor<i8> {
        Tensor::from_fn(dims, |_| rng.gen())
    }

    #[test]
    fn ones_conv() {
        let x = Tensor::filled(vec![1, 1, 3, 3], 1i8);
        let w = Tensor::filled(vec![1, 1, 2, 2], 1i8);
        let y = conv2d_ref(&x, &w, 1, 0).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4));
    }

    #[test]
    fn identity_kernel_widens() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_i8(&mut rng, vec![2, 3, 4, 5]);
        let w = Tensor::from_fn(vec![3, 3, 1, 1], |i| (i / 3 == i % 3) as i8);
        let y = conv2d_ref(&x, &w, 1, 0).unwrap();
        assert_eq!(y.data(), x.map(|v| v as i32).data());
    }

    #[test]
    fn fig4_layer_extent_and_ops() {
        assert_eq!(conv_out_extent("h", 14, 3, 1, 0).unwrap(), 12);
        let (oc, oh, ow, ic, kh, kw) = (256u64, 12u64, 12u64, 256u64, 3u64, 3u64);
        assert_eq!(2 * oc * oh * ow * ic * kh * kw, 169_869_312);
    }

    #[test]
    fn non_integral_extent_rejected() {
        let x = Tensor::filled(vec![1, 1, 4, 4], 1i8);
        let w = Tensor::filled(vec![1, 1, 3, 3], 1i8);
        assert!(matches!(
            conv2d_ref(&x, &w, 2, 0),
            Err(RefError::NonIntegralOutput { .. })
        ));
        let w = Tensor::filled(vec![1, 2, 3, 3], 1i8);
        assert!(matches!(conv2d_ref(&x, &w, 1, 0), Err(RefError::Shape(_))));
    }

    #[test]
    fn depthwise_on_ones_is_window_sum() {
        let x = Tensor::filled(vec![1, 4, 5, 5], 1i8);
        let w = Tensor::filled(vec![4, 1, 3, 3], 1i8);
        let y = grouped_conv2d_ref(&x, &w, 1, 1, 4).unwrap();
        assert_eq!(y.dims(), &[1, 4, 5, 5]);
        // corners see 4 pixels, edges 6, interior 9
        assert_eq!(y.at4(0, 2, 0, 0), 4);
        assert_eq!(y.at4(0, 2, 0, 2), 6);
        assert_eq!(y.at4(0, 2, 2, 2), 9);
    }

    #[test]
    fn groups_two_is_block_diagonal_full_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_i8(&mut rng, vec![1, 4, 5, 5]);
        let wg = rand_i8(&mut rng, vec![6, 2, 3, 3]);
        // Expand to a full [6, 4, 3, 3] weight with off-diagonal blocks zeroed.
        let full = Tensor::from_fn(vec![6, 4, 3, 3], |i| {
            let k = i % 9;
            let ic = (i / 9) % 4;
            let oc = i / 36;
            if ic / 2 == oc / 3 {
                wg.data()[(oc * 2 + ic % 2) * 9 + k]
            } else {
                0
            }
        });
        assert_eq!(
            grouped_conv2d_ref(&x, &wg, 1, 1, 2).unwrap(),
            conv2d_ref(&x, &full, 1, 1).unwrap()
        );
        assert!(matches!(
            grouped_conv2d_ref(&x, &wg, 1, 1, 3),
            Err(RefError::Groups { .. })
        ));
    }

    #[test]
    fn transpose_non_overlapping_scatter() {
        let x = Tensor::filled(vec![1, 1, 2, 2], 1i8);
        let w = Tensor::filled(vec![1, 1, 2, 2], 1i8);
        let y = conv2d_transpose_ref(&x, &w, 2, 0).unwrap();
        assert_eq!(y.dims(), &[1, 1, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 1));
    }

    #[test]
    fn transpose_single_pixel_copies_kernel() {
        let x = Tensor::filled(vec![1, 1, 1, 1], 1i8);
        let w = Tensor::from_fn(vec![2, 1, 3, 3], |i| i as i8 - 5);
        let y = conv2d_transpose_ref(&x, &w, 2, 0).unwrap();
        assert_eq!(y.data(), w.map(|v| v as i32).data());
    }

    #[test]
    fn dense_cases() {
        let x = Tensor::new(vec![1, 1], vec![3i8]).unwrap();
        let w = Tensor::new(vec![1, 1], vec![4i8]).unwrap();
        assert_eq!(dense_ref(&x, &w).unwrap().data(), &[12]);
        let x = Tensor::from_fn(vec![2, 3], |i| i as i8 - 3);
        let eye = Tensor::from_fn(vec![3, 3], |i| (i / 3 == i % 3) as i8);
        assert_eq!(dense_ref(&x, &eye).unwrap().data(), x.map(|v| v as i32).data());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_i8(&mut rng, vec![4, 8]);
        let w = rand_i8(&mut rng, vec![5, 8]);
        let y = dense_ref(&x, &w).unwrap();
        for n in 0..4 {
            for m in 0..5 {
                let mut s = 0i32;
                for k in 0..8 {
                    s += x.data()[n * 8 + k] as i32 * w.data()[m * 8 + k] as i32;
                }
                assert_eq!(y.data()[n * 5 + m], s);
            }
        }
    }

    #[test]
    fn alu_and_pool() {
        let a = Tensor::new(vec![2], vec![-3, 5]).unwrap();
        assert_eq!(alu_ref(AluOp::Max, &a, Operand::Imm(0)).unwrap().data(), &[0, 5]);
        let a = Tensor::new(vec![2], vec![5, -3]).unwrap();
        assert_eq!(alu_ref(AluOp::Shr, &a, Operand::Imm(1)).unwrap().data(), &[2, -2]);
        assert_eq!(alu_ref(AluOp::Shr, &a, Operand::Imm(-2)).unwrap().data(), &[20, -12]);
        let b = Tensor::new(vec![2], vec![i32::MAX, 1]).unwrap();
        assert_eq!(
            alu_ref(AluOp::Add, &a, Operand::Tensor(&b)).unwrap().data(),
            &[i32::MIN + 4, -2]
        );
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1i32, 2, 3, 4]).unwrap();
        assert_eq!(maxpool2d_ref(&x, 2, 2).unwrap().data(), &[4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// A transposed convolution equals a plain stride-1 convolution of the
        /// zero-inserted input with the flipped kernel.
        #[test]
        fn transpose_matches_zero_insertion(
            seed in any::<u64>(),
            c in 1usize..3, o in 1usize..3,
            h in 1usize..5, w in 1usize..5,
            k in 1usize..5, stride in 1usize..4, pad_frac in 0usize..5,
        ) {
            let pad = pad_frac % k;
            prop_assume!((h - 1) * stride + k > 2 * pad && (w - 1) * stride + k > 2 * pad);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_i8(&mut rng, vec![1, c, h, w]);
            let wt = rand_i8(&mut rng, vec![o, c, k, k]);
            let direct = conv2d_transpose_ref(&x, &wt, stride, pad).unwrap();
            let z = zero_insert(&x, stride, k - 1 - pad).unwrap();
            let via_conv = conv2d_ref(&z, &flip_kernel(&wt), 1, 0).unwrap();
            prop_assert_eq!(direct, via_conv);
        }

        #[test]
        fn groups_one_is_conv(seed in any::<u64>(), s in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_i8(&mut rng, vec![1, 3, 5, 5]);
            let w = rand_i8(&mut rng, vec![2, 3, 3, 3]);
            prop_assert_eq!(
                grouped_conv2d_ref(&x, &w, s, 1, 1).unwrap(),
                conv2d_ref(&x, &w, s, 1).unwrap()
            );
        }
    }

    /// Shared with the simulator's ALU tests.
    #[test]
    fn alu_conformance_vectors() {
        let vectors: Vec<serde_json::Value> =
            serde_json::from_str(include_str!("../../tests/data/alu_vectors.json")).unwrap();
        for v in vectors {
            let op = AluOp::ALL.into_iter().find(|o| o.name() == v["op"]).unwrap();
            let a = Tensor::new(vec![1], vec![v["a"].as_i64().unwrap() as i32]).unwrap();
            let b = v["b"].as_i64().unwrap() as i32;
            let want = v["expected"].as_i64().unwrap() as i32;
            assert_eq!(alu_ref(op, &a, Operand::Imm(b)).unwrap().data(), &[want]);
            let bt = Tensor::new(vec![1], vec![b]).unwrap();
            assert_eq!(alu_ref(op, &a, Operand::Tensor(&bt)).unwrap().data(), &[want]);
        }
    }
}
