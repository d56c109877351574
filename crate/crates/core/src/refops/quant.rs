use num_traits::Float;

use super::Tensor;
use crate::isa::AluOp;

/// Symmetric quantization parameters (zero point fixed at 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams<F> {
    pub scale: F,
    pub qmin: i32,
    pub qmax: i32,
}

impl<F: Float> QuantParams<F> {
    /// Signed 8-bit range with the given scale.
    pub fn int8(scale: F) -> Self {
        assert!(scale > F::zero(), "scale must be positive");
        QuantParams {
            scale,
            qmin: i8::MIN as i32,
            qmax: i8::MAX as i32,
        }
    }
}

/// `clamp(round_half_away_from_zero(x / scale), qmin, qmax)`.
pub fn quantize<F: Float>(x: &Tensor<F>, q: &QuantParams<F>) -> Tensor<i8> {
    debug_assert!(q.qmin < q.qmax);
    let lo = F::from(q.qmin).unwrap();
    let hi = F::from(q.qmax).unwrap();
    x.map(|v| {
        let r = (v / q.scale).round();
        let r = if r.is_nan() { F::zero() } else { r.max(lo).min(hi) };
        r.to_i32().unwrap() as i8
    })
}

pub fn dequantize<F: Float>(x: &Tensor<i8>, q: &QuantParams<F>) -> Tensor<F> {
    x.map(|v| F::from(v).unwrap() * q.scale)
}

/// Clamps to the signed range of `bits`.
pub fn saturate(v: i32, bits: u32) -> i32 {
    let hi = (1i32 << (bits - 1)) - 1;
    v.clamp(-hi - 1, hi)
}

/// `clamp(acc >> shift, -128, 127)` with an arithmetic shift.
pub fn requantize(acc: &Tensor<i32>, shift: i32) -> Tensor<i8> {
    acc.map(|v| saturate(AluOp::Shr.apply(v, shift), 8) as i8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rounding_and_clamping() {
        let q = QuantParams::int8(0.5f64);
        let x = Tensor::new(vec![4], vec![3.3, -3.3, 0.25, -0.25]).unwrap();
        assert_eq!(quantize(&x, &q).data(), &[7, -7, 1, -1]);
        let q = QuantParams::int8(1.0f32);
        let x = Tensor::new(vec![2], vec![1000.0, -1000.0]).unwrap();
        assert_eq!(quantize(&x, &q).data(), &[127, -128]);
    }

    #[test]
    fn requantize_shifts_then_saturates() {
        let a = Tensor::new(vec![4], vec![1024, -1024, 7, -7]).unwrap();
        assert_eq!(requantize(&a, 2).data(), &[127, -128, 1, -2]);
    }

    proptest! {
        #[test]
        fn dequantize_error_within_half_step(v in -60.0f64..60.0, scale in 0.5f64..2.0) {
            let q = QuantParams::int8(scale);
            let x = Tensor::new(vec![1], vec![v]).unwrap();
            let back = dequantize(&quantize(&x, &q), &q).data()[0];
            prop_assert!((back - v).abs() <= scale / 2.0 + 1e-12);
        }

        #[test]
        fn generic_over_precision(v in -100.0f32..100.0) {
            let a = quantize(&Tensor::new(vec![1], vec![v]).unwrap(), &QuantParams::int8(1.0f32));
            let b = quantize(&Tensor::new(vec![1], vec![v as f64]).unwrap(), &QuantParams::int8(1.0f64));
            prop_assert_eq!(a, b);
        }
    }
}
