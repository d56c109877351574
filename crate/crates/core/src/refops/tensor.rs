use std::io::{self, Read, Write};

use num_traits::{FromBytes, PrimInt, ToBytes};
use thiserror::Error;

pub const TENSOR_MAGIC: &[u8; 4] = b"VTAT";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {dims:?} needs {expected} elements, got {got}")]
    Size {
        dims: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor container version {0}")]
    BadVersion(u32),
    #[error("container holds dtype code {found}, expected {expected}")]
    DType { found: u8, expected: u8 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Integer element types that can be stored in a tensor container.
pub trait Element: PrimInt + ToBytes + FromBytes + Default + std::fmt::Debug + Send + Sync + 'static
where
    for<'a> <Self as FromBytes>::Bytes: TryFrom<&'a [u8]>,
{
    const DTYPE: u8;
    const NAME: &'static str;
}

impl Element for i8 {
    const DTYPE: u8 = 0;
    const NAME: &'static str = "i8";
}

impl Element for i32 {
    const DTYPE: u8 = 1;
    const NAME: &'static str = "i32";
}

impl Element for u8 {
    const DTYPE: u8 = 2;
    const NAME: &'static str = "u8";
}

/// Dense row-major tensor. Features are N,C,H,W and weights O,I,KH,KW.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(TensorError::Size {
                dims,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn filled(dims: Vec<usize>, value: T) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![value; n],
        }
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            data: (0..n).map(&mut f).collect(),
            dims,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data, new shape of equal element count.
    pub fn reshape(self, dims: Vec<usize>) -> Result<Self, TensorError> {
        Tensor::new(dims, self.data)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Offset of a 4-d index in a rank-4 tensor.
    #[inline]
    pub fn offset4(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.dims[1] + b) * self.dims[2] + c) * self.dims[3] + d
    }

    #[inline]
    pub fn at4(&self, a: usize, b: usize, c: usize, d: usize) -> T {
        self.data[self.offset4(a, b, c, d)]
    }
}

impl<T: Element> Tensor<T>
where
    for<'a> <T as FromBytes>::Bytes: TryFrom<&'a [u8]>,
{
    /// Writes the `VTAT` container: magic, u32 version, u8 dtype, u8 rank,
    /// u32 dims, then little-endian elements.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        let mut buf = Vec::with_capacity(10 + 4 * self.dims.len() + self.data.len() * size_of::<T>());
        buf.extend_from_slice(TENSOR_MAGIC);
        buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        buf.push(T::DTYPE);
        buf.push(self.dims.len() as u8);
        for &d in &self.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in &self.data {
            buf.extend_from_slice(x.to_le_bytes().as_ref());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TensorError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(TensorError::BadMagic(magic));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != TENSOR_VERSION {
            return Err(TensorError::BadVersion(version));
        }
        let mut hdr = [0u8; 2];
        r.read_exact(&mut hdr)?;
        if hdr[0] != T::DTYPE {
            return Err(TensorError::DType {
                found: hdr[0],
                expected: T::DTYPE,
            });
        }
        let mut dims = Vec::with_capacity(hdr[1] as usize);
        for _ in 0..hdr[1] {
            r.read_exact(&mut b4)?;
            dims.push(u32::from_le_bytes(b4) as usize);
        }
        let n: usize = dims.iter().product();
        let width = size_of::<T>();
        let mut raw = vec![0u8; n * width];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(width)
            .map(|c| {
                let bytes = <T as FromBytes>::Bytes::try_from(c)
                    .unwrap_or_else(|_| unreachable!("chunk has element width"));
                T::from_le_bytes(&bytes)
            })
            .collect();
        Tensor::new(dims, data)
    }
}

/// Peeks the dtype code of a serialized tensor container.
pub fn container_dtype(bytes: &[u8]) -> Result<u8, TensorError> {
    if bytes.len() < 10 {
        return Err(TensorError::Io(io::ErrorKind::UnexpectedEof.into()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != TENSOR_MAGIC {
        return Err(TensorError::BadMagic(magic));
    }
    Ok(bytes[8])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn size_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0i8; 5]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0i8; 6]).unwrap().len(), 6);
    }

    #[test]
    fn container_layout() {
        let t = Tensor::new(vec![2], vec![1i32, -2]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"VTAT");
        assert_eq!(buf[8], 1);
        assert_eq!(buf[9], 1);
        assert_eq!(&buf[10..14], &2u32.to_le_bytes());
        assert_eq!(&buf[14..18], &1i32.to_le_bytes());
        assert_eq!(&buf[18..22], &(-2i32).to_le_bytes());
        assert!(matches!(
            Tensor::<i8>::read_from(&buf[..]),
            Err(TensorError::DType { found: 1, expected: 0 })
        ));
    }

    proptest! {
        #[test]
        fn container_roundtrip(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<i64>()) {
            let t = Tensor::<i32>::from_fn(dims, |i| (i as i64 * 7919 + seed) as i32);
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            prop_assert_eq!(Tensor::<i32>::read_from(&buf[..]).unwrap(), t);
        }
    }
}
