//! Dense rank-4 tensors in (batch, channel, row, col) row-major layout,
//! plus the small per-channel vector types the attention blocks work with.
//!
//! Everything is parameterized over the scalar type: f64 for the
//! verification suites, f32 for training and latency runs, one code path.

use std::io::{Read, Write};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"CSRT";
pub const TENSOR_VERSION: u16 = 1;

/// Scalar element type: f32 or f64.
pub trait Scalar:
    Copy
    + PartialOrd
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + num_traits::Float
    + 'static
{
    const DTYPE: Dtype;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le<W: Write>(self, w: &mut ByteWriter<W>) -> Result<()>;
    fn read_le<R: Read>(r: &mut ByteReader<R>) -> Result<Self>;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le<W: Write>(self, w: &mut ByteWriter<W>) -> Result<()> {
        w.bytes(&self.to_le_bytes())
    }
    fn read_le<R: Read>(r: &mut ByteReader<R>) -> Result<Self> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le<W: Write>(self, w: &mut ByteWriter<W>) -> Result<()> {
        w.bytes(&self.to_le_bytes())
    }
    fn read_le<R: Read>(r: &mut ByteReader<R>) -> Result<Self> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Dtype> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// (batch, channels, rows, cols)
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
        Shape4 { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 array, row-major in (n, c, h, w) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Tensor4<T> {
        Tensor4 {
            shape: Shape4::new(n, c, h, w),
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn full(n: usize, c: usize, h: usize, w: usize, v: T) -> Tensor4<T> {
        Tensor4 {
            shape: Shape4::new(n, c, h, w),
            data: vec![v; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Tensor4<T>> {
        let shape = Shape4::new(n, c, h, w);
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::geometry(
                "tensor",
                format!("all extents must be >= 1, got {shape}"),
            ));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} elements for {shape}", shape.len()),
                data.len(),
            ));
        }
        let t = Tensor4 { shape, data };
        t.debug_check_finite("from_vec");
        Ok(t)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape.n
    }
    pub fn c(&self) -> usize {
        self.shape.c
    }
    pub fn h(&self) -> usize {
        self.shape.h
    }
    pub fn w(&self) -> usize {
        self.shape.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut T {
        let s = self.shape;
        &mut self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    /// The contiguous h*w plane of one (batch, channel) pair.
    #[inline(always)]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let s = self.shape;
        let hw = s.h * s.w;
        let off = (n * s.c + c) * hw;
        &self.data[off..off + hw]
    }

    #[inline(always)]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let s = self.shape;
        let hw = s.h * s.w;
        let off = (n * s.c + c) * hw;
        &mut self.data[off..off + hw]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor4<T> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Checked-mode finiteness assertion: active in debug builds only.
    #[inline]
    pub fn debug_check_finite(&self, op: &str) {
        if cfg!(debug_assertions) {
            debug_assert!(
                self.data.iter().all(|v| v.is_finite()),
                "non-finite value in {op}"
            );
        }
    }

    /// Explicit finiteness check for the contracts that require one.
    pub fn check_finite(&self, op: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    op: op.to_string(),
                    what: format!("element {i} of {} is {v}", self.shape),
                });
            }
        }
        Ok(())
    }

    pub fn to_f64(&self) -> Tensor4<f64> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| Scalar::to_f64(v)).collect(),
        }
    }

    pub fn from_f64_tensor(t: &Tensor4<f64>) -> Tensor4<T> {
        Tensor4 {
            shape: t.shape,
            data: t.data.iter().map(|&v| T::from_f64(v)).collect(),
        }
    }

    /// CSRT record: magic, version u16, dtype tag u8, four u32 extents,
    /// then the raw little-endian payload.
    pub fn write_to<W: Write>(&self, w: &mut ByteWriter<W>) -> Result<()> {
        w.bytes(TENSOR_MAGIC)?;
        w.u16(TENSOR_VERSION)?;
        w.u8(T::DTYPE.tag())?;
        let s = self.shape;
        for extent in [s.n, s.c, s.h, s.w] {
            w.u32(u32::try_from(extent).map_err(|_| {
                Error::geometry("tensor write", format!("extent {extent} exceeds u32"))
            })?)?;
        }
        let mut bytes = Vec::with_capacity(self.data.len() * T::DTYPE.size());
        {
            let mut bw = ByteWriter::new(&mut bytes);
            for &v in &self.data {
                v.write_le(&mut bw)?;
            }
        }
        w.bytes(&bytes)
    }

    /// Reads one CSRT record. A record stored at the other precision is
    /// converted; same-precision round-trips are bitwise.
    pub fn read_from<R: Read>(r: &mut ByteReader<R>) -> Result<Tensor4<T>> {
        r.expect_magic(TENSOR_MAGIC)?;
        let version = r.u16()?;
        if version != TENSOR_VERSION {
            return Err(r.error(format!(
                "unsupported version {version}, expected {TENSOR_VERSION}"
            )));
        }
        let tag = r.u8()?;
        let dtype = Dtype::from_tag(tag).ok_or_else(|| r.error(format!("bad dtype tag {tag}")))?;
        let mut extents = [0usize; 4];
        for e in extents.iter_mut() {
            let v = r.u32()?;
            if v == 0 {
                return Err(r.error("zero extent"));
            }
            *e = v as usize;
        }
        let count = extents
            .iter()
            .try_fold(1u64, |acc, &e| acc.checked_mul(e as u64))
            .filter(|&n| n <= usize::MAX as u64)
            .ok_or_else(|| r.error("element count overflow"))?;
        let payload = r.bytes(count * dtype.size() as u64)?;
        let mut pr = ByteReader::new(payload.as_slice(), "tensor payload");
        let mut data = Vec::with_capacity(count as usize);
        match dtype {
            Dtype::F32 => {
                for _ in 0..count {
                    data.push(T::from_f64(f32::read_le(&mut pr)?.to_f64()));
                }
            }
            Dtype::F64 => {
                for _ in 0..count {
                    data.push(T::from_f64(f64::read_le(&mut pr)?));
                }
            }
        }
        Tensor4::from_vec_unchecked_finite(extents[0], extents[1], extents[2], extents[3], data)
    }

    /// Like from_vec but without the debug finiteness assertion; stored
    /// checkpoints are allowed to carry whatever was saved.
    fn from_vec_unchecked_finite(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        data: Vec<T>,
    ) -> Result<Tensor4<T>> {
        let shape = Shape4::new(n, c, h, w);
        if data.len() != shape.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} elements for {shape}", shape.len()),
                data.len(),
            ));
        }
        Ok(Tensor4 { shape, data })
    }
}

/// A length-c vector of per-channel values (bias, gain, descriptor).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVec<T> {
    data: Vec<T>,
}

impl<T: Scalar> ChannelVec<T> {
    pub fn zeros(c: usize) -> ChannelVec<T> {
        ChannelVec {
            data: vec![T::zero(); c],
        }
    }

    pub fn full(c: usize, v: T) -> ChannelVec<T> {
        ChannelVec { data: vec![v; c] }
    }

    pub fn from_vec(data: Vec<T>) -> ChannelVec<T> {
        ChannelVec { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

/// A batch of n channel vectors, row-major (n, c). This is what global
/// average pooling produces and what the attention FC stack consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBatch<T> {
    pub n: usize,
    pub c: usize,
    data: Vec<T>,
}

impl<T: Scalar> ChannelBatch<T> {
    pub fn zeros(n: usize, c: usize) -> ChannelBatch<T> {
        ChannelBatch {
            n,
            c,
            data: vec![T::zero(); n * c],
        }
    }

    pub fn from_vec(n: usize, c: usize, data: Vec<T>) -> Result<ChannelBatch<T>> {
        if data.len() != n * c {
            return Err(Error::shape(
                "channel batch",
                format!("{} elements for ({n},{c})", n * c),
                data.len(),
            ));
        }
        Ok(ChannelBatch { n, c, data })
    }

    #[inline(always)]
    pub fn row(&self, n: usize) -> &[T] {
        &self.data[n * self.c..(n + 1) * self.c]
    }

    #[inline(always)]
    pub fn row_mut(&mut self, n: usize) -> &mut [T] {
        &mut self.data[n * self.c..(n + 1) * self.c]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent() {
        let r = Tensor4::<f64>::from_vec(1, 0, 2, 2, vec![]);
        assert!(r.is_err());
    }

    #[test]
    fn rejects_length_mismatch() {
        let r = Tensor4::<f64>::from_vec(1, 1, 2, 2, vec![1.0; 3]);
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor4::<f64>::from_vec(1, 2, 2, 3, (0..12).map(|i| i as f64).collect()).unwrap();
        assert_eq!(t.at(0, 0, 0, 0), 0.0);
        assert_eq!(t.at(0, 0, 1, 2), 5.0);
        assert_eq!(t.at(0, 1, 0, 0), 6.0);
        assert_eq!(t.plane(0, 1), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn serialization_round_trips_bitwise() {
        let t =
            Tensor4::<f64>::from_vec(2, 3, 4, 5, (0..120).map(|i| (i as f64).sin()).collect())
                .unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut ByteWriter::new(&mut buf)).unwrap();
        let back =
            Tensor4::<f64>::read_from(&mut ByteReader::new(buf.as_slice(), "tensor")).unwrap();
        assert_eq!(t, back);

        let t32 = Tensor4::<f32>::from_vec(1, 1, 2, 2, vec![1.5, -2.25, 0.0, 3.75]).unwrap();
        let mut buf = Vec::new();
        t32.write_to(&mut ByteWriter::new(&mut buf)).unwrap();
        let back =
            Tensor4::<f32>::read_from(&mut ByteReader::new(buf.as_slice(), "tensor")).unwrap();
        assert_eq!(t32, back);
    }

    #[test]
    fn truncated_record_is_an_error() {
        let t = Tensor4::<f32>::zeros(1, 1, 2, 2);
        let mut buf = Vec::new();
        t.write_to(&mut ByteWriter::new(&mut buf)).unwrap();
        buf.truncate(buf.len() - 3);
        let r = Tensor4::<f32>::read_from(&mut ByteReader::new(buf.as_slice(), "tensor"));
        assert!(matches!(r, Err(Error::Format { .. })), "{r:?}");
    }

    #[test]
    fn bad_magic_is_an_error() {
        let buf = b"NOPE\x01\x00\x00".to_vec();
        let r = Tensor4::<f32>::read_from(&mut ByteReader::new(buf.as_slice(), "tensor"));
        assert!(matches!(r, Err(Error::Format { .. })));
    }
}
