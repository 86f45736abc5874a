//! Low-level wire primitives: errors, cursor, tensor and string codecs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtoError {
    /// More bytes are needed before the frame can be decoded; callers may
    /// retry once the stream has grown.
    #[error("incomplete frame: have {have} bytes, need at least {need}")]
    Incomplete { have: usize, need: usize },
    /// Malformed bytes; the session must be closed (no resynchronization).
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Invalid message handed to the encoder.
    #[error("encoding error: {0}")]
    Encode(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ProtoError {
    pub fn is_incomplete(&self) -> bool {
        matches!(self, ProtoError::Incomplete { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    I32,
    U8,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::I32 => 1,
            Dtype::U8 => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self, ProtoError> {
        match c {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::I32),
            2 => Ok(Dtype::U8),
            _ => Err(ProtoError::Protocol(format!("unknown dtype code {c}"))),
        }
    }

    pub fn elem_size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WireData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl WireData {
    pub fn dtype(&self) -> Dtype {
        match self {
            WireData::F32(_) => Dtype::F32,
            WireData::I32(_) => Dtype::I32,
            WireData::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            WireData::F32(v) => v.len(),
            WireData::I32(v) => v.len(),
            WireData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense row-major tensor as it appears on the wire.
#[derive(Clone, Debug, PartialEq)]
pub struct WireTensor {
    pub dims: Vec<u32>,
    pub data: WireData,
}

impl WireTensor {
    pub fn new(dims: Vec<u32>, data: WireData) -> Result<Self, ProtoError> {
        let want = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        match want {
            Some(w) if w == data.len() as u64 => Ok(Self { dims, data }),
            Some(w) => Err(ProtoError::Encode(format!(
                "tensor data length {} does not match dims {:?} (product {})",
                data.len(),
                dims,
                w
            ))),
            None => Err(ProtoError::Encode(format!("dims {dims:?} overflow"))),
        }
    }

    pub fn f32(dims: Vec<u32>, data: Vec<f32>) -> Result<Self, ProtoError> {
        Self::new(dims, WireData::F32(data))
    }

    pub fn u8(dims: Vec<u32>, data: Vec<u8>) -> Result<Self, ProtoError> {
        Self::new(dims, WireData::U8(data))
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn as_f32(&self) -> Result<&[f32], ProtoError> {
        match &self.data {
            WireData::F32(v) => Ok(v),
            other => Err(ProtoError::Protocol(format!(
                "expected f32 tensor, got {:?}",
                other.dtype()
            ))),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8], ProtoError> {
        match &self.data {
            WireData::U8(v) => Ok(v),
            other => Err(ProtoError::Protocol(format!(
                "expected u8 tensor, got {:?}",
                other.dtype()
            ))),
        }
    }

    /// Encoded byte size: dtype + ndims + dims + data.
    pub fn wire_size(&self) -> usize {
        2 + 4 * self.dims.len() + self.data.len() * self.dtype().elem_size()
    }
}

/// Reader over a fully-buffered payload. Running short here is a protocol
/// error, not an incomplete frame: the frame header already promised the
/// bytes.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], ProtoError> {
        if self.remaining() < n {
            return Err(ProtoError::Protocol(format!(
                "payload truncated: wanted {n} more bytes, have {}",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, ProtoError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, ProtoError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64, ProtoError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub(crate) fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn encode_string(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub(crate) fn decode_string(c: &mut Cursor) -> Result<String, ProtoError> {
    let n = c.u32()? as usize;
    let bytes = c.take(n)?;
    String::from_utf8(bytes.to_vec())
        .map_err(|e| ProtoError::Protocol(format!("invalid UTF-8 in string: {e}")))
}

/// Append a `TensorWire` record to `buf`.
pub fn encode_tensor(buf: &mut Vec<u8>, t: &WireTensor) {
    buf.push(t.dtype().code());
    buf.push(t.dims.len() as u8);
    for &d in &t.dims {
        put_u32(buf, d);
    }
    match &t.data {
        WireData::F32(v) => {
            buf.reserve(v.len() * 4);
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        WireData::I32(v) => {
            buf.reserve(v.len() * 4);
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        WireData::U8(v) => buf.extend_from_slice(v),
    }
}

pub(crate) fn decode_tensor_at(c: &mut Cursor) -> Result<WireTensor, ProtoError> {
    let dtype = Dtype::from_code(c.u8()?)?;
    let ndims = c.u8()? as usize;
    let mut dims = Vec::with_capacity(ndims);
    let mut numel = 1u64;
    for _ in 0..ndims {
        let d = c.u32()?;
        numel = numel
            .checked_mul(d as u64)
            .ok_or_else(|| ProtoError::Protocol("tensor dims overflow".into()))?;
        dims.push(d);
    }
    let nbytes = numel
        .checked_mul(dtype.elem_size() as u64)
        .ok_or_else(|| ProtoError::Protocol("tensor byte size overflow".into()))?;
    if nbytes > c.remaining() as u64 {
        return Err(ProtoError::Protocol(format!(
            "tensor data length {nbytes} exceeds remaining payload {}",
            c.remaining()
        )));
    }
    let raw = c.take(nbytes as usize)?;
    let data = match dtype {
        Dtype::F32 => WireData::F32(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        ),
        Dtype::I32 => WireData::I32(
            raw.chunks_exact(4)
                .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        ),
        Dtype::U8 => WireData::U8(raw.to_vec()),
    };
    Ok(WireTensor { dims, data })
}

/// Decode one `TensorWire` from the front of `buf`, returning the tensor and
/// the number of bytes consumed.
pub fn decode_tensor(buf: &[u8]) -> Result<(WireTensor, usize), ProtoError> {
    let mut c = Cursor::new(buf);
    let t = decode_tensor_at(&mut c)?;
    Ok((t, c.pos))
}

pub(crate) fn encode_named_tensors(buf: &mut Vec<u8>, named: &[(String, WireTensor)]) {
    put_u32(buf, named.len() as u32);
    for (name, t) in named {
        encode_string(buf, name);
        encode_tensor(buf, t);
    }
}

pub(crate) fn decode_named_tensors(
    c: &mut Cursor,
) -> Result<Vec<(String, WireTensor)>, ProtoError> {
    let n = c.u32()? as usize;
    if n > 1024 {
        return Err(ProtoError::Protocol(format!(
            "named tensor set count {n} is implausibly large"
        )));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let name = decode_string(c)?;
        let t = decode_tensor_at(c)?;
        out.push((name, t));
    }
    Ok(out)
}
