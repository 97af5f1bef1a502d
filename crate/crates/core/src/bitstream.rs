//! Frame-level container. A unit is an 11-byte header followed by the
//! frame type's chunks in a fixed order; a `.nvc1` file is units back to back.
//!
//! ```text
//! "NVC1" | version u8 | frame_type u8 | width u16 | height u16 | lambda_index u8
//! chunk: id u8 | length u32 | symbol_count u32 | coded bytes (length - 4)
//! ```
//! Integers are little-endian. Width and height are the unpadded frame size.

use std::path::Path;

use crate::coder::CodedChunk;
use crate::error::{NvcError, Result};

pub const MAGIC: [u8; 4] = *b"NVC1";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 11;
pub const CHUNK_HEADER_BYTES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameType {
    Intra = 0,
    Inter = 1,
}

impl FrameType {
    pub fn chunk_order(self) -> &'static [ChunkId] {
        match self {
            FrameType::Intra => &[ChunkId::IntraHyper, ChunkId::IntraLatent],
            FrameType::Inter => &[ChunkId::MotionHyper, ChunkId::MotionLatent, ChunkId::ContextHyper, ChunkId::ContextLatent],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkId {
    MotionHyper = 1,
    MotionLatent = 2,
    ContextHyper = 3,
    ContextLatent = 4,
    IntraHyper = 5,
    IntraLatent = 6,
}

impl TryFrom<u8> for ChunkId {
    type Error = NvcError;

    fn try_from(v: u8) -> Result<Self> {
        Ok(match v {
            1 => ChunkId::MotionHyper,
            2 => ChunkId::MotionLatent,
            3 => ChunkId::ContextHyper,
            4 => ChunkId::ContextLatent,
            5 => ChunkId::IntraHyper,
            6 => ChunkId::IntraLatent,
            _ => return Err(NvcError::UnknownChunk(v)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstreamUnit {
    pub frame_type: FrameType,
    pub width: u16,
    pub height: u16,
    pub lambda_index: u8,
    pub chunks: Vec<(ChunkId, CodedChunk)>,
}

impl BitstreamUnit {
    pub fn new(frame_type: FrameType, width: usize, height: usize, lambda_index: usize, chunks: Vec<CodedChunk>) -> Result<Self> {
        let order = frame_type.chunk_order();
        if chunks.len() != order.len() {
            return Err(NvcError::MalformedStream(format!(
                "{frame_type:?} unit needs {} chunks, got {}",
                order.len(),
                chunks.len()
            )));
        }
        let dim = |v: usize, what: &str| {
            u16::try_from(v).map_err(|_| crate::error::invalid(what, format!("{v} does not fit in 16 bits")))
        };
        Ok(BitstreamUnit {
            frame_type,
            width: dim(width, "width")?,
            height: dim(height, "height")?,
            lambda_index: u8::try_from(lambda_index).map_err(|_| NvcError::InvalidIndex(format!("lambda index {lambda_index}")))?,
            chunks: order.iter().copied().zip(chunks).collect(),
        })
    }

    pub fn chunk(&self, id: ChunkId) -> Option<&CodedChunk> {
        self.chunks.iter().find(|(c, _)| *c == id).map(|(_, p)| p)
    }

    pub fn byte_len(&self) -> usize {
        HEADER_BYTES
            + self
                .chunks
                .iter()
                .map(|(_, p)| CHUNK_HEADER_BYTES + 4 + p.bytes.len())
                .sum::<usize>()
    }

    /// Bits per pixel of the whole unit, header included.
    pub fn bpp(&self) -> f64 {
        8.0 * self.byte_len() as f64 / (self.width as f64 * self.height as f64)
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.frame_type as u8);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.lambda_index);
        for (id, p) in &self.chunks {
            out.push(*id as u8);
            out.extend_from_slice(&((p.bytes.len() + 4) as u32).to_le_bytes());
            out.extend_from_slice(&p.symbol_count.to_le_bytes());
            out.extend_from_slice(&p.bytes);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        self.write_to(&mut out);
        out
    }

    /// Parses one unit from the front of `bytes`, returning it and the number
    /// of bytes consumed.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(NvcError::BadMagic(magic));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(NvcError::VersionMismatch { expected: VERSION, found: version });
        }
        let frame_type = match r.u8()? {
            0 => FrameType::Intra,
            1 => FrameType::Inter,
            t => return Err(NvcError::MalformedStream(format!("frame type {t}"))),
        };
        let width = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        let height = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if width == 0 || height == 0 {
            return Err(NvcError::MalformedStream("zero frame dimension".into()));
        }
        let lambda_index = r.u8()?;
        let mut chunks = Vec::new();
        for &expected in frame_type.chunk_order() {
            let id = ChunkId::try_from(r.u8()?)?;
            if id != expected {
                return Err(NvcError::MalformedStream(format!("expected chunk {expected:?}, found {id:?}")));
            }
            let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            if len < 4 {
                return Err(NvcError::MalformedStream(format!("chunk length {len}")));
            }
            let symbol_count = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
            let payload = r.take(len - 4)?.to_vec();
            chunks.push((id, CodedChunk { bytes: payload, symbol_count }));
        }
        Ok((BitstreamUnit { frame_type, width, height, lambda_index, chunks }, r.pos))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NvcError::MalformedStream(format!("unit truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn serialize_stream(units: &[BitstreamUnit]) -> Vec<u8> {
    let mut out = Vec::new();
    for u in units {
        u.write_to(&mut out);
    }
    out
}

pub fn parse_stream(mut bytes: &[u8]) -> Result<Vec<BitstreamUnit>> {
    let mut units = Vec::new();
    while !bytes.is_empty() {
        let (u, n) = BitstreamUnit::parse(bytes)?;
        units.push(u);
        bytes = &bytes[n..];
    }
    Ok(units)
}

pub fn write_nvc1(path: &Path, units: &[BitstreamUnit]) -> Result<()> {
    std::fs::write(path, serialize_stream(units))?;
    Ok(())
}

pub fn read_nvc1(path: &Path) -> Result<Vec<BitstreamUnit>> {
    parse_stream(&std::fs::read(path)?)
}

/// Frame types of a stream with the given intra period: intra at every
/// multiple of the period, inter elsewhere.
pub fn gop_layout(frames: usize, intra_period: usize) -> Vec<FrameType> {
    let period = intra_period.max(1);
    (0..frames)
        .map(|i| if i % period == 0 { FrameType::Intra } else { FrameType::Inter })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(n: usize, seed: u8) -> CodedChunk {
        CodedChunk { bytes: (0..n).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect(), symbol_count: n as u32 * 3 }
    }

    fn inter() -> BitstreamUnit {
        BitstreamUnit::new(FrameType::Inter, 100, 64, 2, vec![chunk(7, 1), chunk(30, 2), chunk(5, 3), chunk(90, 4)]).unwrap()
    }

    #[test]
    fn roundtrip_and_sizes() {
        let u = inter();
        let bytes = u.to_bytes();
        assert_eq!(bytes.len(), u.byte_len());
        assert_eq!(bytes.len(), 11 + 4 * 9 + 7 + 30 + 5 + 90);
        let (p, n) = BitstreamUnit::parse(&bytes).unwrap();
        assert_eq!((p, n), (u.clone(), bytes.len()));
        assert!((u.bpp() - 8.0 * bytes.len() as f64 / 6400.0).abs() < 1e-15);
    }

    #[test]
    fn chunk_layout_per_frame_type() {
        let i = BitstreamUnit::new(FrameType::Intra, 64, 64, 0, vec![chunk(3, 0), chunk(4, 0)]).unwrap();
        assert_eq!(i.chunks.len(), 2);
        let ids: Vec<ChunkId> = inter().chunks.iter().map(|c| c.0).collect();
        assert_eq!(ids, vec![ChunkId::MotionHyper, ChunkId::MotionLatent, ChunkId::ContextHyper, ChunkId::ContextLatent]);
        assert!(BitstreamUnit::new(FrameType::Intra, 64, 64, 0, vec![chunk(3, 0)]).is_err());
    }

    #[test]
    fn corrupt_headers() {
        let mut bytes = inter().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(BitstreamUnit::parse(&bytes), Err(NvcError::BadMagic(_))));
        let mut bytes = inter().to_bytes();
        bytes[4] = 9;
        assert!(matches!(BitstreamUnit::parse(&bytes), Err(NvcError::VersionMismatch { expected: 1, found: 9 })));
        let mut bytes = inter().to_bytes();
        bytes[11] = 42;
        assert!(matches!(BitstreamUnit::parse(&bytes), Err(NvcError::UnknownChunk(42))));
        let bytes = inter().to_bytes();
        assert!(matches!(BitstreamUnit::parse(&bytes[..bytes.len() - 1]), Err(NvcError::MalformedStream(_))));
    }

    #[test]
    fn stream_of_units() {
        let units = vec![
            BitstreamUnit::new(FrameType::Intra, 64, 64, 1, vec![chunk(3, 0), chunk(40, 0)]).unwrap(),
            inter(),
            inter(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.nvc1");
        write_nvc1(&path, &units).unwrap();
        assert_eq!(read_nvc1(&path).unwrap(), units);
    }

    #[test]
    fn intra_positions_in_96_frames() {
        let layout = gop_layout(96, 32);
        let intra: Vec<usize> = layout.iter().enumerate().filter(|(_, t)| **t == FrameType::Intra).map(|(i, _)| i).collect();
        assert_eq!(intra, vec![0, 32, 64]);
    }
}
