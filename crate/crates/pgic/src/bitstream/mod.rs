//! The PGIC container: a self-describing header followed by stage-major,
//! fixed-width index payloads. Every stage is padded to a byte boundary, so
//! any stage-aligned prefix of the stream decodes on its own.
//!
//! The full byte layout is documented in FORMAT.md at the repo root.

mod packet;

pub use packet::{packetize, reassemble, Packet};

use std::fmt;

use crate::rvq::StageIndices;

pub type StreamResult<T> = Result<T, StreamError>;

pub const MAGIC: [u8; 4] = *b"PGIC";
pub const VERSION: u8 = 1;
/// Header byte length: magic, version, two u16 dims, N, L, f, stage count.
pub const HEADER_LEN: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub enum StreamError {
    /// Fewer bytes than the fixed header needs.
    TooShort { needed: usize, got: usize },
    BadMagic([u8; 4]),
    UnsupportedVersion(u8),
    /// Header fields violate their invariants.
    InvalidHeader(&'static str),
    /// The byte sequence ends before one complete stage.
    NoCompleteStage,
    /// An index does not fit in `l_bits` bits.
    IndexTooWide { index: u16, l_bits: u8 },
    /// Stage grids do not match the dims implied by the header.
    GridMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// serialize() needs exactly the stages 1..=stages_present.
    StagePrefixMismatch { expected: usize, got: usize },
    /// Packet sequence numbers must be contiguous from zero.
    MissingPacket { seq: u32 },
    /// Packet payload size must be at least one byte.
    BadPayloadSize,
}

impl fmt::Display for StreamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamError::TooShort { needed, got } => {
                write!(f, "stream too short: need {needed} bytes, got {got}")
            }
            StreamError::BadMagic(m) => write!(f, "bad magic {m:?}, expected \"PGIC\""),
            StreamError::UnsupportedVersion(v) => write!(f, "unsupported container version {v}"),
            StreamError::InvalidHeader(why) => write!(f, "invalid header: {why}"),
            StreamError::NoCompleteStage => {
                write!(f, "stream contains no complete stage payload")
            }
            StreamError::IndexTooWide { index, l_bits } => {
                write!(f, "index {index} does not fit in {l_bits} bits")
            }
            StreamError::GridMismatch { expected, got } => {
                write!(f, "grid dims {got:?} do not match header-implied {expected:?}")
            }
            StreamError::StagePrefixMismatch { expected, got } => {
                write!(f, "expected contiguous stages 1..={expected}, got {got}")
            }
            StreamError::MissingPacket { seq } => write!(f, "missing packet {seq}"),
            StreamError::BadPayloadSize => write!(f, "packet payload size must be >= 1"),
        }
    }
}

impl std::error::Error for StreamError {}

/// Self-describing envelope that makes stage-aligned prefixes decodable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub orig_width: u16,
    pub orig_height: u16,
    /// Total stages the encoding model supports (N).
    pub n_total: u8,
    /// Bits per index (L); codebooks hold 2^L codewords.
    pub l_bits: u8,
    /// Latent stride in pixels (f).
    pub downsample_f: u8,
    /// Stages actually contained in this stream.
    pub stages_present: u8,
}

impl BitstreamHeader {
    pub fn validate(&self) -> StreamResult<()> {
        if self.orig_width == 0 || self.orig_height == 0 {
            return Err(StreamError::InvalidHeader("image dims must be >= 1"));
        }
        if self.n_total == 0 {
            return Err(StreamError::InvalidHeader("stage count N must be >= 1"));
        }
        if !(1..=16).contains(&self.l_bits) {
            return Err(StreamError::InvalidHeader("l_bits must be in 1..=16"));
        }
        if self.downsample_f == 0 {
            return Err(StreamError::InvalidHeader("downsample factor must be >= 1"));
        }
        if self.stages_present == 0 || self.stages_present > self.n_total {
            return Err(StreamError::InvalidHeader(
                "stages_present must be in 1..=n_total",
            ));
        }
        Ok(())
    }

    /// Latent grid dims implied by the image dims and downsample factor:
    /// ceil(orig / f) per axis, matching the padding convention.
    pub fn grid_dims(&self) -> (usize, usize) {
        let f = self.downsample_f as usize;
        (
            (self.orig_width as usize).div_ceil(f),
            (self.orig_height as usize).div_ceil(f),
        )
    }

    /// Payload bytes for one stage: positions * l_bits, rounded up to bytes.
    pub fn stage_bytes(&self) -> usize {
        let (gw, gh) = self.grid_dims();
        (gw * gh * self.l_bits as usize).div_ceil(8)
    }

    /// Bits per pixel for the stages present: stages * L / f^2.
    pub fn bpp(&self) -> f64 {
        let f = self.downsample_f as f64;
        self.stages_present as f64 * self.l_bits as f64 / (f * f)
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.orig_width.to_le_bytes());
        out.extend_from_slice(&self.orig_height.to_le_bytes());
        out.push(self.n_total);
        out.push(self.l_bits);
        out.push(self.downsample_f);
        out.push(self.stages_present);
    }

    pub fn parse(bytes: &[u8]) -> StreamResult<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(StreamError::TooShort {
                needed: HEADER_LEN,
                got: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("fixed slice");
        if magic != MAGIC {
            return Err(StreamError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(StreamError::UnsupportedVersion(bytes[4]));
        }
        let header = BitstreamHeader {
            orig_width: u16::from_le_bytes([bytes[5], bytes[6]]),
            orig_height: u16::from_le_bytes([bytes[7], bytes[8]]),
            n_total: bytes[9],
            l_bits: bytes[10],
            downsample_f: bytes[11],
            stages_present: bytes[12],
        };
        header.validate()?;
        Ok(header)
    }
}

/// Bits per pixel implied by a header (module-level convenience).
pub fn bpp(header: &BitstreamHeader) -> f64 {
    header.bpp()
}

/// Serialize the header and the stage prefix 1..=stages_present.
///
/// Within a stage, indices go in row-major raster order, each packed as
/// exactly `l_bits` bits most-significant-bit first; every stage is padded
/// to a byte boundary.
pub fn serialize(header: &BitstreamHeader, indices: &[StageIndices]) -> StreamResult<Vec<u8>> {
    header.validate()?;
    if indices.len() != header.stages_present as usize {
        return Err(StreamError::StagePrefixMismatch {
            expected: header.stages_present as usize,
            got: indices.len(),
        });
    }
    let (gw, gh) = header.grid_dims();
    let mut out = Vec::with_capacity(HEADER_LEN + indices.len() * header.stage_bytes());
    header.write_to(&mut out);
    let limit: u32 = 1u32 << header.l_bits;
    for (i, stage) in indices.iter().enumerate() {
        if stage.stage != i + 1 {
            return Err(StreamError::StagePrefixMismatch {
                expected: i + 1,
                got: stage.stage,
            });
        }
        if stage.w != gw || stage.h != gh {
            return Err(StreamError::GridMismatch {
                expected: (gw, gh),
                got: (stage.w, stage.h),
            });
        }
        let mut acc: u32 = 0;
        let mut nbits: u32 = 0;
        for &idx in &stage.grid {
            if (idx as u32) >= limit {
                return Err(StreamError::IndexTooWide {
                    index: idx,
                    l_bits: header.l_bits,
                });
            }
            acc = (acc << header.l_bits) | idx as u32;
            nbits += header.l_bits as u32;
            while nbits >= 8 {
                nbits -= 8;
                out.push((acc >> nbits) as u8);
            }
        }
        if nbits > 0 {
            out.push((acc << (8 - nbits)) as u8);
        }
    }
    Ok(out)
}

/// A parsed stream: header plus every complete stage found in the bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedStream {
    /// Header with `stages_present` adjusted to what was actually recovered.
    pub header: BitstreamHeader,
    pub stages: Vec<StageIndices>,
    /// Bytes of a truncated trailing stage (not decoded).
    pub truncated_tail: usize,
}

/// Decode the header and all complete stages in `bytes`.
///
/// A truncated trailing stage is reported via `truncated_tail`, never
/// partially decoded.
pub fn deserialize(bytes: &[u8]) -> StreamResult<DecodedStream> {
    let mut header = BitstreamHeader::parse(bytes)?;
    let stage_bytes = header.stage_bytes();
    let payload = &bytes[HEADER_LEN..];
    let claimed = header.stages_present as usize;
    let complete = (payload.len() / stage_bytes).min(claimed);
    if complete == 0 {
        return Err(StreamError::NoCompleteStage);
    }
    let (gw, gh) = header.grid_dims();
    let positions = gw * gh;
    let mut stages = Vec::with_capacity(complete);
    for s in 0..complete {
        let chunk = &payload[s * stage_bytes..(s + 1) * stage_bytes];
        let mut grid = Vec::with_capacity(positions);
        let mut acc: u32 = 0;
        let mut nbits: u32 = 0;
        let mut byte_pos = 0usize;
        for _ in 0..positions {
            while nbits < header.l_bits as u32 {
                acc = (acc << 8) | chunk[byte_pos] as u32;
                byte_pos += 1;
                nbits += 8;
            }
            nbits -= header.l_bits as u32;
            let mask = (1u32 << header.l_bits) - 1;
            grid.push(((acc >> nbits) & mask) as u16);
        }
        stages.push(
            StageIndices::new(s + 1, gh, gw, grid)
                .expect("grid length matches positions by construction"),
        );
    }
    let consumed = complete * stage_bytes;
    let tail = payload.len().saturating_sub(consumed);
    // Tail bytes beyond the claimed stages are foreign; only count payload
    // that belongs to a stage this stream said it carries.
    let truncated_tail = if complete < claimed { tail } else { 0 };
    header.stages_present = complete as u8;
    Ok(DecodedStream {
        header,
        stages,
        truncated_tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn full_scale_header() -> BitstreamHeader {
        BitstreamHeader {
            orig_width: 512,
            orig_height: 768,
            n_total: 5,
            l_bits: 10,
            downsample_f: 16,
            stages_present: 5,
        }
    }

    fn random_indices(
        rng: &mut ChaCha20Rng,
        header: &BitstreamHeader,
    ) -> Vec<StageIndices> {
        let (gw, gh) = header.grid_dims();
        let limit = 1u32 << header.l_bits;
        (1..=header.stages_present as usize)
            .map(|s| {
                let grid = (0..gw * gh)
                    .map(|_| rng.random_range(0..limit) as u16)
                    .collect();
                StageIndices::new(s, gh, gw, grid).unwrap()
            })
            .collect()
    }

    #[test]
    fn full_scale_payload_matches_stated_rates() {
        // 512x768, N=5, L=10, f=16: 32x48 grid, 5 * 1536 * 10 bits payload.
        let header = full_scale_header();
        assert_eq!(header.grid_dims(), (32, 48));
        assert_eq!(header.stage_bytes(), 1920);
        let mut rng = ChaCha20Rng::seed_from_u64(51);
        let indices = random_indices(&mut rng, &header);
        let bytes = serialize(&header, &indices).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 9600);
        let payload_bits = 9600.0 * 8.0;
        let bpp_from_payload = payload_bits / (512.0 * 768.0);
        assert!((header.bpp() - bpp_from_payload).abs() < 1e-12);
        assert!((header.bpp() - 0.1953125).abs() < 1e-12);
    }

    #[test]
    fn one_by_one_grid_single_stage() {
        let header = BitstreamHeader {
            orig_width: 8,
            orig_height: 8,
            n_total: 1,
            l_bits: 8,
            downsample_f: 8,
            stages_present: 1,
        };
        let indices = vec![StageIndices::new(1, 1, 1, vec![0xAB]).unwrap()];
        let bytes = serialize(&header, &indices).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 1);
        assert_eq!(*bytes.last().unwrap(), 0xAB);
    }

    #[test]
    fn roundtrip_random_streams() {
        let mut rng = ChaCha20Rng::seed_from_u64(52);
        for _ in 0..50 {
            let l_bits = rng.random_range(1..=16) as u8;
            let f = [4u8, 8, 16][rng.random_range(0..3)];
            let n = rng.random_range(1..=6) as u8;
            let header = BitstreamHeader {
                orig_width: rng.random_range(1..=100),
                orig_height: rng.random_range(1..=100),
                n_total: n,
                l_bits,
                downsample_f: f,
                stages_present: rng.random_range(1..=n as u32) as u8,
            };
            let indices = random_indices(&mut rng, &header);
            let bytes = serialize(&header, &indices).unwrap();
            let decoded = deserialize(&bytes).unwrap();
            assert_eq!(decoded.header, header);
            assert_eq!(decoded.stages, indices);
            assert_eq!(decoded.truncated_tail, 0);
        }
    }

    #[test]
    fn truncation_at_stage_boundary_recovers_prefix() {
        let header = full_scale_header();
        let mut rng = ChaCha20Rng::seed_from_u64(53);
        let indices = random_indices(&mut rng, &header);
        let bytes = serialize(&header, &indices).unwrap();
        let cut = HEADER_LEN + 2 * header.stage_bytes();
        let decoded = deserialize(&bytes[..cut]).unwrap();
        assert_eq!(decoded.header.stages_present, 2);
        assert_eq!(decoded.stages.len(), 2);
        assert_eq!(decoded.stages[..], indices[..2]);
        assert_eq!(decoded.truncated_tail, 0);
    }

    #[test]
    fn truncation_mid_stage_reports_tail() {
        let header = full_scale_header();
        let mut rng = ChaCha20Rng::seed_from_u64(54);
        let indices = random_indices(&mut rng, &header);
        let bytes = serialize(&header, &indices).unwrap();
        let cut = HEADER_LEN + header.stage_bytes() + 7;
        let decoded = deserialize(&bytes[..cut]).unwrap();
        assert_eq!(decoded.stages.len(), 1);
        assert_eq!(decoded.truncated_tail, 7);
    }

    #[test]
    fn rejects_bad_magic_and_version_distinctly() {
        let header = full_scale_header();
        let mut rng = ChaCha20Rng::seed_from_u64(55);
        let indices = random_indices(&mut rng, &header);
        let mut bytes = serialize(&header, &indices).unwrap();
        bytes[0] = b'X';
        assert!(matches!(deserialize(&bytes), Err(StreamError::BadMagic(_))));
        bytes[0] = b'P';
        bytes[4] = 9;
        assert_eq!(deserialize(&bytes), Err(StreamError::UnsupportedVersion(9)));
    }

    #[test]
    fn incomplete_first_stage_is_an_error() {
        let header = full_scale_header();
        let mut rng = ChaCha20Rng::seed_from_u64(56);
        let indices = random_indices(&mut rng, &header);
        let bytes = serialize(&header, &indices).unwrap();
        let cut = HEADER_LEN + header.stage_bytes() - 1;
        assert_eq!(deserialize(&bytes[..cut]), Err(StreamError::NoCompleteStage));
    }

    #[test]
    fn serialize_rejects_oversized_index() {
        let header = BitstreamHeader {
            orig_width: 8,
            orig_height: 8,
            n_total: 1,
            l_bits: 4,
            downsample_f: 8,
            stages_present: 1,
        };
        let indices = vec![StageIndices::new(1, 1, 1, vec![16]).unwrap()];
        assert_eq!(
            serialize(&header, &indices).unwrap_err(),
            StreamError::IndexTooWide { index: 16, l_bits: 4 }
        );
    }

    #[test]
    fn bpp_matches_paper_scale_arithmetic() {
        let mut header = full_scale_header();
        let expected = [0.0390625, 0.078125, 0.1171875, 0.15625, 0.1953125];
        for (i, &e) in expected.iter().enumerate() {
            header.stages_present = (i + 1) as u8;
            assert!((header.bpp() - e).abs() < 1e-12);
        }
        let supp = BitstreamHeader {
            orig_width: 1024,
            orig_height: 1024,
            n_total: 16,
            l_bits: 10,
            downsample_f: 32,
            stages_present: 1,
        };
        assert!((supp.bpp() - 10.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn size_law_holds_for_random_configs() {
        let mut rng = ChaCha20Rng::seed_from_u64(57);
        for _ in 0..40 {
            let n = rng.random_range(1..=8) as u8;
            let header = BitstreamHeader {
                orig_width: rng.random_range(1..=257),
                orig_height: rng.random_range(1..=257),
                n_total: n,
                l_bits: rng.random_range(1..=16) as u8,
                downsample_f: [2u8, 4, 8, 16, 32][rng.random_range(0..5)],
                stages_present: rng.random_range(1..=n as u32) as u8,
            };
            let indices = random_indices(&mut rng, &header);
            let bytes = serialize(&header, &indices).unwrap();
            let (gw, gh) = header.grid_dims();
            let expect = HEADER_LEN
                + header.stages_present as usize
                    * (gw * gh * header.l_bits as usize).div_ceil(8);
            assert_eq!(bytes.len(), expect);
        }
    }
}
