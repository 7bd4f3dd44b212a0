//! Fixed-payload packetization for transmission simulation.

use super::{StreamError, StreamResult};

/// One transmission unit: a sequence number plus a payload slice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub seq: u32,
    pub payload: Vec<u8>,
}

impl Packet {
    /// Wire form: 4-byte little-endian sequence number, then the payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.payload.len());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> StreamResult<Self> {
        if bytes.len() < 4 {
            return Err(StreamError::TooShort {
                needed: 4,
                got: bytes.len(),
            });
        }
        Ok(Packet {
            seq: u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            payload: bytes[4..].to_vec(),
        })
    }
}

/// Split `bytes` into consecutive `payload_size` slices (last may be short).
pub fn packetize(bytes: &[u8], payload_size: usize) -> StreamResult<Vec<Packet>> {
    if payload_size == 0 {
        return Err(StreamError::BadPayloadSize);
    }
    Ok(bytes
        .chunks(payload_size)
        .enumerate()
        .map(|(i, chunk)| Packet {
            seq: i as u32,
            payload: chunk.to_vec(),
        })
        .collect())
}

/// Concatenate an in-order prefix of packets back into a byte sequence.
///
/// Sequence numbers must run 0, 1, 2, ... with no gap; the first missing
/// packet is named in the error.
pub fn reassemble(packets: &[Packet]) -> StreamResult<Vec<u8>> {
    let mut out = Vec::new();
    for (i, p) in packets.iter().enumerate() {
        if p.seq != i as u32 {
            return Err(StreamError::MissingPacket { seq: i as u32 });
        }
        out.extend_from_slice(&p.payload);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_packet_count_for_full_scale_stream() {
        let bytes = vec![0u8; 9600];
        let packets = packetize(&bytes, 320).unwrap();
        assert_eq!(packets.len(), 30);
        assert!(packets.iter().all(|p| p.payload.len() == 320));
    }

    #[test]
    fn reassemble_all_packets_roundtrips() {
        let bytes: Vec<u8> = (0..1000).map(|i| (i % 251) as u8).collect();
        let packets = packetize(&bytes, 96).unwrap();
        assert_eq!(reassemble(&packets).unwrap(), bytes);
    }

    #[test]
    fn prefix_reassembly_is_byte_prefix() {
        let bytes: Vec<u8> = (0..777).map(|i| (i % 256) as u8).collect();
        let packets = packetize(&bytes, 100).unwrap();
        for k in 1..=packets.len() {
            let prefix = reassemble(&packets[..k]).unwrap();
            assert_eq!(prefix[..], bytes[..prefix.len()]);
            assert_eq!(prefix.len(), (k * 100).min(777));
        }
    }

    #[test]
    fn gap_names_first_missing_packet() {
        let bytes = vec![0u8; 500];
        let mut packets = packetize(&bytes, 100).unwrap();
        packets.remove(2);
        assert_eq!(
            reassemble(&packets).unwrap_err(),
            StreamError::MissingPacket { seq: 2 }
        );
    }

    #[test]
    fn oversized_payload_gives_single_packet() {
        let bytes = vec![7u8; 50];
        let packets = packetize(&bytes, 1000).unwrap();
        assert_eq!(packets.len(), 1);
        assert_eq!(packets[0].payload, bytes);
    }

    #[test]
    fn packet_wire_roundtrip() {
        let p = Packet {
            seq: 301,
            payload: vec![1, 2, 3],
        };
        assert_eq!(Packet::from_bytes(&p.to_bytes()).unwrap(), p);
    }
}
