//! RTG1 time-tag files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! header (56 bytes)
//!   0  magic          b"RTG1"
//!   4  version        u32 = 1
//!   8  rep_period_ps  u64
//!  16  record_count   u64
//!  24  config_digest  28 bytes (truncated SHA-256 of the canonical config)
//!  52  header_crc     u32, CRC-32 (IEEE) of bytes 0..52
//! record (16 bytes)
//!   0  timestamp_ps   u64
//!   8  channel        u8  (0 = Stokes, 1 = anti-Stokes)
//!   9  flags          u8  (reserved, 0)
//!  10  padding        6 zero bytes
//! ```
//!
//! Records are written in `(timestamp, channel)` order.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"RTG1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 56;
pub const RECORD_LEN: usize = 16;
pub const DIGEST_LEN: usize = 28;
const CRC_OFFSET: usize = 52;

pub const STOKES: u8 = 0;
pub const ANTI_STOKES: u8 = 1;

#[derive(Debug, Error)]
pub enum TagError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("file is {len} bytes, shorter than the {HEADER_LEN}-byte header")]
    TruncatedHeader { len: usize },
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: u64 },
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { offset: u64, version: u32 },
    #[error("header checksum mismatch (offset {offset})")]
    HeaderChecksum { offset: u64 },
    #[error("body truncated at offset {offset}: header promises {expected} records, file holds {available}")]
    TruncatedBody {
        offset: u64,
        expected: u64,
        available: u64,
    },
    #[error("{extra} unexpected bytes after the last record at offset {offset}")]
    TrailingBytes { offset: u64, extra: u64 },
    #[error("timestamp out of order at offset {offset}")]
    OutOfOrder { offset: u64 },
    #[error("invalid channel {channel} at offset {offset}")]
    BadChannel { offset: u64, channel: u8 },
    #[error("reserved bytes are not zero at offset {offset}")]
    ReservedNonZero { offset: u64 },
    #[error("header record_count {header} does not match {actual} records")]
    CountMismatch { header: u64, actual: u64 },
}

pub type Result<T> = std::result::Result<T, TagError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TagRecord {
    pub timestamp_ps: u64,
    pub channel: u8,
    pub flags: u8,
}

impl TagRecord {
    pub fn new(timestamp_ps: u64, channel: u8) -> Self {
        Self {
            timestamp_ps,
            channel,
            flags: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagFileHeader {
    pub version: u32,
    pub rep_period_ps: u64,
    pub record_count: u64,
    pub config_digest: [u8; DIGEST_LEN],
}

impl TagFileHeader {
    pub fn new(rep_period_ps: u64, record_count: u64, config_digest: [u8; DIGEST_LEN]) -> Self {
        Self {
            version: VERSION,
            rep_period_ps,
            record_count,
            config_digest,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4..8].copy_from_slice(&self.version.to_le_bytes());
        h[8..16].copy_from_slice(&self.rep_period_ps.to_le_bytes());
        h[16..24].copy_from_slice(&self.record_count.to_le_bytes());
        h[24..CRC_OFFSET].copy_from_slice(&self.config_digest);
        let crc = crc32fast::hash(&h[..CRC_OFFSET]);
        h[CRC_OFFSET..].copy_from_slice(&crc.to_le_bytes());
        h
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(TagError::TruncatedHeader { len: bytes.len() });
        }
        if bytes[0..4] != MAGIC {
            return Err(TagError::BadMagic { offset: 0 });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(TagError::UnsupportedVersion { offset: 4, version });
        }
        let stored = u32::from_le_bytes(bytes[CRC_OFFSET..HEADER_LEN].try_into().unwrap());
        if crc32fast::hash(&bytes[..CRC_OFFSET]) != stored {
            return Err(TagError::HeaderChecksum {
                offset: CRC_OFFSET as u64,
            });
        }
        Ok(Self {
            version,
            rep_period_ps: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
            record_count: u64::from_le_bytes(bytes[16..24].try_into().unwrap()),
            config_digest: bytes[24..CRC_OFFSET].try_into().unwrap(),
        })
    }
}

/// Truncated SHA-256 of a canonical configuration text.
pub fn config_digest(canonical: &str) -> [u8; DIGEST_LEN] {
    let full = Sha256::digest(canonical.as_bytes());
    let mut out = [0u8; DIGEST_LEN];
    out.copy_from_slice(&full[..DIGEST_LEN]);
    out
}

pub fn digest_hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn record_offset(index: usize) -> u64 {
    (HEADER_LEN + index * RECORD_LEN) as u64
}

/// Check channel, flags and per-channel ordering.
pub fn validate_records(records: &[TagRecord]) -> Result<()> {
    let mut last = [None::<u64>; 2];
    for (i, r) in records.iter().enumerate() {
        let offset = record_offset(i);
        if r.channel > ANTI_STOKES {
            return Err(TagError::BadChannel {
                offset: offset + 8,
                channel: r.channel,
            });
        }
        if r.flags != 0 {
            return Err(TagError::ReservedNonZero { offset: offset + 9 });
        }
        let slot = &mut last[r.channel as usize];
        if matches!(*slot, Some(prev) if r.timestamp_ps < prev) {
            return Err(TagError::OutOfOrder { offset });
        }
        *slot = Some(r.timestamp_ps);
    }
    Ok(())
}

pub fn encode(header: &TagFileHeader, records: &[TagRecord]) -> Result<Vec<u8>> {
    if header.record_count != records.len() as u64 {
        return Err(TagError::CountMismatch {
            header: header.record_count,
            actual: records.len() as u64,
        });
    }
    validate_records(records)?;
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * records.len());
    out.extend_from_slice(&header.encode());
    for r in records {
        out.extend_from_slice(&r.timestamp_ps.to_le_bytes());
        out.push(r.channel);
        out.push(r.flags);
        out.extend_from_slice(&[0u8; 6]);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(TagFileHeader, Vec<TagRecord>)> {
    let header = TagFileHeader::decode(bytes)?;
    let body = &bytes[HEADER_LEN..];
    let available = (body.len() / RECORD_LEN) as u64;
    if available < header.record_count {
        return Err(TagError::TruncatedBody {
            offset: bytes.len() as u64,
            expected: header.record_count,
            available,
        });
    }
    let used = header.record_count as usize * RECORD_LEN;
    if body.len() > used {
        return Err(TagError::TrailingBytes {
            offset: (HEADER_LEN + used) as u64,
            extra: (body.len() - used) as u64,
        });
    }
    let mut records = Vec::with_capacity(header.record_count as usize);
    for (i, chunk) in body.chunks_exact(RECORD_LEN).enumerate() {
        if chunk[10..].iter().any(|&b| b != 0) {
            return Err(TagError::ReservedNonZero {
                offset: record_offset(i) + 10,
            });
        }
        records.push(TagRecord {
            timestamp_ps: u64::from_le_bytes(chunk[..8].try_into().unwrap()),
            channel: chunk[8],
            flags: chunk[9],
        });
    }
    validate_records(&records)?;
    Ok((header, records))
}

pub fn write_tags(path: &Path, header: &TagFileHeader, records: &[TagRecord]) -> Result<()> {
    let bytes = encode(header, records)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read_tags(path: &Path) -> Result<(TagFileHeader, Vec<TagRecord>)> {
    decode(&fs::read(path)?)
}

/// Detection timestamps of both channels, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TagStream {
    pub stokes: Vec<u64>,
    pub anti_stokes: Vec<u64>,
}

impl TagStream {
    pub fn len(&self) -> usize {
        self.stokes.len() + self.anti_stokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, channel: u8) -> &[u64] {
        if channel == STOKES {
            &self.stokes
        } else {
            &self.anti_stokes
        }
    }

    /// Merge into records ordered by `(timestamp, channel)`.
    pub fn to_records(&self) -> Vec<TagRecord> {
        let (s, a) = (&self.stokes, &self.anti_stokes);
        let mut out = Vec::with_capacity(s.len() + a.len());
        let (mut i, mut j) = (0, 0);
        while i < s.len() || j < a.len() {
            if j == a.len() || (i < s.len() && s[i] <= a[j]) {
                out.push(TagRecord::new(s[i], STOKES));
                i += 1;
            } else {
                out.push(TagRecord::new(a[j], ANTI_STOKES));
                j += 1;
            }
        }
        out
    }

    /// Partition validated records by channel.
    pub fn from_records(records: &[TagRecord]) -> Self {
        let mut out = Self::default();
        for r in records {
            if r.channel == STOKES {
                out.stokes.push(r.timestamp_ps);
            } else {
                out.anti_stokes.push(r.timestamp_ps);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(n: u64) -> TagFileHeader {
        TagFileHeader::new(13158, n, config_digest("test"))
    }

    #[test]
    fn empty_file_is_header_only() {
        let bytes = encode(&header(0), &[]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        let (h, r) = decode(&bytes).unwrap();
        assert_eq!(h, header(0));
        assert!(r.is_empty());
    }

    #[test]
    fn single_record_layout() {
        let bytes = encode(&header(1), &[TagRecord::new(13158, STOKES)]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN);
        assert_eq!(&bytes[..4], b"RTG1");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[0x66, 0x33, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(
            &bytes[HEADER_LEN..],
            &[0x66, 0x33, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn reader_errors_name_offsets() {
        let recs = [TagRecord::new(5, STOKES), TagRecord::new(9, ANTI_STOKES)];
        let good = encode(&header(2), &recs).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(TagError::BadMagic { offset: 0 })));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            decode(&bad),
            Err(TagError::UnsupportedVersion { offset: 4, version: 2 })
        ));

        let bad = &good[..good.len() - 3];
        assert!(matches!(decode(bad), Err(TagError::TruncatedBody { expected: 2, available: 1, .. })));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(decode(&bad), Err(TagError::TrailingBytes { offset: 88, extra: 1 })));

        let mut bad = good.clone();
        bad[HEADER_LEN + RECORD_LEN + 8] = 7;
        assert!(matches!(decode(&bad), Err(TagError::BadChannel { offset: 80, channel: 7 })));

        let mut bad = good.clone();
        bad[HEADER_LEN + 12] = 1;
        assert!(matches!(decode(&bad), Err(TagError::ReservedNonZero { offset: 66 })));

        assert!(matches!(decode(&good[..10]), Err(TagError::TruncatedHeader { len: 10 })));
    }

    #[test]
    fn out_of_order_within_channel_rejected() {
        let recs = [TagRecord::new(10, STOKES), TagRecord::new(3, ANTI_STOKES), TagRecord::new(4, STOKES)];
        assert!(matches!(encode(&header(3), &recs), Err(TagError::OutOfOrder { offset: 88 })));
        // interleaving across channels is fine as long as each channel is ordered
        let recs = [TagRecord::new(10, STOKES), TagRecord::new(3, ANTI_STOKES), TagRecord::new(11, STOKES)];
        assert!(encode(&header(3), &recs).is_ok());
    }

    #[test]
    fn count_mismatch_rejected_before_writing() {
        assert!(matches!(
            encode(&header(5), &[TagRecord::new(1, STOKES)]),
            Err(TagError::CountMismatch { header: 5, actual: 1 })
        ));
    }

    #[test]
    fn every_header_byte_flip_is_detected() {
        let recs = [TagRecord::new(5, STOKES), TagRecord::new(9, ANTI_STOKES)];
        let good = encode(&header(2), &recs).unwrap();
        for pos in 0..HEADER_LEN {
            for delta in 1..=255u8 {
                let mut bad = good.clone();
                bad[pos] ^= delta;
                assert!(decode(&bad).is_err(), "byte {pos} ^ {delta:#x} accepted");
            }
        }
    }

    #[test]
    fn stream_record_conversion() {
        let s = TagStream {
            stokes: vec![0, 5, 5, 20],
            anti_stokes: vec![5, 6],
        };
        let recs = s.to_records();
        assert_eq!(
            recs.iter().map(|r| (r.timestamp_ps, r.channel)).collect::<Vec<_>>(),
            vec![(0, 0), (5, 0), (5, 0), (5, 1), (6, 1), (20, 0)]
        );
        assert_eq!(TagStream::from_records(&recs), s);
    }

    fn stream_strategy() -> impl Strategy<Value = TagStream> {
        (
            prop::collection::vec(0u64..1_000_000, 0..200),
            prop::collection::vec(0u64..1_000_000, 0..200),
        )
            .prop_map(|(mut s, mut a)| {
                s.sort_unstable();
                a.sort_unstable();
                TagStream {
                    stokes: s,
                    anti_stokes: a,
                }
            })
    }

    proptest! {
        #[test]
        fn round_trip(stream in stream_strategy(), period in 1u64..100_000, digest in any::<[u8; 28]>()) {
            let recs = stream.to_records();
            let h = TagFileHeader::new(period, recs.len() as u64, digest);
            let bytes = encode(&h, &recs).unwrap();
            let (h2, recs2) = decode(&bytes).unwrap();
            prop_assert_eq!(&h2, &h);
            prop_assert_eq!(&recs2, &recs);
            prop_assert_eq!(encode(&h2, &recs2).unwrap(), bytes);
            prop_assert_eq!(TagStream::from_records(&recs2), stream);
        }
    }
}
