//! `VCC1` code files.
//!
//! Layout: the magic `VCC1`, a little-endian `u32` record count, `u8` M and
//! `u8` b, then one record per code. A record packs the two `b`-bit coarse
//! indices into `ceil(2b / 8)` bytes, most significant bit first and left
//! aligned (left index first, zero padding at the end), followed by the `M`
//! sub-code bytes.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::lopq::{CompressedCode, MAX_COARSE_BITS};

pub const VCC_MAGIC: &[u8; 4] = b"VCC1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeFile {
    pub num_subvectors: u8,
    pub bits: u8,
    pub codes: Vec<CompressedCode>,
}

pub fn coarse_pack_bytes(bits: u8) -> usize {
    (2 * bits as usize).div_ceil(8)
}

pub fn record_bytes(bits: u8, num_subvectors: u8) -> usize {
    coarse_pack_bytes(bits) + num_subvectors as usize
}

fn pack_coarse(left: u32, right: u32, bits: u8) -> Vec<u8> {
    let n = coarse_pack_bytes(bits);
    if n == 0 {
        return Vec::new();
    }
    let joined = ((left as u64) << bits) | right as u64;
    let shifted = joined << (n * 8 - 2 * bits as usize);
    shifted.to_be_bytes()[8 - n..].to_vec()
}

fn unpack_coarse(bytes: &[u8], bits: u8) -> (u32, u32) {
    if bits == 0 {
        return (0, 0);
    }
    let n = bytes.len();
    let mut buf = [0u8; 8];
    buf[8 - n..].copy_from_slice(bytes);
    let joined = u64::from_be_bytes(buf) >> (n * 8 - 2 * bits as usize);
    let mask = (1u64 << bits) - 1;
    ((joined >> bits) as u32, (joined & mask) as u32)
}

pub fn write_codes<W: Write>(mut sink: W, file: &CodeFile) -> Result<()> {
    validate_header(file.num_subvectors, file.bits)?;
    let count = u32::try_from(file.codes.len()).map_err(|_| Error::invalid("too many codes for VCC1"))?;
    let mut out = Vec::with_capacity(10 + file.codes.len() * record_bytes(file.bits, file.num_subvectors));
    out.extend_from_slice(VCC_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.push(file.num_subvectors);
    out.push(file.bits);
    let limit = 1u64 << file.bits;
    for code in &file.codes {
        if code.coarse_left as u64 >= limit || code.coarse_right as u64 >= limit {
            return Err(Error::invalid(format!("coarse index does not fit in {} bits", file.bits)));
        }
        if code.sub_codes.len() != file.num_subvectors as usize {
            return Err(Error::DimensionMismatch {
                expected: file.num_subvectors as usize,
                found: code.sub_codes.len(),
            });
        }
        out.extend(pack_coarse(code.coarse_left, code.coarse_right, file.bits));
        out.extend_from_slice(&code.sub_codes);
    }
    sink.write_all(&out)?;
    sink.flush()?;
    Ok(())
}

pub fn read_codes<R: Read>(mut source: R) -> Result<CodeFile> {
    let mut header = [0u8; 10];
    source
        .read_exact(&mut header)
        .map_err(|_| Error::malformed("truncated VCC1 header"))?;
    if &header[..4] != VCC_MAGIC {
        return Err(Error::malformed("bad magic, expected VCC1"));
    }
    let count = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let (m, bits) = (header[8], header[9]);
    validate_header(m, bits)?;
    let pack = coarse_pack_bytes(bits);
    let mut rec = vec![0u8; record_bytes(bits, m)];
    let mut codes = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        source
            .read_exact(&mut rec)
            .map_err(|_| Error::malformed(format!("truncated record {i}")))?;
        let (l, r) = unpack_coarse(&rec[..pack], bits);
        codes.push(CompressedCode {
            coarse_left: l,
            coarse_right: r,
            sub_codes: rec[pack..].to_vec(),
        });
    }
    let mut rest = [0u8; 1];
    if source.read(&mut rest)? != 0 {
        return Err(Error::malformed("trailing data after code records"));
    }
    Ok(CodeFile {
        num_subvectors: m,
        bits,
        codes,
    })
}

fn validate_header(m: u8, bits: u8) -> Result<()> {
    if bits > MAX_COARSE_BITS {
        return Err(Error::malformed(format!("coarse bits {bits} exceed {MAX_COARSE_BITS}")));
    }
    if m == 0 {
        return Err(Error::malformed("code file declares M = 0"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thirteen_bit_sixteen_subvector_record_is_twenty_bytes() {
        assert_eq!(record_bytes(13, 16), 20);
        let file = CodeFile {
            num_subvectors: 16,
            bits: 13,
            codes: vec![CompressedCode {
                coarse_left: 8191,
                coarse_right: 1,
                sub_codes: (0..16).collect(),
            }],
        };
        let mut buf = Vec::new();
        write_codes(&mut buf, &file).unwrap();
        assert_eq!(buf.len(), 10 + 20);
        assert_eq!(read_codes(&buf[..]).unwrap(), file);
    }

    #[test]
    fn packing_is_msb_first() {
        // b = 4: left 0xA, right 0x5 -> 1010 0101
        assert_eq!(pack_coarse(0xA, 0x5, 4), vec![0xA5]);
        // b = 3: 101 011 + two pad bits -> 1010 1100
        assert_eq!(pack_coarse(5, 3, 3), vec![0b1010_1100]);
        assert_eq!(unpack_coarse(&[0b1010_1100], 3), (5, 3));
        assert!(pack_coarse(0, 0, 0).is_empty());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_codes(&b"VCC1\x01\x00"[..]).is_err());
        assert!(read_codes(&b"XXXX\x00\x00\x00\x00\x01\x01"[..]).is_err());
        let mut truncated = b"VCC1\x02\x00\x00\x00\x01\x04".to_vec();
        truncated.extend([0xA5, 7]);
        assert!(read_codes(&truncated[..]).is_err());
        let file = CodeFile {
            num_subvectors: 1,
            bits: 2,
            codes: vec![CompressedCode {
                coarse_left: 4,
                coarse_right: 0,
                sub_codes: vec![0],
            }],
        };
        assert!(write_codes(Vec::new(), &file).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_record_size(
            bits in 0u8..=16,
            m in 1u8..20,
            raw in prop::collection::vec((any::<u32>(), any::<u32>(), any::<u64>()), 0..10)
        ) {
            let mask = if bits == 0 { 0 } else { (1u32 << bits) - 1 };
            let codes: Vec<CompressedCode> = raw
                .iter()
                .map(|(l, r, s)| CompressedCode {
                    coarse_left: l & mask,
                    coarse_right: r & mask,
                    sub_codes: (0..m).map(|i| (s.rotate_left(i as u32 * 3) & 0xff) as u8).collect(),
                })
                .collect();
            let file = CodeFile { num_subvectors: m, bits, codes };
            let mut buf = Vec::new();
            write_codes(&mut buf, &file).unwrap();
            let expected = (8 * m as usize + 2 * bits as usize).div_ceil(8);
            prop_assert_eq!(buf.len(), 10 + file.codes.len() * expected);
            prop_assert_eq!(read_codes(&buf[..]).unwrap(), file);
        }
    }
}
