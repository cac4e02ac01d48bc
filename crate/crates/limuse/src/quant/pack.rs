//! Bit packing of quantizer codes.
//!
//! Codes are written LSB-first into a little-endian bit stream: 3-bit
//! codes pack 8 per 3 bytes, the tail byte is zero-padded.

use crate::error::{Error, Result};

/// Pack `codes` at `bits` per code.
pub fn pack_codes(codes: &[u16], bits: u32) -> Result<Vec<u8>> {
    if bits == 0 || bits > 16 {
        return Err(Error::invalid("pack_codes", format!("bits {bits} out of range")));
    }
    let limit = if bits == 16 { u16::MAX as u32 } else { (1u32 << bits) - 1 };
    let mut out = vec![0u8; (codes.len() * bits as usize).div_ceil(8)];
    let mut bitpos = 0usize;
    for &c in codes {
        if c as u32 > limit {
            return Err(Error::invalid(
                "pack_codes",
                format!("code {c} does not fit in {bits} bits"),
            ));
        }
        let mut v = c as u32;
        let mut remaining = bits;
        while remaining > 0 {
            let byte = bitpos / 8;
            let off = (bitpos % 8) as u32;
            let take = remaining.min(8 - off);
            out[byte] |= ((v & ((1 << take) - 1)) as u8) << off;
            v >>= take;
            bitpos += take as usize;
            remaining -= take;
        }
    }
    Ok(out)
}

/// Inverse of [`pack_codes`]; `count` is the number of codes stored.
pub fn unpack_codes(bytes: &[u8], bits: u32, count: usize) -> Result<Vec<u16>> {
    if bits == 0 || bits > 16 {
        return Err(Error::invalid("unpack_codes", format!("bits {bits} out of range")));
    }
    let needed = (count * bits as usize).div_ceil(8);
    if bytes.len() < needed {
        return Err(Error::invalid(
            "unpack_codes",
            format!("{} bytes cannot hold {count} codes of {bits} bits", bytes.len()),
        ));
    }
    let mut out = Vec::with_capacity(count);
    let mut bitpos = 0usize;
    for _ in 0..count {
        let mut v = 0u32;
        let mut got = 0u32;
        while got < bits {
            let byte = bitpos / 8;
            let off = (bitpos % 8) as u32;
            let take = (bits - got).min(8 - off);
            let part = (bytes[byte] >> off) as u32 & ((1 << take) - 1);
            v |= part << got;
            got += take;
            bitpos += take as usize;
        }
        out.push(v as u16);
    }
    Ok(out)
}
