//! Canonical binary encoding.
//!
//! Deterministic, length-prefixed, fixed field order, little-endian
//! integers. Two logically identical messages encode to identical bytes,
//! which is what makes "identical messages counted once" well defined and
//! keeps trace files replayable bit-for-bit.
//!
//! Field order:
//! - value list:  u32 count, then per component u8 tag (0 = ⊥, 1 = value) + 32 digest bytes
//! - bit list:    u32 count, then packed bits (LSB first within each byte)
//! - credential:  pk(32) ‖ u32 step ‖ sig(32) ‖ u8 tag + u32 counter
//! - message: u8 'M' ‖ u32 step ‖ credential ‖ u8 payload tag ‖ payload
//!   ‖ payload sig(32) ‖ u8 tag + (theta digest(32) ‖ theta sig(32))
//! - certificate: u8 'C' ‖ value list ‖ u32 step ‖ u32 count + cert sigs (prev)
//!   ‖ u32 count + cert sigs (this); cert sig = credential ‖ sig(32)

use crate::crypto::{Digest, PublicKey, Signature};
use crate::protocol::{BitList, CertSig, Certificate, Payload, StepMessage, ValueList};
use crate::sortition::Credential;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("invalid tag {tag} at offset {offset}")]
    BadTag { tag: u8, offset: usize },
    #[error("trailing {0} bytes after value")]
    Trailing(usize),
    #[error("length {0} exceeds sanity bound")]
    LengthBound(u64),
    #[error("integrity checksum mismatch")]
    Checksum,
}

/// Upper bound on any decoded collection length; rejects garbage lengths
/// before allocation.
const MAX_LEN: u64 = 16 * 1024 * 1024;

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(DecodeError::Trailing(self.remaining()))
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads a u32 length prefix, bounded by the sanity limit.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&mut self) -> Result<usize, DecodeError> {
        let n = self.u32()? as u64;
        if n > MAX_LEN {
            return Err(DecodeError::LengthBound(n));
        }
        Ok(n as usize)
    }

    pub fn array32(&mut self) -> Result<[u8; 32], DecodeError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.len()?;
        Ok(self.take(n)?.to_vec())
    }
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

pub fn encode_value_list(vl: &ValueList) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + vl.len() * 33);
    put_u32(&mut out, vl.len() as u32);
    for v in &vl.0 {
        match v {
            None => out.push(0),
            Some(d) => {
                out.push(1);
                out.extend_from_slice(d.as_bytes());
            }
        }
    }
    out
}

pub fn decode_value_list(r: &mut Reader) -> Result<ValueList, DecodeError> {
    let n = r.len()?;
    let mut comps = Vec::with_capacity(n);
    for _ in 0..n {
        let offset = r.pos;
        match r.u8()? {
            0 => comps.push(None),
            1 => comps.push(Some(Digest(r.array32()?))),
            tag => return Err(DecodeError::BadTag { tag, offset }),
        }
    }
    Ok(ValueList(comps))
}

pub fn encode_bit_list(bl: &BitList) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + bl.len() / 8 + 1);
    put_u32(&mut out, bl.len() as u32);
    let mut byte = 0u8;
    for (i, &b) in bl.0.iter().enumerate() {
        if b {
            byte |= 1 << (i % 8);
        }
        if i % 8 == 7 {
            out.push(byte);
            byte = 0;
        }
    }
    if !bl.len().is_multiple_of(8) {
        out.push(byte);
    }
    out
}

pub fn decode_bit_list(r: &mut Reader) -> Result<BitList, DecodeError> {
    let n = r.len()?;
    let mut bits = Vec::with_capacity(n);
    let mut byte = 0u8;
    for i in 0..n {
        if i % 8 == 0 {
            byte = r.u8()?;
        }
        bits.push((byte >> (i % 8)) & 1 == 1);
    }
    Ok(BitList(bits))
}

pub fn encode_credential(out: &mut Vec<u8>, c: &Credential) {
    out.extend_from_slice(&c.player.0);
    put_u32(out, c.step);
    out.extend_from_slice(&c.sig.0);
    match c.counter {
        None => out.push(0),
        Some(k) => {
            out.push(1);
            put_u32(out, k);
        }
    }
}

pub fn decode_credential(r: &mut Reader) -> Result<Credential, DecodeError> {
    let player = PublicKey(r.array32()?);
    let step = r.u32()?;
    let sig = Signature(r.array32()?);
    let offset = r.pos;
    let counter = match r.u8()? {
        0 => None,
        1 => Some(r.u32()?),
        tag => return Err(DecodeError::BadTag { tag, offset }),
    };
    Ok(Credential {
        player,
        step,
        sig,
        counter,
    })
}

pub fn encode_payload(p: &Payload) -> Vec<u8> {
    let mut out = Vec::new();
    match p {
        Payload::Values(vl) => {
            out.push(0);
            out.extend_from_slice(&encode_value_list(vl));
        }
        Payload::Bits(bl) => {
            out.push(1);
            out.extend_from_slice(&encode_bit_list(bl));
        }
    }
    out
}

pub fn decode_payload(r: &mut Reader) -> Result<Payload, DecodeError> {
    let offset = r.pos;
    match r.u8()? {
        0 => Ok(Payload::Values(decode_value_list(r)?)),
        1 => Ok(Payload::Bits(decode_bit_list(r)?)),
        tag => Err(DecodeError::BadTag { tag, offset }),
    }
}

pub fn encode_message(m: &StepMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(256);
    out.push(b'M');
    put_u32(&mut out, m.step);
    encode_credential(&mut out, &m.credential);
    out.extend_from_slice(&encode_payload(&m.payload));
    out.extend_from_slice(&m.payload_sig.0);
    match &m.theta_sig {
        None => out.push(0),
        Some((d, s)) => {
            out.push(1);
            out.extend_from_slice(d.as_bytes());
            out.extend_from_slice(&s.0);
        }
    }
    out
}

pub fn decode_message(buf: &[u8]) -> Result<StepMessage, DecodeError> {
    let mut r = Reader::new(buf);
    let msg = decode_message_from(&mut r)?;
    r.finish()?;
    Ok(msg)
}

pub fn decode_message_from(r: &mut Reader) -> Result<StepMessage, DecodeError> {
    let offset = r.pos;
    if r.u8()? != b'M' {
        return Err(DecodeError::BadTag { tag: b'M', offset });
    }
    let step = r.u32()?;
    let credential = decode_credential(r)?;
    let payload = decode_payload(r)?;
    let payload_sig = Signature(r.array32()?);
    let offset = r.pos;
    let theta_sig = match r.u8()? {
        0 => None,
        1 => Some((Digest(r.array32()?), Signature(r.array32()?))),
        tag => return Err(DecodeError::BadTag { tag, offset }),
    };
    Ok(StepMessage {
        step,
        credential,
        payload,
        payload_sig,
        theta_sig,
    })
}

fn encode_cert_sig(out: &mut Vec<u8>, cs: &CertSig) {
    encode_credential(out, &cs.credential);
    out.extend_from_slice(&cs.theta_sig.0);
}

fn decode_cert_sig(r: &mut Reader) -> Result<CertSig, DecodeError> {
    Ok(CertSig {
        credential: decode_credential(r)?,
        theta_sig: Signature(r.array32()?),
    })
}

pub fn encode_certificate(c: &Certificate) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + 100 * (c.prev_step_sigs.len() + c.this_step_sigs.len()));
    out.push(b'C');
    out.extend_from_slice(&encode_value_list(&c.theta));
    put_u32(&mut out, c.step);
    for sigs in [&c.prev_step_sigs, &c.this_step_sigs] {
        put_u32(&mut out, sigs.len() as u32);
        for cs in sigs {
            encode_cert_sig(&mut out, cs);
        }
    }
    out
}

pub fn decode_certificate(buf: &[u8]) -> Result<Certificate, DecodeError> {
    let mut r = Reader::new(buf);
    let cert = decode_certificate_from(&mut r)?;
    r.finish()?;
    Ok(cert)
}

pub fn decode_certificate_from(r: &mut Reader) -> Result<Certificate, DecodeError> {
    let offset = r.pos;
    if r.u8()? != b'C' {
        return Err(DecodeError::BadTag { tag: b'C', offset });
    }
    let theta = decode_value_list(r)?;
    let step = r.u32()?;
    let mut lists = Vec::with_capacity(2);
    for _ in 0..2 {
        let n = r.len()?;
        let mut sigs = Vec::with_capacity(n);
        for _ in 0..n {
            sigs.push(decode_cert_sig(r)?);
        }
        lists.push(sigs);
    }
    let this_step_sigs = lists.pop().unwrap();
    let prev_step_sigs = lists.pop().unwrap();
    Ok(Certificate {
        theta,
        step,
        prev_step_sigs,
        this_step_sigs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_a_decode_error() {
        assert_eq!(decode_message(&[]), Err(DecodeError::Truncated(0)));
        assert_eq!(decode_certificate(&[]), Err(DecodeError::Truncated(0)));
    }

    #[test]
    fn bit_list_round_trip_odd_lengths() {
        for n in [0usize, 1, 7, 8, 9, 13, 64] {
            let bl = BitList((0..n).map(|i| i % 3 == 0).collect());
            let bytes = encode_bit_list(&bl);
            let mut r = Reader::new(&bytes);
            assert_eq!(decode_bit_list(&mut r).unwrap(), bl);
            r.finish().unwrap();
        }
    }

    #[test]
    fn truncated_value_list_is_rejected() {
        let vl = ValueList(vec![Some(Digest([7; 32])), None]);
        let bytes = encode_value_list(&vl);
        for cut in [1, 5, bytes.len() - 1] {
            let mut r = Reader::new(&bytes[..cut]);
            assert!(decode_value_list(&mut r).is_err());
        }
    }
}
