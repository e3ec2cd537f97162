//! Self-contained certificate export.
//!
//! A bundle carries a certificate together with the public-parameter header
//! (hash engine, run seed, network size, committee size, list length) from
//! which any process re-derives the key registry and sortition parameters
//! and checks every signature. The whole payload is integrity-checked, so
//! a corrupted file is distinguished from a forged certificate: the former
//! is a decode error, the latter a verification failure.

use crate::crypto::HashEngine;
use crate::encoding::{self, DecodeError, Reader};
use crate::protocol::{verify_certificate, Certificate};
use crate::sim::derive_public;
use crate::sortition::supermajority_threshold;

const MAGIC: &[u8; 8] = b"COBCERT1";

#[derive(Clone, Debug, PartialEq)]
pub struct CertificateBundle {
    pub engine: HashEngine,
    pub seed: u64,
    pub users: u64,
    pub committee: u64,
    pub components: u32,
    pub certificate: Certificate,
}

impl CertificateBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        match self.engine {
            HashEngine::Sha256 => body.push(0),
            HashEngine::Seeded(s) => {
                body.push(1);
                encoding::put_u64(&mut body, s);
            }
        }
        encoding::put_u64(&mut body, self.seed);
        encoding::put_u64(&mut body, self.users);
        encoding::put_u64(&mut body, self.committee);
        encoding::put_u32(&mut body, self.components);
        body.extend_from_slice(&encoding::encode_certificate(&self.certificate));
        let checksum = HashEngine::Sha256.hash(&body);
        let mut out = MAGIC.to_vec();
        encoding::put_u32(&mut out, body.len() as u32);
        out.extend_from_slice(&body);
        out.extend_from_slice(checksum.as_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, DecodeError> {
        if buf.len() < 8 || &buf[..8] != MAGIC {
            return Err(DecodeError::BadTag { tag: 0, offset: 0 });
        }
        let mut r = Reader::new(&buf[8..]);
        let body_len = r.len()?;
        if r.remaining() != body_len + 32 {
            return Err(DecodeError::Truncated(buf.len()));
        }
        let body = &buf[12..12 + body_len];
        let checksum = &buf[12 + body_len..];
        if HashEngine::Sha256.hash(body).as_bytes() != checksum {
            return Err(DecodeError::Checksum);
        }
        let mut r = Reader::new(body);
        let engine = match r.u8()? {
            0 => HashEngine::Sha256,
            1 => HashEngine::Seeded(r.u64()?),
            tag => return Err(DecodeError::BadTag { tag, offset: 0 }),
        };
        let seed = r.u64()?;
        let users = r.u64()?;
        let committee = r.u64()?;
        let components = r.u32()?;
        let certificate = encoding::decode_certificate_from(&mut r)?;
        r.finish()?;
        Ok(CertificateBundle {
            engine,
            seed,
            users,
            committee,
            components,
            certificate,
        })
    }

    /// Standalone verification: re-derives the public material from the
    /// header and checks the certificate against it.
    pub fn verify(&self) -> bool {
        if self.users == 0 || self.committee == 0 || self.committee > self.users {
            return false;
        }
        let (registry, _, params) =
            derive_public(self.engine, self.seed, self.users, self.committee);
        verify_certificate(
            &registry,
            &self.certificate,
            &params,
            self.components as usize,
            supermajority_threshold(self.committee),
        )
    }
}
