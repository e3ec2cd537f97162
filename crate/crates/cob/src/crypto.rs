//! Hashing and unique signatures.
//!
//! The protocol needs two primitives: a hash function modelled as a random
//! oracle, and a digital signature scheme with *unique* signatures (for a
//! fixed key and message there is exactly one signature that verifies).
//! Uniqueness is what turns a signature into a lottery ticket: hashing it
//! yields one unbiasable value per (user, step).
//!
//! The default signature scheme here is simulation grade: `sig = H(sk ‖ m)`
//! with verification through an in-process key registry. It is deterministic,
//! unique, and unforgeable against everyone who does not hold `sk`, which is
//! exactly the contract the simulator relies on. A production deployment
//! would swap in a real unique-signature scheme (e.g. BLS or an RSA-FDH)
//! behind the same functions.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// Number of bits in a digest.
pub const DIGEST_BITS: usize = 256;
/// Number of bytes in a digest.
pub const DIGEST_BYTES: usize = 32;

/// Fixed-length hash output. Bit `i` (for the φ decoding and for coin
/// extraction) is bit `i % 8` of byte `i / 8`, least significant first.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Digest(pub [u8; DIGEST_BYTES]);

impl Digest {
    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 8] >> (i % 8)) & 1 == 1
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..8])
    }
}

/// Selectable hash engine. Both variants are 256-bit and deterministic;
/// `Seeded` additionally mixes a seed into every input so that independent
/// test universes draw independent oracles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[derive(Default)]
pub enum HashEngine {
    /// SHA-256, the default engine.
    #[default]
    Sha256,
    /// SHA-256 over `seed ‖ data`; a fresh random oracle per seed.
    Seeded(u64),
}


impl HashEngine {
    pub fn hash(&self, data: &[u8]) -> Digest {
        let mut h = Sha256::new();
        if let HashEngine::Seeded(seed) = self {
            h.update(seed.to_le_bytes());
        }
        h.update(data);
        Digest(h.finalize().into())
    }

    /// Hash of the concatenation of length-prefixed parts. Length prefixes
    /// make the encoding injective, so `hash_parts(&[a, b]) != hash_parts(&[ab, ""])`.
    pub fn hash_parts(&self, parts: &[&[u8]]) -> Digest {
        let mut h = Sha256::new();
        if let HashEngine::Seeded(seed) = self {
            h.update(seed.to_le_bytes());
        }
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        Digest(h.finalize().into())
    }
}

/// The standard decoding of a bit string into `(0, 1]`, kept as an exact
/// rational `num / 2^log2_den` so that committee selection is bit-exact on
/// every platform.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lottery {
    pub num: BigUint,
    pub log2_den: u32,
}

impl Lottery {
    /// `self <= p_num / p_den`, compared exactly: `num * p_den <= p_num << log2_den`.
    pub fn at_most(&self, p_num: &BigUint, p_den: &BigUint) -> bool {
        &self.num * p_den <= p_num << self.log2_den
    }

    pub fn as_f64(&self) -> f64 {
        // Fine for display; selection never goes through floats.
        let num: f64 = self.num.to_string().parse().unwrap_or(f64::MAX);
        num / 2f64.powi(self.log2_den as i32)
    }
}

/// φ over an explicit bit string: `(1 + Σ h_i 2^i) / 2^d`.
///
/// Strictly positive, at most 1, and strictly increasing in the integer the
/// bits encode; the range is exactly `{k / 2^d : 1 <= k <= 2^d}`.
pub fn phi_bits(bits: &[bool]) -> Lottery {
    let mut num = BigUint::from(0u32);
    for (i, &b) in bits.iter().enumerate() {
        if b {
            num |= BigUint::from(1u32) << i;
        }
    }
    num += 1u32;
    Lottery {
        num,
        log2_den: bits.len() as u32,
    }
}

/// φ over a full digest (d = 256).
pub fn phi(h: &Digest) -> Lottery {
    let num = BigUint::from_bytes_le(h.as_bytes()) + 1u32;
    Lottery {
        num,
        log2_den: DIGEST_BITS as u32,
    }
}

/// Public key; doubles as the user identity.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PublicKey(pub [u8; 32]);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pk:{:02x}{:02x}{:02x}{:02x}", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

/// Secret key. Never appears in any message or certificate.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey(pub [u8; 32]);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sk:<redacted>")
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub sk: SecretKey,
    pub pk: PublicKey,
}

/// Opaque signature value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature(pub [u8; 32]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sig:{:02x}{:02x}..", self.0[0], self.0[1])
    }
}

/// In-simulation key registry backing signature verification.
///
/// Holds `pk -> sk` so that `verify` can recompute the unique signature.
/// Strategies never receive this registry, only their own key pairs, which
/// is what enforces "no strategy can forge honest signatures".
#[derive(Clone)]
pub struct SigRegistry {
    engine: HashEngine,
    keys: Arc<HashMap<PublicKey, SecretKey>>,
}

impl SigRegistry {
    /// Deterministically generates `count` key pairs from a seed and builds
    /// the registry. Keys are derived by hashing, so two registries with the
    /// same seed and engine are identical.
    pub fn generate(engine: HashEngine, seed: u64, count: usize) -> (Self, Vec<KeyPair>) {
        let mut keys = HashMap::with_capacity(count);
        let mut pairs = Vec::with_capacity(count);
        for i in 0..count {
            let sk = SecretKey(
                engine
                    .hash_parts(&[b"keygen-sk", &seed.to_le_bytes(), &(i as u64).to_le_bytes()])
                    .0,
            );
            let pk = PublicKey(engine.hash_parts(&[b"keygen-pk", &sk.0]).0);
            keys.insert(pk, sk.clone());
            pairs.push(KeyPair { sk, pk });
        }
        (
            SigRegistry {
                engine,
                keys: Arc::new(keys),
            },
            pairs,
        )
    }

    pub fn engine(&self) -> HashEngine {
        self.engine
    }

    /// Unique signature: `H(tag ‖ sk ‖ m)`. Signing twice yields identical bytes.
    pub fn sign(&self, sk: &SecretKey, message: &[u8]) -> Signature {
        Signature(self.engine.hash_parts(&[b"sig", &sk.0, message]).0)
    }

    /// True iff `sig` is the unique signature of `message` under the secret
    /// key registered for `pk`. Unknown keys verify nothing.
    pub fn verify(&self, pk: &PublicKey, sig: &Signature, message: &[u8]) -> bool {
        match self.keys.get(pk) {
            Some(sk) => self.sign(sk, message).0 == sig.0,
            None => false,
        }
    }
}
