//! Message formats, tallying and the byte-cost model.
//!
//! The first two steps carry lists of values (one optional 32-byte digest
//! per component, absent meaning ⊥); every later step carries a list of
//! bits plus a signature over the digest of the candidate output list Θ.
//! A certificate is Θ together with a supermajority of those digest
//! signatures from two consecutive qualifying steps.

use crate::crypto::{Digest, HashEngine, PublicKey, Signature, SigRegistry};
use crate::sortition::{verify_credential, Credential, SortitionParams};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// A single component value: a 32-byte digest, or `None` for ⊥.
pub type Value = Option<Digest>;

/// List of `m` component values exchanged in steps 1 and 2 and carried by
/// certificates. ⊥ is representable in every component.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValueList(pub Vec<Value>);

impl ValueList {
    pub fn bottom(m: usize) -> Self {
        ValueList(vec![None; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Digest of the canonical encoding; what step >= 3 messages sign.
    pub fn digest(&self, engine: &HashEngine) -> Digest {
        engine.hash(&crate::encoding::encode_value_list(self))
    }
}

/// List of `m` bits exchanged from step 3 onward.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitList(pub Vec<bool>);

impl BitList {
    pub fn zeros(m: usize) -> Self {
        BitList(vec![false; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// What a step number means inside the protocol loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// Step 1: broadcast of the privately observed value list.
    ValueBroadcast,
    /// Step 2: broadcast of the supermajority-supported value list.
    ValueSupport,
    /// Step 3: graded output; first bit-list broadcast.
    GradeAndBits,
    /// Steps s >= 4 with s-1 ≡ 0 (mod 3): default the bit to 0.
    CoinFixedTo0,
    /// Steps s >= 5 with s-1 ≡ 1 (mod 3): default the bit to 1.
    CoinFixedTo1,
    /// Steps s >= 6 with s-1 ≡ 2 (mod 3): flip the shared coin on deadlock.
    CoinGenuinelyFlipped,
}

impl StepKind {
    pub fn of(step: u32) -> StepKind {
        match step {
            0 => panic!("step numbers start at 1"),
            1 => StepKind::ValueBroadcast,
            2 => StepKind::ValueSupport,
            3 => StepKind::GradeAndBits,
            s => match (s - 1) % 3 {
                0 => StepKind::CoinFixedTo0,
                1 => StepKind::CoinFixedTo1,
                _ => StepKind::CoinGenuinelyFlipped,
            },
        }
    }
}

/// True for steps whose votes a later 0-finalization reads: step 3 and the
/// coin-flip steps (s ≡ 0 mod 3).
pub fn zero_finalization_source(step: u32) -> bool {
    step >= 3 && step.is_multiple_of(3)
}

/// True for steps whose votes a later 1-finalization reads: the
/// fixed-to-0 steps (s ≡ 1 mod 3, s >= 4).
pub fn one_finalization_source(step: u32) -> bool {
    step >= 4 && step % 3 == 1
}

/// Step payload; the kind must match the step number.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Payload {
    Values(ValueList),
    Bits(BitList),
}

impl Payload {
    pub fn components(&self) -> usize {
        match self {
            Payload::Values(v) => v.len(),
            Payload::Bits(b) => b.len(),
        }
    }
}

/// The signed broadcast of one player for one step.
///
/// `theta_sig` is present exactly from step 3 onward: the pair of the digest
/// of the sender's candidate output list Θ and a signature over
/// `step ‖ digest`. `payload_sig` signs `step ‖ payload`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMessage {
    pub step: u32,
    pub credential: Credential,
    pub payload: Payload,
    pub payload_sig: Signature,
    pub theta_sig: Option<(Digest, Signature)>,
}

/// Bytes signed for a payload: `step ‖ canonical payload`.
pub fn payload_sign_bytes(step: u32, payload: &Payload) -> Vec<u8> {
    let mut out = step.to_le_bytes().to_vec();
    out.extend_from_slice(&crate::encoding::encode_payload(payload));
    out
}

/// Bytes signed for a Θ digest: `step ‖ digest`.
pub fn theta_sign_bytes(step: u32, theta_digest: &Digest) -> Vec<u8> {
    let mut out = step.to_le_bytes().to_vec();
    out.extend_from_slice(theta_digest.as_bytes());
    out
}

impl StepMessage {
    /// Content identity: hash of the canonical encoding. Identical logical
    /// messages are byte-identical, so this is a stable dedup key.
    pub fn id(&self, engine: &HashEngine) -> Digest {
        engine.hash(&crate::encoding::encode_message(self))
    }
}

/// Reason a message was rejected; the first failed check wins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvalidReason {
    StepMismatch,
    MalformedPayload,
    BadCredential,
    BadPayloadSignature,
    BadThetaSignature,
}

/// Full validity check of a step message against public parameters.
pub fn validate_message(
    registry: &SigRegistry,
    msg: &StepMessage,
    params: &SortitionParams,
    components: usize,
) -> Result<(), InvalidReason> {
    if msg.credential.step != msg.step || msg.step == 0 {
        return Err(InvalidReason::StepMismatch);
    }
    let kind_ok = match (&msg.payload, msg.step) {
        (Payload::Values(v), 1 | 2) => v.len() == components,
        (Payload::Bits(b), s) if s >= 3 => b.len() == components,
        _ => false,
    };
    let theta_ok = (msg.step >= 3) == msg.theta_sig.is_some();
    if !kind_ok || !theta_ok {
        return Err(InvalidReason::MalformedPayload);
    }
    if !verify_credential(registry, &msg.credential, params) {
        return Err(InvalidReason::BadCredential);
    }
    let pk = &msg.credential.player;
    if !registry.verify(pk, &msg.payload_sig, &payload_sign_bytes(msg.step, &msg.payload)) {
        return Err(InvalidReason::BadPayloadSignature);
    }
    if let Some((digest, sig)) = &msg.theta_sig {
        if !registry.verify(pk, sig, &theta_sign_bytes(msg.step, digest)) {
            return Err(InvalidReason::BadThetaSignature);
        }
    }
    Ok(())
}

/// One signed endorsement of a Θ digest inside a certificate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertSig {
    pub credential: Credential,
    pub theta_sig: Signature,
}

/// The protocol's terminal artifact: the agreed list Θ plus at least `t_H`
/// digest signatures from each of two consecutive steps `(s-1, s)` with
/// `s - 1 ≡ 0 (mod 3)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub theta: ValueList,
    /// The later step of the pair (`s`, with `s - 1 ≡ 0 mod 3`).
    pub step: u32,
    pub prev_step_sigs: Vec<CertSig>,
    pub this_step_sigs: Vec<CertSig>,
}

/// Pure certificate check against public parameters; no node state involved.
pub fn verify_certificate(
    registry: &SigRegistry,
    cert: &Certificate,
    params: &SortitionParams,
    components: usize,
    threshold: u64,
) -> bool {
    if cert.step < 4 || !(cert.step - 1).is_multiple_of(3) || cert.theta.len() != components {
        return false;
    }
    let digest = cert.theta.digest(&registry.engine());
    for (sigs, step) in [
        (&cert.prev_step_sigs, cert.step - 1),
        (&cert.this_step_sigs, cert.step),
    ] {
        let mut players = BTreeSet::new();
        for cs in sigs {
            if cs.credential.step != step
                || !verify_credential(registry, &cs.credential, params)
                || !registry.verify(
                    &cs.credential.player,
                    &cs.theta_sig,
                    &theta_sign_bytes(step, &digest),
                )
            {
                return false;
            }
            players.insert(cs.credential.player);
        }
        if (players.len() as u64) < threshold {
            return false;
        }
    }
    true
}

/// How a node resolves two conflicting valid messages from one sender.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EquivocationPolicy {
    /// Void the sender's entire contribution for the step (default: strictly
    /// reduces every count, so threshold arguments are preserved).
    #[default]
    VoidAll,
    /// Keep the first message, ignore later conflicting ones.
    KeepFirst,
}

/// Per-step message tally of one node.
///
/// Counts, per component, how many distinct valid senders advertised each
/// value, counting identical messages once and handling conflicting
/// messages per the configured policy.
#[derive(Clone, Debug)]
pub struct Tally {
    pub step: u32,
    components: usize,
    policy: EquivocationPolicy,
    /// Per component: value -> count of distinct contributing senders.
    value_counts: Vec<BTreeMap<Value, u64>>,
    /// Per component: [count of 0-votes, count of 1-votes].
    bit_counts: Vec<[u64; 2]>,
    /// First accepted message per sender: (content id, payload).
    senders: BTreeMap<PublicKey, (Digest, Payload)>,
    equivocators: BTreeSet<PublicKey>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum TallyError {
    StepMismatch,
}

impl Tally {
    pub fn new(step: u32, components: usize, policy: EquivocationPolicy) -> Self {
        Tally {
            step,
            components,
            policy,
            value_counts: vec![BTreeMap::new(); components],
            bit_counts: vec![[0, 0]; components],
            senders: BTreeMap::new(),
            equivocators: BTreeSet::new(),
        }
    }

    /// Adds a validated message. Resends are no-ops; a second, different
    /// validly signed message from the same sender triggers the
    /// equivocation policy.
    pub fn add(&mut self, msg: &StepMessage, id: Digest) -> Result<(), TallyError> {
        if msg.step != self.step {
            return Err(TallyError::StepMismatch);
        }
        let sender = msg.credential.player;
        if self.equivocators.contains(&sender) {
            return Ok(()); // contribution already voided
        }
        match self.senders.get(&sender) {
            Some((first_id, _)) if *first_id == id => Ok(()), // identical resend
            Some((_, first_payload)) => {
                match self.policy {
                    EquivocationPolicy::KeepFirst => {}
                    EquivocationPolicy::VoidAll => {
                        let first = first_payload.clone();
                        self.apply(&first, false);
                        self.senders.remove(&sender);
                        self.equivocators.insert(sender);
                    }
                }
                Ok(())
            }
            None => {
                self.apply(&msg.payload, true);
                self.senders.insert(sender, (id, msg.payload.clone()));
                Ok(())
            }
        }
    }

    fn apply(&mut self, payload: &Payload, add: bool) {
        match payload {
            Payload::Values(vl) => {
                for (c, v) in vl.0.iter().enumerate() {
                    let e = self.value_counts[c].entry(*v).or_insert(0);
                    if add {
                        *e += 1;
                    } else {
                        *e = e.saturating_sub(1);
                    }
                }
            }
            Payload::Bits(bl) => {
                for (c, &b) in bl.0.iter().enumerate() {
                    let slot = &mut self.bit_counts[c][b as usize];
                    if add {
                        *slot += 1;
                    } else {
                        *slot = slot.saturating_sub(1);
                    }
                }
            }
        }
    }

    /// Count of distinct valid senders advertising `v` in component `c`.
    pub fn value_count(&self, v: &Value, c: usize) -> u64 {
        self.value_counts[c].get(v).copied().unwrap_or(0)
    }

    /// Count of distinct valid senders advertising bit `b` in component `c`.
    pub fn bit_count(&self, b: bool, c: usize) -> u64 {
        self.bit_counts[c][b as usize]
    }

    /// Iterator over non-⊥ values seen in component `c` with their counts.
    pub fn non_bottom_values(&self, c: usize) -> impl Iterator<Item = (&Digest, u64)> {
        self.value_counts[c]
            .iter()
            .filter_map(|(v, &n)| v.as_ref().map(|d| (d, n)))
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Payload of the first accepted message from `pk`, if not voided.
    pub fn sender_payload(&self, pk: &PublicKey) -> Option<&Payload> {
        self.senders.get(pk).map(|(_, p)| p)
    }

    pub fn contributing_senders(&self) -> u64 {
        self.senders.len() as u64
    }

    pub fn equivocators(&self) -> &BTreeSet<PublicKey> {
        &self.equivocators
    }
}

/// Byte-cost accounting for broadcast messages, independent of the
/// functional encoding. Costs are exact rationals in units of 1/8 byte so
/// the fractional bit-list term never rounds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CostModel {
    pub credential_plus_sig_bytes: u64,
    pub digest_bytes: u64,
    pub base_bit_message_bytes: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            credential_plus_sig_bytes: 100,
            digest_bytes: 32,
            base_bit_message_bytes: 200,
        }
    }
}

impl CostModel {
    /// Cost of one message in eighths of a byte:
    /// steps 1-2 cost `32 m + 100` bytes, later steps `m/8 + 200` bytes.
    pub fn message_cost_eighths(&self, step: u32, components: u64) -> u64 {
        if step <= 2 {
            8 * (self.digest_bytes * components + self.credential_plus_sig_bytes)
        } else {
            components + 8 * self.base_bit_message_bytes
        }
    }

    /// Cost in bytes as an f64 (exact: eighths of a byte are representable).
    pub fn message_cost_bytes(&self, step: u32, components: u64) -> f64 {
        self.message_cost_eighths(step, components) as f64 / 8.0
    }
}

/// Convenience wrapper matching the operation vocabulary.
pub fn message_cost(model: &CostModel, msg: &StepMessage) -> f64 {
    model.message_cost_bytes(msg.step, msg.payload.components() as u64)
}


#[cfg(test)]
mod tests {
    use super::testutil::build_message;
    use super::*;
    use crate::crypto::{HashEngine, KeyPair};

    fn setup(m: usize) -> (SigRegistry, Vec<KeyPair>, SortitionParams) {
        let (reg, pairs) = SigRegistry::generate(HashEngine::Seeded(0xFEED), 3, 8);
        let params = SortitionParams::new(8, 8, b"r".to_vec());
        let _ = m;
        (reg, pairs, params)
    }

    fn value(reg: &SigRegistry, tag: &str) -> Digest {
        reg.engine().hash(tag.as_bytes())
    }

    #[test]
    fn honest_message_is_valid() {
        let (reg, pairs, params) = setup(2);
        let vl = ValueList(vec![Some(value(&reg, "a")), None]);
        let msg = build_message(&reg, &pairs[0], &params, 1, Payload::Values(vl), None);
        assert_eq!(validate_message(&reg, &msg, &params, 2), Ok(()));
    }

    #[test]
    fn payload_kind_must_match_step() {
        let (reg, pairs, params) = setup(2);
        let vl = ValueList(vec![Some(value(&reg, "a")), None]);
        let theta = ValueList::bottom(2);
        let msg = build_message(&reg, &pairs[0], &params, 4, Payload::Values(vl), Some(&theta));
        assert_eq!(
            validate_message(&reg, &msg, &params, 2),
            Err(InvalidReason::MalformedPayload)
        );
    }

    #[test]
    fn step_header_binds_credential() {
        let (reg, pairs, params) = setup(1);
        let vl = ValueList(vec![Some(value(&reg, "a"))]);
        let mut msg = build_message(&reg, &pairs[0], &params, 1, Payload::Values(vl), None);
        msg.step = 2;
        assert_eq!(
            validate_message(&reg, &msg, &params, 1),
            Err(InvalidReason::StepMismatch)
        );
    }

    #[test]
    fn wrong_signature_rejected() {
        let (reg, pairs, params) = setup(1);
        let vl = ValueList(vec![Some(value(&reg, "a"))]);
        let mut msg = build_message(&reg, &pairs[0], &params, 1, Payload::Values(vl), None);
        msg.payload = Payload::Values(ValueList(vec![Some(value(&reg, "b"))]));
        assert_eq!(
            validate_message(&reg, &msg, &params, 1),
            Err(InvalidReason::BadPayloadSignature)
        );
    }

    #[test]
    fn tally_counts_distinct_senders() {
        let (reg, pairs, params) = setup(1);
        let x = value(&reg, "x");
        let y = value(&reg, "y");
        let mut t = Tally::new(1, 1, EquivocationPolicy::VoidAll);
        for (i, v) in [(0, x), (1, x), (2, y)] {
            let msg = build_message(
                &reg,
                &pairs[i],
                &params,
                1,
                Payload::Values(ValueList(vec![Some(v)])),
                None,
            );
            t.add(&msg, msg.id(&reg.engine())).unwrap();
        }
        assert_eq!(t.value_count(&Some(x), 0), 2);
        assert_eq!(t.value_count(&Some(y), 0), 1);
    }

    #[test]
    fn identical_resend_counts_once() {
        let (reg, pairs, params) = setup(1);
        let x = value(&reg, "x");
        let msg = build_message(
            &reg,
            &pairs[0],
            &params,
            1,
            Payload::Values(ValueList(vec![Some(x)])),
            None,
        );
        let mut t = Tally::new(1, 1, EquivocationPolicy::VoidAll);
        let id = msg.id(&reg.engine());
        t.add(&msg, id).unwrap();
        t.add(&msg, id).unwrap();
        assert_eq!(t.value_count(&Some(x), 0), 1);
    }

    #[test]
    fn conflicting_messages_void_the_sender() {
        let (reg, pairs, params) = setup(1);
        let x = value(&reg, "x");
        let y = value(&reg, "y");
        let m1 = build_message(
            &reg,
            &pairs[0],
            &params,
            1,
            Payload::Values(ValueList(vec![Some(x)])),
            None,
        );
        let m2 = build_message(
            &reg,
            &pairs[0],
            &params,
            1,
            Payload::Values(ValueList(vec![Some(y)])),
            None,
        );
        let mut t = Tally::new(1, 1, EquivocationPolicy::VoidAll);
        t.add(&m1, m1.id(&reg.engine())).unwrap();
        t.add(&m2, m2.id(&reg.engine())).unwrap();
        assert_eq!(t.value_count(&Some(x), 0), 0);
        assert_eq!(t.value_count(&Some(y), 0), 0);
        assert!(t.equivocators().contains(&pairs[0].pk));
        // Late third variant stays voided.
        t.add(&m1, m1.id(&reg.engine())).unwrap();
        assert_eq!(t.value_count(&Some(x), 0), 0);
    }

    #[test]
    fn keep_first_policy_keeps_first() {
        let (reg, pairs, params) = setup(1);
        let x = value(&reg, "x");
        let y = value(&reg, "y");
        let m1 = build_message(
            &reg,
            &pairs[0],
            &params,
            1,
            Payload::Values(ValueList(vec![Some(x)])),
            None,
        );
        let m2 = build_message(
            &reg,
            &pairs[0],
            &params,
            1,
            Payload::Values(ValueList(vec![Some(y)])),
            None,
        );
        let mut t = Tally::new(1, 1, EquivocationPolicy::KeepFirst);
        t.add(&m1, m1.id(&reg.engine())).unwrap();
        t.add(&m2, m2.id(&reg.engine())).unwrap();
        assert_eq!(t.value_count(&Some(x), 0), 1);
        assert_eq!(t.value_count(&Some(y), 0), 0);
    }

    #[test]
    fn tally_rejects_step_mismatch() {
        let (reg, pairs, params) = setup(1);
        let msg = build_message(
            &reg,
            &pairs[0],
            &params,
            1,
            Payload::Values(ValueList(vec![None])),
            None,
        );
        let mut t = Tally::new(2, 1, EquivocationPolicy::VoidAll);
        assert_eq!(t.add(&msg, msg.id(&reg.engine())), Err(TallyError::StepMismatch));
    }

    #[test]
    fn cost_model_reproduces_weight_table() {
        let m = CostModel::default();
        // step-1 message, m = 1 -> 132 bytes
        assert_eq!(m.message_cost_bytes(1, 1), 132.0);
        // step-4 message, m = 8 -> 201 bytes
        assert_eq!(m.message_cost_bytes(4, 8), 201.0);
        // step-2 message, m = 0 -> 100 bytes
        assert_eq!(m.message_cost_bytes(2, 0), 100.0);
        // fractional case kept exact: step 5, m = 1 -> 200.125
        assert_eq!(m.message_cost_bytes(5, 1), 200.125);
        // arbitrary cells of the table for a few list lengths
        for ell in [1u64, 8, 100, 1000] {
            assert_eq!(m.message_cost_eighths(1, ell), 8 * (32 * ell + 100));
            assert_eq!(m.message_cost_eighths(2, ell), 8 * (32 * ell + 100));
            assert_eq!(m.message_cost_eighths(3, ell), ell + 1600);
            assert_eq!(m.message_cost_eighths(7, ell), ell + 1600);
        }
    }

    #[test]
    fn step_kind_mapping() {
        assert_eq!(StepKind::of(1), StepKind::ValueBroadcast);
        assert_eq!(StepKind::of(2), StepKind::ValueSupport);
        assert_eq!(StepKind::of(3), StepKind::GradeAndBits);
        assert_eq!(StepKind::of(4), StepKind::CoinFixedTo0);
        assert_eq!(StepKind::of(5), StepKind::CoinFixedTo1);
        assert_eq!(StepKind::of(6), StepKind::CoinGenuinelyFlipped);
        assert_eq!(StepKind::of(7), StepKind::CoinFixedTo0);
        assert_eq!(StepKind::of(10), StepKind::CoinFixedTo0);
        // finalization sources: 0-votes read from steps 3, 6, 9...; 1-votes
        // from steps 4, 7, 10...
        assert!(zero_finalization_source(3));
        assert!(zero_finalization_source(6));
        assert!(!zero_finalization_source(4));
        assert!(one_finalization_source(4));
        assert!(one_finalization_source(7));
        assert!(!one_finalization_source(5));
        assert!(!one_finalization_source(1));
    }
}
