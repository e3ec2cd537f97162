//! The per-user protocol state machine.
//!
//! A node is driven by two kinds of events: message arrivals and its own
//! step boundaries `β_i(s) = α_i + t(s)`. All decisions are pure functions
//! of the delivered message sequence, so replaying a delivery trace
//! reproduces node states byte for byte.
//!
//! Step structure: two value-list steps seed the candidate values, step 3
//! grades them and switches to bit lists, and from step 4 the loop
//! fixed-to-0 / fixed-to-1 / genuinely-flipped runs per component until a
//! supermajority signs the same candidate output digest in two consecutive
//! qualifying steps, at which point any observer can assemble a
//! transferable certificate.

use crate::crypto::{Digest, HashEngine, KeyPair, PublicKey, Signature, SigRegistry};
use crate::protocol::{
    one_finalization_source, payload_sign_bytes, theta_sign_bytes, zero_finalization_source,
    BitList, CertSig, Certificate, EquivocationPolicy, Payload, StepKind, StepMessage, Tally,
    Value, ValueList,
};
use crate::sortition::{make_credential, Credential, SortitionParams};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Durations are simulated nanoseconds.
pub type Time = u64;

/// Wait times per step: `t(1) = Ω`, `t(2) = t(1) + Λ + λ`,
/// `t(3) = t(2) + λ + Λ`, then `t(s) = t(s-1) + 2λ`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StepSchedule {
    pub omega: Time,
    pub big_lambda: Time,
    pub lambda: Time,
}

impl StepSchedule {
    pub fn step_deadline(&self, s: u32) -> Time {
        assert!(s >= 1, "step numbers start at 1");
        match s {
            1 => self.omega,
            2 => self.omega + self.big_lambda + self.lambda,
            3 => self.omega + 2 * self.big_lambda + 2 * self.lambda,
            s => {
                self.omega + 2 * self.big_lambda + 2 * self.lambda
                    + 2 * self.lambda * (s as u64 - 3)
            }
        }
    }
}

/// Shared public context: parameters every user knows.
#[derive(Clone)]
pub struct ProtocolCtx {
    pub registry: SigRegistry,
    pub params: SortitionParams,
    pub components: usize,
    /// Supermajority threshold `⌊2n/3⌋ + 1`.
    pub threshold: u64,
    pub schedule: StepSchedule,
    pub policy: EquivocationPolicy,
}

impl ProtocolCtx {
    pub fn engine(&self) -> HashEngine {
        self.registry.engine()
    }
}

/// Runtime checks that should never fire while the committee conditions
/// hold; any occurrence flags the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolViolation {
    /// Two distinct values both reached the supermajority threshold in one
    /// (step, component) tally.
    DoubleSupermajority,
    /// A certified digest could not be matched to stored step-2 values.
    ThetaReconstructionFailed,
}

/// Result of handling one arrival.
#[derive(Debug, Default)]
pub struct ReceiveOutcome {
    pub newly_halted: bool,
    pub violations: Vec<ProtocolViolation>,
}

/// Result of executing one step boundary.
#[derive(Debug, Default)]
pub struct BoundaryOutcome {
    pub emission: Option<StepMessage>,
    pub newly_halted: bool,
    /// Components finalized at this boundary, with their bit.
    pub newly_finalized: Vec<(usize, bool)>,
    /// Components resolved by a coin flip at this boundary.
    pub coin_flips: Vec<(usize, bool)>,
    /// Hashed credential of the selected coin flipper, when any flip happened.
    pub coin_flipper: Option<PublicKey>,
    pub violations: Vec<ProtocolViolation>,
}

/// Per-user protocol memory.
pub struct NodeState {
    pub index: u32,
    pub keys: KeyPair,
    /// Clock offset α in `[0, λ]`.
    pub alpha: Time,
    /// Private observed list O, updated at step 3.
    pub observation: ValueList,
    /// Step-3 confidence grades, one of 0, 1, 2 per component.
    pub grades: Vec<u8>,
    /// Current bit list (meaningful from step 3 on).
    pub bits: BitList,
    /// Finalization flags; monotone, and a finalized bit never changes.
    pub finalized: BitList,
    pub halted: bool,
    pub halt_time: Option<Time>,
    pub certificate: Option<Certificate>,
    /// One tally per step for which messages were received.
    tallies: BTreeMap<u32, Tally>,
    /// Non-⊥ values seen per component in step-2 messages; the search space
    /// for reconstructing a certified list from its digest.
    step2_values: Vec<BTreeSet<Digest>>,
    /// Per (step, Θ digest): signer -> digest signature + credential.
    theta_index: BTreeMap<(u32, Digest), BTreeMap<PublicKey, (Signature, Credential)>>,
    /// Per step: minimal received hashed credential (digest, pk, credential).
    min_credential: BTreeMap<u32, (Digest, PublicKey, Credential)>,
}

/// Candidate output list implied by a bit list and an observation list:
/// component c is ⊥ where the bit is 1, the observed value where it is 0.
pub fn theta_from_bits(bits: &BitList, observation: &ValueList) -> ValueList {
    ValueList(
        bits.0
            .iter()
            .zip(&observation.0)
            .map(|(&b, o)| if b { None } else { *o })
            .collect(),
    )
}

/// The c-th bit of the shared coin: blocks `k_0 = H(min)`,
/// `k_j = H(k_0 ‖ j)` extend the digest when there are more components
/// than digest bits.
pub fn coin_bit(engine: &HashEngine, min_credential_hash: &Digest, c: usize) -> bool {
    let k0 = engine.hash(min_credential_hash.as_bytes());
    let block = c / crate::crypto::DIGEST_BITS;
    let within = c % crate::crypto::DIGEST_BITS;
    if block == 0 {
        k0.bit(within)
    } else {
        engine
            .hash_parts(&[k0.as_bytes(), &(block as u32).to_le_bytes()])
            .bit(within)
    }
}

impl NodeState {
    pub fn new(index: u32, keys: KeyPair, alpha: Time, observation: ValueList, ctx: &ProtocolCtx) -> Self {
        let m = ctx.components;
        assert_eq!(observation.len(), m);
        NodeState {
            index,
            keys,
            alpha,
            observation,
            grades: vec![0; m],
            bits: BitList(vec![true; m]),
            finalized: BitList::zeros(m),
            halted: false,
            halt_time: None,
            certificate: None,
            tallies: BTreeMap::new(),
            step2_values: vec![BTreeSet::new(); m],
            theta_index: BTreeMap::new(),
            min_credential: BTreeMap::new(),
        }
    }

    /// Local end time of step `s`.
    pub fn beta(&self, ctx: &ProtocolCtx, s: u32) -> Time {
        self.alpha + ctx.schedule.step_deadline(s)
    }

    pub fn tally(&self, step: u32) -> Option<&Tally> {
        self.tallies.get(&step)
    }

    /// Senders this node voided for equivocation, across all step tallies.
    pub fn voided_senders(&self) -> BTreeSet<PublicKey> {
        self.tallies
            .values()
            .flat_map(|t| t.equivocators().iter().copied())
            .collect()
    }

    pub fn output(&self) -> Option<&ValueList> {
        self.certificate.as_ref().map(|c| &c.theta)
    }

    fn tally_mut(&mut self, step: u32, ctx: &ProtocolCtx) -> &mut Tally {
        let m = ctx.components;
        let policy = ctx.policy;
        self.tallies
            .entry(step)
            .or_insert_with(|| Tally::new(step, m, policy))
    }

    /// Ingests a message that already passed `validate_message`.
    ///
    /// Updates the step tally, the step-2 value store, the Θ-signature index
    /// and the per-step minimal credential, then probes the ending condition
    /// (the check runs on every arrival, not only at boundaries).
    pub fn receive_message(
        &mut self,
        ctx: &ProtocolCtx,
        now: Time,
        msg: &StepMessage,
        id: Digest,
    ) -> ReceiveOutcome {
        let mut out = ReceiveOutcome::default();
        if self.halted {
            return out;
        }
        self.tally_mut(msg.step, ctx).add(msg, id).expect("step matches tally");
        if msg.step == 2 {
            if let Payload::Values(vl) = &msg.payload {
                for (c, v) in vl.0.iter().enumerate() {
                    if let Some(d) = v {
                        self.step2_values[c].insert(*d);
                    }
                }
            }
        }
        let engine = ctx.engine();
        let cred_hash = msg.credential.lottery_hash(&engine);
        let entry = self.min_credential.entry(msg.step);
        let candidate = (cred_hash, msg.credential.player, msg.credential.clone());
        entry
            .and_modify(|cur| {
                // big-endian byte order; ties broken by smaller pk
                if (candidate.0.as_bytes(), &candidate.1) < (cur.0.as_bytes(), &cur.1) {
                    *cur = candidate.clone();
                }
            })
            .or_insert(candidate);
        if let Some((digest, sig)) = &msg.theta_sig {
            self.theta_index
                .entry((msg.step, *digest))
                .or_default()
                .insert(msg.credential.player, (*sig, msg.credential.clone()));
            // Only the pair containing the arrived (step, θ) can newly satisfy
            // the ending condition.
            if let Some((s_prime, theta)) = self.ending_pair_for(ctx, msg.step, digest) {
                match self.build_certificate(ctx, now, s_prime, &theta) {
                    Ok(()) => out.newly_halted = true,
                    Err(v) => out.violations.push(v),
                }
            }
        }
        out
    }

    /// Checks whether (step, θ) completes a qualifying pair
    /// `(s'-1, s')` with `s' - 1 ≡ 0 (mod 3)` at the threshold.
    fn ending_pair_for(&self, ctx: &ProtocolCtx, step: u32, theta: &Digest) -> Option<(u32, Digest)> {
        let t_h = ctx.threshold;
        let count = |s: u32, th: &Digest| {
            self.theta_index
                .get(&(s, *th))
                .map_or(0, |m| m.len() as u64)
        };
        if step >= 3 && step.is_multiple_of(3) {
            // arrived at the earlier position of a pair (step, step + 1)
            if count(step, theta) >= t_h && count(step + 1, theta) >= t_h {
                return Some((step + 1, *theta));
            }
        }
        if step >= 4 && step % 3 == 1
            && count(step - 1, theta) >= t_h && count(step, theta) >= t_h {
                return Some((step, *theta));
            }
        None
    }

    /// Full scan of the ending condition over all stored Θ digests.
    pub fn check_ending(&self, ctx: &ProtocolCtx) -> Option<(u32, Digest)> {
        for ((step, theta), signers) in &self.theta_index {
            if signers.len() as u64 >= ctx.threshold {
                if let Some(hit) = self.ending_pair_for(ctx, *step, theta) {
                    return Some(hit);
                }
            }
        }
        None
    }

    /// Recovers the value list whose digest is `theta` from stored step-2
    /// values, guided by the bit list of any signer of `theta`.
    fn reconstruct_theta(&self, ctx: &ProtocolCtx, s_prime: u32, theta: &Digest) -> Option<ValueList> {
        let engine = ctx.engine();
        // Fast path: our own current candidate list.
        let own = theta_from_bits(&self.bits, &self.observation);
        if own.digest(&engine) == *theta {
            return Some(own);
        }
        // Take the bit list of a signer of θ whose payload we still hold.
        let mut guide: Option<BitList> = None;
        for step in [s_prime - 1, s_prime] {
            if let (Some(signers), Some(tally)) =
                (self.theta_index.get(&(step, *theta)), self.tallies.get(&step))
            {
                for pk in signers.keys() {
                    if let Some(Payload::Bits(b)) = tally.sender_payload(pk) {
                        guide = Some(b.clone());
                        break;
                    }
                }
            }
            if guide.is_some() {
                break;
            }
        }
        let guide = guide?;
        // Depth-first search over per-component candidates (0-bits pick a
        // stored step-2 value, 1-bits are ⊥), capped to stay bounded under
        // adversarial value soup.
        let m = ctx.components;
        let candidates: Vec<Vec<Value>> = (0..m)
            .map(|c| {
                if guide.0[c] {
                    vec![None]
                } else {
                    self.step2_values[c].iter().map(|d| Some(*d)).collect()
                }
            })
            .collect();
        if candidates.iter().any(|c| c.is_empty()) {
            return None;
        }
        let mut attempts = 0usize;
        let mut current = ValueList(candidates.iter().map(|c| c[0]).collect());
        fn dfs(
            candidates: &[Vec<Value>],
            current: &mut ValueList,
            depth: usize,
            engine: &HashEngine,
            theta: &Digest,
            attempts: &mut usize,
        ) -> bool {
            if depth == candidates.len() {
                *attempts += 1;
                return *attempts <= 4096 && current.digest(engine) == *theta;
            }
            for v in &candidates[depth] {
                current.0[depth] = *v;
                if dfs(candidates, current, depth + 1, engine, theta, attempts) {
                    return true;
                }
                if *attempts > 4096 {
                    return false;
                }
            }
            false
        }
        dfs(&candidates, &mut current, 0, &engine, theta, &mut attempts).then_some(current)
    }

    fn build_certificate(
        &mut self,
        ctx: &ProtocolCtx,
        now: Time,
        s_prime: u32,
        theta: &Digest,
    ) -> Result<(), ProtocolViolation> {
        let theta_list = self
            .reconstruct_theta(ctx, s_prime, theta)
            .ok_or(ProtocolViolation::ThetaReconstructionFailed)?;
        let collect = |signers: &BTreeMap<PublicKey, (Signature, Credential)>| {
            signers
                .values()
                .map(|(sig, cred)| CertSig {
                    credential: cred.clone(),
                    theta_sig: *sig,
                })
                .collect::<Vec<_>>()
        };
        let prev = collect(&self.theta_index[&(s_prime - 1, *theta)]);
        let this = collect(&self.theta_index[&(s_prime, *theta)]);
        let cert = Certificate {
            theta: theta_list,
            step: s_prime,
            prev_step_sigs: prev,
            this_step_sigs: this,
        };
        self.certificate = Some(cert);
        self.halted = true;
        self.halt_time = Some(now);
        Ok(())
    }

    /// Handles a certificate arriving from the network: adopt and halt when
    /// valid, ignore otherwise. Idempotent.
    pub fn receive_certificate(&mut self, ctx: &ProtocolCtx, now: Time, cert: &Certificate) -> bool {
        if self.halted {
            return false;
        }
        if !crate::protocol::verify_certificate(
            &ctx.registry,
            cert,
            &ctx.params,
            ctx.components,
            ctx.threshold,
        ) {
            return false;
        }
        self.certificate = Some(cert.clone());
        self.halted = true;
        self.halt_time = Some(now);
        true
    }

    fn sign_message(&self, ctx: &ProtocolCtx, step: u32, payload: Payload, with_theta: bool) -> Option<StepMessage> {
        let credential = make_credential(&ctx.registry, &self.keys, &ctx.params, step)?;
        let payload_sig = ctx
            .registry
            .sign(&self.keys.sk, &payload_sign_bytes(step, &payload));
        let theta_sig = with_theta.then(|| {
            let theta = theta_from_bits(&self.bits, &self.observation);
            let d = theta.digest(&ctx.engine());
            (d, ctx.registry.sign(&self.keys.sk, &theta_sign_bytes(step, &d)))
        });
        Some(StepMessage {
            step,
            credential,
            payload,
            payload_sig,
            theta_sig,
        })
    }

    /// Step-1 emission: the observed list, verbatim. `None` for non-players.
    pub fn emit_step1(&self, ctx: &ProtocolCtx) -> Option<StepMessage> {
        self.sign_message(ctx, 1, Payload::Values(self.observation.clone()), false)
    }

    /// Step-2 emission: component c carries the value with a supermajority
    /// in the step-1 tally, ⊥ otherwise.
    pub fn emit_step2(
        &self,
        ctx: &ProtocolCtx,
        tally1: &Tally,
    ) -> Result<Option<StepMessage>, ProtocolViolation> {
        let mut comps = Vec::with_capacity(ctx.components);
        for c in 0..ctx.components {
            let winners: Vec<&Digest> = tally1
                .non_bottom_values(c)
                .filter(|(_, n)| *n >= ctx.threshold)
                .map(|(d, _)| d)
                .collect();
            if winners.len() > 1 {
                return Err(ProtocolViolation::DoubleSupermajority);
            }
            comps.push(winners.first().map(|d| **d));
        }
        Ok(self.sign_message(ctx, 2, Payload::Values(ValueList(comps)), false))
    }

    /// Step-3 observation update: grade 2 on a supermajority for a value,
    /// grade 1 on a half-supermajority (`2·count >= t_H`, integer exact),
    /// grade 0 otherwise. Runs for every user, player or not.
    ///
    /// Two distinct values above the half threshold at one node can only be
    /// adversarial; the component degrades to (⊥, 0) unless the pick-first
    /// policy is selected.
    pub fn grade_and_update(
        &mut self,
        ctx: &ProtocolCtx,
        tally2: &Tally,
        pick_first_on_grade1_collision: bool,
    ) -> Result<(), ProtocolViolation> {
        let t_h = ctx.threshold;
        let mut violation = None;
        for c in 0..ctx.components {
            let mut full: Vec<(&Digest, u64)> = Vec::new();
            let mut half: Vec<(&Digest, u64)> = Vec::new();
            for (d, n) in tally2.non_bottom_values(c) {
                if n >= t_h {
                    full.push((d, n));
                } else if 2 * n >= t_h {
                    half.push((d, n));
                }
            }
            if full.len() > 1 {
                violation = Some(ProtocolViolation::DoubleSupermajority);
            }
            let (value, grade) = if let Some((d, _)) = full.first() {
                (Some(**d), 2u8)
            } else if half.len() == 1 {
                (Some(*half[0].0), 1)
            } else if half.len() > 1 && pick_first_on_grade1_collision {
                // deterministic pick: highest count, then smallest digest
                let best = half
                    .iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.as_bytes().cmp(a.0.as_bytes())))
                    .unwrap();
                (Some(*best.0), 1)
            } else {
                (None, 0)
            };
            self.observation.0[c] = value;
            self.grades[c] = grade;
            self.bits.0[c] = grade != 2;
        }
        match violation {
            Some(v) => Err(v),
            None => Ok(()),
        }
    }

    /// Step-3 emission: bits (0 where the grade is 2) plus the signed digest
    /// of the implied candidate list.
    pub fn emit_step3(&self, ctx: &ProtocolCtx) -> Option<StepMessage> {
        self.sign_message(ctx, 3, Payload::Bits(self.bits.clone()), true)
    }

    /// Retroactive finalization sweep over every past qualifying step.
    ///
    /// 0-finalization reads 0-votes of steps `σ ≡ 0 (mod 3)`, σ >= 3;
    /// 1-finalization reads 1-votes of steps `σ ≡ 1 (mod 3)`, σ >= 4; in
    /// both cases σ < current step. Once set, a component is frozen.
    pub fn finalization_checks(&mut self, ctx: &ProtocolCtx, current_step: u32) -> Vec<(usize, bool)> {
        let t_h = ctx.threshold;
        let mut newly = Vec::new();
        for c in 0..ctx.components {
            if self.finalized.0[c] {
                continue;
            }
            'source: for sigma in 3..current_step {
                let bit = if zero_finalization_source(sigma) {
                    false
                } else if one_finalization_source(sigma) {
                    true
                } else {
                    continue;
                };
                if let Some(t) = self.tallies.get(&sigma) {
                    if t.bit_count(bit, c) >= t_h {
                        self.bits.0[c] = bit;
                        self.finalized.0[c] = true;
                        newly.push((c, bit));
                        break 'source;
                    }
                }
            }
        }
        newly
    }

    /// Completes the bit list for a coin step and emits the message.
    /// Steps `s >= 4`; non-players return `None` without completing.
    pub fn emit_coin_step(&mut self, ctx: &ProtocolCtx, s: u32) -> (Option<StepMessage>, Vec<(usize, bool)>, Option<PublicKey>) {
        assert!(s >= 4);
        let kind = StepKind::of(s);
        let t_h = ctx.threshold;
        // Selection check first: non-players leave their bits untouched.
        if make_credential(&ctx.registry, &self.keys, &ctx.params, s).is_none() {
            return (None, Vec::new(), None);
        }
        let sigma = s - 1;
        let zero = |c: usize, me: &Self| me.tallies.get(&sigma).map_or(0, |t| t.bit_count(false, c));
        let one = |c: usize, me: &Self| me.tallies.get(&sigma).map_or(0, |t| t.bit_count(true, c));
        let mut flips = Vec::new();
        let mut flipper = None;
        for c in 0..ctx.components {
            if self.finalized.0[c] {
                continue;
            }
            let bit = match kind {
                StepKind::CoinFixedTo0 => one(c, self) >= t_h,
                StepKind::CoinFixedTo1 => zero(c, self) < t_h,
                StepKind::CoinGenuinelyFlipped => {
                    if zero(c, self) >= t_h {
                        false
                    } else if one(c, self) >= t_h {
                        true
                    } else {
                        let (hash, pk, _) = self
                            .min_credential
                            .get(&sigma)
                            .expect("a coin flip requires at least one received credential");
                        let b = coin_bit(&ctx.engine(), hash, c);
                        flips.push((c, b));
                        flipper = Some(*pk);
                        b
                    }
                }
                _ => unreachable!("emit_coin_step called for step kind {kind:?}"),
            };
            self.bits.0[c] = bit;
        }
        let msg = self.sign_message(ctx, s, Payload::Bits(self.bits.clone()), true);
        (msg, flips, flipper)
    }

    /// Executes the step boundary `β_i(s)`: ending condition, finalization
    /// sweeps, then the step emission when selected. Returns everything the
    /// network layer needs to observe.
    pub fn boundary(&mut self, ctx: &ProtocolCtx, now: Time, s: u32) -> BoundaryOutcome {
        let mut out = BoundaryOutcome::default();
        if self.halted {
            return out;
        }
        match s {
            1 => {
                out.emission = self.emit_step1(ctx);
            }
            2 => {
                let tally1 = self.tallies.remove(&1);
                match &tally1 {
                    Some(t) => match self.emit_step2(ctx, t) {
                        Ok(m) => out.emission = m,
                        Err(v) => out.violations.push(v),
                    },
                    None => {
                        let empty = Tally::new(1, ctx.components, ctx.policy);
                        match self.emit_step2(ctx, &empty) {
                            Ok(m) => out.emission = m,
                            Err(v) => out.violations.push(v),
                        }
                    }
                }
                if let Some(t) = tally1 {
                    self.tallies.insert(1, t);
                }
            }
            3 => {
                let tally2 = self.tallies.remove(&2);
                let empty = Tally::new(2, ctx.components, ctx.policy);
                let t = tally2.as_ref().unwrap_or(&empty);
                if let Err(v) = self.grade_and_update(ctx, t, false) {
                    out.violations.push(v);
                }
                if let Some(t) = tally2 {
                    self.tallies.insert(2, t);
                }
                out.emission = self.emit_step3(ctx);
            }
            s => {
                // Ending condition first: a certificate ends participation.
                if let Some((s_prime, theta)) = self.check_ending(ctx) {
                    match self.build_certificate(ctx, now, s_prime, &theta) {
                        Ok(()) => {
                            out.newly_halted = true;
                            return out;
                        }
                        Err(v) => out.violations.push(v),
                    }
                }
                out.newly_finalized = self.finalization_checks(ctx, s);
                let (emission, flips, flipper) = self.emit_coin_step(ctx, s);
                out.emission = emission;
                out.coin_flips = flips;
                out.coin_flipper = flipper;
            }
        }
        out
    }

    /// Externally visible state: finalization flags, bits, observation,
    /// halting status and the certified output. Canonical bytes, used for
    /// replay comparison.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        crate::encoding::put_u32(&mut out, self.index);
        crate::encoding::put_u64(&mut out, self.alpha);
        out.extend_from_slice(&crate::encoding::encode_value_list(&self.observation));
        out.extend_from_slice(&self.grades);
        out.extend_from_slice(&crate::encoding::encode_bit_list(&self.bits));
        out.extend_from_slice(&crate::encoding::encode_bit_list(&self.finalized));
        out.push(self.halted as u8);
        crate::encoding::put_u64(&mut out, self.halt_time.unwrap_or(u64::MAX));
        if let Some(c) = &self.certificate {
            out.extend_from_slice(&crate::encoding::encode_certificate(c));
        }
        out
    }
}
