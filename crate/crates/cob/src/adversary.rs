//! Byzantine strategies and observation scenarios.
//!
//! A strategy controls the malicious users' observations, emissions and
//! per-recipient delivery times. It sees every message at emission time
//! (the adversary receives everything no later than the honest users) but
//! holds only the malicious key pairs, so it can never forge an honest
//! signature. All strategies are deterministic given the run seed.
//!
//! The interesting strategies exploit the two levers the network model
//! leaves open: *which* honest users receive a malicious message before
//! their own step boundary (selective just-in-time delivery; the re-gossip
//! closure only guarantees everyone else gets it one bound later), and
//! *when* withheld threshold-completing votes are finally released.

use crate::crypto::{Digest, HashEngine, KeyPair};
use crate::node::{ProtocolCtx, Time};
use crate::protocol::{
    payload_sign_bytes, theta_sign_bytes, BitList, Payload, StepKind, StepMessage, Value,
    ValueList,
};
use crate::sortition::make_credential;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-component observation rule for honest users.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ComponentRule {
    /// Every honest user observes the same value (`None` = ⊥).
    Unanimous { value: Option<String> },
    /// The first `round(fraction · honest)` honest users (by index) observe
    /// `first`, the rest observe `second`.
    Split {
        first: Option<String>,
        second: Option<String>,
        fraction: f64,
    },
}

fn tag_value(engine: &HashEngine, tag: &Option<String>) -> Value {
    tag.as_ref().map(|t| engine.hash_parts(&[b"obs", t.as_bytes()]))
}

/// Deterministic per-node observation assignments plus the induced
/// ambiguity count ℓ (components where two honest users differ).
pub fn make_scenario(
    engine: &HashEngine,
    rules: &[ComponentRule],
    honest: u64,
    total: u64,
) -> (Vec<ValueList>, u64) {
    let mut ambiguous = 0u64;
    let mut per_component: Vec<(Value, Value, u64)> = Vec::with_capacity(rules.len());
    for rule in rules {
        match rule {
            ComponentRule::Unanimous { value } => {
                let v = tag_value(engine, value);
                per_component.push((v, v, honest));
            }
            ComponentRule::Split {
                first,
                second,
                fraction,
            } => {
                let a = tag_value(engine, first);
                let b = tag_value(engine, second);
                let count = (fraction * honest as f64).round() as u64;
                if a != b && count > 0 && count < honest {
                    ambiguous += 1;
                }
                per_component.push((a, b, count));
            }
        }
    }
    let lists = (0..total)
        .map(|i| {
            ValueList(
                per_component
                    .iter()
                    .map(|(a, b, count)| if i < *count { *a } else { *b })
                    .collect(),
            )
        })
        .collect();
    (lists, ambiguous)
}

/// Which strategy a run uses.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum StrategyConfig {
    /// Protocol-faithful behaviour.
    Honest,
    /// Honest through `after_step`, silent afterwards; `after_step = 0`
    /// never sends.
    Crash { after_step: u32 },
    /// Sends conflicting payload variants to different halves of the
    /// network; exercises the tally voiding path.
    Equivocator,
    /// Reports ⊥ in the targeted components during the value steps and
    /// votes 1 for them afterwards.
    Censor { components: Vec<usize> },
    /// Maintains a threshold deadlock on split components via selective
    /// just-in-time deliveries, and can privately complete a finalization
    /// threshold and release the withheld votes later.
    FinalizationDelayer {
        #[serde(default)]
        mode: DelayerMode,
    },
    /// The deadlock engine plus selective revelation of a malicious minimal
    /// credential to part of the coin flippers.
    CoinGrinder,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayerMode {
    /// Keep the deadlock alive until the shared coin resolves it.
    #[default]
    MaxDelay,
    /// Build a private finalization threshold for `bit` at the first
    /// qualifying step, then apply the release policy.
    PrivateFinalize { bit: bool, release: Release },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Release {
    /// Release the withheld votes right away (honest users finalize in the
    /// same step window).
    Immediate,
    /// Never release; honest users converge through their own messages
    /// three steps later.
    Never,
    /// Release at the boundaries of the given step.
    AtStep { step: u32 },
}

/// How a strategy wants a message delivered.
#[derive(Clone, Debug)]
pub enum DeliveryPlan {
    /// Honest-style broadcast from the given emission time.
    Broadcast,
    /// Exact per-recipient delivery times (honest recipients). Everyone
    /// else sees it only through re-gossip closure.
    Targeted(Vec<(u32, Time)>),
}

#[derive(Clone, Debug)]
pub struct PlannedMessage {
    pub msg: StepMessage,
    pub plan: DeliveryPlan,
}

/// What the run records about the adversary for trace classification.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AdversaryDiagnostics {
    /// First step at which the adversary could privately finalize.
    pub s_hat: Option<u32>,
    /// The privately finalizable bit.
    pub private_bit: Option<bool>,
    /// Whether the withheld votes were ever released.
    pub released: bool,
}

/// Read-only view handed to strategies: public context, per-node clock
/// offsets, and the malicious key pairs only.
pub struct StratEnv<'a> {
    pub ctx: &'a ProtocolCtx,
    pub total: u32,
    pub honest: u32,
    pub alphas: &'a [Time],
    pub malicious_keys: &'a BTreeMap<u32, KeyPair>,
}

impl<'a> StratEnv<'a> {
    pub fn beta(&self, node: u32, step: u32) -> Time {
        self.alphas[node as usize] + self.ctx.schedule.step_deadline(step)
    }

    pub fn is_honest(&self, node: u32) -> bool {
        node < self.honest
    }

    /// Honest nodes sorted by clock offset, latest boundary first. A message
    /// delivered to the top of this order just before the recipient's
    /// boundary leaks (via closure) to lower entries only after *their*
    /// boundaries already passed.
    pub fn honest_by_alpha_desc(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = (0..self.honest).collect();
        ids.sort_by(|a, b| {
            self.alphas[*b as usize]
                .cmp(&self.alphas[*a as usize])
                .then(a.cmp(b))
        });
        ids
    }
}

pub trait Strategy: Send {
    /// Observation override for a malicious node.
    fn observe(&mut self, _node: u32, scenario: &ValueList) -> ValueList {
        scenario.clone()
    }

    /// Clock offset for a malicious node (adversary-chosen in `[0, λ]`).
    fn alpha(&mut self, _node: u32, _lambda: Time, _rng: &mut ChaCha12Rng) -> Time {
        0
    }

    /// Omniscient tap: every emitted message, at emission time.
    fn message_emitted(&mut self, _env: &StratEnv, _origin: u32, _msg: &StepMessage, _time: Time) {}

    /// Emission control at a malicious node's own step boundary. `default`
    /// is the message honest logic would send.
    fn on_emit(
        &mut self,
        env: &StratEnv,
        node: u32,
        step: u32,
        default: Option<StepMessage>,
        rng: &mut ChaCha12Rng,
    ) -> Vec<PlannedMessage>;

    /// Planning hook fired once per step, after every honest emission of
    /// that step is out.
    fn on_wake(&mut self, _env: &StratEnv, _step: u32, _rng: &mut ChaCha12Rng) -> Vec<PlannedMessage> {
        Vec::new()
    }

    fn diagnostics(&self) -> AdversaryDiagnostics {
        AdversaryDiagnostics::default()
    }
}

pub fn build_strategy(config: &StrategyConfig) -> Box<dyn Strategy> {
    match config {
        StrategyConfig::Honest => Box::new(HonestStrategy),
        StrategyConfig::Crash { after_step } => Box::new(CrashStrategy {
            after_step: *after_step,
        }),
        StrategyConfig::Equivocator => Box::new(Equivocator),
        StrategyConfig::Censor { components } => Box::new(Censor {
            targets: components.clone(),
        }),
        StrategyConfig::FinalizationDelayer { mode } => Box::new(Delayer::new(mode.clone(), false)),
        StrategyConfig::CoinGrinder => Box::new(Delayer::new(DelayerMode::MaxDelay, true)),
    }
}

struct HonestStrategy;

impl Strategy for HonestStrategy {
    fn alpha(&mut self, _node: u32, lambda: Time, rng: &mut ChaCha12Rng) -> Time {
        if lambda == 0 {
            0
        } else {
            rng.gen_range(0..=lambda)
        }
    }

    fn on_emit(
        &mut self,
        _env: &StratEnv,
        _node: u32,
        _step: u32,
        default: Option<StepMessage>,
        _rng: &mut ChaCha12Rng,
    ) -> Vec<PlannedMessage> {
        default
            .map(|msg| PlannedMessage {
                msg,
                plan: DeliveryPlan::Broadcast,
            })
            .into_iter()
            .collect()
    }
}

struct CrashStrategy {
    after_step: u32,
}

impl Strategy for CrashStrategy {
    fn alpha(&mut self, _node: u32, lambda: Time, rng: &mut ChaCha12Rng) -> Time {
        if lambda == 0 {
            0
        } else {
            rng.gen_range(0..=lambda)
        }
    }

    fn on_emit(
        &mut self,
        _env: &StratEnv,
        _node: u32,
        step: u32,
        default: Option<StepMessage>,
        _rng: &mut ChaCha12Rng,
    ) -> Vec<PlannedMessage> {
        if step > self.after_step {
            return Vec::new();
        }
        default
            .map(|msg| PlannedMessage {
                msg,
                plan: DeliveryPlan::Broadcast,
            })
            .into_iter()
            .collect()
    }
}

/// Re-signs a message with a modified payload, keeping the credential.
fn resign(
    env: &StratEnv,
    node: u32,
    step: u32,
    payload: Payload,
    theta: Option<&ValueList>,
) -> Option<StepMessage> {
    let keys = env.malicious_keys.get(&node)?;
    let credential = make_credential(&env.ctx.registry, keys, &env.ctx.params, step)?;
    let payload_sig = env
        .ctx
        .registry
        .sign(&keys.sk, &payload_sign_bytes(step, &payload));
    let theta_sig = theta.map(|t| {
        let d = t.digest(&env.ctx.engine());
        (d, env.ctx.registry.sign(&keys.sk, &theta_sign_bytes(step, &d)))
    });
    Some(StepMessage {
        step,
        credential,
        payload,
        payload_sig,
        theta_sig,
    })
}

/// A throwaway candidate list whose digest never matches anything honest
/// nodes assemble; keeps adversarial digest signatures out of certificates.
fn junk_theta(env: &StratEnv, node: u32, step: u32) -> ValueList {
    let d = env
        .ctx
        .engine()
        .hash_parts(&[b"junk", &node.to_le_bytes(), &step.to_le_bytes()]);
    ValueList(vec![Some(d); env.ctx.components])
}

struct Equivocator;

impl Strategy for Equivocator {
    fn alpha(&mut self, _node: u32, lambda: Time, rng: &mut ChaCha12Rng) -> Time {
        if lambda == 0 {
            0
        } else {
            rng.gen_range(0..=lambda)
        }
    }

    fn on_emit(
        &mut self,
        env: &StratEnv,
        node: u32,
        step: u32,
        default: Option<StepMessage>,
        rng: &mut ChaCha12Rng,
    ) -> Vec<PlannedMessage> {
        let Some(base) = default else { return Vec::new() };
        // Variant with every component perturbed.
        let alt_payload = match &base.payload {
            Payload::Values(vl) => Payload::Values(ValueList(
                vl.0.iter()
                    .enumerate()
                    .map(|(c, v)| match v {
                        Some(d) => Some(env.ctx.engine().hash_parts(&[b"equiv", d.as_bytes()])),
                        None => Some(
                            env.ctx
                                .engine()
                                .hash_parts(&[b"equiv-bot", &(c as u32).to_le_bytes()]),
                        ),
                    })
                    .collect(),
            )),
            Payload::Bits(bl) => Payload::Bits(BitList(bl.0.iter().map(|b| !b).collect())),
        };
        let theta = (step >= 3).then(|| junk_theta(env, node, step));
        let Some(alt) = resign(env, node, step, alt_payload, theta.as_ref()) else {
            return Vec::new();
        };
        // Partition the honest nodes: even indices get the original, odd the
        // variant, both with honest-style delays; closure spreads both.
        let bound = if step <= 2 {
            env.ctx.schedule.big_lambda
        } else {
            env.ctx.schedule.lambda
        };
        let now_a: Vec<(u32, Time)> = (0..env.honest)
            .filter(|i| i % 2 == 0)
            .map(|i| {
                let d = if bound == 0 { 0 } else { rng.gen_range(1..=bound) };
                (i, env.beta(node, step) + d)
            })
            .collect();
        let now_b: Vec<(u32, Time)> = (0..env.honest)
            .filter(|i| i % 2 == 1)
            .map(|i| {
                let d = if bound == 0 { 0 } else { rng.gen_range(1..=bound) };
                (i, env.beta(node, step) + d)
            })
            .collect();
        vec![
            PlannedMessage {
                msg: base,
                plan: DeliveryPlan::Targeted(now_a),
            },
            PlannedMessage {
                msg: alt,
                plan: DeliveryPlan::Targeted(now_b),
            },
        ]
    }
}

struct Censor {
    targets: Vec<usize>,
}

impl Strategy for Censor {
    fn alpha(&mut self, _node: u32, lambda: Time, rng: &mut ChaCha12Rng) -> Time {
        if lambda == 0 {
            0
        } else {
            rng.gen_range(0..=lambda)
        }
    }

    fn observe(&mut self, _node: u32, scenario: &ValueList) -> ValueList {
        let mut o = scenario.clone();
        for &c in &self.targets {
            if c < o.len() {
                o.0[c] = None;
            }
        }
        o
    }

    fn on_emit(
        &mut self,
        env: &StratEnv,
        node: u32,
        step: u32,
        default: Option<StepMessage>,
        _rng: &mut ChaCha12Rng,
    ) -> Vec<PlannedMessage> {
        let Some(base) = default else { return Vec::new() };
        let payload = match base.payload.clone() {
            Payload::Values(mut vl) => {
                for &c in &self.targets {
                    if c < vl.len() {
                        vl.0[c] = None;
                    }
                }
                Payload::Values(vl)
            }
            Payload::Bits(mut bl) => {
                for &c in &self.targets {
                    if c < bl.len() {
                        bl.0[c] = true;
                    }
                }
                Payload::Bits(bl)
            }
        };
        let theta = (step >= 3).then(|| junk_theta(env, node, step));
        match resign(env, node, step, payload, theta.as_ref()) {
            Some(msg) => vec![PlannedMessage {
                msg,
                plan: DeliveryPlan::Broadcast,
            }],
            None => Vec::new(),
        }
    }
}

/// Camp-size windows for the deadlock engine, all forced by the
/// deterministic committee counts (the engine requires `n = N` runs).
///
/// With `H` honest and `M` malicious players per step and threshold `t_H`:
/// - a camp pushed over `t_H` needs at least `w = t_H - M` honest votes
///   behind the pushed side;
/// - every honest side must stay below `t_H` on its own (side sizes in
///   `[H - t_H + 1, H - w]` for pushed camps), which is non-empty exactly
///   when `H + 2M < 2 t_H`.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    /// Minimum honest votes behind a pushable side.
    w: u64,
    /// Camp size used for the fixed-step pushes and the coin-step anchor.
    camp_mid: u64,
}

impl Geometry {
    fn derive(honest: u64, malicious: u64, t_h: u64) -> Option<Geometry> {
        if honest <= t_h || honest + 2 * malicious >= 2 * t_h || t_h <= malicious {
            return None;
        }
        let w = t_h - malicious;
        let lo = honest - t_h + 1;
        let hi = honest - w;
        if lo > hi || w > honest {
            return None;
        }
        Some(Geometry {
            w,
            camp_mid: (lo + hi) / 2,
        })
    }
}

/// Builds the observation rules that seed a sustainable deadlock on the
/// first `ell` components: exactly `w` honest users observe the value, the
/// rest ⊥. Remaining components (if any) observe a unanimous value.
pub fn deadlock_scenario(users: u64, honest_ratio: f64, ell: usize, m: usize) -> Vec<ComponentRule> {
    let honest = (honest_ratio * users as f64).round() as u64;
    let malicious = users - honest;
    let t_h = crate::sortition::supermajority_threshold(users);
    let geom = Geometry::derive(honest, malicious, t_h)
        .expect("deadlock scenario requires deterministic committee conditions");
    let fraction = geom.w as f64 / honest as f64;
    (0..m)
        .map(|c| {
            if c < ell {
                ComponentRule::Split {
                    first: Some(format!("block-{c}")),
                    second: None,
                    fraction,
                }
            } else {
                ComponentRule::Unanimous {
                    value: Some(format!("block-{c}")),
                }
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum CompPhase {
    /// Steps 1-3: value pushes toward the grade split.
    Seeding,
    /// Bit-phase deadlock being maintained.
    Deadlocked,
    /// No longer pushed; resolves through honest defaults.
    Loose,
}

/// The deadlock engine behind both the finalization delayer and the coin
/// grinder.
///
/// Per step it emits one message per malicious player (no equivocation:
/// camps are identical across components, so a single variant serves every
/// camp member) and delivers it to the top-of-clock-offset camp just before
/// each member's boundary. Closure copies reach everyone else only after
/// their boundaries, so camp sizes are exact.
///
/// Vote direction per step parity keeps both the shadow tally and the
/// eventual closure leakage away from every finalization-relevant
/// (parity, bit) combination, except when the private-finalization mode
/// deliberately crosses one.
struct Delayer {
    mode: DelayerMode,
    grind_coin: bool,
    geom: Option<Geometry>,
    infeasible: bool,
    /// Honest bit votes per (step, component): [zeros, ones].
    honest_bits: BTreeMap<u32, Vec<[u64; 2]>>,
    /// Honest supporters of the seeded value per (value step, component).
    honest_value_votes: BTreeMap<u32, Vec<u64>>,
    /// Minimal honest credential hash per step.
    honest_min: BTreeMap<u32, Digest>,
    /// The seeded non-⊥ value per component.
    seed_values: Vec<Value>,
    phases: Vec<CompPhase>,
    withheld: Vec<StepMessage>,
    diag: AdversaryDiagnostics,
    done: bool,
}

impl Delayer {
    fn new(mode: DelayerMode, grind_coin: bool) -> Self {
        Delayer {
            mode,
            grind_coin,
            geom: None,
            infeasible: false,
            honest_bits: BTreeMap::new(),
            honest_value_votes: BTreeMap::new(),
            honest_min: BTreeMap::new(),
            seed_values: Vec::new(),
            phases: Vec::new(),
            withheld: Vec::new(),
            diag: AdversaryDiagnostics::default(),
            done: false,
        }
    }

    fn geometry(&mut self, env: &StratEnv) -> Option<Geometry> {
        if self.geom.is_none() && !self.infeasible {
            let honest = env.honest as u64;
            let malicious = (env.total - env.honest) as u64;
            self.geom = Geometry::derive(honest, malicious, env.ctx.threshold);
            if self.geom.is_none() {
                self.infeasible = true;
            }
            if env.ctx.params.committee != env.ctx.params.total_users {
                // The window arithmetic needs the whole network active.
                self.geom = None;
                self.infeasible = true;
            }
            if self.phases.is_empty() {
                self.phases = vec![CompPhase::Seeding; env.ctx.components];
            }
            if self.seed_values.is_empty() {
                self.seed_values = vec![None; env.ctx.components];
            }
        }
        self.geom
    }

    /// Signs the step message every malicious player broadcasts for `step`.
    fn sign_all(
        &self,
        env: &StratEnv,
        step: u32,
        payload: &Payload,
    ) -> Vec<StepMessage> {
        env.malicious_keys
            .keys()
            .filter_map(|&node| {
                resign(
                    env,
                    node,
                    step,
                    payload.clone(),
                    (step >= 3).then(|| junk_theta(env, node, step)).as_ref(),
                )
            })
            .collect()
    }

    /// Delivery plan: each camp member receives the message one tick before
    /// its own boundary of step `target_step`.
    fn camp_plan(env: &StratEnv, camp: &[u32], target_step: u32) -> Vec<(u32, Time)> {
        camp.iter()
            .map(|&r| (r, env.beta(r, target_step).saturating_sub(1)))
            .collect()
    }

    fn camp(&self, env: &StratEnv, size: u64) -> Vec<u32> {
        env.honest_by_alpha_desc()
            .into_iter()
            .take(size as usize)
            .collect()
    }

    /// Honest bit counts for `step`, per component: [zeros, ones].
    fn bits_at(&self, step: u32, m: usize) -> Vec<[u64; 2]> {
        self.honest_bits
            .get(&step)
            .cloned()
            .unwrap_or_else(|| vec![[0, 0]; m])
    }
}

impl Strategy for Delayer {
    fn message_emitted(&mut self, env: &StratEnv, origin: u32, msg: &StepMessage, _time: Time) {
        let m = env.ctx.components;
        let honest = env.is_honest(origin);
        if honest {
            match &msg.payload {
                Payload::Bits(bl) => {
                    let e = self
                        .honest_bits
                        .entry(msg.step)
                        .or_insert_with(|| vec![[0, 0]; m]);
                    for (c, &b) in bl.0.iter().enumerate() {
                        e[c][b as usize] += 1;
                    }
                }
                Payload::Values(vl) => {
                    let e = self
                        .honest_value_votes
                        .entry(msg.step)
                        .or_insert_with(|| vec![0; m]);
                    for (c, v) in vl.0.iter().enumerate() {
                        if v.is_some() {
                            if self.seed_values.is_empty() {
                                self.seed_values = vec![None; m];
                            }
                            if self.seed_values[c].is_none() {
                                self.seed_values[c] = *v;
                            }
                            if self.seed_values[c] == *v {
                                e[c] += 1;
                            }
                        }
                    }
                }
            }
            let hash = msg.credential.lottery_hash(&env.ctx.engine());
            self.honest_min
                .entry(msg.step)
                .and_modify(|cur| {
                    if hash.as_bytes() < cur.as_bytes() {
                        *cur = hash;
                    }
                })
                .or_insert(hash);
        }
    }

    fn on_emit(
        &mut self,
        _env: &StratEnv,
        _node: u32,
        _step: u32,
        _default: Option<StepMessage>,
        _rng: &mut ChaCha12Rng,
    ) -> Vec<PlannedMessage> {
        // All emissions happen from the planning hook.
        Vec::new()
    }

    fn on_wake(&mut self, env: &StratEnv, sigma: u32, _rng: &mut ChaCha12Rng) -> Vec<PlannedMessage> {
        let Some(geom) = self.geometry(env) else {
            return Vec::new();
        };
        if self.done {
            return Vec::new();
        }
        let m = env.ctx.components;
        let target = sigma + 1;
        let mut out = Vec::new();

        // Release policy for withheld private-finalization votes.
        if let DelayerMode::PrivateFinalize { release, .. } = &self.mode {
            let release_now = match release {
                Release::Immediate => self.diag.s_hat == Some(target) && !self.diag.released,
                Release::AtStep { step } => *step == target && !self.diag.released,
                Release::Never => false,
            };
            if release_now && !self.withheld.is_empty() {
                let everyone: Vec<u32> = (0..env.honest).collect();
                for msg in self.withheld.clone() {
                    out.push(PlannedMessage {
                        plan: DeliveryPlan::Targeted(Self::camp_plan(env, &everyone, target)),
                        msg,
                    });
                }
                self.diag.released = true;
            }
        }

        match sigma {
            // Value-phase pushes: step-1 votes push the step-2 supporter
            // camp (size w), step-2 votes push the grade-2 camp.
            1 | 2 => {
                if self.seed_values.iter().all(|v| v.is_none()) {
                    // Nothing split to work with; stay silent.
                    return out;
                }
                let payload = Payload::Values(ValueList(
                    (0..m)
                        .map(|c| self.seed_values.get(c).copied().flatten())
                        .collect(),
                ));
                let camp_size = if sigma == 1 {
                    geom.w
                } else if matches!(
                    self.mode,
                    DelayerMode::PrivateFinalize { bit: false, .. }
                ) {
                    // Grade-2 camp of w zeros: the step-3 shadow can cross.
                    geom.w
                } else {
                    geom.camp_mid
                };
                let camp = self.camp(env, camp_size);
                for msg in self.sign_all(env, sigma, &payload) {
                    out.push(PlannedMessage {
                        plan: DeliveryPlan::Targeted(Self::camp_plan(env, &camp, target)),
                        msg,
                    });
                }
            }
            _ => {
                // Bit phase. Update component phases from the honest votes
                // of step sigma (all emitted by now).
                let votes = self.bits_at(sigma, m);
                if sigma == 3 {
                    for (c, v) in votes.iter().enumerate() {
                        self.phases[c] = if v[0] > 0 && v[1] > 0 {
                            CompPhase::Deadlocked
                        } else {
                            CompPhase::Loose
                        };
                    }
                } else {
                    for (c, v) in votes.iter().enumerate() {
                        if self.phases[c] == CompPhase::Deadlocked && (v[0] == 0 || v[1] == 0) {
                            self.phases[c] = CompPhase::Loose;
                        }
                    }
                }

                // Private finalization: complete the shadow threshold at the
                // first qualifying step and stop pushing afterwards.
                if let DelayerMode::PrivateFinalize { bit, .. } = self.mode {
                    let qualifies = if bit {
                        crate::protocol::one_finalization_source(sigma)
                    } else {
                        crate::protocol::zero_finalization_source(sigma)
                    };
                    if qualifies && self.diag.s_hat.is_none() {
                        let contested: Vec<usize> = (0..m)
                            .filter(|&c| self.phases[c] != CompPhase::Loose)
                            .collect();
                        let crossable = contested
                            .iter()
                            .any(|&c| votes[c][bit as usize] >= geom.w);
                        if crossable {
                            let payload = Payload::Bits(BitList(
                                (0..m)
                                    .map(|c| {
                                        if self.phases[c] != CompPhase::Loose {
                                            bit
                                        } else {
                                            // follow the honest majority
                                            votes[c][1] >= votes[c][0]
                                        }
                                    })
                                    .collect(),
                            ));
                            self.withheld = self.sign_all(env, sigma, &payload);
                            self.diag.s_hat = Some(target);
                            self.diag.private_bit = Some(bit);
                            for p in self.phases.iter_mut() {
                                if *p != CompPhase::Loose {
                                    *p = CompPhase::Loose;
                                }
                            }
                            // Immediate release happens at the next wake via
                            // the release block above, in time for the
                            // boundaries of step `target`.
                            if matches!(
                                self.mode,
                                DelayerMode::PrivateFinalize {
                                    release: Release::Immediate,
                                    ..
                                }
                            ) {
                                let everyone: Vec<u32> = (0..env.honest).collect();
                                for msg in self.withheld.clone() {
                                    out.push(PlannedMessage {
                                        plan: DeliveryPlan::Targeted(Self::camp_plan(
                                            env, &everyone, target,
                                        )),
                                        msg,
                                    });
                                }
                                self.diag.released = true;
                            }
                            return out;
                        }
                    }
                }

                let deadlocked: Vec<usize> = (0..m)
                    .filter(|&c| self.phases[c] == CompPhase::Deadlocked)
                    .collect();
                if deadlocked.is_empty() {
                    let release_pending = matches!(
                        &self.mode,
                        DelayerMode::PrivateFinalize { release, .. }
                            if !self.diag.released && !matches!(release, Release::Never)
                    );
                    let finalize_pending = matches!(self.mode, DelayerMode::PrivateFinalize { .. })
                        && self.diag.s_hat.is_none();
                    if !release_pending && !finalize_pending {
                        self.done = self.phases.iter().all(|p| *p == CompPhase::Loose);
                    }
                    return out;
                }

                // Push direction by the parity of the target step; the vote
                // the camp needs is never finalization-relevant for its
                // source parity.
                let push_bit = match StepKind::of(target) {
                    StepKind::CoinFixedTo0 => true,
                    StepKind::CoinFixedTo1 => false,
                    StepKind::CoinGenuinelyFlipped => false, // anchor on 0
                    _ => unreachable!(),
                };
                // The push only works when the pushed side has at least w
                // honest votes; otherwise the component resolves on its own.
                let pushable: Vec<usize> = deadlocked
                    .iter()
                    .copied()
                    .filter(|&c| votes[c][push_bit as usize] >= geom.w)
                    .collect();
                for &c in &deadlocked {
                    if !pushable.contains(&c) {
                        self.phases[c] = CompPhase::Loose;
                    }
                }
                if pushable.is_empty() {
                    return out;
                }
                let payload = Payload::Bits(BitList(
                    (0..m)
                        .map(|c| {
                            if pushable.contains(&c) {
                                push_bit
                            } else {
                                votes[c][1] >= votes[c][0]
                            }
                        })
                        .collect(),
                ));
                let camp_size = match StepKind::of(target) {
                    StepKind::CoinFixedTo1 => geom.w,
                    // A 1-side private finalization reads fixed-to-0 step
                    // votes, so that camp must reach the window floor too.
                    StepKind::CoinFixedTo0
                        if matches!(
                            self.mode,
                            DelayerMode::PrivateFinalize { bit: true, .. }
                        ) =>
                    {
                        geom.w
                    }
                    _ => geom.camp_mid,
                };
                let camp = self.camp(env, camp_size);
                let msgs = self.sign_all(env, sigma, &payload);
                // Coin grinding: when our minimal credential undercuts the
                // honest minimum before a coin step, reveal the carrying
                // message to the top half of the flippers just in time.
                let mut poison_plan: Option<(usize, Vec<(u32, Time)>)> = None;
                if self.grind_coin && StepKind::of(target) == StepKind::CoinGenuinelyFlipped {
                    let own_min = msgs
                        .iter()
                        .enumerate()
                        .map(|(i, msg)| (msg.credential.lottery_hash(&env.ctx.engine()), i))
                        .min_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
                    if let (Some((own_hash, idx)), Some(honest_hash)) =
                        (own_min, self.honest_min.get(&sigma))
                    {
                        if own_hash.as_bytes() < honest_hash.as_bytes() {
                            let flippers: Vec<u32> = env
                                .honest_by_alpha_desc()
                                .into_iter()
                                .skip(camp_size as usize)
                                .collect();
                            let half = &flippers[..flippers.len() / 2];
                            poison_plan = Some((idx, Self::camp_plan(env, half, target)));
                        }
                    }
                }
                for (i, msg) in msgs.into_iter().enumerate() {
                    let mut plan = Self::camp_plan(env, &camp, target);
                    if let Some((idx, poison)) = &poison_plan {
                        if i == *idx {
                            plan.extend(poison.iter().copied());
                        }
                    }
                    out.push(PlannedMessage {
                        plan: DeliveryPlan::Targeted(plan),
                        msg,
                    });
                }
            }
        }
        out
    }

    fn diagnostics(&self) -> AdversaryDiagnostics {
        self.diag.clone()
    }
}

/// The withholding case a delayer run exercised, from the adversary diagnostics
/// and the honest resolution step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseLabel {
    /// Private 0-finalization, released: honest finalize in the same window.
    ImmediateZero,
    /// Private 1-finalization, released.
    ImmediateOne,
    /// Private 0-finalization withheld: honest converge within three steps.
    WithheldZero,
    /// Private 1-finalization withheld.
    WithheldOne,
}

/// Classifies a delayer run from its diagnostics and the step at which the
/// honest network resolved the targeted component.
pub fn classify_case(diag: &AdversaryDiagnostics, resolution_step: Option<u32>) -> Option<CaseLabel> {
    let s_hat = diag.s_hat?;
    let bit = diag.private_bit?;
    let res = resolution_step?;
    let prompt = res <= s_hat + 1;
    Some(match (bit, diag.released && prompt) {
        (false, true) => CaseLabel::ImmediateZero,
        (true, true) => CaseLabel::ImmediateOne,
        (false, false) => CaseLabel::WithheldZero,
        (true, false) => CaseLabel::WithheldOne,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::HashEngine;

    #[test]
    fn scenario_ambiguity_count() {
        let e = HashEngine::Seeded(1);
        let rules = vec![
            ComponentRule::Unanimous {
                value: Some("a".into()),
            },
            ComponentRule::Split {
                first: Some("x".into()),
                second: Some("y".into()),
                fraction: 0.5,
            },
            ComponentRule::Unanimous { value: None },
        ];
        let (lists, ell) = make_scenario(&e, &rules, 10, 12);
        assert_eq!(ell, 1);
        assert_eq!(lists.len(), 12);
        assert_eq!(lists[0].len(), 3);
        // Unanimous components identical everywhere.
        assert!(lists.iter().all(|l| l.0[0] == lists[0].0[0]));
        assert!(lists.iter().all(|l| l.0[2].is_none()));
        // Split: first 5 honest get x, the rest y.
        assert_eq!(lists[4].0[1], lists[0].0[1]);
        assert_ne!(lists[5].0[1], lists[0].0[1]);
    }

    #[test]
    fn split_to_all_is_unambiguous() {
        let e = HashEngine::Seeded(1);
        let rules = vec![ComponentRule::Split {
            first: Some("x".into()),
            second: Some("y".into()),
            fraction: 1.0,
        }];
        let (_, ell) = make_scenario(&e, &rules, 10, 10);
        assert_eq!(ell, 0);
    }

    #[test]
    fn geometry_windows() {
        // N = 50, h = 0.8: H = 40, M = 10, t_H = 34.
        let g = Geometry::derive(40, 10, 34).unwrap();
        assert_eq!(g.w, 24);
        assert!(g.camp_mid >= 7 && g.camp_mid <= 16);
        // Violating the committee conditions leaves no window.
        assert!(Geometry::derive(30, 15, 34).is_none());
    }

    #[test]
    fn deadlock_scenario_matches_window() {
        let rules = deadlock_scenario(50, 0.8, 1, 2);
        match &rules[0] {
            ComponentRule::Split { fraction, .. } => {
                assert_eq!((fraction * 40.0).round() as u64, 24);
            }
            _ => panic!("expected split"),
        }
        assert!(matches!(rules[1], ComponentRule::Unanimous { .. }));
    }
}
