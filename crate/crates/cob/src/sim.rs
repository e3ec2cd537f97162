//! Deterministic discrete-event simulation of the gossip network.
//!
//! One run is a pure function of its configuration: clocks, delays, the
//! observation scenario and every adversary decision derive from the run
//! seed. Events are ordered by (time, phase, sequence) with deliveries
//! sorting before step boundaries at equal times, so even zero-latency
//! configurations keep the "everything sent before my boundary has
//! arrived" contract.
//!
//! Honest broadcasts reach every honest node within the per-kind bound
//! (Λ for the value steps, λ afterwards). Malicious-origin messages are
//! delivered wherever the strategy says, but re-gossip closure is
//! enforced: once any honest node holds a message, every other honest
//! node receives it within one bound.

use crate::adversary::{
    build_strategy, make_scenario, AdversaryDiagnostics, ComponentRule, DeliveryPlan,
    PlannedMessage, StratEnv, Strategy, StrategyConfig,
};
use crate::crypto::{Digest, HashEngine, KeyPair, PublicKey, SigRegistry};
use crate::node::{BoundaryOutcome, NodeState, ProtocolCtx, ProtocolViolation, StepSchedule, Time};
use crate::protocol::{
    validate_message, CostModel, EquivocationPolicy, StepMessage, ValueList,
};
use crate::sortition::{check_assumptions, make_credential, supermajority_threshold, SortitionParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sortition error: {0}")]
    Sortition(#[from] crate::sortition::SortitionError),
}

/// Network delay model for honest-origin broadcasts.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum DelayModel {
    /// Independent per-(message, recipient) uniform draws in `(0, bound]`.
    #[default]
    Uniform,
    /// Shortest-path sums over an explicit connected graph, capped at the
    /// bound. Edges are `(a, b, latency)`.
    Graph { edges: Vec<(u32, u32, u64)> },
}


fn default_max_steps() -> u32 {
    5 + 3 * 200
}

fn default_epsilon() -> f64 {
    1e-9
}

/// Full description of one simulated run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    /// Total user count N.
    pub users: u64,
    /// Expected players per step n.
    pub committee: u64,
    /// Honest ratio h (must exceed 2/3).
    pub honest_ratio: f64,
    /// List length m.
    pub components: usize,
    pub schedule: StepSchedule,
    pub seed: u64,
    pub adversary: StrategyConfig,
    pub scenario: Vec<ComponentRule>,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default)]
    pub delay_model: DelayModel,
    /// Target failure bound for the committee-size conditions; runs whose
    /// parameters do not satisfy it are labeled, not rejected.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub equivocation_policy: EquivocationPolicy,
    #[serde(default)]
    pub hash_engine: HashEngine,
}

impl SimConfig {
    /// A small all-active network: every user is a player in every step.
    pub fn full_committee(users: u64, honest_ratio: f64, scenario: Vec<ComponentRule>) -> Self {
        SimConfig {
            users,
            committee: users,
            honest_ratio,
            components: scenario.len(),
            schedule: StepSchedule {
                omega: 10_000_000,
                big_lambda: 4_000_000,
                lambda: 1_000_000,
            },
            seed: 0,
            adversary: StrategyConfig::Honest,
            scenario,
            max_steps: default_max_steps(),
            delay_model: DelayModel::Uniform,
            epsilon: default_epsilon(),
            equivocation_policy: EquivocationPolicy::VoidAll,
            hash_engine: HashEngine::Seeded(0),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.honest_ratio > 2.0 / 3.0 && self.honest_ratio <= 1.0) {
            return Err(SimError::InvalidParameter(format!(
                "honest ratio {} must be in (2/3, 1]",
                self.honest_ratio
            )));
        }
        if self.users == 0 || self.committee == 0 || self.committee > self.users {
            return Err(SimError::InvalidParameter(
                "need 1 <= committee <= users".into(),
            ));
        }
        if self.components == 0 || self.scenario.len() != self.components {
            return Err(SimError::InvalidParameter(format!(
                "scenario must define every one of the {} components",
                self.components
            )));
        }
        if self.max_steps < 5 {
            return Err(SimError::InvalidParameter("max_steps must be at least 5".into()));
        }
        Ok(())
    }
}

/// Safety-oracle flags; any set flag fails a run.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct SafetyFlags {
    /// Two certificates over different output lists.
    pub conflicting_certificates: bool,
    /// Two honest nodes finalized the same component differently.
    pub conflicting_finalizations: bool,
    /// Two honest nodes tallied a supermajority for different values in the
    /// same (step, component).
    pub conflicting_thresholds: bool,
    /// One node saw two supermajorities in a single tally.
    pub double_supermajority: bool,
    /// A certified digest could not be reconstructed from step-2 values.
    pub theta_reconstruction_failed: bool,
    /// An honest boundary fired before all earlier honest messages arrived.
    pub missing_honest_messages: bool,
    /// A clock offset escaped `[0, λ]`.
    pub clock_contract_violated: bool,
    /// Some honest node graded a component 2 while another held a different
    /// value or grade 0 after step 3.
    pub grade_dichotomy_violated: bool,
}

impl SafetyFlags {
    pub fn any(&self) -> bool {
        self.conflicting_certificates
            || self.conflicting_finalizations
            || self.conflicting_thresholds
            || self.double_supermajority
            || self.theta_reconstruction_failed
            || self.missing_honest_messages
            || self.clock_contract_violated
            || self.grade_dichotomy_violated
    }
}

/// Per coin-step record used by the coin statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoinRoundRecord {
    pub step: u32,
    /// Every flipping node used an honest minimal credential.
    pub honest_min: bool,
    /// Components some honest node flipped.
    pub contested: Vec<usize>,
    /// Per contested component: did all honest nodes agree afterwards?
    pub agreed: Vec<bool>,
}

/// Everything measured about one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub users: u64,
    pub committee: u64,
    pub honest: u64,
    pub components: usize,
    /// Ambiguity count induced by the scenario.
    pub ell: u64,
    /// Whether the configured parameters satisfy the committee conditions
    /// at the configured epsilon.
    pub assumptions_satisfied: bool,
    /// Time of the first honest certificate.
    pub certificate_time: Option<Time>,
    pub all_honest_halted: bool,
    pub max_halt_time: Option<Time>,
    /// All honest halt times within `[T, T + λ]`.
    pub halt_spread_ok: bool,
    pub component_final_time: Vec<Option<Time>>,
    pub component_final_step: Vec<Option<u32>>,
    pub last_honest_broadcast_step: u32,
    /// Number of three-step loops entered: coin steps executed at or before
    /// the last honest broadcast.
    pub cgf_loops: u32,
    /// Coin steps at which at least one honest node actually flipped.
    pub cgf_flip_rounds: u32,
    /// Protocol bytes (cost model) of distinct (player, step) broadcasts,
    /// in eighths of a byte.
    pub total_bytes_eighths: u64,
    /// Extra bytes from equivocation variants.
    pub adversary_extra_bytes_eighths: u64,
    /// Realized (step, honest players, malicious players) selections.
    pub per_step_selected: Vec<(u32, u64, u64)>,
    /// Steps whose realized selection violated a committee condition.
    pub assumption_violations: u32,
    /// Minimum over honest nodes of the distinct senders they voided for
    /// equivocation.
    pub min_voided_senders: u64,
    pub invalid_messages: u64,
    pub safety: SafetyFlags,
    pub coin_rounds: Vec<CoinRoundRecord>,
    /// All halted honest nodes certified the same list.
    pub outputs_agree: bool,
    pub output: Option<ValueList>,
    pub timeout: bool,
    /// Hash over all honest state snapshots.
    pub state_digest: Digest,
    pub adversary: AdversaryDiagnostics,
    /// Withholding-case classification of delayer runs.
    pub case_label: Option<crate::adversary::CaseLabel>,
}

impl RunMetrics {
    pub fn total_bytes(&self) -> f64 {
        self.total_bytes_eighths as f64 / 8.0
    }
}

/// Replayable event log.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub messages: Vec<Vec<u8>>,
    pub certs: Vec<Vec<u8>>,
    pub records: Vec<TraceRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceRecord {
    Boundary { time: Time, node: u32, step: u32 },
    Deliver { time: Time, node: u32, msg: u32 },
    DeliverCert { time: Time, node: u32, cert: u32 },
}

impl Trace {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = b"COBTRACE1".to_vec();
        crate::encoding::put_u32(&mut out, self.messages.len() as u32);
        for m in &self.messages {
            crate::encoding::put_bytes(&mut out, m);
        }
        crate::encoding::put_u32(&mut out, self.certs.len() as u32);
        for c in &self.certs {
            crate::encoding::put_bytes(&mut out, c);
        }
        crate::encoding::put_u32(&mut out, self.records.len() as u32);
        for r in &self.records {
            match r {
                TraceRecord::Boundary { time, node, step } => {
                    out.push(0);
                    crate::encoding::put_u64(&mut out, *time);
                    crate::encoding::put_u32(&mut out, *node);
                    crate::encoding::put_u32(&mut out, *step);
                }
                TraceRecord::Deliver { time, node, msg } => {
                    out.push(1);
                    crate::encoding::put_u64(&mut out, *time);
                    crate::encoding::put_u32(&mut out, *node);
                    crate::encoding::put_u32(&mut out, *msg);
                }
                TraceRecord::DeliverCert { time, node, cert } => {
                    out.push(2);
                    crate::encoding::put_u64(&mut out, *time);
                    crate::encoding::put_u32(&mut out, *node);
                    crate::encoding::put_u32(&mut out, *cert);
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Trace, crate::encoding::DecodeError> {
        use crate::encoding::{DecodeError, Reader};
        if buf.len() < 9 || &buf[..9] != b"COBTRACE1" {
            return Err(DecodeError::BadTag { tag: 0, offset: 0 });
        }
        let mut r = Reader::new(&buf[9..]);
        let n = r.len()?;
        let mut messages = Vec::with_capacity(n);
        for _ in 0..n {
            messages.push(r.bytes()?);
        }
        let n = r.len()?;
        let mut certs = Vec::with_capacity(n);
        for _ in 0..n {
            certs.push(r.bytes()?);
        }
        let n = r.len()?;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let tag = r.u8()?;
            let time = r.u64()?;
            let node = r.u32()?;
            let x = r.u32()?;
            records.push(match tag {
                0 => TraceRecord::Boundary {
                    time,
                    node,
                    step: x,
                },
                1 => TraceRecord::Deliver {
                    time,
                    node,
                    msg: x,
                },
                2 => TraceRecord::DeliverCert {
                    time,
                    node,
                    cert: x,
                },
                tag => return Err(DecodeError::BadTag { tag, offset: 0 }),
            });
        }
        r.finish()?;
        Ok(Trace {
            messages,
            certs,
            records,
        })
    }
}

pub struct SimOutcome {
    pub metrics: RunMetrics,
    /// Canonical snapshots of the honest node states.
    pub snapshots: Vec<Vec<u8>>,
    /// The first honest node's certificate, when any halted.
    pub certificate: Option<crate::protocol::Certificate>,
    pub trace: Option<Trace>,
}

/// Runs the configuration and exports the first honest certificate as a
/// self-contained bundle.
pub fn export_first_certificate(
    config: &SimConfig,
) -> Result<crate::bundle::CertificateBundle, SimError> {
    let out = run(config)?;
    let certificate = out.certificate.ok_or_else(|| {
        SimError::InvalidParameter("run produced no certificate to export".into())
    })?;
    Ok(crate::bundle::CertificateBundle {
        engine: config.hash_engine,
        seed: config.seed,
        users: config.users,
        committee: config.committee,
        components: config.components as u32,
        certificate,
    })
}

struct MsgEnvelope {
    msg: StepMessage,
    id: Digest,
    malicious_origin: bool,
}

#[derive(Clone)]
enum EventKind {
    Deliver { to: u32, env: Arc<MsgEnvelope> },
    DeliverCert { to: u32, cert: Arc<crate::protocol::Certificate>, idx: u32 },
    Boundary { node: u32, step: u32 },
    Wake { step: u32 },
}

struct Event {
    time: Time,
    phase: u8,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (Time, u8, u64) {
        (self.time, self.phase, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

const PHASE_DELIVER: u8 = 0;
const PHASE_BOUNDARY: u8 = 1;
const PHASE_WAKE: u8 = 2;

/// Deterministic node construction shared by live runs and trace replay.
struct RunSetup {
    ctx: ProtocolCtx,
    nodes: Vec<NodeState>,
    keys: Vec<KeyPair>,
    honest: u32,
    total: u32,
    alphas: Vec<Time>,
    malicious_keys: BTreeMap<u32, KeyPair>,
    pk_index: HashMap<PublicKey, u32>,
    ell: u64,
    strategy: Box<dyn Strategy>,
    adversary_rng: ChaCha12Rng,
    net_rng: ChaCha12Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Public material every run participant (and a standalone certificate
/// verifier) derives from the run seed: the key registry and the sortition
/// parameters. Certificates exported from a run verify in any process that
/// rebuilds these from the same header.
pub fn derive_public(
    engine: HashEngine,
    seed: u64,
    users: u64,
    committee: u64,
) -> (SigRegistry, Vec<KeyPair>, SortitionParams) {
    let (registry, keys) = SigRegistry::generate(engine, splitmix64(seed ^ 0xC0B), users as usize);
    let reference = engine
        .hash_parts(&[b"reference", &seed.to_le_bytes()])
        .as_bytes()
        .to_vec();
    let params = SortitionParams::new(users, committee, reference);
    (registry, keys, params)
}

fn setup(config: &SimConfig) -> Result<RunSetup, SimError> {
    config.validate()?;
    let total = config.users as u32;
    let honest = (config.honest_ratio * config.users as f64).round() as u32;
    let engine = config.hash_engine;
    let (registry, keys, params) =
        derive_public(engine, config.seed, config.users, config.committee);
    let ctx = ProtocolCtx {
        registry,
        params,
        components: config.components,
        threshold: supermajority_threshold(config.committee),
        schedule: config.schedule,
        policy: config.equivocation_policy,
    };

    let mut strategy = build_strategy(&config.adversary);
    let mut adversary_rng =
        ChaCha12Rng::seed_from_u64(splitmix64(config.seed ^ 0xADFE57A1));
    let mut alpha_rng = ChaCha12Rng::seed_from_u64(splitmix64(config.seed ^ 0xA19FA));
    let lambda = config.schedule.lambda;

    // Honest offsets uniform in [0, λ], made pairwise distinct when the
    // range allows it (exact just-in-time adversarial delivery depends on a
    // strict boundary order; ties have measure zero in the continuous
    // model).
    let mut alphas = vec![0u64; total as usize];
    let mut used = HashSet::new();
    for a in alphas.iter_mut().take(honest as usize) {
        let mut draw = if lambda == 0 { 0 } else { alpha_rng.gen_range(0..=lambda) };
        if lambda >= 2 * total as u64 {
            while !used.insert(draw) {
                draw = alpha_rng.gen_range(0..=lambda);
            }
        }
        *a = draw;
    }
    for i in honest..total {
        alphas[i as usize] = strategy.alpha(i, lambda, &mut adversary_rng);
        if alphas[i as usize] > lambda {
            alphas[i as usize] = lambda;
        }
    }

    let (observations, ell) = make_scenario(&engine, &config.scenario, honest as u64, config.users);
    let mut malicious_keys = BTreeMap::new();
    for i in honest..total {
        malicious_keys.insert(i, keys[i as usize].clone());
    }
    let mut pk_index = HashMap::with_capacity(total as usize);
    let mut nodes = Vec::with_capacity(total as usize);
    for i in 0..total {
        pk_index.insert(keys[i as usize].pk, i);
        let obs = if i < honest {
            observations[i as usize].clone()
        } else {
            strategy.observe(i, &observations[i as usize])
        };
        nodes.push(NodeState::new(i, keys[i as usize].clone(), alphas[i as usize], obs, &ctx));
    }
    let net_rng = ChaCha12Rng::seed_from_u64(splitmix64(config.seed ^ 0x7E77));
    Ok(RunSetup {
        ctx,
        nodes,
        keys,
        honest,
        total,
        alphas,
        malicious_keys,
        pk_index,
        ell,
        strategy,
        adversary_rng,
        net_rng,
    })
}

/// Shortest-path delays for the graph model, per origin, capped at 1..=bound.
struct GraphDelays {
    adj: Vec<Vec<(u32, u64)>>,
    cache: HashMap<u32, Arc<Vec<u64>>>,
}

impl GraphDelays {
    fn new(total: u32, edges: &[(u32, u32, u64)]) -> Self {
        let mut adj = vec![Vec::new(); total as usize];
        for &(a, b, w) in edges {
            if a < total && b < total {
                adj[a as usize].push((b, w.max(1)));
                adj[b as usize].push((a, w.max(1)));
            }
        }
        GraphDelays {
            adj,
            cache: HashMap::new(),
        }
    }

    fn distances(&mut self, origin: u32) -> Arc<Vec<u64>> {
        if let Some(d) = self.cache.get(&origin) {
            return d.clone();
        }
        let n = self.adj.len();
        let mut dist = vec![u64::MAX; n];
        dist[origin as usize] = 0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((0u64, origin)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u as usize] {
                continue;
            }
            for &(v, w) in &self.adj[u as usize] {
                let nd = d.saturating_add(w);
                if nd < dist[v as usize] {
                    dist[v as usize] = nd;
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        let arc = Arc::new(dist);
        self.cache.insert(origin, arc.clone());
        arc
    }
}

struct Sim<'a> {
    config: &'a SimConfig,
    ctx: ProtocolCtx,
    nodes: Vec<NodeState>,
    keys: Vec<KeyPair>,
    honest: u32,
    total: u32,
    alphas: Vec<Time>,
    malicious_keys: BTreeMap<u32, KeyPair>,
    pk_index: HashMap<PublicKey, u32>,
    strategy: Box<dyn Strategy>,
    adversary_rng: ChaCha12Rng,
    net_rng: ChaCha12Rng,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    graph: Option<GraphDelays>,
    // per-node dedup of received message ids
    seen: Vec<HashSet<Digest>>,
    validated: HashMap<Digest, bool>,
    closed: HashSet<Digest>,
    counted_ids: HashSet<Digest>,
    sender_step_seen: HashSet<(PublicKey, u32)>,
    cost: CostModel,
    // metrics accumulation
    honest_emitted: BTreeMap<u32, u64>,
    received_honest: Vec<BTreeMap<u32, u64>>,
    finalized_global: Vec<Option<bool>>,
    threshold_claims: HashMap<(u32, usize), ThresholdClaim>,
    steps_seen: BTreeSet<u32>,
    metrics: RunMetrics,
    pending_round: Option<PendingRound>,
    halted_honest: u32,
    trace: Option<Trace>,
    msg_table: HashMap<Digest, u32>,
    cert_table: Vec<Arc<crate::protocol::Certificate>>,
    done: bool,
}

#[derive(Clone, PartialEq, Eq)]
enum ThresholdClaim {
    Bit(bool),
    Value(Digest),
}

struct PendingRound {
    step: u32,
    contested: BTreeSet<usize>,
    flippers: BTreeSet<PublicKey>,
}

/// Executes one run.
pub fn run(config: &SimConfig) -> Result<SimOutcome, SimError> {
    run_with_trace(config, false)
}

pub fn run_with_trace(config: &SimConfig, want_trace: bool) -> Result<SimOutcome, SimError> {
    let s = setup(config)?;
    let assumptions = check_assumptions(
        config.users,
        config.honest_ratio,
        config.committee,
        config.epsilon,
    )?;
    let metrics = RunMetrics {
        seed: config.seed,
        users: config.users,
        committee: config.committee,
        honest: s.honest as u64,
        components: config.components,
        ell: s.ell,
        assumptions_satisfied: assumptions.satisfied,
        certificate_time: None,
        all_honest_halted: false,
        max_halt_time: None,
        halt_spread_ok: true,
        component_final_time: vec![None; config.components],
        component_final_step: vec![None; config.components],
        last_honest_broadcast_step: 0,
        cgf_loops: 0,
        cgf_flip_rounds: 0,
        total_bytes_eighths: 0,
        adversary_extra_bytes_eighths: 0,
        per_step_selected: Vec::new(),
        assumption_violations: 0,
        min_voided_senders: 0,
        invalid_messages: 0,
        safety: SafetyFlags::default(),
        coin_rounds: Vec::new(),
        outputs_agree: true,
        output: None,
        timeout: false,
        state_digest: Digest([0; 32]),
        adversary: AdversaryDiagnostics::default(),
        case_label: None,
    };
    let graph = match &config.delay_model {
        DelayModel::Uniform => None,
        DelayModel::Graph { edges } => Some(GraphDelays::new(s.total, edges)),
    };
    let mut sim = Sim {
        config,
        ctx: s.ctx,
        nodes: s.nodes,
        keys: s.keys,
        honest: s.honest,
        total: s.total,
        alphas: s.alphas,
        malicious_keys: s.malicious_keys,
        pk_index: s.pk_index,
        strategy: s.strategy,
        adversary_rng: s.adversary_rng,
        net_rng: s.net_rng,
        queue: BinaryHeap::new(),
        seq: 0,
        graph,
        seen: vec![HashSet::new(); s.total as usize],
        validated: HashMap::new(),
        closed: HashSet::new(),
        counted_ids: HashSet::new(),
        sender_step_seen: HashSet::new(),
        cost: CostModel::default(),
        honest_emitted: BTreeMap::new(),
        received_honest: vec![BTreeMap::new(); s.total as usize],
        finalized_global: vec![None; config.components],
        threshold_claims: HashMap::new(),
        steps_seen: BTreeSet::new(),
        metrics,
        pending_round: None,
        halted_honest: 0,
        trace: want_trace.then(Trace::default),
        msg_table: HashMap::new(),
        cert_table: Vec::new(),
        done: false,
    };
    sim.run_loop();
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: Time, phase: u8, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            phase,
            seq: self.seq,
            kind,
        }));
    }

    fn is_honest(&self, node: u32) -> bool {
        node < self.honest
    }

    /// Splits the strategy, its rng and the read-only environment out of
    /// `self` as disjoint borrows.
    #[allow(clippy::type_complexity)]
    fn strategy_parts(
        &mut self,
    ) -> (StratEnv<'_>, &mut Box<dyn Strategy>, &mut ChaCha12Rng) {
        (
            StratEnv {
                ctx: &self.ctx,
                total: self.total,
                honest: self.honest,
                alphas: &self.alphas,
                malicious_keys: &self.malicious_keys,
            },
            &mut self.strategy,
            &mut self.adversary_rng,
        )
    }

    fn run_loop(&mut self) {
        for i in 0..self.total {
            let t = self.alphas[i as usize] + self.ctx.schedule.step_deadline(1);
            self.push(t, PHASE_BOUNDARY, EventKind::Boundary { node: i, step: 1 });
        }
        let wake_t = self.ctx.schedule.step_deadline(1) + self.ctx.schedule.lambda + 1;
        self.push(wake_t, PHASE_WAKE, EventKind::Wake { step: 1 });

        while let Some(Reverse(ev)) = self.queue.pop() {
            if self.done {
                break;
            }
            match ev.kind {
                EventKind::Deliver { to, env } => self.handle_deliver(ev.time, to, env),
                EventKind::DeliverCert { to, cert, idx } => {
                    self.handle_deliver_cert(ev.time, to, cert, idx)
                }
                EventKind::Boundary { node, step } => self.handle_boundary(ev.time, node, step),
                EventKind::Wake { step } => self.handle_wake(ev.time, step),
            }
        }
        if self.halted_honest < self.honest {
            self.metrics.timeout = true;
        }
    }

    fn bound_for_step(&self, step: u32) -> Time {
        if step <= 2 {
            self.ctx.schedule.big_lambda
        } else {
            self.ctx.schedule.lambda
        }
    }

    fn net_delay(&mut self, origin: u32, to: u32, bound: Time) -> Time {
        match &mut self.graph {
            None => {
                if bound == 0 {
                    0
                } else {
                    self.net_rng.gen_range(1..=bound)
                }
            }
            Some(g) => {
                let d = g.distances(origin)[to as usize];
                d.clamp(1, bound.max(1))
            }
        }
    }

    /// Registers an emission: byte accounting, omniscient tap, per-step
    /// logs. Returns the shared envelope.
    fn register_emission(&mut self, origin: u32, msg: StepMessage, now: Time) -> Arc<MsgEnvelope> {
        let id = msg.id(&self.ctx.engine());
        let malicious_origin = !self.is_honest(origin);
        if self.counted_ids.insert(id) {
            let cost = self
                .cost
                .message_cost_eighths(msg.step, self.config.components as u64);
            if self.sender_step_seen.insert((msg.credential.player, msg.step)) {
                self.metrics.total_bytes_eighths += cost;
            } else {
                self.metrics.adversary_extra_bytes_eighths += cost;
            }
            if !malicious_origin {
                *self.honest_emitted.entry(msg.step).or_insert(0) += 1;
                self.metrics.last_honest_broadcast_step =
                    self.metrics.last_honest_broadcast_step.max(msg.step);
            }
        }
        let (env, strategy, _) = self.strategy_parts();
        strategy.message_emitted(&env, origin, &msg, now);
        Arc::new(MsgEnvelope {
            msg,
            id,
            malicious_origin,
        })
    }

    fn deliver_inline_to_malicious(&mut self, env: &Arc<MsgEnvelope>, now: Time) {
        for i in self.honest..self.total {
            if self.seen[i as usize].insert(env.id) && self.validate(env) {
                self.nodes[i as usize].receive_message(&self.ctx, now, &env.msg, env.id);
            }
        }
    }

    fn dispatch_broadcast(&mut self, origin: u32, msg: StepMessage, now: Time) {
        let bound = self.bound_for_step(msg.step);
        let env = self.register_emission(origin, msg, now);
        for to in 0..self.honest {
            let delay = if to == origin { 0 } else { self.net_delay(origin, to, bound) };
            self.push(
                now + delay,
                PHASE_DELIVER,
                EventKind::Deliver {
                    to,
                    env: env.clone(),
                },
            );
        }
        self.deliver_inline_to_malicious(&env, now);
    }

    fn dispatch_planned(&mut self, origin: u32, planned: Vec<PlannedMessage>, now: Time) {
        for PlannedMessage { msg, plan } in planned {
            match plan {
                DeliveryPlan::Broadcast => self.dispatch_broadcast(origin, msg, now),
                DeliveryPlan::Targeted(list) => {
                    let env = self.register_emission(origin, msg, now);
                    for (to, time) in list {
                        if to < self.honest {
                            self.push(
                                time.max(now),
                                PHASE_DELIVER,
                                EventKind::Deliver {
                                    to,
                                    env: env.clone(),
                                },
                            );
                        }
                    }
                    self.deliver_inline_to_malicious(&env, now);
                }
            }
        }
    }

    fn validate(&mut self, env: &Arc<MsgEnvelope>) -> bool {
        if let Some(&v) = self.validated.get(&env.id) {
            return v;
        }
        let ok = validate_message(
            &self.ctx.registry,
            &env.msg,
            &self.ctx.params,
            self.config.components,
        )
        .is_ok();
        self.validated.insert(env.id, ok);
        if !ok {
            self.metrics.invalid_messages += 1;
        }
        ok
    }

    fn handle_deliver(&mut self, now: Time, to: u32, env: Arc<MsgEnvelope>) {
        if !self.seen[to as usize].insert(env.id) {
            return;
        }
        if !self.validate(&env) {
            return;
        }
        // Re-gossip closure: the first honest receipt of a malicious-origin
        // message propagates it to every other honest node within a bound.
        if env.malicious_origin && self.is_honest(to) && self.closed.insert(env.id) {
            let bound = self.bound_for_step(env.msg.step);
            for j in 0..self.honest {
                if j != to {
                    let d = self.net_delay(to, j, bound);
                    self.push(
                        now + d,
                        PHASE_DELIVER,
                        EventKind::Deliver {
                            to: j,
                            env: env.clone(),
                        },
                    );
                }
            }
        }
        if let Some(trace) = &mut self.trace {
            if to < self.honest {
                let next = self.msg_table.len() as u32;
                let idx = *self.msg_table.entry(env.id).or_insert_with(|| {
                    trace
                        .messages
                        .push(crate::encoding::encode_message(&env.msg));
                    next
                });
                trace.records.push(TraceRecord::Deliver {
                    time: now,
                    node: to,
                    msg: idx,
                });
            }
        }
        if self.nodes[to as usize].halted {
            return;
        }
        if self.is_honest(to) && !env.malicious_origin {
            *self.received_honest[to as usize]
                .entry(env.msg.step)
                .or_insert(0) += 1;
        }
        let out = self.nodes[to as usize].receive_message(&self.ctx, now, &env.msg, env.id);
        self.apply_violations(&out.violations);
        if out.newly_halted && self.is_honest(to) {
            self.on_honest_halt(to, now);
        }
    }

    fn handle_deliver_cert(
        &mut self,
        now: Time,
        to: u32,
        cert: Arc<crate::protocol::Certificate>,
        idx: u32,
    ) {
        if let Some(trace) = &mut self.trace {
            if to < self.honest {
                trace.records.push(TraceRecord::DeliverCert {
                    time: now,
                    node: to,
                    cert: idx,
                });
            }
        }
        if self.nodes[to as usize].halted {
            return;
        }
        let adopted = self.nodes[to as usize].receive_certificate(&self.ctx, now, &cert);
        if adopted && self.is_honest(to) {
            self.on_honest_halt_with_cert(to, now, Some((cert, idx)));
        }
    }

    fn on_honest_halt(&mut self, node: u32, now: Time) {
        let cert = Arc::new(
            self.nodes[node as usize]
                .certificate
                .clone()
                .expect("halted implies certificate"),
        );
        let idx = self.cert_table.len() as u32;
        if let Some(trace) = &mut self.trace {
            trace.certs.push(crate::encoding::encode_certificate(&cert));
        }
        self.cert_table.push(cert.clone());
        self.on_honest_halt_with_cert(node, now, Some((cert, idx)));
    }

    /// Common halt bookkeeping; re-gossips the certificate when provided.
    fn on_honest_halt_with_cert(
        &mut self,
        node: u32,
        now: Time,
        cert: Option<(Arc<crate::protocol::Certificate>, u32)>,
    ) {
        self.halted_honest += 1;
        if self.metrics.certificate_time.is_none() {
            self.metrics.certificate_time = Some(now);
        }
        self.metrics.max_halt_time = Some(self.metrics.max_halt_time.unwrap_or(0).max(now));
        if let Some((cert, idx)) = cert {
            let lambda = self.ctx.schedule.lambda;
            for j in 0..self.honest {
                if j != node && !self.nodes[j as usize].halted {
                    let d = if lambda == 0 { 0 } else { self.net_rng.gen_range(1..=lambda) };
                    self.push(
                        now + d,
                        PHASE_DELIVER,
                        EventKind::DeliverCert {
                            to: j,
                            cert: cert.clone(),
                            idx,
                        },
                    );
                }
            }
        }
        if self.halted_honest == self.honest {
            self.flush_pending_round(true);
            self.done = true;
        }
    }

    fn apply_violations(&mut self, violations: &[ProtocolViolation]) {
        for v in violations {
            match v {
                ProtocolViolation::DoubleSupermajority => {
                    self.metrics.safety.double_supermajority = true
                }
                ProtocolViolation::ThetaReconstructionFailed => {
                    self.metrics.safety.theta_reconstruction_failed = true
                }
            }
        }
    }

    fn first_boundary_of_step(&mut self, step: u32) {
        if !self.steps_seen.insert(step) {
            return;
        }
        // Pending coin round from three steps ago resolves once every
        // honest boundary of the coin step has passed.
        if self.pending_round.as_ref().is_some_and(|p| step > p.step) {
            self.flush_pending_round(false);
        }
        // Grade dichotomy after step 3: a grade-2 component pins the same
        // non-⊥ value and at least grade 1 at every honest node.
        if step == 4 {
            for c in 0..self.config.components {
                let mut pinned: Option<crate::crypto::Digest> = None;
                for i in 0..self.honest {
                    let n = &self.nodes[i as usize];
                    if n.grades[c] == 2 {
                        match (pinned, n.observation.0[c]) {
                            (_, None) => self.metrics.safety.grade_dichotomy_violated = true,
                            (None, Some(d)) => pinned = Some(d),
                            (Some(p), Some(d)) if p != d => {
                                self.metrics.safety.grade_dichotomy_violated = true
                            }
                            _ => {}
                        }
                    }
                }
                if let Some(p) = pinned {
                    for i in 0..self.honest {
                        let n = &self.nodes[i as usize];
                        if n.grades[c] == 0 || n.observation.0[c] != Some(p) {
                            self.metrics.safety.grade_dichotomy_violated = true;
                        }
                    }
                }
            }
        }
        // Realized selection counts and the committee conditions.
        let mut h = 0u64;
        let mut m = 0u64;
        for i in 0..self.total {
            if make_credential(&self.ctx.registry, &self.keys[i as usize], &self.ctx.params, step)
                .is_some()
            {
                if self.is_honest(i) {
                    h += 1;
                } else {
                    m += 1;
                }
            }
        }
        let t_h = self.ctx.threshold;
        if !(h > t_h && h + 2 * m < 2 * t_h) {
            self.metrics.assumption_violations += 1;
        }
        self.metrics.per_step_selected.push((step, h, m));
    }

    fn flush_pending_round(&mut self, _at_end: bool) {
        let Some(p) = self.pending_round.take() else {
            return;
        };
        let honest_min = p
            .flippers
            .iter()
            .all(|pk| self.pk_index.get(pk).is_some_and(|&i| i < self.honest));
        let contested: Vec<usize> = p.contested.iter().copied().collect();
        let agreed = contested
            .iter()
            .map(|&c| {
                let mut bits = (0..self.honest).map(|i| self.nodes[i as usize].bits.0[c]);
                let first = bits.next().unwrap();
                bits.all(|b| b == first)
            })
            .collect();
        self.metrics.coin_rounds.push(CoinRoundRecord {
            step: p.step,
            honest_min,
            contested,
            agreed,
        });
        self.metrics.cgf_flip_rounds += 1;
    }

    fn handle_boundary(&mut self, now: Time, node: u32, step: u32) {
        if self.nodes[node as usize].halted {
            return;
        }
        self.first_boundary_of_step(step);
        if let Some(trace) = &mut self.trace {
            if node < self.honest {
                trace.records.push(TraceRecord::Boundary {
                    time: now,
                    node,
                    step,
                });
            }
        }
        let honest = self.is_honest(node);
        if honest {
            if self.alphas[node as usize] > self.ctx.schedule.lambda {
                self.metrics.safety.clock_contract_violated = true;
            }
            // Everything honest from earlier steps must already be here.
            for (&s, &emitted) in self.honest_emitted.iter() {
                if s < step {
                    let got = self.received_honest[node as usize]
                        .get(&s)
                        .copied()
                        .unwrap_or(0);
                    if got != emitted {
                        self.metrics.safety.missing_honest_messages = true;
                    }
                }
            }
        }

        let out = self.nodes[node as usize].boundary(&self.ctx, now, step);
        self.apply_violations(&out.violations);

        if honest {
            self.note_threshold_claims(node, step);
            for &(c, bit) in &out.newly_finalized {
                if self.metrics.component_final_time[c].is_none() {
                    self.metrics.component_final_time[c] = Some(now);
                    self.metrics.component_final_step[c] = Some(step);
                }
                match self.finalized_global[c] {
                    None => self.finalized_global[c] = Some(bit),
                    Some(b) if b != bit => {
                        self.metrics.safety.conflicting_finalizations = true
                    }
                    _ => {}
                }
            }
            if !out.coin_flips.is_empty() {
                let p = self.pending_round.get_or_insert_with(|| PendingRound {
                    step,
                    contested: BTreeSet::new(),
                    flippers: BTreeSet::new(),
                });
                for &(c, _) in &out.coin_flips {
                    p.contested.insert(c);
                }
                if let Some(f) = out.coin_flipper {
                    p.flippers.insert(f);
                }
            }
        }

        if out.newly_halted && honest {
            self.on_honest_halt(node, now);
        } else {
            self.dispatch_emission(node, step, now, out);
            if !self.nodes[node as usize].halted && step < self.config.max_steps {
                let t = self.alphas[node as usize] + self.ctx.schedule.step_deadline(step + 1);
                self.push(
                    t,
                    PHASE_BOUNDARY,
                    EventKind::Boundary {
                        node,
                        step: step + 1,
                    },
                );
            }
        }
    }

    fn dispatch_emission(&mut self, node: u32, step: u32, now: Time, out: BoundaryOutcome) {
        if self.is_honest(node) {
            if let Some(msg) = out.emission {
                self.dispatch_broadcast(node, msg, now);
            }
        } else {
            let planned = {
                let (env, strategy, rng) = self.strategy_parts();
                strategy.on_emit(&env, node, step, out.emission, rng)
            };
            self.dispatch_planned(node, planned, now);
        }
    }

    /// Records which (step, component, value) supermajorities this node's
    /// consulted tally contains, and flags cross-node conflicts.
    fn note_threshold_claims(&mut self, node: u32, step: u32) {
        if step < 2 {
            return;
        }
        let sigma = step - 1;
        let t_h = self.ctx.threshold;
        let Some(tally) = self.nodes[node as usize].tally(sigma) else {
            return;
        };
        let mut claims: Vec<(usize, ThresholdClaim)> = Vec::new();
        for c in 0..self.config.components {
            if sigma <= 2 {
                for (d, n) in tally.non_bottom_values(c) {
                    if n >= t_h {
                        claims.push((c, ThresholdClaim::Value(*d)));
                    }
                }
            } else {
                for bit in [false, true] {
                    if tally.bit_count(bit, c) >= t_h {
                        claims.push((c, ThresholdClaim::Bit(bit)));
                    }
                }
            }
        }
        for (c, claim) in claims {
            match self.threshold_claims.entry((sigma, c)) {
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(claim);
                }
                std::collections::hash_map::Entry::Occupied(e) => {
                    if *e.get() != claim {
                        self.metrics.safety.conflicting_thresholds = true;
                    }
                }
            }
        }
    }

    fn handle_wake(&mut self, now: Time, step: u32) {
        let planned = {
            let (env, strategy, rng) = self.strategy_parts();
            strategy.on_wake(&env, step, rng)
        };
        if !planned.is_empty() {
            // Attribute wake emissions to their signing nodes.
            for pm in planned {
                let origin = self
                    .pk_index
                    .get(&pm.msg.credential.player)
                    .copied()
                    .unwrap_or(self.honest);
                self.dispatch_planned(origin, vec![pm], now);
            }
        }
        if step < self.config.max_steps {
            let t = self.ctx.schedule.step_deadline(step + 1) + self.ctx.schedule.lambda + 1;
            self.push(t, PHASE_WAKE, EventKind::Wake { step: step + 1 });
        }
    }

    fn finish(mut self) -> SimOutcome {
        self.flush_pending_round(true);
        self.metrics.all_honest_halted = self.halted_honest == self.honest;
        self.metrics.cgf_loops = (self.metrics.last_honest_broadcast_step / 3).saturating_sub(1);
        // Output agreement across halted honest nodes.
        let mut output: Option<ValueList> = None;
        for i in 0..self.honest {
            if let Some(theta) = self.nodes[i as usize].output() {
                match &output {
                    None => output = Some(theta.clone()),
                    Some(t) if t != theta => {
                        self.metrics.outputs_agree = false;
                        self.metrics.safety.conflicting_certificates = true;
                    }
                    _ => {}
                }
            }
        }
        self.metrics.output = output;
        if let (Some(t), Some(max_halt)) =
            (self.metrics.certificate_time, self.metrics.max_halt_time)
        {
            if self.metrics.all_honest_halted {
                self.metrics.halt_spread_ok = max_halt <= t + self.ctx.schedule.lambda;
            }
        }
        self.metrics.adversary = self.strategy.diagnostics();
        let resolution = self
            .metrics
            .component_final_step
            .iter()
            .flatten()
            .min()
            .copied()
            .or_else(|| {
                self.metrics
                    .certificate_time
                    .map(|_| self.metrics.last_honest_broadcast_step + 1)
            });
        self.metrics.case_label = crate::adversary::classify_case(&self.metrics.adversary, resolution);
        self.metrics.min_voided_senders = (0..self.honest)
            .map(|i| self.nodes[i as usize].voided_senders().len() as u64)
            .min()
            .unwrap_or(0);
        let mut snapshots = Vec::with_capacity(self.honest as usize);
        let mut concat = Vec::new();
        for i in 0..self.honest {
            let snap = self.nodes[i as usize].snapshot();
            concat.extend_from_slice(&snap);
            snapshots.push(snap);
        }
        self.metrics.state_digest = self.ctx.engine().hash(&concat);
        let certificate = (0..self.honest)
            .find_map(|i| self.nodes[i as usize].certificate.clone());
        SimOutcome {
            metrics: self.metrics,
            snapshots,
            certificate,
            trace: self.trace,
        }
    }
}

/// Replays a recorded trace against freshly constructed nodes and returns
/// the honest state snapshots; byte-identical to the live run's.
pub fn replay(config: &SimConfig, trace: &Trace) -> Result<(Vec<Vec<u8>>, Digest), SimError> {
    let mut s = setup(config)?;
    let messages: Vec<StepMessage> = trace
        .messages
        .iter()
        .map(|b| {
            crate::encoding::decode_message(b)
                .map_err(|e| SimError::InvalidParameter(format!("trace message: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let certs: Vec<crate::protocol::Certificate> = trace
        .certs
        .iter()
        .map(|b| {
            crate::encoding::decode_certificate(b)
                .map_err(|e| SimError::InvalidParameter(format!("trace certificate: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let engine = s.ctx.engine();
    let ids: Vec<Digest> = messages.iter().map(|m| m.id(&engine)).collect();
    for rec in &trace.records {
        match *rec {
            TraceRecord::Boundary { time, node, step } => {
                s.nodes[node as usize].boundary(&s.ctx, time, step);
            }
            TraceRecord::Deliver { time, node, msg } => {
                let m = &messages[msg as usize];
                s.nodes[node as usize].receive_message(&s.ctx, time, m, ids[msg as usize]);
            }
            TraceRecord::DeliverCert { time, node, cert } => {
                s.nodes[node as usize].receive_certificate(&s.ctx, time, &certs[cert as usize]);
            }
        }
    }
    let mut snapshots = Vec::with_capacity(s.honest as usize);
    let mut concat = Vec::new();
    for i in 0..s.honest {
        let snap = s.nodes[i as usize].snapshot();
        concat.extend_from_slice(&snap);
        snapshots.push(snap);
    }
    Ok((snapshots, engine.hash(&concat)))
}

/// Runs `reps` seeded repetitions in parallel; run `i` uses seed
/// `splitmix64(master ^ i)`.
pub fn run_batch(base: &SimConfig, reps: u64, master_seed: u64) -> Result<Vec<RunMetrics>, SimError> {
    base.validate()?;
    use rayon::prelude::*;
    let metrics: Vec<Result<RunMetrics, SimError>> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut cfg = base.clone();
            cfg.seed = splitmix64(master_seed.wrapping_add(i).wrapping_mul(0x9E3779B97F4A7C15) ^ i);
            run(&cfg).map(|o| o.metrics)
        })
        .collect();
    metrics.into_iter().collect()
}

/// Aggregate over a batch of runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub all_halted_runs: usize,
    pub timeouts: usize,
    pub safety_violation_runs: usize,
    pub assumption_violation_steps: u64,
    pub mean_certificate_time: f64,
    pub mean_last_broadcast_step: f64,
    pub mean_cgf_loops: f64,
    /// 99% confidence half-width of the loop mean.
    pub cgf_loop_ci99: f64,
    pub cgf_loop_histogram: BTreeMap<u32, u64>,
    pub last_step_histogram: BTreeMap<u32, u64>,
    pub mean_total_bytes: f64,
    pub outputs_agree_all: bool,
}

pub fn collect_statistics(runs: &[RunMetrics]) -> AggregateReport {
    assert!(!runs.is_empty(), "need at least one run");
    let mut loop_hist = BTreeMap::new();
    let mut step_hist = BTreeMap::new();
    for r in runs {
        *loop_hist.entry(r.cgf_loops).or_insert(0u64) += 1;
        *step_hist.entry(r.last_honest_broadcast_step).or_insert(0u64) += 1;
    }
    let loops: Vec<f64> = runs.iter().map(|r| r.cgf_loops as f64).collect();
    let times: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.certificate_time.map(|t| t as f64))
        .collect();
    AggregateReport {
        runs: runs.len(),
        all_halted_runs: runs.iter().filter(|r| r.all_honest_halted).count(),
        timeouts: runs.iter().filter(|r| r.timeout).count(),
        safety_violation_runs: runs.iter().filter(|r| r.safety.any()).count(),
        assumption_violation_steps: runs.iter().map(|r| r.assumption_violations as u64).sum(),
        mean_certificate_time: crate::stats::mean(&times),
        mean_last_broadcast_step: crate::stats::mean(
            &runs
                .iter()
                .map(|r| r.last_honest_broadcast_step as f64)
                .collect::<Vec<_>>(),
        ),
        mean_cgf_loops: crate::stats::mean(&loops),
        cgf_loop_ci99: 2.576 * crate::stats::std_error(&loops),
        cgf_loop_histogram: loop_hist,
        last_step_histogram: step_hist,
        mean_total_bytes: crate::stats::mean(
            &runs.iter().map(|r| r.total_bytes()).collect::<Vec<_>>(),
        ),
        outputs_agree_all: runs.iter().all(|r| r.outputs_agree),
    }
}

/// CSV flattening of per-run metrics (numeric summary columns).
pub fn metrics_csv(runs: &[RunMetrics]) -> String {
    let mut out = String::from(
        "seed,ell,certificate_time,last_step,cgf_loops,flip_rounds,total_bytes,\
         assumption_violations,safety_violation,outputs_agree,timeout\n",
    );
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.ell,
            r.certificate_time.map_or(-1.0, |t| t as f64),
            r.last_honest_broadcast_step,
            r.cgf_loops,
            r.cgf_flip_rounds,
            r.total_bytes(),
            r.assumption_violations,
            r.safety.any(),
            r.outputs_agree,
            r.timeout,
        ));
    }
    out
}
