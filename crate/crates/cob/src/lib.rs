//! Leaderless multidimensional Byzantine agreement for gossiping networks.
//!
//! The crate implements the full per-user protocol state machine (`node`),
//! the cryptographic sortition that elects the per-step committees
//! (`crypto`, `sortition`), the message formats and byte-cost model
//! (`protocol`, `encoding`), a deterministic discrete-event network
//! simulator with a pluggable Byzantine strategy menu (`sim`, `adversary`),
//! and the closed-form performance models used to compare a single
//! protocol run against per-component leader-based agreement (`analysis`).
//!
//! Everything is deterministic for a fixed seed: a run is a pure function
//! of its configuration, which makes counterexamples replayable and lets
//! the statistical test suites pin exact seeds.

pub mod adversary;
pub mod bundle;
pub mod analysis;
pub mod crypto;
pub mod encoding;
pub mod node;
pub mod protocol;
pub mod sim;
pub mod sortition;
pub mod stats;

pub use crypto::{Digest, HashEngine, KeyPair, PublicKey, Signature, SigRegistry};
pub use protocol::{BitList, Certificate, CostModel, StepKind, StepMessage, Tally, ValueList};
pub use sim::{RunMetrics, SimConfig, SimOutcome};
pub use sortition::{AssumptionReport, Credential, SortitionParams};
