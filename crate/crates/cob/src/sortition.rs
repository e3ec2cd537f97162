//! The step-player lottery and the committee-size assumption checker.
//!
//! Every user holds, for every step `s`, exactly one credential candidate:
//! the unique signature over `H(r ‖ s)`. Decoding the hash of that signature
//! through φ gives a uniform value in `(0, 1]`, and the user is a *player*
//! of step `s` iff that value is at most `n / N` (adjusted upward when the
//! scheme may fail to sign, or tried with counters in the weighted variant).
//! Anyone can recompute the decoding from public data, so selection is
//! privately discoverable and publicly provable.
//!
//! The checker quantifies the two committee conditions that all counting
//! arguments rest on: with `t_H = ⌊2n/3⌋ + 1`, each step must have more
//! than `t_H` honest players, and `|honest| + 2·|malicious| < 2·t_H`.
//! Probabilities are computed by exact binomial summation in log space.

use crate::crypto::{phi, Digest, HashEngine, KeyPair, PublicKey, Signature, SigRegistry};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Supermajority threshold `⌊2n/3⌋ + 1`.
pub fn supermajority_threshold(n: u64) -> u64 {
    2 * n / 3 + 1
}

#[derive(Debug, Error, PartialEq)]
pub enum SortitionError {
    #[error("honest ratio {0} is not in (2/3, 1]")]
    HonestRatioOutOfRange(f64),
    #[error("committee size {n} is not in [1, {total}]")]
    CommitteeOutOfRange { n: u64, total: u64 },
    #[error("no feasible committee size up to N satisfies the conditions")]
    NoFeasible,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Public sortition parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SortitionParams {
    /// Total user count N.
    pub total_users: u64,
    /// Expected players per step n.
    pub committee: u64,
    /// Reference string, independent from every public key.
    pub reference: Vec<u8>,
    /// Signing-failure rate `f` as an exact rational `f_num / f_den`,
    /// `0 <= f < 1`. The selection threshold becomes `n / (N (1 - f))`.
    pub failure_num: u64,
    pub failure_den: u64,
    /// Per-user counter bounds `t_i` for the weighted variant. Users absent
    /// from the map use the plain single-attempt lottery.
    #[serde(default)]
    pub weights: std::collections::BTreeMap<PublicKey, u32>,
}

impl SortitionParams {
    pub fn new(total_users: u64, committee: u64, reference: Vec<u8>) -> Self {
        SortitionParams {
            total_users,
            committee,
            reference,
            failure_num: 0,
            failure_den: 1,
            weights: std::collections::BTreeMap::new(),
        }
    }

    /// Selection threshold as an exact rational (numerator, denominator):
    /// `n * f_den / (N * (f_den - f_num))`.
    pub fn threshold(&self) -> (BigUint, BigUint) {
        let num = BigUint::from(self.committee) * self.failure_den;
        let den = BigUint::from(self.total_users) * (self.failure_den - self.failure_num);
        (num, den)
    }

    /// The message a step-`s` credential signs: `H(r ‖ s)`, or
    /// `H(r ‖ s ‖ c)` for counter attempt `c` in the weighted variant.
    pub fn credential_message(&self, engine: &HashEngine, step: u32, counter: Option<u32>) -> Digest {
        match counter {
            None => engine.hash_parts(&[&self.reference, &step.to_le_bytes()]),
            Some(c) => {
                engine.hash_parts(&[&self.reference, &step.to_le_bytes(), &c.to_le_bytes()])
            }
        }
    }
}

/// Proof of step selection: the unique signature plus its decoded lottery
/// value, recomputable by anyone from public data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub player: PublicKey,
    pub step: u32,
    pub sig: Signature,
    /// Counter used in the weighted variant; `None` for the plain lottery.
    pub counter: Option<u32>,
}

impl Credential {
    /// Hash of the credential signature; feeds both the lottery decoding and
    /// the shared-coin extraction.
    pub fn lottery_hash(&self, engine: &HashEngine) -> Digest {
        engine.hash(&self.sig.0)
    }
}

/// Builds the credential of `keys` for step `step`, or `None` when the
/// lottery does not select the user. With a weight bound `t_i` configured
/// for the user, counters `1..=t_i` are tried in order and the first
/// winning pair is returned.
pub fn make_credential(
    registry: &SigRegistry,
    keys: &KeyPair,
    params: &SortitionParams,
    step: u32,
) -> Option<Credential> {
    let engine = registry.engine();
    let (p_num, p_den) = params.threshold();
    match params.weights.get(&keys.pk) {
        None => {
            let msg = params.credential_message(&engine, step, None);
            let sig = registry.sign(&keys.sk, msg.as_bytes());
            let lottery = phi(&engine.hash(&sig.0));
            lottery.at_most(&p_num, &p_den).then_some(Credential {
                player: keys.pk,
                step,
                sig,
                counter: None,
            })
        }
        Some(&bound) => (1..=bound).find_map(|c| {
            let msg = params.credential_message(&engine, step, Some(c));
            let sig = registry.sign(&keys.sk, msg.as_bytes());
            let lottery = phi(&engine.hash(&sig.0));
            lottery.at_most(&p_num, &p_den).then_some(Credential {
                player: keys.pk,
                step,
                sig,
                counter: Some(c),
            })
        }),
    }
}

/// Third-party credential check from public data only: the signature must
/// verify over the step-bound challenge and the recomputed lottery value
/// must pass the threshold. Malformed input simply returns `false`.
pub fn verify_credential(
    registry: &SigRegistry,
    cred: &Credential,
    params: &SortitionParams,
) -> bool {
    if cred.step == 0 {
        return false;
    }
    match (cred.counter, params.weights.get(&cred.player)) {
        (None, None) => {}
        (Some(c), Some(&bound)) if c >= 1 && c <= bound => {}
        _ => return false,
    }
    let engine = registry.engine();
    let msg = params.credential_message(&engine, cred.step, cred.counter);
    if !registry.verify(&cred.player, &cred.sig, msg.as_bytes()) {
        return false;
    }
    let (p_num, p_den) = params.threshold();
    phi(&engine.hash(&cred.sig.0)).at_most(&p_num, &p_den)
}

/// Result of checking the two per-step committee conditions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub committee: u64,
    pub threshold: u64,
    /// P(|honest players| > t_H).
    pub p_cond1: f64,
    /// P(|honest| + 2 |malicious| < 2 t_H).
    pub p_cond2: f64,
    pub epsilon: f64,
    pub satisfied: bool,
}

/// Log-space binomial pmf over `0..=n` for `Binomial(n, p)`.
///
/// Built by the telescoping recurrence on log pmf values, so it is exact
/// summation up to f64 rounding and never under- or overflows even for
/// n in the millions.
fn binomial_log_pmf(n: u64, p: f64) -> Vec<f64> {
    if n == 0 {
        return vec![0.0];
    }
    if p <= 0.0 {
        let mut v = vec![f64::NEG_INFINITY; n as usize + 1];
        v[0] = 0.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![f64::NEG_INFINITY; n as usize + 1];
        v[n as usize] = 0.0;
        return v;
    }
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let mut v = Vec::with_capacity(n as usize + 1);
    let mut cur = n as f64 * ln_q;
    v.push(cur);
    for k in 0..n {
        // pmf(k+1) = pmf(k) * (n-k)/(k+1) * p/q
        cur += ((n - k) as f64).ln() - ((k + 1) as f64).ln() + ln_p - ln_q;
        v.push(cur);
    }
    v
}

/// Stable sum of probabilities given in log space.
fn sum_exp(logs: impl Iterator<Item = f64>) -> f64 {
    // Probabilities here are bounded by 1, so accumulating exp() directly is
    // stable; the log form only protects the individual terms.
    logs.map(|l| if l == f64::NEG_INFINITY { 0.0 } else { l.exp() })
        .sum()
}

/// Checks the committee conditions for `n` players drawn with probability
/// `n/N` from `round(h N)` honest and `N - round(h N)` malicious users,
/// with the two populations binomially distributed and independent.
pub fn check_assumptions(
    total_users: u64,
    honest_ratio: f64,
    committee: u64,
    epsilon: f64,
) -> Result<AssumptionReport, SortitionError> {
    if !(honest_ratio > 2.0 / 3.0 && honest_ratio <= 1.0) {
        return Err(SortitionError::HonestRatioOutOfRange(honest_ratio));
    }
    if committee < 1 || committee > total_users {
        return Err(SortitionError::CommitteeOutOfRange {
            n: committee,
            total: total_users,
        });
    }
    if epsilon <= 0.0 || epsilon.is_nan() {
        return Err(SortitionError::InvalidParameter(format!(
            "epsilon {epsilon} must be positive"
        )));
    }
    let honest = (honest_ratio * total_users as f64).round() as u64;
    let malicious = total_users - honest;
    let p = committee as f64 / total_users as f64;
    let t_h = supermajority_threshold(committee);

    let honest_logs = binomial_log_pmf(honest, p);
    // cond1: P(HP > t_H)
    let p_cond1 = if (t_h as usize) < honest_logs.len() {
        sum_exp(honest_logs.iter().copied().skip(t_h as usize + 1)).min(1.0)
    } else {
        0.0
    };

    // cond2: P(HP + 2 MP < 2 t_H) = sum_j P(MP = j) P(HP < 2 t_H - 2 j).
    // Uses the honest CDF table once.
    let mut honest_cdf = Vec::with_capacity(honest_logs.len() + 1);
    honest_cdf.push(0.0f64); // P(HP < 0)
    let mut acc = 0.0;
    for &l in &honest_logs {
        acc += if l == f64::NEG_INFINITY { 0.0 } else { l.exp() };
        honest_cdf.push(acc.min(1.0)); // honest_cdf[k+1] = P(HP <= k)
    }
    let malicious_logs = binomial_log_pmf(malicious, p);
    let mut p_cond2 = 0.0;
    for (j, &lm) in malicious_logs.iter().enumerate() {
        let bound = 2i64 * t_h as i64 - 2 * j as i64; // need HP < bound
        if bound <= 0 {
            continue;
        }
        let idx = (bound as usize).min(honest_cdf.len() - 1);
        let pm = if lm == f64::NEG_INFINITY { 0.0 } else { lm.exp() };
        p_cond2 += pm * honest_cdf[idx];
    }
    p_cond2 = p_cond2.min(1.0);

    let satisfied = p_cond1 >= 1.0 - epsilon && p_cond2 >= 1.0 - epsilon;
    Ok(AssumptionReport {
        committee,
        threshold: t_h,
        p_cond1,
        p_cond2,
        epsilon,
        satisfied,
    })
}

/// Smallest committee size `n <= N` whose assumption report is satisfied.
pub fn min_committee_size(
    total_users: u64,
    honest_ratio: f64,
    epsilon: f64,
) -> Result<u64, SortitionError> {
    for n in 1..=total_users {
        if check_assumptions(total_users, honest_ratio, n, epsilon)?.satisfied {
            return Ok(n);
        }
    }
    Err(SortitionError::NoFeasible)
}
