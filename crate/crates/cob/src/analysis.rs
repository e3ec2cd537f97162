//! Closed-form performance models.
//!
//! The number of coin-flip loops a run needs is upper-bounded by
//! `χ_{ℓ,q}`: the number of rounds of ℓ simultaneous Bernoulli(q) coins
//! until every coin has come up heads at least once, with `q = h/2`. From
//! its distribution follow the expected step counts and the total broadcast
//! byte weights for a full protocol run, and the corresponding per-component
//! leader-based baseline (two border cases: honest leaders, and malicious
//! leaders that drop their component).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("per-trial probability {0} is not in (0, 1)")]
    BadProbability(f64),
    #[error("honest ratio {0} is not in (2/3, 1]")]
    BadHonestRatio(f64),
    #[error("tolerance must be positive")]
    BadTolerance,
}

/// Parameters of the loop-count variable: ℓ ambiguous components, each
/// resolving per round with probability `q` (= h/2).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChiParams {
    pub ell: u64,
    pub q: f64,
}

impl ChiParams {
    pub fn new(ell: u64, q: f64) -> Result<Self, AnalysisError> {
        if ell > 0 && !(q > 0.0 && q < 1.0) {
            return Err(AnalysisError::BadProbability(q));
        }
        Ok(ChiParams { ell, q })
    }

    pub fn from_honest_ratio(ell: u64, h: f64) -> Result<Self, AnalysisError> {
        if !(h > 2.0 / 3.0 && h <= 1.0) {
            return Err(AnalysisError::BadHonestRatio(h));
        }
        ChiParams::new(ell, h / 2.0)
    }
}

/// `P(χ = w) = (1 - (1-q)^w)^ℓ - (1 - (1-q)^{w-1})^ℓ` for `w >= 1`;
/// ℓ = 0 degenerates to χ ≡ 0.
pub fn chi_pmf(w: u64, params: &ChiParams) -> f64 {
    if params.ell == 0 {
        return if w == 0 { 1.0 } else { 0.0 };
    }
    if w == 0 {
        return 0.0;
    }
    chi_cdf(w, params) - chi_cdf(w - 1, params)
}

/// `P(χ <= w) = (1 - (1-q)^w)^ℓ`, evaluated through `ln_1p`/`exp` so large
/// ℓ stays accurate.
pub fn chi_cdf(w: u64, params: &ChiParams) -> f64 {
    if params.ell == 0 {
        return 1.0;
    }
    if w == 0 {
        return 0.0;
    }
    let qbar = 1.0 - params.q;
    // (1 - qbar^w)^ell = exp(ell * ln(1 - qbar^w))
    let qbar_w = (w as f64 * qbar.ln()).exp();
    (params.ell as f64 * (-qbar_w).ln_1p()).exp()
}

/// `E[χ]` by tail summation `Σ_{w>=0} P(χ > w)`, truncated when the
/// remainder bound `ℓ (1-q)^w / q` drops below `tol`.
pub fn chi_mean(params: &ChiParams, tol: f64) -> Result<f64, AnalysisError> {
    if tol <= 0.0 || tol.is_nan() {
        return Err(AnalysisError::BadTolerance);
    }
    if params.ell == 0 {
        return Ok(0.0);
    }
    let qbar = 1.0 - params.q;
    let mut sum = 0.0f64;
    let mut w = 0u64;
    loop {
        let tail = 1.0 - chi_cdf(w, params); // P(χ > w)
        sum += tail;
        w += 1;
        // P(χ > w) <= ℓ qbar^w, so the rest of the series is bounded by
        // ℓ qbar^w / q.
        let bound = params.ell as f64 * (w as f64 * qbar.ln()).exp() / params.q;
        if bound < tol {
            return Ok(sum);
        }
        if w > 1_000_000 {
            return Ok(sum); // q extremely small; remainder below bound anyway
        }
    }
}

/// Exact `E[χ]` for rational `q` via the finite alternating form
/// `Σ_{k=1}^{ℓ} (-1)^{k+1} C(ℓ,k) / (1 - (1-q)^k)`.
///
/// Denominators grow quickly; intended for the small ℓ the exact
/// acceptance values need.
pub fn chi_mean_exact(ell: u64, q: &BigRational) -> BigRational {
    if ell == 0 {
        return BigRational::zero();
    }
    let one = BigRational::one();
    let qbar = &one - q;
    let mut sum = BigRational::zero();
    let mut binom = BigInt::one(); // C(ell, k) built incrementally
    let mut qbar_k = BigRational::one();
    for k in 1..=ell {
        binom = binom * BigInt::from(ell - k + 1) / BigInt::from(k);
        qbar_k *= &qbar;
        let term = BigRational::from(binom.clone()) / (&one - &qbar_k);
        if k % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    sum
}

/// Expected number of broadcasting steps of a full run: `4 + 3 E[χ_{ℓ,h/2}]`.
pub fn expected_cob_steps(ell: u64, h: f64) -> Result<f64, AnalysisError> {
    let params = ChiParams::from_honest_ratio(ell, h)?;
    Ok(4.0 + 3.0 * chi_mean(&params, 1e-12)?)
}

/// Expected broadcasting steps of the leader-based baseline: `5 + 6/h`.
pub fn expected_alg_steps(h: f64) -> Result<f64, AnalysisError> {
    if !(h > 2.0 / 3.0 && h <= 1.0) {
        return Err(AnalysisError::BadHonestRatio(h));
    }
    Ok(5.0 + 6.0 / h)
}

/// Probability that a leader is honest: `h² (1 + h - h²)`.
pub fn honest_leader_probability(h: f64) -> f64 {
    h * h * (1.0 + h - h * h)
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Expected bytes broadcast in one full run over ℓ components:
/// `n (2 (100 + 32 ℓ) + (E[steps] - 2)(ℓ/8 + 200))`, exact given an exact
/// expected step count.
pub fn cob_weight_exact(ell: u64, expected_steps: &BigRational, n: u64) -> BigRational {
    let ell_r = BigRational::from(BigInt::from(ell));
    let n_r = BigRational::from(BigInt::from(n));
    let long = ratio(2, 1) * (ratio(100, 1) + ratio(32, 1) * &ell_r);
    let short = (expected_steps - ratio(2, 1)) * (&ell_r / ratio(8, 1) + ratio(200, 1));
    n_r * (long + short)
}

/// f64 version of [`cob_weight_exact`] with `E[steps]` from [`expected_cob_steps`].
pub fn cob_weight(ell: u64, h: f64, n: u64) -> Result<f64, AnalysisError> {
    let steps = expected_cob_steps(ell, h)?;
    Ok(n as f64 * (2.0 * (100.0 + 32.0 * ell as f64) + (steps - 2.0) * (ell as f64 / 8.0 + 200.0)))
}

/// Baseline with honest leaders: `ℓ n (264 + (2 + 6/h) 200)`.
pub fn alg_weight_honest_exact(ell: u64, h: &BigRational, n: u64) -> BigRational {
    let per_run = ratio(264, 1) + (ratio(2, 1) + ratio(6, 1) / h) * ratio(200, 1);
    BigRational::from(BigInt::from(ell)) * BigRational::from(BigInt::from(n)) * per_run
}

pub fn alg_weight_honest(ell: u64, h: f64, n: u64) -> Result<f64, AnalysisError> {
    if !(h > 2.0 / 3.0 && h <= 1.0) {
        return Err(AnalysisError::BadHonestRatio(h));
    }
    Ok(ell as f64 * n as f64 * (264.0 + (2.0 + 6.0 / h) * 200.0))
}

/// Baseline lower bound when malicious leaders drop their component:
/// `ℓ n (264 + 200 (2 + 6 h (1 + h - h²)))`.
pub fn alg_weight_drop_exact(ell: u64, h: &BigRational, n: u64) -> BigRational {
    let p_term = ratio(6, 1) * h * (BigRational::one() + h - h * h);
    let per_run = ratio(264, 1) + ratio(200, 1) * (ratio(2, 1) + p_term);
    BigRational::from(BigInt::from(ell)) * BigRational::from(BigInt::from(n)) * per_run
}

pub fn alg_weight_drop(ell: u64, h: f64, n: u64) -> Result<f64, AnalysisError> {
    if !(h > 2.0 / 3.0 && h <= 1.0) {
        return Err(AnalysisError::BadHonestRatio(h));
    }
    Ok(ell as f64 * n as f64 * (264.0 + 200.0 * (2.0 + 6.0 * h * (1.0 + h - h * h))))
}

/// One row of the comparison table, in bytes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FigureRow {
    pub ell: u64,
    pub cob_bytes: f64,
    pub alg_honest_bytes: f64,
    pub alg_drop_bytes: f64,
}

impl FigureRow {
    pub fn to_mb(&self) -> (f64, f64, f64) {
        (
            self.cob_bytes / 1e6,
            self.alg_honest_bytes / 1e6,
            self.alg_drop_bytes / 1e6,
        )
    }
}

/// Data behind the comparison figures for `ℓ` over an inclusive range.
pub fn figure_data(
    h: f64,
    n: u64,
    ell_range: std::ops::RangeInclusive<u64>,
) -> Result<Vec<FigureRow>, AnalysisError> {
    ell_range
        .map(|ell| {
            Ok(FigureRow {
                ell,
                cob_bytes: cob_weight(ell, h, n)?,
                alg_honest_bytes: alg_weight_honest(ell, h, n)?,
                alg_drop_bytes: alg_weight_drop(ell, h, n)?,
            })
        })
        .collect()
}

/// CSV emission with the documented header `(ell, cob_mb, alg_honest_mb, alg_drop_mb)`.
pub fn figure_csv(rows: &[FigureRow]) -> String {
    let mut out = String::from("ell,cob_mb,alg_honest_mb,alg_drop_mb\n");
    for r in rows {
        let (c, ah, ad) = r.to_mb();
        out.push_str(&format!("{},{},{},{}\n", r.ell, c, ah, ad));
    }
    out
}

/// Convert an exact rational byte count to u64 when integral.
pub fn exact_bytes_to_u64(r: &BigRational) -> Option<u64> {
    if r.denom().is_one() && !r.is_negative() {
        r.numer().to_u64()
    } else {
        None
    }
}

/// Self-contained SVG rendering of the three comparison curves (MB against
/// ℓ), linear or log-log axes.
pub fn figure_svg(rows: &[FigureRow], log_scale: bool) -> String {
    assert!(!rows.is_empty());
    let (w, h, ml, mb) = (720.0, 480.0, 70.0, 50.0);
    let tx = |x: f64| -> f64 {
        if log_scale {
            x.log10()
        } else {
            x
        }
    };
    let xs: Vec<f64> = rows.iter().map(|r| tx(r.ell as f64)).collect();
    let all_y: Vec<f64> = rows
        .iter()
        .flat_map(|r| {
            let (c, ah, ad) = r.to_mb();
            [tx(c), tx(ah), tx(ad)]
        })
        .collect();
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = (
        all_y.iter().cloned().fold(f64::INFINITY, f64::min),
        all_y.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let sx = |x: f64| ml + (x - x0) / (x1 - x0).max(1e-12) * (w - ml - 20.0);
    let sy = |y: f64| (h - mb) - (y - y0) / (y1 - y0).max(1e-12) * (h - mb - 20.0);
    let series = |f: &dyn Fn(&FigureRow) -> f64| -> String {
        rows.iter()
            .map(|r| format!("{:.2},{:.2}", sx(tx(r.ell as f64)), sy(tx(f(r) / 1e6))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    s.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"20\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb,
        h - mb,
        w - 20.0,
        h - mb
    ));
    for (name, color, f) in [
        ("cob", "#1f77b4", &(|r: &FigureRow| r.cob_bytes) as &dyn Fn(&FigureRow) -> f64),
        ("baseline honest leaders", "#d62728", &|r: &FigureRow| {
            r.alg_honest_bytes
        }),
        ("baseline dropping leaders", "#ff9f43", &|r: &FigureRow| {
            r.alg_drop_bytes
        }),
    ] {
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            series(f)
        ));
        let _ = name;
    }
    let axis = if log_scale { "log10" } else { "linear" };
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\">components ({axis})</text>\n\
         <text x=\"12\" y=\"16\" font-size=\"13\">data broadcast, MB ({axis})</text>\n\
         <text x=\"{}\" y=\"36\" font-size=\"12\" fill=\"#1f77b4\">cob</text>\n\
         <text x=\"{}\" y=\"52\" font-size=\"12\" fill=\"#d62728\">baseline (honest leaders)</text>\n\
         <text x=\"{}\" y=\"68\" font-size=\"12\" fill=\"#ff9f43\">baseline (dropping leaders)</text>\n",
        w / 2.0 - 40.0,
        h - 14.0,
        ml + 10.0,
        ml + 10.0,
        ml + 10.0,
    ));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h_08() -> BigRational {
        ratio(4, 5)
    }

    #[test]
    fn chi_pmf_matches_hand_values() {
        // ℓ = 1, h = 0.8 -> geometric(0.4): P(χ=1) = 0.4.
        let p = ChiParams::from_honest_ratio(1, 0.8).unwrap();
        assert!((chi_pmf(1, &p) - 0.4).abs() < 1e-12);
        assert!((chi_pmf(2, &p) - 0.4 * 0.6).abs() < 1e-12);
        // ℓ = 2: P(χ=1) = 0.4² = 0.16 by independence.
        let p2 = ChiParams::from_honest_ratio(2, 0.8).unwrap();
        assert!((chi_pmf(1, &p2) - 0.16).abs() < 1e-12);
        // ℓ = 0: degenerate at zero.
        let p0 = ChiParams::new(0, 0.4).unwrap();
        assert_eq!(chi_pmf(0, &p0), 1.0);
        assert_eq!(chi_pmf(3, &p0), 0.0);
    }

    #[test]
    fn chi_pmf_mass_sums_to_one() {
        for ell in [1u64, 10, 100] {
            let p = ChiParams::from_honest_ratio(ell, 0.8).unwrap();
            let mut mass = 0.0;
            for w in 1..10_000 {
                mass += chi_pmf(w, &p);
            }
            assert!((mass - 1.0).abs() < 1e-10, "ell={ell}: mass={mass}");
        }
    }

    #[test]
    fn chi_mean_closed_forms() {
        let p = ChiParams::from_honest_ratio(1, 0.8).unwrap();
        assert!((chi_mean(&p, 1e-12).unwrap() - 2.5).abs() < 1e-9);
        let p0 = ChiParams::new(0, 0.4).unwrap();
        assert_eq!(chi_mean(&p0, 1e-12).unwrap(), 0.0);
        // exact evaluator agrees with the series for several ℓ
        let q = ratio(2, 5);
        for ell in [1u64, 2, 3, 7, 20] {
            let exact = chi_mean_exact(ell, &q).to_f64().unwrap();
            let series = chi_mean(&ChiParams::new(ell, 0.4).unwrap(), 1e-13).unwrap();
            assert!(
                (exact - series).abs() < 1e-9,
                "ell={ell}: exact={exact} series={series}"
            );
        }
        assert_eq!(chi_mean_exact(1, &q), ratio(5, 2));
    }

    #[test]
    fn chi_stochastic_dominance_in_ell() {
        // CDF(ℓ, w) <= CDF(ℓ', w) for ℓ > ℓ'.
        let p4 = ChiParams::new(4, 0.4).unwrap();
        let p2 = ChiParams::new(2, 0.4).unwrap();
        for w in 0..200 {
            assert!(chi_cdf(w, &p4) <= chi_cdf(w, &p2) + 1e-15);
        }
    }

    #[test]
    fn expected_steps_values() {
        assert!((expected_cob_steps(1, 0.8).unwrap() - 11.5).abs() < 1e-9);
        assert!((expected_cob_steps(0, 0.8).unwrap() - 4.0).abs() < 1e-12);
        assert!((expected_alg_steps(0.8).unwrap() - 12.5).abs() < 1e-12);
        assert!((expected_alg_steps(1.0).unwrap() - 11.0).abs() < 1e-12);
        // monotone non-decreasing in ℓ at fixed h
        let mut last = 0.0;
        for ell in 0..50 {
            let s = expected_cob_steps(ell, 0.8).unwrap();
            assert!(s >= last - 1e-12);
            last = s;
        }
        // alg steps decreasing in h
        assert!(expected_alg_steps(0.9).unwrap() < expected_alg_steps(0.8).unwrap());
    }

    #[test]
    fn weight_values_at_ell_one() {
        // Hand-derived from the formulas at h = 0.8, n = 4000.
        let h = h_08();
        let alg_h = alg_weight_honest_exact(1, &h, 4000);
        assert_eq!(exact_bytes_to_u64(&alg_h), Some(8_656_000));
        let alg_d = alg_weight_drop_exact(1, &h, 4000);
        assert_eq!(exact_bytes_to_u64(&alg_d), Some(7_110_400));
        let steps = ratio(4, 1) + ratio(3, 1) * chi_mean_exact(1, &ratio(2, 5));
        assert_eq!(steps, ratio(23, 2)); // 11.5
        let cob = cob_weight_exact(1, &steps, 4000);
        assert_eq!(exact_bytes_to_u64(&cob), Some(8_660_750));
        // f64 paths agree
        assert!((cob_weight(1, 0.8, 4000).unwrap() - 8_660_750.0).abs() < 1e-3);
        assert!((alg_weight_honest(1, 0.8, 4000).unwrap() - 8_656_000.0).abs() < 1e-6);
        assert!((alg_weight_drop(1, 0.8, 4000).unwrap() - 7_110_400.0).abs() < 1e-6);
    }

    #[test]
    fn weight_degenerate_ell_zero() {
        // ℓ -> 0 limit of the formula: n (200 + 2·200) = 600 n.
        assert!((cob_weight(0, 0.8, 4000).unwrap() - 4000.0 * 600.0).abs() < 1e-9);
    }

    #[test]
    fn leader_probability() {
        assert!((honest_leader_probability(1.0) - 1.0).abs() < 1e-12);
        assert!((honest_leader_probability(0.8) - 0.7424).abs() < 1e-12);
        // increasing on (2/3, 1]
        let mut last = 0.0;
        for i in 0..=33 {
            let h = 2.0 / 3.0 + (i as f64 / 100.0);
            if h > 1.0 {
                break;
            }
            let p = honest_leader_probability(h);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn figure_rows_qualitative_shape() {
        let rows = figure_data(0.8, 4000, 1..=200).unwrap();
        assert_eq!(rows[0].ell, 1);
        for r in &rows {
            assert!(r.alg_drop_bytes <= r.alg_honest_bytes + 1e-9);
            if r.ell >= 2 {
                assert!(r.cob_bytes < r.alg_honest_bytes, "ell={}", r.ell);
                assert!(r.cob_bytes < r.alg_drop_bytes, "ell={}", r.ell);
            }
        }
        let r100 = &rows[99];
        assert!(r100.cob_bytes / r100.alg_honest_bytes < 0.1);
        let csv = figure_csv(&rows[..1]);
        assert!(csv.starts_with("ell,cob_mb,alg_honest_mb,alg_drop_mb\n"));
        let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(fields[0], "1");
        assert!((fields[1].parse::<f64>().unwrap() - 8.66075).abs() < 1e-9);
        assert!((fields[2].parse::<f64>().unwrap() - 8.656).abs() < 1e-12);
        assert!((fields[3].parse::<f64>().unwrap() - 7.1104).abs() < 1e-12);
    }
}
