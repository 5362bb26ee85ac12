//! Monte Carlo checkers for rates, moment bounds, maximal inequalities, the
//! iterated-logarithm statistic and the scaling of the coupling terms.
//!
//! Every [`CheckResult`] stores the statistics it was judged on together with
//! the [`VerdictRule`]; the verdict can be recomputed from the stored data.

mod checks;
mod suite;

pub use checks::{
    clt_rate_check, lil_tracker, max_over_subrectangles, maximal_inequality_check,
    moment_bound_check, running_lil_maximum, square, standardized_sums, CltConfig, LilConfig,
    MaximalConfig, MomentConfig, BRUTE_FORCE_CELLS,
};
pub use suite::{
    coupling_profile_check, eta_correlation_check, term_bound_suite, transform_residual_check,
    ProfileWindow, TERM_STATISTICS,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{Cdf, CouplingError};
use crate::covariance::CovarianceError;
use crate::field::FieldError;
use crate::lattice::LatticeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("need at least 3 scales, got {0}")]
    TooFewScales(usize),
    #[error("invalid check configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Informational,
}

/// How a verdict follows from the recorded statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum VerdictRule {
    /// Each step may rise by at most `band`, and the last value must not exceed
    /// `max(floor, 2 band)`.
    KsSweep {
        band: f64,
        floor: f64,
    },
    /// `max/min <= max_spread`; with `anchor`, the mean of `details[anchor_key]`
    /// must also lie within `anchor_tolerance` (relative) of 1.
    Bounded {
        max_spread: f64,
        anchor_key: Option<String>,
        anchor_tolerance: f64,
    },
    /// Each value at most the previous one.
    NonIncreasing,
    /// `statistics[1] <= factor * statistics[0]`.
    GrowthAtMost {
        factor: f64,
    },
    /// Tail probabilities at `sizes` (the x grid) are nonincreasing and
    /// `max p x^exponent <= c_max`; `details["anchored_exceedance"]` must not
    /// exceed `max_exceedance`.
    TailDominated {
        exponent: f64,
        c_max: f64,
        max_exceedance: f64,
    },
    Informational,
}

impl VerdictRule {
    pub fn evaluate(
        &self,
        sizes: &[f64],
        statistics: &[f64],
        details: &BTreeMap<String, f64>,
    ) -> Verdict {
        let ok = match self {
            VerdictRule::Informational => return Verdict::Informational,
            VerdictRule::KsSweep { band, floor } => {
                statistics.windows(2).all(|w| w[1] <= w[0] + band)
                    && statistics
                        .last()
                        .is_some_and(|&last| last <= floor.max(2.0 * band))
            }
            VerdictRule::Bounded {
                max_spread,
                anchor_key,
                anchor_tolerance,
            } => {
                let (lo, hi) = min_max(statistics);
                let spread_ok = lo > 0.0 && hi / lo <= *max_spread;
                let anchor_ok = match anchor_key {
                    None => true,
                    Some(key) => details
                        .get(key)
                        .is_some_and(|a| (a - 1.0).abs() <= *anchor_tolerance),
                };
                spread_ok && anchor_ok
            }
            VerdictRule::NonIncreasing => statistics.windows(2).all(|w| w[1] <= w[0]),
            VerdictRule::GrowthAtMost { factor } => match statistics {
                [first, second] => *second <= factor * first,
                _ => false,
            },
            VerdictRule::TailDominated {
                exponent,
                c_max,
                max_exceedance,
            } => {
                let decreasing = statistics.windows(2).all(|w| w[1] <= w[0]);
                let c = fitted_tail_constant(sizes, statistics, *exponent);
                let exceed_ok = details
                    .get("anchored_exceedance")
                    .is_some_and(|e| e <= max_exceedance);
                decreasing && c <= *c_max && exceed_ok
            }
        };
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// `max_x p(x) x^exponent`.
pub fn fitted_tail_constant(xs: &[f64], tail: &[f64], exponent: f64) -> f64 {
    xs.iter()
        .zip(tail)
        .map(|(x, p)| p * x.powf(exponent))
        .fold(0.0, f64::max)
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// The claim being tested, in words.
    pub claim: String,
    /// Sweep variable (sizes, scales or thresholds).
    pub sizes: Vec<f64>,
    /// Statistic at each sweep point.
    pub statistics: Vec<f64>,
    pub rule: VerdictRule,
    pub verdict: Verdict,
    pub details: BTreeMap<String, f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl CheckResult {
    pub fn new(
        name: &str,
        claim: &str,
        sizes: Vec<f64>,
        statistics: Vec<f64>,
        rule: VerdictRule,
        details: BTreeMap<String, f64>,
    ) -> Self {
        let verdict = rule.evaluate(&sizes, &statistics, &details);
        CheckResult {
            name: name.into(),
            claim: claim.into(),
            sizes,
            statistics,
            rule,
            verdict,
            details,
            notes: Vec::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    /// Recomputes the verdict from the stored statistics.
    pub fn reevaluate(&self) -> Verdict {
        self.rule
            .evaluate(&self.sizes, &self.statistics, &self.details)
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

/// 1% quantile of the Kolmogorov distribution, scaled: `1.63 / sqrt(R)`.
pub fn kolmogorov_band(samples: usize) -> f64 {
    1.63 / (samples as f64).sqrt()
}

/// `sup_x |F_R(x) - F(x)|`, evaluated on both sides of every jump.
pub fn ks_distance(samples: &[f64], reference: &dyn Cdf) -> Result<f64, VerifyError> {
    if samples.len() < 10 {
        return Err(VerifyError::TooFewSamples {
            needed: 10,
            got: samples.len(),
        });
    }
    if let Some(x) = samples.iter().find(|x| x.is_nan()) {
        return Err(CouplingError::NonFinite(*x).into());
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let r = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = reference.cdf(x);
            ((i + 1) as f64 / r - f).max(f - i as f64 / r)
        })
        .fold(0.0, f64::max))
}

/// Element `n/2` of the sorted values (the upper median for even `n`); `NaN` when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{empirical_cdf, StandardNormal};
    use crate::normal;

    #[test]
    fn ks_of_reference_quantiles() {
        let r = 200;
        let xs: Vec<f64> = (1..=r)
            .map(|i| normal::quantile((i as f64 - 0.5) / r as f64))
            .collect();
        let ks = ks_distance(&xs, &StandardNormal).unwrap();
        assert!(ks <= 0.5 / r as f64 + 1e-12, "{ks}");
    }

    #[test]
    fn ks_of_degenerate_sample() {
        let c = 0.7;
        let ks = ks_distance(&[c; 20], &StandardNormal).unwrap();
        let want = normal::cdf(c).max(1.0 - normal::cdf(c));
        assert!((ks - want).abs() < 1e-15);
        assert!(ks_distance(&[0.0; 9], &StandardNormal).is_err());
    }

    #[test]
    fn ks_against_own_empirical_cdf() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64).collect();
        let f = empirical_cdf(&xs).unwrap();
        // the clamped (R+1) convention differs from the sample's own steps by at most 1/(R+1)
        assert!(ks_distance(&xs, &f).unwrap() <= 1.0 / 51.0 + 1e-12);
    }

    #[test]
    fn verdict_rules() {
        let none = BTreeMap::new();
        let ks = VerdictRule::KsSweep {
            band: 0.02,
            floor: 0.05,
        };
        assert_eq!(ks.evaluate(&[], &[0.1, 0.11, 0.04], &none), Verdict::Pass);
        assert_eq!(ks.evaluate(&[], &[0.1, 0.13, 0.04], &none), Verdict::Fail);
        assert_eq!(ks.evaluate(&[], &[0.1, 0.06], &none), Verdict::Fail);
        let bounded = VerdictRule::Bounded {
            max_spread: 3.0,
            anchor_key: None,
            anchor_tolerance: 0.0,
        };
        assert_eq!(bounded.evaluate(&[], &[1.0, 2.9], &none), Verdict::Pass);
        assert_eq!(bounded.evaluate(&[], &[1.0, 3.1], &none), Verdict::Fail);
        assert_eq!(
            VerdictRule::NonIncreasing.evaluate(&[], &[3.0, 3.0, 1.0], &none),
            Verdict::Pass
        );
        assert_eq!(
            VerdictRule::GrowthAtMost { factor: 1.5 }.evaluate(&[], &[2.0, 3.1], &none),
            Verdict::Fail
        );
        let tail = VerdictRule::TailDominated {
            exponent: 3.0,
            c_max: 10.0,
            max_exceedance: 0.0,
        };
        let details = BTreeMap::from([("anchored_exceedance".to_string(), 0.0)]);
        assert_eq!(
            tail.evaluate(&[2.0, 3.0], &[0.5, 0.1], &details),
            Verdict::Pass
        );
        assert_eq!(
            tail.evaluate(&[2.0, 3.0], &[0.5, 0.6], &details),
            Verdict::Fail
        );
        assert_eq!(
            tail.evaluate(&[2.0, 3.0], &[0.5, 0.1], &none),
            Verdict::Fail
        );
    }

    #[test]
    fn median_picks_middle_element() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 3.0);
        assert!(median(&[]).is_nan());
    }
}
