use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{median, CheckResult, VerdictRule, VerifyError};
use crate::coupling::{CouplingReport, ScaleOutput};
use crate::geometry::validate_parameters;

/// Names of the scaling statistics, in suite order. The first is the mean
/// squared transform residual over `[k]^alpha`; the rest are divided by `[N_k]^{1/2}`.
pub const TERM_STATISTICS: [&str; 9] = [
    "e_squared",
    "sum_abs_e",
    "t2_magnitude",
    "sum_abs_w",
    "sum_abs_v",
    "max_d",
    "max_d_hat",
    "max_m",
    "max_m_hat",
];

fn term_value(name: &str, s: &ScaleOutput) -> f64 {
    match name {
        "sum_abs_e" => s.terms.abs_e,
        "t2_magnitude" => s.terms.abs_t2,
        "sum_abs_w" => s.terms.abs_w,
        "sum_abs_v" => s.terms.abs_v,
        "max_d" => s.remainder.max_d(),
        "max_d_hat" => s.remainder.max_d_hat(),
        "max_m" => s.remainder.max_m(),
        "max_m_hat" => s.remainder.max_m_hat(),
        _ => unreachable!("unknown term statistic {name}"),
    }
}

fn claim(name: &str) -> &'static str {
    match name {
        "e_squared" => "E[e_k^2] / [k]^alpha is nonincreasing in the block scale",
        "sum_abs_e" => "sum |e_i| over L_k grows slower than [N_k]^{1/2}",
        "t2_magnitude" => "sum sqrt|B_i| a_i |eta_i| over L_k grows slower than [N_k]^{1/2}",
        "sum_abs_w" => "sum |w_i| over L_k grows slower than [N_k]^{1/2}",
        "sum_abs_v" => "sum |v_i| over L_k grows slower than [N_k]^{1/2}",
        "max_d" => "strip maxima D_s(N_k) grow slower than [N_k]^{1/2}",
        "max_d_hat" => "sheet strip maxima grow slower than [N_k]^{1/2}",
        "max_m" => "inter-boundary maxima M_k^{(J)} grow slower than [N_k]^{1/2}",
        _ => "sheet inter-boundary maxima grow slower than [N_k]^{1/2}",
    }
}

/// Scaling checks of the coupling terms across the experiment's scales:
/// replicate medians (replicate mean for `e_squared`) must be nonincreasing.
pub fn term_bound_suite(report: &CouplingReport) -> Result<Vec<CheckResult>, VerifyError> {
    let scales = &report.experiment.scales;
    if scales.len() < 3 {
        return Err(VerifyError::TooFewScales(scales.len()));
    }
    let alpha = f64::from(report.experiment.params.alpha);
    let replicates = report.replicates.len().max(1) as f64;
    let violated: Vec<String> = validate_parameters(&report.experiment.params)
        .failures()
        .map(|c| {
            format!(
                "{}: {} fails ({} vs {})",
                c.name, c.inequality, c.lhs, c.rhs
            )
        })
        .collect();
    let sizes: Vec<f64> = scales.iter().map(|k| k.product_f64()).collect();
    let mut out = Vec::new();
    for name in TERM_STATISTICS {
        let stats: Vec<f64> = (0..scales.len())
            .map(|i| {
                if name == "e_squared" {
                    let total: f64 = report
                        .replicates
                        .iter()
                        .map(|r| r.scales[i].e_k.powi(2))
                        .sum();
                    total / replicates / report.replicates[0].scales[i].k_volume.powf(alpha)
                } else {
                    let values: Vec<f64> = report
                        .replicates
                        .iter()
                        .map(|r| term_value(name, &r.scales[i]) / r.scales[i].n_volume.sqrt())
                        .collect();
                    median(&values)
                }
            })
            .collect();
        let mut details = BTreeMap::from([("replicates".to_string(), replicates)]);
        if stats.len() >= 2 && stats[0] > 0.0 {
            details.insert("last_over_first".into(), stats[stats.len() - 1] / stats[0]);
        }
        let mut check = CheckResult::new(
            name,
            claim(name),
            sizes.clone(),
            stats,
            VerdictRule::NonIncreasing,
            details,
        );
        for v in &violated {
            check = check.with_note(format!("parameter hypothesis violated: {v}"));
        }
        out.push(check);
    }
    Ok(out)
}

/// `[N]`-range of the profile check and its growth allowance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileWindow {
    pub lo: f64,
    pub hi: f64,
    pub factor: f64,
}

impl Default for ProfileWindow {
    fn default() -> Self {
        ProfileWindow {
            lo: 1e3,
            hi: 2.5e5,
            factor: 1.5,
        }
    }
}

impl ProfileWindow {
    /// Split point of the two halves, on the logarithmic scale.
    pub fn split(&self) -> f64 {
        (self.lo * self.hi).sqrt()
    }
}

/// Replicate median of the largest `|S_N - W_N| / [N]^{1/2 - eps}` over each
/// half of the window; the second may exceed the first by at most `factor`.
pub fn coupling_profile_check(
    report: &CouplingReport,
    window: ProfileWindow,
) -> Result<CheckResult, VerifyError> {
    let mid = window.split();
    let mut halves = [Vec::new(), Vec::new()];
    for rep in &report.replicates {
        let first = rep
            .profile
            .probes
            .iter()
            .filter(|p| p.volume >= window.lo && p.volume <= mid);
        let second = rep
            .profile
            .probes
            .iter()
            .filter(|p| p.volume > mid && p.volume <= window.hi);
        for (half, probes) in halves
            .iter_mut()
            .zip([first.collect::<Vec<_>>(), second.collect()])
        {
            let best = probes.iter().map(|p| p.ratio).reduce(f64::max);
            half.push(best.ok_or_else(|| {
                VerifyError::InvalidConfig("a window half has no probe points".into())
            })?);
        }
    }
    let stats = vec![median(&halves[0]), median(&halves[1])];
    let details = BTreeMap::from([
        ("epsilon".to_string(), report.experiment.epsilon),
        ("split".to_string(), mid),
        ("growth".to_string(), stats[1] / stats[0]),
    ]);
    Ok(CheckResult::new(
        "coupling_profile",
        "max |S_N - W_N| / [N]^{1/2 - eps} over wedge probes stays bounded as [N] grows",
        vec![window.lo, mid, window.hi],
        stats,
        VerdictRule::GrowthAtMost {
            factor: window.factor,
        },
        details,
    ))
}

/// Median over replicates of `|eta_k - xi_k|` at each scale, restricted to
/// `|xi_k| <= K sqrt(log [k])`; `K` defaults to half of `sqrt(2 r beta/(2 + r))`.
pub fn transform_residual_check(
    report: &CouplingReport,
    k_const: Option<f64>,
) -> Result<CheckResult, VerifyError> {
    let params = &report.experiment.params;
    let r = params.r;
    let k_const = k_const.unwrap_or(0.5 * (2.0 * r * f64::from(params.beta) / (2.0 + r)).sqrt());
    let scales = &report.experiment.scales;
    let mut stats = Vec::new();
    let mut details = BTreeMap::from([("k_const".to_string(), k_const)]);
    for k in scales {
        let window = k_const * k.product_f64().ln().max(0.0).sqrt();
        let values: Vec<f64> = report
            .replicates
            .iter()
            .filter_map(|rep| rep.stats.get(k))
            .filter(|b| b.xi.abs() <= window)
            .map(|b| (b.eta - b.xi).abs())
            .collect();
        details.insert(format!("kept_{k}"), values.len() as f64);
        stats.push(median(&values));
    }
    Ok(CheckResult::new(
        "transform_residual",
        "|eta_k - xi_k| shrinks with [k] inside the window |xi_k| <= K sqrt(log [k])",
        scales.iter().map(|k| k.product_f64()).collect(),
        stats,
        VerdictRule::NonIncreasing,
        details,
    ))
}

/// Pairwise empirical correlations of the `eta_i` over replicates. The
/// statistic is the fraction of pairs within three standard errors of 0.
pub fn eta_correlation_check(report: &CouplingReport) -> Result<CheckResult, VerifyError> {
    let reps = report.replicates.len();
    if reps < 10 {
        return Err(VerifyError::TooFewSamples {
            needed: 10,
            got: reps,
        });
    }
    let blocks = report.replicates[0].stats.records.len();
    let columns: Vec<Vec<f64>> = (0..blocks)
        .map(|b| {
            report
                .replicates
                .iter()
                .map(|r| r.stats.records[b].eta)
                .collect()
        })
        .collect();
    let standardized: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / reps as f64;
            let sd = (c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / reps as f64).sqrt();
            c.iter().map(|x| (x - mean) / sd).collect()
        })
        .collect();
    let se = 1.0 / (reps as f64).sqrt();
    let (mut pairs, mut within, mut worst) = (0usize, 0usize, 0.0f64);
    for i in 0..blocks {
        for j in i + 1..blocks {
            let corr = standardized[i]
                .iter()
                .zip(&standardized[j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / reps as f64;
            pairs += 1;
            within += usize::from(corr.abs() <= 3.0 * se);
            worst = worst.max(corr.abs());
        }
    }
    let fraction = if pairs == 0 {
        1.0
    } else {
        within as f64 / pairs as f64
    };
    let details = BTreeMap::from([
        ("pairs".to_string(), pairs as f64),
        ("standard_error".to_string(), se),
        ("max_abs_correlation".to_string(), worst),
    ]);
    Ok(CheckResult::new(
        "eta_correlation",
        "the eta_i of distinct good blocks are nearly uncorrelated",
        vec![reps as f64],
        vec![fraction],
        VerdictRule::Informational,
        details,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{CdfSource, CouplingExperiment, CouplingMode};
    use crate::field::{FieldModel, Innovation};
    use crate::geometry::Parameters;
    use crate::verify::Verdict;

    fn identity_report(scales: Vec<[u64; 2]>, replicates: usize) -> CouplingReport {
        CouplingExperiment {
            model: FieldModel::iid(2, Innovation::Gaussian),
            params: Parameters::new(2, 3, 2, 0.8).unwrap(),
            scales: scales.into_iter().map(Into::into).collect(),
            replicates,
            master_seed: 5,
            epsilon: 0.05,
            mode: CouplingMode::Identity,
            cdf_source: CdfSource::Exact,
        }
        .run()
        .unwrap()
    }

    #[test]
    fn suite_needs_three_scales() {
        let report = identity_report(vec![[2, 2], [3, 3]], 2);
        assert!(matches!(
            term_bound_suite(&report),
            Err(VerifyError::TooFewScales(2))
        ));
    }

    #[test]
    fn identity_coupling_zeroes_the_transform_terms() {
        let report = identity_report(vec![[2, 2], [3, 3], [4, 4]], 2);
        let suite = term_bound_suite(&report).unwrap();
        let names: Vec<&str> = suite.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, TERM_STATISTICS);
        for name in ["e_squared", "sum_abs_e", "t2_magnitude"] {
            let check = suite.iter().find(|c| c.name == name).unwrap();
            assert!(check.statistics.iter().all(|&x| x == 0.0), "{name}");
            assert_eq!(check.verdict, Verdict::Pass);
        }
        // the desk tuple violates the residual-sum hypothesis
        assert!(suite[0].notes.iter().any(|n| n.contains("residual_sum")));
        let residual = transform_residual_check(&report, None).unwrap();
        assert!(residual.statistics.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn window_splits_on_the_log_scale() {
        let w = ProfileWindow::default();
        assert!((w.split().ln() - 0.5 * (w.lo.ln() + w.hi.ln())).abs() < 1e-12);
    }

    #[test]
    fn correlation_needs_ten_replicates() {
        let report = identity_report(vec![[2, 2], [3, 3], [4, 4]], 3);
        assert!(matches!(
            eta_correlation_check(&report),
            Err(VerifyError::TooFewSamples { needed: 10, got: 3 })
        ));
    }
}
