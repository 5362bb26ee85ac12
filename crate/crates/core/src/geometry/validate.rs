//! Hypothesis report: every inequality the blocking argument needs, with both
//! sides evaluated for a given parameter tuple.

use serde::{Deserialize, Serialize};

use super::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisStatus {
    Pass,
    Fail,
    Informational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    /// Stable identifier of the inequality.
    pub name: String,
    /// Which step of the argument relies on it.
    pub used_by: String,
    /// The inequality, written with symbols.
    pub inequality: String,
    pub lhs: f64,
    pub rhs: f64,
    pub status: HypothesisStatus,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub rho: f64,
    pub r0: f64,
    pub eps0: f64,
    pub alpha0: f64,
    pub delta0: f64,
    pub s: f64,
    pub nu0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub params: Parameters,
    pub derived: DerivedConstants,
    pub checks: Vec<HypothesisCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks
            .iter()
            .all(|c| c.status != HypothesisStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &HypothesisCheck> {
        self.checks
            .iter()
            .filter(|c| c.status == HypothesisStatus::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn gt(name: &str, used_by: &str, inequality: &str, lhs: f64, rhs: f64) -> HypothesisCheck {
    HypothesisCheck {
        name: name.into(),
        used_by: used_by.into(),
        inequality: inequality.into(),
        lhs,
        rhs,
        status: if lhs > rhs {
            HypothesisStatus::Pass
        } else {
            HypothesisStatus::Fail
        },
        note: None,
    }
}

/// Evaluates every hypothesis; never fails, even for structurally invalid tuples.
pub fn validate_parameters(params: &Parameters) -> ValidationReport {
    let d = params.d as f64;
    let (alpha, beta) = (f64::from(params.alpha), f64::from(params.beta));
    let (r, rho, tau, nu) = (params.r, params.rho(), params.tau, params.nu());
    let derived = DerivedConstants {
        rho,
        r0: params.r0(),
        eps0: params.eps0(),
        alpha0: params.alpha0(),
        delta0: params.delta0(),
        s: params.moment_order(),
        nu0: params.nu0(),
    };
    let mut checks = Vec::new();

    let mut order = gt(
        "block_exponent_order",
        "blocking construction",
        "alpha > beta > 1",
        alpha,
        beta,
    );
    if beta <= 1.0 {
        order.status = HypothesisStatus::Fail;
        order.note = Some("beta must exceed 1".into());
    }
    checks.push(order);
    checks.push(gt("dimension", "invariance principle", "d >= 2", d, 1.0));

    let ratio = alpha / beta;
    checks.push(gt(
        "block_ratio_lower",
        "smoothed block density bound, near-independence of the eta",
        "alpha/beta > 2 r0 r/(2+r)",
        ratio,
        2.0 * derived.r0 * r / (2.0 + r),
    ));
    checks.push(gt(
        "block_ratio_upper",
        "smoothed block density bound, near-independence of the eta",
        "alpha/beta < 2(1+r)/(2+r)",
        2.0 * (1.0 + r) / (2.0 + r),
        ratio,
    ));

    // The moment bound needs (C2') with nu >= d nu0; exponential decay
    // (lambda > 0) gives (C2') for every nu, so the requirement is met even
    // when the configured nu sits below d nu0.
    let mut moment = gt(
        "moment_decay",
        "moment bound for rectangle sums",
        "nu >= d nu0",
        nu,
        d * derived.nu0,
    );
    if nu >= d * derived.nu0 {
        moment.status = HypothesisStatus::Pass;
    } else if params.lambda > 0.0 {
        moment.status = HypothesisStatus::Pass;
        moment.note = Some(format!(
            "implied by exponential decay of u(n) with lambda = {}",
            params.lambda
        ));
    }
    checks.push(moment);
    if params.d >= 3 {
        checks.push(gt(
            "moment_decay_dimension",
            "moment bound for rectangle sums",
            "nu0 < 1/(d-2)",
            1.0 / (d - 2.0),
            derived.nu0,
        ));
    }

    checks.push(gt(
        "residual_sum",
        "sum of quantile-transform residuals",
        "beta > (1+2/r)(3+4/r)",
        beta,
        (1.0 + 2.0 / r) * (3.0 + 4.0 / r),
    ));
    checks.push(gt(
        "power_decay_lower",
        "susceptibility gap rate",
        "nu > d",
        nu,
        d,
    ));
    checks.push(gt(
        "power_decay_upper",
        "susceptibility gap rate",
        "nu < 2d",
        2.0 * d,
        nu,
    ));
    checks.push(gt(
        "variance_defect",
        "variance-defect sum",
        "beta > 3/delta0",
        beta,
        3.0 / derived.delta0,
    ));
    checks.push(gt(
        "small_block_sum",
        "small-block sum",
        "alpha - beta > 2 + 4/rho",
        alpha - beta,
        2.0 + 4.0 / rho,
    ));
    let shape = (1.0 + 1.0 / rho) * (1.0 - 1.0 / d);
    checks.push(gt(
        "coupling_alpha",
        "Wiener coupling of the block sums",
        "alpha > 3(1+1/rho)(1-1/d)",
        alpha,
        3.0 * shape,
    ));
    checks.push(gt(
        "coupling_beta",
        "Wiener coupling of the block sums",
        "beta > (2/rho)(1+1/rho)(1-1/d)",
        beta,
        2.0 / rho * shape,
    ));
    checks.push(gt(
        "strip_maxima",
        "remainder strips",
        "alpha > 16/(3 tau) - 1",
        alpha,
        16.0 / (3.0 * tau) - 1.0,
    ));
    checks.push(HypothesisCheck {
        name: "boundary_maxima".into(),
        used_by: "inter-boundary maxima".into(),
        inequality: "alpha > 2/gamma".into(),
        lhs: alpha,
        rhs: f64::NAN,
        status: HypothesisStatus::Informational,
        note: Some("depends on the unspecified gamma of the anchored maximal inequality".into()),
    });

    ValidationReport {
        params: params.clone(),
        derived,
        checks,
    }
}
