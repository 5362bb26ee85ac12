//! Distribution functions of the smoothed block sums and the quantile transform.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::CouplingError;
use crate::field::Innovation;
use crate::normal;

/// A continuous distribution function with an accurate upper tail.
pub trait Cdf {
    fn cdf(&self, x: f64) -> f64;

    /// `1 - F(x)`.
    fn sf(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }
}

/// The standard normal law.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StandardNormal;

impl Cdf for StandardNormal {
    fn cdf(&self, x: f64) -> f64 {
        normal::cdf(x)
    }

    fn sf(&self, x: f64) -> f64 {
        normal::sf(x)
    }
}

/// Clamped empirical distribution function `clamp(#{x_r <= x}, 1, R)/(R + 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    fn rank(&self, x: f64) -> usize {
        self.sorted.partition_point(|&v| v <= x)
    }
}

impl Cdf for EmpiricalCdf {
    fn cdf(&self, x: f64) -> f64 {
        let r = self.sorted.len();
        self.rank(x).clamp(1, r) as f64 / (r + 1) as f64
    }

    fn sf(&self, x: f64) -> f64 {
        let r = self.sorted.len();
        (r + 1 - self.rank(x).clamp(1, r)) as f64 / (r + 1) as f64
    }
}

pub fn empirical_cdf(values: &[f64]) -> Result<EmpiricalCdf, CouplingError> {
    if values.len() < 2 {
        return Err(CouplingError::TooFewValues(values.len()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(CouplingError::NonFinite(*v));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(EmpiricalCdf { sorted })
}

/// `eta = Phi^{-1}(F(xi))` and the scale-free residual `xi - eta`. The upper
/// half uses the survival function so tail probabilities keep full precision.
pub fn quantile_transform(xi: f64, f: &dyn Cdf) -> Result<(f64, f64), CouplingError> {
    if !xi.is_finite() {
        return Err(CouplingError::NonFinite(xi));
    }
    let eta = if xi > 0.0 {
        let q = f.sf(xi);
        check_probability(q)?;
        normal::upper_quantile(q.max(f64::MIN_POSITIVE))
    } else {
        let p = f.cdf(xi);
        check_probability(p)?;
        normal::quantile(p.max(f64::MIN_POSITIVE))
    };
    Ok((eta, xi - eta))
}

fn check_probability(p: f64) -> Result<(), CouplingError> {
    // quadrature can undershoot zero by rounding far in the tails
    if p.is_nan() || !(-1e-12..1.0).contains(&p) {
        return Err(CouplingError::ProbabilityOutOfRange(p));
    }
    Ok(())
}

/// Panel width and nodes per panel of the inversion quadrature.
const PANEL_WIDTH: f64 = 0.25;
const PANEL_NODES: usize = 20;
/// The integrand is dropped once `|phi(t)| < e^{-45}`.
const LOG_CUTOFF: f64 = -45.0;

/// Exact distribution function of `xi = (sum_g c_g Z_g + w)/s`, `w ~ N(0, tau^2)`,
/// by Gil-Pelaez inversion of its characteristic function.
#[derive(Clone, Debug, PartialEq)]
pub struct InversionCdf {
    /// `(t, weight / (pi t), phi(t))` at every quadrature node.
    nodes: Vec<(f64, f64, Complex64)>,
    pub cutoff: f64,
}

impl InversionCdf {
    /// `groups` maps each distinct innovation coefficient to its multiplicity.
    pub fn new(
        groups: &[(f64, u64)],
        innovation: Innovation,
        tau2: f64,
        scale: f64,
    ) -> Result<Self, CouplingError> {
        if !(scale > 0.0 && scale.is_finite()) || !(tau2 >= 0.0) {
            return Err(CouplingError::NonFinite(scale));
        }
        let log_phi = |t: f64| -> Complex64 {
            let mut acc = Complex64::new(-0.5 * tau2 * t * t / (scale * scale), 0.0);
            for &(c, count) in groups {
                acc += innovation.log_cf(c * t / scale) * count as f64;
            }
            acc
        };
        // |phi_Z| <= 1, so the smoothing factor alone bounds the tail
        let safe = if tau2 > 0.0 {
            (-2.0 * LOG_CUTOFF).sqrt() * scale / tau2.sqrt()
        } else {
            f64::INFINITY
        };
        let monotone = innovation != Innovation::Rademacher;
        let mut cutoff = PANEL_WIDTH;
        while cutoff < safe && !(monotone && log_phi(cutoff).re < LOG_CUTOFF) {
            cutoff += PANEL_WIDTH;
            if !cutoff.is_finite() || cutoff > 1e6 {
                return Err(CouplingError::NonFinite(cutoff));
            }
        }
        let rule = GaussLegendre::new(NonZeroUsize::new(PANEL_NODES).expect("positive"));
        let panels = (cutoff / PANEL_WIDTH).ceil() as usize;
        let mut nodes = Vec::with_capacity(panels * PANEL_NODES);
        for p in 0..panels {
            let (a, b) = (p as f64 * PANEL_WIDTH, (p + 1) as f64 * PANEL_WIDTH);
            for &(x, w) in rule.as_node_weight_pairs() {
                let t = 0.5 * ((b - a) * x + (b + a));
                let weight = 0.5 * (b - a) * w;
                nodes.push((t, weight / (PI * t), log_phi(t).exp()));
            }
        }
        Ok(InversionCdf { nodes, cutoff })
    }

    /// `(1/pi) int_0^inf Im(e^{-itx} phi(t))/t dt`.
    fn integral(&self, x: f64) -> f64 {
        self.nodes
            .iter()
            .map(|&(t, w, phi)| {
                let (sin, cos) = (t * x).sin_cos();
                // Im((cos - i sin)(re + i im)) = cos im - sin re
                w * (cos * phi.im - sin * phi.re)
            })
            .sum()
    }
}

impl Cdf for InversionCdf {
    fn cdf(&self, x: f64) -> f64 {
        0.5 - self.integral(x)
    }

    fn sf(&self, x: f64) -> f64 {
        0.5 + self.integral(x)
    }
}

/// Distinct coefficients of a linear form with their multiplicities.
pub fn group_coefficients(coefficients: impl IntoIterator<Item = f64>) -> Vec<(f64, u64)> {
    let mut groups: BTreeMap<u64, u64> = BTreeMap::new();
    for c in coefficients {
        if c != 0.0 {
            *groups.entry(c.to_bits()).or_default() += 1;
        }
    }
    groups
        .into_iter()
        .map(|(bits, n)| (f64::from_bits(bits), n))
        .collect()
}
