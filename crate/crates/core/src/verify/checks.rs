use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kolmogorov_band, ks_distance, median, CheckResult, VerdictRule, VerifyError};
use crate::coupling::{wedge_grid, StandardNormal};
use crate::field::{simulate_field, FieldModel, Innovation};
use crate::lattice::{MultiIndex, Rect};
use crate::rng::{Stream, StreamKey};

// Lane tags keep the replicate streams of different checks apart.
const CLT_LANE: u64 = 1 << 40;
const MOMENT_LANE: u64 = 2 << 40;
const MAXIMAL_LANE: u64 = 3 << 40;
const ANCHORED_LANE: u64 = 4 << 40;
const LIL_LANE: u64 = 5 << 40;

/// `(0, side]^d`.
pub fn square(d: usize, side: u64) -> MultiIndex {
    MultiIndex::splat(d, side)
}

fn check_sides(sides: &[u64]) -> Result<(), VerifyError> {
    if sides.is_empty() || sides.contains(&0) || !sides.windows(2).all(|w| w[0] < w[1]) {
        return Err(VerifyError::InvalidConfig(format!(
            "sizes must be positive and increasing, got {sides:?}"
        )));
    }
    Ok(())
}

/// Raw sums `S(V)` over `replicates` independent fields on `V = (0, side]^d`.
fn square_sums(
    model: &FieldModel,
    side: u64,
    replicates: usize,
    master: u64,
    lane: u64,
) -> Result<Vec<f64>, VerifyError> {
    let extent = square(model.dim(), side);
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let key = StreamKey::new(master, r, Stream::Field).with_lane(lane);
            let sample = simulate_field(model, &extent, key)?;
            Ok(sample.prefix().cumulative_at(extent.coords()))
        })
        .collect()
}

/// `S(V)/sigma(V)` with the exact `sigma^2(V)` of the model.
pub fn standardized_sums(
    model: &FieldModel,
    side: u64,
    replicates: usize,
    master: u64,
) -> Result<Vec<f64>, VerifyError> {
    let v = Rect::anchored(square(model.dim(), side));
    let sd = model.covariance()?.sigma2_rect(&v)?.sqrt();
    Ok(
        square_sums(model, side, replicates, master, CLT_LANE | side)?
            .into_iter()
            .map(|s| s / sd)
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltConfig {
    pub sides: Vec<u64>,
    pub replicates: usize,
    pub master_seed: u64,
    /// Largest acceptable final distance, before the Monte Carlo band.
    #[serde(default = "default_ks_floor")]
    pub ks_floor: f64,
}

fn default_ks_floor() -> f64 {
    0.05
}

/// Kolmogorov distance of standardized square sums to `Phi` across sizes.
pub fn clt_rate_check(model: &FieldModel, config: &CltConfig) -> Result<CheckResult, VerifyError> {
    check_sides(&config.sides)?;
    let band = kolmogorov_band(config.replicates);
    let mut stats = Vec::new();
    for &side in &config.sides {
        let xs = standardized_sums(model, side, config.replicates, config.master_seed)?;
        stats.push(ks_distance(&xs, &StandardNormal)?);
    }
    let details = BTreeMap::from([
        ("band".to_string(), band),
        ("replicates".to_string(), config.replicates as f64),
        ("final_ks".to_string(), *stats.last().expect("nonempty")),
    ]);
    Ok(CheckResult::new(
        "clt",
        "Kolmogorov distance of S(V)/sigma(V) to the normal law shrinks with |V|",
        config.sides.iter().map(|&l| l as f64).collect(),
        stats,
        VerdictRule::KsSweep {
            band,
            floor: config.ks_floor,
        },
        details,
    )
    .with_note(
        "only the dominant power of the rate is probed; the logarithmic factor is not resolved",
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub sides: Vec<u64>,
    pub r: f64,
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default = "default_spread")]
    pub max_spread: f64,
    #[serde(default = "default_anchor_tolerance")]
    pub anchor_tolerance: f64,
}

fn default_spread() -> f64 {
    3.0
}

fn default_anchor_tolerance() -> f64 {
    0.05
}

/// `E|S(V)|^{2+r} / |V|^{1+r/2}` across sizes. For Gaussian fields the
/// pooled ratio of the estimate to the exact value `sigma(V)^q E|N|^q` is
/// recorded as `anchor_ratio` and must be within the tolerance of 1.
pub fn moment_bound_check(
    model: &FieldModel,
    config: &MomentConfig,
) -> Result<CheckResult, VerifyError> {
    check_sides(&config.sides)?;
    if !(config.r > 0.0) {
        return Err(VerifyError::InvalidConfig(format!(
            "r must be positive, got {}",
            config.r
        )));
    }
    let q = 2.0 + config.r;
    let d = model.dim();
    let cov = model.covariance()?;
    let gaussian_moment = Innovation::Gaussian.abs_moment(q);
    let mut stats = Vec::new();
    let mut anchor_sum = 0.0;
    let mut details = BTreeMap::new();
    for &side in &config.sides {
        let sums = square_sums(
            model,
            side,
            config.replicates,
            config.master_seed,
            MOMENT_LANE | side,
        )?;
        let volume = square(d, side).product_f64();
        let moment = sums.iter().map(|s| s.abs().powf(q)).sum::<f64>() / sums.len() as f64;
        stats.push(moment / volume.powf(q / 2.0));
        let sigma_v = cov.sigma2_rect(&Rect::anchored(square(d, side)))?.sqrt();
        let exact_gaussian = sigma_v.powf(q) * gaussian_moment;
        anchor_sum += moment / exact_gaussian;
        details.insert(
            format!("gaussian_value_l{side}"),
            exact_gaussian / volume.powf(q / 2.0),
        );
    }
    let anchor_key = if model.is_gaussian() {
        details.insert(
            "anchor_ratio".into(),
            anchor_sum / config.sides.len() as f64,
        );
        Some("anchor_ratio".to_string())
    } else {
        None
    };
    let (lo, hi) = super::min_max(&stats);
    details.insert("spread".into(), hi / lo);
    Ok(CheckResult::new(
        "moment",
        "E|S(V)|^{2+r} / |V|^{1+r/2} stays bounded",
        config.sides.iter().map(|&l| l as f64).collect(),
        stats,
        VerdictRule::Bounded {
            max_spread: config.max_spread,
            anchor_key,
            anchor_tolerance: config.anchor_tolerance,
        },
        details,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximalConfig {
    /// Box for the brute-force maximum over all sub-rectangles (at most 64 cells).
    pub small: MultiIndex,
    pub x_grid: Vec<f64>,
    pub r: f64,
    pub replicates: usize,
    /// Side of the square for the anchored maximum.
    pub anchored_side: u64,
    pub anchored_replicates: usize,
    pub master_seed: u64,
    #[serde(default = "default_tail_constant")]
    pub c_max: f64,
}

fn default_tail_constant() -> f64 {
    10.0
}

/// Largest cell count for the exhaustive sub-rectangle maximum.
pub const BRUTE_FORCE_CELLS: u64 = 64;

/// `M(V) = max |S(R)|` over every nonempty sub-rectangle `R` of `(0, extent]`.
pub fn max_over_subrectangles(prefix: &crate::lattice::PrefixGrid) -> f64 {
    let extent = prefix.extent().clone();
    let mut best = 0.0f64;
    for p in Rect::anchored(extent.clone()).points() {
        let lo = MultiIndex::new(p.coords().iter().map(|&c| c - 1).collect());
        for hi in (Rect {
            lo: lo.clone(),
            hi: extent.clone(),
        })
        .points()
        {
            best = best.max(prefix.rect_sum_unchecked(lo.coords(), hi.coords()).abs());
        }
    }
    best
}

/// Tail of `M(V)/|V|^{1/2}` against `x^{-(2+r)}`, and the frequency with
/// which the anchored maximum exceeds `|V|^{1/2} (log |V|)^{d+1}`.
pub fn maximal_inequality_check(
    model: &FieldModel,
    config: &MaximalConfig,
) -> Result<CheckResult, VerifyError> {
    let d = model.dim();
    let cells = config.small.product()?;
    if config.small.dim() != d || cells == 0 || cells > BRUTE_FORCE_CELLS {
        return Err(VerifyError::InvalidConfig(format!(
            "brute-force box must have 1..={BRUTE_FORCE_CELLS} cells in dimension {d}"
        )));
    }
    if config.x_grid.is_empty() || config.anchored_side < 2 {
        return Err(VerifyError::InvalidConfig(
            "empty x grid or anchored side below 2".into(),
        ));
    }
    let maxima: Vec<f64> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let key = StreamKey::new(config.master_seed, r, Stream::Field).with_lane(MAXIMAL_LANE);
            Ok(max_over_subrectangles(
                simulate_field(model, &config.small, key)?.prefix(),
            ))
        })
        .collect::<Result<_, VerifyError>>()?;
    let root_v = (cells as f64).sqrt();
    let tail: Vec<f64> = config
        .x_grid
        .iter()
        .map(|x| maxima.iter().filter(|&&m| m >= x * root_v).count() as f64 / maxima.len() as f64)
        .collect();

    let anchored = square(d, config.anchored_side);
    let volume = anchored.product_f64();
    let threshold = volume.sqrt() * volume.ln().powi(d as i32 + 1);
    let anchored_maxima: Vec<f64> = (0..config.anchored_replicates as u64)
        .into_par_iter()
        .map(|r| {
            let key = StreamKey::new(config.master_seed, r, Stream::Field).with_lane(ANCHORED_LANE);
            Ok(simulate_field(model, &anchored, key)?
                .prefix()
                .max_abs_anchored(&anchored))
        })
        .collect::<Result<_, VerifyError>>()?;
    let exceed = anchored_maxima.iter().filter(|&&m| m >= threshold).count() as f64
        / anchored_maxima.len().max(1) as f64;
    let exponent = 2.0 + config.r;
    let details = BTreeMap::from([
        (
            "fitted_c".to_string(),
            super::fitted_tail_constant(&config.x_grid, &tail, exponent),
        ),
        ("anchored_threshold".to_string(), threshold),
        ("anchored_exceedance".to_string(), exceed),
        (
            "anchored_median_ratio".to_string(),
            median(&anchored_maxima) / threshold,
        ),
    ]);
    Ok(CheckResult::new(
        "maximal",
        "P(M(V) >= x|V|^{1/2}) <= C x^{-(2+r)}; anchored maxima stay below |V|^{1/2}(log|V|)^{d+1}",
        config.x_grid.clone(),
        tail,
        VerdictRule::TailDominated {
            exponent,
            c_max: config.c_max,
            max_exceedance: 0.0,
        },
        details,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LilConfig {
    pub tau: f64,
    pub extent: MultiIndex,
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default = "default_min_volume")]
    pub min_volume: f64,
}

fn default_min_volume() -> f64 {
    1e3
}

/// Running maximum of `s / sqrt(2 v log log v)` along `(v, s)` pairs.
pub fn running_lil_maximum(points: &[(f64, f64)]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    points
        .iter()
        .map(|&(v, s)| {
            best = best.max(s / (2.0 * v * v.ln().ln()).sqrt());
            best
        })
        .collect()
}

/// Median over replicates of the running maximum of `S_N / sqrt(2[N] log log [N])`
/// over wedge probes ordered by `[N]`, relative to `sigma`.
pub fn lil_tracker(model: &FieldModel, config: &LilConfig) -> Result<CheckResult, VerifyError> {
    let min_volume = config.min_volume.max(16.0);
    let probes: Vec<MultiIndex> = wedge_grid(&config.extent, config.tau)
        .into_iter()
        .filter(|n| n.product_f64() >= min_volume)
        .collect();
    if probes.is_empty() {
        return Err(VerifyError::InvalidConfig(
            "no wedge probe with enough volume".into(),
        ));
    }
    let sigma = model.covariance()?.sigma();
    let paths: Vec<Vec<f64>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let key = StreamKey::new(config.master_seed, r, Stream::Field).with_lane(LIL_LANE);
            let sample = simulate_field(model, &config.extent, key)?;
            let points: Vec<(f64, f64)> = probes
                .iter()
                .map(|n| (n.product_f64(), sample.prefix().cumulative_at(n.coords())))
                .collect();
            Ok(running_lil_maximum(&points)
                .into_iter()
                .map(|m| m / sigma)
                .collect())
        })
        .collect::<Result<_, VerifyError>>()?;
    let stats: Vec<f64> = (0..probes.len())
        .map(|i| median(&paths.iter().map(|p| p[i]).collect::<Vec<_>>()))
        .collect();
    let terminal = *stats.last().expect("nonempty");
    let details = BTreeMap::from([
        ("median_terminal_ratio".to_string(), terminal),
        ("band_lo".to_string(), 0.3),
        ("band_hi".to_string(), 1.2),
        (
            "in_band".to_string(),
            f64::from(u8::from((0.3..=1.2).contains(&terminal))),
        ),
        ("sigma".to_string(), sigma),
    ]);
    Ok(CheckResult::new(
        "lil",
        "limsup S_N / sqrt(2[N] log log [N]) = sigma",
        probes.iter().map(|n| n.product_f64()).collect(),
        stats,
        VerdictRule::Informational,
        details,
    )
    .with_note("convergence is logarithmically slow; reported without a verdict"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Kernel;
    use crate::lattice::{build_prefix_grid, CellGrid};

    #[test]
    fn subrectangle_maximum_matches_direct_sums() {
        let cells = CellGrid::new([3, 2].into(), vec![1.0, -4.0, 2.0, 0.5, 3.0, -1.0]).unwrap();
        let prefix = build_prefix_grid(&cells).unwrap();
        let mut best = 0.0f64;
        for a0 in 0..3 {
            for b0 in a0 + 1..=3 {
                for a1 in 0..2 {
                    for b1 in a1 + 1..=2 {
                        let r = Rect::new([a0, a1].into(), [b0, b1].into()).unwrap();
                        best = best.max(cells.direct_sum(&r).abs());
                    }
                }
            }
        }
        assert_eq!(max_over_subrectangles(&prefix), best);
    }

    #[test]
    fn single_cell_maximum_is_absolute_value() {
        let cells = CellGrid::new([1, 1].into(), vec![-2.5]).unwrap();
        assert_eq!(
            max_over_subrectangles(&build_prefix_grid(&cells).unwrap()),
            2.5
        );
    }

    #[test]
    fn lil_statistic_is_homogeneous_and_monotone() {
        let pts: Vec<(f64, f64)> = (0..30)
            .map(|i| (20.0 + 10.0 * i as f64, ((i * 7) % 11) as f64 - 5.0))
            .collect();
        let run = running_lil_maximum(&pts);
        assert!(run.windows(2).all(|w| w[1] >= w[0]));
        let doubled: Vec<(f64, f64)> = pts.iter().map(|&(v, s)| (v, 2.0 * s)).collect();
        let run2 = running_lil_maximum(&doubled);
        for (a, b) in run.iter().zip(&run2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn single_cell_moment_ratio_is_exact_for_rademacher() {
        let model = FieldModel::iid(2, Innovation::Rademacher);
        let cfg = MomentConfig {
            sides: vec![1],
            r: 1.0,
            replicates: 50,
            master_seed: 1,
            max_spread: 3.0,
            anchor_tolerance: 0.05,
        };
        let res = moment_bound_check(&model, &cfg).unwrap();
        assert_eq!(res.statistics, vec![1.0]);
    }

    #[test]
    fn small_clt_run_is_reproducible() {
        let model = FieldModel::moving_average(Kernel::ones(2, 2), Innovation::Rademacher);
        let cfg = CltConfig {
            sides: vec![2, 4],
            replicates: 200,
            master_seed: 9,
            ks_floor: 0.05,
        };
        let a = clt_rate_check(&model, &cfg).unwrap();
        let b = clt_rate_check(&model, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reevaluate(), a.verdict);
        assert!(clt_rate_check(
            &model,
            &CltConfig {
                sides: vec![4, 2],
                ..cfg
            }
        )
        .is_err());
    }
}
