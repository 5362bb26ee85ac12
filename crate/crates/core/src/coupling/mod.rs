//! Block sums, smoothing, quantile transform, the core-rectangle
//! decomposition and the surrogate Wiener coupling.

mod cdf;
mod experiment;
mod profile;

pub use cdf::{
    empirical_cdf, group_coefficients, quantile_transform, Cdf, EmpiricalCdf, InversionCdf,
    StandardNormal,
};
pub use experiment::{CouplingExperiment, CouplingReport, ReplicateOutput, ScaleOutput};
pub use profile::{
    coupling_error_profile, probe_set, wedge_grid, CouplingProfile, ProbePoint, RemainderMaxima,
};

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{CovarianceError, CovarianceModel};
use crate::field::{
    conditional_fill, simulate_field, FieldError, FieldModel, FieldSample, WienerSheet,
};
use crate::geometry::{BlockDecomposition, BlockGeometry, GeometryError};
use crate::lattice::{CellGrid, LatticeError, MultiIndex, Rect};
use crate::rng::{lane_of, Stream, StreamKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("need at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("distribution function value {0} outside (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("block laws were built for a different field model")]
    ModelMismatch,
    #[error("blocks up to {corner} do not fit in the sample extent {extent}")]
    ExtentTooSmall {
        corner: MultiIndex,
        extent: MultiIndex,
    },
    #[error("L_k is empty for k = {0}")]
    EmptyCore(MultiIndex),
    #[error("no statistics for block {0}")]
    MissingBlock(MultiIndex),
    #[error("identity coupling needs an iid Gaussian field")]
    IdentityNeedsGaussian,
    #[error("empty probe set")]
    EmptyProbeSet,
    #[error("epsilon must lie in (0, 1/2), got {0}")]
    BadEpsilon(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Where the distribution function `F_k` of the smoothed block sum comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum CdfSource {
    /// `Phi` for Gaussian fields, otherwise characteristic-function inversion.
    #[default]
    Exact,
    /// Clamped empirical distribution over independent reference replicates.
    Empirical { replicates: usize },
}

/// `F_k` of one block.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockCdf {
    /// `xi_k` is exactly standard normal, so `eta_k = xi_k`.
    Normal,
    Inversion(InversionCdf),
    Empirical(EmpiricalCdf),
}

impl BlockCdf {
    /// `(eta, xi - eta)`.
    pub fn transform(&self, xi: f64) -> Result<(f64, f64), CouplingError> {
        match self {
            BlockCdf::Normal => {
                if xi.is_finite() {
                    Ok((xi, 0.0))
                } else {
                    Err(CouplingError::NonFinite(xi))
                }
            }
            BlockCdf::Inversion(f) => quantile_transform(xi, f),
            BlockCdf::Empirical(f) => quantile_transform(xi, f),
        }
    }
}

/// Exact moments and distribution function of the smoothed sum of one block.
#[derive(Clone, Debug)]
pub struct BlockLaw {
    pub decomposition: BlockDecomposition,
    /// `lambda_k^2 = sigma^2(H_k)`.
    pub lambda2: f64,
    /// `tau_k^2 = sigma^2(I_k)`.
    pub tau2: f64,
    pub cdf: BlockCdf,
}

impl BlockLaw {
    /// `sqrt(lambda_k^2 + tau_k^2)`.
    pub fn scale(&self) -> f64 {
        (self.lambda2 + self.tau2).sqrt()
    }
}

/// Laws of every good block of a geometry window under one field model.
#[derive(Clone, Debug)]
pub struct BlockLaws {
    pub model: FieldModel,
    pub covariance: CovarianceModel,
    pub source: CdfSource,
    laws: Vec<BlockLaw>,
    lookup: HashMap<MultiIndex, usize>,
}

impl BlockLaws {
    /// `master` seeds the reference replicates of the empirical source.
    pub fn build(
        model: &FieldModel,
        geometry: &BlockGeometry,
        source: CdfSource,
        master: u64,
    ) -> Result<Self, CouplingError> {
        let covariance = model.covariance()?;
        let moments: Vec<(BlockDecomposition, f64, f64)> = geometry
            .good_set()
            .par_iter()
            .map(|k| -> Result<_, CouplingError> {
                let dec = geometry.decompose(k)?;
                let lambda2 = covariance.sigma2_rect(&dec.h)?;
                let tau2 = covariance.exact_sigma2(&dec.i_pieces)?;
                Ok((dec, lambda2, tau2))
            })
            .collect::<Result<_, _>>()?;
        let cdfs: Vec<BlockCdf> = match source {
            _ if model.is_gaussian() => vec![BlockCdf::Normal; moments.len()],
            CdfSource::Exact => moments
                .par_iter()
                .map(|(dec, lambda2, tau2)| {
                    let groups = group_coefficients(big_block_coefficients(model, &dec.h));
                    let scale = (lambda2 + tau2).sqrt();
                    Ok(BlockCdf::Inversion(InversionCdf::new(
                        &groups,
                        model.innovation(),
                        *tau2,
                        scale,
                    )?))
                })
                .collect::<Result<_, CouplingError>>()?,
            CdfSource::Empirical { replicates } => {
                reference_cdfs(model, geometry, &moments, replicates, master)?
                    .into_iter()
                    .map(BlockCdf::Empirical)
                    .collect()
            }
        };
        let laws: Vec<BlockLaw> = moments
            .into_iter()
            .zip(cdfs)
            .map(|((decomposition, lambda2, tau2), cdf)| BlockLaw {
                decomposition,
                lambda2,
                tau2,
                cdf,
            })
            .collect();
        let lookup = laws
            .iter()
            .enumerate()
            .map(|(n, l)| (l.decomposition.k.clone(), n))
            .collect();
        Ok(BlockLaws {
            model: model.clone(),
            covariance,
            source,
            laws,
            lookup,
        })
    }

    pub fn laws(&self) -> &[BlockLaw] {
        &self.laws
    }

    pub fn get(&self, k: &MultiIndex) -> Option<&BlockLaw> {
        self.lookup.get(k).map(|&n| &self.laws[n])
    }
}

/// Coefficient of each innovation in `S(H) = sum_z c_z Z_z`:
/// `c_z = sum_m a_m 1{z + m in H}` over the low-side extension of `H`.
pub fn big_block_coefficients(model: &FieldModel, h: &Rect) -> Vec<f64> {
    let kernel = model.kernel();
    let d = h.dim();
    let shape = kernel.shape().clone();
    let entries = kernel.entries();
    // z runs over (h.lo - (shape - 1), h.hi], shifted to stay nonnegative
    let side: Vec<u64> = (0..d).map(|s| h.side(s) + shape.get(s) - 1).collect();
    Rect::anchored(MultiIndex::new(side))
        .points()
        .map(|z| {
            entries
                .iter()
                .filter(|(m, _)| {
                    (0..d).all(|s| {
                        // position of z + m relative to h.lo, 1-based
                        let pos = z.get(s) + m.get(s);
                        pos >= shape.get(s) && pos < shape.get(s) + h.side(s)
                    })
                })
                .map(|(_, w)| w)
                .sum()
        })
        .collect()
}

fn smoothing_draw(key: StreamKey, k: &MultiIndex) -> f64 {
    key.with_lane(lane_of(k.coords())).cells().standard_normal()
}

fn reference_cdfs(
    model: &FieldModel,
    geometry: &BlockGeometry,
    moments: &[(BlockDecomposition, f64, f64)],
    replicates: usize,
    master: u64,
) -> Result<Vec<EmpiricalCdf>, CouplingError> {
    let extent = geometry.corner(geometry.kmax());
    let xis: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>, CouplingError> {
            let sample =
                simulate_field(model, &extent, StreamKey::new(master, r, Stream::Reference))?;
            let smoothing = StreamKey::new(master, r, Stream::ReferenceSmoothing);
            moments
                .iter()
                .map(|(dec, lambda2, tau2)| {
                    let u = sample.sum(&dec.h)?;
                    let w = tau2.sqrt() * smoothing_draw(smoothing, &dec.k);
                    Ok((u + w) / (lambda2 + tau2).sqrt())
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    (0..moments.len())
        .map(|b| empirical_cdf(&xis.iter().map(|row| row[b]).collect::<Vec<_>>()))
        .collect()
}

/// Per-block coupling quantities of one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub k: MultiIndex,
    pub volume_b: u64,
    /// `u_k = S(H_k)`.
    pub u: f64,
    /// `v_k = S(I_k)`, with one entry per piece.
    pub v: f64,
    pub v_pieces: Vec<f64>,
    pub s_b: f64,
    pub lambda2: f64,
    pub tau2: f64,
    pub w: f64,
    pub xi: f64,
    pub eta: f64,
    /// `e_k = sqrt(lambda_k^2 + tau_k^2)(xi_k - eta_k)`.
    pub e: f64,
}

impl BlockRecord {
    pub fn scale(&self) -> f64 {
        (self.lambda2 + self.tau2).sqrt()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockStats {
    pub records: Vec<BlockRecord>,
    #[serde(skip)]
    lookup: HashMap<MultiIndex, usize>,
}

impl PartialEq for BlockStats {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl BlockStats {
    pub fn get(&self, k: &MultiIndex) -> Option<&BlockRecord> {
        if self.lookup.is_empty() {
            // deserialized copies carry no index
            return self.records.iter().find(|r| &r.k == k);
        }
        self.lookup.get(k).map(|&n| &self.records[n])
    }
}

/// `u`, `v`, `w`, `xi`, `eta`, `e` for every good block. The smoothing draws
/// come from the `Smoothing` stream of `key`'s replicate, one lane per block.
pub fn compute_block_stats(
    sample: &FieldSample,
    geometry: &BlockGeometry,
    laws: &BlockLaws,
    key: StreamKey,
) -> Result<BlockStats, CouplingError> {
    if laws.model != sample.model {
        return Err(CouplingError::ModelMismatch);
    }
    let corner = geometry.corner(geometry.kmax());
    if !corner.le(sample.extent()) {
        return Err(CouplingError::ExtentTooSmall {
            corner,
            extent: sample.extent().clone(),
        });
    }
    let smoothing = key.with_stream(Stream::Smoothing);
    let records = laws
        .laws()
        .iter()
        .map(|law| {
            let dec = &law.decomposition;
            let u = sample.sum(&dec.h)?;
            let v_pieces = dec
                .i_pieces
                .iter()
                .map(|r| sample.sum(r))
                .collect::<Result<Vec<_>, _>>()?;
            let v = v_pieces.iter().sum();
            let s_b = sample.sum(&dec.b)?;
            let w = law.tau2.sqrt() * smoothing_draw(smoothing, &dec.k);
            let scale = law.scale();
            let xi = (u + w) / scale;
            let (eta, residual) = law.cdf.transform(xi)?;
            Ok(BlockRecord {
                k: dec.k.clone(),
                volume_b: dec.volume_b(),
                u,
                v,
                v_pieces,
                s_b,
                lambda2: law.lambda2,
                tau2: law.tau2,
                w,
                xi,
                eta,
                e: scale * residual,
            })
        })
        .collect::<Result<Vec<_>, CouplingError>>()?;
    let lookup = records
        .iter()
        .enumerate()
        .map(|(n, r)| (r.k.clone(), n))
        .collect();
    Ok(BlockStats { records, lookup })
}

/// The five sums of the core decomposition of `S(R_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTerms {
    pub k: MultiIndex,
    pub blocks: usize,
    /// `sum e_i`.
    pub t1: f64,
    /// `sum sqrt|B_i| (sqrt((lambda_i^2 + tau_i^2)/|B_i|) - sigma) eta_i`.
    pub t2: f64,
    /// `sum sigma sqrt|B_i| eta_i`.
    pub t3: f64,
    /// `sum w_i`.
    pub t4: f64,
    /// `sum v_i`.
    pub t5: f64,
    /// `S(R_k)` from the prefix sums.
    pub s_rk: f64,
    pub relative_residual: f64,
    /// `sum |e_i|`.
    pub abs_e: f64,
    /// `sum sqrt|B_i| a_i |eta_i|` with `a_i = sigma - sqrt((lambda_i^2 + tau_i^2)/|B_i|)`.
    pub abs_t2: f64,
    /// `sum |w_i|`.
    pub abs_w: f64,
    /// `sum |v_i|`.
    pub abs_v: f64,
}

/// Tolerance of the decomposition identity.
pub const IDENTITY_TOLERANCE: f64 = 1e-8;

impl DecompositionTerms {
    pub fn identity_holds(&self) -> bool {
        self.relative_residual <= IDENTITY_TOLERANCE
    }
}

pub fn decompose_core(
    stats: &BlockStats,
    k: &MultiIndex,
    geometry: &BlockGeometry,
    sigma: f64,
    sample: &FieldSample,
) -> Result<DecompositionTerms, CouplingError> {
    let core = geometry.core_rectangle(k)?;
    if core.l_k.is_empty() {
        return Err(CouplingError::EmptyCore(k.clone()));
    }
    let mut t = DecompositionTerms {
        k: k.clone(),
        blocks: core.l_k.len(),
        t1: 0.0,
        t2: 0.0,
        t3: 0.0,
        t4: 0.0,
        t5: 0.0,
        s_rk: sample.sum(&core.r_k)?,
        relative_residual: 0.0,
        abs_e: 0.0,
        abs_t2: 0.0,
        abs_w: 0.0,
        abs_v: 0.0,
    };
    for i in &core.l_k {
        let r = stats
            .get(i)
            .ok_or_else(|| CouplingError::MissingBlock(i.clone()))?;
        let root_b = (r.volume_b as f64).sqrt();
        let a_i = sigma - r.scale() / root_b;
        t.t1 += r.e;
        t.t2 += root_b * (r.scale() / root_b - sigma) * r.eta;
        t.t3 += sigma * root_b * r.eta;
        t.t4 += r.w;
        t.t5 += r.v;
        t.abs_e += r.e.abs();
        t.abs_t2 += root_b * a_i.abs() * r.eta.abs();
        t.abs_w += r.w.abs();
        t.abs_v += r.v.abs();
    }
    let total = t.t1 + t.t2 + t.t3 - t.t4 + t.t5;
    let magnitude = [t.t1, t.t2, t.t3, t.t4, t.t5]
        .iter()
        .map(|x| x.abs())
        .sum::<f64>()
        .max(t.s_rk.abs());
    t.relative_residual = if magnitude == 0.0 {
        0.0
    } else {
        (total - t.s_rk).abs() / magnitude
    };
    Ok(t)
}

/// How the Wiener sheet is tied to the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// `W(B_i) = sigma sqrt|B_i| eta_i` on every good block, free elsewhere.
    Surrogate,
    /// The sheet increments are the field cells (iid Gaussian fields only).
    Identity,
}

pub fn build_coupled_sheet(
    stats: &BlockStats,
    geometry: &BlockGeometry,
    sigma: f64,
    sample: &FieldSample,
    key: StreamKey,
    mode: CouplingMode,
) -> Result<WienerSheet, CouplingError> {
    match mode {
        CouplingMode::Identity => {
            let gaussian_iid =
                matches!(sample.model, FieldModel::Iid { .. }) && sample.model.is_gaussian();
            if !gaussian_iid {
                return Err(CouplingError::IdentityNeedsGaussian);
            }
            let cells = CellGrid::new(sample.extent().clone(), sample.cells().values().to_vec())?;
            Ok(WienerSheet::from_cells(sigma * sigma, cells)?)
        }
        CouplingMode::Surrogate => {
            let mut assignments = Vec::with_capacity(geometry.psi().len());
            for i in geometry.psi() {
                let r = stats
                    .get(i)
                    .ok_or_else(|| CouplingError::MissingBlock(i.clone()))?;
                if !r.eta.is_finite() {
                    return Err(CouplingError::NonFinite(r.eta));
                }
                let b = geometry.decompose(i)?.b;
                assignments.push((b, sigma * (r.volume_b as f64).sqrt() * r.eta));
            }
            Ok(conditional_fill(
                &assignments,
                sigma * sigma,
                sample.extent(),
                key.with_stream(Stream::Sheet),
            )?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Kernel;
    use crate::field::Innovation;
    use crate::geometry::Parameters;

    fn geometry() -> BlockGeometry {
        BlockGeometry::new(Parameters::new(2, 3, 2, 0.8).unwrap(), [4, 4].into()).unwrap()
    }

    #[test]
    fn coefficients_of_identity_kernel_are_ones() {
        let model = FieldModel::iid(2, Innovation::Rademacher);
        let h = Rect::new([2, 14].into(), [10, 41].into()).unwrap();
        let c = big_block_coefficients(&model, &h);
        assert_eq!(c.len(), 216);
        assert!(c.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn coefficients_reproduce_big_block_variance() {
        let kernel = Kernel::new([2, 3].into(), vec![1.0, 0.5, 0.2, 0.0, 2.0, 0.3]).unwrap();
        let model = FieldModel::moving_average(kernel, Innovation::CenteredExponential);
        let h = Rect::new([2, 14].into(), [10, 41].into()).unwrap();
        let c = big_block_coefficients(&model, &h);
        let var: f64 = c.iter().map(|x| x * x).sum();
        let want = model.covariance().unwrap().sigma2_rect(&h).unwrap();
        assert!((var - want).abs() < 1e-9 * want);
        let total: f64 = c.iter().sum();
        assert!((total - 216.0 * 4.0).abs() < 1e-9);
    }

    #[test]
    fn iid_gaussian_pipeline_is_exact() {
        let geo = geometry();
        let model = FieldModel::iid(2, Innovation::Gaussian);
        let laws = BlockLaws::build(&model, &geo, CdfSource::Exact, 1).unwrap();
        let ext = geo.corner(&[5, 5].into());
        let key = StreamKey::new(5, 0, Stream::Field);
        let sample = simulate_field(&model, &ext, key).unwrap();
        let stats = compute_block_stats(&sample, &geo, &laws, key).unwrap();
        for r in &stats.records {
            let h = geo.decompose(&r.k).unwrap().h;
            assert_eq!(r.lambda2, h.volume().unwrap() as f64);
            assert_eq!(r.e, 0.0);
            assert!((r.u + r.v - r.s_b).abs() <= 1e-9 * r.s_b.abs().max(1.0));
        }
        let terms = decompose_core(&stats, &[4, 4].into(), &geo, 1.0, &sample).unwrap();
        assert!(terms.identity_holds());
        assert_eq!(terms.t1, 0.0);
        assert_eq!(terms.t2, 0.0);
        let sheet =
            build_coupled_sheet(&stats, &geo, 1.0, &sample, key, CouplingMode::Identity).unwrap();
        assert_eq!(
            sheet.prefix().cumulative_at(&[100, 90]),
            sample.prefix().cumulative_at(&[100, 90])
        );
    }

    #[test]
    fn surrogate_sheet_matches_eta() {
        let geo = geometry();
        let model = FieldModel::moving_average(Kernel::ones(2, 3), Innovation::CenteredExponential);
        let laws = BlockLaws::build(&model, &geo, CdfSource::Exact, 1).unwrap();
        let ext = geo.corner(&[5, 5].into());
        let key = StreamKey::new(6, 2, Stream::Field);
        let sample = simulate_field(&model, &ext, key).unwrap();
        let stats = compute_block_stats(&sample, &geo, &laws, key).unwrap();
        let sigma = laws.covariance.sigma();
        let sheet = build_coupled_sheet(&stats, &geo, sigma, &sample, key, CouplingMode::Surrogate)
            .unwrap();
        for r in &stats.records {
            let b = geo.decompose(&r.k).unwrap().b;
            let z = sheet.w(&b).unwrap() / (sigma * (r.volume_b as f64).sqrt());
            assert!((z - r.eta).abs() < 1e-9, "{}", r.k);
            assert!(r.e != 0.0);
        }
        for k in [[3u64, 3], [4, 4]] {
            let terms = decompose_core(&stats, &k.into(), &geo, sigma, &sample).unwrap();
            assert!(terms.identity_holds(), "{terms:?}");
        }
        assert!(matches!(
            build_coupled_sheet(&stats, &geo, sigma, &sample, key, CouplingMode::Identity),
            Err(CouplingError::IdentityNeedsGaussian)
        ));
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let geo = geometry();
        let laws = BlockLaws::build(
            &FieldModel::iid(2, Innovation::Gaussian),
            &geo,
            CdfSource::Exact,
            1,
        )
        .unwrap();
        let other = FieldModel::iid(2, Innovation::Rademacher);
        let key = StreamKey::new(1, 0, Stream::Field);
        let sample = simulate_field(&other, &geo.corner(&[4, 4].into()), key).unwrap();
        assert!(matches!(
            compute_block_stats(&sample, &geo, &laws, key),
            Err(CouplingError::ModelMismatch)
        ));
    }
}
