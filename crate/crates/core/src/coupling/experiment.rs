//! Replicated runs of the full coupling pipeline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_coupled_sheet, compute_block_stats, coupling_error_profile, decompose_core, BlockLaws,
    BlockStats, CdfSource, CouplingError, CouplingMode, CouplingProfile, DecompositionTerms,
    RemainderMaxima,
};
use crate::field::{simulate_field, FieldModel};
use crate::geometry::{BlockGeometry, GeometryError, Parameters};
use crate::lattice::MultiIndex;
use crate::rng::{Stream, StreamKey};

fn default_epsilon() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingExperiment {
    pub model: FieldModel,
    pub params: Parameters,
    /// Good blocks whose core rectangles are analysed.
    pub scales: Vec<MultiIndex>,
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub mode: CouplingMode,
    #[serde(default)]
    pub cdf_source: CdfSource,
}

/// Per-replicate data at one scale `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleOutput {
    pub k: MultiIndex,
    /// `[k]`.
    pub k_volume: f64,
    /// `[N_k]`.
    pub n_volume: f64,
    /// `e_k` of the block `k` itself.
    pub e_k: f64,
    pub terms: DecompositionTerms,
    pub remainder: RemainderMaxima,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutput {
    pub replicate: u64,
    pub stats: BlockStats,
    pub scales: Vec<ScaleOutput>,
    pub profile: CouplingProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub experiment: CouplingExperiment,
    pub sigma: f64,
    /// Extent of every simulated field, `N_{kmax + 1}`.
    pub extent: MultiIndex,
    pub replicates: Vec<ReplicateOutput>,
}

impl CouplingReport {
    /// Number of (replicate, scale) pairs whose decomposition identity fails.
    pub fn identity_failures(&self) -> usize {
        self.replicates
            .iter()
            .flat_map(|r| &r.scales)
            .filter(|s| !s.terms.identity_holds())
            .count()
    }

    pub fn worst_identity_residual(&self) -> f64 {
        self.replicates
            .iter()
            .flat_map(|r| &r.scales)
            .map(|s| s.terms.relative_residual)
            .fold(0.0, f64::max)
    }
}

impl CouplingExperiment {
    /// Componentwise maximum of the scales.
    pub fn kmax(&self) -> Result<MultiIndex, CouplingError> {
        let d = self.params.d;
        if self.scales.is_empty() {
            return Err(GeometryError::InvalidParameters("no scales".into()).into());
        }
        let mut kmax = vec![0u64; d];
        for k in &self.scales {
            if k.dim() != d {
                return Err(GeometryError::InvalidParameters(format!(
                    "scale {k} has wrong dimension"
                ))
                .into());
            }
            for (m, &c) in kmax.iter_mut().zip(k.coords()) {
                *m = (*m).max(c);
            }
        }
        Ok(MultiIndex::new(kmax))
    }

    pub fn geometry(&self) -> Result<BlockGeometry, CouplingError> {
        Ok(BlockGeometry::new(self.params.clone(), self.kmax()?)?)
    }

    pub fn run(&self) -> Result<CouplingReport, CouplingError> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(CouplingError::BadEpsilon(self.epsilon));
        }
        let geometry = self.geometry()?;
        for k in &self.scales {
            if !geometry.is_good(k) {
                return Err(GeometryError::NotGoodBlock(k.clone()).into());
            }
        }
        let laws = BlockLaws::build(&self.model, &geometry, self.cdf_source, self.master_seed)?;
        let sigma = laws.covariance.sigma();
        let next = MultiIndex::new(geometry.kmax().coords().iter().map(|&c| c + 1).collect());
        let extent = geometry.corner(&next);
        let replicates = (0..self.replicates as u64)
            .into_par_iter()
            .map(|r| self.replicate(r, &geometry, &laws, sigma, &extent))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CouplingReport {
            experiment: self.clone(),
            sigma,
            extent,
            replicates,
        })
    }

    fn replicate(
        &self,
        r: u64,
        geometry: &BlockGeometry,
        laws: &BlockLaws,
        sigma: f64,
        extent: &MultiIndex,
    ) -> Result<ReplicateOutput, CouplingError> {
        let key = StreamKey::new(self.master_seed, r, Stream::Field);
        let sample = simulate_field(&self.model, extent, key)?;
        let stats = compute_block_stats(&sample, geometry, laws, key)?;
        let sheet = build_coupled_sheet(&stats, geometry, sigma, &sample, key, self.mode)?;
        let profile =
            coupling_error_profile(&sample, &sheet, geometry, self.params.tau, self.epsilon)?;
        let scales = self
            .scales
            .iter()
            .map(|k| {
                let terms = decompose_core(&stats, k, geometry, sigma, &sample)?;
                let e_k = stats
                    .get(k)
                    .ok_or_else(|| CouplingError::MissingBlock(k.clone()))?
                    .e;
                let remainder = profile
                    .remainder(k)
                    .ok_or_else(|| CouplingError::MissingBlock(k.clone()))?
                    .clone();
                Ok(ScaleOutput {
                    k: k.clone(),
                    k_volume: k.product_f64(),
                    n_volume: geometry.corner(k).product_f64(),
                    e_k,
                    terms,
                    remainder,
                })
            })
            .collect::<Result<_, CouplingError>>()?;
        Ok(ReplicateOutput {
            replicate: r,
            stats,
            scales,
            profile,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Kernel;
    use crate::field::Innovation;

    fn experiment(mode: CouplingMode, model: FieldModel) -> CouplingExperiment {
        CouplingExperiment {
            model,
            params: Parameters::new(2, 3, 2, 0.8).unwrap(),
            scales: vec![[2, 2].into(), [3, 3].into()],
            replicates: 3,
            master_seed: 11,
            epsilon: 0.05,
            mode,
            cdf_source: CdfSource::Exact,
        }
    }

    #[test]
    fn identity_mode_has_no_gaps() {
        let report = experiment(
            CouplingMode::Identity,
            FieldModel::iid(2, Innovation::Gaussian),
        )
        .run()
        .unwrap();
        assert_eq!(report.extent, MultiIndex::from([130, 130]));
        for rep in &report.replicates {
            assert_eq!(rep.profile.max_gap(), 0.0);
            for s in &rep.scales {
                assert_eq!((s.terms.t1, s.terms.t2, s.e_k), (0.0, 0.0, 0.0));
            }
        }
        assert_eq!(report.identity_failures(), 0);
    }

    #[test]
    fn runs_are_reproducible() {
        let model = FieldModel::moving_average(Kernel::ones(2, 2), Innovation::CenteredExponential);
        let exp = experiment(CouplingMode::Surrogate, model);
        let a = exp.run().unwrap();
        let b = exp.run().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.identity_failures(), 0);
        let mut single = exp.clone();
        single.replicates = 1;
        assert_eq!(single.run().unwrap().replicates[0], a.replicates[0]);
    }
}
