//! Gaps `|S_N - W_N|` on a probe set inside the wedge, and the remainder maxima
//! of the field and of the sheet around each core rectangle.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::CouplingError;
use crate::field::{FieldSample, WienerSheet};
use crate::geometry::BlockGeometry;
use crate::lattice::{g_tau_contains, MultiIndex, PrefixGrid, Rect};

/// Ratio of the geometric grid of interior probe coordinates.
const GRID_RATIO: f64 = 1.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub n: MultiIndex,
    /// `[N]`.
    pub volume: f64,
    pub s_n: f64,
    pub w_n: f64,
    pub gap: f64,
    /// `gap / [N]^{1/2 - eps}`.
    pub ratio: f64,
}

/// Remainder maxima around `R_k`, for the field and for the sheet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderMaxima {
    pub k: MultiIndex,
    /// `[N_k]`.
    pub volume: f64,
    /// `D_s(N_k)` per axis.
    pub d_s: Vec<f64>,
    /// Sheet analogue of `D_s`.
    pub d_hat_s: Vec<f64>,
    /// `(J, M_k^{(J)})` for every nonempty `J`.
    pub m_j: Vec<(Vec<usize>, f64)>,
    /// `(J, M^_k^{(J)})`.
    pub m_hat_j: Vec<(Vec<usize>, f64)>,
}

impl RemainderMaxima {
    pub fn max_d(&self) -> f64 {
        self.d_s.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_d_hat(&self) -> f64 {
        self.d_hat_s.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_m(&self) -> f64 {
        self.m_j.iter().map(|(_, m)| *m).fold(0.0, f64::max)
    }

    pub fn max_m_hat(&self) -> f64 {
        self.m_hat_j.iter().map(|(_, m)| *m).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingProfile {
    pub tau: f64,
    pub epsilon: f64,
    /// Ordered by `[N]`, then lexicographically.
    pub probes: Vec<ProbePoint>,
    pub remainders: Vec<RemainderMaxima>,
}

impl CouplingProfile {
    /// Largest ratio over probes with `lo <= [N] <= hi`, if any.
    pub fn max_ratio_in(&self, lo: f64, hi: f64) -> Option<f64> {
        self.probes
            .iter()
            .filter(|p| p.volume >= lo && p.volume <= hi)
            .map(|p| p.ratio)
            .reduce(f64::max)
    }

    pub fn max_gap(&self) -> f64 {
        self.probes.iter().map(|p| p.gap).fold(0.0, f64::max)
    }

    pub fn remainder(&self, k: &MultiIndex) -> Option<&RemainderMaxima> {
        self.remainders.iter().find(|r| &r.k == k)
    }
}

/// Product grid of rounded powers of 1.25 inside `(0, extent]` and `G_tau`,
/// ordered by `[N]`, then lexicographically.
pub fn wedge_grid(extent: &MultiIndex, tau: f64) -> Vec<MultiIndex> {
    finish(grid_points(extent), extent, tau)
}

fn grid_points(extent: &MultiIndex) -> BTreeSet<MultiIndex> {
    let d = extent.dim();
    let tables: Vec<Vec<u64>> = (0..d)
        .map(|s| {
            let mut values = BTreeSet::new();
            let mut x = 1.0f64;
            while x.round() as u64 <= extent.get(s) {
                values.insert(x.round() as u64);
                x *= GRID_RATIO;
            }
            values.into_iter().collect()
        })
        .collect();
    let grid_shape = MultiIndex::new(tables.iter().map(|v| v.len() as u64).collect());
    Rect::anchored(grid_shape)
        .points()
        .map(|idx| {
            MultiIndex::new(
                (0..d)
                    .map(|s| tables[s][(idx.get(s) - 1) as usize])
                    .collect(),
            )
        })
        .collect()
}

fn finish(points: BTreeSet<MultiIndex>, extent: &MultiIndex, tau: f64) -> Vec<MultiIndex> {
    let mut out: Vec<MultiIndex> = points
        .into_iter()
        .filter(|n| n.min_coord() > 0 && n.le(extent) && g_tau_contains(n, tau))
        .collect();
    out.sort_by(|a, b| {
        a.product_f64()
            .total_cmp(&b.product_f64())
            .then_with(|| a.cmp(b))
    });
    out
}

/// Block corners `N_k` (for `k <= kmax + 1`) together with [`wedge_grid`].
pub fn probe_set(geometry: &BlockGeometry, extent: &MultiIndex, tau: f64) -> Vec<MultiIndex> {
    let mut points = grid_points(extent);
    let next = MultiIndex::new(geometry.kmax().coords().iter().map(|&c| c + 1).collect());
    for k in Rect::anchored(next).points() {
        points.insert(geometry.corner(&k));
    }
    finish(points, extent, tau)
}

fn rect_abs_max_over(
    prefix: &PrefixGrid,
    lo: &MultiIndex,
    n_k: &MultiIndex,
    axes: &[usize],
    n_next: &MultiIndex,
) -> f64 {
    // N_J ranges over prod_{s in J} (n_{k_s}, n_{k_s + 1}]; other axes stay at n_k
    let d = lo.dim();
    let range_lo = MultiIndex::new(
        (0..d)
            .map(|s| {
                if axes.contains(&s) {
                    n_k.get(s)
                } else {
                    n_k.get(s) - 1
                }
            })
            .collect(),
    );
    let range_hi = MultiIndex::new(
        (0..d)
            .map(|s| {
                if axes.contains(&s) {
                    n_next.get(s)
                } else {
                    n_k.get(s)
                }
            })
            .collect(),
    );
    Rect {
        lo: range_lo,
        hi: range_hi,
    }
    .points()
    .map(|hi| prefix.rect_sum_unchecked(lo.coords(), hi.coords()).abs())
    .fold(0.0, f64::max)
}

fn remainder_maxima(
    geometry: &BlockGeometry,
    k: &MultiIndex,
    field: &PrefixGrid,
    sheet: &PrefixGrid,
) -> Result<RemainderMaxima, CouplingError> {
    let regions = geometry.remainder_regions(k)?;
    let n_k = geometry.corner(k);
    let next = MultiIndex::new(k.coords().iter().map(|&c| c + 1).collect());
    let n_next = geometry.corner(&next);
    let d_s = regions
        .strips
        .iter()
        .map(|r| field.max_abs_anchored(&r.hi))
        .collect();
    let d_hat_s = regions
        .strips
        .iter()
        .map(|r| sheet.max_abs_anchored(&r.hi))
        .collect();
    let mut m_j = Vec::new();
    let mut m_hat_j = Vec::new();
    for (axes, region) in &regions.corners {
        m_j.push((
            axes.clone(),
            rect_abs_max_over(field, &region.lo, &n_k, axes, &n_next),
        ));
        m_hat_j.push((
            axes.clone(),
            rect_abs_max_over(sheet, &region.lo, &n_k, axes, &n_next),
        ));
    }
    Ok(RemainderMaxima {
        k: k.clone(),
        volume: n_k.product_f64(),
        d_s,
        d_hat_s,
        m_j,
        m_hat_j,
    })
}

/// Gaps on the probe set, and remainder maxima for every good block whose
/// next boundary layer fits in the sample.
pub fn coupling_error_profile(
    sample: &FieldSample,
    sheet: &WienerSheet,
    geometry: &BlockGeometry,
    tau: f64,
    epsilon: f64,
) -> Result<CouplingProfile, CouplingError> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(CouplingError::BadEpsilon(epsilon));
    }
    let extent = sample.extent();
    if sheet.extent() != extent {
        return Err(CouplingError::ExtentTooSmall {
            corner: sheet.extent().clone(),
            extent: extent.clone(),
        });
    }
    let points = probe_set(geometry, extent, tau);
    if points.is_empty() {
        return Err(CouplingError::EmptyProbeSet);
    }
    let probes = points
        .into_iter()
        .map(|n| {
            let s_n = sample.prefix().cumulative_at(n.coords());
            let w_n = sheet.prefix().cumulative_at(n.coords());
            let volume = n.product_f64();
            let gap = (s_n - w_n).abs();
            ProbePoint {
                n,
                volume,
                s_n,
                w_n,
                gap,
                ratio: gap / volume.powf(0.5 - epsilon),
            }
        })
        .collect();
    let remainders = geometry
        .good_set()
        .iter()
        .filter(|k| {
            let next = MultiIndex::new(k.coords().iter().map(|&c| c + 1).collect());
            geometry.corner(&next).le(extent)
        })
        .map(|k| remainder_maxima(geometry, k, sample.prefix(), sheet.prefix()))
        .collect::<Result<_, _>>()?;
    Ok(CouplingProfile {
        tau,
        epsilon,
        probes,
        remainders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{simulate_field, FieldModel, Innovation, WienerSheet};
    use crate::geometry::Parameters;
    use crate::lattice::CellGrid;
    use crate::rng::{Stream, StreamKey};

    fn setup(d: usize) -> (BlockGeometry, FieldSample) {
        let params = Parameters::new(d, 3, 2, 0.8).unwrap();
        let geo = BlockGeometry::new(params, MultiIndex::splat(d, 3)).unwrap();
        let ext = geo.corner(&MultiIndex::splat(d, 4));
        let model = FieldModel::iid(d, Innovation::Gaussian);
        let sample = simulate_field(&model, &ext, StreamKey::new(3, 0, Stream::Field)).unwrap();
        (geo, sample)
    }

    fn identity_sheet(sample: &FieldSample) -> WienerSheet {
        let cells =
            CellGrid::new(sample.extent().clone(), sample.cells().values().to_vec()).unwrap();
        WienerSheet::from_cells(1.0, cells).unwrap()
    }

    #[test]
    fn probes_lie_in_the_wedge() {
        let (geo, sample) = setup(2);
        let probes = probe_set(&geo, sample.extent(), 0.8);
        assert!(!probes.is_empty());
        assert!(probes
            .iter()
            .all(|n| g_tau_contains(n, 0.8) && n.le(sample.extent())));
        assert!(probes
            .windows(2)
            .all(|w| w[0].product_f64() <= w[1].product_f64()));
        assert!(probes.contains(&MultiIndex::from([130, 130])));
    }

    #[test]
    fn identity_sheet_has_zero_gaps() {
        let (geo, sample) = setup(2);
        let sheet = identity_sheet(&sample);
        let prof = coupling_error_profile(&sample, &sheet, &geo, 0.8, 0.05).unwrap();
        assert_eq!(prof.max_gap(), 0.0);
        for r in &prof.remainders {
            assert_eq!(r.d_s, r.d_hat_s);
            assert_eq!(r.m_j, r.m_hat_j);
        }
        assert!(coupling_error_profile(&sample, &sheet, &geo, 0.8, 0.5).is_err());
    }

    #[test]
    fn remainder_maxima_match_brute_force() {
        let (geo, sample) = setup(2);
        let sheet = identity_sheet(&sample);
        let k = MultiIndex::from([3, 3]);
        let prof = coupling_error_profile(&sample, &sheet, &geo, 0.8, 0.05).unwrap();
        let rem = prof.remainder(&k).unwrap();
        let core = geo.core_rectangle(&k).unwrap();
        for s in 0..2 {
            let corner = geo.corner(&k).with(s, core.m_k.get(s));
            let brute = Rect::anchored(corner)
                .points()
                .map(|n| sample.partial_sum(&n).unwrap().abs())
                .fold(0.0, f64::max);
            assert_eq!(rem.d_s[s], brute);
        }
        // J = {0}: N_0 in (50, 130], other axis at n_3 = 50
        let brute = (51..=130)
            .map(|n0| {
                sample
                    .sum(&Rect::new([50, 0].into(), [n0, 50].into()).unwrap())
                    .unwrap()
                    .abs()
            })
            .fold(0.0, f64::max);
        let m = rem.m_j.iter().find(|(j, _)| j == &vec![0]).unwrap().1;
        assert!((m - brute).abs() <= 1e-12 * brute.max(1.0));
    }

    #[test]
    fn one_dimensional_strips_vanish() {
        let (geo, sample) = setup(1);
        let sheet = identity_sheet(&sample);
        let prof = coupling_error_profile(&sample, &sheet, &geo, 0.8, 0.05).unwrap();
        assert!(!prof.remainders.is_empty());
        for r in &prof.remainders {
            assert_eq!(r.d_s, vec![0.0]);
        }
    }
}
