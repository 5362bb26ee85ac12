//! Seeded associated random fields, discrete Wiener sheets and the
//! conditional fill that prescribes rectangle sums of a sheet.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{CovarianceError, CovarianceModel, Kernel};
use crate::lattice::{build_prefix_grid, CellGrid, LatticeError, MultiIndex, PrefixGrid, Rect};
use crate::rng::{CellStream, StreamKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("kernel dimension {kernel} differs from extent dimension {extent}")]
    DimensionMismatch { kernel: usize, extent: usize },
    #[error("sheet variance must be positive and finite, got {0}")]
    BadVariance(f64),
    #[error("assigned rectangles {0} and {1} overlap")]
    Overlap(Rect, Rect),
    #[error("prescribed sum {value} for {rect} is not finite")]
    NonFiniteAssignment { rect: Rect, value: f64 },
}

/// Innovation law, standardized to mean 0 and variance 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Innovation {
    Gaussian,
    CenteredExponential,
    Rademacher,
}

impl Innovation {
    pub fn draw(self, cells: &mut CellStream) -> f64 {
        match self {
            Innovation::Gaussian => cells.standard_normal(),
            Innovation::CenteredExponential => cells.exponential() - 1.0,
            Innovation::Rademacher => cells.rademacher(),
        }
    }

    /// Logarithm of the characteristic function `E exp(itZ)`. The branch is
    /// irrelevant as long as only sums of these logs are exponentiated.
    pub fn log_cf(self, t: f64) -> Complex64 {
        match self {
            Innovation::Gaussian => Complex64::new(-0.5 * t * t, 0.0),
            Innovation::CenteredExponential => {
                Complex64::new(-0.5 * t.mul_add(t, 1.0).ln(), t.atan() - t)
            }
            Innovation::Rademacher => Complex64::new(t.cos(), 0.0).ln(),
        }
    }

    /// `E|Z|^q`.
    pub fn abs_moment(self, q: f64) -> f64 {
        match self {
            Innovation::Gaussian => {
                2f64.powf(q / 2.0) * statrs::function::gamma::gamma((q + 1.0) / 2.0)
                    / std::f64::consts::PI.sqrt()
            }
            // split the integral of |x - 1|^q e^{-x} at x = 1
            Innovation::CenteredExponential => lower_part(q) + upper_tail(q),
            Innovation::Rademacher => 1.0,
        }
    }
}

/// `int_1^inf (x-1)^q e^{-x} dx = Gamma(q+1)/e`.
fn upper_tail(q: f64) -> f64 {
    statrs::function::gamma::gamma(q + 1.0) / std::f64::consts::E
}

/// `int_0^1 (1-x)^q e^{-x} dx = e^{-1} int_0^1 y^q e^{y} dy`, by series.
fn lower_part(q: f64) -> f64 {
    let mut sum = 0.0;
    let mut fact = 1.0;
    for k in 0..40 {
        if k > 0 {
            fact *= k as f64;
        }
        sum += 1.0 / (fact * (q + k as f64 + 1.0));
    }
    sum / std::f64::consts::E
}

/// Generating model of a field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldModel {
    Iid {
        d: usize,
        innovation: Innovation,
    },
    MovingAverage {
        kernel: Kernel,
        innovation: Innovation,
    },
}

impl FieldModel {
    pub fn iid(d: usize, innovation: Innovation) -> Self {
        FieldModel::Iid { d, innovation }
    }

    pub fn moving_average(kernel: Kernel, innovation: Innovation) -> Self {
        FieldModel::MovingAverage { kernel, innovation }
    }

    pub fn dim(&self) -> usize {
        match self {
            FieldModel::Iid { d, .. } => *d,
            FieldModel::MovingAverage { kernel, .. } => kernel.dim(),
        }
    }

    pub fn innovation(&self) -> Innovation {
        match self {
            FieldModel::Iid { innovation, .. } | FieldModel::MovingAverage { innovation, .. } => {
                *innovation
            }
        }
    }

    /// The moving-average kernel; the identity kernel for iid fields.
    pub fn kernel(&self) -> Kernel {
        match self {
            FieldModel::Iid { d, .. } => Kernel::identity(*d),
            FieldModel::MovingAverage { kernel, .. } => kernel.clone(),
        }
    }

    /// Exact covariance of the field.
    pub fn covariance(&self) -> Result<CovarianceModel, CovarianceError> {
        match self {
            FieldModel::Iid { d, .. } => CovarianceModel::iid(*d, 1.0),
            FieldModel::MovingAverage { kernel, .. } => kernel_autocovariance(kernel),
        }
    }

    /// True when every cell is exactly Gaussian.
    pub fn is_gaussian(&self) -> bool {
        self.innovation() == Innovation::Gaussian
    }
}

/// `rho(i) = sum_m a_m a_{m+i}`.
pub fn kernel_autocovariance(kernel: &Kernel) -> Result<CovarianceModel, CovarianceError> {
    CovarianceModel::kernel_induced(kernel.clone())
}

/// One realization on `(0, extent]` with its prefix sums.
#[derive(Clone, Debug)]
pub struct FieldSample {
    pub model: FieldModel,
    pub key: StreamKey,
    cells: CellGrid,
    prefix: PrefixGrid,
}

impl FieldSample {
    pub fn extent(&self) -> &MultiIndex {
        self.cells.extent()
    }

    pub fn cells(&self) -> &CellGrid {
        &self.cells
    }

    pub fn prefix(&self) -> &PrefixGrid {
        &self.prefix
    }

    /// `S(V)`.
    pub fn sum(&self, v: &Rect) -> Result<f64, LatticeError> {
        self.prefix.rect_sum(v)
    }

    /// `S_N`.
    pub fn partial_sum(&self, n: &MultiIndex) -> Result<f64, LatticeError> {
        self.prefix.cumulative(n)
    }
}

/// Draws the field on `(0, extent]`. Innovations live on the box extended by
/// the kernel support on the low side, so every cell has the stationary law.
/// Innovation `z` (1-based in the extended box) is draw number `offset(z)` of
/// the key's stream, which makes the identity kernel reproduce the iid field.
pub fn simulate_field(
    model: &FieldModel,
    extent: &MultiIndex,
    key: StreamKey,
) -> Result<FieldSample, FieldError> {
    let kernel = model.kernel();
    let d = extent.dim();
    if kernel.dim() != d {
        return Err(FieldError::DimensionMismatch {
            kernel: kernel.dim(),
            extent: d,
        });
    }
    let halo: Vec<u64> = kernel.shape().coords().iter().map(|&s| s - 1).collect();
    let ext_coords = extent
        .coords()
        .iter()
        .zip(&halo)
        .map(|(&e, &h)| {
            e.checked_add(h)
                .ok_or(LatticeError::Overflow("halo extent"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let big_extent = MultiIndex::new(ext_coords);
    let n_big =
        usize::try_from(big_extent.product()?).map_err(|_| LatticeError::Overflow("grid size"))?;
    let innovation = model.innovation();
    let mut stream = key.cells();
    let z: Vec<f64> = (0..n_big).map(|_| innovation.draw(&mut stream)).collect();
    let z = CellGrid::new(big_extent, z)?;

    let cells = if kernel.is_identity() {
        CellGrid::new(extent.clone(), z.into_values())?
    } else {
        convolve(&z, &kernel, extent, &halo)?
    };
    let prefix = build_prefix_grid(&cells)?;
    Ok(FieldSample {
        model: model.clone(),
        key,
        cells,
        prefix,
    })
}

/// `X_j = sum_m a_m Z_{j - m}` with `Z` indexed in the extended box.
fn convolve(
    z: &CellGrid,
    kernel: &Kernel,
    extent: &MultiIndex,
    halo: &[u64],
) -> Result<CellGrid, FieldError> {
    let d = extent.dim();
    let mut out = CellGrid::filled(extent.clone(), 0.0)?;
    let entries: Vec<(usize, f64)> = kernel
        .entries()
        .into_iter()
        .filter(|(_, w)| *w != 0.0)
        .map(|(m, w)| {
            // partner of cell j is innovation j - m, at j + halo - m
            let shift: Vec<u64> = (0..d).map(|s| halo[s] - m.get(s) + 1).collect();
            (z.offset(&shift), w)
        })
        .collect();
    // field cell j sits at j + halo in the extended box; walk it row-major
    let origins = z.offsets_in(&Rect::anchored(extent.clone()));
    for (o, x) in origins.into_iter().zip(out.values_mut().iter_mut()) {
        let mut acc = 0.0;
        for &(shift, w) in &entries {
            acc += w * z.values()[o + shift];
        }
        *x = acc;
    }
    Ok(out)
}

/// Discrete Wiener sheet: independent `N(0, sigma^2)` unit-cell increments.
#[derive(Clone, Debug)]
pub struct WienerSheet {
    pub sigma2: f64,
    cells: CellGrid,
    prefix: PrefixGrid,
}

impl WienerSheet {
    pub fn extent(&self) -> &MultiIndex {
        self.cells.extent()
    }

    pub fn cells(&self) -> &CellGrid {
        &self.cells
    }

    pub fn prefix(&self) -> &PrefixGrid {
        &self.prefix
    }

    /// `W(R)`.
    pub fn w(&self, r: &Rect) -> Result<f64, LatticeError> {
        self.prefix.rect_sum(r)
    }

    /// `W_N = W((0, N])`.
    pub fn w_at(&self, n: &MultiIndex) -> Result<f64, LatticeError> {
        self.prefix.cumulative(n)
    }

    /// Sheet whose increments are the given cells, with no further checks on their law.
    pub fn from_cells(sigma2: f64, cells: CellGrid) -> Result<Self, FieldError> {
        let prefix = build_prefix_grid(&cells)?;
        Ok(WienerSheet {
            sigma2,
            cells,
            prefix,
        })
    }
}

fn check_variance(sigma2: f64) -> Result<(), FieldError> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(FieldError::BadVariance(sigma2))
    }
}

fn gaussian_cells(
    sigma2: f64,
    extent: &MultiIndex,
    key: StreamKey,
) -> Result<CellGrid, FieldError> {
    let n = usize::try_from(extent.product()?).map_err(|_| LatticeError::Overflow("grid size"))?;
    let sd = sigma2.sqrt();
    let mut stream = key.cells();
    let values = (0..n).map(|_| sd * stream.standard_normal()).collect();
    Ok(CellGrid::new(extent.clone(), values)?)
}

pub fn simulate_wiener_sheet(
    sigma2: f64,
    extent: &MultiIndex,
    key: StreamKey,
) -> Result<WienerSheet, FieldError> {
    check_variance(sigma2)?;
    WienerSheet::from_cells(sigma2, gaussian_cells(sigma2, extent, key)?)
}

/// Sheet with prescribed sums on disjoint rectangles: free increments are
/// drawn as for [`simulate_wiener_sheet`], then each assigned rectangle is
/// shifted uniformly so that its sum equals the prescription. Given the sums,
/// the cells have the exact conditional Gaussian law.
pub fn conditional_fill(
    assignments: &[(Rect, f64)],
    sigma2: f64,
    extent: &MultiIndex,
    key: StreamKey,
) -> Result<WienerSheet, FieldError> {
    check_variance(sigma2)?;
    for (i, (a, va)) in assignments.iter().enumerate() {
        if !va.is_finite() {
            return Err(FieldError::NonFiniteAssignment {
                rect: a.clone(),
                value: *va,
            });
        }
        if a.dim() != extent.dim() || !a.is_within(extent) {
            return Err(LatticeError::OutOfBounds {
                rect: a.clone(),
                extent: extent.clone(),
            }
            .into());
        }
        for (b, _) in &assignments[i + 1..] {
            if a.intersects(b) {
                return Err(FieldError::Overlap(a.clone(), b.clone()));
            }
        }
    }
    let mut cells = gaussian_cells(sigma2, extent, key)?;
    for (rect, target) in assignments {
        if rect.is_empty() {
            continue;
        }
        let offsets = cells.offsets_in(rect);
        let values = cells.values_mut();
        let current: f64 = offsets.iter().map(|&o| values[o]).sum();
        let shift = (target - current) / offsets.len() as f64;
        for &o in &offsets {
            values[o] += shift;
        }
    }
    WienerSheet::from_cells(sigma2, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn key(seed: u64) -> StreamKey {
        StreamKey::new(seed, 0, Stream::Field)
    }

    #[test]
    fn identity_kernel_reproduces_iid() {
        let ext = MultiIndex::from([7, 5]);
        let iid = simulate_field(
            &FieldModel::iid(2, Innovation::CenteredExponential),
            &ext,
            key(3),
        )
        .unwrap();
        let ma = simulate_field(
            &FieldModel::moving_average(Kernel::identity(2), Innovation::CenteredExponential),
            &ext,
            key(3),
        )
        .unwrap();
        assert_eq!(iid.cells().values(), ma.cells().values());
    }

    #[test]
    fn moving_average_matches_direct_convolution() {
        let kernel = Kernel::new([2, 3].into(), vec![1.0, 0.5, 0.0, 2.0, 0.25, 1.5]).unwrap();
        let ext = MultiIndex::from([4, 6]);
        let model = FieldModel::moving_average(kernel.clone(), Innovation::Gaussian);
        let sample = simulate_field(&model, &ext, key(9)).unwrap();
        // innovations on the extended box (5, 8), drawn in row-major order
        let mut stream = key(9).cells();
        let z: Vec<f64> = (0..40).map(|_| stream.standard_normal()).collect();
        let zat = |a: i64, b: i64| z[((a + 1) * 8 + (b + 2)) as usize];
        for j1 in 1..=4i64 {
            for j2 in 1..=6i64 {
                let mut want = 0.0;
                for (m, w) in kernel.entries() {
                    want += w * zat(j1 - m.get(0) as i64 - 1, j2 - m.get(1) as i64 - 1);
                }
                let got = sample.cells().get(&[j1 as u64, j2 as u64].into());
                assert!((got - want).abs() < 1e-12, "({j1},{j2})");
            }
        }
    }

    #[test]
    fn same_key_is_bit_identical() {
        let model = FieldModel::moving_average(Kernel::ones(2, 3), Innovation::Rademacher);
        let a = simulate_field(&model, &[16, 16].into(), key(1)).unwrap();
        let b = simulate_field(&model, &[16, 16].into(), key(1)).unwrap();
        assert_eq!(a.cells().values(), b.cells().values());
    }

    #[test]
    fn kernel_autocovariance_examples() {
        let m = kernel_autocovariance(&Kernel::identity(2)).unwrap();
        assert_eq!((m.rho(&[0, 0]), m.rho(&[1, 0])), (1.0, 0.0));
        let m = kernel_autocovariance(&Kernel::new([2].into(), vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!((m.rho(&[0]), m.rho(&[1]), m.sigma2()), (2.0, 1.0, 4.0));
    }

    #[test]
    fn innovation_log_cf_matches_series() {
        // second-order expansion: log phi(t) ~ -t^2/2 for small t
        for law in [
            Innovation::Gaussian,
            Innovation::CenteredExponential,
            Innovation::Rademacher,
        ] {
            let t = 1e-3;
            let l = law.log_cf(t);
            assert!((l.re + t * t / 2.0).abs() < 1e-9, "{law:?}");
            assert!(l.im.abs() < 1e-8);
        }
        // exact value of the centered exponential at t = 1
        let l = Innovation::CenteredExponential.log_cf(1.0);
        let phi = Complex64::new(0.0, -1.0).exp() / Complex64::new(1.0, -1.0);
        assert!((l.exp() - phi).norm() < 1e-15);
    }

    #[test]
    fn absolute_moments() {
        let g3 = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((Innovation::Gaussian.abs_moment(3.0) - g3).abs() < 1e-12);
        assert!((Innovation::Gaussian.abs_moment(2.0) - 1.0).abs() < 1e-12);
        assert!((Innovation::CenteredExponential.abs_moment(2.0) - 1.0).abs() < 1e-12);
        // E|E-1|^3 = 12/e - 2
        let want = 12.0 / std::f64::consts::E - 2.0;
        assert!((Innovation::CenteredExponential.abs_moment(3.0) - want).abs() < 1e-12);
        assert_eq!(Innovation::Rademacher.abs_moment(3.0), 1.0);
    }

    #[test]
    fn conditional_fill_hits_prescribed_sums() {
        let ext = MultiIndex::from([8, 8]);
        let a = Rect::new([0, 0].into(), [2, 3].into()).unwrap();
        let b = Rect::new([4, 4].into(), [8, 5].into()).unwrap();
        let sheet =
            conditional_fill(&[(a.clone(), 2.5), (b.clone(), -7.0)], 1.5, &ext, key(4)).unwrap();
        assert!((sheet.w(&a).unwrap() - 2.5).abs() < 1e-12);
        assert!((sheet.w(&b).unwrap() + 7.0).abs() < 1e-12);
        let free = simulate_wiener_sheet(1.5, &ext, key(4)).unwrap();
        let outside = MultiIndex::from([6, 7]);
        assert_eq!(sheet.cells().get(&outside), free.cells().get(&outside));
        let overlap = Rect::new([1, 1].into(), [3, 3].into()).unwrap();
        assert!(matches!(
            conditional_fill(&[(a, 0.0), (overlap, 0.0)], 1.0, &ext, key(4)),
            Err(FieldError::Overlap(..))
        ));
        let empty = Rect::new([1, 1].into(), [1, 3].into()).unwrap();
        assert_eq!(sheet.w(&empty).unwrap(), 0.0);
    }
}
