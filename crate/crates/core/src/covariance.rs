//! Exact second moments of stationary fields with nonnegative covariance:
//! `rho(i)`, `sigma^2`, `u(n)`, `sigma^2(V)` for unions of rectangles and
//! cross-covariances of block sums.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{block_distance, decompose_block, BlockGeometry, GeometryError, Parameters};
use crate::lattice::{LatticeError, MultiIndex, Rect};
use crate::special::hurwitz_zeta;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovarianceError {
    #[error("invalid covariance model: {0}")]
    InvalidModel(String),
    #[error("power model with p = {p} <= d = {d} has infinite susceptibility")]
    Divergent { p: f64, d: usize },
    #[error("model has dimension {model}, region has dimension {region}")]
    DimensionMismatch { model: usize, region: usize },
    #[error("rectangles {0} and {1} overlap")]
    Overlap(Rect, Rect),
    #[error("empty region")]
    EmptyRegion,
    #[error("gap fit needs at least 3 sizes, got {0}")]
    TooFewVolumes(usize),
    #[error("coordinate {0} too large for signed lag arithmetic")]
    CoordinateRange(u64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Finite moving-average kernel: `X_j = sum_m a_m Z_{j - m}` over `0 <= m < shape`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    shape: MultiIndex,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(shape: MultiIndex, weights: Vec<f64>) -> Result<Self, CovarianceError> {
        let bad = |m: String| Err(CovarianceError::InvalidModel(m));
        if shape.dim() == 0 || shape.coords().contains(&0) {
            return bad(format!("kernel shape {shape} must be positive"));
        }
        let n = shape.product()? as usize;
        if weights.len() != n {
            return bad(format!(
                "kernel shape {shape} needs {n} weights, got {}",
                weights.len()
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return bad(format!(
                "kernel weights must be finite and nonnegative, got {w}"
            ));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return bad("kernel must have a positive weight".into());
        }
        Ok(Kernel { shape, weights })
    }

    /// The single weight 1 at the origin.
    pub fn identity(d: usize) -> Self {
        Kernel {
            shape: MultiIndex::ones(d),
            weights: vec![1.0],
        }
    }

    /// All-ones kernel with the given side on every axis.
    pub fn ones(d: usize, side: u64) -> Self {
        let shape = MultiIndex::splat(d, side);
        let n = side.pow(d as u32) as usize;
        Kernel {
            shape,
            weights: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn shape(&self) -> &MultiIndex {
        &self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The single unit weight at the origin.
    pub fn is_identity(&self) -> bool {
        self.weights == [1.0]
    }

    /// `(offset, weight)` pairs in row-major order.
    pub fn entries(&self) -> Vec<(MultiIndex, f64)> {
        Rect::anchored(self.shape.clone())
            .points()
            .map(|p| MultiIndex::new(p.coords().iter().map(|&c| c - 1).collect()))
            .zip(self.weights.iter().copied())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceKind {
    Iid { sigma0sq: f64 },
    ProductGeometric { sigma0sq: f64, a: f64 },
    Power { c: f64, p: f64 },
    KernelInduced { kernel: Kernel },
}

/// Autocovariance table of a kernel over lags `-(shape-1) ..= shape-1`.
#[derive(Clone, Debug, PartialEq)]
struct LagTable {
    radius: Vec<i64>,
    strides: Vec<usize>,
    values: Vec<f64>,
}

impl LagTable {
    fn build(kernel: &Kernel) -> Self {
        let d = kernel.dim();
        let radius: Vec<i64> = kernel
            .shape
            .coords()
            .iter()
            .map(|&s| s as i64 - 1)
            .collect();
        let dims: Vec<usize> = radius.iter().map(|&r| (2 * r + 1) as usize).collect();
        let mut strides = vec![1usize; d];
        for s in (0..d.saturating_sub(1)).rev() {
            strides[s] = strides[s + 1] * dims[s + 1];
        }
        let len = dims.iter().product();
        let mut values = vec![0.0; len];
        let entries: Vec<(Vec<i64>, f64)> = kernel
            .entries()
            .into_iter()
            .map(|(m, w)| (m.coords().iter().map(|&c| c as i64).collect(), w))
            .collect();
        // rho(i) = sum_m a_m a_{m+i}
        for (m, wm) in &entries {
            for (n, wn) in &entries {
                let off: usize = (0..d)
                    .map(|s| ((n[s] - m[s] + radius[s]) as usize) * strides[s])
                    .sum();
                values[off] += wm * wn;
            }
        }
        LagTable {
            radius,
            strides,
            values,
        }
    }

    fn get(&self, lag: &[i64]) -> f64 {
        let mut off = 0usize;
        for (s, &l) in lag.iter().enumerate() {
            if l.abs() > self.radius[s] {
                return 0.0;
            }
            off += ((l + self.radius[s]) as usize) * self.strides[s];
        }
        self.values[off]
    }

    /// Nonzero lags with their values.
    fn support(&self) -> Vec<(Vec<i64>, f64)> {
        let d = self.radius.len();
        let hi = MultiIndex::new(self.radius.iter().map(|&r| (2 * r + 1) as u64).collect());
        Rect::anchored(hi)
            .points()
            .map(|p| {
                (0..d)
                    .map(|s| p.get(s) as i64 - 1 - self.radius[s])
                    .collect::<Vec<i64>>()
            })
            .map(|lag| {
                let v = self.get(&lag);
                (lag, v)
            })
            .filter(|(_, v)| *v != 0.0)
            .collect()
    }
}

/// A stationary covariance function on `Z^d` with `rho >= 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceModel {
    d: usize,
    kind: CovarianceKind,
    #[serde(skip)]
    lags: Option<LagTable>,
}

fn to_signed(c: u64) -> Result<i64, CovarianceError> {
    i64::try_from(c)
        .ok()
        .filter(|v| *v < i64::MAX / 4)
        .ok_or(CovarianceError::CoordinateRange(c))
}

/// `#{(x, y) : x in (a_lo, a_hi], y in (b_lo, b_hi], x - y = delta}`.
fn lag_count(a: (i64, i64), b: (i64, i64), delta: i64) -> i64 {
    (a.1.min(b.1 + delta) - a.0.max(b.0 + delta)).max(0)
}

impl CovarianceModel {
    pub fn new(d: usize, kind: CovarianceKind) -> Result<Self, CovarianceError> {
        let bad = |m: String| Err(CovarianceError::InvalidModel(m));
        if d == 0 {
            return bad("dimension must be >= 1".into());
        }
        let mut lags = None;
        match &kind {
            CovarianceKind::Iid { sigma0sq } => {
                if !(*sigma0sq > 0.0 && sigma0sq.is_finite()) {
                    return bad(format!("sigma0sq must be positive, got {sigma0sq}"));
                }
            }
            CovarianceKind::ProductGeometric { sigma0sq, a } => {
                if !(*sigma0sq > 0.0 && sigma0sq.is_finite()) {
                    return bad(format!("sigma0sq must be positive, got {sigma0sq}"));
                }
                if !(0.0..1.0).contains(a) {
                    return bad(format!("geometric rate must lie in [0, 1), got {a}"));
                }
            }
            CovarianceKind::Power { c, p } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return bad(format!("power amplitude must be positive, got {c}"));
                }
                if !(*p > d as f64) {
                    return Err(CovarianceError::Divergent { p: *p, d });
                }
            }
            CovarianceKind::KernelInduced { kernel } => {
                if kernel.dim() != d {
                    return Err(CovarianceError::DimensionMismatch {
                        model: d,
                        region: kernel.dim(),
                    });
                }
                lags = Some(LagTable::build(kernel));
            }
        }
        Ok(CovarianceModel { d, kind, lags })
    }

    pub fn iid(d: usize, sigma0sq: f64) -> Result<Self, CovarianceError> {
        Self::new(d, CovarianceKind::Iid { sigma0sq })
    }

    pub fn product_geometric(d: usize, sigma0sq: f64, a: f64) -> Result<Self, CovarianceError> {
        Self::new(d, CovarianceKind::ProductGeometric { sigma0sq, a })
    }

    pub fn power(d: usize, c: f64, p: f64) -> Result<Self, CovarianceError> {
        Self::new(d, CovarianceKind::Power { c, p })
    }

    pub fn kernel_induced(kernel: Kernel) -> Result<Self, CovarianceError> {
        Self::new(kernel.dim(), CovarianceKind::KernelInduced { kernel })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> &CovarianceKind {
        &self.kind
    }

    /// `rho(i) = cov(X_j, X_{j+i})`.
    pub fn rho(&self, lag: &[i64]) -> f64 {
        debug_assert_eq!(lag.len(), self.d);
        match &self.kind {
            CovarianceKind::Iid { sigma0sq } => {
                if lag.iter().all(|&l| l == 0) {
                    *sigma0sq
                } else {
                    0.0
                }
            }
            CovarianceKind::ProductGeometric { sigma0sq, a } => lag
                .iter()
                .fold(*sigma0sq, |acc, &l| acc * geometric_weight(*a, l)),
            CovarianceKind::Power { c, p } => {
                let norm = lag.iter().map(|l| l.unsigned_abs()).max().unwrap_or(0) as f64;
                c * (1.0 + norm).powf(-p)
            }
            CovarianceKind::KernelInduced { .. } => {
                self.lags.as_ref().expect("built at construction").get(lag)
            }
        }
    }

    /// `rho(0)`.
    pub fn sigma0sq(&self) -> f64 {
        self.rho(&vec![0; self.d])
    }

    /// `sigma^2 = sum_i rho(i)`.
    pub fn sigma2(&self) -> f64 {
        match &self.kind {
            CovarianceKind::Iid { sigma0sq } => *sigma0sq,
            CovarianceKind::ProductGeometric { sigma0sq, a } => {
                sigma0sq * ((1.0 + a) / (1.0 - a)).powi(self.d as i32)
            }
            CovarianceKind::Power { .. } => self.u(0),
            CovarianceKind::KernelInduced { kernel } => kernel.weights.iter().sum::<f64>().powi(2),
        }
    }

    /// `sigma` = square root of [`Self::sigma2`].
    pub fn sigma(&self) -> f64 {
        self.sigma2().sqrt()
    }

    /// `u(n) = sum_{||i|| >= n} rho(i)` with the sup norm.
    pub fn u(&self, n: u64) -> f64 {
        match &self.kind {
            CovarianceKind::Iid { sigma0sq } => {
                if n == 0 {
                    *sigma0sq
                } else {
                    0.0
                }
            }
            CovarianceKind::ProductGeometric { sigma0sq, a } => {
                let total = (1.0 + a) / (1.0 - a);
                if n == 0 {
                    return sigma0sq * total.powi(self.d as i32);
                }
                // S^d - s_n^d with s_n = S - 2a^n/(1-a), factored to avoid cancellation
                let gap = 2.0 * a.powf(n as f64) / (1.0 - a);
                let partial = total - gap;
                let sum: f64 = (0..self.d)
                    .map(|j| total.powi(j as i32) * partial.powi((self.d - 1 - j) as i32))
                    .sum();
                sigma0sq * gap * sum
            }
            CovarianceKind::Power { c, p } => {
                if n == 0 {
                    return c + self.u(1);
                }
                // shell ||i|| = k holds (2m-1)^d - (2m-3)^d points, m = k + 1
                let d = self.d as i32;
                let mut total = 0.0;
                for j in 0..d {
                    let coef =
                        binomial(d, j) * 2f64.powi(j) * ((-1f64).powi(d - j) - (-3f64).powi(d - j));
                    if coef != 0.0 {
                        total += coef * hurwitz_zeta(p - f64::from(j), (n + 1) as f64);
                    }
                }
                c * total
            }
            CovarianceKind::KernelInduced { .. } => self
                .lags
                .as_ref()
                .expect("built at construction")
                .support()
                .into_iter()
                .filter(|(lag, _)| lag.iter().map(|l| l.unsigned_abs()).max().unwrap_or(0) >= n)
                .map(|(_, v)| v)
                .sum(),
        }
    }

    /// Exponential decay rate of `u(n)`; infinite for finite-range models.
    pub fn lambda(&self) -> Option<f64> {
        match &self.kind {
            CovarianceKind::Iid { .. } | CovarianceKind::KernelInduced { .. } => {
                Some(f64::INFINITY)
            }
            CovarianceKind::ProductGeometric { a, .. } => {
                Some(if *a == 0.0 { f64::INFINITY } else { -a.ln() })
            }
            CovarianceKind::Power { .. } => None,
        }
    }

    /// Power decay rate of `u(n)`.
    pub fn nu(&self) -> f64 {
        match &self.kind {
            CovarianceKind::Power { p, .. } => p - self.d as f64,
            _ => f64::INFINITY,
        }
    }

    fn check_dim(&self, r: &Rect) -> Result<(), CovarianceError> {
        if r.dim() != self.d {
            return Err(CovarianceError::DimensionMismatch {
                model: self.d,
                region: r.dim(),
            });
        }
        Ok(())
    }

    /// `sum_{j in A, k in B} rho(j - k)`.
    pub fn cross_covariance(&self, a: &Rect, b: &Rect) -> Result<f64, CovarianceError> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        if a.is_empty() || b.is_empty() {
            return Ok(0.0);
        }
        let mut ar = Vec::with_capacity(self.d);
        let mut br = Vec::with_capacity(self.d);
        for s in 0..self.d {
            ar.push((to_signed(a.lo.get(s))?, to_signed(a.hi.get(s))?));
            br.push((to_signed(b.lo.get(s))?, to_signed(b.hi.get(s))?));
        }
        // lag range per axis
        let range: Vec<(i64, i64)> = (0..self.d)
            .map(|s| (ar[s].0 + 1 - br[s].1, ar[s].1 - br[s].0 - 1))
            .collect();
        Ok(match &self.kind {
            CovarianceKind::Iid { sigma0sq } => {
                sigma0sq
                    * (0..self.d)
                        .map(|s| lag_count(ar[s], br[s], 0) as f64)
                        .product::<f64>()
            }
            CovarianceKind::ProductGeometric { sigma0sq, a } => {
                let mut total = *sigma0sq;
                for s in 0..self.d {
                    let mut axis = 0.0;
                    for delta in range[s].0..=range[s].1 {
                        axis += lag_count(ar[s], br[s], delta) as f64 * geometric_weight(*a, delta);
                    }
                    total *= axis;
                }
                total
            }
            CovarianceKind::Power { .. } => {
                let counts: Vec<Vec<f64>> = (0..self.d)
                    .map(|s| {
                        (range[s].0..=range[s].1)
                            .map(|delta| lag_count(ar[s], br[s], delta) as f64)
                            .collect()
                    })
                    .collect();
                let hi = MultiIndex::new(counts.iter().map(|c| c.len() as u64).collect());
                let mut total = 0.0;
                let mut lag = vec![0i64; self.d];
                for p in Rect::anchored(hi).points() {
                    let mut weight = 1.0;
                    for s in 0..self.d {
                        let idx = (p.get(s) - 1) as usize;
                        weight *= counts[s][idx];
                        lag[s] = range[s].0 + idx as i64;
                    }
                    if weight > 0.0 {
                        total += weight * self.rho(&lag);
                    }
                }
                total
            }
            CovarianceKind::KernelInduced { .. } => {
                let support = self.lags.as_ref().expect("built at construction").support();
                support
                    .iter()
                    .map(|(lag, v)| {
                        v * (0..self.d)
                            .map(|s| lag_count(ar[s], br[s], lag[s]) as f64)
                            .product::<f64>()
                    })
                    .sum()
            }
        })
    }

    /// `sigma^2(V) = Var S(V)` for a rectangle.
    pub fn sigma2_rect(&self, v: &Rect) -> Result<f64, CovarianceError> {
        self.cross_covariance(v, v)
    }

    /// `sigma^2(V)` for a union of pairwise disjoint rectangles, cross terms included.
    pub fn exact_sigma2(&self, parts: &[Rect]) -> Result<f64, CovarianceError> {
        let parts: Vec<&Rect> = parts.iter().filter(|r| !r.is_empty()).collect();
        if parts.is_empty() {
            return Err(CovarianceError::EmptyRegion);
        }
        for (i, a) in parts.iter().enumerate() {
            for b in &parts[i + 1..] {
                if a.intersects(b) {
                    return Err(CovarianceError::Overlap((*a).clone(), (*b).clone()));
                }
            }
        }
        let mut total = 0.0;
        for (i, a) in parts.iter().enumerate() {
            total += self.cross_covariance(a, a)?;
            for b in &parts[i + 1..] {
                total += 2.0 * self.cross_covariance(a, b)?;
            }
        }
        Ok(total)
    }
}

fn geometric_weight(a: f64, lag: i64) -> f64 {
    if lag == 0 {
        1.0
    } else {
        a.powf(lag.unsigned_abs() as f64)
    }
}

fn binomial(n: i32, k: i32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Relative slack for floating-point comparisons against exact bounds.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceBoundReport {
    pub volume: u64,
    pub sigma2_v: f64,
    /// `sigma^2(V)/|V|`.
    pub ratio: f64,
    /// `rho(0)`.
    pub lower: f64,
    /// `sigma^2`.
    pub upper: f64,
    pub holds: bool,
}

fn bound_report(model: &CovarianceModel, volume: u64, sigma2_v: f64) -> VarianceBoundReport {
    let ratio = sigma2_v / volume as f64;
    let (lower, upper) = (model.sigma0sq(), model.sigma2());
    let holds = ratio >= lower * (1.0 - BOUND_SLACK) && ratio <= upper * (1.0 + BOUND_SLACK);
    VarianceBoundReport {
        volume,
        sigma2_v,
        ratio,
        lower,
        upper,
        holds,
    }
}

/// `rho(0) <= sigma^2(V)/|V| <= sigma^2` for a union of disjoint rectangles.
pub fn check_variance_bounds(
    model: &CovarianceModel,
    parts: &[Rect],
) -> Result<VarianceBoundReport, CovarianceError> {
    let sigma2_v = model.exact_sigma2(parts)?;
    let volume = parts.iter().map(|r| r.volume()).sum::<Result<u64, _>>()?;
    Ok(bound_report(model, volume, sigma2_v))
}

/// Variance sandwich of one block: `lambda_k^2/[k]^alpha` and `tau_k^2/|I_k|`
/// must both lie in `[rho(0), sigma^2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockVarianceSandwich {
    pub k: MultiIndex,
    pub big: VarianceBoundReport,
    pub small: VarianceBoundReport,
}

pub fn block_variance_sandwich(
    model: &CovarianceModel,
    params: &Parameters,
    k: &MultiIndex,
) -> Result<BlockVarianceSandwich, CovarianceError> {
    let dec = decompose_block(k, params)?;
    let big = check_variance_bounds(model, std::slice::from_ref(&dec.h))?;
    let small = check_variance_bounds(model, &dec.i_pieces)?;
    Ok(BlockVarianceSandwich {
        k: k.clone(),
        big,
        small,
    })
}

/// Log-log fit of the susceptibility gap `g(l) = sigma^2 - sigma^2(V_l)/|V_l|`
/// over squares `V_l = (0, l]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRateFit {
    pub sides: Vec<u64>,
    pub volumes: Vec<f64>,
    pub gaps: Vec<f64>,
    /// Least-squares slope of `log g` against `log |V|`; `None` when some gap vanishes.
    pub fitted_slope: Option<f64>,
    /// `-delta_0 = 1 - nu/d`; `None` when the model has no power rate.
    pub target: Option<f64>,
}

pub fn susceptibility_gap_fit(
    model: &CovarianceModel,
    sides: &[u64],
) -> Result<GapRateFit, CovarianceError> {
    if sides.len() < 3 {
        return Err(CovarianceError::TooFewVolumes(sides.len()));
    }
    let sigma2 = model.sigma2();
    let d = model.dim();
    let mut volumes = Vec::with_capacity(sides.len());
    let mut gaps = Vec::with_capacity(sides.len());
    for &l in sides {
        let v = Rect::anchored(MultiIndex::splat(d, l));
        let vol = v.volume()? as f64;
        let g = sigma2 - model.sigma2_rect(&v)? / vol;
        volumes.push(vol);
        gaps.push(g.max(0.0));
    }
    let fitted_slope = if gaps.iter().all(|&g| g > 0.0) {
        let x: Vec<f64> = volumes.iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
        Some(least_squares_slope(&x, &y))
    } else {
        None
    };
    let target = match model.kind() {
        CovarianceKind::Power { .. } => Some(1.0 - model.nu() / d as f64),
        _ => None,
    };
    Ok(GapRateFit {
        sides: sides.to_vec(),
        volumes,
        gaps,
        fitted_slope,
        target,
    })
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Covariance of two big-block sums and the exponent of its decay bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCovariance {
    pub i: MultiIndex,
    pub j: MultiIndex,
    /// `E(u_i u_j)`.
    pub exact: f64,
    pub m_ij: u64,
    /// `lambda * M_ij^beta`; `None` without exponential decay.
    pub bound_exponent: Option<f64>,
}

impl BlockCovariance {
    /// `E(u_i u_j) e^{lambda M_ij^beta}`: the constant the decay bound needs for this pair.
    pub fn implied_constant(&self) -> Option<f64> {
        self.bound_exponent.map(|e| {
            if self.exact == 0.0 {
                0.0
            } else {
                self.exact * e.exp()
            }
        })
    }
}

pub fn block_sum_covariance(
    model: &CovarianceModel,
    i: &MultiIndex,
    j: &MultiIndex,
    params: &Parameters,
) -> Result<BlockCovariance, CovarianceError> {
    let dist = block_distance(i, j, params)?;
    let hi = decompose_block(i, params)?.h;
    let hj = decompose_block(j, params)?.h;
    let exact = model.cross_covariance(&hi, &hj)?;
    let bound_exponent = model.lambda().map(|l| {
        if l.is_infinite() {
            f64::INFINITY
        } else {
            l * (dist.m_ij as f64).powi(params.beta as i32)
        }
    });
    Ok(BlockCovariance {
        i: i.clone(),
        j: j.clone(),
        exact,
        m_ij: dist.m_ij,
        bound_exponent,
    })
}

/// Largest implied decay constant over all pairs of good blocks in the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayConstantReport {
    pub pairs: usize,
    pub max_constant: f64,
    pub worst: Option<(MultiIndex, MultiIndex)>,
}

pub fn block_covariance_constant(
    model: &CovarianceModel,
    geometry: &BlockGeometry,
) -> Result<DecayConstantReport, CovarianceError> {
    let good = geometry.good_set();
    let mut report = DecayConstantReport {
        pairs: 0,
        max_constant: 0.0,
        worst: None,
    };
    for (a, i) in good.iter().enumerate() {
        for j in &good[a + 1..] {
            let bc = block_sum_covariance(model, i, j, geometry.params())?;
            report.pairs += 1;
            if let Some(c) = bc.implied_constant() {
                if c > report.max_constant || report.worst.is_none() {
                    report.max_constant = report.max_constant.max(c);
                    report.worst = Some((i.clone(), j.clone()));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Nested-loop double sum over all cell pairs.
    fn pair_sum(model: &CovarianceModel, parts: &[Rect]) -> f64 {
        let cells: Vec<MultiIndex> = parts
            .iter()
            .flat_map(|r| r.points().collect::<Vec<_>>())
            .collect();
        let mut total = 0.0;
        for a in &cells {
            for b in &cells {
                let lag: Vec<i64> = (0..a.dim())
                    .map(|s| a.get(s) as i64 - b.get(s) as i64)
                    .collect();
                total += model.rho(&lag);
            }
        }
        total
    }

    fn rect(lo: [u64; 2], hi: [u64; 2]) -> Rect {
        Rect::new(lo.into(), hi.into()).unwrap()
    }

    #[test]
    fn geometric_closed_forms() {
        let m = CovarianceModel::product_geometric(2, 1.0, 0.5).unwrap();
        assert!((m.sigma2() - 9.0).abs() < 1e-12);
        assert!((m.u(0) - 9.0).abs() < 1e-12);
        assert!((m.u(1) - 8.0).abs() < 1e-12);
        assert!((m.u(2) - 5.0).abs() < 1e-12);
        let v = Rect::anchored([2, 2].into());
        assert!((m.sigma2_rect(&v).unwrap() - 9.0).abs() < 1e-12);
        let m1 = CovarianceModel::product_geometric(1, 1.0, 0.5).unwrap();
        assert!((m1.sigma2_rect(&Rect::anchored([2].into())).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_u_matches_shell_sums() {
        let m = CovarianceModel::product_geometric(2, 1.3, 0.5).unwrap();
        for n in 0..8u64 {
            let mut inner = 0.0;
            for i in -60i64..=60 {
                for j in -60i64..=60 {
                    if i.abs().max(j.abs()) < n as i64 {
                        inner += m.rho(&[i, j]);
                    }
                }
            }
            assert!((m.sigma2() - inner - m.u(n)).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn iid_u_and_variance() {
        let m = CovarianceModel::iid(3, 2.5).unwrap();
        assert_eq!(m.u(0), 2.5);
        assert_eq!(m.u(1), 0.0);
        let v = Rect::new([1, 2, 0].into(), [4, 3, 5].into()).unwrap();
        assert_eq!(m.sigma2_rect(&v).unwrap(), 2.5 * 15.0);
    }

    #[test]
    fn power_u_matches_direct_shells() {
        let m = CovarianceModel::power(2, 1.0, 5.0).unwrap();
        // sum shells up to a large radius, then add the integral tail of 8k (1+k)^-5
        let big = 4000u64;
        for n in [0u64, 1, 2, 7] {
            let mut direct = 0.0;
            for k in n..big {
                let count = if k == 0 { 1.0 } else { (8 * k) as f64 };
                direct += count * (1.0 + k as f64).powf(-5.0);
            }
            let b = big as f64 + 1.0;
            direct += 8.0 * (b.powf(-3.0) / 3.0 - b.powf(-4.0) / 4.0) + 4.0 * b.powf(-4.0)
                - 4.0 * b.powf(-5.0);
            assert!(
                (m.u(n) - direct).abs() < 1e-12,
                "n={n}: {} vs {direct}",
                m.u(n)
            );
        }
        assert!(CovarianceModel::power(2, 1.0, 2.0).is_err());
    }

    #[test]
    fn kernel_model_examples() {
        let k = Kernel::new([2].into(), vec![1.0, 1.0]).unwrap();
        let m = CovarianceModel::kernel_induced(k).unwrap();
        assert_eq!(
            (m.rho(&[0]), m.rho(&[1]), m.rho(&[-1]), m.rho(&[2])),
            (2.0, 1.0, 1.0, 0.0)
        );
        assert_eq!(m.sigma2(), 4.0);
        assert_eq!(m.u(1), 2.0);
        assert!(Kernel::new([2].into(), vec![1.0, -0.5]).is_err());
    }

    #[test]
    fn cross_covariance_matches_pair_sums() {
        let models = [
            CovarianceModel::iid(2, 1.7).unwrap(),
            CovarianceModel::product_geometric(2, 1.0, 0.6).unwrap(),
            CovarianceModel::power(2, 2.0, 4.5).unwrap(),
            CovarianceModel::kernel_induced(
                Kernel::new([2, 3].into(), vec![1.0, 0.5, 0.2, 0.0, 2.0, 0.3]).unwrap(),
            )
            .unwrap(),
        ];
        let parts = [
            rect([0, 0], [3, 4]),
            rect([3, 1], [6, 2]),
            rect([7, 0], [9, 5]),
        ];
        for m in &models {
            let want = pair_sum(m, &parts);
            let got = m.exact_sigma2(&parts).unwrap();
            assert!(
                (got - want).abs() <= 1e-10 * want,
                "{:?}: {got} vs {want}",
                m.kind()
            );
        }
    }

    #[test]
    fn overlap_is_rejected() {
        let m = CovarianceModel::iid(2, 1.0).unwrap();
        assert!(matches!(
            m.exact_sigma2(&[rect([0, 0], [2, 2]), rect([1, 1], [3, 3])]),
            Err(CovarianceError::Overlap(..))
        ));
    }

    #[test]
    fn variance_bounds_examples() {
        let m = CovarianceModel::product_geometric(2, 1.0, 0.5).unwrap();
        let r = check_variance_bounds(&m, &[Rect::anchored([2, 2].into())]).unwrap();
        assert!((r.ratio - 2.25).abs() < 1e-12 && r.holds);
        let iid = CovarianceModel::iid(2, 3.0).unwrap();
        let r = check_variance_bounds(&iid, &[rect([1, 1], [5, 9])]).unwrap();
        assert_eq!((r.ratio, r.lower, r.upper), (3.0, 3.0, 3.0));
        assert!(r.holds);
    }

    #[test]
    fn block_sandwich_holds() {
        let p = Parameters::new(2, 3, 2, 0.8).unwrap();
        let m = CovarianceModel::product_geometric(2, 1.0, 0.5).unwrap();
        for k in [[1u64, 1], [2, 3], [3, 3]] {
            let s = block_variance_sandwich(&m, &p, &k.into()).unwrap();
            assert!(s.big.holds && s.small.holds);
        }
    }

    #[test]
    fn gap_fits() {
        let iid = CovarianceModel::iid(2, 1.0).unwrap();
        let f = susceptibility_gap_fit(&iid, &[8, 16, 32]).unwrap();
        assert!(f.gaps.iter().all(|&g| g == 0.0));
        assert_eq!(f.fitted_slope, None);
        let power = CovarianceModel::power(2, 1.0, 5.0).unwrap();
        let f = susceptibility_gap_fit(&power, &[8, 16, 32, 64, 128]).unwrap();
        assert_eq!(f.target, Some(-0.5));
        assert!(f.fitted_slope.unwrap() <= -0.4, "{:?}", f.fitted_slope);
        assert!(susceptibility_gap_fit(&power, &[8, 16]).is_err());
    }

    #[test]
    fn block_covariance_examples() {
        let p = Parameters::new(2, 3, 2, 0.8).unwrap();
        let iid = CovarianceModel::iid(2, 1.0).unwrap();
        let bc = block_sum_covariance(&iid, &[1, 1].into(), &[2, 1].into(), &p).unwrap();
        assert_eq!(bc.exact, 0.0);
        let geo = CovarianceModel::product_geometric(2, 1.0, 0.5).unwrap();
        let bc = block_sum_covariance(&geo, &[1, 1].into(), &[2, 1].into(), &p).unwrap();
        let hi = decompose_block(&[1, 1].into(), &p).unwrap().h;
        let hj = decompose_block(&[2, 1].into(), &p).unwrap().h;
        let mut want = 0.0;
        for a in hi.points() {
            for b in hj.points() {
                want += geo.rho(&[
                    a.get(0) as i64 - b.get(0) as i64,
                    a.get(1) as i64 - b.get(1) as i64,
                ]);
            }
        }
        assert!((bc.exact - want).abs() < 1e-14);
        assert_eq!(bc.m_ij, 1);
        let mut prev = f64::INFINITY;
        for j in 2..6u64 {
            let e = block_sum_covariance(&geo, &[2, 2].into(), &[2, j + 1].into(), &p)
                .unwrap()
                .exact;
            assert!(e <= prev);
            prev = e;
        }
    }
}
