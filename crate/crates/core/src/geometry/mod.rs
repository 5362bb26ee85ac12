//! Deterministic blocking structure: boundary sequence `n_l`, blocks
//! `B_k = H_k ∪ I_k`, the good set `L`, core rectangles `R_k`, remainder
//! regions and block distances.

mod psi;
mod validate;

pub use psi::{enumerate_psi, k_star, PsiEnumerator};
pub use validate::{validate_parameters, HypothesisCheck, HypothesisStatus, ValidationReport};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{power_product, LatticeError, MultiIndex, Rect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("boundary n_{index} does not fit in 64 bits (needs {required_bits} bits)")]
    Overflow { index: u64, required_bits: u32 },
    #[error("block index {0} must have every coordinate >= 1")]
    BadBlockIndex(MultiIndex),
    #[error("block {0} is not a good block")]
    NotGoodBlock(MultiIndex),
    #[error("block {index} lies outside the geometry window kmax = {kmax}")]
    OutsideWindow { index: MultiIndex, kmax: MultiIndex },
    #[error("block distance needs distinct indices, got {0} twice")]
    SameBlock(MultiIndex),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

fn default_r() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1.0
}
fn default_lambda() -> f64 {
    std::f64::consts::LN_2
}
fn default_sigma0sq() -> f64 {
    1.0
}

/// Blocking exponents plus the moment and decay constants the hypotheses refer to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub d: usize,
    pub alpha: u32,
    pub beta: u32,
    pub tau: f64,
    /// Moment exponents: `sup E|X|^{2+r+delta} < inf`.
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Exponential decay rate of `u(n)`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Power decay rate of `u(n)`; defaults to just below `2d`.
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default = "default_sigma0sq")]
    pub sigma0sq: f64,
}

impl Parameters {
    /// Blocking parameters with default moment/decay constants.
    pub fn new(d: usize, alpha: u32, beta: u32, tau: f64) -> Result<Self, GeometryError> {
        let p = Parameters {
            d,
            alpha,
            beta,
            tau,
            r: default_r(),
            delta: default_delta(),
            lambda: default_lambda(),
            nu: None,
            sigma0sq: default_sigma0sq(),
        };
        p.check()?;
        Ok(p)
    }

    pub fn with_moments(mut self, r: f64, delta: f64) -> Self {
        self.r = r;
        self.delta = delta;
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = Some(nu);
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// Structural requirements; the quantitative hypotheses are
    /// reported by [`validate_parameters`] instead.
    pub fn check(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidParameters(m));
        if self.d == 0 {
            return bad("dimension must be >= 1".into());
        }
        if !(self.alpha > self.beta && self.beta > 1) {
            return bad(format!(
                "need alpha > beta > 1, got alpha={}, beta={}",
                self.alpha, self.beta
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.r > 0.0 && self.delta > 0.0 && self.lambda > 0.0 && self.sigma0sq > 0.0) {
            return bad("r, delta, lambda and sigma0sq must be positive".into());
        }
        if let Some(nu) = self.nu {
            if !(nu > 0.0) {
                return bad(format!("nu must be positive, got {nu}"));
            }
        }
        Ok(())
    }

    /// `rho = tau / 8`, the wedge exponent of the good blocks.
    pub fn rho(&self) -> f64 {
        self.tau / 8.0
    }

    pub fn nu(&self) -> f64 {
        self.nu.unwrap_or(1.95 * self.d as f64)
    }

    pub fn r0(&self) -> f64 {
        1f64.max(1.0 / (self.r + self.delta))
    }

    pub fn eps0(&self) -> f64 {
        let (r, b) = (self.r, self.beta as f64);
        2.0 * r * r * b / ((2.0 + r) * (4.0 + 3.0 * r))
    }

    pub fn alpha0(&self) -> f64 {
        1.0 / (2.0 * (self.alpha as f64 + 1.0))
    }

    pub fn delta0(&self) -> f64 {
        self.nu() / self.d as f64 - 1.0
    }

    /// Moment order `s = 2 + r + delta`.
    pub fn moment_order(&self) -> f64 {
        2.0 + self.r + self.delta
    }

    pub fn nu0(&self) -> f64 {
        self.r * (2.0 + self.r + self.delta) / (2.0 * self.delta)
    }
}

fn required_bits(value: f64) -> u32 {
    value.log2().floor() as u32 + 1
}

/// Block length `l^alpha + l^beta`, exact.
fn block_length(alpha: u32, beta: u32, l: u64) -> Option<u128> {
    let l = u128::from(l);
    l.checked_pow(alpha)?.checked_add(l.checked_pow(beta)?)
}

/// `(n_0, ..., n_{l_max})` with `n_l = sum_{i <= l} (i^alpha + i^beta)`.
pub fn boundary_sequence(alpha: u32, beta: u32, l_max: u64) -> Result<Vec<u64>, GeometryError> {
    if !(alpha > beta && beta > 1) {
        return Err(GeometryError::InvalidParameters(format!(
            "need alpha > beta > 1, got alpha={alpha}, beta={beta}"
        )));
    }
    let mut out = Vec::with_capacity(l_max as usize + 1);
    out.push(0u64);
    let mut acc: u64 = 0;
    for l in 1..=l_max {
        acc = extend_boundary(alpha, beta, l, acc)?;
        out.push(acc);
    }
    Ok(out)
}

fn extend_boundary(alpha: u32, beta: u32, l: u64, prev: u64) -> Result<u64, GeometryError> {
    let next = block_length(alpha, beta, l).and_then(|len| len.checked_add(u128::from(prev)));
    match next {
        Some(v) if v <= u128::from(u64::MAX) => Ok(v as u64),
        Some(v) => Err(GeometryError::Overflow {
            index: l,
            required_bits: 128 - v.leading_zeros(),
        }),
        None => {
            let approx = prev as f64 + (l as f64).powi(alpha as i32) + (l as f64).powi(beta as i32);
            Err(GeometryError::Overflow {
                index: l,
                required_bits: required_bits(approx),
            })
        }
    }
}

/// Boundary sequence that grows on demand.
#[derive(Clone, Debug)]
pub(crate) struct Boundary {
    alpha: u32,
    beta: u32,
    values: Vec<u64>,
}

impl Boundary {
    pub(crate) fn new(alpha: u32, beta: u32) -> Self {
        Boundary {
            alpha,
            beta,
            values: vec![0],
        }
    }

    pub(crate) fn get(&mut self, l: u64) -> Result<u64, GeometryError> {
        while (self.values.len() as u64) <= l {
            let next_l = self.values.len() as u64;
            let prev = *self.values.last().unwrap();
            self.values
                .push(extend_boundary(self.alpha, self.beta, next_l, prev)?);
        }
        Ok(self.values[l as usize])
    }
}

/// Extreme-vertex test for `B_i ⊆ G_rho`: for every axis `s`,
/// `n_{i_s - 1} + 1 >= prod_{s' != s} n_{i_{s'}}^rho`.
pub(crate) fn vertex_test(lower: &[u64], upper: &[u64], rho: f64) -> bool {
    let hi: Vec<f64> = upper.iter().map(|&u| u as f64).collect();
    (0..lower.len()).all(|s| (lower[s] + 1) as f64 >= power_product(&hi, s, rho))
}

fn check_block_index(k: &MultiIndex) -> Result<(), GeometryError> {
    if k.dim() == 0 || k.coords().contains(&0) {
        return Err(GeometryError::BadBlockIndex(k.clone()));
    }
    Ok(())
}

/// `B_k`, its big block `H_k` and the `d` pieces tiling `I_k = B_k \ H_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub k: MultiIndex,
    pub b: Rect,
    pub h: Rect,
    /// Piece `s` is the small strip on axis `s`, restricted to the H-range on
    /// axes before `s` and to the full block range on axes after `s`.
    pub i_pieces: Vec<Rect>,
}

impl BlockDecomposition {
    pub fn volume_b(&self) -> u64 {
        self.b
            .volume()
            .expect("block volume checked at construction")
    }

    pub fn volume_h(&self) -> u64 {
        self.h
            .volume()
            .expect("block volume checked at construction")
    }

    pub fn volume_i(&self) -> u64 {
        self.volume_b() - self.volume_h()
    }
}

fn decompose_with(
    k: &MultiIndex,
    alpha: u32,
    boundary: &mut Boundary,
) -> Result<BlockDecomposition, GeometryError> {
    check_block_index(k)?;
    let d = k.dim();
    let mut b_lo = Vec::with_capacity(d);
    let mut b_hi = Vec::with_capacity(d);
    let mut h_hi = Vec::with_capacity(d);
    for &ks in k.coords() {
        let lo = boundary.get(ks - 1)?;
        let hi = boundary.get(ks)?;
        let big = ks
            .checked_pow(alpha)
            .ok_or(GeometryError::Lattice(LatticeError::Overflow("k^alpha")))?;
        b_lo.push(lo);
        b_hi.push(hi);
        h_hi.push(lo + big);
    }
    let b = Rect::new(b_lo.clone().into(), b_hi.clone().into())?;
    let h = Rect::new(b_lo.clone().into(), h_hi.clone().into())?;
    b.volume()?;
    let i_pieces = (0..d)
        .map(|s| {
            let lo: Vec<u64> = (0..d)
                .map(|t| if t == s { h_hi[t] } else { b_lo[t] })
                .collect();
            let hi: Vec<u64> = (0..d)
                .map(|t| if t < s { h_hi[t] } else { b_hi[t] })
                .collect();
            Rect::new(lo.into(), hi.into())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BlockDecomposition {
        k: k.clone(),
        b,
        h,
        i_pieces,
    })
}

/// Standalone block decomposition; computes the boundary sequence it needs.
pub fn decompose_block(
    k: &MultiIndex,
    params: &Parameters,
) -> Result<BlockDecomposition, GeometryError> {
    let mut boundary = Boundary::new(params.alpha, params.beta);
    decompose_with(k, params.alpha, &mut boundary)
}

/// All block indices `1 <= i <= kmax` in lexicographic order.
pub(crate) fn block_indices(kmax: &MultiIndex) -> impl Iterator<Item = MultiIndex> + '_ {
    Rect::anchored(kmax.clone())
        .points()
        .collect::<Vec<_>>()
        .into_iter()
}

/// Good blocks `B_i ⊆ G_rho` with `i <= kmax`, lexicographic.
pub fn good_block_set(
    params: &Parameters,
    kmax: &MultiIndex,
) -> Result<Vec<MultiIndex>, GeometryError> {
    check_block_index(kmax)?;
    let mut boundary = Boundary::new(params.alpha, params.beta);
    boundary.get(kmax.sup_norm())?;
    let rho = params.rho();
    let mut out = Vec::new();
    for i in block_indices(kmax) {
        let lower: Vec<u64> = i
            .coords()
            .iter()
            .map(|&c| boundary.values[(c - 1) as usize])
            .collect();
        let upper: Vec<u64> = i
            .coords()
            .iter()
            .map(|&c| boundary.values[c as usize])
            .collect();
        if vertex_test(&lower, &upper, rho) {
            out.push(i);
        }
    }
    Ok(out)
}

/// A core rectangle `R_k = (M_k, N_k]` and the blocks it is made of.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreRectangle {
    pub k: MultiIndex,
    pub m_k: MultiIndex,
    pub r_k: Rect,
    /// Smallest good block index along each axis through `k`.
    pub first_good: MultiIndex,
    /// `L_k = { i : B_i ⊆ R_k }`, lexicographic.
    pub l_k: Vec<MultiIndex>,
    /// Members of `L_k` that are not good blocks (`R_k ⊄ H`).
    pub violations: Vec<MultiIndex>,
}

impl CoreRectangle {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Remainder regions of `(0, N_k]` and of the next boundary layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderRegions {
    pub k: MultiIndex,
    /// `(0, N_k^{(s)}]` for each axis.
    pub strips: Vec<Rect>,
    /// `I_k^{(J)}` at `N = N_{k+1}` for every nonempty `J`, as (axes of J, region).
    pub corners: Vec<(Vec<usize>, Rect)>,
}

/// Pairwise distance data of two big blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDistance {
    /// Sup-norm distance between the point sets `H_i` and `H_j`.
    pub dist: u64,
    /// `M_{i,j} = max_{s : i_s != j_s} (max(i_s, j_s) - 1)`.
    pub m_ij: u64,
}

/// The full blocking structure on the window `1 <= k <= kmax`.
#[derive(Clone, Debug)]
pub struct BlockGeometry {
    params: Parameters,
    kmax: MultiIndex,
    boundary: Vec<u64>,
    good_set: Vec<MultiIndex>,
    good_lookup: HashSet<MultiIndex>,
    psi: Vec<MultiIndex>,
}

impl BlockGeometry {
    pub fn new(params: Parameters, kmax: MultiIndex) -> Result<Self, GeometryError> {
        params.check()?;
        check_block_index(&kmax)?;
        kmax.expect_dim(params.d)?;
        // one layer beyond kmax for the inter-boundary regions
        let boundary = boundary_sequence(params.alpha, params.beta, kmax.sup_norm() + 1)?;
        let good_set = good_block_set(&params, &kmax)?;
        let good_lookup = good_set.iter().cloned().collect();
        let psi = PsiEnumerator::clipped(&params, &kmax)?.collect::<Result<Vec<_>, _>>()?;
        Ok(BlockGeometry {
            params,
            kmax,
            boundary,
            good_set,
            good_lookup,
            psi,
        })
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.d
    }

    pub fn kmax(&self) -> &MultiIndex {
        &self.kmax
    }

    /// `n_0, ..., n_{max(kmax) + 1}`.
    pub fn boundary(&self) -> &[u64] {
        &self.boundary
    }

    pub fn good_set(&self) -> &[MultiIndex] {
        &self.good_set
    }

    /// `psi` restricted to the window, in counting order.
    pub fn psi(&self) -> &[MultiIndex] {
        &self.psi
    }

    pub fn is_good(&self, k: &MultiIndex) -> bool {
        self.good_lookup.contains(k)
    }

    fn in_window(&self, k: &MultiIndex) -> Result<(), GeometryError> {
        check_block_index(k)?;
        k.expect_dim(self.dim())?;
        if !k.le(&self.kmax) {
            return Err(GeometryError::OutsideWindow {
                index: k.clone(),
                kmax: self.kmax.clone(),
            });
        }
        Ok(())
    }

    /// `N_k = (n_{k_1}, ..., n_{k_d})`; valid up to `kmax + 1`.
    pub fn corner(&self, k: &MultiIndex) -> MultiIndex {
        MultiIndex::new(
            k.coords()
                .iter()
                .map(|&c| self.boundary[c as usize])
                .collect(),
        )
    }

    pub fn decompose(&self, k: &MultiIndex) -> Result<BlockDecomposition, GeometryError> {
        self.in_window(k)?;
        let mut b = Boundary {
            alpha: self.params.alpha,
            beta: self.params.beta,
            values: self.boundary.clone(),
        };
        decompose_with(k, self.params.alpha, &mut b)
    }

    /// Per-point membership scan of `B_k ⊆ G_rho`; the brute-force oracle of the vertex test.
    pub fn is_good_by_scan(&self, k: &MultiIndex) -> Result<bool, GeometryError> {
        let dec = self.decompose(k)?;
        let inside = dec
            .b
            .points()
            .all(|p| crate::lattice::g_tau_contains(&p, self.params.rho()));
        Ok(inside)
    }

    /// `R_k`, `M_k` and `L_k` for a good block `k`.
    pub fn core_rectangle(&self, k: &MultiIndex) -> Result<CoreRectangle, GeometryError> {
        self.in_window(k)?;
        if !self.is_good(k) {
            return Err(GeometryError::NotGoodBlock(k.clone()));
        }
        let d = self.dim();
        let first_good: Vec<u64> = (0..d)
            .map(|s| {
                (1..=k.get(s))
                    .find(|&j| self.is_good(&k.with(s, j)))
                    .expect("k itself is good")
            })
            .collect();
        let m_k: Vec<u64> = first_good
            .iter()
            .map(|&j| self.boundary[(j - 1) as usize])
            .collect();
        let r_k = Rect::new(m_k.clone().into(), self.corner(k))?;
        let ranges = Rect::new(
            MultiIndex::new(first_good.iter().map(|&j| j - 1).collect()),
            k.clone(),
        )?;
        let l_k: Vec<MultiIndex> = ranges.points().collect();
        let violations = l_k.iter().filter(|i| !self.is_good(i)).cloned().collect();
        Ok(CoreRectangle {
            k: k.clone(),
            m_k: m_k.into(),
            r_k,
            first_good: first_good.into(),
            l_k,
            violations,
        })
    }

    /// Strips `(0, N_k^{(s)}]` and the regions `I_k^{(J)}` at `N = N_{k+1}`.
    pub fn remainder_regions(&self, k: &MultiIndex) -> Result<RemainderRegions, GeometryError> {
        let core = self.core_rectangle(k)?;
        let d = self.dim();
        let n_k = self.corner(k);
        let strips = (0..d)
            .map(|s| Rect::anchored(n_k.with(s, core.m_k.get(s))))
            .collect();
        let next = MultiIndex::new(k.coords().iter().map(|&c| c + 1).collect());
        let n_next = self.corner(&next);
        let corners = (1u32..(1 << d))
            .map(|mask| {
                let axes: Vec<usize> = (0..d).filter(|s| mask & (1 << s) != 0).collect();
                self.corner_region(k, &axes, &n_next).map(|r| (axes, r))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RemainderRegions {
            k: k.clone(),
            strips,
            corners,
        })
    }

    /// `I_k^{(J)} = prod_{s in J} (n_{k_s}, N_s] x prod_{s not in J} (0, n_{k_s}]`.
    pub fn corner_region(
        &self,
        k: &MultiIndex,
        axes: &[usize],
        n: &MultiIndex,
    ) -> Result<Rect, GeometryError> {
        let n_k = self.corner(k);
        let d = self.dim();
        let lo: Vec<u64> = (0..d)
            .map(|s| if axes.contains(&s) { n_k.get(s) } else { 0 })
            .collect();
        let hi: Vec<u64> = (0..d)
            .map(|s| {
                if axes.contains(&s) {
                    n.get(s)
                } else {
                    n_k.get(s)
                }
            })
            .collect();
        Ok(Rect::new(lo.into(), hi.into())?)
    }

    pub fn block_distance(
        &self,
        i: &MultiIndex,
        j: &MultiIndex,
    ) -> Result<BlockDistance, GeometryError> {
        block_distance_with(
            i,
            j,
            self.params.alpha,
            &mut Boundary {
                alpha: self.params.alpha,
                beta: self.params.beta,
                values: self.boundary.clone(),
            },
        )
    }
}

/// Sup-norm gap between `H_i` and `H_j` together with `M_{i,j}`.
pub fn block_distance(
    i: &MultiIndex,
    j: &MultiIndex,
    params: &Parameters,
) -> Result<BlockDistance, GeometryError> {
    block_distance_with(
        i,
        j,
        params.alpha,
        &mut Boundary::new(params.alpha, params.beta),
    )
}

fn block_distance_with(
    i: &MultiIndex,
    j: &MultiIndex,
    alpha: u32,
    boundary: &mut Boundary,
) -> Result<BlockDistance, GeometryError> {
    check_block_index(i)?;
    check_block_index(j)?;
    i.expect_dim(j.dim())?;
    if i == j {
        return Err(GeometryError::SameBlock(i.clone()));
    }
    let hi = decompose_with(i, alpha, boundary)?.h;
    let hj = decompose_with(j, alpha, boundary)?.h;
    let mut dist = 0u64;
    let mut m_ij = 0u64;
    for s in 0..i.dim() {
        // integer points of (lo, hi] are lo+1..=hi
        let gap = if hi.hi.get(s) < hj.lo.get(s) + 1 {
            hj.lo.get(s) + 1 - hi.hi.get(s)
        } else if hj.hi.get(s) < hi.lo.get(s) + 1 {
            hi.lo.get(s) + 1 - hj.hi.get(s)
        } else {
            0
        };
        dist = dist.max(gap);
        if i.get(s) != j.get(s) {
            m_ij = m_ij.max(i.get(s).max(j.get(s)) - 1);
        }
    }
    Ok(BlockDistance { dist, m_ij })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params2() -> Parameters {
        Parameters::new(2, 3, 2, 0.8).unwrap()
    }

    #[test]
    fn boundary_example() {
        assert_eq!(
            boundary_sequence(3, 2, 6).unwrap(),
            vec![0, 2, 14, 50, 130, 280, 532]
        );
        for (a, b) in [(3, 2), (5, 2), (9, 4)] {
            assert_eq!(boundary_sequence(a, b, 1).unwrap()[1], 2);
        }
    }

    #[test]
    fn boundary_asymptotics() {
        let n = boundary_sequence(3, 2, 50).unwrap();
        let ratio = n[50] as f64 / 50f64.powi(4);
        assert!((ratio - 0.25).abs() < 0.025, "{ratio}");
    }

    #[test]
    fn boundary_overflow_reports_width() {
        match boundary_sequence(40, 2, 10) {
            Err(GeometryError::Overflow {
                index,
                required_bits,
            }) => {
                assert_eq!(index, 4);
                // 4^40 = 2^80
                assert!((81..=82).contains(&required_bits), "{required_bits}");
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_exponents() {
        assert!(boundary_sequence(2, 2, 3).is_err());
        assert!(Parameters::new(2, 3, 1, 0.5).is_err());
        assert!(Parameters::new(2, 3, 2, 1.0).is_err());
    }

    #[test]
    fn decomposition_example() {
        let dec = decompose_block(&[2, 3].into(), &params2()).unwrap();
        assert_eq!(dec.b, Rect::new([2, 14].into(), [14, 50].into()).unwrap());
        assert_eq!(dec.h, Rect::new([2, 14].into(), [10, 41].into()).unwrap());
        assert_eq!(dec.volume_h(), 216);
        assert_eq!(dec.volume_b(), 432);
        assert_eq!(dec.volume_i(), 216);
        let pieces: u64 = dec.i_pieces.iter().map(|r| r.volume().unwrap()).sum();
        assert_eq!(pieces, 216);
    }

    #[test]
    fn unit_block() {
        for d in 1..=3 {
            let p = Parameters::new(d, 3, 2, 0.8).unwrap();
            let dec = decompose_block(&MultiIndex::ones(d), &p).unwrap();
            assert_eq!(dec.b, Rect::anchored(MultiIndex::splat(d, 2)));
            assert_eq!(dec.h, Rect::anchored(MultiIndex::ones(d)));
            assert_eq!(dec.volume_h(), 1);
        }
    }

    #[test]
    fn pieces_tile_small_block() {
        let p = Parameters::new(3, 3, 2, 0.8).unwrap();
        for k in block_indices(&[3, 2, 4].into()) {
            let dec = decompose_block(&k, &p).unwrap();
            for point in dec.b.points() {
                let in_h = dec.h.contains(&point) as usize;
                let in_pieces = dec.i_pieces.iter().filter(|r| r.contains(&point)).count();
                assert_eq!(in_h + in_pieces, 1, "point {point} of block {k}");
            }
            let d = 3i32;
            let c = 2f64.powi(d - 1);
            for (s, piece) in dec.i_pieces.iter().enumerate() {
                let bound: f64 = (0..3)
                    .map(|t| {
                        let kt = k.get(t) as f64;
                        if t == s {
                            kt.powi(2)
                        } else {
                            kt.powi(3)
                        }
                    })
                    .product();
                assert!(piece.volume().unwrap() as f64 <= c * bound);
            }
        }
    }

    #[test]
    fn good_set_example_and_scan_oracle() {
        let p = Parameters::new(2, 3, 2, 0.8).unwrap();
        let geo = BlockGeometry::new(p, [3, 3].into()).unwrap();
        let want: Vec<MultiIndex> =
            vec![[2, 2].into(), [2, 3].into(), [3, 2].into(), [3, 3].into()];
        assert_eq!(geo.good_set(), want.as_slice());
        for k in block_indices(&[3, 3].into()) {
            assert_eq!(geo.is_good(&k), geo.is_good_by_scan(&k).unwrap(), "{k}");
        }
    }

    #[test]
    fn vertex_test_at_tiny_rho() {
        let mut p = Parameters::new(2, 3, 2, 0.8).unwrap();
        p.tau = 8e-6;
        let good = good_block_set(&p, &[5, 5].into()).unwrap();
        let expected: Vec<MultiIndex> = block_indices(&[5, 5].into())
            .filter(|k| k.min_coord() >= 2)
            .collect();
        assert_eq!(good, expected);
    }

    #[test]
    fn one_dimensional_blocks_are_all_good() {
        let p = Parameters::new(1, 3, 2, 0.5).unwrap();
        let good = good_block_set(&p, &[8].into()).unwrap();
        assert_eq!(good.len(), 8);
    }

    #[test]
    fn core_rectangle_example() {
        let geo = BlockGeometry::new(params2(), [3, 3].into()).unwrap();
        let core = geo.core_rectangle(&[3, 3].into()).unwrap();
        assert_eq!(core.m_k, MultiIndex::from([2, 2]));
        assert_eq!(core.r_k, Rect::new([2, 2].into(), [50, 50].into()).unwrap());
        assert_eq!(core.l_k.len(), 4);
        assert!(core.is_consistent());
        assert!(matches!(
            geo.core_rectangle(&[1, 3].into()),
            Err(GeometryError::NotGoodBlock(_))
        ));
    }

    #[test]
    fn core_rectangle_one_dimensional() {
        let p = Parameters::new(1, 3, 2, 0.5).unwrap();
        let geo = BlockGeometry::new(p, [5].into()).unwrap();
        let core = geo.core_rectangle(&[4].into()).unwrap();
        assert_eq!(core.r_k, Rect::anchored([130].into()));
        assert_eq!(core.l_k.len(), 4);
        let rem = geo.remainder_regions(&[4].into()).unwrap();
        assert!(rem.strips[0].is_empty());
    }

    #[test]
    fn core_tiling_volume() {
        let geo = BlockGeometry::new(params2(), [6, 6].into()).unwrap();
        for k in geo.good_set().to_vec() {
            let core = geo.core_rectangle(&k).unwrap();
            let total: u64 = core
                .l_k
                .iter()
                .map(|i| geo.decompose(i).unwrap().volume_b())
                .sum();
            assert_eq!(total, core.r_k.volume().unwrap());
        }
    }

    #[test]
    fn remainder_example_and_union() {
        let geo = BlockGeometry::new(params2(), [3, 3].into()).unwrap();
        let rem = geo.remainder_regions(&[3, 3].into()).unwrap();
        assert_eq!(rem.strips[0], Rect::anchored([2, 50].into()));
        assert_eq!(rem.strips[1], Rect::anchored([50, 2].into()));
        let core = geo.core_rectangle(&[3, 3].into()).unwrap();
        for p in Rect::anchored([50, 50].into()).points() {
            let covered = core.r_k.contains(&p) || rem.strips.iter().any(|s| s.contains(&p));
            assert!(covered, "{p}");
        }
        assert_eq!(rem.corners.len(), 3);
        // J = {1,2}: (50,130]^2
        assert_eq!(
            rem.corners[2].1,
            Rect::new([50, 50].into(), [130, 130].into()).unwrap()
        );
    }

    #[test]
    fn distance_examples_against_brute_force() {
        let p = params2();
        let brute = |i: &MultiIndex, j: &MultiIndex| {
            let hi = decompose_block(i, &p).unwrap().h;
            let hj = decompose_block(j, &p).unwrap().h;
            hi.points()
                .flat_map(|a| hj.points().map(move |b| (a.clone(), b)))
                .map(|(a, b)| (0..2).map(|s| a.get(s).abs_diff(b.get(s))).max().unwrap())
                .min()
                .unwrap()
        };
        let d = block_distance(&[1, 1].into(), &[2, 3].into(), &p).unwrap();
        assert_eq!(d, BlockDistance { dist: 14, m_ij: 2 });
        assert_eq!(d.dist, brute(&[1, 1].into(), &[2, 3].into()));
        let adj = block_distance(&[1, 1].into(), &[2, 1].into(), &p).unwrap();
        assert_eq!(adj, BlockDistance { dist: 2, m_ij: 1 });
        assert_eq!(adj.dist, brute(&[1, 1].into(), &[2, 1].into()));
        for (i, j) in [([2, 3], [3, 2]), ([1, 3], [3, 3]), ([2, 2], [2, 4])] {
            let (i, j) = (MultiIndex::from(i), MultiIndex::from(j));
            let a = block_distance(&i, &j, &p).unwrap();
            assert_eq!(a, block_distance(&j, &i, &p).unwrap());
            assert_eq!(a.dist, brute(&i, &j));
        }
        assert!(matches!(
            block_distance(&[2, 2].into(), &[2, 2].into(), &p),
            Err(GeometryError::SameBlock(_))
        ));
    }
}
