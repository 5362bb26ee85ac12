//! Lattice multi-indices, half-open rectangles and d-dimensional prefix sums.
//!
//! All rectangles are half-open boxes `(lo, hi]`. Cells of a grid with extent
//! `E` are addressed by 1-based coordinates `1 <= j_s <= E_s` and stored
//! row-major with the last axis varying fastest.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),
    #[error("rectangle lower corner {lo} is not below upper corner {hi}")]
    InvertedRect { lo: MultiIndex, hi: MultiIndex },
    #[error("grid extent must be positive in every coordinate, got {0}")]
    EmptyExtent(MultiIndex),
    #[error("grid holds {got} values but extent {extent} needs {expected}")]
    LengthMismatch {
        extent: MultiIndex,
        expected: usize,
        got: usize,
    },
    #[error("non-finite cell value {value} at flat offset {offset}")]
    NonFinite { offset: usize, value: f64 },
    #[error("rectangle {rect} exceeds grid extent {extent}")]
    OutOfBounds { rect: Rect, extent: MultiIndex },
}

/// A point of the lattice `Z_+^d` (coordinate 0 is allowed as a corner).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u64>);

impl MultiIndex {
    pub fn new(coords: Vec<u64>) -> Self {
        MultiIndex(coords)
    }

    pub fn splat(d: usize, value: u64) -> Self {
        MultiIndex(vec![value; d])
    }

    pub fn zeros(d: usize) -> Self {
        Self::splat(d, 0)
    }

    pub fn ones(d: usize) -> Self {
        Self::splat(d, 1)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[u64] {
        &self.0
    }

    pub fn get(&self, axis: usize) -> u64 {
        self.0[axis]
    }

    /// Copy with one coordinate replaced.
    pub fn with(&self, axis: usize, value: u64) -> Self {
        let mut c = self.0.clone();
        c[axis] = value;
        MultiIndex(c)
    }

    /// `[N] = prod_s N_s`, failing on overflow.
    pub fn product(&self) -> Result<u64, LatticeError> {
        self.0.iter().try_fold(1u64, |acc, &c| {
            acc.checked_mul(c)
                .ok_or(LatticeError::Overflow("index product"))
        })
    }

    /// `[N]` as a float; exact while below 2^53.
    pub fn product_f64(&self) -> f64 {
        self.0.iter().map(|&c| c as f64).product()
    }

    /// Sup-norm `max_s |i_s|`.
    pub fn sup_norm(&self) -> u64 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn min_coord(&self) -> u64 {
        self.0.iter().copied().min().unwrap_or(0)
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Componentwise strict `self < other`.
    pub fn lt(&self, other: &MultiIndex) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a < b)
    }

    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        if self.dim() != other.dim() {
            return None;
        }
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex)
    }

    pub(crate) fn expect_dim(&self, d: usize) -> Result<(), LatticeError> {
        if self.dim() == d {
            Ok(())
        } else {
            Err(LatticeError::DimensionMismatch {
                expected: d,
                got: self.dim(),
            })
        }
    }
}

impl From<Vec<u64>> for MultiIndex {
    fn from(v: Vec<u64>) -> Self {
        MultiIndex(v)
    }
}

impl<const D: usize> From<[u64; D]> for MultiIndex {
    fn from(v: [u64; D]) -> Self {
        MultiIndex(v.to_vec())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Half-open lattice box `(lo, hi]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub lo: MultiIndex,
    pub hi: MultiIndex,
}

impl Rect {
    pub fn new(lo: MultiIndex, hi: MultiIndex) -> Result<Self, LatticeError> {
        lo.expect_dim(hi.dim())?;
        if lo.dim() == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        if !lo.le(&hi) {
            return Err(LatticeError::InvertedRect { lo, hi });
        }
        Ok(Rect { lo, hi })
    }

    /// The anchored box `(0, hi]`.
    pub fn anchored(hi: MultiIndex) -> Self {
        Rect {
            lo: MultiIndex::zeros(hi.dim()),
            hi,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn side(&self, axis: usize) -> u64 {
        self.hi.get(axis) - self.lo.get(axis)
    }

    pub fn sides(&self) -> MultiIndex {
        MultiIndex((0..self.dim()).map(|s| self.side(s)).collect())
    }

    /// `|V| = [hi - lo]`.
    pub fn volume(&self) -> Result<u64, LatticeError> {
        self.sides().product()
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dim()).any(|s| self.side(s) == 0)
    }

    pub fn contains(&self, point: &MultiIndex) -> bool {
        point.dim() == self.dim()
            && (0..self.dim())
                .all(|s| self.lo.get(s) < point.get(s) && point.get(s) <= self.hi.get(s))
    }

    /// Nonempty intersection of point sets.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.dim() == other.dim()
            && !self.is_empty()
            && !other.is_empty()
            && (0..self.dim())
                .all(|s| self.lo.get(s).max(other.lo.get(s)) < self.hi.get(s).min(other.hi.get(s)))
    }

    pub fn is_within(&self, extent: &MultiIndex) -> bool {
        self.hi.le(extent)
    }

    /// Every lattice point of the box in row-major order.
    pub fn points(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        let d = self.dim();
        let total: u64 = if self.is_empty() {
            0
        } else {
            self.sides().product().unwrap_or(u64::MAX)
        };
        let mut cur: Vec<u64> = (0..d).map(|s| self.lo.get(s) + 1).collect();
        let mut emitted = 0u64;
        std::iter::from_fn(move || {
            if emitted >= total {
                return None;
            }
            let out = MultiIndex(cur.clone());
            emitted += 1;
            for s in (0..d).rev() {
                if cur[s] < self.hi.get(s) {
                    cur[s] += 1;
                    break;
                }
                cur[s] = self.lo.get(s) + 1;
            }
            Some(out)
        })
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}]", self.lo, self.hi)
    }
}

/// Row-major grid of cell values over `(0, extent]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGrid {
    extent: MultiIndex,
    strides: Vec<usize>,
    values: Vec<f64>,
}

impl CellGrid {
    pub fn new(extent: MultiIndex, values: Vec<f64>) -> Result<Self, LatticeError> {
        if extent.dim() == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        if extent.coords().contains(&0) {
            return Err(LatticeError::EmptyExtent(extent));
        }
        let n = extent.product()?;
        let expected = usize::try_from(n).map_err(|_| LatticeError::Overflow("grid size"))?;
        if values.len() != expected {
            return Err(LatticeError::LengthMismatch {
                extent,
                expected,
                got: values.len(),
            });
        }
        let strides = row_major_strides(extent.coords().iter().map(|&e| e as usize))?;
        Ok(CellGrid {
            extent,
            strides,
            values,
        })
    }

    pub fn filled(extent: MultiIndex, value: f64) -> Result<Self, LatticeError> {
        let n =
            usize::try_from(extent.product()?).map_err(|_| LatticeError::Overflow("grid size"))?;
        Self::new(extent, vec![value; n])
    }

    pub fn extent(&self) -> &MultiIndex {
        &self.extent
    }

    pub fn dim(&self) -> usize {
        self.extent.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Flat offset of the 1-based cell `j`.
    pub fn offset(&self, j: &[u64]) -> usize {
        j.iter()
            .zip(&self.strides)
            .map(|(&c, &st)| (c as usize - 1) * st)
            .sum()
    }

    pub fn get(&self, j: &MultiIndex) -> f64 {
        self.values[self.offset(j.coords())]
    }

    pub fn set(&mut self, j: &MultiIndex, value: f64) {
        let o = self.offset(j.coords());
        self.values[o] = value;
    }

    /// Flat offsets of the cells inside `rect`, row-major.
    pub fn offsets_in(&self, rect: &Rect) -> Vec<usize> {
        let mut out = Vec::new();
        if rect.is_empty() {
            return out;
        }
        let d = self.dim();
        let lo: Vec<usize> = (0..d).map(|s| rect.lo.get(s) as usize).collect();
        let hi: Vec<usize> = (0..d).map(|s| rect.hi.get(s) as usize).collect();
        let mut cur = lo.clone();
        loop {
            let base: usize = (0..d).map(|s| cur[s] * self.strides[s]).sum();
            out.push(base);
            let mut s = d;
            loop {
                if s == 0 {
                    return out;
                }
                s -= 1;
                cur[s] += 1;
                if cur[s] < hi[s] {
                    break;
                }
                cur[s] = lo[s];
            }
        }
    }

    /// Direct summation over `rect` (used as an oracle and for small boxes).
    pub fn direct_sum(&self, rect: &Rect) -> f64 {
        self.offsets_in(rect)
            .into_iter()
            .map(|o| self.values[o])
            .sum()
    }
}

fn row_major_strides(dims: impl Iterator<Item = usize>) -> Result<Vec<usize>, LatticeError> {
    let dims: Vec<usize> = dims.collect();
    let mut strides = vec![0usize; dims.len()];
    let mut acc = 1usize;
    for s in (0..dims.len()).rev() {
        strides[s] = acc;
        acc = acc
            .checked_mul(dims[s])
            .ok_or(LatticeError::Overflow("grid strides"))?;
    }
    Ok(strides)
}

/// Summed-area table: `cumulative[N] = S_N = sum_{j <= N} X_j` for all `0 <= N <= extent`.
#[derive(Clone, Debug)]
pub struct PrefixGrid {
    extent: MultiIndex,
    strides: Vec<usize>,
    cumulative: Vec<f64>,
}

impl PrefixGrid {
    pub fn extent(&self) -> &MultiIndex {
        &self.extent
    }

    pub fn dim(&self) -> usize {
        self.extent.dim()
    }

    fn offset(&self, n: &[u64]) -> usize {
        n.iter()
            .zip(&self.strides)
            .map(|(&c, &st)| c as usize * st)
            .sum()
    }

    /// `S_N`; `N` may have zero coordinates (then the value is 0).
    pub fn cumulative(&self, n: &MultiIndex) -> Result<f64, LatticeError> {
        n.expect_dim(self.dim())?;
        if !n.le(&self.extent) {
            return Err(LatticeError::OutOfBounds {
                rect: Rect::anchored(n.clone()),
                extent: self.extent.clone(),
            });
        }
        Ok(self.cumulative[self.offset(n.coords())])
    }

    /// Unchecked `S_N` for hot loops; `n` must lie inside `[0, extent]`.
    pub fn cumulative_at(&self, n: &[u64]) -> f64 {
        self.cumulative[self.offset(n)]
    }

    /// `S(V)` by inclusion-exclusion over the `2^d` corners of `V`.
    pub fn rect_sum(&self, v: &Rect) -> Result<f64, LatticeError> {
        v.lo.expect_dim(self.dim())?;
        if !v.is_within(&self.extent) {
            return Err(LatticeError::OutOfBounds {
                rect: v.clone(),
                extent: self.extent.clone(),
            });
        }
        Ok(self.rect_sum_unchecked(v.lo.coords(), v.hi.coords()))
    }

    pub(crate) fn rect_sum_unchecked(&self, lo: &[u64], hi: &[u64]) -> f64 {
        let d = lo.len();
        if (0..d).any(|s| lo[s] >= hi[s]) {
            return 0.0;
        }
        let mut total = 0.0;
        for mask in 0u32..(1u32 << d) {
            let mut off = 0usize;
            for s in 0..d {
                let c = if mask & (1 << s) != 0 { lo[s] } else { hi[s] };
                off += c as usize * self.strides[s];
            }
            if mask.count_ones() % 2 == 0 {
                total += self.cumulative[off];
            } else {
                total -= self.cumulative[off];
            }
        }
        total
    }

    /// Largest `|S_n|` over all `n` in the box `[0, corner]` (`max_{n <= corner} |S_n|`).
    pub fn max_abs_anchored(&self, corner: &MultiIndex) -> f64 {
        let lo = MultiIndex::zeros(corner.dim());
        if corner.coords().contains(&0) {
            return 0.0;
        }
        Rect {
            lo,
            hi: corner.clone(),
        }
        .points()
        .map(|n| self.cumulative_at(n.coords()).abs())
        .fold(0.0, f64::max)
    }
}

/// Builds the prefix grid with `d` axis-wise running-sum scans.
pub fn build_prefix_grid(cells: &CellGrid) -> Result<PrefixGrid, LatticeError> {
    if let Some((offset, &value)) = cells
        .values
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite())
    {
        return Err(LatticeError::NonFinite { offset, value });
    }
    let d = cells.dim();
    let padded: Vec<usize> = cells
        .extent
        .coords()
        .iter()
        .map(|&e| e as usize + 1)
        .collect();
    let strides = row_major_strides(padded.iter().copied())?;
    let len = padded
        .iter()
        .try_fold(1usize, |a, &p| a.checked_mul(p))
        .ok_or(LatticeError::Overflow("prefix grid size"))?;
    let mut cumulative = vec![0.0; len];

    // Copy cells into the zero-padded array.
    let mut cur = vec![1usize; d];
    for &v in &cells.values {
        let off: usize = (0..d).map(|s| cur[s] * strides[s]).sum();
        cumulative[off] = v;
        for s in (0..d).rev() {
            cur[s] += 1;
            if cur[s] < padded[s] {
                break;
            }
            cur[s] = 1;
        }
    }

    for s in 0..d {
        let stride = strides[s];
        let dim = padded[s];
        for idx in 0..len {
            if (idx / stride) % dim > 0 {
                cumulative[idx] += cumulative[idx - stride];
            }
        }
    }

    Ok(PrefixGrid {
        extent: cells.extent.clone(),
        strides,
        cumulative,
    })
}

/// `prod_{s' != skip} x_{s'}^exponent`, as one power of the product so that
/// exact integer ties such as `2 >= (2 * 2)^{1/2}` stay ties.
pub(crate) fn power_product(coords: &[f64], skip: usize, exponent: f64) -> f64 {
    let product: f64 = coords
        .iter()
        .enumerate()
        .filter(|(s, _)| *s != skip)
        .map(|(_, &x)| x)
        .product();
    product.powf(exponent)
}

/// Membership in the wedge `G_tau = { j : j_s >= prod_{s' != s} j_{s'}^tau  for all s }`.
pub fn g_tau_contains(j: &MultiIndex, tau: f64) -> bool {
    let x: Vec<f64> = j.coords().iter().map(|&c| c as f64).collect();
    (0..x.len()).all(|s| x[s] >= power_product(&x, s, tau))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(extent: &[u64], values: Vec<f64>) -> CellGrid {
        CellGrid::new(MultiIndex::new(extent.to_vec()), values).unwrap()
    }

    #[test]
    fn two_by_two_ones_total() {
        let g = build_prefix_grid(&grid(&[2, 2], vec![1.0; 4])).unwrap();
        assert_eq!(g.cumulative(&[2, 2].into()).unwrap(), 4.0);
    }

    #[test]
    fn unit_corner_is_first_cell() {
        let g = build_prefix_grid(&grid(
            &[3, 2, 2],
            (1..=12).map(|x| x as f64 * 0.5).collect(),
        ))
        .unwrap();
        assert_eq!(g.cumulative(&[1, 1, 1].into()).unwrap(), 0.5);
    }

    #[test]
    fn full_box_and_empty_rect() {
        let g = build_prefix_grid(&grid(&[2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(g.rect_sum(&Rect::anchored([2, 2].into())).unwrap(), 10.0);
        let empty = Rect::new([1, 0].into(), [1, 2].into()).unwrap();
        assert_eq!(g.rect_sum(&empty).unwrap(), 0.0);
        // second row only: cells (2,1), (2,2)
        let row = Rect::new([1, 0].into(), [2, 2].into()).unwrap();
        assert_eq!(g.rect_sum(&row).unwrap(), 7.0);
    }

    #[test]
    fn rect_beyond_extent_is_rejected() {
        let g = build_prefix_grid(&grid(&[2, 2], vec![1.0; 4])).unwrap();
        let r = Rect::anchored([3, 1].into());
        assert!(matches!(
            g.rect_sum(&r),
            Err(LatticeError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn non_finite_cells_are_rejected() {
        let err = build_prefix_grid(&grid(&[2], vec![1.0, f64::NAN])).unwrap_err();
        assert!(matches!(err, LatticeError::NonFinite { offset: 1, .. }));
    }

    #[test]
    fn zero_extent_is_rejected() {
        assert!(matches!(
            CellGrid::new([2, 0].into(), vec![]),
            Err(LatticeError::EmptyExtent(_))
        ));
    }

    #[test]
    fn product_overflow_is_loud() {
        let big = MultiIndex::new(vec![u64::MAX / 2, 3]);
        assert_eq!(big.product(), Err(LatticeError::Overflow("index product")));
    }

    #[test]
    fn inverted_rect_is_rejected() {
        assert!(Rect::new([2, 1].into(), [1, 3].into()).is_err());
    }

    #[test]
    fn wedge_examples() {
        assert!(g_tau_contains(&[4, 2].into(), 0.5));
        assert!(!g_tau_contains(&[9, 2].into(), 0.5));
        for d in 1..5 {
            assert!(g_tau_contains(&MultiIndex::ones(d), 0.3));
        }
    }

    #[test]
    fn points_enumerates_row_major() {
        let r = Rect::new([0, 1].into(), [2, 3].into()).unwrap();
        let pts: Vec<_> = r.points().map(|p| p.coords().to_vec()).collect();
        assert_eq!(pts, vec![vec![1, 2], vec![1, 3], vec![2, 2], vec![2, 3]]);
    }

    #[test]
    fn intersects_handles_touching_boxes() {
        let a = Rect::new([0, 0].into(), [2, 2].into()).unwrap();
        let b = Rect::new([2, 0].into(), [4, 2].into()).unwrap();
        let c = Rect::new([1, 1].into(), [3, 3].into()).unwrap();
        assert!(!a.intersects(&b));
        assert!(a.intersects(&c));
    }
}
