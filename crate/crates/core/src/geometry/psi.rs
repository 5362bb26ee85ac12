//! The counting bijection `psi` onto the good blocks.
//!
//! Indices are visited region by region: `L(1), L(2), ...`, where `L(m)` holds
//! the center `(m, ..., m)` followed by the arms `L_1(m), ..., L_d(m)`, each in
//! lexicographic order. Arm `s` collects the indices whose first minimal
//! coordinate sits on axis `s` and equals `m`, with every other coordinate at
//! most `k*(m)`. Candidates that are not good blocks are dropped.

use super::{check_block_index, vertex_test, Boundary, GeometryError, Parameters};
use crate::lattice::MultiIndex;

fn is_good_with(k: &[u64], rho: f64, boundary: &mut Boundary) -> Result<bool, GeometryError> {
    let mut lower = Vec::with_capacity(k.len());
    let mut upper = Vec::with_capacity(k.len());
    for &c in k {
        lower.push(boundary.get(c - 1)?);
        upper.push(boundary.get(c)?);
    }
    Ok(vertex_test(&lower, &upper, rho))
}

fn k_star_with(
    d: usize,
    m: u64,
    rho: f64,
    cap: Option<u64>,
    boundary: &mut Boundary,
) -> Result<u64, GeometryError> {
    let mut probe = vec![m; d];
    let mut best = m;
    let mut l = m;
    loop {
        if cap.is_some_and(|c| l > c) {
            return Ok(best);
        }
        probe[0] = l;
        if is_good_with(&probe, rho, boundary)? {
            best = l;
        } else if l > m {
            return Ok(best);
        }
        l += 1;
    }
}

/// `k*(m)`: the largest `l >= m` such that `(l, m, ..., m)` is a good block,
/// or `m` when none is. Requires `d >= 2` (in one dimension every block is
/// good and the arms are empty).
pub fn k_star(params: &Parameters, m: u64) -> Result<u64, GeometryError> {
    params.check()?;
    if params.d < 2 {
        return Err(GeometryError::InvalidParameters("k* needs d >= 2".into()));
    }
    if m == 0 {
        return Err(GeometryError::BadBlockIndex(MultiIndex::splat(params.d, 0)));
    }
    k_star_with(
        params.d,
        m,
        params.rho(),
        None,
        &mut Boundary::new(params.alpha, params.beta),
    )
}

/// Axis of an arm, its per-axis inclusive ranges and the cursor within them.
type Arm = (usize, Vec<(u64, u64)>, Vec<u64>);

/// Lazy `psi` enumeration. Each item is a good block index; an overflow of the
/// boundary sequence ends the stream with a single error item.
pub struct PsiEnumerator {
    d: usize,
    rho: f64,
    boundary: Boundary,
    /// Per-axis cap on block indices, when clipped to a window.
    cap: Option<MultiIndex>,
    m_max: Option<u64>,
    m: u64,
    arm: Option<Arm>,
    k_star: u64,
    pending_center: bool,
    done: bool,
}

impl PsiEnumerator {
    /// Unbounded enumeration (`m = 1, 2, ...`).
    pub fn new(params: &Parameters) -> Result<Self, GeometryError> {
        params.check()?;
        Ok(PsiEnumerator {
            d: params.d,
            rho: params.rho(),
            boundary: Boundary::new(params.alpha, params.beta),
            cap: None,
            m_max: None,
            m: 0,
            arm: None,
            k_star: 0,
            pending_center: false,
            done: false,
        })
    }

    /// Regions `L(1), ..., L(m_max)`.
    pub fn up_to(params: &Parameters, m_max: u64) -> Result<Self, GeometryError> {
        let mut e = Self::new(params)?;
        e.m_max = Some(m_max);
        Ok(e)
    }

    /// Enumeration restricted to the window `1 <= k <= kmax`, preserving order.
    pub fn clipped(params: &Parameters, kmax: &MultiIndex) -> Result<Self, GeometryError> {
        check_block_index(kmax)?;
        kmax.expect_dim(params.d)?;
        let mut e = Self::new(params)?;
        e.m_max = Some(kmax.min_coord());
        e.cap = Some(kmax.clone());
        Ok(e)
    }

    fn start_region(&mut self) -> Result<bool, GeometryError> {
        self.m += 1;
        if self.m_max.is_some_and(|mm| self.m > mm) {
            return Ok(false);
        }
        self.k_star = if self.d >= 2 {
            let cap = self.cap.as_ref().map(|c| c.sup_norm());
            k_star_with(self.d, self.m, self.rho, cap, &mut self.boundary)?
        } else {
            self.m
        };
        self.pending_center = true;
        self.arm = None;
        Ok(true)
    }

    /// Ranges of arm `s`: axis `s` fixed at `m`, earlier axes in `(m, k*]`,
    /// later axes in `[m, k*]`; `None` if some range is empty.
    fn arm_ranges(&self, s: usize) -> Option<Vec<(u64, u64)>> {
        let m = self.m;
        let ranges: Vec<(u64, u64)> = (0..self.d)
            .map(|t| {
                let hi = match &self.cap {
                    Some(c) => self.k_star.min(c.get(t)),
                    None => self.k_star,
                };
                match t.cmp(&s) {
                    std::cmp::Ordering::Less => (m + 1, hi),
                    std::cmp::Ordering::Equal => (m, m),
                    std::cmp::Ordering::Greater => (m, hi),
                }
            })
            .collect();
        ranges.iter().all(|(lo, hi)| lo <= hi).then_some(ranges)
    }

    fn open_arm(&mut self, from: usize) {
        for s in from..self.d {
            if let Some(r) = self.arm_ranges(s) {
                let cursor = r.iter().map(|(lo, _)| *lo).collect();
                self.arm = Some((s, r, cursor));
                return;
            }
        }
        self.arm = None;
    }

    /// Next candidate of the current region, good or not.
    fn next_candidate(&mut self) -> Option<Vec<u64>> {
        if self.pending_center {
            self.pending_center = false;
            self.open_arm(0);
            return Some(vec![self.m; self.d]);
        }
        loop {
            let (s, ranges, cursor) = self.arm.as_mut()?;
            let out = cursor.clone();
            // advance lexicographically
            let mut t = ranges.len();
            let exhausted = loop {
                if t == 0 {
                    break true;
                }
                t -= 1;
                if cursor[t] < ranges[t].1 {
                    cursor[t] += 1;
                    for u in t + 1..ranges.len() {
                        cursor[u] = ranges[u].0;
                    }
                    break false;
                }
            };
            let s = *s;
            if exhausted {
                self.open_arm(s + 1);
            }
            if out.iter().all(|&c| c == self.m) {
                // the center was already emitted
                continue;
            }
            return Some(out);
        }
    }
}

impl Iterator for PsiEnumerator {
    type Item = Result<MultiIndex, GeometryError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            if !self.pending_center && self.arm.is_none() {
                match self.start_region() {
                    Ok(true) => {}
                    Ok(false) => {
                        self.done = true;
                        return None;
                    }
                    Err(e) => {
                        self.done = true;
                        return Some(Err(e));
                    }
                }
            }
            while let Some(k) = self.next_candidate() {
                match is_good_with(&k, self.rho, &mut self.boundary) {
                    Ok(true) => return Some(Ok(MultiIndex::new(k))),
                    Ok(false) => {}
                    Err(e) => {
                        self.done = true;
                        return Some(Err(e));
                    }
                }
            }
        }
    }
}

/// `psi` over the regions `L(1), ..., L(m_max)`.
pub fn enumerate_psi(params: &Parameters, m_max: u64) -> Result<Vec<MultiIndex>, GeometryError> {
    PsiEnumerator::up_to(params, m_max)?.collect()
}
