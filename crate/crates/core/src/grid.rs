//! Dyadic sparse-grid machinery on the reference box `[-1, 1]^d`.
//!
//! Points are stored as exact dyadic rationals so that set membership and
//! cache keys never depend on floating-point rounding. Physical coordinates
//! are derived through [`ParamBox`].

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("{q} is not a neighbour of {p}")]
    NotNeighbour { p: ParamPoint, q: ParamPoint },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("coordinate {0} is outside the parameter box")]
    OutsideBox(f64),
    #[error("coordinate {0} is not a dyadic grid coordinate")]
    NotDyadic(f64),
}

/// Exact value `num / 2^log2_den` in `[-1, 1]`, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DyadicCoord {
    num: i64,
    log2_den: u32,
}

impl DyadicCoord {
    pub const ZERO: DyadicCoord = DyadicCoord { num: 0, log2_den: 0 };
    pub const ONE: DyadicCoord = DyadicCoord { num: 1, log2_den: 0 };
    pub const MINUS_ONE: DyadicCoord = DyadicCoord { num: -1, log2_den: 0 };

    /// Canonicalizes `num / 2^log2_den`; `None` if the value leaves `[-1, 1]`.
    pub fn new(num: i64, log2_den: u32) -> Option<Self> {
        let (num, log2_den) = canonical(num as i128, log2_den);
        if log2_den > 62 || num.unsigned_abs() > (1u128 << log2_den) {
            return None;
        }
        Some(DyadicCoord { num: num as i64, log2_den })
    }

    pub fn numerator(&self) -> i64 {
        self.num
    }

    pub fn log2_denominator(&self) -> u32 {
        self.log2_den
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / (1u64 << self.log2_den) as f64
    }

    /// Minimal `m` with `self ∈ Γ(m)`.
    pub fn level(&self) -> u32 {
        if self.num == 0 {
            0
        } else if self.log2_den == 0 {
            1
        } else {
            self.log2_den + 1
        }
    }

    /// `self + sign * 2^(-k)` (with `k = -1` meaning a step of 2), if it stays in `[-1, 1]`.
    fn step(&self, k: i32, positive: bool) -> Option<Self> {
        let (a, ka) = (self.num as i128, self.log2_den as i32);
        // common exponent e = max(ka, k), step numerator = 2^(e - k)
        let e = ka.max(k).max(0);
        let lhs = a << (e - ka);
        let s = 1i128 << (e - k);
        let num = if positive { lhs + s } else { lhs - s };
        let (n, d) = canonical(num, e as u32);
        if n.unsigned_abs() > (1u128 << d) {
            return None;
        }
        Some(DyadicCoord { num: n as i64, log2_den: d })
    }

    fn midpoint(a: &Self, b: &Self) -> Self {
        let e = a.log2_den.max(b.log2_den);
        let sum = ((a.num as i128) << (e - a.log2_den)) + ((b.num as i128) << (e - b.log2_den));
        let (n, d) = canonical(sum, e + 1);
        DyadicCoord { num: n as i64, log2_den: d }
    }

    /// Exact conversion from a float that is a dyadic rational with
    /// denominator at most `2^max_log2`.
    pub fn from_f64(x: f64, max_log2: u32) -> Option<Self> {
        if !(-1.0..=1.0).contains(&x) {
            return None;
        }
        for k in 0..=max_log2.min(52) {
            let scaled = x * (1u64 << k) as f64;
            if scaled == scaled.round() {
                return DyadicCoord::new(scaled as i64, k);
            }
        }
        None
    }
}

fn canonical(mut num: i128, mut k: u32) -> (i128, u32) {
    if num == 0 {
        return (0, 0);
    }
    while k > 0 && num % 2 == 0 {
        num /= 2;
        k -= 1;
    }
    (num, k)
}

impl Ord for DyadicCoord {
    fn cmp(&self, other: &Self) -> Ordering {
        let e = self.log2_den.max(other.log2_den);
        let a = (self.num as i128) << (e - self.log2_den);
        let b = (other.num as i128) << (e - other.log2_den);
        a.cmp(&b)
    }
}

impl PartialOrd for DyadicCoord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for DyadicCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.log2_den == 0 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, 1u64 << self.log2_den)
        }
    }
}

/// The nested 1D set `Γ(m)` in ascending order.
pub fn gamma_set(m: u32) -> Vec<DyadicCoord> {
    if m == 0 {
        return vec![DyadicCoord::ZERO];
    }
    let half = 1i64 << (m - 1);
    (-half..=half).map(|j| DyadicCoord::new(j, m - 1).expect("Γ(m) lies in [-1, 1]")).collect()
}

/// A parameter sample in reference coordinates. Ordering is lexicographic
/// by coordinate value, which coincides with lexicographic physical order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamPoint {
    coords: Vec<DyadicCoord>,
}

impl ParamPoint {
    pub fn new(coords: Vec<DyadicCoord>) -> Self {
        ParamPoint { coords }
    }

    pub fn coords(&self) -> &[DyadicCoord] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn levels(&self) -> Vec<u32> {
        self.coords.iter().map(DyadicCoord::level).collect()
    }

    pub fn reference(&self) -> Vec<f64> {
        self.coords.iter().map(DyadicCoord::value).collect()
    }

    fn with_axis(&self, axis: usize, c: DyadicCoord) -> Self {
        let mut coords = self.coords.clone();
        coords[axis] = c;
        ParamPoint { coords }
    }

    /// Filename-safe key built from the exact numerators and denominators.
    pub fn key(&self) -> String {
        let mut s = String::from("pt");
        for c in &self.coords {
            let sign = if c.num < 0 { 'm' } else { 'p' };
            s.push_str(&format!("_{sign}{}d{}", c.num.unsigned_abs(), c.log2_den));
        }
        s
    }
}

impl fmt::Display for ParamPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Forward points: per axis, `p ± 2^(-m_k) e_k` inside `[-1, 1]^d`.
pub fn forward_points(p: &ParamPoint) -> Vec<ParamPoint> {
    let mut out = Vec::with_capacity(2 * p.dim());
    for (axis, c) in p.coords.iter().enumerate() {
        let k = c.level() as i32;
        for positive in [false, true] {
            if let Some(s) = c.step(k, positive) {
                out.push(p.with_axis(axis, s));
            }
        }
    }
    out
}

/// Neighbours: per axis, `p ± 2^(-(m_k - 1)) e_k` inside `[-1, 1]^d`.
pub fn neighbours(p: &ParamPoint) -> Vec<ParamPoint> {
    let mut out = Vec::with_capacity(2 * p.dim());
    for (axis, c) in p.coords.iter().enumerate() {
        let k = c.level() as i32 - 1;
        for positive in [false, true] {
            if let Some(s) = c.step(k, positive) {
                out.push(p.with_axis(axis, s));
            }
        }
    }
    out
}

/// The forward point of `p` in the direction of its neighbour `q`, which is
/// the exact midpoint of the segment `[p, q]`.
pub fn midpoint_toward(p: &ParamPoint, q: &ParamPoint) -> Result<ParamPoint, GridError> {
    if p.dim() != q.dim() {
        return Err(GridError::Dimension { expected: p.dim(), got: q.dim() });
    }
    if !neighbours(p).contains(q) {
        return Err(GridError::NotNeighbour { p: p.clone(), q: q.clone() });
    }
    let coords = p.coords.iter().zip(&q.coords).map(|(a, b)| DyadicCoord::midpoint(a, b)).collect();
    Ok(ParamPoint { coords })
}

/// Whether `p` and `q` are neighbours in either direction.
pub fn are_neighbours(p: &ParamPoint, q: &ParamPoint) -> bool {
    neighbours(p).contains(q) || neighbours(q).contains(p)
}

/// Full tensor lattice `Γ(m)^d`, lexicographically sorted.
pub fn tensor_grid(m: u32, dim: usize) -> Vec<ParamPoint> {
    let axis = gamma_set(m);
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<DyadicCoord>| {
                axis.iter().map(move |c| {
                    let mut v = prefix.clone();
                    v.push(*c);
                    v
                })
            })
            .collect();
    }
    out.into_iter().map(ParamPoint::new).collect()
}

/// Uniform lattice with `2^k + 1` points per axis.
pub fn uniform_lattice(points_per_axis: usize, dim: usize) -> Option<Vec<ParamPoint>> {
    if points_per_axis < 2 || !(points_per_axis - 1).is_power_of_two() {
        return None;
    }
    let k = (points_per_axis - 1).trailing_zeros();
    Some(tensor_grid(k, dim))
}

/// Axis-aligned parameter box with the affine map to `[-1, 1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "box bounds must have equal length");
        ParamBox { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn axis_to_physical(&self, axis: usize, r: f64) -> f64 {
        let (a, b) = (self.lower[axis], self.upper[axis]);
        if r == -1.0 {
            return a;
        }
        if r == 1.0 {
            return b;
        }
        a + (b - a) * (r + 1.0) / 2.0
    }

    pub fn axis_to_reference(&self, axis: usize, x: f64) -> f64 {
        let (a, b) = (self.lower[axis], self.upper[axis]);
        2.0 * (x - a) / (b - a) - 1.0
    }

    pub fn to_physical(&self, p: &ParamPoint) -> Vec<f64> {
        p.coords.iter().enumerate().map(|(k, c)| self.axis_to_physical(k, c.value())).collect()
    }

    pub fn to_reference(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(k, &v)| self.axis_to_reference(k, v)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(k, &v)| v >= self.lower[k] && v <= self.upper[k])
    }

    /// Snaps physical coordinates to the dyadic grid point they denote.
    /// Accepts rounding error up to `1e-9` in reference units, which limits
    /// recognizable denominators to `2^20`.
    pub fn point_from_physical(&self, x: &[f64]) -> Result<ParamPoint, GridError> {
        if x.len() != self.dim() {
            return Err(GridError::Dimension { expected: self.dim(), got: x.len() });
        }
        let mut coords = Vec::with_capacity(x.len());
        for (k, &v) in x.iter().enumerate() {
            let r = self.axis_to_reference(k, v);
            if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&r) {
                return Err(GridError::OutsideBox(v));
            }
            let mut found = None;
            for e in 0..=20u32 {
                let scaled = r * (1u64 << e) as f64;
                if (scaled - scaled.round()).abs() <= 1e-9 * (1u64 << e) as f64 {
                    found = DyadicCoord::new(scaled.round() as i64, e);
                    break;
                }
            }
            coords.push(found.ok_or(GridError::NotDyadic(v))?);
        }
        Ok(ParamPoint::new(coords))
    }
}

/// Grid bookkeeping for one refinement level: `points` is `P^(ℓ)`, and
/// `new_points` is `P^(ℓ)_δ ⊆ P^(ℓ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelState {
    pub level: u32,
    pub points: BTreeSet<ParamPoint>,
    pub new_points: BTreeSet<ParamPoint>,
}

impl LevelState {
    pub fn initial(points: impl IntoIterator<Item = ParamPoint>) -> Self {
        let points: BTreeSet<_> = points.into_iter().collect();
        LevelState { level: 0, new_points: points.clone(), points }
    }

    /// `P^(ℓ+1) = P^(ℓ) ∪ P^(ℓ+1)_δ`; points already present are dropped from the delta.
    pub fn next(&self, added: impl IntoIterator<Item = ParamPoint>) -> Self {
        let new_points: BTreeSet<_> = added.into_iter().filter(|p| !self.points.contains(p)).collect();
        let mut points = self.points.clone();
        points.extend(new_points.iter().cloned());
        LevelState { level: self.level + 1, points, new_points }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(num: i64, k: u32) -> DyadicCoord {
        DyadicCoord::new(num, k).unwrap()
    }

    fn pt(c: &[(i64, u32)]) -> ParamPoint {
        ParamPoint::new(c.iter().map(|&(n, k)| d(n, k)).collect())
    }

    fn set(v: Vec<ParamPoint>) -> BTreeSet<ParamPoint> {
        v.into_iter().collect()
    }

    #[test]
    fn canonical_representation() {
        assert_eq!(d(2, 2), d(1, 1));
        assert_eq!(d(4, 2), DyadicCoord::ONE);
        assert_eq!(d(0, 5), DyadicCoord::ZERO);
        assert!(DyadicCoord::new(3, 1).is_none());
        assert_eq!(d(-3, 3).value(), -0.375);
    }

    #[test]
    fn levels() {
        assert_eq!(DyadicCoord::ZERO.level(), 0);
        assert_eq!(DyadicCoord::ONE.level(), 1);
        assert_eq!(DyadicCoord::MINUS_ONE.level(), 1);
        assert_eq!(d(1, 1).level(), 2);
        assert_eq!(d(-3, 2).level(), 3);
        assert_eq!(d(3, 3).level(), 4);
    }

    #[test]
    fn gamma_small_sets() {
        assert_eq!(gamma_set(0), vec![DyadicCoord::ZERO]);
        assert_eq!(gamma_set(1), vec![DyadicCoord::MINUS_ONE, DyadicCoord::ZERO, DyadicCoord::ONE]);
        assert_eq!(gamma_set(2), vec![d(-1, 0), d(-1, 1), d(0, 0), d(1, 1), d(1, 0)]);
        for m in 1..10 {
            assert_eq!(gamma_set(m).len(), (1usize << m) + 1);
        }
    }

    #[test]
    fn one_dimensional_steps() {
        assert!(neighbours(&pt(&[(0, 0)])).is_empty());
        assert_eq!(forward_points(&pt(&[(0, 0)])), vec![pt(&[(-1, 0)]), pt(&[(1, 0)])]);
        assert_eq!(neighbours(&pt(&[(-1, 0)])), vec![pt(&[(0, 0)])]);
        assert_eq!(midpoint_toward(&pt(&[(-1, 0)]), &pt(&[(0, 0)])).unwrap(), pt(&[(-1, 1)]));
        assert_eq!(midpoint_toward(&pt(&[(1, 2)]), &pt(&[(1, 1)])).unwrap(), pt(&[(3, 3)]));
        assert!(midpoint_toward(&pt(&[(1, 2)]), &pt(&[(1, 0)])).is_err());
    }

    #[test]
    fn box_maps() {
        let b = ParamBox::new(vec![0.4], vec![1.0]);
        assert_eq!(b.to_physical(&pt(&[(3, 3)])), vec![0.8125]);
        assert_eq!(b.point_from_physical(&[0.8125]).unwrap(), pt(&[(3, 3)]));
        assert_eq!(b.point_from_physical(&[0.55]).unwrap(), pt(&[(-1, 1)]));
        assert!(b.point_from_physical(&[1.5]).is_err());
        assert!(b.point_from_physical(&[0.4 + 0.6 / 3.0]).is_err());
    }

    #[test]
    fn level_state_union() {
        let s0 = LevelState::initial(tensor_grid(1, 1));
        assert_eq!(s0.points.len(), 3);
        assert_eq!(s0.new_points, s0.points);
        let s1 = s0.next([pt(&[(-1, 1)]), pt(&[(0, 0)])]);
        assert_eq!(s1.level, 1);
        assert_eq!(s1.new_points.len(), 1);
        assert_eq!(s1.points.len(), 4);
        assert!(s1.points.is_superset(&s0.points));
        assert!(s1.new_points.is_disjoint(&s0.points));
    }

    #[test]
    fn uniform_lattice_sizes() {
        assert_eq!(uniform_lattice(129, 1).unwrap().len(), 129);
        assert_eq!(uniform_lattice(17, 2).unwrap().len(), 289);
        assert!(uniform_lattice(10, 1).is_none());
        assert_eq!(set(uniform_lattice(5, 1).unwrap()), set(tensor_grid(2, 1)));
    }
}
