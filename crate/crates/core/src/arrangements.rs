//! Hyperplane arrangements (ReLU sign patterns) of a data matrix.
//!
//! A pattern records which rows `z_i` satisfy `z_iᵀu + b ≥ 0` for some
//! nonzero direction. Data of (augmented) rank at most two is enumerated
//! exactly with an angular sweep in its row space; anything larger falls
//! back to deduplicated random directions and is marked incomplete.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{check_finite, svd, DataMatrix};
use crate::rng::unit_direction;

/// Slack allowed when checking `(2H − I)Zu ≥ 0`.
pub const CONE_TOL: f64 = 1e-10;

const SAMPLING_SEED: u64 = 0x5eed_a77a;

#[derive(Debug, Clone, PartialEq)]
pub struct SignPattern {
    pub pattern: Vec<bool>,
    /// Direction `u` realizing the pattern.
    pub witness: DVector<f64>,
    /// Bias realizing the pattern (zero when enumerated without bias).
    pub bias: f64,
}

impl SignPattern {
    pub fn active_count(&self) -> usize {
        self.pattern.iter().filter(|&&p| p).count()
    }

    /// `(u, b)` stacked, matching rows of `augment_with_ones(Z)`.
    pub fn augmented_witness(&self) -> DVector<f64> {
        let d = self.witness.len();
        DVector::from_fn(d + 1, |i, _| if i < d { self.witness[i] } else { self.bias })
    }
}

#[derive(Debug, Clone)]
pub struct ArrangementSet {
    pub patterns: Vec<SignPattern>,
    /// True when the enumeration is provably exhaustive.
    pub complete: bool,
    pub with_bias: bool,
}

impl ArrangementSet {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn contains(&self, pattern: &[bool]) -> bool {
        self.patterns.iter().any(|p| p.pattern == pattern)
    }
}

/// `[Z 1]`.
pub fn augment_with_ones(z: &DataMatrix) -> DataMatrix {
    let (n, d) = z.shape();
    DMatrix::from_fn(n, d + 1, |i, j| if j < d { z[(i, j)] } else { 1.0 })
}

/// `1[Zu + b ≥ 0]`, with values within `1e-12` (relative) of zero counted active.
pub fn pattern_of(z: &DataMatrix, u: &DVector<f64>, bias: f64) -> Vec<bool> {
    let vals = z * u;
    let scale = u.norm().max(bias.abs()) * z.amax().max(1.0);
    vals.iter().map(|&v| v + bias >= -1e-12 * scale).collect()
}

pub fn enumerate_arrangements(z: &DataMatrix, with_bias: bool, budget: usize) -> Result<ArrangementSet> {
    enumerate_arrangements_seeded(z, with_bias, budget, SAMPLING_SEED)
}

pub fn enumerate_arrangements_seeded(z: &DataMatrix, with_bias: bool, budget: usize, seed: u64) -> Result<ArrangementSet> {
    check_finite(z, "arrangement data")?;
    if budget == 0 {
        return Err(Error::invalid("arrangement budget must be at least 1"));
    }
    let data = if with_bias { augment_with_ones(z) } else { z.clone() };
    let dec = svd(&data)?;
    let rank = dec.rank();
    let dim = data.ncols();

    let mut out = Collector::new(z.ncols(), with_bias);
    if rank <= 2 {
        let basis = dec.v.columns(0, rank).into_owned();
        let reduced = &data * &basis;
        for c in exact_directions(&reduced, rank) {
            let full = &basis * c;
            out.push(&data, full);
        }
        if rank < dim {
            // Nonzero null-space directions activate every row.
            let best = (0..dim)
                .map(|j| {
                    let mut e = DVector::zeros(dim);
                    e[j] = 1.0;
                    let coords = basis.transpose() * &e;
                    e - &basis * coords
                })
                .max_by(|a, b| a.norm().total_cmp(&b.norm()))
                .expect("dimension is positive");
            out.push(&data, best.normalize());
        }
        Ok(out.finish(true))
    } else {
        for k in 0..budget {
            let u = unit_direction(dim, seed, k as u64);
            out.push(&data, u);
        }
        Ok(out.finish(false))
    }
}

struct Collector {
    dim: usize,
    with_bias: bool,
    seen: HashSet<Vec<bool>>,
    patterns: Vec<SignPattern>,
}

impl Collector {
    fn new(dim: usize, with_bias: bool) -> Self {
        Collector {
            dim,
            with_bias,
            seen: HashSet::new(),
            patterns: Vec::new(),
        }
    }

    /// `data` is the (possibly augmented) matrix and `full` a direction in its column space.
    fn push(&mut self, data: &DataMatrix, full: DVector<f64>) {
        if full.norm() == 0.0 {
            return;
        }
        let pattern = pattern_of(data, &full, 0.0);
        if !self.seen.insert(pattern.clone()) {
            return;
        }
        let (witness, bias) = if self.with_bias {
            (full.rows(0, self.dim).into_owned(), full[self.dim])
        } else {
            (full, 0.0)
        };
        self.patterns.push(SignPattern { pattern, witness, bias });
    }

    fn finish(self, complete: bool) -> ArrangementSet {
        ArrangementSet {
            patterns: self.patterns,
            complete,
            with_bias: self.with_bias,
        }
    }
}

/// Candidate directions in the `rank`-dimensional row space whose patterns
/// cover every arrangement: open-arc midpoints first, then arc boundaries.
fn exact_directions(reduced: &DataMatrix, rank: usize) -> Vec<DVector<f64>> {
    match rank {
        0 => Vec::new(),
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => {
            use std::f64::consts::{FRAC_PI_2, PI, TAU};
            let mut angles: Vec<f64> = Vec::new();
            let scale = reduced.amax();
            for row in reduced.row_iter() {
                if row.norm() <= 1e-12 * scale {
                    continue;
                }
                let phi = row[1].atan2(row[0]);
                for t in [phi + FRAC_PI_2, phi - FRAC_PI_2] {
                    angles.push(t.rem_euclid(TAU));
                }
            }
            angles.sort_by(f64::total_cmp);
            angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            if angles.len() > 1 && (angles[0] + TAU - angles[angles.len() - 1]) < 1e-12 {
                angles.pop();
            }
            let at = |t: f64| DVector::from_vec(vec![t.cos(), t.sin()]);
            let m = angles.len();
            let mut dirs = Vec::with_capacity(2 * m);
            for i in 0..m {
                let next = if i + 1 < m { angles[i + 1] } else { angles[0] + TAU };
                let mid = if m == 1 { angles[i] + PI } else { 0.5 * (angles[i] + next) };
                dirs.push(at(mid));
            }
            dirs.extend(angles.iter().map(|&t| at(t)));
            dirs
        }
        _ => unreachable!("exact enumeration is limited to rank two"),
    }
}

/// True iff `(2·diag(pattern) − I)·Z·u ≥ −1e-10` elementwise.
pub fn cone_membership(u: &DVector<f64>, pattern: &[bool], z: &DataMatrix) -> Result<bool> {
    if pattern.len() != z.nrows() {
        return Err(Error::dims("pattern length vs data rows", z.nrows(), pattern.len()));
    }
    if u.len() != z.ncols() {
        return Err(Error::dims("direction length vs data columns", z.ncols(), u.len()));
    }
    let vals = z * u;
    Ok(pattern
        .iter()
        .zip(vals.iter())
        .all(|(&p, &v)| if p { v >= -CONE_TOL } else { -v >= -CONE_TOL }))
}

/// The polyhedral cone `{u : (2H − I)Zu ≥ 0}` with Euclidean projection.
///
/// Directions in `null(Z)` are unconstrained, so the projection splits into
/// the null-space part (kept) and a projection inside the row space. Row
/// spaces of dimension at most two are handled exactly by enumerating faces;
/// larger ones use Hildreth's dual coordinate ascent.
#[derive(Debug, Clone)]
pub struct Cone {
    basis: DataMatrix,
    reduced: DataMatrix,
}

impl Cone {
    pub fn new(pattern: &[bool], z: &DataMatrix) -> Result<Self> {
        if pattern.len() != z.nrows() {
            return Err(Error::dims("pattern length vs data rows", z.nrows(), pattern.len()));
        }
        let dec = svd(z)?;
        let r = dec.rank();
        let basis = dec.v.columns(0, r).into_owned();
        let signed = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| if pattern[i] { z[(i, j)] } else { -z[(i, j)] });
        let reduced = &signed * &basis;
        Ok(Cone { basis, reduced })
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn project(&self, p: &DVector<f64>) -> DVector<f64> {
        let coords = self.basis.transpose() * p;
        let null_part = p - &self.basis * &coords;
        let projected = if self.basis.ncols() <= 2 {
            project_small(&self.reduced, &coords)
        } else {
            project_hildreth(&self.reduced, &coords)
        };
        null_part + &self.basis * projected
    }

    /// Unit vectors whose conic hull, together with `null(Z)`, is the cone.
    /// Only available when the row space has dimension at most two; returns
    /// an empty list otherwise.
    pub fn generators(&self) -> Vec<DVector<f64>> {
        let r = self.basis.ncols();
        let mut cands: Vec<DVector<f64>> = Vec::new();
        match r {
            1 => {
                cands.push(DVector::from_element(1, 1.0));
                cands.push(DVector::from_element(1, -1.0));
            }
            2 => {
                for row in self.reduced.row_iter() {
                    let n = row.norm();
                    if n == 0.0 {
                        continue;
                    }
                    let (a0, a1) = (row[0] / n, row[1] / n);
                    for (x, y) in [(-a1, a0), (a1, -a0), (a0, a1)] {
                        cands.push(DVector::from_vec(vec![x, y]));
                    }
                }
                for (x, y) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
                    cands.push(DVector::from_vec(vec![x, y]));
                }
            }
            _ => return Vec::new(),
        }
        let mut out: Vec<DVector<f64>> = Vec::new();
        for c in cands {
            if !feasible(&self.reduced, &c) {
                continue;
            }
            let full = &self.basis * c;
            if !out.iter().any(|o| (o - &full).amax() < 1e-12) {
                out.push(full);
            }
        }
        out
    }

    /// `(2H − I)Zu` in reduced coordinates, minimum entry.
    pub fn min_slack(&self, u: &DVector<f64>) -> f64 {
        let coords = self.basis.transpose() * u;
        (&self.reduced * coords).iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn feasible(a: &DataMatrix, c: &DVector<f64>) -> bool {
    let scale = c.norm() * a.amax().max(1e-300);
    (a * c).iter().all(|&v| v >= -1e-12 * scale)
}

fn project_small(a: &DataMatrix, c: &DVector<f64>) -> DVector<f64> {
    if c.is_empty() || feasible(a, c) {
        return c.clone();
    }
    let mut best = DVector::zeros(c.len());
    let mut best_dist = c.norm_squared();
    if c.len() == 2 {
        for row in a.row_iter() {
            let ai = row.transpose();
            let nn = ai.norm_squared();
            if nn == 0.0 {
                continue;
            }
            let cand = c - &ai * (ai.dot(c) / nn);
            let dist = (c - &cand).norm_squared();
            if dist < best_dist && feasible(a, &cand) {
                best = cand;
                best_dist = dist;
            }
        }
    }
    best
}

fn project_hildreth(a: &DataMatrix, c: &DVector<f64>) -> DVector<f64> {
    let m = a.nrows();
    let norms: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
    let mut mu = vec![0.0; m];
    let mut x = c.clone();
    for _ in 0..20_000 {
        let mut moved = 0.0f64;
        for i in 0..m {
            if norms[i] == 0.0 {
                continue;
            }
            let row = a.row(i);
            let slack = (row * &x)[(0, 0)];
            let next = (mu[i] - slack / norms[i]).max(0.0);
            let delta = next - mu[i];
            if delta != 0.0 {
                x += row.transpose() * delta;
                mu[i] = next;
                moved = moved.max(delta.abs() * norms[i].sqrt());
            }
        }
        if moved <= 1e-15 * (1.0 + c.norm()) {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_matrix;

    fn col(v: &[f64]) -> DataMatrix {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn pattern_set(a: &ArrangementSet) -> HashSet<Vec<bool>> {
        a.patterns.iter().map(|p| p.pattern.clone()).collect()
    }

    #[test]
    fn positive_points_without_bias() {
        let a = enumerate_arrangements(&col(&[1.0, 2.0]), false, 10).unwrap();
        assert!(a.complete);
        let expected: HashSet<_> = [vec![true, true], vec![false, false]].into_iter().collect();
        assert_eq!(pattern_set(&a), expected);
    }

    #[test]
    fn opposite_points_exclude_zero_witness() {
        let a = enumerate_arrangements(&col(&[1.0, -1.0]), false, 10).unwrap();
        let expected: HashSet<_> = [vec![true, false], vec![false, true]].into_iter().collect();
        assert_eq!(pattern_set(&a), expected);
    }

    /// Threshold sweep over a dense `(u, b)` grid.
    fn brute_force_bias_patterns(points: &[f64]) -> HashSet<Vec<bool>> {
        let mut out = HashSet::new();
        for iu in -20..=20 {
            for ib in -400..=400 {
                let (u, b) = (iu as f64 / 10.0, ib as f64 / 100.0 + 0.003);
                if u == 0.0 && b == 0.0 {
                    continue;
                }
                out.insert(points.iter().map(|&x| x * u + b >= 0.0).collect::<Vec<_>>());
            }
        }
        out
    }

    #[test]
    fn interval_patterns_with_bias() {
        let pts = [-1.0, 0.0, 1.0];
        let a = enumerate_arrangements(&col(&pts), true, 10).unwrap();
        assert!(a.complete);
        assert_eq!(pattern_set(&a), brute_force_bias_patterns(&pts));
        assert_eq!(a.len(), 2 * pts.len());
    }

    #[test]
    fn bias_pattern_count_is_2n_on_distinct_points() {
        for n in 1..8 {
            let pts: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + i as f64).collect();
            let a = enumerate_arrangements(&col(&pts), true, 10).unwrap();
            assert_eq!(a.len(), 2 * n, "n = {n}");
            assert_eq!(pattern_set(&a), brute_force_bias_patterns(&pts));
        }
    }

    #[test]
    fn witnesses_reproduce_patterns() {
        for seed in 0..10 {
            let z = gaussian_matrix(7, 2, seed);
            for bias in [false, true] {
                let a = enumerate_arrangements(&z, bias, 100).unwrap();
                let data = if bias { augment_with_ones(&z) } else { z.clone() };
                for p in &a.patterns {
                    let w = if bias { p.augmented_witness() } else { p.witness.clone() };
                    assert!(cone_membership(&w, &p.pattern, &data).unwrap());
                    assert_eq!(pattern_of(&data, &w, 0.0), p.pattern);
                }
            }
        }
    }

    #[test]
    fn rank_two_enumeration_is_complete_on_random_probes() {
        let z = gaussian_matrix(9, 2, 4);
        let a = enumerate_arrangements(&z, false, 1).unwrap();
        assert!(a.complete);
        assert!(a.len() <= 4 * z.nrows());
        let set = pattern_set(&a);
        for k in 0..100_000u64 {
            let u = unit_direction(2, 77, k);
            assert!(set.contains(&pattern_of(&z, &u, 0.0)));
        }
    }

    #[test]
    fn rank_two_embedded_in_higher_dimension() {
        let base = gaussian_matrix(6, 2, 8);
        let lift = gaussian_matrix(2, 5, 9);
        let z = &base * &lift;
        let a = enumerate_arrangements(&z, false, 1).unwrap();
        assert!(a.complete);
        let set = pattern_set(&a);
        for k in 0..20_000u64 {
            let u = unit_direction(5, 1, k);
            assert!(set.contains(&pattern_of(&z, &u, 0.0)));
        }
    }

    #[test]
    fn boundary_only_patterns_are_found() {
        // Rows (0,1) and (0,-1) are both zero along u = (±1, 0).
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]);
        let a = enumerate_arrangements(&z, false, 1).unwrap();
        assert!(a.contains(&[true, true]));
        assert!(a.contains(&[true, false]));
        assert!(a.contains(&[false, true]));
    }

    #[test]
    fn high_rank_falls_back_to_sampling() {
        let z = gaussian_matrix(8, 4, 2);
        let a = enumerate_arrangements(&z, false, 500).unwrap();
        assert!(!a.complete);
        assert!(!a.is_empty());
        assert_eq!(a.len(), pattern_set(&a).len());
    }

    #[test]
    fn cone_membership_cases() {
        let z = col(&[1.0, -1.0]);
        let u = DVector::from_element(1, -1.0);
        assert!(!cone_membership(&u, &[true, false], &z).unwrap());
        assert!(cone_membership(&DVector::zeros(1), &[true, false], &z).unwrap());
        assert!(cone_membership(&DVector::zeros(1), &[false, false], &z).unwrap());
        assert!(cone_membership(&u, &[true], &z).is_err());
    }

    #[test]
    fn cone_projection_is_a_projection() {
        for seed in 0..20 {
            let z = gaussian_matrix(5, if seed % 2 == 0 { 2 } else { 4 }, seed);
            let a = enumerate_arrangements_seeded(&z, false, 200, seed).unwrap();
            for p in &a.patterns {
                let cone = Cone::new(&p.pattern, &z).unwrap();
                for k in 0..10u64 {
                    let q = unit_direction(z.ncols(), seed + 50, k) * 3.0;
                    let proj = cone.project(&q);
                    assert!(cone_membership(&proj, &p.pattern, &z).unwrap());
                    // Idempotent and obtuse-angle characterization.
                    assert!((cone.project(&proj) - &proj).norm() < 1e-8);
                    assert!((&q - &proj).dot(&proj).abs() < 1e-8);
                    let w = &p.witness;
                    assert!((&q - &proj).dot(w) <= 1e-8);
                }
            }
        }
    }
}
