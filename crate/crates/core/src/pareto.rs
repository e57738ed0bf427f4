//! Dominance, non-dominated sorting, crowding distance, exact hypervolume
//! and population diversity.
//!
//! Every objective is maximized. Oracles that minimize are negated before
//! their scores reach this module.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqspace::Sequence;

/// Scores of one sequence, one entry per objective, all to be maximized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Self {
        ScoreVector(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ScoreVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for ScoreVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ScoreVector {
    fn from(values: Vec<f64>) -> Self {
        ScoreVector(values)
    }
}

fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strictly = true;
        }
    }
    strictly
}

/// `a` dominates `b` iff it is at least as good everywhere and differs somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
    }
    Ok(dominates_unchecked(a, b))
}

/// Partitions point indices into successive non-dominated fronts.
///
/// Within a front, indices keep their input order.
pub fn non_dominated_sort<P: AsRef<[f64]>>(points: &[P]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (points[i].as_ref(), points[j].as_ref());
            if dominates_unchecked(a, b) {
                dominated_by[i].push(j);
                domination_count[j] += 1;
            } else if dominates_unchecked(b, a) {
                dominated_by[j].push(i);
                domination_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Indices of the non-dominated points, in input order.
pub fn pareto_indices<P: AsRef<[f64]>>(points: &[P]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points
                .iter()
                .any(|q| dominates_unchecked(q.as_ref(), points[i].as_ref()))
        })
        .collect()
}

/// Crowding distance of each point of a front.
///
/// Points attaining the minimum or maximum of an objective are boundary
/// points (`+inf`). Interior points accumulate the normalized gap between
/// the nearest values below and above theirs. Objectives with zero range
/// contribute nothing. The result does not depend on input order.
pub fn crowding_distance<P: AsRef<[f64]>>(front: &[P]) -> Vec<f64> {
    let n = front.len();
    let mut distance = vec![0.0; n];
    if n == 0 {
        return distance;
    }
    let k = front[0].as_ref().len();
    for d in 0..k {
        let value = |i: usize| front[i].as_ref()[d];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)));
        let lo = value(order[0]);
        let hi = value(order[n - 1]);
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        let mut start = 0;
        while start < n {
            let v = value(order[start]);
            let mut end = start;
            while end < n && value(order[end]) == v {
                end += 1;
            }
            let ties = end - start;
            for &i in &order[start..end] {
                if v == lo || v == hi {
                    distance[i] = f64::INFINITY;
                } else {
                    let below = if ties > 1 { v } else { value(order[start - 1]) };
                    let above = if ties > 1 { v } else { value(order[end]) };
                    distance[i] += (above - below) / range;
                }
            }
            start = end;
        }
    }
    distance
}

/// Exact hypervolume dominated by `points` and bounded below by `reference`.
///
/// Points that do not strictly exceed the reference in every coordinate are
/// ignored. Supports 1 to 4 objectives.
pub fn hypervolume<P: AsRef<[f64]>>(points: &[P], reference: &[f64]) -> Result<f64> {
    let k = reference.len();
    if k == 0 || k > 4 {
        return Err(Error::UnsupportedDimension(k));
    }
    let mut kept: Vec<&[f64]> = Vec::with_capacity(points.len());
    for p in points {
        let p = p.as_ref();
        if p.len() != k {
            return Err(Error::DimensionMismatch { left: p.len(), right: k });
        }
        if p.iter().zip(reference).all(|(x, r)| x > r) {
            kept.push(p);
        }
    }
    Ok(hv_recursive(&mut kept, reference, k))
}

fn hv_recursive(points: &mut [&[f64]], reference: &[f64], k: usize) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    match k {
        1 => points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) - reference[0],
        2 => hv_2d(points, reference),
        _ => {
            let last = k - 1;
            points.sort_by(|a, b| b[last].total_cmp(&a[last]));
            let mut volume = 0.0;
            for i in 0..points.len() {
                let top = points[i][last];
                let bottom = if i + 1 < points.len() { points[i + 1][last] } else { reference[last] };
                let height = top - bottom;
                if height > 0.0 {
                    let mut slice: Vec<&[f64]> = points[..=i].to_vec();
                    volume += height * hv_recursive(&mut slice, reference, last);
                }
            }
            volume
        }
    }
}

fn hv_2d(points: &mut [&[f64]], reference: &[f64]) -> f64 {
    points.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
    let mut best_y = reference[1];
    let mut area = 0.0;
    for p in points.iter() {
        if p[1] > best_y {
            area += (p[0] - reference[0]) * (p[1] - best_y);
            best_y = p[1];
        }
    }
    area
}

/// Reference point from initial scores: per objective, the minimum minus
/// 10% of its magnitude, or -0.1 when the minimum is exactly zero.
pub fn default_reference<P: AsRef<[f64]>>(initial_scores: &[P]) -> Result<ScoreVector> {
    let first = initial_scores
        .first()
        .ok_or_else(|| Error::config("default reference needs at least one initial score"))?;
    let k = first.as_ref().len();
    let mut mins = vec![f64::INFINITY; k];
    for s in initial_scores {
        let s = s.as_ref();
        if s.len() != k {
            return Err(Error::DimensionMismatch { left: s.len(), right: k });
        }
        for (m, &v) in mins.iter_mut().zip(s) {
            *m = m.min(v);
        }
    }
    Ok(ScoreVector(
        mins.into_iter()
            .map(|m| if m == 0.0 { -0.1 } else { m - 0.1 * m.abs() })
            .collect(),
    ))
}

/// The current non-dominated set with a cached hypervolume.
#[derive(Clone, Debug)]
pub struct ParetoState {
    members: Vec<(usize, ScoreVector)>,
    reference: ScoreVector,
    hypervolume: f64,
}

impl ParetoState {
    pub fn new(reference: ScoreVector) -> Result<Self> {
        if reference.is_empty() || reference.len() > 4 {
            return Err(Error::UnsupportedDimension(reference.len()));
        }
        Ok(ParetoState { members: Vec::new(), reference, hypervolume: 0.0 })
    }

    pub fn members(&self) -> &[(usize, ScoreVector)] {
        &self.members
    }

    pub fn scores(&self) -> Vec<&[f64]> {
        self.members.iter().map(|(_, s)| s.as_ref()).collect()
    }

    pub fn reference(&self) -> &ScoreVector {
        &self.reference
    }

    pub fn hypervolume(&self) -> f64 {
        self.hypervolume
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Inserts `score` unless a member dominates it, evicts members it
    /// dominates, and returns the hypervolume gain.
    pub fn update(&mut self, id: usize, score: ScoreVector) -> Result<f64> {
        if score.len() != self.reference.len() {
            return Err(Error::DimensionMismatch { left: score.len(), right: self.reference.len() });
        }
        if self.members.iter().any(|(_, m)| dominates_unchecked(m, &score)) {
            return Ok(0.0);
        }
        self.members.retain(|(_, m)| !dominates_unchecked(&score, m));
        self.members.push((id, score));
        let before = self.hypervolume;
        self.hypervolume = hypervolume(&self.scores(), &self.reference)?;
        Ok((self.hypervolume - before).max(0.0))
    }
}

/// Mean per-position Shannon entropy (natural log) of a set of sequences.
pub fn shannon_entropy(sequences: &[Sequence]) -> Result<f64> {
    shannon_entropy_base(sequences, std::f64::consts::E)
}

/// Mean per-position Shannon entropy with logarithms in `base`.
pub fn shannon_entropy_base(sequences: &[Sequence], base: f64) -> Result<f64> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::config("entropy of an empty sequence set"))?;
    let len = first.len();
    if let Some(bad) = sequences.iter().find(|s| s.len() != len) {
        return Err(Error::LengthMismatch { expected: len, found: bad.len() });
    }
    if len == 0 {
        return Ok(0.0);
    }
    let n = sequences.len() as f64;
    let mut total = 0.0;
    for p in 0..len {
        let mut counts: HashMap<u8, usize> = HashMap::new();
        for s in sequences {
            *counts.entry(s.residues()[p]).or_default() += 1;
        }
        let h: f64 = counts
            .values()
            .map(|&c| {
                let q = c as f64 / n;
                -q * q.ln()
            })
            .sum();
        total += h;
    }
    Ok(total / len as f64 / base.ln())
}

/// Lexicographic comparison, used for deterministic tie-breaks.
pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}
