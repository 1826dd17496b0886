//! Finite unions of closed real intervals.
//!
//! The truncation set of a selective test is an intersection of solution
//! sets of quadratic inequalities in a scalar `phi`. Each solution set is a
//! union of at most two closed intervals, so the running intersection stays a
//! short sorted list.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

/// Relative threshold below which a leading coefficient is treated as zero.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Absolute slack for boundary membership.
pub const BOUNDARY_SLACK: f64 = 1e-9;

/// Closed interval `[lo, hi]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] is reversed");
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo - BOUNDARY_SLACK && x <= self.hi + BOUNDARY_SLACK
    }
}

/// Sorted union of disjoint closed intervals with strictly positive gaps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalUnion {
    intervals: Vec<Interval>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn real_line() -> Self {
        Self::single(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn nonnegative() -> Self {
        Self::single(0.0, f64::INFINITY)
    }

    pub fn single(lo: f64, hi: f64) -> Self {
        Self::from_intervals(vec![Interval::new(lo, hi)])
    }

    /// Builds the canonical form of an arbitrary collection of intervals:
    /// sorted by lower end, overlapping or touching members merged.
    pub fn from_intervals(mut raw: Vec<Interval>) -> Self {
        raw.retain(|iv| iv.lo <= iv.hi && !iv.lo.is_nan() && !iv.hi.is_nan());
        raw.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        let mut merged: Vec<Interval> = Vec::with_capacity(raw.len());
        for iv in raw {
            match merged.last_mut() {
                Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
                _ => merged.push(iv),
            }
        }
        Self { intervals: merged }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    /// Smallest point of the set, if any.
    pub fn infimum(&self) -> Option<f64> {
        self.intervals.first().map(|iv| iv.lo)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(x))
    }

    /// Distance from `x` to the nearest finite interval endpoint.
    pub fn boundary_distance(&self, x: f64) -> f64 {
        self.intervals
            .iter()
            .flat_map(|iv| [iv.lo, iv.hi])
            .filter(|e| e.is_finite())
            .map(|e| (e - x).abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (a, b) = (&self.intervals, &other.intervals);
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            let lo = a[i].lo.max(b[j].lo);
            let hi = a[i].hi.min(b[j].hi);
            if lo <= hi {
                out.push(Interval::new(lo, hi));
            }
            if a[i].hi < b[j].hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self::from_intervals(out)
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut all = self.intervals.clone();
        all.extend_from_slice(&other.intervals);
        Self::from_intervals(all)
    }

    pub fn clip_nonnegative(&self) -> Self {
        self.intersect(&Self::nonnegative())
    }

    /// Solution set of `a x^2 + b x + c <= 0` over the reals.
    ///
    /// Coefficients whose magnitude is at most `tol * max(|a|, |b|, |c|, 1)`
    /// are treated as exact zeros, so a numerically vanishing leading term
    /// degrades the inequality to a linear or constant one.
    pub fn solve_quadratic_leq(a: f64, b: f64, c: f64, tol: f64) -> Self {
        let scale = a.abs().max(b.abs()).max(c.abs()).max(1.0);
        let cut = tol * scale;
        let a_zero = a.abs() <= cut;
        let b_zero = b.abs() <= cut;

        if a_zero && b_zero {
            return if c <= cut { Self::real_line() } else { Self::empty() };
        }
        if a_zero {
            let root = -c / b;
            return if b > 0.0 {
                Self::single(f64::NEG_INFINITY, root)
            } else {
                Self::single(root, f64::INFINITY)
            };
        }

        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return if a > 0.0 { Self::empty() } else { Self::real_line() };
        }
        let sq = disc.sqrt();
        let q = -0.5 * (b + b.signum() * sq);
        let (r1, r2) = if q == 0.0 {
            (0.0, 0.0)
        } else {
            let x1 = q / a;
            let x2 = c / q;
            (x1.min(x2), x1.max(x2))
        };
        if a > 0.0 {
            Self::single(r1, r2)
        } else {
            Self::from_intervals(vec![
                Interval::new(f64::NEG_INFINITY, r1),
                Interval::new(r2, f64::INFINITY),
            ])
        }
    }
}

impl fmt::Display for IntervalUnion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.intervals.is_empty() {
            return write!(f, "{{}}");
        }
        for (n, iv) in self.intervals.iter().enumerate() {
            if n > 0 {
                write!(f, " U ")?;
            }
            write!(f, "[{}, {}]", iv.lo, iv.hi)?;
        }
        Ok(())
    }
}

// JSON form: a list of [lo, hi] pairs, infinite ends written as "inf"/"-inf".

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Endpoint {
    Num(f64),
    Text(String),
}

impl Endpoint {
    fn from_f64(x: f64) -> Self {
        if x == f64::INFINITY {
            Endpoint::Text("inf".into())
        } else if x == f64::NEG_INFINITY {
            Endpoint::Text("-inf".into())
        } else {
            Endpoint::Num(x)
        }
    }

    fn to_f64<E: de::Error>(&self) -> Result<f64, E> {
        match self {
            Endpoint::Num(x) => Ok(*x),
            Endpoint::Text(s) => match s.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("bad interval endpoint {other:?}"))),
            },
        }
    }
}

impl Serialize for IntervalUnion {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.intervals.len()))?;
        for iv in &self.intervals {
            seq.serialize_element(&[Endpoint::from_f64(iv.lo), Endpoint::from_f64(iv.hi)])?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for IntervalUnion {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let pairs: Vec<[Endpoint; 2]> = Vec::deserialize(deserializer)?;
        let mut raw = Vec::with_capacity(pairs.len());
        for [lo, hi] in &pairs {
            let (lo, hi) = (lo.to_f64()?, hi.to_f64()?);
            if lo > hi {
                return Err(de::Error::custom(format!("reversed interval [{lo}, {hi}]")));
            }
            raw.push(Interval::new(lo, hi));
        }
        Ok(Self::from_intervals(raw))
    }
}
