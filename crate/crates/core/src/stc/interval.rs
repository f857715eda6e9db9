use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Finite union of half-open intervals `(lo, hi]`, kept sorted and merged.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct IntervalSet {
    pieces: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for IntervalSet {
    type Error = crate::Error;
    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        IntervalSet::new(v)
    }
}

impl From<IntervalSet> for Vec<(f64, f64)> {
    fn from(s: IntervalSet) -> Self {
        s.pieces
    }
}

impl IntervalSet {
    pub fn new(pieces: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut v: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in pieces {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(invalid("interval", format!("({lo}, {hi}] is not a valid interval")));
            }
            if lo < hi {
                v.push((lo, hi));
            }
        }
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (lo, hi) in v {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        Ok(Self { pieces: merged })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new([(lo, hi)])
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn pieces(&self) -> &[(f64, f64)] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        // pieces are sorted by lower end
        let idx = self.pieces.partition_point(|&(lo, _)| lo < x);
        idx > 0 && x <= self.pieces[idx - 1].1
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        for &(a0, a1) in &self.pieces {
            for &(b0, b1) in &other.pieces {
                let lo = a0.max(b0);
                let hi = a1.min(b1);
                if lo < hi {
                    out.push((lo, hi));
                }
            }
        }
        IntervalSet::new(out).expect("intersection of valid intervals")
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        IntervalSet::new(self.pieces.iter().chain(&other.pieces).copied()).expect("union of valid intervals")
    }

    /// Complement within `(lo, hi]`.
    pub fn complement_within(&self, lo: f64, hi: f64) -> IntervalSet {
        let mut out = Vec::new();
        let mut cursor = lo;
        for &(a, b) in &self.pieces {
            if b <= lo || a >= hi {
                continue;
            }
            if a > cursor {
                out.push((cursor, a));
            }
            cursor = cursor.max(b);
        }
        if cursor < hi {
            out.push((cursor, hi));
        }
        IntervalSet::new(out).expect("complement of valid intervals")
    }

    /// True when the sets share no interval of positive length.
    pub fn is_disjoint(&self, other: &IntervalSet) -> bool {
        self.intersect(other).is_empty()
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        self.complement_within(lo, hi).is_empty()
    }

    pub fn endpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces.iter().flat_map(|&(a, b)| [a, b])
    }

    pub fn length(&self) -> f64 {
        self.pieces.iter().map(|(a, b)| b - a).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_and_contains() {
        let s = IntervalSet::new([(0.5, 1.0), (0.0, 0.25), (0.2, 0.3)]).unwrap();
        assert_eq!(s.pieces(), &[(0.0, 0.3), (0.5, 1.0)]);
        assert!(!s.contains(0.0));
        assert!(s.contains(0.3));
        assert!(!s.contains(0.4));
        assert!(!s.contains(0.5));
        assert!(s.contains(1.0));
    }

    #[test]
    fn complement_and_disjointness() {
        let a = IntervalSet::interval(0.0, 0.5).unwrap();
        let c = a.complement_within(0.0, 1.0);
        assert_eq!(c.pieces(), &[(0.5, 1.0)]);
        assert!(a.is_disjoint(&c));
        assert!(a.union(&c).covers(0.0, 1.0));
        let b = IntervalSet::interval(0.4, 0.6).unwrap();
        assert!(!a.is_disjoint(&b));
    }

    #[test]
    fn rejects_reversed() {
        assert!(IntervalSet::interval(1.0, 0.0).is_err());
    }
}
