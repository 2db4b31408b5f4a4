//! Convex and concave envelopes of `{(x, x²) : x ∈ S}` for a bounded set `S`.
//!
//! The upper envelope is always the chord through `(L, L²)` and `(R, R²)`.
//! The lower envelope is a maximum of affine chords, optionally together with
//! `x²` itself when `S` contains whole intervals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("variable set is empty")]
    EmptySet,
    #[error("invalid variable set: {0}")]
    InvalidSet(String),
    #[error("point {x} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
}

/// Feasible set of a single variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", content = "params", rename_all = "snake_case")]
pub enum VarSet {
    Interval { lo: f64, hi: f64 },
    /// Sorted, distinct values.
    FiniteSet { values: Vec<f64> },
    /// All integers in `lo..=hi`.
    IntegerRange { lo: i64, hi: i64 },
    /// Sorted, pairwise disjoint closed intervals.
    IntervalUnion { pieces: Vec<(f64, f64)> },
}

impl VarSet {
    pub fn interval(lo: f64, hi: f64) -> Result<Self, EnvelopeError> {
        let s = VarSet::Interval { lo, hi };
        s.validate()?;
        Ok(s)
    }

    /// Sorts and de-duplicates `values`.
    pub fn finite(mut values: Vec<f64>) -> Result<Self, EnvelopeError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EnvelopeError::InvalidSet("non-finite value".into()));
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        let s = VarSet::FiniteSet { values };
        s.validate()?;
        Ok(s)
    }

    pub fn integer_range(lo: i64, hi: i64) -> Result<Self, EnvelopeError> {
        let s = VarSet::IntegerRange { lo, hi };
        s.validate()?;
        Ok(s)
    }

    /// Sorts the pieces by left endpoint; overlapping pieces are rejected.
    pub fn interval_union(mut pieces: Vec<(f64, f64)>) -> Result<Self, EnvelopeError> {
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        let s = VarSet::IntervalUnion { pieces };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EnvelopeError> {
        match self {
            VarSet::Interval { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(EnvelopeError::InvalidSet("unbounded interval".into()));
                }
                if lo > hi {
                    return Err(EnvelopeError::EmptySet);
                }
            }
            VarSet::FiniteSet { values } => {
                if values.is_empty() {
                    return Err(EnvelopeError::EmptySet);
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(EnvelopeError::InvalidSet("non-finite value".into()));
                }
                if values.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(EnvelopeError::InvalidSet(
                        "finite set values must be sorted and distinct".into(),
                    ));
                }
            }
            VarSet::IntegerRange { lo, hi } => {
                if lo > hi {
                    return Err(EnvelopeError::EmptySet);
                }
            }
            VarSet::IntervalUnion { pieces } => {
                if pieces.is_empty() {
                    return Err(EnvelopeError::EmptySet);
                }
                for &(a, b) in pieces {
                    if !a.is_finite() || !b.is_finite() {
                        return Err(EnvelopeError::InvalidSet("unbounded piece".into()));
                    }
                    if a > b {
                        return Err(EnvelopeError::InvalidSet(format!(
                            "piece [{a}, {b}] is empty"
                        )));
                    }
                }
                if pieces.windows(2).any(|w| w[0].1 >= w[1].0) {
                    return Err(EnvelopeError::InvalidSet(
                        "interval union pieces must be sorted and disjoint".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `L = min S`.
    pub fn lower(&self) -> f64 {
        match self {
            VarSet::Interval { lo, .. } => *lo,
            VarSet::FiniteSet { values } => values[0],
            VarSet::IntegerRange { lo, .. } => *lo as f64,
            VarSet::IntervalUnion { pieces } => pieces[0].0,
        }
    }

    /// `R = max S`.
    pub fn upper(&self) -> f64 {
        match self {
            VarSet::Interval { hi, .. } => *hi,
            VarSet::FiniteSet { values } => values[values.len() - 1],
            VarSet::IntegerRange { hi, .. } => *hi as f64,
            VarSet::IntervalUnion { pieces } => pieces[pieces.len() - 1].1,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, VarSet::FiniteSet { .. } | VarSet::IntegerRange { .. })
    }

    /// Explicit points of a finite set, `None` for sets containing intervals.
    pub fn points(&self) -> Option<Vec<f64>> {
        match self {
            VarSet::FiniteSet { values } => Some(values.clone()),
            VarSet::IntegerRange { lo, hi } => Some((*lo..=*hi).map(|v| v as f64).collect()),
            _ => None,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match self {
            VarSet::Interval { lo, hi } => *lo <= x && x <= *hi,
            VarSet::FiniteSet { values } => values.contains(&x),
            VarSet::IntegerRange { lo, hi } => {
                x.fract() == 0.0 && (*lo as f64) <= x && x <= (*hi as f64)
            }
            VarSet::IntervalUnion { pieces } => pieces.iter().any(|&(a, b)| a <= x && x <= b),
        }
    }

    /// Point of the set closest to `x`.
    pub fn project(&self, x: f64) -> f64 {
        match self {
            VarSet::Interval { lo, hi } => x.clamp(*lo, *hi),
            VarSet::FiniteSet { values } => values
                .iter()
                .copied()
                .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
                .unwrap(),
            VarSet::IntegerRange { lo, hi } => x.round().clamp(*lo as f64, *hi as f64),
            VarSet::IntervalUnion { pieces } => pieces
                .iter()
                .map(|&(a, b)| x.clamp(a, b))
                .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
                .unwrap(),
        }
    }
}

/// `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub slope: f64,
    pub intercept: f64,
}

impl Affine {
    /// Chord of `x²` through `(a, a²)` and `(b, b²)`.
    pub fn chord(a: f64, b: f64) -> Self {
        Self {
            slope: a + b,
            intercept: -a * b,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Envelope pair `(ℓ, u)` of one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeModel {
    /// Chords whose maximum (with `x²` when `quadratic`) is `ℓ`.
    pub lower_chords: Vec<Affine>,
    /// Whether `y ≥ x²` is one of the lower pieces.
    pub quadratic: bool,
    /// `u(x) = (L + R)x − LR`.
    pub upper: Affine,
    pub lo: f64,
    pub hi: f64,
}

pub fn build_envelope(set: &VarSet) -> Result<EnvelopeModel, EnvelopeError> {
    set.validate()?;
    let (lo, hi) = (set.lower(), set.upper());
    let upper = Affine::chord(lo, hi);
    let (lower_chords, quadratic) = match set {
        VarSet::Interval { .. } => (Vec::new(), lo < hi),
        VarSet::FiniteSet { .. } | VarSet::IntegerRange { .. } => {
            let pts = set.points().expect("finite set");
            let chords = pts.windows(2).map(|w| Affine::chord(w[0], w[1])).collect();
            (chords, false)
        }
        VarSet::IntervalUnion { pieces } => {
            let chords = pieces
                .windows(2)
                .map(|w| Affine::chord(w[0].1, w[1].0))
                .collect();
            (chords, lo < hi)
        }
    };
    // A single point: ℓ = u is the tangent line at that point.
    let lower_chords = if lower_chords.is_empty() && !quadratic {
        vec![upper]
    } else {
        lower_chords
    };
    Ok(EnvelopeModel {
        lower_chords,
        quadratic,
        upper,
        lo,
        hi,
    })
}

impl EnvelopeModel {
    fn check_domain(&self, x: f64) -> Result<f64, EnvelopeError> {
        let slack = 1e-9 * (1.0 + self.lo.abs().max(self.hi.abs()));
        if !x.is_finite() || x < self.lo - slack || x > self.hi + slack {
            return Err(EnvelopeError::OutOfDomain {
                x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(x.clamp(self.lo, self.hi))
    }

    /// `ℓ(x)` without a domain check.
    pub fn lower_value(&self, x: f64) -> f64 {
        let chords = self
            .lower_chords
            .iter()
            .map(|c| c.eval(x))
            .fold(f64::NEG_INFINITY, f64::max);
        if self.quadratic {
            chords.max(x * x)
        } else {
            chords
        }
    }

    /// `u(x)` without a domain check.
    pub fn upper_value(&self, x: f64) -> f64 {
        self.upper.eval(x)
    }

    /// `(ℓ(x), u(x))`.
    pub fn eval(&self, x: f64) -> Result<(f64, f64), EnvelopeError> {
        let x = self.check_domain(x)?;
        Ok((self.lower_value(x), self.upper_value(x)))
    }

    /// `(α, β) = (ℓ(x̄) − x̄², u(x̄) − x̄²)`, clipped so that `0 ≤ α ≤ β`.
    pub fn sep_coefficients(&self, xbar: f64) -> Result<(f64, f64), EnvelopeError> {
        let (l, u) = self.eval(xbar)?;
        let x = xbar.clamp(self.lo, self.hi);
        let alpha = (l - x * x).max(0.0);
        let beta = (u - x * x).max(alpha);
        Ok((alpha, beta))
    }

    /// True when `ℓ ≡ u` on the domain (one- and two-point sets), in which case
    /// the lifted variable is an affine function of `x`.
    pub fn is_degenerate(&self) -> bool {
        !self.quadratic
            && self.lower_chords.len() == 1
            && (self.lower_chords[0].slope - self.upper.slope).abs() <= 1e-12 * (1.0 + self.upper.slope.abs())
            && (self.lower_chords[0].intercept - self.upper.intercept).abs()
                <= 1e-12 * (1.0 + self.upper.intercept.abs())
    }
}

/// Convenience wrapper for [`EnvelopeModel::eval`].
pub fn eval_envelopes(model: &EnvelopeModel, x: f64) -> Result<(f64, f64), EnvelopeError> {
    model.eval(x)
}

/// Convenience wrapper for [`EnvelopeModel::sep_coefficients`].
pub fn sep_coefficients(model: &EnvelopeModel, xbar: f64) -> Result<(f64, f64), EnvelopeError> {
    model.sep_coefficients(xbar)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn unit_interval_gives_diagonal_rlt_pair() {
        let m = build_envelope(&VarSet::interval(0.0, 1.0).unwrap()).unwrap();
        assert!(m.quadratic && m.lower_chords.is_empty());
        assert_eq!(m.upper, Affine { slope: 1.0, intercept: 0.0 });
        let (l, u) = m.eval(0.5).unwrap();
        assert!(close(l, 0.25) && close(u, 0.5));
        let (a, b) = m.sep_coefficients(0.5).unwrap();
        assert!(close(a, 0.0) && close(b, 0.25));
    }

    #[test]
    fn integer_range_minus3_to_3() {
        let m = build_envelope(&VarSet::integer_range(-3, 3).unwrap()).unwrap();
        assert_eq!(m.lower_chords.len(), 6);
        assert!(close(m.upper.slope, 0.0) && close(m.upper.intercept, 9.0));
        let (l, u) = m.eval(0.5).unwrap();
        assert!(close(l, 0.5) && close(u, 9.0));
        let (a, b) = m.sep_coefficients(0.5).unwrap();
        assert!(close(a, 0.25) && close(b, 8.75));
        let (a, b) = m.sep_coefficients(1.0).unwrap();
        assert!(close(a, 0.0) && close(b, 8.0));
    }

    #[test]
    fn two_point_set_is_degenerate() {
        let m = build_envelope(&VarSet::finite(vec![1.0, 0.0]).unwrap()).unwrap();
        assert!(m.is_degenerate());
        let (l, u) = m.eval(0.3).unwrap();
        assert!(close(l, 0.3) && close(u, 0.3));
        let single = build_envelope(&VarSet::finite(vec![2.0]).unwrap()).unwrap();
        assert!(single.is_degenerate());
        assert!(close(single.eval(2.0).unwrap().0, 4.0));
        assert!(!build_envelope(&VarSet::integer_range(-1, 1).unwrap())
            .unwrap()
            .is_degenerate());
    }

    #[test]
    fn interval_union_gap_chord() {
        let set = VarSet::interval_union(vec![(2.0, 3.0), (0.0, 1.0)]).unwrap();
        let m = build_envelope(&set).unwrap();
        assert!(m.quadratic);
        assert_eq!(m.lower_chords, vec![Affine::chord(1.0, 2.0)]);
        let (l, u) = m.eval(1.5).unwrap();
        assert!(close(l, 2.5) && close(u, 4.5));
        // Inside a piece the quadratic dominates.
        assert!(close(m.eval(0.5).unwrap().0, 0.25));
    }

    #[test]
    fn invalid_sets_and_domain_errors() {
        assert_eq!(VarSet::finite(vec![]), Err(EnvelopeError::EmptySet));
        assert_eq!(VarSet::interval(1.0, 0.0), Err(EnvelopeError::EmptySet));
        assert!(VarSet::interval_union(vec![(0.0, 2.0), (1.0, 3.0)]).is_err());
        assert!(VarSet::interval(0.0, f64::INFINITY).is_err());
        let m = build_envelope(&VarSet::interval(0.0, 1.0).unwrap()).unwrap();
        assert!(matches!(m.eval(1.5), Err(EnvelopeError::OutOfDomain { .. })));
        assert!(m.eval(1.0).is_ok() && m.eval(0.0).is_ok());
    }

    fn shapes() -> Vec<VarSet> {
        vec![
            VarSet::interval(-1.5, 2.0).unwrap(),
            VarSet::finite(vec![-2.0, -0.5, 0.25, 1.0, 3.0]).unwrap(),
            VarSet::integer_range(-3, 3).unwrap(),
            VarSet::interval_union(vec![(-2.0, -1.0), (0.0, 0.5), (1.5, 2.5)]).unwrap(),
        ]
    }

    #[test]
    fn tightness_at_set_points() {
        for set in shapes() {
            let m = build_envelope(&set).unwrap();
            let (lo, hi) = (set.lower(), set.upper());
            assert!(close(m.upper_value(lo), lo * lo) && close(m.upper_value(hi), hi * hi));
            let samples: Vec<f64> = match &set {
                VarSet::IntervalUnion { pieces } => pieces
                    .iter()
                    .flat_map(|&(a, b)| (0..=10).map(move |k| a + (b - a) * k as f64 / 10.0))
                    .collect(),
                VarSet::Interval { lo, hi } => {
                    (0..=10).map(|k| lo + (hi - lo) * k as f64 / 10.0).collect()
                }
                _ => set.points().unwrap(),
            };
            for s in samples {
                assert!((m.lower_value(s) - s * s).abs() < 1e-10, "{set:?} at {s}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ordering_and_dominance(k in 0usize..4, t in 0.0f64..=1.0) {
                let set = &shapes()[k];
                let m = build_envelope(set).unwrap();
                let x = set.lower() + t * (set.upper() - set.lower());
                let (l, u) = m.eval(x).unwrap();
                prop_assert!(x * x <= l + 1e-12);
                prop_assert!(l <= u + 1e-12);
                let (a, b) = m.sep_coefficients(x).unwrap();
                prop_assert!(0.0 <= a && a <= b);
            }

            #[test]
            fn lower_envelope_is_convex(k in 0usize..4) {
                let set = &shapes()[k];
                let m = build_envelope(set).unwrap();
                let (lo, hi) = (set.lower(), set.upper());
                let h = (hi - lo) / 2000.0;
                let vals: Vec<f64> = (0..=2000).map(|i| m.lower_value(lo + h * i as f64)).collect();
                for w in vals.windows(3) {
                    prop_assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-9);
                }
            }
        }
    }
}
