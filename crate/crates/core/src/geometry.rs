//! Planar geometry on the bounded simulation grid.
//!
//! Everything here is generic over the scalar type so the same kinematics can
//! be exercised in `f32` or `f64`; the simulator itself uses the `f64` aliases
//! exported from the crate root.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("speed must be strictly positive")]
    NonPositiveSpeed,
}

/// A point on the grid, in cells.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point<S> {
    pub x: S,
    pub y: S,
}

impl<S: Float> Point<S> {
    pub fn new(x: S, y: S) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Self) -> S {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Moves at most `step` cells along the straight line towards `target`.
    /// Never overshoots; returns `target` exactly once it is within reach.
    pub fn step_toward(&self, target: &Self, step: S) -> Self {
        let d = self.distance(target);
        if d <= step || d == S::zero() {
            return *target;
        }
        let f = step / d;
        Self {
            x: self.x + (target.x - self.x) * f,
            y: self.y + (target.y - self.y) * f,
        }
    }
}

/// Rectangular world `[0, width) x [0, height)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds<S> {
    pub width: S,
    pub height: S,
}

impl<S: Float> Bounds<S> {
    pub fn contains(&self, p: &Point<S>) -> bool {
        p.x >= S::zero() && p.y >= S::zero() && p.x < self.width && p.y < self.height
    }

    pub fn center(&self) -> Point<S> {
        let two = S::one() + S::one();
        Point::new(self.width / two, self.height / two)
    }
}

/// Whole ticks needed to cover the straight-line distance at `speed` cells per tick.
pub fn travel_time<S: Float>(from: &Point<S>, to: &Point<S>, speed: S) -> Result<Tick, GeometryError> {
    if speed.is_nan() || speed <= S::zero() {
        return Err(GeometryError::NonPositiveSpeed);
    }
    let ticks = (from.distance(to) / speed).ceil();
    Ok(ticks.to_u64().unwrap_or(Tick::MAX))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn travel_time_examples() {
        let o = Point::new(0.0_f64, 0.0);
        assert_eq!(travel_time(&o, &o, 1.0), Ok(0));
        assert_eq!(travel_time(&o, &Point::new(3.0, 4.0), 1.0), Ok(5));
        assert_eq!(travel_time(&o, &Point::new(3.0, 4.0), 2.0), Ok(3));
    }

    #[test]
    fn travel_time_in_single_precision() {
        let o = Point::new(0.0_f32, 0.0);
        assert_eq!(travel_time(&o, &Point::new(3.0, 4.0), 2.0), Ok(3));
    }

    #[test]
    fn rejects_non_positive_speed() {
        let o = Point::new(0.0_f64, 0.0);
        assert_eq!(travel_time(&o, &o, 0.0), Err(GeometryError::NonPositiveSpeed));
        assert_eq!(travel_time(&o, &o, -1.0), Err(GeometryError::NonPositiveSpeed));
        assert_eq!(travel_time(&o, &o, f64::NAN), Err(GeometryError::NonPositiveSpeed));
    }

    #[test]
    fn step_toward_moves_exact_fraction() {
        let p = Point::new(0.0_f64, 0.0).step_toward(&Point::new(6.0, 8.0), 0.5);
        assert!((p.x - 0.3).abs() < 1e-12);
        assert!((p.y - 0.4).abs() < 1e-12);
    }

    fn pt() -> impl Strategy<Value = Point<f64>> {
        (0.0..100.0_f64, 0.0..100.0_f64).prop_map(|(x, y)| Point::new(x, y))
    }

    proptest! {
        #[test]
        fn travel_time_is_symmetric(a in pt(), b in pt(), s in 0.1..5.0_f64) {
            prop_assert_eq!(travel_time(&a, &b, s), travel_time(&b, &a, s));
        }

        #[test]
        fn travel_time_zero_iff_equal(a in pt(), b in pt(), s in 0.1..5.0_f64) {
            let t = travel_time(&a, &b, s).unwrap();
            prop_assert_eq!(t == 0, a == b);
        }

        #[test]
        fn travel_time_triangle_with_rounding(a in pt(), b in pt(), c in pt(), s in 0.1..5.0_f64) {
            let ac = travel_time(&a, &c, s).unwrap();
            let ab = travel_time(&a, &b, s).unwrap();
            let bc = travel_time(&b, &c, s).unwrap();
            prop_assert!(ac <= ab + bc + 1);
        }

        #[test]
        fn step_never_overshoots(a in pt(), b in pt(), s in 0.1..5.0_f64) {
            let n = a.step_toward(&b, s);
            prop_assert!(a.distance(&n) <= s + 1e-9);
            prop_assert!(n.distance(&b) <= a.distance(&b) + 1e-9);
        }
    }
}
