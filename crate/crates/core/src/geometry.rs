//! Planar geometry on the square deployment area.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A point on the deployment area, in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        self.distance_sq(other).sqrt()
    }

    #[inline]
    pub fn distance_sq(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_inside(&self, side: f64) -> bool {
        (0.0..=side).contains(&self.x) && (0.0..=side).contains(&self.y)
    }

    /// Clamps both coordinates into `[0, side]`; absorbs floating-point drift
    /// at the edges.
    pub fn clamped(self, side: f64) -> Self {
        Self {
            x: self.x.clamp(0.0, side),
            y: self.y.clamp(0.0, side),
        }
    }

    /// Moves toward `dest` by `step` meters, never overshooting it.
    pub fn toward(&self, dest: &Position, step: f64) -> Position {
        let d = self.distance(dest);
        if d <= step || d == 0.0 {
            return *dest;
        }
        let f = step / d;
        Position::new(self.x + (dest.x - self.x) * f, self.y + (dest.y - self.y) * f)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3})", self.x, self.y)
    }
}

/// Index of a network node, dense in `[0, N)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Folds a coordinate into `[0, side]` as if it bounced specularly off both
/// walls (a triangle wave of period `2 * side`).
pub fn fold_coordinate(z: f64, side: f64) -> f64 {
    let period = 2.0 * side;
    let m = z.rem_euclid(period);
    let folded = if m > side { period - m } else { m };
    folded.clamp(0.0, side)
}

/// End point of a straight ray of `distance` meters from `origin` at `angle`
/// radians, billiard-folded at every edge of the square.
pub fn fold_ray(origin: Position, angle: f64, distance: f64, side: f64) -> Position {
    let (s, c) = angle.sin_cos();
    Position::new(
        fold_coordinate(origin.x + distance * c, side),
        fold_coordinate(origin.y + distance * s, side),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_single_reflection() {
        let p = fold_ray(Position::new(450.0, 250.0), 0.0, 100.0, 500.0);
        assert!((p.x - 450.0).abs() < 1e-9);
        assert!((p.y - 250.0).abs() < 1e-9);
    }

    #[test]
    fn fold_negative_and_multiple() {
        assert!((fold_coordinate(-30.0, 500.0) - 30.0).abs() < 1e-12);
        assert!((fold_coordinate(1030.0, 500.0) - 30.0).abs() < 1e-12);
        assert!((fold_coordinate(1470.0, 500.0) - 470.0).abs() < 1e-12);
    }

    #[test]
    fn toward_does_not_overshoot() {
        let a = Position::new(0.0, 0.0);
        let b = Position::new(30.0, 0.0);
        assert_eq!(a.toward(&b, 3.0), Position::new(3.0, 0.0));
        assert_eq!(a.toward(&b, 31.0), b);
    }
}
