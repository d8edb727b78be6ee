//! Planar geometry and a few numeric helpers.
//!
//! Everything on the simulation path sticks to `+ - * /` and `sqrt`, which
//! IEEE-754 requires to be correctly rounded. That keeps traces bit-identical
//! across platforms; transcendental functions from the system libm are only
//! used by calibration, which never feeds a replayed episode.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Mul, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn distance(self, other: Point) -> f64 {
        (other - self).norm()
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Rotated by +90 degrees (the "left" of a heading vector).
    pub fn left_normal(self) -> Point {
        Point::new(-self.y, self.x)
    }

    /// Linear interpolation; `num/den` of the way from `self` to `to`.
    pub fn lerp_ratio(self, to: Point, num: u32, den: u32) -> Point {
        if den == 0 || num >= den {
            return to;
        }
        let f = f64::from(num) / f64::from(den);
        self + (to - self) * f
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3})", self.x, self.y)
    }
}

/// Number of whole ticks needed to cover `distance` at `speed`.
///
/// The small slack absorbs representation error so that e.g. 0.5 m at
/// 0.4 m/s with 20 ticks/s is 25 ticks, not 26.
pub fn travel_ticks(distance: f64, speed: f64, ticks_per_second: u32) -> u32 {
    if distance <= 0.0 {
        return 0;
    }
    assert!(speed > 0.0, "travel speed must be positive");
    let exact = distance * f64::from(ticks_per_second) / speed;
    (exact - 1e-9).ceil().max(0.0) as u32
}

/// `base^exp` by repeated squaring.
pub fn powi_exact(base: f64, mut exp: u32) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}

/// The `n`-th root of `value` in `[0, 1]`, by bisection.
///
/// Used to turn a per-second probability into a per-tick one without libm.
pub fn unit_root(value: f64, n: u32) -> f64 {
    assert!((0.0..=1.0).contains(&value), "unit_root expects a value in [0,1]");
    if n <= 1 || value == 0.0 || value == 1.0 {
        return value;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if powi_exact(mid, n) < value {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Per-tick event probability equivalent to a per-second probability `p`.
pub fn per_tick_probability(p_per_second: f64, ticks_per_second: u32) -> f64 {
    1.0 - unit_root(1.0 - p_per_second, ticks_per_second)
}

/// `e^(-x)` for `x >= 0` via range reduction and a fixed Taylor series.
pub fn exp_neg(x: f64) -> f64 {
    assert!(x >= 0.0, "exp_neg expects a non-negative argument");
    let mut halvings = 0u32;
    let mut r = x;
    while r > 0.125 {
        r *= 0.5;
        halvings += 1;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=20 {
        term *= -r / f64::from(k);
        sum += term;
    }
    for _ in 0..halvings {
        sum *= sum;
    }
    sum
}

/// Formats a millimetre quantity as metres with trailing zeros trimmed.
pub fn format_mm_as_m(mm: u32) -> String {
    let whole = mm / 1000;
    let frac = mm % 1000;
    if frac == 0 {
        return whole.to_string();
    }
    let s = format!("{whole}.{frac:03}");
    s.trim_end_matches('0').to_string()
}

/// Parses a metre quantity into whole millimetres.
pub fn parse_m_as_mm(text: &str) -> Option<u32> {
    let v: f64 = text.trim().parse().ok()?;
    if !v.is_finite() || v < 0.0 || v > 4_000_000.0 {
        return None;
    }
    Some((v * 1000.0).round() as u32)
}
