//! Rotation math for head orientation.
//!
//! World frame is right-handed with `+x` forward at zero yaw and `+z` up.
//! Positive yaw turns the head counter-clockwise (toward `+y`).

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm deviation tolerated when accepting quaternions from outside the crate.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Length of the projection onto the ground plane.
    pub fn planar_norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self).scale(t)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// A rotation stored as a normalized quaternion. `q` and `-q` are the same rotation.
#[derive(Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl fmt::Debug for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UnitQuaternion({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Accepts components already on the unit sphere (within [`UNIT_TOLERANCE`])
    /// and renormalizes them if they are off by more than rounding.
    pub fn try_new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Contract(format!(
                "quaternion ({w}, {x}, {y}, {z}) has norm {n}, expected 1"
            )));
        }
        if (n - 1.0).abs() <= 1e-12 {
            // already unit to rounding; keep the bits so serialization round-trips
            return Ok(Self { w, x, y, z });
        }
        Ok(Self { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    /// Normalizes an arbitrary non-zero quaternion.
    pub fn normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::Contract(format!("cannot normalize quaternion with norm {n}")));
        }
        Ok(Self { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    fn renorm(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Self { w: w / n, x: x / n, y: y / n, z: z / n }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if n < 1e-12 {
            return Err(Error::Contract("rotation axis has zero length".into()));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let a = axis.scale(1.0 / n);
        Ok(Self::renorm(c, a.x * s, a.y * s, a.z * s))
    }

    /// Rotation about `+z` by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = (yaw / 2.0).sin_cos();
        Self::renorm(c, 0.0, 0.0, s)
    }

    pub fn from_yaw_degrees(deg: f64) -> Self {
        Self::from_yaw(deg.to_radians())
    }

    /// Yaw-only orientation whose forward axis points along the planar part of `dir`.
    /// Returns `None` when `dir` has no horizontal component.
    pub fn look_along(dir: Vec3) -> Option<Self> {
        if dir.planar_norm() < 1e-9 {
            return None;
        }
        Some(Self::from_yaw(dir.y.atan2(dir.x)))
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, o: &UnitQuaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn neg(&self) -> Self {
        Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn conjugate(&self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Hamilton product `self * o` (apply `o` first, then `self`).
    pub fn compose(&self, o: &UnitQuaternion) -> Self {
        let (a, b) = (self, o);
        Self::renorm(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v).scale(2.0);
        v + t.scale(self.w) + u.cross(t)
    }

    /// Forward (`+x`) axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotate(Vec3::new(1.0, 0.0, 0.0))
    }

    /// Heading of the forward axis projected on the ground plane, in radians.
    pub fn yaw(&self) -> f64 {
        let f = self.forward();
        f.y.atan2(f.x)
    }

    /// True when both quaternions denote the same rotation within `tol` radians.
    pub fn same_rotation(&self, o: &UnitQuaternion, tol: f64) -> bool {
        angular_distance(self, o) <= tol
    }
}

impl Serialize for UnitQuaternion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for UnitQuaternion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        UnitQuaternion::try_new(w, x, y, z).map_err(serde::de::Error::custom)
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;
    fn mul(self, o: UnitQuaternion) -> UnitQuaternion {
        self.compose(&o)
    }
}

/// Constant head-turn speed. Stored in radians per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularRate(f64);

impl AngularRate {
    pub fn from_degrees_per_sec(deg: f64) -> Result<Self> {
        if !(deg.is_finite() && deg > 0.0) {
            return Err(Error::Contract(format!("angular rate must be > 0, got {deg}")));
        }
        Ok(Self(deg.to_radians()))
    }

    pub fn radians_per_sec(&self) -> f64 {
        self.0
    }

    pub fn degrees_per_sec(&self) -> f64 {
        self.0.to_degrees()
    }
}

impl Default for AngularRate {
    fn default() -> Self {
        Self(36f64.to_radians())
    }
}

/// Angle of the relative rotation between `q1` and `q2`: `2·acos(|q1·q2|)`, in `[0, π]`.
pub fn angular_distance(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    // same value as 2·acos(|q1·q2|), without acos losing precision near zero
    let r = q1.conjugate().compose(q2);
    2.0 * (r.x * r.x + r.y * r.y + r.z * r.z).sqrt().atan2(r.w.abs())
}

/// Shortest-arc spherical interpolation. `t` is clamped to `[0, 1]`.
pub fn slerp(q1: &UnitQuaternion, q2: &UnitQuaternion, t: f64) -> UnitQuaternion {
    let t = t.clamp(0.0, 1.0);
    if t == 0.0 {
        return *q1;
    }
    if t == 1.0 {
        return *q2;
    }
    let mut d = q1.dot(q2);
    let mut b = *q2;
    if d < 0.0 {
        d = -d;
        b = b.neg();
    }
    if d > 1.0 - 1e-12 {
        // nearly parallel: nlerp is exact to machine precision here
        return UnitQuaternion::renorm(
            q1.w + (b.w - q1.w) * t,
            q1.x + (b.x - q1.x) * t,
            q1.y + (b.y - q1.y) * t,
            q1.z + (b.z - q1.z) * t,
        );
    }
    let theta = d.min(1.0).acos();
    let s = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / s;
    let wb = (t * theta).sin() / s;
    UnitQuaternion::renorm(
        wa * q1.w + wb * b.w,
        wa * q1.x + wb * b.x,
        wa * q1.y + wb * b.y,
        wa * q1.z + wb * b.z,
    )
}

/// Rotates `current` toward `target` by at most `rate · dt` along the shortest arc.
/// Returns `target` itself once the remaining angle fits within one step.
pub fn step_toward(
    current: &UnitQuaternion,
    target: &UnitQuaternion,
    rate: AngularRate,
    dt: f64,
) -> UnitQuaternion {
    let remaining = angular_distance(current, target);
    let step = rate.radians_per_sec() * dt.max(0.0);
    if remaining <= step {
        return *target;
    }
    slerp(current, target, step / remaining)
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn yaw_deg(d: f64) -> UnitQuaternion {
        UnitQuaternion::from_yaw_degrees(d)
    }

    #[test]
    fn distance_identity_and_double_cover() {
        let q = UnitQuaternion::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.7).unwrap();
        assert!(angular_distance(&q, &q) < 1e-15);
        let id = UnitQuaternion::IDENTITY;
        assert_eq!(angular_distance(&id, &id.neg()), 0.0);
        assert!(angular_distance(&q, &q.neg()) < 1e-15);
    }

    #[test]
    fn distance_quarter_turn() {
        // dot = cos(45°)
        let d = angular_distance(&UnitQuaternion::IDENTITY, &yaw_deg(90.0));
        assert!((d - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn try_new_rejects_non_unit() {
        assert!(UnitQuaternion::try_new(1.0, 0.1, 0.0, 0.0).is_err());
        assert!(UnitQuaternion::try_new(1.0 + 5e-7, 0.0, 0.0, 0.0).is_ok());
        assert!(UnitQuaternion::normalize(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn slerp_examples() {
        let q = yaw_deg(33.0);
        assert!(angular_distance(&slerp(&q, &q, 0.5), &q) < 1e-12);
        let half = slerp(&UnitQuaternion::IDENTITY, &yaw_deg(90.0), 0.5);
        assert!(angular_distance(&half, &yaw_deg(45.0)) < 1e-9);
        assert_eq!(slerp(&UnitQuaternion::IDENTITY, &q, 1.0), q);
    }

    #[test]
    fn slerp_takes_short_arc_across_sign() {
        let a = yaw_deg(10.0);
        let b = yaw_deg(30.0).neg();
        let mid = slerp(&a, &b, 0.5);
        assert!(angular_distance(&mid, &yaw_deg(20.0)) < 1e-9);
    }

    #[test]
    fn step_toward_examples() {
        let rate = AngularRate::default();
        let t = yaw_deg(90.0);
        assert_eq!(step_toward(&t, &t, rate, 0.2), t);
        let s = step_toward(&UnitQuaternion::IDENTITY, &t, rate, 0.2);
        assert!(angular_distance(&s, &yaw_deg(7.2)) < 1e-9);

        let mut cur = UnitQuaternion::IDENTITY;
        let mut ticks = 0;
        while cur != t {
            cur = step_toward(&cur, &t, rate, 0.2);
            ticks += 1;
            assert!(ticks < 100);
        }
        assert_eq!(ticks, 13);
    }

    #[test]
    fn yaw_and_forward_agree() {
        for d in [-170.0, -45.0, 0.0, 12.5, 90.0, 179.0] {
            let q = yaw_deg(d);
            assert!((q.yaw().to_degrees() - d).abs() < 1e-9);
        }
        let q = UnitQuaternion::look_along(Vec3::new(0.0, 3.0, 1.0)).unwrap();
        assert!((q.yaw() - FRAC_PI_2).abs() < 1e-12);
        assert!(UnitQuaternion::look_along(Vec3::new(0.0, 0.0, 1.0)).is_none());
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * PI / 2.0) - FRAC_PI_2).abs() < 1e-12);
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| UnitQuaternion::normalize(w, x, y, z).unwrap())
    }

    proptest! {
        #[test]
        fn metric_properties(a in arb_quat(), b in arb_quat(), r in arb_quat()) {
            let d = angular_distance(&a, &b);
            prop_assert!((d - angular_distance(&b, &a)).abs() < 1e-12);
            prop_assert!((0.0..=PI).contains(&d));
            // left-invariance
            let d2 = angular_distance(&(r * a), &(r * b));
            prop_assert!((d - d2).abs() < 1e-6);
        }

        #[test]
        fn slerp_stays_unit(a in arb_quat(), b in arb_quat(), t in 0.0f64..1.0) {
            prop_assert!((slerp(&a, &b, t).norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn step_never_overshoots(a in arb_quat(), b in arb_quat(), dt in 0.0f64..1.0) {
            let rate = AngularRate::default();
            let before = angular_distance(&a, &b);
            let after = angular_distance(&step_toward(&a, &b, rate, dt), &b);
            let bound = (before - rate.radians_per_sec() * dt).max(0.0) + 1e-6;
            prop_assert!(after <= bound);
        }
    }
}
