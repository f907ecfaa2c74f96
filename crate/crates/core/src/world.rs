//! Scene model, body-trajectory replay, visibility queries and the semantic
//! raster that stands in for the agent's view image.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{slerp, UnitQuaternion, Vec3};

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::from_array(a)
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Hazard,
    Social,
    Novel,
    GoalRelevant,
    StaticBackground,
}

impl Tag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tag::Hazard => "hazard",
            Tag::Social => "social",
            Tag::Novel => "novel",
            Tag::GoalRelevant => "goal_relevant",
            Tag::StaticBackground => "static_background",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "MDC")]
    Mdc,
    #[serde(rename = "APC")]
    Apc,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Mdc => "MDC",
            Condition::Apc => "APC",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    #[serde(with = "vec3_array")]
    pub position: Vec3,
}

/// A world object or pedestrian.
///
/// Motion is piecewise linear through `waypoints` when any are given (held at
/// the end points outside their time span), otherwise `position + velocity·t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(with = "vec3_array", default)]
    pub position: Vec3,
    #[serde(with = "vec3_array")]
    pub extents: Vec3,
    #[serde(with = "vec3_array", default, skip_serializing_if = "is_zero")]
    pub velocity: Vec3,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<Waypoint>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub tags: BTreeSet<Tag>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub hint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appear_at: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vanish_at: Option<f64>,
}

fn is_zero(v: &Vec3) -> bool {
    *v == Vec3::ZERO
}

mod vec3_array {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        v.to_array().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        <[f64; 3]>::deserialize(d).map(Vec3::from_array)
    }
}

impl Entity {
    /// Minimal static entity; mostly useful in tests and examples.
    pub fn new(id: &str, class_label: &str, position: Vec3, extents: Vec3) -> Self {
        Self {
            id: id.to_string(),
            class_label: class_label.to_string(),
            position,
            extents,
            velocity: Vec3::ZERO,
            waypoints: Vec::new(),
            tags: BTreeSet::new(),
            hint: String::new(),
            appear_at: None,
            vanish_at: None,
        }
    }

    pub fn with_tags(mut self, tags: &[Tag]) -> Self {
        self.tags.extend(tags.iter().copied());
        self
    }

    pub fn with_velocity(mut self, v: Vec3) -> Self {
        self.velocity = v;
        self
    }

    pub fn active_at(&self, t: f64) -> bool {
        self.appear_at.is_none_or(|a| t >= a) && self.vanish_at.is_none_or(|v| t < v)
    }

    pub fn position_at(&self, t: f64) -> Vec3 {
        match self.waypoints.as_slice() {
            [] => self.position + self.velocity.scale(t),
            [only] => only.position,
            wps => {
                if t <= wps[0].t {
                    return wps[0].position;
                }
                let last = &wps[wps.len() - 1];
                if t >= last.t {
                    return last.position;
                }
                let i = wps.partition_point(|w| w.t <= t) - 1;
                let (a, b) = (&wps[i], &wps[i + 1]);
                a.position.lerp(b.position, (t - a.t) / (b.t - a.t))
            }
        }
    }

    pub fn velocity_at(&self, t: f64) -> Vec3 {
        match self.waypoints.as_slice() {
            [] => self.velocity,
            [_] => Vec3::ZERO,
            wps => {
                if t < wps[0].t || t >= wps[wps.len() - 1].t {
                    return Vec3::ZERO;
                }
                let i = wps.partition_point(|w| w.t <= t) - 1;
                let (a, b) = (&wps[i], &wps[i + 1]);
                (b.position - a.position).scale(1.0 / (b.t - a.t))
            }
        }
    }

    fn snapshot(&self, position: Vec3, velocity: Vec3, is_agent: bool) -> EntitySnapshot {
        EntitySnapshot {
            id: self.id.clone(),
            class_label: self.class_label.clone(),
            tags: self.tags.clone(),
            position,
            velocity,
            extents: self.extents,
            hint: self.hint.clone(),
            is_agent,
        }
    }
}

/// State of an entity at one instant, as seen by perception and stored in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySnapshot {
    pub id: String,
    pub class_label: String,
    pub tags: BTreeSet<Tag>,
    #[serde(with = "vec3_array")]
    pub position: Vec3,
    #[serde(with = "vec3_array")]
    pub velocity: Vec3,
    #[serde(with = "vec3_array")]
    pub extents: Vec3,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub hint: String,
    pub is_agent: bool,
}

impl EntitySnapshot {
    pub fn has(&self, tag: Tag) -> bool {
        self.tags.contains(&tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub text: String,
    #[serde(with = "vec3_array")]
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub condition: Condition,
    pub goal: Goal,
    pub entities: Vec<Entity>,
    /// Pedestrians; they appear in views like entities but count as agents.
    pub agents: Vec<Entity>,
}

impl Scene {
    pub fn new(name: &str, condition: Condition, goal: Goal) -> Self {
        Self { name: name.to_string(), condition, goal, entities: Vec::new(), agents: Vec::new() }
    }

    /// Checks id uniqueness, extents and waypoint ordering.
    pub fn validate(&self) -> Result<()> {
        if self.goal.text.trim().is_empty() {
            return Err(Error::schema("goal.text", "must not be empty"));
        }
        if !self.goal.position.is_finite() {
            return Err(Error::schema("goal.position", "must be finite"));
        }
        let mut seen = HashSet::new();
        let all = self
            .entities
            .iter()
            .enumerate()
            .map(|(i, e)| (format!("entities[{i}]"), e))
            .chain(self.agents.iter().enumerate().map(|(i, e)| (format!("agents[{i}]"), e)));
        for (path, e) in all {
            if e.id.is_empty() {
                return Err(Error::schema(format!("{path}.id"), "must not be empty"));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::schema(format!("{path}.id"), format!("duplicate id {:?}", e.id)));
            }
            let ex = e.extents;
            if !(ex.is_finite() && ex.x >= 0.0 && ex.y >= 0.0 && ex.z >= 0.0) {
                return Err(Error::schema(format!("{path}.extents"), "must be finite and non-negative"));
            }
            if !e.position.is_finite() || !e.velocity.is_finite() {
                return Err(Error::schema(format!("{path}.position"), "must be finite"));
            }
            for (k, w) in e.waypoints.windows(2).enumerate() {
                if w[1].t <= w[0].t {
                    return Err(Error::schema(
                        format!("{path}.waypoints[{}].t", k + 1),
                        "timestamps must be strictly increasing",
                    ));
                }
            }
            if let (Some(a), Some(v)) = (e.appear_at, e.vanish_at) {
                if v <= a {
                    return Err(Error::schema(format!("{path}.vanish_at"), "must follow appear_at"));
                }
            }
        }
        Ok(())
    }

    pub fn all_entities(&self) -> impl Iterator<Item = (&Entity, bool)> {
        self.entities.iter().map(|e| (e, false)).chain(self.agents.iter().map(|e| (e, true)))
    }

    pub fn find(&self, id: &str) -> Option<&Entity> {
        self.all_entities().map(|(e, _)| e).find(|e| e.id == id)
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.all_entities().map(|(e, _)| e.id.clone()).collect()
    }

    /// Every active entity at time `t`.
    pub fn snapshot_at(&self, t: f64) -> Vec<EntitySnapshot> {
        self.all_entities()
            .filter(|(e, _)| e.active_at(t))
            .map(|(e, agent)| e.snapshot(e.position_at(t), e.velocity_at(t), agent))
            .collect()
    }

    /// Scene state predicted `horizon` seconds after `t_from` by extrapolating each
    /// entity's velocity at `t_from` (or at its appearance, if later).
    pub fn predicted_snapshot(&self, t_from: f64, horizon: f64) -> Vec<EntitySnapshot> {
        let t_pred = t_from + horizon;
        self.all_entities()
            .filter(|(e, _)| e.active_at(t_pred))
            .map(|(e, agent)| {
                let base = e.appear_at.map_or(t_from, |a| a.max(t_from));
                let v = e.velocity_at(base);
                e.snapshot(e.position_at(base) + v.scale(t_pred - base), v, agent)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: f64,
    pub position: Vec3,
    pub heading: UnitQuaternion,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: Vec3,
    pub heading: UnitQuaternion,
}

/// Time-ordered body poses of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyTrajectory {
    samples: Vec<TrajectorySample>,
}

pub const DEFAULT_WALKING_SPEED: f64 = 1.3;

impl BodyTrajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::schema("samples", "trajectory needs at least one sample"));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(Error::schema(
                    format!("samples[{}].t", i + 1),
                    "timestamps must be strictly increasing",
                ));
            }
        }
        for (i, s) in samples.iter().enumerate() {
            if (s.heading.norm() - 1.0).abs() > 1e-9 || !s.position.is_finite() {
                return Err(Error::schema(format!("samples[{i}]"), "invalid heading or position"));
            }
        }
        Ok(Self { samples })
    }

    /// Replays a polyline at constant `speed`, sampled every `dt` seconds from `t0`
    /// (plus the exact end point). Body heading follows the segment direction.
    pub fn from_path(points: &[Vec3], speed: f64, t0: f64, dt: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::schema("path", "needs at least two points"));
        }
        if !(speed > 0.0 && dt > 0.0) {
            return Err(Error::schema("speed", "speed and dt must be positive"));
        }
        let mut cum = vec![0.0];
        for w in points.windows(2) {
            let d = (w[1] - w[0]).norm();
            if d < 1e-9 {
                return Err(Error::schema("path", "consecutive points must differ"));
            }
            cum.push(cum.last().unwrap() + d);
        }
        let total = *cum.last().unwrap();
        let duration = total / speed;
        let seg_heading = |i: usize| {
            UnitQuaternion::look_along(points[i + 1] - points[i]).unwrap_or(UnitQuaternion::IDENTITY)
        };
        let locate = |s: f64| {
            let i = (cum.partition_point(|&c| c <= s).max(1) - 1).min(points.len() - 2);
            let f = ((s - cum[i]) / (cum[i + 1] - cum[i])).clamp(0.0, 1.0);
            (points[i].lerp(points[i + 1], f), seg_heading(i))
        };
        let n = (duration / dt + 1e-9).floor() as usize;
        let mut samples = Vec::with_capacity(n + 2);
        for k in 0..=n {
            let local = k as f64 * dt;
            let (p, h) = locate(local * speed);
            samples.push(TrajectorySample { t: t0 + local, position: p, heading: h });
        }
        if duration - n as f64 * dt > 1e-9 {
            samples.push(TrajectorySample {
                t: t0 + duration,
                position: points[points.len() - 1],
                heading: seg_heading(points.len() - 2),
            });
        }
        Self::new(samples)
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn pose_at(&self, t: f64) -> Result<Pose> {
        const EPS: f64 = 1e-9;
        let (start, end) = (self.start(), self.end());
        if !(t >= start - EPS && t <= end + EPS) {
            return Err(Error::OutOfBounds { t, start, end });
        }
        let t = t.clamp(start, end);
        let s = &self.samples;
        if s.len() == 1 {
            return Ok(Pose { t, position: s[0].position, heading: s[0].heading, velocity: Vec3::ZERO });
        }
        let i = (s.partition_point(|x| x.t <= t).max(1) - 1).min(s.len() - 2);
        let (a, b) = (&s[i], &s[i + 1]);
        let f = (t - a.t) / (b.t - a.t);
        let (position, heading) = if f <= 0.0 {
            (a.position, a.heading)
        } else if f >= 1.0 {
            (b.position, b.heading)
        } else {
            (a.position.lerp(b.position, f), slerp(&a.heading, &b.heading, f))
        };
        let velocity = (b.position - a.position).scale(1.0 / (b.t - a.t));
        Ok(Pose { t, position, heading, velocity })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FovParams {
    pub horizontal_fov: f64,
    pub vertical_fov: f64,
    pub max_range: f64,
    pub width: usize,
    pub height: usize,
    pub eye_height: f64,
}

impl Default for FovParams {
    fn default() -> Self {
        Self { horizontal_fov: 100.0, vertical_fov: 80.0, max_range: 40.0, width: 64, height: 64, eye_height: 1.6 }
    }
}

impl FovParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("horizontal_fov", self.horizontal_fov), ("vertical_fov", self.vertical_fov)] {
            if !(v > 0.0 && v < 180.0) {
                return Err(Error::schema(format!("fov.{name}"), "must lie in (0, 180) degrees"));
            }
        }
        if !(self.max_range > 0.0) {
            return Err(Error::schema("fov.max_range", "must be positive"));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::schema("fov.width", "raster must be at least 16x16"));
        }
        Ok(())
    }

    pub fn eye(&self, body: Vec3) -> Vec3 {
        body + Vec3::new(0.0, 0.0, self.eye_height)
    }
}

/// An entity seen from the agent's eye. `bearing` is the horizontal angle in
/// the head frame (radians, positive to the left); `range` is the 3D distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sighting {
    pub entity: EntitySnapshot,
    pub bearing: f64,
    pub range: f64,
}

/// Entry/exit ray parameters of `origin + s·dir` through an axis-aligned box.
fn ray_box(origin: Vec3, dir: Vec3, center: Vec3, extents: Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (o, d, c, e) in [
        (origin.x, dir.x, center.x, extents.x),
        (origin.y, dir.y, center.y, extents.y),
        (origin.z, dir.z, center.z, extents.z),
    ] {
        let (lo, hi) = (c - e, c + e);
        if d.abs() < 1e-15 {
            if o < lo || o > hi {
                return None;
            }
        } else {
            let (mut a, mut b) = ((lo - o) / d, (hi - o) / d);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((t0, t1))
}

fn contains(point: Vec3, center: Vec3, extents: Vec3) -> bool {
    (point.x - center.x).abs() <= extents.x
        && (point.y - center.y).abs() <= extents.y
        && (point.z - center.z).abs() <= extents.z
}

/// Bearing and elevation of `target` in the head frame.
fn head_angles(eye: Vec3, head: &UnitQuaternion, target: Vec3) -> (f64, f64) {
    let local = head.conjugate().rotate(target - eye);
    (local.y.atan2(local.x), local.z.atan2(local.planar_norm()))
}

/// True when `point` lies inside the view cone and within range.
pub fn in_view(eye: Vec3, head: &UnitQuaternion, fov: &FovParams, point: Vec3) -> bool {
    let range = (point - eye).norm();
    if range > fov.max_range {
        return false;
    }
    let (b, e) = head_angles(eye, head, point);
    b.abs() <= fov.horizontal_fov.to_radians() / 2.0 && e.abs() <= fov.vertical_fov.to_radians() / 2.0
}

/// Visibility over a precomputed set of snapshots. Entities whose box contains
/// the eye never occlude.
pub fn visible_in(snapshots: &[EntitySnapshot], eye: Vec3, head: &UnitQuaternion, fov: &FovParams) -> Vec<Sighting> {
    let mut out = Vec::new();
    for (i, s) in snapshots.iter().enumerate() {
        let dir = s.position - eye;
        let range = dir.norm();
        if range > fov.max_range || range < 1e-9 {
            continue;
        }
        let (bearing, elevation) = head_angles(eye, head, s.position);
        if bearing.abs() > fov.horizontal_fov.to_radians() / 2.0
            || elevation.abs() > fov.vertical_fov.to_radians() / 2.0
        {
            continue;
        }
        let own_entry = if contains(eye, s.position, s.extents) {
            0.0
        } else {
            ray_box(eye, dir, s.position, s.extents).map_or(1.0, |(a, _)| a.max(0.0))
        };
        let occluded = snapshots.iter().enumerate().any(|(j, o)| {
            j != i
                && !contains(eye, o.position, o.extents)
                && ray_box(eye, dir, o.position, o.extents).is_some_and(|(a, b)| a >= 0.0 && a < own_entry && b > 0.0)
        });
        if !occluded {
            out.push(Sighting { entity: s.clone(), bearing, range });
        }
    }
    out.sort_by(|a, b| a.range.total_cmp(&b.range).then_with(|| a.entity.id.cmp(&b.entity.id)));
    out
}

/// Entities whose center ray falls inside the view cone, within range and not
/// blocked by a closer box. Sorted by range.
pub fn visible_entities(scene: &Scene, body: &Pose, head: &UnitQuaternion, fov: &FovParams, t: f64) -> Vec<Sighting> {
    visible_in(&scene.snapshot_at(t), fov.eye(body.position), head, fov)
}

/// Single-channel 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }
}

/// Stable label intensity in `1..=255`; 0 is reserved for background.
pub fn label_intensity(label: &str) -> u8 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    1 + (h % 255) as u8
}

pub fn render_in(snapshots: &[EntitySnapshot], eye: Vec3, head: &UnitQuaternion, fov: &FovParams) -> Raster {
    let (w, h) = (fov.width, fov.height);
    let hfov = fov.horizontal_fov.to_radians();
    let vfov = fov.vertical_fov.to_radians();
    let boxes: Vec<(Vec3, Vec3, u8)> = snapshots
        .iter()
        .filter(|s| !contains(eye, s.position, s.extents))
        .filter(|s| (s.position - eye).norm() - s.extents.norm() <= fov.max_range)
        .map(|s| (s.position, s.extents, label_intensity(&s.class_label)))
        .collect();
    let mut r = Raster::zeros(w, h);
    if boxes.is_empty() {
        return r;
    }
    for y in 0..h {
        let pitch = vfov * (0.5 - (y as f64 + 0.5) / h as f64);
        for x in 0..w {
            let yaw = hfov * (0.5 - (x as f64 + 0.5) / w as f64);
            let local = Vec3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin());
            let dir = head.rotate(local);
            let mut best = f64::INFINITY;
            let mut val = 0u8;
            for &(c, e, v) in &boxes {
                if let Some((a, b)) = ray_box(eye, dir, c, e) {
                    if a >= 0.0 && b >= a && a <= fov.max_range && a < best {
                        best = a;
                        val = v;
                    }
                }
            }
            r.data[y * w + x] = val;
        }
    }
    r
}

/// Grayscale view where each cell holds the label intensity of the nearest hit
/// entity. Deterministic for a given scene, pose and time.
pub fn render_semantic_raster(scene: &Scene, body: &Pose, head: &UnitQuaternion, fov: &FovParams, t: f64) -> Raster {
    render_in(&scene.snapshot_at(t), fov.eye(body.position), head, fov)
}

/// Wraps a bearing to a readable signed degree value.
pub fn bearing_degrees(b: f64) -> f64 {
    let d = b.to_degrees();
    if d > 180.0 {
        d - 360.0
    } else if d <= -180.0 {
        d + 360.0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn origin_pose() -> Pose {
        Pose { t: 0.0, position: Vec3::ZERO, heading: UnitQuaternion::IDENTITY, velocity: Vec3::ZERO }
    }

    fn scene_with(entities: Vec<Entity>) -> Scene {
        let mut s = Scene::new(
            "t",
            Condition::Mdc,
            Goal { text: "walk".into(), position: Vec3::new(50.0, 0.0, 0.0) },
        );
        s.entities = entities;
        s
    }

    fn ent(id: &str, x: f64, y: f64, size: f64) -> Entity {
        Entity::new(id, "box", Vec3::new(x, y, 1.6), Vec3::new(size, size, size))
    }

    #[test]
    fn pose_at_knots_and_midpoints() {
        let traj = BodyTrajectory::from_path(&[Vec3::ZERO, Vec3::new(13.0, 0.0, 0.0)], 1.3, 0.0, 0.2).unwrap();
        assert!((traj.duration() - 10.0).abs() < 1e-9);
        let p = traj.pose_at(5.0).unwrap();
        assert!((p.position.x - 6.5).abs() < 1e-9);
        let s = traj.samples()[3];
        assert_eq!(traj.pose_at(s.t).unwrap().position, s.position);
        assert!(traj.pose_at(10.5).is_err());
        assert!(traj.pose_at(-0.1).is_err());

        let two = BodyTrajectory::new(vec![
            TrajectorySample { t: 0.0, position: Vec3::ZERO, heading: UnitQuaternion::IDENTITY },
            TrajectorySample { t: 1.0, position: Vec3::new(1.0, 0.0, 0.0), heading: UnitQuaternion::IDENTITY },
        ])
        .unwrap();
        assert!((two.pose_at(0.5).unwrap().position.x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trajectory_rejects_unordered_samples() {
        let s = TrajectorySample { t: 1.0, position: Vec3::ZERO, heading: UnitQuaternion::IDENTITY };
        assert!(BodyTrajectory::new(vec![s, s]).is_err());
    }

    #[test]
    fn on_axis_entity_visible() {
        let scene = scene_with(vec![ent("a", 5.0, 0.0, 0.3)]);
        let v = visible_entities(&scene, &origin_pose(), &UnitQuaternion::IDENTITY, &FovParams::default(), 0.0);
        assert_eq!(v.len(), 1);
        assert!(v[0].bearing.abs() < 1e-12);
        assert!((v[0].range - 5.0).abs() < 1e-12);
    }

    #[test]
    fn entity_outside_cone_excluded() {
        let b = 100f64.to_radians();
        let scene = scene_with(vec![ent("a", 5.0 * b.cos(), 5.0 * b.sin(), 0.3)]);
        let fov = FovParams { horizontal_fov: 90.0, ..FovParams::default() };
        assert!(visible_entities(&scene, &origin_pose(), &UnitQuaternion::IDENTITY, &fov, 0.0).is_empty());
    }

    /// Independent check: sample points along the center ray and test box membership.
    fn brute_occluded(eye: Vec3, target: &Entity, others: &[Entity]) -> bool {
        let steps = 20_000;
        let dir = target.position - eye;
        for k in 1..steps {
            let p = eye + dir.scale(k as f64 / steps as f64);
            if contains(p, target.position, target.extents) {
                return false;
            }
            if others.iter().any(|o| o.id != target.id && contains(p, o.position, o.extents)) {
                return true;
            }
        }
        false
    }

    #[test]
    fn occlusion_matches_brute_force() {
        let wall = ent("wall", 4.0, 0.0, 1.0);
        let hidden = ent("hidden", 10.0, 0.0, 0.3);
        let side = ent("side", 10.0, 5.0, 0.3);
        let all = vec![wall.clone(), hidden.clone(), side.clone()];
        let scene = scene_with(all.clone());
        let eye = FovParams::default().eye(Vec3::ZERO);
        let v = visible_entities(&scene, &origin_pose(), &UnitQuaternion::IDENTITY, &FovParams::default(), 0.0);
        let ids: Vec<_> = v.iter().map(|s| s.entity.id.as_str()).collect();
        for e in &all {
            assert_eq!(ids.contains(&e.id.as_str()), !brute_occluded(eye, e, &all), "{}", e.id);
        }
        assert_eq!(ids, vec!["wall", "side"]);
    }

    #[test]
    fn raster_examples() {
        let fov = FovParams::default();
        let empty = scene_with(vec![]);
        assert!(render_semantic_raster(&empty, &origin_pose(), &UnitQuaternion::IDENTITY, &fov, 0.0).is_blank());

        let scene = scene_with(vec![ent("a", 6.0, 0.0, 1.0)]);
        let r1 = render_semantic_raster(&scene, &origin_pose(), &UnitQuaternion::IDENTITY, &fov, 0.0);
        let r2 = render_semantic_raster(&scene, &origin_pose(), &UnitQuaternion::IDENTITY, &fov, 0.0);
        assert_eq!(r1, r2);
        assert!(!r1.is_blank());
        let back = UnitQuaternion::from_yaw_degrees(180.0);
        assert!(render_semantic_raster(&scene, &origin_pose(), &back, &fov, 0.0).is_blank());
    }

    #[test]
    fn waypoint_motion_and_activity() {
        let mut e = ent("p", 0.0, 0.0, 0.3);
        e.waypoints = vec![
            Waypoint { t: 0.0, position: Vec3::ZERO },
            Waypoint { t: 2.0, position: Vec3::new(2.0, 0.0, 0.0) },
        ];
        e.appear_at = Some(1.0);
        assert!(!e.active_at(0.5));
        assert!(e.active_at(1.0));
        assert_eq!(e.position_at(1.0), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(e.velocity_at(1.0), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(e.position_at(5.0), Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(e.velocity_at(5.0), Vec3::ZERO);
    }

    #[test]
    fn predicted_snapshot_extrapolates() {
        let e = ent("car", 0.0, 0.0, 1.0).with_velocity(Vec3::new(3.0, 0.0, 0.0));
        let scene = scene_with(vec![e]);
        let p = scene.predicted_snapshot(1.0, 2.0);
        assert!((p[0].position.x - 9.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_duplicates() {
        let scene = scene_with(vec![ent("a", 1.0, 0.0, 0.1), ent("a", 2.0, 0.0, 0.1)]);
        let err = scene.validate().unwrap_err();
        assert_eq!(err.field(), Some("entities[1].id"));
    }

    fn arb_entities() -> impl Strategy<Value = Vec<Entity>> {
        prop::collection::vec((1.0f64..30.0, -20.0f64..20.0, 0.1f64..2.0), 1..8).prop_map(|v| {
            v.into_iter().enumerate().map(|(i, (x, y, s))| ent(&format!("e{i}"), x, y, s)).collect()
        })
    }

    proptest! {
        #[test]
        fn widening_fov_never_removes(es in arb_entities(), narrow in 20.0f64..100.0, extra in 0.0f64..60.0) {
            let scene = scene_with(es);
            let a = FovParams { horizontal_fov: narrow, ..FovParams::default() };
            let b = FovParams { horizontal_fov: (narrow + extra).min(179.0), ..FovParams::default() };
            let ids = |f: &FovParams| visible_entities(&scene, &origin_pose(), &UnitQuaternion::IDENTITY, f, 0.0)
                .into_iter().map(|s| s.entity.id).collect::<BTreeSet<_>>();
            prop_assert!(ids(&a).is_subset(&ids(&b)));
        }

        #[test]
        fn occlusion_order_independent(es in arb_entities(), seed in 0usize..1000) {
            let fov = FovParams::default();
            let v1 = visible_entities(&scene_with(es.clone()), &origin_pose(), &UnitQuaternion::IDENTITY, &fov, 0.0);
            let mut shuffled = es;
            let n = shuffled.len();
            shuffled.rotate_left(seed % n);
            shuffled.reverse();
            let v2 = visible_entities(&scene_with(shuffled), &origin_pose(), &UnitQuaternion::IDENTITY, &fov, 0.0);
            prop_assert_eq!(v1, v2);
        }

        #[test]
        fn pose_is_continuous(t in 0.0f64..9.99) {
            let traj = BodyTrajectory::from_path(
                &[Vec3::ZERO, Vec3::new(6.0, 0.0, 0.0), Vec3::new(6.0, 7.0, 0.0)], 1.3, 0.0, 0.2).unwrap();
            let a = traj.pose_at(t).unwrap();
            let b = traj.pose_at(t + 1e-7).unwrap();
            prop_assert!((a.position - b.position).norm() < 1e-5);
        }
    }
}
