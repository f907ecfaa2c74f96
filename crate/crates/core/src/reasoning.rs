//! Reasoning backends: the symbolic driver oracle and an HTTP client for remote models.
//!
//! Every remote call has an oracle fallback, so a pipeline always runs to completion.
//! Results that came from a fallback carry a flag so logs can tell them apart.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, UnitQuaternion, Vec3};
use crate::memory::{ActionReason, Description, Driver, Fmm, MemoryEntry, RelevanceScorer, Target};
use crate::perception::Observation;
use crate::world::{bearing_degrees, visible_in, EntitySnapshot, FovParams, Goal, Pose, Sighting, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverSet {
    pub safety: bool,
    pub information_seeking: bool,
    pub social_schema: bool,
    pub interest: bool,
    pub habit: bool,
}

impl Default for DriverSet {
    fn default() -> Self {
        Self::all()
    }
}

impl DriverSet {
    pub fn all() -> Self {
        Self { safety: true, information_seeking: true, social_schema: true, interest: true, habit: true }
    }

    pub fn none() -> Self {
        Self { safety: false, information_seeking: false, social_schema: false, interest: false, habit: false }
    }

    fn slot(&mut self, d: Driver) -> &mut bool {
        match d {
            Driver::Safety => &mut self.safety,
            Driver::InformationSeeking => &mut self.information_seeking,
            Driver::SocialSchema => &mut self.social_schema,
            Driver::Interest => &mut self.interest,
            Driver::Habit => &mut self.habit,
        }
    }

    pub fn set(&mut self, d: Driver, on: bool) {
        *self.slot(d) = on;
    }

    pub fn without(mut self, d: Driver) -> Self {
        self.set(d, false);
        self
    }

    pub fn is_enabled(&self, d: Driver) -> bool {
        match d {
            Driver::Safety => self.safety,
            Driver::InformationSeeking => self.information_seeking,
            Driver::SocialSchema => self.social_schema,
            Driver::Interest => self.interest,
            Driver::Habit => self.habit,
        }
    }

    pub fn enabled(&self) -> Vec<Driver> {
        Driver::ALL.into_iter().filter(|d| self.is_enabled(*d)).collect()
    }
}

/// Thresholds used by the oracle predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleParams {
    /// Hazards closer than this (meters) trigger Safety.
    pub hazard_range: f64,
    /// Predicted miss distance (meters) that counts as a conflict.
    pub collision_radius: f64,
    /// How far ahead (seconds) conflicts are predicted.
    pub collision_horizon: f64,
    /// Entities slower than this (m/s) are treated as stationary.
    pub moving_speed: f64,
    /// Width (degrees) of the heading arc that defines a pedestrian flow.
    pub flow_cone_deg: f64,
    pub flow_min_agents: usize,
    /// Quiet time (seconds) before a Habit scan.
    pub habit_period: f64,
    pub habit_sweep_deg: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            hazard_range: 15.0,
            collision_radius: 2.0,
            collision_horizon: 4.0,
            moving_speed: 0.1,
            flow_cone_deg: 30.0,
            flow_min_agents: 3,
            habit_period: 4.0,
            habit_sweep_deg: 30.0,
        }
    }
}

/// A chosen action before it is numbered and stamped by the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub driver: Driver,
    pub target: Target,
    pub subjects: Vec<String>,
    pub rationale: String,
}

impl Proposal {
    pub fn into_action(self, id: u64, issued_at: f64) -> ActionReason {
        ActionReason {
            id,
            target: self.target,
            driver: self.driver,
            rationale: self.rationale,
            issued_at,
            subjects: self.subjects,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Keep,
    Replace(Proposal),
    /// The planned target is gone and nothing else is worth looking at.
    Cancel,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Keep => "keep",
            Verdict::Replace(_) => "replace",
            Verdict::Cancel => "cancel",
        }
    }
}

/// Facts the oracle reads from memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryFacts {
    /// Entities already targeted or otherwise attended to.
    pub attended: BTreeSet<String>,
    /// The goal was seen, or a look toward it was already planned.
    pub goal_sought: bool,
    pub last_action_t: Option<f64>,
    pub habit_count: usize,
}

impl MemoryFacts {
    pub fn from_fmm(fmm: &Fmm) -> Self {
        Self {
            attended: fmm.attended(),
            goal_sought: fmm.goal_observed()
                || fmm.actions().any(|a| a.driver == Driver::InformationSeeking && a.subjects.is_empty()),
            last_action_t: fmm.last_action_time(),
            habit_count: fmm.count_driver(Driver::Habit),
        }
    }
}

/// Everything the oracle sees when choosing an action.
#[derive(Debug, Clone)]
pub struct OracleView<'a> {
    pub t: f64,
    pub pose: Pose,
    pub eye: Vec3,
    pub goal: &'a Goal,
    /// Entities available as targets (visible now, or reachable in a prediction).
    pub entities: &'a [EntitySnapshot],
    pub goal_in_view: bool,
    pub memory: &'a MemoryFacts,
}

impl OracleView<'_> {
    fn range(&self, e: &EntitySnapshot) -> f64 {
        (e.position - self.eye).norm()
    }

    /// Nearest entity passing `keep`, ties broken by id.
    fn nearest(&self, keep: impl Fn(&EntitySnapshot) -> bool) -> Option<&EntitySnapshot> {
        self.entities
            .iter()
            .filter(|e| keep(e))
            .min_by(|a, b| self.range(a).total_cmp(&self.range(b)).then_with(|| a.id.cmp(&b.id)))
    }

    fn entity_proposal(&self, driver: Driver, e: &EntitySnapshot, why: &str) -> Proposal {
        Proposal {
            driver,
            target: Target::Entity(e.id.clone()),
            subjects: vec![e.id.clone()],
            rationale: format!("{why}: {} {} at {:.1} m", e.class_label, e.id, self.range(e)),
        }
    }
}

fn is_mover(e: &EntitySnapshot, p: &OracleParams) -> bool {
    e.velocity.planar_norm() > p.moving_speed
}

/// Closest planar approach between the agent and `e` within the horizon,
/// both moving at constant velocity.
fn closest_approach(view: &OracleView, e: &EntitySnapshot, horizon: f64) -> f64 {
    let p = e.position - view.pose.position;
    let v = e.velocity - view.pose.velocity;
    let (px, py, vx, vy) = (p.x, p.y, v.x, v.y);
    let vv = vx * vx + vy * vy;
    let s = if vv < 1e-12 { 0.0 } else { (-(px * vx + py * vy) / vv).clamp(0.0, horizon) };
    (px + vx * s).hypot(py + vy * s)
}

fn fresh(e: &EntitySnapshot, view: &OracleView, known: Option<&BTreeSet<String>>) -> bool {
    !view.memory.attended.contains(&e.id) && known.is_none_or(|k| !k.contains(&e.id))
}

/// Evaluates one predicate. With `known` set, entity predicates only fire on
/// entities outside `known`, and the goal-direction and Habit rules are skipped.
fn predicate(d: Driver, view: &OracleView, p: &OracleParams, known: Option<&BTreeSet<String>>) -> Option<Proposal> {
    match d {
        Driver::Safety => {
            let e = view.nearest(|e| {
                fresh(e, view, known)
                    && ((e.has(Tag::Hazard) && view.range(e) < p.hazard_range)
                        || (is_mover(e, p) && closest_approach(view, e, p.collision_horizon) < p.collision_radius))
            })?;
            let why = if e.has(Tag::Hazard) { "hazard nearby" } else { "on a collision course" };
            Some(view.entity_proposal(d, e, why))
        }
        Driver::InformationSeeking => {
            if known.is_none() && !view.goal_in_view && !view.memory.goal_sought {
                if let Some(q) = UnitQuaternion::look_along(view.goal.position - view.pose.position) {
                    return Some(Proposal {
                        driver: d,
                        target: Target::Orientation(q),
                        subjects: Vec::new(),
                        rationale: format!("looking for the goal: {}", view.goal.text),
                    });
                }
            }
            let e = view.nearest(|e| fresh(e, view, known) && e.has(Tag::GoalRelevant))?;
            Some(view.entity_proposal(d, e, "relevant to the goal"))
        }
        Driver::SocialSchema => social_flow(view, p, known),
        Driver::Interest => {
            let e = view.nearest(|e| fresh(e, view, known) && e.has(Tag::Novel))?;
            Some(view.entity_proposal(d, e, "unusual sight"))
        }
        Driver::Habit => {
            if known.is_some() {
                return None;
            }
            if view.memory.last_action_t.is_some_and(|last| view.t - last < p.habit_period - 1e-9) {
                return None;
            }
            let sign = if view.memory.habit_count.is_multiple_of(2) { 1.0 } else { -1.0 };
            Some(habit_sweep(view.pose.heading, sign, p))
        }
    }
}

fn habit_sweep(heading: UnitQuaternion, sign: f64, p: &OracleParams) -> Proposal {
    let yaw = heading.yaw() + sign * p.habit_sweep_deg.to_radians();
    Proposal {
        driver: Driver::Habit,
        target: Target::Orientation(UnitQuaternion::from_yaw(yaw)),
        subjects: Vec::new(),
        rationale: format!("routine scan {} of the walking direction", if sign > 0.0 { "left" } else { "right" }),
    }
}

/// Largest group of moving pedestrians whose headings fit in one arc. The
/// target is the bearing of the group's centroid.
fn social_flow(view: &OracleView, p: &OracleParams, known: Option<&BTreeSet<String>>) -> Option<Proposal> {
    let mut movers: Vec<(&EntitySnapshot, f64)> = view
        .entities
        .iter()
        .filter(|e| (e.is_agent || e.has(Tag::Social)) && is_mover(e, p))
        .map(|e| (e, e.velocity.y.atan2(e.velocity.x)))
        .collect();
    movers.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let cone = p.flow_cone_deg.to_radians();
    let mut best: Option<Vec<&EntitySnapshot>> = None;
    for (_, h0) in &movers {
        let group: Vec<&EntitySnapshot> = movers
            .iter()
            .filter(|(_, h)| {
                let d = wrap_angle(h - h0);
                (-1e-9..=cone + 1e-9).contains(&d)
            })
            .map(|(e, _)| *e)
            .collect();
        if group.len() < p.flow_min_agents.max(1) {
            continue;
        }
        if group.iter().all(|e| view.memory.attended.contains(&e.id)) {
            continue;
        }
        if let Some(k) = known {
            if group.iter().all(|e| k.contains(&e.id)) {
                continue;
            }
        }
        if best.as_ref().is_none_or(|b| group.len() > b.len()) {
            best = Some(group);
        }
    }
    let group = best?;
    let n = group.len() as f64;
    let centroid = group.iter().fold(Vec3::ZERO, |acc, e| acc + e.position).scale(1.0 / n);
    let q = UnitQuaternion::look_along(centroid - view.eye)?;
    Some(Proposal {
        driver: Driver::SocialSchema,
        target: Target::Orientation(q),
        subjects: group.iter().map(|e| e.id.clone()).collect(),
        rationale: format!("checking the flow of {} pedestrians", group.len()),
    })
}

/// First firing predicate among the enabled drivers, in priority order.
pub fn oracle_select(view: &OracleView, drivers: &DriverSet, params: &OracleParams) -> Option<Proposal> {
    Driver::ALL
        .into_iter()
        .filter(|d| drivers.is_enabled(*d))
        .find_map(|d| predicate(d, view, params, None))
}

/// Which predicates fire on `view`, ignoring the driver mask. Useful for checking priority.
pub fn firing_predicates(view: &OracleView, params: &OracleParams) -> Vec<Driver> {
    Driver::ALL.into_iter().filter(|d| predicate(*d, view, params, None).is_some()).collect()
}

/// One-line text per sighting, in the given order.
pub fn describe_oracle(sightings: &[Sighting]) -> Vec<Description> {
    sightings
        .iter()
        .map(|s| {
            let e = &s.entity;
            let deg = bearing_degrees(s.bearing);
            let side = if deg.abs() < 5.0 {
                "ahead".to_string()
            } else if deg > 0.0 {
                format!("{:.0} deg to the left", deg.abs())
            } else {
                format!("{:.0} deg to the right", deg.abs())
            };
            let mut text = format!("{} {} at {:.1} m, {side}", e.class_label, e.id, s.range);
            if e.velocity.planar_norm() > 0.1 {
                text.push_str(&format!(", moving at {:.1} m/s", e.velocity.planar_norm()));
            }
            if !e.tags.is_empty() {
                let tags: Vec<&str> = e.tags.iter().map(Tag::as_str).collect();
                text.push_str(&format!("; tags: {}", tags.join(", ")));
            }
            if !e.hint.is_empty() {
                text.push_str(&format!("; {}", e.hint));
            }
            Description { id: e.id.clone(), text }
        })
        .collect()
}

/// Single-step choice from the current view alone, ignoring memory. Used when
/// the planning stage is bypassed: the most urgent tag wins, nearest first.
pub fn direct_select(
    sightings: &[Sighting],
    pose: &Pose,
    last_action_t: Option<f64>,
    drivers: &DriverSet,
    params: &OracleParams,
) -> Option<Proposal> {
    let table = [
        (Tag::Hazard, Driver::Safety),
        (Tag::GoalRelevant, Driver::InformationSeeking),
        (Tag::Social, Driver::SocialSchema),
        (Tag::Novel, Driver::Interest),
    ];
    for (tag, driver) in table {
        if !drivers.is_enabled(driver) {
            continue;
        }
        // sightings arrive sorted by range
        if let Some(s) = sightings.iter().find(|s| s.entity.has(tag)) {
            return Some(Proposal {
                driver,
                target: Target::Entity(s.entity.id.clone()),
                subjects: vec![s.entity.id.clone()],
                rationale: format!("{} {} tagged {tag}", s.entity.class_label, s.entity.id),
            });
        }
    }
    if drivers.habit && last_action_t.is_none_or(|l| pose.t - l >= params.habit_period - 1e-9) {
        let phase = (pose.t / params.habit_period).floor() as i64;
        let sign = if phase % 2 == 0 { 1.0 } else { -1.0 };
        return Some(habit_sweep(pose.heading, sign, params));
    }
    None
}

/// Input to validation: the view predicted a fixed horizon ahead plus context.
#[derive(Debug, Clone)]
pub struct LookaheadBundle {
    /// Tick at which the bundle was assembled.
    pub t_issue: f64,
    /// Time of the predicted frame.
    pub t_pred: f64,
    /// Self pose at `t_pred`, taken from the replayed trajectory.
    pub pose: Pose,
    /// Every entity expected to be present at `t_pred`.
    pub entities: Vec<EntitySnapshot>,
    /// Entities in the predicted forward view.
    pub view: Vec<Sighting>,
    pub goal: Goal,
    pub goal_in_view: bool,
    pub pending: ActionReason,
    pub last_action: Option<ActionReason>,
    pub executed: Vec<ActionReason>,
    /// Entity ids that existed when the plan was made.
    pub plan_scene: BTreeSet<String>,
    pub memory: MemoryFacts,
}

impl LookaheadBundle {
    pub fn horizon(&self) -> f64 {
        self.t_pred - self.t_issue
    }

    /// Entities within sensing range of the predicted eye position.
    pub fn reachable(&self, fov: &FovParams) -> Vec<EntitySnapshot> {
        let eye = fov.eye(self.pose.position);
        self.entities.iter().filter(|e| (e.position - eye).norm() <= fov.max_range).cloned().collect()
    }
}

/// True when `target` can still be looked at from `pose`, given entities present then.
pub fn target_reachable(target: &Target, entities: &[EntitySnapshot], pose: &Pose, fov: &FovParams) -> bool {
    match target {
        Target::Orientation(_) => true,
        Target::Entity(id) => {
            let eye = fov.eye(pose.position);
            entities.iter().any(|e| &e.id == id && (e.position - eye).norm() <= fov.max_range)
        }
    }
}

/// Oracle validation. The plan stands unless its target became unreachable
/// or a more urgent predicate fires on something the plan could not have known.
pub fn validate_oracle(b: &LookaheadBundle, drivers: &DriverSet, params: &OracleParams, fov: &FovParams) -> Verdict {
    let reachable = b.reachable(fov);
    let view = OracleView {
        t: b.t_pred,
        pose: b.pose,
        eye: fov.eye(b.pose.position),
        goal: &b.goal,
        entities: &reachable,
        goal_in_view: b.goal_in_view,
        memory: &b.memory,
    };
    if !target_reachable(&b.pending.target, &reachable, &b.pose, fov) {
        return match oracle_select(&view, drivers, params) {
            Some(p) => Verdict::Replace(p),
            None => Verdict::Cancel,
        };
    }
    let urgent = Driver::ALL
        .into_iter()
        .filter(|d| d.priority() < b.pending.driver.priority() && drivers.is_enabled(*d))
        .find_map(|d| predicate(d, &view, params, Some(&b.plan_scene)));
    match urgent {
        Some(p) => Verdict::Replace(p),
        None => Verdict::Keep,
    }
}

/// Result of a reasoning call; `fallback` is set when the oracle stood in for a failed remote call.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T> {
    pub value: T,
    pub fallback: bool,
}

impl<T> Outcome<T> {
    fn direct(value: T) -> Self {
        Self { value, fallback: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Describe,
    Plan,
    Validate,
    Relevance,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Describe => "describe",
            Role::Plan => "plan",
            Role::Validate => "validate",
            Role::Relevance => "relevance",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const BACKEND_URL_ENV: &str = "HEADTURN_BACKEND_URL";
pub const BACKEND_TOKEN_ENV: &str = "HEADTURN_BACKEND_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub url: String,
    #[serde(skip)]
    pub token: Option<String>,
    pub describe_timeout: f64,
    pub plan_timeout: f64,
    pub validate_timeout: f64,
    pub relevance_timeout: f64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            token: None,
            describe_timeout: 5.0,
            plan_timeout: 10.0,
            validate_timeout: 3.0,
            relevance_timeout: 5.0,
        }
    }
}

impl RemoteConfig {
    /// Reads the endpoint and bearer token from the environment.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(BACKEND_URL_ENV).ok().filter(|u| !u.is_empty())?;
        Some(Self { url, token: std::env::var(BACKEND_TOKEN_ENV).ok(), ..Default::default() })
    }

    fn timeout(&self, role: Role) -> Duration {
        let s = match role {
            Role::Describe => self.describe_timeout,
            Role::Plan => self.plan_timeout,
            Role::Validate => self.validate_timeout,
            Role::Relevance => self.relevance_timeout,
        };
        Duration::from_secs_f64(s.max(0.001))
    }
}

/// Prompt templates with `{placeholder}` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    pub describe: String,
    pub plan: String,
    pub validate: String,
    pub relevance: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            describe: include_str!("../templates/describe.txt").to_string(),
            plan: include_str!("../templates/plan.txt").to_string(),
            validate: include_str!("../templates/validate.txt").to_string(),
            relevance: include_str!("../templates/relevance.txt").to_string(),
        }
    }
}

impl Templates {
    /// Overrides built-in templates with `<role>.txt` files found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("describe", &mut t.describe),
            ("plan", &mut t.plan),
            ("validate", &mut t.validate),
            ("relevance", &mut t.relevance),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(t)
    }

    pub fn get(&self, role: Role) -> &str {
        match role {
            Role::Describe => &self.describe,
            Role::Plan => &self.plan,
            Role::Validate => &self.validate,
            Role::Relevance => &self.relevance,
        }
    }
}

/// Replaces `{key}` slots; unknown slots are left alone.
pub fn render_template(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn driver_lines(drivers: &DriverSet) -> String {
    let text = |d: Driver| match d {
        Driver::Safety => "Safety: check something that could hurt you or that you might collide with.",
        Driver::InformationSeeking => "InformationSeeking: look for something you need to reach the goal.",
        Driver::SocialSchema => "SocialSchema: follow what the people around you are doing.",
        Driver::Interest => "Interest: glance at something unusual that catches the eye.",
        Driver::Habit => "Habit: an idle scan to the side when nothing else needs attention.",
    };
    let lines: Vec<&str> = drivers.enabled().into_iter().map(text).collect();
    if lines.is_empty() {
        "(none: keep looking where you walk)".into()
    } else {
        lines.join("\n")
    }
}

fn pose_json(p: &Pose) -> Value {
    json!({
        "t": p.t,
        "position": p.position.to_array(),
        "heading": p.heading.to_array(),
        "yaw_deg": p.heading.yaw().to_degrees(),
    })
}

fn entity_json(e: &EntitySnapshot, eye: Vec3) -> Value {
    json!({
        "id": e.id,
        "class": e.class_label,
        "tags": e.tags.iter().map(Tag::as_str).collect::<Vec<_>>(),
        "position": e.position.to_array(),
        "velocity": e.velocity.to_array(),
        "range": (e.position - eye).norm(),
        "hint": e.hint,
    })
}

fn sighting_json(s: &Sighting) -> Value {
    json!({
        "id": s.entity.id,
        "class": s.entity.class_label,
        "tags": s.entity.tags.iter().map(Tag::as_str).collect::<Vec<_>>(),
        "range": s.range,
        "bearing_deg": bearing_degrees(s.bearing),
        "hint": s.entity.hint,
    })
}

fn entry_json(e: &MemoryEntry) -> Value {
    json!({
        "t": e.t,
        "entities": e.entities().map(|s| json!({"id": s.id, "class": s.class_label, "tags": s.tags.iter().map(Tag::as_str).collect::<Vec<_>>()})).collect::<Vec<_>>(),
        "descriptions": e.descriptions.iter().map(|d| json!({"id": d.id, "text": d.text})).collect::<Vec<_>>(),
        "action": e.action_reason.as_ref().map(action_json),
        "executed": e.executed,
    })
}

fn action_json(a: &ActionReason) -> Value {
    let (kind, value) = match &a.target {
        Target::Entity(id) => ("entity", json!(id)),
        Target::Orientation(q) => ("orientation", json!(q.to_array())),
    };
    json!({"driver": a.driver.as_str(), "target_kind": kind, "target_value": value, "rationale": a.rationale, "t": a.issued_at})
}

fn bullet_list(items: impl IntoIterator<Item = String>) -> String {
    let lines: Vec<String> = items.into_iter().map(|s| format!("- {s}")).collect();
    if lines.is_empty() {
        "(none)".into()
    } else {
        lines.join("\n")
    }
}

/// HTTP client for a model server speaking the JSON request/response protocol.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    pub config: RemoteConfig,
    pub templates: Templates,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig, templates: Templates) -> Self {
        Self { config, templates }
    }

    fn post(&self, role: Role, mut body: Value) -> Result<Value> {
        body["role"] = json!(role.as_str());
        body["prompt_template_id"] = json!(format!("{}-v1", role.as_str()));
        let mut req = ureq::post(&self.config.url).timeout(self.config.timeout(role));
        if let Some(tok) = &self.config.token {
            req = req.set("Authorization", &format!("Bearer {tok}"));
        }
        let backend_err = |message: String| Error::Backend { role: role.to_string(), message };
        let resp = req.send_json(body).map_err(|e| backend_err(e.to_string()))?;
        resp.into_json::<Value>().map_err(|e| backend_err(format!("malformed reply: {e}")))
    }

    pub fn describe(&self, obs: &Observation, goal: &Goal) -> Result<Vec<Description>> {
        let entities: Vec<Value> = obs.entities.iter().map(sighting_json).collect();
        let prompt = render_template(
            &self.templates.describe,
            &[
                ("goal", goal.text.clone()),
                ("pose", format!("{}", pose_json(&obs.body))),
                ("entities", bullet_list(obs.entities.iter().map(|s| sighting_json(s).to_string()))),
            ],
        );
        let reply = self.post(
            Role::Describe,
            json!({"goal": goal.text, "pose": pose_json(&obs.body), "entities": entities, "fmm_excerpt": [], "drivers": [], "prompt": prompt}),
        )?;
        parse_descriptions(&reply, obs)
    }

    pub fn plan(&self, goal: &Goal, pose: &Pose, eye: Vec3, fmm: &Fmm, drivers: &DriverSet) -> Result<Proposal> {
        let latest = fmm.latest().ok_or_else(|| Error::Contract("plan on empty memory".into()))?;
        let excerpt: Vec<Value> = fmm.entries().iter().map(entry_json).collect();
        let prompt = render_template(
            &self.templates.plan,
            &[
                ("goal", goal.text.clone()),
                ("pose", pose_json(pose).to_string()),
                ("memory", bullet_list(excerpt.iter().map(Value::to_string))),
                ("drivers", driver_lines(drivers)),
            ],
        );
        let reply = self.post(
            Role::Plan,
            json!({
                "goal": goal.text,
                "pose": pose_json(pose),
                "entities": latest.entities().map(|e| entity_json(e, eye)).collect::<Vec<_>>(),
                "fmm_excerpt": excerpt,
                "drivers": drivers.enabled().iter().map(Driver::as_str).collect::<Vec<_>>(),
                "prompt": prompt,
            }),
        )?;
        let known: BTreeSet<String> = fmm.entries().iter().flat_map(|e| e.entities().map(|s| s.id.clone())).collect();
        parse_proposal(&reply, drivers, &known)
    }

    pub fn validate(&self, b: &LookaheadBundle, drivers: &DriverSet, fov: &FovParams) -> Result<Verdict> {
        let eye = fov.eye(b.pose.position);
        let prompt = render_template(
            &self.templates.validate,
            &[
                ("goal", b.goal.text.clone()),
                ("pose", pose_json(&b.pose).to_string()),
                ("entities", bullet_list(b.view.iter().map(|s| sighting_json(s).to_string()))),
                ("action", action_json(&b.pending).to_string()),
                ("memory", bullet_list(b.executed.iter().map(|a| action_json(a).to_string()))),
                ("drivers", driver_lines(drivers)),
            ],
        );
        let reply = self.post(
            Role::Validate,
            json!({
                "goal": b.goal.text,
                "pose": pose_json(&b.pose),
                "t_predicted": b.t_pred,
                "entities": b.entities.iter().map(|e| entity_json(e, eye)).collect::<Vec<_>>(),
                "fmm_excerpt": b.executed.iter().map(action_json).collect::<Vec<_>>(),
                "last_action": b.last_action.as_ref().map(action_json),
                "pending": action_json(&b.pending),
                "drivers": drivers.enabled().iter().map(Driver::as_str).collect::<Vec<_>>(),
                "prompt": prompt,
            }),
        )?;
        let known: BTreeSet<String> = b.entities.iter().map(|e| e.id.clone()).collect();
        parse_verdict(&reply, drivers, &known)
    }

    pub fn relevance(&self, entry: &MemoryEntry, goal: &str) -> Result<f64> {
        let entities: Vec<Value> = entry.entities().map(|e| entity_json(e, e.position)).collect();
        let prompt = render_template(
            &self.templates.relevance,
            &[("goal", goal.to_string()), ("entities", bullet_list(entities.iter().map(Value::to_string)))],
        );
        let reply = self.post(
            Role::Relevance,
            json!({"goal": goal, "pose": Value::Null, "entities": entities, "fmm_excerpt": [], "drivers": [], "prompt": prompt}),
        )?;
        reply
            .get("score")
            .and_then(Value::as_f64)
            .filter(|s| s.is_finite() && *s >= 0.0)
            .ok_or_else(|| Error::Backend { role: "relevance".into(), message: format!("bad score reply {reply}") })
    }
}

fn reply_err(role: Role, msg: impl Into<String>) -> Error {
    Error::Backend { role: role.to_string(), message: msg.into() }
}

pub fn parse_descriptions(reply: &Value, obs: &Observation) -> Result<Vec<Description>> {
    let items = reply
        .get("descriptions")
        .and_then(Value::as_array)
        .ok_or_else(|| reply_err(Role::Describe, "missing descriptions array"))?;
    let mut by_id = std::collections::BTreeMap::new();
    for it in items {
        let id = it.get("id").and_then(Value::as_str).ok_or_else(|| reply_err(Role::Describe, "description without id"))?;
        let text = it.get("text").and_then(Value::as_str).ok_or_else(|| reply_err(Role::Describe, "description without text"))?;
        if !obs.entities.iter().any(|s| s.entity.id == id) {
            return Err(reply_err(Role::Describe, format!("description for unknown entity {id:?}")));
        }
        by_id.insert(id.to_string(), text.to_string());
    }
    obs.entities
        .iter()
        .map(|s| {
            by_id
                .remove(&s.entity.id)
                .map(|text| Description { id: s.entity.id.clone(), text })
                .ok_or_else(|| reply_err(Role::Describe, format!("no description for {:?}", s.entity.id)))
        })
        .collect()
}

/// Parses a `{driver, target_kind, target_value, rationale}` object, rejecting
/// disabled drivers and entity ids outside `known`.
pub fn parse_proposal(v: &Value, drivers: &DriverSet, known: &BTreeSet<String>) -> Result<Proposal> {
    let role = Role::Plan;
    let driver: Driver = v
        .get("driver")
        .and_then(Value::as_str)
        .ok_or_else(|| reply_err(role, "missing driver"))?
        .parse()
        .map_err(|_| reply_err(role, format!("unknown driver in {v}")))?;
    if !drivers.is_enabled(driver) {
        return Err(reply_err(role, format!("driver {driver} is disabled")));
    }
    let kind = v.get("target_kind").and_then(Value::as_str).ok_or_else(|| reply_err(role, "missing target_kind"))?;
    let value = v.get("target_value").ok_or_else(|| reply_err(role, "missing target_value"))?;
    let (target, subjects) = match kind {
        "entity" => {
            let id = value.as_str().ok_or_else(|| reply_err(role, "entity target must be a string"))?;
            if !known.contains(id) {
                return Err(reply_err(role, format!("unknown entity {id:?}")));
            }
            (Target::Entity(id.to_string()), vec![id.to_string()])
        }
        "orientation" => {
            let q: [f64; 4] = serde_json::from_value(value.clone())
                .map_err(|_| reply_err(role, "orientation must be [w, x, y, z]"))?;
            let q = UnitQuaternion::try_new(q[0], q[1], q[2], q[3]).map_err(|e| reply_err(role, e.to_string()))?;
            (Target::Orientation(q), Vec::new())
        }
        other => return Err(reply_err(role, format!("unknown target_kind {other:?}"))),
    };
    let rationale = v.get("rationale").and_then(Value::as_str).unwrap_or_default().to_string();
    Ok(Proposal { driver, target, subjects, rationale })
}

pub fn parse_verdict(v: &Value, drivers: &DriverSet, known: &BTreeSet<String>) -> Result<Verdict> {
    match v.get("decision").and_then(Value::as_str) {
        Some("keep") => Ok(Verdict::Keep),
        Some("cancel") => Ok(Verdict::Cancel),
        Some("replace") => {
            let r = v.get("replacement").ok_or_else(|| reply_err(Role::Validate, "replace without replacement"))?;
            parse_proposal(r, drivers, known).map(Verdict::Replace)
        }
        _ => Err(reply_err(Role::Validate, format!("bad decision in {v}"))),
    }
}

/// Front door for all reasoning roles: remote when configured, oracle otherwise
/// and on any remote failure.
#[derive(Debug, Clone)]
pub struct Reasoner {
    pub drivers: DriverSet,
    pub params: OracleParams,
    pub fov: FovParams,
    pub remote: Option<RemoteBackend>,
}

impl Reasoner {
    pub fn oracle(drivers: DriverSet, params: OracleParams, fov: FovParams) -> Self {
        Self { drivers, params, fov, remote: None }
    }

    pub fn with_remote(mut self, remote: RemoteBackend) -> Self {
        self.remote = Some(remote);
        self
    }

    pub fn describe(&self, obs: &Observation, goal: &Goal) -> Outcome<Vec<Description>> {
        if let Some(r) = &self.remote {
            match r.describe(obs, goal) {
                Ok(d) => return Outcome::direct(d),
                Err(e) => log::warn!("describe fell back to oracle: {e}"),
            }
            return Outcome { value: describe_oracle(&obs.entities), fallback: true };
        }
        Outcome::direct(describe_oracle(&obs.entities))
    }

    /// Oracle plan over the latest memory entry.
    pub fn plan_oracle(&self, goal: &Goal, pose: &Pose, fmm: &Fmm) -> Result<Option<Proposal>> {
        let latest = fmm.latest().ok_or_else(|| Error::Contract("plan on empty memory".into()))?;
        let entities: Vec<EntitySnapshot> = latest.entities().cloned().collect();
        let facts = MemoryFacts::from_fmm(fmm);
        let view = OracleView {
            t: pose.t,
            pose: *pose,
            eye: self.fov.eye(pose.position),
            goal,
            entities: &entities,
            goal_in_view: latest.goal_in_view,
            memory: &facts,
        };
        Ok(oracle_select(&view, &self.drivers, &self.params))
    }

    pub fn plan(&self, goal: &Goal, pose: &Pose, fmm: &Fmm) -> Result<Outcome<Option<Proposal>>> {
        if let Some(r) = &self.remote {
            if fmm.is_empty() {
                return Err(Error::Contract("plan on empty memory".into()));
            }
            match r.plan(goal, pose, self.fov.eye(pose.position), fmm, &self.drivers) {
                Ok(p) => return Ok(Outcome::direct(Some(p))),
                Err(e) => log::warn!("plan fell back to oracle: {e}"),
            }
            return Ok(Outcome { value: self.plan_oracle(goal, pose, fmm)?, fallback: true });
        }
        Ok(Outcome::direct(self.plan_oracle(goal, pose, fmm)?))
    }

    pub fn validate(&self, b: &LookaheadBundle) -> Outcome<Verdict> {
        if let Some(r) = &self.remote {
            return match r.validate(b, &self.drivers, &self.fov) {
                Ok(v) => Outcome::direct(v),
                Err(e) => {
                    log::warn!("validate failed, keeping the plan: {e}");
                    Outcome { value: Verdict::Keep, fallback: true }
                }
            };
        }
        Outcome::direct(validate_oracle(b, &self.drivers, &self.params, &self.fov))
    }

    /// Builds the predicted forward view used in bundles and prompts.
    pub fn predicted_view(&self, entities: &[EntitySnapshot], pose: &Pose) -> Vec<Sighting> {
        visible_in(entities, self.fov.eye(pose.position), &pose.heading, &self.fov)
    }
}

impl RelevanceScorer for Reasoner {
    fn score(&self, entry: &MemoryEntry, goal: &str) -> Result<f64> {
        match &self.remote {
            Some(r) => r.relevance(entry, goal),
            None => crate::memory::OverlapScorer.score(entry, goal),
        }
    }
}
