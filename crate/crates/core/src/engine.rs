//! The two-stage head-motion pipeline.
//!
//! [`run_dps`] walks the whole trajectory once on a simulated clock, planning
//! head turns from novel views and charging backend latency to that clock.
//! [`run_res`] replays the plan, validating each pending action against a view
//! predicted a fixed horizon ahead and substituting alternatives when needed.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{angular_distance, step_toward, AngularRate, UnitQuaternion};
use crate::memory::{ActionReason, Driver, Fmm, MemoryEntry, Target};
use crate::perception::{observe, Observation, Pem};
use crate::reasoning::{
    direct_select, target_reachable, DriverSet, LookaheadBundle, MemoryFacts, OracleParams, Proposal, Reasoner,
    RemoteConfig, Verdict,
};
use crate::world::{BodyTrajectory, Entity, EntitySnapshot, FovParams, Goal, Pose, Scene, Tag, Waypoint};

/// Angle below which a turn counts as finished.
const REACHED: f64 = 1e-9;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySpec {
    pub mean: f64,
    pub sd: f64,
}

impl LatencySpec {
    /// Normal draw truncated at zero.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sd <= 0.0 {
            return self.mean.max(0.0);
        }
        Normal::new(self.mean, self.sd).expect("finite latency spec").sample(rng).max(0.0)
    }
}

/// Simulated inference latency per backend role, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub describe: LatencySpec,
    pub plan: LatencySpec,
    pub validate: LatencySpec,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            describe: LatencySpec { mean: 3.50, sd: 0.64 },
            plan: LatencySpec { mean: 7.10, sd: 1.22 },
            validate: LatencySpec { mean: 1.49, sd: 0.41 },
        }
    }
}

impl LatencyModel {
    pub fn zero() -> Self {
        let z = LatencySpec { mean: 0.0, sd: 0.0 };
        Self { describe: z, plan: z, validate: z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoldParams {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for HoldParams {
    fn default() -> Self {
        Self { mean: 1.5, sd: 0.25, min: 1.0, max: 2.0 }
    }
}

/// Hold duration: a normal draw clamped to `[min, max]`.
pub fn sample_hold<R: Rng + ?Sized>(params: &HoldParams, rng: &mut R) -> f64 {
    let x = if params.sd > 0.0 {
        Normal::new(params.mean, params.sd).expect("finite hold params").sample(rng)
    } else {
        params.mean
    };
    x.clamp(params.min, params.max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub version: u32,
    pub tick: f64,
    pub turn_rate: f64,
    pub hold: HoldParams,
    pub lookahead: f64,
    pub ssim_threshold: f64,
    pub fmm_recent: usize,
    pub fmm_relevant: usize,
    pub drivers: DriverSet,
    pub oracle: OracleParams,
    pub latency: LatencyModel,
    pub fov: FovParams,
    pub seed: u64,
    /// Simulated seconds; defaults to the trajectory's duration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    /// When false, plans come straight from the describe stage.
    pub use_llm: bool,
    /// When false, the plan's head track is the output.
    pub use_res: bool,
    pub backend: BackendKind,
    /// Endpoint settings for the remote backend; the URL may come from the environment instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<std::path::PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            version: 1,
            tick: 0.2,
            turn_rate: 36.0,
            hold: HoldParams::default(),
            lookahead: 2.0,
            ssim_threshold: crate::perception::DEFAULT_SSIM_THRESHOLD,
            fmm_recent: crate::memory::RECENT_CAPACITY,
            fmm_relevant: crate::memory::RELEVANT_CAPACITY,
            drivers: DriverSet::all(),
            oracle: OracleParams::default(),
            latency: LatencyModel::default(),
            fov: FovParams::default(),
            seed: 0,
            duration: None,
            use_llm: true,
            use_res: true,
            backend: BackendKind::Oracle,
            remote: None,
            templates_dir: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::schema("version", format!("unsupported config version {}", self.version)));
        }
        let positive = [("tick", self.tick), ("turn_rate", self.turn_rate), ("lookahead", self.lookahead)];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::schema(field, format!("must be positive, got {v}")));
            }
        }
        let h = &self.hold;
        if !(h.min > 0.0 && h.min <= h.max && h.sd >= 0.0) {
            return Err(Error::schema("hold", "need 0 < min <= max and sd >= 0"));
        }
        if !(0.0..=100.0).contains(&self.ssim_threshold) {
            return Err(Error::schema("ssim_threshold", "must lie in [0, 100]"));
        }
        if self.fmm_recent == 0 {
            return Err(Error::schema("fmm_recent", "must be at least 1"));
        }
        for (role, l) in [("describe", self.latency.describe), ("plan", self.latency.plan), ("validate", self.latency.validate)] {
            if !(l.mean.is_finite() && l.sd >= 0.0) {
                return Err(Error::schema(format!("latency.{role}"), "mean must be finite and sd >= 0"));
            }
        }
        if let Some(d) = self.duration {
            if !(d >= 0.0) {
                return Err(Error::schema("duration", "must be non-negative"));
            }
        }
        self.fov.validate()
    }

    pub fn rate(&self) -> AngularRate {
        AngularRate::from_degrees_per_sec(self.turn_rate).unwrap_or_default()
    }

    fn lookahead_ticks(&self) -> usize {
        (self.lookahead / self.tick).round() as usize
    }

    /// Builds the reasoner this configuration describes. For the remote backend
    /// the endpoint comes from the config, or else from the environment.
    pub fn reasoner(&self) -> Result<Reasoner> {
        let base = Reasoner::oracle(self.drivers, self.oracle.clone(), self.fov);
        if self.backend == BackendKind::Oracle {
            return Ok(base);
        }
        let remote = self.remote.clone().filter(|r| !r.url.is_empty()).or_else(|| {
            RemoteConfig::from_env().map(|env| RemoteConfig { url: env.url, token: env.token, ..self.remote.clone().unwrap_or_default() })
        });
        Ok(match remote {
            Some(mut cfg) => {
                if cfg.token.is_none() {
                    cfg.token = std::env::var(crate::reasoning::BACKEND_TOKEN_ENV).ok();
                }
                let templates = match &self.templates_dir {
                    Some(dir) => crate::reasoning::Templates::load_dir(dir)?,
                    None => Default::default(),
                };
                base.with_remote(crate::reasoning::RemoteBackend::new(cfg, templates))
            }
            None => return Err(Error::schema("remote.url", format!("remote backend selected but no URL configured or set in {}", crate::reasoning::BACKEND_URL_ENV))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Aligned,
    Turning,
    Holding,
    Returning,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Aligned => "ALIGNED",
            Phase::Turning => "TURNING",
            Phase::Holding => "HOLDING",
            Phase::Returning => "RETURNING",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ALIGNED" => Phase::Aligned,
            "TURNING" => Phase::Turning,
            "HOLDING" => Phase::Holding,
            "RETURNING" => Phase::Returning,
            _ => return Err(Error::schema("phase", format!("unknown phase {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadState {
    pub orientation: UnitQuaternion,
    pub phase: Phase,
    pub hold_deadline: Option<f64>,
    pub active: Option<ActionReason>,
    /// Last resolved target, kept so a vanished entity does not stall the turn.
    pub target: Option<UnitQuaternion>,
}

impl HeadState {
    pub fn aligned(orientation: UnitQuaternion) -> Self {
        Self { orientation, phase: Phase::Aligned, hold_deadline: None, active: None, target: None }
    }

    /// Begins turning toward `target` for `action`.
    pub fn start(&mut self, action: ActionReason, target: UnitQuaternion) {
        self.phase = Phase::Turning;
        self.hold_deadline = None;
        self.active = Some(action);
        self.target = Some(target);
    }

    pub fn driver(&self) -> Option<Driver> {
        match self.phase {
            Phase::Aligned => None,
            _ => self.active.as_ref().map(|a| a.driver),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadEvent {
    HoldStarted { at: f64, hold: f64 },
    Returning,
    Realigned,
}

/// Advances the head one tick. `target` is the active target re-resolved for
/// this tick, if it could be. Returns the phase transition, if any.
#[allow(clippy::too_many_arguments)]
pub fn step_head<R: Rng + ?Sized>(
    state: &mut HeadState,
    heading: &UnitQuaternion,
    target: Option<UnitQuaternion>,
    clock: f64,
    dt: f64,
    rate: AngularRate,
    hold: &HoldParams,
    rng: &mut R,
) -> Option<HeadEvent> {
    if let Some(t) = target {
        state.target = Some(t);
    }
    let goal = state.target.unwrap_or(*heading);
    match state.phase {
        Phase::Aligned => {
            state.orientation = step_toward(&state.orientation, heading, rate, dt);
            None
        }
        Phase::Turning => {
            state.orientation = step_toward(&state.orientation, &goal, rate, dt);
            if angular_distance(&state.orientation, &goal) <= REACHED {
                let h = sample_hold(hold, rng);
                state.phase = Phase::Holding;
                state.hold_deadline = Some(clock + h);
                Some(HeadEvent::HoldStarted { at: clock, hold: h })
            } else {
                None
            }
        }
        Phase::Holding => {
            if clock + TIME_EPS >= state.hold_deadline.unwrap_or(clock) {
                state.phase = Phase::Returning;
                state.hold_deadline = None;
                state.orientation = step_toward(&state.orientation, heading, rate, dt);
                Some(HeadEvent::Returning)
            } else {
                state.orientation = step_toward(&state.orientation, &goal, rate, dt);
                None
            }
        }
        Phase::Returning => {
            state.orientation = step_toward(&state.orientation, heading, rate, dt);
            if angular_distance(&state.orientation, heading) <= REACHED {
                state.phase = Phase::Aligned;
                state.active = None;
                state.target = None;
                Some(HeadEvent::Realigned)
            } else {
                None
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub q: UnitQuaternion,
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub driver: Option<Driver>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledAction {
    pub t: f64,
    pub tick: usize,
    pub action: ActionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<u64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

fn event(t: f64, kind: &str, action: Option<u64>, note: impl Into<String>) -> EventRecord {
    EventRecord { t, kind: kind.to_string(), action, note: note.into() }
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub actions: Vec<ScheduledAction>,
    /// Head track simulated during planning, one sample per tick.
    pub track: Vec<TraceSample>,
    pub fmm: Fmm,
    /// Entities that existed in the planning scene.
    pub scene_ids: BTreeSet<String>,
    pub events: Vec<EventRecord>,
    /// Number of backend replies that came from a fallback.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleRecord {
    pub tick: usize,
    pub t_issue: f64,
    pub t_pred: f64,
    pub action: u64,
    pub verdict: String,
    pub ready_at: f64,
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct ExecutedTrace {
    pub samples: Vec<TraceSample>,
    /// Actions actually started, in order.
    pub executed: Vec<ActionReason>,
    /// (original, substitute) pairs from replace verdicts.
    pub replaced: Vec<(ActionReason, ActionReason)>,
    pub bundles: Vec<BundleRecord>,
    pub events: Vec<EventRecord>,
    pub fmm: Fmm,
}

impl ExecutedTrace {
    pub fn orientations(&self) -> Vec<UnitQuaternion> {
        self.samples.iter().map(|s| s.q).collect()
    }

    /// Drivers of every action that influenced the trace.
    pub fn drivers(&self) -> BTreeSet<Driver> {
        self.executed.iter().map(|a| a.driver).collect()
    }
}

/// Number of ticks in a run of `duration` seconds (inclusive of both ends).
pub fn tick_count(duration: f64, tick: f64) -> usize {
    (duration / tick + 1e-9).floor() as usize + 1
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const STREAM_HOLD: u64 = 1;
const STREAM_PLAN_LATENCY: u64 = 2;
const STREAM_VALIDATE_LATENCY: u64 = 3;

struct Clock {
    t0: f64,
    tick: f64,
    n: usize,
}

impl Clock {
    fn new(traj: &BodyTrajectory, cfg: &EngineConfig) -> Self {
        let dur = cfg.duration.map_or(traj.duration(), |d| d.min(traj.duration()));
        Self { t0: traj.start(), tick: cfg.tick, n: tick_count(dur, cfg.tick) }
    }

    fn at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.tick
    }
}

fn pose_clamped(traj: &BodyTrajectory, t: f64) -> Pose {
    let mut p = traj.pose_at(t.clamp(traj.start(), traj.end())).expect("clamped time is in range");
    p.t = t;
    p
}

/// Yaw-only head orientation that looks at `target` in the current scene.
fn resolve_target(target: &Target, scene: &Scene, pose: &Pose, fov: &FovParams, t: f64) -> Option<UnitQuaternion> {
    match target {
        Target::Orientation(q) => Some(*q),
        Target::Entity(id) => {
            let e = scene.find(id).filter(|e| e.active_at(t))?;
            UnitQuaternion::look_along(e.position_at(t) - fov.eye(pose.position))
        }
    }
}

/// Prediction used both when DPS screens a ready action and when RES validates it.
fn lookahead_frame(scene: &Scene, traj: &BodyTrajectory, t_issue: f64, horizon: f64) -> (Pose, Vec<EntitySnapshot>) {
    (pose_clamped(traj, t_issue + horizon), scene.predicted_snapshot(t_issue, horizon))
}

struct InFlight {
    ready_at: f64,
    issued_at: f64,
    entry_seq: u64,
    proposal: Option<Proposal>,
}

/// Deliberative pass over the whole trajectory.
pub fn run_dps(scene: &Scene, traj: &BodyTrajectory, goal: &Goal, reasoner: &Reasoner, cfg: &EngineConfig) -> Result<Plan> {
    cfg.validate()?;
    let clock = Clock::new(traj, cfg);
    let rate = cfg.rate();
    let mut hold_rng = rng_stream(cfg.seed, STREAM_HOLD);
    let mut lat_rng = rng_stream(cfg.seed, STREAM_PLAN_LATENCY);
    let mut pem = Pem::new(cfg.ssim_threshold);
    let mut fmm = Fmm::with_capacity(&goal.text, cfg.fmm_recent, cfg.fmm_relevant);
    let mut head = HeadState::aligned(pose_clamped(traj, clock.t0).heading);
    let mut in_flight: Option<InFlight> = None;
    let mut ready: VecDeque<ActionReason> = VecDeque::new();
    let mut plan = Plan {
        actions: Vec::new(),
        track: Vec::with_capacity(clock.n),
        fmm: Fmm::new(&goal.text),
        scene_ids: scene.ids(),
        events: Vec::new(),
        fallbacks: 0,
    };
    let mut next_id = 1u64;
    let mut last_issue: Option<f64> = None;
    let mut last_start: Option<(usize, f64)> = None;
    let look = cfg.lookahead_ticks();

    for k in 0..clock.n {
        let t = clock.at(k);
        let pose = pose_clamped(traj, t);

        if in_flight.as_ref().is_some_and(|f| f.ready_at <= t + TIME_EPS) {
            let f = in_flight.take().unwrap();
            plan.events.push(event(t, "plan_ready", None, format!("issued at {:.1}", f.issued_at)));
            if let Some(p) = f.proposal {
                let action = p.into_action(next_id, f.issued_at);
                next_id += 1;
                match fmm.get_mut(f.entry_seq) {
                    Some(e) => e.action_reason = Some(action.clone()),
                    None => {
                        let mut e = MemoryEntry { t, ..Default::default() };
                        e.action_reason = Some(action.clone());
                        fmm.insert(e, reasoner)?;
                    }
                }
                ready.push_back(action);
            }
        }

        let mut target = None;
        if head.phase == Phase::Aligned {
            while let Some(action) = ready.pop_front() {
                let issue_k = last_start.map_or(0, |(ks, _)| ks).max(k.saturating_sub(look));
                let (pred_pose, pred) = lookahead_frame(scene, traj, clock.at(issue_k), cfg.lookahead);
                let resolved = resolve_target(&action.target, scene, &pose, &cfg.fov, t);
                let reachable = target_reachable(&action.target, &pred, &pred_pose, &cfg.fov);
                match resolved.filter(|_| reachable) {
                    Some(q) => {
                        fmm.mark_executed(action.id);
                        plan.events.push(event(t, "start", Some(action.id), action.driver.as_str()));
                        plan.actions.push(ScheduledAction { t, tick: k, action: action.clone() });
                        pem.pause();
                        head.start(action, q);
                        last_start = Some((k, t));
                        target = Some(q);
                        break;
                    }
                    None => plan.events.push(event(t, "dropped", Some(action.id), "target unreachable")),
                }
            }
        } else if let Some(a) = &head.active {
            target = resolve_target(&a.target, scene, &pose, &cfg.fov, t);
        }

        if let Some(HeadEvent::HoldStarted { at, hold }) =
            step_head(&mut head, &pose.heading, target, t, cfg.tick, rate, &cfg.hold, &mut hold_rng)
        {
            pem.resume_at(at + hold / 2.0);
        }
        plan.track.push(TraceSample { t, q: head.orientation, phase: head.phase, driver: head.driver() });

        let mut obs = pem.capture(t, scene, &cfg.fov, &pose, &head.orientation)?;
        let mut forced = false;
        if obs.is_none() && in_flight.is_none() && ready.is_empty() && head.phase == Phase::Aligned && !pem.is_paused(t) {
            let quiet_since = [last_issue, last_start.map(|(_, ts)| ts)].into_iter().flatten().fold(f64::NEG_INFINITY, f64::max);
            if t - quiet_since >= cfg.oracle.habit_period - TIME_EPS {
                obs = Some(observe(scene, &cfg.fov, &pose, &head.orientation, t));
                forced = true;
            }
        }
        let Some(obs) = obs else { continue };
        let described = reasoner.describe(&obs, goal);
        plan.fallbacks += usize::from(described.fallback);
        let mut entry = MemoryEntry::from_snapshots(t, obs.entities.iter().map(|s| s.entity.clone()));
        entry.descriptions = described.value;
        entry.goal_in_view = obs.goal_in_view;
        let seq = fmm.insert(entry, reasoner)?;
        plan.events.push(event(t, if forced { "habit_check" } else { "novel_view" }, None, format!("{} entities", obs.entities.len())));
        if in_flight.is_some() {
            continue;
        }
        let (proposal, latency) = if cfg.use_llm {
            let out = reasoner.plan(goal, &pose, &fmm)?;
            plan.fallbacks += usize::from(out.fallback);
            let l = cfg.latency.describe.sample(&mut lat_rng) + cfg.latency.plan.sample(&mut lat_rng);
            (out.value, l)
        } else {
            let last = [last_issue, last_start.map(|(_, ts)| ts)].into_iter().flatten().reduce(f64::max);
            let p = direct_select(&obs.entities, &pose, last, &reasoner.drivers, &reasoner.params);
            (p, cfg.latency.describe.sample(&mut lat_rng))
        };
        let note = proposal.as_ref().map_or("idle".to_string(), |p| p.driver.to_string());
        plan.events.push(event(t, "plan_issued", None, note));
        last_issue = Some(t);
        in_flight = Some(InFlight { ready_at: t + latency, issued_at: t, entry_seq: seq, proposal });
    }
    plan.fmm = fmm;
    Ok(plan)
}

struct Pending {
    action: ActionReason,
    tick: usize,
    validation: Option<(f64, Verdict)>,
    validated: bool,
}

struct LateVerdict {
    ready_at: f64,
    action: u64,
    verdict: Verdict,
}

fn apply_replacement(
    fmm: &mut Fmm,
    reasoner: &Reasoner,
    t: f64,
    original: &ActionReason,
    substitute: &ActionReason,
) -> Result<()> {
    let mut orig = MemoryEntry { t, ..Default::default() };
    orig.action_reason = Some(original.clone());
    fmm.insert(orig, reasoner)?;
    let mut sub = MemoryEntry { t, ..Default::default() };
    sub.action_reason = Some(substitute.clone());
    fmm.insert(sub, reasoner)?;
    Ok(())
}

/// Reactive pass: replays `plan`, validating each pending action on a predicted view.
pub fn run_res(
    scene: &Scene,
    traj: &BodyTrajectory,
    goal: &Goal,
    plan: &Plan,
    reasoner: &Reasoner,
    cfg: &EngineConfig,
) -> Result<ExecutedTrace> {
    cfg.validate()?;
    let clock = Clock::new(traj, cfg);
    if plan.track.len() != clock.n {
        return Err(Error::Contract(format!(
            "plan covers {} ticks but this run needs {}",
            plan.track.len(),
            clock.n
        )));
    }
    let mut out = ExecutedTrace {
        samples: Vec::with_capacity(clock.n),
        executed: Vec::new(),
        replaced: Vec::new(),
        bundles: Vec::new(),
        events: Vec::new(),
        fmm: Fmm::with_capacity(&goal.text, cfg.fmm_recent, cfg.fmm_relevant),
    };
    if !cfg.use_res {
        out.samples = plan.track.clone();
        out.executed = plan.actions.iter().map(|s| s.action.clone()).collect();
        for a in &out.executed {
            let mut e = MemoryEntry { t: a.issued_at.max(out.fmm.latest().map_or(f64::NEG_INFINITY, |l| l.t)), ..Default::default() };
            e.action_reason = Some(a.clone());
            out.fmm.insert(e, reasoner)?;
            out.fmm.mark_executed(a.id);
        }
        return Ok(out);
    }

    let rate = cfg.rate();
    let look = cfg.lookahead_ticks();
    let mut hold_rng = rng_stream(cfg.seed, STREAM_HOLD);
    let mut lat_rng = rng_stream(cfg.seed, STREAM_VALIDATE_LATENCY);
    let mut head = HeadState::aligned(pose_clamped(traj, clock.t0).heading);
    let mut pending: VecDeque<Pending> = plan
        .actions
        .iter()
        .map(|s| Pending { action: s.action.clone(), tick: s.tick, validation: None, validated: false })
        .collect();
    let mut late: Vec<LateVerdict> = Vec::new();
    let plan_facts = MemoryFacts::from_fmm(&plan.fmm);
    let mut next_id = plan.actions.iter().map(|s| s.action.id).max().unwrap_or(0) + 1_000_000;
    let mut last_start_tick = 0usize;

    for k in 0..clock.n {
        let t = clock.at(k);
        let pose = pose_clamped(traj, t);

        // 1. verdicts that have arrived
        for p in pending.iter_mut() {
            let arrived = p.validation.as_ref().is_some_and(|(ready, _)| *ready <= t + TIME_EPS);
            if !arrived || p.validated {
                continue;
            }
            let (_, verdict) = p.validation.take().unwrap();
            p.validated = true;
            match verdict {
                Verdict::Keep => {}
                Verdict::Replace(prop) => {
                    let sub = prop.into_action(next_id, t);
                    next_id += 1;
                    out.events.push(event(t, "replace", Some(p.action.id), format!("{} -> {}", p.action.driver, sub.driver)));
                    out.replaced.push((p.action.clone(), sub.clone()));
                    p.action = sub;
                }
                Verdict::Cancel => {
                    out.events.push(event(t, "cancel", Some(p.action.id), ""));
                    p.tick = usize::MAX;
                }
            }
        }
        pending.retain(|p| p.tick != usize::MAX);
        let mut retarget = None;
        late.retain(|v| {
            if v.ready_at > t + TIME_EPS {
                return true;
            }
            let active = head.active.as_ref().is_some_and(|a| a.id == v.action);
            match (&v.verdict, active && head.phase == Phase::Turning) {
                (Verdict::Replace(p), true) => retarget = Some(p.clone()),
                (Verdict::Keep, _) => {}
                _ => out.events.push(event(t, "late_verdict_discarded", Some(v.action), v.verdict.label())),
            }
            false
        });
        let mut target = None;
        if let Some(prop) = retarget {
            let original = head.active.clone().expect("retarget needs an active action");
            let sub = prop.into_action(next_id, t);
            next_id += 1;
            if let Some(q) = resolve_target(&sub.target, scene, &pose, &cfg.fov, t) {
                out.events.push(event(t, "retarget", Some(original.id), format!("{} -> {}", original.driver, sub.driver)));
                out.replaced.push((original.clone(), sub.clone()));
                apply_replacement(&mut out.fmm, reasoner, t, &original, &sub)?;
                out.fmm.mark_executed(sub.id);
                out.executed.push(sub.clone());
                head.start(sub, q);
                target = Some(q);
            }
        }

        // 2. start the next action once the head is free
        if head.phase == Phase::Aligned && pending.front().is_some_and(|p| p.tick <= k) {
            let p = pending.pop_front().unwrap();
            match resolve_target(&p.action.target, scene, &pose, &cfg.fov, t) {
                Some(q) => {
                    if let Some((ready_at, verdict)) = p.validation {
                        out.events.push(event(t, "unvalidated_start", Some(p.action.id), format!("verdict due {ready_at:.2}")));
                        late.push(LateVerdict { ready_at, action: p.action.id, verdict });
                    }
                    let original = plan.actions.iter().find(|s| s.action.id == p.action.id);
                    if original.is_none() {
                        let orig = out.replaced.iter().find(|(_, s)| s.id == p.action.id).map(|(o, _)| o.clone());
                        if let Some(o) = orig {
                            apply_replacement(&mut out.fmm, reasoner, t, &o, &p.action)?;
                        }
                    } else {
                        let mut e = MemoryEntry { t, ..Default::default() };
                        e.action_reason = Some(p.action.clone());
                        out.fmm.insert(e, reasoner)?;
                    }
                    out.fmm.mark_executed(p.action.id);
                    out.events.push(event(t, "start", Some(p.action.id), p.action.driver.as_str()));
                    out.executed.push(p.action.clone());
                    head.start(p.action, q);
                    last_start_tick = k;
                    target = Some(q);
                }
                None => out.events.push(event(t, "skipped", Some(p.action.id), "target absent at start")),
            }
        } else if target.is_none() {
            if let Some(a) = &head.active {
                target = resolve_target(&a.target, scene, &pose, &cfg.fov, t);
            }
        }

        // 3. issue validation for the next pending action
        if let Some(p) = pending.front_mut() {
            if p.validation.is_none() && !p.validated && k + look >= p.tick && k >= last_start_tick {
                let (pred_pose, entities) = lookahead_frame(scene, traj, t, cfg.lookahead);
                let mut facts = MemoryFacts::from_fmm(&out.fmm);
                facts.attended.extend(plan_facts.attended.iter().cloned());
                facts.attended.extend(p.action.subjects.iter().cloned());
                facts.goal_sought |= plan_facts.goal_sought;
                let bundle = LookaheadBundle {
                    t_issue: t,
                    t_pred: t + cfg.lookahead,
                    pose: pred_pose,
                    view: reasoner.predicted_view(&entities, &pred_pose),
                    entities,
                    goal: goal.clone(),
                    goal_in_view: plan.fmm.goal_observed(),
                    pending: p.action.clone(),
                    last_action: out.executed.last().cloned(),
                    executed: out.executed.clone(),
                    plan_scene: plan.scene_ids.clone(),
                    memory: facts,
                };
                let verdict = reasoner.validate(&bundle);
                let ready_at = t + cfg.latency.validate.sample(&mut lat_rng);
                out.bundles.push(BundleRecord {
                    tick: k,
                    t_issue: bundle.t_issue,
                    t_pred: bundle.t_pred,
                    action: p.action.id,
                    verdict: verdict.value.label().to_string(),
                    ready_at,
                    fallback: verdict.fallback,
                });
                p.validation = Some((ready_at, verdict.value));
            }
        }

        // 4. kinematics
        step_head(&mut head, &pose.heading, target, t, cfg.tick, rate, &cfg.hold, &mut hold_rng);
        out.samples.push(TraceSample { t, q: head.orientation, phase: head.phase, driver: head.driver() });
    }
    Ok(out)
}

/// Both stages back to back. The plan is made on `plan_scene` and executed on `run_scene`.
pub fn run_pipeline(
    plan_scene: &Scene,
    run_scene: &Scene,
    traj: &BodyTrajectory,
    reasoner: &Reasoner,
    cfg: &EngineConfig,
) -> Result<(Plan, ExecutedTrace)> {
    let plan = run_dps(plan_scene, traj, &plan_scene.goal, reasoner, cfg)?;
    let trace = run_res(run_scene, traj, &run_scene.goal, &plan, reasoner, cfg)?;
    Ok((plan, trace))
}

#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub id: String,
    pub trajectory: BodyTrajectory,
    /// Defaults to the scene goal.
    pub goal: Option<Goal>,
}

/// Turns another agent's trajectory into a moving social entity.
pub fn agent_entity(id: &str, traj: &BodyTrajectory) -> Entity {
    let mut e = Entity::new(id, "pedestrian", traj.samples()[0].position + crate::geom::Vec3::new(0.0, 0.0, 0.9), crate::geom::Vec3::new(0.25, 0.25, 0.9));
    e.tags.insert(Tag::Social);
    e.waypoints = traj
        .samples()
        .iter()
        .map(|s| Waypoint { t: s.t, position: s.position + crate::geom::Vec3::new(0.0, 0.0, 0.9) })
        .collect();
    e.appear_at = Some(traj.start());
    e.vanish_at = Some(traj.end());
    e
}

/// Runs an independent pipeline per agent; each sees the others as moving pedestrians.
pub fn run_multi(scene: &Scene, agents: &[AgentSpec], cfg: &EngineConfig) -> Result<Vec<(String, ExecutedTrace)>> {
    let reasoner = cfg.reasoner()?;
    agents
        .par_iter()
        .map(|a| {
            let mut own = scene.clone();
            for other in agents.iter().filter(|o| o.id != a.id) {
                own.agents.push(agent_entity(&other.id, &other.trajectory));
            }
            let goal = a.goal.clone().unwrap_or_else(|| scene.goal.clone());
            own.goal = goal.clone();
            let plan = run_dps(&own, &a.trajectory, &goal, &reasoner, cfg)?;
            let trace = run_res(&own, &a.trajectory, &goal, &plan, &reasoner, cfg)?;
            Ok((a.id.clone(), trace))
        })
        .collect()
}

/// Observation at `t` using the forward-aligned head; handy for inspecting scenes.
pub fn forward_observation(scene: &Scene, traj: &BodyTrajectory, fov: &FovParams, t: f64) -> Result<Observation> {
    let pose = traj.pose_at(t)?;
    Ok(observe(scene, fov, &pose, &pose.heading, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::world::Condition;

    fn straight(len: f64) -> BodyTrajectory {
        BodyTrajectory::from_path(&[Vec3::ZERO, Vec3::new(len, 0.0, 0.0)], 1.3, 0.0, 0.2).unwrap()
    }

    fn empty_scene() -> Scene {
        Scene::new("empty", Condition::Mdc, Goal { text: "walk to the end".into(), position: Vec3::new(30.0, 0.0, 0.0) })
    }

    #[test]
    fn ninety_degree_turn_takes_thirteen_ticks() {
        let mut rng = rng_stream(1, STREAM_HOLD);
        let mut h = HeadState::aligned(UnitQuaternion::IDENTITY);
        let tgt = UnitQuaternion::from_yaw_degrees(90.0);
        let a = Proposal { driver: Driver::Interest, target: Target::Orientation(tgt), subjects: vec![], rationale: String::new() }.into_action(1, 0.0);
        h.start(a, tgt);
        let mut ticks = 0;
        while h.phase == Phase::Turning {
            step_head(&mut h, &UnitQuaternion::IDENTITY, Some(tgt), ticks as f64 * 0.2, 0.2, AngularRate::default(), &HoldParams::default(), &mut rng);
            ticks += 1;
        }
        assert_eq!(ticks, 13);
        assert_eq!(h.phase, Phase::Holding);
        let deadline = h.hold_deadline.unwrap();
        let mut t = 13.0 * 0.2;
        while h.phase == Phase::Holding {
            step_head(&mut h, &UnitQuaternion::IDENTITY, Some(tgt), t, 0.2, AngularRate::default(), &HoldParams::default(), &mut rng);
            t += 0.2;
        }
        assert!(t - 0.2 + 1e-9 >= deadline);
        assert_eq!(h.phase, Phase::Returning);
    }

    #[test]
    fn hold_draws_are_clamped() {
        let mut rng = rng_stream(3, 0);
        for _ in 0..1000 {
            let h = sample_hold(&HoldParams::default(), &mut rng);
            assert!((1.0..=2.0).contains(&h));
        }
    }

    #[test]
    fn empty_scene_plans_only_habit_sweeps() {
        let cfg = EngineConfig::default();
        let r = cfg.reasoner().unwrap();
        let traj = straight(40.0);
        let plan = run_dps(&empty_scene(), &traj, &empty_scene().goal, &r, &cfg).unwrap();
        assert!(!plan.actions.is_empty());
        for w in plan.actions.windows(2) {
            assert!(w[1].tick > w[0].tick);
            assert!(w[1].t - w[0].t >= 4.0);
        }
        for a in &plan.actions {
            assert!(matches!(a.action.driver, Driver::Habit | Driver::InformationSeeking), "{:?}", a.action.driver);
        }
        assert_eq!(plan.track.len(), tick_count(traj.duration(), 0.2));
    }

    #[test]
    fn identical_scene_reproduces_plan_track() {
        let cfg = EngineConfig { seed: 9, ..Default::default() };
        let r = cfg.reasoner().unwrap();
        let traj = straight(50.0);
        let mut s = empty_scene();
        s.entities.push(crate::world::Entity::new("kiosk", "kiosk", Vec3::new(20.0, 4.0, 1.0), Vec3::new(1.0, 1.0, 1.0)).with_tags(&[Tag::Novel]));
        let (plan, trace) = run_pipeline(&s, &s, &traj, &r, &cfg).unwrap();
        assert_eq!(trace.samples, plan.track);
        assert!(trace.bundles.iter().all(|b| b.verdict == "keep"));
    }

    #[test]
    fn zero_length_trajectory_gives_empty_plan() {
        let cfg = EngineConfig::default();
        let r = cfg.reasoner().unwrap();
        let traj = BodyTrajectory::new(vec![crate::world::TrajectorySample { t: 0.0, position: Vec3::ZERO, heading: UnitQuaternion::IDENTITY }]).unwrap();
        let plan = run_dps(&empty_scene(), &traj, &empty_scene().goal, &r, &cfg).unwrap();
        assert!(plan.actions.is_empty());
        assert_eq!(plan.track.len(), 1);
    }
}
