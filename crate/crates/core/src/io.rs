//! File formats: scene and config TOML, head-trace CSV, FMM logs and the UCY
//! spline annotations.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, ExecutedTrace, Phase};
use crate::error::{Error, Result};
use crate::eval::HeadTrace;
use crate::geom::{slerp, UnitQuaternion, Vec3, UNIT_TOLERANCE};
use crate::memory::{Driver, Fmm};
use crate::world::{BodyTrajectory, Condition, Entity, Goal, Scene, TrajectorySample, DEFAULT_WALKING_SPEED};

pub const SCENE_VERSION: u32 = 1;
pub const TRACE_MAGIC: &str = "# headturn-trace v1";

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn toml_error(e: toml::de::Error) -> Error {
    let field = e.message().split('`').nth(1).unwrap_or("").to_string();
    let location = match e.span() {
        Some(s) => format!("byte {}", s.start),
        None => "document".into(),
    };
    if field.is_empty() {
        Error::Parse { location, message: e.message().to_string() }
    } else {
        Error::Schema { field, message: e.message().trim().to_string() }
    }
}

/// Body trajectory of one simulated agent: either a polyline walked at constant
/// speed or explicit timed samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub agent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: f64,
    pub position: [f64; 3],
    /// Body yaw in degrees.
    pub yaw: f64,
}

impl TrajectoryRecord {
    pub fn from_trajectory(agent: &str, traj: &BodyTrajectory) -> Self {
        let samples = traj
            .samples()
            .iter()
            .map(|s| SampleRecord { t: s.t, position: s.position.to_array(), yaw: s.heading.yaw().to_degrees() })
            .collect();
        Self { agent: agent.into(), speed: None, start: None, path: Vec::new(), samples }
    }

    /// Builds the trajectory; polylines are sampled every `dt` seconds.
    pub fn to_trajectory(&self, dt: f64) -> Result<BodyTrajectory> {
        match (self.path.is_empty(), self.samples.is_empty()) {
            (false, true) => {
                let pts: Vec<Vec3> = self.path.iter().map(|&p| Vec3::from_array(p)).collect();
                BodyTrajectory::from_path(&pts, self.speed.unwrap_or(DEFAULT_WALKING_SPEED), self.start.unwrap_or(0.0), dt)
            }
            (true, false) => BodyTrajectory::new(
                self.samples
                    .iter()
                    .map(|s| TrajectorySample {
                        t: s.t,
                        position: Vec3::from_array(s.position),
                        heading: UnitQuaternion::from_yaw_degrees(s.yaw),
                    })
                    .collect(),
            ),
            _ => Err(Error::schema(format!("trajectories[{}]", self.agent), "give exactly one of `path` or `samples`")),
        }
    }
}

/// On-disk scene description (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u32,
    pub name: String,
    pub condition: Condition,
    pub goal: Goal,
    #[serde(default)]
    pub entities: Vec<Entity>,
    #[serde(default)]
    pub agents: Vec<Entity>,
    #[serde(default)]
    pub trajectories: Vec<TrajectoryRecord>,
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: SceneFile = toml::from_str(text).map_err(toml_error)?;
        if f.version != SCENE_VERSION {
            return Err(Error::schema("version", format!("unsupported scene version {}", f.version)));
        }
        f.scene().validate()?;
        let mut seen = std::collections::HashSet::new();
        for (i, t) in f.trajectories.iter().enumerate() {
            if !seen.insert(t.agent.as_str()) {
                return Err(Error::schema(format!("trajectories[{i}].agent"), format!("duplicate agent {:?}", t.agent)));
            }
            t.to_trajectory(0.2).map_err(|e| match e {
                Error::Schema { field, message } => Error::schema(format!("trajectories[{i}].{field}"), message),
                other => other,
            })?;
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Contract(format!("scene serialization failed: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.to_toml()?)
    }

    pub fn from_scene(scene: &Scene, trajectories: Vec<TrajectoryRecord>) -> Self {
        Self {
            version: SCENE_VERSION,
            name: scene.name.clone(),
            condition: scene.condition,
            goal: scene.goal.clone(),
            entities: scene.entities.clone(),
            agents: scene.agents.clone(),
            trajectories,
        }
    }

    pub fn scene(&self) -> Scene {
        Scene {
            name: self.name.clone(),
            condition: self.condition,
            goal: self.goal.clone(),
            entities: self.entities.clone(),
            agents: self.agents.clone(),
        }
    }

    /// Trajectory of `agent`, or of the first listed agent when `None`.
    pub fn trajectory(&self, agent: Option<&str>, dt: f64) -> Result<(String, BodyTrajectory)> {
        let rec = match agent {
            Some(a) => self.trajectories.iter().find(|t| t.agent == a),
            None => self.trajectories.first(),
        }
        .ok_or_else(|| Error::schema("trajectories", format!("no trajectory for agent {:?}", agent.unwrap_or("<first>"))))?;
        Ok((rec.agent.clone(), rec.to_trajectory(dt)?))
    }

    pub fn all_trajectories(&self, dt: f64) -> Result<Vec<(String, BodyTrajectory)>> {
        self.trajectories.iter().map(|t| Ok((t.agent.clone(), t.to_trajectory(dt)?))).collect()
    }
}

pub fn load_config(path: &Path) -> Result<EngineConfig> {
    parse_config(&read(path)?)
}

pub fn parse_config(text: &str) -> Result<EngineConfig> {
    let cfg: EngineConfig = toml::from_str(text).map_err(toml_error)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_to_toml(cfg: &EngineConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Contract(format!("config serialization failed: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub agent: String,
    pub scenario: String,
    pub condition: String,
    pub tick: f64,
    pub seed: u64,
}

/// One row as written; the quaternion is kept exactly as read.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub q: [f64; 4],
    /// Blank for traces that did not come from the simulator.
    pub phase: Option<Phase>,
    pub driver: Option<Driver>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub rows: Vec<TraceRow>,
}

const COLUMNS: &str = "t,qw,qx,qy,qz,phase,driver";

fn header_value(key: &str, v: &str) -> Result<()> {
    if v.is_empty() || v.chars().any(|c| c.is_whitespace() || c == '=' || c == ',') {
        return Err(Error::schema(key, format!("header value {v:?} must be non-empty without spaces, '=' or ','")));
    }
    Ok(())
}

impl TraceFile {
    pub fn from_executed(header: TraceHeader, trace: &ExecutedTrace) -> Self {
        let rows = trace
            .samples
            .iter()
            .map(|s| TraceRow { t: s.t, q: s.q.to_array(), phase: Some(s.phase), driver: s.driver })
            .collect();
        Self { header, rows }
    }

    /// Rows are spaced by the header tick starting at t = 0.
    pub fn from_head_trace(trace: &HeadTrace, seed: u64) -> Self {
        let header = TraceHeader {
            agent: trace.agent.clone(),
            scenario: trace.scenario.clone(),
            condition: trace.condition.clone(),
            tick: trace.tick,
            seed,
        };
        let rows = trace
            .samples
            .iter()
            .enumerate()
            .map(|(k, q)| TraceRow { t: k as f64 * trace.tick, q: q.to_array(), phase: None, driver: None })
            .collect();
        Self { header, rows }
    }

    pub fn to_head_trace(&self) -> Result<HeadTrace> {
        let samples = self
            .rows
            .iter()
            .map(|r| UnitQuaternion::normalize(r.q[0], r.q[1], r.q[2], r.q[3]))
            .collect::<Result<_>>()?;
        let h = &self.header;
        Ok(HeadTrace::new(&h.agent, &h.scenario, &h.condition, h.tick, samples))
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        header_value("agent", &h.agent)?;
        header_value("scenario", &h.scenario)?;
        header_value("condition", &h.condition)?;
        if !(h.tick > 0.0) {
            return Err(Error::schema("tick", "must be positive"));
        }
        for (i, r) in self.rows.iter().enumerate() {
            let n = r.q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
                return Err(Error::schema(format!("rows[{i}].q"), format!("norm {n} is not within {UNIT_TOLERANCE} of 1")));
            }
            if i > 0 && !(r.t > self.rows[i - 1].t) {
                return Err(Error::schema(format!("rows[{i}].t"), "times must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        self.validate()?;
        let h = &self.header;
        let mut s = format!(
            "{TRACE_MAGIC}\n# agent={} scenario={} condition={} tick={} seed={}\n{COLUMNS}\n",
            h.agent, h.scenario, h.condition, h.tick, h.seed
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:.3},{:.9},{:.9},{:.9},{:.9},{},{}",
                r.t,
                r.q[0],
                r.q[1],
                r.q[2],
                r.q[3],
                r.phase.map_or("", |p| p.as_str()),
                r.driver.map_or("", |d| d.as_str())
            );
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse { location: format!("line {line}"), message: msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim() == TRACE_MAGIC => {}
            _ => return Err(bad(1, format!("expected {TRACE_MAGIC:?}"))),
        }
        let (ln, meta) = lines.next().ok_or_else(|| bad(2, "missing header line".into()))?;
        let meta = meta.strip_prefix('#').ok_or_else(|| bad(ln, "header line must start with '#'".into()))?;
        let (mut agent, mut scenario, mut condition, mut tick, mut seed) = (None, None, None, None, None);
        for kv in meta.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(ln, format!("expected key=value, got {kv:?}")))?;
            match k {
                "agent" => agent = Some(v.to_string()),
                "scenario" => scenario = Some(v.to_string()),
                "condition" => condition = Some(v.to_string()),
                "tick" => tick = Some(v.parse::<f64>().map_err(|e| bad(ln, format!("tick: {e}")))?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(ln, format!("seed: {e}")))?),
                other => return Err(bad(ln, format!("unknown header key {other:?}"))),
            }
        }
        let need = |v: Option<String>, k: &str| v.ok_or_else(|| Error::schema(k, "missing from trace header"));
        let header = TraceHeader {
            agent: need(agent, "agent")?,
            scenario: need(scenario, "scenario")?,
            condition: need(condition, "condition")?,
            tick: tick.ok_or_else(|| Error::schema("tick", "missing from trace header"))?,
            seed: seed.ok_or_else(|| Error::schema("seed", "missing from trace header"))?,
        };
        match lines.next() {
            Some((_, l)) if l.trim() == COLUMNS => {}
            Some((ln, _)) => return Err(bad(ln, format!("expected column line {COLUMNS:?}"))),
            None => return Err(bad(3, "missing column line".into())),
        }
        let mut rows = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(ln, format!("expected 7 fields, got {}", f.len())));
            }
            let num = |i: usize| f[i].trim().parse::<f64>().map_err(|e| bad(ln, format!("field {}: {e}", i + 1)));
            let phase = match f[5].trim() {
                "" => None,
                p => Some(p.parse::<Phase>().map_err(|e| bad(ln, e.to_string()))?),
            };
            let driver = match f[6].trim() {
                "" => None,
                d => Some(d.parse::<Driver>().map_err(|e| bad(ln, e.to_string()))?),
            };
            rows.push(TraceRow { t: num(0)?, q: [num(1)?, num(2)?, num(3)?, num(4)?], phase, driver });
        }
        let file = TraceFile { header, rows };
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.to_text()?)
    }
}

/// Writes the memory log, one JSON entry per line.
pub fn save_fmm_log(fmm: &Fmm, path: &Path) -> Result<()> {
    write(path, &fmm.to_jsonl())
}

/// Settings for lifting annotation coordinates into the scene frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UcyOptions {
    /// Metres per annotation unit.
    pub scale: f64,
    pub offset: [f64; 2],
    /// Video frame rate used to turn frame numbers into seconds.
    pub frame_rate: f64,
    /// Output sample spacing.
    pub tick: f64,
}

impl Default for UcyOptions {
    fn default() -> Self {
        Self { scale: 1.0, offset: [0.0, 0.0], frame_rate: 25.0, tick: 0.2 }
    }
}

#[derive(Debug, Clone)]
pub struct UcyAgent {
    pub id: String,
    pub trajectory: BodyTrajectory,
    pub head: HeadTrace,
}

#[derive(Debug, Clone)]
pub struct UcyIngest {
    pub scene: Scene,
    pub agents: Vec<UcyAgent>,
    pub warnings: Vec<String>,
}

struct UcyPoint {
    x: f64,
    y: f64,
    frame: f64,
    gaze: f64,
}

fn leading_count(line: &str) -> Option<usize> {
    line.split_whitespace().next()?.parse().ok()
}

/// Reads a spline-style crowd annotation.
///
/// Grammar, one item per line, blank lines ignored:
///
/// ```text
/// <N> - the number of splines
/// <k> - Num of control points      (repeated N times, each followed by k points)
/// <x> <y> <frame> <gaze_degrees>
/// ```
///
/// Each pedestrian becomes `ped<i>` (1-based). Positions are scaled and offset,
/// put on the ground plane, and resampled together with the gaze to `tick`.
pub fn ingest_ucy(text: &str, template: &Scene, opts: &UcyOptions) -> Result<UcyIngest> {
    if !(opts.scale > 0.0 && opts.frame_rate > 0.0 && opts.tick > 0.0) {
        return Err(Error::schema("ucy", "scale, frame_rate and tick must be positive"));
    }
    let mut warnings = Vec::new();
    let lines: Vec<(usize, &str)> =
        text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty()).collect();
    let scene = Scene { agents: Vec::new(), ..template.clone() };
    if lines.is_empty() {
        warnings.push("annotation file is empty".to_string());
        log::warn!("annotation file is empty");
        return Ok(UcyIngest { scene, agents: Vec::new(), warnings });
    }
    let (ln, first) = lines[0];
    let declared = leading_count(first).ok_or_else(|| Error::Parse {
        location: format!("line {ln}"),
        message: "expected the number of splines".into(),
    })?;
    let mut agents = Vec::new();
    let mut i = 1;
    let mut ped = 0;
    while i < lines.len() {
        let (hl, header) = lines[i];
        ped += 1;
        let Some(k) = leading_count(header) else {
            warnings.push(format!("line {hl}: expected a control point count; stopping"));
            break;
        };
        i += 1;
        let end = (i + k).min(lines.len());
        if end - i < k {
            warnings.push(format!("line {hl}: pedestrian {ped} declares {k} points but the file ends; skipped"));
            break;
        }
        match parse_points(&lines[i..end]) {
            Ok(points) => match build_agent(&format!("ped{ped}"), &points, opts, &template.name) {
                Ok(a) => agents.push(a),
                Err(e) => warnings.push(format!("line {hl}: pedestrian {ped} skipped: {e}")),
            },
            Err(msg) => warnings.push(format!("{msg}; pedestrian {ped} skipped")),
        }
        i = end;
    }
    if ped != declared {
        warnings.push(format!("file declares {declared} splines but contains {ped}"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(UcyIngest { scene, agents, warnings })
}

fn parse_points(lines: &[(usize, &str)]) -> std::result::Result<Vec<UcyPoint>, String> {
    let mut out: Vec<UcyPoint> = Vec::with_capacity(lines.len());
    for &(ln, l) in lines {
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {ln}: {e}"))?;
        if v.len() != 4 || v.iter().any(|x| !x.is_finite()) {
            return Err(format!("line {ln}: expected four numbers `x y frame gaze`"));
        }
        if out.last().is_some_and(|p| v[2] <= p.frame) {
            return Err(format!("line {ln}: frame numbers must increase"));
        }
        out.push(UcyPoint { x: v[0], y: v[1], frame: v[2], gaze: v[3] });
    }
    if out.is_empty() {
        return Err("no control points".into());
    }
    Ok(out)
}

fn build_agent(id: &str, pts: &[UcyPoint], opts: &UcyOptions, scenario: &str) -> Result<UcyAgent> {
    let times: Vec<f64> = pts.iter().map(|p| p.frame / opts.frame_rate).collect();
    let pos: Vec<Vec3> = pts
        .iter()
        .map(|p| Vec3::new(p.x * opts.scale + opts.offset[0], p.y * opts.scale + opts.offset[1], 0.0))
        .collect();
    let gaze: Vec<UnitQuaternion> = pts.iter().map(|p| UnitQuaternion::from_yaw_degrees(p.gaze)).collect();
    let t0 = times[0];
    let n = crate::engine::tick_count(times[times.len() - 1] - t0, opts.tick);
    let mut samples = Vec::with_capacity(n);
    let mut heads = Vec::with_capacity(n);
    let mut last_heading = gaze[0];
    for k in 0..n {
        let t = t0 + k as f64 * opts.tick;
        let i = (times.partition_point(|&x| x <= t).max(1) - 1).min(times.len().saturating_sub(2));
        let (p, h, dir) = if times.len() == 1 {
            (pos[0], gaze[0], Vec3::ZERO)
        } else {
            let f = ((t - times[i]) / (times[i + 1] - times[i])).clamp(0.0, 1.0);
            (pos[i].lerp(pos[i + 1], f), slerp(&gaze[i], &gaze[i + 1], f), pos[i + 1] - pos[i])
        };
        if let Some(q) = UnitQuaternion::look_along(dir) {
            last_heading = q;
        }
        samples.push(TrajectorySample { t, position: p, heading: last_heading });
        heads.push(h);
    }
    Ok(UcyAgent {
        id: id.to_string(),
        trajectory: BodyTrajectory::new(samples)?,
        head: HeadTrace::new(id, scenario, "external", opts.tick, heads),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Tag;

    fn sample_scene() -> SceneFile {
        let mut s = Scene::new("demo", Condition::Apc, Goal { text: "reach the bus stop".into(), position: Vec3::new(40.0, 0.0, 0.0) });
        s.entities.push(Entity::new("bench", "bench", Vec3::new(5.0, 2.0, 0.4), Vec3::new(1.0, 0.3, 0.4)).with_tags(&[Tag::StaticBackground]));
        s.agents.push(
            Entity::new("p1", "pedestrian", Vec3::new(10.0, -3.0, 0.9), Vec3::new(0.25, 0.25, 0.9))
                .with_tags(&[Tag::Social])
                .with_velocity(Vec3::new(-0.5, 0.1, 0.0)),
        );
        SceneFile::from_scene(
            &s,
            vec![TrajectoryRecord { agent: "walker".into(), speed: Some(1.3), start: None, path: vec![[0.0, 0.0, 0.0], [13.0, 0.0, 0.0]], samples: vec![] }],
        )
    }

    #[test]
    fn scene_round_trip() {
        let f = sample_scene();
        let text = f.to_toml().unwrap();
        let back = SceneFile::parse(&text).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_toml().unwrap(), text);
        let (agent, traj) = back.trajectory(None, 0.2).unwrap();
        assert_eq!(agent, "walker");
        assert!((traj.duration() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn scene_errors_name_the_field() {
        let text = sample_scene().to_toml().unwrap().replace("version = 1", "version = 2");
        assert_eq!(SceneFile::parse(&text).unwrap_err().field(), Some("version"));
        let text = sample_scene().to_toml().unwrap().replace("id = \"p1\"", "id = \"bench\"");
        assert_eq!(SceneFile::parse(&text).unwrap_err().field(), Some("agents[0].id"));
        let err = SceneFile::parse("version = 1\nname = \"x\"\ncondition = \"MDC\"\n").unwrap_err();
        assert_eq!(err.field(), Some("goal"), "{err}");
    }

    #[test]
    fn trace_round_trip_and_checks() {
        let q = UnitQuaternion::from_yaw_degrees(33.0).to_array();
        let f = TraceFile {
            header: TraceHeader { agent: "walker".into(), scenario: "bus".into(), condition: "MDC".into(), tick: 0.2, seed: 7 },
            rows: vec![
                TraceRow { t: 0.0, q: [1.0, 0.0, 0.0, 0.0], phase: Some(Phase::Aligned), driver: None },
                TraceRow { t: 0.2, q, phase: Some(Phase::Turning), driver: Some(Driver::Safety) },
                TraceRow { t: 0.4, q, phase: None, driver: None },
            ],
        };
        let text = f.to_text().unwrap();
        assert!(text.starts_with("# headturn-trace v1\n# agent=walker scenario=bus condition=MDC tick=0.2 seed=7\nt,qw,qx,qy,qz,phase,driver\n0.000,1.000000000,"));
        let back = TraceFile::parse(&text).unwrap();
        assert_eq!(back.to_text().unwrap(), text);
        assert_eq!(TraceFile::parse(&back.to_text().unwrap()).unwrap(), back);
        assert_eq!(back.rows[1].driver, Some(Driver::Safety));

        let bad = text.replace("0.400,", "0.100,");
        assert!(TraceFile::parse(&bad).is_err());
        let bad = text.replacen("1.000000000", "1.100000000", 1);
        assert_eq!(TraceFile::parse(&bad).unwrap_err().field(), Some("rows[0].q"));
    }

    #[test]
    fn ucy_examples() {
        let text = "1 - the number of splines\n2 - Num of control points\n0 0 0 0\n0.52 0 10 0\n";
        let out = ingest_ucy(text, &sample_scene().scene(), &UcyOptions::default()).unwrap();
        assert_eq!(out.agents.len(), 1);
        let a = &out.agents[0];
        assert_eq!(a.trajectory.samples().len(), 3);
        assert_eq!(a.head.samples[0], UnitQuaternion::IDENTITY);
        assert!((a.trajectory.samples()[1].position.x - 0.26).abs() < 1e-12);
        assert!(out.warnings.is_empty());

        let empty = ingest_ucy("", &sample_scene().scene(), &UcyOptions::default()).unwrap();
        assert!(empty.agents.is_empty() && empty.scene.agents.is_empty());
        assert_eq!(empty.warnings.len(), 1);

        let text = "2 - the number of splines\n2 - Num of control points\n0 0 0 0\nzz 0 10 0\n2 - Num of control points\n0 0 0 90\n1 0 10 90\n";
        let out = ingest_ucy(text, &sample_scene().scene(), &UcyOptions::default()).unwrap();
        assert_eq!(out.agents.len(), 1);
        assert_eq!(out.agents[0].id, "ped2");
        assert!(out.warnings[0].starts_with("line 4:"), "{:?}", out.warnings);
    }
}
