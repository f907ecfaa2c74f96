//! Trace comparison and the benchmark runners built on it.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::{run_pipeline, EngineConfig, ExecutedTrace, Plan};
use crate::error::{Error, Result};
use crate::geom::{angular_distance, slerp, UnitQuaternion};
use crate::memory::Driver;
use crate::world::{BodyTrajectory, Scene};

/// A head orientation series sampled every `tick` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    pub agent: String,
    pub scenario: String,
    /// "MDC", "APC", "external", or a stage pairing such as "MDC-APC".
    pub condition: String,
    pub tick: f64,
    pub samples: Vec<UnitQuaternion>,
}

impl HeadTrace {
    pub fn new(agent: &str, scenario: &str, condition: &str, tick: f64, samples: Vec<UnitQuaternion>) -> Self {
        Self { agent: agent.into(), scenario: scenario.into(), condition: condition.into(), tick, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Slerp-resamples to a new tick, keeping the original duration.
    pub fn resample(&self, tick: f64) -> Result<HeadTrace> {
        Ok(HeadTrace { samples: resample_uniform(&self.samples, self.tick, tick)?, tick, ..self.clone() })
    }
}

/// Resamples a uniform series from `from_dt` to `to_dt` spacing by slerp.
pub fn resample_uniform(samples: &[UnitQuaternion], from_dt: f64, to_dt: f64) -> Result<Vec<UnitQuaternion>> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot resample an empty series".into()));
    }
    if !(from_dt > 0.0 && to_dt > 0.0) {
        return Err(Error::Contract("sample spacing must be positive".into()));
    }
    let duration = from_dt * (samples.len() - 1) as f64;
    let n = (duration / to_dt + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|k| {
            let pos = k as f64 * to_dt / from_dt;
            let i = (pos.floor() as usize).min(samples.len() - 1);
            if i + 1 >= samples.len() {
                samples[samples.len() - 1]
            } else {
                slerp(&samples[i], &samples[i + 1], pos - i as f64)
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    pub total_cost: f64,
    pub normalized_cost: f64,
    pub path: Vec<(usize, usize)>,
}

/// Classic DTW under the angular distance with steps (1,0), (0,1), (1,1) and no
/// band. The total cost is divided by the mean of the two lengths.
pub fn dtw(a: &[UnitQuaternion], b: &[UnitQuaternion]) -> Result<DtwResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("dtw needs two non-empty traces".into()));
    }
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    let at = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let c = angular_distance(&a[i], &b[j]);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 {
                    best = best.min(acc[at(i - 1, j)]);
                }
                if j > 0 {
                    best = best.min(acc[at(i, j - 1)]);
                }
                if i > 0 && j > 0 {
                    best = best.min(acc[at(i - 1, j - 1)]);
                }
                best
            };
            acc[at(i, j)] = prev + c;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        // prefer the diagonal on ties so paths stay short
        let mut cands = Vec::with_capacity(3);
        if i > 0 && j > 0 {
            cands.push((i - 1, j - 1));
        }
        if i > 0 {
            cands.push((i - 1, j));
        }
        if j > 0 {
            cands.push((i, j - 1));
        }
        let &(pi, pj) = cands.iter().min_by(|x, y| acc[at(x.0, x.1)].total_cmp(&acc[at(y.0, y.1)])).unwrap();
        i = pi;
        j = pj;
        path.push((i, j));
    }
    path.reverse();
    let total = acc[at(n - 1, m - 1)];
    Ok(DtwResult { total_cost: total, normalized_cost: total / ((n + m) as f64 / 2.0), path })
}

pub fn dtw_traces(a: &HeadTrace, b: &HeadTrace) -> Result<DtwResult> {
    dtw(&a.samples, &b.samples)
}

/// Mean and t-distribution 95% half width (n−1 degrees of freedom).
pub fn confidence_interval_95(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Contract(format!("confidence interval needs at least 2 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Ok((mean, t * var.sqrt() / (n as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntraHuman {
    pub mean: f64,
    pub ci95: f64,
    pub per_repeat: Vec<f64>,
    /// Set when some group had an odd size and one trace was left out per repeat.
    pub dropped_odd: bool,
}

/// Split-half agreement among human traces. Each repeat shuffles every
/// scenario group, splits it in two equal halves, and averages DTW over all
/// cross-half pairs; the repeat's value is the mean over scenarios.
pub fn intra_human(groups: &BTreeMap<String, Vec<HeadTrace>>, repeats: usize, seed: u64) -> Result<IntraHuman> {
    if groups.is_empty() || repeats == 0 {
        return Err(Error::Contract("intra_human needs at least one group and one repeat".into()));
    }
    for (name, g) in groups {
        if g.len() < 2 {
            return Err(Error::Contract(format!("group {name:?} has {} traces, need at least 2", g.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_repeat = Vec::with_capacity(repeats);
    let mut dropped_odd = false;
    for _ in 0..repeats {
        let mut scen = Vec::with_capacity(groups.len());
        for g in groups.values() {
            let mut idx: Vec<usize> = (0..g.len()).collect();
            idx.shuffle(&mut rng);
            if idx.len() % 2 == 1 {
                idx.pop();
                dropped_odd = true;
            }
            let (left, right) = idx.split_at(idx.len() / 2);
            let mut costs = Vec::with_capacity(left.len() * right.len());
            for &i in left {
                for &j in right {
                    costs.push(dtw_traces(&g[i], &g[j])?.normalized_cost);
                }
            }
            scen.push(costs.iter().sum::<f64>() / costs.len() as f64);
        }
        per_repeat.push(scen.iter().sum::<f64>() / scen.len() as f64);
    }
    if dropped_odd {
        log::warn!("odd group size: one trace left out per repeat");
    }
    let (mean, ci95) = if per_repeat.len() >= 2 {
        confidence_interval_95(&per_repeat)?
    } else {
        (per_repeat[0], 0.0)
    };
    Ok(IntraHuman { mean, ci95, per_repeat, dropped_odd })
}

/// One table row: a method/condition score summarized over seeded runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub method: String,
    pub condition: String,
    pub mean: f64,
    /// Absent when fewer than two runs were made.
    pub ci95: Option<f64>,
    pub n: usize,
    pub seed: u64,
    #[serde(skip)]
    pub values: Vec<f64>,
}

impl ResultRow {
    pub fn summarize(scenario: &str, method: &str, condition: &str, seed: u64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("no runs to summarize".into()));
        }
        let (mean, ci95) = if values.len() >= 2 {
            let (m, h) = confidence_interval_95(&values)?;
            (m, Some(h))
        } else {
            (values[0], None)
        };
        Ok(Self {
            scenario: scenario.into(),
            method: method.into(),
            condition: condition.into(),
            mean,
            ci95,
            n: values.len(),
            seed,
            values,
        })
    }
}

/// Mean normalized DTW of `candidate` against each reference.
pub fn score_against(candidate: &[UnitQuaternion], references: &[Vec<UnitQuaternion>]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Contract("no reference traces".into()));
    }
    let mut total = 0.0;
    for r in references {
        total += dtw(candidate, r)?.normalized_cost;
    }
    Ok(total / references.len() as f64)
}

/// Stage pairing: which scene variant the plan is made on, and which it runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StagePairing {
    MdcMdc,
    MdcApc,
    ApcApc,
}

impl StagePairing {
    pub const ALL: [StagePairing; 3] = [StagePairing::MdcMdc, StagePairing::MdcApc, StagePairing::ApcApc];

    pub fn label(&self) -> &'static str {
        match self {
            StagePairing::MdcMdc => "MDC-MDC",
            StagePairing::MdcApc => "MDC-APC",
            StagePairing::ApcApc => "APC-APC",
        }
    }

    pub fn scenes<'a>(&self, mdc: &'a Scene, apc: &'a Scene) -> (&'a Scene, &'a Scene) {
        match self {
            StagePairing::MdcMdc => (mdc, mdc),
            StagePairing::MdcApc => (mdc, apc),
            StagePairing::ApcApc => (apc, apc),
        }
    }
}

impl fmt::Display for StagePairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Checks that every entity of `mdc` appears unchanged in `apc`.
pub fn check_layout(mdc: &Scene, apc: &Scene) -> Result<()> {
    for e in mdc.all_entities().map(|(e, _)| e) {
        match apc.find(&e.id) {
            Some(o) if o == e => {}
            Some(_) => return Err(Error::Contract(format!("entity {:?} differs between the scene variants", e.id))),
            None => return Err(Error::Contract(format!("entity {:?} missing from the APC variant", e.id))),
        }
    }
    if mdc.goal != apc.goal {
        return Err(Error::Contract("scene variants have different goals".into()));
    }
    Ok(())
}

/// Plans on `plan_scene` and executes on `run_scene`.
pub fn run_case(plan_scene: &Scene, run_scene: &Scene, traj: &BodyTrajectory, cfg: &EngineConfig) -> Result<(Plan, ExecutedTrace)> {
    run_pipeline(plan_scene, run_scene, traj, &cfg.reasoner()?, cfg)
}

/// Where reference traces come from.
#[derive(Debug, Clone)]
pub enum References {
    Fixed(Vec<Vec<UnitQuaternion>>),
    /// The APC-APC run (responsiveness) or full-model run (ablation) with the same seed.
    SameSeedBaseline,
}

fn seeded(cfg: &EngineConfig, seed: u64) -> EngineConfig {
    EngineConfig { seed, ..cfg.clone() }
}

/// Normalized DTW for each stage pairing, summarized over `seeds`.
pub fn responsiveness_matrix(
    scenario: &str,
    mdc: &Scene,
    apc: &Scene,
    traj: &BodyTrajectory,
    references: &References,
    cfg: &EngineConfig,
    seeds: &[u64],
) -> Result<Vec<ResultRow>> {
    check_layout(mdc, apc)?;
    let per_seed: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let c = seeded(cfg, seed);
            let runs: Vec<Vec<UnitQuaternion>> = StagePairing::ALL
                .iter()
                .map(|p| {
                    let (ps, rs) = p.scenes(mdc, apc);
                    run_case(ps, rs, traj, &c).map(|(_, t)| t.orientations())
                })
                .collect::<Result<_>>()?;
            let refs = match references {
                References::Fixed(r) => r.clone(),
                References::SameSeedBaseline => vec![runs[2].clone()],
            };
            runs.iter().map(|r| score_against(r, &refs)).collect()
        })
        .collect::<Result<_>>()?;
    StagePairing::ALL
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let vals = per_seed.iter().map(|v| v[i]).collect();
            ResultRow::summarize(scenario, "full model", p.label(), seeds.first().copied().unwrap_or(cfg.seed), vals)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Toggle {
    Full,
    NoDrivers,
    NoDriver(Driver),
    NoLlm,
    NoRes,
}

impl Toggle {
    pub fn all() -> Vec<Toggle> {
        let mut v = vec![Toggle::Full, Toggle::NoDrivers];
        v.extend(
            [Driver::Interest, Driver::InformationSeeking, Driver::Safety, Driver::SocialSchema, Driver::Habit]
                .map(Toggle::NoDriver),
        );
        v.extend([Toggle::NoLlm, Toggle::NoRes]);
        v
    }

    pub fn label(&self) -> &'static str {
        match self {
            Toggle::Full => "full model",
            Toggle::NoDrivers => "w/o all Motivational Drivers",
            Toggle::NoDriver(Driver::Interest) => "w/o Interest driver",
            Toggle::NoDriver(Driver::InformationSeeking) => "w/o Information-seeking driver",
            Toggle::NoDriver(Driver::Safety) => "w/o Safety driver",
            Toggle::NoDriver(Driver::SocialSchema) => "w/o Social Schema driver",
            Toggle::NoDriver(Driver::Habit) => "w/o Habit driver",
            Toggle::NoLlm => "w/o LLM",
            Toggle::NoRes => "w/o RES",
        }
    }

    /// Command-line spelling, e.g. `no-safety`.
    pub fn cli_name(&self) -> &'static str {
        match self {
            Toggle::Full => "full",
            Toggle::NoDrivers => "no-drivers",
            Toggle::NoDriver(Driver::Interest) => "no-interest",
            Toggle::NoDriver(Driver::InformationSeeking) => "no-information-seeking",
            Toggle::NoDriver(Driver::Safety) => "no-safety",
            Toggle::NoDriver(Driver::SocialSchema) => "no-social-schema",
            Toggle::NoDriver(Driver::Habit) => "no-habit",
            Toggle::NoLlm => "no-llm",
            Toggle::NoRes => "no-res",
        }
    }

    pub fn parse(s: &str) -> Result<Toggle> {
        Toggle::all()
            .into_iter()
            .find(|t| t.cli_name() == s)
            .ok_or_else(|| Error::schema("toggle", format!("unknown toggle {s:?}")))
    }

    pub fn apply(&self, cfg: &EngineConfig) -> EngineConfig {
        let mut c = cfg.clone();
        match self {
            Toggle::Full => {}
            Toggle::NoDrivers => c.drivers = crate::reasoning::DriverSet::none(),
            Toggle::NoDriver(d) => c.drivers.set(*d, false),
            Toggle::NoLlm => c.use_llm = false,
            Toggle::NoRes => c.use_res = false,
        }
        c
    }
}

/// One scenario for the ablation runner.
#[derive(Debug, Clone)]
pub struct AblationCase {
    pub name: String,
    pub plan_scene: Scene,
    pub run_scene: Scene,
    pub trajectory: BodyTrajectory,
}

#[derive(Debug, Clone)]
pub struct AblationOutput {
    pub rows: Vec<ResultRow>,
    /// Drivers seen in plan and execution logs, per (case, toggle).
    pub drivers_seen: BTreeMap<(String, Toggle), std::collections::BTreeSet<Driver>>,
}

/// Scores each toggle on each case against the references, over `seeds`.
pub fn ablation_suite(
    cases: &[AblationCase],
    toggles: &[Toggle],
    references: &References,
    cfg: &EngineConfig,
    seeds: &[u64],
) -> Result<AblationOutput> {
    let mut rows = Vec::new();
    let mut drivers_seen = BTreeMap::new();
    for case in cases {
        let condition = case.run_scene.condition.to_string();
        let jobs: Vec<(usize, u64)> = (0..toggles.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
        let baseline: BTreeMap<u64, Vec<UnitQuaternion>> = match references {
            References::SameSeedBaseline => seeds
                .par_iter()
                .map(|&s| {
                    run_case(&case.plan_scene, &case.run_scene, &case.trajectory, &seeded(cfg, s)).map(|(_, t)| (s, t.orientations()))
                })
                .collect::<Result<_>>()?,
            References::Fixed(_) => BTreeMap::new(),
        };
        let results: Vec<(usize, f64, std::collections::BTreeSet<Driver>)> = jobs
            .par_iter()
            .map(|&(i, seed)| {
                let c = toggles[i].apply(&seeded(cfg, seed));
                let (plan, trace) = run_case(&case.plan_scene, &case.run_scene, &case.trajectory, &c)?;
                let refs = match references {
                    References::Fixed(r) => r.clone(),
                    References::SameSeedBaseline => vec![baseline[&seed].clone()],
                };
                let mut seen = trace.drivers();
                seen.extend(plan.actions.iter().map(|a| a.action.driver));
                seen.extend(plan.fmm.actions().map(|a| a.driver));
                Ok((i, score_against(&trace.orientations(), &refs)?, seen))
            })
            .collect::<Result<_>>()?;
        for (i, t) in toggles.iter().enumerate() {
            let vals: Vec<f64> = results.iter().filter(|r| r.0 == i).map(|r| r.1).collect();
            let seen = results.iter().filter(|r| r.0 == i).flat_map(|r| r.2.iter().copied()).collect();
            drivers_seen.insert((case.name.clone(), *t), seen);
            rows.push(ResultRow::summarize(&case.name, t.label(), &condition, seeds.first().copied().unwrap_or(cfg.seed), vals)?);
        }
    }
    Ok(AblationOutput { rows, drivers_seen })
}

/// Writes rows as CSV with a header line.
pub fn write_table<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Parse { location: "table".into(), message: e.to_string() };
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("table", e))?;
    Ok(())
}

pub fn read_table(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Parse { location: format!("row {}", i + 2), message: e.to_string() }))
        .collect()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal bar chart of row means with CI whiskers.
pub fn table_svg(rows: &[ResultRow], title: &str) -> String {
    let bar_h = 18.0;
    let gap = 6.0;
    let left = 330.0;
    let width = 320.0;
    let top = 36.0;
    let max = rows.iter().map(|r| r.mean + r.ci95.unwrap_or(0.0)).fold(1e-9, f64::max);
    let height = top + rows.len() as f64 * (bar_h + gap) + 20.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        left + width + 80.0
    );
    s.push_str(&format!("<text x=\"10\" y=\"20\" font-size=\"14\">{}</text>\n", xml_escape(title)));
    for (i, r) in rows.iter().enumerate() {
        let y = top + i as f64 * (bar_h + gap);
        let w = r.mean / max * width;
        let label = format!("{} / {} / {}", r.scenario, r.method, r.condition);
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            left - 8.0,
            y + bar_h * 0.75,
            xml_escape(&label)
        ));
        s.push_str(&format!("<rect x=\"{left}\" y=\"{y}\" width=\"{w:.2}\" height=\"{bar_h}\" fill=\"#4a78b5\"/>\n"));
        if let Some(ci) = r.ci95 {
            let (x0, x1) = ((r.mean - ci).max(0.0) / max * width + left, (r.mean + ci) / max * width + left);
            let yc = y + bar_h / 2.0;
            s.push_str(&format!("<line x1=\"{x0:.2}\" y1=\"{yc}\" x2=\"{x1:.2}\" y2=\"{yc}\" stroke=\"black\"/>\n"));
        }
        s.push_str(&format!("<text x=\"{:.2}\" y=\"{}\">{:.4}</text>\n", left + w + 6.0, y + bar_h * 0.75, r.mean));
    }
    s.push_str("</svg>\n");
    s
}
