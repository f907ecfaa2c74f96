use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use headturn::engine::{run_multi, run_pipeline, AgentSpec, EngineConfig};
use headturn::error::Error;
use headturn::eval::{
    ablation_suite, dtw, intra_human, responsiveness_matrix, table_svg, write_table, AblationCase, HeadTrace,
    References, ResultRow, Toggle,
};
use headturn::io::{ingest_ucy, load_config, save_fmm_log, SceneFile, TraceFile, TraceHeader, TrajectoryRecord, UcyOptions};

#[derive(Parser)]
#[command(name = "headturn", version, about = "Head-rotation synthesis and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Engine configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run both stages on a scene and write one trace per simulated agent.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        /// Scene used for planning; defaults to --scene.
        #[arg(long)]
        plan_scene: Option<PathBuf>,
        /// Only simulate this agent.
        #[arg(long)]
        agent: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Score candidate traces against reference traces (files or directories).
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        reference: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        candidate: Vec<PathBuf>,
        /// Also report split-half agreement among the references.
        #[arg(long)]
        intra_human: bool,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// MDC-MDC / MDC-APC / APC-APC comparison for one scene pair.
    Responsiveness {
        /// MDC variant.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        apc_scene: PathBuf,
        /// Reference traces; by default each seed's APC-APC run.
        #[arg(long, num_args = 1..)]
        reference: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: u64,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score ablation toggles against a reference (default: full model, same seed).
    Ablate {
        #[arg(long, num_args = 1.., required = true)]
        scene: Vec<PathBuf>,
        /// e.g. no-safety, no-drivers, no-llm, no-res; all when omitted.
        #[arg(long, num_args = 1..)]
        toggle: Vec<String>,
        #[arg(long, num_args = 1..)]
        reference: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: u64,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Convert a spline-style crowd annotation into a scene and ground-truth traces.
    IngestUcy {
        #[arg(long)]
        annotation: PathBuf,
        /// Scene supplying static entities and the goal.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 25.0)]
        frame_rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and check a scene file.
    ValidateScene {
        #[arg(long)]
        scene: PathBuf,
    },
}

fn config(common: &Common) -> Result<EngineConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => EngineConfig::default(),
    };
    cfg.seed = common.seed;
    Ok(cfg)
}

fn trace_files(paths: &[PathBuf]) -> Result<Vec<TraceFile>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            entries.sort();
            for e in entries {
                files.push(TraceFile::load(&e)?);
            }
        } else {
            files.push(TraceFile::load(p)?);
        }
    }
    Ok(files)
}

fn head_traces(paths: &[PathBuf], tick: f64) -> Result<Vec<HeadTrace>> {
    trace_files(paths)?
        .iter()
        .map(|f| {
            let t = f.to_head_trace()?;
            Ok(if (t.tick - tick).abs() > 1e-12 { t.resample(tick)? } else { t })
        })
        .collect()
}

fn write_rows(rows: &[ResultRow], out: &Path, svg: Option<&Path>, title: &str) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
    write_table(rows, file)?;
    if let Some(svg) = svg {
        std::fs::write(svg, table_svg(rows, title)).map_err(|e| Error::io(svg, e))?;
    }
    for r in rows {
        let ci = r.ci95.map_or("-".to_string(), |c| format!("{c:.4}"));
        println!("{:<12} {:<32} {:<8} {:.4} ± {ci} (n={})", r.scenario, r.method, r.condition, r.mean, r.n);
    }
    Ok(())
}

fn simulate(scene: &Path, plan_scene: Option<&Path>, agent: Option<&str>, common: &Common) -> Result<()> {
    let cfg = config(common)?;
    let file = SceneFile::load(scene)?;
    let run_scene = file.scene();
    let plan_file = match plan_scene {
        Some(p) => SceneFile::load(p)?,
        None => file.clone(),
    };
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    let condition = match plan_scene {
        Some(_) => format!("{}-{}", plan_file.condition, file.condition),
        None => file.condition.to_string(),
    };
    let mut trajectories = file.all_trajectories(cfg.tick)?;
    if let Some(a) = agent {
        trajectories.retain(|(id, _)| id == a);
        if trajectories.is_empty() {
            bail!(Error::schema("agent", format!("no trajectory for agent {a:?}")));
        }
    }
    if trajectories.is_empty() {
        bail!(Error::schema("trajectories", "scene has no trajectories to simulate"));
    }
    let results = if trajectories.len() == 1 {
        let (id, traj) = &trajectories[0];
        let (_, trace) = run_pipeline(&plan_file.scene(), &run_scene, traj, &cfg.reasoner()?, &cfg)?;
        vec![(id.clone(), trace)]
    } else {
        if plan_scene.is_some() {
            bail!(Error::Contract("--plan-scene is only supported for single-agent scenes".into()));
        }
        let agents: Vec<AgentSpec> =
            trajectories.into_iter().map(|(id, trajectory)| AgentSpec { id, trajectory, goal: None }).collect();
        run_multi(&run_scene, &agents, &cfg)?
    };
    for (id, trace) in &results {
        let header = TraceHeader {
            agent: id.clone(),
            scenario: file.name.clone(),
            condition: condition.clone(),
            tick: cfg.tick,
            seed: cfg.seed,
        };
        let path = common.out.join(format!("{id}.csv"));
        TraceFile::from_executed(header, trace).save(&path)?;
        save_fmm_log(&trace.fmm, &common.out.join(format!("{id}.fmm.jsonl")))?;
        println!("{}: {} samples, {} actions", path.display(), trace.samples.len(), trace.executed.len());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(reference: &[PathBuf], candidate: &[PathBuf], intra: bool, repeats: usize, seed: u64, svg: Option<&Path>, out: &Path) -> Result<()> {
    let tick = 0.2;
    let refs = head_traces(reference, tick)?;
    let cands = head_traces(candidate, tick)?;
    let mut by_scenario: BTreeMap<String, Vec<HeadTrace>> = BTreeMap::new();
    for r in refs {
        by_scenario.entry(r.scenario.clone()).or_default().push(r);
    }
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for c in &cands {
        let pool = by_scenario
            .get(&c.scenario)
            .with_context(|| format!("no reference traces for scenario {:?}", c.scenario))?;
        let mean = pool.iter().map(|r| dtw(&c.samples, &r.samples).map(|d| d.normalized_cost)).sum::<Result<f64, _>>()?
            / pool.len() as f64;
        groups.entry((c.scenario.clone(), c.agent.clone(), c.condition.clone())).or_default().push(mean);
    }
    let mut rows = Vec::new();
    for ((scenario, method, condition), vals) in groups {
        rows.push(ResultRow::summarize(&scenario, &method, &condition, seed, vals)?);
    }
    if intra {
        let ih = intra_human(&by_scenario, repeats, seed)?;
        rows.push(ResultRow {
            scenario: "all".into(),
            method: "IntraHuman".into(),
            condition: "external".into(),
            mean: ih.mean,
            ci95: Some(ih.ci95),
            n: ih.per_repeat.len(),
            seed,
            values: ih.per_repeat,
        });
    }
    write_rows(&rows, out, svg, "normalized DTW")
}

fn seeds(base: u64, runs: u64) -> Vec<u64> {
    (base..base + runs.max(1)).collect()
}

fn references(paths: &[PathBuf], tick: f64) -> Result<References> {
    Ok(if paths.is_empty() {
        References::SameSeedBaseline
    } else {
        References::Fixed(head_traces(paths, tick)?.into_iter().map(|t| t.samples).collect())
    })
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { scene, plan_scene, agent, common } => {
            simulate(&scene, plan_scene.as_deref(), agent.as_deref(), &common)
        }
        Command::Evaluate { reference, candidate, intra_human, repeats, seed, svg, out } => {
            evaluate(&reference, &candidate, intra_human, repeats, seed, svg.as_deref(), &out)
        }
        Command::Responsiveness { scene, apc_scene, reference, runs, svg, common } => {
            let cfg = config(&common)?;
            let mdc = SceneFile::load(&scene)?;
            let apc = SceneFile::load(&apc_scene)?;
            let (_, traj) = mdc.trajectory(None, cfg.tick)?;
            let refs = references(&reference, cfg.tick)?;
            let rows =
                responsiveness_matrix(&mdc.name, &mdc.scene(), &apc.scene(), &traj, &refs, &cfg, &seeds(cfg.seed, runs))?;
            write_rows(&rows, &common.out, svg.as_deref(), "responsiveness")
        }
        Command::Ablate { scene, toggle, reference, runs, svg, common } => {
            let cfg = config(&common)?;
            let toggles = if toggle.is_empty() {
                Toggle::all()
            } else {
                let mut t = vec![Toggle::Full];
                for name in &toggle {
                    let parsed = Toggle::parse(name)?;
                    if !t.contains(&parsed) {
                        t.push(parsed);
                    }
                }
                t
            };
            let mut cases = Vec::new();
            for path in &scene {
                let f = SceneFile::load(path)?;
                let (_, trajectory) = f.trajectory(None, cfg.tick)?;
                cases.push(AblationCase { name: f.name.clone(), plan_scene: f.scene(), run_scene: f.scene(), trajectory });
            }
            let refs = references(&reference, cfg.tick)?;
            let out = ablation_suite(&cases, &toggles, &refs, &cfg, &seeds(cfg.seed, runs))?;
            write_rows(&out.rows, &common.out, svg.as_deref(), "ablation")
        }
        Command::IngestUcy { annotation, scene, scale, frame_rate, out } => {
            let text = std::fs::read_to_string(&annotation).map_err(|e| Error::io(&annotation, e))?;
            let template = SceneFile::load(&scene)?;
            let opts = UcyOptions { scale, frame_rate, ..Default::default() };
            let ingest = ingest_ucy(&text, &template.scene(), &opts)?;
            for w in &ingest.warnings {
                eprintln!("{}", serde_json::json!({ "warning": w }));
            }
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let records =
                ingest.agents.iter().map(|a| TrajectoryRecord::from_trajectory(&a.id, &a.trajectory)).collect();
            SceneFile::from_scene(&ingest.scene, records).save(&out.join("scene.toml"))?;
            let traces = out.join("traces");
            for a in &ingest.agents {
                TraceFile::from_head_trace(&a.head, 0).save(&traces.join(format!("{}.csv", a.id)))?;
            }
            println!("{} agents written to {}", ingest.agents.len(), out.display());
            Ok(())
        }
        Command::ValidateScene { scene } => {
            let f = SceneFile::load(&scene)?;
            for t in &f.trajectories {
                let traj = t.to_trajectory(0.2)?;
                println!("trajectory {}: {:.1} s", t.agent, traj.duration());
            }
            println!("{}: ok ({} entities, {} agents)", scene.display(), f.entities.len(), f.agents.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, field) = match e.downcast_ref::<Error>() {
                Some(err) => (err.kind(), err.field().map(str::to_string)),
                None => ("other", None),
            };
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}"), "kind": kind, "field": field }));
            ExitCode::FAILURE
        }
    }
}
