//! Plans and executes head movements for one walker, then writes the trace.
//!
//! cargo run --example simulate_scene -- [scene.toml] [seed]

use std::path::PathBuf;

use headturn::engine::{run_pipeline, EngineConfig};
use headturn::io::{SceneFile, TraceFile, TraceHeader};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let scene = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/street_apc.toml"));
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let file = SceneFile::load(&scene)?;
    let cfg = EngineConfig { seed, ..Default::default() };
    let (agent, traj) = file.trajectory(None, cfg.tick)?;
    let (plan, trace) = run_pipeline(&file.scene(), &file.scene(), &traj, &cfg.reasoner()?, &cfg)?;

    println!("{} / {agent}: {:.1} s walk, {} planned actions", file.name, traj.duration(), plan.actions.len());
    for a in &plan.actions {
        let target = match a.action.target.entity_id() {
            Some(id) => id.to_string(),
            None => "orientation".into(),
        };
        println!("  {:6.1} s  {:<20} {:<20} {}", a.t, a.action.driver.as_str(), target, a.action.rationale);
    }
    println!("executed {} samples, {} bundles validated", trace.samples.len(), trace.bundles.len());

    let out = std::env::temp_dir().join(format!("{}_{agent}.csv", file.name));
    let header = TraceHeader { agent, scenario: file.name.clone(), condition: file.condition.to_string(), tick: cfg.tick, seed };
    TraceFile::from_executed(header, &trace).save(&out)?;
    println!("trace written to {}", out.display());
    Ok(())
}
