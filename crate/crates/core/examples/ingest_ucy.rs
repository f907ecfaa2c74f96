//! Reads a UCY spline annotation and simulates every pedestrian in it.

use std::path::Path;

use headturn::engine::{run_multi, AgentSpec, EngineConfig};
use headturn::eval::dtw;
use headturn::io::{ingest_ucy, SceneFile, UcyOptions};

fn main() -> anyhow::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ucy");
    let text = std::fs::read_to_string(dir.join("zara01_replica.vsp"))?;
    let template = SceneFile::load(&dir.join("zara01_template.toml"))?;
    let ingest = ingest_ucy(&text, &template.scene(), &UcyOptions::default())?;
    for w in &ingest.warnings {
        eprintln!("warning: {w}");
    }

    let agents: Vec<AgentSpec> = ingest
        .agents
        .iter()
        .map(|a| AgentSpec { id: a.id.clone(), trajectory: a.trajectory.clone(), goal: None })
        .collect();
    let cfg = EngineConfig::default();
    let traces = run_multi(&ingest.scene, &agents, &cfg)?;

    for ((id, trace), truth) in traces.iter().zip(&ingest.agents) {
        let d = dtw(&trace.orientations(), &truth.head.samples)?;
        println!(
            "{id}: {:.1} s, {} samples, normalized DTW to annotated gaze {:.4}",
            truth.trajectory.duration(),
            trace.samples.len(),
            d.normalized_cost
        );
    }
    Ok(())
}
